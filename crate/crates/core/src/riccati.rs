//! Discrete periodic Riccati-type equation, LQ costs, and feedback synthesis.
//!
//! The backward recursion couples consecutive weights through the flow maps:
//!
//! ```text
//! P_{k-1} = E_k' ( P_k + Q_k - P_k B_k (R_k + B_k' P_k B_k)^{-1} B_k' P_k ) E_k
//! ```
//!
//! The periodic equation closes the cycle with `P_0 = P_h`. Value iteration
//! runs the recursion in whole-period blocks from a zero terminal weight and
//! watches the period-anchored iterates; divergence of the iterates is the
//! not-stabilizable verdict.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{self, op_norm, symmetrize};
use crate::model::{slot, ControlSequence, FeedbackLaw, ImpulseSystem};

/// Divergence cap on the operator norm of value-iteration iterates.
pub const DIVERGENCE_CAP: f64 = 1e12;

/// Periodic stage weights with uniform positivity margins.
///
/// Each `Q_k - q_margin I` and `R_k - r_margin I` must be positive
/// semidefinite. The state margin may be zero (finite-horizon problems
/// allow it); the control margin must be strictly positive so the inner
/// solve stays well posed.
#[derive(Debug, Clone)]
pub struct CostWeights {
    q: Vec<DMatrix<f64>>,
    r: Vec<DMatrix<f64>>,
    q_margin: f64,
    r_margin: f64,
}

impl CostWeights {
    pub fn new(
        q: Vec<DMatrix<f64>>,
        r: Vec<DMatrix<f64>>,
        q_margin: f64,
        r_margin: f64,
    ) -> Result<Self> {
        if q.is_empty() || q.len() != r.len() {
            return Err(Error::Dimension(
                "need equally many Q and R matrices, one per slot".into(),
            ));
        }
        if q_margin < 0.0 {
            return Err(Error::InvalidInput("state weight margin must be >= 0".into()));
        }
        if r_margin <= 0.0 {
            return Err(Error::InvalidInput("control weight margin must be > 0".into()));
        }
        for (name, list, margin) in [("Q", &q, q_margin), ("R", &r, r_margin)] {
            for (k, m) in list.iter().enumerate() {
                if m.nrows() != m.ncols() {
                    return Err(Error::Dimension(format!("{name}_{} is not square", k + 1)));
                }
                let scale = op_norm(m).max(1.0);
                if op_norm(&(m - m.transpose())) > 1e-10 * scale {
                    return Err(Error::InvalidInput(format!("{name}_{} is not symmetric", k + 1)));
                }
                let shifted = m - DMatrix::identity(m.nrows(), m.nrows()) * margin;
                if linalg::eig_min_symmetric(&shifted) < -1e-10 * scale {
                    return Err(Error::InvalidInput(format!(
                        "{name}_{} violates its positivity margin",
                        k + 1
                    )));
                }
            }
        }
        Ok(Self { q, r, q_margin, r_margin })
    }

    /// Scalar weights `q I`, `r I` repeated on every slot.
    pub fn uniform(sys: &ImpulseSystem, q: f64, r: f64) -> Result<Self> {
        let d = sys.state_dim();
        let m = sys.input_dim();
        Self::new(
            (0..sys.slots()).map(|_| DMatrix::identity(d, d) * q).collect(),
            (0..sys.slots()).map(|_| DMatrix::identity(m, m) * r).collect(),
            q,
            r,
        )
    }

    pub fn slots(&self) -> usize {
        self.q.len()
    }

    /// State weight for base slot `k` in `1..=slots`.
    pub fn q(&self, k: usize) -> &DMatrix<f64> {
        &self.q[k - 1]
    }

    /// Control weight for base slot `k` in `1..=slots`.
    pub fn r(&self, k: usize) -> &DMatrix<f64> {
        &self.r[k - 1]
    }

    pub fn q_margin(&self) -> f64 {
        self.q_margin
    }

    pub fn r_margin(&self) -> f64 {
        self.r_margin
    }

    /// Same weights scaled by `alpha > 0`.
    pub fn scaled(&self, alpha: f64) -> Result<Self> {
        Self::new(
            self.q.iter().map(|m| m * alpha).collect(),
            self.r.iter().map(|m| m * alpha).collect(),
            self.q_margin * alpha,
            self.r_margin * alpha,
        )
    }

    fn check_dims(&self, sys: &ImpulseSystem) -> Result<()> {
        if self.slots() != sys.slots() {
            return Err(Error::Dimension("weight slot count differs from system".into()));
        }
        if self.q[0].nrows() != sys.state_dim() || self.r[0].nrows() != sys.input_dim() {
            return Err(Error::Dimension("weight dimensions differ from system".into()));
        }
        Ok(())
    }
}

/// Symmetric PSD terminal weight of the finite-horizon problem.
#[derive(Debug, Clone)]
pub struct TerminalWeight {
    m: DMatrix<f64>,
}

impl TerminalWeight {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::Dimension("terminal weight must be square".into()));
        }
        let scale = op_norm(&m).max(1.0);
        if op_norm(&(&m - m.transpose())) > 1e-10 * scale {
            return Err(Error::InvalidInput("terminal weight must be symmetric".into()));
        }
        if linalg::eig_min_symmetric(&m) < -1e-10 * scale {
            return Err(Error::InvalidInput("terminal weight must be PSD".into()));
        }
        Ok(Self { m })
    }

    pub fn zero(dim: usize) -> Self {
        Self { m: DMatrix::zeros(dim, dim) }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.m
    }
}

/// Converged periodic family `P_0..P_h` with `P_0 = P_h`.
#[derive(Debug, Clone)]
pub struct RiccatiSolution {
    p: Vec<DMatrix<f64>>,
    residual: f64,
    iterations: usize,
}

impl RiccatiSolution {
    /// Family member for slot `k` in `0..=slots`.
    pub fn p(&self, k: usize) -> &DMatrix<f64> {
        &self.p[k]
    }

    pub fn family(&self) -> &[DMatrix<f64>] {
        &self.p
    }

    pub fn residual(&self) -> f64 {
        self.residual
    }

    /// Periods of value iteration used.
    pub fn iterations(&self) -> usize {
        self.iterations
    }
}

/// Diagnostics attached to a not-stabilizable verdict.
#[derive(Debug, Clone)]
pub struct DivergenceReport {
    pub periods: usize,
    pub norm: f64,
    /// Mean log-growth of the iterate norm per period over the trailing window.
    pub growth_rate: f64,
}

/// Outcome of the periodic solve: a verdict, not an error.
#[derive(Debug, Clone)]
pub enum RiccatiOutcome {
    Solved(RiccatiSolution),
    NotStabilizable(DivergenceReport),
}

impl RiccatiOutcome {
    pub fn solution(&self) -> Option<&RiccatiSolution> {
        match self {
            RiccatiOutcome::Solved(s) => Some(s),
            RiccatiOutcome::NotStabilizable(_) => None,
        }
    }

    pub fn is_solved(&self) -> bool {
        matches!(self, RiccatiOutcome::Solved(_))
    }
}

/// One backward step of the recursion, symmetrized.
fn backward_step(
    e: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    p: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let mut inner = r + b.transpose() * p * b;
    symmetrize(&mut inner);
    let chol = inner.cholesky().ok_or_else(|| {
        Error::Numeric("inner matrix R + B'PB lost positive definiteness; weights corrupted".into())
    })?;
    let btp = b.transpose() * p;
    let solved = chol.solve(&btp);
    let mut s = p + q - btp.transpose() * solved;
    symmetrize(&mut s);
    let mut out = e.transpose() * s * e;
    symmetrize(&mut out);
    if !out.iter().all(|v| v.is_finite()) {
        return Err(Error::Numeric("backward Riccati step produced non-finite entries".into()));
    }
    Ok(out)
}

/// Backward finite-horizon recursion from terminal weight `M` at step `khat`.
///
/// Returns the whole family `P_0..P_khat`, all symmetric PSD.
pub fn finite_horizon_riccati(
    sys: &ImpulseSystem,
    w: &CostWeights,
    terminal: &TerminalWeight,
    khat: usize,
) -> Result<Vec<DMatrix<f64>>> {
    w.check_dims(sys)?;
    if khat == 0 {
        return Err(Error::InvalidInput("horizon must be at least one step".into()));
    }
    if terminal.matrix().nrows() != sys.state_dim() {
        return Err(Error::Dimension("terminal weight dimension differs from state".into()));
    }
    let n = sys.slots();
    let mut family = vec![DMatrix::zeros(0, 0); khat + 1];
    family[khat] = terminal.matrix().clone();
    for j in (1..=khat).rev() {
        let k = slot(j, n);
        family[j - 1] = backward_step(sys.flow(k), sys.input(k), w.q(k), w.r(k), &family[j])?;
    }
    Ok(family)
}

/// Optimal value `<P_l x0, x0>` of the finite-horizon problem.
pub fn finite_horizon_value(p_ell: &DMatrix<f64>, x0: &DVector<f64>) -> f64 {
    (x0.transpose() * p_ell * x0)[(0, 0)]
}

/// Cost of explicit controls on the window `l+1..=khat` starting from the
/// post-impulse state `x0` at step `l`, including the terminal weight.
pub fn finite_horizon_cost(
    sys: &ImpulseSystem,
    w: &CostWeights,
    terminal: &TerminalWeight,
    x0: &DVector<f64>,
    ell: usize,
    khat: usize,
    controls: &[DVector<f64>],
) -> Result<f64> {
    w.check_dims(sys)?;
    if khat <= ell {
        return Err(Error::InvalidInput("horizon must exceed the start step".into()));
    }
    if controls.len() != khat - ell {
        return Err(Error::Dimension(format!(
            "expected {} controls on the window, got {}",
            khat - ell,
            controls.len()
        )));
    }
    if controls.iter().any(|v| v.len() != sys.input_dim()) {
        return Err(Error::Dimension("control vectors must match the input dimension".into()));
    }
    let n = sys.slots();
    let mut state = x0.clone();
    let mut cost = 0.0;
    for (i, v) in controls.iter().enumerate() {
        let j = ell + 1 + i;
        let k = slot(j, n);
        let before = sys.flow(k) * &state;
        cost += (before.transpose() * w.q(k) * &before)[(0, 0)];
        cost += (v.transpose() * w.r(k) * v)[(0, 0)];
        state = before + sys.input(k) * v;
    }
    cost += (state.transpose() * terminal.matrix() * &state)[(0, 0)];
    Ok(cost)
}

/// Closed-loop optimal control of the finite-horizon problem, generated by
/// the gains read off the backward family.
///
/// The returned sequence is zero on slots `1..=l`; its effective support is
/// `l+1..=khat`.
pub fn finite_horizon_optimal_control(
    sys: &ImpulseSystem,
    w: &CostWeights,
    family: &[DMatrix<f64>],
    x0: &DVector<f64>,
    ell: usize,
    khat: usize,
) -> Result<ControlSequence> {
    w.check_dims(sys)?;
    if family.len() != khat + 1 {
        return Err(Error::Dimension("family length must be khat + 1".into()));
    }
    if khat <= ell {
        return Err(Error::InvalidInput("horizon must exceed the start step".into()));
    }
    let n = sys.slots();
    let mut values: Vec<DVector<f64>> =
        (0..ell).map(|_| DVector::zeros(sys.input_dim())).collect();
    let mut state = x0.clone();
    for j in ell + 1..=khat {
        let k = slot(j, n);
        let before = sys.flow(k) * &state;
        let b = sys.input(k);
        let mut inner = w.r(k) + b.transpose() * &family[j] * b;
        symmetrize(&mut inner);
        let chol = inner
            .cholesky()
            .ok_or_else(|| Error::Numeric("gain solve lost positive definiteness".into()))?;
        let v = -chol.solve(&(b.transpose() * &family[j] * &before));
        state = before + b * &v;
        values.push(v);
    }
    ControlSequence::new(values, 0.0)
}

/// Max defect of the periodic equation over one cycle, plus the periodicity
/// gap between the first and last family member.
pub fn riccati_residual(sys: &ImpulseSystem, w: &CostWeights, family: &[DMatrix<f64>]) -> f64 {
    let n = sys.slots();
    assert_eq!(family.len(), n + 1, "periodic family has slots + 1 members");
    let mut worst: f64 = 0.0;
    for k in 1..=n {
        match backward_step(sys.flow(k), sys.input(k), w.q(k), w.r(k), &family[k]) {
            Ok(expected) => {
                worst = worst.max(op_norm(&(&family[k - 1] - expected)));
            }
            Err(_) => return f64::INFINITY,
        }
    }
    worst + op_norm(&(&family[0] - &family[n]))
}

/// Periodic Riccati solve by whole-period value iteration from zero.
///
/// Convergence requires both the period-anchored update and the equation
/// residual to fall below `tol` (relative to the iterate scale). Divergence
/// past [`DIVERGENCE_CAP`], or a monotone-growth trail at `max_periods`,
/// yields the not-stabilizable verdict. A bounded but still-moving iterate
/// at `max_periods` is reported as a convergence failure instead.
pub fn periodic_riccati_solve(
    sys: &ImpulseSystem,
    w: &CostWeights,
    tol: f64,
    max_periods: usize,
) -> Result<RiccatiOutcome> {
    w.check_dims(sys)?;
    if w.q_margin() <= 0.0 {
        return Err(Error::InvalidInput(
            "periodic solve needs a strictly positive state weight margin".into(),
        ));
    }
    if tol <= 0.0 {
        return Err(Error::InvalidInput("tolerance must be positive".into()));
    }
    let d = sys.state_dim();
    let n = sys.slots();
    let mut anchor = DMatrix::<f64>::zeros(d, d);
    let mut norm_history: Vec<f64> = Vec::new();
    let mut last_diff = f64::INFINITY;
    for period in 1..=max_periods {
        let mut next = anchor.clone();
        for j in (1..=n).rev() {
            next = backward_step(sys.flow(j), sys.input(j), w.q(j), w.r(j), &next)?;
        }
        let norm = op_norm(&next);
        if !norm.is_finite() {
            return Err(Error::Numeric(format!(
                "iterate norm became non-finite at period {period}"
            )));
        }
        if norm > DIVERGENCE_CAP {
            let growth = mean_log_growth(&norm_history);
            return Ok(RiccatiOutcome::NotStabilizable(DivergenceReport {
                periods: period,
                norm,
                growth_rate: growth,
            }));
        }
        let diff = op_norm(&(&next - &anchor));
        let scale = norm.max(1.0);
        anchor = next;
        last_diff = diff;
        norm_history.push(norm);
        if diff <= tol * scale {
            let mut family = finite_horizon_riccati(
                sys,
                w,
                &TerminalWeight::new(anchor.clone())?,
                n,
            )?;
            // The converged anchor closes the cycle; alias both ends to it.
            family[0] = anchor.clone();
            let psd_slack = family
                .iter()
                .map(|p| -linalg::eig_min_symmetric(p) / op_norm(p).max(1.0))
                .fold(0.0f64, f64::max);
            if psd_slack > 1e-10 {
                return Err(Error::Numeric(format!(
                    "converged family lost positive semidefiniteness (slack {psd_slack:.3e})"
                )));
            }
            let residual = riccati_residual(sys, w, &family);
            if residual <= tol * scale {
                return Ok(RiccatiOutcome::Solved(RiccatiSolution {
                    p: family,
                    residual,
                    iterations: period,
                }));
            }
        }
    }
    // Out of budget: decide between steady growth and slow convergence.
    let window = norm_history.len().min(50).max(2);
    let tail = &norm_history[norm_history.len() - window..];
    let monotone = tail.windows(2).all(|p| p[1] >= p[0] * (1.0 - 1e-9));
    let growth = mean_log_growth(&norm_history);
    if monotone && growth > 0.0 {
        return Ok(RiccatiOutcome::NotStabilizable(DivergenceReport {
            periods: max_periods,
            norm: *norm_history.last().unwrap(),
            growth_rate: growth,
        }));
    }
    Err(Error::NoConvergence {
        periods: max_periods,
        last_update: last_diff,
        norm: norm_history.last().copied().unwrap_or(f64::NAN),
    })
}

fn mean_log_growth(norms: &[f64]) -> f64 {
    let window = norms.len().min(50);
    if window < 2 {
        return 0.0;
    }
    let tail = &norms[norms.len() - window..];
    let first = tail.first().unwrap().max(1e-300);
    let last = tail.last().unwrap().max(1e-300);
    (last / first).ln() / (window - 1) as f64
}

/// Feedback gains `F_k = -(R_k + B_k' P_k B_k)^{-1} B_k' P_k`.
pub fn synthesize_feedback(
    sys: &ImpulseSystem,
    w: &CostWeights,
    sol: &RiccatiSolution,
) -> Result<FeedbackLaw> {
    w.check_dims(sys)?;
    let mut gains = Vec::with_capacity(sys.slots());
    for k in 1..=sys.slots() {
        let b = sys.input(k);
        let p = sol.p(k);
        let mut inner = w.r(k) + b.transpose() * p * b;
        symmetrize(&mut inner);
        let chol = inner
            .cholesky()
            .ok_or_else(|| Error::Numeric("gain solve lost positive definiteness".into()))?;
        gains.push(-chol.solve(&(b.transpose() * p)));
    }
    FeedbackLaw::new(gains)
}

/// Cost accumulation horizon.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CostHorizon {
    Finite(usize),
    Infinite,
}

/// Cost value reported as an interval; finite horizons collapse to a point.
#[derive(Debug, Clone, Copy)]
pub struct CostInterval {
    pub lower: f64,
    pub upper: f64,
}

impl CostInterval {
    pub fn point(v: f64) -> Self {
        Self { lower: v, upper: v }
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }
}

fn check_controls(sys: &ImpulseSystem, u: &ControlSequence) -> Result<()> {
    if let Some(v) = u.value(1) {
        if v.len() != sys.input_dim() {
            return Err(Error::Dimension(format!(
                "controls have length {}, expected {}",
                v.len(),
                sys.input_dim()
            )));
        }
    }
    Ok(())
}

fn stage_cost(
    w: &CostWeights,
    k: usize,
    state_before: &DVector<f64>,
    control: &DVector<f64>,
) -> f64 {
    (state_before.transpose() * w.q(k) * state_before)[(0, 0)]
        + (control.transpose() * w.r(k) * control)[(0, 0)]
}

/// Stage-cost sum `sum_j <Q_j x(t_j), x(t_j)> + <R_j u_j, u_j>`.
///
/// An infinite horizon with a zero tail bound is summed until the series
/// increments die out, with the geometric remainder folded into the upper
/// end of the interval. A nonzero tail bound keeps the lower end at the
/// exact prefix cost and inflates the upper end through an input-to-state
/// gain bound; when the free flow shows no decay the upper end is infinite.
pub fn lq_cost(
    sys: &ImpulseSystem,
    w: &CostWeights,
    x0: &DVector<f64>,
    u: &ControlSequence,
    horizon: CostHorizon,
) -> Result<CostInterval> {
    w.check_dims(sys)?;
    check_controls(sys, u)?;
    if x0.len() != sys.state_dim() {
        return Err(Error::Dimension("initial state dimension differs from system".into()));
    }
    let n = sys.slots();
    match horizon {
        CostHorizon::Finite(steps) => {
            if steps > u.len() && u.tail_norm() > 0.0 {
                return Err(Error::InvalidInput(
                    "finite horizon exceeds the stored prefix while the tail bound is nonzero"
                        .into(),
                ));
            }
            let zero = DVector::zeros(sys.input_dim());
            let mut state = x0.clone();
            let mut cost = 0.0;
            for j in 1..=steps {
                let k = slot(j, n);
                let before = sys.flow(k) * &state;
                let v = u.value(j).unwrap_or(&zero);
                cost += stage_cost(w, k, &before, v);
                state = before + sys.input(k) * v;
            }
            Ok(CostInterval::point(cost))
        }
        CostHorizon::Infinite => infinite_horizon_cost(sys, w, x0, u),
    }
}

fn infinite_horizon_cost(
    sys: &ImpulseSystem,
    w: &CostWeights,
    x0: &DVector<f64>,
    u: &ControlSequence,
) -> Result<CostInterval> {
    let n = sys.slots();
    let zero = DVector::zeros(sys.input_dim());
    let prefix_len = u.len();
    let max_blocks = 200_000usize / n.max(1) + 2;

    let mut state = x0.clone();
    let mut state_cost = 0.0;
    let mut control_cost = 0.0;
    let mut prefix_cost = 0.0;
    let mut block_sums: Vec<f64> = Vec::new();
    let mut j = 0usize;
    'outer: for _ in 0..max_blocks {
        let mut block = 0.0;
        for _ in 0..n {
            j += 1;
            let k = slot(j, n);
            let before = sys.flow(k) * &state;
            let v = u.value(j).unwrap_or(&zero);
            let sc = (before.transpose() * w.q(k) * &before)[(0, 0)];
            let cc = (v.transpose() * w.r(k) * v)[(0, 0)];
            state_cost += sc;
            control_cost += cc;
            if j <= prefix_len {
                prefix_cost += sc + cc;
            }
            block += sc + cc;
            state = before + sys.input(k) * v;
            if !state.iter().all(|x| x.is_finite()) {
                break 'outer;
            }
        }
        block_sums.push(block);
        let total = state_cost + control_cost;
        if j > prefix_len && block <= 1e-16 * total.max(1.0) {
            break;
        }
    }

    // Geometric remainder of the zero-tail continuation. A dead state has
    // nothing left to contribute regardless of the block history.
    let total_zero_tail = state_cost + control_cost;
    let remainder = if state.norm() == 0.0 {
        0.0
    } else {
        match block_ratio(&block_sums) {
            Some(ratio) if ratio < 0.999 => {
                let last = *block_sums.last().unwrap();
                last * ratio / (1.0 - ratio)
            }
            _ => f64::INFINITY,
        }
    };

    if u.tail_norm() == 0.0 {
        let upper = if remainder.is_finite() {
            total_zero_tail + remainder
        } else {
            f64::INFINITY
        };
        return Ok(CostInterval { lower: total_zero_tail, upper });
    }

    // Nonzero tail: the lower end keeps only the exact prefix stages; the
    // upper end routes the tail through an input-to-state gain bound.
    let tau = u.tail_norm();
    let gain = tail_state_gain(sys, w);
    let upper = if remainder.is_finite() && gain.is_finite() {
        let state_zero_tail_upper = state_cost + remainder;
        let r_max = (1..=n).map(|k| op_norm(w.r(k))).fold(0.0f64, f64::max);
        (state_zero_tail_upper.sqrt() + gain * tau).powi(2) + control_cost + r_max * tau * tau
    } else {
        f64::INFINITY
    };
    Ok(CostInterval { lower: prefix_cost, upper })
}

fn block_ratio(blocks: &[f64]) -> Option<f64> {
    if blocks.len() < 4 {
        return None;
    }
    let tail = &blocks[blocks.len() - 3..];
    let mut worst: f64 = 0.0;
    for p in tail.windows(2) {
        if p[0] <= 0.0 {
            return Some(0.0);
        }
        worst = worst.max(p[1] / p[0]);
    }
    Some(worst)
}

/// Bound on the weighted-l2 state response to an l2 control tail:
/// `sqrt(q_max) * b_max * sum_k sup_phase ||k-step flow product||`.
fn tail_state_gain(sys: &ImpulseSystem, w: &CostWeights) -> f64 {
    let n = sys.slots();
    let q_max = (1..=n).map(|k| op_norm(w.q(k))).fold(0.0f64, f64::max);
    let b_max = (1..=n).map(|k| op_norm(sys.input(k))).fold(0.0f64, f64::max);
    let d = sys.state_dim();
    // Running products per start phase; advance both one flow at a time.
    let mut products: Vec<DMatrix<f64>> = (0..n).map(|_| DMatrix::identity(d, d)).collect();
    let mut sum = 0.0;
    let mut last_sup = f64::INFINITY;
    let cap = 400 * n;
    for k in 1..=cap {
        let mut sup: f64 = 0.0;
        for phase in 0..n {
            // product of flows at counters phase+1 .. phase+k applied left to right
            let idx = slot(phase + k, n);
            products[phase] = sys.flow(idx) * &products[phase];
            sup = sup.max(op_norm(&products[phase]));
        }
        sum += sup;
        last_sup = sup;
        if sup < 1e-14 {
            return q_max.sqrt() * b_max * sum;
        }
        if k % (8 * n) == 0 && sup > 2.0 {
            // no sign of decay
            return f64::INFINITY;
        }
    }
    if last_sup < 0.5 {
        // geometric closure using the last observed supremum as the ratio
        sum += last_sup * last_sup / (1.0 - last_sup);
        q_max.sqrt() * b_max * sum
    } else {
        f64::INFINITY
    }
}

/// Admissibility report: does the state sample sequence look square-summable?
#[derive(Debug, Clone)]
pub struct AdmissibilityReport {
    pub admissible: bool,
    pub inconclusive: bool,
    /// Running sums of squared state norms, one entry per period.
    pub partial_sums: Vec<f64>,
    /// Trailing per-period increment ratio, when measurable.
    pub ratio: Option<f64>,
}

/// Numerical membership test for the admissible control set: simulates the
/// zero-extended control and watches the partial sums of squared state
/// norms. Convergence is declared when the per-period increments fall below
/// `tol` with a contracting trailing ratio.
pub fn is_admissible(
    sys: &ImpulseSystem,
    x0: &DVector<f64>,
    u: &ControlSequence,
    tol: f64,
) -> Result<AdmissibilityReport> {
    if x0.len() != sys.state_dim() {
        return Err(Error::Dimension("initial state dimension differs from system".into()));
    }
    check_controls(sys, u)?;
    let n = sys.slots();
    let zero = DVector::zeros(sys.input_dim());
    let mut state = x0.clone();
    let mut sum = 0.0;
    let mut partial_sums = Vec::new();
    let mut increments = Vec::new();
    let mut j = 0usize;
    let max_blocks = 4096usize.max(4 * u.len() / n.max(1));
    for _ in 0..max_blocks {
        let mut inc = 0.0;
        for _ in 0..n {
            j += 1;
            let k = slot(j, n);
            let before = sys.flow(k) * &state;
            inc += before.norm_squared();
            state = before + sys.input(k) * u.value(j).unwrap_or(&zero);
            if !state.iter().all(|x| x.is_finite()) {
                return Ok(AdmissibilityReport {
                    admissible: false,
                    inconclusive: false,
                    partial_sums,
                    ratio: None,
                });
            }
        }
        sum += inc;
        partial_sums.push(sum);
        increments.push(inc);
        if j <= u.len() {
            continue;
        }
        let m = increments.len();
        if m >= 3 {
            let recent = &increments[m - 3..];
            let contracting = recent.windows(2).all(|p| p[1] <= p[0]);
            if contracting && recent[2] <= tol * sum.max(1.0) {
                // A nonzero control tail keeps square-summability only if the
                // free flow damps it; fall back to the gain bound.
                let tail_ok = u.tail_norm() == 0.0
                    || tail_state_gain(sys, &CostWeights::uniform(sys, 1.0, 1.0)?).is_finite();
                return Ok(AdmissibilityReport {
                    admissible: tail_ok,
                    inconclusive: !tail_ok,
                    partial_sums,
                    ratio: Some(recent[2] / recent[1].max(1e-300)),
                });
            }
            let growing = recent.windows(2).all(|p| p[1] >= p[0] * 1.01);
            if growing && recent[2] > increments[0].max(1e-12) * 1e6 {
                return Ok(AdmissibilityReport {
                    admissible: false,
                    inconclusive: false,
                    partial_sums,
                    ratio: Some(recent[2] / recent[1]),
                });
            }
        }
    }
    Ok(AdmissibilityReport {
        admissible: false,
        inconclusive: true,
        partial_sums,
        ratio: None,
    })
}

/// Completion-of-squares defect over a finite window:
///
/// `|J(u) - <P_0 x0, x0> - sum_k ||(R+B'PB)^{1/2}(u_k + (R+B'PB)^{-1}B'P x(t_k))||^2|`.
///
/// Exact (up to roundoff) when the trajectory has died out by the horizon.
pub fn completion_of_squares_defect(
    sys: &ImpulseSystem,
    w: &CostWeights,
    sol: &RiccatiSolution,
    x0: &DVector<f64>,
    u: &ControlSequence,
    horizon: usize,
) -> Result<f64> {
    w.check_dims(sys)?;
    check_controls(sys, u)?;
    if horizon > u.len() && u.tail_norm() > 0.0 {
        return Err(Error::InvalidInput("horizon exceeds the stored control prefix".into()));
    }
    let n = sys.slots();
    let zero = DVector::zeros(sys.input_dim());
    let mut state = x0.clone();
    let mut j_cost = 0.0;
    let mut squares = 0.0;
    for j in 1..=horizon {
        let k = slot(j, n);
        let before = sys.flow(k) * &state;
        let v = u.value(j).unwrap_or(&zero);
        j_cost += stage_cost(w, k, &before, v);

        let b = sys.input(k);
        let p = sol.p(k);
        let mut inner = w.r(k) + b.transpose() * p * b;
        symmetrize(&mut inner);
        let chol = inner
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Numeric("inner solve lost positive definiteness".into()))?;
        let offset = chol.solve(&(b.transpose() * p * &before));
        let shifted = v + offset;
        squares += (shifted.transpose() * inner * &shifted)[(0, 0)];

        state = before + b * v;
    }
    let value = (x0.transpose() * sol.p(0) * x0)[(0, 0)];
    Ok((j_cost - value - squares).abs())
}

/// Dynamic-programming gap at split step `k`: compares `<P_0 x0, x0>` with
/// the value of the induced finite-horizon problem whose terminal weight is
/// the family member at slot `nu(k)`, and additionally checks that sampled
/// suboptimal controls cannot beat the value.
pub fn dynamic_programming_gap(
    sys: &ImpulseSystem,
    w: &CostWeights,
    sol: &RiccatiSolution,
    x0: &DVector<f64>,
    k: usize,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    w.check_dims(sys)?;
    if k == 0 {
        return Err(Error::InvalidInput("split step must be at least 1".into()));
    }
    let n = sys.slots();
    let terminal = TerminalWeight::new(sol.p(slot(k, n)).clone())?;
    let family = finite_horizon_riccati(sys, w, &terminal, k)?;
    let value = (x0.transpose() * sol.p(0) * x0)[(0, 0)];
    let induced = finite_horizon_value(&family[0], x0);
    let mut gap = (value - induced).abs();

    // Sampled controls can only over-shoot the value.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = x0.norm().max(1.0);
    for _ in 0..samples {
        let controls: Vec<DVector<f64>> = (0..k)
            .map(|_| DVector::from_fn(sys.input_dim(), |_, _| rng.random_range(-scale..scale)))
            .collect();
        let cost = finite_horizon_cost(sys, w, &terminal, x0, 0, k, &controls)?;
        let undershoot = (value - cost).max(0.0);
        gap = gap.max(undershoot);
    }
    Ok(gap)
}
