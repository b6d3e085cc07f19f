//! Spectral truncations of coupled heat systems on (0, pi) and the rank
//! machinery deciding their stabilizability.
//!
//! The domain is fixed to the unit interval scaled to (0, pi), so the
//! Dirichlet eigenpairs are `lambda_i = i^2` with `e_i = sqrt(2/pi) sin(ix)`
//! and every window overlap integral has a closed form.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{self, op_norm};
use crate::model::{
    decay_rate_fit, monodromy, simulate_closed_loop, FeedbackLaw, ImpulseSystem,
    PeriodicSchedule,
};
use crate::riccati::{periodic_riccati_solve, synthesize_feedback, CostWeights, RiccatiOutcome};

/// First Dirichlet eigenvalue of the Laplacian on (0, pi).
pub const LAMBDA_1: f64 = 1.0;

/// Coupled heat system description: `n` components coupled by `S`, driven
/// through per-slot input matrices `D_k` restricted to windows
/// `omega_k = (a_k, b_k)`, truncated to the first `modes` sine modes.
#[derive(Debug, Clone)]
pub struct HeatConfig {
    pub components: usize,
    pub input_count: usize,
    pub coupling: DMatrix<f64>,
    pub inputs: Vec<DMatrix<f64>>,
    pub windows: Vec<(f64, f64)>,
    pub modes: usize,
}

impl HeatConfig {
    pub fn new(
        coupling: DMatrix<f64>,
        inputs: Vec<DMatrix<f64>>,
        windows: Vec<(f64, f64)>,
        modes: usize,
    ) -> Result<Self> {
        let n = coupling.nrows();
        if coupling.ncols() != n || n == 0 {
            return Err(Error::Dimension("coupling matrix must be square".into()));
        }
        if inputs.is_empty() || inputs.len() != windows.len() {
            return Err(Error::Dimension(
                "need one input matrix and one window per slot".into(),
            ));
        }
        let m = inputs[0].ncols();
        for d in &inputs {
            if d.nrows() != n || d.ncols() != m {
                return Err(Error::Dimension("input matrices must share dimensions n x m".into()));
            }
        }
        for &(a, b) in &windows {
            if !(0.0 <= a && a < b && b <= std::f64::consts::PI) {
                return Err(Error::InvalidInput(format!(
                    "window ({a}, {b}) must satisfy 0 <= a < b <= pi"
                )));
            }
        }
        if modes == 0 {
            return Err(Error::InvalidInput("need at least one mode".into()));
        }
        Ok(Self { components: n, input_count: m, coupling, inputs, windows, modes })
    }

    pub fn slots(&self) -> usize {
        self.inputs.len()
    }

    /// Whether all control windows share a common point. The theory assumes
    /// a nonempty intersection; callers should surface this as a warning.
    pub fn windows_intersect(&self) -> bool {
        let a = self.windows.iter().map(|w| w.0).fold(f64::MIN, f64::max);
        let b = self.windows.iter().map(|w| w.1).fold(f64::MAX, f64::min);
        a < b
    }

    /// Concatenation of the per-slot input matrices.
    pub fn input_concat(&self) -> DMatrix<f64> {
        let n = self.components;
        let m = self.input_count;
        let mut cat = DMatrix::zeros(n, m * self.inputs.len());
        for (k, d) in self.inputs.iter().enumerate() {
            cat.columns_mut(k * m, m).copy_from(d);
        }
        cat
    }
}

/// Overlap Gram matrix of the sine basis restricted to a window:
/// entries `(2/pi) * integral_a^b sin(ix) sin(jx) dx` in closed form.
pub fn sine_overlap_matrix(window: (f64, f64), modes: usize) -> DMatrix<f64> {
    let (a, b) = window;
    let c = 2.0 / std::f64::consts::PI;
    DMatrix::from_fn(modes, modes, |r, cidx| {
        let i = (r + 1) as f64;
        let j = (cidx + 1) as f64;
        if r == cidx {
            c * ((b - a) / 2.0 - ((2.0 * i * b).sin() - (2.0 * i * a).sin()) / (4.0 * i))
        } else {
            let diff = i - j;
            let sum = i + j;
            c * 0.5
                * (((diff * b).sin() - (diff * a).sin()) / diff
                    - ((sum * b).sin() - (sum * a).sin()) / sum)
        }
    })
}

/// Assembles the `n * modes`-dimensional spectral truncation.
///
/// The state is ordered by mode: block `i` holds the `n` component
/// coefficients of `e_i`. Flows are block-diagonal,
/// `exp((S - i^2 I) dt) = e^{-i^2 dt} exp(S dt)`, and the input matrix
/// couples modes through the window overlap Gram matrix.
pub fn build_heat_system(cfg: &HeatConfig, sched: &PeriodicSchedule) -> Result<ImpulseSystem> {
    if sched.slots() != cfg.slots() {
        return Err(Error::Dimension("schedule slot count differs from config".into()));
    }
    let n = cfg.components;
    let m = cfg.input_count;
    let nn = cfg.modes;
    let d = n * nn;
    let mut flows = Vec::with_capacity(cfg.slots());
    let mut inputs = Vec::with_capacity(cfg.slots());
    for k in 1..=cfg.slots() {
        let dt = sched.gap(k);
        let coupled = (cfg.coupling.clone() * dt).exp();
        let mut e = DMatrix::zeros(d, d);
        for i in 1..=nn {
            let damp = (-((i * i) as f64) * dt).exp();
            e.view_mut(((i - 1) * n, (i - 1) * n), (n, n))
                .copy_from(&(&coupled * damp));
        }
        flows.push(e);

        let gamma = sine_overlap_matrix(cfg.windows[k - 1], nn);
        let dk = &cfg.inputs[k - 1];
        let mut b = DMatrix::zeros(d, m * nn);
        for i in 0..nn {
            for j in 0..nn {
                let w = gamma[(i, j)];
                if w != 0.0 {
                    b.view_mut((i * n, j * m), (n, m)).copy_from(&(dk * w));
                }
            }
        }
        inputs.push(b);
    }
    ImpulseSystem::new(sched.clone(), flows, inputs)
}

/// Stacked controllability matrix `[D, S D, ..., S^{n-1} D]`.
pub fn kalman_matrix(s: &DMatrix<f64>, dcat: &DMatrix<f64>) -> DMatrix<f64> {
    let n = s.nrows();
    let cols = dcat.ncols();
    let mut k = DMatrix::zeros(n, n * cols);
    let mut cur = dcat.clone();
    for p in 0..n {
        k.columns_mut(p * cols, cols).copy_from(&cur);
        if p + 1 < n {
            cur = s * cur;
        }
    }
    k
}

/// Numerical rank of the controllability matrix.
pub fn kalman_rank(s: &DMatrix<f64>, dcat: &DMatrix<f64>, rank_tol: f64) -> usize {
    linalg::numerical_rank(&kalman_matrix(s, dcat), rank_tol)
}

#[derive(Debug, Clone, PartialEq)]
pub enum HautusVerdict {
    Stabilizable,
    NotStabilizable { witness: Complex64 },
}

impl HautusVerdict {
    pub fn is_stabilizable(&self) -> bool {
        matches!(self, HautusVerdict::Stabilizable)
    }
}

/// Eigenvalue-restricted Hautus test: the pair fails exactly when some
/// eigenvalue of `S` with real part at least `lambda1` drops the rank of
/// `[lambda I - S, D]` below `n`.
pub fn hautus_verdict(
    s: &DMatrix<f64>,
    dcat: &DMatrix<f64>,
    lambda1: f64,
    rank_tol: f64,
) -> HautusVerdict {
    let n = s.nrows();
    let scale = op_norm(s).max(1.0);
    let eigs = s.clone().complex_eigenvalues();
    for lam in eigs.iter() {
        if lam.re < lambda1 - 1e-10 * scale {
            continue;
        }
        let mut pencil = DMatrix::<Complex64>::zeros(n, n + dcat.ncols());
        for r in 0..n {
            for c in 0..n {
                pencil[(r, c)] = Complex64::new(-s[(r, c)], 0.0);
            }
            pencil[(r, r)] += lam;
            for c in 0..dcat.ncols() {
                pencil[(r, n + c)] = Complex64::new(dcat[(r, c)], 0.0);
            }
        }
        if linalg::complex_rank(&pencil, rank_tol) < n {
            return HautusVerdict::NotStabilizable { witness: *lam };
        }
    }
    HautusVerdict::Stabilizable
}

/// Controllability decomposition in an orthonormal basis of the reachable
/// column space.
#[derive(Debug, Clone)]
pub struct Decomposition {
    /// Orthonormal change of basis; the first `controllable_dim` columns
    /// span the reachable subspace.
    pub basis: DMatrix<f64>,
    pub s1: DMatrix<f64>,
    pub s2: DMatrix<f64>,
    pub s3: DMatrix<f64>,
    pub dtilde: DMatrix<f64>,
    pub controllable_dim: usize,
    pub fully_controllable: bool,
}

/// Splits `(S, D)` along the reachable subspace: in the new basis the
/// coupling is block upper-triangular and the input has no component in the
/// unreachable block.
pub fn kalman_decomposition(
    s: &DMatrix<f64>,
    dcat: &DMatrix<f64>,
    rank_tol: f64,
) -> Result<Decomposition> {
    let n = s.nrows();
    if s.ncols() != n || dcat.nrows() != n {
        return Err(Error::Dimension("coupling must be square and match the input rows".into()));
    }
    let k = kalman_matrix(s, dcat);
    let svd = k.clone().svd(true, false);
    let smax = svd.singular_values.max();
    let n1 = if smax == 0.0 {
        0
    } else {
        svd.singular_values.iter().filter(|&&v| v > rank_tol * smax).count()
    };
    if n1 == n {
        return Ok(Decomposition {
            basis: DMatrix::identity(n, n),
            s1: s.clone(),
            s2: DMatrix::zeros(n, 0),
            s3: DMatrix::zeros(0, 0),
            dtilde: dcat.clone(),
            controllable_dim: n,
            fully_controllable: true,
        });
    }
    let u = svd.u.expect("svd requested u");
    // For a wide Kalman matrix the thin U is already n x n; otherwise the
    // rank bound keeps n1 within the computed columns.
    let basis = if u.ncols() == n {
        u
    } else {
        let mut full = DMatrix::identity(n, n);
        full.columns_mut(0, u.ncols()).copy_from(&u);
        full
    };
    let st = basis.transpose() * s * &basis;
    let dt = basis.transpose() * dcat;
    let s1 = st.view((0, 0), (n1, n1)).into();
    let s2 = st.view((0, n1), (n1, n - n1)).into();
    let s3 = st.view((n1, n1), (n - n1, n - n1)).into();
    let lower = st.view((n1, 0), (n - n1, n1));
    let scale = op_norm(s).max(1.0);
    if lower.norm() > 1e-8 * scale {
        return Err(Error::Numeric(format!(
            "decomposition left a lower block of norm {:.3e}",
            lower.norm()
        )));
    }
    let dtilde: DMatrix<f64> = dt.view((0, 0), (n1, dcat.ncols())).into();
    let d_lower = dt.view((n1, 0), (n - n1, dcat.ncols()));
    if d_lower.norm() > 1e-8 * op_norm(dcat).max(1.0) {
        return Err(Error::Numeric("decomposition left input mass in the unreachable block".into()));
    }
    if linalg::numerical_rank(&kalman_matrix(&s1, &dtilde), rank_tol) != n1 {
        return Err(Error::Numeric("reachable block failed its own rank condition".into()));
    }
    Ok(Decomposition {
        basis,
        s1,
        s2,
        s3,
        dtilde,
        controllable_dim: n1,
        fully_controllable: false,
    })
}

/// Oscillation half-period of the spectrum: `min pi / |Im lambda|` over
/// eigenvalues with nonzero imaginary part, `+inf` for a real spectrum.
pub fn oscillation_half_period(e: &DMatrix<f64>) -> f64 {
    let scale = op_norm(e).max(1.0);
    let eigs = e.clone().complex_eigenvalues();
    let mut best = f64::INFINITY;
    for lam in eigs.iter() {
        let im = lam.im.abs();
        if im > 1e-10 * scale {
            best = best.min(std::f64::consts::PI / im);
        }
    }
    best
}

/// Largest cyclic-subspace dimension over the columns of `F`:
/// `max_f rank [f, E f, ..., E^{k-1} f]`. Zero for a zero `F`.
pub fn max_krylov_rank(e: &DMatrix<f64>, f: &DMatrix<f64>, rank_tol: f64) -> usize {
    let k = e.nrows();
    let mut best = 0;
    for c in 0..f.ncols() {
        let col: DVector<f64> = f.column(c).into();
        if col.norm() == 0.0 {
            continue;
        }
        let mut krylov = DMatrix::zeros(k, k);
        let mut cur = col;
        for p in 0..k {
            krylov.set_column(p, &cur);
            if p + 1 < k {
                cur = e * cur;
            }
        }
        best = best.max(linalg::numerical_rank(&krylov, rank_tol));
    }
    best
}

/// Admissibility of a schedule for the impulse-density class: every open
/// window of length `d_S` must hold at least `hbar * q + 2` instants.
#[derive(Debug, Clone)]
pub struct ScheduleClassReport {
    pub half_period: f64,
    pub krylov_rank: usize,
    pub required: usize,
    /// `None` when the half-period is infinite and no counting is needed.
    pub min_window_count: Option<usize>,
    pub admissible: bool,
    /// Set when the input concatenation was zero, making the rank vacuous.
    pub zero_input: bool,
}

/// Counts schedule instants inside the open window `(s, s + width)`.
fn window_count(taus: &[f64], s: f64, width: f64) -> usize {
    taus.iter().filter(|&&t| t > s && t < s + width).count()
}

/// Decides membership in the impulse-density class by evaluating the window
/// count at the critical left endpoints only.
///
/// The count, as a function of the left endpoint `s`, only drops when `s`
/// crosses an instant (the instant leaves the open window), and it rises
/// strictly between such crossings when new instants enter on the right. So
/// local minima sit exactly at `s = tau_j`, plus the initial stretch near
/// `s = 0`; periodicity of the schedule closes the argument beyond one
/// period. This is cross-checked against brute-force grids in the tests.
pub fn schedule_in_class(
    sched: &PeriodicSchedule,
    s: &DMatrix<f64>,
    dcat: &DMatrix<f64>,
    hbar: usize,
    rank_tol: f64,
) -> ScheduleClassReport {
    let half_period = oscillation_half_period(s);
    let zero_input = op_norm(dcat) == 0.0;
    let krylov_rank = max_krylov_rank(s, dcat, rank_tol);
    let required = hbar * krylov_rank + 2;
    if half_period.is_infinite() {
        return ScheduleClassReport {
            half_period,
            krylov_rank,
            required,
            min_window_count: None,
            admissible: true,
            zero_input,
        };
    }
    let horizon = sched.period() + half_period;
    let mut taus = Vec::new();
    let mut j = 0usize;
    loop {
        let t = sched.instant(j);
        taus.push(t);
        if t > horizon + half_period {
            break;
        }
        j += 1;
    }
    let mut min_count = usize::MAX;
    for &s0 in std::iter::once(&0.0).chain(taus.iter().filter(|&&t| t <= horizon)) {
        min_count = min_count.min(window_count(&taus, s0, half_period));
    }
    ScheduleClassReport {
        half_period,
        krylov_rank,
        required,
        min_window_count: Some(min_count),
        admissible: min_count >= required,
        zero_input,
    }
}

/// Outcome of the span-equality comparison between exponentially sampled
/// input directions and the controllability span.
#[derive(Debug, Clone, Copy)]
pub struct SpanEqualityReport {
    pub equal: bool,
    /// Whether the sample spread stayed below the oscillation half-period.
    pub precondition_ok: bool,
}

/// Compares `span{exp(-E tau_i) F}` with `span{F, E F, ..., E^{k-1} F}` for
/// `q(E, F)` sample instants. When the samples spread past the half-period
/// the verdict is still computed but flagged as informational.
pub fn span_equality_check(
    e: &DMatrix<f64>,
    f: &DMatrix<f64>,
    taus: &[f64],
    rank_tol: f64,
) -> Result<SpanEqualityReport> {
    let q = max_krylov_rank(e, f, rank_tol);
    if taus.len() != q {
        return Err(Error::InvalidInput(format!(
            "need exactly q = {q} sample instants, got {}",
            taus.len()
        )));
    }
    if taus.windows(2).any(|p| p[1] <= p[0]) {
        return Err(Error::InvalidInput("sample instants must be strictly increasing".into()));
    }
    let precondition_ok = if q <= 1 {
        true
    } else {
        taus[q - 1] - taus[0] < oscillation_half_period(e)
    };
    let k = e.nrows();
    let cols = f.ncols();
    let mut sampled = DMatrix::zeros(k, q * cols);
    for (i, &tau) in taus.iter().enumerate() {
        let ex = (e.clone() * (-tau)).exp();
        sampled.columns_mut(i * cols, cols).copy_from(&(&ex * f));
    }
    let krylov = kalman_matrix(e, f);
    Ok(SpanEqualityReport {
        equal: linalg::col_space_equal(&sampled, &krylov, rank_tol),
        precondition_ok,
    })
}

/// Builds a uniform schedule dense enough for the impulse-density class:
/// spacing below `d_S / (hbar q + 3)` guarantees the window count with one
/// instant to spare. A real spectrum needs no density, so the period hint
/// sets the spacing.
pub fn generate_admissible_schedule(
    s: &DMatrix<f64>,
    dcat: &DMatrix<f64>,
    hbar: usize,
    period_hint: f64,
    rank_tol: f64,
) -> Result<PeriodicSchedule> {
    if hbar == 0 {
        return Err(Error::InvalidInput("need at least one impulse per period".into()));
    }
    if period_hint <= 0.0 {
        return Err(Error::InvalidInput("period hint must be positive".into()));
    }
    let d = oscillation_half_period(s);
    if d.is_infinite() {
        return PeriodicSchedule::uniform(hbar, period_hint / hbar as f64);
    }
    let q = max_krylov_rank(s, dcat, rank_tol);
    let mut h = 0.99 * d / (hbar as f64 * q as f64 + 3.0);
    for _ in 0..60 {
        let sched = PeriodicSchedule::uniform(hbar, h)?;
        if schedule_in_class(&sched, s, dcat, hbar, rank_tol).admissible {
            return Ok(sched);
        }
        h *= 0.5;
    }
    Err(Error::Numeric("failed to densify the schedule into the class".into()))
}

/// End-to-end comparison of the rank verdict with the synthesis route.
#[derive(Debug, Clone)]
pub struct CrossCheckReport {
    pub verdict: HautusVerdict,
    pub riccati_solved: bool,
    /// Closed-loop spectral radius when synthesis ran.
    pub monodromy_radius: Option<f64>,
    /// Fitted decay rate of the synthesized closed loop.
    pub fitted_rate: Option<f64>,
    /// Expected and measured free growth of the uncontrolled mode, under
    /// zero feedback and under a bounded random feedback.
    pub growth_expected: Option<f64>,
    pub growth_measured_zero: Option<f64>,
    pub growth_measured_random: Option<f64>,
    pub agreement: bool,
}

/// Compares the Hautus verdict against the Riccati route on the truncation.
///
/// A stabilizable verdict must produce a converged solve with a contracting
/// monodromy map and a positive fitted decay rate. A not-stabilizable
/// verdict must diverge, and the unreachable mode seeded at the first sine
/// mode must grow at its free rate `Re(lambda_0) - lambda_1` regardless of
/// feedback (the growth is measured through a left-eigenvector amplitude,
/// which no input can touch).
pub fn verdict_cross_check(
    cfg: &HeatConfig,
    sched: &PeriodicSchedule,
    q_weight: f64,
    r_weight: f64,
    tol: f64,
    rank_tol: f64,
) -> Result<CrossCheckReport> {
    let sys = build_heat_system(cfg, sched)?;
    let dcat = cfg.input_concat();
    let verdict = hautus_verdict(&cfg.coupling, &dcat, LAMBDA_1, rank_tol);
    let w = CostWeights::uniform(&sys, q_weight, r_weight)?;
    let outcome = periodic_riccati_solve(&sys, &w, tol, 20_000)?;
    match verdict.clone() {
        HautusVerdict::Stabilizable => {
            let sol = match outcome {
                RiccatiOutcome::Solved(sol) => sol,
                RiccatiOutcome::NotStabilizable(rep) => {
                    return Ok(CrossCheckReport {
                        verdict,
                        riccati_solved: false,
                        monodromy_radius: None,
                        fitted_rate: Some(-rep.growth_rate),
                        growth_expected: None,
                        growth_measured_zero: None,
                        growth_measured_random: None,
                        agreement: false,
                    });
                }
            };
            let feedback = synthesize_feedback(&sys, &w, &sol)?;
            let phi = monodromy(&sys, &feedback)?;
            let rho = linalg::spectral_radius(&phi)?;
            let x0 = DVector::from_element(sys.state_dim(), 1.0) / (sys.state_dim() as f64).sqrt();
            let traj = simulate_closed_loop(&sys, &feedback, &x0, 30)?;
            let fit = decay_rate_fit(&traj);
            Ok(CrossCheckReport {
                verdict,
                riccati_solved: true,
                monodromy_radius: Some(rho),
                fitted_rate: Some(fit.rate),
                growth_expected: None,
                growth_measured_zero: None,
                growth_measured_random: None,
                agreement: rho < 1.0 && fit.rate > 0.0,
            })
        }
        HautusVerdict::NotStabilizable { witness } => {
            let riccati_solved = outcome.is_solved();
            let gm = uncontrolled_mode_growth(cfg, sched, &sys, &dcat, witness, rank_tol)?;
            let expected = witness.re - LAMBDA_1;
            let rel = |measured: f64| {
                if expected.abs() < 1e-12 {
                    (measured - expected).abs()
                } else {
                    ((measured - expected) / expected).abs()
                }
            };
            let agreement =
                !riccati_solved && rel(gm.zero_feedback) <= 0.02 && rel(gm.random_feedback) <= 0.02;
            Ok(CrossCheckReport {
                verdict,
                riccati_solved,
                monodromy_radius: None,
                fitted_rate: None,
                growth_expected: Some(expected),
                growth_measured_zero: Some(gm.zero_feedback),
                growth_measured_random: Some(gm.random_feedback),
                agreement,
            })
        }
    }
}

struct ModeGrowth {
    zero_feedback: f64,
    random_feedback: f64,
}

/// Measures the free growth rate of the unreachable mode seeded at the
/// first sine mode, via the amplitude along a left eigenvector of the
/// unreachable block (a feedback-invariant coordinate).
fn uncontrolled_mode_growth(
    cfg: &HeatConfig,
    sched: &PeriodicSchedule,
    sys: &ImpulseSystem,
    dcat: &DMatrix<f64>,
    lambda0: Complex64,
    rank_tol: f64,
) -> Result<ModeGrowth> {
    let n = cfg.components;
    let dec = kalman_decomposition(&cfg.coupling, dcat, rank_tol)?;
    if dec.fully_controllable {
        return Err(Error::Numeric(
            "cross-check expected an unreachable block but found none".into(),
        ));
    }
    let n1 = dec.controllable_dim;
    let n2 = n - n1;
    // Right eigenvector of the unreachable block at the witness eigenvalue.
    let xi = complex_null_vector(&complex_shift(&dec.s3, lambda0))
        .ok_or_else(|| Error::Numeric("no eigenvector at the witness eigenvalue".into()))?;
    // Left eigenvector: eta^H S3 = lambda0 eta^H.
    let eta_bar = complex_null_vector(&complex_shift(&dec.s3.transpose(), lambda0))
        .ok_or_else(|| Error::Numeric("no left eigenvector at the witness eigenvalue".into()))?;
    let eta: DVector<Complex64> = eta_bar.map(|z| z.conj());

    // Seed the lower block with the best real slice of xi.
    let re: DVector<f64> = xi.map(|z| z.re);
    let im: DVector<f64> = xi.map(|z| z.im);
    let amp = |v: &DVector<f64>| -> f64 {
        v.iter()
            .zip(eta.iter())
            .map(|(&x, e)| e.conj() * Complex64::new(x, 0.0))
            .sum::<Complex64>()
            .norm()
    };
    let lower_seed = if amp(&re) >= amp(&im) { re } else { im };
    let mut block = DVector::zeros(n);
    let full_lower = dec.basis.columns(n1, n2) * &lower_seed;
    block += full_lower;
    // Place the block at the first sine mode.
    let mut x0 = DVector::zeros(sys.state_dim());
    x0.rows_mut(0, n).copy_from(&block);
    let norm = x0.norm();
    if norm == 0.0 {
        return Err(Error::Numeric("mode seed collapsed to zero".into()));
    }
    x0 /= norm;

    // Enough periods to span ten time units.
    let periods = ((10.0 / sched.period()).ceil() as usize).max(2);
    let measure = |feedback: &FeedbackLaw| -> Result<f64> {
        let traj = simulate_closed_loop(sys, feedback, &x0, periods)?;
        let mut ts = Vec::new();
        let mut logs = Vec::new();
        for j in 1..=traj.len() {
            let state = traj.pre(j);
            let mode1: DVector<f64> = state.rows(0, n).into();
            let lower = dec.basis.columns(n1, n2).transpose() * mode1;
            let c = lower
                .iter()
                .zip(eta.iter())
                .map(|(&x, e)| e.conj() * Complex64::new(x, 0.0))
                .sum::<Complex64>()
                .norm();
            if c <= 0.0 {
                break;
            }
            ts.push(traj.time(j));
            logs.push(c.ln());
        }
        if ts.len() < 2 {
            return Err(Error::Numeric("mode amplitude vanished during measurement".into()));
        }
        let nn = ts.len() as f64;
        let mt = ts.iter().sum::<f64>() / nn;
        let my = logs.iter().sum::<f64>() / nn;
        let mut sxx = 0.0;
        let mut sxy = 0.0;
        for (t, y) in ts.iter().zip(logs.iter()) {
            sxx += (t - mt) * (t - mt);
            sxy += (t - mt) * (y - my);
        }
        Ok(sxy / sxx)
    };

    let zero_feedback = measure(&FeedbackLaw::zero(sys))?;
    let mut rng = ChaCha8Rng::seed_from_u64(0x9e3779b9);
    let gains = (0..sys.slots())
        .map(|_| {
            DMatrix::from_fn(sys.input_dim(), sys.state_dim(), |_, _| rng.random_range(-0.5..0.5))
        })
        .collect();
    let random_feedback = measure(&FeedbackLaw::new(gains)?)?;
    Ok(ModeGrowth { zero_feedback, random_feedback })
}

fn complex_shift(m: &DMatrix<f64>, lambda: Complex64) -> DMatrix<Complex64> {
    let k = m.nrows();
    let mut out = DMatrix::from_fn(k, k, |r, c| Complex64::new(m[(r, c)], 0.0));
    for i in 0..k {
        out[(i, i)] -= lambda;
    }
    out
}

fn complex_null_vector(m: &DMatrix<Complex64>) -> Option<DVector<Complex64>> {
    let svd = m.clone().svd(false, true);
    let vt = svd.v_t?;
    let idx = vt.nrows() - 1;
    let row = vt.row(idx);
    Some(row.transpose().map(|z| z.conj()))
}
