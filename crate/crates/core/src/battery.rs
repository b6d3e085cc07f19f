//! Randomized cross-validation of the verdict chain: periodic Riccati
//! solvability, the weak-observability decision, and the concatenated
//! steering certificate must agree on every instance.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ImpulseSystem, PeriodicSchedule};
use crate::observability::{
    build_observability_pair, concatenated_stabilizing_control, weak_obs_minimal_c, ObsMode,
    ObsRange,
};
use crate::riccati::{periodic_riccati_solve, CostWeights, RiccatiOutcome};

/// Construction recipe for one instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stratum {
    /// Generic dense flows and inputs; stabilizable by construction.
    Controllable,
    /// An unreachable block whose period map contracts; still stabilizable.
    UncontrollableStable,
    /// An unreachable block whose period map expands; never stabilizable.
    UncontrollableUnstable,
}

impl Stratum {
    pub const ALL: [Stratum; 3] = [
        Stratum::Controllable,
        Stratum::UncontrollableStable,
        Stratum::UncontrollableUnstable,
    ];

    fn stabilizable_by_construction(&self) -> bool {
        !matches!(self, Stratum::UncontrollableUnstable)
    }
}

/// Serializable instance description for replay.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstanceSpec {
    pub stratum: Stratum,
    pub state_dim: usize,
    pub input_dim: usize,
    pub times: Vec<f64>,
    /// Row-major per slot.
    pub flows: Vec<Vec<f64>>,
    pub inputs: Vec<Vec<f64>>,
}

impl InstanceSpec {
    pub fn from_system(sys: &ImpulseSystem, stratum: Stratum) -> Self {
        let d = sys.state_dim();
        let m = sys.input_dim();
        let row_major = |mat: &DMatrix<f64>| -> Vec<f64> {
            let mut out = Vec::with_capacity(mat.nrows() * mat.ncols());
            for r in 0..mat.nrows() {
                for c in 0..mat.ncols() {
                    out.push(mat[(r, c)]);
                }
            }
            out
        };
        InstanceSpec {
            stratum,
            state_dim: d,
            input_dim: m,
            times: sys.schedule().times().to_vec(),
            flows: (1..=sys.slots()).map(|k| row_major(sys.flow(k))).collect(),
            inputs: (1..=sys.slots()).map(|k| row_major(sys.input(k))).collect(),
        }
    }

    pub fn to_system(&self) -> Result<ImpulseSystem> {
        let d = self.state_dim;
        let m = self.input_dim;
        let sched = PeriodicSchedule::new(self.times.clone())?;
        let flows = self
            .flows
            .iter()
            .map(|v| DMatrix::from_row_slice(d, d, v))
            .collect();
        let inputs = self
            .inputs
            .iter()
            .map(|v| DMatrix::from_row_slice(d, m, v))
            .collect();
        ImpulseSystem::new(sched, flows, inputs)
    }
}

/// The three verdicts and their agreement.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstanceVerdicts {
    pub riccati_stabilizable: bool,
    pub weak_obs_holds: bool,
    /// Horizon (periods) and constant the decision certified, when it did.
    pub certified: Option<(usize, f64)>,
    pub admissible_set_nonempty: bool,
    pub agree: bool,
}

/// Battery configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BatteryConfig {
    pub count: usize,
    pub max_state_dim: usize,
    pub max_input_dim: usize,
    pub seed: u64,
    pub sigma: f64,
    pub max_horizon_periods: usize,
    pub tol: f64,
}

impl Default for BatteryConfig {
    fn default() -> Self {
        Self {
            count: 50,
            max_state_dim: 4,
            max_input_dim: 2,
            seed: 1,
            sigma: 0.5,
            max_horizon_periods: 8,
            tol: 1e-10,
        }
    }
}

/// One evaluated instance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BatteryInstance {
    pub index: usize,
    pub spec: InstanceSpec,
    pub verdicts: InstanceVerdicts,
}

/// Full battery outcome.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BatteryReport {
    pub instances: Vec<BatteryInstance>,
    pub agreement_count: usize,
    pub all_agree: bool,
    /// 2x2 matrix of (riccati, weak-obs) verdict pairs: [tt, tf, ft, ff].
    pub agreement_matrix: [usize; 4],
}

fn random_orthogonal(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
    let raw = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0f64));
    raw.qr().q()
}

/// Draws one instance of the requested stratum.
pub fn generate_instance(
    stratum: Stratum,
    max_state_dim: usize,
    max_input_dim: usize,
    seed: u64,
) -> Result<ImpulseSystem> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let slots = rng.random_range(1..=2usize);
    let times: Vec<f64> = {
        let mut acc = 0.0;
        (0..slots)
            .map(|_| {
                acc += rng.random_range(0.3..1.0);
                acc
            })
            .collect()
    };
    let sched = PeriodicSchedule::new(times)?;
    let m = rng.random_range(1..=max_input_dim.max(1));
    match stratum {
        Stratum::Controllable => {
            let d = rng.random_range(1..=max_state_dim.max(1));
            let flows = (0..slots)
                .map(|_| {
                    let raw = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0f64));
                    // Mix clearly stable and clearly unstable draws.
                    let target = if rng.random_bool(0.5) {
                        rng.random_range(0.4..0.9)
                    } else {
                        rng.random_range(1.05..1.5)
                    };
                    let r = crate::linalg::spectral_radius(&raw).unwrap_or(1.0).max(1e-3);
                    raw * (target / r)
                })
                .collect();
            let inputs = (0..slots)
                .map(|_| {
                    let mut b;
                    loop {
                        b = DMatrix::from_fn(d, m, |_, _| rng.random_range(-1.0..1.0f64));
                        if b.norm() > 0.3 {
                            break;
                        }
                    }
                    b
                })
                .collect();
            ImpulseSystem::new(sched, flows, inputs)
        }
        Stratum::UncontrollableStable | Stratum::UncontrollableUnstable => {
            let d = rng.random_range(2..=max_state_dim.max(2));
            let du = 1usize; // unreachable block kept one-dimensional
            let dc = d - du;
            let basis = random_orthogonal(&mut rng, d);
            // Per-slot unreachable factors with a prescribed period product.
            let target: f64 = match stratum {
                Stratum::UncontrollableStable => rng.random_range(0.2..0.5),
                _ => rng.random_range(1.3..1.8),
            };
            let per_slot = target.powf(1.0 / slots as f64);
            let mut flows = Vec::with_capacity(slots);
            let mut inputs = Vec::with_capacity(slots);
            for _ in 0..slots {
                let a = {
                    let raw = DMatrix::from_fn(dc, dc, |_, _| rng.random_range(-1.0..1.0f64));
                    let r = crate::linalg::spectral_radius(&raw).unwrap_or(1.0).max(1e-3);
                    raw * (rng.random_range(0.5..1.2) / r)
                };
                let coupling = DMatrix::from_fn(dc, du, |_, _| rng.random_range(-0.5..0.5f64));
                let mut e = DMatrix::zeros(d, d);
                e.view_mut((0, 0), (dc, dc)).copy_from(&a);
                e.view_mut((0, dc), (dc, du)).copy_from(&coupling);
                e[(dc, dc)] = per_slot;
                let mut b = DMatrix::zeros(d, m);
                loop {
                    let bc = DMatrix::from_fn(dc, m, |_, _| rng.random_range(-1.0..1.0f64));
                    if bc.norm() > 0.3 {
                        b.view_mut((0, 0), (dc, m)).copy_from(&bc);
                        break;
                    }
                }
                flows.push(&basis * e * basis.transpose());
                inputs.push(&basis * b);
            }
            ImpulseSystem::new(sched, flows, inputs)
        }
    }
}

/// Weak-observability decision: scans horizons `1..=max_periods` periods and
/// returns the first certified `(K, C)` pair, using the sound matrix
/// certificate for positive verdicts.
pub fn weak_obs_decision(
    sys: &ImpulseSystem,
    sigma: f64,
    max_periods: usize,
) -> Result<Option<(usize, f64)>> {
    for periods in 1..=max_periods {
        let horizon = periods * sys.slots();
        let pair = build_observability_pair(sys, horizon, ObsRange::ExcludeFinal)?;
        let report = weak_obs_minimal_c(&pair, sigma, ObsMode::Sufficient)?;
        if let Some(c) = report.c {
            return Ok(Some((periods, c)));
        }
    }
    Ok(None)
}

/// Concatenated-steering certificate that the admissible set is nonempty.
pub fn admissible_set_certificate(
    sys: &ImpulseSystem,
    sigma: f64,
    periods: usize,
) -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(0xad15);
    let x0 = DVector::from_fn(sys.state_dim(), |_, _| rng.random_range(-1.0..1.0f64));
    let x0 = if x0.norm() > 0.0 { x0.clone() / x0.norm() } else { x0 };
    match concatenated_stabilizing_control(sys, &x0, periods, sigma, 1e-8, 1e-8) {
        Ok(res) => res.report.admissible_certified,
        Err(_) => false,
    }
}

/// Runs the three verdicts on one system.
pub fn instance_verdicts(sys: &ImpulseSystem, cfg: &BatteryConfig) -> Result<InstanceVerdicts> {
    let w = CostWeights::uniform(sys, 1.0, 1.0)?;
    let riccati = matches!(
        periodic_riccati_solve(sys, &w, cfg.tol, 10_000)?,
        RiccatiOutcome::Solved(_)
    );
    let certified = weak_obs_decision(sys, cfg.sigma, cfg.max_horizon_periods)?;
    let weak = certified.is_some();
    let periods = certified.map(|(k, _)| k).unwrap_or(cfg.max_horizon_periods);
    let uad = admissible_set_certificate(sys, cfg.sigma, periods);
    let agree = riccati == weak && weak == uad;
    Ok(InstanceVerdicts {
        riccati_stabilizable: riccati,
        weak_obs_holds: weak,
        certified,
        admissible_set_nonempty: uad,
        agree,
    })
}

/// Runs the battery: deterministic per-index seeds, instances evaluated in
/// parallel and reduced in index order.
pub fn run_battery(cfg: &BatteryConfig) -> Result<BatteryReport> {
    let specs: Vec<(usize, Stratum)> = (0..cfg.count)
        .map(|i| (i, Stratum::ALL[i % Stratum::ALL.len()]))
        .collect();
    let instances: Vec<Result<BatteryInstance>> = specs
        .par_iter()
        .map(|&(i, stratum)| {
            let sys = generate_instance(
                stratum,
                cfg.max_state_dim,
                cfg.max_input_dim,
                cfg.seed.wrapping_add(i as u64),
            )?;
            let verdicts = instance_verdicts(&sys, cfg)?;
            Ok(BatteryInstance {
                index: i,
                spec: InstanceSpec::from_system(&sys, stratum),
                verdicts,
            })
        })
        .collect();
    let mut out = Vec::with_capacity(cfg.count);
    for inst in instances {
        out.push(inst?);
    }
    let mut matrix = [0usize; 4];
    for inst in &out {
        let r = inst.verdicts.riccati_stabilizable;
        let w = inst.verdicts.weak_obs_holds;
        let idx = match (r, w) {
            (true, true) => 0,
            (true, false) => 1,
            (false, true) => 2,
            (false, false) => 3,
        };
        matrix[idx] += 1;
    }
    let agreement_count = out.iter().filter(|i| i.verdicts.agree).count();
    let all_agree = agreement_count == out.len();
    Ok(BatteryReport { instances: out, agreement_count, all_agree, agreement_matrix: matrix })
}

/// Sanity check used by the construction itself: the stratum's intended
/// verdict.
pub fn expected_verdict(stratum: Stratum) -> bool {
    stratum.stabilizable_by_construction()
}

impl BatteryReport {
    /// Instances whose verdicts disagree, serialized for replay.
    pub fn failing_instances(&self) -> Vec<&BatteryInstance> {
        self.instances.iter().filter(|i| !i.verdicts.agree).collect()
    }
}

/// Replays a serialized instance and recomputes its verdicts.
pub fn replay_instance(spec: &InstanceSpec, cfg: &BatteryConfig) -> Result<InstanceVerdicts> {
    let sys = spec.to_system()?;
    instance_verdicts(&sys, cfg)
}

impl std::fmt::Display for Stratum {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Stratum::Controllable => "controllable",
            Stratum::UncontrollableStable => "uncontrollable-stable",
            Stratum::UncontrollableUnstable => "uncontrollable-unstable",
        };
        write!(f, "{name}")
    }
}

impl std::str::FromStr for Stratum {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "controllable" => Ok(Stratum::Controllable),
            "uncontrollable-stable" => Ok(Stratum::UncontrollableStable),
            "uncontrollable-unstable" => Ok(Stratum::UncontrollableUnstable),
            other => Err(Error::InvalidInput(format!("unknown stratum '{other}'"))),
        }
    }
}
