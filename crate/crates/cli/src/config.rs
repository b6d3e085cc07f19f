//! JSON run configuration: explicit dimensions, matrices as row-major flat
//! arrays, one document per run.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use impstab::heat::HeatConfig;
use impstab::model::{FeedbackLaw, ImpulseSystem, PeriodicSchedule};
use impstab::riccati::CostWeights;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProblemKind {
    Abstract,
    Heat,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AbstractSystemConfig {
    pub state_dim: usize,
    pub input_dim: usize,
    /// Impulse instants of one period, strictly increasing.
    pub times: Vec<f64>,
    /// One row-major `state_dim x state_dim` matrix per slot.
    pub flows: Vec<Vec<f64>>,
    /// One row-major `state_dim x input_dim` matrix per slot.
    pub inputs: Vec<Vec<f64>>,
    /// Optional explicit feedback gains, row-major `input_dim x state_dim`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feedback: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HeatSystemConfig {
    pub components: usize,
    pub input_count: usize,
    pub modes: usize,
    /// Row-major `components x components` coupling matrix.
    pub coupling: Vec<f64>,
    /// One row-major `components x input_count` matrix per slot.
    pub inputs: Vec<Vec<f64>>,
    /// One `(a, b)` window per slot, inside `(0, pi)`.
    pub windows: Vec<(f64, f64)>,
    pub times: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WeightSpec {
    Scalar(f64),
    /// One row-major matrix per slot.
    PerSlot(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeightsConfig {
    pub q: WeightSpec,
    pub r: WeightSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_margin: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_margin: Option<f64>,
}

fn default_tol() -> f64 {
    1e-10
}
fn default_max_periods() -> usize {
    10_000
}
fn default_rank_threshold() -> f64 {
    1e-10
}
fn default_k_max() -> usize {
    8
}
fn default_seed() -> u64 {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverConfig {
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_periods")]
    pub max_periods: usize,
    #[serde(default = "default_rank_threshold")]
    pub rank_threshold: f64,
    #[serde(default = "default_k_max")]
    pub k_max: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: default_tol(),
            max_periods: default_max_periods(),
            rank_threshold: default_rank_threshold(),
            k_max: default_k_max(),
            seed: default_seed(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct TaskConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    /// Observability horizon in impulse slots.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon_slots: Option<usize>,
    /// Steering horizon in whole periods.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steer_periods: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<String>,
    /// Observation range: "include-final" or "exclude-final".
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub range: Option<String>,
    #[serde(default)]
    pub steer: bool,
    /// Simulation length in periods.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub periods: Option<usize>,
    #[serde(default)]
    pub cross_check: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BatterySection {
    pub count: usize,
    #[serde(default = "default_battery_dim")]
    pub max_state_dim: usize,
    #[serde(default = "default_battery_input")]
    pub max_input_dim: usize,
}

fn default_battery_dim() -> usize {
    4
}
fn default_battery_input() -> usize {
    2
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub problem: ProblemKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system: Option<AbstractSystemConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heat: Option<HeatSystemConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<WeightsConfig>,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub task: TaskConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub battery: Option<BatterySection>,
}

pub fn matrix_from_flat(rows: usize, cols: usize, data: &[f64], what: &str) -> Result<DMatrix<f64>, String> {
    if data.len() != rows * cols {
        return Err(format!(
            "{what}: expected {rows}x{cols} = {} entries, got {}",
            rows * cols,
            data.len()
        ));
    }
    Ok(DMatrix::from_row_slice(rows, cols, data))
}

impl RunConfig {
    pub fn build_system(&self) -> Result<ImpulseSystem, String> {
        match self.problem {
            ProblemKind::Abstract => {
                let sc = self
                    .system
                    .as_ref()
                    .ok_or("abstract problem needs a 'system' section")?;
                let sched =
                    PeriodicSchedule::new(sc.times.clone()).map_err(|e| e.to_string())?;
                let flows = sc
                    .flows
                    .iter()
                    .map(|f| matrix_from_flat(sc.state_dim, sc.state_dim, f, "flow"))
                    .collect::<Result<Vec<_>, _>>()?;
                let inputs = sc
                    .inputs
                    .iter()
                    .map(|b| matrix_from_flat(sc.state_dim, sc.input_dim, b, "input"))
                    .collect::<Result<Vec<_>, _>>()?;
                ImpulseSystem::new(sched, flows, inputs).map_err(|e| e.to_string())
            }
            ProblemKind::Heat => {
                let (cfg, sched) = self.build_heat()?;
                impstab::heat::build_heat_system(&cfg, &sched).map_err(|e| e.to_string())
            }
        }
    }

    pub fn build_heat(&self) -> Result<(HeatConfig, PeriodicSchedule), String> {
        let hc = self.heat.as_ref().ok_or("heat problem needs a 'heat' section")?;
        let coupling =
            matrix_from_flat(hc.components, hc.components, &hc.coupling, "coupling")?;
        let inputs = hc
            .inputs
            .iter()
            .map(|d| matrix_from_flat(hc.components, hc.input_count, d, "heat input"))
            .collect::<Result<Vec<_>, _>>()?;
        let cfg = HeatConfig::new(coupling, inputs, hc.windows.clone(), hc.modes)
            .map_err(|e| e.to_string())?;
        let sched = PeriodicSchedule::new(hc.times.clone()).map_err(|e| e.to_string())?;
        Ok((cfg, sched))
    }

    pub fn build_weights(&self, sys: &ImpulseSystem) -> Result<CostWeights, String> {
        let (q_spec, r_spec, qm, rm) = match &self.weights {
            Some(w) => (w.q.clone(), w.r.clone(), w.q_margin, w.r_margin),
            None => (WeightSpec::Scalar(1.0), WeightSpec::Scalar(1.0), None, None),
        };
        let d = sys.state_dim();
        let m = sys.input_dim();
        let expand = |spec: &WeightSpec, dim: usize, what: &str| -> Result<(Vec<DMatrix<f64>>, f64), String> {
            match spec {
                WeightSpec::Scalar(v) => {
                    if *v <= 0.0 {
                        return Err(format!("{what}: scalar weight must be positive"));
                    }
                    Ok((
                        (0..sys.slots()).map(|_| DMatrix::identity(dim, dim) * *v).collect(),
                        *v,
                    ))
                }
                WeightSpec::PerSlot(mats) => {
                    if mats.len() != sys.slots() {
                        return Err(format!("{what}: need one matrix per slot"));
                    }
                    let ms = mats
                        .iter()
                        .map(|f| matrix_from_flat(dim, dim, f, what))
                        .collect::<Result<Vec<_>, _>>()?;
                    // Conservative margin: the smallest eigenvalue across slots.
                    let margin = ms
                        .iter()
                        .map(impstab::linalg::eig_min_symmetric)
                        .fold(f64::INFINITY, f64::min);
                    Ok((ms, margin.max(0.0)))
                }
            }
        };
        let (q, q_auto) = expand(&q_spec, d, "q")?;
        let (r, r_auto) = expand(&r_spec, m, "r")?;
        CostWeights::new(q, r, qm.unwrap_or(q_auto), rm.unwrap_or(r_auto))
            .map_err(|e| e.to_string())
    }

    pub fn build_feedback(&self, sys: &ImpulseSystem) -> Result<Option<FeedbackLaw>, String> {
        let Some(sc) = self.system.as_ref() else { return Ok(None) };
        let Some(raw) = sc.feedback.as_ref() else { return Ok(None) };
        let gains = raw
            .iter()
            .map(|g| matrix_from_flat(sys.input_dim(), sys.state_dim(), g, "feedback gain"))
            .collect::<Result<Vec<_>, _>>()?;
        FeedbackLaw::new(gains).map(Some).map_err(|e| e.to_string())
    }
}
