//! Machine-readable result records: one JSON document per run, with a
//! deterministic body and the timing kept in a separate trailing field.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub config_digest: String,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ResultRecord {
    pub task: String,
    pub verdicts: BTreeMap<String, String>,
    pub scalars: BTreeMap<String, f64>,
    pub provenance: Provenance,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub extra: Option<serde_json::Value>,
    /// Wall-clock duration; excluded from determinism comparisons.
    pub timing_ms: f64,
}

impl ResultRecord {
    pub fn new(task: &str, digest: String, seed: u64) -> Self {
        Self {
            task: task.to_string(),
            verdicts: BTreeMap::new(),
            scalars: BTreeMap::new(),
            provenance: Provenance { config_digest: digest, seed },
            extra: None,
            timing_ms: 0.0,
        }
    }

    pub fn verdict(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.verdicts.insert(key.to_string(), value.to_string());
        self
    }

    /// Finite values land in the scalar map; non-finite ones are recorded
    /// as strings so the JSON stays lossless.
    pub fn scalar(&mut self, key: &str, value: f64) -> &mut Self {
        if value.is_finite() {
            self.scalars.insert(key.to_string(), value);
        } else {
            self.verdicts.insert(key.to_string(), value.to_string());
        }
        self
    }

    pub fn emit(&self, out: Option<&Path>) -> std::io::Result<()> {
        let json = serde_json::to_string_pretty(self).expect("record serializes");
        match out {
            Some(path) => std::fs::write(path, json + "\n"),
            None => {
                let stdout = std::io::stdout();
                let mut lock = stdout.lock();
                writeln!(lock, "{json}")
            }
        }
    }
}

/// Lowercase hex SHA-256 of the raw config bytes.
pub fn digest_bytes(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Writes the trajectory sample table: `j, t_j, norm_pre, norm_post`.
pub fn write_trajectory_csv(
    path: &Path,
    traj: &impstab::model::Trajectory,
) -> std::io::Result<()> {
    let mut out = String::from("j,t_j,norm_pre,norm_post\n");
    for j in 1..=traj.len() {
        out.push_str(&format!(
            "{},{:.17e},{:.17e},{:.17e}\n",
            j,
            traj.time(j),
            traj.norm_pre(j),
            traj.norm_post(j)
        ));
    }
    std::fs::write(path, out)
}
