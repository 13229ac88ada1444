//! `report.json` and the run manifest inside it.

use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use gcomm_core::{FitConfig, FitReport, ParsedGraph};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize, Deserialize)]
pub struct InputRecord {
    pub path: String,
    pub sha256: String,
    pub nodes: usize,
    pub edges: usize,
    pub duplicate_edges: usize,
}

impl InputRecord {
    pub fn new(path: &Path, bytes: &[u8], parsed: &ParsedGraph) -> Self {
        Self {
            path: path.display().to_string(),
            sha256: hex::encode(Sha256::digest(bytes)),
            nodes: parsed.graph.n(),
            edges: parsed.graph.m(),
            duplicate_edges: parsed.duplicate_edges,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Versions {
    pub gcomm: String,
}

impl Default for Versions {
    fn default() -> Self {
        Self {
            gcomm: env!("CARGO_PKG_VERSION").to_string(),
        }
    }
}

/// Wall-clock milliseconds since the Unix epoch. The only part of an output
/// directory that differs between identical runs.
#[derive(Debug, Serialize, Deserialize)]
pub struct Timestamps {
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
}

pub fn now_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Convergence {
    pub converged: bool,
    pub outer_iterations: usize,
    /// outer iterations whose BP run hit the sweep cap
    pub bp_capped: usize,
    pub exit_status: u8,
}

/// Everything needed to rerun a fit. `--jobs` is left out on purpose since
/// it cannot change the result.
#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: FitConfig,
    pub input: InputRecord,
    pub seed: u64,
    pub versions: Versions,
    pub timestamps: Timestamps,
    pub convergence: Convergence,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Report {
    pub final_objective: f64,
    pub objective_trace: Vec<f64>,
    pub best_restart: usize,
    /// final objective of each restart; `null` when it was not finite
    pub restart_objectives: Vec<Option<f64>>,
    pub probe_used: Vec<bool>,
    pub converged: bool,
    pub manifest: RunManifest,
}

impl Report {
    pub fn new(fit: &FitReport, manifest: RunManifest) -> Self {
        Self {
            final_objective: fit.final_objective(),
            objective_trace: fit.objective_trace.clone(),
            best_restart: fit.best_restart,
            restart_objectives: fit
                .restart_objectives
                .iter()
                .map(|&x| x.is_finite().then_some(x))
                .collect(),
            probe_used: fit.probe_used.clone(),
            converged: fit.converged,
            manifest,
        }
    }
}
