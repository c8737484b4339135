//! Experiment configuration: one JSON document drives a whole training
//! sweep. Flags may override the output directory and the seed list;
//! everything else lives in the file so runs are diffable and replayable.

use matcha_core::graph::{generate_erdos_renyi, generate_geometric, Topology};
use matcha_core::objective::{
    LogisticConfig, LogisticObjective, Objective, QuadraticConfig, QuadraticObjective,
};
use matcha_core::schedule::Policy;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum GraphSource {
    File {
        path: String,
    },
    ErdosRenyi {
        nodes: usize,
        edge_prob: f64,
        seed: u64,
        #[serde(default = "default_true")]
        require_connected: bool,
    },
    Geometric {
        nodes: usize,
        radius: f64,
        seed: u64,
        #[serde(default = "default_true")]
        require_connected: bool,
    },
}

fn default_true() -> bool {
    true
}

impl GraphSource {
    pub fn build(&self, base_dir: &Path) -> anyhow::Result<Topology> {
        match self {
            GraphSource::File { path } => {
                let resolved = base_dir.join(path);
                let text = std::fs::read_to_string(&resolved)
                    .map_err(|e| anyhow::anyhow!("reading graph {}: {e}", resolved.display()))?;
                Ok(Topology::from_json_str(&text)?)
            }
            GraphSource::ErdosRenyi {
                nodes,
                edge_prob,
                seed,
                require_connected,
            } => Ok(generate_erdos_renyi(
                *nodes,
                *edge_prob,
                *seed,
                *require_connected,
            )?),
            GraphSource::Geometric {
                nodes,
                radius,
                seed,
                require_connected,
            } => Ok(generate_geometric(
                *nodes,
                *radius,
                *seed,
                *require_connected,
            )?),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObjectiveSpec {
    Quadratic {
        #[serde(default = "default_dimension")]
        dimension: usize,
        #[serde(default = "default_lipschitz")]
        lipschitz: f64,
        #[serde(default = "default_strong_convexity")]
        strong_convexity: f64,
        #[serde(default = "default_one")]
        heterogeneity: f64,
        #[serde(default = "default_one")]
        noise_sigma: f64,
        #[serde(default = "default_one")]
        optimum_shift: f64,
        #[serde(default)]
        seed: u64,
    },
    Logistic {
        #[serde(default = "default_dimension")]
        dimension: usize,
        #[serde(default = "default_samples")]
        samples_per_worker: usize,
        #[serde(default = "default_batch")]
        batch_size: usize,
        #[serde(default = "default_skew")]
        label_skew: f64,
        #[serde(default = "default_separation")]
        separation: f64,
        #[serde(default = "default_regularization")]
        regularization: f64,
        #[serde(default)]
        seed: u64,
    },
}

fn default_dimension() -> usize {
    10
}
fn default_lipschitz() -> f64 {
    0.5
}
fn default_strong_convexity() -> f64 {
    0.2
}
fn default_one() -> f64 {
    1.0
}
fn default_samples() -> usize {
    200
}
fn default_batch() -> usize {
    16
}
fn default_skew() -> f64 {
    0.8
}
fn default_separation() -> f64 {
    1.5
}
fn default_regularization() -> f64 {
    1e-3
}

impl ObjectiveSpec {
    pub fn build(&self, workers: usize) -> Box<dyn Objective> {
        match self {
            ObjectiveSpec::Quadratic {
                dimension,
                lipschitz,
                strong_convexity,
                heterogeneity,
                noise_sigma,
                optimum_shift,
                seed,
            } => Box::new(QuadraticObjective::new(QuadraticConfig {
                workers,
                dimension: *dimension,
                lipschitz: *lipschitz,
                strong_convexity: *strong_convexity,
                heterogeneity: *heterogeneity,
                noise_sigma: *noise_sigma,
                optimum_shift: *optimum_shift,
                seed: *seed,
            })),
            ObjectiveSpec::Logistic {
                dimension,
                samples_per_worker,
                batch_size,
                label_skew,
                separation,
                regularization,
                seed,
            } => Box::new(LogisticObjective::new(LogisticConfig {
                workers,
                dimension: *dimension,
                samples_per_worker: *samples_per_worker,
                batch_size: *batch_size,
                label_skew: *label_skew,
                separation: *separation,
                regularization: *regularization,
                seed: *seed,
            })),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeModelSpec {
    #[serde(default = "default_one")]
    pub t_link: f64,
    #[serde(default)]
    pub t_comp: f64,
}

impl Default for TimeModelSpec {
    fn default() -> Self {
        Self {
            t_link: 1.0,
            t_comp: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicySpec {
    Matcha,
    Vanilla,
    Periodic,
}

impl From<PolicySpec> for Policy {
    fn from(p: PolicySpec) -> Policy {
        match p {
            PolicySpec::Matcha => Policy::Matcha,
            PolicySpec::Vanilla => Policy::Vanilla,
            PolicySpec::Periodic => Policy::Periodic,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub graph: GraphSource,
    pub budgets: Vec<f64>,
    pub policies: Vec<PolicySpec>,
    pub iterations: usize,
    /// Constant learning rate; omit (or null) for the theory rate √(m/K).
    #[serde(default)]
    pub eta: Option<f64>,
    pub objective: ObjectiveSpec,
    #[serde(default)]
    pub comm_model: TimeModelSpec,
    pub seeds: Vec<u64>,
    pub out_dir: String,
    #[serde(default = "default_log_interval")]
    pub log_interval: usize,
}

fn default_log_interval() -> usize {
    10
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| anyhow::anyhow!("reading config {}: {e}", path.display()))?;
        let config: ExperimentConfig = serde_json::from_str(&text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.iterations == 0 {
            anyhow::bail!("iterations must be at least 1");
        }
        if self.seeds.is_empty() {
            anyhow::bail!("at least one seed is required");
        }
        if self.policies.is_empty() {
            anyhow::bail!("at least one policy is required");
        }
        let needs_budget = self
            .policies
            .iter()
            .any(|p| !matches!(p, PolicySpec::Vanilla));
        if needs_budget && self.budgets.is_empty() {
            anyhow::bail!("budgets are required unless only the vanilla policy runs");
        }
        for &b in &self.budgets {
            if !(b > 0.0 && b <= 1.0) {
                anyhow::bail!("budget {b} outside (0, 1]");
            }
        }
        if let Some(eta) = self.eta {
            if !(eta > 0.0 && eta.is_finite()) {
                anyhow::bail!("eta must be positive and finite, got {eta}");
            }
        }
        if self.comm_model.t_link < 0.0 || self.comm_model.t_comp < 0.0 {
            anyhow::bail!("time model entries must be nonnegative");
        }
        if self.log_interval == 0 {
            anyhow::bail!("log_interval must be at least 1");
        }
        Ok(())
    }

    /// The learning rate actually used for a run.
    pub fn learning_rate(&self, workers: usize) -> f64 {
        self.eta
            .unwrap_or_else(|| (workers as f64 / self.iterations as f64).sqrt())
    }
}
