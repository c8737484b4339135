//! The four subcommands: decomposition reports, spectral-norm budget
//! sweeps, training sweeps, and time-to-target comparison.
//!
//! All outputs are plain CSV/JSON with frozen column contracts, written
//! in one deterministic pass so identical configurations produce
//! byte-identical files.

use crate::config::{ExperimentConfig, PolicySpec};
use matcha_core::budget::{optimize_probabilities, ActivationPlan, OptimizerSettings};
use matcha_core::graph::Topology;
use matcha_core::matching::{decompose, MatchingDecomposition};
use matcha_core::mixing::{
    optimize_alpha, optimize_alpha_from_moments, MixingMoments, MixingParams,
    DEFAULT_ALPHA_TOLERANCE,
};
use matcha_core::rng::derive_seed;
use matcha_core::schedule::{generate_schedule, CommTimeModel, Policy};
use matcha_core::sgd::{run, RunConfig, RunMetrics, TrainState};
use ndarray::Array1;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// Failure classes map to the process exit codes: configuration and input
/// problems exit 2, numerical failures exit 3.
#[derive(Debug)]
pub enum CliFailure {
    Config(anyhow::Error),
    Numerical(anyhow::Error),
}

impl CliFailure {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliFailure::Config(_) => 2,
            CliFailure::Numerical(_) => 3,
        }
    }

    pub fn message(&self) -> String {
        match self {
            CliFailure::Config(e) => format!("invalid config: {e:#}"),
            CliFailure::Numerical(e) => format!("numerical failure: {e:#}"),
        }
    }
}

type CliResult<T> = Result<T, CliFailure>;

fn config_err<E: Into<anyhow::Error>>(e: E) -> CliFailure {
    CliFailure::Config(e.into())
}

fn numerical_err<E: Into<anyhow::Error>>(e: E) -> CliFailure {
    CliFailure::Numerical(e.into())
}

fn read_graph(path: &Path) -> CliResult<Topology> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| config_err(anyhow::anyhow!("reading graph {}: {e}", path.display())))?;
    Topology::from_json_str(&text).map_err(config_err)
}

fn write_file(path: &Path, contents: &str) -> CliResult<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)
            .map_err(|e| config_err(anyhow::anyhow!("creating {}: {e}", parent.display())))?;
    }
    std::fs::write(path, contents)
        .map_err(|e| config_err(anyhow::anyhow!("writing {}: {e}", path.display())))
}

// ---------------------------------------------------------------------------
// decompose
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct DecompositionSummary {
    nodes: usize,
    edges: usize,
    max_degree: usize,
    matchings: usize,
    connected: bool,
}

pub fn cmd_decompose(graph_path: &Path, out_dir: &Path) -> CliResult<()> {
    let topology = read_graph(graph_path)?;
    if !topology.is_connected() {
        eprintln!("warning: graph is disconnected; decomposition emitted anyway");
    }
    let decomposition = decompose(&topology);
    decomposition.validate().map_err(numerical_err)?;
    let summary = DecompositionSummary {
        nodes: topology.node_count(),
        edges: topology.edge_count(),
        max_degree: topology.max_degree(),
        matchings: decomposition.matching_count(),
        connected: topology.is_connected(),
    };
    write_file(
        &out_dir.join("decomposition.json"),
        &decomposition.to_json_string(),
    )?;
    write_file(
        &out_dir.join("summary.json"),
        &serde_json::to_string_pretty(&summary).expect("summary serializes"),
    )?;
    println!(
        "m={} |E|={} max_degree={} M={}",
        summary.nodes, summary.edges, summary.max_degree, summary.matchings
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

/// Spectral norms for the three policies at each budget. The full-budget
/// value is repeated in every row for reference.
pub fn cmd_sweep(graph_path: &Path, budgets: &[f64], out_dir: &Path) -> CliResult<PathBuf> {
    let topology = read_graph(graph_path)?;
    if !topology.is_connected() {
        return Err(config_err(anyhow::anyhow!("sweep needs a connected graph")));
    }
    if budgets.is_empty() {
        return Err(config_err(anyhow::anyhow!("no budgets given")));
    }
    for &b in budgets {
        if !(b > 0.0 && b <= 1.0) {
            return Err(config_err(anyhow::anyhow!("budget {b} outside (0, 1]")));
        }
    }
    let decomposition = decompose(&topology);
    let laplacian = topology.laplacian();
    let vanilla =
        optimize_alpha_from_moments(&MixingMoments::vanilla(&laplacian), DEFAULT_ALPHA_TOLERANCE)
            .map_err(numerical_err)?;

    let mut csv = String::from("C_b,lambda2,alpha,rho_matcha,rho_periodic,rho_vanilla,sum_p\n");
    for &budget in budgets {
        let plan = optimize_probabilities(&decomposition, budget, &OptimizerSettings::default())
            .map_err(numerical_err)?;
        let matcha = optimize_alpha(&decomposition, &plan, DEFAULT_ALPHA_TOLERANCE)
            .map_err(numerical_err)?;
        let periodic = optimize_alpha_from_moments(
            &MixingMoments::periodic(&laplacian, budget),
            DEFAULT_ALPHA_TOLERANCE,
        )
        .map_err(numerical_err)?;
        writeln!(
            csv,
            "{},{},{},{},{},{},{}",
            budget,
            plan.lambda2,
            matcha.alpha,
            matcha.rho,
            periodic.rho,
            vanilla.rho,
            plan.expected_comm_time
        )
        .expect("string write");
    }
    let path = out_dir.join("sweep.csv");
    write_file(&path, &csv)?;
    println!("wrote {} ({} budgets)", path.display(), budgets.len());
    Ok(path)
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
pub struct RunRecord {
    pub policy: PolicySpec,
    #[serde(rename = "C_b")]
    pub budget: f64,
    pub seed: u64,
    pub eta: f64,
    pub iterations: usize,
    pub metrics_path: String,
    pub final_loss: f64,
    pub total_comm_time: f64,
    pub rho: f64,
    pub alpha: f64,
    pub lambda2: f64,
    pub expected_comm_time: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub nodes: usize,
    pub edges: usize,
    pub max_degree: usize,
    pub matchings: usize,
    pub config: ExperimentConfig,
    pub runs: Vec<RunRecord>,
}

struct PreparedPolicy {
    policy: Policy,
    spec: PolicySpec,
    budget: f64,
    plan: Option<ActivationPlan>,
    mixing: MixingParams,
}

/// Optimize the plan and mixing weight for one (policy, budget) cell.
fn prepare_policy(
    decomposition: &MatchingDecomposition,
    spec: PolicySpec,
    budget: f64,
) -> CliResult<PreparedPolicy> {
    let laplacian = decomposition.base().laplacian();
    let single_node = decomposition.node_count() <= 1;
    let (plan, mixing) = match spec {
        PolicySpec::Matcha => {
            let plan = optimize_probabilities(decomposition, budget, &OptimizerSettings::default())
                .map_err(numerical_err)?;
            let mixing = if single_node {
                MixingParams::at_alpha(MixingMoments::vanilla(&laplacian), 0.0)
            } else {
                optimize_alpha(decomposition, &plan, DEFAULT_ALPHA_TOLERANCE)
                    .map_err(numerical_err)?
            };
            (Some(plan), mixing)
        }
        PolicySpec::Vanilla => {
            let mixing = if single_node {
                MixingParams::at_alpha(MixingMoments::vanilla(&laplacian), 0.0)
            } else {
                optimize_alpha_from_moments(
                    &MixingMoments::vanilla(&laplacian),
                    DEFAULT_ALPHA_TOLERANCE,
                )
                .map_err(numerical_err)?
            };
            (None, mixing)
        }
        PolicySpec::Periodic => {
            // The plan for the periodic baseline is the scalar budget on
            // every matching; its mixing weight comes from the whole-graph
            // Bernoulli moments.
            let m = decomposition.matching_count();
            let plan = ActivationPlan {
                budget,
                probabilities: vec![budget; m],
                lambda2: 0.0,
                expected_comm_time: budget * m as f64,
            };
            let mixing = if single_node {
                MixingParams::at_alpha(MixingMoments::vanilla(&laplacian), 0.0)
            } else {
                optimize_alpha_from_moments(
                    &MixingMoments::periodic(&laplacian, budget),
                    DEFAULT_ALPHA_TOLERANCE,
                )
                .map_err(numerical_err)?
            };
            (Some(plan), mixing)
        }
    };
    Ok(PreparedPolicy {
        policy: spec.into(),
        spec,
        budget: if spec == PolicySpec::Vanilla {
            1.0
        } else {
            budget
        },
        plan,
        mixing,
    })
}

fn metrics_csv(metrics: &RunMetrics, policy: PolicySpec, budget: f64, seed: u64) -> String {
    let policy = match policy {
        PolicySpec::Matcha => "matcha",
        PolicySpec::Vanilla => "vanilla",
        PolicySpec::Periodic => "periodic",
    };
    let mut csv = String::from(
        "k,sim_time,loss_avg_model,grad_norm_sq,consensus_sq,comm_time_iter,policy,C_b,seed\n",
    );
    for r in &metrics.records {
        writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{}",
            r.iteration,
            r.sim_time,
            r.loss_avg_model,
            r.grad_norm_sq,
            r.consensus_sq,
            r.comm_time_iter,
            policy,
            budget,
            seed
        )
        .expect("string write");
    }
    csv
}

/// Run the full pipeline (decompose → optimize probabilities → optimize
/// mixing weight → schedule → simulate) for every (policy, budget, seed)
/// combination, writing one metrics CSV per run plus a manifest.
pub fn cmd_train(config: &ExperimentConfig, base_dir: &Path) -> CliResult<PathBuf> {
    config.validate().map_err(CliFailure::Config)?;
    let topology = config.graph.build(base_dir).map_err(CliFailure::Config)?;
    let workers = topology.node_count();
    let decomposition = decompose(&topology);
    let objective = config.objective.build(workers);
    let eta = config.learning_rate(workers);
    let comm_model = CommTimeModel {
        t_link: config.comm_model.t_link,
        t_comp: config.comm_model.t_comp,
    };
    let out_dir = base_dir.join(&config.out_dir);

    let mut runs = Vec::new();
    for &policy_spec in &config.policies {
        let budgets: Vec<f64> = if policy_spec == PolicySpec::Vanilla {
            vec![1.0]
        } else {
            config.budgets.clone()
        };
        for budget in budgets {
            let prepared = prepare_policy(&decomposition, policy_spec, budget)?;
            for &seed in &config.seeds {
                let schedule_seed = derive_seed(
                    seed,
                    &[
                        match prepared.policy {
                            Policy::Matcha => 1,
                            Policy::Vanilla => 2,
                            Policy::Periodic => 3,
                        },
                        prepared.budget.to_bits(),
                    ],
                );
                let schedule = generate_schedule(
                    prepared.policy,
                    &decomposition,
                    prepared.plan.as_ref(),
                    &prepared.mixing,
                    config.iterations,
                    schedule_seed,
                )
                .map_err(numerical_err)?;
                let metrics = run(RunConfig {
                    schedule: &schedule,
                    objective: objective.as_ref(),
                    eta,
                    run_seed: seed,
                    comm_model,
                    log_interval: config.log_interval,
                    initial: TrainState::broadcast(&Array1::zeros(objective.dimension()), workers),
                })
                .map_err(numerical_err)?;

                let file_name = format!(
                    "{}_cb{}_seed{}.csv",
                    prepared.spec_name(),
                    format_budget(prepared.budget),
                    seed
                );
                write_file(
                    &out_dir.join(&file_name),
                    &metrics_csv(&metrics, prepared.spec, prepared.budget, seed),
                )?;
                runs.push(RunRecord {
                    policy: prepared.spec,
                    budget: prepared.budget,
                    seed,
                    eta,
                    iterations: config.iterations,
                    metrics_path: file_name,
                    final_loss: metrics.final_loss,
                    total_comm_time: metrics.total_comm_time,
                    rho: prepared.mixing.rho,
                    alpha: prepared.mixing.alpha,
                    lambda2: prepared
                        .plan
                        .as_ref()
                        .map(|p| p.lambda2)
                        .unwrap_or(prepared.mixing.lambda2_bar),
                    expected_comm_time: prepared
                        .plan
                        .as_ref()
                        .map(|p| p.expected_comm_time)
                        .unwrap_or(decomposition.matching_count() as f64),
                });
            }
        }
    }

    let manifest = Manifest {
        nodes: topology.node_count(),
        edges: topology.edge_count(),
        max_degree: topology.max_degree(),
        matchings: decomposition.matching_count(),
        config: config.clone(),
        runs,
    };
    let manifest_path = out_dir.join("manifest.json");
    write_file(
        &manifest_path,
        &serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
    )?;
    println!(
        "wrote {} ({} runs)",
        manifest_path.display(),
        manifest.runs.len()
    );
    Ok(manifest_path)
}

impl PreparedPolicy {
    fn spec_name(&self) -> &'static str {
        match self.spec {
            PolicySpec::Matcha => "matcha",
            PolicySpec::Vanilla => "vanilla",
            PolicySpec::Periodic => "periodic",
        }
    }
}

fn format_budget(budget: f64) -> String {
    format!("{budget}").replace('.', "p")
}

// ---------------------------------------------------------------------------
// compare
// ---------------------------------------------------------------------------

/// First iteration and simulated time at which each run's averaged-model
/// loss crosses the target, with reduction ratios against the vanilla run
/// of the same seed. Runs that never reach the target are flagged, not
/// errors.
pub fn cmd_compare(manifest_path: &Path, target_loss: f64, out_dir: &Path) -> CliResult<PathBuf> {
    let text = std::fs::read_to_string(manifest_path).map_err(|e| {
        config_err(anyhow::anyhow!(
            "reading manifest {}: {e}",
            manifest_path.display()
        ))
    })?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(config_err)?;
    let run_dir = manifest_path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .to_path_buf();

    struct Crossing {
        iteration: usize,
        sim_time: f64,
    }
    let mut crossings: Vec<Option<Crossing>> = Vec::new();
    for record in &manifest.runs {
        let csv_path = run_dir.join(&record.metrics_path);
        let text = std::fs::read_to_string(&csv_path)
            .map_err(|e| config_err(anyhow::anyhow!("reading {}: {e}", csv_path.display())))?;
        let mut crossing = None;
        for line in text.lines().skip(1) {
            let mut fields = line.split(',');
            let iteration: usize = fields
                .next()
                .and_then(|f| f.parse().ok())
                .ok_or_else(|| config_err(anyhow::anyhow!("malformed metrics row: {line}")))?;
            let sim_time: f64 = fields
                .next()
                .and_then(|f| f.parse().ok())
                .ok_or_else(|| config_err(anyhow::anyhow!("malformed metrics row: {line}")))?;
            let loss: f64 = fields
                .next()
                .and_then(|f| f.parse().ok())
                .ok_or_else(|| config_err(anyhow::anyhow!("malformed metrics row: {line}")))?;
            if loss <= target_loss {
                crossing = Some(Crossing {
                    iteration,
                    sim_time,
                });
                break;
            }
        }
        crossings.push(crossing);
    }

    // Vanilla time-to-target per seed, as the ratio denominator.
    let vanilla_times: std::collections::HashMap<u64, f64> = manifest
        .runs
        .iter()
        .zip(&crossings)
        .filter(|(r, _)| matches!(r.policy, PolicySpec::Vanilla))
        .filter_map(|(r, c)| c.as_ref().map(|c| (r.seed, c.sim_time)))
        .collect();

    let mut csv = String::from(
        "policy,C_b,seed,target_loss,iterations_to_target,time_to_target,time_ratio_vs_vanilla,status\n",
    );
    for (record, crossing) in manifest.runs.iter().zip(&crossings) {
        let policy = match record.policy {
            PolicySpec::Matcha => "matcha",
            PolicySpec::Vanilla => "vanilla",
            PolicySpec::Periodic => "periodic",
        };
        match crossing {
            Some(c) => {
                let ratio = vanilla_times
                    .get(&record.seed)
                    .map(|v| format!("{}", c.sim_time / v))
                    .unwrap_or_default();
                writeln!(
                    csv,
                    "{},{},{},{},{},{},{},reached",
                    policy, record.budget, record.seed, target_loss, c.iteration, c.sim_time, ratio
                )
                .expect("string write");
            }
            None => {
                writeln!(
                    csv,
                    "{},{},{},{},,,,target_never_reached",
                    policy, record.budget, record.seed, target_loss
                )
                .expect("string write");
            }
        }
    }
    let path = out_dir.join("compare.csv");
    write_file(&path, &csv)?;
    println!("wrote {}", path.display());
    Ok(path)
}
