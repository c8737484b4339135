//! Minimal end-to-end use of the library: decompose a graph, optimize the
//! activation probabilities and mixing weight for a communication budget,
//! then simulate decentralized SGD and print a few metrics.

use matcha_core::budget::{optimize_probabilities, OptimizerSettings};
use matcha_core::graph::generate_erdos_renyi;
use matcha_core::matching::decompose;
use matcha_core::mixing::{optimize_alpha, DEFAULT_ALPHA_TOLERANCE};
use matcha_core::objective::{Objective, QuadraticConfig, QuadraticObjective};
use matcha_core::schedule::{generate_schedule, CommTimeModel, Policy};
use matcha_core::sgd::{run, RunConfig, TrainState};
use ndarray::Array1;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let topology = generate_erdos_renyi(8, 0.5, 42, true)?;
    let decomposition = decompose(&topology);
    println!(
        "graph: m={} |E|={} max_degree={} -> M={} matchings",
        topology.node_count(),
        topology.edge_count(),
        topology.max_degree(),
        decomposition.matching_count()
    );

    let budget = 0.5;
    let plan = optimize_probabilities(&decomposition, budget, &OptimizerSettings::default())?;
    let mixing = optimize_alpha(&decomposition, &plan, DEFAULT_ALPHA_TOLERANCE)?;
    println!(
        "C_b={budget}: lambda2={:.4} alpha={:.4} rho={:.4} expected comm/iter={:.3}",
        plan.lambda2, mixing.alpha, mixing.rho, plan.expected_comm_time
    );

    let iterations = 2000;
    let schedule = generate_schedule(
        Policy::Matcha,
        &decomposition,
        Some(&plan),
        &mixing,
        iterations,
        7,
    )?;
    let objective = QuadraticObjective::new(QuadraticConfig {
        workers: topology.node_count(),
        ..QuadraticConfig::default()
    });
    let eta = (topology.node_count() as f64 / iterations as f64).sqrt();
    let metrics = run(RunConfig {
        schedule: &schedule,
        objective: &objective,
        eta,
        run_seed: 1,
        comm_model: CommTimeModel::default(),
        log_interval: 500,
        initial: TrainState::broadcast(
            &Array1::zeros(objective.dimension()),
            topology.node_count(),
        ),
    })?;
    for record in &metrics.records {
        println!(
            "k={:5}  time={:8.1}  loss={:.5}  |grad|^2={:.2e}  consensus={:.2e}",
            record.iteration,
            record.sim_time,
            record.loss_avg_model,
            record.grad_norm_sq,
            record.consensus_sq
        );
    }
    println!(
        "total comm time {:.0} (full-communication schedule would be {})",
        metrics.total_comm_time,
        iterations * decomposition.matching_count()
    );
    Ok(())
}
