//! Pre-generated random topology sequences.
//!
//! All activation randomness for a run is materialized up front from one
//! seeded stream, so a schedule can be shipped to workers before training
//! starts and any run can be replayed exactly. Draw order is pinned:
//! iteration-major, matching index ascending (one uniform per Bernoulli).
//!
//! Three policies:
//! - `Matcha`: each matching activates independently per iteration with
//!   its plan probability.
//! - `Vanilla`: every matching active every iteration (the full base
//!   graph; no randomness).
//! - `Periodic`: the whole base graph activates together with probability
//!   C_b per iteration, else nothing — the naive infrequent-sync baseline
//!   with the same expected communication time as `Matcha` at equal C_b.

use crate::budget::ActivationPlan;
use crate::matching::MatchingDecomposition;
use crate::mixing::MixingParams;
use crate::rng::SplitMix64;
use ndarray::Array2;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Policy {
    Matcha,
    Vanilla,
    Periodic,
}

impl Policy {
    pub fn as_str(&self) -> &'static str {
        match self {
            Policy::Matcha => "matcha",
            Policy::Vanilla => "vanilla",
            Policy::Periodic => "periodic",
        }
    }
}

impl std::fmt::Display for Policy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Simulated cost model: one matching round costs `t_link`, one local SGD
/// step costs `t_comp`. The linear degree-scaling rule means a full
/// consensus round over M matchings costs `M · t_link`.
#[derive(Debug, Clone, Copy)]
pub struct CommTimeModel {
    pub t_link: f64,
    pub t_comp: f64,
}

impl Default for CommTimeModel {
    fn default() -> Self {
        Self {
            t_link: 1.0,
            t_comp: 0.0,
        }
    }
}

impl CommTimeModel {
    pub fn validate(&self) -> Result<(), ScheduleError> {
        if self.t_link < 0.0 || self.t_comp < 0.0 {
            return Err(ScheduleError::InvalidTimeModel {
                t_link: self.t_link,
                t_comp: self.t_comp,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum ScheduleError {
    #[error("policy {0} needs an activation plan")]
    InvalidPolicyParams(Policy),
    #[error("plan has {plan} probabilities but the decomposition has {decomposition} matchings")]
    PlanMismatch { plan: usize, decomposition: usize },
    #[error("iteration {index} out of range for schedule of length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("time model must be nonnegative: t_link={t_link}, t_comp={t_comp}")]
    InvalidTimeModel { t_link: f64, t_comp: f64 },
}

/// A fully materialized activation sequence plus everything needed to
/// realize its mixing matrices.
#[derive(Debug, Clone)]
pub struct Schedule {
    policy: Policy,
    seed: u64,
    iterations: usize,
    alpha: f64,
    node_count: usize,
    matching_count: usize,
    laplacians: Vec<Array2<f64>>,
    base_laplacian: Array2<f64>,
    /// Row-major K×M for `Matcha`, length-K for `Periodic`, empty for
    /// `Vanilla`.
    activations: Vec<bool>,
    probabilities: Vec<f64>,
}

/// Draw the activation table for `policy` and wrap it with the mixing
/// weight α from `mixing`. `plan` is required for `Matcha` (per-matching
/// probabilities) and `Periodic` (the scalar budget); `Vanilla` ignores
/// it. Identical arguments reproduce the table bit for bit.
pub fn generate_schedule(
    policy: Policy,
    decomp: &MatchingDecomposition,
    plan: Option<&ActivationPlan>,
    mixing: &MixingParams,
    iterations: usize,
    seed: u64,
) -> Result<Schedule, ScheduleError> {
    assert!(iterations >= 1, "schedule needs at least one iteration");
    let matching_count = decomp.matching_count();
    let mut rng = SplitMix64::new(seed);
    let (activations, probabilities) = match policy {
        Policy::Matcha => {
            let plan = plan.ok_or(ScheduleError::InvalidPolicyParams(policy))?;
            if plan.probabilities.len() != matching_count {
                return Err(ScheduleError::PlanMismatch {
                    plan: plan.probabilities.len(),
                    decomposition: matching_count,
                });
            }
            let mut table = Vec::with_capacity(iterations * matching_count);
            for _ in 0..iterations {
                for &p in &plan.probabilities {
                    table.push(rng.next_f64() < p);
                }
            }
            (table, plan.probabilities.clone())
        }
        Policy::Vanilla => (Vec::new(), vec![1.0; matching_count]),
        Policy::Periodic => {
            let plan = plan.ok_or(ScheduleError::InvalidPolicyParams(policy))?;
            let budget = plan.budget;
            let table = (0..iterations).map(|_| rng.next_f64() < budget).collect();
            (table, vec![budget; matching_count])
        }
    };
    let base_laplacian = decomp.base().laplacian();
    Ok(Schedule {
        policy,
        seed,
        iterations,
        alpha: mixing.alpha,
        node_count: decomp.node_count(),
        matching_count,
        laplacians: decomp.laplacians().to_vec(),
        base_laplacian,
        activations,
        probabilities,
    })
}

impl Schedule {
    pub fn policy(&self) -> Policy {
        self.policy
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn matching_count(&self) -> usize {
        self.matching_count
    }

    fn check_index(&self, k: usize) -> Result<(), ScheduleError> {
        if k >= self.iterations {
            return Err(ScheduleError::IndexOutOfRange {
                index: k,
                len: self.iterations,
            });
        }
        Ok(())
    }

    /// Which matchings are active at iteration `k`.
    pub fn active_row(&self, k: usize) -> Result<Vec<bool>, ScheduleError> {
        self.check_index(k)?;
        Ok(match self.policy {
            Policy::Matcha => {
                self.activations[k * self.matching_count..(k + 1) * self.matching_count].to_vec()
            }
            Policy::Vanilla => vec![true; self.matching_count],
            Policy::Periodic => vec![self.activations[k]; self.matching_count],
        })
    }

    pub fn active_count_at(&self, k: usize) -> Result<usize, ScheduleError> {
        Ok(self.active_row(k)?.iter().filter(|&&a| a).count())
    }

    /// `W^(k) = I - α L^(k)`. Identity when nothing is active.
    pub fn mixing_matrix_at(&self, k: usize) -> Result<Array2<f64>, ScheduleError> {
        self.check_index(k)?;
        let mut w = Array2::<f64>::eye(self.node_count);
        match self.policy {
            Policy::Vanilla => w.scaled_add(-self.alpha, &self.base_laplacian),
            Policy::Periodic => {
                if self.activations[k] {
                    w.scaled_add(-self.alpha, &self.base_laplacian);
                }
            }
            Policy::Matcha => {
                let row = &self.activations[k * self.matching_count..(k + 1) * self.matching_count];
                for (j, &active) in row.iter().enumerate() {
                    if active {
                        w.scaled_add(-self.alpha, &self.laplacians[j]);
                    }
                }
            }
        }
        Ok(w)
    }

    /// Communication time of iteration `k`: active matchings communicate
    /// sequentially at `t_link` each.
    pub fn comm_time_at(&self, k: usize, model: &CommTimeModel) -> Result<f64, ScheduleError> {
        Ok(self.active_count_at(k)? as f64 * model.t_link)
    }

    /// Fraction of iterations each matching was active.
    pub fn empirical_activation_frequency(&self) -> Vec<f64> {
        let k = self.iterations as f64;
        (0..self.matching_count)
            .map(|j| {
                (0..self.iterations)
                    .filter(|&i| match self.policy {
                        Policy::Matcha => self.activations[i * self.matching_count + j],
                        Policy::Vanilla => true,
                        Policy::Periodic => self.activations[i],
                    })
                    .count() as f64
                    / k
            })
            .collect()
    }

    /// Compact export: enough to regenerate the table, plus a hash of the
    /// plan for audit trails.
    pub fn export_summary_json(&self) -> String {
        serde_json::to_string_pretty(&ScheduleSummary {
            policy: self.policy,
            seed: self.seed,
            iterations: self.iterations,
            alpha: self.alpha,
            matching_count: self.matching_count,
            plan_hash: format!("{:016x}", self.plan_hash()),
        })
        .expect("schedule serialization cannot fail")
    }

    /// Full activation table for audits.
    pub fn export_table_json(&self) -> String {
        let rows: Vec<Vec<bool>> = (0..self.iterations)
            .map(|k| self.active_row(k).expect("index in range"))
            .collect();
        serde_json::to_string(&rows).expect("table serialization cannot fail")
    }

    /// FNV-1a over the little-endian bytes of (α, probabilities).
    fn plan_hash(&self) -> u64 {
        let mut hash = 0xcbf2_9ce4_8422_2325u64;
        let mut eat = |bytes: [u8; 8]| {
            for b in bytes {
                hash ^= b as u64;
                hash = hash.wrapping_mul(0x0000_0100_0000_01B3);
            }
        };
        eat(self.alpha.to_le_bytes());
        for &p in &self.probabilities {
            eat(p.to_le_bytes());
        }
        hash
    }
}

#[derive(Serialize)]
struct ScheduleSummary {
    policy: Policy,
    seed: u64,
    iterations: usize,
    alpha: f64,
    matching_count: usize,
    plan_hash: String,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::budget::{optimize_probabilities, OptimizerSettings};
    use crate::eigen::{averaging_matrix, frobenius_norm};
    use crate::graph::{generate_erdos_renyi, Topology};
    use crate::matching::decompose;
    use crate::mixing::{optimize_alpha, MixingMoments, DEFAULT_ALPHA_TOLERANCE};
    use ndarray::arr2;

    fn pipeline(seed: u64, budget: f64) -> (MatchingDecomposition, ActivationPlan, MixingParams) {
        let t = generate_erdos_renyi(8, 0.5, seed, true).unwrap();
        let d = decompose(&t);
        let plan = optimize_probabilities(&d, budget, &OptimizerSettings::default()).unwrap();
        let mixing = optimize_alpha(&d, &plan, DEFAULT_ALPHA_TOLERANCE).unwrap();
        (d, plan, mixing)
    }

    #[test]
    fn full_budget_matcha_is_all_active() {
        let (d, plan, mixing) = pipeline(5, 1.0);
        let s = generate_schedule(Policy::Matcha, &d, Some(&plan), &mixing, 50, 9).unwrap();
        for k in 0..50 {
            assert_eq!(s.active_count_at(k).unwrap(), d.matching_count());
            let w = s.mixing_matrix_at(k).unwrap();
            let mut expected = Array2::<f64>::eye(8);
            expected.scaled_add(-mixing.alpha, &d.base().laplacian());
            assert!(frobenius_norm(&(&w - &expected)) < 1e-12);
        }
    }

    #[test]
    fn identical_seeds_reproduce_tables() {
        let (d, plan, mixing) = pipeline(6, 0.4);
        let a = generate_schedule(Policy::Matcha, &d, Some(&plan), &mixing, 1000, 42).unwrap();
        let b = generate_schedule(Policy::Matcha, &d, Some(&plan), &mixing, 1000, 42).unwrap();
        assert_eq!(a.activations, b.activations);
        let c = generate_schedule(Policy::Matcha, &d, Some(&plan), &mixing, 1000, 43).unwrap();
        assert_ne!(a.activations, c.activations);
    }

    #[test]
    fn empirical_frequency_concentrates() {
        let (d, plan, mixing) = pipeline(7, 0.5);
        let iterations = 100_000;
        let s = generate_schedule(Policy::Matcha, &d, Some(&plan), &mixing, iterations, 3).unwrap();
        let freq = s.empirical_activation_frequency();
        for (j, (&f, &p)) in freq.iter().zip(&plan.probabilities).enumerate() {
            let band = 4.0 * (p * (1.0 - p) / iterations as f64).sqrt();
            assert!((f - p).abs() <= band + 1e-12, "matching {j}: {f} vs {p}");
        }
    }

    #[test]
    fn expected_comm_time_matches_probability_sum() {
        let (d, plan, mixing) = pipeline(8, 0.3);
        let iterations = 100_000;
        let s =
            generate_schedule(Policy::Matcha, &d, Some(&plan), &mixing, iterations, 17).unwrap();
        let model = CommTimeModel::default();
        let total: f64 = (0..iterations)
            .map(|k| s.comm_time_at(k, &model).unwrap())
            .sum();
        let mean = total / iterations as f64;
        let target: f64 = plan.probabilities.iter().sum();
        let variance: f64 = plan.probabilities.iter().map(|p| p * (1.0 - p)).sum();
        let band = 4.0 * (variance / iterations as f64).sqrt();
        assert!((mean - target).abs() <= band, "{mean} vs {target} ± {band}");
    }

    #[test]
    fn periodic_comm_reduction_ratio() {
        // A C_b = 0.1 schedule uses one tenth of the full schedule's
        // communication time in the long run.
        let (d, _, _) = pipeline(9, 1.0);
        let budget = 0.1;
        let plan = optimize_probabilities(&d, budget, &OptimizerSettings::default()).unwrap();
        let periodic_mixing = crate::mixing::optimize_alpha_from_moments(
            &MixingMoments::periodic(&d.base().laplacian(), budget),
            DEFAULT_ALPHA_TOLERANCE,
        )
        .unwrap();
        let iterations = 200_000;
        let s = generate_schedule(
            Policy::Periodic,
            &d,
            Some(&plan),
            &periodic_mixing,
            iterations,
            4,
        )
        .unwrap();
        let model = CommTimeModel::default();
        let total: f64 = (0..iterations)
            .map(|k| s.comm_time_at(k, &model).unwrap())
            .sum();
        let vanilla_total = iterations as f64 * d.matching_count() as f64;
        let ratio = total / vanilla_total;
        assert!((ratio - budget).abs() < 0.01, "{ratio}");
    }

    #[test]
    fn inactive_iterations_are_identity_and_free() {
        let (d, _, _) = pipeline(15, 1.0);
        let budget = 0.2;
        let plan = optimize_probabilities(&d, budget, &OptimizerSettings::default()).unwrap();
        let mixing = crate::mixing::optimize_alpha_from_moments(
            &MixingMoments::periodic(&d.base().laplacian(), budget),
            DEFAULT_ALPHA_TOLERANCE,
        )
        .unwrap();
        let s = generate_schedule(Policy::Periodic, &d, Some(&plan), &mixing, 200, 6).unwrap();
        let model = CommTimeModel::default();
        let mut saw_inactive = false;
        for k in 0..200 {
            if s.active_count_at(k).unwrap() == 0 {
                saw_inactive = true;
                assert_eq!(
                    s.mixing_matrix_at(k).unwrap(),
                    Array2::<f64>::eye(d.node_count())
                );
                assert_eq!(s.comm_time_at(k, &model).unwrap(), 0.0);
            }
        }
        assert!(saw_inactive, "a budget-0.2 schedule should idle sometimes");
    }

    #[test]
    fn comm_time_examples() {
        let (d, plan, mixing) = pipeline(10, 1.0);
        let s = generate_schedule(Policy::Vanilla, &d, Some(&plan), &mixing, 5, 0).unwrap();
        let model = CommTimeModel::default();
        assert_eq!(
            s.comm_time_at(0, &model).unwrap(),
            d.matching_count() as f64
        );
        assert!(matches!(
            s.comm_time_at(5, &model),
            Err(ScheduleError::IndexOutOfRange { index: 5, len: 5 })
        ));
    }

    #[test]
    fn mixing_matrix_per_iteration_examples() {
        let path3 = Topology::new(3, &[(0, 1), (1, 2)]).unwrap();
        let d = decompose(&path3);
        let plan = ActivationPlan {
            budget: 1.0,
            probabilities: vec![1.0, 1.0],
            lambda2: 1.0,
            expected_comm_time: 2.0,
        };
        let mixing = MixingParams::at_alpha(MixingMoments::matching_sampling(&d, &plan), 0.5);

        // Hand-pick a seed whose first iteration activates only matching 0.
        let mut chosen = None;
        for seed in 0..200 {
            let half = ActivationPlan {
                probabilities: vec![0.5, 0.5],
                ..plan.clone()
            };
            let s = generate_schedule(Policy::Matcha, &d, Some(&half), &mixing, 1, seed).unwrap();
            if s.active_row(0).unwrap() == vec![true, false] {
                chosen = Some(s);
                break;
            }
        }
        let s = chosen.expect("some seed activates exactly matching 0");
        let w = s.mixing_matrix_at(0).unwrap();
        let expected = arr2(&[[0.5, 0.5, 0.0], [0.5, 0.5, 0.0], [0.0, 0.0, 1.0]]);
        assert!(frobenius_norm(&(&w - &expected)) < 1e-12);
    }

    #[test]
    fn every_mixing_matrix_is_symmetric_doubly_stochastic() {
        for (policy, budget) in [
            (Policy::Matcha, 0.4),
            (Policy::Vanilla, 1.0),
            (Policy::Periodic, 0.4),
        ] {
            let (d, plan, _) = pipeline(11, budget);
            let mixing = match policy {
                Policy::Matcha => optimize_alpha(&d, &plan, DEFAULT_ALPHA_TOLERANCE).unwrap(),
                Policy::Vanilla => crate::mixing::optimize_alpha_from_moments(
                    &MixingMoments::vanilla(&d.base().laplacian()),
                    DEFAULT_ALPHA_TOLERANCE,
                )
                .unwrap(),
                Policy::Periodic => crate::mixing::optimize_alpha_from_moments(
                    &MixingMoments::periodic(&d.base().laplacian(), budget),
                    DEFAULT_ALPHA_TOLERANCE,
                )
                .unwrap(),
            };
            let s = generate_schedule(policy, &d, Some(&plan), &mixing, 100, 23).unwrap();
            let m = d.node_count();
            let j = averaging_matrix(m);
            for k in 0..100 {
                let w = s.mixing_matrix_at(k).unwrap();
                assert!(frobenius_norm(&(&w - &w.t().to_owned())) < 1e-12);
                for i in 0..m {
                    let row: f64 = (0..m).map(|c| w[[i, c]]).sum();
                    assert!((row - 1.0).abs() < 1e-10);
                }
                assert!(frobenius_norm(&(&w.dot(&j) - &j)) < 1e-10);
            }
        }
    }

    #[test]
    fn contraction_lemma_monte_carlo() {
        // E‖B(∏W - J)‖² ≤ ρⁿ‖B‖² for i.i.d. symmetric doubly stochastic W.
        let (d, plan, mixing) = pipeline(12, 0.5);
        let m = d.node_count();
        let j = averaging_matrix(m);
        let mut rng = crate::rng::SplitMix64::new(55);
        let mut b = Array2::<f64>::zeros((3, m));
        for v in b.iter_mut() {
            *v = rng.next_normal();
        }
        let b_norm_sq = frobenius_norm(&b).powi(2);

        let draws = 10_000;
        for n in [1usize, 2, 5] {
            let mut total = 0.0;
            let mut total_sq = 0.0;
            for draw in 0..draws {
                let s = generate_schedule(
                    Policy::Matcha,
                    &d,
                    Some(&plan),
                    &mixing,
                    n,
                    crate::rng::derive_seed(999, &[n as u64, draw as u64]),
                )
                .unwrap();
                let mut product = Array2::<f64>::eye(m);
                for k in 0..n {
                    product = product.dot(&s.mixing_matrix_at(k).unwrap());
                }
                let x = frobenius_norm(&b.dot(&(&product - &j))).powi(2);
                total += x;
                total_sq += x * x;
            }
            let mean = total / draws as f64;
            let var = (total_sq / draws as f64 - mean * mean).max(0.0);
            let rse = (var / draws as f64).sqrt() / mean.max(1e-300);
            let bound = mixing.rho.powi(n as i32) * b_norm_sq * (1.0 + 4.0 * rse);
            assert!(mean <= bound, "n={n}: {mean} > {bound}");
        }
    }

    #[test]
    fn policy_param_errors() {
        let (d, plan, mixing) = pipeline(13, 0.5);
        assert!(matches!(
            generate_schedule(Policy::Matcha, &d, None, &mixing, 10, 0),
            Err(ScheduleError::InvalidPolicyParams(Policy::Matcha))
        ));
        assert!(matches!(
            generate_schedule(Policy::Periodic, &d, None, &mixing, 10, 0),
            Err(ScheduleError::InvalidPolicyParams(Policy::Periodic))
        ));
        let short = ActivationPlan {
            budget: 0.5,
            probabilities: vec![0.5],
            lambda2: 0.0,
            expected_comm_time: 0.5,
        };
        assert!(matches!(
            generate_schedule(Policy::Matcha, &d, Some(&short), &mixing, 10, 0),
            Err(ScheduleError::PlanMismatch { .. })
        ));
        let ok = generate_schedule(Policy::Vanilla, &d, None, &mixing, 10, 0);
        assert!(ok.is_ok());
        assert!(matches!(
            ok.unwrap().mixing_matrix_at(10),
            Err(ScheduleError::IndexOutOfRange { .. })
        ));
        let _ = generate_schedule(Policy::Vanilla, &d, Some(&plan), &mixing, 10, 0).unwrap();
    }

    #[test]
    fn summary_export_fields() {
        let (d, plan, mixing) = pipeline(14, 0.5);
        let s = generate_schedule(Policy::Matcha, &d, Some(&plan), &mixing, 10, 77).unwrap();
        let json: serde_json::Value = serde_json::from_str(&s.export_summary_json()).unwrap();
        assert_eq!(json["policy"], "matcha");
        assert_eq!(json["seed"], 77);
        assert_eq!(json["iterations"], 10);
        assert_eq!(json["plan_hash"].as_str().unwrap().len(), 16);

        let table: Vec<Vec<bool>> = serde_json::from_str(&s.export_table_json()).unwrap();
        assert_eq!(table.len(), 10);
        assert_eq!(table[0].len(), d.matching_count());
    }
}
