//! Consensus-weight optimization: choose α for the mixing matrices
//! `W = I - αL` so that the spectral norm
//! `ρ = ‖E[WᵀW] - J‖₂` is minimal.
//!
//! For i.i.d. Bernoulli matching activations the expectation expands to
//!
//! ```text
//! E[WᵀW] = I - 2αL̄ + α²(L̄² + 2L̃),
//!     L̄ = Σ p_j L_j,    L̃ = Σ p_j (1-p_j) L_j,
//! ```
//!
//! using that matching Laplacians square to twice themselves. Each Rayleigh
//! quotient of this family is a convex quadratic in α, so ρ(α) — their max
//! over unit directions orthogonal to the all-ones vector — is convex.
//! Instead of a general SDP solver we minimize ρ(α) by golden-section
//! search on `[0, 2/λ₂(L̄)]` and certify the semidefinite-program
//! constraints (with auxiliary variable β = α²) at the solution.

use crate::budget::ActivationPlan;
use crate::eigen::{averaging_matrix, lambda_max_restricted, lambda_min_restricted, sym_eigen};
use crate::matching::MatchingDecomposition;
use ndarray::Array2;
use serde::Serialize;
use thiserror::Error;

/// Default bracket tolerance for the golden-section search.
pub const DEFAULT_ALPHA_TOLERANCE: f64 = 1e-8;

/// λ₂(L̄) below this leaves no direction to mix along.
const DEGENERACY_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum MixingError {
    #[error("base graph is disconnected")]
    Disconnected,
    #[error("expected Laplacian is degenerate: lambda2 = {0:e}")]
    DegeneratePlan(f64),
}

/// First and second moments of the random per-iteration Laplacian,
/// reduced to the pair (L̄, L̃) described in the module docs.
#[derive(Debug, Clone)]
pub struct MixingMoments {
    pub l_bar: Array2<f64>,
    pub l_tilde: Array2<f64>,
}

impl MixingMoments {
    /// Moments for independent per-matching activation with plan
    /// probabilities.
    pub fn matching_sampling(decomp: &MatchingDecomposition, plan: &ActivationPlan) -> Self {
        let variance_weights: Vec<f64> =
            plan.probabilities.iter().map(|&p| p * (1.0 - p)).collect();
        Self {
            l_bar: decomp.weighted_laplacian(&plan.probabilities),
            l_tilde: decomp.weighted_laplacian(&variance_weights),
        }
    }

    /// Moments for the full base graph activated every iteration: L̄ = L,
    /// L̃ = 0.
    pub fn vanilla(base_laplacian: &Array2<f64>) -> Self {
        let m = base_laplacian.nrows();
        Self {
            l_bar: base_laplacian.clone(),
            l_tilde: Array2::zeros((m, m)),
        }
    }

    /// Moments for whole-graph Bernoulli activation at rate `budget`:
    /// L̄ = C_b·L, L̃ = C_b(1-C_b)·L.
    pub fn periodic(base_laplacian: &Array2<f64>, budget: f64) -> Self {
        Self {
            l_bar: base_laplacian * budget,
            l_tilde: base_laplacian * (budget * (1.0 - budget)),
        }
    }

    /// `E[WᵀW]` at the given α (without the J subtraction).
    fn expected_square(&self, alpha: f64) -> Array2<f64> {
        let m = self.l_bar.nrows();
        let quadratic = self.l_bar.dot(&self.l_bar) + &(&self.l_tilde * 2.0);
        let mut e = Array2::<f64>::eye(m);
        e.scaled_add(-2.0 * alpha, &self.l_bar);
        e.scaled_add(alpha * alpha, &quadratic);
        crate::eigen::symmetrize(e)
    }
}

/// Optimized mixing parameters for one (decomposition, plan) pair.
#[derive(Debug, Clone)]
pub struct MixingParams {
    /// Consensus weight α.
    pub alpha: f64,
    /// Spectral norm ρ at α.
    pub rho: f64,
    /// SDP auxiliary variable; equals α² at the optimum.
    pub beta: f64,
    /// λ₂(L̄), kept for the closed-form bound.
    pub lambda2_bar: f64,
    pub moments: MixingMoments,
}

/// Slack of the two semidefinite-program constraints at (ρ, α, β).
/// Both are nonpositive (within eigen-tolerance) for a valid certificate.
#[derive(Debug, Clone, Copy)]
pub struct SdpCertificate {
    /// `α² - β`.
    pub alpha_beta_slack: f64,
    /// `λ_max(I - 2αL̄ + β(L̄² + 2L̃) - J) - ρ`, from a full eigensolve of
    /// the J-subtracted matrix — an independent route from the deflated
    /// evaluation used inside the optimizer.
    pub lmi_slack: f64,
}

impl MixingParams {
    /// Parameters at a caller-chosen α with ρ evaluated from the moments.
    /// Bypasses the optimization; used for fixed-α baselines and trivial
    /// single-node setups where no spectral direction exists.
    pub fn at_alpha(moments: MixingMoments, alpha: f64) -> Self {
        let lambda2_bar = lambda_min_restricted(&moments.l_bar);
        let rho = rho_from_moments(&moments, alpha);
        Self {
            alpha,
            rho,
            beta: alpha * alpha,
            lambda2_bar,
            moments,
        }
    }

    pub fn sdp_certificate(&self) -> SdpCertificate {
        let m = self.moments.l_bar.nrows();
        let e = self.moments.expected_square(self.alpha);
        let shifted = &e - &averaging_matrix(m);
        let eig = sym_eigen(&shifted).expect("moment matrix is symmetric");
        SdpCertificate {
            alpha_beta_slack: self.alpha * self.alpha - self.beta,
            lmi_slack: eig.values.last().unwrap() - self.rho,
        }
    }
}

#[derive(Serialize)]
struct MixingExport {
    alpha: f64,
    rho: f64,
    #[serde(rename = "C_b")]
    budget: f64,
    expected_comm_time: f64,
}

/// Export `{"alpha", "rho", "C_b", "expected_comm_time"}` for one
/// optimized (plan, mixing) pair.
pub fn mixing_export_json(params: &MixingParams, plan: &ActivationPlan) -> String {
    serde_json::to_string_pretty(&MixingExport {
        alpha: params.alpha,
        rho: params.rho,
        budget: plan.budget,
        expected_comm_time: plan.expected_comm_time,
    })
    .expect("mixing serialization cannot fail")
}

/// ρ(α) for the given moments: the largest eigenvalue of
/// `I - 2αL̄ + α²(L̄² + 2L̃)` restricted to the complement of the all-ones
/// direction (where the J term vanishes). The restriction is PSD, so this
/// is its spectral norm.
pub fn rho_from_moments(moments: &MixingMoments, alpha: f64) -> f64 {
    assert!(alpha >= 0.0, "consensus weight must be nonnegative");
    lambda_max_restricted(&moments.expected_square(alpha))
}

/// ρ(α) under matching-sampling moments from (decomposition, plan).
pub fn rho_of_alpha(decomp: &MatchingDecomposition, plan: &ActivationPlan, alpha: f64) -> f64 {
    rho_from_moments(&MixingMoments::matching_sampling(decomp, plan), alpha)
}

/// Closed-form upper bound on ρ:
/// `1 - 2αλ₂(L̄) + 4α²S² + 4α²S` with `S = Σ p_j`.
///
/// Follows from bounding every Rayleigh quotient with `‖L̄‖₂ ≤ 2S` and
/// `‖L̃‖₂ ≤ 2S`; maximizing λ₂(L̄) therefore minimizes an upper bound on
/// the spectral norm.
pub fn rho_upper_bound(plan: &ActivationPlan, lambda2_bar: f64, alpha: f64) -> f64 {
    assert!(alpha >= 0.0, "consensus weight must be nonnegative");
    let s: f64 = plan.probabilities.iter().sum();
    1.0 - 2.0 * alpha * lambda2_bar + 4.0 * alpha * alpha * s * s + 4.0 * alpha * alpha * s
}

/// One realized mixing matrix `W = I - α Σ_{active j} L_j`. Symmetric and
/// doubly stochastic by construction.
pub fn mixing_matrix(decomp: &MatchingDecomposition, active: &[bool], alpha: f64) -> Array2<f64> {
    assert_eq!(active.len(), decomp.matching_count());
    assert!(alpha >= 0.0, "consensus weight must be nonnegative");
    let m = decomp.node_count();
    let mut w = Array2::<f64>::eye(m);
    for (j, lap) in decomp.laplacians().iter().enumerate() {
        if active[j] {
            w.scaled_add(-alpha, lap);
        }
    }
    w
}

/// Minimize ρ(α) for the given moments by golden-section search on
/// `[0, 2/λ₂(L̄)]` to bracket width `tolerance`.
///
/// ρ(0) = 1 and ρ at the right endpoint is at least 1 (the Fiedler
/// direction's quadratic alone reaches 1 there), so the convex minimum is
/// interior and the returned ρ is strictly below 1 whenever λ₂(L̄) > 0.
pub fn optimize_alpha_from_moments(
    moments: &MixingMoments,
    tolerance: f64,
) -> Result<MixingParams, MixingError> {
    let lambda2_bar = lambda_min_restricted(&moments.l_bar);
    if lambda2_bar <= DEGENERACY_TOLERANCE {
        return Err(MixingError::DegeneratePlan(lambda2_bar));
    }
    let hi = 2.0 / lambda2_bar;
    debug_assert!(
        rho_from_moments(moments, hi) >= rho_from_moments(moments, 0.5 * hi) - 1e-9,
        "minimizer escaped the bracket"
    );

    let inv_phi = (5.0f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (0.0f64, hi);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = rho_from_moments(moments, c);
    let mut fd = rho_from_moments(moments, d);
    while b - a > tolerance {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = rho_from_moments(moments, c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = rho_from_moments(moments, d);
        }
    }
    let alpha = 0.5 * (a + b);
    let rho = rho_from_moments(moments, alpha);
    Ok(MixingParams {
        alpha,
        rho,
        beta: alpha * alpha,
        lambda2_bar,
        moments: moments.clone(),
    })
}

/// Minimize ρ(α) for a (decomposition, plan) pair. Errors on a
/// disconnected base graph or a plan whose expected graph is degenerate.
pub fn optimize_alpha(
    decomp: &MatchingDecomposition,
    plan: &ActivationPlan,
    tolerance: f64,
) -> Result<MixingParams, MixingError> {
    if !decomp.base().is_connected() {
        return Err(MixingError::Disconnected);
    }
    optimize_alpha_from_moments(&MixingMoments::matching_sampling(decomp, plan), tolerance)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::budget::{optimize_probabilities, OptimizerSettings};
    use crate::graph::{generate_erdos_renyi, Topology};
    use crate::matching::decompose;
    use crate::rng::SplitMix64;
    use ndarray::arr2;

    fn full_plan(decomp: &MatchingDecomposition) -> ActivationPlan {
        let m = decomp.matching_count();
        ActivationPlan {
            budget: 1.0,
            probabilities: vec![1.0; m],
            lambda2: lambda_min_restricted(&decomp.weighted_laplacian(&vec![1.0; m])),
            expected_comm_time: m as f64,
        }
    }

    fn path3() -> MatchingDecomposition {
        decompose(&Topology::new(3, &[(0, 1), (1, 2)]).unwrap())
    }

    #[test]
    fn rho_at_zero_alpha_is_one() {
        let d = decompose(&generate_erdos_renyi(6, 0.6, 2, true).unwrap());
        let plan = full_plan(&d);
        assert!((rho_of_alpha(&d, &plan, 0.0) - 1.0).abs() < 1e-10);
    }

    #[test]
    fn path3_closed_form_rho() {
        // L̃ = 0 at p = (1,1); restricted eigenvalues of (I-αL)² are
        // (1-α)² and (1-3α)²; at α = 0.5 both equal 0.25.
        let d = path3();
        let plan = full_plan(&d);
        assert!((rho_of_alpha(&d, &plan, 0.5) - 0.25).abs() < 1e-10);
    }

    #[test]
    fn complete_graph_full_averaging_has_zero_rho() {
        let k4 = Topology::new(4, &[(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]).unwrap();
        let d = decompose(&k4);
        let plan = full_plan(&d);
        // W = I - L/m = J for the complete graph.
        let rho = rho_of_alpha(&d, &plan, 0.25);
        assert!(rho.abs() < 1e-10, "{rho}");
    }

    #[test]
    fn optimize_path3_closed_form() {
        let d = path3();
        let plan = full_plan(&d);
        let params = optimize_alpha(&d, &plan, DEFAULT_ALPHA_TOLERANCE).unwrap();
        assert!((params.alpha - 0.5).abs() < 1e-6, "{}", params.alpha);
        assert!((params.rho - 0.25).abs() < 1e-6, "{}", params.rho);
        assert!((params.beta - 0.25).abs() < 1e-6);
    }

    #[test]
    fn full_budget_plan_equals_vanilla_params() {
        let d = decompose(&generate_erdos_renyi(9, 0.45, 13, true).unwrap());
        let plan = full_plan(&d);
        let from_plan = optimize_alpha(&d, &plan, DEFAULT_ALPHA_TOLERANCE).unwrap();
        let vanilla = optimize_alpha_from_moments(
            &MixingMoments::vanilla(&d.base().laplacian()),
            DEFAULT_ALPHA_TOLERANCE,
        )
        .unwrap();
        assert!((from_plan.alpha - vanilla.alpha).abs() < 1e-9);
        assert!((from_plan.rho - vanilla.rho).abs() < 1e-9);
    }

    #[test]
    fn star_graph_matches_alpha_grid_oracle() {
        let star = Topology::new(4, &[(0, 1), (0, 2), (0, 3)]).unwrap();
        let d = decompose(&star);
        let plan = full_plan(&d);
        let params = optimize_alpha(&d, &plan, DEFAULT_ALPHA_TOLERANCE).unwrap();

        let moments = MixingMoments::matching_sampling(&d, &plan);
        let hi = 2.0 / params.lambda2_bar;
        let steps = (hi / 1e-5).ceil() as usize;
        let mut best = (f64::INFINITY, 0.0);
        for i in 0..=steps {
            let alpha = hi * i as f64 / steps as f64;
            let rho = rho_from_moments(&moments, alpha);
            if rho < best.0 {
                best = (rho, alpha);
            }
        }
        assert!(
            (params.rho - best.0).abs() < 1e-4,
            "{} vs {}",
            params.rho,
            best.0
        );
        assert!((params.alpha - best.1).abs() < 1e-4);
    }

    #[test]
    fn optimized_rho_below_one_across_budgets() {
        for seed in 0..10u64 {
            let d = decompose(&generate_erdos_renyi(8, 0.4, seed * 7 + 1, true).unwrap());
            for budget in [0.05, 0.25, 0.75, 1.0] {
                let plan =
                    optimize_probabilities(&d, budget, &OptimizerSettings::default()).unwrap();
                let params = optimize_alpha(&d, &plan, DEFAULT_ALPHA_TOLERANCE).unwrap();
                assert!(
                    params.rho <= 1.0 - 1e-6,
                    "seed {seed} budget {budget}: rho {}",
                    params.rho
                );
            }
        }
    }

    #[test]
    fn analytic_interior_point_contracts() {
        // The analytic point α = λ₂/(λ₂² + 2ζ̂), ζ̂ = ‖L̃‖₂, must already
        // give ρ < 1.
        for seed in [3u64, 8, 15] {
            let d = decompose(&generate_erdos_renyi(10, 0.35, seed, true).unwrap());
            let plan = optimize_probabilities(&d, 0.3, &OptimizerSettings::default()).unwrap();
            let moments = MixingMoments::matching_sampling(&d, &plan);
            let lambda2_bar = lambda_min_restricted(&moments.l_bar);
            let zeta = lambda_max_restricted(&moments.l_tilde).max(0.0);
            let alpha = lambda2_bar / (lambda2_bar * lambda2_bar + 2.0 * zeta);
            assert!(rho_from_moments(&moments, alpha) < 1.0);
        }
    }

    #[test]
    fn rho_is_midpoint_convex_in_alpha() {
        let mut rng = SplitMix64::new(31);
        for trial in 0..100 {
            let m = 5 + (rng.next_u64() % 8) as usize;
            let seed = rng.next_u64();
            let Ok(t) = generate_erdos_renyi(m, 0.4, seed, true) else {
                continue;
            };
            let d = decompose(&t);
            let budget = 0.1 + 0.9 * rng.next_f64();
            let plan = optimize_probabilities(&d, budget, &OptimizerSettings::default()).unwrap();
            let moments = MixingMoments::matching_sampling(&d, &plan);
            let a = 0.5 * rng.next_f64();
            let b = 0.5 * rng.next_f64();
            let mid = 0.5 * (a + b);
            let lhs = rho_from_moments(&moments, mid);
            let rhs = 0.5 * (rho_from_moments(&moments, a) + rho_from_moments(&moments, b));
            assert!(lhs <= rhs + 1e-10, "trial {trial}: {lhs} > {rhs}");
        }
    }

    #[test]
    fn upper_bound_dominates_rho() {
        let mut rng = SplitMix64::new(90);
        for _ in 0..100 {
            let m = 4 + (rng.next_u64() % 10) as usize;
            let Ok(t) = generate_erdos_renyi(m, 0.5, rng.next_u64(), true) else {
                continue;
            };
            let d = decompose(&t);
            let probabilities: Vec<f64> = (0..d.matching_count()).map(|_| rng.next_f64()).collect();
            let plan = ActivationPlan {
                budget: 1.0,
                probabilities: probabilities.clone(),
                lambda2: 0.0,
                expected_comm_time: probabilities.iter().sum(),
            };
            let moments = MixingMoments::matching_sampling(&d, &plan);
            let lambda2_bar = lambda_min_restricted(&moments.l_bar);
            let alpha = 0.2 * rng.next_f64();
            let bound = rho_upper_bound(&plan, lambda2_bar, alpha);
            let rho = rho_from_moments(&moments, alpha);
            assert!(bound >= rho - 1e-9, "bound {bound} < rho {rho}");
        }
    }

    #[test]
    fn upper_bound_examples() {
        let d = path3();
        let plan = full_plan(&d);
        assert!((rho_upper_bound(&plan, 1.0, 0.0) - 1.0).abs() < 1e-12);
        // 1 - 2(0.1)(1) + 4(0.01)(4) + 4(0.01)(2) = 1.04
        let bound = rho_upper_bound(&plan, 1.0, 0.1);
        assert!((bound - 1.04).abs() < 1e-12);
        assert!(bound >= rho_of_alpha(&d, &plan, 0.1));
    }

    #[test]
    fn mixing_matrix_examples() {
        let d = path3();
        assert_eq!(
            mixing_matrix(&d, &[false, false], 0.7),
            Array2::<f64>::eye(3)
        );
        let w = mixing_matrix(&d, &[true, true], 0.5);
        let expected = arr2(&[[0.5, 0.5, 0.0], [0.5, 0.0, 0.5], [0.0, 0.5, 0.5]]);
        assert!(crate::eigen::frobenius_norm(&(&w - &expected)) < 1e-12);
        // Doubly stochastic: rows sum to one, commutes with J.
        for i in 0..3 {
            let row: f64 = (0..3).map(|j| w[[i, j]]).sum();
            assert!((row - 1.0).abs() < 1e-10);
        }
        let j = averaging_matrix(3);
        assert!(crate::eigen::frobenius_norm(&(&w.dot(&j) - &j)) < 1e-10);
        assert!(crate::eigen::frobenius_norm(&(&j.dot(&w) - &j)) < 1e-10);
    }

    #[test]
    fn deflated_and_full_matrix_routes_agree() {
        let d = decompose(&generate_erdos_renyi(9, 0.5, 77, true).unwrap());
        let plan = optimize_probabilities(&d, 0.4, &OptimizerSettings::default()).unwrap();
        let moments = MixingMoments::matching_sampling(&d, &plan);
        for &alpha in &[0.0, 0.05, 0.13, 0.4] {
            let deflated = rho_from_moments(&moments, alpha);
            let shifted = &moments.expected_square(alpha) - &averaging_matrix(9);
            let full = sym_eigen(&shifted).unwrap();
            assert!((deflated - full.values.last().unwrap()).abs() < 1e-8);
        }
    }

    #[test]
    fn sdp_certificate_holds_at_optimum() {
        let d = decompose(&generate_erdos_renyi(8, 0.5, 40, true).unwrap());
        let plan = optimize_probabilities(&d, 0.5, &OptimizerSettings::default()).unwrap();
        let params = optimize_alpha(&d, &plan, DEFAULT_ALPHA_TOLERANCE).unwrap();
        let cert = params.sdp_certificate();
        assert!(cert.alpha_beta_slack <= 1e-8);
        assert!(cert.lmi_slack <= 1e-8);
    }

    #[test]
    fn monte_carlo_moments_match_expansion() {
        // Seeded Bernoulli draws of W must reproduce
        // I - 2αL̄ + α²(L̄² + 2L̃) entrywise within 4 standard errors.
        let d = decompose(&generate_erdos_renyi(5, 0.7, 6, true).unwrap());
        let plan = optimize_probabilities(&d, 0.5, &OptimizerSettings::default()).unwrap();
        let params = optimize_alpha(&d, &plan, DEFAULT_ALPHA_TOLERANCE).unwrap();
        let alpha = params.alpha;
        let m = d.node_count();
        let trials = 20_000usize;
        let mut rng = SplitMix64::new(2718);
        let mut mean = Array2::<f64>::zeros((m, m));
        let mut mean_sq = Array2::<f64>::zeros((m, m));
        for _ in 0..trials {
            let active: Vec<bool> = plan
                .probabilities
                .iter()
                .map(|&p| rng.next_f64() < p)
                .collect();
            let w = mixing_matrix(&d, &active, alpha);
            let wtw = w.t().dot(&w);
            mean += &wtw;
            mean_sq += &wtw.mapv(|x| x * x);
        }
        mean /= trials as f64;
        mean_sq /= trials as f64;
        let expected = params.moments.expected_square(alpha);
        for i in 0..m {
            for j in 0..m {
                let var = (mean_sq[[i, j]] - mean[[i, j]] * mean[[i, j]]).max(0.0);
                let se = (var / trials as f64).sqrt();
                let diff = (mean[[i, j]] - expected[[i, j]]).abs();
                assert!(diff <= 4.0 * se + 1e-12, "entry ({i},{j}): {diff} > 4·{se}");
            }
        }
    }

    #[test]
    fn degenerate_plan_rejected() {
        let d = path3();
        let plan = ActivationPlan {
            budget: 0.5,
            probabilities: vec![0.0, 0.0],
            lambda2: 0.0,
            expected_comm_time: 0.0,
        };
        assert!(matches!(
            optimize_alpha(&d, &plan, DEFAULT_ALPHA_TOLERANCE),
            Err(MixingError::DegeneratePlan(_))
        ));

        let disconnected = decompose(&Topology::new(4, &[(0, 1), (2, 3)]).unwrap());
        let p = ActivationPlan {
            budget: 1.0,
            probabilities: vec![1.0; disconnected.matching_count()],
            lambda2: 0.0,
            expected_comm_time: disconnected.matching_count() as f64,
        };
        assert!(matches!(
            optimize_alpha(&disconnected, &p, DEFAULT_ALPHA_TOLERANCE),
            Err(MixingError::Disconnected)
        ));
    }

    #[test]
    fn export_schema() {
        let d = path3();
        let plan = full_plan(&d);
        let params = optimize_alpha(&d, &plan, DEFAULT_ALPHA_TOLERANCE).unwrap();
        let json: serde_json::Value =
            serde_json::from_str(&mixing_export_json(&params, &plan)).unwrap();
        assert!(json["alpha"].is_number());
        assert!(json["rho"].is_number());
        assert_eq!(json["C_b"], 1.0);
        assert_eq!(json["expected_comm_time"], 2.0);
    }
}
