//! Evaluator for the non-asymptotic convergence bound on the averaged
//! gradient norm.
//!
//! For K iterations at constant learning rate η, with gradient Lipschitz
//! constant L, noise variance σ², heterogeneity ζ², m workers and mixing
//! spectral norm ρ, and provided `ηL ≤ min{1, (√(ρ⁻¹)-1)/4}`:
//!
//! ```text
//! (1/K) Σ_k E‖∇F(x̄^(k))‖²
//!   ≤ ( 2[F(x̄¹)-F_inf]/(ηK) + ηLσ²/m ) / (1-2D)
//!   + ( 2η²L²ρ/(1-√ρ) ) ( σ²/(1+√ρ) + 3ζ²/(1-√ρ) ) / (1-2D)
//! ```
//!
//! with `D = 6η²L²ρ/(1-√ρ)²`. The step-size condition forces `D ≤ 3/8`,
//! so the denominators are safe. At ρ = 0 the bound collapses to the
//! fully synchronous SGD form `2[F(x̄¹)-F_inf]/(ηK) + ηLσ²/m`.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TheoryError {
    #[error("step size violates the bound's precondition: ηL = {eta_lipschitz} > {limit}")]
    StepSizeViolation { eta_lipschitz: f64, limit: f64 },
}

/// Everything the bound needs besides ρ.
#[derive(Debug, Clone, Copy)]
pub struct BoundInputs {
    /// F(x̄¹): global loss at the common initial point.
    pub initial_loss: f64,
    /// F_inf: lower bound of the global objective.
    pub optimum_loss: f64,
    pub lipschitz: f64,
    pub sigma_sq: f64,
    pub zeta_sq: f64,
    pub workers: usize,
    pub iterations: usize,
    pub eta: f64,
}

/// Largest ηL the bound admits at this ρ.
pub fn step_size_limit(rho: f64) -> f64 {
    if rho <= 0.0 {
        1.0
    } else {
        1.0f64.min(((1.0 / rho).sqrt() - 1.0) / 4.0)
    }
}

/// The bound's right-hand side. Errors when the step-size precondition
/// fails (the bound is vacuous there).
pub fn convergence_bound(inputs: &BoundInputs, rho: f64) -> Result<f64, TheoryError> {
    let BoundInputs {
        initial_loss,
        optimum_loss,
        lipschitz,
        sigma_sq,
        zeta_sq,
        workers,
        iterations,
        eta,
    } = *inputs;
    let eta_lipschitz = eta * lipschitz;
    let limit = step_size_limit(rho);
    if eta_lipschitz > limit {
        return Err(TheoryError::StepSizeViolation {
            eta_lipschitz,
            limit,
        });
    }
    let m = workers as f64;
    let k = iterations as f64;
    let sqrt_rho = rho.max(0.0).sqrt();
    let d = 6.0 * eta * eta * lipschitz * lipschitz * rho / ((1.0 - sqrt_rho) * (1.0 - sqrt_rho));
    debug_assert!(d < 0.5);
    let damping = 1.0 / (1.0 - 2.0 * d);

    let sgd_term = 2.0 * (initial_loss - optimum_loss) / (eta * k) + eta_lipschitz * sigma_sq / m;
    let consensus_term = if rho > 0.0 {
        (2.0 * eta * eta * lipschitz * lipschitz * rho / (1.0 - sqrt_rho))
            * (sigma_sq / (1.0 + sqrt_rho) + 3.0 * zeta_sq / (1.0 - sqrt_rho))
    } else {
        0.0
    };
    Ok((sgd_term + consensus_term) * damping)
}
