//! Pluggable stochastic training objectives.
//!
//! Two synthetic testbeds ship with the simulator:
//!
//! - [`QuadraticObjective`]: per-worker least squares with a shared
//!   Hessian, shifted targets and Gaussian gradient noise. Every constant
//!   the convergence theory needs (gradient Lipschitz constant, noise
//!   variance, gradient heterogeneity) is engineered in exactly, which is
//!   what makes the bound checks possible.
//! - [`LogisticObjective`]: binary logistic regression on synthetic
//!   Gaussian blobs with label-skewed per-worker partitions (the non-IID
//!   control knob) and mini-batch gradients.
//!
//! Stochastic gradients draw their noise from a per-call seed supplied by
//! the runner, so paired runs across policies see identical noise.

use crate::rng::SplitMix64;
use ndarray::{Array1, Array2, ArrayView1, ArrayViewMut1};

/// Constants appearing in the convergence bound, when analytically known.
#[derive(Debug, Clone, Copy)]
pub struct TheoryConstants {
    /// Gradient Lipschitz constant L.
    pub lipschitz: f64,
    /// Per-worker gradient noise variance bound σ².
    pub sigma_sq: f64,
    /// Gradient heterogeneity bound ζ².
    pub zeta_sq: f64,
}

pub trait Objective: Send + Sync {
    fn dimension(&self) -> usize;
    fn worker_count(&self) -> usize;

    /// Local loss F_i(x).
    fn loss(&self, worker: usize, x: ArrayView1<f64>) -> f64;

    /// Exact local gradient ∇F_i(x).
    fn gradient(&self, worker: usize, x: ArrayView1<f64>, out: ArrayViewMut1<f64>);

    /// Stochastic gradient with noise drawn from `noise_seed`. Unbiased
    /// for ∇F_i by construction.
    fn stochastic_gradient(
        &self,
        worker: usize,
        x: ArrayView1<f64>,
        noise_seed: u64,
        out: ArrayViewMut1<f64>,
    );

    /// Known minimum of the global objective, when available.
    fn optimum_value(&self) -> Option<f64> {
        None
    }

    fn constants(&self) -> Option<TheoryConstants> {
        None
    }

    /// Global loss `F(x) = (1/m) Σ F_i(x)`.
    fn global_loss(&self, x: ArrayView1<f64>) -> f64 {
        let m = self.worker_count();
        (0..m).map(|i| self.loss(i, x)).sum::<f64>() / m as f64
    }

    /// Exact global gradient.
    fn global_gradient(&self, x: ArrayView1<f64>, mut out: ArrayViewMut1<f64>) {
        let m = self.worker_count();
        out.fill(0.0);
        let mut scratch = Array1::<f64>::zeros(x.len());
        for i in 0..m {
            self.gradient(i, x, scratch.view_mut());
            out.scaled_add(1.0 / m as f64, &scratch);
        }
    }
}

// ---------------------------------------------------------------------------
// Quadratic testbed
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct QuadraticConfig {
    pub workers: usize,
    pub dimension: usize,
    /// Largest Hessian eigenvalue, i.e. the gradient Lipschitz constant L.
    pub lipschitz: f64,
    /// Smallest Hessian eigenvalue.
    pub strong_convexity: f64,
    /// Target gradient heterogeneity ζ (Assumption-4 constant, as a
    /// standard deviation; the bound uses ζ²).
    pub heterogeneity: f64,
    /// Total gradient-noise standard deviation σ per stochastic call.
    pub noise_sigma: f64,
    /// The global optimum sits at `optimum_shift · 1`.
    pub optimum_shift: f64,
    pub seed: u64,
}

impl Default for QuadraticConfig {
    fn default() -> Self {
        Self {
            workers: 8,
            dimension: 10,
            lipschitz: 1.0,
            strong_convexity: 0.1,
            heterogeneity: 1.0,
            noise_sigma: 1.0,
            optimum_shift: 1.0,
            seed: 0,
        }
    }
}

/// Heterogeneous least squares: worker `i` minimizes
/// `F_i(x) = ½ xᵀHx - c_iᵀx + k_i` with one shared diagonal Hessian `H`
/// (spectrum linearly spaced in `[μ, L]`) and per-worker linear terms
/// `c_i = H·x* + t·(u_i - ū)` built from seeded Gaussians and scaled so
/// that `(1/m) Σ ‖∇F_i(x) - ∇F(x)‖² = ζ²` exactly — the deviation is
/// constant in `x` because the Hessians coincide, so the heterogeneity
/// assumption holds globally, not just at a point.
#[derive(Debug, Clone)]
pub struct QuadraticObjective {
    hessian_diag: Array1<f64>,
    /// Per-worker linear term c_i (rows).
    linear: Array2<f64>,
    /// Per-worker constant offset making F_i(x) = ½‖Ax - b_i‖² exact.
    offsets: Vec<f64>,
    noise_scale: f64,
    config: QuadraticConfig,
    optimum_loss: f64,
}

impl QuadraticObjective {
    pub fn new(config: QuadraticConfig) -> Self {
        assert!(config.workers >= 1 && config.dimension >= 1);
        assert!(config.lipschitz >= config.strong_convexity && config.strong_convexity > 0.0);
        assert!(
            config.workers > 1 || config.heterogeneity == 0.0,
            "a single worker cannot be heterogeneous"
        );
        let d = config.dimension;
        let m = config.workers;
        let hessian_diag = Array1::from_iter((0..d).map(|k| {
            if d == 1 {
                config.lipschitz
            } else {
                config.strong_convexity
                    + (config.lipschitz - config.strong_convexity) * k as f64 / (d - 1) as f64
            }
        }));

        let mut rng = SplitMix64::new(config.seed);
        let mut raw = Array2::<f64>::zeros((m, d));
        for v in raw.iter_mut() {
            *v = rng.next_normal();
        }
        let mean = raw.mean_axis(ndarray::Axis(0)).unwrap();
        let mut deviations = raw - &mean;
        let spread_sq = deviations.iter().map(|x| x * x).sum::<f64>() / m as f64;
        if spread_sq > 0.0 {
            deviations *= config.heterogeneity / spread_sq.sqrt();
        }

        let optimum = Array1::<f64>::from_elem(d, config.optimum_shift);
        let pull = &hessian_diag * &optimum;
        let linear = deviations + &pull;

        // k_i = ½ c_iᵀ H⁻¹ c_i so that F_i = ½‖H^{1/2}x - H^{-1/2}c_i‖².
        let offsets: Vec<f64> = (0..m)
            .map(|i| {
                0.5 * linear
                    .row(i)
                    .iter()
                    .zip(&hessian_diag)
                    .map(|(c, h)| c * c / h)
                    .sum::<f64>()
            })
            .collect();

        // F(x*) with c̄ = H x*: ½ x*ᵀHx* - x*ᵀHx* + mean(k_i).
        let quad_at_opt: f64 = 0.5
            * optimum
                .iter()
                .zip(&hessian_diag)
                .map(|(x, h)| h * x * x)
                .sum::<f64>();
        let optimum_loss = offsets.iter().sum::<f64>() / m as f64 - quad_at_opt;

        Self {
            hessian_diag,
            linear,
            offsets,
            noise_scale: config.noise_sigma / (d as f64).sqrt(),
            config,
            optimum_loss,
        }
    }

    pub fn config(&self) -> &QuadraticConfig {
        &self.config
    }
}

impl Objective for QuadraticObjective {
    fn dimension(&self) -> usize {
        self.config.dimension
    }

    fn worker_count(&self) -> usize {
        self.config.workers
    }

    fn loss(&self, worker: usize, x: ArrayView1<f64>) -> f64 {
        let quad: f64 = 0.5
            * x.iter()
                .zip(&self.hessian_diag)
                .map(|(xi, h)| h * xi * xi)
                .sum::<f64>();
        quad - self.linear.row(worker).dot(&x) + self.offsets[worker]
    }

    fn gradient(&self, worker: usize, x: ArrayView1<f64>, mut out: ArrayViewMut1<f64>) {
        for (k, o) in out.iter_mut().enumerate() {
            *o = self.hessian_diag[k] * x[k] - self.linear[[worker, k]];
        }
    }

    fn stochastic_gradient(
        &self,
        worker: usize,
        x: ArrayView1<f64>,
        noise_seed: u64,
        mut out: ArrayViewMut1<f64>,
    ) {
        self.gradient(worker, x, out.view_mut());
        let mut rng = SplitMix64::new(noise_seed);
        for o in out.iter_mut() {
            *o += self.noise_scale * rng.next_normal();
        }
    }

    fn optimum_value(&self) -> Option<f64> {
        Some(self.optimum_loss)
    }

    fn constants(&self) -> Option<TheoryConstants> {
        Some(TheoryConstants {
            lipschitz: self.config.lipschitz,
            sigma_sq: self.config.noise_sigma * self.config.noise_sigma,
            zeta_sq: if self.config.workers > 1 {
                self.config.heterogeneity * self.config.heterogeneity
            } else {
                0.0
            },
        })
    }
}

// ---------------------------------------------------------------------------
// Logistic testbed
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct LogisticConfig {
    pub workers: usize,
    pub dimension: usize,
    pub samples_per_worker: usize,
    pub batch_size: usize,
    /// Fraction of each worker's samples drawn from its home class
    /// (workers alternate home classes). 0.5 is IID; 1.0 is fully skewed.
    pub label_skew: f64,
    /// Distance of each class mean from the origin along a seeded unit
    /// direction.
    pub separation: f64,
    /// L2 regularization weight.
    pub regularization: f64,
    pub seed: u64,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        Self {
            workers: 8,
            dimension: 10,
            samples_per_worker: 200,
            batch_size: 16,
            label_skew: 0.8,
            separation: 1.5,
            regularization: 1e-3,
            seed: 0,
        }
    }
}

/// Binary logistic regression on two synthetic Gaussian blobs.
#[derive(Debug, Clone)]
pub struct LogisticObjective {
    /// Per worker: samples_per_worker × dimension.
    features: Vec<Array2<f64>>,
    /// Per worker: ±1 labels.
    labels: Vec<Vec<f64>>,
    config: LogisticConfig,
}

fn log1p_exp(t: f64) -> f64 {
    // ln(1 + e^t) without overflow.
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

impl LogisticObjective {
    pub fn new(config: LogisticConfig) -> Self {
        assert!(config.workers >= 1 && config.dimension >= 1);
        assert!(config.samples_per_worker >= 1 && config.batch_size >= 1);
        assert!((0.0..=1.0).contains(&config.label_skew));
        let d = config.dimension;
        let mut rng = SplitMix64::new(config.seed);

        // Seeded unit direction for the class means.
        let mut direction = Array1::<f64>::zeros(d);
        for v in direction.iter_mut() {
            *v = rng.next_normal();
        }
        let norm = direction.dot(&direction).sqrt();
        direction /= norm.max(1e-12);
        direction *= config.separation;

        let mut features = Vec::with_capacity(config.workers);
        let mut labels = Vec::with_capacity(config.workers);
        for worker in 0..config.workers {
            let home: f64 = if worker % 2 == 0 { 1.0 } else { -1.0 };
            let mut x = Array2::<f64>::zeros((config.samples_per_worker, d));
            let mut y = Vec::with_capacity(config.samples_per_worker);
            for s in 0..config.samples_per_worker {
                let label = if rng.next_f64() < config.label_skew {
                    home
                } else {
                    -home
                };
                for k in 0..d {
                    x[[s, k]] = label * direction[k] + rng.next_normal();
                }
                y.push(label);
            }
            features.push(x);
            labels.push(y);
        }
        Self {
            features,
            labels,
            config,
        }
    }

    fn sample_gradient(
        &self,
        worker: usize,
        sample: usize,
        x: ArrayView1<f64>,
        out: &mut ArrayViewMut1<f64>,
        weight: f64,
    ) {
        let z = self.features[worker].row(sample);
        let y = self.labels[worker][sample];
        let margin = y * z.dot(&x);
        let coefficient = -y * sigmoid(-margin) * weight;
        out.scaled_add(coefficient, &z);
    }
}

impl Objective for LogisticObjective {
    fn dimension(&self) -> usize {
        self.config.dimension
    }

    fn worker_count(&self) -> usize {
        self.config.workers
    }

    fn loss(&self, worker: usize, x: ArrayView1<f64>) -> f64 {
        let n = self.config.samples_per_worker;
        let mut total = 0.0;
        for s in 0..n {
            let margin = self.labels[worker][s] * self.features[worker].row(s).dot(&x);
            total += log1p_exp(-margin);
        }
        total / n as f64 + 0.5 * self.config.regularization * x.dot(&x)
    }

    fn gradient(&self, worker: usize, x: ArrayView1<f64>, mut out: ArrayViewMut1<f64>) {
        let n = self.config.samples_per_worker;
        out.fill(0.0);
        for s in 0..n {
            self.sample_gradient(worker, s, x, &mut out, 1.0 / n as f64);
        }
        out.scaled_add(self.config.regularization, &x);
    }

    fn stochastic_gradient(
        &self,
        worker: usize,
        x: ArrayView1<f64>,
        noise_seed: u64,
        mut out: ArrayViewMut1<f64>,
    ) {
        let mut rng = SplitMix64::new(noise_seed);
        let n = self.config.samples_per_worker;
        let batch = self.config.batch_size;
        out.fill(0.0);
        for _ in 0..batch {
            let s = (rng.next_u64() % n as u64) as usize;
            self.sample_gradient(worker, s, x, &mut out, 1.0 / batch as f64);
        }
        out.scaled_add(self.config.regularization, &x);
    }
}

// ---------------------------------------------------------------------------
// Zero objective (consensus-only runs)
// ---------------------------------------------------------------------------

/// All losses and gradients zero: the SGD update degenerates to pure
/// gossip averaging, which is what the contraction diagnostics need.
#[derive(Debug, Clone)]
pub struct ZeroObjective {
    pub workers: usize,
    pub dimension: usize,
}

impl Objective for ZeroObjective {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn worker_count(&self) -> usize {
        self.workers
    }

    fn loss(&self, _worker: usize, _x: ArrayView1<f64>) -> f64 {
        0.0
    }

    fn gradient(&self, _worker: usize, _x: ArrayView1<f64>, mut out: ArrayViewMut1<f64>) {
        out.fill(0.0);
    }

    fn stochastic_gradient(
        &self,
        _worker: usize,
        _x: ArrayView1<f64>,
        _noise_seed: u64,
        mut out: ArrayViewMut1<f64>,
    ) {
        out.fill(0.0);
    }

    fn optimum_value(&self) -> Option<f64> {
        Some(0.0)
    }
}
