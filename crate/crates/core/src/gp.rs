//! Gaussian-process regression with an ARD Matérn kernel.
//!
//! Inputs are points of the unit box (encoded mixing ratios). The prior mean
//! is a constant `μ0`; observations are modelled as `y = f(x) + N(0, σ²)`.
//! Posterior queries go through a cached Cholesky factor of `K + (σ² + jitter)I`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::rng_from_seed;

/// Matérn smoothness. Only the half-integer closed forms are supported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub enum Smoothness {
    /// ν = 3/2
    ThreeHalves,
    /// ν = 5/2
    FiveHalves,
}

impl TryFrom<f64> for Smoothness {
    type Error = String;

    fn try_from(nu: f64) -> std::result::Result<Self, String> {
        if nu == 1.5 {
            Ok(Smoothness::ThreeHalves)
        } else if nu == 2.5 {
            Ok(Smoothness::FiveHalves)
        } else {
            Err(format!("nu must be 1.5 or 2.5, got {nu}"))
        }
    }
}

impl From<Smoothness> for f64 {
    fn from(nu: Smoothness) -> f64 {
        match nu {
            Smoothness::ThreeHalves => 1.5,
            Smoothness::FiveHalves => 2.5,
        }
    }
}

pub const DEFAULT_JITTER: f64 = 1e-10;
const MAX_JITTER: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub nu: Smoothness,
    /// One length scale per input dimension.
    pub length_scales: Vec<f64>,
    pub signal_variance: f64,
    pub noise_variance: f64,
    pub jitter: f64,
}

impl KernelParams {
    pub fn isotropic(nu: Smoothness, dim: usize, length_scale: f64, signal_variance: f64) -> Self {
        KernelParams {
            nu,
            length_scales: vec![length_scale; dim],
            signal_variance,
            noise_variance: 0.0,
            jitter: DEFAULT_JITTER,
        }
    }

    pub fn dim(&self) -> usize {
        self.length_scales.len()
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.length_scales.iter().all(|&l| l > 0.0 && l.is_finite())
            && self.signal_variance > 0.0
            && self.signal_variance.is_finite()
            && self.noise_variance >= 0.0
            && self.noise_variance.is_finite()
            && self.jitter > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Usage(format!("invalid kernel parameters {self:?}")))
        }
    }

    fn eval(&self, x1: &[f64], x2: &[f64]) -> f64 {
        let d = x1
            .iter()
            .zip(x2)
            .zip(&self.length_scales)
            .map(|((a, b), l)| ((a - b) / l).powi(2))
            .sum::<f64>()
            .sqrt();
        let s2 = self.signal_variance;
        match self.nu {
            Smoothness::ThreeHalves => {
                let r = 3f64.sqrt() * d;
                s2 * (1.0 + r) * (-r).exp()
            }
            Smoothness::FiveHalves => {
                let r = 5f64.sqrt() * d;
                s2 * (1.0 + r + 5.0 * d * d / 3.0) * (-r).exp()
            }
        }
    }
}

/// ARD Matérn covariance between two points.
pub fn matern_kernel(x1: &[f64], x2: &[f64], params: &KernelParams) -> Result<f64> {
    if x1.len() != params.dim() || x2.len() != params.dim() {
        return Err(Error::Usage(format!(
            "kernel expects dimension {}, got {} and {}",
            params.dim(),
            x1.len(),
            x2.len()
        )));
    }
    Ok(params.eval(x1, x2))
}

fn gram(points: &[Vec<f64>], params: &KernelParams) -> DMatrix<f64> {
    let n = points.len();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = params.eval(&points[i], &points[j]);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

#[derive(Debug, Clone)]
struct Factor {
    /// Lower Cholesky factor of `K + (σ² + jitter)I`.
    lower: DMatrix<f64>,
    /// `(K + σ²I)⁻¹ (y − μ0)`
    weights: DVector<f64>,
    jitter: f64,
}

/// Factorizes `K + (σ² + jitter)I`, escalating jitter ×10 up to 1e-4.
fn factorize(
    points: &[Vec<f64>],
    residuals: &DVector<f64>,
    params: &KernelParams,
) -> Result<Factor> {
    let base = gram(points, params);
    let n = points.len();
    let mut jitter = params.jitter;
    loop {
        let mut a = base.clone();
        for i in 0..n {
            a[(i, i)] += params.noise_variance + jitter;
        }
        if let Some(chol) = a.cholesky() {
            let weights = chol.solve(residuals);
            return Ok(Factor {
                lower: chol.l(),
                weights,
                jitter,
            });
        }
        if jitter >= MAX_JITTER {
            return Err(Error::Numerical(format!(
                "covariance of {n} points not positive definite with jitter {jitter:e}"
            )));
        }
        jitter = (jitter * 10.0).min(MAX_JITTER);
    }
}

/// Posterior of the latent function at one point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Posterior {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GpModel {
    dim: usize,
    points: Vec<Vec<f64>>,
    observations: Vec<f64>,
    kernel: KernelParams,
    mean_offset: f64,
    #[serde(skip)]
    factor: Option<Factor>,
}

impl GpModel {
    /// A model that has not been conditioned; posterior queries fail.
    pub fn unfitted(kernel: KernelParams) -> Self {
        GpModel {
            dim: kernel.dim(),
            points: Vec::new(),
            observations: Vec::new(),
            kernel,
            mean_offset: 0.0,
            factor: None,
        }
    }

    /// Conditions on data with fixed hyperparameters.
    pub fn condition(
        points: Vec<Vec<f64>>,
        observations: Vec<f64>,
        kernel: KernelParams,
        mean_offset: f64,
    ) -> Result<Self> {
        kernel.validate()?;
        check_data(&points, &observations, kernel.dim())?;
        let mut model = GpModel {
            dim: kernel.dim(),
            points,
            observations,
            kernel,
            mean_offset,
            factor: None,
        };
        model.refactor()?;
        Ok(model)
    }

    /// Recomputes the cached factorization, e.g. after deserializing.
    pub fn refactor(&mut self) -> Result<()> {
        let residuals = DVector::from_iterator(
            self.observations.len(),
            self.observations.iter().map(|y| y - self.mean_offset),
        );
        self.factor = Some(factorize(&self.points, &residuals, &self.kernel)?);
        Ok(())
    }

    pub fn is_fitted(&self) -> bool {
        self.factor.is_some()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn observations(&self) -> &[f64] {
        &self.observations
    }

    pub fn kernel(&self) -> &KernelParams {
        &self.kernel
    }

    pub fn mean_offset(&self) -> f64 {
        self.mean_offset
    }

    /// Jitter actually used by the factorization.
    pub fn jitter_used(&self) -> Option<f64> {
        self.factor.as_ref().map(|f| f.jitter)
    }

    pub fn posterior_at(&self, x: &[f64]) -> Result<Posterior> {
        let factor = self
            .factor
            .as_ref()
            .ok_or_else(|| Error::Usage("posterior queried on an unfitted GP".into()))?;
        if x.len() != self.dim {
            return Err(Error::Usage(format!(
                "query has dimension {}, model expects {}",
                x.len(),
                self.dim
            )));
        }
        let prior_var = self.kernel.eval(x, x);
        if self.points.is_empty() {
            return Ok(Posterior {
                mean: self.mean_offset,
                std: prior_var.sqrt(),
            });
        }
        let kx = DVector::from_iterator(
            self.points.len(),
            self.points.iter().map(|p| self.kernel.eval(p, x)),
        );
        let mean = self.mean_offset + kx.dot(&factor.weights);
        let v = factor
            .lower
            .solve_lower_triangular(&kx)
            .ok_or_else(|| Error::Numerical("singular Cholesky factor".into()))?;
        let var = (prior_var - v.dot(&v)).max(0.0);
        Ok(Posterior {
            mean,
            std: var.sqrt(),
        })
    }

    /// Exact log marginal likelihood of the conditioned data.
    pub fn log_marginal_likelihood(&self) -> Result<f64> {
        let factor = self
            .factor
            .as_ref()
            .ok_or_else(|| Error::Usage("log marginal likelihood of an unfitted GP".into()))?;
        let residuals = DVector::from_iterator(
            self.observations.len(),
            self.observations.iter().map(|y| y - self.mean_offset),
        );
        Ok(lml_from_factor(factor, &residuals))
    }
}

fn lml_from_factor(factor: &Factor, residuals: &DVector<f64>) -> f64 {
    let n = residuals.len() as f64;
    let log_det: f64 = factor.lower.diagonal().iter().map(|l| l.ln()).sum::<f64>() * 2.0;
    -0.5 * residuals.dot(&factor.weights) - 0.5 * log_det - 0.5 * n * (2.0 * std::f64::consts::PI).ln()
}

fn check_data(points: &[Vec<f64>], observations: &[f64], dim: usize) -> Result<()> {
    if points.len() != observations.len() {
        return Err(Error::Usage(format!(
            "{} points but {} observations",
            points.len(),
            observations.len()
        )));
    }
    if let Some(p) = points.iter().find(|p| p.len() != dim) {
        return Err(Error::Usage(format!(
            "point of dimension {} in a {dim}-dimensional model",
            p.len()
        )));
    }
    if observations.iter().any(|y| !y.is_finite()) {
        return Err(Error::Data("non-finite observation".into()));
    }
    Ok(())
}

/// Log marginal likelihood of mean-centered `residuals` under `params`, or
/// `None` when the covariance cannot be factorized.
pub fn log_marginal_likelihood(
    points: &[Vec<f64>],
    residuals: &[f64],
    params: &KernelParams,
) -> Option<f64> {
    let r = DVector::from_column_slice(residuals);
    factorize(points, &r, params)
        .ok()
        .map(|f| lml_from_factor(&f, &r))
}

/// Inclusive search box for hyperparameter fitting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitBounds {
    pub length_scale: (f64, f64),
    pub signal_variance: (f64, f64),
    pub noise_variance: (f64, f64),
}

impl Default for FitBounds {
    fn default() -> Self {
        FitBounds {
            length_scale: (1e-2, 10.0),
            signal_variance: (1e-2, 1e2),
            noise_variance: (1e-6, 1.0),
        }
    }
}

impl FitBounds {
    fn log_box(&self, dim: usize) -> Vec<(f64, f64)> {
        let ln = |(lo, hi): (f64, f64)| (lo.ln(), hi.ln());
        let mut b = vec![ln(self.length_scale); dim];
        b.push(ln(self.signal_variance));
        b.push(ln(self.noise_variance));
        b
    }

    /// Draws kernel parameters log-uniformly inside the bounds.
    pub fn sample<R: Rng + ?Sized>(&self, nu: Smoothness, dim: usize, rng: &mut R) -> KernelParams {
        let v: Vec<f64> = self
            .log_box(dim)
            .iter()
            .map(|&(lo, hi)| rng.random_range(lo..=hi))
            .collect();
        params_from_log(nu, &v)
    }
}

fn params_from_log(nu: Smoothness, v: &[f64]) -> KernelParams {
    let dim = v.len() - 2;
    KernelParams {
        nu,
        length_scales: v[..dim].iter().map(|x| x.exp()).collect(),
        signal_variance: v[dim].exp(),
        noise_variance: v[dim + 1].exp(),
        jitter: DEFAULT_JITTER,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub nu: Smoothness,
    pub bounds: FitBounds,
    pub n_starts: usize,
    /// Hill-climbing iterations after each random start.
    pub local_steps: usize,
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            nu: Smoothness::FiveHalves,
            bounds: FitBounds::default(),
            n_starts: 32,
            local_steps: 24,
            seed: 0,
        }
    }
}

/// Fits kernel hyperparameters by maximizing the log marginal likelihood.
///
/// The prior mean is the sample mean of the observations. Each of the
/// `n_starts` log-uniform random starts is refined by a (1+1) hill climb in
/// log-parameter space, clamped to the bounds.
pub fn fit(points: Vec<Vec<f64>>, observations: Vec<f64>, options: &FitOptions) -> Result<GpModel> {
    if observations.is_empty() {
        return Err(Error::Usage("fit needs at least one observation".into()));
    }
    let dim = points[0].len();
    check_data(&points, &observations, dim)?;
    let mean = observations.iter().sum::<f64>() / observations.len() as f64;
    let residuals: Vec<f64> = observations.iter().map(|y| y - mean).collect();

    let bounds = options.bounds.log_box(dim);
    let mut rng = rng_from_seed(options.seed);
    let objective = |v: &[f64]| {
        log_marginal_likelihood(&points, &residuals, &params_from_log(options.nu, v))
            .filter(|l| l.is_finite())
    };

    let mut best: Option<(f64, Vec<f64>)> = None;
    for _ in 0..options.n_starts.max(1) {
        let mut current: Vec<f64> = bounds
            .iter()
            .map(|&(lo, hi)| rng.random_range(lo..=hi))
            .collect();
        let mut current_value = objective(&current);
        let mut step = 0.5;
        for _ in 0..options.local_steps {
            let candidate: Vec<f64> = current
                .iter()
                .zip(&bounds)
                .map(|(&x, &(lo, hi))| {
                    let z: f64 = rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng);
                    (x + step * z).clamp(lo, hi)
                })
                .collect();
            let value = objective(&candidate);
            match (value, current_value) {
                (Some(v), Some(c)) if v <= c => step *= 0.7,
                (None, _) => step *= 0.7,
                _ => {
                    current = candidate;
                    current_value = value;
                    step *= 1.2;
                }
            }
        }
        if let Some(v) = current_value {
            if best.as_ref().is_none_or(|(b, _)| v > *b) {
                best = Some((v, current));
            }
        }
    }
    let (_, v) = best.ok_or_else(|| {
        Error::Numerical("no hyperparameter candidate gave a factorizable covariance".into())
    })?;
    GpModel::condition(points, observations, params_from_log(options.nu, &v), mean)
}
