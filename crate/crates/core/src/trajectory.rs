//! The recursive approximating density `g` of the first `k` steps of a
//! conditioned walk, and the exact Gaussian conditional oracle.
//!
//! Step `i` (0-based) approximates the law of `Y_{i+1}` given the consumed
//! statistic `partial = w(y_1) + ... + w(y_i)`, where `w` is the identity in
//! sum mode and `u` in function mode:
//!
//! ```text
//! g(y) = C_i n_s(w(y); beta alpha + center, beta) p_X(y)
//! m_i = (target - partial) / (n - i),  m(t_i) = m_i
//! beta = (n - i - 1) kappa_i,  alpha = t_i + kappa_i^{-2} gamma / (2 (n - i - 1))
//! ```

use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{NormalDensity, Matrix, Tensor, Vector};
use crate::model::{pushforward_model, CumulantModel, UMap};
use crate::stats::{substream, LogMean};
use crate::tilt::{sample_u_tilted, solve_tilt_from, SolveOptions, TiltSolution};

/// What the walk is conditioned on.
#[derive(Debug, Clone)]
pub enum Mode {
    /// `S_{1,n} = target`.
    Sum,
    /// `U_{1,n} = sum_i u(X_i) = target`.
    Function(UMap),
}

/// A conditioning problem: `n`, run length `k`, the target statistic and the
/// base law.
#[derive(Debug, Clone)]
pub struct ConditioningSpec {
    pub mode: Mode,
    pub n: usize,
    pub k: usize,
    pub target: Vector,
    pub model: CumulantModel,
    u_model: CumulantModel,
    umap: UMap,
    /// Non-fatal guard messages (short remaining horizon `n - k`).
    pub warnings: Vec<String>,
}

impl ConditioningSpec {
    pub fn sum(model: CumulantModel, n: usize, k: usize, target: Vector) -> Result<Self> {
        Self::new(model, Mode::Sum, n, k, target)
    }

    pub fn function(model: CumulantModel, umap: UMap, n: usize, k: usize, target: Vector) -> Result<Self> {
        Self::new(model, Mode::Function(umap), n, k, target)
    }

    pub fn new(model: CumulantModel, mode: Mode, n: usize, k: usize, target: Vector) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidInput(format!("n must be at least 2, got {n}")));
        }
        if k < 1 || k >= n {
            return Err(Error::InvalidInput(format!("k must satisfy 1 <= k <= n - 1, got k = {k}, n = {n}")));
        }
        let umap = match &mode {
            Mode::Sum => UMap::Identity,
            Mode::Function(u) => u.clone(),
        };
        if let UMap::Linear(a) = &umap {
            if a.ncols() != model.dim() {
                return Err(Error::DimensionMismatch {
                    expected: model.dim(),
                    got: a.ncols(),
                });
            }
        }
        let u_model = pushforward_model(&model, &umap)?;
        if target.len() != u_model.dim() {
            return Err(Error::DimensionMismatch {
                expected: u_model.dim(),
                got: target.len(),
            });
        }
        let m0 = &target / n as f64;
        if !u_model.mean_attainable(&m0) {
            return Err(Error::InvalidInput(format!(
                "target / n = {:?} is not an attainable mean",
                m0.as_slice()
            )));
        }
        let mut spec = Self {
            mode,
            n,
            k,
            target,
            model,
            u_model,
            umap,
            warnings: Vec::new(),
        };
        spec.warnings = spec.guard_warnings();
        Ok(spec)
    }

    fn guard_warnings(&self) -> Vec<String> {
        let rest = self.n - self.k;
        let mut out = Vec::new();
        if rest < 3 {
            out.push(format!("n - k = {rest} < 3: few remaining steps"));
        }
        let ln = (self.n as f64).ln();
        if (rest as f64) < ln * ln {
            out.push(format!("n - k = {rest} < (log n)^2 = {:.2}", ln * ln));
        }
        out
    }

    /// The same problem with a different run length.
    pub fn with_k(&self, k: usize) -> Result<Self> {
        Self::new(self.model.clone(), self.mode.clone(), self.n, k, self.target.clone())
    }

    /// Dimension `d` of the steps.
    pub fn dim(&self) -> usize {
        self.model.dim()
    }

    /// Dimension `s` of the conditioning statistic.
    pub fn stat_dim(&self) -> usize {
        self.u_model.dim()
    }

    /// The law of `U = u(X)` (the base law in sum mode).
    pub fn u_model(&self) -> &CumulantModel {
        &self.u_model
    }

    pub fn umap(&self) -> &UMap {
        &self.umap
    }

    /// `w(y)`: `y` in sum mode, `u(y)` in function mode.
    pub fn statistic(&self, y: &Vector) -> Vector {
        self.umap.apply(y)
    }

    /// `m_0 = target / n`.
    pub fn m0(&self) -> Vector {
        &self.target / self.n as f64
    }
}

/// How the per-step target mean is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StepMeanRule {
    /// `(target - partial) / (n - i)`.
    #[default]
    Remaining,
    /// `n/(n-1) (target/n - partial/n) = (target - partial) / (n - 1)`.
    Literal,
}

/// Centre of the Gaussian factor, `beta alpha + center`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CenterRule {
    /// The current step mean `m_i` (exact for Gaussian walks).
    #[default]
    StepMean,
    /// The fixed `m_0 = target / n`.
    Target,
}

/// The density used for the first step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FirstStepRule {
    /// The recursive kernel at `i = 0`.
    #[default]
    Kernel,
    /// The tilted law `pi^{m_0}`.
    Tilted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NormalizationMethod {
    /// Closed form when available, Monte Carlo otherwise.
    #[default]
    Auto,
    MonteCarlo,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizationOptions {
    pub method: NormalizationMethod,
    /// Monte-Carlo draws per step (at least 1000).
    pub budget: usize,
    /// Step `i` uses substream `i` of this seed, so that re-evaluating a
    /// trajectory reproduces its constants exactly.
    pub seed: u64,
}

impl Default for NormalizationOptions {
    fn default() -> Self {
        Self {
            method: NormalizationMethod::Auto,
            budget: 10_000,
            seed: 0x6e6f_726d,
        }
    }
}

pub const MIN_NORMALIZATION_BUDGET: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GOptions {
    pub step_mean: StepMeanRule,
    pub center: CenterRule,
    pub first_step: FirstStepRule,
    pub normalization: NormalizationOptions,
    pub solve: SolveOptions,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepNormalization {
    pub log_c: f64,
    /// Standard error of `log_c`; zero when analytic.
    pub se: f64,
    pub analytic: bool,
}

/// Per-step ingredients of `g`.
#[derive(Debug, Clone)]
pub struct StepKernel {
    pub i: usize,
    pub m_i: Vector,
    pub t_i: Vector,
    /// `K_U(t_i)`.
    pub log_phi: f64,
    pub kappa_i: Matrix,
    pub c3_i: Tensor,
    pub gamma_i: Vector,
    pub alpha_vec: Vector,
    pub beta_mat: Matrix,
    pub center: Vector,
    pub iterations: usize,
    pub normalization: Option<StepNormalization>,
    factor: NormalDensity,
}

impl StepKernel {
    /// The Gaussian factor `n_s(.; beta alpha + center, beta)`.
    pub fn gaussian_factor(&self) -> &NormalDensity {
        &self.factor
    }

    pub fn log_c(&self) -> Option<f64> {
        self.normalization.map(|n| n.log_c)
    }

    /// `log n_s(w; beta alpha + center, beta)`.
    pub fn log_factor(&self, w: &Vector) -> f64 {
        self.factor.log_density(w)
    }

    /// `log (g / p_X)` at a point with statistic `w`.
    pub fn log_ratio(&self, w: &Vector) -> Result<f64> {
        let norm = self
            .normalization
            .ok_or_else(|| Error::InvalidInput(format!("kernel {} is not normalized", self.i)))?;
        Ok(norm.log_c + self.log_factor(w))
    }
}

/// The factor of `g` for one step: the recursive kernel or, for the literal
/// first step, the tilted law at `m_0`.
#[derive(Debug, Clone)]
pub enum StepFactor {
    Kernel(StepKernel),
    Tilted(TiltSolution),
}

impl StepFactor {
    /// The U-space tilt of this step.
    pub fn t(&self) -> &Vector {
        match self {
            StepFactor::Kernel(k) => &k.t_i,
            StepFactor::Tilted(s) => &s.t,
        }
    }

    /// `log (g / p_X)` at a point with statistic `w`.
    pub fn log_ratio(&self, w: &Vector) -> Result<f64> {
        match self {
            StepFactor::Kernel(k) => k.log_ratio(w),
            StepFactor::Tilted(s) => Ok(s.t.dot(w) - s.log_phi),
        }
    }

    pub fn normalization_se(&self) -> f64 {
        match self {
            StepFactor::Kernel(k) => k.normalization.map_or(0.0, |n| n.se),
            StepFactor::Tilted(_) => 0.0,
        }
    }
}

/// A sampled (or supplied) prefix `y_1..y_k` of the walk.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub steps: Vec<Vector>,
    /// `sum_j w(y_j)` over the recorded steps.
    pub partial: Vector,
    pub log_g: Option<f64>,
    pub per_step_logs: Vec<f64>,
}

/// `m_i` for step `i` given the consumed statistic.
pub fn step_target(spec: &ConditioningSpec, partial: &Vector, i: usize, rule: StepMeanRule) -> Result<Vector> {
    if i >= spec.k {
        return Err(Error::InvalidInput(format!("step {i} is outside 0..{}", spec.k)));
    }
    if partial.len() != spec.stat_dim() {
        return Err(Error::DimensionMismatch {
            expected: spec.stat_dim(),
            got: partial.len(),
        });
    }
    let denom = match rule {
        StepMeanRule::Remaining => spec.n - i,
        StepMeanRule::Literal => spec.n - 1,
    };
    let m = (&spec.target - partial) / denom as f64;
    if !spec.u_model.mean_attainable(&m) {
        return Err(Error::DriftedOutOfDomain {
            step: i,
            mean: m.iter().copied().collect(),
        });
    }
    Ok(m)
}

fn solve_at(spec: &ConditioningSpec, m: &Vector, i: usize, warm_t: Option<&Vector>, solve: &SolveOptions) -> Result<TiltSolution> {
    let start = warm_t.filter(|t| spec.u_model.domain().contains(t));
    solve_tilt_from(&spec.u_model, m, start, solve).map_err(|e| match e {
        Error::TiltOutOfDomain { .. } => Error::DriftedOutOfDomain {
            step: i,
            mean: m.iter().copied().collect(),
        },
        e => e,
    })
}

/// Solves the tilt at `m_i` and assembles the kernel; `log C_i` is left empty.
pub fn assemble_step_kernel(
    spec: &ConditioningSpec,
    partial: &Vector,
    i: usize,
    warm_t: Option<&Vector>,
    opts: &GOptions,
) -> Result<StepKernel> {
    let m_i = step_target(spec, partial, i, opts.step_mean)?;
    let sol = solve_at(spec, &m_i, i, warm_t, &opts.solve)?;
    let s = spec.stat_dim();
    let c3_i = spec.u_model.third_cumulant(&sol.t)?;
    let gamma_i = Vector::from_fn(s, |p, _| (0..s).map(|j| c3_i.get(&[j, j, p])).sum());
    let rest = (spec.n - i - 1) as f64;
    let kinv = crate::linalg::spd_inverse(&sol.kappa)?;
    let alpha_vec = &sol.t + &kinv * (&kinv * &gamma_i) / (2.0 * rest);
    let beta_mat = &sol.kappa * rest;
    let center = match opts.center {
        CenterRule::StepMean => m_i.clone(),
        CenterRule::Target => spec.m0(),
    };
    let factor = NormalDensity::new(&beta_mat * &alpha_vec + &center, &beta_mat)?;
    Ok(StepKernel {
        i,
        m_i,
        t_i: sol.t,
        log_phi: sol.log_phi,
        kappa_i: sol.kappa,
        c3_i,
        gamma_i,
        alpha_vec,
        beta_mat,
        center,
        iterations: sol.iterations,
        normalization: None,
        factor,
    })
}

/// `C_i^{-1} = int n_s(w(y); beta alpha + center, beta) p_X(y) dy`.
///
/// Gaussian base laws with identity or linear `u` use the convolution
/// `n_s(mu; A mu_X, beta + A Sigma A^T)`. Otherwise the integral is estimated
/// by importance sampling from `pi_u^{m_i}`, whose ratio to `p_X` is
/// `exp(<t_i, u(y)> - K_U(t_i))`.
pub fn normalize_step<R: Rng + ?Sized>(
    spec: &ConditioningSpec,
    kernel: &StepKernel,
    opts: &NormalizationOptions,
    rng: &mut R,
) -> Result<StepNormalization> {
    if opts.method == NormalizationMethod::Auto {
        if let Some(log_c) = analytic_log_c(spec, kernel)? {
            return Ok(StepNormalization {
                log_c,
                se: 0.0,
                analytic: true,
            });
        }
    }
    if opts.budget < MIN_NORMALIZATION_BUDGET {
        return Err(Error::InvalidInput(format!(
            "normalization budget {} is below {MIN_NORMALIZATION_BUDGET}",
            opts.budget
        )));
    }
    let mut logs = Vec::with_capacity(opts.budget);
    for _ in 0..opts.budget {
        let y = sample_u_tilted(&spec.model, &spec.umap, &kernel.t_i, rng)?;
        let w = spec.statistic(&y);
        logs.push(kernel.log_factor(&w) + kernel.log_phi - kernel.t_i.dot(&w));
    }
    let est = LogMean::from_logs(&logs);
    if !est.log_mean.is_finite() {
        return Err(Error::NormalizationFailed(format!(
            "step {}: zero effective sample size over {} draws",
            kernel.i, opts.budget
        )));
    }
    Ok(StepNormalization {
        log_c: -est.log_mean,
        se: est.rel_se,
        analytic: false,
    })
}

fn analytic_log_c(spec: &ConditioningSpec, kernel: &StepKernel) -> Result<Option<f64>> {
    let Some(g) = spec.model.as_gaussian() else {
        return Ok(None);
    };
    let (mean, cov) = match &spec.umap {
        UMap::Identity => (g.mean.clone(), g.cov.clone()),
        UMap::Linear(a) => (a * &g.mean, a * &g.cov * a.transpose()),
        UMap::Custom { .. } => return Ok(None),
    };
    let total = &kernel.beta_mat + cov;
    let total = 0.5 * (&total + total.transpose());
    let conv = NormalDensity::new(mean, &total)?;
    Ok(Some(-conv.log_density(&kernel.factor.mean)))
}

/// Assembles and normalizes the kernel for step `i`; the Monte-Carlo path
/// uses substream `i` of the configured normalization seed.
pub fn build_step_kernel(
    spec: &ConditioningSpec,
    partial: &Vector,
    i: usize,
    warm_t: Option<&Vector>,
    opts: &GOptions,
) -> Result<StepKernel> {
    let mut kernel = assemble_step_kernel(spec, partial, i, warm_t, opts)?;
    let mut rng = substream(opts.normalization.seed, i as u64);
    kernel.normalization = Some(normalize_step(spec, &kernel, &opts.normalization, &mut rng)?);
    Ok(kernel)
}

/// The factor of `g` for step `i`, optionally without `log C_i`.
pub fn step_factor(
    spec: &ConditioningSpec,
    partial: &Vector,
    i: usize,
    warm_t: Option<&Vector>,
    opts: &GOptions,
    normalize: bool,
) -> Result<StepFactor> {
    if i == 0 && opts.first_step == FirstStepRule::Tilted {
        let m0 = step_target(spec, partial, 0, opts.step_mean)?;
        return Ok(StepFactor::Tilted(solve_at(spec, &m0, 0, warm_t, &opts.solve)?));
    }
    Ok(StepFactor::Kernel(if normalize {
        build_step_kernel(spec, partial, i, warm_t, opts)?
    } else {
        assemble_step_kernel(spec, partial, i, warm_t, opts)?
    }))
}

/// `log C_i + log n_s(w(y); beta alpha + center, beta) + log p_X(y)`.
pub fn step_log_density(kernel: &StepKernel, spec: &ConditioningSpec, y: &Vector) -> Result<f64> {
    let base = spec.model.log_density(y)?;
    if base == f64::NEG_INFINITY {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(kernel.log_ratio(&spec.statistic(y))? + base)
}

/// Log of `g` and of `g / p_X` along a given prefix.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryEvaluation {
    /// `log g(y_1..y_k)`; absent when only the ratio was requested.
    pub log_g: Option<f64>,
    pub per_step: Vec<f64>,
    /// `log (g / p_X^{(k)})(y_1..y_k)`.
    pub log_ratio: f64,
    pub per_step_ratio: Vec<f64>,
    /// Standard errors of the per-step `log C_i`.
    pub normalization_se: Vec<f64>,
    pub partial: Vector,
}

fn evaluate(spec: &ConditioningSpec, steps: &[Vector], opts: &GOptions, with_base: bool) -> Result<TrajectoryEvaluation> {
    if steps.len() != spec.k {
        return Err(Error::InvalidInput(format!(
            "trajectory has {} steps, expected k = {}",
            steps.len(),
            spec.k
        )));
    }
    let s = spec.stat_dim();
    let mut partial = Vector::zeros(s);
    let mut warm: Option<Vector> = None;
    let mut per_step = Vec::new();
    let mut per_step_ratio = Vec::with_capacity(spec.k);
    let mut normalization_se = Vec::with_capacity(spec.k);
    for (i, y) in steps.iter().enumerate() {
        let eval = || -> Result<(f64, Option<f64>, f64, Vector)> {
            if y.len() != spec.dim() {
                return Err(Error::DimensionMismatch {
                    expected: spec.dim(),
                    got: y.len(),
                });
            }
            let factor = step_factor(spec, &partial, i, warm.as_ref(), opts, true)?;
            let w = spec.statistic(y);
            let ratio = factor.log_ratio(&w)?;
            let full = if with_base {
                let base = spec.model.log_density(y)?;
                Some(if base == f64::NEG_INFINITY { base } else { ratio + base })
            } else {
                None
            };
            Ok((ratio, full, factor.normalization_se(), factor.t().clone()))
        };
        let (ratio, full, se, t) = eval().map_err(|e| e.at_step(i))?;
        per_step_ratio.push(ratio);
        if let Some(f) = full {
            per_step.push(f);
        }
        normalization_se.push(se);
        partial += spec.statistic(y);
        warm = Some(t);
    }
    Ok(TrajectoryEvaluation {
        log_g: with_base.then(|| per_step.iter().sum()),
        per_step,
        log_ratio: per_step_ratio.iter().sum(),
        per_step_ratio,
        normalization_se,
        partial,
    })
}

/// `log g(y_1..y_k)`, rebuilding every kernel along the given prefix.
pub fn trajectory_log_density(spec: &ConditioningSpec, steps: &[Vector], opts: &GOptions) -> Result<TrajectoryEvaluation> {
    evaluate(spec, steps, opts, true)
}

/// `log (g / p_X)(y_1..y_k)`; does not need the base density.
pub fn trajectory_log_ratio(spec: &ConditioningSpec, steps: &[Vector], opts: &GOptions) -> Result<TrajectoryEvaluation> {
    evaluate(spec, steps, opts, false)
}

/// Exact `log p(X_1..X_k = y | S_{1,n} = target)` for a Gaussian walk, by
/// sequential conditioning:
/// `X_{i+1} | r ~ N(r / (n - i), (n - i - 1) / (n - i) Sigma)` with `r` the
/// remaining sum.
pub fn exact_gaussian_conditional_log_density(spec: &ConditioningSpec, steps: &[Vector]) -> Result<f64> {
    let g = spec
        .model
        .as_gaussian()
        .ok_or_else(|| Error::Unsupported("exact conditional density needs a Gaussian model".into()))?;
    if !spec.umap.is_identity() {
        return Err(Error::Unsupported("exact conditional density needs sum mode".into()));
    }
    if steps.len() != spec.k {
        return Err(Error::InvalidInput(format!(
            "trajectory has {} steps, expected k = {}",
            steps.len(),
            spec.k
        )));
    }
    let mut remaining = spec.target.clone();
    let mut total = 0.0;
    for (i, y) in steps.iter().enumerate() {
        let left = (spec.n - i) as f64;
        let mean = &remaining / left;
        let density = NormalDensity::new(mean, &(&g.cov * ((left - 1.0) / left)))?;
        total += density.log_density(y);
        remaining -= y;
    }
    Ok(total)
}
