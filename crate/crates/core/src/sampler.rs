//! Drawing trajectories from `g`: per-step acceptance-rejection against the
//! base law in the typical regime, random-walk Metropolis otherwise.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{cholesky, Vector};
use crate::stats::{substream, Stream};
use crate::tilt::{sample_u_tilted, x_space_tilted_moments};
use crate::trajectory::{step_factor, ConditioningSpec, GOptions, StepFactor, StepKernel, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SamplingMethod {
    /// Acceptance-rejection, switching to MCMC for the rest of a trajectory
    /// once a step starves.
    #[default]
    Auto,
    AcceptReject,
    Mcmc,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McmcConfig {
    pub chain_length: usize,
    pub burn_in: usize,
    /// Multiplier of the proposal's Cholesky factor; `None` means `2.38/sqrt(d)`.
    pub proposal_scale: Option<f64>,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self {
            chain_length: 400,
            burn_in: 200,
            proposal_scale: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerConfig {
    pub method: SamplingMethod,
    pub ar_max_tries: usize,
    pub mcmc: McmcConfig,
    pub seed: u64,
    /// Compute `log g` along the way (needs every `C_i`).
    pub evaluate_density: bool,
    /// Redraws allowed when a trajectory leaves the attainable region
    /// (e.g. a positive walk overshooting its target) before reaching `k`.
    pub max_restarts: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            method: SamplingMethod::Auto,
            ar_max_tries: 10_000,
            mcmc: McmcConfig::default(),
            seed: 0,
            evaluate_density: true,
            max_restarts: 100,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ar_max_tries < 1 {
            return Err(Error::InvalidInput("ar_max_tries must be at least 1".into()));
        }
        if self.mcmc.chain_length <= self.mcmc.burn_in {
            return Err(Error::InvalidInput(format!(
                "chain_length ({}) must exceed burn_in ({})",
                self.mcmc.chain_length, self.mcmc.burn_in
            )));
        }
        if let Some(s) = self.mcmc.proposal_scale {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::InvalidInput(format!("proposal scale must be positive, got {s}")));
            }
        }
        Ok(())
    }
}

/// How one step was drawn.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepMethod {
    Tilted,
    AcceptReject { tries: usize },
    Mcmc { acceptance: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampledTrajectory {
    pub trajectory: Trajectory,
    /// `log (g / p_X)` of the prefix, when densities were evaluated.
    pub log_ratio: Option<f64>,
    pub steps: Vec<StepMethod>,
    /// Earlier draws of this trajectory discarded for leaving the domain.
    pub restarts: usize,
}

impl SampledTrajectory {
    /// Whether any step fell back to MCMC.
    pub fn used_mcmc(&self) -> bool {
        self.steps.iter().any(|s| matches!(s, StepMethod::Mcmc { .. }))
    }
}

/// Proposes `y ~ p_X` and accepts with probability
/// `n_s(w(y); mu, beta) / sup n_s = exp(-|w(y) - mu|^2_beta / 2)`.
pub fn sample_step_ar<R: Rng + ?Sized>(
    kernel: &StepKernel,
    spec: &ConditioningSpec,
    rng: &mut R,
    max_tries: usize,
) -> Result<(Vector, usize)> {
    let factor = kernel.gaussian_factor();
    let mut prob_sum = 0.0;
    for tries in 1..=max_tries {
        let y = spec.model.sample(rng);
        let w = spec.statistic(&y);
        let p = (-0.5 * factor.mahalanobis2(&w)).exp();
        prob_sum += p;
        if rng.random::<f64>() < p {
            return Ok((y, tries));
        }
    }
    Err(Error::ArStarved {
        tries: max_tries,
        rate: prob_sum / max_tries as f64,
    })
}

/// Random-walk Metropolis on `log n_s(w(y); mu, beta) + log p_X(y)`, started
/// at the tilted mean of `X` for `t_i` with proposal covariance
/// `scale^2 kappa_X(t_i)`. Returns the final state and the acceptance ratio.
pub fn sample_step_mcmc<R: Rng + ?Sized>(
    kernel: &StepKernel,
    spec: &ConditioningSpec,
    rng: &mut R,
    cfg: &McmcConfig,
) -> Result<(Vector, f64)> {
    let d = spec.dim();
    let (start, cov) = x_space_tilted_moments(&spec.model, spec.umap(), &kernel.t_i)?;
    let scale = cfg.proposal_scale.unwrap_or(2.38 / (d as f64).sqrt());
    let chol = cholesky(&cov)?.l() * scale;
    let log_target = |y: &Vector| -> Result<f64> {
        let base = spec.model.log_density(y)?;
        Ok(if base == f64::NEG_INFINITY {
            base
        } else {
            base + kernel.log_factor(&spec.statistic(y))
        })
    };
    let mut x = start;
    let mut lp = log_target(&x)?;
    if !lp.is_finite() {
        for _ in 0..1000 {
            x = spec.model.sample(rng);
            lp = log_target(&x)?;
            if lp.is_finite() {
                break;
            }
        }
        if !lp.is_finite() {
            return Err(Error::NoSampler("no MCMC starting point with positive density".into()));
        }
    }
    let total = cfg.burn_in + cfg.chain_length;
    let mut accepted = 0usize;
    for _ in 0..total {
        let z = Vector::from_fn(d, |_, _| StandardNormal.sample(rng));
        let prop = &x + &chol * z;
        let lq = log_target(&prop)?;
        if (1.0 - rng.random::<f64>()).ln() < lq - lp {
            x = prop;
            lp = lq;
            accepted += 1;
        }
    }
    let acceptance = accepted as f64 / total.max(1) as f64;
    if !(0.1..=0.6).contains(&acceptance) {
        log::debug!("step {}: MCMC acceptance {acceptance:.3} outside [0.1, 0.6]", kernel.i);
    }
    Ok((x, acceptance))
}

/// Draws `y_1..y_k` from `g` step by step. A draw whose remaining mean
/// becomes unattainable, at any step up to and including `k`, is discarded
/// and redrawn from the same stream, at most `cfg.max_restarts` times. The
/// result follows `g` restricted to the support of the conditional law.
pub fn sample_trajectory<R: Rng + ?Sized>(
    spec: &ConditioningSpec,
    opts: &GOptions,
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<SampledTrajectory> {
    cfg.validate()?;
    let mut restarts = 0;
    loop {
        let drawn = draw_trajectory(spec, opts, cfg, rng, false).and_then(|t| {
            let rest = (spec.n - spec.k) as f64;
            let m_k = (&spec.target - &t.trajectory.partial) / rest;
            if spec.u_model().mean_attainable(&m_k) {
                Ok(t)
            } else {
                Err(Error::DriftedOutOfDomain {
                    step: spec.k,
                    mean: m_k.as_slice().to_vec(),
                })
            }
        });
        match drawn {
            Ok(mut t) => {
                t.restarts = restarts;
                return Ok(t);
            }
            Err(e) if matches!(e.root(), Error::DriftedOutOfDomain { .. }) && restarts < cfg.max_restarts => {
                log::debug!("redrawing trajectory: {e}");
                restarts += 1;
            }
            Err(e) => return Err(e),
        }
    }
}

/// Like [`sample_trajectory`], but a draw that leaves the attainable region
/// is returned as is: its `steps` stop before the step whose kernel does not
/// exist, and densities cover only the returned steps.
pub fn sample_prefix<R: Rng + ?Sized>(
    spec: &ConditioningSpec,
    opts: &GOptions,
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<SampledTrajectory> {
    cfg.validate()?;
    draw_trajectory(spec, opts, cfg, rng, true)
}

fn draw_trajectory<R: Rng + ?Sized>(
    spec: &ConditioningSpec,
    opts: &GOptions,
    cfg: &SamplerConfig,
    rng: &mut R,
    stop_on_drift: bool,
) -> Result<SampledTrajectory> {
    let s = spec.stat_dim();
    let mut partial = Vector::zeros(s);
    let mut warm: Option<Vector> = None;
    let mut steps = Vec::with_capacity(spec.k);
    let mut methods = Vec::with_capacity(spec.k);
    let mut per_step = Vec::new();
    let mut per_step_ratio = Vec::new();
    let mut use_mcmc = cfg.method == SamplingMethod::Mcmc;
    for i in 0..spec.k {
        let mut step = || -> Result<(Vector, StepMethod, Option<(f64, f64)>, Vector)> {
            let factor = step_factor(spec, &partial, i, warm.as_ref(), opts, cfg.evaluate_density)?;
            let (y, method) = match &factor {
                StepFactor::Tilted(sol) => (sample_u_tilted(&spec.model, spec.umap(), &sol.t, rng)?, StepMethod::Tilted),
                StepFactor::Kernel(kernel) => {
                    let ar = if use_mcmc {
                        None
                    } else {
                        match sample_step_ar(kernel, spec, rng, cfg.ar_max_tries) {
                            Ok((y, tries)) => Some((y, StepMethod::AcceptReject { tries })),
                            Err(e @ Error::ArStarved { .. }) if cfg.method == SamplingMethod::Auto => {
                                log::debug!("step {i}: {e}; switching to MCMC");
                                use_mcmc = true;
                                None
                            }
                            Err(e) => return Err(e),
                        }
                    };
                    match ar {
                        Some(r) => r,
                        None => {
                            let (y, acceptance) = sample_step_mcmc(kernel, spec, rng, &cfg.mcmc)?;
                            (y, StepMethod::Mcmc { acceptance })
                        }
                    }
                }
            };
            let log = if cfg.evaluate_density {
                let ratio = factor.log_ratio(&spec.statistic(&y))?;
                let base = spec.model.log_density(&y)?;
                Some((ratio, if base == f64::NEG_INFINITY { base } else { ratio + base }))
            } else {
                None
            };
            Ok((y, method, log, factor.t().clone()))
        };
        let (y, method, log, t) = match step() {
            Ok(r) => r,
            Err(e) if stop_on_drift && matches!(e.root(), Error::DriftedOutOfDomain { .. }) => break,
            Err(e) => return Err(e.at_step(i)),
        };
        partial += spec.statistic(&y);
        steps.push(y);
        methods.push(method);
        if let Some((r, l)) = log {
            per_step_ratio.push(r);
            per_step.push(l);
        }
        warm = Some(t);
    }
    let log_g = cfg.evaluate_density.then(|| per_step.iter().sum());
    Ok(SampledTrajectory {
        trajectory: Trajectory {
            steps,
            partial,
            log_g,
            per_step_logs: per_step,
        },
        log_ratio: cfg.evaluate_density.then(|| per_step_ratio.iter().sum()),
        steps: methods,
        restarts: 0,
    })
}

/// The random stream of trajectory `index` in a batch.
pub fn trajectory_stream(seed: u64, index: usize) -> Stream {
    substream(seed, index as u64)
}

/// Draws `count` trajectories on `workers` threads (0 = all cores). Each
/// trajectory owns substream `index` of `cfg.seed`, so the result does not
/// depend on the worker count; output is ordered by index.
pub fn sample_batch(
    spec: &ConditioningSpec,
    opts: &GOptions,
    cfg: &SamplerConfig,
    count: usize,
    workers: usize,
) -> Result<Vec<SampledTrajectory>> {
    cfg.validate()?;
    let run = || {
        (0..count)
            .into_par_iter()
            .map(|index| {
                let mut rng = trajectory_stream(cfg.seed, index);
                sample_trajectory(spec, opts, cfg, &mut rng).map_err(|e| e.at_trajectory(index))
            })
            .collect::<Result<Vec<_>>>()
    };
    with_workers(workers, run)
}

/// Runs `f` on a dedicated pool of `workers` threads (0 = rayon's default).
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> T {
    if workers == 0 {
        return f();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::CumulantModel;
    use crate::stats::{ks_two_sample, mean_se};
    use crate::trajectory::{build_step_kernel, step_log_density, NormalizationOptions};
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    #[test]
    fn ar_acceptance_rate_matches_quadrature() {
        let spec = ConditioningSpec::sum(CumulantModel::standard_gaussian(1), 20, 10, v(&[0.0])).unwrap();
        let kernel = build_step_kernel(&spec, &v(&[0.0]), 0, None, &GOptions::default()).unwrap();
        let mut rng = substream(11, 0);
        let draws = 20_000;
        let mut tries = 0;
        for _ in 0..draws {
            tries += sample_step_ar(&kernel, &spec, &mut rng, 10_000).unwrap().1;
        }
        // int exp(-y^2 / 38) phi(y) dy = sqrt(19 / 20)
        let truth = (19.0f64 / 20.0).sqrt();
        let rate = draws as f64 / tries as f64;
        let se = (truth * (1.0 - truth) / tries as f64).sqrt();
        assert!((rate - truth).abs() < 3.0 * se, "{rate} vs {truth}");
    }

    #[test]
    fn ar_draws_follow_step_density() {
        let spec = ConditioningSpec::sum(CumulantModel::exponential(1.0).unwrap(), 10, 5, v(&[12.0])).unwrap();
        let kernel = build_step_kernel(&spec, &v(&[2.0]), 2, None, &GOptions::default()).unwrap();
        let h = 1e-3;
        let grid: Vec<f64> = (0..20_000).map(|j| (j as f64 + 0.5) * h).collect();
        let dens: Vec<f64> = grid
            .iter()
            .map(|&y| step_log_density(&kernel, &spec, &v(&[y])).unwrap().exp() * h)
            .collect();
        let total: f64 = dens.iter().sum();
        let mut cdf = Vec::with_capacity(grid.len());
        let mut acc = 0.0;
        for d in &dens {
            acc += d / total;
            cdf.push(acc);
        }
        let bins = 20;
        let edges: Vec<f64> = (1..bins)
            .map(|b| grid[cdf.iter().position(|&c| c >= b as f64 / bins as f64).unwrap()] + 0.5 * h)
            .collect();
        let expected: Vec<f64> = (0..bins)
            .map(|b| {
                let lo = if b == 0 { 0.0 } else { edges[b - 1] };
                let hi = if b == bins - 1 { f64::INFINITY } else { edges[b] };
                grid.iter().zip(&dens).filter(|(g, _)| **g > lo && **g <= hi).map(|(_, d)| d / total).sum()
            })
            .collect();
        let draws = 10_000;
        let mut counts = vec![0usize; bins];
        let mut rng = substream(5, 0);
        for _ in 0..draws {
            let y = sample_step_ar(&kernel, &spec, &mut rng, 10_000).unwrap().0[0];
            counts[edges.iter().filter(|&&e| y > e).count()] += 1;
        }
        let chi2: f64 = counts
            .iter()
            .zip(&expected)
            .map(|(&c, &p)| (c as f64 - draws as f64 * p).powi(2) / (draws as f64 * p))
            .sum();
        let p = 1.0 - ChiSquared::new((bins - 1) as f64).unwrap().cdf(chi2);
        assert!(p > 0.001, "chi2 {chi2}, p {p}");
    }

    #[test]
    fn ar_starves_in_the_tail() {
        let spec = ConditioningSpec::sum(CumulantModel::exponential(1.0).unwrap(), 30, 10, v(&[120.0])).unwrap();
        let opts = GOptions {
            normalization: NormalizationOptions {
                budget: 1000,
                ..Default::default()
            },
            ..Default::default()
        };
        let kernel = build_step_kernel(&spec, &v(&[0.0]), 0, None, &opts).unwrap();
        let err = sample_step_ar(&kernel, &spec, &mut substream(1, 0), 10_000).unwrap_err();
        assert!(matches!(err, Error::ArStarved { rate, .. } if rate < 1e-3));
    }

    #[test]
    fn mcmc_acceptance_and_agreement_with_ar() {
        let spec = ConditioningSpec::sum(CumulantModel::standard_gaussian(1), 20, 10, v(&[4.0])).unwrap();
        let kernel = build_step_kernel(&spec, &v(&[1.0]), 3, None, &GOptions::default()).unwrap();
        let cfg = McmcConfig::default();
        let mut rng = substream(9, 0);
        let draws = 10_000;
        let mut mcmc = Vec::with_capacity(draws);
        let mut acc = Vec::with_capacity(draws);
        for _ in 0..draws {
            let (y, a) = sample_step_mcmc(&kernel, &spec, &mut rng, &cfg).unwrap();
            mcmc.push(y[0]);
            acc.push(a);
        }
        let mean_acc = mean_se(&acc).0;
        assert!((0.1..=0.6).contains(&mean_acc), "{mean_acc}");
        let ar: Vec<f64> = (0..draws)
            .map(|_| sample_step_ar(&kernel, &spec, &mut rng, 10_000).unwrap().0[0])
            .collect();
        let (_, p) = ks_two_sample(&mcmc, &ar);
        assert!(p > 0.001, "KS p {p}");
    }

    #[test]
    fn degenerate_chain_is_deterministic() {
        let spec = ConditioningSpec::sum(CumulantModel::standard_gaussian(1), 20, 10, v(&[0.0])).unwrap();
        let kernel = build_step_kernel(&spec, &v(&[0.0]), 0, None, &GOptions::default()).unwrap();
        let cfg = McmcConfig {
            chain_length: 1,
            burn_in: 0,
            proposal_scale: None,
        };
        let a = sample_step_mcmc(&kernel, &spec, &mut substream(4, 0), &cfg).unwrap();
        let b = sample_step_mcmc(&kernel, &spec, &mut substream(4, 0), &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn config_validation() {
        let mut cfg = SamplerConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.mcmc.burn_in = 400;
        assert!(cfg.validate().is_err());
        cfg = SamplerConfig {
            ar_max_tries: 0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn gaussian_batch_is_centred_and_worker_independent() {
        let spec = ConditioningSpec::sum(CumulantModel::standard_gaussian(2), 20, 19, v(&[0.0, 0.0])).unwrap();
        let cfg = SamplerConfig {
            seed: 21,
            ..Default::default()
        };
        let opts = GOptions::default();
        let batch = sample_batch(&spec, &opts, &cfg, 10_000, 0).unwrap();
        for c in 0..2 {
            let xs: Vec<f64> = batch.iter().map(|t| t.trajectory.partial[c] / 19.0).collect();
            let (m, se) = mean_se(&xs);
            assert!(m.abs() < 3.0 * se, "coordinate {c}: {m} +- {se}");
            let first: Vec<f64> = batch.iter().map(|t| t.trajectory.steps[0][c]).collect();
            let (m, se) = mean_se(&first);
            assert!(m.abs() < 3.0 * se);
        }
        let one = sample_batch(&spec, &opts, &cfg, 64, 1).unwrap();
        let eight = sample_batch(&spec, &opts, &cfg, 64, 8).unwrap();
        assert_eq!(one, eight);
    }

    #[test]
    fn overshooting_trajectories_are_redrawn() {
        let spec = ConditioningSpec::sum(CumulantModel::exponential(1.0).unwrap(), 6, 3, v(&[6.0])).unwrap();
        let opts = GOptions::default();
        let cfg = SamplerConfig {
            seed: 3,
            evaluate_density: false,
            ..Default::default()
        };
        let batch = sample_batch(&spec, &opts, &cfg, 20_000, 0).unwrap();
        assert!(batch.iter().any(|t| t.restarts > 0));
        assert!(batch.iter().all(|t| t.trajectory.partial[0] < 6.0));
        let strict = SamplerConfig { max_restarts: 0, ..cfg };
        let err = sample_batch(&spec, &opts, &strict, 20_000, 0).unwrap_err();
        assert!(matches!(err.root(), Error::DriftedOutOfDomain { .. }), "{err}");
    }

    #[test]
    fn auto_falls_back_to_mcmc() {
        let spec = ConditioningSpec::sum(CumulantModel::exponential(1.0).unwrap(), 30, 3, v(&[120.0])).unwrap();
        let opts = GOptions {
            normalization: NormalizationOptions {
                budget: 1000,
                ..Default::default()
            },
            ..Default::default()
        };
        let cfg = SamplerConfig {
            ar_max_tries: 200,
            evaluate_density: false,
            ..Default::default()
        };
        let t = sample_trajectory(&spec, &opts, &cfg, &mut substream(2, 0)).unwrap();
        assert!(t.used_mcmc());
        let strict = SamplerConfig {
            method: SamplingMethod::AcceptReject,
            ..cfg
        };
        let err = sample_trajectory(&spec, &opts, &strict, &mut substream(2, 0)).unwrap_err();
        assert!(matches!(err, Error::AtStep { step: 0, .. }));
    }
}
