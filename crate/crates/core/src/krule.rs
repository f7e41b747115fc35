//! Monte-Carlo rule for choosing the run length `k`.
//!
//! For `Y_1^k` drawn i.i.d. from `p_X`, the relative error `1 - R` with
//! `R = g / p_c` (`p_c` the true conditional density) is summarised by
//! `ERE = 1 - E_g R` and `VRE = Var_g R`. The unknown `p_c` comes from the
//! Bayes identity and the saddlepoint density of the sample mean:
//!
//! ```text
//! p_c / p_X = (n / (n - k))^{s/2} (D / N) (|Sigma(t_0)| / |Sigma(t_k)|)^{1/2}
//! log D = n (<t_0, m_0> - K(t_0)),  log N = (n - k) (<t_k, m_k> - K(t_k))
//! ```

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{log_det_spd, Vector};
use crate::model::CumulantModel;
use crate::sampler::with_workers;
use crate::stats::{mean, pairwise_sum, substream, variance};
use crate::tilt::{solve_tilt, SolveOptions};
use crate::trajectory::{trajectory_log_ratio, ConditioningSpec, GOptions};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Saddlepoint log density of `U_{1,n} / n` at `u`:
/// `(s/2) log n + n K(t) - n <t, u> - (1/2) log|Sigma(t)| - (s/2) log 2 pi`.
pub fn saddlepoint_log_density(model_u: &CumulantModel, n: usize, u: &Vector, solve: &SolveOptions) -> Result<f64> {
    let sol = solve_tilt(model_u, u, solve)?;
    let s = u.len() as f64;
    let nf = n as f64;
    Ok(0.5 * s * nf.ln() + nf * (sol.log_phi - sol.t.dot(u)) - 0.5 * log_det_spd(&sol.kappa)? - 0.5 * s * LN_2PI)
}

/// The saddlepoint ingredients for one prefix.
#[derive(Debug, Clone, PartialEq)]
pub struct JensenTerms {
    pub log_n: f64,
    pub log_d: f64,
    pub log_det_sigma0: f64,
    pub log_det_sigmak: f64,
}

/// `log N` and `log D` for a prefix that consumed `partial` over `spec.k`
/// steps; `m_k = (target - partial) / (n - k)`.
pub fn jensen_log_ratio(spec: &ConditioningSpec, partial: &Vector, solve: &SolveOptions) -> Result<JensenTerms> {
    let model = spec.u_model();
    let m0 = spec.m0();
    let rest = (spec.n - spec.k) as f64;
    let mk = (&spec.target - partial) / rest;
    if !model.mean_attainable(&mk) {
        return Err(Error::DriftedOutOfDomain {
            step: spec.k,
            mean: mk.iter().copied().collect(),
        });
    }
    let s0 = solve_tilt(model, &m0, solve)?;
    let sk = solve_tilt(model, &mk, solve)?;
    Ok(JensenTerms {
        log_d: spec.n as f64 * (s0.t.dot(&m0) - s0.log_phi),
        log_n: rest * (sk.t.dot(&mk) - sk.log_phi),
        log_det_sigma0: log_det_spd(&s0.kappa)?,
        log_det_sigmak: log_det_spd(&sk.kappa)?,
    })
}

/// How `p_c / p_X` enters the `A` and `B` integrands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RatioConvention {
    /// Bayes identity with the saddlepoint density, as in the module docs.
    #[default]
    Consistent,
    /// The displayed forms `A = (n/(n-k))^{s-2} r^3 (N/D)^2 |Sigma_0|/|Sigma_k|`
    /// and `B = (n/(n-k))^{(s-2)/2} r^2 (N/D) (|Sigma_0|/|Sigma_k|)^{1/2}`
    /// with `r = g / p_X`.
    Displayed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KRuleConfig {
    /// Monte-Carlo prefixes per `k`.
    pub l: usize,
    pub delta: f64,
    pub k_grid: Vec<usize>,
    pub seed: u64,
    pub convention: RatioConvention,
    /// Divide `A` and `B` by `W = mean(g / p_X)`, an estimate of 1.
    pub self_normalize: bool,
    /// Winsorize the log integrands at this upper quantile.
    pub clip_quantile: Option<f64>,
    pub workers: usize,
}

impl Default for KRuleConfig {
    fn default() -> Self {
        Self {
            l: 1000,
            delta: 0.05,
            k_grid: Vec::new(),
            seed: 0,
            convention: RatioConvention::Consistent,
            self_normalize: true,
            clip_quantile: None,
            workers: 0,
        }
    }
}

impl KRuleConfig {
    pub fn validate(&self, spec: &ConditioningSpec) -> Result<()> {
        if self.l < 100 {
            return Err(Error::InvalidInput(format!("L must be at least 100, got {}", self.l)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidInput(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        if self.k_grid.is_empty() {
            return Err(Error::InvalidInput("k grid is empty".into()));
        }
        if self.k_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidInput("k grid must be strictly increasing".into()));
        }
        if let Some(&bad) = self.k_grid.iter().find(|&&k| k < 1 || k >= spec.n) {
            return Err(Error::InvalidInput(format!("k = {bad} is outside 1..n-1")));
        }
        if let Some(q) = self.clip_quantile {
            if !(q > 0.0 && q < 1.0) {
                return Err(Error::InvalidInput(format!("clip quantile must lie in (0, 1), got {q}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KRuleReport {
    pub k: usize,
    pub ere: f64,
    pub ere_se: f64,
    /// `max(A - B^2, 0)`.
    pub vre: f64,
    pub vre_unclamped: f64,
    pub ci: (f64, f64),
    pub accepted: bool,
    /// The `A` and `B` estimates entering `VRE` and `ERE` (self-normalized
    /// when configured), with standard errors.
    pub a_hat: f64,
    pub a_se: f64,
    pub b_hat: f64,
    pub b_se: f64,
    /// `mean(g / p_X)`, which estimates 1.
    pub w_hat: f64,
    pub w_se: f64,
    pub l: usize,
    /// Prefixes with an unattainable remaining mean (`p_c = 0`).
    pub excluded: usize,
    /// Prefixes on which `g` itself vanishes.
    pub g_zero: usize,
    pub mean_log_n: f64,
    pub mean_log_d: f64,
    pub mean_log_det_sigma0: f64,
    pub mean_log_det_sigmak: f64,
    /// `eps^2 (n - k)` with `eps = (log n)^{-3}`.
    pub e1: f64,
}

/// Log integrands of one prefix; `None` for prefixes outside the region.
struct PrefixTerms {
    log_w: f64,
    ab: Option<(f64, f64)>,
    jensen: Option<JensenTerms>,
    g_zero: bool,
}

fn prefix_terms(spec: &ConditioningSpec, opts: &GOptions, cfg: &KRuleConfig, index: usize) -> Result<PrefixTerms> {
    let mut rng = substream(cfg.seed ^ (spec.k as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15), index as u64);
    let steps: Vec<Vector> = (0..spec.k).map(|_| spec.model.sample(&mut rng)).collect();
    let log_r = match trajectory_log_ratio(spec, &steps, opts) {
        Ok(e) => e.log_ratio,
        Err(e) if matches!(e.root(), Error::DriftedOutOfDomain { .. }) => {
            return Ok(PrefixTerms {
                log_w: f64::NEG_INFINITY,
                ab: None,
                jensen: None,
                g_zero: true,
            })
        }
        Err(e) => return Err(e),
    };
    let partial = steps.iter().fold(Vector::zeros(spec.stat_dim()), |acc, y| acc + spec.statistic(y));
    let jensen = match jensen_log_ratio(spec, &partial, &opts.solve) {
        Ok(j) => j,
        Err(Error::DriftedOutOfDomain { .. }) => {
            return Ok(PrefixTerms {
                log_w: log_r,
                ab: None,
                jensen: None,
                g_zero: false,
            })
        }
        Err(e) => return Err(e),
    };
    let s = spec.stat_dim() as f64;
    let ln_ratio = (spec.n as f64 / (spec.n - spec.k) as f64).ln();
    let det_diff = jensen.log_det_sigma0 - jensen.log_det_sigmak;
    let nd = jensen.log_n - jensen.log_d;
    let ab = match cfg.convention {
        RatioConvention::Consistent => {
            let log_pc = 0.5 * s * ln_ratio - nd + 0.5 * det_diff;
            let log_big_r = log_r - log_pc;
            (log_r + 2.0 * log_big_r, log_r + log_big_r)
        }
        RatioConvention::Displayed => (
            (s - 2.0) * ln_ratio + 3.0 * log_r + 2.0 * nd + det_diff,
            0.5 * (s - 2.0) * ln_ratio + 2.0 * log_r + nd + 0.5 * det_diff,
        ),
    };
    Ok(PrefixTerms {
        log_w: log_r,
        ab: Some(ab),
        jensen: Some(jensen),
        g_zero: false,
    })
}

fn winsorize(logs: &mut [f64], q: f64) {
    let mut finite: Vec<f64> = logs.iter().copied().filter(|v| v.is_finite()).collect();
    if finite.is_empty() {
        return;
    }
    finite.sort_by(f64::total_cmp);
    let cap = finite[((finite.len() - 1) as f64 * q).round() as usize];
    for v in logs.iter_mut() {
        if *v > cap {
            *v = cap;
        }
    }
}

/// Mean of `exp(logs)` as `(scaled values, offset)` with `values = exp(logs - offset)`.
fn scaled(logs: &[f64]) -> (Vec<f64>, f64) {
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let off = if max.is_finite() { max } else { 0.0 };
    (logs.iter().map(|l| (l - off).exp()).collect(), off)
}

fn checked_exp(x: f64, what: &str) -> Result<f64> {
    let v = x.exp();
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Overflow(what.to_string()))
    }
}

/// `(estimate, se)` of `mean(num)` or, with `den`, of `mean(num) / mean(den)`.
fn estimate(num: &[f64], den: Option<&[f64]>, name: &str, argmax: usize) -> Result<(f64, f64)> {
    let l = num.len() as f64;
    let (x, ox) = scaled(num);
    let mx = mean(&x);
    match den {
        None => {
            let se = (variance(&x) / l).sqrt();
            let scale = checked_exp(ox, &format!("{name} at prefix {argmax}"))?;
            Ok((mx * scale, se * scale))
        }
        Some(den) => {
            let (w, ow) = scaled(den);
            let mw = mean(&w);
            if mw == 0.0 {
                return Err(Error::InvalidInput("every prefix has g = 0".into()));
            }
            let rho = mx / mw;
            let resid: Vec<f64> = x.iter().zip(&w).map(|(a, b)| a - rho * b).collect();
            let se = (variance(&resid) / l).sqrt() / mw;
            let scale = checked_exp(ox - ow, &format!("{name} at prefix {argmax}"))?;
            Ok((rho * scale, se * scale))
        }
    }
}

fn argmax(xs: &[f64]) -> usize {
    xs.iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map_or(0, |(i, _)| i)
}

/// ERE, VRE and the two-sigma interval for `spec.k`.
pub fn relative_error_stats(spec: &ConditioningSpec, opts: &GOptions, cfg: &KRuleConfig) -> Result<KRuleReport> {
    let terms: Vec<PrefixTerms> = with_workers(cfg.workers, || {
        (0..cfg.l)
            .into_par_iter()
            .map(|i| prefix_terms(spec, opts, cfg, i).map_err(|e| e.at_trajectory(i)))
            .collect::<Result<Vec<_>>>()
    })?;
    let mut log_w: Vec<f64> = terms.iter().map(|t| t.log_w).collect();
    let mut log_a: Vec<f64> = terms.iter().map(|t| t.ab.map_or(f64::NEG_INFINITY, |ab| ab.0)).collect();
    let mut log_b: Vec<f64> = terms.iter().map(|t| t.ab.map_or(f64::NEG_INFINITY, |ab| ab.1)).collect();
    if let Some(q) = cfg.clip_quantile {
        winsorize(&mut log_w, q);
        winsorize(&mut log_a, q);
        winsorize(&mut log_b, q);
    }
    let excluded = terms.iter().filter(|t| !t.g_zero && t.ab.is_none()).count();
    let g_zero = terms.iter().filter(|t| t.g_zero).count();

    let (w_hat, w_se) = estimate(&log_w, None, "W", argmax(&log_w))?;
    let den = cfg.self_normalize.then_some(log_w.as_slice());
    let (a_hat, a_se) = estimate(&log_a, den, "A", argmax(&log_a))?;
    let (b_hat, b_se) = estimate(&log_b, den, "B", argmax(&log_b))?;
    let ere = 1.0 - b_hat;
    let vre_unclamped = a_hat - b_hat * b_hat;
    if !vre_unclamped.is_finite() {
        return Err(Error::Overflow(format!("VRE at prefix {}", argmax(&log_a))));
    }
    let vre = vre_unclamped.max(0.0);
    let half = 2.0 * vre.sqrt();
    let ci = (ere - half, ere + half);
    let accepted = ci.0 <= cfg.delta && ci.1 >= -cfg.delta;

    let jensen: Vec<&JensenTerms> = terms.iter().filter_map(|t| t.jensen.as_ref()).collect();
    let avg = |f: fn(&JensenTerms) -> f64| {
        if jensen.is_empty() {
            f64::NAN
        } else {
            pairwise_sum(&jensen.iter().map(|j| f(j)).collect::<Vec<_>>()) / jensen.len() as f64
        }
    };
    let eps = (spec.n as f64).ln().powi(-3);
    Ok(KRuleReport {
        k: spec.k,
        ere,
        ere_se: b_se,
        vre,
        vre_unclamped,
        ci,
        accepted,
        a_hat,
        a_se,
        b_hat,
        b_se,
        w_hat,
        w_se,
        l: cfg.l,
        excluded,
        g_zero,
        mean_log_n: avg(|j| j.log_n),
        mean_log_d: avg(|j| j.log_d),
        mean_log_det_sigma0: avg(|j| j.log_det_sigma0),
        mean_log_det_sigmak: avg(|j| j.log_det_sigmak),
        e1: eps * eps * (spec.n - spec.k) as f64,
    })
}

/// Sweeps the grid; `k*` is the largest accepted `k`, i.e. the largest `k`
/// whose interval `CI(k)` meets `[-delta, delta]`.
pub fn select_k(spec: &ConditioningSpec, opts: &GOptions, cfg: &KRuleConfig) -> Result<(Option<usize>, Vec<KRuleReport>)> {
    cfg.validate(spec)?;
    let mut reports = Vec::with_capacity(cfg.k_grid.len());
    for &k in &cfg.k_grid {
        let sk = spec.with_k(k)?;
        reports.push(relative_error_stats(&sk, opts, cfg)?);
    }
    let k_star = reports.iter().filter(|r| r.accepted).map(|r| r.k).max();
    Ok((k_star, reports))
}
