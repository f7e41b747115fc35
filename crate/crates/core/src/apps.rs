//! Uses of `g`: importance sampling of rare events, the ABC rejection
//! oracle for conditioned walks, and histogram total-variation checks.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::Vector;
use crate::model::{CumulantModel, UMap};
use crate::sampler::{sample_prefix, with_workers, SamplerConfig};
use crate::stats::{effective_sample_size, pairwise_sum, substream, variance};
use crate::tilt::{sample_u_tilted, solve_tilt};
use crate::trajectory::{ConditioningSpec, GOptions, Mode};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// `U_{1,n}/n > c`.
    Above,
    /// `U_{1,n}/n < c`.
    Below,
}

/// A box event `{U_{1,n}/n in region}` with one half-line per coordinate.
/// Infinite thresholds leave a coordinate unconstrained.
#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub directions: Vec<Direction>,
    pub threshold: Vector,
}

impl Event {
    pub fn above(threshold: Vector) -> Self {
        Self {
            directions: vec![Direction::Above; threshold.len()],
            threshold,
        }
    }

    pub fn below(threshold: Vector) -> Self {
        Self {
            directions: vec![Direction::Below; threshold.len()],
            threshold,
        }
    }

    /// The event that always happens.
    pub fn whole_space(s: usize) -> Self {
        Self::above(Vector::from_element(s, f64::NEG_INFINITY))
    }

    pub fn contains(&self, mean: &Vector) -> bool {
        self.directions
            .iter()
            .zip(self.threshold.iter())
            .zip(mean.iter())
            .all(|((d, &c), &m)| match d {
                Direction::Above => m > c,
                Direction::Below => m < c,
            })
    }

    /// The point of the region closest to `mean`, coordinate by coordinate.
    pub fn dominating_point(&self, mean: &Vector) -> Vector {
        Vector::from_iterator(
            mean.len(),
            self.directions
                .iter()
                .zip(self.threshold.iter())
                .zip(mean.iter())
                .map(|((d, &c), &m)| match d {
                    Direction::Above => m.max(c),
                    Direction::Below => m.min(c),
                }),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IsConfig {
    /// Number of full-length proposals.
    pub budget: usize,
    /// Steps drawn from `g`; `None` means `n / 2`.
    pub k: Option<usize>,
    pub seed: u64,
    pub workers: usize,
    pub sampler: SamplerConfig,
    pub g: GOptions,
}

impl Default for IsConfig {
    fn default() -> Self {
        Self {
            budget: 10_000,
            k: None,
            seed: 0,
            workers: 0,
            sampler: SamplerConfig::default(),
            g: GOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IsEstimate {
    pub p_hat: f64,
    pub se: f64,
    pub budget: usize,
    pub k: usize,
    pub max_weight: f64,
    pub ess: f64,
    pub dominating_point: Vector,
    pub warning: Option<String>,
}

/// Estimates `P[U_{1,n}/n in event]`.
///
/// Each proposal draws `y_1..y_k` from `g` conditioned at the dominating
/// point `c*` of the event (target `n c*`), then `y_{k+1}..y_n` i.i.d. from
/// `pi_u` tilted to the remaining mean `m_k`. The weight is
/// `p_X / proposal = exp(-log(g/p_X) - sum_j (<t_k, u(y_j)> - K_U(t_k)))`
/// times the event indicator. When the prefix leaves the attainable region
/// before step `k`, or `m_k` is unattainable, the rest of the walk is drawn
/// from `p_X` itself.
pub fn is_rare_event_estimate(
    model: &CumulantModel,
    umap: &UMap,
    n: usize,
    event: &Event,
    cfg: &IsConfig,
) -> Result<IsEstimate> {
    let mode = match umap {
        UMap::Identity => Mode::Sum,
        u => Mode::Function(u.clone()),
    };
    let k = cfg.k.unwrap_or(n / 2).max(1);
    let probe = ConditioningSpec::new(model.clone(), mode.clone(), n, k, model_mean_target(model, umap, n)?)?;
    let u_model = probe.u_model().clone();
    if event.threshold.len() != u_model.dim() {
        return Err(Error::DimensionMismatch {
            expected: u_model.dim(),
            got: event.threshold.len(),
        });
    }
    if cfg.budget < 2 {
        return Err(Error::InvalidInput("IS budget must be at least 2".into()));
    }
    let point = event.dominating_point(&u_model.mean());
    let spec = ConditioningSpec::new(model.clone(), mode, n, k, &point * n as f64)?;
    let sampler = SamplerConfig {
        evaluate_density: true,
        ..cfg.sampler
    };
    let log_w: Vec<f64> = with_workers(cfg.workers, || {
        (0..cfg.budget)
            .into_par_iter()
            .map(|index| {
                let mut rng = substream(cfg.seed, index as u64);
                let mut draw = || -> Result<f64> {
                    let prefix = sample_prefix(&spec, &cfg.g, &sampler, &mut rng)?;
                    let drawn = prefix.trajectory.steps.len();
                    let mut total = prefix.trajectory.partial.clone();
                    let mut log_w = -prefix.log_ratio.expect("densities evaluated");
                    let mk = (&spec.target - &total) / (n - drawn) as f64;
                    let tilt = if drawn == k && u_model.mean_attainable(&mk) {
                        solve_tilt(&u_model, &mk, &cfg.g.solve).ok()
                    } else {
                        None
                    };
                    let (t, log_phi) = tilt.map_or((Vector::zeros(mk.len()), 0.0), |s| (s.t, s.log_phi));
                    for _ in drawn..n {
                        let y = sample_u_tilted(model, umap, &t, &mut rng)?;
                        let w = umap.apply(&y);
                        log_w -= t.dot(&w) - log_phi;
                        total += w;
                    }
                    Ok(if event.contains(&(total / n as f64)) {
                        log_w
                    } else {
                        f64::NEG_INFINITY
                    })
                };
                draw().map_err(|e| e.at_trajectory(index))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let weights: Vec<f64> = log_w.iter().map(|l| l.exp()).collect();
    if let Some(i) = weights.iter().position(|w| !w.is_finite()) {
        return Err(Error::Overflow(format!("importance weight of trajectory {i}")));
    }
    let m = pairwise_sum(&weights) / weights.len() as f64;
    let se = (variance(&weights) / weights.len() as f64).sqrt();
    let ess = effective_sample_size(&log_w);
    let warning = (ess < 10.0).then(|| format!("proposal mismatch: effective sample size {ess:.1} < 10"));
    if let Some(w) = &warning {
        log::warn!("{w}");
    }
    Ok(IsEstimate {
        p_hat: m,
        se,
        budget: cfg.budget,
        k,
        max_weight: weights.iter().copied().fold(0.0, f64::max),
        ess,
        dominating_point: point,
        warning,
    })
}

fn model_mean_target(model: &CumulantModel, umap: &UMap, n: usize) -> Result<Vector> {
    let u_model = crate::model::pushforward_model(model, umap)?;
    Ok(u_model.mean() * n as f64)
}

/// Accepted prefixes of the ABC oracle, stored flat as
/// `data[(walk * k + step) * d + coord]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AbcSample {
    pub k: usize,
    pub d: usize,
    pub data: Vec<f64>,
    pub proposals: usize,
    pub tolerance: f64,
}

impl AbcSample {
    pub fn accepted(&self) -> usize {
        self.data.len() / (self.k * self.d)
    }

    pub fn acceptance_rate(&self) -> f64 {
        self.accepted() as f64 / self.proposals as f64
    }

    /// Binomial standard error of the acceptance rate.
    pub fn rate_se(&self) -> f64 {
        let p = self.acceptance_rate();
        (p * (1.0 - p) / self.proposals as f64).sqrt()
    }

    pub fn step(&self, walk: usize, step: usize) -> &[f64] {
        let at = (walk * self.k + step) * self.d;
        &self.data[at..at + self.d]
    }

    /// `y_{step+1}` of every accepted walk, as observation rows.
    pub fn step_rows(&self, step: usize) -> Vec<Vec<f64>> {
        (0..self.accepted()).map(|w| self.step(w, step).to_vec()).collect()
    }
}

const ABC_CHUNK: usize = 1 << 14;

/// Draws `proposals` i.i.d. `n`-step walks from `p_X` and keeps the first `k`
/// steps of those with `|U_{1,n}/n - target/n|_inf <= h`. Proposals are
/// processed in fixed chunks, chunk `c` on substream `c` of `seed`.
pub fn abc_conditional_oracle(
    spec: &ConditioningSpec,
    h: f64,
    proposals: usize,
    seed: u64,
    workers: usize,
) -> Result<AbcSample> {
    if !(h > 0.0) {
        return Err(Error::InvalidInput(format!("ABC tolerance must be positive, got {h}")));
    }
    let (n, k, d) = (spec.n, spec.k, spec.dim());
    let m0 = spec.m0();
    let chunks = proposals.div_ceil(ABC_CHUNK);
    let parts: Vec<Vec<f64>> = with_workers(workers, || {
        (0..chunks)
            .into_par_iter()
            .map(|c| {
                let mut rng = substream(seed, c as u64);
                let count = ABC_CHUNK.min(proposals - c * ABC_CHUNK);
                let mut out = Vec::new();
                let mut walk = Vec::with_capacity(k * d);
                for _ in 0..count {
                    walk.clear();
                    let mut total = Vector::zeros(m0.len());
                    for j in 0..n {
                        let y = spec.model.sample(&mut rng);
                        total += spec.statistic(&y);
                        if j < k {
                            walk.extend_from_slice(y.as_slice());
                        }
                    }
                    if (total / n as f64 - &m0).amax() <= h {
                        out.extend_from_slice(&walk);
                    }
                }
                out
            })
            .collect()
    });
    let sample = AbcSample {
        k,
        d,
        data: parts.concat(),
        proposals,
        tolerance: h,
    };
    if sample.accepted() == 0 {
        return Err(Error::NoAcceptances { tolerance: h });
    }
    Ok(sample)
}

/// A tolerance expected to accept about `target_accepts` of `proposals`
/// walks, read off the distance quantiles of a pilot run.
pub fn abc_auto_tolerance(spec: &ConditioningSpec, proposals: usize, target_accepts: usize, seed: u64) -> Result<f64> {
    if proposals == 0 {
        return Err(Error::InvalidInput("no proposals".into()));
    }
    let q = (target_accepts as f64 / proposals as f64).min(1.0);
    let pilot = ((20.0 / q).ceil() as usize).clamp(10_000, proposals.max(10_000));
    let m0 = spec.m0();
    let mut rng = substream(seed, u64::MAX);
    let mut dist: Vec<f64> = (0..pilot)
        .map(|_| {
            let mut total = Vector::zeros(m0.len());
            for _ in 0..spec.n {
                total += spec.statistic(&spec.model.sample(&mut rng));
            }
            (total / spec.n as f64 - &m0).amax()
        })
        .collect();
    dist.sort_by(f64::total_cmp);
    let at = ((q * pilot as f64).ceil() as usize).clamp(1, pilot) - 1;
    Ok(dist[at].max(f64::MIN_POSITIVE))
}

pub const DEFAULT_TV_BINS: usize = 20;

/// Histogram total variation `(1/2) sum |f_a - f_b|` on pooled-quantile bins,
/// computed for each of the first two coordinates; the maximum is returned.
/// Samples are observation rows.
pub fn tv_distance_estimate(a: &[Vec<f64>], b: &[Vec<f64>], bins: usize) -> Result<f64> {
    if bins < 2 {
        return Err(Error::InvalidInput("need at least two bins".into()));
    }
    let needed = 30 * bins;
    for s in [a, b] {
        if s.len() < needed {
            return Err(Error::SampleTooSmall { got: s.len(), needed });
        }
    }
    let d = a[0].len();
    if d == 0 || a.iter().chain(b).any(|r| r.len() != d) {
        return Err(Error::InvalidInput("samples must share a positive dimension".into()));
    }
    let mut worst: f64 = 0.0;
    for c in 0..d.min(2) {
        let xa: Vec<f64> = a.iter().map(|r| r[c]).collect();
        let xb: Vec<f64> = b.iter().map(|r| r[c]).collect();
        worst = worst.max(tv_1d(&xa, &xb, bins));
    }
    Ok(worst)
}

/// Two normalized histograms on shared bins cut at pooled-sample quantiles.
/// Bin `j` covers `[edges[j-1], edges[j])`, with the outer bins unbounded.
#[derive(Debug, Clone, PartialEq)]
pub struct HistogramPair {
    pub edges: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl HistogramPair {
    pub fn new(a: &[f64], b: &[f64], bins: usize) -> Self {
        let mut pooled: Vec<f64> = a.iter().chain(b).copied().collect();
        pooled.sort_by(f64::total_cmp);
        let edges: Vec<f64> = (1..bins).map(|j| pooled[j * pooled.len() / bins]).collect();
        let hist = |xs: &[f64]| {
            let mut h = vec![0.0; bins];
            for &x in xs {
                h[edges.partition_point(|&e| e <= x)] += 1.0;
            }
            h.iter_mut().for_each(|v| *v /= xs.len() as f64);
            h
        };
        let (ha, hb) = (hist(a), hist(b));
        Self { edges, a: ha, b: hb }
    }

    pub fn tv(&self) -> f64 {
        0.5 * self.a.iter().zip(&self.b).map(|(p, q)| (p - q).abs()).sum::<f64>()
    }
}

fn tv_1d(a: &[f64], b: &[f64], bins: usize) -> f64 {
    HistogramPair::new(a, b, bins).tv()
}
