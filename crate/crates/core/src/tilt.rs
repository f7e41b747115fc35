//! Solving `m(t) = alpha` and working with the tilted law `pi^alpha`.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{cholesky, Matrix, Vector};
use crate::model::{CumulantModel, UMap};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 100,
        }
    }
}

/// A solved tilt point defining `pi^alpha`.
#[derive(Debug, Clone, PartialEq)]
pub struct TiltSolution {
    pub alpha: Vector,
    pub t: Vector,
    /// `K(t)`.
    pub log_phi: f64,
    /// `kappa(t)`, the covariance of `pi^alpha`.
    pub kappa: Matrix,
    /// `|m(t) - alpha|`.
    pub residual: f64,
    pub iterations: usize,
}

const MAX_HALVINGS: usize = 60;

pub fn solve_tilt(model: &CumulantModel, alpha: &Vector, opts: &SolveOptions) -> Result<TiltSolution> {
    solve_tilt_from(model, alpha, None, opts)
}

/// Damped Newton iteration `t <- t + lambda kappa(t)^{-1} (alpha - m(t))`,
/// started at `start` (or 0). `lambda` halves while the step leaves the
/// domain or fails to reduce the residual.
pub fn solve_tilt_from(
    model: &CumulantModel,
    alpha: &Vector,
    start: Option<&Vector>,
    opts: &SolveOptions,
) -> Result<TiltSolution> {
    if alpha.len() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            got: alpha.len(),
        });
    }
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidInput("tilt tolerance must be positive".into()));
    }
    if !model.mean_attainable(alpha) {
        return Err(Error::TiltSolveFailed {
            iterations: 0,
            residual: f64::INFINITY,
        });
    }
    let mut t = match start {
        Some(s) if s.len() == model.dim() && model.domain().contains(s) => s.clone(),
        _ => Vector::zeros(model.dim()),
    };
    let mut mean = model.mean_map(&t)?;
    let mut residual = (alpha - &mean).norm();
    let mut iterations = 0;
    while residual > opts.tol {
        if iterations >= opts.max_iter {
            return Err(Error::TiltSolveFailed {
                iterations,
                residual,
            });
        }
        iterations += 1;
        let kappa = model.covariance_map(&t)?;
        let step = cholesky(&kappa)?.solve(&(alpha - &mean));
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..MAX_HALVINGS {
            let candidate = &t + lambda * &step;
            if model.domain().contains(&candidate) {
                let m = model.mean_map(&candidate)?;
                let r = (alpha - &m).norm();
                if r < residual {
                    t = candidate;
                    mean = m;
                    residual = r;
                    accepted = true;
                    break;
                }
            }
            lambda *= 0.5;
        }
        if !accepted {
            // the domain shrank to nothing along the Newton direction
            return Err(Error::TiltSolveFailed {
                iterations,
                residual,
            });
        }
    }
    Ok(TiltSolution {
        alpha: alpha.clone(),
        log_phi: model.log_mgf(&t)?,
        kappa: model.covariance_map(&t)?,
        t,
        residual,
        iterations,
    })
}

/// `log pi^alpha(x) = <t, x> - K(t) + log p_X(x)`.
pub fn tilted_log_density(model: &CumulantModel, tilt: &TiltSolution, x: &Vector) -> Result<f64> {
    Ok(tilt.t.dot(x) - tilt.log_phi + model.log_density(x)?)
}

const AR_TILT_MAX_TRIES: usize = 1_000_000;

/// Draws from the law tilted by `t`. Exact for built-in families; custom laws
/// use acceptance-rejection against the base when `<t, x>` is bounded.
pub fn sample_tilted<R: Rng + ?Sized>(model: &CumulantModel, t: &Vector, rng: &mut R) -> Result<Vector> {
    model.check_domain(t)?;
    Ok(match model {
        CumulantModel::Gaussian(g) => &g.cov * t + model.sample(rng),
        CumulantModel::Product(_) => {
            let factors = model.product_factors().unwrap();
            Vector::from_iterator(
                factors.len(),
                factors
                    .iter()
                    .zip(t.iter())
                    .map(|(f, &tj)| f.tilted(tj).sample(rng)),
            )
        }
        CumulantModel::Linear(l) => &l.matrix * sample_tilted(&l.base, &(l.matrix.transpose() * t), rng)?,
        CumulantModel::Custom(c) => {
            let bound = c.tilt_exponent_bound(t).ok_or_else(|| {
                Error::NoSampler("custom law without a bound on <t, x> over its support".into())
            })?;
            for _ in 0..AR_TILT_MAX_TRIES {
                let x = model.sample(rng);
                let log_u: f64 = (1.0 - rng.random::<f64>()).ln();
                if log_u < t.dot(&x) - bound {
                    return Ok(x);
                }
            }
            return Err(Error::NoSampler(format!(
                "tilted acceptance-rejection exhausted {AR_TILT_MAX_TRIES} tries"
            )));
        }
    })
}

pub fn tilted_sample<R: Rng + ?Sized>(
    model: &CumulantModel,
    tilt: &TiltSolution,
    rng: &mut R,
) -> Result<Vector> {
    sample_tilted(model, &tilt.t, rng)
}

/// Mean and covariance of `X` under `pi_u(x) ~ exp<t, u(x)> p_X(x)`, where `t`
/// is a tilt of `U = u(X)`. Custom maps return the untilted moments.
pub fn x_space_tilted_moments(model: &CumulantModel, umap: &UMap, t: &Vector) -> Result<(Vector, Matrix)> {
    let tx = match umap {
        UMap::Identity => t.clone(),
        UMap::Linear(a) => a.transpose() * t,
        UMap::Custom { .. } => Vector::zeros(model.dim()),
    };
    Ok((model.mean_map(&tx)?, model.covariance_map(&tx)?))
}

const CUSTOM_U_CHAIN: usize = 500;

/// Draws `X` from `pi_u(x) ~ exp<t, u(x)> p_X(x)`.
///
/// Identity and linear maps reduce to an X-space tilt by `A^T t`; custom maps
/// run a fixed-length random-walk Metropolis chain.
pub fn sample_u_tilted<R: Rng + ?Sized>(
    model: &CumulantModel,
    umap: &UMap,
    t: &Vector,
    rng: &mut R,
) -> Result<Vector> {
    match umap {
        UMap::Identity => sample_tilted(model, t, rng),
        UMap::Linear(a) => sample_tilted(model, &(a.transpose() * t), rng),
        UMap::Custom { eval, .. } => {
            let d = model.dim();
            let zero = Vector::zeros(d);
            let chol = cholesky(&model.covariance_map(&zero)?)?.l() * (2.38 / (d as f64).sqrt());
            let log_target = |x: &Vector| -> Result<f64> { Ok(t.dot(&eval(x)) + model.log_density(x)?) };
            let mut x = model.mean();
            let mut lp = log_target(&x)?;
            if !lp.is_finite() {
                x = model.sample(rng);
                lp = log_target(&x)?;
            }
            for _ in 0..CUSTOM_U_CHAIN {
                let z = Vector::from_fn(d, |_, _| StandardNormal.sample(rng));
                let prop = &x + &chol * z;
                let lq = log_target(&prop)?;
                if (1.0 - rng.random::<f64>()).ln() < lq - lp {
                    x = prop;
                    lp = lq;
                }
            }
            Ok(x)
        }
    }
}
