//! Light-tailed base laws with analytic cumulant generating functions.
//!
//! A [`CumulantModel`] houses the density `p_X`, a sampler, the log moment
//! generating function `K(t) = log E exp<t, X>` and its derivatives: the
//! tilted mean `m(t)`, covariance `kappa(t)` and the third and fourth
//! cumulant tensors. Built-in families use closed forms; [`CustomLaw`]
//! extensions fall back to central finite differences of `K`.
//!
//! The tilt domain `{t : Phi(t) < inf}` is kept explicit as a list of open
//! half-spaces so that evaluations outside it fail loudly instead of
//! returning infinities.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, RngCore};
use rand_distr::{Distribution, Gamma, StandardNormal};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::linalg::{cholesky, Matrix, NormalDensity, Tensor, Vector};

/// A scalar factor of an independent-product model.
#[derive(Debug, Clone, PartialEq)]
pub enum ScalarFamily {
    Gaussian { mean: f64, sd: f64 },
    Exponential { rate: f64 },
    Gamma { shape: f64, rate: f64 },
}

impl ScalarFamily {
    fn validate(&self) -> Result<()> {
        let ok = match *self {
            ScalarFamily::Gaussian { mean, sd } => mean.is_finite() && sd.is_finite() && sd > 0.0,
            ScalarFamily::Exponential { rate } => rate.is_finite() && rate > 0.0,
            ScalarFamily::Gamma { shape, rate } => {
                shape.is_finite() && shape > 0.0 && rate.is_finite() && rate > 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidModel(format!("bad parameters for {self:?}")))
        }
    }

    /// `(shape, rate)` for the gamma-type families.
    fn gamma_params(&self) -> Option<(f64, f64)> {
        match *self {
            ScalarFamily::Exponential { rate } => Some((1.0, rate)),
            ScalarFamily::Gamma { shape, rate } => Some((shape, rate)),
            ScalarFamily::Gaussian { .. } => None,
        }
    }

    /// Supremum of admissible tilts (`t < rate`), if any.
    pub fn tilt_upper(&self) -> Option<f64> {
        self.gamma_params().map(|(_, rate)| rate)
    }

    fn log_mgf(&self, t: f64) -> f64 {
        match *self {
            ScalarFamily::Gaussian { mean, sd } => mean * t + 0.5 * sd * sd * t * t,
            _ => {
                let (shape, rate) = self.gamma_params().unwrap();
                -shape * (-t / rate).ln_1p()
            }
        }
    }

    /// Cumulant of order `r` (1..=4) of the law tilted by `t`.
    fn cumulant(&self, r: usize, t: f64) -> f64 {
        match *self {
            ScalarFamily::Gaussian { mean, sd } => match r {
                1 => mean + sd * sd * t,
                2 => sd * sd,
                _ => 0.0,
            },
            _ => {
                let (shape, rate) = self.gamma_params().unwrap();
                let fact = (1..r).product::<usize>() as f64;
                shape * fact / (rate - t).powi(r as i32)
            }
        }
    }

    fn log_density(&self, x: f64) -> f64 {
        match *self {
            ScalarFamily::Gaussian { mean, sd } => {
                let z = (x - mean) / sd;
                -0.5 * z * z - sd.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
            }
            _ => {
                let (shape, rate) = self.gamma_params().unwrap();
                if x <= 0.0 {
                    f64::NEG_INFINITY
                } else {
                    shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * x.ln() - rate * x
                }
            }
        }
    }

    /// Exact tilted law: Gaussian shifts its mean, gamma laws change rate.
    pub fn tilted(&self, t: f64) -> ScalarFamily {
        match *self {
            ScalarFamily::Gaussian { mean, sd } => ScalarFamily::Gaussian {
                mean: mean + sd * sd * t,
                sd,
            },
            ScalarFamily::Exponential { rate } => ScalarFamily::Exponential { rate: rate - t },
            ScalarFamily::Gamma { shape, rate } => ScalarFamily::Gamma {
                shape,
                rate: rate - t,
            },
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            ScalarFamily::Gaussian { mean, sd } => {
                let z: f64 = StandardNormal.sample(rng);
                mean + sd * z
            }
            ScalarFamily::Exponential { rate } => {
                // inverse CDF on (0, 1]
                let u: f64 = 1.0 - rng.random::<f64>();
                -u.ln() / rate
            }
            ScalarFamily::Gamma { shape, rate } => Gamma::new(shape, 1.0 / rate)
                .expect("validated gamma parameters")
                .sample(rng),
        }
    }

    fn mean_attainable(&self, m: f64) -> bool {
        match self {
            ScalarFamily::Gaussian { .. } => m.is_finite(),
            _ => m > 0.0 && m.is_finite(),
        }
    }
}

/// An open half-space `<normal, t> < bound`.
#[derive(Debug, Clone, PartialEq)]
pub struct HalfSpace {
    pub normal: Vector,
    pub bound: f64,
}

/// The open convex set of admissible tilts.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TiltDomain {
    pub constraints: Vec<HalfSpace>,
}

impl TiltDomain {
    pub fn whole_space() -> Self {
        Self::default()
    }

    pub fn check(&self, t: &Vector) -> Result<()> {
        for c in &self.constraints {
            let v = c.normal.dot(t);
            if !(v < c.bound) {
                return Err(Error::TiltOutOfDomain {
                    constraint: format!(
                        "<{:?}, t> = {v} must be < {}",
                        c.normal.as_slice(),
                        c.bound
                    ),
                });
            }
        }
        if t.iter().any(|v| !v.is_finite()) {
            return Err(Error::TiltOutOfDomain {
                constraint: "t must be finite".into(),
            });
        }
        Ok(())
    }

    pub fn contains(&self, t: &Vector) -> bool {
        self.check(t).is_ok()
    }
}

/// A user extension: an absolutely continuous light-tailed law for which only
/// `K`, the density and a sampler are known.
pub trait CustomLaw: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;
    fn domain(&self) -> TiltDomain;
    /// `K(t)` for `t` inside [`CustomLaw::domain`].
    fn log_mgf(&self, t: &Vector) -> f64;
    fn log_density(&self, x: &Vector) -> f64;
    fn sample(&self, rng: &mut dyn RngCore) -> Vector;
    /// Discrete and lattice laws are rejected at construction.
    fn absolutely_continuous(&self) -> bool {
        true
    }
    /// Upper bound of `<t, x>` over the support, when finite. Enables the
    /// acceptance-rejection tilted sampler.
    fn tilt_exponent_bound(&self, _t: &Vector) -> Option<f64> {
        None
    }
}

#[derive(Debug, Clone)]
pub struct GaussianLaw {
    pub mean: Vector,
    pub cov: Matrix,
    chol_l: Matrix,
    density: NormalDensity,
}

impl GaussianLaw {
    pub fn density(&self) -> &NormalDensity {
        &self.density
    }
}

#[derive(Debug, Clone)]
pub struct LinearPushforward {
    pub base: CumulantModel,
    /// `s x d` matrix mapping base draws to `U = A X`.
    pub matrix: Matrix,
    /// `(A^{-1}, log|det A|)` when `A` is square and invertible.
    inverse: Option<(Matrix, f64)>,
}

/// A base law: density, sampler and cumulants up to order four.
#[derive(Debug, Clone)]
pub enum CumulantModel {
    Gaussian(Arc<GaussianLaw>),
    Product(Arc<Vec<ScalarFamily>>),
    Linear(Arc<LinearPushforward>),
    Custom(Arc<dyn CustomLaw>),
}

impl CumulantModel {
    pub fn gaussian(mean: Vector, cov: Matrix) -> Result<Self> {
        let d = mean.len();
        if d == 0 {
            return Err(Error::InvalidModel("dimension must be positive".into()));
        }
        if cov.nrows() != d || cov.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: cov.nrows(),
            });
        }
        if (&cov - cov.transpose()).amax() > 1e-12 * cov.amax().max(1.0) {
            return Err(Error::InvalidModel("covariance must be symmetric".into()));
        }
        let chol_l = cholesky(&cov)?.l();
        let density = NormalDensity::new(mean.clone(), &cov)?;
        Ok(CumulantModel::Gaussian(Arc::new(GaussianLaw {
            mean,
            cov,
            chol_l,
            density,
        })))
    }

    pub fn standard_gaussian(d: usize) -> Self {
        Self::gaussian(Vector::zeros(d), Matrix::identity(d, d)).expect("identity is SPD")
    }

    pub fn product(factors: Vec<ScalarFamily>) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::InvalidModel("product needs at least one factor".into()));
        }
        for f in &factors {
            f.validate()?;
        }
        Ok(CumulantModel::Product(Arc::new(factors)))
    }

    /// `d` independent copies of one scalar family.
    pub fn iid(family: ScalarFamily, d: usize) -> Result<Self> {
        Self::product(vec![family; d])
    }

    pub fn exponential(rate: f64) -> Result<Self> {
        Self::product(vec![ScalarFamily::Exponential { rate }])
    }

    pub fn gamma(shape: f64, rate: f64) -> Result<Self> {
        Self::product(vec![ScalarFamily::Gamma { shape, rate }])
    }

    /// Law of `U = A X`. Gaussian bases stay Gaussian.
    pub fn linear_pushforward(base: CumulantModel, matrix: Matrix) -> Result<Self> {
        if matrix.ncols() != base.dim() {
            return Err(Error::DimensionMismatch {
                expected: base.dim(),
                got: matrix.ncols(),
            });
        }
        if matrix.nrows() == 0 {
            return Err(Error::InvalidModel("pushforward needs at least one row".into()));
        }
        cholesky(&(&matrix * matrix.transpose())).map_err(|_| {
            Error::InvalidModel("pushforward matrix must have full row rank".into())
        })?;
        if let CumulantModel::Gaussian(g) = &base {
            let mean = &matrix * &g.mean;
            let cov = &matrix * &g.cov * matrix.transpose();
            let cov = 0.5 * (&cov + cov.transpose());
            return Self::gaussian(mean, cov);
        }
        let inverse = if matrix.is_square() {
            matrix
                .clone()
                .try_inverse()
                .map(|inv| (inv, matrix.determinant().abs().ln()))
        } else {
            None
        };
        Ok(CumulantModel::Linear(Arc::new(LinearPushforward {
            base,
            matrix,
            inverse,
        })))
    }

    pub fn custom(law: Arc<dyn CustomLaw>) -> Result<Self> {
        if !law.absolutely_continuous() {
            return Err(Error::InvalidModel(
                "lattice/discrete laws are not admitted; the characteristic function must be integrable"
                    .into(),
            ));
        }
        if law.dim() == 0 {
            return Err(Error::InvalidModel("dimension must be positive".into()));
        }
        Ok(CumulantModel::Custom(law))
    }

    pub fn dim(&self) -> usize {
        match self {
            CumulantModel::Gaussian(g) => g.mean.len(),
            CumulantModel::Product(f) => f.len(),
            CumulantModel::Linear(l) => l.matrix.nrows(),
            CumulantModel::Custom(c) => c.dim(),
        }
    }

    pub fn as_gaussian(&self) -> Option<&GaussianLaw> {
        match self {
            CumulantModel::Gaussian(g) => Some(g),
            _ => None,
        }
    }

    pub fn is_gaussian(&self) -> bool {
        self.as_gaussian().is_some()
    }

    pub fn domain(&self) -> TiltDomain {
        match self {
            CumulantModel::Gaussian(_) => TiltDomain::whole_space(),
            CumulantModel::Product(factors) => {
                let d = factors.len();
                TiltDomain {
                    constraints: factors
                        .iter()
                        .enumerate()
                        .filter_map(|(j, f)| {
                            f.tilt_upper().map(|bound| HalfSpace {
                                normal: Vector::from_fn(d, |i, _| if i == j { 1.0 } else { 0.0 }),
                                bound,
                            })
                        })
                        .collect(),
                }
            }
            CumulantModel::Linear(l) => TiltDomain {
                constraints: l
                    .base
                    .domain()
                    .constraints
                    .into_iter()
                    .map(|h| HalfSpace {
                        normal: &l.matrix * h.normal,
                        bound: h.bound,
                    })
                    .collect(),
            },
            CumulantModel::Custom(c) => c.domain(),
        }
    }

    fn check_dim(&self, v: &Vector) -> Result<()> {
        if v.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: v.len(),
            });
        }
        Ok(())
    }

    pub fn check_domain(&self, t: &Vector) -> Result<()> {
        self.check_dim(t)?;
        self.domain().check(t)
    }

    /// `K(t) = log Phi(t)`.
    pub fn log_mgf(&self, t: &Vector) -> Result<f64> {
        self.check_domain(t)?;
        Ok(match self {
            CumulantModel::Gaussian(g) => {
                g.mean.dot(t) + 0.5 * (t.transpose() * &g.cov * t)[(0, 0)]
            }
            CumulantModel::Product(f) => f.iter().zip(t.iter()).map(|(f, &tj)| f.log_mgf(tj)).sum(),
            CumulantModel::Linear(l) => l.base.log_mgf(&(l.matrix.transpose() * t))?,
            CumulantModel::Custom(c) => c.log_mgf(t),
        })
    }

    /// Tilted mean `m(t) = grad K(t)`.
    pub fn mean_map(&self, t: &Vector) -> Result<Vector> {
        self.check_domain(t)?;
        Ok(match self {
            CumulantModel::Gaussian(g) => &g.mean + &g.cov * t,
            CumulantModel::Product(f) => {
                Vector::from_iterator(f.len(), f.iter().zip(t.iter()).map(|(f, &tj)| f.cumulant(1, tj)))
            }
            CumulantModel::Linear(l) => &l.matrix * l.base.mean_map(&(l.matrix.transpose() * t))?,
            CumulantModel::Custom(c) => {
                let d = c.dim();
                let g = fd_derivative_tensor(c.as_ref(), t, 1)?;
                Vector::from_fn(d, |i, _| g.get(&[i]))
            }
        })
    }

    /// Tilted covariance `kappa(t) = Hess K(t)`.
    pub fn covariance_map(&self, t: &Vector) -> Result<Matrix> {
        self.check_domain(t)?;
        Ok(match self {
            CumulantModel::Gaussian(g) => g.cov.clone(),
            CumulantModel::Product(f) => Matrix::from_diagonal(&Vector::from_iterator(
                f.len(),
                f.iter().zip(t.iter()).map(|(f, &tj)| f.cumulant(2, tj)),
            )),
            CumulantModel::Linear(l) => {
                let k = l.base.covariance_map(&(l.matrix.transpose() * t))?;
                let out = &l.matrix * k * l.matrix.transpose();
                0.5 * (&out + out.transpose())
            }
            CumulantModel::Custom(c) => {
                let d = c.dim();
                let h = fd_derivative_tensor(c.as_ref(), t, 2)?;
                Matrix::from_fn(d, d, |i, j| h.get(&[i, j]))
            }
        })
    }

    /// Third cumulant tensor `kappa^{j,l,m}(t)`.
    pub fn third_cumulant(&self, t: &Vector) -> Result<Tensor> {
        self.higher_cumulant(t, 3)
    }

    /// Fourth cumulant tensor `kappa^{j,l,m,q}(t)`.
    pub fn fourth_cumulant(&self, t: &Vector) -> Result<Tensor> {
        self.higher_cumulant(t, 4)
    }

    fn higher_cumulant(&self, t: &Vector, order: usize) -> Result<Tensor> {
        self.check_domain(t)?;
        let d = self.dim();
        Ok(match self {
            CumulantModel::Gaussian(_) => Tensor::zeros(d, order),
            CumulantModel::Product(f) => {
                let mut out = Tensor::zeros(d, order);
                for (j, (fam, &tj)) in f.iter().zip(t.iter()).enumerate() {
                    out.set(&vec![j; order], fam.cumulant(order, tj));
                }
                out
            }
            CumulantModel::Linear(l) => l
                .base
                .higher_cumulant(&(l.matrix.transpose() * t), order)?
                .transform(&l.matrix),
            CumulantModel::Custom(c) => fd_derivative_tensor(c.as_ref(), t, order)?,
        })
    }

    /// Untilted mean `m(0)`.
    pub fn mean(&self) -> Vector {
        self.mean_map(&Vector::zeros(self.dim()))
            .expect("0 lies in every tilt domain")
    }

    /// `log p_X(x)`; `-inf` outside the support.
    pub fn log_density(&self, x: &Vector) -> Result<f64> {
        self.check_dim(x)?;
        Ok(match self {
            CumulantModel::Gaussian(g) => g.density.log_density(x),
            CumulantModel::Product(f) => f.iter().zip(x.iter()).map(|(f, &xj)| f.log_density(xj)).sum(),
            CumulantModel::Linear(l) => match &l.inverse {
                Some((inv, log_det)) => l.base.log_density(&(inv * x))? - log_det,
                None => {
                    return Err(Error::Unsupported(
                        "density of a non-invertible linear pushforward of a non-Gaussian law".into(),
                    ))
                }
            },
            CumulantModel::Custom(c) => c.log_density(x),
        })
    }

    pub fn base_density(&self, x: &Vector) -> Result<f64> {
        Ok(self.log_density(x)?.exp())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vector {
        match self {
            CumulantModel::Gaussian(g) => {
                let z = Vector::from_fn(g.mean.len(), |_, _| StandardNormal.sample(rng));
                &g.mean + &g.chol_l * z
            }
            CumulantModel::Product(f) => Vector::from_iterator(f.len(), f.iter().map(|f| f.sample(rng))),
            CumulantModel::Linear(l) => &l.matrix * l.base.sample(rng),
            CumulantModel::Custom(c) => {
                let mut adapter = DynRng(rng);
                c.sample(&mut adapter)
            }
        }
    }

    /// Best-effort test that `m` lies in the interior of the attainable-mean
    /// region. Returns `true` when the region is not known in closed form.
    pub fn mean_attainable(&self, m: &Vector) -> bool {
        if m.len() != self.dim() || m.iter().any(|v| !v.is_finite()) {
            return false;
        }
        match self {
            CumulantModel::Gaussian(_) => true,
            CumulantModel::Product(f) => f.iter().zip(m.iter()).all(|(f, &mj)| f.mean_attainable(mj)),
            CumulantModel::Linear(l) => match &l.inverse {
                Some((inv, _)) => l.base.mean_attainable(&(inv * m)),
                None => true,
            },
            CumulantModel::Custom(_) => true,
        }
    }

    pub(crate) fn product_factors(&self) -> Option<&[ScalarFamily]> {
        match self {
            CumulantModel::Product(f) => Some(f),
            _ => None,
        }
    }
}

/// Bridges `&mut impl Rng` to `&mut dyn RngCore` for custom laws.
struct DynRng<'a, R: Rng + ?Sized>(&'a mut R);

impl<R: Rng + ?Sized> RngCore for DynRng<'_, R> {
    fn next_u32(&mut self) -> u32 {
        self.0.next_u32()
    }
    fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }
    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.0.fill_bytes(dst)
    }
}

/// Order-`order` derivative tensor of `K` by nested central differences.
///
/// Orders 1 and 2 use steps `eps^(1/3)` and `eps^(1/4)`; orders 3 and 4 use
/// `eps^(1/6)`, all scaled by `(1 + |t_j|)`.
fn fd_derivative_tensor(law: &dyn CustomLaw, t: &Vector, order: usize) -> Result<Tensor> {
    let d = law.dim();
    let domain = law.domain();
    let root = match order {
        1 => 3.0,
        2 => 4.0,
        _ => 6.0,
    };
    let base_step = f64::EPSILON.powf(1.0 / root);
    let steps: Vec<f64> = t.iter().map(|tj| base_step * (1.0 + tj.abs())).collect();

    fn nested(
        law: &dyn CustomLaw,
        domain: &TiltDomain,
        t: &mut Vector,
        idx: &[usize],
        steps: &[f64],
    ) -> Result<f64> {
        match idx.split_first() {
            None => {
                domain.check(t)?;
                Ok(law.log_mgf(t))
            }
            Some((&j, rest)) => {
                let h = steps[j];
                t[j] += h;
                let plus = nested(law, domain, t, rest, steps);
                t[j] -= 2.0 * h;
                let minus = nested(law, domain, t, rest, steps);
                t[j] += h;
                Ok((plus? - minus?) / (2.0 * h))
            }
        }
    }

    let mut out = Tensor::zeros(d, order);
    let mut work = t.clone();
    let mut idx = vec![0usize; order];
    loop {
        // only non-decreasing tuples; symmetric fill afterwards
        let value = nested(law, &domain, &mut work, &idx, &steps)?;
        fill_symmetric(&mut out, &idx, value);
        // next non-decreasing tuple
        let mut pos = order;
        loop {
            if pos == 0 {
                return Ok(out);
            }
            pos -= 1;
            if idx[pos] + 1 < d {
                idx[pos] += 1;
                let v = idx[pos];
                for slot in idx.iter_mut().skip(pos + 1) {
                    *slot = v;
                }
                break;
            }
        }
    }
}

fn fill_symmetric(t: &mut Tensor, idx: &[usize], value: f64) {
    let mut perm = idx.to_vec();
    perm.sort_unstable();
    loop {
        t.set(&perm, value);
        if !next_permutation(&mut perm) {
            break;
        }
    }
}

pub(crate) fn next_permutation(v: &mut [usize]) -> bool {
    if v.len() < 2 {
        return false;
    }
    let mut i = v.len() - 1;
    while i > 0 && v[i - 1] >= v[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = v.len() - 1;
    while v[j] <= v[i - 1] {
        j -= 1;
    }
    v.swap(i - 1, j);
    v[i..].reverse();
    true
}

/// A user-supplied evaluator `u: R^d -> R^s`.
pub type UFunction = Arc<dyn Fn(&Vector) -> Vector + Send + Sync>;

/// The additive statistic `u` of the conditioning event `sum u(X_i) = u_{1,n}`.
#[derive(Clone)]
pub enum UMap {
    Identity,
    /// `u(x) = A x` with `A` of shape `s x d`.
    Linear(Matrix),
    /// A nonlinear evaluator paired with an explicit model for `U = u(X)`.
    Custom {
        eval: UFunction,
        output_dim: usize,
        model: Option<CumulantModel>,
    },
}

impl fmt::Debug for UMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            UMap::Identity => write!(f, "Identity"),
            UMap::Linear(a) => f.debug_tuple("Linear").field(a).finish(),
            UMap::Custom {
                output_dim, model, ..
            } => f
                .debug_struct("Custom")
                .field("output_dim", output_dim)
                .field("model", model)
                .finish_non_exhaustive(),
        }
    }
}

impl UMap {
    pub fn output_dim(&self, input_dim: usize) -> usize {
        match self {
            UMap::Identity => input_dim,
            UMap::Linear(a) => a.nrows(),
            UMap::Custom { output_dim, .. } => *output_dim,
        }
    }

    pub fn apply(&self, x: &Vector) -> Vector {
        match self {
            UMap::Identity => x.clone(),
            UMap::Linear(a) => a * x,
            UMap::Custom { eval, .. } => eval(x),
        }
    }

    pub fn is_identity(&self) -> bool {
        matches!(self, UMap::Identity)
    }
}

/// The law of `U = u(X)`. Identity and linear maps are exact pullbacks;
/// nonlinear maps must carry their own model.
pub fn pushforward_model(model: &CumulantModel, umap: &UMap) -> Result<CumulantModel> {
    match umap {
        UMap::Identity => Ok(model.clone()),
        UMap::Linear(a) => CumulantModel::linear_pushforward(model.clone(), a.clone()),
        UMap::Custom {
            model: Some(m),
            output_dim,
            ..
        } => {
            if m.dim() != *output_dim {
                return Err(Error::DimensionMismatch {
                    expected: *output_dim,
                    got: m.dim(),
                });
            }
            Ok(m.clone())
        }
        UMap::Custom { model: None, .. } => Err(Error::UModelRequired),
    }
}
