//! Dense linear-algebra helpers and symmetric cumulant tensors.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

pub fn cholesky(m: &Matrix) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(m.clone()).ok_or_else(|| {
        Error::NotPositiveDefinite(format!("{}x{} matrix failed Cholesky", m.nrows(), m.ncols()))
    })
}

pub fn spd_inverse(m: &Matrix) -> Result<Matrix> {
    Ok(cholesky(m)?.inverse())
}

pub fn log_det_spd(m: &Matrix) -> Result<f64> {
    let chol = cholesky(m)?;
    Ok(2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>())
}

/// The unique symmetric positive-definite square root, from the spectral
/// decomposition `m = Q diag(lambda) Q^T`.
pub fn spd_sqrt(m: &Matrix) -> Result<Matrix> {
    spd_power(m, 0.5)
}

pub fn spd_inv_sqrt(m: &Matrix) -> Result<Matrix> {
    spd_power(m, -0.5)
}

/// `m^p` for symmetric positive-definite `m`.
pub fn spd_power(m: &Matrix, p: f64) -> Result<Matrix> {
    let sym = 0.5 * (m + m.transpose());
    let eig = SymmetricEigen::new(sym);
    if let Some(bad) = eig.eigenvalues.iter().find(|&&l| l <= 0.0) {
        return Err(Error::NotPositiveDefinite(format!("eigenvalue {bad:e}")));
    }
    let powered = eig.eigenvalues.map(|l| l.powf(p));
    Ok(&eig.eigenvectors * Matrix::from_diagonal(&powered) * eig.eigenvectors.transpose())
}

/// A multivariate normal density with cached precision and log-determinant.
#[derive(Debug, Clone)]
pub struct NormalDensity {
    pub mean: Vector,
    pub precision: Matrix,
    pub log_det: f64,
}

impl NormalDensity {
    pub fn new(mean: Vector, cov: &Matrix) -> Result<Self> {
        if cov.nrows() != mean.len() || cov.ncols() != mean.len() {
            return Err(Error::DimensionMismatch {
                expected: mean.len(),
                got: cov.nrows(),
            });
        }
        let chol = cholesky(cov)?;
        let log_det = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        Ok(Self {
            mean,
            precision: chol.inverse(),
            log_det,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// `(x - mean)^T precision (x - mean)`.
    pub fn mahalanobis2(&self, x: &Vector) -> f64 {
        let diff = x - &self.mean;
        (diff.transpose() * &self.precision * &diff)[(0, 0)]
    }

    pub fn log_density(&self, x: &Vector) -> f64 {
        -0.5 * (self.dim() as f64 * LN_2PI + self.log_det + self.mahalanobis2(x))
    }

    /// Log of the density at its mode.
    pub fn log_mode_value(&self) -> f64 {
        -0.5 * (self.dim() as f64 * LN_2PI + self.log_det)
    }
}

/// Log density of the standard `d`-variate normal.
pub fn std_normal_log_density(x: &Vector) -> f64 {
    -0.5 * (x.len() as f64 * LN_2PI + x.norm_squared())
}

/// A dense order-`r` tensor over `R^d`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dim: usize,
    order: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(dim: usize, order: usize) -> Self {
        Self {
            dim,
            order,
            data: vec![0.0; dim.pow(order as u32)],
        }
    }

    pub fn from_fn(dim: usize, order: usize, mut f: impl FnMut(&[usize]) -> f64) -> Self {
        let mut t = Self::zeros(dim, order);
        let mut idx = vec![0usize; order];
        for slot in 0..t.data.len() {
            t.unflatten(slot, &mut idx);
            t.data[slot] = f(&idx);
        }
        t
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    fn flatten(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.order);
        idx.iter().fold(0, |acc, &i| acc * self.dim + i)
    }

    fn unflatten(&self, mut slot: usize, idx: &mut [usize]) {
        for pos in (0..self.order).rev() {
            idx[pos] = slot % self.dim;
            slot /= self.dim;
        }
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.data[self.flatten(idx)]
    }

    pub fn set(&mut self, idx: &[usize], value: f64) {
        let slot = self.flatten(idx);
        self.data[slot] = value;
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Multilinear transport `T'_{a1..ar} = M_{a1 i1} ... M_{ar ir} T_{i1..ir}`.
    /// `m` is `s x d`; the result lives over `R^s`.
    pub fn transform(&self, m: &Matrix) -> Tensor {
        assert_eq!(m.ncols(), self.dim, "transform matrix has wrong width");
        let mut current = self.clone();
        // Contract one axis at a time; each pass moves axis `axis` to R^s.
        let s = m.nrows();
        let mut dims = vec![self.dim; self.order];
        for axis in 0..self.order {
            let mut new_dims = dims.clone();
            new_dims[axis] = s;
            let total: usize = new_dims.iter().product();
            let mut data = vec![0.0; total];
            let mut idx = vec![0usize; self.order];
            for (slot, out) in data.iter_mut().enumerate() {
                let mut rem = slot;
                for pos in (0..self.order).rev() {
                    idx[pos] = rem % new_dims[pos];
                    rem /= new_dims[pos];
                }
                let a = idx[axis];
                let mut acc = 0.0;
                for i in 0..dims[axis] {
                    idx[axis] = i;
                    let src = idx.iter().zip(&dims).fold(0, |acc2, (&v, &d)| acc2 * d + v);
                    acc += m[(a, i)] * current.data[src];
                }
                *out = acc;
            }
            dims = new_dims;
            current.data = data;
        }
        Tensor {
            dim: s,
            order: self.order,
            data: current.data,
        }
    }

    /// Largest deviation between `T` and `T` with indices permuted by `perm`.
    pub fn asymmetry(&self, perm: &[usize]) -> f64 {
        let mut idx = vec![0usize; self.order];
        let mut permuted = vec![0usize; self.order];
        let mut worst: f64 = 0.0;
        for slot in 0..self.data.len() {
            self.unflatten(slot, &mut idx);
            for (p, &q) in perm.iter().enumerate() {
                permuted[p] = idx[q];
            }
            worst = worst.max((self.data[slot] - self.get(&permuted)).abs());
        }
        worst
    }
}
