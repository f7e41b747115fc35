//! Tensor Hermite polynomials and the order-4 multivariate Edgeworth density.
//!
//! Index brackets such as `kappa_{j,l} x_m [3]` are expanded by enumerating
//! the partial pairings of the index positions: a pairing with `p` pairs
//! contributes `(-1)^p prod kappa_{a,b} prod x_c`. Orders 3, 4 and 6 give the
//! bracket sizes `[3]`, `[6] [3]` and `[15] [45] [15]`.

use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::linalg::{spd_inv_sqrt, spd_inverse, std_normal_log_density, Matrix, Tensor, Vector};

/// Second, third and fourth cumulants of a law, with the lowered-index
/// inverse `kappa_{j,l}` cached.
#[derive(Debug, Clone, PartialEq)]
pub struct CumulantSet {
    pub kappa: Matrix,
    pub kappa_inv: Matrix,
    pub c3: Tensor,
    pub c4: Tensor,
}

impl CumulantSet {
    pub fn new(kappa: Matrix, c3: Tensor, c4: Tensor) -> Result<Self> {
        let d = kappa.nrows();
        if kappa.ncols() != d || c3.dim() != d || c4.dim() != d || c3.order() != 3 || c4.order() != 4 {
            return Err(Error::InvalidInput("inconsistent cumulant dimensions".into()));
        }
        let kappa_inv = spd_inverse(&kappa)?;
        Ok(Self {
            kappa,
            kappa_inv,
            c3,
            c4,
        })
    }

    /// Cumulants of `kappa^{-1/2} (X - mean)`: identity covariance with the
    /// higher tensors transported by the SPD inverse root.
    pub fn standardized(kappa: &Matrix, c3: &Tensor, c4: &Tensor) -> Result<Self> {
        let root = spd_inv_sqrt(kappa)?;
        let d = kappa.nrows();
        Self::new(Matrix::identity(d, d), c3.transform(&root), c4.transform(&root))
    }

    pub fn dim(&self) -> usize {
        self.kappa.nrows()
    }
}

/// One term of a bracket expansion: disjoint index-position pairs and the
/// remaining single positions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pairing {
    pub pairs: Vec<(usize, usize)>,
    pub singles: Vec<usize>,
}

/// All partial pairings of positions `0..order`.
pub fn partial_pairings(order: usize) -> Vec<Pairing> {
    fn go(free: &[usize], pairs: &mut Vec<(usize, usize)>, singles: &mut Vec<usize>, out: &mut Vec<Pairing>) {
        let Some((&first, rest)) = free.split_first() else {
            out.push(Pairing {
                pairs: pairs.clone(),
                singles: singles.clone(),
            });
            return;
        };
        singles.push(first);
        go(rest, pairs, singles, out);
        singles.pop();
        for (k, &partner) in rest.iter().enumerate() {
            let remaining: Vec<usize> = rest.iter().enumerate().filter(|&(j, _)| j != k).map(|(_, &p)| p).collect();
            pairs.push((first, partner));
            go(&remaining, pairs, singles, out);
            pairs.pop();
        }
    }
    let positions: Vec<usize> = (0..order).collect();
    let mut out = Vec::new();
    go(&positions, &mut Vec::new(), &mut Vec::new(), &mut out);
    out
}

/// Number of expansion terms grouped by number of pairs, e.g. `[1, 15, 45, 15]`
/// for order 6.
pub fn bracket_counts(order: usize) -> Vec<usize> {
    let mut counts = vec![0; order / 2 + 1];
    for p in partial_pairings(order) {
        counts[p.pairs.len()] += 1;
    }
    counts
}

fn hermite_from_pairings(pairings: &[Pairing], idx: &[usize], lowered: &Vector, kappa_inv: &Matrix) -> f64 {
    pairings
        .iter()
        .map(|p| {
            let sign = if p.pairs.len() % 2 == 0 { 1.0 } else { -1.0 };
            let pair_prod: f64 = p.pairs.iter().map(|&(a, b)| kappa_inv[(idx[a], idx[b])]).product();
            let single_prod: f64 = p.singles.iter().map(|&s| lowered[idx[s]]).product();
            sign * pair_prod * single_prod
        })
        .sum()
}

/// `h_{i1..ik}(x)` for `k` in {3, 4, 6}, with `x_j = kappa_{j,l} x^(l)`.
/// `indices` are zero-based.
pub fn hermite_tensor(order: usize, indices: &[usize], x: &Vector, cum: &CumulantSet) -> Result<f64> {
    if !matches!(order, 3 | 4 | 6) {
        return Err(Error::Unsupported(format!("Hermite tensor of order {order}")));
    }
    if indices.len() != order {
        return Err(Error::InvalidInput(format!(
            "order {order} needs {order} indices, got {}",
            indices.len()
        )));
    }
    let d = cum.dim();
    if x.len() != d {
        return Err(Error::DimensionMismatch { expected: d, got: x.len() });
    }
    if let Some(&bad) = indices.iter().find(|&&i| i >= d) {
        return Err(Error::InvalidInput(format!("index {bad} out of range for dimension {d}")));
    }
    let lowered = &cum.kappa_inv * x;
    Ok(hermite_from_pairings(&partial_pairings(order), indices, &lowered, &cum.kappa_inv))
}

fn for_each_index(d: usize, order: usize, mut f: impl FnMut(&[usize])) {
    let mut idx = vec![0usize; order];
    let total = d.pow(order as u32);
    for mut slot in 0..total {
        for pos in (0..order).rev() {
            idx[pos] = slot % d;
            slot /= d;
        }
        f(&idx);
    }
}

/// `Q3(x) = kappa^{j,l,m} h_{jlm}(x) / 6`.
pub fn q3(cum: &CumulantSet, x: &Vector) -> f64 {
    if cum.c3.is_zero() {
        return 0.0;
    }
    let d = cum.dim();
    let lowered = &cum.kappa_inv * x;
    let pairings = partial_pairings(3);
    let mut acc = 0.0;
    for_each_index(d, 3, |idx| {
        let c = cum.c3.get(idx);
        if c != 0.0 {
            acc += c * hermite_from_pairings(&pairings, idx, &lowered, &cum.kappa_inv);
        }
    });
    acc / 6.0
}

/// `Q4(x) = kappa^{j,l,m,q} h_{jlmq}(x) / 24 + kappa^{j,l,m} kappa^{q,r,s} h_{jlmqrs}(x) / 72`.
pub fn q4(cum: &CumulantSet, x: &Vector) -> f64 {
    let d = cum.dim();
    let lowered = &cum.kappa_inv * x;
    let mut acc4 = 0.0;
    if !cum.c4.is_zero() {
        let pairings = partial_pairings(4);
        for_each_index(d, 4, |idx| {
            let c = cum.c4.get(idx);
            if c != 0.0 {
                acc4 += c * hermite_from_pairings(&pairings, idx, &lowered, &cum.kappa_inv);
            }
        });
    }
    let mut acc6 = 0.0;
    if !cum.c3.is_zero() {
        let pairings = partial_pairings(6);
        let mut idx6 = [0usize; 6];
        for_each_index(d, 3, |a| {
            let ca = cum.c3.get(a);
            if ca == 0.0 {
                return;
            }
            for_each_index(d, 3, |b| {
                let cb = cum.c3.get(b);
                if cb == 0.0 {
                    return;
                }
                idx6[..3].copy_from_slice(a);
                idx6[3..].copy_from_slice(b);
                acc6 += ca * cb * hermite_from_pairings(&pairings, &idx6, &lowered, &cum.kappa_inv);
            });
        });
    }
    acc4 / 24.0 + acc6 / 72.0
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeworthOptions {
    /// Floor applied to the correction factor `1 + Q3/sqrt(n) + Q4/n`.
    pub floor: f64,
}

impl Default for EdgeworthOptions {
    fn default() -> Self {
        Self { floor: 1e-12 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeworthValue {
    pub log_density: f64,
    /// `1 + Q3/sqrt(n) + Q4/n` before clamping.
    pub factor: f64,
    /// Set when the factor was `<= 0` and got clamped.
    pub negative: bool,
}

impl EdgeworthValue {
    /// The expansion `n_d(x) * factor` without clamping (may be negative).
    pub fn raw_density(&self, x: &Vector) -> f64 {
        std_normal_log_density(x).exp() * self.factor
    }
}

/// Order-4 Edgeworth log density of `sum_i V_i / sqrt(n)` for i.i.d.
/// standardized summands `V` with cumulants `cum`.
pub fn edgeworth_log_density(cum: &CumulantSet, n: usize, x: &Vector, opts: &EdgeworthOptions) -> Result<EdgeworthValue> {
    if n < 2 {
        return Err(Error::InvalidInput("Edgeworth expansion needs n >= 2".into()));
    }
    if x.len() != cum.dim() {
        return Err(Error::DimensionMismatch {
            expected: cum.dim(),
            got: x.len(),
        });
    }
    let nf = n as f64;
    let factor = 1.0 + q3(cum, x) / nf.sqrt() + q4(cum, x) / nf;
    let negative = factor <= 0.0;
    let clamped = if negative { opts.floor } else { factor.max(opts.floor) };
    Ok(EdgeworthValue {
        log_density: std_normal_log_density(x) + clamped.ln(),
        factor,
        negative,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Deltas {
    pub delta1: f64,
    pub delta2: f64,
    pub delta: f64,
}

/// `delta1 = (1/8) sum_{j,m} kappa^{j,m}`,
/// `delta2 = (15/72) sum_{j,m,q} kappa^{j,j,m} kappa^{m,q,q}`, `delta = delta1 - delta2`.
pub fn delta_diagnostics(cum: &CumulantSet) -> Deltas {
    let d = cum.dim();
    let delta1 = cum.kappa.iter().sum::<f64>() / 8.0;
    let mut s = 0.0;
    for j in 0..d {
        for m in 0..d {
            for q in 0..d {
                s += cum.c3.get(&[j, j, m]) * cum.c3.get(&[m, q, q]);
            }
        }
    }
    let delta2 = 15.0 / 72.0 * s;
    Deltas {
        delta1,
        delta2,
        delta: delta1 - delta2,
    }
}

/// Cumulants of a standardized Exp(1) summand: `kappa = 1`, `c3 = 2`, `c4 = 6`.
pub fn standardized_exponential_cumulants() -> CumulantSet {
    let mut c3 = Tensor::zeros(1, 3);
    c3.set(&[0, 0, 0], 2.0);
    let mut c4 = Tensor::zeros(1, 4);
    c4.set(&[0, 0, 0, 0], 6.0);
    CumulantSet::new(Matrix::identity(1, 1), c3, c4).expect("unit variance")
}

/// Exact density of `(S_n - n)/sqrt(n)` for `S_n` a sum of `n` Exp(1) draws.
pub fn standardized_gamma_density(n: usize, z: f64) -> f64 {
    let nf = n as f64;
    let y = nf + nf.sqrt() * z;
    if y <= 0.0 {
        return 0.0;
    }
    (0.5 * nf.ln() + (nf - 1.0) * y.ln() - y - ln_gamma(nf)).exp()
}

/// Sup-norm error of the Edgeworth density against the exact standardized
/// gamma density, on the grid `z in [-4, 6]` with spacing `0.005`.
pub fn exponential_sup_error(n: usize) -> Result<f64> {
    let cum = standardized_exponential_cumulants();
    let opts = EdgeworthOptions::default();
    let mut worst: f64 = 0.0;
    let steps = 2000;
    for s in 0..=steps {
        let z = -4.0 + 10.0 * s as f64 / steps as f64;
        let x = Vector::from_element(1, z);
        let approx = edgeworth_log_density(&cum, n, &x, &opts)?.raw_density(&x);
        worst = worst.max((approx - standardized_gamma_density(n, z)).abs());
    }
    Ok(worst)
}
