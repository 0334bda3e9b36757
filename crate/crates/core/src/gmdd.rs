//! The GMDD dependence metric `−E[(U−EU)(U†−EU)K(Z−Z†)]` and its estimators.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::kernels::{kernel_matrix, KernelSpec};
use crate::pairwise::{dot, offdiag_matvec};

/// Largest sample size accepted by [`fourth_order_ustat`].
pub const FOURTH_ORDER_MAX_N: usize = 12;

/// Observations of a scalar `u` and conditioning vector `z` (one row per observation).
#[derive(Debug, Clone)]
pub struct Sample {
    pub u: Vec<f64>,
    pub z: DMatrix<f64>,
}

impl Sample {
    pub fn new(u: Vec<f64>, z: DMatrix<f64>) -> Result<Self> {
        if z.nrows() != u.len() {
            return Err(Error::DimensionMismatch { expected: u.len(), got: z.nrows() });
        }
        ensure_finite(&u, "u")?;
        ensure_finite(z.as_slice(), "z")?;
        Ok(Self { u, z })
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    fn require(&self, min: usize) -> Result<()> {
        if self.len() < min {
            Err(Error::TooFewObservations { required: min, got: self.len() })
        } else {
            Ok(())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    /// Mean of `u` known to be zero.
    Known,
    /// Mean replaced by the sample average.
    Plugin,
    /// 𝒰-centered, unbiased with unknown mean.
    Ucentered,
}

impl std::str::FromStr for Estimator {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "known" => Ok(Estimator::Known),
            "plugin" => Ok(Estimator::Plugin),
            "ucentered" => Ok(Estimator::Ucentered),
            _ => Err(Error::InvalidParameter(format!("unknown estimator `{s}`"))),
        }
    }
}

pub fn estimate(s: &Sample, k: &KernelSpec, which: Estimator) -> Result<f64> {
    match which {
        Estimator::Known => gmdd_known_mean(s, k),
        Estimator::Plugin => gmdd_plugin_mean(s, k),
        Estimator::Ucentered => gmdd_u_centered(s, k),
    }
}

/// `−(n(n−1))⁻¹ Σ_{i≠j} u_i u_j K(z_i − z_j)`, assuming `E u = 0`.
pub fn gmdd_known_mean(s: &Sample, k: &KernelSpec) -> Result<f64> {
    s.require(2)?;
    let kmat = kernel_matrix(k, &s.z)?;
    Ok(known_mean_from_kernel(&s.u, &kmat))
}

pub(crate) fn known_mean_from_kernel(u: &[f64], kmat: &DMatrix<f64>) -> f64 {
    let n = u.len() as f64;
    let ku = offdiag_matvec(kmat, u);
    -dot(u, &ku) / (n * (n - 1.0))
}

/// Known-mean estimator applied to `u − ū`.
pub fn gmdd_plugin_mean(s: &Sample, k: &KernelSpec) -> Result<f64> {
    s.require(2)?;
    let kmat = kernel_matrix(k, &s.z)?;
    Ok(known_mean_from_kernel(&demean(&s.u), &kmat))
}

pub(crate) fn demean(u: &[f64]) -> Vec<f64> {
    let mean = u.iter().sum::<f64>() / u.len() as f64;
    u.iter().map(|v| v - mean).collect()
}

/// 𝒰-centered inner product `(Ã·B̃)` with `a_ij = K(z_i − z_j)` and `b_ij = −u_i u_j`.
///
/// Diagonals of both matrices are taken as zero before centering; the
/// estimator then coincides with the fourth-order U-statistic
/// ([`fourth_order_ustat`]) and is unbiased for the population metric.
pub fn gmdd_u_centered(s: &Sample, k: &KernelSpec) -> Result<f64> {
    s.require(4)?;
    let n = s.len();
    let a = kernel_matrix(k, &s.z)?;
    let b = DMatrix::from_fn(n, n, |i, j| -s.u[i] * s.u[j]);
    let at = u_center(&a);
    let bt = u_center(&b);
    let mut acc = 0.0;
    for j in 0..n {
        for i in 0..n {
            if i != j {
                acc += at[(i, j)] * bt[(i, j)];
            }
        }
    }
    Ok(acc / (n as f64 * (n as f64 - 3.0)))
}

/// 𝒰-centering of a symmetric matrix whose diagonal is ignored.
fn u_center(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let nf = n as f64;
    let mut row = vec![0.0; n];
    let mut total = 0.0;
    for j in 0..n {
        for i in 0..n {
            if i != j {
                row[i] += a[(i, j)];
            }
        }
    }
    for r in &row {
        total += r;
    }
    DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            0.0
        } else {
            a[(i, j)] - row[i] / (nf - 2.0) - row[j] / (nf - 2.0) + total / ((nf - 1.0) * (nf - 2.0))
        }
    })
}

/// Fourth-order U-statistic form of the 𝒰-centered estimator, by direct
/// enumeration of all 4-subsets and their 24 orderings. `O(n⁴)`; restricted
/// to `n <= 12`.
pub fn fourth_order_ustat(s: &Sample, k: &KernelSpec) -> Result<f64> {
    s.require(4)?;
    let n = s.len();
    if n > FOURTH_ORDER_MAX_N {
        return Err(Error::InvalidParameter(format!(
            "fourth-order enumeration is limited to n <= {FOURTH_ORDER_MAX_N}, got {n}"
        )));
    }
    let p = s.z.ncols();
    let a = |i: usize, j: usize| -> f64 {
        let d: Vec<f64> = (0..p).map(|l| s.z[(i, l)] - s.z[(j, l)]).collect();
        k.eval_unchecked(&d)
    };
    let b = |i: usize, j: usize| -> f64 { -s.u[i] * s.u[j] };
    let perms = permutations4();
    let mut total = 0.0;
    let mut count = 0usize;
    for i in 0..n {
        for j in i + 1..n {
            for q in j + 1..n {
                for r in q + 1..n {
                    let idx = [i, j, q, r];
                    let mut h = 0.0;
                    for perm in &perms {
                        let (s_, t, u, v) = (idx[perm[0]], idx[perm[1]], idx[perm[2]], idx[perm[3]]);
                        let ast = a(s_, t);
                        h += ast * b(u, v) + ast * b(s_, t) - 2.0 * ast * b(s_, u);
                    }
                    total += h / 24.0;
                    count += 1;
                }
            }
        }
    }
    Ok(total / count as f64)
}

fn permutations4() -> Vec<[usize; 4]> {
    let mut out = Vec::with_capacity(24);
    for a in 0..4 {
        for b in 0..4 {
            for c in 0..4 {
                for d in 0..4 {
                    if a != b && a != c && a != d && b != c && b != d && c != d {
                        out.push([a, b, c, d]);
                    }
                }
            }
        }
    }
    out
}

/// One atom of a finitely supported joint law of `(U, Z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SupportPoint {
    pub u: f64,
    pub z: Vec<f64>,
    pub prob: f64,
}

/// Exact GMDD of a discrete joint distribution.
pub fn population_gmdd_discrete(support: &[SupportPoint], k: &KernelSpec) -> Result<f64> {
    if support.is_empty() {
        return Err(Error::Empty("support".into()));
    }
    if support.iter().any(|p| !(p.prob >= 0.0) || !p.u.is_finite()) {
        return Err(Error::InvalidParameter("invalid probability vector".into()));
    }
    let mass: f64 = support.iter().map(|p| p.prob).sum();
    if (mass - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidParameter(format!("probabilities sum to {mass}, not 1")));
    }
    for p in support {
        if p.z.len() != k.dim() {
            return Err(Error::DimensionMismatch { expected: k.dim(), got: p.z.len() });
        }
        ensure_finite(&p.z, "support z")?;
    }
    let mean: f64 = support.iter().map(|p| p.prob * p.u).sum();
    let mut diff = vec![0.0; k.dim()];
    let mut acc = 0.0;
    for a in support {
        for b in support {
            for (d, (x, y)) in diff.iter_mut().zip(a.z.iter().zip(&b.z)) {
                *d = x - y;
            }
            acc += a.prob * b.prob * (a.u - mean) * (b.u - mean) * k.eval_unchecked(&diff);
        }
    }
    Ok(-acc)
}
