//! Thresholded Moore–Penrose inverse of a sample covariance.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};

pub const DEFAULT_IOTA: f64 = 0.001;

/// What the eigenvalues are compared against `c_n` as.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdScale {
    /// Raw eigenvalues: keep `λ_i > c_n`.
    Absolute,
    /// Eigenvalues divided by the largest one: keep `λ_i > c_n · λ_1`.
    #[default]
    Relative,
}

impl fmt::Display for ThresholdScale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ThresholdScale::Absolute => "absolute",
            ThresholdScale::Relative => "relative",
        })
    }
}

impl FromStr for ThresholdScale {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "absolute" => Ok(ThresholdScale::Absolute),
            "relative" => Ok(ThresholdScale::Relative),
            other => Err(Error::InvalidParameter(format!("unknown threshold scale `{other}`"))),
        }
    }
}

/// Regularization settings for the Wald statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Threshold {
    pub iota: f64,
    pub scale: ThresholdScale,
}

impl Default for Threshold {
    fn default() -> Self {
        Self { iota: DEFAULT_IOTA, scale: ThresholdScale::default() }
    }
}

impl Threshold {
    pub fn absolute(iota: f64) -> Self {
        Self { iota, scale: ThresholdScale::Absolute }
    }

    pub fn relative(iota: f64) -> Self {
        Self { iota, scale: ThresholdScale::Relative }
    }

    pub fn pinv(&self, a: &DMatrix<f64>, n: usize) -> Result<ThresholdedInverse> {
        thresholded_pinv_scaled(a, n, self.iota, self.scale)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ThresholdedInverse {
    #[serde(skip)]
    pub pseudo_inverse: DMatrix<f64>,
    pub retained_rank: usize,
    /// Eigenvalues of the symmetrized input, in descending order.
    pub eigenvalues: Vec<f64>,
    /// Cutoff applied: `c_n`, or `c_n · λ_1` on the relative scale.
    pub threshold: f64,
}

/// `c_n = n^{−1/2+ι}`.
pub fn threshold(n: usize, iota: f64) -> f64 {
    (n as f64).powf(-0.5 + iota)
}

/// Eigenpairs of `(A + A')/2` sorted by descending eigenvalue.
pub fn sorted_eigen(a: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let p = a.nrows();
    if a.ncols() != p {
        return Err(Error::DimensionMismatch { expected: p, got: a.ncols() });
    }
    ensure_finite(a.as_slice(), "covariance matrix")?;
    let sym = (a + a.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = DMatrix::zeros(p, p);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    Ok((values, vectors))
}

/// Generalized inverse keeping only eigenvalues strictly above `c_n = n^{−1/2+ι}`.
///
/// Negative and tied eigenvalues are discarded with the small ones.
pub fn thresholded_pinv(a: &DMatrix<f64>, n: usize, iota: f64) -> Result<ThresholdedInverse> {
    thresholded_pinv_scaled(a, n, iota, ThresholdScale::Absolute)
}

/// As [`thresholded_pinv`], with the cutoff `c_n · λ_1` under [`ThresholdScale::Relative`].
///
/// A nonpositive leading eigenvalue leaves nothing retained under either scale.
pub fn thresholded_pinv_scaled(
    a: &DMatrix<f64>,
    n: usize,
    iota: f64,
    scale: ThresholdScale,
) -> Result<ThresholdedInverse> {
    if !(iota > 0.0 && iota < 0.5) {
        return Err(Error::InvalidParameter(format!("iota must lie in (0, 0.5), got {iota}")));
    }
    if n < 2 {
        return Err(Error::TooFewObservations { required: 2, got: n });
    }
    let (values, vectors) = sorted_eigen(a)?;
    let c_n = threshold(n, iota);
    let cut = match scale {
        ThresholdScale::Absolute => c_n,
        ThresholdScale::Relative => c_n * values.first().copied().unwrap_or(0.0).max(0.0),
    };
    let p = values.len();
    let mut pinv = DMatrix::zeros(p, p);
    let mut rank = 0;
    for (idx, &lambda) in values.iter().enumerate() {
        if lambda > cut && lambda > 0.0 {
            rank += 1;
            let g = vectors.column(idx);
            pinv += (g * g.transpose()) / lambda;
        }
    }
    Ok(ThresholdedInverse { pseudo_inverse: pinv, retained_rank: rank, eigenvalues: values, threshold: cut })
}
