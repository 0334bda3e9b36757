//! Weight functions `K(z)` of the GMDD family.
//!
//! Integrable integrating measures enter through the negated Fourier transform
//! of their density (or a negated symmetric density); the non-integrable
//! Szekely-Rizzo-Bakirov measures enter through `‖z‖^α`. Additive constants
//! are dropped everywhere: `K` is only ever used inside centered double sums.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{ensure_finite, Error, Result};

/// Below this magnitude the `sin(x)/x` and `2(1-cos x)/x²` ratios are
/// evaluated by their Taylor expansions.
const TAYLOR_CUTOFF: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub enum KernelFamily {
    Gauss,
    Mdd,
    Srb {
        alpha: f64,
    },
    Laplace {
        sigma: f64,
    },
    /// Per-coordinate scales `a_l`; an empty vector means all ones.
    Uniform {
        scales: Vec<f64>,
    },
    Triangular,
    Logistic,
    Cauchy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelSpec {
    family: KernelFamily,
    dim: usize,
    negated: bool,
}

impl KernelSpec {
    pub fn new(family: KernelFamily, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("kernel dimension must be positive".into()));
        }
        let family = match family {
            KernelFamily::Srb { alpha } => {
                if !(alpha > 0.0 && alpha < 2.0) {
                    return Err(Error::InvalidParameter(format!("SRB exponent must lie in (0, 2), got {alpha}")));
                }
                KernelFamily::Srb { alpha }
            }
            KernelFamily::Laplace { sigma } => {
                if !(sigma > 0.0 && sigma.is_finite()) {
                    return Err(Error::InvalidParameter(format!("Laplace scale must be positive, got {sigma}")));
                }
                KernelFamily::Laplace { sigma }
            }
            KernelFamily::Uniform { scales } => {
                let scales = match scales.len() {
                    0 => vec![1.0; dim],
                    1 => vec![scales[0]; dim],
                    l if l == dim => scales,
                    l => return Err(Error::DimensionMismatch { expected: dim, got: l }),
                };
                if scales.iter().any(|a| !(*a > 0.0 && a.is_finite())) {
                    return Err(Error::InvalidParameter("uniform kernel scales must be positive".into()));
                }
                KernelFamily::Uniform { scales }
            }
            other => other,
        };
        Ok(Self { family, dim, negated: false })
    }

    pub fn gauss(dim: usize) -> Self {
        Self { family: KernelFamily::Gauss, dim, negated: false }
    }

    pub fn mdd(dim: usize) -> Self {
        Self { family: KernelFamily::Mdd, dim, negated: false }
    }

    pub fn family(&self) -> &KernelFamily {
        &self.family
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Same weight function with the sign flipped. Statistics built from
    /// `delta_hat` and its covariance are invariant under this change.
    pub fn negated(&self) -> Self {
        Self { negated: !self.negated, ..self.clone() }
    }

    /// Returns the same kernel family for a different argument dimension.
    pub fn with_dim(&self, dim: usize) -> Result<Self> {
        let family = match &self.family {
            KernelFamily::Uniform { scales } if scales.len() != dim => {
                let first = scales.first().copied().unwrap_or(1.0);
                if scales.iter().all(|a| *a == first) {
                    KernelFamily::Uniform { scales: vec![first; dim] }
                } else {
                    return Err(Error::DimensionMismatch { expected: scales.len(), got: dim });
                }
            }
            f => f.clone(),
        };
        let mut spec = Self::new(family, dim)?;
        spec.negated = self.negated;
        Ok(spec)
    }

    /// `K(z)`, validated.
    pub fn eval(&self, z: &[f64]) -> Result<f64> {
        if z.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: z.len() });
        }
        ensure_finite(z, "kernel argument")?;
        Ok(self.eval_unchecked(z))
    }

    /// `K(z)` without dimension or finiteness checks.
    pub fn eval_unchecked(&self, z: &[f64]) -> f64 {
        let value = match &self.family {
            KernelFamily::Gauss => -(-0.5 * sq_norm(z)).exp(),
            KernelFamily::Mdd => sq_norm(z).sqrt(),
            KernelFamily::Srb { alpha } => sq_norm(z).powf(0.5 * alpha),
            KernelFamily::Laplace { sigma } => -(-sq_norm(z).sqrt() / sigma).exp(),
            KernelFamily::Uniform { scales } => {
                -z.iter().zip(scales).map(|(zl, a)| sinc(a * zl.abs())).product::<f64>()
            }
            KernelFamily::Triangular => -z.iter().map(|zl| tri_ft(zl.abs())).product::<f64>(),
            KernelFamily::Logistic => -z
                .iter()
                .map(|zl| {
                    let e = (-zl.abs()).exp();
                    e / ((1.0 + e) * (1.0 + e))
                })
                .product::<f64>(),
            KernelFamily::Cauchy => -z.iter().map(|zl| 1.0 / (PI * (1.0 + zl * zl))).product::<f64>(),
        };
        if self.negated {
            -value
        } else {
            value
        }
    }

    /// Bounded families satisfy `|K(z)| <= |K(0)|`.
    pub fn is_integrable(&self) -> bool {
        !matches!(self.family, KernelFamily::Mdd | KernelFamily::Srb { .. })
    }
}

fn sq_norm(z: &[f64]) -> f64 {
    z.iter().map(|v| v * v).sum()
}

/// `sin(x)/x` for `x >= 0`.
fn sinc(x: f64) -> f64 {
    if x < TAYLOR_CUTOFF {
        let x2 = x * x;
        1.0 - x2 / 6.0 + x2 * x2 / 120.0
    } else {
        x.sin() / x
    }
}

/// `2(1 - cos x)/x²` for `x >= 0`: the Fourier transform of the triangular
/// density on `[-1, 1]`.
fn tri_ft(x: f64) -> f64 {
    if x < TAYLOR_CUTOFF {
        let x2 = x * x;
        1.0 - x2 / 12.0 + x2 * x2 / 360.0
    } else {
        // 1 - cos x = 2 sin²(x/2) avoids cancellation for small x.
        let s = (0.5 * x).sin();
        4.0 * s * s / (x * x)
    }
}

impl fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.negated {
            write!(f, "-")?;
        }
        match &self.family {
            KernelFamily::Gauss => write!(f, "gauss"),
            KernelFamily::Mdd => write!(f, "mdd"),
            KernelFamily::Srb { alpha } => write!(f, "srb:{alpha}"),
            KernelFamily::Laplace { sigma } => write!(f, "laplace:{sigma}"),
            KernelFamily::Uniform { scales } => {
                if scales.iter().all(|a| *a == 1.0) {
                    write!(f, "uniform")
                } else {
                    let s: Vec<String> = scales.iter().map(|a| a.to_string()).collect();
                    write!(f, "uniform:{}", s.join(","))
                }
            }
            KernelFamily::Triangular => write!(f, "triangular"),
            KernelFamily::Logistic => write!(f, "logistic"),
            KernelFamily::Cauchy => write!(f, "cauchy"),
        }
    }
}

impl FromStr for KernelFamily {
    type Err = Error;

    /// Parses `gauss`, `mdd`, `srb:<alpha>`, `laplace[:<sigma>]`,
    /// `uniform[:<a1,a2,..>]`, `triangular`, `logistic`, `cauchy`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (s.as_str(), None),
        };
        let parse_real = |a: &str| {
            a.trim().parse::<f64>().map_err(|_| Error::InvalidParameter(format!("bad kernel parameter `{a}`")))
        };
        let family = match (name, arg) {
            ("gauss", None) => KernelFamily::Gauss,
            ("mdd", None) => KernelFamily::Mdd,
            ("srb", Some(a)) => KernelFamily::Srb { alpha: parse_real(a)? },
            ("laplace", None) => KernelFamily::Laplace { sigma: 1.0 },
            ("laplace", Some(a)) => KernelFamily::Laplace { sigma: parse_real(a)? },
            ("uniform", None) => KernelFamily::Uniform { scales: Vec::new() },
            ("uniform", Some(a)) => {
                KernelFamily::Uniform { scales: a.split(',').map(parse_real).collect::<Result<_>>()? }
            }
            ("triangular", None) => KernelFamily::Triangular,
            ("logistic", None) => KernelFamily::Logistic,
            ("cauchy", None) => KernelFamily::Cauchy,
            _ => return Err(Error::InvalidParameter(format!("unknown kernel `{s}`"))),
        };
        Ok(family)
    }
}

/// Row-major copy of an `n × p` matrix, used by the pairwise loops.
pub(crate) fn rows_of(z: &DMatrix<f64>) -> Vec<f64> {
    let (n, p) = z.shape();
    let mut out = Vec::with_capacity(n * p);
    for i in 0..n {
        for l in 0..p {
            out.push(z[(i, l)]);
        }
    }
    out
}

/// Column-major `n × n` buffer of `f(z_i − z_j)`, evaluated on `i ≤ j` and mirrored.
fn fill_symmetric(n: usize, p: usize, rows: &[f64], f: impl Fn(&[f64]) -> f64 + Sync) -> Vec<f64> {
    let mut data = vec![0.0; n * n];
    data.par_chunks_mut(n.max(1)).enumerate().for_each(|(j, col)| {
        let zj = &rows[j * p..(j + 1) * p];
        let mut diff = vec![0.0; p];
        for (i, out) in col[..=j].iter_mut().enumerate() {
            let zi = &rows[i * p..(i + 1) * p];
            for l in 0..p {
                diff[l] = zi[l] - zj[l];
            }
            *out = f(&diff);
        }
    });
    // Tiled so both the reads and the strided writes stay in cache.
    const TILE: usize = 32;
    for jb in (0..n).step_by(TILE) {
        for ib in (0..=jb).step_by(TILE) {
            for j in jb..(jb + TILE).min(n) {
                for i in ib..(ib + TILE).min(j) {
                    data[j + i * n] = data[i + j * n];
                }
            }
        }
    }
    data
}

/// `n × n` matrix of `K(Z_i - Z_j)`.
///
/// Every entry is computed independently (upper triangle, then mirrored), so
/// the result does not depend on how columns are scheduled across threads.
pub fn kernel_matrix(spec: &KernelSpec, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (n, p) = z.shape();
    if p != spec.dim() {
        return Err(Error::DimensionMismatch { expected: spec.dim(), got: p });
    }
    ensure_finite(z.as_slice(), "kernel sample")?;
    let rows = rows_of(z);
    let sign = if spec.negated { -1.0 } else { 1.0 };
    let data = match spec.family {
        KernelFamily::Gauss => fill_symmetric(n, p, &rows, |d| -sign * (-0.5 * sq_norm(d)).exp()),
        KernelFamily::Mdd => fill_symmetric(n, p, &rows, |d| sign * sq_norm(d).sqrt()),
        _ => fill_symmetric(n, p, &rows, |d| spec.eval_unchecked(d)),
    };
    let k = DMatrix::from_vec(n, n, data);
    Ok(k)
}
