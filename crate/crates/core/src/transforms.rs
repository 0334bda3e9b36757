//! Real-valued functions of the conditioning vector, used to build `V`.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{ensure_finite, Error, Result};

type RowFn = dyn Fn(&[f64]) -> f64 + Send + Sync;

#[derive(Clone)]
pub enum ZFunction {
    /// Evaluated row by row on `Z`.
    Closure { name: String, f: Arc<RowFn> },
    /// Already evaluated, one value per observation (e.g. a CSV column).
    Values { name: String, values: Vec<f64> },
}

impl ZFunction {
    pub fn closure(name: impl Into<String>, f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        ZFunction::Closure { name: name.into(), f: Arc::new(f) }
    }

    pub fn values(name: impl Into<String>, values: Vec<f64>) -> Self {
        ZFunction::Values { name: name.into(), values }
    }

    /// `exp(0.5 Σ_l z_l)`.
    pub fn exp_half_sum() -> Self {
        Self::closure("exp_half_sum", |z| (0.5 * z.iter().sum::<f64>()).exp())
    }

    /// `z_1² + z_2² + z_1 z_2`.
    pub fn quadratic_pair() -> Self {
        Self::closure("z1^2+z2^2+z1*z2", |z| z[0] * z[0] + z[1] * z[1] + z[0] * z[1])
    }

    /// `z_1 z_2`.
    pub fn cross_pair() -> Self {
        Self::closure("z1*z2", |z| z[0] * z[1])
    }

    pub fn name(&self) -> &str {
        match self {
            ZFunction::Closure { name, .. } | ZFunction::Values { name, .. } => name,
        }
    }

    pub fn eval(&self, z: &DMatrix<f64>) -> Result<Vec<f64>> {
        let n = z.nrows();
        let out = match self {
            ZFunction::Closure { f, .. } => {
                let mut row = vec![0.0; z.ncols()];
                (0..n)
                    .map(|i| {
                        for (l, r) in row.iter_mut().enumerate() {
                            *r = z[(i, l)];
                        }
                        f(&row)
                    })
                    .collect()
            }
            ZFunction::Values { values, .. } => {
                if values.len() != n {
                    return Err(Error::DimensionMismatch { expected: n, got: values.len() });
                }
                values.clone()
            }
        };
        ensure_finite(&out, self.name())?;
        Ok(out)
    }
}

impl fmt::Debug for ZFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ZFunction::Closure { name, .. } => write!(f, "ZFunction::Closure({name})"),
            ZFunction::Values { name, values } => write!(f, "ZFunction::Values({name}, n={})", values.len()),
        }
    }
}

pub(crate) fn sample_variance(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0).max(1.0)
}

/// Absolute sample correlation; `None` when either side is constant.
pub(crate) fn abs_correlation(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        None
    } else {
        Some((sab / (saa.sqrt() * sbb.sqrt())).abs())
    }
}

/// Errors when `x` is numerically constant across observations.
pub(crate) fn require_nondegenerate(x: &[f64], name: &str) -> Result<()> {
    let scale = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if sample_variance(x) <= (1e-14 * scale).powi(2) {
        Err(Error::DegenerateFunction(format!("`{name}` has zero sample variance")))
    } else {
        Ok(())
    }
}
