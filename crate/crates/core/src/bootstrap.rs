//! Wild-bootstrap ICM specification tests (Gauss, MDD, DL, ESC6).
//!
//! Every statistic is a quadratic form in the residual vector with weights
//! that depend on `Z` only, so the weights are built once per call and each
//! bootstrap replicate costs one refit plus one `O(n²)` evaluation.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::estimators::{fit, ModelSpec};
use crate::kernels::{kernel_matrix, rows_of, KernelSpec};
use crate::rng::{domain, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IcmFamily {
    Gauss,
    Mdd,
    /// Cramér–von Mises with indicator weights `1(Z_i ≤ z)`.
    Dl,
    /// Cramér–von Mises with projected-indicator (angular) weights.
    Esc6,
}

impl IcmFamily {
    pub const ALL: [IcmFamily; 4] = [IcmFamily::Gauss, IcmFamily::Mdd, IcmFamily::Dl, IcmFamily::Esc6];

    pub fn as_str(self) -> &'static str {
        match self {
            IcmFamily::Gauss => "gauss",
            IcmFamily::Mdd => "mdd",
            IcmFamily::Dl => "dl",
            IcmFamily::Esc6 => "esc6",
        }
    }
}

impl fmt::Display for IcmFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for IcmFamily {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        IcmFamily::ALL
            .into_iter()
            .find(|f| f.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::InvalidParameter(format!("unknown ICM family `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Multiplier {
    /// Two-point law with mean 0, variance 1 and third moment 1.
    Mammen,
    Rademacher,
}

impl FromStr for Multiplier {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mammen" => Ok(Multiplier::Mammen),
            "rademacher" => Ok(Multiplier::Rademacher),
            other => Err(Error::InvalidParameter(format!("unknown multiplier `{other}`"))),
        }
    }
}

impl Multiplier {
    pub fn draw(self, rng: &mut Stream) -> f64 {
        let s5 = 5f64.sqrt();
        match self {
            Multiplier::Mammen => {
                if rng.uniform() < (s5 + 1.0) / (2.0 * s5) {
                    (1.0 - s5) / 2.0
                } else {
                    (1.0 + s5) / 2.0
                }
            }
            Multiplier::Rademacher => {
                if rng.next_u64() >> 63 == 0 {
                    -1.0
                } else {
                    1.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BootstrapConfig {
    #[serde(rename = "B")]
    pub replicates: usize,
    pub multiplier: Multiplier,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self { replicates: 499, multiplier: Multiplier::Mammen, seed: 0 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BootstrapResult {
    pub family: IcmFamily,
    pub statistic: f64,
    pub p_value: f64,
    #[serde(rename = "B")]
    pub replicates: usize,
    pub exceedances: usize,
    pub elapsed: f64,
}

/// Weights of an ICM statistic for a fixed sample of `Z`.
#[derive(Debug, Clone)]
pub struct IcmWeights {
    family: IcmFamily,
    /// Quadratic-form matrix (Gauss, MDD, ESC6) or indicator matrix (DL).
    matrix: DMatrix<f64>,
}

impl IcmWeights {
    pub fn new(family: IcmFamily, z: &DMatrix<f64>) -> Result<Self> {
        let (n, p) = z.shape();
        if n < 2 {
            return Err(Error::TooFewObservations { required: 2, got: n });
        }
        if p == 0 {
            return Err(Error::InvalidParameter("ICM statistics need at least one conditioning column".into()));
        }
        ensure_finite(z.as_slice(), "conditioning variables")?;
        let matrix = match family {
            IcmFamily::Gauss | IcmFamily::Mdd => {
                let k = if family == IcmFamily::Gauss { KernelSpec::gauss(p) } else { KernelSpec::mdd(p) };
                let mut w = kernel_matrix(&k, z)?;
                w.fill_diagonal(0.0);
                w * (-1.0 / (n as f64 - 1.0))
            }
            IcmFamily::Dl => dominance_indicators(z),
            IcmFamily::Esc6 => angular_weights(z),
        };
        Ok(Self { family, matrix })
    }

    pub fn family(&self) -> IcmFamily {
        self.family
    }

    pub fn len(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.matrix.nrows() == 0
    }

    /// The statistic evaluated at residuals `u`.
    pub fn statistic(&self, u: &[f64]) -> Result<f64> {
        let n = self.len();
        if u.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: u.len() });
        }
        ensure_finite(u, "residuals")?;
        let value = match self.family {
            IcmFamily::Gauss | IcmFamily::Mdd => {
                let mean = u.iter().sum::<f64>() / n as f64;
                let c = DVector::from_iterator(n, u.iter().map(|v| v - mean));
                c.dot(&(&self.matrix * &c))
            }
            IcmFamily::Dl => {
                let sums = &self.matrix * DVector::from_column_slice(u);
                sums.norm_squared() / n as f64
            }
            IcmFamily::Esc6 => {
                let c = DVector::from_column_slice(u);
                c.dot(&(&self.matrix * &c))
            }
        };
        Ok(value)
    }
}

/// Row `k`, column `i`: `1(Z_i ≤ Z_k)` componentwise.
fn dominance_indicators(z: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, p) = z.shape();
    let rows = rows_of(z);
    DMatrix::from_fn(n, n, |k, i| {
        let zk = &rows[k * p..(k + 1) * p];
        let zi = &rows[i * p..(i + 1) * p];
        if zi.iter().zip(zk).all(|(a, b)| a <= b) {
            1.0
        } else {
            0.0
        }
    })
}

/// `A_ij = n⁻¹ Σ_{r ≠ i, j} |π − θ_ijr|`, `θ_ijr` the angle between `Z_i − Z_r` and `Z_j − Z_r`.
///
/// Rows are computed independently with a fixed summation order over `r`.
/// Angle in `[0, π]` between two vectors; zero when either vanishes.
fn angle_between(a: &[f64], b: &[f64]) -> f64 {
    let cos: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let mut sin2 = 0.0;
    for k in 0..a.len() {
        for l in k + 1..a.len() {
            let w = a[k] * b[l] - a[l] * b[k];
            sin2 += w * w;
        }
    }
    sin2.sqrt().atan2(cos)
}

fn angular_weights(z: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, p) = z.shape();
    let rows = rows_of(z);
    // Block `r * n + i` (width `q`): planar angle (p = 2) or unit vector of Z_i − Z_r.
    let q = if p == 2 { 1 } else { p };
    let directions: Vec<f64> = (0..n * n)
        .into_par_iter()
        .flat_map_iter(|idx| {
            let (r, i) = (idx / n, idx % n);
            let d: Vec<f64> = (0..p).map(|l| rows[i * p + l] - rows[r * p + l]).collect();
            if p == 2 {
                vec![d[1].atan2(d[0])]
            } else {
                let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
                d.into_iter().map(|v| if norm > 0.0 { v / norm } else { 0.0 }).collect()
            }
        })
        .collect();
    let upper: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (i + 1..n)
                .map(|j| {
                    let mut acc = 0.0;
                    for r in 0..n {
                        if r == i || r == j {
                            continue;
                        }
                        let a = &directions[(r * n + i) * q..(r * n + i + 1) * q];
                        let b = &directions[(r * n + j) * q..(r * n + j + 1) * q];
                        let theta = if p == 2 {
                            let d = (a[0] - b[0]).abs();
                            if d > PI {
                                2.0 * PI - d
                            } else {
                                d
                            }
                        } else {
                            angle_between(a, b)
                        };
                        acc += PI - theta;
                    }
                    acc / n as f64
                })
                .collect()
        })
        .collect();
    let mut out = DMatrix::zeros(n, n);
    for (i, row) in upper.iter().enumerate() {
        // θ_iir = 0 for every r ≠ i.
        out[(i, i)] = PI * (n as f64 - 1.0) / n as f64;
        for (off, v) in row.iter().enumerate() {
            out[(i, i + 1 + off)] = *v;
            out[(i + 1 + off, i)] = *v;
        }
    }
    out
}

/// ICM statistic of the residuals `u` given conditioning variables `z`.
pub fn icm_statistic(u: &[f64], z: &DMatrix<f64>, family: IcmFamily) -> Result<f64> {
    if u.len() != z.nrows() {
        return Err(Error::DimensionMismatch { expected: z.nrows(), got: u.len() });
    }
    IcmWeights::new(family, z)?.statistic(u)
}

/// `(1 + #{T* ≥ T}) / (B + 1)`.
pub fn bootstrap_p_value(statistic: f64, replicates: &[f64]) -> (f64, usize) {
    let exceed = replicates.iter().filter(|t| **t >= statistic).count();
    ((1 + exceed) as f64 / (replicates.len() + 1) as f64, exceed)
}

/// Wild bootstrap of an arbitrary residual statistic.
///
/// `Y* = ĝ + Û v*`, the model is refitted on `Y*` and `stat` is applied to the
/// refitted residuals. Returns the observed statistic and the replicates.
pub fn wild_bootstrap_with<F>(
    y: &[f64],
    x: &DMatrix<f64>,
    model: &ModelSpec,
    cfg: &BootstrapConfig,
    stat: F,
) -> Result<(f64, Vec<f64>)>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    if cfg.replicates == 0 {
        return Err(Error::InvalidParameter("number of bootstrap replicates must be positive".into()));
    }
    let base = fit(model, y, x)?;
    let observed = stat(&base.residuals)?;
    let replicates = (0..cfg.replicates)
        .into_par_iter()
        .map(|b| {
            let mut rng = Stream::new(cfg.seed, domain::MULTIPLIERS, b as u64);
            let y_star: Vec<f64> =
                base.fitted.iter().zip(&base.residuals).map(|(g, u)| g + u * cfg.multiplier.draw(&mut rng)).collect();
            fit(model, &y_star, x)
                .and_then(|refit| stat(&refit.residuals))
                .map_err(|e| Error::Replicate { index: b, source: Box::new(e) })
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok((observed, replicates))
}

/// Wild-bootstrap p-value of the `family` statistic.
pub fn wild_bootstrap_pvalue(
    y: &[f64],
    x: &DMatrix<f64>,
    z: &DMatrix<f64>,
    model: &ModelSpec,
    family: IcmFamily,
    cfg: &BootstrapConfig,
) -> Result<BootstrapResult> {
    let start = Instant::now();
    if z.nrows() != y.len() {
        return Err(Error::DimensionMismatch { expected: y.len(), got: z.nrows() });
    }
    let weights = IcmWeights::new(family, z)?;
    let (statistic, reps) = wild_bootstrap_with(y, x, model, cfg, |u| weights.statistic(u))?;
    let (p_value, exceedances) = bootstrap_p_value(statistic, &reps);
    Ok(BootstrapResult {
        family,
        statistic,
        p_value,
        replicates: cfg.replicates,
        exceedances,
        elapsed: start.elapsed().as_secs_f64(),
    })
}
