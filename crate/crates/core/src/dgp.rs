//! Simulation designs: five regression designs and four mean-independence designs.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Stream;
use crate::stats::normal_quantile;

/// Correlation between the paired standard normal covariates.
const PAIR_COV: f64 = 0.25;
/// Correlation between the structural and first-stage errors.
const ENDOGENEITY_COV: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum DgpId {
    Ls1,
    Ls2,
    Ls3,
    Ls4,
    Ls5,
    Mi1,
    Mi2,
    Mi3,
    Mi4,
}

impl DgpId {
    pub const ALL: [DgpId; 9] =
        [DgpId::Ls1, DgpId::Ls2, DgpId::Ls3, DgpId::Ls4, DgpId::Ls5, DgpId::Mi1, DgpId::Mi2, DgpId::Mi3, DgpId::Mi4];

    /// Regression designs, as opposed to mean-independence designs.
    pub fn is_regression(self) -> bool {
        matches!(self, DgpId::Ls1 | DgpId::Ls2 | DgpId::Ls3 | DgpId::Ls4 | DgpId::Ls5)
    }

    /// Designs whose first regressor is endogenous and instrumented.
    pub fn is_endogenous(self) -> bool {
        matches!(self, DgpId::Ls2 | DgpId::Ls3 | DgpId::Ls4)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DgpId::Ls1 => "LS1",
            DgpId::Ls2 => "LS2",
            DgpId::Ls3 => "LS3",
            DgpId::Ls4 => "LS4",
            DgpId::Ls5 => "LS5",
            DgpId::Mi1 => "MI1",
            DgpId::Mi2 => "MI2",
            DgpId::Mi3 => "MI3",
            DgpId::Mi4 => "MI4",
        }
    }
}

impl fmt::Display for DgpId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DgpId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        DgpId::ALL
            .into_iter()
            .find(|d| d.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::InvalidParameter(format!("unknown DGP `{s}`")))
    }
}

/// One simulated sample.
#[derive(Debug, Clone)]
pub struct Generated {
    pub y: Vec<f64>,
    /// Regressors (`n × 2`); empty for mean-independence designs.
    pub x: DMatrix<f64>,
    /// Conditioning variables / instruments (`n × 2`).
    pub z: DMatrix<f64>,
    /// Standard normal structural shock before heteroskedastic scaling.
    pub shock: Vec<f64>,
    /// First-stage error correlated with `shock` (endogenous designs only).
    pub first_stage: Vec<f64>,
    /// The `γ`-scaled departure from the null, per observation.
    pub departure: Vec<f64>,
}

/// Pair of standard normals with correlation `rho` from two independent ones.
fn correlated(a: f64, b: f64, rho: f64) -> (f64, f64) {
    (a, rho * a + (1.0 - rho * rho).sqrt() * b)
}

/// Draws one sample of size `n` from `id` with departure parameter `gamma`.
pub fn generate(id: DgpId, n: usize, gamma: f64, rng: &mut Stream) -> Result<Generated> {
    if n < 2 {
        return Err(Error::TooFewObservations { required: 2, got: n });
    }
    if !gamma.is_finite() {
        return Err(Error::InvalidParameter("gamma must be finite".into()));
    }
    if id.is_regression() {
        Ok(regression(id, n, gamma, rng))
    } else {
        Ok(mean_independence(id, n, gamma, rng))
    }
}

fn regression(id: DgpId, n: usize, gamma: f64, rng: &mut Stream) -> Generated {
    let nf = n as f64;
    let sin_scale = ((1.0 - (-8.0f64).exp()) / 2.0).sqrt();
    let mut out = Generated {
        y: Vec::with_capacity(n),
        x: DMatrix::zeros(n, 2),
        z: DMatrix::zeros(n, 2),
        shock: Vec::with_capacity(n),
        first_stage: Vec::new(),
        departure: Vec::with_capacity(n),
    };
    for i in 0..n {
        let (z1, z2) = correlated(rng.normal(), rng.normal(), PAIR_COV);
        let u = rng.normal();
        let (x1, x2) = if id.is_endogenous() {
            let (_, ut) = correlated(u, rng.normal(), ENDOGENEITY_COV);
            out.first_stage.push(ut);
            ((z1 + ut) / std::f64::consts::SQRT_2, z2)
        } else {
            (z1, z2)
        };
        let departure = match id {
            DgpId::Ls2 => gamma * z1 * z1 / std::f64::consts::SQRT_2,
            DgpId::Ls3 => 5.0 * gamma * z1 * z1 / nf.sqrt(),
            DgpId::Ls4 => gamma * (2.0 * z1).sin() / sin_scale,
            DgpId::Ls5 => gamma * x1 * x2,
            _ => 0.0,
        };
        out.z[(i, 0)] = z1;
        out.z[(i, 1)] = z2;
        out.x[(i, 0)] = x1;
        out.x[(i, 1)] = x2;
        out.y.push(x1 + x2 + departure + u / (1.0 + x2 * x2).sqrt());
        out.shock.push(u);
        out.departure.push(departure);
    }
    out
}

fn mean_independence(id: DgpId, n: usize, gamma: f64, rng: &mut Stream) -> Generated {
    let nf = n as f64;
    let cutoff = -normal_quantile(0.25);
    let mut out = Generated {
        y: Vec::with_capacity(n),
        x: DMatrix::zeros(n, 0),
        z: DMatrix::zeros(n, 2),
        shock: Vec::with_capacity(n),
        first_stage: Vec::new(),
        departure: Vec::with_capacity(n),
    };
    for i in 0..n {
        let (a1, a2) = correlated(rng.normal(), rng.normal(), PAIR_COV);
        let (b3, b4) = correlated(rng.normal(), rng.normal(), PAIR_COV);
        let e = rng.normal();
        let spread = 1.0 + b3 * b3 + b4 * b4;
        let (mean, noise, z) = match id {
            DgpId::Mi1 => (a1 + a2, e / spread.sqrt(), (b3, b4)),
            DgpId::Mi2 => (0.5 * gamma * (a1 * a1 + a2 * a2).sqrt(), e / (2.0 * spread).sqrt(), (a1, b4)),
            DgpId::Mi3 => {
                (0.5 * gamma * if a1.abs() < cutoff { 1.0 } else { 0.0 }, e / (2.0 * spread).sqrt(), (a1, b4))
            }
            _ => (gamma * (a1 + a2).powi(2) / nf.sqrt(), e / (2.0 * spread).sqrt(), (a1, b4)),
        };
        out.z[(i, 0)] = z.0;
        out.z[(i, 1)] = z.1;
        out.y.push(mean + noise);
        out.shock.push(e);
        out.departure.push(mean);
    }
    out
}
