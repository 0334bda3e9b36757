//! Null-model fits: OLS, just-identified IV and Gauss–Newton NLS.
//!
//! Each fit returns residuals together with the gradient rows `r_i = ∂g/∂β`
//! and influence rows `φ_i` of the linear representation
//! `√n(β̂ − β) = n^{-1/2} Σ φ_i U_i + o_p(1)`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{ensure_finite, Error, Result};

const RANK_TOL: f64 = 1e-10;
const NLS_GRADIENT_TOL: f64 = 1e-10;
const NLS_MAX_ITER: usize = 200;

type MeanFn = dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync;
type GradFn = dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync;

/// User-supplied regression function `g(x; β)` with its gradient in `β`.
#[derive(Clone)]
pub struct NlsModel {
    pub name: String,
    pub g: Arc<MeanFn>,
    pub grad: Arc<GradFn>,
    pub start: Vec<f64>,
}

impl NlsModel {
    pub fn new(
        name: impl Into<String>,
        start: Vec<f64>,
        g: impl Fn(&[f64], &[f64]) -> f64 + Send + Sync + 'static,
        grad: impl Fn(&[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        Self { name: name.into(), g: Arc::new(g), grad: Arc::new(grad), start }
    }
}

impl fmt::Debug for NlsModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "NlsModel({}, start={:?})", self.name, self.start)
    }
}

#[derive(Debug, Clone)]
pub enum ModelKind {
    Ols,
    /// Excluded instruments, one per regressor. Included exogenous regressors
    /// should be repeated here so they instrument themselves.
    Iv {
        instruments: DMatrix<f64>,
    },
    Nls(NlsModel),
}

#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub kind: ModelKind,
    /// Prepend a constant column to the regressors (and instruments).
    pub intercept: bool,
}

impl ModelSpec {
    pub fn ols() -> Self {
        Self { kind: ModelKind::Ols, intercept: false }
    }

    pub fn iv(instruments: DMatrix<f64>) -> Self {
        Self { kind: ModelKind::Iv { instruments }, intercept: false }
    }

    pub fn nls(model: NlsModel) -> Self {
        Self { kind: ModelKind::Nls(model), intercept: false }
    }

    pub fn with_intercept(mut self) -> Self {
        self.intercept = true;
        self
    }

    pub fn instruments(&self) -> Option<&DMatrix<f64>> {
        match &self.kind {
            ModelKind::Iv { instruments } => Some(instruments),
            _ => None,
        }
    }

    /// Number of coefficients for `p` raw regressor columns.
    pub fn n_coefficients(&self, p: usize) -> usize {
        match &self.kind {
            ModelKind::Nls(m) => m.start.len(),
            _ => p + usize::from(self.intercept),
        }
    }

    /// Regressor matrix with the optional constant column in front.
    pub fn design(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        if self.intercept {
            x.clone().insert_column(0, 1.0)
        } else {
            x.clone()
        }
    }

    /// `g(x_i; β)` for every row and the gradient rows `g′(x_i; β)`.
    pub fn mean_and_gradient(&self, x: &DMatrix<f64>, beta: &[f64]) -> Result<(Vec<f64>, DMatrix<f64>)> {
        let k = self.n_coefficients(x.ncols());
        if beta.len() != k {
            return Err(Error::DimensionMismatch { expected: k, got: beta.len() });
        }
        match &self.kind {
            ModelKind::Nls(m) => {
                let n = x.nrows();
                let mut values = Vec::with_capacity(n);
                let mut grad = DMatrix::zeros(n, k);
                let mut row = vec![0.0; x.ncols()];
                let mut g = vec![0.0; k];
                for i in 0..n {
                    for (l, r) in row.iter_mut().enumerate() {
                        *r = x[(i, l)];
                    }
                    values.push((m.g)(&row, beta));
                    (m.grad)(&row, beta, &mut g);
                    for (l, v) in g.iter().enumerate() {
                        grad[(i, l)] = *v;
                    }
                }
                ensure_finite(&values, "regression function")?;
                ensure_finite(grad.as_slice(), "regression gradient")?;
                Ok((values, grad))
            }
            _ => {
                let d = self.design(x);
                let values = (&d * DVector::from_column_slice(beta)).as_slice().to_vec();
                Ok((values, d))
            }
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EstimationResult {
    pub beta_hat: Vec<f64>,
    #[serde(skip)]
    pub residuals: Vec<f64>,
    #[serde(skip)]
    pub fitted: Vec<f64>,
    /// `φ_i` as rows, `n × k`.
    #[serde(skip)]
    pub influence: DMatrix<f64>,
    /// `r_i = g′(x_i; β̂)` as rows, `n × k`.
    #[serde(skip)]
    pub gradient: DMatrix<f64>,
    pub residual_sd: f64,
    /// Ratio of extreme singular values of the matrix inverted by the fit.
    pub condition_number: f64,
    pub iterations: usize,
}

fn check_rank(m: &DMatrix<f64>, what: &str) -> Result<f64> {
    let sv = m.singular_values();
    let max = sv.max();
    let min = sv.min();
    if !(max > 0.0) || !(min > RANK_TOL * max) {
        return Err(Error::RankDeficient(format!("{what}: smallest singular value {min:e} vs largest {max:e}")));
    }
    Ok(max / min)
}

fn invert(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    m.clone().try_inverse().ok_or_else(|| Error::RankDeficient(format!("{what} is singular")))
}

fn sd(x: &[f64]) -> f64 {
    crate::stats::mean_sd(x).1
}

/// Fits the null model `y = g(x; β) + U`.
pub fn fit(spec: &ModelSpec, y: &[f64], x: &DMatrix<f64>) -> Result<EstimationResult> {
    let n = y.len();
    if x.nrows() != n {
        return Err(Error::DimensionMismatch { expected: n, got: x.nrows() });
    }
    ensure_finite(y, "response")?;
    ensure_finite(x.as_slice(), "regressors")?;
    let k = spec.n_coefficients(x.ncols());
    if k == 0 {
        return Err(Error::InvalidParameter("model has no coefficients".into()));
    }
    if n <= k {
        return Err(Error::TooFewObservations { required: k + 1, got: n });
    }
    match &spec.kind {
        ModelKind::Ols => fit_ols(spec, y, x),
        ModelKind::Iv { instruments } => fit_iv(spec, y, x, instruments),
        ModelKind::Nls(m) => {
            if spec.intercept {
                return Err(Error::InvalidParameter("intercept is not supported for NLS models".into()));
            }
            fit_nls(spec, m, y, x)
        }
    }
}

fn finish(
    y: &[f64],
    beta: DVector<f64>,
    fitted: Vec<f64>,
    influence: DMatrix<f64>,
    gradient: DMatrix<f64>,
    condition_number: f64,
    iterations: usize,
) -> EstimationResult {
    let residuals: Vec<f64> = y.iter().zip(&fitted).map(|(a, b)| a - b).collect();
    EstimationResult {
        beta_hat: beta.as_slice().to_vec(),
        residual_sd: sd(&residuals),
        residuals,
        fitted,
        influence,
        gradient,
        condition_number,
        iterations,
    }
}

fn fit_ols(spec: &ModelSpec, y: &[f64], x: &DMatrix<f64>) -> Result<EstimationResult> {
    let n = y.len() as f64;
    let d = spec.design(x);
    let cond = check_rank(&d, "regressor matrix")?;
    let yv = DVector::from_column_slice(y);
    let gram = d.transpose() * &d / n;
    let gram_inv = invert(&gram, "X'X")?;
    let beta = &gram_inv * (d.transpose() * &yv) / n;
    let fitted = (&d * &beta).as_slice().to_vec();
    let influence = &d * &gram_inv;
    Ok(finish(y, beta, fitted, influence, d, cond, 0))
}

fn fit_iv(spec: &ModelSpec, y: &[f64], x: &DMatrix<f64>, instruments: &DMatrix<f64>) -> Result<EstimationResult> {
    let n = y.len() as f64;
    if instruments.nrows() != y.len() {
        return Err(Error::DimensionMismatch { expected: y.len(), got: instruments.nrows() });
    }
    if instruments.ncols() != x.ncols() {
        return Err(Error::InvalidParameter(format!(
            "IV must be just-identified: {} instruments for {} regressors",
            instruments.ncols(),
            x.ncols()
        )));
    }
    ensure_finite(instruments.as_slice(), "instruments")?;
    let d = spec.design(x);
    let zt = spec.design(instruments);
    check_rank(&d, "regressor matrix")?;
    check_rank(&zt, "instrument matrix")?;
    let cross = zt.transpose() * &d / n;
    let cond = check_rank(&cross, "Z'X")?;
    let cross_inv = invert(&cross, "Z'X")?;
    let yv = DVector::from_column_slice(y);
    let beta = &cross_inv * (zt.transpose() * &yv) / n;
    let fitted = (&d * &beta).as_slice().to_vec();
    let influence = &zt * cross_inv.transpose();
    Ok(finish(y, beta, fitted, influence, d, cond, 0))
}

fn fit_nls(spec: &ModelSpec, m: &NlsModel, y: &[f64], x: &DMatrix<f64>) -> Result<EstimationResult> {
    let n = y.len() as f64;
    let yv = DVector::from_column_slice(y);
    let mut beta = DVector::from_column_slice(&m.start);
    let objective = |b: &DVector<f64>| -> Result<(f64, DVector<f64>, DMatrix<f64>)> {
        let (g, j) = spec.mean_and_gradient(x, b.as_slice())?;
        let r = &yv - DVector::from_vec(g);
        Ok((r.norm_squared(), r, j))
    };
    let (mut ssr, mut resid, mut jac) = objective(&beta)?;
    let mut iterations = 0;
    loop {
        let score = jac.transpose() * &resid;
        if score.norm() / n < NLS_GRADIENT_TOL {
            break;
        }
        if iterations == NLS_MAX_ITER {
            return Err(Error::NoConvergence(NLS_MAX_ITER));
        }
        iterations += 1;
        let normal = jac.transpose() * &jac;
        let step = normal
            .clone()
            .cholesky()
            .map(|c| c.solve(&score))
            .ok_or_else(|| Error::RankDeficient("Gauss-Newton normal matrix".into()))?;
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let trial = &beta + &step * scale;
            if let Ok((s, r, j)) = objective(&trial) {
                if s <= ssr {
                    beta = trial;
                    ssr = s;
                    resid = r;
                    jac = j;
                    accepted = true;
                    break;
                }
            }
            scale *= 0.5;
        }
        if !accepted {
            // No decrease is possible at machine precision; the score test above decides.
            let score = jac.transpose() * &resid;
            if score.norm() / n < NLS_GRADIENT_TOL {
                break;
            }
            return Err(Error::NoConvergence(iterations));
        }
    }
    let gram = jac.transpose() * &jac / n;
    let cond = check_rank(&jac, "NLS gradient matrix")?;
    let gram_inv = invert(&gram, "NLS information matrix")?;
    let fitted: Vec<f64> = y.iter().zip(resid.iter()).map(|(a, r)| a - r).collect();
    let influence = &jac * &gram_inv;
    Ok(finish(y, beta, fitted, influence, jac, cond, iterations))
}
