//! χ² specification test for a fitted regression model.
//!
//! The residuals `Û` replace `U` in `δ̂_V`, and the covariance is corrected for
//! the estimation effect of `β̂`:
//! `Ω_δ = Ω_V + Ξ₁Ξ₀Ξ₁' + 2Ξ₁Ξ₂' + 2Ξ₂Ξ₁'`.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimators::{fit, EstimationResult, ModelSpec};
use crate::kernels::{kernel_matrix, KernelSpec};
use crate::linalg::Threshold;
use crate::mi_test::{covariance_scale, projection_covariance, wald, PairSums};
use crate::transforms::{require_nondegenerate, ZFunction};

/// Default coefficient shift used to build the scalar `V̂`.
pub const DEFAULT_DELTA_B: f64 = 0.5;

#[derive(Debug, Clone)]
pub enum SpecMode {
    /// `V̂ = Y − g(X; β̂ + Δb)`; `None` shifts every coefficient by 0.5.
    Scalar { delta_b: Option<Vec<f64>> },
    /// `V̂ = [h(Z), Û − h(Z)]`.
    Pair { h: ZFunction },
    /// Arbitrary columns of `Z`, treated as free of estimation effect.
    Custom { columns: Vec<ZFunction>, df: usize },
}

#[derive(Debug, Clone)]
pub struct SpecVSpec {
    pub mode: SpecMode,
    /// Added to the scalar `V̂`.
    pub augmentation: Option<ZFunction>,
    /// Subtract column means from `V̂` and `ξ`. Off by default, as in [`crate::mi_test::VSpec`].
    pub center: bool,
}

impl Default for SpecVSpec {
    fn default() -> Self {
        Self { mode: SpecMode::Scalar { delta_b: None }, augmentation: None, center: false }
    }
}

impl SpecVSpec {
    pub fn scalar(delta_b: Option<Vec<f64>>) -> Self {
        Self { mode: SpecMode::Scalar { delta_b }, ..Self::default() }
    }

    pub fn augmented(mut self, f: ZFunction) -> Self {
        self.augmentation = Some(f);
        self
    }

    pub fn declared_df(&self) -> usize {
        match &self.mode {
            SpecMode::Scalar { .. } | SpecMode::Pair { .. } => 1,
            SpecMode::Custom { df, .. } => *df,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SpecOptions {
    pub threshold: Threshold,
    /// Standardize the kernel argument columns to unit variance.
    pub standardize_z: bool,
    /// When false, `Ξ₁` and `Ξ₂` are zeroed (diagnostic only).
    pub estimation_effect: bool,
}

impl Default for SpecOptions {
    fn default() -> Self {
        Self { threshold: Threshold::default(), standardize_z: false, estimation_effect: true }
    }
}

/// The four blocks of the corrected covariance.
#[derive(Debug, Clone)]
pub struct OmegaComponents {
    pub omega_v: DMatrix<f64>,
    pub xi0: DMatrix<f64>,
    pub xi1: DMatrix<f64>,
    pub xi2: DMatrix<f64>,
}

impl OmegaComponents {
    pub fn total(&self) -> DMatrix<f64> {
        let cross = &self.xi1 * self.xi2.transpose() * 2.0;
        let out = &self.omega_v + &self.xi1 * &self.xi0 * self.xi1.transpose() + &cross + cross.transpose();
        (&out + out.transpose()) * 0.5
    }
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct ComponentRows {
    pub omega_v: Vec<Vec<f64>>,
    pub xi0: Vec<Vec<f64>>,
    pub xi1: Vec<Vec<f64>>,
    pub xi2: Vec<Vec<f64>>,
}

impl From<&OmegaComponents> for ComponentRows {
    fn from(c: &OmegaComponents) -> Self {
        Self { omega_v: rows(&c.omega_v), xi0: rows(&c.xi0), xi1: rows(&c.xi1), xi2: rows(&c.xi2) }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SpecTestResult {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
    /// Signed root of the statistic (one-column `V̂` only).
    pub t_value: Option<f64>,
    pub delta_hat: Vec<f64>,
    pub omega_components: ComponentRows,
    pub spectrum: Vec<f64>,
    pub retained_rank: usize,
    pub beta_hat: Vec<f64>,
    pub elapsed: f64,
}

/// Conditioning variables: the instruments when present, else the regressors.
pub fn conditioning_matrix(model: &ModelSpec, x: &DMatrix<f64>) -> DMatrix<f64> {
    model.instruments().cloned().unwrap_or_else(|| x.clone())
}

fn standardized(z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut out = z.clone();
    for mut col in out.column_iter_mut() {
        let (mean, sd) = crate::stats::mean_sd(col.as_slice());
        if !(sd > 0.0) {
            return Err(Error::DegenerateFunction("constant conditioning column".into()));
        }
        col.iter_mut().for_each(|v| *v = (*v - mean) / sd);
    }
    Ok(out)
}

fn center_columns(m: &mut DMatrix<f64>) {
    let n = m.nrows() as f64;
    for mut col in m.column_iter_mut() {
        let mean = col.sum() / n;
        col.add_scalar_mut(-mean);
    }
}

/// `V̂` (`n × p_v`) and, per column of `V̂`, its `n × k` derivative `ξ` in `β`.
pub fn build_v_spec(
    est: &EstimationResult,
    model: &ModelSpec,
    x: &DMatrix<f64>,
    z: &DMatrix<f64>,
    vs: &SpecVSpec,
) -> Result<(DMatrix<f64>, Vec<DMatrix<f64>>)> {
    let u = &est.residuals;
    let n = u.len();
    let k = est.beta_hat.len();
    if z.nrows() != n || x.nrows() != n {
        return Err(Error::DimensionMismatch { expected: n, got: z.nrows().min(x.nrows()) });
    }
    if vs.augmentation.is_some() && !matches!(vs.mode, SpecMode::Scalar { .. }) {
        return Err(Error::InvalidParameter("augmentation applies to the scalar form only".into()));
    }
    let (mut v, mut xi) = match &vs.mode {
        SpecMode::Scalar { delta_b } => {
            let shift = delta_b.clone().unwrap_or_else(|| vec![DEFAULT_DELTA_B; k]);
            if shift.len() != k {
                return Err(Error::DimensionMismatch { expected: k, got: shift.len() });
            }
            if shift.iter().all(|d| *d == 0.0) {
                return Err(Error::InvalidParameter("coefficient shift must be nonzero".into()));
            }
            let beta: Vec<f64> = est.beta_hat.iter().zip(&shift).map(|(b, d)| b + d).collect();
            let (g_shift, grad) = model.mean_and_gradient(x, &beta)?;
            let mut col: Vec<f64> = (0..n).map(|i| u[i] + est.fitted[i] - g_shift[i]).collect();
            if let Some(aug) = &vs.augmentation {
                let a = aug.eval(z)?;
                col.iter_mut().zip(&a).for_each(|(c, a)| *c += a);
            }
            (DMatrix::from_column_slice(n, 1, &col), vec![-grad])
        }
        SpecMode::Pair { h } => {
            let hv = h.eval(z)?;
            require_nondegenerate(&hv, h.name())?;
            let mut v = DMatrix::zeros(n, 2);
            for i in 0..n {
                v[(i, 0)] = hv[i];
                v[(i, 1)] = u[i] - hv[i];
            }
            (v, vec![DMatrix::zeros(n, k), -est.gradient.clone()])
        }
        SpecMode::Custom { columns, df } => {
            if columns.is_empty() {
                return Err(Error::InvalidParameter("custom mode needs at least one column".into()));
            }
            if *df == 0 || *df > columns.len() {
                return Err(Error::InvalidParameter(format!("declared df {df} must lie in 1..={}", columns.len())));
            }
            let mut v = DMatrix::zeros(n, columns.len());
            for (l, f) in columns.iter().enumerate() {
                let c = f.eval(z)?;
                require_nondegenerate(&c, f.name())?;
                v.set_column(l, &DVector::from_vec(c));
            }
            (v, vec![DMatrix::zeros(n, k); columns.len()])
        }
    };
    if vs.center {
        center_columns(&mut v);
        xi.iter_mut().for_each(center_columns);
    }
    Ok((v, xi))
}

/// Sample versions of `Ω_V` (divisor `n`), `Ξ₀`, `Ξ₁` and `Ξ₂`.
pub fn omega_delta(
    u: &[f64],
    v: &DMatrix<f64>,
    xi: &[DMatrix<f64>],
    phi: &DMatrix<f64>,
    r: &DMatrix<f64>,
    kmat: &DMatrix<f64>,
) -> Result<OmegaComponents> {
    let (_, components) = delta_and_omega(u, v, xi, phi, r, kmat)?;
    Ok(components)
}

fn delta_and_omega(
    u: &[f64],
    v: &DMatrix<f64>,
    xi: &[DMatrix<f64>],
    phi: &DMatrix<f64>,
    r: &DMatrix<f64>,
    kmat: &DMatrix<f64>,
) -> Result<(DVector<f64>, OmegaComponents)> {
    let n = u.len();
    let pv = v.ncols();
    let k = phi.ncols();
    if n < 2 {
        return Err(Error::TooFewObservations { required: 2, got: n });
    }
    if v.nrows() != n || phi.nrows() != n || r.nrows() != n || kmat.shape() != (n, n) {
        return Err(Error::DimensionMismatch { expected: n, got: v.nrows() });
    }
    if r.ncols() != k || xi.len() != pv || xi.iter().any(|m| m.shape() != (n, k)) {
        return Err(Error::DimensionMismatch { expected: k, got: r.ncols() });
    }
    let nf = n as f64;
    let sums = PairSums::new(u, v, kmat);
    let delta = sums.delta(u);
    let psi = sums.psi1(u, v);
    let omega_v = projection_covariance(&psi, &delta, nf);

    let mut xi0 = DMatrix::zeros(k, k);
    for i in 0..n {
        let row = phi.row(i).transpose();
        xi0.ger(u[i] * u[i] / nf, &row, &row, 1.0);
    }

    let ku = DVector::from_column_slice(&sums.ku);
    let scale = 1.0 / (nf * (nf - 1.0));
    let mut xi1 = DMatrix::zeros(pv, k);
    for l in 0..pv {
        let a = xi[l].transpose() * &ku;
        let b = r.transpose() * sums.kv.column(l);
        xi1.set_row(l, &((a - b) * scale).transpose());
    }

    let weighted = DMatrix::from_fn(n, pv, |i, l| psi[(i, l)] * u[i]);
    let xi2 = weighted.transpose() * phi / nf;

    Ok((delta, OmegaComponents { omega_v, xi0, xi1, xi2 }))
}

/// Fits `model`, builds `V̂` and returns the χ² statistic with its diagnostics.
pub fn spec_test(
    y: &[f64],
    x: &DMatrix<f64>,
    model: &ModelSpec,
    vs: &SpecVSpec,
    k: &KernelSpec,
    opts: &SpecOptions,
) -> Result<SpecTestResult> {
    let start = Instant::now();
    let n = y.len();
    if n < 3 {
        return Err(Error::TooFewObservations { required: 3, got: n });
    }
    let est = fit(model, y, x)?;
    let z = conditioning_matrix(model, x);
    if z.ncols() == 0 {
        return Err(Error::InvalidParameter("no conditioning variables (supply regressors or instruments)".into()));
    }
    let (v, xi) = build_v_spec(&est, model, x, &z, vs)?;
    let kernel_arg = if opts.standardize_z { standardized(&z)? } else { z };
    let kmat = kernel_matrix(&k.with_dim(kernel_arg.ncols())?, &kernel_arg)?;
    let (delta, mut comps) = delta_and_omega(&est.residuals, &v, &xi, &est.influence, &est.gradient, &kmat)?;
    if !opts.estimation_effect {
        comps.xi1.fill(0.0);
        comps.xi2.fill(0.0);
    }
    let df = vs.declared_df();
    let y_mean = y.iter().sum::<f64>() / n as f64;
    let deviations: Vec<f64> = y.iter().map(|v| v - y_mean).collect();
    let (statistic, p_value, spectrum, retained_rank) =
        wald(n, &delta, &comps.total(), df, opts.threshold, covariance_scale(&deviations, &v, &kmat))?;
    let t_value = (v.ncols() == 1).then(|| statistic.sqrt().copysign(delta[0]));
    Ok(SpecTestResult {
        statistic,
        df,
        p_value,
        t_value,
        delta_hat: delta.iter().copied().collect(),
        omega_components: ComponentRows::from(&comps),
        spectrum,
        retained_rank,
        beta_hat: est.beta_hat,
        elapsed: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::NlsModel;
    use crate::stats::normal_two_sided_p;
    use approx::assert_abs_diff_eq;

    fn noise(i: usize, salt: u64) -> f64 {
        let mut s = (i as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ salt;
        s ^= s >> 31;
        s = s.wrapping_mul(0xBF58_476D_1CE4_E5B9);
        s ^= s >> 29;
        (s >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
    }

    fn linear_data(n: usize) -> (Vec<f64>, DMatrix<f64>) {
        let x = DMatrix::from_fn(n, 2, |i, l| 2.0 * noise(i, 11 + l as u64));
        let y = (0..n).map(|i| x[(i, 0)] + x[(i, 1)] + 2.0 * noise(i, 99)).collect();
        (y, x)
    }

    #[test]
    fn scalar_v_by_substitution() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 2.0, 0.0, 0.0, 3.0]);
        let y = [2.3, 1.1, 2.0];
        let model = ModelSpec::ols();
        let mut est = fit(&model, &y, &x).unwrap();
        est.beta_hat = vec![1.0, 1.0];
        est.fitted = vec![2.0, 2.0, 3.0];
        est.residuals = vec![0.3, -0.9, -1.0];
        let vs = SpecVSpec::default();
        let (v, xi) = build_v_spec(&est, &model, &x, &x, &vs).unwrap();
        assert_abs_diff_eq!(v[(0, 0)], -0.7, epsilon = 1e-15);
        assert_eq!(xi[0].row(0).iter().copied().collect::<Vec<_>>(), vec![-1.0, -1.0]);
        let aug = vs.clone().augmented(ZFunction::cross_pair());
        let (va, _) = build_v_spec(&est, &model, &x, &x, &aug).unwrap();
        for i in 0..3 {
            assert_abs_diff_eq!(va[(i, 0)] - v[(i, 0)], x[(i, 0)] * x[(i, 1)], epsilon = 1e-15);
        }
    }

    #[test]
    fn centering_applies_to_v_and_xi() {
        let (y, x) = linear_data(30);
        let model = ModelSpec::ols();
        let est = fit(&model, &y, &x).unwrap();
        let vs = SpecVSpec { center: true, ..SpecVSpec::default() };
        let (v, xi) = build_v_spec(&est, &model, &x, &x, &vs).unwrap();
        assert!(v.column(0).sum().abs() < 1e-12);
        for c in 0..2 {
            assert!(xi[0].column(c).sum().abs() < 1e-12);
        }
    }

    #[test]
    fn build_errors() {
        let (y, x) = linear_data(20);
        let model = ModelSpec::ols();
        let est = fit(&model, &y, &x).unwrap();
        let zero = SpecVSpec::scalar(Some(vec![0.0, 0.0]));
        assert!(build_v_spec(&est, &model, &x, &x, &zero).is_err());
        let short = SpecVSpec::scalar(Some(vec![0.5]));
        assert!(build_v_spec(&est, &model, &x, &x, &short).is_err());
        let flat = SpecVSpec { mode: SpecMode::Pair { h: ZFunction::closure("c", |_| 2.0) }, ..SpecVSpec::default() };
        assert!(matches!(build_v_spec(&est, &model, &x, &x, &flat), Err(Error::DegenerateFunction(_))));
        let custom = SpecVSpec {
            mode: SpecMode::Custom { columns: vec![ZFunction::cross_pair()], df: 2 },
            ..SpecVSpec::default()
        };
        assert!(build_v_spec(&est, &model, &x, &x, &custom).is_err());
    }

    #[test]
    fn nls_xi_matches_finite_difference() {
        let n = 25;
        let x = DMatrix::from_fn(n, 1, |i, _| noise(i, 3));
        let y: Vec<f64> = (0..n).map(|i| (0.8 * x[(i, 0)]).exp() + 0.1 * noise(i, 5)).collect();
        let model = ModelSpec::nls(NlsModel::new(
            "exp",
            vec![0.0],
            |x, b| (x[0] * b[0]).exp(),
            |x, b, g| g[0] = x[0] * (x[0] * b[0]).exp(),
        ));
        let est = fit(&model, &y, &x).unwrap();
        let vs = SpecVSpec::default();
        let (_, xi) = build_v_spec(&est, &model, &x, &x, &vs).unwrap();
        // V_i(β) = Y_i − g(x_i; β + Δb); differentiate numerically at β̂.
        let h = 1e-6;
        let v_at = |b: f64| -> Vec<f64> { (0..n).map(|i| y[i] - (x[(i, 0)] * (b + DEFAULT_DELTA_B)).exp()).collect() };
        let (up, down) = (v_at(est.beta_hat[0] + h), v_at(est.beta_hat[0] - h));
        for i in 0..n {
            assert_abs_diff_eq!(xi[0][(i, 0)], (up[i] - down[i]) / (2.0 * h), epsilon = 1e-6);
        }
    }

    fn naive_components(
        u: &[f64],
        v: &[f64],
        xi: &[f64],
        phi: &[f64],
        r: &[f64],
        k: &DMatrix<f64>,
    ) -> (f64, f64, f64, f64) {
        let n = u.len();
        let nf = n as f64;
        let mut delta = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    delta += k[(i, j)] * u[i] * v[j];
                }
            }
        }
        delta /= nf * (nf - 1.0);
        let psi: Vec<f64> = (0..n)
            .map(|i| {
                let mut s = 0.0;
                for j in 0..n {
                    if j != i {
                        s += k[(i, j)] * (u[i] * v[j] + u[j] * v[i]);
                    }
                }
                s / (2.0 * (nf - 1.0))
            })
            .collect();
        let omega_v = 4.0 / nf * psi.iter().map(|p| (p - delta).powi(2)).sum::<f64>();
        let xi0 = (0..n).map(|i| phi[i] * phi[i] * u[i] * u[i]).sum::<f64>() / nf;
        let mut xi1 = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    xi1 += k[(i, j)] * (u[i] * xi[j] - v[j] * r[i]);
                }
            }
        }
        xi1 /= nf * (nf - 1.0);
        let xi2 = (0..n).map(|i| psi[i] * u[i] * phi[i]).sum::<f64>() / nf;
        (omega_v, xi0, xi1, xi2)
    }

    #[test]
    fn components_match_loops() {
        let n = 6;
        let u = [0.4, -1.2, 0.7, 2.0, -0.3, -1.6];
        let v = [1.0, 0.2, -0.5, 0.9, -1.1, 0.3];
        let xi = [-0.2, 0.5, 1.1, -0.4, 0.0, 0.8];
        let phi = [0.9, -0.3, 1.4, 0.2, -0.6, 0.5];
        let r = [1.5, 0.1, -0.7, 0.3, 1.0, -1.2];
        let z = DMatrix::from_fn(n, 1, |i, _| 0.37 * i as f64 - 0.5);
        let k = kernel_matrix(&KernelSpec::gauss(1), &z).unwrap();
        let col = |a: &[f64]| DMatrix::from_column_slice(n, 1, a);
        let c = omega_delta(&u, &col(&v), &[col(&xi)], &col(&phi), &col(&r), &k).unwrap();
        let (ov, x0, x1, x2) = naive_components(&u, &v, &xi, &phi, &r, &k);
        assert_abs_diff_eq!(c.omega_v[(0, 0)], ov, epsilon = 1e-12);
        assert_abs_diff_eq!(c.xi0[(0, 0)], x0, epsilon = 1e-12);
        assert_abs_diff_eq!(c.xi1[(0, 0)], x1, epsilon = 1e-12);
        assert_abs_diff_eq!(c.xi2[(0, 0)], x2, epsilon = 1e-12);
        let total = ov + x1 * x0 * x1 + 4.0 * x1 * x2;
        assert_abs_diff_eq!(c.total()[(0, 0)], total, epsilon = 1e-12);
    }

    #[test]
    fn no_estimation_effect_leaves_omega_v() {
        let n = 8;
        let u: Vec<f64> = (0..n).map(|i| noise(i, 1)).collect();
        let v = DMatrix::from_fn(n, 1, |i, _| noise(i, 2));
        let z = DMatrix::from_fn(n, 2, |i, l| noise(i, 3 + l as u64));
        let k = kernel_matrix(&KernelSpec::gauss(2), &z).unwrap();
        let zeros = DMatrix::zeros(n, 2);
        let c = omega_delta(&u, &v, std::slice::from_ref(&zeros), &zeros, &zeros, &k).unwrap();
        assert_eq!(c.total(), c.omega_v);
        let (vals, _) = crate::linalg::sorted_eigen(&c.xi0).unwrap();
        assert!(vals.iter().all(|x| *x >= 0.0));
    }

    #[test]
    fn scalar_mode_t_identity_and_invariances() {
        let (y, x) = linear_data(120);
        let model = ModelSpec::ols();
        let k = KernelSpec::gauss(2);
        let opts = SpecOptions::default();
        let r = spec_test(&y, &x, &model, &SpecVSpec::default(), &k, &opts).unwrap();
        let t = r.t_value.unwrap();
        assert_abs_diff_eq!(r.statistic, t * t, epsilon = 1e-12 * r.statistic.max(1.0));
        assert_abs_diff_eq!(r.p_value, normal_two_sided_p(t), epsilon = 1e-12);
        let neg = spec_test(&y, &x, &model, &SpecVSpec::default(), &k.negated(), &opts).unwrap();
        assert_abs_diff_eq!(r.statistic, neg.statistic, epsilon = 1e-10);
        assert_abs_diff_eq!(r.p_value, neg.p_value, epsilon = 1e-10);
        let perm: Vec<usize> = (0..120).map(|i| (i * 53 + 7) % 120).collect();
        let yp: Vec<f64> = perm.iter().map(|&i| y[i]).collect();
        let xp = DMatrix::from_fn(120, 2, |i, l| x[(perm[i], l)]);
        let p = spec_test(&yp, &xp, &model, &SpecVSpec::default(), &k, &opts).unwrap();
        assert_abs_diff_eq!(r.statistic, p.statistic, epsilon = 1e-10);
    }

    #[test]
    fn pair_mode_has_one_df() {
        let (y, x) = linear_data(150);
        let vs = SpecVSpec { mode: SpecMode::Pair { h: ZFunction::exp_half_sum() }, ..SpecVSpec::default() };
        let r = spec_test(&y, &x, &ModelSpec::ols(), &vs, &KernelSpec::gauss(2), &SpecOptions::default()).unwrap();
        assert_eq!(r.df, 1);
        assert!(r.t_value.is_none());
        assert!((0.0..=1.0).contains(&r.p_value));
    }

    #[test]
    fn noiseless_fit_is_degenerate() {
        let x = DMatrix::from_fn(30, 2, |i, l| noise(i, 40 + l as u64));
        let y: Vec<f64> = (0..30).map(|i| x[(i, 0)] - 2.0 * x[(i, 1)]).collect();
        let err =
            spec_test(&y, &x, &ModelSpec::ols(), &SpecVSpec::default(), &KernelSpec::gauss(2), &SpecOptions::default())
                .unwrap_err();
        assert!(matches!(err, Error::DegenerateCovariance { .. }));
    }
}
