use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};
use statrs::function::erf::erfc;

/// Upper tail `P(χ²_df > x)`.
pub fn chi2_sf(x: f64, df: usize) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if df == 1 {
        return erfc((0.5 * x).sqrt()).clamp(0.0, 1.0);
    }
    let dist = ChiSquared::new(df as f64).expect("positive degrees of freedom");
    dist.sf(x).clamp(0.0, 1.0)
}

/// `P(|N(0,1)| > |t|)`.
pub fn normal_two_sided_p(t: f64) -> f64 {
    let n = Normal::standard();
    (2.0 * n.sf(t.abs())).clamp(0.0, 1.0)
}

/// Standard normal quantile `Φ⁻¹(p)`.
pub fn normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

/// Standard normal distribution function.
pub fn normal_cdf(x: f64) -> f64 {
    Normal::standard().cdf(x)
}

/// `χ²_df` distribution function.
pub fn chi2_cdf(x: f64, df: usize) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    ChiSquared::new(df as f64).expect("positive degrees of freedom").cdf(x)
}

pub(crate) fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, 0.0);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// Linear-interpolation quantile (type 7) of an unsorted sample.
pub(crate) fn quantile(xs: &[f64], q: f64) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let h = (v.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}
