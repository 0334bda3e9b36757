use nalgebra::DMatrix;
use proptest::prelude::*;

use gmdd::gmdd::{
    estimate, fourth_order_ustat, gmdd_known_mean, gmdd_plugin_mean, gmdd_u_centered, population_gmdd_discrete,
    Estimator, Sample, SupportPoint,
};
use gmdd::kernels::{kernel_matrix, KernelFamily, KernelSpec};
use gmdd::rng::{domain, Stream};

fn families() -> Vec<KernelFamily> {
    vec![
        KernelFamily::Gauss,
        KernelFamily::Mdd,
        KernelFamily::Srb { alpha: 0.7 },
        KernelFamily::Laplace { sigma: 2.0 },
        KernelFamily::Uniform { scales: Vec::new() },
        KernelFamily::Triangular,
        KernelFamily::Logistic,
        KernelFamily::Cauchy,
    ]
}

/// Random law on a grid of `m` conditioning points with two `u` atoms per point.
/// When `mean_independent`, every conditional mean equals the overall mean.
fn random_law(rng: &mut Stream, m: usize, p: usize, mean_independent: bool) -> Vec<SupportPoint> {
    let zs: Vec<Vec<f64>> = (0..m).map(|_| (0..p).map(|_| (rng.uniform() * 6.0 - 3.0).round()).collect()).collect();
    let weights: Vec<f64> = (0..m).map(|_| 0.2 + rng.uniform()).collect();
    let total: f64 = weights.iter().sum();
    let mut out = Vec::new();
    for (k, z) in zs.iter().enumerate() {
        let mass = weights[k] / total;
        let spread = 0.5 + 2.0 * rng.uniform();
        let centre = if mean_independent { 1.0 } else { 1.0 + 3.0 * rng.normal() };
        out.push(SupportPoint { u: centre - spread, z: z.clone(), prob: 0.5 * mass });
        out.push(SupportPoint { u: centre + spread, z: z.clone(), prob: 0.5 * mass });
    }
    out
}

/// Whether `E[U | Z = z]` varies with `z`.
fn has_distinct_conditional_means(law: &[SupportPoint]) -> bool {
    let mut groups: Vec<(Vec<f64>, f64, f64)> = Vec::new();
    for a in law {
        match groups.iter_mut().find(|g| g.0 == a.z) {
            Some(g) => {
                g.1 += a.prob * a.u;
                g.2 += a.prob;
            }
            None => groups.push((a.z.clone(), a.prob * a.u, a.prob)),
        }
    }
    let means: Vec<f64> = groups.iter().map(|g| g.1 / g.2).collect();
    means.iter().any(|m| (m - means[0]).abs() > 1e-6)
}

#[test]
fn omnibus_property_on_discrete_laws() {
    let mut rng = Stream::new(11, domain::DATA, 0);
    for trial in 0..24 {
        let p = 1 + trial % 2;
        for fam in families() {
            let k = KernelSpec::new(fam.clone(), p).unwrap();
            let null = random_law(&mut rng, 4, p, true);
            let value = population_gmdd_discrete(&null, &k).unwrap();
            assert!(value.abs() < 1e-12, "{fam:?}: null value {value}");
            let alt = random_law(&mut rng, 4, p, false);
            if has_distinct_conditional_means(&alt) {
                let value = population_gmdd_discrete(&alt, &k).unwrap();
                assert!(value > 0.0, "{fam:?}: alternative value {value}");
            }
        }
    }
}

#[test]
fn plugin_equals_known_on_centered_u() {
    let mut rng = Stream::new(3, domain::DATA, 1);
    let n = 40;
    let z = DMatrix::from_fn(n, 2, |_, _| rng.normal());
    let raw: Vec<f64> = (0..n).map(|_| 2.0 + rng.normal()).collect();
    let mean = raw.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = raw.iter().map(|u| u - mean).collect();
    for fam in families() {
        let k = KernelSpec::new(fam, 2).unwrap();
        let plugin = gmdd_plugin_mean(&Sample::new(centered.clone(), z.clone()).unwrap(), &k).unwrap();
        let known = gmdd_known_mean(&Sample::new(centered.clone(), z.clone()).unwrap(), &k).unwrap();
        let direct = gmdd_plugin_mean(&Sample::new(raw.clone(), z.clone()).unwrap(), &k).unwrap();
        assert!((plugin - known).abs() <= 1e-12 * known.abs().max(1.0));
        assert!((direct - known).abs() <= 1e-12 * known.abs().max(1.0));
    }
}

#[test]
fn estimator_dispatch() {
    let mut rng = Stream::new(5, domain::DATA, 0);
    let z = DMatrix::from_fn(12, 1, |_, _| rng.normal());
    let s = Sample::new((0..12).map(|_| rng.normal()).collect(), z).unwrap();
    let k = KernelSpec::mdd(1);
    assert_eq!(estimate(&s, &k, Estimator::Known).unwrap(), gmdd_known_mean(&s, &k).unwrap());
    assert_eq!(estimate(&s, &k, Estimator::Plugin).unwrap(), gmdd_plugin_mean(&s, &k).unwrap());
    assert_eq!(estimate(&s, &k, Estimator::Ucentered).unwrap(), gmdd_u_centered(&s, &k).unwrap());
    assert!("median".parse::<Estimator>().is_err());
}

fn sample_strategy(max_n: usize, p: usize) -> impl Strategy<Value = Sample> {
    (4..=max_n).prop_flat_map(move |n| {
        (prop::collection::vec(-3.0f64..3.0, n), prop::collection::vec(-2.0f64..2.0, n * p))
            .prop_map(move |(u, z)| Sample::new(u, DMatrix::from_row_slice(n, p, &z)).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn u_centered_is_the_fourth_order_ustat(s in sample_strategy(10, 2), fam in prop::sample::select(families())) {
        let k = KernelSpec::new(fam, 2).unwrap();
        let fast = gmdd_u_centered(&s, &k).unwrap();
        let slow = fourth_order_ustat(&s, &k).unwrap();
        prop_assert!((fast - slow).abs() <= 1e-10, "{} vs {}", fast, slow);
    }

    #[test]
    fn mdd_is_homogeneous_in_z(s in sample_strategy(15, 2), c in prop_oneof![-4.0f64..-0.1, 0.1f64..4.0]) {
        let k = KernelSpec::mdd(2);
        let scaled = Sample::new(s.u.clone(), &s.z * c).unwrap();
        for which in [Estimator::Known, Estimator::Plugin, Estimator::Ucentered] {
            let base = estimate(&s, &k, which).unwrap();
            let got = estimate(&scaled, &k, which).unwrap();
            prop_assert!((got - c.abs() * base).abs() <= 1e-10 * (c.abs() * base).abs().max(1e-12));
        }
    }

    #[test]
    fn estimators_ignore_row_order(s in sample_strategy(15, 1), shift in 1usize..14) {
        let n = s.len();
        let perm: Vec<usize> = (0..n).map(|i| (i + shift) % n).collect();
        let permuted = Sample::new(
            perm.iter().map(|&i| s.u[i]).collect(),
            DMatrix::from_fn(n, 1, |i, _| s.z[(perm[i], 0)]),
        ).unwrap();
        let k = KernelSpec::gauss(1);
        for which in [Estimator::Known, Estimator::Plugin, Estimator::Ucentered] {
            let a = estimate(&s, &k, which).unwrap();
            let b = estimate(&permuted, &k, which).unwrap();
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn kernel_matrix_is_exactly_symmetric(rows in prop::collection::vec(-5.0f64..5.0, 6..30), fam in prop::sample::select(families())) {
        let n = rows.len() / 2;
        let z = DMatrix::from_row_slice(n, 2, &rows[..2 * n]);
        let k = kernel_matrix(&KernelSpec::new(fam, 2).unwrap(), &z).unwrap();
        prop_assert_eq!(k.clone(), k.transpose());
    }
}
