//! Monte Carlo replication engine: size tables, power curves and timings.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bootstrap::{wild_bootstrap_pvalue, BootstrapConfig, IcmFamily};
use crate::dgp::{generate, DgpId, Generated};
use crate::error::{Error, Result};
use crate::estimators::ModelSpec;
use crate::kernels::KernelSpec;
use crate::linalg::Threshold;
use crate::mi_test::{mi_test, VSpec};
use crate::rng::{derive_seed, domain, Stream};
use crate::spec_test::{spec_test, SpecOptions, SpecVSpec};
use crate::stats::{mean_sd, quantile};
use crate::transforms::ZFunction;

pub const DEFAULT_LEVELS: [f64; 3] = [0.10, 0.05, 0.01];

/// Largest tolerated share of failed replications.
const MAX_FAILURE_SHARE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TestKind {
    Chi2,
    Gauss,
    Mdd,
    Dl,
    Esc6,
}

impl TestKind {
    pub const ALL: [TestKind; 5] = [TestKind::Chi2, TestKind::Gauss, TestKind::Mdd, TestKind::Dl, TestKind::Esc6];

    pub fn family(self) -> Option<IcmFamily> {
        match self {
            TestKind::Chi2 => None,
            TestKind::Gauss => Some(IcmFamily::Gauss),
            TestKind::Mdd => Some(IcmFamily::Mdd),
            TestKind::Dl => Some(IcmFamily::Dl),
            TestKind::Esc6 => Some(IcmFamily::Esc6),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TestKind::Chi2 => "chi2",
            other => other.family().map(IcmFamily::as_str).unwrap_or_default(),
        }
    }
}

impl fmt::Display for TestKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TestKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        TestKind::ALL
            .into_iter()
            .find(|t| t.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::InvalidParameter(format!("unknown test `{s}`")))
    }
}

/// Settings shared by every replication of an experiment.
#[derive(Debug, Clone)]
pub struct SimConfig {
    pub dgp: DgpId,
    pub n: usize,
    pub gamma: f64,
    pub reps: usize,
    pub tests: Vec<TestKind>,
    pub levels: Vec<f64>,
    pub seed: u64,
    pub bootstrap: BootstrapConfig,
    pub threshold: Threshold,
    /// Include the estimation-effect terms in the χ² specification test.
    pub estimation_effect: bool,
}

impl SimConfig {
    pub fn new(dgp: DgpId, n: usize, reps: usize) -> Self {
        Self {
            dgp,
            n,
            gamma: 0.0,
            reps,
            tests: vec![TestKind::Chi2],
            levels: DEFAULT_LEVELS.to_vec(),
            seed: 0,
            bootstrap: BootstrapConfig::default(),
            threshold: Threshold::default(),
            estimation_effect: true,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(Error::InvalidParameter("reps must be at least 1".into()));
        }
        if self.tests.is_empty() {
            return Err(Error::InvalidParameter("no tests requested".into()));
        }
        if self.levels.iter().any(|a| !(*a > 0.0 && *a <= 1.0)) {
            return Err(Error::InvalidParameter("levels must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

/// Null model fitted in the regression designs: OLS when the regressors are
/// exogenous, IV with `(Z1, Z2)` otherwise. Mean-independence designs use an
/// intercept-only model for the bootstrap baselines.
pub fn default_model(dgp: DgpId, data: &Generated) -> ModelSpec {
    if !dgp.is_regression() {
        ModelSpec::ols().with_intercept()
    } else if dgp.is_endogenous() {
        ModelSpec::iv(data.z.clone())
    } else {
        ModelSpec::ols()
    }
}

/// Scalar `V̂ = Û − 0.5(X1 + X2)`, augmented with `Z1² + Z2² + Z1Z2` in LS3–LS4 and `Z1Z2` in LS5.
pub fn default_spec_v(dgp: DgpId) -> SpecVSpec {
    match dgp {
        DgpId::Ls3 | DgpId::Ls4 => SpecVSpec::default().augmented(ZFunction::quadratic_pair()),
        DgpId::Ls5 => SpecVSpec::default().augmented(ZFunction::cross_pair()),
        _ => SpecVSpec::default(),
    }
}

/// One test applied to one simulated sample.
#[derive(Debug, Clone, Serialize)]
pub struct TestOutcome {
    pub statistic: f64,
    pub p_value: f64,
    /// Retained rank of the covariance (χ² test only).
    pub retained_rank: Option<usize>,
    pub seconds: f64,
}

/// Outcomes of every requested test in one replication, in request order.
#[derive(Debug, Clone)]
pub struct Replication {
    pub rep: usize,
    pub outcomes: Vec<(TestKind, std::result::Result<TestOutcome, String>)>,
}

fn run_test(cfg: &SimConfig, test: TestKind, data: &Generated, rep: usize) -> Result<TestOutcome> {
    let start = Instant::now();
    let p_z = data.z.ncols();
    let out = match (test.family(), cfg.dgp.is_regression()) {
        (None, true) => {
            let opts = SpecOptions {
                threshold: cfg.threshold,
                standardize_z: false,
                estimation_effect: cfg.estimation_effect,
            };
            let model = default_model(cfg.dgp, data);
            let r = spec_test(&data.y, &data.x, &model, &default_spec_v(cfg.dgp), &KernelSpec::gauss(p_z), &opts)?;
            (r.statistic, r.p_value, Some(r.retained_rank))
        }
        (None, false) => {
            let r = mi_test(&data.y, &data.z, &VSpec::default(), &KernelSpec::gauss(p_z), cfg.threshold)?;
            (r.statistic, r.p_value, Some(r.retained_rank))
        }
        (Some(family), _) => {
            let model = default_model(cfg.dgp, data);
            let boot =
                BootstrapConfig { seed: derive_seed(cfg.seed, domain::BOOTSTRAP, rep as u64), ..cfg.bootstrap.clone() };
            let r = wild_bootstrap_pvalue(&data.y, &data.x, &data.z, &model, family, &boot)?;
            (r.statistic, r.p_value, None)
        }
    };
    Ok(TestOutcome { statistic: out.0, p_value: out.1, retained_rank: out.2, seconds: start.elapsed().as_secs_f64() })
}

/// The simulated sample of replication `rep`.
pub fn replicate_data(cfg: &SimConfig, rep: usize) -> Result<Generated> {
    let mut rng = Stream::new(cfg.seed, domain::DATA, rep as u64);
    generate(cfg.dgp, cfg.n, cfg.gamma, &mut rng)
}

fn run_one(cfg: &SimConfig, rep: usize) -> Result<Replication> {
    let data = replicate_data(cfg, rep)?;
    let outcomes = cfg.tests.iter().map(|&t| (t, run_test(cfg, t, &data, rep).map_err(|e| e.to_string()))).collect();
    Ok(Replication { rep, outcomes })
}

/// Runs every replication (in parallel; results are ordered by replicate index).
pub fn run_replications(cfg: &SimConfig) -> Result<Vec<Replication>> {
    cfg.validate()?;
    (0..cfg.reps).into_par_iter().map(|rep| run_one(cfg, rep)).collect()
}

/// One row of a size or power table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub dgp: DgpId,
    pub test: TestKind,
    pub n: usize,
    pub gamma: f64,
    pub level: f64,
    pub rate: f64,
    pub mc_se: f64,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct SimResult {
    pub rows: Vec<RateRow>,
    /// Replications used per test (after excluding failures).
    pub used: BTreeMap<TestKind, usize>,
    pub failures: BTreeMap<TestKind, usize>,
}

/// Rejection rates at each level, failures excluded.
pub fn summarize(cfg: &SimConfig, reps: &[Replication]) -> Result<SimResult> {
    let mut result = SimResult::default();
    for (t_idx, &test) in cfg.tests.iter().enumerate() {
        let mut p_values = Vec::with_capacity(reps.len());
        let mut failed = 0;
        let mut first = None;
        for r in reps {
            match &r.outcomes[t_idx].1 {
                Ok(o) => p_values.push(o.p_value),
                Err(e) => {
                    failed += 1;
                    first.get_or_insert_with(|| format!("replication {}: {e}", r.rep));
                }
            }
        }
        if failed > 0 && failed as f64 >= MAX_FAILURE_SHARE * reps.len() as f64 {
            return Err(Error::TooManyFailures { failed, total: reps.len(), first: first.unwrap_or_default() });
        }
        let used = p_values.len();
        for &level in &cfg.levels {
            let rate = p_values.iter().filter(|p| **p <= level).count() as f64 / used as f64;
            result.rows.push(RateRow {
                dgp: cfg.dgp,
                test,
                n: cfg.n,
                gamma: cfg.gamma,
                level,
                rate,
                mc_se: (rate * (1.0 - rate) / used as f64).sqrt(),
            });
        }
        result.used.insert(test, used);
        result.failures.insert(test, failed);
    }
    Ok(result)
}

/// Empirical rejection rates of each test at each level.
pub fn run_size_experiment(cfg: &SimConfig) -> Result<SimResult> {
    let reps = run_replications(cfg)?;
    summarize(cfg, &reps)
}

/// Size experiment repeated over `gammas`, with the same replicate seeds at every `γ`.
pub fn run_power_curve(cfg: &SimConfig, gammas: &[f64]) -> Result<SimResult> {
    if gammas.is_empty() {
        return Err(Error::InvalidParameter("empty gamma grid".into()));
    }
    let mut out = SimResult::default();
    for &gamma in gammas {
        let r = run_size_experiment(&SimConfig { gamma, ..cfg.clone() })?;
        out.rows.extend(r.rows);
        for (t, u) in r.used {
            *out.used.entry(t).or_default() += u;
        }
        for (t, f) in r.failures {
            *out.failures.entry(t).or_default() += f;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub dgp: DgpId,
    pub test: TestKind,
    pub n: usize,
    pub reps: usize,
    pub mean_seconds: f64,
    pub sd_seconds: f64,
    pub median_seconds: f64,
    /// Median over replications of this test's time divided by the χ² time.
    pub median_relative: f64,
    pub iqr_relative: f64,
}

/// Wall-clock times per test, replications run one after another.
///
/// The χ² test is always timed, since it is the reference for relative times.
pub fn run_timing_benchmark(cfg: &SimConfig, n_grid: &[usize]) -> Result<Vec<TimingRow>> {
    cfg.validate()?;
    let mut tests = vec![TestKind::Chi2];
    tests.extend(cfg.tests.iter().copied().filter(|t| *t != TestKind::Chi2));
    let mut rows = Vec::new();
    for &n in n_grid {
        let run = SimConfig { n, tests: tests.clone(), ..cfg.clone() };
        let mut seconds: Vec<Vec<f64>> = vec![Vec::with_capacity(cfg.reps); tests.len()];
        for rep in 0..cfg.reps {
            let data = replicate_data(&run, rep)?;
            for (idx, &t) in tests.iter().enumerate() {
                let start = Instant::now();
                run_test(&run, t, &data, rep)?;
                seconds[idx].push(start.elapsed().as_secs_f64());
            }
        }
        for (idx, &t) in tests.iter().enumerate() {
            let (mean, sd) = mean_sd(&seconds[idx]);
            let rel: Vec<f64> = seconds[idx].iter().zip(&seconds[0]).map(|(a, b)| a / b).collect();
            rows.push(TimingRow {
                dgp: cfg.dgp,
                test: t,
                n,
                reps: cfg.reps,
                mean_seconds: mean,
                sd_seconds: sd,
                median_seconds: quantile(&seconds[idx], 0.5),
                median_relative: quantile(&rel, 0.5),
                iqr_relative: quantile(&rel, 0.75) - quantile(&rel, 0.25),
            });
        }
    }
    Ok(rows)
}

/// Parses `start:stop:step` (inclusive of `stop` up to rounding) or a comma list.
pub fn parse_grid(s: &str) -> Result<Vec<f64>> {
    let bad = || Error::InvalidParameter(format!("invalid grid `{s}`"));
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() == 3 {
        let v: Vec<f64> =
            parts.iter().map(|p| p.trim().parse::<f64>()).collect::<std::result::Result<_, _>>().map_err(|_| bad())?;
        let (start, stop, step) = (v[0], v[1], v[2]);
        if !(step > 0.0) || stop < start || !start.is_finite() || !stop.is_finite() {
            return Err(bad());
        }
        let count = ((stop - start) / step + 1e-9).floor() as usize;
        return Ok((0..=count).map(|k| start + k as f64 * step).collect());
    }
    s.split(',').map(|p| p.trim().parse::<f64>().map_err(|_| bad())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_parsing() {
        let g = parse_grid("0:1:0.25").unwrap();
        assert_eq!(g, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(parse_grid("0:1:0.1").unwrap().len(), 11);
        assert_eq!(parse_grid("0.5, 2").unwrap(), vec![0.5, 2.0]);
        assert!(parse_grid("1:0:0.1").is_err());
        assert!(parse_grid("a,b").is_err());
    }

    #[test]
    fn level_one_always_rejects() {
        let mut cfg = SimConfig::new(DgpId::Ls1, 60, 1);
        cfg.levels = vec![1.0];
        let r = run_size_experiment(&cfg).unwrap();
        assert_eq!(r.rows.len(), 1);
        assert_eq!(r.rows[0].rate, 1.0);
        assert_eq!(r.rows[0].mc_se, 0.0);
    }

    #[test]
    fn reproducible_bitwise() {
        let mut cfg = SimConfig::new(DgpId::Ls2, 80, 6);
        cfg.tests = vec![TestKind::Chi2, TestKind::Dl];
        cfg.bootstrap.replicates = 9;
        cfg.seed = 99;
        let a = run_replications(&cfg).unwrap();
        let b = run_replications(&cfg).unwrap();
        for (x, y) in a.iter().zip(&b) {
            for ((_, p), (_, q)) in x.outcomes.iter().zip(&y.outcomes) {
                let (p, q) = (p.as_ref().unwrap(), q.as_ref().unwrap());
                assert_eq!(p.statistic.to_bits(), q.statistic.to_bits());
                assert_eq!(p.p_value.to_bits(), q.p_value.to_bits());
            }
        }
    }

    #[test]
    fn failures_are_excluded_or_fatal() {
        let cfg = SimConfig { levels: vec![0.05], ..SimConfig::new(DgpId::Ls1, 10, 3) };
        let ok = TestOutcome { statistic: 1.0, p_value: 0.01, retained_rank: Some(1), seconds: 0.0 };
        let mk =
            |rep, o: std::result::Result<TestOutcome, String>| Replication { rep, outcomes: vec![(TestKind::Chi2, o)] };
        let reps = vec![mk(0, Ok(ok.clone())), mk(1, Err("boom".into())), mk(2, Ok(ok.clone()))];
        assert!(matches!(summarize(&cfg, &reps), Err(Error::TooManyFailures { failed: 1, total: 3, .. })));
        let mut many: Vec<Replication> = (0..200).map(|i| mk(i, Ok(ok.clone()))).collect();
        many[5] = mk(5, Err("boom".into()));
        let r = summarize(&cfg, &many).unwrap();
        assert_eq!(r.failures[&TestKind::Chi2], 1);
        assert_eq!(r.used[&TestKind::Chi2], 199);
        assert_eq!(r.rows[0].rate, 1.0);
    }

    #[test]
    fn timing_rows() {
        let mut cfg = SimConfig::new(DgpId::Ls1, 40, 1);
        cfg.tests = vec![TestKind::Mdd];
        cfg.bootstrap.replicates = 5;
        let rows = run_timing_benchmark(&cfg, &[40]).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].test, TestKind::Chi2);
        assert_eq!(rows[0].median_relative, 1.0);
        assert_eq!(rows[1].sd_seconds, 0.0);
    }

    #[test]
    fn test_kind_parsing() {
        for t in TestKind::ALL {
            assert_eq!(t.to_string().parse::<TestKind>().unwrap(), t);
        }
        assert!("f".parse::<TestKind>().is_err());
    }
}
