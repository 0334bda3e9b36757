//! The `icmtest` command line.
//!
//! Every subcommand also reads its options from a JSON file (`--config`)
//! whose keys are the long flag names; flags given on the command line win.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::bootstrap::{wild_bootstrap_pvalue, BootstrapConfig, IcmFamily, Multiplier};
use crate::data::{load_csv, CsvOptions, Dataset};
use crate::dgp::DgpId;
use crate::error::{Error, Result};
use crate::estimators::ModelSpec;
use crate::gmdd::{estimate, Estimator, Sample};
use crate::kernels::{KernelFamily, KernelSpec};
use crate::linalg::{Threshold, ThresholdScale, DEFAULT_IOTA};
use crate::mi_test::{mi_test, VSpec};
use crate::output::{emit, Format, GmddResult, Tabular};
use crate::sim::{parse_grid, run_power_curve, run_size_experiment, run_timing_benchmark, SimConfig, TestKind};
use crate::spec_test::{conditioning_matrix, spec_test, SpecMode, SpecOptions, SpecVSpec};
use crate::transforms::ZFunction;

/// Environment variable consulted when `--threads` is absent.
pub const THREADS_ENV: &str = "GMDD_THREADS";

#[derive(Debug, Parser)]
#[command(name = "icmtest", version, about = "Pivotal χ² tests of mean independence and regression specification")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct GlobalArgs {
    /// Master seed for every random draw.
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Worker threads (falls back to GMDD_THREADS, then to all cores).
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    /// Output file; stdout when absent.
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// `json` or `csv`; defaults to csv for `--out *.csv` and json otherwise.
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub format: Option<String>,
    /// Print diagnostics to stderr.
    #[arg(short, long, global = true)]
    #[serde(skip_serializing_if = "is_false")]
    pub verbose: bool,
    /// JSON file with option values, keyed by long flag name.
    #[arg(long, global = true)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate the dependence metric of one column on others.
    Gmdd(GmddArgs),
    /// χ² test of conditional mean independence.
    Mi(MiArgs),
    /// χ² specification test of a linear or IV regression.
    Spec(SpecArgs),
    /// Wild-bootstrap ICM specification test.
    #[command(name = "spec-boot")]
    SpecBoot(SpecBootArgs),
    /// Monte Carlo size or power experiment on a built-in design.
    Simulate(SimulateArgs),
    /// Running-time comparison of the χ² and bootstrap tests.
    Bench(BenchArgs),
}

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct GmddArgs {
    /// Input CSV with a header row.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    /// Fail on unparseable cells instead of dropping their rows.
    #[arg(long)]
    #[serde(skip_serializing_if = "is_false")]
    pub strict: bool,
    /// Column tested for mean independence.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub u_col: Option<String>,
    /// Conditioning columns, comma separated.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub z_cols: Vec<String>,
    /// gauss, mdd, srb:<alpha>, laplace[:<sigma>], uniform[:<a,..>], triangular, logistic, cauchy.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kernel: Option<String>,
    /// known, plugin or ucentered.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub estimator: Option<String>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct MiArgs {
    /// Input CSV with a header row.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    /// Fail on unparseable cells instead of dropping their rows.
    #[arg(long)]
    #[serde(skip_serializing_if = "is_false")]
    pub strict: bool,
    /// Column tested for mean independence.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub u_col: Option<String>,
    /// Conditioning columns, comma separated.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub z_cols: Vec<String>,
    /// Columns holding h(Z); each adds the pair (h, U − h).
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub h_col: Vec<String>,
    /// Named h(Z) used when no `--h-col` is given (default exp-half-sum).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub h_preset: Option<String>,
    /// Columns appended to V as power augmentations.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub aug_cols: Vec<String>,
    /// Named augmentations: exp-half-sum, quadratic, cross.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub aug_presets: Vec<String>,
    /// Subtract column means from V.
    #[arg(long)]
    #[serde(skip_serializing_if = "is_false")]
    pub center: bool,
    /// Kernel family (default gauss); same syntax as `gmdd --kernel`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kernel: Option<String>,
    /// Threshold exponent offset: eigenvalues are cut at n^(-1/2 + iota).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iota: Option<f64>,
    /// relative (default) or absolute.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threshold_scale: Option<String>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct SpecArgs {
    /// Input CSV with a header row.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    /// Fail on unparseable cells instead of dropping their rows.
    #[arg(long)]
    #[serde(skip_serializing_if = "is_false")]
    pub strict: bool,
    /// Response column.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub y_col: Option<String>,
    /// Regressor columns, comma separated.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub x_cols: Vec<String>,
    /// Instruments; the model is fitted by IV when present.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub iv_cols: Vec<String>,
    /// Prepend a constant regressor.
    #[arg(long)]
    #[serde(skip_serializing_if = "is_false")]
    pub intercept: bool,
    /// Kernel family (default gauss); same syntax as `gmdd --kernel`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kernel: Option<String>,
    /// Coefficient offset in V̂ = Y − g(X; β̂ + Δb); all 0.5 by default.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub delta_b: Vec<f64>,
    /// Columns summed into one augmentation added to V̂.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub aug_cols: Vec<String>,
    /// Named augmentation: exp-half-sum, quadratic, cross.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub aug_preset: Option<String>,
    /// Column holding h(Z); switches to the pair V̂ = (h, Û − h).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub h_col: Option<String>,
    /// Named h(Z) for the pair form.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub h_preset: Option<String>,
    /// Subtract column means from V̂.
    #[arg(long)]
    #[serde(skip_serializing_if = "is_false")]
    pub center: bool,
    /// Scale kernel arguments to unit variance.
    #[arg(long)]
    #[serde(skip_serializing_if = "is_false")]
    pub standardize_z: bool,
    /// Threshold exponent offset: eigenvalues are cut at n^(-1/2 + iota).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iota: Option<f64>,
    /// relative (default) or absolute.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threshold_scale: Option<String>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct SpecBootArgs {
    /// Input CSV with a header row.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    /// Fail on unparseable cells instead of dropping their rows.
    #[arg(long)]
    #[serde(skip_serializing_if = "is_false")]
    pub strict: bool,
    /// Response column.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub y_col: Option<String>,
    /// Regressor columns, comma separated.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub x_cols: Vec<String>,
    /// Instruments; the model is fitted by IV when present.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub iv_cols: Vec<String>,
    /// Prepend a constant regressor.
    #[arg(long)]
    #[serde(skip_serializing_if = "is_false")]
    pub intercept: bool,
    /// gauss, mdd, dl or esc6.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub family: Option<String>,
    /// Bootstrap replicates.
    #[arg(long = "B")]
    #[serde(rename = "B", skip_serializing_if = "Option::is_none")]
    pub replicates: Option<usize>,
    /// mammen or rademacher.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub multiplier: Option<String>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct SimulateArgs {
    /// LS1–LS5 or MI1–MI4.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dgp: Option<String>,
    /// Sample size.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    /// Monte Carlo replications.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reps: Option<usize>,
    /// Single departure parameter (default 0).
    #[arg(long, allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    /// `start:stop:step` or a comma list; runs a power curve.
    #[arg(long, allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma_grid: Option<String>,
    /// Any of chi2, gauss, mdd, dl, esc6 (default chi2).
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub tests: Vec<String>,
    /// Nominal levels (default 0.10, 0.05, 0.01).
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub levels: Vec<f64>,
    /// Bootstrap replicates.
    #[arg(long = "B")]
    #[serde(rename = "B", skip_serializing_if = "Option::is_none")]
    pub replicates: Option<usize>,
    /// mammen or rademacher.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub multiplier: Option<String>,
    /// Threshold exponent offset: eigenvalues are cut at n^(-1/2 + iota).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iota: Option<f64>,
    /// relative (default) or absolute.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threshold_scale: Option<String>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct BenchArgs {
    /// LS1–LS5 or MI1–MI4.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dgp: Option<String>,
    /// Sample sizes, comma separated.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub n_grid: Vec<usize>,
    /// Monte Carlo replications.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reps: Option<usize>,
    /// Tests timed next to chi2 (default all bootstrap families).
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub tests: Vec<String>,
    /// Bootstrap replicates.
    #[arg(long = "B")]
    #[serde(rename = "B", skip_serializing_if = "Option::is_none")]
    pub replicates: Option<usize>,
    /// mammen or rademacher.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub multiplier: Option<String>,
}

/// Parses `args` (including the program name), runs the command and returns the exit code:
/// 0 on success, 1 for invalid input or configuration, 2 when a computation fails.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                1
            } else {
                2
            }
        }
    }
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}

fn required<T>(value: Option<T>, flag: &str) -> Result<T> {
    value.ok_or_else(|| invalid(format!("missing required option --{flag}")))
}

/// Overlays the options given on the command line onto those from the config file.
fn merge<T: Serialize + DeserializeOwned>(file: Map<String, Value>, cli: &T) -> Result<T> {
    let mut merged = file;
    if let Value::Object(given) = serde_json::to_value(cli)? {
        merged.extend(given);
    }
    serde_json::from_value(Value::Object(merged)).map_err(|e| invalid(format!("config: {e}")))
}

fn read_config(path: Option<&Path>) -> Result<(Map<String, Value>, Map<String, Value>)> {
    let Some(path) = path else {
        return Ok((Map::new(), Map::new()));
    };
    let text = std::fs::read_to_string(path)?;
    let value: Value = serde_json::from_str(&text).map_err(|e| invalid(format!("config {}: {e}", path.display())))?;
    let Value::Object(all) = value else {
        return Err(invalid("config file must hold a JSON object"));
    };
    let global_keys = ["seed", "threads", "out", "format", "verbose"];
    let (global, local) = all.into_iter().partition(|(k, _)| global_keys.contains(&k.as_str()));
    Ok((global, local))
}

fn execute(cli: Cli) -> Result<()> {
    let (global_file, local) = read_config(cli.global.config.as_deref())?;
    let global: GlobalArgs = merge(global_file, &cli.global)?;
    configure_threads(global.threads)?;
    let format = output_format(&global)?;
    let seed = global.seed.unwrap_or(0);
    let out = global.out.as_deref();
    let verbose = global.verbose;
    match cli.command {
        Command::Gmdd(a) => {
            let a = merge(local, &a)?;
            finish(&run_gmdd(&a, verbose)?, format, out)
        }
        Command::Mi(a) => {
            let a = merge(local, &a)?;
            finish(&run_mi(&a, verbose)?, format, out)
        }
        Command::Spec(a) => {
            let a = merge(local, &a)?;
            finish(&run_spec(&a, verbose)?, format, out)
        }
        Command::SpecBoot(a) => {
            let a = merge(local, &a)?;
            finish(&run_spec_boot(&a, seed, verbose)?, format, out)
        }
        Command::Simulate(a) => {
            let a = merge(local, &a)?;
            finish(&run_simulate(&a, seed, verbose)?, format, out)
        }
        Command::Bench(a) => {
            let a = merge(local, &a)?;
            finish(&run_bench(&a, seed)?, format, out)
        }
    }
}

fn finish<T: Serialize + Tabular>(value: &T, format: Format, out: Option<&Path>) -> Result<()> {
    emit(value, format, out)
}

fn configure_threads(flag: Option<usize>) -> Result<()> {
    let threads = match flag {
        Some(t) => Some(t),
        None => match std::env::var(THREADS_ENV) {
            Ok(v) if !v.trim().is_empty() => Some(
                v.trim()
                    .parse()
                    .map_err(|_| invalid(format!("{THREADS_ENV} must be a positive integer, got `{v}`")))?,
            ),
            _ => None,
        },
    };
    if let Some(t) = threads {
        if t == 0 {
            return Err(invalid("thread count must be positive"));
        }
        // A pool already exists when `run` is called twice in one process; keep it.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    Ok(())
}

fn output_format(global: &GlobalArgs) -> Result<Format> {
    match (&global.format, &global.out) {
        (Some(f), _) => f.parse(),
        (None, Some(p)) if p.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) => Ok(Format::Csv),
        _ => Ok(Format::Json),
    }
}

fn load(data: &Option<PathBuf>, columns: &[&String], strict: bool, verbose: bool) -> Result<Dataset> {
    let path = required(data.as_ref(), "data")?;
    let mut names: Vec<&str> = Vec::new();
    for c in columns {
        if !names.contains(&c.as_str()) {
            names.push(c);
        }
    }
    let ds = load_csv(path, &names, CsvOptions { strict })?;
    if ds.dropped_rows() > 0 || verbose {
        eprintln!("{}: {} rows used, {} dropped", ds.provenance(), ds.n_rows(), ds.dropped_rows());
    }
    Ok(ds)
}

fn kernel(spec: Option<&str>, dim: usize) -> Result<KernelSpec> {
    KernelSpec::new(spec.unwrap_or("gauss").parse::<KernelFamily>()?, dim)
}

fn threshold(iota: Option<f64>, scale: Option<&str>) -> Result<Threshold> {
    Ok(Threshold {
        iota: iota.unwrap_or(DEFAULT_IOTA),
        scale: scale.map(str::parse::<ThresholdScale>).transpose()?.unwrap_or_default(),
    })
}

fn preset(name: &str) -> Result<ZFunction> {
    match name.trim().to_ascii_lowercase().replace('_', "-").as_str() {
        "exp-half-sum" => Ok(ZFunction::exp_half_sum()),
        "quadratic" => Ok(ZFunction::quadratic_pair()),
        "cross" => Ok(ZFunction::cross_pair()),
        other => Err(invalid(format!("unknown preset `{other}` (exp-half-sum, quadratic, cross)"))),
    }
}

fn column_fn(ds: &Dataset, name: &str) -> Result<ZFunction> {
    Ok(ZFunction::values(name, ds.column(name)?))
}

fn nonempty<'a>(cols: &'a [String], flag: &str) -> Result<&'a [String]> {
    if cols.is_empty() {
        Err(invalid(format!("missing required option --{flag}")))
    } else {
        Ok(cols)
    }
}

fn run_gmdd(a: &GmddArgs, verbose: bool) -> Result<GmddResult> {
    let u_col = required(a.u_col.as_ref(), "u-col")?;
    let z_cols = nonempty(&a.z_cols, "z-cols")?;
    let which: Estimator = a.estimator.as_deref().unwrap_or("ucentered").parse()?;
    let mut cols = vec![u_col];
    cols.extend(z_cols);
    let ds = load(&a.data, &cols, a.strict, verbose)?;
    let k = kernel(a.kernel.as_deref(), z_cols.len())?;
    let sample = Sample::new(ds.column(u_col)?, ds.columns(z_cols)?)?;
    Ok(GmddResult { gmdd: estimate(&sample, &k, which)?, n: sample.len() })
}

fn run_mi(a: &MiArgs, verbose: bool) -> Result<crate::mi_test::MiTestResult> {
    let u_col = required(a.u_col.as_ref(), "u-col")?;
    let z_cols = nonempty(&a.z_cols, "z-cols")?;
    let mut cols = vec![u_col];
    cols.extend(z_cols);
    cols.extend(&a.h_col);
    cols.extend(&a.aug_cols);
    let ds = load(&a.data, &cols, a.strict, verbose)?;
    let symmetrized = if a.h_col.is_empty() {
        vec![preset(a.h_preset.as_deref().unwrap_or("exp-half-sum"))?]
    } else {
        if a.h_preset.is_some() {
            return Err(invalid("--h-col and --h-preset are mutually exclusive"));
        }
        a.h_col.iter().map(|c| column_fn(&ds, c)).collect::<Result<_>>()?
    };
    let mut augmentations: Vec<ZFunction> = a.aug_cols.iter().map(|c| column_fn(&ds, c)).collect::<Result<_>>()?;
    for p in &a.aug_presets {
        augmentations.push(preset(p)?);
    }
    let vs = VSpec { symmetrized, augmentations, scalar: None, center: a.center };
    let k = kernel(a.kernel.as_deref(), z_cols.len())?;
    mi_test(&ds.column(u_col)?, &ds.columns(z_cols)?, &vs, &k, threshold(a.iota, a.threshold_scale.as_deref())?)
}

/// Model and data shared by the two specification-test subcommands.
struct Regression {
    ds: Dataset,
    y: Vec<f64>,
    x: DMatrix<f64>,
    model: ModelSpec,
}

fn regression(
    data: &Option<PathBuf>,
    y_col: &Option<String>,
    x_cols: &[String],
    iv_cols: &[String],
    intercept: bool,
    extra: &[&String],
    strict: bool,
    verbose: bool,
) -> Result<Regression> {
    let y_col = required(y_col.as_ref(), "y-col")?;
    let x_cols = nonempty(x_cols, "x-cols")?;
    let mut cols = vec![y_col];
    cols.extend(x_cols);
    cols.extend(iv_cols);
    cols.extend(extra.iter().copied());
    let ds = load(data, &cols, strict, verbose)?;
    let mut model = if iv_cols.is_empty() { ModelSpec::ols() } else { ModelSpec::iv(ds.columns(iv_cols)?) };
    if intercept {
        model = model.with_intercept();
    }
    Ok(Regression { y: ds.column(y_col)?, x: ds.columns(x_cols)?, ds, model })
}

fn run_spec(a: &SpecArgs, verbose: bool) -> Result<crate::spec_test::SpecTestResult> {
    let mut extra: Vec<&String> = a.aug_cols.iter().collect();
    extra.extend(a.h_col.as_ref());
    let r = regression(&a.data, &a.y_col, &a.x_cols, &a.iv_cols, a.intercept, &extra, a.strict, verbose)?;
    let pair = match (&a.h_col, &a.h_preset) {
        (Some(_), Some(_)) => return Err(invalid("--h-col and --h-preset are mutually exclusive")),
        (Some(c), None) => Some(column_fn(&r.ds, c)?),
        (None, Some(p)) => Some(preset(p)?),
        (None, None) => None,
    };
    let augmentation = match (a.aug_cols.is_empty(), &a.aug_preset) {
        (false, Some(_)) => return Err(invalid("--aug-cols and --aug-preset are mutually exclusive")),
        (false, None) => {
            let mut total = vec![0.0; r.y.len()];
            for c in &a.aug_cols {
                for (t, v) in total.iter_mut().zip(r.ds.column(c)?) {
                    *t += v;
                }
            }
            Some(ZFunction::values(a.aug_cols.join("+"), total))
        }
        (true, Some(p)) => Some(preset(p)?),
        (true, None) => None,
    };
    let mode = match pair {
        Some(h) => {
            if !a.delta_b.is_empty() || augmentation.is_some() {
                return Err(invalid("--delta-b and augmentations apply to the scalar form only"));
            }
            SpecMode::Pair { h }
        }
        None => SpecMode::Scalar { delta_b: (!a.delta_b.is_empty()).then(|| a.delta_b.clone()) },
    };
    let vs = SpecVSpec { mode, augmentation, center: a.center };
    let z_dim = conditioning_matrix(&r.model, &r.x).ncols().max(1);
    let opts = SpecOptions {
        threshold: threshold(a.iota, a.threshold_scale.as_deref())?,
        standardize_z: a.standardize_z,
        estimation_effect: true,
    };
    spec_test(&r.y, &r.x, &r.model, &vs, &kernel(a.kernel.as_deref(), z_dim)?, &opts)
}

fn run_spec_boot(a: &SpecBootArgs, seed: u64, verbose: bool) -> Result<crate::bootstrap::BootstrapResult> {
    let r = regression(&a.data, &a.y_col, &a.x_cols, &a.iv_cols, a.intercept, &[], a.strict, verbose)?;
    let family: IcmFamily = a.family.as_deref().unwrap_or("gauss").parse()?;
    let cfg = bootstrap_config(a.replicates, a.multiplier.as_deref(), seed)?;
    let z = conditioning_matrix(&r.model, &r.x);
    wild_bootstrap_pvalue(&r.y, &r.x, &z, &r.model, family, &cfg)
}

fn bootstrap_config(replicates: Option<usize>, multiplier: Option<&str>, seed: u64) -> Result<BootstrapConfig> {
    let base = BootstrapConfig::default();
    Ok(BootstrapConfig {
        replicates: replicates.unwrap_or(base.replicates),
        multiplier: multiplier.map(str::parse::<Multiplier>).transpose()?.unwrap_or(base.multiplier),
        seed,
    })
}

fn test_kinds(names: &[String]) -> Result<Vec<TestKind>> {
    names.iter().map(|t| t.parse()).collect()
}

fn run_simulate(a: &SimulateArgs, seed: u64, verbose: bool) -> Result<crate::sim::SimResult> {
    let dgp: DgpId = required(a.dgp.as_deref(), "dgp")?.parse()?;
    let mut cfg = SimConfig::new(dgp, required(a.n, "n")?, required(a.reps, "reps")?);
    cfg.seed = seed;
    if !a.tests.is_empty() {
        cfg.tests = test_kinds(&a.tests)?;
    }
    if !a.levels.is_empty() {
        cfg.levels = a.levels.clone();
    }
    cfg.bootstrap = bootstrap_config(a.replicates, a.multiplier.as_deref(), seed)?;
    cfg.threshold = threshold(a.iota, a.threshold_scale.as_deref())?;
    let result = match (&a.gamma_grid, a.gamma) {
        (Some(_), Some(_)) => return Err(invalid("--gamma and --gamma-grid are mutually exclusive")),
        (Some(grid), None) => run_power_curve(&cfg, &parse_grid(grid)?)?,
        (None, gamma) => {
            cfg.gamma = gamma.unwrap_or(0.0);
            run_size_experiment(&cfg)?
        }
    };
    if verbose {
        for (t, f) in &result.failures {
            eprintln!("{t}: {} replications used, {f} failed", result.used.get(t).copied().unwrap_or(0));
        }
    }
    Ok(result)
}

fn run_bench(a: &BenchArgs, seed: u64) -> Result<Vec<crate::sim::TimingRow>> {
    let dgp: DgpId = required(a.dgp.as_deref(), "dgp")?.parse()?;
    if a.n_grid.is_empty() {
        return Err(invalid("missing required option --n-grid"));
    }
    let mut cfg = SimConfig::new(dgp, a.n_grid[0], required(a.reps, "reps")?);
    cfg.seed = seed;
    cfg.tests = if a.tests.is_empty() { TestKind::ALL.to_vec() } else { test_kinds(&a.tests)? };
    cfg.bootstrap = bootstrap_config(a.replicates, a.multiplier.as_deref(), seed)?;
    run_timing_benchmark(&cfg, &a.n_grid)
}
