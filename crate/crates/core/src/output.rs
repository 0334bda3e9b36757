//! JSON and CSV emission of results.

use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::Serialize;

use crate::bootstrap::BootstrapResult;
use crate::error::{Error, Result};
use crate::mi_test::MiTestResult;
use crate::sim::{RateRow, SimResult, TimingRow};
use crate::spec_test::SpecTestResult;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Format {
    #[default]
    Json,
    Csv,
}

impl FromStr for Format {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "json" => Ok(Format::Json),
            "csv" => Ok(Format::Csv),
            other => Err(Error::InvalidParameter(format!("unknown format `{other}`"))),
        }
    }
}

/// Shortest decimal representation that parses back to the same `f64`.
pub fn real(x: f64) -> String {
    format!("{x}")
}

fn reals(xs: &[f64]) -> String {
    xs.iter().map(|x| real(*x)).collect::<Vec<_>>().join(";")
}

/// Results that can be laid out as a CSV table.
pub trait Tabular {
    fn header(&self) -> Vec<&'static str>;
    fn records(&self) -> Vec<Vec<String>>;
}

impl Tabular for MiTestResult {
    fn header(&self) -> Vec<&'static str> {
        vec!["statistic", "df", "p_value", "delta_hat", "spectrum", "retained_rank", "elapsed"]
    }
    fn records(&self) -> Vec<Vec<String>> {
        vec![vec![
            real(self.statistic),
            self.df.to_string(),
            real(self.p_value),
            reals(&self.delta_hat),
            reals(&self.omega_spectrum),
            self.retained_rank.to_string(),
            real(self.elapsed),
        ]]
    }
}

impl Tabular for SpecTestResult {
    fn header(&self) -> Vec<&'static str> {
        vec!["statistic", "df", "p_value", "t_value", "delta_hat", "spectrum", "retained_rank", "beta_hat", "elapsed"]
    }
    fn records(&self) -> Vec<Vec<String>> {
        vec![vec![
            real(self.statistic),
            self.df.to_string(),
            real(self.p_value),
            self.t_value.map(real).unwrap_or_default(),
            reals(&self.delta_hat),
            reals(&self.spectrum),
            self.retained_rank.to_string(),
            reals(&self.beta_hat),
            real(self.elapsed),
        ]]
    }
}

impl Tabular for BootstrapResult {
    fn header(&self) -> Vec<&'static str> {
        vec!["family", "statistic", "p_value", "B", "exceedances", "elapsed"]
    }
    fn records(&self) -> Vec<Vec<String>> {
        vec![vec![
            self.family.to_string(),
            real(self.statistic),
            real(self.p_value),
            self.replicates.to_string(),
            self.exceedances.to_string(),
            real(self.elapsed),
        ]]
    }
}

impl Tabular for Vec<RateRow> {
    fn header(&self) -> Vec<&'static str> {
        vec!["dgp", "test", "n", "gamma", "level", "rate", "mc_se"]
    }
    fn records(&self) -> Vec<Vec<String>> {
        self.iter()
            .map(|r| {
                vec![
                    r.dgp.to_string(),
                    r.test.to_string(),
                    r.n.to_string(),
                    real(r.gamma),
                    real(r.level),
                    real(r.rate),
                    real(r.mc_se),
                ]
            })
            .collect()
    }
}

impl Tabular for Vec<TimingRow> {
    fn header(&self) -> Vec<&'static str> {
        vec![
            "dgp",
            "test",
            "n",
            "reps",
            "mean_seconds",
            "sd_seconds",
            "median_seconds",
            "median_relative",
            "iqr_relative",
        ]
    }
    fn records(&self) -> Vec<Vec<String>> {
        self.iter()
            .map(|r| {
                vec![
                    r.dgp.to_string(),
                    r.test.to_string(),
                    r.n.to_string(),
                    r.reps.to_string(),
                    real(r.mean_seconds),
                    real(r.sd_seconds),
                    real(r.median_seconds),
                    real(r.median_relative),
                    real(r.iqr_relative),
                ]
            })
            .collect()
    }
}

impl Tabular for SimResult {
    fn header(&self) -> Vec<&'static str> {
        self.rows.header()
    }
    fn records(&self) -> Vec<Vec<String>> {
        self.rows.records()
    }
}

/// Sample estimate of the dependence metric.
#[derive(Debug, Clone, Serialize)]
pub struct GmddResult {
    pub gmdd: f64,
    pub n: usize,
}

impl Tabular for GmddResult {
    fn header(&self) -> Vec<&'static str> {
        vec!["gmdd", "n"]
    }
    fn records(&self) -> Vec<Vec<String>> {
        vec![vec![real(self.gmdd), self.n.to_string()]]
    }
}

/// Writes `value` to `w`. Text cells never contain the delimiter.
pub fn write_result<T: Serialize + Tabular, W: Write>(value: &T, format: Format, mut w: W) -> Result<()> {
    match format {
        Format::Json => {
            serde_json::to_writer_pretty(&mut w, value)?;
            writeln!(w)?;
        }
        Format::Csv => {
            let mut out = csv::WriterBuilder::new().from_writer(w);
            out.write_record(value.header())?;
            for rec in value.records() {
                let clean: Vec<String> = rec.into_iter().map(|c| c.replace([',', '"', '\n', '\r'], " ")).collect();
                out.write_record(&clean)?;
            }
            out.flush()?;
        }
    }
    Ok(())
}

/// Writes to `path`, or to stdout when `path` is `None`.
pub fn emit<T: Serialize + Tabular>(value: &T, format: Format, path: Option<&Path>) -> Result<()> {
    match path {
        Some(p) => write_result(value, format, std::io::BufWriter::new(std::fs::File::create(p)?)),
        None => write_result(value, format, std::io::stdout().lock()),
    }
}
