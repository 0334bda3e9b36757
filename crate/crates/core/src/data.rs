//! Named numeric columns and CSV ingestion.

use std::collections::HashSet;
use std::io::Read;
use std::path::Path;

use nalgebra::DMatrix;

use crate::dgp::{DgpId, Generated};
use crate::error::{ensure_finite, Error, Result};

#[derive(Debug, Clone)]
pub struct Dataset {
    names: Vec<String>,
    values: DMatrix<f64>,
    provenance: String,
    dropped_rows: usize,
}

impl Dataset {
    pub fn new(names: Vec<String>, values: DMatrix<f64>, provenance: impl Into<String>) -> Result<Self> {
        if names.len() != values.ncols() {
            return Err(Error::DimensionMismatch { expected: names.len(), got: values.ncols() });
        }
        let mut seen = HashSet::new();
        for name in &names {
            if !seen.insert(name.as_str()) {
                return Err(Error::DuplicateColumn(name.clone()));
            }
        }
        ensure_finite(values.as_slice(), "dataset")?;
        Ok(Self { names, values, provenance: provenance.into(), dropped_rows: 0 })
    }

    pub fn from_columns(columns: Vec<(String, Vec<f64>)>, provenance: impl Into<String>) -> Result<Self> {
        let n = columns.first().map_or(0, |c| c.1.len());
        if let Some((_, c)) = columns.iter().find(|c| c.1.len() != n) {
            return Err(Error::DimensionMismatch { expected: n, got: c.len() });
        }
        let names = columns.iter().map(|c| c.0.clone()).collect();
        let flat: Vec<f64> = columns.into_iter().flat_map(|c| c.1).collect();
        Self::new(names, DMatrix::from_column_slice(n, flat.len() / n.max(1), &flat), provenance)
    }

    /// Columns `y, x1, x2, z1, z2` (regression designs) or `y, z1, z2`.
    pub fn from_generated(g: &Generated, dgp: DgpId) -> Result<Self> {
        let mut cols = vec![("y".to_string(), g.y.clone())];
        for l in 0..g.x.ncols() {
            cols.push((format!("x{}", l + 1), g.x.column(l).iter().copied().collect()));
        }
        for l in 0..g.z.ncols() {
            cols.push((format!("z{}", l + 1), g.z.column(l).iter().copied().collect()));
        }
        Self::from_columns(cols, dgp.as_str())
    }

    pub fn n_rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    /// Rows discarded during ingestion because of missing or non-numeric cells.
    pub fn dropped_rows(&self) -> usize {
        self.dropped_rows
    }

    fn index(&self, name: &str) -> Result<usize> {
        self.names.iter().position(|c| c == name).ok_or_else(|| Error::MissingColumn(name.to_string()))
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        Ok(self.values.column(self.index(name)?).iter().copied().collect())
    }

    /// `n × names.len()` matrix of the named columns, in the given order.
    pub fn columns<S: AsRef<str>>(&self, names: &[S]) -> Result<DMatrix<f64>> {
        let idx: Vec<usize> = names.iter().map(|s| self.index(s.as_ref())).collect::<Result<_>>()?;
        Ok(DMatrix::from_fn(self.n_rows(), idx.len(), |i, l| self.values[(i, idx[l])]))
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct CsvOptions {
    /// Fail on the first unparseable cell instead of dropping its row.
    pub strict: bool,
}

/// Reads the `required` columns (all columns when empty) of a headed CSV.
pub fn load_csv<S: AsRef<str>>(path: impl AsRef<Path>, required: &[S], opts: CsvOptions) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)?;
    read_csv(file, required, opts, path.display().to_string())
}

pub fn read_csv<R: Read, S: AsRef<str>>(
    reader: R,
    required: &[S],
    opts: CsvOptions,
    provenance: impl Into<String>,
) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header.is_empty() || header.iter().all(String::is_empty) {
        return Err(Error::Empty("no header row".into()));
    }
    let wanted: Vec<String> =
        if required.is_empty() { header.clone() } else { required.iter().map(|s| s.as_ref().to_string()).collect() };
    let mut idx = Vec::with_capacity(wanted.len());
    let mut seen = HashSet::new();
    for name in &wanted {
        if !seen.insert(name.as_str()) {
            return Err(Error::DuplicateColumn(name.clone()));
        }
        let mut hits = header.iter().enumerate().filter(|(_, h)| *h == name);
        let (i, _) = hits.next().ok_or_else(|| Error::MissingColumn(name.clone()))?;
        if hits.next().is_some() {
            return Err(Error::DuplicateColumn(name.clone()));
        }
        idx.push(i);
    }
    let mut flat: Vec<f64> = Vec::new();
    let mut rows = 0;
    let mut dropped = 0;
    for (r, record) in rdr.records().enumerate() {
        let record = record?;
        let parsed: std::result::Result<Vec<f64>, (usize, String)> = idx
            .iter()
            .map(|&c| {
                let cell = record.get(c).unwrap_or("");
                cell.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or((c, cell.to_string()))
            })
            .collect();
        match parsed {
            Ok(vals) => {
                flat.extend(vals);
                rows += 1;
            }
            Err((c, value)) if opts.strict => {
                return Err(Error::Parse { row: r + 1, column: header[c].clone(), value });
            }
            Err(_) => dropped += 1,
        }
    }
    if rows == 0 {
        return Err(Error::Empty(format!("no complete numeric rows ({dropped} dropped)")));
    }
    if rows < 2 {
        return Err(Error::TooFewObservations { required: 2, got: rows });
    }
    let row_major = DMatrix::from_row_slice(rows, wanted.len(), &flat);
    let mut ds = Dataset::new(wanted, row_major, provenance)?;
    ds.dropped_rows = dropped;
    Ok(ds)
}
