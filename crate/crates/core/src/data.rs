//! Raw-data and covariance-matrix ingestion.

use std::io::Read;
use std::path::Path;

use log::warn;
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::estimate::{Divisor, SampleMoments};
use crate::linalg;

/// Named numeric columns, one row per complete observation.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub names: Vec<String>,
    /// N × P.
    pub data: DMatrix<f64>,
    /// Rows removed by listwise deletion.
    pub dropped_rows: usize,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.data.nrows()
    }

    /// Writes the dataset as comma-separated values with a header row.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let io = |e: csv::Error| Error::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        };
        let mut w = csv::Writer::from_path(path).map_err(io)?;
        w.write_record(&self.names).map_err(io)?;
        for r in 0..self.data.nrows() {
            w.write_record(self.data.row(r).iter().map(|v| format!("{v:e}")))
                .map_err(io)?;
        }
        w.flush().map_err(|e| Error::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsvOptions {
    pub delimiter: u8,
    /// Columns to keep, in this order; `None` keeps every column.
    pub columns: Option<Vec<String>>,
    /// Cell contents treated as missing.
    pub missing: Vec<String>,
}

impl Default for CsvOptions {
    fn default() -> Self {
        CsvOptions {
            delimiter: b',',
            columns: None,
            missing: vec![String::new(), "NA".to_string()],
        }
    }
}

pub fn read_csv(path: &Path, options: &CsvOptions) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    read_csv_from(file, options)
}

/// Parses CSV text with a header row. Rows missing any selected column are
/// dropped listwise.
pub fn read_csv_from<R: Read>(reader: R, options: &CsvOptions) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(options.delimiter)
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::Data(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if header.is_empty() || header.iter().all(String::is_empty) {
        return Err(Error::Data("missing header row".into()));
    }
    let names = match &options.columns {
        Some(cols) => cols.clone(),
        None => header.clone(),
    };
    let idx: Vec<usize> = names
        .iter()
        .map(|n| {
            header
                .iter()
                .position(|h| h == n)
                .ok_or_else(|| Error::Data(format!("column `{n}` not found in header")))
        })
        .collect::<Result<_>>()?;

    let mut values = Vec::new();
    let mut dropped = 0;
    for (line, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| Error::Data(e.to_string()))?;
        let mut row = Vec::with_capacity(idx.len());
        let mut complete = true;
        for (&c, name) in idx.iter().zip(&names) {
            let cell = record.get(c).unwrap_or("");
            if options.missing.iter().any(|m| m == cell) {
                complete = false;
                break;
            }
            let v: f64 = cell.parse().map_err(|_| {
                Error::Data(format!(
                    "non-numeric value `{cell}` in column `{name}` on data row {}",
                    line + 1
                ))
            })?;
            if !v.is_finite() {
                return Err(Error::Data(format!(
                    "non-finite value in column `{name}` on data row {}",
                    line + 1
                )));
            }
            row.push(v);
        }
        if complete {
            values.extend(row);
        } else {
            dropped += 1;
        }
    }
    let n = values.len() / idx.len().max(1);
    if n == 0 {
        return Err(Error::Data("no complete rows".into()));
    }
    if dropped > 0 {
        warn!("{dropped} rows with missing values dropped listwise; {n} remain");
    }
    Ok(Dataset {
        names,
        data: DMatrix::from_row_slice(n, idx.len(), &values),
        dropped_rows: dropped,
    })
}

/// Mean-centered sample covariance.
pub fn sample_moments(dataset: &Dataset, divisor: Divisor) -> Result<SampleMoments> {
    let n = dataset.n();
    if n < 2 {
        return Err(Error::Data(format!("need at least 2 observations, got {n}")));
    }
    let p = dataset.names.len();
    let mut x = dataset.data.clone();
    for j in 0..p {
        let mean = x.column(j).mean();
        x.column_mut(j).add_scalar_mut(-mean);
    }
    let d = match divisor {
        Divisor::NMinusOne => n as f64 - 1.0,
        Divisor::N => n as f64,
    };
    let mut cov = x.transpose() * &x / d;
    linalg::symmetrize(&mut cov);
    for j in 0..p {
        if cov[(j, j)] <= 0.0 {
            return Err(Error::Data(format!(
                "column `{}` is constant",
                dataset.names[j]
            )));
        }
    }
    SampleMoments::new(dataset.names.clone(), cov, n, divisor)
}

/// N rows whose sample covariance (divisor N−1) equals `sigma`, from a
/// fixed seed.
pub fn exact_population_sample(names: &[String], sigma: &DMatrix<f64>, n: usize) -> Result<Dataset> {
    exact_population_sample_seeded(names, sigma, n, 0x5eed)
}

pub fn exact_population_sample_seeded(
    names: &[String],
    sigma: &DMatrix<f64>,
    n: usize,
    seed: u64,
) -> Result<Dataset> {
    let p = sigma.nrows();
    if names.len() != p || sigma.ncols() != p {
        return Err(Error::Data("names do not match the covariance matrix".into()));
    }
    if n <= p {
        return Err(Error::Data(format!(
            "need more observations than variables (N = {n}, P = {p})"
        )));
    }
    let target = linalg::cholesky(sigma, "target covariance")?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x: DMatrix<f64> = DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(&mut rng));
    for j in 0..p {
        let mean = x.column(j).mean();
        x.column_mut(j).add_scalar_mut(-mean);
    }
    let own = x.transpose() * &x / (n as f64 - 1.0);
    let own = linalg::cholesky(&own, "generated sample covariance")?;
    // Z = X L⁻ᵀ has identity covariance; Y = Z Lₛᵀ has covariance Σ.
    let zt = own
        .l()
        .solve_lower_triangular(&x.transpose())
        .ok_or_else(|| Error::Singular("generated sample covariance".into()))?;
    let y = (target.l() * zt).transpose();
    Ok(Dataset {
        names: names.to_vec(),
        data: y,
        dropped_rows: 0,
    })
}

/// Reads a square covariance CSV: a header row of names (first cell ignored)
/// and one row per variable whose first cell repeats the name.
pub fn read_covariance_csv(path: &Path, n: usize) -> Result<SampleMoments> {
    let file = std::fs::File::open(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    read_covariance_from(file, n)
}

pub fn read_covariance_from<R: Read>(reader: R, n: usize) -> Result<SampleMoments> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers().map_err(|e| Error::Data(e.to_string()))?;
    let names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let p = names.len();
    if p == 0 {
        return Err(Error::Data("covariance file has no variable names".into()));
    }
    let mut cov = DMatrix::<f64>::zeros(p, p);
    let mut rows = 0;
    for record in rdr.records() {
        let record = record.map_err(|e| Error::Data(e.to_string()))?;
        if rows >= p {
            return Err(Error::Data("covariance matrix has more rows than columns".into()));
        }
        if record.get(0) != Some(names[rows].as_str()) {
            return Err(Error::Data(format!(
                "row {} is labelled `{}` but `{}` was expected",
                rows + 1,
                record.get(0).unwrap_or(""),
                names[rows]
            )));
        }
        if record.len() != p + 1 {
            return Err(Error::Data(format!(
                "row `{}` has {} values, expected {p}",
                names[rows],
                record.len().saturating_sub(1)
            )));
        }
        for j in 0..p {
            let cell = &record[j + 1];
            cov[(rows, j)] = cell.parse().map_err(|_| {
                Error::Data(format!("non-numeric covariance `{cell}` in row `{}`", names[rows]))
            })?;
        }
        rows += 1;
    }
    if rows != p {
        return Err(Error::Data(format!(
            "covariance matrix has {rows} rows but {p} columns"
        )));
    }
    for i in 0..p {
        for j in 0..i {
            if (cov[(i, j)] - cov[(j, i)]).abs() > 1e-8 {
                return Err(Error::Data(format!(
                    "covariance matrix is not symmetric at ({}, {})",
                    names[i], names[j]
                )));
            }
        }
    }
    linalg::symmetrize(&mut cov);
    SampleMoments::new(names, cov, n, Divisor::NMinusOne)
}
