//! Combined RCT + observational dataset, fold assignment and CSV ingestion.
//!
//! Study convention: `S = 0` marks RCT rows, `S = 1` marks observational
//! rows. Every dataset is validated at construction and immutable afterwards.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Pooled rows of `(X, A, Y, S)` from one RCT and one observational study.
#[derive(Debug, Clone, PartialEq)]
pub struct CombinedDataset {
    covariates: Array2<f64>,
    treatment: Vec<u8>,
    outcome: Vec<f64>,
    study: Vec<u8>,
    feature_names: Vec<String>,
}

impl CombinedDataset {
    pub fn new(
        covariates: Array2<f64>,
        treatment: Vec<u8>,
        outcome: Vec<f64>,
        study: Vec<u8>,
        feature_names: Vec<String>,
    ) -> Result<Self> {
        let n = covariates.nrows();
        for len in [treatment.len(), outcome.len(), study.len()] {
            if len != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: len,
                });
            }
        }
        if feature_names.len() != covariates.ncols() {
            return Err(Error::DimensionMismatch {
                expected: covariates.ncols(),
                got: feature_names.len(),
            });
        }
        if n < 2 {
            return Err(Error::TooFewRows { needed: 2, got: n });
        }
        for (i, row) in covariates.outer_iter().enumerate() {
            if let Some(j) = row.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    row: i,
                    column: feature_names[j].clone(),
                });
            }
        }
        if let Some(i) = outcome.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: i,
                column: "outcome".into(),
            });
        }
        if let Some(i) = treatment.iter().position(|&a| a > 1) {
            return Err(Error::NonBinary {
                field: "treatment",
                row: i,
                value: treatment[i] as f64,
            });
        }
        if let Some(i) = study.iter().position(|&s| s > 1) {
            return Err(Error::NonBinary {
                field: "study",
                row: i,
                value: study[i] as f64,
            });
        }

        let mut arms = [[false; 2]; 2];
        for (&s, &a) in study.iter().zip(&treatment) {
            arms[s as usize][a as usize] = true;
        }
        if !arms[0][0] && !arms[0][1] {
            return Err(Error::EmptyStratum("RCT"));
        }
        if !arms[1][0] && !arms[1][1] {
            return Err(Error::EmptyStratum("observational"));
        }
        for (s, label) in [(0usize, "RCT"), (1, "observational")] {
            for a in 0..2u8 {
                if !arms[s][a as usize] {
                    return Err(Error::MissingArm { stratum: label, arm: a });
                }
            }
        }

        Ok(Self {
            covariates,
            treatment,
            outcome,
            study,
            feature_names,
        })
    }

    pub fn n(&self) -> usize {
        self.outcome.len()
    }

    pub fn d(&self) -> usize {
        self.covariates.ncols()
    }

    pub fn covariates(&self) -> &Array2<f64> {
        &self.covariates
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.covariates.row(i)
    }

    pub fn treatment(&self) -> &[u8] {
        &self.treatment
    }

    pub fn outcome(&self) -> &[f64] {
        &self.outcome
    }

    pub fn study(&self) -> &[u8] {
        &self.study
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.feature_names.iter().position(|f| f == name)
    }

    /// Row indices with `S = 0`.
    pub fn rct_rows(&self) -> Vec<usize> {
        self.rows_where(|_, s| s == 0)
    }

    /// Row indices with `S = 1`.
    pub fn obs_rows(&self) -> Vec<usize> {
        self.rows_where(|_, s| s == 1)
    }

    pub fn n_rct(&self) -> usize {
        self.study.iter().filter(|&&s| s == 0).count()
    }

    pub fn n_obs(&self) -> usize {
        self.n() - self.n_rct()
    }

    pub fn has_binary_outcome(&self) -> bool {
        self.outcome.iter().all(|&y| y == 0.0 || y == 1.0)
    }

    fn rows_where(&self, pred: impl Fn(u8, u8) -> bool) -> Vec<usize> {
        (0..self.n())
            .filter(|&i| pred(self.treatment[i], self.study[i]))
            .collect()
    }

    /// New dataset made of the given rows (repeats allowed), revalidated.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        Self::new(
            self.covariates.select(Axis(0), rows),
            rows.iter().map(|&i| self.treatment[i]).collect(),
            rows.iter().map(|&i| self.outcome[i]).collect(),
            rows.iter().map(|&i| self.study[i]).collect(),
            self.feature_names.clone(),
        )
    }

    /// New dataset without the named covariate columns.
    pub fn drop_columns(&self, names: &[String]) -> Result<Self> {
        for name in names {
            if self.column_index(name).is_none() {
                return Err(Error::MissingColumn(name.clone()));
            }
        }
        let keep: Vec<usize> = (0..self.d())
            .filter(|&j| !names.contains(&self.feature_names[j]))
            .collect();
        Self::new(
            self.covariates.select(Axis(1), &keep),
            self.treatment.clone(),
            self.outcome.clone(),
            self.study.clone(),
            keep.iter().map(|&j| self.feature_names[j].clone()).collect(),
        )
    }
}

/// Maps CSV header names onto the outcome, treatment and study roles.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CsvSchema {
    pub outcome: String,
    pub treatment: String,
    pub study: String,
    /// Columns that are neither roles nor covariates (ids, notes).
    pub ignore: Vec<String>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            outcome: "Y".into(),
            treatment: "A".into(),
            study: "S".into(),
            ignore: Vec::new(),
        }
    }
}

pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<CombinedDataset> {
    let file = std::fs::File::open(path)?;
    read_csv(file, schema)
}

pub fn read_csv<R: Read>(reader: R, schema: &CsvSchema) -> Result<CombinedDataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let y_col = find(&schema.outcome)?;
    let a_col = find(&schema.treatment)?;
    let s_col = find(&schema.study)?;
    let cov_cols: Vec<usize> = (0..headers.len())
        .filter(|&j| j != y_col && j != a_col && j != s_col && !schema.ignore.contains(&headers[j]))
        .collect();

    let mut cov = Vec::new();
    let (mut treatment, mut outcome, mut study) = (Vec::new(), Vec::new(), Vec::new());
    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        let parse = |j: usize| -> Result<f64> {
            let raw = record.get(j).unwrap_or("").trim();
            raw.parse::<f64>().map_err(|_| Error::NonNumeric {
                row,
                column: headers[j].clone(),
                value: raw.to_string(),
            })
        };
        let binary = |j: usize, field: &'static str| -> Result<u8> {
            let v = parse(j)?;
            if v == 0.0 {
                Ok(0)
            } else if v == 1.0 {
                Ok(1)
            } else {
                Err(Error::NonBinary { field, row, value: v })
            }
        };
        for &j in &cov_cols {
            let v = parse(j)?;
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    row,
                    column: headers[j].clone(),
                });
            }
            cov.push(v);
        }
        treatment.push(binary(a_col, "treatment")?);
        study.push(binary(s_col, "study")?);
        let y = parse(y_col)?;
        if !y.is_finite() {
            return Err(Error::NonFinite {
                row,
                column: headers[y_col].clone(),
            });
        }
        outcome.push(y);
    }
    let n = outcome.len();
    if n < 2 {
        return Err(Error::TooFewRows { needed: 2, got: n });
    }
    let covariates = Array2::from_shape_vec((n, cov_cols.len()), cov)
        .expect("row-major buffer matches shape");
    let names = cov_cols.iter().map(|&j| headers[j].clone()).collect();
    CombinedDataset::new(covariates, treatment, outcome, study, names)
}

/// Writes covariates, then treatment, outcome and study columns. Floats use
/// the shortest representation that parses back to the same bits.
pub fn write_csv<W: Write>(data: &CombinedDataset, schema: &CsvSchema, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = data.feature_names().iter().map(String::as_str).collect();
    header.extend([
        schema.treatment.as_str(),
        schema.outcome.as_str(),
        schema.study.as_str(),
    ]);
    wtr.write_record(&header)?;
    for i in 0..data.n() {
        let mut rec: Vec<String> = data.row(i).iter().map(|v| v.to_string()).collect();
        rec.push(data.treatment()[i].to_string());
        rec.push(data.outcome()[i].to_string());
        rec.push(data.study()[i].to_string());
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn save_csv(data: &CombinedDataset, schema: &CsvSchema, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_csv(data, schema, std::io::BufWriter::new(file))
}

/// Balanced, seeded K-fold partition of row indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldAssignment {
    fold_of_row: Vec<usize>,
    k: usize,
}

impl FoldAssignment {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn fold_of_row(&self) -> &[usize] {
        &self.fold_of_row
    }

    pub fn rows_in(&self, fold: usize) -> Vec<usize> {
        (0..self.fold_of_row.len())
            .filter(|&i| self.fold_of_row[i] == fold)
            .collect()
    }

    pub fn rows_outside(&self, fold: usize) -> Vec<usize> {
        (0..self.fold_of_row.len())
            .filter(|&i| self.fold_of_row[i] != fold)
            .collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.fold_of_row {
            sizes[f] += 1;
        }
        sizes
    }
}

pub fn assign_folds(n: usize, k: usize, seed: u64) -> Result<FoldAssignment> {
    if k < 2 {
        return Err(Error::InvalidParameter(format!("fold count must be >= 2, got {k}")));
    }
    if k > n {
        return Err(Error::InvalidParameter(format!(
            "fold count {k} exceeds row count {n}"
        )));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng::from_path(seed, &[rng::TAG_FOLDS]));
    let mut fold_of_row = vec![0; n];
    for (pos, &row) in perm.iter().enumerate() {
        fold_of_row[row] = pos % k;
    }
    Ok(FoldAssignment { fold_of_row, k })
}
