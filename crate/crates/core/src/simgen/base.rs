//! Base covariate pool for the semi-synthetic benchmark and the two
//! resampling schemes that turn it into an RCT and an observational cohort.

use std::collections::HashMap;
use std::path::Path;

use ndarray::{Array2, ArrayView1, Axis};
use rand::distr::weighted::WeightedIndex;
use rand::distr::{Bernoulli, Distribution};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, TAG_RESAMPLE};

/// Names of the base columns the generator needs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnMap {
    /// Indicators that make a row less prevalent in the observational cohort.
    pub male: String,
    pub smoked: String,
    pub worked: String,
    /// Covariates driving the hidden confounders (an intercept is prepended).
    pub nnhealth: String,
    pub birth_order: String,
    pub booze: String,
    pub mom_hs: String,
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self {
            male: "sex".into(),
            smoked: "cig".into(),
            worked: "work.dur".into(),
            nnhealth: "nnhealth".into(),
            birth_order: "birth.o".into(),
            booze: "booze".into(),
            mom_hs: "mom.hs".into(),
        }
    }
}

/// Where the base pool comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaseSource {
    /// CSV with one numeric column per covariate; `None` uses the built-in surrogate.
    pub path: Option<String>,
    pub columns: ColumnMap,
    /// Columns of the CSV that are not covariates (treatment, outcomes, ids).
    pub ignore: Vec<String>,
}

impl Default for BaseSource {
    fn default() -> Self {
        Self {
            path: None,
            columns: ColumnMap::default(),
            ignore: vec!["treat".into()],
        }
    }
}

impl BaseSource {
    pub fn load(&self) -> Result<IhdpBase> {
        match &self.path {
            Some(p) => IhdpBase::from_csv(p, self.columns.clone(), &self.ignore),
            None => Ok(IhdpBase::surrogate()),
        }
    }
}

/// A pool of covariate rows with the generator's key columns resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct IhdpBase {
    covariates: Array2<f64>,
    names: Vec<String>,
    columns: ColumnMap,
    flag_cols: [usize; 3],
    driver_cols: [usize; 4],
    /// (mean, sd) used to standardize a column, when it was standardized.
    scaling: HashMap<String, (f64, f64)>,
}

/// Rows in the surrogate pool, matching the public IHDP extract.
pub const SURROGATE_ROWS: usize = 985;
const SURROGATE_SEED: u64 = 0x1D_4B_A5E;

const CONTINUOUS: [&str; 6] = ["bw", "b.head", "preterm", "birth.o", "nnhealth", "momage"];
const BINARY: [&str; 22] = [
    "sex", "twin", "b.marr", "mom.lths", "mom.hs", "mom.scoll", "cig", "first", "booze", "drugs", "work.dur",
    "prenatal", "ark", "ein", "har", "mia", "pen", "tex", "was", "momwhite", "momblack", "momhisp",
];

impl IhdpBase {
    pub fn new(covariates: Array2<f64>, names: Vec<String>, columns: ColumnMap) -> Result<Self> {
        if names.len() != covariates.ncols() {
            return Err(Error::DimensionMismatch { expected: covariates.ncols(), got: names.len() });
        }
        if covariates.nrows() == 0 {
            return Err(Error::TooFewRows { needed: 1, got: 0 });
        }
        if let Some((i, j)) = covariates.indexed_iter().find(|(_, v)| !v.is_finite()).map(|(ij, _)| ij) {
            return Err(Error::NonFinite { row: i, column: names[j].clone() });
        }
        let find = |name: &str| {
            names
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| Error::MissingColumn(name.to_string()))
        };
        let flag_cols = [find(&columns.male)?, find(&columns.smoked)?, find(&columns.worked)?];
        let driver_cols = [
            find(&columns.nnhealth)?,
            find(&columns.birth_order)?,
            find(&columns.booze)?,
            find(&columns.mom_hs)?,
        ];
        Ok(Self { covariates, names, columns, flag_cols, driver_cols, scaling: HashMap::new() })
    }

    /// Reads every non-ignored column of a headed CSV as a covariate.
    pub fn from_csv(path: impl AsRef<Path>, columns: ColumnMap, ignore: &[String]) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
        let header = reader.headers()?.clone();
        let keep: Vec<usize> = (0..header.len()).filter(|&j| !ignore.iter().any(|c| c == &header[j])).collect();
        let names: Vec<String> = keep.iter().map(|&j| header[j].to_string()).collect();
        let mut values = Vec::new();
        let mut rows = 0;
        for (row, rec) in reader.records().enumerate() {
            let rec = rec?;
            for &j in &keep {
                let raw = rec.get(j).unwrap_or("");
                let v: f64 = raw.parse().map_err(|_| Error::NonNumeric {
                    row,
                    column: header[j].to_string(),
                    value: raw.to_string(),
                })?;
                values.push(v);
            }
            rows += 1;
        }
        let x = Array2::from_shape_vec((rows, names.len()), values)
            .map_err(|e| Error::InvalidParameter(e.to_string()))?;
        Self::new(x, names, columns)
    }

    /// Deterministic stand-in with the IHDP extract's shape: 985 rows,
    /// 6 standardized continuous and 22 binary covariates. Mutually
    /// exclusive categories (education, site, ethnicity) are one-hot.
    pub fn surrogate() -> Self {
        let n = SURROGATE_ROWS;
        let mut rng = rng::from_path(SURROGATE_SEED, &[TAG_RESAMPLE]);
        let mut cols: Vec<Vec<f64>> = vec![Vec::with_capacity(n); CONTINUOUS.len() + BINARY.len()];
        let bern = |p: f64, rng: &mut rng::Rng| f64::from(u8::from(rng.random_bool(p)));
        let pick = |probs: &[f64], rng: &mut rng::Rng| WeightedIndex::new(probs).expect("static weights").sample(rng);
        for _ in 0..n {
            let z = |rng: &mut rng::Rng| -> f64 { rng.sample(StandardNormal) };
            cols[0].push(2000.0 + 450.0 * z(&mut rng));
            cols[1].push(z(&mut rng));
            cols[2].push(z(&mut rng));
            cols[3].push(1.0 + pick(&[0.45, 0.3, 0.15, 0.06, 0.03, 0.01], &mut rng) as f64);
            cols[4].push(z(&mut rng));
            cols[5].push(z(&mut rng));
            let mut b = [0.0f64; 22];
            b[0] = bern(0.51, &mut rng);
            b[1] = bern(0.05, &mut rng);
            b[2] = bern(0.52, &mut rng);
            // mother's education: < high school, high school, some college, college
            match pick(&[0.38, 0.33, 0.18, 0.11], &mut rng) {
                0 => b[3] = 1.0,
                1 => b[4] = 1.0,
                2 => b[5] = 1.0,
                _ => {}
            }
            b[6] = bern(0.4, &mut rng);
            b[7] = bern(0.44, &mut rng);
            b[8] = bern(0.1, &mut rng);
            b[9] = bern(0.05, &mut rng);
            b[10] = bern(0.56, &mut rng);
            b[11] = bern(0.95, &mut rng);
            // eight sites, the last one is the reference level
            let site = pick(&[1.0; 8], &mut rng);
            if site < 7 {
                b[12 + site] = 1.0;
            }
            b[19 + pick(&[0.36, 0.51, 0.13], &mut rng)] = 1.0;
            for (k, v) in b.into_iter().enumerate() {
                cols[CONTINUOUS.len() + k].push(v);
            }
        }
        let mut scaling = HashMap::new();
        for (j, name) in CONTINUOUS.iter().enumerate() {
            let mean = cols[j].iter().sum::<f64>() / n as f64;
            let sd = (cols[j].iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
            cols[j].iter_mut().for_each(|v| *v = (*v - mean) / sd);
            scaling.insert(name.to_string(), (mean, sd));
        }
        let names: Vec<String> = CONTINUOUS.iter().chain(BINARY.iter()).map(|s| s.to_string()).collect();
        let mut x = Array2::zeros((n, names.len()));
        for (j, col) in cols.iter().enumerate() {
            x.column_mut(j).iter_mut().zip(col).for_each(|(dst, &v)| *dst = v);
        }
        let mut base = Self::new(x, names, ColumnMap::default()).expect("surrogate has all mapped columns");
        base.scaling = scaling;
        base
    }

    pub fn covariates(&self) -> &Array2<f64> {
        &self.covariates
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn columns(&self) -> &ColumnMap {
        &self.columns
    }

    pub fn n(&self) -> usize {
        self.covariates.nrows()
    }

    pub fn d(&self) -> usize {
        self.covariates.ncols()
    }

    /// Column positions of the male, smoked and worked indicators.
    pub fn flag_columns(&self) -> [usize; 3] {
        self.flag_cols
    }

    /// Column positions of the four confounder drivers.
    pub fn driver_columns(&self) -> [usize; 4] {
        self.driver_cols
    }

    /// Maps a raw-unit value of `column` onto the stored scale.
    pub fn to_stored_scale(&self, column: &str, raw: f64) -> Result<f64> {
        if !self.names.iter().any(|n| n == column) {
            return Err(Error::MissingColumn(column.to_string()));
        }
        Ok(match self.scaling.get(column) {
            Some(&(mean, sd)) => (raw - mean) / sd,
            None => raw,
        })
    }

    /// Sampling probabilities of each base row in the observational cohort.
    pub fn obs_sampling_probs(&self) -> Vec<f64> {
        let keep: Vec<f64> = self
            .covariates
            .outer_iter()
            .map(|r| 1.0 - printed_weight(flag_count(r, self.flag_cols)))
            .collect();
        let total: f64 = keep.iter().sum();
        keep.into_iter().map(|k| k / total).collect()
    }
}

fn flag_count(row: ArrayView1<'_, f64>, cols: [usize; 3]) -> f64 {
    cols.iter().map(|&c| f64::from(u8::from(row[c] != 0.0))).sum()
}

/// The printed weight `1/(1+exp(-0.2·k))` for `k` set indicators. Rows are
/// drawn with probability proportional to `1 - weight`, so rows with more
/// indicators set become less prevalent.
pub fn printed_weight(flags: f64) -> f64 {
    1.0 / (1.0 + (-0.2 * flags).exp())
}

/// Number of male/smoked/worked indicators set in a base row.
pub fn indicator_count(base: &IhdpBase, row: usize) -> f64 {
    flag_count(base.covariates.row(row), base.flag_cols)
}

/// Uniform with-replacement row indices.
pub fn resample_rct_rows(n_base: usize, n0: usize, seed: u64) -> Result<Vec<usize>> {
    if n_base == 0 {
        return Err(Error::TooFewRows { needed: 1, got: 0 });
    }
    let mut rng = rng::from_path(seed, &[TAG_RESAMPLE, 0]);
    Ok((0..n0).map(|_| rng.random_range(0..n_base)).collect())
}

/// Uniform with-replacement resample of the base rows.
pub fn resample_rct(base: &Array2<f64>, n0: usize, seed: u64) -> Result<Array2<f64>> {
    let rows = resample_rct_rows(base.nrows(), n0, seed)?;
    Ok(base.select(Axis(0), &rows))
}

/// Row indices drawn with probability proportional to `1 - weight`.
pub fn resample_obs_rows(base: &IhdpBase, n: usize, seed: u64) -> Result<Vec<usize>> {
    let dist = WeightedIndex::new(base.obs_sampling_probs()).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let mut rng = rng::from_path(seed, &[TAG_RESAMPLE, 1]);
    Ok((0..n).map(|_| dist.sample(&mut rng)).collect())
}

/// Weighted with-replacement resample for the observational cohort.
pub fn resample_obs_weighted(base: &IhdpBase, n: usize, seed: u64) -> Result<Array2<f64>> {
    let rows = resample_obs_rows(base, n, seed)?;
    Ok(base.covariates.select(Axis(0), &rows))
}

/// Independent Bernoulli(p) treatment draws.
pub(crate) fn bernoulli_draws(n: usize, p: f64, rng: &mut rng::Rng) -> Result<Vec<u8>> {
    let dist = Bernoulli::new(p).map_err(|_| Error::InvalidParameter(format!("probability {p} outside [0,1]")))?;
    Ok((0..n).map(|_| u8::from(dist.sample(rng))).collect())
}
