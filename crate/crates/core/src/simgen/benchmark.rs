//! IHDP-style benchmark: confounder and outcome generation, concealment,
//! the closed-form nuisance oracle and the on-disk bundle.

use std::path::Path;

use ndarray::{concatenate, s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::base::{bernoulli_draws, resample_obs_rows, resample_rct_rows, IhdpBase};
use crate::data::{save_csv, CombinedDataset, CsvSchema};
use crate::error::{Error, Result};
use crate::nuisance::NuisanceOracle;
use crate::rng::{self, TAG_SIMULATION};

/// Confounder mean coefficients on (1, nnhealth, birth order, booze, mom.hs).
pub const CONFOUNDER_BASE_COEFS: [f64; 5] = [0.1, -0.1, 0.2, -0.3, 0.4];
/// Extra confounder shift for treated observational rows.
pub const CONFOUNDER_TREATED_SHIFT: [f64; 5] = [1.0, -0.1, 0.5, -3.0, 4.0];
const BETA_VALUES: [f64; 5] = [0.0, 0.1, 0.2, 0.3, 0.4];
const BETA_PROBS: [f64; 5] = [0.6, 0.1, 0.1, 0.1, 0.1];

/// Confounder weight families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strength {
    Low,
    High,
}

impl Strength {
    pub fn values(self) -> [f64; 5] {
        match self {
            Strength::Low => [0.1, 0.2, 0.5, 0.75, 1.0],
            Strength::High => [1.0, 1.75, 2.0, 2.25, 2.75],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    /// RCT size.
    pub n0: usize,
    /// Observational-to-RCT size ratio.
    pub size_ratio: f64,
    /// Number of generated confounders.
    pub m: usize,
    /// Number of confounders hidden from the observed data.
    pub c_z: usize,
    pub strength: Strength,
    /// Constant added to the treated outcome surface.
    pub omega: f64,
    pub seed: u64,
    /// Seed for the outcome coefficients; `None` redraws them with `seed`.
    pub structural_seed: Option<u64>,
    /// Treatment probability in the RCT.
    pub p_rct: f64,
    /// Marginal treatment probability in the observational cohort.
    pub p_obs: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n0: 2955,
            size_ratio: 1.0,
            m: 7,
            c_z: 0,
            strength: Strength::Low,
            omega: 23.0,
            seed: 0,
            structural_seed: None,
            p_rct: 0.5,
            p_obs: 0.5,
        }
    }
}

impl SimConfig {
    pub fn n1(&self) -> usize {
        (self.size_ratio * self.n0 as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if !(self.size_ratio > 0.0 && self.size_ratio.is_finite()) {
            return bad(format!("size_ratio must be positive, got {}", self.size_ratio));
        }
        if self.n0 < 2 || self.n1() < 2 {
            return Err(Error::TooFewRows { needed: 2, got: self.n0.min(self.n1()) });
        }
        if self.c_z > self.m {
            return bad(format!("c_z = {} exceeds m = {}", self.c_z, self.m));
        }
        if !self.omega.is_finite() {
            return bad("omega must be finite".into());
        }
        for (name, p) in [("p_rct", self.p_rct), ("p_obs", self.p_obs)] {
            if !(p > 0.0 && p < 1.0) {
                return bad(format!("{name} must lie in (0,1), got {p}"));
            }
        }
        Ok(())
    }
}

fn check_drivers(x_s: ArrayView2<'_, f64>) -> Result<()> {
    if x_s.ncols() != 5 {
        return Err(Error::DimensionMismatch { expected: 5, got: x_s.ncols() });
    }
    Ok(())
}

/// `z = x_sᵀξ + (x_sᵀδ)·A + ε` per confounder with fresh noise; the
/// treatment term is dropped for RCT rows.
pub fn generate_confounders(
    x_s: ArrayView2<'_, f64>,
    treatment: &[u8],
    is_rct: bool,
    m: usize,
    seed: u64,
) -> Result<Array2<f64>> {
    check_drivers(x_s)?;
    if treatment.len() != x_s.nrows() {
        return Err(Error::DimensionMismatch { expected: x_s.nrows(), got: treatment.len() });
    }
    let mut rng = rng::from_path(seed, &[TAG_SIMULATION, 10]);
    let base = x_s.dot(&ArrayView1::from(&CONFOUNDER_BASE_COEFS));
    let shift = x_s.dot(&ArrayView1::from(&CONFOUNDER_TREATED_SHIFT));
    let mut z = Array2::zeros((x_s.nrows(), m));
    for (i, mut row) in z.outer_iter_mut().enumerate() {
        let mean = base[i] + if !is_rct && treatment[i] == 1 { shift[i] } else { 0.0 };
        for v in row.iter_mut() {
            let e: f64 = rng.sample(StandardNormal);
            *v = mean + e;
        }
    }
    Ok(z)
}

/// Outcome coefficients: each entry from {0,…,0.4} with mass 0.6 at zero.
pub fn draw_outcome_coefs(len: usize, seed: u64) -> Vec<f64> {
    let dist = WeightedIndex::new(BETA_PROBS).expect("static weights");
    let mut rng = rng::from_path(seed, &[TAG_SIMULATION, 20]);
    (0..len).map(|_| BETA_VALUES[dist.sample(&mut rng)]).collect()
}

/// Per-confounder weights drawn uniformly from the strength family.
pub fn draw_confounder_weights(m: usize, strength: Strength, seed: u64, stream: u64) -> Vec<f64> {
    let values = strength.values();
    let mut rng = rng::from_path(seed, &[TAG_SIMULATION, 21, stream]);
    (0..m).map(|_| values[rng.random_range(0..values.len())]).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedOutcomes {
    pub y0: Array1<f64>,
    pub y1: Array1<f64>,
    pub y: Array1<f64>,
    pub mean0: Array1<f64>,
    pub mean1: Array1<f64>,
}

/// Draws both potential outcomes and the observed one.
///
/// Column 0 of `x_tilde` is the treatment; it is set to 0 for the untreated
/// surface and 1 for the treated surface, the remaining columns are the
/// covariates:
/// `Y₀ ~ N((x̃ + ½)ᵀβ + zᵀγ, 1)`, `Y₁ ~ N(x̃ᵀβ + zᵀδ + ω, 1)`.
pub fn simulate_outcomes(
    x_tilde: ArrayView2<'_, f64>,
    z: ArrayView2<'_, f64>,
    gamma: &[f64],
    delta_out: &[f64],
    beta: &[f64],
    omega: f64,
    seed: u64,
) -> Result<SimulatedOutcomes> {
    let n = x_tilde.nrows();
    if z.nrows() != n {
        return Err(Error::DimensionMismatch { expected: n, got: z.nrows() });
    }
    if beta.len() != x_tilde.ncols() {
        return Err(Error::DimensionMismatch { expected: x_tilde.ncols(), got: beta.len() });
    }
    for w in [gamma, delta_out] {
        if w.len() != z.ncols() {
            return Err(Error::DimensionMismatch { expected: z.ncols(), got: w.len() });
        }
    }
    if x_tilde.ncols() == 0 {
        return Err(Error::DimensionMismatch { expected: 1, got: 0 });
    }
    let a = x_tilde.column(0);
    if let Some(i) = a.iter().position(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::NonBinary { field: "treatment", row: i, value: a[i] });
    }
    let beta_v = ArrayView1::from(beta);
    let covariate_part = x_tilde.slice(s![.., 1..]).dot(&beta_v.slice(s![1..]));
    let half_sum = 0.5 * beta.iter().sum::<f64>();
    let mean0 = &covariate_part + half_sum + &z.dot(&ArrayView1::from(gamma));
    let mean1 = &covariate_part + beta[0] + &z.dot(&ArrayView1::from(delta_out)) + omega;
    let mut rng = rng::from_path(seed, &[TAG_SIMULATION, 30]);
    let mut y0 = Array1::zeros(n);
    let mut y1 = Array1::zeros(n);
    for i in 0..n {
        let e0: f64 = rng.sample(StandardNormal);
        let e1: f64 = rng.sample(StandardNormal);
        y0[i] = mean0[i] + e0;
        y1[i] = mean1[i] + e1;
    }
    let y = Array1::from_iter((0..n).map(|i| if a[i] == 1.0 { y1[i] } else { y0[i] }));
    Ok(SimulatedOutcomes { y0, y1, y, mean0, mean1 })
}

/// Confounder indices from strongest to weakest `|γ|`, ties by lowest index.
pub fn concealment_order(gamma: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..gamma.len()).collect();
    order.sort_by(|&a, &b| gamma[b].abs().total_cmp(&gamma[a].abs()).then(a.cmp(&b)));
    order
}

fn sigmoid(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

/// Closed-form nuisance functions of the observed covariate row
/// `(base covariates, observed confounders in index order)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IhdpOracle {
    pub base_dim: usize,
    /// Indices of confounders present in the observed data.
    pub observed: Vec<usize>,
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
    pub delta_out: Vec<f64>,
    pub omega: f64,
    pub driver_cols: [usize; 4],
    pub flag_cols: [usize; 3],
    /// Mean of `1 - weight` over the base pool.
    pub mean_keep: f64,
    /// n₁ / n₀.
    pub size_ratio: f64,
    pub p_rct: f64,
    pub p_obs: f64,
}

impl IhdpOracle {
    fn drivers(&self, x: ArrayView1<'_, f64>) -> [f64; 5] {
        let c = self.driver_cols;
        [1.0, x[c[0]], x[c[1]], x[c[2]], x[c[3]]]
    }

    fn dots(&self, x: ArrayView1<'_, f64>) -> (f64, f64) {
        let xs = self.drivers(x);
        let base = xs.iter().zip(CONFOUNDER_BASE_COEFS).map(|(a, b)| a * b).sum();
        let shift = xs.iter().zip(CONFOUNDER_TREATED_SHIFT).map(|(a, b)| a * b).sum();
        (base, shift)
    }

    fn hidden(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.gamma.len()).filter(|j| !self.observed.contains(j))
    }

    fn covariate_part(&self, row: ArrayView1<'_, f64>) -> f64 {
        (0..self.base_dim).map(|j| row[j] * self.beta[j + 1]).sum()
    }

    fn observed_z<'a>(&'a self, row: ArrayView1<'a, f64>) -> impl Iterator<Item = (usize, f64)> + 'a {
        self.observed.iter().enumerate().map(move |(k, &j)| (j, row[self.base_dim + k]))
    }

    /// Log of `Σ_observed [s(z − x_sᵀξ) − s²/2]`: the treated-vs-untreated
    /// log density ratio of the observed confounders.
    fn treated_log_ratio(&self, row: ArrayView1<'_, f64>) -> f64 {
        let (base, shift) = self.dots(row);
        self.observed_z(row).map(|(_, z)| shift * (z - base) - 0.5 * shift * shift).sum()
    }

    /// CATE in the RCT population given the observed row.
    pub fn cate_rct(&self, row: ArrayView1<'_, f64>) -> f64 {
        let (base, _) = self.dots(row);
        let beta_half: f64 = 0.5 * self.beta.iter().sum::<f64>();
        let obs: f64 = self.observed_z(row).map(|(j, z)| (self.delta_out[j] - self.gamma[j]) * z).sum();
        let hid: f64 = self.hidden().map(|j| (self.delta_out[j] - self.gamma[j]) * base).sum();
        self.beta[0] + self.omega - beta_half + obs + hid
    }

    /// CATE given the full confounder vector (it does not vary with the
    /// base covariates).
    pub fn cate_full(&self, z: ArrayView1<'_, f64>) -> f64 {
        let beta_half: f64 = 0.5 * self.beta.iter().sum::<f64>();
        let zt: f64 = z.iter().enumerate().map(|(j, v)| (self.delta_out[j] - self.gamma[j]) * v).sum();
        self.beta[0] + self.omega - beta_half + zt
    }
}

impl NuisanceOracle for IhdpOracle {
    fn mu0(&self, row: ArrayView1<'_, f64>) -> f64 {
        let (base, _) = self.dots(row);
        let obs: f64 = self.observed_z(row).map(|(j, z)| self.gamma[j] * z).sum();
        let hid: f64 = self.hidden().map(|j| self.gamma[j] * base).sum();
        self.covariate_part(row) + 0.5 * self.beta.iter().sum::<f64>() + obs + hid
    }

    fn mu1(&self, row: ArrayView1<'_, f64>) -> f64 {
        let (base, shift) = self.dots(row);
        let obs: f64 = self.observed_z(row).map(|(j, z)| self.delta_out[j] * z).sum();
        let hid: f64 = self.hidden().map(|j| self.delta_out[j] * (base + shift)).sum();
        self.covariate_part(row) + self.beta[0] + obs + hid + self.omega
    }

    fn treatment_propensity(&self, row: ArrayView1<'_, f64>) -> f64 {
        let logit = (self.p_obs / (1.0 - self.p_obs)).ln();
        sigmoid(logit + self.treated_log_ratio(row))
    }

    fn selection_propensity(&self, row: ArrayView1<'_, f64>) -> f64 {
        let flags: f64 = self.flag_cols.iter().map(|&c| f64::from(u8::from(row[c] != 0.0))).sum();
        let keep = (1.0 - super::base::printed_weight(flags)) / self.mean_keep;
        // log of the observational-to-RCT density ratio of the confounders,
        // a two-component mixture over the treatment
        let l = self.treated_log_ratio(row);
        let log_mix = if l > 0.0 {
            l + ((1.0 - self.p_obs) * (-l).exp() + self.p_obs).ln()
        } else {
            ((1.0 - self.p_obs) + self.p_obs * l.exp()).ln()
        };
        let log_odds_obs = (self.size_ratio * keep).ln() + log_mix;
        sigmoid(-log_odds_obs)
    }

    fn rct_assignment(&self) -> f64 {
        self.p_rct
    }
}

/// A generated RCT + observational pair with its ground truth.
#[derive(Debug, Clone)]
pub struct GeneratedBenchmark {
    /// Observed data (concealed confounders removed). RCT rows come first.
    pub dataset: CombinedDataset,
    /// The same rows with every confounder present.
    pub full: CombinedDataset,
    pub oracle: IhdpOracle,
    /// Full confounder matrix.
    pub confounders: Array2<f64>,
    pub y0: Array1<f64>,
    pub y1: Array1<f64>,
    /// Concealed confounder indices, strongest first.
    pub concealed: Vec<usize>,
    pub config: SimConfig,
}

impl GeneratedBenchmark {
    /// Oracle CATE at every observed row.
    pub fn cate(&self) -> Array1<f64> {
        Array1::from_iter(self.dataset.covariates().outer_iter().map(|r| self.oracle.cate_rct(r)))
    }
}

fn confounder_names(m: usize) -> Vec<String> {
    (1..=m).map(|j| format!("z{j}")).collect()
}

/// Full generation: resample, draw treatment and confounders, simulate
/// outcomes, pool, then conceal.
pub fn generate_benchmark(config: &SimConfig, base: &IhdpBase) -> Result<GeneratedBenchmark> {
    config.validate()?;
    let seed = config.seed;
    let structural = config.structural_seed.unwrap_or(seed);
    let (n0, n1, m) = (config.n0, config.n1(), config.m);
    let rct_rows = resample_rct_rows(base.n(), n0, rng::derive_seed(seed, &[TAG_SIMULATION, 1]))?;
    let obs_rows = resample_obs_rows(base, n1, rng::derive_seed(seed, &[TAG_SIMULATION, 2]))?;
    let mut trng = rng::from_path(seed, &[TAG_SIMULATION, 3]);
    let mut treatment = bernoulli_draws(n0, config.p_rct, &mut trng)?;
    treatment.extend(bernoulli_draws(n1, config.p_obs, &mut trng)?);

    let rows: Vec<usize> = rct_rows.iter().chain(&obs_rows).copied().collect();
    let x = base.covariates().select(Axis(0), &rows);
    let c = base.driver_columns();
    let mut x_s = Array2::ones((n0 + n1, 5));
    for k in 0..4 {
        x_s.column_mut(k + 1).assign(&x.column(c[k]));
    }
    let z_rct = generate_confounders(
        x_s.slice(s![..n0, ..]),
        &treatment[..n0],
        true,
        m,
        rng::derive_seed(seed, &[TAG_SIMULATION, 4]),
    )?;
    let z_obs = generate_confounders(
        x_s.slice(s![n0.., ..]),
        &treatment[n0..],
        false,
        m,
        rng::derive_seed(seed, &[TAG_SIMULATION, 5]),
    )?;
    let z = concatenate(Axis(0), &[z_rct.view(), z_obs.view()]).expect("equal widths");

    let beta = draw_outcome_coefs(base.d() + 1, structural);
    let gamma = draw_confounder_weights(m, config.strength, structural, 0);
    let delta_out = draw_confounder_weights(m, config.strength, structural, 1);
    let a_col = Array2::from_shape_fn((n0 + n1, 1), |(i, _)| f64::from(treatment[i]));
    let x_tilde = concatenate(Axis(1), &[a_col.view(), x.view()]).expect("equal heights");
    let out = simulate_outcomes(
        x_tilde.view(),
        z.view(),
        &gamma,
        &delta_out,
        &beta,
        config.omega,
        rng::derive_seed(seed, &[TAG_SIMULATION, 6]),
    )?;

    let covariates = concatenate(Axis(1), &[x.view(), z.view()]).expect("equal heights");
    let mut names = base.names().to_vec();
    names.extend(confounder_names(m));
    let study: Vec<u8> = (0..n0 + n1).map(|i| u8::from(i >= n0)).collect();
    let full = CombinedDataset::new(covariates, treatment, out.y.to_vec(), study, names)?;
    let mean_keep = (0..base.n())
        .map(|i| 1.0 - super::base::printed_weight(super::base::indicator_count(base, i)))
        .sum::<f64>()
        / base.n() as f64;
    let oracle = IhdpOracle {
        base_dim: base.d(),
        observed: (0..m).collect(),
        beta,
        gamma,
        delta_out,
        omega: config.omega,
        driver_cols: c,
        flag_cols: base.flag_columns(),
        mean_keep,
        size_ratio: n1 as f64 / n0 as f64,
        p_rct: config.p_rct,
        p_obs: config.p_obs,
    };
    let bench = GeneratedBenchmark {
        dataset: full.clone(),
        full,
        oracle,
        confounders: z,
        y0: out.y0,
        y1: out.y1,
        concealed: Vec::new(),
        config: config.clone(),
    };
    conceal_confounders(bench, config.c_z)
}

/// Hides the `c_z` confounders with the largest `|γ|` from the observed
/// data; the oracle and full data keep them.
pub fn conceal_confounders(mut bench: GeneratedBenchmark, c_z: usize) -> Result<GeneratedBenchmark> {
    let m = bench.oracle.gamma.len();
    if c_z > m {
        return Err(Error::InvalidParameter(format!("c_z = {c_z} exceeds m = {m}")));
    }
    let concealed: Vec<usize> = concealment_order(&bench.oracle.gamma).into_iter().take(c_z).collect();
    let names = confounder_names(m);
    let hidden: Vec<String> = concealed.iter().map(|&j| names[j].clone()).collect();
    bench.dataset = bench.full.drop_columns(&hidden)?;
    bench.oracle.observed = (0..m).filter(|j| !concealed.contains(j)).collect();
    bench.concealed = concealed;
    bench.config.c_z = c_z;
    Ok(bench)
}

#[derive(Serialize)]
struct OracleFile<'a> {
    oracle: &'a IhdpOracle,
    concealed: &'a [usize],
    concealment_order: Vec<usize>,
    /// τ(x, z) = cate_intercept + Σⱼ cate_confounder_coefs[j]·zⱼ
    cate_intercept: f64,
    cate_confounder_coefs: Vec<f64>,
}

/// Writes `observed.csv`, `oracle.json` and `config.json` into `dir`.
pub fn write_bundle(bench: &GeneratedBenchmark, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    save_csv(&bench.dataset, &CsvSchema::default(), dir.join("observed.csv"))?;
    let o = &bench.oracle;
    let file = OracleFile {
        oracle: o,
        concealed: &bench.concealed,
        concealment_order: concealment_order(&o.gamma),
        cate_intercept: o.beta[0] + o.omega - 0.5 * o.beta.iter().sum::<f64>(),
        cate_confounder_coefs: o.delta_out.iter().zip(&o.gamma).map(|(d, g)| d - g).collect(),
    };
    std::fs::write(dir.join("oracle.json"), serde_json::to_string_pretty(&file)?)?;
    std::fs::write(dir.join("config.json"), serde_json::to_string_pretty(&bench.config)?)?;
    Ok(())
}
