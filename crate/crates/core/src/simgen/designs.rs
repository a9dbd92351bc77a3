//! Small fully synthetic designs with closed-form nuisances, each built to
//! isolate one behaviour of the tests.

use ndarray::{Array2, ArrayView1};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::CombinedDataset;
use crate::error::{Error, Result};
use crate::nuisance::NuisanceOracle;
use crate::rng::{self, TAG_SIMULATION};

fn sigmoid(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

fn check_sizes(n_rct: usize, n_obs: usize) -> Result<()> {
    if n_rct < 2 || n_obs < 2 {
        return Err(Error::TooFewRows { needed: 2, got: n_rct.min(n_obs) });
    }
    Ok(())
}

/// Shared effect `1 + x₂`, study-dependent baseline through an unobserved
/// `U ~ N(shift·S, 1)` entering `Y₀ = x₁ + weight·U + ε`. The contrast
/// transports while the potential-outcome means do not.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineShiftDesign {
    pub n_rct: usize,
    pub n_obs: usize,
    /// Mean of `U` in the observational cohort (0 in the RCT).
    pub baseline_shift: f64,
    pub u_weight: f64,
    /// Slope of the observational propensity in `x₁`.
    pub propensity_slope: f64,
    pub p_rct: f64,
}

impl Default for BaselineShiftDesign {
    fn default() -> Self {
        Self { n_rct: 1500, n_obs: 1500, baseline_shift: 1.0, u_weight: 2.0, propensity_slope: 0.5, p_rct: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineShiftOracle {
    pub design: BaselineShiftDesign,
}

impl NuisanceOracle for BaselineShiftOracle {
    fn mu0(&self, x: ArrayView1<'_, f64>) -> f64 {
        x[0] + self.design.u_weight * self.design.baseline_shift
    }
    fn mu1(&self, x: ArrayView1<'_, f64>) -> f64 {
        self.mu0(x) + 1.0 + x[1]
    }
    fn treatment_propensity(&self, x: ArrayView1<'_, f64>) -> f64 {
        sigmoid(self.design.propensity_slope * x[0])
    }
    fn selection_propensity(&self, _: ArrayView1<'_, f64>) -> f64 {
        self.design.n_rct as f64 / (self.design.n_rct + self.design.n_obs) as f64
    }
    fn rct_assignment(&self) -> f64 {
        self.design.p_rct
    }
}

impl BaselineShiftDesign {
    pub fn generate(&self, seed: u64) -> Result<(CombinedDataset, BaselineShiftOracle)> {
        check_sizes(self.n_rct, self.n_obs)?;
        let n = self.n_rct + self.n_obs;
        let mut rng = rng::from_path(seed, &[TAG_SIMULATION, 100]);
        let mut x = Array2::zeros((n, 2));
        let (mut a, mut y, mut s) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
        for i in 0..n {
            let study = u8::from(i >= self.n_rct);
            let x1: f64 = rng.sample(StandardNormal);
            let x2: f64 = rng.sample(StandardNormal);
            let u = self.baseline_shift * f64::from(study) + rng.sample::<f64, _>(StandardNormal);
            let p = if study == 0 { self.p_rct } else { sigmoid(self.propensity_slope * x1) };
            let treat = u8::from(rng.random_bool(p));
            let eps: f64 = rng.sample(StandardNormal);
            x[[i, 0]] = x1;
            x[[i, 1]] = x2;
            y.push(x1 + self.u_weight * u + (1.0 + x2) * f64::from(treat) + eps);
            a.push(treat);
            s.push(study);
        }
        let data = CombinedDataset::new(x, a, y, s, vec!["x1".into(), "x2".into()])?;
        Ok((data, BaselineShiftOracle { design: self.clone() }))
    }
}

/// Binary outcome with `P(Y₀=1|x) = 0.35 + 0.1x₁ + 0.05x₂` and effect
/// `0.1 + 0.1x₃` on `x ~ U[-1,1]³`. The observational effect carries an
/// extra `modifier·x₁` term that averages out over any subgroup split on
/// `x₂`/`x₃`, and treatment there depends on `x₂`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BinarySelectionDesign {
    pub n_rct: usize,
    pub n_obs: usize,
    pub modifier: f64,
    pub propensity_slope: f64,
    pub p_rct: f64,
}

impl Default for BinarySelectionDesign {
    fn default() -> Self {
        Self { n_rct: 10_000, n_obs: 20_000, modifier: 0.1, propensity_slope: 0.5, p_rct: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinarySelectionOracle {
    pub design: BinarySelectionDesign,
}

impl BinarySelectionOracle {
    fn base(x: ArrayView1<'_, f64>) -> f64 {
        0.35 + 0.1 * x[0] + 0.05 * x[1]
    }
}

impl NuisanceOracle for BinarySelectionOracle {
    fn mu0(&self, x: ArrayView1<'_, f64>) -> f64 {
        Self::base(x)
    }
    fn mu1(&self, x: ArrayView1<'_, f64>) -> f64 {
        Self::base(x) + 0.1 + 0.1 * x[2] + self.design.modifier * x[0]
    }
    fn treatment_propensity(&self, x: ArrayView1<'_, f64>) -> f64 {
        sigmoid(self.design.propensity_slope * x[1])
    }
    fn selection_propensity(&self, _: ArrayView1<'_, f64>) -> f64 {
        self.design.n_rct as f64 / (self.design.n_rct + self.design.n_obs) as f64
    }
    fn rct_assignment(&self) -> f64 {
        self.design.p_rct
    }
}

impl BinarySelectionDesign {
    pub fn generate(&self, seed: u64) -> Result<(CombinedDataset, BinarySelectionOracle)> {
        check_sizes(self.n_rct, self.n_obs)?;
        if self.modifier.abs() > 0.15 {
            return Err(Error::InvalidParameter(format!("modifier {} leaves [0,1]", self.modifier)));
        }
        let n = self.n_rct + self.n_obs;
        let mut rng = rng::from_path(seed, &[TAG_SIMULATION, 101]);
        let mut x = Array2::zeros((n, 3));
        let (mut a, mut y, mut s) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
        for i in 0..n {
            let study = u8::from(i >= self.n_rct);
            for j in 0..3 {
                x[[i, j]] = rng.random_range(-1.0..1.0);
            }
            let row = x.row(i);
            let p = if study == 0 { self.p_rct } else { sigmoid(self.propensity_slope * row[1]) };
            let treat = u8::from(rng.random_bool(p));
            let mut mean = 0.35 + 0.1 * row[0] + 0.05 * row[1];
            if treat == 1 {
                mean += 0.1 + 0.1 * row[2] + if study == 1 { self.modifier * row[0] } else { 0.0 };
            }
            y.push(f64::from(u8::from(rng.random_bool(mean))));
            a.push(treat);
            s.push(study);
        }
        let names = vec!["x1".into(), "x2".into(), "x3".into()];
        let data = CombinedDataset::new(x, a, y, s, names)?;
        Ok((data, BinarySelectionOracle { design: self.clone() }))
    }
}

/// Constant effect 1 in the RCT; the observational effect is raised by
/// `bias` where `x₁ > 0`. Covariates `x ~ N(0, I₂)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WitnessDesign {
    pub n_rct: usize,
    pub n_obs: usize,
    pub bias: f64,
    pub p_rct: f64,
}

impl Default for WitnessDesign {
    fn default() -> Self {
        Self { n_rct: 500, n_obs: 500, bias: 2.0, p_rct: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WitnessOracle {
    pub design: WitnessDesign,
}

impl NuisanceOracle for WitnessOracle {
    fn mu0(&self, x: ArrayView1<'_, f64>) -> f64 {
        x[0]
    }
    fn mu1(&self, x: ArrayView1<'_, f64>) -> f64 {
        x[0] + 1.0 + if x[0] > 0.0 { self.design.bias } else { 0.0 }
    }
    fn treatment_propensity(&self, x: ArrayView1<'_, f64>) -> f64 {
        sigmoid(0.5 * x[1])
    }
    fn selection_propensity(&self, _: ArrayView1<'_, f64>) -> f64 {
        self.design.n_rct as f64 / (self.design.n_rct + self.design.n_obs) as f64
    }
    fn rct_assignment(&self) -> f64 {
        self.design.p_rct
    }
}

impl WitnessDesign {
    pub fn generate(&self, seed: u64) -> Result<(CombinedDataset, WitnessOracle)> {
        check_sizes(self.n_rct, self.n_obs)?;
        let n = self.n_rct + self.n_obs;
        let oracle = WitnessOracle { design: self.clone() };
        let mut rng = rng::from_path(seed, &[TAG_SIMULATION, 102]);
        let mut x = Array2::zeros((n, 2));
        let (mut a, mut y, mut s) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
        for i in 0..n {
            let study = u8::from(i >= self.n_rct);
            x[[i, 0]] = rng.sample(StandardNormal);
            x[[i, 1]] = rng.sample(StandardNormal);
            let row = x.row(i);
            let p = if study == 0 { self.p_rct } else { oracle.treatment_propensity(row) };
            let treat = u8::from(rng.random_bool(p));
            let mean = match (study, treat) {
                (_, 0) => oracle.mu0(row),
                (1, _) => oracle.mu1(row),
                _ => row[0] + 1.0,
            };
            y.push(mean + rng.sample::<f64, _>(StandardNormal));
            a.push(treat);
            s.push(study);
        }
        let data = CombinedDataset::new(x, a, y, s, vec!["x1".into(), "x2".into()])?;
        Ok((data, oracle))
    }
}
