//! Cross-fitted nuisance estimates entering the CATE signals.
//!
//! Every row (RCT and observational alike) receives out-of-fold predictions
//! of the observational outcome surfaces, the observational treatment
//! propensity and the probability of belonging to the RCT. A closed-form
//! oracle can stand in for the fitted models.

use ndarray::{Array1, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{CombinedDataset, FoldAssignment};
use crate::error::{Error, Result};
use crate::learners::{clip_probability, fit, LearnerSpec, Target};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuisanceEstimates {
    /// Untreated observational outcome surface at each row.
    pub mu0: Array1<f64>,
    /// Treated observational outcome surface at each row.
    pub mu1: Array1<f64>,
    /// P(A=1 | S=1, X) at each row, clipped.
    pub e_obs: Array1<f64>,
    /// P(S=0 | X) at each row, clipped.
    pub pi_rct: Array1<f64>,
    /// P(A=1 | S=0), clipped.
    pub p_assign: f64,
}

impl NuisanceEstimates {
    pub fn len(&self) -> usize {
        self.mu0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu0.is_empty()
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            mu0: self.mu0.select(Axis(0), rows),
            mu1: self.mu1.select(Axis(0), rows),
            e_obs: self.e_obs.select(Axis(0), rows),
            pi_rct: self.pi_rct.select(Axis(0), rows),
            p_assign: self.p_assign,
        }
    }

    pub(crate) fn check_len(&self, n: usize) -> Result<()> {
        for len in [self.mu0.len(), self.mu1.len(), self.e_obs.len(), self.pi_rct.len()] {
            if len != n {
                return Err(Error::DimensionMismatch { expected: n, got: len });
            }
        }
        Ok(())
    }
}

/// Learner choice for each nuisance function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NuisanceSpecs {
    /// Outcome surfaces, fit separately per observational arm.
    pub outcome: LearnerSpec,
    /// Observational treatment propensity.
    pub treatment: LearnerSpec,
    /// RCT membership probability, fit on the pooled sample.
    pub selection: LearnerSpec,
}

impl Default for NuisanceSpecs {
    fn default() -> Self {
        Self {
            outcome: LearnerSpec::linear(),
            treatment: LearnerSpec::gbt(),
            selection: LearnerSpec::gbt(),
        }
    }
}

impl NuisanceSpecs {
    /// Gradient-boosted trees everywhere.
    pub fn all_gbt() -> Self {
        Self {
            outcome: LearnerSpec::gbt(),
            treatment: LearnerSpec::gbt(),
            selection: LearnerSpec::gbt(),
        }
    }
}

/// Known nuisance functions of the observed covariate row.
pub trait NuisanceOracle: Sync {
    fn mu0(&self, x: ArrayView1<'_, f64>) -> f64;
    fn mu1(&self, x: ArrayView1<'_, f64>) -> f64;
    fn treatment_propensity(&self, x: ArrayView1<'_, f64>) -> f64;
    fn selection_propensity(&self, x: ArrayView1<'_, f64>) -> f64;
    fn rct_assignment(&self) -> f64;
}

/// Treated fraction among RCT rows, clipped.
pub fn estimate_rct_assignment(data: &CombinedDataset) -> Result<f64> {
    let (mut n0, mut treated) = (0usize, 0usize);
    for (&s, &a) in data.study().iter().zip(data.treatment()) {
        if s == 0 {
            n0 += 1;
            treated += a as usize;
        }
    }
    if n0 == 0 {
        return Err(Error::EmptyStratum("RCT"));
    }
    Ok(clip_probability(treated as f64 / n0 as f64))
}

/// Evaluates an oracle on every row.
pub fn oracle_nuisances(data: &CombinedDataset, oracle: &dyn NuisanceOracle) -> NuisanceEstimates {
    let x = data.covariates();
    let eval = |f: &dyn Fn(ArrayView1<'_, f64>) -> f64| Array1::from_iter(x.outer_iter().map(f));
    NuisanceEstimates {
        mu0: eval(&|r| oracle.mu0(r)),
        mu1: eval(&|r| oracle.mu1(r)),
        e_obs: eval(&|r| clip_probability(oracle.treatment_propensity(r))),
        pi_rct: eval(&|r| clip_probability(oracle.selection_propensity(r))),
        p_assign: clip_probability(oracle.rct_assignment()),
    }
}

struct FoldFit {
    rows: Vec<usize>,
    mu0: Array1<f64>,
    mu1: Array1<f64>,
    e_obs: Array1<f64>,
    pi_rct: Array1<f64>,
}

fn fit_predict(
    spec: &LearnerSpec,
    x: ArrayView2<'_, f64>,
    train: &[usize],
    y: &[f64],
    target: Target,
    seed: u64,
    eval: ArrayView2<'_, f64>,
) -> Result<Array1<f64>> {
    let xt = x.select(Axis(0), train);
    let model = fit(spec, xt.view(), y, target, seed)?;
    model.predict(eval)
}

/// K-fold cross-fitted nuisance estimates.
pub fn crossfit_nuisances(
    data: &CombinedDataset,
    specs: &NuisanceSpecs,
    folds: &FoldAssignment,
    seed: u64,
) -> Result<NuisanceEstimates> {
    if folds.fold_of_row().len() != data.n() {
        return Err(Error::DimensionMismatch {
            expected: data.n(),
            got: folds.fold_of_row().len(),
        });
    }
    let p_assign = estimate_rct_assignment(data)?;
    let x = data.covariates().view();
    let (a, y, s) = (data.treatment(), data.outcome(), data.study());

    let fits: Vec<FoldFit> = (0..folds.k())
        .into_par_iter()
        .map(|k| -> Result<FoldFit> {
            let rows = folds.rows_in(k);
            let train = folds.rows_outside(k);
            let pick = |pred: &dyn Fn(usize) -> bool, what: &'static str| -> Result<Vec<usize>> {
                let r: Vec<usize> = train.iter().copied().filter(|&i| pred(i)).collect();
                if r.len() < 2 {
                    return Err(Error::FoldComplement { fold: k, what });
                }
                Ok(r)
            };
            let obs0 = pick(&|i| s[i] == 1 && a[i] == 0, "observational untreated rows")?;
            let obs1 = pick(&|i| s[i] == 1 && a[i] == 1, "observational treated rows")?;
            let obs: Vec<usize> = train.iter().copied().filter(|&i| s[i] == 1).collect();
            if !train.iter().any(|&i| s[i] == 0) {
                return Err(Error::FoldComplement { fold: k, what: "RCT rows" });
            }
            let eval = x.select(Axis(0), &rows);
            let tag = |which: u64| rng::derive_seed(seed, &[rng::TAG_NUISANCE, k as u64, which]);
            let gather = |idx: &[usize], f: &dyn Fn(usize) -> f64| idx.iter().map(|&i| f(i)).collect::<Vec<f64>>();

            let mu0 = fit_predict(&specs.outcome, x, &obs0, &gather(&obs0, &|i| y[i]), Target::Continuous, tag(0), eval.view())?;
            let mu1 = fit_predict(&specs.outcome, x, &obs1, &gather(&obs1, &|i| y[i]), Target::Continuous, tag(1), eval.view())?;
            let e_obs = fit_predict(&specs.treatment, x, &obs, &gather(&obs, &|i| f64::from(a[i])), Target::Binary, tag(2), eval.view())?;
            let pi_rct = fit_predict(&specs.selection, x, &train, &gather(&train, &|i| f64::from(s[i] == 0)), Target::Binary, tag(3), eval.view())?;
            Ok(FoldFit { rows, mu0, mu1, e_obs, pi_rct })
        })
        .collect::<Result<_>>()?;

    let n = data.n();
    let mut out = NuisanceEstimates {
        mu0: Array1::zeros(n),
        mu1: Array1::zeros(n),
        e_obs: Array1::zeros(n),
        pi_rct: Array1::zeros(n),
        p_assign,
    };
    for f in fits {
        for (j, &i) in f.rows.iter().enumerate() {
            out.mu0[i] = f.mu0[j];
            out.mu1[i] = f.mu1[j];
            out.e_obs[i] = clip_probability(f.e_obs[j]);
            out.pi_rct[i] = clip_probability(f.pi_rct[j]);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::assign_folds;
    use crate::learners::EPS_CLIP;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};

    fn synthetic(n: usize, seed: u64, y_fn: impl Fn(f64, u8) -> f64) -> CombinedDataset {
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let x = Array2::from_shape_fn((n, 2), |_| r.random::<f64>() * 2.0 - 1.0);
        let s: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
        let a: Vec<u8> = (0..n).map(|_| r.random_bool(0.5) as u8).collect();
        let y: Vec<f64> = (0..n).map(|i| y_fn(x[[i, 0]], a[i]) + r.random::<f64>()).collect();
        CombinedDataset::new(x, a, y, s, vec!["x1".into(), "x2".into()]).unwrap()
    }

    #[test]
    fn rct_assignment_is_empirical_fraction() {
        let x = Array2::zeros((6, 1));
        let d = CombinedDataset::new(x, vec![1, 1, 1, 0, 0, 1], vec![0.0; 6], vec![0, 0, 0, 0, 1, 1], vec!["x".into()]).unwrap();
        assert_eq!(estimate_rct_assignment(&d).unwrap(), 0.75);
    }

    #[test]
    fn constant_outcome_gives_constant_surfaces() {
        let mut d = synthetic(120, 1, |_, _| 0.0);
        d = CombinedDataset::new(
            d.covariates().clone(), d.treatment().to_vec(), vec![3.5; 120], d.study().to_vec(), d.feature_names().to_vec(),
        ).unwrap();
        let folds = assign_folds(120, 3, 4).unwrap();
        for specs in [NuisanceSpecs::default(), NuisanceSpecs::all_gbt()] {
            let est = crossfit_nuisances(&d, &specs, &folds, 2).unwrap();
            assert!(est.mu0.iter().chain(est.mu1.iter()).all(|&m| (m - 3.5).abs() < 1e-6));
            assert!(est.e_obs.iter().chain(est.pi_rct.iter()).all(|&p| (EPS_CLIP..=1.0 - EPS_CLIP).contains(&p)));
        }
    }

    #[test]
    fn out_of_fold_predictions_ignore_own_fold() {
        let d = synthetic(30, 5, |x, a| x + f64::from(a));
        let folds = assign_folds(30, 3, 8).unwrap();
        let specs = NuisanceSpecs {
            outcome: LearnerSpec::linear(),
            treatment: LearnerSpec::logistic(),
            selection: LearnerSpec::logistic(),
        };
        let base = crossfit_nuisances(&d, &specs, &folds, 1).unwrap();
        let inside = folds.rows_in(0);
        let mut y = d.outcome().to_vec();
        let mut x = d.covariates().clone();
        for &i in &inside {
            y[i] += 100.0;
            x[[i, 1]] -= 7.0;
        }
        let perturbed = CombinedDataset::new(x, d.treatment().to_vec(), y, d.study().to_vec(), d.feature_names().to_vec()).unwrap();
        let other = crossfit_nuisances(&perturbed, &specs, &folds, 1).unwrap();
        // fold-0 predictions come from a model fit on the untouched complement
        let train = folds.rows_outside(0);
        let obs0: Vec<usize> = train.iter().copied().filter(|&i| d.study()[i] == 1 && d.treatment()[i] == 0).collect();
        let xt = d.covariates().select(Axis(0), &obs0);
        let yt: Vec<f64> = obs0.iter().map(|&i| d.outcome()[i]).collect();
        let model = fit(&specs.outcome, xt.view(), &yt, Target::Continuous, 0).unwrap();
        let pred = model.predict(perturbed.covariates().select(Axis(0), &inside).view()).unwrap();
        for (j, &i) in inside.iter().enumerate() {
            assert!((other.mu0[i] - pred[j]).abs() < 1e-12);
        }
        // rows outside fold 0 use models that saw the perturbation
        assert!(folds.rows_outside(0).iter().any(|&i| (other.mu0[i] - base.mu0[i]).abs() > 1e-6));
    }

    #[test]
    fn fold_complement_missing_arm_is_reported() {
        // only two observational treated rows, both in the same fold
        let x = Array2::from_shape_fn((9, 1), |(i, _)| i as f64);
        let s = vec![0, 0, 0, 0, 1, 1, 1, 1, 1];
        let a = vec![0, 1, 0, 1, 0, 0, 0, 1, 1];
        let d = CombinedDataset::new(x, a, vec![1.0; 9], s, vec!["x".into()]).unwrap();
        let mut hit = false;
        for seed in 0..50 {
            let folds = assign_folds(9, 3, seed).unwrap();
            if let Err(Error::FoldComplement { .. }) = crossfit_nuisances(&d, &NuisanceSpecs::default(), &folds, 0) {
                hit = true;
            }
        }
        assert!(hit);
    }

    struct Fixed;
    impl NuisanceOracle for Fixed {
        fn mu0(&self, x: ArrayView1<'_, f64>) -> f64 { x[0] }
        fn mu1(&self, x: ArrayView1<'_, f64>) -> f64 { 2.0 * x[0] }
        fn treatment_propensity(&self, x: ArrayView1<'_, f64>) -> f64 { 0.3 + 0.1 * x[0] }
        fn selection_propensity(&self, _: ArrayView1<'_, f64>) -> f64 { 0.999 }
        fn rct_assignment(&self) -> f64 { 0.5 }
    }

    #[test]
    fn oracle_path_reproduces_truth() {
        let d = synthetic(40, 3, |x, _| x);
        let est = oracle_nuisances(&d, &Fixed);
        for i in 0..40 {
            let x0 = d.covariates()[[i, 0]];
            assert!((est.mu1[i] - 2.0 * x0).abs() < 1e-12);
            assert!((est.e_obs[i] - (0.3 + 0.1 * x0)).abs() < 1e-12);
            assert_eq!(est.pi_rct[i], 1.0 - EPS_CLIP);
        }
    }
}
