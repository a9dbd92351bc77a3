//! Supervised learners used as nuisance-function estimators.
//!
//! Three model families are provided: ridge-penalized linear regression,
//! penalized logistic regression fit by Newton's method, and gradient-boosted
//! depth-limited regression trees (squared-error or log-loss). Models are
//! deterministic given their seed and immutable once fitted.

mod gbt;
mod linear;
mod logistic;

use ndarray::{Array1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use gbt::GbtModel;
pub use linear::LinearModel;
pub use logistic::LogisticModel;

/// Lower/upper clipping margin applied to every probability prediction.
pub const EPS_CLIP: f64 = 0.01;

/// Clips a probability into `[EPS_CLIP, 1 - EPS_CLIP]`.
pub fn clip_probability(p: f64) -> f64 {
    p.clamp(EPS_CLIP, 1.0 - EPS_CLIP)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LearnerKind {
    LinearRegression,
    LogisticRegression,
    GradientBoostedTrees,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaxFeatures {
    Sqrt,
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GbtParams {
    pub learning_rate: f64,
    pub n_estimators: usize,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    pub min_samples_split: usize,
    pub max_features: MaxFeatures,
}

impl Default for GbtParams {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            n_estimators: 50,
            max_depth: 2,
            min_samples_leaf: 50,
            min_samples_split: 50,
            max_features: MaxFeatures::Sqrt,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearnerSpec {
    pub kind: LearnerKind,
    pub gbt_params: GbtParams,
    pub ridge_penalty: f64,
}

impl Default for LearnerSpec {
    fn default() -> Self {
        Self::linear()
    }
}

impl LearnerSpec {
    pub fn linear() -> Self {
        Self {
            kind: LearnerKind::LinearRegression,
            gbt_params: GbtParams::default(),
            ridge_penalty: 0.0,
        }
    }

    pub fn logistic() -> Self {
        Self {
            kind: LearnerKind::LogisticRegression,
            ..Self::linear()
        }
    }

    pub fn gbt() -> Self {
        Self {
            kind: LearnerKind::GradientBoostedTrees,
            ..Self::linear()
        }
    }

    pub fn with_gbt_params(mut self, params: GbtParams) -> Self {
        self.gbt_params = params;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let g = &self.gbt_params;
        let bad = |msg: &str| Err(Error::InvalidParameter(msg.to_string()));
        if !(self.ridge_penalty >= 0.0) || !self.ridge_penalty.is_finite() {
            return bad("ridge_penalty must be a finite non-negative number");
        }
        if self.kind == LearnerKind::GradientBoostedTrees {
            if !(g.learning_rate > 0.0) || !g.learning_rate.is_finite() {
                return bad("learning_rate must be positive");
            }
            if g.n_estimators < 1 {
                return bad("n_estimators must be >= 1");
            }
            if g.max_depth < 1 {
                return bad("max_depth must be >= 1");
            }
            if g.min_samples_leaf < 1 || g.min_samples_split < 1 {
                return bad("min_samples_leaf and min_samples_split must be >= 1");
            }
        }
        Ok(())
    }
}

/// Nature of the response being fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    Continuous,
    Binary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PredictMode {
    Mean,
    Probability,
}

#[derive(Debug, Clone)]
pub enum FittedLearner {
    Linear(LinearModel),
    Logistic(LogisticModel),
    Gbt(GbtModel),
}

impl FittedLearner {
    pub fn mode(&self) -> PredictMode {
        match self {
            Self::Linear(_) => PredictMode::Mean,
            Self::Logistic(_) => PredictMode::Probability,
            Self::Gbt(m) if m.is_classifier() => PredictMode::Probability,
            Self::Gbt(_) => PredictMode::Mean,
        }
    }

    pub fn n_features(&self) -> usize {
        match self {
            Self::Linear(m) => m.n_features(),
            Self::Logistic(m) => m.n_features(),
            Self::Gbt(m) => m.n_features(),
        }
    }

    /// Raw predictions; probabilities are not clipped.
    pub fn predict_unclipped(&self, x: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        if x.ncols() != self.n_features() {
            return Err(Error::DimensionMismatch {
                expected: self.n_features(),
                got: x.ncols(),
            });
        }
        Ok(match self {
            Self::Linear(m) => m.predict(x),
            Self::Logistic(m) => m.predict(x),
            Self::Gbt(m) => m.predict(x),
        })
    }

    /// Predictions with probability outputs clipped to `[EPS_CLIP, 1 - EPS_CLIP]`.
    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        let raw = self.predict_unclipped(x)?;
        Ok(match self.mode() {
            PredictMode::Mean => raw,
            PredictMode::Probability => raw.mapv(clip_probability),
        })
    }
}

/// Fits the learner described by `spec` to `(x, y)`.
pub fn fit(
    spec: &LearnerSpec,
    x: ArrayView2<'_, f64>,
    y: &[f64],
    target: Target,
    seed: u64,
) -> Result<FittedLearner> {
    spec.validate()?;
    let m = x.nrows();
    if y.len() != m {
        return Err(Error::DimensionMismatch { expected: m, got: y.len() });
    }
    if m < 2 {
        return Err(Error::TooFewRows { needed: 2, got: m });
    }
    if let Some(i) = y.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { row: i, column: "target".into() });
    }
    let binary = y.iter().all(|&v| v == 0.0 || v == 1.0);
    if target == Target::Binary && !binary {
        let i = y.iter().position(|&v| v != 0.0 && v != 1.0).unwrap_or(0);
        return Err(Error::NonBinary { field: "target", row: i, value: y[i] });
    }
    Ok(match spec.kind {
        LearnerKind::LinearRegression => {
            FittedLearner::Linear(LinearModel::fit(x, y, spec.ridge_penalty))
        }
        LearnerKind::LogisticRegression => {
            if target != Target::Binary {
                return Err(Error::InvalidParameter(
                    "logistic regression requires a binary target".into(),
                ));
            }
            FittedLearner::Logistic(LogisticModel::fit(x, y, spec.ridge_penalty))
        }
        LearnerKind::GradientBoostedTrees => FittedLearner::Gbt(GbtModel::fit(
            &spec.gbt_params,
            x,
            y,
            target == Target::Binary,
            seed,
        )),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    #[test]
    fn probability_outputs_are_clipped() {
        assert_eq!(clip_probability(1.0), 1.0 - EPS_CLIP);
        assert_eq!(clip_probability(0.0), EPS_CLIP);
        assert_eq!(clip_probability(0.3), 0.3);
        // separable data drives raw probabilities to the boundary
        let x = Array2::from_shape_fn((200, 1), |(i, _)| i as f64 - 99.5);
        let y: Vec<f64> = (0..200).map(|i| f64::from(i >= 100)).collect();
        let model = fit(&LearnerSpec::gbt(), x.view(), &y, Target::Binary, 1).unwrap();
        let p = model.predict(x.view()).unwrap();
        assert!(p.iter().all(|&v| (EPS_CLIP..=1.0 - EPS_CLIP).contains(&v)));
    }

    #[test]
    fn empty_prediction_and_dimension_check() {
        let x = Array2::from_shape_fn((10, 2), |(i, j)| (i * (j + 1)) as f64);
        let y: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let model = fit(&LearnerSpec::linear(), x.view(), &y, Target::Continuous, 0).unwrap();
        assert_eq!(model.predict(Array2::zeros((0, 2)).view()).unwrap().len(), 0);
        assert!(matches!(
            model.predict(Array2::zeros((3, 3)).view()),
            Err(Error::DimensionMismatch { expected: 2, got: 3 })
        ));
    }

    #[test]
    fn rejects_bad_inputs() {
        let x = Array2::<f64>::zeros((1, 1));
        assert!(matches!(
            fit(&LearnerSpec::linear(), x.view(), &[1.0], Target::Continuous, 0),
            Err(Error::TooFewRows { .. })
        ));
        let x = Array2::<f64>::zeros((3, 1));
        assert!(fit(&LearnerSpec::logistic(), x.view(), &[0.0, 2.0, 1.0], Target::Binary, 0).is_err());
        let mut spec = LearnerSpec::gbt();
        spec.gbt_params.learning_rate = 0.0;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn spec_round_trips_through_json() {
        let spec = LearnerSpec::gbt();
        let json = serde_json::to_string(&spec).unwrap();
        assert!(json.contains("gradient-boosted-trees"));
        let back: LearnerSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, spec);
    }
}
