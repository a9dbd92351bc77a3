//! Ridge-penalized least squares with an unpenalized intercept.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, ArrayView2, Axis};

#[derive(Debug, Clone)]
pub struct LinearModel {
    intercept: f64,
    weights: Array1<f64>,
}

/// Solves `(A + penalty·I) w = b` for symmetric PSD `A`, treating directions
/// with negligible curvature as a pseudo-inverse would.
pub(crate) fn solve_psd(a: DMatrix<f64>, b: &DVector<f64>, penalty: f64) -> DVector<f64> {
    let eig = a.symmetric_eigen();
    let top = eig.eigenvalues.iter().fold(0.0_f64, |m, &v| m.max(v.abs()));
    let cutoff = top * 1e-12 * eig.eigenvalues.len().max(1) as f64;
    let proj = eig.eigenvectors.transpose() * b;
    let scaled = DVector::from_iterator(
        proj.len(),
        proj.iter().zip(eig.eigenvalues.iter()).map(|(&p, &l)| {
            let denom = l + penalty;
            if l <= cutoff && penalty == 0.0 {
                0.0
            } else {
                p / denom
            }
        }),
    );
    eig.eigenvectors * scaled
}

impl LinearModel {
    pub fn fit(x: ArrayView2<'_, f64>, y: &[f64], penalty: f64) -> Self {
        let (m, d) = x.dim();
        let x_mean = x.mean_axis(Axis(0)).expect("m >= 2");
        let y_mean = y.iter().sum::<f64>() / m as f64;
        if d == 0 {
            return Self {
                intercept: y_mean,
                weights: Array1::zeros(0),
            };
        }
        let xc = DMatrix::from_fn(m, d, |i, j| x[[i, j]] - x_mean[j]);
        let yc = DVector::from_iterator(m, y.iter().map(|v| v - y_mean));
        let gram = xc.transpose() * &xc;
        let rhs = xc.transpose() * yc;
        let w = solve_psd(gram, &rhs, penalty);
        let weights = Array1::from_iter(w.iter().copied());
        let intercept = y_mean - x_mean.dot(&weights);
        Self { intercept, weights }
    }

    pub fn n_features(&self) -> usize {
        self.weights.len()
    }

    pub fn intercept(&self) -> f64 {
        self.intercept
    }

    pub fn weights(&self) -> &Array1<f64> {
        &self.weights
    }

    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Array1<f64> {
        x.dot(&self.weights) + self.intercept
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};

    #[test]
    fn interpolates_exact_line() {
        let x = Array2::from_shape_fn((25, 1), |(i, _)| i as f64 * 0.37 - 3.0);
        let y: Vec<f64> = x.column(0).iter().map(|v| 2.0 * v).collect();
        let model = LinearModel::fit(x.view(), &y, 0.0);
        assert!((model.weights()[0] - 2.0).abs() < 1e-10);
        for (p, t) in model.predict(x.view()).iter().zip(&y) {
            assert!((p - t).abs() < 1e-10);
        }
    }

    #[test]
    fn huge_penalty_gives_intercept_only() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let x = Array2::from_shape_fn((100, 3), |_| rng.random::<f64>());
        let y: Vec<f64> = (0..100).map(|i| x[[i, 0]] * 5.0 + x[[i, 2]] + rng.random::<f64>()).collect();
        let mean = y.iter().sum::<f64>() / 100.0;
        let model = LinearModel::fit(x.view(), &y, 1e8);
        for p in model.predict(x.view()) {
            assert!((p - mean).abs() < 1e-3);
        }
    }

    #[test]
    fn collinear_columns_are_handled() {
        let x = Array2::from_shape_fn((20, 2), |(i, _)| i as f64);
        let y: Vec<f64> = (0..20).map(|i| 1.0 + 3.0 * i as f64).collect();
        let model = LinearModel::fit(x.view(), &y, 0.0);
        for (p, t) in model.predict(x.view()).iter().zip(&y) {
            assert!((p - t).abs() < 1e-8);
        }
    }
}
