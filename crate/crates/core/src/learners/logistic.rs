//! Logistic regression fit by damped Newton iterations.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, ArrayView2};

use super::linear::solve_psd;

#[derive(Debug, Clone)]
pub struct LogisticModel {
    intercept: f64,
    weights: Array1<f64>,
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// log(1 + exp(t)) without overflow.
fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

struct Problem<'a> {
    design: DMatrix<f64>,
    y: &'a [f64],
    penalty: f64,
}

impl Problem<'_> {
    fn objective(&self, beta: &DVector<f64>) -> f64 {
        let eta = &self.design * beta;
        let nll: f64 = eta
            .iter()
            .zip(self.y)
            .map(|(&t, &y)| softplus(t) - y * t)
            .sum();
        nll + 0.5 * self.penalty * beta.rows(1, beta.len() - 1).norm_squared()
    }

    fn gradient(&self, beta: &DVector<f64>) -> DVector<f64> {
        let eta = &self.design * beta;
        let resid = DVector::from_iterator(
            self.y.len(),
            eta.iter().zip(self.y).map(|(&t, &y)| sigmoid(t) - y),
        );
        let mut g = self.design.transpose() * resid;
        for j in 1..g.len() {
            g[j] += self.penalty * beta[j];
        }
        g
    }

    fn hessian(&self, beta: &DVector<f64>) -> DMatrix<f64> {
        let eta = &self.design * beta;
        let mut weighted = self.design.clone();
        for (i, &t) in eta.iter().enumerate() {
            let p = sigmoid(t);
            let w = p * (1.0 - p);
            weighted.row_mut(i).scale_mut(w);
        }
        let mut h = self.design.transpose() * weighted;
        for j in 1..h.nrows() {
            h[(j, j)] += self.penalty;
        }
        h
    }
}

impl LogisticModel {
    pub fn fit(x: ArrayView2<'_, f64>, y: &[f64], penalty: f64) -> Self {
        let (m, d) = x.dim();
        let rate = y.iter().sum::<f64>() / m as f64;
        if rate == 0.0 || rate == 1.0 {
            // Constant labels: the MLE sits at ±∞; report the observed rate.
            let intercept = if rate == 0.0 { -40.0 } else { 40.0 };
            return Self {
                intercept,
                weights: Array1::zeros(d),
            };
        }
        let design = DMatrix::from_fn(m, d + 1, |i, j| if j == 0 { 1.0 } else { x[[i, j - 1]] });
        let problem = Problem { design, y, penalty };
        let mut beta = DVector::zeros(d + 1);
        beta[0] = (rate / (1.0 - rate)).ln();
        let mut obj = problem.objective(&beta);
        for _ in 0..100 {
            let g = problem.gradient(&beta);
            if g.norm() < 1e-10 * (m as f64).max(1.0) {
                break;
            }
            let step = solve_psd(problem.hessian(&beta), &g, 0.0);
            let mut t = 1.0;
            let mut improved = false;
            for _ in 0..40 {
                let cand = &beta - t * &step;
                let cand_obj = problem.objective(&cand);
                if cand_obj <= obj {
                    beta = cand;
                    obj = cand_obj;
                    improved = true;
                    break;
                }
                t *= 0.5;
            }
            if !improved {
                break;
            }
        }
        Self {
            intercept: beta[0],
            weights: Array1::from_iter(beta.iter().skip(1).copied()),
        }
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
        (x.dot(&self.weights) + self.intercept).mapv(sigmoid)
    }

    /// Euclidean norm of the (penalized) negative log-likelihood gradient at
    /// the fitted coefficients, intercept first.
    pub fn gradient_norm(&self, x: ArrayView2<'_, f64>, y: &[f64], penalty: f64) -> f64 {
        let p = self.predict(x);
        let mut g = vec![0.0; self.weights.len() + 1];
        for (i, (&pi, &yi)) in p.iter().zip(y).enumerate() {
            let r = pi - yi;
            g[0] += r;
            for j in 0..self.weights.len() {
                g[j + 1] += r * x[[i, j]];
            }
        }
        for j in 0..self.weights.len() {
            g[j + 1] += penalty * self.weights[j];
        }
        g.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};

    #[test]
    fn constant_features_balanced_labels_give_half() {
        let x = Array2::from_elem((40, 2), 1.5);
        let y: Vec<f64> = (0..40).map(|i| (i % 2) as f64).collect();
        let model = LogisticModel::fit(x.view(), &y, 0.0);
        for p in model.predict(x.view()) {
            assert!((p - 0.5).abs() < 1e-6);
        }
    }

    #[test]
    fn first_order_optimality() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let x = Array2::from_shape_fn((400, 3), |_| rng.random::<f64>() * 2.0 - 1.0);
        let y: Vec<f64> = (0..400)
            .map(|i| {
                let t = 0.3 + 1.2 * x[[i, 0]] - 0.7 * x[[i, 2]];
                f64::from(rng.random::<f64>() < sigmoid(t))
            })
            .collect();
        for penalty in [0.0, 2.0] {
            let model = LogisticModel::fit(x.view(), &y, penalty);
            assert!(model.gradient_norm(x.view(), &y, penalty) < 1e-6);
        }
    }

    #[test]
    fn constant_labels_are_not_an_error() {
        let x = Array2::from_shape_fn((10, 1), |(i, _)| i as f64);
        let model = LogisticModel::fit(x.view(), &[1.0; 10], 0.0);
        assert!(model.predict(x.view()).iter().all(|&p| p > 0.999));
    }
}
