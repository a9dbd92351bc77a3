//! Kernels on covariate space, Gram assembly and covariate standardization.
//!
//! Polynomial kernels have a finite explicit feature map, exposed through
//! [`Kernel::feature_map`] so quadratic forms can be evaluated without the
//! `n × n` Gram matrix when the map is narrower than the sample.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use ndarray::parallel::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    Polynomial,
    Rbf,
    Laplacian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScaleRule {
    /// `1 / d` for `d` covariates.
    InverseDimension,
    /// `1 / (2 median²)` of pairwise distances (Euclidean for rbf, L1 for
    /// laplacian).
    MedianHeuristic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum KernelScale {
    Fixed(f64),
    Rule(ScaleRule),
}

/// Kernel configuration; the scale may be a rule resolved against data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KernelSpec {
    pub kind: KernelKind,
    pub degree: u32,
    pub scale: KernelScale,
    pub offset: f64,
}

impl Default for KernelSpec {
    fn default() -> Self {
        Self {
            kind: KernelKind::Polynomial,
            degree: 3,
            scale: KernelScale::Rule(ScaleRule::InverseDimension),
            offset: 1.0,
        }
    }
}

impl KernelSpec {
    pub fn polynomial(degree: u32, scale: f64, offset: f64) -> Self {
        Self { kind: KernelKind::Polynomial, degree, scale: KernelScale::Fixed(scale), offset }
    }

    pub fn rbf(scale: f64) -> Self {
        Self { kind: KernelKind::Rbf, scale: KernelScale::Fixed(scale), ..Self::default() }
    }

    pub fn laplacian(scale: f64) -> Self {
        Self { kind: KernelKind::Laplacian, scale: KernelScale::Fixed(scale), ..Self::default() }
    }

    /// Fixes the scale using the (already standardized) training covariates.
    pub fn resolve(&self, x: ArrayView2<'_, f64>) -> Result<Kernel> {
        let scale = match self.scale {
            KernelScale::Fixed(s) => s,
            KernelScale::Rule(ScaleRule::InverseDimension) => 1.0 / x.ncols().max(1) as f64,
            KernelScale::Rule(ScaleRule::MedianHeuristic) => {
                let l1 = self.kind == KernelKind::Laplacian;
                let med = median_pairwise_distance(x, l1);
                if !(med > 0.0) {
                    return Err(Error::InvalidParameter("median pairwise distance is zero".into()));
                }
                1.0 / (2.0 * med * med)
            }
        };
        Kernel::new(self.kind, self.degree, scale, self.offset)
    }
}

fn median_pairwise_distance(x: ArrayView2<'_, f64>, l1: bool) -> f64 {
    const MAX_ROWS: usize = 1000;
    let n = x.nrows();
    let rows: Vec<usize> = if n <= MAX_ROWS {
        (0..n).collect()
    } else {
        (0..MAX_ROWS).map(|k| k * n / MAX_ROWS).collect()
    };
    let mut dists = Vec::with_capacity(rows.len() * rows.len() / 2);
    for (a, &i) in rows.iter().enumerate() {
        for &j in &rows[a + 1..] {
            let (u, v) = (x.row(i), x.row(j));
            dists.push(if l1 { l1_dist(u, v) } else { sq_dist(u, v).sqrt() });
        }
    }
    if dists.is_empty() {
        return 0.0;
    }
    let mid = dists.len() / 2;
    let (_, m, _) = dists.select_nth_unstable_by(mid, f64::total_cmp);
    *m
}

fn sq_dist(u: ArrayView1<'_, f64>, v: ArrayView1<'_, f64>) -> f64 {
    u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum()
}

fn l1_dist(u: ArrayView1<'_, f64>, v: ArrayView1<'_, f64>) -> f64 {
    u.iter().zip(v).map(|(a, b)| (a - b).abs()).sum()
}

/// A kernel with every parameter fixed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Kernel {
    pub kind: KernelKind,
    pub degree: u32,
    pub scale: f64,
    pub offset: f64,
}

impl Kernel {
    pub fn new(kind: KernelKind, degree: u32, scale: f64, offset: f64) -> Result<Self> {
        if kind == KernelKind::Polynomial && degree < 1 {
            return Err(Error::InvalidParameter("polynomial degree must be >= 1".into()));
        }
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(Error::InvalidParameter(format!("kernel scale must be positive, got {scale}")));
        }
        if !offset.is_finite() {
            return Err(Error::InvalidParameter("kernel offset must be finite".into()));
        }
        Ok(Self { kind, degree, scale, offset })
    }

    pub fn eval(&self, x: ArrayView1<'_, f64>, y: ArrayView1<'_, f64>) -> Result<f64> {
        if x.len() != y.len() {
            return Err(Error::DimensionMismatch { expected: x.len(), got: y.len() });
        }
        Ok(self.eval_unchecked(x, y))
    }

    fn eval_unchecked(&self, x: ArrayView1<'_, f64>, y: ArrayView1<'_, f64>) -> f64 {
        match self.kind {
            KernelKind::Polynomial => self.from_inner(x.dot(&y)),
            KernelKind::Rbf => (-self.scale * sq_dist(x, y)).exp(),
            KernelKind::Laplacian => (-self.scale * l1_dist(x, y)).exp(),
        }
    }

    fn from_inner(&self, inner: f64) -> f64 {
        (self.scale * inner + self.offset).powi(self.degree as i32)
    }

    /// `K[i, j] = k(x_i, q_j)`.
    pub fn cross(&self, x: ArrayView2<'_, f64>, q: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if x.ncols() != q.ncols() {
            return Err(Error::DimensionMismatch { expected: x.ncols(), got: q.ncols() });
        }
        if self.kind == KernelKind::Polynomial {
            let mut k = x.dot(&q.t());
            k.mapv_inplace(|v| self.from_inner(v));
            return Ok(k);
        }
        let mut k = Array2::zeros((x.nrows(), q.nrows()));
        k.axis_iter_mut(Axis(0))
            .into_par_iter()
            .enumerate()
            .for_each(|(i, mut row)| {
                for (j, out) in row.iter_mut().enumerate() {
                    *out = self.eval_unchecked(x.row(i), q.row(j));
                }
            });
        Ok(k)
    }

    /// Symmetric Gram matrix; the lower triangle mirrors the upper exactly.
    pub fn gram(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let n = x.nrows();
        let mut k = if self.kind == KernelKind::Polynomial {
            let mut k = x.dot(&x.t());
            k.mapv_inplace(|v| self.from_inner(v));
            k
        } else {
            let mut k = Array2::zeros((n, n));
            k.axis_iter_mut(Axis(0))
                .into_par_iter()
                .enumerate()
                .for_each(|(i, mut row)| {
                    for j in i..n {
                        row[j] = self.eval_unchecked(x.row(i), x.row(j));
                    }
                });
            k
        };
        for i in 0..n {
            for j in 0..i {
                k[[i, j]] = k[[j, i]];
            }
        }
        k
    }

    /// Width of the explicit polynomial feature map on `d` inputs, if one
    /// exists (polynomial kernel with non-negative offset).
    pub fn feature_dim(&self, d: usize) -> Option<usize> {
        if self.kind != KernelKind::Polynomial || self.offset < 0.0 {
            return None;
        }
        let p = self.degree as usize;
        // C(d + p, p), saturating
        let mut c: usize = 1;
        for i in 1..=p {
            c = c.checked_mul(d + i)? / i;
        }
        Some(c)
    }

    /// Explicit features `Φ` with `Φ Φᵀ` equal to the Gram matrix.
    pub fn feature_map(&self, x: ArrayView2<'_, f64>) -> Option<Array2<f64>> {
        let dim = self.feature_dim(x.ncols())?;
        let (n, d) = x.dim();
        let p = self.degree as usize;
        let mut out = Array2::zeros((n, dim));
        let mut col = 0;
        // Monomials as non-decreasing index tuples of length 0..=p.
        let mut stack: Vec<(Vec<usize>, Array1<f64>)> = vec![(Vec::new(), Array1::ones(n))];
        while let Some((idx, values)) = stack.pop() {
            let coef = self.monomial_weight(&idx, p);
            Zip::from(out.column_mut(col)).and(&values).for_each(|o, &v| *o = coef * v);
            col += 1;
            if idx.len() < p {
                let start = idx.last().copied().unwrap_or(0);
                for j in (start..d).rev() {
                    let mut next = idx.clone();
                    next.push(j);
                    stack.push((next, &values * &x.column(j)));
                }
            }
        }
        debug_assert_eq!(col, dim);
        Some(out)
    }

    fn monomial_weight(&self, idx: &[usize], p: usize) -> f64 {
        let k = idx.len();
        let mut multinomial = factorial(p) / factorial(p - k);
        let mut run = 1;
        for w in 1..=k {
            if w < k && idx[w] == idx[w - 1] {
                run += 1;
            } else {
                multinomial /= factorial(run);
                run = 1;
            }
        }
        (multinomial * self.offset.powi((p - k) as i32) * self.scale.powi(k as i32)).sqrt()
    }
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|v| v as f64).product()
}

/// Convenience: evaluates a resolved spec on two points.
pub fn kernel_eval(kernel: &Kernel, x: ArrayView1<'_, f64>, y: ArrayView1<'_, f64>) -> Result<f64> {
    kernel.eval(x, y)
}

pub fn gram_matrix(kernel: &Kernel, x: ArrayView2<'_, f64>) -> Array2<f64> {
    kernel.gram(x)
}

/// Per-column z-scoring fitted on one sample and reusable on query points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Array1<f64>,
    pub std: Array1<f64>,
}

impl Standardizer {
    /// Constant columns keep unit scale.
    pub fn fit(x: ArrayView2<'_, f64>) -> Self {
        let mean = x.mean_axis(Axis(0)).unwrap_or_else(|| Array1::zeros(x.ncols()));
        let std = if x.nrows() > 0 {
            x.std_axis(Axis(0), 0.0).mapv(|s| if s > 1e-12 { s } else { 1.0 })
        } else {
            Array1::ones(x.ncols())
        };
        Self { mean, std }
    }

    pub fn transform(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        (&x - &self.mean) / &self.std
    }
}
