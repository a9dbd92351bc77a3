//! Kernel maximum-moment-restriction test.
//!
//! The statistic is the degenerate U-statistic
//! `M² = 1/(n(n-1)) Σ_{i≠j} ψᵢ K(xᵢ,xⱼ) ψⱼ` (inner products `ψᵢᵀψⱼ` for
//! outcome-pair signals), reported as `n·M²`. Its null distribution is
//! simulated by a multinomial bootstrap that reweights rows around one and
//! keeps the nuisance estimates fixed.
//!
//! Quadratic forms go through [`GramOperator`], which either holds the dense
//! Gram matrix or, for polynomial kernels, the explicit feature map when it
//! has fewer columns than there are rows.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use ndarray::parallel::prelude::*;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::CombinedDataset;
use crate::error::{Error, Result};
use crate::kernels::{Kernel, KernelSpec, Standardizer};
use crate::nuisance::NuisanceEstimates;
use crate::rng;
use crate::signals::{contrast_signals, outcome_pair_signal_difference, SignalKind, SignalVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MmrMode {
    /// Scalar CATE-contrast signal difference.
    Contrast,
    /// Vector of per-arm potential-outcome signal differences.
    Absolute,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MmrTestResult {
    pub statistic: f64,
    pub u_stat: f64,
    pub p_value: f64,
    pub alpha: f64,
    pub reject: bool,
    #[serde(rename = "B")]
    pub b: usize,
    pub seed: u64,
    pub kernel: Kernel,
    pub mode: MmrMode,
    pub bootstrap_samples: Vec<f64>,
}

/// Kernel matrix in dense or factored form.
#[derive(Debug, Clone)]
pub enum GramOperator {
    Dense(Array2<f64>),
    /// Rows `φ(xᵢ)` with `K = ΦΦᵀ`.
    Features(Array2<f64>),
}

impl GramOperator {
    /// Picks the cheaper representation for `kernel` on `x`.
    pub fn build(kernel: &Kernel, x: ArrayView2<'_, f64>) -> Self {
        match kernel.feature_dim(x.ncols()) {
            Some(dim) if dim < x.nrows() => {
                Self::Features(kernel.feature_map(x).expect("feature map exists when dim is known"))
            }
            _ => Self::Dense(kernel.gram(x)),
        }
    }

    /// Bytes needed for the representation chosen by [`GramOperator::build`].
    pub fn planned_bytes(kernel: &Kernel, n: usize, d: usize) -> f64 {
        match kernel.feature_dim(d) {
            Some(dim) if dim < n => (n * dim) as f64 * 8.0,
            _ => (n as f64) * (n as f64) * 8.0,
        }
    }

    pub fn n(&self) -> usize {
        match self {
            Self::Dense(k) | Self::Features(k) => k.nrows(),
        }
    }

    fn diag(&self) -> Array1<f64> {
        match self {
            Self::Dense(k) => k.diag().to_owned(),
            Self::Features(phi) => phi.map_axis(Axis(1), |r| r.dot(&r)),
        }
    }

    /// `Σ_{i≠j} vᵢ K_ij vⱼ` for every column `v` of `v_cols`.
    pub fn offdiag_forms(&self, v_cols: ArrayView2<'_, f64>) -> Array1<f64> {
        let diag = self.diag();
        let full = match self {
            Self::Dense(k) => {
                let kv = k.dot(&v_cols);
                let mut out = Array1::zeros(v_cols.ncols());
                Zip::from(&mut out)
                    .and(v_cols.axis_iter(Axis(1)))
                    .and(kv.axis_iter(Axis(1)))
                    .for_each(|o, v, kv| *o = v.dot(&kv));
                out
            }
            Self::Features(phi) => {
                let proj = phi.t().dot(&v_cols);
                proj.map_axis(Axis(0), |c| c.dot(&c))
            }
        };
        let mut out = full;
        Zip::from(&mut out)
            .and(v_cols.axis_iter(Axis(1)))
            .for_each(|o, v| *o -= v.iter().zip(&diag).map(|(x, d)| d * x * x).sum::<f64>());
        out
    }
}

fn check_square(psi: &SignalVector, k: ArrayView2<'_, f64>) -> Result<usize> {
    let n = psi.len();
    if n < 2 {
        return Err(Error::TooFewRows { needed: 2, got: n });
    }
    if k.nrows() != n || k.ncols() != n {
        return Err(Error::DimensionMismatch { expected: n, got: k.nrows() });
    }
    Ok(n)
}

fn statistic_from_op(psi: &SignalVector, op: &GramOperator) -> (f64, f64) {
    let n = psi.len() as f64;
    let q: f64 = op.offdiag_forms(psi.matrix()).sum();
    let u = q / (n * (n - 1.0));
    (u, n * u)
}

/// `(M², n·M²)` for a contrast signal and Gram matrix.
pub fn mmr_statistic(psi: &SignalVector, k: ArrayView2<'_, f64>) -> Result<(f64, f64)> {
    psi.scalar()?;
    check_square(psi, k)?;
    Ok(statistic_from_op(psi, &GramOperator::Dense(k.to_owned())))
}

/// `(M², n·M²)` for an outcome-pair signal and Gram matrix.
pub fn mmr_statistic_vector(psi: &SignalVector, k: ArrayView2<'_, f64>) -> Result<(f64, f64)> {
    if psi.kind() != SignalKind::OutcomePair {
        return Err(Error::SignalKind("expected an outcome-pair signal".into()));
    }
    check_square(psi, k)?;
    Ok(statistic_from_op(psi, &GramOperator::Dense(k.to_owned())))
}

/// Multinomial(n; 1/n) counts for bootstrap draw `draw`.
pub fn bootstrap_weights(n: usize, seed: u64, draw: usize) -> Vec<u32> {
    let mut r = rng::from_path(seed, &[rng::TAG_BOOTSTRAP, draw as u64]);
    let mut w = vec![0u32; n];
    for _ in 0..n {
        w[r.random_range(0..n)] += 1;
    }
    w
}

/// Bootstrap null samples `(1/n) Σ_{i≠j} (wᵢ-1)(wⱼ-1) ψᵢᵀψⱼ K_ij`.
pub fn bootstrap_null_with(psi: &SignalVector, op: &GramOperator, b: usize, seed: u64) -> Result<Vec<f64>> {
    let n = psi.len();
    if n < 2 {
        return Err(Error::TooFewRows { needed: 2, got: n });
    }
    if b == 0 {
        return Err(Error::InvalidParameter("bootstrap size B must be >= 1".into()));
    }
    if op.n() != n {
        return Err(Error::DimensionMismatch { expected: n, got: op.n() });
    }
    let m = psi.matrix();
    let c = m.ncols();
    let mut v = Array2::zeros((n, b * c));
    v.axis_chunks_iter_mut(Axis(1), c)
        .into_par_iter()
        .enumerate()
        .for_each(|(k, mut block)| {
            let w = bootstrap_weights(n, seed, k);
            for i in 0..n {
                let centered = f64::from(w[i]) - 1.0;
                for j in 0..c {
                    block[[i, j]] = centered * m[[i, j]];
                }
            }
        });
    let forms = op.offdiag_forms(v.view());
    Ok(forms
        .exact_chunks(c)
        .into_iter()
        .map(|chunk| chunk.sum() / n as f64)
        .collect())
}

/// Bootstrap null samples against an explicit Gram matrix.
pub fn bootstrap_null(
    psi: &SignalVector,
    k: ArrayView2<'_, f64>,
    b: usize,
    seed: u64,
    vector_mode: bool,
) -> Result<Vec<f64>> {
    let expected = if vector_mode { SignalKind::OutcomePair } else { SignalKind::Contrast };
    if psi.kind() != expected {
        return Err(Error::SignalKind("signal kind does not match bootstrap mode".into()));
    }
    check_square(psi, k)?;
    bootstrap_null_with(psi, &GramOperator::Dense(k.to_owned()), b, seed)
}

/// `(#{k: statistic ≤ boot_k} + 1) / (B + 1)`.
pub fn p_value(statistic: f64, boots: &[f64]) -> Result<f64> {
    if boots.is_empty() {
        return Err(Error::InvalidParameter("no bootstrap samples".into()));
    }
    let exceed = boots.iter().filter(|&&b| statistic <= b).count();
    Ok((exceed + 1) as f64 / (boots.len() + 1) as f64)
}

/// Test settings shared by every MMR run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MmrConfig {
    pub kernel: KernelSpec,
    #[serde(rename = "B")]
    pub b: usize,
    pub alpha: f64,
}

impl Default for MmrConfig {
    fn default() -> Self {
        Self { kernel: KernelSpec::default(), b: 100, alpha: 0.05 }
    }
}

/// Runs the test on given signals and (already standardized) covariates.
pub fn run_on_signals(
    psi: &SignalVector,
    x: ArrayView2<'_, f64>,
    config: &MmrConfig,
    seed: u64,
) -> Result<MmrTestResult> {
    if x.nrows() != psi.len() {
        return Err(Error::DimensionMismatch { expected: psi.len(), got: x.nrows() });
    }
    if !(config.alpha > 0.0 && config.alpha < 1.0) {
        return Err(Error::InvalidParameter(format!("alpha must lie in (0,1), got {}", config.alpha)));
    }
    if psi.len() < 2 {
        return Err(Error::TooFewRows { needed: 2, got: psi.len() });
    }
    if let Some(i) = psi.matrix().iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { row: i / psi.matrix().ncols(), column: "signal".into() });
    }
    let kernel = config.kernel.resolve(x)?;
    let op = GramOperator::build(&kernel, x);
    let (u_stat, statistic) = statistic_from_op(psi, &op);
    let boots = bootstrap_null_with(psi, &op, config.b, seed)?;
    let p = p_value(statistic, &boots)?;
    Ok(MmrTestResult {
        statistic,
        u_stat,
        p_value: p,
        alpha: config.alpha,
        reject: p < config.alpha,
        b: config.b,
        seed,
        kernel,
        mode: match psi.kind() {
            SignalKind::Contrast => MmrMode::Contrast,
            SignalKind::OutcomePair => MmrMode::Absolute,
        },
        bootstrap_samples: boots,
    })
}

/// Signals → standardized Gram → statistic → bootstrap → decision.
pub fn run_mmr_test(
    data: &CombinedDataset,
    nuis: &NuisanceEstimates,
    config: &MmrConfig,
    seed: u64,
    mode: MmrMode,
) -> Result<MmrTestResult> {
    let psi = match mode {
        MmrMode::Contrast => contrast_signals(data, nuis)?,
        MmrMode::Absolute => outcome_pair_signal_difference(data, nuis)?,
    };
    let z = Standardizer::fit(data.covariates().view()).transform(data.covariates().view());
    run_on_signals(&psi, z.view(), config, seed)
}

/// Witness values on a query grid, scaled to unit root-mean-square.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WitnessEvaluation {
    pub query_points: Array2<f64>,
    pub values: Array1<f64>,
    pub normalizer: f64,
}

/// Evaluates `q ↦ C·(1/n)Σᵢ ψᵢ k(xᵢ, q)` with `C` chosen so the values have
/// unit root-mean-square over the grid.
pub fn witness_eval(
    psi: &SignalVector,
    train_x: ArrayView2<'_, f64>,
    kernel: &Kernel,
    query_points: ArrayView2<'_, f64>,
) -> Result<WitnessEvaluation> {
    let psi = psi.scalar()?;
    if train_x.nrows() != psi.len() {
        return Err(Error::DimensionMismatch { expected: psi.len(), got: train_x.nrows() });
    }
    if query_points.nrows() == 0 {
        return Err(Error::InvalidParameter("empty witness query grid".into()));
    }
    let raw = kernel.cross(query_points, train_x)?.dot(&psi) / psi.len() as f64;
    let rms = (raw.mapv(|v| v * v).sum() / raw.len() as f64).sqrt();
    if !(rms > 0.0) || !rms.is_finite() {
        return Err(Error::ZeroWitness);
    }
    let normalizer = 1.0 / rms;
    Ok(WitnessEvaluation {
        query_points: query_points.to_owned(),
        values: raw * normalizer,
        normalizer,
    })
}

/// One axis of a two-dimensional projection grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridAxis {
    pub column: usize,
    pub lo: f64,
    pub hi: f64,
}

/// `resolution²` points varying two columns over their ranges (first axis
/// slowest) with every other column held at its median in `x`.
pub fn projection_grid(x: ArrayView2<'_, f64>, first: GridAxis, second: GridAxis, resolution: usize) -> Result<Array2<f64>> {
    let d = x.ncols();
    for axis in [first, second] {
        if axis.column >= d {
            return Err(Error::DimensionMismatch { expected: d, got: axis.column });
        }
    }
    if resolution < 2 {
        return Err(Error::InvalidParameter("grid resolution must be >= 2".into()));
    }
    let medians = column_medians(x);
    let step = |a: &GridAxis, k: usize| a.lo + (a.hi - a.lo) * k as f64 / (resolution - 1) as f64;
    let mut grid = Array2::zeros((resolution * resolution, d));
    for (r, mut row) in grid.outer_iter_mut().enumerate() {
        row.assign(&medians);
        row[first.column] = step(&first, r / resolution);
        row[second.column] = step(&second, r % resolution);
    }
    Ok(grid)
}

pub fn column_medians(x: ArrayView2<'_, f64>) -> Array1<f64> {
    x.map_axis(Axis(0), |c: ArrayView1<'_, f64>| {
        let mut v = c.to_vec();
        if v.is_empty() {
            return 0.0;
        }
        v.sort_by(f64::total_cmp);
        let m = v.len() / 2;
        if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::KernelKind;
    use ndarray::array;
    use proptest::prelude::*;

    fn ones(n: usize) -> Array2<f64> {
        Array2::ones((n, n))
    }

    #[test]
    fn statistic_examples() {
        let psi = SignalVector::contrast(array![1.0, 1.0]);
        assert_eq!(mmr_statistic(&psi, ones(2).view()).unwrap(), (1.0, 2.0));
        let psi = SignalVector::contrast(array![1.0, -1.0, 0.0]);
        let (u, s) = mmr_statistic(&psi, ones(3).view()).unwrap();
        assert!((u + 1.0 / 3.0).abs() < 1e-15 && (s + 1.0).abs() < 1e-15);
        let psi = SignalVector::contrast(Array1::zeros(4));
        assert_eq!(mmr_statistic(&psi, ones(4).view()).unwrap().0, 0.0);
        let psi = SignalVector::contrast(array![1.0]);
        assert!(matches!(mmr_statistic(&psi, ones(1).view()), Err(Error::TooFewRows { .. })));
    }

    #[test]
    fn vector_statistic_examples() {
        let pair = |v: Array2<f64>| SignalVector::outcome_pair(v).unwrap();
        assert_eq!(mmr_statistic_vector(&pair(array![[1.0, 0.0], [1.0, 0.0]]), ones(2).view()).unwrap().0, 1.0);
        assert_eq!(mmr_statistic_vector(&pair(array![[1.0, 0.0], [0.0, 1.0]]), ones(2).view()).unwrap().0, 0.0);
    }

    #[test]
    fn p_value_examples() {
        let boots: Vec<f64> = (0..100).map(|k| k as f64).collect();
        assert_eq!(p_value(1000.0, &boots).unwrap(), 1.0 / 101.0);
        assert_eq!(p_value(-1.0, &boots).unwrap(), 1.0);
        assert_eq!(p_value(49.5, &boots).unwrap(), 51.0 / 101.0);
        assert!(p_value(0.0, &[]).is_err());
    }

    #[test]
    fn bootstrap_basics() {
        let psi = SignalVector::contrast(array![0.5, -1.0, 2.0, 0.1]);
        let k = ones(4);
        assert!(bootstrap_null(&psi, k.view(), 0, 1, false).is_err());
        let a = bootstrap_null(&psi, k.view(), 25, 7, false).unwrap();
        assert_eq!(a, bootstrap_null(&psi, k.view(), 25, 7, false).unwrap());
        assert_ne!(a, bootstrap_null(&psi, k.view(), 25, 8, false).unwrap());
        assert!(bootstrap_null(&psi, k.view(), 5, 7, true).is_err());
        // a draw with all weights equal to one contributes exactly zero
        let w = vec![1u32; 4];
        let centered: Vec<f64> = w.iter().map(|&c| f64::from(c) - 1.0).collect();
        let v = Array2::from_shape_fn((4, 1), |(i, _)| centered[i] * psi.matrix()[[i, 0]]);
        assert_eq!(GramOperator::Dense(k).offdiag_forms(v.view())[0], 0.0);
    }

    #[test]
    fn weights_are_multinomial_counts() {
        for draw in 0..20 {
            let w = bootstrap_weights(50, 3, draw);
            assert_eq!(w.iter().sum::<u32>(), 50);
        }
    }

    #[test]
    fn feature_route_matches_dense_route() {
        let x = Array2::from_shape_fn((80, 2), |(i, j)| ((i * 7 + j * 3) % 11) as f64 / 5.0 - 1.0);
        let psi = SignalVector::contrast(Array1::from_shape_fn(80, |i| ((i * 13) % 7) as f64 - 3.0));
        let kernel = Kernel::new(KernelKind::Polynomial, 3, 0.5, 1.0).unwrap();
        let dense = GramOperator::Dense(kernel.gram(x.view()));
        let feat = GramOperator::build(&kernel, x.view());
        assert!(matches!(feat, GramOperator::Features(_)));
        let (a, b) = (statistic_from_op(&psi, &dense), statistic_from_op(&psi, &feat));
        assert!((a.1 - b.1).abs() < 1e-9 * a.1.abs().max(1.0));
        let ba = bootstrap_null_with(&psi, &dense, 10, 1).unwrap();
        let bb = bootstrap_null_with(&psi, &feat, 10, 1).unwrap();
        for (u, v) in ba.iter().zip(&bb) {
            assert!((u - v).abs() < 1e-9 * u.abs().max(1.0));
        }
    }

    #[test]
    fn witness_examples() {
        let x = array![[0.0], [1.0]];
        let constant = Kernel::new(KernelKind::Polynomial, 1, 1e-300, 1.0).unwrap();
        let q = array![[0.5], [2.0], [-3.0]];
        let zero = SignalVector::contrast(array![0.0, 0.0]);
        assert!(matches!(witness_eval(&zero, x.view(), &constant, q.view()), Err(Error::ZeroWitness)));
        for c in [2.5, -0.7] {
            let psi = SignalVector::contrast(array![c, c]);
            let w = witness_eval(&psi, x.view(), &constant, q.view()).unwrap();
            assert!(w.values.iter().all(|&v| (v - c.signum()).abs() < 1e-12));
        }
        let psi = SignalVector::contrast(array![1.0, 1.0]);
        assert!(witness_eval(&psi, x.view(), &constant, Array2::zeros((0, 1)).view()).is_err());
    }

    #[test]
    fn projection_grid_holds_medians() {
        let x = array![[0.0, 10.0, 5.0], [1.0, 20.0, 7.0], [2.0, 30.0, 100.0]];
        let g = projection_grid(
            x.view(),
            GridAxis { column: 0, lo: -1.0, hi: 1.0 },
            GridAxis { column: 2, lo: 0.0, hi: 4.0 },
            3,
        ).unwrap();
        assert_eq!(g.nrows(), 9);
        assert!(g.column(1).iter().all(|&v| v == 20.0));
        assert_eq!(g.row(5).to_vec(), vec![0.0, 20.0, 4.0]);
        assert!(projection_grid(x.view(), GridAxis { column: 5, lo: 0.0, hi: 1.0 }, GridAxis { column: 0, lo: 0.0, hi: 1.0 }, 3).is_err());
    }

    proptest! {
        #[test]
        fn p_value_is_monotone(boots in proptest::collection::vec(-10.0f64..10.0, 1..50), a in -12.0f64..12.0, b in -12.0f64..12.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(p_value(hi, &boots).unwrap() <= p_value(lo, &boots).unwrap());
        }
    }
}
