//! ATE and GATE falsification Z-tests and closed-form power calculators.
//!
//! The RCT side uses the difference in arm means. The observational side
//! uses the transported doubly robust estimator
//! `(1/n₀) Σᵢ π̂(Xᵢ) ψ₁ᵢ`, whose target is the average effect over the RCT
//! covariate distribution; its standard error comes from the empirical
//! influence function. The two estimates are treated as independent.

use serde::{Deserialize, Serialize};

use crate::data::CombinedDataset;
use crate::error::{Error, Result};
use crate::normal;
use crate::nuisance::NuisanceEstimates;
use crate::signals::obs_contrast_signal;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZTestResult {
    pub estimate_rct: f64,
    pub estimate_obs: f64,
    pub se_combined: f64,
    pub z: f64,
    pub p_value: f64,
    /// Per-test significance level (Bonferroni-adjusted for subgroups).
    pub level: f64,
    pub reject: bool,
    pub group_label: Option<String>,
}

/// Two-sided test of `estimate_obs - estimate_rct = 0`.
pub fn z_test(
    estimate_rct: f64,
    se_rct: f64,
    estimate_obs: f64,
    se_obs: f64,
    level: f64,
    group_label: Option<String>,
) -> Result<ZTestResult> {
    let se_combined = (se_rct * se_rct + se_obs * se_obs).sqrt();
    if !(se_combined > 0.0) || !se_combined.is_finite() {
        return Err(Error::ZeroVariance(group_label.unwrap_or_else(|| "overall".into())));
    }
    let z = (estimate_obs - estimate_rct) / se_combined;
    let p_value = (2.0 * normal::sf(z.abs())).min(1.0);
    Ok(ZTestResult {
        estimate_rct,
        estimate_obs,
        se_combined,
        z,
        p_value,
        level,
        reject: p_value < level,
        group_label,
    })
}

fn mean_var(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var)
}

/// Z-test restricted to rows where `member` holds.
fn z_test_on(
    data: &CombinedDataset,
    nuis: &NuisanceEstimates,
    psi1: &[f64],
    member: &dyn Fn(usize) -> bool,
    level: f64,
    label: Option<String>,
) -> Result<ZTestResult> {
    let name = || label.clone().unwrap_or_else(|| "overall".into());
    let (s, a, y) = (data.study(), data.treatment(), data.outcome());
    let arm = |t: u8| -> Vec<f64> {
        (0..data.n()).filter(|&i| member(i) && s[i] == 0 && a[i] == t).map(|i| y[i]).collect()
    };
    let (treated, control) = (arm(1), arm(0));
    if treated.is_empty() || control.is_empty() {
        return Err(Error::EmptyGroup(format!("{}: an RCT arm has no rows", name())));
    }
    if !(0..data.n()).any(|i| member(i) && s[i] == 1) {
        return Err(Error::EmptyGroup(format!("{}: no observational rows", name())));
    }
    let (m1, v1) = mean_var(&treated);
    let (m0, v0) = mean_var(&control);
    let estimate_rct = m1 - m0;
    let se_rct = (v1 / treated.len() as f64 + v0 / control.len() as f64).sqrt();

    let n0 = (treated.len() + control.len()) as f64;
    let rows: Vec<usize> = (0..data.n()).filter(|&i| member(i)).collect();
    let estimate_obs = rows.iter().map(|&i| nuis.pi_rct[i] * psi1[i]).sum::<f64>() / n0;
    let ss: f64 = rows
        .iter()
        .map(|&i| {
            let r = nuis.pi_rct[i] * psi1[i] - if s[i] == 0 { estimate_obs } else { 0.0 };
            r * r
        })
        .sum();
    let se_obs = ss.sqrt() / n0;
    z_test(estimate_rct, se_rct, estimate_obs, se_obs, level, label)
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("alpha must lie in (0,1), got {alpha}")))
    }
}

/// Average-treatment-effect comparison between the studies.
pub fn ate_test(data: &CombinedDataset, nuis: &NuisanceEstimates, alpha: f64) -> Result<ZTestResult> {
    check_alpha(alpha)?;
    let psi1 = obs_contrast_signal(data, nuis)?;
    let psi1 = psi1.scalar()?.to_vec();
    z_test_on(data, nuis, &psi1, &|_| true, alpha, None)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateResult {
    pub groups: Vec<ZTestResult>,
    pub reject: bool,
}

impl GateResult {
    /// Smallest Bonferroni-adjusted p-value, `min(1, G · min p)`.
    pub fn adjusted_p_value(&self) -> f64 {
        let g = self.groups.len() as f64;
        self.groups.iter().map(|r| r.p_value * g).fold(1.0, f64::min)
    }
}

/// Per-subgroup Z-tests at level `alpha / G`; rejects if any group does.
/// `labels[i]` is the subgroup of row `i`; `names[g]` labels group `g`.
pub fn gate_test(
    data: &CombinedDataset,
    nuis: &NuisanceEstimates,
    labels: &[usize],
    names: &[String],
    alpha: f64,
) -> Result<GateResult> {
    check_alpha(alpha)?;
    if labels.len() != data.n() {
        return Err(Error::DimensionMismatch { expected: data.n(), got: labels.len() });
    }
    let g = names.len();
    if g == 0 {
        return Err(Error::EmptyGroup("no subgroups".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= g) {
        return Err(Error::InvalidParameter(format!("subgroup label {bad} out of range")));
    }
    let psi1 = obs_contrast_signal(data, nuis)?;
    let psi1 = psi1.scalar()?.to_vec();
    let level = alpha / g as f64;
    let groups = (0..g)
        .map(|k| z_test_on(data, nuis, &psi1, &|i| labels[i] == k, level, Some(names[k].clone())))
        .collect::<Result<Vec<_>>>()?;
    let reject = groups.iter().any(|r| r.reject);
    Ok(GateResult { groups, reject })
}

/// Splits one covariate at increasing thresholds: bin = #{t : value ≥ t}.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupRule {
    pub column: String,
    pub thresholds: Vec<f64>,
}

/// Crosses the rules into row labels; only occurring cells become groups.
pub fn subgroup_labels(data: &CombinedDataset, rules: &[SubgroupRule]) -> Result<(Vec<usize>, Vec<String>)> {
    if rules.is_empty() {
        return Err(Error::Config("subgroup rules are empty".into()));
    }
    let cols = rules
        .iter()
        .map(|r| data.column_index(&r.column).ok_or_else(|| Error::MissingColumn(r.column.clone())))
        .collect::<Result<Vec<_>>>()?;
    let mut cells: Vec<Vec<usize>> = Vec::new();
    let mut labels = Vec::with_capacity(data.n());
    for i in 0..data.n() {
        let cell: Vec<usize> = rules
            .iter()
            .zip(&cols)
            .map(|(r, &c)| r.thresholds.iter().filter(|&&t| data.covariates()[[i, c]] >= t).count())
            .collect();
        let id = match cells.iter().position(|c| *c == cell) {
            Some(id) => id,
            None => {
                cells.push(cell);
                cells.len() - 1
            }
        };
        labels.push(id);
    }
    // order groups by their cell so labels do not depend on row order
    let mut order: Vec<usize> = (0..cells.len()).collect();
    order.sort_by(|&a, &b| cells[a].cmp(&cells[b]));
    let mut rank = vec![0; cells.len()];
    for (r, &c) in order.iter().enumerate() {
        rank[c] = r;
    }
    let names = order
        .iter()
        .map(|&c| {
            rules
                .iter()
                .zip(&cells[c])
                .map(|(r, &bin)| format!("{}:{}", r.column, bin))
                .collect::<Vec<_>>()
                .join("|")
        })
        .collect();
    Ok((labels.into_iter().map(|l| rank[l]).collect(), names))
}

/// Inputs to the two-subgroup closed-form power calculators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerSpec {
    /// Bias of the subgroup-1 estimate.
    pub delta1: f64,
    /// Bias of the subgroup-2 estimate.
    pub delta2: f64,
    /// Pooled standard deviation of the estimator difference.
    pub sigma: f64,
    /// Total sample size.
    pub n: f64,
    pub alpha: f64,
}

impl PowerSpec {
    pub fn validate(&self) -> Result<()> {
        check_alpha(self.alpha)?;
        if !(self.sigma > 0.0) || !(self.n > 0.0) {
            return Err(Error::InvalidParameter("sigma and N must be positive".into()));
        }
        Ok(())
    }
}

/// `1 − [Φ(t + z) − Φ(t − z)]`, the two-sided rejection probability of a
/// unit-variance statistic centred at `t`.
fn two_sided_power(t: f64, z: f64) -> f64 {
    normal::sf(z - t) + normal::sf(z + t)
}

/// Power of the ATE comparison.
pub fn power_ate(spec: &PowerSpec) -> Result<f64> {
    spec.validate()?;
    let mean_bias = 0.5 * (spec.delta1 + spec.delta2);
    let t = mean_bias.abs() * spec.n.sqrt() / spec.sigma;
    Ok(two_sided_power(t, normal::upper_critical(spec.alpha / 2.0)))
}

/// Power of the two-subgroup Bonferroni GATE comparison.
pub fn power_gate(spec: &PowerSpec) -> Result<f64> {
    spec.validate()?;
    let z = normal::upper_critical(spec.alpha / 4.0);
    let accept = |d: f64| {
        let t = d.abs() * spec.n.sqrt() / (std::f64::consts::SQRT_2 * spec.sigma);
        normal::interval_prob(t - z, t + z)
    };
    Ok(1.0 - accept(spec.delta1) * accept(spec.delta2))
}

/// Minimal `|δ|` that guarantees GATE out-powers ATE: scenario 1 biases a
/// single subgroup, scenario 2 biases both in opposite directions.
pub fn scenario_bounds(spec: &PowerSpec, scenario: u8) -> Result<f64> {
    spec.validate()?;
    let (alpha, sigma, n) = (spec.alpha, spec.sigma, spec.n);
    match scenario {
        1 => Ok(2.0 * sigma / n.sqrt() * (std::f64::consts::LN_2.sqrt() + normal::upper_critical(alpha / 2.0))),
        2 => Ok(sigma / (n / 2.0).sqrt()
            * (normal::upper_critical(alpha / 4.0) + normal::quantile(1.0 - (1.0 - alpha).sqrt()))),
        other => Err(Error::InvalidParameter(format!("unknown scenario {other}"))),
    }
}

/// Common-bias comparison: positive exactly where ATE out-powers GATE.
pub fn scenario3_g(delta_star: f64, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    if !(delta_star >= 0.0) {
        return Err(Error::InvalidParameter("delta_star must be non-negative".into()));
    }
    let z4 = normal::upper_critical(alpha / 4.0);
    let z2 = normal::upper_critical(alpha / 2.0);
    let half = delta_star / std::f64::consts::SQRT_2;
    let gate = normal::interval_prob(half - z4, half + z4);
    let ate = normal::interval_prob(delta_star - z2, delta_star + z2);
    Ok(gate * gate - ate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{Array1, Array2};

    fn spec(delta1: f64, delta2: f64) -> PowerSpec {
        PowerSpec { delta1, delta2, sigma: 1.0, n: 100.0, alpha: 0.05 }
    }

    #[test]
    fn z_test_examples() {
        let r = z_test(1.5, 0.3, 1.5, 0.4, 0.05, None).unwrap();
        assert_eq!((r.z, r.p_value, r.reject), (0.0, 1.0, false));
        let se = (0.3f64 * 0.3 + 0.4 * 0.4).sqrt();
        let r = z_test(0.0, 0.3, 1.959964 * se, 0.4, 0.05, None).unwrap();
        assert!((r.p_value - 0.05).abs() < 1e-4);
        assert!(matches!(z_test(0.0, 0.0, 1.0, 0.0, 0.05, None), Err(Error::ZeroVariance(_))));
    }

    fn tiny_data() -> (CombinedDataset, NuisanceEstimates) {
        let n = 16;
        let x = Array2::from_shape_fn((n, 1), |(i, _)| (i % 4) as f64);
        let s: Vec<u8> = (0..n).map(|i| u8::from(i >= 8)).collect();
        let a: Vec<u8> = (0..n).map(|i| ((i / 2) % 2) as u8).collect();
        let y: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin() + f64::from(a[i])).collect();
        let data = CombinedDataset::new(x, a, y, s, vec!["x".into()]).unwrap();
        let nuis = NuisanceEstimates {
            mu0: Array1::from_elem(n, 0.1),
            mu1: Array1::from_elem(n, 1.0),
            e_obs: Array1::from_elem(n, 0.5),
            pi_rct: Array1::from_elem(n, 0.5),
            p_assign: 0.5,
        };
        (data, nuis)
    }

    #[test]
    fn single_group_gate_equals_ate() {
        let (data, nuis) = tiny_data();
        let ate = ate_test(&data, &nuis, 0.05).unwrap();
        let gate = gate_test(&data, &nuis, &vec![0; 16], &["all".into()], 0.05).unwrap();
        assert_eq!(gate.groups[0].z, ate.z);
        assert_eq!(gate.groups[0].level, 0.05);
        assert_eq!(gate.reject, ate.reject);
    }

    #[test]
    fn empty_subgroup_is_an_error() {
        let (data, nuis) = tiny_data();
        let labels: Vec<usize> = (0..16).map(|i| usize::from(i >= 8)).collect();
        assert!(matches!(
            gate_test(&data, &nuis, &labels, &["a".into(), "b".into()], 0.05),
            Err(Error::EmptyGroup(_))
        ));
    }

    #[test]
    fn subgroup_labels_cross_rules() {
        let (data, _) = tiny_data();
        let rules = vec![SubgroupRule { column: "x".into(), thresholds: vec![2.0] }];
        let (labels, names) = subgroup_labels(&data, &rules).unwrap();
        assert_eq!(names, vec!["x:0".to_string(), "x:1".to_string()]);
        assert_eq!(labels[..4], [0, 0, 1, 1]);
        let bad = vec![SubgroupRule { column: "nope".into(), thresholds: vec![] }];
        assert!(subgroup_labels(&data, &bad).is_err());
    }

    #[test]
    fn power_examples() {
        let p = power_ate(&spec(0.3, -0.3)).unwrap();
        assert!((p - 0.05).abs() < 1e-15);
        assert!(power_ate(&spec(50.0, 50.0)).unwrap() > 1.0 - 1e-12);
        // t = 1.959964 → Φ(3.9199) − Φ(0)
        let t = 1.959964;
        let s = PowerSpec { delta1: t / 10.0, delta2: t / 10.0, ..spec(0.0, 0.0) };
        assert!((power_ate(&s).unwrap() - 0.5).abs() < 1e-3);
        let size = power_gate(&spec(0.0, 0.0)).unwrap();
        assert!((size - (1.0 - 0.975f64.powi(2))).abs() < 1e-12);
        assert!(power_gate(&spec(50.0, -50.0)).unwrap() > 1.0 - 1e-12);
        assert_eq!(power_gate(&spec(0.2, 0.5)).unwrap(), power_gate(&spec(0.5, 0.2)).unwrap());
    }

    #[test]
    fn scenario_bound_examples() {
        let b1 = scenario_bounds(&spec(0.0, 0.0), 1).unwrap();
        assert!((b1 - 0.55850).abs() < 1e-4);
        let b4 = scenario_bounds(&PowerSpec { n: 400.0, ..spec(0.0, 0.0) }, 1).unwrap();
        assert!((b4 - b1 / 2.0).abs() < 1e-12);
        assert!(scenario_bounds(&spec(0.0, 0.0), 3).is_err());
        for scenario in [1u8, 2] {
            let bound = scenario_bounds(&spec(0.0, 0.0), scenario).unwrap();
            for k in 1..=400 {
                let d = bound + k as f64 * 0.005;
                let s = if scenario == 1 { spec(d, 0.0) } else { spec(d, -d) };
                if power_ate(&s).unwrap() > 1.0 - 1e-12 {
                    break;
                }
                assert!(power_gate(&s).unwrap() > power_ate(&s).unwrap(), "scenario {scenario}, δ={d}");
            }
        }
    }

    #[test]
    fn g_function_examples() {
        assert!((scenario3_g(0.0, 0.05).unwrap() - 0.000625).abs() < 1e-9);
        let far = scenario3_g(40.0, 0.05).unwrap();
        assert!((0.0..1e-100).contains(&far));
        for alpha in [0.005, 0.01, 0.05, 0.1] {
            for k in 0..=1000 {
                let g = scenario3_g(k as f64 * 0.01, alpha).unwrap();
                assert!(g > 0.0, "g({}, {alpha}) = {g}", k as f64 * 0.01);
            }
        }
        assert!(scenario3_g(-1.0, 0.05).is_err());
    }

    #[test]
    fn phi_difference_decreasing_past_threshold() {
        let a = std::f64::consts::SQRT_2;
        let start = (2.0 * a.ln() / (a * a - 1.0)).sqrt();
        let f = |x: f64| normal::cdf(a * x) - normal::cdf(x);
        let h = 1e-3;
        let mut x = start + h;
        while x < 6.0 {
            assert!(f(x + h) < f(x), "not decreasing at {x}");
            x += h;
        }
        // and increasing just below the threshold
        assert!(f(start - 0.1) > f(start - 0.2));
    }

    #[test]
    fn critical_value_ratio_behaviour() {
        // The ratio z(α/4)/z(α/2) increases with α. The bound 1.1186 holds
        // only for small α; the √2 bound used in the power comparison holds
        // on the whole conventional range.
        let ratio = |alpha: f64| normal::upper_critical(alpha / 4.0) / normal::upper_critical(alpha / 2.0);
        let grid: Vec<f64> = (0..=499).map(|k| 0.001 + k as f64 * 0.001).collect();
        for w in grid.windows(2) {
            assert!(ratio(w[1]) > ratio(w[0]));
        }
        assert!(ratio(0.001) < 1.1186);
        assert!((ratio(0.05) - 1.14361).abs() < 1e-4);
        assert!(grid.iter().filter(|&&a| a <= 0.25).all(|&a| ratio(a) < std::f64::consts::SQRT_2));
    }
}
