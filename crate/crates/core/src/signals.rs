//! Instance-wise CATE signals.
//!
//! The RCT signal is an inverse-probability-weighted outcome contrast on
//! RCT rows. The observational signal is doubly robust: a response-surface
//! contrast on RCT rows plus an IPW residual correction on observational
//! rows, both transported by the RCT-membership probability. Their
//! difference has conditional mean zero whenever both studies identify the
//! same CATE. The outcome-pair variant keeps the two potential-outcome
//! signals separate instead of contrasting them.

use std::io::Write;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::data::CombinedDataset;
use crate::error::{Error, Result};
use crate::nuisance::NuisanceEstimates;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SignalKind {
    Contrast,
    OutcomePair,
}

/// Per-row signal values: one column for contrasts, two (`a = 0`, `a = 1`)
/// for outcome pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalVector {
    kind: SignalKind,
    values: Array2<f64>,
}

impl SignalVector {
    pub fn contrast(values: Array1<f64>) -> Self {
        let n = values.len();
        Self {
            kind: SignalKind::Contrast,
            values: values.into_shape_with_order((n, 1)).expect("column reshape"),
        }
    }

    pub fn outcome_pair(values: Array2<f64>) -> Result<Self> {
        if values.ncols() != 2 {
            return Err(Error::DimensionMismatch { expected: 2, got: values.ncols() });
        }
        Ok(Self { kind: SignalKind::OutcomePair, values })
    }

    pub fn kind(&self) -> SignalKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    /// Values as an `n × c` matrix (c = 1 or 2).
    pub fn matrix(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    /// The scalar signal; errors on outcome pairs.
    pub fn scalar(&self) -> Result<ArrayView1<'_, f64>> {
        match self.kind {
            SignalKind::Contrast => Ok(self.values.column(0)),
            SignalKind::OutcomePair => Err(Error::SignalKind("expected a contrast signal".into())),
        }
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            kind: self.kind,
            values: self.values.select(Axis(0), rows),
        }
    }

    fn difference(&self, other: &Self) -> Result<Self> {
        if self.kind != other.kind {
            return Err(Error::SignalKind("signal kinds differ".into()));
        }
        if self.len() != other.len() {
            return Err(Error::DimensionMismatch { expected: self.len(), got: other.len() });
        }
        Ok(Self {
            kind: self.kind,
            values: &self.values - &other.values,
        })
    }
}

fn check(data: &CombinedDataset, nuis: &NuisanceEstimates) -> Result<()> {
    nuis.check_len(data.n())
}

/// RCT contrast signal: zero on observational rows.
pub fn rct_contrast_signal(data: &CombinedDataset, nuis: &NuisanceEstimates) -> Result<SignalVector> {
    check(data, nuis)?;
    let p = nuis.p_assign;
    let values = Array1::from_iter((0..data.n()).map(|i| {
        if data.study()[i] != 0 {
            return 0.0;
        }
        let y = data.outcome()[i];
        let arm = if data.treatment()[i] == 1 { 1.0 / p } else { -1.0 / (1.0 - p) };
        y * arm / nuis.pi_rct[i]
    }));
    Ok(SignalVector::contrast(values))
}

/// Doubly robust observational contrast signal.
pub fn obs_contrast_signal(data: &CombinedDataset, nuis: &NuisanceEstimates) -> Result<SignalVector> {
    check(data, nuis)?;
    let values = Array1::from_iter((0..data.n()).map(|i| {
        let pi = nuis.pi_rct[i];
        if data.study()[i] == 0 {
            return (nuis.mu1[i] - nuis.mu0[i]) / pi;
        }
        let y = data.outcome()[i];
        let e = nuis.e_obs[i];
        let residual = if data.treatment()[i] == 1 {
            (y - nuis.mu1[i]) / e
        } else {
            -(y - nuis.mu0[i]) / (1.0 - e)
        };
        (1.0 / pi) * (pi / (1.0 - pi)) * residual
    }));
    Ok(SignalVector::contrast(values))
}

/// Elementwise `psi1 - psi0` for contrast signals.
pub fn contrast_signal_difference(psi1: &SignalVector, psi0: &SignalVector) -> Result<SignalVector> {
    if psi1.kind() != SignalKind::Contrast || psi0.kind() != SignalKind::Contrast {
        return Err(Error::SignalKind("contrast difference needs contrast signals".into()));
    }
    psi1.difference(psi0)
}

/// Elementwise `psi1 - psi0` for outcome-pair signals.
pub fn outcome_pair_difference(psi1: &SignalVector, psi0: &SignalVector) -> Result<SignalVector> {
    if psi1.kind() != SignalKind::OutcomePair || psi0.kind() != SignalKind::OutcomePair {
        return Err(Error::SignalKind("pair difference needs outcome-pair signals".into()));
    }
    psi1.difference(psi0)
}

/// Potential-outcome signals `(rct, observational)`, columns `a = 0, 1`.
pub fn outcome_pair_signals(
    data: &CombinedDataset,
    nuis: &NuisanceEstimates,
) -> Result<(SignalVector, SignalVector)> {
    check(data, nuis)?;
    let n = data.n();
    let p = nuis.p_assign;
    let mut rct = Array2::zeros((n, 2));
    let mut obs = Array2::zeros((n, 2));
    for i in 0..n {
        let pi = nuis.pi_rct[i];
        let a = data.treatment()[i] as usize;
        let y = data.outcome()[i];
        let mu = [nuis.mu0[i], nuis.mu1[i]];
        if data.study()[i] == 0 {
            let p_arm = if a == 1 { p } else { 1.0 - p };
            rct[[i, a]] = y / p_arm / pi;
            obs[[i, 0]] = mu[0] / pi;
            obs[[i, 1]] = mu[1] / pi;
        } else {
            let e_arm = if a == 1 { nuis.e_obs[i] } else { 1.0 - nuis.e_obs[i] };
            obs[[i, a]] = (1.0 / pi) * (pi / (1.0 - pi)) * (y - mu[a]) / e_arm;
        }
    }
    Ok((SignalVector::outcome_pair(rct)?, SignalVector::outcome_pair(obs)?))
}

/// The contrast signal difference `ψ = ψ₁ − ψ₀`.
pub fn contrast_signals(data: &CombinedDataset, nuis: &NuisanceEstimates) -> Result<SignalVector> {
    let psi0 = rct_contrast_signal(data, nuis)?;
    let psi1 = obs_contrast_signal(data, nuis)?;
    contrast_signal_difference(&psi1, &psi0)
}

/// The outcome-pair signal difference.
pub fn outcome_pair_signal_difference(data: &CombinedDataset, nuis: &NuisanceEstimates) -> Result<SignalVector> {
    let (rct, obs) = outcome_pair_signals(data, nuis)?;
    outcome_pair_difference(&obs, &rct)
}

/// Writes `row, S, psi...` for auditing.
pub fn write_signals_csv<W: Write>(data: &CombinedDataset, psi: &SignalVector, writer: W) -> Result<()> {
    if psi.len() != data.n() {
        return Err(Error::DimensionMismatch { expected: data.n(), got: psi.len() });
    }
    let mut wtr = csv::Writer::from_writer(writer);
    match psi.kind() {
        SignalKind::Contrast => wtr.write_record(["row", "S", "psi"])?,
        SignalKind::OutcomePair => wtr.write_record(["row", "S", "psi_a0", "psi_a1"])?,
    }
    for (i, vals) in psi.matrix().outer_iter().enumerate() {
        let mut rec = vec![i.to_string(), data.study()[i].to_string()];
        rec.extend(vals.iter().map(|v| v.to_string()));
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}
