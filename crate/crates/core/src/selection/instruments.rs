//! Excluded instruments for price and the within-group share.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::data::DemandRows;
use crate::error::{Error, Result};
use crate::simulate::MarketObservation;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstrumentSet {
    /// Sum over all other potential firms of every characteristic, the firm's own
    /// demand-excluded characteristics, and log market size.
    RivalCharacteristics,
    /// Number of competing entrants, the mean of their demand-excluded
    /// characteristics (zero without competitors), and own excluded characteristics.
    Competitors,
    /// The firm's own characteristics only, demand ones included. Not a valid
    /// instrument set; useful to exhibit identification failure.
    Own,
}

/// Excluded instruments for every entrant row. `demand_vars` lists the characteristics
/// that enter mean utility; the rest are treated as excluded.
pub fn build_instruments(
    observations: &[MarketObservation],
    rows: &DemandRows,
    set: InstrumentSet,
    demand_vars: &[usize],
) -> Result<(DMatrix<f64>, Vec<String>)> {
    let n_vars = observations.first().and_then(|o| o.x.first()).map_or(0, |x| x.len());
    if let Some(&v) = demand_vars.iter().find(|&&v| v >= n_vars) {
        return Err(Error::InvalidParameter(format!("demand variable index {v} out of range")));
    }
    let excluded: Vec<usize> = (0..n_vars).filter(|v| !demand_vars.contains(v)).collect();
    let mut names = Vec::new();
    match set {
        InstrumentSet::RivalCharacteristics => {
            names.extend((0..n_vars).map(|v| format!("rival_sum_x_{}", v + 1)));
            names.extend(excluded.iter().map(|v| format!("own_x_{}", v + 1)));
            names.push("ln_H".into());
        }
        InstrumentSet::Competitors => {
            names.push("n_competitors".into());
            names.extend(excluded.iter().map(|v| format!("competitor_mean_x_{}", v + 1)));
            names.extend(excluded.iter().map(|v| format!("own_x_{}", v + 1)));
        }
        InstrumentSet::Own => {
            names.extend((0..n_vars).map(|v| format!("own_x_{}", v + 1)));
        }
    }
    let mut z = DMatrix::zeros(rows.len(), names.len());
    for r in 0..rows.len() {
        let o = &observations[rows.market[r]];
        let j = rows.firm[r];
        let mut vals = Vec::with_capacity(names.len());
        match set {
            InstrumentSet::RivalCharacteristics => {
                for v in 0..n_vars {
                    vals.push((0..o.n_firms()).filter(|&i| i != j).map(|i| o.x[i][v]).sum());
                }
                vals.extend(excluded.iter().map(|&v| o.x[j][v]));
                vals.push(o.size.ln());
            }
            InstrumentSet::Competitors => {
                let rivals: Vec<usize> = (0..o.n_firms()).filter(|&i| i != j && o.entered[i]).collect();
                vals.push(rivals.len() as f64);
                for &v in &excluded {
                    let mean = if rivals.is_empty() {
                        0.0
                    } else {
                        rivals.iter().map(|&i| o.x[i][v]).sum::<f64>() / rivals.len() as f64
                    };
                    vals.push(mean);
                }
                vals.extend(excluded.iter().map(|&v| o.x[j][v]));
            }
            InstrumentSet::Own => vals.extend(o.x[j].iter().copied()),
        }
        for (c, v) in vals.into_iter().enumerate() {
            z[(r, c)] = v;
        }
    }
    Ok((z, names))
}
