//! Market-level pairs bootstrap of the two-step estimator.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::pipeline::{estimate_demand, theta_names, DemandSpec};
use crate::error::{Error, Result};
use crate::mixture::{em_refit, EmOptions, EntryData, MixtureModel};
use crate::rng;
use crate::simulate::MarketObservation;

/// Smallest number of replicates accepted.
pub const MIN_REPLICATES: usize = 50;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BootstrapOptions {
    pub replicates: usize,
    pub seed: u64,
    /// First-stage EM settings for each replicate; restarts are forced to one.
    pub em: EmOptions,
    /// Abort when more than this share of replicates fail.
    pub max_failure_rate: f64,
}

impl Default for BootstrapOptions {
    fn default() -> Self {
        Self {
            replicates: 100,
            seed: 0,
            em: EmOptions::default(),
            max_failure_rate: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub theta_names: Vec<String>,
    /// Standard deviation of each parameter across successful replicates.
    pub se: Vec<f64>,
    pub requested: usize,
    pub used: usize,
    pub failures: usize,
    /// Error messages of failed replicates, in replicate order.
    pub failure_reasons: Vec<String>,
    pub estimates: Vec<Vec<f64>>,
}

/// Resample markets with replacement, refit the first stage from `first_stage`
/// (single EM run) and re-estimate demand; report the standard deviation of the
/// estimates across replicates.
pub fn bootstrap_se(
    observations: &[MarketObservation],
    first_stage: Option<&MixtureModel>,
    spec: &DemandSpec,
    opts: &BootstrapOptions,
) -> Result<BootstrapResult> {
    if opts.replicates < MIN_REPLICATES {
        return Err(Error::InvalidParameter(format!(
            "bootstrap needs at least {MIN_REPLICATES} replicates, got {}",
            opts.replicates
        )));
    }
    if observations.is_empty() {
        return Err(Error::Data("no markets to resample".into()));
    }
    let em = EmOptions { n_restarts: 1, ..opts.em.clone() };
    let t = observations.len();
    let results: Vec<Result<Vec<f64>>> = (0..opts.replicates)
        .into_par_iter()
        .map(|b| {
            let mut r = rng::stream(opts.seed, rng::tag::BOOTSTRAP, b as u64);
            let sample: Vec<MarketObservation> = (0..t).map(|_| observations[r.random_range(0..t)].clone()).collect();
            let model = match (spec.needs_first_stage(), first_stage) {
                (true, Some(m)) => {
                    let data = EntryData::from_observations(&sample)?;
                    Some(em_refit(&data, m, &em)?.model)
                }
                _ => None,
            };
            Ok(estimate_demand(&sample, model.as_ref(), spec)?.theta)
        })
        .collect();
    let mut estimates = Vec::new();
    let mut failure_reasons = Vec::new();
    for r in results {
        match r {
            Ok(theta) => estimates.push(theta),
            Err(e) => failure_reasons.push(e.to_string()),
        }
    }
    let failures = failure_reasons.len();
    if failures as f64 > opts.max_failure_rate * opts.replicates as f64 {
        return Err(Error::Estimation(format!(
            "{failures} of {} bootstrap replicates failed",
            opts.replicates
        )));
    }
    let used = estimates.len();
    let dim = estimates.first().map_or(0, |e| e.len());
    let se = (0..dim)
        .map(|c| {
            let mean = estimates.iter().map(|e| e[c]).sum::<f64>() / used as f64;
            let ss: f64 = estimates.iter().map(|e| (e[c] - mean).powi(2)).sum();
            (ss / (used.max(2) - 1) as f64).sqrt()
        })
        .collect();
    Ok(BootstrapResult {
        theta_names: theta_names(&spec.demand_vars),
        se,
        requested: opts.replicates,
        used,
        failures,
        failure_reasons,
        estimates,
    })
}
