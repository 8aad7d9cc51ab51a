//! First stages and estimator columns on one panel.

use std::collections::BTreeMap;

use mixsel_core::mixture::{em_fit, EmOptions, EntryData, MixtureFit, MixtureModel};
use mixsel_core::rng::{derive_seed, tag};
use mixsel_core::selection::{build_dependent, estimate_demand, DemandRows};
use mixsel_core::{GmmResult, MarketObservation};

use crate::config::{Column, FirstStageConfig, RunConfig};
use crate::error::CliResult;

/// Distinct first-stage type counts needed by `columns`, ascending.
pub fn required_ks(columns: &[Column]) -> Vec<usize> {
    let mut ks: Vec<usize> = columns.iter().filter_map(|c| c.first_stage_k()).collect();
    ks.sort_unstable();
    ks.dedup();
    ks
}

/// EM options for a `k`-type fit under run seed `seed`. The derivation matches the
/// one inside `select_k`, so a fit is the same whichever command produced it.
pub fn em_options(stage: &FirstStageConfig, seed: u64, k: usize) -> EmOptions {
    EmOptions { seed: derive_seed(seed, tag::RESTART, k as u64), ..stage.em.clone() }
}

pub fn fit_first_stage(data: &EntryData, k: usize, stage: &FirstStageConfig, seed: u64) -> CliResult<MixtureFit> {
    Ok(em_fit(data, k, &stage.basis, &em_options(stage, seed, k))?)
}

/// Fit every `K` in `ks` that `given` does not already provide.
pub fn complete_first_stages(
    data: &EntryData,
    ks: &[usize],
    given: BTreeMap<usize, MixtureModel>,
    stage: &FirstStageConfig,
    seed: u64,
) -> CliResult<BTreeMap<usize, MixtureModel>> {
    let mut models = given;
    for &k in ks {
        if !models.contains_key(&k) {
            models.insert(k, fit_first_stage(data, k, stage, seed)?.model);
        }
    }
    Ok(models)
}

/// Outcome of one estimator column; errors are kept as messages so one failing
/// column does not hide the others.
#[derive(Clone, Debug, PartialEq)]
pub struct ColumnOutcome {
    pub column: Column,
    pub result: Result<GmmResult, String>,
}

pub fn estimate_columns(
    observations: &[MarketObservation],
    models: &BTreeMap<usize, MixtureModel>,
    cfg: &RunConfig,
) -> Vec<ColumnOutcome> {
    let demand_vars = cfg.demand_vars();
    cfg.second_stage
        .columns
        .iter()
        .map(|&column| {
            let spec = column.demand_spec(&cfg.second_stage, demand_vars.clone());
            let first_stage = column.first_stage_k().and_then(|k| models.get(&k));
            let result = match (column.first_stage_k(), first_stage) {
                (Some(k), None) => Err(format!("no {k}-type first stage available")),
                _ => estimate_demand(observations, first_stage, &spec).map_err(|e| e.to_string()),
            };
            ColumnOutcome { column, result }
        })
        .collect()
}

/// Entrant rows used by the elasticity reports.
pub fn demand_rows(observations: &[MarketObservation]) -> CliResult<DemandRows> {
    Ok(build_dependent(observations)?)
}

/// True `(alpha, sigma, beta over demand_vars)` of the DGP in `cfg`; characteristics
/// that do not enter the DGP's utility have coefficient zero.
pub fn true_theta(cfg: &RunConfig) -> Vec<f64> {
    let dgp_vars = cfg.dgp.demand_vars();
    let mut theta = vec![cfg.dgp.demand.alpha, cfg.dgp.demand.sigma];
    theta.extend(cfg.demand_vars().iter().map(|v| match dgp_vars.iter().position(|d| d == v) {
        Some(i) => cfg.dgp.demand.beta.get(i + 1).copied().unwrap_or(0.0),
        None => 0.0,
    }));
    theta
}
