//! Monte Carlo experiments: simulate a panel, fit the first stages, estimate
//! every column, and summarize bias, spread and RMSE across replications.
//!
//! Replication `r` uses the seed `derive_seed(seed, REPLICATION, r)` for both its
//! panel and its first-stage restarts, so each replication is a function of the
//! master seed and its index only. Replications run concurrently and are
//! collected in index order.

use std::collections::BTreeMap;

use mixsel_core::mixture::EntryData;
use mixsel_core::rng::{derive_seed, tag};
use mixsel_core::selection::pipeline::theta_names;
use mixsel_core::simulate::simulate_panel;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Column, RunConfig};
use crate::error::{CliError, CliResult};
use crate::estimation::{complete_first_stages, estimate_columns, required_ks, true_theta};
use crate::tables::fmt_num;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub index: usize,
    pub seed: u64,
    pub markets: usize,
    pub dropped_markets: usize,
    /// Estimates per configured column, in column order; empty when the replication failed.
    pub estimates: Vec<Vec<f64>>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub name: String,
    pub truth: f64,
    pub mean: f64,
    pub bias: f64,
    /// Sample standard deviation across replications.
    pub sd: f64,
    pub rmse: f64,
    /// Monte Carlo standard error of the mean, `sd / sqrt(replications)`.
    pub mc_se: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSummary {
    pub column: Column,
    pub label: String,
    pub params: Vec<ParamSummary>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicationFailure {
    pub index: usize,
    pub reason: String,
}

/// Per-estimator bias, SD and RMSE over the successful replications.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McSummary {
    pub requested: usize,
    /// Successful replications, `requested - failures`.
    pub replications: usize,
    pub failures: usize,
    pub failure_reasons: Vec<ReplicationFailure>,
    pub parameters: Vec<String>,
    pub truth: Vec<f64>,
    pub estimators: Vec<EstimatorSummary>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct McRun {
    pub summary: McSummary,
    pub records: Vec<ReplicationRecord>,
}

fn replicate(cfg: &RunConfig, index: usize) -> ReplicationRecord {
    let seed = derive_seed(cfg.seed, tag::REPLICATION, index as u64);
    let mut record = ReplicationRecord { index, seed, markets: 0, dropped_markets: 0, estimates: Vec::new(), error: None };
    match run_replication(cfg, seed, &mut record) {
        Ok(estimates) => record.estimates = estimates,
        Err(e) => record.error = Some(e),
    }
    record
}

fn run_replication(cfg: &RunConfig, seed: u64, record: &mut ReplicationRecord) -> Result<Vec<Vec<f64>>, String> {
    let mut dgp = cfg.dgp.clone();
    dgp.seed = seed;
    let panel = simulate_panel(&dgp).map_err(|e| e.to_string())?;
    record.markets = panel.observations.len();
    record.dropped_markets = panel.dropped.len();
    if panel.drop_rate() > cfg.max_drop_rate {
        return Err(format!("{} of {} markets dropped", panel.dropped.len(), dgp.n_markets));
    }
    let data = EntryData::from_observations(&panel.observations).map_err(|e| e.to_string())?;
    let ks = required_ks(&cfg.second_stage.columns);
    let models = complete_first_stages(&data, &ks, BTreeMap::new(), &cfg.first_stage, seed).map_err(|e| e.to_string())?;
    estimate_columns(&panel.observations, &models, cfg)
        .into_iter()
        .map(|o| o.result.map(|r| r.theta).map_err(|e| format!("{}: {e}", o.column.label())))
        .collect()
}

fn summarize(name: &str, truth: f64, values: &[f64]) -> ParamSummary {
    let n = values.len();
    if n == 0 {
        return ParamSummary { name: name.into(), truth, mean: f64::NAN, bias: f64::NAN, sd: f64::NAN, rmse: f64::NAN, mc_se: f64::NAN };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let sd = if n > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    let rmse = (values.iter().map(|v| (v - truth).powi(2)).sum::<f64>() / n as f64).sqrt();
    ParamSummary { name: name.into(), truth, mean, bias: mean - truth, sd, rmse, mc_se: sd / (n as f64).sqrt() }
}

pub fn summarize_records(cfg: &RunConfig, records: &[ReplicationRecord]) -> McSummary {
    let parameters = theta_names(&cfg.demand_vars());
    let truth = true_theta(cfg);
    let ok: Vec<&ReplicationRecord> = records.iter().filter(|r| r.error.is_none()).collect();
    let estimators = cfg
        .second_stage
        .columns
        .iter()
        .enumerate()
        .map(|(c, &column)| EstimatorSummary {
            column,
            label: column.label(),
            params: parameters
                .iter()
                .enumerate()
                .map(|(p, name)| {
                    let values: Vec<f64> = ok.iter().map(|r| r.estimates[c][p]).collect();
                    summarize(name, truth[p], &values)
                })
                .collect(),
        })
        .collect();
    let failure_reasons: Vec<ReplicationFailure> = records
        .iter()
        .filter_map(|r| r.error.as_ref().map(|e| ReplicationFailure { index: r.index, reason: e.clone() }))
        .collect();
    McSummary {
        requested: records.len(),
        replications: ok.len(),
        failures: failure_reasons.len(),
        failure_reasons,
        parameters,
        truth,
        estimators,
    }
}

/// Run all replications. Exceeding the failure threshold is reported by
/// [`check_failures`], not here, so callers can still write the results.
pub fn run_montecarlo(cfg: &RunConfig) -> McRun {
    let records: Vec<ReplicationRecord> = (0..cfg.montecarlo.replications)
        .into_par_iter()
        .map(|r| replicate(cfg, r))
        .collect();
    McRun { summary: summarize_records(cfg, &records), records }
}

pub fn check_failures(cfg: &RunConfig, summary: &McSummary) -> CliResult<()> {
    if summary.failures as f64 > cfg.montecarlo.max_failure_rate * summary.requested as f64 {
        return Err(CliError::Threshold(format!(
            "{} of {} Monte Carlo replications failed (limit {})",
            summary.failures, summary.requested, cfg.montecarlo.max_failure_rate
        )));
    }
    Ok(())
}

impl McSummary {
    pub fn csv(&self) -> (Vec<String>, Vec<Vec<String>>) {
        let header = ["estimator", "parameter", "truth", "mean", "bias", "sd", "rmse", "mc_se", "replications"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let rows = self
            .estimators
            .iter()
            .flat_map(|e| {
                e.params.iter().map(move |p| {
                    vec![
                        e.label.clone(),
                        p.name.clone(),
                        fmt_num(Some(p.truth)),
                        fmt_num(Some(p.mean)),
                        fmt_num(Some(p.bias)),
                        fmt_num(Some(p.sd)),
                        fmt_num(Some(p.rmse)),
                        fmt_num(Some(p.mc_se)),
                        self.replications.to_string(),
                    ]
                })
            })
            .collect();
        (header, rows)
    }

    pub fn estimator(&self, column: Column) -> Option<&EstimatorSummary> {
        self.estimators.iter().find(|e| e.column == column)
    }
}

/// One row per (replication, estimator) for successful replications, one row per
/// failed replication with its reason.
pub fn records_csv(cfg: &RunConfig, records: &[ReplicationRecord]) -> (Vec<String>, Vec<Vec<String>>) {
    let parameters = theta_names(&cfg.demand_vars());
    let mut header: Vec<String> = ["replication", "seed", "estimator"].iter().map(|s| s.to_string()).collect();
    header.extend(parameters.iter().cloned());
    header.push("error".into());
    let mut rows = Vec::new();
    for r in records {
        if let Some(e) = &r.error {
            let mut v = vec![r.index.to_string(), r.seed.to_string(), String::new()];
            v.extend(parameters.iter().map(|_| "NA".to_string()));
            v.push(e.clone());
            rows.push(v);
            continue;
        }
        for (c, column) in cfg.second_stage.columns.iter().enumerate() {
            let mut v = vec![r.index.to_string(), r.seed.to_string(), column.label()];
            v.extend(r.estimates[c].iter().map(|x| fmt_num(Some(*x))));
            v.push(String::new());
            rows.push(v);
        }
    }
    (header, rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_statistics_by_hand() {
        let s = summarize("alpha", -2.0, &[-1.0, -2.0, -3.0, -2.0]);
        assert_eq!(s.mean, -2.0);
        assert_eq!(s.bias, 0.0);
        assert!((s.sd - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert!((s.rmse - 0.5f64.sqrt()).abs() < 1e-15);
        assert!((s.mc_se - s.sd / 2.0).abs() < 1e-15);
    }

    #[test]
    fn failure_accounting_sums() {
        let cfg = RunConfig::default();
        let ok = |i| ReplicationRecord {
            index: i,
            seed: i as u64,
            markets: 10,
            dropped_markets: 0,
            estimates: vec![vec![-2.0, 0.5, 1.0]; cfg.second_stage.columns.len()],
            error: None,
        };
        let bad = |i| ReplicationRecord { error: Some("boom".into()), estimates: Vec::new(), ..ok(i) };
        let records = vec![ok(0), bad(1), ok(2), bad(3), ok(4)];
        let s = summarize_records(&cfg, &records);
        assert_eq!(s.requested, 5);
        assert_eq!(s.failures, 2);
        assert_eq!(s.replications, s.requested - s.failures);
        assert_eq!(s.failure_reasons.iter().map(|f| f.index).collect::<Vec<_>>(), vec![1, 3]);
        let mut strict = cfg.clone();
        strict.montecarlo.max_failure_rate = 0.3;
        assert!(matches!(check_failures(&strict, &s), Err(CliError::Threshold(_))));
        strict.montecarlo.max_failure_rate = 0.4;
        assert!(check_failures(&strict, &s).is_ok());
        let (_, rows) = records_csv(&cfg, &records);
        assert_eq!(rows.len(), 3 * cfg.second_stage.columns.len() + 2);
    }
}
