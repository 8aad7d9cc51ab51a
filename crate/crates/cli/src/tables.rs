//! Report tables: goodness of fit across `K`, demand estimates by estimator,
//! elasticities and Lerner indexes by firm, and the elasticity histogram.
//!
//! Each table has a JSON form and a CSV form built from the same values. Numbers
//! are written in shortest round-trip form; non-finite or missing values become
//! `null` in JSON and `NA` in CSV.

use mixsel_core::mixture::{KSelection, KSelectionRow, RankEstimate};
use mixsel_core::selection::{common_edges, elasticity_report, histogram, DemandRows, ElasticityReport, FirmElasticity};
use serde::{Deserialize, Serialize};

use crate::config::{Column, SecondStageConfig};
use crate::estimation::ColumnOutcome;

pub fn fmt_num(v: Option<f64>) -> String {
    match v {
        Some(x) if x.is_finite() => x.to_string(),
        _ => "NA".into(),
    }
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

/// Goodness of fit for each `K`, with the BIC choice and the rank lower bound.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitTable {
    pub rows: Vec<KSelectionRow>,
    pub chosen_k: usize,
    pub rank: Option<RankEstimate>,
}

impl FitTable {
    pub fn new(selection: &KSelection, rank: Option<RankEstimate>) -> Self {
        Self { rows: selection.rows.clone(), chosen_k: selection.chosen_k, rank }
    }

    /// One column per `K`, one row per statistic.
    pub fn csv(&self) -> (Vec<String>, Vec<Vec<String>>) {
        let mut header = vec!["statistic".to_string()];
        header.extend(self.rows.iter().map(|r| format!("K={}", r.k)));
        let line = |name: &str, f: &dyn Fn(&KSelectionRow) -> String| {
            let mut v = vec![name.to_string()];
            v.extend(self.rows.iter().map(f));
            v
        };
        let rows = vec![
            line("observations", &|r| r.observations.to_string()),
            line("parameters", &|r| r.parameters.to_string()),
            line("log_likelihood", &|r| fmt_num(Some(r.loglik))),
            line("aic", &|r| fmt_num(Some(r.aic))),
            line("bic", &|r| fmt_num(Some(r.bic))),
            line("converged", &|r| r.converged.to_string()),
            line("restart_deficiency", &|r| r.restart_deficiency.to_string()),
            line("chosen", &|r| (r.k == self.chosen_k).to_string()),
        ];
        (header, rows)
    }
}

/// One estimator column of the demand table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DemandColumn {
    pub column: Column,
    pub label: String,
    pub estimates: Option<Vec<f64>>,
    pub se: Option<Vec<f64>>,
    pub bootstrap_se: Option<Vec<f64>>,
    /// Control columns implied by the specification before collinear ones are dropped.
    pub controls_specified: usize,
    pub controls_used: Option<usize>,
    pub n_instruments: Option<usize>,
    pub first_stage_f: Option<Vec<Option<f64>>>,
    pub cragg_donald: Option<f64>,
    pub identification_ratio: Option<f64>,
    pub n_obs: Option<usize>,
    pub warnings: Vec<String>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DemandTable {
    pub parameters: Vec<String>,
    pub columns: Vec<DemandColumn>,
}

impl DemandTable {
    /// `bootstrap` holds optional bootstrap standard errors per column. The specified
    /// control count follows the control-spec arithmetic for the column's first stage.
    pub fn new(
        outcomes: &[ColumnOutcome],
        parameters: Vec<String>,
        stage: &SecondStageConfig,
        n_firms: usize,
        bootstrap: &[Option<Vec<f64>>],
    ) -> Self {
        let columns = outcomes
            .iter()
            .enumerate()
            .map(|(i, o)| {
                let spec = o.column.demand_spec(stage, Vec::new());
                let controls_specified = spec.controls.n_controls(o.column.first_stage_k().unwrap_or(1), n_firms);
                let bootstrap_se = bootstrap.get(i).cloned().flatten();
                match &o.result {
                    Ok(r) => DemandColumn {
                        column: o.column,
                        label: o.column.label(),
                        estimates: Some(r.theta.clone()),
                        se: Some(r.se.clone()),
                        bootstrap_se,
                        controls_specified,
                        controls_used: Some(r.n_controls),
                        n_instruments: Some(r.n_instruments),
                        first_stage_f: Some(r.first_stage_f.iter().map(|&f| finite(f)).collect()),
                        cragg_donald: finite(r.cragg_donald),
                        identification_ratio: finite(r.identification_ratio),
                        n_obs: Some(r.n_obs),
                        warnings: r.warnings.clone(),
                        error: None,
                    },
                    Err(e) => DemandColumn {
                        column: o.column,
                        label: o.column.label(),
                        estimates: None,
                        se: None,
                        bootstrap_se,
                        controls_specified,
                        controls_used: None,
                        n_instruments: None,
                        first_stage_f: None,
                        cragg_donald: None,
                        identification_ratio: None,
                        n_obs: None,
                        warnings: Vec::new(),
                        error: Some(e.clone()),
                    },
                }
            })
            .collect();
        Self { parameters, columns }
    }

    /// Rows are statistics, columns are estimators.
    pub fn csv(&self) -> (Vec<String>, Vec<Vec<String>>) {
        let mut header = vec!["statistic".to_string()];
        header.extend(self.columns.iter().map(|c| c.label.clone()));
        let mut rows = Vec::new();
        let mut push = |name: String, f: &dyn Fn(&DemandColumn) -> String| {
            let mut v = vec![name];
            v.extend(self.columns.iter().map(f));
            rows.push(v);
        };
        for (i, p) in self.parameters.iter().enumerate() {
            push(p.clone(), &|c| fmt_num(c.estimates.as_ref().map(|e| e[i])));
            push(format!("se_{p}"), &|c| fmt_num(c.se.as_ref().map(|e| e[i])));
            if self.columns.iter().any(|c| c.bootstrap_se.is_some()) {
                push(format!("bootstrap_se_{p}"), &|c| fmt_num(c.bootstrap_se.as_ref().map(|e| e[i])));
            }
        }
        push("controls_specified".into(), &|c| c.controls_specified.to_string());
        push("controls_used".into(), &|c| c.controls_used.map_or("NA".into(), |v| v.to_string()));
        push("instruments".into(), &|c| c.n_instruments.map_or("NA".into(), |v| v.to_string()));
        for (k, name) in ["first_stage_f_price", "first_stage_f_within_share"].iter().enumerate() {
            push(name.to_string(), &|c| fmt_num(c.first_stage_f.as_ref().and_then(|f| f.get(k).copied().flatten())));
        }
        push("cragg_donald".into(), &|c| fmt_num(c.cragg_donald));
        push("identification_ratio".into(), &|c| fmt_num(c.identification_ratio));
        push("observations".into(), &|c| c.n_obs.map_or("NA".into(), |v| v.to_string()));
        (header, rows)
    }
}

/// Elasticity summaries of one estimator column (per-observation values omitted).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElasticityColumn {
    pub column: Column,
    pub label: String,
    pub alpha: f64,
    pub sigma: f64,
    pub per_firm: Vec<FirmElasticity>,
    pub pooled: FirmElasticity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElasticityTable {
    pub columns: Vec<ElasticityColumn>,
}

/// Per-column elasticity reports for every successful column, in column order.
pub fn elasticity_reports(outcomes: &[ColumnOutcome], rows: &DemandRows, n_firms: usize) -> Vec<(Column, ElasticityReport)> {
    outcomes
        .iter()
        .filter_map(|o| o.result.as_ref().ok().map(|r| (o.column, elasticity_report(r.alpha(), r.sigma(), rows, n_firms))))
        .collect()
}

impl ElasticityTable {
    pub fn new(reports: &[(Column, ElasticityReport)]) -> Self {
        let columns = reports
            .iter()
            .map(|(c, r)| ElasticityColumn {
                column: *c,
                label: c.label(),
                alpha: r.alpha,
                sigma: r.sigma,
                per_firm: r.per_firm.clone(),
                pooled: r.pooled.clone(),
            })
            .collect();
        Self { columns }
    }

    /// Long format: one row per (estimator, firm); firm 0 is the pooled row.
    pub fn csv(&self) -> (Vec<String>, Vec<Vec<String>>) {
        let header = ["estimator", "firm_id", "observations", "mean_elasticity", "mean_lerner", "lerner_of_mean", "undefined_lerner"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let mut rows = Vec::new();
        for c in &self.columns {
            for f in c.per_firm.iter().chain(std::iter::once(&c.pooled)) {
                rows.push(vec![
                    c.label.clone(),
                    f.firm_id.to_string(),
                    f.n_obs.to_string(),
                    fmt_num(Some(f.mean_elasticity)),
                    fmt_num(f.mean_lerner),
                    fmt_num(f.lerner_of_mean),
                    f.undefined_lerner.to_string(),
                ]);
            }
        }
        (header, rows)
    }
}

/// Histogram of per-observation elasticities on common bins, one count column per estimator.
pub fn histogram_csv(reports: &[(Column, ElasticityReport)], n_bins: usize) -> (Vec<String>, Vec<Vec<String>>) {
    let sets: Vec<&[f64]> = reports.iter().map(|(_, r)| r.elasticities.as_slice()).collect();
    let edges = common_edges(&sets, n_bins);
    let counts: Vec<Vec<usize>> = sets.iter().map(|s| histogram(s, &edges)).collect();
    let mut header = vec!["bin_lower".to_string(), "bin_upper".to_string()];
    header.extend(reports.iter().map(|(c, _)| c.label()));
    let rows = (0..edges.len().saturating_sub(1))
        .map(|b| {
            let mut v = vec![fmt_num(Some(edges[b])), fmt_num(Some(edges[b + 1]))];
            v.extend(counts.iter().map(|c| c[b].to_string()));
            v
        })
        .collect();
    (header, rows)
}
