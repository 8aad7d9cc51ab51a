//! Subcommands. Each reads its inputs, writes its outputs into
//! `config.output_dir` together with `config.json` and `manifest.json`, and
//! returns the manifest.

use std::collections::BTreeMap;
use std::path::Path;

use mixsel_core::mixture::{rank_estimate_k, select_k, EntryData, MixtureFit, MixtureModel};
use mixsel_core::rng::{derive_seed, tag};
use mixsel_core::selection::{bootstrap_se, BootstrapOptions};
use mixsel_core::simulate::{read_panel_csv_file, simulate_panel, write_panel_csv, SimulatedPanel};
use mixsel_core::MarketObservation;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::estimation::{complete_first_stages, demand_rows, em_options, estimate_columns, required_ks, ColumnOutcome};
use crate::manifest::{Manifest, OutputDir};
use crate::montecarlo::{check_failures, records_csv, run_montecarlo, McSummary};
use crate::tables::{elasticity_reports, histogram_csv, DemandTable, ElasticityTable, FitTable};

pub const PANEL_FILE: &str = "panel.csv";
pub const TRUTH_FILE: &str = "truth.json";
pub const ENTRY_SUMMARY_FILE: &str = "entry_summary.csv";
pub const FIT_TABLE: &str = "table3";
pub const DEMAND_TABLE: &str = "table4";
pub const ELASTICITY_TABLE: &str = "table5";
pub const HISTOGRAM_FILE: &str = "elasticity_histogram.csv";
pub const ESTIMATES_FILE: &str = "estimates.json";
pub const MC_SUMMARY: &str = "mc_summary";
pub const MC_REPLICATIONS_FILE: &str = "mc_replications.csv";
pub const REPORT_FILE: &str = "report.md";

pub fn mixture_file(k: usize) -> String {
    format!("mixture_k{k}.json")
}

fn load_panel(out: &mut OutputDir, path: &Path) -> CliResult<Vec<MarketObservation>> {
    out.add_input(path)?;
    let obs = read_panel_csv_file(path)?;
    if obs.is_empty() {
        return Err(CliError::Core(mixsel_core::Error::Data(format!("{} has no markets", path.display()))));
    }
    Ok(obs)
}

fn write_table(out: &mut OutputDir, stem: &str, json: &impl Serialize, csv: (Vec<String>, Vec<Vec<String>>)) -> CliResult<()> {
    out.write_json(&format!("{stem}.json"), json)?;
    out.write_csv(&format!("{stem}.csv"), &csv.0, &csv.1)?;
    Ok(())
}

/// Simulate a panel; writes the panel CSV, the truth sidecar and per-firm entry
/// frequencies. A drop rate above `max_drop_rate` is a solver-failure error after
/// the outputs are written.
pub fn cmd_simulate(cfg: &RunConfig) -> CliResult<Manifest> {
    let panel = simulate_panel(&cfg.dgp)?;
    let mut out = OutputDir::create(&cfg.output_dir)?;
    write_simulation(&mut out, &panel)?;
    let manifest = out.finish("simulate", cfg)?;
    if panel.drop_rate() > cfg.max_drop_rate {
        return Err(CliError::Threshold(format!(
            "{} of {} markets dropped by solver failures",
            panel.dropped.len(),
            cfg.dgp.n_markets
        )));
    }
    Ok(manifest)
}

fn write_simulation(out: &mut OutputDir, panel: &SimulatedPanel) -> CliResult<()> {
    let mut bytes = Vec::new();
    write_panel_csv(&panel.observations, panel.config.n_vars(), &mut bytes)?;
    out.write_bytes(PANEL_FILE, &bytes)?;
    out.write_json(TRUTH_FILE, &panel.truth_document())?;
    let summary = panel.entry_summary();
    let header: Vec<String> = ["firm_id", "entries", "frequency", "mean_true_prob"].iter().map(|s| s.to_string()).collect();
    let rows: Vec<Vec<String>> = summary
        .firms
        .iter()
        .map(|f| vec![f.firm_id.to_string(), f.entries.to_string(), f.frequency.to_string(), f.mean_true_prob.to_string()])
        .collect();
    out.write_csv(ENTRY_SUMMARY_FILE, &header, &rows)?;
    Ok(())
}

fn k_selection(cfg: &RunConfig, data: &EntryData) -> CliResult<(mixsel_core::mixture::KSelection, FitTable)> {
    let stage = &cfg.first_stage;
    let opts = mixsel_core::EmOptions { seed: cfg.seed, ..stage.em.clone() };
    let selection = select_k(data, &stage.k_range, &stage.basis, &opts)?;
    let rank = rank_estimate_k(data, stage.rank_threshold).ok();
    let table = FitTable::new(&selection, rank);
    Ok((selection, table))
}

/// Fit the mixture entry model for every `K` in `first_stage.k_range`; writes one
/// fit per `K` and the goodness-of-fit table.
pub fn cmd_fit_entry(cfg: &RunConfig, panel: &Path) -> CliResult<Manifest> {
    let mut out = OutputDir::create(&cfg.output_dir)?;
    let obs = load_panel(&mut out, panel)?;
    let data = EntryData::from_observations(&obs)?;
    let (selection, table) = k_selection(cfg, &data)?;
    for fit in &selection.fits {
        out.write_json(&mixture_file(fit.k()), fit)?;
    }
    let csv = table.csv();
    write_table(&mut out, FIT_TABLE, &table, csv)?;
    out.finish("fit-entry", cfg)
}

/// Choose `K` by BIC; writes the goodness-of-fit table only.
pub fn cmd_select_k(cfg: &RunConfig, panel: &Path) -> CliResult<Manifest> {
    let mut out = OutputDir::create(&cfg.output_dir)?;
    let obs = load_panel(&mut out, panel)?;
    let data = EntryData::from_observations(&obs)?;
    let (_, table) = k_selection(cfg, &data)?;
    let csv = table.csv();
    write_table(&mut out, FIT_TABLE, &table, csv)?;
    out.finish("select-k", cfg)
}

/// A first-stage file holds either a full fit or a bare model.
fn load_model(path: &Path) -> CliResult<MixtureModel> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    if let Ok(fit) = serde_json::from_str::<MixtureFit>(&text) {
        return Ok(fit.model);
    }
    let model: MixtureModel = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}: not a mixture fit or model: {e}", path.display())))?;
    model.validate()?;
    Ok(model)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct EstimatesDocument {
    columns: Vec<ColumnEstimate>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ColumnEstimate {
    column: crate::config::Column,
    label: String,
    result: Option<mixsel_core::GmmResult>,
    error: Option<String>,
    bootstrap: Option<mixsel_core::selection::BootstrapResult>,
}

/// Estimate every configured column. First stages come from `first_stages`
/// (output of `fit-entry`) where available and are fitted otherwise.
pub fn cmd_estimate_demand(cfg: &RunConfig, panel: &Path, first_stages: &[std::path::PathBuf]) -> CliResult<Manifest> {
    let mut out = OutputDir::create(&cfg.output_dir)?;
    let obs = load_panel(&mut out, panel)?;
    let data = EntryData::from_observations(&obs)?;
    let mut given = BTreeMap::new();
    for path in first_stages {
        out.add_input(path)?;
        let model = load_model(path)?;
        given.insert(model.k, model);
    }
    let ks = required_ks(&cfg.second_stage.columns);
    let models = complete_first_stages(&data, &ks, given, &cfg.first_stage, cfg.seed)?;
    let outcomes = estimate_columns(&obs, &models, cfg);
    let boots = bootstrap_columns(cfg, &obs, &models, &outcomes)?;

    let n_firms = data.n_firms();
    let params = mixsel_core::selection::pipeline::theta_names(&cfg.demand_vars());
    let boot_se: Vec<Option<Vec<f64>>> = boots.iter().map(|b| b.as_ref().map(|b| b.se.clone())).collect();
    let table = DemandTable::new(&outcomes, params, &cfg.second_stage, n_firms, &boot_se);
    let csv = table.csv();
    write_table(&mut out, DEMAND_TABLE, &table, csv)?;

    let rows = demand_rows(&obs)?;
    let reports = elasticity_reports(&outcomes, &rows, n_firms);
    let etable = ElasticityTable::new(&reports);
    let csv = etable.csv();
    write_table(&mut out, ELASTICITY_TABLE, &etable, csv)?;
    let (h, r) = histogram_csv(&reports, cfg.second_stage.histogram_bins);
    out.write_csv(HISTOGRAM_FILE, &h, &r)?;

    let doc = EstimatesDocument {
        columns: outcomes
            .iter()
            .zip(boots)
            .map(|(o, bootstrap)| ColumnEstimate {
                column: o.column,
                label: o.column.label(),
                result: o.result.as_ref().ok().cloned(),
                error: o.result.as_ref().err().cloned(),
                bootstrap,
            })
            .collect(),
    };
    out.write_json(ESTIMATES_FILE, &doc)?;
    out.finish("estimate-demand", cfg)
}

fn bootstrap_columns(
    cfg: &RunConfig,
    obs: &[MarketObservation],
    models: &BTreeMap<usize, MixtureModel>,
    outcomes: &[ColumnOutcome],
) -> CliResult<Vec<Option<mixsel_core::selection::BootstrapResult>>> {
    let stage = &cfg.second_stage;
    if stage.bootstrap_replicates == 0 {
        return Ok(vec![None; outcomes.len()]);
    }
    outcomes
        .iter()
        .enumerate()
        .map(|(i, o)| {
            if o.result.is_err() {
                return Ok(None);
            }
            let k = o.column.first_stage_k();
            let opts = BootstrapOptions {
                replicates: stage.bootstrap_replicates,
                seed: derive_seed(cfg.seed, tag::BOOTSTRAP, i as u64),
                em: em_options(&cfg.first_stage, cfg.seed, k.unwrap_or(1)),
                max_failure_rate: stage.bootstrap_max_failure_rate,
            };
            let spec = o.column.demand_spec(stage, cfg.demand_vars());
            match bootstrap_se(obs, k.and_then(|k| models.get(&k)), &spec, &opts) {
                Ok(b) => Ok(Some(b)),
                Err(mixsel_core::Error::Estimation(msg)) => Err(CliError::Threshold(format!("{}: {msg}", o.column.label()))),
                Err(e) => Err(e.into()),
            }
        })
        .collect()
}

/// Run the Monte Carlo experiment; exceeding `montecarlo.max_failure_rate` is a
/// solver-failure error after the outputs are written.
pub fn cmd_montecarlo(cfg: &RunConfig) -> CliResult<(Manifest, McSummary)> {
    let run = run_montecarlo(cfg);
    let mut out = OutputDir::create(&cfg.output_dir)?;
    let csv = run.summary.csv();
    write_table(&mut out, MC_SUMMARY, &run.summary, csv)?;
    let (h, r) = records_csv(cfg, &run.records);
    out.write_csv(MC_REPLICATIONS_FILE, &h, &r)?;
    let manifest = out.finish("montecarlo", cfg)?;
    check_failures(cfg, &run.summary)?;
    Ok((manifest, run.summary))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<Option<T>> {
    if !path.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text)
        .map(Some)
        .map_err(|e| CliError::Core(mixsel_core::Error::Data(format!("{}: {e}", path.display()))))
}

fn markdown(header: &[String], rows: &[Vec<String>]) -> String {
    let mut s = format!("| {} |\n", header.join(" | "));
    s.push_str(&format!("|{}\n", "---|".repeat(header.len())));
    for r in rows {
        s.push_str(&format!("| {} |\n", r.join(" | ")));
    }
    s
}

/// Render whichever tables exist in `input` as one markdown report, written to
/// the output directory and returned.
pub fn cmd_report(cfg: &RunConfig, input: &Path) -> CliResult<(Manifest, String)> {
    let mut out = OutputDir::create(&cfg.output_dir)?;
    let mut text = String::from("# mixsel report\n");
    let mut found = false;
    let mut section = |out: &mut OutputDir, title: &str, file: &str, csv: Option<(Vec<String>, Vec<Vec<String>>)>| -> CliResult<()> {
        if let Some((h, r)) = csv {
            out.add_input(&input.join(file))?;
            text.push_str(&format!("\n## {title}\n\n{}", markdown(&h, &r)));
            found = true;
        }
        Ok(())
    };
    let fit: Option<FitTable> = read_json(&input.join(format!("{FIT_TABLE}.json")))?;
    section(&mut out, "Goodness of fit by number of types", &format!("{FIT_TABLE}.json"), fit.map(|t| t.csv()))?;
    let demand: Option<DemandTable> = read_json(&input.join(format!("{DEMAND_TABLE}.json")))?;
    section(&mut out, "Demand estimates", &format!("{DEMAND_TABLE}.json"), demand.map(|t| t.csv()))?;
    let el: Option<ElasticityTable> = read_json(&input.join(format!("{ELASTICITY_TABLE}.json")))?;
    section(&mut out, "Own-price elasticities and Lerner indexes", &format!("{ELASTICITY_TABLE}.json"), el.map(|t| t.csv()))?;
    let mc: Option<McSummary> = read_json(&input.join(format!("{MC_SUMMARY}.json")))?;
    let mc_title = mc.as_ref().map(|m| format!("Monte Carlo summary ({} of {} replications)", m.replications, m.requested));
    section(&mut out, mc_title.as_deref().unwrap_or(""), &format!("{MC_SUMMARY}.json"), mc.map(|t| t.csv()))?;
    if !found {
        return Err(CliError::Config(format!("no result tables found in {}", input.display())));
    }
    out.write_bytes(REPORT_FILE, text.as_bytes())?;
    let manifest = out.finish("report", cfg)?;
    Ok((manifest, text))
}
