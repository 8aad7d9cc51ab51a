//! Synthetic market panels from the full structural model.
//!
//! Per market: draw characteristics and size, draw the latent type `kappa`,
//! solve the entry game at `(x, kappa)`, draw private entry shocks and realized
//! `(xi, omega)` given `kappa`, then solve pricing among entrants. Entrants are
//! selected on `kappa`, which also shifts the mean of `xi`; this is the
//! selection channel the estimators must undo.
//!
//! Market `t` draws from its own stream `rng::stream(seed, MARKET, t)`. The
//! integration draws behind expected profits are fixed for the whole panel.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::demand::DemandParams;
use crate::equilibrium::{
    draw_unobservables, fixed_costs, logit, solve_bertrand, solve_bne, BertrandOptions, BneOptions,
    CostParams, EntryEquilibrium, ModelParams, ProfitTable, UnobservableDraw,
};
use crate::error::{Error, Result};
use crate::rng;

pub const PANEL_SCHEMA: &str = "mixsel.panel/1";
pub const TRUTH_SCHEMA: &str = "mixsel.truth/1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarRole {
    /// Enters mean utility (and possibly costs).
    Demand,
    /// Enters costs only; excluded from demand.
    Excluded,
}

/// One firm-level characteristic: `x_jv = mean + firm_means[j] + sd * N(0,1)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct XVar {
    pub name: String,
    pub role: VarRole,
    pub mean: f64,
    pub sd: f64,
    #[serde(default)]
    pub firm_means: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogNormalSpec {
    pub mean: f64,
    pub sd: f64,
}

fn default_draws() -> usize {
    200
}

fn yes() -> bool {
    true
}

/// Everything needed to generate a panel. All constants are explicit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DgpConfig {
    pub n_firms: usize,
    pub n_markets: usize,
    /// Type probabilities `f_kappa`; their count is the true number of types.
    pub type_probs: Vec<f64>,
    /// `beta` is over `[1, demand-role variables...]`.
    pub demand: DemandParams,
    pub cost: CostParams,
    pub x_vars: Vec<XVar>,
    /// Market size `H = exp(N(mean, sd^2))`.
    pub log_size: LogNormalSpec,
    /// Monte Carlo draws of `(xi, omega)` behind expected entry profits.
    #[serde(default = "default_draws")]
    pub draws: usize,
    /// Also solve the entry game for the types a market did not draw.
    #[serde(default = "yes")]
    pub record_type_ccps: bool,
    #[serde(default)]
    pub bertrand: BertrandOptions,
    #[serde(default)]
    pub bne: BneOptions,
    pub seed: u64,
}

impl DgpConfig {
    pub fn n_types(&self) -> usize {
        self.type_probs.len()
    }

    pub fn n_vars(&self) -> usize {
        self.x_vars.len()
    }

    pub fn demand_vars(&self) -> Vec<usize> {
        self.x_vars
            .iter()
            .enumerate()
            .filter(|(_, v)| v.role == VarRole::Demand)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn model_params(&self) -> ModelParams {
        ModelParams {
            demand: self.demand.clone(),
            demand_vars: self.demand_vars(),
            cost: self.cost.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_firms == 0 {
            return Err(Error::InvalidParameter("need at least one firm".into()));
        }
        if self.type_probs.is_empty() {
            return Err(Error::InvalidParameter("need at least one market type".into()));
        }
        if self.type_probs.iter().any(|p| !(*p >= 0.0)) || (self.type_probs.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter("type probabilities must lie in the simplex".into()));
        }
        if self.cost.type_xi_mean.len() != self.n_types() {
            return Err(Error::dim("type_xi_mean vs type_probs", self.n_types(), self.cost.type_xi_mean.len()));
        }
        for v in &self.x_vars {
            if !v.firm_means.is_empty() && v.firm_means.len() != self.n_firms {
                return Err(Error::dim("firm_means", self.n_firms, v.firm_means.len()));
            }
            if v.sd < 0.0 {
                return Err(Error::InvalidParameter(format!("negative sd for {}", v.name)));
            }
        }
        if !self.cost.fc_firm.is_empty() && self.cost.fc_firm.len() != self.n_firms {
            return Err(Error::dim("fc_firm", self.n_firms, self.cost.fc_firm.len()));
        }
        if self.log_size.sd < 0.0 {
            return Err(Error::InvalidParameter("negative log-size sd".into()));
        }
        self.model_params().validate(self.n_vars())
    }

    /// Identification requires a characteristic that shifts entry but not demand.
    pub fn validate_for_identification(&self) -> Result<()> {
        self.validate()?;
        if !self.x_vars.iter().any(|v| v.role == VarRole::Excluded) {
            return Err(Error::InvalidParameter(
                "identification needs at least one characteristic excluded from demand".into(),
            ));
        }
        Ok(())
    }
}

/// Observed data for one market. Prices and shares exist only for entrants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarketObservation {
    pub market_id: usize,
    /// Market size `H`.
    pub size: f64,
    /// Characteristics, one row per firm.
    pub x: Vec<Vec<f64>>,
    pub entered: Vec<bool>,
    pub prices: Vec<Option<f64>>,
    pub shares: Vec<Option<f64>>,
    pub s0: f64,
}

impl MarketObservation {
    pub fn n_firms(&self) -> usize {
        self.entered.len()
    }

    pub fn n_entrants(&self) -> usize {
        self.entered.iter().filter(|&&a| a).count()
    }
}

/// Ground truth retained by the simulator; never part of the observed data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarketTruth {
    pub market_id: usize,
    /// 0-based latent type.
    pub kappa: usize,
    pub xi: Vec<f64>,
    pub omega: Vec<f64>,
    pub eta: Vec<f64>,
    pub marginal_cost: Vec<f64>,
    /// Equilibrium entry probabilities at the realized type.
    pub entry_probs: Vec<f64>,
    /// Equilibrium entry probabilities for every type (`type_ccps[kappa][j]`), if recorded.
    pub type_ccps: Option<Vec<Vec<f64>>>,
    pub prices: Vec<Option<f64>>,
    pub shares: Vec<Option<f64>>,
    pub bne_residual: f64,
    pub bne_iterations: usize,
    /// Largest pricing first-order residual over the realized market and all integration solves.
    pub foc_residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DroppedMarket {
    pub market_id: usize,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FirmEntrySummary {
    pub firm_id: usize,
    pub entries: usize,
    pub frequency: f64,
    /// Mean of the true equilibrium entry probability at the realized type.
    pub mean_true_prob: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntrySummary {
    pub markets: usize,
    pub dropped: usize,
    pub firms: Vec<FirmEntrySummary>,
    /// Share of markets with `n` entrants, `n = 0..=J`.
    pub entrant_count_distribution: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimulatedPanel {
    pub config: DgpConfig,
    pub observations: Vec<MarketObservation>,
    pub truth: Vec<MarketTruth>,
    pub dropped: Vec<DroppedMarket>,
}

/// Characteristics and size for one market.
#[derive(Clone, Debug, PartialEq)]
pub struct MarketCovariates {
    pub x: Vec<Vec<f64>>,
    pub size: f64,
}

pub fn draw_covariates<R: Rng + ?Sized>(config: &DgpConfig, rng: &mut R) -> MarketCovariates {
    let x = (0..config.n_firms)
        .map(|j| {
            config
                .x_vars
                .iter()
                .map(|v| {
                    let shift = v.firm_means.get(j).copied().unwrap_or(0.0);
                    let z: f64 = StandardNormal.sample(rng);
                    v.mean + shift + v.sd * z
                })
                .collect()
        })
        .collect();
    let z: f64 = StandardNormal.sample(rng);
    MarketCovariates {
        x,
        size: (config.log_size.mean + config.log_size.sd * z).exp(),
    }
}

fn draw_type<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    probs.len() - 1
}

/// Panel-wide simulation state: the structural parameters and the integration
/// draws behind expected entry profits.
///
/// The draws are shared by every market and every type so that entry probabilities
/// are a deterministic function of `(x, H, kappa)`. Types reuse the same standard
/// normals shifted by their own mean (common random numbers).
#[derive(Clone, Debug)]
pub struct Simulator {
    pub config: DgpConfig,
    pub params: ModelParams,
    draws: Vec<Vec<UnobservableDraw>>,
}

impl Simulator {
    pub fn new(config: &DgpConfig) -> Result<Self> {
        config.validate()?;
        let params = config.model_params();
        let draws = (0..config.n_types())
            .map(|k| {
                let mut r = rng::stream(config.seed, rng::tag::INTEGRATION, 0);
                draw_unobservables(k, config.n_firms, &params.cost, config.draws, &mut r)
            })
            .collect();
        Ok(Self { config: config.clone(), params, draws })
    }

    /// Equilibrium entry probabilities at `(x, H, kappa)` and the largest pricing residual met.
    pub fn type_equilibrium(&self, cov: &MarketCovariates, kappa: usize) -> Result<(EntryEquilibrium, f64)> {
        let table = ProfitTable::build(&cov.x, &self.params, cov.size, &self.draws[kappa], &self.config.bertrand)?;
        let eq = solve_bne(&table, &fixed_costs(&cov.x, &self.params), &self.config.bne)?;
        Ok((eq, table.max_foc_residual))
    }

    /// Simulate one market given its covariates.
    pub fn simulate_market<R: Rng + ?Sized>(
        &self,
        market_id: usize,
        cov: &MarketCovariates,
        rng: &mut R,
    ) -> Result<(MarketObservation, MarketTruth)> {
        let config = &self.config;
        let params = &self.params;
        let n = config.n_firms;
        let kappa = draw_type(&config.type_probs, rng);

        let (eq, mut foc_residual) = self.type_equilibrium(cov, kappa)?;
        let type_ccps = if config.record_type_ccps {
            let mut all = Vec::with_capacity(config.n_types());
            for k in 0..config.n_types() {
                if k == kappa {
                    all.push(eq.probs.clone());
                } else {
                    let (other, res) = self.type_equilibrium(cov, k)?;
                    foc_residual = foc_residual.max(res);
                    all.push(other.probs);
                }
            }
            Some(all)
        } else {
            None
        };

        let eta: Vec<f64> = (0..n)
            .map(|_| {
                let u: f64 = rng.random_range(f64::EPSILON..1.0);
                (u / (1.0 - u)).ln()
            })
            .collect();
        let entered: Vec<bool> = eta.iter().zip(&eq.probs).map(|(e, p)| *e <= logit(*p)).collect();

        let mu = config.cost.type_xi_mean[kappa];
        let xi: Vec<f64> = (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                mu + config.cost.xi_sd * z
            })
            .collect();
        let omega: Vec<f64> = (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                config.cost.omega_sd * z
            })
            .collect();

        let outcome = solve_bertrand(&entered, &cov.x, &xi, &omega, params, cov.size, &config.bertrand)?;
        foc_residual = foc_residual.max(outcome.residual);
        let shares: Vec<Option<f64>> = (0..n).map(|j| entered[j].then_some(outcome.shares[j])).collect();
        let marginal_cost = (0..n).map(|j| params.marginal_cost(&cov.x[j], omega[j])).collect();

        let obs = MarketObservation {
            market_id,
            size: cov.size,
            x: cov.x.clone(),
            entered,
            prices: outcome.prices.clone(),
            shares: shares.clone(),
            s0: outcome.s0,
        };
        let truth = MarketTruth {
            market_id,
            kappa,
            xi,
            omega,
            eta,
            marginal_cost,
            entry_probs: eq.probs,
            type_ccps,
            prices: outcome.prices,
            shares,
            bne_residual: eq.residual,
            bne_iterations: eq.iterations,
            foc_residual,
        };
        Ok((obs, truth))
    }
}

/// Simulate one market with a fresh [`Simulator`]; prefer reusing a simulator for many markets.
pub fn simulate_market<R: Rng + ?Sized>(
    market_id: usize,
    cov: &MarketCovariates,
    config: &DgpConfig,
    rng: &mut R,
) -> Result<(MarketObservation, MarketTruth)> {
    Simulator::new(config)?.simulate_market(market_id, cov, rng)
}

/// Simulate `config.n_markets` independent markets. Markets whose solvers fail are
/// dropped and listed; the rest keep their ids (`1..=T`).
pub fn simulate_panel(config: &DgpConfig) -> Result<SimulatedPanel> {
    let sim = Simulator::new(config)?;
    let results: Vec<_> = (0..config.n_markets)
        .into_par_iter()
        .map(|t| {
            let mut r = rng::stream(config.seed, rng::tag::MARKET, t as u64);
            let cov = draw_covariates(config, &mut r);
            sim.simulate_market(t + 1, &cov, &mut r)
        })
        .collect();
    let mut panel = SimulatedPanel {
        config: config.clone(),
        observations: Vec::with_capacity(results.len()),
        truth: Vec::with_capacity(results.len()),
        dropped: Vec::new(),
    };
    for (t, res) in results.into_iter().enumerate() {
        match res {
            Ok((o, tr)) => {
                panel.observations.push(o);
                panel.truth.push(tr);
            }
            Err(e) => panel.dropped.push(DroppedMarket { market_id: t + 1, reason: e.to_string() }),
        }
    }
    Ok(panel)
}

impl SimulatedPanel {
    pub fn drop_rate(&self) -> f64 {
        let total = self.observations.len() + self.dropped.len();
        if total == 0 {
            0.0
        } else {
            self.dropped.len() as f64 / total as f64
        }
    }

    pub fn entry_summary(&self) -> EntrySummary {
        let n = self.config.n_firms;
        let t = self.observations.len();
        let firms = (0..n)
            .map(|j| {
                let entries = self.observations.iter().filter(|o| o.entered[j]).count();
                let mean_true_prob = if t == 0 {
                    0.0
                } else {
                    self.truth.iter().map(|m| m.entry_probs[j]).sum::<f64>() / t as f64
                };
                FirmEntrySummary {
                    firm_id: j + 1,
                    entries,
                    frequency: if t == 0 { 0.0 } else { entries as f64 / t as f64 },
                    mean_true_prob,
                }
            })
            .collect();
        let mut counts = vec![0.0; n + 1];
        for o in &self.observations {
            counts[o.n_entrants()] += 1.0;
        }
        if t > 0 {
            counts.iter_mut().for_each(|c| *c /= t as f64);
        }
        EntrySummary {
            markets: t,
            dropped: self.dropped.len(),
            firms,
            entrant_count_distribution: counts,
        }
    }

    /// Truth sidecar as a JSON value.
    pub fn truth_document(&self) -> TruthDocument {
        TruthDocument {
            schema: TRUTH_SCHEMA.to_string(),
            panel_schema: PANEL_SCHEMA.to_string(),
            config: self.config.clone(),
            markets: self.truth.clone(),
            dropped: self.dropped.clone(),
            entry_summary: self.entry_summary(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthDocument {
    pub schema: String,
    pub panel_schema: String,
    pub config: DgpConfig,
    pub markets: Vec<MarketTruth>,
    pub dropped: Vec<DroppedMarket>,
    pub entry_summary: EntrySummary,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Write the panel CSV: one row per firm-market with columns
/// `market_id, firm_id, a, p, s, s0, H, x_1..x_k`. Price and share are empty for non-entrants.
pub fn write_panel_csv<W: Write>(observations: &[MarketObservation], n_vars: usize, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = ["market_id", "firm_id", "a", "p", "s", "s0", "H"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend((1..=n_vars).map(|k| format!("x_{k}")));
    w.write_record(&header)?;
    for o in observations {
        for j in 0..o.n_firms() {
            let mut row = vec![
                o.market_id.to_string(),
                (j + 1).to_string(),
                u8::from(o.entered[j]).to_string(),
                fmt_opt(o.prices[j]),
                fmt_opt(o.shares[j]),
                o.s0.to_string(),
                o.size.to_string(),
            ];
            row.extend(o.x[j].iter().map(|v| v.to_string()));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_panel_csv_file(observations: &[MarketObservation], n_vars: usize, path: &Path) -> Result<()> {
    let f = std::fs::File::create(path)?;
    write_panel_csv(observations, n_vars, std::io::BufWriter::new(f))
}

fn parse_f64(field: &str, what: &str, line: usize) -> Result<f64> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|_| Error::Data(format!("row {line}: cannot parse {what} from {field:?}")))
}

/// Read a panel CSV written by [`write_panel_csv`]. Markets keep file order.
pub fn read_panel_csv<R: Read>(reader: R) -> Result<Vec<MarketObservation>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let header = rdr.headers()?.clone();
    let fixed = ["market_id", "firm_id", "a", "p", "s", "s0", "H"];
    if header.len() < fixed.len() || header.iter().zip(fixed).any(|(h, f)| h != f) {
        return Err(Error::Data(format!("unexpected panel header {:?}", header)));
    }
    let n_vars = header.len() - fixed.len();
    for (k, h) in header.iter().skip(fixed.len()).enumerate() {
        if h != format!("x_{}", k + 1) {
            return Err(Error::Data(format!("unexpected characteristic column {h:?}")));
        }
    }

    let mut markets: Vec<MarketObservation> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let market_id: usize = rec[0].parse().map_err(|_| Error::Data(format!("row {line}: bad market_id")))?;
        let firm_id: usize = rec[1].parse().map_err(|_| Error::Data(format!("row {line}: bad firm_id")))?;
        let entered = match &rec[2] {
            "1" => true,
            "0" => false,
            other => return Err(Error::Data(format!("row {line}: entry flag {other:?}"))),
        };
        let opt = |s: &str, what: &str| -> Result<Option<f64>> {
            if s.trim().is_empty() {
                Ok(None)
            } else {
                parse_f64(s, what, line).map(Some)
            }
        };
        let price = opt(&rec[3], "p")?;
        let share = opt(&rec[4], "s")?;
        if entered != price.is_some() || entered != share.is_some() {
            return Err(Error::Data(format!("row {line}: price/share must be present iff a = 1")));
        }
        let s0 = parse_f64(&rec[5], "s0", line)?;
        let size = parse_f64(&rec[6], "H", line)?;
        let x = (0..n_vars)
            .map(|k| parse_f64(&rec[7 + k], "x", line))
            .collect::<Result<Vec<_>>>()?;

        let new_market = markets.last().map_or(true, |m| m.market_id != market_id);
        if new_market {
            markets.push(MarketObservation {
                market_id,
                size,
                x: Vec::new(),
                entered: Vec::new(),
                prices: Vec::new(),
                shares: Vec::new(),
                s0,
            });
        }
        let m = markets.last_mut().expect("market pushed above");
        if firm_id != m.entered.len() + 1 {
            return Err(Error::Data(format!("row {line}: firms must be listed 1..J in order")));
        }
        m.x.push(x);
        m.entered.push(entered);
        m.prices.push(price);
        m.shares.push(share);
    }
    if let Some(first) = markets.first() {
        let j = first.n_firms();
        if let Some(bad) = markets.iter().find(|m| m.n_firms() != j) {
            return Err(Error::Data(format!("market {} has {} firms, expected {j}", bad.market_id, bad.n_firms())));
        }
    }
    Ok(markets)
}

pub fn read_panel_csv_file(path: &Path) -> Result<Vec<MarketObservation>> {
    read_panel_csv(std::io::BufReader::new(std::fs::File::open(path)?))
}
