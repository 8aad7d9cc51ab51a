//! Run configuration.
//!
//! A configuration is one JSON document. Loading starts from the serialized
//! defaults, deep-merges the file over them, then applies `key.path=value`
//! overrides, so every numeric setting is explicit in the effective config and
//! unknown keys are rejected at any depth.

use std::fmt;
use std::path::{Path, PathBuf};

use mixsel_core::equilibrium::{BertrandOptions, BneOptions};
use mixsel_core::mixture::{BasisSpec, EmOptions};
use mixsel_core::selection::{ControlFamily, ControlSpec, DemandSpec, Estimator, InstrumentSet};
use mixsel_core::simulate::{LogNormalSpec, VarRole, XVar};
use mixsel_core::{CostParams, DemandParams, DgpConfig};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{CliError, CliResult};

/// One estimator column of the demand tables.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Column {
    /// Price and within share treated as exogenous, no controls.
    Ols,
    /// 2SLS without selection controls.
    Tsls,
    /// 2SLS with the one-type `Euler - ln P` control.
    Heckman,
    /// 2SLS with powers of the one-type control.
    Semiparametric,
    /// 2SLS with finite-mixture controls from a `k`-type first stage.
    Mixture(usize),
}

impl Column {
    /// Number of types of the first stage this column needs, if any.
    pub fn first_stage_k(self) -> Option<usize> {
        match self {
            Column::Ols | Column::Tsls => None,
            Column::Heckman | Column::Semiparametric => Some(1),
            Column::Mixture(k) => Some(k),
        }
    }

    pub fn label(self) -> String {
        match self {
            Column::Ols => "OLS".into(),
            Column::Tsls => "2SLS".into(),
            Column::Heckman => "2SLS+Heckman".into(),
            Column::Semiparametric => "2SLS+Semi-P".into(),
            Column::Mixture(k) => format!("2SLS+Fin-Mix K={k}"),
        }
    }

    pub fn demand_spec(self, stage: &SecondStageConfig, demand_vars: Vec<usize>) -> DemandSpec {
        let (estimator, family) = match self {
            Column::Ols => (Estimator::Ols, ControlFamily::None),
            Column::Tsls => (Estimator::Tsls, ControlFamily::None),
            Column::Heckman => (Estimator::Tsls, ControlFamily::HeckmanLogit),
            Column::Semiparametric => (Estimator::Tsls, ControlFamily::Semiparametric),
            Column::Mixture(_) => (Estimator::Tsls, ControlFamily::Mixture),
        };
        DemandSpec {
            estimator,
            controls: ControlSpec { family, l_psi: stage.l_psi, per_firm: stage.per_firm },
            instruments: stage.instruments,
            demand_vars,
            firm_effects: stage.firm_effects,
        }
    }
}

impl fmt::Display for Column {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Column::Ols => write!(f, "ols"),
            Column::Tsls => write!(f, "2sls"),
            Column::Heckman => write!(f, "heckman"),
            Column::Semiparametric => write!(f, "semiparametric"),
            Column::Mixture(k) => write!(f, "mixture:{k}"),
        }
    }
}

impl From<Column> for String {
    fn from(c: Column) -> Self {
        c.to_string()
    }
}

impl TryFrom<String> for Column {
    type Error = String;

    fn try_from(s: String) -> Result<Self, String> {
        match s.as_str() {
            "ols" => Ok(Column::Ols),
            "2sls" => Ok(Column::Tsls),
            "heckman" => Ok(Column::Heckman),
            "semiparametric" => Ok(Column::Semiparametric),
            other => match other.strip_prefix("mixture:").map(str::parse::<usize>) {
                Some(Ok(k)) if k >= 1 => Ok(Column::Mixture(k)),
                _ => Err(format!(
                    "unknown column {other:?}; expected ols, 2sls, heckman, semiparametric or mixture:<K>"
                )),
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FirstStageConfig {
    /// Numbers of types fitted by `fit-entry` and `select-k`.
    pub k_range: Vec<usize>,
    pub basis: BasisSpec,
    /// EM settings; the seed is replaced by one derived from the run seed.
    pub em: EmOptions,
    /// Cutoff on `sigma_k / sigma_1` for the rank lower bound.
    pub rank_threshold: f64,
}

impl Default for FirstStageConfig {
    fn default() -> Self {
        Self {
            k_range: vec![1, 2, 3, 4],
            basis: BasisSpec::default(),
            em: EmOptions { n_restarts: 5, accelerate: true, ..EmOptions::default() },
            rank_threshold: mixsel_core::mixture::rank::DEFAULT_RATIO_THRESHOLD,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SecondStageConfig {
    pub columns: Vec<Column>,
    /// Polynomial order of the semiparametric and mixture controls.
    pub l_psi: usize,
    /// Separate control coefficients per firm.
    pub per_firm: bool,
    pub instruments: InstrumentSet,
    /// Characteristics (0-based) entering mean utility; `None` takes the
    /// demand-role variables of `dgp`.
    pub demand_vars: Option<Vec<usize>>,
    pub firm_effects: bool,
    /// Pairs-bootstrap replicates for standard errors; 0 disables the bootstrap.
    pub bootstrap_replicates: usize,
    pub bootstrap_max_failure_rate: f64,
    /// Bins of the elasticity histogram.
    pub histogram_bins: usize,
}

impl Default for SecondStageConfig {
    fn default() -> Self {
        Self {
            columns: vec![
                Column::Ols,
                Column::Tsls,
                Column::Heckman,
                Column::Semiparametric,
                Column::Mixture(2),
                Column::Mixture(3),
            ],
            l_psi: 3,
            per_firm: true,
            instruments: InstrumentSet::RivalCharacteristics,
            demand_vars: None,
            firm_effects: true,
            bootstrap_replicates: 0,
            bootstrap_max_failure_rate: 0.1,
            histogram_bins: 40,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MonteCarloConfig {
    pub replications: usize,
    /// Fail the run (exit code 3) when more than this share of replications fail.
    pub max_failure_rate: f64,
}

impl Default for MonteCarloConfig {
    fn default() -> Self {
        Self { replications: 50, max_failure_rate: 0.1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Master seed. It replaces `dgp.seed` and every other component seed.
    pub seed: u64,
    pub output_dir: PathBuf,
    /// A simulated panel dropping more than this share of markets is a solver failure.
    pub max_drop_rate: f64,
    pub dgp: DgpConfig,
    pub first_stage: FirstStageConfig,
    pub second_stage: SecondStageConfig,
    pub montecarlo: MonteCarloConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            output_dir: PathBuf::from("out"),
            max_drop_rate: 0.01,
            dgp: standard_dgp(),
            first_stage: FirstStageConfig::default(),
            second_stage: SecondStageConfig::default(),
            montecarlo: MonteCarloConfig::default(),
        }
    }
}

/// Five firms, two equally informative market types with opposite demand shocks,
/// one demand characteristic and two cost shifters excluded from demand.
pub fn standard_dgp() -> DgpConfig {
    let var = |name: &str, role| XVar { name: name.into(), role, mean: 0.0, sd: 0.5, firm_means: Vec::new() };
    DgpConfig {
        n_firms: 5,
        n_markets: 2_000,
        type_probs: vec![0.6, 0.4],
        demand: DemandParams { alpha: -2.0, beta: vec![-3.0, 1.0], sigma: 0.5 },
        cost: CostParams {
            mc_x: vec![1.0, 0.0, 0.5, 0.0],
            omega_sd: 0.2,
            fc_x: vec![3.0, 0.0, 0.0, 1.0],
            fc_firm: Vec::new(),
            type_xi_mean: vec![-1.0, 1.0],
            xi_sd: 0.3,
        },
        x_vars: vec![
            var("quality", VarRole::Demand),
            var("mc_shifter", VarRole::Excluded),
            var("fc_shifter", VarRole::Excluded),
        ],
        log_size: LogNormalSpec { mean: 8.0, sd: 0.3 },
        draws: 20,
        record_type_ccps: true,
        bertrand: BertrandOptions::default(),
        bne: BneOptions::default(),
        seed: 1,
    }
}

impl RunConfig {
    /// Defaults, then `file` (if any), then `overrides` of the form `a.b.c=value`.
    /// Values parse as JSON and fall back to plain strings.
    pub fn load(file: Option<&Path>, overrides: &[String]) -> CliResult<Self> {
        let mut value = serde_json::to_value(Self::default()).expect("config serializes");
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            let doc: Value = serde_json::from_str(&text)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            merge(&mut value, doc);
        }
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        Self::from_value(value)
    }

    pub fn from_value(value: Value) -> CliResult<Self> {
        let mut cfg: Self = serde_json::from_value(value).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.dgp.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        self.dgp.validate().map_err(|e| CliError::Config(e.to_string()))?;
        if self.first_stage.k_range.is_empty() || self.first_stage.k_range.contains(&0) {
            return Err(CliError::Config("first_stage.k_range must list positive K values".into()));
        }
        if self.second_stage.columns.is_empty() {
            return Err(CliError::Config("second_stage.columns is empty".into()));
        }
        if self.second_stage.l_psi == 0 {
            return Err(CliError::Config("second_stage.l_psi must be at least 1".into()));
        }
        let b = self.second_stage.bootstrap_replicates;
        if b > 0 && b < mixsel_core::selection::bootstrap::MIN_REPLICATES {
            return Err(CliError::Config(format!(
                "second_stage.bootstrap_replicates must be 0 or at least {}",
                mixsel_core::selection::bootstrap::MIN_REPLICATES
            )));
        }
        for (name, rate) in [
            ("max_drop_rate", self.max_drop_rate),
            ("montecarlo.max_failure_rate", self.montecarlo.max_failure_rate),
            ("second_stage.bootstrap_max_failure_rate", self.second_stage.bootstrap_max_failure_rate),
        ] {
            if !(0.0..=1.0).contains(&rate) {
                return Err(CliError::Config(format!("{name} must lie in [0, 1]")));
            }
        }
        Ok(())
    }

    /// Demand characteristics for the second stage.
    pub fn demand_vars(&self) -> Vec<usize> {
        self.second_stage.demand_vars.clone().unwrap_or_else(|| self.dgp.demand_vars())
    }

    /// Canonical pretty JSON; the config hash is taken over these bytes.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn apply_override(root: &mut Value, spec: &str) -> CliResult<()> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override {spec:?} is not of the form key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    let keys: Vec<&str> = path.split('.').collect();
    for (i, key) in keys.iter().enumerate() {
        let last = i + 1 == keys.len();
        node = match node {
            Value::Object(map) => {
                if last {
                    map.insert(key.to_string(), value);
                    return Ok(());
                }
                map.entry(key.to_string()).or_insert_with(|| Value::Object(Default::default()))
            }
            Value::Array(items) => {
                let idx: usize = key
                    .parse()
                    .map_err(|_| CliError::Config(format!("override {path:?}: {key:?} is not an array index")))?;
                let len = items.len();
                let slot = items
                    .get_mut(idx)
                    .ok_or_else(|| CliError::Config(format!("override {path:?}: index {idx} out of range ({len})")))?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            _ => return Err(CliError::Config(format!("override {path:?}: {key:?} is not inside an object"))),
        };
    }
    Err(CliError::Config("empty override key".into()))
}
