//! Selection-corrected demand estimation.
//!
//! With one inside nest, inverting nested-logit shares gives the linear equation
//!
//! ```text
//! ln(s_j / s0) = alpha p_j + sigma ln(s_j / (1 - s0)) + x_j' beta + xi_j,
//! ```
//!
//! observed only for entrants. Because entry responds to the latent market type,
//! `E[xi | entry, x]` is not zero; it is absorbed by control regressors built from
//! first-stage entry probabilities ([`controls`]), and the equation is then
//! estimated by 2SLS with firm fixed effects ([`iv`]).

pub mod bootstrap;
pub mod controls;
pub mod data;
pub mod diagnostic;
pub mod elasticity;
pub mod instruments;
pub mod iv;
pub mod pipeline;

use serde::{Deserialize, Serialize};

pub use bootstrap::{bootstrap_se, BootstrapOptions, BootstrapResult};
pub use controls::{build_controls, ControlMatrix};
pub use data::{build_dependent, DemandRows};
pub use diagnostic::identification_diagnostic;
pub use elasticity::{common_edges, elasticity_report, histogram, ElasticityReport, FirmElasticity};
pub use instruments::{build_instruments, InstrumentSet};
pub use iv::{tsls_estimate, IvFit, IvInput};
pub use pipeline::{estimate_demand, identification_check, DemandSpec, Estimator};

/// Which selection-control regressors enter the demand equation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlFamily {
    None,
    /// `Euler - ln P_j(x)` from a one-type logit.
    HeckmanLogit,
    /// Powers `1..=L` of `Euler - ln P_j(x)` from a one-type logit.
    Semiparametric,
    /// `f_k(x) (Euler - ln P_j(x, k))^l` for every type `k` and power `l = 1..=L`.
    Mixture,
}

fn default_l_psi() -> usize {
    3
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlSpec {
    pub family: ControlFamily,
    /// Polynomial order; ignored by the Heckman family, which uses a single power.
    #[serde(default = "default_l_psi")]
    pub l_psi: usize,
    /// Separate control coefficients for every firm.
    #[serde(default = "yes")]
    pub per_firm: bool,
}

impl ControlSpec {
    pub fn none() -> Self {
        Self { family: ControlFamily::None, l_psi: default_l_psi(), per_firm: true }
    }

    pub fn new(family: ControlFamily, l_psi: usize) -> Self {
        Self { family, l_psi, per_firm: true }
    }

    pub fn powers(&self) -> usize {
        match self.family {
            ControlFamily::None => 0,
            ControlFamily::HeckmanLogit => 1,
            ControlFamily::Semiparametric | ControlFamily::Mixture => self.l_psi,
        }
    }

    /// Number of control columns for `k` types and `n_firms` firms (constant mixing).
    pub fn n_controls(&self, k: usize, n_firms: usize) -> usize {
        let per_block = match self.family {
            ControlFamily::None => 0,
            ControlFamily::Mixture => self.powers() * k,
            _ => self.powers(),
        };
        per_block * if self.per_firm { n_firms } else { 1 }
    }

    pub fn validate(&self) -> crate::Result<()> {
        if self.family != ControlFamily::None && self.l_psi == 0 {
            return Err(crate::Error::InvalidParameter("control polynomial order must be at least 1".into()));
        }
        Ok(())
    }
}

/// Second-step estimates with diagnostics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GmmResult {
    /// `(alpha, sigma, beta_1, ..., beta_d)`; the intercept is absorbed by firm effects.
    pub theta: Vec<f64>,
    pub theta_names: Vec<String>,
    /// Heteroskedasticity-robust covariance of `theta`.
    pub cov: Vec<Vec<f64>>,
    pub se: Vec<f64>,
    pub control_coefs: Vec<f64>,
    pub control_names: Vec<String>,
    /// Control columns actually used.
    pub n_controls: usize,
    /// Control columns dropped as collinear with fixed effects, regressors or earlier controls.
    pub dropped_controls: Vec<String>,
    pub dropped_instruments: Vec<String>,
    pub n_instruments: usize,
    /// First-stage partial F statistic for each endogenous regressor.
    pub first_stage_f: Vec<f64>,
    /// Minimum-eigenvalue (Cragg-Donald) statistic of the first stage.
    pub cragg_donald: f64,
    pub weak_instruments: bool,
    /// Normalized minimum eigenvalue of the residualized regressor second-moment matrix.
    pub identification_ratio: f64,
    /// Structural residuals after the within transformation.
    pub residuals: Vec<f64>,
    pub n_obs: usize,
    /// First-stage probabilities that were clipped away from 0 or 1.
    pub clipped_probabilities: usize,
    pub warnings: Vec<String>,
}

impl GmmResult {
    pub fn alpha(&self) -> f64 {
        self.theta[0]
    }

    pub fn sigma(&self) -> f64 {
        self.theta[1]
    }

    pub fn beta(&self) -> &[f64] {
        &self.theta[2..]
    }
}
