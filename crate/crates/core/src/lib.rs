//! Structural demand estimation under endogenous market entry.
//!
//! The crate is organised around the two halves of the workflow:
//!
//! * a data-generating side: nested-logit [`demand`], Nash–Bertrand pricing and a
//!   Bayesian–Nash entry game in [`equilibrium`], and the panel generator in [`simulate`];
//! * an estimation side: the finite-mixture logit entry model fitted by EM in
//!   [`mixture`], and selection-corrected 2SLS demand estimation in [`selection`].
//!
//! Everything is deterministic given its inputs and a seed.

pub mod demand;
pub mod equilibrium;
pub mod error;
pub mod linalg;
pub mod mixture;
pub mod rng;
pub mod selection;
pub mod simulate;

pub use demand::{DemandParams, Nesting, ProductState, ShareVector};
pub use equilibrium::{BertrandOptions, BneOptions, CostParams, EntryEquilibrium};
pub use error::{Error, Result};
pub use mixture::{BasisSpec, EmOptions, EntryData, MixtureFit, MixtureModel};
pub use selection::{ControlFamily, ControlSpec, GmmResult};
pub use simulate::{DgpConfig, MarketObservation, SimulatedPanel};

/// Euler–Mascheroni constant, the mean of a standard Gumbel variate.
pub const EULER: f64 = 0.577_215_664_9;

/// Crate version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
