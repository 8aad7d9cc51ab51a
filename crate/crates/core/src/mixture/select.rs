//! Choosing the number of types by BIC.

use serde::{Deserialize, Serialize};

use super::{em_fit, BasisSpec, EmOptions, EntryData, MixtureFit};
use crate::error::{Error, Result};
use crate::rng;

/// Slack allowed before a smaller log-likelihood at larger `K` is flagged.
pub const NESTING_SLACK: f64 = 1e-4;

/// One column of the goodness-of-fit table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KSelectionRow {
    pub k: usize,
    pub observations: usize,
    pub parameters: usize,
    pub loglik: f64,
    pub aic: f64,
    pub bic: f64,
    pub converged: bool,
    /// Set when the log-likelihood is below the previous `K`'s by more than
    /// [`NESTING_SLACK`], which means the restarts missed the global optimum.
    pub restart_deficiency: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KSelection {
    pub chosen_k: usize,
    pub rows: Vec<KSelectionRow>,
    #[serde(skip)]
    pub fits: Vec<MixtureFit>,
}

impl KSelection {
    pub fn chosen_fit(&self) -> &MixtureFit {
        let i = self.rows.iter().position(|r| r.k == self.chosen_k).expect("chosen k is in the table");
        &self.fits[i]
    }
}

/// Fit every `K` in `ks` and pick the smallest BIC (ties go to the smaller `K`).
///
/// Each `K` gets its own restart seed derived from `opts.seed`, so a fit does not
/// depend on which other values are in the range.
pub fn select_k(data: &EntryData, ks: &[usize], spec: &BasisSpec, opts: &EmOptions) -> Result<KSelection> {
    if ks.is_empty() {
        return Err(Error::InvalidParameter("empty range of K".into()));
    }
    let mut ks = ks.to_vec();
    ks.sort_unstable();
    ks.dedup();
    let mut rows: Vec<KSelectionRow> = Vec::with_capacity(ks.len());
    let mut fits = Vec::with_capacity(ks.len());
    for &k in &ks {
        let o = EmOptions {
            seed: rng::derive_seed(opts.seed, rng::tag::RESTART, k as u64),
            ..opts.clone()
        };
        let fit = em_fit(data, k, spec, &o)?;
        let restart_deficiency = rows
            .last()
            .is_some_and(|prev| prev.k + 1 == k && fit.loglik < prev.loglik - NESTING_SLACK);
        rows.push(KSelectionRow {
            k,
            observations: fit.n_obs,
            parameters: fit.n_params,
            loglik: fit.loglik,
            aic: fit.aic,
            bic: fit.bic,
            converged: fit.converged,
            restart_deficiency,
        });
        fits.push(fit);
    }
    let chosen_k = rows
        .iter()
        .min_by(|a, b| a.bic.total_cmp(&b.bic).then(a.k.cmp(&b.k)))
        .map(|r| r.k)
        .expect("non-empty");
    Ok(KSelection { chosen_k, rows, fits })
}
