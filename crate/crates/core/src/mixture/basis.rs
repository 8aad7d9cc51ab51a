//! Sieve bases `r^P(x)` and `r^f(x)`: a constant plus per-variable powers of the
//! standardized covariates.

use serde::{Deserialize, Serialize};

use super::EntryData;
use crate::error::{Error, Result};

/// Polynomial orders of the two bases. `entry_order = 1` gives `r^P = (1, x)`;
/// `mixing_order = 0` gives constant type weights.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BasisSpec {
    pub entry_order: usize,
    pub mixing_order: usize,
}

impl Default for BasisSpec {
    fn default() -> Self {
        Self { entry_order: 1, mixing_order: 0 }
    }
}

/// A basis with its standardization fixed from a reference sample. Covariates that are
/// constant in that sample are dropped.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Basis {
    pub spec: BasisSpec,
    pub n_covariates: usize,
    /// Indices of retained covariates.
    pub kept: Vec<usize>,
    pub center: Vec<f64>,
    pub scale: Vec<f64>,
    pub names: Vec<String>,
}

impl Basis {
    pub fn fit(spec: &BasisSpec, data: &EntryData) -> Result<Self> {
        let cov = &data.covariates;
        let t = cov.nrows();
        let mut kept = Vec::new();
        let mut center = Vec::new();
        let mut scale = Vec::new();
        for c in 0..cov.ncols() {
            let col = cov.column(c);
            let mean = if t > 0 { col.sum() / t as f64 } else { 0.0 };
            let var = if t > 1 {
                col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (t - 1) as f64
            } else {
                0.0
            };
            if var.sqrt() > 1e-12 * (1.0 + mean.abs()) {
                kept.push(c);
                center.push(mean);
                scale.push(var.sqrt());
            }
        }
        let names = kept.iter().map(|&c| data.covariate_names[c].clone()).collect();
        Ok(Self {
            spec: spec.clone(),
            n_covariates: cov.ncols(),
            kept,
            center,
            scale,
            names,
        })
    }

    pub fn n_entry_terms(&self) -> usize {
        1 + self.kept.len() * self.spec.entry_order
    }

    pub fn n_mixing_terms(&self) -> usize {
        1 + self.kept.len() * self.spec.mixing_order
    }

    fn terms(&self, x: &[f64], order: usize) -> Result<Vec<f64>> {
        if x.len() != self.n_covariates {
            return Err(Error::dim("covariates", self.n_covariates, x.len()));
        }
        let z: Vec<f64> = self
            .kept
            .iter()
            .zip(self.center.iter().zip(&self.scale))
            .map(|(&c, (m, s))| (x[c] - m) / s)
            .collect();
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("basis values"));
        }
        let mut out = Vec::with_capacity(1 + z.len() * order);
        out.push(1.0);
        for power in 1..=order {
            out.extend(z.iter().map(|v| v.powi(power as i32)));
        }
        Ok(out)
    }

    pub fn entry_terms(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.terms(x, self.spec.entry_order)
    }

    pub fn mixing_terms(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.terms(x, self.spec.mixing_order)
    }

    /// Labels of the entry basis terms in order.
    pub fn entry_term_names(&self) -> Vec<String> {
        let mut out = vec!["const".to_string()];
        for power in 1..=self.spec.entry_order {
            for n in &self.names {
                out.push(if power == 1 { n.clone() } else { format!("{n}^{power}") });
            }
        }
        out
    }
}
