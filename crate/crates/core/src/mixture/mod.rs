//! Finite-mixture logit model of entry decisions.
//!
//! Markets belong to one of `K` latent types. Given the type, firms enter
//! independently with logit probabilities `P_jk(x) = Λ(r^P(x)' gamma_jk)`; the type
//! probabilities are a multinomial logit `f_k(x)` over `r^f(x)` with the first type
//! normalised to zero (constant in `x` by default).
//!
//! * [`em`] fits the model by EM with multiple restarts.
//! * [`select`] compares fits over a range of `K` by BIC.
//! * [`rank`] gives a data-driven lower bound on `K` from the rank of a joint entry
//!   frequency matrix.

mod basis;
pub mod em;
mod logit;
pub mod rank;
pub mod select;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simulate::MarketObservation;

pub use basis::{Basis, BasisSpec};
pub use em::{em_fit, em_refit, EmOptions, MixtureFit, RestartSummary};
pub use logit::{log_logistic, weighted_logit};
pub use rank::{population_joint_matrix, rank_estimate_k, rank_of_population, Partition, RankEstimate};
pub use select::{select_k, KSelection, KSelectionRow};

/// Default floor (and ceiling `1 - floor`) on probabilities inside logarithms.
pub const PROB_CLIP: f64 = 1e-12;

/// Entry indicators and market-level covariates, one row per market.
#[derive(Clone, Debug, PartialEq)]
pub struct EntryData {
    /// `entries[t][j]` is firm `j`'s entry indicator in market `t`.
    pub entries: Vec<Vec<bool>>,
    /// Raw covariates `x_t`, one row per market.
    pub covariates: DMatrix<f64>,
    pub covariate_names: Vec<String>,
}

impl EntryData {
    pub fn new(entries: Vec<Vec<bool>>, covariates: DMatrix<f64>, covariate_names: Vec<String>) -> Result<Self> {
        if entries.len() != covariates.nrows() {
            return Err(Error::dim("covariate rows", entries.len(), covariates.nrows()));
        }
        if covariate_names.len() != covariates.ncols() {
            return Err(Error::dim("covariate names", covariates.ncols(), covariate_names.len()));
        }
        if let Some(first) = entries.first() {
            if let Some(bad) = entries.iter().find(|r| r.len() != first.len()) {
                return Err(Error::dim("firms per market", first.len(), bad.len()));
            }
        }
        if covariates.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("entry covariates"));
        }
        Ok(Self { entries, covariates, covariate_names })
    }

    /// Covariates are `[ln H, x_1 of firm 1, ..., x_k of firm 1, ..., x_k of firm J]`.
    pub fn from_observations(observations: &[MarketObservation]) -> Result<Self> {
        let n_firms = observations.first().map_or(0, |o| o.n_firms());
        let n_vars = observations.first().and_then(|o| o.x.first()).map_or(0, |x| x.len());
        let mut names = vec!["ln_H".to_string()];
        for j in 0..n_firms {
            for v in 0..n_vars {
                names.push(format!("x_{}_firm_{}", v + 1, j + 1));
            }
        }
        let cols = names.len();
        let mut cov = DMatrix::zeros(observations.len(), cols);
        for (t, o) in observations.iter().enumerate() {
            if o.n_firms() != n_firms {
                return Err(Error::dim("firms per market", n_firms, o.n_firms()));
            }
            if !(o.size > 0.0) {
                return Err(Error::Data(format!("market {} has non-positive size", o.market_id)));
            }
            cov[(t, 0)] = o.size.ln();
            for j in 0..n_firms {
                for v in 0..n_vars {
                    cov[(t, 1 + j * n_vars + v)] = o.x[j][v];
                }
            }
        }
        let entries = observations.iter().map(|o| o.entered.clone()).collect();
        Self::new(entries, cov, names)
    }

    pub fn n_markets(&self) -> usize {
        self.entries.len()
    }

    pub fn n_firms(&self) -> usize {
        self.entries.first().map_or(0, |r| r.len())
    }

    /// Rows `idx` (with repetition), in the given order.
    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            entries: idx.iter().map(|&t| self.entries[t].clone()).collect(),
            covariates: self.covariates.select_rows(idx),
            covariate_names: self.covariate_names.clone(),
        }
    }

    pub fn entry_frequencies(&self) -> Vec<f64> {
        let t = self.n_markets().max(1) as f64;
        (0..self.n_firms())
            .map(|j| self.entries.iter().filter(|r| r[j]).count() as f64 / t)
            .collect()
    }

    pub fn covariate_row(&self, t: usize) -> Vec<f64> {
        self.covariates.row(t).iter().copied().collect()
    }
}

/// Type weights and per-type entry probabilities at one covariate vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub weights: Vec<f64>,
    /// `probs[j][k]`.
    pub probs: Vec<Vec<f64>>,
}

/// Type weights and entry probabilities for every market of a data set.
#[derive(Clone, Debug, PartialEq)]
pub struct PanelPrediction {
    /// `T x K`.
    pub weights: DMatrix<f64>,
    /// One `T x J` matrix per type.
    pub probs: Vec<DMatrix<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureModel {
    pub k: usize,
    pub basis: Basis,
    /// `K x L_f`; row 0 is identically zero.
    pub gamma_f: Vec<Vec<f64>>,
    /// `gamma_p[j][k]` has length `L_P`.
    pub gamma_p: Vec<Vec<Vec<f64>>>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Softmax of `z` computed in place, shifting by the maximum.
pub(crate) fn softmax_in_place(z: &mut [f64]) {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in z.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    z.iter_mut().for_each(|v| *v /= s);
}

pub(crate) fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

impl MixtureModel {
    /// Model with all coefficients zero: equal type weights and every probability 0.5.
    pub fn zeros(k: usize, n_firms: usize, basis: Basis) -> Self {
        let lf = basis.n_mixing_terms();
        let lp = basis.n_entry_terms();
        Self {
            k,
            gamma_f: vec![vec![0.0; lf]; k],
            gamma_p: vec![vec![vec![0.0; lp]; k]; n_firms],
            basis,
        }
    }

    pub fn n_firms(&self) -> usize {
        self.gamma_p.len()
    }

    /// `L_f (K-1) + L_P K J`.
    pub fn n_params(&self) -> usize {
        self.basis.n_mixing_terms() * (self.k - 1) + self.basis.n_entry_terms() * self.k * self.n_firms()
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidParameter("mixture needs at least one type".into()));
        }
        let lf = self.basis.n_mixing_terms();
        let lp = self.basis.n_entry_terms();
        if self.gamma_f.len() != self.k || self.gamma_f.iter().any(|g| g.len() != lf) {
            return Err(Error::InvalidParameter("gamma_f has the wrong shape".into()));
        }
        if self.gamma_f[0].iter().any(|&g| g != 0.0) {
            return Err(Error::InvalidParameter("gamma_f of the first type must be zero".into()));
        }
        if self
            .gamma_p
            .iter()
            .any(|gj| gj.len() != self.k || gj.iter().any(|g| g.len() != lp))
        {
            return Err(Error::InvalidParameter("gamma_p has the wrong shape".into()));
        }
        Ok(())
    }

    /// Type weights `f_k(x)` and probabilities `P_j(x, k)` at one raw covariate vector.
    pub fn predict(&self, covariates: &[f64]) -> Result<Prediction> {
        let rp = self.basis.entry_terms(covariates)?;
        let rf = self.basis.mixing_terms(covariates)?;
        let mut weights: Vec<f64> = self.gamma_f.iter().map(|g| dot(g, &rf)).collect();
        softmax_in_place(&mut weights);
        let probs = self
            .gamma_p
            .iter()
            .map(|gj| gj.iter().map(|g| crate::equilibrium::logistic(dot(g, &rp))).collect())
            .collect();
        Ok(Prediction { weights, probs })
    }

    pub fn predict_panel(&self, data: &EntryData) -> Result<PanelPrediction> {
        let design = Design::new(&self.basis, data)?;
        let t = data.n_markets();
        let j = self.n_firms();
        let mut weights = DMatrix::zeros(t, self.k);
        let mut probs = vec![DMatrix::zeros(t, j); self.k];
        let mut w = vec![0.0; self.k];
        for row in 0..t {
            let rf = design.rf(row);
            for (k, wk) in w.iter_mut().enumerate() {
                *wk = dot(&self.gamma_f[k], rf);
            }
            softmax_in_place(&mut w);
            for k in 0..self.k {
                weights[(row, k)] = w[k];
            }
            let rp = design.rp(row);
            for (jj, gj) in self.gamma_p.iter().enumerate() {
                for (k, g) in gj.iter().enumerate() {
                    probs[k][(row, jj)] = crate::equilibrium::logistic(dot(g, rp));
                }
            }
        }
        Ok(PanelPrediction { weights, probs })
    }

    /// Observed-data log-likelihood.
    pub fn loglik(&self, data: &EntryData) -> Result<f64> {
        let design = Design::new(&self.basis, data)?;
        Ok(design.components(self, PROB_CLIP).loglik)
    }

    /// Posterior type probabilities per market.
    pub fn posteriors(&self, data: &EntryData) -> Result<DMatrix<f64>> {
        let design = Design::new(&self.basis, data)?;
        Ok(design.components(self, PROB_CLIP).posteriors())
    }

    /// Average over markets and firms of each type's predicted entry probability.
    pub fn mean_type_entry(&self, data: &EntryData) -> Result<Vec<f64>> {
        let pred = self.predict_panel(data)?;
        let denom = (pred.probs[0].nrows() * pred.probs[0].ncols()).max(1) as f64;
        Ok(pred.probs.iter().map(|p| p.sum() / denom).collect())
    }

    /// Average type weights over markets.
    pub fn mean_weights(&self, data: &EntryData) -> Result<Vec<f64>> {
        let pred = self.predict_panel(data)?;
        let t = pred.weights.nrows().max(1) as f64;
        Ok((0..self.k).map(|k| pred.weights.column(k).sum() / t).collect())
    }

    /// Reorder types by `order` (new type `i` is old type `order[i]`), keeping type 0's
    /// mixing coefficients at zero.
    pub fn permute_types(&self, order: &[usize]) -> Self {
        let base = self.gamma_f[order[0]].clone();
        let gamma_f = order
            .iter()
            .map(|&o| self.gamma_f[o].iter().zip(&base).map(|(g, b)| g - b).collect())
            .collect();
        let gamma_p = self
            .gamma_p
            .iter()
            .map(|gj| order.iter().map(|&o| gj[o].clone()).collect())
            .collect();
        Self {
            k: self.k,
            basis: self.basis.clone(),
            gamma_f,
            gamma_p,
        }
    }

    /// Canonical type order: ascending mean predicted entry probability over firms and
    /// the sample, ties (within 1e-9) broken by mean mixing weight descending.
    /// Returns the relabelled model and the order applied.
    pub fn canonicalize(&self, data: &EntryData) -> Result<(Self, Vec<usize>)> {
        let entry = self.mean_type_entry(data)?;
        let weight = self.mean_weights(data)?;
        let mut order: Vec<usize> = (0..self.k).collect();
        order.sort_by(|&a, &b| {
            if (entry[a] - entry[b]).abs() > 1e-9 {
                entry[a].total_cmp(&entry[b])
            } else {
                weight[b].total_cmp(&weight[a]).then(a.cmp(&b))
            }
        });
        Ok((self.permute_types(&order), order))
    }
}

/// Relabel a model into canonical type order; see [`MixtureModel::canonicalize`].
pub fn canonicalize_labels(model: &MixtureModel, data: &EntryData) -> Result<MixtureModel> {
    Ok(model.canonicalize(data)?.0)
}

/// Basis values for every market, stored row-major for the EM inner loops.
#[derive(Clone, Debug)]
pub(crate) struct Design {
    pub t: usize,
    pub j: usize,
    pub lp: usize,
    pub lf: usize,
    rp: Vec<f64>,
    rf: Vec<f64>,
    /// Entry indicators as 0/1, row-major `T x J`.
    pub a: Vec<f64>,
}

impl Design {
    pub fn new(basis: &Basis, data: &EntryData) -> Result<Self> {
        let t = data.n_markets();
        let lp = basis.n_entry_terms();
        let lf = basis.n_mixing_terms();
        let mut rp = Vec::with_capacity(t * lp);
        let mut rf = Vec::with_capacity(t * lf);
        for row in 0..t {
            let x = data.covariate_row(row);
            rp.extend(basis.entry_terms(&x)?);
            rf.extend(basis.mixing_terms(&x)?);
        }
        let a = data
            .entries
            .iter()
            .flat_map(|r| r.iter().map(|&e| if e { 1.0 } else { 0.0 }))
            .collect();
        Ok(Self { t, j: data.n_firms(), lp, lf, rp, rf, a })
    }

    pub fn rp_all(&self) -> &[f64] {
        &self.rp
    }

    pub fn rf_all(&self) -> &[f64] {
        &self.rf
    }

    pub fn rp(&self, row: usize) -> &[f64] {
        &self.rp[row * self.lp..(row + 1) * self.lp]
    }

    pub fn rf(&self, row: usize) -> &[f64] {
        &self.rf[row * self.lf..(row + 1) * self.lf]
    }

    pub fn entered(&self, row: usize, j: usize) -> f64 {
        self.a[row * self.j + j]
    }

    /// Per-market, per-type joint log densities `ln f_k + sum_j ln Bernoulli`.
    pub fn components(&self, model: &MixtureModel, clip: f64) -> Components {
        let k = model.k;
        let lo = clip.ln();
        let hi = (-clip).ln_1p();
        let mut log_joint = vec![0.0; self.t * k];
        let mut clipped = 0usize;
        let mut lf = vec![0.0; k];
        for row in 0..self.t {
            let rf = self.rf(row);
            for (kk, v) in lf.iter_mut().enumerate() {
                *v = dot(&model.gamma_f[kk], rf);
            }
            let norm = log_sum_exp(&lf);
            let rp = self.rp(row);
            for kk in 0..k {
                let mut s = lf[kk] - norm;
                for jj in 0..self.j {
                    let z = dot(&model.gamma_p[jj][kk], rp);
                    let lp = if self.entered(row, jj) > 0.5 {
                        log_logistic(z)
                    } else {
                        log_logistic(-z)
                    };
                    if lp < lo {
                        clipped += 1;
                        s += lo;
                    } else {
                        s += lp.min(hi);
                    }
                }
                log_joint[row * k + kk] = s;
            }
        }
        let mut loglik = 0.0;
        let mut row_lse = Vec::with_capacity(self.t);
        for row in 0..self.t {
            let l = log_sum_exp(&log_joint[row * k..(row + 1) * k]);
            row_lse.push(l);
            loglik += l;
        }
        Components { k, log_joint, row_lse, loglik, clipped }
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Components {
    k: usize,
    log_joint: Vec<f64>,
    row_lse: Vec<f64>,
    pub loglik: f64,
    pub clipped: usize,
}

impl Components {
    pub fn posteriors(&self) -> DMatrix<f64> {
        let t = self.row_lse.len();
        DMatrix::from_fn(t, self.k, |row, kk| (self.log_joint[row * self.k + kk] - self.row_lse[row]).exp())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_data() -> EntryData {
        let entries = vec![vec![true, false, true], vec![false, false, true], vec![true, true, true]];
        let cov = DMatrix::from_row_slice(3, 2, &[0.1, -1.0, 0.5, 0.3, -0.2, 1.2]);
        EntryData::new(entries, cov, vec!["a".into(), "b".into()]).unwrap()
    }

    #[test]
    fn zero_model_predicts_half() {
        let data = toy_data();
        let basis = Basis::fit(&BasisSpec::default(), &data).unwrap();
        let m = MixtureModel::zeros(2, 3, basis);
        let p = m.predict(&data.covariate_row(0)).unwrap();
        assert_eq!(p.weights, vec![0.5, 0.5]);
        assert!(p.probs.iter().flatten().all(|&v| v == 0.5));
    }

    #[test]
    fn single_market_half_probabilities() {
        let data = EntryData::new(
            vec![vec![true, false, true]],
            DMatrix::from_row_slice(1, 1, &[0.0]),
            vec!["c".into()],
        )
        .unwrap();
        let basis = Basis::fit(&BasisSpec::default(), &data).unwrap();
        let m = MixtureModel::zeros(2, 3, basis);
        assert!((m.loglik(&data).unwrap() - 0.125f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn predict_matches_hand_evaluation() {
        let data = toy_data();
        let basis = Basis::fit(&BasisSpec { entry_order: 1, mixing_order: 1 }, &data).unwrap();
        let mut m = MixtureModel::zeros(2, 3, basis.clone());
        m.gamma_f[1] = vec![0.3, -0.4, 0.2];
        m.gamma_p[1][0] = vec![0.1, 0.7, -0.5];
        let x = data.covariate_row(2);
        let z: Vec<f64> = (0..2).map(|c| (x[c] - basis.center[c]) / basis.scale[c]).collect();
        let e1 = (0.3 - 0.4 * z[0] + 0.2 * z[1]).exp();
        let p = m.predict(&x).unwrap();
        assert!((p.weights[1] - e1 / (1.0 + e1)).abs() < 1e-14);
        let u = 0.1 + 0.7 * z[0] - 0.5 * z[1];
        assert!((p.probs[1][0] - 1.0 / (1.0 + (-u).exp())).abs() < 1e-14);
    }

    #[test]
    fn loglik_matches_naive_double_loop() {
        let data = toy_data();
        let basis = Basis::fit(&BasisSpec { entry_order: 1, mixing_order: 1 }, &data).unwrap();
        let mut m = MixtureModel::zeros(3, 3, basis);
        let mut v = 0.1;
        for gj in m.gamma_p.iter_mut() {
            for g in gj.iter_mut() {
                for c in g.iter_mut() {
                    v = (v * 7.3_f64).sin();
                    *c = v;
                }
            }
        }
        m.gamma_f[1] = vec![0.2, 0.1, -0.3];
        m.gamma_f[2] = vec![-0.5, 0.4, 0.0];
        let mut naive = 0.0;
        for t in 0..data.n_markets() {
            let pred = m.predict(&data.covariate_row(t)).unwrap();
            let mut lik = 0.0;
            for k in 0..3 {
                let mut prod = pred.weights[k];
                for j in 0..3 {
                    let p = pred.probs[j][k];
                    prod *= if data.entries[t][j] { p } else { 1.0 - p };
                }
                lik += prod;
            }
            naive += f64::ln(lik);
        }
        assert!((m.loglik(&data).unwrap() - naive).abs() < 1e-12);
        let post = m.posteriors(&data).unwrap();
        for r in 0..post.nrows() {
            assert!((post.row(r).sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn canonicalize_sorts_and_is_idempotent() {
        let data = toy_data();
        let basis = Basis::fit(&BasisSpec::default(), &data).unwrap();
        let mut m = MixtureModel::zeros(2, 3, basis);
        for gj in m.gamma_p.iter_mut() {
            gj[0][0] = 1.0;
            gj[1][0] = -1.0;
        }
        m.gamma_f[1][0] = 0.4;
        let (c, order) = m.canonicalize(&data).unwrap();
        assert_eq!(order, vec![1, 0]);
        assert_eq!(c.gamma_f[0], vec![0.0]);
        assert!((c.gamma_f[1][0] + 0.4).abs() < 1e-15);
        let (again, order2) = c.canonicalize(&data).unwrap();
        assert_eq!(order2, vec![0, 1]);
        assert_eq!(again, c);
        // the swapped duplicate has the same canonical form
        let (c2, _) = m.permute_types(&[1, 0]).canonicalize(&data).unwrap();
        assert_eq!(c2, c);
        assert!((c.loglik(&data).unwrap() - m.loglik(&data).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn canonical_ties_broken_by_weight() {
        let data = toy_data();
        let basis = Basis::fit(&BasisSpec::default(), &data).unwrap();
        let mut m = MixtureModel::zeros(2, 3, basis);
        // identical entry surfaces, type 1 more likely
        m.gamma_f[1][0] = 0.8;
        let (c, order) = m.canonicalize(&data).unwrap();
        assert_eq!(order, vec![1, 0]);
        assert!(c.gamma_f[1][0] < 0.0);
    }

    #[test]
    fn from_observations_layout() {
        let obs = vec![MarketObservation {
            market_id: 1,
            size: 10.0,
            x: vec![vec![1.0, 2.0], vec![3.0, 4.0]],
            entered: vec![true, false],
            prices: vec![Some(1.0), None],
            shares: vec![Some(0.2), None],
            s0: 0.8,
        }];
        let d = EntryData::from_observations(&obs).unwrap();
        assert_eq!(d.covariate_names, vec!["ln_H", "x_1_firm_1", "x_2_firm_1", "x_1_firm_2", "x_2_firm_2"]);
        assert_eq!(d.covariate_row(0), vec![10f64.ln(), 1.0, 2.0, 3.0, 4.0]);
    }
}
