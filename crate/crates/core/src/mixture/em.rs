//! EM estimation of the finite-mixture entry model.
//!
//! E-step: posterior type probabilities per market. M-step: posterior-weighted
//! Newton logits for every `(firm, type)` and a weighted multinomial logit for the
//! type weights (closed form when they are constant). The observed-data
//! log-likelihood is checked for monotonicity after every iteration.
//!
//! Optional acceleration extrapolates along two successive EM steps and keeps the
//! result only if it beats the plain EM iterate, so the recorded likelihood
//! sequence stays monotone.

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::logit::{weighted_logit, weighted_multinomial_logit};
use super::{Basis, BasisSpec, Components, Design, EntryData, MixtureModel};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmOptions {
    pub n_restarts: usize,
    /// Stop when the log-likelihood gain of an iteration falls below this.
    pub tol: f64,
    pub max_iter: usize,
    /// Newton iterations per M-step regression.
    pub newton_max_iter: usize,
    /// Seed for the random restarts.
    pub seed: u64,
    /// Probability floor inside logarithms.
    pub clip: f64,
    /// Squared-extrapolation acceleration (SQUAREM) with a fallback to the plain EM
    /// iterate whenever the extrapolated point does not improve the likelihood.
    pub accelerate: bool,
}

impl Default for EmOptions {
    fn default() -> Self {
        Self {
            n_restarts: 15,
            tol: 1e-7,
            max_iter: 2_000,
            newton_max_iter: 25,
            seed: 0,
            clip: super::PROB_CLIP,
            accelerate: false,
        }
    }
}

/// Relative slack allowed for round-off when checking that EM never lowers the likelihood.
pub const MONOTONE_SLACK: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RestartSummary {
    pub index: usize,
    /// `None` when the run failed.
    pub loglik: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub monotone_violations: usize,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureFit {
    pub model: MixtureModel,
    pub loglik: f64,
    pub aic: f64,
    pub bic: f64,
    pub n_params: usize,
    pub n_obs: usize,
    /// Posterior type probabilities per market, in canonical type order.
    pub posteriors: Vec<Vec<f64>>,
    pub converged: bool,
    pub iterations: usize,
    /// Log-likelihood after every iteration of the selected run.
    pub loglik_trace: Vec<f64>,
    pub monotone_violations: usize,
    /// Bernoulli terms floored at the clip value in the final evaluation.
    pub clip_events: usize,
    /// Newton steps (over the selected run) that needed a ridge.
    pub ridge_steps: usize,
    pub selected_restart: usize,
    pub restarts: Vec<RestartSummary>,
    /// Canonical type `i` is type `type_order[i]` of the selected run.
    pub type_order: Vec<usize>,
    /// Canonical ordering keys: mean predicted entry probability and mean weight per type.
    pub mean_type_entry: Vec<f64>,
    pub mean_weights: Vec<f64>,
}

impl MixtureFit {
    pub fn k(&self) -> usize {
        self.model.k
    }

    pub fn posterior_matrix(&self) -> DMatrix<f64> {
        let t = self.posteriors.len();
        DMatrix::from_fn(t, self.model.k, |r, c| self.posteriors[r][c])
    }
}

struct Run {
    model: MixtureModel,
    loglik: f64,
    iterations: usize,
    converged: bool,
    trace: Vec<f64>,
    violations: usize,
    ridge_steps: usize,
}

fn entry_columns(design: &Design) -> Vec<Vec<f64>> {
    (0..design.j)
        .map(|j| (0..design.t).map(|r| design.entered(r, j)).collect())
        .collect()
}

fn m_step(
    design: &Design,
    y: &[Vec<f64>],
    post: &DMatrix<f64>,
    model: &mut MixtureModel,
    opts: &EmOptions,
) -> Result<usize> {
    let k = model.k;
    let mut ridge = 0;
    for kk in 0..k {
        let w: Vec<f64> = post.column(kk).iter().copied().collect();
        for (j, yj) in y.iter().enumerate() {
            let fit = weighted_logit(design.rp_all(), design.lp, yj, &w, &model.gamma_p[j][kk], opts.newton_max_iter)?;
            ridge += fit.ridge_steps;
            model.gamma_p[j][kk] = fit.coef;
        }
    }
    if k > 1 {
        if design.lf == 1 {
            let t = post.nrows().max(1) as f64;
            let floor = opts.clip;
            let f: Vec<f64> = (0..k).map(|kk| (post.column(kk).sum() / t).max(floor)).collect();
            for kk in 0..k {
                model.gamma_f[kk][0] = (f[kk] / f[0]).ln();
            }
        } else {
            let fit = weighted_multinomial_logit(design.rf_all(), design.lf, post, &model.gamma_f, opts.newton_max_iter)?;
            ridge += fit.ridge_steps;
            for kk in 0..k {
                model.gamma_f[kk] = fit.coef[kk * design.lf..(kk + 1) * design.lf].to_vec();
            }
        }
    }
    Ok(ridge)
}

/// One EM map `theta -> M(theta)` with the likelihood at the new point.
fn em_map(
    design: &Design,
    y: &[Vec<f64>],
    comp: &Components,
    model: &MixtureModel,
    opts: &EmOptions,
    ridge_steps: &mut usize,
) -> Result<(MixtureModel, Components)> {
    let mut next = model.clone();
    *ridge_steps += m_step(design, y, &comp.posteriors(), &mut next, opts)?;
    let c = design.components(&next, opts.clip);
    if !c.loglik.is_finite() {
        return Err(Error::NonFinite("mixture log-likelihood"));
    }
    Ok((next, c))
}

/// Flatten the free coefficients (type-0 weights excluded).
fn flatten(model: &MixtureModel) -> Vec<f64> {
    let mut v: Vec<f64> = model.gamma_p.iter().flatten().flatten().copied().collect();
    v.extend(model.gamma_f.iter().skip(1).flatten());
    v
}

fn unflatten(template: &MixtureModel, v: &[f64]) -> MixtureModel {
    let mut m = template.clone();
    let mut it = v.iter();
    for g in m.gamma_p.iter_mut().flatten().flatten() {
        *g = *it.next().expect("length matches");
    }
    for g in m.gamma_f.iter_mut().skip(1).flatten() {
        *g = *it.next().expect("length matches");
    }
    m
}

fn run_em(design: &Design, y: &[Vec<f64>], mut model: MixtureModel, opts: &EmOptions) -> Result<Run> {
    let mut comp = design.components(&model, opts.clip);
    if !comp.loglik.is_finite() {
        return Err(Error::NonFinite("initial mixture log-likelihood"));
    }
    let mut trace = vec![comp.loglik];
    let mut violations = 0;
    let mut ridge_steps = 0;
    let mut converged = false;
    let mut iterations = 0;
    let below = |new: f64, old: f64| new - old < -MONOTONE_SLACK * (1.0 + old.abs());
    while iterations < opts.max_iter {
        let start_ll = comp.loglik;
        let (m1, c1) = em_map(design, y, &comp, &model, opts, &mut ridge_steps)?;
        iterations += 1;
        violations += usize::from(below(c1.loglik, comp.loglik));
        trace.push(c1.loglik);
        if !opts.accelerate || iterations + 2 > opts.max_iter || c1.loglik - start_ll < opts.tol {
            model = m1;
            comp = c1;
        } else {
            let (m2, c2) = em_map(design, y, &c1, &m1, opts, &mut ridge_steps)?;
            iterations += 1;
            violations += usize::from(below(c2.loglik, c1.loglik));
            trace.push(c2.loglik);
            let (t0, t1, t2) = (flatten(&model), flatten(&m1), flatten(&m2));
            let r: Vec<f64> = t1.iter().zip(&t0).map(|(a, b)| a - b).collect();
            let v: Vec<f64> = (0..t0.len()).map(|i| t2[i] - t1[i] - r[i]).collect();
            let (rn, vn) = (norm(&r), norm(&v));
            model = m2;
            comp = c2;
            if rn > 0.0 && vn > 0.0 {
                let step = -(rn / vn).max(1.0);
                let tx: Vec<f64> = (0..t0.len()).map(|i| t0[i] - 2.0 * step * r[i] + step * step * v[i]).collect();
                let mx = unflatten(&model, &tx);
                let cx = design.components(&mx, opts.clip);
                if cx.loglik.is_finite() {
                    // an extrapolated point can make a Newton M-step fail; that only
                    // means the extrapolation is rejected
                    if let Ok((m3, c3)) = em_map(design, y, &cx, &mx, opts, &mut ridge_steps) {
                        iterations += 1;
                        if c3.loglik >= comp.loglik {
                            trace.push(c3.loglik);
                            model = m3;
                            comp = c3;
                        }
                    }
                }
            }
        }
        if comp.loglik - start_ll < opts.tol {
            converged = true;
            break;
        }
    }
    Ok(Run {
        model,
        loglik: comp.loglik,
        iterations,
        converged,
        trace,
        violations,
        ridge_steps,
    })
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Starting point from a soft split of markets by their number of entrants.
fn entrant_count_start(design: &Design, y: &[Vec<f64>], model: MixtureModel, opts: &EmOptions) -> Result<MixtureModel> {
    let k = model.k;
    let t = design.t;
    let mut order: Vec<usize> = (0..t).collect();
    let count = |r: usize| (0..design.j).map(|j| design.entered(r, j)).sum::<f64>();
    order.sort_by(|&a, &b| count(a).total_cmp(&count(b)).then(a.cmp(&b)));
    let mut post = DMatrix::from_element(t, k, if k > 1 { 0.2 / (k - 1) as f64 } else { 1.0 });
    if k > 1 {
        for (rank, &r) in order.iter().enumerate() {
            post[(r, rank * k / t)] = 0.8;
        }
    }
    let mut model = model;
    m_step(design, y, &post, &mut model, opts)?;
    Ok(model)
}

fn perturb(model: &MixtureModel, index: usize, seed: u64) -> MixtureModel {
    let mut r = rng::stream(seed, rng::tag::RESTART, index as u64);
    let mut m = model.clone();
    for gj in m.gamma_p.iter_mut() {
        for g in gj.iter_mut() {
            for (c, v) in g.iter_mut().enumerate() {
                let z: f64 = StandardNormal.sample(&mut r);
                *v += if c == 0 { z } else { 0.3 * z };
            }
        }
    }
    for g in m.gamma_f.iter_mut().skip(1) {
        let z: f64 = StandardNormal.sample(&mut r);
        g[0] += 0.5 * z;
    }
    m
}

fn finish(data: &EntryData, design: &Design, runs: Vec<Result<Run>>) -> Result<MixtureFit> {
    let restarts: Vec<RestartSummary> = runs
        .iter()
        .enumerate()
        .map(|(i, r)| match r {
            Ok(run) => RestartSummary {
                index: i,
                loglik: Some(run.loglik),
                iterations: run.iterations,
                converged: run.converged,
                monotone_violations: run.violations,
                error: None,
            },
            Err(e) => RestartSummary {
                index: i,
                loglik: None,
                iterations: 0,
                converged: false,
                monotone_violations: 0,
                error: Some(e.to_string()),
            },
        })
        .collect();
    let mut best: Option<(usize, Run)> = None;
    for (i, r) in runs.into_iter().enumerate() {
        if let Ok(run) = r {
            if best.as_ref().is_none_or(|(_, b)| run.loglik > b.loglik) {
                best = Some((i, run));
            }
        }
    }
    let (selected, run) = best.ok_or_else(|| Error::Estimation("all EM restarts failed".into()))?;
    let (model, type_order) = run.model.canonicalize(data)?;
    let comp = design.components(&model, super::PROB_CLIP);
    let post = comp.posteriors();
    let n_params = model.n_params();
    let n_obs = data.n_markets();
    let loglik = comp.loglik;
    Ok(MixtureFit {
        mean_type_entry: model.mean_type_entry(data)?,
        mean_weights: model.mean_weights(data)?,
        posteriors: post.row_iter().map(|r| r.iter().copied().collect()).collect(),
        aic: -2.0 * loglik + 2.0 * n_params as f64,
        bic: -2.0 * loglik + n_params as f64 * (n_obs as f64).ln(),
        loglik,
        n_params,
        n_obs,
        converged: run.converged,
        iterations: run.iterations,
        loglik_trace: run.trace,
        monotone_violations: run.violations,
        clip_events: comp.clipped,
        ridge_steps: run.ridge_steps,
        selected_restart: selected,
        restarts,
        type_order,
        model,
    })
}

/// Fit a `k`-type mixture by EM, keeping the best of `opts.n_restarts` runs.
///
/// Run 0 starts from a split of markets by entrant count; the others perturb that
/// start with seeded random noise. Types are returned in canonical order.
pub fn em_fit(data: &EntryData, k: usize, spec: &BasisSpec, opts: &EmOptions) -> Result<MixtureFit> {
    if k == 0 {
        return Err(Error::InvalidParameter("number of types must be at least 1".into()));
    }
    if k >= 2 && data.n_firms() < 3 {
        return Err(Error::InvalidParameter("mixtures with two or more types need at least three firms".into()));
    }
    if data.n_markets() == 0 {
        return Err(Error::Data("no markets".into()));
    }
    let basis = Basis::fit(spec, data)?;
    let design = Design::new(&basis, data)?;
    let y = entry_columns(&design);
    let zero = MixtureModel::zeros(k, data.n_firms(), basis);
    let start = entrant_count_start(&design, &y, zero, opts)?;
    let n = opts.n_restarts.max(1);
    let runs: Vec<Result<Run>> = (0..n)
        .into_par_iter()
        .map(|r| {
            let init = if r == 0 { start.clone() } else { perturb(&start, r, opts.seed) };
            run_em(&design, &y, init, opts)
        })
        .collect();
    finish(data, &design, runs)
}

/// Single EM run from `start`, reusing its basis (e.g. a bootstrap sample warm-started
/// at the full-sample estimate).
pub fn em_refit(data: &EntryData, start: &MixtureModel, opts: &EmOptions) -> Result<MixtureFit> {
    start.validate()?;
    if start.n_firms() != data.n_firms() {
        return Err(Error::dim("firms", start.n_firms(), data.n_firms()));
    }
    let design = Design::new(&start.basis, data)?;
    let y = entry_columns(&design);
    let run = run_em(&design, &y, start.clone(), opts);
    finish(data, &design, vec![run])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn mixture_data(t: usize, seed: u64) -> EntryData {
        let mut r = rng::stream(seed, 1, 0);
        let mut entries = Vec::new();
        let mut cov = Vec::new();
        for _ in 0..t {
            let x: f64 = StandardNormal.sample(&mut r);
            let k = if r.random::<f64>() < 0.6 { 0 } else { 1 };
            let row = (0..4)
                .map(|j| {
                    let z = if k == 0 { -1.0 } else { 1.0 } + 0.5 * x + 0.2 * j as f64;
                    r.random::<f64>() < crate::equilibrium::logistic(z)
                })
                .collect();
            entries.push(row);
            cov.push(x);
        }
        EntryData::new(entries, DMatrix::from_vec(t, 1, cov), vec!["x".into()]).unwrap()
    }

    #[test]
    fn em_is_monotone_and_posteriors_normalized() {
        let data = mixture_data(400, 3);
        let opts = EmOptions { n_restarts: 3, ..Default::default() };
        let fit = em_fit(&data, 2, &BasisSpec::default(), &opts).unwrap();
        assert_eq!(fit.monotone_violations, 0);
        for w in fit.loglik_trace.windows(2) {
            assert!(w[1] >= w[0] - MONOTONE_SLACK * (1.0 + w[0].abs()));
        }
        for p in &fit.posteriors {
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!(fit.mean_type_entry[0] <= fit.mean_type_entry[1]);
        let n = fit.n_params as f64;
        assert!((fit.bic - (-2.0 * fit.loglik + n * 400f64.ln())).abs() < 1e-9);
    }

    #[test]
    fn refit_from_optimum_stays_put() {
        let data = mixture_data(300, 5);
        let opts = EmOptions { n_restarts: 2, ..Default::default() };
        let fit = em_fit(&data, 2, &BasisSpec::default(), &opts).unwrap();
        let again = em_refit(&data, &fit.model, &opts).unwrap();
        assert!((again.loglik - fit.loglik).abs() < 1e-5);
    }

    #[test]
    fn accelerated_em_is_monotone_and_matches_plain() {
        let data = mixture_data(400, 7);
        let plain = EmOptions { n_restarts: 2, tol: 1e-9, ..Default::default() };
        let fast = EmOptions { accelerate: true, ..plain.clone() };
        let a = em_fit(&data, 2, &BasisSpec::default(), &plain).unwrap();
        let b = em_fit(&data, 2, &BasisSpec::default(), &fast).unwrap();
        assert_eq!(b.monotone_violations, 0);
        for w in b.loglik_trace.windows(2) {
            assert!(w[1] >= w[0] - MONOTONE_SLACK * (1.0 + w[0].abs()));
        }
        assert!((a.loglik - b.loglik).abs() < 1e-4, "{} vs {}", a.loglik, b.loglik);
    }

    #[test]
    fn rejects_two_types_with_two_firms() {
        let data = EntryData::new(vec![vec![true, false]; 5], DMatrix::from_element(5, 1, 1.0), vec!["c".into()]).unwrap();
        assert!(em_fit(&data, 2, &BasisSpec::default(), &EmOptions::default()).is_err());
        assert!(em_fit(&data, 0, &BasisSpec::default(), &EmOptions::default()).is_err());
    }
}
