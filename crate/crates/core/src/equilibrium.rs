//! Nash–Bertrand pricing among entrants and the Bayesian–Nash entry game.
//!
//! Entry profits are `E[VP_j | kappa, P_-j] - fc_j - eta_j` with `eta_j` standard
//! logistic, so an equilibrium is a fixed point `P_j = Λ(E[VP_j] - fc_j)`.
//! Expected variable profits are Monte Carlo averages over draws of `(xi, omega)`
//! given the market type, using the same draws for every entry profile.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::demand::{check_sigma, DemandParams};
use crate::error::{Error, Result};

/// Largest number of firms for which entry profiles are enumerated.
pub const MAX_ENUMERATED_FIRMS: usize = 10;

/// Cost side of the model and the distribution of unobservables given the market type.
///
/// `mc_x` and `fc_x` are coefficients on `[1, x_1, ..., x_k]`, the firm's
/// characteristic vector with a leading constant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostParams {
    pub mc_x: Vec<f64>,
    /// Standard deviation of the marginal-cost shock `omega`.
    pub omega_sd: f64,
    pub fc_x: Vec<f64>,
    /// Firm-specific fixed-cost shifts added to `fc_x' [1, x]`; empty means zero.
    #[serde(default)]
    pub fc_firm: Vec<f64>,
    /// Mean of the demand unobservable for each market type.
    pub type_xi_mean: Vec<f64>,
    /// Within-type standard deviation of `xi`.
    pub xi_sd: f64,
}

impl CostParams {
    pub fn validate(&self, n_vars: usize) -> Result<()> {
        if self.omega_sd < 0.0 || self.xi_sd < 0.0 {
            return Err(Error::InvalidParameter("unobservable standard deviations must be non-negative".into()));
        }
        if self.mc_x.len() != n_vars + 1 {
            return Err(Error::dim("mc_x (constant + characteristics)", n_vars + 1, self.mc_x.len()));
        }
        if self.fc_x.len() != n_vars + 1 {
            return Err(Error::dim("fc_x (constant + characteristics)", n_vars + 1, self.fc_x.len()));
        }
        if self.type_xi_mean.is_empty() {
            return Err(Error::InvalidParameter("at least one market type required".into()));
        }
        Ok(())
    }
}

/// Full structural parameter set used by the solvers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// `beta` is over `[1, x_d ...]` where `x_d` are the columns listed in `demand_vars`.
    pub demand: DemandParams,
    pub demand_vars: Vec<usize>,
    pub cost: CostParams,
}

fn affine(coefs: &[f64], x: &[f64]) -> f64 {
    coefs[0] + coefs[1..].iter().zip(x).map(|(c, v)| c * v).sum::<f64>()
}

impl ModelParams {
    pub fn validate(&self, n_vars: usize) -> Result<()> {
        self.demand.validate()?;
        if self.demand.alpha >= 0.0 {
            return Err(Error::InvalidParameter("price coefficient alpha must be negative".into()));
        }
        if self.demand.beta.len() != self.demand_vars.len() + 1 {
            return Err(Error::dim("beta (constant + demand vars)", self.demand_vars.len() + 1, self.demand.beta.len()));
        }
        if let Some(&v) = self.demand_vars.iter().find(|&&v| v >= n_vars) {
            return Err(Error::InvalidParameter(format!("demand variable index {v} out of range")));
        }
        self.cost.validate(n_vars)
    }

    /// `[1, x_d ...]` for one firm.
    pub fn demand_design(&self, x: &[f64]) -> Vec<f64> {
        std::iter::once(1.0)
            .chain(self.demand_vars.iter().map(|&v| x[v]))
            .collect()
    }

    /// `x_d' beta` including the intercept, without price and `xi`.
    pub fn base_utility(&self, x: &[f64]) -> f64 {
        let d = self.demand_design(x);
        d.iter().zip(&self.demand.beta).map(|(a, b)| a * b).sum()
    }

    pub fn marginal_cost(&self, x: &[f64], omega: f64) -> f64 {
        affine(&self.cost.mc_x, x) + omega
    }

    pub fn fixed_cost(&self, firm: usize, x: &[f64]) -> f64 {
        affine(&self.cost.fc_x, x) + self.cost.fc_firm.get(firm).copied().unwrap_or(0.0)
    }

    pub fn n_types(&self) -> usize {
        self.cost.type_xi_mean.len()
    }
}

/// Options for the damped pricing fixed point `p <- (1-d) p + d (mc + markup(p))`.
///
/// An attempt that has not improved its best residual for `stall_window` iterations
/// is abandoned and restarted with half the damping, at most `retries` times.
/// `max_iter` bounds each attempt.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BertrandOptions {
    pub max_iter: usize,
    pub damping: f64,
    pub tol: f64,
    pub retries: usize,
    pub stall_window: usize,
}

impl Default for BertrandOptions {
    fn default() -> Self {
        Self {
            max_iter: 10_000,
            damping: 0.5,
            tol: 1e-10,
            retries: 4,
            stall_window: 200,
        }
    }
}

/// Prices, shares and variable profits at a pricing equilibrium.
#[derive(Clone, Debug, PartialEq)]
pub struct BertrandOutcome {
    /// `None` for inactive firms.
    pub prices: Vec<Option<f64>>,
    pub shares: Vec<f64>,
    pub s0: f64,
    /// `(p - mc) * s * H`, zero for inactive firms.
    pub profits: Vec<f64>,
    /// Largest first-order-condition residual `|p - mc + s / (ds/dp)|`.
    pub residual: f64,
    pub iterations: usize,
}

/// Single-nest shares for the active firms, written into `shares`; returns `s0`.
fn nest_shares(delta: &[f64], active: &[bool], sigma: f64, shares: &mut [f64]) -> f64 {
    let scale = 1.0 / (1.0 - sigma);
    let mut m = f64::NEG_INFINITY;
    for (d, &a) in delta.iter().zip(active) {
        if a && *d * scale > m {
            m = *d * scale;
        }
    }
    if m == f64::NEG_INFINITY {
        shares.iter_mut().for_each(|s| *s = 0.0);
        return 1.0;
    }
    let sum: f64 = delta
        .iter()
        .zip(active)
        .filter(|(_, &a)| a)
        .map(|(d, _)| (d * scale - m).exp())
        .sum();
    let log_d = m + sum.ln();
    let log_iv = log_d * (1.0 - sigma);
    let log_denom = if log_iv > 0.0 {
        log_iv + (1.0 + (-log_iv).exp()).ln()
    } else {
        (1.0 + log_iv.exp()).ln()
    };
    for ((s, d), &a) in shares.iter_mut().zip(delta).zip(active) {
        *s = if a { (d * scale - log_d + log_iv - log_denom).exp() } else { 0.0 };
    }
    (-log_denom).exp()
}

type Attempt = std::result::Result<(Vec<f64>, Vec<f64>, f64, f64, usize), (usize, f64)>;

/// One damped run from the single-product monopoly-style starting markup.
fn pricing_attempt(
    active: &[bool],
    base: &[f64],
    mc: &[f64],
    alpha: f64,
    sigma: f64,
    damping: f64,
    opts: &BertrandOptions,
) -> Attempt {
    let n = active.len();
    let mut p: Vec<f64> = mc.iter().map(|c| c + (1.0 - sigma) / -alpha).collect();
    let mut delta = vec![0.0; n];
    let mut shares = vec![0.0; n];
    let mut target = vec![0.0; n];
    let mut best = f64::INFINITY;
    let mut since_best = 0;
    if !active.iter().any(|&a| a) {
        return Ok((p, shares, 1.0, 0.0, 0));
    }
    let mut iterations = 0;
    loop {
        for j in 0..n {
            delta[j] = base[j] + alpha * p[j];
        }
        let s0 = nest_shares(&delta, active, sigma, &mut shares);
        let inside = 1.0 - s0;
        let mut residual = 0.0_f64;
        for j in 0..n {
            if !active[j] {
                continue;
            }
            let deriv = 1.0 / (1.0 - sigma) - sigma / (1.0 - sigma) * shares[j] / inside - shares[j];
            target[j] = mc[j] - 1.0 / (alpha * deriv);
            residual = residual.max((p[j] - target[j]).abs());
        }
        if !residual.is_finite() {
            return Err((iterations, residual));
        }
        if residual < opts.tol {
            return Ok((p, shares, s0, residual, iterations));
        }
        if residual < best {
            best = residual;
            since_best = 0;
        } else {
            since_best += 1;
        }
        if iterations >= opts.max_iter || since_best > opts.stall_window {
            return Err((iterations, residual));
        }
        for j in 0..n {
            if active[j] {
                p[j] = (1.0 - damping) * p[j] + damping * target[j];
            }
        }
        iterations += 1;
    }
}

/// Solve the pricing game among `active` firms given non-price utility `base`
/// (`x'beta + xi`) and marginal costs `mc`. Inactive firms are ignored.
pub fn solve_pricing(
    active: &[bool],
    base: &[f64],
    mc: &[f64],
    alpha: f64,
    sigma: f64,
    market_size: f64,
    opts: &BertrandOptions,
) -> Result<BertrandOutcome> {
    let n = active.len();
    if base.len() != n || mc.len() != n {
        return Err(Error::dim("pricing inputs", n, base.len().min(mc.len())));
    }
    if !(alpha < 0.0) {
        return Err(Error::InvalidParameter("pricing requires alpha < 0".into()));
    }
    check_sigma(sigma)?;

    let mut damping = opts.damping;
    let mut total = 0;
    let mut attempt = 0;
    let (p, shares, s0, residual) = loop {
        match pricing_attempt(active, base, mc, alpha, sigma, damping, opts) {
            Ok((p, shares, s0, residual, iterations)) => {
                total += iterations;
                break (p, shares, s0, residual);
            }
            Err((iterations, residual)) => {
                total += iterations;
                if attempt >= opts.retries {
                    return Err(Error::NonConvergence { solver: "Bertrand pricing", iterations: total, residual });
                }
                attempt += 1;
                damping *= 0.5;
            }
        }
    };
    let iterations = total;

    let prices: Vec<Option<f64>> = (0..n).map(|j| active[j].then_some(p[j])).collect();
    let profits = (0..n)
        .map(|j| if active[j] { (p[j] - mc[j]) * shares[j] * market_size } else { 0.0 })
        .collect();
    Ok(BertrandOutcome {
        prices,
        shares,
        s0,
        profits,
        residual,
        iterations,
    })
}

/// Pricing equilibrium for characteristics `x` (one row per firm) and realized unobservables.
pub fn solve_bertrand(
    active: &[bool],
    x: &[Vec<f64>],
    xi: &[f64],
    omega: &[f64],
    params: &ModelParams,
    market_size: f64,
    opts: &BertrandOptions,
) -> Result<BertrandOutcome> {
    let n = active.len();
    if x.len() != n || xi.len() != n || omega.len() != n {
        return Err(Error::dim("market arrays", n, x.len()));
    }
    let base: Vec<f64> = (0..n).map(|j| params.base_utility(&x[j]) + xi[j]).collect();
    let mc: Vec<f64> = (0..n).map(|j| params.marginal_cost(&x[j], omega[j])).collect();
    solve_pricing(active, &base, &mc, params.demand.alpha, params.demand.sigma, market_size, opts)
}

/// Per-firm variable profit for an entry profile; zero for non-entrants.
pub fn variable_profit(
    profile: &[bool],
    x: &[Vec<f64>],
    xi: &[f64],
    omega: &[f64],
    params: &ModelParams,
    market_size: f64,
    opts: &BertrandOptions,
) -> Result<Vec<f64>> {
    Ok(solve_bertrand(profile, x, xi, omega, params, market_size, opts)?.profits)
}

/// One Monte Carlo draw of the demand and cost unobservables for all firms.
#[derive(Clone, Debug, PartialEq)]
pub struct UnobservableDraw {
    pub xi: Vec<f64>,
    pub omega: Vec<f64>,
}

/// Draw `(xi, omega)` given market type `kappa` (0-based). When both standard
/// deviations are zero every draw coincides and a single draw is returned.
pub fn draw_unobservables<R: Rng + ?Sized>(
    kappa: usize,
    n_firms: usize,
    cost: &CostParams,
    n_draws: usize,
    rng: &mut R,
) -> Vec<UnobservableDraw> {
    let mu = cost.type_xi_mean[kappa];
    let n = if cost.xi_sd == 0.0 && cost.omega_sd == 0.0 { 1 } else { n_draws.max(1) };
    (0..n)
        .map(|_| {
            let xi = (0..n_firms)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(rng);
                    mu + cost.xi_sd * z
                })
                .collect();
            let omega = (0..n_firms)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(rng);
                    cost.omega_sd * z
                })
                .collect();
            UnobservableDraw { xi, omega }
        })
        .collect()
}

/// Mean variable profit of every firm under every entry profile (bitmask over firms),
/// averaged over a common set of draws.
#[derive(Clone, Debug, PartialEq)]
pub struct ProfitTable {
    n_firms: usize,
    values: Vec<f64>,
    /// Largest pricing first-order residual met while building the table.
    pub max_foc_residual: f64,
}

impl ProfitTable {
    pub fn build(
        x: &[Vec<f64>],
        params: &ModelParams,
        market_size: f64,
        draws: &[UnobservableDraw],
        opts: &BertrandOptions,
    ) -> Result<Self> {
        let n = x.len();
        if n > MAX_ENUMERATED_FIRMS {
            return Err(Error::TooManyFirms(n));
        }
        if draws.is_empty() {
            return Err(Error::InvalidParameter("at least one draw required".into()));
        }
        let n_profiles = 1usize << n;
        let mut values = vec![0.0; n_profiles * n];
        let mut max_res: f64 = 0.0;
        let base0: Vec<f64> = x.iter().map(|xj| params.base_utility(xj)).collect();
        let mc0: Vec<f64> = x.iter().map(|xj| params.marginal_cost(xj, 0.0)).collect();
        let mut active = vec![false; n];
        let mut base = vec![0.0; n];
        let mut mc = vec![0.0; n];
        let weight = 1.0 / draws.len() as f64;
        for mask in 1..n_profiles {
            for (j, a) in active.iter_mut().enumerate() {
                *a = mask >> j & 1 == 1;
            }
            for d in draws {
                for j in 0..n {
                    base[j] = base0[j] + d.xi[j];
                    mc[j] = mc0[j] + d.omega[j];
                }
                let out = solve_pricing(
                    &active,
                    &base,
                    &mc,
                    params.demand.alpha,
                    params.demand.sigma,
                    market_size,
                    opts,
                )?;
                max_res = max_res.max(out.residual);
                for j in 0..n {
                    values[mask * n + j] += weight * out.profits[j];
                }
            }
        }
        Ok(Self {
            n_firms: n,
            values,
            max_foc_residual: max_res,
        })
    }

    pub fn n_firms(&self) -> usize {
        self.n_firms
    }

    /// Mean variable profit of firm `j` when the set of entrants is `mask`.
    pub fn get(&self, mask: usize, j: usize) -> f64 {
        self.values[mask * self.n_firms + j]
    }

    /// `sum over rival profiles of prod P_i^a_i (1-P_i)^(1-a_i) * VP_j(profile)`.
    pub fn expected_variable_profit(&self, j: usize, probs: &[f64]) -> f64 {
        let n = self.n_firms;
        let mut total = 0.0;
        for mask in 0..(1usize << n) {
            if mask >> j & 1 == 0 {
                continue;
            }
            let mut w = 1.0;
            for (i, &p) in probs.iter().enumerate() {
                if i == j {
                    continue;
                }
                w *= if mask >> i & 1 == 1 { p } else { 1.0 - p };
            }
            total += w * self.get(mask, j);
        }
        total
    }
}

/// Expected entry profit of firm `j` net of the deterministic fixed cost; `eta` is excluded.
pub fn expected_profit(table: &ProfitTable, j: usize, probs: &[f64], fixed_cost: f64) -> f64 {
    table.expected_variable_profit(j, probs) - fixed_cost
}

/// Convenience form that builds the profit table for market type `kappa` from fresh draws.
#[allow(clippy::too_many_arguments)]
pub fn expected_profit_for_type<R: Rng + ?Sized>(
    j: usize,
    probs: &[f64],
    x: &[Vec<f64>],
    kappa: usize,
    params: &ModelParams,
    market_size: f64,
    n_draws: usize,
    rng: &mut R,
) -> Result<f64> {
    let draws = draw_unobservables(kappa, x.len(), &params.cost, n_draws, rng);
    let table = ProfitTable::build(x, params, market_size, &draws, &BertrandOptions::default())?;
    Ok(expected_profit(&table, j, probs, params.fixed_cost(j, &x[j])))
}

/// Logistic CDF.
pub fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BneOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub damping: f64,
}

impl Default for BneOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 10_000,
            damping: 0.5,
        }
    }
}

/// A Bayesian–Nash equilibrium in entry probabilities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntryEquilibrium {
    pub probs: Vec<f64>,
    /// Sup-norm of `P - Λ(π(P))` at the returned point.
    pub residual: f64,
    pub iterations: usize,
}

/// Best response `Λ(E[VP_j | P_-j] - fc_j)` for every firm.
pub fn best_response(table: &ProfitTable, fixed_costs: &[f64], probs: &[f64]) -> Vec<f64> {
    (0..table.n_firms())
        .map(|j| logistic(expected_profit(table, j, probs, fixed_costs[j])))
        .collect()
}

/// Damped iteration `P <- (1-d) P + d BR(P)` started from `P = 0.5`.
pub fn solve_bne(table: &ProfitTable, fixed_costs: &[f64], opts: &BneOptions) -> Result<EntryEquilibrium> {
    let n = table.n_firms();
    if fixed_costs.len() != n {
        return Err(Error::dim("fixed costs", n, fixed_costs.len()));
    }
    let mut probs = vec![0.5; n];
    let mut iterations = 0;
    loop {
        let br = best_response(table, fixed_costs, &probs);
        let residual = probs
            .iter()
            .zip(&br)
            .fold(0.0_f64, |m, (p, b)| m.max((p - b).abs()));
        if residual < opts.tol {
            return Ok(EntryEquilibrium { probs, residual, iterations });
        }
        if iterations >= opts.max_iter || !residual.is_finite() {
            return Err(Error::NonConvergence { solver: "entry game", iterations, residual });
        }
        for (p, b) in probs.iter_mut().zip(&br) {
            *p = (1.0 - opts.damping) * *p + opts.damping * b;
        }
        iterations += 1;
    }
}

/// Fixed costs `fc_x' [1, x_j] + fc_firm_j` for every firm.
pub fn fixed_costs(x: &[Vec<f64>], params: &ModelParams) -> Vec<f64> {
    x.iter().enumerate().map(|(j, xj)| params.fixed_cost(j, xj)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params(sigma: f64, type_means: Vec<f64>) -> ModelParams {
        ModelParams {
            demand: DemandParams::new(-1.2, vec![1.0, 0.5], sigma).unwrap(),
            demand_vars: vec![0],
            cost: CostParams {
                mc_x: vec![1.0, 0.0, 0.3],
                omega_sd: 0.2,
                fc_x: vec![1.0, 0.0, 0.0],
                fc_firm: vec![],
                type_xi_mean: type_means,
                xi_sd: 0.3,
            },
        }
    }

    /// Bisection on the monopoly plain-logit first-order condition
    /// `p - mc - 1/(-alpha (1 - s(p))) = 0`.
    fn monopoly_price_by_bisection(base: f64, mc: f64, alpha: f64) -> f64 {
        let g = |p: f64| {
            let e = (base + alpha * p).exp();
            let s = e / (1.0 + e);
            p - mc - 1.0 / (-alpha * (1.0 - s))
        };
        let (mut lo, mut hi) = (mc, mc + 100.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if g(mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn monopoly_matches_bisection() {
        let opts = BertrandOptions::default();
        for &(base, mc, alpha) in &[(1.0, 1.0, -1.0), (3.0, 0.5, -2.0), (-1.0, 2.0, -0.7)] {
            let out = solve_pricing(&[true], &[base], &[mc], alpha, 0.0, 1.0, &opts).unwrap();
            let oracle = monopoly_price_by_bisection(base, mc, alpha);
            assert!((out.prices[0].unwrap() - oracle).abs() < 1e-8);
            assert!(out.residual < 1e-8);
        }
    }

    #[test]
    fn empty_active_set() {
        let out = solve_pricing(&[false, false], &[1.0, 1.0], &[1.0, 1.0], -1.0, 0.3, 5.0, &BertrandOptions::default())
            .unwrap();
        assert_eq!(out.prices, vec![None, None]);
        assert_eq!(out.s0, 1.0);
        assert_eq!(out.profits, vec![0.0, 0.0]);
    }

    #[test]
    fn pricing_shares_agree_with_demand_module() {
        use crate::demand::{compute_shares, Nesting};
        let delta = [0.7, -1.2, 2.5];
        let active = [true, false, true];
        for sigma in [0.0, 0.3, 0.85] {
            let mut s = [0.0; 3];
            let s0 = nest_shares(&delta, &active, sigma, &mut s);
            let r = compute_shares(&delta, &active, sigma, &Nesting::Single).unwrap();
            assert!((s0 - r.s0).abs() < 1e-14);
            for j in 0..3 {
                assert!((s[j] - r.s[j]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn symmetric_duopoly_prices_are_equal() {
        let out = solve_pricing(&[true, true], &[1.0, 1.0], &[1.0, 1.0], -1.5, 0.6, 1.0, &BertrandOptions::default())
            .unwrap();
        let (p1, p2) = (out.prices[0].unwrap(), out.prices[1].unwrap());
        assert!((p1 - p2).abs() < 1e-12);
        assert!(out.residual < 1e-8);
        assert!(p1 > 1.0);
    }

    #[test]
    fn positive_alpha_rejected() {
        assert!(solve_pricing(&[true], &[0.0], &[1.0], 0.5, 0.0, 1.0, &BertrandOptions::default()).is_err());
    }

    #[test]
    fn non_convergence_reports_residual() {
        let opts = BertrandOptions { max_iter: 2, ..Default::default() };
        match solve_pricing(&[true, true], &[1.0, 2.0], &[1.0, 1.0], -1.0, 0.5, 1.0, &opts) {
            Err(Error::NonConvergence { residual, .. }) => assert!(residual > 0.0),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn variable_profit_cases() {
        let p = params(0.4, vec![0.0]);
        let x = vec![vec![0.5, 1.0], vec![0.5, 1.0]];
        let zero = vec![0.0, 0.0];
        let opts = BertrandOptions::default();
        let mono = variable_profit(&[true, false], &x, &zero, &zero, &p, 10.0, &opts).unwrap();
        assert_eq!(mono[1], 0.0);
        let duo = variable_profit(&[true, true], &x, &zero, &zero, &p, 10.0, &opts).unwrap();
        assert!(duo[0] <= mono[0]);

        // Plain-logit monopoly VP against the bisection price.
        let p0 = params(0.0, vec![0.0]);
        let mono0 = variable_profit(&[true, false], &x, &zero, &zero, &p0, 10.0, &opts).unwrap();
        let base = p0.base_utility(&x[0]);
        let mc = p0.marginal_cost(&x[0], 0.0);
        let price = monopoly_price_by_bisection(base, mc, p0.demand.alpha);
        let e = (base + p0.demand.alpha * price).exp();
        let oracle = (price - mc) * e / (1.0 + e) * 10.0;
        assert!((mono0[0] - oracle).abs() < 1e-7);
    }

    fn table_for(p: &ModelParams, x: &[Vec<f64>], kappa: usize, seed: u64) -> ProfitTable {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let draws = draw_unobservables(kappa, x.len(), &p.cost, 30, &mut rng);
        ProfitTable::build(x, p, 8.0, &draws, &BertrandOptions::default()).unwrap()
    }

    #[test]
    fn expected_profit_matches_enumeration() {
        let p = params(0.5, vec![0.3]);
        let x: Vec<Vec<f64>> = (0..4).map(|j| vec![0.2 * j as f64, 1.0 - 0.1 * j as f64]).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let draws = draw_unobservables(0, 4, &p.cost, 7, &mut rng);
        let table = ProfitTable::build(&x, &p, 8.0, &draws, &BertrandOptions::default()).unwrap();
        let probs = [0.3, 0.6, 0.45, 0.8];
        for j in 0..4 {
            // Brute force: solve every rival profile directly.
            let mut oracle = 0.0;
            for rivals in 0..8usize {
                let mut profile = vec![false; 4];
                let mut w = 1.0;
                let mut bit = 0;
                for i in 0..4 {
                    if i == j {
                        profile[i] = true;
                        continue;
                    }
                    let on = rivals >> bit & 1 == 1;
                    bit += 1;
                    profile[i] = on;
                    w *= if on { probs[i] } else { 1.0 - probs[i] };
                }
                let mut vp = 0.0;
                for d in &draws {
                    vp += variable_profit(&profile, &x, &d.xi, &d.omega, &p, 8.0, &BertrandOptions::default())
                        .unwrap()[j];
                }
                oracle += w * vp / draws.len() as f64;
            }
            let got = table.expected_variable_profit(j, &probs);
            assert!((got - oracle).abs() < 1e-12 * oracle.abs().max(1.0), "{got} vs {oracle}");
        }
    }

    #[test]
    fn three_firm_half_probabilities_average_four_profiles() {
        let p = params(0.3, vec![0.0]);
        let x: Vec<Vec<f64>> = (0..3).map(|j| vec![0.1 * j as f64, 0.5]).collect();
        let t = table_for(&p, &x, 0, 9);
        let got = t.expected_variable_profit(0, &[0.0, 0.5, 0.5]);
        let oracle = (t.get(0b001, 0) + t.get(0b011, 0) + t.get(0b101, 0) + t.get(0b111, 0)) / 4.0;
        assert!((got - oracle).abs() < 1e-14);
    }

    #[test]
    fn degenerate_rivals_give_monopoly_profit() {
        let p = params(0.3, vec![0.0]);
        let x: Vec<Vec<f64>> = (0..3).map(|j| vec![0.1 * j as f64, 0.5]).collect();
        let t = table_for(&p, &x, 0, 11);
        let fc = p.fixed_cost(1, &x[1]);
        assert_eq!(expected_profit(&t, 1, &[0.0, 0.9, 0.0], fc), t.get(0b010, 1) - fc);
    }

    #[test]
    fn single_firm_bne_is_closed_form() {
        let p = params(0.3, vec![0.0]);
        let x = vec![vec![0.4, 0.2]];
        let t = table_for(&p, &x, 0, 5);
        let fc = fixed_costs(&x, &p);
        let eq = solve_bne(&t, &fc, &BneOptions::default()).unwrap();
        assert!((eq.probs[0] - logistic(t.get(1, 0) - fc[0])).abs() < 1e-8);
    }

    #[test]
    fn symmetric_firms_symmetric_equilibrium() {
        let mut p = params(0.4, vec![0.5]);
        p.cost.xi_sd = 0.0;
        p.cost.omega_sd = 0.0;
        let x = vec![vec![0.3, 0.7]; 3];
        let t = table_for(&p, &x, 0, 1);
        let eq = solve_bne(&t, &fixed_costs(&x, &p), &BneOptions::default()).unwrap();
        assert!(eq.residual < 1e-8);
        assert!((eq.probs[0] - eq.probs[1]).abs() < 1e-9);
        assert!((eq.probs[1] - eq.probs[2]).abs() < 1e-9);
    }

    #[test]
    fn higher_fixed_cost_lowers_own_entry_probability() {
        let p = params(0.4, vec![0.0]);
        let x: Vec<Vec<f64>> = (0..3).map(|j| vec![0.3 * j as f64, 0.4]).collect();
        let t = table_for(&p, &x, 0, 21);
        let mut fc = fixed_costs(&x, &p);
        let base = solve_bne(&t, &fc, &BneOptions::default()).unwrap();
        fc[1] += 0.5;
        let raised = solve_bne(&t, &fc, &BneOptions::default()).unwrap();
        assert!(raised.probs[1] <= base.probs[1]);
    }

    #[test]
    fn too_many_firms_rejected() {
        let p = params(0.3, vec![0.0]);
        let x = vec![vec![0.0, 0.0]; MAX_ENUMERATED_FIRMS + 1];
        let draws = vec![UnobservableDraw { xi: vec![0.0; 11], omega: vec![0.0; 11] }];
        assert!(matches!(
            ProfitTable::build(&x, &p, 1.0, &draws, &BertrandOptions::default()),
            Err(Error::TooManyFirms(11))
        ));
    }
}
