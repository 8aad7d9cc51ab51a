//! Nested-logit demand primitives: mean utilities, market shares, the share
//! inversion, own-price elasticities and Lerner indexes.
//!
//! Only products that are available in a market enter the nest sums; the
//! outside good is always available.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Parameters of the mean utility `delta = alpha * p + x' beta + xi` and the nesting parameter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemandParams {
    /// Price coefficient (utility per price unit), expected negative.
    pub alpha: f64,
    /// Coefficients on the product characteristic vector.
    pub beta: Vec<f64>,
    /// Within-nest correlation, in `[0, 1)`.
    pub sigma: f64,
}

impl DemandParams {
    pub fn new(alpha: f64, beta: Vec<f64>, sigma: f64) -> Result<Self> {
        let p = Self { alpha, beta, sigma };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        check_sigma(self.sigma)?;
        if !self.alpha.is_finite() {
            return Err(Error::InvalidParameter("alpha must be finite".into()));
        }
        if self.beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::InvalidParameter("beta must be finite".into()));
        }
        Ok(())
    }
}

pub(crate) fn check_sigma(sigma: f64) -> Result<()> {
    if !(0.0..1.0).contains(&sigma) {
        return Err(Error::InvalidParameter(format!(
            "nesting parameter sigma = {sigma} outside [0, 1)"
        )));
    }
    Ok(())
}

/// One potential product in one market.
#[derive(Clone, Debug, PartialEq)]
pub struct ProductState {
    pub firm_id: usize,
    pub x: Vec<f64>,
    pub xi: f64,
    pub available: bool,
}

/// Assignment of inside products to nests.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub enum Nesting {
    /// All inside products share one nest; the outside good is alone in its own.
    #[default]
    Single,
    /// Explicit nest index per product.
    Groups(Vec<usize>),
}

impl Nesting {
    pub fn group_of(&self, j: usize) -> usize {
        match self {
            Nesting::Single => 0,
            Nesting::Groups(g) => g[j],
        }
    }

    pub fn assignments(&self, n: usize) -> Result<Vec<usize>> {
        match self {
            Nesting::Single => Ok(vec![0; n]),
            Nesting::Groups(g) if g.len() == n => Ok(g.clone()),
            Nesting::Groups(g) => Err(Error::dim("nest assignment", n, g.len())),
        }
    }
}

/// Market shares of all potential products plus the outside good.
#[derive(Clone, Debug, PartialEq)]
pub struct ShareVector {
    /// Per-product shares; exactly zero for unavailable products.
    pub s: Vec<f64>,
    /// Outside-good share.
    pub s0: f64,
    /// Nest index per product.
    pub groups: Vec<usize>,
    pub available: Vec<bool>,
}

impl ShareVector {
    /// Aggregate share of the nest containing product `j`.
    pub fn group_share(&self, j: usize) -> f64 {
        let g = self.groups[j];
        self.s
            .iter()
            .zip(&self.groups)
            .zip(&self.available)
            .filter(|((_, &gi), &a)| gi == g && a)
            .map(|((s, _), _)| s)
            .sum()
    }

    pub fn inside_total(&self) -> f64 {
        self.s.iter().sum()
    }
}

/// `delta = alpha * p + x' beta + xi`.
pub fn mean_utility(p: f64, x: &[f64], xi: f64, params: &DemandParams) -> Result<f64> {
    if x.len() != params.beta.len() {
        return Err(Error::dim("characteristics vs beta", params.beta.len(), x.len()));
    }
    let xb: f64 = x.iter().zip(&params.beta).map(|(a, b)| a * b).sum();
    Ok(params.alpha * p + xb + xi)
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + values.map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Nested-logit shares for mean utilities `delta`; products with `available[j] == false`
/// get share zero and do not enter any sum.
///
/// Within nest `g`, `s_{j|g} = exp(delta_j/(1-sigma)) / D_g` with
/// `D_g = sum_{i in g} exp(delta_i/(1-sigma))`; the nest share is
/// `D_g^(1-sigma) / (1 + sum_h D_h^(1-sigma))`. Everything is computed in log space.
pub fn compute_shares(
    delta: &[f64],
    available: &[bool],
    sigma: f64,
    nesting: &Nesting,
) -> Result<ShareVector> {
    check_sigma(sigma)?;
    if delta.len() != available.len() {
        return Err(Error::dim("delta vs availability", delta.len(), available.len()));
    }
    let n = delta.len();
    let groups = nesting.assignments(n)?;
    let n_groups = groups.iter().copied().max().map_or(0, |g| g + 1);
    let scale = 1.0 / (1.0 - sigma);

    // ln D_g
    let log_d: Vec<f64> = (0..n_groups)
        .map(|g| {
            log_sum_exp(
                (0..n)
                    .filter(|&j| available[j] && groups[j] == g)
                    .map(|j| delta[j] * scale),
            )
        })
        .collect();
    let log_iv: Vec<f64> = log_d.iter().map(|w| w * (1.0 - sigma)).collect();
    let log_denom = log_sum_exp(std::iter::once(0.0).chain(log_iv.iter().copied()));

    let s = (0..n)
        .map(|j| {
            if !available[j] {
                return 0.0;
            }
            let g = groups[j];
            let log_cond = delta[j] * scale - log_d[g];
            let log_nest = log_iv[g] - log_denom;
            (log_cond + log_nest).exp()
        })
        .collect();
    Ok(ShareVector {
        s,
        s0: (-log_denom).exp(),
        groups,
        available: available.to_vec(),
    })
}

/// Invert observed shares into mean utilities:
/// `delta_j = ln(s_j / s0) - sigma * ln(s_j / S_g)` for each available product.
///
/// Unavailable products map to `None`. Only `s_j`, the share of `j`'s nest and `s0`
/// are read for product `j`.
pub fn invert_shares(shares: &ShareVector, sigma: f64) -> Result<Vec<Option<f64>>> {
    check_sigma(sigma)?;
    if !(shares.s0 > 0.0) {
        return Err(Error::InvalidShares(format!("outside share {} not positive", shares.s0)));
    }
    let n = shares.s.len();
    if shares.available.len() != n || shares.groups.len() != n {
        return Err(Error::dim("share vector fields", n, shares.available.len()));
    }
    let mut out = Vec::with_capacity(n);
    for j in 0..n {
        if !shares.available[j] {
            out.push(None);
            continue;
        }
        let sj = shares.s[j];
        if !(sj > 0.0) {
            return Err(Error::InvalidShares(format!(
                "available product {j} has non-positive share {sj}"
            )));
        }
        let sg = shares.group_share(j);
        out.push(Some((sj / shares.s0).ln() - sigma * (sj / sg).ln()));
    }
    Ok(out)
}

/// Derivative of `ln s_j` with respect to `delta_j` in the nested logit:
/// `1/(1-sigma) - sigma/(1-sigma) * s_j/S_g - s_j`.
pub fn own_log_share_derivative(s_j: f64, group_share: f64, sigma: f64) -> f64 {
    1.0 / (1.0 - sigma) - sigma / (1.0 - sigma) * s_j / group_share - s_j
}

/// Own-price elasticity with a single inside nest (group share `1 - s0`):
/// `alpha * p * [1/(1-sigma) - sigma/(1-sigma) * s_j/(1-s0) - s_j]`.
pub fn own_price_elasticity(p: f64, s_j: f64, s0: f64, params: &DemandParams) -> Result<f64> {
    own_price_elasticity_nested(p, s_j, 1.0 - s0, params.alpha, params.sigma)
}

/// Own-price elasticity for a product whose nest has aggregate share `group_share`.
pub fn own_price_elasticity_nested(
    p: f64,
    s_j: f64,
    group_share: f64,
    alpha: f64,
    sigma: f64,
) -> Result<f64> {
    check_sigma(sigma)?;
    if !(s_j > 0.0 && s_j < 1.0) || !(group_share >= s_j && group_share < 1.0) {
        return Err(Error::InvalidShares(format!(
            "degenerate shares for elasticity: s_j = {s_j}, nest share = {group_share}"
        )));
    }
    Ok(alpha * p * own_log_share_derivative(s_j, group_share, sigma))
}

/// Single-product Bertrand Lerner index `L = -1/e`; requires downward-sloping demand.
pub fn lerner_index(elasticity: f64) -> Result<f64> {
    if !(elasticity < 0.0) {
        return Err(Error::InvalidParameter(format!(
            "Lerner index undefined for non-negative elasticity {elasticity}"
        )));
    }
    Ok(-1.0 / elasticity)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn all(n: usize) -> Vec<bool> {
        vec![true; n]
    }

    #[test]
    fn mean_utility_cases() {
        let zero = DemandParams::new(-1.0, vec![0.0, 0.0], 0.0).unwrap();
        assert_eq!(mean_utility(0.0, &[0.0, 0.0], 0.0, &zero).unwrap(), 0.0);

        let table4 = DemandParams::new(-2.708, vec![0.0], 0.57).unwrap();
        assert!((mean_utility(1.0, &[0.0], 0.0, &table4).unwrap() + 2.708).abs() < 1e-15);

        let p = DemandParams::new(-1.0, vec![0.5, 0.25], 0.0).unwrap();
        assert!((mean_utility(1.0, &[1.0, 2.0], 0.1, &p).unwrap() - 0.1).abs() < 1e-15);

        assert!(matches!(
            mean_utility(1.0, &[1.0], 0.0, &p),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn single_product_half_share() {
        let s = compute_shares(&[0.0], &all(1), 0.5, &Nesting::Single).unwrap();
        assert!((s.s[0] - 0.5).abs() < 1e-15);
        assert!((s.s0 - 0.5).abs() < 1e-15);
    }

    #[test]
    fn symmetric_plain_logit_thirds() {
        let s = compute_shares(&[0.0, 0.0], &all(2), 0.0, &Nesting::Single).unwrap();
        for v in s.s.iter().chain(std::iter::once(&s.s0)) {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn two_level_formula_by_hand() {
        let (d1, d2, sigma) = (1.0_f64, 0.5_f64, 0.5_f64);
        let inner = (d1 / (1.0 - sigma)).exp() + (d2 / (1.0 - sigma)).exp();
        let iv = inner.powf(1.0 - sigma);
        let nest = iv / (1.0 + iv);
        let expect1 = (d1 / (1.0 - sigma)).exp() / inner * nest;
        let expect2 = (d2 / (1.0 - sigma)).exp() / inner * nest;
        let s = compute_shares(&[d1, d2], &all(2), sigma, &Nesting::Single).unwrap();
        assert!((s.s[0] - expect1).abs() < 1e-14);
        assert!((s.s[1] - expect2).abs() < 1e-14);
        assert!((s.s0 - 1.0 / (1.0 + iv)).abs() < 1e-14);
    }

    #[test]
    fn empty_market_has_full_outside_share() {
        let s = compute_shares(&[], &[], 0.3, &Nesting::Single).unwrap();
        assert_eq!(s.s0, 1.0);
        let s = compute_shares(&[2.0, 1.0], &[false, false], 0.3, &Nesting::Single).unwrap();
        assert_eq!(s.s0, 1.0);
        assert_eq!(s.s, vec![0.0, 0.0]);
    }

    #[test]
    fn sigma_out_of_range_rejected() {
        assert!(compute_shares(&[0.0], &all(1), 1.0, &Nesting::Single).is_err());
        assert!(compute_shares(&[0.0], &all(1), -0.1, &Nesting::Single).is_err());
    }

    #[test]
    fn large_utilities_do_not_overflow() {
        let s = compute_shares(&[40.0, 35.0], &all(2), 0.9, &Nesting::Single).unwrap();
        assert!(s.s.iter().all(|v| v.is_finite()));
        assert!(s.s0 > 0.0);
        let d = invert_shares(&s, 0.9).unwrap();
        assert!((d[0].unwrap() - 40.0).abs() < 1e-6);
    }

    #[test]
    fn inversion_examples() {
        let s = ShareVector { s: vec![0.5], s0: 0.5, groups: vec![0], available: all(1) };
        for sigma in [0.0, 0.4, 0.9] {
            assert!(invert_shares(&s, sigma).unwrap()[0].unwrap().abs() < 1e-15);
        }
        let third = 1.0 / 3.0;
        let s = ShareVector { s: vec![third, third], s0: third, groups: vec![0, 0], available: all(2) };
        let d = invert_shares(&s, 0.0).unwrap();
        assert!(d.iter().all(|v| v.unwrap().abs() < 1e-15));
    }

    #[test]
    fn inversion_errors() {
        let zero_outside = ShareVector { s: vec![1.0], s0: 0.0, groups: vec![0], available: all(1) };
        assert!(matches!(invert_shares(&zero_outside, 0.2), Err(Error::InvalidShares(_))));
        let zero_inside = ShareVector { s: vec![0.0, 0.5], s0: 0.5, groups: vec![0, 0], available: all(2) };
        assert!(matches!(invert_shares(&zero_inside, 0.2), Err(Error::InvalidShares(_))));
    }

    #[test]
    fn inversion_reads_only_own_nest_and_outside_share() {
        // Product 0's inverse must not move when another nest's availability changes,
        // as long as s_0, its nest share and s_0 are unchanged.
        let a = ShareVector {
            s: vec![0.2, 0.1, 0.3],
            s0: 0.4,
            groups: vec![0, 0, 1],
            available: all(3),
        };
        let b = ShareVector {
            s: vec![0.2, 0.1, 0.0],
            s0: 0.4,
            groups: vec![0, 0, 1],
            available: vec![true, true, false],
        };
        let da = invert_shares(&a, 0.6).unwrap();
        let db = invert_shares(&b, 0.6).unwrap();
        assert_eq!(da[0], db[0]);
        assert_eq!(db[2], None);
    }

    #[test]
    fn elasticity_examples() {
        let logit = DemandParams::new(-1.0, vec![], 0.0).unwrap();
        assert!((own_price_elasticity(1.0, 0.5, 0.5, &logit).unwrap() + 0.5).abs() < 1e-15);
        let flat = DemandParams::new(0.0, vec![], 0.3).unwrap();
        assert_eq!(own_price_elasticity(2.0, 0.2, 0.5, &flat).unwrap(), 0.0);
        assert!(own_price_elasticity(2.0, 0.0, 0.5, &logit).is_err());
    }

    /// Central finite difference of ln s_j in p through `compute_shares`.
    fn fd_elasticity(p: f64, others: &[f64], base: f64, params: &DemandParams) -> f64 {
        let h = 1e-6;
        let share = |pp: f64| {
            let mut d = vec![base + params.alpha * pp];
            d.extend_from_slice(others);
            compute_shares(&d, &vec![true; d.len()], params.sigma, &Nesting::Single).unwrap().s[0]
        };
        (share(p + h) - share(p - h)) / (2.0 * h) * p / share(p)
    }

    #[test]
    fn elasticity_matches_finite_difference_at_table_values() {
        let params = DemandParams::new(-2.708, vec![], 0.570).unwrap();
        let p = 1.4;
        let others = [0.3, -0.8, 0.1];
        let base = 3.2;
        let mut d = vec![base + params.alpha * p];
        d.extend_from_slice(&others);
        let s = compute_shares(&d, &vec![true; 4], params.sigma, &Nesting::Single).unwrap();
        let closed = own_price_elasticity(p, s.s[0], s.s0, &params).unwrap();
        let fd = fd_elasticity(p, &others, base, &params);
        assert!(((closed - fd) / fd).abs() < 1e-6, "{closed} vs {fd}");
    }

    #[test]
    fn lerner_cases() {
        assert!((lerner_index(-5.0).unwrap() - 0.2).abs() < 1e-15);
        assert!((lerner_index(-8.0).unwrap() - 0.125).abs() < 1e-15);
        assert!((lerner_index(-1.596).unwrap() - 1.0 / 1.596).abs() < 1e-15);
        assert!((lerner_index(-1.596).unwrap() - 0.627).abs() < 5e-4);
        assert!(lerner_index(0.0).is_err());
        assert!(lerner_index(0.3).is_err());
    }

    proptest! {
        #[test]
        fn shares_sum_to_one(
            delta in proptest::collection::vec(-30.0f64..30.0, 0..8),
            mask in proptest::collection::vec(any::<bool>(), 8),
            sigma in 0.0f64..0.9,
        ) {
            let avail = &mask[..delta.len()];
            let s = compute_shares(&delta, avail, sigma, &Nesting::Single).unwrap();
            prop_assert!((s.s0 + s.inside_total() - 1.0).abs() < 1e-12);
            prop_assert!(s.s0 > 0.0);
            for (v, a) in s.s.iter().zip(avail) {
                prop_assert!(*v >= 0.0);
                prop_assert_eq!(*v == 0.0, !*a);
            }
        }

        #[test]
        fn round_trip_recovers_delta(
            delta in proptest::collection::vec(-5.0f64..5.0, 1..8),
            sigma_idx in 0usize..4,
        ) {
            let sigma = [0.0, 0.3, 0.7, 0.95][sigma_idx];
            let avail = vec![true; delta.len()];
            let s = compute_shares(&delta, &avail, sigma, &Nesting::Single).unwrap();
            let back = invert_shares(&s, sigma).unwrap();
            for (d, b) in delta.iter().zip(back) {
                prop_assert!((d - b.unwrap()).abs() < 1e-10);
            }
        }

        #[test]
        fn round_trip_with_several_nests(
            delta in proptest::collection::vec(-5.0f64..5.0, 4),
            sigma in 0.0f64..0.9,
        ) {
            let nesting = Nesting::Groups(vec![0, 1, 0, 1]);
            let s = compute_shares(&delta, &[true; 4], sigma, &nesting).unwrap();
            let back = invert_shares(&s, sigma).unwrap();
            for (d, b) in delta.iter().zip(back) {
                prop_assert!((d - b.unwrap()).abs() < 1e-10);
            }
        }

        #[test]
        fn zero_sigma_is_plain_logit(delta in proptest::collection::vec(-5.0f64..5.0, 1..6)) {
            let s = compute_shares(&delta, &vec![true; delta.len()], 0.0, &Nesting::Single).unwrap();
            let denom: f64 = 1.0 + delta.iter().map(|d| d.exp()).sum::<f64>();
            for (d, v) in delta.iter().zip(&s.s) {
                prop_assert!((d.exp() / denom - v).abs() < 1e-14);
            }
        }
    }
}
