//! Own-price elasticities and Lerner indexes implied by demand estimates.

use serde::{Deserialize, Serialize};

use super::data::DemandRows;
use crate::demand::own_log_share_derivative;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FirmElasticity {
    /// 1-based; 0 denotes the pooled row.
    pub firm_id: usize,
    pub n_obs: usize,
    pub mean_elasticity: f64,
    /// Mean of per-observation `-1/e` over observations with `e < 0`.
    pub mean_lerner: Option<f64>,
    /// `-1 / mean_elasticity` when the mean is negative.
    pub lerner_of_mean: Option<f64>,
    /// Observations where the Lerner index is undefined (`e >= 0`).
    pub undefined_lerner: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElasticityReport {
    pub alpha: f64,
    pub sigma: f64,
    pub per_firm: Vec<FirmElasticity>,
    pub pooled: FirmElasticity,
    /// Per-observation elasticities in row order.
    pub elasticities: Vec<f64>,
    /// Per-observation Lerner indexes; `None` where undefined.
    pub lerner: Vec<Option<f64>>,
}

fn summarize(firm_id: usize, e: &[f64], l: &[Option<f64>]) -> FirmElasticity {
    let n = e.len();
    let mean_elasticity = if n == 0 { f64::NAN } else { e.iter().sum::<f64>() / n as f64 };
    let defined: Vec<f64> = l.iter().flatten().copied().collect();
    FirmElasticity {
        firm_id,
        n_obs: n,
        mean_elasticity,
        mean_lerner: (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64),
        lerner_of_mean: (mean_elasticity < 0.0).then(|| -1.0 / mean_elasticity),
        undefined_lerner: n - defined.len(),
    }
}

/// Elasticity `alpha p [1/(1-sigma) - sigma/(1-sigma) s/(1-s0) - s]` at every entrant
/// row, with per-firm and pooled summaries.
pub fn elasticity_report(alpha: f64, sigma: f64, rows: &DemandRows, n_firms: usize) -> ElasticityReport {
    let elasticities: Vec<f64> = (0..rows.len())
        .map(|r| alpha * rows.price[r] * own_log_share_derivative(rows.share[r], 1.0 - rows.s0[r], sigma))
        .collect();
    let lerner: Vec<Option<f64>> = elasticities.iter().map(|&e| (e < 0.0).then(|| -1.0 / e)).collect();
    let per_firm = (0..n_firms)
        .map(|j| {
            let idx: Vec<usize> = (0..rows.len()).filter(|&r| rows.firm[r] == j).collect();
            let e: Vec<f64> = idx.iter().map(|&r| elasticities[r]).collect();
            let l: Vec<Option<f64>> = idx.iter().map(|&r| lerner[r]).collect();
            summarize(j + 1, &e, &l)
        })
        .collect();
    let pooled = summarize(0, &elasticities, &lerner);
    ElasticityReport { alpha, sigma, per_firm, pooled, elasticities, lerner }
}

/// `n_bins + 1` equally spaced edges covering every value in every set.
pub fn common_edges(sets: &[&[f64]], n_bins: usize) -> Vec<f64> {
    let finite = sets.iter().flat_map(|s| s.iter()).copied().filter(|v| v.is_finite());
    let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let (lo, hi) = if lo > hi {
        (0.0, 1.0)
    } else if lo == hi {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    };
    let n = n_bins.max(1);
    (0..=n).map(|i| lo + (hi - lo) * i as f64 / n as f64).collect()
}

/// Counts per bin `[e_i, e_{i+1})`, the last bin closed. Values outside are ignored.
pub fn histogram(values: &[f64], edges: &[f64]) -> Vec<usize> {
    let n = edges.len().saturating_sub(1);
    let mut counts = vec![0; n];
    if n == 0 {
        return counts;
    }
    let (lo, hi) = (edges[0], edges[n]);
    for &v in values {
        if !(v >= lo && v <= hi) {
            continue;
        }
        let i = edges.partition_point(|&e| e <= v).saturating_sub(1).min(n - 1);
        counts[i] += 1;
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demand::{compute_shares, Nesting};

    fn rows() -> DemandRows {
        DemandRows {
            market: vec![0, 0, 1],
            firm: vec![0, 1, 0],
            price: vec![1.5, 2.0, 1.2],
            share: vec![0.2, 0.3, 0.1],
            s0: vec![0.5, 0.5, 0.7],
            y: vec![0.0; 3],
            within: vec![0.0; 3],
        }
    }

    #[test]
    fn zero_alpha_gives_zero_and_no_lerner() {
        let r = elasticity_report(0.0, 0.5, &rows(), 2);
        assert!(r.elasticities.iter().all(|&e| e == 0.0));
        assert!(r.lerner.iter().all(|l| l.is_none()));
        assert_eq!(r.pooled.undefined_lerner, 3);
        assert_eq!(r.pooled.mean_lerner, None);
    }

    #[test]
    fn matches_finite_difference_of_shares() {
        let alpha = -1.3;
        let sigma = 0.45;
        let prices = [1.5, 2.0];
        let base = [0.4, -0.2];
        let shares_at = |p0: f64| {
            let delta = [alpha * p0 + base[0], alpha * prices[1] + base[1]];
            compute_shares(&delta, &[true, true], sigma, &Nesting::Single).unwrap()
        };
        let sv = shares_at(prices[0]);
        let r = DemandRows {
            market: vec![0],
            firm: vec![0],
            price: vec![prices[0]],
            share: vec![sv.s[0]],
            s0: vec![sv.s0],
            y: vec![0.0],
            within: vec![0.0],
        };
        let e = elasticity_report(alpha, sigma, &r, 1).elasticities[0];
        let h = 1e-6;
        let fd = (shares_at(prices[0] + h).s[0] - shares_at(prices[0] - h).s[0]) / (2.0 * h) * prices[0] / sv.s[0];
        assert!(((e - fd) / fd).abs() < 1e-6);
    }

    #[test]
    fn per_firm_and_pooled_summaries() {
        let r = elasticity_report(-2.0, 0.0, &rows(), 2);
        assert_eq!(r.per_firm[0].n_obs, 2);
        assert_eq!(r.per_firm[1].n_obs, 1);
        let e1 = -2.0 * 1.5 * 0.8;
        let e3 = -2.0 * 1.2 * 0.9;
        assert!((r.per_firm[0].mean_elasticity - (e1 + e3) / 2.0).abs() < 1e-12);
        assert!((r.per_firm[0].mean_lerner.unwrap() - (-1.0 / e1 - 1.0 / e3) / 2.0).abs() < 1e-12);
        assert!((r.per_firm[0].lerner_of_mean.unwrap() + 2.0 / (e1 + e3)).abs() < 1e-12);
    }

    #[test]
    fn histogram_counts_and_common_edges() {
        let a = [-3.0, -2.0, -1.0];
        let b = [-2.5, 0.0];
        let edges = common_edges(&[&a, &b], 3);
        assert_eq!(edges.len(), 4);
        assert_eq!(edges[0], -3.0);
        assert_eq!(edges[3], 0.0);
        assert_eq!(histogram(&a, &edges), vec![1, 1, 1]);
        assert_eq!(histogram(&b, &edges), vec![1, 0, 1]);
        // a uniform shift of the estimates moves mass in the shift's direction
        let shifted: Vec<f64> = a.iter().map(|v| v * 1.5).collect();
        let e2 = common_edges(&[&a, &shifted], 4);
        let ha = histogram(&a, &e2);
        let hs = histogram(&shifted, &e2);
        let mean_bin = |h: &[usize]| h.iter().enumerate().map(|(i, c)| i * c).sum::<usize>() as f64 / 3.0;
        assert!(mean_bin(&hs) < mean_bin(&ha));
    }
}
