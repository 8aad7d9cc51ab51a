//! Lower bound on the number of types from the rank of a joint entry-frequency matrix.
//!
//! Firms are split into three disjoint groups `(Y1, Y2, Y3)`. Within a type, entry
//! is independent across firms, so the joint distribution of the entry patterns of
//! `Y2` and `Y3` factors as `M = A diag(f) B'` with one column per type. Its rank is
//! at most `K`, and equals `K` when the per-type pattern distributions are linearly
//! independent, so the number of non-negligible singular values bounds `K` from below.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::EntryData;
use crate::error::{Error, Result};

/// Default cutoff on `sigma_k / sigma_1`.
pub const DEFAULT_RATIO_THRESHOLD: f64 = 0.05;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub y1: Vec<usize>,
    pub y2: Vec<usize>,
    pub y3: Vec<usize>,
}

impl Partition {
    /// `Y1` holds the one firm (odd `J`) or two firms (even `J`) with entry frequency
    /// nearest 0.5, ties to the lower index. The rest are split in index order, first
    /// half to `Y2`.
    pub fn from_frequencies(freq: &[f64]) -> Result<Self> {
        let j = freq.len();
        if j < 3 {
            return Err(Error::InvalidParameter("rank estimate needs at least three firms".into()));
        }
        let n1 = if j % 2 == 1 { 1 } else { 2 };
        let mut by_distance: Vec<usize> = (0..j).collect();
        by_distance.sort_by(|&a, &b| (freq[a] - 0.5).abs().total_cmp(&(freq[b] - 0.5).abs()).then(a.cmp(&b)));
        let mut y1: Vec<usize> = by_distance[..n1].to_vec();
        y1.sort_unstable();
        let rest: Vec<usize> = (0..j).filter(|i| !y1.contains(i)).collect();
        let half = rest.len() / 2;
        Ok(Self {
            y1,
            y2: rest[..half].to_vec(),
            y3: rest[half..].to_vec(),
        })
    }

    fn pattern(group: &[usize], entries: &[bool]) -> usize {
        group
            .iter()
            .enumerate()
            .fold(0, |acc, (bit, &j)| acc | (usize::from(entries[j]) << bit))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankEstimate {
    pub k_lower: usize,
    pub singular_values: Vec<f64>,
    pub threshold: f64,
    pub partition: Partition,
    /// Set when there are fewer than `10 * 4^|Y2|` markets.
    pub warning: Option<String>,
}

fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    let mut sv: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

fn count_above(sv: &[f64], ratio: f64) -> usize {
    let top = sv.first().copied().unwrap_or(0.0);
    if top <= 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s / top > ratio).count()
}

/// Empirical frequency matrix of `(Y2 pattern, Y3 pattern)`.
pub fn empirical_joint_matrix(data: &EntryData, partition: &Partition) -> DMatrix<f64> {
    let rows = 1 << partition.y2.len();
    let cols = 1 << partition.y3.len();
    let mut m = DMatrix::zeros(rows, cols);
    let t = data.n_markets().max(1) as f64;
    for e in &data.entries {
        m[(Partition::pattern(&partition.y2, e), Partition::pattern(&partition.y3, e))] += 1.0 / t;
    }
    m
}

/// Rank-based lower bound on `K` from observed entry patterns: the number of
/// singular values with `sigma_k / sigma_1 > threshold`.
pub fn rank_estimate_k(data: &EntryData, threshold: f64) -> Result<RankEstimate> {
    let partition = Partition::from_frequencies(&data.entry_frequencies())?;
    let m = empirical_joint_matrix(data, &partition);
    let sv = singular_values(&m);
    let need = 10usize.saturating_mul(1 << (2 * partition.y2.len()));
    let warning = (data.n_markets() < need).then(|| {
        format!(
            "only {} markets for a {}x{} frequency matrix; at least {} recommended",
            data.n_markets(),
            m.nrows(),
            m.ncols(),
            need
        )
    });
    Ok(RankEstimate {
        k_lower: count_above(&sv, threshold),
        singular_values: sv,
        threshold,
        partition,
        warning,
    })
}

/// Population matrix `sum_k f_k P(Y2 pattern | k) P(Y3 pattern | k)` from type
/// weights and per-type entry probabilities `ccp[k][j]`.
pub fn population_joint_matrix(weights: &[f64], ccp: &[Vec<f64>], partition: &Partition) -> Result<DMatrix<f64>> {
    if weights.len() != ccp.len() {
        return Err(Error::dim("type weights", ccp.len(), weights.len()));
    }
    let pattern_prob = |group: &[usize], probs: &[f64], pattern: usize| -> f64 {
        group
            .iter()
            .enumerate()
            .map(|(bit, &j)| if pattern >> bit & 1 == 1 { probs[j] } else { 1.0 - probs[j] })
            .product()
    };
    let rows = 1 << partition.y2.len();
    let cols = 1 << partition.y3.len();
    Ok(DMatrix::from_fn(rows, cols, |r, c| {
        weights
            .iter()
            .zip(ccp)
            .map(|(f, p)| f * pattern_prob(&partition.y2, p, r) * pattern_prob(&partition.y3, p, c))
            .sum()
    }))
}

/// Exact rank of the population matrix: singular values above `tol * sigma_1`.
/// The partition uses the population entry frequencies.
pub fn rank_of_population(weights: &[f64], ccp: &[Vec<f64>], tol: f64) -> Result<RankEstimate> {
    let j = ccp.first().map_or(0, |p| p.len());
    let freq: Vec<f64> = (0..j)
        .map(|jj| weights.iter().zip(ccp).map(|(f, p)| f * p[jj]).sum())
        .collect();
    let partition = Partition::from_frequencies(&freq)?;
    let m = population_joint_matrix(weights, ccp, &partition)?;
    let sv = singular_values(&m);
    Ok(RankEstimate {
        k_lower: count_above(&sv, tol),
        singular_values: sv,
        threshold: tol,
        partition,
        warning: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partition_rules() {
        let p = Partition::from_frequencies(&[0.1, 0.45, 0.9, 0.3, 0.7]).unwrap();
        assert_eq!(p.y1, vec![1]);
        assert_eq!(p.y2, vec![0, 2]);
        assert_eq!(p.y3, vec![3, 4]);
        let p = Partition::from_frequencies(&[0.1, 0.45, 0.9, 0.6]).unwrap();
        assert_eq!(p.y1, vec![1, 3]);
        assert_eq!(p.y2, vec![0]);
        assert_eq!(p.y3, vec![2]);
        assert!(Partition::from_frequencies(&[0.5, 0.5]).is_err());
    }

    #[test]
    fn one_type_is_rank_one() {
        let r = rank_of_population(&[1.0], &[vec![0.2, 0.5, 0.7, 0.4, 0.9]], 1e-10).unwrap();
        assert_eq!(r.k_lower, 1);
    }

    #[test]
    fn matrix_sums_to_one() {
        let ccp = vec![vec![0.2, 0.5, 0.7, 0.4, 0.9], vec![0.6, 0.1, 0.3, 0.8, 0.5]];
        let part = Partition::from_frequencies(&[0.4, 0.3, 0.5, 0.6, 0.7]).unwrap();
        let m = population_joint_matrix(&[0.3, 0.7], &ccp, &part).unwrap();
        assert!((m.sum() - 1.0).abs() < 1e-14);
    }
}
