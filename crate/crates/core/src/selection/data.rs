//! Entrant rows of the demand equation.

use crate::error::{Error, Result};
use crate::simulate::MarketObservation;

/// One row per entrant: dependent variable `ln(s_j/s0)` and within-share regressor
/// `ln(s_j/(1-s0))`, with the prices and shares they came from.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct DemandRows {
    /// Index of the market in the observation slice.
    pub market: Vec<usize>,
    /// 0-based firm index.
    pub firm: Vec<usize>,
    pub price: Vec<f64>,
    pub share: Vec<f64>,
    pub s0: Vec<f64>,
    pub y: Vec<f64>,
    pub within: Vec<f64>,
}

impl DemandRows {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

pub fn build_dependent(observations: &[MarketObservation]) -> Result<DemandRows> {
    let mut rows = DemandRows::default();
    for (t, o) in observations.iter().enumerate() {
        for j in 0..o.n_firms() {
            if !o.entered[j] {
                continue;
            }
            let (p, s) = match (o.prices[j], o.shares[j]) {
                (Some(p), Some(s)) => (p, s),
                _ => return Err(Error::Data(format!("market {} firm {} entered without price or share", o.market_id, j + 1))),
            };
            if !(s > 0.0) || !(o.s0 > 0.0) || !(o.s0 < 1.0) {
                return Err(Error::InvalidShares(format!(
                    "market {} firm {}: s = {s}, s0 = {}",
                    o.market_id,
                    j + 1,
                    o.s0
                )));
            }
            rows.market.push(t);
            rows.firm.push(j);
            rows.price.push(p);
            rows.share.push(s);
            rows.s0.push(o.s0);
            rows.y.push((s / o.s0).ln());
            rows.within.push((s / (1.0 - o.s0)).ln());
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demand::{compute_shares, invert_shares, Nesting};

    fn market(shares: Vec<Option<f64>>, s0: f64) -> MarketObservation {
        let n = shares.len();
        MarketObservation {
            market_id: 1,
            size: 1.0,
            x: vec![vec![0.0]; n],
            entered: shares.iter().map(|s| s.is_some()).collect(),
            prices: shares.iter().map(|s| s.map(|_| 1.0)).collect(),
            shares,
            s0,
        }
    }

    #[test]
    fn single_entrant_half() {
        let r = build_dependent(&[market(vec![Some(0.5), None], 0.5)]).unwrap();
        assert_eq!(r.len(), 1);
        assert_eq!(r.y[0], 0.0);
        assert_eq!(r.within[0], 0.0);
        assert_eq!(r.firm[0], 0);
    }

    #[test]
    fn two_entrants_arithmetic() {
        let r = build_dependent(&[market(vec![Some(0.2), Some(0.3)], 0.5)]).unwrap();
        assert!((r.y[0] - 0.4f64.ln()).abs() < 1e-15);
        assert!((r.within[0] - 0.4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn identity_with_inversion() {
        let delta = [0.3, -0.8, 1.1];
        let sigma = 0.6;
        let sv = compute_shares(&delta, &[true; 3], sigma, &Nesting::Single).unwrap();
        let obs = market(sv.s.iter().map(|&s| Some(s)).collect(), sv.s0);
        let r = build_dependent(&[obs]).unwrap();
        let inv = invert_shares(&sv, sigma).unwrap();
        for j in 0..3 {
            assert!((r.y[j] - sigma * r.within[j] - inv[j].unwrap()).abs() < 1e-12);
            assert!((r.y[j] - sigma * r.within[j] - delta[j]).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_share_rejected() {
        assert!(build_dependent(&[market(vec![Some(0.0)], 0.5)]).is_err());
    }
}
