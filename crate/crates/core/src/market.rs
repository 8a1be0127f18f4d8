//! Final-market demand, the sequential transaction protocol and profit accounting.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MarketError {
    #[error("price must be a non-negative number, got {0}")]
    BadPrice(f64),
    #[error("quantity must be a non-negative number, got {0}")]
    BadQuantity(f64),
    #[error("invalid demand curve: {0}")]
    InvalidDemand(String),
}

/// Linear final-market demand `Q^d(P) = a − bP`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DemandSpec {
    pub intercept: f64,
    pub slope: f64,
}

impl DemandSpec {
    pub fn new(intercept: f64, slope: f64) -> Result<Self, MarketError> {
        let d = DemandSpec { intercept, slope };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<(), MarketError> {
        if !(self.intercept.is_finite() && self.intercept > 0.0) {
            return Err(MarketError::InvalidDemand(format!("intercept {} must be positive", self.intercept)));
        }
        if !(self.slope.is_finite() && self.slope > 0.0) {
            return Err(MarketError::InvalidDemand(format!("slope {} must be positive", self.slope)));
        }
        Ok(())
    }

    /// Price at which demand reaches zero.
    pub fn choke_price(&self) -> f64 {
        self.intercept / self.slope
    }
}

/// `max(0, a − bP)`.
pub fn demand_quantity(spec: &DemandSpec, price: f64) -> Result<f64, MarketError> {
    if price.is_nan() || price < 0.0 {
        return Err(MarketError::BadPrice(price));
    }
    Ok((spec.intercept - spec.slope * price).max(0.0))
}

/// `max(floor, (a − Q)/b)`.
pub fn inverse_demand(spec: &DemandSpec, quantity: f64, floor: f64) -> Result<f64, MarketError> {
    if quantity.is_nan() || quantity < 0.0 {
        return Err(MarketError::BadQuantity(quantity));
    }
    Ok(((spec.intercept - quantity) / spec.slope).max(floor))
}

/// How a seller's stock is shared when orders exceed it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Rationing {
    /// Every buyer gets the same fraction of its order.
    #[default]
    ProRata,
    /// Buyers are served whole orders in turn until the stock runs out.
    Sequential,
}

/// One realized inter-firm purchase.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Purchase {
    pub buyer: usize,
    pub seller: usize,
    pub volume: f64,
    pub cost: f64,
}

/// Everything that changed hands in one period.
///
/// Only purchases with positive volume are stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowLedger {
    pub period: u64,
    pub purchases: Vec<Purchase>,
    pub produced: Vec<f64>,
    /// Residual output `Q^m` offered to the final market.
    pub offered: Vec<f64>,
    pub market_volume: Vec<f64>,
    pub market_revenue: Vec<f64>,
    pub unsold: Vec<f64>,
}

impl FlowLedger {
    pub fn empty(period: u64, n: usize) -> Self {
        FlowLedger {
            period,
            purchases: Vec::new(),
            produced: vec![0.0; n],
            offered: vec![0.0; n],
            market_volume: vec![0.0; n],
            market_revenue: vec![0.0; n],
            unsold: vec![0.0; n],
        }
    }

    pub fn n(&self) -> usize {
        self.produced.len()
    }

    /// Dense buyer-major volume matrix.
    pub fn volume_matrix(&self) -> Vec<Vec<f64>> {
        let n = self.n();
        let mut m = vec![vec![0.0; n]; n];
        for p in &self.purchases {
            m[p.buyer][p.seller] += p.volume;
        }
        m
    }

    /// Total volume sold by each firm to other firms.
    pub fn intermediate_sales(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.n()];
        for p in &self.purchases {
            s[p.seller] += p.volume;
        }
        s
    }

    /// Total purchase cost paid by each firm.
    pub fn purchase_costs(&self) -> Vec<f64> {
        let mut c = vec![0.0; self.n()];
        for p in &self.purchases {
            c[p.buyer] += p.cost;
        }
        c
    }

    /// Largest relative violation of `sales + market + unsold = produced`.
    pub fn conservation_error(&self) -> f64 {
        let sales = self.intermediate_sales();
        (0..self.n())
            .map(|j| {
                let lhs = sales[j] + self.market_volume[j] + self.unsold[j];
                (lhs - self.produced[j]).abs() / self.produced[j].max(1.0)
            })
            .fold(0.0, f64::max)
    }
}

/// Outcome of a purchase round.
#[derive(Debug, Clone, PartialEq)]
pub struct Transactions {
    /// Dense buyer-major realized volumes.
    pub realized: Vec<Vec<f64>>,
    pub purchases: Vec<Purchase>,
    /// Seller stock left after all buyers moved.
    pub residual: Vec<f64>,
}

/// Purchase round.
///
/// Under [`Rationing::Sequential`] buyers move in `order`, each visiting
/// sellers in ascending index and taking `min(plan, remaining stock)`. Under
/// [`Rationing::ProRata`] an oversubscribed seller fills every order to the
/// same fraction, so `order` does not matter. Dead sellers have no stock.
pub fn run_transactions(
    produced: &[f64],
    alive: &[bool],
    plans: &[Vec<f64>],
    order: &[usize],
    prices: &[f64],
    rationing: Rationing,
) -> Transactions {
    let n = produced.len();
    let mut residual: Vec<f64> = produced.iter().zip(alive).map(|(&q, &a)| if a { q } else { 0.0 }).collect();
    let mut realized = vec![vec![0.0; n]; n];
    let mut purchases = Vec::new();
    if rationing == Rationing::ProRata {
        for j in 0..n {
            let total: f64 = order.iter().map(|&i| plans[i][j].max(0.0)).sum();
            if total <= 0.0 || residual[j] <= 0.0 {
                continue;
            }
            let scale = (residual[j] / total).min(1.0);
            for &i in order {
                let x = plans[i][j].max(0.0) * scale;
                if x > 0.0 {
                    realized[i][j] = x;
                    purchases.push(Purchase { buyer: i, seller: j, volume: x, cost: x * prices[j] });
                }
            }
            residual[j] = (residual[j] - total * scale).max(0.0);
        }
    } else {
        for &i in order {
            for j in 0..n {
                let want = plans[i][j];
                if want <= 0.0 || residual[j] <= 0.0 {
                    continue;
                }
                let x = want.min(residual[j]);
                residual[j] -= x;
                realized[i][j] = x;
                purchases.push(Purchase { buyer: i, seller: j, volume: x, cost: x * prices[j] });
            }
        }
    }
    purchases.sort_by_key(|p| (p.buyer, p.seller));
    Transactions { realized, purchases, residual }
}

/// Sells residual output to consumers: `(sold, revenue)`. Leftovers perish.
pub fn sell_to_market(spec: &DemandSpec, price: f64, residual: f64) -> Result<(f64, f64), MarketError> {
    if residual.is_nan() || residual < 0.0 {
        return Err(MarketError::BadQuantity(residual));
    }
    let sold = residual.min(demand_quantity(spec, price)?);
    Ok((sold, sold * price))
}

/// `P·Q* − Σ_j P_j·q_j` over realized purchases.
pub fn profit(price: f64, sold_total: f64, realized_row: &[f64], prices: &[f64]) -> f64 {
    let cost: f64 = realized_row.iter().zip(prices).map(|(q, p)| q * p).sum();
    price * sold_total - cost
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn demand_examples() {
        let d = DemandSpec::new(8000.0, 2.0).unwrap();
        assert_eq!(demand_quantity(&d, 1000.0).unwrap(), 6000.0);
        assert_eq!(demand_quantity(&d, 5000.0).unwrap(), 0.0);
        let d3 = DemandSpec::new(15000.0, 1.5).unwrap();
        assert_eq!(demand_quantity(&d3, 0.0).unwrap(), 15000.0);
        assert!(demand_quantity(&d, -1.0).is_err());
        assert!(demand_quantity(&d, f64::NAN).is_err());
    }

    #[test]
    fn inverse_demand_examples() {
        let d = DemandSpec::new(8000.0, 2.0).unwrap();
        assert_eq!(inverse_demand(&d, 6000.0, 0.01).unwrap(), 1000.0);
        assert_eq!(inverse_demand(&d, 8000.0, 0.01).unwrap(), 0.01);
        let d4 = DemandSpec::new(11000.0, 2.0).unwrap();
        assert_eq!(inverse_demand(&d4, 1000.0, 0.01).unwrap(), 5000.0);
    }

    #[test]
    fn single_transaction() {
        let plans = vec![vec![0.0, 0.0], vec![4.0, 0.0]];
        let t = run_transactions(&[10.0, 0.0], &[true, true], &plans, &[0, 1], &[1.0, 1.0], Rationing::ProRata);
        assert_eq!(t.realized[1][0], 4.0);
        assert_eq!(t.residual[0], 6.0);
    }

    #[test]
    fn sequential_min_hand_trace() {
        // three buyers plan 5 each from seller 3, which produced 12
        let plans = vec![vec![0.0, 0.0, 0.0, 5.0]; 4];
        let produced = [0.0, 0.0, 0.0, 12.0];
        let t = run_transactions(&produced, &[true; 4], &plans, &[0, 1, 2], &[1.0; 4], Rationing::Sequential);
        let got: Vec<f64> = (0..3).map(|i| t.realized[i][3]).collect();
        assert_eq!(got, vec![5.0, 5.0, 2.0]);
        assert_eq!(t.residual[3], 0.0);
    }

    #[test]
    fn pro_rata_hand_trace() {
        let plans = vec![vec![0.0, 0.0, 0.0, 5.0], vec![0.0, 0.0, 0.0, 5.0], vec![0.0, 0.0, 0.0, 10.0], vec![0.0; 4]];
        let produced = [0.0, 0.0, 0.0, 12.0];
        for order in [[0, 1, 2], [2, 1, 0]] {
            let t = run_transactions(&produced, &[true; 4], &plans, &order, &[1.0; 4], Rationing::ProRata);
            let got: Vec<f64> = (0..3).map(|i| t.realized[i][3]).collect();
            assert_eq!(got, vec![3.0, 3.0, 6.0]);
            assert_eq!(t.residual[3], 0.0);
        }
    }

    #[test]
    fn dead_seller_delivers_nothing() {
        let plans = vec![vec![0.0, 0.0], vec![7.0, 0.0]];
        let t = run_transactions(&[10.0, 0.0], &[false, true], &plans, &[1], &[3.0, 1.0], Rationing::ProRata);
        assert_eq!(t.realized[1][0], 0.0);
        assert!(t.purchases.is_empty());
    }

    #[test]
    fn market_sales() {
        let d = DemandSpec::new(8000.0, 2.0).unwrap();
        // demand at P=1000 is 6000
        assert_eq!(sell_to_market(&d, 1000.0, 4000.0).unwrap(), (4000.0, 4_000_000.0));
        assert_eq!(sell_to_market(&d, 1000.0, 9000.0).unwrap().0, 6000.0);
        assert_eq!(sell_to_market(&d, 1000.0, 0.0).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn profit_examples() {
        assert_eq!(profit(10.0, 5.0, &[10.0], &[2.0]), 30.0);
        assert_eq!(profit(10.0, 0.0, &[10.0], &[2.0]), -20.0);
        assert_eq!(profit(10.0, 0.0, &[0.0], &[2.0]), 0.0);
    }
}
