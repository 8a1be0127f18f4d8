//! Directed-learning updates for prices and purchase plans.
//!
//! A firm repeats the direction of its last move when profit rose and
//! reverses it otherwise. A zero sign product is broken by a fair coin.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::market::{demand_quantity, inverse_demand, DemandSpec};
use crate::technology::{marginal_products, used_inputs, TechError, TechnologySpec};

/// Which inputs a firm experiments with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KnowledgeMode {
    /// Every industry is a candidate supplier.
    ZeroKnowledge,
    /// Only inputs the technology actually uses.
    MinimalKnowledge,
}

/// Size of the price and plan moves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepMode {
    /// `P ± δ^p` and `q ± δ^q·m_j/P_j`.
    LiteralAdditive,
    /// Moves scaled by the firm's own price and by `step_gain`, with
    /// downward moves taken as the geometric mirror of the upward move:
    /// `P·(1+gδ^p)` or `P/(1+gδ^p)`; `b + s` or `b²/(b + s)` for a plan
    /// entry `b` and step `s = g·δ^q·m_j·P_i/P_j`.
    PriceScaled,
}

/// Output compared with the demand curve when sizing both moves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DemandProbe {
    /// Residual output offered to consumers.
    Residual,
    /// Total production.
    Total,
}

/// How a plan move is split across inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanRule {
    /// Each input moves on its own by `δ^q·m_j/P_j`, sized per [`StepMode`].
    PerInput,
    /// Upward moves add `g_q·δ^q·B` spread over inputs in proportion to
    /// `m_j/P_j`, where `B` is the total base bundle (at least 1); downward
    /// moves divide every entry by `1 + g_q·δ^q`.
    Proportional,
}

/// Profit figure the learning rule compares across periods.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfitTiming {
    /// Revenue less the cost of the inputs consumed to produce it, which
    /// were bought in the previous period.
    Accrual,
    /// Revenue less this period's purchases.
    Cash,
}

/// Reference point for plan moves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanBase {
    /// Last period's realized purchases.
    Realized,
    /// Last period's plan.
    Plan,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearningConfig {
    pub price_floor: f64,
    pub knowledge_mode: KnowledgeMode,
    pub step_mode: StepMode,
    /// Gain `g` on price moves under [`StepMode::PriceScaled`] and on
    /// per-input plan moves.
    pub step_gain: f64,
    pub plan_rule: PlanRule,
    /// Gain `g_q` of [`PlanRule::Proportional`].
    pub quantity_gain: f64,
    /// Never price above the choke price `a/b`.
    pub cap_at_choke: bool,
    pub demand_probe: DemandProbe,
    pub profit_timing: ProfitTiming,
    pub plan_base: PlanBase,
    pub plan_floor: f64,
    /// Upper bound on `δ^p` and `δ^q`.
    pub delta_cap: f64,
}

pub const DEFAULT_PRICE_FLOOR: f64 = 1e-2;
pub const DEFAULT_STEP_GAIN: f64 = 0.3;
pub const DEFAULT_QUANTITY_GAIN: f64 = 0.1;
const ZERO_KNOWLEDGE_PLAN_FLOOR: f64 = 1e-3;

impl LearningConfig {
    /// Default configuration for a knowledge mode.
    pub fn new(knowledge_mode: KnowledgeMode) -> Self {
        LearningConfig {
            price_floor: DEFAULT_PRICE_FLOOR,
            knowledge_mode,
            step_mode: StepMode::PriceScaled,
            step_gain: DEFAULT_STEP_GAIN,
            plan_rule: PlanRule::Proportional,
            quantity_gain: DEFAULT_QUANTITY_GAIN,
            cap_at_choke: true,
            demand_probe: DemandProbe::Residual,
            profit_timing: ProfitTiming::Accrual,
            plan_base: PlanBase::Realized,
            plan_floor: match knowledge_mode {
                KnowledgeMode::ZeroKnowledge => ZERO_KNOWLEDGE_PLAN_FLOOR,
                KnowledgeMode::MinimalKnowledge => 0.0,
            },
            delta_cap: 1.0,
        }
    }

    /// Additive steps on total output and previous plans, uncapped.
    pub fn literal(knowledge_mode: KnowledgeMode) -> Self {
        LearningConfig {
            step_mode: StepMode::LiteralAdditive,
            step_gain: 1.0,
            plan_rule: PlanRule::PerInput,
            cap_at_choke: false,
            demand_probe: DemandProbe::Total,
            profit_timing: ProfitTiming::Cash,
            plan_base: PlanBase::Plan,
            delta_cap: f64::INFINITY,
            ..Self::new(knowledge_mode)
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.price_floor.is_finite() && self.price_floor > 0.0) {
            return Err(format!("price_floor must be positive, got {}", self.price_floor));
        }
        if !(self.step_gain.is_finite() && self.step_gain > 0.0) {
            return Err(format!("step_gain must be positive, got {}", self.step_gain));
        }
        if !(self.quantity_gain.is_finite() && self.quantity_gain > 0.0) {
            return Err(format!("quantity_gain must be positive, got {}", self.quantity_gain));
        }
        if !(self.plan_floor.is_finite() && self.plan_floor >= 0.0) {
            return Err(format!("plan_floor must be non-negative, got {}", self.plan_floor));
        }
        if self.delta_cap.is_nan() || self.delta_cap <= 0.0 {
            return Err(format!("delta_cap must be positive, got {}", self.delta_cap));
        }
        Ok(())
    }

    /// Inputs a firm with `tech` experiments with, before masking dead sellers.
    pub fn scope(&self, tech: &TechnologySpec) -> Vec<usize> {
        match self.knowledge_mode {
            KnowledgeMode::ZeroKnowledge => (0..tech.len()).collect(),
            KnowledgeMode::MinimalKnowledge => used_inputs(tech),
        }
    }
}

impl Default for LearningConfig {
    fn default() -> Self {
        Self::new(KnowledgeMode::MinimalKnowledge)
    }
}

/// Last observed values and their changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerMemory {
    pub prev_price: f64,
    pub prev_profit: f64,
    pub prev_output: f64,
    pub prev_residual: f64,
    pub prev_plan: Vec<f64>,
    pub prev_realized_inputs: Vec<f64>,
    pub delta_price: f64,
    pub delta_profit: f64,
    pub delta_output: f64,
    pub delta_plan: Vec<f64>,
    /// Number of recorded periods. With none or one recorded, every delta
    /// product is zero and directions come from the coin.
    pub observations: u64,
}

impl LearnerMemory {
    pub fn new(n: usize) -> Self {
        LearnerMemory {
            prev_price: 0.0,
            prev_profit: 0.0,
            prev_output: 0.0,
            prev_residual: 0.0,
            prev_plan: vec![0.0; n],
            prev_realized_inputs: vec![0.0; n],
            delta_price: 0.0,
            delta_profit: 0.0,
            delta_output: 0.0,
            delta_plan: vec![0.0; n],
            observations: 0,
        }
    }

    /// Stores one period's observations and refreshes the deltas.
    pub fn record(&mut self, price: f64, output: f64, residual: f64, profit: f64, plan: &[f64], realized: &[f64]) {
        if self.observations == 0 {
            self.delta_price = 0.0;
            self.delta_profit = 0.0;
            self.delta_output = 0.0;
            self.delta_plan.iter_mut().for_each(|d| *d = 0.0);
        } else {
            self.delta_price = price - self.prev_price;
            self.delta_profit = profit - self.prev_profit;
            self.delta_output = output - self.prev_output;
            for (d, (new, old)) in self.delta_plan.iter_mut().zip(plan.iter().zip(&self.prev_plan)) {
                *d = new - old;
            }
        }
        self.prev_price = price;
        self.prev_profit = profit;
        self.prev_output = output;
        self.prev_residual = residual;
        self.prev_plan.copy_from_slice(plan);
        self.prev_realized_inputs.copy_from_slice(realized);
        self.observations += 1;
    }
}

/// `+1` or `−1` following the sign of `product`; a coin flip when it is zero.
pub fn direction<R: Rng + ?Sized>(product: f64, rng: &mut R) -> f64 {
    if product > 0.0 {
        1.0
    } else if product < 0.0 {
        -1.0
    } else if rng.gen_bool(0.5) {
        1.0
    } else {
        -1.0
    }
}

fn probed_output(mem: &LearnerMemory, cfg: &LearningConfig) -> f64 {
    match cfg.demand_probe {
        DemandProbe::Residual => mem.prev_residual,
        DemandProbe::Total => mem.prev_output,
    }
}

/// `|P^d − P| / P^d`, capped.
pub fn price_delta(mem: &LearnerMemory, demand: &DemandSpec, cfg: &LearningConfig) -> f64 {
    let probe = probed_output(mem, cfg);
    // the floor keeps the target strictly positive
    let target = inverse_demand(demand, probe.max(0.0), cfg.price_floor).unwrap_or(cfg.price_floor);
    ((target - mem.prev_price).abs() / target).min(cfg.delta_cap)
}

/// `|Q^d(P) − Q| / max(Q^d(P), 1)`, capped.
pub fn quantity_delta(mem: &LearnerMemory, demand: &DemandSpec, cfg: &LearningConfig) -> f64 {
    let qd = demand_quantity(demand, mem.prev_price.max(0.0)).unwrap_or(0.0);
    let q = probed_output(mem, cfg);
    ((qd - q).abs() / qd.max(1.0)).min(cfg.delta_cap)
}

/// Next period's price.
pub fn update_price<R: Rng + ?Sized>(
    mem: &LearnerMemory,
    demand: &DemandSpec,
    cfg: &LearningConfig,
    rng: &mut R,
) -> f64 {
    let s = direction(mem.delta_price * mem.delta_profit, rng);
    let delta = price_delta(mem, demand, cfg);
    let p = mem.prev_price;
    let next = match cfg.step_mode {
        StepMode::LiteralAdditive => p + s * delta,
        StepMode::PriceScaled => {
            let g = cfg.step_gain * delta;
            if s > 0.0 {
                p * (1.0 + g)
            } else {
                p / (1.0 + g)
            }
        }
    };
    let next = if cfg.cap_at_choke { next.min(demand.choke_price()) } else { next };
    next.max(cfg.price_floor)
}

/// Next period's purchase plan.
///
/// `prices` are the freshly updated prices of every firm, `own` is this
/// firm's index and `scope` the inputs it experiments with. Entries outside
/// `scope` are zero.
#[allow(clippy::too_many_arguments)]
pub fn update_plan<R: Rng + ?Sized>(
    mem: &LearnerMemory,
    tech: &TechnologySpec,
    prices: &[f64],
    own: usize,
    scope: &[usize],
    demand: &DemandSpec,
    cfg: &LearningConfig,
    rng: &mut R,
) -> Result<Vec<f64>, TechError> {
    let n = prices.len();
    let s = direction(mem.delta_output * mem.delta_profit, rng);
    let delta = quantity_delta(mem, demand, cfg);
    let m = marginal_products(tech, &mem.prev_realized_inputs, scope)?;
    let mut plan = vec![0.0; n];
    let base = |j: usize| match cfg.plan_base {
        PlanBase::Realized => mem.prev_realized_inputs[j],
        PlanBase::Plan => mem.prev_plan[j],
    };
    if cfg.plan_rule == PlanRule::Proportional {
        let g = cfg.quantity_gain * delta;
        let total = scope.iter().map(|&j| base(j)).sum::<f64>().max(1.0);
        let value: Vec<f64> = scope.iter().enumerate().map(|(k, &j)| m[k] / prices[j]).collect();
        let vsum: f64 = value.iter().sum();
        for (k, &j) in scope.iter().enumerate() {
            let next = if s < 0.0 {
                base(j) / (1.0 + g)
            } else if vsum > 0.0 {
                base(j) + g * total * value[k] / vsum
            } else {
                base(j)
            };
            plan[j] = next.max(cfg.plan_floor);
        }
        return Ok(plan);
    }
    for (k, &j) in scope.iter().enumerate() {
        let base = base(j);
        let next = match cfg.step_mode {
            StepMode::LiteralAdditive => base + s * delta * m[k] / prices[j],
            StepMode::PriceScaled => {
                let step = cfg.step_gain * delta * m[k] * prices[own] / prices[j];
                if s > 0.0 {
                    base + step
                } else if base + step > 0.0 {
                    base * base / (base + step)
                } else {
                    0.0
                }
            }
        };
        plan[j] = next.max(cfg.plan_floor);
    }
    Ok(plan)
}

/// `|Q^d(P) − Q^m| / max(Q^d(P), 1)`.
pub fn consistency_error(price: f64, residual: f64, demand: &DemandSpec) -> f64 {
    let qd = (demand.intercept - demand.slope * price).max(0.0);
    (qd - residual).abs() / qd.max(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream_rng, Stream};

    fn memory(price: f64, output: f64, residual: f64) -> LearnerMemory {
        let mut m = LearnerMemory::new(2);
        m.prev_price = price;
        m.prev_output = output;
        m.prev_residual = residual;
        m.observations = 2;
        m
    }

    #[test]
    fn literal_price_step() {
        let d = DemandSpec::new(8000.0, 2.0).unwrap();
        // P^d(6000) = 1000
        let mut m = memory(900.0, 6000.0, 6000.0);
        m.delta_price = 1.0;
        m.delta_profit = 1.0;
        let cfg = LearningConfig::literal(KnowledgeMode::ZeroKnowledge);
        let p = update_price(&m, &d, &cfg, &mut stream_rng(0, Stream::TieBreak, 0));
        assert!((p - 900.1).abs() < 1e-9, "{p}");
    }

    #[test]
    fn price_never_below_floor() {
        let d = DemandSpec::new(8000.0, 2.0).unwrap();
        let mut m = memory(0.5, 0.0, 0.0);
        m.delta_price = 1.0;
        m.delta_profit = -1.0;
        let cfg = LearningConfig::literal(KnowledgeMode::ZeroKnowledge);
        let p = update_price(&m, &d, &cfg, &mut stream_rng(0, Stream::TieBreak, 0));
        assert_eq!(p, cfg.price_floor);
    }

    #[test]
    fn coin_is_fair() {
        let mut rng = stream_rng(11, Stream::TieBreak, 0);
        let ups = (0..10_000).filter(|_| direction(0.0, &mut rng) > 0.0).count();
        let freq = ups as f64 / 10_000.0;
        assert!((freq - 0.5).abs() < 0.05, "{freq}");
    }

    #[test]
    fn literal_plan_step() {
        // s = +1, δ^q = 0.2, P_j = 2, m_j = 5, previous entry 10
        let d = DemandSpec::new(1000.0, 1.0).unwrap();
        let tech = TechnologySpec::linear(vec![0.0, 5.0]).unwrap();
        let mut m = memory(500.0, 400.0, 400.0); // Q^d(500) = 500, δ^q = 100/500
        m.delta_output = 1.0;
        m.delta_profit = 1.0;
        m.prev_plan = vec![0.0, 10.0];
        m.prev_realized_inputs = vec![0.0, 10.0];
        let cfg = LearningConfig::literal(KnowledgeMode::MinimalKnowledge);
        let plan =
            update_plan(&m, &tech, &[500.0, 2.0], 0, &[1], &d, &cfg, &mut stream_rng(0, Stream::TieBreak, 0)).unwrap();
        assert!((plan[1] - 10.5).abs() < 1e-12, "{}", plan[1]);
        assert_eq!(plan[0], 0.0);
    }

    #[test]
    fn cheaper_input_gets_larger_increment() {
        let d = DemandSpec::new(1000.0, 1.0).unwrap();
        let tech = TechnologySpec::linear(vec![3.0, 3.0]).unwrap();
        let mut m = memory(500.0, 400.0, 400.0);
        m.delta_output = 1.0;
        m.delta_profit = 1.0;
        m.prev_plan = vec![4.0, 4.0];
        m.prev_realized_inputs = vec![4.0, 4.0];
        for cfg in
            [LearningConfig::new(KnowledgeMode::ZeroKnowledge), LearningConfig::literal(KnowledgeMode::ZeroKnowledge)]
        {
            let plan =
                update_plan(&m, &tech, &[2.0, 7.0], 0, &[0, 1], &d, &cfg, &mut stream_rng(0, Stream::TieBreak, 0))
                    .unwrap();
            assert!(plan[0] - 4.0 > plan[1] - 4.0);
            assert!(plan[1] > 4.0);
        }
    }

    #[test]
    fn scaled_moves_are_geometric_mirrors() {
        let d = DemandSpec::new(8000.0, 2.0).unwrap();
        let cfg = LearningConfig::new(KnowledgeMode::ZeroKnowledge);
        let mut m = memory(900.0, 6000.0, 6000.0);
        m.delta_price = 1.0;
        m.delta_profit = 1.0;
        let up = update_price(&m, &d, &cfg, &mut stream_rng(0, Stream::TieBreak, 0));
        m.delta_profit = -1.0;
        let down = update_price(&m, &d, &cfg, &mut stream_rng(0, Stream::TieBreak, 0));
        assert!(((up / 900.0) * (down / 900.0) - 1.0).abs() < 1e-12);
        assert!((up - 900.0 * (1.0 + 0.3 * 0.1)).abs() < 1e-9);
    }

    #[test]
    fn consistency_examples() {
        let d = DemandSpec::new(8000.0, 2.0).unwrap();
        assert_eq!(consistency_error(1000.0, 6000.0, &d), 0.0);
        assert!((consistency_error(1000.0, 5400.0, &d) - 0.1).abs() < 1e-12);
        assert_eq!(consistency_error(5000.0, 3.0, &d), 3.0);
    }

    #[test]
    fn record_tracks_deltas() {
        let mut m = LearnerMemory::new(1);
        m.record(5.0, 10.0, 3.0, 7.0, &[1.0], &[1.0]);
        assert_eq!((m.delta_price, m.delta_profit), (0.0, 0.0));
        m.record(6.0, 8.0, 3.0, 10.0, &[2.0], &[1.5]);
        assert_eq!((m.delta_price, m.delta_output, m.delta_profit), (1.0, -2.0, 3.0));
        assert_eq!(m.delta_plan, vec![1.0]);
        assert_eq!(m.prev_realized_inputs, vec![1.5]);
    }
}
