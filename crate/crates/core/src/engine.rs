//! Period loop, run bookkeeping and steady-state detection.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::learning::{
    consistency_error, update_plan, update_price, KnowledgeMode, LearnerMemory, LearningConfig, ProfitTiming,
};
use crate::market::{run_transactions, sell_to_market, DemandSpec, FlowLedger, Rationing};
use crate::rng::{stream_rng, Stream, StreamRng};
use crate::technology::{produce, TechError, TechnologySpec};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("economy has no firms")]
    Empty,
    #[error("{what} has length {got}, expected {expected}")]
    Length { what: String, expected: usize, got: usize },
    #[error("firm {firm}: {source}")]
    Technology { firm: usize, source: TechError },
    #[error("firm {firm}: {message}")]
    Demand { firm: usize, message: String },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineFault {
    #[error("period {period}, firm {firm}: {source}")]
    Technology { period: u64, firm: usize, source: TechError },
    #[error("period {period}: goods not conserved (relative error {error:e})")]
    Conservation { period: u64, error: f64 },
}

/// Largest relative flow-accounting error a period may show.
pub const CONSERVATION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitialConditions {
    /// Prices at `100·μ`, plan entries at 1.
    #[default]
    Default,
    /// Prices uniform on `[μ, a/b]`, plan entries uniform on `[0, 5]`.
    Randomized,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SteadyStateConfig {
    pub window: usize,
    pub cv_threshold: f64,
    pub consistency_threshold: f64,
}

impl Default for SteadyStateConfig {
    fn default() -> Self {
        SteadyStateConfig { window: 200, cv_threshold: 0.01, consistency_threshold: 0.05 }
    }
}

pub const DEFAULT_MAX_PERIODS: u64 = 5000;
const INITIAL_PRICE_MULTIPLE: f64 = 100.0;
const RANDOM_PLAN_MAX: f64 = 5.0;

fn default_max_periods() -> u64 {
    DEFAULT_MAX_PERIODS
}

fn default_learning() -> LearningConfig {
    LearningConfig::new(KnowledgeMode::MinimalKnowledge)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EconomyConfig {
    pub technologies: Vec<TechnologySpec>,
    pub demands: Vec<DemandSpec>,
    #[serde(default = "default_learning")]
    pub learning: LearningConfig,
    #[serde(default)]
    pub rationing: Rationing,
    #[serde(default)]
    pub initial_conditions: InitialConditions,
    #[serde(default = "default_max_periods")]
    pub max_periods: u64,
    #[serde(default)]
    pub steady_state: SteadyStateConfig,
}

impl EconomyConfig {
    pub fn new(technologies: Vec<TechnologySpec>, demands: Vec<DemandSpec>, learning: LearningConfig) -> Self {
        EconomyConfig {
            technologies,
            demands,
            learning,
            rationing: Rationing::default(),
            initial_conditions: InitialConditions::Default,
            max_periods: DEFAULT_MAX_PERIODS,
            steady_state: SteadyStateConfig::default(),
        }
    }

    pub fn n(&self) -> usize {
        self.technologies.len()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let n = self.n();
        if n == 0 {
            return Err(ConfigError::Empty);
        }
        if self.demands.len() != n {
            return Err(ConfigError::Length { what: "demands".into(), expected: n, got: self.demands.len() });
        }
        for (firm, t) in self.technologies.iter().enumerate() {
            if t.len() != n {
                return Err(ConfigError::Length {
                    what: format!("technology of firm {firm}"),
                    expected: n,
                    got: t.len(),
                });
            }
            t.validate().map_err(|source| ConfigError::Technology { firm, source })?;
        }
        for (firm, d) in self.demands.iter().enumerate() {
            d.validate().map_err(|e| ConfigError::Demand { firm, message: e.to_string() })?;
        }
        self.learning.validate().map_err(ConfigError::Invalid)?;
        let ss = &self.steady_state;
        if ss.window < 2 {
            return Err(ConfigError::Invalid("steady-state window must be at least 2".into()));
        }
        if !(ss.cv_threshold > 0.0 && ss.consistency_threshold > 0.0) {
            return Err(ConfigError::Invalid("steady-state thresholds must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirmState {
    pub price: f64,
    pub plan: Vec<f64>,
    /// Inputs bought last period, consumed by this period's production.
    pub inputs: Vec<f64>,
    pub produced: f64,
    /// Residual output offered to consumers.
    pub residual: f64,
    pub sold_total: f64,
    pub market_sold: f64,
    pub profit: f64,
    /// What the current inputs cost when they were bought.
    pub input_cost: f64,
    pub alive: bool,
    pub memory: LearnerMemory,
}

impl FirmState {
    pub fn shut_down(&mut self) {
        self.alive = false;
        self.plan.iter_mut().for_each(|q| *q = 0.0);
        self.inputs.iter_mut().for_each(|q| *q = 0.0);
        self.produced = 0.0;
        self.residual = 0.0;
        self.sold_total = 0.0;
        self.market_sold = 0.0;
        self.profit = 0.0;
        self.input_cost = 0.0;
    }
}

/// Independent random streams of one run.
#[derive(Debug, Clone)]
pub struct RngStreams {
    pub order: StreamRng,
    pub ties: Vec<StreamRng>,
}

impl RngStreams {
    pub fn new(seed: u64, n: usize) -> Self {
        RngStreams {
            order: stream_rng(seed, Stream::BuyerOrder, 0),
            ties: (0..n).map(|i| stream_rng(seed, Stream::TieBreak, i as u64)).collect(),
        }
    }
}

/// Initial firm states for `config`, drawing randomized conditions from `seed`.
pub fn initial_states(config: &EconomyConfig, seed: u64) -> Vec<FirmState> {
    let n = config.n();
    let lc = &config.learning;
    (0..n)
        .map(|i| {
            let scope = lc.scope(&config.technologies[i]);
            let mut plan = vec![0.0; n];
            let price = match config.initial_conditions {
                InitialConditions::Default => {
                    scope.iter().for_each(|&j| plan[j] = 1.0);
                    lc.price_floor * INITIAL_PRICE_MULTIPLE
                }
                InitialConditions::Randomized => {
                    let mut rng = stream_rng(seed, Stream::InitialConditions, i as u64);
                    let choke = config.demands[i].choke_price().max(lc.price_floor);
                    let price = rng.gen_range(lc.price_floor..=choke);
                    scope.iter().for_each(|&j| plan[j] = rng.gen_range(0.0..=RANDOM_PLAN_MAX));
                    price
                }
            };
            FirmState {
                price,
                // first production runs on an endowment equal to the plan
                inputs: plan.clone(),
                plan,
                produced: 0.0,
                residual: 0.0,
                sold_total: 0.0,
                market_sold: 0.0,
                profit: 0.0,
                input_cost: 0.0,
                alive: true,
                memory: LearnerMemory::new(n),
            }
        })
        .collect()
}

/// Executes one period: production, purchases in random buyer order,
/// final-market sales, profits, then price and plan updates.
pub fn step(
    states: &mut [FirmState],
    config: &EconomyConfig,
    streams: &mut RngStreams,
    period: u64,
) -> Result<FlowLedger, EngineFault> {
    let n = states.len();
    let alive: Vec<bool> = states.iter().map(|s| s.alive).collect();
    if !alive.iter().any(|a| *a) {
        return Ok(FlowLedger::empty(period, n));
    }
    let lc = &config.learning;

    let mut produced = vec![0.0; n];
    for i in 0..n {
        if alive[i] {
            produced[i] = produce(&config.technologies[i], &states[i].inputs)
                .map_err(|source| EngineFault::Technology { period, firm: i, source })?;
        }
    }

    let mut order: Vec<usize> = (0..n).filter(|&i| alive[i]).collect();
    order.shuffle(&mut streams.order);
    let prices: Vec<f64> = states.iter().map(|s| s.price).collect();
    let plans: Vec<Vec<f64>> = states.iter().map(|s| s.plan.clone()).collect();
    let tx = run_transactions(&produced, &alive, &plans, &order, &prices, config.rationing);

    let mut ledger = FlowLedger::empty(period, n);
    ledger.purchases = tx.purchases;
    let costs = ledger.purchase_costs();
    for i in 0..n {
        if !alive[i] {
            continue;
        }
        let s = &mut states[i];
        let offered = tx.residual[i];
        // residual cannot fail: offered is non-negative and price is floored
        let (sold, revenue) = sell_to_market(&config.demands[i], s.price, offered).unwrap_or((0.0, 0.0));
        s.produced = produced[i];
        s.residual = offered;
        s.market_sold = sold;
        s.sold_total = (produced[i] - offered) + sold;
        s.profit = s.price * s.sold_total - costs[i];
        ledger.produced[i] = produced[i];
        ledger.offered[i] = offered;
        ledger.market_volume[i] = sold;
        ledger.market_revenue[i] = revenue;
        ledger.unsold[i] = offered - sold;
    }

    let mut new_prices = prices.clone();
    for i in 0..n {
        if !alive[i] {
            continue;
        }
        let s = &mut states[i];
        let plan = std::mem::take(&mut s.plan);
        let learned = match lc.profit_timing {
            ProfitTiming::Accrual => s.price * s.sold_total - s.input_cost,
            ProfitTiming::Cash => s.profit,
        };
        s.memory.record(s.price, s.produced, s.residual, learned, &plan, &tx.realized[i]);
        s.input_cost = costs[i];
        s.plan = plan;
        new_prices[i] = update_price(&s.memory, &config.demands[i], lc, &mut streams.ties[i]);
    }
    for i in 0..n {
        if !alive[i] {
            continue;
        }
        let scope: Vec<usize> = lc.scope(&config.technologies[i]).into_iter().filter(|&j| alive[j]).collect();
        let s = &mut states[i];
        let plan = update_plan(
            &s.memory,
            &config.technologies[i],
            &new_prices,
            i,
            &scope,
            &config.demands[i],
            lc,
            &mut streams.ties[i],
        )
        .map_err(|source| EngineFault::Technology { period, firm: i, source })?;
        s.plan = plan;
        s.inputs.copy_from_slice(&tx.realized[i]);
        s.price = new_prices[i];
    }
    let error = ledger.conservation_error();
    if !(error <= CONSERVATION_TOLERANCE) {
        return Err(EngineFault::Conservation { period, error });
    }
    Ok(ledger)
}

/// Per-period, per-firm records, period-major.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Series {
    pub n: usize,
    /// Period number of the first row.
    pub first_period: u64,
    pub price: Vec<f64>,
    pub produced: Vec<f64>,
    /// Residual output offered to consumers.
    pub residual: Vec<f64>,
    pub market_sold: Vec<f64>,
    pub profit: Vec<f64>,
    pub consistency: Vec<f64>,
    pub alive: Vec<bool>,
}

impl Series {
    pub fn new(n: usize, first_period: u64) -> Self {
        Series { n, first_period, ..Default::default() }
    }

    /// Number of recorded periods.
    pub fn len(&self) -> usize {
        if self.n == 0 {
            0
        } else {
            self.price.len() / self.n
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn last_period(&self) -> Option<u64> {
        (!self.is_empty()).then(|| self.first_period + self.len() as u64 - 1)
    }

    /// Appends one period. `prices` are the prices charged during the period.
    pub fn push(&mut self, prices: &[f64], states: &[FirmState], demands: &[DemandSpec]) {
        for (i, s) in states.iter().enumerate() {
            self.price.push(prices[i]);
            self.produced.push(s.produced);
            self.residual.push(s.residual);
            self.market_sold.push(s.market_sold);
            self.profit.push(s.profit);
            self.consistency.push(if s.alive { consistency_error(prices[i], s.residual, &demands[i]) } else { 0.0 });
            self.alive.push(s.alive);
        }
    }

    fn at(&self, row: usize, firm: usize) -> usize {
        row * self.n + firm
    }

    /// Values of `column` for `firm` over rows `[start, end)`.
    pub fn column<'a>(
        &'a self,
        column: &'a [f64],
        firm: usize,
        start: usize,
        end: usize,
    ) -> impl Iterator<Item = f64> + 'a {
        (start..end).map(move |r| column[self.at(r, firm)])
    }

    pub fn is_alive(&self, row: usize, firm: usize) -> bool {
        self.alive[self.at(row, firm)]
    }

    /// Keeps only the last `rows` periods.
    pub fn truncate_front(&mut self, rows: usize) {
        let len = self.len();
        if len <= rows {
            return;
        }
        let drop = (len - rows) * self.n;
        for v in [
            &mut self.price,
            &mut self.produced,
            &mut self.residual,
            &mut self.market_sold,
            &mut self.profit,
            &mut self.consistency,
        ] {
            v.drain(..drop);
        }
        self.alive.drain(..drop);
        self.first_period += (len - rows) as u64;
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Population coefficient of variation; zero for an all-zero window.
pub fn coefficient_of_variation(xs: &[f64]) -> f64 {
    let m = mean(xs);
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64;
    let sd = var.sqrt();
    if m == 0.0 {
        if sd == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        sd / m.abs()
    }
}

/// Trailing-window statistics of one firm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FirmStats {
    pub alive: bool,
    pub price: f64,
    pub produced: f64,
    pub residual: f64,
    pub market_sold: f64,
    pub profit: f64,
    pub consistency: f64,
    pub price_cv: f64,
    pub residual_cv: f64,
}

/// Statistics over rows `[end − window, end)` (clamped at the start).
pub fn window_stats(series: &Series, end: usize, window: usize) -> Vec<FirmStats> {
    let start = end.saturating_sub(window);
    (0..series.n)
        .map(|i| {
            let col = |c: &[f64]| series.column(c, i, start, end).collect::<Vec<f64>>();
            let price = col(&series.price);
            let residual = col(&series.residual);
            FirmStats {
                alive: end > 0 && series.is_alive(end - 1, i),
                price: mean(&price),
                produced: mean(&col(&series.produced)),
                residual: mean(&residual),
                market_sold: mean(&col(&series.market_sold)),
                profit: mean(&col(&series.profit)),
                consistency: mean(&col(&series.consistency)),
                price_cv: coefficient_of_variation(&price),
                residual_cv: coefficient_of_variation(&residual),
            }
        })
        .collect()
}

/// Trailing-window statistics at the end of the series.
pub fn trailing_stats(series: &Series, window: usize) -> Vec<FirmStats> {
    window_stats(series, series.len(), window)
}

/// Whether the `window` rows ending just before `end` meet the tolerances.
pub fn window_is_steady(series: &Series, end: usize, cfg: &SteadyStateConfig) -> bool {
    let w = cfg.window;
    if end < w || end > series.len() {
        return false;
    }
    let start = end - w;
    let mut buf = vec![0.0; w];
    let fill = |buf: &mut [f64], c: &[f64], i: usize| {
        for (k, v) in series.column(c, i, start, end).enumerate() {
            buf[k] = v;
        }
    };
    for i in 0..series.n {
        if !series.is_alive(end - 1, i) {
            continue;
        }
        fill(&mut buf, &series.consistency, i);
        if mean(&buf) >= cfg.consistency_threshold {
            return false;
        }
        fill(&mut buf, &series.price, i);
        if coefficient_of_variation(&buf) >= cfg.cv_threshold {
            return false;
        }
        fill(&mut buf, &series.residual, i);
        if coefficient_of_variation(&buf) >= cfg.cv_threshold {
            return false;
        }
    }
    true
}

/// Earliest period closing a steady window.
pub fn detect_steady_state(series: &Series, cfg: &SteadyStateConfig) -> Option<u64> {
    (cfg.window..=series.len())
        .find(|&end| window_is_steady(series, end, cfg))
        .map(|end| series.first_period + end as u64 - 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    SteadyState,
    MaxPeriods,
    ExtremeOutputFault,
}

/// How many ledgers a run keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LedgerRetention {
    #[default]
    All,
    Last(usize),
    None,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub ledgers: LedgerRetention,
    /// Stop at the first steady window.
    pub stop_at_steady_state: bool,
    /// No early stop before this period.
    pub earliest_stop: u64,
    /// Keep only this many trailing series rows (all when `None`).
    pub series_rows: Option<usize>,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { ledgers: LedgerRetention::All, stop_at_steady_state: true, earliest_stop: 0, series_rows: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub series: Series,
    pub ledgers: Vec<FlowLedger>,
    pub steady_state_period: Option<u64>,
    pub termination: Termination,
    pub fault: Option<String>,
    pub periods: u64,
}

/// A running economy.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub config: EconomyConfig,
    pub states: Vec<FirmState>,
    /// Completed periods.
    pub period: u64,
    pub streams: RngStreams,
}

impl Simulation {
    pub fn new(config: EconomyConfig, seed: u64) -> Result<Self, ConfigError> {
        config.validate()?;
        let states = initial_states(&config, seed);
        let streams = RngStreams::new(seed, config.n());
        Ok(Simulation { config, states, period: 0, streams })
    }

    pub fn n(&self) -> usize {
        self.config.n()
    }

    pub fn prices(&self) -> Vec<f64> {
        self.states.iter().map(|s| s.price).collect()
    }

    /// Runs the next period.
    pub fn step(&mut self) -> Result<FlowLedger, EngineFault> {
        let ledger = step(&mut self.states, &self.config, &mut self.streams, self.period + 1)?;
        self.period += 1;
        Ok(ledger)
    }
}

/// Drives `sim` up to period `last_period`.
///
/// `before_period` runs ahead of every period with the simulation still at
/// the previous period; shock schedules hook in there.
pub fn drive<F>(sim: &mut Simulation, last_period: u64, opts: &RunOptions, mut before_period: F) -> RunResult
where
    F: FnMut(&mut Simulation) -> Result<(), String>,
{
    let n = sim.n();
    let mut series = Series::new(n, sim.period + 1);
    let mut ledgers = Vec::new();
    let mut steady = None;
    let mut termination = Termination::MaxPeriods;
    let mut fault = None;
    let ss = sim.config.steady_state;
    while sim.period < last_period {
        if let Err(e) = before_period(sim) {
            fault = Some(e);
            termination = Termination::ExtremeOutputFault;
            break;
        }
        let prices = sim.prices();
        match sim.step() {
            Ok(ledger) => match opts.ledgers {
                LedgerRetention::All => ledgers.push(ledger),
                LedgerRetention::Last(k) => {
                    if k > 0 {
                        if ledgers.len() == k {
                            ledgers.remove(0);
                        }
                        ledgers.push(ledger);
                    }
                }
                LedgerRetention::None => {}
            },
            Err(e) => {
                fault = Some(e.to_string());
                termination = Termination::ExtremeOutputFault;
                break;
            }
        }
        series.push(&prices, &sim.states, &sim.config.demands);
        if let Some(rows) = opts.series_rows {
            // keep a full window for detection
            if series.len() > rows.max(ss.window) + 512 {
                series.truncate_front(rows.max(ss.window));
            }
        }
        if window_is_steady(&series, series.len(), &ss) {
            if steady.is_none() {
                steady = Some(sim.period);
            }
            if opts.stop_at_steady_state && sim.period >= opts.earliest_stop {
                termination = Termination::SteadyState;
                break;
            }
        }
    }
    if let Some(rows) = opts.series_rows {
        series.truncate_front(rows.max(ss.window));
    }
    RunResult { series, ledgers, steady_state_period: steady, termination, fault, periods: sim.period }
}

/// Runs `config` from scratch until steady state or `max_periods`.
pub fn run(config: &EconomyConfig, seed: u64) -> Result<RunResult, ConfigError> {
    run_with(config, seed, &RunOptions::default())
}

pub fn run_with(config: &EconomyConfig, seed: u64, opts: &RunOptions) -> Result<RunResult, ConfigError> {
    let mut sim = Simulation::new(config.clone(), seed)?;
    let last = config.max_periods;
    Ok(drive(&mut sim, last, opts, |_| Ok(())))
}
