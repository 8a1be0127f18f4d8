//! Batches over seeds, robustness tests and shock experiments.
//!
//! Runs are farmed out to a rayon pool and collected in input order, so
//! every result is independent of the number of workers.

use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::engine::{
    drive, trailing_stats, window_stats, FirmStats, LedgerRetention, RunOptions, RunResult, Simulation, Termination,
};
use crate::io;
use crate::netmetrics::{ShockEffects, SteadyOutcome, Variable};
use crate::rng::{derive_seed, Stream};
use crate::shocks::catalog::{Family, SHOCK_MAGNITUDE, SYNTHETIC_AFTER_SHOCK, SYNTHETIC_SHOCK_PERIOD};
use crate::shocks::{apply, run_scenario, Scenario, ScenarioError, ShockEvent};

/// Environment variable holding the default worker count.
pub const PARALLELISM_ENV: &str = "PRODNET_PARALLELISM";
pub const FORMAT_VERSION: u32 = 1;
/// Smallest sample accepted by [`robustness_ttest`].
pub const MIN_TTEST_RUNS: usize = 30;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("seed {0} appears more than once")]
    DuplicateSeed(u64),
    #[error("need at least {needed} runs per sample, got {got}")]
    TooFewRuns { needed: usize, got: usize },
    #[error("firm counts differ: {0} vs {1}")]
    FirmMismatch(usize, usize),
    #[error("scenario has no shock event")]
    NoShock,
    #[error("could not start worker pool: {0}")]
    Pool(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Persist(#[from] io::IoError),
}

/// Worker count from [`PARALLELISM_ENV`], else the number of cores.
pub fn default_parallelism() -> usize {
    std::env::var(PARALLELISM_ENV)
        .ok()
        .and_then(|v| v.parse().ok())
        .filter(|&k: &usize| k > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

/// Maps `f` over `items` on `parallelism` workers, preserving order.
pub fn par_map<T, R, F>(items: &[T], parallelism: usize, f: F) -> Result<Vec<R>, HarnessError>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| HarnessError::Pool(e.to_string()))?;
    Ok(pool.install(|| items.par_iter().map(&f).collect()))
}

/// Seeds of a batch of `runs` members under `master`.
pub fn batch_seeds(master: u64, runs: usize) -> Vec<u64> {
    (0..runs as u64).map(|i| derive_seed(master, Stream::BatchMember, i)).collect()
}

#[derive(Debug, Clone)]
pub struct Batch {
    pub scenario: Scenario,
    pub seeds: Vec<u64>,
    pub parallelism: usize,
    pub options: RunOptions,
    /// Per-run outputs land in `<dir>/<seed>/` when set.
    pub output: Option<std::path::PathBuf>,
}

impl Batch {
    pub fn new(scenario: Scenario, seeds: Vec<u64>) -> Self {
        Batch {
            scenario,
            seeds,
            parallelism: default_parallelism(),
            options: RunOptions { ledgers: LedgerRetention::None, ..RunOptions::default() },
            output: None,
        }
    }
}

/// Outcome of one batch member.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub index: usize,
    pub seed: u64,
    pub termination: Termination,
    pub steady_state_period: Option<u64>,
    pub periods: u64,
    pub fault: Option<String>,
    /// Trailing-window statistics at the end of the run.
    pub stats: Vec<FirmStats>,
}

impl RunRecord {
    pub fn from_result(index: usize, seed: u64, r: &RunResult, window: usize) -> Self {
        RunRecord {
            index,
            seed,
            termination: r.termination,
            steady_state_period: r.steady_state_period,
            periods: r.periods,
            fault: r.fault.clone(),
            stats: trailing_stats(&r.series, window),
        }
    }

    pub fn value(&self, firm: usize, v: Variable) -> f64 {
        let s = &self.stats[firm];
        match v {
            Variable::Price => s.price,
            Variable::Volume => s.produced,
            Variable::Profit => s.profit,
        }
    }
}

/// Mean, population standard deviation and coefficient of variation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean: f64,
    pub sd: f64,
    pub cv: Option<f64>,
}

impl Moments {
    pub fn of(xs: &[f64]) -> Self {
        if xs.is_empty() {
            return Moments { mean: 0.0, sd: 0.0, cv: None };
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let sd = (xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt();
        Moments { mean, sd, cv: (mean != 0.0).then(|| sd / mean.abs()) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirmSummary {
    pub firm: usize,
    pub price: Moments,
    pub volume: Moments,
    pub residual: Moments,
    pub profit: Moments,
    pub consistency: Moments,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Tally {
    pub steady_state: usize,
    pub max_periods: usize,
    pub fault: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub format_version: u32,
    pub label: String,
    pub runs: Vec<RunRecord>,
    /// Across-run moments over runs that did not fault.
    pub firms: Vec<FirmSummary>,
    pub tally: Tally,
}

impl BatchSummary {
    pub fn from_runs(label: &str, runs: Vec<RunRecord>) -> Self {
        let mut tally = Tally::default();
        for r in &runs {
            match r.termination {
                Termination::SteadyState => tally.steady_state += 1,
                Termination::MaxPeriods => tally.max_periods += 1,
                Termination::ExtremeOutputFault => tally.fault += 1,
            }
        }
        let ok: Vec<&RunRecord> = runs.iter().filter(|r| r.fault.is_none()).collect();
        let n = ok.first().map_or(0, |r| r.stats.len());
        let firms = (0..n)
            .map(|i| {
                let col =
                    |f: fn(&FirmStats) -> f64| Moments::of(&ok.iter().map(|r| f(&r.stats[i])).collect::<Vec<_>>());
                FirmSummary {
                    firm: i,
                    price: col(|s| s.price),
                    volume: col(|s| s.produced),
                    residual: col(|s| s.residual),
                    profit: col(|s| s.profit),
                    consistency: col(|s| s.consistency),
                }
            })
            .collect();
        BatchSummary { format_version: FORMAT_VERSION, label: label.to_string(), runs, firms, tally }
    }

    /// Runs that did not fault.
    pub fn completed(&self) -> impl Iterator<Item = &RunRecord> {
        self.runs.iter().filter(|r| r.fault.is_none())
    }

    pub fn values(&self, firm: usize, v: Variable) -> Vec<f64> {
        self.completed().map(|r| r.value(firm, v)).collect()
    }
}

/// Runs every seed of `batch` and summarizes the trailing windows.
pub fn run_batch(batch: &Batch) -> Result<BatchSummary, HarnessError> {
    batch.scenario.validate()?;
    let mut seen = HashSet::new();
    if let Some(&dup) = batch.seeds.iter().find(|s| !seen.insert(**s)) {
        return Err(HarnessError::DuplicateSeed(dup));
    }
    let window = batch.scenario.economy.steady_state.window;
    let indexed: Vec<(usize, u64)> = batch.seeds.iter().copied().enumerate().collect();
    let records = par_map(&indexed, batch.parallelism, |&(i, seed)| -> Result<RunRecord, HarnessError> {
        let r = run_scenario(&batch.scenario, seed, &batch.options)?;
        if let Some(dir) = &batch.output {
            io::write_run(&dir.join(seed.to_string()), &batch.scenario, seed, &r)?;
        }
        Ok(RunRecord::from_result(i, seed, &r, window))
    })?;
    let runs = records.into_iter().collect::<Result<Vec<_>, _>>()?;
    let summary = BatchSummary::from_runs(&batch.scenario.label, runs);
    if let Some(dir) = &batch.output {
        io::write_json(&dir.join("summary.json"), &summary)?;
    }
    Ok(summary)
}

/// Result of a two-sample test; statistics are `None` when undefined.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: Option<f64>,
    pub df: Option<f64>,
    pub p: Option<f64>,
}

fn sample_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (m, xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0))
}

/// Welch's unequal-variance two-sample t-test, two-sided.
pub fn welch_ttest(x: &[f64], y: &[f64]) -> TTest {
    let undefined = TTest { t: None, df: None, p: None };
    if x.len() < 2 || y.len() < 2 {
        return undefined;
    }
    let (mx, vx) = sample_var(x);
    let (my, vy) = sample_var(y);
    let (nx, ny) = (x.len() as f64, y.len() as f64);
    let (ax, ay) = (vx / nx, vy / ny);
    let se2 = ax + ay;
    if se2 == 0.0 {
        if mx == my {
            return TTest { t: Some(0.0), df: None, p: Some(1.0) };
        }
        return undefined;
    }
    let t = (mx - my) / se2.sqrt();
    let df = se2 * se2 / (ax * ax / (nx - 1.0) + ay * ay / (ny - 1.0));
    let p = StudentsT::new(0.0, 1.0, df).map(|d| 2.0 * (1.0 - d.cdf(t.abs()))).ok();
    TTest { t: Some(t), df: Some(df), p }
}

/// Per-firm Welch test of `variable` between two batches.
pub fn robustness_ttest(
    same: &BatchSummary,
    random: &BatchSummary,
    variable: Variable,
) -> Result<Vec<TTest>, HarnessError> {
    let (a, b) = (same.completed().count(), random.completed().count());
    if a.min(b) < MIN_TTEST_RUNS {
        return Err(HarnessError::TooFewRuns { needed: MIN_TTEST_RUNS, got: a.min(b) });
    }
    if same.firms.len() != random.firms.len() {
        return Err(HarnessError::FirmMismatch(same.firms.len(), random.firms.len()));
    }
    Ok((0..same.firms.len()).map(|i| welch_ttest(&same.values(i, variable), &random.values(i, variable))).collect())
}

/// Steady outcomes around a scheduled shock.
#[derive(Debug, Clone, PartialEq)]
pub struct ShockRun {
    pub shock_period: u64,
    /// Window ending just before the shock.
    pub before: SteadyOutcome,
    /// Window at the end of the run.
    pub after: SteadyOutcome,
    pub result: RunResult,
}

/// Runs a scenario with shock events to its final period.
pub fn run_shock_scenario(scenario: &Scenario, seed: u64) -> Result<ShockRun, HarnessError> {
    let shock_period = scenario.events.iter().map(|e| e.period).min().ok_or(HarnessError::NoShock)?;
    let opts = RunOptions {
        ledgers: LedgerRetention::Last(scenario.economy.steady_state.window),
        stop_at_steady_state: false,
        ..RunOptions::default()
    };
    let result = run_scenario(scenario, seed, &opts)?;
    let w = scenario.economy.steady_state.window;
    let series = &result.series;
    let pre_end = (shock_period.saturating_sub(series.first_period) as usize).min(series.len());
    let before = SteadyOutcome::from_stats(&window_stats(series, pre_end, w));
    let after = SteadyOutcome::from_stats(&trailing_stats(series, w));
    Ok(ShockRun { shock_period, before, after, result })
}

/// Timing and size of a propagation experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropagationSetup {
    pub shock_period: u64,
    /// Periods simulated after the shock.
    pub after: u64,
    /// End a continuation once it has a full steady window of its own.
    pub settle_early: bool,
    pub magnitude: f64,
    pub realizations: usize,
    pub master_seed: u64,
}

impl PropagationSetup {
    pub fn new(realizations: usize, master_seed: u64) -> Self {
        PropagationSetup {
            shock_period: SYNTHETIC_SHOCK_PERIOD,
            after: SYNTHETIC_AFTER_SHOCK,
            settle_early: true,
            magnitude: SHOCK_MAGNITUDE,
            realizations,
            master_seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFault {
    pub realization: usize,
    /// Shock family; `None` for warm-up and baseline faults.
    pub family: Option<String>,
    pub target: Option<usize>,
    pub message: String,
}

/// Effects of one shock family on every target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropagationResult {
    pub family: String,
    /// Per realization, per target.
    pub realizations: Vec<Vec<ShockEffects>>,
    /// Per target, averaged over realizations.
    pub effects: Vec<ShockEffects>,
    pub faults: Vec<CellFault>,
}

struct RealizationOut {
    /// Per family, per target.
    effects: Vec<Vec<Option<ShockEffects>>>,
    faults: Vec<CellFault>,
}

fn continue_for(sim: &mut Simulation, periods: u64, window: usize, settle: bool) -> Result<SteadyOutcome, String> {
    // the series starts fresh, so a steady window never reaches back past the start
    let opts = RunOptions {
        ledgers: LedgerRetention::None,
        stop_at_steady_state: settle,
        earliest_stop: 0,
        series_rows: Some(window),
    };
    let last = sim.period + periods;
    let r = drive(sim, last, &opts, |_| Ok(()));
    match r.fault {
        Some(f) => Err(f),
        None => Ok(SteadyOutcome::from_stats(&trailing_stats(&r.series, window))),
    }
}

fn one_realization(
    base: &Scenario,
    families: &[Family],
    targets: &[usize],
    setup: &PropagationSetup,
    idx: usize,
) -> RealizationOut {
    let seed = derive_seed(setup.master_seed, Stream::BatchMember, idx as u64);
    let w = base.economy.steady_state.window;
    let mut out = RealizationOut { effects: vec![vec![None; targets.len()]; families.len()], faults: Vec::new() };
    let fault = |family: Option<&Family>, target, message: String| CellFault {
        realization: idx,
        family: family.map(|f| f.name().to_string()),
        target,
        message,
    };
    let mut sim = match Simulation::new(base.economy.clone(), seed) {
        Ok(s) => s,
        Err(e) => {
            out.faults.push(fault(None, None, e.to_string()));
            return out;
        }
    };
    let warm = setup.shock_period.saturating_sub(1);
    if let Err(e) = continue_for(&mut sim, warm, w, false) {
        out.faults.push(fault(None, None, e));
        return out;
    }
    let baseline = match continue_for(&mut sim.clone(), setup.after, w, setup.settle_early) {
        Ok(b) => b,
        Err(e) => {
            out.faults.push(fault(None, None, e));
            return out;
        }
    };
    for (f, family) in families.iter().enumerate() {
        for (k, &target) in targets.iter().enumerate() {
            let mut s = sim.clone();
            let event =
                ShockEvent { period: sim.period + 1, target, kind: family.kind(setup.magnitude), revert_after: None };
            let shocked = apply(&event, &mut s.config, &mut s.states)
                .map_err(|e| e.to_string())
                .and_then(|_| continue_for(&mut s, setup.after, w, setup.settle_early));
            match shocked {
                Ok(o) => out.effects[f][k] = Some(ShockEffects::between(target, &baseline, &o)),
                Err(e) => out.faults.push(fault(Some(family), Some(target), e)),
            }
        }
    }
    out
}

/// Shocks every firm in `targets` with each family, once per realization,
/// after a shared warm-up. Baseline and shocked continuations of a
/// realization share their random streams.
pub fn propagation_experiments(
    base: &Scenario,
    families: &[Family],
    targets: &[usize],
    setup: &PropagationSetup,
    parallelism: usize,
) -> Result<Vec<PropagationResult>, HarnessError> {
    base.validate()?;
    let idx: Vec<usize> = (0..setup.realizations).collect();
    let outs = par_map(&idx, parallelism, |&r| one_realization(base, families, targets, setup, r))?;
    let mut results = Vec::new();
    for (f, family) in families.iter().enumerate() {
        let mut per_real = Vec::new();
        let mut faults = Vec::new();
        for o in &outs {
            per_real.push(o.effects[f].iter().flatten().cloned().collect::<Vec<_>>());
            faults
                .extend(o.faults.iter().filter(|c| c.family.as_deref().map_or(true, |x| x == family.name())).cloned());
        }
        let effects = targets
            .iter()
            .filter_map(|&t| {
                let items: Vec<ShockEffects> =
                    per_real.iter().flat_map(|r| r.iter().filter(|e| e.shocked == t).cloned()).collect();
                ShockEffects::average(&items)
            })
            .collect();
        results.push(PropagationResult { family: family.name().to_string(), realizations: per_real, effects, faults });
    }
    Ok(results)
}

/// [`propagation_experiments`] for one family on every firm.
pub fn propagation_experiment(
    base: &Scenario,
    family: Family,
    setup: &PropagationSetup,
    parallelism: usize,
) -> Result<PropagationResult, HarnessError> {
    let targets: Vec<usize> = (0..base.economy.n()).collect();
    let mut r = propagation_experiments(base, &[family], &targets, setup, parallelism)?;
    Ok(r.remove(0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn welch_hand_example() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        let y = [2.0, 4.0, 6.0, 8.0, 10.0];
        // means 3 and 6, variances 2.5 and 10
        let r = welch_ttest(&x, &y);
        let t = -3.0 / (0.5f64 + 2.0).sqrt();
        let df = 2.5f64.powi(2) / (0.25 / 4.0 + 4.0 / 4.0);
        assert!((r.t.unwrap() - t).abs() < 1e-12);
        assert!((r.df.unwrap() - df).abs() < 1e-12);
        // reference value from an independent statistics package
        assert!((r.p.unwrap() - 0.10753119493062718).abs() < 1e-9, "{:?}", r.p);
    }

    #[test]
    fn identical_samples() {
        let x = [1.0, 4.0, 2.0, 8.0];
        let r = welch_ttest(&x, &x);
        assert_eq!(r.t, Some(0.0));
        assert!((r.p.unwrap() - 1.0).abs() < 1e-12);
        let c = [3.0; 4];
        assert_eq!(welch_ttest(&c, &c).p, Some(1.0));
        assert_eq!(welch_ttest(&c, &[4.0; 4]).t, None);
    }

    #[test]
    fn seeds_are_distinct() {
        let s = batch_seeds(9, 1000);
        assert_eq!(s.iter().collect::<HashSet<_>>().len(), 1000);
        assert_eq!(s[..10], batch_seeds(9, 10)[..]);
    }

    #[test]
    fn moments() {
        let m = Moments::of(&[2.0, 4.0]);
        assert_eq!((m.mean, m.sd, m.cv), (3.0, 1.0, Some(1.0 / 3.0)));
        assert_eq!(Moments::of(&[0.0, 0.0]).cv, None);
    }
}
