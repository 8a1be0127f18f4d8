//! Scheduled parameter shocks and scenario files.

pub mod catalog;
pub mod generator;

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{drive, ConfigError, EconomyConfig, FirmState, RunOptions, RunResult, Simulation};
use crate::market::DemandSpec;
use crate::technology::{mutate, TechChange, TechnologySpec};

/// Version tag written into every persisted file.
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ShockError {
    #[error("event targets firm {target}, economy has {n}")]
    TargetOutOfRange { target: usize, n: usize },
    #[error("firm {0} is shut down")]
    DeadTarget(usize),
    #[error("invalid event: {0}")]
    Invalid(String),
    #[error("period {period}: overlapping events on firm {target}")]
    Overlap { period: u64, target: usize },
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("{0}")]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Shock(#[from] ShockError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported format_version {0}")]
    Version(u32),
}

/// Mutation carried by a [`ShockEvent`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "param", rename_all = "snake_case")]
pub enum ShockKind {
    DemandSlopeScale(f64),
    DemandInterceptScale(f64),
    SetPhi(f64),
    SetRho(f64),
    TfpScale(f64),
    Shutdown,
}

impl ShockKind {
    fn parameter(&self) -> &'static str {
        match self {
            ShockKind::DemandSlopeScale(_) => "slope",
            ShockKind::DemandInterceptScale(_) => "intercept",
            ShockKind::SetPhi(_) => "phi",
            ShockKind::SetRho(_) => "rho",
            ShockKind::TfpScale(_) => "tfp",
            ShockKind::Shutdown => "alive",
        }
    }

    fn validate(&self) -> Result<(), ShockError> {
        let bad = |v: f64| !(v.is_finite() && v > 0.0);
        match *self {
            ShockKind::DemandSlopeScale(f) | ShockKind::DemandInterceptScale(f) | ShockKind::TfpScale(f) if bad(f) => {
                Err(ShockError::Invalid(format!("scale factor must be positive, got {f}")))
            }
            ShockKind::SetPhi(v) if bad(v) => Err(ShockError::Invalid(format!("phi must be positive, got {v}"))),
            ShockKind::SetRho(v) if !v.is_finite() || v == 0.0 => {
                Err(ShockError::Invalid(format!("rho must be nonzero, got {v}")))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShockEvent {
    /// Period at whose start the mutation takes effect.
    pub period: u64,
    pub target: usize,
    #[serde(flatten)]
    pub kind: ShockKind,
    #[serde(default)]
    pub revert_after: Option<u64>,
}

/// State needed to undo an applied event exactly.
#[derive(Debug, Clone, PartialEq)]
pub enum Undo {
    Demand(usize, DemandSpec),
    Technology(usize, TechnologySpec),
    Irreversible,
}

/// Applies `event` to the economy. Returns the record that restores the
/// previous parameters bit for bit.
pub fn apply(event: &ShockEvent, config: &mut EconomyConfig, states: &mut [FirmState]) -> Result<Undo, ShockError> {
    let n = config.n();
    let i = event.target;
    if i >= n {
        return Err(ShockError::TargetOutOfRange { target: i, n });
    }
    event.kind.validate()?;
    if !states[i].alive {
        let noop = matches!(
            event.kind,
            ShockKind::DemandSlopeScale(f) | ShockKind::DemandInterceptScale(f) | ShockKind::TfpScale(f) if f == 1.0
        ) || event.kind == ShockKind::Shutdown;
        return if noop { Ok(Undo::Irreversible) } else { Err(ShockError::DeadTarget(i)) };
    }
    let tech_change = |config: &mut EconomyConfig, change: TechChange| -> Result<Undo, ShockError> {
        let old = config.technologies[i].clone();
        config.technologies[i] = mutate(&old, change).map_err(|e| ShockError::Invalid(e.to_string()))?;
        Ok(Undo::Technology(i, old))
    };
    match event.kind {
        ShockKind::DemandSlopeScale(f) => {
            let old = config.demands[i];
            config.demands[i].slope *= f;
            Ok(Undo::Demand(i, old))
        }
        ShockKind::DemandInterceptScale(f) => {
            let old = config.demands[i];
            config.demands[i].intercept *= f;
            Ok(Undo::Demand(i, old))
        }
        ShockKind::SetPhi(v) => tech_change(config, TechChange::SetPhi(v)),
        ShockKind::SetRho(v) => tech_change(config, TechChange::SetRho(v)),
        ShockKind::TfpScale(f) => tech_change(config, TechChange::ScaleTfp(f)),
        ShockKind::Shutdown => {
            states[i].shut_down();
            Ok(Undo::Irreversible)
        }
    }
}

/// Restores the parameters recorded by [`apply`].
pub fn revert(undo: &Undo, config: &mut EconomyConfig) {
    match undo {
        Undo::Demand(i, d) => config.demands[*i] = *d,
        Undo::Technology(i, t) => config.technologies[*i] = t.clone(),
        Undo::Irreversible => {}
    }
}

/// What fires at a scheduled period.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    Apply(usize),
    /// Undo of the event with this index.
    Revert(usize),
}

/// Time-ordered actions for one scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pub events: Vec<ShockEvent>,
    /// `(period, action)`, reverts ahead of applies within a period.
    pub actions: Vec<(u64, Action)>,
}

/// Validates `events` against an economy of `n` firms and orders them.
pub fn schedule(events: &[ShockEvent], n: usize) -> Result<Schedule, ShockError> {
    let mut events = events.to_vec();
    events.sort_by_key(|e| e.period);
    let mut shutdown_at: HashMap<usize, u64> = HashMap::new();
    // (target, parameter) -> end of the active transient window
    let mut transient_until: HashMap<(usize, &'static str), u64> = HashMap::new();
    let mut actions = Vec::new();
    for (k, e) in events.iter().enumerate() {
        if e.target >= n {
            return Err(ShockError::TargetOutOfRange { target: e.target, n });
        }
        e.kind.validate()?;
        if let Some(&t) = shutdown_at.get(&e.target) {
            if e.period >= t {
                return Err(ShockError::DeadTarget(e.target));
            }
        }
        let key = (e.target, e.kind.parameter());
        if let Some(&end) = transient_until.get(&key) {
            if e.period < end {
                return Err(ShockError::Overlap { period: e.period, target: e.target });
            }
        }
        match (e.kind, e.revert_after) {
            (ShockKind::Shutdown, Some(_)) => {
                return Err(ShockError::Invalid("shutdowns cannot revert".into()));
            }
            (ShockKind::Shutdown, None) => {
                shutdown_at.insert(e.target, e.period);
            }
            (_, Some(0)) => return Err(ShockError::Invalid("revert_after must be positive".into())),
            (_, Some(d)) => {
                transient_until.insert(key, e.period + d);
                actions.push((e.period + d, Action::Revert(k)));
            }
            (_, None) => {}
        }
        actions.push((e.period, Action::Apply(k)));
    }
    // a revert cannot land on a firm that has shut down in the meantime
    for &(p, action) in &actions {
        if let Action::Revert(k) = action {
            let target = events[k].target;
            if shutdown_at.get(&target).is_some_and(|&t| t <= p) {
                return Err(ShockError::DeadTarget(target));
            }
        }
    }
    actions.sort_by_key(|&(p, a)| (p, matches!(a, Action::Apply(_))));
    Ok(Schedule { events, actions })
}

/// Fires scheduled actions as a run advances.
#[derive(Debug, Clone)]
pub struct ScheduleRunner {
    schedule: Schedule,
    undo: Vec<Option<Undo>>,
    cursor: usize,
}

impl ScheduleRunner {
    pub fn new(schedule: Schedule) -> Self {
        let undo = vec![None; schedule.events.len()];
        ScheduleRunner { schedule, undo, cursor: 0 }
    }

    /// Fires every action due at the start of the next period of `sim`.
    pub fn fire(&mut self, sim: &mut Simulation) -> Result<(), ShockError> {
        let next = sim.period + 1;
        while let Some(&(p, action)) = self.schedule.actions.get(self.cursor) {
            if p > next {
                break;
            }
            self.cursor += 1;
            if p < next {
                continue;
            }
            match action {
                Action::Apply(k) => {
                    let u = apply(&self.schedule.events[k], &mut sim.config, &mut sim.states)?;
                    self.undo[k] = Some(u);
                }
                Action::Revert(k) => {
                    if let Some(u) = self.undo[k].take() {
                        revert(&u, &mut sim.config);
                    }
                }
            }
        }
        Ok(())
    }

    /// Period of the last scheduled action.
    pub fn last_action_period(&self) -> Option<u64> {
        self.schedule.actions.last().map(|(p, _)| *p)
    }
}

/// An economy plus its shock timeline.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub label: String,
    pub economy: EconomyConfig,
    pub events: Vec<ShockEvent>,
    /// Seed used to build the economy, when generated.
    pub seed: Option<u64>,
    /// Periods after the last action before a run may stop early.
    pub settle: u64,
    pub note: Option<String>,
}

pub const DEFAULT_SETTLE: u64 = 1000;

impl Scenario {
    pub fn new(label: impl Into<String>, economy: EconomyConfig) -> Self {
        Scenario { label: label.into(), economy, events: Vec::new(), seed: None, settle: DEFAULT_SETTLE, note: None }
    }

    pub fn with_events(mut self, events: Vec<ShockEvent>) -> Self {
        self.events = events;
        self
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        self.economy.validate()?;
        schedule(&self.events, self.economy.n())?;
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&ScenarioFile::from(self)).expect("scenario serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let file: ScenarioFile = serde_json::from_str(text)?;
        if file.format_version != FORMAT_VERSION {
            return Err(ScenarioError::Version(file.format_version));
        }
        let s = Scenario {
            label: file.meta.label,
            economy: file.economy,
            events: file.events,
            seed: file.meta.seed,
            settle: file.meta.settle.unwrap_or(DEFAULT_SETTLE),
            note: file.meta.note,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), ScenarioError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ScenarioMeta {
    label: String,
    #[serde(default)]
    seed: Option<u64>,
    #[serde(default)]
    settle: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    note: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ScenarioFile {
    format_version: u32,
    economy: EconomyConfig,
    #[serde(default)]
    events: Vec<ShockEvent>,
    meta: ScenarioMeta,
}

impl From<&Scenario> for ScenarioFile {
    fn from(s: &Scenario) -> Self {
        ScenarioFile {
            format_version: FORMAT_VERSION,
            economy: s.economy.clone(),
            events: s.events.clone(),
            meta: ScenarioMeta { label: s.label.clone(), seed: s.seed, settle: Some(s.settle), note: s.note.clone() },
        }
    }
}

/// Runs `scenario` with its shock timeline. Early stopping at steady state
/// is held off until `settle` periods after the last scheduled action.
pub fn run_scenario(scenario: &Scenario, seed: u64, opts: &RunOptions) -> Result<RunResult, ScenarioError> {
    let sched = schedule(&scenario.events, scenario.economy.n())?;
    let mut sim = Simulation::new(scenario.economy.clone(), seed)?;
    let mut runner = ScheduleRunner::new(sched);
    let mut opts = opts.clone();
    if let Some(last) = runner.last_action_period() {
        opts.earliest_stop = opts.earliest_stop.max(last + scenario.settle);
    }
    let last = scenario.economy.max_periods;
    Ok(drive(&mut sim, last, &opts, |sim| runner.fire(sim).map_err(|e| e.to_string())))
}
