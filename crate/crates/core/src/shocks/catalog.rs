//! Built-in scenarios.
//!
//! Firm numbers in scenario names are 1-based (`five_shutdown_4` closes the
//! fourth firm, index 3); everything else is 0-based.

use super::generator::{build_economy, generate, EconomyParams, StructureParams};
use super::{Scenario, ShockEvent, ShockKind};
use crate::engine::EconomyConfig;
use crate::learning::{KnowledgeMode, LearningConfig};
use crate::market::DemandSpec;
use crate::rng::{stream_rng, Stream};
use crate::technology::TechnologySpec;

/// Period at which five-firm shocks hit.
pub const FIVE_SHOCK_PERIOD: u64 = 3000;
/// Periods simulated after a five-firm shock.
pub const FIVE_AFTER_SHOCK: u64 = 3000;
pub const TRANSIENT_LENGTH: u64 = 500;
/// Period at which synthetic-economy shocks hit.
pub const SYNTHETIC_SHOCK_PERIOD: u64 = 3000;
pub const SYNTHETIC_AFTER_SHOCK: u64 = 2000;
/// Seed of the generated synthetic and large economies.
pub const GENERATOR_SEED: u64 = 20_240_601;

pub const ELASTICITY_UP: f64 = 1.5;
pub const ELASTICITY_DOWN: f64 = 0.5;
pub const RETURNS_UP: f64 = 1.05;
pub const RETURNS_DOWN: f64 = 0.95;
pub const SWAPPED_RHO: f64 = 4.0;
pub const SHOCK_MAGNITUDE: f64 = 1.2;

fn lin(c: [f64; 3]) -> TechnologySpec {
    TechnologySpec::linear(c.to_vec()).expect("valid coefficients")
}

fn ces(tfp: f64, shares: &[f64], rho: f64, phi: f64) -> TechnologySpec {
    TechnologySpec::ces(tfp, shares.to_vec(), rho, phi).expect("valid CES")
}

fn demand(a: f64, b: f64) -> DemandSpec {
    DemandSpec::new(a, b).expect("valid demand")
}

fn three_firm_demands() -> Vec<DemandSpec> {
    vec![demand(8000.0, 2.0), demand(8000.0, 0.8), demand(15000.0, 1.5)]
}

/// Three firms with linear technologies.
pub fn linear3() -> Scenario {
    let techs = vec![lin([2.0, 5.0, 5.0]), lin([1.0, 5.0, 1.0]), lin([4.0, 0.0, 4.0])];
    Scenario::new(
        "linear3",
        EconomyConfig::new(techs, three_firm_demands(), LearningConfig::new(KnowledgeMode::ZeroKnowledge)),
    )
}

fn ces3_with_phi(label: &str, phi: [f64; 3]) -> Scenario {
    let techs = vec![
        ces(10.0, &[0.12, 0.44, 0.44], -10.0, phi[0]),
        ces(10.0, &[0.14, 0.72, 0.14], 0.001, phi[1]),
        ces(10.0, &[0.5, 0.0, 0.5], 1.0, phi[2]),
    ];
    Scenario::new(
        label,
        EconomyConfig::new(techs, three_firm_demands(), LearningConfig::new(KnowledgeMode::MinimalKnowledge)),
    )
}

/// Complements, near Cobb-Douglas and substitutes.
pub fn ces3() -> Scenario {
    ces3_with_phi("ces3", [1.0, 1.0, 1.0])
}

/// The `ces3` economy with constant, decreasing and increasing returns.
pub fn returns3() -> Scenario {
    ces3_with_phi("returns3", [1.0, 0.9, 1.5])
}

/// Five firms with linear CES technologies.
pub fn five_economy() -> EconomyConfig {
    let shares: [[f64; 5]; 5] = [
        [0.13, 0.31, 0.31, 0.25, 0.0],
        [0.08, 0.38, 0.08, 0.46, 0.0],
        [0.5, 0.0, 0.5, 0.0, 0.0],
        [0.0, 0.0, 0.0, 0.2, 0.8],
        [0.0, 0.0, 0.0, 0.88, 0.12],
    ];
    let techs = shares.iter().map(|a| ces(10.0, a, 1.0, 1.0)).collect();
    let mut demands = three_firm_demands();
    demands.push(demand(11000.0, 2.0));
    demands.push(demand(11000.0, 1.0));
    let mut e = EconomyConfig::new(techs, demands, LearningConfig::new(KnowledgeMode::MinimalKnowledge));
    e.max_periods = FIVE_SHOCK_PERIOD + FIVE_AFTER_SHOCK;
    e
}

pub fn five_baseline() -> Scenario {
    Scenario::new("five_baseline", five_economy())
}

fn five_shock(label: String, target: usize, kind: ShockKind, revert_after: Option<u64>) -> Scenario {
    Scenario::new(label, five_economy()).with_events(vec![ShockEvent {
        period: FIVE_SHOCK_PERIOD,
        target,
        kind,
        revert_after,
    }])
}

/// Sparse fifty-industry economy.
pub fn synthetic50() -> Scenario {
    let mut rng = stream_rng(GENERATOR_SEED, Stream::Generator, 50);
    let g = generate(&StructureParams::synthetic50(), &mut rng).expect("synthetic structure");
    let mut e =
        build_economy(&g, &EconomyParams::default(), LearningConfig::new(KnowledgeMode::MinimalKnowledge), &mut rng);
    e.max_periods = SYNTHETIC_SHOCK_PERIOD + SYNTHETIC_AFTER_SHOCK;
    let mut s = Scenario::new("synthetic50", e);
    s.seed = Some(GENERATOR_SEED);
    s.note = Some("CES with substitution rho = 0.01 and constant returns phi = 1 for every firm".into());
    s
}

/// Shock families of the propagation experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    /// Productivity shock.
    Supply,
    /// Demand-intercept shock.
    Demand,
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::Supply => "supply",
            Family::Demand => "demand",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "supply" => Some(Family::Supply),
            "demand" => Some(Family::Demand),
            _ => None,
        }
    }

    pub fn kind(&self, magnitude: f64) -> ShockKind {
        match self {
            Family::Supply => ShockKind::TfpScale(magnitude),
            Family::Demand => ShockKind::DemandInterceptScale(magnitude),
        }
    }
}

fn synthetic_shock(base: &Scenario, family: Family, target: usize) -> Scenario {
    let mut s = base.clone().with_events(vec![ShockEvent {
        period: SYNTHETIC_SHOCK_PERIOD,
        target,
        kind: family.kind(SHOCK_MAGNITUDE),
        revert_after: None,
    }]);
    s.label = format!("synthetic50_{}_{}", family.name(), target + 1);
    s
}

/// One hundred firms. Heterogeneous economies mix complements, near
/// Cobb-Douglas and substitutes.
pub fn large100(hetero: bool) -> Scenario {
    let mut rng = stream_rng(GENERATOR_SEED, Stream::Generator, 100);
    let g = generate(&StructureParams::large100(), &mut rng).expect("large structure");
    let params = EconomyParams {
        rho_choices: if hetero { vec![-10.0, 0.001, 1.0] } else { vec![0.01] },
        // hubs with normalized demand cannot cover their input bill and take
        // their complement customers down with them
        normalize_intercepts: false,
        ..EconomyParams::default()
    };
    let e = build_economy(&g, &params, LearningConfig::new(KnowledgeMode::MinimalKnowledge), &mut rng);
    let mut s = Scenario::new(if hetero { "large100_hetero" } else { "large100_homo" }, e);
    s.seed = Some(GENERATOR_SEED);
    s
}

/// Every built-in scenario name.
pub fn builtin_names() -> Vec<String> {
    let mut names: Vec<String> =
        ["linear3", "ces3", "returns3", "five_baseline", "five_demand_up", "five_demand_down"].map(String::from).into();
    for dir in ["inc", "dec"] {
        names.extend((1..=5).map(|k| format!("five_returns_{dir}_{k}")));
    }
    names.push("five_techswap4".into());
    names.extend((1..=5).map(|k| format!("five_shutdown_{k}")));
    names.extend((1..=5).map(|k| format!("five_transient_{k}")));
    names.push("synthetic50".into());
    for fam in ["supply", "demand"] {
        names.extend((1..=50).map(|k| format!("synthetic50_{fam}_{k}")));
    }
    names.push("large100_homo".into());
    names.push("large100_hetero".into());
    names
}

fn firm_suffix(name: &str, prefix: &str, n: usize) -> Option<usize> {
    let k: usize = name.strip_prefix(prefix)?.parse().ok()?;
    (1..=n).contains(&k).then_some(k - 1)
}

/// Looks up a built-in scenario by name.
pub fn builtin(name: &str) -> Option<Scenario> {
    let s = match name {
        "linear3" => linear3(),
        "ces3" => ces3(),
        "returns3" => returns3(),
        "five_baseline" => five_baseline(),
        "five_demand_up" => five_shock(name.into(), 3, ShockKind::DemandSlopeScale(ELASTICITY_UP), None),
        "five_demand_down" => five_shock(name.into(), 3, ShockKind::DemandSlopeScale(ELASTICITY_DOWN), None),
        "five_techswap4" => five_shock(name.into(), 3, ShockKind::SetRho(SWAPPED_RHO), None),
        "synthetic50" => synthetic50(),
        "large100_homo" => large100(false),
        "large100_hetero" => large100(true),
        _ => {
            if let Some(k) = firm_suffix(name, "five_returns_inc_", 5) {
                five_shock(name.into(), k, ShockKind::SetPhi(RETURNS_UP), None)
            } else if let Some(k) = firm_suffix(name, "five_returns_dec_", 5) {
                five_shock(name.into(), k, ShockKind::SetPhi(RETURNS_DOWN), None)
            } else if let Some(k) = firm_suffix(name, "five_shutdown_", 5) {
                five_shock(name.into(), k, ShockKind::Shutdown, None)
            } else if let Some(k) = firm_suffix(name, "five_transient_", 5) {
                five_shock(name.into(), k, ShockKind::DemandSlopeScale(ELASTICITY_UP), Some(TRANSIENT_LENGTH))
            } else if let Some(k) = firm_suffix(name, "synthetic50_supply_", 50) {
                synthetic_shock(&synthetic50(), Family::Supply, k)
            } else if let Some(k) = firm_suffix(name, "synthetic50_demand_", 50) {
                synthetic_shock(&synthetic50(), Family::Demand, k)
            } else {
                return None;
            }
        }
    };
    Some(s)
}

/// The whole catalog, in [`builtin_names`] order.
pub fn builtin_scenarios() -> Vec<Scenario> {
    let synthetic = synthetic50();
    builtin_names()
        .iter()
        .map(|name| {
            if let Some(k) = firm_suffix(name, "synthetic50_supply_", 50) {
                synthetic_shock(&synthetic, Family::Supply, k)
            } else if let Some(k) = firm_suffix(name, "synthetic50_demand_", 50) {
                synthetic_shock(&synthetic, Family::Demand, k)
            } else if name == "synthetic50" {
                synthetic.clone()
            } else {
                builtin(name).expect("listed scenario exists")
            }
        })
        .collect()
}
