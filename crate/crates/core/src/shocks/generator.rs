//! Random sparse economies whose input counts follow a truncated power law.
//!
//! Each firm draws its number of outside suppliers from `P(k) ∝ k^-γ` on
//! `[min_inputs, max_inputs]`, picks them preferentially (popular suppliers
//! attract more customers) and always uses its own good. Draws repeat until
//! the structure meets the requested statistics.

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::LogNormal;
use thiserror::Error;

use crate::engine::EconomyConfig;
use crate::learning::LearningConfig;
use crate::market::DemandSpec;
use crate::netmetrics::ImpliedStructure;
use crate::technology::TechnologySpec;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeneratorError {
    #[error("no structure met the targets within {0} attempts")]
    Exhausted(usize),
    #[error("invalid generator parameters: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct StructureParams {
    pub n: usize,
    pub exponent: f64,
    /// Bounds on the number of outside suppliers per firm.
    pub min_inputs: usize,
    pub max_inputs: usize,
    /// Edge count including self-loops and its relative tolerance.
    pub edges: Option<(usize, f64)>,
    /// Mean number of outside suppliers and its absolute tolerance.
    pub mean_inputs: Option<(f64, f64)>,
    pub diameter: Option<u32>,
    /// Exact largest number of outside suppliers.
    pub largest_inputs: Option<usize>,
    pub max_attempts: usize,
}

impl StructureParams {
    /// Fifty industries, about 249 potential links, diameter 6.
    pub fn synthetic50() -> Self {
        StructureParams {
            n: 50,
            exponent: 2.2,
            min_inputs: 2,
            max_inputs: 15,
            edges: Some((249, 0.1)),
            mean_inputs: Some((3.98, 0.5)),
            diameter: Some(6),
            largest_inputs: Some(15),
            max_attempts: 200_000,
        }
    }

    /// One hundred industries drawn from the same law, no shape targets.
    pub fn large100() -> Self {
        StructureParams {
            n: 100,
            edges: None,
            mean_inputs: Some((3.98, 0.5)),
            diameter: None,
            largest_inputs: None,
            ..Self::synthetic50()
        }
    }
}

/// Outside suppliers of every firm, sorted.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedStructure {
    pub suppliers: Vec<Vec<usize>>,
    pub attempts: usize,
}

impl GeneratedStructure {
    pub fn n(&self) -> usize {
        self.suppliers.len()
    }

    /// Edge count including one self-loop per firm.
    pub fn edge_count(&self) -> usize {
        self.n() + self.suppliers.iter().map(Vec::len).sum::<usize>()
    }

    pub fn mean_inputs(&self) -> f64 {
        self.suppliers.iter().map(Vec::len).sum::<usize>() as f64 / self.n() as f64
    }

    pub fn largest_inputs(&self) -> usize {
        self.suppliers.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// Buyer-major adjacency including self-loops.
    pub fn adjacency(&self) -> Vec<Vec<bool>> {
        let n = self.n();
        let mut adj = vec![vec![false; n]; n];
        for (i, s) in self.suppliers.iter().enumerate() {
            adj[i][i] = true;
            for &j in s {
                adj[i][j] = true;
            }
        }
        adj
    }
}

fn draw_once<R: Rng>(p: &StructureParams, rng: &mut R) -> Vec<Vec<usize>> {
    let ks: Vec<usize> = (p.min_inputs..=p.max_inputs).collect();
    let law = WeightedIndex::new(ks.iter().map(|&k| (k as f64).powf(-p.exponent))).expect("positive weights");
    let mut popularity = vec![1.0f64; p.n];
    let mut order: Vec<usize> = (0..p.n).collect();
    order.shuffle(rng);
    let mut suppliers = vec![Vec::new(); p.n];
    for &i in &order {
        let k = ks[law.sample(rng)].min(p.n - 1);
        let mut chosen = Vec::with_capacity(k);
        let mut w = popularity.clone();
        w[i] = 0.0;
        for _ in 0..k {
            let pick = WeightedIndex::new(&w).expect("a candidate remains").sample(rng);
            w[pick] = 0.0;
            chosen.push(pick);
        }
        for &j in &chosen {
            popularity[j] += 1.0;
        }
        chosen.sort_unstable();
        suppliers[i] = chosen;
    }
    suppliers
}

/// Draws structures until one satisfies every target in `p`.
pub fn generate<R: Rng>(p: &StructureParams, rng: &mut R) -> Result<GeneratedStructure, GeneratorError> {
    if p.n < 2 || p.min_inputs == 0 || p.min_inputs > p.max_inputs {
        return Err(GeneratorError::Invalid(format!("{p:?}")));
    }
    for attempt in 1..=p.max_attempts {
        let g = GeneratedStructure { suppliers: draw_once(p, rng), attempts: attempt };
        if let Some((target, tol)) = p.edges {
            if (g.edge_count() as f64 - target as f64).abs() > tol * target as f64 {
                continue;
            }
        }
        if let Some((mean, tol)) = p.mean_inputs {
            if (g.mean_inputs() - mean).abs() > tol {
                continue;
            }
        }
        if let Some(k) = p.largest_inputs {
            if g.largest_inputs() != k {
                continue;
            }
        }
        if let Some(d) = p.diameter {
            if ImpliedStructure::from_adjacency(g.adjacency()).diameter() != Some(d) {
                continue;
            }
        }
        return Ok(g);
    }
    Err(GeneratorError::Exhausted(p.max_attempts))
}

/// Parameters turning a structure into an economy.
#[derive(Debug, Clone, PartialEq)]
pub struct EconomyParams {
    pub tfp: f64,
    /// Substitution parameter of each firm, drawn uniformly from this list.
    pub rho_choices: Vec<f64>,
    pub phi: f64,
    pub slope: f64,
    pub intercept_range: (f64, f64),
    /// Divide each sampled intercept by the number of inputs, own good included.
    pub normalize_intercepts: bool,
    /// Log-scale deviation of the raw input shares.
    pub share_sigma: f64,
}

impl Default for EconomyParams {
    fn default() -> Self {
        EconomyParams {
            tfp: 100.0,
            rho_choices: vec![0.01],
            phi: 1.0,
            slope: 10.0,
            intercept_range: (1000.0, 15000.0),
            normalize_intercepts: true,
            share_sigma: 1.0,
        }
    }
}

/// CES economy on `g`.
pub fn build_economy<R: Rng>(
    g: &GeneratedStructure,
    p: &EconomyParams,
    learning: LearningConfig,
    rng: &mut R,
) -> EconomyConfig {
    let n = g.n();
    let shares = LogNormal::new(0.0, p.share_sigma).expect("valid sigma");
    let mut technologies = Vec::with_capacity(n);
    let mut demands = Vec::with_capacity(n);
    for i in 0..n {
        let mut a = vec![0.0; n];
        a[i] = shares.sample(rng);
        for &j in &g.suppliers[i] {
            a[j] = shares.sample(rng);
        }
        let rho = p.rho_choices[rng.gen_range(0..p.rho_choices.len())];
        technologies.push(TechnologySpec::ces(p.tfp, a, rho, p.phi).expect("valid generated technology"));
        let inputs = (g.suppliers[i].len() + 1) as f64;
        let mut intercept = rng.gen_range(p.intercept_range.0..=p.intercept_range.1);
        if p.normalize_intercepts {
            intercept /= inputs;
        }
        demands.push(DemandSpec::new(intercept, p.slope).expect("valid generated demand"));
    }
    EconomyConfig::new(technologies, demands, learning)
}
