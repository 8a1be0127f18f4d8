//! Network analytics over technologies and realized flows.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::engine::FirmStats;
use crate::market::FlowLedger;
use crate::technology::TechnologySpec;

/// Which inputs each firm can use. Edge `(i, j)` means `i` buys from `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpliedStructure {
    pub adjacency: Vec<Vec<bool>>,
    pub weights: Vec<Vec<f64>>,
}

impl ImpliedStructure {
    pub fn from_technologies(techs: &[TechnologySpec]) -> Self {
        let weights: Vec<Vec<f64>> = techs.iter().map(|t| t.weights().to_vec()).collect();
        let adjacency = weights.iter().map(|row| row.iter().map(|w| *w > 0.0).collect()).collect();
        ImpliedStructure { adjacency, weights }
    }

    /// Unit weights on every edge.
    pub fn from_adjacency(adjacency: Vec<Vec<bool>>) -> Self {
        let weights = adjacency.iter().map(|row| row.iter().map(|&e| if e { 1.0 } else { 0.0 }).collect()).collect();
        ImpliedStructure { adjacency, weights }
    }

    pub fn n(&self) -> usize {
        self.adjacency.len()
    }

    /// Inputs used by `i`, own good included.
    pub fn in_degree(&self, i: usize) -> usize {
        self.adjacency[i].iter().filter(|e| **e).count()
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (i, row) in self.adjacency.iter().enumerate() {
            for (j, &e) in row.iter().enumerate() {
                if e {
                    out.push((i, j));
                }
            }
        }
        out
    }

    /// Shortest arrow counts from `source` to every firm (`source` itself at 0).
    pub fn distances_from(&self, source: usize) -> Vec<Option<u32>> {
        let n = self.n();
        let mut dist = vec![None; n];
        dist[source] = Some(0);
        let mut queue = VecDeque::from([source]);
        while let Some(u) = queue.pop_front() {
            let du = dist[u].expect("queued nodes are reached");
            for v in 0..n {
                if self.adjacency[u][v] && dist[v].is_none() {
                    dist[v] = Some(du + 1);
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    /// Longest shortest path over ordered pairs that are connected.
    pub fn diameter(&self) -> Option<u32> {
        (0..self.n()).filter_map(|i| self.distances_from(i).into_iter().flatten().max()).max().filter(|d| *d > 0)
    }
}

/// Direction of travel from a shocked firm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// From the shocked customer towards its suppliers.
    Upstream,
    /// From the shocked supplier towards its customers.
    Downstream,
}

impl Direction {
    pub const ALL: [Direction; 2] = [Direction::Upstream, Direction::Downstream];

    pub fn name(&self) -> &'static str {
        match self {
            Direction::Upstream => "upstream",
            Direction::Downstream => "downstream",
        }
    }
}

/// Distance between a shocked firm and an observed firm.
///
/// Upstream follows buys-from arrows from `shocked` to `observed`;
/// downstream follows them from `observed` to `shocked`. A direct link has
/// distance 1.
pub fn directed_distance(s: &ImpliedStructure, shocked: usize, observed: usize, direction: Direction) -> Option<u32> {
    match direction {
        Direction::Upstream => s.distances_from(shocked)[observed],
        Direction::Downstream => s.distances_from(observed)[shocked],
    }
}

/// `dist[shocked][observed]` for every pair.
pub fn distance_table(s: &ImpliedStructure, direction: Direction) -> Vec<Vec<Option<u32>>> {
    let arrows: Vec<Vec<Option<u32>>> = (0..s.n()).map(|i| s.distances_from(i)).collect();
    match direction {
        Direction::Upstream => arrows,
        Direction::Downstream => (0..s.n()).map(|k| (0..s.n()).map(|i| arrows[i][k]).collect()).collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Measure {
    /// Volume bought from each supplier.
    PurchasedVolume,
    /// Money paid to each supplier.
    Costs,
    /// Volume sold to each customer firm.
    Sales,
}

impl Measure {
    pub fn name(&self) -> &'static str {
        match self {
            Measure::PurchasedVolume => "purchased_volume",
            Measure::Costs => "costs",
            Measure::Sales => "sales",
        }
    }
}

/// Per-period distribution of `firm`'s flows over counterpart firms.
/// `None` marks periods with no flow at all.
pub fn flow_shares(ledgers: &[FlowLedger], firm: usize, measure: Measure) -> Vec<Option<Vec<f64>>> {
    ledgers
        .iter()
        .map(|l| {
            let mut v = vec![0.0; l.n()];
            for p in &l.purchases {
                match measure {
                    Measure::PurchasedVolume if p.buyer == firm => v[p.seller] += p.volume,
                    Measure::Costs if p.buyer == firm => v[p.seller] += p.cost,
                    Measure::Sales if p.seller == firm => v[p.buyer] += p.volume,
                    _ => {}
                }
            }
            let total: f64 = v.iter().sum();
            (total > 0.0).then(|| v.iter().map(|x| x / total).collect())
        })
        .collect()
}

/// Mean share of `counterpart` over the periods where shares are defined.
pub fn mean_share(shares: &[Option<Vec<f64>>], counterpart: usize) -> Option<f64> {
    let defined: Vec<f64> = shares.iter().flatten().map(|s| s[counterpart]).collect();
    (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variable {
    Price,
    Volume,
    Profit,
}

impl Variable {
    pub const ALL: [Variable; 3] = [Variable::Price, Variable::Volume, Variable::Profit];

    pub fn name(&self) -> &'static str {
        match self {
            Variable::Price => "price",
            Variable::Volume => "volume",
            Variable::Profit => "profit",
        }
    }
}

/// Steady means of one run (or an average of runs).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteadyOutcome {
    pub alive: Vec<bool>,
    pub price: Vec<f64>,
    /// Output produced.
    pub volume: Vec<f64>,
    pub profit: Vec<f64>,
}

impl SteadyOutcome {
    pub fn from_stats(stats: &[FirmStats]) -> Self {
        SteadyOutcome {
            alive: stats.iter().map(|s| s.alive).collect(),
            price: stats.iter().map(|s| s.price).collect(),
            volume: stats.iter().map(|s| s.produced).collect(),
            profit: stats.iter().map(|s| s.profit).collect(),
        }
    }

    pub fn get(&self, v: Variable) -> &[f64] {
        match v {
            Variable::Price => &self.price,
            Variable::Volume => &self.volume,
            Variable::Profit => &self.profit,
        }
    }
}

/// `(shocked − baseline)/|baseline|`; undefined for a zero baseline.
pub fn proportional_change(baseline: f64, shocked: f64) -> Option<f64> {
    (baseline != 0.0 && baseline.is_finite() && shocked.is_finite()).then(|| (shocked - baseline) / baseline.abs())
}

/// Proportional changes of every firm between two outcomes. Firms dead in
/// either outcome are undefined.
pub fn outcome_changes(baseline: &SteadyOutcome, shocked: &SteadyOutcome, v: Variable) -> Vec<Option<f64>> {
    let (b, s) = (baseline.get(v), shocked.get(v));
    (0..b.len())
        .map(|i| if baseline.alive[i] && shocked.alive[i] { proportional_change(b[i], s[i]) } else { None })
        .collect()
}

/// Proportional steady-state changes, rows = shocked firm, columns = observed firm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpactMatrix {
    pub n: usize,
    pub variable: Variable,
    pub threshold: f64,
    /// Row-major; `None` where undefined. Rows of firms never shocked are all `None`.
    pub values: Vec<Option<f64>>,
}

pub const DISPLAY_THRESHOLD: f64 = 0.01;

impl ImpactMatrix {
    pub fn get(&self, shocked: usize, observed: usize) -> Option<f64> {
        self.values[shocked * self.n + observed]
    }

    pub fn above_threshold(&self, shocked: usize, observed: usize) -> bool {
        self.get(shocked, observed).is_some_and(|v| v.abs() >= self.threshold)
    }
}

pub fn impact_matrix(
    baseline: &SteadyOutcome,
    shocked: &[(usize, SteadyOutcome)],
    variable: Variable,
    threshold: f64,
) -> ImpactMatrix {
    let n = baseline.price.len();
    let mut values = vec![None; n * n];
    for (k, outcome) in shocked {
        for (i, c) in outcome_changes(baseline, outcome, variable).into_iter().enumerate() {
            values[k * n + i] = c;
        }
    }
    ImpactMatrix { n, variable, threshold, values }
}

/// Proportional changes caused by shocking one firm, for every observed firm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShockEffects {
    pub shocked: usize,
    pub price: Vec<Option<f64>>,
    pub volume: Vec<Option<f64>>,
    pub profit: Vec<Option<f64>>,
}

impl ShockEffects {
    pub fn get(&self, v: Variable) -> &[Option<f64>] {
        match v {
            Variable::Price => &self.price,
            Variable::Volume => &self.volume,
            Variable::Profit => &self.profit,
        }
    }

    pub fn between(shocked: usize, baseline: &SteadyOutcome, outcome: &SteadyOutcome) -> Self {
        ShockEffects {
            shocked,
            price: outcome_changes(baseline, outcome, Variable::Price),
            volume: outcome_changes(baseline, outcome, Variable::Volume),
            profit: outcome_changes(baseline, outcome, Variable::Profit),
        }
    }

    /// Element-wise mean of several realizations, skipping undefined entries.
    pub fn average(items: &[ShockEffects]) -> Option<Self> {
        let first = items.first()?;
        let avg = |v: Variable| -> Vec<Option<f64>> {
            (0..first.get(v).len())
                .map(|i| {
                    let xs: Vec<f64> = items.iter().filter_map(|e| e.get(v)[i]).collect();
                    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
                })
                .collect()
        };
        Some(ShockEffects {
            shocked: first.shocked,
            price: avg(Variable::Price),
            volume: avg(Variable::Volume),
            profit: avg(Variable::Profit),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bucket {
    pub distance: u32,
    pub mean: f64,
    pub mean_abs: f64,
    pub se: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropagationProfile {
    pub direction: Direction,
    pub variable: Variable,
    pub buckets: Vec<Bucket>,
    /// `(distance, count)` of buckets dropped for having too few observations.
    pub excluded: Vec<(u32, usize)>,
}

pub const MIN_BUCKET: usize = 3;

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (m, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

/// Pools changes of non-shocked firms by their distance from the shock.
pub fn propagation_profile(
    effects: &[ShockEffects],
    structure: &ImpliedStructure,
    direction: Direction,
    variable: Variable,
    min_count: usize,
) -> PropagationProfile {
    let table = distance_table(structure, direction);
    let mut pools: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    for e in effects {
        for (i, c) in e.get(variable).iter().enumerate() {
            if i == e.shocked {
                continue;
            }
            if let (Some(d), Some(c)) = (table[e.shocked][i], c) {
                pools.entry(d).or_default().push(*c);
            }
        }
    }
    let mut buckets = Vec::new();
    let mut excluded = Vec::new();
    for (d, xs) in pools {
        if xs.len() < min_count {
            excluded.push((d, xs.len()));
            continue;
        }
        let (mean, se) = mean_se(&xs);
        let abs: Vec<f64> = xs.iter().map(|x| x.abs()).collect();
        buckets.push(Bucket { distance: d, mean, mean_abs: mean_se(&abs).0, se, n: xs.len() });
    }
    PropagationProfile { direction, variable, buckets, excluded }
}

/// Whether realized flows are weighed by value or by volume.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowWeight {
    Value,
    Volume,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeDiscrepancy {
    pub buyer: usize,
    pub supplier: usize,
    pub implied: f64,
    pub realized: f64,
    pub discrepancy: f64,
    pub top_decile: bool,
}

/// Gap between implied input shares and realized inflow shares, per edge,
/// ranked from largest to smallest. Ties keep edge order.
pub fn discrepancy(structure: &ImpliedStructure, ledgers: &[FlowLedger], weight: FlowWeight) -> Vec<EdgeDiscrepancy> {
    let n = structure.n();
    let mut flows = vec![vec![0.0; n]; n];
    for l in ledgers {
        for p in &l.purchases {
            flows[p.buyer][p.seller] += match weight {
                FlowWeight::Value => p.cost,
                FlowWeight::Volume => p.volume,
            };
        }
    }
    let mut out = Vec::new();
    for i in 0..n {
        let wsum: f64 = (0..n).filter(|&j| structure.adjacency[i][j]).map(|j| structure.weights[i][j]).sum();
        let fsum: f64 = (0..n).filter(|&j| structure.adjacency[i][j]).map(|j| flows[i][j]).sum();
        for j in 0..n {
            if !structure.adjacency[i][j] {
                continue;
            }
            let implied = if wsum > 0.0 { structure.weights[i][j] / wsum } else { 0.0 };
            let realized = if fsum > 0.0 { flows[i][j] / fsum } else { 0.0 };
            out.push(EdgeDiscrepancy {
                buyer: i,
                supplier: j,
                implied,
                realized,
                discrepancy: (implied - realized).abs(),
                top_decile: false,
            });
        }
    }
    out.sort_by(|a, b| b.discrepancy.total_cmp(&a.discrepancy));
    let flagged = (out.len() as f64 * 0.1).ceil() as usize;
    out.iter_mut().take(flagged).for_each(|e| e.top_decile = true);
    out
}

/// Pearson correlation; `None` when either variance vanishes.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len();
    if n != y.len() || n < 2 {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiversityRow {
    pub industry: usize,
    /// Inputs used, own good included.
    pub diversity: usize,
    /// Largest gap between demand-shock and supply-shock effects.
    pub gap: f64,
    pub direction: Option<Direction>,
    pub variable: Option<Variable>,
    pub distance: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversityResult {
    pub rows: Vec<DiversityRow>,
    pub r: Option<f64>,
}

/// Mean change per distance for one shocked firm.
fn per_distance(e: &ShockEffects, table: &[Vec<Option<u32>>], v: Variable) -> BTreeMap<u32, f64> {
    let mut pools: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    for (i, c) in e.get(v).iter().enumerate() {
        if i == e.shocked {
            continue;
        }
        if let (Some(d), Some(c)) = (table[e.shocked][i], c) {
            pools.entry(d).or_default().push(*c);
        }
    }
    pools.into_iter().map(|(d, xs)| (d, xs.iter().sum::<f64>() / xs.len() as f64)).collect()
}

/// Relates each industry's input diversity to how differently its demand
/// and supply shocks spread through the network.
pub fn diversity_sensitivity(
    supply: &[ShockEffects],
    demand: &[ShockEffects],
    structure: &ImpliedStructure,
) -> DiversityResult {
    let tables: Vec<(Direction, Vec<Vec<Option<u32>>>)> =
        Direction::ALL.iter().map(|&d| (d, distance_table(structure, d))).collect();
    let mut rows = Vec::new();
    for s in supply {
        let Some(d) = demand.iter().find(|d| d.shocked == s.shocked) else {
            continue;
        };
        let mut best = DiversityRow {
            industry: s.shocked,
            diversity: structure.in_degree(s.shocked),
            gap: 0.0,
            direction: None,
            variable: None,
            distance: None,
        };
        for (dir, table) in &tables {
            for v in Variable::ALL {
                let ps = per_distance(s, table, v);
                let pd = per_distance(d, table, v);
                for (dist, ms) in &ps {
                    if let Some(md) = pd.get(dist) {
                        let gap = (md - ms).abs();
                        if gap > best.gap || best.direction.is_none() {
                            best.gap = gap;
                            best.direction = Some(*dir);
                            best.variable = Some(v);
                            best.distance = Some(*dist);
                        }
                    }
                }
            }
        }
        rows.push(best);
    }
    rows.sort_by_key(|r| r.industry);
    let x: Vec<f64> = rows.iter().map(|r| r.diversity as f64).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.gap).collect();
    DiversityResult { r: pearson(&x, &y), rows }
}
