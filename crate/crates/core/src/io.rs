//! CSV and JSON persistence.
//!
//! Every CSV starts with a `# format_version: N` line followed by a header
//! row. JSON documents carry a `format_version` field.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{trailing_stats, FirmStats, RunResult, Series, Termination};
use crate::market::{FlowLedger, Purchase};
use crate::netmetrics::{DiversityResult, EdgeDiscrepancy, FlowWeight, ImpactMatrix, Measure, PropagationProfile};
use crate::shocks::Scenario;

pub const FORMAT_VERSION: u32 = 1;
const VERSION_PREFIX: &str = "# format_version: ";

#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("{path}: unsupported or missing format_version ({found})")]
    Version { path: String, found: String },
    #[error("{0}")]
    Invalid(String),
}

impl From<IoError> for std::io::Error {
    fn from(e: IoError) -> Self {
        match e {
            IoError::Io(e) => e,
            other => std::io::Error::other(other.to_string()),
        }
    }
}

/// Writes `rows` as a versioned CSV.
pub fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<(), IoError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut file = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(file, "{VERSION_PREFIX}{FORMAT_VERSION}")?;
    let mut w = csv::Writer::from_writer(file);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a versioned CSV written by [`write_csv`].
pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, IoError> {
    let mut reader = BufReader::new(fs::File::open(path)?);
    let mut first = String::new();
    reader.read_line(&mut first)?;
    let found = first.trim_end().to_string();
    if found != format!("{VERSION_PREFIX}{FORMAT_VERSION}") {
        return Err(IoError::Version { path: path.display().to_string(), found });
    }
    let mut r = csv::Reader::from_reader(reader);
    Ok(r.deserialize().collect::<Result<Vec<T>, _>>()?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> std::io::Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut text = serde_json::to_string_pretty(value).map_err(std::io::Error::other)?;
    text.push('\n');
    fs::write(path, text)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeseriesRow {
    pub period: u64,
    pub firm: usize,
    pub price: f64,
    pub produced: f64,
    /// Residual output offered to consumers.
    pub residual_sold: f64,
    pub market_sold: f64,
    pub profit: f64,
    pub consistency: f64,
    pub alive: bool,
}

pub fn timeseries_rows(s: &Series) -> Vec<TimeseriesRow> {
    let mut rows = Vec::with_capacity(s.price.len());
    for r in 0..s.len() {
        for i in 0..s.n {
            let k = r * s.n + i;
            rows.push(TimeseriesRow {
                period: s.first_period + r as u64,
                firm: i,
                price: s.price[k],
                produced: s.produced[k],
                residual_sold: s.residual[k],
                market_sold: s.market_sold[k],
                profit: s.profit[k],
                consistency: s.consistency[k],
                alive: s.alive[k],
            });
        }
    }
    rows
}

/// Rebuilds a series from period-major, firm-ordered rows.
pub fn series_from_rows(rows: &[TimeseriesRow]) -> Result<Series, IoError> {
    let Some(first) = rows.first() else {
        return Ok(Series::default());
    };
    let n = rows.iter().map(|r| r.firm).max().unwrap_or(0) + 1;
    if rows.len() % n != 0 {
        return Err(IoError::Invalid(format!("{} rows is not a multiple of {n} firms", rows.len())));
    }
    let mut s = Series::new(n, first.period);
    for (k, r) in rows.iter().enumerate() {
        if r.firm != k % n || r.period != first.period + (k / n) as u64 {
            return Err(IoError::Invalid(format!("row {k} out of order")));
        }
        s.price.push(r.price);
        s.produced.push(r.produced);
        s.residual.push(r.residual_sold);
        s.market_sold.push(r.market_sold);
        s.profit.push(r.profit);
        s.consistency.push(r.consistency);
        s.alive.push(r.alive);
    }
    Ok(s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowRow {
    pub period: u64,
    pub buyer: usize,
    pub seller: usize,
    pub volume: f64,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketRow {
    pub period: u64,
    pub seller: usize,
    pub market_volume: f64,
    pub market_revenue: f64,
    pub unsold: f64,
    pub produced: f64,
    pub offered: f64,
}

pub fn flow_rows(ledgers: &[FlowLedger]) -> (Vec<FlowRow>, Vec<MarketRow>) {
    let mut flows = Vec::new();
    let mut market = Vec::new();
    for l in ledgers {
        for p in &l.purchases {
            flows.push(FlowRow { period: l.period, buyer: p.buyer, seller: p.seller, volume: p.volume, cost: p.cost });
        }
        for j in 0..l.n() {
            market.push(MarketRow {
                period: l.period,
                seller: j,
                market_volume: l.market_volume[j],
                market_revenue: l.market_revenue[j],
                unsold: l.unsold[j],
                produced: l.produced[j],
                offered: l.offered[j],
            });
        }
    }
    (flows, market)
}

/// Rebuilds ledgers; every period needs a full set of market rows.
pub fn ledgers_from_rows(flows: &[FlowRow], market: &[MarketRow]) -> Result<Vec<FlowLedger>, IoError> {
    let n = market.iter().map(|r| r.seller).max().map_or(0, |m| m + 1);
    let mut ledgers: Vec<FlowLedger> = Vec::new();
    for r in market {
        if r.seller == 0 {
            ledgers.push(FlowLedger::empty(r.period, n));
        }
        let l = ledgers
            .last_mut()
            .filter(|l| l.period == r.period)
            .ok_or_else(|| IoError::Invalid(format!("market rows of period {} out of order", r.period)))?;
        l.market_volume[r.seller] = r.market_volume;
        l.market_revenue[r.seller] = r.market_revenue;
        l.unsold[r.seller] = r.unsold;
        l.produced[r.seller] = r.produced;
        l.offered[r.seller] = r.offered;
    }
    let index: HashMap<u64, usize> = ledgers.iter().enumerate().map(|(k, l)| (l.period, k)).collect();
    for f in flows {
        let l = index
            .get(&f.period)
            .map(|&k| &mut ledgers[k])
            .ok_or_else(|| IoError::Invalid(format!("flow in period {} has no market rows", f.period)))?;
        l.purchases.push(Purchase { buyer: f.buyer, seller: f.seller, volume: f.volume, cost: f.cost });
    }
    Ok(ledgers)
}

/// `summary.json` of a single run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub format_version: u32,
    pub label: String,
    pub seed: u64,
    pub termination: Termination,
    pub steady_state_period: Option<u64>,
    pub periods: u64,
    pub fault: Option<String>,
    pub window: usize,
    /// Trailing-window statistics of the recorded series.
    pub stats: Vec<FirmStats>,
}

impl RunSummary {
    pub fn new(scenario: &Scenario, seed: u64, r: &RunResult) -> Self {
        let window = scenario.economy.steady_state.window;
        RunSummary {
            format_version: FORMAT_VERSION,
            label: scenario.label.clone(),
            seed,
            termination: r.termination,
            steady_state_period: r.steady_state_period,
            periods: r.periods,
            fault: r.fault.clone(),
            window,
            stats: trailing_stats(&r.series, window),
        }
    }
}

pub const TIMESERIES_FILE: &str = "timeseries.csv";
pub const FLOWS_FILE: &str = "flows.csv";
pub const MARKET_FILE: &str = "market.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CONFIG_FILE: &str = "config.json";

/// Writes the time series, ledgers, summary and resolved scenario of a run.
pub fn write_run(dir: &Path, scenario: &Scenario, seed: u64, r: &RunResult) -> Result<(), IoError> {
    fs::create_dir_all(dir)?;
    write_csv(&dir.join(TIMESERIES_FILE), timeseries_rows(&r.series))?;
    let (flows, market) = flow_rows(&r.ledgers);
    write_csv(&dir.join(FLOWS_FILE), flows)?;
    write_csv(&dir.join(MARKET_FILE), market)?;
    write_json(&dir.join(SUMMARY_FILE), &RunSummary::new(scenario, seed, r))?;
    fs::write(dir.join(CONFIG_FILE), scenario.to_json() + "\n")?;
    Ok(())
}

/// Persisted run, as read back from a run directory.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredRun {
    pub scenario: Scenario,
    pub summary: RunSummary,
    pub series: Series,
    pub ledgers: Vec<FlowLedger>,
}

pub fn read_run(dir: &Path) -> Result<StoredRun, IoError> {
    let summary: RunSummary = read_json(&dir.join(SUMMARY_FILE))?;
    if summary.format_version != FORMAT_VERSION {
        return Err(IoError::Version {
            path: dir.join(SUMMARY_FILE).display().to_string(),
            found: summary.format_version.to_string(),
        });
    }
    let scenario = Scenario::load(&dir.join(CONFIG_FILE)).map_err(|e| IoError::Invalid(e.to_string()))?;
    let series = series_from_rows(&read_csv(&dir.join(TIMESERIES_FILE))?)?;
    let ledgers = ledgers_from_rows(&read_csv(&dir.join(FLOWS_FILE))?, &read_csv(&dir.join(MARKET_FILE))?)?;
    Ok(StoredRun { scenario, summary, series, ledgers })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpactRow {
    pub shocked: usize,
    pub observed: usize,
    pub variable: String,
    pub value: Option<f64>,
    pub above_threshold: bool,
}

pub fn impact_rows(m: &ImpactMatrix) -> Vec<ImpactRow> {
    let mut rows = Vec::new();
    for k in 0..m.n {
        for i in 0..m.n {
            rows.push(ImpactRow {
                shocked: k,
                observed: i,
                variable: m.variable.name().to_string(),
                value: m.get(k, i),
                above_threshold: m.above_threshold(k, i),
            });
        }
    }
    rows
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropagationRow {
    pub family: String,
    pub direction: String,
    pub variable: String,
    pub distance: u32,
    pub mean: f64,
    pub mean_abs: f64,
    pub se: f64,
    pub n: usize,
}

pub fn propagation_rows(family: &str, profiles: &[PropagationProfile]) -> Vec<PropagationRow> {
    profiles
        .iter()
        .flat_map(|p| {
            p.buckets.iter().map(move |b| PropagationRow {
                family: family.to_string(),
                direction: p.direction.name().to_string(),
                variable: p.variable.name().to_string(),
                distance: b.distance,
                mean: b.mean,
                mean_abs: b.mean_abs,
                se: b.se,
                n: b.n,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TernaryRow {
    pub period: u64,
    pub firm: usize,
    pub counterpart: usize,
    pub measure: String,
    pub share: Option<f64>,
}

/// One row per counterpart and period; an undefined period leaves `share` empty.
pub fn ternary_rows(ledgers: &[FlowLedger], firm: usize, measure: Measure) -> Vec<TernaryRow> {
    let shares = crate::netmetrics::flow_shares(ledgers, firm, measure);
    let mut rows = Vec::new();
    for (l, s) in ledgers.iter().zip(shares) {
        for j in 0..l.n() {
            rows.push(TernaryRow {
                period: l.period,
                firm,
                counterpart: j,
                measure: measure.name().to_string(),
                share: s.as_ref().map(|v| v[j]),
            });
        }
    }
    rows
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscrepancyRow {
    pub rank: usize,
    pub buyer: usize,
    pub supplier: usize,
    pub weight: String,
    pub implied: f64,
    pub realized: f64,
    pub discrepancy: f64,
    pub top_decile: bool,
}

pub fn discrepancy_rows(edges: &[EdgeDiscrepancy], weight: FlowWeight) -> Vec<DiscrepancyRow> {
    let weight = match weight {
        FlowWeight::Value => "value",
        FlowWeight::Volume => "volume",
    };
    edges
        .iter()
        .enumerate()
        .map(|(k, e)| DiscrepancyRow {
            rank: k + 1,
            buyer: e.buyer,
            supplier: e.supplier,
            weight: weight.to_string(),
            implied: e.implied,
            realized: e.realized,
            discrepancy: e.discrepancy,
            top_decile: e.top_decile,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversityCsvRow {
    pub industry: usize,
    pub diversity: usize,
    pub gap: f64,
    pub direction: Option<String>,
    pub variable: Option<String>,
    pub distance: Option<u32>,
}

pub fn diversity_rows(d: &DiversityResult) -> Vec<DiversityCsvRow> {
    d.rows
        .iter()
        .map(|r| DiversityCsvRow {
            industry: r.industry,
            diversity: r.diversity,
            gap: r.gap,
            direction: r.direction.map(|x| x.name().to_string()),
            variable: r.variable.map(|x| x.name().to_string()),
            distance: r.distance,
        })
        .collect()
}
