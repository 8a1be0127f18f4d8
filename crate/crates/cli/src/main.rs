use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use prodnet::engine::{trailing_stats, InitialConditions, RunOptions, Termination};
use prodnet::harness::{
    batch_seeds, default_parallelism, propagation_experiments, robustness_ttest, run_batch, run_shock_scenario, Batch,
    HarnessError, PropagationSetup,
};
use prodnet::io::{self, write_csv, write_json};
use prodnet::netmetrics::{
    discrepancy, diversity_sensitivity, outcome_changes, propagation_profile, Direction, FlowWeight, ImpliedStructure,
    Measure, SteadyOutcome, Variable, MIN_BUCKET,
};
use prodnet::shocks::catalog::{builtin, builtin_names, Family};
use prodnet::shocks::{run_scenario, Scenario, ShockEvent};
use serde::Serialize;

/// Production-network simulator.
#[derive(Parser, Debug)]
#[command(name = "prodnet", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one scenario with one seed.
    Run(RunArgs),
    /// Run one scenario over many seeds.
    Batch(BatchArgs),
    /// Run a scenario with an extra shock event and report before/after changes.
    Shock(ShockArgs),
    /// Shock every industry of an economy, one family at a time.
    Propagate(PropagateArgs),
    /// Compute network metrics from a stored run.
    Analyze(AnalyzeArgs),
    /// List the built-in scenarios.
    Scenarios,
}

#[derive(Args, Debug)]
#[group(required = true, multiple = false)]
struct Source {
    /// Built-in scenario name.
    #[arg(long)]
    scenario: Option<String>,
    /// Scenario JSON file.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    source: Source,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Override the period limit.
    #[arg(long)]
    periods: Option<u64>,
    /// Keep running after steady state is reached.
    #[arg(long)]
    no_early_stop: bool,
    #[arg(long, default_value = "runs")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct BatchArgs {
    #[command(flatten)]
    source: Source,
    /// Master seed the run seeds are derived from.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of runs.
    #[arg(long, conflicts_with = "seed_list")]
    seeds: Option<usize>,
    /// Explicit comma-separated run seeds.
    #[arg(long, value_delimiter = ',')]
    seed_list: Option<Vec<u64>>,
    /// Worker count (default: PRODNET_PARALLELISM, else all cores).
    #[arg(long)]
    parallel: Option<usize>,
    #[arg(long)]
    periods: Option<u64>,
    /// Start every run from randomized prices and plans.
    #[arg(long)]
    random_ic: bool,
    /// Also run the batch from randomized initial conditions and t-test the two.
    #[arg(long, conflicts_with = "random_ic")]
    robustness: bool,
    #[arg(long, default_value = "runs")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ShockArgs {
    #[command(flatten)]
    source: Source,
    /// Shock event as JSON, or @FILE.
    #[arg(long)]
    event: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "runs")]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FamilyArg {
    Supply,
    Demand,
}

impl From<FamilyArg> for Family {
    fn from(f: FamilyArg) -> Self {
        match f {
            FamilyArg::Supply => Family::Supply,
            FamilyArg::Demand => Family::Demand,
        }
    }
}

#[derive(Args, Debug)]
struct PropagateArgs {
    /// Built-in scenario name or scenario JSON file.
    #[arg(long, default_value = "synthetic50")]
    economy: String,
    /// Shock family; repeat for both (default both).
    #[arg(long, value_enum)]
    family: Vec<FamilyArg>,
    #[arg(long, default_value_t = 30)]
    realizations: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Comma-separated industries to shock (default all).
    #[arg(long, value_delimiter = ',')]
    targets: Option<Vec<usize>>,
    #[arg(long)]
    shock_period: Option<u64>,
    /// Periods simulated after the shock.
    #[arg(long)]
    after: Option<u64>,
    #[arg(long)]
    parallel: Option<usize>,
    #[arg(long, default_value = "runs")]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MeasureArg {
    PurchasedVolume,
    Costs,
    Sales,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum WeightArg {
    Value,
    Volume,
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    /// Run directory written by `run` or `batch`.
    #[arg(long = "in", value_name = "DIR")]
    input: PathBuf,
    /// Write trailing-window statistics (default when nothing else is selected).
    #[arg(long)]
    stats: bool,
    /// Write flow shares of this firm per period.
    #[arg(long, value_name = "FIRM")]
    ternary: Option<usize>,
    #[arg(long, value_enum, default_value = "purchased-volume")]
    measure: MeasureArg,
    /// Write the implied-versus-realized discrepancy ranking.
    #[arg(long)]
    discrepancy: bool,
    #[arg(long, value_enum, default_value = "value")]
    weight: WeightArg,
    /// Output directory (default: the input directory).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug)]
enum CliError {
    Config(String),
    Runtime(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Scenario(_) | HarnessError::DuplicateSeed(_) | HarnessError::NoShock => {
                CliError::Config(e.to_string())
            }
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

fn runtime<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Runtime(e.to_string())
}

fn config<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Config(e.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match &e {
                CliError::Config(m) => eprintln!("error: {m}"),
                CliError::Runtime(m) => eprintln!("fault: {m}"),
            }
            ExitCode::from(e.code())
        }
    }
}

fn dispatch(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Run(a) => run(a),
        Command::Batch(a) => batch(a),
        Command::Shock(a) => shock(a),
        Command::Propagate(a) => propagate(a),
        Command::Analyze(a) => analyze(a),
        Command::Scenarios => {
            for name in builtin_names() {
                println!("{name}");
            }
            Ok(())
        }
    }
}

fn named(name: &str) -> Result<Scenario, CliError> {
    builtin(name)
        .ok_or_else(|| CliError::Config(format!("unknown scenario '{name}'; valid: {}", builtin_names().join(", "))))
}

fn load(source: &Source) -> Result<Scenario, CliError> {
    match (&source.scenario, &source.config) {
        (Some(name), _) => named(name),
        (None, Some(path)) => Scenario::load(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display()))),
        (None, None) => Err(CliError::Config("one of --scenario or --config is required".into())),
    }
}

fn with_periods(mut s: Scenario, periods: Option<u64>) -> Result<Scenario, CliError> {
    if let Some(p) = periods {
        if p == 0 {
            return Err(CliError::Config("--periods must be positive".into()));
        }
        s.economy.max_periods = p;
    }
    Ok(s)
}

fn parallelism(k: Option<usize>) -> Result<usize, CliError> {
    match k {
        Some(0) => Err(CliError::Config("--parallel must be positive".into())),
        Some(k) => Ok(k),
        None => Ok(default_parallelism()),
    }
}

fn run(a: RunArgs) -> Result<(), CliError> {
    let s = with_periods(load(&a.source)?, a.periods)?;
    let opts = RunOptions { stop_at_steady_state: !a.no_early_stop, ..RunOptions::default() };
    let r = run_scenario(&s, a.seed, &opts).map_err(config)?;
    let dir = a.out.join(&s.label).join(a.seed.to_string());
    io::write_run(&dir, &s, a.seed, &r).map_err(runtime)?;
    println!("{} seed {}: {:?} after {} periods -> {}", s.label, a.seed, r.termination, r.periods, dir.display());
    match r.fault {
        Some(f) => Err(CliError::Runtime(f)),
        None => Ok(()),
    }
}

#[derive(Serialize)]
struct TTestFile {
    format_version: u32,
    same_ic: String,
    random_ic: String,
    variable: Variable,
    firm: usize,
    t: Option<f64>,
    df: Option<f64>,
    p: Option<f64>,
}

fn batch(a: BatchArgs) -> Result<(), CliError> {
    let mut s = with_periods(load(&a.source)?, a.periods)?;
    let seeds = match (&a.seed_list, a.seeds, a.seed) {
        (Some(list), _, _) => list.clone(),
        (None, Some(n), Some(master)) => batch_seeds(master, n),
        (None, Some(_), None) => return Err(CliError::Config("batch needs --seed when using --seeds".into())),
        (None, None, _) => return Err(CliError::Config("batch needs --seeds N or --seed-list".into())),
    };
    if seeds.is_empty() {
        return Err(CliError::Config("no seeds given".into()));
    }
    if a.random_ic {
        s.economy.initial_conditions = InitialConditions::Randomized;
    }
    let root = a.out.join(&s.label);
    let mut b = Batch::new(s.clone(), seeds.clone());
    b.parallelism = parallelism(a.parallel)?;
    b.output = Some(root.clone());
    let same = run_batch(&b)?;
    report_batch(&s.label, &same.tally, &root);
    if a.robustness {
        let mut r = s.clone();
        r.economy.initial_conditions = InitialConditions::Randomized;
        let dir = root.join("random_ic");
        let rb = Batch { scenario: r, output: Some(dir.clone()), ..b };
        let random = run_batch(&rb)?;
        report_batch(&format!("{} (random initial conditions)", s.label), &random.tally, &dir);
        let mut rows = Vec::new();
        for v in Variable::ALL {
            for (firm, t) in robustness_ttest(&same, &random, v)?.into_iter().enumerate() {
                println!("  {} firm {}: t = {:?}, p = {:?}", v.name(), firm + 1, t.t, t.p);
                rows.push(TTestFile {
                    format_version: io::FORMAT_VERSION,
                    same_ic: root.display().to_string(),
                    random_ic: dir.display().to_string(),
                    variable: v,
                    firm,
                    t: t.t,
                    df: t.df,
                    p: t.p,
                });
            }
        }
        write_json(&root.join("ttest.json"), &rows).map_err(runtime)?;
    }
    Ok(())
}

fn report_batch(label: &str, t: &prodnet::harness::Tally, dir: &Path) {
    println!(
        "{label}: {} steady, {} hit the period limit, {} faulted -> {}",
        t.steady_state,
        t.max_periods,
        t.fault,
        dir.join(io::SUMMARY_FILE).display()
    );
}

#[derive(Serialize)]
struct ShockFile {
    format_version: u32,
    label: String,
    seed: u64,
    event: ShockEvent,
    shock_period: u64,
    before: SteadyOutcome,
    after: SteadyOutcome,
    price_change: Vec<Option<f64>>,
    volume_change: Vec<Option<f64>>,
    profit_change: Vec<Option<f64>>,
}

fn shock(a: ShockArgs) -> Result<(), CliError> {
    let mut s = load(&a.source)?;
    let text = match a.event.strip_prefix('@') {
        Some(path) => fs::read_to_string(path).map_err(|e| CliError::Config(format!("{path}: {e}")))?,
        None => a.event.clone(),
    };
    let event: ShockEvent = serde_json::from_str(&text).map_err(|e| CliError::Config(format!("bad --event: {e}")))?;
    s.events.push(event);
    s.validate().map_err(config)?;
    let r = run_shock_scenario(&s, a.seed)?;
    let dir = a.out.join(&s.label).join(a.seed.to_string());
    io::write_run(&dir, &s, a.seed, &r.result).map_err(runtime)?;
    if let Some(f) = r.result.fault {
        return Err(CliError::Runtime(f));
    }
    let file = ShockFile {
        format_version: io::FORMAT_VERSION,
        label: s.label.clone(),
        seed: a.seed,
        event,
        shock_period: r.shock_period,
        price_change: outcome_changes(&r.before, &r.after, Variable::Price),
        volume_change: outcome_changes(&r.before, &r.after, Variable::Volume),
        profit_change: outcome_changes(&r.before, &r.after, Variable::Profit),
        before: r.before,
        after: r.after,
    };
    write_json(&dir.join("shock.json"), &file).map_err(runtime)?;
    for (i, c) in file.profit_change.iter().enumerate() {
        match c {
            Some(c) => println!("firm {}: profit change {c:+.4}", i + 1),
            None => println!("firm {}: profit change undefined", i + 1),
        }
    }
    Ok(())
}

fn propagate(a: PropagateArgs) -> Result<(), CliError> {
    let base = if Path::new(&a.economy).is_file() {
        Scenario::load(Path::new(&a.economy)).map_err(|e| CliError::Config(format!("{}: {e}", a.economy)))?
    } else {
        named(&a.economy)?
    };
    if a.realizations == 0 {
        return Err(CliError::Config("--realizations must be positive".into()));
    }
    let n = base.economy.n();
    let targets = a.targets.clone().unwrap_or_else(|| (0..n).collect());
    if let Some(&t) = targets.iter().find(|&&t| t >= n) {
        return Err(CliError::Config(format!("target {t} out of range; economy has {n} firms")));
    }
    let families: Vec<Family> = if a.family.is_empty() {
        vec![Family::Supply, Family::Demand]
    } else {
        a.family.iter().map(|&f| f.into()).collect()
    };
    let mut setup = PropagationSetup::new(a.realizations, a.seed);
    if let Some(p) = a.shock_period {
        setup.shock_period = p;
    }
    if let Some(p) = a.after {
        setup.after = p;
    }
    let results = propagation_experiments(&base, &families, &targets, &setup, parallelism(a.parallel)?)?;
    let structure = ImpliedStructure::from_technologies(&base.economy.technologies);
    let dir = a.out.join(&base.label).join("propagation");
    fs::create_dir_all(&dir).map_err(runtime)?;
    let mut rows = Vec::new();
    for r in &results {
        let profiles: Vec<_> = Direction::ALL
            .iter()
            .flat_map(|&d| Variable::ALL.map(|v| propagation_profile(&r.effects, &structure, d, v, MIN_BUCKET)))
            .collect();
        rows.extend(io::propagation_rows(&r.family, &profiles));
        for f in &r.faults {
            eprintln!("fault in realization {} target {:?}: {}", f.realization, f.target, f.message);
        }
        println!("{}: {} shocked industries, {} faulted cells", r.family, r.effects.len(), r.faults.len());
    }
    write_csv(&dir.join("propagation.csv"), rows).map_err(runtime)?;
    write_json(&dir.join("setup.json"), &setup).map_err(runtime)?;
    write_json(&dir.join("effects.json"), &results).map_err(runtime)?;
    let find = |name: &str| results.iter().find(|r| r.family == name);
    if let (Some(s), Some(d)) = (find(Family::Supply.name()), find(Family::Demand.name())) {
        let div = diversity_sensitivity(&s.effects, &d.effects, &structure);
        write_csv(&dir.join("diversity.csv"), io::diversity_rows(&div)).map_err(runtime)?;
        match div.r {
            Some(r) => println!("diversity correlation r = {r:.3}"),
            None => println!("diversity correlation undefined"),
        }
    }
    println!("-> {}", dir.display());
    Ok(())
}

fn analyze(a: AnalyzeArgs) -> Result<(), CliError> {
    let run = io::read_run(&a.input).map_err(|e| CliError::Config(format!("{}: {e}", a.input.display())))?;
    let out = a.out.clone().unwrap_or_else(|| a.input.clone());
    fs::create_dir_all(&out).map_err(runtime)?;
    let n = run.scenario.economy.n();
    let nothing = a.ternary.is_none() && !a.discrepancy;
    if a.stats || nothing {
        let stats = trailing_stats(&run.series, run.summary.window);
        write_json(&out.join("stats.json"), &stats).map_err(runtime)?;
        for (i, s) in stats.iter().enumerate() {
            println!(
                "firm {}: price {:.4} produced {:.4} profit {:.4} consistency {:.4}",
                i + 1,
                s.price,
                s.produced,
                s.profit,
                s.consistency
            );
        }
    }
    if let Some(firm) = a.ternary {
        if firm >= n {
            return Err(CliError::Config(format!("firm {firm} out of range; economy has {n} firms")));
        }
        let measure = match a.measure {
            MeasureArg::PurchasedVolume => Measure::PurchasedVolume,
            MeasureArg::Costs => Measure::Costs,
            MeasureArg::Sales => Measure::Sales,
        };
        let path = out.join("ternary.csv");
        write_csv(&path, io::ternary_rows(&run.ledgers, firm, measure)).map_err(runtime)?;
        println!("-> {}", path.display());
    }
    if a.discrepancy {
        let weight = match a.weight {
            WeightArg::Value => FlowWeight::Value,
            WeightArg::Volume => FlowWeight::Volume,
        };
        let structure = ImpliedStructure::from_technologies(&run.scenario.economy.technologies);
        let edges = discrepancy(&structure, &run.ledgers, weight);
        let path = out.join("discrepancy.csv");
        write_csv(&path, io::discrepancy_rows(&edges, weight)).map_err(runtime)?;
        println!("-> {}", path.display());
    }
    if matches!(run.summary.termination, Termination::ExtremeOutputFault) {
        eprintln!("note: the stored run ended in a fault");
    }
    Ok(())
}
