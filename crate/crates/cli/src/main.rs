use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use graphsym_core::checks::analytic_checks;
use graphsym_core::concurrence::build_graph;
use graphsym_core::experiment::{job_limit, write_experiment_csv, ExperimentGrid};
use graphsym_core::pipeline::{incomplete_permutations, run, Arithmetic, PipelineConfig};
use graphsym_core::worlds::{enumerate_observations, is_enumerable, sample_observations, ObservationSet, SampleSize};
use graphsym_core::{ConcurrenceGraph, SolveMode, WorldKind, WorldSpec};

#[derive(Parser)]
#[command(name = "graphsym", version, about = "Find invariance transformations of pixel worlds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Enumerate or sample the observations of a world into a file.
    GenWorld(GenWorld),
    /// Count feature co-occurrences of an observation file.
    BuildGraph(BuildGraph),
    /// Run the symmetry search on a graph and write a JSON report.
    Find(Find),
    /// Sweep sample sizes and fault tolerances and write a CSV.
    Experiment(Experiment),
    /// Run the analytic self-checks of the named worlds.
    Verify(Verify),
}

#[derive(Args)]
struct GenWorld {
    /// JSON file with `world`, `fraction` or `count`, and `seed`.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    world: Option<WorldKind>,
    #[arg(long, conflicts_with = "count")]
    fraction: Option<f64>,
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct GenWorldConfig {
    world: Option<WorldKind>,
    fraction: Option<f64>,
    count: Option<usize>,
    seed: Option<u64>,
}

#[derive(Args)]
struct BuildGraph {
    #[arg(long, short)]
    input: PathBuf,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args)]
struct Find {
    /// Graph JSON written by `build-graph`.
    #[arg(long, required_unless_present = "observations", conflicts_with = "observations")]
    graph: Option<PathBuf>,
    /// Observation file; the graph is built in memory.
    #[arg(long)]
    observations: Option<PathBuf>,
    /// JSON file with pipeline settings; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// KDE bandwidth; without it every distinct weight is its own bin.
    #[arg(long)]
    bandwidth: Option<f64>,
    #[arg(long)]
    fault_tolerance: Option<f64>,
    #[arg(long)]
    error_limit: Option<f64>,
    /// minimize or first-feasible
    #[arg(long)]
    solve_mode: Option<SolveMode>,
    #[arg(long, value_parser = parse_arithmetic)]
    arithmetic: Option<Arithmetic>,
    /// Wall-clock budget in seconds.
    #[arg(long)]
    time_budget: Option<f64>,
    #[arg(long)]
    max_group_order: Option<usize>,
    #[arg(long)]
    propagate_singletons: bool,
    #[arg(long)]
    seed: Option<u64>,
    /// Leave wall-clock measurements out of the report.
    #[arg(long)]
    no_timings: bool,
    /// Also write the incomplete permutations as a JSON list.
    #[arg(long)]
    dump_partials: Option<PathBuf>,
    /// Report path; standard output if absent.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct Experiment {
    /// JSON file with the grid; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    world: Option<WorldKind>,
    #[arg(long, value_delimiter = ',')]
    fractions: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    counts: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    fault_tolerances: Option<Vec<f64>>,
    #[arg(long)]
    bandwidth: Option<f64>,
    #[arg(long)]
    error_limit: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    solve_mode: Option<SolveMode>,
    #[arg(long)]
    time_budget: Option<f64>,
    /// Parallel cells; defaults to GRAPHSYM_JOBS or the core count.
    #[arg(long)]
    jobs: Option<usize>,
    /// CSV path; standard output if absent.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct Verify {
    /// Print the results as JSON.
    #[arg(long)]
    json: bool,
}

fn parse_arithmetic(s: &str) -> Result<Arithmetic, String> {
    match s {
        "exact" => Ok(Arithmetic::Exact),
        "float" => Ok(Arithmetic::Float),
        _ => Err(format!("unknown arithmetic {s:?} (expected exact or float)")),
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    serde_json::from_reader(BufReader::new(file)).with_context(|| format!("parsing {}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(create(p)?),
        None => Box::new(io::stdout().lock()),
    })
}

fn gen_world(args: GenWorld) -> Result<()> {
    let file: GenWorldConfig = match &args.config {
        Some(p) => read_json(p)?,
        None => GenWorldConfig::default(),
    };
    let world = args.world.or(file.world).context("no world given")?;
    let seed = args.seed.or(file.seed).unwrap_or(0);
    let size = match (args.fraction, args.count) {
        (Some(f), _) => SampleSize::Fraction(f),
        (None, Some(c)) => SampleSize::Count(c),
        (None, None) => match (file.fraction, file.count) {
            (Some(_), Some(_)) => bail!("config gives both fraction and count"),
            (Some(f), None) => SampleSize::Fraction(f),
            (None, Some(c)) => SampleSize::Count(c),
            (None, None) => SampleSize::Fraction(1.0),
        },
    };
    let spec = WorldSpec::named(world);
    let obs = match size {
        SampleSize::Fraction(f) if f == 1.0 && is_enumerable(&spec) => enumerate_observations(&spec)?,
        _ => sample_observations(&spec, size, seed)?,
    };
    let mut out = create(&args.out)?;
    obs.write_to(&mut out)?;
    out.flush()?;
    eprintln!("wrote {} observations of {world} to {}", obs.total(), args.out.display());
    Ok(())
}

fn read_observations(path: &Path) -> Result<ObservationSet> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    ObservationSet::read_from(BufReader::new(file)).with_context(|| format!("reading {}", path.display()))
}

fn build_graph_cmd(args: BuildGraph) -> Result<()> {
    let graph = build_graph(&read_observations(&args.input)?)?;
    let mut out = create(&args.out)?;
    serde_json::to_writer(&mut out, &graph)?;
    out.flush()?;
    eprintln!("wrote graph with {} nodes from {} observations", graph.n(), graph.total_observations());
    Ok(())
}

fn find(args: Find) -> Result<()> {
    let mut config: PipelineConfig = match &args.config {
        Some(p) => read_json(p)?,
        None => PipelineConfig::default(),
    };
    if args.bandwidth.is_some() {
        config.bandwidth = args.bandwidth;
    }
    if let Some(v) = args.fault_tolerance {
        config.fault_tolerance = v;
    }
    if let Some(v) = args.error_limit {
        config.error_limit = v;
    }
    if let Some(v) = args.solve_mode {
        config.solve_mode = v;
    }
    if let Some(v) = args.arithmetic {
        config.arithmetic = v;
    }
    if args.time_budget.is_some() {
        config.time_budget_s = args.time_budget;
    }
    if let Some(v) = args.max_group_order {
        config.max_group_order = v;
    }
    if args.propagate_singletons {
        config.propagate_singletons = true;
    }
    if let Some(v) = args.seed {
        config.seed = v;
    }

    let graph: ConcurrenceGraph = match (&args.graph, &args.observations) {
        (Some(p), _) => read_json(p)?,
        (None, Some(p)) => build_graph(&read_observations(p)?)?,
        (None, None) => unreachable!("clap requires one input"),
    };

    if let Some(path) = &args.dump_partials {
        let partials = match config.arithmetic {
            Arithmetic::Exact => incomplete_permutations(&graph.exact_weights(), &config)?,
            Arithmetic::Float => incomplete_permutations(&graph.float_weights(), &config)?,
        };
        let mut out = create(path)?;
        serde_json::to_writer(&mut out, &partials)?;
        out.flush()?;
    }

    let mut report = run(&graph, &config)?;
    if args.no_timings {
        report = report.without_timings();
    }
    let mut out = output(args.out.as_deref())?;
    serde_json::to_writer_pretty(&mut out, &report)?;
    writeln!(out)?;
    out.flush()?;
    eprintln!(
        "group order {}, {} generators, {} incomplete permutations, {} accepted, {} rejected{}",
        report.order(),
        report.generators().len(),
        report.presolve_count,
        report.accepted.len(),
        report.rejected.len(),
        if report.timed_out { ", timed out" } else { "" }
    );
    Ok(())
}

fn experiment(args: Experiment) -> Result<()> {
    let mut grid = match &args.config {
        Some(p) => read_json::<ExperimentGrid>(p)?,
        None => ExperimentGrid {
            world: args.world.context("give --world or --config")?,
            fractions: Vec::new(),
            counts: Vec::new(),
            fault_tolerances: Vec::new(),
            bandwidth: None,
            error_limit: 0.0,
            seeds: vec![0],
            solve_mode: SolveMode::Minimize,
            time_budget_s: None,
            max_group_order: graphsym_core::group::DEFAULT_ORDER_LIMIT,
            propagate_singletons: false,
        },
    };
    if let Some(w) = args.world {
        grid.world = w;
    }
    if let Some(v) = args.fractions {
        grid.fractions = v;
        grid.counts.clear();
    }
    if let Some(v) = args.counts {
        grid.counts = v;
        grid.fractions.clear();
    }
    if let Some(v) = args.fault_tolerances {
        grid.fault_tolerances = v;
    }
    if args.bandwidth.is_some() {
        grid.bandwidth = args.bandwidth;
    }
    if let Some(v) = args.error_limit {
        grid.error_limit = v;
    }
    if let Some(v) = args.seeds {
        grid.seeds = v;
    }
    if let Some(v) = args.solve_mode {
        grid.solve_mode = v;
    }
    if args.time_budget.is_some() {
        grid.time_budget_s = args.time_budget;
    }
    let jobs = job_limit(args.jobs);
    let out = output(args.out.as_deref())?;
    let rows = write_experiment_csv(&grid, jobs, out)?;
    let correct = rows
        .iter()
        .filter(|r| r.classification == graphsym_core::Classification::Correct)
        .count();
    eprintln!("{} cells, {correct} correct", rows.len());
    Ok(())
}

fn verify(args: Verify) -> Result<bool> {
    let checks = analytic_checks();
    if args.json {
        println!("{}", serde_json::to_string_pretty(&checks)?);
    } else {
        for c in &checks {
            println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
        }
    }
    Ok(checks.iter().all(|c| c.passed))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenWorld(a) => gen_world(a).map(|_| true),
        Command::BuildGraph(a) => build_graph_cmd(a).map(|_| true),
        Command::Find(a) => find(a).map(|_| true),
        Command::Experiment(a) => experiment(a).map(|_| true),
        Command::Verify(a) => verify(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
