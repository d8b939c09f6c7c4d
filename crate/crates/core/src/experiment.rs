//! Parameter sweeps: sample, build the graph, run the pipeline and
//! classify each cell against the expected group order.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::concurrence::build_graph;
use crate::group::{expected_order, GroupError, DEFAULT_ORDER_LIMIT};
use crate::pipeline::{run, PipelineConfig};
use crate::solver::SolveMode;
use crate::worlds::{sample_observations, SampleSize, WorldKind, WorldSpec};

/// Environment variable overriding the number of parallel cells.
pub const JOBS_ENV: &str = "GRAPHSYM_JOBS";

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid grid: {0}")]
    Grid(String),
    #[error(transparent)]
    Group(#[from] GroupError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("thread pool: {0}")]
    Pool(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentGrid {
    pub world: WorldKind,
    /// Sampled fractions of all distinct observations.
    #[serde(default)]
    pub fractions: Vec<f64>,
    /// Absolute numbers of distinct observations, for worlds too large
    /// to enumerate.
    #[serde(default)]
    pub counts: Vec<usize>,
    pub fault_tolerances: Vec<f64>,
    pub bandwidth: Option<f64>,
    pub error_limit: f64,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub solve_mode: SolveMode,
    #[serde(default)]
    pub time_budget_s: Option<f64>,
    #[serde(default = "default_order_limit")]
    pub max_group_order: usize,
    #[serde(default)]
    pub propagate_singletons: bool,
}

fn default_order_limit() -> usize {
    DEFAULT_ORDER_LIMIT
}

impl ExperimentGrid {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: &str| Err(ExperimentError::Grid(m.to_string()));
        if self.world == WorldKind::Custom {
            return bad("custom worlds have no expected order");
        }
        if self.fractions.is_empty() == self.counts.is_empty() {
            return bad("give exactly one of fractions and counts");
        }
        if self.fractions.iter().any(|&f| !(f > 0.0 && f <= 1.0)) {
            return bad("fractions must lie in (0, 1]");
        }
        if self.counts.contains(&0) {
            return bad("counts must be positive");
        }
        if self.fault_tolerances.is_empty() || self.seeds.is_empty() {
            return bad("fault_tolerances and seeds must be non-empty");
        }
        self.cell_config(self.fault_tolerances[0], 0)
            .validate()
            .map_err(|e| ExperimentError::Grid(e.to_string()))?;
        for &ft in &self.fault_tolerances {
            if !(0.0..1.0).contains(&ft) {
                return bad("fault tolerances must lie in [0, 1)");
            }
        }
        Ok(())
    }

    fn sizes(&self) -> Vec<SampleSize> {
        if self.counts.is_empty() {
            self.fractions.iter().map(|&f| SampleSize::Fraction(f)).collect()
        } else {
            self.counts.iter().map(|&c| SampleSize::Count(c)).collect()
        }
    }

    /// All cells in canonical order: size, then fault tolerance, then seed.
    pub fn cells(&self) -> Vec<Cell> {
        let mut cells = Vec::new();
        for size in self.sizes() {
            for &ft in &self.fault_tolerances {
                for &seed in &self.seeds {
                    cells.push(Cell {
                        size,
                        fault_tolerance: ft,
                        seed,
                    });
                }
            }
        }
        cells
    }

    fn cell_config(&self, fault_tolerance: f64, seed: u64) -> PipelineConfig {
        PipelineConfig {
            bandwidth: self.bandwidth,
            fault_tolerance,
            error_limit: self.error_limit,
            solve_mode: self.solve_mode,
            seed,
            time_budget_s: self.time_budget_s,
            max_group_order: self.max_group_order,
            propagate_singletons: self.propagate_singletons,
            ..PipelineConfig::default()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cell {
    pub size: SampleSize,
    pub fault_tolerance: f64,
    pub seed: u64,
}

impl Cell {
    fn size_value(&self) -> f64 {
        match self.size {
            SampleSize::Fraction(f) => f,
            SampleSize::Count(c) => c as f64,
        }
    }

    /// Sampling seed of this cell, mixed from the grid seed and its axes.
    pub fn sample_seed(&self) -> u64 {
        let mut h = splitmix(self.seed);
        h = splitmix(h ^ self.size_value().to_bits());
        splitmix(h ^ self.fault_tolerance.to_bits())
    }
}

fn splitmix(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    TooFew,
    Correct,
    TooMany,
    Timeout,
}

impl fmt::Display for Classification {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Classification::TooFew => "too_few",
            Classification::Correct => "correct",
            Classification::TooMany => "too_many",
            Classification::Timeout => "timeout",
        })
    }
}

impl FromStr for Classification {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "too_few" => Ok(Classification::TooFew),
            "correct" => Ok(Classification::Correct),
            "too_many" => Ok(Classification::TooMany),
            "timeout" => Ok(Classification::Timeout),
            _ => Err(format!("unknown classification {s:?}")),
        }
    }
}

/// Compares a found group order with the expected one.
pub fn classify(order: usize, expected: usize, timed_out: bool) -> Classification {
    if timed_out {
        return Classification::Timeout;
    }
    match order.cmp(&expected) {
        std::cmp::Ordering::Less => Classification::TooFew,
        std::cmp::Ordering::Equal => Classification::Correct,
        std::cmp::Ordering::Greater => Classification::TooMany,
    }
}

/// One CSV row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub world: String,
    /// The sampled fraction, or the observation count for count grids.
    pub fraction: f64,
    pub fault_tolerance: f64,
    pub bandwidth: Option<f64>,
    pub error_limit: f64,
    pub seed: u64,
    pub presolve_count: usize,
    pub generator_count: usize,
    pub group_order: usize,
    pub classification: Classification,
    pub wall_time_s: f64,
}

/// Runs one cell. Errors are reported as timeouts so a sweep never aborts.
pub fn run_cell(grid: &ExperimentGrid, spec: &WorldSpec, expected: usize, cell: &Cell) -> CellResult {
    let start = Instant::now();
    let config = grid.cell_config(cell.fault_tolerance, cell.seed);
    let outcome = sample_observations(spec, cell.size, cell.sample_seed())
        .map_err(|e| e.to_string())
        .and_then(|obs| build_graph(&obs).map_err(|e| e.to_string()))
        .and_then(|graph| run(&graph, &config).map_err(|e| e.to_string()));
    let (presolve_count, generator_count, group_order, classification) = match outcome {
        Ok(r) => {
            let class = if r.group_overflow {
                Classification::TooMany
            } else {
                classify(r.order(), expected, r.timed_out)
            };
            (r.presolve_count, r.generators().len(), r.order(), class)
        }
        Err(_) => (0, 0, 0, Classification::Timeout),
    };
    CellResult {
        world: grid.world.to_string(),
        fraction: cell.size_value(),
        fault_tolerance: cell.fault_tolerance,
        bandwidth: grid.bandwidth,
        error_limit: grid.error_limit,
        seed: cell.seed,
        presolve_count,
        generator_count,
        group_order,
        classification,
        wall_time_s: start.elapsed().as_secs_f64(),
    }
}

/// Parallel cell count: the explicit value, else the environment
/// override, else all cores.
pub fn job_limit(explicit: Option<usize>) -> usize {
    explicit
        .or_else(|| std::env::var(JOBS_ENV).ok()?.parse().ok())
        .filter(|&j| j > 0)
        .unwrap_or_else(rayon::current_num_threads)
}

/// Runs every cell with up to `jobs` in parallel. `on_row` sees rows in
/// canonical order, each as soon as all earlier cells are done.
pub fn run_experiment_with(
    grid: &ExperimentGrid,
    jobs: usize,
    mut on_row: impl FnMut(&CellResult) -> Result<(), ExperimentError>,
) -> Result<Vec<CellResult>, ExperimentError> {
    grid.validate()?;
    let spec = WorldSpec::named(grid.world);
    let expected = expected_order(&spec)?;
    let cells = grid.cells();
    // One single-threaded pool per worker: a shared pool lets a cell block on
    // stolen work from another cell, which inflates its wall time past budget.
    let pools = (0..jobs.max(1).min(cells.len().max(1)))
        .map(|_| rayon::ThreadPoolBuilder::new().num_threads(1).build())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| ExperimentError::Pool(e.to_string()))?;
    let next = AtomicUsize::new(0);

    let (tx, rx) = mpsc::channel();
    let mut rows = Vec::with_capacity(cells.len());
    std::thread::scope(|scope| -> Result<(), ExperimentError> {
        let cells = &cells;
        let spec = &spec;
        let next = &next;
        for pool in pools {
            let tx = tx.clone();
            scope.spawn(move || loop {
                let k = next.fetch_add(1, Ordering::Relaxed);
                let Some(cell) = cells.get(k) else { break };
                let row = pool.install(|| run_cell(grid, spec, expected, cell));
                if tx.send((k, row)).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        let mut pending = BTreeMap::new();
        for (k, row) in rx {
            pending.insert(k, row);
            while let Some(row) = pending.remove(&rows.len()) {
                on_row(&row)?;
                rows.push(row);
            }
        }
        Ok(())
    })?;
    Ok(rows)
}

pub fn run_experiment(grid: &ExperimentGrid, jobs: usize) -> Result<Vec<CellResult>, ExperimentError> {
    run_experiment_with(grid, jobs, |_| Ok(()))
}

/// Runs the grid and streams rows to `out` as CSV.
pub fn write_experiment_csv<W: Write>(grid: &ExperimentGrid, jobs: usize, out: W) -> Result<Vec<CellResult>, ExperimentError> {
    let mut writer = csv::Writer::from_writer(out);
    let rows = run_experiment_with(grid, jobs, |row| {
        writer.serialize(row)?;
        writer.flush()?;
        Ok(())
    })?;
    writer.flush()?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> ExperimentGrid {
        ExperimentGrid {
            world: WorldKind::T,
            fractions: vec![1.0, 0.5],
            counts: vec![],
            fault_tolerances: vec![0.0],
            bandwidth: None,
            error_limit: 0.0,
            seeds: vec![1],
            solve_mode: SolveMode::Minimize,
            time_budget_s: None,
            max_group_order: DEFAULT_ORDER_LIMIT,
            propagate_singletons: false,
        }
    }

    #[test]
    fn classification_is_a_sign_comparison() {
        assert_eq!(classify(399, 400, false), Classification::TooFew);
        assert_eq!(classify(400, 400, false), Classification::Correct);
        assert_eq!(classify(800, 400, false), Classification::TooMany);
        assert_eq!(classify(400, 400, true), Classification::Timeout);
    }

    #[test]
    fn cells_are_in_canonical_order() {
        let mut g = grid();
        g.fault_tolerances = vec![0.1, 0.2];
        g.seeds = vec![7, 8];
        let cells = g.cells();
        assert_eq!(cells.len(), 8);
        assert_eq!(cells[0].size, SampleSize::Fraction(1.0));
        assert_eq!((cells[1].fault_tolerance, cells[1].seed), (0.1, 8));
        assert_eq!(cells[2].fault_tolerance, 0.2);
        assert_eq!(cells[4].size, SampleSize::Fraction(0.5));
        assert_ne!(cells[0].sample_seed(), cells[2].sample_seed());
        assert_eq!(cells[0].sample_seed(), g.cells()[0].sample_seed());
    }

    #[test]
    fn grid_validation() {
        let mut g = grid();
        g.fractions = vec![];
        assert!(g.validate().is_err());
        let mut g = grid();
        g.counts = vec![10];
        assert!(g.validate().is_err());
        let mut g = grid();
        g.fractions = vec![1.5];
        assert!(g.validate().is_err());
        let mut g = grid();
        g.world = WorldKind::Custom;
        assert!(g.validate().is_err());
        assert!(grid().validate().is_ok());
    }

    #[test]
    fn full_t_cell_is_correct_and_csv_is_canonical() {
        let mut out = Vec::new();
        let rows = write_experiment_csv(&grid(), 2, &mut out).unwrap();
        assert_eq!(rows[0].classification, Classification::Correct);
        assert_eq!(rows[0].group_order, 400);
        let text = String::from_utf8(out).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "world,fraction,fault_tolerance,bandwidth,error_limit,seed,presolve_count,generator_count,group_order,classification,wall_time_s"
        );
        assert!(lines.next().unwrap().starts_with("T,1.0,0.0,,0.0,1,400,"));
        assert!(lines.next().unwrap().starts_with("T,0.5,"));
    }

    #[test]
    fn grid_json_round_trip() {
        let g = grid();
        let text = serde_json::to_string(&g).unwrap();
        assert_eq!(serde_json::from_str::<ExperimentGrid>(&text).unwrap(), g);
        let minimal: ExperimentGrid = serde_json::from_str(
            r#"{"world":"TR1","fractions":[0.3],"fault_tolerances":[0.05],"bandwidth":6.4633e-5,"error_limit":0.01,"seeds":[1]}"#,
        )
        .unwrap();
        assert_eq!(minimal.max_group_order, DEFAULT_ORDER_LIMIT);
        assert_eq!(minimal.bandwidth, Some(6.4633e-5));
    }
}
