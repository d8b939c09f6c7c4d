//! End-to-end search: bins, incomplete permutations, membership filter,
//! completion, acceptance and closure.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::binning::{make_bins_with_grid, BinSet, BinningError, DEFAULT_GRID_POINTS};
use crate::concurrence::{ConcurrenceGraph, Deviation, GraphError, Weight, WeightMatrix};
use crate::group::{quarter_turn, rotation, GroupError, Permutation, PermutationGroup, DEFAULT_ORDER_LIMIT};
use crate::presolve::{presolve, BinTable, IncompletePermutation, PresolveError, PresolveOptions};
use crate::solver::{solve_reduced_until, ReducedProblem, SolveError, SolveMode, SolveStatus};
use crate::worlds::WorldSpec;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Binning(#[from] BinningError),
    #[error(transparent)]
    Presolve(#[from] PresolveError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Group(#[from] GroupError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("graph has {graph} nodes but the world has {world} features")]
    WorldMismatch { graph: usize, world: usize },
}

/// Number representation of the weights during the search.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arithmetic {
    /// Integer counts; deviations are exact fractions of the observation count.
    #[default]
    Exact,
    Float,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// KDE bandwidth; `None` puts every distinct weight in its own bin.
    pub bandwidth: Option<f64>,
    pub grid_points: usize,
    pub fault_tolerance: f64,
    pub error_limit: f64,
    pub solve_mode: SolveMode,
    pub arithmetic: Arithmetic,
    /// Recorded for provenance; the search itself is deterministic.
    pub seed: u64,
    /// Wall-clock budget for the whole run, in seconds.
    pub time_budget_s: Option<f64>,
    pub max_group_order: usize,
    /// Propagate every candidate set that shrinks to one target, not only
    /// branching commitments. Exact on noise-free graphs but brittle under
    /// sampling noise, so off by default.
    pub propagate_singletons: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            bandwidth: None,
            grid_points: DEFAULT_GRID_POINTS,
            fault_tolerance: 0.0,
            error_limit: 0.0,
            solve_mode: SolveMode::Minimize,
            arithmetic: Arithmetic::Exact,
            seed: 0,
            time_budget_s: None,
            max_group_order: DEFAULT_ORDER_LIMIT,
            propagate_singletons: false,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if let Some(h) = self.bandwidth {
            if !(h > 0.0 && h.is_finite()) {
                return bad(format!("bandwidth must be positive, got {h}"));
            }
        }
        if !(0.0..1.0).contains(&self.fault_tolerance) {
            return bad(format!("fault_tolerance must lie in [0, 1), got {}", self.fault_tolerance));
        }
        if !(self.error_limit >= 0.0 && self.error_limit.is_finite()) {
            return bad(format!("error_limit must be non-negative, got {}", self.error_limit));
        }
        if let Some(t) = self.time_budget_s {
            if !(t >= 0.0 && t.is_finite()) {
                return bad(format!("time_budget_s must be non-negative, got {t}"));
            }
        }
        if self.max_group_order == 0 {
            return bad("max_group_order must be positive".into());
        }
        Ok(())
    }
}

/// One completed incomplete permutation.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SolvedCandidate {
    /// Number of sources fixed before completion.
    pub fixed: usize,
    pub permutation: Permutation,
    pub deviation: Deviation,
    pub deviation_value: f64,
    pub node_count: u64,
    pub status: SolveStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_time_s: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct StageTimings {
    pub binning_s: f64,
    pub presolve_s: f64,
    pub solve_s: f64,
    pub closure_s: f64,
    pub total_s: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct PipelineReport {
    pub config: PipelineConfig,
    pub node_count: usize,
    pub bins: BinSet,
    pub presolve_count: usize,
    pub presolve_nodes: u64,
    /// Incomplete permutations handled before the run ended.
    pub processed: usize,
    pub skipped_by_membership: usize,
    pub accepted: Vec<SolvedCandidate>,
    pub rejected: Vec<SolvedCandidate>,
    pub timed_out: bool,
    /// The closure reached `max_group_order` and the run stopped.
    pub group_overflow: bool,
    pub group: PermutationGroup,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timings: Option<StageTimings>,
}

impl PipelineReport {
    pub fn order(&self) -> usize {
        self.group.order()
    }

    pub fn generators(&self) -> &[Permutation] {
        self.group.generators()
    }

    /// Drops every wall-clock measurement, leaving a report that depends
    /// only on the input graph and configuration.
    pub fn without_timings(mut self) -> Self {
        self.timings = None;
        for c in self.accepted.iter_mut().chain(self.rejected.iter_mut()) {
            c.wall_time_s = None;
        }
        self
    }
}

/// Bins over every matrix entry, zeros and node weights included.
pub fn bins_for<T: Weight>(weights: &WeightMatrix<T>, config: &PipelineConfig) -> Result<BinSet, BinningError> {
    match config.bandwidth {
        None => Ok(BinSet::exact(weights.real_values())),
        Some(h) => {
            let values: Vec<f64> = weights.real_values().collect();
            make_bins_with_grid(&values, h, config.grid_points)
        }
    }
}

/// Runs the search on a concurrence graph in the configured arithmetic.
pub fn run(graph: &ConcurrenceGraph, config: &PipelineConfig) -> Result<PipelineReport, PipelineError> {
    match config.arithmetic {
        Arithmetic::Exact => run_weights(&graph.exact_weights(), config),
        Arithmetic::Float => run_weights(&graph.float_weights(), config),
    }
}

/// Runs the search on an arbitrary weight matrix.
pub fn run_weights<T: Weight>(weights: &WeightMatrix<T>, config: &PipelineConfig) -> Result<PipelineReport, PipelineError> {
    config.validate()?;
    let start = Instant::now();
    let deadline = config
        .time_budget_s
        .map(|s| start + Duration::from_secs_f64(s));
    let mut timings = StageTimings::default();
    let n = weights.n();

    let t = Instant::now();
    let bins = bins_for(weights, config)?;
    timings.binning_s = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let table = BinTable::new(weights, &bins);
    let options = PresolveOptions {
        fault_tolerance: config.fault_tolerance,
        propagate_singletons: config.propagate_singletons,
        deadline,
        max_results: None,
    };
    let outcome = presolve(&table, &options)?;
    timings.presolve_s = t.elapsed().as_secs_f64();

    let candidates = canonical_order(outcome.permutations);

    let mut report = PipelineReport {
        config: config.clone(),
        node_count: n,
        bins,
        presolve_count: candidates.len(),
        presolve_nodes: outcome.nodes_explored,
        processed: 0,
        skipped_by_membership: 0,
        accepted: Vec::new(),
        rejected: Vec::new(),
        timed_out: outcome.timed_out,
        group_overflow: false,
        group: PermutationGroup::trivial(n),
        timings: None,
    };

    for partial in &candidates {
        if report.timed_out || deadline.is_some_and(|d| Instant::now() >= d) {
            report.timed_out = true;
            break;
        }
        report.processed += 1;
        if report.group.matches_partial(partial).is_some() {
            report.skipped_by_membership += 1;
            continue;
        }
        let t = Instant::now();
        let result = solve_reduced_until(
            weights,
            &ReducedProblem::new(partial.clone()),
            config.error_limit,
            config.solve_mode,
            deadline,
        )?;
        let elapsed = t.elapsed().as_secs_f64();
        timings.solve_s += elapsed;
        if result.status == SolveStatus::Timeout {
            report.timed_out = true;
        }
        let solved = SolvedCandidate {
            fixed: partial.domain_size(),
            deviation_value: result.deviation.value(),
            permutation: result.permutation,
            deviation: result.deviation,
            node_count: result.node_count,
            status: result.status,
            wall_time_s: Some(elapsed),
        };
        if !solved.deviation.within(config.error_limit) {
            report.rejected.push(solved);
            continue;
        }
        let t = Instant::now();
        let grown = if report.group.contains(&solved.permutation) {
            Ok(())
        } else {
            report
                .group
                .add_generator(solved.permutation.clone(), config.max_group_order)
        };
        timings.closure_s += t.elapsed().as_secs_f64();
        report.accepted.push(solved);
        match grown {
            Ok(()) => {}
            Err(GroupError::TooLarge(_)) => {
                report.group_overflow = true;
                break;
            }
            Err(e) => return Err(e.into()),
        }
    }

    timings.total_s = start.elapsed().as_secs_f64();
    report.timings = Some(timings);
    Ok(report)
}

fn check_world(graph: &ConcurrenceGraph, spec: &WorldSpec) -> Result<(), PipelineError> {
    if graph.n() != spec.feature_count() {
        return Err(PipelineError::WorldMismatch {
            graph: graph.n(),
            world: spec.feature_count(),
        });
    }
    Ok(())
}

/// Deviation of the half turn about cell `(0, 0)`. Zero on full data of
/// translation worlds although no observation is ever rotated.
pub fn verify_false_positive(graph: &ConcurrenceGraph, spec: &WorldSpec) -> Result<Deviation, PipelineError> {
    check_world(graph, spec)?;
    Ok(graph.deviation(&rotation(spec, 2))?)
}

/// Deviation of a quarter turn, blockwise on non-square grids.
pub fn quarter_turn_deviation(graph: &ConcurrenceGraph, spec: &WorldSpec) -> Result<Deviation, PipelineError> {
    check_world(graph, spec)?;
    Ok(graph.deviation(&quarter_turn(spec)?)?)
}

/// The presolve stage alone, in visiting order.
pub fn incomplete_permutations<T: Weight>(
    weights: &WeightMatrix<T>,
    config: &PipelineConfig,
) -> Result<Vec<IncompletePermutation>, PipelineError> {
    config.validate()?;
    let bins = bins_for(weights, config)?;
    let options = PresolveOptions {
        fault_tolerance: config.fault_tolerance,
        propagate_singletons: config.propagate_singletons,
        deadline: None,
        max_results: None,
    };
    Ok(canonical_order(presolve(&BinTable::new(weights, &bins), &options)?.permutations))
}

/// Incomplete permutations in the order the pipeline visits them.
pub fn canonical_order(mut partials: Vec<IncompletePermutation>) -> Vec<IncompletePermutation> {
    partials.sort_by(|a, b| b.domain_size().cmp(&a.domain_size()).then_with(|| a.cmp(b)));
    partials
}
