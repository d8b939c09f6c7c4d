//! Learning invariance transformations of pixel worlds as approximate
//! automorphisms of their concurrence graph.

pub mod binning;
pub mod checks;
pub mod concurrence;
pub mod experiment;
pub mod group;
pub mod pipeline;
pub mod presolve;
pub mod solver;
pub mod worlds;

pub use binning::{make_bins, BinSet, BinningError};
pub use concurrence::{build_graph, ConcurrenceGraph, Deviation, GraphError, Weight, WeightMatrix};
pub use experiment::{run_experiment, CellResult, Classification, ExperimentGrid};
pub use group::{close, reference_generators, GroupError, Permutation, PermutationGroup};
pub use pipeline::{run, PipelineConfig, PipelineError, PipelineReport};
pub use presolve::{find_incomplete_permutations, IncompletePermutation, PresolveError, PresolveOptions};
pub use solver::{solve_reduced, ReducedProblem, SolveMode, SolveResult, SolveStatus};
pub use worlds::{ObservationSet, WorldError, WorldKind, WorldSpec};
