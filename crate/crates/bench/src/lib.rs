//! Fixtures shared by the benchmarks.

use graphsym_core::worlds::{enumerate_observations, sample_observations, SampleSize};
use graphsym_core::{build_graph, ConcurrenceGraph, ObservationSet, WorldKind, WorldSpec};

pub fn full_observations(kind: WorldKind) -> ObservationSet {
    enumerate_observations(&WorldSpec::named(kind)).expect("named worlds enumerate")
}

pub fn full_graph(kind: WorldKind) -> ConcurrenceGraph {
    build_graph(&full_observations(kind)).expect("graph of a named world")
}

pub fn sampled_graph(kind: WorldKind, fraction: f64, seed: u64) -> ConcurrenceGraph {
    let obs = sample_observations(&WorldSpec::named(kind), SampleSize::Fraction(fraction), seed).expect("sample");
    build_graph(&obs).expect("graph of a sample")
}
