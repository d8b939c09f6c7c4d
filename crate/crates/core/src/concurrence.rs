//! Concurrence graph: one- and two-dimensional marginals of the observed
//! pixel distribution, kept as exact integer counts.
//!
//! The weighted adjacency matrix has `A[i][j] = pairs(i, j) / N` off the
//! diagonal and `A[i][i] = nodes(i) / N` on it.

use std::fmt;

use num_rational::Ratio;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::group::Permutation;
use crate::worlds::{BitImage, ObservationSet};

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("observation set is empty")]
    Empty,
    #[error("image {index} has dimensions {got:?}, expected {expected:?}")]
    DimensionMismatch {
        index: usize,
        expected: (usize, usize, usize),
        got: (usize, usize, usize),
    },
    #[error("marginal pair needs two distinct nodes, got {0} twice")]
    SameNode(usize),
    #[error("node {node} out of range for {n} nodes")]
    NodeOutOfRange { node: usize, n: usize },
    #[error("permutation of length {got} applied to a graph with {expected} nodes")]
    LengthMismatch { expected: usize, got: usize },
    #[error("invalid graph: {0}")]
    Invalid(String),
}

/// Scalar type of a weight matrix. Integer counts give exact comparisons;
/// floats are used for arbitrary weighted graphs.
pub trait Weight: Copy + PartialOrd + Send + Sync + fmt::Debug + 'static {
    const ZERO: Self;

    fn abs_diff(self, other: Self) -> Self;

    fn to_f64(self) -> f64;

    /// Largest representable raw value not exceeding `scaled_limit`
    /// (a real-valued limit already multiplied by the matrix scale).
    fn threshold(scaled_limit: f64) -> Self;

    /// Converts a raw deviation of a matrix with the given scale.
    fn to_deviation(raw: Self, scale: f64) -> Deviation;
}

impl Weight for u64 {
    const ZERO: Self = 0;

    fn abs_diff(self, other: Self) -> Self {
        u64::abs_diff(self, other)
    }

    fn to_f64(self) -> f64 {
        self as f64
    }

    fn threshold(scaled_limit: f64) -> Self {
        if scaled_limit < 0.0 {
            return 0;
        }
        // absorb representation error of products such as 0.01 * 100000
        let rounded = scaled_limit.round();
        if (scaled_limit - rounded).abs() <= 1e-9 * scaled_limit.max(1.0) {
            rounded as u64
        } else {
            scaled_limit.floor() as u64
        }
    }

    fn to_deviation(raw: Self, scale: f64) -> Deviation {
        Deviation::Exact {
            numerator: raw,
            denominator: scale as u64,
        }
    }
}

/// Absolute tolerance for comparisons in floating mode.
pub const FLOAT_TOLERANCE: f64 = 1e-12;

impl Weight for f64 {
    const ZERO: Self = 0.0;

    fn abs_diff(self, other: Self) -> Self {
        (self - other).abs()
    }

    fn to_f64(self) -> f64 {
        self
    }

    fn threshold(scaled_limit: f64) -> Self {
        scaled_limit + FLOAT_TOLERANCE
    }

    fn to_deviation(raw: Self, scale: f64) -> Deviation {
        Deviation::Float(raw / scale)
    }
}

/// A deviation value, exact when computed from integer counts.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Deviation {
    Exact { numerator: u64, denominator: u64 },
    Float(f64),
}

impl Deviation {
    pub fn value(&self) -> f64 {
        match *self {
            Deviation::Exact {
                numerator,
                denominator,
            } => numerator as f64 / denominator as f64,
            Deviation::Float(v) => v,
        }
    }

    pub fn is_zero(&self) -> bool {
        match *self {
            Deviation::Exact { numerator, .. } => numerator == 0,
            Deviation::Float(v) => v.abs() <= FLOAT_TOLERANCE,
        }
    }

    /// Whether the deviation does not exceed `limit`.
    pub fn within(&self, limit: f64) -> bool {
        match *self {
            Deviation::Exact {
                numerator,
                denominator,
            } => numerator <= u64::threshold(limit * denominator as f64),
            Deviation::Float(v) => v <= f64::threshold(limit),
        }
    }
}

impl fmt::Display for Deviation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Deviation::Exact {
                numerator,
                denominator,
            } => write!(f, "{numerator}/{denominator}"),
            Deviation::Float(v) => write!(f, "{v:e}"),
        }
    }
}

/// Dense symmetric weight matrix with node weights on the diagonal.
/// Real weights are `raw / scale`.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightMatrix<T> {
    n: usize,
    data: Vec<T>,
    scale: f64,
}

impl<T: Weight> WeightMatrix<T> {
    pub fn from_fn(n: usize, scale: f64, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                data.push(f(i, j));
            }
        }
        WeightMatrix { n, data, scale }
    }

    /// Builds a symmetric matrix from its lower triangle including the diagonal.
    pub fn symmetric(n: usize, scale: f64, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = vec![T::ZERO; n * n];
        for i in 0..n {
            for j in 0..=i {
                let v = f(i, j);
                data[i * n + j] = v;
                data[j * n + i] = v;
            }
        }
        WeightMatrix { n, data, scale }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn real(&self, i: usize, j: usize) -> f64 {
        self.get(i, j).to_f64() / self.scale
    }

    /// All real weights, row-major.
    pub fn real_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.data.iter().map(move |v| v.to_f64() / self.scale)
    }

    /// Raw threshold equivalent to a real-valued error limit.
    pub fn threshold(&self, limit: f64) -> T {
        T::threshold(limit * self.scale)
    }

    pub fn to_deviation(&self, raw: T) -> Deviation {
        T::to_deviation(raw, self.scale)
    }

    /// Raw max-norm deviation `max |A[π(i)][π(j)] − A[i][j]|` over all ordered pairs.
    pub fn raw_deviation(&self, perm: &Permutation) -> Result<T, GraphError> {
        if perm.len() != self.n {
            return Err(GraphError::LengthMismatch {
                expected: self.n,
                got: perm.len(),
            });
        }
        let mut worst = T::ZERO;
        for i in 0..self.n {
            let pi = perm.apply(i);
            let row = self.row(i);
            let prow = self.row(pi);
            for (j, &a) in row.iter().enumerate() {
                let d = prow[perm.apply(j)].abs_diff(a);
                if d > worst {
                    worst = d;
                }
            }
        }
        Ok(worst)
    }

    pub fn deviation(&self, perm: &Permutation) -> Result<Deviation, GraphError> {
        Ok(self.to_deviation(self.raw_deviation(perm)?))
    }
}

/// Exact co-occurrence counts of an observation set.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConcurrenceGraph {
    n: usize,
    total_observations: u64,
    /// `n × n`, pair counts off the diagonal, node counts on it.
    counts: Vec<u64>,
}

impl ConcurrenceGraph {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn total_observations(&self) -> u64 {
        self.total_observations
    }

    pub fn node_count(&self, i: usize) -> u64 {
        self.counts[i * self.n + i]
    }

    pub fn pair_count(&self, i: usize, j: usize) -> u64 {
        self.counts[i * self.n + j]
    }

    /// Count numerator of `A[i][j]`.
    pub fn count(&self, i: usize, j: usize) -> u64 {
        self.counts[i * self.n + j]
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.count(i, j) as f64 / self.total_observations as f64
    }

    pub fn node_counts(&self) -> Vec<u64> {
        (0..self.n).map(|i| self.node_count(i)).collect()
    }

    /// Counts over `N`, compared exactly.
    pub fn exact_weights(&self) -> WeightMatrix<u64> {
        WeightMatrix {
            n: self.n,
            data: self.counts.clone(),
            scale: self.total_observations as f64,
        }
    }

    pub fn float_weights(&self) -> WeightMatrix<f64> {
        let total = self.total_observations as f64;
        WeightMatrix {
            n: self.n,
            data: self.counts.iter().map(|&c| c as f64 / total).collect(),
            scale: 1.0,
        }
    }

    /// Builds a graph from raw counts, checking every invariant.
    pub fn from_counts(
        total_observations: u64,
        node_counts: &[u64],
        pair_count: impl Fn(usize, usize) -> u64,
    ) -> Result<Self, GraphError> {
        let n = node_counts.len();
        let mut counts = vec![0u64; n * n];
        for i in 0..n {
            if node_counts[i] > total_observations {
                return Err(GraphError::Invalid(format!(
                    "node {i} count {} exceeds {total_observations} observations",
                    node_counts[i]
                )));
            }
            counts[i * n + i] = node_counts[i];
            for j in 0..i {
                let c = pair_count(i, j);
                if c > node_counts[i].min(node_counts[j]) {
                    return Err(GraphError::Invalid(format!(
                        "pair ({i}, {j}) count {c} exceeds a node count"
                    )));
                }
                counts[i * n + j] = c;
                counts[j * n + i] = c;
            }
        }
        Ok(ConcurrenceGraph {
            n,
            total_observations,
            counts,
        })
    }

    /// The four probabilities `Ψ_ij(0,0), Ψ_ij(0,1), Ψ_ij(1,0), Ψ_ij(1,1)`,
    /// where the first coordinate is feature `i`.
    pub fn marginal_pair(&self, i: usize, j: usize) -> Result<[Ratio<u64>; 4], GraphError> {
        let counts = self.marginal_counts(i, j)?;
        let total = self.total_observations;
        Ok(counts.map(|c| Ratio::new(c, total)))
    }

    /// Observation counts behind [`marginal_pair`](Self::marginal_pair).
    pub fn marginal_counts(&self, i: usize, j: usize) -> Result<[u64; 4], GraphError> {
        for node in [i, j] {
            if node >= self.n {
                return Err(GraphError::NodeOutOfRange { node, n: self.n });
            }
        }
        if i == j {
            return Err(GraphError::SameNode(i));
        }
        let both = self.pair_count(i, j);
        let only_i = self.node_count(i) - both;
        let only_j = self.node_count(j) - both;
        let neither = self.total_observations - both - only_i - only_j;
        Ok([neither, only_j, only_i, both])
    }

    /// Max-norm deviation of `perm`, exact.
    pub fn deviation(&self, perm: &Permutation) -> Result<Deviation, GraphError> {
        self.exact_weights().deviation(perm)
    }
}

/// Accumulates node and pair counts over all observations.
pub fn build_graph(observations: &ObservationSet) -> Result<ConcurrenceGraph, GraphError> {
    build_graph_from_images(observations.images(), observations.dims())
}

pub fn build_graph_from_images(images: &[BitImage], dims: (usize, usize, usize)) -> Result<ConcurrenceGraph, GraphError> {
    if images.is_empty() {
        return Err(GraphError::Empty);
    }
    if let Some((index, img)) = images.iter().enumerate().find(|(_, img)| img.dims() != dims) {
        return Err(GraphError::DimensionMismatch {
            index,
            expected: dims,
            got: img.dims(),
        });
    }
    let n = dims.0 * dims.1 * dims.2;
    let shard = images.len().div_ceil(rayon::current_num_threads() * 4).max(256);
    let accumulate = |chunk: &[BitImage]| {
        // upper triangle including the diagonal, row-major in a full n×n buffer
        let mut counts = vec![0u64; n * n];
        let mut ones = Vec::with_capacity(64);
        for img in chunk {
            ones.clear();
            ones.extend(img.ones());
            for (a, &i) in ones.iter().enumerate() {
                let row = &mut counts[i * n..(i + 1) * n];
                for &j in &ones[a..] {
                    row[j] += 1;
                }
            }
        }
        counts
    };
    let mut counts = images
        .par_chunks(shard)
        .map(accumulate)
        .reduce_with(|mut a, b| {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
            a
        })
        .expect("non-empty");
    for i in 0..n {
        for j in 0..i {
            counts[i * n + j] = counts[j * n + i];
        }
    }
    Ok(ConcurrenceGraph {
        n,
        total_observations: images.len() as u64,
        counts,
    })
}

#[derive(Serialize, Deserialize)]
struct GraphJson {
    n: usize,
    total_observations: u64,
    node_counts: Vec<u64>,
    /// Strict lower triangle, row-major: (1,0), (2,0), (2,1), ...
    pair_counts: Vec<u64>,
}

impl Serialize for ConcurrenceGraph {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut pair_counts = Vec::with_capacity(self.n * self.n.saturating_sub(1) / 2);
        for i in 1..self.n {
            for j in 0..i {
                pair_counts.push(self.pair_count(i, j));
            }
        }
        GraphJson {
            n: self.n,
            total_observations: self.total_observations,
            node_counts: self.node_counts(),
            pair_counts,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for ConcurrenceGraph {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let g = GraphJson::deserialize(d)?;
        if g.node_counts.len() != g.n {
            return Err(D::Error::custom("node_counts length differs from n"));
        }
        if g.pair_counts.len() != g.n * g.n.saturating_sub(1) / 2 {
            return Err(D::Error::custom("pair_counts is not a strict lower triangle"));
        }
        ConcurrenceGraph::from_counts(g.total_observations, &g.node_counts, |i, j| {
            g.pair_counts[i * (i - 1) / 2 + j]
        })
        .map_err(D::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::worlds::{WorldKind, WorldSpec};

    fn graph_of(images: &[&[usize]], n: usize) -> ConcurrenceGraph {
        let imgs: Vec<BitImage> = images
            .iter()
            .map(|bits| {
                let mut img = BitImage::new(n, 1, 1);
                bits.iter().for_each(|&b| img.set_bit(b));
                img
            })
            .collect();
        build_graph_from_images(&imgs, (n, 1, 1)).unwrap()
    }

    #[test]
    fn single_observation() {
        let g = graph_of(&[&[3, 7]], 10);
        assert_eq!(g.node_count(3), 1);
        assert_eq!(g.node_count(7), 1);
        assert_eq!(g.pair_count(3, 7), 1);
        assert_eq!(g.pair_count(7, 3), 1);
        let nonzero = (0..10)
            .flat_map(|i| (0..10).map(move |j| (i, j)))
            .filter(|&(i, j)| g.count(i, j) > 0)
            .count();
        assert_eq!(nonzero, 4);
    }

    #[test]
    fn unused_feature_has_zero_weights() {
        let g = graph_of(&[&[0, 1], &[1, 2], &[0, 2]], 4);
        assert_eq!(g.weight(3, 3), 0.0);
        assert!((0..4).all(|j| g.weight(3, j) == 0.0));
    }

    #[test]
    fn marginal_pair_toy_tally() {
        // four observations over (i, j) = (0, 1): (1,1), (1,1), (0,1), (0,0)
        let g = graph_of(&[&[0, 1], &[0, 1], &[1], &[]], 2);
        assert_eq!((g.node_count(0), g.node_count(1), g.pair_count(0, 1)), (2, 3, 2));
        let p = g.marginal_pair(0, 1).unwrap();
        let q = |a, b| Ratio::new(a, b);
        assert_eq!(p, [q(1, 4), q(1, 4), q(0, 1), q(1, 2)]);
        assert_eq!(p.iter().copied().sum::<Ratio<u64>>(), Ratio::from_integer(1));
    }

    #[test]
    fn marginal_pair_of_silent_features() {
        let g = graph_of(&[&[0]], 3);
        let p = g.marginal_pair(1, 2).unwrap();
        assert_eq!(p[0], Ratio::from_integer(1));
        assert!(p[1..].iter().all(|r| *r == Ratio::from_integer(0)));
        assert_eq!(g.marginal_pair(1, 1), Err(GraphError::SameNode(1)));
    }

    #[test]
    fn dimension_mismatch_detected() {
        let a = BitImage::new(3, 1, 1);
        let b = BitImage::new(4, 1, 1);
        assert!(matches!(
            build_graph_from_images(&[a, b], (3, 1, 1)),
            Err(GraphError::DimensionMismatch { index: 1, .. })
        ));
        assert_eq!(build_graph_from_images(&[], (3, 1, 1)), Err(GraphError::Empty));
    }

    #[test]
    fn json_round_trip_is_exact() {
        let g = graph_of(&[&[0, 1, 4], &[1, 2], &[0, 2, 3, 4]], 5);
        let text = serde_json::to_string(&g).unwrap();
        assert!(text.contains("\"pair_counts\":[1,1,1,1,0,1,2,1,1,1]"));
        let back: ConcurrenceGraph = serde_json::from_str(&text).unwrap();
        assert_eq!(back, g);
        assert_eq!(serde_json::to_string(&back).unwrap(), text);
    }

    #[test]
    fn json_rejects_inconsistent_counts() {
        let bad = r#"{"n":2,"total_observations":1,"node_counts":[1,0],"pair_counts":[1]}"#;
        assert!(serde_json::from_str::<ConcurrenceGraph>(bad).is_err());
    }

    #[test]
    fn identity_deviation_is_zero() {
        let g = graph_of(&[&[0, 1], &[1, 2, 3]], 4);
        assert!(g.deviation(&Permutation::identity(4)).unwrap().is_zero());
        assert!(matches!(
            g.deviation(&Permutation::identity(3)),
            Err(GraphError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn exact_deviation_reports_ratio() {
        let g = graph_of(&[&[0, 1], &[1], &[1, 2]], 3);
        let swap = Permutation::from_images(vec![1, 0, 2]).unwrap();
        // node counts 1 and 3 swap places
        assert_eq!(
            g.deviation(&swap).unwrap(),
            Deviation::Exact {
                numerator: 2,
                denominator: 3
            }
        );
    }

    #[test]
    fn threshold_absorbs_rounding() {
        assert_eq!(u64::threshold(0.01 * 100_000.0), 1000);
        assert_eq!(u64::threshold(1048.5), 1048);
        assert_eq!(u64::threshold(0.0), 0);
        let d = Deviation::Exact {
            numerator: 1000,
            denominator: 100_000,
        };
        assert!(d.within(0.01));
        assert!(!d.within(0.0099));
    }

    #[test]
    fn t_world_horizontal_shift_preserves_counts() {
        let spec = WorldSpec::named(WorldKind::T);
        let obs = crate::worlds::enumerate_observations(&spec).unwrap();
        let g = build_graph(&obs).unwrap();
        let shift = Permutation::from_fn(200, |i| (i / 20) * 20 + (i % 20 + 1) % 20);
        for i in 0..200 {
            for j in 0..200 {
                assert_eq!(g.count(shift.apply(i), shift.apply(j)), g.count(i, j));
            }
        }
        assert!(g.deviation(&shift).unwrap().is_zero());
    }
}
