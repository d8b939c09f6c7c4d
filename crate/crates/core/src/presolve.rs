//! Depth-first construction of incomplete permutations by candidate-set
//! filtering.
//!
//! Every node keeps a set of potential targets. Committing `x ↦ x'`
//! restricts each other node `z` to the targets `z'` whose edge to `x'`
//! lies in the same weight bin as the edge `{x, z}`. A branch is discarded
//! once more than the tolerated fraction of nodes has no target left, and
//! emitted once every set holds at most one target.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::binning::BinSet;
use crate::concurrence::{Weight, WeightMatrix};
use crate::group::Permutation;

#[derive(Debug, Error, PartialEq)]
pub enum PresolveError {
    #[error("target {target} is not a candidate of node {node}")]
    NotACandidate { node: usize, target: usize },
    #[error("mapping is not injective: target {0} used twice")]
    NotInjective(usize),
    #[error("node {node} out of range for {n} nodes")]
    OutOfRange { node: usize, n: usize },
    #[error("fault tolerance {0} outside [0, 1)")]
    BadFaultTolerance(f64),
}

/// An injective partial map from source nodes to target nodes.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct IncompletePermutation {
    mapping: Vec<Option<u32>>,
}

impl IncompletePermutation {
    pub fn empty(n: usize) -> Self {
        IncompletePermutation {
            mapping: vec![None; n],
        }
    }

    pub fn from_pairs(n: usize, pairs: &[(usize, usize)]) -> Result<Self, PresolveError> {
        let mut p = IncompletePermutation::empty(n);
        let mut used = vec![false; n];
        for &(s, t) in pairs {
            for node in [s, t] {
                if node >= n {
                    return Err(PresolveError::OutOfRange { node, n });
                }
            }
            if std::mem::replace(&mut used[t], true) {
                return Err(PresolveError::NotInjective(t));
            }
            p.mapping[s] = Some(t as u32);
        }
        Ok(p)
    }

    pub fn from_permutation(p: &Permutation) -> Self {
        IncompletePermutation {
            mapping: p.images().iter().map(|&t| Some(t)).collect(),
        }
    }

    /// Size of the underlying node set.
    pub fn len(&self) -> usize {
        self.mapping.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mapping.is_empty()
    }

    pub fn get(&self, source: usize) -> Option<usize> {
        self.mapping[source].map(|t| t as usize)
    }

    pub fn domain_size(&self) -> usize {
        self.mapping.iter().filter(|m| m.is_some()).count()
    }

    pub fn is_total(&self) -> bool {
        self.mapping.iter().all(Option::is_some)
    }

    /// Mapped `(source, target)` pairs in ascending source order.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.mapping
            .iter()
            .enumerate()
            .filter_map(|(s, t)| t.map(|t| (s, t as usize)))
    }

    pub fn to_permutation(&self) -> Option<Permutation> {
        if !self.is_total() {
            return None;
        }
        Permutation::from_images(self.pairs().map(|(_, t)| t).collect()).ok()
    }
}

impl Serialize for IncompletePermutation {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let map: BTreeMap<usize, usize> = self.pairs().collect();
        map.serialize(s)
    }
}

/// Bin index of every matrix entry, plus for each target row the node
/// sets `S_ℓ = {z' ≠ x' : bin(x', z') = ℓ}`.
pub struct BinTable {
    n: usize,
    words: usize,
    bins: Vec<u32>,
    /// Per row: `(bin, offset into pool)` sorted by bin.
    rows: Vec<Vec<(u32, usize)>>,
    pool: Vec<u64>,
}

impl BinTable {
    pub fn new<T: Weight>(weights: &WeightMatrix<T>, bins: &BinSet) -> Self {
        let n = weights.n();
        let words = n.div_ceil(64).max(1);
        let mut table = vec![0u32; n * n];
        for i in 0..n {
            for j in 0..n {
                table[i * n + j] = bins.index(weights.real(i, j)) as u32;
            }
        }
        let mut rows = Vec::with_capacity(n);
        let mut pool = Vec::new();
        for r in 0..n {
            let mut entries: Vec<(u32, usize)> = (0..n)
                .filter(|&z| z != r)
                .map(|z| (table[r * n + z], z))
                .collect();
            entries.sort_unstable();
            let mut row = Vec::new();
            for (bin, z) in entries {
                if row.last().map(|&(b, _)| b) != Some(bin) {
                    row.push((bin, pool.len()));
                    pool.resize(pool.len() + words, 0);
                }
                let off = row.last().unwrap().1;
                pool[off + z / 64] |= 1 << (z % 64);
            }
            rows.push(row);
        }
        BinTable {
            n,
            words,
            bins: table,
            rows,
            pool,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn bin(&self, i: usize, j: usize) -> u32 {
        self.bins[i * self.n + j]
    }

    fn set(&self, row: usize, bin: u32) -> Option<&[u64]> {
        let r = &self.rows[row];
        r.binary_search_by_key(&bin, |&(b, _)| b)
            .ok()
            .map(|k| &self.pool[r[k].1..r[k].1 + self.words])
    }
}

/// Candidate target sets of all nodes, as fixed-width bitsets.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CandidateState {
    n: usize,
    words: usize,
    bits: Vec<u64>,
    sizes: Vec<u32>,
    /// Nodes whose singleton commitment has already been propagated.
    settled: Vec<u64>,
    fault_count: usize,
}

impl CandidateState {
    /// Every node may map to every node.
    pub fn full(n: usize) -> Self {
        let words = n.div_ceil(64).max(1);
        let mut row = vec![u64::MAX; words];
        if !n.is_multiple_of(64) {
            row[words - 1] = (1u64 << (n % 64)) - 1;
        }
        let bits = row.iter().copied().cycle().take(n * words).collect();
        CandidateState {
            n,
            words,
            bits,
            sizes: vec![n as u32; n],
            settled: vec![0; words],
            fault_count: 0,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn fault_count(&self) -> usize {
        self.fault_count
    }

    pub fn size(&self, node: usize) -> usize {
        self.sizes[node] as usize
    }

    pub fn contains(&self, node: usize, target: usize) -> bool {
        self.bits[node * self.words + target / 64] >> (target % 64) & 1 == 1
    }

    pub fn candidates(&self, node: usize) -> Vec<usize> {
        let row = &self.bits[node * self.words..(node + 1) * self.words];
        let mut out = Vec::with_capacity(self.size(node));
        for (k, &w) in row.iter().enumerate() {
            let mut w = w;
            while w != 0 {
                out.push(k * 64 + w.trailing_zeros() as usize);
                w &= w - 1;
            }
        }
        out
    }

    fn first(&self, node: usize) -> Option<usize> {
        let row = &self.bits[node * self.words..(node + 1) * self.words];
        row.iter()
            .enumerate()
            .find(|(_, &w)| w != 0)
            .map(|(k, &w)| k * 64 + w.trailing_zeros() as usize)
    }

    fn is_settled(&self, node: usize) -> bool {
        self.settled[node / 64] >> (node % 64) & 1 == 1
    }

    fn settle(&mut self, node: usize) {
        self.settled[node / 64] |= 1 << (node % 64);
    }

    fn clear(&mut self, node: usize) {
        let row = &mut self.bits[node * self.words..(node + 1) * self.words];
        row.fill(0);
        if self.sizes[node] != 0 {
            self.sizes[node] = 0;
            self.fault_count += 1;
        }
    }

    fn restrict(&mut self, node: usize, set: Option<&[u64]>) {
        if self.sizes[node] == 0 {
            return;
        }
        let Some(set) = set else {
            self.clear(node);
            return;
        };
        let row = &mut self.bits[node * self.words..(node + 1) * self.words];
        let mut size = 0;
        for (a, &b) in row.iter_mut().zip(set) {
            *a &= b;
            size += a.count_ones();
        }
        self.sizes[node] = size;
        if size == 0 {
            self.fault_count += 1;
        }
    }

    /// Applies the bin filter for the commitment `x ↦ target` in place.
    fn commit(&mut self, table: &BinTable, x: usize, target: usize) {
        for z in 0..self.n {
            if z != x {
                let bin = table.bin(x, z);
                self.restrict(z, table.set(target, bin));
            }
        }
        // node weights act as the self-edge of x
        self.clear(x);
        if table.bin(x, x) == table.bin(target, target) {
            self.bits[x * self.words + target / 64] |= 1 << (target % 64);
            self.sizes[x] = 1;
            self.fault_count -= 1;
        }
        self.settle(x);
    }

    /// Commits every unsettled singleton until none is left.
    fn propagate_singletons(&mut self, table: &BinTable) {
        loop {
            let next = (0..self.n).find(|&z| self.sizes[z] == 1 && !self.is_settled(z));
            let Some(z) = next else { break };
            let target = self.first(z).unwrap();
            self.commit(table, z, target);
        }
    }

    /// Empties the later of any two singleton sets sharing a target.
    fn resolve_collisions(&mut self) {
        let mut owner = vec![u64::MAX; self.words];
        for z in 0..self.n {
            if self.sizes[z] != 1 {
                continue;
            }
            let t = self.first(z).unwrap();
            let bit = 1u64 << (t % 64);
            if owner[t / 64] & bit == 0 {
                self.clear(z);
            } else {
                owner[t / 64] &= !bit;
            }
        }
    }

    /// The node with the fewest candidates above one, lowest index first.
    fn branch_node(&self) -> Option<usize> {
        (0..self.n)
            .filter(|&z| self.sizes[z] > 1)
            .min_by_key(|&z| (self.sizes[z], z))
    }

    fn to_partial(&self) -> IncompletePermutation {
        IncompletePermutation {
            mapping: (0..self.n)
                .map(|z| (self.sizes[z] == 1).then(|| self.first(z).unwrap() as u32))
                .collect(),
        }
    }
}

/// One filtering step for the commitment `x ↦ x_target`.
pub fn propagate(state: &CandidateState, table: &BinTable, x: usize, x_target: usize) -> Result<CandidateState, PresolveError> {
    let n = state.n();
    for node in [x, x_target] {
        if node >= n {
            return Err(PresolveError::OutOfRange { node, n });
        }
    }
    if !state.contains(x, x_target) {
        return Err(PresolveError::NotACandidate {
            node: x,
            target: x_target,
        });
    }
    let mut next = state.clone();
    next.commit(table, x, x_target);
    Ok(next)
}

#[derive(Clone, Debug)]
pub struct PresolveOptions {
    /// Largest tolerated fraction of nodes without any target.
    pub fault_tolerance: f64,
    /// Also propagate sets that shrink to a single target, not only the
    /// branching commitments.
    pub propagate_singletons: bool,
    pub deadline: Option<Instant>,
    /// Stop after this many emitted permutations.
    pub max_results: Option<usize>,
}

impl PresolveOptions {
    pub fn new(fault_tolerance: f64) -> Self {
        PresolveOptions {
            fault_tolerance,
            propagate_singletons: true,
            deadline: None,
            max_results: None,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct PresolveOutcome {
    /// Deduplicated, in ascending mapping order.
    pub permutations: Vec<IncompletePermutation>,
    pub nodes_explored: u64,
    pub timed_out: bool,
    pub truncated: bool,
}

struct Search<'a> {
    table: &'a BinTable,
    max_faults: usize,
    singletons: bool,
    deadline: Option<Instant>,
    max_results: usize,
    stop: AtomicBool,
    timed_out: AtomicBool,
    truncated: AtomicBool,
    emitted: AtomicUsize,
    nodes: AtomicU64,
}

impl Search<'_> {
    fn should_stop(&self) -> bool {
        if self.stop.load(Ordering::Relaxed) {
            return true;
        }
        if let Some(d) = self.deadline {
            if Instant::now() >= d {
                self.timed_out.store(true, Ordering::Relaxed);
                self.stop.store(true, Ordering::Relaxed);
                return true;
            }
        }
        false
    }

    /// Normalizes a freshly filtered state; `false` if it must be discarded.
    fn settle(&self, state: &mut CandidateState) -> bool {
        if self.singletons {
            state.propagate_singletons(self.table);
        }
        state.resolve_collisions();
        state.fault_count <= self.max_faults
    }

    fn recurse(&self, mut state: CandidateState, out: &mut Vec<IncompletePermutation>) {
        self.nodes.fetch_add(1, Ordering::Relaxed);
        if self.should_stop() || !self.settle(&mut state) {
            return;
        }
        match state.branch_node() {
            None => self.emit(state.to_partial(), out),
            Some(x) => {
                for target in state.candidates(x) {
                    let mut child = state.clone();
                    child.commit(self.table, x, target);
                    self.recurse(child, out);
                    if self.stop.load(Ordering::Relaxed) {
                        return;
                    }
                }
            }
        }
    }

    fn emit(&self, p: IncompletePermutation, out: &mut Vec<IncompletePermutation>) {
        if self.emitted.fetch_add(1, Ordering::Relaxed) >= self.max_results {
            self.truncated.store(true, Ordering::Relaxed);
            self.stop.store(true, Ordering::Relaxed);
            return;
        }
        out.push(p);
    }
}

/// Largest fault count allowed by a tolerance: a state is discarded when
/// `faults / n` strictly exceeds it.
pub fn max_faults(n: usize, fault_tolerance: f64) -> usize {
    (0..=n)
        .take_while(|&k| k as f64 / n.max(1) as f64 <= fault_tolerance)
        .last()
        .unwrap_or(0)
}

/// Runs the exhaustive search with explicit options. Top-level branches
/// run in parallel; the merged output is independent of scheduling unless
/// a deadline or result cap cuts the search short.
pub fn presolve(table: &BinTable, options: &PresolveOptions) -> Result<PresolveOutcome, PresolveError> {
    let ft = options.fault_tolerance;
    if !(0.0..1.0).contains(&ft) {
        return Err(PresolveError::BadFaultTolerance(ft));
    }
    let n = table.n();
    let search = Search {
        table,
        max_faults: max_faults(n, ft),
        singletons: options.propagate_singletons,
        deadline: options.deadline,
        max_results: options.max_results.unwrap_or(usize::MAX),
        stop: AtomicBool::new(false),
        timed_out: AtomicBool::new(false),
        truncated: AtomicBool::new(false),
        emitted: AtomicUsize::new(0),
        nodes: AtomicU64::new(1),
    };

    let mut root = CandidateState::full(n);
    let mut found = Vec::new();
    if search.settle(&mut root) {
        match root.branch_node() {
            None => found.push(root.to_partial()),
            Some(x) => {
                let branches: Vec<Vec<IncompletePermutation>> = root
                    .candidates(x)
                    .into_par_iter()
                    .map(|target| {
                        let mut out = Vec::new();
                        let mut child = root.clone();
                        child.commit(table, x, target);
                        search.recurse(child, &mut out);
                        out
                    })
                    .collect();
                found = branches.into_iter().flatten().collect();
            }
        }
    }
    found.sort_unstable();
    found.dedup();
    Ok(PresolveOutcome {
        permutations: found,
        nodes_explored: search.nodes.load(Ordering::Relaxed),
        timed_out: search.timed_out.load(Ordering::Relaxed),
        truncated: search.truncated.load(Ordering::Relaxed),
    })
}

/// All incomplete permutations reachable from the full candidate state.
pub fn find_incomplete_permutations<T: Weight>(
    weights: &WeightMatrix<T>,
    bins: &BinSet,
    fault_tolerance: f64,
) -> Result<Vec<IncompletePermutation>, PresolveError> {
    let table = BinTable::new(weights, bins);
    Ok(presolve(&table, &PresolveOptions::new(fault_tolerance))?.permutations)
}
