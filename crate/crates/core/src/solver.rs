//! Completion of an incomplete permutation to a full permutation with
//! minimal max-norm deviation, by branch and bound over assignments.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::concurrence::{Deviation, Weight, WeightMatrix};
use crate::group::Permutation;
use crate::presolve::IncompletePermutation;

#[derive(Debug, Error, PartialEq)]
pub enum SolveError {
    #[error("problem over {problem} nodes applied to a matrix with {matrix} nodes")]
    SizeMismatch { problem: usize, matrix: usize },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveMode {
    #[default]
    Minimize,
    #[serde(rename = "first-feasible", alias = "first-below-limit")]
    FirstBelowLimit,
}

impl std::str::FromStr for SolveMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "minimize" => Ok(SolveMode::Minimize),
            "first-feasible" | "first-below-limit" => Ok(SolveMode::FirstBelowLimit),
            _ => Err(format!("unknown solve mode {s:?} (expected minimize or first-feasible)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    /// Proven minimum over all completions.
    Optimal,
    /// A completion within the error limit.
    LimitSatisfied,
    /// No completion is within the error limit; the proven minimum is returned.
    Infeasible,
    /// Deadline reached; the best completion seen so far is returned.
    Timeout,
}

/// The completion problem restricted to unmapped sources and unused targets.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReducedProblem {
    fixed: IncompletePermutation,
    free_sources: Vec<usize>,
    free_targets: Vec<usize>,
}

impl ReducedProblem {
    pub fn new(fixed: IncompletePermutation) -> Self {
        let n = fixed.len();
        let mut hit = vec![false; n];
        let mut free_sources = Vec::new();
        for s in 0..n {
            match fixed.get(s) {
                Some(t) => hit[t] = true,
                None => free_sources.push(s),
            }
        }
        let free_targets = (0..n).filter(|&t| !hit[t]).collect();
        ReducedProblem {
            fixed,
            free_sources,
            free_targets,
        }
    }

    /// No fixed pairs: the full problem.
    pub fn unconstrained(n: usize) -> Self {
        ReducedProblem::new(IncompletePermutation::empty(n))
    }

    pub fn n(&self) -> usize {
        self.fixed.len()
    }

    pub fn fixed(&self) -> &IncompletePermutation {
        &self.fixed
    }

    pub fn free_sources(&self) -> &[usize] {
        &self.free_sources
    }

    pub fn free_targets(&self) -> &[usize] {
        &self.free_targets
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SolveResult {
    pub permutation: Permutation,
    pub deviation: Deviation,
    pub node_count: u64,
    pub status: SolveStatus,
}

/// Sizes of the linearized max-norm program over `n` nodes:
/// `(2n², 2n² + 2n, n² + 1)` for the linear expressions, the constraints
/// and the variables.
pub fn linear_constraint_count(n: usize) -> (usize, usize, usize) {
    (2 * n * n, 2 * n * n + 2 * n, n * n + 1)
}

#[inline]
fn max<T: Weight>(a: T, b: T) -> T {
    if b > a {
        b
    } else {
        a
    }
}

const NONE: usize = usize::MAX;

fn augment(a: usize, k: usize, ok: &dyn Fn(usize, usize) -> bool, seen: &mut [bool], row_of: &mut [usize], col_of: &mut [usize]) -> bool {
    for b in 0..k {
        if seen[b] || !ok(a, b) {
            continue;
        }
        seen[b] = true;
        if col_of[b] == NONE || augment(col_of[b], k, ok, seen, row_of, col_of) {
            row_of[a] = b;
            col_of[b] = a;
            return true;
        }
    }
    false
}

/// Extends `row_of` (row to column, `NONE` if unmatched) to a perfect
/// matching over the allowed cells. Pairs that are no longer allowed are
/// dropped first.
fn perfect_matching(k: usize, ok: &dyn Fn(usize, usize) -> bool, row_of: &mut [usize]) -> bool {
    let mut col_of = vec![NONE; k];
    for (a, b) in row_of.iter_mut().enumerate() {
        if *b != NONE && ok(a, *b) {
            col_of[*b] = a;
        } else {
            *b = NONE;
        }
    }
    let mut seen = vec![false; k];
    for a in 0..k {
        if row_of[a] == NONE {
            seen.fill(false);
            if !augment(a, k, ok, &mut seen, row_of, &mut col_of) {
                return false;
            }
        }
    }
    true
}

/// Smallest value `v` such that every row can take a distinct column with
/// cost at most `v`, together with such an assignment.
fn bottleneck_assignment<T: Weight>(k: usize, cost: &[T]) -> (T, Vec<usize>) {
    let mut values = cost.to_vec();
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    values.dedup();
    let (mut lo, mut hi) = (0, values.len() - 1);
    let mut found = vec![NONE; k];
    assert!(perfect_matching(k, &|a, b| cost[a * k + b] <= values[hi], &mut found));
    while lo < hi {
        let mid = (lo + hi) / 2;
        let mut m = found.clone();
        if perfect_matching(k, &|a, b| cost[a * k + b] <= values[mid], &mut m) {
            hi = mid;
            found = m;
        } else {
            lo = mid + 1;
        }
    }
    (values[hi], found)
}

struct Bnb<'a, T: Weight> {
    w: &'a WeightMatrix<T>,
    /// Current target of each source, `NONE` when free.
    image: Vec<usize>,
    best: Option<(T, Vec<usize>)>,
    /// Stop at the first leaf with raw deviation at most this.
    accept_at: Option<T>,
    /// Stop as soon as the incumbent reaches this bound.
    floor: T,
    deadline: Option<Instant>,
    nodes: u64,
    timed_out: bool,
    done: bool,
}

impl<T: Weight> Bnb<'_, T> {
    fn admissible(&self, value: T) -> bool {
        match (&self.accept_at, &self.best) {
            (Some(limit), _) => value <= *limit,
            (None, Some((best, _))) => value < *best,
            (None, None) => true,
        }
    }

    fn offer(&mut self, value: T, image: Vec<usize>) {
        if self.admissible(value) {
            self.best = Some((value, image));
            if self.accept_at.is_some() || value <= self.floor {
                self.done = true;
            }
        }
    }

    /// `cost` is row-major `sources × targets`: the deviation added by
    /// mapping each free source to each free target, given every pair
    /// assigned so far. `matching` is a row-to-column hint.
    fn dfs(&mut self, bound: T, sources: &[usize], targets: &[usize], cost: &[T], mut matching: Vec<usize>) {
        self.nodes += 1;
        if self.done {
            return;
        }
        if let Some(d) = self.deadline {
            if self.nodes.is_multiple_of(256) && Instant::now() >= d {
                self.timed_out = true;
                self.done = true;
                return;
            }
        }
        let k = sources.len();
        if k == 0 {
            self.offer(bound, self.image.clone());
            return;
        }
        // some distinct target for every source must stay admissible
        let ok = |a: usize, b: usize| self.admissible(max(bound, cost[a * k + b]));
        if !perfect_matching(k, &ok, &mut matching) {
            return;
        }

        // source with the fewest admissible targets, lowest index on ties
        let mut pick = (0, usize::MAX);
        for a in 0..k {
            let count = (0..k).filter(|&b| ok(a, b)).count();
            if count < pick.1 {
                pick = (a, count);
            }
        }
        let a = pick.0;
        let s = sources[a];
        let row = &cost[a * k..(a + 1) * k];
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&x, &y| row[x].partial_cmp(&row[y]).unwrap().then(targets[x].cmp(&targets[y])));

        let rest_sources: Vec<usize> = sources.iter().copied().filter(|&z| z != s).collect();
        for b in order {
            let next_bound = max(bound, row[b]);
            if !self.admissible(next_bound) {
                continue;
            }
            let t = targets[b];
            let rest_targets: Vec<usize> = targets.iter().copied().filter(|&z| z != t).collect();
            let mut next = Vec::with_capacity((k - 1) * (k - 1));
            let mut hint = Vec::with_capacity(k - 1);
            for (a2, &s2) in sources.iter().enumerate() {
                if a2 == a {
                    continue;
                }
                let m = matching[a2];
                hint.push(if m == b || m == NONE { NONE } else { m - usize::from(m > b) });
                let (ws2_s, ws_s2) = (self.w.get(s2, s), self.w.get(s, s2));
                for (b2, &t2) in targets.iter().enumerate() {
                    if b2 == b {
                        continue;
                    }
                    let c = cost[a2 * k + b2];
                    let d1 = self.w.get(t2, t).abs_diff(ws2_s);
                    let d2 = self.w.get(t, t2).abs_diff(ws_s2);
                    next.push(max(c, max(d1, d2)));
                }
            }
            self.image[s] = t;
            self.dfs(next_bound, &rest_sources, &rest_targets, &next, hint);
            self.image[s] = NONE;
            if self.done {
                return;
            }
        }
    }
}

/// Completes `problem` with the deviation computed on `weights`.
pub fn solve_reduced<T: Weight>(
    weights: &WeightMatrix<T>,
    problem: &ReducedProblem,
    error_limit: f64,
    mode: SolveMode,
) -> Result<SolveResult, SolveError> {
    solve_reduced_until(weights, problem, error_limit, mode, None)
}

/// As [`solve_reduced`], giving up at `deadline` with status `Timeout`.
pub fn solve_reduced_until<T: Weight>(
    weights: &WeightMatrix<T>,
    problem: &ReducedProblem,
    error_limit: f64,
    mode: SolveMode,
    deadline: Option<Instant>,
) -> Result<SolveResult, SolveError> {
    let n = weights.n();
    if problem.n() != n {
        return Err(SolveError::SizeMismatch {
            problem: problem.n(),
            matrix: n,
        });
    }
    let fixed: Vec<(usize, usize)> = problem.fixed.pairs().collect();
    let sources = &problem.free_sources;
    let targets = &problem.free_targets;
    let k = sources.len();

    let mut fixed_bound = T::ZERO;
    for &(i, pi) in &fixed {
        for &(j, pj) in &fixed {
            fixed_bound = max(fixed_bound, weights.get(pi, pj).abs_diff(weights.get(i, j)));
        }
    }
    let mut cost = Vec::with_capacity(k * k);
    for &s in sources {
        for &t in targets {
            let mut c = weights.get(t, t).abs_diff(weights.get(s, s));
            for &(j, pj) in &fixed {
                c = max(c, weights.get(t, pj).abs_diff(weights.get(s, j)));
                c = max(c, weights.get(pj, t).abs_diff(weights.get(j, s)));
            }
            cost.push(c);
        }
    }

    let mut image = vec![NONE; n];
    for &(s, t) in &fixed {
        image[s] = t;
    }
    let limit = weights.threshold(error_limit);
    let mut bnb = Bnb {
        w: weights,
        image: image.clone(),
        best: None,
        accept_at: (mode == SolveMode::FirstBelowLimit).then_some(limit),
        floor: fixed_bound,
        deadline,
        nodes: 0,
        timed_out: false,
        done: false,
    };

    // the bottleneck assignment bounds every completion from below, and
    // completing along it gives a first incumbent
    let mut hint = Vec::new();
    if k > 0 {
        let (bottleneck, rows) = bottleneck_assignment(k, &cost);
        bnb.floor = max(fixed_bound, bottleneck);
        for (a, &b) in rows.iter().enumerate() {
            image[sources[a]] = targets[b];
        }
        let p = Permutation::from_images(image.clone()).expect("assignment is a bijection");
        let dev = weights.raw_deviation(&p).expect("sizes checked");
        bnb.offer(dev, image);
        hint = rows;
    }
    bnb.dfs(fixed_bound, sources, targets, &cost, hint.clone());

    let mut status = SolveStatus::Optimal;
    if mode == SolveMode::FirstBelowLimit {
        if bnb.best.is_some() {
            status = SolveStatus::LimitSatisfied;
        } else if !bnb.timed_out {
            // nothing within the limit: prove the minimum instead
            status = SolveStatus::Infeasible;
            bnb.accept_at = None;
            bnb.done = false;
            bnb.dfs(fixed_bound, sources, targets, &cost, hint);
        }
    }
    if bnb.timed_out {
        status = SolveStatus::Timeout;
    }

    let image = match bnb.best {
        Some((_, image)) => image,
        None => {
            // timed out before reaching any leaf
            let mut image = bnb.image;
            for (&s, &t) in sources.iter().zip(targets) {
                image[s] = t;
            }
            image
        }
    };
    let permutation = Permutation::from_images(image).expect("assignment is a bijection");
    let deviation = weights
        .deviation(&permutation)
        .expect("permutation matches the matrix size");
    Ok(SolveResult {
        permutation,
        deviation,
        node_count: bnb.nodes,
        status,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cycle4() -> WeightMatrix<u64> {
        WeightMatrix::from_fn(4, 1.0, |i, j| {
            if i == j {
                2
            } else if (i + 1) % 4 == j || (j + 1) % 4 == i {
                1
            } else {
                0
            }
        })
    }

    fn all_permutations(n: usize) -> Vec<Vec<usize>> {
        fn rec(prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
            if prefix.len() == used.len() {
                out.push(prefix.clone());
                return;
            }
            for t in 0..used.len() {
                if !used[t] {
                    used[t] = true;
                    prefix.push(t);
                    rec(prefix, used, out);
                    prefix.pop();
                    used[t] = false;
                }
            }
        }
        let mut out = Vec::new();
        rec(&mut Vec::new(), &mut vec![false; n], &mut out);
        out
    }

    fn exhaustive_min(w: &WeightMatrix<u64>) -> u64 {
        all_permutations(w.n())
            .into_iter()
            .map(|p| w.raw_deviation(&Permutation::from_images(p).unwrap()).unwrap())
            .min()
            .unwrap()
    }

    fn random_matrix(rng: &mut ChaCha8Rng, n: usize, levels: u64) -> WeightMatrix<u64> {
        WeightMatrix::symmetric(n, levels as f64, |_, _| rng.gen_range(0..levels))
    }

    #[test]
    fn constraint_counts() {
        assert_eq!(linear_constraint_count(1), (2, 4, 2));
        assert_eq!(linear_constraint_count(10), (200, 220, 101));
        assert_eq!(linear_constraint_count(200), (80000, 80400, 40001));
    }

    #[test]
    fn total_fixed_map_is_returned() {
        let w = cycle4();
        let fixed = IncompletePermutation::from_pairs(4, &[(0, 1), (1, 0), (2, 2), (3, 3)]).unwrap();
        let r = solve_reduced(&w, &ReducedProblem::new(fixed), 0.0, SolveMode::Minimize).unwrap();
        assert_eq!(r.permutation.images(), &[1, 0, 2, 3]);
        assert_eq!(r.deviation, w.deviation(&r.permutation).unwrap());
        assert!(!r.deviation.is_zero());
    }

    #[test]
    fn four_cycle_completion() {
        let w = cycle4();
        let fixed = IncompletePermutation::from_pairs(4, &[(0, 1)]).unwrap();
        let r = solve_reduced(&w, &ReducedProblem::new(fixed), 0.0, SolveMode::Minimize).unwrap();
        assert!(r.deviation.is_zero());
        assert_eq!(r.permutation.apply(0), 1);
        assert_eq!(r.status, SolveStatus::Optimal);
    }

    #[test]
    fn matches_exhaustive_minimum() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..60 {
            let n = rng.gen_range(1..=7);
            let w = random_matrix(&mut rng, n, 5);
            let r = solve_reduced(&w, &ReducedProblem::unconstrained(n), 0.0, SolveMode::Minimize).unwrap();
            let Deviation::Exact { numerator, .. } = r.deviation else {
                panic!("exact matrix gave a float deviation")
            };
            assert_eq!(numerator, exhaustive_min(&w));
        }
    }

    #[test]
    fn extension_is_respected() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..40 {
            let w = random_matrix(&mut rng, 6, 3);
            let fixed = IncompletePermutation::from_pairs(6, &[(0, 3), (4, 1)]).unwrap();
            let r = solve_reduced(&w, &ReducedProblem::new(fixed.clone()), 0.0, SolveMode::Minimize).unwrap();
            assert!(r.permutation.extends(&fixed));
        }
    }

    #[test]
    fn first_below_limit_modes() {
        let w = cycle4();
        let r = solve_reduced(&w, &ReducedProblem::unconstrained(4), 0.0, SolveMode::FirstBelowLimit).unwrap();
        assert_eq!(r.status, SolveStatus::LimitSatisfied);
        assert!(r.deviation.is_zero());

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let w = WeightMatrix::symmetric(5, 100.0, |_, _| rng.gen_range(0..100u64));
        let best = exhaustive_min(&w);
        let tight = (best as f64 - 1.0) / 100.0;
        if best > 0 {
            let r = solve_reduced(&w, &ReducedProblem::unconstrained(5), tight, SolveMode::FirstBelowLimit).unwrap();
            assert_eq!(r.status, SolveStatus::Infeasible);
            assert_eq!(w.raw_deviation(&r.permutation).unwrap(), best);
        }
        let loose = solve_reduced(&w, &ReducedProblem::unconstrained(5), 1.0, SolveMode::FirstBelowLimit).unwrap();
        assert_eq!(loose.status, SolveStatus::LimitSatisfied);
    }

    #[test]
    fn size_mismatch_is_reported() {
        let w = cycle4();
        assert_eq!(
            solve_reduced(&w, &ReducedProblem::unconstrained(3), 0.0, SolveMode::Minimize),
            Err(SolveError::SizeMismatch { problem: 3, matrix: 4 })
        );
    }

    #[test]
    fn float_weights_are_supported() {
        let w = WeightMatrix::from_fn(3, 1.0, |i, j| if i == j { 0.5 } else { 0.25 });
        let r = solve_reduced(&w, &ReducedProblem::unconstrained(3), 0.0, SolveMode::Minimize).unwrap();
        assert!(r.deviation.is_zero());
    }
}
