//! Permutations and explicitly enumerated permutation groups.

use std::collections::{HashSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::presolve::IncompletePermutation;
use crate::worlds::{pixel_index, rotate, Transform, WorldKind, WorldSpec};

#[derive(Debug, Error, PartialEq)]
pub enum GroupError {
    #[error("not a bijection on 0..{0}")]
    NotBijection(usize),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("group order exceeds the limit of {0} elements")]
    TooLarge(usize),
    #[error("no reference generators for custom worlds")]
    NoReference,
    #[error("no quarter turn on a {0}x{1} grid")]
    NoQuarterTurn(usize, usize),
}

/// A bijection on `0..n`, stored as its image array.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "Vec<u32>", into = "Vec<u32>")]
pub struct Permutation {
    image: Vec<u32>,
}

impl TryFrom<Vec<u32>> for Permutation {
    type Error = GroupError;

    fn try_from(image: Vec<u32>) -> Result<Self, GroupError> {
        Permutation::from_images(image.into_iter().map(|v| v as usize).collect())
    }
}

impl From<Permutation> for Vec<u32> {
    fn from(p: Permutation) -> Self {
        p.image
    }
}

impl Permutation {
    pub fn identity(n: usize) -> Self {
        Permutation {
            image: (0..n as u32).collect(),
        }
    }

    pub fn from_images(image: Vec<usize>) -> Result<Self, GroupError> {
        let n = image.len();
        let mut seen = vec![false; n];
        for &v in &image {
            if v >= n || std::mem::replace(&mut seen[v], true) {
                return Err(GroupError::NotBijection(n));
            }
        }
        Ok(Permutation {
            image: image.into_iter().map(|v| v as u32).collect(),
        })
    }

    /// Builds `i ↦ f(i)`. Panics if `f` is not a bijection.
    pub fn from_fn(n: usize, f: impl Fn(usize) -> usize) -> Self {
        Permutation::from_images((0..n).map(f).collect()).expect("not a bijection")
    }

    pub fn len(&self) -> usize {
        self.image.len()
    }

    pub fn is_empty(&self) -> bool {
        self.image.is_empty()
    }

    #[inline]
    pub fn apply(&self, i: usize) -> usize {
        self.image[i] as usize
    }

    pub fn images(&self) -> &[u32] {
        &self.image
    }

    pub fn is_identity(&self) -> bool {
        self.image.iter().enumerate().all(|(i, &v)| i == v as usize)
    }

    /// `(self ∘ other)(i) = self(other(i))`.
    pub fn compose(&self, other: &Permutation) -> Result<Permutation, GroupError> {
        if self.len() != other.len() {
            return Err(GroupError::LengthMismatch(self.len(), other.len()));
        }
        Ok(Permutation {
            image: other.image.iter().map(|&j| self.image[j as usize]).collect(),
        })
    }

    pub fn inverse(&self) -> Permutation {
        let mut inv = vec![0u32; self.len()];
        for (i, &v) in self.image.iter().enumerate() {
            inv[v as usize] = i as u32;
        }
        Permutation { image: inv }
    }

    pub fn pow(&self, k: usize) -> Permutation {
        let mut out = Permutation::identity(self.len());
        for _ in 0..k {
            out = self.compose(&out).unwrap();
        }
        out
    }

    /// Non-trivial cycles, each starting at its smallest element.
    pub fn cycles(&self) -> Vec<Vec<usize>> {
        let mut seen = vec![false; self.len()];
        let mut out = Vec::new();
        for start in 0..self.len() {
            if seen[start] || self.apply(start) == start {
                continue;
            }
            let mut cycle = Vec::new();
            let mut i = start;
            while !seen[i] {
                seen[i] = true;
                cycle.push(i);
                i = self.apply(i);
            }
            out.push(cycle);
        }
        out
    }

    pub fn cycle_notation(&self) -> String {
        let cycles = self.cycles();
        if cycles.is_empty() {
            return "()".to_string();
        }
        cycles
            .iter()
            .map(|c| {
                let body: Vec<String> = c.iter().map(usize::to_string).collect();
                format!("({})", body.join(" "))
            })
            .collect()
    }

    /// Whether `self` agrees with `partial` on the partial map's domain.
    pub fn extends(&self, partial: &IncompletePermutation) -> bool {
        partial.len() == self.len() && partial.pairs().all(|(s, t)| self.apply(s) == t)
    }
}

impl fmt::Debug for Permutation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Permutation{}", self.cycle_notation())
    }
}

impl fmt::Display for Permutation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.cycle_notation())
    }
}

/// Default cap on explicitly enumerated group elements.
pub const DEFAULT_ORDER_LIMIT: usize = 20_000;

/// A permutation group held as its full element list plus the generators
/// it was closed from.
#[derive(Clone, Debug)]
pub struct PermutationGroup {
    n: usize,
    elements: Vec<Permutation>,
    index: HashSet<Permutation>,
    generators: Vec<Permutation>,
}

impl PermutationGroup {
    /// The trivial group on `n` points.
    pub fn trivial(n: usize) -> Self {
        let id = Permutation::identity(n);
        PermutationGroup {
            n,
            elements: vec![id.clone()],
            index: HashSet::from([id]),
            generators: Vec::new(),
        }
    }

    pub fn degree(&self) -> usize {
        self.n
    }

    pub fn order(&self) -> usize {
        self.elements.len()
    }

    pub fn elements(&self) -> &[Permutation] {
        &self.elements
    }

    pub fn generators(&self) -> &[Permutation] {
        &self.generators
    }

    pub fn contains(&self, p: &Permutation) -> bool {
        self.index.contains(p)
    }

    /// Adds a generator and extends the element set to the new closure.
    pub fn add_generator(&mut self, g: Permutation, limit: usize) -> Result<(), GroupError> {
        if g.len() != self.n {
            return Err(GroupError::LengthMismatch(self.n, g.len()));
        }
        self.generators.push(g);
        if self.contains(self.generators.last().unwrap()) {
            return Ok(());
        }
        // every element is a word in the generators, so multiplying all
        // known elements by all generators until fixpoint reaches the closure
        let mut queue: VecDeque<usize> = (0..self.elements.len()).collect();
        while let Some(k) = queue.pop_front() {
            for gi in 0..self.generators.len() {
                let next = self.generators[gi].compose(&self.elements[k])?;
                if self.index.insert(next.clone()) {
                    if self.elements.len() >= limit {
                        return Err(GroupError::TooLarge(limit));
                    }
                    self.elements.push(next);
                    queue.push_back(self.elements.len() - 1);
                }
            }
        }
        Ok(())
    }

    /// An element agreeing with `partial` on its whole domain, if any.
    pub fn matches_partial(&self, partial: &IncompletePermutation) -> Option<&Permutation> {
        if partial.len() != self.n {
            return None;
        }
        let first = partial.pairs().next();
        self.elements.iter().find(|e| match first {
            Some((s, t)) => e.apply(s) == t && e.extends(partial),
            None => true,
        })
    }
}

impl Serialize for PermutationGroup {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let mut st = s.serialize_struct("PermutationGroup", 2)?;
        st.serialize_field("order", &self.order())?;
        st.serialize_field("generators", &self.generators)?;
        st.end()
    }
}

/// Closes a generator list under composition.
pub fn close(generators: &[Permutation]) -> Result<PermutationGroup, GroupError> {
    close_bounded(generators, usize::MAX)
}

pub fn close_bounded(generators: &[Permutation], limit: usize) -> Result<PermutationGroup, GroupError> {
    let n = generators.first().map_or(0, Permutation::len);
    let mut group = PermutationGroup::trivial(n);
    for g in generators {
        group.add_generator(g.clone(), limit)?;
    }
    Ok(group)
}

/// Builds the pixel permutation `(x, y, c) ↦ f(x, y, c)` of a world.
pub fn pixel_permutation(spec: &WorldSpec, f: impl Fn(i64, i64, usize) -> (i64, i64, usize)) -> Permutation {
    let (w, h) = (spec.width, spec.height);
    Permutation::from_fn(spec.feature_count(), |i| {
        let plane = w * h;
        let (x, y, c) = ((i % plane % w) as i64, (i % plane / w) as i64, i / plane);
        let (x2, y2, c2) = f(x, y, c);
        pixel_index(w, h, x2, y2, c2)
    })
}

pub fn horizontal_shift(spec: &WorldSpec) -> Permutation {
    pixel_permutation(spec, |x, y, c| (x + 1, y, c))
}

pub fn vertical_shift(spec: &WorldSpec) -> Permutation {
    pixel_permutation(spec, |x, y, c| (x, y + 1, c))
}

/// Rotation about cell `(0, 0)` by `steps` quarter turns, matching the
/// word-rendering convention.
pub fn rotation(spec: &WorldSpec, steps: u8) -> Permutation {
    pixel_permutation(spec, move |x, y, c| {
        let (x, y) = rotate(x, y, steps);
        (x, y, c)
    })
}

/// A quarter turn of the pixel grid. Square grids rotate as a whole;
/// when one side is a multiple of the other, every square block of side
/// `min(w, h)` is rotated about its own corner.
pub fn quarter_turn(spec: &WorldSpec) -> Result<Permutation, GroupError> {
    let (w, h) = (spec.width, spec.height);
    let side = w.min(h);
    if side == 0 || w.max(h) % side != 0 {
        return Err(GroupError::NoQuarterTurn(w, h));
    }
    let side = side as i64;
    Ok(pixel_permutation(spec, move |x, y, c| {
        let (bx, by) = (x - x.rem_euclid(side), y - y.rem_euclid(side));
        let (rx, ry) = rotate(x - bx, y - by, 1);
        (bx + rx.rem_euclid(side), by + ry.rem_euclid(side), c)
    }))
}

pub fn color_map(spec: &WorldSpec, map: impl Fn(usize) -> usize) -> Permutation {
    pixel_permutation(spec, move |x, y, c| (x, y, map(c)))
}

/// Generators of the concurrence-graph symmetry group expected for a
/// named world: translations plus the 180° (or 90°) rotation, and the
/// color 3-cycle and swap for colored worlds.
pub fn reference_generators(spec: &WorldSpec) -> Result<Vec<Permutation>, GroupError> {
    if spec.kind == WorldKind::Custom {
        return Err(GroupError::NoReference);
    }
    let mut gens = vec![horizontal_shift(spec), vertical_shift(spec)];
    if spec.has(Transform::Rotation90Steps) {
        gens.push(rotation(spec, 1));
    } else {
        gens.push(rotation(spec, 2));
    }
    if spec.has(Transform::ColorPermutation) {
        let k = spec.colors;
        gens.push(color_map(spec, move |c| (c + 1) % k));
        gens.push(color_map(spec, |c| match c {
            0 => 1,
            1 => 0,
            c => c,
        }));
    }
    Ok(gens)
}

/// Order of the group generated by [`reference_generators`].
pub fn expected_order(spec: &WorldSpec) -> Result<usize, GroupError> {
    Ok(close(&reference_generators(spec)?)?.order())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(v: &[usize]) -> Permutation {
        Permutation::from_images(v.to_vec()).unwrap()
    }

    #[test]
    fn compose_basics() {
        let a = p(&[1, 2, 0, 3]);
        let id = Permutation::identity(4);
        assert_eq!(a.compose(&id).unwrap(), a);
        assert_eq!(a.compose(&a.inverse()).unwrap(), id);
        let s = p(&[1, 0, 2, 3]);
        let t = p(&[0, 1, 3, 2]);
        assert_eq!(s.compose(&t).unwrap(), t.compose(&s).unwrap());
        // (a ∘ s)(0) = a(s(0)) = a(1) = 2
        assert_eq!(a.compose(&s).unwrap().apply(0), 2);
        assert_eq!(
            a.compose(&Permutation::identity(3)),
            Err(GroupError::LengthMismatch(4, 3))
        );
    }

    #[test]
    fn rejects_non_bijections() {
        assert!(Permutation::from_images(vec![0, 0]).is_err());
        assert!(Permutation::from_images(vec![0, 2]).is_err());
        assert!(serde_json::from_str::<Permutation>("[1,1]").is_err());
        let q: Permutation = serde_json::from_str("[2,0,1]").unwrap();
        assert_eq!(q.cycle_notation(), "(0 2 1)");
    }

    #[test]
    fn cyclic_group() {
        let g = close(&[p(&[1, 2, 3, 0])]).unwrap();
        assert_eq!(g.order(), 4);
        assert!(g.contains(&Permutation::identity(4)));
    }

    #[test]
    fn closure_is_idempotent_and_closed() {
        let g = close(&[p(&[1, 0, 2, 3, 4]), p(&[1, 2, 3, 4, 0])]).unwrap();
        assert_eq!(g.order(), 120);
        let again = close(g.generators()).unwrap();
        let a: HashSet<_> = g.elements().iter().collect();
        let b: HashSet<_> = again.elements().iter().collect();
        assert_eq!(a, b);
        for x in g.elements().iter().take(10) {
            for y in g.elements() {
                assert!(g.contains(&x.compose(y).unwrap()));
            }
        }
    }

    #[test]
    fn closure_limit() {
        let r = close_bounded(&[p(&[1, 0, 2, 3, 4]), p(&[1, 2, 3, 4, 0])], 50);
        assert_eq!(r.err(), Some(GroupError::TooLarge(50)));
    }

    #[test]
    fn translation_group_of_t_grid() {
        let spec = WorldSpec::named(WorldKind::T);
        let g = close(&[horizontal_shift(&spec), vertical_shift(&spec)]).unwrap();
        assert_eq!(g.order(), 200);
    }

    #[test]
    fn reference_orders() {
        let orders: Vec<usize> = WorldKind::NAMED
            .iter()
            .map(|&k| expected_order(&WorldSpec::named(k)).unwrap())
            .collect();
        assert_eq!(orders, vec![400, 900, 900, 1092, 1600]);
        assert_eq!(
            reference_generators(&WorldSpec::named(WorldKind::Custom)).err(),
            Some(GroupError::NoReference)
        );
    }

    #[test]
    fn generator_powers() {
        let spec = WorldSpec::named(WorldKind::TR1);
        assert!(rotation(&spec, 1).pow(4).is_identity());
        assert!(!rotation(&spec, 1).pow(2).is_identity());
        assert!(horizontal_shift(&spec).pow(15).is_identity());
    }

    #[test]
    fn quarter_turns() {
        let tr = WorldSpec::named(WorldKind::TR1);
        assert_eq!(quarter_turn(&tr).unwrap(), rotation(&tr, 1));
        let t = WorldSpec::named(WorldKind::T);
        let q = quarter_turn(&t).unwrap();
        assert!(q.pow(4).is_identity());
        // pixel (1, 0) of the right block goes to (10, 9)
        assert_eq!(q.apply(11), pixel_index(20, 10, 10, 9, 0));
        let odd = WorldSpec::custom(6, 4, crate::worlds::full_alphabet(), 1, [Transform::GlobalTranslation], 1).unwrap();
        assert_eq!(quarter_turn(&odd), Err(GroupError::NoQuarterTurn(6, 4)));
    }

    #[test]
    fn matches_partial_on_a_cycle() {
        let shift = p(&[1, 2, 3, 4, 5, 0]);
        let g = close(std::slice::from_ref(&shift)).unwrap();
        let partial = IncompletePermutation::from_pairs(6, &[(0, 1)]).unwrap();
        assert_eq!(g.matches_partial(&partial), Some(&shift));
        let wrong = IncompletePermutation::from_pairs(6, &[(0, 1), (1, 3)]).unwrap();
        assert_eq!(g.matches_partial(&wrong), None);
        let full = IncompletePermutation::from_pairs(6, &(0..6).map(|i| (i, (i + 2) % 6)).collect::<Vec<_>>()).unwrap();
        assert_eq!(g.matches_partial(&full), Some(&shift.pow(2)));
    }

    #[test]
    fn trivial_group_matches_only_identity_consistent_partials() {
        let g = PermutationGroup::trivial(4);
        let partial = IncompletePermutation::from_pairs(4, &[(0, 1)]).unwrap();
        assert_eq!(g.matches_partial(&partial), None);
        let fixed = IncompletePermutation::from_pairs(4, &[(2, 2)]).unwrap();
        assert!(g.matches_partial(&fixed).unwrap().is_identity());
    }
}
