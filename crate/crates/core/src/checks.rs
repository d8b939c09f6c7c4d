//! Analytic self-checks of the named worlds: observation counts, letter
//! transformation counts, reference group orders and the half-turn
//! deviation on full data.

use serde::Serialize;

use crate::concurrence::build_graph;
use crate::group::expected_order;
use crate::pipeline::{quarter_turn_deviation, verify_false_positive};
use crate::worlds::{enumerate_observations, letter_transformation_count, WorldKind, WorldSpec};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn equal<T: PartialEq + std::fmt::Display>(name: String, got: T, want: T) -> Check {
        Check {
            name,
            passed: got == want,
            detail: format!("got {got}, expected {want}"),
        }
    }

    fn failed(name: String, err: impl std::fmt::Display) -> Check {
        Check {
            name,
            passed: false,
            detail: err.to_string(),
        }
    }
}

/// Distinct observations of every enumerable named world.
pub const OBSERVATION_COUNTS: [(WorldKind, usize); 4] = [
    (WorldKind::T, 135_200),
    (WorldKind::TR1, 571_950),
    (WorldKind::TR2, 104_850),
    (WorldKind::TC, 99_099),
];

pub const LETTER_TRANSFORMATIONS: [(WorldKind, u128); 5] = [
    (WorldKind::T, 200),
    (WorldKind::TR1, 900),
    (WorldKind::TR2, 900),
    (WorldKind::TC, 546),
    (WorldKind::TL, 640_000),
];

pub const GROUP_ORDERS: [(WorldKind, usize); 5] = [
    (WorldKind::T, 400),
    (WorldKind::TR1, 900),
    (WorldKind::TR2, 900),
    (WorldKind::TC, 1092),
    (WorldKind::TL, 1600),
];

pub fn observation_count_checks() -> Vec<Check> {
    OBSERVATION_COUNTS
        .iter()
        .map(|&(kind, want)| {
            let name = format!("observations {kind}");
            match enumerate_observations(&WorldSpec::named(kind)) {
                Ok(obs) => Check::equal(name, obs.total(), want),
                Err(e) => Check::failed(name, e),
            }
        })
        .collect()
}

pub fn transformation_count_checks() -> Vec<Check> {
    LETTER_TRANSFORMATIONS
        .iter()
        .map(|&(kind, want)| {
            Check::equal(
                format!("letter transformations {kind}"),
                letter_transformation_count(&WorldSpec::named(kind)),
                want,
            )
        })
        .collect()
}

pub fn group_order_checks() -> Vec<Check> {
    GROUP_ORDERS
        .iter()
        .map(|&(kind, want)| {
            let name = format!("reference group order {kind}");
            match expected_order(&WorldSpec::named(kind)) {
                Ok(order) => Check::equal(name, order, want),
                Err(e) => Check::failed(name, e),
            }
        })
        .collect()
}

/// Half turns cost nothing on full T and TC data; the quarter turn of T
/// does.
pub fn false_positive_checks() -> Vec<Check> {
    let mut out = Vec::new();
    for kind in [WorldKind::T, WorldKind::TC] {
        let spec = WorldSpec::named(kind);
        let graph = enumerate_observations(&spec)
            .map_err(|e| e.to_string())
            .and_then(|o| build_graph(&o).map_err(|e| e.to_string()));
        let graph = match graph {
            Ok(g) => g,
            Err(e) => {
                out.push(Check::failed(format!("full graph {kind}"), e));
                continue;
            }
        };
        let name = format!("half-turn deviation {kind}");
        out.push(match verify_false_positive(&graph, &spec) {
            Ok(d) => Check {
                name,
                passed: d.is_zero(),
                detail: format!("deviation {d}"),
            },
            Err(e) => Check::failed(name, e),
        });
        if kind == WorldKind::T {
            let name = format!("quarter-turn deviation {kind}");
            out.push(match quarter_turn_deviation(&graph, &spec) {
                Ok(d) => Check {
                    name,
                    passed: !d.is_zero(),
                    detail: format!("deviation {d}"),
                },
                Err(e) => Check::failed(name, e),
            });
        }
    }
    out
}

/// Every analytic check, cheapest first.
pub fn analytic_checks() -> Vec<Check> {
    let mut all = transformation_count_checks();
    all.extend(group_order_checks());
    all.extend(observation_count_checks());
    all.extend(false_positive_checks());
    all
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cheap_checks_pass() {
        for c in transformation_count_checks().into_iter().chain(group_order_checks()) {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }
}
