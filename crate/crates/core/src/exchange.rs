//! Decoder-to-client delivery plans for exchange rounds.
//!
//! The clustered plan shuffles each cluster's decoders, then walks clients in
//! index order handing each one the next decoder from the *other* cluster's
//! shuffled list. Once the smaller cluster's list runs out, the remaining
//! clients of the larger cluster draw from their own shuffled list.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::clustering::ClusterAssignment;
use crate::error::{Error, Result};

/// Shuffles tried while also avoiding last round's assignment.
pub const HISTORY_ATTEMPTS: usize = 32;
/// Further shuffles tried with only the no-fixed-point constraint.
pub const RELAXED_ATTEMPTS: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExchangeStrategy {
    Clustered,
    RoundRobin,
    Random,
}

/// `assignment[i]` is the index of the decoder delivered to client `i`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExchangePlan {
    pub assignment: Vec<usize>,
    pub strategy: ExchangeStrategy,
    /// Set when no shuffle could avoid the previous round's assignment.
    #[serde(default)]
    pub history_relaxed: bool,
}

impl ExchangePlan {
    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    pub fn is_permutation(&self) -> bool {
        is_permutation(&self.assignment)
    }

    /// Clients that receive the decoder they uploaded.
    pub fn fixed_points(&self) -> Vec<usize> {
        self.assignment
            .iter()
            .enumerate()
            .filter(|(i, &d)| *i == d)
            .map(|(i, _)| i)
            .collect()
    }

    /// Number of clients whose delivered decoder comes from the other cluster.
    pub fn cross_deliveries(&self, ca: &ClusterAssignment) -> usize {
        self.assignment
            .iter()
            .enumerate()
            .filter(|(i, &d)| ca.label(*i) != ca.label(d))
            .count()
    }
}

fn is_permutation(assignment: &[usize]) -> bool {
    let mut seen = vec![false; assignment.len()];
    for &d in assignment {
        if d >= seen.len() || seen[d] {
            return false;
        }
        seen[d] = true;
    }
    true
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExchangeHistory {
    pub last_assignment: Option<Vec<usize>>,
}

impl ExchangeHistory {
    pub fn record(&mut self, plan: &ExchangePlan) {
        self.last_assignment = Some(plan.assignment.clone());
    }
}

/// In-cluster shuffle followed by cross-cluster delivery.
///
/// Shuffles are redrawn until no client gets its own decoder back and, when
/// `history` is present, no client gets the same decoder index as last time.
/// After [`HISTORY_ATTEMPTS`] the history constraint is dropped.
pub fn build_clustered_plan(ca: &ClusterAssignment, history: &ExchangeHistory, rng_seed: u64) -> Result<ExchangePlan> {
    let n = ca.len();
    let ca = ClusterAssignment::from_index_list(ca.index_list().to_vec())?;
    let last = match &history.last_assignment {
        Some(last) if last.len() != n || !is_permutation(last) => {
            return Err(Error::InvalidAssignment(format!(
                "history has {} entries for {n} clients",
                last.len()
            )))
        }
        other => other.as_deref(),
    };

    let members = [ca.members(0), ca.members(1)];
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let draw = |rng: &mut ChaCha8Rng| {
        let mut lists = members.clone();
        lists[0].shuffle(rng);
        lists[1].shuffle(rng);
        cross_walk(&ca, &lists)
    };
    let no_fixed_points = |a: &[usize]| a.iter().enumerate().all(|(i, &d)| i != d);

    if let Some(last) = last {
        for _ in 0..HISTORY_ATTEMPTS {
            let assignment = draw(&mut rng);
            if no_fixed_points(&assignment) && assignment.iter().zip(last).all(|(a, b)| a != b) {
                return Ok(ExchangePlan {
                    assignment,
                    strategy: ExchangeStrategy::Clustered,
                    history_relaxed: false,
                });
            }
        }
    }

    let mut assignment = draw(&mut rng);
    for _ in 0..RELAXED_ATTEMPTS {
        if no_fixed_points(&assignment) {
            break;
        }
        assignment = draw(&mut rng);
    }
    Ok(ExchangePlan {
        assignment,
        strategy: ExchangeStrategy::Clustered,
        history_relaxed: last.is_some(),
    })
}

fn cross_walk(ca: &ClusterAssignment, lists: &[Vec<usize>; 2]) -> Vec<usize> {
    let mut cursor = [0usize; 2];
    (0..ca.len())
        .map(|client| {
            let own = ca.label(client) as usize;
            let other = 1 - own;
            let source = if cursor[other] < lists[other].len() { other } else { own };
            let decoder = lists[source][cursor[source]];
            cursor[source] += 1;
            decoder
        })
        .collect()
}

/// Cyclic shift by `1 + round mod (n - 1)`: never a fixed point, and every
/// non-trivial shift occurs once per `n - 1` rounds.
pub fn build_round_robin_plan(n: usize, round: usize) -> Result<ExchangePlan> {
    if n < 2 {
        return Err(Error::TooFewDecoders(n));
    }
    let k = 1 + round % (n - 1);
    Ok(ExchangePlan {
        assignment: (0..n).map(|i| (i + k) % n).collect(),
        strategy: ExchangeStrategy::RoundRobin,
        history_relaxed: false,
    })
}

/// Uniform random permutation; fixed points allowed.
pub fn build_random_plan(n: usize, rng_seed: u64) -> Result<ExchangePlan> {
    if n < 2 {
        return Err(Error::TooFewDecoders(n));
    }
    let mut assignment: Vec<usize> = (0..n).collect();
    assignment.shuffle(&mut ChaCha8Rng::seed_from_u64(rng_seed));
    Ok(ExchangePlan {
        assignment,
        strategy: ExchangeStrategy::Random,
        history_relaxed: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ca(c0: &[usize], c1: &[usize]) -> ClusterAssignment {
        ClusterAssignment::from_members(c0, c1).unwrap()
    }

    #[test]
    fn equal_clusters_are_all_cross() {
        let a = ca(&[0, 1], &[2, 3]);
        for seed in 0..50 {
            let plan = build_clustered_plan(&a, &ExchangeHistory::default(), seed).unwrap();
            assert!(plan.is_permutation());
            assert!(plan.assignment[0] >= 2 && plan.assignment[1] >= 2);
            assert!(plan.assignment[2] < 2 && plan.assignment[3] < 2);
            assert_eq!(plan.cross_deliveries(&a), 4);
        }
    }

    #[test]
    fn two_singletons_swap() {
        let plan = build_clustered_plan(&ca(&[0], &[1]), &ExchangeHistory::default(), 7).unwrap();
        assert_eq!(plan.assignment, vec![1, 0]);
    }

    #[test]
    fn unequal_clusters_fall_back_in_cluster() {
        let a = ca(&[0, 1, 2], &[3]);
        for seed in 0..50 {
            let plan = build_clustered_plan(&a, &ExchangeHistory::default(), seed).unwrap();
            assert!(plan.is_permutation());
            assert_eq!(plan.cross_deliveries(&a), 2);
            assert!(plan.assignment[3] < 3);
            // The earliest C_0 client takes decoder 3.
            assert_eq!(plan.assignment[0], 3);
            assert!(plan.fixed_points().is_empty());
        }
    }

    #[test]
    fn history_is_avoided_when_feasible() {
        let a = ca(&[0, 1], &[2, 3]);
        let first = build_clustered_plan(&a, &ExchangeHistory::default(), 1).unwrap();
        let mut history = ExchangeHistory::default();
        history.record(&first);
        for seed in 0..20 {
            let next = build_clustered_plan(&a, &history, seed).unwrap();
            assert!(!next.history_relaxed);
            for (x, y) in next.assignment.iter().zip(&first.assignment) {
                assert_ne!(x, y);
            }
        }
    }

    #[test]
    fn history_is_relaxed_when_infeasible() {
        let a = ca(&[0], &[1]);
        let history = ExchangeHistory {
            last_assignment: Some(vec![1, 0]),
        };
        let plan = build_clustered_plan(&a, &history, 3).unwrap();
        assert!(plan.history_relaxed);
        assert_eq!(plan.assignment, vec![1, 0]);
    }

    #[test]
    fn malformed_history_is_rejected() {
        let history = ExchangeHistory {
            last_assignment: Some(vec![0, 1, 2]),
        };
        assert!(matches!(
            build_clustered_plan(&ca(&[0], &[1]), &history, 0),
            Err(Error::InvalidAssignment(_))
        ));
    }

    #[test]
    fn round_robin_examples() {
        assert_eq!(build_round_robin_plan(4, 0).unwrap().assignment, vec![1, 2, 3, 0]);
        assert_eq!(build_round_robin_plan(4, 1).unwrap().assignment, vec![2, 3, 0, 1]);
        assert_eq!(build_round_robin_plan(4, 3).unwrap().assignment, vec![1, 2, 3, 0]);
        assert!(build_round_robin_plan(1, 0).is_err());
    }

    #[test]
    fn random_plan_examples() {
        for seed in 0..20 {
            let a = build_random_plan(2, seed).unwrap().assignment;
            assert!(a == vec![0, 1] || a == vec![1, 0]);
        }
        assert_eq!(build_random_plan(6, 99).unwrap(), build_random_plan(6, 99).unwrap());
        assert!(build_random_plan(1, 0).is_err());
    }

    fn assignment_strategy() -> impl Strategy<Value = Vec<u8>> {
        (2usize..10)
            .prop_flat_map(|n| prop::collection::vec(0u8..2, n))
            .prop_filter("both clusters non-empty", |v| v.contains(&0) && v.contains(&1))
    }

    proptest! {
        #[test]
        fn clustered_plan_invariants(labels in assignment_strategy(), seed in any::<u64>()) {
            let a = ClusterAssignment::from_index_list(labels).unwrap();
            let plan = build_clustered_plan(&a, &ExchangeHistory::default(), seed).unwrap();
            prop_assert!(plan.is_permutation());
            let (s0, s1) = (a.members(0).len(), a.members(1).len());
            prop_assert_eq!(plan.cross_deliveries(&a), 2 * s0.min(s1));
            prop_assert!(plan.fixed_points().is_empty());
            prop_assert_eq!(&plan, &build_clustered_plan(&a, &ExchangeHistory::default(), seed).unwrap());
        }

        #[test]
        fn round_robin_never_fixes(n in 2usize..12, round in 0usize..100) {
            let plan = build_round_robin_plan(n, round).unwrap();
            prop_assert!(plan.is_permutation());
            prop_assert!(plan.fixed_points().is_empty());
        }
    }
}
