use std::collections::BTreeSet;

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::seeds;

use super::state::DiagonalTotals;
use super::CostMode;

/// Number of cars to charge on each diagonal during one slot.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Action {
    counts: Vec<usize>,
}

impl Action {
    pub fn new(counts: Vec<usize>) -> Self {
        Action { counts }
    }

    /// Charge nothing.
    pub fn idle(s_max: usize) -> Self {
        Action {
            counts: vec![0; s_max],
        }
    }

    /// Charge every car.
    pub fn all(totals: &DiagonalTotals) -> Self {
        Action {
            counts: totals.as_slice().to_vec(),
        }
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn charged_count(&self) -> usize {
        self.counts.iter().sum()
    }

    /// Per-diagonal charge fractions; empty diagonals contribute 0.
    pub fn fractions<T: Scalar>(&self, totals: &DiagonalTotals) -> Vec<T> {
        self.counts
            .iter()
            .zip(totals.as_slice())
            .map(|(&k, &m)| {
                if m == 0 {
                    T::zero()
                } else {
                    T::of_usize(k) / T::of_usize(m)
                }
            })
            .collect()
    }

    pub fn check_feasible(&self, totals: &DiagonalTotals) -> Result<()> {
        if self.counts.len() != totals.len() {
            return Err(Error::ActionShape {
                expected: totals.len(),
                got: self.counts.len(),
            });
        }
        for (d, (&k, &m)) in self.counts.iter().zip(totals.as_slice()).enumerate() {
            if k > m {
                return Err(Error::InfeasibleAction {
                    diagonal: d,
                    requested: k,
                    available: m,
                });
            }
        }
        Ok(())
    }

    /// True when every car without slack is charged.
    pub fn charges_main_diagonal(&self, totals: &DiagonalTotals) -> bool {
        self.counts.first().copied().unwrap_or(0) == totals.as_slice().first().copied().unwrap_or(0)
    }
}

fn choice_range(totals: &DiagonalTotals, mode: CostMode, d: usize) -> (usize, usize) {
    let m = totals.get(d);
    match (mode, d) {
        (CostMode::Updated, 0) => (m, m),
        _ => (0, m),
    }
}

/// Size of the action set of a state with the given diagonal totals.
///
/// Old mode multiplies `totals(d) + 1` over every diagonal. Updated mode pins
/// the main diagonal, so the product runs over `d >= 1` only. Saturates at
/// `u128::MAX`.
pub fn action_space_size(totals: &DiagonalTotals, mode: CostMode) -> u128 {
    let skip = match mode {
        CostMode::Old => 0,
        CostMode::Updated => 1,
    };
    totals
        .as_slice()
        .iter()
        .skip(skip)
        .fold(1u128, |acc, &m| acc.saturating_mul(m as u128 + 1))
}

/// The updated-mode count in its additive printed form, `1 + prod_{d>=1}`.
/// Kept for reference only; it disagrees with the enumerated action set.
pub fn action_space_size_printed(totals: &DiagonalTotals) -> u128 {
    action_space_size(totals, CostMode::Updated).saturating_add(1)
}

/// All feasible actions in lexicographic order of their counts.
pub fn enumerate_actions(
    totals: &DiagonalTotals,
    mode: CostMode,
    cap: usize,
) -> Result<Vec<Action>> {
    let size = action_space_size(totals, mode);
    if size > cap as u128 {
        return Err(Error::ActionCapExceeded { size, cap });
    }
    let n = totals.len();
    let ranges: Vec<_> = (0..n).map(|d| choice_range(totals, mode, d)).collect();
    let mut current: Vec<usize> = ranges.iter().map(|r| r.0).collect();
    let mut out = Vec::with_capacity(size as usize);
    loop {
        out.push(Action::new(current.clone()));
        // Odometer with the last diagonal turning fastest.
        let mut d = n;
        loop {
            if d == 0 {
                return Ok(out);
            }
            d -= 1;
            if current[d] < ranges[d].1 {
                current[d] += 1;
                break;
            }
            current[d] = ranges[d].0;
        }
    }
}

/// Draws one action uniformly from the feasible set.
pub fn sample_action<R: Rng + ?Sized>(
    totals: &DiagonalTotals,
    mode: CostMode,
    rng: &mut R,
) -> Action {
    let counts = (0..totals.len())
        .map(|d| {
            let (lo, hi) = choice_range(totals, mode, d);
            rng.gen_range(lo..=hi)
        })
        .collect();
    Action::new(counts)
}

/// Actions considered when minimizing over a state's action set: the full
/// enumeration when it fits under `cap`, otherwise `cap` uniform draws from
/// the product space, deduplicated and sorted. The draw is seeded from
/// `seed` and the totals, so training and evaluation see the same subset.
pub fn candidate_actions(
    totals: &DiagonalTotals,
    mode: CostMode,
    cap: usize,
    seed: u64,
) -> Vec<Action> {
    match enumerate_actions(totals, mode, cap) {
        Ok(actions) => actions,
        Err(_) => {
            let mut path: Vec<u64> = totals.as_slice().iter().map(|&m| m as u64).collect();
            path.push(mode as u64);
            let mut rng = seeds::rng(seed, &path);
            let set: BTreeSet<Action> = (0..cap)
                .map(|_| sample_action(totals, mode, &mut rng))
                .collect();
            set.into_iter().collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn totals(v: &[usize]) -> DiagonalTotals {
        DiagonalTotals::new(v.to_vec())
    }

    fn counts(actions: &[Action]) -> Vec<Vec<usize>> {
        actions.iter().map(|a| a.counts().to_vec()).collect()
    }

    #[test]
    fn flexible_pair_has_three_actions_in_both_modes() {
        for mode in CostMode::ALL {
            let a = enumerate_actions(&totals(&[0, 2, 0]), mode, 100).unwrap();
            assert_eq!(
                counts(&a),
                vec![vec![0, 0, 0], vec![0, 1, 0], vec![0, 2, 0]]
            );
            assert_eq!(action_space_size(&totals(&[0, 2, 0]), mode), 3);
        }
    }

    #[test]
    fn main_diagonal_pair_collapses_in_updated_mode() {
        let t = totals(&[2, 0, 0]);
        assert_eq!(enumerate_actions(&t, CostMode::Old, 100).unwrap().len(), 3);
        let upd = enumerate_actions(&t, CostMode::Updated, 100).unwrap();
        assert_eq!(counts(&upd), vec![vec![2, 0, 0]]);
        assert_eq!(action_space_size(&t, CostMode::Old), 3);
        assert_eq!(action_space_size(&t, CostMode::Updated), 1);
        assert_eq!(action_space_size_printed(&t), 2);
    }

    #[test]
    fn empty_state_has_only_idle_action() {
        for mode in CostMode::ALL {
            let a = enumerate_actions(&totals(&[0, 0, 0]), mode, 100).unwrap();
            assert_eq!(counts(&a), vec![vec![0, 0, 0]]);
            assert_eq!(action_space_size(&totals(&[0, 0, 0]), mode), 1);
        }
    }

    #[test]
    fn enumeration_is_lexicographic() {
        let a = enumerate_actions(&totals(&[1, 0, 2]), CostMode::Old, 100).unwrap();
        let mut sorted = a.clone();
        sorted.sort();
        assert_eq!(a, sorted);
        assert_eq!(a.first().unwrap().counts(), &[0, 0, 0]);
        assert_eq!(a.last().unwrap().counts(), &[1, 0, 2]);
    }

    #[test]
    fn cap_refuses_oversized_enumeration() {
        let t = totals(&[3, 3, 3]);
        let err = enumerate_actions(&t, CostMode::Old, 63).unwrap_err();
        assert!(matches!(
            err,
            Error::ActionCapExceeded { size: 64, cap: 63 }
        ));
        assert_eq!(enumerate_actions(&t, CostMode::Old, 64).unwrap().len(), 64);
    }

    #[test]
    fn candidates_subsample_deterministically_over_cap() {
        let t = totals(&[2, 3, 4, 5]);
        let a = candidate_actions(&t, CostMode::Old, 20, 9);
        let b = candidate_actions(&t, CostMode::Old, 20, 9);
        assert_eq!(a, b);
        assert!(!a.is_empty() && a.len() <= 20);
        assert!(a.iter().all(|u| u.check_feasible(&t).is_ok()));
        assert_eq!(candidate_actions(&t, CostMode::Old, 1000, 9).len(), 360);
    }

    #[test]
    fn fractions_guard_empty_diagonals() {
        let t = totals(&[0, 2, 0]);
        let f: Vec<f64> = Action::new(vec![0, 1, 0]).fractions(&t);
        assert_eq!(f, vec![0.0, 0.5, 0.0]);
    }

    #[test]
    fn feasibility_check() {
        let t = totals(&[1, 2]);
        assert!(Action::new(vec![1, 2]).check_feasible(&t).is_ok());
        assert!(matches!(
            Action::new(vec![2, 0]).check_feasible(&t),
            Err(Error::InfeasibleAction { diagonal: 0, .. })
        ));
        assert!(matches!(
            Action::new(vec![0]).check_feasible(&t),
            Err(Error::ActionShape { .. })
        ));
    }
}
