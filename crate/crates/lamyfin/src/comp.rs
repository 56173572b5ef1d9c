//! The flag-propagation predicate used by the constant and application rules.
//!
//! Given the marker orders `M` visible at a judgment and, per premiss, the
//! flag orders `F_i` and flag counter `c_i`, it decides which flags the
//! current judgment places and what its counter becomes:
//!
//! for `n` in `0..=m`:
//!   `f'_n = f_{n-1}` if `n-1 in M`, else `0`
//!   `f_n  = f'_n + sum_i |F_i ∩ {n}|`
//!
//! result `F = { n in 0..m-1 | f_n > 0 and n not in M }`,
//! counter `c = f'_m + sum_i c_i`.

use crate::types::OrderSet;

/// Outcome of one `Comp` evaluation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CompResult {
    pub flags: OrderSet,
    pub counter: u64,
    /// `f'_n` for `n` in `0..=m`: how many order-`n` flags this judgment
    /// itself places. `placed[m]` is exactly the counter contribution of the
    /// node.
    pub placed: Vec<u64>,
}

/// Evaluates `Comp_m(markers; inputs)`.
///
/// Each input pair carries a flag-order set (subset of `{0..m}`) and a flag
/// counter. An empty input list yields all-zero `f_n`.
pub fn comp(m: u8, markers: OrderSet, inputs: &[(OrderSet, u64)]) -> CompResult {
    let mut placed = vec![0u64; m as usize + 1];
    let mut flags = OrderSet::EMPTY;
    let mut f_prev = 0u64;
    for n in 0..=m {
        let f_placed = if n >= 1 && markers.contains(n - 1) {
            f_prev
        } else {
            0
        };
        placed[n as usize] = f_placed;
        let from_premisses = inputs.iter().filter(|(fs, _)| fs.contains(n)).count() as u64;
        let f_n = f_placed + from_premisses;
        if n < m && f_n > 0 && !markers.contains(n) {
            flags.insert(n);
        }
        f_prev = f_n;
    }
    let counter = placed[m as usize] + inputs.iter().map(|(_, c)| *c).sum::<u64>();
    CompResult {
        flags,
        counter,
        placed,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn os(bits: &[u8]) -> OrderSet {
        OrderSet::from_iter(bits.iter().copied())
    }

    #[test]
    fn marker_zero_promotes_the_constant_flag() {
        // Con rule with the order-0 marker visible below: flags 0 and 1 are
        // placed, 1 survives into F, counter stays 0.
        let r = comp(2, os(&[0]), &[(os(&[0]), 0), (os(&[]), 0)]);
        assert_eq!(r.flags, os(&[1]));
        assert_eq!(r.counter, 0);
    }

    #[test]
    fn both_markers_promote_to_the_counter() {
        let r = comp(2, os(&[0, 1]), &[(os(&[0]), 0), (os(&[]), 0)]);
        assert_eq!(r.flags, OrderSet::EMPTY);
        assert_eq!(r.counter, 1);
    }

    #[test]
    fn order_one_flag_meets_order_one_marker() {
        let r = comp(2, os(&[0, 1]), &[(os(&[]), 0), (os(&[1]), 0)]);
        assert_eq!(r.flags, OrderSet::EMPTY);
        assert_eq!(r.counter, 1);
    }

    #[test]
    fn at_order_zero_counters_just_add() {
        let r = comp(0, OrderSet::EMPTY, &[(OrderSet::EMPTY, 1)]);
        assert_eq!(r.flags, OrderSet::EMPTY);
        assert_eq!(r.counter, 1);
    }

    #[test]
    fn output_flags_avoid_markers_and_stay_below_m() {
        let r = comp(3, os(&[1]), &[(os(&[0, 1, 2]), 5), (os(&[0]), 2)]);
        assert!(r.flags.disjoint(os(&[1])));
        assert!(r.flags.restrict_at_least(3).is_empty());
        assert_eq!(r.counter, 7);
    }
}
