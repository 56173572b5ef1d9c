//! Ground-truth machinery at desk scale: fuel-bounded Böhm tree expansion
//! and bounded enumeration of the finite-tree language.
//!
//! The language of a closed term of sort `o` is the set of finite, br-free
//! trees obtained by choosing one child at every br-labeled node of its Böhm
//! tree. Enumeration can never decide finiteness; it cross-validates the
//! type-based engine and produces growth evidence.

use crate::term::{substitute, Term, BR};
use serde::Serialize;
use std::collections::BTreeSet;
use std::fmt;

/// A prefix of a Böhm tree. Frontiers that ran out of fuel stay as
/// placeholders: `Unexpanded` for depth fuel, `Diverged` for step fuel
/// (standing for the all-br tree, which contributes nothing to the
/// language).
#[derive(Clone, PartialEq, Eq, Debug)]
pub enum PartialTree {
    Sym {
        sym: String,
        children: Vec<PartialTree>,
    },
    Unexpanded(Term),
    Diverged,
}

/// A finite br-free tree of the language.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Debug, Serialize)]
pub struct FiniteTree {
    pub sym: String,
    pub children: Vec<FiniteTree>,
}

impl FiniteTree {
    pub fn leaf(sym: &str) -> FiniteTree {
        FiniteTree {
            sym: sym.to_string(),
            children: vec![],
        }
    }

    pub fn node(sym: &str, children: Vec<FiniteTree>) -> FiniteTree {
        FiniteTree {
            sym: sym.to_string(),
            children,
        }
    }

    pub fn size(&self) -> u64 {
        1 + self.children.iter().map(|c| c.size()).sum::<u64>()
    }
}

impl fmt::Display for FiniteTree {
    /// Nested s-expression rendering, e.g. `(a (a (e)))`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}", self.sym)?;
        for c in &self.children {
            write!(f, " {}", c)?;
        }
        write!(f, ")")
    }
}

enum HeadForm {
    Head(String, Vec<Term>),
    Diverged,
}

/// Leftmost head reduction to a constant-headed form, within `step_fuel`
/// beta/fixpoint steps. Böhm trees do not depend on the strategy.
fn head_normalize(t: &Term, step_fuel: u64) -> HeadForm {
    let mut cur = t.clone();
    let mut fuel = step_fuel;
    loop {
        // Split into head and application spine.
        let mut spine: Vec<Term> = Vec::new();
        let mut head = cur.clone();
        while let Term::App { func, arg } = head {
            spine.push(*arg);
            head = *func;
        }
        spine.reverse();
        match head {
            Term::Const { sym, args } => {
                debug_assert!(spine.is_empty(), "constants have sort o");
                return HeadForm::Head(sym, args);
            }
            Term::Lam {
                param,
                body,
                ..
            } => {
                if spine.is_empty() {
                    // A closed term of sort o cannot head-normalize to a
                    // lambda; treat as divergence defensively.
                    return HeadForm::Diverged;
                }
                if fuel == 0 {
                    return HeadForm::Diverged;
                }
                fuel -= 1;
                let contracted = substitute(&body, &param, &spine[0]);
                cur = spine[1..]
                    .iter()
                    .fold(contracted, |acc, a| Term::app(acc, a.clone()));
            }
            Term::Y { alpha } => {
                if spine.is_empty() {
                    return HeadForm::Diverged;
                }
                if fuel == 0 {
                    return HeadForm::Diverged;
                }
                fuel -= 1;
                // Y F -> F (Y F)
                let f = spine[0].clone();
                let unfolded = Term::app(f.clone(), Term::app(Term::y(alpha), f));
                cur = spine[1..]
                    .iter()
                    .fold(unfolded, |acc, a| Term::app(acc, a.clone()));
            }
            Term::Var { .. } => return HeadForm::Diverged,
            Term::App { .. } => unreachable!("spine fully stripped"),
        }
    }
}

/// Expands the Böhm tree of a closed term of sort `o` to `depth_fuel`
/// levels, head-normalizing each node within `step_fuel` reduction steps.
pub fn bohm_expand(t: &Term, depth_fuel: u64, step_fuel: u64) -> PartialTree {
    if depth_fuel == 0 {
        return PartialTree::Unexpanded(t.clone());
    }
    match head_normalize(t, step_fuel) {
        HeadForm::Diverged => PartialTree::Diverged,
        HeadForm::Head(sym, args) => PartialTree::Sym {
            sym,
            children: args
                .iter()
                .map(|a| bohm_expand(a, depth_fuel - 1, step_fuel))
                .collect(),
        },
    }
}

/// All members of the language of size at most `max_size` discoverable
/// within the fuel, and a flag telling whether the enumeration is provably
/// exhaustive up to that size: true only when every unexpanded or diverged
/// frontier already lies so deep that any completion through it would exceed
/// `max_size`.
pub fn language_upto(
    t: &Term,
    max_size: u64,
    depth_fuel: u64,
    step_fuel: u64,
) -> (BTreeSet<FiniteTree>, bool) {
    let partial = bohm_expand(t, depth_fuel, step_fuel);
    let mut complete = true;
    let set = collect(&partial, max_size, 1, &mut complete);
    (set, complete)
}

fn collect(
    pt: &PartialTree,
    max_size: u64,
    min_through: u64,
    complete: &mut bool,
) -> BTreeSet<FiniteTree> {
    match pt {
        PartialTree::Unexpanded(_) | PartialTree::Diverged => {
            // A completed tree through this frontier has at least
            // `min_through` nodes; smaller budgets are unaffected.
            if min_through <= max_size {
                *complete = false;
            }
            BTreeSet::new()
        }
        PartialTree::Sym { sym, children } if sym == BR => {
            let mut out = collect(&children[0], max_size, min_through, complete);
            out.extend(collect(&children[1], max_size, min_through, complete));
            out
        }
        PartialTree::Sym { sym, children } => {
            let kid_sets: Vec<BTreeSet<FiniteTree>> = children
                .iter()
                .map(|c| collect(c, max_size, min_through + 1, complete))
                .collect();
            let mut combos: Vec<Vec<FiniteTree>> = vec![Vec::new()];
            for ks in &kid_sets {
                let mut next = Vec::new();
                for prefix in &combos {
                    let used: u64 = 1 + prefix.iter().map(|t| t.size()).sum::<u64>();
                    for k in ks {
                        if used + k.size() <= max_size {
                            let mut v = prefix.clone();
                            v.push(k.clone());
                            next.push(v);
                        }
                    }
                }
                combos = next;
                if combos.is_empty() {
                    return BTreeSet::new();
                }
            }
            combos
                .into_iter()
                .map(|children| FiniteTree {
                    sym: sym.clone(),
                    children,
                })
                .collect()
        }
    }
}

/// Checks that a tree is obtainable from the expanded prefix by resolving
/// br choices, replaying one choice sequence.
pub fn verify_by_replay(pt: &PartialTree, tree: &FiniteTree) -> bool {
    match pt {
        PartialTree::Unexpanded(_) | PartialTree::Diverged => false,
        PartialTree::Sym { sym, children } if sym == BR => {
            verify_by_replay(&children[0], tree) || verify_by_replay(&children[1], tree)
        }
        PartialTree::Sym { sym, children } => {
            *sym == tree.sym
                && children.len() == tree.children.len()
                && children
                    .iter()
                    .zip(&tree.children)
                    .all(|(p, t)| verify_by_replay(p, t))
        }
    }
}

/// `a` refines to `b` when `b` only replaces placeholders of `a`: expanded
/// labels never change under larger fuel.
pub fn refines(a: &PartialTree, b: &PartialTree) -> bool {
    match (a, b) {
        (PartialTree::Unexpanded(_), _) | (PartialTree::Diverged, _) => true,
        (
            PartialTree::Sym { sym: s1, children: c1 },
            PartialTree::Sym { sym: s2, children: c2 },
        ) => s1 == s2 && c1.len() == c2.len() && c1.iter().zip(c2).all(|(x, y)| refines(x, y)),
        _ => false,
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct GrowthStep {
    pub max_size: u64,
    pub depth_fuel: u64,
    pub step_fuel: u64,
    pub trees_found: usize,
    pub max_tree_size: u64,
    pub exhaustive: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct GrowthReport {
    pub steps: Vec<GrowthStep>,
    pub strictly_increasing: bool,
}

/// Runs the enumeration over a schedule of fuel settings and reports the
/// largest tree found per step, plus whether the maxima strictly increase.
pub fn growth_report(t: &Term, schedule: &[(u64, u64, u64)]) -> GrowthReport {
    let mut steps = Vec::new();
    for (max_size, depth_fuel, step_fuel) in schedule {
        let (set, exhaustive) = language_upto(t, *max_size, *depth_fuel, *step_fuel);
        steps.push(GrowthStep {
            max_size: *max_size,
            depth_fuel: *depth_fuel,
            step_fuel: *step_fuel,
            trees_found: set.len(),
            max_tree_size: set.iter().map(|t| t.size()).max().unwrap_or(0),
            exhaustive,
        });
    }
    let strictly_increasing = steps
        .windows(2)
        .all(|w| w[0].max_tree_size < w[1].max_tree_size);
    GrowthReport {
        steps,
        strictly_increasing,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sort::Sort;

    #[test]
    fn already_head_normal() {
        let t = Term::cst("a", vec![Term::cst("e", vec![])]);
        let pt = bohm_expand(&t, 5, 5);
        assert_eq!(
            pt,
            PartialTree::Sym {
                sym: "a".into(),
                children: vec![PartialTree::Sym {
                    sym: "e".into(),
                    children: vec![]
                }]
            }
        );
    }

    #[test]
    fn diverging_term_gives_diverged_root() {
        // Y[o] (\s:o. s) has no head normal form.
        let t = Term::app(
            Term::y(Sort::Base),
            Term::lam("s", Sort::Base, Term::var("s", Sort::Base)),
        );
        assert_eq!(bohm_expand(&t, 3, 4), PartialTree::Diverged);
    }

    #[test]
    fn simple_choice_language() {
        // br (a e) e as a tree term.
        let t = Term::cst(
            BR,
            vec![
                Term::cst("a", vec![Term::cst("e", vec![])]),
                Term::cst("e", vec![]),
            ],
        );
        let (set, complete) = language_upto(&t, 10, 10, 10);
        assert!(complete);
        let expect: BTreeSet<FiniteTree> = [
            FiniteTree::node("a", vec![FiniteTree::leaf("e")]),
            FiniteTree::leaf("e"),
        ]
        .into_iter()
        .collect();
        assert_eq!(set, expect);
        let pt = bohm_expand(&t, 10, 10);
        for tree in &set {
            assert!(verify_by_replay(&pt, tree));
        }
    }

    #[test]
    fn sexpr_rendering() {
        let t = FiniteTree::node("a", vec![FiniteTree::node("a", vec![FiniteTree::leaf("e")])]);
        assert_eq!(t.to_string(), "(a (a (e)))");
        assert_eq!(t.size(), 3);
    }
}
