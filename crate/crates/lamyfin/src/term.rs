//! Finite lambda-Y syntax trees with named variables.
//!
//! Constants of positive rank always come fully applied: `Const` nodes carry
//! their arguments directly and have sort `o`. The distinguished symbol `br`
//! has rank 2 and encodes a nondeterministic choice.

use crate::sort::Sort;
use std::collections::HashMap;
use std::fmt;

pub const BR: &str = "br";

#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub enum Term {
    /// A symbol of rank `args.len()` applied to arguments of sort `o`.
    Const { sym: String, args: Vec<Term> },
    Var { name: String, sort: Sort },
    App { func: Box<Term>, arg: Box<Term> },
    Lam {
        param: String,
        param_sort: Sort,
        body: Box<Term>,
    },
    /// The fixpoint combinator for sort `alpha`: `Y[alpha] : (alpha->alpha)->alpha`.
    Y { alpha: Sort },
}

impl Term {
    pub fn cst(sym: &str, args: Vec<Term>) -> Term {
        Term::Const {
            sym: sym.to_string(),
            args,
        }
    }

    pub fn var(name: &str, sort: Sort) -> Term {
        Term::Var {
            name: name.to_string(),
            sort,
        }
    }

    pub fn app(func: Term, arg: Term) -> Term {
        Term::App {
            func: Box::new(func),
            arg: Box::new(arg),
        }
    }

    pub fn lam(param: &str, param_sort: Sort, body: Term) -> Term {
        Term::Lam {
            param: param.to_string(),
            param_sort,
            body: Box::new(body),
        }
    }

    pub fn y(alpha: Sort) -> Term {
        Term::Y { alpha }
    }

    pub fn children(&self) -> Vec<&Term> {
        match self {
            Term::Const { args, .. } => args.iter().collect(),
            Term::App { func, arg } => vec![func, arg],
            Term::Lam { body, .. } => vec![body],
            Term::Var { .. } | Term::Y { .. } => vec![],
        }
    }

    pub fn at_path(&self, path: &[usize]) -> Option<&Term> {
        let mut cur = self;
        for &i in path {
            cur = *cur.children().get(i)?;
        }
        Some(cur)
    }
}

#[derive(thiserror::Error, Debug, Clone, PartialEq, Eq)]
pub enum SortError {
    #[error("operator of sort {func} applied to operand of sort {arg}")]
    SortMismatch { func: String, arg: String },
    #[error("constant `{sym}` used with rank {used} but declared with rank {declared}")]
    RankMismatch {
        sym: String,
        declared: usize,
        used: usize,
    },
    #[error("unbound variable `{0}`")]
    UnboundVariable(String),
    #[error("operator of base sort `o` cannot be applied")]
    NotAFunction,
}

/// Checks sort consistency and returns the sort of `t`.
///
/// `ranks` records the first-seen rank of each constant; constants must be
/// used with one rank consistently. Pass a prefilled map to enforce a fixed
/// alphabet.
pub fn sort_check(t: &Term) -> Result<Sort, SortError> {
    let mut ranks = HashMap::new();
    sort_check_with(t, &mut ranks)
}

pub fn sort_check_with(t: &Term, ranks: &mut HashMap<String, usize>) -> Result<Sort, SortError> {
    let mut scope: Vec<(String, Sort)> = Vec::new();
    check(t, &mut scope, ranks)
}

fn check(
    t: &Term,
    scope: &mut Vec<(String, Sort)>,
    ranks: &mut HashMap<String, usize>,
) -> Result<Sort, SortError> {
    match t {
        Term::Const { sym, args } => {
            let declared = *ranks.entry(sym.clone()).or_insert(args.len());
            if declared != args.len() {
                return Err(SortError::RankMismatch {
                    sym: sym.clone(),
                    declared,
                    used: args.len(),
                });
            }
            for a in args {
                let s = check(a, scope, ranks)?;
                if !s.is_base() {
                    return Err(SortError::SortMismatch {
                        func: format!("{}^(o,..,o)->o", sym),
                        arg: s.to_string(),
                    });
                }
            }
            Ok(Sort::Base)
        }
        Term::Var { name, sort } => {
            match scope.iter().rev().find(|(n, _)| n == name) {
                Some((_, s)) => {
                    if s != sort {
                        Err(SortError::SortMismatch {
                            func: s.to_string(),
                            arg: sort.to_string(),
                        })
                    } else {
                        Ok(sort.clone())
                    }
                }
                None => Err(SortError::UnboundVariable(name.clone())),
            }
        }
        Term::App { func, arg } => {
            let fs = check(func, scope, ranks)?;
            let as_ = check(arg, scope, ranks)?;
            match fs.as_arrow() {
                Some((a, b)) if *a == as_ => Ok(b.clone()),
                Some(_) => Err(SortError::SortMismatch {
                    func: fs.to_string(),
                    arg: as_.to_string(),
                }),
                None => Err(SortError::NotAFunction),
            }
        }
        Term::Lam {
            param,
            param_sort,
            body,
        } => {
            scope.push((param.clone(), param_sort.clone()));
            let bs = check(body, scope, ranks);
            scope.pop();
            Ok(Sort::arrow(param_sort.clone(), bs?))
        }
        Term::Y { alpha } => Ok(Sort::arrow(
            Sort::arrow(alpha.clone(), alpha.clone()),
            alpha.clone(),
        )),
    }
}

#[derive(thiserror::Error, Debug, Clone, PartialEq, Eq)]
pub enum BetaError {
    #[error("no subterm at the given path")]
    BadPath,
    #[error("subterm at the path is not a beta-redex")]
    NotARedex,
}

/// Contracts the beta-redex at `path` and reports the order of the reduction,
/// i.e. `ord(\x.R)` for the redex `(\x.R) S`.
pub fn beta_step(t: &Term, path: &[usize]) -> Result<(Term, u8), BetaError> {
    let sub = t.at_path(path).ok_or(BetaError::BadPath)?;
    let (lam, arg) = match sub {
        Term::App { func, arg } => match func.as_ref() {
            Term::Lam { .. } => (func.as_ref(), arg.as_ref()),
            _ => return Err(BetaError::NotARedex),
        },
        _ => return Err(BetaError::NotARedex),
    };
    let order = sort_check_sub(lam);
    let contractum = match lam {
        Term::Lam { param, body, .. } => substitute(body, param, arg),
        _ => unreachable!(),
    };
    Ok((replace_at(t, path, contractum), order))
}

fn sort_check_sub(lam: &Term) -> u8 {
    // The redex operator is a lambda whose sort is determined by its
    // annotations alone; free variables carry their sorts.
    fn sort_of(t: &Term) -> Sort {
        match t {
            Term::Const { .. } => Sort::Base,
            Term::Var { sort, .. } => sort.clone(),
            Term::App { func, .. } => match sort_of(func) {
                Sort::Arrow(_, b) => *b,
                Sort::Base => Sort::Base,
            },
            Term::Lam {
                param_sort, body, ..
            } => Sort::arrow(param_sort.clone(), sort_of(body)),
            Term::Y { alpha } => Sort::arrow(
                Sort::arrow(alpha.clone(), alpha.clone()),
                alpha.clone(),
            ),
        }
    }
    sort_of(lam).order()
}

fn replace_at(t: &Term, path: &[usize], new: Term) -> Term {
    if path.is_empty() {
        return new;
    }
    let (i, rest) = (path[0], &path[1..]);
    match t {
        Term::Const { sym, args } => {
            let mut args = args.clone();
            args[i] = replace_at(&args[i], rest, new);
            Term::Const {
                sym: sym.clone(),
                args,
            }
        }
        Term::App { func, arg } => {
            if i == 0 {
                Term::app(replace_at(func, rest, new), (**arg).clone())
            } else {
                Term::app((**func).clone(), replace_at(arg, rest, new))
            }
        }
        Term::Lam {
            param,
            param_sort,
            body,
        } => Term::lam(param, param_sort.clone(), replace_at(body, rest, new)),
        Term::Var { .. } | Term::Y { .. } => unreachable!("path checked"),
    }
}

/// Capture-avoiding substitution of `value` for `name`.
pub fn substitute(t: &Term, name: &str, value: &Term) -> Term {
    match t {
        Term::Var { name: n, .. } if n == name => value.clone(),
        Term::Var { .. } | Term::Y { .. } => t.clone(),
        Term::Const { sym, args } => Term::Const {
            sym: sym.clone(),
            args: args.iter().map(|a| substitute(a, name, value)).collect(),
        },
        Term::App { func, arg } => Term::app(
            substitute(func, name, value),
            substitute(arg, name, value),
        ),
        Term::Lam {
            param,
            param_sort,
            body,
        } => {
            if param == name {
                t.clone()
            } else if free_names(value).contains(param.as_str()) {
                let fresh = fresh_name(param, value, body);
                let renamed = substitute(
                    body,
                    param,
                    &Term::var(&fresh, param_sort.clone()),
                );
                Term::lam(&fresh, param_sort.clone(), substitute(&renamed, name, value))
            } else {
                Term::lam(param, param_sort.clone(), substitute(body, name, value))
            }
        }
    }
}

fn free_names(t: &Term) -> std::collections::BTreeSet<&str> {
    fn go<'a>(t: &'a Term, bound: &mut Vec<&'a str>, out: &mut std::collections::BTreeSet<&'a str>) {
        match t {
            Term::Var { name, .. } => {
                if !bound.contains(&name.as_str()) {
                    out.insert(name);
                }
            }
            Term::Lam { param, body, .. } => {
                bound.push(param);
                go(body, bound, out);
                bound.pop();
            }
            _ => {
                for c in t.children() {
                    go(c, bound, out);
                }
            }
        }
    }
    let mut out = std::collections::BTreeSet::new();
    go(t, &mut Vec::new(), &mut out);
    out
}

fn fresh_name(base: &str, avoid1: &Term, avoid2: &Term) -> String {
    let used: std::collections::BTreeSet<String> = free_names(avoid1)
        .into_iter()
        .chain(free_names(avoid2))
        .map(|s| s.to_string())
        .collect();
    let mut i = 0;
    loop {
        let cand = format!("{}{}", base, i);
        if !used.contains(&cand) {
            return cand;
        }
        i += 1;
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_term(self, f, false)
    }
}

fn write_term(t: &Term, f: &mut fmt::Formatter<'_>, atom: bool) -> fmt::Result {
    match t {
        Term::Const { sym, args } if args.is_empty() => write!(f, "{}", sym),
        Term::Const { sym, args } => {
            if atom {
                write!(f, "(")?;
            }
            write!(f, "{}", sym)?;
            for a in args {
                write!(f, " ")?;
                write_term(a, f, true)?;
            }
            if atom {
                write!(f, ")")?;
            }
            Ok(())
        }
        Term::Var { name, .. } => write!(f, "{}", name),
        Term::App { func, arg } => {
            if atom {
                write!(f, "(")?;
            }
            write_app(func, f)?;
            write!(f, " ")?;
            write_term(arg, f, true)?;
            if atom {
                write!(f, ")")?;
            }
            Ok(())
        }
        Term::Lam {
            param,
            param_sort,
            body,
        } => {
            if atom {
                write!(f, "(")?;
            }
            write!(f, "\\{}:{}. ", param, param_sort)?;
            write_term(body, f, false)?;
            if atom {
                write!(f, ")")?;
            }
            Ok(())
        }
        Term::Y { alpha } => write!(f, "Y[{}]", alpha),
    }
}

fn write_app(t: &Term, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    // Left spine of an application prints without parens.
    match t {
        Term::App { func, arg } => {
            write_app(func, f)?;
            write!(f, " ")?;
            write_term(arg, f, true)
        }
        _ => write_term(t, f, true),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sort::parse_sort;

    fn o() -> Sort {
        Sort::Base
    }

    #[test]
    fn sort_check_examples() {
        // a e : o
        let t = Term::cst("a", vec![Term::cst("e", vec![])]);
        assert_eq!(sort_check(&t).unwrap(), o());
        // \x:o. a x : o->o
        let t = Term::lam("x", o(), Term::cst("a", vec![Term::var("x", o())]));
        assert_eq!(sort_check(&t).unwrap(), parse_sort("o->o").unwrap());
        // (\x:o. x) (\y:o. y) : operand sort mismatch
        let id_o = Term::lam("x", o(), Term::var("x", o()));
        let id_o2 = Term::lam("y", o(), Term::var("y", o()));
        let err = sort_check(&Term::app(id_o, id_o2)).unwrap_err();
        assert!(matches!(err, SortError::SortMismatch { .. }));
    }

    #[test]
    fn rank_and_binding_errors() {
        let mut ranks = HashMap::from([("a".to_string(), 1)]);
        let bad = Term::cst("a", vec![]);
        assert!(matches!(
            sort_check_with(&bad, &mut ranks),
            Err(SortError::RankMismatch { .. })
        ));
        assert!(matches!(
            sort_check(&Term::var("x", o())),
            Err(SortError::UnboundVariable(_))
        ));
    }

    #[test]
    fn beta_at_root() {
        // (\x:o. a x) e -> a e, order 1
        let lam = Term::lam("x", o(), Term::cst("a", vec![Term::var("x", o())]));
        let t = Term::app(lam, Term::cst("e", vec![]));
        let (r, ord) = beta_step(&t, &[]).unwrap();
        assert_eq!(r, Term::cst("a", vec![Term::cst("e", vec![])]));
        assert_eq!(ord, 1);
        assert_eq!(
            beta_step(&Term::cst("e", vec![]), &[]),
            Err(BetaError::NotARedex)
        );
    }

    #[test]
    fn capture_avoided() {
        // (\x:o. \y:o. b x y) y  -- the free y must not be captured
        let inner = Term::lam(
            "y",
            o(),
            Term::cst("b", vec![Term::var("x", o()), Term::var("y", o())]),
        );
        let lam = Term::lam("x", o(), inner);
        let t = Term::app(lam, Term::var("y", o()));
        let (r, _) = beta_step(&t, &[]).unwrap();
        match &r {
            Term::Lam { param, body, .. } => {
                assert_ne!(param, "y");
                match body.as_ref() {
                    Term::Const { args, .. } => {
                        assert_eq!(args[0], Term::var("y", o()));
                        assert_eq!(args[1], Term::var(param, o()));
                    }
                    _ => panic!("unexpected shape"),
                }
            }
            _ => panic!("expected lambda"),
        }
    }
}
