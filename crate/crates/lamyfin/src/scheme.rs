//! Higher-order recursion schemes: a text format, sort inference, and the
//! conversion to a closed lambda-Y term.
//!
//! The concrete syntax has one header line per constant and one rule per
//! nonterminal:
//!
//! ```text
//! symbol a 1
//! symbol e 0
//! S = R (\x. a x)
//! R f = br (f e) (R (\x. f (f x)))
//! ```
//!
//! `br` is implicitly declared with rank 2. The first rule's nonterminal is
//! the start symbol and must have sort `o`. Constants must be fully applied;
//! use `\x. a x` where a partially applied symbol is wanted.

use crate::sort::Sort;
use crate::term::{Term, BR};
use std::collections::HashMap;
use std::fmt;

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Scheme {
    /// Declared constants in declaration order, with ranks. `br` is present
    /// implicitly and need not be declared.
    pub symbols: Vec<(String, usize)>,
    /// One rewrite rule per nonterminal; the first rule defines the start.
    pub rules: Vec<Rule>,
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Rule {
    pub name: String,
    pub params: Vec<String>,
    pub body: SExpr,
}

/// Raw rule bodies as parsed, before sort inference.
#[derive(Clone, PartialEq, Eq, Debug)]
pub enum SExpr {
    Ident(String),
    App(Box<SExpr>, Box<SExpr>),
    Lam(Vec<String>, Box<SExpr>),
}

#[derive(thiserror::Error, Debug, Clone, PartialEq, Eq)]
pub enum SchemeError {
    #[error("{line}:{col}: {msg}")]
    Parse { line: usize, col: usize, msg: String },
    #[error("scheme has no rules")]
    Empty,
    #[error("start nonterminal `{0}` must have sort o (it has parameters or a non-base sort)")]
    StartNotBase(String),
    #[error("duplicate rule for nonterminal `{0}`")]
    DuplicateRule(String),
    #[error("rule `{rule}`: constant `{sym}` of rank {rank} is partially applied; wrap it as \\x. {sym} .. x")]
    PartialConstant { rule: String, sym: String, rank: usize },
    #[error("rule `{rule}`: unknown identifier `{name}`")]
    UnknownIdent { rule: String, name: String },
    #[error("rule `{rule}`: `{name}` shadows a symbol or nonterminal")]
    Shadowing { rule: String, name: String },
    #[error("rule `{rule}`: sort mismatch ({msg})")]
    SortMismatch { rule: String, msg: String },
}

pub fn parse_scheme(input: &str) -> Result<Scheme, SchemeError> {
    let mut symbols: Vec<(String, usize)> = Vec::new();
    let mut rules: Vec<Rule> = Vec::new();
    for (lineno, raw) in input.lines().enumerate() {
        let line = match raw.find('#') {
            Some(i) => &raw[..i],
            None => raw,
        };
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(rest) = trimmed.strip_prefix("symbol ") {
            let mut it = rest.split_whitespace();
            let (name, rank) = match (it.next(), it.next(), it.next()) {
                (Some(n), Some(r), None) => (n, r),
                _ => {
                    return Err(SchemeError::Parse {
                        line: lineno + 1,
                        col: 1,
                        msg: "expected `symbol <name> <rank>`".into(),
                    })
                }
            };
            let rank: usize = rank.parse().map_err(|_| SchemeError::Parse {
                line: lineno + 1,
                col: 1,
                msg: format!("bad rank `{}`", rank),
            })?;
            symbols.push((name.to_string(), rank));
        } else {
            let eq = trimmed.find('=').ok_or(SchemeError::Parse {
                line: lineno + 1,
                col: 1,
                msg: "expected `N x1 .. xk = body`".into(),
            })?;
            let lhs: Vec<&str> = trimmed[..eq].split_whitespace().collect();
            if lhs.is_empty() {
                return Err(SchemeError::Parse {
                    line: lineno + 1,
                    col: 1,
                    msg: "rule without a nonterminal".into(),
                });
            }
            let body = parse_sexpr(&trimmed[eq + 1..], lineno + 1, eq + 2)?;
            rules.push(Rule {
                name: lhs[0].to_string(),
                params: lhs[1..].iter().map(|s| s.to_string()).collect(),
                body,
            });
        }
    }
    let mut seen = std::collections::BTreeSet::new();
    for r in &rules {
        if !seen.insert(r.name.clone()) {
            return Err(SchemeError::DuplicateRule(r.name.clone()));
        }
    }
    Ok(Scheme { symbols, rules })
}

fn parse_sexpr(src: &str, line: usize, col0: usize) -> Result<SExpr, SchemeError> {
    let mut p = SParser {
        src,
        pos: 0,
        line,
        col0,
    };
    let e = p.expr()?;
    p.ws();
    if p.pos < p.src.len() {
        return Err(p.err("trailing input"));
    }
    Ok(e)
}

struct SParser<'a> {
    src: &'a str,
    pos: usize,
    line: usize,
    col0: usize,
}

impl<'a> SParser<'a> {
    fn err(&self, msg: &str) -> SchemeError {
        SchemeError::Parse {
            line: self.line,
            col: self.col0 + self.pos,
            msg: msg.to_string(),
        }
    }

    fn ws(&mut self) {
        while self.src[self.pos..].starts_with(' ') || self.src[self.pos..].starts_with('\t') {
            self.pos += 1;
        }
    }

    fn ident(&mut self) -> Option<String> {
        self.ws();
        let start = self.pos;
        while self
            .src
            .as_bytes()
            .get(self.pos)
            .is_some_and(|b| b.is_ascii_alphanumeric() || *b == b'_' || *b == b'\'')
        {
            self.pos += 1;
        }
        if start == self.pos {
            None
        } else {
            Some(self.src[start..self.pos].to_string())
        }
    }

    fn expr(&mut self) -> Result<SExpr, SchemeError> {
        let mut head = self.atom()?.ok_or_else(|| self.err("expected expression"))?;
        while let Some(next) = self.atom()? {
            head = SExpr::App(Box::new(head), Box::new(next));
        }
        Ok(head)
    }

    fn atom(&mut self) -> Result<Option<SExpr>, SchemeError> {
        self.ws();
        let rest = &self.src[self.pos..];
        if rest.starts_with('(') {
            self.pos += 1;
            let e = self.expr()?;
            self.ws();
            if !self.src[self.pos..].starts_with(')') {
                return Err(self.err("expected ')'"));
            }
            self.pos += 1;
            Ok(Some(e))
        } else if rest.starts_with('\\') {
            self.pos += 1;
            let mut params = Vec::new();
            while let Some(p) = self.ident() {
                params.push(p);
            }
            if params.is_empty() {
                return Err(self.err("expected parameter after '\\'"));
            }
            self.ws();
            if !self.src[self.pos..].starts_with('.') {
                return Err(self.err("expected '.' after lambda parameters"));
            }
            self.pos += 1;
            let body = self.expr()?;
            Ok(Some(SExpr::Lam(params, Box::new(body))))
        } else if rest.starts_with(')') || rest.is_empty() {
            Ok(None)
        } else {
            match self.ident() {
                Some(id) => Ok(Some(SExpr::Ident(id))),
                None => Err(self.err("unexpected character")),
            }
        }
    }
}

pub fn print_scheme(s: &Scheme) -> String {
    let mut out = String::new();
    for (name, rank) in &s.symbols {
        out.push_str(&format!("symbol {} {}\n", name, rank));
    }
    for r in &s.rules {
        out.push_str(&r.name);
        for p in &r.params {
            out.push(' ');
            out.push_str(p);
        }
        out.push_str(" = ");
        out.push_str(&print_sexpr(&r.body, false));
        out.push('\n');
    }
    out
}

fn print_sexpr(e: &SExpr, atom: bool) -> String {
    match e {
        SExpr::Ident(s) => s.clone(),
        SExpr::App(f, a) => {
            let inner = format!("{} {}", print_sexpr(f, false), print_sexpr(a, true));
            if atom {
                format!("({})", inner)
            } else {
                inner
            }
        }
        SExpr::Lam(params, body) => {
            let inner = format!("\\{}. {}", params.join(" "), print_sexpr(body, false));
            if atom {
                format!("({})", inner)
            } else {
                inner
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Sort inference
// ---------------------------------------------------------------------------

#[derive(Clone, PartialEq, Eq, Debug)]
enum STy {
    Base,
    Arrow(Box<STy>, Box<STy>),
    Var(u32),
}

#[derive(Default)]
struct Unifier {
    bindings: Vec<Option<STy>>,
}

impl Unifier {
    fn fresh(&mut self) -> STy {
        self.bindings.push(None);
        STy::Var(self.bindings.len() as u32 - 1)
    }

    fn resolve(&self, t: &STy) -> STy {
        match t {
            STy::Var(v) => match &self.bindings[*v as usize] {
                Some(b) => self.resolve(&b.clone()),
                None => t.clone(),
            },
            _ => t.clone(),
        }
    }

    fn occurs(&self, v: u32, t: &STy) -> bool {
        match self.resolve(t) {
            STy::Var(w) => w == v,
            STy::Base => false,
            STy::Arrow(a, b) => self.occurs(v, &a) || self.occurs(v, &b),
        }
    }

    fn unify(&mut self, a: &STy, b: &STy) -> Result<(), String> {
        let (a, b) = (self.resolve(a), self.resolve(b));
        match (&a, &b) {
            (STy::Var(v), _) => {
                if let STy::Var(w) = &b {
                    if v == w {
                        return Ok(());
                    }
                }
                if self.occurs(*v, &b) {
                    return Err("cyclic sort".into());
                }
                self.bindings[*v as usize] = Some(b);
                Ok(())
            }
            (_, STy::Var(_)) => self.unify(&b, &a),
            (STy::Base, STy::Base) => Ok(()),
            (STy::Arrow(a1, a2), STy::Arrow(b1, b2)) => {
                self.unify(a1, b1)?;
                self.unify(a2, b2)
            }
            _ => Err(format!("{} vs {}", self.show(&a), self.show(&b))),
        }
    }

    /// Resolves to a concrete sort; unconstrained variables default to `o`.
    fn to_sort(&self, t: &STy) -> Sort {
        match self.resolve(t) {
            STy::Base | STy::Var(_) => Sort::Base,
            STy::Arrow(a, b) => Sort::arrow(self.to_sort(&a), self.to_sort(&b)),
        }
    }

    fn show(&self, t: &STy) -> String {
        match self.resolve(t) {
            STy::Base => "o".into(),
            STy::Var(v) => format!("?{}", v),
            STy::Arrow(a, b) => format!("({}->{})", self.show(&a), self.show(&b)),
        }
    }
}

/// The inferred sorts of all nonterminals, keyed by name.
pub fn infer_sorts(s: &Scheme) -> Result<HashMap<String, Sort>, SchemeError> {
    let (u, vars) = run_inference(s)?;
    Ok(s.rules
        .iter()
        .map(|r| (r.name.clone(), u.to_sort(&vars[&r.name])))
        .collect())
}

fn run_inference(s: &Scheme) -> Result<(Unifier, HashMap<String, STy>), SchemeError> {
    let mut u = Unifier::default();
    let ranks = symbol_ranks(s);
    let mut nt_vars: HashMap<String, STy> = HashMap::new();
    for r in &s.rules {
        nt_vars.insert(r.name.clone(), u.fresh());
    }
    for r in &s.rules {
        let mut env: Vec<(String, STy)> = Vec::new();
        let mut param_tys = Vec::new();
        for p in &r.params {
            if ranks.contains_key(p) || nt_vars.contains_key(p) {
                return Err(SchemeError::Shadowing {
                    rule: r.name.clone(),
                    name: p.clone(),
                });
            }
            let v = u.fresh();
            env.push((p.clone(), v.clone()));
            param_tys.push(v);
        }
        let body_ty = infer_expr(&r.body, &mut env, &mut u, &ranks, &nt_vars, &r.name)?;
        u.unify(&body_ty, &STy::Base)
            .map_err(|msg| SchemeError::SortMismatch {
                rule: r.name.clone(),
                msg,
            })?;
        let mut rule_ty = STy::Base;
        for p in param_tys.into_iter().rev() {
            rule_ty = STy::Arrow(Box::new(p), Box::new(rule_ty));
        }
        u.unify(&nt_vars[&r.name], &rule_ty)
            .map_err(|msg| SchemeError::SortMismatch {
                rule: r.name.clone(),
                msg,
            })?;
    }
    Ok((u, nt_vars))
}

fn symbol_ranks(s: &Scheme) -> HashMap<String, usize> {
    let mut ranks: HashMap<String, usize> = s.symbols.iter().cloned().collect();
    ranks.entry(BR.to_string()).or_insert(2);
    ranks
}

fn infer_expr(
    e: &SExpr,
    env: &mut Vec<(String, STy)>,
    u: &mut Unifier,
    ranks: &HashMap<String, usize>,
    nts: &HashMap<String, STy>,
    rule: &str,
) -> Result<STy, SchemeError> {
    // Flatten the application spine to treat constants specially: a constant
    // of rank r must be applied to exactly r arguments of sort o.
    let mut spine = Vec::new();
    let mut head = e;
    while let SExpr::App(f, a) = head {
        spine.push(a.as_ref());
        head = f;
    }
    spine.reverse();
    match head {
        SExpr::Ident(name) => {
            if let Some((_, ty)) = env.iter().rev().find(|(n, _)| n == name) {
                let mut ty = ty.clone();
                for arg in spine {
                    let at = infer_expr(arg, env, u, ranks, nts, rule)?;
                    let rt = u.fresh();
                    u.unify(&ty, &STy::Arrow(Box::new(at), Box::new(rt.clone())))
                        .map_err(|msg| SchemeError::SortMismatch {
                            rule: rule.to_string(),
                            msg,
                        })?;
                    ty = rt;
                }
                Ok(ty)
            } else if let Some(rank) = ranks.get(name) {
                if spine.len() != *rank {
                    return Err(SchemeError::PartialConstant {
                        rule: rule.to_string(),
                        sym: name.clone(),
                        rank: *rank,
                    });
                }
                for arg in spine {
                    let at = infer_expr(arg, env, u, ranks, nts, rule)?;
                    u.unify(&at, &STy::Base)
                        .map_err(|msg| SchemeError::SortMismatch {
                            rule: rule.to_string(),
                            msg,
                        })?;
                }
                Ok(STy::Base)
            } else if let Some(ty) = nts.get(name) {
                let mut ty = ty.clone();
                for arg in spine {
                    let at = infer_expr(arg, env, u, ranks, nts, rule)?;
                    let rt = u.fresh();
                    u.unify(&ty, &STy::Arrow(Box::new(at), Box::new(rt.clone())))
                        .map_err(|msg| SchemeError::SortMismatch {
                            rule: rule.to_string(),
                            msg,
                        })?;
                    ty = rt;
                }
                Ok(ty)
            } else {
                Err(SchemeError::UnknownIdent {
                    rule: rule.to_string(),
                    name: name.clone(),
                })
            }
        }
        SExpr::Lam(params, body) => {
            for p in params {
                if ranks.contains_key(p) || nts.contains_key(p) {
                    return Err(SchemeError::Shadowing {
                        rule: rule.to_string(),
                        name: p.clone(),
                    });
                }
                let v = u.fresh();
                env.push((p.clone(), v));
            }
            let bt = infer_expr(body, env, u, ranks, nts, rule)?;
            let mut ty = bt;
            for _ in 0..params.len() {
                let (_, pt) = env.pop().expect("pushed above");
                ty = STy::Arrow(Box::new(pt), Box::new(ty));
            }
            let mut ty_final = ty;
            for arg in spine {
                let at = infer_expr(arg, env, u, ranks, nts, rule)?;
                let rt = u.fresh();
                u.unify(&ty_final, &STy::Arrow(Box::new(at), Box::new(rt.clone())))
                    .map_err(|msg| SchemeError::SortMismatch {
                        rule: rule.to_string(),
                        msg,
                    })?;
                ty_final = rt;
            }
            Ok(ty_final)
        }
        SExpr::App(..) => unreachable!("spine flattened"),
    }
}

// ---------------------------------------------------------------------------
// Conversion to a closed lambda-Y term
// ---------------------------------------------------------------------------

/// Converts the scheme into a closed lambda-Y term of sort `o` whose tree
/// language equals the scheme's. Each nonterminal becomes a `Y` fixpoint of
/// its rule body; mutual recursion is eliminated by inlining later rules into
/// earlier ones.
pub fn scheme_to_term(s: &Scheme) -> Result<Term, SchemeError> {
    if s.rules.is_empty() {
        return Err(SchemeError::Empty);
    }
    if !s.rules[0].params.is_empty() {
        return Err(SchemeError::StartNotBase(s.rules[0].name.clone()));
    }
    let (mut u, nt_vars) = run_inference(s)?;
    let nt_sorts: HashMap<String, Sort> = s
        .rules
        .iter()
        .map(|r| (r.name.clone(), u.to_sort(&nt_vars[&r.name])))
        .collect();
    if !nt_sorts[&s.rules[0].name].is_base() {
        return Err(SchemeError::StartNotBase(s.rules[0].name.clone()));
    }
    let ranks = symbol_ranks(s);

    // Per-rule lambda-lifted bodies: \params. body, with nonterminal
    // references left as free variables.
    let mut lifted: Vec<(String, Term)> = Vec::new();
    for r in &s.rules {
        // Parameter sorts come from decomposing the rule's inferred sort.
        let mut env: Vec<(String, STy)> = Vec::new();
        let mut ty = u.resolve(&nt_vars[&r.name]);
        for p in &r.params {
            match ty {
                STy::Arrow(a, b) => {
                    env.push((p.clone(), u.resolve(&a)));
                    ty = u.resolve(&b);
                }
                _ => unreachable!("rule sort matches its parameter count"),
            }
        }
        let body = convert_expr(&r.body, &mut env, &mut u, &ranks, &nt_vars, &nt_sorts, &r.name)?;
        let mut t = body;
        for p in r.params.iter().rev() {
            let ty = env
                .iter()
                .rev()
                .find(|(n, _)| n == p)
                .map(|(_, ty)| u.to_sort(ty))
                .expect("param in env");
            t = Term::lam(p, ty, t);
        }
        lifted.push((r.name.clone(), t));
    }

    // Eliminate nonterminals from last to first: each becomes a Y fixpoint,
    // inlined into all earlier bodies.
    for i in (0..lifted.len()).rev() {
        let (name, body) = lifted[i].clone();
        let sort = nt_sorts[&name].clone();
        let fixed = Term::app(Term::y(sort.clone()), Term::lam(&name, sort, body));
        for (_, other) in lifted.iter_mut().take(i) {
            *other = crate::term::substitute(other, &name, &fixed);
        }
        lifted[i].1 = fixed;
    }
    Ok(lifted[0].1.clone())
}

fn convert_expr(
    e: &SExpr,
    env: &mut Vec<(String, STy)>,
    u: &mut Unifier,
    ranks: &HashMap<String, usize>,
    nts: &HashMap<String, STy>,
    nt_sorts: &HashMap<String, Sort>,
    rule: &str,
) -> Result<Term, SchemeError> {
    let mut spine = Vec::new();
    let mut head = e;
    while let SExpr::App(f, a) = head {
        spine.push(a.as_ref());
        head = f;
    }
    spine.reverse();
    let head_term = match head {
        SExpr::Ident(name) => {
            if let Some((_, ty)) = env.iter().rev().find(|(n, _)| n == name) {
                Term::var(name, u.to_sort(&ty.clone()))
            } else if let Some(rank) = ranks.get(name) {
                if spine.len() != *rank {
                    return Err(SchemeError::PartialConstant {
                        rule: rule.to_string(),
                        sym: name.clone(),
                        rank: *rank,
                    });
                }
                let mut args = Vec::new();
                for a in &spine {
                    args.push(convert_expr(a, env, u, ranks, nts, nt_sorts, rule)?);
                }
                return Ok(Term::cst(name, args));
            } else if nts.contains_key(name) {
                Term::var(name, nt_sorts[name].clone())
            } else {
                return Err(SchemeError::UnknownIdent {
                    rule: rule.to_string(),
                    name: name.clone(),
                });
            }
        }
        SExpr::Lam(params, body) => {
            // Re-infer the lambda's parameter sorts in context.
            let mut tys = Vec::new();
            for p in params {
                let v = u.fresh();
                env.push((p.clone(), v.clone()));
                tys.push(v);
            }
            let bt = infer_expr(body, env, u, ranks, nts, rule)?;
            // Constrain against the application context before converting.
            let mut whole = bt.clone();
            for pt in tys.iter().rev() {
                whole = STy::Arrow(Box::new(pt.clone()), Box::new(whole));
            }
            constrain_spine(&whole, &spine, env, u, ranks, nts, rule)?;
            let inner = convert_expr(body, env, u, ranks, nts, nt_sorts, rule)?;
            let mut t = inner;
            for p in params.iter().rev() {
                let (_, pt) = env.pop().expect("pushed above");
                t = Term::lam(p, u.to_sort(&pt), t);
            }
            t
        }
        SExpr::App(..) => unreachable!(),
    };
    let mut t = head_term;
    for a in &spine {
        let arg = convert_expr(a, env, u, ranks, nts, nt_sorts, rule)?;
        t = Term::app(t, arg);
    }
    Ok(t)
}

fn constrain_spine(
    head_ty: &STy,
    spine: &[&SExpr],
    env: &mut Vec<(String, STy)>,
    u: &mut Unifier,
    ranks: &HashMap<String, usize>,
    nts: &HashMap<String, STy>,
    rule: &str,
) -> Result<(), SchemeError> {
    let mut ty = head_ty.clone();
    for a in spine {
        let at = infer_expr(a, env, u, ranks, nts, rule)?;
        let rt = u.fresh();
        u.unify(&ty, &STy::Arrow(Box::new(at), Box::new(rt.clone())))
            .map_err(|msg| SchemeError::SortMismatch {
                rule: rule.to_string(),
                msg,
            })?;
        ty = rt;
    }
    Ok(())
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", print_scheme(self))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sort::parse_sort;

    #[test]
    fn single_rule_becomes_a_fixpoint() {
        let s = parse_scheme("symbol a 1\nsymbol e 0\nS = br e (a S)\n").unwrap();
        let t = scheme_to_term(&s).unwrap();
        let o = Sort::Base;
        let expected = Term::app(
            Term::y(o.clone()),
            Term::lam(
                "S",
                o.clone(),
                Term::cst(
                    BR,
                    vec![
                        Term::cst("e", vec![]),
                        Term::cst("a", vec![Term::var("S", o)]),
                    ],
                ),
            ),
        );
        assert_eq!(t, expected);
    }

    #[test]
    fn sorts_are_inferred() {
        let s = parse_scheme(
            "symbol a 1\nsymbol e 0\nS = R (\\x. a x)\nR f = br (f e) (R (\\x. f (f x)))\n",
        )
        .unwrap();
        let sorts = infer_sorts(&s).unwrap();
        assert_eq!(sorts["S"], Sort::Base);
        assert_eq!(sorts["R"], parse_sort("(o->o)->o").unwrap());
        let t = scheme_to_term(&s).unwrap();
        assert_eq!(crate::term::sort_check(&t).unwrap(), Sort::Base);
    }

    #[test]
    fn empty_scheme_rejected() {
        let s = parse_scheme("symbol e 0\n").unwrap();
        assert_eq!(scheme_to_term(&s), Err(SchemeError::Empty));
    }

    #[test]
    fn partial_constant_rejected() {
        let s = parse_scheme("symbol a 1\nsymbol e 0\nS = F a\nF f = f e\n").unwrap();
        assert!(matches!(
            scheme_to_term(&s),
            Err(SchemeError::PartialConstant { .. })
        ));
    }

    #[test]
    fn print_parse_round_trip() {
        let src = "symbol a 1\nsymbol e 0\nS = R (\\x. a x)\nR f = br (f e) (R (\\x. f (f x)))\n";
        let s1 = parse_scheme(src).unwrap();
        let s2 = parse_scheme(&print_scheme(&s1)).unwrap();
        assert_eq!(s1, s2);
    }
}
