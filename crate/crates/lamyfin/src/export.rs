//! Derivation export: lossless JSON (round-trips through the validator),
//! GraphViz DOT with flag/marker placements highlighted, and an indented
//! text proof.

use crate::closure::NodeId;
use crate::judgment::{render_judgment, Ctx, Derivation, Judgment, RuleKind};
use crate::sort::{parse_sort, Sort};
use crate::term::Term;
use crate::types::{OrderSet, TypeEnv};
use serde::{Deserialize, Serialize};

#[derive(Serialize, Deserialize)]
struct EnvEntryJson {
    slot: u32,
    sort: String,
    types: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct DerivationJson {
    env: Vec<EnvEntryJson>,
    subject: u32,
    subject_display: String,
    order: u8,
    flags: Vec<u8>,
    markers: Vec<u8>,
    itype: String,
    counter: u64,
    rule: RuleKind,
    premisses: Vec<DerivationJson>,
    placed_flags: Vec<u64>,
    placed_markers: Vec<u8>,
}

#[derive(Serialize, Deserialize)]
pub struct ExportedDerivation {
    term: String,
    derivation: DerivationJson,
}

#[derive(thiserror::Error, Debug)]
pub enum ImportError {
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("term: {0}")]
    Term(String),
    #[error("sort: {0}")]
    Sort(#[from] crate::term::SortError),
    #[error("type: {0}")]
    Type(#[from] crate::types::TypeError),
    #[error("unknown subterm id {0}")]
    BadSubject(u32),
}

fn to_json(ctx: &Ctx, d: &Derivation) -> DerivationJson {
    let ft = ctx.store.fulltype(d.judgment.full_type);
    DerivationJson {
        env: d
            .judgment
            .env
            .iter()
            .map(|(slot, tys)| {
                let sort = tys
                    .iter()
                    .next()
                    .map(|t| ctx.store.fulltype_sort(*t).to_string())
                    .unwrap_or_else(|| "o".to_string());
                EnvEntryJson {
                    slot: *slot,
                    sort,
                    types: tys
                        .iter()
                        .map(|t| ctx.store.render_fulltype(*t).to_string())
                        .collect(),
                }
            })
            .collect(),
        subject: d.judgment.subject.0,
        subject_display: ctx.closure.display(d.judgment.subject, 6),
        order: ft.order,
        flags: ft.flags.iter().collect(),
        markers: ft.markers.iter().collect(),
        itype: ctx.store.render_itype(ft.itype).to_string(),
        counter: d.judgment.counter,
        rule: d.rule,
        premisses: d.premisses.iter().map(|p| to_json(ctx, p)).collect(),
        placed_flags: d.placed_flags.clone(),
        placed_markers: d.placed_markers.iter().collect(),
    }
}

/// Serializes a derivation to JSON, embedding the analyzed term so the
/// closure (and with it every subterm id) can be rebuilt on import.
pub fn export_json(ctx: &Ctx, term: &Term, d: &Derivation) -> String {
    let doc = ExportedDerivation {
        term: term.to_string(),
        derivation: to_json(ctx, d),
    };
    serde_json::to_string_pretty(&doc).expect("derivation serializes")
}

/// Parses an exported derivation back into a context and derivation. The
/// result still has to pass [`crate::rules::validate`]; importing does not
/// re-check the rules.
pub fn import_json(json: &str) -> Result<(Term, Ctx, Derivation), ImportError> {
    let doc: ExportedDerivation = serde_json::from_str(json)?;
    let term = parse_term(&doc.term).map_err(ImportError::Term)?;
    let mut ctx = Ctx::new(&term)?;
    ctx.m = doc.derivation.order;
    let derivation = from_json(&mut ctx, &doc.derivation)?;
    Ok((term, ctx, derivation))
}

fn from_json(ctx: &mut Ctx, j: &DerivationJson) -> Result<Derivation, ImportError> {
    if j.subject as usize >= ctx.closure.len() {
        return Err(ImportError::BadSubject(j.subject));
    }
    let subject = NodeId(j.subject);
    let mut env = TypeEnv::new();
    for e in &j.env {
        let sort = parse_sort(&e.sort).map_err(ImportError::Term)?;
        let mut set = std::collections::BTreeSet::new();
        for t in &e.types {
            set.insert(ctx.store.parse_fulltype(t, &sort)?);
        }
        env.insert(e.slot, set);
    }
    let subject_sort = ctx.closure.node(subject).sort.clone();
    let full = format!(
        "({},{},{},{})",
        j.order,
        OrderSet::from_iter(j.flags.iter().copied()).render(),
        OrderSet::from_iter(j.markers.iter().copied()).render(),
        j.itype
    );
    let full_type = ctx.store.parse_fulltype(&full, &subject_sort)?;
    let premisses: Result<Vec<Derivation>, ImportError> =
        j.premisses.iter().map(|p| from_json(ctx, p)).collect();
    Ok(Derivation {
        judgment: Judgment {
            env,
            subject,
            full_type,
            counter: j.counter,
        },
        rule: j.rule,
        premisses: premisses?,
        placed_flags: j.placed_flags.clone(),
        placed_markers: OrderSet::from_iter(j.placed_markers.iter().copied()),
    })
}

/// Indented text proof: premisses above their conclusion, root last.
pub fn export_text(ctx: &Ctx, d: &Derivation) -> String {
    let mut out = String::new();
    fn go(ctx: &Ctx, d: &Derivation, depth: usize, out: &mut String) {
        for p in &d.premisses {
            go(ctx, p, depth + 1, out);
        }
        let mut line = format!(
            "{}({}) {}",
            "  ".repeat(depth),
            d.rule,
            render_judgment(ctx, &d.judgment)
        );
        let placed: Vec<String> = d
            .placed_flags
            .iter()
            .enumerate()
            .filter(|(_, c)| **c > 0)
            .map(|(n, c)| format!("{}x ord {}", c, n))
            .collect();
        if !placed.is_empty() {
            line.push_str(&format!("  [flags placed: {}]", placed.join(", ")));
        }
        if !d.placed_markers.is_empty() {
            line.push_str(&format!("  [markers placed: {}]", d.placed_markers));
        }
        out.push_str(&line);
        out.push('\n');
    }
    go(ctx, d, 0, &mut out);
    out
}

/// GraphViz rendering of the proof tree; nodes that place flags or markers
/// are doubled and colored.
pub fn export_dot(ctx: &Ctx, d: &Derivation) -> String {
    let mut out = String::from("digraph derivation {\n  node [shape=box, fontname=\"monospace\"];\n");
    let mut counter = 0usize;
    fn go(
        ctx: &Ctx,
        d: &Derivation,
        counter: &mut usize,
        out: &mut String,
    ) -> usize {
        let me = *counter;
        *counter += 1;
        let label = format!("({}) {}", d.rule, render_judgment(ctx, &d.judgment))
            .replace('\\', "\\\\")
            .replace('"', "\\\"");
        let placed_any =
            d.placed_flags.iter().any(|c| *c > 0) || !d.placed_markers.is_empty();
        let style = if placed_any {
            ", peripheries=2, color=firebrick"
        } else {
            ""
        };
        out.push_str(&format!("  n{} [label=\"{}\"{}];\n", me, label, style));
        for p in &d.premisses {
            let c = go(ctx, p, counter, out);
            out.push_str(&format!("  n{} -> n{};\n", me, c));
        }
        me
    }
    go(ctx, d, &mut counter, &mut out);
    out.push_str("}\n");
    out
}

// ---------------------------------------------------------------------------
// Term text parsing (inverse of `Term`'s Display)
// ---------------------------------------------------------------------------

/// Parses the term syntax printed by [`Term`]'s `Display`: `\x:SORT. body`,
/// juxtaposition for application, `Y[SORT]`, identifiers. Identifiers bound
/// by a lambda are variables; all others are constants, their ranks given by
/// their applied arity.
pub fn parse_term(input: &str) -> Result<Term, String> {
    let mut p = TermParser {
        s: input,
        pos: 0,
        scope: Vec::new(),
    };
    let t = p.term()?;
    p.ws();
    if p.pos < p.s.len() {
        return Err(format!("trailing input at byte {}", p.pos));
    }
    Ok(t)
}

struct TermParser<'a> {
    s: &'a str,
    pos: usize,
    scope: Vec<(String, Sort)>,
}

impl<'a> TermParser<'a> {
    fn ws(&mut self) {
        while self.s[self.pos..].starts_with(' ') {
            self.pos += 1;
        }
    }

    fn ident(&mut self) -> Option<String> {
        self.ws();
        let start = self.pos;
        while self
            .s
            .as_bytes()
            .get(self.pos)
            .is_some_and(|b| b.is_ascii_alphanumeric() || *b == b'_' || *b == b'\'')
        {
            self.pos += 1;
        }
        if start == self.pos {
            None
        } else {
            Some(self.s[start..self.pos].to_string())
        }
    }

    fn term(&mut self) -> Result<Term, String> {
        self.ws();
        if self.s[self.pos..].starts_with('\\') {
            self.pos += 1;
            let param = self.ident().ok_or("expected parameter")?;
            self.ws();
            if !self.s[self.pos..].starts_with(':') {
                return Err("expected ':' with parameter sort".into());
            }
            self.pos += 1;
            let sort_start = self.pos;
            let mut depth = 0i32;
            while let Some(c) = self.s[self.pos..].chars().next() {
                match c {
                    '(' => depth += 1,
                    ')' => depth -= 1,
                    '.' if depth == 0 => break,
                    _ => {}
                }
                self.pos += c.len_utf8();
            }
            let sort = parse_sort(&self.s[sort_start..self.pos])?;
            self.pos += 1; // '.'
            self.scope.push((param.clone(), sort.clone()));
            let body = self.term()?;
            self.scope.pop();
            return Ok(Term::lam(&param, sort, body));
        }
        // Application spine; constant heads absorb their arguments.
        let mut parts: Vec<Term> = Vec::new();
        let mut const_head: Option<String> = None;
        loop {
            self.ws();
            let rest = &self.s[self.pos..];
            if rest.starts_with("Y[") {
                self.pos += 2;
                let start = self.pos;
                let mut depth = 1i32;
                while let Some(c) = self.s[self.pos..].chars().next() {
                    match c {
                        '[' => depth += 1,
                        ']' => {
                            depth -= 1;
                            if depth == 0 {
                                break;
                            }
                        }
                        _ => {}
                    }
                    self.pos += c.len_utf8();
                }
                let alpha = parse_sort(&self.s[start..self.pos])?;
                self.pos += 1;
                parts.push(Term::y(alpha));
            } else if rest.starts_with('(') {
                self.pos += 1;
                let t = self.term()?;
                self.ws();
                if !self.s[self.pos..].starts_with(')') {
                    return Err("expected ')'".into());
                }
                self.pos += 1;
                parts.push(t);
            } else if rest.starts_with('\\') {
                parts.push(self.term()?);
            } else if let Some(id) = self.ident() {
                if let Some((_, sort)) = self.scope.iter().rev().find(|(n, _)| *n == id) {
                    parts.push(Term::var(&id, sort.clone()));
                } else if parts.is_empty() && const_head.is_none() {
                    const_head = Some(id);
                } else {
                    // Constant in argument position: rank 0.
                    parts.push(Term::cst(&id, vec![]));
                }
            } else {
                break;
            }
        }
        match const_head {
            Some(sym) => {
                // All collected parts are the constant's arguments.
                Ok(Term::cst(&sym, parts))
            }
            None => {
                let mut it = parts.into_iter();
                let head = it.next().ok_or("expected term")?;
                Ok(it.fold(head, Term::app))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn term_display_parse_round_trip() {
        let src = "Y[(o->o)->o] (\\R:(o->o)->o. \\f:o->o. br (f e) (R (\\x:o. f (f x)))) (\\x:o. a x)";
        let t = parse_term(src).unwrap();
        let printed = t.to_string();
        let t2 = parse_term(&printed).unwrap();
        assert_eq!(t, t2);
        assert!(crate::term::sort_check(&t).unwrap().is_base());
    }

    #[test]
    fn nested_constant_in_argument_position() {
        let t = parse_term("a (b e e)").unwrap();
        assert_eq!(
            t,
            Term::cst(
                "a",
                vec![Term::cst(
                    "b",
                    vec![Term::cst("e", vec![]), Term::cst("e", vec![])]
                )]
            )
        );
    }
}
