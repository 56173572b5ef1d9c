//! Type judgments and derivation trees.

use crate::closure::{Closure, NodeId};
use crate::types::{FullTypeId, OrderSet, TypeEnv, TypeStore};
use serde::{Deserialize, Serialize};

/// Shared context for building and checking derivations: the subterm closure
/// of the analyzed term plus the type interner. `m` is the complexity, which
/// is also the order of every derived full type.
pub struct Ctx {
    pub closure: Closure,
    pub store: TypeStore,
    pub m: u8,
}

impl Ctx {
    pub fn new(term: &crate::term::Term) -> Result<Ctx, crate::term::SortError> {
        let closure = Closure::build(term)?;
        let m = closure.complexity();
        Ok(Ctx {
            closure,
            store: TypeStore::new(),
            m,
        })
    }

    /// The target full type of the finiteness analysis:
    /// `(m, {}, {0,..,m-1}, o)`.
    pub fn rho_m(&mut self) -> FullTypeId {
        let base = self.store.base();
        self.store
            .mk_fulltype(self.m, OrderSet::EMPTY, OrderSet::below(self.m), base)
            .expect("rho_m is well-formed")
    }
}

/// One type judgment `env |- subject : full_type |> counter`.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Judgment {
    pub env: TypeEnv,
    pub subject: NodeId,
    pub full_type: FullTypeId,
    pub counter: u64,
}

/// A judgment without its flag counter. Two judgments are *equivalent*
/// exactly when their skeletons are equal.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct JudgmentSkeleton {
    pub env: Vec<(u32, Vec<FullTypeId>)>,
    pub subject: NodeId,
    pub full_type: FullTypeId,
}

impl Judgment {
    pub fn skeleton(&self) -> JudgmentSkeleton {
        JudgmentSkeleton {
            env: self
                .env
                .iter()
                .map(|(slot, tys)| (*slot, tys.iter().copied().collect()))
                .collect(),
            subject: self.subject,
            full_type: self.full_type,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub enum RuleKind {
    Br,
    Var,
    Lam,
    Con,
    App,
}

impl std::fmt::Display for RuleKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            RuleKind::Br => "Br",
            RuleKind::Var => "Var",
            RuleKind::Lam => "λ",
            RuleKind::Con => "Con",
            RuleKind::App => "@",
        };
        write!(f, "{}", s)
    }
}

/// A finite typing derivation. Every node records which flags it places per
/// order (`placed_flags[n]` is the number of order-`n` flags) and which
/// markers it places (`placed_markers`, at a variable leaf or a rank-0
/// constant).
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Derivation {
    pub judgment: Judgment,
    pub rule: RuleKind,
    pub premisses: Vec<Derivation>,
    pub placed_flags: Vec<u64>,
    pub placed_markers: OrderSet,
}

impl Derivation {
    pub fn node_count(&self) -> usize {
        1 + self.premisses.iter().map(|p| p.node_count()).sum::<usize>()
    }

    pub fn at_path(&self, path: &[usize]) -> Option<&Derivation> {
        let mut cur = self;
        for &i in path {
            cur = cur.premisses.get(i)?;
        }
        Some(cur)
    }

    /// Walks all nodes with their paths.
    pub fn walk<'a>(&'a self, f: &mut impl FnMut(&[usize], &'a Derivation)) {
        fn go<'a>(
            d: &'a Derivation,
            path: &mut Vec<usize>,
            f: &mut impl FnMut(&[usize], &'a Derivation),
        ) {
            f(path, d);
            for (i, p) in d.premisses.iter().enumerate() {
                path.push(i);
                go(p, path, f);
                path.pop();
            }
        }
        go(self, &mut Vec::new(), f);
    }

    /// Renders the judgment of this node, paper style.
    pub fn render_judgment(&self, ctx: &Ctx) -> String {
        render_judgment(ctx, &self.judgment)
    }
}

pub fn render_env(ctx: &Ctx, env: &TypeEnv) -> String {
    if env.is_empty() {
        return "ε".to_string();
    }
    let parts: Vec<String> = env
        .iter()
        .map(|(slot, tys)| {
            let tys: Vec<&str> = tys
                .iter()
                .map(|t| ctx.store.render_fulltype(*t))
                .collect();
            format!("#{} ↦ {{{}}}", slot, tys.join(","))
        })
        .collect();
    format!("[{}]", parts.join(", "))
}

pub fn render_judgment(ctx: &Ctx, j: &Judgment) -> String {
    format!(
        "{} ⊢ {} : {} ▷ {}",
        render_env(ctx, &j.env),
        ctx.closure.display(j.subject, 6),
        ctx.store.render_fulltype(j.full_type),
        j.counter
    )
}
