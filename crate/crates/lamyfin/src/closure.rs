//! The finite subterm closure of a lambda-Y term's infinitary unfolding.
//!
//! A lambda-Y term is read as a regular infinite term: `Y (\n. B)` with a
//! closed fixpoint unfolds by substitution, so the recursion becomes a direct
//! cycle in the graph and no artificial higher-order nodes appear. A `Y` that
//! is not applied to a closed guarded lambda falls back to the regular term
//! `Z = \x. x (Z x)`, the canonical unfolding of the combinator itself.
//!
//! Nodes are canonicalized by bisimulation over the unfolding graph, so two
//! references are equal exactly when the unfolded subterms are identical
//! (bound variables de Bruijn-encoded, free variables by index).

use crate::sort::Sort;
use crate::term::{sort_check, SortError, Term};
use std::collections::{BTreeMap, BTreeSet, HashMap};

/// Canonical identifier of a subterm of the infinitary unfolding.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct NodeId(pub u32);

#[derive(Clone, PartialEq, Eq, Debug)]
pub enum NodeKind {
    Const { sym: String, args: Vec<NodeId> },
    Var { index: u32 },
    App { func: NodeId, arg: NodeId },
    Lam { body: NodeId },
}

#[derive(Clone, Debug)]
pub struct NodeData {
    pub kind: NodeKind,
    pub sort: Sort,
    pub order: u8,
    /// Free de Bruijn slots of this subterm, with their sorts.
    pub free: BTreeMap<u32, Sort>,
    /// Source name of the binder (for `Lam`) or variable, display only.
    pub hint: Option<String>,
}

pub struct Closure {
    nodes: Vec<NodeData>,
    root: NodeId,
    complexity: u8,
}

impl Closure {
    /// Builds the canonical closure of a closed, sort-correct term.
    pub fn build(term: &Term) -> Result<Closure, SortError> {
        sort_check(term)?;
        let mut b = Builder::default();
        let root = b.build(term, &mut Vec::new());
        b.finish(root)
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    pub fn node(&self, id: NodeId) -> &NodeData {
        &self.nodes[id.0 as usize]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = NodeId> {
        (0..self.nodes.len() as u32).map(NodeId)
    }

    /// The largest order of any subterm of the unfolding.
    pub fn complexity(&self) -> u8 {
        self.complexity
    }

    pub fn children(&self, id: NodeId) -> Vec<NodeId> {
        match &self.node(id).kind {
            NodeKind::Const { args, .. } => args.clone(),
            NodeKind::Var { .. } => vec![],
            NodeKind::App { func, arg } => vec![*func, *arg],
            NodeKind::Lam { body } => vec![*body],
        }
    }

    /// Bounded-depth rendering with named binders; cycles cut off as `..`.
    pub fn display(&self, id: NodeId, max_depth: usize) -> String {
        let mut names: Vec<String> = Vec::new();
        self.disp(id, max_depth, &mut names, false)
    }

    fn disp(&self, id: NodeId, fuel: usize, names: &mut Vec<String>, atom: bool) -> String {
        if fuel == 0 {
            return "..".to_string();
        }
        let n = self.node(id);
        match &n.kind {
            NodeKind::Var { index } => names
                .iter()
                .rev()
                .nth(*index as usize)
                .cloned()
                .unwrap_or_else(|| {
                    n.hint
                        .clone()
                        .unwrap_or_else(|| format!("_{}", index))
                }),
            NodeKind::Const { sym, args } => {
                if args.is_empty() {
                    sym.clone()
                } else {
                    let inner = std::iter::once(sym.clone())
                        .chain(args.iter().map(|a| self.disp(*a, fuel - 1, names, true)))
                        .collect::<Vec<_>>()
                        .join(" ");
                    if atom {
                        format!("({})", inner)
                    } else {
                        inner
                    }
                }
            }
            NodeKind::App { func, arg } => {
                let inner = format!(
                    "{} {}",
                    self.disp(*func, fuel - 1, names, false),
                    self.disp(*arg, fuel - 1, names, true)
                );
                if atom {
                    format!("({})", inner)
                } else {
                    inner
                }
            }
            NodeKind::Lam { body } => {
                let base = n.hint.clone().unwrap_or_else(|| "x".to_string());
                let mut name = base.clone();
                let mut i = 0;
                while names.contains(&name) {
                    name = format!("{}{}", base, i);
                    i += 1;
                }
                names.push(name.clone());
                let inner = format!("\\{}. {}", name, self.disp(*body, fuel - 1, names, false));
                names.pop();
                if atom {
                    format!("({})", inner)
                } else {
                    inner
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Raw graph construction
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
enum RawKind {
    Const { sym: String, args: Vec<usize> },
    Var { index: u32 },
    App { func: usize, arg: usize },
    Lam { body: usize },
    /// Fixpoint placeholder, patched to point at the unfolded body.
    Forward(usize),
}

#[derive(Clone, Debug)]
struct RawNode {
    kind: RawKind,
    sort: Sort,
    hint: Option<String>,
}

enum Binding {
    Lam { name: String },
    Fix { name: String, node: usize },
}

#[derive(Default)]
struct Builder {
    nodes: Vec<RawNode>,
    z_cache: HashMap<Sort, usize>,
}

const UNPATCHED: usize = usize::MAX;

impl Builder {
    fn alloc(&mut self, kind: RawKind, sort: Sort, hint: Option<String>) -> usize {
        self.nodes.push(RawNode { kind, sort, hint });
        self.nodes.len() - 1
    }

    fn build(&mut self, t: &Term, env: &mut Vec<(Binding, Sort)>) -> usize {
        match t {
            Term::Const { sym, args } => {
                let arg_ids: Vec<usize> = args.iter().map(|a| self.build(a, env)).collect();
                self.alloc(
                    RawKind::Const {
                        sym: sym.clone(),
                        args: arg_ids,
                    },
                    Sort::Base,
                    None,
                )
            }
            Term::Var { name, sort } => {
                let mut lam_count = 0u32;
                for (b, _) in env.iter().rev() {
                    match b {
                        Binding::Lam { name: n } => {
                            if n == name {
                                return self.alloc(
                                    RawKind::Var { index: lam_count },
                                    sort.clone(),
                                    Some(name.clone()),
                                );
                            }
                            lam_count += 1;
                        }
                        Binding::Fix { name: n, node } => {
                            if n == name {
                                return *node;
                            }
                        }
                    }
                }
                unreachable!("term was sort-checked, so all variables are bound")
            }
            Term::App { func, arg } => {
                // `Y (\n. B)` with a guarded, context-closed fixpoint unfolds
                // by substitution into a direct cycle.
                if let (Term::Y { alpha }, Term::Lam { param, body, .. }) =
                    (func.as_ref(), arg.as_ref())
                {
                    let pending: BTreeSet<&str> = env
                        .iter()
                        .filter_map(|(b, _)| match b {
                            Binding::Fix { name, .. } => Some(name.as_str()),
                            _ => None,
                        })
                        .collect();
                    if mu_eligible(arg, param, body, &pending) {
                        let p = self.alloc(RawKind::Forward(UNPATCHED), alpha.clone(), None);
                        env.push((
                            Binding::Fix {
                                name: param.clone(),
                                node: p,
                            },
                            alpha.clone(),
                        ));
                        let body_id = self.build(body, env);
                        env.pop();
                        self.nodes[p].kind = RawKind::Forward(body_id);
                        return p;
                    }
                }
                let f = self.build(func, env);
                let a = self.build(arg, env);
                let sort = match &self.nodes[f].sort {
                    Sort::Arrow(_, b) => (**b).clone(),
                    Sort::Base => unreachable!("sort-checked"),
                };
                self.alloc(RawKind::App { func: f, arg: a }, sort, None)
            }
            Term::Lam {
                param,
                param_sort,
                body,
            } => {
                env.push((Binding::Lam { name: param.clone() }, param_sort.clone()));
                let b = self.build(body, env);
                env.pop();
                let sort = Sort::arrow(param_sort.clone(), self.nodes[b].sort.clone());
                self.alloc(
                    RawKind::Lam { body: b },
                    sort,
                    Some(param.clone()),
                )
            }
            Term::Y { alpha } => self.z_graph(alpha),
        }
    }

    /// The regular term `Z = \x:(a->a). x (Z x)` unfolding a bare `Y[a]`.
    fn z_graph(&mut self, alpha: &Sort) -> usize {
        if let Some(z) = self.z_cache.get(alpha) {
            return *z;
        }
        let arr = Sort::arrow(alpha.clone(), alpha.clone());
        let z_sort = Sort::arrow(arr.clone(), alpha.clone());
        let z = self.alloc(RawKind::Forward(UNPATCHED), z_sort.clone(), Some("x".into()));
        let vx = self.alloc(RawKind::Var { index: 0 }, arr.clone(), Some("x".into()));
        let zx = self.alloc(RawKind::App { func: z, arg: vx }, alpha.clone(), None);
        let body = self.alloc(RawKind::App { func: vx, arg: zx }, alpha.clone(), None);
        self.nodes[z] = RawNode {
            kind: RawKind::Lam { body },
            sort: z_sort,
            hint: Some("x".into()),
        };
        self.z_cache.insert(alpha.clone(), z);
        z
    }

    fn resolve(&self, mut i: usize) -> usize {
        let mut steps = 0;
        while let RawKind::Forward(t) = self.nodes[i].kind {
            assert_ne!(t, UNPATCHED, "fixpoint placeholder left unpatched");
            i = t;
            steps += 1;
            assert!(steps <= self.nodes.len(), "forward cycle; unguarded fixpoint");
        }
        i
    }

    fn raw_children(&self, i: usize) -> Vec<usize> {
        match &self.nodes[i].kind {
            RawKind::Const { args, .. } => args.iter().map(|a| self.resolve(*a)).collect(),
            RawKind::Var { .. } => vec![],
            RawKind::App { func, arg } => vec![self.resolve(*func), self.resolve(*arg)],
            RawKind::Lam { body } => vec![self.resolve(*body)],
            RawKind::Forward(_) => unreachable!("resolved before use"),
        }
    }

    /// Resolves forwards, restricts to the reachable part, canonicalizes by
    /// bisimulation, and produces the final arena.
    fn finish(self, root: usize) -> Result<Closure, SortError> {
        let root = self.resolve(root);
        // Reachable raw nodes.
        let mut reach = Vec::new();
        let mut seen = vec![false; self.nodes.len()];
        let mut stack = vec![root];
        seen[root] = true;
        while let Some(i) = stack.pop() {
            reach.push(i);
            for c in self.raw_children(i) {
                if !seen[c] {
                    seen[c] = true;
                    stack.push(c);
                }
            }
        }
        // Partition refinement: initial blocks by local label, refined by
        // child blocks until stable.
        let label = |i: usize| -> (u8, String, u32) {
            let n = &self.nodes[i];
            match &n.kind {
                RawKind::Const { sym, args } => (0, format!("{}/{}", sym, args.len()), 0),
                RawKind::Var { index } => (1, n.sort.to_string(), *index),
                RawKind::App { .. } => (2, n.sort.to_string(), 0),
                RawKind::Lam { .. } => (3, n.sort.to_string(), 0),
                RawKind::Forward(_) => unreachable!(),
            }
        };
        let mut block: HashMap<usize, u32> = HashMap::new();
        {
            let mut by_label: BTreeMap<(u8, String, u32), u32> = BTreeMap::new();
            for &i in &reach {
                let next = by_label.len() as u32;
                let b = *by_label.entry(label(i)).or_insert(next);
                block.insert(i, b);
            }
        }
        loop {
            let mut by_sig: BTreeMap<(u32, Vec<u32>), u32> = BTreeMap::new();
            let mut next_block: HashMap<usize, u32> = HashMap::new();
            for &i in &reach {
                let sig = (
                    block[&i],
                    self.raw_children(i).iter().map(|c| block[c]).collect(),
                );
                let fresh = by_sig.len() as u32;
                let b = *by_sig.entry(sig).or_insert(fresh);
                next_block.insert(i, b);
            }
            let stable = by_sig.len()
                == block.values().collect::<std::collections::HashSet<_>>().len();
            block = next_block;
            if stable {
                break;
            }
        }
        // Deterministic ids: BFS over blocks from the root block, children in
        // structural order.
        let rep_of_block: HashMap<u32, usize> = {
            let mut m = HashMap::new();
            for &i in &reach {
                m.entry(block[&i]).or_insert(i);
            }
            m
        };
        let mut id_of_block: HashMap<u32, NodeId> = HashMap::new();
        let mut queue = std::collections::VecDeque::new();
        id_of_block.insert(block[&root], NodeId(0));
        queue.push_back(block[&root]);
        let mut order_visit = vec![block[&root]];
        while let Some(b) = queue.pop_front() {
            let rep = rep_of_block[&b];
            for c in self.raw_children(rep) {
                let cb = block[&c];
                if !id_of_block.contains_key(&cb) {
                    let id = NodeId(id_of_block.len() as u32);
                    id_of_block.insert(cb, id);
                    queue.push_back(cb);
                    order_visit.push(cb);
                }
            }
        }
        let mut nodes = Vec::with_capacity(order_visit.len());
        for b in &order_visit {
            let rep = rep_of_block[b];
            let raw = &self.nodes[rep];
            let kids: Vec<NodeId> = self
                .raw_children(rep)
                .iter()
                .map(|c| id_of_block[&block[c]])
                .collect();
            let kind = match &raw.kind {
                RawKind::Const { sym, .. } => NodeKind::Const {
                    sym: sym.clone(),
                    args: kids,
                },
                RawKind::Var { index } => NodeKind::Var { index: *index },
                RawKind::App { .. } => NodeKind::App {
                    func: kids[0],
                    arg: kids[1],
                },
                RawKind::Lam { .. } => NodeKind::Lam { body: kids[0] },
                RawKind::Forward(_) => unreachable!(),
            };
            // Prefer a hint from any member of the block.
            let hint = reach
                .iter()
                .filter(|i| block[*i] == *b)
                .find_map(|i| self.nodes[*i].hint.clone());
            nodes.push(NodeData {
                kind,
                order: raw.sort.order(),
                sort: raw.sort.clone(),
                free: BTreeMap::new(),
                hint,
            });
        }
        let mut closure = Closure {
            complexity: nodes.iter().map(|n| n.order).max().unwrap_or(0),
            nodes,
            root: NodeId(0),
        };
        closure.compute_free();
        Ok(closure)
    }
}

/// A fixpoint `Y (\n. B)` unfolds by substitution only when the lambda is
/// closed apart from pending fixpoint names (so sharing cannot place an open
/// node under two different binder depths) and when its spine is guarded (so
/// the unfolding has a proper head).
fn mu_eligible(lam: &Term, param: &str, body: &Term, pending: &BTreeSet<&str>) -> bool {
    fn free_ok(t: &Term, bound: &mut Vec<String>, pending: &BTreeSet<&str>) -> bool {
        match t {
            Term::Var { name, .. } => {
                bound.iter().any(|b| b == name) || pending.contains(name.as_str())
            }
            Term::Lam { param, body, .. } => {
                bound.push(param.clone());
                let ok = free_ok(body, bound, pending);
                bound.pop();
                ok
            }
            _ => t.children().iter().all(|c| free_ok(c, bound, pending)),
        }
    }
    fn spine_guarded(t: &Term, names: &mut BTreeSet<String>) -> bool {
        match t {
            Term::Var { name, .. } => !names.contains(name),
            Term::App { func, arg } => {
                if let (Term::Y { .. }, Term::Lam { param, body, .. }) =
                    (func.as_ref(), arg.as_ref())
                {
                    names.insert(param.clone());
                    let ok = spine_guarded(body, names);
                    names.remove(param);
                    ok
                } else {
                    true
                }
            }
            _ => true,
        }
    }
    let mut bound = Vec::new();
    if !free_ok(lam, &mut bound, pending) {
        return false;
    }
    let mut names: BTreeSet<String> =
        pending.iter().map(|s| s.to_string()).collect();
    names.insert(param.to_string());
    spine_guarded(body, &mut names)
}

impl Closure {
    fn compute_free(&mut self) {
        loop {
            let mut changed = false;
            for i in 0..self.nodes.len() {
                let mut free = BTreeMap::new();
                match &self.nodes[i].kind {
                    NodeKind::Var { index } => {
                        free.insert(*index, self.nodes[i].sort.clone());
                    }
                    NodeKind::Const { args, .. } => {
                        for a in args {
                            for (k, s) in &self.nodes[a.0 as usize].free {
                                free.insert(*k, s.clone());
                            }
                        }
                    }
                    NodeKind::App { func, arg } => {
                        for c in [func, arg] {
                            for (k, s) in &self.nodes[c.0 as usize].free {
                                free.insert(*k, s.clone());
                            }
                        }
                    }
                    NodeKind::Lam { body } => {
                        for (k, s) in &self.nodes[body.0 as usize].free {
                            if *k >= 1 {
                                free.insert(k - 1, s.clone());
                            }
                        }
                    }
                }
                if free != self.nodes[i].free {
                    self.nodes[i].free = free;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
    }
}

/// Convenience: the complexity of a term, i.e. the maximum order over the
/// finite subterm closure of its unfolding.
pub fn complexity(term: &Term) -> Result<u8, SortError> {
    Ok(Closure::build(term)?.complexity())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sort::parse_sort;

    #[test]
    fn constant_closure_is_singleton() {
        let c = Closure::build(&Term::cst("e", vec![])).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c.complexity(), 0);
    }

    #[test]
    fn bare_y_unfolds_to_the_four_z_subterms() {
        // Y[o] : (o->o)->o unfolds to Z with subterms Z, x (Z x), Z x, x.
        let c = Closure::build(&Term::y(Sort::Base)).unwrap();
        assert_eq!(c.len(), 4);
        let z = c.root();
        assert_eq!(c.node(z).sort, parse_sort("(o->o)->o").unwrap());
        let body = match c.node(z).kind {
            NodeKind::Lam { body } => body,
            _ => panic!("Z is a lambda"),
        };
        let (x1, zx) = match c.node(body).kind {
            NodeKind::App { func, arg } => (func, arg),
            _ => panic!("body is x (Z x)"),
        };
        assert!(matches!(c.node(x1).kind, NodeKind::Var { index: 0 }));
        match c.node(zx).kind {
            NodeKind::App { func, arg } => {
                assert_eq!(func, z, "the cycle closes back at Z");
                assert_eq!(arg, x1);
            }
            _ => panic!("Z x is an application"),
        }
        assert_eq!(c.complexity(), 2);
    }

    #[test]
    fn guarded_fixpoint_cycles_without_extra_orders() {
        // S = br e (a S): the unfolding has no lambda at all.
        let s = crate::scheme::parse_scheme("symbol a 1\nsymbol e 0\nS = br e (a S)\n").unwrap();
        let t = crate::scheme::scheme_to_term(&s).unwrap();
        let c = Closure::build(&t).unwrap();
        assert_eq!(c.complexity(), 0);
        // br e (a S) / e / a S, with S = the br node itself.
        assert_eq!(c.len(), 3);
        let root = c.root();
        match &c.node(root).kind {
            NodeKind::Const { sym, args } => {
                assert_eq!(sym, "br");
                match &c.node(args[1]).kind {
                    NodeKind::Const { sym, args } => {
                        assert_eq!(sym, "a");
                        assert_eq!(args[0], root);
                    }
                    _ => panic!("right branch is a S"),
                }
            }
            _ => panic!("root is br"),
        }
    }

    #[test]
    fn unguarded_fixpoint_falls_back_to_z() {
        // S = S has no head; the unfolding is Z[o] applied to \s. s.
        let s = crate::scheme::parse_scheme("S = S\n").unwrap();
        let t = crate::scheme::scheme_to_term(&s).unwrap();
        let c = Closure::build(&t).unwrap();
        assert_eq!(c.node(c.root()).sort, Sort::Base);
        assert!(c.len() >= 5);
        assert_eq!(c.complexity(), 2);
    }

    #[test]
    fn closure_is_closed_under_children() {
        let s = crate::scheme::parse_scheme(
            "symbol a 1\nsymbol e 0\nS = R (\\x. a x)\nR f = br (f e) (R (\\x. f (f x)))\n",
        )
        .unwrap();
        let t = crate::scheme::scheme_to_term(&s).unwrap();
        let c = Closure::build(&t).unwrap();
        for id in c.ids() {
            for child in c.children(id) {
                assert!((child.0 as usize) < c.len());
            }
            for (slot, sort) in &c.node(id).free {
                assert!(sort.order() < 8);
                let _ = slot;
            }
        }
        assert_eq!(c.complexity(), 2);
    }
}
