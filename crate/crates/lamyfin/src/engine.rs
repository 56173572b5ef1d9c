//! The decision procedure: saturation of derivable judgment skeletons,
//! detection of pumpable sections, and verdict construction.
//!
//! Phase 1 saturates, bottom-up over the subterm closure, the set of
//! derivable judgment skeletons with minimal environments, together with
//! every rule instance connecting them. A lambda node binds exactly the set
//! of assumptions its body derivation uses, and argument sets at application
//! nodes are drawn from skeletons already derived for the operand, never
//! from blind enumeration of the full type space. Variable leaves for
//! base-sort binders draw on the (tiny) full space; for higher sorts they
//! draw on restrictions of derived skeletons.
//!
//! At an application, premiss selections keep at most one argument judgment
//! per contribution class (restriction, marker set, flag set): a duplicate
//! could only raise counter multiplicities, never flag or marker
//! reachability, so pumpability is unaffected.
//!
//! Phase 2 decides finiteness: the language is infinite exactly when some
//! root-reachable skeleton admits a derivation context back to itself with a
//! positive counter gain (a gainful edge on a cycle of the instance graph).
//! Counters are tracked per skeleton as the pair (minimal achievable value,
//! gain possible), never enumerated.

use crate::closure::{NodeId, NodeKind};
use crate::comp::comp;
use crate::judgment::{Ctx, Derivation, Judgment, RuleKind};
use crate::rules::{
    apply_app, apply_br, apply_con, apply_lambda, apply_var, recompute, weaken_env, RuleError,
};
use crate::sort::Sort;
use crate::term::{sort_check, Term};
use crate::types::{FullTypeId, ITypeId, OrderSet, TypeEnv};
use rayon::prelude::*;
use std::collections::{BTreeMap, BTreeSet, HashMap};

#[derive(Clone, Debug)]
pub struct EngineConfig {
    /// Safety valve: the saturation aborts with `BudgetExhausted` after this
    /// many instance constructions. It never silently truncates the search.
    pub budget: u64,
    pub threads: usize,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            budget: 50_000_000,
            threads: 1,
        }
    }
}

#[derive(thiserror::Error, Debug)]
pub enum EngineError {
    #[error("search budget of {0} instance constructions exhausted")]
    BudgetExhausted(u64),
    #[error(transparent)]
    Sort(#[from] crate::term::SortError),
    #[error("the analyzed term must be closed")]
    NotClosed,
    #[error("the analyzed term must have sort o, found {0}")]
    NotBaseSort(String),
    #[error("internal rule failure during materialization: {0}")]
    Internal(#[from] RuleError),
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct SearchStats {
    pub facts: usize,
    pub instances: usize,
    pub rounds: usize,
}

/// A pumpable-section witness: in `derivation`, the judgments at `ancestor`
/// and `descendant` have equal skeletons and the ancestor's counter exceeds
/// the descendant's by `gain`.
#[derive(Clone, Debug)]
pub struct Witness {
    pub derivation: Derivation,
    pub ancestor: Vec<usize>,
    pub descendant: Vec<usize>,
    pub gain: u64,
}

#[derive(Debug)]
pub enum Verdict {
    Finite { explored: SearchStats },
    Infinite { witness: Witness },
}

impl Verdict {
    pub fn is_finite(&self) -> bool {
        matches!(self, Verdict::Finite { .. })
    }
}

// ---------------------------------------------------------------------------
// Saturation state
// ---------------------------------------------------------------------------

type EnvVec = Vec<(u32, Vec<FullTypeId>)>;
type FactId = u32;

#[derive(Clone, Debug)]
struct Fact {
    node: NodeId,
    env: u32,
    ft: FullTypeId,
    /// Pre-interned restrictions of `ft` to every order `0..=m`.
    restricted: Vec<FullTypeId>,
}

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Debug)]
struct InstanceKey {
    concl: FactId,
    rule: u8,
    premisses: Vec<FactId>,
    marker_choice: OrderSet,
    lambda_t: Option<Vec<FullTypeId>>,
}

#[derive(Clone, Debug)]
struct Instance {
    concl: FactId,
    rule: RuleKind,
    premisses: Vec<FactId>,
    delta: u64,
    marker_choice: OrderSet,
    lambda_t: Option<Vec<FullTypeId>>,
}

#[derive(Clone, Debug)]
enum NewFt {
    Ready {
        order: u8,
        flags: OrderSet,
        markers: OrderSet,
        itype: ITypeId,
    },
    LamArrow {
        order: u8,
        flags: OrderSet,
        markers: OrderSet,
        members: Vec<FullTypeId>,
        result: ITypeId,
    },
}

#[derive(Clone, Debug)]
struct NewInstance {
    node: NodeId,
    rule: RuleKind,
    env: EnvVec,
    ft: NewFt,
    premisses: Vec<FactId>,
    delta: u64,
    marker_choice: OrderSet,
    lambda_t: Option<Vec<FullTypeId>>,
}

pub struct Analysis {
    pub ctx: Ctx,
    config: EngineConfig,
    envs: Vec<EnvVec>,
    env_ids: HashMap<EnvVec, u32>,
    facts: Vec<Fact>,
    fact_ids: HashMap<(NodeId, u32, FullTypeId), FactId>,
    facts_by_node: Vec<Vec<FactId>>,
    instances: Vec<Instance>,
    instance_keys: BTreeSet<InstanceKey>,
    instances_by_concl: Vec<Vec<usize>>,
    /// Variable-leaf candidate pools per (variable sort, binder order):
    /// the full space for sort `o`, restrictions of derived skeletons
    /// otherwise.
    pools: BTreeMap<(Sort, u8), BTreeSet<FullTypeId>>,
    binder_orders: BTreeMap<Sort, BTreeSet<u8>>,
    work: u64,
    rounds: usize,
    // Derived after saturation.
    min_counter: Vec<u64>,
    best_inst: Vec<usize>,
    can_gain: Vec<bool>,
    gain_inst: Vec<Option<(usize, Option<usize>)>>,
}

impl Analysis {
    /// Builds the closure and saturates the skeleton space at judgment order
    /// `m` (the complexity unless a higher target order is requested).
    pub fn run(term: &Term, m_override: Option<u8>, config: EngineConfig) -> Result<Analysis, EngineError> {
        let mut ctx = Ctx::new(term)?;
        if !ctx.closure.node(ctx.closure.root()).free.is_empty() {
            return Err(EngineError::NotClosed);
        }
        if let Some(m) = m_override {
            ctx.m = m;
        }
        let mut binder_orders: BTreeMap<Sort, BTreeSet<u8>> = BTreeMap::new();
        for id in ctx.closure.ids() {
            let n = ctx.closure.node(id);
            if let NodeKind::Lam { .. } = n.kind {
                let (param, _) = n.sort.as_arrow().expect("lambda sort");
                binder_orders
                    .entry(param.clone())
                    .or_default()
                    .insert(n.sort.order());
            }
        }
        let node_count = ctx.closure.len();
        let mut a = Analysis {
            ctx,
            config,
            envs: Vec::new(),
            env_ids: HashMap::new(),
            facts: Vec::new(),
            fact_ids: HashMap::new(),
            facts_by_node: vec![Vec::new(); node_count],
            instances: Vec::new(),
            instance_keys: BTreeSet::new(),
            instances_by_concl: Vec::new(),
            pools: BTreeMap::new(),
            binder_orders,
            work: 0,
            rounds: 0,
            min_counter: Vec::new(),
            best_inst: Vec::new(),
            can_gain: Vec::new(),
            gain_inst: Vec::new(),
        };
        a.intern_env(Vec::new());
        // Base-sort binders range over the whole (small) full-type space.
        for (sort, orders) in a.binder_orders.clone() {
            if sort.is_base() {
                for k in orders {
                    let all = a.ctx.store.enumerate_fulltypes(&sort, k);
                    a.pools
                        .entry((sort.clone(), k))
                        .or_default()
                        .extend(all);
                }
            }
        }
        a.saturate()?;
        a.compute_counters();
        Ok(a)
    }

    pub fn stats(&self) -> SearchStats {
        SearchStats {
            facts: self.facts.len(),
            instances: self.instances.len(),
            rounds: self.rounds,
        }
    }

    fn intern_env(&mut self, env: EnvVec) -> u32 {
        if let Some(id) = self.env_ids.get(&env) {
            return *id;
        }
        let id = self.envs.len() as u32;
        self.envs.push(env.clone());
        self.env_ids.insert(env, id);
        id
    }

    fn env_as_map(&self, id: u32) -> TypeEnv {
        self.envs[id as usize]
            .iter()
            .map(|(slot, tys)| (*slot, tys.iter().copied().collect()))
            .collect()
    }

    fn fact_id(&mut self, node: NodeId, env: u32, ft: FullTypeId) -> (FactId, bool) {
        if let Some(id) = self.fact_ids.get(&(node, env, ft)) {
            return (*id, false);
        }
        let id = self.facts.len() as FactId;
        let m = self.ctx.m;
        let restricted = (0..=m)
            .map(|k| self.ctx.store.restrict_fulltype(ft, k))
            .collect();
        self.facts.push(Fact {
            node,
            env,
            ft,
            restricted,
        });
        self.fact_ids.insert((node, env, ft), id);
        self.facts_by_node[node.0 as usize].push(id);
        self.instances_by_concl.push(Vec::new());
        // Pool update: restrictions of this fact become variable candidates
        // for every binder order of the node's sort. Base-sort pools are
        // already complete.
        let sort = self.ctx.closure.node(node).sort.clone();
        if !sort.is_base() {
            if let Some(orders) = self.binder_orders.get(&sort).cloned() {
                for k in orders {
                    let r = self.facts[id as usize].restricted[k as usize];
                    self.pools.entry((sort.clone(), k)).or_default().insert(r);
                }
            }
        }
        (id, true)
    }

    /// The judgment named by a fact, at its minimal counter.
    pub fn fact_judgment(&self, id: FactId) -> Judgment {
        let f = &self.facts[id as usize];
        Judgment {
            env: self.env_as_map(f.env),
            subject: f.node,
            full_type: f.ft,
            counter: self.min_counter.get(id as usize).copied().unwrap_or(0),
        }
    }

    // -----------------------------------------------------------------------
    // Saturation
    // -----------------------------------------------------------------------

    fn saturate(&mut self) -> Result<(), EngineError> {
        let debug = std::env::var_os("LAMYFIN_DEBUG").is_some();
        loop {
            self.rounds += 1;
            let candidates = self.generate_round()?;
            let n_cand = candidates.len();
            let mut changed = false;
            for c in candidates {
                if self.apply_candidate(c)? {
                    changed = true;
                }
            }
            if debug {
                eprintln!(
                    "round {}: {} candidates, {} facts, {} instances, work {}",
                    self.rounds,
                    n_cand,
                    self.facts.len(),
                    self.instances.len(),
                    self.work,
                );
            }
            if !changed {
                break;
            }
        }
        Ok(())
    }

    fn generate_round(&self) -> Result<Vec<NewInstance>, EngineError> {
        let ids: Vec<NodeId> = self.ctx.closure.ids().collect();
        let gen = |id: &NodeId| self.generate_node(*id);
        let per_node: Vec<Vec<NewInstance>> = if self.config.threads > 1 {
            rayon::ThreadPoolBuilder::new()
                .num_threads(self.config.threads)
                .build()
                .map(|pool| pool.install(|| ids.par_iter().map(gen).collect()))
                .unwrap_or_else(|_| ids.iter().map(gen).collect())
        } else {
            ids.iter().map(gen).collect()
        };
        Ok(per_node.into_iter().flatten().collect())
    }

    fn generate_node(&self, id: NodeId) -> Vec<NewInstance> {
        let node = self.ctx.closure.node(id);
        match &node.kind {
            NodeKind::Var { index } => self.gen_var(id, *index, &node.sort),
            NodeKind::Const { sym, args } => {
                if sym == crate::term::BR {
                    self.gen_br(id, args)
                } else {
                    self.gen_con(id, args)
                }
            }
            NodeKind::App { func, arg } => self.gen_app(id, *func, *arg),
            NodeKind::Lam { body } => self.gen_lam(id, *body, &node.sort),
        }
    }

    fn gen_var(&self, id: NodeId, slot: u32, sort: &Sort) -> Vec<NewInstance> {
        let m = self.ctx.m;
        let mut out = Vec::new();
        let Some(orders) = self.binder_orders.get(sort) else {
            return out;
        };
        for k in orders {
            let Some(pool) = self.pools.get(&(sort.clone(), *k)) else {
                continue;
            };
            for cand in pool {
                let c = self.ctx.store.fulltype(*cand);
                debug_assert_eq!(c.order, *k);
                // Markers of order >= k may be placed at the leaf.
                let placeable = OrderSet::below(m).restrict_at_least(*k);
                for extra in placeable.subsets() {
                    let markers = c.markers.union(extra);
                    out.push(NewInstance {
                        node: id,
                        rule: RuleKind::Var,
                        env: vec![(slot, vec![*cand])],
                        ft: NewFt::Ready {
                            order: m,
                            flags: c.flags,
                            markers,
                            itype: c.itype,
                        },
                        premisses: vec![],
                        delta: 0,
                        marker_choice: extra,
                        lambda_t: None,
                    });
                }
            }
        }
        out
    }

    fn gen_br(&self, id: NodeId, args: &[NodeId]) -> Vec<NewInstance> {
        let mut out = Vec::new();
        for child in args {
            for f in &self.facts_by_node[child.0 as usize] {
                let fact = &self.facts[*f as usize];
                let ft = self.ctx.store.fulltype(fact.ft);
                out.push(NewInstance {
                    node: id,
                    rule: RuleKind::Br,
                    env: self.envs[fact.env as usize].clone(),
                    ft: NewFt::Ready {
                        order: ft.order,
                        flags: ft.flags,
                        markers: ft.markers,
                        itype: ft.itype,
                    },
                    premisses: vec![*f],
                    delta: 0,
                    marker_choice: OrderSet::EMPTY,
                    lambda_t: None,
                });
            }
        }
        out
    }

    fn gen_con(&self, id: NodeId, args: &[NodeId]) -> Vec<NewInstance> {
        let m = self.ctx.m;
        let mut out = Vec::new();
        if args.is_empty() {
            for marker_choice in OrderSet::below(m).subsets() {
                let local = if m == 0 {
                    (OrderSet::EMPTY, 1u64)
                } else {
                    (OrderSet::singleton(0), 0u64)
                };
                let r = comp(m, marker_choice, &[local]);
                out.push(NewInstance {
                    node: id,
                    rule: RuleKind::Con,
                    env: Vec::new(),
                    ft: NewFt::Ready {
                        order: m,
                        flags: r.flags,
                        markers: marker_choice,
                        itype: self.ctx.store.base(),
                    },
                    premisses: vec![],
                    delta: r.counter,
                    marker_choice,
                    lambda_t: None,
                });
            }
            return out;
        }
        // One premiss per argument; markers must be pairwise disjoint.
        let lists: Vec<&Vec<FactId>> = args
            .iter()
            .map(|a| &self.facts_by_node[a.0 as usize])
            .collect();
        let mut choice: Vec<FactId> = Vec::with_capacity(args.len());
        self.con_combos(id, &lists, &mut choice, OrderSet::EMPTY, &mut out);
        out
    }

    fn con_combos(
        &self,
        id: NodeId,
        lists: &[&Vec<FactId>],
        choice: &mut Vec<FactId>,
        markers: OrderSet,
        out: &mut Vec<NewInstance>,
    ) {
        let i = choice.len();
        if i == lists.len() {
            let m = self.ctx.m;
            let local = if m == 0 {
                (OrderSet::EMPTY, 1u64)
            } else {
                (OrderSet::singleton(0), 0u64)
            };
            let mut inputs = vec![local];
            let mut env_parts: Vec<&EnvVec> = Vec::new();
            for f in choice.iter() {
                let fact = &self.facts[*f as usize];
                let ft = self.ctx.store.fulltype(fact.ft);
                inputs.push((ft.flags, 0));
                env_parts.push(&self.envs[fact.env as usize]);
            }
            let r = comp(m, markers, &inputs);
            out.push(NewInstance {
                node: id,
                rule: RuleKind::Con,
                env: union_envvec(&env_parts),
                ft: NewFt::Ready {
                    order: m,
                    flags: r.flags,
                    markers,
                    itype: self.ctx.store.base(),
                },
                premisses: choice.clone(),
                delta: r.counter,
                marker_choice: OrderSet::EMPTY,
                lambda_t: None,
            });
            return;
        }
        for f in lists[i] {
            let fm = self.ctx.store.fulltype(self.facts[*f as usize].ft).markers;
            if let Some(joined) = markers.disjoint_union(fm) {
                choice.push(*f);
                self.con_combos(id, lists, choice, joined, out);
                choice.pop();
            }
        }
    }

    fn gen_app(&self, id: NodeId, func: NodeId, arg: NodeId) -> Vec<NewInstance> {
        let m = self.ctx.m;
        let mut out = Vec::new();
        let ord_p = self.ctx.closure.node(func).order;
        if ord_p > m {
            return out;
        }
        // Group operand facts by restriction to ord(P), then by contribution
        // class (marker set, flag set). Premiss selections take at most one
        // fact per class: further duplicates could only inflate counter
        // multiplicities, never flag or marker reachability.
        type Classes = BTreeMap<(OrderSet, OrderSet), Vec<FactId>>;
        let mut groups: BTreeMap<FullTypeId, Classes> = BTreeMap::new();
        for f in &self.facts_by_node[arg.0 as usize] {
            let fact = &self.facts[*f as usize];
            let r = fact.restricted[ord_p as usize];
            let ft = self.ctx.store.fulltype(fact.ft);
            groups
                .entry(r)
                .or_default()
                .entry((ft.markers, ft.flags))
                .or_default()
                .push(*f);
        }
        for opf in &self.facts_by_node[func.0 as usize] {
            let op = &self.facts[*opf as usize];
            let oft = self.ctx.store.fulltype(op.ft);
            let (expected, result) = match self.ctx.store.itype(oft.itype) {
                crate::types::IType::Arrow { args, result, .. } => (*args, *result),
                crate::types::IType::Base => continue,
            };
            let members: Vec<FullTypeId> =
                self.ctx.store.argset_members(expected).to_vec();
            if members.iter().any(|s| !groups.contains_key(s)) {
                continue;
            }
            // Per member: every nonempty selection of classes, one
            // representative fact per chosen class, markers disjoint overall.
            let member_classes: Vec<Vec<(OrderSet, &Vec<FactId>)>> = members
                .iter()
                .map(|s| {
                    groups[s]
                        .iter()
                        .map(|((mk, _), v)| (*mk, v))
                        .collect()
                })
                .collect();
            let mut sel: Vec<FactId> = Vec::new();
            self.app_select(
                id,
                *opf,
                oft.flags,
                result,
                ord_p,
                &member_classes,
                0,
                0,
                true,
                oft.markers,
                &mut sel,
                &mut out,
            );
        }
        out
    }

    /// Walks members x classes, choosing per class either to skip it or to
    /// take one of its representative facts. Every member needs at least one
    /// taken class.
    #[allow(clippy::too_many_arguments)]
    fn app_select(
        &self,
        id: NodeId,
        opf: FactId,
        op_flags: OrderSet,
        result: ITypeId,
        ord_p: u8,
        member_classes: &[Vec<(OrderSet, &Vec<FactId>)>],
        mi: usize,
        ci: usize,
        member_empty: bool,
        markers: OrderSet,
        sel: &mut Vec<FactId>,
        out: &mut Vec<NewInstance>,
    ) {
        let m = self.ctx.m;
        if mi == member_classes.len() {
            let op = &self.facts[opf as usize];
            let mut inputs = vec![(op_flags, 0u64)];
            let mut env_parts: Vec<&EnvVec> = vec![&self.envs[op.env as usize]];
            for f in sel.iter() {
                let fact = &self.facts[*f as usize];
                let ft = self.ctx.store.fulltype(fact.ft);
                inputs.push((ft.flags.restrict_at_least(ord_p), 0));
                env_parts.push(&self.envs[fact.env as usize]);
            }
            let r = comp(m, markers, &inputs);
            let mut premisses = vec![opf];
            premisses.extend(sel.iter().copied());
            out.push(NewInstance {
                node: id,
                rule: RuleKind::App,
                env: union_envvec(&env_parts),
                ft: NewFt::Ready {
                    order: m,
                    flags: r.flags,
                    markers,
                    itype: result,
                },
                premisses,
                delta: r.counter,
                marker_choice: OrderSet::EMPTY,
                lambda_t: None,
            });
            return;
        }
        let classes = &member_classes[mi];
        if ci == classes.len() {
            if !member_empty {
                self.app_select(
                    id,
                    opf,
                    op_flags,
                    result,
                    ord_p,
                    member_classes,
                    mi + 1,
                    0,
                    true,
                    markers,
                    sel,
                    out,
                );
            }
            return;
        }
        // Skip this class.
        self.app_select(
            id,
            opf,
            op_flags,
            result,
            ord_p,
            member_classes,
            mi,
            ci + 1,
            member_empty,
            markers,
            sel,
            out,
        );
        // Take one representative of this class, if markers stay disjoint.
        let (class_markers, reps) = &classes[ci];
        if let Some(joined) = markers.disjoint_union(*class_markers) {
            for rep in reps.iter() {
                sel.push(*rep);
                self.app_select(
                    id,
                    opf,
                    op_flags,
                    result,
                    ord_p,
                    member_classes,
                    mi,
                    ci + 1,
                    false,
                    joined,
                    sel,
                    out,
                );
                sel.pop();
            }
        }
    }

    fn gen_lam(&self, id: NodeId, body: NodeId, sort: &Sort) -> Vec<NewInstance> {
        let mut out = Vec::new();
        let (param_sort, _) = sort.as_arrow().expect("lambda sort");
        let k = sort.order();
        for bf in &self.facts_by_node[body.0 as usize] {
            let fact = &self.facts[*bf as usize];
            let env = &self.envs[fact.env as usize];
            // The lambda binds exactly the assumptions its body uses.
            let used: Vec<FullTypeId> = env
                .iter()
                .find(|(slot, _)| *slot == 0)
                .map(|(_, tys)| tys.clone())
                .unwrap_or_default();
            // The binder's assumptions must live at this binder's order and
            // sort; facts generated for other binders of the same variable
            // node are skipped here.
            let compatible = used.iter().all(|t| {
                let ft = self.ctx.store.fulltype(*t);
                ft.order == k && self.ctx.store.fulltype_sort(*t) == param_sort
            });
            if !compatible {
                continue;
            }
            let pft = self.ctx.store.fulltype(fact.ft);
            let provided = used
                .iter()
                .fold(OrderSet::EMPTY, |acc, ty| acc.union(self.ctx.store.markers_of(*ty)));
            let shifted: EnvVec = env
                .iter()
                .filter(|(slot, _)| *slot >= 1)
                .map(|(slot, tys)| (slot - 1, tys.clone()))
                .collect();
            out.push(NewInstance {
                node: id,
                rule: RuleKind::Lam,
                env: shifted,
                ft: NewFt::LamArrow {
                    order: pft.order,
                    flags: pft.flags,
                    markers: pft.markers.minus(provided),
                    members: used.clone(),
                    result: pft.itype,
                },
                premisses: vec![*bf],
                delta: 0,
                marker_choice: OrderSet::EMPTY,
                lambda_t: Some(used),
            });
        }
        out
    }

    fn apply_candidate(&mut self, c: NewInstance) -> Result<bool, EngineError> {
        self.work += 1;
        if self.work > self.config.budget {
            return Err(EngineError::BudgetExhausted(self.config.budget));
        }
        let ft = match c.ft {
            NewFt::Ready {
                order,
                flags,
                markers,
                itype,
            } => match self.ctx.store.mk_fulltype(order, flags, markers, itype) {
                Ok(ft) => ft,
                Err(_) => return Ok(false),
            },
            NewFt::LamArrow {
                order,
                flags,
                markers,
                members,
                result,
            } => {
                let node_sort = self.ctx.closure.node(c.node).sort.clone();
                let (param_sort, _) = node_sort.as_arrow().expect("lambda");
                let param_sort = param_sort.clone();
                let args = self.ctx.store.intern_argset(&members);
                let Ok(itype) = self.ctx.store.mk_arrow(&param_sort, args, result) else {
                    return Ok(false);
                };
                match self.ctx.store.mk_fulltype(order, flags, markers, itype) {
                    Ok(ft) => ft,
                    Err(_) => return Ok(false),
                }
            }
        };
        let env = self.intern_env(canonical_env(c.env));
        let (fid, fresh_fact) = self.fact_id(c.node, env, ft);
        let lambda_t = c.lambda_t.map(|mut t| {
            t.sort();
            t
        });
        let key = InstanceKey {
            concl: fid,
            rule: c.rule as u8,
            premisses: c.premisses.clone(),
            marker_choice: c.marker_choice,
            lambda_t: lambda_t.clone(),
        };
        if !self.instance_keys.insert(key) {
            return Ok(fresh_fact);
        }
        self.instances.push(Instance {
            concl: fid,
            rule: c.rule,
            premisses: c.premisses,
            delta: c.delta,
            marker_choice: c.marker_choice,
            lambda_t,
        });
        self.instances_by_concl[fid as usize].push(self.instances.len() - 1);
        Ok(true)
    }

    // -----------------------------------------------------------------------
    // Counter abstractions
    // -----------------------------------------------------------------------

    fn compute_counters(&mut self) {
        let n = self.facts.len();
        self.min_counter = vec![u64::MAX; n];
        loop {
            let mut changed = false;
            for inst in &self.instances {
                let mut total = inst.delta;
                let mut ok = true;
                for p in &inst.premisses {
                    let v = self.min_counter[*p as usize];
                    if v == u64::MAX {
                        ok = false;
                        break;
                    }
                    total += v;
                }
                if ok && total < self.min_counter[inst.concl as usize] {
                    self.min_counter[inst.concl as usize] = total;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        // Minimal height among minimum-counter derivations, for well-founded
        // materialization.
        let mut height = vec![u64::MAX; n];
        loop {
            let mut changed = false;
            for inst in &self.instances {
                let mut total = inst.delta;
                let mut h = 0u64;
                let mut ok = true;
                for p in &inst.premisses {
                    let v = self.min_counter[*p as usize];
                    let hp = height[*p as usize];
                    if v == u64::MAX || hp == u64::MAX {
                        ok = false;
                        break;
                    }
                    total += v;
                    h = h.max(hp);
                }
                if ok
                    && total == self.min_counter[inst.concl as usize]
                    && h + 1 < height[inst.concl as usize]
                {
                    height[inst.concl as usize] = h + 1;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        self.best_inst = vec![usize::MAX; n];
        for (idx, inst) in self.instances.iter().enumerate() {
            let cid = inst.concl as usize;
            let mut total = inst.delta;
            let mut h = 0u64;
            let mut ok = true;
            for p in &inst.premisses {
                if self.min_counter[*p as usize] == u64::MAX {
                    ok = false;
                    break;
                }
                total += self.min_counter[*p as usize];
                h = h.max(height[*p as usize]);
            }
            if ok
                && total == self.min_counter[cid]
                && h + 1 == height[cid]
                && self.best_inst[cid] == usize::MAX
            {
                self.best_inst[cid] = idx;
            }
        }
        // Gain possibility (some derivation with counter > 0), with the
        // witnessing instance for materialization.
        self.can_gain = vec![false; n];
        self.gain_inst = vec![None; n];
        loop {
            let mut changed = false;
            for (idx, inst) in self.instances.iter().enumerate() {
                let cid = inst.concl as usize;
                if self.can_gain[cid] {
                    continue;
                }
                if inst.delta > 0 {
                    self.can_gain[cid] = true;
                    self.gain_inst[cid] = Some((idx, None));
                    changed = true;
                    continue;
                }
                if let Some(pi) = inst
                    .premisses
                    .iter()
                    .position(|p| self.can_gain[*p as usize])
                {
                    self.can_gain[cid] = true;
                    self.gain_inst[cid] = Some((idx, Some(pi)));
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
    }

    // -----------------------------------------------------------------------
    // Materialization
    // -----------------------------------------------------------------------

    fn root_fact(&mut self) -> Option<FactId> {
        let root = self.ctx.closure.root();
        let target = self.ctx.rho_m();
        let env = self.intern_env(Vec::new());
        self.fact_ids.get(&(root, env, target)).copied()
    }

    fn fact_with(&mut self, node: NodeId, ft: FullTypeId) -> Option<FactId> {
        let env = self.intern_env(Vec::new());
        self.fact_ids.get(&(node, env, ft)).copied()
    }

    /// A minimum-counter derivation of the fact.
    fn mat_min(&mut self, fid: FactId) -> Derivation {
        let idx = self.best_inst[fid as usize];
        assert_ne!(idx, usize::MAX, "every stored fact is derivable");
        self.mat_instance(idx, None)
    }

    /// A derivation of the fact with counter > 0.
    fn mat_gain(&mut self, fid: FactId) -> Derivation {
        let (idx, via) = self.gain_inst[fid as usize].expect("fact can gain");
        match via {
            None => self.mat_instance(idx, None),
            Some(pi) => self.mat_instance(idx, Some(pi)),
        }
    }

    /// Materializes one instance, taking the minimum derivation for every
    /// premiss except an optional designated gain premiss.
    fn mat_instance(&mut self, idx: usize, gain_premiss: Option<usize>) -> Derivation {
        let inst = self.instances[idx].clone();
        let mut premisses = Vec::with_capacity(inst.premisses.len());
        for (i, p) in inst.premisses.iter().enumerate() {
            if Some(i) == gain_premiss {
                premisses.push(self.mat_gain(*p));
            } else {
                premisses.push(self.mat_min(*p));
            }
        }
        self.assemble(&inst, premisses)
    }

    /// Applies the instance's rule to already-materialized premisses.
    fn assemble(&mut self, inst: &Instance, mut premisses: Vec<Derivation>) -> Derivation {
        let fact = self.facts[inst.concl as usize].clone();
        let env = self.env_as_map(fact.env);
        match inst.rule {
            RuleKind::Var => {
                let envvec = &self.envs[fact.env as usize];
                let (_, tys) = &envvec[0];
                let cand = tys[0];
                apply_var(&mut self.ctx, env, fact.node, cand, fact.ft)
                    .expect("saturated Var instance re-derives")
            }
            RuleKind::Br => {
                let args = match &self.ctx.closure.node(fact.node).kind {
                    NodeKind::Const { args, .. } => args.clone(),
                    _ => unreachable!(),
                };
                let premiss = premisses.pop().expect("Br has one premiss");
                let which = if premiss.judgment.subject == args[0] { 1 } else { 2 };
                apply_br(&mut self.ctx, premiss, which, fact.node)
                    .expect("saturated Br instance re-derives")
            }
            RuleKind::Lam => {
                let mut premiss = premisses.pop().expect("λ has one premiss");
                let t: BTreeSet<FullTypeId> = inst
                    .lambda_t
                    .as_ref()
                    .expect("λ instance records T")
                    .iter()
                    .copied()
                    .collect();
                let used: BTreeSet<FullTypeId> = premiss
                    .judgment
                    .env
                    .get(&0)
                    .cloned()
                    .unwrap_or_default();
                let extra: BTreeSet<FullTypeId> = t.difference(&used).copied().collect();
                if !extra.is_empty() {
                    weaken_env(&self.ctx, &mut premiss, 0, &extra);
                }
                apply_lambda(&mut self.ctx, premiss, fact.node, &t, env)
                    .expect("saturated λ instance re-derives")
            }
            RuleKind::Con => {
                let m = self.ctx.m;
                apply_con(
                    &mut self.ctx,
                    fact.node,
                    premisses,
                    inst.marker_choice,
                    env,
                    m,
                )
                .expect("saturated Con instance re-derives")
            }
            RuleKind::App => {
                let op = premisses.remove(0);
                apply_app(&mut self.ctx, fact.node, op, premisses, env)
                    .expect("saturated @ instance re-derives")
            }
        }
    }

    // -----------------------------------------------------------------------
    // Reachability and the pump search
    // -----------------------------------------------------------------------

    /// Breadth-first search over conclusion-to-premiss edges from `start`.
    /// Returns per-fact backpointers `(instance, premiss position, parent)`.
    fn bfs(&self, start: FactId) -> HashMap<FactId, (usize, usize, FactId)> {
        let mut back: HashMap<FactId, (usize, usize, FactId)> = HashMap::new();
        let mut seen: BTreeSet<FactId> = BTreeSet::new();
        seen.insert(start);
        let mut queue = std::collections::VecDeque::new();
        queue.push_back(start);
        while let Some(f) = queue.pop_front() {
            for idx in &self.instances_by_concl[f as usize] {
                let inst = &self.instances[*idx];
                for (pos, p) in inst.premisses.iter().enumerate() {
                    if seen.insert(*p) {
                        back.insert(*p, (*idx, pos, f));
                        queue.push_back(*p);
                    }
                }
            }
        }
        back
    }

    fn chain_to(
        &self,
        back: &HashMap<FactId, (usize, usize, FactId)>,
        start: FactId,
        target: FactId,
    ) -> Option<Vec<(usize, usize)>> {
        if start == target {
            return Some(Vec::new());
        }
        let mut steps = Vec::new();
        let mut cur = target;
        loop {
            let (idx, pos, parent) = *back.get(&cur)?;
            steps.push((idx, pos));
            if parent == start {
                break;
            }
            cur = parent;
        }
        steps.reverse();
        Some(steps)
    }

    /// Searches for a pumpable configuration reachable from `from`: an
    /// instance edge `a -> b` carrying a counter gain together with an
    /// instance path `b ~> a`. Returns the assembled steps of the section,
    /// ordered from `a` downward, plus the designated gain.
    fn find_pump(
        &mut self,
        from: FactId,
    ) -> Option<(FactId, Vec<(usize, usize)>, Option<(usize, usize)>)> {
        let reach_root = self.bfs(from);
        let reachable: BTreeSet<FactId> = std::iter::once(from)
            .chain(reach_root.keys().copied())
            .collect();
        let mut down_cache: HashMap<FactId, HashMap<FactId, (usize, usize, FactId)>> =
            HashMap::new();
        let mut best: Option<(usize, (FactId, Vec<(usize, usize)>, Option<(usize, usize)>))> =
            None;
        for (idx, inst) in self.instances.iter().enumerate() {
            if !reachable.contains(&inst.concl) {
                continue;
            }
            for (pos, b) in inst.premisses.iter().enumerate() {
                // Gain on this edge: the node itself places maximal-order
                // flags, or a sibling premiss can contribute a positive
                // counter.
                let delta_gain = inst.delta > 0;
                let sibling_gain = inst
                    .premisses
                    .iter()
                    .enumerate()
                    .find(|(j, p)| *j != pos && self.can_gain[**p as usize])
                    .map(|(j, _)| j);
                if !delta_gain && sibling_gain.is_none() {
                    continue;
                }
                let back = down_cache
                    .entry(*b)
                    .or_insert_with(|| self.bfs(*b));
                let Some(steps) = self.chain_to(back, *b, inst.concl) else {
                    continue;
                };
                let mut section = vec![(idx, pos)];
                section.extend(steps);
                let len = section.len();
                let gain_choice = if delta_gain {
                    None
                } else {
                    sibling_gain.map(|j| (0usize, j))
                };
                if best.as_ref().is_none_or(|(l, _)| len < *l) {
                    best = Some((len, (inst.concl, section, gain_choice)));
                }
            }
        }
        best.map(|(_, b)| b)
    }

    /// Materializes the section once around a base derivation of fact `a`.
    fn mat_section(
        &mut self,
        section: &[(usize, usize)],
        gain_choice: Option<(usize, usize)>,
        inner: Derivation,
    ) -> Derivation {
        let mut cur = inner;
        for (si, (idx, pos)) in section.iter().enumerate().rev() {
            let inst = self.instances[*idx].clone();
            let mut premisses = Vec::with_capacity(inst.premisses.len());
            for (q, p) in inst.premisses.iter().enumerate() {
                if q == *pos {
                    premisses.push(cur.clone());
                } else if gain_choice == Some((si, q)) {
                    premisses.push(self.mat_gain(*p));
                } else {
                    premisses.push(self.mat_min(*p));
                }
            }
            cur = self.assemble(&inst, premisses);
        }
        cur
    }

    /// The path (child indices) along a section's spine.
    fn section_path(section: &[(usize, usize)]) -> Vec<usize> {
        section.iter().map(|(_, pos)| *pos).collect()
    }

    /// Decides language finiteness per the unbounded-counter criterion.
    pub fn decide(&mut self) -> Result<Verdict, EngineError> {
        let Some(root) = self.root_fact() else {
            return Ok(Verdict::Finite {
                explored: self.stats(),
            });
        };
        let Some((a, section, gain_choice)) = self.find_pump(root) else {
            return Ok(Verdict::Finite {
                explored: self.stats(),
            });
        };
        // Assemble: root chain, one copy of the section, minimal base.
        let base = self.mat_min(a);
        let pumped = self.mat_section(&section, gain_choice, base);
        let back = self.bfs(root);
        let chain = self
            .chain_to(&back, root, a)
            .expect("pump anchor is root-reachable");
        let mut derivation = pumped;
        for (idx, pos) in chain.iter().rev() {
            let inst = self.instances[*idx].clone();
            let mut premisses = Vec::with_capacity(inst.premisses.len());
            for (q, p) in inst.premisses.iter().enumerate() {
                if q == *pos {
                    premisses.push(derivation.clone());
                } else {
                    premisses.push(self.mat_min(*p));
                }
            }
            derivation = self.assemble(&inst, premisses);
        }
        let ancestor: Vec<usize> = chain.iter().map(|(_, pos)| *pos).collect();
        let mut descendant = ancestor.clone();
        descendant.extend(Self::section_path(&section));
        let anc_c = derivation
            .at_path(&ancestor)
            .expect("ancestor path valid")
            .judgment
            .counter;
        let desc_c = derivation
            .at_path(&descendant)
            .expect("descendant path valid")
            .judgment
            .counter;
        assert!(anc_c > desc_c, "pump section must gain");
        Ok(Verdict::Infinite {
            witness: Witness {
                derivation,
                ancestor,
                descendant,
                gain: anc_c - desc_c,
            },
        })
    }

    /// Searches for a derivation of the closed root term at `target` with
    /// counter at least `min_counter`. Pumps a witness section when the
    /// minimum falls short; falls back to the maximum acyclic counter
    /// otherwise. `Ok(None)` means exhaustive failure.
    pub fn find_derivation(
        &mut self,
        target: FullTypeId,
        min_counter: u64,
    ) -> Result<Option<Derivation>, EngineError> {
        let root = self.ctx.closure.root();
        let Some(fid) = self.fact_with(root, target) else {
            return Ok(None);
        };
        let min = self.min_counter[fid as usize];
        if min >= min_counter {
            return Ok(Some(self.mat_min(fid)));
        }
        if let Some((a, section, gain_choice)) = self.find_pump(fid) {
            // Each section copy gains at least 1.
            let copies = min_counter - min;
            let mut cur = self.mat_min(a);
            for _ in 0..copies {
                cur = self.mat_section(&section, gain_choice, cur);
            }
            let back = self.bfs(fid);
            let chain = self.chain_to(&back, fid, a).expect("anchor reachable");
            for (idx, pos) in chain.iter().rev() {
                let inst = self.instances[*idx].clone();
                let mut premisses = Vec::with_capacity(inst.premisses.len());
                for (q, p) in inst.premisses.iter().enumerate() {
                    if q == *pos {
                        premisses.push(cur.clone());
                    } else {
                        premisses.push(self.mat_min(*p));
                    }
                }
                cur = self.assemble(&inst, premisses);
            }
            debug_assert!(cur.judgment.counter >= min_counter);
            return Ok(Some(cur));
        }
        // No pump: counters are bounded; take the maximum achievable.
        let max = self.max_counters();
        if max[fid as usize] >= min_counter {
            return Ok(Some(self.mat_max(fid, &max)));
        }
        Ok(None)
    }

    fn max_counters(&self) -> Vec<u64> {
        let n = self.facts.len();
        let mut max = vec![u64::MAX; n];
        // Start from the minimum (every fact is derivable) and relax upward;
        // convergence is guaranteed because no gainful cycle exists here.
        for (i, v) in self.min_counter.iter().enumerate() {
            max[i] = *v;
        }
        let bound = n as u64 + 2;
        for _ in 0..bound {
            let mut changed = false;
            for inst in &self.instances {
                let mut total = inst.delta;
                for p in &inst.premisses {
                    total = total.saturating_add(max[*p as usize]);
                }
                if total > max[inst.concl as usize] {
                    max[inst.concl as usize] = total;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        max
    }

    fn mat_max(&mut self, fid: FactId, max: &[u64]) -> Derivation {
        // Choose an instance achieving the maximum with minimal height among
        // achievers; heights are finite because maxima are stable.
        let n = self.facts.len();
        let mut height = vec![u64::MAX; n];
        loop {
            let mut changed = false;
            for inst in &self.instances {
                let mut total = inst.delta;
                let mut h = 0u64;
                let mut ok = true;
                for p in &inst.premisses {
                    if height[*p as usize] == u64::MAX {
                        ok = false;
                        break;
                    }
                    total += max[*p as usize];
                    h = h.max(height[*p as usize]);
                }
                if ok && total == max[inst.concl as usize] && h + 1 < height[inst.concl as usize] {
                    height[inst.concl as usize] = h + 1;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        fn go(a: &mut Analysis, fid: FactId, max: &[u64], height: &[u64]) -> Derivation {
            let mut chosen = usize::MAX;
            for idx in &a.instances_by_concl[fid as usize] {
                let inst = &a.instances[*idx];
                let mut total = inst.delta;
                let mut h = 0u64;
                let mut ok = true;
                for p in &inst.premisses {
                    if height[*p as usize] == u64::MAX {
                        ok = false;
                        break;
                    }
                    total += max[*p as usize];
                    h = h.max(height[*p as usize]);
                }
                if ok && total == max[fid as usize] && h + 1 == height[fid as usize] {
                    chosen = *idx;
                    break;
                }
            }
            assert_ne!(chosen, usize::MAX, "maximum is achieved by some instance");
            let inst = a.instances[chosen].clone();
            let premisses = inst
                .premisses
                .iter()
                .map(|p| go(a, *p, max, height))
                .collect();
            a.assemble(&inst, premisses)
        }
        go(self, fid, max, &height)
    }
}

fn canonical_env(mut env: EnvVec) -> EnvVec {
    for (_, tys) in env.iter_mut() {
        tys.sort();
        tys.dedup();
    }
    env.retain(|(_, tys)| !tys.is_empty());
    env.sort();
    env
}

fn union_envvec(parts: &[&EnvVec]) -> EnvVec {
    let mut map: BTreeMap<u32, Vec<FullTypeId>> = BTreeMap::new();
    for part in parts {
        for (slot, tys) in part.iter() {
            map.entry(*slot).or_default().extend(tys.iter().copied());
        }
    }
    canonical_env(map.into_iter().collect())
}

// ---------------------------------------------------------------------------
// Public operations
// ---------------------------------------------------------------------------

/// Decides whether the set of finite trees of the closed, sort-`o` term is
/// finite.
pub fn decide_finiteness(term: &Term, config: EngineConfig) -> Result<(Verdict, Analysis), EngineError> {
    let sort = sort_check(term)?;
    if !sort.is_base() {
        return Err(EngineError::NotBaseSort(sort.to_string()));
    }
    let mut a = Analysis::run(term, None, config)?;
    let v = a.decide()?;
    Ok((v, a))
}

/// Searches for a derivation of `term : target` (parsed against the root
/// sort) with counter at least `min_counter`.
pub fn find_derivation(
    term: &Term,
    target_text: &str,
    min_counter: u64,
    config: EngineConfig,
) -> Result<Option<(Derivation, Analysis)>, EngineError> {
    let sort = sort_check(term)?;
    let mut probe = crate::types::TypeStore::new();
    let target_order = probe
        .parse_fulltype(target_text, &sort)
        .map(|t| probe.fulltype(t).order)
        .map_err(|e| EngineError::Internal(RuleError::Type(e)))?;
    let mut a = Analysis::run(term, Some(target_order), config)?;
    let target = a
        .ctx
        .store
        .parse_fulltype(target_text, &sort)
        .map_err(|e| EngineError::Internal(RuleError::Type(e)))?;
    match a.find_derivation(target, min_counter)? {
        Some(d) => Ok(Some((d, a))),
        None => Ok(None),
    }
}

/// Replaces the subtree at `descendant` with `extra` additional copies of the
/// section between `ancestor` and `descendant`, then recomputes all counters.
/// The two judgments must have equal skeletons.
pub fn pump(
    ctx: &mut Ctx,
    d: &Derivation,
    ancestor: &[usize],
    descendant: &[usize],
    extra: usize,
) -> Result<Derivation, RuleError> {
    assert!(descendant.len() > ancestor.len() && descendant[..ancestor.len()] == *ancestor);
    let s1 = d.at_path(ancestor).expect("ancestor path");
    let s2 = d.at_path(descendant).expect("descendant path");
    assert_eq!(
        s1.judgment.skeleton(),
        s2.judgment.skeleton(),
        "pump endpoints must be equivalent judgments"
    );
    let rel = &descendant[ancestor.len()..];
    let mut nested = s2.clone();
    for _ in 0..extra {
        nested = replace_subtree(s1, rel, nested);
    }
    let whole = replace_subtree(d, ancestor, replace_subtree(s1, rel, nested));
    recompute(ctx, &whole)
}

fn replace_subtree(d: &Derivation, path: &[usize], new: Derivation) -> Derivation {
    if path.is_empty() {
        return new;
    }
    let mut out = d.clone();
    let mut cur = &mut out;
    for &i in &path[..path.len() - 1] {
        cur = &mut cur.premisses[i];
    }
    cur.premisses[path[path.len() - 1]] = new;
    out
}
