//! The five typing rules as derivation constructors, plus a whole-derivation
//! validator. Every constructor re-checks its side conditions, so a
//! derivation assembled through this module is valid by construction.

use crate::closure::{NodeId, NodeKind};
use crate::comp::comp;
use crate::judgment::{Ctx, Derivation, Judgment, RuleKind};
use crate::types::{env_union, split, FullTypeId, IType, OrderSet, TypeEnv, TypeError};

#[derive(thiserror::Error, Debug, Clone, PartialEq, Eq)]
pub enum RuleError {
    #[error("premiss or conclusion concerns the wrong subterm: {0}")]
    SubjectMismatch(String),
    #[error("marker orders below the binder order {k} must come from the environment: M|<k = {found}, environment provides {expected}")]
    MarkerBelowBinderOrder {
        k: u8,
        expected: String,
        found: String,
    },
    #[error("environment split violation")]
    SplitViolation,
    #[error("flag set or type mismatch: {0}")]
    FlagOrTypeMismatch(String),
    #[error("binder carries {0} but the rule's argument set differs")]
    BinderLeak(String),
    #[error("the rule for constants does not apply to br")]
    BrNotAllowed,
    #[error("marker order {0} placed more than once")]
    MarkerCollision(String),
    #[error("markers may only be chosen at rank-0 constants")]
    MarkerAtInnerNode,
    #[error("operator order {ord_p} exceeds the judgment order {m}")]
    OrderExceeded { ord_p: u8, m: u8 },
    #[error("argument set mismatch: operator expects {expected}, arguments provide {found}")]
    ArgSetMismatch { expected: String, found: String },
    #[error(transparent)]
    Type(#[from] TypeError),
}

fn env_of_slot(env: &TypeEnv, slot: u32) -> std::collections::BTreeSet<FullTypeId> {
    env.get(&slot).cloned().unwrap_or_default()
}

/// (Br): from a premiss about either branch of `br P1 P2`, with identical
/// environment, full type and counter.
pub fn apply_br(
    ctx: &mut Ctx,
    premiss: Derivation,
    which: u8,
    concl_subject: NodeId,
) -> Result<Derivation, RuleError> {
    let node = ctx.closure.node(concl_subject);
    let args = match &node.kind {
        NodeKind::Const { sym, args } if sym == crate::term::BR => args.clone(),
        _ => {
            return Err(RuleError::SubjectMismatch(
                "conclusion subject is not a br node".into(),
            ))
        }
    };
    if !(which == 1 || which == 2) {
        return Err(RuleError::SubjectMismatch("which must be 1 or 2".into()));
    }
    if premiss.judgment.subject != args[(which - 1) as usize] {
        return Err(RuleError::SubjectMismatch(format!(
            "premiss subject is not branch {} of the conclusion",
            which
        )));
    }
    Ok(Derivation {
        judgment: Judgment {
            env: premiss.judgment.env.clone(),
            subject: concl_subject,
            full_type: premiss.judgment.full_type,
            counter: premiss.judgment.counter,
        },
        rule: RuleKind::Br,
        premisses: vec![premiss],
        placed_flags: vec![],
        placed_markers: OrderSet::EMPTY,
    })
}

/// (Var): a leaf for a variable occurrence. `env_full_type = (k, F, M', t)`
/// is the assumption used from the environment; the requested full type
/// `(m, F, M, t)` must satisfy `M|<k = M'`. Markers of order at least `k`
/// are placed at this leaf.
pub fn apply_var(
    ctx: &mut Ctx,
    env: TypeEnv,
    x: NodeId,
    env_full_type: FullTypeId,
    requested: FullTypeId,
) -> Result<Derivation, RuleError> {
    let node = ctx.closure.node(x);
    let slot = match &node.kind {
        NodeKind::Var { index } => *index,
        _ => {
            return Err(RuleError::SubjectMismatch(
                "subject of a Var leaf must be a variable".into(),
            ))
        }
    };
    let eft = ctx.store.fulltype(env_full_type);
    let rft = ctx.store.fulltype(requested);
    if ctx.store.fulltype_sort(env_full_type) != &node.sort
        || ctx.store.fulltype_sort(requested) != &node.sort
    {
        return Err(RuleError::FlagOrTypeMismatch(format!(
            "full type sort does not match variable sort {}",
            node.sort
        )));
    }
    if eft.flags != rft.flags || eft.itype != rft.itype {
        return Err(RuleError::FlagOrTypeMismatch(format!(
            "environment provides {}, requested {}",
            ctx.store.render_fulltype(env_full_type),
            ctx.store.render_fulltype(requested)
        )));
    }
    let k = eft.order;
    if rft.markers.restrict_below(k) != eft.markers {
        return Err(RuleError::MarkerBelowBinderOrder {
            k,
            expected: eft.markers.render(),
            found: rft.markers.restrict_below(k).render(),
        });
    }
    let mut leaf_env = TypeEnv::new();
    leaf_env.insert(slot, std::iter::once(env_full_type).collect());
    if !split(&ctx.store, &env, &[&leaf_env]) {
        return Err(RuleError::SplitViolation);
    }
    Ok(Derivation {
        judgment: Judgment {
            env,
            subject: x,
            full_type: requested,
            counter: 0,
        },
        rule: RuleKind::Var,
        premisses: vec![],
        placed_flags: vec![],
        placed_markers: rft.markers.restrict_at_least(k),
    })
}

/// (λ): abstracts the premiss's binder (slot 0). The conclusion removes from
/// the marker set every order provided by the argument set.
pub fn apply_lambda(
    ctx: &mut Ctx,
    premiss: Derivation,
    lam_node: NodeId,
    arg_set: &std::collections::BTreeSet<FullTypeId>,
    env: TypeEnv,
) -> Result<Derivation, RuleError> {
    let node = ctx.closure.node(lam_node);
    let body = match &node.kind {
        NodeKind::Lam { body } => *body,
        _ => {
            return Err(RuleError::SubjectMismatch(
                "conclusion subject is not a lambda".into(),
            ))
        }
    };
    if premiss.judgment.subject != body {
        return Err(RuleError::SubjectMismatch(
            "premiss subject is not the lambda body".into(),
        ));
    }
    let (param_sort, _) = node.sort.as_arrow().expect("lambda has arrow sort");
    let param_sort = param_sort.clone();
    let bound = env_of_slot(&premiss.judgment.env, 0);
    let arg_set_owned: std::collections::BTreeSet<FullTypeId> = arg_set.clone();
    if bound != arg_set_owned {
        return Err(RuleError::BinderLeak(format!(
            "premiss binds {{{}}} at the binder, argument set is {{{}}}",
            bound
                .iter()
                .map(|t| ctx.store.render_fulltype(*t))
                .collect::<Vec<_>>()
                .join(","),
            arg_set_owned
                .iter()
                .map(|t| ctx.store.render_fulltype(*t))
                .collect::<Vec<_>>()
                .join(","),
        )));
    }
    // Γ' is the premiss environment without the binder, shifted to the
    // conclusion's slot numbering.
    let mut gamma_prime = TypeEnv::new();
    for (slot, tys) in premiss.judgment.env.iter() {
        if *slot >= 1 {
            gamma_prime.insert(slot - 1, tys.clone());
        }
    }
    if !split(&ctx.store, &env, &[&gamma_prime]) {
        return Err(RuleError::SplitViolation);
    }
    let pft = ctx.store.fulltype(premiss.judgment.full_type);
    let provided: OrderSet = arg_set_owned
        .iter()
        .fold(OrderSet::EMPTY, |acc, t| acc.union(ctx.store.markers_of(*t)));
    let members: Vec<FullTypeId> = arg_set_owned.iter().copied().collect();
    let args_id = ctx.store.intern_argset(&members);
    let itype = ctx.store.mk_arrow(&param_sort, args_id, pft.itype)?;
    let full_type = ctx
        .store
        .mk_fulltype(pft.order, pft.flags, pft.markers.minus(provided), itype)?;
    Ok(Derivation {
        judgment: Judgment {
            env,
            subject: lam_node,
            full_type,
            counter: premiss.judgment.counter,
        },
        rule: RuleKind::Lam,
        premisses: vec![premiss],
        placed_flags: vec![],
        placed_markers: OrderSet::EMPTY,
    })
}

/// (Con): a constant other than `br`, with one premiss per argument. At a
/// rank-0 constant, `marker_choice` places markers; inner constants must not
/// place any.
pub fn apply_con(
    ctx: &mut Ctx,
    concl_subject: NodeId,
    premisses: Vec<Derivation>,
    marker_choice: OrderSet,
    env: TypeEnv,
    m: u8,
) -> Result<Derivation, RuleError> {
    let node = ctx.closure.node(concl_subject);
    let args = match &node.kind {
        NodeKind::Const { sym, args } => {
            if sym == crate::term::BR {
                return Err(RuleError::BrNotAllowed);
            }
            args.clone()
        }
        _ => {
            return Err(RuleError::SubjectMismatch(
                "conclusion subject is not a constant".into(),
            ))
        }
    };
    if premisses.len() != args.len() {
        return Err(RuleError::SubjectMismatch(format!(
            "constant of rank {} given {} premisses",
            args.len(),
            premisses.len()
        )));
    }
    for (i, p) in premisses.iter().enumerate() {
        if p.judgment.subject != args[i] {
            return Err(RuleError::SubjectMismatch(format!(
                "premiss {} does not concern argument {}",
                i, i
            )));
        }
        let ft = ctx.store.fulltype(p.judgment.full_type);
        if ft.order != m || ctx.store.itype(ft.itype) != &IType::Base {
            return Err(RuleError::FlagOrTypeMismatch(format!(
                "argument premiss must have order {} and type o, got {}",
                m,
                ctx.store.render_fulltype(p.judgment.full_type)
            )));
        }
    }
    if !args.is_empty() && !marker_choice.is_empty() {
        return Err(RuleError::MarkerAtInnerNode);
    }
    let mut markers = marker_choice;
    for p in &premisses {
        let pm = ctx.store.fulltype(p.judgment.full_type).markers;
        markers = markers
            .disjoint_union(pm)
            .ok_or_else(|| RuleError::MarkerCollision(markers.intersect(pm).render()))?;
    }
    let premiss_envs: Vec<&TypeEnv> = premisses.iter().map(|p| &p.judgment.env).collect();
    if !split(&ctx.store, &env, &premiss_envs) {
        return Err(RuleError::SplitViolation);
    }
    let local = if m == 0 {
        (OrderSet::EMPTY, 1)
    } else {
        (OrderSet::singleton(0), 0)
    };
    let mut inputs = vec![local];
    for p in &premisses {
        let ft = ctx.store.fulltype(p.judgment.full_type);
        inputs.push((ft.flags, p.judgment.counter));
    }
    let r = comp(m, markers, &inputs);
    let base = ctx.store.base();
    let full_type = ctx.store.mk_fulltype(m, r.flags, markers, base)?;
    Ok(Derivation {
        judgment: Judgment {
            env,
            subject: concl_subject,
            full_type,
            counter: r.counter,
        },
        rule: RuleKind::Con,
        premisses,
        placed_flags: r.placed,
        placed_markers: marker_choice,
    })
}

/// (@): applies an operator derivation to argument derivations. The
/// operator's argument set must equal exactly the set of argument full types
/// restricted below `ord(P)`; flags of order at least `ord(P)` feed the flag
/// propagation instead.
pub fn apply_app(
    ctx: &mut Ctx,
    concl_subject: NodeId,
    op: Derivation,
    args: Vec<Derivation>,
    env: TypeEnv,
) -> Result<Derivation, RuleError> {
    let node = ctx.closure.node(concl_subject);
    let (func, arg) = match &node.kind {
        NodeKind::App { func, arg } => (*func, *arg),
        _ => {
            return Err(RuleError::SubjectMismatch(
                "conclusion subject is not an application".into(),
            ))
        }
    };
    if op.judgment.subject != func {
        return Err(RuleError::SubjectMismatch(
            "operator premiss does not concern the operator".into(),
        ));
    }
    for a in &args {
        if a.judgment.subject != arg {
            return Err(RuleError::SubjectMismatch(
                "argument premiss does not concern the operand".into(),
            ));
        }
    }
    let oft = ctx.store.fulltype(op.judgment.full_type);
    let m = oft.order;
    let ord_p = ctx.closure.node(func).order;
    if ord_p > m {
        return Err(RuleError::OrderExceeded { ord_p, m });
    }
    let (expected_args, result) = match ctx.store.itype(oft.itype) {
        IType::Arrow { args, result, .. } => (*args, *result),
        IType::Base => {
            return Err(RuleError::FlagOrTypeMismatch(
                "operator premiss does not have an arrow type".into(),
            ))
        }
    };
    for a in &args {
        let ft = ctx.store.fulltype(a.judgment.full_type);
        if ft.order != m {
            return Err(RuleError::FlagOrTypeMismatch(format!(
                "argument premiss has order {}, expected {}",
                ft.order, m
            )));
        }
    }
    let restricted: Vec<FullTypeId> = args
        .iter()
        .map(|a| ctx.store.restrict_fulltype(a.judgment.full_type, ord_p))
        .collect();
    let found = ctx.store.intern_argset(&restricted);
    if found != expected_args {
        return Err(RuleError::ArgSetMismatch {
            expected: ctx.store.render_itype(oft.itype).to_string(),
            found: restricted
                .iter()
                .map(|t| ctx.store.render_fulltype(*t).to_string())
                .collect::<Vec<_>>()
                .join(","),
        });
    }
    let mut markers = oft.markers;
    for a in &args {
        let am = ctx.store.fulltype(a.judgment.full_type).markers;
        markers = markers
            .disjoint_union(am)
            .ok_or_else(|| RuleError::MarkerCollision(markers.intersect(am).render()))?;
    }
    let mut envs: Vec<&TypeEnv> = vec![&op.judgment.env];
    envs.extend(args.iter().map(|a| &a.judgment.env));
    if !split(&ctx.store, &env, &envs) {
        return Err(RuleError::SplitViolation);
    }
    let mut inputs = vec![(oft.flags, op.judgment.counter)];
    for a in &args {
        let ft = ctx.store.fulltype(a.judgment.full_type);
        inputs.push((ft.flags.restrict_at_least(ord_p), a.judgment.counter));
    }
    let r = comp(m, markers, &inputs);
    let full_type = ctx.store.mk_fulltype(m, r.flags, markers, result)?;
    let mut premisses = vec![op];
    premisses.extend(args);
    Ok(Derivation {
        judgment: Judgment {
            env,
            subject: concl_subject,
            full_type,
            counter: r.counter,
        },
        rule: RuleKind::App,
        premisses,
        placed_flags: r.placed,
        placed_markers: OrderSet::EMPTY,
    })
}

/// A failed check at one node of a derivation.
#[derive(Clone, Debug)]
pub struct ValidationFailure {
    pub path: Vec<usize>,
    pub message: String,
}

#[derive(Clone, Debug, Default)]
pub struct ValidationReport {
    pub failures: Vec<ValidationFailure>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Re-checks every node of a derivation against its rule, recomputes every
/// counter, and checks global marker linearity (each order placed at most
/// once in the whole tree).
pub fn validate(ctx: &mut Ctx, d: &Derivation) -> ValidationReport {
    let mut report = ValidationReport::default();
    let mut placed_orders: Vec<(u8, Vec<usize>)> = Vec::new();
    validate_node(ctx, d, &mut Vec::new(), &mut report, &mut placed_orders);
    let mut seen = std::collections::BTreeMap::new();
    for (order, path) in &placed_orders {
        if let Some(first) = seen.insert(*order, path.clone()) {
            report.failures.push(ValidationFailure {
                path: path.clone(),
                message: format!(
                    "marker collision: order {} already placed at {:?}",
                    order, first
                ),
            });
        }
    }
    report
}

fn validate_node(
    ctx: &mut Ctx,
    d: &Derivation,
    path: &mut Vec<usize>,
    report: &mut ValidationReport,
    placed: &mut Vec<(u8, Vec<usize>)>,
) {
    for n in d.placed_markers.iter() {
        placed.push((n, path.clone()));
    }
    let sort_ok = ctx.store.fulltype_sort(d.judgment.full_type)
        == &ctx.closure.node(d.judgment.subject).sort;
    if !sort_ok {
        report.failures.push(ValidationFailure {
            path: path.clone(),
            message: "full type sort does not match subject sort".into(),
        });
    }
    let rebuilt = rebuild(ctx, d);
    match rebuilt {
        Ok(r) => {
            if r.judgment != d.judgment {
                report.failures.push(ValidationFailure {
                    path: path.clone(),
                    message: format!(
                        "node does not re-derive: stored {}, recomputed {}",
                        crate::judgment::render_judgment(ctx, &d.judgment),
                        crate::judgment::render_judgment(ctx, &r.judgment)
                    ),
                });
            } else if r.placed_markers != d.placed_markers {
                report.failures.push(ValidationFailure {
                    path: path.clone(),
                    message: format!(
                        "placed markers differ: stored {}, recomputed {}",
                        d.placed_markers, r.placed_markers
                    ),
                });
            } else if r.placed_flags != d.placed_flags
                && !(r.placed_flags.iter().all(|f| *f == 0)
                    && d.placed_flags.iter().all(|f| *f == 0))
            {
                report.failures.push(ValidationFailure {
                    path: path.clone(),
                    message: "placed flags differ from recomputation".into(),
                });
            }
        }
        Err(e) => report.failures.push(ValidationFailure {
            path: path.clone(),
            message: e.to_string(),
        }),
    }
    for (i, p) in d.premisses.iter().enumerate() {
        path.push(i);
        validate_node(ctx, p, path, report, placed);
        path.pop();
    }
}

/// Reconstructs the conclusion of one node from its stored premisses.
fn rebuild(ctx: &mut Ctx, d: &Derivation) -> Result<Derivation, RuleError> {
    match d.rule {
        RuleKind::Br => {
            let node = ctx.closure.node(d.judgment.subject);
            let args = match &node.kind {
                NodeKind::Const { sym, args } if sym == crate::term::BR => args.clone(),
                _ => {
                    return Err(RuleError::SubjectMismatch(
                        "Br conclusion is not a br node".into(),
                    ))
                }
            };
            if d.premisses.len() != 1 {
                return Err(RuleError::SubjectMismatch("Br takes one premiss".into()));
            }
            let which = if d.premisses[0].judgment.subject == args[0] {
                1
            } else {
                2
            };
            let r = apply_br(ctx, d.premisses[0].clone(), which, d.judgment.subject)?;
            // The Br rule reuses the premiss environment verbatim.
            if r.judgment.env != d.judgment.env {
                return Err(RuleError::SplitViolation);
            }
            Ok(r)
        }
        RuleKind::Var => {
            if !d.premisses.is_empty() {
                return Err(RuleError::SubjectMismatch("Var takes no premisses".into()));
            }
            let slot = match &ctx.closure.node(d.judgment.subject).kind {
                NodeKind::Var { index } => *index,
                _ => {
                    return Err(RuleError::SubjectMismatch(
                        "Var conclusion is not a variable".into(),
                    ))
                }
            };
            let rft = ctx.store.fulltype(d.judgment.full_type);
            // Find the environment assumption consistent with the stored
            // placements: (k, F, M|<k, t) with M|>=k equal to the placement.
            let candidates: Vec<FullTypeId> = d
                .judgment
                .env
                .get(&slot)
                .map(|s| s.iter().copied().collect())
                .unwrap_or_default();
            let mut last_err = RuleError::FlagOrTypeMismatch(
                "no environment assumption matches the requested full type".into(),
            );
            for cand in candidates {
                let c = ctx.store.fulltype(cand);
                if c.flags == rft.flags
                    && c.itype == rft.itype
                    && rft.markers.restrict_below(c.order) == c.markers
                    && rft.markers.restrict_at_least(c.order) == d.placed_markers
                {
                    match apply_var(
                        ctx,
                        d.judgment.env.clone(),
                        d.judgment.subject,
                        cand,
                        d.judgment.full_type,
                    ) {
                        Ok(r) => return Ok(r),
                        Err(e) => last_err = e,
                    }
                }
            }
            Err(last_err)
        }
        RuleKind::Lam => {
            if d.premisses.len() != 1 {
                return Err(RuleError::SubjectMismatch("λ takes one premiss".into()));
            }
            let arg_set = match ctx.store.itype(ctx.store.fulltype(d.judgment.full_type).itype) {
                IType::Arrow { args, .. } => ctx
                    .store
                    .argset_members(*args)
                    .iter()
                    .copied()
                    .collect::<std::collections::BTreeSet<_>>(),
                IType::Base => {
                    return Err(RuleError::FlagOrTypeMismatch(
                        "λ conclusion must have an arrow type".into(),
                    ))
                }
            };
            apply_lambda(
                ctx,
                d.premisses[0].clone(),
                d.judgment.subject,
                &arg_set,
                d.judgment.env.clone(),
            )
        }
        RuleKind::Con => apply_con(
            ctx,
            d.judgment.subject,
            d.premisses.clone(),
            d.placed_markers,
            d.judgment.env.clone(),
            ctx.store.fulltype(d.judgment.full_type).order,
        ),
        RuleKind::App => {
            if d.premisses.is_empty() {
                return Err(RuleError::SubjectMismatch(
                    "@ needs an operator premiss".into(),
                ));
            }
            apply_app(
                ctx,
                d.judgment.subject,
                d.premisses[0].clone(),
                d.premisses[1..].to_vec(),
                d.judgment.env.clone(),
            )
        }
    }
}

/// Adds marker-free full types to the top environment of a derivation.
/// Weakening only ever has to touch the conclusion (and, through `Br` chains,
/// the premiss that shares its environment): every other rule's split absorbs
/// a larger conclusion environment.
pub fn weaken_env(
    ctx: &Ctx,
    d: &mut Derivation,
    slot: u32,
    extra: &std::collections::BTreeSet<FullTypeId>,
) {
    debug_assert!(extra.iter().all(|t| !ctx.store.has_markers(*t)));
    d.judgment.env.entry(slot).or_default().extend(extra.iter().copied());
    if d.rule == RuleKind::Br {
        weaken_env(ctx, &mut d.premisses[0], slot, extra);
    }
}

/// Recomputes every counter (and every derived flag/placement) bottom-up,
/// keeping rule choices, environments and full types fixed. Used after
/// grafting subderivations.
pub fn recompute(ctx: &mut Ctx, d: &Derivation) -> Result<Derivation, RuleError> {
    let premisses: Result<Vec<Derivation>, RuleError> =
        d.premisses.iter().map(|p| recompute(ctx, p)).collect();
    let premisses = premisses?;
    let shell = Derivation {
        judgment: d.judgment.clone(),
        rule: d.rule,
        premisses,
        placed_flags: d.placed_flags.clone(),
        placed_markers: d.placed_markers,
    };
    let mut rebuilt = rebuild(ctx, &shell)?;
    // The conclusion env is an input, not derived; keep the stored one.
    rebuilt.judgment.env = d.judgment.env.clone();
    if rebuilt.rule == RuleKind::Br {
        rebuilt.judgment.env = rebuilt.premisses[0].judgment.env.clone();
    }
    Ok(rebuilt)
}

/// Builds the pointwise union of premiss environments, the canonical
/// conclusion environment for `Con` and `@` instances.
pub fn union_env_of(premisses: &[&Derivation]) -> TypeEnv {
    env_union(premisses.iter().map(|p| &p.judgment.env))
}
