//! Intersection types with flag and marker annotations.
//!
//! For every sort `a` there is a finite set of types `T^a` and, per order `k`,
//! a finite set of full types `F_k^a`:
//!
//! - `T^o = { o }`,
//! - `T^(a->b) = P(F_{ord(a->b)}^a) x T^b`, written `T -> t`,
//! - `F_k^a = { (k, F, M, t) | F, M subsets of {0..k-1}, F and M disjoint, t in T^a }`.
//!
//! Full types are interned with a canonical ordering of set elements so that
//! collections of full types deduplicate structurally.

use crate::sort::Sort;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

/// A set of flag or marker orders, kept as a bitmask (orders are tiny).
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Default)]
pub struct OrderSet(pub u16);

impl OrderSet {
    pub const EMPTY: OrderSet = OrderSet(0);

    pub fn singleton(n: u8) -> OrderSet {
        OrderSet(1 << n)
    }

    pub fn from_iter<I: IntoIterator<Item = u8>>(iter: I) -> OrderSet {
        let mut s = OrderSet::EMPTY;
        for n in iter {
            s.insert(n);
        }
        s
    }

    /// All orders in `{0, .., bound-1}` (empty when `bound` is 0).
    pub fn below(bound: u8) -> OrderSet {
        OrderSet((1u16 << bound) - 1)
    }

    pub fn insert(&mut self, n: u8) {
        self.0 |= 1 << n;
    }

    pub fn contains(&self, n: u8) -> bool {
        self.0 & (1 << n) != 0
    }

    pub fn is_empty(&self) -> bool {
        self.0 == 0
    }

    pub fn len(&self) -> u32 {
        self.0.count_ones()
    }

    pub fn union(self, other: OrderSet) -> OrderSet {
        OrderSet(self.0 | other.0)
    }

    pub fn intersect(self, other: OrderSet) -> OrderSet {
        OrderSet(self.0 & other.0)
    }

    pub fn minus(self, other: OrderSet) -> OrderSet {
        OrderSet(self.0 & !other.0)
    }

    pub fn disjoint(self, other: OrderSet) -> bool {
        self.0 & other.0 == 0
    }

    /// Disjoint union; `None` when the operands overlap.
    pub fn disjoint_union(self, other: OrderSet) -> Option<OrderSet> {
        if self.disjoint(other) {
            Some(self.union(other))
        } else {
            None
        }
    }

    /// `A|_{<n}`: the elements strictly below `n`.
    pub fn restrict_below(self, n: u8) -> OrderSet {
        OrderSet(self.0 & ((1u16 << n) - 1))
    }

    /// `A|_{>=n}`: the elements at least `n`.
    pub fn restrict_at_least(self, n: u8) -> OrderSet {
        OrderSet(self.0 & !((1u16 << n) - 1))
    }

    pub fn iter(self) -> impl Iterator<Item = u8> {
        (0..16).filter(move |n| self.contains(*n))
    }

    /// All subsets of this set.
    pub fn subsets(self) -> Vec<OrderSet> {
        let mut out = vec![OrderSet::EMPTY];
        for n in self.iter() {
            let cur = out.clone();
            for mut s in cur {
                s.insert(n);
                out.push(s);
            }
        }
        out
    }

    pub fn render(self) -> String {
        let mut s = String::from("{");
        let mut first = true;
        for n in self.iter() {
            if !first {
                s.push(',');
            }
            let _ = write!(s, "{}", n);
            first = false;
        }
        s.push('}');
        s
    }
}

impl std::fmt::Display for OrderSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.render())
    }
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct ITypeId(pub u32);

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct FullTypeId(pub u32);

/// An interned, canonically sorted set of full types (an argument set `T`).
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct ArgSetId(pub u32);

/// A type `t`: the base type `o` or an arrow `T -> t`.
///
/// Arrow argument sets carry their underlying sort explicitly because the
/// empty set does not determine it.
#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub enum IType {
    Base,
    Arrow {
        arg_sort: Sort,
        args: ArgSetId,
        result: ITypeId,
    },
}

/// A full type `(k, F, M, t)`.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub struct FullType {
    pub order: u8,
    pub flags: OrderSet,
    pub markers: OrderSet,
    pub itype: ITypeId,
}

/// Interner for sorts, types, full types and argument sets.
///
/// Rendered forms are cached; the cached string of a full type doubles as its
/// canonical sort key, which makes every stored argument set bit-exact
/// reproducible.
#[derive(Default)]
pub struct TypeStore {
    itypes: Vec<IType>,
    itype_ids: HashMap<IType, ITypeId>,
    itype_render: Vec<String>,
    itype_sort: Vec<Sort>,
    fulltypes: Vec<FullType>,
    fulltype_ids: HashMap<FullType, FullTypeId>,
    fulltype_render: Vec<String>,
    argsets: Vec<Vec<FullTypeId>>,
    argset_ids: HashMap<Vec<FullTypeId>, ArgSetId>,
    enum_cache: HashMap<(Sort, u8), Vec<FullTypeId>>,
}

#[derive(thiserror::Error, Debug, Clone, PartialEq, Eq)]
pub enum TypeError {
    #[error("flag set {0} and marker set {1} overlap")]
    FlagMarkerOverlap(String, String),
    #[error("flag/marker set {0} not within {{0..{1}}}")]
    OrderRange(String, u8),
    #[error("argument set member has order {found}, expected {expected}")]
    ArgSetOrder { expected: u8, found: u8 },
    #[error("argument set member has sort {found}, expected {expected}")]
    ArgSetSort { expected: String, found: String },
    #[error("type parse error: {0}")]
    Parse(String),
}

impl TypeStore {
    pub fn new() -> Self {
        let mut s = TypeStore::default();
        // Pre-intern the base type so ITypeId(0) is always `o`.
        s.intern_itype(IType::Base, Sort::Base);
        s
    }

    pub fn base(&self) -> ITypeId {
        ITypeId(0)
    }

    fn intern_itype(&mut self, ty: IType, sort: Sort) -> ITypeId {
        if let Some(id) = self.itype_ids.get(&ty) {
            return *id;
        }
        let id = ITypeId(self.itypes.len() as u32);
        let rendered = match &ty {
            IType::Base => "o".to_string(),
            IType::Arrow { args, result, .. } => {
                let mut s = String::from("{");
                let members = &self.argsets[args.0 as usize];
                for (i, ft) in members.iter().enumerate() {
                    if i > 0 {
                        s.push(',');
                    }
                    s.push_str(&self.fulltype_render[ft.0 as usize]);
                }
                s.push_str("}->");
                s.push_str(&self.itype_render[result.0 as usize]);
                s
            }
        };
        self.itypes.push(ty.clone());
        self.itype_render.push(rendered);
        self.itype_sort.push(sort);
        self.itype_ids.insert(ty, id);
        id
    }

    /// Interns a set of full types; members are deduplicated and sorted by
    /// their canonical rendering.
    pub fn intern_argset(&mut self, members: &[FullTypeId]) -> ArgSetId {
        let mut v: Vec<FullTypeId> = members.to_vec();
        v.sort_by(|a, b| self.fulltype_render[a.0 as usize].cmp(&self.fulltype_render[b.0 as usize]));
        v.dedup();
        if let Some(id) = self.argset_ids.get(&v) {
            return *id;
        }
        let id = ArgSetId(self.argsets.len() as u32);
        self.argsets.push(v.clone());
        self.argset_ids.insert(v, id);
        id
    }

    pub fn argset_members(&self, id: ArgSetId) -> &[FullTypeId] {
        &self.argsets[id.0 as usize]
    }

    pub fn empty_argset(&mut self) -> ArgSetId {
        self.intern_argset(&[])
    }

    /// Builds `T -> result` housed at `arg_sort -> result_sort`. Every member
    /// of `T` must have order `ord(arg_sort -> result_sort)` and underlying
    /// sort `arg_sort`.
    pub fn mk_arrow(
        &mut self,
        arg_sort: &Sort,
        args: ArgSetId,
        result: ITypeId,
    ) -> Result<ITypeId, TypeError> {
        let result_sort = self.itype_sort[result.0 as usize].clone();
        let whole = Sort::arrow(arg_sort.clone(), result_sort);
        let k = whole.order();
        for ft in self.argsets[args.0 as usize].clone() {
            let data = self.fulltype(ft);
            if data.order != k {
                return Err(TypeError::ArgSetOrder {
                    expected: k,
                    found: data.order,
                });
            }
            let member_sort = &self.itype_sort[data.itype.0 as usize];
            if member_sort != arg_sort {
                return Err(TypeError::ArgSetSort {
                    expected: arg_sort.to_string(),
                    found: member_sort.to_string(),
                });
            }
        }
        Ok(self.intern_itype(
            IType::Arrow {
                arg_sort: arg_sort.clone(),
                args,
                result,
            },
            whole,
        ))
    }

    pub fn itype(&self, id: ITypeId) -> &IType {
        &self.itypes[id.0 as usize]
    }

    pub fn itype_sort(&self, id: ITypeId) -> &Sort {
        &self.itype_sort[id.0 as usize]
    }

    /// Interns `(order, flags, markers, itype)` after checking the full-type
    /// invariants.
    pub fn mk_fulltype(
        &mut self,
        order: u8,
        flags: OrderSet,
        markers: OrderSet,
        itype: ITypeId,
    ) -> Result<FullTypeId, TypeError> {
        if !flags.disjoint(markers) {
            return Err(TypeError::FlagMarkerOverlap(flags.render(), markers.render()));
        }
        let bound = OrderSet::below(order);
        if !flags.minus(bound).is_empty() || !markers.minus(bound).is_empty() {
            return Err(TypeError::OrderRange(
                flags.union(markers).render(),
                order,
            ));
        }
        let ft = FullType {
            order,
            flags,
            markers,
            itype,
        };
        if let Some(id) = self.fulltype_ids.get(&ft) {
            return Ok(*id);
        }
        let id = FullTypeId(self.fulltypes.len() as u32);
        let rendered = format!(
            "({},{},{},{})",
            order,
            flags.render(),
            markers.render(),
            self.itype_render[itype.0 as usize]
        );
        self.fulltypes.push(ft);
        self.fulltype_render.push(rendered);
        self.fulltype_ids.insert(ft, id);
        Ok(id)
    }

    pub fn fulltype(&self, id: FullTypeId) -> FullType {
        self.fulltypes[id.0 as usize]
    }

    pub fn fulltype_sort(&self, id: FullTypeId) -> &Sort {
        let ft = &self.fulltypes[id.0 as usize];
        &self.itype_sort[ft.itype.0 as usize]
    }

    /// Canonical text rendering, e.g. `(2,{1},{},{(1,{},{0},o)}->o)`.
    pub fn render_fulltype(&self, id: FullTypeId) -> &str {
        &self.fulltype_render[id.0 as usize]
    }

    pub fn render_itype(&self, id: ITypeId) -> &str {
        &self.itype_render[id.0 as usize]
    }

    pub fn markers_of(&self, id: FullTypeId) -> OrderSet {
        self.fulltypes[id.0 as usize].markers
    }

    pub fn has_markers(&self, id: FullTypeId) -> bool {
        !self.fulltypes[id.0 as usize].markers.is_empty()
    }

    /// `(k, F, M, t)` restricted to order `k'`: `(k', F|_{<k'}, M|_{<k'}, t)`.
    pub fn restrict_fulltype(&mut self, id: FullTypeId, k: u8) -> FullTypeId {
        let ft = self.fulltype(id);
        self.mk_fulltype(
            k,
            ft.flags.restrict_below(k),
            ft.markers.restrict_below(k),
            ft.itype,
        )
        .expect("restriction of a well-formed full type is well-formed")
    }

    /// All types in `T^sort` (memoised indirectly through full-type listing).
    fn enumerate_itypes(&mut self, sort: &Sort) -> Vec<ITypeId> {
        match sort {
            Sort::Base => vec![self.base()],
            Sort::Arrow(a, b) => {
                let k = sort.order();
                let arg_fts = self.enumerate_fulltypes(a, k);
                let results = self.enumerate_itypes(b);
                let mut out = Vec::new();
                for subset in subsets_of(&arg_fts) {
                    let args = self.intern_argset(&subset);
                    for r in &results {
                        out.push(
                            self.mk_arrow(a, args, *r)
                                .expect("enumerated members are well-formed"),
                        );
                    }
                }
                out.sort();
                out.dedup();
                out
            }
        }
    }

    /// Exactly the members of `F_k^sort`, generated on demand and memoised.
    ///
    /// The size is hyperexponential in the order of the sort; callers are
    /// expected to stay at desk scale.
    pub fn enumerate_fulltypes(&mut self, sort: &Sort, k: u8) -> Vec<FullTypeId> {
        if let Some(v) = self.enum_cache.get(&(sort.clone(), k)) {
            return v.clone();
        }
        let itypes = self.enumerate_itypes(sort);
        let mut out = Vec::new();
        let universe = OrderSet::below(k);
        for flags in universe.subsets() {
            for markers in universe.minus(flags).subsets() {
                for ty in &itypes {
                    out.push(
                        self.mk_fulltype(k, flags, markers, *ty)
                            .expect("enumerated full types are well-formed"),
                    );
                }
            }
        }
        out.sort();
        out.dedup();
        self.enum_cache.insert((sort.clone(), k), out.clone());
        out
    }

    /// Parses the canonical rendering produced by [`render_fulltype`].
    ///
    /// `sort` gives the underlying sort, which the empty argument set cannot
    /// determine on its own.
    ///
    /// [`render_fulltype`]: TypeStore::render_fulltype
    pub fn parse_fulltype(&mut self, input: &str, sort: &Sort) -> Result<FullTypeId, TypeError> {
        let mut p = TypeParser {
            s: input,
            pos: 0,
            store: self,
        };
        let id = p.fulltype(sort)?;
        p.ws();
        if p.pos != p.s.len() {
            return Err(TypeError::Parse(format!(
                "trailing input at byte {}",
                p.pos
            )));
        }
        Ok(id)
    }
}

fn subsets_of<T: Copy>(items: &[T]) -> Vec<Vec<T>> {
    let mut out = vec![Vec::new()];
    for it in items {
        let cur = out.clone();
        for mut v in cur {
            v.push(*it);
            out.push(v);
        }
    }
    out
}

struct TypeParser<'a> {
    s: &'a str,
    pos: usize,
    store: &'a mut TypeStore,
}

impl<'a> TypeParser<'a> {
    fn ws(&mut self) {
        while self.s[self.pos..].starts_with(' ') {
            self.pos += 1;
        }
    }

    fn expect(&mut self, tok: &str) -> Result<(), TypeError> {
        self.ws();
        if self.s[self.pos..].starts_with(tok) {
            self.pos += tok.len();
            Ok(())
        } else {
            Err(TypeError::Parse(format!(
                "expected `{}` at byte {} of `{}`",
                tok, self.pos, self.s
            )))
        }
    }

    fn peek(&mut self, tok: &str) -> bool {
        self.ws();
        self.s[self.pos..].starts_with(tok)
    }

    fn nat(&mut self) -> Result<u8, TypeError> {
        self.ws();
        let start = self.pos;
        while self
            .s
            .as_bytes()
            .get(self.pos)
            .is_some_and(|b| b.is_ascii_digit())
        {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(TypeError::Parse(format!("expected number at byte {}", start)));
        }
        self.s[start..self.pos]
            .parse()
            .map_err(|e| TypeError::Parse(format!("bad number: {}", e)))
    }

    fn orderset(&mut self) -> Result<OrderSet, TypeError> {
        self.expect("{")?;
        let mut set = OrderSet::EMPTY;
        if !self.peek("}") {
            loop {
                set.insert(self.nat()?);
                if self.peek(",") {
                    self.expect(",")?;
                } else {
                    break;
                }
            }
        }
        self.expect("}")?;
        Ok(set)
    }

    fn fulltype(&mut self, sort: &Sort) -> Result<FullTypeId, TypeError> {
        self.expect("(")?;
        let order = self.nat()?;
        self.expect(",")?;
        let flags = self.orderset()?;
        self.expect(",")?;
        let markers = self.orderset()?;
        self.expect(",")?;
        let ty = self.itype(sort)?;
        self.expect(")")?;
        self.store.mk_fulltype(order, flags, markers, ty)
    }

    fn itype(&mut self, sort: &Sort) -> Result<ITypeId, TypeError> {
        if self.peek("o") {
            self.expect("o")?;
            if !sort.is_base() {
                return Err(TypeError::Parse(format!(
                    "type `o` does not match sort {}",
                    sort
                )));
            }
            return Ok(self.store.base());
        }
        let (arg_sort, res_sort) = sort.as_arrow().ok_or_else(|| {
            TypeError::Parse(format!("arrow type does not match base sort in `{}`", self.s))
        })?;
        let (arg_sort, res_sort) = (arg_sort.clone(), res_sort.clone());
        self.expect("{")?;
        let mut members = Vec::new();
        if !self.peek("}") {
            loop {
                members.push(self.fulltype(&arg_sort)?);
                if self.peek(",") {
                    self.expect(",")?;
                } else {
                    break;
                }
            }
        }
        self.expect("}")?;
        self.expect("->")?;
        let result = self.itype(&res_sort)?;
        let args = self.store.intern_argset(&members);
        self.store.mk_arrow(&arg_sort, args, result)
    }
}

/// A type environment: finite-support map from variable slots to sets of full
/// types. A slot is the de Bruijn index of a free variable at the root of the
/// judged subterm. Absent slots map to the empty set.
pub type TypeEnv = BTreeMap<u32, BTreeSet<FullTypeId>>;

/// `Split(gamma | parts)` from the typing rules: every part must be a
/// pointwise subset of `gamma`, and every full type of `gamma` that provides
/// markers must appear in at least one part. Marker-free full types may be
/// discarded or duplicated freely.
pub fn split(store: &TypeStore, gamma: &TypeEnv, parts: &[&TypeEnv]) -> bool {
    for part in parts {
        for (slot, tys) in part.iter() {
            let avail = gamma.get(slot);
            for ty in tys {
                if !avail.is_some_and(|s| s.contains(ty)) {
                    return false;
                }
            }
        }
    }
    for (slot, tys) in gamma.iter() {
        for ty in tys {
            if store.has_markers(*ty)
                && !parts
                    .iter()
                    .any(|p| p.get(slot).is_some_and(|s| s.contains(ty)))
            {
                return false;
            }
        }
    }
    true
}

/// Pointwise union of environments.
pub fn env_union<'a, I: IntoIterator<Item = &'a TypeEnv>>(envs: I) -> TypeEnv {
    let mut out = TypeEnv::new();
    for env in envs {
        for (slot, tys) in env {
            out.entry(*slot).or_default().extend(tys.iter().copied());
        }
    }
    out
}

/// Marker orders provided by the environment (union over all bound full types).
pub fn env_markers(store: &TypeStore, env: &TypeEnv) -> OrderSet {
    let mut m = OrderSet::EMPTY;
    for tys in env.values() {
        for ty in tys {
            m = m.union(store.markers_of(*ty));
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sort::parse_sort;

    #[test]
    fn restrict_examples() {
        let s = OrderSet::from_iter([0, 1]);
        assert_eq!(s.restrict_below(1), OrderSet::from_iter([0]));
        assert_eq!(s.restrict_at_least(1), OrderSet::from_iter([1]));
        assert_eq!(
            OrderSet::from_iter([1]).restrict_at_least(2),
            OrderSet::EMPTY
        );
    }

    #[test]
    fn fulltype_render_is_canonical() {
        let mut store = TypeStore::new();
        let o = Sort::Base;
        let rho1 = store
            .parse_fulltype("(1,{},{0},o)", &o)
            .unwrap();
        assert_eq!(store.render_fulltype(rho1), "(1,{},{0},o)");
        let oo = parse_sort("o->o").unwrap();
        let tf = store.parse_fulltype("(2,{1},{},{(1,{},{0},o)}->o)", &oo).unwrap();
        assert_eq!(store.render_fulltype(tf), "(2,{1},{},{(1,{},{0},o)}->o)");
        // Same set written in a different member order interns identically.
        let a = store
            .parse_fulltype("(2,{},{},{(1,{},{0},o),(1,{},{},o)}->o)", &oo)
            .unwrap();
        let b = store
            .parse_fulltype("(2,{},{},{(1,{},{},o),(1,{},{0},o)}->o)", &oo)
            .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn flag_marker_overlap_rejected() {
        let mut store = TypeStore::new();
        let base = store.base();
        let err = store.mk_fulltype(2, OrderSet::from_iter([0]), OrderSet::from_iter([0]), base);
        assert!(err.is_err());
    }
}
