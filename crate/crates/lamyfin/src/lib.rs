//! Finiteness analysis for the tree languages of nondeterministic
//! higher-order recursion schemes.
//!
//! A scheme (or, equivalently, a closed lambda-Y term of sort `o`) generates
//! a set of finite trees by resolving the nondeterministic choice points
//! (`br` nodes) of its Böhm tree. This crate decides whether that set is
//! finite:
//!
//! - [`term`], [`scheme`], [`closure`]: lambda-Y syntax, the scheme text
//!   format, and the finite subterm closure of the infinitary unfolding;
//! - [`types`], [`comp`]: intersection types annotated with flag and marker
//!   orders, and the flag-propagation predicate;
//! - [`rules`], [`judgment`]: the typing rules as derivation constructors
//!   plus a whole-derivation validator;
//! - [`engine`]: skeleton saturation and the pumpable-section search that
//!   decides finiteness (the language is infinite exactly when the flag
//!   counter is unbounded over derivations);
//! - [`oracle`]: fuel-bounded Böhm tree expansion and language enumeration
//!   for cross-validation;
//! - [`export`]: JSON, DOT and text renderings of derivations.

pub mod closure;
pub mod comp;
pub mod engine;
pub mod export;
pub mod judgment;
pub mod oracle;
pub mod rules;
pub mod scheme;
pub mod sort;
pub mod term;
pub mod types;

pub use closure::{Closure, NodeId};
pub use engine::{decide_finiteness, find_derivation, pump, Analysis, EngineConfig, EngineError, Verdict, Witness};
pub use judgment::{Ctx, Derivation, Judgment, JudgmentSkeleton, RuleKind};
pub use oracle::{bohm_expand, growth_report, language_upto, FiniteTree, PartialTree};
pub use rules::{validate, RuleError, ValidationReport};
pub use scheme::{parse_scheme, print_scheme, scheme_to_term, Scheme, SchemeError};
pub use sort::{parse_sort, Sort};
pub use term::{beta_step, sort_check, Term};
pub use types::{split, FullType, FullTypeId, IType, ITypeId, OrderSet, TypeEnv, TypeStore};
