//! Finite-horizon decentralized decision models with role-structured actions
//! (RMTDPs), exact policy evaluation, and branch-and-bound search over role
//! allocations with component-decomposed admissible upper bounds.
//!
//! The crate is organized around a handful of layers:
//!
//! * [`model`] — the RMTDP tuple itself: factored states, role-taking and
//!   role-execution actions, sparse stochastic kernels, validation.
//! * [`belief`] / [`policy`] — belief states produced by folding observations
//!   through an update rule, and joint policies indexed by either observation
//!   histories or belief states.
//! * [`eval`] — exact expected-reward computation (history- and belief-indexed
//!   recursions), a seeded Monte Carlo estimator, and the full-observability
//!   transform.
//! * [`top`] — team-oriented plan documents: organization and plan
//!   hierarchies, a condition language, the plan interpreter that derives
//!   incomplete policies, and the criticality-based reallocation rule.
//! * [`factor`] — component factors over feature subsets, parallel and
//!   sequential model composition, state projection.
//! * [`search`] — the role-allocation space, MAXEXP/NOFAIL upper bounds, and
//!   branch-and-bound search.
//! * [`domains`] — programmatic builders for the mission-rehearsal and scaled
//!   rescue domains.
//! * [`specfile`] / [`report`] / [`commands`] — the text model format, run
//!   reports, and the CLI entry points.

pub mod belief;
pub mod commands;
pub mod domains;
pub mod eval;
pub mod factor;
pub mod model;
pub(crate) mod par;
pub mod policy;
pub mod report;
pub mod search;
pub mod specfile;
pub mod top;

pub use belief::{BeliefState, BeliefUpdateRule};
pub use eval::{evaluate_belief, evaluate_obs_history, make_fully_observable, monte_carlo_estimate};
pub use model::{
    legal_actions, validate_model, AgentAction, FactoredState, FeatureSpec, JointAction,
    RmtdpModel, RoleId,
};
pub use policy::{IndexKind, JointPolicy, PolicyIndex};
pub use search::{branch_and_bound, build_allocation_space, count_allocations, BoundKind};
