//! The RMTDP tuple: factored states, role-structured actions, sparse
//! stochastic kernels, and model validation.
//!
//! States are factored into named discrete features plus a per-agent role
//! vector. Actions split into role-taking actions (adopt a role from the
//! role set) and role-execution actions (domain actions permitted only while
//! holding the corresponding role); a no-op is always legal. Kernels are
//! stored as sparse successor lists, either as explicit tables keyed by
//! canonical state encoding or as closures that generate rows on demand.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

/// Absolute tolerance for kernel-row normalization checks.
pub const NORM_TOL: f64 = 1e-9;

/// One discrete feature of the world state: a name plus its finite,
/// ordered value set. State vectors store indices into `values`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FeatureSpec {
    pub name: String,
    pub values: Vec<String>,
}

impl FeatureSpec {
    pub fn new(name: impl Into<String>, values: Vec<impl Into<String>>) -> Self {
        FeatureSpec {
            name: name.into(),
            values: values.into_iter().map(Into::into).collect(),
        }
    }
}

/// Index into the model's role set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RoleId(pub u16);

/// Index into the model's role-execution action names.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ExecId(pub u16);

/// Index into the model's observation-atom names.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ObsAtom(pub u16);

/// A role: its execution actions and the role-taking actions available to an
/// agent currently holding it.
#[derive(Clone, Debug)]
pub struct RoleSpec {
    pub name: String,
    /// Execution actions permitted while holding this role.
    pub exec_actions: Vec<ExecId>,
    /// Roles an agent holding this role may attempt to take.
    pub take_actions: Vec<RoleId>,
}

/// One agent's slot in a joint action.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AgentAction {
    Noop,
    /// Role-taking action targeting a role in the model's role set.
    Take(RoleId),
    /// Role-execution action; must belong to the agent's current role.
    Exec(ExecId),
}

/// Joint action, one entry per agent.
pub type JointAction = Vec<AgentAction>;

/// One agent's observation: a canonically sorted set of observation atoms.
pub type Obs = Vec<ObsAtom>;

/// Joint observation, one entry per agent.
pub type JointObs = Vec<Obs>;

/// A factored world state: feature values in declaration order plus the
/// per-agent current role (`None` = unassigned).
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FactoredState {
    pub values: Vec<u16>,
    pub roles: Vec<Option<RoleId>>,
}

impl FactoredState {
    pub fn new(values: Vec<u16>, roles: Vec<Option<RoleId>>) -> Self {
        FactoredState { values, roles }
    }
}

/// Sparse successor list for one (state, joint action) key.
pub type SuccessorList = Vec<(FactoredState, f64)>;

type TransitionClosure =
    dyn Fn(&FactoredState, &JointAction) -> SuccessorList + Send + Sync;

/// P(s, a, s'): explicit sparse table or generated on demand.
#[derive(Clone)]
pub enum TransitionKernel {
    Table(BTreeMap<(FactoredState, JointAction), SuccessorList>),
    Fn(Arc<TransitionClosure>),
}

impl TransitionKernel {
    pub fn successors(&self, s: &FactoredState, a: &JointAction) -> Option<SuccessorList> {
        match self {
            TransitionKernel::Table(t) => t.get(&(s.clone(), a.clone())).cloned(),
            TransitionKernel::Fn(f) => Some(f(s, a)),
        }
    }
}

/// Per-agent observation distributions; the joint probability is the product
/// over agents. Outer index is the agent.
pub type FactoredObsRow = Vec<Vec<(Obs, f64)>>;

type JointObsClosure =
    dyn Fn(&FactoredState, &JointAction) -> Vec<(JointObs, f64)> + Send + Sync;
type FactoredObsClosure =
    dyn Fn(&FactoredState, &JointAction) -> FactoredObsRow + Send + Sync;

/// O(s', a, omega): either an explicit joint distribution or a per-agent
/// factored form whose joint expands to the product of per-agent rows.
#[derive(Clone)]
pub enum ObservationKernel {
    JointTable(BTreeMap<(FactoredState, JointAction), Vec<(JointObs, f64)>>),
    JointFn(Arc<JointObsClosure>),
    FactoredFn(Arc<FactoredObsClosure>),
}

impl ObservationKernel {
    /// Per-agent observation distributions for a successor state, expanding a
    /// joint form into its per-agent marginal shape is not possible in
    /// general, so joint forms are returned via [`ObservationKernel::joint_row`].
    pub fn factored_row(&self, s: &FactoredState, a: &JointAction) -> Option<FactoredObsRow> {
        match self {
            ObservationKernel::FactoredFn(f) => Some(f(s, a)),
            _ => None,
        }
    }

    /// Joint observation distribution; factored forms are expanded by
    /// cartesian product.
    pub fn joint_row(&self, s: &FactoredState, a: &JointAction) -> Option<Vec<(JointObs, f64)>> {
        match self {
            ObservationKernel::JointTable(t) => t.get(&(s.clone(), a.clone())).cloned(),
            ObservationKernel::JointFn(f) => Some(f(s, a)),
            ObservationKernel::FactoredFn(f) => Some(expand_factored(&f(s, a))),
        }
    }
}

/// Expands a per-agent factored observation row into an explicit joint
/// distribution by cartesian product.
pub fn expand_factored(rows: &FactoredObsRow) -> Vec<(JointObs, f64)> {
    let mut acc: Vec<(JointObs, f64)> = vec![(Vec::new(), 1.0)];
    for agent_row in rows {
        let mut next = Vec::with_capacity(acc.len() * agent_row.len().max(1));
        for (prefix, p) in &acc {
            for (obs, q) in agent_row {
                let mut jo = prefix.clone();
                jo.push(obs.clone());
                next.push((jo, p * q));
            }
        }
        acc = next;
    }
    acc
}

type RewardClosure = dyn Fn(&FactoredState, &JointAction) -> f64 + Send + Sync;

/// R(s, a). Missing table entries read as zero.
#[derive(Clone)]
pub enum RewardFn {
    Table(BTreeMap<(FactoredState, JointAction), f64>),
    Fn(Arc<RewardClosure>),
}

impl RewardFn {
    pub fn reward(&self, s: &FactoredState, a: &JointAction) -> f64 {
        match self {
            RewardFn::Table(t) => t.get(&(s.clone(), a.clone())).copied().unwrap_or(0.0),
            RewardFn::Fn(f) => f(s, a),
        }
    }
}

/// The model tuple: features, agents, roles with their action sets, the
/// stochastic kernels, reward, horizon, and start distribution.
///
/// Rewards are undiscounted and summed over t = 0 .. horizon-1. Models are
/// immutable after construction and safe to share across concurrent
/// evaluations.
#[derive(Clone)]
pub struct RmtdpModel {
    pub features: Vec<FeatureSpec>,
    pub n_agents: usize,
    pub roles: Vec<RoleSpec>,
    /// Interned role-execution action names; `ExecId` indexes here.
    pub exec_names: Vec<String>,
    /// Interned observation-atom names; `ObsAtom` indexes here.
    pub obs_names: Vec<String>,
    /// Role-taking actions available to an unassigned agent.
    pub unassigned_takes: Vec<RoleId>,
    pub transition: TransitionKernel,
    pub observation: ObservationKernel,
    pub reward: RewardFn,
    /// Horizon T >= 0; rewards accrue for t = 0 .. T-1.
    pub horizon: usize,
    /// Finite start distribution; a single start state is the common case.
    pub start: Vec<(FactoredState, f64)>,
    /// Index of a time feature that advances by one each step, when the
    /// domain has one. Component-bound computation uses it to resume
    /// evaluation from carried states.
    pub clock_feature: Option<usize>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ModelError {
    #[error("unknown agent index {agent} (model has {n_agents} agents)")]
    UnknownAgent { agent: usize, n_agents: usize },
    #[error("state has {got} feature values, model defines {want} features")]
    BadStateWidth { got: usize, want: usize },
    #[error("state has {got} role entries, model has {want} agents")]
    BadRoleWidth { got: usize, want: usize },
}

impl RmtdpModel {
    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }

    pub fn role_id(&self, name: &str) -> Option<RoleId> {
        self.roles
            .iter()
            .position(|r| r.name == name)
            .map(|i| RoleId(i as u16))
    }

    pub fn exec_id(&self, name: &str) -> Option<ExecId> {
        self.exec_names
            .iter()
            .position(|n| n == name)
            .map(|i| ExecId(i as u16))
    }

    pub fn role_name(&self, id: RoleId) -> &str {
        &self.roles[id.0 as usize].name
    }

    pub fn exec_name(&self, id: ExecId) -> &str {
        &self.exec_names[id.0 as usize]
    }

    /// Checks feature/role vector widths and value ranges.
    pub fn state_shape_ok(&self, s: &FactoredState) -> Result<(), ModelError> {
        if s.values.len() != self.features.len() {
            return Err(ModelError::BadStateWidth {
                got: s.values.len(),
                want: self.features.len(),
            });
        }
        if s.roles.len() != self.n_agents {
            return Err(ModelError::BadRoleWidth {
                got: s.roles.len(),
                want: self.n_agents,
            });
        }
        Ok(())
    }

    /// Renders a state as `feat=value,..;roles=r1,..` using declared names.
    pub fn display_state(&self, s: &FactoredState) -> String {
        let feats: Vec<String> = self
            .features
            .iter()
            .zip(&s.values)
            .map(|(f, &v)| {
                let val = f
                    .values
                    .get(v as usize)
                    .map(String::as_str)
                    .unwrap_or("<out-of-range>");
                format!("{}={}", f.name, val)
            })
            .collect();
        let roles: Vec<&str> = s
            .roles
            .iter()
            .map(|r| match r {
                Some(id) => self.role_name(*id),
                None => "-",
            })
            .collect();
        format!("{};roles={}", feats.join(","), roles.join(","))
    }

    pub fn display_action(&self, a: &AgentAction) -> String {
        match a {
            AgentAction::Noop => "noop".to_string(),
            AgentAction::Take(r) => format!("take:{}", self.role_name(*r)),
            AgentAction::Exec(e) => format!("exec:{}", self.exec_name(*e)),
        }
    }

    pub fn display_joint_action(&self, a: &JointAction) -> String {
        a.iter()
            .map(|x| self.display_action(x))
            .collect::<Vec<_>>()
            .join(",")
    }

    /// All legal joint actions in a state (cartesian product of per-agent
    /// legal action sets). Exponential in agent count; intended for
    /// validation and small exhaustive tests.
    pub fn legal_joint_actions(&self, s: &FactoredState) -> Result<Vec<JointAction>, ModelError> {
        let mut acc: Vec<JointAction> = vec![Vec::new()];
        for agent in 0..self.n_agents {
            let opts = legal_actions(self, s, agent)?;
            let mut next = Vec::with_capacity(acc.len() * opts.len());
            for prefix in &acc {
                for o in &opts {
                    let mut ja = prefix.clone();
                    ja.push(*o);
                    next.push(ja);
                }
            }
            acc = next;
        }
        Ok(acc)
    }
}

/// Actions available to one agent in a state: the execution actions of its
/// current role, the role-taking actions defined for it, and no-op (always
/// legal). Never empty.
pub fn legal_actions(
    model: &RmtdpModel,
    state: &FactoredState,
    agent: usize,
) -> Result<Vec<AgentAction>, ModelError> {
    if agent >= model.n_agents {
        return Err(ModelError::UnknownAgent {
            agent,
            n_agents: model.n_agents,
        });
    }
    model.state_shape_ok(state)?;
    let mut out = Vec::new();
    match state.roles[agent] {
        Some(role) => {
            let spec = &model.roles[role.0 as usize];
            out.extend(spec.exec_actions.iter().map(|&e| AgentAction::Exec(e)));
            out.extend(spec.take_actions.iter().map(|&r| AgentAction::Take(r)));
        }
        None => {
            out.extend(model.unassigned_takes.iter().map(|&r| AgentAction::Take(r)));
        }
    }
    out.push(AgentAction::Noop);
    Ok(out)
}

/// One violation found by [`validate_model`], with the offending key rendered
/// through the model's declared names.
#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    /// Transition row probabilities do not sum to 1 within tolerance.
    TransitionNorm { state: String, action: String, sum: f64 },
    /// Observation row probabilities do not sum to 1 within tolerance.
    ObservationNorm { state: String, action: String, sum: f64 },
    /// A probability outside [0, 1].
    BadProbability { state: String, action: String, p: f64 },
    /// Duplicate successor in one row.
    DuplicateSuccessor { state: String, action: String },
    /// A table row keyed by an action illegal in its state.
    IllegalAction { state: String, action: String, agent: usize },
    /// Kernel has no row for a reachable (state, legal action) pair.
    MissingRow { state: String, action: String, kernel: &'static str },
    /// Reward is not finite.
    NonFiniteReward { state: String, action: String },
    /// Start distribution does not sum to 1 within tolerance.
    StartNorm { sum: f64 },
    /// A state fails shape or range checks.
    MalformedState { state: String, detail: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::TransitionNorm { state, action, sum } => {
                write!(f, "transition row [{state} | {action}] sums to {sum}")
            }
            Violation::ObservationNorm { state, action, sum } => {
                write!(f, "observation row [{state} | {action}] sums to {sum}")
            }
            Violation::BadProbability { state, action, p } => {
                write!(f, "probability {p} out of range in row [{state} | {action}]")
            }
            Violation::DuplicateSuccessor { state, action } => {
                write!(f, "duplicate successor in row [{state} | {action}]")
            }
            Violation::IllegalAction { state, action, agent } => write!(
                f,
                "action [{action}] illegal for agent {agent} in state [{state}]"
            ),
            Violation::MissingRow { state, action, kernel } => {
                write!(f, "{kernel} kernel missing row [{state} | {action}]")
            }
            Violation::NonFiniteReward { state, action } => {
                write!(f, "non-finite reward at [{state} | {action}]")
            }
            Violation::StartNorm { sum } => write!(f, "start distribution sums to {sum}"),
            Violation::MalformedState { state, detail } => {
                write!(f, "malformed state [{state}]: {detail}")
            }
        }
    }
}

/// Report produced by [`validate_model`]; empty iff every kernel
/// normalization and type invariant holds on the reachable space.
#[derive(Clone, Debug, Default)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    /// Number of reachable states visited.
    pub states_visited: usize,
    /// True when the reachability sweep hit the state cap before exhausting
    /// the space.
    pub truncated: bool,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }
}

const VALIDATE_STATE_CAP: usize = 200_000;

/// Checks every reachable (state, legal joint action) pair: transition and
/// observation rows normalized to 1e-9, probabilities in range, unique
/// successors, finite rewards, normalized start distribution. Table kernels
/// are additionally scanned for rows keyed by illegal actions. Report-only;
/// never fails.
pub fn validate_model(model: &RmtdpModel) -> ValidationReport {
    validate_model_capped(model, VALIDATE_STATE_CAP)
}

pub fn validate_model_capped(model: &RmtdpModel, state_cap: usize) -> ValidationReport {
    let mut report = ValidationReport::default();

    let start_sum: f64 = model.start.iter().map(|(_, p)| p).sum();
    if (start_sum - 1.0).abs() > NORM_TOL {
        report.violations.push(Violation::StartNorm { sum: start_sum });
    }

    // Table rows keyed by illegal actions are legality violations even if
    // unreachable.
    if let TransitionKernel::Table(t) = &model.transition {
        for (s, a) in t.keys() {
            check_key_legality(model, s, a, &mut report);
        }
    }

    let mut seen: BTreeSet<FactoredState> = BTreeSet::new();
    let mut queue: VecDeque<FactoredState> = VecDeque::new();
    for (s, _) in &model.start {
        if seen.insert(s.clone()) {
            queue.push_back(s.clone());
        }
    }

    while let Some(s) = queue.pop_front() {
        if report.states_visited >= state_cap {
            report.truncated = true;
            break;
        }
        report.states_visited += 1;

        if let Err(e) = model.state_shape_ok(&s) {
            report.violations.push(Violation::MalformedState {
                state: model.display_state(&s),
                detail: e.to_string(),
            });
            continue;
        }
        for (fi, &v) in s.values.iter().enumerate() {
            if v as usize >= model.features[fi].values.len() {
                report.violations.push(Violation::MalformedState {
                    state: model.display_state(&s),
                    detail: format!("feature {} value index {} out of range", model.features[fi].name, v),
                });
            }
        }

        let joint_actions = match model.legal_joint_actions(&s) {
            Ok(ja) => ja,
            Err(e) => {
                report.violations.push(Violation::MalformedState {
                    state: model.display_state(&s),
                    detail: e.to_string(),
                });
                continue;
            }
        };

        for a in joint_actions {
            let r = model.reward.reward(&s, &a);
            if !r.is_finite() {
                report.violations.push(Violation::NonFiniteReward {
                    state: model.display_state(&s),
                    action: model.display_joint_action(&a),
                });
            }

            let succ = match model.transition.successors(&s, &a) {
                Some(row) => row,
                None => {
                    report.violations.push(Violation::MissingRow {
                        state: model.display_state(&s),
                        action: model.display_joint_action(&a),
                        kernel: "transition",
                    });
                    continue;
                }
            };
            check_row_probs(
                model,
                &s,
                &a,
                succ.iter().map(|(_, p)| *p),
                "transition",
                &mut report,
            );
            let mut uniq = BTreeSet::new();
            for (s2, _) in &succ {
                if !uniq.insert(s2.clone()) {
                    report.violations.push(Violation::DuplicateSuccessor {
                        state: model.display_state(&s),
                        action: model.display_joint_action(&a),
                    });
                    break;
                }
            }

            for (s2, p) in &succ {
                if *p <= 0.0 {
                    continue;
                }
                match model.observation.joint_row(s2, &a) {
                    Some(obs_row) => {
                        check_row_probs(
                            model,
                            s2,
                            &a,
                            obs_row.iter().map(|(_, q)| *q),
                            "observation",
                            &mut report,
                        );
                    }
                    None => {
                        report.violations.push(Violation::MissingRow {
                            state: model.display_state(s2),
                            action: model.display_joint_action(&a),
                            kernel: "observation",
                        });
                    }
                }
                if seen.insert(s2.clone()) {
                    queue.push_back(s2.clone());
                }
            }
        }
    }
    report
}

fn check_key_legality(
    model: &RmtdpModel,
    s: &FactoredState,
    a: &JointAction,
    report: &mut ValidationReport,
) {
    if a.len() != model.n_agents || model.state_shape_ok(s).is_err() {
        return; // shape problems surface elsewhere
    }
    for (agent, act) in a.iter().enumerate() {
        let legal = match legal_actions(model, s, agent) {
            Ok(l) => l,
            Err(_) => return,
        };
        if !legal.contains(act) {
            report.violations.push(Violation::IllegalAction {
                state: model.display_state(s),
                action: model.display_joint_action(a),
                agent,
            });
        }
    }
}

fn check_row_probs(
    model: &RmtdpModel,
    s: &FactoredState,
    a: &JointAction,
    probs: impl Iterator<Item = f64>,
    kernel: &'static str,
    report: &mut ValidationReport,
) {
    let mut sum = 0.0;
    for p in probs {
        if !(0.0..=1.0 + NORM_TOL).contains(&p) {
            report.violations.push(Violation::BadProbability {
                state: model.display_state(s),
                action: model.display_joint_action(a),
                p,
            });
        }
        sum += p;
    }
    if (sum - 1.0).abs() > NORM_TOL {
        let v = match kernel {
            "transition" => Violation::TransitionNorm {
                state: model.display_state(s),
                action: model.display_joint_action(a),
                sum,
            },
            _ => Violation::ObservationNorm {
                state: model.display_state(s),
                action: model.display_joint_action(a),
                sum,
            },
        };
        report.violations.push(v);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domains::mission::{build_mission_rehearsal, MissionParams};

    /// Two-state, one-agent deterministic toy with a single exec action.
    fn toy_model() -> RmtdpModel {
        let features = vec![FeatureSpec::new("pos", vec!["a", "b"])];
        let roles = vec![RoleSpec {
            name: "walker".into(),
            exec_actions: vec![ExecId(0)],
            take_actions: vec![],
        }];
        let s0 = FactoredState::new(vec![0], vec![Some(RoleId(0))]);
        let s1 = FactoredState::new(vec![1], vec![Some(RoleId(0))]);
        let mut trans = BTreeMap::new();
        let mut obs = BTreeMap::new();
        let mut rew = BTreeMap::new();
        for s in [&s0, &s1] {
            for a in [
                vec![AgentAction::Exec(ExecId(0))],
                vec![AgentAction::Noop],
            ] {
                let succ = if a[0] == AgentAction::Exec(ExecId(0)) {
                    vec![(s1.clone(), 1.0)]
                } else {
                    vec![(s.clone(), 1.0)]
                };
                for (s2, _) in &succ {
                    obs.insert(
                        (s2.clone(), a.clone()),
                        vec![(vec![vec![]], 1.0)],
                    );
                }
                trans.insert((s.clone(), a.clone()), succ);
                rew.insert(((*s).clone(), a.clone()), 1.0);
            }
        }
        RmtdpModel {
            features,
            n_agents: 1,
            roles,
            exec_names: vec!["step".into()],
            obs_names: vec![],
            unassigned_takes: vec![],
            transition: TransitionKernel::Table(trans),
            observation: ObservationKernel::JointTable(obs),
            reward: RewardFn::Table(rew),
            horizon: 3,
            start: vec![(s0, 1.0)],
            clock_feature: None,
        }
    }

    #[test]
    fn legal_actions_include_role_filter_and_noop() {
        let m = toy_model();
        let s = m.start[0].0.clone();
        let acts = legal_actions(&m, &s, 0).unwrap();
        assert_eq!(
            acts,
            vec![AgentAction::Exec(ExecId(0)), AgentAction::Noop]
        );
    }

    #[test]
    fn legal_actions_unknown_agent_errors() {
        let m = toy_model();
        let s = m.start[0].0.clone();
        assert_eq!(
            legal_actions(&m, &s, 5),
            Err(ModelError::UnknownAgent { agent: 5, n_agents: 1 })
        );
    }

    #[test]
    fn legal_actions_unassigned_no_takes_is_noop_only() {
        let mut m = toy_model();
        m.unassigned_takes.clear();
        let s = FactoredState::new(vec![0], vec![None]);
        let acts = legal_actions(&m, &s, 0).unwrap();
        assert_eq!(acts, vec![AgentAction::Noop]);
    }

    #[test]
    fn legal_actions_mission_scout_and_transport() {
        let (_, m, _) = build_mission_rehearsal(&MissionParams {
            n_helos: 2,
            horizon: 3,
            ..MissionParams::default()
        })
        .unwrap();
        let sct_a = m.role_id("memberSctTeamA").unwrap();
        let transport = m.role_id("memberTransportTeam").unwrap();
        let mut s = m.start[0].0.clone();
        s.roles[0] = Some(sct_a);
        s.roles[1] = Some(transport);

        let scout_acts = legal_actions(&m, &s, 0).unwrap();
        let names: Vec<String> = scout_acts.iter().map(|a| m.display_action(a)).collect();
        assert_eq!(names, vec!["exec:moveForward", "noop"]);

        let transport_acts = legal_actions(&m, &s, 1).unwrap();
        let names: Vec<String> = transport_acts.iter().map(|a| m.display_action(a)).collect();
        assert_eq!(
            names,
            vec![
                "exec:chooseRoute",
                "exec:moveForward",
                "take:memberSctTeamA",
                "take:memberSctTeamB",
                "take:memberSctTeamC",
                "noop"
            ]
        );
    }

    #[test]
    fn validate_clean_toy_is_empty() {
        let report = validate_model(&toy_model());
        assert!(report.is_empty(), "violations: {:?}", report.violations);
    }

    #[test]
    fn validate_flags_denormalized_transition_row() {
        let mut m = toy_model();
        let s0 = m.start[0].0.clone();
        let a = vec![AgentAction::Noop];
        if let TransitionKernel::Table(t) = &mut m.transition {
            let row = t.get_mut(&(s0.clone(), a.clone())).unwrap();
            row[0].1 = 0.9;
        }
        let report = validate_model(&m);
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, Violation::TransitionNorm { sum, .. } if (sum - 0.9).abs() < 1e-12)));
    }

    #[test]
    fn validate_flags_illegal_exec_action_row() {
        let mut m = toy_model();
        // An exec action outside the role's action set, keyed into the table.
        m.exec_names.push("forbidden".into());
        let s0 = m.start[0].0.clone();
        let bad = vec![AgentAction::Exec(ExecId(1))];
        if let TransitionKernel::Table(t) = &mut m.transition {
            t.insert((s0.clone(), bad), vec![(s0.clone(), 1.0)]);
        }
        let report = validate_model(&m);
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, Violation::IllegalAction { agent: 0, .. })));
    }

    #[test]
    fn factored_expansion_matches_hand_built_joint() {
        // Two agents; agent 0 sees atom 0 w.p. 0.3, nothing otherwise;
        // agent 1 sees atom 1 deterministically.
        let row: FactoredObsRow = vec![
            vec![(vec![ObsAtom(0)], 0.3), (vec![], 0.7)],
            vec![(vec![ObsAtom(1)], 1.0)],
        ];
        let expanded = expand_factored(&row);
        let expected = vec![
            (vec![vec![ObsAtom(0)], vec![ObsAtom(1)]], 0.3),
            (vec![vec![], vec![ObsAtom(1)]], 0.7),
        ];
        assert_eq!(expanded.len(), expected.len());
        for ((jo, p), (ejo, ep)) in expanded.iter().zip(expected.iter()) {
            assert_eq!(jo, ejo);
            assert!((p - ep).abs() < 1e-12);
        }
        let sum: f64 = expanded.iter().map(|(_, p)| p).sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }
}
