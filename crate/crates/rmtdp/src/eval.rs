//! Exact expected-reward computation for joint policies.
//!
//! Two recursions are provided. History mode projects the team's execution
//! over every world-state and joint-observation branch, indexing each agent's
//! policy by its full observation history; it deliberately memoizes nothing.
//! Belief mode indexes policies by the belief states produced by a
//! deterministic update rule, memoizes on (t, state, joint belief), and
//! groups observation branches by the joint belief they induce — many
//! histories collapsing onto one belief is exactly where the savings come
//! from, and the expansion counters make the contrast measurable.
//!
//! A seeded Monte Carlo estimator serves as an independent validation oracle,
//! and [`make_fully_observable`] turns any model into its full-observability
//! (joint-action MDP) counterpart.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::belief::{BeliefState, BeliefUpdateRule};
use crate::model::{
    legal_actions, AgentAction, FactoredState, FeatureSpec, JointAction, Obs, ObsAtom,
    ObservationKernel, RmtdpModel, NORM_TOL,
};
use crate::par::map_indexed;
use crate::policy::{IndexKind, JointPolicy, PolicyIndex};

/// Counters gathered during one evaluation.
#[derive(Clone, Debug, Default)]
pub struct EvalStats {
    /// Recursion invocations that actually computed a value (memoization
    /// hits are not counted).
    pub node_expansions: u64,
    /// Per-agent count of distinct policy indices consulted (|Psi_i| in
    /// belief mode, distinct observation histories in history mode).
    pub distinct_indices: Vec<usize>,
    pub wall: Duration,
}

/// Expected reward plus evaluation counters.
#[derive(Clone, Debug)]
pub struct EvalResult {
    pub value: f64,
    pub stats: EvalStats,
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("policy undefined for agent {agent} at index {index}")]
    UndefinedPolicy { agent: usize, index: String },
    #[error("agent {agent} action {action} illegal in state [{state}]")]
    IllegalAction { agent: usize, action: String, state: String },
    #[error("transition kernel missing row [{state} | {action}]")]
    MissingTransition { state: String, action: String },
    #[error("observation kernel missing row [{state} | {action}]")]
    MissingObservation { state: String, action: String },
    #[error("policy is indexed by {got:?} but {want:?} evaluation was requested")]
    WrongIndexKind { got: IndexKind, want: IndexKind },
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
}

/// End-of-component interface: a reached state together with the joint
/// belief the team held on arrival.
pub type EndInterface = (FactoredState, Vec<BeliefState>);

/// Outcome of a component-restricted evaluation set: one value per start
/// interface, the union of end interfaces reached, and counters.
pub(crate) struct ComponentEval {
    pub values: Vec<f64>,
    pub ends: BTreeSet<EndInterface>,
    pub stats: EvalStats,
}

type StopFn<'a> = &'a (dyn Fn(&FactoredState) -> bool + Sync);

// ---------------------------------------------------------------------------
// History-indexed recursion
// ---------------------------------------------------------------------------

struct HistoryEngine<'a> {
    model: &'a RmtdpModel,
    policy: &'a JointPolicy,
    expansions: u64,
    seen_indices: Vec<HashSet<Vec<Obs>>>,
}

impl<'a> HistoryEngine<'a> {
    fn recurse(
        &mut self,
        t: usize,
        s: &FactoredState,
        histories: &[Vec<Obs>],
    ) -> Result<f64, EvalError> {
        if t >= self.model.horizon {
            return Ok(0.0);
        }
        self.expansions += 1;
        let mut joint: JointAction = Vec::with_capacity(self.model.n_agents);
        for agent in 0..self.model.n_agents {
            self.seen_indices[agent].insert(histories[agent].clone());
            let idx = PolicyIndex::History(histories[agent].clone());
            let a = self.policy.decide(agent, &idx).ok_or_else(|| {
                EvalError::UndefinedPolicy {
                    agent,
                    index: display_history(self.model, &histories[agent]),
                }
            })?;
            check_legal(self.model, s, agent, a)?;
            joint.push(a);
        }
        let mut value = self.model.reward.reward(s, &joint);
        let successors = self.model.transition.successors(s, &joint).ok_or_else(|| {
            EvalError::MissingTransition {
                state: self.model.display_state(s),
                action: self.model.display_joint_action(&joint),
            }
        })?;
        debug_assert!(
            (successors.iter().map(|(_, p)| p).sum::<f64>() - 1.0).abs() <= NORM_TOL,
            "transition row not normalized at [{}]",
            self.model.display_state(s)
        );
        for (s2, p) in &successors {
            if *p <= 0.0 {
                continue;
            }
            let obs_row = self.model.observation.joint_row(s2, &joint).ok_or_else(|| {
                EvalError::MissingObservation {
                    state: self.model.display_state(s2),
                    action: self.model.display_joint_action(&joint),
                }
            })?;
            debug_assert!(
                (obs_row.iter().map(|(_, q)| q).sum::<f64>() - 1.0).abs() <= NORM_TOL,
                "observation row not normalized at [{}]",
                self.model.display_state(s2)
            );
            for (jo, q) in &obs_row {
                if *q <= 0.0 {
                    continue;
                }
                let mut next_histories = histories.to_vec();
                for (agent, o) in jo.iter().enumerate() {
                    next_histories[agent].push(o.clone());
                }
                value += p * q * self.recurse(t + 1, s2, &next_histories)?;
            }
        }
        Ok(value)
    }
}

/// Expected reward of a history-indexed joint policy from the model's start
/// distribution: the Bellman-style projection over all state and observation
/// branches, rewards summed for t = 0 .. T-1, terminating with value 0 at T.
pub fn evaluate_obs_history(
    model: &RmtdpModel,
    policy: &JointPolicy,
) -> Result<EvalResult, EvalError> {
    if policy.kind() != IndexKind::ObservationHistory {
        return Err(EvalError::WrongIndexKind {
            got: policy.kind(),
            want: IndexKind::ObservationHistory,
        });
    }
    let t0 = Instant::now();
    let mut engine = HistoryEngine {
        model,
        policy,
        expansions: 0,
        seen_indices: vec![HashSet::new(); model.n_agents],
    };
    let empty = vec![Vec::new(); model.n_agents];
    let mut value = 0.0;
    for (s, p) in &model.start {
        if *p <= 0.0 {
            continue;
        }
        value += p * engine.recurse(0, s, &empty)?;
    }
    Ok(EvalResult {
        value,
        stats: EvalStats {
            node_expansions: engine.expansions,
            distinct_indices: engine.seen_indices.iter().map(HashSet::len).collect(),
            wall: t0.elapsed(),
        },
    })
}

// ---------------------------------------------------------------------------
// Belief-indexed recursion
// ---------------------------------------------------------------------------

/// Interning pools keep memo keys small and hashing cheap.
struct BeliefEngine<'a> {
    model: &'a RmtdpModel,
    policy: &'a JointPolicy,
    rule: &'a BeliefUpdateRule,
    stop: Option<StopFn<'a>>,
    collect_ends: bool,
    states: Vec<FactoredState>,
    state_ids: HashMap<FactoredState, u32>,
    beliefs: Vec<BeliefState>,
    belief_ids: HashMap<BeliefState, u32>,
    memo: HashMap<(usize, u32, Vec<u32>), f64>,
    ends: BTreeSet<EndInterface>,
    expansions: u64,
    seen_indices: Vec<HashSet<u32>>,
}

impl<'a> BeliefEngine<'a> {
    fn new(
        model: &'a RmtdpModel,
        policy: &'a JointPolicy,
        rule: &'a BeliefUpdateRule,
        stop: Option<StopFn<'a>>,
        collect_ends: bool,
    ) -> Self {
        BeliefEngine {
            model,
            policy,
            rule,
            stop,
            collect_ends,
            states: Vec::new(),
            state_ids: HashMap::new(),
            beliefs: Vec::new(),
            belief_ids: HashMap::new(),
            memo: HashMap::new(),
            ends: BTreeSet::new(),
            expansions: 0,
            seen_indices: vec![HashSet::new(); model.n_agents],
        }
    }

    fn intern_state(&mut self, s: &FactoredState) -> u32 {
        if let Some(&id) = self.state_ids.get(s) {
            return id;
        }
        let id = self.states.len() as u32;
        self.states.push(s.clone());
        self.state_ids.insert(s.clone(), id);
        id
    }

    fn intern_belief(&mut self, b: &BeliefState) -> u32 {
        if let Some(&id) = self.belief_ids.get(b) {
            return id;
        }
        let id = self.beliefs.len() as u32;
        self.beliefs.push(b.clone());
        self.belief_ids.insert(b.clone(), id);
        id
    }

    fn record_end(&mut self, sid: u32, beliefs: &[u32]) {
        if self.collect_ends {
            let s = self.states[sid as usize].clone();
            let bs = beliefs
                .iter()
                .map(|&b| self.beliefs[b as usize].clone())
                .collect();
            self.ends.insert((s, bs));
        }
    }

    fn recurse(&mut self, t: usize, sid: u32, beliefs: &[u32]) -> Result<f64, EvalError> {
        if let Some(stop) = self.stop {
            if stop(&self.states[sid as usize]) {
                self.record_end(sid, beliefs);
                return Ok(0.0);
            }
        }
        if t >= self.model.horizon {
            return Ok(0.0);
        }
        let key = (t, sid, beliefs.to_vec());
        if let Some(&v) = self.memo.get(&key) {
            return Ok(v);
        }
        self.expansions += 1;

        let s = self.states[sid as usize].clone();
        if let Some(clock) = self.model.clock_feature {
            debug_assert_eq!(
                s.values[clock] as usize, t,
                "clock feature out of step with recursion depth"
            );
        }
        let mut joint: JointAction = Vec::with_capacity(self.model.n_agents);
        for agent in 0..self.model.n_agents {
            self.seen_indices[agent].insert(beliefs[agent]);
            let b = &self.beliefs[beliefs[agent] as usize];
            let idx = PolicyIndex::Belief(b.clone());
            let a = self.policy.decide(agent, &idx).ok_or_else(|| {
                EvalError::UndefinedPolicy { agent, index: format!("{b:?}") }
            })?;
            check_legal(self.model, &s, agent, a)?;
            joint.push(a);
        }

        let mut value = self.model.reward.reward(&s, &joint);
        let successors = self.model.transition.successors(&s, &joint).ok_or_else(|| {
            EvalError::MissingTransition {
                state: self.model.display_state(&s),
                action: self.model.display_joint_action(&joint),
            }
        })?;
        debug_assert!(
            (successors.iter().map(|(_, p)| p).sum::<f64>() - 1.0).abs() <= NORM_TOL,
            "transition row not normalized at [{}]",
            self.model.display_state(&s)
        );

        for (s2, p) in &successors {
            if *p <= 0.0 {
                continue;
            }
            let s2id = self.intern_state(s2);
            // Group observation branches by the joint belief they induce;
            // branches that collapse to the same belief vector recurse once.
            let grouped = self.grouped_belief_branches(s2, &joint, beliefs)?;
            debug_assert!(
                (grouped.iter().map(|(_, q)| q).sum::<f64>() - 1.0).abs() <= NORM_TOL,
                "observation mass not conserved at [{}]",
                self.model.display_state(s2)
            );
            for (next_beliefs, q) in grouped {
                if q <= 0.0 {
                    continue;
                }
                value += p * q * self.recurse(t + 1, s2id, &next_beliefs)?;
            }
        }
        self.memo.insert(key, value);
        Ok(value)
    }

    /// Distribution over successor joint beliefs at (s', a), grouped.
    fn grouped_belief_branches(
        &mut self,
        s2: &FactoredState,
        joint: &JointAction,
        beliefs: &[u32],
    ) -> Result<Vec<(Vec<u32>, f64)>, EvalError> {
        if let Some(rows) = self.model.observation.factored_row(s2, joint) {
            // Per-agent grouping first, then a cartesian product over the
            // (much smaller) distinct per-agent outcomes.
            let mut per_agent: Vec<Vec<(u32, f64)>> = Vec::with_capacity(rows.len());
            for (agent, row) in rows.iter().enumerate() {
                let mut grouped: BTreeMap<u32, f64> = BTreeMap::new();
                let prior = self.beliefs[beliefs[agent] as usize].clone();
                for (obs, q) in row {
                    if *q <= 0.0 {
                        continue;
                    }
                    let next = self.rule.update(&prior, obs);
                    *grouped.entry(self.intern_belief(&next)).or_insert(0.0) += q;
                }
                per_agent.push(grouped.into_iter().collect());
            }
            let mut acc: Vec<(Vec<u32>, f64)> = vec![(Vec::new(), 1.0)];
            for agent_row in &per_agent {
                let mut next = Vec::with_capacity(acc.len() * agent_row.len().max(1));
                for (prefix, p) in &acc {
                    for (bid, q) in agent_row {
                        let mut v = prefix.clone();
                        v.push(*bid);
                        next.push((v, p * q));
                    }
                }
                acc = next;
            }
            return Ok(acc);
        }

        let obs_row = self.model.observation.joint_row(s2, joint).ok_or_else(|| {
            EvalError::MissingObservation {
                state: self.model.display_state(s2),
                action: self.model.display_joint_action(joint),
            }
        })?;
        let mut grouped: BTreeMap<Vec<u32>, f64> = BTreeMap::new();
        for (jo, q) in &obs_row {
            if *q <= 0.0 {
                continue;
            }
            let mut next_beliefs = Vec::with_capacity(self.model.n_agents);
            for (agent, o) in jo.iter().enumerate() {
                let prior = self.beliefs[beliefs[agent] as usize].clone();
                let next = self.rule.update(&prior, o);
                next_beliefs.push(self.intern_belief(&next));
            }
            *grouped.entry(next_beliefs).or_insert(0.0) += q;
        }
        Ok(grouped.into_iter().collect())
    }
}

/// Expected reward of a belief-indexed joint policy under a deterministic
/// belief-update rule, memoizing on (t, state, joint belief). Equals the
/// history-indexed evaluation of the same policy's unrolling.
pub fn evaluate_belief(
    model: &RmtdpModel,
    policy: &JointPolicy,
    rule: &BeliefUpdateRule,
) -> Result<EvalResult, EvalError> {
    if policy.kind() != IndexKind::BeliefState {
        return Err(EvalError::WrongIndexKind {
            got: policy.kind(),
            want: IndexKind::BeliefState,
        });
    }
    let t0 = Instant::now();
    let mut engine = BeliefEngine::new(model, policy, rule, None, false);
    let init: Vec<BeliefState> = vec![rule.initial().clone(); model.n_agents];
    let init_ids: Vec<u32> = init.iter().map(|b| engine.intern_belief(b)).collect();
    let mut value = 0.0;
    for (s, p) in &model.start.clone() {
        if *p <= 0.0 {
            continue;
        }
        let sid = engine.intern_state(s);
        value += p * engine.recurse(0, sid, &init_ids)?;
    }
    Ok(EvalResult {
        value,
        stats: EvalStats {
            node_expansions: engine.expansions,
            distinct_indices: engine.seen_indices.iter().map(HashSet::len).collect(),
            wall: t0.elapsed(),
        },
    })
}

/// Component-restricted evaluation used by the bound computation: evaluates
/// the policy from each given (state, joint belief) interface, stopping where
/// `stop` holds, sharing one memo table, and collecting the union of end
/// interfaces. Start times are read from the model's clock feature when it
/// has one.
pub(crate) fn evaluate_belief_set(
    model: &RmtdpModel,
    policy: &JointPolicy,
    rule: &BeliefUpdateRule,
    starts: &[EndInterface],
    stop: Option<StopFn<'_>>,
    collect_ends: bool,
) -> Result<ComponentEval, EvalError> {
    let t0 = Instant::now();
    let mut engine = BeliefEngine::new(model, policy, rule, stop, collect_ends);
    let mut values = Vec::with_capacity(starts.len());
    for (s, beliefs) in starts {
        let sid = engine.intern_state(s);
        let bids: Vec<u32> = beliefs.iter().map(|b| engine.intern_belief(b)).collect();
        let t_start = match model.clock_feature {
            Some(clock) => s.values[clock] as usize,
            None => 0,
        };
        values.push(engine.recurse(t_start, sid, &bids)?);
    }
    Ok(ComponentEval {
        values,
        ends: engine.ends,
        stats: EvalStats {
            node_expansions: engine.expansions,
            distinct_indices: engine.seen_indices.iter().map(HashSet::len).collect(),
            wall: t0.elapsed(),
        },
    })
}

// ---------------------------------------------------------------------------
// Monte Carlo oracle
// ---------------------------------------------------------------------------

/// A Monte Carlo estimate: sample mean and its standard error.
#[derive(Clone, Copy, Debug)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub runs: usize,
}

/// Sample mean of total reward over seeded rollouts. Identical seeds yield
/// identical output regardless of thread count: each run derives its own
/// generator from (seed, run index) and the reduction is sequential.
pub fn monte_carlo_estimate(
    model: &RmtdpModel,
    policy: &JointPolicy,
    rule: &BeliefUpdateRule,
    runs: usize,
    seed: u64,
) -> Result<McEstimate, EvalError> {
    monte_carlo_with(model, policy, rule, runs, seed, cfg!(feature = "parallel"))
}

pub fn monte_carlo_with(
    model: &RmtdpModel,
    policy: &JointPolicy,
    rule: &BeliefUpdateRule,
    runs: usize,
    seed: u64,
    parallel: bool,
) -> Result<McEstimate, EvalError> {
    assert!(runs >= 1, "monte_carlo_estimate requires runs >= 1");
    let totals: Vec<Result<f64, EvalError>> = map_indexed(parallel, runs, |run| {
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix(seed, run as u64));
        rollout(model, policy, rule, &mut rng)
    });
    let mut values = Vec::with_capacity(runs);
    for t in totals {
        values.push(t?);
    }
    let mean = values.iter().sum::<f64>() / runs as f64;
    let std_error = if runs > 1 {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (runs as f64 - 1.0);
        (var / runs as f64).sqrt()
    } else {
        0.0
    };
    Ok(McEstimate { mean, std_error, runs })
}

fn splitmix(seed: u64, run: u64) -> u64 {
    let mut z = seed.wrapping_add(run.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn sample_index(weights: &[f64], rng: &mut ChaCha8Rng) -> usize {
    if weights.len() == 1 {
        return 0;
    }
    WeightedIndex::new(weights).expect("valid weights").sample(rng)
}

fn rollout(
    model: &RmtdpModel,
    policy: &JointPolicy,
    rule: &BeliefUpdateRule,
    rng: &mut ChaCha8Rng,
) -> Result<f64, EvalError> {
    let start_weights: Vec<f64> = model.start.iter().map(|(_, p)| *p).collect();
    let mut state = model.start[sample_index(&start_weights, rng)].0.clone();
    let mut beliefs: Vec<BeliefState> = vec![rule.initial().clone(); model.n_agents];
    let mut histories: Vec<Vec<Obs>> = vec![Vec::new(); model.n_agents];
    let mut total = 0.0;

    for _t in 0..model.horizon {
        let mut joint: JointAction = Vec::with_capacity(model.n_agents);
        for agent in 0..model.n_agents {
            let idx = match policy.kind() {
                IndexKind::BeliefState => PolicyIndex::Belief(beliefs[agent].clone()),
                IndexKind::ObservationHistory => PolicyIndex::History(histories[agent].clone()),
            };
            let a = policy.decide(agent, &idx).ok_or_else(|| EvalError::UndefinedPolicy {
                agent,
                index: match policy.kind() {
                    IndexKind::BeliefState => format!("{:?}", beliefs[agent]),
                    IndexKind::ObservationHistory => display_history(model, &histories[agent]),
                },
            })?;
            check_legal(model, &state, agent, a)?;
            joint.push(a);
        }
        total += model.reward.reward(&state, &joint);

        let successors = model.transition.successors(&state, &joint).ok_or_else(|| {
            EvalError::MissingTransition {
                state: model.display_state(&state),
                action: model.display_joint_action(&joint),
            }
        })?;
        let weights: Vec<f64> = successors.iter().map(|(_, p)| *p).collect();
        let next = successors[sample_index(&weights, rng)].0.clone();

        let jo: Vec<Obs> = if let Some(rows) = model.observation.factored_row(&next, &joint) {
            rows.iter()
                .map(|row| {
                    let w: Vec<f64> = row.iter().map(|(_, q)| *q).collect();
                    row[sample_index(&w, rng)].0.clone()
                })
                .collect()
        } else {
            let row = model.observation.joint_row(&next, &joint).ok_or_else(|| {
                EvalError::MissingObservation {
                    state: model.display_state(&next),
                    action: model.display_joint_action(&joint),
                }
            })?;
            let w: Vec<f64> = row.iter().map(|(_, q)| *q).collect();
            row[sample_index(&w, rng)].0.clone()
        };

        for agent in 0..model.n_agents {
            match policy.kind() {
                IndexKind::BeliefState => {
                    beliefs[agent] = rule.update(&beliefs[agent], &jo[agent]);
                }
                IndexKind::ObservationHistory => histories[agent].push(jo[agent].clone()),
            }
        }
        state = next;
    }
    Ok(total)
}

// ---------------------------------------------------------------------------
// Full observability
// ---------------------------------------------------------------------------

/// Returns a model identical to the input except that the observation kernel
/// deterministically emits the full successor state (features and every
/// agent's role) to every agent. Evaluating under it is the joint-action MDP
/// baseline: transition uncertainty kept, observation uncertainty removed.
pub fn make_fully_observable(model: &RmtdpModel) -> RmtdpModel {
    let mut obs_names = Vec::new();
    // One atom per (feature, value) and per (agent, role-or-unassigned).
    let mut feature_base = Vec::with_capacity(model.features.len());
    for f in &model.features {
        feature_base.push(obs_names.len());
        for v in &f.values {
            obs_names.push(format!("st:{}={}", f.name, v));
        }
    }
    let mut role_base = Vec::with_capacity(model.n_agents);
    let n_roles = model.roles.len();
    for agent in 0..model.n_agents {
        role_base.push(obs_names.len());
        for r in &model.roles {
            obs_names.push(format!("st:role{agent}={}", r.name));
        }
        obs_names.push(format!("st:role{agent}=-"));
    }
    let _ = n_roles;

    let fb = Arc::new(feature_base);
    let rb = Arc::new(role_base);
    let n_agents = model.n_agents;
    let out_names = obs_names.clone();
    let n_roles = model.roles.len();

    let mut out = model.clone();
    out.obs_names = out_names;
    out.observation = ObservationKernel::FactoredFn(Arc::new(move |s2, _a| {
        let mut atoms: Obs = Vec::with_capacity(s2.values.len() + s2.roles.len());
        for (fi, &v) in s2.values.iter().enumerate() {
            atoms.push(ObsAtom((fb[fi] + v as usize) as u16));
        }
        for (agent, r) in s2.roles.iter().enumerate() {
            let off = match r {
                Some(role) => role.0 as usize,
                None => n_roles,
            };
            atoms.push(ObsAtom((rb[agent] + off) as u16));
        }
        atoms.sort_unstable();
        vec![vec![(atoms.clone(), 1.0)]; n_agents]
    }));
    out
}

// ---------------------------------------------------------------------------
// Shared helpers
// ---------------------------------------------------------------------------

fn check_legal(
    model: &RmtdpModel,
    s: &FactoredState,
    agent: usize,
    a: AgentAction,
) -> Result<(), EvalError> {
    let legal = legal_actions(model, s, agent)?;
    if legal.contains(&a) {
        Ok(())
    } else {
        Err(EvalError::IllegalAction {
            agent,
            action: model.display_action(&a),
            state: model.display_state(s),
        })
    }
}

fn display_history(model: &RmtdpModel, h: &[Obs]) -> String {
    let steps: Vec<String> = h
        .iter()
        .map(|o| {
            let atoms: Vec<&str> = o
                .iter()
                .map(|a| model.obs_names.get(a.0 as usize).map(String::as_str).unwrap_or("?"))
                .collect();
            format!("{{{}}}", atoms.join(" "))
        })
        .collect();
    format!("<{}>", steps.join(", "))
}

/// Convenience used across tests and commands: builds a constant policy that
/// plays no-op at every index of either kind.
pub fn all_noop_policy(n_agents: usize, kind: IndexKind) -> JointPolicy {
    JointPolicy::from_rule(kind, n_agents, |_, _| Some(AgentAction::Noop))
}

/// Feature helper shared by toy models in tests and the text format.
pub fn feature(name: &str, values: &[&str]) -> FeatureSpec {
    FeatureSpec::new(name, values.to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::belief::append_history_rule;
    use crate::model::{ExecId, RewardFn, RoleId, RoleSpec, TransitionKernel};
    use std::collections::BTreeMap;

    /// One agent walks a deterministic chain, reward 1 per step, noisy
    /// two-outcome observation each step.
    fn chain_model(horizon: usize, noisy_obs: bool) -> RmtdpModel {
        let features = vec![feature("pos", &["p0", "p1", "p2", "p3", "p4"])];
        let roles = vec![RoleSpec {
            name: "walker".into(),
            exec_actions: vec![ExecId(0)],
            take_actions: vec![],
        }];
        let start = FactoredState::new(vec![0], vec![Some(RoleId(0))]);
        let step = ExecId(0);
        let transition = TransitionKernel::Fn(Arc::new(move |s, a| {
            let mut next = s.clone();
            if a[0] == AgentAction::Exec(step) && s.values[0] < 4 {
                next.values[0] += 1;
            }
            vec![(next, 1.0)]
        }));
        let observation = ObservationKernel::FactoredFn(Arc::new(move |_s2, _a| {
            if noisy_obs {
                vec![vec![(vec![ObsAtom(0)], 0.5), (vec![ObsAtom(1)], 0.5)]]
            } else {
                vec![vec![(vec![], 1.0)]]
            }
        }));
        RmtdpModel {
            features,
            n_agents: 1,
            roles,
            exec_names: vec!["step".into()],
            obs_names: vec!["ping".into(), "pong".into()],
            unassigned_takes: vec![],
            transition,
            observation,
            reward: RewardFn::Fn(Arc::new(|_, _| 1.0)),
            horizon,
            start: vec![(start, 1.0)],
            clock_feature: None,
        }
    }

    fn always_step(kind: IndexKind) -> JointPolicy {
        JointPolicy::from_rule(kind, 1, |_, _| Some(AgentAction::Exec(ExecId(0))))
    }

    #[test]
    fn zero_horizon_evaluates_to_zero() {
        let m = chain_model(0, false);
        let r = evaluate_obs_history(&m, &always_step(IndexKind::ObservationHistory)).unwrap();
        assert_eq!(r.value, 0.0);
        assert_eq!(r.stats.node_expansions, 0);
        let rule = append_history_rule(m.obs_names.len());
        let rb = evaluate_belief(&m, &always_step(IndexKind::BeliefState), &rule).unwrap();
        assert_eq!(rb.value, 0.0);
    }

    #[test]
    fn deterministic_chain_sums_rewards() {
        let m = chain_model(3, false);
        let r = evaluate_obs_history(&m, &always_step(IndexKind::ObservationHistory)).unwrap();
        assert!((r.value - 3.0).abs() < 1e-12);
        let rule = append_history_rule(m.obs_names.len());
        let rb = evaluate_belief(&m, &always_step(IndexKind::BeliefState), &rule).unwrap();
        assert!((rb.value - 3.0).abs() < 1e-12);
    }

    #[test]
    fn append_rule_matches_history_expansions() {
        // Belief == history when the rule appends every observation, so the
        // expansion counters must coincide exactly.
        let m = chain_model(4, true);
        let rh = evaluate_obs_history(&m, &always_step(IndexKind::ObservationHistory)).unwrap();
        let rule = append_history_rule(m.obs_names.len());
        let rb = evaluate_belief(&m, &always_step(IndexKind::BeliefState), &rule).unwrap();
        assert!((rh.value - rb.value).abs() < 1e-9);
        assert_eq!(rh.stats.node_expansions, rb.stats.node_expansions);
        assert_eq!(rh.stats.distinct_indices, rb.stats.distinct_indices);
    }

    #[test]
    fn collapsing_rule_expands_less() {
        // A rule that ignores observations entirely collapses all histories.
        let m = chain_model(4, true);
        let rh = evaluate_obs_history(&m, &always_step(IndexKind::ObservationHistory)).unwrap();
        let blind = BeliefUpdateRule::new(BeliefState::empty(), |b, _| b.clone());
        let rb = evaluate_belief(&m, &always_step(IndexKind::BeliefState), &blind).unwrap();
        assert!((rh.value - rb.value).abs() < 1e-9);
        assert!(rb.stats.node_expansions < rh.stats.node_expansions);
        assert!(rb.stats.distinct_indices[0] <= rh.stats.distinct_indices[0]);
    }

    #[test]
    fn distinct_indices_bounded_by_expansions() {
        let m = chain_model(4, true);
        let rh = evaluate_obs_history(&m, &always_step(IndexKind::ObservationHistory)).unwrap();
        for &d in &rh.stats.distinct_indices {
            assert!(d as u64 <= rh.stats.node_expansions);
        }
    }

    #[test]
    fn monte_carlo_deterministic_model_has_zero_error() {
        let m = chain_model(3, false);
        let rule = append_history_rule(m.obs_names.len());
        let est = monte_carlo_estimate(&m, &always_step(IndexKind::BeliefState), &rule, 50, 7)
            .unwrap();
        assert_eq!(est.mean, 3.0);
        assert_eq!(est.std_error, 0.0);
    }

    #[test]
    fn monte_carlo_is_seed_reproducible() {
        let m = chain_model(4, true);
        let rule = append_history_rule(m.obs_names.len());
        let p = always_step(IndexKind::BeliefState);
        let a = monte_carlo_estimate(&m, &p, &rule, 1, 7).unwrap();
        let b = monte_carlo_estimate(&m, &p, &rule, 1, 7).unwrap();
        assert_eq!(a.mean, b.mean);
        // And independent of the parallel/sequential path.
        let c = monte_carlo_with(&m, &p, &rule, 64, 7, false).unwrap();
        let d = monte_carlo_with(&m, &p, &rule, 64, 7, true).unwrap();
        assert_eq!(c.mean, d.mean);
        assert_eq!(c.std_error, d.std_error);
    }

    #[test]
    fn fully_observable_is_idempotent_in_behavior() {
        let m = chain_model(3, true);
        let fo1 = make_fully_observable(&m);
        let fo2 = make_fully_observable(&fo1);
        let s = m.start[0].0.clone();
        let a = vec![AgentAction::Exec(ExecId(0))];
        let mut s2 = s.clone();
        s2.values[0] = 1;
        assert_eq!(fo1.joint_obs_for_test(&s2, &a), fo2.joint_obs_for_test(&s2, &a));
    }

    impl RmtdpModel {
        fn joint_obs_for_test(
            &self,
            s: &FactoredState,
            a: &JointAction,
        ) -> Vec<(Vec<Obs>, u64)> {
            self.observation
                .joint_row(s, a)
                .unwrap()
                .into_iter()
                .map(|(jo, p)| (jo, (p * 1e12) as u64))
                .collect()
        }
    }
}
