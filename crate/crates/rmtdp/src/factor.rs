//! Component factors and model composition.
//!
//! A [`ComponentFactor`] is a sub-model over a feature and role subset,
//! together with the interfaces the bound computation needs: a projection
//! onto the factor's retained features, an end condition that delimits the
//! factor's activity, a relevance filter for carried observations, and a
//! belief projection for carried belief states.
//!
//! [`build_rmtdp`] walks a plan hierarchy top-down and replaces a sub-plan
//! by its children exactly when they are sequentially constrained or
//! declared parallel-independent; otherwise the sub-plan becomes a leaf
//! backed by a supplied component model. [`compose_parallel`] and
//! [`compose_sequential`] assemble larger models from factor models:
//! parallel-independent kernels multiply and rewards add; sequential
//! composition delegates to the unique active factor, switching when the
//! predecessor's end condition holds.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

use thiserror::Error;

use crate::belief::BeliefState;
use crate::model::{
    AgentAction, FactoredState, FeatureSpec, JointAction, Obs, ObsAtom, ObservationKernel,
    RewardFn, RmtdpModel, RoleId, RoleSpec, TransitionKernel,
};

/// Feature name treated as a shared global clock: by convention it may
/// appear in every parallel factor and must agree at composition.
pub const SHARED_CLOCK: &str = "time";

type StateFn = dyn Fn(&FactoredState) -> FactoredState + Send + Sync;
type EndFn = dyn Fn(&FactoredState) -> bool + Send + Sync;
type BeliefFn = dyn Fn(usize, &BeliefState) -> BeliefState + Send + Sync;
type AtomFn = dyn Fn(ObsAtom) -> bool + Send + Sync;

/// A sub-model over a feature/role subset with start/end interfaces.
#[derive(Clone)]
pub struct ComponentFactor {
    pub name: String,
    pub model: Arc<RmtdpModel>,
    /// Failure-free variant of `model`, when the domain designates failure
    /// transitions; required by the NOFAIL bound.
    pub nofail_model: Option<Arc<RmtdpModel>>,
    /// Sequential predecessors by factor name.
    pub predecessors: Vec<String>,
    /// Projects a parent-space state onto this factor's retained features
    /// (dropped features take canonical defaults).
    pub project: Arc<StateFn>,
    /// Projects a carried belief state down to the propositions this
    /// factor's conditions depend on.
    pub project_belief: Arc<BeliefFn>,
    /// Holds when this factor's activity has ended.
    pub at_end: Option<Arc<EndFn>>,
    /// Whether an observation atom is relevant to this factor's conditions.
    pub obs_relevant: Arc<AtomFn>,
}

impl ComponentFactor {
    /// A leaf factor around a model: identity projection, no end condition,
    /// every observation relevant.
    pub fn leaf(name: impl Into<String>, model: Arc<RmtdpModel>) -> Self {
        ComponentFactor {
            name: name.into(),
            model,
            nofail_model: None,
            predecessors: Vec::new(),
            project: Arc::new(|s| s.clone()),
            project_belief: Arc::new(|_, b| b.clone()),
            at_end: None,
            obs_relevant: Arc::new(|_| true),
        }
    }
}

/// Tree of factors: leaves, parallel-independent groups, and sequentially
/// constrained chains. Every leaf appears exactly once.
#[derive(Clone)]
pub enum CompositionPlan {
    Leaf(ComponentFactor),
    Parallel(Vec<CompositionPlan>),
    Sequential(Vec<CompositionPlan>),
}

impl CompositionPlan {
    pub fn leaves(&self) -> Vec<&ComponentFactor> {
        let mut out = Vec::new();
        self.collect(&mut out);
        out
    }

    fn collect<'a>(&'a self, out: &mut Vec<&'a ComponentFactor>) {
        match self {
            CompositionPlan::Leaf(f) => out.push(f),
            CompositionPlan::Parallel(c) | CompositionPlan::Sequential(c) => {
                for x in c {
                    x.collect(out);
                }
            }
        }
    }

    /// Flattens into sequential stages of parallel factors, the shape the
    /// bound computation consumes.
    pub(crate) fn stages(&self) -> Result<Vec<Vec<&ComponentFactor>>, FactorError> {
        match self {
            CompositionPlan::Leaf(f) => Ok(vec![vec![f]]),
            CompositionPlan::Parallel(children) => {
                let mut stage = Vec::new();
                for c in children {
                    match c {
                        CompositionPlan::Leaf(f) => stage.push(f),
                        _ => return Err(FactorError::UnsupportedShape),
                    }
                }
                Ok(vec![stage])
            }
            CompositionPlan::Sequential(children) => {
                let mut out = Vec::new();
                for c in children {
                    out.extend(c.stages()?);
                }
                Ok(out)
            }
        }
    }
}

#[derive(Debug, Error)]
pub enum FactorError {
    #[error("factors share feature `{0}` (parallel independence violated)")]
    IndependenceViolation(String),
    #[error("shared feature `{0}` has differing value sets")]
    SharedFeatureMismatch(String),
    #[error("factor horizons differ")]
    HorizonMismatch,
    #[error("sequential factors must have the same agent count")]
    AgentCountMismatch,
    #[error("factor `{0}` needs an end condition for sequential composition")]
    MissingEndCondition(String),
    #[error("no component model supplied for plan `{0}`")]
    MissingComponentModel(String),
    #[error("factor start states disagree on feature `{0}`")]
    AmbiguousStart(String),
    #[error("composed start distribution is empty")]
    EmptyStart,
    #[error("composition plan shape not supported (parallel of non-leaves)")]
    UnsupportedShape,
}

// ---------------------------------------------------------------------------
// Projection operations
// ---------------------------------------------------------------------------

/// Restriction of a state to the factor's retained features (and its
/// agents' role entries).
pub fn project_state(s: &FactoredState, factor: &ComponentFactor) -> FactoredState {
    (factor.project)(s)
}

/// Projects a state set onto the factor's features and removes duplicates;
/// the output never exceeds the input in size.
pub fn remove_irrelevant_features(
    states: &BTreeSet<FactoredState>,
    factor: &ComponentFactor,
) -> BTreeSet<FactoredState> {
    states.iter().map(|s| project_state(s, factor)).collect()
}

/// Filters each history's observations down to the atoms relevant to the
/// factor's conditions, deduplicating the results.
pub fn remove_irrelevant_observations(
    histories: &BTreeSet<Vec<Obs>>,
    factor: &ComponentFactor,
) -> BTreeSet<Vec<Obs>> {
    histories
        .iter()
        .map(|h| {
            h.iter()
                .map(|o| {
                    o.iter()
                        .copied()
                        .filter(|&a| (factor.obs_relevant)(a))
                        .collect::<Obs>()
                })
                .collect::<Vec<Obs>>()
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Build from a plan hierarchy
// ---------------------------------------------------------------------------

use crate::top::{PlanNode, TopSpec};

/// Recursively replaces a sub-plan by its children iff they decompose into
/// sequential stages of declared-independent siblings; otherwise the
/// sub-plan becomes a leaf using the supplied component model.
pub fn build_rmtdp(
    top: &TopSpec,
    subplan: &PlanNode,
    components: &BTreeMap<String, ComponentFactor>,
) -> Result<CompositionPlan, FactorError> {
    let children = subplan.children();
    if children.is_empty() {
        return leaf_for(subplan, components);
    }

    // Kahn layering of the children by temporal constraints.
    let n = children.len();
    let idx: BTreeMap<&str, usize> =
        children.iter().enumerate().map(|(i, c)| (c.name.as_str(), i)).collect();
    let mut indeg = vec![0usize; n];
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (a, b) in &subplan.constraints {
        let (ai, bi) = (idx[a.as_str()], idx[b.as_str()]);
        adj[ai].push(bi);
        indeg[bi] += 1;
    }
    let mut remaining: BTreeSet<usize> = (0..n).collect();
    let mut stages: Vec<Vec<usize>> = Vec::new();
    while !remaining.is_empty() {
        let layer: Vec<usize> =
            remaining.iter().copied().filter(|&i| indeg[i] == 0).collect();
        if layer.is_empty() {
            // cycle; parser rejects these, but stay defensive
            return leaf_for(subplan, components);
        }
        for &i in &layer {
            remaining.remove(&i);
            for &j in &adj[i] {
                indeg[j] -= 1;
            }
        }
        stages.push(layer);
    }

    // A multi-member stage is decomposable only when its members are all
    // declared parallel-independent; the test is not automated.
    let declared: BTreeSet<&str> = subplan.independent.iter().map(String::as_str).collect();
    for stage in &stages {
        if stage.len() >= 2 && !stage.iter().all(|&i| declared.contains(children[i].name.as_str()))
        {
            return leaf_for(subplan, components);
        }
    }

    let mut stage_plans = Vec::new();
    for stage in &stages {
        if stage.len() == 1 {
            stage_plans.push(build_rmtdp(top, &children[stage[0]], components)?);
        } else {
            let mut members = Vec::new();
            for &i in stage {
                members.push(build_rmtdp(top, &children[i], components)?);
            }
            stage_plans.push(CompositionPlan::Parallel(members));
        }
    }
    Ok(if stage_plans.len() == 1 {
        stage_plans.pop().unwrap()
    } else {
        CompositionPlan::Sequential(stage_plans)
    })
}

fn leaf_for(
    subplan: &PlanNode,
    components: &BTreeMap<String, ComponentFactor>,
) -> Result<CompositionPlan, FactorError> {
    components
        .get(&subplan.name)
        .cloned()
        .map(CompositionPlan::Leaf)
        .ok_or_else(|| FactorError::MissingComponentModel(subplan.name.clone()))
}

// ---------------------------------------------------------------------------
// Schema merging shared by both composition forms
// ---------------------------------------------------------------------------

struct FactorMaps {
    feat_to_merged: Vec<usize>,
    role_to_merged: Vec<u16>,
    merged_to_role: HashMap<u16, u16>,
    merged_to_exec: HashMap<u16, u16>,
    atom_to_merged: Vec<u16>,
    agent_offset: usize,
    n_agents: usize,
}

struct Merged {
    features: Vec<FeatureSpec>,
    roles: Vec<RoleSpec>,
    exec_names: Vec<String>,
    obs_names: Vec<String>,
    unassigned_takes: Vec<RoleId>,
    maps: Vec<FactorMaps>,
    n_agents: usize,
}

fn merge_schemas(
    factors: &[&RmtdpModel],
    parallel_agents: bool,
    allow_shared: impl Fn(&str) -> bool,
) -> Result<Merged, FactorError> {
    let mut features: Vec<FeatureSpec> = Vec::new();
    let mut feat_idx: HashMap<String, usize> = HashMap::new();
    let mut feat_owner_count: HashMap<String, usize> = HashMap::new();
    let mut roles: Vec<RoleSpec> = Vec::new();
    let mut role_idx: HashMap<String, u16> = HashMap::new();
    let mut exec_names: Vec<String> = Vec::new();
    let mut exec_idx: HashMap<String, u16> = HashMap::new();
    let mut obs_names: Vec<String> = Vec::new();
    let mut obs_idx: HashMap<String, u16> = HashMap::new();
    let mut unassigned: BTreeSet<u16> = BTreeSet::new();
    let mut maps = Vec::new();
    let mut agent_offset = 0usize;

    for m in factors {
        let mut fm = FactorMaps {
            feat_to_merged: Vec::with_capacity(m.features.len()),
            role_to_merged: Vec::with_capacity(m.roles.len()),
            merged_to_role: HashMap::new(),
            merged_to_exec: HashMap::new(),
            atom_to_merged: Vec::with_capacity(m.obs_names.len()),
            agent_offset,
            n_agents: m.n_agents,
        };
        for f in &m.features {
            match feat_idx.get(&f.name) {
                Some(&i) => {
                    if features[i].values != f.values {
                        return Err(FactorError::SharedFeatureMismatch(f.name.clone()));
                    }
                    *feat_owner_count.entry(f.name.clone()).or_insert(1) += 1;
                    if !allow_shared(&f.name) {
                        return Err(FactorError::IndependenceViolation(f.name.clone()));
                    }
                    fm.feat_to_merged.push(i);
                }
                None => {
                    feat_idx.insert(f.name.clone(), features.len());
                    feat_owner_count.insert(f.name.clone(), 1);
                    fm.feat_to_merged.push(features.len());
                    features.push(f.clone());
                }
            }
        }
        // Exec names first so role specs can be remapped.
        let mut exec_map = Vec::with_capacity(m.exec_names.len());
        for e in &m.exec_names {
            let id = *exec_idx.entry(e.clone()).or_insert_with(|| {
                exec_names.push(e.clone());
                (exec_names.len() - 1) as u16
            });
            exec_map.push(id);
        }
        for (fi, &mi) in exec_map.iter().enumerate() {
            fm.merged_to_exec.insert(mi, fi as u16);
        }
        for (ri, r) in m.roles.iter().enumerate() {
            let merged_id = match role_idx.get(&r.name) {
                Some(&i) => {
                    // Same role across factors: union the action sets.
                    let spec = &mut roles[i as usize];
                    for e in &r.exec_actions {
                        let me = crate::model::ExecId(exec_map[e.0 as usize]);
                        if !spec.exec_actions.contains(&me) {
                            spec.exec_actions.push(me);
                        }
                    }
                    i
                }
                None => {
                    let id = roles.len() as u16;
                    role_idx.insert(r.name.clone(), id);
                    roles.push(RoleSpec {
                        name: r.name.clone(),
                        exec_actions: r
                            .exec_actions
                            .iter()
                            .map(|e| crate::model::ExecId(exec_map[e.0 as usize]))
                            .collect(),
                        take_actions: Vec::new(), // filled after all roles known
                    });
                    id
                }
            };
            fm.role_to_merged.push(merged_id);
            fm.merged_to_role.insert(merged_id, ri as u16);
        }
        for a in &m.obs_names {
            let id = *obs_idx.entry(a.clone()).or_insert_with(|| {
                obs_names.push(a.clone());
                (obs_names.len() - 1) as u16
            });
            fm.atom_to_merged.push(id);
        }
        maps.push(fm);
        if parallel_agents {
            agent_offset += m.n_agents;
        }
    }

    // Second pass: take-action sets and unassigned takes, now that every
    // role has a merged id.
    for (k, m) in factors.iter().enumerate() {
        for (ri, r) in m.roles.iter().enumerate() {
            let merged_id = maps[k].role_to_merged[ri] as usize;
            for t in &r.take_actions {
                let mt = RoleId(maps[k].role_to_merged[t.0 as usize]);
                if !roles[merged_id].take_actions.contains(&mt) {
                    roles[merged_id].take_actions.push(mt);
                }
            }
        }
        for t in &m.unassigned_takes {
            unassigned.insert(maps[k].role_to_merged[t.0 as usize]);
        }
    }

    let n_agents = if parallel_agents {
        agent_offset
    } else {
        factors.first().map(|m| m.n_agents).unwrap_or(0)
    };
    Ok(Merged {
        features,
        roles,
        exec_names,
        obs_names,
        unassigned_takes: unassigned.into_iter().map(RoleId).collect(),
        maps,
        n_agents,
    })
}

impl FactorMaps {
    fn project_state(&self, s: &FactoredState) -> FactoredState {
        FactoredState {
            values: self.feat_to_merged.iter().map(|&i| s.values[i]).collect(),
            roles: s.roles[self.agent_offset..self.agent_offset + self.n_agents]
                .iter()
                .map(|r| r.and_then(|id| self.merged_to_role.get(&id.0).map(|&f| RoleId(f))))
                .collect(),
        }
    }

    fn embed_state(&self, base: &FactoredState, local: &FactoredState) -> FactoredState {
        let mut out = base.clone();
        for (fi, &mi) in self.feat_to_merged.iter().enumerate() {
            out.values[mi] = local.values[fi];
        }
        for (ai, r) in local.roles.iter().enumerate() {
            out.roles[self.agent_offset + ai] =
                r.map(|id| RoleId(self.role_to_merged[id.0 as usize]));
        }
        out
    }

    /// Merged-space action for one of this factor's agents, translated into
    /// the factor's ids. Actions targeting roles or execs the factor does
    /// not know reduce to no-ops (a role-taking action into a foreign
    /// factor simply fails).
    fn project_action(&self, a: &AgentAction) -> AgentAction {
        match a {
            AgentAction::Noop => AgentAction::Noop,
            AgentAction::Take(r) => match self.merged_to_role.get(&r.0) {
                Some(&f) => AgentAction::Take(RoleId(f)),
                None => AgentAction::Noop,
            },
            AgentAction::Exec(e) => match self.merged_to_exec.get(&e.0) {
                Some(&f) => AgentAction::Exec(crate::model::ExecId(f)),
                None => AgentAction::Noop,
            },
        }
    }

    fn project_joint(&self, a: &JointAction) -> JointAction {
        a[self.agent_offset..self.agent_offset + self.n_agents]
            .iter()
            .map(|x| self.project_action(x))
            .collect()
    }

    fn remap_obs(&self, o: &Obs) -> Obs {
        let mut out: Obs = o.iter().map(|a| ObsAtom(self.atom_to_merged[a.0 as usize])).collect();
        out.sort_unstable();
        out
    }
}

// ---------------------------------------------------------------------------
// Parallel composition
// ---------------------------------------------------------------------------

/// Composes parallel-independent factors: joint features are the union
/// (disjoint except the shared clock), transition and observation
/// probabilities are products of the projected entries, rewards are sums.
pub fn compose_parallel(factors: &[ComponentFactor]) -> Result<RmtdpModel, FactorError> {
    assert!(!factors.is_empty());
    let models: Vec<&RmtdpModel> = factors.iter().map(|f| f.model.as_ref()).collect();
    let horizon = models[0].horizon;
    if models.iter().any(|m| m.horizon != horizon) {
        return Err(FactorError::HorizonMismatch);
    }
    let merged = merge_schemas(&models, true, |name| name == SHARED_CLOCK)?;
    let maps = Arc::new(merged.maps);
    let models: Vec<Arc<RmtdpModel>> = factors.iter().map(|f| f.model.clone()).collect();
    let models = Arc::new(models);

    // Start distribution: product over factors, shared clock must agree.
    let clock = merged.features.iter().position(|f| f.name == SHARED_CLOCK);
    let mut start: Vec<(FactoredState, f64)> = vec![(
        FactoredState::new(vec![0; merged.features.len()], vec![None; merged.n_agents]),
        1.0,
    )];
    for (k, m) in models.iter().enumerate() {
        let mut next = Vec::new();
        for (base, p) in &start {
            for (fs, fp) in &m.start {
                let candidate = maps[k].embed_state(base, fs);
                if k > 0 {
                    if let Some(ci) = clock {
                        if candidate.values[ci] != base.values[ci] {
                            continue;
                        }
                    }
                }
                next.push((candidate, p * fp));
            }
        }
        start = next;
    }
    if start.is_empty() {
        return Err(FactorError::EmptyStart);
    }

    let tmaps = maps.clone();
    let tmodels = models.clone();
    let tclock = clock;
    let transition = TransitionKernel::Fn(Arc::new(move |s, a| {
        let mut acc: Vec<(FactoredState, f64)> = vec![(s.clone(), 1.0)];
        for (k, m) in tmodels.iter().enumerate() {
            let local_s = tmaps[k].project_state(s);
            let local_a = tmaps[k].project_joint(a);
            let rows = m
                .transition
                .successors(&local_s, &local_a)
                .unwrap_or_default();
            let mut next = Vec::with_capacity(acc.len() * rows.len().max(1));
            for (base, p) in &acc {
                for (s2, q) in &rows {
                    let candidate = tmaps[k].embed_state(base, s2);
                    if k > 0 {
                        if let Some(ci) = tclock {
                            if candidate.values[ci] != base.values[ci] {
                                continue; // factors must agree on the clock
                            }
                        }
                    }
                    next.push((candidate, p * q));
                }
            }
            acc = next;
        }
        acc
    }));

    let omaps = maps.clone();
    let omodels = models.clone();
    let observation = ObservationKernel::FactoredFn(Arc::new(move |s2, a| {
        let mut rows: Vec<Vec<(Obs, f64)>> = Vec::with_capacity(merged.n_agents);
        for (k, m) in omodels.iter().enumerate() {
            let local_s = omaps[k].project_state(s2);
            let local_a = omaps[k].project_joint(a);
            if let Some(fr) = m.observation.factored_row(&local_s, &local_a) {
                for agent_row in fr {
                    rows.push(
                        agent_row
                            .iter()
                            .map(|(o, p)| (omaps[k].remap_obs(o), *p))
                            .collect(),
                    );
                }
            } else {
                // Joint-form factor: marginalize per agent (independence
                // across factors still holds; within the factor the joint
                // row is expanded).
                let jr = m.observation.joint_row(&local_s, &local_a).unwrap_or_default();
                for agent in 0..m.n_agents {
                    let mut grouped: BTreeMap<Obs, f64> = BTreeMap::new();
                    for (jo, p) in &jr {
                        *grouped.entry(omaps[k].remap_obs(&jo[agent])).or_insert(0.0) += p;
                    }
                    rows.push(grouped.into_iter().collect());
                }
            }
        }
        rows
    }));

    let rmaps = maps.clone();
    let rmodels = models.clone();
    let reward = RewardFn::Fn(Arc::new(move |s, a| {
        rmodels
            .iter()
            .enumerate()
            .map(|(k, m)| {
                m.reward
                    .reward(&rmaps[k].project_state(s), &rmaps[k].project_joint(a))
            })
            .sum()
    }));

    Ok(RmtdpModel {
        features: merged.features,
        n_agents: merged.n_agents,
        roles: merged.roles,
        exec_names: merged.exec_names,
        obs_names: merged.obs_names,
        unassigned_takes: merged.unassigned_takes,
        transition,
        observation,
        reward,
        horizon,
        start,
        clock_feature: clock,
    })
}

// ---------------------------------------------------------------------------
// Sequential composition
// ---------------------------------------------------------------------------

/// Composes sequentially constrained factors over the same team: exactly
/// one factor is active at a time, transition/observation/reward delegate
/// to it, and activity switches when the predecessor's end condition holds
/// on the projected state.
pub fn compose_sequential(factors: &[ComponentFactor]) -> Result<RmtdpModel, FactorError> {
    assert!(!factors.is_empty());
    let models: Vec<&RmtdpModel> = factors.iter().map(|f| f.model.as_ref()).collect();
    let horizon = models[0].horizon;
    if models.iter().any(|m| m.horizon != horizon) {
        return Err(FactorError::HorizonMismatch);
    }
    if models.iter().any(|m| m.n_agents != models[0].n_agents) {
        return Err(FactorError::AgentCountMismatch);
    }
    for f in &factors[..factors.len() - 1] {
        if f.at_end.is_none() {
            return Err(FactorError::MissingEndCondition(f.name.clone()));
        }
    }
    let merged = merge_schemas(&models, false, |_| true)?;
    let maps = Arc::new(merged.maps);
    let n_agents = merged.n_agents;
    let arcs: Vec<Arc<RmtdpModel>> = factors.iter().map(|f| f.model.clone()).collect();
    let arcs = Arc::new(arcs);
    let ends: Vec<Option<Arc<EndFn>>> = factors.iter().map(|f| f.at_end.clone()).collect();
    let ends = Arc::new(ends);

    // Composed start: the first factor's start distribution, with features
    // exclusive to later factors initialized from their (unambiguous) start
    // values.
    let mut defaults: Vec<Option<u16>> = vec![None; merged.features.len()];
    for (k, m) in models.iter().enumerate() {
        for (fi, &mi) in maps[k].feat_to_merged.iter().enumerate() {
            let vals: BTreeSet<u16> = m.start.iter().map(|(s, _)| s.values[fi]).collect();
            if vals.len() > 1 {
                if k > 0 && defaults[mi].is_none() {
                    return Err(FactorError::AmbiguousStart(merged.features[mi].name.clone()));
                }
                continue;
            }
            defaults[mi].get_or_insert(*vals.iter().next().unwrap());
        }
    }
    let mut start = Vec::new();
    for (s0, p) in &models[0].start {
        let mut values = vec![0u16; merged.features.len()];
        for (mi, d) in defaults.iter().enumerate() {
            values[mi] = d.unwrap_or(0);
        }
        for (fi, &mi) in maps[0].feat_to_merged.iter().enumerate() {
            values[mi] = s0.values[fi];
        }
        let roles = s0
            .roles
            .iter()
            .map(|r| r.map(|id| RoleId(maps[0].role_to_merged[id.0 as usize])))
            .collect();
        start.push((FactoredState::new(values, roles), *p));
    }
    if start.is_empty() {
        return Err(FactorError::EmptyStart);
    }

    let active = {
        let maps = maps.clone();
        let ends = ends.clone();
        let n = factors.len();
        Arc::new(move |s: &FactoredState| -> Option<usize> {
            for k in 0..n {
                match &ends[k] {
                    Some(end) => {
                        if !end(&maps[k].project_state(s)) {
                            return Some(k);
                        }
                    }
                    None => return Some(k), // last factor never ends
                }
            }
            None
        })
    };

    let tmaps = maps.clone();
    let tarcs = arcs.clone();
    let tactive = active.clone();
    let transition = TransitionKernel::Fn(Arc::new(move |s, a| match tactive(s) {
        None => vec![(s.clone(), 1.0)],
        Some(k) => {
            let local_s = tmaps[k].project_state(s);
            let local_a = tmaps[k].project_joint(a);
            tarcs[k]
                .transition
                .successors(&local_s, &local_a)
                .unwrap_or_default()
                .into_iter()
                .map(|(s2, p)| (tmaps[k].embed_state(s, &s2), p))
                .collect()
        }
    }));

    let omaps = maps.clone();
    let oarcs = arcs.clone();
    let oactive = active.clone();
    let observation = ObservationKernel::FactoredFn(Arc::new(move |s2, a| match oactive(s2) {
        None => vec![vec![(Vec::new(), 1.0)]; n_agents],
        Some(k) => {
            let local_s = omaps[k].project_state(s2);
            let local_a = omaps[k].project_joint(a);
            if let Some(fr) = oarcs[k].observation.factored_row(&local_s, &local_a) {
                fr.iter()
                    .map(|row| row.iter().map(|(o, p)| (omaps[k].remap_obs(o), *p)).collect())
                    .collect()
            } else {
                let jr = oarcs[k]
                    .observation
                    .joint_row(&local_s, &local_a)
                    .unwrap_or_default();
                (0..n_agents)
                    .map(|agent| {
                        let mut grouped: BTreeMap<Obs, f64> = BTreeMap::new();
                        for (jo, p) in &jr {
                            *grouped.entry(omaps[k].remap_obs(&jo[agent])).or_insert(0.0) += p;
                        }
                        grouped.into_iter().collect()
                    })
                    .collect()
            }
        }
    }));

    let rmaps = maps.clone();
    let rarcs = arcs.clone();
    let ractive = active.clone();
    let reward = RewardFn::Fn(Arc::new(move |s, a| match ractive(s) {
        None => 0.0,
        Some(k) => rarcs[k]
            .reward
            .reward(&rmaps[k].project_state(s), &rmaps[k].project_joint(a)),
    }));

    let clock = merged.features.iter().position(|f| f.name == SHARED_CLOCK);
    Ok(RmtdpModel {
        features: merged.features,
        n_agents,
        roles: merged.roles,
        exec_names: merged.exec_names,
        obs_names: merged.obs_names,
        unassigned_takes: merged.unassigned_takes,
        transition,
        observation,
        reward,
        horizon,
        start,
        clock_feature: clock,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::feature;
    use crate::model::ExecId;

    /// Single-agent factor: a counter feature that advances with `step`
    /// with probability `p`, reward `r` per successful advance attempt.
    fn counter_factor(name: &str, feat: &str, p: f64, r: f64, horizon: usize) -> ComponentFactor {
        let features = vec![feature(feat, &["0", "1", "2", "3"])];
        let roles = vec![RoleSpec {
            name: format!("{name}_worker"),
            exec_actions: vec![ExecId(0)],
            take_actions: vec![],
        }];
        let start = FactoredState::new(vec![0], vec![Some(RoleId(0))]);
        let transition = TransitionKernel::Fn(Arc::new(move |s, a| {
            if a[0] == AgentAction::Exec(ExecId(0)) && s.values[0] < 3 {
                let mut adv = s.clone();
                adv.values[0] += 1;
                if p >= 1.0 {
                    vec![(adv, 1.0)]
                } else {
                    vec![(adv, p), (s.clone(), 1.0 - p)]
                }
            } else {
                vec![(s.clone(), 1.0)]
            }
        }));
        let observation = ObservationKernel::FactoredFn(Arc::new(|_s, _a| {
            vec![vec![(Vec::new(), 1.0)]]
        }));
        let reward = RewardFn::Fn(Arc::new(move |s, a| {
            if a[0] == AgentAction::Exec(ExecId(0)) && s.values[0] < 3 {
                r
            } else {
                0.0
            }
        }));
        ComponentFactor::leaf(
            name,
            Arc::new(RmtdpModel {
                features,
                n_agents: 1,
                roles,
                exec_names: vec!["step".into()],
                obs_names: vec![],
                unassigned_takes: vec![],
                transition,
                observation,
                reward,
                horizon,
                start: vec![(start, 1.0)],
                clock_feature: None,
            }),
        )
    }

    #[test]
    fn parallel_probabilities_multiply_and_rewards_add() {
        let a = counter_factor("a", "fa", 0.5, 3.0, 3);
        let b = counter_factor("b", "fb", 0.4, 4.0, 3);
        let m = compose_parallel(&[a, b]).unwrap();
        assert_eq!(m.n_agents, 2);
        let s = m.start[0].0.clone();
        let act = vec![AgentAction::Exec(ExecId(0)), AgentAction::Exec(ExecId(0))];
        let rows = m.transition.successors(&s, &act).unwrap();
        // Both advance: 0.5 * 0.4 = 0.2.
        let both = rows
            .iter()
            .find(|(s2, _)| s2.values == vec![1, 1])
            .expect("both-advance successor");
        assert!((both.1 - 0.2).abs() < 1e-12);
        let total: f64 = rows.iter().map(|(_, p)| p).sum();
        assert!((total - 1.0).abs() < 1e-12);
        // Rewards 3 and 4 sum to 7.
        assert!((m.reward.reward(&s, &act) - 7.0).abs() < 1e-12);
    }

    #[test]
    fn parallel_rejects_overlapping_features() {
        let a = counter_factor("a", "shared", 0.5, 1.0, 3);
        let b = counter_factor("b", "shared", 0.4, 1.0, 3);
        assert!(matches!(
            compose_parallel(&[a, b]),
            Err(FactorError::IndependenceViolation(f)) if f == "shared"
        ));
    }

    #[test]
    fn sequential_single_factor_is_identity_in_behavior() {
        let a = counter_factor("a", "fa", 0.5, 3.0, 3);
        let m = compose_sequential(std::slice::from_ref(&a)).unwrap();
        let s = m.start[0].0.clone();
        let act = vec![AgentAction::Exec(ExecId(0))];
        let direct = a.model.transition.successors(&s, &act).unwrap();
        let composed = m.transition.successors(&s, &act).unwrap();
        assert_eq!(direct.len(), composed.len());
        for ((s1, p1), (s2, p2)) in direct.iter().zip(composed.iter()) {
            assert_eq!(s1, s2);
            assert!((p1 - p2).abs() < 1e-12);
        }
    }

    #[test]
    fn sequential_requires_end_conditions() {
        let a = counter_factor("a", "fa", 0.5, 1.0, 3);
        let b = counter_factor("b", "fb", 0.5, 1.0, 3);
        assert!(matches!(
            compose_sequential(&[a, b]),
            Err(FactorError::MissingEndCondition(n)) if n == "a"
        ));
    }

    #[test]
    fn sequential_delegates_to_active_factor_only() {
        let mut a = counter_factor("a", "fa", 1.0, 1.0, 6);
        a.at_end = Some(Arc::new(|s: &FactoredState| s.values[0] >= 2));
        let b = counter_factor("b", "fb", 1.0, 2.0, 6);
        let m = compose_sequential(&[a, b]).unwrap();
        // Before fa reaches 2, only fa moves.
        let s = m.start[0].0.clone();
        let act = vec![AgentAction::Exec(ExecId(0))];
        let rows = m.transition.successors(&s, &act).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].0.values, vec![1, 0]);
        // Once fa = 2, the second factor's kernel takes over.
        let boundary = FactoredState::new(vec![2, 0], s.roles.clone());
        let rows = m.transition.successors(&boundary, &act).unwrap();
        assert_eq!(rows[0].0.values, vec![2, 1]);
        assert!((m.reward.reward(&boundary, &act) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn projection_dedup_shrinks_sets() {
        let a = counter_factor("a", "fa", 0.5, 1.0, 3);
        let full = counter_factor("ab", "fa", 0.5, 1.0, 3);
        // Factor keeping only fa out of a two-feature space.
        let project = Arc::new(|s: &FactoredState| {
            FactoredState::new(vec![s.values[0]], s.roles.clone())
        });
        let f = ComponentFactor { project, ..a };
        let mut states = BTreeSet::new();
        for extra in 0..3u16 {
            states.insert(FactoredState::new(
                vec![1, extra],
                vec![Some(RoleId(0))],
            ));
        }
        let reduced = remove_irrelevant_features(&states, &f);
        assert_eq!(reduced.len(), 1);
        // Identity projection keeps the set intact.
        let same: BTreeSet<FactoredState> = states
            .iter()
            .map(|s| project_state(s, &full))
            .collect();
        assert_eq!(same.len(), states.len());
    }

    #[test]
    fn observation_reduction_filters_and_dedups() {
        let mut a = counter_factor("a", "fa", 0.5, 1.0, 3);
        a.obs_relevant = Arc::new(|atom: ObsAtom| atom.0 == 0);
        let mut histories: BTreeSet<Vec<Obs>> = BTreeSet::new();
        histories.insert(vec![vec![ObsAtom(0), ObsAtom(1)]]);
        histories.insert(vec![vec![ObsAtom(0), ObsAtom(2)]]);
        histories.insert(vec![vec![ObsAtom(3)]]);
        let reduced = remove_irrelevant_observations(&histories, &a);
        assert_eq!(reduced.len(), 2); // {[atom0]} and {[]}
        assert!(reduced.iter().all(|h| h[0].iter().all(|x| x.0 == 0)));
    }
}
