//! The role-allocation space, component-decomposed admissible upper bounds,
//! and branch-and-bound search.
//!
//! The allocation space mirrors the organization hierarchy: each node fixes
//! the agent counts at one level, leaves are complete (possibly
//! message-conditioned) allocations, and the parents of the leaves receive
//! upper bounds (MaxEstimates). The bound for a parent evaluates every
//! leaf-level completion component by component — carrying projected end
//! states and reduced belief interfaces from each component into its
//! successors — and sums the per-component maxima. NOFAIL is the same
//! computation on the failure-free model variants. Branch-and-bound then
//! expands parents in decreasing bound order and prunes any parent whose
//! bound falls strictly below the best leaf found.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::belief::{BeliefState, BeliefUpdateRule};
use crate::eval::{
    evaluate_belief, evaluate_belief_set, evaluate_obs_history, EndInterface, EvalError, EvalStats,
};
use crate::factor::{CompositionPlan, ComponentFactor, FactorError};
use crate::model::{FactoredState, RmtdpModel};
use crate::par::map_indexed;
use crate::policy::JointPolicy;
use crate::top::{complete_policy, IncompletePolicy, OrgNode, TopError};

// ---------------------------------------------------------------------------
// Counting and space construction
// ---------------------------------------------------------------------------

/// Number of ways to allocate `agents` homogeneous agents to `role_types`
/// role types: the rising factorial [m]^n / n!, i.e. C(n + m - 1, m - 1).
pub fn count_allocations(role_types: usize, agents: usize) -> u128 {
    assert!(role_types >= 1, "count_allocations requires m >= 1");
    binomial((agents + role_types - 1) as u128, (role_types - 1) as u128)
}

fn binomial(n: u128, k: u128) -> u128 {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) / (i + 1);
    }
    acc
}

/// A complete role allocation: counts per unconditioned leaf team in
/// organization document order, plus per-message counts for conditioned
/// teams. The derived ordering is the lexicographic tie-break used by the
/// search.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AllocationLeaf {
    pub counts: Vec<(String, usize)>,
    pub branches: BTreeMap<i64, Vec<(String, usize)>>,
}

impl AllocationLeaf {
    pub fn count_for(&self, team: &str) -> usize {
        self.counts
            .iter()
            .find(|(t, _)| t == team)
            .map(|(_, c)| *c)
            .unwrap_or(0)
    }

    /// Compact rendering like `1,0,0,5` or `1,1;c=1:2,0;c=2:1,1`.
    pub fn render(&self) -> String {
        let mut s = self
            .counts
            .iter()
            .map(|(_, c)| c.to_string())
            .collect::<Vec<_>>()
            .join(",");
        for (v, counts) in &self.branches {
            s.push_str(&format!(
                ";c={v}:{}",
                counts.iter().map(|(_, c)| c.to_string()).collect::<Vec<_>>().join(",")
            ));
        }
        s
    }
}

/// One node of the role allocation space: the allocation of agents to
/// organization nodes fixed so far, condition branches for conditioned
/// levels, and the children refining it.
#[derive(Clone, Debug)]
pub struct AllocationNode {
    pub level: usize,
    pub counts: Vec<(String, usize)>,
    pub branches: BTreeMap<i64, Vec<(String, usize)>>,
    pub children: Vec<AllocationNode>,
    /// Present exactly on complete (leaf) nodes.
    pub leaf: Option<AllocationLeaf>,
}

impl AllocationNode {
    pub fn leaves(&self) -> Vec<&AllocationLeaf> {
        let mut out = Vec::new();
        self.walk_leaves(&mut out);
        out
    }

    fn walk_leaves<'a>(&'a self, out: &mut Vec<&'a AllocationLeaf>) {
        if let Some(l) = &self.leaf {
            out.push(l);
        }
        for c in &self.children {
            c.walk_leaves(out);
        }
    }

    /// Nodes whose children are leaves — the level branch-and-bound bounds.
    pub fn parents(&self) -> Vec<&AllocationNode> {
        let mut out = Vec::new();
        self.walk_parents(&mut out);
        out
    }

    fn walk_parents<'a>(&'a self, out: &mut Vec<&'a AllocationNode>) {
        if !self.children.is_empty() && self.children.iter().all(|c| c.leaf.is_some()) {
            out.push(self);
            return;
        }
        for c in &self.children {
            c.walk_parents(out);
        }
    }

    pub fn render_counts(&self) -> String {
        self.counts
            .iter()
            .map(|(t, c)| format!("{t}={c}"))
            .collect::<Vec<_>>()
            .join(",")
    }
}

/// Compositions of `total` into `k` parts, ascending lexicographic order.
fn compositions(total: usize, k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return if total == 0 { vec![vec![]] } else { vec![] };
    }
    let mut out = Vec::new();
    let mut cur = vec![0usize; k];
    fn rec(total: usize, i: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if i == cur.len() - 1 {
            cur[i] = total;
            out.push(cur.clone());
            return;
        }
        for v in 0..=total {
            cur[i] = v;
            rec(total - v, i + 1, cur, out);
        }
    }
    rec(total, 0, &mut cur, &mut out);
    out
}

enum Level {
    /// Unconditioned split groups at one organization depth: for each group
    /// the named node's count is split among its children.
    Plain(Vec<SplitGroup>),
    /// A message-conditioned node: its count is split among its children
    /// independently per message value.
    Conditioned { group: SplitGroup, values: Vec<i64> },
}

struct SplitGroup {
    node: String,
    children: Vec<(String, Option<usize>)>, // (name, fixed pool)
}

/// Builds the hierarchical role-allocation space for an organization: levels
/// mirror the hierarchy depth, message-conditioned nodes branch per message
/// value at the final levels, and every leaf is a complete allocation.
pub fn build_allocation_space(
    org: &OrgNode,
    agents: usize,
    messages: &BTreeMap<String, Vec<i64>>,
) -> AllocationNode {
    // Fixed counts: the root, and every pooled node.
    let mut fixed: BTreeMap<String, usize> = BTreeMap::new();
    fn record_pools(n: &OrgNode, fixed: &mut BTreeMap<String, usize>) {
        if let Some(p) = n.pool {
            fixed.insert(n.name.clone(), p);
        }
        for c in &n.children {
            record_pools(c, fixed);
        }
    }
    record_pools(org, &mut fixed);
    fixed.entry(org.name.clone()).or_insert(agents);

    // Level plan: unconditioned internal nodes by depth, conditioned nodes
    // afterwards in document order.
    let mut plain: BTreeMap<usize, Vec<SplitGroup>> = BTreeMap::new();
    let mut conditioned: Vec<(SplitGroup, Vec<i64>)> = Vec::new();
    fn walk(
        n: &OrgNode,
        depth: usize,
        plain: &mut BTreeMap<usize, Vec<SplitGroup>>,
        conditioned: &mut Vec<(SplitGroup, Vec<i64>)>,
        messages: &BTreeMap<String, Vec<i64>>,
    ) {
        if n.children.is_empty() {
            return;
        }
        let group = SplitGroup {
            node: n.name.clone(),
            children: n.children.iter().map(|c| (c.name.clone(), c.pool)).collect(),
        };
        match &n.condition_message {
            Some(tag) => {
                let values = messages.get(tag).cloned().unwrap_or_default();
                conditioned.push((group, values));
            }
            None => {
                // A split is only needed when some child count is open.
                if n.children.iter().any(|c| c.pool.is_none()) {
                    plain.entry(depth).or_default().push(group);
                }
            }
        }
        for c in &n.children {
            walk(c, depth + 1, plain, conditioned, messages);
        }
    }
    walk(org, 0, &mut plain, &mut conditioned, messages);

    let mut levels: Vec<Level> = plain.into_values().map(Level::Plain).collect();
    for (group, values) in conditioned {
        levels.push(Level::Conditioned { group, values });
    }

    // Ordered unconditioned leaf teams for finished allocations.
    let cond_roots: BTreeSet<String> = collect_conditioned(org);
    let leaf_teams: Vec<String> = org
        .leaf_teams()
        .iter()
        .filter(|t| !under_conditioned(org, &t.name, &cond_roots))
        .map(|t| t.name.clone())
        .collect();

    let root = AllocationNode {
        level: 0,
        counts: fixed.iter().map(|(k, v)| (k.clone(), *v)).collect(),
        branches: BTreeMap::new(),
        children: Vec::new(),
        leaf: None,
    };
    expand(root, &levels, 0, &leaf_teams)
}

fn collect_conditioned(org: &OrgNode) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    fn walk(n: &OrgNode, out: &mut BTreeSet<String>) {
        if n.condition_message.is_some() {
            out.insert(n.name.clone());
        }
        for c in &n.children {
            walk(c, out);
        }
    }
    walk(org, &mut out);
    out
}

fn under_conditioned(org: &OrgNode, team: &str, cond: &BTreeSet<String>) -> bool {
    fn path<'a>(n: &'a OrgNode, target: &str, acc: &mut Vec<&'a str>) -> bool {
        acc.push(&n.name);
        if n.name == target {
            return true;
        }
        for c in &n.children {
            if path(c, target, acc) {
                return true;
            }
        }
        acc.pop();
        false
    }
    let mut acc = Vec::new();
    if path(org, team, &mut acc) {
        acc.iter().any(|name| cond.contains(*name))
    } else {
        false
    }
}

fn expand(node: AllocationNode, levels: &[Level], li: usize, leaf_teams: &[String]) -> AllocationNode {
    if li >= levels.len() {
        let counts_map: BTreeMap<&str, usize> =
            node.counts.iter().map(|(k, v)| (k.as_str(), *v)).collect();
        let leaf = AllocationLeaf {
            counts: leaf_teams
                .iter()
                .map(|t| (t.clone(), counts_map.get(t.as_str()).copied().unwrap_or(0)))
                .collect(),
            branches: node.branches.clone(),
        };
        return AllocationNode { leaf: Some(leaf), ..node };
    }
    let mut node = node;
    let combos: Vec<(Vec<(String, usize)>, BTreeMap<i64, Vec<(String, usize)>>)> =
        match &levels[li] {
            Level::Plain(groups) => {
                let counts_map: BTreeMap<&str, usize> =
                    node.counts.iter().map(|(k, v)| (k.as_str(), *v)).collect();
                let mut acc: Vec<Vec<(String, usize)>> = vec![Vec::new()];
                for g in groups {
                    let assignments = group_assignments(g, &counts_map);
                    let mut next = Vec::with_capacity(acc.len() * assignments.len());
                    for prefix in &acc {
                        for a in &assignments {
                            let mut v = prefix.clone();
                            v.extend(a.iter().cloned());
                            next.push(v);
                        }
                    }
                    acc = next;
                }
                acc.into_iter().map(|c| (c, BTreeMap::new())).collect()
            }
            Level::Conditioned { group, values } => {
                let counts_map: BTreeMap<&str, usize> =
                    node.counts.iter().map(|(k, v)| (k.as_str(), *v)).collect();
                let assignments = group_assignments(group, &counts_map);
                let mut acc: Vec<BTreeMap<i64, Vec<(String, usize)>>> = vec![BTreeMap::new()];
                for &v in values {
                    let mut next = Vec::with_capacity(acc.len() * assignments.len());
                    for prefix in &acc {
                        for a in &assignments {
                            let mut b = prefix.clone();
                            b.insert(v, a.clone());
                            next.push(b);
                        }
                    }
                    acc = next;
                }
                acc.into_iter().map(|b| (Vec::new(), b)).collect()
            }
        };

    for (extra_counts, extra_branches) in combos {
        let mut counts = node.counts.clone();
        counts.extend(extra_counts);
        let mut branches = node.branches.clone();
        branches.extend(extra_branches);
        let child = AllocationNode {
            level: node.level + 1,
            counts,
            branches,
            children: Vec::new(),
            leaf: None,
        };
        node.children.push(expand(child, levels, li + 1, leaf_teams));
    }
    node
}

fn group_assignments(
    g: &SplitGroup,
    counts: &BTreeMap<&str, usize>,
) -> Vec<Vec<(String, usize)>> {
    let total = counts.get(g.node.as_str()).copied().unwrap_or(0);
    let pooled: usize = g.children.iter().filter_map(|(_, p)| *p).sum();
    let open: Vec<&String> =
        g.children.iter().filter(|(_, p)| p.is_none()).map(|(n, _)| n).collect();
    if pooled > total {
        return Vec::new();
    }
    compositions(total - pooled, open.len())
        .into_iter()
        .map(|comp| {
            let mut it = comp.into_iter();
            g.children
                .iter()
                .map(|(name, pool)| match pool {
                    Some(p) => (name.clone(), *p),
                    None => (name.clone(), it.next().unwrap()),
                })
                .collect()
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Bounds
// ---------------------------------------------------------------------------

/// Which upper bound to compute for parents.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoundKind {
    MaxExp,
    NoFail,
}

/// Upper bound for one parent: the per-component maxima and their sum.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BoundRecord {
    pub parent: String,
    pub kind: BoundKind,
    pub per_component: Vec<(String, f64)>,
    pub max_estimate: f64,
}

/// Search counters; wall time is reported but never asserted.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct SearchStats {
    pub leaf_evaluations: u64,
    pub parent_bound_evaluations: u64,
    pub pruned_parents: u64,
    pub wall_seconds: f64,
}

#[derive(Debug, Error)]
pub enum SearchError {
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Top(#[from] TopError),
    #[error(transparent)]
    Factor(#[from] FactorError),
    #[error("no composition plan available for bound computation")]
    NoPlan,
    #[error("factor `{0}` has no failure-free variant (domain not declared failure-monotone)")]
    NotFailureMonotone(String),
    #[error("component `{0}` has an empty start-state set")]
    EmptyStartStates(String),
    #[error("allocation space has no leaves")]
    EmptySpace,
}

/// Everything leaf evaluation and bound computation need.
pub struct SearchContext<'a> {
    pub model: &'a RmtdpModel,
    pub incomplete: &'a IncompletePolicy,
    pub rule_for: &'a (dyn Fn(&AllocationLeaf) -> BeliefUpdateRule + Sync),
    pub plan: Option<&'a CompositionPlan>,
    pub parallel: bool,
}

impl<'a> SearchContext<'a> {
    pub fn policy_for(&self, leaf: &AllocationLeaf) -> Result<JointPolicy, SearchError> {
        Ok(complete_policy(self.incomplete, leaf)?)
    }
}

/// How leaves are evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvalMode {
    Belief,
    History,
}

/// One evaluated leaf with its counters, kept for method comparisons.
#[derive(Clone, Debug)]
pub struct LeafEval {
    pub leaf: AllocationLeaf,
    pub value: f64,
    pub stats: EvalStats,
}

/// Result of a search run.
pub struct SearchOutcome {
    pub best_leaf: AllocationLeaf,
    pub best_value: f64,
    pub stats: SearchStats,
    pub bounds: Vec<BoundRecord>,
    pub evaluated: Vec<LeafEval>,
}

pub fn evaluate_leaf(
    ctx: &SearchContext<'_>,
    leaf: &AllocationLeaf,
    mode: EvalMode,
) -> Result<LeafEval, SearchError> {
    let policy = ctx.policy_for(leaf)?;
    let rule = (ctx.rule_for)(leaf);
    let res = match mode {
        EvalMode::Belief => evaluate_belief(ctx.model, &policy, &rule)?,
        EvalMode::History => {
            let hp = policy.as_history_indexed(&rule);
            evaluate_obs_history(ctx.model, &hp)?
        }
    };
    Ok(LeafEval { leaf: leaf.clone(), value: res.value, stats: res.stats })
}

fn initial_interfaces(model: &RmtdpModel, rule: &BeliefUpdateRule) -> Vec<EndInterface> {
    model
        .start
        .iter()
        .filter(|(_, p)| *p > 0.0)
        .map(|(s, _)| (s.clone(), vec![rule.initial().clone(); model.n_agents]))
        .collect()
}

fn factor_model<'f>(
    factor: &'f ComponentFactor,
    kind: BoundKind,
) -> Result<&'f RmtdpModel, SearchError> {
    match kind {
        BoundKind::MaxExp => Ok(factor.model.as_ref()),
        BoundKind::NoFail => factor
            .nofail_model
            .as_deref()
            .ok_or_else(|| SearchError::NotFailureMonotone(factor.name.clone())),
    }
}

/// Upper bound of a parent node by component decomposition: for each
/// sequential stage, every leaf completion under the parent is evaluated on
/// each component from every carried (projected, deduplicated) start
/// interface; the per-component maxima are summed. End interfaces are
/// collected per stage and reduced before reuse. With `BoundKind::NoFail`
/// the computation runs on the failure-free model variants.
pub fn maxexp_bound(
    parent: &AllocationNode,
    ctx: &SearchContext<'_>,
    kind: BoundKind,
) -> Result<BoundRecord, SearchError> {
    let plan = ctx.plan.ok_or(SearchError::NoPlan)?;
    let stages = plan.stages()?;
    let leaves = parent.leaves();
    let mut per_component: Vec<(String, f64)> = Vec::new();

    // Carried interfaces between stages, in full (unprojected) form; each
    // member projects and deduplicates on receipt.
    let mut carried: Option<BTreeSet<EndInterface>> = None;

    for (si, stage) in stages.iter().enumerate() {
        let stage_end = stage_end_fn(stage);
        let last_stage = si + 1 == stages.len();

        for member in stage {
            let model = factor_model(member, kind)?;
            let mut best = f64::NEG_INFINITY;
            let mut any_start = false;
            for leaf in &leaves {
                let policy = ctx.policy_for(leaf)?;
                let rule = (ctx.rule_for)(leaf);
                let starts: Vec<EndInterface> = match &carried {
                    None => initial_interfaces(model, &rule),
                    Some(set) => {
                        let projected: BTreeSet<EndInterface> = set
                            .iter()
                            .map(|(s, bs)| {
                                (
                                    (member.project)(s),
                                    bs.iter()
                                        .enumerate()
                                        .map(|(i, b)| (member.project_belief)(i, b))
                                        .collect(),
                                )
                            })
                            .collect();
                        projected.into_iter().collect()
                    }
                };
                if carried.is_none() && starts.is_empty() {
                    return Err(SearchError::EmptyStartStates(member.name.clone()));
                }
                if starts.is_empty() {
                    continue;
                }
                any_start = true;
                let res = evaluate_belief_set(
                    model,
                    &policy,
                    &rule,
                    &starts,
                    stage_end.as_ref().map(|f| f as _),
                    false,
                )?;
                for v in res.values {
                    if v > best {
                        best = v;
                    }
                }
            }
            // A component whose start set is empty is unreachable under this
            // parent: it contributes nothing.
            let contribution = if any_start { best } else { 0.0 };
            per_component.push((member.name.clone(), contribution));
        }

        if !last_stage {
            // Carrier sweep on the stage's shared dynamics: collect the end
            // interfaces every leaf completion can reach.
            let carrier = factor_model(stage[0], kind)?;
            let mut ends: BTreeSet<EndInterface> = BTreeSet::new();
            for leaf in &leaves {
                let policy = ctx.policy_for(leaf)?;
                let rule = (ctx.rule_for)(leaf);
                let starts: Vec<EndInterface> = match &carried {
                    None => initial_interfaces(carrier, &rule),
                    Some(set) => set.iter().cloned().collect(),
                };
                if starts.is_empty() {
                    continue;
                }
                let res = evaluate_belief_set(
                    carrier,
                    &policy,
                    &rule,
                    &starts,
                    stage_end.as_ref().map(|f| f as _),
                    true,
                )?;
                ends.extend(res.ends);
            }
            carried = Some(ends);
        }
    }

    let max_estimate = per_component.iter().map(|(_, v)| v).sum();
    Ok(BoundRecord {
        parent: parent.render_counts(),
        kind,
        per_component,
        max_estimate,
    })
}

/// The NOFAIL variant: the same component decomposition computed on the
/// model with failure probabilities zeroed (mass renormalized onto survival
/// outcomes by the domain's failure-free builder).
pub fn nofail_bound(
    parent: &AllocationNode,
    ctx: &SearchContext<'_>,
) -> Result<BoundRecord, SearchError> {
    maxexp_bound(parent, ctx, BoundKind::NoFail)
}

type StageEnd = Box<dyn Fn(&FactoredState) -> bool + Sync + Send>;

/// A stage ends when every member with an end condition has ended.
fn stage_end_fn(stage: &[&ComponentFactor]) -> Option<StageEnd> {
    let ends: Vec<_> = stage
        .iter()
        .filter_map(|f| f.at_end.clone().map(|e| (f.project.clone(), e)))
        .collect();
    if ends.is_empty() {
        return None;
    }
    Some(Box::new(move |s: &FactoredState| {
        ends.iter().all(|(project, end)| end(&project(s)))
    }))
}

// ---------------------------------------------------------------------------
// Search drivers
// ---------------------------------------------------------------------------

/// Brute-force evaluation of every allocation leaf (NOPRUNE), in belief or
/// history mode. Returns the best leaf under the lexicographic tie-break.
pub fn exhaustive_search(
    space: &AllocationNode,
    ctx: &SearchContext<'_>,
    mode: EvalMode,
) -> Result<SearchOutcome, SearchError> {
    let t0 = Instant::now();
    let leaves = space.leaves();
    if leaves.is_empty() {
        return Err(SearchError::EmptySpace);
    }
    let evals: Vec<Result<LeafEval, SearchError>> =
        map_indexed(ctx.parallel, leaves.len(), |i| evaluate_leaf(ctx, leaves[i], mode));
    let mut evaluated = Vec::with_capacity(evals.len());
    for e in evals {
        evaluated.push(e?);
    }
    let (best_leaf, best_value) = fold_best(&evaluated);
    Ok(SearchOutcome {
        best_leaf,
        best_value,
        stats: SearchStats {
            leaf_evaluations: evaluated.len() as u64,
            parent_bound_evaluations: 0,
            pruned_parents: 0,
            wall_seconds: t0.elapsed().as_secs_f64(),
        },
        bounds: Vec::new(),
        evaluated,
    })
}

/// Branch-and-bound over the allocation space: computes an upper bound for
/// every parent, expands parents in decreasing bound order, and prunes a
/// parent exactly when its bound is strictly below the best value found.
/// Leaf evaluations use belief mode. Returns the same best value and the
/// same tie-broken leaf as exhaustive enumeration whenever the bound is
/// admissible.
pub fn branch_and_bound(
    space: &AllocationNode,
    ctx: &SearchContext<'_>,
    kind: BoundKind,
) -> Result<SearchOutcome, SearchError> {
    let t0 = Instant::now();
    let parents = space.parents();
    if parents.is_empty() {
        // Degenerate space: a single leaf (or none).
        let mut out = exhaustive_search(space, ctx, EvalMode::Belief)?;
        out.stats.wall_seconds = t0.elapsed().as_secs_f64();
        return Ok(out);
    }

    let bounds: Vec<Result<BoundRecord, SearchError>> =
        map_indexed(ctx.parallel, parents.len(), |i| maxexp_bound(parents[i], ctx, kind));
    let mut bound_records = Vec::with_capacity(bounds.len());
    for b in bounds {
        bound_records.push(b?);
    }

    // Decreasing bound order; ties resolved by the parents' count vectors.
    let mut order: Vec<usize> = (0..parents.len()).collect();
    order.sort_by(|&a, &b| {
        bound_records[b]
            .max_estimate
            .partial_cmp(&bound_records[a].max_estimate)
            .unwrap()
            .then_with(|| parents[a].counts.cmp(&parents[b].counts))
    });

    let mut pruned = vec![false; parents.len()];
    let mut expanded = vec![false; parents.len()];
    let mut best: Option<(f64, AllocationLeaf)> = None;
    let mut evaluated: Vec<LeafEval> = Vec::new();

    for &pi in &order {
        if pruned[pi] {
            continue;
        }
        expanded[pi] = true;
        let leaves = parents[pi].leaves();
        let evals: Vec<Result<LeafEval, SearchError>> = map_indexed(
            ctx.parallel,
            leaves.len(),
            |i| evaluate_leaf(ctx, leaves[i], EvalMode::Belief),
        );
        for e in evals {
            let e = e?;
            best = Some(match best.take() {
                None => (e.value, e.leaf.clone()),
                Some((bv, bl)) => {
                    if e.value > bv || (e.value == bv && e.leaf < bl) {
                        (e.value, e.leaf.clone())
                    } else {
                        (bv, bl)
                    }
                }
            });
            evaluated.push(e);
        }
        let best_val = best.as_ref().unwrap().0;
        for (pj, rec) in bound_records.iter().enumerate() {
            if !expanded[pj] && !pruned[pj] && rec.max_estimate < best_val {
                pruned[pj] = true;
            }
        }
    }

    let (best_value, best_leaf) = best.ok_or(SearchError::EmptySpace)?;
    Ok(SearchOutcome {
        best_leaf,
        best_value,
        stats: SearchStats {
            leaf_evaluations: evaluated.len() as u64,
            parent_bound_evaluations: parents.len() as u64,
            pruned_parents: pruned.iter().filter(|&&p| p).count() as u64,
            wall_seconds: t0.elapsed().as_secs_f64(),
        },
        bounds: bound_records,
        evaluated,
    })
}

fn fold_best(evals: &[LeafEval]) -> (AllocationLeaf, f64) {
    let mut best = (&evals[0].leaf, evals[0].value);
    for e in &evals[1..] {
        if e.value > best.1 || (e.value == best.1 && e.leaf < *best.0) {
            best = (&e.leaf, e.value);
        }
    }
    (best.0.clone(), best.1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::top::parse_top;

    #[test]
    fn rising_factorial_counts() {
        assert_eq!(count_allocations(4, 6), 84);
        assert_eq!(count_allocations(4, 0), 1);
        assert_eq!(count_allocations(7, 0), 1);
        // m = 4, n = 3: all 4-part compositions of 3.
        assert_eq!(count_allocations(4, 3), compositions(3, 4).len() as u128);
        assert_eq!(count_allocations(4, 3), 20);
    }

    #[test]
    fn compositions_are_lexicographic_and_complete() {
        let c = compositions(2, 3);
        assert_eq!(
            c,
            vec![
                vec![0, 0, 2],
                vec![0, 1, 1],
                vec![0, 2, 0],
                vec![1, 0, 1],
                vec![1, 1, 0],
                vec![2, 0, 0],
            ]
        );
    }

    const MISSION_ORG: &str = r#"
org {
  TaskForce {
    ScoutingTeam {
      SctTeamA: memberSctTeamA;
      SctTeamB: memberSctTeamB;
      SctTeamC: memberSctTeamC;
    }
    TransportTeam: memberTransportTeam;
  }
}
criticality { memberSctTeamA: 1; memberSctTeamB: 1; memberSctTeamC: 1; memberTransportTeam: 0; }
plan Root { team: TaskForce; body: [noop]; }
"#;

    #[test]
    fn mission_space_has_84_leaves_for_six_agents() {
        let top = parse_top(MISSION_ORG).unwrap();
        let space = build_allocation_space(&top.org_root, 6, &BTreeMap::new());
        assert_eq!(space.leaves().len(), 84);
        // Parents fix the scouting/transport split: 0..=6 scouts.
        assert_eq!(space.parents().len(), 7);
        // Leaf counts vectors are over the four leaf teams.
        let leaf = space.leaves()[0];
        assert_eq!(leaf.counts.len(), 4);
        assert_eq!(leaf.counts[3].0, "TransportTeam");
    }

    #[test]
    fn zero_agents_yield_single_empty_leaf() {
        let top = parse_top(MISSION_ORG).unwrap();
        let space = build_allocation_space(&top.org_root, 0, &BTreeMap::new());
        let leaves = space.leaves();
        assert_eq!(leaves.len(), 1);
        assert!(leaves[0].counts.iter().all(|(_, c)| *c == 0));
    }

    const RESCUE_ORG: &str = r#"
org {
  TaskForce {
    Station1 (pool 1) { St1ToFire1: engineFire1; St1ToFire2: engineFire2; }
    Station2 (pool 1) { St2ToFire1: engineFire1; St2ToFire2: engineFire2; }
    Station3 (pool 0) { St3ToFire1: engineFire1; St3ToFire2: engineFire2; }
    AmbulanceCenter | c (pool 2) { AmbTeamA: ambFire1; AmbTeamB: ambFire2; }
  }
}
criticality { engineFire1: 0; engineFire2: 0; ambFire1: 0; ambFire2: 0; }
plan Root { team: TaskForce; body: [noop]; }
"#;

    #[test]
    fn rescue_space_matches_product_formula() {
        let top = parse_top(RESCUE_ORG).unwrap();
        // Full message set {0..=c} as in the brute-force node count:
        // (f1+1)(f2+1)(f3+1)(a+1)^{c+1} = 2*2*1*3^4 = 324.
        let mut msgs = BTreeMap::new();
        msgs.insert("c".to_string(), vec![0, 1, 2, 3]);
        let space = build_allocation_space(&top.org_root, 4, &msgs);
        assert_eq!(space.leaves().len(), 324);

        // The scaled scenario conditions on the two informative messages
        // only (one or two civilians at fire 1).
        let mut msgs = BTreeMap::new();
        msgs.insert("c".to_string(), vec![1, 2]);
        let space = build_allocation_space(&top.org_root, 4, &msgs);
        assert_eq!(space.leaves().len(), 4 * 9);
        let leaf = space.leaves()[0];
        assert_eq!(leaf.branches.len(), 2);
        // Engine splits land one level above the conditioned level.
        assert!(!space.parents().is_empty());
    }

    #[test]
    fn leaf_ordering_is_lexicographic_on_counts() {
        let a = AllocationLeaf {
            counts: vec![("A".into(), 0), ("B".into(), 2)],
            branches: BTreeMap::new(),
        };
        let b = AllocationLeaf {
            counts: vec![("A".into(), 1), ("B".into(), 1)],
            branches: BTreeMap::new(),
        };
        assert!(a < b);
    }
}
