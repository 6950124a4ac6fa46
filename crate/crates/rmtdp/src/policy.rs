//! Joint policies: per-agent decision maps indexed by observation history or
//! by belief state.
//!
//! Each index yields exactly one of a role-taking action, a role-execution
//! action, or no-op; the exclusivity between the role-taking and
//! role-execution maps is structural in [`AgentAction`]. A policy is an
//! explicit table, a decision rule (closure), or a table backed by a rule —
//! the table always wins on lookup, which is what policy completion relies
//! on to preserve filled entries.

use std::collections::HashMap;
use std::sync::Arc;

use crate::belief::{BeliefState, BeliefUpdateRule};
use crate::model::{AgentAction, Obs};

/// What a policy's decision maps are indexed by.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IndexKind {
    ObservationHistory,
    BeliefState,
}

/// A single policy index.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PolicyIndex {
    History(Vec<Obs>),
    Belief(BeliefState),
}

impl PolicyIndex {
    pub fn kind(&self) -> IndexKind {
        match self {
            PolicyIndex::History(_) => IndexKind::ObservationHistory,
            PolicyIndex::Belief(_) => IndexKind::BeliefState,
        }
    }
}

type DecisionRule = dyn Fn(usize, &PolicyIndex) -> Option<AgentAction> + Send + Sync;

/// A joint policy for the whole team. Lookup order per agent: explicit table
/// entry, then the fallback rule; a miss in both is reported to the caller
/// (evaluation surfaces it as an error naming the index).
#[derive(Clone)]
pub struct JointPolicy {
    kind: IndexKind,
    tables: Vec<HashMap<PolicyIndex, AgentAction>>,
    rule: Option<Arc<DecisionRule>>,
}

impl JointPolicy {
    pub fn from_tables(kind: IndexKind, tables: Vec<HashMap<PolicyIndex, AgentAction>>) -> Self {
        JointPolicy { kind, tables, rule: None }
    }

    pub fn from_rule(
        kind: IndexKind,
        n_agents: usize,
        rule: impl Fn(usize, &PolicyIndex) -> Option<AgentAction> + Send + Sync + 'static,
    ) -> Self {
        JointPolicy {
            kind,
            tables: vec![HashMap::new(); n_agents],
            rule: Some(Arc::new(rule)),
        }
    }

    pub fn kind(&self) -> IndexKind {
        self.kind
    }

    pub fn n_agents(&self) -> usize {
        self.tables.len()
    }

    /// Inserts an explicit entry for one agent.
    pub fn insert(&mut self, agent: usize, index: PolicyIndex, action: AgentAction) {
        self.tables[agent].insert(index, action);
    }

    pub fn table_entry(&self, agent: usize, index: &PolicyIndex) -> Option<AgentAction> {
        self.tables[agent].get(index).copied()
    }

    /// The agent's action at an index, or `None` when the policy is
    /// undefined there.
    pub fn decide(&self, agent: usize, index: &PolicyIndex) -> Option<AgentAction> {
        if let Some(&a) = self.tables[agent].get(index) {
            return Some(a);
        }
        self.rule.as_ref().and_then(|r| r(agent, index))
    }

    /// Adapts a belief-indexed policy to observation-history indexing by
    /// folding each history through the update rule. This is the
    /// history-indexed unrolling used by history-mode evaluation of
    /// plan-derived policies.
    pub fn as_history_indexed(&self, rule: &BeliefUpdateRule) -> JointPolicy {
        assert_eq!(self.kind, IndexKind::BeliefState);
        let inner = self.clone();
        let rule = rule.clone();
        JointPolicy::from_rule(
            IndexKind::ObservationHistory,
            self.n_agents(),
            move |agent, index| match index {
                PolicyIndex::History(h) => {
                    inner.decide(agent, &PolicyIndex::Belief(rule.fold(h)))
                }
                PolicyIndex::Belief(_) => None,
            },
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::belief::append_history_rule;
    use crate::model::{ExecId, ObsAtom};

    #[test]
    fn table_beats_rule_on_lookup() {
        let mut p = JointPolicy::from_rule(IndexKind::BeliefState, 1, |_, _| {
            Some(AgentAction::Noop)
        });
        let idx = PolicyIndex::Belief(BeliefState::empty());
        p.insert(0, idx.clone(), AgentAction::Exec(ExecId(0)));
        assert_eq!(p.decide(0, &idx), Some(AgentAction::Exec(ExecId(0))));
    }

    #[test]
    fn history_unrolling_folds_through_rule() {
        let rule = append_history_rule(2);
        let target = rule.fold(&[vec![ObsAtom(1)]]);
        let mut p = JointPolicy::from_tables(IndexKind::BeliefState, vec![HashMap::new()]);
        p.insert(0, PolicyIndex::Belief(target), AgentAction::Exec(ExecId(7)));
        let hp = p.as_history_indexed(&rule);
        let got = hp.decide(0, &PolicyIndex::History(vec![vec![ObsAtom(1)]]));
        assert_eq!(got, Some(AgentAction::Exec(ExecId(7))));
        assert_eq!(hp.decide(0, &PolicyIndex::History(vec![vec![ObsAtom(0)]])), None);
    }
}
