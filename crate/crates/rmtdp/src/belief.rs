//! Belief states and belief-update rules.
//!
//! A belief state is the set of privately held propositions an agent has
//! accumulated by folding its observations through a deterministic update
//! rule, plus any bounded integer scalars the rule maintains. Belief states
//! are kept in canonical (sorted, deduplicated) form so equality and hashing
//! are well defined; policies indexed by belief state rely on this.

use std::collections::HashMap;
use std::sync::Arc;

use crate::model::Obs;

/// Interned proposition identifier. Catalogs are frozen at domain-build time.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PropId(pub u32);

/// Name <-> id table for propositions. Built once per domain, then read-only.
#[derive(Clone, Debug, Default)]
pub struct PropCatalog {
    names: Vec<String>,
    index: HashMap<String, PropId>,
}

impl PropCatalog {
    pub fn new() -> Self {
        Self::default()
    }

    /// Interns a name, returning its id (idempotent).
    pub fn intern(&mut self, name: &str) -> PropId {
        if let Some(&id) = self.index.get(name) {
            return id;
        }
        let id = PropId(self.names.len() as u32);
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), id);
        id
    }

    pub fn lookup(&self, name: &str) -> Option<PropId> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: PropId) -> &str {
        &self.names[id.0 as usize]
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

/// An agent's privately held beliefs in canonical form: sorted proposition
/// ids plus sorted (scalar id, value) pairs.
#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BeliefState {
    props: Vec<PropId>,
    scalars: Vec<(u16, i64)>,
}

impl BeliefState {
    pub fn empty() -> Self {
        BeliefState::default()
    }

    pub fn from_props(mut props: Vec<PropId>) -> Self {
        props.sort_unstable();
        props.dedup();
        BeliefState { props, scalars: Vec::new() }
    }

    pub fn holds(&self, p: PropId) -> bool {
        self.props.binary_search(&p).is_ok()
    }

    /// Inserts a proposition, preserving canonical order.
    pub fn insert(&mut self, p: PropId) {
        if let Err(pos) = self.props.binary_search(&p) {
            self.props.insert(pos, p);
        }
    }

    pub fn remove(&mut self, p: PropId) {
        if let Ok(pos) = self.props.binary_search(&p) {
            self.props.remove(pos);
        }
    }

    pub fn props(&self) -> &[PropId] {
        &self.props
    }

    pub fn scalar(&self, id: u16) -> Option<i64> {
        self.scalars
            .binary_search_by_key(&id, |&(k, _)| k)
            .ok()
            .map(|i| self.scalars[i].1)
    }

    pub fn set_scalar(&mut self, id: u16, value: i64) {
        match self.scalars.binary_search_by_key(&id, |&(k, _)| k) {
            Ok(i) => self.scalars[i].1 = value,
            Err(i) => self.scalars.insert(i, (id, value)),
        }
    }

    /// Retains only the given propositions (used when carrying beliefs into
    /// a component that depends on a subset of them). Scalars are dropped.
    pub fn restricted_to(&self, keep: impl Fn(PropId) -> bool) -> BeliefState {
        BeliefState {
            props: self.props.iter().copied().filter(|&p| keep(p)).collect(),
            scalars: Vec::new(),
        }
    }
}

type UpdateClosure = dyn Fn(&BeliefState, &Obs) -> BeliefState + Send + Sync;

/// Deterministic belief update: the next belief depends only on the current
/// belief and the received observation. The initial belief is what every
/// agent holds before its first observation.
#[derive(Clone)]
pub struct BeliefUpdateRule {
    initial: BeliefState,
    update: Arc<UpdateClosure>,
}

impl BeliefUpdateRule {
    pub fn new(
        initial: BeliefState,
        update: impl Fn(&BeliefState, &Obs) -> BeliefState + Send + Sync + 'static,
    ) -> Self {
        BeliefUpdateRule { initial, update: Arc::new(update) }
    }

    pub fn initial(&self) -> &BeliefState {
        &self.initial
    }

    /// Applies the rule once. An empty observation always maps a belief to
    /// itself under domain rules built in this crate; that convention is a
    /// property of the rules, not enforced here.
    pub fn update(&self, belief: &BeliefState, obs: &Obs) -> BeliefState {
        (self.update)(belief, obs)
    }

    /// Folds a whole observation history through the rule.
    pub fn fold(&self, history: &[Obs]) -> BeliefState {
        let mut b = self.initial.clone();
        for o in history {
            b = self.update(&b, o);
        }
        b
    }
}

/// Free-function form of the update, mirroring the operation signature used
/// throughout: deterministic, pure, output depends only on `(belief, obs)`.
pub fn belief_update(rule: &BeliefUpdateRule, belief: &BeliefState, obs: &Obs) -> BeliefState {
    rule.update(belief, obs)
}

/// Degenerate rule that appends every observation, so belief states are
/// exactly observation histories. Useful for exercising the worst case where
/// belief-based evaluation has the same complexity as history-based
/// evaluation: each atom is tagged with the step at which it arrived and a
/// step counter scalar keeps even empty observations distinguishable.
pub fn append_history_rule(n_atoms: usize) -> BeliefUpdateRule {
    const STEP_SCALAR: u16 = 0;
    BeliefUpdateRule::new(BeliefState::empty(), move |b, obs| {
        let mut next = b.clone();
        let step = b.scalar(STEP_SCALAR).unwrap_or(0);
        for atom in obs {
            // Unique prop per (step, atom): histories embed injectively.
            let tagged = PropId((step as u32) * (n_atoms as u32 + 1) + atom.0 as u32 + 1);
            next.insert(tagged);
        }
        next.set_scalar(STEP_SCALAR, step + 1);
        next
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ObsAtom;

    #[test]
    fn canonical_form_is_order_insensitive() {
        let a = BeliefState::from_props(vec![PropId(3), PropId(1), PropId(1)]);
        let b = BeliefState::from_props(vec![PropId(1), PropId(3)]);
        assert_eq!(a, b);
    }

    #[test]
    fn update_is_deterministic() {
        let rule = append_history_rule(4);
        let obs: Obs = vec![ObsAtom(2), ObsAtom(0)];
        let b1 = rule.update(rule.initial(), &obs);
        let b2 = rule.update(rule.initial(), &obs);
        assert_eq!(b1, b2);
    }

    #[test]
    fn append_rule_distinguishes_histories() {
        let rule = append_history_rule(2);
        let h1 = vec![vec![ObsAtom(0)], vec![ObsAtom(1)]];
        let h2 = vec![vec![ObsAtom(1)], vec![ObsAtom(0)]];
        assert_ne!(rule.fold(&h1), rule.fold(&h2));
        // Empty observations still advance the step counter, so histories of
        // different lengths stay distinct.
        let h3 = vec![vec![ObsAtom(0)], vec![]];
        let h4 = vec![vec![ObsAtom(0)]];
        assert_ne!(rule.fold(&h3), rule.fold(&h4));
    }
}
