//! Team-oriented plan documents: organization hierarchy, reactive plan
//! hierarchy with AND/OR coordination and temporal constraints, a closed
//! condition language over belief propositions, the plan interpreter that
//! turns a document into an incomplete policy with open role-allocation
//! decision points, and the criticality-based reallocation rule.
//!
//! ## Document format
//!
//! UTF-8 text, `#` comments. Three sections:
//!
//! ```text
//! org {
//!   TaskForce {
//!     ScoutingTeam {
//!       SctTeamA: memberSctTeamA;
//!       ...
//!     }
//!     TransportTeam: memberTransportTeam;
//!   }
//! }
//! criticality { memberSctTeamA: 1; memberTransportTeam: 0; }
//! plan ExecuteMission {
//!   team: TaskForce;
//!   context: true; pre: true;
//!   achieved: scouted_r1 or scouted_r2;
//!   unachievable: false; irrelevant: false;
//!   body: [DoScouting, DoTransport];
//!   constraints: DoScouting -> DoTransport;
//!   independent: DoTransport RemainingScouts;
//!   combinator: AND;
//! }
//! ```
//!
//! Org nodes may carry `| tag` (membership conditioned on a received
//! message) and `(pool N)` (a fixed agent pool for that subtree). Plan
//! bodies are either child-plan references or primitive entries, optionally
//! guarded: `if <cond> then <action>`. Conditions are proposition literals
//! combined with `and`/`or`/`not`, plus `<`/`>`/`=` comparisons on bounded
//! integer belief scalars.
//!
//! ## Belief conventions
//!
//! The interpreter reads the agent's situation from proposition names the
//! domain belief rules agree to emit: `own_unassigned`, `own_dead`,
//! `own_role_<role>`, `critical_<LeafTeam>` (reallocation triggers) and
//! `msg_<tag>_<value>` (conditioned-allocation messages). Everything else in
//! a condition is ordinary domain vocabulary.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

use thiserror::Error;

use crate::belief::{BeliefState, PropCatalog, PropId};
use crate::model::{AgentAction, ExecId, RmtdpModel, RoleId};
use crate::policy::{IndexKind, JointPolicy, PolicyIndex};
use crate::search::AllocationLeaf;

// ---------------------------------------------------------------------------
// Specification types
// ---------------------------------------------------------------------------

/// A node of the team organization hierarchy. Leaves carry the role their
/// members play; internal nodes group sub-teams. `condition_message` marks
/// membership conditioned on a received message tag; `pool` pins a fixed
/// agent count to this subtree (heterogeneous pools).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OrgNode {
    pub name: String,
    pub children: Vec<OrgNode>,
    pub leaf_role: Option<String>,
    pub condition_message: Option<String>,
    pub pool: Option<usize>,
}

impl OrgNode {
    pub fn find(&self, name: &str) -> Option<&OrgNode> {
        if self.name == name {
            return Some(self);
        }
        self.children.iter().find_map(|c| c.find(name))
    }

    /// Leaf teams of this subtree, document order.
    pub fn leaf_teams(&self) -> Vec<&OrgNode> {
        let mut out = Vec::new();
        self.collect_leaves(&mut out);
        out
    }

    fn collect_leaves<'a>(&'a self, out: &mut Vec<&'a OrgNode>) {
        if self.leaf_role.is_some() {
            out.push(self);
        }
        for c in &self.children {
            c.collect_leaves(out);
        }
    }

    /// Role names played anywhere under this node.
    pub fn roles(&self) -> BTreeSet<String> {
        self.leaf_teams()
            .iter()
            .filter_map(|t| t.leaf_role.clone())
            .collect()
    }
}

/// Comparison operator usable on belief scalars.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CmpOp {
    Lt,
    Gt,
    Eq,
}

/// Closed predicate language over a belief state: proposition literals,
/// conjunction, disjunction, negation, and integer comparisons.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Condition {
    True,
    False,
    Prop(String),
    Not(Box<Condition>),
    And(Vec<Condition>),
    Or(Vec<Condition>),
    Cmp { scalar: String, op: CmpOp, value: i64 },
}

impl Condition {
    pub fn is_trivially_false(&self) -> bool {
        matches!(self, Condition::False)
    }
}

/// Guarded primitive body entry; the guard defaults to `true`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GuardedAction {
    pub guard: Condition,
    pub action: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PlanBody {
    Children(Vec<PlanNode>),
    Primitives(Vec<GuardedAction>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Combinator {
    And,
    Or,
}

/// A reactive team plan: conditions, an assigned team, a body of sub-plans
/// or primitive actions, and temporal constraints among its children.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PlanNode {
    pub name: String,
    pub team: String,
    pub context: Condition,
    pub pre: Condition,
    pub achieved: Condition,
    pub unachievable: Condition,
    pub irrelevant: Condition,
    pub body: PlanBody,
    pub combinator: Option<Combinator>,
    /// (predecessor, successor) pairs among child names; forms a DAG.
    pub constraints: Vec<(String, String)>,
    /// Children declared mutually parallel-independent.
    pub independent: Vec<String>,
}

impl PlanNode {
    pub fn children(&self) -> &[PlanNode] {
        match &self.body {
            PlanBody::Children(c) => c,
            PlanBody::Primitives(_) => &[],
        }
    }

    pub fn find(&self, name: &str) -> Option<&PlanNode> {
        if self.name == name {
            return Some(self);
        }
        self.children().iter().find_map(|c| c.find(name))
    }
}

/// A parsed team-oriented program: organization, plans, and per-role
/// criticality used by the reallocation rule.
#[derive(Clone, Debug)]
pub struct TopSpec {
    pub org_root: OrgNode,
    pub plan_root: PlanNode,
    pub criticality: BTreeMap<String, u8>,
}

#[derive(Debug, Error)]
pub enum TopError {
    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("unknown team reference `{0}`")]
    UnknownTeam(String),
    #[error("cyclic temporal constraint in plan `{0}`")]
    ConstraintCycle(String),
    #[error("criticality entry missing for role `{0}`")]
    MissingCriticality(String),
    #[error("primitive action `{action}` in plan `{plan}` has no model action")]
    UnboundAction { plan: String, action: String },
    #[error("role `{0}` in organization is not a model role")]
    UnboundRole(String),
    #[error("agent pools sum to {got}, model has {want} agents")]
    PoolMismatch { got: usize, want: usize },
    #[error("allocation missing conditioned branch for message {tag}={value}")]
    MissingBranch { tag: String, value: i64 },
    #[error("allocation counts for `{team}` sum to {got}, pool has {want}")]
    CountMismatch { team: String, got: usize, want: usize },
}

/// The criticality-based reallocation test: an agent playing `candidate`
/// replaces a failed agent playing `failed` iff
/// criticality(failed) - criticality(candidate) > 0.
pub fn steam_reallocate(
    criticality: &BTreeMap<String, u8>,
    failed: &str,
    candidate: &str,
) -> Result<bool, TopError> {
    let f = *criticality
        .get(failed)
        .ok_or_else(|| TopError::MissingCriticality(failed.to_string()))?;
    let c = *criticality
        .get(candidate)
        .ok_or_else(|| TopError::MissingCriticality(candidate.to_string()))?;
    Ok(f as i8 - c as i8 > 0)
}

// ---------------------------------------------------------------------------
// Parser
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Ident(String),
    Num(i64),
    LBrace,
    RBrace,
    LParen,
    RParen,
    LBracket,
    RBracket,
    Colon,
    Semi,
    Comma,
    Pipe,
    Arrow,
    Lt,
    Gt,
    Eq,
}

struct Lexer {
    toks: Vec<(Tok, usize)>,
    pos: usize,
}

fn lex(text: &str) -> Result<Lexer, TopError> {
    let mut toks = Vec::new();
    let mut line = 1usize;
    let bytes: Vec<char> = text.chars().collect();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        match c {
            '\n' => {
                line += 1;
                i += 1;
            }
            ' ' | '\t' | '\r' => i += 1,
            '#' => {
                while i < bytes.len() && bytes[i] != '\n' {
                    i += 1;
                }
            }
            '{' => {
                toks.push((Tok::LBrace, line));
                i += 1;
            }
            '}' => {
                toks.push((Tok::RBrace, line));
                i += 1;
            }
            '(' => {
                toks.push((Tok::LParen, line));
                i += 1;
            }
            ')' => {
                toks.push((Tok::RParen, line));
                i += 1;
            }
            '[' => {
                toks.push((Tok::LBracket, line));
                i += 1;
            }
            ']' => {
                toks.push((Tok::RBracket, line));
                i += 1;
            }
            ':' => {
                toks.push((Tok::Colon, line));
                i += 1;
            }
            ';' => {
                toks.push((Tok::Semi, line));
                i += 1;
            }
            ',' => {
                toks.push((Tok::Comma, line));
                i += 1;
            }
            '|' => {
                toks.push((Tok::Pipe, line));
                i += 1;
            }
            '<' => {
                toks.push((Tok::Lt, line));
                i += 1;
            }
            '>' => {
                toks.push((Tok::Gt, line));
                i += 1;
            }
            '=' => {
                toks.push((Tok::Eq, line));
                i += 1;
            }
            '-' => {
                if i + 1 < bytes.len() && bytes[i + 1] == '>' {
                    toks.push((Tok::Arrow, line));
                    i += 2;
                } else if i + 1 < bytes.len() && bytes[i + 1].is_ascii_digit() {
                    let (n, ni) = lex_num(&bytes, i + 1);
                    toks.push((Tok::Num(-n), line));
                    i = ni;
                } else {
                    return Err(TopError::Parse {
                        line,
                        reason: format!("unexpected character `{c}`"),
                    });
                }
            }
            c if c.is_ascii_digit() => {
                let (n, ni) = lex_num(&bytes, i);
                toks.push((Tok::Num(n), line));
                i = ni;
            }
            c if c.is_alphabetic() || c == '_' => {
                let start = i;
                while i < bytes.len() && (bytes[i].is_alphanumeric() || bytes[i] == '_') {
                    i += 1;
                }
                let word: String = bytes[start..i].iter().collect();
                toks.push((Tok::Ident(word), line));
            }
            other => {
                return Err(TopError::Parse {
                    line,
                    reason: format!("unexpected character `{other}`"),
                })
            }
        }
    }
    Ok(Lexer { toks, pos: 0 })
}

fn lex_num(bytes: &[char], mut i: usize) -> (i64, usize) {
    let start = i;
    while i < bytes.len() && bytes[i].is_ascii_digit() {
        i += 1;
    }
    let s: String = bytes[start..i].iter().collect();
    (s.parse().unwrap_or(0), i)
}

impl Lexer {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(t, _)| t)
    }

    fn line(&self) -> usize {
        self.toks
            .get(self.pos.min(self.toks.len().saturating_sub(1)))
            .map(|(_, l)| *l)
            .unwrap_or(0)
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|(t, _)| t.clone());
        self.pos += 1;
        t
    }

    fn err(&self, reason: impl Into<String>) -> TopError {
        TopError::Parse { line: self.line(), reason: reason.into() }
    }

    fn expect(&mut self, tok: Tok) -> Result<(), TopError> {
        match self.next() {
            Some(t) if t == tok => Ok(()),
            other => Err(TopError::Parse {
                line: self.line(),
                reason: format!("expected {tok:?}, found {other:?}"),
            }),
        }
    }

    fn ident(&mut self) -> Result<String, TopError> {
        match self.next() {
            Some(Tok::Ident(s)) => Ok(s),
            other => Err(TopError::Parse {
                line: self.line(),
                reason: format!("expected identifier, found {other:?}"),
            }),
        }
    }
}

/// Raw plan block before tree resolution.
struct RawPlan {
    name: String,
    team: String,
    context: Condition,
    pre: Condition,
    achieved: Condition,
    unachievable: Condition,
    irrelevant: Condition,
    body: Vec<GuardedAction>,
    combinator: Option<Combinator>,
    constraints: Vec<(String, String)>,
    independent: Vec<String>,
    line: usize,
}

/// Parses a team-oriented plan document into a structurally valid
/// [`TopSpec`]: unique names, known team references, acyclic temporal
/// constraints, every plan reachable from the root.
pub fn parse_top(text: &str) -> Result<TopSpec, TopError> {
    let mut lx = lex(text)?;
    let mut org_root: Option<OrgNode> = None;
    let mut criticality = BTreeMap::new();
    let mut plans: Vec<RawPlan> = Vec::new();

    while let Some(tok) = lx.peek().cloned() {
        match tok {
            Tok::Ident(kw) if kw == "org" => {
                lx.next();
                lx.expect(Tok::LBrace)?;
                let root = parse_org_node(&mut lx)?;
                lx.expect(Tok::RBrace)?;
                if org_root.replace(root).is_some() {
                    return Err(lx.err("duplicate org section"));
                }
            }
            Tok::Ident(kw) if kw == "criticality" => {
                lx.next();
                lx.expect(Tok::LBrace)?;
                while lx.peek() != Some(&Tok::RBrace) {
                    let role = lx.ident()?;
                    lx.expect(Tok::Colon)?;
                    let v = match lx.next() {
                        Some(Tok::Num(n)) if n == 0 || n == 1 => n as u8,
                        _ => return Err(lx.err("criticality must be 0 or 1")),
                    };
                    lx.expect(Tok::Semi)?;
                    criticality.insert(role, v);
                }
                lx.expect(Tok::RBrace)?;
            }
            Tok::Ident(kw) if kw == "plan" => {
                lx.next();
                plans.push(parse_plan_block(&mut lx)?);
            }
            other => return Err(lx.err(format!("expected org/criticality/plan, found {other:?}"))),
        }
    }

    let org_root = org_root.ok_or_else(|| lx.err("missing org section"))?;
    check_org_names(&org_root)?;
    if plans.is_empty() {
        return Err(lx.err("no plan blocks"));
    }
    let plan_root = resolve_plans(&org_root, plans)?;
    Ok(TopSpec { org_root, plan_root, criticality })
}

fn parse_org_node(lx: &mut Lexer) -> Result<OrgNode, TopError> {
    let name = lx.ident()?;
    let mut node = OrgNode {
        name,
        children: Vec::new(),
        leaf_role: None,
        condition_message: None,
        pool: None,
    };
    if lx.peek() == Some(&Tok::Pipe) {
        lx.next();
        node.condition_message = Some(lx.ident()?);
    }
    if lx.peek() == Some(&Tok::LParen) {
        lx.next();
        let kw = lx.ident()?;
        if kw != "pool" {
            return Err(lx.err("expected `pool` in parentheses"));
        }
        match lx.next() {
            Some(Tok::Num(n)) if n >= 0 => node.pool = Some(n as usize),
            _ => return Err(lx.err("expected pool size")),
        }
        lx.expect(Tok::RParen)?;
    }
    match lx.next() {
        Some(Tok::LBrace) => {
            while lx.peek() != Some(&Tok::RBrace) {
                node.children.push(parse_org_node(lx)?);
            }
            lx.expect(Tok::RBrace)?;
        }
        Some(Tok::Colon) => {
            node.leaf_role = Some(lx.ident()?);
            lx.expect(Tok::Semi)?;
        }
        other => return Err(lx.err(format!("expected `{{` or `:` in org node, found {other:?}"))),
    }
    Ok(node)
}

fn check_org_names(root: &OrgNode) -> Result<(), TopError> {
    fn walk(n: &OrgNode, seen: &mut BTreeSet<String>) -> Result<(), TopError> {
        if !seen.insert(n.name.clone()) {
            return Err(TopError::Parse {
                line: 0,
                reason: format!("duplicate organization node name `{}`", n.name),
            });
        }
        for c in &n.children {
            walk(c, seen)?;
        }
        Ok(())
    }
    let mut seen = BTreeSet::new();
    walk(root, &mut seen)
}

fn parse_plan_block(lx: &mut Lexer) -> Result<RawPlan, TopError> {
    let line = lx.line();
    let name = lx.ident()?;
    lx.expect(Tok::LBrace)?;
    let mut plan = RawPlan {
        name,
        team: String::new(),
        context: Condition::True,
        pre: Condition::True,
        achieved: Condition::False,
        unachievable: Condition::False,
        irrelevant: Condition::False,
        body: Vec::new(),
        combinator: None,
        constraints: Vec::new(),
        independent: Vec::new(),
        line,
    };
    while lx.peek() != Some(&Tok::RBrace) {
        let field = lx.ident()?;
        lx.expect(Tok::Colon)?;
        match field.as_str() {
            "team" => {
                plan.team = lx.ident()?;
                lx.expect(Tok::Semi)?;
            }
            "context" => {
                plan.context = parse_condition(lx)?;
                lx.expect(Tok::Semi)?;
            }
            "pre" => {
                plan.pre = parse_condition(lx)?;
                lx.expect(Tok::Semi)?;
            }
            "achieved" => {
                plan.achieved = parse_condition(lx)?;
                lx.expect(Tok::Semi)?;
            }
            "unachievable" => {
                plan.unachievable = parse_condition(lx)?;
                lx.expect(Tok::Semi)?;
            }
            "irrelevant" => {
                plan.irrelevant = parse_condition(lx)?;
                lx.expect(Tok::Semi)?;
            }
            "combinator" => {
                let c = lx.ident()?;
                plan.combinator = Some(match c.as_str() {
                    "AND" => Combinator::And,
                    "OR" => Combinator::Or,
                    _ => return Err(lx.err("combinator must be AND or OR")),
                });
                lx.expect(Tok::Semi)?;
            }
            "constraints" => {
                loop {
                    let a = lx.ident()?;
                    lx.expect(Tok::Arrow)?;
                    let b = lx.ident()?;
                    plan.constraints.push((a, b));
                    match lx.next() {
                        Some(Tok::Comma) => continue,
                        Some(Tok::Semi) => break,
                        other => {
                            return Err(lx.err(format!("expected `,` or `;`, found {other:?}")))
                        }
                    }
                }
            }
            "independent" => {
                while let Some(Tok::Ident(_)) = lx.peek() {
                    plan.independent.push(lx.ident()?);
                }
                lx.expect(Tok::Semi)?;
            }
            "body" => {
                lx.expect(Tok::LBracket)?;
                if lx.peek() != Some(&Tok::RBracket) {
                    loop {
                        let entry = parse_body_entry(lx)?;
                        plan.body.push(entry);
                        match lx.next() {
                            Some(Tok::Comma) => continue,
                            Some(Tok::RBracket) => break,
                            other => {
                                return Err(
                                    lx.err(format!("expected `,` or `]`, found {other:?}"))
                                )
                            }
                        }
                    }
                } else {
                    lx.next();
                }
                lx.expect(Tok::Semi)?;
            }
            other => return Err(lx.err(format!("unknown plan field `{other}`"))),
        }
    }
    lx.expect(Tok::RBrace)?;
    Ok(plan)
}

fn parse_body_entry(lx: &mut Lexer) -> Result<GuardedAction, TopError> {
    if lx.peek() == Some(&Tok::Ident("if".into())) {
        lx.next();
        let guard = parse_condition(lx)?;
        let kw = lx.ident()?;
        if kw != "then" {
            return Err(lx.err("expected `then` after body guard"));
        }
        let action = lx.ident()?;
        Ok(GuardedAction { guard, action })
    } else {
        let action = lx.ident()?;
        Ok(GuardedAction { guard: Condition::True, action })
    }
}

fn parse_condition(lx: &mut Lexer) -> Result<Condition, TopError> {
    parse_or(lx)
}

fn parse_or(lx: &mut Lexer) -> Result<Condition, TopError> {
    let mut terms = vec![parse_and(lx)?];
    while lx.peek() == Some(&Tok::Ident("or".into())) {
        lx.next();
        terms.push(parse_and(lx)?);
    }
    Ok(if terms.len() == 1 { terms.pop().unwrap() } else { Condition::Or(terms) })
}

fn parse_and(lx: &mut Lexer) -> Result<Condition, TopError> {
    let mut terms = vec![parse_factor(lx)?];
    while lx.peek() == Some(&Tok::Ident("and".into())) {
        lx.next();
        terms.push(parse_factor(lx)?);
    }
    Ok(if terms.len() == 1 { terms.pop().unwrap() } else { Condition::And(terms) })
}

fn parse_factor(lx: &mut Lexer) -> Result<Condition, TopError> {
    match lx.next() {
        Some(Tok::Ident(w)) if w == "not" => Ok(Condition::Not(Box::new(parse_factor(lx)?))),
        Some(Tok::LParen) => {
            let c = parse_condition(lx)?;
            lx.expect(Tok::RParen)?;
            Ok(c)
        }
        Some(Tok::Ident(w)) if w == "true" => Ok(Condition::True),
        Some(Tok::Ident(w)) if w == "false" => Ok(Condition::False),
        Some(Tok::Ident(name)) => {
            let op = match lx.peek() {
                Some(Tok::Lt) => Some(CmpOp::Lt),
                Some(Tok::Gt) => Some(CmpOp::Gt),
                Some(Tok::Eq) => Some(CmpOp::Eq),
                _ => None,
            };
            if let Some(op) = op {
                lx.next();
                match lx.next() {
                    Some(Tok::Num(v)) => Ok(Condition::Cmp { scalar: name, op, value: v }),
                    other => Err(lx.err(format!("expected number in comparison, found {other:?}"))),
                }
            } else {
                Ok(Condition::Prop(name))
            }
        }
        other => Err(lx.err(format!("expected condition, found {other:?}"))),
    }
}

fn resolve_plans(org: &OrgNode, raw: Vec<RawPlan>) -> Result<PlanNode, TopError> {
    let mut by_name: BTreeMap<String, RawPlan> = BTreeMap::new();
    for p in raw.iter() {
        if by_name.contains_key(&p.name) {
            return Err(TopError::Parse {
                line: p.line,
                reason: format!("duplicate plan name `{}`", p.name),
            });
        }
    }
    let root_name = raw[0].name.clone();
    for p in raw {
        by_name.insert(p.name.clone(), p);
    }
    let names: BTreeSet<String> = by_name.keys().cloned().collect();
    let org_roles = org.roles();

    fn build(
        name: &str,
        by_name: &BTreeMap<String, RawPlan>,
        names: &BTreeSet<String>,
        org: &OrgNode,
        org_roles: &BTreeSet<String>,
        visiting: &mut Vec<String>,
        used: &mut BTreeSet<String>,
    ) -> Result<PlanNode, TopError> {
        if visiting.iter().any(|v| v == name) {
            return Err(TopError::Parse {
                line: 0,
                reason: format!("plan reference cycle through `{name}`"),
            });
        }
        let raw = &by_name[name];
        used.insert(name.to_string());

        // A body entry naming another plan block is a child; anything else
        // is a primitive action. Mixing the two is rejected.
        let child_refs: Vec<&GuardedAction> =
            raw.body.iter().filter(|e| names.contains(&e.action)).collect();
        let body = if child_refs.is_empty() {
            PlanBody::Primitives(raw.body.clone())
        } else {
            if child_refs.len() != raw.body.len() {
                return Err(TopError::Parse {
                    line: raw.line,
                    reason: format!("plan `{name}` mixes child plans and primitives in body"),
                });
            }
            if raw.body.iter().any(|e| e.guard != Condition::True) {
                return Err(TopError::Parse {
                    line: raw.line,
                    reason: format!("plan `{name}` guards a child-plan reference"),
                });
            }
            visiting.push(name.to_string());
            let mut children = Vec::new();
            for e in &raw.body {
                children.push(build(&e.action, by_name, names, org, org_roles, visiting, used)?);
            }
            visiting.pop();
            PlanBody::Children(children)
        };

        // Team must be an org node or a role played somewhere in the org.
        if raw.team.is_empty()
            || (org.find(&raw.team).is_none() && !org_roles.contains(&raw.team))
        {
            return Err(TopError::UnknownTeam(raw.team.clone()));
        }

        let child_names: BTreeSet<&str> = match &body {
            PlanBody::Children(c) => c.iter().map(|p| p.name.as_str()).collect(),
            _ => BTreeSet::new(),
        };
        for (a, b) in &raw.constraints {
            if !child_names.contains(a.as_str()) || !child_names.contains(b.as_str()) {
                return Err(TopError::Parse {
                    line: raw.line,
                    reason: format!("constraint references non-child `{a}` -> `{b}`"),
                });
            }
        }
        for i in &raw.independent {
            if !child_names.contains(i.as_str()) {
                return Err(TopError::Parse {
                    line: raw.line,
                    reason: format!("independent lists non-child `{i}`"),
                });
            }
        }
        check_dag(&raw.name, &child_names, &raw.constraints)?;
        if raw.combinator.is_some() && child_names.len() < 2 {
            return Err(TopError::Parse {
                line: raw.line,
                reason: format!("combinator on plan `{name}` with fewer than 2 children"),
            });
        }

        Ok(PlanNode {
            name: raw.name.clone(),
            team: raw.team.clone(),
            context: raw.context.clone(),
            pre: raw.pre.clone(),
            achieved: raw.achieved.clone(),
            unachievable: raw.unachievable.clone(),
            irrelevant: raw.irrelevant.clone(),
            body,
            combinator: raw.combinator,
            constraints: raw.constraints.clone(),
            independent: raw.independent.clone(),
        })
    }

    let mut used = BTreeSet::new();
    let root = build(
        &root_name,
        &by_name,
        &names,
        org,
        &org_roles,
        &mut Vec::new(),
        &mut used,
    )?;
    for name in names.iter() {
        if !used.contains(name) {
            return Err(TopError::Parse {
                line: by_name[name].line,
                reason: format!("plan `{name}` is not reachable from the root plan"),
            });
        }
    }
    Ok(root)
}

fn check_dag(
    plan: &str,
    children: &BTreeSet<&str>,
    constraints: &[(String, String)],
) -> Result<(), TopError> {
    let mut indeg: BTreeMap<&str, usize> = children.iter().map(|&c| (c, 0)).collect();
    let mut adj: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for (a, b) in constraints {
        adj.entry(a.as_str()).or_default().push(b.as_str());
        *indeg.entry(b.as_str()).or_default() += 1;
    }
    let mut queue: Vec<&str> = indeg.iter().filter(|(_, &d)| d == 0).map(|(&n, _)| n).collect();
    let mut seen = 0;
    while let Some(n) = queue.pop() {
        seen += 1;
        for &m in adj.get(n).map(|v| v.as_slice()).unwrap_or(&[]) {
            let d = indeg.get_mut(m).unwrap();
            *d -= 1;
            if *d == 0 {
                queue.push(m);
            }
        }
    }
    if seen != children.len() {
        return Err(TopError::ConstraintCycle(plan.to_string()));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Binding and interpretation
// ---------------------------------------------------------------------------

/// Names of the propositions the interpreter reads by convention.
pub mod convention {
    pub const OWN_UNASSIGNED: &str = "own_unassigned";
    pub const OWN_DEAD: &str = "own_dead";
    pub fn own_role(role: &str) -> String {
        format!("own_role_{role}")
    }
    pub fn critical(team: &str) -> String {
        format!("critical_{team}")
    }
    pub fn message(tag: &str, value: i64) -> String {
        format!("msg_{tag}_{value}")
    }
}

/// A condition with propositions and scalars resolved to interned ids.
#[derive(Clone, Debug)]
enum BoundCond {
    True,
    False,
    Prop(PropId),
    Not(Box<BoundCond>),
    And(Vec<BoundCond>),
    Or(Vec<BoundCond>),
    Cmp { scalar: u16, op: CmpOp, value: i64 },
}

impl BoundCond {
    fn eval(&self, b: &BeliefState) -> bool {
        match self {
            BoundCond::True => true,
            BoundCond::False => false,
            BoundCond::Prop(p) => b.holds(*p),
            BoundCond::Not(c) => !c.eval(b),
            BoundCond::And(cs) => cs.iter().all(|c| c.eval(b)),
            BoundCond::Or(cs) => cs.iter().any(|c| c.eval(b)),
            BoundCond::Cmp { scalar, op, value } => match b.scalar(*scalar) {
                Some(v) => match op {
                    CmpOp::Lt => v < *value,
                    CmpOp::Gt => v > *value,
                    CmpOp::Eq => v == *value,
                },
                None => false,
            },
        }
    }
}

#[derive(Clone, Debug)]
enum BoundPrimitive {
    Noop,
    Exec(ExecId),
}

#[derive(Clone, Debug)]
enum BoundBody {
    Children(Vec<BoundPlan>),
    Primitives(Vec<(BoundCond, BoundPrimitive)>),
}

#[derive(Clone, Debug)]
struct BoundPlan {
    name: String,
    team_roles: BTreeSet<RoleId>,
    context: BoundCond,
    pre: BoundCond,
    achieved: BoundCond,
    unachievable: BoundCond,
    irrelevant: BoundCond,
    body: BoundBody,
    combinator: Option<Combinator>,
    /// predecessor child indices per child index
    preds: Vec<Vec<usize>>,
}

impl BoundPlan {
    fn children(&self) -> &[BoundPlan] {
        match &self.body {
            BoundBody::Children(c) => c,
            _ => &[],
        }
    }

    fn effective_achieved(&self, b: &BeliefState) -> bool {
        if self.achieved.eval(b) {
            return true;
        }
        match self.combinator {
            Some(Combinator::And) => {
                !self.children().is_empty()
                    && self.children().iter().all(|c| c.effective_achieved(b))
            }
            Some(Combinator::Or) => self.children().iter().any(|c| c.effective_achieved(b)),
            None => false,
        }
    }

    fn effective_unachievable(&self, b: &BeliefState) -> bool {
        if self.unachievable.eval(b) {
            return true;
        }
        match self.combinator {
            Some(Combinator::And) => self.children().iter().any(|c| c.effective_unachievable(b)),
            Some(Combinator::Or) => {
                !self.children().is_empty()
                    && self.children().iter().all(|c| c.effective_unachievable(b))
            }
            None => false,
        }
    }

    fn terminated(&self, b: &BeliefState) -> bool {
        self.effective_achieved(b) || self.effective_unachievable(b) || self.irrelevant.eval(b)
    }
}

/// Why the interpreter produced a no-op.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Diagnostic {
    /// No plan is active for this belief state.
    NoActivePlan,
    /// The deepest active plan has no runnable primitive (idle parent or all
    /// guards false).
    NoRunnablePrimitive { plan: String },
}

/// Decision produced before allocation choices are filled in.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum IncompleteDecision {
    Action(AgentAction),
    /// The agent sits at an open role-allocation decision point; `message`
    /// is the received value for conditioned points.
    Open { point: usize, message: Option<i64> },
    NoopWith(Diagnostic),
}

/// An open role-allocation decision point: which organization level it
/// fills, the agent slots it draws from, and (for conditioned points) the
/// message tag and value set it branches on.
#[derive(Clone, Debug)]
pub struct OpenDecisionPoint {
    pub id: usize,
    pub org_node: String,
    pub slots: std::ops::Range<usize>,
    /// Leaf teams allocated at this point, document order, with their roles.
    pub teams: Vec<(String, RoleId)>,
    pub message_tag: Option<String>,
    pub message_values: Vec<i64>,
}

struct InterpreterCore {
    root: BoundPlan,
    criticality: BTreeMap<String, u8>,
    /// Role id -> role name, for criticality lookups.
    role_names: Vec<String>,
    /// prop id of own_role_<r> per role id.
    own_role_props: Vec<PropId>,
    own_unassigned: PropId,
    own_dead: PropId,
    /// (team name, team role, critical prop), organization document order.
    critical_triggers: Vec<(String, RoleId, PropId)>,
    /// message props per open point: point id -> (value -> prop).
    message_props: Vec<BTreeMap<i64, PropId>>,
}

impl InterpreterCore {
    fn role_of(&self, b: &BeliefState) -> Option<Option<RoleId>> {
        if b.holds(self.own_unassigned) {
            return Some(None);
        }
        for (rid, p) in self.own_role_props.iter().enumerate() {
            if b.holds(*p) {
                return Some(Some(RoleId(rid as u16)));
            }
        }
        None
    }

    fn deepest_active<'a>(&'a self, plan: &'a BoundPlan, b: &BeliefState, role: RoleId) -> Option<&'a BoundPlan> {
        if !plan.team_roles.contains(&role) {
            return None;
        }
        if !plan.context.eval(b) || !plan.pre.eval(b) || plan.terminated(b) {
            return None;
        }
        let children = plan.children();
        for (i, child) in children.iter().enumerate() {
            let startable = plan.preds[i]
                .iter()
                .all(|&p| children[p].effective_achieved(b));
            if !startable {
                continue;
            }
            if let Some(d) = self.deepest_active(child, b, role) {
                return Some(d);
            }
        }
        Some(plan)
    }

    /// Plan-derived action for an assigned agent (no reallocation layer).
    fn plan_action(&self, b: &BeliefState, role: RoleId) -> (AgentAction, Option<Diagnostic>) {
        match self.deepest_active(&self.root, b, role) {
            None => (AgentAction::Noop, Some(Diagnostic::NoActivePlan)),
            Some(plan) => match &plan.body {
                BoundBody::Primitives(prims) => {
                    for (guard, prim) in prims {
                        if guard.eval(b) {
                            return match prim {
                                BoundPrimitive::Noop => (AgentAction::Noop, None),
                                BoundPrimitive::Exec(e) => (AgentAction::Exec(*e), None),
                            };
                        }
                    }
                    (
                        AgentAction::Noop,
                        Some(Diagnostic::NoRunnablePrimitive { plan: plan.name.clone() }),
                    )
                }
                BoundBody::Children(_) => (
                    AgentAction::Noop,
                    Some(Diagnostic::NoRunnablePrimitive { plan: plan.name.clone() }),
                ),
            },
        }
    }
}

/// A plan-derived policy with role-allocation decisions left open. Filling
/// the open points with an allocation leaf yields a complete joint policy;
/// everything else — plan interpretation and the reallocation rule — is
/// already fixed.
#[derive(Clone)]
pub struct IncompletePolicy {
    core: Arc<InterpreterCore>,
    open_points: Vec<OpenDecisionPoint>,
    n_agents: usize,
    vocab: Arc<PropCatalog>,
}

impl IncompletePolicy {
    pub fn open_points(&self) -> &[OpenDecisionPoint] {
        &self.open_points
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    pub fn vocab(&self) -> &Arc<PropCatalog> {
        &self.vocab
    }

    /// The decision at a belief state, with allocation points left open and
    /// no-op fallbacks reported with a diagnostic.
    pub fn decide_incomplete(&self, agent: usize, belief: &BeliefState) -> IncompleteDecision {
        let core = &self.core;
        if belief.holds(core.own_dead) {
            return IncompleteDecision::Action(AgentAction::Noop);
        }
        match core.role_of(belief) {
            None => IncompleteDecision::NoopWith(Diagnostic::NoActivePlan),
            Some(None) => {
                // Unassigned: this is an open allocation decision.
                for p in &self.open_points {
                    if !p.slots.contains(&agent) {
                        continue;
                    }
                    return match &p.message_tag {
                        None => IncompleteDecision::Open { point: p.id, message: None },
                        Some(_) => {
                            for (&v, prop) in &core.message_props[p.id] {
                                if belief.holds(*prop) {
                                    return IncompleteDecision::Open {
                                        point: p.id,
                                        message: Some(v),
                                    };
                                }
                            }
                            // Message not yet received: wait.
                            IncompleteDecision::Action(AgentAction::Noop)
                        }
                    };
                }
                IncompleteDecision::NoopWith(Diagnostic::NoActivePlan)
            }
            Some(Some(role)) => {
                let (a, diag) = core.plan_action(belief, role);
                match diag {
                    Some(d) if a == AgentAction::Noop => IncompleteDecision::NoopWith(d),
                    _ => IncompleteDecision::Action(a),
                }
            }
        }
    }
}

/// Derives the incomplete policy for a plan document against a model:
/// binds condition propositions, primitive actions, and team role sets;
/// computes the open allocation decision points from the organization's
/// pools and conditioned nodes. `messages` supplies the value set per
/// message tag for conditioned points.
pub fn derive_incomplete_policy(
    top: &TopSpec,
    model: &RmtdpModel,
    vocab: &mut PropCatalog,
    messages: &BTreeMap<String, Vec<i64>>,
) -> Result<IncompletePolicy, TopError> {
    // Role bindings.
    let mut role_by_name: BTreeMap<String, RoleId> = BTreeMap::new();
    for role in top.org_root.roles() {
        let id = model.role_id(&role).ok_or_else(|| TopError::UnboundRole(role.clone()))?;
        role_by_name.insert(role, id);
    }
    for role in role_by_name.keys() {
        if !top.criticality.contains_key(role) {
            return Err(TopError::MissingCriticality(role.clone()));
        }
    }

    // Convention props.
    let own_unassigned = vocab.intern(convention::OWN_UNASSIGNED);
    let own_dead = vocab.intern(convention::OWN_DEAD);
    let mut own_role_props = vec![PropId(0); model.roles.len()];
    for (name, id) in &role_by_name {
        own_role_props[id.0 as usize] = vocab.intern(&convention::own_role(name));
    }

    // Open decision points: organization pools in document order. A node
    // with an explicit pool roots its own point; with no pools anywhere the
    // root is the single point covering every agent.
    let mut pools: Vec<&OrgNode> = Vec::new();
    fn find_pools<'a>(n: &'a OrgNode, out: &mut Vec<&'a OrgNode>) {
        if n.pool.is_some() {
            out.push(n);
        } else {
            for c in &n.children {
                find_pools(c, out);
            }
        }
    }
    for c in &top.org_root.children {
        find_pools(c, &mut pools);
    }
    let mut open_points = Vec::new();
    let mut message_props: Vec<BTreeMap<i64, PropId>> = Vec::new();
    if pools.is_empty() {
        open_points.push(make_point(0, &top.org_root, 0..model.n_agents, &role_by_name)?);
        message_props.push(BTreeMap::new());
    } else {
        let mut offset = 0;
        for node in pools {
            let size = node.pool.unwrap();
            let mut point =
                make_point(open_points.len(), node, offset..offset + size, &role_by_name)?;
            let mut props = BTreeMap::new();
            if let Some(tag) = &node.condition_message {
                let values = messages.get(tag).cloned().unwrap_or_default();
                for &v in &values {
                    props.insert(v, vocab.intern(&convention::message(tag, v)));
                }
                point.message_values = values;
            }
            open_points.push(point);
            message_props.push(props);
            offset += size;
        }
        if offset != model.n_agents {
            return Err(TopError::PoolMismatch { got: offset, want: model.n_agents });
        }
    }

    // Criticality triggers per leaf team, document order.
    let mut critical_triggers = Vec::new();
    for team in top.org_root.leaf_teams() {
        let role = team.leaf_role.as_ref().unwrap();
        let rid = role_by_name[role];
        let prop = vocab.intern(&convention::critical(&team.name));
        critical_triggers.push((team.name.clone(), rid, prop));
    }

    // Bind the plan tree.
    let root = bind_plan(&top.plan_root, top, model, &role_by_name, vocab)?;

    let role_names: Vec<String> = model.roles.iter().map(|r| r.name.clone()).collect();
    let core = InterpreterCore {
        root,
        criticality: top.criticality.clone(),
        role_names,
        own_role_props,
        own_unassigned,
        own_dead,
        critical_triggers,
        message_props,
    };
    Ok(IncompletePolicy {
        core: Arc::new(core),
        open_points,
        n_agents: model.n_agents,
        vocab: Arc::new(vocab.clone()),
    })
}

fn make_point(
    id: usize,
    node: &OrgNode,
    slots: std::ops::Range<usize>,
    roles: &BTreeMap<String, RoleId>,
) -> Result<OpenDecisionPoint, TopError> {
    let mut teams = Vec::new();
    for leaf in node.leaf_teams() {
        let role = leaf.leaf_role.as_ref().unwrap();
        teams.push((leaf.name.clone(), roles[role]));
    }
    Ok(OpenDecisionPoint {
        id,
        org_node: node.name.clone(),
        slots,
        teams,
        message_tag: node.condition_message.clone(),
        message_values: Vec::new(),
    })
}

fn bind_plan(
    plan: &PlanNode,
    top: &TopSpec,
    model: &RmtdpModel,
    roles: &BTreeMap<String, RoleId>,
    vocab: &mut PropCatalog,
) -> Result<BoundPlan, TopError> {
    // Team role set: an org node's roles, or the single named role.
    let team_roles: BTreeSet<RoleId> = match top.org_root.find(&plan.team) {
        Some(node) => node.roles().iter().map(|r| roles[r]).collect(),
        None => {
            let rid = roles
                .get(&plan.team)
                .ok_or_else(|| TopError::UnknownTeam(plan.team.clone()))?;
            std::iter::once(*rid).collect()
        }
    };

    let body = match &plan.body {
        PlanBody::Children(children) => {
            let mut bound = Vec::new();
            for c in children {
                bound.push(bind_plan(c, top, model, roles, vocab)?);
            }
            BoundBody::Children(bound)
        }
        PlanBody::Primitives(prims) => {
            let mut bound = Vec::new();
            for p in prims {
                let prim = if p.action == "noop" {
                    BoundPrimitive::Noop
                } else {
                    let e = model.exec_id(&p.action).ok_or_else(|| TopError::UnboundAction {
                        plan: plan.name.clone(),
                        action: p.action.clone(),
                    })?;
                    BoundPrimitive::Exec(e)
                };
                bound.push((bind_cond(&p.guard, vocab), prim));
            }
            BoundBody::Primitives(bound)
        }
    };

    let children = plan.children();
    let mut preds = vec![Vec::new(); children.len()];
    for (a, b) in &plan.constraints {
        let ai = children.iter().position(|c| &c.name == a).unwrap();
        let bi = children.iter().position(|c| &c.name == b).unwrap();
        preds[bi].push(ai);
    }

    Ok(BoundPlan {
        name: plan.name.clone(),
        team_roles,
        context: bind_cond(&plan.context, vocab),
        pre: bind_cond(&plan.pre, vocab),
        achieved: bind_cond(&plan.achieved, vocab),
        unachievable: bind_cond(&plan.unachievable, vocab),
        irrelevant: bind_cond(&plan.irrelevant, vocab),
        body,
        combinator: plan.combinator,
        preds,
    })
}

fn bind_cond(c: &Condition, vocab: &mut PropCatalog) -> BoundCond {
    match c {
        Condition::True => BoundCond::True,
        Condition::False => BoundCond::False,
        Condition::Prop(name) => BoundCond::Prop(vocab.intern(name)),
        Condition::Not(inner) => BoundCond::Not(Box::new(bind_cond(inner, vocab))),
        Condition::And(cs) => BoundCond::And(cs.iter().map(|x| bind_cond(x, vocab)).collect()),
        Condition::Or(cs) => BoundCond::Or(cs.iter().map(|x| bind_cond(x, vocab)).collect()),
        Condition::Cmp { scalar, op, value } => {
            // Scalars share the proposition namespace for id purposes.
            let id = vocab.intern(&format!("scalar_{scalar}"));
            BoundCond::Cmp { scalar: id.0 as u16, op: *op, value: *value }
        }
    }
}

// ---------------------------------------------------------------------------
// Completion
// ---------------------------------------------------------------------------

/// Completes an incomplete policy with a role allocation: every open
/// decision point's agents get the role-taking action the allocation
/// assigns them (per message branch for conditioned points), and a
/// criticality-based replacement layer fills the rest of the role-taking
/// policy. All plan-derived entries are identical to the incomplete policy.
pub fn complete_policy(
    incomplete: &IncompletePolicy,
    allocation: &AllocationLeaf,
) -> Result<JointPolicy, TopError> {
    let core = incomplete.core.clone();
    let n = incomplete.n_agents;

    // slot -> role at t = 0 (unconditioned points), and slot -> (message ->
    // role) for conditioned points.
    let mut initial_role: Vec<Option<RoleId>> = vec![None; n];
    let mut conditioned: Vec<BTreeMap<i64, RoleId>> = vec![BTreeMap::new(); n];

    for point in &incomplete.open_points {
        match &point.message_tag {
            None => {
                let assignment = point_assignment(point, &allocation.counts)?;
                for (slot, role) in point.slots.clone().zip(assignment) {
                    initial_role[slot] = Some(role);
                }
            }
            Some(tag) => {
                for &value in &point.message_values {
                    let counts = allocation.branches.get(&value).ok_or_else(|| {
                        TopError::MissingBranch { tag: tag.clone(), value }
                    })?;
                    let assignment = point_assignment(point, counts)?;
                    for (slot, role) in point.slots.clone().zip(assignment) {
                        conditioned[slot].insert(value, role);
                    }
                }
            }
        }
    }

    // Designated replacer per candidate role: the lowest slot initially
    // assigned that role. Exactly one agent volunteers per critical failure,
    // which keeps the decentralized rule deterministic.
    let mut designated: BTreeMap<RoleId, usize> = BTreeMap::new();
    for (slot, role) in initial_role.iter().enumerate() {
        if let Some(r) = role {
            designated.entry(*r).or_insert(slot);
        }
    }

    let open_points = incomplete.open_points.clone();
    Ok(JointPolicy::from_rule(IndexKind::BeliefState, n, move |agent, index| {
        let belief = match index {
            PolicyIndex::Belief(b) => b,
            PolicyIndex::History(_) => return None,
        };
        if belief.holds(core.own_dead) {
            return Some(AgentAction::Noop);
        }
        let role = core.role_of(belief)?;
        match role {
            None => {
                // Allocation decision point.
                for p in &open_points {
                    if !p.slots.contains(&agent) {
                        continue;
                    }
                    return match &p.message_tag {
                        None => initial_role[agent].map(AgentAction::Take),
                        Some(_) => {
                            for (&v, prop) in &core.message_props[p.id] {
                                if belief.holds(*prop) {
                                    return conditioned[agent].get(&v).map(|r| AgentAction::Take(*r));
                                }
                            }
                            Some(AgentAction::Noop)
                        }
                    };
                }
                Some(AgentAction::Noop)
            }
            Some(my_role) => {
                // Reallocation layer: replace a critically failed role
                // holder when the criticality rule fires and this agent is
                // the designated volunteer for its own role.
                for (_team, failed_role, prop) in &core.critical_triggers {
                    if !belief.holds(*prop) {
                        continue;
                    }
                    let failed_name = &core.role_names[failed_role.0 as usize];
                    let my_name = &core.role_names[my_role.0 as usize];
                    let replace = steam_reallocate(&core.criticality, failed_name, my_name)
                        .unwrap_or(false);
                    if replace && designated.get(&my_role) == Some(&agent) {
                        return Some(AgentAction::Take(*failed_role));
                    }
                }
                let (a, _diag) = core.plan_action(belief, my_role);
                Some(a)
            }
        }
    }))
}

fn point_assignment(
    point: &OpenDecisionPoint,
    counts: &[(String, usize)],
) -> Result<Vec<RoleId>, TopError> {
    let pool = point.slots.len();
    let mut out = Vec::with_capacity(pool);
    let mut total = 0;
    for (team, role) in &point.teams {
        let c = counts
            .iter()
            .find(|(t, _)| t == team)
            .map(|(_, c)| *c)
            .unwrap_or(0);
        total += c;
        out.extend(std::iter::repeat(*role).take(c));
    }
    if total != pool {
        return Err(TopError::CountMismatch {
            team: point.org_node.clone(),
            got: total,
            want: pool,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINI_DOC: &str = r#"
org {
  Team {
    A: roleA;
    B: roleB;
  }
}
criticality { roleA: 1; roleB: 0; }
plan Root {
  team: Team;
  body: [First, Second, Third];
  constraints: First -> Second, First -> Third;
}
plan First { team: A; achieved: done_first; body: [act]; }
plan Second { team: B; body: [act]; }
plan Third { team: A; body: [act]; }
"#;

    #[test]
    fn parses_root_with_three_children_and_two_constraints() {
        let top = parse_top(MINI_DOC).unwrap();
        assert_eq!(top.plan_root.children().len(), 3);
        assert_eq!(top.plan_root.constraints.len(), 2);
        assert_eq!(top.org_root.leaf_teams().len(), 2);
        assert_eq!(top.criticality["roleA"], 1);
    }

    #[test]
    fn parses_minimal_single_node_plan() {
        let doc = r#"
org { T: r; }
criticality { r: 0; }
plan Only { team: T; body: []; }
"#;
        let top = parse_top(doc).unwrap();
        assert_eq!(top.plan_root.name, "Only");
        assert!(top.plan_root.children().is_empty());
    }

    #[test]
    fn rejects_constraint_cycle() {
        let doc = r#"
org { T: r; }
criticality { r: 0; }
plan Root { team: T; body: [A, B]; constraints: A -> B, B -> A; }
plan A { team: T; body: [x]; }
plan B { team: T; body: [x]; }
"#;
        match parse_top(doc) {
            Err(TopError::ConstraintCycle(p)) => assert_eq!(p, "Root"),
            other => panic!("expected cycle error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_unknown_team() {
        let doc = r#"
org { T: r; }
criticality { r: 0; }
plan Root { team: Nowhere; body: [x]; }
"#;
        assert!(matches!(parse_top(doc), Err(TopError::UnknownTeam(t)) if t == "Nowhere"));
    }

    #[test]
    fn steam_rule_matches_criticality_difference() {
        let mut crit = BTreeMap::new();
        crit.insert("scout".to_string(), 1u8);
        crit.insert("transport".to_string(), 0u8);
        // Failed critical scout, non-critical transport candidate: replace.
        assert!(steam_reallocate(&crit, "scout", "transport").unwrap());
        // Both critical: 1 - 1 = 0, no replacement.
        assert!(!steam_reallocate(&crit, "scout", "scout").unwrap());
        // Failed non-critical, candidate critical: negative difference.
        assert!(!steam_reallocate(&crit, "transport", "scout").unwrap());
        assert!(matches!(
            steam_reallocate(&crit, "pilot", "scout"),
            Err(TopError::MissingCriticality(_))
        ));
    }

    #[test]
    fn condition_language_round_trips_semantics() {
        let doc = r#"
org { T: r; }
criticality { r: 0; }
plan Root { team: T; pre: p and (q or not s); body: [if t < 3 then act, noop]; }
"#;
        let top = parse_top(doc).unwrap();
        match &top.plan_root.pre {
            Condition::And(terms) => assert_eq!(terms.len(), 2),
            other => panic!("unexpected pre {other:?}"),
        }
        match &top.plan_root.body {
            PlanBody::Primitives(prims) => {
                assert_eq!(prims.len(), 2);
                assert!(matches!(prims[0].guard, Condition::Cmp { .. }));
                assert_eq!(prims[1].action, "noop");
            }
            _ => panic!("expected primitives"),
        }
    }
}
