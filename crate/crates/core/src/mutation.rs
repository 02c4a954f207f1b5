//! Mutation declarations, compatibility predicates and the exhaustive
//! backward-unification chain finder used as a reference oracle.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use uuid::Uuid;

use crate::error::{IncompatibleError, MutationSpecError};
use crate::schema::{value_of, StateMap, StateSchema, UNKNOWN};

pub const DEFAULT_TIMEOUT_TICKS: u64 = 10;

/// Where a mutation executes relative to the node it changes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MutationContext {
    /// On the node's own engine.
    #[default]
    #[serde(rename = "self")]
    SelfNode,
    /// On the parent's engine, targeting the child.
    #[serde(rename = "child")]
    Child,
}

impl fmt::Display for MutationContext {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MutationContext::SelfNode => "self",
            MutationContext::Child => "child",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "(String, String)", into = "(String, String)")]
pub struct Transition {
    pub from: String,
    pub to: String,
}

impl From<(String, String)> for Transition {
    fn from((from, to): (String, String)) -> Self {
        Self { from, to }
    }
}

impl From<Transition> for (String, String) {
    fn from(t: Transition) -> Self {
        (t.from, t.to)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MutationSpec {
    pub name: String,
    pub mutates: BTreeMap<String, Transition>,
    #[serde(default)]
    pub requires: StateMap,
    #[serde(default)]
    pub context: MutationContext,
    #[serde(default = "default_timeout")]
    pub timeout_ticks: u64,
    /// Discovered-side assignments applied when the mutation fails. `None`
    /// resets every mutated variable to `unknown`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fail_to: Option<StateMap>,
}

fn default_timeout() -> u64 {
    DEFAULT_TIMEOUT_TICKS
}

impl MutationSpec {
    pub fn new(name: &str) -> Self {
        Self {
            name: name.to_string(),
            mutates: BTreeMap::new(),
            requires: StateMap::new(),
            context: MutationContext::SelfNode,
            timeout_ticks: DEFAULT_TIMEOUT_TICKS,
            fail_to: None,
        }
    }

    pub fn mutates(mut self, variable: &str, from: &str, to: &str) -> Self {
        self.mutates.insert(
            variable.to_string(),
            Transition {
                from: from.to_string(),
                to: to.to_string(),
            },
        );
        self
    }

    pub fn requires(mut self, variable: &str, value: &str) -> Self {
        self.requires.insert(variable.to_string(), value.to_string());
        self
    }

    pub fn context(mut self, context: MutationContext) -> Self {
        self.context = context;
        self
    }

    pub fn timeout(mut self, ticks: u64) -> Self {
        self.timeout_ticks = ticks;
        self
    }

    pub fn fail_to(mut self, variable: &str, value: &str) -> Self {
        self.fail_to
            .get_or_insert_with(StateMap::new)
            .insert(variable.to_string(), value.to_string());
        self
    }

    /// Whether this mutation makes `variable` known.
    pub fn discovers(&self, variable: &str) -> bool {
        self.mutates.get(variable).is_some_and(|t| t.from == UNKNOWN)
    }

    pub fn is_discovery(&self) -> bool {
        self.mutates.values().any(|t| t.from == UNKNOWN)
    }

    /// Assignments applied to the discovered side on failure.
    pub fn failure_assignments(&self) -> StateMap {
        match &self.fail_to {
            Some(map) => map.clone(),
            None => self
                .mutates
                .keys()
                .map(|k| (k.clone(), UNKNOWN.to_string()))
                .collect(),
        }
    }

    /// Whether `state` satisfies every entry of `requires`. An absent
    /// entry reads as `unknown`, which only an explicit `unknown` matches.
    pub fn requirements_met(&self, state: &StateMap) -> bool {
        self.requires.iter().all(|(k, v)| value_of(state, k) == v)
    }

    /// Requirement check restricted to variables outside `mutation_vars`.
    pub fn context_met(&self, context: &StateMap, schema: &StateSchema) -> bool {
        self.requires
            .iter()
            .filter(|(k, _)| !schema.is_mutation(k))
            .all(|(k, v)| value_of(context, k) == v)
    }
}

/// Assigns `value`, keeping absence as the canonical form of `unknown`.
pub fn assign(state: &mut StateMap, variable: &str, value: &str) {
    if value == UNKNOWN {
        state.remove(variable);
    } else {
        state.insert(variable.to_string(), value.to_string());
    }
}

/// Removes explicit `unknown` entries.
pub fn canonical(state: &StateMap) -> StateMap {
    state
        .iter()
        .filter(|(_, v)| v.as_str() != UNKNOWN)
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect()
}

pub fn compatible_out(state: &StateMap, m: &MutationSpec) -> bool {
    m.requirements_met(state) && m.mutates.iter().all(|(k, t)| value_of(state, k) == t.from)
}

pub fn compatible_in(state: &StateMap, m: &MutationSpec) -> bool {
    m.mutates.iter().all(|(k, t)| value_of(state, k) == t.to) && compatible_out(&rewind(state, m), m)
}

/// `state` with every mutated variable set back to its from-value.
pub fn rewind(state: &StateMap, m: &MutationSpec) -> StateMap {
    let mut out = canonical(state);
    for (k, t) in &m.mutates {
        assign(&mut out, k, &t.from);
    }
    out
}

pub fn unify(state: &StateMap, m: &MutationSpec) -> Result<StateMap, IncompatibleError> {
    if !compatible_out(state, m) {
        return Err(IncompatibleError {
            mutation: m.name.clone(),
        });
    }
    let mut out = canonical(state);
    for (k, t) in &m.mutates {
        assign(&mut out, k, &t.to);
    }
    Ok(out)
}

/// A validated, name-ordered collection of mutations over one schema.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MutationSet {
    schema: StateSchema,
    mutations: Vec<MutationSpec>,
}

impl MutationSet {
    pub fn new(
        schema: StateSchema,
        mutations: impl IntoIterator<Item = MutationSpec>,
    ) -> Result<Self, MutationSpecError> {
        let mut mutations: Vec<MutationSpec> = mutations.into_iter().collect();
        mutations.sort_by(|a, b| a.name.cmp(&b.name));
        let mut behaviors: BTreeMap<(&BTreeMap<String, Transition>, &StateMap), &str> = BTreeMap::new();
        for (i, m) in mutations.iter().enumerate() {
            validate_mutation(&schema, m)?;
            if i > 0 && mutations[i - 1].name == m.name {
                return Err(MutationSpecError::DuplicateName(m.name.clone()));
            }
            if let Some(first) = behaviors.insert((&m.mutates, &m.requires), &m.name) {
                return Err(MutationSpecError::DuplicateBehavior(
                    first.to_string(),
                    m.name.clone(),
                ));
            }
        }
        Ok(Self { schema, mutations })
    }

    pub fn schema(&self) -> &StateSchema {
        &self.schema
    }

    pub fn mutations(&self) -> &[MutationSpec] {
        &self.mutations
    }

    pub fn get(&self, name: &str) -> Option<&MutationSpec> {
        self.mutations
            .binary_search_by(|m| m.name.as_str().cmp(name))
            .ok()
            .map(|i| &self.mutations[i])
    }

    /// Mutation variables that some mutation can discover.
    pub fn discoverable_variables(&self) -> BTreeSet<&str> {
        self.mutations
            .iter()
            .flat_map(|m| m.mutates.iter())
            .filter(|(_, t)| t.from == UNKNOWN)
            .map(|(k, _)| k.as_str())
            .collect()
    }

    /// Mutation variables that no mutation discovers.
    pub fn undiscoverable_variables(&self) -> Vec<&str> {
        let known = self.discoverable_variables();
        self.schema
            .mutation_variables()
            .map(|v| v.name.as_str())
            .filter(|v| !known.contains(v))
            .collect()
    }

    /// Product of enumeration sizes over the mutation variables.
    pub fn state_space_size(&self) -> u128 {
        state_space_size(&self.schema)
    }
}

pub fn state_space_size(schema: &StateSchema) -> u128 {
    schema
        .mutation_variables()
        .map(|v| v.values().map_or(1, |vals| vals.len() as u128))
        .product()
}

fn validate_mutation(schema: &StateSchema, m: &MutationSpec) -> Result<(), MutationSpecError> {
    if m.name.is_empty() {
        return Err(MutationSpecError::EmptyName);
    }
    if m.mutates.is_empty() {
        return Err(MutationSpecError::EmptyMutates(m.name.clone()));
    }
    let invalid = |source| MutationSpecError::Invalid {
        mutation: m.name.clone(),
        source,
    };
    for (var, t) in &m.mutates {
        if schema.variable(var).is_some() && !schema.is_mutation(var) {
            return Err(MutationSpecError::NotMutationVariable {
                mutation: m.name.clone(),
                variable: var.clone(),
            });
        }
        schema.validate(var, &t.from).map_err(invalid)?;
        schema.validate(var, &t.to).map_err(invalid)?;
        if t.from == t.to {
            return Err(MutationSpecError::SelfTransition {
                mutation: m.name.clone(),
                variable: var.clone(),
                value: t.from.clone(),
            });
        }
    }
    for (var, value) in &m.requires {
        schema.validate(var, value).map_err(invalid)?;
    }
    for (var, value) in m.fail_to.iter().flatten() {
        if !m.mutates.contains_key(var) {
            return Err(MutationSpecError::FailToOutsideMutates {
                mutation: m.name.clone(),
                variable: var.clone(),
            });
        }
        schema.validate(var, value).map_err(invalid)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainStep {
    pub mutation: String,
    pub pre: StateMap,
    pub post: StateMap,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MutationChain {
    pub node: Uuid,
    pub steps: Vec<ChainStep>,
    pub cursor: usize,
}

impl MutationChain {
    pub fn new(node: Uuid, steps: Vec<ChainStep>) -> Self {
        Self {
            node,
            steps,
            cursor: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn names(&self) -> Vec<&str> {
        self.steps.iter().map(|s| s.mutation.as_str()).collect()
    }

    pub fn current(&self) -> Option<&ChainStep> {
        self.steps.get(self.cursor)
    }

    pub fn is_complete(&self) -> bool {
        self.cursor >= self.steps.len()
    }

    /// Visited states in order, starting with the first pre-state.
    pub fn states(&self) -> Vec<&StateMap> {
        self.steps
            .first()
            .map(|s| &s.pre)
            .into_iter()
            .chain(self.steps.iter().map(|s| &s.post))
            .collect()
    }

    /// No state occurs twice when restricted to the mutation variables.
    pub fn has_unique_states(&self, schema: &StateSchema) -> bool {
        let mut seen = HashSet::new();
        self.states()
            .into_iter()
            .all(|s| seen.insert(project(s, schema)))
    }
}

/// Restriction of `state` to the mutation variables, in canonical form.
pub fn project(state: &StateMap, schema: &StateSchema) -> StateMap {
    state
        .iter()
        .filter(|(k, v)| schema.is_mutation(k) && v.as_str() != UNKNOWN)
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect()
}

/// Whether `state` satisfies every mutation-variable demand of `goal`.
pub fn satisfies(state: &StateMap, goal: &StateMap, schema: &StateSchema) -> bool {
    goal.iter()
        .filter(|(k, _)| schema.is_mutation(k))
        .all(|(k, v)| value_of(state, k) == v)
}

/// Exhaustive backward search from the goal toward `start`.
///
/// Each completion of the goal over the mutation variables it leaves free is
/// tried in turn. From a goal state the search rewinds every in-compatible
/// mutation depth-first, never revisiting a state, until it reaches a state
/// equal to `start` on the mutation variables; that path, inverted, is the
/// chain. Context variables are taken from `start` throughout. Returns
/// `None` when no chain exists. The chain need not be shortest.
pub fn oracle_chain(
    start: &StateMap,
    goal: &StateMap,
    set: &MutationSet,
) -> Option<MutationChain> {
    let schema = set.schema();
    let context: StateMap = start
        .iter()
        .filter(|(k, v)| !schema.is_mutation(k) && v.as_str() != UNKNOWN)
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect();
    let target = project(start, schema);
    let at_start = |state: &StateMap| project(state, schema) == target;
    let mut seen: HashSet<StateMap> = HashSet::new();

    for candidate in goal_completions(start, goal, schema) {
        let mut candidate_state = context.clone();
        candidate_state.extend(candidate);
        if !seen.insert(candidate_state.clone()) {
            continue;
        }
        // Frames hold a state, the next mutation index to try, and the
        // mutation that led here backward from the frame below.
        let mut stack: Vec<(StateMap, usize, Option<usize>)> = vec![(candidate_state, 0, None)];
        let mutations = set.mutations();
        while let Some(top) = stack.last_mut() {
            let state = top.0.clone();
            if at_start(&state) {
                return Some(invert(&stack, set));
            }
            let mut next = None;
            while top.1 < mutations.len() {
                let i = top.1;
                top.1 += 1;
                let m = &mutations[i];
                if !compatible_in(&state, m) {
                    continue;
                }
                let prev = rewind(&state, m);
                if seen.insert(prev.clone()) {
                    next = Some((prev, i));
                    break;
                }
            }
            match next {
                Some((prev, i)) => stack.push((prev, 0, Some(i))),
                None => {
                    stack.pop();
                }
            }
        }
    }
    None
}

fn invert(stack: &[(StateMap, usize, Option<usize>)], set: &MutationSet) -> MutationChain {
    let steps = stack
        .windows(2)
        .rev()
        .map(|w| {
            let mutation = &set.mutations()[w[1].2.expect("pushed frames record a mutation")];
            ChainStep {
                mutation: mutation.name.clone(),
                pre: w[1].0.clone(),
                post: w[0].0.clone(),
            }
        })
        .collect();
    MutationChain::new(Uuid::nil(), steps)
}

/// Full mutation-variable states that satisfy `goal`, free variables ranging
/// over their enumerations with the start's value tried first.
fn goal_completions(start: &StateMap, goal: &StateMap, schema: &StateSchema) -> Vec<StateMap> {
    let mut out = vec![StateMap::new()];
    for var in schema.mutation_variables() {
        let choices: Vec<String> = match goal.get(&var.name) {
            Some(v) => vec![v.clone()],
            None => {
                let first = value_of(start, &var.name).to_string();
                let mut values = vec![first.clone()];
                values.extend(
                    var.values()
                        .unwrap_or_default()
                        .iter()
                        .filter(|v| **v != first)
                        .cloned(),
                );
                values
            }
        };
        out = out
            .into_iter()
            .flat_map(|partial| {
                choices.iter().map(move |value| {
                    let mut next = partial.clone();
                    assign(&mut next, &var.name, value);
                    next
                })
            })
            .collect();
    }
    out
}
