//! Dual-copy node state store.
//!
//! Every node carries a configured map (the goal, owned by the operator or
//! the parent) and a discovered map (the observation, owned by whoever can
//! inspect the node). Writes are validated against the schema, applied
//! atomically and announced on the event bus as `STATE_CHANGE`.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use uuid::Uuid;

use crate::error::{StoreError, ValidationError};
use crate::event::{EventBus, Payload};
use crate::schema::{value_of, StateMap, StateSchema, UNKNOWN};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Configured,
    Discovered,
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::Configured => "configured",
            Side::Discovered => "discovered",
        })
    }
}

impl std::str::FromStr for Side {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "configured" => Ok(Side::Configured),
            "discovered" => Ok(Side::Discovered),
            other => Err(format!("unknown side `{other}`")),
        }
    }
}

/// Coarse sync lifecycle of a node as seen by the local engine.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunPhase {
    #[default]
    Init,
    Syncing,
    Dead,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub id: Uuid,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<Uuid>,
    #[serde(default)]
    pub configured: StateMap,
    #[serde(default)]
    pub discovered: StateMap,
    #[serde(default)]
    pub run_phase: RunPhase,
}

impl NodeRecord {
    pub fn new(id: Uuid) -> Self {
        Self {
            id,
            parent: None,
            configured: StateMap::new(),
            discovered: StateMap::new(),
            run_phase: RunPhase::Init,
        }
    }

    pub fn with_parent(mut self, parent: Uuid) -> Self {
        self.parent = Some(parent);
        self
    }

    pub fn side(&self, side: Side) -> &StateMap {
        match side {
            Side::Configured => &self.configured,
            Side::Discovered => &self.discovered,
        }
    }

    fn side_mut(&mut self, side: Side) -> &mut StateMap {
        match side {
            Side::Configured => &mut self.configured,
            Side::Discovered => &mut self.discovered,
        }
    }

    /// Configured overlaid by discovered, used to evaluate context requirements.
    pub fn merged(&self) -> StateMap {
        let mut merged = self.configured.clone();
        merged.extend(self.discovered.iter().map(|(k, v)| (k.clone(), v.clone())));
        merged
    }
}

/// One variable's transition within a write. `None` means the entry is
/// absent, which reads as `unknown`; on the configured side an explicit
/// `unknown` is a demand and therefore differs from absence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateChange {
    pub variable: String,
    pub old: Option<String>,
    pub new: Option<String>,
}

impl StateChange {
    pub fn old_value(&self) -> &str {
        self.old.as_deref().unwrap_or(UNKNOWN)
    }

    pub fn new_value(&self) -> &str {
        self.new.as_deref().unwrap_or(UNKNOWN)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateDelta {
    pub node: Uuid,
    pub side: Side,
    pub changes: Vec<StateChange>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateValue {
    pub variable: String,
    pub value: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiffEntry {
    pub variable: String,
    pub configured: String,
    pub discovered: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QueryResult {
    Nodes(Vec<NodeRecord>),
    Values(Vec<StateValue>),
}

/// Whether this engine instance may write a node's discovered side.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ownership {
    Local,
    Foreign,
}

#[derive(Debug, Clone)]
struct Entry {
    record: NodeRecord,
    ownership: Ownership,
}

#[derive(Debug, Clone)]
pub struct StateStore {
    schema: StateSchema,
    nodes: BTreeMap<Uuid, Entry>,
    bus: Option<EventBus>,
}

/// Advisory messages for a configured write: an explicit `unknown` goal
/// asks the engine to make a variable unknowable, which is rarely intended.
pub fn configured_warnings(schema: &StateSchema, assignments: &StateMap) -> Vec<String> {
    assignments
        .iter()
        .filter(|(k, v)| v.as_str() == UNKNOWN && schema.is_mutation(k))
        .map(|(k, _)| format!("configured `{k}` is explicitly `unknown`"))
        .collect()
}

impl StateStore {
    pub fn new(schema: StateSchema) -> Self {
        Self {
            schema,
            nodes: BTreeMap::new(),
            bus: None,
        }
    }

    pub fn with_bus(schema: StateSchema, bus: EventBus) -> Self {
        Self {
            schema,
            nodes: BTreeMap::new(),
            bus: Some(bus),
        }
    }

    pub fn schema(&self) -> &StateSchema {
        &self.schema
    }

    pub fn insert_node(&mut self, record: NodeRecord, ownership: Ownership) -> Result<(), StoreError> {
        if self.nodes.contains_key(&record.id) {
            return Err(StoreError::DuplicateNode(record.id));
        }
        self.schema.validate_map(&record.configured)?;
        self.schema.validate_map(&record.discovered)?;
        let mut record = record;
        record.discovered.retain(|_, v| v != UNKNOWN);
        self.nodes.insert(record.id, Entry { record, ownership });
        Ok(())
    }

    pub fn contains(&self, node: Uuid) -> bool {
        self.nodes.contains_key(&node)
    }

    pub fn node(&self, node: Uuid) -> Option<&NodeRecord> {
        self.nodes.get(&node).map(|e| &e.record)
    }

    pub fn node_ids(&self) -> impl Iterator<Item = Uuid> + '_ {
        self.nodes.keys().copied()
    }

    pub fn ownership(&self, node: Uuid) -> Option<Ownership> {
        self.nodes.get(&node).map(|e| e.ownership)
    }

    /// Effective value of one variable; absent reads as `unknown`.
    pub fn value(&self, node: Uuid, side: Side, variable: &str) -> Result<String, StoreError> {
        let record = self.node(node).ok_or(StoreError::NotFound(node))?;
        Ok(value_of(record.side(side), variable).to_string())
    }

    pub fn set_run_phase(&mut self, node: Uuid, phase: RunPhase) -> Result<(), StoreError> {
        let entry = self.nodes.get_mut(&node).ok_or(StoreError::NotFound(node))?;
        entry.record.run_phase = phase;
        Ok(())
    }

    /// Applies `assignments` to one side of a node. Returns the delta of
    /// variables that actually changed, or `None` for a no-op write.
    pub fn set(
        &mut self,
        node: Uuid,
        side: Side,
        assignments: &StateMap,
    ) -> Result<Option<StateDelta>, StoreError> {
        self.schema.validate_map(assignments)?;
        match self.nodes.get(&node) {
            None if side == Side::Configured => {
                self.nodes.insert(
                    node,
                    Entry {
                        record: NodeRecord::new(node),
                        ownership: Ownership::Local,
                    },
                );
            }
            None => return Err(StoreError::NotFound(node)),
            Some(entry) if side == Side::Discovered && entry.ownership == Ownership::Foreign => {
                return Err(StoreError::Ownership(node));
            }
            Some(_) => {}
        }
        let normalized = assignments.iter().map(|(k, v)| (k.as_str(), self.normalize(side, k, v)));
        let changes = normalized.collect::<Vec<_>>();
        let map = self.nodes.get_mut(&node).expect("node present").record.side_mut(side);
        let delta = apply(map, changes);
        Ok(self.publish(node, side, delta))
    }

    /// Replaces a whole side with `state`, as a synchronisation peer does.
    /// Ownership is not checked: sync is how foreign truth arrives.
    pub fn replace_side(
        &mut self,
        node: Uuid,
        side: Side,
        state: &StateMap,
    ) -> Result<Option<StateDelta>, StoreError> {
        self.schema.validate_map(state)?;
        let entry = self.nodes.get(&node).ok_or(StoreError::NotFound(node))?;
        let current = entry.record.side(side);
        let mut changes: Vec<(&str, Option<String>)> = current
            .keys()
            .filter(|k| !state.contains_key(*k))
            .map(|k| (k.as_str(), None))
            .collect();
        changes.extend(state.iter().map(|(k, v)| (k.as_str(), self.normalize(side, k, v))));
        let changes: Vec<(String, Option<String>)> =
            changes.into_iter().map(|(k, v)| (k.to_string(), v)).collect();
        let map = self.nodes.get_mut(&node).expect("node present").record.side_mut(side);
        let delta = apply(map, changes.iter().map(|(k, v)| (k.as_str(), v.clone())).collect());
        Ok(self.publish(node, side, delta))
    }

    /// Stored form of `value`: discovered `unknown` and context `unknown`
    /// clear the entry; a configured mutation-variable `unknown` is kept.
    fn normalize(&self, side: Side, variable: &str, value: &str) -> Option<String> {
        if value != UNKNOWN {
            return Some(value.to_string());
        }
        if side == Side::Configured && self.schema.is_mutation(variable) {
            return Some(UNKNOWN.to_string());
        }
        None
    }

    fn publish(&self, node: Uuid, side: Side, changes: Vec<StateChange>) -> Option<StateDelta> {
        if changes.is_empty() {
            return None;
        }
        let delta = StateDelta { node, side, changes };
        if let Some(bus) = &self.bus {
            bus.publish(node, Payload::StateChange(delta.clone()));
        }
        Some(delta)
    }

    /// Mutation variables whose configured and discovered values differ.
    pub fn diff(&self, node: Uuid) -> Result<Vec<DiffEntry>, StoreError> {
        let record = self.node(node).ok_or(StoreError::NotFound(node))?;
        Ok(self
            .schema
            .mutation_variables()
            .filter_map(|spec| {
                let configured = value_of(&record.configured, &spec.name);
                let discovered = value_of(&record.discovered, &spec.name);
                (configured != discovered).then(|| DiffEntry {
                    variable: spec.name.clone(),
                    configured: configured.to_string(),
                    discovered: discovered.to_string(),
                })
            })
            .collect())
    }

    /// Evaluates a slash-path query and returns an owned snapshot.
    ///
    /// Grammar: `/nodes`, `/nodes/<uuid>`, `/nodes/<uuid>/<side>`,
    /// `/nodes/<uuid>/<side>/<variable>`.
    pub fn query(&self, path: &str) -> Result<QueryResult, StoreError> {
        let malformed = || StoreError::Query(path.to_string());
        let rest = path.strip_prefix('/').ok_or_else(malformed)?;
        let parts: Vec<&str> = rest.trim_end_matches('/').split('/').collect();
        if parts.first() != Some(&"nodes") {
            return Err(malformed());
        }
        if parts.len() == 1 {
            return Ok(QueryResult::Nodes(
                self.nodes.values().map(|e| e.record.clone()).collect(),
            ));
        }
        let id = Uuid::parse_str(parts[1]).map_err(|_| malformed())?;
        let record = self.node(id).ok_or(StoreError::NotFound(id))?;
        if parts.len() == 2 {
            return Ok(QueryResult::Nodes(vec![record.clone()]));
        }
        let side: Side = parts[2].parse().map_err(|_| malformed())?;
        let map = record.side(side);
        let value = |name: &str| StateValue {
            variable: name.to_string(),
            value: value_of(map, name).to_string(),
        };
        match parts.len() {
            3 => Ok(QueryResult::Values(
                self.schema.variables().map(|v| value(&v.name)).collect(),
            )),
            4 => {
                let variable = parts[3];
                if self.schema.variable(variable).is_none() {
                    return Err(ValidationError::UnknownVariable(variable.to_string()).into());
                }
                Ok(QueryResult::Values(vec![value(variable)]))
            }
            _ => Err(malformed()),
        }
    }
}

fn apply(map: &mut StateMap, changes: Vec<(&str, Option<String>)>) -> Vec<StateChange> {
    let mut out = Vec::new();
    for (variable, new) in changes {
        let old = map.get(variable).cloned();
        if old == new {
            continue;
        }
        match &new {
            Some(v) => map.insert(variable.to_string(), v.clone()),
            None => map.remove(variable),
        };
        out.push(StateChange {
            variable: variable.to_string(),
            old,
            new,
        });
    }
    out
}
