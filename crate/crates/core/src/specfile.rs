//! YAML description files: mutation specs and node definitions.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Deserialize;
use uuid::Uuid;

use crate::error::SpecError;
use crate::mutation::{MutationSet, MutationSpec};
use crate::schema::{StateMap, StateSchema, VariableSpec};
use crate::store::NodeRecord;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpecDoc {
    variables: Vec<VariableSpec>,
    #[serde(default)]
    mutations: Vec<MutationSpec>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeDoc {
    nodes: Vec<NodeDef>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeDef {
    id: Uuid,
    #[serde(default)]
    parent: Option<Uuid>,
    #[serde(default)]
    configured: StateMap,
}

/// Deserializes YAML, mapping failures to `origin:line:column` diagnostics.
pub fn parse_yaml<T: DeserializeOwned>(text: &str, origin: &str) -> Result<T, SpecError> {
    serde_yaml::from_str(text).map_err(|e| match e.location() {
        Some(loc) => SpecError::Syntax {
            origin: origin.to_string(),
            line: loc.line(),
            column: loc.column(),
            message: strip_location(&e.to_string(), loc.line(), loc.column()),
        },
        None => SpecError::Parse {
            origin: origin.to_string(),
            message: e.to_string(),
        },
    })
}

fn strip_location(message: &str, line: usize, column: usize) -> String {
    message.replacen(&format!(" at line {line} column {column}"), "", 1)
}

pub fn read_file(path: &Path) -> Result<String, SpecError> {
    std::fs::read_to_string(path).map_err(|source| SpecError::Io {
        origin: path.display().to_string(),
        source,
    })
}

/// Parses a mutation-spec document into a validated mutation set.
pub fn parse_spec(text: &str, origin: &str) -> Result<MutationSet, SpecError> {
    let doc: SpecDoc = parse_yaml(text, origin)?;
    let schema = StateSchema::new(doc.variables).map_err(|source| SpecError::Schema {
        origin: origin.to_string(),
        source,
    })?;
    MutationSet::new(schema, doc.mutations).map_err(|source| SpecError::Mutation {
        origin: origin.to_string(),
        source,
    })
}

pub fn load_spec(path: &Path) -> Result<MutationSet, SpecError> {
    parse_spec(&read_file(path)?, &path.display().to_string())
}

/// Parses a node-definition document, validating configured state.
pub fn parse_nodes(text: &str, origin: &str, schema: &StateSchema) -> Result<Vec<NodeRecord>, SpecError> {
    let doc: NodeDoc = parse_yaml(text, origin)?;
    doc.nodes
        .into_iter()
        .map(|def| {
            schema.validate_map(&def.configured).map_err(|e| SpecError::Store {
                origin: origin.to_string(),
                source: e.into(),
            })?;
            let mut record = NodeRecord::new(def.id);
            record.parent = def.parent;
            record.configured = def.configured;
            Ok(record)
        })
        .collect()
}

pub fn load_nodes(path: &Path, schema: &StateSchema) -> Result<Vec<NodeRecord>, SpecError> {
    parse_nodes(&read_file(path)?, &path.display().to_string(), schema)
}
