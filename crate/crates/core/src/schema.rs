//! State variable declarations.
//!
//! A schema splits variables into two kinds. *Mutation* variables are finite
//! enumerations whose first member is always `unknown`; they are the only
//! variables the engine plans over. *Context* variables are free-form facts
//! (an optional allow-list may constrain them) that gate mutations but are
//! never changed by one.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{SchemaError, ValidationError};

/// The zero value of every mutation variable.
pub const UNKNOWN: &str = "unknown";

/// A variable→value map. Absent entries read as [`UNKNOWN`].
pub type StateMap = BTreeMap<String, String>;

/// Effective value of `variable` in `state`.
pub fn value_of<'a>(state: &'a StateMap, variable: &str) -> &'a str {
    state.get(variable).map(String::as_str).unwrap_or(UNKNOWN)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum VariableKind {
    Mutation {
        values: Vec<String>,
    },
    Context {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        values: Option<Vec<String>>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariableSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: VariableKind,
}

impl VariableSpec {
    pub fn mutation<S: Into<String>>(name: &str, values: impl IntoIterator<Item = S>) -> Self {
        Self {
            name: name.to_string(),
            kind: VariableKind::Mutation {
                values: values.into_iter().map(Into::into).collect(),
            },
        }
    }

    /// A context variable restricted to `values`.
    pub fn context<S: Into<String>>(name: &str, values: impl IntoIterator<Item = S>) -> Self {
        Self {
            name: name.to_string(),
            kind: VariableKind::Context {
                values: Some(values.into_iter().map(Into::into).collect()),
            },
        }
    }

    /// A context variable that accepts any string.
    pub fn free_context(name: &str) -> Self {
        Self {
            name: name.to_string(),
            kind: VariableKind::Context { values: None },
        }
    }

    pub fn is_mutation(&self) -> bool {
        matches!(self.kind, VariableKind::Mutation { .. })
    }

    /// Declared values of a mutation variable, `unknown` first.
    pub fn values(&self) -> Option<&[String]> {
        match &self.kind {
            VariableKind::Mutation { values } => Some(values),
            VariableKind::Context { values } => values.as_deref(),
        }
    }
}

/// A validated set of variable declarations, ordered by name.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct StateSchema {
    variables: BTreeMap<String, VariableSpec>,
}

impl StateSchema {
    pub fn new(variables: impl IntoIterator<Item = VariableSpec>) -> Result<Self, SchemaError> {
        let mut map = BTreeMap::new();
        for spec in variables {
            validate_variable(&spec)?;
            if map.contains_key(&spec.name) {
                return Err(SchemaError::DuplicateVariable(spec.name));
            }
            map.insert(spec.name.clone(), spec);
        }
        Ok(Self { variables: map })
    }

    pub fn variable(&self, name: &str) -> Option<&VariableSpec> {
        self.variables.get(name)
    }

    pub fn variables(&self) -> impl Iterator<Item = &VariableSpec> {
        self.variables.values()
    }

    pub fn mutation_variables(&self) -> impl Iterator<Item = &VariableSpec> {
        self.variables.values().filter(|v| v.is_mutation())
    }

    pub fn context_variables(&self) -> impl Iterator<Item = &VariableSpec> {
        self.variables.values().filter(|v| !v.is_mutation())
    }

    pub fn is_mutation(&self, name: &str) -> bool {
        self.variables.get(name).is_some_and(VariableSpec::is_mutation)
    }

    pub fn is_empty(&self) -> bool {
        self.variables.is_empty()
    }

    /// Checks that `value` may be assigned to `variable`. `unknown` is legal
    /// for every variable; on context variables it clears the fact.
    pub fn validate(&self, variable: &str, value: &str) -> Result<(), ValidationError> {
        let spec = self
            .variables
            .get(variable)
            .ok_or_else(|| ValidationError::UnknownVariable(variable.to_string()))?;
        if value == UNKNOWN {
            return Ok(());
        }
        match spec.values() {
            Some(values) if !values.iter().any(|v| v == value) => {
                Err(ValidationError::IllegalValue {
                    variable: variable.to_string(),
                    value: value.to_string(),
                })
            }
            _ => Ok(()),
        }
    }

    pub fn validate_map(&self, state: &StateMap) -> Result<(), ValidationError> {
        state.iter().try_for_each(|(k, v)| self.validate(k, v))
    }
}

fn validate_variable(spec: &VariableSpec) -> Result<(), SchemaError> {
    if spec.name.is_empty() {
        return Err(SchemaError::EmptyName);
    }
    let values = match &spec.kind {
        VariableKind::Mutation { values } => {
            if values.first().map(String::as_str) != Some(UNKNOWN) {
                return Err(SchemaError::MissingUnknown(spec.name.clone()));
            }
            if values.len() > usize::from(u8::MAX) {
                return Err(SchemaError::TooManyValues(spec.name.clone()));
            }
            values
        }
        VariableKind::Context { values: Some(values) } => {
            if values.is_empty() {
                return Err(SchemaError::EmptyContextValues(spec.name.clone()));
            }
            values
        }
        VariableKind::Context { values: None } => return Ok(()),
    };
    let mut seen = std::collections::BTreeSet::new();
    for value in values {
        if !seen.insert(value) {
            return Err(SchemaError::DuplicateValue {
                variable: spec.name.clone(),
                value: value.clone(),
            });
        }
    }
    Ok(())
}
