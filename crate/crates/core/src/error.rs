//! Error types shared across the crate.

use thiserror::Error;
use uuid::Uuid;

/// A schema declaration that violates the variable rules.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SchemaError {
    #[error("variable names must be nonempty")]
    EmptyName,
    #[error("variable `{0}` is declared more than once")]
    DuplicateVariable(String),
    #[error("mutation variable `{0}` must list `unknown` as its first value")]
    MissingUnknown(String),
    #[error("variable `{variable}` declares value `{value}` more than once")]
    DuplicateValue { variable: String, value: String },
    #[error("mutation variable `{0}` has more than 255 values")]
    TooManyValues(String),
    #[error("context variable `{0}` declares an empty value list")]
    EmptyContextValues(String),
}

impl SchemaError {
    /// The offending variable, when there is one.
    pub fn variable(&self) -> Option<&str> {
        match self {
            SchemaError::EmptyName => None,
            SchemaError::DuplicateVariable(v)
            | SchemaError::MissingUnknown(v)
            | SchemaError::TooManyValues(v)
            | SchemaError::EmptyContextValues(v) => Some(v),
            SchemaError::DuplicateValue { variable, .. } => Some(variable),
        }
    }
}

/// A value assignment that the schema rejects.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ValidationError {
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),
    #[error("`{value}` is not a legal value for `{variable}`")]
    IllegalValue { variable: String, value: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StoreError {
    #[error(transparent)]
    Validation(#[from] ValidationError),
    #[error("node {0} is not owned by this engine; its discovered state is read-only here")]
    Ownership(Uuid),
    #[error("node {0} not found")]
    NotFound(Uuid),
    #[error("node {0} already exists")]
    DuplicateNode(Uuid),
    #[error("malformed query `{0}`")]
    Query(String),
}

/// A mutation declaration that is inconsistent with the schema or its peers.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MutationSpecError {
    #[error("mutation names must be nonempty")]
    EmptyName,
    #[error("mutation `{0}` is declared more than once")]
    DuplicateName(String),
    #[error("mutation `{0}` mutates nothing")]
    EmptyMutates(String),
    #[error("mutation `{mutation}`: `{variable}` is not a mutation variable")]
    NotMutationVariable { mutation: String, variable: String },
    #[error("mutation `{mutation}`: `{variable}` transitions from `{value}` to itself")]
    SelfTransition { mutation: String, variable: String, value: String },
    #[error("mutation `{mutation}`: {source}")]
    Invalid {
        mutation: String,
        #[source]
        source: ValidationError,
    },
    #[error("mutation `{mutation}`: fail_to assigns `{variable}`, which it does not mutate")]
    FailToOutsideMutates { mutation: String, variable: String },
    #[error("mutations `{0}` and `{1}` have identical mutates and requires maps")]
    DuplicateBehavior(String, String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("mutation `{mutation}` is not out-wise compatible with the given state")]
pub struct IncompatibleError {
    pub mutation: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GraphError {
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error("discovered state {state} of node {node} is not a vertex of the state graph")]
    UnmodeledState { node: Uuid, state: String },
    #[error(transparent)]
    Validation(#[from] ValidationError),
}

/// Startup wiring problems between the mutation set and registered modules.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigurationError {
    #[error("mutation `{mutation}` is claimed by both `{first}` and `{second}`")]
    DuplicateOwner {
        mutation: String,
        first: String,
        second: String,
    },
    #[error("mutation `{0}` has no owning service instance")]
    NoOwner(String),
    #[error("module `{module}` registers unknown mutation `{mutation}`")]
    UnknownMutation { module: String, mutation: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModuleError {
    #[error("instance `{instance}` does not own discovery of `{variable}`")]
    Ownership { instance: String, variable: String },
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("module failure: {0}")]
    Failed(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SyncError {
    #[error("datagram of {size} bytes exceeds the {limit}-byte frame budget")]
    Oversize { size: usize, limit: usize },
    #[error("malformed datagram: {0}")]
    Malformed(String),
    #[error("unsupported datagram version {0}")]
    Version(u32),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimConfigError {
    #[error("endpoint {0} is not registered")]
    UnknownEndpoint(Uuid),
    #[error("partition groups overlap on {0}")]
    OverlappingPartition(Uuid),
    #[error("drop probability {0} is outside [0, 1]")]
    DropProbability(f64),
    #[error("link delay must be at least one tick")]
    ZeroDelay,
    #[error("scenario: {0}")]
    Scenario(String),
}

/// Errors raised while loading YAML description files.
#[derive(Debug, Error)]
pub enum SpecError {
    #[error("{origin}:{line}:{column}: {message}")]
    Syntax {
        origin: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{origin}: {message}")]
    Parse { origin: String, message: String },
    #[error("{origin}: {source}")]
    Schema {
        origin: String,
        #[source]
        source: SchemaError,
    },
    #[error("{origin}: {source}")]
    Mutation {
        origin: String,
        #[source]
        source: MutationSpecError,
    },
    #[error("{origin}: {source}")]
    Store {
        origin: String,
        #[source]
        source: StoreError,
    },
    #[error("{origin}: {source}")]
    Io {
        origin: String,
        #[source]
        source: std::io::Error,
    },
}
