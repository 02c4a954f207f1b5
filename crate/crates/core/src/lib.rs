//! Declarative state convergence for clusters of nodes.
//!
//! Each node carries a configured state (what it should be) and a
//! discovered state (what it is). Mutations describe how discovered state
//! can change; [`build_graph`] turns a mutation set into a graph of
//! knowable states, and [`find_chain`] plans the shortest mutation chain
//! from discovered to configured. An [`Agent`] runs the plan against its
//! modules and keeps its state in sync with a parent or children over
//! datagrams. [`Cluster`] and [`SimNet`] run whole trees in virtual time.

pub mod error;
pub mod event;
pub mod schema;
pub mod store;
pub mod mutation;
pub mod graph;
pub mod specfile;
pub mod fixtures;
pub mod sync;
pub mod engine;
pub mod control;
pub mod refmods;
pub mod netsim;
pub mod cluster;
pub mod scenario;

pub use cluster::{Cluster, ClusterConfig};
pub use engine::{Agent, AgentConfig, Module, ModuleContext, Registration, Role};
pub use error::{
    ConfigurationError, GraphError, ModuleError, SchemaError, SimConfigError, SpecError, StoreError, SyncError,
    ValidationError,
};
pub use event::{Event, EventBus, EventFilter, EventKind, Payload};
pub use graph::{build_graph, find_chain, graph_equiv, StateGraph};
pub use mutation::{oracle_chain, MutationChain, MutationContext, MutationSet, MutationSpec};
pub use netsim::{LinkFault, SimNet};
pub use scenario::{load_scenario, Scenario, ScenarioReport};
pub use schema::{StateMap, StateSchema, VariableSpec, UNKNOWN};
pub use specfile::{load_nodes, load_spec};
pub use store::{NodeRecord, Side, StateStore};
pub use sync::{SyncConfig, SyncDatagram, SyncEngine};
