//! Line-delimited JSON requests for injecting and querying state on a
//! running agent.

use serde::{Deserialize, Serialize};
use uuid::Uuid;

use crate::engine::Agent;
use crate::schema::StateMap;
use crate::store::{configured_warnings, QueryResult, Side};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum ControlRequest {
    Inject {
        node: Uuid,
        #[serde(default = "configured")]
        side: Side,
        set: StateMap,
    },
    Query {
        path: String,
    },
}

fn configured() -> Side {
    Side::Configured
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ControlResponse {
    /// Number of variables whose value changed.
    Injected {
        changed: usize,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        warnings: Vec<String>,
    },
    Result { result: QueryResult },
    Error { message: String },
}

impl ControlResponse {
    pub fn is_error(&self) -> bool {
        matches!(self, ControlResponse::Error { .. })
    }
}

pub fn handle(agent: &mut Agent, request: ControlRequest) -> ControlResponse {
    match request {
        ControlRequest::Inject { node, side, set } => match agent.set(node, side, &set) {
            Ok(delta) => ControlResponse::Injected {
                changed: delta.map_or(0, |d| d.changes.len()),
                warnings: match side {
                    Side::Configured => configured_warnings(agent.store().schema(), &set),
                    Side::Discovered => Vec::new(),
                },
            },
            Err(e) => ControlResponse::Error { message: e.to_string() },
        },
        ControlRequest::Query { path } => match agent.store().query(&path) {
            Ok(result) => ControlResponse::Result { result },
            Err(e) => ControlResponse::Error { message: e.to_string() },
        },
    }
}

/// Parses and answers one request line, returning the response line.
pub fn handle_line(agent: &mut Agent, line: &str) -> String {
    let response = match serde_json::from_str::<ControlRequest>(line) {
        Ok(request) => handle(agent, request),
        Err(e) => ControlResponse::Error {
            message: format!("bad request: {e}"),
        },
    };
    serde_json::to_string(&response).expect("responses serialize")
}
