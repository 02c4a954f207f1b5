//! Per-node chain execution.
//!
//! For every node the machine holds at most one chain and at most one
//! in-flight step. It reacts to state changes: configured writes replace
//! the chain, discovered writes advance it when they land on the expected
//! post-state and replace it when they land anywhere else.

use std::collections::BTreeMap;
use std::sync::Arc;

use uuid::Uuid;

use crate::event::{EventBus, Lifecycle, MutationRequest, MutationResult, Outcome, Payload};
use crate::graph::{find_chain, StateGraph};
use crate::mutation::{project, MutationChain, MutationContext};
use crate::schema::{StateMap, UNKNOWN};
use crate::store::{Ownership, Side, StateDelta, StateStore};

/// Consecutive failures of one step before a node is marked failed.
pub const MAX_STRIKES: u32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Waiting {
    Idle,
    /// Dispatched locally; fails at the deadline.
    Module { deadline: u64 },
    /// Executed by the peer engine; only state changes advance it.
    Peer,
}

#[derive(Debug, Clone)]
pub struct NodeExec {
    pub chain: Option<MutationChain>,
    pub waiting: Waiting,
    strikes: Option<(String, StateMap, u32)>,
    pub failed: Option<String>,
    pub unreachable: Option<String>,
}

impl Default for NodeExec {
    fn default() -> Self {
        Self {
            chain: None,
            waiting: Waiting::Idle,
            strikes: None,
            failed: None,
            unreachable: None,
        }
    }
}

pub struct SmeEnv<'a> {
    pub now: u64,
    pub store: &'a mut StateStore,
    pub bus: &'a EventBus,
    /// Whether this engine executes mutations of the given context for
    /// the given node.
    pub executes: &'a dyn Fn(Uuid, MutationContext) -> bool,
}

pub struct Sme {
    graph: Arc<StateGraph>,
    nodes: BTreeMap<Uuid, NodeExec>,
}

impl Sme {
    pub fn new(graph: Arc<StateGraph>) -> Self {
        Self {
            graph,
            nodes: BTreeMap::new(),
        }
    }

    pub fn graph(&self) -> &StateGraph {
        &self.graph
    }

    pub fn node(&self, node: Uuid) -> Option<&NodeExec> {
        self.nodes.get(&node)
    }

    /// Evaluates every local node, e.g. at startup.
    pub fn evaluate_all(&mut self, env: &mut SmeEnv<'_>) {
        let ids: Vec<Uuid> = env.store.node_ids().collect();
        for id in ids {
            self.evaluate(env, id, true);
        }
    }

    pub fn on_state_change(&mut self, env: &mut SmeEnv<'_>, delta: &StateDelta) {
        let node = delta.node;
        if env.store.ownership(node) != Some(Ownership::Local) {
            return;
        }
        match delta.side {
            Side::Configured => {
                let exec = self.nodes.entry(node).or_default();
                exec.failed = None;
                exec.strikes = None;
                self.evaluate(env, node, true);
            }
            Side::Discovered => {
                if self.nodes.get(&node).is_some_and(|e| e.failed.is_some()) {
                    return;
                }
                let discovered = &env.store.node(node).expect("local node").discovered;
                let stripped = self.graph.strip(discovered);
                if &stripped != discovered {
                    let resets: StateMap = discovered
                        .keys()
                        .filter(|k| !stripped.contains_key(*k))
                        .map(|k| (k.clone(), UNKNOWN.to_string()))
                        .collect();
                    // The write publishes a change that re-enters here.
                    if let Ok(Some(_)) = env.store.set(node, Side::Discovered, &resets) {
                        return;
                    }
                }
                self.evaluate(env, node, false);
            }
        }
    }

    /// Failure reported by the service manager for the in-flight step.
    pub fn on_result(&mut self, env: &mut SmeEnv<'_>, node: Uuid, result: &MutationResult) {
        if !matches!(result.outcome, Outcome::Failure(_)) {
            return;
        }
        let in_flight = self.nodes.get(&node).is_some_and(|e| {
            matches!(e.waiting, Waiting::Module { .. })
                && e.chain
                    .as_ref()
                    .and_then(|c| c.current())
                    .is_some_and(|s| s.mutation == result.mutation)
        });
        if in_flight {
            self.fail(env, node, result.outcome.clone(), false);
        }
    }

    /// A node came back after being unreachable: its failure count is
    /// forgotten and it is re-evaluated.
    pub fn on_alive(&mut self, env: &mut SmeEnv<'_>, node: Uuid) {
        if env.store.ownership(node) != Some(Ownership::Local) {
            return;
        }
        let exec = self.nodes.entry(node).or_default();
        exec.failed = None;
        exec.strikes = None;
        self.evaluate(env, node, false);
    }

    pub fn check_deadlines(&mut self, env: &mut SmeEnv<'_>) {
        let expired: Vec<Uuid> = self
            .nodes
            .iter()
            .filter(|(_, e)| matches!(e.waiting, Waiting::Module { deadline } if env.now >= deadline))
            .map(|(id, _)| *id)
            .collect();
        for node in expired {
            self.fail(env, node, Outcome::Timeout, true);
        }
    }

    fn evaluate(&mut self, env: &mut SmeEnv<'_>, node: Uuid, configured_changed: bool) {
        let Some(record) = env.store.node(node).cloned() else {
            return;
        };
        let set = self.graph.mutation_set();
        let schema = set.schema();
        let current = project(&record.discovered, schema);
        let exec = self.nodes.entry(node).or_default();
        if exec.failed.is_some() {
            return;
        }

        if let Some(chain) = &mut exec.chain {
            if let Some(step) = chain.current().cloned() {
                if current == step.post {
                    if matches!(exec.waiting, Waiting::Module { .. }) {
                        env.bus.publish(
                            node,
                            Payload::MutationResult(MutationResult {
                                mutation: step.mutation.clone(),
                                outcome: Outcome::Success,
                            }),
                        );
                    }
                    if exec
                        .strikes
                        .as_ref()
                        .is_some_and(|(m, pre, _)| *m == step.mutation && *pre == step.pre)
                    {
                        exec.strikes = None;
                    }
                    chain.cursor += 1;
                    exec.waiting = Waiting::Idle;
                    let merged = record.merged();
                    let next_ok = chain.current().is_some_and(|next| {
                        set.get(&next.mutation)
                            .is_some_and(|m| m.context_met(&merged, schema))
                    });
                    if !configured_changed && next_ok {
                        Self::dispatch(env, node, exec, set);
                        return;
                    }
                } else if current == step.pre && !configured_changed {
                    return;
                }
            }
        }

        match find_chain(&self.graph, &record) {
            Err(e) => {
                exec.chain = None;
                exec.waiting = Waiting::Idle;
                Self::unreachable(env, node, exec, e.to_string());
            }
            Ok(None) => {
                exec.chain = None;
                exec.waiting = Waiting::Idle;
                Self::unreachable(env, node, exec, "no chain reaches the configured state".into());
            }
            Ok(Some(chain)) if chain.is_empty() => {
                exec.chain = None;
                exec.waiting = Waiting::Idle;
                exec.unreachable = None;
            }
            Ok(Some(chain)) => {
                exec.unreachable = None;
                // An in-flight request for the new first mutation keeps
                // running; the replacement step only updates its states.
                let keep = matches!(exec.waiting, Waiting::Module { .. })
                    && exec
                        .chain
                        .as_ref()
                        .and_then(|c| c.current())
                        .is_some_and(|s| s.mutation == chain.steps[0].mutation);
                exec.chain = Some(chain);
                if !keep {
                    Self::dispatch(env, node, exec, set);
                }
            }
        }
    }

    fn unreachable(env: &mut SmeEnv<'_>, node: Uuid, exec: &mut NodeExec, reason: String) {
        if exec.unreachable.as_ref() != Some(&reason) {
            env.bus
                .publish(node, Payload::NodeLifecycle(Lifecycle::Unreachable(reason.clone())));
            exec.unreachable = Some(reason);
        }
    }

    fn dispatch(env: &mut SmeEnv<'_>, node: Uuid, exec: &mut NodeExec, set: &crate::mutation::MutationSet) {
        let chain = exec.chain.as_ref().expect("chain present");
        let step = chain.current().expect("step present");
        let m = set.get(&step.mutation).expect("chain uses known mutations");
        if (env.executes)(node, m.context) {
            let deadline = env.now + m.timeout_ticks;
            exec.waiting = Waiting::Module { deadline };
            env.bus.publish(
                node,
                Payload::StateMutation(MutationRequest {
                    mutation: step.mutation.clone(),
                    node,
                    step: chain.cursor,
                    issued_at: env.now,
                    deadline,
                }),
            );
        } else {
            exec.waiting = Waiting::Peer;
        }
    }

    fn fail(&mut self, env: &mut SmeEnv<'_>, node: Uuid, outcome: Outcome, publish: bool) {
        let set = self.graph.mutation_set();
        let exec = self.nodes.get_mut(&node).expect("node tracked");
        let Some(step) = exec.chain.as_ref().and_then(|c| c.current()).cloned() else {
            return;
        };
        if publish {
            env.bus.publish(
                node,
                Payload::MutationResult(MutationResult {
                    mutation: step.mutation.clone(),
                    outcome,
                }),
            );
        }
        exec.chain = None;
        exec.waiting = Waiting::Idle;
        let count = match &exec.strikes {
            Some((m, pre, n)) if *m == step.mutation && *pre == step.pre => n + 1,
            _ => 1,
        };
        exec.strikes = Some((step.mutation.clone(), step.pre.clone(), count));
        if count >= MAX_STRIKES {
            exec.failed = Some(step.mutation.clone());
            env.bus.publish(
                node,
                Payload::NodeLifecycle(Lifecycle::Failed(format!(
                    "`{}` failed {count} times in a row",
                    step.mutation
                ))),
            );
            return;
        }
        let assignments = set.get(&step.mutation).expect("known mutation").failure_assignments();
        match env.store.set(node, Side::Discovered, &assignments) {
            Ok(Some(_)) => {}
            _ => self.evaluate(env, node, false),
        }
    }
}
