//! The per-node agent: store, chain executor, services and sync, driven
//! by an explicit tick.
//!
//! One tick runs, in order: inbound sync datagrams and the dead-peer scan,
//! step deadlines, module request delivery and module ticks, and finally
//! outbound hellos. Between phases the bus is drained until quiet.
//! Mutation requests published during a tick are delivered on the next.

pub mod service;
pub mod sme;

use std::sync::Arc;

use uuid::Uuid;

use crate::error::{ConfigurationError, SyncError};
use crate::event::{Event, EventBus, EventFilter, Lifecycle, Payload, Subscription};
use crate::graph::StateGraph;
use crate::mutation::MutationContext;
use crate::schema::StateMap;
use crate::store::{NodeRecord, Ownership, Side, StateDelta, StateStore};
use crate::sync::{Outbound, SyncConfig, SyncEngine};

pub use service::{Env, InstanceState, Module, ModuleContext, Registration, ServiceManager};
pub use sme::{NodeExec, Sme, Waiting, MAX_STRIKES};

/// Bus drain rounds per phase before the agent gives up on quiescence.
const DRAIN_LIMIT: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    /// Executes every mutation itself; no sync.
    Standalone,
    /// Manages children and executes their `child` context mutations.
    Parent,
    /// Manages itself and syncs with a parent.
    Child { parent: Uuid },
}

impl Role {
    pub fn executes(&self, agent: Uuid, node: Uuid, context: MutationContext) -> bool {
        match self {
            Role::Standalone => true,
            Role::Parent => node != agent && context == MutationContext::Child,
            Role::Child { .. } => node == agent && context == MutationContext::SelfNode,
        }
    }

    /// Whether the role must have an owner for mutations of `context`.
    fn requires_owner(&self, context: MutationContext) -> bool {
        match self {
            Role::Standalone => true,
            Role::Parent => context == MutationContext::Child,
            Role::Child { .. } => context == MutationContext::SelfNode,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AgentConfig {
    pub id: Uuid,
    pub role: Role,
    pub sync: SyncConfig,
}

impl AgentConfig {
    pub fn new(id: Uuid, role: Role) -> Self {
        Self {
            id,
            role,
            sync: SyncConfig::default(),
        }
    }
}

pub struct Agent {
    id: Uuid,
    role: Role,
    now: u64,
    started: bool,
    bus: EventBus,
    feed: Subscription,
    store: StateStore,
    sme: Sme,
    services: ServiceManager,
    sync: SyncEngine,
    log: Vec<String>,
}

impl Agent {
    /// Builds an agent over `nodes`. A child always manages a record for
    /// itself, created empty when absent.
    pub fn new(
        config: AgentConfig,
        graph: Arc<StateGraph>,
        nodes: Vec<NodeRecord>,
        modules: Vec<(String, Box<dyn Module>)>,
    ) -> Result<Self, ConfigurationError> {
        let role = config.role;
        let set = graph.mutation_set();
        let services = ServiceManager::new(modules, set, |m| role.requires_owner(m.context))?;
        let bus = EventBus::new();
        let feed = bus.subscribe_all(EventFilter::any());
        let mut store = StateStore::with_bus(set.schema().clone(), bus.clone());
        for record in nodes {
            let id = record.id;
            if let Err(e) = store.insert_node(record, Ownership::Local) {
                tracing::warn!(node = %id, error = %e, "skipping node");
            }
        }
        let sync = match role {
            Role::Standalone => SyncEngine::standalone(config.id, config.sync),
            Role::Parent => {
                let children: Vec<Uuid> = store.node_ids().filter(|&n| n != config.id).collect();
                SyncEngine::parent(config.id, children, config.sync)
            }
            Role::Child { parent } => {
                if !store.contains(config.id) {
                    let _ = store.insert_node(NodeRecord::new(config.id).with_parent(parent), Ownership::Local);
                }
                SyncEngine::child(config.id, parent, config.sync)
            }
        };
        Ok(Self {
            id: config.id,
            role,
            now: 0,
            started: false,
            bus,
            feed,
            store,
            sme: Sme::new(graph),
            services,
            sync,
            log: Vec::new(),
        })
    }

    pub fn id(&self) -> Uuid {
        self.id
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn bus(&self) -> &EventBus {
        &self.bus
    }

    pub fn store(&self) -> &StateStore {
        &self.store
    }

    pub fn sme(&self) -> &Sme {
        &self.sme
    }

    pub fn services(&self) -> &ServiceManager {
        &self.services
    }

    pub fn sync(&self) -> &SyncEngine {
        &self.sync
    }

    pub fn graph(&self) -> &StateGraph {
        self.sme.graph()
    }

    /// Event lines recorded so far, one per published event.
    pub fn log(&self) -> &[String] {
        &self.log
    }

    pub fn take_log(&mut self) -> Vec<String> {
        std::mem::take(&mut self.log)
    }

    /// Registers a child for sync after construction.
    pub fn add_child(&mut self, record: NodeRecord) -> Result<(), crate::error::StoreError> {
        let id = record.id;
        self.store.insert_node(record, Ownership::Local)?;
        self.sync.add_child(id);
        if self.started {
            self.drain();
        }
        Ok(())
    }

    /// Writes one side of a node and lets the engine react immediately.
    pub fn set(
        &mut self,
        node: Uuid,
        side: Side,
        assignments: &StateMap,
    ) -> Result<Option<StateDelta>, crate::error::StoreError> {
        let delta = self.store.set(node, side, assignments)?;
        if self.role == Role::Parent && node != self.id {
            self.sync.add_child(node);
        }
        if self.started {
            self.drain();
        }
        Ok(delta)
    }

    /// Advances the agent to `now`, handling `inbound` datagrams, and
    /// returns the datagrams to send.
    pub fn tick(&mut self, now: u64, inbound: &[Vec<u8>]) -> Result<Vec<Outbound>, SyncError> {
        self.now = now;
        if !self.started {
            self.started = true;
            let mut env = Env {
                now,
                agent: self.id,
                store: &mut self.store,
                bus: &self.bus,
                sync: &self.sync,
            };
            self.services.start_all(&mut env);
            self.drain();
            let executes = executes_fn(self.role, self.id);
            let mut env = sme::SmeEnv {
                now,
                store: &mut self.store,
                bus: &self.bus,
                executes: &executes,
            };
            self.sme.evaluate_all(&mut env);
            self.drain();
        }

        let mut out = Vec::new();
        for datagram in inbound {
            out.extend(self.sync.receive(now, datagram, &mut self.store, &self.bus)?);
        }
        self.sync.dead_scan(now, &mut self.store, &self.bus);
        self.drain();

        {
            let executes = executes_fn(self.role, self.id);
            let mut env = sme::SmeEnv {
                now,
                store: &mut self.store,
                bus: &self.bus,
                executes: &executes,
            };
            self.sme.check_deadlines(&mut env);
        }
        self.drain();

        {
            let mut env = Env {
                now,
                agent: self.id,
                store: &mut self.store,
                bus: &self.bus,
                sync: &self.sync,
            };
            self.services.deliver(&mut env);
            self.services.tick(&mut env);
        }
        self.drain();

        out.extend(self.sync.hello_tick(now, &self.store)?);
        Ok(out)
    }

    /// Routes bus events until none remain.
    fn drain(&mut self) {
        let executes = executes_fn(self.role, self.id);
        for _ in 0..DRAIN_LIMIT {
            let events = self.feed.drain();
            if events.is_empty() {
                return;
            }
            for event in events {
                self.route(&event, &executes);
            }
        }
        tracing::error!(agent = %self.id, "event storm: bus did not quiesce");
    }

    fn route(&mut self, event: &Event, executes: &dyn Fn(Uuid, MutationContext) -> bool) {
        self.log.push(format!("t={} agent={} {}", self.now, self.id, event));
        let mut env = sme::SmeEnv {
            now: self.now,
            store: &mut self.store,
            bus: &self.bus,
            executes,
        };
        match &event.payload {
            Payload::Discovery { variable, value } => {
                let assignment = StateMap::from([(variable.clone(), value.clone())]);
                if let Err(e) = env.store.set(event.node, Side::Discovered, &assignment) {
                    tracing::warn!(node = %event.node, error = %e, "discovery rejected");
                }
            }
            Payload::StateChange(delta) => self.sme.on_state_change(&mut env, delta),
            Payload::StateMutation(request) => self.services.queue(request.clone()),
            Payload::MutationResult(result) => self.sme.on_result(&mut env, event.node, result),
            Payload::NodeLifecycle(Lifecycle::Alive) => self.sme.on_alive(&mut env, event.node),
            Payload::NodeLifecycle(_) => {}
        }
        let mut env = Env {
            now: self.now,
            agent: self.id,
            store: &mut self.store,
            bus: &self.bus,
            sync: &self.sync,
        };
        self.services.on_event(&mut env, event);
    }
}

fn executes_fn(role: Role, agent: Uuid) -> impl Fn(Uuid, MutationContext) -> bool {
    move |node, context| role.executes(agent, node, context)
}
