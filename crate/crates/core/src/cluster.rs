//! A simulated parent with its children on one [`SimNet`].
//!
//! Each child owns a [`MockDevice`]; its agent exists only while the device
//! is powered, so powering a child off kills its agent and powering it on
//! boots a fresh one.

use std::collections::BTreeMap;
use std::sync::Arc;

use uuid::Uuid;

use crate::engine::{Agent, AgentConfig, Module, Role};
use crate::error::{SimConfigError, StoreError, SyncError};
use crate::event::{EventFilter, EventKind, Payload, Subscription};
use crate::graph::{build_graph, StateGraph};
use crate::mutation::MutationSet;
use crate::netsim::{LinkFault, SimNet};
use crate::refmods::{DeviceBank, Devices, MockDevice, PowerControl, PowerProbe, RunStateMode, RunStateModule};
use crate::schema::StateMap;
use crate::store::{NodeRecord, Side};
use crate::sync::{PeerStatus, SyncConfig};

#[derive(Debug, Clone)]
pub struct ClusterConfig {
    pub seed: u64,
    pub parent: Uuid,
    /// Children with their initial configured state.
    pub children: Vec<NodeRecord>,
    pub link: LinkFault,
    pub sync: SyncConfig,
    /// Whether child devices start powered on.
    pub powered: bool,
}

impl ClusterConfig {
    pub fn new(seed: u64, parent: Uuid, children: Vec<NodeRecord>) -> Self {
        Self {
            seed,
            parent,
            children,
            link: LinkFault::default(),
            sync: SyncConfig::default(),
            powered: false,
        }
    }
}

/// One executed mutation request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MutationRecord {
    pub tick: u64,
    pub agent: Uuid,
    pub node: Uuid,
    pub mutation: String,
}

struct Live {
    agent: Agent,
    requests: Subscription,
}

#[derive(thiserror::Error, Debug)]
pub enum ClusterError {
    #[error(transparent)]
    Config(#[from] crate::error::ConfigurationError),
    #[error(transparent)]
    Sim(#[from] SimConfigError),
    #[error(transparent)]
    Sync(#[from] SyncError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("unknown child {0}")]
    UnknownChild(Uuid),
}

pub struct Cluster {
    graph: Arc<StateGraph>,
    net: SimNet,
    sync: SyncConfig,
    parent: Live,
    children: BTreeMap<Uuid, Option<Live>>,
    devices: Devices,
    log: Vec<String>,
    mutations: Vec<MutationRecord>,
    boots: BTreeMap<Uuid, u32>,
    max_datagram: usize,
}

fn live(agent: Agent) -> Live {
    let requests = agent.bus().subscribe(EventKind::StateMutation, EventFilter::any());
    Live { agent, requests }
}

impl Cluster {
    pub fn new(set: &MutationSet, config: ClusterConfig) -> Result<Self, ClusterError> {
        let graph = Arc::new(build_graph(set));
        let devices = DeviceBank::shared();
        let mut net = SimNet::new(config.seed, config.link)?;
        net.register(config.parent);
        {
            let mut bank = devices.lock().expect("fresh lock");
            for child in &config.children {
                net.register(child.id);
                bank.insert(
                    child.id,
                    MockDevice {
                        power: config.powered,
                        ..MockDevice::default()
                    },
                );
            }
        }
        let records: Vec<NodeRecord> = config
            .children
            .iter()
            .cloned()
            .map(|mut r| {
                r.parent = Some(config.parent);
                r
            })
            .collect();
        let modules: Vec<(String, Box<dyn Module>)> = vec![
            ("power-probe".into(), Box::new(PowerProbe::remote(devices.clone()))),
            ("power-ipmi".into(), Box::new(PowerControl::new(devices.clone(), "ipmi"))),
            ("power-redfish".into(), Box::new(PowerControl::new(devices.clone(), "redfish"))),
            ("runstate".into(), Box::new(RunStateModule::new(devices.clone(), RunStateMode::Parent))),
        ];
        let parent = Agent::new(
            AgentConfig {
                id: config.parent,
                role: Role::Parent,
                sync: config.sync.clone(),
            },
            graph.clone(),
            records,
            modules,
        )?;
        let children = config.children.iter().map(|c| (c.id, None)).collect();
        Ok(Self {
            graph,
            net,
            sync: config.sync,
            parent: live(parent),
            children,
            devices,
            log: Vec::new(),
            mutations: Vec::new(),
            boots: BTreeMap::new(),
            max_datagram: 0,
        })
    }

    pub fn now(&self) -> u64 {
        self.net.now()
    }

    pub fn parent(&self) -> &Agent {
        &self.parent.agent
    }

    pub fn child(&self, id: Uuid) -> Option<&Agent> {
        self.children.get(&id).and_then(|c| c.as_ref()).map(|l| &l.agent)
    }

    pub fn child_ids(&self) -> impl Iterator<Item = Uuid> + '_ {
        self.children.keys().copied()
    }

    pub fn devices(&self) -> &Devices {
        &self.devices
    }

    pub fn net(&self) -> &SimNet {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut SimNet {
        &mut self.net
    }

    pub fn graph(&self) -> &StateGraph {
        &self.graph
    }

    pub fn log(&self) -> &[String] {
        &self.log
    }

    pub fn mutations(&self) -> &[MutationRecord] {
        &self.mutations
    }

    /// Largest sync datagram sent so far, in bytes.
    pub fn max_datagram(&self) -> usize {
        self.max_datagram
    }

    /// How many times the child's agent has booted.
    pub fn boots(&self, id: Uuid) -> u32 {
        self.boots.get(&id).copied().unwrap_or(0)
    }

    fn boot(&self, id: Uuid) -> Result<Agent, ClusterError> {
        let parent = self.parent.agent.id();
        let modules: Vec<(String, Box<dyn Module>)> = vec![
            ("power-probe".into(), Box::new(PowerProbe::local(self.devices.clone()))),
            ("runstate".into(), Box::new(RunStateModule::new(self.devices.clone(), RunStateMode::Child))),
        ];
        Ok(Agent::new(
            AgentConfig {
                id,
                role: Role::Child { parent },
                sync: self.sync.clone(),
            },
            self.graph.clone(),
            vec![NodeRecord::new(id).with_parent(parent)],
            modules,
        )?)
    }

    fn powered(&self, id: Uuid) -> bool {
        self.devices
            .lock()
            .expect("device lock")
            .get(id)
            .is_some_and(|d| d.power)
    }

    /// Advances the whole cluster one tick.
    pub fn tick(&mut self) -> Result<(), ClusterError> {
        let deliveries = self.net.step();
        let now = self.net.now();
        let parent_id = self.parent.agent.id();
        let mut inbox: BTreeMap<Uuid, Vec<Vec<u8>>> = BTreeMap::new();
        for d in deliveries {
            let alive = d.dst == parent_id || self.child(d.dst).is_some();
            if alive {
                inbox.entry(d.dst).or_default().push(d.bytes);
            } else {
                self.net.undeliverable(d.id);
            }
        }

        let out = self
            .parent
            .agent
            .tick(now, &inbox.remove(&parent_id).unwrap_or_default())?;
        self.collect(parent_id, now);
        for o in out {
            self.max_datagram = self.max_datagram.max(o.bytes.len());
            self.net.send(parent_id, o.dst, o.bytes)?;
        }

        let ids: Vec<Uuid> = self.children.keys().copied().collect();
        for id in ids {
            let powered = self.powered(id);
            let running = self.child(id).is_some();
            if powered && !running {
                let agent = self.boot(id)?;
                *self.boots.entry(id).or_default() += 1;
                self.log.push(format!("t={now} boot {id}"));
                self.children.insert(id, Some(live(agent)));
            } else if !powered && running {
                self.log.push(format!("t={now} halt {id}"));
                self.children.insert(id, None);
                continue;
            }
            let Some(Some(child)) = self.children.get_mut(&id) else {
                continue;
            };
            let out = child.agent.tick(now, &inbox.remove(&id).unwrap_or_default())?;
            self.collect(id, now);
            for o in out {
                self.max_datagram = self.max_datagram.max(o.bytes.len());
                self.net.send(id, o.dst, o.bytes)?;
            }
        }
        Ok(())
    }

    fn collect(&mut self, agent: Uuid, now: u64) {
        let slot = if agent == self.parent.agent.id() {
            Some(&mut self.parent)
        } else {
            self.children.get_mut(&agent).and_then(|c| c.as_mut())
        };
        let Some(l) = slot else {
            return;
        };
        self.log.extend(l.agent.take_log());
        for e in l.requests.drain() {
            if let Payload::StateMutation(r) = e.payload {
                self.mutations.push(MutationRecord {
                    tick: now,
                    agent,
                    node: r.node,
                    mutation: r.mutation,
                });
            }
        }
    }

    pub fn run(&mut self, ticks: u64) -> Result<(), ClusterError> {
        for _ in 0..ticks {
            self.tick()?;
        }
        Ok(())
    }

    /// Ticks until `done` holds or `limit` ticks pass. Returns the tick at
    /// which it first held.
    pub fn run_until(&mut self, limit: u64, done: impl Fn(&Cluster) -> bool) -> Result<Option<u64>, ClusterError> {
        for _ in 0..limit {
            self.tick()?;
            if done(self) {
                return Ok(Some(self.now()));
            }
        }
        Ok(None)
    }

    /// Writes a child's configured state on the parent.
    pub fn configure(&mut self, child: Uuid, assignments: &StateMap) -> Result<(), ClusterError> {
        if !self.children.contains_key(&child) {
            return Err(ClusterError::UnknownChild(child));
        }
        self.parent.agent.set(child, Side::Configured, assignments)?;
        let now = self.now();
        self.collect(self.parent.agent.id(), now);
        Ok(())
    }

    /// Crashes the child's workload process.
    pub fn crash(&mut self, child: Uuid) -> bool {
        self.devices.lock().expect("device lock").crash(child)
    }

    /// Makes the child's device ignore the next `count` power commands.
    pub fn ignore_commands(&mut self, child: Uuid, count: u32) {
        self.devices.lock().expect("device lock").device(child).ignore_commands = count;
    }

    /// The parent's record for a child.
    pub fn parent_view(&self, child: Uuid) -> Option<&NodeRecord> {
        self.parent.agent.store().node(child)
    }

    /// The child's record for itself, if its agent is running.
    pub fn child_view(&self, child: Uuid) -> Option<&NodeRecord> {
        self.child(child).and_then(|a| a.store().node(child))
    }

    /// The parent's liveness verdict on a child.
    pub fn peer_status(&self, child: Uuid) -> Option<PeerStatus> {
        self.parent.agent.sync().status(child)
    }

    /// Parent and child agree on both sides of the child's state.
    pub fn consistent(&self, child: Uuid) -> bool {
        match (self.parent_view(child), self.child_view(child)) {
            (Some(p), Some(c)) => p.discovered == c.discovered && p.configured == c.configured,
            _ => false,
        }
    }

    /// Every child's discovered state meets its configured demands.
    pub fn converged(&self, child: Uuid) -> bool {
        let schema = self.graph.mutation_set().schema();
        self.parent_view(child).is_some_and(|p| {
            crate::mutation::satisfies(&p.discovered, &p.configured, schema)
        }) && self.child_view(child).is_some_and(|c| {
            crate::mutation::satisfies(&c.discovered, &c.configured, schema)
        })
    }
}
