//! Scripted simulator runs with embedded assertions.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use uuid::Uuid;

use crate::cluster::{Cluster, ClusterConfig, ClusterError};
use crate::error::{SimConfigError, SpecError};
use crate::fixtures::layercake_lite;
use crate::mutation::{satisfies, MutationSet};
use crate::netsim::LinkFault;
use crate::schema::{value_of, StateMap};
use crate::specfile::{load_spec, parse_yaml, read_file};
use crate::store::{NodeRecord, Side};
use crate::sync::{PeerStatus, SyncConfig};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Timers {
    #[serde(default = "one")]
    pub hello: u64,
    #[serde(default = "four")]
    pub dead: u64,
}

fn one() -> u64 {
    1
}

fn four() -> u64 {
    4
}

impl Default for Timers {
    fn default() -> Self {
        Self { hello: 1, dead: 4 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeDef {
    pub id: Uuid,
    #[serde(default)]
    pub configured: StateMap,
}

#[derive(Debug, Clone, Deserialize)]
pub struct LinkDef {
    pub src: Uuid,
    pub dst: Uuid,
    #[serde(flatten)]
    pub fault: LinkFault,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Inject { node: Uuid, set: StateMap },
    Crash(Uuid),
    Silence(Uuid),
    Unsilence(Uuid),
    Partition { a: Vec<Uuid>, b: Vec<Uuid>, heal_at: u64 },
    IgnoreCommands { node: Uuid, count: u32 },
}

#[derive(Debug, Clone, Deserialize)]
pub struct TimedAction {
    pub at: u64,
    #[serde(flatten)]
    pub action: Action,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum View {
    #[default]
    Parent,
    Child,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Assertion {
    pub at: u64,
    pub node: Uuid,
    #[serde(default)]
    pub view: View,
    #[serde(default = "discovered")]
    pub side: Side,
    /// Expected values; `unknown` matches an absent entry.
    #[serde(default)]
    pub expect: StateMap,
    /// The parent's liveness verdict on the node.
    #[serde(default)]
    pub status: Option<PeerStatus>,
    /// Both views agree and meet the configured demands.
    #[serde(default)]
    pub converged: Option<bool>,
}

fn discovered() -> Side {
    Side::Discovered
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub ticks: u64,
    /// Mutation spec, relative to the scenario file. Defaults to the
    /// shipped layercake-lite set.
    #[serde(default)]
    pub spec: Option<PathBuf>,
    #[serde(default)]
    pub timers: Timers,
    #[serde(default)]
    pub link: LinkFault,
    #[serde(default)]
    pub links: Vec<LinkDef>,
    /// Whether child devices start powered.
    #[serde(default)]
    pub powered: bool,
    pub parent: Uuid,
    pub nodes: Vec<NodeDef>,
    #[serde(default)]
    pub actions: Vec<TimedAction>,
    #[serde(default)]
    pub assertions: Vec<Assertion>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Failure {
    pub tick: u64,
    pub index: usize,
    pub message: String,
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "tick {}: assertion #{} failed: {}", self.tick, self.index, self.message)
    }
}

#[derive(Debug, Clone)]
pub struct ScenarioReport {
    pub name: String,
    pub ticks_run: u64,
    pub failure: Option<Failure>,
    pub log: Vec<String>,
    /// Largest sync datagram sent during the run.
    pub max_datagram: usize,
}

impl ScenarioReport {
    pub fn passed(&self) -> bool {
        self.failure.is_none()
    }
}

pub fn parse_scenario(text: &str, origin: &str) -> Result<Scenario, SpecError> {
    let scenario: Scenario = parse_yaml(text, origin)?;
    scenario.validate().map_err(|e| SpecError::Parse {
        origin: origin.to_string(),
        message: e.to_string(),
    })?;
    Ok(scenario)
}

/// Loads a scenario, resolving its spec path against the file's directory.
pub fn load_scenario(path: &Path) -> Result<Scenario, SpecError> {
    let mut scenario = parse_scenario(&read_file(path)?, &path.display().to_string())?;
    if let (Some(spec), Some(dir)) = (&scenario.spec, path.parent()) {
        if spec.is_relative() {
            scenario.spec = Some(dir.join(spec));
        }
    }
    Ok(scenario)
}

impl Scenario {
    fn validate(&self) -> Result<(), SimConfigError> {
        let mut ids = BTreeSet::from([self.parent]);
        for n in &self.nodes {
            if !ids.insert(n.id) {
                return Err(SimConfigError::Scenario(format!("duplicate node {}", n.id)));
            }
        }
        let known = |id: &Uuid| {
            if ids.contains(id) {
                Ok(())
            } else {
                Err(SimConfigError::UnknownEndpoint(*id))
            }
        };
        for a in &self.actions {
            match &a.action {
                Action::Inject { node, .. } | Action::IgnoreCommands { node, .. } => known(node)?,
                Action::Crash(n) | Action::Silence(n) | Action::Unsilence(n) => known(n)?,
                Action::Partition { a, b, .. } => {
                    for id in a.iter().chain(b) {
                        known(id)?;
                    }
                }
            }
        }
        for a in &self.assertions {
            known(&a.node)?;
        }
        Ok(())
    }

    /// The scenario's mutation set: its own spec file or layercake-lite.
    pub fn mutation_set(&self) -> Result<MutationSet, SpecError> {
        match &self.spec {
            Some(path) => load_spec(path),
            None => Ok(layercake_lite()),
        }
    }

    pub fn build(&self, set: &MutationSet) -> Result<Cluster, ClusterError> {
        let children = self
            .nodes
            .iter()
            .map(|n| {
                let mut r = NodeRecord::new(n.id).with_parent(self.parent);
                r.configured = n.configured.clone();
                r
            })
            .collect();
        let mut config = ClusterConfig::new(self.seed, self.parent, children);
        config.link = self.link;
        config.powered = self.powered;
        config.sync = SyncConfig {
            hello_ticks: self.timers.hello,
            dead_ticks: self.timers.dead,
            ..SyncConfig::default()
        };
        let mut cluster = Cluster::new(set, config)?;
        for l in &self.links {
            cluster.net_mut().set_link(l.src, l.dst, l.fault)?;
        }
        Ok(cluster)
    }

    fn apply(&self, cluster: &mut Cluster, action: &Action) -> Result<(), ClusterError> {
        match action {
            Action::Inject { node, set } => cluster.configure(*node, set)?,
            Action::Crash(node) => {
                cluster.crash(*node);
            }
            Action::Silence(node) => cluster.net_mut().silence(*node)?,
            Action::Unsilence(node) => cluster.net_mut().unsilence(*node)?,
            Action::Partition { a, b, heal_at } => {
                cluster
                    .net_mut()
                    .partition(a.iter().copied(), b.iter().copied(), *heal_at)?
            }
            Action::IgnoreCommands { node, count } => cluster.ignore_commands(*node, *count),
        }
        Ok(())
    }

    /// Runs the scenario, stopping at the first failed assertion.
    pub fn run(&self, set: &MutationSet) -> Result<ScenarioReport, ClusterError> {
        let mut cluster = self.build(set)?;
        let mut failure = None;
        let mut tick = 0;
        for action in self.actions.iter().filter(|a| a.at == 0) {
            self.apply(&mut cluster, &action.action)?;
        }
        while tick < self.ticks && failure.is_none() {
            tick += 1;
            for action in self.actions.iter().filter(|a| a.at == tick) {
                self.apply(&mut cluster, &action.action)?;
            }
            cluster.tick()?;
            failure = self
                .assertions
                .iter()
                .enumerate()
                .filter(|(_, a)| a.at == tick)
                .find_map(|(index, a)| {
                    check(&cluster, a).err().map(|message| Failure { tick, index, message })
                });
        }
        Ok(ScenarioReport {
            name: self.name.clone(),
            ticks_run: tick,
            failure,
            log: cluster.log().to_vec(),
            max_datagram: cluster.max_datagram(),
        })
    }
}

fn check(cluster: &Cluster, a: &Assertion) -> Result<(), String> {
    if let Some(want) = a.status {
        let got = cluster.peer_status(a.node);
        if got != Some(want) {
            return Err(format!("node {} status expected {want:?}, found {got:?}", a.node));
        }
    }
    if let Some(want) = a.converged {
        let schema = cluster.graph().mutation_set().schema();
        let got = cluster.consistent(a.node)
            && cluster
                .parent_view(a.node)
                .is_some_and(|r| satisfies(&r.discovered, &r.configured, schema));
        if got != want {
            return Err(format!("node {} converged expected {want}, found {got}", a.node));
        }
    }
    if a.expect.is_empty() {
        return Ok(());
    }
    let record = match a.view {
        View::Parent => cluster.parent_view(a.node),
        View::Child => cluster.child_view(a.node),
    };
    let Some(record) = record else {
        return Err(format!("node {} has no {:?} view", a.node, a.view));
    };
    let side = record.side(a.side);
    for (var, want) in &a.expect {
        let got = value_of(side, var);
        if got != want {
            return Err(format!(
                "node {} {:?} {} {var} expected {want}, found {got}",
                a.node, a.view, a.side
            ));
        }
    }
    Ok(())
}
