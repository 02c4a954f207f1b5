//! Reference modules over simulated hardware.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::{Arc, Mutex, MutexGuard};

use uuid::Uuid;

use crate::engine::{Module, ModuleContext, Registration};
use crate::error::ModuleError;
use crate::event::{Event, EventKind, MutationRequest, Payload};
use crate::mutation::MutationSet;
use crate::schema::{value_of, UNKNOWN};
use crate::sync::PeerStatus;

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum Process {
    #[default]
    Stopped,
    Running {
        image: String,
    },
    Crashed,
}

/// One simulated machine: a power switch and a workload process.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MockDevice {
    pub power: bool,
    pub process: Process,
    /// Power commands still to be silently ignored.
    pub ignore_commands: u32,
    pub commands_seen: u64,
}

impl MockDevice {
    /// Applies a power command unless the device is ignoring commands.
    pub fn command_power(&mut self, on: bool) -> bool {
        self.commands_seen += 1;
        if self.ignore_commands > 0 {
            self.ignore_commands -= 1;
            return false;
        }
        self.power = on;
        if !on {
            self.process = Process::Stopped;
        }
        true
    }
}

#[derive(Debug, Clone, Default)]
pub struct DeviceBank {
    devices: BTreeMap<Uuid, MockDevice>,
}

impl DeviceBank {
    pub fn shared() -> Devices {
        Arc::new(Mutex::new(Self::default()))
    }

    pub fn insert(&mut self, id: Uuid, device: MockDevice) {
        self.devices.insert(id, device);
    }

    pub fn get(&self, id: Uuid) -> Option<&MockDevice> {
        self.devices.get(&id)
    }

    pub fn get_mut(&mut self, id: Uuid) -> Option<&mut MockDevice> {
        self.devices.get_mut(&id)
    }

    pub fn device(&mut self, id: Uuid) -> &mut MockDevice {
        self.devices.entry(id).or_default()
    }

    pub fn ids(&self) -> impl Iterator<Item = Uuid> + '_ {
        self.devices.keys().copied()
    }

    /// Crashes a running process. Returns whether anything was running.
    pub fn crash(&mut self, id: Uuid) -> bool {
        match self.devices.get_mut(&id) {
            Some(d) if matches!(d.process, Process::Running { .. }) => {
                d.process = Process::Crashed;
                true
            }
            _ => false,
        }
    }
}

pub type Devices = Arc<Mutex<DeviceBank>>;

fn lock(devices: &Devices) -> MutexGuard<'_, DeviceBank> {
    devices.lock().unwrap_or_else(|e| e.into_inner())
}

fn power_word(on: bool) -> &'static str {
    if on {
        "on"
    } else {
        "off"
    }
}

/// Reads device power. With `mutations` it executes the power discovery
/// mutations for other nodes; without, it reports its own node's power
/// once at start.
pub struct PowerProbe {
    devices: Devices,
    mutations: bool,
}

impl PowerProbe {
    pub fn remote(devices: Devices) -> Self {
        Self { devices, mutations: true }
    }

    pub fn local(devices: Devices) -> Self {
        Self {
            devices,
            mutations: false,
        }
    }
}

impl Module for PowerProbe {
    fn registration(&self) -> Registration {
        Registration {
            mutations: if self.mutations {
                vec!["discover_power_off".into(), "discover_power_on".into()]
            } else {
                Vec::new()
            },
            discovers: vec!["power".into()],
            events: Vec::new(),
            autostart: true,
        }
    }

    fn start(&mut self, ctx: &mut ModuleContext<'_>) -> Result<(), ModuleError> {
        if !self.mutations && ctx.store().contains(ctx.agent) {
            let on = lock(&self.devices).get(ctx.agent).is_some_and(|d| d.power);
            ctx.discover(ctx.agent, "power", power_word(on))?;
        }
        Ok(())
    }

    fn on_mutation(&mut self, ctx: &mut ModuleContext<'_>, request: &MutationRequest) -> Result<(), ModuleError> {
        let on = lock(&self.devices).get(request.node).map(|d| d.power);
        match on {
            Some(on) => ctx.discover(request.node, "power", power_word(on)),
            None => Err(ModuleError::Failed(format!("no device for {}", request.node))),
        }
    }
}

/// Power switching through one management protocol.
pub struct PowerControl {
    devices: Devices,
    platform: String,
}

impl PowerControl {
    pub fn new(devices: Devices, platform: &str) -> Self {
        Self {
            devices,
            platform: platform.to_string(),
        }
    }
}

impl Module for PowerControl {
    fn registration(&self) -> Registration {
        Registration {
            mutations: vec![
                format!("{}_power_off", self.platform),
                format!("{}_power_on", self.platform),
            ],
            discovers: vec!["power".into()],
            events: Vec::new(),
            autostart: true,
        }
    }

    fn on_mutation(&mut self, ctx: &mut ModuleContext<'_>, request: &MutationRequest) -> Result<(), ModuleError> {
        let on = request.mutation.ends_with("_on");
        let applied = {
            let mut bank = lock(&self.devices);
            let device = bank
                .get_mut(request.node)
                .ok_or_else(|| ModuleError::Failed(format!("no device for {}", request.node)))?;
            device.command_power(on)
        };
        if applied {
            ctx.discover(request.node, "power", power_word(on))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStateMode {
    /// On the parent: completes `sync_discover` once the child is synced
    /// and coordinates image rolls.
    Parent,
    /// On the node itself: starts, stops and recovers the workload.
    Child,
    /// Both halves in one engine.
    Standalone,
}

/// Workload lifecycle plus the image-roll coordinator.
///
/// The coordinator watches nodes that run an image other than the
/// configured one. It drops their configured run-state to `synced` and,
/// once the node reports `synced`, restores `running`, so the new image is
/// picked up by a plain stop and start.
pub struct RunStateModule {
    devices: Devices,
    mode: RunStateMode,
    rolling: BTreeSet<Uuid>,
}

impl RunStateModule {
    pub fn new(devices: Devices, mode: RunStateMode) -> Self {
        Self {
            devices,
            mode,
            rolling: BTreeSet::new(),
        }
    }

    fn coordinates(&self) -> bool {
        self.mode != RunStateMode::Child
    }

    fn executes_workload(&self) -> bool {
        self.mode != RunStateMode::Parent
    }

    fn coordinate(&mut self, ctx: &mut ModuleContext<'_>, node: Uuid) -> Result<(), ModuleError> {
        let Some(record) = ctx.store().node(node) else {
            return Ok(());
        };
        let want_run = value_of(&record.configured, "runstate");
        let have_run = value_of(&record.discovered, "runstate");
        let want_img = value_of(&record.configured, "image");
        let have_img = value_of(&record.discovered, "image");
        if self.rolling.contains(&node) {
            if have_run == "synced" {
                self.rolling.remove(&node);
                ctx.set_configured(node, &[("runstate".to_string(), "running".to_string())].into())?;
            }
        } else if want_run == "running"
            && have_run == "running"
            && want_img != UNKNOWN
            && have_img != UNKNOWN
            && want_img != have_img
        {
            self.rolling.insert(node);
            ctx.set_configured(node, &[("runstate".to_string(), "synced".to_string())].into())?;
        }
        Ok(())
    }
}

impl Module for RunStateModule {
    fn registration(&self) -> Registration {
        let mut mutations = Vec::new();
        let mut discovers = vec!["runstate".to_string()];
        if self.mode != RunStateMode::Child {
            mutations.push("sync_discover".to_string());
        }
        if self.executes_workload() {
            mutations.extend(["recover", "run_start", "run_stop"].map(String::from));
            discovers.push("image".into());
        }
        Registration {
            mutations,
            discovers,
            events: if self.coordinates() {
                vec![EventKind::StateChange]
            } else {
                Vec::new()
            },
            autostart: true,
        }
    }

    fn on_mutation(&mut self, ctx: &mut ModuleContext<'_>, request: &MutationRequest) -> Result<(), ModuleError> {
        let node = request.node;
        match request.mutation.as_str() {
            "sync_discover" => {
                let synced = self.mode == RunStateMode::Standalone
                    || ctx.peer_status(node) == Some(PeerStatus::Synced);
                if synced {
                    ctx.discover(node, "runstate", "synced")?;
                }
                // Otherwise the child's phone-home completes the step.
                Ok(())
            }
            "run_start" => {
                let image = ctx
                    .store()
                    .node(node)
                    .map(|r| value_of(&r.configured, "image").to_string())
                    .unwrap_or_else(|| UNKNOWN.to_string());
                lock(&self.devices).device(node).process = Process::Running { image: image.clone() };
                if image != UNKNOWN {
                    ctx.discover(node, "image", &image)?;
                }
                ctx.discover(node, "runstate", "running")
            }
            "run_stop" | "recover" => {
                lock(&self.devices).device(node).process = Process::Stopped;
                ctx.discover(node, "runstate", "synced")
            }
            other => Err(ModuleError::Failed(format!("unexpected mutation `{other}`"))),
        }
    }

    fn on_tick(&mut self, ctx: &mut ModuleContext<'_>) -> Result<(), ModuleError> {
        if !self.executes_workload() {
            return Ok(());
        }
        let crashed: Vec<Uuid> = {
            let bank = lock(&self.devices);
            ctx.store()
                .node_ids()
                .filter(|&n| {
                    bank.get(n).is_some_and(|d| d.process == Process::Crashed)
                        && ctx.store().node(n).is_some_and(|r| value_of(&r.discovered, "runstate") == "running")
                })
                .collect()
        };
        for node in crashed {
            ctx.discover(node, "runstate", "error")?;
        }
        Ok(())
    }

    fn on_event(&mut self, ctx: &mut ModuleContext<'_>, event: &Event) -> Result<(), ModuleError> {
        if let Payload::StateChange(delta) = &event.payload {
            self.coordinate(ctx, delta.node)?;
        }
        Ok(())
    }
}

/// Executes any owned mutation perfectly after a fixed latency, for
/// driving the engine without hardware.
pub struct IdealActuator {
    set: MutationSet,
    owned: Vec<String>,
    latency: u64,
    ignore: u32,
    queue: VecDeque<(u64, MutationRequest)>,
}

impl IdealActuator {
    pub fn new(set: &MutationSet, owned: impl IntoIterator<Item = String>) -> Self {
        Self {
            set: set.clone(),
            owned: owned.into_iter().collect(),
            latency: 0,
            ignore: 0,
            queue: VecDeque::new(),
        }
    }

    /// Owns every mutation in the set.
    pub fn all(set: &MutationSet) -> Self {
        let names: Vec<String> = set.mutations().iter().map(|m| m.name.clone()).collect();
        Self::new(set, names)
    }

    pub fn with_latency(mut self, ticks: u64) -> Self {
        self.latency = ticks;
        self
    }

    /// Silently drops the next `count` requests.
    pub fn ignoring(mut self, count: u32) -> Self {
        self.ignore = count;
        self
    }

    fn complete(&self, ctx: &mut ModuleContext<'_>, request: &MutationRequest) -> Result<(), ModuleError> {
        let m = self
            .set
            .get(&request.mutation)
            .ok_or_else(|| ModuleError::Failed(format!("unknown mutation `{}`", request.mutation)))?;
        for (var, t) in &m.mutates {
            ctx.discover(request.node, var, &t.to)?;
        }
        Ok(())
    }
}

impl Module for IdealActuator {
    fn registration(&self) -> Registration {
        let mut discovers: Vec<String> = self
            .owned
            .iter()
            .filter_map(|n| self.set.get(n))
            .flat_map(|m| m.mutates.keys().cloned())
            .collect();
        discovers.sort();
        discovers.dedup();
        Registration {
            mutations: self.owned.clone(),
            discovers,
            events: Vec::new(),
            autostart: true,
        }
    }

    fn on_mutation(&mut self, ctx: &mut ModuleContext<'_>, request: &MutationRequest) -> Result<(), ModuleError> {
        if self.ignore > 0 {
            self.ignore -= 1;
            return Ok(());
        }
        if self.latency == 0 {
            return self.complete(ctx, request);
        }
        self.queue.push_back((ctx.now + self.latency, request.clone()));
        Ok(())
    }

    fn on_tick(&mut self, ctx: &mut ModuleContext<'_>) -> Result<(), ModuleError> {
        while self.queue.front().is_some_and(|(due, _)| *due <= ctx.now) {
            let (_, request) = self.queue.pop_front().expect("front exists");
            self.complete(ctx, &request)?;
        }
        Ok(())
    }
}
