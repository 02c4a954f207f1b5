//! Service instances: modules that own mutations and discoveries.

use std::collections::{BTreeMap, VecDeque};

use uuid::Uuid;

use crate::error::{ConfigurationError, ModuleError};
use crate::event::{Event, EventBus, EventKind, MutationRequest, MutationResult, Outcome, Payload};
use crate::mutation::{MutationSet, MutationSpec};
use crate::schema::StateMap;
use crate::store::{Side, StateDelta, StateStore};
use crate::sync::{PeerStatus, SyncEngine};

/// What a module declares at registration.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Registration {
    /// Mutations the instance executes.
    pub mutations: Vec<String>,
    /// Variables the instance may discover.
    pub discovers: Vec<String>,
    /// Event kinds delivered to `on_event`.
    pub events: Vec<EventKind>,
    pub autostart: bool,
}

pub trait Module {
    fn registration(&self) -> Registration;

    fn start(&mut self, _ctx: &mut ModuleContext<'_>) -> Result<(), ModuleError> {
        Ok(())
    }

    /// Begins executing a mutation. Completion is reported by discovering
    /// the resulting state, possibly on a later tick.
    fn on_mutation(&mut self, ctx: &mut ModuleContext<'_>, request: &MutationRequest) -> Result<(), ModuleError>;

    fn on_tick(&mut self, _ctx: &mut ModuleContext<'_>) -> Result<(), ModuleError> {
        Ok(())
    }

    fn on_event(&mut self, _ctx: &mut ModuleContext<'_>, _event: &Event) -> Result<(), ModuleError> {
        Ok(())
    }
}

/// Shared agent resources lent to modules for one call.
pub struct Env<'a> {
    pub now: u64,
    pub agent: Uuid,
    pub store: &'a mut StateStore,
    pub bus: &'a EventBus,
    pub sync: &'a SyncEngine,
}

pub struct ModuleContext<'a> {
    pub now: u64,
    pub agent: Uuid,
    instance: &'a str,
    discovers: &'a [String],
    store: &'a mut StateStore,
    bus: &'a EventBus,
    sync: &'a SyncEngine,
}

impl ModuleContext<'_> {
    pub fn instance(&self) -> &str {
        self.instance
    }

    pub fn store(&self) -> &StateStore {
        self.store
    }

    /// Publishes a discovery. Only registered variables may be discovered.
    pub fn discover(&self, node: Uuid, variable: &str, value: &str) -> Result<(), ModuleError> {
        if !self.discovers.iter().any(|v| v == variable) {
            return Err(ModuleError::Ownership {
                instance: self.instance.to_string(),
                variable: variable.to_string(),
            });
        }
        self.store
            .schema()
            .validate(variable, value)
            .map_err(|e| ModuleError::Store(e.into()))?;
        self.bus.publish(
            node,
            Payload::Discovery {
                variable: variable.to_string(),
                value: value.to_string(),
            },
        );
        Ok(())
    }

    /// Writes configured state, as an operator would.
    pub fn set_configured(&mut self, node: Uuid, assignments: &StateMap) -> Result<Option<StateDelta>, ModuleError> {
        Ok(self.store.set(node, Side::Configured, assignments)?)
    }

    pub fn peer_status(&self, node: Uuid) -> Option<PeerStatus> {
        self.sync.status(node)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InstanceState {
    Init,
    Running,
    Stopped,
    Failed(String),
}

struct Instance {
    name: String,
    module: Box<dyn Module>,
    registration: Registration,
    state: InstanceState,
}

impl Instance {
    fn call<R>(
        &mut self,
        env: &mut Env<'_>,
        f: impl FnOnce(&mut dyn Module, &mut ModuleContext<'_>) -> R,
    ) -> R {
        let mut ctx = ModuleContext {
            now: env.now,
            agent: env.agent,
            instance: &self.name,
            discovers: &self.registration.discovers,
            store: env.store,
            bus: env.bus,
            sync: env.sync,
        };
        f(self.module.as_mut(), &mut ctx)
    }
}

/// Owns module instances and routes mutation requests to them.
pub struct ServiceManager {
    instances: Vec<Instance>,
    owners: BTreeMap<String, usize>,
    pending: VecDeque<MutationRequest>,
}

impl ServiceManager {
    /// Registers `modules` against `set`. Every mutation selected by
    /// `required` must have exactly one owner.
    pub fn new(
        modules: Vec<(String, Box<dyn Module>)>,
        set: &MutationSet,
        required: impl Fn(&MutationSpec) -> bool,
    ) -> Result<Self, ConfigurationError> {
        let mut owners = BTreeMap::new();
        let mut instances = Vec::with_capacity(modules.len());
        for (index, (name, module)) in modules.into_iter().enumerate() {
            let registration = module.registration();
            for m in &registration.mutations {
                if set.get(m).is_none() {
                    return Err(ConfigurationError::UnknownMutation {
                        module: name.clone(),
                        mutation: m.clone(),
                    });
                }
                if let Some(&first) = owners.get(m) {
                    let first: &Instance = &instances[first];
                    return Err(ConfigurationError::DuplicateOwner {
                        mutation: m.clone(),
                        first: first.name.clone(),
                        second: name,
                    });
                }
                owners.insert(m.clone(), index);
            }
            instances.push(Instance {
                name,
                module,
                registration,
                state: InstanceState::Init,
            });
        }
        if let Some(m) = set
            .mutations()
            .iter()
            .find(|m| required(m) && !owners.contains_key(&m.name))
        {
            return Err(ConfigurationError::NoOwner(m.name.clone()));
        }
        Ok(Self {
            instances,
            owners,
            pending: VecDeque::new(),
        })
    }

    pub fn instances(&self) -> impl Iterator<Item = (&str, &InstanceState)> {
        self.instances.iter().map(|i| (i.name.as_str(), &i.state))
    }

    pub fn owner(&self, mutation: &str) -> Option<&str> {
        self.owners.get(mutation).map(|&i| self.instances[i].name.as_str())
    }

    /// Starts every autostart instance.
    pub fn start_all(&mut self, env: &mut Env<'_>) {
        let names: Vec<String> = self
            .instances
            .iter()
            .filter(|i| i.registration.autostart)
            .map(|i| i.name.clone())
            .collect();
        for name in names {
            self.start(env, &name);
        }
    }

    pub fn start(&mut self, env: &mut Env<'_>, name: &str) -> bool {
        let Some(inst) = self.instances.iter_mut().find(|i| i.name == name) else {
            return false;
        };
        inst.state = match inst.call(env, |m, ctx| m.start(ctx)) {
            Ok(()) => InstanceState::Running,
            Err(e) => {
                tracing::warn!(instance = name, error = %e, "instance failed to start");
                InstanceState::Failed(e.to_string())
            }
        };
        inst.state == InstanceState::Running
    }

    pub fn stop(&mut self, name: &str) -> bool {
        match self.instances.iter_mut().find(|i| i.name == name) {
            Some(inst) => {
                inst.state = InstanceState::Stopped;
                true
            }
            None => false,
        }
    }

    /// Queues a request for delivery on the next `deliver`.
    pub fn queue(&mut self, request: MutationRequest) {
        self.pending.push_back(request);
    }

    pub fn pending(&self) -> usize {
        self.pending.len()
    }

    /// Hands queued requests to their owners. Requests that cannot run
    /// produce a failed result.
    pub fn deliver(&mut self, env: &mut Env<'_>) {
        while let Some(request) = self.pending.pop_front() {
            let failure = match self.owners.get(&request.mutation) {
                None => Some(format!("no instance owns `{}`", request.mutation)),
                Some(&i) => {
                    let inst = &mut self.instances[i];
                    if inst.state != InstanceState::Running {
                        Some(format!("instance `{}` is not running", inst.name))
                    } else {
                        inst.call(env, |m, ctx| m.on_mutation(ctx, &request))
                            .err()
                            .map(|e| e.to_string())
                    }
                }
            };
            if let Some(reason) = failure {
                env.bus.publish(
                    request.node,
                    Payload::MutationResult(MutationResult {
                        mutation: request.mutation.clone(),
                        outcome: Outcome::Failure(reason),
                    }),
                );
            }
        }
    }

    pub fn tick(&mut self, env: &mut Env<'_>) {
        for inst in self.instances.iter_mut().filter(|i| i.state == InstanceState::Running) {
            if let Err(e) = inst.call(env, |m, ctx| m.on_tick(ctx)) {
                tracing::warn!(instance = %inst.name, error = %e, "instance tick failed");
                inst.state = InstanceState::Failed(e.to_string());
            }
        }
    }

    pub fn on_event(&mut self, env: &mut Env<'_>, event: &Event) {
        let kind = event.kind();
        for inst in self
            .instances
            .iter_mut()
            .filter(|i| i.state == InstanceState::Running && i.registration.events.contains(&kind))
        {
            if let Err(e) = inst.call(env, |m, ctx| m.on_event(ctx, event)) {
                tracing::warn!(instance = %inst.name, error = %e, "event handler failed");
            }
        }
    }
}
