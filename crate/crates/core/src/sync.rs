//! Parent/child state synchronisation over one-way datagrams.
//!
//! The parent is the source of truth for a child's configured state and the
//! child for its own discovered state. Each side periodically sends the
//! slice it owns; receipt doubles as a liveness signal.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use uuid::Uuid;

use crate::error::SyncError;
use crate::event::{EventBus, Lifecycle, Payload};
use crate::schema::{value_of, StateMap, UNKNOWN};
use crate::store::{RunPhase, Side, StateStore};

pub const WIRE_VERSION: u32 = 1;
pub const MAX_DATAGRAM: usize = 1400;
pub const PHONE_HOME_TRIES: u32 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MsgKind {
    PhoneHome,
    PhoneHomeAck,
    Hello,
}

/// Wire frame. Serialized as JSON with fields in declaration order and
/// sorted state keys, so equal frames are byte-identical.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyncDatagram {
    pub version: u32,
    pub msg: MsgKind,
    pub src: Uuid,
    pub dst: Uuid,
    pub seq: u64,
    pub states: StateMap,
}

impl SyncDatagram {
    pub fn encode(&self) -> Result<Vec<u8>, SyncError> {
        let bytes = serde_json::to_vec(self).expect("datagram serializes");
        if bytes.len() > MAX_DATAGRAM {
            return Err(SyncError::Oversize {
                size: bytes.len(),
                limit: MAX_DATAGRAM,
            });
        }
        Ok(bytes)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, SyncError> {
        if bytes.len() > MAX_DATAGRAM {
            return Err(SyncError::Oversize {
                size: bytes.len(),
                limit: MAX_DATAGRAM,
            });
        }
        let d: SyncDatagram =
            serde_json::from_slice(bytes).map_err(|e| SyncError::Malformed(e.to_string()))?;
        if d.version != WIRE_VERSION {
            return Err(SyncError::Version(d.version));
        }
        Ok(d)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PeerRole {
    Parent,
    Child,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PeerStatus {
    Init,
    Synced,
    Dead,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborState {
    pub peer: Uuid,
    pub role: PeerRole,
    pub last_heard: u64,
    pub status: PeerStatus,
    /// Highest sequence number accepted from the peer.
    pub highest_seq: u64,
    /// Whether the peer has ever completed a phone-home.
    pub ever_synced: bool,
}

impl NeighborState {
    fn new(peer: Uuid, role: PeerRole) -> Self {
        Self {
            peer,
            role,
            last_heard: 0,
            status: PeerStatus::Init,
            highest_seq: 0,
            ever_synced: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyncConfig {
    pub hello_ticks: u64,
    pub dead_ticks: u64,
    /// Variable discovered as synced when a child phones home, if the
    /// schema declares it.
    pub runstate_variable: String,
    pub synced_value: String,
}

impl Default for SyncConfig {
    fn default() -> Self {
        Self {
            hello_ticks: 1,
            dead_ticks: 4,
            runstate_variable: "runstate".to_string(),
            synced_value: "synced".to_string(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SyncStats {
    pub sent: u64,
    pub accepted: u64,
    pub stale: u64,
    pub unknown_source: u64,
    pub malformed: u64,
    pub max_size: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outbound {
    pub dst: Uuid,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct PhoneHome {
    tries: u32,
    next_at: u64,
}

#[derive(Debug, Clone)]
pub struct SyncEngine {
    id: Uuid,
    config: SyncConfig,
    neighbors: BTreeMap<Uuid, NeighborState>,
    next_seq: BTreeMap<Uuid, u64>,
    phone_home: Option<PhoneHome>,
    next_hello: u64,
    stats: SyncStats,
}

impl SyncEngine {
    /// Engine for a node with no sync neighbours.
    pub fn standalone(id: Uuid, config: SyncConfig) -> Self {
        Self {
            id,
            config,
            neighbors: BTreeMap::new(),
            next_seq: BTreeMap::new(),
            phone_home: None,
            next_hello: 0,
            stats: SyncStats::default(),
        }
    }

    pub fn parent(id: Uuid, children: impl IntoIterator<Item = Uuid>, config: SyncConfig) -> Self {
        let mut engine = Self::standalone(id, config);
        for child in children {
            engine.add_child(child);
        }
        engine
    }

    pub fn child(id: Uuid, parent: Uuid, config: SyncConfig) -> Self {
        let mut engine = Self::standalone(id, config);
        engine
            .neighbors
            .insert(parent, NeighborState::new(parent, PeerRole::Parent));
        engine.phone_home = Some(PhoneHome { tries: 0, next_at: 0 });
        engine
    }

    pub fn add_child(&mut self, child: Uuid) {
        self.neighbors
            .entry(child)
            .or_insert_with(|| NeighborState::new(child, PeerRole::Child));
    }

    pub fn config(&self) -> &SyncConfig {
        &self.config
    }

    pub fn neighbor(&self, peer: Uuid) -> Option<&NeighborState> {
        self.neighbors.get(&peer)
    }

    pub fn neighbors(&self) -> impl Iterator<Item = &NeighborState> {
        self.neighbors.values()
    }

    pub fn status(&self, peer: Uuid) -> Option<PeerStatus> {
        self.neighbors.get(&peer).map(|n| n.status)
    }

    pub fn stats(&self) -> &SyncStats {
        &self.stats
    }

    /// Whether a child is still trying to reach its parent.
    pub fn phoning_home(&self) -> bool {
        self.phone_home.is_some()
    }

    fn parent_id(&self) -> Option<Uuid> {
        self.neighbors
            .values()
            .find(|n| n.role == PeerRole::Parent)
            .map(|n| n.peer)
    }

    fn frame(&mut self, msg: MsgKind, dst: Uuid, states: StateMap) -> Result<Outbound, SyncError> {
        let seq = self.next_seq.entry(dst).or_insert(0);
        *seq += 1;
        let bytes = SyncDatagram {
            version: WIRE_VERSION,
            msg,
            src: self.id,
            dst,
            seq: *seq,
            states,
        }
        .encode()?;
        self.stats.sent += 1;
        self.stats.max_size = self.stats.max_size.max(bytes.len());
        Ok(Outbound { dst, bytes })
    }

    fn slice(store: &StateStore, node: Uuid, side: Side) -> StateMap {
        store.node(node).map(|n| n.side(side).clone()).unwrap_or_default()
    }

    /// Handles one inbound datagram. Replies (acknowledgements) are returned.
    pub fn receive(
        &mut self,
        now: u64,
        bytes: &[u8],
        store: &mut StateStore,
        bus: &EventBus,
    ) -> Result<Vec<Outbound>, SyncError> {
        let d = match SyncDatagram::decode(bytes) {
            Ok(d) if d.dst == self.id => d,
            _ => {
                self.stats.malformed += 1;
                return Ok(Vec::new());
            }
        };
        let Some(n) = self.neighbors.get_mut(&d.src) else {
            self.stats.unknown_source += 1;
            return Ok(Vec::new());
        };
        let handshake = matches!(d.msg, MsgKind::PhoneHome | MsgKind::PhoneHomeAck);
        if !handshake && d.seq <= n.highest_seq {
            self.stats.stale += 1;
            return Ok(Vec::new());
        }
        if n.role == PeerRole::Child && d.msg == MsgKind::Hello && !n.ever_synced {
            self.stats.unknown_source += 1;
            return Ok(Vec::new());
        }
        n.highest_seq = d.seq;
        n.last_heard = now;
        self.stats.accepted += 1;
        let role = n.role;
        let revived = n.status != PeerStatus::Synced;
        n.status = PeerStatus::Synced;
        n.ever_synced |= handshake;

        match role {
            PeerRole::Child => self.on_child_datagram(d, revived, store, bus),
            PeerRole::Parent => self.on_parent_datagram(d, store, bus),
        }
    }

    fn on_child_datagram(
        &mut self,
        d: SyncDatagram,
        revived: bool,
        store: &mut StateStore,
        bus: &EventBus,
    ) -> Result<Vec<Outbound>, SyncError> {
        let child = d.src;
        if !store.contains(child) {
            return Ok(Vec::new());
        }
        if revived {
            bus.publish(child, Payload::NodeLifecycle(Lifecycle::Alive));
            let _ = store.set_run_phase(child, RunPhase::Syncing);
        }
        // A child that talks to us is at least synced, whether or not its
        // own record says so yet.
        let mut states = d.states;
        let var = &self.config.runstate_variable;
        if store.schema().variable(var).is_some() && !states.contains_key(var) {
            states.insert(var.clone(), self.config.synced_value.clone());
        }
        if let Err(e) = store.replace_side(child, Side::Discovered, &states) {
            tracing::warn!(%child, error = %e, "rejected discovered slice");
        }
        let mut out = Vec::new();
        if d.msg == MsgKind::PhoneHome {
            let configured = Self::slice(store, child, Side::Configured);
            out.push(self.frame(MsgKind::PhoneHomeAck, child, configured)?);
        }
        Ok(out)
    }

    fn on_parent_datagram(
        &mut self,
        d: SyncDatagram,
        store: &mut StateStore,
        bus: &EventBus,
    ) -> Result<Vec<Outbound>, SyncError> {
        self.phone_home = None;
        if let Err(e) = store.replace_side(self.id, Side::Configured, &d.states) {
            tracing::warn!(error = %e, "rejected configured slice");
        }
        // A HELLO also completes the handshake when the ACK was lost.
        self.discover_synced(self.id, store, bus);
        Ok(Vec::new())
    }

    /// Announces `runstate=synced` for `node` when it is currently unknown.
    fn discover_synced(&self, node: Uuid, store: &StateStore, bus: &EventBus) {
        let var = &self.config.runstate_variable;
        if store.schema().variable(var).is_none() {
            return;
        }
        let current = store
            .node(node)
            .map(|n| value_of(&n.discovered, var).to_string())
            .unwrap_or_else(|| UNKNOWN.to_string());
        if current == UNKNOWN {
            bus.publish(
                node,
                Payload::Discovery {
                    variable: var.clone(),
                    value: self.config.synced_value.clone(),
                },
            );
        }
    }

    /// Marks neighbours silent for longer than the dead interval.
    pub fn dead_scan(&mut self, now: u64, store: &mut StateStore, bus: &EventBus) {
        let dead_ticks = self.config.dead_ticks;
        let expired: Vec<Uuid> = self
            .neighbors
            .values()
            .filter(|n| n.status == PeerStatus::Synced && now.saturating_sub(n.last_heard) > dead_ticks)
            .map(|n| n.peer)
            .collect();
        for peer in expired {
            let n = self.neighbors.get_mut(&peer).expect("present");
            n.status = PeerStatus::Dead;
            bus.publish(peer, Payload::NodeLifecycle(Lifecycle::Dead));
            match n.role {
                PeerRole::Child => {
                    let _ = store.set_run_phase(peer, RunPhase::Dead);
                    let var = self.config.runstate_variable.clone();
                    if store.schema().variable(&var).is_some() && store.contains(peer) {
                        let reset = StateMap::from([(var, UNKNOWN.to_string())]);
                        let _ = store.set(peer, Side::Discovered, &reset);
                    }
                }
                PeerRole::Parent => {
                    self.phone_home = Some(PhoneHome { tries: 0, next_at: now });
                }
            }
        }
    }

    /// Periodic sends: hellos to synced peers and phone-home attempts.
    pub fn hello_tick(&mut self, now: u64, store: &StateStore) -> Result<Vec<Outbound>, SyncError> {
        let mut out = Vec::new();
        if let Some(parent) = self.parent_id() {
            if let Some(ph) = &mut self.phone_home {
                if now >= ph.next_at {
                    ph.tries += 1;
                    ph.next_at = if ph.tries >= PHONE_HOME_TRIES {
                        ph.tries = 0;
                        now + PHONE_HOME_TRIES as u64 * self.config.hello_ticks
                    } else {
                        now + self.config.hello_ticks
                    };
                    let discovered = Self::slice(store, self.id, Side::Discovered);
                    out.push(self.frame(MsgKind::PhoneHome, parent, discovered)?);
                }
                return Ok(out);
            }
        }
        if now < self.next_hello {
            return Ok(out);
        }
        self.next_hello = now + self.config.hello_ticks;
        let peers: Vec<(Uuid, PeerRole)> = self
            .neighbors
            .values()
            .filter(|n| match n.role {
                PeerRole::Child => n.ever_synced,
                PeerRole::Parent => n.status == PeerStatus::Synced,
            })
            .map(|n| (n.peer, n.role))
            .collect();
        for (peer, role) in peers {
            let states = match role {
                PeerRole::Child => Self::slice(store, peer, Side::Configured),
                PeerRole::Parent => Self::slice(store, self.id, Side::Discovered),
            };
            out.push(self.frame(MsgKind::Hello, peer, states)?);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event::{EventFilter, EventKind};
    use crate::fixtures::layercake_lite;
    use crate::store::NodeRecord;

    fn id(n: u128) -> Uuid {
        Uuid::from_u128(n)
    }

    fn map(pairs: &[(&str, &str)]) -> StateMap {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    fn parent_side() -> (SyncEngine, StateStore, EventBus) {
        let bus = EventBus::new();
        let mut store = StateStore::with_bus(layercake_lite().schema().clone(), bus.clone());
        store
            .insert_node(
                NodeRecord::new(id(2)).with_parent(id(1)),
                crate::store::Ownership::Local,
            )
            .unwrap();
        store.set(id(2), Side::Configured, &map(&[("power", "on")])).unwrap();
        (SyncEngine::parent(id(1), [id(2)], SyncConfig::default()), store, bus)
    }

    fn frame(msg: MsgKind, src: u128, dst: u128, seq: u64, states: StateMap) -> Vec<u8> {
        SyncDatagram {
            version: 1,
            msg,
            src: id(src),
            dst: id(dst),
            seq,
            states,
        }
        .encode()
        .unwrap()
    }

    #[test]
    fn canonical_encoding() {
        let bytes = frame(MsgKind::Hello, 1, 2, 7, map(&[("z", "1"), ("a", "2")]));
        let text = String::from_utf8(bytes).unwrap();
        assert_eq!(
            text,
            "{\"version\":1,\"msg\":\"HELLO\",\"src\":\"00000000-0000-0000-0000-000000000001\",\"dst\":\"00000000-0000-0000-0000-000000000002\",\"seq\":7,\"states\":{\"a\":\"2\",\"z\":\"1\"}}"
        );
    }

    #[test]
    fn oversize_frames_rejected() {
        let big: StateMap = (0..200).map(|i| (format!("var{i:03}"), "value".to_string())).collect();
        let d = SyncDatagram {
            version: 1,
            msg: MsgKind::Hello,
            src: id(1),
            dst: id(2),
            seq: 1,
            states: big,
        };
        assert!(matches!(d.encode(), Err(SyncError::Oversize { .. })));
    }

    #[test]
    fn version_and_garbage_rejected() {
        let text = b"{\"version\":2,\"msg\":\"HELLO\",\"src\":\"00000000-0000-0000-0000-000000000001\",\"dst\":\"00000000-0000-0000-0000-000000000002\",\"seq\":1,\"states\":{}}";
        assert_eq!(SyncDatagram::decode(text), Err(SyncError::Version(2)));
        assert!(matches!(SyncDatagram::decode(b"nope"), Err(SyncError::Malformed(_))));
    }

    #[test]
    fn phone_home_syncs_and_marks_runstate() {
        let (mut sync, mut store, bus) = parent_side();
        let out = sync
            .receive(3, &frame(MsgKind::PhoneHome, 2, 1, 1, map(&[("power", "on")])), &mut store, &bus)
            .unwrap();
        assert_eq!(out.len(), 1);
        let ack = SyncDatagram::decode(&out[0].bytes).unwrap();
        assert_eq!(ack.msg, MsgKind::PhoneHomeAck);
        assert_eq!(ack.states, map(&[("power", "on")]));
        assert_eq!(sync.status(id(2)), Some(PeerStatus::Synced));
        assert_eq!(
            store.node(id(2)).unwrap().discovered,
            map(&[("power", "on"), ("runstate", "synced")])
        );
        // A later hello that still lacks a run-state keeps it.
        sync.receive(4, &frame(MsgKind::Hello, 2, 1, 2, map(&[("power", "on")])), &mut store, &bus)
            .unwrap();
        assert_eq!(store.node(id(2)).unwrap().discovered["runstate"], "synced");
    }

    #[test]
    fn hello_from_unsynced_child_is_dropped() {
        let (mut sync, mut store, bus) = parent_side();
        sync.receive(1, &frame(MsgKind::Hello, 2, 1, 1, map(&[("power", "on")])), &mut store, &bus)
            .unwrap();
        assert_eq!(sync.stats().unknown_source, 1);
        assert!(store.node(id(2)).unwrap().discovered.is_empty());
        sync.receive(1, &frame(MsgKind::Hello, 9, 1, 1, map(&[])), &mut store, &bus).unwrap();
        assert_eq!(sync.stats().unknown_source, 2);
    }

    #[test]
    fn stale_and_duplicate_hellos_are_ignored() {
        let (mut sync, mut store, bus) = parent_side();
        sync.receive(1, &frame(MsgKind::PhoneHome, 2, 1, 1, map(&[])), &mut store, &bus).unwrap();
        let hello = frame(MsgKind::Hello, 2, 1, 5, map(&[("power", "on"), ("runstate", "running")]));
        sync.receive(2, &hello, &mut store, &bus).unwrap();
        sync.receive(3, &hello, &mut store, &bus).unwrap();
        let old = frame(MsgKind::Hello, 2, 1, 4, map(&[("power", "off")]));
        sync.receive(3, &old, &mut store, &bus).unwrap();
        assert_eq!(sync.stats().stale, 2);
        assert_eq!(store.node(id(2)).unwrap().discovered["runstate"], "running");
    }

    #[test]
    fn dead_scan_strips_runstate_and_revives_on_hello() {
        let (mut sync, mut store, bus) = parent_side();
        let life = bus.subscribe(EventKind::NodeLifecycle, EventFilter::any());
        sync.receive(10, &frame(MsgKind::PhoneHome, 2, 1, 1, map(&[])), &mut store, &bus).unwrap();
        store
            .replace_side(id(2), Side::Discovered, &map(&[("power", "on"), ("runstate", "running")]))
            .unwrap();
        sync.dead_scan(14, &mut store, &bus);
        assert_eq!(sync.status(id(2)), Some(PeerStatus::Synced));
        sync.dead_scan(15, &mut store, &bus);
        assert_eq!(sync.status(id(2)), Some(PeerStatus::Dead));
        assert_eq!(store.node(id(2)).unwrap().discovered, map(&[("power", "on")]));
        assert_eq!(store.node(id(2)).unwrap().run_phase, RunPhase::Dead);
        let hello = frame(MsgKind::Hello, 2, 1, 2, map(&[("power", "on"), ("runstate", "running")]));
        sync.receive(16, &hello, &mut store, &bus).unwrap();
        assert_eq!(sync.status(id(2)), Some(PeerStatus::Synced));
        let kinds: Vec<Payload> = life.drain().into_iter().map(|e| e.payload).collect();
        assert_eq!(
            kinds,
            [
                Payload::NodeLifecycle(Lifecycle::Alive),
                Payload::NodeLifecycle(Lifecycle::Dead),
                Payload::NodeLifecycle(Lifecycle::Alive)
            ]
        );
    }

    #[test]
    fn parent_hellos_carry_configured_slices() {
        let (mut sync, mut store, bus) = parent_side();
        assert!(sync.hello_tick(1, &store).unwrap().is_empty());
        sync.receive(1, &frame(MsgKind::PhoneHome, 2, 1, 1, map(&[])), &mut store, &bus).unwrap();
        let out = sync.hello_tick(2, &store).unwrap();
        assert_eq!(out.len(), 1);
        let d = SyncDatagram::decode(&out[0].bytes).unwrap();
        assert_eq!((d.msg, d.seq), (MsgKind::Hello, 2));
        assert_eq!(d.states, map(&[("power", "on")]));
    }

    #[test]
    fn child_retries_then_backs_off() {
        let bus = EventBus::new();
        let mut store = StateStore::with_bus(layercake_lite().schema().clone(), bus.clone());
        store.insert_node(NodeRecord::new(id(2)), crate::store::Ownership::Local).unwrap();
        let mut sync = SyncEngine::child(id(2), id(1), SyncConfig::default());
        let sends: Vec<u64> = (0..30)
            .filter(|&t| !sync.hello_tick(t, &store).unwrap().is_empty())
            .collect();
        assert_eq!(sends, [0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 19, 20, 21, 22, 23, 24, 25, 26, 27, 28]);
    }

    #[test]
    fn child_applies_parent_configuration() {
        let bus = EventBus::new();
        let mut store = StateStore::with_bus(layercake_lite().schema().clone(), bus.clone());
        store.insert_node(NodeRecord::new(id(2)), crate::store::Ownership::Local).unwrap();
        let mut sync = SyncEngine::child(id(2), id(1), SyncConfig::default());
        let disc = bus.subscribe(EventKind::Discovery, EventFilter::any());
        let ack = frame(MsgKind::PhoneHomeAck, 1, 2, 9, map(&[("power", "on")]));
        sync.receive(1, &ack, &mut store, &bus).unwrap();
        assert!(!sync.phoning_home());
        assert_eq!(store.node(id(2)).unwrap().configured, map(&[("power", "on")]));
        assert_eq!(disc.drain().len(), 1);
        let out = sync.hello_tick(2, &store).unwrap();
        assert_eq!(SyncDatagram::decode(&out[0].bytes).unwrap().msg, MsgKind::Hello);
        sync.dead_scan(7, &mut store, &bus);
        assert!(sync.phoning_home());
        assert_eq!(store.node(id(2)).unwrap().configured, map(&[("power", "on")]));
    }

    #[test]
    fn hello_completes_phone_home_when_ack_is_lost() {
        let bus = EventBus::new();
        let mut store = StateStore::with_bus(layercake_lite().schema().clone(), bus.clone());
        store.insert_node(NodeRecord::new(id(2)), crate::store::Ownership::Local).unwrap();
        let mut sync = SyncEngine::child(id(2), id(1), SyncConfig::default());
        let disc = bus.subscribe(EventKind::Discovery, EventFilter::any());
        let hello = frame(MsgKind::Hello, 1, 2, 3, map(&[("power", "on")]));
        sync.receive(1, &hello, &mut store, &bus).unwrap();
        assert!(!sync.phoning_home());
        let found: Vec<Payload> = disc.drain().into_iter().map(|e| e.payload).collect();
        assert_eq!(
            found,
            [Payload::Discovery {
                variable: "runstate".into(),
                value: "synced".into()
            }]
        );
    }
}
