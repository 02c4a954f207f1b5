//! Typed publish/subscribe event bus.
//!
//! Every subscriber owns a FIFO queue, so a single subscriber always sees a
//! node's events in publish order. Publishing stamps a bus-wide sequence
//! number and fans the same event value out to every matching subscriber.

use std::fmt;
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use uuid::Uuid;

use crate::store::StateDelta;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EventKind {
    StateChange,
    Discovery,
    StateMutation,
    MutationResult,
    NodeLifecycle,
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EventKind::StateChange => "STATE_CHANGE",
            EventKind::Discovery => "DISCOVERY",
            EventKind::StateMutation => "STATE_MUTATION",
            EventKind::MutationResult => "MUTATION_RESULT",
            EventKind::NodeLifecycle => "NODE_LIFECYCLE",
        })
    }
}

/// A request for a module to execute one step of a chain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MutationRequest {
    pub mutation: String,
    pub node: Uuid,
    pub step: usize,
    pub issued_at: u64,
    pub deadline: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Success,
    Failure(String),
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MutationResult {
    pub mutation: String,
    pub outcome: Outcome,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Lifecycle {
    Alive,
    Dead,
    /// Repeated mutation failures; automation for the node is suspended
    /// until its configured state changes.
    Failed(String),
    /// No chain leads from the discovered state to the configured state.
    Unreachable(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Payload {
    StateChange(StateDelta),
    Discovery { variable: String, value: String },
    StateMutation(MutationRequest),
    MutationResult(MutationResult),
    NodeLifecycle(Lifecycle),
}

impl Payload {
    pub fn kind(&self) -> EventKind {
        match self {
            Payload::StateChange(_) => EventKind::StateChange,
            Payload::Discovery { .. } => EventKind::Discovery,
            Payload::StateMutation(_) => EventKind::StateMutation,
            Payload::MutationResult(_) => EventKind::MutationResult,
            Payload::NodeLifecycle(_) => EventKind::NodeLifecycle,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub seq: u64,
    pub node: Uuid,
    pub payload: Payload,
}

impl Event {
    pub fn kind(&self) -> EventKind {
        self.payload.kind()
    }

    /// Whether the event concerns `variable`.
    pub fn mentions(&self, variable: &str) -> bool {
        match &self.payload {
            Payload::StateChange(delta) => delta.changes.iter().any(|c| c.variable == variable),
            Payload::Discovery { variable: v, .. } => v == variable,
            _ => false,
        }
    }
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{} {} node={} ", self.seq, self.kind(), self.node)?;
        match &self.payload {
            Payload::StateChange(delta) => {
                write!(f, "{}", delta.side)?;
                for c in &delta.changes {
                    write!(f, " {}:{}->{}", c.variable, c.old_value(), c.new_value())?;
                }
                Ok(())
            }
            Payload::Discovery { variable, value } => write!(f, "{variable}={value}"),
            Payload::StateMutation(r) => {
                write!(f, "{} step={} deadline={}", r.mutation, r.step, r.deadline)
            }
            Payload::MutationResult(r) => write!(f, "{} {:?}", r.mutation, r.outcome),
            Payload::NodeLifecycle(l) => write!(f, "{l:?}"),
        }
    }
}

/// Optional node and variable predicate attached to a subscription.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EventFilter {
    pub node: Option<Uuid>,
    pub variable: Option<String>,
}

impl EventFilter {
    pub fn any() -> Self {
        Self::default()
    }

    pub fn node(node: Uuid) -> Self {
        Self {
            node: Some(node),
            variable: None,
        }
    }

    pub fn variable(variable: &str) -> Self {
        Self {
            node: None,
            variable: Some(variable.to_string()),
        }
    }

    fn matches(&self, event: &Event) -> bool {
        self.node.is_none_or(|n| n == event.node)
            && self.variable.as_deref().is_none_or(|v| event.mentions(v))
    }
}

struct Subscriber {
    kind: Option<EventKind>,
    filter: EventFilter,
    tx: Sender<Event>,
}

#[derive(Default)]
struct BusInner {
    next_seq: u64,
    subscribers: Vec<Subscriber>,
}

/// Cloneable handle to one event bus.
#[derive(Clone, Default)]
pub struct EventBus {
    inner: Arc<Mutex<BusInner>>,
}

impl fmt::Debug for EventBus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let inner = self.inner.lock().expect("event bus poisoned");
        f.debug_struct("EventBus")
            .field("next_seq", &inner.next_seq)
            .field("subscribers", &inner.subscribers.len())
            .finish()
    }
}

impl EventBus {
    pub fn new() -> Self {
        Self::default()
    }

    /// Subscribes to one event kind.
    pub fn subscribe(&self, kind: EventKind, filter: EventFilter) -> Subscription {
        self.add(Some(kind), filter)
    }

    /// Subscribes to every kind.
    pub fn subscribe_all(&self, filter: EventFilter) -> Subscription {
        self.add(None, filter)
    }

    fn add(&self, kind: Option<EventKind>, filter: EventFilter) -> Subscription {
        let (tx, rx) = mpsc::channel();
        let mut inner = self.inner.lock().expect("event bus poisoned");
        inner.subscribers.push(Subscriber { kind, filter, tx });
        Subscription { rx }
    }

    /// Publishes an event and returns it with its sequence number assigned.
    pub fn publish(&self, node: Uuid, payload: Payload) -> Event {
        let mut inner = self.inner.lock().expect("event bus poisoned");
        inner.next_seq += 1;
        let event = Event {
            seq: inner.next_seq,
            node,
            payload,
        };
        let kind = event.kind();
        // Dropped subscriptions are pruned lazily on the next publish.
        inner.subscribers.retain(|sub| {
            if sub.kind.is_some_and(|k| k != kind) || !sub.filter.matches(&event) {
                return true;
            }
            sub.tx.send(event.clone()).is_ok()
        });
        event
    }

    pub fn subscriber_count(&self) -> usize {
        self.inner.lock().expect("event bus poisoned").subscribers.len()
    }
}

/// Receiving end of a subscription. Dropping it unsubscribes.
#[derive(Debug)]
pub struct Subscription {
    rx: Receiver<Event>,
}

impl Subscription {
    pub fn try_next(&self) -> Option<Event> {
        self.rx.try_recv().ok()
    }

    pub fn drain(&self) -> Vec<Event> {
        std::iter::from_fn(|| self.try_next()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn discovery(var: &str) -> Payload {
        Payload::Discovery {
            variable: var.into(),
            value: "on".into(),
        }
    }

    #[test]
    fn fan_out_delivers_the_same_event() {
        let bus = EventBus::new();
        let a = bus.subscribe(EventKind::Discovery, EventFilter::any());
        let b = bus.subscribe(EventKind::Discovery, EventFilter::any());
        let sent = bus.publish(Uuid::nil(), discovery("power"));
        assert_eq!(a.drain(), vec![sent.clone()]);
        assert_eq!(b.drain(), vec![sent]);
    }

    #[test]
    fn node_filter_excludes_other_nodes() {
        let bus = EventBus::new();
        let x = Uuid::from_u128(1);
        let y = Uuid::from_u128(2);
        let sub = bus.subscribe(EventKind::Discovery, EventFilter::node(x));
        bus.publish(y, discovery("power"));
        assert!(sub.try_next().is_none());
        bus.publish(x, discovery("power"));
        assert_eq!(sub.drain().len(), 1);
    }

    #[test]
    fn kind_and_variable_filters() {
        let bus = EventBus::new();
        let by_var = bus.subscribe_all(EventFilter::variable("runstate"));
        let lifecycle = bus.subscribe(EventKind::NodeLifecycle, EventFilter::any());
        bus.publish(Uuid::nil(), discovery("power"));
        bus.publish(Uuid::nil(), discovery("runstate"));
        assert_eq!(by_var.drain().len(), 1);
        assert!(lifecycle.try_next().is_none());
    }

    #[test]
    fn per_subscriber_order_follows_publish_order() {
        let bus = EventBus::new();
        let sub = bus.subscribe_all(EventFilter::any());
        for i in 0..10 {
            bus.publish(Uuid::from_u128(i % 3), discovery("power"));
        }
        let seqs: Vec<u64> = sub.drain().iter().map(|e| e.seq).collect();
        assert!(seqs.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn dropped_subscriptions_are_pruned() {
        let bus = EventBus::new();
        let sub = bus.subscribe_all(EventFilter::any());
        drop(sub);
        bus.publish(Uuid::nil(), discovery("power"));
        assert_eq!(bus.subscriber_count(), 0);
    }
}
