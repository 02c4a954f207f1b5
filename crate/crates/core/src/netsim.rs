//! Deterministic in-memory datagram network.
//!
//! Every send is decided once, at send time, from a seeded stream: it is
//! either dropped or scheduled for delivery `delay` ticks later. Deliveries
//! due on the same tick are ordered by sender and then by send order.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use uuid::Uuid;

use crate::error::SimConfigError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkFault {
    #[serde(default)]
    pub drop: f64,
    #[serde(default = "one")]
    pub delay: u64,
}

fn one() -> u64 {
    1
}

impl Default for LinkFault {
    fn default() -> Self {
        Self { drop: 0.0, delay: 1 }
    }
}

impl LinkFault {
    pub fn validate(&self) -> Result<(), SimConfigError> {
        if !(0.0..=1.0).contains(&self.drop) || self.drop.is_nan() {
            return Err(SimConfigError::DropProbability(self.drop));
        }
        if self.delay == 0 {
            return Err(SimConfigError::ZeroDelay);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub a: BTreeSet<Uuid>,
    pub b: BTreeSet<Uuid>,
    /// First tick at which the sides can talk again.
    pub heal_at: u64,
}

impl Partition {
    fn separates(&self, x: Uuid, y: Uuid, now: u64) -> bool {
        now < self.heal_at
            && ((self.a.contains(&x) && self.b.contains(&y)) || (self.b.contains(&x) && self.a.contains(&y)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    Random,
    Partition,
    Silenced,
    NoReceiver,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetRecord {
    Sent { id: u64, tick: u64, src: Uuid, dst: Uuid, len: usize },
    Dropped { id: u64, tick: u64, reason: DropReason },
    Delivered { id: u64, tick: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Delivery {
    pub id: u64,
    pub src: Uuid,
    pub dst: Uuid,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NetStats {
    pub sent: u64,
    pub dropped: u64,
    pub delivered: u64,
}

impl NetStats {
    /// Messages still queued.
    pub fn in_flight(&self) -> u64 {
        self.sent - self.dropped - self.delivered
    }
}

pub struct SimNet {
    now: u64,
    rng: ChaCha8Rng,
    endpoints: BTreeSet<Uuid>,
    default_link: LinkFault,
    links: BTreeMap<(Uuid, Uuid), LinkFault>,
    partitions: Vec<Partition>,
    silenced: BTreeSet<Uuid>,
    queue: BTreeMap<(u64, Uuid, u64), Delivery>,
    next_id: u64,
    log: Vec<NetRecord>,
    stats: NetStats,
}

impl SimNet {
    pub fn new(seed: u64, default_link: LinkFault) -> Result<Self, SimConfigError> {
        default_link.validate()?;
        Ok(Self {
            now: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
            endpoints: BTreeSet::new(),
            default_link,
            links: BTreeMap::new(),
            partitions: Vec::new(),
            silenced: BTreeSet::new(),
            queue: BTreeMap::new(),
            next_id: 0,
            log: Vec::new(),
            stats: NetStats::default(),
        })
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn register(&mut self, endpoint: Uuid) {
        self.endpoints.insert(endpoint);
    }

    pub fn endpoints(&self) -> impl Iterator<Item = Uuid> + '_ {
        self.endpoints.iter().copied()
    }

    fn check(&self, endpoint: Uuid) -> Result<(), SimConfigError> {
        if self.endpoints.contains(&endpoint) {
            Ok(())
        } else {
            Err(SimConfigError::UnknownEndpoint(endpoint))
        }
    }

    /// Overrides the fault model of the directed link `src -> dst`.
    pub fn set_link(&mut self, src: Uuid, dst: Uuid, fault: LinkFault) -> Result<(), SimConfigError> {
        self.check(src)?;
        self.check(dst)?;
        fault.validate()?;
        self.links.insert((src, dst), fault);
        Ok(())
    }

    /// Cuts every link between `a` and `b` until `heal_at`.
    pub fn partition(
        &mut self,
        a: impl IntoIterator<Item = Uuid>,
        b: impl IntoIterator<Item = Uuid>,
        heal_at: u64,
    ) -> Result<(), SimConfigError> {
        let a: BTreeSet<Uuid> = a.into_iter().collect();
        let b: BTreeSet<Uuid> = b.into_iter().collect();
        for &e in a.iter().chain(&b) {
            self.check(e)?;
        }
        if let Some(&both) = a.intersection(&b).next() {
            return Err(SimConfigError::OverlappingPartition(both));
        }
        if a.is_empty() || b.is_empty() || heal_at <= self.now {
            return Ok(());
        }
        self.partitions.push(Partition { a, b, heal_at });
        Ok(())
    }

    /// Drops all traffic to and from `endpoint` until `unsilence`.
    pub fn silence(&mut self, endpoint: Uuid) -> Result<(), SimConfigError> {
        self.check(endpoint)?;
        self.silenced.insert(endpoint);
        Ok(())
    }

    pub fn unsilence(&mut self, endpoint: Uuid) -> Result<(), SimConfigError> {
        self.check(endpoint)?;
        self.silenced.remove(&endpoint);
        Ok(())
    }

    /// Sends a datagram at the current tick. Returns its id.
    pub fn send(&mut self, src: Uuid, dst: Uuid, bytes: Vec<u8>) -> Result<u64, SimConfigError> {
        self.check(src)?;
        self.check(dst)?;
        let id = self.next_id;
        self.next_id += 1;
        self.stats.sent += 1;
        self.log.push(NetRecord::Sent {
            id,
            tick: self.now,
            src,
            dst,
            len: bytes.len(),
        });
        let link = self.links.get(&(src, dst)).copied().unwrap_or(self.default_link);
        // Always consume one draw so that faults elsewhere do not shift
        // the random stream.
        let roll: f64 = self.rng.gen();
        let reason = if self.silenced.contains(&src) || self.silenced.contains(&dst) {
            Some(DropReason::Silenced)
        } else if self.partitions.iter().any(|p| p.separates(src, dst, self.now)) {
            Some(DropReason::Partition)
        } else if roll < link.drop {
            Some(DropReason::Random)
        } else {
            None
        };
        match reason {
            Some(reason) => self.drop_record(id, reason),
            None => {
                let at = self.now + link.delay;
                self.queue.insert((at, src, id), Delivery { id, src, dst, bytes });
            }
        }
        Ok(id)
    }

    fn drop_record(&mut self, id: u64, reason: DropReason) {
        self.stats.dropped += 1;
        self.log.push(NetRecord::Dropped {
            id,
            tick: self.now,
            reason,
        });
    }

    /// Moves the clock forward one tick and returns what arrives on it.
    pub fn step(&mut self) -> Vec<Delivery> {
        self.now += 1;
        self.partitions.retain(|p| p.heal_at > self.now);
        let later = self.queue.split_off(&(self.now + 1, Uuid::nil(), 0));
        let due = std::mem::replace(&mut self.queue, later);
        due.into_values()
            .inspect(|d| {
                self.stats.delivered += 1;
                self.log.push(NetRecord::Delivered { id: d.id, tick: self.now });
            })
            .collect()
    }

    /// Advances `ticks` ticks, returning every delivery in order.
    pub fn advance(&mut self, ticks: u64) -> Vec<Delivery> {
        (0..ticks).flat_map(|_| self.step()).collect()
    }

    /// Records that a delivered datagram found no live receiver.
    pub fn undeliverable(&mut self, id: u64) {
        self.stats.delivered -= 1;
        self.drop_record(id, DropReason::NoReceiver);
    }

    pub fn log(&self) -> &[NetRecord] {
        &self.log
    }

    pub fn stats(&self) -> &NetStats {
        &self.stats
    }

    pub fn in_flight(&self) -> usize {
        self.queue.len()
    }
}
