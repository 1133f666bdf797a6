//! Shared replay and parameter buffers.

use std::collections::VecDeque;
use std::sync::{Arc, Mutex, MutexGuard};

use rand::Rng;

use crate::agent::{Ensemble, Member};
use crate::critic::CriticKind;
use crate::error::{Error, Result};
use crate::net::FeaturePatch;

pub const DEFAULT_REPLAY_CAPACITY: usize = 5000;

/// One executed grasp, reduced to what the selected-pixel update needs:
/// the patch around the grasped pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub patch: FeaturePatch,
    pub row: usize,
    pub col: usize,
    pub action: [f64; 2],
    pub reward: u8,
    pub step_index: u64,
    pub scene_id: u64,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    // a panicking worker must not take the buffers down with it
    m.lock().unwrap_or_else(|e| e.into_inner())
}

#[derive(Debug)]
struct Ring {
    items: VecDeque<Arc<Transition>>,
    appended: u64,
}

/// Bounded FIFO; once full, each append evicts the oldest transition.
#[derive(Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    ring: Mutex<Ring>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            ring: Mutex::new(Ring {
                items: VecDeque::with_capacity(capacity.min(1 << 16)),
                appended: 0,
            }),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        lock(&self.ring).items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Total appends so far, including evicted ones.
    pub fn appended(&self) -> u64 {
        lock(&self.ring).appended
    }

    pub fn push(&self, t: Transition) -> u64 {
        let mut ring = lock(&self.ring);
        if ring.items.len() == self.capacity {
            ring.items.pop_front();
        }
        ring.items.push_back(Arc::new(t));
        ring.appended += 1;
        ring.appended
    }

    /// `n` uniform draws with replacement; empty when the buffer is.
    pub fn sample(&self, rng: &mut impl Rng, n: usize) -> Vec<Arc<Transition>> {
        let ring = lock(&self.ring);
        if ring.items.is_empty() {
            return Vec::new();
        }
        (0..n)
            .map(|_| Arc::clone(&ring.items[rng.random_range(0..ring.items.len())]))
            .collect()
    }

    /// Oldest-first copy of the current contents.
    pub fn snapshot(&self) -> Vec<Arc<Transition>> {
        lock(&self.ring).items.iter().cloned().collect()
    }
}

#[derive(Debug)]
pub struct MemberSnapshot {
    pub member: Member,
    /// Updates the member had performed when it published.
    pub updates: u64,
    pub checksum: u64,
}

#[derive(Debug, Clone)]
struct Slots {
    version: u64,
    members: Vec<Arc<MemberSnapshot>>,
}

/// Version and per-member update counts of the snapshot a reader got.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SnapshotInfo {
    pub version: u64,
    pub member_updates: Vec<u64>,
}

/// Latest published parameters of every member. Each publish swaps one
/// member's slot; readers copy the whole slot table under the lock.
#[derive(Debug)]
pub struct ParameterBuffer {
    kind: CriticKind,
    patch: usize,
    slots: Mutex<Slots>,
}

impl ParameterBuffer {
    pub fn new(ensemble: &Ensemble) -> Self {
        Self {
            kind: ensemble.kind,
            patch: ensemble.patch,
            slots: Mutex::new(Slots {
                version: 0,
                members: ensemble
                    .members
                    .iter()
                    .map(|m| {
                        Arc::new(MemberSnapshot {
                            checksum: m.checksum(),
                            member: m.clone(),
                            updates: 0,
                        })
                    })
                    .collect(),
            }),
        }
    }

    pub fn version(&self) -> u64 {
        lock(&self.slots).version
    }

    /// Returns the new version.
    pub fn publish(&self, index: usize, member: Member, updates: u64) -> Result<u64> {
        let snap = Arc::new(MemberSnapshot {
            checksum: member.checksum(),
            member,
            updates,
        });
        let mut slots = lock(&self.slots);
        let slot = slots
            .members
            .get_mut(index)
            .ok_or_else(|| Error::InvalidArgument(format!("no member {index}")))?;
        *slot = snap;
        slots.version += 1;
        Ok(slots.version)
    }

    /// A consistent copy of the latest parameters. Checksums are verified
    /// so a torn snapshot is reported instead of used.
    pub fn read(&self) -> Result<(Ensemble, SnapshotInfo)> {
        let slots = lock(&self.slots).clone();
        let mut members = Vec::with_capacity(slots.members.len());
        for (j, s) in slots.members.iter().enumerate() {
            if s.member.checksum() != s.checksum {
                return Err(Error::Worker(format!("member {j} snapshot failed its checksum")));
            }
            members.push(s.member.clone());
        }
        Ok((
            Ensemble {
                kind: self.kind,
                patch: self.patch,
                members,
            },
            SnapshotInfo {
                version: slots.version,
                member_updates: slots.members.iter().map(|s| s.updates).collect(),
            },
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Tag};

    fn tr(i: u64) -> Transition {
        Transition {
            patch: FeaturePatch(vec![i as f64 * 0.1, -0.3]),
            row: i as usize,
            col: 2,
            action: [0.01 * i as f64, -0.2],
            reward: (i % 2) as u8,
            step_index: i,
            scene_id: 7,
        }
    }

    #[test]
    fn replay_is_bounded_fifo_and_bitwise_stable() {
        let b = ReplayBuffer::new(3);
        for i in 0..5 {
            b.push(tr(i));
        }
        assert_eq!(b.len(), 3);
        assert_eq!(b.appended(), 5);
        let items = b.snapshot();
        assert_eq!(*items[0], tr(2));
        assert_eq!(*items[2], tr(4));
    }

    #[test]
    fn empty_replay_samples_nothing() {
        let b = ReplayBuffer::new(4);
        assert!(b.sample(&mut stream(1, Tag::Batch, 0), 12).is_empty());
    }

    #[test]
    fn sampling_is_uniform() {
        let b = ReplayBuffer::new(10);
        for i in 0..4 {
            b.push(tr(i));
        }
        let mut counts = [0usize; 4];
        for t in b.sample(&mut stream(1, Tag::Batch, 0), 40_000) {
            counts[t.step_index as usize] += 1;
        }
        assert!(counts.iter().all(|&c| (c as f64 - 10_000.0).abs() < 400.0), "{counts:?}");
    }

    #[test]
    fn parameter_buffer_versions_increase() {
        let e = Ensemble::standard(1, CriticKind::Mv).unwrap();
        let p = ParameterBuffer::new(&e);
        let (r, info) = p.read().unwrap();
        assert_eq!(r, e);
        assert_eq!(info.version, 0);
        let other = Ensemble::standard(2, CriticKind::Mv).unwrap();
        assert_eq!(p.publish(1, other.members[1].clone(), 10).unwrap(), 1);
        let (r, info) = p.read().unwrap();
        assert_eq!(r.members[1], other.members[1]);
        assert_eq!(r.members[0], e.members[0]);
        assert_eq!(info.member_updates, vec![0, 10, 0]);
        assert!(p.publish(5, other.members[0].clone(), 1).is_err());
    }
}
