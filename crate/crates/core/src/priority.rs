//! Per-slot node priorities.
//!
//! Every node can compute the priority of any other node for any slot
//! without exchanging messages: the priority is a hash of the id and the slot
//! number, with the id appended so that priorities are always distinct.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::graph::{NodeId, Slot};

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

/// Activation priority. Ordered by `hash`, then by `id`; higher wins.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Priority {
    pub hash: u64,
    pub id: NodeId,
}

/// Murmur3 64-bit finalizer.
pub fn fmix64(mut k: u64) -> u64 {
    k ^= k >> 33;
    k = k.wrapping_mul(0xff51_afd7_ed55_8ccd);
    k ^= k >> 33;
    k = k.wrapping_mul(0xc4ce_b9fe_1a85_ec53);
    k ^ (k >> 33)
}

/// Digest of the 12-byte key: id (4 bytes, big-endian) then slot (8 bytes,
/// big-endian), hashed with FNV-1a-64.
pub fn priority_digest(id: NodeId, slot: Slot) -> u64 {
    let mut buf = [0u8; 12];
    buf[..4].copy_from_slice(&id.0.to_be_bytes());
    buf[4..].copy_from_slice(&slot.0.to_be_bytes());
    fnv1a64(&buf)
}

/// Priority of `id` in `slot`: the finalized digest paired with the id.
///
/// The finalizer is required. FNV-1a alone lets trailing bytes reach only the
/// low half of the state, so the slot barely touches the high bits and the
/// order between two ids would be the same in nearly every slot.
pub fn compute_priority(id: NodeId, slot: Slot) -> Priority {
    Priority { hash: fmix64(priority_digest(id, slot)), id }
}

/// Where node priorities come from.
///
/// `Fixed` pins a slot-independent rank per node. It exists so that
/// hand-drawn scenarios can be replayed with exactly the ordering they were
/// drawn with; nodes missing from the table rank by hash as usual.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PrioritySource {
    #[default]
    Hashed,
    Fixed(BTreeMap<NodeId, u64>),
}

impl PrioritySource {
    pub fn priority(&self, id: NodeId, slot: Slot) -> Priority {
        match self {
            PrioritySource::Hashed => compute_priority(id, slot),
            PrioritySource::Fixed(table) => match table.get(&id) {
                Some(&rank) => Priority { hash: rank, id },
                None => compute_priority(id, slot),
            },
        }
    }
}
