//! Lossy broadcast channel for control packets.

use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::graph::NodeId;
use crate::pipeline::ControlPacket;

/// Each control packet reaches each neighbor independently with
/// probability `control_delivery_prob`. This stands in for both collisions
/// in the control subslots and fading; the data subslot is collision-free
/// by construction of the schedule.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelModel {
    #[serde(default = "default_prob")]
    pub control_delivery_prob: f64,
}

fn default_prob() -> f64 {
    1.0
}

impl Default for ChannelModel {
    fn default() -> Self {
        ChannelModel { control_delivery_prob: default_prob() }
    }
}

impl ChannelModel {
    pub fn reliable() -> Self {
        Self::default()
    }

    pub fn lossy(control_delivery_prob: f64) -> Self {
        ChannelModel { control_delivery_prob }
    }

    pub fn is_valid(&self) -> bool {
        (0.0..=1.0).contains(&self.control_delivery_prob)
    }

    /// One Bernoulli trial. Always consumes exactly one draw.
    pub fn delivers(&self, rng: &mut impl Rng) -> bool {
        rng.gen::<f64>() < self.control_delivery_prob
    }
}

/// Neighbors reached by one broadcast of `pkt`. Draws happen in ascending
/// receiver order, one per receiver.
pub fn broadcast_control<'a>(
    _pkt: &ControlPacket,
    neighbors: impl IntoIterator<Item = &'a NodeId>,
    channel: &ChannelModel,
    rng: &mut impl Rng,
) -> BTreeSet<NodeId> {
    let mut ordered: Vec<NodeId> = neighbors.into_iter().copied().collect();
    ordered.sort_unstable();
    ordered.into_iter().filter(|_| channel.delivers(rng)).collect()
}
