//! Per-slot measurements and their summary.

use std::collections::BTreeSet;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use super::Protocol;
use crate::graph::{ConflictGraph, NodeId, Slot};

/// One CSV row.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotRecord {
    pub slot: u64,
    pub concurrency: u64,
    pub delivered: u64,
    pub queue_total: u64,
    pub misses: u64,
    pub violations_snapshot: u64,
    pub violations_instant: u64,
}

/// Data traffic observed in one slot.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SlotTraffic {
    /// Queueing delay, in slots, of each packet sent this slot.
    pub delays: Vec<u64>,
    pub queue_total: u64,
    pub misses: u64,
}

/// Control-plane counters.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ControlStats {
    pub packets_sent: u64,
    pub deliveries: u64,
    pub losses: u64,
    pub malformed: u64,
    pub stale_announcements: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Metrics {
    pub protocol: Protocol,
    /// Slots before this index are excluded from the means.
    pub warmup_slots: u64,
    pub records: Vec<SlotRecord>,
    /// Delay samples of packets sent at or after `warmup_slots`.
    pub delay_samples: Vec<u64>,
    pub control: ControlStats,
    pub data_dropped: u64,
}

/// Means and totals of a run, as echoed in JSON summaries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub protocol: Protocol,
    pub slots: u64,
    pub warmup_slots: u64,
    pub mean_concurrency: f64,
    pub mean_throughput: f64,
    pub mean_delay: Option<f64>,
    pub delivered_total: u64,
    pub misses_total: u64,
    pub violations_snapshot_total: u64,
    pub violations_instant_total: u64,
    pub control: ControlStats,
    pub data_dropped: u64,
}

pub const CSV_HEADER: &str =
    "slot,protocol,concurrency,delivered,queue_total,misses,violations_snapshot,violations_instant";

impl Metrics {
    pub fn new(protocol: Protocol, warmup_slots: u64) -> Self {
        Metrics {
            protocol,
            warmup_slots,
            records: Vec::new(),
            delay_samples: Vec::new(),
            control: ControlStats::default(),
            data_dropped: 0,
        }
    }

    /// Appends one slot. Conflicts are counted per adjacent active pair,
    /// once against the graph at this instant and once against the snapshot
    /// the schedule was computed from.
    pub fn record_slot(
        &mut self,
        slot: Slot,
        active: &BTreeSet<NodeId>,
        graph_now: &ConflictGraph,
        snapshot_used: &ConflictGraph,
        traffic: &SlotTraffic,
    ) -> SlotRecord {
        let rec = SlotRecord {
            slot: slot.0,
            concurrency: active.len() as u64,
            delivered: traffic.delays.len() as u64,
            queue_total: traffic.queue_total,
            misses: traffic.misses,
            violations_snapshot: snapshot_used.conflicting_pairs(active) as u64,
            violations_instant: graph_now.conflicting_pairs(active) as u64,
        };
        if slot.0 >= self.warmup_slots {
            self.delay_samples.extend_from_slice(&traffic.delays);
        }
        self.records.push(rec);
        rec
    }

    /// Records from which means are taken: post warm-up, or all of them if
    /// the run never left warm-up.
    fn measured(&self) -> &[SlotRecord] {
        let skip = (self.warmup_slots as usize).min(self.records.len());
        if skip == self.records.len() {
            &self.records
        } else {
            &self.records[skip..]
        }
    }

    fn mean_of(&self, f: impl Fn(&SlotRecord) -> u64) -> f64 {
        let rs = self.measured();
        if rs.is_empty() {
            return 0.0;
        }
        rs.iter().map(f).sum::<u64>() as f64 / rs.len() as f64
    }

    pub fn concurrency_series(&self) -> Vec<u64> {
        self.records.iter().map(|r| r.concurrency).collect()
    }

    pub fn mean_concurrency(&self) -> f64 {
        self.mean_of(|r| r.concurrency)
    }

    /// Delivered data packets per slot, network-wide.
    pub fn mean_throughput(&self) -> f64 {
        self.mean_of(|r| r.delivered)
    }

    pub fn mean_delay(&self) -> Option<f64> {
        if self.delay_samples.is_empty() {
            return None;
        }
        Some(self.delay_samples.iter().sum::<u64>() as f64 / self.delay_samples.len() as f64)
    }

    pub fn misses_total(&self) -> u64 {
        self.records.iter().map(|r| r.misses).sum()
    }

    pub fn violations_snapshot_total(&self) -> u64 {
        self.records.iter().map(|r| r.violations_snapshot).sum()
    }

    pub fn violations_instant_total(&self) -> u64 {
        self.records.iter().map(|r| r.violations_instant).sum()
    }

    pub fn summary(&self) -> MetricsSummary {
        MetricsSummary {
            protocol: self.protocol,
            slots: self.records.len() as u64,
            warmup_slots: self.warmup_slots,
            mean_concurrency: self.mean_concurrency(),
            mean_throughput: self.mean_throughput(),
            mean_delay: self.mean_delay(),
            delivered_total: self.records.iter().map(|r| r.delivered).sum(),
            misses_total: self.misses_total(),
            violations_snapshot_total: self.violations_snapshot_total(),
            violations_instant_total: self.violations_instant_total(),
            control: self.control,
            data_dropped: self.data_dropped,
        }
    }

    /// Writes one row per slot under [`CSV_HEADER`].
    pub fn write_csv(&self, mut w: impl Write) -> io::Result<()> {
        writeln!(w, "{CSV_HEADER}")?;
        let proto = self.protocol.name();
        for r in &self.records {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                r.slot,
                proto,
                r.concurrency,
                r.delivered,
                r.queue_total,
                r.misses,
                r.violations_snapshot,
                r.violations_instant
            )?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to a Vec");
        String::from_utf8(buf).expect("ascii")
    }
}
