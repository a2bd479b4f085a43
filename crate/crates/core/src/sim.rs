//! Discrete-event run of a whole scenario.
//!
//! Events are processed in time order; ties go to period closes first, then
//! deliveries, sensor ticks and storage flushes, then insertion order. The
//! medium's generator and the scenario's noise are the only sources of
//! randomness, so a run is a pure function of the scenario.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, VecDeque};
use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::energy::{energy_report, EnergyMeter, EnergyReport};
use crate::fixed::Fixed;
use crate::gateway::{Alert, FieldAggregates, Gateway, GatewayStats, Reassembler, SensorRecord};
use crate::medium::{DeliveryOutcome, DropReason, Frame, Medium, MediumError, NodeAddress, Position, RoutingMode, Topology};
use crate::nodes::{
    builtin_profiles, decode_line, encode_line, ActuatorEvent, Field, Framer, LineKind, RoomId, SensorNode,
    SensorSample,
};
use crate::pipeline::{ascii_size, compress, PayloadSealer};
use crate::scenario::{AggregateAt, Scenario};
use crate::store::{BatchId, LocalStore, StorageBackend, StoreError};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("node {index} cannot join the network: {source}")]
    Join { index: usize, source: MediumError },
    #[error("output directory {0} exists and is not empty")]
    OutputNotEmpty(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Priority {
    PeriodClose,
    Delivery,
    Tick,
    Flush,
}

#[derive(Debug)]
enum Action {
    ClosePeriod { start: f64 },
    Deliver { frame: Frame, sent: f64, hops: usize },
    Tick(NodeAddress),
    Flush,
}

#[derive(Debug)]
struct Event {
    at: f64,
    priority: Priority,
    order: u64,
    action: Action,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    // Reversed: BinaryHeap is a max-heap.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .at
            .total_cmp(&self.at)
            .then(other.priority.cmp(&self.priority))
            .then(other.order.cmp(&self.order))
    }
}

/// Readings folded so far and per-field (sum of hundredths, count).
type RoomSums = (usize, BTreeMap<Field, (i128, usize)>);

/// A relay that reassembles its children's readings and forwards one
/// summary line per room every `window` readings.
#[derive(Debug)]
struct Router {
    framer: Framer,
    reassembler: Reassembler,
    window: usize,
    pending: BTreeMap<RoomId, RoomSums>,
    lines_in: u64,
    summaries_out: u64,
}

impl Router {
    fn receive(&mut self, frame: &Frame, arrival: u64) -> Vec<Vec<u8>> {
        let (_, lines) = self.reassembler.push(frame, arrival);
        let mut out = Vec::new();
        for line in lines {
            let Ok((kind, room, samples)) = decode_line(&line.bytes) else { continue };
            self.lines_in += 1;
            if kind == LineKind::Summary {
                out.push(line.bytes);
                continue;
            }
            let (count, sums) = self.pending.entry(room).or_default();
            for s in &samples {
                let e = sums.entry(s.field).or_default();
                e.0 += i128::from(s.value.hundredths());
                e.1 += 1;
            }
            *count += 1;
            if *count >= self.window {
                let means: Vec<SensorSample> = room
                    .fields()
                    .iter()
                    .filter_map(|&f| {
                        let &(sum, n) = sums.get(&f)?;
                        let mean = Fixed::from_f64(sum as f64 / n as f64 / Fixed::SCALE as f64).ok()?;
                        Some(SensorSample::new(f, f.unit().quantize(mean)))
                    })
                    .collect();
                self.pending.remove(&room);
                self.summaries_out += 1;
                out.push(encode_line(LineKind::Summary, room, &means));
            }
        }
        out
    }
}

/// One sensor tick as seen at the node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickRecord {
    pub t: u64,
    pub node: NodeAddress,
    pub room: RoomId,
    pub first_seq: u8,
    pub frames: usize,
    pub events: Vec<ActuatorEvent>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeInfo {
    pub address: NodeAddress,
    pub room: Option<RoomId>,
    pub parent: Option<NodeAddress>,
    pub position: Position,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencySummary {
    pub count: u64,
    pub min_ms: f64,
    pub mean_ms: f64,
    pub max_ms: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RadioStats {
    pub frames_sent: u64,
    pub frames_delivered: u64,
    pub frames_dropped: BTreeMap<DropReason, u64>,
    /// Delivered after the end of the run.
    pub frames_in_flight: u64,
    pub bits_delivered: u64,
    pub hops: BTreeMap<usize, u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouterStats {
    pub address: NodeAddress,
    pub lines_in: u64,
    pub summaries_out: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressionStats {
    pub room: RoomId,
    pub field: Field,
    pub samples: usize,
    pub ascii_bytes: usize,
    pub compressed_bytes: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StorageStats {
    pub batches_committed: u64,
    pub records_committed: u64,
    pub failed_attempts: u64,
    /// Batches still unstored when the run ended.
    pub batches_pending: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub duration_ms: u64,
    pub routing: RoutingMode,
    pub aggregate_at: AggregateAt,
    pub encrypted: bool,
    pub nodes: Vec<NodeInfo>,
    pub radio: RadioStats,
    pub latency: Option<LatencySummary>,
    pub gateway: GatewayStats,
    pub routers: Vec<RouterStats>,
    pub actuator_events: BTreeMap<RoomId, u64>,
    pub alerts: Vec<Alert>,
    pub energy: EnergyReport,
    pub aggregates: Vec<FieldAggregates>,
    pub compression: Vec<CompressionStats>,
    pub storage: StorageStats,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub report: RunReport,
    pub energy: EnergyReport,
    pub ticks: Vec<TickRecord>,
    /// Every record the gateway produced, in ingest order.
    pub records: Vec<SensorRecord>,
}

pub struct Simulation {
    scenario: Scenario,
    topology: Topology,
    medium: Medium,
    sensors: BTreeMap<NodeAddress, SensorNode>,
    routers: BTreeMap<NodeAddress, Router>,
    meters: BTreeMap<NodeAddress, EnergyMeter>,
    nodes: Vec<NodeInfo>,
    gateway: Gateway,
    queue: BinaryHeap<Event>,
    order: u64,
    store: Option<Arc<dyn StorageBackend>>,
    unstored: VecDeque<(BatchId, Vec<SensorRecord>)>,
    next_batch: BatchId,
    storage: StorageStats,
    radio: RadioStats,
    latency: Vec<f64>,
    ticks: Vec<TickRecord>,
    records: Vec<SensorRecord>,
}

impl Simulation {
    pub fn new(scenario: Scenario) -> Result<Self, SimError> {
        let mut topology = Topology::new(scenario.coordinator, scenario.link.max_range, scenario.routing);
        let profiles = builtin_profiles();
        let mut sensors = BTreeMap::new();
        let mut routers = BTreeMap::new();
        let mut meters = BTreeMap::new();
        let mut nodes = vec![NodeInfo {
            address: NodeAddress::COORDINATOR,
            room: None,
            parent: None,
            position: scenario.coordinator,
        }];
        let max_payload = scenario.link.max_payload;
        let sealer = |addr| scenario.encryption_key.clone().map(|k| PayloadSealer::new(k, addr));

        for (index, spec) in scenario.nodes.iter().enumerate() {
            let addr = topology.join(spec.position).map_err(|source| SimError::Join { index, source })?;
            let parent = topology.parent(addr);
            nodes.push(NodeInfo { address: addr, room: spec.room, parent, position: spec.position });
            meters.insert(addr, EnergyMeter::new(scenario.energy.capacity_mah));
            match spec.room {
                Some(room) => {
                    let mut node = SensorNode::new(addr, profiles[&room].clone(), max_payload);
                    node.sampling_period_ms = spec.sampling_period_ms;
                    if let Some(s) = sealer(addr) {
                        node = node.with_sealer(s);
                    }
                    sensors.insert(addr, node);
                }
                None => {
                    let mut framer = Framer::new(addr, NodeAddress::COORDINATOR, max_payload);
                    if let Some(s) = sealer(addr) {
                        framer = framer.with_sealer(s);
                    }
                    let reassembler =
                        Reassembler::new(scenario.gateway.reassembly_timeout_ms, scenario.encryption_key.clone());
                    routers.insert(
                        addr,
                        Router {
                            framer,
                            reassembler,
                            window: scenario.gateway.aggregate_window,
                            pending: BTreeMap::new(),
                            lines_in: 0,
                            summaries_out: 0,
                        },
                    );
                }
            }
        }
        if scenario.gateway.aggregate_at == AggregateAt::Router {
            for node in sensors.values_mut() {
                if let Some(p) = topology.parent(node.address()).filter(|p| routers.contains_key(p)) {
                    node.framer.sink = p;
                }
            }
        }

        let gateway = Gateway::new(&scenario.gateway, scenario.encryption_key.clone());
        let medium = Medium::new(scenario.link.clone(), scenario.seed);
        let mut sim = Self {
            topology,
            medium,
            sensors,
            routers,
            meters,
            nodes,
            gateway,
            queue: BinaryHeap::new(),
            order: 0,
            store: None,
            unstored: VecDeque::new(),
            next_batch: 0,
            storage: StorageStats::default(),
            radio: RadioStats::default(),
            latency: Vec::new(),
            ticks: Vec::new(),
            records: Vec::new(),
            scenario,
        };
        let addrs: Vec<NodeAddress> = sim.sensors.keys().copied().collect();
        for addr in addrs {
            sim.schedule(0.0, Priority::Tick, Action::Tick(addr));
        }
        let period = sim.scenario.energy.duty_cycle.period_ms as f64;
        sim.schedule(period, Priority::PeriodClose, Action::ClosePeriod { start: 0.0 });
        sim.schedule(sim.scenario.gateway.batch_interval_ms as f64, Priority::Flush, Action::Flush);
        Ok(sim)
    }

    /// Persists record batches to `store` as the run progresses.
    pub fn with_store(mut self, store: Arc<dyn StorageBackend>) -> Self {
        self.store = Some(store);
        self
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    fn schedule(&mut self, at: f64, priority: Priority, action: Action) {
        self.order += 1;
        self.queue.push(Event { at, priority, order: self.order, action });
    }

    fn end(&self) -> f64 {
        self.scenario.duration_ms as f64
    }

    fn send(&mut self, frame: Frame, now: f64) {
        self.radio.frames_sent += 1;
        let tx = self.medium.transmit(&self.topology, &frame, now);
        for s in &tx.senders {
            if let Some(m) = self.meters.get_mut(s) {
                m.add_tx(tx.airtime_ms);
            }
        }
        match tx.outcome {
            DeliveryOutcome::Delivered { at } => {
                let hops = tx.path.len().saturating_sub(1);
                self.schedule(at, Priority::Delivery, Action::Deliver { frame, sent: now, hops });
            }
            DeliveryOutcome::Dropped { reason } => *self.radio.frames_dropped.entry(reason).or_default() += 1,
        }
    }

    fn tick(&mut self, addr: NodeAddress, now: f64) {
        if !self.topology.is_node_up(addr) {
            return;
        }
        let t = now as u64;
        let node = self.sensors.get_mut(&addr).expect("ticks only for sensors");
        let room = node.room();
        let first_seq = node.next_seq();
        let env = self.scenario.snapshot(room, t);
        let out = node.tick(&env, t).expect("snapshot covers the room's fields");
        let period = node.sampling_period_ms as f64;
        self.ticks.push(TickRecord { t, node: addr, room, first_seq, frames: out.frames.len(), events: out.events });
        for f in out.frames {
            self.send(f, now);
        }
        if now + period < self.end() {
            self.schedule(now + period, Priority::Tick, Action::Tick(addr));
        }
    }

    fn deliver(&mut self, frame: Frame, sent: f64, hops: usize, at: f64) {
        self.radio.frames_delivered += 1;
        self.radio.bits_delivered += frame.wire_bits();
        *self.radio.hops.entry(hops).or_default() += 1;
        self.latency.push(at - sent);
        let arrival = at.floor() as u64;
        if frame.dst == NodeAddress::COORDINATOR {
            let recs = self.gateway.receive_frame(&frame, arrival);
            self.records.extend(recs);
        } else if let Some(router) = self.routers.get_mut(&frame.dst) {
            let lines = router.receive(&frame, arrival);
            let frames: Vec<Frame> = lines.iter().flat_map(|l| router.framer.frame_message(l)).collect();
            for f in frames {
                self.send(f, at);
            }
        }
    }

    fn close_period(&mut self, start: f64) {
        let duty = self.scenario.energy.duty_cycle;
        let model = self.scenario.energy.model;
        let mut died = Vec::new();
        for (&addr, meter) in self.meters.iter_mut() {
            if meter.close_period(start, &duty, &model).is_some() {
                died.push(addr);
            }
        }
        for addr in died {
            self.topology.fail_node(addr);
        }
        let next = start + duty.period_ms as f64;
        if next + duty.period_ms as f64 <= self.end() {
            self.schedule(next + duty.period_ms as f64, Priority::PeriodClose, Action::ClosePeriod { start: next });
        }
    }

    fn flush(&mut self, now: f64) {
        self.gateway.poll(now as u64);
        let batch = self.gateway.take_batch();
        if !batch.is_empty() {
            self.unstored.push_back((self.next_batch, batch));
            self.next_batch += 1;
        }
        self.store_pending();
    }

    /// Stores queued batches in order, stopping at the first failure; the
    /// rest wait for the next flush.
    fn store_pending(&mut self) {
        let Some(store) = self.store.clone() else {
            self.unstored.clear();
            return;
        };
        while let Some((id, batch)) = self.unstored.front() {
            match store.insert_batch(batch, *id) {
                Ok(n) => {
                    self.storage.batches_committed += 1;
                    self.storage.records_committed += n as u64;
                    self.unstored.pop_front();
                }
                Err(_) => {
                    self.storage.failed_attempts += 1;
                    break;
                }
            }
        }
    }

    pub fn run_to_end(mut self) -> RunResult {
        let end = self.end();
        while let Some(ev) = self.queue.pop() {
            if ev.at > end {
                if matches!(ev.action, Action::Deliver { .. }) {
                    self.radio.frames_in_flight += 1;
                }
                continue;
            }
            match ev.action {
                Action::ClosePeriod { start } => self.close_period(start),
                Action::Deliver { frame, sent, hops } => self.deliver(frame, sent, hops, ev.at),
                Action::Tick(addr) => self.tick(addr, ev.at),
                Action::Flush => {
                    self.flush(ev.at);
                    let next = ev.at + self.scenario.gateway.batch_interval_ms as f64;
                    if next < end {
                        self.schedule(next, Priority::Flush, Action::Flush);
                    }
                }
            }
        }
        self.flush(end);
        self.finish()
    }

    fn finish(mut self) -> RunResult {
        let energy = energy_report(&self.meters, &self.scenario.energy.model, self.scenario.duration_ms);
        let latency = (!self.latency.is_empty()).then(|| LatencySummary {
            count: self.latency.len() as u64,
            min_ms: self.latency.iter().copied().fold(f64::INFINITY, f64::min),
            mean_ms: self.latency.iter().sum::<f64>() / self.latency.len() as f64,
            max_ms: self.latency.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        });
        let mut actuator_events: BTreeMap<RoomId, u64> = BTreeMap::new();
        for t in &self.ticks {
            *actuator_events.entry(t.room).or_default() += t.events.len() as u64;
        }

        let mut streams: BTreeMap<(RoomId, Field), Vec<Fixed>> = BTreeMap::new();
        for r in &self.records {
            streams.entry((r.room, r.field)).or_default().push(r.value);
        }
        let compression = streams
            .iter()
            .map(|(&(room, field), values)| CompressionStats {
                room,
                field,
                samples: values.len(),
                ascii_bytes: ascii_size(values),
                compressed_bytes: compress(values).expect("stored values are in range").encoded_len(),
            })
            .collect();

        self.storage.batches_pending = self.unstored.len() as u64;
        let report = RunReport {
            seed: self.scenario.seed,
            duration_ms: self.scenario.duration_ms,
            routing: self.scenario.routing,
            aggregate_at: self.scenario.gateway.aggregate_at,
            encrypted: self.scenario.encryption_key.is_some(),
            nodes: self.nodes,
            radio: self.radio,
            latency,
            gateway: self.gateway.stats.clone(),
            routers: self
                .routers
                .iter()
                .map(|(&address, r)| RouterStats { address, lines_in: r.lines_in, summaries_out: r.summaries_out })
                .collect(),
            actuator_events,
            alerts: std::mem::take(&mut self.gateway.alerts),
            energy: energy.clone(),
            aggregates: self.gateway.finish_aggregates(),
            compression,
            storage: self.storage,
        };
        RunResult { report, energy, ticks: self.ticks, records: self.records }
    }
}

pub const REPORT_FILE: &str = "report.json";
pub const STORE_DIR: &str = "store";

/// Runs `scenario` and writes `report.json` plus the record store into
/// `out`. Records go to `out/store` unless `remote` is given.
pub fn simulate_to_dir(
    scenario: Scenario,
    out: &Path,
    remote: Option<Arc<dyn StorageBackend>>,
) -> Result<RunResult, SimError> {
    if out.exists() && fs::read_dir(out)?.next().is_some() {
        return Err(SimError::OutputNotEmpty(out.display().to_string()));
    }
    fs::create_dir_all(out)?;
    let store: Arc<dyn StorageBackend> = match remote {
        Some(r) => r,
        None => Arc::new(LocalStore::open(out.join(STORE_DIR))?),
    };
    let result = Simulation::new(scenario)?.with_store(store).run_to_end();
    write_report(&result.report, out)?;
    Ok(result)
}

pub fn write_report(report: &RunReport, out: &Path) -> Result<(), SimError> {
    let mut text = serde_json::to_string_pretty(report).expect("report serializes");
    text.push('\n');
    fs::write(out.join(REPORT_FILE), text)?;
    Ok(())
}

pub fn read_report(run_dir: &Path) -> Result<RunReport, SimError> {
    let text = fs::read_to_string(run_dir.join(REPORT_FILE))?;
    serde_json::from_str(&text).map_err(|e| SimError::Io(std::io::Error::new(std::io::ErrorKind::InvalidData, e)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::DutyCycle;
    use crate::gateway::AlertKind;
    use crate::store::MemoryStore;

    fn short_home(duration_ms: u64) -> Scenario {
        let mut s = Scenario::default_home();
        s.duration_ms = duration_ms;
        s.events.retain(|e| e.at_ms <= duration_ms);
        s
    }

    #[test]
    fn home_topology() {
        let sim = Simulation::new(Scenario::default_home()).unwrap();
        let t = sim.topology();
        // terrace garden hangs off the router
        assert_eq!(t.parent(NodeAddress(5)), Some(NodeAddress(4)));
        assert_eq!(t.parent(NodeAddress(1)), Some(NodeAddress::COORDINATOR));
    }

    #[test]
    fn records_reach_the_store() {
        let store = Arc::new(MemoryStore::new());
        let result = Simulation::new(short_home(30_000)).unwrap().with_store(store.clone()).run_to_end();
        let r = &result.report;
        assert!(r.radio.frames_delivered > 0);
        assert_eq!(store.len() as u64, r.storage.records_committed);
        assert_eq!(result.records.len() as u64, r.gateway.records);
        assert_eq!(store.list_rooms().unwrap(), RoomId::ALL);
        let lat = r.latency.as_ref().unwrap();
        assert!(lat.min_ms >= 15.0 && lat.max_ms <= 100.0 + 2.0 * 30.0 + 1.0);
    }

    #[test]
    fn gas_leak_alerts_and_matches_node() {
        let mut s = short_home(130_000);
        s.link.interference_loss = 0.0;
        let result = Simulation::new(s).unwrap().run_to_end();
        let gas: Vec<&Alert> = result
            .report
            .alerts
            .iter()
            .filter(|a| a.kind == AlertKind::ThresholdRule && a.field == Field::Gas)
            .collect();
        assert_eq!(gas.len(), 5, "gas held at 700 for five ticks");
        for a in gas {
            let tick = result.ticks.iter().find(|t| t.node == a.src && t.first_seq == a.seq && t.t + 5000 > a.timestamp);
            let tick = tick.expect("alert has an originating tick");
            assert!(tick.events.iter().any(|e| e.field == a.field && Some(e.actuator) == a.actuator));
        }
    }

    #[test]
    fn router_aggregation_reduces_terrace_records() {
        let base = short_home(60_000);
        let mut routed = base.clone();
        routed.gateway.aggregate_at = AggregateAt::Router;
        routed.link.interference_loss = 0.0;
        let direct = Simulation::new(base).unwrap().run_to_end();
        let summary = Simulation::new(routed).unwrap().run_to_end();
        let terrace = |r: &RunResult| r.records.iter().filter(|x| x.room == RoomId::TerraceGarden).count();
        assert!(terrace(&summary) * 5 < terrace(&direct), "{} vs {}", terrace(&summary), terrace(&direct));
        assert_eq!(summary.report.routers[0].summaries_out, 6);
        assert!(summary.records.iter().filter(|x| x.room == RoomId::TerraceGarden).all(|x| x.src == NodeAddress(4)));
    }

    #[test]
    fn encrypted_run_delivers() {
        let mut s = short_home(20_000);
        s.encryption_key = Some(crate::pipeline::PayloadKey::new([9; 16]));
        let r = Simulation::new(s).unwrap().run_to_end();
        assert_eq!(r.report.gateway.frames_auth_failed, 0);
        assert!(r.report.gateway.records > 0);
    }

    #[test]
    fn always_on_nodes_die_and_stop() {
        let mut s = short_home(600_000);
        s.energy.duty_cycle = DutyCycle::always_on(1000);
        let r = Simulation::new(s).unwrap().run_to_end();
        let life = r.energy.network_lifetime_ms;
        // 5 mAh at 41 mA, a little less with transmit bursts
        assert!((430_000..=439_025).contains(&life), "{life}");
        assert!(r.ticks.iter().all(|t| t.t <= life + 1000));
    }

    #[test]
    fn output_dir_must_be_empty() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("x"), "").unwrap();
        assert!(matches!(
            simulate_to_dir(short_home(1000), dir.path(), None),
            Err(SimError::OutputNotEmpty(_))
        ));
    }
}
