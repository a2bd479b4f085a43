//! Coordinator-side ingest.
//!
//! Frames are decrypted (when sealed), deduplicated, and stitched back into
//! lines per sender. A line begins with a frame whose payload starts a line
//! and ends with the first following frame, by sequence number, whose
//! payload ends in a newline. Lines are parsed into records stamped with
//! the arrival time of their last frame, checked for changes, and queued
//! for storage.

use std::collections::{BTreeMap, HashMap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fixed::Fixed;
use crate::medium::{Frame, NodeAddress};
use crate::nodes::{
    builtin_profiles, decode_line, evaluate_rules, starts_line, Actuator, Field, GrammarError, LineKind, RoomId,
    RoomProfile, Unit, MESSAGE_TERMINATOR,
};
use crate::pipeline::{decrypt_payload, AggregateWindow, CounterEstimator, FrameNonce, PayloadKey, WindowAggregator};
use crate::scenario::GatewayConfig;

/// Per-sender memory of recently consumed sequence numbers.
pub const DEDUPE_WINDOW: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SensorRecord {
    pub timestamp: u64,
    pub room: RoomId,
    pub field: Field,
    pub value: Fixed,
    pub src: NodeAddress,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IngestError {
    #[error("unknown room {0:?}")]
    UnknownRoom(String),
    #[error(transparent)]
    Grammar(GrammarError),
}

impl From<GrammarError> for IngestError {
    fn from(e: GrammarError) -> Self {
        match e {
            GrammarError::UnknownRoom(r) => IngestError::UnknownRoom(r),
            other => IngestError::Grammar(other),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReassemblyError {
    #[error("partial line from {src} discarded after {waited_ms} ms")]
    ReassemblyTimeout { src: NodeAddress, first_seq: u8, waited_ms: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlertKind {
    ThresholdRule,
    ChangeDetected,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Alert {
    pub kind: AlertKind,
    pub room: RoomId,
    pub field: Field,
    pub value: Fixed,
    pub timestamp: u64,
    pub src: NodeAddress,
    /// Sequence number of the first frame of the originating line.
    pub seq: u8,
    pub actuator: Option<Actuator>,
}

/// Default per-unit change thresholds.
pub fn default_epsilon(unit: Unit) -> Fixed {
    match unit {
        Unit::Celsius => Fixed::from_hundredths(50),
        Unit::PercentRh => Fixed::from_int(2),
        Unit::AdcCounts => Fixed::from_int(10),
        Unit::Centimeters => Fixed::from_int(5),
        Unit::Boolean => Fixed::from_int(1),
    }
}

#[derive(Debug, Clone, Default)]
pub struct ChangeDetector {
    last: BTreeMap<(RoomId, Field), Fixed>,
    overrides: BTreeMap<Field, Fixed>,
}

impl ChangeDetector {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_epsilon(mut self, field: Field, epsilon: Fixed) -> Self {
        assert!(epsilon > Fixed::ZERO, "epsilon must be positive");
        self.overrides.insert(field, epsilon);
        self
    }

    pub fn epsilon(&self, field: Field) -> Fixed {
        self.overrides.get(&field).copied().unwrap_or_else(|| default_epsilon(field.unit()))
    }

    /// Alerts when the value moved by more than epsilon since the last
    /// observation of the same stream. The first observation only primes.
    pub fn detect(&mut self, record: &SensorRecord, seq: u8) -> Option<Alert> {
        let eps = self.epsilon(record.field);
        let prev = self.last.insert((record.room, record.field), record.value)?;
        (record.value.abs_diff(prev) > eps.hundredths() as u64).then_some(Alert {
            kind: AlertKind::ChangeDetected,
            room: record.room,
            field: record.field,
            value: record.value,
            timestamp: record.timestamp,
            src: record.src,
            seq,
            actuator: None,
        })
    }
}

/// A complete line recovered from a frame run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Reassembled {
    pub src: NodeAddress,
    pub first_seq: u8,
    /// Full frame counter of the first frame.
    pub counter: u64,
    pub bytes: Vec<u8>,
    pub arrival: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Accept {
    Buffered,
    Duplicate,
    AuthFailed,
    BadChecksum,
}

#[derive(Debug, Default)]
struct SenderBuffer {
    /// Buffered payloads by full frame counter.
    frames: BTreeMap<u64, (Vec<u8>, u64)>,
    counters: CounterEstimator,
    consumed: VecDeque<u64>,
}

impl SenderBuffer {
    fn mark_consumed(&mut self, counter: u64) {
        if self.consumed.len() == DEDUPE_WINDOW {
            self.consumed.pop_front();
        }
        self.consumed.push_back(counter);
    }
}

/// Per-sender frame buffers that rebuild newline-terminated lines.
#[derive(Debug, Default)]
pub struct Reassembler {
    key: Option<PayloadKey>,
    senders: HashMap<NodeAddress, SenderBuffer>,
    timeout_ms: u64,
}

impl Reassembler {
    pub fn new(timeout_ms: u64, key: Option<PayloadKey>) -> Self {
        Self { key, senders: HashMap::new(), timeout_ms }
    }

    /// Accepts one frame and returns any lines it completed.
    pub fn push(&mut self, frame: &Frame, arrival: u64) -> (Accept, Vec<Reassembled>) {
        if !frame.checksum_ok() {
            return (Accept::BadChecksum, Vec::new());
        }
        let buf = self.senders.entry(frame.src).or_default();
        let counter = buf.counters.estimate(frame.seq);
        if buf.consumed.contains(&counter) {
            return (Accept::Duplicate, Vec::new());
        }
        let payload = match (&self.key, frame.encrypted) {
            (Some(key), true) => {
                match decrypt_payload(&frame.payload, key, FrameNonce { src: frame.src, counter }) {
                    Ok(p) => p,
                    Err(_) => return (Accept::AuthFailed, Vec::new()),
                }
            }
            (None, true) => return (Accept::AuthFailed, Vec::new()),
            (_, false) => frame.payload.clone(),
        };
        if buf.frames.contains_key(&counter) {
            return (Accept::Duplicate, Vec::new());
        }
        buf.counters.observe(counter);
        buf.frames.insert(counter, (payload, arrival));
        (Accept::Buffered, Self::drain_complete(frame.src, buf))
    }

    fn drain_complete(src: NodeAddress, buf: &mut SenderBuffer) -> Vec<Reassembled> {
        let mut out = Vec::new();
        let starts: Vec<u64> = buf.frames.iter().filter(|(_, (p, _))| starts_line(p)).map(|(&c, _)| c).collect();
        for start in starts {
            let mut end = None;
            let mut c = start;
            while let Some((p, _)) = buf.frames.get(&c) {
                if c != start && starts_line(p) {
                    break;
                }
                if p.last() == Some(&MESSAGE_TERMINATOR) {
                    end = Some(c);
                    break;
                }
                c += 1;
            }
            let Some(end) = end else { continue };
            let mut bytes = Vec::new();
            let mut arrival = 0;
            for c in start..=end {
                let (p, at) = buf.frames.remove(&c).expect("run is contiguous");
                bytes.extend_from_slice(&p);
                arrival = arrival.max(at);
                buf.mark_consumed(c);
            }
            out.push(Reassembled { src, first_seq: start as u8, counter: start, bytes, arrival });
        }
        out
    }

    /// Discards buffered frames older than the timeout; one error per
    /// abandoned run.
    pub fn expire(&mut self, now: u64) -> Vec<ReassemblyError> {
        let mut errors = Vec::new();
        let mut srcs: Vec<NodeAddress> = self.senders.keys().copied().collect();
        srcs.sort();
        for src in srcs {
            let buf = self.senders.get_mut(&src).expect("key from map");
            let stale: Vec<(u64, u64)> = buf
                .frames
                .iter()
                .filter(|(_, (_, at))| now.saturating_sub(*at) > self.timeout_ms)
                .map(|(&c, &(_, at))| (c, at))
                .collect();
            let mut prev: Option<u64> = None;
            for (c, at) in stale {
                buf.frames.remove(&c);
                buf.mark_consumed(c);
                if prev != Some(c.wrapping_sub(1)) {
                    errors.push(ReassemblyError::ReassemblyTimeout { src, first_seq: c as u8, waited_ms: now - at });
                }
                prev = Some(c);
            }
        }
        errors
    }

    pub fn pending_frames(&self) -> usize {
        self.senders.values().map(|b| b.frames.len()).sum()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GatewayStats {
    pub frames_received: u64,
    pub frames_duplicate: u64,
    pub frames_bad_checksum: u64,
    pub frames_auth_failed: u64,
    pub messages_reassembled: u64,
    pub messages_timed_out: u64,
    pub messages_duplicate: u64,
    pub grammar_errors: u64,
    pub unknown_room: u64,
    pub records: u64,
    pub alerts_threshold: u64,
    pub alerts_change: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldAggregates {
    pub room: RoomId,
    pub field: Field,
    pub windows: Vec<AggregateWindow>,
}

pub struct Gateway {
    profiles: BTreeMap<RoomId, RoomProfile>,
    reassembler: Reassembler,
    seen_lines: HashMap<NodeAddress, VecDeque<u64>>,
    detector: ChangeDetector,
    aggregate: bool,
    aggregators: BTreeMap<(RoomId, Field), WindowAggregator>,
    aggregates: BTreeMap<(RoomId, Field), Vec<AggregateWindow>>,
    aggregate_window: usize,
    pending: Vec<SensorRecord>,
    pub alerts: Vec<Alert>,
    pub stats: GatewayStats,
}

impl Gateway {
    pub fn new(config: &GatewayConfig, key: Option<PayloadKey>) -> Self {
        Self {
            profiles: builtin_profiles(),
            reassembler: Reassembler::new(config.reassembly_timeout_ms, key),
            seen_lines: HashMap::new(),
            detector: ChangeDetector::new(),
            aggregate: config.aggregate_at == crate::scenario::AggregateAt::Gateway,
            aggregators: BTreeMap::new(),
            aggregates: BTreeMap::new(),
            aggregate_window: config.aggregate_window,
            pending: Vec::new(),
            alerts: Vec::new(),
            stats: GatewayStats::default(),
        }
    }

    /// Handles one delivered frame; returns records produced by any line it
    /// completed.
    pub fn receive_frame(&mut self, frame: &Frame, arrival: u64) -> Vec<SensorRecord> {
        self.stats.frames_received += 1;
        let (accept, lines) = self.reassembler.push(frame, arrival);
        match accept {
            Accept::Duplicate => self.stats.frames_duplicate += 1,
            Accept::AuthFailed => self.stats.frames_auth_failed += 1,
            Accept::BadChecksum => self.stats.frames_bad_checksum += 1,
            Accept::Buffered => {}
        }
        let mut out = Vec::new();
        for line in lines {
            self.stats.messages_reassembled += 1;
            // Malformed lines are counted inside ingest and skipped.
            if let Ok(records) = self.ingest(&line.bytes, line.src, line.counter, line.arrival) {
                out.extend(records);
            }
        }
        out
    }

    /// Parses one line into records. `counter` is the full frame counter of
    /// the line's first frame; a line already ingested from the same
    /// `(src, counter)` yields nothing.
    pub fn ingest(
        &mut self,
        message: &[u8],
        src: NodeAddress,
        counter: u64,
        arrival_ts: u64,
    ) -> Result<Vec<SensorRecord>, IngestError> {
        let first_seq = counter as u8;
        let seen = self.seen_lines.entry(src).or_default();
        if seen.contains(&counter) {
            self.stats.messages_duplicate += 1;
            return Ok(Vec::new());
        }
        let (kind, room, samples) = match decode_line(message) {
            Ok(parsed) => parsed,
            Err(e) => {
                let e = IngestError::from(e);
                match e {
                    IngestError::UnknownRoom(_) => self.stats.unknown_room += 1,
                    IngestError::Grammar(_) => self.stats.grammar_errors += 1,
                }
                return Err(e);
            }
        };
        if seen.len() == DEDUPE_WINDOW {
            seen.pop_front();
        }
        seen.push_back(counter);

        if kind == LineKind::Reading {
            let events = evaluate_rules(&self.profiles[&room], &samples, arrival_ts).expect("decoded line covers room");
            for ev in events {
                self.stats.alerts_threshold += 1;
                self.alerts.push(Alert {
                    kind: AlertKind::ThresholdRule,
                    room,
                    field: ev.field,
                    value: ev.value,
                    timestamp: arrival_ts,
                    src,
                    seq: first_seq,
                    actuator: Some(ev.actuator),
                });
            }
        }

        let records: Vec<SensorRecord> = samples
            .iter()
            .map(|s| SensorRecord { timestamp: arrival_ts, room, field: s.field, value: s.value, src })
            .collect();
        for r in &records {
            if let Some(alert) = self.detector.detect(r, first_seq) {
                self.stats.alerts_change += 1;
                self.alerts.push(alert);
            }
            if self.aggregate {
                let window = self.aggregate_window;
                let agg = self.aggregators.entry((r.room, r.field)).or_insert_with(|| WindowAggregator::new(window));
                if let Some(w) = agg.push(r.timestamp, r.value) {
                    self.aggregates.entry((r.room, r.field)).or_default().push(w);
                }
            }
        }
        self.stats.records += records.len() as u64;
        self.pending.extend(records.iter().cloned());
        Ok(records)
    }

    pub fn poll(&mut self, now: u64) -> Vec<ReassemblyError> {
        let errs = self.reassembler.expire(now);
        self.stats.messages_timed_out += errs.len() as u64;
        errs
    }

    /// Records produced since the previous call, in ingest order.
    pub fn take_batch(&mut self) -> Vec<SensorRecord> {
        std::mem::take(&mut self.pending)
    }

    /// Closes partial aggregation windows and returns every window so far.
    pub fn finish_aggregates(&mut self) -> Vec<FieldAggregates> {
        for (key, agg) in self.aggregators.iter_mut() {
            if let Some(w) = agg.flush() {
                self.aggregates.entry(*key).or_default().push(w);
            }
        }
        self.aggregates
            .iter()
            .map(|(&(room, field), windows)| FieldAggregates { room, field, windows: windows.clone() })
            .collect()
    }

    pub fn pending_frames(&self) -> usize {
        self.reassembler.pending_frames()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::{PayloadSealer, TAG_LEN};

    fn frame(src: u16, seq: u8, payload: &[u8]) -> Frame {
        Frame::new(NodeAddress(src), NodeAddress(0), seq, payload.to_vec(), false, 84).unwrap()
    }

    fn gateway() -> Gateway {
        Gateway::new(&GatewayConfig::default(), None)
    }

    #[test]
    fn two_chunks_reassemble() {
        let mut r = Reassembler::new(5000, None);
        let (_, done) = r.push(&frame(1, 10, b"R:kitchen;fla"), 100);
        assert!(done.is_empty());
        let (_, done) = r.push(&frame(1, 11, b"me=512;gas=44\n"), 130);
        assert_eq!(done.len(), 1);
        assert_eq!(done[0].bytes, b"R:kitchen;flame=512;gas=44\n");
        assert_eq!((done[0].first_seq, done[0].arrival), (10, 130));
    }

    #[test]
    fn out_of_order_chunks_reassemble() {
        let mut r = Reassembler::new(5000, None);
        assert!(r.push(&frame(1, 11, b"me=512;gas=44\n"), 100).1.is_empty());
        let (_, done) = r.push(&frame(1, 10, b"R:kitchen;fla"), 120);
        assert_eq!(done[0].bytes, b"R:kitchen;flame=512;gas=44\n");
    }

    #[test]
    fn missing_middle_times_out() {
        let mut g = gateway();
        assert!(g.receive_frame(&frame(1, 0, b"R:kitchen;"), 0).is_empty());
        assert!(g.receive_frame(&frame(1, 2, b"gas=44\n"), 10).is_empty());
        assert!(g.poll(4000).is_empty());
        let errs = g.poll(6000);
        assert_eq!(errs.len(), 2);
        assert!(matches!(errs[0], ReassemblyError::ReassemblyTimeout { first_seq: 0, .. }));
        assert_eq!(g.stats.messages_timed_out, 2);
        assert_eq!(g.stats.records, 0);
        assert_eq!(g.pending_frames(), 0);
    }

    #[test]
    fn single_chunk_is_immediate() {
        let mut g = gateway();
        let recs = g.receive_frame(&frame(1, 0, b"R:kitchen;flame=512;gas=44\n"), 7);
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0], SensorRecord {
            timestamp: 7,
            room: RoomId::Kitchen,
            field: Field::Flame,
            value: Fixed::from_int(512),
            src: NodeAddress(1)
        });
        assert_eq!(recs[1].field, Field::Gas);
    }

    #[test]
    fn retransmitted_run_yields_nothing() {
        let mut g = gateway();
        let f = frame(1, 4, b"R:kitchen;flame=512;gas=44\n");
        assert_eq!(g.receive_frame(&f, 0).len(), 2);
        assert!(g.receive_frame(&f, 50).is_empty());
        assert_eq!(g.stats.frames_duplicate, 1);

        assert!(g.ingest(b"R:kitchen;flame=512;gas=44\n", NodeAddress(1), 4, 60).unwrap().is_empty());
        assert_eq!(g.stats.messages_duplicate, 1);
        assert_eq!(g.take_batch().len(), 2);
    }

    #[test]
    fn unknown_room_and_grammar_counted() {
        let mut g = gateway();
        assert_eq!(g.ingest(b"R:bathroom;x=1\n", NodeAddress(2), 0, 0), Err(IngestError::UnknownRoom("bathroom".into())));
        assert!(matches!(g.ingest(b"R:kitchen;gas=x\n", NodeAddress(2), 1, 0), Err(IngestError::Grammar(_))));
        assert_eq!((g.stats.unknown_room, g.stats.grammar_errors), (1, 1));
        // counted, not fatal
        assert_eq!(g.ingest(b"R:kitchen;flame=900;gas=1\n", NodeAddress(2), 2, 0).unwrap().len(), 2);
    }

    fn temp(v: i64) -> SensorRecord {
        SensorRecord {
            timestamp: 0,
            room: RoomId::LivingRoom,
            field: Field::Temperature,
            value: Fixed::from_hundredths(v),
            src: NodeAddress(1),
        }
    }

    #[test]
    fn change_detection() {
        let mut d = ChangeDetector::new();
        assert!(d.detect(&temp(2500), 0).is_none());
        assert!(d.detect(&temp(2540), 1).is_none());
        let mut d = ChangeDetector::new();
        d.detect(&temp(2500), 0);
        let a = d.detect(&temp(2560), 1).unwrap();
        assert_eq!(a.kind, AlertKind::ChangeDetected);
        // exactly epsilon is not a change
        assert!(d.detect(&temp(2510), 2).is_none());
    }

    #[test]
    fn threshold_alerts_from_readings() {
        let mut g = gateway();
        g.ingest(b"R:kitchen;flame=700;gas=10\n", NodeAddress(3), 9, 1000).unwrap();
        let t: Vec<_> = g.alerts.iter().filter(|a| a.kind == AlertKind::ThresholdRule).collect();
        assert_eq!(t.len(), 1);
        assert_eq!((t[0].field, t[0].actuator, t[0].seq), (Field::Flame, Some(Actuator::Buzzer), 9));
        // summaries are stored but never raise rule alerts
        g.ingest(b"A:kitchen;flame=700;gas=10\n", NodeAddress(4), 0, 2000).unwrap();
        assert_eq!(g.stats.alerts_threshold, 1);
    }

    #[test]
    fn sealed_frames_across_seq_wrap() {
        let key = PayloadKey::new([5; 16]);
        let mut sealer = PayloadSealer::new(key.clone(), NodeAddress(6));
        let mut g = Gateway::new(&GatewayConfig::default(), Some(key));
        let mut total = 0;
        for counter in 0u64..600 {
            let line = format!("R:porch;distance={};motion=0;shock=0\n", counter % 400);
            let ct = sealer.seal(counter, line.as_bytes()).unwrap();
            assert!(ct.len() <= 84 && line.len() + TAG_LEN == ct.len());
            let f = Frame::new(NodeAddress(6), NodeAddress(0), counter as u8, ct, true, 84).unwrap();
            total += g.receive_frame(&f, counter * 1000).len();
        }
        assert_eq!(total, 1800);
        assert_eq!(g.stats.frames_auth_failed, 0);
    }

    #[test]
    fn aggregates_per_stream() {
        let mut g = gateway();
        for i in 0..25u64 {
            let line = format!("R:kitchen;flame={};gas=100\n", 900 + i as i64);
            g.ingest(line.as_bytes(), NodeAddress(1), i, i * 1000).unwrap();
        }
        let aggs = g.finish_aggregates();
        assert_eq!(aggs.len(), 2);
        let flame = aggs.iter().find(|a| a.field == Field::Flame).unwrap();
        assert_eq!(flame.windows.iter().map(|w| w.count).collect::<Vec<_>>(), [10, 10, 5]);
        assert_eq!(flame.windows[0].mean, 904.5);
    }

    #[test]
    fn multi_frame_lines_survive_sequence_wrap() {
        // 64 lines of 5 frames span more than 256 sequence numbers
        let mut g = gateway();
        let mut seq = 0u8;
        let mut records = 0;
        for i in 0..400 {
            let line = format!("R:kitchen;flame={};gas={}\n", i % 1000, i % 7);
            for chunk in line.as_bytes().chunks(line.len().div_ceil(5)) {
                records += g.receive_frame(&frame(1, seq, chunk), i).len();
                seq = seq.wrapping_add(1);
            }
        }
        assert_eq!(records, 800);
        assert_eq!(g.stats.messages_duplicate, 0);
    }
}
