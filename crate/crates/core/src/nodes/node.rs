use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::message::{chunk_message, encode_message};
use super::room::{Field, RoomId, SensorSample};
use super::rules::{evaluate_rules, ActuatorBank, ActuatorEvent, RoomProfile, RuleError};
use crate::fixed::Fixed;
use crate::medium::{Frame, NodeAddress};
use crate::pipeline::{PayloadSealer, TAG_LEN};

pub const DEFAULT_SAMPLING_PERIOD_MS: u64 = 1000;

/// Environment readings visible to one room at one instant.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvSnapshot(pub BTreeMap<Field, Fixed>);

impl EnvSnapshot {
    pub fn get(&self, field: Field) -> Option<Fixed> {
        self.0.get(&field).copied()
    }
}

impl FromIterator<(Field, Fixed)> for EnvSnapshot {
    fn from_iter<I: IntoIterator<Item = (Field, Fixed)>>(iter: I) -> Self {
        EnvSnapshot(iter.into_iter().collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TickOutput {
    pub samples: Vec<SensorSample>,
    pub events: Vec<ActuatorEvent>,
    pub message: Vec<u8>,
    pub frames: Vec<Frame>,
}

/// Turns messages into numbered (and optionally sealed) frames for one sender.
#[derive(Debug, Clone)]
pub struct Framer {
    pub address: NodeAddress,
    /// Where frames are addressed.
    pub sink: NodeAddress,
    max_payload: usize,
    /// Frames sent so far; the low byte is the next sequence number.
    frame_counter: u64,
    sealer: Option<PayloadSealer>,
}

impl Framer {
    pub fn new(address: NodeAddress, sink: NodeAddress, max_payload: usize) -> Self {
        Self { address, sink, max_payload, frame_counter: 0, sealer: None }
    }

    pub fn with_sealer(mut self, sealer: PayloadSealer) -> Self {
        self.sealer = Some(sealer);
        self
    }

    pub fn next_seq(&self) -> u8 {
        self.frame_counter as u8
    }

    pub fn set_next_seq(&mut self, seq: u8) {
        self.frame_counter = (self.frame_counter & !0xFF) | u64::from(seq);
    }

    /// Bytes of plaintext that fit in one frame.
    pub fn chunk_size(&self) -> usize {
        if self.sealer.is_some() {
            self.max_payload.saturating_sub(TAG_LEN).max(1)
        } else {
            self.max_payload
        }
    }

    /// Chunks and frames a message with consecutive sequence numbers.
    pub fn frame_message(&mut self, message: &[u8]) -> Vec<Frame> {
        chunk_message(message, self.chunk_size())
            .into_iter()
            .map(|chunk| {
                let counter = self.frame_counter;
                self.frame_counter += 1;
                let (payload, encrypted) = match &mut self.sealer {
                    Some(s) => (s.seal(counter, &chunk).expect("frame counter is strictly increasing"), true),
                    None => (chunk, false),
                };
                Frame::new(self.address, self.sink, counter as u8, payload, encrypted, self.max_payload)
                    .expect("chunk sized to fit")
            })
            .collect()
    }
}

/// One room's sensor node.
#[derive(Debug, Clone)]
pub struct SensorNode {
    pub profile: RoomProfile,
    pub sampling_period_ms: u64,
    pub framer: Framer,
    actuators: ActuatorBank,
}

impl SensorNode {
    pub fn new(address: NodeAddress, profile: RoomProfile, max_payload: usize) -> Self {
        Self {
            profile,
            sampling_period_ms: DEFAULT_SAMPLING_PERIOD_MS,
            framer: Framer::new(address, NodeAddress::COORDINATOR, max_payload),
            actuators: ActuatorBank::default(),
        }
    }

    pub fn with_sealer(mut self, sealer: PayloadSealer) -> Self {
        self.framer = self.framer.with_sealer(sealer);
        self
    }

    pub fn address(&self) -> NodeAddress {
        self.framer.address
    }

    pub fn room(&self) -> RoomId {
        self.profile.room
    }

    pub fn next_seq(&self) -> u8 {
        self.framer.next_seq()
    }

    /// Starts the sequence counter at `seq` (for tests and resumption).
    pub fn set_next_seq(&mut self, seq: u8) {
        self.framer.set_next_seq(seq);
    }

    pub fn actuators(&self) -> &ActuatorBank {
        &self.actuators
    }

    /// One sampling cycle: read, apply rules, encode, chunk and frame.
    pub fn tick(&mut self, env: &EnvSnapshot, now: u64) -> Result<TickOutput, RuleError> {
        let samples = self
            .profile
            .fields()
            .iter()
            .map(|&f| env.get(f).map(|v| SensorSample::new(f, v)).ok_or(RuleError::MissingField(f)))
            .collect::<Result<Vec<_>, _>>()?;
        let events = evaluate_rules(&self.profile, &samples, now)?;
        self.actuators.apply(&events);
        let message = encode_message(self.room(), &samples);
        let frames = self.framer.frame_message(&message);
        Ok(TickOutput { samples, events, message, frames })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nodes::builtin_profiles;
    use crate::pipeline::{decrypt_payload, FrameNonce, PayloadKey};

    fn kitchen(flame: i64, gas: i64) -> EnvSnapshot {
        [(Field::Flame, Fixed::from_int(flame)), (Field::Gas, Fixed::from_int(gas))].into_iter().collect()
    }

    fn node(room: RoomId) -> SensorNode {
        SensorNode::new(NodeAddress(5), builtin_profiles()[&room].clone(), 84)
    }

    #[test]
    fn consecutive_ticks_use_consecutive_seq() {
        let mut n = node(RoomId::Kitchen);
        let a = n.tick(&kitchen(900, 10), 0).unwrap();
        let b = n.tick(&kitchen(900, 10), 1000).unwrap();
        assert_eq!(a.frames.len(), 1);
        assert_eq!(b.frames[0].seq, a.frames[0].seq.wrapping_add(1));
        assert_eq!(a.message, b"R:kitchen;flame=900;gas=10\n");
    }

    #[test]
    fn seq_wraps() {
        let mut n = node(RoomId::Kitchen);
        n.set_next_seq(255);
        let a = n.tick(&kitchen(900, 10), 0).unwrap();
        let b = n.tick(&kitchen(900, 10), 1000).unwrap();
        assert_eq!((a.frames[0].seq, b.frames[0].seq), (255, 0));
    }

    #[test]
    fn tick_fires_rules_and_drives_actuators() {
        let mut n = node(RoomId::Kitchen);
        let out = n.tick(&kitchen(100, 10), 3000).unwrap();
        assert_eq!(out.events.len(), 1);
        assert!(n.actuators().buzzer_on(4000));
        assert!(!n.actuators().buzzer_on(4001));
    }

    #[test]
    fn missing_env_field() {
        let mut n = node(RoomId::Kitchen);
        let env: EnvSnapshot = [(Field::Flame, Fixed::from_int(1))].into_iter().collect();
        assert_eq!(n.tick(&env, 0), Err(RuleError::MissingField(Field::Gas)));
    }

    #[test]
    fn long_message_spans_frames() {
        let mut n = SensorNode::new(NodeAddress(5), builtin_profiles()[&RoomId::Kitchen].clone(), 10);
        let out = n.tick(&kitchen(512, 44), 0).unwrap();
        assert_eq!(out.frames.len(), 3);
        let seqs: Vec<u8> = out.frames.iter().map(|f| f.seq).collect();
        assert_eq!(seqs, [0, 1, 2]);
        let joined: Vec<u8> = out.frames.iter().flat_map(|f| f.payload.clone()).collect();
        assert_eq!(joined, out.message);
    }

    #[test]
    fn sealed_frames_fit_and_open() {
        let key = PayloadKey::new([7; 16]);
        let mut n = node(RoomId::Kitchen).with_sealer(PayloadSealer::new(key.clone(), NodeAddress(5)));
        let out = n.tick(&kitchen(512, 44), 0).unwrap();
        let f = &out.frames[0];
        assert!(f.encrypted && f.payload.len() <= 84);
        let plain = decrypt_payload(&f.payload, &key, FrameNonce::new(NodeAddress(5), f.seq, 0)).unwrap();
        assert_eq!(plain, out.message);
    }
}
