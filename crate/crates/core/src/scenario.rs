//! Scripted synthetic environment and the JSON scenario file.
//!
//! Each room field follows `baseline + amplitude * sin(2π·t·time_scale/day)`
//! plus Gaussian noise, clamped to the field's unit range. Noise is a pure
//! function of `(seed, room, field, t)`, so any value can be recomputed
//! independently of query order. Timed events override a field for
//! `[at_ms, at_ms + hold_ms)`.

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::energy::{DutyCycle, EnergyModel};
use crate::fixed::Fixed;
use crate::medium::{LinkModel, Position, RoutingMode};
use crate::nodes::{EnvSnapshot, Field, RoomId, DEFAULT_SAMPLING_PERIOD_MS};
use crate::pipeline::PayloadKey;

const DAY_MS: f64 = 86_400_000.0;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read scenario: {0}")]
    Io(#[from] std::io::Error),
    #[error("scenario parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid scenario at {path}: {message}")]
    Validation { path: String, message: String },
    #[error("field {field} does not exist in room {room}")]
    UnknownField { room: RoomId, field: Field },
}

fn invalid(path: impl Into<String>, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Validation { path: path.into(), message: message.into() }
}

/// Generator parameters for one field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldSignal {
    pub baseline: f64,
    #[serde(default)]
    pub diurnal_amplitude: f64,
    #[serde(default)]
    pub noise_stddev: f64,
}

impl FieldSignal {
    pub const fn new(baseline: f64, diurnal_amplitude: f64, noise_stddev: f64) -> Self {
        Self { baseline, diurnal_amplitude, noise_stddev }
    }

    /// A quiet house: no threshold rule fires at baseline.
    pub fn default_for(field: Field) -> Self {
        match field {
            Field::Temperature => Self::new(25.0, 3.0, 0.2),
            Field::Humidity => Self::new(50.0, 5.0, 0.5),
            Field::Sound => Self::new(12.0, 3.0, 2.0),
            Field::Light => Self::new(300.0, 120.0, 10.0),
            Field::Flame => Self::new(990.0, 0.0, 4.0),
            Field::Gas => Self::new(120.0, 10.0, 8.0),
            Field::Distance => Self::new(220.0, 0.0, 3.0),
            Field::Motion => Self::new(0.0, 0.0, 0.0),
            Field::Shock => Self::new(0.0, 0.0, 0.0),
            Field::SoilMoisture => Self::new(450.0, 20.0, 5.0),
            Field::WaterLevel => Self::new(300.0, 20.0, 5.0),
        }
    }
}

pub type SignalSpec = BTreeMap<Field, FieldSignal>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimedEvent {
    pub at_ms: u64,
    pub room: RoomId,
    pub field: Field,
    pub value: Fixed,
    pub hold_ms: u64,
}

impl TimedEvent {
    pub fn is_active(&self, t: u64) -> bool {
        t >= self.at_ms && t - self.at_ms < self.hold_ms
    }
}

/// A placed device. Nodes without a room are pure routers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub room: Option<RoomId>,
    pub position: Position,
    pub sampling_period_ms: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregateAt {
    #[default]
    Gateway,
    Router,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatewayConfig {
    pub reassembly_timeout_ms: u64,
    pub aggregate_at: AggregateAt,
    pub aggregate_window: usize,
    /// How often buffered records are flushed to storage.
    pub batch_interval_ms: u64,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self { reassembly_timeout_ms: 5000, aggregate_at: AggregateAt::Gateway, aggregate_window: 10, batch_interval_ms: 1000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyConfig {
    pub model: EnergyModel,
    /// Per-node battery; `None` means mains powered.
    pub capacity_mah: Option<f64>,
    pub duty_cycle: DutyCycle,
}

impl Default for EnergyConfig {
    fn default() -> Self {
        Self { model: EnergyModel::default(), capacity_mah: Some(5.0), duty_cycle: DutyCycle::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub seed: u64,
    pub duration_ms: u64,
    pub time_scale: f64,
    pub link: LinkModel,
    pub routing: RoutingMode,
    pub coordinator: Position,
    pub nodes: Vec<NodeSpec>,
    pub rooms: BTreeMap<RoomId, SignalSpec>,
    pub events: Vec<TimedEvent>,
    pub energy: EnergyConfig,
    pub gateway: GatewayConfig,
    pub encryption_key: Option<PayloadKey>,
}

impl Scenario {
    pub fn signal(&self, room: RoomId, field: Field) -> Result<FieldSignal, ScenarioError> {
        if !room.has_field(field) {
            return Err(ScenarioError::UnknownField { room, field });
        }
        Ok(self
            .rooms
            .get(&room)
            .and_then(|spec| spec.get(&field))
            .copied()
            .unwrap_or_else(|| FieldSignal::default_for(field)))
    }

    /// Value of `room.field` at time `t`.
    pub fn env_at(&self, room: RoomId, field: Field, t: u64) -> Result<Fixed, ScenarioError> {
        let signal = self.signal(room, field)?;
        if let Some(ev) = self.events.iter().rev().find(|e| e.room == room && e.field == field && e.is_active(t)) {
            return Ok(ev.value);
        }
        let phase = 2.0 * std::f64::consts::PI * (t as f64 * self.time_scale) / DAY_MS;
        let noise = if signal.noise_stddev > 0.0 {
            signal.noise_stddev * noise_sample(self.seed, room, field, t)
        } else {
            0.0
        };
        let raw = signal.baseline + signal.diurnal_amplitude * phase.sin() + noise;
        let unit = field.unit();
        let (lo, hi) = unit.range();
        let v = Fixed::from_f64(raw.clamp(lo.to_f64(), hi.to_f64())).expect("clamped value fits");
        Ok(unit.quantize(v))
    }

    pub fn snapshot(&self, room: RoomId, t: u64) -> EnvSnapshot {
        room.fields()
            .iter()
            .map(|&f| (f, self.env_at(room, f, t).expect("field belongs to room")))
            .collect()
    }

    fn validate(&self) -> Result<(), ScenarioError> {
        if self.duration_ms == 0 {
            return Err(invalid("duration_ms", "must be > 0"));
        }
        if !(self.time_scale > 0.0 && self.time_scale.is_finite()) {
            return Err(invalid("time_scale", "must be a positive finite number"));
        }
        self.link.validate().map_err(|e| invalid("link", e.to_string()))?;
        self.energy.model.validate().map_err(|e| invalid("energy.model", e.to_string()))?;
        self.energy.duty_cycle.validate().map_err(|e| invalid("energy.duty_cycle", e.to_string()))?;
        if let Some(c) = self.energy.capacity_mah {
            if !(c > 0.0 && c.is_finite()) {
                return Err(invalid("energy.capacity_mah", "must be positive (or null for unlimited)"));
            }
        }
        if self.gateway.aggregate_window == 0 {
            return Err(invalid("gateway.aggregate_window", "must be >= 1"));
        }
        if self.gateway.batch_interval_ms == 0 {
            return Err(invalid("gateway.batch_interval_ms", "must be > 0"));
        }
        for (i, n) in self.nodes.iter().enumerate() {
            if n.sampling_period_ms == 0 {
                return Err(invalid(format!("nodes[{i}].sampling_period_ms"), "must be > 0"));
            }
        }
        for (room, spec) in &self.rooms {
            for (field, sig) in spec {
                let path = format!("rooms.{room}.{field}");
                if !room.has_field(*field) {
                    return Err(invalid(path, format!("{field} is not a {room} field")));
                }
                if ![sig.baseline, sig.diurnal_amplitude, sig.noise_stddev].iter().all(|v| v.is_finite())
                    || sig.noise_stddev < 0.0
                {
                    return Err(invalid(path, "signal parameters must be finite, noise_stddev >= 0"));
                }
            }
        }
        for (i, ev) in self.events.iter().enumerate() {
            let path = |f: &str| format!("events[{i}].{f}");
            if ev.at_ms > self.duration_ms {
                return Err(invalid(path("at_ms"), format!("{} is beyond duration {}", ev.at_ms, self.duration_ms)));
            }
            if !ev.room.has_field(ev.field) {
                return Err(invalid(path("field"), format!("{} is not a {} field", ev.field, ev.room)));
            }
            if !ev.field.unit().contains(ev.value) {
                return Err(invalid(path("value"), format!("{} outside the {} range", ev.value, ev.field)));
            }
        }
        Ok(())
    }

    /// The four-room house: ten simulated minutes with a gas leak, an
    /// intruder, a noisy evening and a tank overflow.
    pub fn default_home() -> Self {
        let file: ScenarioFile = serde_json::from_str(DEFAULT_HOME_JSON).expect("bundled scenario parses");
        file.into_scenario().expect("bundled scenario is valid")
    }
}

/// splitmix64 finaliser.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn noise_sample(seed: u64, room: RoomId, field: Field, t: u64) -> f64 {
    let key = mix(mix(mix(seed) ^ room as u64) ^ ((field as u64) << 32)) ^ t;
    let mut rng = ChaCha8Rng::seed_from_u64(mix(key));
    StandardNormal.sample(&mut rng)
}

pub const DEFAULT_HOME_JSON: &str = include_str!("../../../scenarios/home.json");

// ---- file schema -------------------------------------------------------

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeFile {
    room: Option<String>,
    x: f64,
    y: f64,
    sampling_period_ms: Option<u64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct EventFile {
    at_ms: u64,
    room: String,
    field: String,
    value: f64,
    hold_ms: u64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct EnergyFile {
    #[serde(default)]
    model: Option<EnergyModel>,
    #[serde(default = "default_capacity")]
    capacity_mah: Option<f64>,
    #[serde(default)]
    duty_cycle: Option<DutyCycle>,
}

fn default_capacity() -> Option<f64> {
    EnergyConfig::default().capacity_mah
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct EncryptionFile {
    #[serde(default)]
    enabled: bool,
    key_hex: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    #[serde(default)]
    seed: u64,
    duration_ms: u64,
    #[serde(default = "one")]
    time_scale: f64,
    #[serde(default)]
    link: LinkModel,
    #[serde(default)]
    routing: RoutingMode,
    #[serde(default)]
    coordinator: Option<Position>,
    #[serde(default)]
    nodes: Vec<NodeFile>,
    #[serde(default)]
    rooms: BTreeMap<String, BTreeMap<String, FieldSignal>>,
    #[serde(default)]
    events: Vec<EventFile>,
    #[serde(default)]
    energy: Option<EnergyFile>,
    #[serde(default)]
    gateway: Option<GatewayConfig>,
    #[serde(default)]
    encryption: Option<EncryptionFile>,
}

fn one() -> f64 {
    1.0
}

fn parse_room(path: &str, name: &str) -> Result<RoomId, ScenarioError> {
    name.parse().map_err(|_| invalid(path, format!("unknown room {name:?}")))
}

fn parse_field(path: &str, name: &str) -> Result<Field, ScenarioError> {
    name.parse().map_err(|_| invalid(path, format!("unknown field {name:?}")))
}

impl ScenarioFile {
    fn into_scenario(self) -> Result<Scenario, ScenarioError> {
        let mut nodes = Vec::with_capacity(self.nodes.len());
        for (i, n) in self.nodes.into_iter().enumerate() {
            let room = n.room.as_deref().map(|r| parse_room(&format!("nodes[{i}].room"), r)).transpose()?;
            let position = Position::new(n.x, n.y).map_err(|e| invalid(format!("nodes[{i}]"), e.to_string()))?;
            nodes.push(NodeSpec {
                room,
                position,
                sampling_period_ms: n.sampling_period_ms.unwrap_or(DEFAULT_SAMPLING_PERIOD_MS),
            });
        }

        let mut rooms = BTreeMap::new();
        for (room_name, fields) in self.rooms {
            let room = parse_room(&format!("rooms.{room_name}"), &room_name)?;
            let mut spec = SignalSpec::new();
            for (field_name, sig) in fields {
                let field = parse_field(&format!("rooms.{room_name}.{field_name}"), &field_name)?;
                spec.insert(field, sig);
            }
            rooms.insert(room, spec);
        }

        let mut events = Vec::with_capacity(self.events.len());
        for (i, e) in self.events.into_iter().enumerate() {
            let room = parse_room(&format!("events[{i}].room"), &e.room)?;
            let field = parse_field(&format!("events[{i}].field"), &e.field)?;
            let value = Fixed::from_f64(e.value).map_err(|err| invalid(format!("events[{i}].value"), err.to_string()))?;
            events.push(TimedEvent { at_ms: e.at_ms, room, field, value, hold_ms: e.hold_ms });
        }

        let energy = match self.energy {
            None => EnergyConfig::default(),
            Some(f) => EnergyConfig {
                model: f.model.unwrap_or_default(),
                capacity_mah: f.capacity_mah,
                duty_cycle: f.duty_cycle.unwrap_or_default(),
            },
        };

        let encryption_key = match self.encryption {
            Some(EncryptionFile { enabled: true, key_hex }) => {
                let hex = key_hex.ok_or_else(|| invalid("encryption.key_hex", "required when enabled"))?;
                Some(PayloadKey::from_hex(&hex).map_err(|e| invalid("encryption.key_hex", e.to_string()))?)
            }
            _ => None,
        };

        let scenario = Scenario {
            seed: self.seed,
            duration_ms: self.duration_ms,
            time_scale: self.time_scale,
            link: self.link,
            routing: self.routing,
            coordinator: self.coordinator.unwrap_or(Position { x: 0.0, y: 0.0 }),
            nodes,
            rooms,
            events,
            energy,
            gateway: self.gateway.unwrap_or_default(),
            encryption_key,
        };
        scenario.validate()?;
        Ok(scenario)
    }
}

pub fn parse_scenario(json: &str) -> Result<Scenario, ScenarioError> {
    let file: ScenarioFile = serde_json::from_str(json)?;
    file.into_scenario()
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario, ScenarioError> {
    parse_scenario(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> Scenario {
        parse_scenario(r#"{"duration_ms": 600000, "rooms": {"kitchen": {"gas": {"baseline": 25}}}}"#).unwrap()
    }

    #[test]
    fn minimal_file_gets_defaults() {
        let s = minimal();
        assert!(s.nodes.is_empty());
        assert_eq!(s.link, LinkModel::default());
        assert_eq!(s.routing, RoutingMode::Tree);
        assert_eq!(s.gateway, GatewayConfig::default());
        assert_eq!(s.time_scale, 1.0);
        assert!(s.encryption_key.is_none());
    }

    #[test]
    fn degenerate_generator_is_constant() {
        let s = minimal();
        for t in [0, 1, 999, 123_456, 600_000] {
            assert_eq!(s.env_at(RoomId::Kitchen, Field::Gas, t).unwrap(), Fixed::from_int(25));
        }
    }

    #[test]
    fn event_override() {
        let mut s = Scenario::default_home();
        s.events = vec![TimedEvent {
            at_ms: 120_000,
            room: RoomId::Kitchen,
            field: Field::Gas,
            value: Fixed::from_int(700),
            hold_ms: 5000,
        }];
        assert_eq!(s.env_at(RoomId::Kitchen, Field::Gas, 121_000).unwrap(), Fixed::from_int(700));
        assert_ne!(s.env_at(RoomId::Kitchen, Field::Gas, 125_000).unwrap(), Fixed::from_int(700));
    }

    #[test]
    fn repeated_queries_agree() {
        let s = Scenario::default_home();
        let a = s.env_at(RoomId::LivingRoom, Field::Temperature, 42_000).unwrap();
        let _ = s.env_at(RoomId::Kitchen, Field::Gas, 1_000).unwrap();
        assert_eq!(s.env_at(RoomId::LivingRoom, Field::Temperature, 42_000).unwrap(), a);
    }

    #[test]
    fn unknown_field_errors() {
        let s = minimal();
        assert!(matches!(s.env_at(RoomId::Kitchen, Field::Light, 0), Err(ScenarioError::UnknownField { .. })));
    }

    #[test]
    fn late_event_names_index() {
        let err = parse_scenario(
            r#"{"duration_ms": 1000, "events": [
                {"at_ms": 10, "room": "kitchen", "field": "gas", "value": 700, "hold_ms": 5},
                {"at_ms": 2000, "room": "kitchen", "field": "gas", "value": 700, "hold_ms": 5}]}"#,
        )
        .unwrap_err();
        match err {
            ScenarioError::Validation { path, .. } => assert_eq!(path, "events[1].at_ms"),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn unknown_room_is_validation_error() {
        let err = parse_scenario(r#"{"duration_ms": 1000, "rooms": {"bathroom": {}}}"#).unwrap_err();
        assert!(matches!(err, ScenarioError::Validation { .. }), "{err}");
        let err = parse_scenario(r#"{"duration_ms": 1000, "nodes": [{"room": "attic", "x": 1, "y": 1}]}"#).unwrap_err();
        assert!(matches!(err, ScenarioError::Validation { ref path, .. } if path == "nodes[0].room"));
    }

    #[test]
    fn bad_json_is_parse_error() {
        assert!(matches!(parse_scenario("{"), Err(ScenarioError::Parse(_))));
        assert!(matches!(parse_scenario(r#"{"duration_ms": 0}"#), Err(ScenarioError::Validation { .. })));
    }

    #[test]
    fn out_of_range_event_value() {
        let err = parse_scenario(
            r#"{"duration_ms": 1000, "events": [{"at_ms": 1, "room": "porch", "field": "shock", "value": 3, "hold_ms": 5}]}"#,
        )
        .unwrap_err();
        assert!(matches!(err, ScenarioError::Validation { ref path, .. } if path == "events[0].value"));
    }

    #[test]
    fn encryption_needs_key() {
        let err = parse_scenario(r#"{"duration_ms": 1000, "encryption": {"enabled": true}}"#).unwrap_err();
        assert!(matches!(err, ScenarioError::Validation { ref path, .. } if path == "encryption.key_hex"));
    }
}
