//! Threshold rules that drive each room's actuators.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::room::{Field, RoomId, SensorSample};
use crate::fixed::Fixed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CompareOp {
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = "==")]
    Eq,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Comparison {
    pub field: Field,
    pub op: CompareOp,
    pub constant: Fixed,
}

impl Comparison {
    pub fn new(field: Field, op: CompareOp, constant: i64) -> Self {
        Self { field, op, constant: Fixed::from_int(constant) }
    }

    /// Strict comparison; a value equal to a `<`/`>` bound never fires.
    pub fn holds(&self, value: Fixed) -> bool {
        match self.op {
            CompareOp::Lt => value < self.constant,
            CompareOp::Gt => value > self.constant,
            CompareOp::Eq => value == self.constant,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    Single(Comparison),
    Either(Comparison, Comparison),
}

impl Condition {
    pub fn comparisons(&self) -> Vec<&Comparison> {
        match self {
            Condition::Single(c) => vec![c],
            Condition::Either(a, b) => vec![a, b],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Actuator {
    Led,
    Buzzer,
    /// Two output pins held in opposite states.
    DiscoPair,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Effect {
    OnFor { ms: u64 },
    LatchOn,
    ToggleOpposite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActuatorCommand {
    pub actuator: Actuator,
    pub effect: Effect,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RuleError {
    #[error("rule references field {field} which is not part of room {room}")]
    FieldNotInRoom { room: RoomId, field: Field },
    #[error("disco pair only supports toggle_opposite")]
    DiscoNeedsToggle,
    #[error("sample set is missing field {0}")]
    MissingField(Field),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThresholdRule {
    pub condition: Condition,
    pub action: ActuatorCommand,
}

impl ThresholdRule {
    pub fn new(condition: Condition, actuator: Actuator, effect: Effect) -> Result<Self, RuleError> {
        if actuator == Actuator::DiscoPair && effect != Effect::ToggleOpposite {
            return Err(RuleError::DiscoNeedsToggle);
        }
        Ok(Self { condition, action: ActuatorCommand { actuator, effect } })
    }

    /// Active duration in ms; 0 means latched (or instantaneous for a toggle).
    pub fn duration_ms(&self) -> u64 {
        match self.action.effect {
            Effect::OnFor { ms } => ms,
            Effect::LatchOn | Effect::ToggleOpposite => 0,
        }
    }

    /// Returns the first comparison that holds, if any.
    fn triggering<'a>(&'a self, samples: &[SensorSample]) -> Result<Option<(&'a Comparison, Fixed)>, RuleError> {
        let mut hit = None;
        for cmp in self.condition.comparisons() {
            let value = samples
                .iter()
                .find(|s| s.field == cmp.field)
                .map(|s| s.value)
                .ok_or(RuleError::MissingField(cmp.field))?;
            if hit.is_none() && cmp.holds(value) {
                hit = Some((cmp, value));
            }
        }
        Ok(hit)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoomProfile {
    pub room: RoomId,
    pub rules: Vec<ThresholdRule>,
}

impl RoomProfile {
    pub fn new(room: RoomId, rules: Vec<ThresholdRule>) -> Result<Self, RuleError> {
        for rule in &rules {
            for cmp in rule.condition.comparisons() {
                if !room.has_field(cmp.field) {
                    return Err(RuleError::FieldNotInRoom { room, field: cmp.field });
                }
            }
        }
        Ok(Self { room, rules })
    }

    pub fn fields(&self) -> &'static [Field] {
        self.room.fields()
    }
}

/// A rule firing: the actuator is active over `[start, end]`, or from
/// `start` onward when `end` is `None`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActuatorEvent {
    pub actuator: Actuator,
    pub effect: Effect,
    pub start: u64,
    pub end: Option<u64>,
    /// Field and value of the comparison that fired.
    pub field: Field,
    pub value: Fixed,
}

impl ActuatorEvent {
    pub fn is_active(&self, t: u64) -> bool {
        t >= self.start && self.end.is_none_or(|end| t <= end)
    }
}

/// The house's built-in profiles.
pub fn builtin_profiles() -> BTreeMap<RoomId, RoomProfile> {
    use CompareOp::*;
    use Field::*;
    let single = |f, op, c| Condition::Single(Comparison::new(f, op, c));
    let rule = |cond, actuator, effect| ThresholdRule::new(cond, actuator, effect).expect("builtin rule");
    let profiles = [
        (
            RoomId::LivingRoom,
            vec![
                rule(single(Light, Gt, 500), Actuator::DiscoPair, Effect::ToggleOpposite),
                rule(single(Sound, Gt, 30), Actuator::Led, Effect::OnFor { ms: 2000 }),
            ],
        ),
        (
            RoomId::Kitchen,
            vec![rule(
                Condition::Either(Comparison::new(Flame, Lt, 800), Comparison::new(Gas, Gt, 600)),
                Actuator::Buzzer,
                Effect::OnFor { ms: 1000 },
            )],
        ),
        (RoomId::Porch, vec![rule(single(Shock, Eq, 1), Actuator::Led, Effect::LatchOn)]),
        (
            RoomId::TerraceGarden,
            vec![rule(single(WaterLevel, Gt, 600), Actuator::Buzzer, Effect::OnFor { ms: 1000 })],
        ),
    ];
    profiles
        .into_iter()
        .map(|(room, rules)| (room, RoomProfile::new(room, rules).expect("builtin profile")))
        .collect()
}

/// Evaluates every rule against one tick's samples. Pure.
pub fn evaluate_rules(
    profile: &RoomProfile,
    samples: &[SensorSample],
    now: u64,
) -> Result<Vec<ActuatorEvent>, RuleError> {
    let mut events = Vec::new();
    for rule in &profile.rules {
        if let Some((cmp, value)) = rule.triggering(samples)? {
            let end = match rule.action.effect {
                Effect::OnFor { ms } => Some(now + ms),
                Effect::ToggleOpposite => Some(now),
                Effect::LatchOn => None,
            };
            events.push(ActuatorEvent {
                actuator: rule.action.actuator,
                effect: rule.action.effect,
                start: now,
                end,
                field: cmp.field,
                value,
            });
        }
    }
    Ok(events)
}

/// Output state of a node's actuators, advanced once per tick.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActuatorBank {
    led_until: Option<u64>,
    led_latched: bool,
    buzzer_until: Option<u64>,
    /// Pin A of the disco pair; pin B is always the opposite.
    disco_a: bool,
}

impl ActuatorBank {
    /// Applies a tick's events. A latched LED releases on the first tick
    /// without a latching event.
    pub fn apply(&mut self, events: &[ActuatorEvent]) {
        let mut latched = false;
        for ev in events {
            match (ev.actuator, ev.effect) {
                (Actuator::DiscoPair, _) => self.disco_a = !self.disco_a,
                (Actuator::Led, Effect::LatchOn) => latched = true,
                (Actuator::Led, _) => self.led_until = ev.end.max(self.led_until),
                (Actuator::Buzzer, Effect::LatchOn) => self.buzzer_until = Some(u64::MAX),
                (Actuator::Buzzer, _) => self.buzzer_until = ev.end.max(self.buzzer_until),
            }
        }
        self.led_latched = latched;
    }

    pub fn led_on(&self, t: u64) -> bool {
        self.led_latched || self.led_until.is_some_and(|u| t <= u)
    }

    pub fn buzzer_on(&self, t: u64) -> bool {
        self.buzzer_until.is_some_and(|u| t <= u)
    }

    pub fn disco_pins(&self) -> (bool, bool) {
        (self.disco_a, !self.disco_a)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn samples(pairs: &[(Field, i64)]) -> Vec<SensorSample> {
        pairs.iter().map(|&(f, v)| SensorSample::new(f, Fixed::from_int(v))).collect()
    }

    #[test]
    fn kitchen_flame_fires_buzzer() {
        let p = &builtin_profiles()[&RoomId::Kitchen];
        let ev = evaluate_rules(p, &samples(&[(Field::Flame, 799), (Field::Gas, 0)]), 5000).unwrap();
        assert_eq!(ev.len(), 1);
        assert_eq!(ev[0].actuator, Actuator::Buzzer);
        assert_eq!((ev[0].start, ev[0].end), (5000, Some(6000)));
    }

    #[test]
    fn kitchen_boundaries_are_quiet() {
        let p = &builtin_profiles()[&RoomId::Kitchen];
        let ev = evaluate_rules(p, &samples(&[(Field::Flame, 800), (Field::Gas, 600)]), 0).unwrap();
        assert!(ev.is_empty());
    }

    #[test]
    fn living_room_led_and_disco() {
        let p = &builtin_profiles()[&RoomId::LivingRoom];
        let s = samples(&[(Field::Sound, 31), (Field::Light, 501), (Field::Temperature, 25), (Field::Humidity, 40)]);
        let ev = evaluate_rules(p, &s, 0).unwrap();
        let kinds: Vec<_> = ev.iter().map(|e| (e.actuator, e.effect)).collect();
        assert!(kinds.contains(&(Actuator::Led, Effect::OnFor { ms: 2000 })));
        assert!(kinds.contains(&(Actuator::DiscoPair, Effect::ToggleOpposite)));
        assert_eq!(ev.len(), 2);
    }

    #[test]
    fn porch_shock_latches() {
        let p = &builtin_profiles()[&RoomId::Porch];
        let ev =
            evaluate_rules(p, &samples(&[(Field::Shock, 1), (Field::Motion, 0), (Field::Distance, 120)]), 10).unwrap();
        assert_eq!(ev.len(), 1);
        assert_eq!(ev[0].effect, Effect::LatchOn);
        assert_eq!(ev[0].end, None);
        assert!(ev[0].is_active(u64::MAX));
    }

    #[test]
    fn missing_field_is_an_error() {
        let p = &builtin_profiles()[&RoomId::Kitchen];
        let err = evaluate_rules(p, &samples(&[(Field::Flame, 900)]), 0).unwrap_err();
        assert_eq!(err, RuleError::MissingField(Field::Gas));
    }

    #[test]
    fn profile_rejects_foreign_field() {
        let r = ThresholdRule::new(
            Condition::Single(Comparison::new(Field::Gas, CompareOp::Gt, 1)),
            Actuator::Led,
            Effect::LatchOn,
        )
        .unwrap();
        assert!(matches!(RoomProfile::new(RoomId::Porch, vec![r]), Err(RuleError::FieldNotInRoom { .. })));
        assert_eq!(
            ThresholdRule::new(
                Condition::Single(Comparison::new(Field::Light, CompareOp::Gt, 1)),
                Actuator::DiscoPair,
                Effect::LatchOn
            ),
            Err(RuleError::DiscoNeedsToggle)
        );
    }

    #[test]
    fn timed_event_expires() {
        let p = &builtin_profiles()[&RoomId::TerraceGarden];
        let s = samples(&[(Field::Temperature, 20), (Field::Humidity, 50), (Field::SoilMoisture, 300), (Field::WaterLevel, 601)]);
        let ev = evaluate_rules(p, &s, 1000).unwrap();
        assert!(ev[0].is_active(2000));
        assert!(!ev[0].is_active(2001));
    }

    #[test]
    fn bank_latch_releases_and_disco_toggles() {
        let porch = &builtin_profiles()[&RoomId::Porch];
        let mut bank = ActuatorBank::default();
        let shock = |v| samples(&[(Field::Distance, 100), (Field::Motion, 0), (Field::Shock, v)]);
        bank.apply(&evaluate_rules(porch, &shock(1), 0).unwrap());
        assert!(bank.led_on(500));
        bank.apply(&evaluate_rules(porch, &shock(0), 1000).unwrap());
        assert!(!bank.led_on(1000));

        let living = &builtin_profiles()[&RoomId::LivingRoom];
        let s = samples(&[(Field::Temperature, 20), (Field::Humidity, 50), (Field::Sound, 0), (Field::Light, 900)]);
        let before = bank.disco_pins();
        bank.apply(&evaluate_rules(living, &s, 0).unwrap());
        let after = bank.disco_pins();
        assert_ne!(before, after);
        assert_eq!(after.0, !after.1);
    }
}
