//! The ASCII reading line carried over the radio:
//!
//! ```text
//! R:<room>;<field>=<value>;...;<field>=<value>\n
//! ```
//!
//! Celsius and humidity values carry exactly two decimals, all other units
//! are rendered as integers. Fields appear in the room's canonical order.
//!
//! Relays that aggregate in-network forward window means with the same body
//! under an `A:` prefix. Neither `R` nor `A` occurs anywhere else in a line,
//! so a payload starting with either byte marks the first chunk of a line.

use thiserror::Error;

use super::room::{Field, RoomId, SensorSample};
use crate::fixed::Fixed;

pub const MESSAGE_PREFIX: &[u8] = b"R:";
pub const SUMMARY_PREFIX: &[u8] = b"A:";
pub const MESSAGE_TERMINATOR: u8 = b'\n';

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LineKind {
    /// Raw readings from one sampling tick.
    Reading,
    /// Window means forwarded by an aggregating relay.
    Summary,
}

impl LineKind {
    fn prefix(self) -> &'static str {
        match self {
            LineKind::Reading => "R:",
            LineKind::Summary => "A:",
        }
    }
}

/// True when `payload` is the first chunk of a line.
pub fn starts_line(payload: &[u8]) -> bool {
    payload.starts_with(b"R") || payload.starts_with(b"A")
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GrammarError {
    #[error("message is not valid ASCII/UTF-8")]
    Encoding,
    #[error("message does not start with \"R:\"")]
    MissingPrefix,
    #[error("message is not newline terminated")]
    MissingTerminator,
    #[error("unknown room {0:?}")]
    UnknownRoom(String),
    #[error("unknown field {field:?} for room {room}")]
    UnknownField { room: RoomId, field: String },
    #[error("malformed pair {0:?}")]
    MalformedPair(String),
    #[error("value {value:?} is invalid for field {field}")]
    BadValue { field: Field, value: String },
    #[error("field {0} appears more than once")]
    DuplicateField(Field),
    #[error("message has no fields")]
    Empty,
}

pub fn encode_message(room: RoomId, samples: &[SensorSample]) -> Vec<u8> {
    encode_line(LineKind::Reading, room, samples)
}

pub fn encode_line(kind: LineKind, room: RoomId, samples: &[SensorSample]) -> Vec<u8> {
    let mut out = String::with_capacity(16 + samples.len() * 16);
    out.push_str(kind.prefix());
    out.push_str(room.as_str());
    for s in samples {
        out.push(';');
        out.push_str(s.field.as_str());
        out.push('=');
        out.push_str(&s.field.unit().render(s.value));
    }
    out.push('\n');
    out.into_bytes()
}

/// Parses one complete reading line. Values are checked against the field's unit.
pub fn decode_message(bytes: &[u8]) -> Result<(RoomId, Vec<SensorSample>), GrammarError> {
    match decode_line(bytes)? {
        (LineKind::Reading, room, samples) => Ok((room, samples)),
        (LineKind::Summary, ..) => Err(GrammarError::MissingPrefix),
    }
}

/// Parses a reading or summary line.
pub fn decode_line(bytes: &[u8]) -> Result<(LineKind, RoomId, Vec<SensorSample>), GrammarError> {
    let text = std::str::from_utf8(bytes).map_err(|_| GrammarError::Encoding)?;
    let (kind, body) = if let Some(b) = text.strip_prefix("R:") {
        (LineKind::Reading, b)
    } else if let Some(b) = text.strip_prefix("A:") {
        (LineKind::Summary, b)
    } else {
        return Err(GrammarError::MissingPrefix);
    };
    let body = body.strip_suffix('\n').ok_or(GrammarError::MissingTerminator)?;
    let mut parts = body.split(';');
    let room_name = parts.next().unwrap_or_default();
    let room: RoomId = room_name.parse().map_err(|_| GrammarError::UnknownRoom(room_name.to_string()))?;

    let mut samples: Vec<SensorSample> = Vec::new();
    for pair in parts {
        let (name, raw) = pair.split_once('=').ok_or_else(|| GrammarError::MalformedPair(pair.to_string()))?;
        let field = name
            .parse::<Field>()
            .ok()
            .filter(|f| room.has_field(*f))
            .ok_or_else(|| GrammarError::UnknownField { room, field: name.to_string() })?;
        let bad = || GrammarError::BadValue { field, value: raw.to_string() };
        let value: Fixed = raw.parse().map_err(|_| bad())?;
        if !field.unit().contains(value) {
            return Err(bad());
        }
        if samples.iter().any(|s| s.field == field) {
            return Err(GrammarError::DuplicateField(field));
        }
        samples.push(SensorSample::new(field, value));
    }
    if samples.is_empty() {
        return Err(GrammarError::Empty);
    }
    Ok((kind, room, samples))
}

/// Splits a message into radio payloads of at most `max_payload` bytes.
pub fn chunk_message(message: &[u8], max_payload: usize) -> Vec<Vec<u8>> {
    assert!(max_payload >= 1, "max_payload must be at least 1");
    message.chunks(max_payload).map(<[u8]>::to_vec).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn s(field: Field, h: i64) -> SensorSample {
        SensorSample::new(field, Fixed::from_hundredths(h))
    }

    #[test]
    fn kitchen_line() {
        let msg = encode_message(RoomId::Kitchen, &[s(Field::Flame, 51200), s(Field::Gas, 4400)]);
        assert_eq!(msg, b"R:kitchen;flame=512;gas=44\n");
    }

    #[test]
    fn living_room_line() {
        let msg = encode_message(
            RoomId::LivingRoom,
            &[s(Field::Temperature, 2550), s(Field::Humidity, 4000), s(Field::Sound, 1200), s(Field::Light, 30000)],
        );
        assert_eq!(msg, b"R:living_room;temperature=25.50;humidity=40.00;sound=12;light=300\n");
    }

    #[test]
    fn decode_errors() {
        assert_eq!(decode_message(b"R:bathroom;x=1\n"), Err(GrammarError::UnknownRoom("bathroom".into())));
        assert_eq!(decode_message(b"kitchen;gas=1\n"), Err(GrammarError::MissingPrefix));
        assert_eq!(decode_message(b"R:kitchen;gas=1"), Err(GrammarError::MissingTerminator));
        assert!(matches!(decode_message(b"R:kitchen;light=1\n"), Err(GrammarError::UnknownField { .. })));
        assert!(matches!(decode_message(b"R:kitchen;gas=2000\n"), Err(GrammarError::BadValue { .. })));
        assert!(matches!(decode_message(b"R:kitchen;gas\n"), Err(GrammarError::MalformedPair(_))));
        assert_eq!(decode_message(b"R:kitchen\n"), Err(GrammarError::Empty));
        assert_eq!(decode_message(b"R:kitchen;gas=1;gas=2\n"), Err(GrammarError::DuplicateField(Field::Gas)));
    }

    #[test]
    fn summary_lines() {
        let line = encode_line(LineKind::Summary, RoomId::Kitchen, &[s(Field::Flame, 99000), s(Field::Gas, 12000)]);
        assert_eq!(line, b"A:kitchen;flame=990;gas=120\n");
        let (kind, room, samples) = decode_line(&line).unwrap();
        assert_eq!((kind, room, samples.len()), (LineKind::Summary, RoomId::Kitchen, 2));
        assert!(decode_message(&line).is_err());
        assert!(starts_line(&line) && !starts_line(b"me=512"));
    }

    #[test]
    fn chunking_examples() {
        let msg = vec![b'x'; 100];
        let lens: Vec<_> = chunk_message(&msg, 84).iter().map(Vec::len).collect();
        assert_eq!(lens, [84, 16]);
        assert_eq!(chunk_message(&[b'y'; 84], 84).len(), 1);
        assert!(chunk_message(&[], 84).is_empty());
    }

    fn arb_value(field: Field) -> impl Strategy<Value = Fixed> {
        let (lo, hi) = field.unit().range();
        let decimal = field.unit().is_decimal();
        (lo.hundredths()..=hi.hundredths()).prop_map(move |h| {
            let v = Fixed::from_hundredths(h);
            if decimal { v } else { field.unit().quantize(v) }
        })
    }

    fn arb_reading() -> impl Strategy<Value = (RoomId, Vec<SensorSample>)> {
        proptest::sample::select(RoomId::ALL.to_vec()).prop_flat_map(|room| {
            let strategies: Vec<_> =
                room.fields().iter().map(|&f| arb_value(f).prop_map(move |v| SensorSample::new(f, v))).collect();
            (Just(room), strategies)
        })
    }

    proptest! {
        #[test]
        fn encode_decode_identity((room, samples) in arb_reading()) {
            let bytes = encode_message(room, &samples);
            prop_assert_eq!(decode_message(&bytes).unwrap(), (room, samples));
        }

        #[test]
        fn chunks_concatenate(msg in proptest::collection::vec(any::<u8>(), 0..600), max in 1usize..120) {
            let chunks = chunk_message(&msg, max);
            prop_assert_eq!(chunks.concat(), msg);
            if let Some((_, head)) = chunks.split_last() {
                prop_assert!(head.iter().all(|c| c.len() == max));
            }
        }
    }
}
