//! Per-room sensor nodes: field vocabulary, threshold rules, the reading
//! line format and the sampling state machine.

mod message;
mod node;
mod room;
mod rules;

pub use message::{
    chunk_message, decode_line, decode_message, encode_line, encode_message, starts_line, GrammarError, LineKind,
    MESSAGE_PREFIX, MESSAGE_TERMINATOR, SUMMARY_PREFIX,
};
pub use node::{EnvSnapshot, Framer, SensorNode, TickOutput, DEFAULT_SAMPLING_PERIOD_MS};
pub use room::{Field, RoomId, SensorSample, Unit, UnknownName};
pub use rules::{
    builtin_profiles, evaluate_rules, Actuator, ActuatorBank, ActuatorCommand, ActuatorEvent, CompareOp, Comparison,
    Condition, Effect, RoomProfile, RuleError, ThresholdRule,
};
