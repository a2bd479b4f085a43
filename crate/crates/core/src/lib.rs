//! Deterministic simulation of a four-room home-monitoring sensor network:
//! Zigbee-like radio mesh, rule-driven sensor nodes, energy accounting,
//! in-network data reduction, an ingest gateway and a queryable
//! time-series store.

pub mod energy;
pub mod fixed;
pub mod gateway;
pub mod medium;
pub mod nodes;
pub mod pipeline;
pub mod scenario;
pub mod sim;
pub mod store;

pub use fixed::Fixed;
pub use medium::{Frame, LinkModel, NodeAddress, Position};
pub use gateway::SensorRecord;
pub use nodes::{Field, RoomId, SensorSample};
pub use scenario::Scenario;
pub use store::StorageBackend;
