//! Virtual radio medium: addressing, frames, placement, routing and lossy
//! delivery with latency and bit-rate limits.

mod address;
mod frame;
mod link;
mod radio;
mod topology;

use thiserror::Error;

pub use address::{AddressAllocator, NodeAddress};
pub use frame::{checksum, Frame, DEFAULT_MAX_PAYLOAD, START_DELIMITER, WIRE_OVERHEAD};
pub use link::{LatencyBand, LinkModel, Position};
pub use radio::{DeliveryOutcome, DropReason, Medium, Transmission};
pub use topology::{RoutingMode, Topology};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MediumError {
    #[error("all 16-bit network addresses are allocated")]
    AddressSpaceExhausted,
    #[error("no joined node within radio range")]
    OutOfRange,
    #[error("no route from {src} to {dst}")]
    NoRoute { src: NodeAddress, dst: NodeAddress },
    #[error("unknown node {0}")]
    UnknownNode(NodeAddress),
    #[error("payload of {len} bytes exceeds the {max}-byte maximum")]
    PayloadTooLarge { len: usize, max: usize },
    #[error("malformed frame: {0}")]
    MalformedFrame(String),
    #[error("frame checksum mismatch")]
    ChecksumMismatch,
    #[error("position must have finite coordinates")]
    InvalidPosition,
    #[error("invalid link model: {0}")]
    InvalidLinkModel(String),
}
