//! Radio frames and their XBee-style serial encoding.
//!
//! Wire layout (big-endian):
//!
//! ```text
//! 0x7E | len:u16 | src:u16 | dst:u16 | seq:u8 | flags:u8 | payload... | checksum:u8
//! ```
//!
//! `len` counts the bytes from `src` through the last payload byte. Bit 0 of
//! `flags` marks an encrypted payload. The checksum covers the payload only:
//! `0xFF - (sum of payload bytes & 0xFF)`.

use serde::{Deserialize, Serialize};

use super::{MediumError, NodeAddress};

pub const START_DELIMITER: u8 = 0x7E;
pub const DEFAULT_MAX_PAYLOAD: usize = 84;
/// Bytes on the wire besides the payload.
pub const WIRE_OVERHEAD: usize = 10;

const FLAG_ENCRYPTED: u8 = 0x01;

pub fn checksum(payload: &[u8]) -> u8 {
    let sum = payload.iter().fold(0u8, |acc, b| acc.wrapping_add(*b));
    0xFF - sum
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Frame {
    pub src: NodeAddress,
    pub dst: NodeAddress,
    pub seq: u8,
    pub payload: Vec<u8>,
    pub encrypted: bool,
    pub checksum: u8,
}

impl Frame {
    pub fn new(
        src: NodeAddress,
        dst: NodeAddress,
        seq: u8,
        payload: Vec<u8>,
        encrypted: bool,
        max_payload: usize,
    ) -> Result<Self, MediumError> {
        if payload.len() > max_payload {
            return Err(MediumError::PayloadTooLarge { len: payload.len(), max: max_payload });
        }
        let checksum = checksum(&payload);
        Ok(Self { src, dst, seq, payload, encrypted, checksum })
    }

    pub fn checksum_ok(&self) -> bool {
        checksum(&self.payload) == self.checksum
    }

    pub fn wire_len(&self) -> usize {
        self.payload.len() + WIRE_OVERHEAD
    }

    pub fn wire_bits(&self) -> u64 {
        self.wire_len() as u64 * 8
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let len = (self.payload.len() + 6) as u16;
        let mut out = Vec::with_capacity(self.wire_len());
        out.push(START_DELIMITER);
        out.extend_from_slice(&len.to_be_bytes());
        out.extend_from_slice(&self.src.0.to_be_bytes());
        out.extend_from_slice(&self.dst.0.to_be_bytes());
        out.push(self.seq);
        out.push(if self.encrypted { FLAG_ENCRYPTED } else { 0 });
        out.extend_from_slice(&self.payload);
        out.push(self.checksum);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, MediumError> {
        let malformed = |why: &str| MediumError::MalformedFrame(why.to_string());
        if bytes.len() < WIRE_OVERHEAD {
            return Err(malformed("short frame"));
        }
        if bytes[0] != START_DELIMITER {
            return Err(malformed("missing start delimiter"));
        }
        let len = u16::from_be_bytes([bytes[1], bytes[2]]) as usize;
        if len < 6 || bytes.len() != len + 4 {
            return Err(malformed("length field mismatch"));
        }
        let src = NodeAddress(u16::from_be_bytes([bytes[3], bytes[4]]));
        let dst = NodeAddress(u16::from_be_bytes([bytes[5], bytes[6]]));
        let seq = bytes[7];
        let flags = bytes[8];
        let payload = bytes[9..bytes.len() - 1].to_vec();
        let frame = Frame {
            src,
            dst,
            seq,
            encrypted: flags & FLAG_ENCRYPTED != 0,
            checksum: bytes[bytes.len() - 1],
            payload,
        };
        if !frame.checksum_ok() {
            return Err(MediumError::ChecksumMismatch);
        }
        Ok(frame)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn checksum_matches_xbee_rule() {
        // 0x23 + 0x11 = 0x34 -> 0xFF - 0x34 = 0xCB
        assert_eq!(checksum(&[0x23, 0x11]), 0xCB);
        assert_eq!(checksum(&[]), 0xFF);
        assert_eq!(checksum(&[0xFF, 0x01]), 0xFF);
    }

    #[test]
    fn oversize_payload_rejected() {
        let err = Frame::new(NodeAddress(1), NodeAddress(0), 0, vec![0; 85], false, 84).unwrap_err();
        assert!(matches!(err, MediumError::PayloadTooLarge { len: 85, max: 84 }));
    }

    #[test]
    fn corrupted_wire_bytes_detected() {
        let f = Frame::new(NodeAddress(3), NodeAddress(0), 9, b"R:porch;shock=1\n".to_vec(), false, 84).unwrap();
        let mut bytes = f.to_bytes();
        assert_eq!(bytes.len(), f.wire_len());
        bytes[12] ^= 0x04;
        assert!(matches!(Frame::from_bytes(&bytes), Err(MediumError::ChecksumMismatch)));
        assert!(Frame::from_bytes(&bytes[..5]).is_err());
    }

    proptest! {
        #[test]
        fn wire_round_trip(src: u16, dst: u16, seq: u8, enc: bool, payload in proptest::collection::vec(any::<u8>(), 0..=84)) {
            let f = Frame::new(NodeAddress(src), NodeAddress(dst), seq, payload, enc, 84).unwrap();
            prop_assert!(f.checksum_ok());
            prop_assert_eq!(Frame::from_bytes(&f.to_bytes()).unwrap(), f);
        }
    }
}
