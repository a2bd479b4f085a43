//! AES-128-GCM protection of frame payloads.
//!
//! The 96-bit nonce is derived from the sending node and a per-node frame
//! counter whose low byte is the frame's sequence number and whose upper
//! bits count sequence wraps:
//!
//! ```text
//! src:u16 | 0x0000 | counter:u64   (big-endian)
//! ```

use std::fmt;

use aes_gcm::aead::{Aead, KeyInit};
use aes_gcm::{Aes128Gcm, Key, Nonce};
use thiserror::Error;

use crate::medium::NodeAddress;

/// Bytes the authentication tag adds to every payload.
pub const TAG_LEN: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CryptoError {
    #[error("key must be exactly 16 bytes, got {0}")]
    BadKeyLength(usize),
    #[error("key is not valid hex")]
    BadKeyHex,
    #[error("authentication failed")]
    AuthenticationFailed,
    #[error("nonce counter {counter} already used by node {src}")]
    NonceReuse { src: NodeAddress, counter: u64 },
}

#[derive(Clone, PartialEq, Eq)]
pub struct PayloadKey([u8; 16]);

impl fmt::Debug for PayloadKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("PayloadKey(..)")
    }
}

impl PayloadKey {
    pub fn new(bytes: [u8; 16]) -> Self {
        Self(bytes)
    }

    pub fn from_slice(bytes: &[u8]) -> Result<Self, CryptoError> {
        let arr: [u8; 16] = bytes.try_into().map_err(|_| CryptoError::BadKeyLength(bytes.len()))?;
        Ok(Self(arr))
    }

    pub fn from_hex(s: &str) -> Result<Self, CryptoError> {
        if !s.len().is_multiple_of(2) || !s.is_ascii() {
            return Err(CryptoError::BadKeyHex);
        }
        let bytes = (0..s.len())
            .step_by(2)
            .map(|i| u8::from_str_radix(&s[i..i + 2], 16).map_err(|_| CryptoError::BadKeyHex))
            .collect::<Result<Vec<u8>, _>>()?;
        Self::from_slice(&bytes)
    }

    fn cipher(&self) -> Aes128Gcm {
        Aes128Gcm::new(&Key::<Aes128Gcm>::from(self.0))
    }
}

/// Per-frame nonce material.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FrameNonce {
    pub src: NodeAddress,
    pub counter: u64,
}

impl FrameNonce {
    pub fn new(src: NodeAddress, seq: u8, epoch: u64) -> Self {
        Self { src, counter: (epoch << 8) | u64::from(seq) }
    }

    pub fn seq(&self) -> u8 {
        self.counter as u8
    }

    pub fn epoch(&self) -> u64 {
        self.counter >> 8
    }

    fn to_bytes(self) -> [u8; 12] {
        let mut n = [0u8; 12];
        n[..2].copy_from_slice(&self.src.0.to_be_bytes());
        n[4..].copy_from_slice(&self.counter.to_be_bytes());
        n
    }
}

pub fn encrypt_payload(plaintext: &[u8], key: &PayloadKey, nonce: FrameNonce) -> Vec<u8> {
    key.cipher()
        .encrypt(&Nonce::from(nonce.to_bytes()), plaintext)
        .expect("AES-GCM encryption of an in-memory buffer cannot fail")
}

pub fn decrypt_payload(ciphertext: &[u8], key: &PayloadKey, nonce: FrameNonce) -> Result<Vec<u8>, CryptoError> {
    key.cipher()
        .decrypt(&Nonce::from(nonce.to_bytes()), ciphertext)
        .map_err(|_| CryptoError::AuthenticationFailed)
}

/// Sending side: refuses any nonce counter that is not strictly newer than
/// the last one it sealed with.
#[derive(Debug, Clone)]
pub struct PayloadSealer {
    key: PayloadKey,
    src: NodeAddress,
    last: Option<u64>,
}

impl PayloadSealer {
    pub fn new(key: PayloadKey, src: NodeAddress) -> Self {
        Self { key, src, last: None }
    }

    pub fn seal(&mut self, counter: u64, plaintext: &[u8]) -> Result<Vec<u8>, CryptoError> {
        if self.last.is_some_and(|l| counter <= l) {
            return Err(CryptoError::NonceReuse { src: self.src, counter });
        }
        self.last = Some(counter);
        Ok(encrypt_payload(plaintext, &self.key, FrameNonce { src: self.src, counter }))
    }
}

/// Receiving side: recovers a sender's full frame counter from the 8-bit
/// sequence number by picking the candidate closest to the highest counter
/// seen so far.
#[derive(Debug, Clone, Default)]
pub struct CounterEstimator {
    highest: Option<u64>,
}

impl CounterEstimator {
    pub fn estimate(&self, seq: u8) -> u64 {
        let Some(h) = self.highest else { return u64::from(seq) };
        let base = (h & !0xFF) | u64::from(seq);
        [base.checked_sub(256), Some(base), base.checked_add(256)]
            .into_iter()
            .flatten()
            .min_by_key(|&c| c.abs_diff(h))
            .expect("base is always a candidate")
    }

    pub fn observe(&mut self, counter: u64) {
        self.highest = Some(self.highest.map_or(counter, |h| h.max(counter)));
    }
}
