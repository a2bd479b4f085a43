//! Data reduction and payload security: windowed aggregation, delta
//! compression and authenticated encryption.

mod aggregate;
mod compress;
mod crypto;

pub use aggregate::{aggregate, AggregateWindow, WindowAggregator};
pub use compress::{ascii_size, compress, decompress, CompressError, CompressedSeries};
pub use crypto::{
    decrypt_payload, encrypt_payload, CounterEstimator, CryptoError, FrameNonce, PayloadKey, PayloadSealer, TAG_LEN,
};
