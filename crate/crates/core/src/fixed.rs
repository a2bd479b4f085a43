//! Two-decimal fixed-point sensor values.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// A value stored as an integer count of hundredths.
///
/// Every sensor reading in the system is quantised to two decimals, which
/// keeps rule evaluation, compression and persistence exact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Fixed(i64);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FixedError {
    #[error("value {0} is not finite or exceeds the 64-bit hundredths range")]
    OutOfRange(String),
    #[error("malformed decimal {0:?}")]
    Malformed(String),
}

impl Fixed {
    pub const ZERO: Fixed = Fixed(0);
    pub const SCALE: i64 = 100;

    pub const fn from_hundredths(h: i64) -> Self {
        Fixed(h)
    }

    pub const fn from_int(v: i64) -> Self {
        Fixed(v * Self::SCALE)
    }

    pub const fn hundredths(self) -> i64 {
        self.0
    }

    /// Rounds half away from zero to the nearest hundredth.
    pub fn from_f64(v: f64) -> Result<Self, FixedError> {
        let scaled = (v * Self::SCALE as f64).round();
        // i64::MAX as f64 rounds up to 2^63, so the bound is exclusive.
        if !scaled.is_finite() || scaled >= i64::MAX as f64 || scaled < i64::MIN as f64 {
            return Err(FixedError::OutOfRange(v.to_string()));
        }
        Ok(Fixed(scaled as i64))
    }

    pub fn to_f64(self) -> f64 {
        self.0 as f64 / Self::SCALE as f64
    }

    pub fn is_integral(self) -> bool {
        self.0 % Self::SCALE == 0
    }

    /// Renders with exactly two decimals, e.g. `25.50`, `-0.05`.
    pub fn to_decimal_string(self) -> String {
        let sign = if self.0 < 0 { "-" } else { "" };
        let abs = self.0.unsigned_abs();
        format!("{sign}{}.{:02}", abs / 100, abs % 100)
    }

    /// Renders the integer part only; callers use it for integral values.
    pub fn to_integer_string(self) -> String {
        (self.0 / Self::SCALE).to_string()
    }

    pub fn clamp_to(self, lo: Fixed, hi: Fixed) -> Fixed {
        Fixed(self.0.clamp(lo.0, hi.0))
    }

    pub fn round_to_integer(self) -> Fixed {
        let q = (self.0 as f64 / Self::SCALE as f64).round() as i64;
        Fixed::from_int(q)
    }

    pub fn abs_diff(self, other: Fixed) -> u64 {
        self.0.abs_diff(other.0)
    }
}

impl fmt::Display for Fixed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_decimal_string())
    }
}

impl FromStr for Fixed {
    type Err = FixedError;

    /// Parses `[-]digits[.d[d]]` exactly, without going through floating point.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || FixedError::Malformed(s.to_string());
        let (neg, body) = match s.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, s),
        };
        let (int_part, frac_part) = match body.split_once('.') {
            Some((i, f)) => (i, f),
            None => (body, ""),
        };
        if int_part.is_empty()
            || frac_part.len() > 2
            || (body.contains('.') && frac_part.is_empty())
            || !int_part.bytes().all(|b| b.is_ascii_digit())
            || !frac_part.bytes().all(|b| b.is_ascii_digit())
        {
            return Err(bad());
        }
        let int: i64 = int_part.parse().map_err(|_| bad())?;
        let mut frac: i64 = if frac_part.is_empty() { 0 } else { frac_part.parse().map_err(|_| bad())? };
        if frac_part.len() == 1 {
            frac *= 10;
        }
        let mag = int
            .checked_mul(Self::SCALE)
            .and_then(|v| v.checked_add(frac))
            .ok_or_else(|| FixedError::OutOfRange(s.to_string()))?;
        Ok(Fixed(if neg { -mag } else { mag }))
    }
}

impl Serialize for Fixed {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_f64(self.to_f64())
    }
}

impl<'de> Deserialize<'de> for Fixed {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let v = f64::deserialize(deserializer)?;
        Fixed::from_f64(v).map_err(serde::de::Error::custom)
    }
}
