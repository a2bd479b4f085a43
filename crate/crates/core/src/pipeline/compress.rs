//! Lossless delta compression of two-decimal series.
//!
//! Values are scaled to integer hundredths. The byte stream is
//!
//! ```text
//! uvarint(n) | svarint(first) | token*
//! ```
//!
//! where `uvarint` is unsigned LEB128 (7 data bits per byte, low group
//! first, high bit set on every byte but the last) and `svarint(v)` is
//! `uvarint(zigzag(v))` with `zigzag(v) = (v << 1) ^ (v >> 63)`.
//! Each token encodes successive differences: a non-zero delta `d` is
//! `svarint(d)`; a run of `k >= 1` zero deltas is the byte `0x00` followed
//! by `uvarint(k - 1)`. `n = 0` encodes the empty series and has no
//! further bytes.

use thiserror::Error;

use crate::fixed::Fixed;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CompressError {
    #[error("difference between consecutive values overflows 64-bit hundredths")]
    ValueOutOfRange,
    #[error("malformed compressed series: {0}")]
    MalformedEncoding(&'static str),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompressedSeries {
    pub len: usize,
    pub first_value: Option<Fixed>,
    /// Delta tokens, as laid out after the header.
    pub deltas: Vec<u8>,
}

impl CompressedSeries {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.deltas.len() + 12);
        put_uvarint(&mut out, self.len as u64);
        if let Some(first) = self.first_value {
            put_svarint(&mut out, first.hundredths());
        }
        out.extend_from_slice(&self.deltas);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CompressError> {
        let mut pos = 0;
        let len = get_uvarint(bytes, &mut pos)?;
        let len = usize::try_from(len).map_err(|_| CompressError::MalformedEncoding("length overflow"))?;
        if len == 0 {
            if pos != bytes.len() {
                return Err(CompressError::MalformedEncoding("trailing bytes"));
            }
            return Ok(Self { len, first_value: None, deltas: Vec::new() });
        }
        let first = get_svarint(bytes, &mut pos)?;
        Ok(Self { len, first_value: Some(Fixed::from_hundredths(first)), deltas: bytes[pos..].to_vec() })
    }

    pub fn encoded_len(&self) -> usize {
        self.to_bytes().len()
    }
}

fn zigzag(v: i64) -> u64 {
    ((v << 1) ^ (v >> 63)) as u64
}

fn unzigzag(u: u64) -> i64 {
    ((u >> 1) as i64) ^ -((u & 1) as i64)
}

fn put_uvarint(out: &mut Vec<u8>, mut v: u64) {
    while v >= 0x80 {
        out.push((v as u8) | 0x80);
        v >>= 7;
    }
    out.push(v as u8);
}

fn put_svarint(out: &mut Vec<u8>, v: i64) {
    put_uvarint(out, zigzag(v));
}

fn get_uvarint(bytes: &[u8], pos: &mut usize) -> Result<u64, CompressError> {
    let mut v: u64 = 0;
    for shift in (0..64).step_by(7) {
        let b = *bytes.get(*pos).ok_or(CompressError::MalformedEncoding("truncated varint"))?;
        *pos += 1;
        if shift == 63 && b > 1 {
            return Err(CompressError::MalformedEncoding("varint overflow"));
        }
        v |= u64::from(b & 0x7F) << shift;
        if b & 0x80 == 0 {
            return Ok(v);
        }
    }
    Err(CompressError::MalformedEncoding("varint overflow"))
}

fn get_svarint(bytes: &[u8], pos: &mut usize) -> Result<i64, CompressError> {
    get_uvarint(bytes, pos).map(unzigzag)
}

pub fn compress(series: &[Fixed]) -> Result<CompressedSeries, CompressError> {
    let Some((&first, rest)) = series.split_first() else {
        return Ok(CompressedSeries { len: 0, first_value: None, deltas: Vec::new() });
    };
    let mut deltas = Vec::with_capacity(series.len());
    let mut prev = first.hundredths();
    let mut zero_run: u64 = 0;
    for v in rest {
        let d = v.hundredths().checked_sub(prev).ok_or(CompressError::ValueOutOfRange)?;
        prev = v.hundredths();
        if d == 0 {
            zero_run += 1;
            continue;
        }
        if zero_run > 0 {
            deltas.push(0);
            put_uvarint(&mut deltas, zero_run - 1);
            zero_run = 0;
        }
        put_svarint(&mut deltas, d);
    }
    if zero_run > 0 {
        deltas.push(0);
        put_uvarint(&mut deltas, zero_run - 1);
    }
    Ok(CompressedSeries { len: series.len(), first_value: Some(first), deltas })
}

pub fn decompress(series: &CompressedSeries) -> Result<Vec<Fixed>, CompressError> {
    let Some(first) = series.first_value else {
        return if series.len == 0 && series.deltas.is_empty() {
            Ok(Vec::new())
        } else {
            Err(CompressError::MalformedEncoding("missing first value"))
        };
    };
    if series.len == 0 {
        return Err(CompressError::MalformedEncoding("zero length with a first value"));
    }
    let bytes = &series.deltas;
    let mut out = Vec::with_capacity(series.len);
    out.push(first);
    let mut cur = first.hundredths();
    let mut pos = 0;
    while pos < bytes.len() {
        let d = get_svarint(bytes, &mut pos)?;
        if d == 0 {
            let run = get_uvarint(bytes, &mut pos)?
                .checked_add(1)
                .ok_or(CompressError::MalformedEncoding("zero run overflow"))?;
            if run > (series.len - out.len()) as u64 {
                return Err(CompressError::MalformedEncoding("more values than declared"));
            }
            out.extend(std::iter::repeat_n(Fixed::from_hundredths(cur), run as usize));
        } else {
            if out.len() >= series.len {
                return Err(CompressError::MalformedEncoding("more values than declared"));
            }
            cur = cur.checked_add(d).ok_or(CompressError::MalformedEncoding("value overflow"))?;
            out.push(Fixed::from_hundredths(cur));
        }
    }
    if out.len() != series.len {
        return Err(CompressError::MalformedEncoding("fewer values than declared"));
    }
    Ok(out)
}

/// Size of the series written as two-decimal ASCII, one value per line.
pub fn ascii_size(series: &[Fixed]) -> usize {
    series.iter().map(|v| v.to_decimal_string().len() + 1).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fx(vals: &[i64]) -> Vec<Fixed> {
        vals.iter().map(|&h| Fixed::from_hundredths(h)).collect()
    }

    #[test]
    fn ramp_deltas() {
        let c = compress(&fx(&[10000, 10100, 10200, 10300])).unwrap();
        assert_eq!(c.first_value, Some(Fixed::from_int(100)));
        // zigzag(100) = 200 = 0xC8 0x01
        assert_eq!(c.deltas, [0xC8, 0x01, 0xC8, 0x01, 0xC8, 0x01]);
        assert_eq!(decompress(&c).unwrap(), fx(&[10000, 10100, 10200, 10300]));
    }

    #[test]
    fn single_value() {
        let c = compress(&fx(&[4242])).unwrap();
        assert!(c.deltas.is_empty());
        assert_eq!(decompress(&c).unwrap(), fx(&[4242]));
    }

    #[test]
    fn empty_series() {
        let c = compress(&[]).unwrap();
        assert_eq!(c.to_bytes(), [0]);
        assert!(decompress(&CompressedSeries::from_bytes(&[0]).unwrap()).unwrap().is_empty());
    }

    #[test]
    fn zigzag_known_values() {
        assert_eq!([0, -1, 1, -2, 2].map(zigzag), [0, 1, 2, 3, 4]);
        assert_eq!(zigzag(i64::MIN), u64::MAX);
        for v in [0, 1, -1, i64::MAX, i64::MIN] {
            assert_eq!(unzigzag(zigzag(v)), v);
        }
    }

    #[test]
    fn truncated_stream_is_malformed() {
        let bytes = compress(&fx(&[0, 100_000, 300_000])).unwrap().to_bytes();
        let cut = CompressedSeries::from_bytes(&bytes[..bytes.len() - 1]).unwrap();
        assert!(matches!(decompress(&cut), Err(CompressError::MalformedEncoding(_))));
        let c = compress(&fx(&[1, 2, 3])).unwrap();
        let short = CompressedSeries { deltas: c.deltas[..1].to_vec(), ..c };
        assert!(matches!(decompress(&short), Err(CompressError::MalformedEncoding(_))));
    }

    #[test]
    fn overflowing_delta_rejected() {
        let s = [Fixed::from_hundredths(i64::MIN), Fixed::from_hundredths(i64::MAX)];
        assert_eq!(compress(&s), Err(CompressError::ValueOutOfRange));
    }

    #[test]
    fn constant_series_shrinks() {
        for v in [0i64, 1, 2550, -99_999, 102_300] {
            for n in [16usize, 17, 100, 1000] {
                let s = vec![Fixed::from_hundredths(v); n];
                let c = compress(&s).unwrap();
                assert!((c.encoded_len() as f64) < 0.2 * ascii_size(&s) as f64, "v={v} n={n}");
            }
        }
    }

    proptest! {
        #[test]
        fn round_trip(vals in proptest::collection::vec(-10_000_000i64..10_000_000, 0..300)) {
            let s = fx(&vals);
            let bytes = compress(&s).unwrap().to_bytes();
            let back = decompress(&CompressedSeries::from_bytes(&bytes).unwrap()).unwrap();
            prop_assert_eq!(back, s);
        }

        #[test]
        fn smooth_series_bound(start in -100_000i64..100_000, steps in proptest::collection::vec(-127i64..=127, 0..400)) {
            let mut cur = start;
            let mut vals = vec![cur];
            for d in steps { cur += d; vals.push(cur); }
            let s = fx(&vals);
            let n = compress(&s).unwrap().encoded_len();
            prop_assert!(n <= 2 * s.len() + 16);
            prop_assert!(n < ascii_size(&s));
        }
    }
}
