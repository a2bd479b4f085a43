use serde::{Deserialize, Serialize};

use super::frame::DEFAULT_MAX_PAYLOAD;
use super::MediumError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub fn new(x: f64, y: f64) -> Result<Self, MediumError> {
        if !(x.is_finite() && y.is_finite()) {
            return Err(MediumError::InvalidPosition);
        }
        Ok(Self { x, y })
    }

    pub fn distance(&self, other: &Position) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Inclusive uniform interval in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyBand {
    pub lo: f64,
    pub hi: f64,
}

/// Parameters of the virtual radio medium.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkModel {
    /// Beyond this distance (m) every frame is lost.
    pub max_range: f64,
    /// Within this distance (m) only interference loss applies.
    pub reliable_range: f64,
    /// End-to-end latency of a single-hop delivery.
    pub latency_ms: LatencyBand,
    /// Added for each hop after the first.
    pub extra_hop_latency_ms: LatencyBand,
    /// Per-link serialisation rate in bits/s.
    pub bit_rate_cap: f64,
    pub interference_loss: f64,
    pub max_payload: usize,
    /// Informational only, not simulated.
    pub frequency_band: String,
}

impl Default for LinkModel {
    fn default() -> Self {
        Self {
            max_range: 100.0,
            reliable_range: 60.0,
            latency_ms: LatencyBand { lo: 15.0, hi: 100.0 },
            extra_hop_latency_ms: LatencyBand { lo: 5.0, hi: 30.0 },
            bit_rate_cap: 250_000.0,
            interference_loss: 0.01,
            max_payload: DEFAULT_MAX_PAYLOAD,
            frequency_band: "2.4GHz".to_string(),
        }
    }
}

impl LinkModel {
    pub fn validate(&self) -> Result<(), MediumError> {
        let bad = |what: &str| Err(MediumError::InvalidLinkModel(what.to_string()));
        if !(self.reliable_range > 0.0 && self.reliable_range <= self.max_range) {
            return bad("0 < reliable_range <= max_range");
        }
        if !(0.0..=1.0).contains(&self.interference_loss) {
            return bad("interference_loss in [0, 1]");
        }
        if !(self.bit_rate_cap > 0.0 && self.bit_rate_cap.is_finite()) {
            return bad("bit_rate_cap > 0");
        }
        for band in [self.latency_ms, self.extra_hop_latency_ms] {
            if !(band.lo >= 0.0 && band.lo <= band.hi && band.hi.is_finite()) {
                return bad("latency band 0 <= lo <= hi");
            }
        }
        if self.max_payload == 0 {
            return bad("max_payload >= 1");
        }
        Ok(())
    }

    /// Probability that distance alone kills a hop: zero inside the
    /// reliable range, rising linearly to one at max range.
    pub fn range_loss(&self, distance: f64) -> f64 {
        if distance <= self.reliable_range {
            0.0
        } else if distance >= self.max_range {
            1.0
        } else {
            (distance - self.reliable_range) / (self.max_range - self.reliable_range)
        }
    }

    /// Serialisation time of `bits` on one link, in ms.
    pub fn airtime_ms(&self, bits: u64) -> f64 {
        bits as f64 * 1000.0 / self.bit_rate_cap
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid() {
        LinkModel::default().validate().unwrap();
    }

    #[test]
    fn rejects_inverted_ranges() {
        let m = LinkModel { reliable_range: 120.0, ..LinkModel::default() };
        assert!(m.validate().is_err());
        let m = LinkModel { latency_ms: LatencyBand { lo: 50.0, hi: 10.0 }, ..LinkModel::default() };
        assert!(m.validate().is_err());
        let m = LinkModel { interference_loss: 1.5, ..LinkModel::default() };
        assert!(m.validate().is_err());
    }

    #[test]
    fn range_loss_ramp() {
        let m = LinkModel::default();
        assert_eq!(m.range_loss(60.0), 0.0);
        assert!((m.range_loss(80.0) - 0.5).abs() < 1e-12);
        assert_eq!(m.range_loss(100.0), 1.0);
        assert_eq!(m.range_loss(150.0), 1.0);
    }

    #[test]
    fn position_rejects_nan() {
        assert!(Position::new(f64::NAN, 0.0).is_err());
        assert_eq!(Position::new(3.0, 4.0).unwrap().distance(&Position::new(0.0, 0.0).unwrap()), 5.0);
    }
}
