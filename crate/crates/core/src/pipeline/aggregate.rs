use serde::{Deserialize, Serialize};

use crate::fixed::Fixed;

/// Summary of up to `window_len` consecutive samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateWindow {
    pub window_len: usize,
    pub min: Fixed,
    pub max: Fixed,
    pub mean: f64,
    pub count: usize,
    pub first_ts: u64,
    pub last_ts: u64,
}

impl AggregateWindow {
    fn from_slice(window_len: usize, samples: &[(u64, Fixed)]) -> Self {
        let (first_ts, _) = samples[0];
        let (last_ts, _) = samples[samples.len() - 1];
        let mut min = samples[0].1;
        let mut max = samples[0].1;
        let mut sum: i128 = 0;
        for &(_, v) in samples {
            min = min.min(v);
            max = max.max(v);
            sum += v.hundredths() as i128;
        }
        let mean = sum as f64 / samples.len() as f64 / Fixed::SCALE as f64;
        Self { window_len, min, max, mean, count: samples.len(), first_ts, last_ts }
    }
}

/// Splits a time-ordered series into consecutive, non-overlapping windows.
/// The last window may be partial.
pub fn aggregate(samples: &[(u64, Fixed)], window_len: usize) -> Vec<AggregateWindow> {
    assert!(window_len >= 1, "window_len must be at least 1");
    samples.chunks(window_len).map(|w| AggregateWindow::from_slice(window_len, w)).collect()
}

/// Streaming form of [`aggregate`]: emits a window each time `window_len`
/// samples have been pushed.
#[derive(Debug, Clone)]
pub struct WindowAggregator {
    window_len: usize,
    pending: Vec<(u64, Fixed)>,
}

impl WindowAggregator {
    pub fn new(window_len: usize) -> Self {
        assert!(window_len >= 1, "window_len must be at least 1");
        Self { window_len, pending: Vec::with_capacity(window_len) }
    }

    pub fn push(&mut self, ts: u64, value: Fixed) -> Option<AggregateWindow> {
        self.pending.push((ts, value));
        if self.pending.len() == self.window_len {
            let w = AggregateWindow::from_slice(self.window_len, &self.pending);
            self.pending.clear();
            Some(w)
        } else {
            None
        }
    }

    /// Emits the trailing partial window, if any.
    pub fn flush(&mut self) -> Option<AggregateWindow> {
        if self.pending.is_empty() {
            return None;
        }
        let w = AggregateWindow::from_slice(self.window_len, &self.pending);
        self.pending.clear();
        Some(w)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(vals: &[i64]) -> Vec<(u64, Fixed)> {
        vals.iter().enumerate().map(|(i, &v)| (i as u64 * 1000, Fixed::from_int(v))).collect()
    }

    #[test]
    fn hand_computed_window() {
        let w = aggregate(&series(&[1, 2, 3, 4]), 4);
        assert_eq!(w.len(), 1);
        assert_eq!((w[0].min, w[0].max, w[0].mean, w[0].count), (Fixed::from_int(1), Fixed::from_int(4), 2.5, 4));
        assert_eq!((w[0].first_ts, w[0].last_ts), (0, 3000));
    }

    #[test]
    fn empty_input() {
        assert!(aggregate(&[], 3).is_empty());
    }

    #[test]
    fn partial_tail() {
        let w = aggregate(&series(&[5, 5, 5, 9, 1]), 3);
        assert_eq!(w.len(), 2);
        assert_eq!(w[1].count, 2);
        assert_eq!(w[1].mean, 5.0);
    }

    #[test]
    fn streaming_matches_batch() {
        let s = series(&[3, 1, 4, 1, 5, 9, 2, 6, 5, 3, 5]);
        let mut agg = WindowAggregator::new(4);
        let mut out: Vec<_> = s.iter().filter_map(|&(t, v)| agg.push(t, v)).collect();
        out.extend(agg.flush());
        assert_eq!(out, aggregate(&s, 4));
    }
}
