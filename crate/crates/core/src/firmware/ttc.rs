// Licensed under the Apache-2.0 license

//! Time-to-contact from ToF range samples.

use std::collections::VecDeque;

pub const TOF_MIN_MM: u16 = 5;
pub const TOF_MAX_MM: u16 = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TofSample {
    pub distance_mm: u16,
    pub valid: bool,
    pub timestamp_ms: u64,
}

impl TofSample {
    /// Builds a sample from a raw range reading; anything outside the
    /// sensor's 5-100 mm window is flagged invalid.
    pub fn from_reading(range_mm: i64, timestamp_ms: u64) -> Self {
        let valid = (TOF_MIN_MM as i64..=TOF_MAX_MM as i64).contains(&range_mm);
        TofSample {
            distance_mm: range_mm.clamp(0, u16::MAX as i64) as u16,
            valid,
            timestamp_ms,
        }
    }

    pub fn invalid(timestamp_ms: u64) -> Self {
        TofSample {
            distance_mm: 0,
            valid: false,
            timestamp_ms,
        }
    }
}

/// Constant-velocity time to contact from two range samples `dt_s` apart.
/// `None` when the range is not shrinking.
pub fn estimate_time_to_contact(d_prev_mm: f64, d_curr_mm: f64, dt_s: f64) -> Option<f64> {
    if dt_s <= 0.0 {
        return None;
    }
    let v = (d_prev_mm - d_curr_mm) / dt_s;
    if v <= 0.0 {
        return None;
    }
    Some(d_curr_mm / v)
}

/// Sliding window of consecutive valid range samples for one approach.
///
/// Quantized 1 mm readings make a single-tick difference useless at slow
/// approach speeds, so the endpoints handed to [`estimate_time_to_contact`]
/// come from a least-squares line through the whole window. The slope of
/// that line is a weighted mean of all pairwise finite differences.
#[derive(Debug, Clone, Default)]
pub struct ApproachTracker {
    samples: VecDeque<(u64, f64)>,
}

impl ApproachTracker {
    pub const CAPACITY: usize = 128;

    pub fn push(&mut self, sample: &TofSample) {
        if !sample.valid {
            self.samples.clear();
            return;
        }
        if self.samples.len() == Self::CAPACITY {
            self.samples.pop_front();
        }
        self.samples
            .push_back((sample.timestamp_ms, sample.distance_mm as f64));
    }

    pub fn clear(&mut self) {
        self.samples.clear();
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Fitted range at the oldest and newest sample times, and the span
    /// between them in seconds.
    pub fn fitted_endpoints(&self) -> Option<(f64, f64, f64)> {
        let (&(t0, _), &(t1, _)) = (self.samples.front()?, self.samples.back()?);
        if t1 <= t0 {
            return None;
        }
        let n = self.samples.len() as f64;
        let ts = |t: u64| (t - t0) as f64 / 1000.0;
        let mean_t = self.samples.iter().map(|&(t, _)| ts(t)).sum::<f64>() / n;
        let mean_d = self.samples.iter().map(|&(_, d)| d).sum::<f64>() / n;
        let (mut sxy, mut sxx) = (0.0, 0.0);
        for &(t, d) in &self.samples {
            let dt = ts(t) - mean_t;
            sxy += dt * (d - mean_d);
            sxx += dt * dt;
        }
        let slope = sxy / sxx;
        let span = ts(t1);
        let at = |x: f64| mean_d + slope * (x - mean_t);
        Some((at(0.0), at(span), span))
    }

    pub fn time_to_contact(&self) -> Option<f64> {
        let (start, now, span) = self.fitted_endpoints()?;
        estimate_time_to_contact(start, now.max(0.0), span)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_point_examples() {
        let ttc = estimate_time_to_contact(40.0, 38.0, 0.05).unwrap();
        assert!((ttc - 0.95).abs() < 1e-12);
        assert_eq!(estimate_time_to_contact(30.0, 32.0, 0.05), None);
        // 100 mm/s at 20 mm
        let ttc = estimate_time_to_contact(25.0, 20.0, 0.05).unwrap();
        assert!((ttc - 0.2).abs() < 1e-12);
        assert_eq!(estimate_time_to_contact(30.0, 30.0, 0.05), None);
    }

    #[test]
    fn range_validity() {
        assert!(!TofSample::from_reading(150, 0).valid);
        assert!(!TofSample::from_reading(4, 0).valid);
        assert!(TofSample::from_reading(5, 0).valid);
        assert!(TofSample::from_reading(100, 0).valid);
        assert!(!TofSample::from_reading(-3, 0).valid);
    }

    #[test]
    fn exact_line_is_recovered() {
        let mut tr = ApproachTracker::default();
        for k in 0..20u64 {
            tr.push(&TofSample::from_reading(90 - 2 * k as i64, k * 50));
        }
        // 40 mm/s, last reading 52 mm
        let ttc = tr.time_to_contact().unwrap();
        assert!((ttc - 1.3).abs() < 1e-9, "{ttc}");
    }

    #[test]
    fn invalid_sample_resets_window() {
        let mut tr = ApproachTracker::default();
        tr.push(&TofSample::from_reading(50, 0));
        tr.push(&TofSample::from_reading(48, 50));
        tr.push(&TofSample::invalid(100));
        assert!(tr.is_empty());
        assert_eq!(tr.time_to_contact(), None);
    }

    #[test]
    fn window_is_bounded() {
        let mut tr = ApproachTracker::default();
        for k in 0..500u64 {
            tr.push(&TofSample::from_reading(60, k * 50));
        }
        assert_eq!(tr.len(), ApproachTracker::CAPACITY);
        assert_eq!(tr.time_to_contact(), None);
    }
}
