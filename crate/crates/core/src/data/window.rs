use super::{HfoEvent, Recording};
use crate::error::{Error, Result};

/// Fixed-length segment of `2 * half` samples centered on an event midpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub samples: Vec<f64>,
    pub center_ms: f64,
    /// Sample index of the window center within the recording.
    pub center_sample: i64,
}

/// Half-window length in samples for a total window of `window_ms`.
pub fn window_half_samples(window_ms: f64, sample_rate: u32) -> usize {
    (window_ms / 2.0 * sample_rate as f64 / 1000.0).round() as usize
}

/// Cuts the window `[c - L, c + L)` around the event midpoint `c`, where
/// samples outside the recording are zero.
pub fn extract_window(recording: &Recording, event: &HfoEvent, window_ms: f64) -> Result<Window> {
    if !(window_ms > 0.0 && window_ms.is_finite()) {
        return Err(Error::Window(format!("window_ms must be positive, got {window_ms}")));
    }
    if event.subject_id != recording.subject_id || event.channel_id != recording.channel_id {
        return Err(Error::Window(format!(
            "event {}/{} does not belong to recording {}/{}",
            event.subject_id, event.channel_id, recording.subject_id, recording.channel_id
        )));
    }
    let fs = recording.sample_rate as f64;
    let mid = event.midpoint_ms();
    let center = (mid * fs / 1000.0).round() as i64;
    let n = recording.samples.len() as i64;
    if center < 0 || center >= n {
        return Err(Error::Window(format!(
            "event {}/{} midpoint {mid} ms lies outside the {} ms recording",
            event.subject_id,
            event.channel_id,
            recording.duration_ms()
        )));
    }
    let half = window_half_samples(window_ms, recording.sample_rate) as i64;
    let samples = (center - half..center + half)
        .map(|i| {
            if (0..n).contains(&i) {
                recording.samples[i as usize]
            } else {
                0.0
            }
        })
        .collect();
    Ok(Window {
        samples,
        center_ms: mid,
        center_sample: center,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(n: usize, fs: u32) -> Recording {
        Recording {
            subject_id: "s".into(),
            channel_id: "c".into(),
            sample_rate: fs,
            samples: (0..n).map(|i| i as f64 + 1.0).collect(),
        }
    }

    fn ev(start: f64, end: f64) -> HfoEvent {
        HfoEvent {
            subject_id: "s".into(),
            channel_id: "c".into(),
            start_ms: start,
            end_ms: end,
            detector_tag: "t".into(),
        }
    }

    #[test]
    fn length_at_2khz() {
        let w = extract_window(&rec(10_000, 2000), &ev(1000.0, 1050.0), 570.0).unwrap();
        assert_eq!(w.samples.len(), 1140);
        assert_eq!(w.center_ms, 1025.0);
        assert_eq!(w.center_sample, 2050);
        // Sample at the center position.
        assert_eq!(w.samples[570], 2051.0);
    }

    #[test]
    fn midpoint_at_sample_zero_pads_left_half() {
        // Midpoint at 0.1 ms rounds to sample 0 at 2 kHz.
        let w = extract_window(&rec(5000, 2000), &ev(0.0, 0.2), 570.0).unwrap();
        assert_eq!(w.center_sample, 0);
        assert!(w.samples[..570].iter().all(|&v| v == 0.0));
        assert!(w.samples[570..].iter().all(|&v| v != 0.0));
    }

    #[test]
    fn midpoint_outside_recording() {
        assert!(extract_window(&rec(100, 1000), &ev(500.0, 600.0), 570.0).is_err());
        assert!(extract_window(&rec(100, 1000), &ev(10.0, 20.0), 0.0).is_err());
    }

    proptest! {
        #[test]
        fn fixed_length_and_center(start in 0.0f64..900.0, dur in 0.5f64..90.0, fs in prop::sample::select(vec![1000u32, 2000, 2048, 5000])) {
            let r = rec(fs as usize, fs);
            let e = ev(start, start + dur);
            let w = extract_window(&r, &e, 570.0).unwrap();
            prop_assert_eq!(w.samples.len(), 2 * window_half_samples(570.0, fs));
            let expected = (e.midpoint_ms() * fs as f64 / 1000.0).round() as i64;
            prop_assert!((w.center_sample - expected).abs() <= 1);
        }
    }
}
