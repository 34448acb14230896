use ndarray::{Array1, Array2, Array3, Axis};

use super::schema::{samples_per_window, STEPS_PER_SECOND};
use super::stream::Window;
use crate::error::{Error, Result};
use crate::model::{Inputs, ModelKind};

fn check_complete(window: &Window) -> Result<()> {
    if window.rates.len() != window.channels.len() {
        return Err(Error::shape(
            "window rates",
            window.channels.len(),
            window.rates.len(),
        ));
    }
    for (c, (samples, &rate)) in window.channels.iter().zip(&window.rates).enumerate() {
        let want = samples_per_window(rate, window.duration_s);
        if samples.len() != want {
            return Err(Error::Data(format!(
                "window of {} at {}s: channel {c} has {} samples, expected {want}",
                window.subject,
                window.start_s,
                samples.len()
            )));
        }
    }
    Ok(())
}

/// Concatenates every channel's samples in channel order, then appends the
/// demographics (3712 values for the canonical schema).
pub fn flatten_server(window: &Window) -> Result<Array1<f64>> {
    check_complete(window)?;
    let len: usize =
        window.channels.iter().map(Vec::len).sum::<usize>() + window.demographics.len();
    let mut out = Vec::with_capacity(len);
    for samples in &window.channels {
        out.extend_from_slice(samples);
    }
    out.extend_from_slice(&window.demographics);
    Ok(Array1::from(out))
}

/// Index of the latest sample taken at or before `step / steps_per_second`.
#[inline]
fn held_index(step: usize, rate_hz: f64, len: usize) -> usize {
    let pos = step as f64 * rate_hz / STEPS_PER_SECOND;
    ((pos + 1e-9).floor() as usize).min(len - 1)
}

/// Four steps per second; each step holds the latest reading of every
/// channel at or before the step time, followed by the demographics.
/// Returns `steps x (channels + demographics)` (60 x 40 canonically).
pub fn step_encode_edge(window: &Window) -> Result<Array2<f64>> {
    check_complete(window)?;
    let steps = (window.duration_s * STEPS_PER_SECOND).round() as usize;
    let width = window.channel_count();
    let signals = window.channels.len();
    let mut out = Array2::zeros((steps, width));
    for (j, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
        for (c, (samples, &rate)) in window.channels.iter().zip(&window.rates).enumerate() {
            if samples.is_empty() {
                return Err(Error::Data(format!("channel {c} has no readings")));
            }
            row[c] = samples[held_index(j, rate, samples.len())];
        }
        for (d, &v) in window.demographics.iter().enumerate() {
            row[signals + d] = v;
        }
    }
    Ok(out)
}

/// Encodes windows for the given model kind.
pub fn encode_windows(windows: &[Window], kind: ModelKind) -> Result<Inputs> {
    let Some(first) = windows.first() else {
        return Err(Error::Data("no windows to encode".into()));
    };
    match kind {
        ModelKind::Server => {
            let width = flatten_server(first)?.len();
            let mut out = Array2::zeros((windows.len(), width));
            for (w, mut row) in windows.iter().zip(out.axis_iter_mut(Axis(0))) {
                let v = flatten_server(w)?;
                if v.len() != width {
                    return Err(Error::shape("flattened window", width, v.len()));
                }
                row.assign(&v);
            }
            Ok(Inputs::Flat(out))
        }
        ModelKind::Edge => {
            let (steps, width) = step_encode_edge(first)?.dim();
            let mut out = Array3::zeros((windows.len(), steps, width));
            for (w, mut slab) in windows.iter().zip(out.axis_iter_mut(Axis(0))) {
                let seq = step_encode_edge(w)?;
                if seq.dim() != (steps, width) {
                    return Err(Error::shape(
                        "step sequence",
                        format!("{steps}x{width}"),
                        format!("{:?}", seq.dim()),
                    ));
                }
                slab.assign(&seq);
            }
            Ok(Inputs::Sequence(out))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datapipe::schema::{signal_channels, DEMOGRAPHICS, WINDOW_SECONDS};

    fn canonical_window(fill: impl Fn(usize, usize) -> f64) -> Window {
        let rates: Vec<f64> = signal_channels().map(|c| c.rate_hz).collect();
        let channels = rates
            .iter()
            .enumerate()
            .map(|(c, &r)| {
                (0..samples_per_window(r, WINDOW_SECONDS))
                    .map(|i| fill(c, i))
                    .collect()
            })
            .collect();
        Window {
            subject: "s".into(),
            label: 1,
            start_s: 0.0,
            duration_s: WINDOW_SECONDS,
            rates,
            channels,
            demographics: (0..DEMOGRAPHICS.len()).map(|d| 100.0 + d as f64).collect(),
        }
    }

    #[test]
    fn flattened_layout() {
        let w = canonical_window(|c, i| (c * 10_000 + i) as f64);
        let v = flatten_server(&w).unwrap();
        assert_eq!(v.len(), 3712);
        for d in 0..7 {
            assert_eq!(v[3705 + d], 100.0 + d as f64);
        }
        // first watch channel (4 Hz) occupies the first 60 slots in time order
        assert_eq!(v[0], 0.0);
        assert_eq!(v[59], 59.0);
        assert_eq!(v[60], 10_000.0);

        let mut zero = canonical_window(|_, _| 0.0);
        zero.demographics.iter_mut().for_each(|d| *d = 0.0);
        assert!(flatten_server(&zero).unwrap().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn missing_samples_rejected() {
        let mut w = canonical_window(|_, _| 1.0);
        w.channels[6].pop();
        assert!(matches!(flatten_server(&w), Err(Error::Data(_))));
        assert!(matches!(step_encode_edge(&w), Err(Error::Data(_))));
    }

    #[test]
    fn step_encoding_shape_and_hold() {
        let w = canonical_window(|c, i| (c * 10_000 + i) as f64);
        let seq = step_encode_edge(&w).unwrap();
        assert_eq!(seq.dim(), (60, 40));
        // ibi (channel 5) is 1 Hz: each reading spans four steps
        for j in 0..60 {
            assert_eq!(seq[[j, 5]], (5 * 10_000 + j / 4) as f64);
        }
        // bvp (channel 6) at 64 Hz: reading at or before step time
        assert_eq!(seq[[3, 6]], (6 * 10_000 + 48) as f64);
        // 3 Hz phone channel: floor(0.75 j)
        assert_eq!(seq[[5, 7]], (7 * 10_000 + 3) as f64);
        for j in 0..60 {
            for d in 0..7 {
                assert_eq!(seq[[j, 33 + d]], 100.0 + d as f64);
            }
        }
    }

    #[test]
    fn edge_values_appear_in_flat_segment() {
        let w = canonical_window(|c, i| ((c * 7919 + i * 104_729) % 1_000_003) as f64);
        let flat = flatten_server(&w).unwrap();
        let seq = step_encode_edge(&w).unwrap();
        let mut offset = 0;
        for (c, samples) in w.channels.iter().enumerate() {
            let segment = &flat.as_slice().unwrap()[offset..offset + samples.len()];
            for j in 0..60 {
                assert!(segment.contains(&seq[[j, c]]));
            }
            offset += samples.len();
        }
    }
}
