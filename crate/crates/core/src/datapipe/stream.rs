use crate::error::{Error, Result};

use super::schema::{samples_per_window, DEMOGRAPHICS, SIGNAL_CHANNEL_COUNT};

/// A uniformly sampled signal. Sample `i` is taken at
/// `start_ms + i * 1000 / rate_hz`.
#[derive(Debug, Clone, PartialEq)]
pub struct Stream {
    pub name: String,
    pub rate_hz: f64,
    pub start_ms: i64,
    pub samples: Vec<f64>,
}

impl Stream {
    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.rate_hz
    }
}

/// One participant: 33 streams in canonical order, demographics and label.
#[derive(Debug, Clone, PartialEq)]
pub struct Subject {
    pub id: String,
    pub streams: Vec<Stream>,
    pub demographics: Vec<f64>,
    pub label: usize,
}

impl Subject {
    pub fn validate(&self) -> Result<()> {
        if self.streams.len() != SIGNAL_CHANNEL_COUNT {
            return Err(Error::Data(format!(
                "subject {} has {} streams, expected {SIGNAL_CHANNEL_COUNT}",
                self.id,
                self.streams.len()
            )));
        }
        if self.demographics.len() != DEMOGRAPHICS.len() {
            return Err(Error::Data(format!(
                "subject {} has {} demographic values, expected {}",
                self.id,
                self.demographics.len(),
                DEMOGRAPHICS.len()
            )));
        }
        Ok(())
    }
}

/// One analysis window of a subject: every channel's samples plus the
/// subject's demographics.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub subject: String,
    pub label: usize,
    /// Offset of the window start from the synchronised origin, seconds.
    pub start_s: f64,
    pub duration_s: f64,
    pub rates: Vec<f64>,
    pub channels: Vec<Vec<f64>>,
    pub demographics: Vec<f64>,
}

impl Window {
    pub fn end_s(&self) -> f64 {
        self.start_s + self.duration_s
    }

    /// Signal channels plus demographic features.
    pub fn channel_count(&self) -> usize {
        self.channels.len() + self.demographics.len()
    }
}

fn ceil_exact(x: f64) -> usize {
    let r = x.round();
    if (x - r).abs() < 1e-9 {
        r.max(0.0) as usize
    } else {
        x.ceil().max(0.0) as usize
    }
}

/// Re-bases every stream onto the latest start time. `offsets_ms` (empty,
/// or one per stream) is added to each start time first; samples taken
/// before the common origin are dropped.
pub fn synchronize(mut streams: Vec<Stream>, offsets_ms: &[i64]) -> Result<Vec<Stream>> {
    if !offsets_ms.is_empty() && offsets_ms.len() != streams.len() {
        return Err(Error::shape(
            "synchronize offsets",
            streams.len(),
            offsets_ms.len(),
        ));
    }
    for (s, off) in streams.iter_mut().zip(offsets_ms) {
        s.start_ms += off;
    }
    let Some(origin) = streams.iter().map(|s| s.start_ms).max() else {
        return Ok(streams);
    };
    for s in streams.iter_mut() {
        if !(s.rate_hz > 0.0) {
            return Err(Error::Data(format!(
                "stream {} has non-positive rate",
                s.name
            )));
        }
        let lag_ms = (origin - s.start_ms) as f64;
        let drop = ceil_exact(lag_ms * s.rate_hz / 1000.0);
        if drop >= s.samples.len() {
            return Err(Error::Data(format!(
                "stream {} is empty after synchronisation",
                s.name
            )));
        }
        s.samples.drain(..drop);
        s.start_ms = origin;
    }
    Ok(streams)
}

/// Number of complete windows in a recording of `duration_s` seconds.
pub fn window_count(duration_s: f64, window_s: f64, gap_s: f64) -> usize {
    if duration_s + 1e-9 < window_s {
        0
    } else {
        ((duration_s - window_s) / (window_s + gap_s) + 1e-9).floor() as usize + 1
    }
}

/// Cuts synchronised streams into windows covering
/// `[k(t+s), k(t+s)+t)`; incomplete trailing windows are discarded.
/// Returns `(start_s, per-channel samples)` pairs.
pub fn window(streams: &[Stream], window_s: f64, gap_s: f64) -> Result<Vec<(f64, Vec<Vec<f64>>)>> {
    if !(window_s > 0.0) || gap_s < 0.0 {
        return Err(Error::Parameter(format!(
            "window {window_s}s / gap {gap_s}s is invalid"
        )));
    }
    if let Some(s) = streams.iter().find(|s| s.start_ms != streams[0].start_ms) {
        return Err(Error::Data(format!(
            "stream {} is not synchronised",
            s.name
        )));
    }
    let count = streams
        .iter()
        .map(|s| window_count(s.duration_s(), window_s, gap_s))
        .min()
        .unwrap_or(0);
    let stride = window_s + gap_s;
    let mut out = Vec::with_capacity(count);
    for k in 0..count {
        let start_s = k as f64 * stride;
        let channels = streams
            .iter()
            .map(|s| {
                let first = (start_s * s.rate_hz).round() as usize;
                let len = samples_per_window(s.rate_hz, window_s);
                s.samples[first..first + len].to_vec()
            })
            .collect();
        out.push((start_s, channels));
    }
    Ok(out)
}

/// Synchronises and windows one subject.
pub fn subject_windows(subject: &Subject, window_s: f64, gap_s: f64) -> Result<Vec<Window>> {
    subject.validate()?;
    let synced = synchronize(subject.streams.clone(), &[])?;
    let rates: Vec<f64> = synced.iter().map(|s| s.rate_hz).collect();
    Ok(window(&synced, window_s, gap_s)?
        .into_iter()
        .map(|(start_s, channels)| Window {
            subject: subject.id.clone(),
            label: subject.label,
            start_s,
            duration_s: window_s,
            rates: rates.clone(),
            channels,
            demographics: subject.demographics.clone(),
        })
        .collect())
}
