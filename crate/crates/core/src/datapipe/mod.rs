//! Sensor-stream alignment, windowing, scaling, encoding, splitting and a
//! synthetic data generator.

mod encode;
mod scale;
mod schema;
mod split;
mod store;
mod stream;
mod synth;

use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::model::{LabeledSet, ModelKind};

pub use encode::{encode_windows, flatten_server, step_encode_edge};
pub use scale::{apply_scaler, fit_scaler, Scaler};
pub use schema::{
    samples_per_window, signal_channels, ChannelSpec, CHANNEL_COUNT, DEMOGRAPHICS, GAP_SECONDS,
    PHONE_CHANNELS, SIGNAL_CHANNEL_COUNT, STEPS_PER_SECOND, WATCH_CHANNELS, WINDOW_SECONDS,
};
pub use split::{is_time_disjoint, split, split_counts, Split, SPLIT_FRACTIONS};
pub use store::{
    read_dataset, read_manifest, read_subject, write_dataset, write_manifest, write_subject,
    MANIFEST,
};
pub use stream::{subject_windows, synchronize, window, window_count, Stream, Subject, Window};
pub use synth::{synth_generate, SynthConfig, SynthModel};

/// Windows every subject with the canonical window and gap lengths.
pub fn window_subjects(subjects: &[Subject]) -> Result<Vec<Window>> {
    let mut out = Vec::new();
    for s in subjects {
        out.extend(subject_windows(s, WINDOW_SECONDS, GAP_SECONDS)?);
    }
    Ok(out)
}

/// Reads a stored dataset one subject at a time and windows it, so that only
/// the windowed readings are kept in memory.
pub fn load_windows(root: &Path) -> Result<Vec<Window>> {
    let mut out = Vec::new();
    for (id, label) in read_manifest(root)? {
        let s = read_subject(root, &id)?;
        if s.label != label {
            return Err(Error::Data(format!(
                "subject {id}: manifest label {label} disagrees with label file {}",
                s.label
            )));
        }
        out.extend(subject_windows(&s, WINDOW_SECONDS, GAP_SECONDS)?);
    }
    Ok(out)
}

/// Scaled, encoded train/validation/test sets.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub kind: ModelKind,
    pub num_classes: usize,
    pub scaler: Scaler,
    pub split: Split,
    pub train: LabeledSet,
    pub val: LabeledSet,
    pub test: LabeledSet,
}

/// Number of classes implied by the window labels (at least two).
pub fn class_count(windows: &[Window]) -> usize {
    windows
        .iter()
        .map(|w| w.label + 1)
        .max()
        .unwrap_or(0)
        .max(2)
}

/// Scales windows with `scaler` and encodes them for `kind`.
pub fn encode_set(
    windows: &[Window],
    indices: &[usize],
    scaler: &Scaler,
    kind: ModelKind,
) -> Result<LabeledSet> {
    let scaled = indices
        .iter()
        .map(|&i| apply_scaler(scaler, &windows[i]))
        .collect::<Result<Vec<_>>>()?;
    let labels = scaled.iter().map(|w| w.label).collect();
    LabeledSet::new(encode_windows(&scaled, kind)?, labels)
}

/// Splits windows, fits the scaler on the training split only, then scales
/// and encodes all three splits.
pub fn prepare<R: Rng + ?Sized>(
    windows: &[Window],
    kind: ModelKind,
    rng: &mut R,
) -> Result<Prepared> {
    let split = split(windows, SPLIT_FRACTIONS, rng)?;
    let scaler = fit_scaler(split.train.iter().map(|&i| &windows[i]))?;
    Ok(Prepared {
        kind,
        num_classes: class_count(windows),
        train: encode_set(windows, &split.train, &scaler, kind)?,
        val: encode_set(windows, &split.val, &scaler, kind)?,
        test: encode_set(windows, &split.test, &scaler, kind)?,
        scaler,
        split,
    })
}
