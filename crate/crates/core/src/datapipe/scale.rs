use crate::error::{Error, Result};

use super::stream::Window;

/// Per-channel min-max ranges fitted on training windows. Channel order is
/// the window's signal channels followed by its demographic features.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Scaler {
    pub mins: Vec<f64>,
    pub maxs: Vec<f64>,
}

impl Scaler {
    pub fn is_fitted(&self) -> bool {
        !self.mins.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.mins.len()
    }

    #[inline]
    fn scale(&self, c: usize, x: f64) -> f64 {
        let (lo, hi) = (self.mins[c], self.maxs[c]);
        if hi > lo {
            (x - lo) / (hi - lo)
        } else {
            0.0
        }
    }
}

/// Fits per-channel ranges over the given (training) windows.
pub fn fit_scaler<'a, I>(train: I) -> Result<Scaler>
where
    I: IntoIterator<Item = &'a Window>,
{
    let mut scaler = Scaler::default();
    for w in train {
        if !scaler.is_fitted() {
            scaler.mins = vec![f64::INFINITY; w.channel_count()];
            scaler.maxs = vec![f64::NEG_INFINITY; w.channel_count()];
        }
        if w.channel_count() != scaler.channels() {
            return Err(Error::shape(
                "scaler channels",
                scaler.channels(),
                w.channel_count(),
            ));
        }
        let values = w
            .channels
            .iter()
            .enumerate()
            .flat_map(|(c, v)| v.iter().map(move |&x| (c, x)))
            .chain(
                w.demographics
                    .iter()
                    .enumerate()
                    .map(|(d, &x)| (w.channels.len() + d, x)),
            );
        for (c, x) in values {
            scaler.mins[c] = scaler.mins[c].min(x);
            scaler.maxs[c] = scaler.maxs[c].max(x);
        }
    }
    if !scaler.is_fitted() {
        return Err(Error::Data("cannot fit a scaler on zero windows".into()));
    }
    Ok(scaler)
}

/// `x' = (x - min) / (max - min)` per channel; constant channels map to 0.
/// Values outside the fitted range are not clamped.
pub fn apply_scaler(scaler: &Scaler, window: &Window) -> Result<Window> {
    if !scaler.is_fitted() {
        return Err(Error::State("scaler has not been fitted"));
    }
    if window.channel_count() != scaler.channels() {
        return Err(Error::shape(
            "scaler channels",
            scaler.channels(),
            window.channel_count(),
        ));
    }
    let signals = window.channels.len();
    let mut out = window.clone();
    for (c, samples) in out.channels.iter_mut().enumerate() {
        for x in samples.iter_mut() {
            *x = scaler.scale(c, *x);
        }
    }
    for (d, x) in out.demographics.iter_mut().enumerate() {
        *x = scaler.scale(signals + d, *x);
    }
    Ok(out)
}
