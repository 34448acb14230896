use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;

use super::stream::Window;
use crate::error::{Error, Result};

/// Train, validation and test fractions.
pub const SPLIT_FRACTIONS: [f64; 3] = [0.7, 0.1, 0.2];

/// Indices into a window list for each split, each in time order per subject.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    pub fn counts(&self) -> [usize; 3] {
        [self.train.len(), self.val.len(), self.test.len()]
    }

    pub fn parts(&self) -> [&[usize]; 3] {
        [&self.train, &self.val, &self.test]
    }
}

/// Global split sizes: `round(f0 N)`, `round(f1 N)` and the remainder.
pub fn split_counts(n: usize, fractions: [f64; 3]) -> [usize; 3] {
    let train = ((fractions[0] * n as f64).round() as usize).min(n);
    let val = ((fractions[1] * n as f64).round() as usize).min(n - train);
    [train, val, n - train - val]
}

/// Largest-remainder apportionment of `total` over per-subject quotas, never
/// exceeding `caps`. Equal remainders are ordered by `rng`.
fn apportion<R: Rng + ?Sized>(
    quotas: &[f64],
    caps: &[usize],
    total: usize,
    rng: &mut R,
) -> Vec<usize> {
    let mut out: Vec<usize> = quotas
        .iter()
        .zip(caps)
        .map(|(&q, &cap)| ((q + 1e-9).floor() as usize).min(cap))
        .collect();
    let mut assigned: usize = out.iter().sum();
    let mut order: Vec<usize> = (0..quotas.len()).collect();
    order.shuffle(rng);
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - out[a] as f64;
        let rb = quotas[b] - out[b] as f64;
        rb.partial_cmp(&ra).unwrap_or(std::cmp::Ordering::Equal)
    });
    while assigned < total {
        let before = assigned;
        for &s in &order {
            if assigned == total {
                break;
            }
            if out[s] < caps[s] {
                out[s] += 1;
                assigned += 1;
            }
        }
        if assigned == before {
            break;
        }
    }
    out
}

/// Assigns each subject's windows, in time order, to contiguous train, then
/// validation, then test segments. Global counts are `round(0.7 N)`,
/// `round(0.1 N)` and the remainder; per-subject shares follow
/// largest-remainder apportionment.
pub fn split<R: Rng + ?Sized>(
    windows: &[Window],
    fractions: [f64; 3],
    rng: &mut R,
) -> Result<Split> {
    if fractions.iter().any(|f| !(*f >= 0.0)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9
    {
        return Err(Error::Parameter(format!(
            "split fractions {fractions:?} must sum to 1"
        )));
    }
    let totals = split_counts(windows.len(), fractions);
    if totals.contains(&0) {
        return Err(Error::Data(format!(
            "{} windows cannot populate train/val/test ({totals:?})",
            windows.len()
        )));
    }

    let mut by_subject: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, w) in windows.iter().enumerate() {
        by_subject.entry(&w.subject).or_default().push(i);
    }
    let groups: Vec<Vec<usize>> = by_subject
        .into_values()
        .map(|mut idx| {
            idx.sort_by(|&a, &b| windows[a].start_s.total_cmp(&windows[b].start_s));
            idx
        })
        .collect();
    let sizes: Vec<usize> = groups.iter().map(Vec::len).collect();

    let train_q: Vec<f64> = sizes.iter().map(|&n| fractions[0] * n as f64).collect();
    let train = apportion(&train_q, &sizes, totals[0], rng);
    let val_q: Vec<f64> = sizes.iter().map(|&n| fractions[1] * n as f64).collect();
    let room: Vec<usize> = sizes.iter().zip(&train).map(|(n, t)| n - t).collect();
    let val = apportion(&val_q, &room, totals[1], rng);

    let mut out = Split::default();
    for ((idx, &t), &v) in groups.iter().zip(&train).zip(&val) {
        out.train.extend_from_slice(&idx[..t]);
        out.val.extend_from_slice(&idx[t..t + v]);
        out.test.extend_from_slice(&idx[t + v..]);
    }
    debug_assert_eq!(out.counts(), totals);
    Ok(out)
}

/// True when, within every subject, no window of one split overlaps a
/// window of another split in time.
pub fn is_time_disjoint(windows: &[Window], split: &Split) -> bool {
    let parts = split.parts();
    for a in 0..3 {
        for b in a + 1..3 {
            for &i in parts[a] {
                for &j in parts[b] {
                    let (wi, wj) = (&windows[i], &windows[j]);
                    if wi.subject == wj.subject
                        && wi.start_s < wj.end_s()
                        && wj.start_s < wi.end_s()
                    {
                        return false;
                    }
                }
            }
        }
    }
    true
}
