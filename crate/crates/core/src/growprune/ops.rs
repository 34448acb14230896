use ndarray::ArrayView2;
use rand::Rng;

use crate::error::{Error, Result};
use crate::model::Model;
use crate::numerics::{MaskedMatrix, Parameters};

/// `ceil(ratio * n)` tolerant of representation error in the product
/// (`0.2 * 10` must give 2, not 3).
pub(crate) fn ceil_count(ratio: f64, n: usize) -> usize {
    let x = ratio * n as f64;
    let nearest = x.round();
    if (x - nearest).abs() <= 1e-9 * x.abs().max(1.0) {
        nearest as usize
    } else {
        x.ceil() as usize
    }
}

fn check_ratio(name: &str, ratio: f64) -> Result<()> {
    if ratio > 0.0 && ratio < 1.0 {
        Ok(())
    } else {
        Err(Error::Parameter(format!(
            "{name} must lie in (0,1), got {ratio}"
        )))
    }
}

/// Keeps exactly `round(fill_rate * M * N)` uniformly chosen connections in
/// every prunable matrix and zeroes the rest. Active entries keep their
/// initial values.
pub fn seed_init<R: Rng + ?Sized>(model: &mut Model, fill_rate: f64, rng: &mut R) -> Result<()> {
    if !(fill_rate > 0.0 && fill_rate <= 1.0) {
        return Err(Error::Parameter(format!(
            "fill rate must lie in (0,1], got {fill_rate}"
        )));
    }
    let prunable = model.prunable();
    for (matrix, keep) in model.matrices_mut().into_iter().zip(prunable) {
        if keep {
            seed_matrix(matrix, fill_rate, rng);
        }
    }
    Ok(())
}

fn seed_matrix<R: Rng + ?Sized>(matrix: &mut MaskedMatrix, fill_rate: f64, rng: &mut R) {
    let len = matrix.len();
    let active = ((fill_rate * len as f64).round() as usize).min(len);
    let chosen = rand::seq::index::sample(rng, len, active);
    {
        let (_, mask) = matrix.parts_mut();
        let mask_slice = mask.as_slice_mut().expect("standard layout");
        mask_slice.fill(false);
        for idx in chosen.iter() {
            mask_slice[idx] = true;
        }
    }
    matrix.apply_mask();
}

/// Gradient-based growth on one matrix.
///
/// `thres` is the `ceil(α·M·N)`-th largest `|avg_grad|` over the whole
/// matrix; every position with `|avg_grad| > thres` becomes active, then
/// `W <- W + η · avg_grad ⊗ Msk`. Returns the number of newly activated
/// connections.
pub fn grow(
    matrix: &mut MaskedMatrix,
    avg_grad: ArrayView2<'_, f64>,
    growth_ratio: f64,
    learning_rate: f64,
) -> Result<usize> {
    check_ratio("growth ratio", growth_ratio)?;
    if avg_grad.dim() != matrix.dim() {
        return Err(Error::shape(
            "grow gradient",
            format!("{:?}", matrix.dim()),
            format!("{:?}", avg_grad.dim()),
        ));
    }
    let len = matrix.len();
    if len == 0 {
        return Ok(0);
    }
    let k = ceil_count(growth_ratio, len).clamp(1, len);
    let mut magnitudes: Vec<f64> = avg_grad.iter().map(|g| g.abs()).collect();
    let (_, &mut thres, _) = magnitudes.select_nth_unstable_by(len - k, f64::total_cmp);

    let (values, mask) = matrix.parts_mut();
    let mut grown = 0;
    ndarray::Zip::from(values)
        .and(mask)
        .and(avg_grad)
        .for_each(|w, m, &g| {
            if g.abs() > thres && !*m {
                *m = true;
                grown += 1;
            }
            if *m {
                *w += learning_rate * g;
            }
        });
    Ok(grown)
}

/// Magnitude-based pruning on one matrix.
///
/// Removes the bottom `β` fraction of the active weights: with
/// `k = ceil(β·nnz)`, every active weight strictly smaller in magnitude than
/// the `(k+1)`-th smallest active magnitude is pruned (all of them when
/// `k = nnz`). Ties at the threshold survive. Returns the number pruned.
pub fn prune(matrix: &mut MaskedMatrix, pruning_ratio: f64) -> Result<usize> {
    check_ratio("pruning ratio", pruning_ratio)?;
    let mut active: Vec<f64> = matrix
        .values()
        .iter()
        .zip(matrix.mask().iter())
        .filter_map(|(w, &m)| m.then_some(w.abs()))
        .collect();
    let nnz = active.len();
    if nnz == 0 {
        return Ok(0);
    }
    let k = ceil_count(pruning_ratio, nnz).min(nnz);
    let thres = if k == nnz {
        f64::INFINITY
    } else {
        *active.select_nth_unstable_by(k, f64::total_cmp).1
    };
    let (values, mask) = matrix.parts_mut();
    let mut pruned = 0;
    ndarray::Zip::from(values).and(mask).for_each(|w, m| {
        if *m && w.abs() < thres {
            *m = false;
            *w = 0.0;
            pruned += 1;
        }
    });
    Ok(pruned)
}

/// Prunes every prunable matrix of `model` at ratio `β`; returns the total
/// number of connections removed.
pub fn prune_model(model: &mut Model, pruning_ratio: f64) -> Result<usize> {
    let prunable = model.prunable();
    let mut total = 0;
    for (matrix, p) in model.matrices_mut().into_iter().zip(prunable) {
        if p {
            total += prune(matrix, pruning_ratio)?;
        }
    }
    Ok(total)
}
