//! Unstructured pruning of one linear layer: magnitude, Wanda and an
//! OBS/SparseGPT-style sweep with Hessian-based compensation.
//!
//! Sparsity is uniform per row: every row keeps exactly
//! `in_dim − round(sparsity · in_dim)` weights.

use std::cmp::Ordering;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{MbsError, Result};
use crate::hessian::{dampen_invert, LayerHessian, DEFAULT_LAMBDA_REL};
use crate::linalg::Matrix;
use crate::model::LayerCapture;
use crate::par;

#[derive(Debug, Clone, PartialEq)]
pub struct SparsityMask {
    pub layer_index: usize,
    /// `out × in`, `true` = kept.
    pub mask: Matrix<bool>,
    pub target_sparsity: f64,
}

impl SparsityMask {
    pub fn all_kept(layer_index: usize, rows: usize, cols: usize) -> Self {
        Self {
            layer_index,
            mask: Matrix::from_fn(rows, cols, |_, _| true),
            target_sparsity: 0.0,
        }
    }

    pub fn kept_in_row(&self, row: usize) -> usize {
        self.mask.row(row).iter().filter(|&&k| k).count()
    }

    /// Errors unless every row keeps exactly the contracted number of weights.
    pub fn check_counts(&self) -> Result<()> {
        let want = self.mask.cols() - pruned_per_row(self.target_sparsity, self.mask.cols());
        for r in 0..self.mask.rows() {
            let got = self.kept_in_row(r);
            if got != want {
                return Err(MbsError::InvalidArgument(format!(
                    "layer {} row {r} keeps {got} weights, expected {want}",
                    self.layer_index
                )));
            }
        }
        Ok(())
    }

    /// `W ⊙ M`.
    pub fn apply(&self, w: &Matrix<f32>) -> Matrix<f32> {
        Matrix::from_fn(w.rows(), w.cols(), |r, c| {
            if self.mask[(r, c)] {
                w[(r, c)]
            } else {
                0.0
            }
        })
    }

    /// 0/1 CSV, one matrix row per line.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path.as_ref())?;
        for r in 0..self.mask.rows() {
            w.write_record(self.mask.row(r).iter().map(|&k| if k { "1" } else { "0" }))?;
        }
        w.flush().map_err(|e| MbsError::io(path.as_ref(), e))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PruneResult {
    pub new_weights: Matrix<f32>,
    pub mask: SparsityMask,
    pub layer_error: f64,
}

pub fn validate_sparsity(sparsity: f64) -> Result<()> {
    if !(sparsity.is_finite() && (0.0..1.0).contains(&sparsity)) {
        return Err(MbsError::InvalidArgument(format!(
            "sparsity must satisfy 0 ≤ s < 1, got {sparsity}"
        )));
    }
    Ok(())
}

/// Weights removed from each row of width `in_dim`.
pub fn pruned_per_row(sparsity: f64, in_dim: usize) -> usize {
    (sparsity * in_dim as f64).round() as usize
}

/// Keeps the `keep` highest-scoring entries of every row; equal scores favour
/// the lower column index.
fn top_k_mask(scores: &Matrix<f64>, sparsity: f64) -> Result<SparsityMask> {
    validate_sparsity(sparsity)?;
    if scores.as_slice().iter().any(|s| s.is_nan()) {
        return Err(MbsError::Numerical("pruning scores contain NaN".into()));
    }
    let (rows, cols) = scores.shape();
    let keep = cols - pruned_per_row(sparsity, cols);
    let mut mask = Matrix::zeros(rows, cols);
    let mut order: Vec<usize> = (0..cols).collect();
    for r in 0..rows {
        let s = scores.row(r);
        order.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));
        for &c in &order[..keep] {
            mask[(r, c)] = true;
        }
    }
    Ok(SparsityMask {
        layer_index: 0,
        mask,
        target_sparsity: sparsity,
    })
}

/// Keeps the largest `|w|` of every row.
pub fn magnitude_prune(w: &Matrix<f32>, sparsity: f64) -> Result<SparsityMask> {
    top_k_mask(&w.map(|v| f64::from(v).abs()), sparsity)
}

/// `S_ij = |W_ij| · ‖X_j‖₂`.
pub fn wanda_metric(w: &Matrix<f32>, col_norms: &[f64]) -> Result<Matrix<f64>> {
    if col_norms.len() != w.cols() {
        return Err(MbsError::Shape(format!(
            "{} column norms for a layer with {} inputs",
            col_norms.len(),
            w.cols()
        )));
    }
    Ok(Matrix::from_fn(w.rows(), w.cols(), |r, c| {
        f64::from(w[(r, c)]).abs() * col_norms[c]
    }))
}

/// `S_ij = W_ij² / [H⁻¹]_jj`.
pub fn sparsegpt_metric(w: &Matrix<f32>, inverse_diagonal: &[f64]) -> Result<Matrix<f64>> {
    if inverse_diagonal.len() != w.cols() {
        return Err(MbsError::Shape(format!(
            "{} inverse-diagonal entries for a layer with {} inputs",
            inverse_diagonal.len(),
            w.cols()
        )));
    }
    if let Some((j, d)) = inverse_diagonal
        .iter()
        .enumerate()
        .find(|(_, &d)| d.is_nan() || d <= 0.0)
    {
        return Err(MbsError::Numerical(format!(
            "inverse diagonal entry {j} is {d}, must be > 0"
        )));
    }
    Ok(Matrix::from_fn(w.rows(), w.cols(), |r, c| {
        let v = f64::from(w[(r, c)]);
        v * v / inverse_diagonal[c]
    }))
}

/// `‖W_old·X − W_new·X‖²_F` over the capture's samples, in f64.
pub fn layer_error(
    w_old: &Matrix<f32>,
    w_new: &Matrix<f32>,
    capture: &LayerCapture,
) -> Result<f64> {
    if w_old.shape() != w_new.shape() || w_old.cols() != capture.in_dim() {
        return Err(MbsError::Shape(format!(
            "layer error needs matching shapes: {:?} vs {:?} with {} inputs",
            w_old.shape(),
            w_new.shape(),
            capture.in_dim()
        )));
    }
    let mut total = 0.0;
    let mut delta = vec![0.0f64; w_old.cols()];
    for r in 0..w_old.rows() {
        let mut any = false;
        for ((d, &a), &b) in delta.iter_mut().zip(w_old.row(r)).zip(w_new.row(r)) {
            *d = f64::from(a) - f64::from(b);
            any |= *d != 0.0;
        }
        if !any {
            continue;
        }
        for s in 0..capture.n_samples() {
            let y: f64 = delta
                .iter()
                .zip(capture.sample(s))
                .map(|(d, &x)| d * f64::from(x))
                .sum();
            total += y * y;
        }
    }
    Ok(total)
}

/// Wanda: top-k of `|W|·‖X_j‖` per row, no weight updates.
pub fn wanda_prune(
    w: &Matrix<f32>,
    col_norms: &[f64],
    capture: &LayerCapture,
    sparsity: f64,
) -> Result<PruneResult> {
    let mask = top_k_mask(&wanda_metric(w, col_norms)?, sparsity)?;
    let new_weights = mask.apply(w);
    let layer_error = layer_error(w, &new_weights, capture)?;
    Ok(PruneResult {
        new_weights,
        mask,
        layer_error,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObsOptions {
    pub sparsity: f64,
    pub block_size: usize,
    pub lambda_rel: f64,
    pub threads: usize,
}

impl Default for ObsOptions {
    fn default() -> Self {
        Self {
            sparsity: 0.5,
            block_size: 32,
            lambda_rel: DEFAULT_LAMBDA_REL,
            threads: 1,
        }
    }
}

/// Cumulative prune quota of a row through column `end` (exclusive).
fn cumulative_quota(total: usize, end: usize, in_dim: usize) -> usize {
    if end >= in_dim {
        total
    } else {
        total * end / in_dim
    }
}

struct RowState {
    w: Vec<f64>,
    pruned: Vec<bool>,
    degenerate: bool,
}

/// Block sweep for one row. `t` is `(H_FF)⁻¹` for `F = start..in_dim`.
fn prune_block(
    row: &mut RowState,
    t: &Matrix<f64>,
    start: usize,
    end: usize,
    quota: usize,
) -> Result<()> {
    if quota == 0 || row.degenerate {
        return Ok(());
    }
    let m = t.cols();
    let width = end - start;
    // panel[a][b] = Hinv[F_a, start + b]; only block columns are ever read.
    let mut panel: Vec<f64> = (0..m).flat_map(|a| t.row(a)[..width].to_vec()).collect();
    let w = &mut row.w[start..];
    let pruned = &mut row.pruned[start..];

    for _ in 0..quota {
        let mut best: Option<(usize, f64)> = None;
        for b in 0..width {
            if pruned[b] {
                continue;
            }
            let d = panel[b * width + b];
            if d.is_nan() || d <= 0.0 {
                return Err(MbsError::Numerical(format!(
                    "non-positive inverse diagonal {d} at column {}",
                    start + b
                )));
            }
            let score = w[b] * w[b] / d;
            // ties prune the higher index
            if best.is_none_or(|(_, s)| score.total_cmp(&s) != Ordering::Greater) {
                best = Some((b, score));
            }
        }
        let (j, _) = best.expect("quota never exceeds free block columns");
        let djj = panel[j * width + j];
        let factor = w[j] / djj;
        for a in 0..m {
            if !pruned[a] {
                w[a] -= factor * panel[a * width + j];
            }
        }
        w[j] = 0.0;
        pruned[j] = true;

        let pivot_row: Vec<f64> = panel[j * width..(j + 1) * width].to_vec();
        for a in 0..m {
            if pruned[a] {
                continue;
            }
            let coef = panel[a * width + j] / djj;
            if coef == 0.0 {
                continue;
            }
            for (b, p) in pivot_row.iter().enumerate() {
                panel[a * width + b] -= coef * p;
            }
        }
    }
    Ok(())
}

/// SparseGPT-style sweep. Columns are visited in blocks of `block_size`; the
/// row quota is spread over blocks by cumulative floor (the last block takes
/// the remainder). Inside a block each row repeatedly removes its lowest
/// `w_j² / [H_F⁻¹]_jj` weight and applies `δw = −(w_j/[H_F⁻¹]_jj)·H_F⁻¹[:, j]`
/// to every still-free column of `F` (the current and later columns), then
/// drops `j` from `F`. Columns of finished blocks are frozen.
pub fn obs_prune(
    w: &Matrix<f32>,
    h: &LayerHessian,
    capture: &LayerCapture,
    opts: &ObsOptions,
) -> Result<PruneResult> {
    validate_sparsity(opts.sparsity)?;
    let (rows, d) = w.shape();
    if h.dim() != d || capture.in_dim() != d {
        return Err(MbsError::Shape(format!(
            "layer has {d} inputs, Hessian {} and capture {}",
            h.dim(),
            capture.in_dim()
        )));
    }
    if opts.block_size == 0 {
        return Err(MbsError::InvalidArgument(
            "block_size must be at least 1".into(),
        ));
    }
    let q = pruned_per_row(opts.sparsity, d);
    if q == 0 {
        return Ok(PruneResult {
            new_weights: w.clone(),
            mask: SparsityMask {
                target_sparsity: opts.sparsity,
                ..SparsityMask::all_kept(h.layer_index, rows, d)
            },
            layer_error: 0.0,
        });
    }
    let inv = dampen_invert(h, opts.lambda_rel)?;

    let mut states: Vec<RowState> = (0..rows)
        .map(|r| {
            let row = w.row(r);
            let degenerate = row.iter().all(|&v| v == 0.0);
            RowState {
                w: row.iter().map(|&v| f64::from(v)).collect(),
                // all-zero rows keep the leftmost entries
                pruned: (0..d).map(|c| degenerate && c >= d - q).collect(),
                degenerate,
            }
        })
        .collect();

    let mut start = 0;
    while start < d {
        let end = (start + opts.block_size).min(d);
        let quota = cumulative_quota(q, end, d) - cumulative_quota(q, start, d);
        if quota > end - start {
            return Err(MbsError::InvalidArgument(format!(
                "block {start}..{end} cannot take {quota} pruned weights"
            )));
        }
        if quota > 0 {
            let t = inv.trailing_inverse(start);
            let errors = std::sync::Mutex::new(None);
            par::for_each_mut(&mut states, opts.threads, |r, st| {
                if let Err(e) = prune_block(st, &t, start, end, quota) {
                    errors.lock().expect("poisoned").get_or_insert((r, e));
                }
            });
            if let Some((r, e)) = errors.into_inner().expect("poisoned") {
                return Err(MbsError::Numerical(format!("row {r}: {e}")));
            }
        }
        start = end;
    }

    let new_weights = Matrix::from_fn(rows, d, |r, c| {
        if states[r].pruned[c] {
            0.0
        } else {
            states[r].w[c] as f32
        }
    });
    let mask = SparsityMask {
        layer_index: h.layer_index,
        mask: Matrix::from_fn(rows, d, |r, c| !states[r].pruned[c]),
        target_sparsity: opts.sparsity,
    };
    let layer_error = layer_error(w, &new_weights, capture)?;
    Ok(PruneResult {
        new_weights,
        mask,
        layer_error,
    })
}
