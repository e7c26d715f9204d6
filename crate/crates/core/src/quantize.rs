//! Weight quantization with per-(row, group) asymmetric min–max grids:
//! round-to-nearest and GPTQ-style error compensation.
//!
//! A grid with `b` bits has levels `zero + scale·ℓ` for `ℓ ∈ [0, 2^b)`, with
//! `scale` and `zero` stored as f32 and the level value evaluated in f32, so
//! membership of a dequantized weight can be checked bit-exactly.

use serde::{Deserialize, Serialize};

use crate::error::{MbsError, Result};
use crate::hessian::{dampen_invert, LayerHessian, DEFAULT_LAMBDA_REL};
use crate::linalg::Matrix;
use crate::model::LayerCapture;
use crate::par;
use crate::prune::layer_error;

#[derive(Debug, Clone, PartialEq)]
pub struct QuantGrid {
    pub bits: u32,
    pub group_size: usize,
    pub rows: usize,
    /// Row-major `rows × n_groups`.
    pub scales: Vec<f32>,
    pub zero_points: Vec<f32>,
}

impl QuantGrid {
    pub fn n_groups(&self) -> usize {
        self.scales.len().checked_div(self.rows).unwrap_or(0)
    }

    pub fn n_levels(&self) -> u32 {
        1 << self.bits
    }

    /// `(scale, zero)` governing weight `(row, col)`.
    pub fn params(&self, row: usize, col: usize) -> (f32, f32) {
        let i = row * self.n_groups() + col / self.group_size;
        (self.scales[i], self.zero_points[i])
    }

    pub fn level_value(&self, row: usize, col: usize, level: u32) -> f32 {
        let (s, z) = self.params(row, col);
        dequantize(level, s, z)
    }

    /// Level index whose value is exactly `value`, if any.
    pub fn level_of(&self, row: usize, col: usize, value: f32) -> Option<u32> {
        let (s, z) = self.params(row, col);
        let (level, _) = quantize_value(f64::from(value), s, z, self.bits);
        // the arithmetic guess can be one off when levels are very close
        [level.saturating_sub(1), level, level + 1]
            .into_iter()
            .filter(|&l| l < self.n_levels())
            .find(|&l| dequantize(l, s, z).to_bits() == value.to_bits())
    }

    /// Errors unless every weight sits exactly on its grid.
    pub fn check_membership(&self, w: &Matrix<f32>) -> Result<()> {
        if w.rows() != self.rows || w.cols().div_ceil(self.group_size) != self.n_groups() {
            return Err(MbsError::Shape(format!(
                "grid {}×{} groups does not cover a {:?} matrix",
                self.rows,
                self.n_groups(),
                w.shape()
            )));
        }
        for r in 0..w.rows() {
            for c in 0..w.cols() {
                if self.level_of(r, c, w[(r, c)]).is_none() {
                    return Err(MbsError::Numerical(format!(
                        "weight ({r}, {c}) = {} is not on its grid",
                        w[(r, c)]
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantResult {
    /// Dequantized weights.
    pub new_weights: Matrix<f32>,
    pub grid: QuantGrid,
    pub layer_error: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuantOptions {
    pub bits: u32,
    pub group_size: usize,
    pub lambda_rel: f64,
    pub threads: usize,
}

impl Default for QuantOptions {
    fn default() -> Self {
        Self {
            bits: 3,
            group_size: 8,
            lambda_rel: DEFAULT_LAMBDA_REL,
            threads: 1,
        }
    }
}

impl QuantOptions {
    pub fn validate(&self) -> Result<()> {
        if !(2..=16).contains(&self.bits) {
            return Err(MbsError::InvalidArgument(format!(
                "bits must be in 2..=16, got {}",
                self.bits
            )));
        }
        if self.group_size == 0 {
            return Err(MbsError::InvalidArgument(
                "group_size must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

fn dequantize(level: u32, scale: f32, zero: f32) -> f32 {
    zero + scale * level as f32
}

/// Min–max grid over `values`: `zero = min`, `scale = (max − min)/(2^bits − 1)`,
/// or `scale = 1` when the group is constant.
pub fn fit_grid(values: &[f64], bits: u32) -> (f32, f32) {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    if values.is_empty() {
        return (1.0, 0.0);
    }
    let scale = ((hi - lo) / f64::from((1u32 << bits) - 1)) as f32;
    let scale = if scale > 0.0 && scale.is_finite() {
        scale
    } else {
        1.0
    };
    (scale, lo as f32)
}

/// Nearest level (ties to the even level index) and its value.
pub fn quantize_value(value: f64, scale: f32, zero: f32, bits: u32) -> (u32, f32) {
    let max = f64::from((1u32 << bits) - 1);
    let level = ((value - f64::from(zero)) / f64::from(scale))
        .round_ties_even()
        .clamp(0.0, max) as u32;
    (level, dequantize(level, scale, zero))
}

struct RowOut {
    q: Vec<f32>,
    scales: Vec<f32>,
    zeros: Vec<f32>,
}

fn assemble(rows: Vec<RowOut>, cols: usize, opts: &QuantOptions) -> (Matrix<f32>, QuantGrid) {
    let n = rows.len();
    let mut data = Vec::with_capacity(n * cols);
    let mut scales = Vec::new();
    let mut zero_points = Vec::new();
    for r in rows {
        data.extend(r.q);
        scales.extend(r.scales);
        zero_points.extend(r.zeros);
    }
    let grid = QuantGrid {
        bits: opts.bits,
        group_size: opts.group_size,
        rows: n,
        scales,
        zero_points,
    };
    (Matrix::from_vec(n, cols, data), grid)
}

/// Round-to-nearest on per-group grids, without a capture.
pub fn rtn_weights(w: &Matrix<f32>, opts: &QuantOptions) -> Result<(Matrix<f32>, QuantGrid)> {
    opts.validate()?;
    let (rows, cols) = w.shape();
    let out = par::map_indexed(rows, opts.threads, |r| {
        let row: Vec<f64> = w.row(r).iter().map(|&v| f64::from(v)).collect();
        let mut o = RowOut {
            q: Vec::with_capacity(cols),
            scales: Vec::new(),
            zeros: Vec::new(),
        };
        for group in row.chunks(opts.group_size) {
            let (s, z) = fit_grid(group, opts.bits);
            o.scales.push(s);
            o.zeros.push(z);
            o.q.extend(group.iter().map(|&v| quantize_value(v, s, z, opts.bits).1));
        }
        o
    });
    Ok(assemble(out, cols, opts))
}

pub fn rtn_quantize(
    w: &Matrix<f32>,
    capture: &LayerCapture,
    opts: &QuantOptions,
) -> Result<QuantResult> {
    let (new_weights, grid) = rtn_weights(w, opts)?;
    let layer_error = layer_error(w, &new_weights, capture)?;
    Ok(QuantResult {
        new_weights,
        grid,
        layer_error,
    })
}

/// GPTQ with a fixed left-to-right column order. Entering each group, its
/// grid is fit on the row's current (already compensated) weights; after
/// column `j` is rounded, its error is spread over the remaining columns with
/// `δ = −((w_j − q_j)/U_jj) · U[j, j+1..]`, `U` being the upper Cholesky
/// factor of `(H + λI)⁻¹`.
pub fn gptq_quantize(
    w: &Matrix<f32>,
    h: &LayerHessian,
    capture: &LayerCapture,
    opts: &QuantOptions,
) -> Result<QuantResult> {
    opts.validate()?;
    let (rows, d) = w.shape();
    if h.dim() != d || capture.in_dim() != d {
        return Err(MbsError::Shape(format!(
            "layer has {d} inputs, Hessian {} and capture {}",
            h.dim(),
            capture.in_dim()
        )));
    }
    let inv = dampen_invert(h, opts.lambda_rel)?;
    let u = inv.upper();
    let out = par::map_indexed(rows, opts.threads, |r| {
        let mut cur: Vec<f64> = w.row(r).iter().map(|&v| f64::from(v)).collect();
        let mut o = RowOut {
            q: vec![0.0; d],
            scales: Vec::new(),
            zeros: Vec::new(),
        };
        let mut start = 0;
        while start < d {
            let end = (start + opts.group_size).min(d);
            let (s, z) = fit_grid(&cur[start..end], opts.bits);
            o.scales.push(s);
            o.zeros.push(z);
            for j in start..end {
                let (_, qv) = quantize_value(cur[j], s, z, opts.bits);
                o.q[j] = qv;
                let err = (cur[j] - f64::from(qv)) / u[(j, j)];
                if err != 0.0 {
                    let urow = u.row(j);
                    for k in j + 1..d {
                        cur[k] -= err * urow[k];
                    }
                }
            }
            start = end;
        }
        o
    });
    let (new_weights, grid) = assemble(out, d, opts);
    let layer_error = layer_error(w, &new_weights, capture)?;
    Ok(QuantResult {
        new_weights,
        grid,
        layer_error,
    })
}
