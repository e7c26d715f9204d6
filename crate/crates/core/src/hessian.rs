//! Per-layer Hessian proxies `H = X·Xᵀ` and their dampened inverses.
//!
//! Inputs are columns of `X`, so `H` is `in_dim × in_dim`. The constant factor
//! of the layer-wise squared error (`2·X·Xᵀ`) is dropped: every consumer
//! (saliency ranking, compensation updates) is invariant to positive scaling.

use std::ops::Range;
use std::path::Path;

use indexmap::IndexMap;

use crate::error::{MbsError, Result};
use crate::linalg::{cholesky_lower, inverse_from_cholesky, Matrix};
use crate::model::LayerCapture;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerHessian {
    pub layer_index: usize,
    pub matrix: Matrix<f64>,
    pub n_samples: usize,
    /// Per-language parts in accumulation order; they sum to `matrix`.
    pub per_language: Option<IndexMap<String, Matrix<f64>>>,
}

impl LayerHessian {
    pub fn dim(&self) -> usize {
        self.matrix.rows()
    }

    pub fn without_parts(mut self) -> Self {
        self.per_language = None;
        self
    }

    pub fn from_matrix(layer_index: usize, matrix: Matrix<f64>, n_samples: usize) -> Self {
        Self {
            layer_index,
            matrix,
            n_samples,
            per_language: None,
        }
    }

    /// Writes the matrix as CSV, one row per line.
    pub fn dump_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path.as_ref())?;
        for r in 0..self.dim() {
            w.write_record(self.matrix.row(r).iter().map(|v| format!("{v:e}")))?;
        }
        w.flush().map_err(|e| MbsError::io(path.as_ref(), e))
    }
}

/// `Σ x·xᵀ` over the samples in `rows`, accumulated in f64 in sample order.
fn outer_sum(capture: &LayerCapture, rows: Range<usize>) -> Matrix<f64> {
    let d = capture.in_dim();
    let mut h = Matrix::zeros(d, d);
    let mut x = vec![0.0f64; d];
    for s in rows {
        for (xi, &v) in x.iter_mut().zip(capture.sample(s)) {
            *xi = f64::from(v);
        }
        for i in 0..d {
            let xi = x[i];
            if xi == 0.0 {
                continue;
            }
            let row = &mut h.row_mut(i)[i..];
            for (hij, &xj) in row.iter_mut().zip(&x[i..]) {
                *hij += xi * xj;
            }
        }
    }
    for i in 0..d {
        for j in 0..i {
            h[(i, j)] = h[(j, i)];
        }
    }
    h
}

/// Hessian of one language's capture; the result carries itself as that
/// language's part.
pub fn accumulate(capture: &LayerCapture, lang: &str) -> Result<LayerHessian> {
    if capture.n_samples() == 0 {
        return Err(MbsError::InvalidArgument("capture has no samples".into()));
    }
    let m = outer_sum(capture, 0..capture.n_samples());
    let mut parts = IndexMap::new();
    parts.insert(lang.to_string(), m.clone());
    Ok(LayerHessian {
        layer_index: capture.layer_index,
        matrix: m,
        n_samples: capture.n_samples(),
        per_language: Some(parts),
    })
}

/// Joint Hessian of a capture whose consecutive sample ranges belong to
/// different languages. Each range is accumulated on its own and the parts
/// are summed in the given order, which makes the result identical to
/// merging separately accumulated per-language Hessians.
pub fn accumulate_grouped(
    capture: &LayerCapture,
    groups: &[(String, Range<usize>)],
) -> Result<LayerHessian> {
    let mut covered = 0;
    let mut parts = Vec::with_capacity(groups.len());
    for (lang, range) in groups {
        if range.start != covered || range.end > capture.n_samples() || range.is_empty() {
            return Err(MbsError::InvalidArgument(format!(
                "language ranges must tile the capture; \"{lang}\" has {range:?}"
            )));
        }
        covered = range.end;
        let m = outer_sum(capture, range.clone());
        parts.push(LayerHessian {
            layer_index: capture.layer_index,
            matrix: m.clone(),
            n_samples: range.len(),
            per_language: Some(IndexMap::from([(lang.clone(), m)])),
        });
    }
    if covered != capture.n_samples() {
        return Err(MbsError::InvalidArgument(
            "language ranges do not cover the capture".into(),
        ));
    }
    merge(&parts)
}

/// Elementwise sum in the order given; per-language maps are united (parts of
/// the same language add up).
pub fn merge(parts: &[LayerHessian]) -> Result<LayerHessian> {
    let first = parts
        .first()
        .ok_or_else(|| MbsError::InvalidArgument("merge needs at least one Hessian".into()))?;
    let mut out = first.clone();
    for p in &parts[1..] {
        if p.layer_index != out.layer_index || p.dim() != out.dim() {
            return Err(MbsError::Shape(format!(
                "cannot merge layer {} ({}×{0}) into layer {} ({}×{2})",
                p.layer_index,
                p.dim(),
                out.layer_index,
                out.dim()
            )));
        }
        out.matrix.add_assign(&p.matrix);
        out.n_samples += p.n_samples;
        out.per_language = match (out.per_language.take(), &p.per_language) {
            (Some(mut acc), Some(theirs)) => {
                for (lang, m) in theirs {
                    match acc.get_mut(lang) {
                        Some(existing) => existing.add_assign(m),
                        None => {
                            acc.insert(lang.clone(), m.clone());
                        }
                    }
                }
                Some(acc)
            }
            _ => None,
        };
    }
    Ok(out)
}

/// Per-feature activation norms `‖X_j‖₂ = sqrt(Σ_s x_{s,j}²)`.
pub fn column_norms(capture: &LayerCapture) -> Result<Vec<f64>> {
    if capture.n_samples() == 0 {
        return Err(MbsError::InvalidArgument("capture has no samples".into()));
    }
    let mut acc = vec![0.0f64; capture.in_dim()];
    for s in 0..capture.n_samples() {
        for (a, &v) in acc.iter_mut().zip(capture.sample(s)) {
            let v = f64::from(v);
            *a += v * v;
        }
    }
    Ok(acc.into_iter().map(f64::sqrt).collect())
}

/// `(H + λI)⁻¹` in Cholesky form.
#[derive(Debug, Clone, PartialEq)]
pub struct DampenedInverse {
    pub layer_index: usize,
    /// Dampening actually applied (after any escalation).
    pub lambda: f64,
    /// Lower-triangular `L` with `(H + λI)⁻¹ = L·Lᵀ`.
    pub cholesky_of_inverse: Matrix<f64>,
    /// `diag((H + λI)⁻¹)`.
    pub inverse_diagonal: Vec<f64>,
    upper: Matrix<f64>,
}

impl DampenedInverse {
    pub fn dim(&self) -> usize {
        self.upper.rows()
    }

    /// `U = Lᵀ`. Row `j` restricted to columns `j..` scaled by `1/U_jj` is the
    /// optimal update of columns `j..` when weight `j` changes and columns
    /// before `j` are held fixed; `U_jj²` is the matching inverse-diagonal.
    pub fn upper(&self) -> &Matrix<f64> {
        &self.upper
    }

    /// Inverse of the trailing principal block `H[start.., start..]`, i.e.
    /// `U[start.., start..]ᵀ · U[start.., start..]`.
    pub fn trailing_inverse(&self, start: usize) -> Matrix<f64> {
        let n = self.dim() - start;
        let mut out = Matrix::zeros(n, n);
        for r in 0..n {
            for c in r..n {
                let mut s = 0.0;
                for k in 0..=r {
                    s += self.upper[(start + k, start + r)] * self.upper[(start + k, start + c)];
                }
                out[(r, c)] = s;
                out[(c, r)] = s;
            }
        }
        out
    }

    pub fn inverse(&self) -> Matrix<f64> {
        self.trailing_inverse(0)
    }

    pub fn dump_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path.as_ref())?;
        w.write_record(["index", "inverse_diagonal"])?;
        for (i, v) in self.inverse_diagonal.iter().enumerate() {
            w.write_record([i.to_string(), format!("{v:e}")])?;
        }
        w.flush().map_err(|e| MbsError::io(path.as_ref(), e))
    }
}

pub const DEFAULT_LAMBDA_REL: f64 = 0.01;
const MAX_ESCALATIONS: usize = 10;

/// Factorizes `H + λI` with `λ = lambda_rel · mean(diag H)`.
///
/// If the factorization fails, λ is doubled up to ten times; a zero λ is first
/// raised to `1e-6 · mean(diag H)` (or `1e-6` for an all-zero diagonal).
pub fn dampen_invert(h: &LayerHessian, lambda_rel: f64) -> Result<DampenedInverse> {
    if !(lambda_rel.is_finite() && lambda_rel >= 0.0) {
        return Err(MbsError::InvalidArgument(format!(
            "lambda_rel must be ≥ 0, got {lambda_rel}"
        )));
    }
    if !h.matrix.is_finite() {
        return Err(MbsError::Numerical(format!(
            "layer {} Hessian has NaN/Inf entries",
            h.layer_index
        )));
    }
    let d = h.dim();
    let diag = h.matrix.diagonal();
    let mean_diag = if d == 0 {
        0.0
    } else {
        diag.iter().sum::<f64>() / d as f64
    };
    let mut lambda = lambda_rel * mean_diag;

    for attempt in 0..=MAX_ESCALATIONS {
        let mut damped = h.matrix.clone();
        for i in 0..d {
            damped[(i, i)] += lambda;
        }
        let factored = cholesky_lower(&damped)
            .map(|l| inverse_from_cholesky(&l))
            .and_then(|inv| cholesky_lower(&inv));
        if let Some(l) = factored {
            let upper = l.transpose();
            let inverse_diagonal: Vec<f64> = (0..d)
                .map(|j| l.row(j)[..=j].iter().map(|v| v * v).sum())
                .collect();
            return Ok(DampenedInverse {
                layer_index: h.layer_index,
                lambda,
                cholesky_of_inverse: l,
                inverse_diagonal,
                upper,
            });
        }
        if attempt == MAX_ESCALATIONS {
            break;
        }
        lambda = if lambda > 0.0 {
            lambda * 2.0
        } else if mean_diag > 0.0 {
            1e-6 * mean_diag
        } else {
            1e-6
        };
    }
    Err(MbsError::Numerical(format!(
        "layer {}: Cholesky failed even with λ = {lambda:e}",
        h.layer_index
    )))
}
