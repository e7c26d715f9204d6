//! Language similarity from embedding-output activation norms.
//!
//! Each language gets a profile `‖X_j‖₂` over the input features of the first
//! linear layer. Pairs of profiles are compared by the angle between them (in
//! degrees), and the resulting distance matrix can be embedded in the plane
//! with classical MDS.

use std::io::Read;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::corpus::Segment;
use crate::error::{MbsError, Result};
use crate::hessian::column_norms;
use crate::linalg::Matrix;
use crate::model::{LayerCapture, ModelCheckpoint};

#[derive(Debug, Clone, PartialEq)]
pub struct ActivationProfile {
    pub lang_id: String,
    pub norms: Vec<f64>,
    pub n_positions: usize,
}

impl ActivationProfile {
    pub fn from_capture(lang_id: impl Into<String>, capture: &LayerCapture) -> Result<Self> {
        Ok(Self {
            lang_id: lang_id.into(),
            norms: column_norms(capture)?,
            n_positions: capture.n_samples(),
        })
    }
}

/// Per-feature norms of the embedding output over every context window.
pub fn build_profile(
    ckpt: &ModelCheckpoint,
    lang: &str,
    segments: &[Segment],
) -> Result<ActivationProfile> {
    if segments.is_empty() {
        return Err(MbsError::InvalidArgument(format!(
            "no segments for \"{lang}\""
        )));
    }
    let cap = ckpt
        .capture_layer(segments, 0)
        .map_err(|e| e.in_language(lang))?;
    ActivationProfile::from_capture(lang, &cap)
}

/// Angle between the two norm vectors, `arccos(cos(p, q))`, in degrees.
pub fn angle_degrees(p: &ActivationProfile, q: &ActivationProfile) -> Result<f64> {
    if p.norms.len() != q.norms.len() {
        return Err(MbsError::Shape(format!(
            "profiles of \"{}\" ({}) and \"{}\" ({}) differ in length",
            p.lang_id,
            p.norms.len(),
            q.lang_id,
            q.norms.len()
        )));
    }
    let np = p.norms.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nq = q.norms.iter().map(|a| a * a).sum::<f64>().sqrt();
    for (n, lang) in [(np, &p.lang_id), (nq, &q.lang_id)] {
        if !(n > 0.0 && n.is_finite()) {
            return Err(MbsError::Numerical(format!(
                "profile of \"{lang}\" has norm {n}"
            )));
        }
    }
    // 2·atan2(‖u − v‖, ‖u + v‖) on unit vectors equals arccos(u·v) but stays
    // accurate near 0° and 180°
    let (mut diff, mut sum) = (0.0f64, 0.0f64);
    for (a, b) in p.norms.iter().zip(&q.norms) {
        let (u, v) = (a / np, b / nq);
        diff += (u - v) * (u - v);
        sum += (u + v) * (u + v);
    }
    Ok((2.0 * diff.sqrt().atan2(sum.sqrt()))
        .to_degrees()
        .clamp(0.0, 180.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    pub langs: Vec<String>,
    /// `L × L`, in degrees.
    pub degrees: Matrix<f64>,
}

/// Bundled reference matrices.
pub mod fixtures {
    pub const DIST_7B1: &str = include_str!("../fixtures/dist7b1.csv");
    pub const DIST_560M: &str = include_str!("../fixtures/dist560m.csv");
    /// `lang,average` rows reported alongside each matrix.
    pub const DIST_7B1_AVERAGES: &str = include_str!("../fixtures/dist7b1_avg.csv");
    pub const DIST_560M_AVERAGES: &str = include_str!("../fixtures/dist560m_avg.csv");
}

impl DistanceMatrix {
    /// Pairwise angles; the diagonal is exactly zero and `(j, i)` copies `(i, j)`.
    pub fn from_profiles(profiles: &[ActivationProfile]) -> Result<Self> {
        if profiles.len() < 2 {
            return Err(MbsError::InvalidArgument(
                "a distance matrix needs at least 2 profiles".into(),
            ));
        }
        let l = profiles.len();
        let mut degrees = Matrix::zeros(l, l);
        for i in 0..l {
            for j in i + 1..l {
                let a = angle_degrees(&profiles[i], &profiles[j])?;
                degrees[(i, j)] = a;
                degrees[(j, i)] = a;
            }
        }
        let m = Self {
            langs: profiles.iter().map(|p| p.lang_id.clone()).collect(),
            degrees,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn len(&self) -> usize {
        self.langs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.langs.is_empty()
    }

    pub fn index_of(&self, lang: &str) -> Result<usize> {
        self.langs
            .iter()
            .position(|l| l == lang)
            .ok_or_else(|| MbsError::UnknownLanguage(lang.to_string()))
    }

    pub fn get(&self, a: &str, b: &str) -> Result<f64> {
        Ok(self.degrees[(self.index_of(a)?, self.index_of(b)?)])
    }

    /// Symmetric, zero diagonal, entries in `[0, 180]`.
    pub fn validate(&self) -> Result<()> {
        let l = self.len();
        if self.degrees.shape() != (l, l) {
            return Err(MbsError::Shape(format!(
                "{l} languages but a {:?} matrix",
                self.degrees.shape()
            )));
        }
        for i in 0..l {
            if self.degrees[(i, i)] != 0.0 {
                return Err(MbsError::InvalidArgument(format!(
                    "nonzero self-distance for \"{}\"",
                    self.langs[i]
                )));
            }
            for j in 0..l {
                let v = self.degrees[(i, j)];
                if !(0.0..=180.0).contains(&v) || v != self.degrees[(j, i)] {
                    return Err(MbsError::InvalidArgument(format!(
                        "entry ({}, {}) = {v} breaks symmetry or range",
                        self.langs[i], self.langs[j]
                    )));
                }
            }
        }
        Ok(())
    }

    /// Header `lang,<ids…>`, then one `id,values…` row per language.
    pub fn from_csv_reader(reader: impl Read) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let header = rdr.headers()?.clone();
        let langs: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        let mut values = Vec::with_capacity(langs.len() * langs.len());
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            if rec.get(0) != langs.get(i).map(String::as_str) || rec.len() != langs.len() + 1 {
                return Err(MbsError::InvalidArgument(format!(
                    "distance CSV row {} is malformed",
                    i + 1
                )));
            }
            for cell in rec.iter().skip(1) {
                values.push(cell.trim().parse::<f64>().map_err(|e| {
                    MbsError::InvalidArgument(format!("distance CSV value \"{cell}\": {e}"))
                })?);
            }
        }
        if values.len() != langs.len() * langs.len() {
            return Err(MbsError::InvalidArgument(
                "distance CSV is not square".into(),
            ));
        }
        let m = Self {
            degrees: Matrix::from_vec(langs.len(), langs.len(), values),
            langs,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::fs::File::open(path.as_ref()).map_err(|e| MbsError::io(path.as_ref(), e))?;
        Self::from_csv_reader(f)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path.as_ref())?;
        w.write_record(std::iter::once("lang").chain(self.langs.iter().map(String::as_str)))?;
        for (i, lang) in self.langs.iter().enumerate() {
            let row = self.degrees.row(i).iter().map(|v| v.to_string());
            w.write_record(std::iter::once(lang.clone()).chain(row))?;
        }
        w.flush().map_err(|e| MbsError::io(path.as_ref(), e))
    }
}

/// Parses a bundled `lang,average` table.
pub fn parse_averages(text: &str) -> Result<Vec<(String, f64)>> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let value = rec
            .get(1)
            .and_then(|v| v.parse::<f64>().ok())
            .ok_or_else(|| MbsError::InvalidArgument(format!("bad average row {rec:?}")))?;
        out.push((rec.get(0).unwrap_or_default().to_string(), value));
    }
    Ok(out)
}

/// Row mean including the zero self-distance (row sum divided by `L`).
pub fn average_distance(d: &DistanceMatrix, lang: &str) -> Result<f64> {
    let i = d.index_of(lang)?;
    Ok(d.degrees.row(i).iter().sum::<f64>() / d.len() as f64)
}

/// Classical (Torgerson) MDS: eigenvectors of `B = −½·J·D²·J` scaled by
/// `sqrt(max(λ, 0))` for the `dim` largest eigenvalues. Each axis is flipped so
/// its first non-negligible coordinate is positive.
pub fn mds_embed(d: &DistanceMatrix, dim: usize) -> Result<Matrix<f64>> {
    let l = d.len();
    if dim == 0 || l < dim + 1 {
        return Err(MbsError::InvalidArgument(format!(
            "MDS into {dim} dimensions needs at least {} languages, got {l}",
            dim + 1
        )));
    }
    let sq = DMatrix::from_fn(l, l, |i, j| d.degrees[(i, j)] * d.degrees[(i, j)]);
    let row_means: Vec<f64> = (0..l).map(|i| sq.row(i).sum() / l as f64).collect();
    let grand = row_means.iter().sum::<f64>() / l as f64;
    let b = DMatrix::from_fn(l, l, |i, j| {
        -0.5 * (sq[(i, j)] - row_means[i] - row_means[j] + grand)
    });
    if !b.iter().all(|v| v.is_finite()) {
        return Err(MbsError::Numerical(
            "MDS input has non-finite distances".into(),
        ));
    }
    let eig = SymmetricEigen::try_new(b, f64::EPSILON, 10_000)
        .ok_or_else(|| MbsError::Numerical("MDS eigen-decomposition did not converge".into()))?;
    let mut order: Vec<usize> = (0..l).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .total_cmp(&eig.eigenvalues[a])
            .then(a.cmp(&b))
    });

    let mut out = Matrix::zeros(l, dim);
    for (axis, &k) in order[..dim].iter().enumerate() {
        let scale = eig.eigenvalues[k].max(0.0).sqrt();
        let col: Vec<f64> = (0..l).map(|i| eig.eigenvectors[(i, k)] * scale).collect();
        let biggest = col.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let sign = col
            .iter()
            .find(|v| v.abs() > 1e-9 * biggest)
            .map_or(1.0, |v| v.signum());
        for (i, v) in col.into_iter().enumerate() {
            out[(i, axis)] = sign * v;
        }
    }
    Ok(out)
}

/// `lang,x1,…` CSV of MDS coordinates.
pub fn write_mds_csv(langs: &[String], coords: &Matrix<f64>, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    let header: Vec<String> = std::iter::once("lang".to_string())
        .chain((1..=coords.cols()).map(|k| format!("x{k}")))
        .collect();
    w.write_record(&header)?;
    for (i, lang) in langs.iter().enumerate() {
        w.write_record(
            std::iter::once(lang.clone()).chain(coords.row(i).iter().map(|v| v.to_string())),
        )?;
    }
    w.flush().map_err(|e| MbsError::io(path.as_ref(), e))
}
