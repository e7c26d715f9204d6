//! Little-endian binary checkpoint format.
//!
//! ```text
//! "MBSCKPT1"                               8 bytes
//! version                                  u32 (= 1)
//! vocab_size context_k embed_dim
//!   hidden_dim n_hidden_layers             5 × u32
//! seed train_steps corpus_fingerprint      3 × u64
//! embedding                                matrix
//! per linear layer: weights, bias          matrix (out × in), matrix (1 × out)
//! ```
//!
//! A matrix is `u32 rows, u32 cols` followed by `rows·cols` row-major `f32`.
//! Quantized checkpoints append a grid section:
//!
//! ```text
//! "MBSQNT1"                                7 bytes
//! per linear layer: bits, group_size       2 × u32
//!   scales, zero_points                    2 × (out · ceil(in/group_size)) f32
//! ```

use std::path::Path;

use super::{Linear, Metadata, ModelCheckpoint, ModelConfig};
use crate::error::{MbsError, Result};
use crate::linalg::Matrix;
use crate::quantize::QuantGrid;

const MAGIC: &[u8; 8] = b"MBSCKPT1";
const QUANT_MAGIC: &[u8; 7] = b"MBSQNT1";
const VERSION: u32 = 1;

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: usize) {
        let v = u32::try_from(v).expect("dimension fits in u32");
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn f32s(&mut self, vs: &[f32]) {
        for v in vs {
            self.0.extend_from_slice(&v.to_le_bytes());
        }
    }

    fn matrix(&mut self, rows: usize, cols: usize, data: &[f32]) {
        self.u32(rows);
        self.u32(cols);
        self.f32s(data);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, section: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(MbsError::Truncated(section.to_string()));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self, section: &str) -> Result<usize> {
        let b = self.take(4, section)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    }

    fn u64(&mut self, section: &str) -> Result<u64> {
        let b = self.take(8, section)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    fn f32s(&mut self, n: usize, section: &str) -> Result<Vec<f32>> {
        let bytes = n
            .checked_mul(4)
            .ok_or_else(|| MbsError::Checkpoint(format!("{section} is too large")))?;
        let b = self.take(bytes, section)?;
        Ok(b.chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }

    fn matrix(&mut self, expected: (usize, usize), section: &str) -> Result<Matrix<f32>> {
        let rows = self.u32(section)?;
        let cols = self.u32(section)?;
        if (rows, cols) != expected {
            return Err(MbsError::Checkpoint(format!(
                "{section} is {rows}×{cols}, expected {}×{}",
                expected.0, expected.1
            )));
        }
        Ok(Matrix::from_vec(
            rows,
            cols,
            self.f32s(rows * cols, section)?,
        ))
    }

    fn remaining(&self) -> &'a [u8] {
        &self.buf[self.pos..]
    }
}

pub(crate) fn encode(ckpt: &ModelCheckpoint) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u32(VERSION as usize);
    let c = &ckpt.config;
    for v in [
        c.vocab_size,
        c.context_k,
        c.embed_dim,
        c.hidden_dim,
        c.n_hidden_layers,
    ] {
        w.u32(v);
    }
    w.u64(ckpt.metadata.seed);
    w.u64(ckpt.metadata.train_steps);
    w.u64(ckpt.metadata.corpus_fingerprint);
    w.matrix(
        ckpt.embedding.rows(),
        ckpt.embedding.cols(),
        ckpt.embedding.as_slice(),
    );
    for l in &ckpt.layers {
        w.matrix(l.weights.rows(), l.weights.cols(), l.weights.as_slice());
        w.matrix(1, l.bias.len(), &l.bias);
    }
    w.0
}

fn encode_grids(ckpt: &ModelCheckpoint, grids: &[QuantGrid]) -> Result<Vec<u8>> {
    if grids.len() != ckpt.layers.len() {
        return Err(MbsError::Checkpoint(format!(
            "{} grids for {} layers",
            grids.len(),
            ckpt.layers.len()
        )));
    }
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(QUANT_MAGIC);
    for (i, (g, l)) in grids.iter().zip(&ckpt.layers).enumerate() {
        if g.rows != l.out_dim() || g.n_groups() != l.in_dim().div_ceil(g.group_size) {
            return Err(MbsError::Checkpoint(format!(
                "grid {i} does not match layer shape"
            )));
        }
        w.u32(g.bits as usize);
        w.u32(g.group_size);
        w.f32s(&g.scales);
        w.f32s(&g.zero_points);
    }
    Ok(w.0)
}

fn decode_body<'a>(r: &mut Reader<'a>) -> Result<ModelCheckpoint> {
    let magic = r
        .take(8, "header")
        .map_err(|_| MbsError::BadMagic("file is shorter than the magic".into()))?;
    if magic != MAGIC {
        return Err(MbsError::BadMagic(format!(
            "expected magic {:?}",
            String::from_utf8_lossy(MAGIC)
        )));
    }
    let version = r.u32("version")?;
    if version != VERSION as usize {
        return Err(MbsError::BadMagic(format!("unsupported version {version}")));
    }
    let mut dims = [0usize; 5];
    for d in dims.iter_mut() {
        *d = r.u32("config")?;
    }
    let config = ModelConfig {
        vocab_size: dims[0],
        context_k: dims[1],
        embed_dim: dims[2],
        hidden_dim: dims[3],
        n_hidden_layers: dims[4],
    };
    config
        .validate()
        .map_err(|e| MbsError::Checkpoint(e.to_string()))?;
    let metadata = Metadata {
        seed: r.u64("metadata")?,
        train_steps: r.u64("metadata")?,
        corpus_fingerprint: r.u64("metadata")?,
    };
    let embedding = r.matrix((config.vocab_size, config.embed_dim), "embedding")?;
    let mut layers = Vec::with_capacity(config.n_linear());
    for (i, (out, inp)) in config.layer_shapes().into_iter().enumerate() {
        let weights = r.matrix((out, inp), &format!("layer {i} weights"))?;
        let bias = r.matrix((1, out), &format!("layer {i} bias"))?.into_vec();
        layers.push(Linear { weights, bias });
    }
    let ckpt = ModelCheckpoint {
        config,
        embedding,
        layers,
        metadata,
    };
    ckpt.validate()?;
    Ok(ckpt)
}

fn decode_grids(r: &mut Reader<'_>, ckpt: &ModelCheckpoint) -> Result<Vec<QuantGrid>> {
    let mut grids = Vec::with_capacity(ckpt.layers.len());
    for (i, l) in ckpt.layers.iter().enumerate() {
        let section = format!("grid {i}");
        let bits = r.u32(&section)?;
        let group_size = r.u32(&section)?;
        if !(2..=16).contains(&bits) || group_size == 0 {
            return Err(MbsError::Checkpoint(format!(
                "{section}: bits {bits}, group size {group_size}"
            )));
        }
        let n = l.out_dim() * l.in_dim().div_ceil(group_size);
        let scales = r.f32s(n, &format!("{section} scales"))?;
        let zero_points = r.f32s(n, &format!("{section} zero points"))?;
        grids.push(QuantGrid {
            bits: bits as u32,
            group_size,
            rows: l.out_dim(),
            scales,
            zero_points,
        });
    }
    Ok(grids)
}

/// A checkpoint, plus the quantization grids when the file carries them.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedCheckpoint {
    pub checkpoint: ModelCheckpoint,
    pub grids: Option<Vec<QuantGrid>>,
}

pub(crate) fn decode(bytes: &[u8]) -> Result<LoadedCheckpoint> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let checkpoint = decode_body(&mut r)?;
    let rest = r.remaining();
    if rest.is_empty() {
        return Ok(LoadedCheckpoint {
            checkpoint,
            grids: None,
        });
    }
    if rest.len() < QUANT_MAGIC.len() || &rest[..QUANT_MAGIC.len()] != QUANT_MAGIC {
        return Err(MbsError::Checkpoint(
            "trailing bytes after the last layer".into(),
        ));
    }
    r.take(QUANT_MAGIC.len(), "grid header")?;
    let grids = decode_grids(&mut r, &checkpoint)?;
    if !r.remaining().is_empty() {
        return Err(MbsError::Checkpoint(
            "trailing bytes after the grid section".into(),
        ));
    }
    Ok(LoadedCheckpoint {
        checkpoint,
        grids: Some(grids),
    })
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| MbsError::io(path, e))
}

pub fn save_checkpoint(ckpt: &ModelCheckpoint, path: impl AsRef<Path>) -> Result<()> {
    ckpt.validate()?;
    write(path.as_ref(), &encode(ckpt))
}

pub fn save_quantized(
    ckpt: &ModelCheckpoint,
    grids: &[QuantGrid],
    path: impl AsRef<Path>,
) -> Result<()> {
    ckpt.validate()?;
    let mut bytes = encode(ckpt);
    bytes.extend(encode_grids(ckpt, grids)?);
    write(path.as_ref(), &bytes)
}

/// Reads either kind of checkpoint file.
pub fn load_any(path: impl AsRef<Path>) -> Result<LoadedCheckpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| MbsError::io(path, e))?;
    decode(&bytes)
}

/// Reads the model part of a checkpoint; a trailing grid section is ignored.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelCheckpoint> {
    Ok(load_any(path)?.checkpoint)
}

pub fn load_quantized(path: impl AsRef<Path>) -> Result<(ModelCheckpoint, Vec<QuantGrid>)> {
    let loaded = load_any(path)?;
    match loaded.grids {
        Some(g) => Ok((loaded.checkpoint, g)),
        None => Err(MbsError::Truncated("grid section (\"MBSQNT1\")".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelCheckpoint {
        let cfg = ModelConfig {
            vocab_size: 256,
            context_k: 2,
            embed_dim: 3,
            hidden_dim: 5,
            n_hidden_layers: 2,
        };
        let mut c = ModelCheckpoint::init(cfg, 4).unwrap();
        c.metadata.train_steps = 17;
        c.metadata.corpus_fingerprint = 0xdead_beef;
        c
    }

    #[test]
    fn header_layout() {
        let bytes = encode(&tiny());
        assert_eq!(&bytes[..8], b"MBSCKPT1");
        assert_eq!(&bytes[8..12], &1u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &256u32.to_le_bytes());
        assert_eq!(&bytes[24..28], &5u32.to_le_bytes());
        // metadata seed at 32..40, embedding header at 56
        assert_eq!(&bytes[32..40], &4u64.to_le_bytes());
        assert_eq!(&bytes[56..60], &256u32.to_le_bytes());
        assert_eq!(&bytes[60..64], &3u32.to_le_bytes());
        let expected_len = 56
            + (8 + 256 * 3 * 4)
            + (8 + 5 * 6 * 4)
            + (8 + 5 * 4)
            + (8 + 5 * 5 * 4)
            + (8 + 5 * 4)
            + (8 + 256 * 5 * 4)
            + (8 + 256 * 4);
        assert_eq!(bytes.len(), expected_len);
    }

    #[test]
    fn round_trip_through_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        let c = tiny();
        save_checkpoint(&c, &p).unwrap();
        assert_eq!(load_checkpoint(&p).unwrap(), c);
        assert!(load_quantized(&p).is_err());
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let mut bytes = encode(&tiny());
        let good = bytes.clone();
        bytes[0] = b'X';
        let err = decode(&bytes).unwrap_err();
        assert!(err.to_string().contains("unrecognized checkpoint"), "{err}");

        let cut = &good[..good.len() - 10];
        let err = decode(cut).unwrap_err().to_string();
        assert!(err.contains("missing layer 2 bias"), "{err}");
        let err = decode(&good[..40]).unwrap_err().to_string();
        assert!(err.contains("missing metadata"), "{err}");
        let err = decode(&good[..70]).unwrap_err().to_string();
        assert!(err.contains("missing embedding"), "{err}");

        let mut extra = good.clone();
        extra.push(0);
        assert!(decode(&extra).is_err());
    }

    #[test]
    fn rejects_broken_shape_chain() {
        let mut bytes = encode(&tiny());
        // hidden_dim field (offset 24) no longer matches the stored layers
        bytes[24..28].copy_from_slice(&6u32.to_le_bytes());
        assert!(matches!(decode(&bytes), Err(MbsError::Checkpoint(_))));
    }
}
