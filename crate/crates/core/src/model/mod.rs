//! k-gram MLP byte language model.
//!
//! The model embeds each of the previous `context_k` bytes, concatenates the
//! embeddings and runs a stack of linear layers (ReLU between them, softmax at
//! the end). Only the linear layers are touched by compression; the embedding
//! table is left alone.

mod format;
mod train;

pub use format::{
    load_any, load_checkpoint, load_quantized, save_checkpoint, save_quantized, LoadedCheckpoint,
};
pub use train::{loss_and_gradients, train, Example, Gradients, TrainOptions, TrainOutcome};

use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::corpus::{Segment, Token, VOCAB_SIZE};
use crate::error::{MbsError, Result};
use crate::linalg::Matrix;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default = "default_vocab")]
    pub vocab_size: usize,
    pub context_k: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub n_hidden_layers: usize,
}

fn default_vocab() -> usize {
    VOCAB_SIZE
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: VOCAB_SIZE,
            context_k: 8,
            embed_dim: 32,
            hidden_dim: 128,
            n_hidden_layers: 2,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size != VOCAB_SIZE {
            return Err(MbsError::InvalidArgument(format!(
                "vocab_size must be {VOCAB_SIZE}, got {}",
                self.vocab_size
            )));
        }
        for (name, v) in [
            ("context_k", self.context_k),
            ("embed_dim", self.embed_dim),
            ("hidden_dim", self.hidden_dim),
            ("n_hidden_layers", self.n_hidden_layers),
        ] {
            if v == 0 {
                return Err(MbsError::InvalidArgument(format!(
                    "{name} must be at least 1"
                )));
            }
        }
        Ok(())
    }

    /// Width of the concatenated embedding fed to the first linear layer.
    pub fn input_dim(&self) -> usize {
        self.context_k * self.embed_dim
    }

    pub fn n_linear(&self) -> usize {
        self.n_hidden_layers + 1
    }

    /// `(out, in)` of every linear layer.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::with_capacity(self.n_linear());
        let mut input = self.input_dim();
        for _ in 0..self.n_hidden_layers {
            shapes.push((self.hidden_dim, input));
            input = self.hidden_dim;
        }
        shapes.push((self.vocab_size, input));
        shapes
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// `out × in`
    pub weights: Matrix<f32>,
    pub bias: Vec<f32>,
}

impl Linear {
    pub fn in_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.rows()
    }

    fn apply(&self, x: &[f32], y: &mut [f32]) {
        for (o, out) in y.iter_mut().enumerate() {
            *out = self.bias[o] + dot(self.weights.row(o), x);
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Metadata {
    pub seed: u64,
    pub train_steps: u64,
    pub corpus_fingerprint: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckpoint {
    pub config: ModelConfig,
    /// `vocab_size × embed_dim`
    pub embedding: Matrix<f32>,
    pub layers: Vec<Linear>,
    pub metadata: Metadata,
}

impl ModelCheckpoint {
    /// Random initialization: embedding entries `N(0, 1)`, weights
    /// `U(-1/√in, 1/√in)`, zero biases.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut r = rng::keyed(seed, "init");
        let normal = Normal::new(0.0f32, 1.0).expect("valid normal");
        let embedding = Matrix::from_fn(config.vocab_size, config.embed_dim, |_, _| {
            normal.sample(&mut r)
        });
        let layers = config
            .layer_shapes()
            .into_iter()
            .map(|(out, inp)| {
                let bound = 1.0 / (inp as f32).sqrt();
                let u = Uniform::new(-bound, bound).expect("valid range");
                Linear {
                    weights: Matrix::from_fn(out, inp, |_, _| u.sample(&mut r)),
                    bias: vec![0.0; out],
                }
            })
            .collect();
        let ckpt = Self {
            config,
            embedding,
            layers,
            metadata: Metadata {
                seed,
                ..Metadata::default()
            },
        };
        ckpt.validate()?;
        Ok(ckpt)
    }

    /// Shape chain and finiteness checks.
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let c = &self.config;
        if self.embedding.shape() != (c.vocab_size, c.embed_dim) {
            return Err(MbsError::Checkpoint(format!(
                "embedding is {:?}, expected {:?}",
                self.embedding.shape(),
                (c.vocab_size, c.embed_dim)
            )));
        }
        let shapes = c.layer_shapes();
        if self.layers.len() != shapes.len() {
            return Err(MbsError::Checkpoint(format!(
                "{} linear layers, expected {}",
                self.layers.len(),
                shapes.len()
            )));
        }
        for (i, (layer, &shape)) in self.layers.iter().zip(&shapes).enumerate() {
            if layer.weights.shape() != shape || layer.bias.len() != shape.0 {
                return Err(MbsError::Checkpoint(format!(
                    "layer {i} is {:?} with bias {}, expected {shape:?}",
                    layer.weights.shape(),
                    layer.bias.len()
                )));
            }
            if !layer.weights.is_finite() || layer.bias.iter().any(|v| !v.is_finite()) {
                return Err(MbsError::Checkpoint(format!(
                    "layer {i} has non-finite entries"
                )));
            }
        }
        if !self.embedding.is_finite() {
            return Err(MbsError::Checkpoint(
                "embedding has non-finite entries".into(),
            ));
        }
        Ok(())
    }

    fn embed_into(&self, context: &[Token], out: &mut [f32]) {
        let e = self.config.embed_dim;
        for (i, &t) in context.iter().enumerate() {
            out[i * e..(i + 1) * e].copy_from_slice(self.embedding.row(usize::from(t)));
        }
    }

    fn check_context(&self, context: &[Token]) -> Result<()> {
        if context.len() != self.config.context_k {
            return Err(MbsError::Shape(format!(
                "context has {} tokens, model expects {}",
                context.len(),
                self.config.context_k
            )));
        }
        Ok(())
    }

    /// Next-token distribution for a context of exactly `context_k` tokens.
    pub fn forward(&self, context: &[Token]) -> Result<Vec<f64>> {
        self.check_context(context)?;
        let mut acts = Activations::new(&self.config);
        self.forward_into(context, &mut acts);
        Ok(softmax(acts.logits()))
    }

    fn forward_into(&self, context: &[Token], acts: &mut Activations) {
        self.embed_into(context, &mut acts.values[0]);
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let (before, after) = acts.values.split_at_mut(l + 1);
            let y = &mut after[0];
            layer.apply(&before[l], y);
            if l < last {
                for v in y.iter_mut() {
                    *v = v.max(0.0);
                }
            }
        }
    }

    /// Inputs observed by linear layer `layer` over every predicting window
    /// of every segment (segment order, then position order).
    pub fn capture_layer(&self, segments: &[Segment], layer: usize) -> Result<LayerCapture> {
        if layer >= self.layers.len() {
            return Err(MbsError::InvalidArgument(format!(
                "no linear layer {layer}"
            )));
        }
        let mut caps = self.capture_upto(segments, layer + 1)?;
        Ok(caps.pop().expect("at least one layer captured"))
    }

    /// Captures for every linear layer of this checkpoint.
    pub fn capture_inputs(&self, segments: &[Segment]) -> Result<Vec<LayerCapture>> {
        self.capture_upto(segments, self.layers.len())
    }

    fn capture_upto(&self, segments: &[Segment], n_layers: usize) -> Result<Vec<LayerCapture>> {
        if segments.is_empty() {
            return Err(MbsError::InvalidArgument("no segments to capture".into()));
        }
        let k = self.config.context_k;
        let n: usize = segments.iter().map(|s| s.len().saturating_sub(k)).sum();
        if n == 0 {
            return Err(MbsError::InvalidArgument(format!(
                "segments are too short for a context of {k} tokens"
            )));
        }
        let mut data: Vec<Vec<f32>> = self.layers[..n_layers]
            .iter()
            .map(|l| Vec::with_capacity(n * l.in_dim()))
            .collect();
        let mut acts = Activations::new(&self.config);
        for seg in segments {
            for start in 0..seg.len().saturating_sub(k) {
                self.forward_into(&seg.tokens[start..start + k], &mut acts);
                for (l, d) in data.iter_mut().enumerate() {
                    d.extend_from_slice(&acts.values[l]);
                }
            }
        }
        Ok(data
            .into_iter()
            .enumerate()
            .map(|(l, d)| LayerCapture {
                layer_index: l,
                samples: Matrix::from_vec(n, self.layers[l].in_dim(), d),
            })
            .collect())
    }

    /// `exp` of the mean negative log-likelihood over every predicted token.
    pub fn perplexity(&self, segments: &[Segment]) -> Result<f64> {
        let k = self.config.context_k;
        let mut acts = Activations::new(&self.config);
        let mut nll = 0.0f64;
        let mut count = 0usize;
        for seg in segments {
            for start in 0..seg.len().saturating_sub(k) {
                self.forward_into(&seg.tokens[start..start + k], &mut acts);
                nll -= log_softmax_at(acts.logits(), usize::from(seg.tokens[start + k]));
                count += 1;
            }
        }
        if count == 0 {
            return Err(MbsError::InvalidArgument("no predictable tokens".into()));
        }
        Ok((nll / count as f64).exp())
    }

    /// Embedding table bytes, for before/after comparisons.
    pub fn embedding_bytes(&self) -> Vec<u8> {
        self.embedding
            .as_slice()
            .iter()
            .flat_map(|v| v.to_le_bytes())
            .collect()
    }
}

/// Observed inputs of one linear layer.
///
/// Row `i` of `samples` is the `i`-th input vector, i.e. column `i` of the
/// `in_dim × N` matrix `X`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerCapture {
    pub layer_index: usize,
    pub samples: Matrix<f32>,
}

impl LayerCapture {
    pub fn new(layer_index: usize, samples: Matrix<f32>) -> Self {
        Self {
            layer_index,
            samples,
        }
    }

    /// Builds a capture from `in_dim × N` column-major data (`X` as written).
    pub fn from_columns(layer_index: usize, x: &Matrix<f64>) -> Self {
        Self::new(layer_index, x.transpose().to_f32())
    }

    pub fn n_samples(&self) -> usize {
        self.samples.rows()
    }

    pub fn in_dim(&self) -> usize {
        self.samples.cols()
    }

    pub fn sample(&self, i: usize) -> &[f32] {
        self.samples.row(i)
    }

    /// Stacks captures of the same layer (e.g. one per language).
    pub fn concat(parts: &[LayerCapture]) -> Result<LayerCapture> {
        let first = parts
            .first()
            .ok_or_else(|| MbsError::InvalidArgument("nothing to concatenate".into()))?;
        let d = first.in_dim();
        let mut data = Vec::new();
        let mut n = 0;
        for p in parts {
            if p.in_dim() != d || p.layer_index != first.layer_index {
                return Err(MbsError::Shape(
                    "captures disagree on layer or width".into(),
                ));
            }
            data.extend_from_slice(p.samples.as_slice());
            n += p.n_samples();
        }
        Ok(LayerCapture::new(
            first.layer_index,
            Matrix::from_vec(n, d, data),
        ))
    }
}

struct Activations {
    /// `values[l]` is the input of linear layer `l`; the last entry holds logits.
    values: Vec<Vec<f32>>,
}

impl Activations {
    fn new(config: &ModelConfig) -> Self {
        let mut values = vec![vec![0.0; config.input_dim()]];
        for (out, _) in config.layer_shapes() {
            values.push(vec![0.0; out]);
        }
        Self { values }
    }

    fn logits(&self) -> &[f32] {
        self.values.last().expect("logits")
    }
}

pub(crate) fn dot(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f32; 8];
    let chunks_a = a.chunks_exact(8);
    let chunks_b = b.chunks_exact(8);
    let (ra, rb) = (chunks_a.remainder(), chunks_b.remainder());
    for (ca, cb) in chunks_a.zip(chunks_b) {
        for i in 0..8 {
            acc[i] += ca[i] * cb[i];
        }
    }
    let mut s = ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

pub fn softmax(logits: &[f32]) -> Vec<f64> {
    let max = logits.iter().fold(f32::NEG_INFINITY, |m, &v| m.max(v)) as f64;
    let exps: Vec<f64> = logits.iter().map(|&v| (v as f64 - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

fn log_softmax_at(logits: &[f32], target: usize) -> f64 {
    let max = logits.iter().fold(f32::NEG_INFINITY, |m, &v| m.max(v)) as f64;
    let z: f64 = logits.iter().map(|&v| (v as f64 - max).exp()).sum();
    logits[target] as f64 - max - z.ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelConfig {
        ModelConfig {
            vocab_size: 256,
            context_k: 2,
            embed_dim: 3,
            hidden_dim: 4,
            n_hidden_layers: 1,
        }
    }

    fn zeroed(config: ModelConfig) -> ModelCheckpoint {
        let mut c = ModelCheckpoint::init(config, 0).unwrap();
        c.embedding = Matrix::zeros(256, config.embed_dim);
        for l in &mut c.layers {
            l.weights = Matrix::zeros(l.out_dim(), l.in_dim());
            l.bias.iter_mut().for_each(|b| *b = 0.0);
        }
        c
    }

    #[test]
    fn zero_model_is_uniform() {
        let c = zeroed(tiny());
        let p = c.forward(&[1, 2]).unwrap();
        assert!(p.iter().all(|&v| (v - 1.0 / 256.0).abs() < 1e-15));
        let seg = Segment {
            lang_id: "x".into(),
            tokens: b"hello world".to_vec(),
        };
        let ppl = c.perplexity(&[seg]).unwrap();
        assert!((ppl / 256.0 - 1.0).abs() < 1e-6);
    }

    #[test]
    fn hand_built_network() {
        // Embedding of token 0 is (1, -1, 0.5); two-token context [0, 0] gives
        // x = (1, -1, 0.5, 1, -1, 0.5). Hidden unit 0 sums x, unit 1 negates it.
        let mut c = zeroed(tiny());
        c.embedding.row_mut(0).copy_from_slice(&[1.0, -1.0, 0.5]);
        c.layers[0].weights.row_mut(0).copy_from_slice(&[1.0; 6]);
        c.layers[0].weights.row_mut(1).copy_from_slice(&[-1.0; 6]);
        c.layers[0].bias[2] = 0.25;
        // h = relu(1, -1, 0.25, 0) = (1, 0, 0.25, 0)
        c.layers[1].weights[(7, 0)] = 2.0;
        c.layers[1].weights[(9, 2)] = 4.0;
        c.layers[1].bias[9] = -1.0;
        // logits: z7 = 2·1 = 2, z9 = 4·0.25 − 1 = 0, all others 0
        let p = c.forward(&[0, 0]).unwrap();
        let z = 255.0 + 2f64.exp();
        assert!((p[7] - 2f64.exp() / z).abs() < 1e-12);
        assert!((p[9] - 1.0 / z).abs() < 1e-12);
        assert!((p[0] - 1.0 / z).abs() < 1e-12);
    }

    #[test]
    fn forward_rejects_wrong_context() {
        let c = ModelCheckpoint::init(tiny(), 3).unwrap();
        assert!(matches!(c.forward(&[1, 2, 3]), Err(MbsError::Shape(_))));
    }

    #[test]
    fn perfect_and_closed_form_perplexity() {
        // logits of ±large put all mass on the target
        let mut c = zeroed(tiny());
        c.layers[1].bias[b'a' as usize] = 1e4;
        let seg = Segment {
            lang_id: "x".into(),
            tokens: b"aaaaaa".to_vec(),
        };
        assert!((c.perplexity(std::slice::from_ref(&seg)).unwrap() - 1.0).abs() < 1e-12);
        assert!(c
            .perplexity(&[Segment {
                lang_id: "x".into(),
                tokens: b"aa".to_vec()
            }])
            .is_err());

        // context-free output distribution with p(a) = 1/2, p(b) = 1/4,
        // p(c) = 1/8; predicting a, b, c gives exp(−mean ln p) = 4
        let mut c = zeroed(tiny());
        let bias = &mut c.layers[1].bias;
        bias.iter_mut()
            .for_each(|b| *b = (0.125f64 / 253.0).ln() as f32);
        bias[b'a' as usize] = 0.5f64.ln() as f32;
        bias[b'b' as usize] = 0.25f64.ln() as f32;
        bias[b'c' as usize] = 0.125f64.ln() as f32;
        let seg = Segment {
            lang_id: "x".into(),
            tokens: b"xxabc".to_vec(),
        };
        assert!((c.perplexity(&[seg]).unwrap() - 4.0).abs() < 1e-5);
    }

    #[test]
    fn capture_counts_and_first_layer_content() {
        let cfg = tiny();
        let c = ModelCheckpoint::init(cfg, 9).unwrap();
        let one = Segment {
            lang_id: "x".into(),
            tokens: vec![1, 2, 3],
        };
        let caps = c.capture_inputs(std::slice::from_ref(&one)).unwrap();
        assert!(caps.iter().all(|cap| cap.n_samples() == 1));
        let two = Segment {
            lang_id: "x".into(),
            tokens: vec![5, 6, 7, 8],
        };
        let caps = c.capture_inputs(&[two.clone(), two.clone()]).unwrap();
        assert!(caps.iter().all(|cap| cap.n_samples() == 4));
        let mut expected = c.embedding.row(6).to_vec();
        expected.extend_from_slice(c.embedding.row(7));
        assert_eq!(caps[0].sample(1), expected.as_slice());
        assert_eq!(caps[1].in_dim(), cfg.hidden_dim);
        assert!(c.capture_inputs(&[]).is_err());
        assert_eq!(c.capture_layer(&[two.clone(), two], 1).unwrap(), caps[1]);
    }

    proptest::proptest! {
        #[test]
        fn softmax_is_normalized(seed in 0u64..500, a in 0u8..255, b in 0u8..255) {
            let c = ModelCheckpoint::init(tiny(), seed).unwrap();
            let p = c.forward(&[a, b]).unwrap();
            let s: f64 = p.iter().sum();
            proptest::prop_assert!((s - 1.0).abs() < 1e-6);
            proptest::prop_assert!(p.iter().all(|&v| v >= 0.0));
        }
    }
}
