use serde::{Deserialize, Serialize};

use super::{log_softmax_at, softmax, Activations, Metadata, ModelCheckpoint, ModelConfig};
use crate::corpus::{Corpus, Source, Token};
use crate::error::{MbsError, Result};
use crate::linalg::Matrix;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainOptions {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            steps: 1000,
            batch_size: 64,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// One next-token prediction: `context` has exactly `context_k` tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub context: Vec<Token>,
    pub target: Token,
}

/// Parameter-shaped gradient buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub embedding: Matrix<f32>,
    pub weights: Vec<Matrix<f32>>,
    pub biases: Vec<Vec<f32>>,
}

impl Gradients {
    fn zeros_like(ckpt: &ModelCheckpoint) -> Self {
        Self {
            embedding: Matrix::zeros(ckpt.embedding.rows(), ckpt.embedding.cols()),
            weights: ckpt
                .layers
                .iter()
                .map(|l| Matrix::zeros(l.out_dim(), l.in_dim()))
                .collect(),
            biases: ckpt.layers.iter().map(|l| vec![0.0; l.out_dim()]).collect(),
        }
    }

    fn clear(&mut self) {
        self.embedding.as_mut_slice().fill(0.0);
        self.weights
            .iter_mut()
            .for_each(|w| w.as_mut_slice().fill(0.0));
        self.biases.iter_mut().for_each(|b| b.fill(0.0));
    }

    fn slices_mut(&mut self) -> Vec<&mut [f32]> {
        let mut out: Vec<&mut [f32]> = vec![self.embedding.as_mut_slice()];
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            out.push(w.as_mut_slice());
            out.push(b.as_mut_slice());
        }
        out
    }
}

fn param_slices_mut(ckpt: &mut ModelCheckpoint) -> Vec<&mut [f32]> {
    let mut out: Vec<&mut [f32]> = vec![ckpt.embedding.as_mut_slice()];
    for l in ckpt.layers.iter_mut() {
        out.push(l.weights.as_mut_slice());
        out.push(l.bias.as_mut_slice());
    }
    out
}

struct Backprop {
    acts: Activations,
    grads: Vec<Vec<f32>>,
}

impl Backprop {
    fn new(config: &ModelConfig) -> Self {
        let acts = Activations::new(config);
        let grads = acts.values.iter().map(|v| vec![0.0; v.len()]).collect();
        Self { acts, grads }
    }

    /// Adds `scale · ∂(−log p(target))/∂θ` into `g`; returns the sample loss.
    fn accumulate(
        &mut self,
        ckpt: &ModelCheckpoint,
        ex: &Example,
        scale: f32,
        g: &mut Gradients,
    ) -> f64 {
        ckpt.forward_into(&ex.context, &mut self.acts);
        let target = usize::from(ex.target);
        let loss = -log_softmax_at(self.acts.logits(), target);

        let last = ckpt.layers.len();
        let probs = softmax(self.acts.logits());
        for (d, p) in self.grads[last].iter_mut().zip(&probs) {
            *d = *p as f32 * scale;
        }
        self.grads[last][target] -= scale;

        for l in (0..ckpt.layers.len()).rev() {
            let layer = &ckpt.layers[l];
            let (lower, upper) = self.grads.split_at_mut(l + 1);
            let dy = &upper[0];
            let dx = &mut lower[l];
            let x = &self.acts.values[l];
            let gw = &mut g.weights[l];
            dx.fill(0.0);
            for (o, &d) in dy.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                g.biases[l][o] += d;
                for (gwi, &xi) in gw.row_mut(o).iter_mut().zip(x) {
                    *gwi += d * xi;
                }
                for (dxi, &wi) in dx.iter_mut().zip(layer.weights.row(o)) {
                    *dxi += d * wi;
                }
            }
            if l > 0 {
                // x is a ReLU output
                for (dxi, &xi) in dx.iter_mut().zip(x) {
                    if xi <= 0.0 {
                        *dxi = 0.0;
                    }
                }
            }
        }

        let e = ckpt.config.embed_dim;
        for (i, &t) in ex.context.iter().enumerate() {
            for (ge, &d) in g
                .embedding
                .row_mut(usize::from(t))
                .iter_mut()
                .zip(&self.grads[0][i * e..(i + 1) * e])
            {
                *ge += d;
            }
        }
        loss
    }
}

/// Mean cross-entropy over `examples` and its gradient.
pub fn loss_and_gradients(
    ckpt: &ModelCheckpoint,
    examples: &[Example],
) -> Result<(f64, Gradients)> {
    if examples.is_empty() {
        return Err(MbsError::InvalidArgument("no examples".into()));
    }
    for ex in examples {
        ckpt.check_context(&ex.context)?;
    }
    let mut g = Gradients::zeros_like(ckpt);
    let mut bp = Backprop::new(&ckpt.config);
    let scale = 1.0 / examples.len() as f32;
    let total: f64 = examples
        .iter()
        .map(|ex| bp.accumulate(ckpt, ex, scale, &mut g))
        .sum();
    Ok((total / examples.len() as f64, g))
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: ModelCheckpoint,
    /// Mean batch loss at every step, measured before that step's update.
    pub losses: Vec<f64>,
}

impl TrainOutcome {
    pub fn initial_loss(&self) -> f64 {
        self.losses[0]
    }

    /// Mean of the last (up to) 50 batch losses.
    pub fn final_loss(&self) -> f64 {
        let tail = &self.losses[self.losses.len().saturating_sub(50)..];
        tail.iter().sum::<f64>() / tail.len() as f64
    }
}

/// Adam on token cross-entropy. Every batch window is drawn by first picking
/// a language with probability proportional to its mixture weight, then a
/// uniform offset into that language's training text.
pub fn train(
    config: ModelConfig,
    mixture: &[(String, f64)],
    corpus: &Corpus,
    opts: &TrainOptions,
    seed: u64,
) -> Result<TrainOutcome> {
    if mixture.is_empty() {
        return Err(MbsError::InvalidArgument("empty training mixture".into()));
    }
    if opts.steps == 0 || opts.batch_size == 0 {
        return Err(MbsError::InvalidArgument(
            "steps and batch_size must be at least 1".into(),
        ));
    }
    let k = config.context_k;
    let mut texts = Vec::with_capacity(mixture.len());
    for (lang, w) in mixture {
        if !(w.is_finite() && *w > 0.0) {
            return Err(MbsError::InvalidArgument(format!(
                "mixture weight for \"{lang}\" must be positive, got {w}"
            )));
        }
        let t = corpus.tokens(lang, Source::Train)?;
        if t.len() <= k {
            return Err(MbsError::CorpusTooShort {
                lang: lang.clone(),
                available: t.len(),
                seg_len: k + 1,
            });
        }
        texts.push(t);
    }
    let weight_sum: f64 = mixture.iter().map(|(_, w)| w).sum();

    let mut ckpt = ModelCheckpoint::init(config, seed)?;
    let mut grads = Gradients::zeros_like(&ckpt);
    let mut m = Gradients::zeros_like(&ckpt);
    let mut v = Gradients::zeros_like(&ckpt);
    let mut bp = Backprop::new(&config);
    let mut r = rng::keyed(seed, "train-batches");
    let mut batch: Vec<Example> = Vec::with_capacity(opts.batch_size);
    let mut losses = Vec::with_capacity(opts.steps);
    let scale = 1.0 / opts.batch_size as f32;

    for step in 1..=opts.steps {
        batch.clear();
        for _ in 0..opts.batch_size {
            let mut u = rng::unit_f64(&mut r) * weight_sum;
            let mut li = mixture.len() - 1;
            for (i, (_, w)) in mixture.iter().enumerate() {
                if u < *w {
                    li = i;
                    break;
                }
                u -= w;
            }
            let text = texts[li];
            let start = rng::uniform_index(&mut r, text.len() - k);
            batch.push(Example {
                context: text[start..start + k].to_vec(),
                target: text[start + k],
            });
        }

        grads.clear();
        let loss: f64 = batch
            .iter()
            .map(|ex| bp.accumulate(&ckpt, ex, scale, &mut grads))
            .sum::<f64>()
            / batch.len() as f64;
        losses.push(loss);

        let bc1 = (1.0 - opts.beta1.powi(step as i32)) as f32;
        let bc2 = (1.0 - opts.beta2.powi(step as i32)) as f32;
        let (b1, b2) = (opts.beta1 as f32, opts.beta2 as f32);
        let (lr, eps) = (opts.learning_rate as f32, opts.epsilon as f32);
        for (((p, g), m), v) in param_slices_mut(&mut ckpt)
            .into_iter()
            .zip(grads.slices_mut())
            .zip(m.slices_mut())
            .zip(v.slices_mut())
        {
            for i in 0..p.len() {
                let gi = g[i];
                m[i] = b1 * m[i] + (1.0 - b1) * gi;
                v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }

    ckpt.metadata = Metadata {
        seed,
        train_steps: opts.steps as u64,
        corpus_fingerprint: corpus.fingerprint(),
    };
    ckpt.validate()?;
    Ok(TrainOutcome {
        checkpoint: ckpt,
        losses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Segment;

    fn small() -> ModelConfig {
        ModelConfig {
            context_k: 4,
            embed_dim: 8,
            hidden_dim: 32,
            n_hidden_layers: 2,
            ..Default::default()
        }
    }

    fn abab() -> Corpus {
        let text = b"ab".repeat(2000);
        Corpus::from_texts([("A", text.clone(), text)]).unwrap()
    }

    fn mix() -> Vec<(String, f64)> {
        vec![("A".to_string(), 1.0)]
    }

    #[test]
    fn one_step_moves_every_matrix() {
        let corpus = abab();
        let opts = TrainOptions {
            steps: 1,
            ..Default::default()
        };
        let init = ModelCheckpoint::init(small(), 3).unwrap();
        let out = train(small(), &mix(), &corpus, &opts, 3).unwrap();
        let c = &out.checkpoint;
        assert_ne!(c.embedding, init.embedding);
        for (a, b) in c.layers.iter().zip(&init.layers) {
            assert_ne!(a.weights, b.weights);
            assert_ne!(a.bias, b.bias);
        }
        assert_eq!(c.metadata.train_steps, 1);
        assert_eq!(c.metadata.corpus_fingerprint, corpus.fingerprint());
        assert_eq!(out.losses.len(), 1);
    }

    #[test]
    fn deterministic_per_seed() {
        let corpus = abab();
        let opts = TrainOptions {
            steps: 20,
            ..Default::default()
        };
        let a = train(small(), &mix(), &corpus, &opts, 5).unwrap();
        let b = train(small(), &mix(), &corpus, &opts, 5).unwrap();
        let c = train(small(), &mix(), &corpus, &opts, 6).unwrap();
        assert_eq!(a.checkpoint, b.checkpoint);
        assert_eq!(a.losses, b.losses);
        assert_ne!(a.checkpoint, c.checkpoint);
    }

    #[test]
    fn learns_repetitive_text() {
        let corpus = abab();
        let opts = TrainOptions {
            steps: 2000,
            ..Default::default()
        };
        let out = train(small(), &mix(), &corpus, &opts, 1).unwrap();
        assert!(out.final_loss() < out.initial_loss());
        let seg = Segment {
            lang_id: "A".into(),
            tokens: corpus.tokens("A", Source::Eval).unwrap().to_vec(),
        };
        let ppl = out.checkpoint.perplexity(&[seg]).unwrap();
        assert!(ppl < 2.0, "perplexity {ppl}");
    }

    #[test]
    fn rejects_bad_inputs() {
        let corpus = abab();
        let opts = TrainOptions::default();
        assert!(train(small(), &[], &corpus, &opts, 0).is_err());
        assert!(train(
            small(),
            &mix(),
            &corpus,
            &TrainOptions { steps: 0, ..opts },
            0
        )
        .is_err());
        assert!(train(small(), &[("A".into(), 0.0)], &corpus, &opts, 0).is_err());
        assert!(train(small(), &[("Z".into(), 1.0)], &corpus, &opts, 0).is_err());
        let short = Corpus::from_texts([("A", b"abc".to_vec(), Vec::new())]).unwrap();
        let err = train(small(), &mix(), &short, &opts, 0).unwrap_err();
        assert!(err.to_string().contains("corpus too short"));
    }

    #[test]
    fn gradient_of_empty_batch_is_an_error() {
        let c = ModelCheckpoint::init(small(), 0).unwrap();
        assert!(loss_and_gradients(&c, &[]).is_err());
        let bad = Example {
            context: vec![1],
            target: 2,
        };
        assert!(loss_and_gradients(&c, &[bad]).is_err());
    }
}
