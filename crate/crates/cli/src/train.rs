use std::path::PathBuf;

use clap::Args;
use mbs_core::corpus::{Corpus, LanguageManifest, Source};
use mbs_core::eval::RunManifest;
use mbs_core::model::{save_checkpoint, train, ModelConfig, TrainOptions};
use serde::{Deserialize, Serialize};

use crate::config::{self, overlay, required};
use crate::error::{usage, CliError};

#[derive(Debug, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainArgs {
    /// JSON file supplying any of these options; flags take precedence
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Language manifest naming the training texts
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Checkpoint to write
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Run manifest path (default: <out>.run.json)
    #[arg(long)]
    pub run_manifest: Option<PathBuf>,
    #[arg(long)]
    pub context_k: Option<usize>,
    #[arg(long)]
    pub embed_dim: Option<usize>,
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    /// Number of hidden layers
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Seed (falls back to MBS_SEED, then 0)
    #[arg(long)]
    pub seed: Option<u64>,
}

pub fn run(mut args: TrainArgs) -> Result<(), CliError> {
    let file: TrainArgs = config::load(args.config.as_deref())?;
    overlay!(args, file; manifest, out, run_manifest, context_k, embed_dim, hidden_dim, layers,
        steps, batch_size, learning_rate, seed);
    let manifest_path = required(args.manifest.clone(), "manifest")?;
    let out = required(args.out.clone(), "out")?;

    let d = ModelConfig::default();
    let model = ModelConfig {
        context_k: *args.context_k.get_or_insert(d.context_k),
        embed_dim: *args.embed_dim.get_or_insert(d.embed_dim),
        hidden_dim: *args.hidden_dim.get_or_insert(d.hidden_dim),
        n_hidden_layers: *args.layers.get_or_insert(d.n_hidden_layers),
        ..d
    };
    model.validate()?;
    let t = TrainOptions::default();
    let opts = TrainOptions {
        steps: *args.steps.get_or_insert(t.steps),
        batch_size: *args.batch_size.get_or_insert(t.batch_size),
        learning_rate: *args.learning_rate.get_or_insert(t.learning_rate),
        ..t
    };
    if opts.steps == 0 || opts.batch_size == 0 {
        return Err(usage("--steps and --batch-size must be at least 1"));
    }
    if !(opts.learning_rate > 0.0 && opts.learning_rate.is_finite()) {
        return Err(usage("--learning-rate must be positive"));
    }
    let seed = config::resolve_seed(args.seed)?;
    args.seed = Some(seed);

    let manifest = LanguageManifest::load(&manifest_path)?;
    let corpus = Corpus::load(manifest)?;
    let mut mixture = Vec::new();
    for e in corpus.manifest().entries() {
        if e.byte_size > 0 && !corpus.tokens(&e.lang_id, Source::Train)?.is_empty() {
            mixture.push((e.lang_id.clone(), e.byte_size as f64));
        }
    }
    let total: f64 = mixture.iter().map(|m| m.1).sum();
    mixture.iter_mut().for_each(|m| m.1 /= total);

    let outcome = train(model, &mixture, &corpus, &opts, seed)?;
    save_checkpoint(&outcome.checkpoint, &out)?;
    println!(
        "trained {} steps: loss {:.4} -> {:.4}; checkpoint {}",
        opts.steps,
        outcome.initial_loss(),
        outcome.final_loss(),
        out.display()
    );

    let mut run = RunManifest::new(
        "train",
        Some(seed),
        serde_json::to_value(&args).map_err(mbs_core::MbsError::from)?,
    );
    run.add_input(&manifest_path)?;
    for e in corpus.manifest().entries() {
        if let Some(p) = &e.train_path {
            run.add_input(p)?;
        }
    }
    run.add_output(&out)?;
    config::finish(
        &run,
        &config::run_manifest_path(args.run_manifest.as_deref(), &out),
    )
}
