use std::path::PathBuf;

use clap::Args;
use mbs_core::corpus::{Corpus, LanguageManifest};
use mbs_core::eval::{
    compress_model, eval_segments, report, CompressionConfig, Method, RunManifest,
};
use mbs_core::hessian::DEFAULT_LAMBDA_REL;
use mbs_core::model::{load_any, save_checkpoint, save_quantized};
use mbs_core::sampler::CalibrationPlan;
use serde::{Deserialize, Serialize};

use crate::config::{self, overlay, required};
use crate::error::CliError;
use crate::report::{eval_languages, print};

#[derive(Debug, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompressArgs {
    /// JSON file supplying any of these options; flags take precedence
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Dense checkpoint
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Manifest naming the training (calibration) and evaluation texts
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Calibration plan JSON (see `mbs plan --out`)
    #[arg(long)]
    pub plan: Option<PathBuf>,
    /// magnitude, wanda, sparsegpt, gptq or rtn
    #[arg(long)]
    pub method: Option<Method>,
    /// Fraction of weights pruned per row, in [0, 1)
    #[arg(long)]
    pub sparsity: Option<f64>,
    #[arg(long)]
    pub bits: Option<u32>,
    /// Quantization group size (columns)
    #[arg(long = "group")]
    #[serde(alias = "group")]
    pub group_size: Option<usize>,
    /// Dampening relative to the mean Hessian diagonal
    #[arg(long = "lambda")]
    pub lambda_rel: Option<f64>,
    /// Columns per OBS block
    #[arg(long)]
    pub block_size: Option<usize>,
    /// Tokens per calibration segment
    #[arg(long)]
    pub seg_len: Option<usize>,
    #[arg(long)]
    pub threads: Option<usize>,
    /// Seed for drawing calibration segments (falls back to MBS_SEED, then 0)
    #[arg(long)]
    pub seed: Option<u64>,
    /// Compressed checkpoint to write
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Perplexity report CSV to write
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Run manifest path (default: <out>.run.json)
    #[arg(long)]
    pub run_manifest: Option<PathBuf>,
}

pub fn run(mut args: CompressArgs) -> Result<(), CliError> {
    let file: CompressArgs = config::load(args.config.as_deref())?;
    overlay!(args, file; model, manifest, plan, method, sparsity, bits, group_size, lambda_rel,
        block_size, seg_len, threads, seed, out, report, run_manifest);
    let model_path = required(args.model.clone(), "model")?;
    let manifest_path = required(args.manifest.clone(), "manifest")?;
    let plan_path = required(args.plan.clone(), "plan")?;
    let method = required(args.method, "method")?;
    let out = required(args.out.clone(), "out")?;
    let seed = config::resolve_seed(args.seed)?;
    args.seed = Some(seed);

    let plan = CalibrationPlan::load(&plan_path)?;
    let mut cfg = CompressionConfig::pruning(method, 0.0, plan, seed);
    cfg.sparsity = args.sparsity;
    cfg.bits = args.bits;
    cfg.group_size = args.group_size;
    cfg.lambda_rel = *args.lambda_rel.get_or_insert(DEFAULT_LAMBDA_REL);
    cfg.block_size = *args.block_size.get_or_insert(cfg.block_size);
    cfg.seg_len = *args.seg_len.get_or_insert(cfg.seg_len);
    cfg.threads = *args.threads.get_or_insert(1);
    cfg.validate()?;

    let dense = load_any(&model_path)?.checkpoint;
    let corpus = Corpus::load(LanguageManifest::load(&manifest_path)?)?;
    let outcome = compress_model(&dense, &cfg, &corpus)?;
    match outcome.grids() {
        Some(grids) => save_quantized(&outcome.checkpoint, &grids, &out)?,
        None => save_checkpoint(&outcome.checkpoint, &out)?,
    }
    println!(
        "{method}: {} layers compressed from {} calibration windows; checkpoint {}",
        outcome.layers.len(),
        outcome.n_calibration_windows,
        out.display()
    );
    for l in &outcome.layers {
        println!("  layer {}: error {:.6e}", l.layer_index, l.layer_error);
    }

    let mut run = RunManifest::new(
        "compress",
        Some(seed),
        serde_json::to_value(&args).map_err(mbs_core::MbsError::from)?,
    );
    for p in [&model_path, &manifest_path, &plan_path] {
        run.add_input(p)?;
    }
    for e in corpus.manifest().entries() {
        for p in [&e.train_path, &e.eval_path].into_iter().flatten() {
            run.add_input(p)?;
        }
    }
    run.add_output(&out)?;

    let langs = eval_languages(&corpus);
    if !langs.is_empty() {
        let rep = report(
            &dense,
            &outcome.checkpoint,
            &eval_segments(&corpus, &langs)?,
        )?;
        print(&rep);
        if let Some(path) = &args.report {
            rep.write_csv(path)?;
            run.add_output(path)?;
        }
    }
    config::finish(
        &run,
        &config::run_manifest_path(args.run_manifest.as_deref(), &out),
    )
}
