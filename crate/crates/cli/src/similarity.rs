use std::path::PathBuf;

use clap::Args;
use mbs_core::corpus::{Corpus, LanguageManifest};
use mbs_core::eval::{eval_segments, RunManifest};
use mbs_core::model::load_any;
use mbs_core::similarity::{
    average_distance, build_profile, mds_embed, write_mds_csv, DistanceMatrix,
};
use serde::{Deserialize, Serialize};

use crate::config::{self, overlay, required};
use crate::error::{usage, CliError};
use crate::report::eval_languages;

#[derive(Debug, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimilarityArgs {
    /// JSON file supplying any of these options; flags take precedence
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Manifest naming the evaluation texts profiled per language
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Distance matrix CSV (degrees)
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// MDS coordinates CSV
    #[arg(long)]
    pub mds_out: Option<PathBuf>,
    /// MDS dimensions (default 2)
    #[arg(long)]
    pub mds_dim: Option<usize>,
    /// Run manifest path (default: <out>.run.json)
    #[arg(long)]
    pub run_manifest: Option<PathBuf>,
}

pub fn run(mut args: SimilarityArgs) -> Result<(), CliError> {
    let file: SimilarityArgs = config::load(args.config.as_deref())?;
    overlay!(args, file; model, manifest, out, mds_out, mds_dim, run_manifest);
    let model_path = required(args.model.clone(), "model")?;
    let manifest_path = required(args.manifest.clone(), "manifest")?;
    let out = required(args.out.clone(), "out")?;
    let dim = *args.mds_dim.get_or_insert(2);

    let ckpt = load_any(&model_path)?.checkpoint;
    let corpus = Corpus::load(LanguageManifest::load(&manifest_path)?)?;
    let langs = eval_languages(&corpus);
    if langs.len() < 2 {
        return Err(usage(
            "similarity needs evaluation texts for at least two languages",
        ));
    }
    let profiles = eval_segments(&corpus, &langs)?
        .iter()
        .map(|(lang, segs)| build_profile(&ckpt, lang, segs))
        .collect::<Result<Vec<_>, _>>()?;
    let d = DistanceMatrix::from_profiles(&profiles)?;
    d.write_csv(&out)?;

    let mut run = RunManifest::new(
        "similarity",
        None,
        serde_json::to_value(&args).map_err(mbs_core::MbsError::from)?,
    );
    run.add_input(&model_path)?;
    run.add_input(&manifest_path)?;
    run.add_output(&out)?;

    println!("{:<12} {:>10}", "lang", "avg deg");
    for lang in &d.langs {
        println!("{:<12} {:>10.4}", lang, average_distance(&d, lang)?);
    }
    if let Some(mds_out) = &args.mds_out {
        let coords = mds_embed(&d, dim)?;
        write_mds_csv(&d.langs, &coords, mds_out)?;
        run.add_output(mds_out)?;
    }
    config::finish(
        &run,
        &config::run_manifest_path(args.run_manifest.as_deref(), &out),
    )
}
