use std::path::PathBuf;

use clap::Args;
use mbs_core::corpus::{Corpus, LanguageManifest};
use mbs_core::eval::{eval_segments, report, PerplexityReport, RunManifest};
use mbs_core::model::load_any;
use serde::{Deserialize, Serialize};

use crate::config::{self, overlay};
use crate::error::{usage, CliError};

#[derive(Debug, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReportArgs {
    /// JSON file supplying any of these options; flags take precedence
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Print an existing report CSV instead of computing one
    #[arg(long, conflicts_with_all = ["dense", "compressed"])]
    pub csv: Option<PathBuf>,
    #[arg(long)]
    pub dense: Option<PathBuf>,
    #[arg(long)]
    pub compressed: Option<PathBuf>,
    /// Manifest naming the evaluation texts
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Report CSV to write
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Run manifest path (default: <out>.run.json)
    #[arg(long)]
    pub run_manifest: Option<PathBuf>,
}

pub fn print(rep: &PerplexityReport) {
    println!(
        "{:<12} {:>12} {:>12} {:>10}",
        "lang", "dense", "compressed", "increase"
    );
    for r in &rep.rows {
        println!(
            "{:<12} {:>12.4} {:>12.4} {:>9.2}%",
            r.lang, r.dense_ppl, r.compressed_ppl, r.increase_pct
        );
    }
    if let Some(a) = rep.averages() {
        println!(
            "{:<12} {:>12.4} {:>12.4} {:>9.2}%",
            "average", a.dense_ppl, a.compressed_ppl, a.increase_pct
        );
    }
}

/// Languages of the manifest that have evaluation text.
pub fn eval_languages(corpus: &Corpus) -> Vec<String> {
    corpus
        .manifest()
        .entries()
        .iter()
        .filter(|e| e.eval_path.is_some())
        .map(|e| e.lang_id.clone())
        .collect()
}

pub fn run(mut args: ReportArgs) -> Result<(), CliError> {
    let file: ReportArgs = config::load(args.config.as_deref())?;
    overlay!(args, file; csv, dense, compressed, manifest, out, run_manifest);
    if let Some(csv) = &args.csv {
        print(&PerplexityReport::read_csv(csv)?);
        return Ok(());
    }
    let (Some(dense_path), Some(comp_path), Some(manifest_path)) =
        (&args.dense, &args.compressed, &args.manifest)
    else {
        return Err(usage(
            "give --csv, or all of --dense, --compressed and --manifest",
        ));
    };
    let dense = load_any(dense_path)?.checkpoint;
    let compressed = load_any(comp_path)?.checkpoint;
    let corpus = Corpus::load(LanguageManifest::load(manifest_path)?)?;
    let langs = eval_languages(&corpus);
    if langs.is_empty() {
        return Err(usage("the manifest names no evaluation texts"));
    }
    let rep = report(&dense, &compressed, &eval_segments(&corpus, &langs)?)?;
    print(&rep);
    if let Some(out) = &args.out {
        rep.write_csv(out)?;
        let mut run = RunManifest::new(
            "report",
            None,
            serde_json::to_value(&args).map_err(mbs_core::MbsError::from)?,
        );
        for p in [dense_path, comp_path, manifest_path] {
            run.add_input(p)?;
        }
        run.add_output(out)?;
        config::finish(
            &run,
            &config::run_manifest_path(args.run_manifest.as_deref(), out),
        )?;
    }
    Ok(())
}
