use std::path::PathBuf;

use clap::Args;
use mbs_core::corpus::synthetic::MarkovLanguage;
use mbs_core::eval::RunManifest;
use serde::{Deserialize, Serialize};

use crate::config::{self, overlay, required};
use crate::error::{usage, CliError};

#[derive(Debug, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthArgs {
    /// JSON file supplying any of these options; flags take precedence
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Output directory for texts and manifest.json
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Language as ID:TRAIN_BYTES, repeatable
    #[arg(long = "lang", value_name = "ID:BYTES")]
    #[serde(default)]
    pub langs: Vec<String>,
    /// Evaluation bytes per language
    #[arg(long)]
    pub eval_bytes: Option<usize>,
    /// Markov order of every language
    #[arg(long)]
    pub order: Option<usize>,
    /// Successors per context
    #[arg(long)]
    pub branching: Option<usize>,
    /// Give every language the same chain (distinct samples)
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub same_source: Option<bool>,
    #[arg(long)]
    pub seed: Option<u64>,
}

const PRINTABLE: std::ops::RangeInclusive<u8> = b'!'..=b'~';

fn parse_lang(s: &str) -> Result<(String, usize), CliError> {
    let (id, bytes) = s
        .split_once(':')
        .ok_or_else(|| usage(format!("--lang {s:?}: expected ID:BYTES")))?;
    let bytes = bytes
        .parse()
        .map_err(|_| usage(format!("--lang {s:?}: byte count is not an integer")))?;
    if id.is_empty() || bytes == 0 {
        return Err(usage(format!(
            "--lang {s:?}: need a non-empty id and positive size"
        )));
    }
    Ok((id.to_string(), bytes))
}

pub fn run(mut args: SynthArgs) -> Result<(), CliError> {
    let file: SynthArgs = config::load(args.config.as_deref())?;
    overlay!(args, file; out_dir, eval_bytes, order, branching, same_source, seed);
    if args.langs.is_empty() {
        args.langs = file.langs;
    }
    let out_dir = required(args.out_dir.clone(), "out-dir")?;
    if args.langs.is_empty() {
        return Err(usage("at least one --lang ID:BYTES is required"));
    }
    let langs = args
        .langs
        .iter()
        .map(|s| parse_lang(s))
        .collect::<Result<Vec<_>, _>>()?;
    let eval_bytes = args.eval_bytes.unwrap_or(4000);
    let order = args.order.unwrap_or(2);
    let branching = args.branching.unwrap_or(4);
    let same = args.same_source.unwrap_or(false);
    let seed = config::resolve_seed(args.seed)?;
    args.seed = Some(seed);
    if order == 0 || branching == 0 {
        return Err(usage("order and branching must be at least 1"));
    }

    let symbols: Vec<u8> = PRINTABLE.collect();
    let width = if same {
        symbols.len()
    } else {
        symbols.len() / langs.len()
    };
    if width < 2 {
        return Err(usage(format!(
            "too many languages for disjoint alphabets ({})",
            langs.len()
        )));
    }
    std::fs::create_dir_all(&out_dir)
        .map_err(|e| usage(format!("cannot create {}: {e}", out_dir.display())))?;

    let mut manifest_langs = Vec::new();
    let mut run = RunManifest::new(
        "synth",
        Some(seed),
        serde_json::to_value(&args).map_err(mbs_core::MbsError::from)?,
    );
    for (i, (id, bytes)) in langs.iter().enumerate() {
        let (alphabet, lang_seed) = if same {
            (&symbols[..], seed)
        } else {
            (
                &symbols[i * width..(i + 1) * width],
                seed.wrapping_add(i as u64 + 1),
            )
        };
        let lang = MarkovLanguage::new(alphabet, order, branching, lang_seed);
        let train_name = format!("{id}.train.txt");
        let eval_name = format!("{id}.eval.txt");
        for (name, text) in [
            (&train_name, lang.generate(*bytes, 2 * i as u64)),
            (&eval_name, lang.generate(eval_bytes, 2 * i as u64 + 1)),
        ] {
            let path = out_dir.join(name);
            std::fs::write(&path, text).map_err(|e| mbs_core::MbsError::io(&path, e))?;
            run.add_output(&path)?;
        }
        manifest_langs
            .push(serde_json::json!({ "id": id, "train": train_name, "eval": eval_name }));
        println!(
            "{id}: {bytes} train bytes, {eval_bytes} eval bytes, {} symbols",
            alphabet.len()
        );
    }
    let manifest_path = out_dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&serde_json::json!({ "languages": manifest_langs }))
        .map_err(mbs_core::MbsError::from)?;
    std::fs::write(&manifest_path, text + "\n")
        .map_err(|e| mbs_core::MbsError::io(&manifest_path, e))?;
    run.add_output(&manifest_path)?;
    println!("manifest: {}", manifest_path.display());
    config::finish(&run, &out_dir.join("synth.run.json"))
}
