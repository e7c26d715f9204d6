use std::path::PathBuf;

use clap::{Args, ValueEnum};
use mbs_core::corpus::LanguageManifest;
use mbs_core::eval::RunManifest;
use mbs_core::sampler::{plan_equal, plan_mbs, plan_monolingual, CalibrationPlan};
use serde::{Deserialize, Serialize};

use crate::config::{self, overlay, required};
use crate::error::{usage, CliError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyArg {
    Mbs,
    Equal,
    Mono,
}

#[derive(Debug, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlanArgs {
    /// JSON file supplying any of these options; flags take precedence
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Allocation policy (default mbs)
    #[arg(long, value_enum)]
    pub policy: Option<PolicyArg>,
    /// Language for the mono policy
    #[arg(long)]
    pub lang: Option<String>,
    /// Total number of segments (default 256)
    #[arg(long)]
    pub total: Option<usize>,
    /// Write the plan as JSON
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Run manifest path (default: <out>.run.json)
    #[arg(long)]
    pub run_manifest: Option<PathBuf>,
}

pub fn build(
    manifest: &LanguageManifest,
    policy: PolicyArg,
    lang: Option<&str>,
    total: usize,
) -> Result<CalibrationPlan, CliError> {
    Ok(match policy {
        PolicyArg::Mbs => plan_mbs(manifest, total)?,
        PolicyArg::Equal => plan_equal(manifest, total)?,
        PolicyArg::Mono => {
            let lang = lang.ok_or_else(|| usage("--policy mono needs --lang"))?;
            plan_monolingual(manifest, lang, total)?
        }
    })
}

pub fn run(mut args: PlanArgs) -> Result<(), CliError> {
    let file: PlanArgs = config::load(args.config.as_deref())?;
    overlay!(args, file; manifest, policy, lang, total, out, run_manifest);
    let manifest_path = required(args.manifest.clone(), "manifest")?;
    let policy = *args.policy.get_or_insert(PolicyArg::Mbs);
    let total = *args.total.get_or_insert(256);
    let manifest = LanguageManifest::load(&manifest_path)?;
    let plan = build(&manifest, policy, args.lang.as_deref(), total)?;

    println!("{:<12} {:>16} {:>8}", "lang", "bytes", "segments");
    for e in manifest.entries() {
        println!(
            "{:<12} {:>16} {:>8}",
            e.lang_id,
            e.byte_size,
            plan.count(&e.lang_id)
        );
    }
    println!(
        "{:<12} {:>16} {:>8}",
        "total",
        manifest.total_bytes(),
        plan.total
    );

    if let Some(out) = &args.out {
        plan.save(out)?;
        let mut run = RunManifest::new(
            "plan",
            None,
            serde_json::to_value(&args).map_err(mbs_core::MbsError::from)?,
        );
        run.add_input(&manifest_path)?;
        run.add_output(out)?;
        config::finish(
            &run,
            &config::run_manifest_path(args.run_manifest.as_deref(), out),
        )?;
    }
    Ok(())
}
