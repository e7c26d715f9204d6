use std::path::{Path, PathBuf};

use mbs_core::eval::RunManifest;
use serde::de::DeserializeOwned;

use crate::error::{usage, CliError};

pub const SEED_ENV: &str = "MBS_SEED";

/// Reads a subcommand's JSON config file; unknown keys are rejected.
pub fn load<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T, CliError> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| usage(format!("invalid config {}: {e}", path.display())))
}

/// Fills every `None` field of `$args` from `$file`.
macro_rules! overlay {
    ($args:expr, $file:expr; $($field:ident),+ $(,)?) => {
        $( if $args.$field.is_none() { $args.$field = $file.$field; } )+
    };
}
pub(crate) use overlay;

/// Flag or config value, then `MBS_SEED`, then 0.
pub fn resolve_seed(seed: Option<u64>) -> Result<u64, CliError> {
    if let Some(s) = seed {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| usage(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(0),
    }
}

pub fn required<T>(value: Option<T>, name: &str) -> Result<T, CliError> {
    value.ok_or_else(|| usage(format!("missing required option --{name}")))
}

/// `<out>.run.json` unless given explicitly.
pub fn run_manifest_path(explicit: Option<&Path>, out: &Path) -> PathBuf {
    explicit.map(Path::to_path_buf).unwrap_or_else(|| {
        let mut name = out.as_os_str().to_owned();
        name.push(".run.json");
        PathBuf::from(name)
    })
}

pub fn finish(manifest: &RunManifest, path: &Path) -> Result<(), CliError> {
    manifest.save(path)?;
    eprintln!("run manifest: {}", path.display());
    Ok(())
}
