use std::fs;
use std::path::Path;

use ssp_core::SspConfig;
use ssp_harness::SyntheticSpec;

use crate::error::CliError;

/// Effective matcher config and synthetic-data spec.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub config: SspConfig,
    pub synth: SyntheticSpec,
    pub seed: u64,
}

/// Reads a TOML config: matcher keys at the top level, generator keys in an
/// optional `[synth]` table.
fn from_toml(text: &str, path: &Path) -> Result<(SspConfig, SyntheticSpec), CliError> {
    let bad = |e: String| CliError::Usage(format!("{}: {e}", path.display()));
    let mut table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| bad(e.to_string()))?;
    let synth = match table.remove("synth") {
        Some(v) => v
            .try_into::<SyntheticSpec>()
            .map_err(|e| bad(format!("[synth]: {e}")))?,
        None => SyntheticSpec::default(),
    };
    let config = toml::Value::Table(table)
        .try_into::<SspConfig>()
        .map_err(|e| bad(e.to_string()))?;
    Ok((config, synth))
}

/// Config file, then `--set` overrides in order, then `--seed`.
pub fn resolve(
    config_path: Option<&Path>,
    overrides: &[String],
    seed: Option<u64>,
) -> Result<Settings, CliError> {
    let (mut config, mut synth) = match config_path {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Format(format!("{}: {e}", path.display())))?;
            from_toml(&text, path)?
        }
        None => (SspConfig::default(), SyntheticSpec::default()),
    };
    for item in overrides {
        let (key, value) = item
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got `{item}`")))?;
        let key = key.trim();
        match key.strip_prefix("synth.") {
            Some(field) => synth.set(field, value)?,
            None => config.set(key, value)?,
        }
    }
    if let Some(seed) = seed {
        synth.seed = seed;
    }
    config.validate()?;
    synth.validate()?;
    Ok(Settings {
        seed: synth.seed,
        config,
        synth,
    })
}
