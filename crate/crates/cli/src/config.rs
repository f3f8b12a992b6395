//! Optional defaults file. The only environment hook is `SGTRANSFER_CONFIG`,
//! which overrides where the defaults are read from; everything else comes
//! from flags.

use std::path::Path;

use anyhow::Context;
use serde::Deserialize;

pub const CONFIG_ENV: &str = "SGTRANSFER_CONFIG";

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Defaults {
    pub alpha: Option<f64>,
    pub na_prior: Option<f64>,
    pub k_i: Option<f64>,
    pub k_e: Option<f64>,
    pub head_exclude: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    #[serde(default)]
    defaults: Defaults,
}

/// Load defaults from `$SGTRANSFER_CONFIG` when set, else empty defaults.
pub fn load() -> anyhow::Result<Defaults> {
    match std::env::var_os(CONFIG_ENV) {
        None => Ok(Defaults::default()),
        Some(path) => {
            let path = Path::new(&path);
            let body = std::fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            let parsed: ConfigFile = toml::from_str(&body)
                .with_context(|| format!("parsing config {}", path.display()))?;
            Ok(parsed.defaults)
        }
    }
}
