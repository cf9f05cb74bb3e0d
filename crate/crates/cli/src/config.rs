//! Optional key-value config file. Command-line flags win over file values,
//! file values win over built-in defaults.

use std::path::Path;

use serde::Deserialize;

use crate::error::{CliError, Result};

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub seed: Option<u64>,
    pub slide_cap: Option<usize>,
    pub token_limit: Option<usize>,
    pub embed_dim: Option<usize>,
    pub min_tissue: Option<f64>,
    pub patch_size: Option<usize>,
    pub target_mpp: Option<f64>,
    pub max_in_flight: Option<usize>,
    pub backend_url: Option<String>,
    pub encoder_url: Option<String>,
    pub timeout_secs: Option<u64>,
    pub replicates: Option<usize>,
    pub level: Option<f64>,
    pub icl_examples: Option<usize>,
}

impl Config {
    /// TOML, or JSON when the file name ends in `.json`.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let parsed = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| e.to_string())
        } else {
            toml::from_str(&text).map_err(|e| e.to_string())
        };
        parsed.map_err(|e| CliError::Validation(format!("config {}: {e}", path.display())))
    }

    /// The effective seed, logged so every run can be repeated.
    pub fn seed(&self, flag: Option<u64>) -> u64 {
        let seed = flag.or(self.seed).unwrap_or(0);
        log::info!("seed = {seed}");
        seed
    }
}

pub fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flag_beats_file_beats_default() {
        assert_eq!(pick(Some(1), Some(2), 3), 1);
        assert_eq!(pick(None, Some(2), 3), 2);
        assert_eq!(pick(None, None, 3), 3);
    }

    #[test]
    fn toml_and_json_load() {
        let dir = tempfile::tempdir().unwrap();
        let t = dir.path().join("c.toml");
        std::fs::write(&t, "seed = 7\nslide_cap = 10\n").unwrap();
        let c = Config::load(&t).unwrap();
        assert_eq!((c.seed, c.slide_cap), (Some(7), Some(10)));
        let j = dir.path().join("c.json");
        std::fs::write(&j, r#"{"replicates": 500}"#).unwrap();
        assert_eq!(Config::load(&j).unwrap().replicates, Some(500));
        std::fs::write(&t, "sead = 7\n").unwrap();
        assert!(matches!(Config::load(&t), Err(CliError::Validation(_))));
    }
}
