use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::UsageError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Mock,
    Http,
}

/// Settings read from `--config`. Every key is optional; command line flags
/// win over the file.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub backend: Option<BackendKind>,
    pub seed: Option<u64>,
    pub concurrency: Option<usize>,
    pub k: Option<usize>,
    pub temperature: Option<f32>,
    pub chat_url: Option<String>,
    pub chat_model: Option<String>,
    pub embed_url: Option<String>,
    pub embed_model: Option<String>,
    pub embed_dim: Option<usize>,
    pub sidecar_url: Option<String>,
    pub judge_url: Option<String>,
    pub judge_model: Option<String>,
    /// Decomposition replies for the mock chat backend, as JSONL lines of
    /// `{"question": .., "plan": [..]}`.
    pub mock_plans: Option<PathBuf>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, UsageError> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&raw).map_err(|e| UsageError(format!("bad config {}: {e}", path.display())))
    }
}

/// Fully resolved settings.
#[derive(Debug, Clone)]
pub struct Settings {
    pub backend: BackendKind,
    pub seed: u64,
    pub concurrency: usize,
    pub k: usize,
    pub temperature: f32,
    pub chat_url: Option<String>,
    pub chat_model: String,
    pub embed_url: Option<String>,
    pub embed_model: String,
    pub embed_dim: usize,
    pub sidecar_url: Option<String>,
    pub judge_url: Option<String>,
    pub judge_model: Option<String>,
    pub mock_plans: Option<PathBuf>,
}

pub struct Overrides {
    pub backend: Option<BackendKind>,
    pub seed: Option<u64>,
    pub concurrency: Option<usize>,
    pub k: Option<usize>,
}

impl Settings {
    pub fn resolve(file: FileConfig, flags: Overrides) -> Result<Self, UsageError> {
        let settings = Settings {
            backend: flags.backend.or(file.backend).unwrap_or(BackendKind::Mock),
            seed: flags.seed.or(file.seed).unwrap_or(0),
            concurrency: flags.concurrency.or(file.concurrency).unwrap_or(1),
            k: flags.k.or(file.k).unwrap_or(compactrag_core::index::DEFAULT_K),
            temperature: file.temperature.unwrap_or(0.0),
            chat_url: file.chat_url,
            chat_model: file.chat_model.unwrap_or_else(|| "gpt-4o-mini".into()),
            embed_url: file.embed_url,
            embed_model: file.embed_model.unwrap_or_else(|| "text-embedding-3-small".into()),
            embed_dim: file.embed_dim.unwrap_or(compactrag_core::backends::mock::MockEmbedder::DEFAULT_DIM),
            sidecar_url: file.sidecar_url,
            judge_url: file.judge_url,
            judge_model: file.judge_model,
            mock_plans: file.mock_plans,
        };
        if settings.k == 0 {
            return Err(UsageError("k must be at least 1".into()));
        }
        if settings.concurrency == 0 {
            return Err(UsageError("concurrency must be at least 1".into()));
        }
        Ok(settings)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn none() -> Overrides {
        Overrides { backend: None, seed: None, concurrency: None, k: None }
    }

    #[test]
    fn flags_beat_file() {
        let file: FileConfig = toml::from_str("backend = \"http\"\nk = 3\nseed = 9").unwrap();
        let s = Settings::resolve(file, Overrides { k: Some(7), ..none() }).unwrap();
        assert_eq!((s.backend, s.k, s.seed), (BackendKind::Http, 7, 9));
    }

    #[test]
    fn defaults() {
        let s = Settings::resolve(FileConfig::default(), none()).unwrap();
        assert_eq!((s.backend, s.k, s.concurrency), (BackendKind::Mock, 5, 1));
    }

    #[test]
    fn unknown_keys_and_zero_k_are_rejected() {
        assert!(toml::from_str::<FileConfig>("colour = 1").is_err());
        assert!(Settings::resolve(FileConfig::default(), Overrides { k: Some(0), ..none() }).is_err());
    }
}
