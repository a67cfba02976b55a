//! Pipeline configuration read from TOML.
//!
//! Relative paths are resolved against the directory holding the config
//! file. Credentials are never stored in the file; the zero-shot token is
//! read from the environment variable the config names.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use depsev_core::dataset::{ClassQuota, SplitSpec, DEFAULT_SMOTE_K};
use depsev_core::labeling::{CoarseLabel, FusionWeights, MergeMap, RetryPolicy};
use depsev_core::models::{ModelKind, ModelSpec};

pub const ENDPOINT_ENV: &str = "ZEROSHOT_ENDPOINT";
pub const DEFAULT_TOKEN_ENV: &str = "ZEROSHOT_TOKEN";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub corpus: PathBuf,
    /// Master seed for splitting, SMOTE and models without their own seed.
    pub seed: u64,
    /// `created_at` stamped on machine votes, so reruns are reproducible.
    #[serde(default)]
    pub timestamp: i64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub bands: Option<PathBuf>,
    #[serde(default)]
    pub expert_labels: Option<PathBuf>,
    #[serde(default = "default_smote_k")]
    pub smote_k: usize,
    #[serde(default = "default_blind_mode")]
    pub blind_mode: bool,
    pub languages: BTreeMap<String, LanguageConfig>,
    #[serde(default)]
    pub zeroshot: ZeroShotConfig,
    #[serde(default)]
    pub fusion: FusionWeights,
    #[serde(default)]
    pub merge: MergeMap,
    #[serde(default = "default_models")]
    pub models: Vec<ModelEntry>,
    /// Directory the config was loaded from; not part of the file.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LanguageConfig {
    /// Required except for English, which has a built-in list.
    #[serde(default)]
    pub stoplist: Option<PathBuf>,
    /// Defaults to the bundled English questionnaire.
    #[serde(default)]
    pub questionnaire: Option<PathBuf>,
    pub split: SplitConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SplitConfig {
    /// `reference_english` or `reference_luganda`.
    Preset(String),
    Quotas(BTreeMap<CoarseLabel, ClassQuota>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZeroShotConfig {
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default = "default_token_env")]
    pub token_env: String,
    #[serde(default)]
    pub cache: Option<PathBuf>,
    #[serde(default)]
    pub retry: RetryPolicy,
}

impl Default for ZeroShotConfig {
    fn default() -> Self {
        Self {
            endpoint: None,
            token_env: default_token_env(),
            cache: None,
            retry: RetryPolicy::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelEntry {
    pub kind: ModelKind,
    #[serde(default)]
    pub hyperparameters: BTreeMap<String, f64>,
    #[serde(default)]
    pub seed: Option<u64>,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_smote_k() -> usize {
    DEFAULT_SMOTE_K
}

fn default_blind_mode() -> bool {
    true
}

fn default_token_env() -> String {
    DEFAULT_TOKEN_ENV.to_string()
}

fn default_models() -> Vec<ModelEntry> {
    ModelKind::ALL
        .into_iter()
        .map(|kind| ModelEntry {
            kind,
            hyperparameters: BTreeMap::new(),
            seed: None,
        })
        .collect()
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let mut config: PipelineConfig =
            toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))?;
        config.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        config.validate()?;
        Ok(config)
    }

    /// Resolves a configured path against the config directory.
    pub fn path(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn out_dir(&self) -> PathBuf {
        self.path(&self.out_dir)
    }

    pub fn validate(&self) -> Result<()> {
        let must_exist = |what: &str, p: &Path| -> Result<()> {
            let full = self.path(p);
            if !full.exists() {
                bail!("{what} {} does not exist", full.display());
            }
            Ok(())
        };
        must_exist("corpus", &self.corpus)?;
        if let Some(p) = &self.bands {
            must_exist("bands file", p)?;
        }
        if let Some(p) = &self.expert_labels {
            must_exist("expert label file", p)?;
        }
        if let Some(p) = &self.zeroshot.cache {
            if let Some(dir) = self.path(p).parent() {
                if !dir.as_os_str().is_empty() && !dir.exists() {
                    bail!(
                        "directory for zero-shot cache {} does not exist",
                        dir.display()
                    );
                }
            }
        }
        if self.languages.is_empty() {
            bail!("no languages configured");
        }
        for (lang, lc) in &self.languages {
            match &lc.stoplist {
                Some(p) => must_exist(&format!("stop list for {lang}"), p)?,
                None if lang == "en" => {}
                None => bail!("language {lang} needs a stoplist path"),
            }
            match &lc.questionnaire {
                Some(p) => must_exist(&format!("questionnaire for {lang}"), p)?,
                None if lang == "en" => {}
                None => bail!("language {lang} needs a questionnaire path"),
            }
            self.split_spec(lang)?;
        }
        if self.smote_k == 0 {
            bail!("smote_k must be at least 1");
        }
        self.fusion.validate()?;
        if self.models.is_empty() {
            bail!("no models configured");
        }
        self.model_specs()?;
        Ok(())
    }

    pub fn split_spec(&self, language: &str) -> Result<SplitSpec> {
        let lc = self
            .languages
            .get(language)
            .with_context(|| format!("no configuration for language {language}"))?;
        Ok(match &lc.split {
            SplitConfig::Preset(name) => match name.as_str() {
                "reference_english" => SplitSpec::reference_english(self.seed),
                "reference_luganda" => SplitSpec::reference_luganda(self.seed),
                other => bail!(
                    "unknown split preset {other:?}; expected reference_english or reference_luganda"
                ),
            },
            SplitConfig::Quotas(quotas) => SplitSpec {
                quotas: quotas.clone(),
                seed: self.seed,
            },
        })
    }

    pub fn model_specs(&self) -> Result<Vec<ModelSpec>> {
        self.models
            .iter()
            .map(|m| {
                ModelSpec::new(
                    m.kind,
                    m.hyperparameters.clone(),
                    m.seed.unwrap_or(self.seed),
                )
                .map_err(Into::into)
            })
            .collect()
    }

    /// `ZEROSHOT_ENDPOINT` wins over the configured endpoint.
    pub fn zeroshot_endpoint(&self) -> Option<String> {
        std::env::var(ENDPOINT_ENV)
            .ok()
            .filter(|e| !e.is_empty())
            .or_else(|| self.zeroshot.endpoint.clone())
    }

    pub fn zeroshot_token(&self) -> Option<String> {
        std::env::var(&self.zeroshot.token_env)
            .ok()
            .filter(|t| !t.is_empty())
    }

    /// SHA-256 over the canonical JSON form of every field.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&canonical))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_config(dir: &Path, body: &str) -> PathBuf {
        fs::write(dir.join("corpus.jsonl"), "").unwrap();
        let path = dir.join("config.toml");
        fs::write(&path, body).unwrap();
        path
    }

    const MINIMAL: &str = r#"
corpus = "corpus.jsonl"
seed = 7

[languages.en]
split = "reference_english"
"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let config = PipelineConfig::load(&write_config(dir.path(), MINIMAL)).unwrap();
        assert_eq!(config.smote_k, 5);
        assert!(config.blind_mode);
        assert_eq!(config.models.len(), 4);
        assert_eq!(
            config.split_spec("en").unwrap(),
            SplitSpec::reference_english(7)
        );
        assert_eq!(config.out_dir(), dir.path().join("out"));
    }

    #[test]
    fn explicit_quotas() {
        let dir = tempfile::tempdir().unwrap();
        let body = r#"
corpus = "corpus.jsonl"
seed = 1

[languages.en.split]
normal = { validation = 2, test = 3 }
"#;
        let config = PipelineConfig::load(&write_config(dir.path(), body)).unwrap();
        let spec = config.split_spec("en").unwrap();
        assert_eq!(spec.quota(CoarseLabel::Normal).test, 3);
        assert_eq!(spec.quota(CoarseLabel::Severe).test, 0);
    }

    #[test]
    fn hash_tracks_every_field() {
        let dir = tempfile::tempdir().unwrap();
        let config = PipelineConfig::load(&write_config(dir.path(), MINIMAL)).unwrap();
        let mut other = config.clone();
        assert_eq!(config.hash(), other.hash());
        other.smote_k = 3;
        assert_ne!(config.hash(), other.hash());
        let mut other = config.clone();
        other.fusion.expert = 2.0;
        assert_ne!(config.hash(), other.hash());
    }

    #[test]
    fn rejects_bad_configs() {
        let dir = tempfile::tempdir().unwrap();
        let unknown_field = format!("{MINIMAL}\nsmote = 3\n");
        assert!(PipelineConfig::load(&write_config(dir.path(), &unknown_field)).is_err());
        let missing_stoplist = MINIMAL.replace("[languages.en]", "[languages.lg]");
        let err = PipelineConfig::load(&write_config(dir.path(), &missing_stoplist)).unwrap_err();
        assert!(err.to_string().contains("stoplist"), "{err:#}");
        let bad_model = format!(
            "{MINIMAL}\n[[models]]\nkind = \"naive_bayes\"\nhyperparameters = {{ beta = 1 }}\n"
        );
        assert!(PipelineConfig::load(&write_config(dir.path(), &bad_model)).is_err());
        let bad_preset = MINIMAL.replace("reference_english", "reference_klingon");
        assert!(PipelineConfig::load(&write_config(dir.path(), &bad_preset)).is_err());
    }
}
