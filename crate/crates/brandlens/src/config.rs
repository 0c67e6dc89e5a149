//! Run configuration: defaults, TOML/JSON loading, and startup validation.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::filter::{FilterThresholds, DEFAULT_VERIFICATION_KEYWORDS};
use crate::gateway::{api_key_env_var, split_model_id, ErrorMarkers, ProviderConfig, ProviderKind};
use crate::html::DEFAULT_CHAR_BUDGET;
use crate::pipeline::{DetectSettings, Verifier};
use crate::prompt::InputMode;

/// Which gateway backend a run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransportKind {
    Live,
    /// Live calls, persisted to the fixture file as they happen.
    Record,
    /// Fixture file only; any unrecorded request is an error.
    Replay,
}

impl std::str::FromStr for TransportKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "live" => Ok(TransportKind::Live),
            "record" => Ok(TransportKind::Record),
            "replay" => Ok(TransportKind::Replay),
            other => Err(format!(
                "unknown transport {other:?} (expected live|record|replay)"
            )),
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse config {path}: {reason}")]
    Parse { path: PathBuf, reason: String },
    #[error("replay transport needs an existing fixture file, {0} not found")]
    MissingFixture(PathBuf),
    #[error("missing credentials: set {}", vars.join(", "))]
    MissingCredentials { vars: Vec<String> },
    #[error("model {model:?} names provider {provider:?} which is not configured")]
    UnknownProvider { model: String, provider: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

fn default_providers() -> HashMap<String, ProviderConfig> {
    let mut providers = HashMap::new();
    providers.insert(
        "openai".to_string(),
        ProviderConfig {
            kind: ProviderKind::OpenAi,
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            markers: ErrorMarkers::default(),
            image_tokens: None,
        },
    );
    providers.insert(
        "anthropic".to_string(),
        ProviderConfig {
            kind: ProviderKind::Anthropic,
            endpoint: "https://api.anthropic.com/v1/messages".into(),
            markers: ErrorMarkers::default(),
            image_tokens: None,
        },
    );
    providers.insert(
        "gemini".to_string(),
        ProviderConfig {
            kind: ProviderKind::Gemini,
            endpoint:
                "https://generativelanguage.googleapis.com/v1beta/models/{model}:generateContent"
                    .into(),
            markers: ErrorMarkers::default(),
            image_tokens: None,
        },
    );
    providers
}

fn default_keywords() -> Vec<String> {
    DEFAULT_VERIFICATION_KEYWORDS
        .iter()
        .map(|s| s.to_string())
        .collect()
}

/// Everything a run needs. Flags override the file; the file overrides these
/// defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset_root: PathBuf,
    pub modes: Vec<InputMode>,
    pub models: Vec<String>,
    pub verifier: Verifier,
    pub transport: TransportKind,
    pub fixture_path: PathBuf,
    #[serde(rename = "filter_thresholds")]
    pub thresholds: FilterThresholds,
    pub max_in_flight: usize,
    pub output_path: PathBuf,
    pub html_char_budget: usize,
    pub chain_of_thought: bool,
    pub max_output_tokens: u32,
    pub temperature: f64,
    pub rate_limit_per_sec: Option<u32>,
    pub verification_keywords: Vec<String>,
    /// Alias groups for evaluation-time brand matching.
    pub brand_aliases: Vec<Vec<String>>,
    /// Phase-1 alias hook: identified name -> canonical brand. Ships empty.
    pub brand_alias_map: BTreeMap<String, String>,
    pub providers: HashMap<String, ProviderConfig>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset_root: PathBuf::from("dataset"),
            modes: vec![InputMode::Both],
            models: Vec::new(),
            verifier: Verifier::Llm,
            transport: TransportKind::Replay,
            fixture_path: PathBuf::from("fixtures.jsonl"),
            thresholds: FilterThresholds::default(),
            max_in_flight: 4,
            output_path: PathBuf::from("results.jsonl"),
            html_char_budget: DEFAULT_CHAR_BUDGET,
            chain_of_thought: false,
            max_output_tokens: crate::gateway::DEFAULT_MAX_OUTPUT_TOKENS,
            temperature: 0.0,
            rate_limit_per_sec: None,
            verification_keywords: default_keywords(),
            brand_aliases: Vec::new(),
            brand_alias_map: BTreeMap::new(),
            providers: default_providers(),
        }
    }
}

impl RunConfig {
    /// Loads a TOML (`.toml`) or JSON (anything else) config file.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let parse_err = |reason: String| ConfigError::Parse {
            path: path.to_path_buf(),
            reason,
        };
        if path.extension().is_some_and(|e| e == "toml") {
            toml::from_str(&text).map_err(|e| parse_err(e.to_string()))
        } else {
            serde_json::from_str(&text).map_err(|e| parse_err(e.to_string()))
        }
    }

    /// Startup checks: fixture presence for replay, credentials for live
    /// and record transports (all missing variable names reported), and
    /// basic bounds.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.max_in_flight == 0 {
            return Err(ConfigError::Invalid(
                "max_in_flight must be at least 1".into(),
            ));
        }
        if self.html_char_budget < 64 {
            return Err(ConfigError::Invalid(
                "html_char_budget must be at least 64".into(),
            ));
        }
        match self.transport {
            TransportKind::Replay => {
                if !self.fixture_path.is_file() {
                    return Err(ConfigError::MissingFixture(self.fixture_path.clone()));
                }
            }
            TransportKind::Live | TransportKind::Record => {
                let mut missing = Vec::new();
                for model in &self.models {
                    let (provider, _) = split_model_id(model);
                    if !self.providers.contains_key(provider) {
                        return Err(ConfigError::UnknownProvider {
                            model: model.clone(),
                            provider: provider.to_string(),
                        });
                    }
                    let var = api_key_env_var(provider);
                    if std::env::var(&var).map_or(true, |v| v.is_empty()) && !missing.contains(&var)
                    {
                        missing.push(var);
                    }
                }
                if !missing.is_empty() {
                    missing.sort();
                    return Err(ConfigError::MissingCredentials { vars: missing });
                }
            }
        }
        Ok(())
    }

    /// The per-run knobs handed to the pipeline.
    pub fn detect_settings(&self) -> DetectSettings {
        DetectSettings {
            verifier: self.verifier,
            html_char_budget: self.html_char_budget,
            chain_of_thought: self.chain_of_thought,
            thresholds: self.thresholds.clone(),
            verification_keywords: self.verification_keywords.clone(),
            brand_alias_map: self.brand_alias_map.clone(),
            max_output_tokens: self.max_output_tokens,
            temperature: self.temperature,
        }
    }

    /// Image-token formulas registered per provider, keyed for
    /// [`crate::gateway::estimate_image_tokens`] (which falls back from model
    /// id to provider name).
    pub fn image_token_formulas(&self) -> HashMap<String, crate::gateway::ImageTokenFormula> {
        self.providers
            .iter()
            .filter_map(|(name, provider)| provider.image_tokens.map(|f| (name.clone(), f)))
            .collect()
    }
}
