use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use uqroute_core::calibration::{load_calibration, transfer_threshold, CalibrationError};
use uqroute_core::UqMethod;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config parse: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("calibration: {0}")]
    Calibration(#[from] CalibrationError),
}

fn default_timeout_ms() -> u64 {
    60_000
}

fn default_listen() -> String {
    "127.0.0.1:8080".to_string()
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct EndpointConfig {
    /// Base URL of an OpenAI-compatible API, e.g. `http://localhost:8000/v1`.
    pub url: String,
    pub model: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key: Option<String>,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FallbackPolicy {
    /// Return the weak answer flagged `slm_fallback` when the strong call fails.
    #[default]
    ServeWeak,
    Error,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingConfig {
    /// Resamples drawn for the consistency method.
    pub m: usize,
    pub temperature: f64,
    pub max_tokens: Option<u32>,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            m: 5,
            temperature: 1.0,
            max_tokens: None,
        }
    }
}

/// Threshold derived from a calibration manifest at startup.
#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationSource {
    pub manifest: PathBuf,
    pub target_ratio: f64,
}

/// Optional prompt template files; `{question}` and `{answer}` are substituted.
#[derive(Debug, Clone, Default, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct PromptFiles {
    pub p_true: Option<PathBuf>,
    pub verbalization_1s: Option<PathBuf>,
    pub verbalization_2s: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct GatewayConfig {
    #[serde(default = "default_listen")]
    pub listen: String,
    pub weak: EndpointConfig,
    pub strong: EndpointConfig,
    pub method: UqMethod,
    #[serde(default)]
    pub threshold: Option<f64>,
    #[serde(default)]
    pub calibration: Option<CalibrationSource>,
    #[serde(default)]
    pub sampling: SamplingConfig,
    #[serde(default)]
    pub fallback: FallbackPolicy,
    /// JSONL file every handled request's trace is appended to.
    #[serde(default)]
    pub trace_log: Option<PathBuf>,
    #[serde(default)]
    pub prompts: PromptFiles,
}

pub const ENV_WEAK_URL: &str = "UQROUTE_WEAK_URL";
pub const ENV_STRONG_URL: &str = "UQROUTE_STRONG_URL";
pub const ENV_WEAK_API_KEY: &str = "UQROUTE_WEAK_API_KEY";
pub const ENV_STRONG_API_KEY: &str = "UQROUTE_STRONG_API_KEY";

impl GatewayConfig {
    /// A config with a fixed threshold and defaults elsewhere.
    pub fn new(weak: EndpointConfig, strong: EndpointConfig, method: UqMethod, threshold: f64) -> Self {
        Self {
            listen: default_listen(),
            weak,
            strong,
            method,
            threshold: Some(threshold),
            calibration: None,
            sampling: SamplingConfig::default(),
            fallback: FallbackPolicy::default(),
            trace_log: None,
            prompts: PromptFiles::default(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    /// Reads a TOML config, resolves relative paths against its directory
    /// and applies `UQROUTE_*` environment overrides.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::from_toml_str(&text)?;
        if let Some(dir) = path.parent() {
            cfg.resolve_paths(dir);
        }
        cfg.apply_env_overrides(|k| std::env::var(k).ok());
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(c) = &mut self.calibration {
            fix(&mut c.manifest);
        }
        if let Some(p) = &mut self.trace_log {
            fix(p);
        }
        for p in [
            &mut self.prompts.p_true,
            &mut self.prompts.verbalization_1s,
            &mut self.prompts.verbalization_2s,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
    }

    pub fn apply_env_overrides(&mut self, get: impl Fn(&str) -> Option<String>) {
        if let Some(v) = get(ENV_WEAK_URL) {
            self.weak.url = v;
        }
        if let Some(v) = get(ENV_STRONG_URL) {
            self.strong.url = v;
        }
        if let Some(v) = get(ENV_WEAK_API_KEY) {
            self.weak.api_key = Some(v);
        }
        if let Some(v) = get(ENV_STRONG_API_KEY) {
            self.strong.api_key = Some(v);
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        match (&self.threshold, &self.calibration) {
            (Some(_), Some(_)) => return invalid("set either threshold or calibration, not both".into()),
            (None, None) => return invalid("one of threshold or calibration is required".into()),
            (Some(t), None) if !t.is_finite() => return invalid(format!("threshold {t} is not finite")),
            (None, Some(c)) if !(0.0..=1.0).contains(&c.target_ratio) => {
                return invalid(format!("target_ratio {} outside [0, 1]", c.target_ratio))
            }
            _ => {}
        }
        if self.method.needs_probe() {
            return invalid(format!(
                "method {} needs hidden states, which the endpoint does not expose",
                self.method
            ));
        }
        if self.method == UqMethod::JaccardDegree && self.sampling.m < 2 {
            return invalid(format!("sampling.m = {} but jaccard_degree needs m >= 2", self.sampling.m));
        }
        if !(self.sampling.temperature >= 0.0) {
            return invalid("sampling.temperature must be >= 0".into());
        }
        for (name, ep) in [("weak", &self.weak), ("strong", &self.strong)] {
            if !(ep.url.starts_with("http://") || ep.url.starts_with("https://")) {
                return invalid(format!("{name}.url {:?} is not an http(s) URL", ep.url));
            }
            if ep.timeout_ms == 0 {
                return invalid(format!("{name}.timeout_ms must be > 0"));
            }
        }
        Ok(())
    }

    /// The routing threshold: fixed, or read off the calibration manifest.
    pub fn resolve_threshold(&self) -> Result<f64, ConfigError> {
        self.validate()?;
        if let Some(t) = self.threshold {
            return Ok(t);
        }
        let src = self.calibration.as_ref().expect("validated");
        let cal = load_calibration(&src.manifest)?;
        if let Some(m) = cal.method {
            if m != self.method {
                return Err(ConfigError::Invalid(format!(
                    "calibration manifest was built with {m}, gateway method is {}",
                    self.method
                )));
            }
        }
        Ok(transfer_threshold(&cal, src.target_ratio)?)
    }
}

pub const DEFAULT_P_TRUE_PROMPT: &str = "Question: {question}\nProposed answer: {answer}\n\nIs the proposed answer correct? Reply with a single word, True or False.";

pub const DEFAULT_VERBAL_1S_PROMPT: &str = "{question}\n\nGive your answer. Then, on a new line, state how confident you are that it is correct as a number between 0 and 100, in the form \"Confidence: <number>\".";

pub const DEFAULT_VERBAL_2S_PROMPT: &str = "Question: {question}\nProposed answer: {answer}\n\nHow confident are you that the proposed answer is correct? Reply in the form \"Confidence: <number>\" with a number between 0 and 100.";

#[derive(Debug, Clone, PartialEq)]
pub struct Prompts {
    pub p_true: String,
    pub verbalization_1s: String,
    pub verbalization_2s: String,
}

impl Default for Prompts {
    fn default() -> Self {
        Self {
            p_true: DEFAULT_P_TRUE_PROMPT.into(),
            verbalization_1s: DEFAULT_VERBAL_1S_PROMPT.into(),
            verbalization_2s: DEFAULT_VERBAL_2S_PROMPT.into(),
        }
    }
}

impl Prompts {
    pub fn load(files: &PromptFiles) -> Result<Self, ConfigError> {
        let read = |p: &Option<PathBuf>, default: &str| -> Result<String, ConfigError> {
            match p {
                Some(path) => std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
                    path: path.clone(),
                    source,
                }),
                None => Ok(default.to_string()),
            }
        };
        Ok(Self {
            p_true: read(&files.p_true, DEFAULT_P_TRUE_PROMPT)?,
            verbalization_1s: read(&files.verbalization_1s, DEFAULT_VERBAL_1S_PROMPT)?,
            verbalization_2s: read(&files.verbalization_2s, DEFAULT_VERBAL_2S_PROMPT)?,
        })
    }
}

pub fn render(template: &str, question: &str, answer: &str) -> String {
    template.replace("{question}", question).replace("{answer}", answer)
}
