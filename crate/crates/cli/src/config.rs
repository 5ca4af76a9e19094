//! Run configuration: built-in defaults, overlaid by a `key = value` file,
//! overlaid by command-line flags.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

use tog_core::diffusion::{Conditioning, ModelConfig, TrainConfig};
use tog_core::eval::fingerprint;
use tog_core::sketch::ImageFormat;
use tog_llm::LlmConfig;

/// Bad flags, config keys or values. Maps to exit status 2.
#[derive(Debug, Error)]
#[error("{0}")]
pub struct UsageError(pub String);

const DEFAULTS: &[(&str, &str)] = &[
    ("seed", "0"),
    ("convention", "auto"),
    ("subject", "The person"),
    ("split.ratio", "0.9"),
    ("model.preset", "toy"),
    ("model.conditioning", "tam-add"),
    ("train.steps", "2000"),
    ("train.batch_size", "16"),
    ("train.lr", "0.001"),
    ("train.eval_every", "250"),
    ("sample.steps", "50"),
    ("sketch.format", "png"),
    ("llm.endpoint", "https://api.openai.com/v1/chat/completions"),
    ("llm.model", "gpt-4-turbo"),
    ("llm.api_key_env", "TOG_LLM_API_KEY"),
    ("llm.temperature", "0.7"),
    ("llm.max_attempts", "5"),
    ("llm.backoff_ms", "500"),
    ("llm.max_in_flight", "4"),
    ("llm.timeout_secs", "60"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl RunConfig {
    pub fn defaults() -> Self {
        Self { values: DEFAULTS.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect() }
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<(), UsageError> {
        if !self.values.contains_key(key) {
            return Err(UsageError(format!("unknown config key `{key}`")));
        }
        self.values.insert(key.to_string(), value.into());
        Ok(())
    }

    pub fn set_opt<T: ToString>(&mut self, key: &str, value: Option<T>) -> Result<(), UsageError> {
        match value {
            Some(v) => self.set(key, v.to_string()),
            None => Ok(()),
        }
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<(), UsageError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| UsageError(format!("{origin}:{}: expected `key = value`", i + 1)))?;
            self.set(k.trim(), v.trim()).map_err(|e| UsageError(format!("{origin}:{}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), UsageError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| UsageError(format!("cannot read config file {}: {e}", path.display())))?;
        self.apply_text(&text, &path.display().to_string())
    }

    pub fn get(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).expect("key has a default")
    }

    pub fn parse<T: FromStr>(&self, key: &str) -> Result<T, UsageError>
    where
        T::Err: std::fmt::Display,
    {
        self.get(key).parse().map_err(|e| UsageError(format!("invalid value `{}` for {key}: {e}", self.get(key))))
    }

    /// Resolved settings as sorted `key = value` lines.
    pub fn to_text(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Stable digest of the subcommand and every resolved setting.
    pub fn fingerprint(&self, command: &str) -> String {
        fingerprint(&format!("command = {command}\n{}", self.to_text()))
    }

    pub fn seed(&self) -> Result<u64, UsageError> {
        self.parse("seed")
    }

    pub fn model_config(&self) -> Result<ModelConfig, UsageError> {
        let base = match self.get("model.preset") {
            "toy" => ModelConfig::toy(),
            "full" | "full-scale" => ModelConfig::full_scale(),
            other => return Err(UsageError(format!("unknown model preset `{other}`"))),
        };
        let c: Conditioning = self.parse("model.conditioning")?;
        Ok(base.with_conditioning(c))
    }

    pub fn train_config(&self) -> Result<TrainConfig, UsageError> {
        Ok(TrainConfig {
            steps: self.parse("train.steps")?,
            batch_size: self.parse("train.batch_size")?,
            lr: self.parse("train.lr")?,
            seed: self.seed()?,
            eval_every: self.parse("train.eval_every")?,
        })
    }

    pub fn image_format(&self) -> Result<ImageFormat, UsageError> {
        self.parse("sketch.format")
    }

    pub fn llm_config(&self) -> Result<LlmConfig, UsageError> {
        let cfg = LlmConfig {
            endpoint: self.get("llm.endpoint").to_string(),
            model: self.get("llm.model").to_string(),
            api_key_env: self.get("llm.api_key_env").to_string(),
            temperature: self.parse("llm.temperature")?,
            max_attempts: self.parse("llm.max_attempts")?,
            backoff_base_ms: self.parse("llm.backoff_ms")?,
            max_in_flight: self.parse("llm.max_in_flight")?,
            timeout_secs: self.parse("llm.timeout_secs")?,
            jitter_seed: self.seed()?,
        };
        cfg.validate().map_err(|e| UsageError(e.to_string()))?;
        Ok(cfg)
    }
}
