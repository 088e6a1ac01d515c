//! Run configuration: one declarative TOML file plus `key=value` overrides.
//! Every default lives in the `Default` impls below.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::evaluator::VoteConfig;
use crate::grpo::{Aggregation, ClipConfig};
use crate::policy::{AdamConfig, DecodeConfig, PolicyShape};
use crate::task_env::{ArithmeticParams, Task};
use crate::warmstart::WarmStartConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Generate,
    SelfVerify,
    Mixed,
    VerifyInit,
    VerifyAlter,
}

impl Regime {
    pub fn name(self) -> &'static str {
        match self {
            Regime::Generate => "generate",
            Regime::SelfVerify => "self_verify",
            Regime::Mixed => "mixed",
            Regime::VerifyInit => "verify_init",
            Regime::VerifyAlter => "verify_alter",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub embed_dim: usize,
    /// Number of trailing tokens the policy conditions on.
    pub context: usize,
    pub hidden_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            embed_dim: 16,
            context: 9,
            hidden_dim: 64,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BufferMode {
    /// Triplets persist across steps up to capacity.
    #[default]
    Persistent,
    /// The buffer is emptied after every verification update.
    PerIteration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BufferConfig {
    pub capacity: usize,
    pub mode: BufferMode,
}

impl Default for BufferConfig {
    fn default() -> Self {
        BufferConfig {
            capacity: 4096,
            mode: BufferMode::Persistent,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub size: usize,
    /// Samples per query for Avg@k.
    pub k: usize,
    /// Own candidates sampled per query for the verification-accuracy set.
    pub verify_candidates: usize,
    /// Judgments per triplet for verification accuracy.
    pub verify_k: usize,
    pub decode: DecodeConfig,
    pub vote: VoteConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            size: 200,
            k: 16,
            verify_candidates: 4,
            verify_k: 8,
            decode: DecodeConfig::default(),
            vote: VoteConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub regime: Regime,
    /// Generation steps for `verify_alter`, update steps otherwise.
    pub total_steps: usize,
    pub batch_b: usize,
    pub group_g: usize,
    /// Verification batch size; defaults to `batch_b`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub verify_batch: Option<usize>,
    pub alternation_period_n: usize,
    /// Updates per verification phase in `verify_alter`.
    pub verify_phase_steps: usize,
    pub verify_init_steps: usize,
    pub inner_epochs: usize,
    pub aggregation: Aggregation,
    pub seed: u64,
    pub eval_every: usize,
    /// Rayon worker threads; defaults to the available cores.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    /// Replaces every verification reward with this constant (diagnostics).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub constant_verify_reward: Option<f64>,
    pub task: Task,
    pub model: ModelConfig,
    pub optimizer: AdamConfig,
    pub decode: DecodeConfig,
    pub clip: ClipConfig,
    pub warm_start: WarmStartConfig,
    pub buffer: BufferConfig,
    pub eval: EvalConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            regime: Regime::Generate,
            total_steps: 300,
            batch_b: 16,
            group_g: 8,
            verify_batch: None,
            alternation_period_n: 5,
            verify_phase_steps: 1,
            verify_init_steps: 120,
            inner_epochs: 1,
            aggregation: Aggregation::PerTrajectory,
            seed: 0,
            eval_every: 25,
            workers: None,
            constant_verify_reward: None,
            task: Task::default(),
            model: ModelConfig::default(),
            optimizer: AdamConfig::default(),
            decode: DecodeConfig::default(),
            clip: ClipConfig::default(),
            warm_start: WarmStartConfig::default(),
            buffer: BufferConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn verify_batch(&self) -> usize {
        self.verify_batch.unwrap_or(self.batch_b)
    }

    pub fn policy_shape(&self) -> PolicyShape {
        PolicyShape {
            vocab_size: self.task.vocab_size(),
            embed_dim: self.model.embed_dim,
            context: self.model.context,
            hidden_dim: self.model.hidden_dim,
            pad_token: self.task.bos(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.task.validate()?;
        self.policy_shape().validate()?;
        self.decode.validate()?;
        self.eval.decode.validate().map_err(|e| prefix_field(e, "eval."))?;
        self.clip.validate()?;
        self.warm_start.validate()?;
        self.eval.vote.validate().map_err(|e| prefix_field(e, "eval."))?;
        if self.batch_b == 0 {
            return Err(Error::config("batch_b", "must be at least 1"));
        }
        if self.group_g < 2 {
            return Err(Error::config("group_g", "must be at least 2"));
        }
        if self.inner_epochs == 0 {
            return Err(Error::config("inner_epochs", "must be at least 1"));
        }
        if self.eval_every == 0 {
            return Err(Error::config("eval_every", "must be at least 1"));
        }
        if self.eval.size == 0 || self.eval.k == 0 {
            return Err(Error::config("eval", "size and k must be at least 1"));
        }
        if !matches!(self.regime, Regime::Generate) {
            if !self.task.supports_verification() {
                return Err(Error::config("regime", "this task has no verification prompts"));
            }
            let vb = self.verify_batch();
            if !vb.is_multiple_of(2) || vb == 0 || vb > self.batch_b {
                return Err(Error::config("verify_batch", "must be even, positive and at most batch_b"));
            }
        }
        match self.regime {
            Regime::VerifyInit if self.verify_init_steps >= self.total_steps => {
                return Err(Error::config("verify_init_steps", "must be smaller than total_steps"));
            }
            Regime::VerifyAlter if self.alternation_period_n == 0 => {
                return Err(Error::config("alternation_period_n", "must be at least 1"));
            }
            Regime::VerifyAlter if self.verify_phase_steps == 0 => {
                return Err(Error::config("verify_phase_steps", "must be at least 1"));
            }
            Regime::Mixed if self.batch_b < 4 => {
                return Err(Error::config("batch_b", "mixed training needs at least 4"));
            }
            _ => {}
        }
        if self.workers == Some(0) {
            return Err(Error::config("workers", "must be at least 1"));
        }
        Ok(())
    }

    /// Canonical TOML text; the config hash is taken over these bytes.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn hash(&self) -> Result<String> {
        Ok(hash_bytes(self.to_toml()?.as_bytes()))
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        load_with_overrides(text, &[])
    }

    pub fn from_file(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        load_with_overrides(&text, overrides)
    }
}

pub fn hash_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn prefix_field(err: Error, prefix: &str) -> Error {
    match err {
        Error::Config { field, reason } => Error::Config {
            field: format!("{prefix}{field}"),
            reason,
        },
        other => other,
    }
}

/// Parses TOML, applies dotted `key=value` overrides, deserializes and
/// validates.
pub fn load_with_overrides(text: &str, overrides: &[String]) -> Result<TrainConfig> {
    let mut table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::config(field_at(text, e.span()), e.message().to_string()))?;
    for ov in overrides {
        apply_override(&mut table, ov)?;
    }
    // A task table without `kind` describes the default arithmetic task.
    if let Some(task) = table.get_mut("task").and_then(toml::Value::as_table_mut) {
        task.entry("kind").or_insert_with(|| "arithmetic".into());
    }
    let merged = toml::to_string(&table).map_err(|e| Error::Serde(e.to_string()))?;
    let config: TrainConfig = toml::from_str(&merged).map_err(|e| {
        let field = field_at(&merged, e.span());
        let in_task = field == "<config>" || field == "task" || field.starts_with("task.");
        in_task
            .then(|| locate_task_error(&table))
            .flatten()
            .unwrap_or_else(|| Error::config(field, e.message().to_string()))
    })?;
    config.validate()?;
    Ok(config)
}

fn apply_override(table: &mut toml::Table, ov: &str) -> Result<()> {
    let (key, raw) = ov
        .split_once('=')
        .ok_or_else(|| Error::config(ov, "override must look like key=value"))?;
    let key = key.trim();
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    let (last, parents) = parts.split_last().expect("split yields one part");
    let mut cursor = table;
    for p in parents {
        cursor = cursor
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()))
            .as_table_mut()
            .ok_or_else(|| Error::config(key, format!("`{p}` is not a table")))?;
    }
    cursor.insert(last.to_string(), value);
    Ok(())
}

/// The tagged task table loses source positions when it fails, so re-parse
/// its fields on their own to find the offending key.
fn locate_task_error(table: &toml::Table) -> Option<Error> {
    let mut task = table.get("task")?.as_table()?.clone();
    if task.remove("kind")?.as_str()? != "arithmetic" {
        return None;
    }
    let text = toml::to_string(&task).ok()?;
    let err = toml::from_str::<ArithmeticParams>(&text).err()?;
    Some(Error::config(
        format!("task.{}", field_at(&text, err.span())),
        err.message().to_string(),
    ))
}

/// Dotted path of the key on the line an error points at.
fn field_at(text: &str, span: Option<std::ops::Range<usize>>) -> String {
    let Some(span) = span else {
        return "<config>".into();
    };
    let start = span.start.min(text.len());
    let line_start = text[..start].rfind('\n').map_or(0, |i| i + 1);
    let line = text[line_start..].lines().next().unwrap_or("");
    let key = line.split_once('=').map(|(k, _)| k.trim().to_string());
    let section = text[..line_start]
        .lines()
        .rev()
        .map(str::trim)
        .find(|l| l.starts_with('['))
        .map(|l| l.trim_matches(['[', ']']).to_string());
    match (section, key) {
        (Some(s), Some(k)) => format!("{s}.{k}"),
        (None, Some(k)) => k,
        (Some(s), None) => s,
        (None, None) => "<config>".into(),
    }
}
