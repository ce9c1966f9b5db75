use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::synth::SynthConfig;
use crate::corpus::{DocIdMode, MaskStyle};
use crate::error::{Error, Result};
use crate::model::{Preset, Task, TransformerConfig};
use crate::optim::WARMUP_FRACTION;
use crate::util::{canonical_hash, canonical_json};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelSpec {
    Preset(String),
    Custom {
        n_layers: usize,
        n_heads: usize,
        d_model: usize,
        #[serde(default)]
        d_ffn: Option<usize>,
        #[serde(default = "yes")]
        tie_embeddings: bool,
    },
}

fn yes() -> bool {
    true
}

impl ModelSpec {
    pub fn label(&self) -> String {
        match self {
            ModelSpec::Preset(name) => name.clone(),
            ModelSpec::Custom { n_layers, d_model, .. } => format!("custom-l{n_layers}-d{d_model}"),
        }
    }

    pub fn resolve(&self, vocab_size: usize, max_seq_len: usize, task: Task) -> Result<TransformerConfig> {
        let cfg = match self {
            ModelSpec::Preset(name) => Preset::by_name(name)?.config(vocab_size, max_seq_len, task),
            ModelSpec::Custom {
                n_layers,
                n_heads,
                d_model,
                d_ffn,
                tie_embeddings,
            } => {
                let mut c = TransformerConfig::new(*n_layers, *n_heads, *d_model, vocab_size)
                    .with_max_seq_len(max_seq_len)
                    .with_task(task);
                c.d_ffn = d_ffn.unwrap_or(4 * d_model);
                c.tie_embeddings = *tie_embeddings;
                c
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Exactly one stopping rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stop {
    Epochs(usize),
    Updates(u64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusSource {
    File(PathBuf),
    Synthetic(SynthConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub corpus: CorpusSource,
    /// `token<TAB>TAG` file aligned with the corpus token stream.
    pub annotations: Option<PathBuf>,
    pub max_vocab: usize,
    pub min_freq: u64,
    pub max_seq_len: usize,
    pub validation_fraction: f64,
    pub mask_p: f64,
    pub mask_style: MaskStyle,
    pub eval_mask_seed: u64,
    pub docid: DocIdMode,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            corpus: CorpusSource::Synthetic(SynthConfig::default()),
            annotations: None,
            max_vocab: 8192,
            min_freq: 1,
            max_seq_len: 512,
            validation_fraction: 0.1,
            mask_p: 0.15,
            mask_style: MaskStyle::MaskOnly,
            eval_mask_seed: 0,
            docid: DocIdMode::Control,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Evaluate the full training context set every this many epochs
    /// (and always after the last one).
    pub every: usize,
    pub max_batch_tokens: usize,
    pub perplexity: bool,
    pub pos: bool,
    pub memory_units: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            every: 1,
            max_batch_tokens: 8192,
            perplexity: true,
            pos: true,
            memory_units: true,
        }
    }
}

/// Special-batch injection protocol.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForgettingConfig {
    /// 1-based epoch after which the special batch is first trained on.
    pub inject_epoch: usize,
    /// Passes over the special batch per injection.
    pub repetitions: usize,
    /// Re-inject every `period` epochs after the first injection.
    pub period: Option<usize>,
    /// Spread repeated passes evenly through the following epoch instead of
    /// running them back to back.
    pub interleaved: bool,
}

impl Default for ForgettingConfig {
    fn default() -> Self {
        ForgettingConfig {
            inject_epoch: 1,
            repetitions: 1,
            period: None,
            interleaved: false,
        }
    }
}

impl ForgettingConfig {
    /// Epochs after which an injection happens.
    pub fn injection_epochs(&self, max_epochs: usize) -> Vec<usize> {
        match self.period {
            Some(p) if p > 0 => (self.inject_epoch..=max_epochs).step_by(p).collect(),
            _ => vec![self.inject_epoch],
        }
    }
}

fn default_warmup() -> f64 {
    WARMUP_FRACTION
}

fn default_log_updates() -> bool {
    true
}

/// Everything that determines a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub label: String,
    pub model: ModelSpec,
    pub task: Task,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub seed: u64,
    pub stop: Stop,
    pub batch_tokens: usize,
    /// Overrides the preset learning rate.
    #[serde(default)]
    pub lr: Option<f64>,
    #[serde(default = "default_warmup")]
    pub warmup_fraction: f64,
    #[serde(default)]
    pub eval: EvalConfig,
    /// Checkpoint cadence in epochs. Not part of the run identity.
    #[serde(default)]
    pub checkpoint_every: Option<usize>,
    #[serde(default = "default_log_updates")]
    pub log_updates: bool,
    #[serde(default)]
    pub log_wall_time: bool,
    #[serde(default)]
    pub forgetting: Option<ForgettingConfig>,
}

impl RunConfig {
    pub fn new(model: ModelSpec, task: Task, stop: Stop, batch_tokens: usize) -> Self {
        RunConfig {
            label: String::new(),
            model,
            task,
            data: DataConfig::default(),
            seed: 0,
            stop,
            batch_tokens,
            lr: None,
            warmup_fraction: WARMUP_FRACTION,
            eval: EvalConfig::default(),
            checkpoint_every: None,
            log_updates: true,
            log_wall_time: false,
            forgetting: None,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        match self.stop {
            Stop::Epochs(0) | Stop::Updates(0) => return bad("stopping rule must be positive".into()),
            _ => {}
        }
        if self.batch_tokens == 0 {
            return bad("batch_tokens must be positive".into());
        }
        if let Some(lr) = self.lr {
            if !(lr.is_finite() && lr > 0.0) {
                return bad(format!("lr must be positive, got {lr}"));
            }
        }
        if !(self.warmup_fraction > 0.0 && self.warmup_fraction < 1.0) {
            return bad(format!("warmup_fraction {} outside (0, 1)", self.warmup_fraction));
        }
        if !(self.data.validation_fraction > 0.0 && self.data.validation_fraction < 1.0) {
            return bad("validation_fraction must lie in (0, 1)".into());
        }
        if !(0.0..=1.0).contains(&self.data.mask_p) {
            return bad("mask_p must lie in [0, 1]".into());
        }
        if self.eval.every == 0 || self.eval.max_batch_tokens == 0 {
            return bad("eval cadence and batch size must be positive".into());
        }
        if let Some(f) = &self.forgetting {
            if f.inject_epoch == 0 || f.repetitions == 0 {
                return bad("inject_epoch and repetitions must be at least 1".into());
            }
            if let Stop::Epochs(e) = self.stop {
                if f.inject_epoch > e {
                    return bad(format!("inject_epoch {} beyond the {e}-epoch budget", f.inject_epoch));
                }
            }
        }
        if let ModelSpec::Preset(name) = &self.model {
            Preset::by_name(name)?;
        }
        Ok(())
    }

    /// The config as hashed: runtime-only fields removed.
    fn identity(&self) -> RunConfig {
        RunConfig {
            checkpoint_every: None,
            ..self.clone()
        }
    }

    pub fn hash(&self) -> Result<String> {
        canonical_hash(&self.identity())
    }

    /// `<label>-<first 12 hex digits of the config hash>`.
    pub fn run_id(&self) -> Result<String> {
        let label = if self.label.is_empty() {
            self.model.label()
        } else {
            self.label.clone()
        };
        let label: String = label
            .chars()
            .map(|c| {
                if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' {
                    c
                } else {
                    '_'
                }
            })
            .collect();
        Ok(format!("{label}-{}", &self.hash()?[..12]))
    }

    pub fn to_canonical_json(&self) -> Result<String> {
        canonical_json(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> RunConfig {
        RunConfig::new(ModelSpec::Preset("micro-xs".into()), Task::Causal, Stop::Epochs(3), 256)
    }

    #[test]
    fn json_roundtrip_and_stable_id() {
        let c = cfg();
        let json = c.to_canonical_json().unwrap();
        let back: RunConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.run_id().unwrap(), c.run_id().unwrap());
        assert!(c.run_id().unwrap().starts_with("micro-xs-"));
    }

    #[test]
    fn identity_ignores_checkpoint_cadence() {
        let a = cfg();
        let b = RunConfig {
            checkpoint_every: Some(2),
            ..cfg()
        };
        assert_eq!(a.run_id().unwrap(), b.run_id().unwrap());
        let c = RunConfig { seed: 1, ..cfg() };
        assert_ne!(a.run_id().unwrap(), c.run_id().unwrap());
    }

    #[test]
    fn stop_rule_is_exclusive() {
        let mut v = serde_json::to_value(cfg()).unwrap();
        v["stop"] = serde_json::json!({"epochs": 2, "updates": 5});
        assert!(serde_json::from_value::<RunConfig>(v).is_err());
        assert!(RunConfig {
            stop: Stop::Updates(0),
            ..cfg()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn validation() {
        assert!(cfg().validate().is_ok());
        assert!(RunConfig {
            lr: Some(-1.0),
            ..cfg()
        }
        .validate()
        .is_err());
        assert!(RunConfig {
            model: ModelSpec::Preset("nope".into()),
            ..cfg()
        }
        .validate()
        .is_err());
        let f = ForgettingConfig {
            inject_epoch: 9,
            ..Default::default()
        };
        assert!(RunConfig {
            forgetting: Some(f),
            ..cfg()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn injection_schedule() {
        let f = ForgettingConfig {
            inject_epoch: 2,
            period: Some(3),
            ..Default::default()
        };
        assert_eq!(f.injection_epochs(10), vec![2, 5, 8]);
        assert_eq!(ForgettingConfig::default().injection_epochs(10), vec![1]);
    }
}
