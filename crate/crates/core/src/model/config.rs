use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    /// Autoregressive next-token prediction under a causal attention mask.
    Causal,
    /// Masked-token prediction with bidirectional attention.
    Masked,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PositionKind {
    Learned,
    None,
}

/// Architecture hyperparameters of a decoder-style transformer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformerConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_ffn: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
    pub task: Task,
    pub tie_embeddings: bool,
    pub positions: PositionKind,
}

impl TransformerConfig {
    /// Config with `d_ffn = 4 * d_model`, learned positions and tied embeddings.
    pub fn new(n_layers: usize, n_heads: usize, d_model: usize, vocab_size: usize) -> Self {
        TransformerConfig {
            n_layers,
            n_heads,
            d_model,
            d_ffn: 4 * d_model,
            vocab_size,
            max_seq_len: 512,
            task: Task::Causal,
            tie_embeddings: true,
            positions: PositionKind::Learned,
        }
    }

    pub fn with_task(mut self, task: Task) -> Self {
        self.task = task;
        self
    }

    pub fn with_max_seq_len(mut self, max_seq_len: usize) -> Self {
        self.max_seq_len = max_seq_len;
        self
    }

    pub fn with_vocab_size(mut self, vocab_size: usize) -> Self {
        self.vocab_size = vocab_size;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_heads == 0 || self.d_model == 0 || self.d_ffn == 0 {
            return Err(Error::Config("heads, d_model and d_ffn must be positive".into()));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.d_model < 2 {
            return Err(Error::Config("d_model must be at least 2 for layer norm".into()));
        }
        if self.max_seq_len < 2 {
            return Err(Error::Config("max_seq_len must be at least 2".into()));
        }
        if self.vocab_size == 0 {
            return Err(Error::Config("vocabulary is empty".into()));
        }
        Ok(())
    }

    /// Number of scalar learnable parameters, from the closed form
    /// `V d + P d + L (4d + (3d^2 + 3d) + (d^2 + d) + (2 d f + f + d)) + 2d + [untied] V d`.
    /// The final layer norm exists only when there is at least one block.
    pub fn param_count(&self) -> u64 {
        let v = self.vocab_size as u64;
        let d = self.d_model as u64;
        let f = self.d_ffn as u64;
        let l = self.n_layers as u64;
        let p = match self.positions {
            PositionKind::Learned => self.max_seq_len as u64,
            PositionKind::None => 0,
        };
        let per_layer = 4 * d + (3 * d * d + 3 * d) + (d * d + d) + (2 * d * f + f + d);
        let final_norm = if l > 0 { 2 * d } else { 0 };
        let head = if self.tie_embeddings { 0 } else { v * d };
        v * d + p * d + l * per_layer + final_norm + head
    }
}

/// A named architecture with its default learning rate and batch size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preset {
    pub name: String,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    /// `None` means "interpolate from the reference table by parameter count".
    pub lr: Option<f64>,
    /// Tokens per update.
    pub batch_tokens: usize,
    /// Trainable on a desk machine without an explicit override.
    pub desk_scale: bool,
}

/// Reference architectures: (name, layers, heads, d_model, lr, batch tokens).
const REFERENCE: [(&str, usize, usize, usize, f64, usize); 6] = [
    ("ref-125M", 12, 12, 768, 6.0e-4, 500_000),
    ("ref-355M", 24, 16, 1024, 3.0e-4, 500_000),
    ("ref-1.3B", 24, 32, 2048, 2.0e-4, 1_000_000),
    ("ref-2.7B", 32, 32, 2560, 1.6e-4, 1_000_000),
    ("ref-6.7B", 32, 32, 4096, 1.2e-4, 2_000_000),
    ("ref-13B", 40, 40, 5120, 1.0e-4, 2_000_000),
];

/// Nominal parameter counts paired with the reference learning rates.
const LR_TABLE: [(f64, f64); 6] = [
    (125e6, 6.0e-4),
    (355e6, 3.0e-4),
    (1.3e9, 2.0e-4),
    (2.7e9, 1.6e-4),
    (6.7e9, 1.2e-4),
    (13e9, 1.0e-4),
];

const DESK: [(&str, usize, usize, usize); 5] = [
    ("desk-tiny", 2, 2, 64),
    ("desk-small", 4, 4, 128),
    ("desk-medium", 6, 8, 256),
    ("desk-large", 8, 8, 384),
    ("desk-xlarge", 10, 8, 512),
];

/// Very small grid used where whole sweeps must finish in minutes.
const MICRO: [(&str, usize, usize, usize); 4] = [
    ("micro-xs", 1, 2, 16),
    ("micro-s", 2, 2, 32),
    ("micro-m", 2, 4, 64),
    ("micro-l", 3, 4, 96),
];

/// Below the reference table the rate grows as `SMALL_LR_SCALE / sqrt(n)`,
/// never under the table's first rate and never above `SMALL_LR_CAP`.
/// Calibrated on the micro grid so that every size can saturate its
/// training set within a desk-scale epoch budget.
pub const SMALL_LR_SCALE: f64 = 1.25;
pub const SMALL_LR_CAP: f64 = 2.0e-2;

/// Learning rate for a model of `n_params`, interpolated geometrically
/// (log-log linear) between the reference table rows and clamped at the
/// large end.
pub fn interpolated_lr(n_params: u64) -> f64 {
    let n = n_params.max(1) as f64;
    let (first, last) = (LR_TABLE[0], LR_TABLE[LR_TABLE.len() - 1]);
    if n <= first.0 {
        return (SMALL_LR_SCALE / n.sqrt()).clamp(first.1, SMALL_LR_CAP);
    }
    if n >= last.0 {
        return last.1;
    }
    for w in LR_TABLE.windows(2) {
        let ((n0, lr0), (n1, lr1)) = (w[0], w[1]);
        if n <= n1 {
            let t = (n.ln() - n0.ln()) / (n1.ln() - n0.ln());
            return (lr0.ln() + t * (lr1.ln() - lr0.ln())).exp();
        }
    }
    last.1
}

impl Preset {
    pub fn all() -> Vec<Preset> {
        let mut out = Vec::new();
        for (name, l, h, d) in MICRO.iter().chain(DESK.iter()) {
            out.push(Preset {
                name: name.to_string(),
                n_layers: *l,
                n_heads: *h,
                d_model: *d,
                lr: None,
                batch_tokens: 16_384,
                desk_scale: true,
            });
        }
        for (name, l, h, d, lr, batch) in REFERENCE {
            out.push(Preset {
                name: name.to_string(),
                n_layers: l,
                n_heads: h,
                d_model: d,
                lr: Some(lr),
                batch_tokens: batch,
                desk_scale: false,
            });
        }
        out
    }

    pub fn by_name(name: &str) -> Result<Preset> {
        Self::all()
            .into_iter()
            .find(|p| p.name == name)
            .ok_or_else(|| Error::Config(format!("unknown preset '{name}'")))
    }

    /// The ordered desk grid, smallest first.
    pub fn desk_grid() -> Vec<Preset> {
        DESK.iter().map(|(n, ..)| Self::by_name(n).unwrap()).collect()
    }

    pub fn micro_grid() -> Vec<Preset> {
        MICRO.iter().map(|(n, ..)| Self::by_name(n).unwrap()).collect()
    }

    pub fn config(&self, vocab_size: usize, max_seq_len: usize, task: Task) -> TransformerConfig {
        TransformerConfig::new(self.n_layers, self.n_heads, self.d_model, vocab_size)
            .with_max_seq_len(max_seq_len)
            .with_task(task)
    }

    /// Default max learning rate for this preset at the given vocabulary.
    pub fn default_lr(&self, vocab_size: usize, max_seq_len: usize) -> f64 {
        self.lr
            .unwrap_or_else(|| interpolated_lr(self.config(vocab_size, max_seq_len, Task::Causal).param_count()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_125m_preset() {
        let p = Preset::by_name("ref-125M").unwrap();
        assert_eq!((p.n_layers, p.n_heads, p.d_model), (12, 12, 768));
        assert_eq!(p.lr, Some(6.0e-4));
        assert!(!p.desk_scale);
    }

    #[test]
    fn param_count_125m_closed_form() {
        let c = TransformerConfig::new(12, 12, 768, 50257);
        // 50257*768 + 512*768 + 12*(12*768^2 + 13*768) + 2*768
        assert_eq!(c.param_count(), 124_046_592);
        assert!((c.param_count() as f64 / 1.24e8 - 1.0).abs() < 0.01);
    }

    #[test]
    fn embeddings_only() {
        let mut c = TransformerConfig::new(0, 1, 16, 100);
        c.positions = PositionKind::None;
        assert_eq!(c.param_count(), 100 * 16);
    }

    #[test]
    fn desk_tiny_by_hand() {
        let c = Preset::by_name("desk-tiny").unwrap().config(8192, 512, Task::Causal);
        // tok 8192*64 = 524288; pos 512*64 = 32768;
        // per layer: ln 256, qkv 12288+192, out 4096+64, ffn 32768+256+64 = 49984;
        // two layers 99968; final ln 128.
        assert_eq!(c.param_count(), 524_288 + 32_768 + 99_968 + 128);
    }

    #[test]
    fn grids_strictly_increase() {
        for grid in [Preset::desk_grid(), Preset::micro_grid()] {
            let counts: Vec<u64> = grid
                .iter()
                .map(|p| p.config(8192, 512, Task::Causal).param_count())
                .collect();
            assert!(counts.windows(2).all(|w| w[0] < w[1]), "{counts:?}");
        }
    }

    #[test]
    fn validation() {
        assert!(TransformerConfig::new(2, 3, 64, 10).validate().is_err());
        assert!(TransformerConfig::new(2, 2, 64, 10)
            .with_max_seq_len(1)
            .validate()
            .is_err());
        assert!(TransformerConfig::new(2, 2, 64, 10).validate().is_ok());
    }

    #[test]
    fn lr_interpolation() {
        assert_eq!(interpolated_lr(1_000), SMALL_LR_CAP);
        assert!((interpolated_lr(390_625) - 2.0e-3).abs() < 1e-12);
        assert_eq!(interpolated_lr(50_000_000), 6.0e-4);
        assert_eq!(interpolated_lr(125_000_000), 6.0e-4);
        assert_eq!(interpolated_lr(20_000_000_000), 1.0e-4);
        let mid = interpolated_lr(2_000_000_000);
        assert!(mid < 2.0e-4 && mid > 1.6e-4);
        assert!((interpolated_lr(355_000_000) - 3.0e-4).abs() < 1e-12);
    }
}
