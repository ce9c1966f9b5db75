use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::{PositionKind, Task, TransformerConfig};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tape, Tensor, Var};
use crate::util::mix_seed;

pub const LAYER_NORM_EPS: f64 = 1e-5;
const INIT_STD: f64 = 0.02;
const INIT_STREAM: u64 = 0x1417;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Init {
    Normal,
    Zeros,
    Ones,
}

/// Names, shapes and initialization of every parameter, in storage order.
fn param_layout(config: &TransformerConfig) -> Vec<(String, Vec<usize>, Init)> {
    let (v, d, f) = (config.vocab_size, config.d_model, config.d_ffn);
    let mut out = vec![("tok_emb".to_string(), vec![v, d], Init::Normal)];
    if config.positions == PositionKind::Learned {
        out.push(("pos_emb".into(), vec![config.max_seq_len, d], Init::Normal));
    }
    for l in 0..config.n_layers {
        let p = |s: &str| format!("layers.{l}.{s}");
        out.extend([
            (p("ln1.gain"), vec![d], Init::Ones),
            (p("ln1.bias"), vec![d], Init::Zeros),
            (p("attn.qkv.weight"), vec![d, 3 * d], Init::Normal),
            (p("attn.qkv.bias"), vec![3 * d], Init::Zeros),
            (p("attn.out.weight"), vec![d, d], Init::Normal),
            (p("attn.out.bias"), vec![d], Init::Zeros),
            (p("ln2.gain"), vec![d], Init::Ones),
            (p("ln2.bias"), vec![d], Init::Zeros),
            (p("ffn.fc.weight"), vec![d, f], Init::Normal),
            (p("ffn.fc.bias"), vec![f], Init::Zeros),
            (p("ffn.proj.weight"), vec![f, d], Init::Normal),
            (p("ffn.proj.bias"), vec![d], Init::Zeros),
        ]);
    }
    if config.n_layers > 0 {
        out.push(("ln_f.gain".into(), vec![d], Init::Ones));
        out.push(("ln_f.bias".into(), vec![d], Init::Zeros));
    }
    if !config.tie_embeddings {
        out.push(("lm_head".into(), vec![v, d], Init::Normal));
    }
    out
}

/// Every learnable parameter of a transformer language model, plus the
/// config and seed that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState<T: Scalar = f32> {
    config: TransformerConfig,
    seed: u64,
    params: Vec<(String, Tensor<T>)>,
}

/// Result of recording a forward pass on a tape.
#[derive(Debug)]
pub struct ForwardPass {
    /// `[total tokens x V]`, rows ordered sequence by sequence.
    pub logits: Var,
    /// One var per parameter, aligned with [`ModelState::params`].
    pub params: Vec<Var>,
}

impl<T: Scalar> ModelState<T> {
    /// Seeded initialization: weights and embeddings from N(0, 0.02), layer
    /// norm gains 1, all biases 0. There is no dropout anywhere in the model.
    pub fn build(config: TransformerConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let params = param_layout(&config)
            .into_iter()
            .enumerate()
            .map(|(i, (name, shape, init))| {
                // One stream per tensor, so growing the vocabulary only
                // appends embedding rows and leaves every other weight as is.
                let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, INIT_STREAM, i as u64));
                let numel: usize = shape.iter().product();
                let data = match init {
                    Init::Normal => (0..numel).map(|_| T::from_f64(normal.sample(&mut rng))).collect(),
                    Init::Zeros => vec![T::zero(); numel],
                    Init::Ones => vec![T::one(); numel],
                };
                (name, Tensor::new(shape, data))
            })
            .collect();
        Ok(ModelState { config, seed, params })
    }

    /// Reassembles a model from named tensors, checking names and shapes
    /// against the config.
    pub fn from_params(config: TransformerConfig, seed: u64, params: Vec<(String, Tensor<T>)>) -> Result<Self> {
        config.validate()?;
        let layout = param_layout(&config);
        if layout.len() != params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameter tensors, found {}",
                layout.len(),
                params.len()
            )));
        }
        for ((name, shape, _), (pname, t)) in layout.iter().zip(&params) {
            if name != pname || shape.as_slice() != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {pname} {:?} does not match expected {name} {shape:?}",
                    t.shape()
                )));
            }
        }
        Ok(ModelState { config, seed, params })
    }

    /// Number of parameter tensors a model with `config` holds.
    pub fn build_layout_len(config: &TransformerConfig) -> usize {
        param_layout(config).len()
    }

    /// Parameter names and shapes in storage order.
    pub fn layout(config: &TransformerConfig) -> Vec<(String, Vec<usize>)> {
        param_layout(config).into_iter().map(|(n, s, _)| (n, s)).collect()
    }

    pub fn config(&self) -> &TransformerConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self) -> &[(String, Tensor<T>)] {
        &self.params
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Tensor<T>> {
        self.params.iter_mut().map(|(_, t)| t)
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.params.iter_mut().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn param_count(&self) -> u64 {
        self.params.iter().map(|(_, t)| t.numel() as u64).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ModelState<U> {
        ModelState {
            config: self.config.clone(),
            seed: self.seed,
            params: self.params.iter().map(|(n, t)| (n.clone(), t.cast())).collect(),
        }
    }

    fn check_inputs(&self, inputs: &[&[u32]]) -> Result<()> {
        if inputs.is_empty() {
            return Err(Error::Input("empty batch".into()));
        }
        for (i, seq) in inputs.iter().enumerate() {
            if seq.is_empty() {
                return Err(Error::Input(format!("sequence {i} is empty")));
            }
            if seq.len() > self.config.max_seq_len {
                return Err(Error::Input(format!(
                    "sequence {i} has {} tokens, longer than max_seq_len {}",
                    seq.len(),
                    self.config.max_seq_len
                )));
            }
            if let Some(&bad) = seq.iter().find(|&&t| t as usize >= self.config.vocab_size) {
                return Err(Error::Input(format!(
                    "token id {bad} in sequence {i} outside vocabulary of {}",
                    self.config.vocab_size
                )));
            }
        }
        Ok(())
    }

    /// Records the forward pass of a batch of variable-length sequences.
    /// The attention pattern (causal or bidirectional) follows the config's task.
    pub fn forward_on_tape(&self, tape: &mut Tape<T>, inputs: &[&[u32]], track_grads: bool) -> Result<ForwardPass> {
        self.check_inputs(inputs)?;
        let params: Vec<Var> = self
            .params
            .iter()
            .map(|(_, t)| tape.leaf(t.clone(), track_grads))
            .collect();
        let logits = self.forward_with(tape, &params, inputs)?;
        Ok(ForwardPass { logits, params })
    }

    /// Records the forward pass using caller-provided parameter vars, laid
    /// out as in [`ModelState::params`]. Returns the logits var.
    pub fn forward_with(&self, tape: &mut Tape<T>, params: &[Var], inputs: &[&[u32]]) -> Result<Var> {
        self.check_inputs(inputs)?;
        if params.len() != self.params.len() {
            return Err(Error::Usage(format!(
                "expected {} parameter vars, got {}",
                self.params.len(),
                params.len()
            )));
        }
        let cfg = &self.config;
        let mut next = params.iter().copied();
        let mut take = || next.next().expect("parameter layout");

        let ids: Vec<u32> = inputs.iter().flat_map(|s| s.iter().copied()).collect();
        let segments: Vec<usize> = inputs.iter().map(|s| s.len()).collect();
        let tok_emb = take();
        let mut x = tape.embedding(tok_emb, &ids);
        if cfg.positions == PositionKind::Learned {
            let pos_emb = take();
            let positions: Vec<u32> = segments.iter().flat_map(|&l| 0..l as u32).collect();
            let p = tape.embedding(pos_emb, &positions);
            x = tape.add(x, p);
        }
        let causal = cfg.task == Task::Causal;
        for _ in 0..cfg.n_layers {
            let (ln1_g, ln1_b) = (take(), take());
            let (w_qkv, b_qkv, w_o, b_o) = (take(), take(), take(), take());
            let (ln2_g, ln2_b) = (take(), take());
            let (w_fc, b_fc, w_proj, b_proj) = (take(), take(), take(), take());

            let h = tape.layer_norm(x, ln1_g, ln1_b, LAYER_NORM_EPS);
            let qkv = tape.matmul(h, w_qkv);
            let qkv = tape.add_bias(qkv, b_qkv);
            let a = tape.attention(qkv, &segments, cfg.n_heads, causal);
            let a = tape.matmul(a, w_o);
            let a = tape.add_bias(a, b_o);
            x = tape.add(x, a);

            let h = tape.layer_norm(x, ln2_g, ln2_b, LAYER_NORM_EPS);
            let f = tape.matmul(h, w_fc);
            let f = tape.add_bias(f, b_fc);
            let f = tape.gelu(f)?;
            let f = tape.matmul(f, w_proj);
            let f = tape.add_bias(f, b_proj);
            x = tape.add(x, f);
        }
        if cfg.n_layers > 0 {
            let (g, b) = (take(), take());
            x = tape.layer_norm(x, g, b, LAYER_NORM_EPS);
        }
        let head = if cfg.tie_embeddings { tok_emb } else { take() };
        let logits = tape.matmul_nt(x, head);
        if !tape.value(logits).is_finite() {
            return Err(Error::Numeric("forward pass produced non-finite logits".into()));
        }
        Ok(logits)
    }

    /// Logits per sequence, each `[len x V]`.
    pub fn forward(&self, inputs: &[&[u32]]) -> Result<Vec<Tensor<T>>> {
        let mut tape = Tape::new();
        let pass = self.forward_on_tape(&mut tape, inputs, false)?;
        let logits = tape.value(pass.logits);
        let v = self.config.vocab_size;
        let mut out = Vec::with_capacity(inputs.len());
        let mut row = 0;
        for seq in inputs {
            let start = row * v;
            let end = (row + seq.len()) * v;
            out.push(Tensor::new(vec![seq.len(), v], logits.data()[start..end].to_vec()));
            row += seq.len();
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(task: Task) -> TransformerConfig {
        TransformerConfig::new(2, 2, 16, 40)
            .with_max_seq_len(12)
            .with_task(task)
    }

    #[test]
    fn vocab_growth_keeps_existing_weights() {
        let a = ModelState::<f32>::build(tiny(Task::Causal), 7).unwrap();
        let b = ModelState::<f32>::build(tiny(Task::Causal).with_vocab_size(45), 7).unwrap();
        for ((na, ta), (_, tb)) in a.params().iter().zip(b.params()) {
            let n = ta.data().len();
            assert_eq!(ta.data(), &tb.data()[..n], "{na}");
        }
    }

    #[test]
    fn deterministic_init() {
        let a = ModelState::<f32>::build(tiny(Task::Causal), 7).unwrap();
        let b = ModelState::<f32>::build(tiny(Task::Causal), 7).unwrap();
        assert_eq!(a, b);
        let c = ModelState::<f32>::build(tiny(Task::Causal), 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn param_count_matches_layout() {
        for cfg in [tiny(Task::Causal), {
            let mut c = tiny(Task::Masked);
            c.tie_embeddings = false;
            c.positions = PositionKind::None;
            c
        }] {
            let m = ModelState::<f32>::build(cfg.clone(), 0).unwrap();
            assert_eq!(m.param_count(), cfg.param_count());
        }
    }

    #[test]
    fn rejects_bad_head_split() {
        let cfg = TransformerConfig::new(1, 3, 16, 10);
        assert!(matches!(ModelState::<f32>::build(cfg, 0), Err(Error::Config(_))));
    }

    #[test]
    fn rejects_long_sequence() {
        let m = ModelState::<f32>::build(tiny(Task::Causal), 0).unwrap();
        let seq = vec![1u32; 13];
        assert!(matches!(m.forward(&[&seq]), Err(Error::Input(_))));
    }

    #[test]
    fn causal_prefix_is_unaffected_by_future_tokens() {
        let m = ModelState::<f32>::build(tiny(Task::Causal), 3).unwrap();
        let a = [5u32, 9, 1, 30, 2, 7];
        let mut b = a;
        b[4] = 39;
        b[5] = 0;
        let la = &m.forward(&[&a]).unwrap()[0];
        let lb = &m.forward(&[&b]).unwrap()[0];
        let v = 40;
        assert_eq!(la.data()[..4 * v], lb.data()[..4 * v]);
        assert_ne!(la.data()[4 * v..], lb.data()[4 * v..]);
    }

    #[test]
    fn masked_attention_sees_the_future() {
        let m = ModelState::<f32>::build(tiny(Task::Masked), 3).unwrap();
        let a = [5u32, 9, 1, 30];
        let mut b = a;
        b[3] = 11;
        let la = &m.forward(&[&a]).unwrap()[0];
        let lb = &m.forward(&[&b]).unwrap()[0];
        assert_ne!(la.data()[..40], lb.data()[..40]);
    }

    #[test]
    fn batching_matches_single_sequences() {
        let m = ModelState::<f32>::build(tiny(Task::Causal), 1).unwrap();
        let a = [1u32, 2, 3];
        let b = [4u32, 5, 6, 7, 8];
        let both = m.forward(&[&a, &b]).unwrap();
        let single = m.forward(&[&b]).unwrap();
        for (x, y) in both[1].data().iter().zip(single[0].data()) {
            assert!((x - y).abs() < 1e-6);
        }
    }
}
