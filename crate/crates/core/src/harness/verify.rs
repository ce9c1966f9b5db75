//! Fast self-checks: gradients, optimizer and schedule contracts, mask
//! rate, metric sanity and run determinism.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{CorpusSource, ModelSpec, RunConfig, Stop};
use super::train::{run_training, RunOptions};
use crate::corpus::synth::SynthConfig;
use crate::corpus::{mask_layout, MaskStyle, PackedSequence, Vocabulary};
use crate::error::Result;
use crate::metrics::{detect_overfit_epoch, memory_unit_lengths, rolling_average, threshold_crossing};
use crate::model::{ModelState, Task, TransformerConfig};
use crate::optim::{AdamState, LrSchedule};
use crate::tensor::{finite_difference_check, GradCheckConfig, Tape, Tensor, Var};

/// Largest acceptable relative gradient error.
pub const GRAD_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Check {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

fn random(shape: &[usize], scale: f64, seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-scale..scale)).collect())
}

/// Sum of `y` weighted by fixed pseudo-random coefficients, so that no
/// gradient vanishes by symmetry.
fn probe(t: &mut Tape<f64>, y: Var, seed: u64) -> Var {
    let w = random(t.value(y).shape(), 1.0, seed ^ 0x5eed);
    let w = t.constant(w);
    let p = t.mul(y, w);
    t.sum(p)
}

fn grad_config() -> GradCheckConfig {
    GradCheckConfig {
        coordinates: 60,
        ..GradCheckConfig::default()
    }
}

/// Random inputs drawn per op.
pub const OP_TRIALS: u64 = 10;

/// Worst relative error of every differentiable tape op over
/// [`OP_TRIALS`] random inputs each.
pub fn gradcheck_ops() -> Result<Vec<(String, f64)>> {
    let mut worst: Vec<(String, f64)> = Vec::new();
    for trial in 0..OP_TRIALS {
        for (i, (name, err)) in ops_at(trial)?.into_iter().enumerate() {
            match worst.get_mut(i) {
                Some(w) => w.1 = w.1.max(err),
                None => worst.push((name, err)),
            }
        }
    }
    Ok(worst)
}

fn ops_at(trial: u64) -> Result<Vec<(String, f64)>> {
    let random = |shape: &[usize], scale: f64, seed: u64| random(shape, scale, seed + 1000 * trial);
    let cfg = grad_config();
    let mut out = Vec::new();
    let mut run = |name: &str, x: Tensor<f64>, f: &dyn Fn(&mut Tape<f64>, Var) -> Result<Var>| -> Result<()> {
        out.push((name.to_string(), finite_difference_check(f, &x, &cfg)?));
        Ok(())
    };
    let a = random(&[4, 5], 1.0, 1);
    let b = random(&[4, 5], 1.0, 2);
    let m = random(&[5, 3], 1.0, 3);
    let bias = random(&[5], 1.0, 4);

    run("add", a.clone(), &|t, x| {
        let c = t.constant(b.clone());
        let y = t.add(x, c);
        Ok(probe(t, y, 10))
    })?;
    run("mul", a.clone(), &|t, x| {
        let c = t.constant(b.clone());
        let y = t.mul(x, c);
        Ok(probe(t, y, 11))
    })?;
    run("scale", a.clone(), &|t, x| {
        let y = t.scale(x, 0.7);
        Ok(probe(t, y, 12))
    })?;
    run("add_bias/x", a.clone(), &|t, x| {
        let c = t.constant(bias.clone());
        let y = t.add_bias(x, c);
        Ok(probe(t, y, 13))
    })?;
    run("add_bias/bias", bias.clone(), &|t, x| {
        let c = t.constant(a.clone());
        let y = t.add_bias(c, x);
        Ok(probe(t, y, 13))
    })?;
    run("matmul/a", a.clone(), &|t, x| {
        let c = t.constant(m.clone());
        let y = t.matmul(x, c);
        Ok(probe(t, y, 14))
    })?;
    run("matmul/b", m.clone(), &|t, x| {
        let c = t.constant(a.clone());
        let y = t.matmul(c, x);
        Ok(probe(t, y, 14))
    })?;
    run("matmul_nt/a", a.clone(), &|t, x| {
        let c = t.constant(b.clone());
        let y = t.matmul_nt(x, c);
        Ok(probe(t, y, 15))
    })?;
    run("matmul_nt/b", b.clone(), &|t, x| {
        let c = t.constant(a.clone());
        let y = t.matmul_nt(c, x);
        Ok(probe(t, y, 15))
    })?;
    run("gelu", random(&[4, 5], 3.0, 5), &|t, x| {
        let y = t.gelu(x)?;
        Ok(probe(t, y, 16))
    })?;
    for axis in [0, 1] {
        run(&format!("softmax/axis{axis}"), random(&[4, 5], 2.0, 6), &|t, x| {
            let y = t.softmax(x, axis);
            Ok(probe(t, y, 17))
        })?;
    }
    let gain = random(&[5], 1.0, 7);
    run("layer_norm/x", a.clone(), &|t, x| {
        let (g, c) = (t.constant(gain.clone()), t.constant(bias.clone()));
        let y = t.layer_norm(x, g, c, 1e-5);
        Ok(probe(t, y, 18))
    })?;
    run("layer_norm/gain", gain.clone(), &|t, x| {
        let (v, c) = (t.constant(a.clone()), t.constant(bias.clone()));
        let y = t.layer_norm(v, x, c, 1e-5);
        Ok(probe(t, y, 18))
    })?;
    run("layer_norm/bias", bias.clone(), &|t, x| {
        let (v, g) = (t.constant(a.clone()), t.constant(gain.clone()));
        let y = t.layer_norm(v, g, x, 1e-5);
        Ok(probe(t, y, 18))
    })?;
    run("embedding", random(&[6, 3], 1.0, 8), &|t, x| {
        let y = t.embedding(x, &[0, 3, 3, 5, 1]);
        Ok(probe(t, y, 19))
    })?;
    for causal in [true, false] {
        let name = if causal {
            "attention/causal"
        } else {
            "attention/bidirectional"
        };
        run(name, random(&[5, 12], 1.0, 9), &|t, x| {
            let y = t.attention(x, &[3, 2], 2, causal);
            Ok(probe(t, y, 20))
        })?;
    }
    run("cross_entropy", random(&[4, 6], 2.0, 21), &|t, x| {
        t.cross_entropy(x, &[1, 5, 0, 2], &[true, true, false, true])
    })?;
    run("sum", a.clone(), &|t, x| Ok(t.sum(x)))?;
    Ok(out)
}

/// Worst relative error of the full model loss with respect to each
/// parameter tensor of a 2-layer model.
pub fn gradcheck_transformer(task: Task) -> Result<Vec<(String, f64)>> {
    let mut cfg = TransformerConfig::new(2, 2, 8, 11).with_max_seq_len(6).with_task(task);
    cfg.d_ffn = 16;
    let model = ModelState::<f64>::build(cfg, 3)?;
    let inputs: Vec<Vec<u32>> = vec![vec![4, 7, 2, 9, 5], vec![10, 6, 8]];
    let (targets, include): (Vec<u32>, Vec<bool>) = match task {
        Task::Causal => inputs
            .iter()
            .flat_map(|s| (0..s.len()).map(move |t| (s.get(t + 1).copied().unwrap_or(0), t + 1 < s.len())))
            .unzip(),
        Task::Masked => (
            vec![4, 7, 3, 9, 5, 10, 1, 8],
            vec![false, true, true, false, true, true, false, true],
        ),
    };
    let refs: Vec<&[u32]> = inputs.iter().map(Vec::as_slice).collect();
    // Inflate the weights so that every layer contributes visibly.
    let params: Vec<Tensor<f64>> = model
        .params()
        .iter()
        .enumerate()
        .map(|(i, (_, p))| {
            let mut p = p.clone();
            let noise = random(p.shape(), 0.3, 100 + i as u64);
            for (v, n) in p.data_mut().iter_mut().zip(noise.data()) {
                *v += n;
            }
            p
        })
        .collect();
    let config = GradCheckConfig {
        coordinates: 40,
        ..GradCheckConfig::default()
    };
    let mut out = Vec::new();
    for (i, (name, _)) in model.params().iter().enumerate() {
        let f = |t: &mut Tape<f64>, leaf: Var| -> Result<Var> {
            let vars: Vec<Var> = params
                .iter()
                .enumerate()
                .map(|(j, p)| if j == i { leaf } else { t.constant(p.clone()) })
                .collect();
            let logits = model.forward_with(t, &vars, &refs)?;
            t.cross_entropy(logits, &targets, &include)
        };
        out.push((name.clone(), finite_difference_check(f, &params[i], &config)?));
    }
    Ok(out)
}

/// `lr_at` at 0, the end of warmup and the end of the budget.
pub fn schedule_contract() -> Result<Check> {
    let s = LrSchedule::new(1e-3, 375, 100_000)?;
    let values = [s.lr_at(0.0), s.lr_at(375.0), s.lr_at(100_000.0), s.lr_at(50_187.5)];
    let ok = values[0] == 0.0 && values[1] == 1e-3 && values[2] == 0.0 && (values[3] - 5e-4).abs() < 1e-15;
    Ok(Check::new("schedule boundaries", ok, format!("{values:?}")))
}

/// Zero gradients from a fresh state leave parameters untouched.
pub fn adam_fixed_point() -> Result<Check> {
    let mut p = random(&[3, 4], 1.0, 30).cast::<f32>();
    let before = p.clone();
    let mut adam = AdamState::<f32>::new([p.shape()]);
    let zero = Tensor::<f32>::zeros(p.shape());
    for _ in 0..5 {
        adam.step(&mut [&mut p], &[&zero], 1e-2)?;
    }
    Ok(Check::new("adam zero-gradient fixed point", p == before, ""))
}

/// Fraction of eligible positions masked at `p` over `positions` tokens.
pub fn mask_rate(p: f64, positions: usize, seed: u64) -> f64 {
    let vocab = Vocabulary::specials_only();
    let len = 500;
    let mut masked = 0usize;
    let mut total = 0usize;
    let mut i = 0u64;
    while total < positions {
        let seq = PackedSequence {
            ids: (0..len as u32).map(|t| 4 + t % 97).collect(),
            doc: i as usize,
            source_offset: 0,
            sentence_ends: vec![len],
            truncated: false,
            tags: None,
            prefix_len: 0,
            mask: None,
        };
        masked += mask_layout(&seq, p, seed, i, MaskStyle::MaskOnly, &vocab)
            .positions
            .len();
        total += len;
        i += 1;
    }
    masked as f64 / total as f64
}

/// Spot checks of the metric helpers against hand-derived values.
pub fn metric_sanity() -> Result<Check> {
    let bits: Vec<bool> = "0111011001".chars().map(|c| c == '1').collect();
    let mu = memory_unit_lengths([bits.as_slice()]);
    let roll = rolling_average(&[1.0, 2.0, 3.0, 4.0], 2)?;
    let cross = threshold_crossing(&[0.1, 0.5, 0.4, 0.95], 0.45)?;
    let ok = mu.runs == 3
        && mu.mean_len == 2.0
        && roll == vec![1.0, 1.5, 2.5, 3.5]
        && cross.index == Some(2)
        && detect_overfit_epoch(&[3.0, 2.0, 2.5]) == Some(3);
    Ok(Check::new("metric spot values", ok, ""))
}

fn tiny_run(seed: u64) -> RunConfig {
    let mut c = RunConfig::new(ModelSpec::Preset("micro-xs".into()), Task::Causal, Stop::Epochs(2), 256);
    c.data.corpus = CorpusSource::Synthetic(SynthConfig {
        documents: 16,
        min_sentences: 3,
        max_sentences: 4,
        seed: 5,
        ..SynthConfig::default()
    });
    c.data.max_seq_len = 64;
    c.data.validation_fraction = 0.25;
    c.seed = seed;
    c
}

/// Two identical runs write identical logs; a run halted after its first
/// epoch and resumed writes the same log as an uninterrupted one.
pub fn determinism(scratch: &std::path::Path) -> Result<Check> {
    let cfg = tiny_run(1);
    let read = |root: &std::path::Path| -> Result<Vec<u8>> {
        let p = root.join(cfg.run_id()?).join(super::train::METRICS_FILE);
        std::fs::read(&p).map_err(|e| crate::Error::Io { path: p, source: e })
    };
    let (a, b, c) = (scratch.join("a"), scratch.join("b"), scratch.join("c"));
    run_training(&cfg, &a, &RunOptions::default())?;
    run_training(&cfg, &b, &RunOptions::default())?;
    let halted = RunOptions {
        checkpoint_at: vec![1],
        halt_after_epoch: Some(1),
        ..Default::default()
    };
    run_training(&cfg, &c, &halted)?;
    run_training(
        &cfg,
        &c,
        &RunOptions {
            resume: true,
            ..Default::default()
        },
    )?;
    let (la, lb, lc) = (read(&a)?, read(&b)?, read(&c)?);
    Ok(Check::new(
        "determinism and resume",
        la == lb && la == lc,
        format!("{} bytes", la.len()),
    ))
}

/// Runs every check; `scratch` receives the small training runs.
pub fn run_suite(scratch: &std::path::Path) -> Result<Vec<Check>> {
    let mut checks = Vec::new();
    let ops = gradcheck_ops()?;
    let worst = ops
        .iter()
        .cloned()
        .fold(("none".to_string(), 0.0), |a, b| if b.1 > a.1 { b } else { a });
    checks.push(Check::new(
        "gradient check: tape ops",
        worst.1 < GRAD_TOLERANCE,
        format!("{} ops, worst {} at {:.2e}", ops.len(), worst.0, worst.1),
    ));
    for task in [Task::Causal, Task::Masked] {
        let errs = gradcheck_transformer(task)?;
        let worst = errs
            .iter()
            .cloned()
            .fold(("none".to_string(), 0.0), |a, b| if b.1 > a.1 { b } else { a });
        checks.push(Check::new(
            format!("gradient check: 2-layer {task:?} model"),
            worst.1 < GRAD_TOLERANCE,
            format!("{} tensors, worst {} at {:.2e}", errs.len(), worst.0, worst.1),
        ));
    }
    checks.push(schedule_contract()?);
    checks.push(adam_fixed_point()?);
    let rate = mask_rate(0.15, 1_000_000, 0);
    checks.push(Check::new(
        "mask rate at 0.15",
        (0.149..=0.151).contains(&rate),
        format!("{rate:.5}"),
    ));
    checks.push(metric_sanity()?);
    checks.push(determinism(scratch)?);
    Ok(checks)
}
