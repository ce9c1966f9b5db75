//! In-browser training of a tiny causal model on a small corpus, with the
//! exact-memorization fraction and memory-unit lengths after every epoch.
//!
//! [`Lab`] and [`schedule_curve`] are plain Rust; the `wasm_bindgen`
//! wrappers below only translate arguments and errors.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use memlab::corpus::synth::{generate, SynthConfig};
use memlab::corpus::{Corpus, Dataset, Vocabulary, PREFIX_WORDS};
use memlab::harness::epoch_batches;
use memlab::metrics::{extract_contexts, score, ContextSet};
use memlab::model::{ModelState, Preset, Task};
use memlab::optim::{AdamState, LrSchedule, WARMUP_FRACTION};
use memlab::tensor::{Tape, Tensor};
use memlab::Result;

/// `points` evenly spaced `(tokens, lr)` samples over `[0, total_tokens]`.
pub fn schedule_curve(max_lr: f64, warmup_fraction: f64, total_tokens: u64, points: usize) -> Result<Vec<(f64, f64)>> {
    let s = LrSchedule::with_warmup_fraction(max_lr, total_tokens, warmup_fraction)?;
    let n = points.max(2);
    Ok((0..n)
        .map(|i| {
            let t = total_tokens as f64 * i as f64 / (n - 1) as f64;
            (t, s.lr_at(t))
        })
        .collect())
}

#[derive(Debug, Clone)]
pub struct LabOptions {
    pub preset: String,
    pub epochs: usize,
    pub batch_tokens: usize,
    pub max_seq_len: usize,
    pub max_vocab: usize,
    /// Peak learning rate; the preset default when `None`.
    pub lr: Option<f64>,
    pub seed: u64,
}

impl Default for LabOptions {
    fn default() -> Self {
        LabOptions {
            preset: "micro-xs".into(),
            epochs: 30,
            batch_tokens: 256,
            max_seq_len: 64,
            max_vocab: 1024,
            lr: None,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochPoint {
    pub epoch: usize,
    /// Exact-memorization fraction over every training context.
    pub m: f64,
    pub mean_unit_len: f64,
    pub mean_loss: f64,
}

pub struct Lab {
    opts: LabOptions,
    vocab: Vocabulary,
    data: Dataset,
    contexts: ContextSet,
    model: ModelState<f32>,
    adam: AdamState<f32>,
    schedule: LrSchedule,
    tokens: f64,
    epoch: usize,
}

impl Lab {
    pub fn from_text(text: &str, opts: LabOptions) -> Result<Lab> {
        let corpus = Corpus::parse(text)?;
        let vocab = corpus.build_vocab(opts.max_vocab, 1, &PREFIX_WORDS)?;
        let data = corpus.pack(&vocab, opts.max_seq_len, 0)?;
        let contexts = extract_contexts(&data, Task::Causal, 0, 0.0, &vocab)?;
        let preset = Preset::by_name(&opts.preset)?;
        let model = ModelState::<f32>::build(preset.config(vocab.len(), opts.max_seq_len, Task::Causal), opts.seed)?;
        let shapes: Vec<Vec<usize>> = model.params().iter().map(|(_, t)| t.shape().to_vec()).collect();
        let adam = AdamState::new(shapes.iter().map(Vec::as_slice));
        let lr = opts
            .lr
            .unwrap_or_else(|| preset.default_lr(vocab.len(), opts.max_seq_len));
        let total = (data.num_tokens() * opts.epochs.max(1)) as u64;
        let schedule = LrSchedule::with_warmup_fraction(lr, total, WARMUP_FRACTION)?;
        Ok(Lab {
            opts,
            vocab,
            data,
            contexts,
            model,
            adam,
            schedule,
            tokens: 0.0,
            epoch: 0,
        })
    }

    pub fn synthetic(documents: usize, corpus_seed: u64, opts: LabOptions) -> Result<Lab> {
        let synth = generate(&SynthConfig {
            documents,
            min_sentences: 2,
            max_sentences: 4,
            nouns: 200,
            verbs: 60,
            adjectives: 60,
            first_names: 60,
            surnames: 120,
            places: 60,
            seed: corpus_seed,
            ..SynthConfig::default()
        })?;
        Lab::from_text(&synth.text, opts)
    }

    pub fn n_params(&self) -> u64 {
        self.model.param_count()
    }

    pub fn num_sequences(&self) -> usize {
        self.data.len()
    }

    pub fn num_tokens(&self) -> usize {
        self.data.num_tokens()
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn finished(&self) -> bool {
        self.epoch >= self.opts.epochs
    }

    /// One shuffled pass over the training sequences, then a full evaluation.
    pub fn train_epoch(&mut self) -> Result<EpochPoint> {
        self.epoch += 1;
        let mut losses = Vec::new();
        for seqs in epoch_batches(&self.data, self.opts.seed, self.epoch, self.opts.batch_tokens) {
            let mut inputs = Vec::new();
            let mut targets = Vec::new();
            let mut rows = Vec::new();
            for &i in &seqs {
                let ids = &self.data.sequences[i].ids;
                inputs.push(ids.as_slice());
                for t in 0..ids.len() {
                    targets.push(ids.get(t + 1).copied().unwrap_or(0));
                    rows.push(t + 1 < ids.len());
                }
            }
            if !rows.iter().any(|&r| r) {
                continue;
            }
            self.tokens += inputs.iter().map(|s| s.len()).sum::<usize>() as f64;
            let mut tape = Tape::<f32>::new();
            let pass = self.model.forward_on_tape(&mut tape, &inputs, true)?;
            let loss = tape.cross_entropy(pass.logits, &targets, &rows)?;
            losses.push(tape.value(loss).data()[0] as f64);
            let mut grads = tape.backward(loss)?;
            let grads: Vec<Tensor<f32>> = pass.params.iter().map(|&v| grads.take(v).expect("gradient")).collect();
            let grad_refs: Vec<&Tensor<f32>> = grads.iter().collect();
            let mut params: Vec<&mut Tensor<f32>> = self.model.params_mut().collect();
            self.adam
                .step(&mut params, &grad_refs, self.schedule.lr_at(self.tokens))?;
        }
        let scores = score(&self.model, &self.contexts, 4096)?;
        Ok(EpochPoint {
            epoch: self.epoch,
            m: scores.m(),
            mean_unit_len: self.contexts.memory_units(&scores).mean_len,
            mean_loss: losses.iter().sum::<f64>() / losses.len().max(1) as f64,
        })
    }

    /// The first `max_sequences` training sequences as `(word, memorized)`
    /// pairs. The first word of each sequence has no context and is never
    /// memorized.
    pub fn highlight(&self, max_sequences: usize) -> Result<Vec<Vec<(String, bool)>>> {
        let scores = score(&self.model, &self.contexts, 4096)?;
        Ok(self
            .contexts
            .bitmaps(&scores)
            .zip(&self.data.sequences)
            .take(max_sequences)
            .map(|(bits, s)| {
                let word = |id: u32| self.vocab.token(id).unwrap_or("<unk>").to_string();
                std::iter::once((word(s.ids[0]), false))
                    .chain(s.ids[1..].iter().zip(bits).map(|(&id, &hit)| (word(id), hit)))
                    .collect()
            })
            .collect())
    }
}

fn js_err(e: memlab::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// Flattened `[t0, lr0, t1, lr1, ...]`.
#[wasm_bindgen(js_name = scheduleCurve)]
pub fn schedule_curve_js(
    max_lr: f64,
    warmup_fraction: f64,
    total_tokens: f64,
    points: usize,
) -> std::result::Result<Vec<f64>, JsError> {
    let curve = schedule_curve(max_lr, warmup_fraction, total_tokens as u64, points).map_err(js_err)?;
    Ok(curve.into_iter().flat_map(|(t, lr)| [t, lr]).collect())
}

#[wasm_bindgen(js_name = Lab)]
pub struct LabHandle(Lab);

#[wasm_bindgen(js_class = Lab)]
impl LabHandle {
    /// Uses `text` when it is non-empty, otherwise a synthetic corpus of
    /// `documents` documents.
    #[wasm_bindgen(constructor)]
    pub fn new(
        text: &str,
        documents: usize,
        preset: &str,
        epochs: usize,
        lr: f64,
        seed: u64,
    ) -> std::result::Result<LabHandle, JsError> {
        let opts = LabOptions {
            preset: preset.to_string(),
            epochs,
            lr: (lr > 0.0).then_some(lr),
            seed,
            ..LabOptions::default()
        };
        let lab = if text.trim().is_empty() {
            Lab::synthetic(documents, seed, opts)
        } else {
            Lab::from_text(text, opts)
        };
        lab.map(LabHandle).map_err(js_err)
    }

    #[wasm_bindgen(getter)]
    pub fn summary(&self) -> String {
        format!(
            "{} parameters, {} sequences, {} tokens",
            self.0.n_params(),
            self.0.num_sequences(),
            self.0.num_tokens()
        )
    }

    #[wasm_bindgen(getter)]
    pub fn finished(&self) -> bool {
        self.0.finished()
    }

    /// JSON `{epoch, m, mean_unit_len, mean_loss}`.
    #[wasm_bindgen(js_name = trainEpoch)]
    pub fn train_epoch(&mut self) -> std::result::Result<String, JsError> {
        let p = self.0.train_epoch().map_err(js_err)?;
        Ok(serde_json::to_string(&p).expect("plain struct"))
    }

    /// JSON `[[[word, memorized], ...], ...]`.
    pub fn highlight(&self, max_sequences: usize) -> std::result::Result<String, JsError> {
        let h = self.0.highlight(max_sequences).map_err(js_err)?;
        Ok(serde_json::to_string(&h).expect("plain data"))
    }
}
