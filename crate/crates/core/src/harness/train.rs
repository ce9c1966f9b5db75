use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{RunConfig, Stop};
use super::data::{prepare, Prepared};
use super::log::{read_records, MetricLog, MetricRecord, RecordKind};
use crate::corpus::{mask_layout, Dataset};
use crate::error::{Error, Result};
use crate::metrics::{extract_contexts, score, update_memorization, ContextSet, EpochRecord, MemorizationHistory};
use crate::model::{Checkpoint, ModelState, Preset, Task, TransformerConfig};
use crate::optim::{AdamState, LrSchedule};
use crate::tensor::{Tape, Tensor};
use crate::util::{mix_seed, sha256_hex};

const SHUFFLE_STREAM: u64 = 1;
const TRAIN_MASK_STREAM: u64 = 2;
const INJECT_STREAM: u64 = 3;

pub const CONFIG_FILE: &str = "config.resolved.json";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const DONE_FILE: &str = "done.json";
pub const DATASET_FILE: &str = "dataset.json";

/// Derived quantities written next to the config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedRun {
    pub run_id: String,
    pub config_hash: String,
    pub model: TransformerConfig,
    pub n_params: u64,
    pub vocab_size: usize,
    pub schedule: LrSchedule,
    pub epoch_tokens: u64,
    pub max_epochs: usize,
    pub train_sequences: usize,
    pub special_sequences: usize,
    pub mean_packed_len: f64,
    pub injection_epochs: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedConfig {
    pub config: RunConfig,
    pub resolved: ResolvedRun,
}

impl ResolvedConfig {
    pub fn load(run_dir: &Path) -> Result<Self> {
        let path = run_dir.join(CONFIG_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Start the run from another run's checkpoint (taken at the end of
/// `epoch`). The other run must share this run's config apart from the
/// forgetting protocol and label.
#[derive(Debug, Clone, PartialEq)]
pub struct WarmStart {
    pub run_dir: PathBuf,
    pub epoch: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunOptions {
    /// Return the logged records of an identical completed run instead of
    /// training again.
    pub reuse_complete: bool,
    /// Continue from this run's newest checkpoint if one exists.
    pub resume: bool,
    pub warm_start: Option<WarmStart>,
    /// Extra epochs at which to checkpoint.
    pub checkpoint_at: Vec<usize>,
    /// Stop after this many epochs as if interrupted (for testing resume).
    pub halt_after_epoch: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub resolved: ResolvedConfig,
    pub records: Vec<MetricRecord>,
}

impl RunOutcome {
    pub fn run_id(&self) -> &str {
        &self.resolved.resolved.run_id
    }

    pub fn n_params(&self) -> u64 {
        self.resolved.resolved.n_params
    }

    pub fn of_kind(&self, kind: RecordKind) -> impl Iterator<Item = &MetricRecord> {
        self.records.iter().filter(move |r| r.kind == kind)
    }

    pub fn history(&self) -> MemorizationHistory {
        history_from_records(&self.records, self.n_params(), &self.resolved.resolved.config_hash)
    }

    pub fn m_series(&self) -> Vec<f64> {
        self.of_kind(RecordKind::Epoch).filter_map(|r| r.m).collect()
    }
}

pub fn history_from_records(records: &[MetricRecord], n_params: u64, config_hash: &str) -> MemorizationHistory {
    let mut h = MemorizationHistory {
        n_params,
        config_hash: config_hash.to_string(),
        ..Default::default()
    };
    let ppl: std::collections::BTreeMap<u64, f64> = records
        .iter()
        .filter(|r| r.kind == RecordKind::Special)
        .filter_map(|r| r.ppl_val.map(|p| (r.index, p)))
        .collect();
    for r in records {
        match (r.kind, r.m) {
            (RecordKind::Epoch, Some(m)) => h.epochs.push(EpochRecord {
                epoch: r.index as usize,
                m,
                ppl_val: r.ppl_val.or_else(|| ppl.get(&r.index).copied()),
            }),
            (RecordKind::Update, Some(m)) => h.updates.push(crate::metrics::UpdateRecord {
                update: r.index,
                m_update: m,
                batch: r.batch.unwrap_or(0) as usize,
            }),
            _ => {}
        }
    }
    h
}

struct Batch {
    inputs: Vec<Vec<u32>>,
    targets: Vec<u32>,
    loss_rows: Vec<bool>,
    metric_rows: Vec<bool>,
    tokens: u64,
}

fn group(order: &[usize], ds: &Dataset, batch_tokens: usize) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = Vec::new();
    let mut cur: Vec<usize> = Vec::new();
    let mut tokens = 0;
    for &i in order {
        let len = ds.sequences[i].len();
        if !cur.is_empty() && tokens + len > batch_tokens {
            out.push(std::mem::take(&mut cur));
            tokens = 0;
        }
        cur.push(i);
        tokens += len;
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

fn shuffled(n: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order
}

/// Token-budget batches of one epoch, in the epoch's shuffled order.
pub fn epoch_batches(ds: &Dataset, seed: u64, epoch: usize, batch_tokens: usize) -> Vec<Vec<usize>> {
    group(
        &shuffled(ds.len(), mix_seed(seed, SHUFFLE_STREAM, epoch as u64)),
        ds,
        batch_tokens,
    )
}

struct Trainer<'a> {
    cfg: &'a RunConfig,
    run_id: String,
    dir: PathBuf,
    data: Prepared,
    model: ModelState<f32>,
    adam: AdamState<f32>,
    schedule: LrSchedule,
    train_ctx: ContextSet,
    special_ctx: ContextSet,
    max_epochs: usize,
    injections: Vec<usize>,
    epoch: usize,
    update: u64,
    tokens: u64,
    log: MetricLog,
    started: Instant,
}

fn checkpoint_path(dir: &Path, epoch: usize) -> PathBuf {
    dir.join("checkpoints").join(format!("epoch-{epoch:04}.ck"))
}

/// Runs (or resumes, or reuses) one training run under `root/<run_id>/`.
pub fn run_training(cfg: &RunConfig, root: &Path, opts: &RunOptions) -> Result<RunOutcome> {
    cfg.validate()?;
    let run_id = cfg.run_id()?;
    let dir = root.join(&run_id);
    if opts.reuse_complete {
        if let Some(done) = load_complete(cfg, &dir)? {
            return Ok(done);
        }
    }
    let data = prepare(&cfg.data)?;
    let model_cfg = cfg.model.resolve(data.vocab.len(), cfg.data.max_seq_len, cfg.task)?;
    let model = ModelState::<f32>::build(model_cfg.clone(), cfg.seed)?;
    let shapes: Vec<Vec<usize>> = model.params().iter().map(|(_, t)| t.shape().to_vec()).collect();
    let adam = AdamState::new(shapes.iter().map(Vec::as_slice));

    let epoch_tokens = data.train.num_tokens() as u64;
    let (max_epochs, total_tokens) = plan(cfg, &data.train);
    let max_lr = match (cfg.lr, &cfg.model) {
        (Some(lr), _) => lr,
        (None, crate::harness::ModelSpec::Preset(name)) => {
            Preset::by_name(name)?.default_lr(data.vocab.len(), cfg.data.max_seq_len)
        }
        (None, _) => crate::model::interpolated_lr(model.param_count()),
    };
    let schedule = LrSchedule::with_warmup_fraction(max_lr, total_tokens, cfg.warmup_fraction)?;
    let injections = cfg
        .forgetting
        .as_ref()
        .map(|f| f.injection_epochs(max_epochs))
        .unwrap_or_default();

    let train_ctx = extract_contexts(
        &data.train,
        cfg.task,
        cfg.data.eval_mask_seed,
        cfg.data.mask_p,
        &data.vocab,
    )?;
    let special_ctx = extract_contexts(
        &data.special,
        cfg.task,
        cfg.data.eval_mask_seed,
        cfg.data.mask_p,
        &data.vocab,
    )?;

    let resolved = ResolvedConfig {
        config: cfg.clone(),
        resolved: ResolvedRun {
            run_id: run_id.clone(),
            config_hash: cfg.hash()?,
            n_params: model.param_count(),
            vocab_size: data.vocab.len(),
            model: model_cfg,
            schedule,
            epoch_tokens,
            max_epochs,
            train_sequences: data.train.len(),
            special_sequences: data.special.len(),
            mean_packed_len: data.train.mean_len(),
            injection_epochs: injections.clone(),
        },
    };
    std::fs::create_dir_all(dir.join("checkpoints")).map_err(|e| Error::io(&dir, e))?;
    std::fs::create_dir_all(dir.join("figures")).map_err(|e| Error::io(&dir, e))?;
    write_file(&dir.join(CONFIG_FILE), &crate::util::canonical_json(&resolved)?)?;
    write_file(&dir.join(DATASET_FILE), &crate::util::canonical_json(&data.manifest)?)?;
    let _ = std::fs::remove_file(dir.join(DONE_FILE));

    let metrics_path = dir.join(METRICS_FILE);
    let mut trainer = Trainer {
        cfg,
        run_id: run_id.clone(),
        dir: dir.clone(),
        data,
        model,
        adam,
        schedule,
        train_ctx,
        special_ctx,
        max_epochs,
        injections,
        epoch: 0,
        update: 0,
        tokens: 0,
        log: MetricLog::create(&metrics_path.with_extension("tmp"))?,
        started: Instant::now(),
    };
    let _ = std::fs::remove_file(metrics_path.with_extension("tmp"));

    let own_ck = if opts.resume { latest_checkpoint(&dir)? } else { None };
    if let Some((epoch, path)) = own_ck {
        trainer.restore(&path)?;
        let (update, e) = (trainer.update, epoch as u64);
        MetricLog::truncate(&metrics_path, |r| keep_until(r, e, update))?;
        trainer.log = MetricLog::append_to(&metrics_path)?;
    } else if let Some(ws) = &opts.warm_start {
        trainer.warm_start(ws, &metrics_path)?;
    } else {
        trainer.log = MetricLog::create(&metrics_path)?;
    }
    let resumed = trainer.epoch > 0;
    trainer.run(opts, resumed)?;
    let records = read_records(&metrics_path)?;
    if opts.halt_after_epoch.is_none_or(|h| h >= trainer.max_epochs) {
        let digest = sha256_hex(&std::fs::read(&metrics_path).map_err(|e| Error::io(&metrics_path, e))?);
        let done = serde_json::json!({
            "records": records.len(),
            "metrics_sha256": digest,
            "version": env!("CARGO_PKG_VERSION"),
        });
        write_file(&dir.join(DONE_FILE), &done.to_string())?;
    }
    Ok(RunOutcome { dir, resolved, records })
}

fn keep_until(r: &MetricRecord, epoch: u64, update: u64) -> bool {
    match r.kind {
        RecordKind::Update => r.index <= update,
        RecordKind::Inject => r.index < epoch,
        RecordKind::Epoch | RecordKind::Special => r.index <= epoch,
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn load_complete(cfg: &RunConfig, dir: &Path) -> Result<Option<RunOutcome>> {
    let done_path = dir.join(DONE_FILE);
    let Ok(done) = std::fs::read_to_string(&done_path) else {
        return Ok(None);
    };
    let Ok(resolved) = ResolvedConfig::load(dir) else {
        return Ok(None);
    };
    if resolved.config.hash()? != cfg.hash()? {
        return Ok(None);
    }
    let metrics_path = dir.join(METRICS_FILE);
    let Ok(bytes) = std::fs::read(&metrics_path) else {
        return Ok(None);
    };
    let done: serde_json::Value = serde_json::from_str(&done)?;
    if done["metrics_sha256"] != serde_json::Value::String(sha256_hex(&bytes))
        || done["version"] != env!("CARGO_PKG_VERSION")
    {
        return Ok(None);
    }
    Ok(Some(RunOutcome {
        dir: dir.to_path_buf(),
        records: read_records(&metrics_path)?,
        resolved,
    }))
}

fn latest_checkpoint(dir: &Path) -> Result<Option<(usize, PathBuf)>> {
    let ck_dir = dir.join("checkpoints");
    let Ok(entries) = std::fs::read_dir(&ck_dir) else {
        return Ok(None);
    };
    let mut best: Option<(usize, PathBuf)> = None;
    for e in entries {
        let path = e.map_err(|e| Error::io(&ck_dir, e))?.path();
        let epoch = path
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.strip_prefix("epoch-"))
            .and_then(|n| n.strip_suffix(".ck"))
            .and_then(|n| n.parse::<usize>().ok());
        if let Some(ep) = epoch {
            if best.as_ref().is_none_or(|(b, _)| ep > *b) {
                best = Some((ep, path));
            }
        }
    }
    Ok(best)
}

/// Epoch budget and schedule length in tokens.
fn plan(cfg: &RunConfig, train: &Dataset) -> (usize, u64) {
    let epoch_tokens = train.num_tokens() as u64;
    match cfg.stop {
        Stop::Epochs(e) => (e, e as u64 * epoch_tokens),
        Stop::Updates(u) => {
            let (mut updates, mut tokens, mut epoch) = (0u64, 0u64, 0usize);
            while updates < u {
                epoch += 1;
                for b in epoch_batches(train, cfg.seed, epoch, cfg.batch_tokens) {
                    if updates == u {
                        break;
                    }
                    updates += 1;
                    tokens += b.iter().map(|&i| train.sequences[i].len() as u64).sum::<u64>();
                }
            }
            (epoch, tokens)
        }
    }
}

impl Trainer<'_> {
    fn build_batch(&self, ds: &Dataset, seqs: &[usize], mask_seed: u64) -> Batch {
        let mut b = Batch {
            inputs: Vec::with_capacity(seqs.len()),
            targets: Vec::new(),
            loss_rows: Vec::new(),
            metric_rows: Vec::new(),
            tokens: 0,
        };
        for &i in seqs {
            let s = &ds.sequences[i];
            b.tokens += s.len() as u64;
            match self.cfg.task {
                Task::Causal => {
                    b.inputs.push(s.ids.clone());
                    for t in 0..s.len() {
                        let has_next = t + 1 < s.len();
                        b.targets.push(if has_next { s.ids[t + 1] } else { 0 });
                        b.loss_rows.push(has_next);
                        b.metric_rows.push(has_next && t + 1 >= s.prefix_len);
                    }
                }
                Task::Masked => {
                    let layout = mask_layout(
                        s,
                        self.cfg.data.mask_p,
                        mask_seed,
                        i as u64,
                        self.cfg.data.mask_style,
                        &self.data.vocab,
                    );
                    let mut inputs = s.ids.clone();
                    layout.corrupt(&mut inputs);
                    b.inputs.push(inputs);
                    let start = b.targets.len();
                    b.targets.extend_from_slice(&s.ids);
                    b.loss_rows.extend(std::iter::repeat_n(false, s.len()));
                    for &p in &layout.positions {
                        b.loss_rows[start + p as usize] = true;
                    }
                    b.metric_rows.extend_from_slice(&b.loss_rows[start..]);
                }
            }
        }
        b
    }

    /// One optimizer step. Returns `(loss, M_update)`, or `None` when the
    /// batch has no prediction targets.
    fn step(&mut self, b: &Batch, lr: f64) -> Result<Option<(f64, Option<f64>)>> {
        if !b.loss_rows.iter().any(|&x| x) {
            return Ok(None);
        }
        let mut tape = Tape::<f32>::new();
        let refs: Vec<&[u32]> = b.inputs.iter().map(Vec::as_slice).collect();
        let pass = self.model.forward_on_tape(&mut tape, &refs, true)?;
        let loss = tape.cross_entropy(pass.logits, &b.targets, &b.loss_rows)?;
        let loss_value = tape.value(loss).data()[0] as f64;
        if !loss_value.is_finite() {
            return Err(Error::Numeric(format!(
                "loss became {loss_value} at update {}",
                self.update + 1
            )));
        }
        let m_update = update_memorization(tape.value(pass.logits), &b.targets, &b.metric_rows);
        let mut grads = tape.backward(loss)?;
        let grads: Vec<Tensor<f32>> = pass
            .params
            .iter()
            .map(|&v| grads.take(v).expect("parameter gradient"))
            .collect();
        let grad_refs: Vec<&Tensor<f32>> = grads.iter().collect();
        let mut params: Vec<&mut Tensor<f32>> = self.model.params_mut().collect();
        self.adam.step(&mut params, &grad_refs, lr)?;
        Ok(Some((loss_value, m_update)))
    }

    fn wall_time(&self) -> Option<f64> {
        self.cfg.log_wall_time.then(|| self.started.elapsed().as_secs_f64())
    }

    fn update_budget(&self) -> Option<u64> {
        match self.cfg.stop {
            Stop::Updates(u) => Some(u),
            Stop::Epochs(_) => None,
        }
    }

    fn run(&mut self, opts: &RunOptions, resumed: bool) -> Result<()> {
        if resumed {
            // the checkpoint predates this epoch's injection
            self.maybe_inject(self.epoch)?;
        }
        while self.epoch < self.max_epochs {
            if opts.halt_after_epoch.is_some_and(|h| self.epoch >= h) {
                return Ok(());
            }
            let epoch = self.epoch + 1;
            let batches = epoch_batches(&self.data.train, self.cfg.seed, epoch, self.cfg.batch_tokens);
            let interleave = self.interleaved_points(epoch, batches.len());
            let mask_seed = mix_seed(self.cfg.seed, TRAIN_MASK_STREAM, epoch as u64);
            let mut stopped = false;
            for (bi, seqs) in batches.iter().enumerate() {
                if self.update_budget().is_some_and(|u| self.update >= u) {
                    stopped = true;
                    break;
                }
                let batch = self.build_batch(&self.data.train, seqs, mask_seed);
                let lr = self.schedule.lr_at((self.tokens + batch.tokens) as f64);
                if let Some((loss, m_update)) = self.step(&batch, lr)? {
                    self.update += 1;
                    self.tokens += batch.tokens;
                    if self.cfg.log_updates {
                        let mut r =
                            MetricRecord::new(&self.run_id, RecordKind::Update, self.update, epoch as u64, self.tokens);
                        r.m = m_update;
                        r.loss = Some(loss);
                        r.lr = Some(lr);
                        r.batch = Some(bi as u64);
                        r.wall_time = self.wall_time();
                        self.log.write(&r)?;
                    }
                }
                for _ in 0..interleave.iter().filter(|&&p| p == bi + 1).count() {
                    self.special_pass(epoch, bi as u64 + 1)?;
                }
            }
            self.epoch = epoch;
            let last = self.epoch == self.max_epochs || stopped;
            if last || self.epoch.is_multiple_of(self.cfg.eval.every) {
                self.evaluate()?;
            }
            let cadence = self
                .cfg
                .checkpoint_every
                .is_some_and(|c| c > 0 && self.epoch.is_multiple_of(c));
            if cadence || opts.checkpoint_at.contains(&self.epoch) {
                self.save_checkpoint()?;
            }
            self.maybe_inject(self.epoch)?;
            if stopped {
                break;
            }
        }
        Ok(())
    }

    /// Batch positions in `epoch` after which an interleaved repetition of
    /// the previous epoch's injection runs.
    fn interleaved_points(&self, epoch: usize, n_batches: usize) -> Vec<usize> {
        let Some(f) = &self.cfg.forgetting else {
            return Vec::new();
        };
        if !f.interleaved || f.repetitions < 2 || !self.injections.contains(&(epoch - 1)) {
            return Vec::new();
        }
        let extra = f.repetitions - 1;
        (1..=extra)
            .map(|j| (j * n_batches).div_ceil(extra + 1).max(1))
            .collect()
    }

    fn maybe_inject(&mut self, epoch: usize) -> Result<()> {
        let Some(f) = self.cfg.forgetting.clone() else {
            return Ok(());
        };
        if !self.injections.contains(&epoch) {
            return Ok(());
        }
        let passes = if f.interleaved { 1 } else { f.repetitions };
        for p in 0..passes {
            self.special_pass(epoch, p as u64)?;
        }
        let scores = score(&self.model, &self.special_ctx, self.cfg.eval.max_batch_tokens)?;
        let mut r = MetricRecord::new(
            &self.run_id,
            RecordKind::Inject,
            epoch as u64,
            epoch as u64,
            self.tokens,
        );
        r.m = Some(scores.m());
        r.wall_time = self.wall_time();
        self.log.write(&r)
    }

    /// Trains once over the whole special batch at the current schedule
    /// learning rate. These updates do not advance the token count.
    fn special_pass(&mut self, epoch: usize, pass: u64) -> Result<()> {
        let stream = mix_seed(self.cfg.seed, INJECT_STREAM, epoch as u64);
        let special = self.data.special.clone();
        let order = shuffled(special.len(), mix_seed(stream, pass, 0));
        let lr = self.schedule.lr_at(self.tokens as f64);
        if lr <= 0.0 {
            return Ok(());
        }
        for seqs in group(&order, &special, self.cfg.batch_tokens) {
            let batch = self.build_batch(&special, &seqs, mix_seed(stream, pass, 1));
            self.step(&batch, lr)?;
        }
        Ok(())
    }

    fn evaluate(&mut self) -> Result<()> {
        let e = self.epoch as u64;
        let max_tokens = self.cfg.eval.max_batch_tokens;
        let scores = score(&self.model, &self.train_ctx, max_tokens)?;
        let special = score(&self.model, &self.special_ctx, max_tokens)?;
        let ppl = if self.cfg.eval.perplexity {
            Some(special.perplexity()?)
        } else {
            None
        };

        let mut r = MetricRecord::new(&self.run_id, RecordKind::Epoch, e, e, self.tokens);
        r.m = Some(scores.m());
        r.ppl_val = ppl;
        if self.cfg.eval.pos && self.data.tagged {
            let rec = self
                .train_ctx
                .pos_record(&scores, &self.data.lexicon, &self.data.vocab)?;
            r.per_pos = Some(rec.ratios());
        }
        if self.cfg.eval.memory_units && self.cfg.task == Task::Causal {
            let mu = self.train_ctx.memory_units(&scores);
            r.mean_l = Some(mu.mean_len);
            r.mean_l_token = Some(mu.token_weighted_mean);
        }
        r.wall_time = self.wall_time();
        self.log.write(&r)?;

        let mut s = MetricRecord::new(&self.run_id, RecordKind::Special, e, e, self.tokens);
        s.m = Some(special.m());
        s.ppl_val = ppl;
        s.wall_time = self.wall_time();
        self.log.write(&s)
    }

    fn save_checkpoint(&self) -> Result<()> {
        let mut ck = Checkpoint::from_model(&self.model, self.epoch, self.update, self.tokens);
        ck.header.extra = serde_json::json!({
            "adam_step": self.adam.step,
            "run_id": self.run_id,
            "config_hash": self.cfg.hash()?,
        });
        for (i, (name, _)) in self.model.params().iter().enumerate() {
            ck.blobs.push((format!("adam.m.{name}"), self.adam.first[i].clone()));
            ck.blobs.push((format!("adam.v.{name}"), self.adam.second[i].clone()));
        }
        ck.save(&checkpoint_path(&self.dir, self.epoch))
    }

    fn restore(&mut self, path: &Path) -> Result<()> {
        let ck = Checkpoint::load(path)?;
        let model = ck.model()?;
        if model.config() != self.model.config() {
            return Err(Error::Checkpoint(format!(
                "{} holds a different architecture",
                path.display()
            )));
        }
        for (i, (name, _)) in model.params().iter().enumerate() {
            let get = |kind: &str| {
                ck.blob(&format!("adam.{kind}.{name}"))
                    .cloned()
                    .ok_or_else(|| Error::Checkpoint(format!("missing optimizer state for {name}")))
            };
            self.adam.first[i] = get("m")?;
            self.adam.second[i] = get("v")?;
        }
        self.adam.step = ck.header.extra["adam_step"]
            .as_u64()
            .ok_or_else(|| Error::Checkpoint("missing adam_step".into()))?;
        self.model = model;
        self.epoch = ck.header.epoch;
        self.update = ck.header.update;
        self.tokens = ck.header.tokens_processed;
        Ok(())
    }

    fn warm_start(&mut self, ws: &WarmStart, metrics_path: &Path) -> Result<()> {
        let base = ResolvedConfig::load(&ws.run_dir)?;
        let strip = |c: &RunConfig| RunConfig {
            label: String::new(),
            forgetting: None,
            checkpoint_every: None,
            ..c.clone()
        };
        if strip(&base.config) != strip(self.cfg) {
            return Err(Error::Setup(format!(
                "warm start from {} whose config differs beyond the forgetting protocol",
                ws.run_dir.display()
            )));
        }
        if self.injections.first().is_some_and(|&first| first < ws.epoch) {
            return Err(Error::Setup(
                "warm start checkpoint is later than the first injection".into(),
            ));
        }
        self.restore(&checkpoint_path(&ws.run_dir, ws.epoch))?;
        let (e, u) = (ws.epoch as u64, self.update);
        let mut log = MetricLog::create(metrics_path)?;
        for mut r in read_records(&ws.run_dir.join(METRICS_FILE))? {
            if r.kind != RecordKind::Inject && keep_until(&r, e, u) {
                r.run_id = self.run_id.clone();
                log.write(&r)?;
            }
        }
        self.log = log;
        Ok(())
    }
}
