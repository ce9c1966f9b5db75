use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{CorpusSource, ForgettingConfig, ModelSpec, RunConfig, Stop};
use super::log::{MetricRecord, RecordKind};
use super::train::{run_training, RunOptions, RunOutcome, WarmStart};
use crate::corpus::synth::SynthConfig;
use crate::corpus::DocIdMode;
use crate::error::{Error, Result};
use crate::metrics::{ForgettingCurve, ThresholdCrossing};
use crate::model::Task;

pub const SWEEPS_DIR: &str = "sweeps";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepKind {
    Scale,
    Lr,
    Docid,
    ForgettingScale,
    Repetition,
    OrderProbe,
}

impl SweepKind {
    pub fn file_name(self) -> &'static str {
        match self {
            SweepKind::Scale => "scale.json",
            SweepKind::Lr => "lr.json",
            SweepKind::Docid => "docid.json",
            SweepKind::ForgettingScale => "forgetting-scale.json",
            SweepKind::Repetition => "repetition.json",
            SweepKind::OrderProbe => "order-probe.json",
        }
    }
}

/// One run referenced by a sweep manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRun {
    pub run_id: String,
    pub model: String,
    pub n_params: u64,
    pub seed: u64,
    pub lr: f64,
    /// Arm name inside the sweep, e.g. `control`, `k=4`, `period=3`.
    pub role: String,
    pub inject_epoch: Option<usize>,
    pub repetitions: Option<usize>,
    pub period: Option<usize>,
    pub base_run_id: Option<String>,
    /// Training aborted on a non-finite loss; the run has no complete log.
    pub diverged: bool,
}

impl ManifestRun {
    fn of(out: &RunOutcome, role: &str) -> Self {
        let r = &out.resolved;
        ManifestRun {
            run_id: r.resolved.run_id.clone(),
            model: r.config.model.label(),
            n_params: r.resolved.n_params,
            seed: r.config.seed,
            lr: r.resolved.schedule.max_lr,
            role: role.to_string(),
            inject_epoch: r.config.forgetting.as_ref().map(|f| f.inject_epoch),
            repetitions: r.config.forgetting.as_ref().map(|f| f.repetitions),
            period: r.config.forgetting.as_ref().and_then(|f| f.period),
            base_run_id: None,
            diverged: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepManifest {
    pub kind: SweepKind,
    pub taus: Vec<f64>,
    pub runs: Vec<ManifestRun>,
}

impl SweepManifest {
    pub fn path(root: &Path, kind: SweepKind) -> PathBuf {
        root.join(SWEEPS_DIR).join(kind.file_name())
    }

    pub fn save(&self, root: &Path) -> Result<PathBuf> {
        let path = Self::path(root, self.kind);
        let dir = root.join(SWEEPS_DIR);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        std::fs::write(&path, crate::util::canonical_json(self)?).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    pub fn load(root: &Path, kind: SweepKind) -> Result<Self> {
        let path = Self::path(root, kind);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Small synthetic setup on which every sweep finishes in minutes on one
/// core.
pub fn micro_base() -> RunConfig {
    let mut c = RunConfig::new(
        ModelSpec::Preset("micro-m".into()),
        Task::Causal,
        Stop::Epochs(100),
        512,
    );
    c.data.corpus = CorpusSource::Synthetic(SynthConfig {
        documents: 60,
        nouns: 400,
        verbs: 120,
        adjectives: 120,
        first_names: 150,
        surnames: 300,
        places: 150,
        seed: 11,
        ..SynthConfig::default()
    });
    c.data.max_seq_len = 128;
    c.data.max_vocab = 1024;
    c.data.validation_fraction = 0.15;
    c
}

/// Roughly a million-token synthetic corpus with enough word types to fill
/// the full-size vocabulary.
pub fn desk_base() -> RunConfig {
    let mut c = RunConfig::new(
        ModelSpec::Preset("desk-small".into()),
        Task::Causal,
        Stop::Epochs(50),
        16_384,
    );
    c.data.corpus = CorpusSource::Synthetic(SynthConfig {
        documents: 12_000,
        nouns: 4000,
        verbs: 800,
        adjectives: 800,
        first_names: 1000,
        surnames: 2000,
        places: 1000,
        seed: 11,
        ..SynthConfig::default()
    });
    c.data.max_vocab = 8192;
    c
}

fn with_model(base: &RunConfig, model: &str, seed: u64) -> RunConfig {
    RunConfig {
        model: ModelSpec::Preset(model.to_string()),
        seed,
        ..base.clone()
    }
}

fn train(cfg: &RunConfig, root: &Path) -> Result<RunOutcome> {
    run_training(
        cfg,
        root,
        &RunOptions {
            reuse_complete: true,
            ..Default::default()
        },
    )
}

/// Threshold crossings of one run: over epoch M(f) for epoch budgets,
/// over M_update for update budgets. Indices are epochs or updates.
pub fn crossings(out: &RunOutcome, taus: &[f64]) -> Result<Vec<ThresholdCrossing>> {
    let h = out.history();
    let by_updates = matches!(out.resolved.config.stop, Stop::Updates(_));
    taus.iter()
        .map(|&tau| {
            if by_updates {
                return h.updates_to(tau);
            }
            let c = h.epochs_to(tau)?;
            Ok(ThresholdCrossing {
                tau,
                index: c.index.map(|i| h.epochs[i - 1].epoch),
                budget: out.resolved.resolved.max_epochs,
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct ScaleEntry {
    pub run: ManifestRun,
    pub outcome: RunOutcome,
    pub crossings: Vec<ThresholdCrossing>,
    pub overfit_epoch: Option<usize>,
    /// Training-set M(f) at the overfit epoch.
    pub m_at_overfit: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct ScaleSweep {
    pub taus: Vec<f64>,
    pub entries: Vec<ScaleEntry>,
}

impl ScaleSweep {
    pub fn for_seed(&self, seed: u64) -> impl Iterator<Item = &ScaleEntry> {
        self.entries.iter().filter(move |e| e.run.seed == seed)
    }
}

/// Trains every (size, seed) pair and records T(N, tau) for each tau.
pub fn run_scale_sweep(
    base: &RunConfig,
    sizes: &[String],
    seeds: &[u64],
    taus: &[f64],
    root: &Path,
) -> Result<ScaleSweep> {
    if sizes.is_empty() || seeds.is_empty() || taus.is_empty() {
        return Err(Error::Config("scale sweep needs sizes, seeds and thresholds".into()));
    }
    let mut entries = Vec::new();
    for &seed in seeds {
        for size in sizes {
            let outcome = train(&with_model(base, size, seed), root)?;
            let h = outcome.history();
            let overfit_epoch = h.overfit_epoch().map(|i| h.epochs[i - 1].epoch);
            let m_at_overfit = overfit_epoch
                .and_then(|e| h.epochs.iter().find(|r| r.epoch == e))
                .map(|r| r.m);
            entries.push(ScaleEntry {
                run: ManifestRun::of(&outcome, size),
                crossings: crossings(&outcome, taus)?,
                overfit_epoch,
                m_at_overfit,
                outcome,
            });
        }
    }
    SweepManifest {
        kind: SweepKind::Scale,
        taus: taus.to_vec(),
        runs: entries.iter().map(|e| e.run.clone()).collect(),
    }
    .save(root)?;
    Ok(ScaleSweep {
        taus: taus.to_vec(),
        entries,
    })
}

#[derive(Debug, Clone)]
pub struct LrEntry {
    pub run: ManifestRun,
    pub crossing: ThresholdCrossing,
    pub outcome: Option<RunOutcome>,
}

#[derive(Debug, Clone)]
pub struct LrSweep {
    pub tau: f64,
    pub entries: Vec<LrEntry>,
}

impl LrSweep {
    /// `(lr, T or censored)` for one size and seed, in grid order.
    pub fn curve(&self, model: &str, seed: u64) -> Vec<(f64, usize)> {
        let mut c: Vec<(f64, usize)> = self
            .entries
            .iter()
            .filter(|e| e.run.model == model && e.run.seed == seed)
            .map(|e| (e.run.lr, e.crossing.index_or_censored()))
            .collect();
        c.sort_by(|a, b| a.0.total_cmp(&b.0));
        c
    }
}

pub fn run_lr_sweep(
    base: &RunConfig,
    sizes: &[String],
    lrs: &[f64],
    seeds: &[u64],
    tau: f64,
    root: &Path,
) -> Result<LrSweep> {
    let lo = lrs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = lrs.iter().copied().fold(0.0, f64::max);
    if lrs.len() < 2 || lo.is_nan() || lo <= 0.0 || hi / lo < 10.0 * (1.0 - 1e-9) {
        return Err(Error::Config(
            "learning-rate grid must span at least one order of magnitude".into(),
        ));
    }
    let mut entries = Vec::new();
    for &seed in seeds {
        for size in sizes {
            for &lr in lrs {
                let cfg = RunConfig {
                    lr: Some(lr),
                    ..with_model(base, size, seed)
                };
                let budget = match cfg.stop {
                    Stop::Epochs(e) => e,
                    Stop::Updates(u) => u as usize,
                };
                match train(&cfg, root) {
                    Ok(out) => entries.push(LrEntry {
                        run: ManifestRun::of(&out, size),
                        crossing: crossings(&out, &[tau])?.remove(0),
                        outcome: Some(out),
                    }),
                    Err(Error::Numeric(_)) => entries.push(LrEntry {
                        run: ManifestRun {
                            run_id: cfg.run_id()?,
                            model: size.clone(),
                            n_params: 0,
                            seed,
                            lr,
                            role: size.clone(),
                            inject_epoch: None,
                            repetitions: None,
                            period: None,
                            base_run_id: None,
                            diverged: true,
                        },
                        crossing: ThresholdCrossing {
                            tau,
                            index: None,
                            budget,
                        },
                        outcome: None,
                    }),
                    Err(e) => return Err(e),
                }
            }
        }
    }
    SweepManifest {
        kind: SweepKind::Lr,
        taus: vec![tau],
        runs: entries.iter().map(|e| e.run.clone()).collect(),
    }
    .save(root)?;
    Ok(LrSweep { tau, entries })
}

#[derive(Debug, Clone)]
pub struct DocIdArm {
    pub mode: DocIdMode,
    pub run: ManifestRun,
    pub outcome: RunOutcome,
    pub crossing: ThresholdCrossing,
}

/// Control, vocabulary-only and prepended-identifier arms from one corpus,
/// per seed.
pub fn run_docid_experiment(base: &RunConfig, seeds: &[u64], tau: f64, root: &Path) -> Result<Vec<DocIdArm>> {
    let mut arms = Vec::new();
    for &seed in seeds {
        for mode in DocIdMode::ALL {
            let mut cfg = RunConfig { seed, ..base.clone() };
            cfg.data.docid = mode;
            let outcome = train(&cfg, root)?;
            arms.push(DocIdArm {
                mode,
                run: ManifestRun::of(&outcome, mode.as_str()),
                crossing: crossings(&outcome, &[tau])?.remove(0),
                outcome,
            });
        }
    }
    SweepManifest {
        kind: SweepKind::Docid,
        taus: vec![tau],
        runs: arms.iter().map(|a| a.run.clone()).collect(),
    }
    .save(root)?;
    Ok(arms)
}

/// Special-batch observations from the first injection onward, in logged
/// order.
pub fn forgetting_curve(records: &[MetricRecord], first_injection: usize) -> Result<ForgettingCurve> {
    let first = first_injection as u64;
    let points = records
        .iter()
        .filter(|r| match r.kind {
            RecordKind::Inject => r.index >= first,
            RecordKind::Special => r.index > first,
            _ => false,
        })
        .filter_map(|r| r.m.map(|m| (r.index as usize, r.kind == RecordKind::Inject, m)))
        .collect();
    ForgettingCurve::new(points)
}

#[derive(Debug, Clone)]
pub struct ForgettingRun {
    pub run: ManifestRun,
    pub outcome: RunOutcome,
    pub curve: ForgettingCurve,
}

impl ForgettingRun {
    pub fn baseline(&self) -> f64 {
        self.curve.baseline()
    }
}

fn epoch_budget(cfg: &RunConfig) -> Result<usize> {
    match cfg.stop {
        Stop::Epochs(e) => Ok(e),
        Stop::Updates(_) => Err(Error::Config("forgetting experiments need an epoch budget".into())),
    }
}

/// Injection epoch at `fraction` of the epoch budget, at least 1.
pub fn inject_epoch_at(cfg: &RunConfig, fraction: f64) -> Result<usize> {
    let e = epoch_budget(cfg)?;
    Ok(((fraction * e as f64).round() as usize).clamp(1, e))
}

/// Trains (or reuses) the run without injection, making sure checkpoints
/// exist at every epoch in `epochs`.
fn ensure_base(base: &RunConfig, epochs: &[usize], root: &Path) -> Result<RunOutcome> {
    let cfg = RunConfig {
        forgetting: None,
        ..base.clone()
    };
    let out = train(&cfg, root)?;
    let have = |e: &usize| out.dir.join("checkpoints").join(format!("epoch-{e:04}.ck")).exists();
    if epochs.iter().all(have) {
        return Ok(out);
    }
    run_training(
        &cfg,
        root,
        &RunOptions {
            checkpoint_at: epochs.to_vec(),
            ..Default::default()
        },
    )
}

fn forgetting_arm(
    base_out: &RunOutcome,
    base: &RunConfig,
    protocol: ForgettingConfig,
    role: &str,
    root: &Path,
) -> Result<ForgettingRun> {
    // arms are never resumed from, so they skip periodic checkpoints
    let cfg = RunConfig {
        forgetting: Some(protocol.clone()),
        checkpoint_every: None,
        ..base.clone()
    };
    cfg.validate()?;
    let outcome = run_training(
        &cfg,
        root,
        &RunOptions {
            reuse_complete: true,
            warm_start: Some(WarmStart {
                run_dir: base_out.dir.clone(),
                epoch: protocol.inject_epoch,
            }),
            ..Default::default()
        },
    )?;
    let curve = forgetting_curve(&outcome.records, protocol.inject_epoch)?;
    let mut run = ManifestRun::of(&outcome, role);
    run.base_run_id = Some(base_out.run_id().to_string());
    Ok(ForgettingRun { run, outcome, curve })
}

/// One special-batch injection protocol on top of `base`.
pub fn run_forgetting(base: &RunConfig, protocol: ForgettingConfig, root: &Path) -> Result<ForgettingRun> {
    let base_out = ensure_base(base, &[protocol.inject_epoch], root)?;
    let role = if protocol.interleaved { "interleaved" } else { "single" };
    forgetting_arm(&base_out, base, protocol, role, root)
}

fn save_forgetting(kind: SweepKind, runs: &[ForgettingRun], root: &Path) -> Result<()> {
    SweepManifest {
        kind,
        taus: Vec::new(),
        runs: runs.iter().map(|r| r.run.clone()).collect(),
    }
    .save(root)
    .map(|_| ())
}

/// A single injection at `inject_fraction` of training for each size.
pub fn forgetting_baseline_vs_scale(
    base: &RunConfig,
    sizes: &[String],
    seeds: &[u64],
    inject_fraction: f64,
    root: &Path,
) -> Result<Vec<ForgettingRun>> {
    let mut runs = Vec::new();
    for &seed in seeds {
        for size in sizes {
            let cfg = with_model(base, size, seed);
            let inject_epoch = inject_epoch_at(&cfg, inject_fraction)?;
            let base_out = ensure_base(&cfg, &[inject_epoch], root)?;
            let protocol = ForgettingConfig {
                inject_epoch,
                ..Default::default()
            };
            runs.push(forgetting_arm(&base_out, &cfg, protocol, size, root)?);
        }
    }
    save_forgetting(SweepKind::ForgettingScale, &runs, root)?;
    Ok(runs)
}

/// Consecutive-repetition arms (`k` passes per injection) and spaced arms
/// (one pass every `period` epochs), all injected first at the same epoch.
pub fn repetition_experiment(
    base: &RunConfig,
    repetitions: &[usize],
    periods: &[usize],
    seeds: &[u64],
    inject_fraction: f64,
    root: &Path,
) -> Result<Vec<ForgettingRun>> {
    let mut runs = Vec::new();
    for &seed in seeds {
        let cfg = RunConfig { seed, ..base.clone() };
        let inject_epoch = inject_epoch_at(&cfg, inject_fraction)?;
        let base_out = ensure_base(&cfg, &[inject_epoch], root)?;
        for &k in repetitions {
            let protocol = ForgettingConfig {
                inject_epoch,
                repetitions: k,
                ..Default::default()
            };
            runs.push(forgetting_arm(&base_out, &cfg, protocol, &format!("k={k}"), root)?);
        }
        for &p in periods {
            let protocol = ForgettingConfig {
                inject_epoch,
                period: Some(p),
                ..Default::default()
            };
            runs.push(forgetting_arm(&base_out, &cfg, protocol, &format!("period={p}"), root)?);
        }
    }
    save_forgetting(SweepKind::Repetition, &runs, root)?;
    Ok(runs)
}

/// The same single injection placed at different points of training.
pub fn order_probe(base: &RunConfig, fractions: &[f64], seeds: &[u64], root: &Path) -> Result<Vec<ForgettingRun>> {
    let mut runs = Vec::new();
    for &seed in seeds {
        let cfg = RunConfig { seed, ..base.clone() };
        let epochs: Vec<usize> = fractions
            .iter()
            .map(|&f| inject_epoch_at(&cfg, f))
            .collect::<Result<_>>()?;
        let base_out = ensure_base(&cfg, &epochs, root)?;
        for (&f, &inject_epoch) in fractions.iter().zip(&epochs) {
            let protocol = ForgettingConfig {
                inject_epoch,
                ..Default::default()
            };
            runs.push(forgetting_arm(
                &base_out,
                &cfg,
                protocol,
                &format!("inject@{f:.2}"),
                root,
            )?);
        }
    }
    save_forgetting(SweepKind::OrderProbe, &runs, root)?;
    Ok(runs)
}
