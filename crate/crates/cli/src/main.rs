//! `memlab`: train runs, drive sweeps, emit figure CSVs and run the
//! property checks.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use memlab::corpus::synth::{generate, SynthConfig};
use memlab::corpus::{Corpus, DocIdMode};
use memlab::harness::{
    crossings, desk_base, emit_available, emit_figure_data, forgetting_baseline_vs_scale, inject_epoch_at, micro_base,
    order_probe, repetition_experiment, run_docid_experiment, run_forgetting, run_lr_sweep, run_scale_sweep,
    run_training, verify, CorpusSource, Figure, ForgettingConfig, ForgettingRun, ModelSpec, RunConfig, RunOptions,
    Stop,
};
use memlab::metrics::ThresholdCrossing;
use memlab::model::Task;

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERIC: u8 = 3;
const EXIT_UNREACHED: u8 = 4;

#[derive(Parser)]
#[command(
    name = "memlab",
    version,
    about = "Memorization dynamics of small transformer language models"
)]
struct Cli {
    /// Directory holding one subdirectory per run.
    #[arg(long, global = true, env = "MEMLAB_LOG_ROOT", default_value = "runs")]
    root: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one run.
    Train(TrainArgs),
    /// T(N, tau) over model sizes.
    SweepScale(ScaleArgs),
    /// T(N, tau) over a learning-rate grid.
    SweepLr(LrArgs),
    /// Control, vocabulary-only and prepended-identifier arms.
    Docid(DocidArgs),
    /// Special-batch injection and forgetting curves.
    Forget(ForgetArgs),
    /// Write figure CSVs from completed sweeps.
    EmitFigures(EmitArgs),
    /// Gradient checks, optimizer contracts, metric sanity and determinism.
    Verify(VerifyArgs),
    /// Write a synthetic corpus and its POS annotations.
    GenCorpus(GenArgs),
    /// Print the whitespace token stream of a corpus, one token per line.
    ExportTokens { corpus: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum Base {
    /// Tiny synthetic corpus; every sweep runs in minutes.
    Micro,
    /// About a million synthetic tokens with an 8192-word vocabulary.
    Desk,
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    Causal,
    Masked,
}

#[derive(Clone, Copy, ValueEnum)]
enum DocidArg {
    Control,
    VocabOnly,
    Prepend,
}

/// Flags that override fields of the run configuration.
#[derive(Args, Clone)]
struct RunArgs {
    /// Canonical JSON run configuration; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Starting point when no `--config` is given.
    #[arg(long, value_enum, default_value = "micro")]
    base: Base,
    #[arg(long)]
    label: Option<String>,
    /// Preset name, e.g. micro-m or desk-small.
    #[arg(long)]
    model: Option<String>,
    #[arg(long, value_enum)]
    task: Option<TaskArg>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, conflicts_with = "updates")]
    epochs: Option<usize>,
    #[arg(long)]
    updates: Option<u64>,
    /// Tokens per update.
    #[arg(long)]
    batch_tokens: Option<usize>,
    /// Peak learning rate; defaults to the preset value.
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    warmup_fraction: Option<f64>,
    /// Plain-text corpus, one document per blank-line separated block.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// `token<TAB>TAG` annotations aligned with `--corpus`.
    #[arg(long, requires = "corpus")]
    annotations: Option<PathBuf>,
    /// Synthetic corpus size in documents (ignored with `--corpus`).
    #[arg(long)]
    documents: Option<usize>,
    #[arg(long)]
    max_vocab: Option<usize>,
    #[arg(long)]
    max_seq_len: Option<usize>,
    #[arg(long)]
    validation_fraction: Option<f64>,
    #[arg(long)]
    mask_p: Option<f64>,
    #[arg(long, value_enum)]
    docid: Option<DocidArg>,
    #[arg(long)]
    eval_every: Option<usize>,
    #[arg(long)]
    checkpoint_every: Option<usize>,
    /// Skip per-update records.
    #[arg(long)]
    no_update_log: bool,
}

impl RunArgs {
    fn resolve(&self) -> anyhow::Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => match self.base {
                Base::Micro => micro_base(),
                Base::Desk => desk_base(),
            },
        };
        if let Some(l) = &self.label {
            c.label = l.clone();
        }
        if let Some(m) = &self.model {
            c.model = ModelSpec::Preset(m.clone());
        }
        if let Some(t) = self.task {
            c.task = match t {
                TaskArg::Causal => Task::Causal,
                TaskArg::Masked => Task::Masked,
            };
        }
        if let Some(s) = self.seed {
            c.seed = s;
        }
        if let Some(e) = self.epochs {
            c.stop = Stop::Epochs(e);
        }
        if let Some(u) = self.updates {
            c.stop = Stop::Updates(u);
        }
        if let Some(b) = self.batch_tokens {
            c.batch_tokens = b;
        }
        if self.lr.is_some() {
            c.lr = self.lr;
        }
        if let Some(w) = self.warmup_fraction {
            c.warmup_fraction = w;
        }
        if let Some(p) = &self.corpus {
            c.data.corpus = CorpusSource::File(p.clone());
            c.data.annotations = self.annotations.clone();
        } else if let Some(n) = self.documents {
            match &mut c.data.corpus {
                CorpusSource::Synthetic(s) => s.documents = n,
                CorpusSource::File(_) => bail!(memlab::Error::Config("--documents needs a synthetic corpus".into())),
            }
        }
        if let Some(v) = self.max_vocab {
            c.data.max_vocab = v;
        }
        if let Some(v) = self.max_seq_len {
            c.data.max_seq_len = v;
        }
        if let Some(v) = self.validation_fraction {
            c.data.validation_fraction = v;
        }
        if let Some(v) = self.mask_p {
            c.data.mask_p = v;
        }
        if let Some(d) = self.docid {
            c.data.docid = match d {
                DocidArg::Control => DocIdMode::Control,
                DocidArg::VocabOnly => DocIdMode::VocabOnly,
                DocidArg::Prepend => DocIdMode::Prepend,
            };
        }
        if let Some(e) = self.eval_every {
            c.eval.every = e;
        }
        if self.checkpoint_every.is_some() {
            c.checkpoint_every = self.checkpoint_every;
        }
        if self.no_update_log {
            c.log_updates = false;
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Continue from the newest checkpoint of the same run.
    #[arg(long)]
    resume: bool,
    /// Return the completed run unchanged if it already exists.
    #[arg(long)]
    reuse: bool,
    /// Thresholds to report crossings for.
    #[arg(long, value_delimiter = ',', default_value = "0.4,0.6,0.8,0.9")]
    taus: Vec<f64>,
    /// Exit with status 4 if any threshold is not reached.
    #[arg(long)]
    strict: bool,
    /// Inject the validation split as a special batch after this epoch.
    #[arg(long)]
    inject_epoch: Option<usize>,
    #[arg(long, default_value_t = 1, requires = "inject_epoch")]
    repetitions: usize,
    #[arg(long, requires = "inject_epoch")]
    period: Option<usize>,
    #[arg(long, requires = "inject_epoch")]
    interleaved: bool,
}

#[derive(Args)]
struct ScaleArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long, value_delimiter = ',', default_value = "micro-xs,micro-s,micro-m,micro-l")]
    sizes: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
    seeds: Vec<u64>,
    #[arg(long, value_delimiter = ',', default_value = "0.4,0.6,0.8,0.9")]
    taus: Vec<f64>,
    #[arg(long)]
    strict: bool,
}

#[derive(Args)]
struct LrArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long, value_delimiter = ',', default_value = "micro-s,micro-m")]
    sizes: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "0.0015,0.0025,0.004,0.007,0.015")]
    lrs: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
    seeds: Vec<u64>,
    #[arg(long, default_value_t = 0.9)]
    tau: f64,
    #[arg(long)]
    strict: bool,
}

#[derive(Args)]
struct DocidArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
    seeds: Vec<u64>,
    #[arg(long, default_value_t = 0.8)]
    tau: f64,
    #[arg(long)]
    strict: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Protocol {
    /// One injection on the configured model.
    Single,
    /// One injection per size.
    Scale,
    /// Consecutive repetitions and spaced re-injection.
    Repetition,
    /// Injection at several points of training.
    Order,
}

#[derive(Args)]
struct ForgetArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long, value_enum, default_value = "single")]
    protocol: Protocol,
    /// Injection point as a fraction of the epoch budget.
    #[arg(long, default_value_t = 0.2)]
    inject_fraction: f64,
    #[arg(long, value_delimiter = ',', default_value = "micro-s,micro-m,micro-l")]
    sizes: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
    seeds: Vec<u64>,
    /// Pass counts for the repetition protocol.
    #[arg(long, value_delimiter = ',', default_value = "1,2,4")]
    repetitions: Vec<usize>,
    /// Re-injection periods for the repetition protocol.
    #[arg(long, value_delimiter = ',', default_value = "3,7")]
    periods: Vec<usize>,
    /// Injection fractions for the order protocol.
    #[arg(long, value_delimiter = ',', default_value = "0.2,0.5,0.8")]
    fractions: Vec<f64>,
}

#[derive(Args)]
struct EmitArgs {
    /// Defaults to `<root>/figures`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Figures to write (e.g. fig1,fig10); default is every figure whose
    /// sweep has been run.
    #[arg(long, value_delimiter = ',')]
    figures: Vec<String>,
    /// List the figure files and their columns.
    #[arg(long)]
    list: bool,
}

#[derive(Args)]
struct VerifyArgs {
    /// Where the short determinism runs go; a temporary directory by default.
    #[arg(long)]
    scratch: Option<PathBuf>,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value_t = 200)]
    documents: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Where to write the aligned `token<TAB>TAG` lines.
    #[arg(long)]
    annotations: Option<PathBuf>,
}

/// A threshold was not reached and `--strict` was given.
#[derive(Debug)]
struct Unreached(Vec<String>);

impl std::fmt::Display for Unreached {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "threshold not reached: {}", self.0.join("; "))
    }
}

impl std::error::Error for Unreached {}

fn show(c: &ThresholdCrossing) -> String {
    match c.index {
        Some(i) => format!("{:.2}@{i}", c.tau),
        None => format!("{:.2}@unreached({})", c.tau, c.budget),
    }
}

fn strict_check(strict: bool, missed: Vec<String>) -> anyhow::Result<()> {
    if strict && !missed.is_empty() {
        return Err(Unreached(missed).into());
    }
    Ok(())
}

fn train(root: &Path, a: &TrainArgs) -> anyhow::Result<()> {
    let mut cfg = a.run.resolve()?;
    if let Some(e) = a.inject_epoch {
        cfg.forgetting = Some(ForgettingConfig {
            inject_epoch: e,
            repetitions: a.repetitions,
            period: a.period,
            interleaved: a.interleaved,
        });
        cfg.validate()?;
    }
    let opts = RunOptions {
        reuse_complete: a.reuse,
        resume: a.resume,
        ..Default::default()
    };
    let out = run_training(&cfg, root, &opts)?;
    let cs = crossings(&out, &a.taus)?;
    let m = out.history().m_series();
    println!(
        "{} params={} epochs={} final_M={:.4} T={}",
        out.run_id(),
        out.n_params(),
        m.len(),
        m.last().copied().unwrap_or(0.0),
        cs.iter().map(show).collect::<Vec<_>>().join(" ")
    );
    println!("logs: {}", out.dir.display());
    let missed = cs
        .iter()
        .filter(|c| !c.reached())
        .map(|c| format!("{} tau {}", out.run_id(), c.tau))
        .collect();
    strict_check(a.strict, missed)
}

fn sweep_scale(root: &Path, a: &ScaleArgs) -> anyhow::Result<()> {
    let base = a.run.resolve()?;
    let sweep = run_scale_sweep(&base, &a.sizes, &a.seeds, &a.taus, root)?;
    let mut missed = Vec::new();
    for e in &sweep.entries {
        println!(
            "{} seed={} params={} T={} overfit={}",
            e.run.model,
            e.run.seed,
            e.run.n_params,
            e.crossings.iter().map(show).collect::<Vec<_>>().join(" "),
            e.overfit_epoch.map_or("none".into(), |x| x.to_string())
        );
        missed.extend(
            e.crossings
                .iter()
                .filter(|c| !c.reached())
                .map(|c| format!("{} tau {}", e.run.run_id, c.tau)),
        );
    }
    strict_check(a.strict, missed)
}

fn sweep_lr(root: &Path, a: &LrArgs) -> anyhow::Result<()> {
    let base = a.run.resolve()?;
    let sweep = run_lr_sweep(&base, &a.sizes, &a.lrs, &a.seeds, a.tau, root)?;
    let mut missed = Vec::new();
    for e in &sweep.entries {
        let note = if e.run.diverged { " diverged" } else { "" };
        println!(
            "{} seed={} lr={:e} T={}{note}",
            e.run.model,
            e.run.seed,
            e.run.lr,
            show(&e.crossing)
        );
        if !e.crossing.reached() {
            missed.push(format!("{} lr {:e}", e.run.run_id, e.run.lr));
        }
    }
    strict_check(a.strict, missed)
}

fn docid(root: &Path, a: &DocidArgs) -> anyhow::Result<()> {
    let base = a.run.resolve()?;
    let arms = run_docid_experiment(&base, &a.seeds, a.tau, root)?;
    let mut missed = Vec::new();
    for arm in &arms {
        println!(
            "{} seed={} params={} T={}",
            arm.mode.as_str(),
            arm.run.seed,
            arm.run.n_params,
            show(&arm.crossing)
        );
        if !arm.crossing.reached() {
            missed.push(arm.run.run_id.clone());
        }
    }
    strict_check(a.strict, missed)
}

fn print_forgetting(runs: &[ForgettingRun]) {
    for r in runs {
        println!(
            "{} {} seed={} inject={} baseline={:.4} points={}",
            r.run.role,
            r.run.model,
            r.run.seed,
            r.run.inject_epoch.unwrap_or(0),
            r.baseline(),
            r.curve.len()
        );
    }
}

fn forget(root: &Path, a: &ForgetArgs) -> anyhow::Result<()> {
    let base = a.run.resolve()?;
    let runs = match a.protocol {
        Protocol::Single => {
            let protocol = ForgettingConfig {
                inject_epoch: inject_epoch_at(&base, a.inject_fraction)?,
                ..Default::default()
            };
            vec![run_forgetting(&base, protocol, root)?]
        }
        Protocol::Scale => forgetting_baseline_vs_scale(&base, &a.sizes, &a.seeds, a.inject_fraction, root)?,
        Protocol::Repetition => {
            repetition_experiment(&base, &a.repetitions, &a.periods, &a.seeds, a.inject_fraction, root)?
        }
        Protocol::Order => order_probe(&base, &a.fractions, &a.seeds, root)?,
    };
    print_forgetting(&runs);
    Ok(())
}

fn emit(root: &Path, a: &EmitArgs) -> anyhow::Result<()> {
    if a.list {
        print!("{}", memlab::harness::figures::describe());
        return Ok(());
    }
    let out = a.out.clone().unwrap_or_else(|| root.join("figures"));
    if a.figures.is_empty() {
        let (written, skipped) = emit_available(root, &out)?;
        for p in &written {
            println!("{}", p.display());
        }
        for f in &skipped {
            eprintln!(
                "skipped {}: no {} sweep under {}",
                f.file_name(),
                f.sweep().file_name(),
                root.display()
            );
        }
        if written.is_empty() {
            bail!(memlab::Error::Input(format!(
                "no completed sweeps under {}",
                root.display()
            )));
        }
    } else {
        for name in &a.figures {
            let p = emit_figure_data(root, Figure::parse(name)?, &out)?;
            println!("{}", p.display());
        }
    }
    Ok(())
}

fn run_verify(a: &VerifyArgs) -> anyhow::Result<bool> {
    let tmp;
    let scratch = match &a.scratch {
        Some(p) => p.clone(),
        None => {
            tmp = std::env::temp_dir().join(format!("memlab-verify-{}", std::process::id()));
            tmp.clone()
        }
    };
    let checks = verify::run_suite(&scratch);
    if a.scratch.is_none() {
        let _ = std::fs::remove_dir_all(&scratch);
    }
    let mut ok = true;
    for c in checks? {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
        ok &= c.passed;
    }
    Ok(ok)
}

fn gen_corpus(a: &GenArgs) -> anyhow::Result<()> {
    let synth = generate(&SynthConfig {
        documents: a.documents,
        seed: a.seed,
        ..SynthConfig::default()
    })?;
    std::fs::write(&a.out, &synth.text).with_context(|| format!("writing {}", a.out.display()))?;
    if let Some(p) = &a.annotations {
        std::fs::write(p, &synth.annotations).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<Unreached>().is_some() {
        return EXIT_UNREACHED;
    }
    match err.downcast_ref::<memlab::Error>() {
        Some(memlab::Error::Numeric(_)) => EXIT_NUMERIC,
        Some(
            memlab::Error::Config(_)
            | memlab::Error::Usage(_)
            | memlab::Error::Input(_)
            | memlab::Error::Ingestion(_)
            | memlab::Error::Misaligned { .. }
            | memlab::Error::MissingRuns(_),
        ) => EXIT_CONFIG,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let root = cli.root.as_path();
    let result = match &cli.command {
        Command::Train(a) => train(root, a),
        Command::SweepScale(a) => sweep_scale(root, a),
        Command::SweepLr(a) => sweep_lr(root, a),
        Command::Docid(a) => docid(root, a),
        Command::Forget(a) => forget(root, a),
        Command::EmitFigures(a) => emit(root, a),
        Command::Verify(a) => match run_verify(a) {
            Ok(true) => Ok(()),
            Ok(false) => return ExitCode::from(1),
            Err(e) => Err(e),
        },
        Command::GenCorpus(a) => gen_corpus(a),
        Command::ExportTokens { corpus } => Corpus::load(corpus)
            .map(|c| print!("{}", c.export_tokens()))
            .map_err(Into::into),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
