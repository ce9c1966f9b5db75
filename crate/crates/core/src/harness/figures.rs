//! CSV tables behind each plot, built only from sweep manifests and the
//! runs' `metrics.jsonl`. Every row carries `run_id` and `index` so it can
//! be joined back to the record it came from.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::experiments::{crossings, forgetting_curve, ManifestRun, SweepKind, SweepManifest};
use super::log::{read_records, RecordKind};
use super::train::{ResolvedConfig, RunOutcome, DONE_FILE, METRICS_FILE};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Figure {
    TVsN,
    MemBeforeOverfit,
    Lr,
    Docid,
    Pos,
    Forgetting,
    Repetition,
    Diff,
    MemoryUnits,
}

impl Figure {
    pub const ALL: [Figure; 9] = [
        Figure::TVsN,
        Figure::MemBeforeOverfit,
        Figure::Lr,
        Figure::Docid,
        Figure::Pos,
        Figure::Forgetting,
        Figure::Repetition,
        Figure::Diff,
        Figure::MemoryUnits,
    ];

    pub fn file_name(self) -> &'static str {
        match self {
            Figure::TVsN => "fig1_t_vs_n.csv",
            Figure::MemBeforeOverfit => "fig4_mem_before_overfit.csv",
            Figure::Lr => "fig7_lr.csv",
            Figure::Docid => "fig8_docid.csv",
            Figure::Pos => "fig9_pos.csv",
            Figure::Forgetting => "fig10_forgetting.csv",
            Figure::Repetition => "fig12_repetition.csv",
            Figure::Diff => "fig16_diff.csv",
            Figure::MemoryUnits => "fig17_mul.csv",
        }
    }

    /// Accepts `fig1`, `fig1_t_vs_n` or `fig1_t_vs_n.csv`.
    pub fn parse(s: &str) -> Result<Figure> {
        let s = s.trim_end_matches(".csv");
        Figure::ALL
            .into_iter()
            .find(|f| {
                let name = f.file_name().trim_end_matches(".csv");
                name == s || name.split('_').next() == Some(s)
            })
            .ok_or_else(|| Error::Usage(format!("unknown figure '{s}'")))
    }

    pub fn sweep(self) -> SweepKind {
        match self {
            Figure::TVsN | Figure::MemBeforeOverfit | Figure::Pos | Figure::MemoryUnits => SweepKind::Scale,
            Figure::Lr => SweepKind::Lr,
            Figure::Docid => SweepKind::Docid,
            Figure::Forgetting | Figure::Diff => SweepKind::ForgettingScale,
            Figure::Repetition => SweepKind::Repetition,
        }
    }

    pub fn header(self) -> &'static str {
        match self {
            Figure::TVsN => "run_id,model,n_params,seed,tau,index,reached,budget",
            Figure::MemBeforeOverfit => "run_id,model,n_params,seed,index,M,ppl_val",
            Figure::Lr => "run_id,model,n_params,seed,lr,tau,index,reached,budget,diverged",
            Figure::Docid => "run_id,arm,n_params,seed,index,M",
            Figure::Pos => "run_id,model,n_params,seed,index,M,pos,R,R_mem",
            Figure::Forgetting => "run_id,model,n_params,seed,inject_epoch,step,index,kind,M,baseline",
            Figure::Repetition => "run_id,arm,seed,repetitions,period,inject_epoch,step,index,kind,M,baseline",
            Figure::Diff => "run_id,model,n_params,seed,step,index,diff",
            Figure::MemoryUnits => "run_id,model,n_params,seed,index,M,mean_L,mean_L_token",
        }
    }
}

/// Loads a completed run from `root/<run_id>`.
pub fn load_run(root: &Path, run_id: &str) -> Result<RunOutcome> {
    let dir = root.join(run_id);
    if !dir.join(DONE_FILE).exists() {
        return Err(Error::MissingRuns(vec![run_id.to_string()]));
    }
    Ok(RunOutcome {
        resolved: ResolvedConfig::load(&dir)?,
        records: read_records(&dir.join(METRICS_FILE))?,
        dir,
    })
}

fn load_all(root: &Path, manifest: &SweepManifest) -> Result<Vec<(ManifestRun, Option<RunOutcome>)>> {
    let missing: Vec<String> = manifest
        .runs
        .iter()
        .filter(|r| !r.diverged && !root.join(&r.run_id).join(DONE_FILE).exists())
        .map(|r| r.run_id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingRuns(missing));
    }
    manifest
        .runs
        .iter()
        .map(|r| {
            let out = if r.diverged {
                None
            } else {
                Some(load_run(root, &r.run_id)?)
            };
            Ok((r.clone(), out))
        })
        .collect()
}

fn opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Builds the CSV text of one figure.
pub fn figure_csv(root: &Path, figure: Figure) -> Result<String> {
    let manifest = SweepManifest::load(root, figure.sweep()).map_err(|e| match e {
        Error::Io { path, .. } => Error::Input(format!("no sweep manifest at {}", path.display())),
        other => other,
    })?;
    let runs = load_all(root, &manifest)?;
    let mut out = String::new();
    out.push_str(figure.header());
    out.push('\n');
    let mut row = |cells: &[String]| {
        out.push_str(&cells.join(","));
        out.push('\n');
    };
    for (run, outcome) in &runs {
        let id = run.run_id.clone();
        let (model, n, seed) = (run.model.clone(), run.n_params.to_string(), run.seed.to_string());
        match figure {
            Figure::TVsN | Figure::Lr => {
                let taus = &manifest.taus;
                let cs = match outcome {
                    Some(o) => crossings(o, taus)?,
                    None => Vec::new(),
                };
                for (i, &tau) in taus.iter().enumerate() {
                    let c = cs.get(i);
                    let mut cells = vec![id.clone(), model.clone(), n.clone(), seed.clone()];
                    if figure == Figure::Lr {
                        cells.push(run.lr.to_string());
                    }
                    cells.push(tau.to_string());
                    cells.push(opt(c.and_then(|c| c.index)));
                    cells.push(c.is_some_and(|c| c.reached()).to_string());
                    cells.push(opt(c.map(|c| c.budget)));
                    if figure == Figure::Lr {
                        cells.push(run.diverged.to_string());
                    }
                    row(&cells);
                }
            }
            Figure::MemBeforeOverfit => {
                let o = outcome.as_ref().expect("complete run");
                let h = o.history();
                let rec = h.overfit_epoch().map(|i| &h.epochs[i - 1]);
                row(&[
                    id,
                    model,
                    n,
                    seed,
                    opt(rec.map(|r| r.epoch)),
                    opt(rec.map(|r| r.m)),
                    opt(rec.and_then(|r| r.ppl_val)),
                ]);
            }
            Figure::Docid => {
                for r in outcome.as_ref().expect("complete run").of_kind(RecordKind::Epoch) {
                    row(&[
                        id.clone(),
                        run.role.clone(),
                        n.clone(),
                        seed.clone(),
                        r.index.to_string(),
                        opt(r.m),
                    ]);
                }
            }
            Figure::Pos => {
                for r in outcome.as_ref().expect("complete run").of_kind(RecordKind::Epoch) {
                    for (tag, [ratio, mem]) in r.per_pos.iter().flatten() {
                        row(&[
                            id.clone(),
                            model.clone(),
                            n.clone(),
                            seed.clone(),
                            r.index.to_string(),
                            opt(r.m),
                            tag.clone(),
                            ratio.to_string(),
                            mem.to_string(),
                        ]);
                    }
                }
            }
            Figure::MemoryUnits => {
                for r in outcome.as_ref().expect("complete run").of_kind(RecordKind::Epoch) {
                    row(&[
                        id.clone(),
                        model.clone(),
                        n.clone(),
                        seed.clone(),
                        r.index.to_string(),
                        opt(r.m),
                        opt(r.mean_l),
                        opt(r.mean_l_token),
                    ]);
                }
            }
            Figure::Forgetting | Figure::Repetition | Figure::Diff => {
                let o = outcome.as_ref().expect("complete run");
                let inject = run
                    .inject_epoch
                    .ok_or_else(|| Error::Input(format!("{id} has no injection epoch")))?;
                let curve = forgetting_curve(&o.records, inject)?;
                let baseline = curve.baseline().to_string();
                if figure == Figure::Diff {
                    for (step, d) in curve.diff().iter().enumerate() {
                        row(&[
                            id.clone(),
                            model.clone(),
                            n.clone(),
                            seed.clone(),
                            (step + 1).to_string(),
                            curve.epochs[step + 1].to_string(),
                            d.to_string(),
                        ]);
                    }
                    continue;
                }
                for step in 0..curve.len() {
                    let kind = if curve.injected[step] { "inject" } else { "special" };
                    let mut cells = vec![id.clone()];
                    if figure == Figure::Forgetting {
                        cells.extend([model.clone(), n.clone(), seed.clone(), inject.to_string()]);
                    } else {
                        cells.extend([
                            run.role.clone(),
                            seed.clone(),
                            opt(run.repetitions),
                            opt(run.period),
                            inject.to_string(),
                        ]);
                    }
                    cells.extend([
                        step.to_string(),
                        curve.epochs[step].to_string(),
                        kind.to_string(),
                        curve.values[step].to_string(),
                        baseline.clone(),
                    ]);
                    row(&cells);
                }
            }
        }
    }
    Ok(out)
}

/// Writes `out_dir/<figure file>` and returns its path.
pub fn emit_figure_data(root: &Path, figure: Figure, out_dir: &Path) -> Result<PathBuf> {
    let csv = figure_csv(root, figure)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let path = out_dir.join(figure.file_name());
    std::fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Emits every figure whose sweep manifest exists; reports the rest.
pub fn emit_available(root: &Path, out_dir: &Path) -> Result<(Vec<PathBuf>, Vec<Figure>)> {
    let mut written = Vec::new();
    let mut skipped = Vec::new();
    for f in Figure::ALL {
        if SweepManifest::path(root, f.sweep()).exists() {
            written.push(emit_figure_data(root, f, out_dir)?);
        } else {
            skipped.push(f);
        }
    }
    Ok((written, skipped))
}

/// One-line description of the columns, for `--help` style listings.
pub fn describe() -> String {
    let mut s = String::new();
    for f in Figure::ALL {
        let _ = writeln!(s, "{}: {}", f.file_name(), f.header());
    }
    s
}
