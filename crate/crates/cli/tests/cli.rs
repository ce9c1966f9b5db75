use std::path::Path;
use std::process::{Command, Output};

const TINY: &[&str] = &[
    "--model",
    "micro-xs",
    "--documents",
    "16",
    "--epochs",
    "2",
    "--max-seq-len",
    "64",
    "--batch-tokens",
    "256",
];

fn memlab(root: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_memlab"))
        .env("MEMLAB_LOG_ROOT", root)
        .args(args)
        .output()
        .expect("spawn memlab")
}

fn with_tiny<'a>(cmd: &[&'a str]) -> Vec<&'a str> {
    cmd.iter().chain(TINY).copied().collect()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn only_run_dir(root: &Path) -> std::path::PathBuf {
    let dirs: Vec<_> = std::fs::read_dir(root)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.join("metrics.jsonl").exists())
        .collect();
    assert_eq!(dirs.len(), 1, "{dirs:?}");
    dirs[0].clone()
}

#[test]
fn train_writes_resolved_config_and_log_under_env_root() {
    let dir = tempfile::tempdir().unwrap();
    let out = memlab(dir.path(), &with_tiny(&["train"]));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = only_run_dir(dir.path());
    let resolved: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run.join("config.resolved.json")).unwrap()).unwrap();
    assert_eq!(resolved["config"]["model"]["preset"], "micro-xs");
    assert!(stdout(&out).contains(run.file_name().unwrap().to_str().unwrap()));
}

#[test]
fn repeated_train_gives_identical_logs() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    assert!(memlab(a.path(), &with_tiny(&["train"])).status.success());
    assert!(memlab(b.path(), &with_tiny(&["train"])).status.success());
    let read = |root: &Path| std::fs::read(only_run_dir(root).join("metrics.jsonl")).unwrap();
    assert_eq!(read(a.path()), read(b.path()));
}

#[test]
fn config_file_is_accepted_and_flags_override_it() {
    let dir = tempfile::tempdir().unwrap();
    assert!(memlab(dir.path(), &with_tiny(&["train", "--seed", "4"]))
        .status
        .success());
    let run = only_run_dir(dir.path());
    let resolved: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run.join("config.resolved.json")).unwrap()).unwrap();
    let cfg = dir.path().join("run.json");
    std::fs::write(&cfg, resolved["config"].to_string()).unwrap();
    let same = memlab(dir.path(), &["train", "--reuse", "--config", cfg.to_str().unwrap()]);
    assert!(same.status.success());
    assert!(stdout(&same).contains(run.file_name().unwrap().to_str().unwrap()));
    let other = memlab(dir.path(), &["train", "--config", cfg.to_str().unwrap(), "--seed", "5"]);
    assert!(other.status.success());
    assert!(!stdout(&other).contains(run.file_name().unwrap().to_str().unwrap()));
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"unknown": 1}"#).unwrap();
    assert_eq!(
        memlab(dir.path(), &["train", "--config", bad.to_str().unwrap()])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        memlab(dir.path(), &with_tiny(&["train", "--lr=-1"])).status.code(),
        Some(2)
    );
    assert_eq!(
        memlab(dir.path(), &with_tiny(&["train", "--model", "no-such-model"]))
            .status
            .code(),
        Some(2)
    );
    assert_eq!(memlab(dir.path(), &["emit-figures"]).status.code(), Some(2));
}

#[test]
fn divergence_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = memlab(dir.path(), &with_tiny(&["train", "--lr", "1e30"]));
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn strict_mode_exits_4_when_a_threshold_is_missed() {
    let dir = tempfile::tempdir().unwrap();
    let out = memlab(dir.path(), &with_tiny(&["train", "--strict", "--taus", "0.99"]));
    assert_eq!(out.status.code(), Some(4));
    let lenient = memlab(dir.path(), &with_tiny(&["train", "--reuse", "--taus", "0.99"]));
    assert!(lenient.status.success());
    assert!(stdout(&lenient).contains("unreached(2)"));
}

#[test]
fn scale_sweep_then_figures() {
    let dir = tempfile::tempdir().unwrap();
    let args = with_tiny(&["sweep-scale", "--sizes", "micro-xs,micro-s", "--seeds", "1"]);
    // --model from TINY is ignored by sweeps, which set the size per run.
    let out = memlab(dir.path(), &args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(stdout(&out).lines().count(), 2);

    let figs = dir.path().join("figs");
    let emit = memlab(dir.path(), &["emit-figures", "--out", figs.to_str().unwrap()]);
    assert!(emit.status.success());
    let fig1 = std::fs::read_to_string(figs.join("fig1_t_vs_n.csv")).unwrap();
    assert_eq!(fig1.lines().count(), 1 + 2 * 4);
    assert!(figs.join("fig17_mul.csv").exists());
    assert!(!figs.join("fig7_lr.csv").exists());

    let again = dir.path().join("again");
    assert!(memlab(
        dir.path(),
        &["emit-figures", "--figures", "fig1", "--out", again.to_str().unwrap()]
    )
    .status
    .success());
    assert_eq!(std::fs::read_to_string(again.join("fig1_t_vs_n.csv")).unwrap(), fig1);
}

#[test]
fn corpus_generation_and_token_export() {
    let dir = tempfile::tempdir().unwrap();
    let text = dir.path().join("c.txt");
    let ann = dir.path().join("c.tags");
    let out = memlab(
        dir.path(),
        &[
            "gen-corpus",
            "--documents",
            "5",
            "--out",
            text.to_str().unwrap(),
            "--annotations",
            ann.to_str().unwrap(),
        ],
    );
    assert!(out.status.success());
    let tokens = stdout(&memlab(dir.path(), &["export-tokens", text.to_str().unwrap()]));
    let tags = std::fs::read_to_string(&ann).unwrap();
    assert_eq!(tokens.lines().count(), tags.lines().count());
    for (tok, line) in tokens.lines().zip(tags.lines()) {
        assert_eq!(line.split('\t').next(), Some(tok));
    }
}

#[test]
fn figure_listing_names_every_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = stdout(&memlab(dir.path(), &["emit-figures", "--list"]));
    for f in [
        "fig1_t_vs_n",
        "fig4_mem",
        "fig7_lr",
        "fig8_docid",
        "fig9_pos",
        "fig10_",
        "fig12_",
        "fig16_diff",
        "fig17_mul",
    ] {
        assert!(out.contains(f), "{f}");
    }
}
