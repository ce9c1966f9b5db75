use memlab::corpus::synth::SynthConfig;
use memlab::harness::*;
use memlab::model::Task;

fn tiny(task: Task, epochs: usize) -> RunConfig {
    let mut c = RunConfig::new(ModelSpec::Preset("micro-xs".into()), task, Stop::Epochs(epochs), 256);
    c.data.corpus = CorpusSource::Synthetic(SynthConfig {
        documents: 24,
        min_sentences: 3,
        max_sentences: 5,
        nouns: 80,
        verbs: 30,
        adjectives: 30,
        first_names: 40,
        surnames: 40,
        places: 20,
        seed: 7,
        ..SynthConfig::default()
    });
    c.data.max_seq_len = 96;
    c.data.validation_fraction = 0.2;
    c.lr = Some(3e-3);
    c
}

fn strip_wall(rs: &[MetricRecord]) -> Vec<MetricRecord> {
    rs.iter()
        .cloned()
        .map(|mut r| {
            r.wall_time = None;
            r
        })
        .collect()
}

#[test]
fn same_config_same_records() {
    let root = tempfile::tempdir().unwrap();
    let a = run_training(&tiny(Task::Causal, 2), root.path(), &RunOptions::default()).unwrap();
    let b = run_training(&tiny(Task::Causal, 2), root.path(), &RunOptions::default()).unwrap();
    assert_eq!(a.records, b.records);
    assert!(a.dir.join("config.resolved.json").exists());
    assert!(a.dir.join("dataset.json").exists());
    let epochs: Vec<_> = a.of_kind(RecordKind::Epoch).collect();
    assert_eq!(epochs.len(), 2);
    assert!(epochs
        .iter()
        .all(|r| r.m.is_some() && r.ppl_val.is_some() && r.per_pos.is_some() && r.mean_l.is_some()));
    let updates: Vec<_> = a.of_kind(RecordKind::Update).collect();
    assert!(!updates.is_empty());
    assert!(updates.windows(2).all(|w| w[1].index == w[0].index + 1));
}

#[test]
fn resume_matches_uninterrupted() {
    let root = tempfile::tempdir().unwrap();
    let mut cfg = tiny(Task::Causal, 3);
    cfg.forgetting = Some(ForgettingConfig {
        inject_epoch: 2,
        repetitions: 2,
        ..Default::default()
    });
    let full = run_training(&cfg, root.path(), &RunOptions::default()).unwrap();

    let other = tempfile::tempdir().unwrap();
    let halted = RunOptions {
        checkpoint_at: vec![2],
        halt_after_epoch: Some(2),
        ..Default::default()
    };
    run_training(&cfg, other.path(), &halted).unwrap();
    assert!(!other.path().join(full.run_id()).join("done.json").exists());
    let resumed = run_training(
        &cfg,
        other.path(),
        &RunOptions {
            resume: true,
            ..Default::default()
        },
    )
    .unwrap();
    assert_eq!(strip_wall(&resumed.records), strip_wall(&full.records));
}

#[test]
fn warm_start_copies_the_base_prefix() {
    let root = tempfile::tempdir().unwrap();
    let base_cfg = tiny(Task::Causal, 3);
    let base = run_training(
        &base_cfg,
        root.path(),
        &RunOptions {
            checkpoint_at: vec![1],
            ..Default::default()
        },
    )
    .unwrap();
    let mut arm = base_cfg.clone();
    arm.label = "arm".into();
    arm.forgetting = Some(ForgettingConfig {
        inject_epoch: 1,
        ..Default::default()
    });
    let ws = WarmStart {
        run_dir: base.dir.clone(),
        epoch: 1,
    };
    let warm = run_training(
        &arm,
        root.path(),
        &RunOptions {
            warm_start: Some(ws),
            ..Default::default()
        },
    )
    .unwrap();
    let cold = run_training(&arm, root.path(), &RunOptions::default()).unwrap();
    assert_eq!(warm.records, cold.records);
    assert_eq!(warm.of_kind(RecordKind::Inject).count(), 1);
}

#[test]
fn completed_runs_are_reused() {
    let root = tempfile::tempdir().unwrap();
    let cfg = tiny(Task::Masked, 1);
    let a = run_training(&cfg, root.path(), &RunOptions::default()).unwrap();
    let metrics = a.dir.join("metrics.jsonl");
    let stamp = std::fs::metadata(&metrics).unwrap().modified().unwrap();
    let b = run_training(
        &cfg,
        root.path(),
        &RunOptions {
            reuse_complete: true,
            ..Default::default()
        },
    )
    .unwrap();
    assert_eq!(a.records, b.records);
    assert_eq!(std::fs::metadata(&metrics).unwrap().modified().unwrap(), stamp);
    assert!(a.of_kind(RecordKind::Epoch).all(|r| r.mean_l.is_none()));
}

#[test]
fn update_budget_stops_exactly() {
    let root = tempfile::tempdir().unwrap();
    let mut cfg = tiny(Task::Causal, 1);
    cfg.stop = Stop::Updates(7);
    let out = run_training(&cfg, root.path(), &RunOptions::default()).unwrap();
    assert_eq!(out.of_kind(RecordKind::Update).count(), 7);
    let last_lr = out.of_kind(RecordKind::Update).last().unwrap().lr.unwrap();
    assert!(last_lr.abs() < 1e-12, "schedule ends at zero, got {last_lr}");
    assert!(out.of_kind(RecordKind::Epoch).count() >= 1);
}
