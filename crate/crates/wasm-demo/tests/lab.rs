use memlab_wasm_demo::{schedule_curve, Lab, LabOptions};

#[test]
fn schedule_curve_hits_its_boundaries() {
    let c = schedule_curve(1e-3, 0.25, 1000, 5).unwrap();
    let lrs: Vec<f64> = c.iter().map(|p| p.1).collect();
    assert_eq!(
        c.iter().map(|p| p.0).collect::<Vec<_>>(),
        vec![0.0, 250.0, 500.0, 750.0, 1000.0]
    );
    assert_eq!(lrs[0], 0.0);
    assert_eq!(lrs[1], 1e-3);
    assert!((lrs[2] - 1e-3 * 500.0 / 750.0).abs() < 1e-15);
    assert_eq!(lrs[4], 0.0);
    assert!(schedule_curve(0.0, 0.25, 1000, 5).is_err());
}

#[test]
fn tiny_lab_memorizes_and_highlights_agree() {
    let opts = LabOptions {
        epochs: 25,
        ..LabOptions::default()
    };
    let mut lab = Lab::synthetic(8, 3, opts).unwrap();
    let mut points = Vec::new();
    while !lab.finished() {
        points.push(lab.train_epoch().unwrap());
    }
    assert_eq!(points.len(), 25);
    let (first, last) = (&points[0], &points[24]);
    assert!(last.m > first.m + 0.2, "{first:?} -> {last:?}");
    assert!(last.mean_loss < first.mean_loss);

    let rows = lab.highlight(usize::MAX).unwrap();
    assert_eq!(rows.len(), lab.num_sequences());
    assert_eq!(rows.iter().map(Vec::len).sum::<usize>(), lab.num_tokens());
    let hits = rows.iter().flatten().filter(|(_, h)| *h).count();
    let scored = lab.num_tokens() - rows.len();
    assert!((hits as f64 / scored as f64 - last.m).abs() < 1e-12);
}

#[test]
fn user_text_is_accepted_and_bad_presets_are_not() {
    let text = "the cat sat on the mat .\n\na dog ran in the park .";
    let lab = Lab::from_text(text, LabOptions::default()).unwrap();
    assert_eq!(lab.num_sequences(), 2);
    let bad = LabOptions {
        preset: "nope".into(),
        ..LabOptions::default()
    };
    assert!(Lab::from_text(text, bad).is_err());
}
