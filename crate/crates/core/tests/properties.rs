//! Randomized invariants across the tensor, model, optimizer, corpus and
//! metric layers.

use memlab::corpus::synth::{generate, SynthConfig};
use memlab::corpus::{
    ends_with_terminal, mask_layout, prepend_doc_ids, strip_doc_ids, Corpus, Dataset, DocIdMode, MaskStyle, Vocabulary,
    PREFIX_LEN, PREFIX_WORDS,
};
use memlab::harness::RunConfig;
use memlab::metrics::{extract_contexts, memory_unit_lengths, score, threshold_crossing, ForgettingCurve, PosRecord};
use memlab::model::{Checkpoint, ModelState, Task, TransformerConfig};
use memlab::optim::{AdamState, LrSchedule};
use memlab::tensor::{Tape, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect())
}

fn tiny_model(seed: u64, vocab: usize) -> ModelState<f32> {
    let cfg = TransformerConfig::new(2, 2, 8, vocab).with_max_seq_len(16);
    ModelState::build(cfg, seed).unwrap()
}

fn small_dataset(docs: usize, seed: u64, max_seq_len: usize) -> (Dataset, Vocabulary) {
    let synth = generate(&SynthConfig {
        documents: docs,
        min_sentences: 1,
        max_sentences: 4,
        seed,
        ..SynthConfig::default()
    })
    .unwrap();
    let corpus = Corpus::parse(&synth.text).unwrap();
    let vocab = corpus.build_vocab(4096, 1, &PREFIX_WORDS).unwrap();
    let ds = corpus.pack(&vocab, max_seq_len, PREFIX_LEN).unwrap();
    (ds, vocab)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn element_count_is_the_shape_product(shape in prop::collection::vec(1usize..5, 1..4)) {
        let t = Tensor::<f32>::zeros(&shape);
        prop_assert_eq!(t.numel(), shape.iter().product::<usize>());
        prop_assert_eq!(t.data().len(), t.numel());
    }

    #[test]
    fn softmax_rows_are_distributions(seed in any::<u64>(), rows in 1usize..6, cols in 1usize..9, axis in 0usize..2) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(random_tensor(&mut rng, &[rows, cols]).cast::<f64>());
        let y = tape.softmax(x, axis);
        let v = tape.value(y).data().to_vec();
        prop_assert!(v.iter().all(|&p| (0.0..=1.0).contains(&p)));
        let sums: Vec<f64> = if axis == 1 {
            (0..rows).map(|r| v[r * cols..(r + 1) * cols].iter().sum()).collect()
        } else {
            (0..cols).map(|c| (0..rows).map(|r| v[r * cols + c]).sum()).collect()
        };
        for s in sums {
            prop_assert!((s - 1.0).abs() < 1e-6, "{}", s);
        }
    }

    #[test]
    fn gradients_accumulate_over_uses(seed in any::<u64>(), n in 1usize..8, a in -2.0f64..2.0, b in -2.0f64..2.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xv = random_tensor(&mut rng, &[1, n]);
        // loss = sum(a*x) + sum(b*x): d/dx = a + b, exactly
        let mut tape = Tape::<f64>::new();
        let x = tape.param(xv);
        let ya = tape.scale(x, a);
        let yb = tape.scale(x, b);
        let s = tape.add(ya, yb);
        let loss = tape.sum(s);
        let g = tape.backward(loss).unwrap();
        for &gi in g.get(x).unwrap().data() {
            prop_assert_eq!(gi, a + b);
        }
    }

    #[test]
    fn param_count_matches_built_tensors(layers in 0usize..3, heads in 1usize..3, dh in 2usize..5, vocab in 5usize..40, seq in 2usize..12, tie in any::<bool>()) {
        let mut cfg = TransformerConfig::new(layers, heads, heads * dh, vocab).with_max_seq_len(seq);
        cfg.tie_embeddings = tie;
        let m = ModelState::<f32>::build(cfg.clone(), 0).unwrap();
        let total: usize = m.params().iter().map(|(_, t)| t.numel()).sum();
        prop_assert_eq!(total as u64, cfg.param_count());
        prop_assert_eq!(m.param_count(), cfg.param_count());
    }

    #[test]
    fn future_tokens_do_not_leak(seed in any::<u64>(), len in 2usize..16, t in 0usize..15, noise in any::<u64>()) {
        let t = t % (len - 1);
        let model = tiny_model(seed % 7, 13);
        let mut rng = ChaCha8Rng::seed_from_u64(noise);
        let a: Vec<u32> = (0..len).map(|_| rng.gen_range(0..13)).collect();
        let mut b = a.clone();
        for x in &mut b[t + 1..] {
            *x = rng.gen_range(0..13);
        }
        let la = &model.forward(&[&a]).unwrap()[0];
        let lb = &model.forward(&[&b]).unwrap()[0];
        let v = 13;
        prop_assert_eq!(&la.data()[..(t + 1) * v], &lb.data()[..(t + 1) * v]);
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact(seed in any::<u64>(), len in 1usize..16) {
        let model = tiny_model(seed, 11);
        let bytes = Checkpoint::from_model(&model, 3, 17, 999).to_bytes().unwrap();
        let back = Checkpoint::read_from(&mut bytes.as_slice()).unwrap().model().unwrap();
        prop_assert_eq!(back.params(), model.params());
        let ids: Vec<u32> = (0..len as u32).map(|i| (i * 7 + seed as u32) % 11).collect();
        let before = model.forward(&[&ids]).unwrap();
        prop_assert_eq!(&before, &back.forward(&[&ids]).unwrap());
        prop_assert_eq!(&before, &model.forward(&[&ids]).unwrap());
    }

    #[test]
    fn schedule_is_piecewise_linear_and_peaks_at_warmup(max_lr in 1e-5f64..1e-1, warm in 1u64..5000, extra in 1u64..100_000) {
        let total = warm + extra;
        let s = LrSchedule::new(max_lr, warm, total).unwrap();
        prop_assert_eq!(s.lr_at(0.0), 0.0);
        prop_assert_eq!(s.lr_at(warm as f64), max_lr);
        prop_assert_eq!(s.lr_at(total as f64), 0.0);
        let n = 10_000;
        let step = total as f64 * 1.1 / n as f64;
        let mut prev = s.lr_at(0.0);
        for i in 1..=n {
            let x = i as f64 * step;
            let lr = s.lr_at(x);
            prop_assert!(lr >= 0.0 && lr <= max_lr);
            // slope is bounded by the steeper of the two segments
            let slope = max_lr / warm as f64 + max_lr / extra as f64;
            prop_assert!((lr - prev).abs() <= slope * step * (1.0 + 1e-9) + 1e-15);
            prev = lr;
        }
    }

    #[test]
    fn adam_leaves_parameters_alone_without_gradient(seed in any::<u64>(), steps in 1usize..5, lr in 1e-4f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shapes = [vec![3, 4], vec![5]];
        let mut params: Vec<Tensor<f64>> = shapes.iter().map(|s| random_tensor(&mut rng, s)).collect();
        let before = params.clone();
        let zeros: Vec<Tensor<f64>> = shapes.iter().map(|s| Tensor::zeros(s)).collect();
        let mut adam = AdamState::<f64>::new(shapes.iter().map(Vec::as_slice));
        for k in 0..steps {
            let mut refs: Vec<&mut Tensor<f64>> = params.iter_mut().collect();
            adam.step(&mut refs, &zeros.iter().collect::<Vec<_>>(), lr).unwrap();
            prop_assert_eq!(adam.step, k as u64 + 1);
        }
        prop_assert_eq!(params, before);
    }

    #[test]
    fn identical_adam_states_update_identically(seed in any::<u64>(), lr in 1e-4f64..1e-1) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shapes = [vec![2, 3]];
        let p0 = random_tensor(&mut rng, &shapes[0]).cast::<f32>();
        let grads: Vec<Tensor<f32>> = (0..3).map(|_| random_tensor(&mut rng, &shapes[0]).cast()).collect();
        let run = || {
            let mut p = p0.clone();
            let mut adam = AdamState::<f32>::new(shapes.iter().map(Vec::as_slice));
            for g in &grads {
                adam.step(&mut [&mut p], &[g], lr).unwrap();
            }
            (p, adam)
        };
        prop_assert_eq!(run(), run());
    }

    #[test]
    fn packing_respects_length_and_sentence_bounds(docs in 1usize..5, seed in any::<u64>(), max_len in 8usize..64) {
        let (ds, vocab) = small_dataset(docs, seed, max_len);
        ds.validate().unwrap();
        for s in &ds.sequences {
            prop_assert!(s.len() + PREFIX_LEN <= max_len);
            prop_assert!(s.truncated || ends_with_terminal(s, &vocab));
        }
    }

    #[test]
    fn mask_layouts_are_reproducible_and_skip_reserved(docs in 1usize..4, seed in any::<u64>(), mseed in any::<u64>(), p in 0.05f64..0.9) {
        let (ds, vocab) = small_dataset(docs, seed, 48);
        for (i, s) in ds.sequences.iter().enumerate() {
            let a = mask_layout(s, p, mseed, i as u64, MaskStyle::Bert, &vocab);
            prop_assert_eq!(&a, &mask_layout(s, p, mseed, i as u64, MaskStyle::Bert, &vocab));
            for &pos in &a.positions {
                prop_assert!(!Vocabulary::is_special(s.ids[pos as usize]));
                prop_assert!(pos as usize >= s.prefix_len);
            }
        }
    }

    #[test]
    fn stripping_identifiers_recovers_control(docs in 1usize..5, seed in any::<u64>()) {
        let (ds, vocab) = small_dataset(docs, seed, 40);
        let (prepended, v2) = prepend_doc_ids(&ds, &vocab, DocIdMode::Prepend).unwrap();
        prop_assert_eq!(strip_doc_ids(&prepended), ds.clone());
        let region = v2.docid_region().unwrap();
        for w in vocab.word_ids() {
            prop_assert!(!region.contains(&w));
        }
        let (control, v3) = prepend_doc_ids(&ds, &vocab, DocIdMode::Control).unwrap();
        prop_assert_eq!(control, ds);
        prop_assert_eq!(v3, vocab);
    }

    #[test]
    fn scoring_ignores_batching_and_sequence_order(docs in 1usize..4, seed in any::<u64>(), budget in 1usize..200) {
        let (ds, vocab) = small_dataset(docs, seed, 16);
        let model = tiny_model(seed, vocab.len());
        let set = extract_contexts(&ds, Task::Causal, 0, 0.15, &vocab).unwrap();
        let full = score(&model, &set, 1 << 20).unwrap();
        prop_assert_eq!(&full, &score(&model, &set, budget).unwrap());
        let mut rev = ds.clone();
        rev.sequences.reverse();
        let rset = extract_contexts(&rev, Task::Causal, 0, 0.15, &vocab).unwrap();
        prop_assert_eq!(full.hits(), score(&model, &rset, budget).unwrap().hits());
        prop_assert!((0.0..=1.0).contains(&full.m()));

        let masked = extract_contexts(&ds, Task::Masked, 9, 0.3, &vocab);
        if let Ok(mset) = masked {
            let a = score(&model, &mset, budget).unwrap();
            let b = score(&model, &extract_contexts(&ds, Task::Masked, 9, 0.3, &vocab).unwrap(), 1 << 20).unwrap();
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn r_mem_never_exceeds_r(triples in prop::collection::vec((0usize..6, 0usize..6, any::<bool>()), 1..80)) {
        use memlab::corpus::PosTag;
        // an exact hit always carries the ground-truth tag
        let items = triples.iter().map(|&(g, p, hit)| {
            let g = PosTag::ALL[g];
            (g, if hit { g } else { PosTag::ALL[p] }, hit)
        });
        let rec = PosRecord::from_triples(items);
        for (tag, [r, r_mem]) in rec.ratios() {
            prop_assert!(0.0 <= r_mem && r_mem <= r && r <= 1.0, "{}: {} {}", tag, r, r_mem);
        }
    }

    #[test]
    fn crossings_are_first_and_monotone_in_tau(series in prop::collection::vec(0.0f64..=1.0, 1..30), taus in prop::collection::vec(0.01f64..0.99, 2..6)) {
        let mut taus = taus;
        taus.sort_by(f64::total_cmp);
        let cs: Vec<_> = taus.iter().map(|&t| threshold_crossing(&series, t).unwrap()).collect();
        for c in &cs {
            if let Some(i) = c.index {
                prop_assert!(series[i - 1] >= c.tau);
                prop_assert!(series[..i - 1].iter().all(|&m| m < c.tau));
            } else {
                prop_assert!(series.iter().all(|&m| m < c.tau));
            }
        }
        for w in cs.windows(2) {
            prop_assert!(w[0].index_or_censored() <= w[1].index_or_censored());
        }
    }

    #[test]
    fn unit_histogram_weights_count_memorized_positions(bits in prop::collection::vec(prop::collection::vec(any::<bool>(), 1..20), 1..8)) {
        let stats = memory_unit_lengths(bits.iter().map(Vec::as_slice));
        let ones = bits.iter().flatten().filter(|&&b| b).count() as u64;
        let weight: u64 = stats.histogram.iter().map(|(&len, &n)| len as u64 * n).sum();
        prop_assert_eq!(weight, ones);
        prop_assert_eq!(stats.memorized, ones);
        if stats.runs > 0 {
            let longest = bits.iter().map(Vec::len).max().unwrap();
            prop_assert!(stats.mean_len >= 1.0 && stats.mean_len <= longest as f64);
        }
    }

    #[test]
    fn forgetting_baseline_is_the_minimum_and_diffs_telescope(values in prop::collection::vec(0.0f64..=1.0, 1..40)) {
        let points = values.iter().enumerate().map(|(i, &v)| (i + 1, i == 0, v)).collect();
        let curve = ForgettingCurve::new(points).unwrap();
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        prop_assert_eq!(curve.baseline(), min);
        let d = curve.diff();
        prop_assert_eq!(d.len(), values.len() - 1);
        let total: f64 = d.iter().sum();
        prop_assert!((total - (values[values.len() - 1] - values[0])).abs() < 1e-12);
    }

    #[test]
    fn run_identity_survives_serialization(seed in any::<u64>(), epochs in 1usize..500, batch in 1usize..100_000, lr in prop::option::of(1e-5f64..1e-1)) {
        let mut c = RunConfig::new(memlab::harness::ModelSpec::Preset("micro-s".into()), Task::Causal, memlab::harness::Stop::Epochs(epochs), batch);
        c.seed = seed;
        c.lr = lr;
        let json = c.to_canonical_json().unwrap();
        let back: RunConfig = serde_json::from_str(&json).unwrap();
        prop_assert_eq!(back.hash().unwrap(), c.hash().unwrap());
        prop_assert_eq!(back.to_canonical_json().unwrap(), json);
    }
}
