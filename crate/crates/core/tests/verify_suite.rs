use memlab::harness::verify::{gradcheck_ops, gradcheck_transformer, run_suite, GRAD_TOLERANCE};
use memlab::model::Task;

#[test]
fn every_op_gradient_matches_finite_differences() {
    for (name, err) in gradcheck_ops().unwrap() {
        assert!(err < GRAD_TOLERANCE, "{name}: {err:.3e}");
    }
}

#[test]
fn two_layer_model_gradients_match() {
    for task in [Task::Causal, Task::Masked] {
        for (name, err) in gradcheck_transformer(task).unwrap() {
            assert!(err < GRAD_TOLERANCE, "{task:?} {name}: {err:.3e}");
        }
    }
}

#[test]
fn suite_passes() {
    let dir = tempfile::tempdir().unwrap();
    for c in run_suite(dir.path()).unwrap() {
        assert!(c.passed, "{}: {}", c.name, c.detail);
    }
}
