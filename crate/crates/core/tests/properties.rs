use satn_core::verify;

#[test]
fn tiny_model_gradient_matches_finite_differences() {
    let r = verify::model_gradient(7);
    assert!(r.passed, "{}", r.detail);
}

#[test]
fn attention_off_model_equals_plain_backbone() {
    let r = verify::baseline_equivalence(&satn_core::network::ModelConfig::default(), 11);
    assert!(r.passed, "{}", r.detail);
}

#[test]
fn sharper_temperatures_give_smaller_gaps() {
    let r = verify::sharpness_monotonicity(10_000, 5);
    assert!(r.passed, "{}", r.detail);
}

#[test]
fn full_suite_passes() {
    for r in verify::run_all(1) {
        assert!(r.passed, "{}: {}", r.name, r.detail);
    }
}
