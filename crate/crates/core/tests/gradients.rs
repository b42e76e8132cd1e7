use trimodal::gradsuite::{run_scope, Scope, DEFAULT_SEEDS, TOLERANCE};

fn check(scope: Scope) {
    let outcomes = run_scope(scope, DEFAULT_SEEDS, None).unwrap();
    assert!(!outcomes.is_empty());
    for o in &outcomes {
        println!(
            "{scope} {:<16} worst {:.3e} checked {} skipped {}",
            o.name, o.report.max_rel_error, o.report.checked, o.report.skipped
        );
        assert!(o.seeds >= 20);
        assert!(o.report.max_rel_error < TOLERANCE, "{} failed: {:?}", o.name, o.report);
        assert!(o.report.checked > o.report.skipped, "{}: too many kinks {:?}", o.name, o.report);
    }
}

#[test]
fn every_op_matches_finite_differences() {
    check(Scope::Ops);
}

#[test]
fn audio_loss_matches_finite_differences() {
    check(Scope::Audio);
}

#[test]
fn text_loss_matches_finite_differences() {
    check(Scope::Text);
}

#[test]
fn video_loss_matches_finite_differences() {
    check(Scope::Video);
}

#[test]
fn fused_loss_matches_finite_differences() {
    check(Scope::Fused);
}
