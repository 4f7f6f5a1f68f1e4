//! Full finite-difference sweep: 100 seeded trials per op, worst relative
//! error must stay within 1e-4.

use clipsight_tensor::suite::op_suite;

#[test]
fn all_ops_pass_100_trials() {
    let checks = op_suite(100).expect("suite runs");
    assert!(checks.len() >= 25, "expected full op coverage");
    for check in checks {
        assert!(
            check.max_rel_err <= 1e-4,
            "{}: worst rel err {:.3e}",
            check.op,
            check.max_rel_err
        );
    }
}
