use rtf_testkit::gradients::{block_checks, network_gradient_checks, op_checks, GradCheck, OP_INSTANCES};
use rtf_testkit::kernels::{all_kernel_suites, KERNEL_INSTANCES, KERNEL_TOL};

#[test]
fn kernels_match_their_oracles() {
    for o in all_kernel_suites(2024) {
        println!(
            "{:<16} instances={} worst={:.3e} ({})",
            o.kernel, o.instances, o.worst, o.worst_case
        );
        assert!(o.instances >= KERNEL_INSTANCES);
        assert!(
            o.passed(),
            "{} off by {} > {KERNEL_TOL} on {}",
            o.kernel,
            o.worst,
            o.worst_case
        );
    }
}

fn report(checks: &[GradCheck]) {
    for c in checks {
        println!(
            "{:<44} rel={:.2e} tol={:.0e} instances={} coords={}",
            c.name, c.rel_err, c.tol, c.instances, c.coords
        );
    }
    let bad: Vec<_> = checks.iter().filter(|c| !c.passed()).collect();
    assert!(bad.is_empty(), "failed: {bad:#?}");
}

#[test]
fn op_gradients_match_finite_differences() {
    let checks = op_checks(99);
    report(&checks);
    // the per-coordinate conv case is a single instance
    for c in checks.iter().filter(|c| !c.name.contains("per-coordinate")) {
        assert!(c.instances >= OP_INSTANCES, "{} ran {} instances", c.name, c.instances);
    }
}

#[test]
fn block_gradients_match_finite_differences() {
    report(&block_checks(7));
}

#[test]
fn network_gradients_match_finite_differences() {
    report(&network_gradient_checks(11));
}
