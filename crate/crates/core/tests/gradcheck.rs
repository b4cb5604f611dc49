use fgv_core::gradcheck::suite::{describe, run_all, KINK_MARGIN, TOLERANCE};

#[test]
fn every_op_block_and_head_matches_central_differences() {
    let cases = run_all().unwrap();
    for c in &cases {
        println!("{}", describe(c));
    }
    for c in &cases {
        assert!(c.report.entries_checked > 0, "{}", c.name);
        assert!(c.report.kink_margin.is_none_or(|m| m > KINK_MARGIN), "{}", describe(c));
        assert!(c.report.max_rel_error < TOLERANCE, "{}", describe(c));
    }
}
