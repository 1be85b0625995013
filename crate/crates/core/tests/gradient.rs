mod common;

#[test]
fn finite_differences_agree_on_twenty_cases() {
    for seed in 0..20 {
        let (err, mu) = common::gradient_case(seed);
        eprintln!("case {seed} mu {mu:.3} err {err:.2e}");
        assert!(err <= 1e-4, "case {seed} (mu {mu}): {err}");
    }
}
