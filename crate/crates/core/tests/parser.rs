use hjblab::bench::{check_golden, fuzz_parser, GOLDEN_EXPRESSIONS};
use hjblab::expr::{Dims, Expression};
use proptest::prelude::*;

#[test]
fn golden_expressions() {
    match check_golden(GOLDEN_EXPRESSIONS) {
        Ok(n) => assert!(n >= 30, "only {n} golden cases"),
        Err(bad) => panic!("golden mismatches:\n{}", bad.join("\n")),
    }
}

#[test]
fn golden_checker_catches_a_wrong_value() {
    let bad = "1+1 | (1.0 + 1.0) | 3\nx1 + | !syntax@3\n";
    assert_eq!(check_golden(bad).unwrap_err().len(), 2);
}

#[test]
fn fuzz_without_panics() {
    let (_, panics) = fuzz_parser(7, 20_000);
    assert_eq!(panics, 0);
}

proptest! {
    #[test]
    fn display_round_trips(src in "[xyzut12+*/^() .-]{1,40}") {
        let dims = Dims::new(2, 2, 1);
        if let Ok(e) = Expression::parse(&src, dims) {
            let again = Expression::parse(&e.to_string(), dims).unwrap();
            prop_assert_eq!(again.to_string(), e.to_string());
        }
    }

    #[test]
    fn arbitrary_text_never_panics(src in "\\PC{0,64}") {
        let _ = Expression::parse(&src, Dims::new(1, 1, 1));
    }
}
