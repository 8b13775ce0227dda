//! Expression grammar: round trips, error offsets, catalog coefficient values.

use gmaslov::problems::{eval_expression, parse_expression, BinOp, Expression, Func};
use gmaslov::Error;
use proptest::prelude::*;

fn leaf() -> impl Strategy<Value = Expression> {
    prop_oneof![(0.0f64..100.0).prop_map(Expression::Const), Just(Expression::X)]
}

fn expr() -> impl Strategy<Value = Expression> {
    leaf().prop_recursive(5, 40, 2, |inner| {
        prop_oneof![
            inner.clone().prop_map(|e| Expression::Neg(Box::new(e))),
            (prop_oneof![Just(Func::Sin), Just(Func::Cos), Just(Func::Exp)], inner.clone()).prop_map(|(f, e)| Expression::Func(f, Box::new(e))),
            (prop_oneof![Just(BinOp::Add), Just(BinOp::Sub), Just(BinOp::Mul), Just(BinOp::Div), Just(BinOp::Pow)], inner.clone(), inner)
                .prop_map(|(op, a, b)| Expression::Binary(op, Box::new(a), Box::new(b))),
        ]
    })
}

proptest! {
    #[test]
    fn display_parse_round_trip(e in expr()) {
        let text = e.to_string();
        let back = parse_expression(&text).unwrap();
        prop_assert_eq!(&back, &e, "{}", text);
        prop_assert_eq!(back.to_string(), text);
    }
}

#[test]
fn documented_examples() {
    let a0 = parse_expression(".2*cos(10*x) - .5*cos(x/10)").unwrap();
    assert!((eval_expression(&a0, 0.0).unwrap() + 0.3).abs() < 1e-15);
    assert_eq!(eval_expression(&parse_expression("x").unwrap(), 0.25).unwrap(), 0.25);
    match parse_expression("sin(") {
        Err(Error::Parse { offset, .. }) => assert_eq!(offset, 4),
        other => panic!("expected a syntax error, got {other:?}"),
    }
    assert_eq!(eval_expression(&parse_expression("2*sin(5*x)").unwrap(), 0.0).unwrap(), 0.0);
    assert_eq!(eval_expression(&parse_expression("5*x*(1-x)").unwrap(), 0.5).unwrap(), 1.25);
    assert!(matches!(eval_expression(&parse_expression("1/x").unwrap(), 0.0), Err(Error::Eval { .. })));
}

#[test]
fn grammar_details() {
    let v = |s: &str, x: f64| parse_expression(s).unwrap().eval(x).unwrap();
    assert_eq!(v("2^3^2", 0.0), 512.0);
    // Unary minus binds tighter than ^ in this grammar.
    assert_eq!(v("-x^2", 3.0), 9.0);
    assert_eq!(v("1-2-3", 0.0), -4.0);
    assert_eq!(v("8/4/2", 0.0), 1.0);
    assert_eq!(v("sqrt(x)*exp(0)", 4.0), 2.0);
    assert_eq!(v("  x  +\t1 ", 2.0), 3.0);
    for bad in ["", "1+", "(1", "x x", "sin x", "foo(x)", "1..2", "*"] {
        assert!(matches!(parse_expression(bad), Err(Error::Parse { .. })), "{bad:?} should not parse");
    }
}

#[test]
fn example1_coefficients_match_hand_values() {
    let a0 = parse_expression(".2*cos(10*x) - .5*cos(x/10)").unwrap();
    let a1 = parse_expression("2*sin(5*x)").unwrap();
    for x in [0.0f64, 0.5, 1.0] {
        let h0 = 0.2 * (10.0 * x).cos() - 0.5 * (x / 10.0).cos();
        let h1 = 2.0 * (5.0 * x).sin();
        assert!((a0.eval(x).unwrap() - h0).abs() <= 1e-12, "alpha0({x})");
        assert!((a1.eval(x).unwrap() - h1).abs() <= 1e-12, "alpha1({x})");
    }
    // Literal hand values.
    assert!((a0.eval(0.5).unwrap() - (-0.4426426931048379)).abs() < 1e-12);
    assert!((a1.eval(1.0).unwrap() - (-1.917848549326277)).abs() < 1e-12);
}
