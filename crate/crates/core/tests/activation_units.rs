use rsae_core::activation::*;

#[test]
fn elu_values() {
    assert_eq!(Activation::Elu.apply(2.0), 2.0);
    assert!((Activation::Elu.apply(-1.0) - (libm::exp(-1.0) - 1.0)).abs() < 1e-15);
    assert!((Activation::Elu.apply(-1.0) + 0.632121).abs() < 1e-6);
}

#[test]
fn elu_is_c1_at_zero() {
    let e = Activation::Elu;
    assert!(e.apply(1e-12).abs() <= 2e-12);
    assert!(e.apply(-1e-12).abs() <= 2e-12);
    assert!((e.derivative(1e-12, 1) - e.derivative(-1e-12, 1)).abs() <= 1e-9);
    assert_eq!(e.derivative(0.0, 2), 1.0);
}

#[test]
fn derivatives_match_finite_differences() {
    let h = 1e-5;
    for act in [Activation::Elu, Activation::Sigmoid, Activation::Tanh] {
        for &x in &[-1.7, -0.3, 0.4, 1.9] {
            for k in 0..3u8 {
                let fd = (act.derivative(x + h, k) - act.derivative(x - h, k)) / (2.0 * h);
                let an = act.derivative(x, k + 1);
                assert!((fd - an).abs() < 1e-7, "{act} order {k} at {x}: {fd} vs {an}");
            }
        }
    }
}

#[test]
fn parse_round_trip() {
    for act in [
        Activation::Elu,
        Activation::Sigmoid,
        Activation::Tanh,
        Activation::Relu,
        Activation::Linear,
    ] {
        assert_eq!(act.name().parse::<Activation>().unwrap(), act);
    }
    assert!("softplus".parse::<Activation>().is_err());
}
