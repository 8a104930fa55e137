use rsae_core::rk::*;
use std::sync::Arc;

use rsae_core::{Result, Tape, Tensor, Var};

fn decay(tape: &mut Tape, x: Var) -> Result<Var> {
    tape.scale(x, -1.0)
}

fn step(x0: &[f64], h: f64, dir: Direction, scheme: &RkScheme) -> Vec<f64> {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::matrix(x0.len(), 1, x0.to_vec()).unwrap());
    let hs = Arc::new(vec![h; x0.len()]);
    let y = rk_timestep(&mut tape, x, &mut decay, &hs, dir, scheme).unwrap();
    tape.value(y).data().to_vec()
}

#[test]
fn tableau_is_consistent() {
    let s = RkScheme::three_eighths();
    assert!(RkScheme::new(s.a.clone(), s.b.clone()).is_ok());
    assert!(RkScheme::new(s.a.clone(), vec![0.25; 3]).is_err());
    assert!(RkScheme::new(s.a, vec![0.5, 0.5, 0.5, 0.5]).is_err());
}

#[test]
fn zero_field_leaves_state_unchanged() {
    for dir in [Direction::Forward, Direction::Backward] {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap());
        let h = Arc::new(vec![0.1, 0.2]);
        let y = rk_timestep(&mut tape, x, &mut |t: &mut Tape, v| t.scale(v, 0.0), &h, dir, &RkScheme::three_eighths())
            .unwrap();
        assert_eq!(tape.value(y).data(), &[1.0, 2.0, 3.0, 4.0]);
    }
}

#[test]
fn decay_matches_truncated_exponential() {
    let h: f64 = 0.1;
    let y = step(&[1.0, -2.0], h, Direction::Forward, &RkScheme::three_eighths());
    // any four-stage fourth-order scheme reproduces the degree-4 Taylor polynomial
    let taylor = 1.0 - h + h * h / 2.0 - h.powi(3) / 6.0 + h.powi(4) / 24.0;
    assert!((y[0] - taylor).abs() < 1e-15);
    assert!((y[0] - libm::exp(-h)).abs() < 1e-7);
    assert!((y[1] + 2.0 * libm::exp(-h)).abs() < 2e-7);
}

#[test]
fn backward_inverts_forward_to_fifth_order() {
    let s = RkScheme::three_eighths();
    let err = |h: f64| {
        let f = step(&[1.0], h, Direction::Forward, &s);
        (step(&f, h, Direction::Backward, &s)[0] - 1.0).abs()
    };
    let (e1, e2) = (err(0.1), err(0.05));
    assert!(e1 < 1e-5);
    let order = libm::log2(e1 / e2);
    assert!(order > 4.5, "round trip order {order}");
}

#[test]
fn non_positive_step_rejected() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::zeros(&[2, 1]));
    let h = Arc::new(vec![0.1, 0.0]);
    let r = rk_timestep(&mut tape, x, &mut decay, &h, Direction::Forward, &RkScheme::three_eighths());
    assert!(matches!(r, Err(rsae_core::Error::Domain(_))));
}
