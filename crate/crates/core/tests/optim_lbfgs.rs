use rsae_core::optim::lbfgs::*;
use rsae_core::{Error, Result};

fn rosenbrock(x: &[f64], g: &mut [f64]) -> Result<f64> {
    let mut f = 0.0;
    g.fill(0.0);
    for i in 0..x.len() - 1 {
        let a = x[i + 1] - x[i] * x[i];
        let b = 1.0 - x[i];
        f += 100.0 * a * a + b * b;
        g[i] += -400.0 * x[i] * a - 2.0 * b;
        g[i + 1] += 200.0 * a;
    }
    Ok(f)
}

#[test]
fn solves_rosenbrock() {
    let cfg = LbfgsConfig { max_iter: 500, gtol: 1e-9, ..Default::default() };
    let r = minimize(rosenbrock, &[-1.2, 1.0, -0.5, 0.8], &cfg, |_, _| {}).unwrap();
    for v in &r.x {
        assert!((v - 1.0).abs() < 1e-6, "{:?} ({:?})", r.x, r.termination);
    }
    for w in r.history.windows(2) {
        assert!(w[1] <= w[0]);
    }
}

#[test]
fn quadratic_converges_quickly() {
    let diag = [1.0, 10.0, 100.0];
    let obj = |x: &[f64], g: &mut [f64]| {
        let mut f = 0.0;
        for i in 0..3 {
            f += 0.5 * diag[i] * (x[i] - 1.0) * (x[i] - 1.0);
            g[i] = diag[i] * (x[i] - 1.0);
        }
        Ok(f)
    };
    let cfg = LbfgsConfig { max_iter: 100, gtol: 1e-10, ftol: 0.0, ..Default::default() };
    let r = minimize(obj, &[0.0; 3], &cfg, |_, _| {}).unwrap();
    assert_eq!(r.termination, Termination::GradientTolerance);
    assert!(r.iterations < 30);
}

#[test]
fn overflowing_trial_steps_are_backed_off() {
    // exp blows up for large steps; the search must still make progress
    let obj = |x: &[f64], g: &mut [f64]| {
        let e = libm::exp(x[0]);
        g[0] = e - 2.0;
        let f = e - 2.0 * x[0];
        if f.is_finite() {
            Ok(f)
        } else {
            Err(Error::NonFinite("exp".into()))
        }
    };
    let cfg = LbfgsConfig { max_iter: 100, gtol: 1e-10, ..Default::default() };
    let r = minimize(obj, &[-800.0], &cfg, |_, _| {}).unwrap();
    assert!((r.x[0] - libm::log(2.0)).abs() < 1e-6, "{:?}", r);
}

#[test]
fn non_finite_start_is_divergence() {
    let obj = |_: &[f64], _: &mut [f64]| Ok(f64::NAN);
    assert!(matches!(
        minimize(obj, &[0.0], &LbfgsConfig::default(), |_, _| {}),
        Err(Error::Divergence { .. })
    ));
}
