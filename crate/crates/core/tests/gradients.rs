mod common;

use common::{numeric_gradient, random_matrix, relative_error, rng};
use proptest::prelude::*;
use rsae_core::autoencoder::{
    assemble_losses, forward_state, loss_and_gradient, z_derivative, z_derivative_order2, AutoencoderParams, Batch,
    LossWeights, Objective,
};
use rsae_core::denoise::{denoise_gradient, denoise_objective, DenoiseConfig, NoiseEstimate, WeightDecay};
use rsae_core::library::{ModelOrder, SindyCoefficients, SindySpec};
use rsae_core::mlp::MlpParams;
use rsae_core::tape::Unary;
use rsae_core::{Activation, Tape, Tensor};

const STEP: f64 = 1e-6;

fn unary_loss(op: Unary, x: &[f64]) -> f64 {
    let mut tape = Tape::new();
    let v = tape.constant(Tensor::vector(x.to_vec()));
    let y = tape.unary(v, op).unwrap();
    let s = tape.sum(y).unwrap();
    tape.value(s).item()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn unary_ops_match_finite_differences(x in prop::collection::vec(-2.0f64..2.0, 1..6), which in 0usize..8) {
        let op = [
            Unary::Sin,
            Unary::Square,
            Unary::Act(Activation::Elu, 0),
            Unary::Act(Activation::Sigmoid, 0),
            Unary::Act(Activation::Tanh, 0),
            Unary::Act(Activation::Sigmoid, 1),
            Unary::Act(Activation::Elu, 1),
            Unary::Act(Activation::Tanh, 2),
        ][which];
        // keep away from the kinks of ELU derivatives and abs
        prop_assume!(x.iter().all(|v| v.abs() > 1e-3));
        let mut tape = Tape::new();
        let v = tape.leaf(Tensor::vector(x.clone()));
        let y = tape.unary(v, op).unwrap();
        let s = tape.sum(y).unwrap();
        let g = tape.grad(s, &[v]).unwrap();
        let fd = numeric_gradient(&x, STEP, |p| unary_loss(op, p));
        prop_assert!(relative_error(g[0].data(), &fd, 1e-8) <= 1e-5);
    }

    #[test]
    fn affine_least_squares_gradients(seed in 0u64..1000) {
        let mut r = rng(seed);
        let x = random_matrix(5, 3, -2.0, 2.0, &mut r);
        let w = random_matrix(3, 2, -2.0, 2.0, &mut r);
        let b = random_matrix(1, 2, -2.0, 2.0, &mut r);
        let y = random_matrix(5, 2, -2.0, 2.0, &mut r);
        let loss = |wd: &[f64], bd: &[f64]| {
            let mut tape = Tape::new();
            let xv = tape.constant(x.clone());
            let wv = tape.leaf(Tensor::matrix(3, 2, wd.to_vec()).unwrap());
            let bv = tape.leaf(Tensor::vector(bd.to_vec()));
            let yv = tape.constant(y.clone());
            let p = tape.matmul(xv, wv).unwrap();
            let p = tape.add_bias(p, bv).unwrap();
            let l = tape.mse(p, yv).unwrap();
            let g = tape.grad(l, &[wv, bv]).unwrap();
            (tape.value(l).item(), g)
        };
        let (_, g) = loss(w.data(), b.data());
        let fdw = numeric_gradient(w.data(), STEP, |p| loss(p, b.data()).0);
        let fdb = numeric_gradient(b.data(), STEP, |p| loss(w.data(), p).0);
        prop_assert!(relative_error(g[0].data(), &fdw, 1e-8) <= 1e-5);
        prop_assert!(relative_error(g[1].data(), &fdb, 1e-8) <= 1e-5);
    }
}

#[test]
fn matmul_sum_gradient_is_ones_times_b_transpose() {
    let mut tape = Tape::new();
    let a = tape.leaf(Tensor::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap());
    let b = tape.constant(Tensor::from_rows(&[[0.5, -1.0, 2.0], [3.0, 0.0, 1.0]]).unwrap());
    let p = tape.matmul(a, b).unwrap();
    let s = tape.sum(p).unwrap();
    let g = tape.grad(s, &[a]).unwrap();
    // each row of the gradient is the row sums of b
    assert_eq!(g[0].data(), &[1.5, 4.0, 1.5, 4.0]);
}

#[test]
fn elu_network_gradients() {
    let mut r = rng(11);
    let params = MlpParams::xavier(&[3, 6, 5, 2], Activation::Elu, &mut r).unwrap();
    let x = random_matrix(4, 3, -2.0, 2.0, &mut r);
    let loss = |flat: &[f64]| {
        let mut p = params.clone();
        p.set_from_flat(flat);
        let out = p.forward(&x).unwrap();
        out.data().iter().map(|v| v * v).sum::<f64>()
    };
    let mut tape = Tape::new();
    let vars = params.register(&mut tape);
    let xv = tape.constant(x.clone());
    let out = vars.forward(&mut tape, xv).unwrap();
    let sq = tape.square(out).unwrap();
    let l = tape.sum(sq).unwrap();
    let grads = tape.grad(l, &vars.params()).unwrap();
    let analytic: Vec<f64> = grads.iter().flat_map(|g| g.data().to_vec()).collect();
    let mut flat = Vec::new();
    params.to_flat(&mut flat);
    let fd = numeric_gradient(&flat, STEP, loss);
    assert!(relative_error(&analytic, &fd, 1e-8) <= 1e-5);
}

#[test]
fn tape_replay_is_bit_identical() {
    let run = || {
        let mut r = rng(5);
        let params = MlpParams::xavier(&[4, 8, 4], Activation::Tanh, &mut r).unwrap();
        let x = random_matrix(6, 4, -2.0, 2.0, &mut r);
        let mut tape = Tape::new();
        let vars = params.register(&mut tape);
        let xv = tape.constant(x);
        let out = vars.forward(&mut tape, xv).unwrap();
        let l = tape.mean(out).unwrap();
        tape.grad(l, &vars.params()).unwrap()
    };
    assert_eq!(run(), run());
}

fn toy_denoise(seed: u64) -> (Vec<f64>, Tensor, MlpParams, NoiseEstimate, DenoiseConfig) {
    let mut r = rng(seed);
    let m = 20;
    let t: Vec<f64> = (0..m).map(|i| 0.05 * i as f64).collect();
    let y = Tensor::matrix(m, 2, (0..m).flat_map(|i| [libm::cos(t[i]), libm::sin(t[i])]).collect()).unwrap();
    let y = y.zip_map(&random_matrix(m, 2, -0.05, 0.05, &mut r), |a, b| a + b).unwrap();
    let params = MlpParams::xavier(&[2, 5, 2], Activation::Elu, &mut r).unwrap();
    let noise = NoiseEstimate { noise: random_matrix(m, 2, -0.05, 0.05, &mut r) };
    let cfg = DenoiseConfig {
        num_dt: 3,
        gamma: 0.3,
        beta_reg: 0.2,
        weight_decay: if seed % 2 == 0 { WeightDecay::Exp } else { WeightDecay::Linear },
        chunk_rows: 5,
        ..Default::default()
    };
    (t, y, params, noise, cfg)
}

#[test]
fn denoise_objective_gradient_matches_finite_differences() {
    for seed in 0..6 {
        let (t, y, params, noise, cfg) = toy_denoise(seed);
        let (terms, grad) = denoise_gradient(&y, &t, &params, &noise, &cfg).unwrap();
        let value = denoise_objective(&y, &t, &params, &noise, &cfg).unwrap();
        assert!((terms.total - value.total).abs() <= 1e-14 * value.total.abs().max(1.0));

        let mut flat = Vec::new();
        params.to_flat(&mut flat);
        let fd_net = numeric_gradient(&flat, STEP, |p| {
            let mut q = params.clone();
            q.set_from_flat(p);
            denoise_objective(&y, &t, &q, &noise, &cfg).unwrap().total
        });
        let mut g_net = Vec::new();
        grad.network.to_flat(&mut g_net);
        assert!(relative_error(&g_net, &fd_net, 1e-8) <= 1e-4, "network, seed {seed}");

        let fd_noise = numeric_gradient(noise.noise.data(), STEP, |p| {
            let n = NoiseEstimate { noise: Tensor::new(noise.noise.shape().to_vec(), p.to_vec()).unwrap() };
            denoise_objective(&y, &t, &params, &n, &cfg).unwrap().total
        });
        assert!(relative_error(grad.noise.data(), &fd_noise, 1e-8) <= 1e-4, "noise, seed {seed}");
    }
}

#[test]
fn chunking_does_not_change_the_objective() {
    let (t, y, params, noise, mut cfg) = toy_denoise(3);
    let a = denoise_objective(&y, &t, &params, &noise, &cfg).unwrap();
    cfg.chunk_rows = 1000;
    let b = denoise_objective(&y, &t, &params, &noise, &cfg).unwrap();
    assert!((a.total - b.total).abs() <= 1e-13 * b.total);
}

#[test]
fn denoise_objective_ignores_hidden_unit_order() {
    let (t, y, params, noise, cfg) = toy_denoise(8);
    let width = params.weights[0].cols();
    let perm: Vec<usize> = (0..width).rev().collect();
    let mut p = params.clone();
    let w0 = &params.weights[0];
    p.weights[0] = Tensor::matrix(w0.rows(), width, (0..w0.rows()).flat_map(|r| perm.iter().map(move |&c| (r, c))).map(|(r, c)| w0.get(r, c)).collect()).unwrap();
    p.biases[0] = Tensor::vector(perm.iter().map(|&c| params.biases[0].data()[c]).collect());
    p.weights[1] = params.weights[1].select_rows(&perm);
    let a = denoise_objective(&y, &t, &params, &noise, &cfg).unwrap().total;
    let b = denoise_objective(&y, &t, &p, &noise, &cfg).unwrap().total;
    assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
}

fn toy_autoencoder(seed: u64, order: ModelOrder, act: Activation) -> (AutoencoderParams, SindyCoefficients, SindySpec, [Tensor; 3]) {
    let mut r = rng(seed);
    let spec = SindySpec::new(2, 2, seed % 2 == 0, true, order).unwrap();
    let ae = AutoencoderParams::xavier(5, 2, &[4, 3], act, &mut r).unwrap();
    let p = spec.library_dim().unwrap();
    let phi = random_matrix(p, 2, -1.0, 1.0, &mut r);
    let mask: Vec<bool> = (0..p * 2).map(|i| i % 3 != 1).collect();
    let coeffs = SindyCoefficients::with_mask(phi, mask).unwrap();
    let batch = [random_matrix(4, 5, -2.0, 2.0, &mut r), random_matrix(4, 5, -2.0, 2.0, &mut r), random_matrix(4, 5, -2.0, 2.0, &mut r)];
    (ae, coeffs, spec, batch)
}

fn flat_params(ae: &AutoencoderParams, c: &SindyCoefficients) -> Vec<f64> {
    let mut f = Vec::new();
    ae.encoder.to_flat(&mut f);
    ae.decoder.to_flat(&mut f);
    f.extend_from_slice(c.phi.data());
    f
}

fn unflat(f: &[f64], ae: &AutoencoderParams, c: &SindyCoefficients) -> (AutoencoderParams, SindyCoefficients) {
    let (mut a, mut c) = (ae.clone(), c.clone());
    let k = a.encoder.set_from_flat(f);
    let k2 = a.decoder.set_from_flat(&f[k..]);
    c.phi.data_mut().copy_from_slice(&f[k + k2..]);
    (a, c)
}

#[test]
fn autoencoder_loss_terms_match_finite_differences() {
    for (seed, order, act) in [
        (1, ModelOrder::First, Activation::Sigmoid),
        (2, ModelOrder::First, Activation::Elu),
        (3, ModelOrder::Second, Activation::Sigmoid),
        (4, ModelOrder::Second, Activation::Tanh),
    ] {
        let (ae, coeffs, spec, [x, dx, ddx]) = toy_autoencoder(seed, order, act);
        let batch = Batch { x: &x, dx: &dx, ddx: Some(&ddx) };
        // one weight at a time isolates each term
        for k in 0..4 {
            let mut w = [0.0; 4];
            w[k] = 1.0;
            let weights = LossWeights { decoder: w[0], sindy_x: w[1], sindy_z: w[2], sindy_regularization: w[3] };
            let (_, g) = loss_and_gradient(&ae, &coeffs, &spec, &weights, &batch, Objective::Total).unwrap();
            let mut analytic = Vec::new();
            g.encoder.to_flat(&mut analytic);
            g.decoder.to_flat(&mut analytic);
            analytic.extend_from_slice(g.phi.data());
            let base = flat_params(&ae, &coeffs);
            let fd = numeric_gradient(&base, STEP, |p| {
                let (a, c) = unflat(p, &ae, &coeffs);
                let s = forward_state(&a, &c, &spec, &batch).unwrap();
                assemble_losses(&s, &weights, &spec).unwrap().total
            });
            assert!(relative_error(&analytic, &fd, 1e-8) <= 1e-4, "term {k}, seed {seed}");
        }
    }
}

#[test]
fn masked_coefficients_get_zero_gradient() {
    let (ae, coeffs, spec, [x, dx, _]) = toy_autoencoder(7, ModelOrder::First, Activation::Elu);
    let batch = Batch { x: &x, dx: &dx, ddx: None };
    let w = LossWeights { decoder: 1.0, sindy_x: 0.5, sindy_z: 0.5, sindy_regularization: 0.1 };
    let (l, g) = loss_and_gradient(&ae, &coeffs, &spec, &w, &batch, Objective::Total).unwrap();
    for (i, &m) in coeffs.mask.iter().enumerate() {
        if !m {
            assert_eq!(g.phi.data()[i], 0.0);
        }
    }
    assert!((l.total - l.refinement - w.sindy_regularization * l.sindy_regularization).abs() <= 1e-14 * l.total);
}

#[test]
fn z_derivative_matches_directional_difference() {
    let mut r = rng(21);
    let net = MlpParams::xavier(&[4, 6, 5, 3], Activation::Elu, &mut r).unwrap();
    let x = random_matrix(3, 4, -2.0, 2.0, &mut r);
    let dx = random_matrix(3, 4, -1.0, 1.0, &mut r);
    let eps = 1e-5;
    let shift = |s: f64| net.forward(&x.zip_map(&dx, |a, b| a + s * b).unwrap()).unwrap();
    let fd = shift(eps).zip_map(&shift(-eps), |a, b| (a - b) / (2.0 * eps)).unwrap();
    let dz = z_derivative(&x, &dx, &net).unwrap();
    assert!(relative_error(dz.data(), fd.data(), 1e-8) <= 1e-5);
    assert!(z_derivative(&x, &Tensor::zeros(&[3, 4]), &net).unwrap().data().iter().all(|&v| v == 0.0));
}

#[test]
fn second_derivative_matches_constant_velocity_difference() {
    let mut r = rng(22);
    let net = MlpParams::xavier(&[4, 6, 5, 3], Activation::Elu, &mut r).unwrap();
    // keep every pre-activation away from the ELU kink along the path
    let x = random_matrix(3, 4, 0.5, 1.0, &mut r);
    let dx = random_matrix(3, 4, -1.0, 1.0, &mut r);
    let eps = 1e-4;
    let at = |s: f64| net.forward(&x.zip_map(&dx, |a, b| a + s * b).unwrap()).unwrap();
    let (p, c, m) = (at(eps), at(0.0), at(-eps));
    let fd: Vec<f64> = (0..p.len()).map(|i| (p.data()[i] - 2.0 * c.data()[i] + m.data()[i]) / (eps * eps)).collect();
    let (_, ddz) = z_derivative_order2(&x, &dx, &Tensor::zeros(&[3, 4]), &net).unwrap();
    assert!(relative_error(ddz.data(), &fd, 1e-6) <= 1e-3);
    let zero = Tensor::zeros(&[3, 4]);
    let (dz0, ddz0) = z_derivative_order2(&x, &zero, &zero, &net).unwrap();
    assert!(dz0.data().iter().chain(ddz0.data()).all(|&v| v == 0.0));
}

#[test]
fn z_derivative_is_second_order_consistent_along_a_trajectory() {
    let mut r = rng(23);
    let net = MlpParams::xavier(&[2, 8, 2], Activation::Sigmoid, &mut r).unwrap();
    let path = |t: f64| [libm::cos(t), libm::sin(2.0 * t)];
    let vel = |t: f64| [-libm::sin(t), 2.0 * libm::cos(2.0 * t)];
    let t0 = 0.7;
    let err = |h: f64| {
        let x = Tensor::from_rows(&[path(t0 + h), path(t0 - h)]).unwrap();
        let z = net.forward(&x).unwrap();
        let central: Vec<f64> = (0..2).map(|c| (z.get(0, c) - z.get(1, c)) / (2.0 * h)).collect();
        let dz = z_derivative(&Tensor::from_rows(&[path(t0)]).unwrap(), &Tensor::from_rows(&[vel(t0)]).unwrap(), &net).unwrap();
        relative_error(&central, dz.data(), 1e-12)
    };
    let ratio = err(0.02) / err(0.01);
    assert!((3.6..=4.4).contains(&ratio), "Richardson ratio {ratio}");
}
