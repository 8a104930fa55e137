mod common;

use rsae_core::denoise::{
    denoise_objective, init_noise_estimate, separate_noise, separate_noise_with_progress, DenoiseConfig,
    DenoiseOptimizer, NoiseEstimate,
};
use rsae_core::dynamics::{add_noise, lorenz_trajectory, uniform_grid, LorenzParams};
use rsae_core::eval::{noise_recovery_report, rmse};
use rsae_core::mlp::MlpParams;
use rsae_core::{Activation, Tensor};

fn small_config() -> DenoiseConfig {
    DenoiseConfig { num_dt: 4, hidden_layers: 1, hidden_width: 16, max_iter: 60, ..Default::default() }
}

#[test]
fn exact_linear_field_has_zero_fidelity_loss() {
    // z' = -z sampled exactly; a linear network W = -I reproduces it
    let t = uniform_grid(60, 0.01);
    let y = Tensor::matrix(60, 2, t.iter().flat_map(|&s| [2.0 * libm::exp(-s), -libm::exp(-s)]).collect()).unwrap();
    let cfg = DenoiseConfig { hidden_layers: 0, num_dt: 5, ..Default::default() };
    let mut net = MlpParams::xavier(&cfg.layer_sizes(2), Activation::Elu, &mut common::rng(0)).unwrap();
    net.weights[0] = Tensor::from_rows(&[[-1.0, 0.0], [0.0, -1.0]]).unwrap();
    net.biases[0] = Tensor::vector(vec![0.0, 0.0]);
    let zero = NoiseEstimate { noise: Tensor::zeros(&[60, 2]) };
    let terms = denoise_objective(&y, &t, &net, &zero, &cfg).unwrap();
    assert!(terms.fidelity < 1e-8, "{}", terms.fidelity);
    assert_eq!(terms.noise_reg, 0.0);
}

#[test]
fn moving_average_start_has_the_right_scale() {
    let t = uniform_grid(2000, 0.01);
    let clean = lorenz_trajectory([-8.0, 7.0, 27.0], &t, &LorenzParams::default()).unwrap();
    let noisy = add_noise(&clean, 0.1, 4).unwrap();
    let init = init_noise_estimate(&noisy.observed.x, 7).unwrap();
    let report = noise_recovery_report(&init.noise, &noisy.true_noise, 10).unwrap();
    assert!(report.correlation > 0.8, "{}", report.correlation);
    for c in &report.per_coordinate {
        // a 7-point average keeps about 6/7 of the noise variance
        assert!((c.estimated_std / c.true_std - 0.926).abs() < 0.1, "{:?}", c);
    }
}

fn lorenz_noisy(m: usize, level: f64, seed: u64) -> (Vec<f64>, rsae_core::dynamics::NoisyDataset) {
    let t = uniform_grid(m, 0.01);
    let clean = lorenz_trajectory([-8.0, 7.0, 27.0], &t, &LorenzParams::default()).unwrap();
    (t, add_noise(&clean, level, seed).unwrap())
}

#[test]
fn objective_history_never_increases_and_run_is_reproducible() {
    let (t, data) = lorenz_noisy(300, 0.1, 2);
    let cfg = small_config();
    let mut seen = Vec::new();
    let a = separate_noise_with_progress(&t, &data.observed.x, &cfg, 7, &mut |i, f| seen.push((i, f))).unwrap();
    assert!(a.history.windows(2).all(|w| w[1] <= w[0]));
    assert_eq!(a.history.len(), a.iterations + 1);
    assert_eq!(seen.len(), a.iterations);
    let b = separate_noise(&t, &data.observed.x, &cfg, 7).unwrap();
    assert_eq!(a, b);
    let observed = a.denoised.x.zip_map(&a.noise.noise, |x, n| x + n).unwrap();
    assert!(rmse(&observed, &data.observed.x).unwrap() < 1e-12);
}

#[test]
fn denoising_reduces_state_error() {
    let (t, data) = lorenz_noisy(400, 0.1, 3);
    let cfg = small_config();
    let out = separate_noise(&t, &data.observed.x, &cfg, 1).unwrap();
    let k = cfg.num_dt;
    let inner = |m: &Tensor| m.slice_rows(k, m.rows() - 2 * k).unwrap();
    let before = rmse(&inner(&data.observed.x), &inner(&data.clean.x)).unwrap();
    let after = rmse(&inner(&out.denoised.x), &inner(&data.clean.x)).unwrap();
    assert!(after < 0.6 * before, "{after} vs {before}");
    assert_eq!(out.interior(k).unwrap().len(), 400 - 2 * k);
}

#[test]
fn clean_data_yields_small_noise_estimate() {
    // sample spacing of the 3,000-point training grid
    let t = uniform_grid(600, 20.0 / 3000.0);
    let clean = lorenz_trajectory([5.0, 5.0, 25.0], &t, &LorenzParams::default()).unwrap();
    let data = add_noise(&clean, 0.0, 0).unwrap();
    let cfg = DenoiseConfig { max_iter: 100, hidden_layers: 2, ..Default::default() };
    let out = separate_noise(&t, &data.observed.x, &cfg, 1).unwrap();
    let ratio = out.noise.noise.frobenius_norm() / data.observed.x.frobenius_norm();
    assert!(ratio <= 0.01, "noise norm ratio {ratio}");
}

#[test]
fn adam_variant_runs_and_keeps_its_best_state() {
    let (t, data) = lorenz_noisy(200, 0.1, 5);
    let cfg = DenoiseConfig { optimizer: DenoiseOptimizer::Adam { learning_rate: 1e-3 }, max_iter: 30, ..small_config() };
    let out = separate_noise(&t, &data.observed.x, &cfg, 2).unwrap();
    let best = out.history.iter().cloned().fold(f64::INFINITY, f64::min);
    let rerun = denoise_objective(&data.observed.x, &t, &out.network, &out.noise, &cfg).unwrap();
    assert!((rerun.total - best).abs() <= 1e-12 * best);
}

