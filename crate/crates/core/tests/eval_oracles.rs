mod common;

use common::{random_matrix, rng};
use proptest::prelude::*;
use rsae_core::dynamics::{integrate_rk4, lorenz_ground_truth_coefficients, lorenz_trajectory, uniform_grid, LorenzParams};
use rsae_core::eval::{
    fit_affine_latent_transform, least_squares_fit, least_squares_sindy, noise_recovery_report, rmse, sindy_simulate,
    transform_coefficients, AffineLatentTransform,
};
use rsae_core::library::{build_library_order1, ModelOrder, SindyCoefficients, SindySpec};
use rsae_core::{Error, Tensor};

fn lorenz_coefficients() -> SindyCoefficients {
    let xi = lorenz_ground_truth_coefficients(&[1.0, 1.0, 1.0], 3, &LorenzParams::default()).unwrap();
    let mask = xi.data().iter().map(|&v| v != 0.0).collect();
    SindyCoefficients::with_mask(xi, mask).unwrap()
}

#[test]
fn simulating_the_true_lorenz_model_reproduces_rk4() {
    let spec = SindySpec::polynomial(3, 3).unwrap();
    let t = uniform_grid(500, 0.002);
    let x0 = [-8.0, 7.0, 27.0];
    let sim = sindy_simulate(&x0, &t, &lorenz_coefficients(), &spec).unwrap();
    let reference = lorenz_trajectory(x0, &t, &LorenzParams::default()).unwrap();
    let err = sim.x.zip_map(&reference.x, |a, b| (a - b).abs()).unwrap();
    assert!(err.data().iter().all(|&e| e <= 1e-8), "max error {:?}", err.data().iter().cloned().fold(0.0, f64::max));
}

#[test]
fn second_order_simulation_of_a_harmonic_oscillator() {
    // z'' = -z on the library [1, z, z']
    let spec = SindySpec::new(1, 1, false, true, ModelOrder::Second).unwrap();
    let phi = Tensor::from_rows(&[[0.0], [-1.0], [0.0]]).unwrap();
    let t = uniform_grid(400, 0.01);
    let sim = sindy_simulate(&[1.0, 0.0], &t, &SindyCoefficients::new(phi).unwrap(), &spec).unwrap();
    for (k, &tk) in t.iter().enumerate() {
        assert!((sim.x.get(k, 0) - libm::cos(tk)).abs() < 1e-8);
        assert!((sim.dx.as_ref().unwrap().get(k, 0) + libm::sin(tk)).abs() < 1e-8);
        assert!((sim.ddx.as_ref().unwrap().get(k, 0) + libm::cos(tk)).abs() < 1e-8);
    }
}

#[test]
fn blow_up_reports_partial_trajectory() {
    let spec = SindySpec::polynomial(1, 2).unwrap();
    // z' = z^2 blows up at t = 1 from z0 = 1
    let phi = Tensor::from_rows(&[[0.0], [0.0], [1.0]]).unwrap();
    let t = uniform_grid(300, 0.01);
    let err = sindy_simulate(&[1.0], &t, &SindyCoefficients::new(phi).unwrap(), &spec).unwrap_err();
    assert!(matches!(err.error, Error::Divergence { .. }));
    let partial = err.partial.expect("partial trajectory");
    assert!(partial.len() > 50 && partial.len() < 110, "{}", partial.len());
}

#[test]
fn least_squares_recovers_lorenz_from_exact_derivatives() {
    let p = LorenzParams::default();
    let t = uniform_grid(2000, 0.005);
    let traj = lorenz_trajectory([-8.0, 7.0, 27.0], &t, &p).unwrap();
    let spec = SindySpec::polynomial(3, 3).unwrap();
    let fit = least_squares_sindy(&traj.x, traj.dx.as_ref().unwrap(), &spec, Some(0.1)).unwrap();
    let truth = lorenz_coefficients();
    assert_eq!(fit.active_count(), 7);
    assert_eq!(fit.mask, truth.mask);
    let diff = fit.masked().zip_map(&truth.phi, |a, b| (a - b).abs()).unwrap();
    assert!(diff.data().iter().all(|&d| d <= 1e-3));
}

#[test]
fn rank_deficient_library_is_rejected() {
    let theta = Tensor::from_rows(&[[1.0, 2.0], [2.0, 4.0], [3.0, 6.0]]).unwrap();
    let target = Tensor::from_rows(&[[1.0], [2.0], [3.0]]).unwrap();
    assert!(matches!(least_squares_fit(&theta, &target, None), Err(Error::RankDeficient { .. })));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn least_squares_recovers_planted_coefficients(seed in 0u64..10_000) {
        let mut r = rng(seed);
        let spec = SindySpec::polynomial(2, 2).unwrap();
        let z = random_matrix(60, 2, -2.0, 2.0, &mut r);
        let theta = build_library_order1(&z, &spec).unwrap();
        let phi = random_matrix(theta.cols(), 2, -3.0, 3.0, &mut r);
        let dz = theta.matmul(&phi).unwrap();
        let fit = least_squares_fit(&theta, &dz, None).unwrap();
        let worst = fit.phi.zip_map(&phi, |a, b| (a - b).abs()).unwrap().data().iter().cloned().fold(0.0, f64::max);
        prop_assert!(worst <= 1e-6, "{}", worst);
    }

    #[test]
    fn affine_fit_recovers_planted_transform(seed in 0u64..10_000, perm in 0usize..6) {
        let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        let mut r = rng(seed);
        let learned = random_matrix(50, 3, -1.0, 1.0, &mut r);
        let scales = random_matrix(1, 3, 0.5, 3.0, &mut r);
        let signs = random_matrix(1, 3, -1.0, 1.0, &mut r);
        let scale: Vec<f64> = (0..3).map(|i| scales.data()[i] * signs.data()[i].signum()).collect();
        let offset = random_matrix(1, 3, -5.0, 5.0, &mut r).into_data();
        let planted = AffineLatentTransform::new(scale, offset, perms[perm].to_vec()).unwrap();
        let reference = planted.apply(&learned).unwrap();
        let fit = fit_affine_latent_transform(&learned, &reference).unwrap();
        prop_assert!(fit.residual <= 1e-10);
        prop_assert_eq!(&fit.transform.permutation, &planted.permutation);
        for i in 0..3 {
            prop_assert!((fit.transform.scale[i] - planted.scale[i]).abs() <= 1e-8);
            prop_assert!((fit.transform.offset[i] - planted.offset[i]).abs() <= 1e-8);
        }
        let back = fit.transform.inverse().apply(&reference).unwrap();
        prop_assert!(rmse(&back, &learned).unwrap() <= 1e-10);
    }

    #[test]
    fn transformed_coefficients_describe_the_transformed_flow(seed in 0u64..10_000, perm in 0usize..2) {
        let mut r = rng(seed);
        let spec = SindySpec::polynomial(2, 3).unwrap();
        let p = spec.library_dim().unwrap();
        let coeffs = SindyCoefficients::new(random_matrix(p, 2, -1.0, 1.0, &mut r)).unwrap();
        let transform = AffineLatentTransform::new(
            vec![1.5, -0.7],
            random_matrix(1, 2, -1.0, 1.0, &mut r).into_data(),
            if perm == 0 { vec![0, 1] } else { vec![1, 0] },
        ).unwrap();
        let mapped = transform_coefficients(&coeffs, &transform, &spec).unwrap();
        let z = random_matrix(10, 2, -1.0, 1.0, &mut r);
        let dz = build_library_order1(&z, &spec).unwrap().matmul(&coeffs.masked()).unwrap();
        let w = transform.apply(&z).unwrap();
        // chain rule: dw_i = scale_i * dz_perm(i)
        let expected = Tensor::matrix(10, 2, (0..10).flat_map(|k| {
            let t = &transform;
            let dz = &dz;
            (0..2).map(move |i| t.scale[i] * dz.get(k, t.permutation[i]))
        }).collect()).unwrap();
        let got = build_library_order1(&w, &spec).unwrap().matmul(&mapped.masked()).unwrap();
        prop_assert!(rmse(&got, &expected).unwrap() <= 1e-9);
    }
}

#[test]
fn identity_transform_leaves_coefficients_unchanged() {
    let spec = SindySpec::polynomial(3, 3).unwrap();
    let c = lorenz_coefficients();
    let mapped = transform_coefficients(&c, &AffineLatentTransform::identity(3), &spec).unwrap();
    assert_eq!(mapped.mask, c.mask);
    assert!(rmse(&mapped.masked(), &c.masked()).unwrap() <= 1e-14);
}

#[test]
fn transform_round_trip_restores_coefficients() {
    let spec = SindySpec::polynomial(3, 3).unwrap();
    let c = lorenz_coefficients();
    let t = AffineLatentTransform::new(vec![0.5, -2.0, 1.25], vec![1.0, 0.0, -3.0], vec![2, 0, 1]).unwrap();
    let there = transform_coefficients(&c, &t, &spec).unwrap();
    let back = transform_coefficients(&there, &t.inverse(), &spec).unwrap();
    assert!(rmse(&back.phi, &c.phi).unwrap() <= 1e-10);
}

#[test]
fn sine_of_rescaled_variable_is_not_representable() {
    let spec = SindySpec::new(1, 1, true, true, ModelOrder::First).unwrap();
    let phi = Tensor::from_rows(&[[0.0], [0.0], [1.0]]).unwrap();
    let t = AffineLatentTransform::new(vec![2.0], vec![0.0], vec![0]).unwrap();
    let r = transform_coefficients(&SindyCoefficients::new(phi).unwrap(), &t, &spec);
    assert!(matches!(r, Err(Error::LibraryOverflow(_))));
}

#[test]
fn noise_report_on_exact_and_scaled_estimates() {
    let mut r = rng(3);
    let truth = random_matrix(100, 3, -1.0, 1.0, &mut r);
    let exact = noise_recovery_report(&truth, &truth, 10).unwrap();
    assert!((exact.correlation - 1.0).abs() < 1e-12 && exact.relative_l2 < 1e-15);
    let half = noise_recovery_report(&truth.map(|v| 0.5 * v), &truth, 10).unwrap();
    assert!((half.correlation - 1.0).abs() < 1e-12);
    assert!((half.relative_l2 - 0.5).abs() < 1e-12);
    for c in &half.per_coordinate {
        assert!((c.estimated_std / c.true_std - 0.5).abs() < 1e-12);
    }
    assert!(noise_recovery_report(&truth, &truth, 50).is_err());
}

#[test]
fn rk4_converges_at_fourth_order() {
    // z' = -z + sin t has a closed form; compare global errors at t = 2
    let exact = |t: f64| 1.5 * libm::exp(-t) + 0.5 * (libm::sin(t) - libm::cos(t));
    let err = |m: usize| {
        let t = uniform_grid(m + 1, 2.0 / m as f64);
        // the right-hand side sees time through an augmented clock state
        let s = integrate_rk4(|s: &[f64], out: &mut [f64]| {
            out[0] = -s[0] + libm::sin(s[1]);
            out[1] = 1.0;
        }, &[1.0, 0.0], &t).unwrap();
        (s.x.get(m, 0) - exact(2.0)).abs()
    };
    let ratio = err(80) / err(160);
    assert!((14.0..=18.0).contains(&ratio), "ratio {ratio}");
}
