use rsae_core::trainer::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rsae_core::autoencoder::AutoencoderParams;
use rsae_core::dynamics::TimeSeries;
use rsae_core::library::SindySpec;
use rsae_core::Tensor;

fn toy() -> (TimeSeries, SindySpec) {
    let m = 64;
    let t: Vec<f64> = (0..m).map(|i| i as f64 * 0.05).collect();
    let x = Tensor::matrix(m, 4, (0..m * 4).map(|i| libm::sin(i as f64 * 0.37)).collect()).unwrap();
    let dx = x.map(|v| -v);
    (TimeSeries::new(t, x, Some(dx), None).unwrap(), SindySpec::polynomial(2, 2).unwrap())
}

#[test]
fn zero_learning_rate_leaves_parameters() {
    let (data, spec) = toy();
    let cfg = TrainConfig {
        max_epochs: 1,
        refinement_epochs: 0,
        batch_size: 16,
        learning_rate: 0.0,
        widths: std::vec![3],
        ..Default::default()
    };
    let out = train(&data, &spec, &cfg, TrainHooks::default()).unwrap();
    assert_eq!(out.history.records.len(), 1);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let p0 = AutoencoderParams::xavier(4, 2, &[3], cfg.activation, &mut rng).unwrap();
    assert_eq!(out.model.params, p0);
}

#[test]
fn oversize_batch_rejected() {
    let (data, spec) = toy();
    let cfg = TrainConfig { batch_size: 65, ..Default::default() };
    assert!(train(&data, &spec, &cfg, TrainHooks::default()).is_err());
}
