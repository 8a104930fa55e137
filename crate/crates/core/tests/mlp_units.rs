use rsae_core::mlp::*;
use rsae_core::{Activation, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn chain_check() {
    let w0 = Tensor::zeros(&[3, 4]);
    let w1 = Tensor::zeros(&[5, 2]);
    let r = MlpParams::new(vec![w0, w1], vec![Tensor::zeros(&[4]), Tensor::zeros(&[2])], Activation::Elu);
    assert!(r.is_err());
}

#[test]
fn flat_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let p = MlpParams::xavier(&[3, 8, 8, 3], Activation::Elu, &mut rng).unwrap();
    let mut flat = Vec::new();
    p.to_flat(&mut flat);
    assert_eq!(flat.len(), p.num_params());
    let mut q = zeros_like(&p);
    assert_eq!(q.set_from_flat(&flat), flat.len());
    assert_eq!(p, q);
    assert_eq!(p.widths(), vec![8, 8]);
}

#[test]
fn zero_weights_give_bias_pathway() {
    let mut p = zeros_like(&MlpParams::xavier(&[4, 6, 2], Activation::Sigmoid, &mut ChaCha8Rng::seed_from_u64(0)).unwrap());
    let x = Tensor::from_rows(&[[1.0, 2.0, 3.0, 4.0]]).unwrap();
    assert_eq!(p.forward(&x).unwrap().data(), &[0.0, 0.0]);
    p.biases[1] = Tensor::vector(vec![0.5, -1.0]);
    assert_eq!(p.forward(&x).unwrap().data(), &[0.5, -1.0]);
}
