//! Minibatch training of the autoencoder and its sparse latent model.
//!
//! Each epoch is one shuffled pass with the trailing partial batch dropped.
//! Every `threshold_frequency` epochs small coefficients are masked out; after
//! the main phase a refinement phase drops the L1 term and keeps the mask fixed.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::activation::Activation;
use crate::autoencoder::{
    init_coefficients, loss_and_gradient, AutoencoderParams, Batch, CoefficientInit, LossWeights, Losses, Objective,
};
use crate::dynamics::TimeSeries;
use crate::error::{bail, Diverged, Error, Result};
use crate::library::{apply_threshold, ModelOrder, SindyCoefficients, SindySpec};
use crate::optim::Adam;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub refinement_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub sequential_thresholding: bool,
    pub threshold: f64,
    pub threshold_frequency: usize,
    pub seed: u64,
    pub print_frequency: usize,
    pub loss_weights: LossWeights,
    pub activation: Activation,
    pub widths: Vec<usize>,
    pub coefficient_init: CoefficientInit,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 5001,
            refinement_epochs: 1001,
            batch_size: 1024,
            learning_rate: 1e-3,
            sequential_thresholding: true,
            threshold: 0.1,
            threshold_frequency: 500,
            seed: 0,
            print_frequency: 100,
            loss_weights: LossWeights::lorenz(),
            activation: Activation::Sigmoid,
            widths: alloc::vec![64, 32],
            coefficient_init: CoefficientInit::Constant(1.0),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss_weights.validate()?;
        if self.batch_size == 0 {
            bail!(Domain, "batch_size must be positive");
        }
        if self.threshold_frequency == 0 || self.print_frequency == 0 {
            bail!(Domain, "threshold_frequency and print_frequency must be at least 1");
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            bail!(Domain, "learning rate must be finite and non-negative");
        }
        if !(self.threshold >= 0.0) {
            bail!(Domain, "threshold must be non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Main,
    Refinement,
}

/// Losses over the whole training set at one logged epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainRecord {
    /// Counted across both phases.
    pub epoch: usize,
    pub phase: Phase,
    pub losses: Losses,
    pub active_terms: usize,
    /// Seconds since training started, if a clock was supplied.
    pub elapsed: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub records: Vec<TrainRecord>,
    /// `(epoch, active terms after thresholding)`.
    pub thresholds: Vec<(usize, usize)>,
}

/// Trained model together with what is needed to use it again.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub params: AutoencoderParams,
    pub coefficients: SindyCoefficients,
    pub spec: SindySpec,
    pub config: TrainConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutput {
    pub model: ModelBundle,
    pub history: TrainHistory,
}

/// Optional callbacks. `clock` returns seconds from any fixed origin.
#[derive(Default)]
pub struct TrainHooks<'a> {
    pub clock: Option<&'a dyn Fn() -> f64>,
    pub progress: Option<&'a mut dyn FnMut(&TrainRecord)>,
}

fn flatten(params: &AutoencoderParams, coeffs: &SindyCoefficients, out: &mut Vec<f64>) {
    out.clear();
    params.encoder.to_flat(out);
    params.decoder.to_flat(out);
    out.extend_from_slice(coeffs.phi.data());
}

fn unflatten(flat: &[f64], params: &mut AutoencoderParams, coeffs: &mut SindyCoefficients) {
    let a = params.encoder.set_from_flat(flat);
    let b = params.decoder.set_from_flat(&flat[a..]);
    coeffs.phi.data_mut().copy_from_slice(&flat[a + b..]);
}

fn check_data(data: &TimeSeries, spec: &SindySpec, cfg: &TrainConfig) -> Result<()> {
    cfg.validate()?;
    spec.library_dim()?;
    if data.dx.is_none() {
        bail!(Contract, "training data needs time derivatives");
    }
    if spec.model_order == ModelOrder::Second && data.ddx.is_none() {
        bail!(Contract, "second-order model needs second derivatives");
    }
    if cfg.batch_size > data.len() {
        bail!(Domain, "batch size {} exceeds the {} available samples", cfg.batch_size, data.len());
    }
    Ok(())
}

/// Loss components over a full dataset with the model as it stands.
pub fn evaluate_losses(model: &ModelBundle, data: &TimeSeries) -> Result<Losses> {
    let dx = data.dx.as_ref().ok_or_else(|| Error::Contract("data needs time derivatives".into()))?;
    let batch = Batch { x: &data.x, dx, ddx: data.ddx.as_ref() };
    let state = crate::autoencoder::forward_state(&model.params, &model.coefficients, &model.spec, &batch)?;
    crate::autoencoder::assemble_losses(&state, &model.config.loss_weights, &model.spec)
}

/// Trains from a fresh initialisation drawn from `cfg.seed`.
pub fn train(
    data: &TimeSeries,
    spec: &SindySpec,
    cfg: &TrainConfig,
    hooks: TrainHooks<'_>,
) -> core::result::Result<TrainOutput, Diverged<Option<TrainOutput>>> {
    let fail = |error: Error| Diverged { error, partial: None };
    check_data(data, spec, cfg).map_err(fail)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let params = AutoencoderParams::xavier(data.dim(), spec.latent_dim, &cfg.widths, cfg.activation, &mut rng).map_err(fail)?;
    let coefficients = init_coefficients(&cfg.coefficient_init, spec, &mut rng).map_err(fail)?;
    let model = ModelBundle { params, coefficients, spec: spec.clone(), config: cfg.clone() };
    train_from(data, model, &mut rng, hooks)
}

/// Continues training `model` under its own configuration.
pub fn train_from(
    data: &TimeSeries,
    mut model: ModelBundle,
    rng: &mut ChaCha8Rng,
    mut hooks: TrainHooks<'_>,
) -> core::result::Result<TrainOutput, Diverged<Option<TrainOutput>>> {
    let cfg = model.config.clone();
    let spec = model.spec.clone();
    check_data(data, &spec, &cfg).map_err(|error| Diverged { error, partial: None })?;
    let dx = data.dx.as_ref().expect("checked");
    let start = hooks.clock.map(|c| c());
    let mut history = TrainHistory::default();

    let mut flat = Vec::new();
    flatten(&model.params, &model.coefficients, &mut flat);
    let net_len = flat.len() - model.coefficients.phi.len();
    let mut adam = Adam::new(flat.len());
    let mut active = alloc::vec![true; flat.len()];
    let mut order: Vec<usize> = (0..data.len()).collect();
    let batches = data.len() / cfg.batch_size;
    let total_epochs = cfg.max_epochs + cfg.refinement_epochs;
    let mut grad = Vec::with_capacity(flat.len());

    for epoch in 0..total_epochs {
        let phase = if epoch < cfg.max_epochs { Phase::Main } else { Phase::Refinement };
        let objective = match phase {
            Phase::Main => Objective::Total,
            Phase::Refinement => Objective::Refinement,
        };
        for (a, &m) in active[net_len..].iter_mut().zip(&model.coefficients.mask) {
            *a = m;
        }
        order.shuffle(rng);
        for b in 0..batches {
            let idx = &order[b * cfg.batch_size..(b + 1) * cfg.batch_size];
            let x = data.x.select_rows(idx);
            let bdx = dx.select_rows(idx);
            let bddx = data.ddx.as_ref().map(|d| d.select_rows(idx));
            let batch = Batch { x: &x, dx: &bdx, ddx: bddx.as_ref() };
            let step = loss_and_gradient(&model.params, &model.coefficients, &spec, &cfg.loss_weights, &batch, objective);
            let g = match step {
                Ok((l, g)) if l.total.is_finite() => g,
                Ok(_) | Err(Error::NonFinite(_)) => {
                    let error = Error::Divergence {
                        stage: "train".into(),
                        step: epoch,
                        detail: alloc::format!("non-finite loss in batch {b}"),
                    };
                    return Err(Diverged { error, partial: Some(TrainOutput { model, history }) });
                }
                Err(e) => return Err(Diverged { error: e, partial: None }),
            };
            grad.clear();
            g.encoder.to_flat(&mut grad);
            g.decoder.to_flat(&mut grad);
            grad.extend_from_slice(g.phi.data());
            adam.step_masked(&mut flat, &grad, cfg.learning_rate, Some(&active));
            unflatten(&flat, &mut model.params, &mut model.coefficients);
        }

        if phase == Phase::Main && cfg.sequential_thresholding && epoch > 0 && epoch % cfg.threshold_frequency == 0 {
            model.coefficients = apply_threshold(&model.coefficients, cfg.threshold);
            history.thresholds.push((epoch, model.coefficients.active_count()));
        }

        let last = epoch + 1 == total_epochs || epoch + 1 == cfg.max_epochs;
        if epoch % cfg.print_frequency == 0 || last {
            let losses = match evaluate_losses(&model, data) {
                Ok(l) if l.total.is_finite() => l,
                Ok(_) | Err(Error::NonFinite(_)) => {
                    let error = Error::Divergence {
                        stage: "train".into(),
                        step: epoch,
                        detail: "non-finite loss on the training set".into(),
                    };
                    return Err(Diverged { error, partial: Some(TrainOutput { model, history }) });
                }
                Err(e) => return Err(Diverged { error: e, partial: None }),
            };
            let record = TrainRecord {
                epoch,
                phase,
                losses,
                active_terms: model.coefficients.active_count(),
                elapsed: hooks.clock.zip(start).map(|(c, s)| c() - s),
            };
            if let Some(p) = hooks.progress.as_mut() {
                p(&record);
            }
            history.records.push(record);
        }
    }
    Ok(TrainOutput { model, history })
}

/// Full-dataset tensors of a model's latent quantities.
pub fn latent_trajectory(model: &ModelBundle, x: &Tensor) -> Result<Tensor> {
    model.params.encode(x)
}
