//! Experiment configuration: one flat JSON object covering every stage.

use std::path::Path;

use rsae_core::autoencoder::{CoefficientInit, LossWeights};
use rsae_core::denoise::{DenoiseConfig, DenoiseOptimizer, WeightDecay};
use rsae_core::library::{ModelOrder, SindySpec};
use rsae_core::trainer::TrainConfig;
use rsae_core::Activation;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SystemKind {
    Lorenz,
    /// `z' = A z` with `A` from `linear_matrix`.
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DenoiseSpace {
    /// Denoise the low-dimensional state before it is lifted.
    Latent,
    /// Lift first, add noise to the lifted observations and denoise those.
    Observed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActivationName {
    Elu,
    Sigmoid,
    Tanh,
    Relu,
    Linear,
}

impl From<ActivationName> for Activation {
    fn from(a: ActivationName) -> Self {
        match a {
            ActivationName::Elu => Activation::Elu,
            ActivationName::Sigmoid => Activation::Sigmoid,
            ActivationName::Tanh => Activation::Tanh,
            ActivationName::Relu => Activation::Relu,
            ActivationName::Linear => Activation::Linear,
        }
    }
}

impl From<Activation> for ActivationName {
    fn from(a: Activation) -> Self {
        match a {
            Activation::Elu => ActivationName::Elu,
            Activation::Sigmoid => ActivationName::Sigmoid,
            Activation::Tanh => ActivationName::Tanh,
            Activation::Relu => ActivationName::Relu,
            Activation::Linear => ActivationName::Linear,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecayName {
    Exp,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerName {
    Lbfgs,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CoefficientInitName {
    Constant,
    Xavier,
    Normal,
    /// Start from the true coefficients of the generating system.
    Specified,
}

/// Every knob of the pipeline. Defaults are the full-scale Lorenz benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub system: SystemKind,
    pub sigma: f64,
    pub rho: f64,
    pub beta: f64,
    /// Rows of `A` for the linear system.
    pub linear_matrix: Vec<Vec<f64>>,

    pub initial_state: Vec<f64>,
    pub t_end: f64,
    pub num_samples: usize,
    pub test_initial_state: Vec<f64>,
    pub test_dt: f64,
    pub test_samples: usize,

    pub input_dim: usize,
    pub cubic_modes: bool,
    pub normalization: Vec<f64>,

    pub noise_level: f64,

    pub denoise: bool,
    pub denoise_space: DenoiseSpace,
    pub denoise_test: bool,
    pub num_dt: usize,
    pub gamma: f64,
    pub beta_reg: f64,
    pub weight_decay: DecayName,
    pub decay_const: f64,
    pub denoise_hidden_layers: usize,
    pub denoise_hidden_width: usize,
    pub denoise_activation: ActivationName,
    pub denoise_max_iter: usize,
    pub denoise_ftol: f64,
    pub denoise_gtol: f64,
    pub denoise_optimizer: OptimizerName,
    pub denoise_learning_rate: f64,
    pub init_window: usize,
    pub chunk_rows: usize,

    pub latent_dim: usize,
    pub model_order: u8,
    pub poly_order: usize,
    pub include_sine: bool,
    pub include_constant: bool,
    pub activation: ActivationName,
    pub widths: Vec<usize>,
    pub coefficient_initialization: CoefficientInitName,
    pub coefficient_init_value: f64,

    pub loss_weight_decoder: f64,
    pub loss_weight_sindy_x: f64,
    pub loss_weight_sindy_z: f64,
    pub loss_weight_sindy_regularization: f64,

    pub max_epochs: usize,
    pub refinement_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub sequential_thresholding: bool,
    pub coefficient_threshold: f64,
    pub threshold_frequency: usize,
    pub print_frequency: usize,

    /// Magnitude below which transformed coefficients are not counted as terms.
    pub structure_threshold: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let d = DenoiseConfig::default();
        let t = TrainConfig::default();
        let w = LossWeights::lorenz();
        Self {
            seed: 0,
            system: SystemKind::Lorenz,
            sigma: 10.0,
            rho: 28.0,
            beta: 8.0 / 3.0,
            linear_matrix: vec![vec![-0.25, 2.0], vec![-2.0, -0.25]],
            initial_state: vec![5.0, 5.0, 25.0],
            t_end: 20.0,
            num_samples: 30_000,
            test_initial_state: vec![-8.0, 7.0, 27.0],
            test_dt: 0.01,
            test_samples: 2000,
            input_dim: 128,
            cubic_modes: true,
            normalization: vec![1.0 / 40.0; 3],
            noise_level: 0.1,
            denoise: true,
            denoise_space: DenoiseSpace::Latent,
            denoise_test: true,
            num_dt: d.num_dt,
            gamma: d.gamma,
            beta_reg: d.beta_reg,
            weight_decay: DecayName::Exp,
            decay_const: d.decay_const,
            denoise_hidden_layers: d.hidden_layers,
            denoise_hidden_width: d.hidden_width,
            denoise_activation: d.activation.into(),
            denoise_max_iter: d.max_iter,
            denoise_ftol: d.ftol,
            denoise_gtol: d.gtol,
            denoise_optimizer: OptimizerName::Lbfgs,
            denoise_learning_rate: 1e-3,
            init_window: d.init_window,
            chunk_rows: d.chunk_rows,
            latent_dim: 3,
            model_order: 1,
            poly_order: 3,
            include_sine: false,
            include_constant: true,
            activation: t.activation.into(),
            widths: t.widths.clone(),
            coefficient_initialization: CoefficientInitName::Constant,
            coefficient_init_value: 1.0,
            loss_weight_decoder: w.decoder,
            loss_weight_sindy_x: w.sindy_x,
            loss_weight_sindy_z: w.sindy_z,
            loss_weight_sindy_regularization: w.sindy_regularization,
            max_epochs: t.max_epochs,
            refinement_epochs: t.refinement_epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            sequential_thresholding: t.sequential_thresholding,
            coefficient_threshold: t.threshold,
            threshold_frequency: t.threshold_frequency,
            print_frequency: t.print_frequency,
            structure_threshold: 0.1,
        }
    }
}

pub const PRESETS: &[&str] = &["smoke", "paper-lorenz-5", "paper-lorenz-10", "paper-lorenz-15", "toy-linear"];

/// Full-scale Lorenz schedule at the given noise level. The denoiser iteration
/// cap is lowered from its nominal 50,000 to keep a run within hours.
fn full_scale(level: f64) -> ExperimentConfig {
    ExperimentConfig { noise_level: level, denoise_max_iter: 1000, ..Default::default() }
}

/// Desk-scale Lorenz run: 3,000 samples, small denoiser, short schedule.
fn smoke() -> ExperimentConfig {
    ExperimentConfig {
        num_samples: 3000,
        num_dt: 5,
        denoise_hidden_layers: 2,
        denoise_max_iter: 150,
        max_epochs: 1001,
        refinement_epochs: 201,
        batch_size: 64,
        threshold_frequency: 250,
        print_frequency: 100,
        ..Default::default()
    }
}

/// Damped linear oscillator lifted linearly into 8 dimensions; noise-free and fast.
fn toy_linear() -> ExperimentConfig {
    ExperimentConfig {
        system: SystemKind::Linear,
        initial_state: vec![2.0, 0.0],
        t_end: 10.0,
        num_samples: 1000,
        test_initial_state: vec![0.0, 1.2],
        test_dt: 0.01,
        test_samples: 300,
        input_dim: 8,
        cubic_modes: false,
        normalization: vec![0.5, 0.5],
        noise_level: 0.0,
        denoise: false,
        latent_dim: 2,
        include_constant: false,
        widths: vec![6],
        loss_weight_sindy_x: 1e-2,
        loss_weight_sindy_z: 1e-2,
        loss_weight_sindy_regularization: 1e-3,
        max_epochs: 301,
        refinement_epochs: 51,
        batch_size: 40,
        learning_rate: 5e-3,
        threshold_frequency: 100,
        print_frequency: 50,
        ..Default::default()
    }
}

pub fn preset(name: &str) -> CliResult<ExperimentConfig> {
    match name {
        "smoke" => Ok(smoke()),
        "paper-lorenz-5" => Ok(full_scale(0.05)),
        "paper-lorenz-10" => Ok(full_scale(0.10)),
        "paper-lorenz-15" => Ok(full_scale(0.15)),
        "toy-linear" => Ok(toy_linear()),
        other => Err(CliError::Config(format!("unknown preset '{other}'; available: {}", PRESETS.join(", ")))),
    }
}

/// Parses a config document. Missing keys take their defaults; unknown keys
/// are rejected with the line and column of the offending entry.
pub fn parse(text: &str, origin: &str) -> CliResult<ExperimentConfig> {
    serde_json::from_str(text).map_err(|e| CliError::Config(format!("{origin}: {e}")))
}

/// Like [`parse`], with missing keys taken from `base` instead of the defaults.
pub fn parse_over(base: &ExperimentConfig, text: &str, origin: &str) -> CliResult<ExperimentConfig> {
    // a full parse first, for error positions
    parse(text, origin)?;
    let overrides: serde_json::Value = serde_json::from_str(text).map_err(|e| CliError::Config(format!("{origin}: {e}")))?;
    let serde_json::Value::Object(map) = overrides else {
        return Err(CliError::Config(format!("{origin}: top level must be an object")));
    };
    let mut merged = serde_json::to_value(base).expect("config serializes");
    let target = merged.as_object_mut().expect("object");
    for (k, v) in map {
        target.insert(k, v);
    }
    serde_json::from_value(merged).map_err(|e| CliError::Config(format!("{origin}: {e}")))
}

pub fn load(path: &Path) -> CliResult<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse(&text, &path.display().to_string())
}

fn check(ok: bool, msg: impl FnOnce() -> String) -> CliResult<()> {
    if ok {
        Ok(())
    } else {
        Err(CliError::Config(msg()))
    }
}

impl ExperimentConfig {
    /// Dimension of the generating system.
    pub fn state_dim(&self) -> usize {
        self.initial_state.len()
    }

    pub fn validate(&self) -> CliResult<()> {
        let n = self.state_dim();
        match self.system {
            SystemKind::Lorenz => {
                check(n == 3, || format!("initial_state: Lorenz needs 3 entries, got {n}"))?;
                check(self.sigma > 0.0 && self.rho > 0.0 && self.beta > 0.0, || "sigma, rho, beta must be positive".into())?;
            }
            SystemKind::Linear => {
                check(n >= 1, || "initial_state must not be empty".into())?;
                check(
                    self.linear_matrix.len() == n && self.linear_matrix.iter().all(|r| r.len() == n),
                    || format!("linear_matrix must be {n}x{n}"),
                )?;
                check(self.linear_matrix.iter().flatten().all(|v| v.is_finite()), || {
                    "linear_matrix entries must be finite".into()
                })?;
            }
        }
        check(self.test_initial_state.len() == n, || {
            format!("test_initial_state has {} entries, initial_state {n}", self.test_initial_state.len())
        })?;
        check(self.normalization.len() == n, || format!("normalization needs {n} entries"))?;
        check(self.normalization.iter().all(|v| *v != 0.0 && v.is_finite()), || {
            "normalization entries must be finite and nonzero".into()
        })?;
        check(self.t_end > 0.0 && self.t_end.is_finite(), || "t_end must be positive".into())?;
        check(self.test_dt > 0.0 && self.test_dt.is_finite(), || "test_dt must be positive".into())?;
        check(self.num_samples >= 2 && self.test_samples >= 2, || "num_samples and test_samples must be at least 2".into())?;
        let modes = if self.cubic_modes { 2 * n } else { n };
        check(self.input_dim >= modes.max(2), || format!("input_dim must be at least {}", modes.max(2)))?;
        check(self.noise_level >= 0.0 && self.noise_level < 1.0, || {
            format!("noise_level must lie in [0, 1), got {}", self.noise_level)
        })?;
        check(self.latent_dim == n, || format!("latent_dim {} differs from the system dimension {n}", self.latent_dim))?;
        check(self.model_order == 1 || self.model_order == 2, || "model_order must be 1 or 2".into())?;
        check(!(self.model_order == 2 && self.denoise), || {
            "model_order 2 needs second derivatives, which the denoiser does not provide; set denoise to false".into()
        })?;
        check(!self.widths.is_empty() && self.widths.iter().all(|&w| w > 0), || "widths must be positive".into())?;
        check(self.coefficient_threshold >= 0.0 && self.structure_threshold >= 0.0, || {
            "thresholds must be non-negative".into()
        })?;
        self.sindy_spec()?;
        self.train_config(None)?.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.denoise_config().validate().map_err(|e| CliError::Config(e.to_string()))?;
        check(self.batch_size <= self.num_samples.saturating_sub(if self.denoise { 2 * self.num_dt } else { 0 }), || {
            format!("batch_size {} exceeds the training samples", self.batch_size)
        })?;
        Ok(())
    }

    pub fn sindy_spec(&self) -> CliResult<SindySpec> {
        let order = ModelOrder::from_u8(self.model_order).map_err(|e| CliError::Config(e.to_string()))?;
        SindySpec::new(self.latent_dim, self.poly_order, self.include_sine, self.include_constant, order)
            .map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn denoise_config(&self) -> DenoiseConfig {
        DenoiseConfig {
            num_dt: self.num_dt,
            gamma: self.gamma,
            beta_reg: self.beta_reg,
            weight_decay: match self.weight_decay {
                DecayName::Exp => WeightDecay::Exp,
                DecayName::Linear => WeightDecay::Linear,
            },
            decay_const: self.decay_const,
            hidden_layers: self.denoise_hidden_layers,
            hidden_width: self.denoise_hidden_width,
            activation: self.denoise_activation.into(),
            max_iter: self.denoise_max_iter,
            ftol: self.denoise_ftol,
            gtol: self.denoise_gtol,
            optimizer: match self.denoise_optimizer {
                OptimizerName::Lbfgs => DenoiseOptimizer::Lbfgs,
                OptimizerName::Adam => DenoiseOptimizer::Adam { learning_rate: self.denoise_learning_rate },
            },
            init_window: self.init_window,
            chunk_rows: self.chunk_rows,
        }
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            decoder: self.loss_weight_decoder,
            sindy_x: self.loss_weight_sindy_x,
            sindy_z: self.loss_weight_sindy_z,
            sindy_regularization: self.loss_weight_sindy_regularization,
        }
    }

    /// Trainer settings; `specified` supplies the matrix for the `specified`
    /// initialisation (a zero matrix stands in while validating).
    pub fn train_config(&self, specified: Option<rsae_core::Tensor>) -> CliResult<TrainConfig> {
        let coefficient_init = match self.coefficient_initialization {
            CoefficientInitName::Constant => CoefficientInit::Constant(self.coefficient_init_value),
            CoefficientInitName::Xavier => CoefficientInit::Xavier,
            CoefficientInitName::Normal => CoefficientInit::Normal,
            CoefficientInitName::Specified => {
                let spec = self.sindy_spec()?;
                let p = spec.library_dim().map_err(|e| CliError::Config(e.to_string()))?;
                CoefficientInit::Specified(specified.unwrap_or_else(|| rsae_core::Tensor::zeros(&[p, self.latent_dim])))
            }
        };
        Ok(TrainConfig {
            max_epochs: self.max_epochs,
            refinement_epochs: self.refinement_epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            sequential_thresholding: self.sequential_thresholding,
            threshold: self.coefficient_threshold,
            threshold_frequency: self.threshold_frequency,
            seed: self.seed,
            print_frequency: self.print_frequency,
            loss_weights: self.loss_weights(),
            activation: self.activation.into(),
            widths: self.widths.clone(),
            coefficient_init,
        })
    }

    /// `key  value` lines of the resolved configuration, sorted by key.
    pub fn table(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        let map = value.as_object().expect("object");
        let width = map.keys().map(|k| k.len()).max().unwrap_or(0);
        let mut out = String::new();
        for (k, v) in map {
            out.push_str(&format!("{k:<width$}  {v}\n"));
        }
        out
    }
}
