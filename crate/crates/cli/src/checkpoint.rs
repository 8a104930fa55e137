//! Model checkpoints: a directory of CSV matrices described by `manifest.json`.

use std::path::Path;

use rsae_core::autoencoder::{AutoencoderParams, CoefficientInit};
use rsae_core::library::{ModelOrder, SindyCoefficients, SindySpec};
use rsae_core::mlp::MlpParams;
use rsae_core::trainer::{ModelBundle, TrainConfig};
use rsae_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::config::{ActivationName, CoefficientInitName};
use crate::error::{CliError, CliResult};
use crate::io::{create_dir, numbered, read_json, read_matrix, write_json, write_matrix};

pub const FORMAT: &str = "rsae-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecRecord {
    pub latent_dim: usize,
    pub poly_order: usize,
    pub include_sine: bool,
    pub include_constant: bool,
    pub model_order: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainRecordSettings {
    pub max_epochs: usize,
    pub refinement_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub sequential_thresholding: bool,
    pub threshold: f64,
    pub threshold_frequency: usize,
    pub seed: u64,
    pub print_frequency: usize,
    pub loss_weight_decoder: f64,
    pub loss_weight_sindy_x: f64,
    pub loss_weight_sindy_z: f64,
    pub loss_weight_sindy_regularization: f64,
    pub activation: ActivationName,
    pub widths: Vec<usize>,
    pub coefficient_initialization: CoefficientInitName,
    /// Only meaningful for the constant initialisation.
    pub coefficient_init_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkRecord {
    pub activation: ActivationName,
    /// `[inputs, outputs]` of every layer.
    pub layers: Vec<[usize; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub spec: SpecRecord,
    pub train: TrainRecordSettings,
    pub encoder: NetworkRecord,
    pub decoder: NetworkRecord,
    pub files: Vec<String>,
}

fn network_record(p: &MlpParams) -> NetworkRecord {
    NetworkRecord {
        activation: p.activation.into(),
        layers: p.weights.iter().map(|w| [w.rows(), w.cols()]).collect(),
    }
}

fn train_record(c: &TrainConfig) -> TrainRecordSettings {
    let (init, value) = match &c.coefficient_init {
        CoefficientInit::Constant(v) => (CoefficientInitName::Constant, *v),
        CoefficientInit::Xavier => (CoefficientInitName::Xavier, 0.0),
        CoefficientInit::Normal => (CoefficientInitName::Normal, 0.0),
        CoefficientInit::Specified(_) => (CoefficientInitName::Specified, 0.0),
    };
    TrainRecordSettings {
        max_epochs: c.max_epochs,
        refinement_epochs: c.refinement_epochs,
        batch_size: c.batch_size,
        learning_rate: c.learning_rate,
        sequential_thresholding: c.sequential_thresholding,
        threshold: c.threshold,
        threshold_frequency: c.threshold_frequency,
        seed: c.seed,
        print_frequency: c.print_frequency,
        loss_weight_decoder: c.loss_weights.decoder,
        loss_weight_sindy_x: c.loss_weights.sindy_x,
        loss_weight_sindy_z: c.loss_weights.sindy_z,
        loss_weight_sindy_regularization: c.loss_weights.sindy_regularization,
        activation: c.activation.into(),
        widths: c.widths.clone(),
        coefficient_initialization: init,
        coefficient_init_value: value,
    }
}

fn write_network(dir: &Path, name: &str, p: &MlpParams, files: &mut Vec<String>) -> CliResult<()> {
    for (l, (w, b)) in p.weights.iter().zip(&p.biases).enumerate() {
        let wf = format!("{name}_w{l}.csv");
        let bf = format!("{name}_b{l}.csv");
        write_matrix(&dir.join(&wf), &numbered("o", w.cols()), w)?;
        let row = Tensor::matrix(1, b.len(), b.data().to_vec()).expect("bias row");
        write_matrix(&dir.join(&bf), &numbered("o", b.len()), &row)?;
        files.push(wf);
        files.push(bf);
    }
    Ok(())
}

/// Writes a `library × equations` matrix with one row per equation and one
/// column per library function.
pub fn write_coefficients(path: &Path, names: &[String], phi: &Tensor) -> CliResult<()> {
    let t = phi.transpose().map_err(|e| CliError::io(path, e))?;
    write_matrix(path, names, &t)
}

/// Reads a file written by [`write_coefficients`], checking its header.
pub fn read_coefficients(path: &Path, names: &[String]) -> CliResult<Tensor> {
    let (header, t) = read_matrix(path)?;
    if header != names {
        return Err(CliError::io(path, format!("library columns {header:?} differ from {names:?}")));
    }
    t.transpose().map_err(|e| CliError::io(path, e))
}

/// Writes `bundle` into `dir`, creating it when needed. Saving the result of
/// [`load`] reproduces the files byte for byte.
pub fn save(dir: &Path, bundle: &ModelBundle) -> CliResult<()> {
    create_dir(dir)?;
    let mut files = Vec::new();
    write_network(dir, "encoder", &bundle.params.encoder, &mut files)?;
    write_network(dir, "decoder", &bundle.params.decoder, &mut files)?;
    let c = &bundle.coefficients;
    let names = bundle.spec.column_names();
    write_coefficients(&dir.join("phi.csv"), &names, &c.phi)?;
    write_coefficients(&dir.join("mask.csv"), &names, &c.mask_tensor())?;
    files.push("phi.csv".into());
    files.push("mask.csv".into());
    if let CoefficientInit::Specified(init) = &bundle.config.coefficient_init {
        write_coefficients(&dir.join("init_coefficients.csv"), &names, init)?;
        files.push("init_coefficients.csv".into());
    }
    let s = &bundle.spec;
    let manifest = Manifest {
        format: FORMAT.into(),
        version: VERSION,
        spec: SpecRecord {
            latent_dim: s.latent_dim,
            poly_order: s.poly_order,
            include_sine: s.include_sine,
            include_constant: s.include_constant,
            model_order: s.model_order.as_u8(),
        },
        train: train_record(&bundle.config),
        encoder: network_record(&bundle.params.encoder),
        decoder: network_record(&bundle.params.decoder),
        files,
    };
    write_json(&dir.join("manifest.json"), &manifest)
}

fn corrupt(dir: &Path, msg: impl std::fmt::Display) -> CliError {
    CliError::io(dir, format!("corrupt checkpoint: {msg}"))
}

fn read_network(dir: &Path, name: &str, rec: &NetworkRecord) -> CliResult<MlpParams> {
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for (l, &[rows, cols]) in rec.layers.iter().enumerate() {
        let (_, w) = read_matrix(&dir.join(format!("{name}_w{l}.csv")))?;
        let (_, b) = read_matrix(&dir.join(format!("{name}_b{l}.csv")))?;
        if w.shape() != [rows, cols] || b.shape() != [1, cols] {
            return Err(corrupt(dir, format!("{name} layer {l} does not match the manifest")));
        }
        weights.push(w);
        biases.push(Tensor::vector(b.into_data()));
    }
    MlpParams::new(weights, biases, rec.activation.into()).map_err(|e| corrupt(dir, e))
}

pub fn load(dir: &Path) -> CliResult<ModelBundle> {
    let path = dir.join("manifest.json");
    if !path.exists() {
        return Err(CliError::io(&path, "missing checkpoint manifest"));
    }
    let m: Manifest = read_json(&path)?;
    if m.format != FORMAT {
        return Err(corrupt(dir, format!("format '{}' is not '{FORMAT}'", m.format)));
    }
    if m.version != VERSION {
        return Err(CliError::io(
            &path,
            format!("checkpoint format version {} cannot be read by this build (expects {VERSION})", m.version),
        ));
    }
    let order = ModelOrder::from_u8(m.spec.model_order).map_err(|e| corrupt(dir, e))?;
    let spec = SindySpec::new(m.spec.latent_dim, m.spec.poly_order, m.spec.include_sine, m.spec.include_constant, order)
        .map_err(|e| corrupt(dir, e))?;
    let encoder = read_network(dir, "encoder", &m.encoder)?;
    let decoder = read_network(dir, "decoder", &m.decoder)?;
    let params = AutoencoderParams::new(encoder, decoder).map_err(|e| corrupt(dir, e))?;
    let names = spec.column_names();
    let phi = read_coefficients(&dir.join("phi.csv"), &names)?;
    let mask = read_coefficients(&dir.join("mask.csv"), &names)?;
    if mask.shape() != phi.shape() || mask.data().iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(corrupt(dir, "mask must be a 0/1 matrix shaped like phi"));
    }
    let coefficients = SindyCoefficients::with_mask(phi, mask.data().iter().map(|&v| v == 1.0).collect())
        .map_err(|e| corrupt(dir, e))?;
    let t = &m.train;
    let coefficient_init = match t.coefficient_initialization {
        CoefficientInitName::Constant => CoefficientInit::Constant(t.coefficient_init_value),
        CoefficientInitName::Xavier => CoefficientInit::Xavier,
        CoefficientInitName::Normal => CoefficientInit::Normal,
        CoefficientInitName::Specified => CoefficientInit::Specified(read_coefficients(&dir.join("init_coefficients.csv"), &names)?),
    };
    let config = TrainConfig {
        max_epochs: t.max_epochs,
        refinement_epochs: t.refinement_epochs,
        batch_size: t.batch_size,
        learning_rate: t.learning_rate,
        sequential_thresholding: t.sequential_thresholding,
        threshold: t.threshold,
        threshold_frequency: t.threshold_frequency,
        seed: t.seed,
        print_frequency: t.print_frequency,
        loss_weights: rsae_core::autoencoder::LossWeights {
            decoder: t.loss_weight_decoder,
            sindy_x: t.loss_weight_sindy_x,
            sindy_z: t.loss_weight_sindy_z,
            sindy_regularization: t.loss_weight_sindy_regularization,
        },
        activation: t.activation.into(),
        widths: t.widths.clone(),
        coefficient_init,
    };
    let spec_dim = spec.library_dim().map_err(|e| corrupt(dir, e))?;
    if coefficients.phi.shape() != [spec_dim, spec.latent_dim] || params.latent_dim() != spec.latent_dim {
        return Err(corrupt(dir, "coefficients or latent size disagree with the library"));
    }
    Ok(ModelBundle { params, coefficients, spec, config })
}
