//! The five stages of a run. Each reads what the previous stage left in the
//! run directory and writes its own subdirectory:
//!
//! ```text
//! out/config.json            resolved configuration
//! out/data/{train,test}/     t, x, dx, noise, clean, latent, metadata.json
//! out/denoise/{train,test}/  denoised, noise, loss_history, report.json
//! out/model/                 checkpoint, history.csv
//! out/eval/                  metrics.json, transform.json, coefficients, trajectories
//! ```

use std::path::{Path, PathBuf};

use rsae_core::autoencoder::{z_derivative, z_derivative_order2};
use rsae_core::denoise::separate_noise_with_progress;
use rsae_core::dynamics::{
    add_noise, embed_highdim, integrate_rk4, lorenz_trajectory, uniform_grid, EmbeddingModes, LorenzParams, TimeSeries,
};
use rsae_core::eval::{compute_metrics, noise_recovery_report, rmse, sindy_simulate};
use rsae_core::library::ModelOrder;
use rsae_core::trainer::{latent_trajectory, train, Phase, TrainHooks, TrainRecord};
use rsae_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::analysis::{compare_structure, true_coefficients, StructureReport};
use crate::checkpoint::{self, write_coefficients};
use crate::config::{DenoiseSpace, ExperimentConfig, SystemKind};
use crate::error::{CliError, CliResult};
use crate::io::{create_dir, numbered, read_json, write_json, write_matrix, SeriesFiles};

/// Sink for progress lines.
pub type Log<'a> = &'a mut dyn FnMut(&str);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }

    /// Noise and denoiser seed of the split.
    fn seed(self, cfg: &ExperimentConfig) -> u64 {
        match self {
            Split::Train => cfg.seed,
            Split::Test => cfg.seed.wrapping_add(1),
        }
    }
}

pub fn data_dir(out: &Path, split: Split) -> PathBuf {
    out.join("data").join(split.name())
}

pub fn denoise_dir(out: &Path, split: Split) -> PathBuf {
    out.join("denoise").join(split.name())
}

pub fn model_dir(out: &Path) -> PathBuf {
    out.join("model")
}

pub fn eval_dir(out: &Path) -> PathBuf {
    out.join("eval")
}

fn state_prefix(cfg: &ExperimentConfig) -> &'static str {
    match cfg.denoise_space {
        DenoiseSpace::Latent => "z",
        DenoiseSpace::Observed => "x",
    }
}

fn numeric(stage: &'static str) -> impl FnOnce(rsae_core::Error) -> CliError {
    CliError::numeric(stage)
}

pub fn embedding(cfg: &ExperimentConfig) -> CliResult<EmbeddingModes> {
    EmbeddingModes::legendre(cfg.input_dim, cfg.state_dim(), cfg.cubic_modes, cfg.normalization.clone())
        .map_err(|e| CliError::Config(e.to_string()))
}

/// Clean trajectory of the generating system with exact derivatives.
pub fn simulate_system(cfg: &ExperimentConfig, split: Split) -> CliResult<TimeSeries> {
    let (x0, t) = match split {
        Split::Train => (&cfg.initial_state, uniform_grid(cfg.num_samples, cfg.t_end / cfg.num_samples as f64)),
        Split::Test => (&cfg.test_initial_state, uniform_grid(cfg.test_samples, cfg.test_dt)),
    };
    match cfg.system {
        SystemKind::Lorenz => {
            let p = LorenzParams::new(cfg.sigma, cfg.rho, cfg.beta).map_err(|e| CliError::Config(e.to_string()))?;
            lorenz_trajectory([x0[0], x0[1], x0[2]], &t, &p).map_err(numeric("generate"))
        }
        SystemKind::Linear => {
            let a = &cfg.linear_matrix;
            let apply = |z: &[f64], out: &mut [f64]| {
                for (o, row) in out.iter_mut().zip(a) {
                    *o = row.iter().zip(z).map(|(r, v)| r * v).sum();
                }
            };
            let mut s = integrate_rk4(apply, x0, &t).map_err(numeric("generate"))?;
            let dx = s.dx.as_ref().expect("integrator returns derivatives");
            let n = s.dim();
            let mut ddx = vec![0.0; dx.len()];
            for r in 0..s.len() {
                apply(dx.row(r), &mut ddx[r * n..(r + 1) * n]);
            }
            s.ddx = Some(Tensor::matrix(s.len(), n, ddx).map_err(numeric("generate"))?);
            Ok(s)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMetadata {
    pub split: String,
    pub seed: u64,
    pub noise_level: f64,
    /// Standard deviation of the injected noise.
    pub noise_std: f64,
    pub system: SystemKind,
    pub system_parameters: Vec<f64>,
    pub initial_state: Vec<f64>,
    pub samples: usize,
    pub dt: f64,
    /// Space the noise was added in; `x.csv` lives there.
    pub space: DenoiseSpace,
    pub input_dim: usize,
}

/// Writes the clean and noisy trajectories of both splits.
pub fn generate(cfg: &ExperimentConfig, out: &Path, log: Log) -> CliResult<()> {
    cfg.validate()?;
    create_dir(out)?;
    write_json(&out.join("config.json"), cfg)?;
    let modes = embedding(cfg)?;
    for split in [Split::Train, Split::Test] {
        let dir = data_dir(out, split);
        create_dir(&dir)?;
        let latent = simulate_system(cfg, split)?;
        let clean = match cfg.denoise_space {
            DenoiseSpace::Latent => latent.clone(),
            DenoiseSpace::Observed => embed_highdim(&latent, &modes).map_err(numeric("generate"))?,
        };
        let noisy = add_noise(&clean, cfg.noise_level, split.seed(cfg)).map_err(numeric("generate"))?;
        let prefix = state_prefix(cfg);
        SeriesFiles { dir: &dir, stem: "x", prefix }.write(&noisy.observed)?;
        SeriesFiles { dir: &dir, stem: "clean", prefix }.write(&clean)?;
        SeriesFiles { dir: &dir, stem: "latent", prefix: "z" }.write(&latent)?;
        write_matrix(&dir.join("noise.csv"), &numbered(&format!("n{prefix}"), clean.dim()), &noisy.true_noise)?;
        let meta = DatasetMetadata {
            split: split.name().into(),
            seed: split.seed(cfg),
            noise_level: cfg.noise_level,
            noise_std: cfg.noise_level * rsae_core::dynamics::global_std(clean.x.data()),
            system: cfg.system,
            system_parameters: match cfg.system {
                SystemKind::Lorenz => vec![cfg.sigma, cfg.rho, cfg.beta],
                SystemKind::Linear => cfg.linear_matrix.iter().flatten().copied().collect(),
            },
            initial_state: latent.x.row(0).to_vec(),
            samples: latent.len(),
            dt: latent.t.get(1).map_or(0.0, |t1| t1 - latent.t[0]),
            space: cfg.denoise_space,
            input_dim: cfg.input_dim,
        };
        write_json(&dir.join("metadata.json"), &meta)?;
        log(&format!("generate {}: {} samples, noise level {}", split.name(), latent.len(), cfg.noise_level));
    }
    Ok(())
}

/// Summary of one denoiser run, stored as `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiseReport {
    pub iterations: usize,
    pub termination: String,
    pub initial_objective: f64,
    pub final_objective: f64,
    /// `‖N̂‖ / ‖Y‖` over all samples.
    pub noise_to_signal: f64,
    /// Samples kept after dropping `num_dt` at each end.
    pub interior_samples: usize,
    /// Interior comparison with the injected noise; absent for clean data.
    pub recovery: Option<RecoverySummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoverySummary {
    pub correlation: f64,
    pub relative_l2: f64,
    /// RMSE of the observations against the clean signal.
    pub rmse_observed: f64,
    /// RMSE of the denoised signal against the clean signal.
    pub rmse_denoised: f64,
}

fn splits_to_denoise(cfg: &ExperimentConfig) -> Vec<Split> {
    match (cfg.denoise, cfg.denoise_test) {
        (false, _) => vec![],
        (true, false) => vec![Split::Train],
        (true, true) => vec![Split::Train, Split::Test],
    }
}

/// Separates noise from the observed trajectories. Does nothing when
/// `denoise` is off.
pub fn denoise(cfg: &ExperimentConfig, out: &Path, log: Log) -> CliResult<()> {
    cfg.validate()?;
    let dcfg = cfg.denoise_config();
    let prefix = state_prefix(cfg);
    for split in splits_to_denoise(cfg) {
        let src = data_dir(out, split);
        let observed = SeriesFiles { dir: &src, stem: "x", prefix }.read()?;
        let clean = SeriesFiles { dir: &src, stem: "clean", prefix }.read()?;
        let (_, true_noise) = crate::io::read_matrix(&src.join("noise.csv"))?;
        let every = (dcfg.max_iter / 20).max(1);
        let name = split.name();
        let mut progress = |it: usize, f: f64| {
            if it % every == 0 {
                log(&format!("denoise {name}: iteration {it} objective {f:.6e}"));
            }
        };
        let result = separate_noise_with_progress(&observed.t, &observed.x, &dcfg, split.seed(cfg), &mut progress);
        let fit = result.map_err(|d| CliError::Numeric { stage: "denoise", source: d.error })?;
        let dir = denoise_dir(out, split);
        create_dir(&dir)?;
        SeriesFiles { dir: &dir, stem: "denoised", prefix }.write(&fit.denoised)?;
        write_matrix(&dir.join("noise.csv"), &numbered(&format!("n{prefix}"), observed.dim()), &fit.noise.noise)?;
        let iterations: Vec<f64> = (0..fit.history.len()).map(|i| i as f64).collect();
        let hist = Tensor::matrix(fit.history.len(), 2, iterations.iter().zip(&fit.history).flat_map(|(i, f)| [*i, *f]).collect())
            .expect("two columns");
        write_matrix(&dir.join("loss_history.csv"), &["iteration".into(), "objective".into()], &hist)?;

        let k = cfg.num_dt;
        let m = observed.len();
        let interior = |a: &Tensor| a.slice_rows(k, m - 2 * k).map_err(numeric("denoise"));
        let recovery = if cfg.noise_level > 0.0 {
            let r = noise_recovery_report(&fit.noise.noise, &true_noise, k).map_err(numeric("denoise"))?;
            let clean_in = interior(&clean.x)?;
            Some(RecoverySummary {
                correlation: r.correlation,
                relative_l2: r.relative_l2,
                rmse_observed: rmse(&interior(&observed.x)?, &clean_in).map_err(numeric("denoise"))?,
                rmse_denoised: rmse(&interior(&fit.denoised.x)?, &clean_in).map_err(numeric("denoise"))?,
            })
        } else {
            None
        };
        let report = DenoiseReport {
            iterations: fit.iterations,
            termination: format!("{:?}", fit.termination),
            initial_objective: fit.history.first().copied().unwrap_or(f64::NAN),
            final_objective: fit.history.last().copied().unwrap_or(f64::NAN),
            noise_to_signal: fit.noise.noise.frobenius_norm() / observed.x.frobenius_norm(),
            interior_samples: m - 2 * k,
            recovery,
        };
        if let Some(r) = &report.recovery {
            log(&format!(
                "denoise {name}: {} iterations ({}), noise correlation {:.4}, rmse {:.4} -> {:.4}",
                report.iterations, report.termination, r.correlation, r.rmse_observed, r.rmse_denoised
            ));
        } else {
            log(&format!(
                "denoise {name}: {} iterations ({}), noise/signal {:.3e}",
                report.iterations, report.termination, report.noise_to_signal
            ));
        }
        write_json(&dir.join("report.json"), &report)?;
    }
    Ok(())
}

/// Autoencoder input for a split together with the clean latent state on the
/// same samples.
pub struct ModelInput {
    pub data: TimeSeries,
    pub latent: TimeSeries,
    /// `denoised` or `observed`.
    pub source: &'static str,
}

/// Denoised trajectory (interior only) when the denoiser ran on this split,
/// the raw observations otherwise, lifted into the input space if needed.
pub fn model_input(cfg: &ExperimentConfig, out: &Path, split: Split) -> CliResult<ModelInput> {
    let prefix = state_prefix(cfg);
    let latent = SeriesFiles { dir: &data_dir(out, split), stem: "latent", prefix: "z" }.read()?;
    let (series, latent, source) = if splits_to_denoise(cfg).contains(&split) {
        let d = SeriesFiles { dir: &denoise_dir(out, split), stem: "denoised", prefix }.read()?;
        let k = cfg.num_dt;
        let len = d.len().checked_sub(2 * k).filter(|&l| l > 0).ok_or_else(|| {
            CliError::Config(format!("{} samples leave no interior for num_dt {k}", d.len()))
        })?;
        let slice = |s: &TimeSeries| s.slice(k, len).map_err(numeric("train"));
        (slice(&d)?, slice(&latent)?, "denoised")
    } else {
        (SeriesFiles { dir: &data_dir(out, split), stem: "x", prefix }.read()?, latent, "observed")
    };
    let data = match cfg.denoise_space {
        DenoiseSpace::Latent => embed_highdim(&series, &embedding(cfg)?).map_err(numeric("train"))?,
        DenoiseSpace::Observed => series,
    };
    Ok(ModelInput { data, latent, source })
}

fn history_matrix(records: &[TrainRecord]) -> Tensor {
    let mut data = Vec::with_capacity(records.len() * 9);
    for r in records {
        let l = &r.losses;
        data.extend_from_slice(&[
            r.epoch as f64,
            f64::from(u8::from(r.phase == Phase::Refinement)),
            l.decoder,
            l.sindy_x,
            l.sindy_z,
            l.sindy_regularization,
            l.total,
            l.refinement,
            r.active_terms as f64,
        ]);
    }
    Tensor::matrix(records.len(), 9, data).expect("nine columns")
}

const HISTORY_HEADER: [&str; 9] = [
    "epoch",
    "refinement_phase",
    "decoder",
    "sindy_x",
    "sindy_z",
    "sindy_regularization",
    "total",
    "refinement_loss",
    "active_terms",
];

fn format_record(r: &TrainRecord) -> String {
    let l = &r.losses;
    let phase = match r.phase {
        Phase::Main => "main",
        Phase::Refinement => "refine",
    };
    let mut line = format!(
        "train epoch {:>6} {phase:<6} total {:.4e} decoder {:.4e} sindy_x {:.4e} sindy_z {:.4e} l1 {:.4e} active {}",
        r.epoch, l.total, l.decoder, l.sindy_x, l.sindy_z, l.sindy_regularization, r.active_terms
    );
    if let Some(s) = r.elapsed {
        line.push_str(&format!(" {s:.1}s"));
    }
    line
}

/// Trains the autoencoder and writes the checkpoint and loss history.
pub fn train_model(cfg: &ExperimentConfig, out: &Path, log: Log) -> CliResult<()> {
    cfg.validate()?;
    let spec = cfg.sindy_spec()?;
    let specified = true_coefficients(cfg, &spec)?;
    let tcfg = cfg.train_config(Some(specified))?;
    let input = model_input(cfg, out, Split::Train)?;
    log(&format!("train: {} samples of dimension {} ({})", input.data.len(), input.data.dim(), input.source));
    let start = std::time::Instant::now();
    let clock = move || start.elapsed().as_secs_f64();
    let mut progress = |r: &TrainRecord| log(&format_record(r));
    let hooks = TrainHooks { clock: Some(&clock), progress: Some(&mut progress) };
    let dir = model_dir(out);
    let result = match train(&input.data, &spec, &tcfg, hooks) {
        Ok(r) => r,
        Err(d) => {
            if let Some(partial) = &d.partial {
                checkpoint::save(&out.join("model_partial"), &partial.model)?;
            }
            return Err(CliError::Numeric { stage: "train", source: d.error });
        }
    };
    checkpoint::save(&dir, &result.model)?;
    let header: Vec<String> = HISTORY_HEADER.iter().map(|s| s.to_string()).collect();
    write_matrix(&dir.join("history.csv"), &header, &history_matrix(&result.history.records))?;
    log(&format!("train: {} active terms, checkpoint in {}", result.model.coefficients.active_count(), dir.display()));
    Ok(())
}

/// Contents of `metrics.json`. Holds nothing that depends on wall-clock time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub decoder_relative_error: f64,
    pub decoder_sindy_relative_error: f64,
    pub latent_sindy_relative_error: f64,
    pub seed: u64,
    pub noise_level: f64,
    pub system: SystemKind,
    /// `denoised` or `observed` test trajectory.
    pub evaluated_on: String,
    pub test_samples: usize,
    pub active_terms: usize,
    pub true_terms: usize,
    pub true_terms_found: usize,
    pub spurious_terms: usize,
    pub latent_fit_residual: f64,
    /// Samples the discovered model could be simulated for before leaving
    /// the bounded region; equal to `test_samples` when it never did.
    pub simulated_samples: usize,
    /// Noise recovery on the training trajectory, when it was denoised.
    pub train_noise_recovery: Option<RecoverySummary>,
}

/// Prepends the time column; `m` may be shorter than `t`.
fn with_time(t: &[f64], m: &Tensor) -> Tensor {
    let n = m.cols();
    let mut data = Vec::with_capacity(m.rows() * (n + 1));
    for (r, ti) in t.iter().enumerate().take(m.rows()) {
        data.push(*ti);
        data.extend_from_slice(m.row(r));
    }
    Tensor::matrix(m.rows(), n + 1, data).expect("time column")
}

fn header_with_time(prefix: &str, n: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    h.extend(numbered(prefix, n));
    h
}

fn write_long_csv(path: &Path, t: &[f64], series: &[(&str, &Tensor)]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::io(path, e))?;
    w.write_record(["t", "series", "value"]).map_err(|e| CliError::io(path, e))?;
    for (name, m) in series {
        for c in 0..m.cols() {
            let label = format!("{name}_z{}", c + 1);
            for (r, ti) in t.iter().enumerate().take(m.rows()) {
                w.write_record([ti.to_string(), label.clone(), m.get(r, c).to_string()])
                    .map_err(|e| CliError::io(path, e))?;
            }
        }
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Test-set metrics, alignment with the true latent state, structure report
/// and simulated trajectories.
pub fn evaluate(cfg: &ExperimentConfig, out: &Path, log: Log) -> CliResult<MetricsReport> {
    cfg.validate()?;
    let model = checkpoint::load(&model_dir(out))?;
    let spec = model.spec.clone();
    let input = model_input(cfg, out, Split::Test)?;
    let metrics = compute_metrics(&model, &input.data).map_err(numeric("eval"))?;
    let z = latent_trajectory(&model, &input.data.x).map_err(numeric("eval"))?;
    let truth = true_coefficients(cfg, &spec)?;
    let (fit, mapped, structure) =
        compare_structure(&z, &input.latent.x, &model.coefficients, &spec, &truth, cfg.structure_threshold)?;

    let dir = eval_dir(out);
    create_dir(&dir)?;
    let names = spec.column_names();
    write_coefficients(&dir.join("coefficients.csv"), &names, &model.coefficients.masked())?;
    write_coefficients(&dir.join("aligned_coefficients.csv"), &names, &mapped.masked())?;
    write_coefficients(&dir.join("true_coefficients.csv"), &names, &truth)?;
    write_json(&dir.join("transform.json"), &structure)?;

    // simulate the discovered model from the encoded initial state
    let dx = input.data.dx.as_ref().expect("derivatives present");
    let x0 = input.data.x.slice_rows(0, 1).map_err(numeric("eval"))?;
    let dx0 = dx.slice_rows(0, 1).map_err(numeric("eval"))?;
    let mut z0 = z.row(0).to_vec();
    if spec.model_order == ModelOrder::Second {
        let v = match &input.data.ddx {
            Some(ddx) => {
                let ddx0 = ddx.slice_rows(0, 1).map_err(numeric("eval"))?;
                z_derivative_order2(&x0, &dx0, &ddx0, &model.params.encoder).map_err(numeric("eval"))?.0
            }
            None => z_derivative(&x0, &dx0, &model.params.encoder).map_err(numeric("eval"))?,
        };
        z0.extend_from_slice(v.data());
    }
    let t = &input.data.t;
    let simulated = match sindy_simulate(&z0, t, &model.coefficients, &spec) {
        Ok(s) => s,
        Err(d) => match d.partial {
            Some(p) => {
                log(&format!("eval: simulation left the bounded region after {} samples", p.len()));
                p
            }
            None => return Err(CliError::Numeric { stage: "eval", source: d.error }),
        },
    };
    let n = spec.latent_dim;
    let sim_z = simulated.x.clone();
    write_matrix(&dir.join("simulated.csv"), &header_with_time("z", n), &with_time(t, &sim_z))?;
    let sim_ref = fit.transform.apply(&sim_z).map_err(numeric("eval"))?;
    let enc_ref = fit.transform.apply(&z).map_err(numeric("eval"))?;
    write_matrix(&dir.join("simulated_aligned.csv"), &header_with_time("z", n), &with_time(t, &sim_ref))?;
    write_matrix(&dir.join("encoded_aligned.csv"), &header_with_time("z", n), &with_time(t, &enc_ref))?;
    write_long_csv(
        &dir.join("plot.csv"),
        t,
        &[("reference", &input.latent.x), ("encoded", &enc_ref), ("simulated", &sim_ref)],
    )?;

    let train_noise_recovery = if splits_to_denoise(cfg).contains(&Split::Train) {
        read_json::<DenoiseReport>(&denoise_dir(out, Split::Train).join("report.json"))?.recovery
    } else {
        None
    };
    let report = MetricsReport {
        decoder_relative_error: metrics.decoder_relative_error,
        decoder_sindy_relative_error: metrics.decoder_sindy_relative_error,
        latent_sindy_relative_error: metrics.latent_sindy_relative_error,
        seed: cfg.seed,
        noise_level: cfg.noise_level,
        system: cfg.system,
        evaluated_on: input.source.into(),
        test_samples: input.data.len(),
        active_terms: model.coefficients.active_count(),
        true_terms: structure.true_terms,
        true_terms_found: structure.true_terms_found,
        spurious_terms: structure.spurious_terms,
        latent_fit_residual: structure.fit_residual,
        simulated_samples: simulated.len(),
        train_noise_recovery,
    };
    write_json(&dir.join("metrics.json"), &report)?;
    log(&format!(
        "eval: decoder {:.4e} decoder_sindy {:.4e} latent_sindy {:.4e}; {}/{} true terms, {} spurious",
        report.decoder_relative_error,
        report.decoder_sindy_relative_error,
        report.latent_sindy_relative_error,
        report.true_terms_found,
        report.true_terms,
        report.spurious_terms
    ));
    for line in equations(&structure, &mapped, &names) {
        log(&format!("eval: {line}"));
    }
    Ok(report)
}

/// Human-readable aligned equations, one per latent coordinate.
fn equations(structure: &StructureReport, mapped: &rsae_core::library::SindyCoefficients, names: &[String]) -> Vec<String> {
    (0..structure.scale.len())
        .map(|j| {
            let terms: Vec<String> = (0..names.len())
                .filter(|&r| mapped.is_active(r, j))
                .map(|r| format!("{:+.4} {}", mapped.phi.get(r, j), names[r]))
                .collect();
            let rhs = if terms.is_empty() { "0".to_string() } else { terms.join(" ") };
            format!("dz{}/dt = {rhs}", j + 1)
        })
        .collect()
}

/// All four stages in order.
pub fn run_pipeline(cfg: &ExperimentConfig, out: &Path, log: Log) -> CliResult<MetricsReport> {
    generate(cfg, out, log)?;
    denoise(cfg, out, log)?;
    train_model(cfg, out, log)?;
    evaluate(cfg, out, log)
}
