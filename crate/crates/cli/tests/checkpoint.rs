use std::fs;
use std::path::Path;

use rsae::checkpoint::{self, Manifest, VERSION};
use rsae::config::{self, CoefficientInitName};
use rsae::io::{read_json, write_json};
use rsae::pipeline::{embedding, simulate_system, Split};
use rsae_core::dynamics::{embed_highdim, TimeSeries};
use rsae_core::eval::dataset_losses;
use rsae_core::trainer::{train, ModelBundle, TrainHooks};

fn trained(init: CoefficientInitName, order: u8) -> (ModelBundle, TimeSeries) {
    let mut cfg = config::preset("toy-linear").unwrap();
    cfg.max_epochs = 31;
    cfg.refinement_epochs = 5;
    cfg.threshold_frequency = 10;
    cfg.coefficient_initialization = init;
    cfg.model_order = order;
    cfg.include_sine = order == 1;
    let latent = simulate_system(&cfg, Split::Train).unwrap();
    let data = embed_highdim(&latent, &embedding(&cfg).unwrap()).unwrap();
    let spec = cfg.sindy_spec().unwrap();
    let p = spec.library_dim().unwrap();
    let specified = rsae_core::Tensor::filled(&[p, cfg.latent_dim], 0.5);
    let out = train(&data, &spec, &cfg.train_config(Some(specified)).unwrap(), TrainHooks::default()).unwrap();
    (out.model, data)
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    out.sort();
    out
}

#[test]
fn save_load_save_is_byte_identical() {
    for (init, order) in [(CoefficientInitName::Constant, 1), (CoefficientInitName::Specified, 1), (CoefficientInitName::Normal, 2)] {
        let (model, _) = trained(init, order);
        let tmp = tempfile::tempdir().unwrap();
        let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
        checkpoint::save(&a, &model).unwrap();
        let loaded = checkpoint::load(&a).unwrap();
        assert_eq!(loaded, model);
        checkpoint::save(&b, &loaded).unwrap();
        assert_eq!(files(&a), files(&b));
    }
}

#[test]
fn loaded_model_reproduces_the_training_loss() {
    let (model, data) = trained(CoefficientInitName::Constant, 1);
    let tmp = tempfile::tempdir().unwrap();
    checkpoint::save(tmp.path(), &model).unwrap();
    let loaded = checkpoint::load(tmp.path()).unwrap();
    let batch = data.slice(0, 64).unwrap();
    let (a, b) = (dataset_losses(&model, &batch).unwrap(), dataset_losses(&loaded, &batch).unwrap());
    assert!((a.total - b.total).abs() <= 1e-12 * a.total.abs(), "{} vs {}", a.total, b.total);
}

#[test]
fn coefficient_files_name_the_library_columns() {
    let (model, _) = trained(CoefficientInitName::Constant, 1);
    let tmp = tempfile::tempdir().unwrap();
    checkpoint::save(tmp.path(), &model).unwrap();
    let text = fs::read_to_string(tmp.path().join("phi.csv")).unwrap();
    assert_eq!(text.lines().next().unwrap(), model.spec.column_names().join(","));
    assert_eq!(text.lines().count(), 1 + model.spec.latent_dim);
}

#[test]
fn version_mismatch_is_rejected() {
    let (model, _) = trained(CoefficientInitName::Constant, 1);
    let tmp = tempfile::tempdir().unwrap();
    checkpoint::save(tmp.path(), &model).unwrap();
    let path = tmp.path().join("manifest.json");
    let mut manifest: Manifest = read_json(&path).unwrap();
    manifest.version = VERSION + 1;
    write_json(&path, &manifest).unwrap();
    let err = checkpoint::load(tmp.path()).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains(&format!("version {}", VERSION + 1)) && msg.contains(&format!("expects {VERSION}")), "{msg}");
    assert_eq!(err.exit_code(), 4);
}

#[test]
fn missing_or_corrupt_checkpoints_fail_to_load() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(checkpoint::load(tmp.path()).unwrap_err().to_string().contains("manifest"));

    let (model, _) = trained(CoefficientInitName::Constant, 1);
    checkpoint::save(tmp.path(), &model).unwrap();
    fs::remove_file(tmp.path().join("decoder_w0.csv")).unwrap();
    assert_eq!(checkpoint::load(tmp.path()).unwrap_err().exit_code(), 4);

    checkpoint::save(tmp.path(), &model).unwrap();
    let mask = tmp.path().join("mask.csv");
    let text = fs::read_to_string(&mask).unwrap().replacen("\n0", "\n0.5", 1).replacen("\n1", "\n0.5", 1);
    fs::write(&mask, text).unwrap();
    assert!(checkpoint::load(tmp.path()).unwrap_err().to_string().contains("0/1"));
}
