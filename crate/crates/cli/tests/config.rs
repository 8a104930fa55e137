use proptest::prelude::*;
use rsae::config::{self, ExperimentConfig, PRESETS};
use rsae::CliError;

#[test]
fn unknown_key_is_rejected_with_its_line() {
    let text = "{\n  \"seed\": 3,\n  \"noise_levle\": 0.1\n}\n";
    let err = config::parse(text, "run.json").unwrap_err();
    let msg = err.to_string();
    assert!(matches!(err, CliError::Config(_)));
    assert!(msg.contains("run.json"), "{msg}");
    assert!(msg.contains("noise_levle"), "{msg}");
    assert!(msg.contains("line 3"), "{msg}");
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn unknown_key_over_a_preset_is_rejected() {
    let base = config::preset("smoke").unwrap();
    let err = config::parse_over(&base, "{\"widthz\": [4]}", "over.json").unwrap_err();
    assert!(err.to_string().contains("widthz"), "{err}");
}

#[test]
fn type_errors_report_position() {
    let err = config::parse("{\n\"seed\": \"zero\"\n}", "c.json").unwrap_err();
    assert!(err.to_string().contains("line 2"), "{err}");
}

#[test]
fn missing_keys_take_defaults() {
    let cfg = config::parse("{\"seed\": 9}", "c.json").unwrap();
    assert_eq!(cfg, ExperimentConfig { seed: 9, ..Default::default() });
}

#[test]
fn overrides_keep_the_preset_elsewhere() {
    let base = config::preset("smoke").unwrap();
    let cfg = config::parse_over(&base, "{\"noise_level\": 0.15}", "c.json").unwrap();
    assert_eq!(cfg, ExperimentConfig { noise_level: 0.15, ..base });
}

#[test]
fn defaults_are_the_full_scale_lorenz_setup() {
    let c = ExperimentConfig::default();
    assert_eq!(c.initial_state, vec![5.0, 5.0, 25.0]);
    assert_eq!((c.num_samples, c.t_end), (30_000, 20.0));
    assert_eq!((c.test_initial_state.clone(), c.test_dt, c.test_samples), (vec![-8.0, 7.0, 27.0], 0.01, 2000));
    assert_eq!((c.input_dim, c.latent_dim, c.poly_order, c.model_order), (128, 3, 3, 1));
    assert_eq!(c.widths, vec![64, 32]);
    assert_eq!((c.max_epochs, c.refinement_epochs, c.batch_size), (5_001, 1_001, 1_024));
    assert_eq!((c.learning_rate, c.coefficient_threshold, c.threshold_frequency), (1e-3, 0.1, 500));
    assert_eq!(
        (c.loss_weight_decoder, c.loss_weight_sindy_x, c.loss_weight_sindy_z, c.loss_weight_sindy_regularization),
        (1.0, 1e-4, 0.0, 1e-5)
    );
    assert_eq!((c.num_dt, c.denoise_hidden_layers, c.denoise_hidden_width), (10, 3, 32));
    assert_eq!(c.print_frequency, 100);
}

#[test]
fn every_preset_validates() {
    for name in PRESETS {
        config::preset(name).unwrap().validate().unwrap_or_else(|e| panic!("{name}: {e}"));
    }
    assert!(matches!(config::preset("nope"), Err(CliError::Config(_))));
    let levels: Vec<f64> = ["paper-lorenz-5", "paper-lorenz-10", "paper-lorenz-15"]
        .iter()
        .map(|n| config::preset(n).unwrap().noise_level)
        .collect();
    assert_eq!(levels, vec![0.05, 0.10, 0.15]);
}

#[test]
fn inconsistent_settings_are_config_errors() {
    let bad = [
        ExperimentConfig { latent_dim: 2, ..Default::default() },
        ExperimentConfig { model_order: 2, ..Default::default() },
        ExperimentConfig { noise_level: -0.1, ..Default::default() },
        ExperimentConfig { normalization: vec![1.0], ..Default::default() },
        ExperimentConfig { batch_size: 40_000, ..Default::default() },
        ExperimentConfig { widths: vec![], ..Default::default() },
        ExperimentConfig { input_dim: 4, ..Default::default() },
    ];
    for (i, cfg) in bad.iter().enumerate() {
        let err = cfg.validate().unwrap_err();
        assert_eq!(err.exit_code(), 2, "case {i}: {err}");
    }
}

#[test]
fn table_lists_every_key_once_in_order() {
    let table = ExperimentConfig::default().table();
    let keys: Vec<&str> = table.lines().map(|l| l.split_whitespace().next().unwrap()).collect();
    let mut sorted = keys.clone();
    sorted.sort();
    assert_eq!(keys, sorted);
    assert!(keys.contains(&"noise_level") && keys.contains(&"widths"));
    let value = serde_json::to_value(ExperimentConfig::default()).unwrap();
    assert_eq!(keys.len(), value.as_object().unwrap().len());
}

proptest! {
    #[test]
    fn serialized_config_parses_back(seed: u64, level in 0.0f64..0.5, samples in 10usize..100_000, sine: bool) {
        let cfg = ExperimentConfig { seed, noise_level: level, num_samples: samples, include_sine: sine, ..Default::default() };
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        prop_assert_eq!(config::parse(&text, "x").unwrap(), cfg);
    }
}
