use mdbnet_core::blocks::FusionStrategy;
use mdbnet_core::config::{ConfigError, RunConfig};
use mdbnet_core::losses::WeightingMode;

#[test]
fn defaults_round_trip_through_toml() {
    let cfg = RunConfig::default();
    assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    assert_eq!(RunConfig::from_toml("").unwrap(), cfg);
    cfg.validate().unwrap();
}

#[test]
fn unknown_keys_are_rejected_at_every_level() {
    for text in [
        "colour = 1",
        "[model]\nwidth = 3",
        "[train]\nlr = 1",
        "[data.scene]\nroof = true",
        "[nope]",
    ] {
        assert!(
            matches!(RunConfig::from_toml(text), Err(ConfigError::Parse(_))),
            "{text}"
        );
    }
    let cfg = RunConfig::default();
    assert!(cfg.with_overrides(&["loss.bogus=1".into()]).is_err());
    assert!(matches!(
        cfg.with_overrides(&["seed".into()]),
        Err(ConfigError::Override(..))
    ));
    assert!(matches!(
        cfg.with_overrides(&["seed.x=1".into()]),
        Err(ConfigError::Override(..))
    ));
}

#[test]
fn overrides_parse_typed_values() {
    let cfg = RunConfig::default()
        .with_overrides(&[
            "seed=7".into(),
            "model.fusion=mid".into(),
            "loss.weighting_mode=\"resample\"".into(),
            "loss.lambda=0.5".into(),
            "data.scene.object_count=[2, 3]".into(),
            "output_dir=runs/x".into(),
        ])
        .unwrap();
    assert_eq!(cfg.seed, 7);
    assert_eq!(cfg.model.fusion, FusionStrategy::Mid);
    assert_eq!(cfg.loss.weighting_mode, WeightingMode::Resample);
    assert_eq!(cfg.loss.lambda, 0.5);
    assert_eq!(cfg.data.scene.object_count, [2, 3]);
    assert_eq!(cfg.output_dir.to_str(), Some("runs/x"));
    assert_eq!(cfg.train_config().seed, 7);
    assert!(RunConfig::default()
        .with_overrides(&["loss.lambda=\"big\"".into()])
        .is_err());
}

#[test]
fn validation_catches_inconsistent_sections() {
    let bad = RunConfig::default().with_overrides(&["data.folds=1".into()]).unwrap();
    assert!(matches!(bad.validate(), Err(ConfigError::Invalid(_))));
    let bad = RunConfig::default()
        .with_overrides(&["model.grid_dims=[16, 16, 16]".into()])
        .unwrap();
    assert!(matches!(bad.validate(), Err(ConfigError::Invalid(_))));
    let bad = RunConfig::default()
        .with_overrides(&["loss.lambda=-1.0".into()])
        .unwrap();
    assert!(bad.validate().is_err());
}

#[test]
fn echo_writes_a_reloadable_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig::default().with_overrides(&["seed=11".into()]).unwrap();
    let path = cfg.echo(dir.path()).unwrap();
    assert_eq!(RunConfig::load(&path).unwrap(), cfg);
}
