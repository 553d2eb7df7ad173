use deca::config::ExperimentConfig;
use deca_core::model::TaskSet;
use deca_core::synth::ViewTag;
use proptest::prelude::*;

#[test]
fn toml_round_trip() {
    let c = ExperimentConfig::default();
    let text = c.to_toml().unwrap();
    assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), c);
    assert_eq!(ExperimentConfig::from_toml("").unwrap(), c);
}

#[test]
fn partial_file_keeps_defaults() {
    let c = ExperimentConfig::from_toml("[train]\nepochs = 3\n[model]\ntasks = \"d1\"\n").unwrap();
    assert_eq!(c.train.epochs, 3);
    assert_eq!(c.model.tasks, TaskSet::d1());
    assert_eq!(c.train.batch_size, ExperimentConfig::default().train.batch_size);
}

#[test]
fn overrides() {
    let c = ExperimentConfig::load(
        None,
        &["train.learning_rate=0.01".into(), "data.view=top".into(), "model.tasks=3d,w".into()],
    )
    .unwrap();
    assert_eq!(c.train.learning_rate, 0.01);
    assert_eq!(c.data.view, ViewTag::Top);
    assert_eq!(c.model.tasks, TaskSet::d2());
    let d = c.with_override("eval.radius=0.2").unwrap();
    assert_eq!(d.eval.radius, 0.2);
    assert_eq!(d.train, c.train);
}

#[test]
fn bad_overrides_are_rejected() {
    for ov in [
        "train.epochz=3",
        "nope=1",
        "train.epochs",
        "train..epochs=1",
        "train.epochs=\"x\"",
        "train.batch_size=0",
        "model.tasks=r4",
    ] {
        assert!(ExperimentConfig::load(None, &[ov.to_string()]).is_err(), "{ov}");
    }
    assert!(ExperimentConfig::from_toml("[train]\nepochz = 3\n").is_err());
}

#[test]
fn every_knob_is_serialized() {
    let text = ExperimentConfig::default().to_toml().unwrap();
    for key in [
        "routing",
        "dropout",
        "inverse_graphics",
        "depth_norm",
        "validation_fraction",
        "learning_rate",
        "weight_decay",
        "grouping",
        "radius",
        "kinematics",
        "rig",
        "widths",
        "kernel",
    ] {
        assert!(text.contains(key), "{key}");
    }
}

proptest! {
    #[test]
    fn seed_is_the_only_difference(a in 0..=i64::MAX as u64, b in 0..=i64::MAX as u64) {
        let x = ExperimentConfig::load(None, &[format!("train.seed={a}")]).unwrap();
        let y = ExperimentConfig::load(None, &[format!("train.seed={b}")]).unwrap();
        let (tx, ty) = (x.to_toml().unwrap(), y.to_toml().unwrap());
        let diff: Vec<(&str, &str)> = tx.lines().zip(ty.lines()).filter(|(p, q)| p != q).collect();
        prop_assert!(diff.len() <= 1);
        prop_assert!(diff.iter().all(|(p, _)| p.starts_with("seed")));
    }
}
