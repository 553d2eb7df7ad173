use deca_core::model::{normalize_depth, normalize_rgb, Domain, Model, ModelConfig, TargetNorm, Targets, Task, TaskSet};
use deca_core::numerics::{Adam, AdamConfig};
use deca_core::{Graph, SeededRng, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};

/// Smallest geometry that still runs every layer.
fn tiny(domain: Domain, tasks: TaskSet) -> ModelConfig {
    let mut c = ModelConfig::desk(domain, tasks);
    c.image_size = 32;
    c.encoder.widths = vec![4, 8, 8];
    c.capsules.primary_types = 4;
    for s in c.capsules.conv.iter_mut() {
        s.types = 4;
    }
    c.decoder.hidden = vec![16];
    c.decoder.depth_side = 8;
    c
}

fn build(cfg: &ModelConfig, seed: u64) -> Model<f32> {
    Model::build(cfg.clone(), &mut SeededRng::seed_from_u64(seed)).unwrap()
}

fn heads(cfg: &ModelConfig) -> usize {
    let m = build(cfg, 0);
    let mut g = Graph::new();
    let x = Tensor::zeros(&[1, cfg.domain.channels(), cfg.image_size, cfg.image_size]);
    m.forward(&mut g, x, false, &mut SeededRng::seed_from_u64(0)).unwrap().heads.len()
}

#[test]
fn task_presets() {
    assert_eq!(heads(&tiny(Domain::Depth, TaskSet::d1())), 1);
    assert_eq!(heads(&tiny(Domain::Depth, TaskSet::d3())), 2);
    let r4 = tiny(Domain::Rgb, TaskSet::r4());
    assert_eq!(heads(&r4), 3);
    assert!(build(&r4, 0).params.by_name("capsules.class.weight_inv").is_ok());
    assert!(build(&tiny(Domain::Depth, TaskSet::d1()), 0)
        .params
        .by_name("capsules.class.weight_inv")
        .is_err());
    assert_eq!(TaskSet::parse("deca-d2").unwrap(), TaskSet::d2());
    assert_eq!(TaskSet::parse("w,3d,2d").unwrap(), TaskSet::d3());
}

#[test]
fn task_domain_rules() {
    assert!(TaskSet::r4().validate(Domain::Depth).is_err());
    assert!(TaskSet::r4().validate(Domain::Rgb).is_ok());
    assert!(TaskSet::new(&[Task::Pose2d]).unwrap().validate(Domain::Depth).is_err());
    assert!(ModelConfig::desk(Domain::Depth, TaskSet::r4()).validate().is_err());
    assert!(Model::<f32>::build(ModelConfig::desk(Domain::Depth, TaskSet::r4()), &mut SeededRng::seed_from_u64(0)).is_err());
}

#[test]
fn builds_are_deterministic() {
    let cfg = tiny(Domain::Depth, TaskSet::d3());
    let (a, b) = (build(&cfg, 7), build(&cfg, 7));
    assert_eq!(a.params.numel(), b.params.numel());
    assert_eq!(a.parameter_names(), b.parameter_names());
    for ((_, p), (_, q)) in a.params.iter().zip(b.params.iter()) {
        assert_eq!(p.value, q.value);
    }
    assert_ne!(
        build(&cfg, 8).params.iter().next().unwrap().1.value,
        a.params.iter().next().unwrap().1.value
    );
}

#[test]
fn desk_geometry_reaches_the_class_layer() {
    for cfg in [
        ModelConfig::desk(Domain::Depth, TaskSet::d3()),
        ModelConfig::full_resolution(Domain::Depth, TaskSet::d3()),
    ] {
        cfg.validate().unwrap();
        let (grid, types) = cfg.class_input().unwrap();
        assert!(grid >= 1 && types >= 1);
    }
    assert_eq!(ModelConfig::desk(Domain::Depth, TaskSet::d3()).decoder.dropout, 0.1);
    assert_eq!(ModelConfig::full_resolution(Domain::Depth, TaskSet::d3()).decoder.dropout, 0.5);
}

#[test]
fn input_normalization() {
    assert_eq!(normalize_depth(&[5.0, 2.5, 0.0, 9.0], 5.0).unwrap(), vec![1.0, 0.5, 0.0, 1.0]);
    assert!(normalize_depth(&[f32::NAN], 5.0).is_err());
    let rgb = normalize_rgb(&[255, 0, 51, 0, 0, 0], 1, 2).unwrap();
    assert_eq!(rgb, vec![1.0, 0.0, 0.0, 0.0, 0.2, 0.0]);
}

#[test]
fn target_norm_round_trip() {
    let poses = vec![vec![1.0, 2.0, 3.0], vec![3.0, 2.0, 1.0]];
    let n = TargetNorm::fit(&poses).unwrap();
    assert_eq!(n.mean, vec![2.0, 2.0, 2.0]);
    let z = n.normalize(&poses[0]);
    let back = n.denormalize(&z);
    for (a, b) in back.iter().zip(&poses[0]) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn inference_is_dropout_free_and_deterministic() {
    let cfg = tiny(Domain::Depth, TaskSet::d3());
    let m = build(&cfg, 2);
    let mut rng = SeededRng::seed_from_u64(1);
    let x = Tensor::from_fn(&[2, 1, 32, 32], |_| rng.gen_range(0.0..1.0f32));
    let a = m.predict(x.clone()).unwrap();
    let b = m.predict(x).unwrap();
    assert_eq!(a.y3d, b.y3d);
    assert_eq!(a.entities.shape(), [2, 15, 16]);
    assert_eq!(a.y3d.shape(), [2, 15, 3]);
    assert!(a.y2d.unwrap().data().iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn a_few_steps_reduce_the_loss() {
    let cfg = tiny(Domain::Depth, TaskSet::d1());
    let mut m = build(&cfg, 3);
    let mut rng = SeededRng::seed_from_u64(4);
    let x = Tensor::from_fn(&[4, 1, 32, 32], |_| rng.gen_range(0.0..1.0f32));
    let y = Tensor::from_fn(&[4, 45], |_| rng.gen_range(-1.0..1.0f32));
    let targets = Targets {
        y3d: y,
        y2d: None,
        dm: None,
    };
    let mut adam = Adam::new(
        AdamConfig {
            lr: 1e-3,
            ..AdamConfig::default()
        },
        &m.params,
    );
    let mut losses = Vec::new();
    for _ in 0..60 {
        let mut g = Graph::new();
        let out = m.forward(&mut g, x.clone(), false, &mut rng).unwrap();
        let (total, _) = m.loss(&mut g, &out, &targets).unwrap();
        losses.push(g.value(total).item());
        m.params.zero_grad();
        g.backward_into(total, &mut m.params).unwrap();
        adam.step(&mut m.params).unwrap();
    }
    assert!(losses[59] < 0.75 * losses[0], "{losses:?}");
}

#[test]
fn wrong_input_shape_is_rejected() {
    let cfg = tiny(Domain::Depth, TaskSet::d1());
    let m = build(&cfg, 0);
    assert!(m.predict(Tensor::zeros(&[1, 3, 32, 32])).is_err());
    assert!(m.predict(Tensor::zeros(&[0, 1, 32, 32])).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn depth_normalization_is_clamped(v in prop::collection::vec(-10.0f32..20.0, 1..64), far in 0.5f32..10.0) {
        let n = normalize_depth(&v, far).unwrap();
        prop_assert!(n.iter().all(|x| (0.0..=1.0).contains(x)));
    }

    #[test]
    fn task_set_serde_round_trip(mask in 1u8..16) {
        let tasks: Vec<Task> = Task::ALL.iter().enumerate().filter(|(i, _)| mask & (1 << i) != 0).map(|(_, &t)| t).collect();
        let set = TaskSet::new(&tasks).unwrap();
        let json = serde_json::to_string(&set).unwrap();
        let back: TaskSet = serde_json::from_str(&json).unwrap();
        prop_assert_eq!(back, set);
    }
}
