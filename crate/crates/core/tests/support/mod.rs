//! Oracle checks shared by the core tests and the acceptance report.
#![allow(dead_code)]

use deca_core::capsules::{self, route, CapsuleLayerState, ClassCapsVars, ConvCapsSpec, ConvCapsVars, PrimaryCapsVars, RoutingHyper};
use deca_core::losses::{self, DepthLossNorm, InverseGraphicsMode};
use deca_core::model::Task;
use deca_core::numerics::{gelu_scalar, gradient_check, GraphFn};
use deca_core::{Graph, Result, SeededRng, Tensor, Var};
use rand::{Rng, SeedableRng};

pub const GRAD_TOL: f64 = 1e-3;
pub const GRAD_H: f64 = 1e-6;

pub type Build = Box<GraphFn>;
pub type Maker = fn(&mut SeededRng) -> (Vec<Tensor<f64>>, Build);

pub fn uniform(rng: &mut SeededRng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

/// Largest relative error over `instances` random cases, with the seed that produced it.
pub fn worst_gradient_error(make: Maker, instances: u64) -> Result<(f64, u64)> {
    let mut worst = (0.0, 0);
    for seed in 0..instances {
        let mut rng = SeededRng::seed_from_u64(seed);
        let (inputs, build) = make(&mut rng);
        let r = gradient_check(&inputs, build.as_ref(), GRAD_H, seed + 1)?;
        if !(r.rel_error <= worst.0) {
            worst = (r.rel_error, seed);
        }
    }
    Ok(worst)
}

pub fn gradient_cases() -> Vec<(&'static str, Maker)> {
    vec![
        ("conv2d", conv2d),
        ("instance_norm2d", instance_norm),
        ("gelu", gelu),
        ("linear", linear),
        ("primary_capsules", primary_caps),
        ("conv_capsules", conv_caps),
        ("class_capsules", class_caps),
        ("mse_loss", mse),
        ("masked_l1_loss", masked_l1),
        ("inverse_graphics_loss/identity_deviation", ig_identity),
        ("inverse_graphics_loss/literal", ig_literal),
        ("total_loss", total),
    ]
}

fn conv2d(rng: &mut SeededRng) -> (Vec<Tensor<f64>>, Build) {
    let stride = rng.gen_range(1..=2);
    let padding = rng.gen_range(0..=1);
    let inputs = vec![
        uniform(rng, &[2, 2, 5, 5], -1.0, 1.0),
        uniform(rng, &[3, 2, 3, 3], -1.0, 1.0),
        uniform(rng, &[3], -1.0, 1.0),
    ];
    (inputs, Box::new(move |g, v| g.conv2d(v[0], v[1], Some(v[2]), stride, padding)))
}

fn instance_norm(rng: &mut SeededRng) -> (Vec<Tensor<f64>>, Build) {
    (
        vec![uniform(rng, &[2, 3, 4, 4], -2.0, 2.0)],
        Box::new(|g, v| g.instance_norm2d(v[0], 1e-5)),
    )
}

fn gelu(rng: &mut SeededRng) -> (Vec<Tensor<f64>>, Build) {
    (vec![uniform(rng, &[40], -5.0, 5.0)], Box::new(|g, v| Ok(g.gelu(v[0]))))
}

fn linear(rng: &mut SeededRng) -> (Vec<Tensor<f64>>, Build) {
    let inputs = vec![
        uniform(rng, &[3, 5], -1.0, 1.0),
        uniform(rng, &[4, 5], -1.0, 1.0),
        uniform(rng, &[4], -1.0, 1.0),
    ];
    (inputs, Box::new(|g, v| g.linear(v[0], v[1], Some(v[2]))))
}

/// Scalar mixing two outputs through fixed random weights.
fn mix(g: &mut Graph<f64>, a: Var, b: Var, ra: &Tensor<f64>, rb: &Tensor<f64>) -> Result<Var> {
    let a = g.mul_const(a, ra)?;
    let b = g.mul_const(b, rb)?;
    let (a, b) = (g.sum(a), g.sum(b));
    g.add(a, b)
}

fn primary_caps(rng: &mut SeededRng) -> (Vec<Tensor<f64>>, Build) {
    let types = 2;
    let inputs = vec![
        uniform(rng, &[1, 3, 2, 2], -1.0, 1.0),
        uniform(rng, &[types * 16, 3, 1, 1], -1.0, 1.0),
        uniform(rng, &[types * 16], -0.5, 0.5),
        uniform(rng, &[types, 3, 1, 1], -1.0, 1.0),
        uniform(rng, &[types], -0.5, 0.5),
    ];
    let rp = uniform(rng, &[1, 2, 2, types, 16], -1.0, 1.0);
    let ra = uniform(rng, &[1, 2, 2, types], -1.0, 1.0);
    (
        inputs,
        Box::new(move |g, v| {
            let vars = PrimaryCapsVars {
                pose_w: v[1],
                pose_b: v[2],
                act_w: v[3],
                act_b: v[4],
            };
            let s = capsules::primary_capsules(g, v[0], &vars, types)?;
            mix(g, s.poses, s.activations, &rp, &ra)
        }),
    )
}

pub fn hyper(iterations: usize) -> RoutingHyper {
    RoutingHyper {
        iterations,
        ..RoutingHyper::default()
    }
}

fn conv_caps(rng: &mut SeededRng) -> (Vec<Tensor<f64>>, Build) {
    let (grid, types, out_types) = (3, 2, 2);
    let spec = ConvCapsSpec {
        kernel: 2,
        stride: 1,
        types: out_types,
    };
    let inputs = vec![
        uniform(rng, &[1, grid, grid, types, 16], -1.0, 1.0),
        uniform(rng, &[1, grid, grid, types], 0.1, 0.9),
        uniform(rng, &[4 * types, out_types, 16], -1.0, 1.0),
        uniform(rng, &[out_types], -0.5, 0.5),
        uniform(rng, &[out_types], -0.5, 0.5),
    ];
    let rp = uniform(rng, &[1, 2, 2, out_types, 16], -1.0, 1.0);
    let ra = uniform(rng, &[1, 2, 2, out_types], -1.0, 1.0);
    (
        inputs,
        Box::new(move |g, v| {
            let lower = CapsuleLayerState {
                poses: v[0],
                activations: v[1],
                batch: 1,
                grid_h: grid,
                grid_w: grid,
                types,
            };
            let vars = ConvCapsVars {
                w: v[2],
                beta_a: v[3],
                beta_u: v[4],
            };
            let s = capsules::conv_capsules(g, &lower, &vars, spec, &hyper(2))?;
            mix(g, s.poses, s.activations, &rp, &ra)
        }),
    )
}

fn class_caps(rng: &mut SeededRng) -> (Vec<Tensor<f64>>, Build) {
    let (grid, types, joints) = (2, 2, 3);
    let inputs = vec![
        uniform(rng, &[1, grid, grid, types, 16], -1.0, 1.0),
        uniform(rng, &[1, grid, grid, types], 0.1, 0.9),
        uniform(rng, &[types, joints, 16], -1.0, 1.0),
        uniform(rng, &[joints], -0.5, 0.5),
        uniform(rng, &[joints], -0.5, 0.5),
    ];
    let rp = uniform(rng, &[1, joints, 16], -1.0, 1.0);
    let ra = uniform(rng, &[1, joints], -1.0, 1.0);
    (
        inputs,
        Box::new(move |g, v| {
            let lower = CapsuleLayerState {
                poses: v[0],
                activations: v[1],
                batch: 1,
                grid_h: grid,
                grid_w: grid,
                types,
            };
            let vars = ClassCapsVars {
                w: v[2],
                w_inv: None,
                beta_a: v[3],
                beta_u: v[4],
            };
            let out = capsules::class_capsules(g, &lower, &vars, joints, true, &hyper(2))?;
            mix(g, out.entities, out.activations, &rp, &ra)
        }),
    )
}

fn mse(rng: &mut SeededRng) -> (Vec<Tensor<f64>>, Build) {
    let gt = uniform(rng, &[3, 6], -1.0, 1.0);
    (
        vec![uniform(rng, &[3, 6], -1.0, 1.0)],
        Box::new(move |g, v| losses::mse_loss(g, v[0], &gt)),
    )
}

fn masked_l1(rng: &mut SeededRng) -> (Vec<Tensor<f64>>, Build) {
    let gt = uniform(rng, &[2, 9], 0.0, 0.3);
    // Keep every residual away from the kink at zero.
    let pred = Tensor::from_fn(&[2, 9], |i| {
        let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        gt.data()[i] + sign * rng.gen_range(0.05..0.5)
    });
    let norm = if rng.gen_bool(0.5) {
        DepthLossNorm::PerPixel
    } else {
        DepthLossNorm::PaperNorm
    };
    (vec![pred], Box::new(move |g, v| losses::masked_l1_loss(g, v[0], &gt, 0.1, norm)))
}

fn ig(rng: &mut SeededRng, mode: InverseGraphicsMode) -> (Vec<Tensor<f64>>, Build) {
    let inputs = vec![uniform(rng, &[2, 3, 16], -1.0, 1.0), uniform(rng, &[2, 3, 16], -1.0, 1.0)];
    (inputs, Box::new(move |g, v| losses::inverse_graphics_loss(g, v[0], v[1], mode)))
}

fn ig_identity(rng: &mut SeededRng) -> (Vec<Tensor<f64>>, Build) {
    ig(rng, InverseGraphicsMode::IdentityDeviation)
}

fn ig_literal(rng: &mut SeededRng) -> (Vec<Tensor<f64>>, Build) {
    ig(rng, InverseGraphicsMode::Literal)
}

fn total(rng: &mut SeededRng) -> (Vec<Tensor<f64>>, Build) {
    let inputs = vec![
        uniform(rng, &[], 0.1, 5.0),
        uniform(rng, &[], 0.1, 5.0),
        uniform(rng, &[], -1.0, 2.0),
        uniform(rng, &[], -1.0, 2.0),
    ];
    (
        inputs,
        Box::new(|g, v| {
            losses::total_loss(
                g,
                &[(Task::Pose3d, v[0]), (Task::Pose2d, v[1])],
                &[(Task::Pose3d, v[2]), (Task::Pose2d, v[3])],
            )
        }),
    )
}

/// Largest |GELU − erf GELU| on the 1e-3 grid over [−6, 6], at f64 and f32.
pub fn gelu_grid_error() -> f64 {
    let mut worst = 0.0f64;
    for k in -6000..=6000 {
        let x = k as f64 * 1e-3;
        let exact = 0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2));
        worst = worst.max((gelu_scalar(x) - exact).abs());
        worst = worst.max((gelu_scalar(x as f32) as f64 - exact).abs());
    }
    worst
}

/// Outcome of one randomized routing trial.
#[derive(Debug, Default, Clone, Copy)]
pub struct RoutingTrial {
    /// Largest deviation of a responsibility row sum from 1.
    pub normalization: f64,
    /// Largest output change under a permutation of the lower capsules.
    pub permutation: f64,
    /// Every responsibility is exactly 1 with a single higher capsule.
    pub single_exact: bool,
    /// Largest distance of the collapsed mean from the shared vote.
    pub collapse_mean: f64,
    /// Largest distance of the collapsed variance from the floor.
    pub collapse_var: f64,
}

pub fn routing_problem(rng: &mut SeededRng, n: usize, l: usize, h: usize) -> (Tensor<f64>, Tensor<f64>, Vec<f64>, Vec<f64>) {
    let votes = Tensor::from_fn(&[n, l, h, 16], |_| rng.gen_range(-1.0..1.0));
    let acts = Tensor::from_fn(&[n, l], |_| rng.gen_range(0.05..1.0));
    let ba = (0..h).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let bu = (0..h).map(|_| rng.gen_range(-1.0..1.0)).collect();
    (votes, acts, ba, bu)
}

pub fn routing_trial(seed: u64) -> Result<RoutingTrial> {
    let mut rng = SeededRng::seed_from_u64(seed);
    let l = rng.gen_range(2..8);
    let h = rng.gen_range(1..5);
    let it = rng.gen_range(1..4);
    let mut t = RoutingTrial::default();

    let (v, a, ba, bu) = routing_problem(&mut rng, 1, l, h);
    let s = route(&v, &a, &ba, &bu, &hyper(it))?;
    for row in s.responsibilities.data().chunks(h) {
        t.normalization = t.normalization.max((row.iter().sum::<f64>() - 1.0).abs());
    }
    let mut perm: Vec<usize> = (0..l).collect();
    rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut rng);
    let vp = Tensor::from_fn(&[1, l, h, 16], |i| v.data()[perm[i / (h * 16)] * h * 16 + i % (h * 16)]);
    let ap = Tensor::from_fn(&[1, l], |i| a.data()[perm[i]]);
    let sp = route(&vp, &ap, &ba, &bu, &hyper(it))?;
    let pairs = s
        .means
        .data()
        .iter()
        .zip(sp.means.data())
        .chain(s.out_activations.data().iter().zip(sp.out_activations.data()));
    for (x, y) in pairs {
        t.permutation = t.permutation.max((x - y).abs());
    }
    for i in 0..l {
        for j in 0..h {
            let d = (s.responsibilities.data()[perm[i] * h + j] - sp.responsibilities.data()[i * h + j]).abs();
            t.permutation = t.permutation.max(d);
        }
    }

    let (v1, a1, b1, u1) = routing_problem(&mut rng, 1, l, 1);
    t.single_exact = route(&v1, &a1, &b1, &u1, &hyper(it))?
        .responsibilities
        .data()
        .iter()
        .all(|&r| r == 1.0);

    let vote: Vec<f64> = (0..h * 16).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let vc = Tensor::from_fn(&[1, l, h, 16], |i| vote[i % (h * 16)]);
    let sc = route(&vc, &a, &vec![0.0; h], &vec![0.0; h], &hyper(it))?;
    for (m, want) in sc.means.data().iter().zip(&vote) {
        t.collapse_mean = t.collapse_mean.max((m - want).abs());
    }
    let floor = RoutingHyper::default().var_floor;
    for &var in sc.variances.data() {
        t.collapse_var = t.collapse_var.max((var - floor).abs());
    }
    Ok(t)
}

/// Largest |vote(G·M, W) − G·vote(M, W)| over one random instance.
pub fn vote_equivariance_error(seed: u64) -> Result<f64> {
    let mut rng = SeededRng::seed_from_u64(seed);
    let (n, l, h) = (rng.gen_range(1..3), rng.gen_range(1..4), rng.gen_range(1..4));
    let m = Tensor::<f64>::from_fn(&[n, l, 16], |_| rng.gen_range(-1.0..1.0));
    let w = Tensor::<f64>::from_fn(&[l, h, 16], |_| rng.gen_range(-1.0..1.0));
    let gm: Vec<f64> = (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let left = |a: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; 16];
        for r in 0..4 {
            for c in 0..4 {
                out[r * 4 + c] = (0..4).map(|k| gm[r * 4 + k] * a[k * 4 + c]).sum();
            }
        }
        out
    };
    let transformed = Tensor::new(&[n, l, 16], m.data().chunks(16).flat_map(left).collect())?;
    let mut g = Graph::new();
    let (mv, tv, wv) = (g.input(m), g.input(transformed), g.input(w));
    let v = g.caps_vote(mv, wv)?;
    let vt = g.caps_vote(tv, wv)?;
    let expect: Vec<f64> = g.value(v).data().chunks(16).flat_map(left).collect();
    Ok(g.value(vt)
        .data()
        .iter()
        .zip(&expect)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max))
}
