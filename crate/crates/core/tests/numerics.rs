use deca_core::numerics::{xavier_bound, xavier_uniform, Adam, AdamConfig, ParamStore};
use deca_core::{Graph, SeededRng, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};

fn random(rng: &mut SeededRng, shape: &[usize]) -> Tensor<f32> {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

fn conv_reference(x: &Tensor<f32>, w: &Tensor<f32>, b: &[f32], stride: usize, pad: usize) -> Vec<f32> {
    let [n, c, h, wd] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
    let [k, _, kh, kw] = [w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]];
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (wd + 2 * pad - kw) / stride + 1;
    let mut out = Vec::new();
    for bi in 0..n {
        for ko in 0..k {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b[ko] as f64;
                    for ci in 0..c {
                        for dy in 0..kh {
                            for dx in 0..kw {
                                let y = (oy * stride + dy) as isize - pad as isize;
                                let xx = (ox * stride + dx) as isize - pad as isize;
                                if y < 0 || xx < 0 || y >= h as isize || xx >= wd as isize {
                                    continue;
                                }
                                let xi = ((bi * c + ci) * h + y as usize) * wd + xx as usize;
                                let wi = ((ko * c + ci) * kh + dy) * kw + dx;
                                acc += x.data()[xi] as f64 * w.data()[wi] as f64;
                            }
                        }
                    }
                    out.push(acc as f32);
                }
            }
        }
    }
    out
}

#[test]
fn conv_examples() {
    let mut g = Graph::<f32>::new();
    let x = g.input(Tensor::full(&[1, 1, 3, 3], 1.0));
    let w = g.input(Tensor::full(&[1, 1, 3, 3], 1.0));
    let y = g.conv2d(x, w, None, 1, 0).unwrap();
    assert_eq!(g.value(y).data(), [9.0]);

    let mut rng = SeededRng::seed_from_u64(0);
    let xt = random(&mut rng, &[2, 3, 5, 5]);
    let x = g.input(xt.clone());
    let one = g.input(Tensor::full(&[1, 1, 1, 1], 1.0));
    let x0 = g.input(random(&mut rng, &[2, 1, 5, 5]));
    let y = g.conv2d(x0, one, None, 1, 0).unwrap();
    assert_eq!(g.value(y), g.value(x0));
    let bad = g.input(Tensor::zeros(&[4, 2, 3, 3]));
    assert!(g.conv2d(x, bad, None, 1, 1).is_err());
    let big = g.input(Tensor::zeros(&[4, 3, 9, 9]));
    assert!(g.conv2d(x, big, None, 1, 1).is_err());
}

#[test]
fn conv_matches_loops() {
    let mut rng = SeededRng::seed_from_u64(1);
    for (stride, pad) in [(2, 1), (1, 0), (1, 2), (3, 1)] {
        let x = random(&mut rng, &[2, 3, 8, 8]);
        let w = random(&mut rng, &[4, 3, 3, 3]);
        let b = random(&mut rng, &[4]);
        let want = conv_reference(&x, &w, b.data(), stride, pad);
        let mut g = Graph::new();
        let (xv, wv, bv) = (g.input(x), g.input(w), g.input(b));
        let y = g.conv2d(xv, wv, Some(bv), stride, pad).unwrap();
        assert_eq!(g.value(y).numel(), want.len());
        for (a, e) in g.value(y).data().iter().zip(&want) {
            assert!((a - e).abs() <= 1e-6, "{a} vs {e}");
        }
    }
}

#[test]
fn instance_norm_examples() {
    let mut g = Graph::<f64>::new();
    let x = g.input(Tensor::full(&[1, 1, 2, 2], 5.0));
    let y = g.instance_norm2d(x, 1e-5).unwrap();
    assert!(g.value(y).data().iter().all(|v| v.abs() <= 1e-6));
    let x = g.input(Tensor::new(&[1, 1, 1, 2], vec![-1.0, 1.0]).unwrap());
    let y = g.instance_norm2d(x, 1e-12).unwrap();
    for (a, e) in g.value(y).data().iter().zip([-1.0, 1.0]) {
        assert!((a - e).abs() <= 1e-9);
    }
    let mut rng = SeededRng::seed_from_u64(2);
    let x = g.input(Tensor::from_fn(&[2, 3, 4, 4], |_| rng.gen_range(-3.0..5.0)));
    let y = g.instance_norm2d(x, 1e-5).unwrap();
    for plane in g.value(y).data().chunks(16) {
        let mean = plane.iter().sum::<f64>() / 16.0;
        let var = plane.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 16.0;
        assert!(mean.abs() <= 1e-6);
        assert!((var - 1.0).abs() <= 1e-3);
    }
}

#[test]
fn gelu_examples() {
    use deca_core::numerics::gelu_scalar;
    assert_eq!(gelu_scalar(0.0f64), 0.0);
    assert!((gelu_scalar(10.0f64) - 10.0).abs() <= 1e-4);
    assert!((gelu_scalar(1.0f64) - 0.8412).abs() <= 1e-4);
}

#[test]
fn linear_examples() {
    let mut rng = SeededRng::seed_from_u64(3);
    let x = random(&mut rng, &[2, 3]);
    let mut g = Graph::new();
    let xv = g.input(x.clone());
    let eye = g.input(Tensor::from_fn(&[3, 3], |i| if i % 4 == 0 { 1.0 } else { 0.0 }));
    let y = g.linear(xv, eye, None).unwrap();
    assert_eq!(g.value(y), &x);
    let zero = g.input(Tensor::zeros(&[4, 3]));
    let bias = g.input(Tensor::new(&[4], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    let y = g.linear(xv, zero, Some(bias)).unwrap();
    assert_eq!(g.value(y).data(), [1.0, 2.0, 3.0, 4.0, 1.0, 2.0, 3.0, 4.0]);

    let w = random(&mut rng, &[4, 3]);
    let b = random(&mut rng, &[4]);
    let (wv, bv) = (g.input(w.clone()), g.input(b.clone()));
    let y = g.linear(xv, wv, Some(bv)).unwrap();
    for r in 0..2 {
        for m in 0..4 {
            let want: f32 = b.data()[m] + (0..3).map(|k| x.data()[r * 3 + k] * w.data()[m * 3 + k]).sum::<f32>();
            assert!((g.value(y).data()[r * 4 + m] - want).abs() <= 1e-6);
        }
    }
    let bad = g.input(Tensor::zeros(&[4, 2]));
    assert!(g.linear(xv, bad, None).is_err());
}

#[test]
fn dropout_examples() {
    let mut rng = SeededRng::seed_from_u64(4);
    let mut g = Graph::<f64>::new();
    let x = g.input(Tensor::from_fn(&[100], |i| i as f64));
    let same = g.dropout(x, 0.0, true, &mut rng).unwrap();
    assert_eq!(g.value(same), g.value(x));
    let off = g.dropout(x, 0.9, false, &mut rng).unwrap();
    assert_eq!(g.value(off), g.value(x));
    assert!(g.dropout(x, 1.0, true, &mut rng).is_err());
    assert!(g.dropout(x, -0.1, true, &mut rng).is_err());
    let ones = g.input(Tensor::full(&[100_000], 1.0));
    let y = g.dropout(ones, 0.5, true, &mut rng).unwrap();
    let data = g.value(y).data();
    assert!(data.iter().all(|&v| v == 0.0 || v == 2.0));
    let mean = data.iter().sum::<f64>() / data.len() as f64;
    assert!((mean - 1.0).abs() <= 0.02);
}

#[test]
fn backward_examples() {
    let mut g = Graph::<f64>::new();
    let w = g.leaf(Tensor::full(&[5], 3.0));
    let s = g.sum(w);
    assert_eq!(g.backward(s).unwrap().get(w).unwrap().data(), [1.0; 5]);
    let sq = g.square(w);
    let s2 = g.sum(sq);
    assert_eq!(g.backward(s2).unwrap().get(w).unwrap().data(), [6.0; 5]);
    assert!(g.backward(sq).is_err());

    let mut store = ParamStore::<f64>::new();
    let id = store.add("w", Tensor::full(&[2], 3.0)).unwrap();
    for _ in 0..2 {
        let mut g = Graph::new();
        let wv = g.param(&store, id);
        let l = g.sum(wv);
        g.backward_into(l, &mut store).unwrap();
    }
    assert_eq!(store.get(id).grad.as_ref().unwrap().data(), [2.0, 2.0]);
}

fn scalar_store(v: f64) -> ParamStore<f64> {
    let mut s = ParamStore::new();
    s.add("w", Tensor::scalar(v)).unwrap();
    s
}

fn set_grad(s: &mut ParamStore<f64>, g: f64) {
    s.iter_mut().next().unwrap().grad = Some(Tensor::scalar(g));
}

#[test]
fn adam_examples() {
    let cfg = AdamConfig {
        lr: 1e-2,
        ..AdamConfig::default()
    };
    let mut s = scalar_store(1.5);
    let mut adam = Adam::new(cfg, &s);
    assert!(adam.step(&mut s).is_err());
    set_grad(&mut s, 0.0);
    adam.step(&mut s).unwrap();
    assert_eq!(s.iter().next().unwrap().1.value.item(), 1.5);

    for g in [-4.0, 0.3, 25.0] {
        let mut s = scalar_store(0.0);
        let mut adam = Adam::new(cfg, &s);
        set_grad(&mut s, g);
        adam.step(&mut s).unwrap();
        let w = s.iter().next().unwrap().1.value.item();
        assert!((w.abs() - 1e-2).abs() <= 1e-6, "{w}");
        assert_eq!(w.signum(), -g.signum());
    }

    let mut s = scalar_store(1.0);
    let mut adam = Adam::new(cfg, &s);
    let mut trace = Vec::new();
    for _ in 0..1000 {
        let w = s.iter().next().unwrap().1.value.item();
        trace.push(w.abs());
        set_grad(&mut s, 2.0 * w);
        adam.step(&mut s).unwrap();
    }
    assert!(trace[999] < 0.1);
    assert!(trace[..50].windows(2).all(|p| p[1] < p[0]));
}

#[test]
fn xavier_examples() {
    let mut rng = SeededRng::seed_from_u64(5);
    let mut w = Tensor::<f64>::zeros(&[100, 100]);
    xavier_uniform(&mut w, &mut rng).unwrap();
    let bound = (6.0f64 / 200.0).sqrt();
    assert_eq!(xavier_bound(&[100, 100]).unwrap(), bound);
    assert!(w.data().iter().all(|v| v.abs() <= bound));
    let var = w.data().iter().map(|v| v * v).sum::<f64>() / 10_000.0;
    assert!((var / (2.0 / 200.0) - 1.0).abs() <= 0.2);
    let mut again = Tensor::<f64>::zeros(&[100, 100]);
    xavier_uniform(&mut again, &mut SeededRng::seed_from_u64(5)).unwrap();
    assert_eq!(again, w);
    assert!(xavier_uniform(&mut Tensor::<f64>::zeros(&[10]), &mut rng).is_err());
}

#[test]
fn tensor_shape_contract() {
    assert!(Tensor::<f32>::new(&[2, 3], vec![0.0; 5]).is_err());
    let t = Tensor::<f32>::new(&[2, 3], vec![0.0; 6]).unwrap();
    assert!(t.clone().reshape(&[3, 2]).is_ok());
    assert!(t.reshape(&[4, 2]).is_err());
}

proptest! {
    #[test]
    fn instance_norm_centers_every_plane(seed in any::<u64>(), h in 1usize..6, w in 2usize..6) {
        let mut rng = SeededRng::seed_from_u64(seed);
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::from_fn(&[2, 2, h, w], |_| rng.gen_range(-10.0..10.0)));
        let y = g.instance_norm2d(x, 1e-5).unwrap();
        for plane in g.value(y).data().chunks(h * w) {
            prop_assert!((plane.iter().sum::<f64>() / (h * w) as f64).abs() <= 1e-6);
        }
    }

    #[test]
    fn forward_is_deterministic(seed in any::<u64>()) {
        let mut rng = SeededRng::seed_from_u64(seed);
        let x = random(&mut rng, &[1, 2, 6, 6]);
        let w = random(&mut rng, &[3, 2, 3, 3]);
        let run = || {
            let mut g = Graph::new();
            let (xv, wv) = (g.input(x.clone()), g.input(w.clone()));
            let y = g.conv2d(xv, wv, None, 2, 1).unwrap();
            let y = g.gelu(y);
            g.value(y).clone()
        };
        prop_assert_eq!(run(), run());
    }
}
