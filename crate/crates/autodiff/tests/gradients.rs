//! Every differentiable primitive against central finite differences, in
//! double precision, over ten seeds of randomized small shapes.

use avscene_autodiff::init::{rng, Rng};
use avscene_autodiff::layers::{BatchNorm, BiGru, Conv2d, Dense, Direction, Gru};
use avscene_autodiff::{GradCheck, Graph, Mode, Padding, ParamSet, Result, Tensor, Var};
use rand::RngExt;

const TOL: f64 = 1e-4;
const SEEDS: u64 = 10;

fn random(shape: &[usize], rng: &mut Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Distinct entries 0.05 apart and never zero, so ReLU and max-style ops
/// have no kinks or ties within the finite-difference step.
fn spread(shape: &[usize], rng: &mut Rng) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut values: Vec<f64> = (0..n).map(|i| (i as f64 - n as f64 / 2.0) * 0.05 + 0.0125).collect();
    rand::seq::SliceRandom::shuffle(values.as_mut_slice(), rng);
    Tensor::new(shape, values).unwrap()
}

/// `sum(y * w)` for a fixed random `w`, so no symmetry cancels gradients.
fn project(g: &mut Graph<f64>, y: Var, seed: u64) -> Result<Var> {
    let w = random(g.shape(y), &mut rng(seed ^ 0xabcdef));
    let w = g.input(w);
    let p = g.mul(y, w)?;
    Ok(g.sum_all(p))
}

fn check<F>(name: &str, params: &ParamSet<f64>, mode: Mode, f: F)
where
    F: Fn(&mut Graph<f64>, &ParamSet<f64>) -> Result<Var>,
{
    let report = GradCheck {
        mode,
        ..GradCheck::default()
    }
    .run(params, f)
    .unwrap();
    assert!(report.checked > 0, "{name}: nothing checked");
    assert!(
        report.max_rel_error < TOL,
        "{name}: max relative error {:.3e} at {:?}",
        report.max_rel_error,
        report.worst
    );
}

fn with_input(shape: &[usize], seed: u64) -> ParamSet<f64> {
    let mut ps = ParamSet::new();
    ps.insert("x", random(shape, &mut rng(seed)), true).unwrap();
    ps
}

#[test]
fn elementwise_ops() {
    for seed in 0..SEEDS {
        let mut r = rng(seed);
        let (a, b) = (r.random_range(1..4), r.random_range(1..5));
        let mut ps = with_input(&[a, b], seed);
        ps.insert("y", random(&[a, b], &mut r), true).unwrap();
        ps.insert("row", random(&[1, b], &mut r), true).unwrap();
        check("add/sub/mul broadcast", &ps, Mode::Infer, |g, ps| {
            let x = g.param("x", ps)?;
            let y = g.param("y", ps)?;
            let row = g.param("row", ps)?;
            let s = g.add(x, row)?;
            let d = g.sub(s, y)?;
            let m = g.mul(d, row)?;
            let m = g.mul(m, x)?;
            project(g, m, seed)
        });
        check("sigmoid/tanh/elu/affine", &ps, Mode::Infer, |g, ps| {
            let x = g.param("x", ps)?;
            let a = g.sigmoid(x);
            let b = g.tanh(x);
            let c = g.elu(x);
            let d = g.affine(c, 1.7, -0.2);
            let s = g.add(a, b)?;
            let s = g.mul(s, d)?;
            project(g, s, seed)
        });
    }
}

#[test]
fn kinked_ops_away_from_kinks() {
    for seed in 0..SEEDS {
        let mut r = rng(seed);
        let shape = [r.random_range(1..3), r.random_range(2..6), r.random_range(2..6), r.random_range(1..3)];
        let mut ps = ParamSet::new();
        ps.insert("x", spread(&shape, &mut r), true).unwrap();
        ps.insert("y", spread(&shape, &mut r).map(|v| v + 0.025), true).unwrap();
        check("relu/maximum", &ps, Mode::Infer, |g, ps| {
            let x = g.param("x", ps)?;
            let y = g.param("y", ps)?;
            let rx = g.relu(x);
            let m = g.maximum(rx, y)?;
            project(g, m, seed)
        });
        check("max_pool2d", &ps, Mode::Infer, |g, ps| {
            let x = g.param("x", ps)?;
            let p = g.max_pool2d(x, (2, 2))?;
            project(g, p, seed)
        });
    }
}

#[test]
fn pooling_and_reductions() {
    for seed in 0..SEEDS {
        let mut r = rng(seed);
        let shape = [r.random_range(1..3), r.random_range(2..7), r.random_range(3..9), r.random_range(1..4)];
        let ps = with_input(&shape, seed);
        check("avg_pool2d", &ps, Mode::Infer, |g, ps| {
            let x = g.param("x", ps)?;
            let p = g.avg_pool2d(x, (2, 1))?;
            project(g, p, seed)
        });
        check("mean_axes", &ps, Mode::Infer, |g, ps| {
            let x = g.param("x", ps)?;
            let p = g.mean_axes(x, &[1, 2])?;
            project(g, p, seed)
        });
        let bins = r.random_range(1..=shape[2]);
        check("adaptive_avg_pool", &ps, Mode::Infer, |g, ps| {
            let x = g.param("x", ps)?;
            let p = g.adaptive_avg_pool(x, 2, bins)?;
            project(g, p, seed)
        });
    }
}

#[test]
fn shape_ops() {
    for seed in 0..SEEDS {
        let mut r = rng(seed);
        let (b, t, d) = (r.random_range(1..3), r.random_range(2..5), r.random_range(2..5));
        let mut ps = with_input(&[b, t, d], seed);
        ps.insert("y", random(&[b, t, d], &mut r), true).unwrap();
        check("concat/slice/select/stack/reshape", &ps, Mode::Infer, |g, ps| {
            let x = g.param("x", ps)?;
            let y = g.param("y", ps)?;
            let c = g.concat(&[x, y], 2)?;
            let s = g.slice(c, 2, 1, d)?;
            let steps: Vec<Var> = (0..t).rev().map(|i| g.select(s, 1, i)).collect::<Result<_>>()?;
            let st = g.stack(&steps, 1)?;
            let flat = g.reshape(st, &[b * t * d])?;
            project(g, flat, seed)
        });
    }
}

#[test]
fn matmul_and_dense() {
    for seed in 0..SEEDS {
        let mut r = rng(seed);
        let (b, t, din, dout) = (r.random_range(1..3), r.random_range(1..4), r.random_range(1..6), r.random_range(1..6));
        let mut ps = with_input(&[b, t, din], seed);
        let dense = Dense::new("dense", din, dout);
        dense.init(&mut ps, &mut r).unwrap();
        ps.set_tensor("dense/bias", random(&[dout], &mut r)).unwrap();
        check("dense", &ps, Mode::Infer, |g, ps| {
            let x = g.param("x", ps)?;
            let y = dense.forward(g, ps, x)?;
            project(g, y, seed)
        });
    }
}

#[test]
fn conv2d_same_and_valid() {
    for seed in 0..SEEDS {
        let mut r = rng(seed);
        let shape = [r.random_range(1..3), r.random_range(3..6), r.random_range(3..6), r.random_range(1..4)];
        let k = if r.random_range(0..2) == 0 { 1 } else { 3 };
        let cout = r.random_range(1..4);
        let mut ps = with_input(&shape, seed);
        let mut conv = Conv2d::new("conv", k, shape[3], cout);
        conv.init(&mut ps, &mut r).unwrap();
        ps.set_tensor("conv/bias", random(&[cout], &mut r)).unwrap();
        for padding in [Padding::Same, Padding::Valid] {
            conv.padding = padding;
            check("conv2d", &ps, Mode::Infer, |g, ps| {
                let x = g.param("x", ps)?;
                let y = conv.forward(g, ps, x)?;
                project(g, y, seed)
            });
        }
    }
}

#[test]
fn batch_norm_both_modes() {
    for seed in 0..SEEDS {
        let mut r = rng(seed);
        let shape = [r.random_range(2..4), r.random_range(1..4), r.random_range(1..4), r.random_range(1..4)];
        let mut ps = with_input(&shape, seed);
        let bn = BatchNorm::new("bn", shape[3]);
        bn.init(&mut ps).unwrap();
        ps.set_tensor("bn/gamma", random(&[shape[3]], &mut r).map(|v| v + 1.5)).unwrap();
        ps.set_tensor("bn/beta", random(&[shape[3]], &mut r)).unwrap();
        ps.set_tensor("bn/moving_mean", random(&[shape[3]], &mut r)).unwrap();
        ps.set_tensor("bn/moving_variance", random(&[shape[3]], &mut r).map(|v| v + 1.5)).unwrap();
        for mode in [Mode::Train, Mode::Infer] {
            check("batch_norm", &ps, mode, |g, ps| {
                let x = g.param("x", ps)?;
                let y = bn.forward(g, ps, x)?;
                project(g, y, seed)
            });
        }
    }
}

#[test]
fn softmax_cross_entropy() {
    for seed in 0..SEEDS {
        let mut r = rng(seed);
        let (rows, classes) = (r.random_range(1..5), r.random_range(2..8));
        let ps = with_input(&[rows, classes], seed);
        let mut target = random(&[rows, classes], &mut r).map(|v| v.abs());
        for row in target.data_mut().chunks_exact_mut(classes) {
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= s);
        }
        check("softmax", &ps, Mode::Infer, |g, ps| {
            let x = g.param("x", ps)?;
            let p = g.softmax(x)?;
            project(g, p, seed)
        });
        check("cross_entropy", &ps, Mode::Infer, |g, ps| {
            let x = g.param("x", ps)?;
            let p = g.softmax(x)?;
            let t = g.input(target.clone());
            g.cross_entropy(p, t)
        });
    }
}

#[test]
fn dropout_with_fixed_mask() {
    for seed in 0..SEEDS {
        let ps = with_input(&[3, 7], seed);
        check("dropout", &ps, Mode::Train, |g, ps| {
            let x = g.param("x", ps)?;
            let t = g.tanh(x);
            let d = g.dropout(t, 0.3)?;
            project(g, d, seed)
        });
    }
}

#[test]
fn gru_both_directions() {
    for seed in 0..SEEDS {
        let mut r = rng(seed);
        let (b, t, din, u) = (r.random_range(1..3), r.random_range(1..5), r.random_range(1..4), r.random_range(1..4));
        let mut ps = with_input(&[b, t, din], seed);
        let gru = Gru::new("gru", din, u);
        gru.init(&mut ps, &mut r).unwrap();
        for bias in ["gru/input_bias", "gru/recurrent_bias"] {
            ps.set_tensor(bias, random(&[3 * u], &mut r)).unwrap();
        }
        for direction in [Direction::Forward, Direction::Backward] {
            check("gru", &ps, Mode::Infer, |g, ps| {
                let x = g.param("x", ps)?;
                let y = gru.forward(g, ps, x, direction)?;
                project(g, y, seed)
            });
        }
    }
}

#[test]
fn bidirectional_gru_with_softmax_head() {
    let mut r = rng(5);
    let mut ps = with_input(&[1, 5, 16], 5);
    let bi = BiGru::new("bi", 16, 4);
    bi.init(&mut ps, &mut r).unwrap();
    let head = Dense::new("head", 8, 3);
    head.init(&mut ps, &mut r).unwrap();
    let target = Tensor::new(&[1, 5, 3], [0.0, 1.0, 0.0].repeat(5)).unwrap();
    check("bigru head", &ps, Mode::Infer, |g, ps| {
        let x = g.param("x", ps)?;
        let h = bi.forward(g, ps, x)?;
        let logits = head.forward(g, ps, h)?;
        let p = g.softmax(logits)?;
        let t = g.input(target.clone());
        g.cross_entropy(p, t)
    });
}
