//! Finite-difference gradient suite in double precision: every layer
//! primitive, a residual scSE block, the recurrent heads and the fusion
//! objective, each over randomized small shapes per seed.

use avscene_autodiff::init::{rng, Rng};
use avscene_autodiff::layers::{BatchNorm, BiGru, Conv2d, Dense, Direction, Gru};
use avscene_autodiff::{GradCheck, GradCheckReport, Graph, Mode, Padding, ParamSet, Tensor, Var};
use rand::RngExt;
use serde::Serialize;

use crate::audio_net::{ConvBlock, ScseCombine};
use crate::error::Result;
use crate::fusion::{FusionConfig, FusionHead};
use crate::visual_net::{BackboneKind, VisualNet, VisualNetConfig};

/// Largest relative error a check may report.
pub const TOLERANCE: f64 = 1e-4;
pub const DEFAULT_SEEDS: u64 = 10;

type EngineResult<T> = avscene_autodiff::Result<T>;
type CheckFn = fn(u64) -> Result<GradCheckReport>;

fn model_error(e: crate::Error) -> avscene_autodiff::Error {
    avscene_autodiff::Error::InvalidArgument {
        op: "model",
        message: e.to_string(),
    }
}

fn random(shape: &[usize], r: &mut Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| r.random_range(-1.0..1.0))
}

/// Distinct values 0.05 apart that avoid zero, keeping ReLU and max ops
/// away from kinks and ties within the step.
fn spread(shape: &[usize], r: &mut Rng) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut values: Vec<f64> = (0..n).map(|i| (i as f64 - n as f64 / 2.0) * 0.05 + 0.0125).collect();
    rand::seq::SliceRandom::shuffle(values.as_mut_slice(), r);
    Tensor::new(shape, values).expect("shape")
}

/// `sum(y * w)` with a fixed random `w`.
fn project(g: &mut Graph<f64>, y: Var, seed: u64) -> EngineResult<Var> {
    let w = random(g.shape(y), &mut rng(seed ^ 0xabcdef));
    let w = g.input(w);
    let p = g.mul(y, w)?;
    Ok(g.sum_all(p))
}

fn run<F>(ps: &ParamSet<f64>, mode: Mode, seed: u64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &ParamSet<f64>) -> EngineResult<Var>,
{
    let check = GradCheck {
        mode,
        seed,
        ..GradCheck::default()
    };
    Ok(check.run(ps, f)?)
}

fn with_input(shape: &[usize], r: &mut Rng) -> ParamSet<f64> {
    let mut ps = ParamSet::new();
    ps.insert("x", random(shape, r), true).expect("fresh set");
    ps
}

fn elementwise(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let (a, b) = (r.random_range(1..4), r.random_range(1..5));
    let mut ps = with_input(&[a, b], &mut r);
    ps.insert("y", random(&[a, b], &mut r), true)?;
    ps.insert("row", random(&[1, b], &mut r), true)?;
    run(&ps, Mode::Infer, seed, |g, ps| {
        let x = g.param("x", ps)?;
        let y = g.param("y", ps)?;
        let row = g.param("row", ps)?;
        let s = g.add(x, row)?;
        let d = g.sub(s, y)?;
        let m = g.mul(d, row)?;
        let e = g.elu(m);
        let t = g.tanh(x);
        let sg = g.sigmoid(y);
        let af = g.affine(sg, 1.7, -0.2);
        let u = g.add(e, t)?;
        let u = g.mul(u, af)?;
        project(g, u, seed)
    })
}

fn relu_maximum(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let shape = [r.random_range(1..4), r.random_range(2..6)];
    let mut ps = ParamSet::new();
    ps.insert("x", spread(&shape, &mut r), true)?;
    ps.insert("y", spread(&shape, &mut r).map(|v| v + 0.025), true)?;
    run(&ps, Mode::Infer, seed, |g, ps| {
        let x = g.param("x", ps)?;
        let y = g.param("y", ps)?;
        let rx = g.relu(x);
        let m = g.maximum(rx, y)?;
        project(g, m, seed)
    })
}

fn pool_shape(r: &mut Rng) -> [usize; 4] {
    [r.random_range(1..3), r.random_range(2..7), r.random_range(3..9), r.random_range(1..4)]
}

fn max_pool(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let shape = pool_shape(&mut r);
    let mut ps = ParamSet::new();
    ps.insert("x", spread(&shape, &mut r), true)?;
    run(&ps, Mode::Infer, seed, |g, ps| {
        let x = g.param("x", ps)?;
        let p = g.max_pool2d(x, (2, 2))?;
        project(g, p, seed)
    })
}

fn avg_pool(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let shape = pool_shape(&mut r);
    let ps = with_input(&shape, &mut r);
    run(&ps, Mode::Infer, seed, |g, ps| {
        let x = g.param("x", ps)?;
        let p = g.avg_pool2d(x, (2, 1))?;
        project(g, p, seed)
    })
}

fn mean_axes(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let shape = pool_shape(&mut r);
    let ps = with_input(&shape, &mut r);
    run(&ps, Mode::Infer, seed, |g, ps| {
        let x = g.param("x", ps)?;
        let p = g.mean_axes(x, &[1, 2])?;
        project(g, p, seed)
    })
}

fn adaptive_pool(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let shape = pool_shape(&mut r);
    let bins = r.random_range(1..=shape[2]);
    let ps = with_input(&shape, &mut r);
    run(&ps, Mode::Infer, seed, |g, ps| {
        let x = g.param("x", ps)?;
        let p = g.adaptive_avg_pool(x, 2, bins)?;
        project(g, p, seed)
    })
}

fn shape_ops(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let (b, t, d) = (r.random_range(1..3), r.random_range(2..5), r.random_range(2..5));
    let mut ps = with_input(&[b, t, d], &mut r);
    ps.insert("y", random(&[b, t, d], &mut r), true)?;
    run(&ps, Mode::Infer, seed, |g, ps| {
        let x = g.param("x", ps)?;
        let y = g.param("y", ps)?;
        let c = g.concat(&[x, y], 2)?;
        let s = g.slice(c, 2, 1, d)?;
        let steps: Vec<Var> = (0..t).rev().map(|i| g.select(s, 1, i)).collect::<EngineResult<_>>()?;
        let st = g.stack(&steps, 1)?;
        let flat = g.reshape(st, &[b * t * d])?;
        project(g, flat, seed)
    })
}

fn dense(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let (b, t, din, dout) = (r.random_range(1..3), r.random_range(1..4), r.random_range(1..6), r.random_range(1..6));
    let mut ps = with_input(&[b, t, din], &mut r);
    let layer = Dense::new("dense", din, dout);
    layer.init(&mut ps, &mut r)?;
    ps.set_tensor("dense/bias", random(&[dout], &mut r))?;
    run(&ps, Mode::Infer, seed, |g, ps| {
        let x = g.param("x", ps)?;
        let y = layer.forward(g, ps, x)?;
        project(g, y, seed)
    })
}

fn conv(seed: u64, padding: Padding) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let shape = [r.random_range(1..3), r.random_range(3..6), r.random_range(3..6), r.random_range(1..4)];
    let k = if r.random_range(0..2) == 0 { 1 } else { 3 };
    let cout = r.random_range(1..4);
    let mut ps = with_input(&shape, &mut r);
    let mut layer = Conv2d::new("conv", k, shape[3], cout);
    layer.padding = padding;
    layer.init(&mut ps, &mut r)?;
    ps.set_tensor("conv/bias", random(&[cout], &mut r))?;
    run(&ps, Mode::Infer, seed, |g, ps| {
        let x = g.param("x", ps)?;
        let y = layer.forward(g, ps, x)?;
        project(g, y, seed)
    })
}

fn batch_norm(seed: u64, mode: Mode) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let shape = [r.random_range(2..4), r.random_range(1..4), r.random_range(1..4), r.random_range(1..4)];
    let c = shape[3];
    let mut ps = with_input(&shape, &mut r);
    let bn = BatchNorm::new("bn", c);
    bn.init(&mut ps)?;
    ps.set_tensor("bn/gamma", random(&[c], &mut r).map(|v| v + 1.5))?;
    ps.set_tensor("bn/beta", random(&[c], &mut r))?;
    ps.set_tensor("bn/moving_mean", random(&[c], &mut r))?;
    ps.set_tensor("bn/moving_variance", random(&[c], &mut r).map(|v| v + 1.5))?;
    run(&ps, mode, seed, |g, ps| {
        let x = g.param("x", ps)?;
        let y = bn.forward(g, ps, x)?;
        project(g, y, seed)
    })
}

fn softmax_cross_entropy(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let (rows, classes) = (r.random_range(1..5), r.random_range(2..8));
    let ps = with_input(&[rows, classes], &mut r);
    let mut target = random(&[rows, classes], &mut r).map(|v| v.abs() + 0.01);
    for row in target.data_mut().chunks_exact_mut(classes) {
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= s);
    }
    run(&ps, Mode::Infer, seed, |g, ps| {
        let x = g.param("x", ps)?;
        let p = g.softmax(x)?;
        let t = g.input(target.clone());
        let ce = g.cross_entropy(p, t)?;
        let side = project(g, p, seed)?;
        g.add(ce, side)
    })
}

fn dropout(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let ps = with_input(&[3, 7], &mut r);
    run(&ps, Mode::Train, seed, |g, ps| {
        let x = g.param("x", ps)?;
        let t = g.tanh(x);
        let d = g.dropout(t, 0.3)?;
        project(g, d, seed)
    })
}

fn gru(seed: u64, direction: Direction) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let (b, t, din, u) = (r.random_range(1..3), r.random_range(1..5), r.random_range(1..4), r.random_range(1..4));
    let mut ps = with_input(&[b, t, din], &mut r);
    let layer = Gru::new("gru", din, u);
    layer.init(&mut ps, &mut r)?;
    for bias in ["gru/input_bias", "gru/recurrent_bias"] {
        ps.set_tensor(bias, random(&[3 * u], &mut r))?;
    }
    run(&ps, Mode::Infer, seed, |g, ps| {
        let x = g.param("x", ps)?;
        let y = layer.forward(g, ps, x, direction)?;
        project(g, y, seed)
    })
}

fn bigru(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let (b, t, din, u) = (r.random_range(1..3), r.random_range(2..5), r.random_range(1..5), r.random_range(1..4));
    let mut ps = with_input(&[b, t, din], &mut r);
    let layer = BiGru::new("bigru", din, u);
    layer.init(&mut ps, &mut r)?;
    run(&ps, Mode::Infer, seed, |g, ps| {
        let x = g.param("x", ps)?;
        let y = layer.forward(g, ps, x)?;
        project(g, y, seed)
    })
}

/// One residual block with scSE, batch norm in training mode.
fn conv_block(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let shape = [2, r.random_range(2..5), r.random_range(2..6), r.random_range(1..3)];
    let cout = 2 * r.random_range(1..3);
    let combine = if seed % 2 == 0 { ScseCombine::Max } else { ScseCombine::Add };
    let block = ConvBlock::new("block", shape[3], cout, 2, combine);
    let mut ps = with_input(&shape, &mut r);
    block.init(&mut ps, &mut r)?;
    run(&ps, Mode::Train, seed, |g, ps| {
        let x = g.param("x", ps)?;
        let y = block.forward(g, ps, x)?;
        project(g, y, seed)
    })
}

/// The visual recurrent head on fixed features, with a cross-entropy loss.
fn visual_head(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let classes = r.random_range(2..5);
    let net = VisualNet::new(VisualNetConfig {
        backbone: BackboneKind::Tiny,
        gru_units: r.random_range(1..3),
        n_classes: classes,
    })?;
    let mut ps = ParamSet::new();
    net.init_head(&mut ps, &mut r)?;
    let features = random(&[2, r.random_range(2..5), crate::visual_net::FEATURE_DIM], &mut r);
    let target = Tensor::from_fn(&[2, classes], |i| if i % classes == (i / classes) % classes { 1.0 } else { 0.0 });
    run(&ps, Mode::Infer, seed, |g, ps| {
        let x = g.input(features.clone());
        let out = net
            .forward_features(g, ps, x)
            .map_err(model_error)?;
        let t = g.input(target.clone());
        g.cross_entropy(out.probs, t)
    })
}

/// Early and late fusion heads at small widths, trained on the sum of their
/// cross-entropies, with gradients reaching the audio maps and the
/// per-modality probabilities.
fn fusion_stage(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let config = FusionConfig {
        gru_units: r.random_range(1..4),
        audio_features: r.random_range(2..5),
        visual_features: r.random_range(2..6),
        steps: r.random_range(2..4),
        n_classes: r.random_range(2..5),
    };
    let head = FusionHead::new(config.clone())?;
    let (b, c) = (2, config.n_classes);
    let t_pooled = config.steps + r.random_range(0..4);
    let mut ps = ParamSet::new();
    head.init(&mut ps, &mut r)?;
    ps.insert("maps", random(&[b, 2, t_pooled, config.audio_features], &mut r), true)?;
    ps.insert("visual", random(&[b, config.steps, config.visual_features], &mut r), true)?;
    ps.insert("audio_logits", random(&[b, c], &mut r), true)?;
    ps.insert("visual_logits", random(&[b, c], &mut r), true)?;
    let target = Tensor::from_fn(&[b, c], |i| if i % c == (i / c + 1) % c { 1.0 } else { 0.0 });
    run(&ps, Mode::Infer, seed, |g, ps| {
        let maps = g.param("maps", ps)?;
        let visual = g.param("visual", ps)?;
        let la = g.param("audio_logits", ps)?;
        let lv = g.param("visual_logits", ps)?;
        let pa = g.softmax(la)?;
        let pv = g.softmax(lv)?;
        let out = head
            .forward(g, ps, maps, visual, pa, pv)
            .map_err(model_error)?;
        let t = g.input(target.clone());
        let early = g.cross_entropy(out.early, t)?;
        let late = g.cross_entropy(out.late, t)?;
        g.add(early, late)
    })
}

/// Names and implementations of every check, in suite order.
pub fn checks() -> Vec<(&'static str, CheckFn)> {
    vec![
        ("elementwise", elementwise),
        ("relu_maximum", relu_maximum),
        ("max_pool2d", max_pool),
        ("avg_pool2d", avg_pool),
        ("mean_axes", mean_axes),
        ("adaptive_avg_pool", adaptive_pool),
        ("shape_ops", shape_ops),
        ("dense", dense),
        ("conv2d_same", |s| conv(s, Padding::Same)),
        ("conv2d_valid", |s| conv(s, Padding::Valid)),
        ("batch_norm_train", |s| batch_norm(s, Mode::Train)),
        ("batch_norm_infer", |s| batch_norm(s, Mode::Infer)),
        ("softmax_cross_entropy", softmax_cross_entropy),
        ("dropout", dropout),
        ("gru_forward", |s| gru(s, Direction::Forward)),
        ("gru_backward", |s| gru(s, Direction::Backward)),
        ("bigru", bigru),
        ("conv_scse_block", conv_block),
        ("visual_head", visual_head),
        ("fusion_stage", fusion_stage),
    ]
}

#[derive(Clone, Debug, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub seed: u64,
    pub max_rel_error: f64,
    pub checked: usize,
    /// Parameter path and flat index of the worst scalar.
    pub worst: Option<(String, usize)>,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct SuiteReport {
    pub results: Vec<CheckResult>,
}

impl SuiteReport {
    pub fn max_rel_error(&self) -> f64 {
        self.results.iter().map(|r| r.max_rel_error).fold(0.0, f64::max)
    }

    pub fn failures(&self, tolerance: f64) -> Vec<&CheckResult> {
        self.results
            .iter()
            .filter(|r| !(r.max_rel_error < tolerance) || r.checked == 0)
            .collect()
    }

    pub fn passed(&self, tolerance: f64) -> bool {
        !self.results.is_empty() && self.failures(tolerance).is_empty()
    }
}

/// Runs every check whose name contains `filter` for seeds `0..seeds`.
pub fn run_suite(seeds: u64, filter: Option<&str>) -> Result<SuiteReport> {
    let mut report = SuiteReport::default();
    for (name, check) in checks() {
        if filter.is_some_and(|f| !name.contains(f)) {
            continue;
        }
        for seed in 0..seeds {
            let r = check(seed)?;
            report.results.push(CheckResult {
                name,
                seed,
                max_rel_error: r.max_rel_error,
                checked: r.checked,
                worst: r.worst,
            });
        }
    }
    Ok(report)
}
