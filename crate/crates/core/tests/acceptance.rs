//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so the lines always reach the output.
//! Pass criterion names as arguments to run a subset.

use std::process::ExitCode;
use std::time::Instant;

use avscene_autodiff::ParamSet;
use avscene_core::budget::{ParamBudget, TINY_BACKBONE_PARAMS};
use avscene_core::data::{ExampleSource, Split, SyntheticDataset, SyntheticSpec};
use avscene_core::eval::evaluate;
use avscene_core::frontend::{AudioClip, FilterbankKind, Frontend, SAMPLE_RATE};
use avscene_core::fusion::{AvModel, Head, ModelConfig};
use avscene_core::gradcheck::{checks, run_suite};
use avscene_core::train::mixup::{mixup_batch, one_hot, MixPlan};
use avscene_core::train::schedule::simulate;
use avscene_core::train::{prepare_params, FeatureCache, Stage, TrainConfig, Trainer};
use avscene_core::visual_net::{BackboneKind, VGG16_LAYERS};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok { Ok(detail) } else { Err(detail) }
}

fn fail(e: impl std::fmt::Display) -> String {
    e.to_string()
}

// ---- parameter budget ----

fn conv(k: usize, cin: usize, cout: usize) -> usize {
    k * k * cin * cout + cout
}

fn dense(i: usize, o: usize) -> usize {
    i * o + o
}

fn gru(input: usize, units: usize) -> usize {
    3 * (input * units + units * units + 2 * units)
}

/// Audio network counted from the architecture description: per block two
/// 3x3 convolutions with batch norm, a 1x1 projection shortcut with batch
/// norm, and scSE (two dense layers and a 1x1 convolution).
fn audio_oracle() -> (usize, usize) {
    let (mut trainable, mut stats, mut cin) = (0, 0, 3);
    for c in [32, 64, 128] {
        trainable += conv(3, cin, c) + conv(3, c, c) + conv(1, cin, c) + 3 * 2 * c;
        stats += 3 * 2 * c;
        trainable += dense(c, c / 2) + dense(c / 2, c) + conv(1, c, 1);
        cin = c;
    }
    (trainable + dense(cin, 10), stats)
}

fn budget() -> Outcome {
    let tiny = ParamBudget::for_config(&ModelConfig::default()).map_err(fail)?;
    let mut vgg_config = ModelConfig::default();
    vgg_config.visual.backbone = BackboneKind::Vgg16;
    let vgg = ParamBudget::for_config(&vgg_config).map_err(fail)?;
    let row = |b: &ParamBudget, m: &str| b.row(m).map(|r| (r.total, r.trainable)).ok_or(format!("no `{m}` row"));

    let (audio_oracle, audio_stats) = audio_oracle();
    let visual_oracle = 2 * gru(512, 32) + dense(64, 10);
    let fusion_oracle = 2 * gru(512 + 128, 64) + dense(128, 10) + dense(30, 10);
    let vgg_oracle: usize = VGG16_LAYERS.iter().map(|&(_, i, o)| conv(3, i, o)).sum();

    let audio = row(&tiny, "audio")?;
    let visual = row(&tiny, "visual head")?;
    let fusion = row(&tiny, "fusion")?;
    let backbone = row(&vgg, "visual backbone")?;
    let total = row(&vgg, "total")?;
    let tiny_backbone = row(&tiny, "visual backbone")?;
    let expected_total = audio_oracle + audio_stats + vgg_oracle + visual_oracle + fusion_oracle;

    let audio_ok = audio.1 == audio_oracle && (audio.1 as f64 - 323_000.0).abs() <= 0.02 * 323_000.0;
    let visual_ok = visual.1 == 105_482 && visual_oracle == 105_482;
    let fusion_ok = fusion.1 == 272_704 && fusion_oracle == 272_704;
    let total_ok = backbone == (vgg_oracle, 0)
        && total.0 == expected_total
        && (15_000_000..=15_500_000).contains(&total.0)
        && tiny_backbone == (TINY_BACKBONE_PARAMS, 0);
    check(
        audio_ok && visual_ok && fusion_ok && total_ok,
        format!(
            "audio trainable {} (oracle {audio_oracle}, 323k +/- 2%), visual {} (105,482), fusion {} (272,704), \
             vgg16 total {} (oracle {expected_total}), tiny backbone {} ({TINY_BACKBONE_PARAMS})",
            audio.1, visual.1, fusion.1, total.0, tiny_backbone.0
        ),
    )
}

// ---- gradient suite ----

fn gradients() -> Outcome {
    let report = run_suite(10, None).map_err(fail)?;
    let names = checks().len();
    let complete = report.results.len() == names * 10;
    let worst = report.max_rel_error();
    let failures = report.failures(1e-4);
    check(
        complete && failures.is_empty(),
        format!(
            "{} checks x 10 seeds, max relative error {worst:.2e} (< 1e-4), {} failures",
            names,
            failures.len()
        ),
    )
}

// ---- front-end shape law ----

fn noise(len: usize, seed: u64) -> Vec<f32> {
    let mut state = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) | 1;
    (0..len)
        .map(|_| {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 40) as f32 / (1u64 << 24) as f32 - 0.5
        })
        .collect()
}

fn shape_law() -> Outcome {
    let sr = SAMPLE_RATE as usize;
    let mut details = Vec::new();
    let mut ok = true;
    for kind in [FilterbankKind::Gammatone, FilterbankKind::Mel] {
        for (secs, frames) in [(1, 50), (10, 500)] {
            let clip = AudioClip::new(noise(secs * sr, 1), noise(secs * sr, 2), SAMPLE_RATE).map_err(fail)?;
            let a = Frontend::new(kind).make_rep(&clip).map_err(fail)?;
            let b = Frontend::new(kind).make_rep(&clip).map_err(fail)?;
            let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            let same = bits(a.values()) == bits(b.values());
            ok &= a.shape() == [64, frames, 3] && same;
            details.push(format!("{kind:?} {secs}s {:?}{}", a.shape(), if same { "" } else { " nondeterministic" }));
        }
    }
    check(ok, format!("{}; byte-identical reruns", details.join(", ")))
}

// ---- synthetic end-to-end ----

const E2E_PER_CLASS: usize = 200;
const E2E_SEED: u64 = 7;
const E2E_EPOCHS: [(Stage, usize); 3] = [(Stage::Audio, 8), (Stage::Visual, 60), (Stage::Fusion, 4)];

fn end_to_end() -> Outcome {
    let started = Instant::now();
    let ds = SyntheticDataset::new(SyntheticSpec::new(E2E_PER_CLASS, E2E_SEED)).map_err(fail)?;
    let frontend = Frontend::new(FilterbankKind::Gammatone);
    let model = AvModel::new(ModelConfig::default()).map_err(fail)?;
    let mut ps = prepare_params(&model, ParamSet::new(), Stage::Visual, 1).map_err(fail)?;
    let all: Vec<usize> = (0..ds.len()).collect();
    let cache = FeatureCache::build(&model.visual.backbone, &ps, &ds, &all).map_err(fail)?;
    let trainer = Trainer::new(&model, &frontend, &ds, Some(&cache));
    for (stage, epochs) in E2E_EPOCHS {
        let config = TrainConfig {
            max_epochs: epochs,
            seed: 3,
            ..TrainConfig::for_stage(stage)
        };
        ps = trainer.run(ps, &config).map_err(fail)?.params;
    }
    let report = evaluate(&model, &ps, &frontend, &ds, Split::Val, Some(&cache), &[]).map_err(fail)?;
    let acc = |h: Head| report.accuracy(h).unwrap_or(f64::NAN);
    let spec = ds.spec();
    let audio_sep = report.accuracy_on(Head::Audio, &spec.audio_separable()).unwrap_or(f64::NAN);
    let visual_sep = report.accuracy_on(Head::Visual, &spec.visually_separable()).unwrap_or(f64::NAN);
    let (audio, visual, early, late) = (acc(Head::Audio), acc(Head::Visual), acc(Head::Early), acc(Head::Late));
    check(
        audio_sep >= 0.90 && visual_sep >= 0.90 && late >= audio.max(visual) && late >= early - 0.02,
        format!(
            "audio on audio-separable {audio_sep:.3} (>= 0.90), visual on visually-separable {visual_sep:.3} (>= 0.90), \
             overall audio {audio:.3} visual {visual:.3} early {early:.3} late {late:.3} \
             (late >= max(audio, visual), late >= early - 0.02), {} val examples, {:.0} s",
            report.n_examples,
            started.elapsed().as_secs_f64()
        ),
    )
}

// ---- scheduler ----

/// Counter simulation: epochs since the last strict improvement drive both
/// the halving (every `pp` stale epochs) and the stop (after `sp`).
fn reference(metrics: &[f64], pp: usize, sp: usize) -> (Vec<usize>, Option<usize>) {
    let (mut best, mut last, mut reductions) = (f64::NEG_INFINITY, 0, Vec::new());
    for (i, &m) in metrics.iter().enumerate() {
        let epoch = i + 1;
        if m > best {
            best = m;
            last = epoch;
        }
        let d = epoch - last;
        if d > 0 && d % pp == 0 {
            reductions.push(epoch);
        }
        if d == sp {
            return (reductions, Some(epoch));
        }
    }
    (reductions, None)
}

fn scheduler() -> Outcome {
    let run = |m: &[f64]| simulate(m, 1e-3, 0.5, 20, 50, 200);
    let flat21 = run(&[0.5; 21]);
    let flat45 = run(&[0.5; 45]);
    let mut improving: Vec<f64> = (1..=10).map(|e| e as f64 / 100.0).collect();
    improving.extend([0.1; 190]);
    let long = run(&improving);
    let examples = flat21.reductions == [21]
        && flat21.lrs[20] == 1e-3
        && flat45.reductions == [21, 41]
        && (flat45.lrs[44] - 2.5e-4).abs() < 1e-18
        && long.reductions == [30, 50]
        && long.stopped_at == Some(60)
        && long.best_epoch == 10;

    let mut runner = TestRunner::new(Config {
        cases: 512,
        failure_persistence: None,
        ..Config::default()
    });
    let strategy = (
        prop::collection::vec(prop::sample::select(vec![0.1, 0.2, 0.3, 0.4]), 1..240),
        1usize..25,
        1usize..60,
    );
    let property = runner.run(&strategy, |(metrics, pp, sp)| {
        let s = simulate(&metrics, 1e-3, 0.5, pp, sp, metrics.len());
        let (reductions, stopped) = reference(&metrics, pp, sp);
        prop_assert_eq!(&s.reductions, &reductions);
        prop_assert_eq!(s.stopped_at, stopped);
        for (i, lr) in s.lrs.iter().enumerate() {
            let halvings = reductions.iter().filter(|&&r| r < i + 1).count();
            prop_assert_eq!(*lr, 1e-3 * 0.5f64.powi(halvings as i32));
        }
        Ok(())
    });
    check(
        examples && property.is_ok(),
        format!(
            "flat: halvings at {:?} and {:?}; improving to epoch 10: halvings {:?}, stop {:?}, best {}; \
             512 random traces vs counter reference: {}",
            flat21.reductions,
            flat45.reductions,
            long.reductions,
            long.stopped_at,
            long.best_epoch,
            property.map_or_else(|e| format!("failed ({e})"), |_| "agree".into())
        ),
    )
}

// ---- mixup ----

fn mixup() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let n = 100_000;
    let mut sum = 0.0;
    for _ in 0..n {
        sum += MixPlan::sample(2, 0.4, false, &mut rng).map_err(fail)?.lambda[0];
    }
    let mean = sum / n as f64;

    let labels = [0, 3, 3, 9, 5, 1, 7, 2];
    let targets = one_hot(&labels, 10);
    let x = avscene_autodiff::Tensor::from_fn(&[8, 4], |i| i as f32);
    let plan = MixPlan::sample(8, 0.4, true, &mut rng).map_err(fail)?;
    let (_, mixed) = mixup_batch(std::slice::from_ref(&x), &targets, &plan).map_err(fail)?;
    let valid = mixed
        .data()
        .chunks(10)
        .all(|row| row.iter().all(|&v| (0.0..=1.0).contains(&v)) && (row.iter().sum::<f32>() - 1.0).abs() < 1e-6);

    let unit = MixPlan {
        lambda: vec![1.0; 8],
        partner: vec![7, 6, 5, 4, 3, 2, 1, 0],
    };
    let (inputs, same_targets) = mixup_batch(std::slice::from_ref(&x), &targets, &unit).map_err(fail)?;
    let identity = inputs[0] == x && same_targets == targets;
    check(
        (mean - 0.5).abs() <= 0.01 && valid && identity,
        format!(
            "lambda mean {mean:.4} over {n} draws at alpha 0.4 (0.5 +/- 0.01); mixed labels are distributions: {valid}; \
             lambda = 1 is identity: {identity}"
        ),
    )
}

// ---- determinism ----

fn one_run() -> Result<(String, String), String> {
    let mut spec = SyntheticSpec::new(3, 11);
    spec.frame_size = 32;
    let ds = SyntheticDataset::new(spec).map_err(fail)?;
    let frontend = Frontend::new(FilterbankKind::Gammatone);
    let model = AvModel::new(ModelConfig::default()).map_err(fail)?;
    let trainer = Trainer::new(&model, &frontend, &ds, None);
    let mut ps = ParamSet::new();
    let mut histories = String::new();
    for stage in [Stage::Audio, Stage::Visual] {
        let config = TrainConfig {
            max_epochs: 2,
            batch_size: Some(4),
            steps_per_epoch: Some(3),
            record_time: false,
            seed: 9,
            ..TrainConfig::for_stage(stage)
        };
        let out = trainer.run(ps, &config).map_err(fail)?;
        histories.push_str(&out.history.to_csv().map_err(fail)?);
        ps = out.params;
    }
    let report = evaluate(&model, &ps, &frontend, &ds, Split::Val, None, &[]).map_err(fail)?;
    Ok((histories, report.to_json().map_err(fail)?))
}

fn determinism() -> Outcome {
    let (h1, r1) = one_run()?;
    let (h2, r2) = one_run()?;
    check(
        h1 == h2 && r1 == r2,
        format!(
            "history CSV identical: {} ({} bytes), eval report identical: {}",
            h1 == h2,
            h1.len(),
            r1 == r2
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 7] = [
        ("parameter-budget", budget),
        ("gradient-suite", gradients),
        ("frontend-shape-law", shape_law),
        ("scheduler", scheduler),
        ("mixup", mixup),
        ("determinism", determinism),
        ("synthetic-end-to-end", end_to_end),
    ];
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, run) in criteria {
        if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let started = Instant::now();
        let outcome = run();
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {name} ({secs:.1} s): {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name} ({secs:.1} s): {detail}");
            }
        }
    }
    if failed == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE }
}
