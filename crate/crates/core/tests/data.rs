use std::fs;
use std::path::Path;

use avscene_autodiff::{checkpoint, ParamSet, Tensor};
use avscene_core::data::{
    load_manifest, read_example, read_frames_dir, split_report, write_png_rgb8, ExampleSource, ManifestSource, Split,
    SyntheticDataset, SyntheticSpec,
};
use avscene_core::frontend::{wav, AudioClip, FilterbankKind, Frontend, SAMPLE_RATE};
use avscene_core::visual_net::{load_vgg16_backbone, FrameNorm, VGG16_LAYERS};
use avscene_core::{Error, SceneClass};

const HEADER: &str = "id,audio_path,frames_dir,label,city,location,split";

/// A manifest whose rows point at placeholder files (loading does not
/// decode them).
fn placeholder_manifest(dir: &Path, rows: &[(&str, &str, &str)]) -> std::path::PathBuf {
    let mut text = format!("{HEADER}\n");
    for (id, label, split) in rows {
        fs::write(dir.join(format!("{id}.wav")), b"").unwrap();
        fs::create_dir_all(dir.join(id)).unwrap();
        text.push_str(&format!("{id},{id}.wav,{id},{label},city,loc,{split}\n"));
    }
    let path = dir.join("manifest.csv");
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn split_report_of_a_70_30_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let ids: Vec<String> = (0..100).map(|i| format!("ex{i:03}")).collect();
    let rows: Vec<(&str, &str, &str)> = ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), SceneClass::ALL[i % 10].name(), if i < 70 { "train" } else { "val" }))
        .collect();
    let entries = load_manifest(placeholder_manifest(dir.path(), &rows)).unwrap();
    assert_eq!(entries.len(), 100);
    let report = split_report(&entries);
    assert_eq!((report.n_train, report.n_val), (70, 30));
    assert!((report.train - 0.70).abs() < 1e-12 && (report.val - 0.30).abs() < 1e-12);
    assert_eq!(entries[3].label, SceneClass::ALL[3]);
    assert!(entries[0].audio_path.is_absolute() || entries[0].audio_path.starts_with(dir.path()));
}

#[test]
fn empty_manifests_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    for (name, text) in [("blank.csv", String::new()), ("header.csv", format!("{HEADER}\n"))] {
        let path = dir.path().join(name);
        fs::write(&path, text).unwrap();
        let err = load_manifest(&path).unwrap_err().to_string();
        assert!(err.contains("empty manifest"), "{name}: {err}");
    }
}

#[test]
fn unknown_label_names_row_and_value() {
    let dir = tempfile::tempdir().unwrap();
    let path = placeholder_manifest(dir.path(), &[("a", "airport", "train"), ("b", "beach", "val")]);
    match load_manifest(path).unwrap_err() {
        Error::Manifest { row, message } => {
            assert_eq!(row, 2);
            assert!(message.contains("beach"), "{message}");
        }
        other => panic!("unexpected error {other}"),
    }
}

#[test]
fn duplicate_ids_and_missing_files_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = placeholder_manifest(dir.path(), &[("a", "bus", "train"), ("a", "bus", "val")]);
    assert!(load_manifest(&path).unwrap_err().to_string().contains("duplicate"));

    fs::write(&path, format!("{HEADER}\nz,missing.wav,a,bus,city,loc,train\n")).unwrap();
    assert!(load_manifest(&path).unwrap_err().to_string().contains("does not exist"));

    fs::write(&path, "id,audio,frames\n").unwrap();
    assert!(load_manifest(&path).unwrap_err().to_string().contains("header"));
}

/// Writes one synthetic example in the on-disk layout with `frames` PNGs.
fn write_example(dir: &Path, ds: &SyntheticDataset, index: usize, frames: usize) -> std::path::PathBuf {
    let id = ds.id(index);
    wav::write(dir.join(format!("{id}.wav")), &ds.audio(index, 0, 50).unwrap()).unwrap();
    let fdir = dir.join(&id);
    fs::create_dir_all(&fdir).unwrap();
    for f in 0..frames {
        write_png_rgb8(fdir.join(format!("frame_{f:03}.png")), &ds.frame_rgb8(index, f), 224, 224).unwrap();
    }
    let label = ds.label(index).name();
    let path = dir.join("manifest.csv");
    fs::write(&path, format!("{HEADER}\n{id},{id}.wav,{id},{label},synthetic,loc0,val\n")).unwrap();
    path
}

#[test]
fn read_example_decodes_ten_seconds_and_fifty_frames() {
    let dir = tempfile::tempdir().unwrap();
    let ds = SyntheticDataset::new(SyntheticSpec::new(1, 3)).unwrap();
    let manifest = write_example(dir.path(), &ds, 4, 50);
    let entries = load_manifest(&manifest).unwrap();
    let (clip, frames) = read_example(&entries[0], FrameNorm::UnitRange).unwrap();
    assert!(clip.len().abs_diff(441_000) <= 882);
    assert_eq!(clip.sample_rate(), SAMPLE_RATE);
    assert_eq!(frames.len(), 50);
    assert_eq!(frames.tensor().shape(), &[50, 224, 224, 3]);

    // the on-disk source serves the same windows as the generator
    let source = ManifestSource::new(entries).unwrap();
    let (a, b) = (source.audio(0, 20, 5).unwrap(), ds.audio(4, 20, 5).unwrap());
    assert_eq!(a.len(), 44_100);
    assert!(a.left().iter().zip(b.left()).all(|(x, y)| (x - y).abs() <= 1.0 / 32767.0));
    let (fa, fb) = (
        source.frames(0, 20, 5, FrameNorm::UnitRange).unwrap(),
        ds.frames(4, 20, 5, FrameNorm::UnitRange).unwrap(),
    );
    assert_eq!(fa.tensor().data(), fb.tensor().data());
    assert_eq!(read_frames_dir(dir.path().join(ds.id(4)), FrameNorm::UnitRange).unwrap().len(), 50);
}

#[test]
fn frame_count_mismatch_names_expected_and_actual() {
    let dir = tempfile::tempdir().unwrap();
    let ds = SyntheticDataset::new(SyntheticSpec::new(1, 3)).unwrap();
    let manifest = write_example(dir.path(), &ds, 0, 49);
    let entries = load_manifest(&manifest).unwrap();
    let err = read_example(&entries[0], FrameNorm::UnitRange).unwrap_err().to_string();
    assert!(err.contains("expected 50") && err.contains("found 49"), "{err}");
}

#[test]
fn mono_audio_is_rejected_at_read_time() {
    let dir = tempfile::tempdir().unwrap();
    let ds = SyntheticDataset::new(SyntheticSpec::new(1, 3)).unwrap();
    let manifest = write_example(dir.path(), &ds, 0, 50);
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(dir.path().join(format!("{}.wav", ds.id(0))), spec).unwrap();
    for _ in 0..441_000 {
        w.write_sample(0i16).unwrap();
    }
    w.finalize().unwrap();
    let entries = load_manifest(&manifest).unwrap();
    let err = read_example(&entries[0], FrameNorm::UnitRange).unwrap_err().to_string();
    assert!(err.contains("channel"), "{err}");
}

#[test]
fn short_audio_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let ds = SyntheticDataset::new(SyntheticSpec::new(1, 3)).unwrap();
    let manifest = write_example(dir.path(), &ds, 0, 50);
    let clip = AudioClip::new(vec![0.0; 400_000], vec![0.0; 400_000], SAMPLE_RATE).unwrap();
    wav::write(dir.path().join(format!("{}.wav", ds.id(0))), &clip).unwrap();
    let entries = load_manifest(&manifest).unwrap();
    assert!(read_example(&entries[0], FrameNorm::UnitRange).is_err());
}

#[test]
fn synthetic_split_is_stratified_70_30() {
    let ds = SyntheticDataset::new(SyntheticSpec::new(20, 0)).unwrap();
    assert_eq!(ds.len(), 200);
    assert_eq!(ds.indices(Split::Train).len(), 140);
    assert_eq!(ds.indices(Split::Val).len(), 60);
    for c in 0..10 {
        let train = (0..200).filter(|&i| ds.label(i).index() == c && ds.split(i) == Split::Train).count();
        assert!(train.abs_diff(14) <= 1, "class {c}: {train}");
    }
}

#[test]
fn ambiguity_plan_is_visible_in_the_signature_tables() {
    let spec = SyntheticSpec::new(5, 0);
    for &(a, b) in &spec.audio_ambiguous {
        assert_eq!(spec.audio[a].tones_hz, spec.audio[b].tones_hz);
        assert_ne!(spec.visual[a], spec.visual[b]);
    }
    for &(a, b) in &spec.visual_ambiguous {
        assert_eq!(spec.visual[a], spec.visual[b]);
        assert_ne!(spec.audio[a], spec.audio[b]);
    }
    assert_eq!(spec.audio_separable().len(), 8);
    assert_eq!(spec.visually_separable().len(), 8);

    let mut broken = spec.clone();
    broken.audio[3] = broken.audio[4].clone();
    assert!(SyntheticDataset::new(broken).is_err());
}

#[test]
fn generator_self_test_separates_audio_classes() {
    let ds = SyntheticDataset::new(SyntheticSpec::new(20, 1)).unwrap();
    let report = ds.self_test(&Frontend::new(FilterbankKind::Gammatone)).unwrap();
    assert!(report.separable_accuracy >= 0.95, "{report:?}");
    // two indistinguishable classes: the nearest centroid is a coin flip
    assert!(report.ambiguous_accuracy <= 0.8, "{report:?}");
}

#[test]
fn windows_agree_with_the_full_clip() {
    let ds = SyntheticDataset::new(SyntheticSpec::new(2, 5)).unwrap();
    let full = ds.audio(7, 0, 50).unwrap();
    let part = ds.audio(7, 12, 5).unwrap();
    assert_eq!(part.left(), &full.left()[12 * 8820..17 * 8820]);
    assert_eq!(part.right(), &full.right()[12 * 8820..17 * 8820]);
    assert!(ds.audio(7, 48, 5).is_err());
}

fn tree_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn same_seed_writes_identical_bytes() {
    let small = |seed| {
        let mut spec = SyntheticSpec::new(1, seed);
        spec.frame_size = 16;
        SyntheticDataset::new(spec).unwrap()
    };
    let (a, b, c) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    small(9).write_to_disk(a.path()).unwrap();
    small(9).write_to_disk(b.path()).unwrap();
    small(10).write_to_disk(c.path()).unwrap();
    let (ta, tb, tc) = (tree_bytes(a.path()), tree_bytes(b.path()), tree_bytes(c.path()));
    assert_eq!(ta.len(), 10 * 51 + 2);
    assert!(ta == tb);
    assert!(ta != tc);
    let manifest = fs::read_to_string(a.path().join("manifest.csv")).unwrap();
    assert_eq!(manifest.lines().next().unwrap(), HEADER);
    assert_eq!(manifest.lines().count(), 11);
}

fn vgg_params(prefix: &str, skip: Option<&str>) -> ParamSet<f32> {
    let mut ps = ParamSet::new();
    for (name, cin, cout) in VGG16_LAYERS {
        if Some(name) == skip {
            continue;
        }
        let k = Tensor::from_fn(&[3, 3, cin, cout], |i| ((i % 97) as f32 - 48.0) * 1e-3);
        ps.insert(format!("{prefix}{name}/kernel"), k, true).unwrap();
        ps.insert(format!("{prefix}{name}/bias"), Tensor::full(&[cout], 0.01), true).unwrap();
    }
    ps
}

#[test]
fn vgg16_checkpoints_load_frozen_with_either_path_style() {
    let dir = tempfile::tempdir().unwrap();
    for prefix in ["", "visual/backbone/"] {
        let path = dir.path().join("vgg.ckpt");
        checkpoint::save(&path, &vgg_params(prefix, None), 0, serde_json::json!({"source": "test"})).unwrap();
        let ps = load_vgg16_backbone(&path).unwrap();
        assert_eq!(ps.count(false), 14_714_688);
        assert_eq!(ps.count(true), 0);
        let k = ps.tensor("visual/backbone/conv3_2/kernel").unwrap();
        assert_eq!(k.shape(), &[3, 3, 256, 256]);
        assert_eq!(k.data()[5], (5.0 - 48.0) * 1e-3);
    }
}

#[test]
fn vgg16_checkpoint_errors_name_the_layer() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("partial.ckpt");
    checkpoint::save(&path, &vgg_params("", Some("conv4_2")), 0, serde_json::Value::Null).unwrap();
    match load_vgg16_backbone(&path).unwrap_err() {
        Error::Backbone { layer, message } => {
            assert_eq!(layer, "conv4_2");
            assert!(message.contains("missing"));
        }
        other => panic!("unexpected error {other}"),
    }

    let mut bad = ParamSet::<f32>::new();
    bad.insert("conv1_1/kernel", Tensor::zeros(&[3, 3, 3, 32]), false).unwrap();
    bad.insert("conv1_1/bias", Tensor::zeros(&[64]), false).unwrap();
    checkpoint::save(&path, &bad, 0, serde_json::Value::Null).unwrap();
    match load_vgg16_backbone(&path).unwrap_err() {
        Error::Backbone { layer, message } => {
            assert_eq!(layer, "conv1_1");
            assert!(message.contains("[3, 3, 3, 64]"), "{message}");
        }
        other => panic!("unexpected error {other}"),
    }
}
