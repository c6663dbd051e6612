use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use spxrefine::config::{levels_from_targets, RunConfig};
use spxrefine::formats::{read_label_map, write_weights};
use spxrefine::image_io::load_mask;
use spxrefine::manifest::{read_json, ProposalManifest, RefinedIndex};
use spxrefine::pipeline::{load_dataset, prepare};
use spxrefine_core::mlp::MlpWeights;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_spxrefine"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn fail(args: &[&str]) -> Value {
    let out = run(args);
    assert!(!out.status.success(), "{args:?} should fail");
    serde_json::from_slice(&out.stderr).expect("stderr is one JSON object")
}

fn small_config(root: &Path) -> (RunConfig, PathBuf) {
    let mut cfg = RunConfig { seed: 3, levels: levels_from_targets(&[300, 80]), ..RunConfig::default() };
    cfg.fh.min_size = 10;
    cfg.train.classifier.hidden = vec![16];
    cfg.train.classifier.epochs = 4;
    cfg.paths.dataset = Some(root.join("data/dataset.json"));
    cfg.paths.output = Some(root.join("out"));
    let path = root.join("run.toml");
    cfg.save(&path).unwrap();
    (cfg, path)
}

fn files(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    for entry in walk(dir) {
        out.insert(entry.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&entry).unwrap());
    }
    out
}

fn walk(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn synth_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["synth", "--count", "3", "--seed", "9", "--out", s(&a)]);
    ok(&["synth", "--count", "3", "--seed", "9", "--out", s(&b)]);
    let (fa, fb) = (files(&a), files(&b));
    assert!(fa.len() > 3);
    assert_eq!(fa, fb);

    let c = dir.path().join("c");
    ok(&["synth", "--count", "3", "--seed", "10", "--out", s(&c)]);
    assert_ne!(fa, files(&c));
}

#[test]
fn synth_zero_count_writes_empty_manifest() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["synth", "--count", "0", "--out", s(dir.path())]);
    let manifest: Value = serde_json::from_slice(&std::fs::read(dir.path().join("dataset.json")).unwrap()).unwrap();
    assert_eq!(manifest["images"], Value::Array(vec![]));
}

#[test]
fn segment_counts_match_written_label_maps() {
    let dir = tempfile::tempdir().unwrap();
    let (_, config) = small_config(dir.path());
    ok(&["synth", "--count", "1", "--out", s(&dir.path().join("data"))]);
    let image = dir.path().join("data/images/img_0000.png");
    let out = dir.path().join("seg");
    let stdout = ok(&["segment", s(&image), "--config", s(&config), "--alpha", "0", "--out", s(&out)]);
    for level in 0..2 {
        let lm = read_label_map(&out.join(format!("img_0000_level{level}.spxl"))).unwrap();
        assert!(stdout.contains(&format!("level {level}: {} superpixels", lm.count())), "{stdout}");
    }
}

#[test]
fn segment_with_alpha_needs_features() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["synth", "--count", "1", "--out", s(&dir.path().join("data"))]);
    let image = dir.path().join("data/images/img_0000.png");
    let err = fail(&["segment", s(&image), "--alpha", "0.2", "--out", s(&dir.path().join("seg"))]);
    assert_eq!(err["error"], "missing_feature_map");

    let features = dir.path().join("data/features/img_0000.fmap");
    ok(&["segment", s(&image), "--alpha", "0.2", "--features", s(&features), "--out", s(&dir.path().join("seg"))]);
}

#[test]
fn missing_image_reports_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let err = fail(&["segment", s(&dir.path().join("nope.png")), "--out", s(dir.path())]);
    assert_eq!(err["error"], "io");
    assert!(err["message"].as_str().unwrap().contains("nope.png"));
}

#[test]
fn calibrate_single_level() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["synth", "--count", "2", "--out", s(&dir.path().join("data"))]);
    let mut cfg = RunConfig { levels: levels_from_targets(&[150]), ..RunConfig::default() };
    cfg.fh.min_size = 10;
    let config = dir.path().join("one.toml");
    cfg.save(&config).unwrap();
    let written = dir.path().join("calibrated.toml");
    let stdout = ok(&["calibrate", s(&dir.path().join("data/images")), "--alpha", "0", "--config", s(&config), "--write", s(&written)]);
    assert_eq!(stdout.lines().filter(|l| l.starts_with("level ")).count(), 1, "{stdout}");
    let calibrated = RunConfig::load(&written).unwrap();
    assert_eq!(calibrated.levels.len(), 1);
    let level = &calibrated.levels[0];
    assert!(level.k.is_some());
    let achieved = level.achieved.unwrap();
    assert!(level.warning.is_some() || (achieved - 150.0).abs() <= 15.0, "{achieved}");
}

#[test]
fn train_refine_eval_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, config) = small_config(dir.path());
    ok(&["synth", "--count", "6", "--config", s(&config), "--out", s(&dir.path().join("data"))]);
    let stdout = ok(&["train", "--config", s(&config)]);
    assert!(stdout.contains("positives"), "{stdout}");
    assert!(dir.path().join("out/weights.mlpw").is_file());
    assert!(dir.path().join("out/train.json").is_file());

    ok(&["refine", "--config", s(&config)]);
    let first = files(&dir.path().join("out/refined"));
    assert!(!first.is_empty());
    ok(&["refine", "--config", s(&config)]);
    assert_eq!(first, files(&dir.path().join("out/refined")));

    let table = ok(&["eval", "--config", s(&config)]);
    assert!(table.contains("coarse"), "{table}");
    let report: Value = serde_json::from_slice(&std::fs::read(dir.path().join("out/eval.json")).unwrap()).unwrap();
    let variants = report["variants"].as_array().unwrap();
    assert_eq!(variants.len(), 5);
    for v in variants {
        let avg = v["report"]["avg_iou"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&avg));
    }
    assert_eq!(report["levels"].as_array().unwrap().len(), cfg.levels.len());
}

#[test]
fn unpostprocessed_masks_are_superpixel_unions() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, config) = small_config(dir.path());
    ok(&["synth", "--count", "2", "--config", s(&config), "--out", s(&dir.path().join("data"))]);
    ok(&["train", "--config", s(&config)]);
    ok(&["refine", "--config", s(&config), "--no-postprocess"]);

    let prepared = prepare(&cfg, load_dataset(&dir.path().join("data/dataset.json"), 2).unwrap()).unwrap();
    let refined = dir.path().join("out/refined");
    let mut checked = 0;
    for img in &prepared {
        let index: RefinedIndex = read_json(&refined.join(format!("{}.json", img.data.name))).unwrap();
        for p in &index.proposals {
            let mask = load_mask(&refined.join(&p.mask_png)).unwrap();
            let lm = &img.bundles[p.level].labels;
            let mut state = vec![None; lm.count()];
            for (&l, &b) in lm.labels().iter().zip(mask.bits()) {
                let slot = &mut state[l as usize];
                assert_eq!(*slot.get_or_insert(b), b, "superpixel {l} split by a mask of {}", img.data.name);
            }
            checked += 1;
        }
    }
    assert!(checked > 0);
}

#[test]
fn zero_classifier_selects_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, config) = small_config(dir.path());
    ok(&["synth", "--count", "2", "--config", s(&config), "--out", s(&dir.path().join("data"))]);
    // every logit is 0, so every probability is exactly the 0.5 threshold
    write_weights(&MlpWeights::zeros(1 + cfg.synth.feature_dim, &[4]), &dir.path().join("out/weights.mlpw")).unwrap();
    ok(&["refine", "--config", s(&config), "--no-postprocess"]);
    let refined = dir.path().join("out/refined");
    for path in walk(&refined).into_iter().filter(|p| p.extension().is_some_and(|e| e == "png")) {
        assert!(load_mask(&path).unwrap().is_blank());
    }
    ok(&["eval", "--config", s(&config), "--no-postprocess"]);
    let report: Value = serde_json::from_slice(&std::fs::read(dir.path().join("out/eval.json")).unwrap()).unwrap();
    let refined = report["variants"].as_array().unwrap().iter().find(|v| v["name"] == "refined").unwrap();
    for r in refined["report"]["ar"].as_array().unwrap() {
        assert_eq!(r["overall"].as_f64().unwrap(), 0.0);
    }
}

#[test]
fn classifier_width_mismatch_names_file_and_field() {
    let dir = tempfile::tempdir().unwrap();
    let (_, config) = small_config(dir.path());
    ok(&["synth", "--count", "1", "--config", s(&config), "--out", s(&dir.path().join("data"))]);
    write_weights(&MlpWeights::zeros(3, &[4]), &dir.path().join("out/weights.mlpw")).unwrap();
    let err = fail(&["refine", "--config", s(&config)]);
    assert_eq!(err["error"], "inconsistent_input");
    let msg = err["message"].as_str().unwrap();
    assert!(msg.contains("weights.mlpw") && msg.contains("input_dim"), "{msg}");
}

#[test]
fn bad_proposal_level_names_file_and_field() {
    let dir = tempfile::tempdir().unwrap();
    let (_, config) = small_config(dir.path());
    ok(&["synth", "--count", "1", "--config", s(&config), "--out", s(&dir.path().join("data"))]);
    let path = dir.path().join("data/proposals/img_0000.json");
    let mut manifest: ProposalManifest = read_json(&path).unwrap();
    manifest.proposals[0].level = 7;
    std::fs::write(&path, serde_json::to_vec(&manifest).unwrap()).unwrap();
    let err = fail(&["train", "--config", s(&config)]);
    assert_eq!(err["error"], "inconsistent_input");
    let msg = err["message"].as_str().unwrap();
    assert!(msg.contains("img_0000.json") && msg.contains("level"), "{msg}");
}

#[test]
fn affinity_writes_one_channel_per_direction() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["synth", "--count", "1", "--out", s(&dir.path().join("data"))]);
    let gt = dir.path().join("data/gt/img_0000.json");
    let out = dir.path().join("aff");
    let stdout = ok(&["affinity", s(&gt), "--out", s(&out)]);
    assert!(stdout.contains("×2)"), "{stdout}");
    let stdout = ok(&["affinity", s(&gt), "--connectivity", "8", "--out", s(&out)]);
    assert!(stdout.contains("×4)"), "{stdout}");
    let err = fail(&["affinity", s(&gt), "--connectivity", "6", "--out", s(&out)]);
    assert_eq!(err["error"], "core");
}

#[test]
fn shipped_desk_config_is_valid() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/desk.toml");
    let cfg = RunConfig::load(&path).unwrap();
    cfg.validate().unwrap();
    assert_eq!(cfg.levels.iter().map(|l| l.target).collect::<Vec<_>>(), [600, 300, 150]);
    assert_eq!(cfg.train.classifier.hidden, [64, 64, 64]);
    assert_eq!(cfg.fh.min_size, 10);
}
