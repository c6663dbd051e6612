//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Tolerances and budgets are the constants below.

#[path = "../../core/tests/oracle/mod.rs"]
mod oracle;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use oracle::{
    gradient_case, greedy_trap, numeric_gradient, plain_fh, random_features, random_image, random_instance,
    reference_fh, relative_error, Chacha, SplitMix,
};
use spxrefine::commands::{calibrate_levels, cmd_calibrate, cmd_eval, cmd_refine, cmd_synth, cmd_train};
use spxrefine::config::{levels_from_targets, RunConfig};
use spxrefine::formats::write_feature_map;
use spxrefine::image_io::{load_image, load_mask, save_image};
use spxrefine::manifest::{read_json, RefinedIndex};
use spxrefine::pipeline::{load_dataset, VARIANT_COARSE, VARIANT_FULL, VARIANT_MORPH, VARIANT_REFINED};
use spxrefine::synth::{generate, SynthConfig};
use spxrefine_core::fh::{geometric_targets, segment, smooth, Connectivity, FhParams};
use spxrefine_core::groundtruth::{exhaustive_gt_set, greedy_gt_set, gt_partition};
use spxrefine_core::metrics::{
    aiou, average_recall, best_ious, boundary_recall, oversegmentation_error, undersegmentation_error, AiouMode,
    ImageCase, MetricsConfig,
};
use spxrefine_core::mlp::MlpWeights;
use spxrefine_core::refine::{refine, CoarseProposal, LevelBundle};
use spxrefine_core::{mask_iou, BinaryMask, Rect, RgbImage};

const FH_ORACLE_IMAGES: usize = 120;
const FH_ORACLE_BUDGET: Duration = Duration::from_secs(10);
const REDUCTION_MIN_CROPS: usize = 20;
const REDUCTION_BUDGET: Duration = Duration::from_secs(30);
const CALIBRATION_TARGETS: [usize; 2] = [8000, 500];
const CALIBRATION_IMAGES: usize = 10;
const CALIBRATION_TOLERANCE: f64 = 0.10;
const CALIBRATION_BUDGET: Duration = Duration::from_secs(120);
const GREEDY_INSTANCES: usize = 200;
const GREEDY_MAX_SUPERPIXELS: usize = 12;
const EXHAUSTIVE_LIMIT: usize = 15;
const UPPER_BOUND_INSTANCES: usize = 200;
const GRADIENT_NETWORKS: u64 = 20;
const GRADIENT_TOLERANCE: f64 = 1e-3;
const GRADIENT_STEP: f64 = 1e-4;
const E2E_IMAGES: usize = 50;
const E2E_TRAIN_SEED: u64 = 101;
const E2E_HELDOUT_SEED: u64 = 202;
const E2E_TRAIN_BUDGET: Duration = Duration::from_secs(300);
const E2E_MIN_GAIN: f64 = 0.05;
const NMS_AR_TOLERANCE: f64 = 0.005;

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn fh_oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut rng = SplitMix(4242);
    let mut compared = 0;
    for case in 0..FH_ORACLE_IMAGES {
        let (w, h) = (1 + rng.below(8), 1 + rng.below(8));
        let img = random_image(&mut rng, w, h);
        let dim = 1 + rng.below(6);
        let fm = random_features(&mut rng, w, h, dim);
        let k = [0.02, 0.1, 0.5, 2.0][rng.below(4)];
        let min_size = rng.below(6);
        let eight = case % 2 == 1;
        let connectivity = if eight { Connectivity::Eight } else { Connectivity::Four };
        for alpha in [0.0, 0.2] {
            let params = FhParams { k, alpha, min_size, connectivity, sigma: 0.0 };
            let features = (alpha > 0.0).then_some(&fm);
            let got = segment(&img, features, &params).map_err(|e| e.to_string())?;
            let got: Vec<usize> = got.labels().iter().map(|&l| l as usize).collect();
            let want = reference_fh(&img, features, k, alpha, min_size, eight);
            if got != want {
                return Err(format!("image {case} ({w}×{h}, α={alpha}) differs from the reference partition"));
            }
            compared += 1;
        }
    }
    let t = start.elapsed();
    check(
        t < FH_ORACLE_BUDGET,
        format!("{compared} partitions identical on {FH_ORACLE_IMAGES} images up to 8×8, α ∈ {{0, 0.2}}; {t:.2?} (budget {FH_ORACLE_BUDGET:?})"),
    )
}

fn crop(img: &RgbImage, x0: usize, y0: usize, size: usize) -> RgbImage {
    let mut data = Vec::with_capacity(size * size * 3);
    for y in y0..y0 + size {
        for x in x0..x0 + size {
            data.extend(img.pixel_at(x, y));
        }
    }
    RgbImage::new(size, size, data).unwrap()
}

fn real_crops() -> Vec<(String, RgbImage)> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data");
    let mut out = Vec::new();
    for (name, xs, ys) in [
        ("astronaut.png", vec![0, 128, 256], vec![0, 128, 256]),
        ("coffee.png", vec![0, 172, 344], vec![0, 144]),
        ("chelsea.png", vec![0, 97, 195], vec![0, 44]),
    ] {
        let img = load_image(&dir.join(name)).unwrap();
        for &y in &ys {
            for &x in &xs {
                out.push((format!("{name}@{x},{y}"), crop(&img, x, y, 256)));
            }
        }
    }
    out
}

fn reduction_identity() -> Outcome {
    let crops = real_crops();
    let start = Instant::now();
    let mut rng = SplitMix(808);
    let params = FhParams { k: 0.05, alpha: 0.0, ..FhParams::default() };
    for (name, img) in &crops {
        let fm = random_features(&mut rng, img.width(), img.height(), 8);
        let deep = segment(img, Some(&fm), &params).map_err(|e| e.to_string())?;
        let plain = segment(img, None, &params).map_err(|e| e.to_string())?;
        if deep != plain {
            return Err(format!("{name}: α=0 with features differs from color-only segmentation"));
        }
        let oracle = plain_fh(&smooth(img, params.sigma), params.k, params.min_size, true);
        if deep.labels().iter().zip(&oracle).any(|(&a, &b)| a as usize != b) {
            return Err(format!("{name}: differs from the independent plain FH"));
        }
    }
    let t = start.elapsed();
    check(
        crops.len() >= REDUCTION_MIN_CROPS && t < REDUCTION_BUDGET,
        format!("{} real 256×256 crops bit-identical to plain FH; {t:.2?} (budget {REDUCTION_BUDGET:?})", crops.len()),
    )
}

fn calibration() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let synth = SynthConfig {
        width: 640,
        height: 480,
        min_radius: 20.0,
        max_radius: 120.0,
        max_objects: 8,
        ..SynthConfig::default()
    };
    for s in generate(&synth, 1, 5, CALIBRATION_IMAGES) {
        save_image(&s.image, &dir.path().join(format!("{}.png", s.name))).unwrap();
        write_feature_map(&s.features, &dir.path().join(format!("{}.fmap", s.name))).unwrap();
    }
    let mut cfg = RunConfig { levels: levels_from_targets(&CALIBRATION_TARGETS), ..RunConfig::default() };
    cfg.levels[0].min_size = Some(10);
    let start = Instant::now();
    let results = cmd_calibrate(&mut cfg, dir.path()).map_err(|e| e.to_string())?;
    let t = start.elapsed();

    // recount independently from the files with the calibrated parameters
    let mut details = Vec::new();
    let mut ok = t < CALIBRATION_BUDGET;
    for (level, r) in results.iter().enumerate() {
        let params = cfg.level_params(level);
        let mut total = 0usize;
        for i in 0..CALIBRATION_IMAGES {
            let img = load_image(&dir.path().join(format!("img_{i:04}.png"))).unwrap();
            let fm = spxrefine::formats::read_feature_map(&dir.path().join(format!("img_{i:04}.fmap"))).unwrap();
            total += segment(&img, Some(&fm), &params).unwrap().count();
        }
        let mean = total as f64 / CALIBRATION_IMAGES as f64;
        let target = cfg.levels[level].target as f64;
        let within = (mean - target).abs() <= CALIBRATION_TOLERANCE * target;
        ok &= within && r.reached && cfg.levels[level].warning.is_none() && mean == r.mean_count;
        details.push(format!("target {target} → mean {mean:.1} (k={:.5})", params.k));
    }
    check(ok, format!("{} on {CALIBRATION_IMAGES} 640×480 images; {t:.2?} (budget {CALIBRATION_BUDGET:?})", details.join(", ")))
}

fn greedy_vs_exhaustive() -> Outcome {
    let mut rng = SplitMix(2025);
    let mut equal = 0;
    for case in 0..GREEDY_INSTANCES {
        let (lm, gt) = random_instance(&mut rng, GREEDY_MAX_SUPERPIXELS);
        let greedy = greedy_gt_set(&lm, &gt).map_err(|e| e.to_string())?;
        let exact = exhaustive_gt_set(&lm, &gt, EXHAUSTIVE_LIMIT).map_err(|e| e.to_string())?;
        if greedy.iou > exact.iou {
            return Err(format!("instance {case}: greedy {} > exhaustive {}", greedy.iou, exact.iou));
        }
        equal += usize::from(greedy.iou == exact.iou);
    }
    let (lm, gt) = greedy_trap();
    let greedy = greedy_gt_set(&lm, &gt).unwrap();
    let exact = exhaustive_gt_set(&lm, &gt, EXHAUSTIVE_LIMIT).unwrap();
    check(
        exact.iou > greedy.iou,
        format!(
            "greedy ≤ exhaustive on {GREEDY_INSTANCES} instances (equal on {equal}); constructed instance: greedy {:.4} < exhaustive {:.4}",
            greedy.iou, exact.iou
        ),
    )
}

fn metric_identities() -> Outcome {
    let cfg = SynthConfig::default();
    let samples = generate(&cfg, 1, 31, 20);
    let metrics = MetricsConfig::default();
    let mut objects_seen = 0;
    for s in &samples {
        let part = gt_partition(&s.objects, cfg.width, cfg.height).unwrap();
        let br = boundary_recall(&part, &part, metrics.boundary_tolerance).unwrap();
        let ue = undersegmentation_error(&part, &part).unwrap();
        let oe = oversegmentation_error(&part, &part, metrics.oe_overlap_fraction).unwrap();
        let ai = aiou(&part, &s.objects, AiouMode::Greedy).unwrap();
        if (br, ue, oe, ai) != (1.0, 0.0, 0.0, 1.0) {
            return Err(format!("{}: BR {br}, UE {ue}, OE {oe}, AIoU {ai}", s.name));
        }
        // exact GT masks as proposals, listed in reverse
        let objs: Vec<&BinaryMask> = s.objects.iter().map(|o| &o.mask).collect();
        let props: Vec<&BinaryMask> = objs.iter().rev().copied().collect();
        let ar = average_recall(&[ImageCase { proposals: &props, objects: &objs }], &metrics).unwrap();
        if ar.iter().any(|r| r.overall != 1.0) {
            return Err(format!("{}: AR of exact proposals {:?}", s.name, ar.iter().map(|r| r.overall).collect::<Vec<_>>()));
        }
        objects_seen += objs.len();
    }
    Ok(format!("BR=1, UE=0, OE=0, AIoU=1 and AR=1 exactly on {} GT partitions ({objects_seen} objects)", samples.len()))
}

fn upper_bound() -> Outcome {
    let mut rng = SplitMix(3131);
    let mut proposals_checked = 0;
    for case in 0..UPPER_BOUND_INSTANCES {
        let (lm, gt) = random_instance(&mut rng, GREEDY_MAX_SUPERPIXELS);
        let (w, h) = (lm.width(), lm.height());
        let fm = random_features(&mut rng, w, h, 3);
        let bundle = LevelBundle::new(0, lm.clone(), &fm).unwrap();
        let net: MlpWeights<f32> = MlpWeights::glorot(4, &[8, 8, 8], &mut Chacha::from_seed_u64(rng.next_u64()));
        let mut masks = Vec::new();
        for _ in 0..4 {
            let rect = Rect::new(rng.below(w) as i64 - 1, rng.below(h) as i64 - 1, 1 + rng.below(w), 1 + rng.below(h)).unwrap();
            if rect.clip(w, h).is_none() {
                continue;
            }
            let window: Vec<f64> = (0..1600).map(|_| rng.unit()).collect();
            let cp = CoarseProposal::new(window, rect, 0, rng.unit()).unwrap();
            let r = refine(&cp, &bundle, &net, rng.unit() * 0.6 + 0.2).unwrap();
            if r.mask != lm.mask_of(&r.ids) {
                return Err(format!("instance {case}: refined mask is not a superpixel union"));
            }
            masks.push(r.mask);
        }
        let refs: Vec<&BinaryMask> = masks.iter().collect();
        let avg = best_ious(&refs, &[&gt.mask]).unwrap()[0];
        let bound = aiou(&lm, std::slice::from_ref(&gt), AiouMode::Exhaustive { limit: EXHAUSTIVE_LIMIT }).unwrap();
        if avg > bound {
            return Err(format!("instance {case}: AVGIoU {avg} > exhaustive AIoU {bound}"));
        }
        proposals_checked += masks.len();
    }
    Ok(format!("AVGIoU ≤ exhaustive AIoU (tolerance 0) on {UPPER_BOUND_INSTANCES} instances, {proposals_checked} refined proposals"))
}

fn gradient_check() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..GRADIENT_NETWORKS {
        let (net, inputs, labels) = gradient_case(seed);
        let (_, analytic) = net.loss_and_gradient(&inputs, &labels).map_err(|e| e.to_string())?;
        let numeric = numeric_gradient(&net, &inputs, &labels, GRADIENT_STEP);
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    check(
        worst <= GRADIENT_TOLERANCE,
        format!("{GRADIENT_NETWORKS} networks, worst relative error {worst:.2e} (tolerance {GRADIENT_TOLERANCE:.0e})"),
    )
}

/// Shared state of the end-to-end criteria.
struct EndToEnd {
    train_time: Duration,
    coarse: f64,
    refined_raw: f64,
    refined: f64,
    ar10_before_nms: f64,
    ar10_after_nms: f64,
    worst_survivor_iou: f64,
    nms_threshold: f64,
    runs: usize,
}

fn desk_config(root: &Path) -> RunConfig {
    let mut cfg = RunConfig {
        seed: 7,
        levels: levels_from_targets(&geometric_targets(600, 150, 3)),
        ..RunConfig::default()
    };
    cfg.fh.min_size = 10;
    cfg.train.classifier.hidden = vec![64, 64, 64];
    cfg.paths.output = Some(root.join("out"));
    cfg
}

fn worst_survivor_iou(index_dir: &Path) -> f64 {
    let mut worst = 0.0f64;
    let mut entries: Vec<_> = std::fs::read_dir(index_dir).unwrap().map(|e| e.unwrap().path()).collect();
    entries.sort();
    for path in entries.into_iter().filter(|p| p.extension().is_some_and(|e| e == "json")) {
        let index: RefinedIndex = read_json(&path).unwrap();
        let masks: Vec<BinaryMask> = index.proposals.iter().map(|p| load_mask(&index_dir.join(&p.mask_png)).unwrap()).collect();
        for i in 0..masks.len() {
            for j in i + 1..masks.len() {
                worst = worst.max(mask_iou(&masks[i], &masks[j]).unwrap());
            }
        }
    }
    worst
}

fn end_to_end() -> Result<EndToEnd, String> {
    let root = tempfile::tempdir().unwrap();
    let mut cfg = desk_config(root.path());
    let err = |e: spxrefine::ToolkitError| e.to_string();
    let train_dir = root.path().join("train");
    let heldout_dir = root.path().join("heldout");
    cmd_synth(&cfg, E2E_IMAGES, E2E_TRAIN_SEED, &train_dir).map_err(err)?;
    cmd_synth(&cfg, E2E_IMAGES, E2E_HELDOUT_SEED, &heldout_dir).map_err(err)?;

    let calib: Vec<_> = load_dataset(&train_dir.join("dataset.json"), cfg.levels.len())
        .map_err(err)?
        .into_iter()
        .take(CALIBRATION_IMAGES)
        .map(|d| (d.image, d.features))
        .collect();
    calibrate_levels(&mut cfg, &calib).map_err(err)?;

    cfg.paths.dataset = Some(train_dir.join("dataset.json"));
    let start = Instant::now();
    cmd_train(&cfg).map_err(err)?;
    let train_time = start.elapsed();

    cfg.paths.dataset = Some(heldout_dir.join("dataset.json"));
    let report = cmd_eval(&cfg, true).map_err(err)?;
    let ar10 = |name: &str| report.variant(name).unwrap().ar.iter().find(|r| r.budget == 10).unwrap().overall;

    let mut worst = 0.0f64;
    let mut runs = 0;
    for dataset in [&heldout_dir, &train_dir] {
        cfg.paths.dataset = Some(dataset.join("dataset.json"));
        cmd_refine(&cfg, spxrefine_core::postprocess::Steps::ALL).map_err(err)?;
        worst = worst.max(worst_survivor_iou(&root.path().join("out/refined")));
        runs += 1;
    }
    Ok(EndToEnd {
        train_time,
        coarse: report.variant(VARIANT_COARSE).unwrap().avg_iou,
        refined_raw: report.variant(VARIANT_REFINED).unwrap().avg_iou,
        refined: report.variant(VARIANT_FULL).unwrap().avg_iou,
        ar10_before_nms: ar10(VARIANT_MORPH),
        ar10_after_nms: ar10(VARIANT_FULL),
        worst_survivor_iou: worst,
        nms_threshold: cfg.postprocess.nms_iou,
        runs,
    })
}

fn main() {
    let mut results: Vec<(&str, Outcome)> = Vec::new();
    let mut run = |name: &'static str, f: &dyn Fn() -> Outcome| {
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        report(name, &outcome);
        results.push((name, outcome));
    };

    run("fh-oracle-equivalence", &fh_oracle_equivalence);
    run("reduction-identity", &reduction_identity);
    run("calibration-500-8000", &calibration);
    run("greedy-vs-exhaustive", &greedy_vs_exhaustive);
    run("metric-identities", &metric_identities);
    run("upper-bound", &upper_bound);
    run("gradient-check", &gradient_check);

    let e2e = catch_unwind(end_to_end).unwrap_or_else(|_| Err("end-to-end run panicked".into()));
    let derived = |f: &dyn Fn(&EndToEnd) -> Outcome| match &e2e {
        Ok(e) => f(e),
        Err(msg) => Err(msg.clone()),
    };
    run("end-to-end-desk-scale", &|| {
        derived(&|e| {
            check(
                e.train_time <= E2E_TRAIN_BUDGET && e.refined >= e.coarse + E2E_MIN_GAIN,
                format!(
                    "held-out AVGIoU coarse {:.4} → refined {:.4} (gain {:+.4}, required {E2E_MIN_GAIN}; before post-processing {:.4}); training {:.2?} (budget {E2E_TRAIN_BUDGET:?})",
                    e.coarse,
                    e.refined,
                    e.refined - e.coarse,
                    e.refined_raw,
                    e.train_time
                ),
            )
        })
    });
    run("nms-ablation-ar10", &|| {
        derived(&|e| {
            check(
                e.ar10_after_nms >= e.ar10_before_nms - NMS_AR_TOLERANCE,
                format!("AR@10 before NMS {:.4}, after {:.4} (tolerance {NMS_AR_TOLERANCE})", e.ar10_before_nms, e.ar10_after_nms),
            )
        })
    });
    run("nms-survivor-iou", &|| {
        derived(&|e| {
            check(
                e.worst_survivor_iou < e.nms_threshold,
                format!("largest pairwise IoU among survivors {:.4} < {} over {} refine runs", e.worst_survivor_iou, e.nms_threshold, e.runs),
            )
        })
    });

    let failed = results.iter().filter(|(_, o)| o.is_err()).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

fn report(name: &str, outcome: &Outcome) {
    match outcome {
        Ok(detail) => println!("PASS  {name:<24} {detail}"),
        Err(detail) => println!("FAIL  {name:<24} {detail}"),
    }
}
