//! Subcommand implementations. Each returns what it wrote so callers and
//! tests can inspect it; printing is left to the binary.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use spxrefine_core::fh::{calibrate, segment, Calibration, Connectivity};
use spxrefine_core::groundtruth::affinity_labels;
use spxrefine_core::metrics::AiouMode;
use spxrefine_core::mlp::{train, MlpWeights};
use spxrefine_core::postprocess::Steps;
use spxrefine_core::{FeatureMap, RgbImage};

use crate::config::RunConfig;
use crate::error::{Result, ToolkitError};
use crate::formats::{read_feature_map, read_weights, write_feature_map, write_label_map, write_weights};
use crate::image_io::{load_image, save_mask};
use crate::manifest::{load_gt, read_json, sibling, write_json, DatasetManifest, GtManifest, RefinedEntry, RefinedIndex};
use crate::pipeline::{evaluate, load_dataset, prepare, refine_image, training_samples, EvalReport, PreparedImage, SampleCounts};
use crate::synth::{generate, write_dataset};

pub fn output_dir(cfg: &RunConfig) -> PathBuf {
    cfg.paths.output.as_deref().map(|p| cfg.resolve(p)).unwrap_or_else(|| PathBuf::from("out"))
}

fn check_feature_dims(fm: &FeatureMap, img: &RgbImage, path: &Path) -> Result<()> {
    if (fm.width(), fm.height()) != (img.width(), img.height()) {
        return Err(ToolkitError::inconsistent(
            path,
            "header",
            format!("feature map is {}×{}, image is {}×{}", fm.width(), fm.height(), img.width(), img.height()),
        ));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentOutcome {
    pub files: Vec<PathBuf>,
    pub counts: Vec<usize>,
}

impl SegmentOutcome {
    pub fn summary(&self, image: &Path) -> String {
        let parts: Vec<String> =
            self.counts.iter().enumerate().map(|(l, c)| format!("level {l}: {c} superpixels")).collect();
        format!("{}: {}", image.display(), parts.join(", "))
    }
}

/// Segments one image at every level and writes `<stem>_level<i>.spxl`.
/// `features` overrides the per-level feature map paths.
pub fn cmd_segment(cfg: &RunConfig, image_path: &Path, features: Option<&Path>, out: &Path) -> Result<SegmentOutcome> {
    let image = load_image(image_path)?;
    let stem = image_path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "image".into());
    let mut files = Vec::new();
    let mut counts = Vec::new();
    for level in 0..cfg.levels.len() {
        let params = cfg.level_params(level);
        let fm_path = features.map(Path::to_path_buf).or_else(|| cfg.levels[level].features.as_deref().map(|p| cfg.resolve(p)));
        let fm = match (params.alpha > 0.0, fm_path) {
            (false, _) => None,
            (true, None) => return Err(ToolkitError::MissingFeatureMap { level, alpha: params.alpha }),
            (true, Some(p)) => {
                let fm = read_feature_map(&p)?;
                check_feature_dims(&fm, &image, &p)?;
                Some(fm)
            }
        };
        let lm = segment(&image, fm.as_ref(), &params)?;
        let file = out.join(format!("{stem}_level{level}.spxl"));
        write_label_map(&lm, &file)?;
        files.push(file);
        counts.push(lm.count());
    }
    Ok(SegmentOutcome { files, counts })
}

fn is_image_file(p: &Path) -> bool {
    p.extension()
        .map(|e| e.to_string_lossy().to_ascii_lowercase())
        .is_some_and(|e| matches!(e.as_str(), "png" | "ppm" | "pgm" | "pnm"))
}

/// Calibrates `k` of every level on the images of `dir` (sorted by name).
/// A `<stem>.fmap` next to an image is used as its feature map. Updates
/// `cfg` in place with the calibrated `k`, achieved counts and warnings.
pub fn cmd_calibrate(cfg: &mut RunConfig, dir: &Path) -> Result<Vec<Calibration>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| ToolkitError::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| ToolkitError::io(dir, err)))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| is_image_file(p))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(ToolkitError::inconsistent(dir, "images", "no PNG/PPM images found"));
    }
    let loaded = paths
        .par_iter()
        .map(|p| {
            let img = load_image(p)?;
            let fm_path = p.with_extension("fmap");
            let fm = if fm_path.exists() {
                let fm = read_feature_map(&fm_path)?;
                check_feature_dims(&fm, &img, &fm_path)?;
                Some(fm)
            } else {
                None
            };
            Ok((img, fm))
        })
        .collect::<Result<Vec<_>>>()?;
    calibrate_levels(cfg, &loaded)
}

/// Calibration on in-memory images; see [`cmd_calibrate`].
pub fn calibrate_levels(cfg: &mut RunConfig, images: &[(RgbImage, Option<FeatureMap>)]) -> Result<Vec<Calibration>> {
    let results = (0..cfg.levels.len())
        .into_par_iter()
        .map(|level| {
            let params = cfg.level_params(level);
            let inputs: Vec<(&RgbImage, Option<&FeatureMap>)> = images
                .iter()
                .map(|(img, fm)| match (params.alpha > 0.0, fm) {
                    (false, _) => Ok((img, None)),
                    (true, Some(fm)) => Ok((img, Some(fm))),
                    (true, None) => Err(ToolkitError::MissingFeatureMap { level, alpha: params.alpha }),
                })
                .collect::<Result<_>>()?;
            Ok(calibrate(&inputs, cfg.levels[level].target, &params, &cfg.calibration)?)
        })
        .collect::<Result<Vec<_>>>()?;
    for (level, c) in cfg.levels.iter_mut().zip(&results) {
        level.k = Some(c.params.k);
        level.achieved = Some(c.mean_count);
        level.warning = (!c.reached).then(|| {
            format!(
                "target {} not reached within {:.0}%: best mean count {:.1} at k = {:.6}",
                level.target,
                cfg.calibration.tolerance * 100.0,
                c.mean_count,
                c.params.k
            )
        });
    }
    Ok(results)
}

/// Generates `count` synthetic images under `out` with one proposal level
/// per configured level.
pub fn cmd_synth(cfg: &RunConfig, count: usize, seed: u64, out: &Path) -> Result<DatasetManifest> {
    cfg.synth.validate()?;
    let samples = generate(&cfg.synth, cfg.levels.len(), seed, count);
    write_dataset(&samples, cfg.levels.len(), out)
}

fn load_prepared(cfg: &RunConfig) -> Result<Vec<PreparedImage>> {
    let dataset = cfg.require_path(&cfg.paths.dataset, "dataset")?;
    prepare(cfg, load_dataset(&dataset, cfg.levels.len())?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub weights: PathBuf,
    pub samples: SampleCounts,
    pub loss_curve: Vec<f64>,
}

pub fn weights_path(cfg: &RunConfig) -> PathBuf {
    cfg.paths.weights.as_deref().map(|p| cfg.resolve(p)).unwrap_or_else(|| output_dir(cfg).join("weights.mlpw"))
}

/// Trains the superpixel classifier on a prepared dataset.
pub fn train_on(cfg: &RunConfig, images: &[PreparedImage]) -> Result<(MlpWeights<f32>, SampleCounts, Vec<f64>)> {
    let (samples, counts) = training_samples(cfg, images)?;
    let mut tc = cfg.train.classifier.clone();
    tc.seed = cfg.seed;
    let outcome = train(&samples, &tc)?;
    Ok((outcome.weights, counts, outcome.loss_curve))
}

pub fn cmd_train(cfg: &RunConfig) -> Result<TrainSummary> {
    let images = load_prepared(cfg)?;
    let (weights, samples, loss_curve) = train_on(cfg, &images)?;
    let path = weights_path(cfg);
    write_weights(&weights, &path)?;
    let summary = TrainSummary { weights: path, samples, loss_curve };
    write_json(&summary, &output_dir(cfg).join("train.json"))?;
    Ok(summary)
}

fn load_classifier(cfg: &RunConfig, images: &[PreparedImage]) -> Result<MlpWeights<f32>> {
    let path = weights_path(cfg);
    let weights = read_weights(&path)?;
    if let Some(img) = images.first() {
        let expected = 1 + img.bundles.first().map_or(0, |b| b.dim);
        if weights.input_dim() != expected {
            return Err(ToolkitError::inconsistent(
                &path,
                "input_dim",
                format!("classifier takes {} inputs, features of {} need 1 + {}", weights.input_dim(), img.data.name, expected - 1),
            ));
        }
    }
    Ok(weights)
}

/// Refines every image of the dataset and writes mask PNGs plus one JSON
/// index per image under `out/refined`. Returns the number of masks written.
pub fn cmd_refine(cfg: &RunConfig, steps: Steps) -> Result<usize> {
    let images = load_prepared(cfg)?;
    let weights = load_classifier(cfg, &images)?;
    let root = output_dir(cfg).join("refined");
    let counts = images
        .par_iter()
        .map(|img| {
            let refined = refine_image(cfg, img, &weights, steps)?;
            let mut entries = Vec::with_capacity(refined.len());
            for (rank, p) in refined.iter().enumerate() {
                let file = format!("{}/{rank:04}.png", img.data.name);
                save_mask(&p.mask, &root.join(&file))?;
                entries.push(RefinedEntry { mask_png: file, score: p.score, level: p.level, source: p.source });
            }
            let index = RefinedIndex { image: img.data.name.clone(), proposals: entries };
            write_json(&index, &root.join(format!("{}.json", img.data.name)))?;
            Ok(refined.len())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(counts.into_iter().sum())
}

/// Evaluates coarse and refined proposals and writes `eval.json` and
/// `eval.txt` to the output directory.
pub fn cmd_eval(cfg: &RunConfig, postprocess: bool) -> Result<EvalReport> {
    let images = load_prepared(cfg)?;
    let weights = load_classifier(cfg, &images)?;
    let report = evaluate(cfg, &images, &weights, postprocess, AiouMode::Greedy)?;
    let out = output_dir(cfg);
    write_json(&report, &out.join("eval.json"))?;
    crate::formats::write_file(&out.join("eval.txt"), report.to_table().as_bytes())?;
    Ok(report)
}

/// Writes same-segment labels of adjacent pixel pairs of a GT manifest as an
/// FMAP with one channel per pair direction.
pub fn cmd_affinity(gt_manifest: &Path, connectivity: Connectivity, out: &Path) -> Result<FeatureMap> {
    let manifest: GtManifest = read_json(gt_manifest)?;
    let image = load_image(&sibling(gt_manifest, &manifest.image))?;
    let objects = load_gt(gt_manifest, image.width(), image.height())?;
    let labels = affinity_labels(&objects, image.width(), image.height(), connectivity)?;
    let (dim, data) = labels.to_channels();
    let fm = FeatureMap::new(image.width(), image.height(), dim, data)?;
    write_feature_map(&fm, out)?;
    Ok(fm)
}
