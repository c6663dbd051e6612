//! Dataset-level composition of segmentation, training, refinement and
//! evaluation. Every stage is parallel over images and merges in input order.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use spxrefine_core::fh::segment;
use spxrefine_core::groundtruth::{greedy_gt_set, gt_partition, GtObject};
use spxrefine_core::metrics::{
    achievable_ious, average_recall, avg_iou, boundary_recall, efficiency, mean, oversegmentation_error,
    undersegmentation_error, AiouMode, ImageCase, MetricsReport,
};
use spxrefine_core::mlp::SpxSample;
use spxrefine_core::pool::{compute_stats, SuperpixelStats};
use spxrefine_core::postprocess::{nms, postprocess_mask, Steps};
use spxrefine_core::refine::{candidate_inputs, refine_batch, CoarseProposal, LevelBundle, SpxClassifier};
use spxrefine_core::{mask_iou, BinaryMask, FeatureMap, LabelMap, RgbImage};

use crate::config::RunConfig;
use crate::error::{Result, ToolkitError};
use crate::formats::read_feature_map;
use crate::image_io::load_image;
use crate::manifest::{load_gt, load_proposals, read_json, sibling, DatasetManifest};
use crate::synth::SynthSample;

/// Everything known about one image before segmentation.
#[derive(Debug, Clone)]
pub struct ImageData {
    pub name: String,
    pub image: RgbImage,
    pub features: Option<FeatureMap>,
    pub objects: Vec<GtObject>,
    pub proposals: Vec<CoarseProposal>,
    /// Proposal manifest the proposals came from, for error messages.
    pub proposals_file: Option<PathBuf>,
}

impl From<SynthSample> for ImageData {
    fn from(s: SynthSample) -> Self {
        Self {
            name: s.name,
            image: s.image,
            features: Some(s.features),
            objects: s.objects,
            proposals: s.proposals,
            proposals_file: None,
        }
    }
}

/// Loads every entry of a dataset manifest and checks dimensions and levels.
pub fn load_dataset(manifest_path: &Path, level_count: usize) -> Result<Vec<ImageData>> {
    let manifest: DatasetManifest = read_json(manifest_path)?;
    manifest
        .images
        .par_iter()
        .enumerate()
        .map(|(i, entry)| {
            let image = load_image(&sibling(manifest_path, &entry.image))?;
            let (w, h) = (image.width(), image.height());
            let features = match &entry.features {
                Some(rel) => {
                    let path = sibling(manifest_path, rel);
                    let fm = read_feature_map(&path)?;
                    if (fm.width(), fm.height()) != (w, h) {
                        return Err(ToolkitError::inconsistent(
                            &path,
                            "header",
                            format!("feature map is {}×{}, image {} is {w}×{h}", fm.width(), fm.height(), entry.image),
                        ));
                    }
                    Some(fm)
                }
                None => None,
            };
            let objects = match &entry.gt {
                Some(rel) => load_gt(&sibling(manifest_path, rel), w, h)?,
                None => Vec::new(),
            };
            let (proposals, proposals_file) = match &entry.proposals {
                Some(rel) => {
                    let path = sibling(manifest_path, rel);
                    (load_proposals(&path, level_count)?, Some(path))
                }
                None => (Vec::new(), None),
            };
            if entry.name.is_empty() {
                return Err(ToolkitError::inconsistent(manifest_path, &format!("images[{i}].name"), "empty name"));
            }
            Ok(ImageData { name: entry.name.clone(), image, features, objects, proposals, proposals_file })
        })
        .collect()
}

/// One label map per configured level.
pub fn segment_levels(cfg: &RunConfig, image: &RgbImage, features: Option<&FeatureMap>) -> Result<Vec<LabelMap>> {
    (0..cfg.levels.len())
        .map(|level| {
            let params = cfg.level_params(level);
            if params.alpha > 0.0 && features.is_none() {
                return Err(ToolkitError::MissingFeatureMap { level, alpha: params.alpha });
            }
            let fm = if params.alpha > 0.0 { features } else { None };
            Ok(segment(image, fm, &params)?)
        })
        .collect()
}

/// An image with its level segmentations, pooled features and superpixel
/// statistics, indexed by level.
#[derive(Debug, Clone)]
pub struct PreparedImage {
    pub data: ImageData,
    pub bundles: Vec<LevelBundle>,
    pub stats: Vec<SuperpixelStats>,
}

fn prepare_one(cfg: &RunConfig, data: ImageData) -> Result<PreparedImage> {
    let features = data
        .features
        .as_ref()
        .ok_or_else(|| ToolkitError::Config(format!("image {}: refinement needs a feature map", data.name)))?;
    let mut bundles = Vec::with_capacity(cfg.levels.len());
    let mut stats = Vec::with_capacity(cfg.levels.len());
    for (level, lm) in segment_levels(cfg, &data.image, Some(features))?.into_iter().enumerate() {
        stats.push(compute_stats(&lm, &data.image)?);
        bundles.push(LevelBundle::new(level, lm, features)?);
    }
    Ok(PreparedImage { data, bundles, stats })
}

/// Segments all levels and pools features for every image.
pub fn prepare(cfg: &RunConfig, images: Vec<ImageData>) -> Result<Vec<PreparedImage>> {
    images.into_par_iter().map(|d| prepare_one(cfg, d)).collect()
}

fn best_object<'a>(mask: &BinaryMask, objects: &'a [GtObject]) -> Result<Option<(&'a GtObject, f64)>> {
    let mut best: Option<(&GtObject, f64)> = None;
    for o in objects {
        let iou = mask_iou(mask, &o.mask)?;
        if best.is_none_or(|(_, b)| iou > b) {
            best = Some((o, iou));
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SampleCounts {
    pub proposals_used: usize,
    pub positives: usize,
    pub negatives_available: usize,
    pub negatives_kept: usize,
}

/// Superpixel samples for classifier training. Each proposal that overlaps a
/// GT object by at least `train.match_iou` contributes its window
/// superpixels, labeled positive when they belong to the object's greedy
/// superpixel set. Negatives are subsampled, seeded, to the configured ratio.
pub fn training_samples(cfg: &RunConfig, images: &[PreparedImage]) -> Result<(Vec<SpxSample>, SampleCounts)> {
    let per_image = images
        .par_iter()
        .map(|img| {
            let (w, h) = (img.data.image.width(), img.data.image.height());
            let mut pos = Vec::new();
            let mut neg = Vec::new();
            let mut used = 0;
            for cp in &img.data.proposals {
                let coarse = cp.threshold_mask(w, h, cfg.refine.coarse_threshold);
                let Some((object, iou)) = best_object(&coarse, &img.data.objects)? else { continue };
                if iou < cfg.train.match_iou {
                    continue;
                }
                let bundle = img.bundles.get(cp.level).ok_or_else(|| level_error(img, cp.level, cfg))?;
                let positive = greedy_gt_set(&bundle.labels, object)?.ids;
                let (ids, inputs) = candidate_inputs(cp, bundle)?;
                used += 1;
                for (id, input) in ids.into_iter().zip(inputs) {
                    let label = positive.binary_search(&id).is_ok();
                    let sample = SpxSample { input, label };
                    if label {
                        pos.push(sample);
                    } else {
                        neg.push(sample);
                    }
                }
            }
            Ok((pos, neg, used))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut counts = SampleCounts::default();
    let mut samples = Vec::new();
    let mut negatives = Vec::new();
    for (pos, neg, used) in per_image {
        counts.proposals_used += used;
        samples.extend(pos);
        negatives.extend(neg);
    }
    counts.positives = samples.len();
    counts.negatives_available = negatives.len();
    let keep = ((samples.len() as f64 * cfg.train.negative_ratio).ceil() as usize).min(negatives.len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    negatives.shuffle(&mut rng);
    negatives.truncate(keep);
    counts.negatives_kept = negatives.len();
    samples.extend(negatives);
    Ok((samples, counts))
}

fn level_error(img: &PreparedImage, level: usize, cfg: &RunConfig) -> ToolkitError {
    let file = img.data.proposals_file.clone().unwrap_or_else(|| PathBuf::from(&img.data.name));
    ToolkitError::inconsistent(&file, "level", format!("level {level} not among the {} configured levels", cfg.levels.len()))
}

/// A ranked output proposal.
#[derive(Debug, Clone, PartialEq)]
pub struct FinalProposal {
    pub mask: BinaryMask,
    pub score: f64,
    pub level: usize,
    /// Index of the coarse proposal it came from.
    pub source: usize,
    /// Classified superpixels before post-processing.
    pub superpixels: Vec<u32>,
}

/// Refines all proposals of an image, applies the selected post-processing
/// steps and ranks by score. NMS runs on the ranked list.
pub fn refine_image<C: SpxClassifier + Sync + ?Sized>(
    cfg: &RunConfig,
    img: &PreparedImage,
    classifier: &C,
    steps: Steps,
) -> Result<Vec<FinalProposal>> {
    let raw = refine_batch(&img.data.proposals, &img.bundles, classifier, cfg.refine.threshold).map_err(|e| {
        let file = img.data.proposals_file.clone().unwrap_or_else(|| PathBuf::from(&img.data.name));
        ToolkitError::inconsistent(&file, "proposals", e.to_string())
    })?;
    let mut out = raw
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mask = postprocess_mask(r, &img.bundles[r.level].labels, &img.stats[r.level], &cfg.postprocess, steps)?;
            Ok(FinalProposal { mask, score: r.score, level: r.level, source: i, superpixels: r.ids.clone() })
        })
        .collect::<Result<Vec<_>>>()?;
    rank(&mut out);
    if steps.nms {
        let masks: Vec<&BinaryMask> = out.iter().map(|p| &p.mask).collect();
        let scores: Vec<f64> = out.iter().map(|p| p.score).collect();
        let keep = nms(&masks, &scores, cfg.postprocess.nms_iou)?;
        let mut kept = keep.into_iter();
        let mut next = kept.next();
        out = out
            .into_iter()
            .enumerate()
            .filter(|(i, _)| {
                let hit = next == Some(*i);
                if hit {
                    next = kept.next();
                }
                hit
            })
            .map(|(_, p)| p)
            .collect();
    }
    Ok(out)
}

fn rank(props: &mut [FinalProposal]) {
    props.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.source.cmp(&b.source)));
}

/// Coarse proposals thresholded and ranked by score.
pub fn coarse_masks(cfg: &RunConfig, data: &ImageData) -> Vec<FinalProposal> {
    let (w, h) = (data.image.width(), data.image.height());
    let mut out: Vec<FinalProposal> = data
        .proposals
        .iter()
        .enumerate()
        .map(|(i, cp)| FinalProposal {
            mask: cp.threshold_mask(w, h, cfg.refine.coarse_threshold),
            score: cp.score,
            level: cp.level,
            source: i,
            superpixels: Vec::new(),
        })
        .collect();
    rank(&mut out);
    out
}

/// Segmentation quality of one level, averaged over images.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelReport {
    pub level: usize,
    pub target: usize,
    pub mean_count: f64,
    pub br: f64,
    pub ue: f64,
    pub oe: f64,
    pub aiou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantReport {
    pub name: String,
    pub report: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub variants: Vec<VariantReport>,
    pub levels: Vec<LevelReport>,
}

impl EvalReport {
    pub fn variant(&self, name: &str) -> Option<&MetricsReport> {
        self.variants.iter().find(|v| v.name == name).map(|v| &v.report)
    }

    /// Aligned plain-text table.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let budgets: Vec<usize> = self.variants.first().map(|v| v.report.ar.iter().map(|r| r.budget).collect()).unwrap_or_default();
        s.push_str(&format!("{:<28}", "variant"));
        for b in &budgets {
            s.push_str(&format!("{:>9}", format!("AR@{b}")));
        }
        s.push_str(&format!("{:>9}{:>9}\n", "AVGIoU", "eff"));
        for v in &self.variants {
            s.push_str(&format!("{:<28}", v.name));
            for r in &v.report.ar {
                s.push_str(&format!("{:>9.4}", r.overall));
            }
            s.push_str(&format!("{:>9.4}{:>9.4}\n", v.report.avg_iou, v.report.efficiency));
        }
        s.push_str(&format!("\n{:<8}{:>8}{:>10}{:>9}{:>9}{:>9}{:>9}\n", "level", "target", "count", "BR", "UE", "OE", "AIoU"));
        for l in &self.levels {
            s.push_str(&format!(
                "{:<8}{:>8}{:>10.1}{:>9.4}{:>9.4}{:>9.4}{:>9.4}\n",
                l.level, l.target, l.mean_count, l.br, l.ue, l.oe, l.aiou
            ));
        }
        s
    }
}

/// Per-image segmentation metrics for each level plus the best achievable
/// IoU of each object over all levels.
struct SegmentationMetrics {
    per_level: Vec<[f64; 5]>,
    achievable: Vec<f64>,
}

fn segmentation_metrics(cfg: &RunConfig, img: &PreparedImage, mode: AiouMode) -> Result<SegmentationMetrics> {
    let (w, h) = (img.data.image.width(), img.data.image.height());
    let gt = gt_partition(&img.data.objects, w, h)?;
    let mut achievable = vec![0.0f64; img.data.objects.len()];
    let mut per_level = Vec::with_capacity(img.bundles.len());
    for bundle in &img.bundles {
        let lm = &bundle.labels;
        let ious = achievable_ious(lm, &img.data.objects, mode)?;
        for (a, v) in achievable.iter_mut().zip(&ious) {
            *a = a.max(*v);
        }
        per_level.push([
            lm.count() as f64,
            boundary_recall(lm, &gt, cfg.metrics.boundary_tolerance)?,
            undersegmentation_error(lm, &gt)?,
            oversegmentation_error(lm, &gt, cfg.metrics.oe_overlap_fraction)?,
            mean(&ious),
        ]);
    }
    Ok(SegmentationMetrics { per_level, achievable })
}

/// Proposal metrics for ranked masks of each image, with segmentation
/// metrics filled in from `seg`.
pub fn evaluate_masks(
    cfg: &RunConfig,
    ranked: &[Vec<&BinaryMask>],
    objects: &[Vec<&BinaryMask>],
    seg: (f64, f64, f64, f64),
) -> Result<MetricsReport> {
    let cases: Vec<ImageCase<'_>> =
        ranked.iter().zip(objects).map(|(p, o)| ImageCase { proposals: p, objects: o }).collect();
    let ar = average_recall(&cases, &cfg.metrics)?;
    let avg = avg_iou(&cases)?;
    let (br, ue, oe, aiou) = seg;
    Ok(MetricsReport {
        ar,
        br,
        ue,
        oe,
        aiou,
        avg_iou: avg,
        efficiency: efficiency(avg, aiou),
        objects: objects.iter().map(Vec::len).sum(),
        images: ranked.len(),
    })
}

pub const VARIANT_COARSE: &str = "coarse";
pub const VARIANT_REFINED: &str = "refined";
pub const VARIANT_FILTER: &str = "refined+filter";
pub const VARIANT_MORPH: &str = "refined+filter+morphology";
pub const VARIANT_FULL: &str = "refined+filter+morphology+nms";

/// Evaluates coarse and refined proposals; with `postprocess` the
/// post-processing steps are added one at a time.
pub fn evaluate<C: SpxClassifier + Sync + ?Sized>(
    cfg: &RunConfig,
    images: &[PreparedImage],
    classifier: &C,
    postprocess: bool,
    mode: AiouMode,
) -> Result<EvalReport> {
    let seg = images.par_iter().map(|img| segmentation_metrics(cfg, img, mode)).collect::<Result<Vec<_>>>()?;
    let levels = (0..cfg.levels.len())
        .map(|l| {
            let col = |k: usize| mean(&seg.iter().map(|s| s.per_level[l][k]).collect::<Vec<_>>());
            LevelReport {
                level: l,
                target: cfg.levels[l].target,
                mean_count: col(0),
                br: col(1),
                ue: col(2),
                oe: col(3),
                aiou: col(4),
            }
        })
        .collect::<Vec<_>>();
    let overall = (
        mean(&levels.iter().map(|l| l.br).collect::<Vec<_>>()),
        mean(&levels.iter().map(|l| l.ue).collect::<Vec<_>>()),
        mean(&levels.iter().map(|l| l.oe).collect::<Vec<_>>()),
        mean(&seg.iter().flat_map(|s| s.achievable.iter().copied()).collect::<Vec<_>>()),
    );

    let mut variants: Vec<(&str, Option<Steps>)> = vec![(VARIANT_COARSE, None), (VARIANT_REFINED, Some(Steps::NONE))];
    if postprocess {
        variants.push((VARIANT_FILTER, Some(Steps { filter: true, morphology: false, nms: false })));
        variants.push((VARIANT_MORPH, Some(Steps { filter: true, morphology: true, nms: false })));
        variants.push((VARIANT_FULL, Some(Steps::ALL)));
    }
    let objects: Vec<Vec<&BinaryMask>> = images.iter().map(|i| i.data.objects.iter().map(|o| &o.mask).collect()).collect();
    let mut reports = Vec::new();
    for (name, steps) in variants {
        let outputs = images
            .par_iter()
            .map(|img| match steps {
                None => Ok(coarse_masks(cfg, &img.data)),
                Some(s) => refine_image(cfg, img, classifier, s),
            })
            .collect::<Result<Vec<_>>>()?;
        let ranked: Vec<Vec<&BinaryMask>> = outputs.iter().map(|o| o.iter().map(|p| &p.mask).collect()).collect();
        let report = evaluate_masks(cfg, &ranked, &objects, overall)?;
        reports.push(VariantReport { name: name.to_string(), report });
    }
    Ok(EvalReport { variants: reports, levels })
}
