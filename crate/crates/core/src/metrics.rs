//! Proposal and segmentation evaluation: AR@n, boundary recall,
//! undersegmentation and oversegmentation error, achievable IoU (AIoU),
//! average best IoU (AVGIoU) and efficiency.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::groundtruth::{exhaustive_gt_set, greedy_gt_set, GtObject};
use crate::raster::{check_dims, mask_iou, BinaryMask, LabelMap};

/// Upper area bound (exclusive) of small objects.
pub const SMALL_AREA: u64 = 32 * 32;
/// Upper area bound (exclusive) of medium objects.
pub const MEDIUM_AREA: u64 = 96 * 96;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct MetricsConfig {
    pub ar_iou_thresholds: Vec<f64>,
    pub budgets: Vec<usize>,
    /// Chebyshev tolerance of boundary recall, in pixels.
    pub boundary_tolerance: usize,
    /// Minimum fraction of a superpixel inside a segment to count it as a
    /// fragment of that segment.
    pub oe_overlap_fraction: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            ar_iou_thresholds: (0..10).map(|i| (50 + 5 * i) as f64 / 100.0).collect(),
            budgets: vec![10, 100, 1000],
            boundary_tolerance: 2,
            oe_overlap_fraction: 0.05,
        }
    }
}

impl MetricsConfig {
    pub fn validate(&self) -> Result<()> {
        let t = &self.ar_iou_thresholds;
        if t.is_empty() || t.windows(2).any(|p| p[0] >= p[1]) || t[0] <= 0.0 || t[t.len() - 1] > 1.0 {
            return Err(Error::InvalidParameter("AR thresholds must be strictly increasing within (0, 1]".into()));
        }
        if self.budgets.is_empty() || self.budgets.contains(&0) {
            return Err(Error::InvalidParameter("proposal budgets must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum SizeClass {
    Small,
    Medium,
    Large,
}

impl SizeClass {
    pub fn of_area(area: u64) -> Self {
        if area < SMALL_AREA {
            Self::Small
        } else if area < MEDIUM_AREA {
            Self::Medium
        } else {
            Self::Large
        }
    }
}

/// Average recall at one proposal budget; size classes without objects are `None`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BudgetRecall {
    pub budget: usize,
    pub overall: f64,
    pub small: Option<f64>,
    pub medium: Option<f64>,
    pub large: Option<f64>,
}

/// Proposals of one image in descending score order, and its objects.
#[derive(Debug, Clone, Copy)]
pub struct ImageCase<'a> {
    pub proposals: &'a [&'a BinaryMask],
    pub objects: &'a [&'a BinaryMask],
}

fn iou_matrix(case: &ImageCase<'_>, limit: usize) -> Result<Vec<Vec<f64>>> {
    case.proposals[..limit.min(case.proposals.len())]
        .iter()
        .map(|p| case.objects.iter().map(|g| mask_iou(p, g)).collect())
        .collect()
}

/// Matches the top `budget` proposals one-to-one to objects at IoU ≥ `t`,
/// visiting proposals in order and giving each the best unmatched object.
fn matched(ious: &[Vec<f64>], objects: usize, budget: usize, t: f64) -> Vec<bool> {
    let mut taken = vec![false; objects];
    for row in ious.iter().take(budget) {
        let mut best: Option<(usize, f64)> = None;
        for (g, &v) in row.iter().enumerate() {
            if !taken[g] && v >= t && best.is_none_or(|(_, b)| v > b) {
                best = Some((g, v));
            }
        }
        if let Some((g, _)) = best {
            taken[g] = true;
        }
    }
    taken
}

/// AR@n per budget: mean over IoU thresholds of the fraction of objects
/// recalled, pooled over all images.
pub fn average_recall(images: &[ImageCase<'_>], cfg: &MetricsConfig) -> Result<Vec<BudgetRecall>> {
    cfg.validate()?;
    let max_budget = *cfg.budgets.iter().max().unwrap();
    let matrices = images.iter().map(|c| iou_matrix(c, max_budget)).collect::<Result<Vec<_>>>()?;
    let classes: Vec<Vec<SizeClass>> =
        images.iter().map(|c| c.objects.iter().map(|g| SizeClass::of_area(g.area())).collect()).collect();
    let mut totals = [0usize; 3];
    for cls in classes.iter().flatten() {
        totals[*cls as usize] += 1;
    }
    let all: usize = totals.iter().sum();
    let nt = cfg.ar_iou_thresholds.len() as f64;
    Ok(cfg
        .budgets
        .iter()
        .map(|&budget| {
            let mut recalled = [0.0f64; 3];
            for &t in &cfg.ar_iou_thresholds {
                for (m, cls) in matrices.iter().zip(&classes) {
                    for (g, hit) in matched(m, cls.len(), budget, t).into_iter().enumerate() {
                        if hit {
                            recalled[cls[g] as usize] += 1.0;
                        }
                    }
                }
            }
            let ratio = |num: f64, den: usize| (den > 0).then(|| num / (den as f64 * nt));
            BudgetRecall {
                budget,
                overall: ratio(recalled.iter().sum(), all).unwrap_or(0.0),
                small: ratio(recalled[0], totals[0]),
                medium: ratio(recalled[1], totals[1]),
                large: ratio(recalled[2], totals[2]),
            }
        })
        .collect())
}

/// Pixels with a 4-neighbor of a different label.
pub fn boundary_map(lm: &LabelMap) -> Vec<bool> {
    let (w, h) = (lm.width(), lm.height());
    let l = lm.labels();
    let mut b = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if x + 1 < w && l[i] != l[i + 1] {
                b[i] = true;
                b[i + 1] = true;
            }
            if y + 1 < h && l[i] != l[i + w] {
                b[i] = true;
                b[i + w] = true;
            }
        }
    }
    b
}

/// Label map with one label per mask value, for mask-derived boundaries.
pub fn mask_partition(mask: &BinaryMask) -> LabelMap {
    let raw: Vec<u32> = mask.bits().iter().map(|&b| b as u32).collect();
    LabelMap::from_arbitrary(mask.width(), mask.height(), &raw).expect("shape matches")
}

/// Fraction of ground-truth boundary pixels within Chebyshev distance
/// `tolerance` of a predicted boundary pixel. The image frame counts as
/// predicted boundary. A ground truth without boundary pixels scores 1.
pub fn boundary_recall(pred: &LabelMap, gt: &LabelMap, tolerance: usize) -> Result<f64> {
    check_dims("ground-truth partition", (pred.width(), pred.height()), (gt.width(), gt.height()))?;
    let (w, h) = (pred.width(), pred.height());
    let mut predicted = boundary_map(pred);
    for y in 0..h {
        for x in 0..w {
            if x == 0 || y == 0 || x + 1 == w || y + 1 == h {
                predicted[y * w + x] = true;
            }
        }
    }
    let near = dilate_square(&predicted, w, h, tolerance);
    let truth = boundary_map(gt);
    let total = truth.iter().filter(|b| **b).count();
    if total == 0 {
        return Ok(1.0);
    }
    let hit = truth.iter().zip(&near).filter(|(t, n)| **t && **n).count();
    Ok(hit as f64 / total as f64)
}

fn dilate_square(bits: &[bool], w: usize, h: usize, r: usize) -> Vec<bool> {
    let mut rows = vec![false; w * h];
    for y in 0..h {
        let mut prefix = vec![0usize; w + 1];
        for x in 0..w {
            prefix[x + 1] = prefix[x] + bits[y * w + x] as usize;
        }
        for x in 0..w {
            let (lo, hi) = (x.saturating_sub(r), (x + r + 1).min(w));
            rows[y * w + x] = prefix[hi] > prefix[lo];
        }
    }
    let mut out = vec![false; w * h];
    for x in 0..w {
        let mut prefix = vec![0usize; h + 1];
        for y in 0..h {
            prefix[y + 1] = prefix[y] + rows[y * w + x] as usize;
        }
        for y in 0..h {
            let (lo, hi) = (y.saturating_sub(r), (y + r + 1).min(h));
            out[y * w + x] = prefix[hi] > prefix[lo];
        }
    }
    out
}

/// Sparse contingency table: sorted `(superpixel, segment, count)` triples.
fn contingency(lm: &LabelMap, gt: &LabelMap) -> Vec<(u32, u32, u64)> {
    let mut keys: Vec<u64> = lm.labels().iter().zip(gt.labels()).map(|(&s, &g)| (s as u64) << 32 | g as u64).collect();
    keys.sort_unstable();
    let mut out: Vec<(u32, u32, u64)> = Vec::new();
    for k in keys {
        let (s, g) = ((k >> 32) as u32, k as u32);
        match out.last_mut() {
            Some(last) if last.0 == s && last.1 == g => last.2 += 1,
            _ => out.push((s, g, 1)),
        }
    }
    out
}

/// `(1/N) Σ_G Σ_{s ∩ G ≠ ∅} min(|s ∩ G|, |s \ G|)`.
pub fn undersegmentation_error(lm: &LabelMap, gt: &LabelMap) -> Result<f64> {
    check_dims("ground-truth partition", (lm.width(), lm.height()), (gt.width(), gt.height()))?;
    let areas = lm.areas();
    let n = lm.labels().len();
    if n == 0 {
        return Ok(0.0);
    }
    let leak: u64 = contingency(lm, gt).iter().map(|&(s, _, c)| c.min(areas[s as usize] - c)).sum();
    Ok(leak as f64 / n as f64)
}

/// Mean over segments of `(n − 1)/n`, where `n` counts the superpixels with
/// more than `overlap_fraction` of their area inside the segment (at least 1).
pub fn oversegmentation_error(lm: &LabelMap, gt: &LabelMap, overlap_fraction: f64) -> Result<f64> {
    check_dims("ground-truth partition", (lm.width(), lm.height()), (gt.width(), gt.height()))?;
    if gt.count() == 0 {
        return Ok(0.0);
    }
    let areas = lm.areas();
    let mut fragments = vec![0usize; gt.count()];
    for (s, g, c) in contingency(lm, gt) {
        if c as f64 > overlap_fraction * areas[s as usize] as f64 {
            fragments[g as usize] += 1;
        }
    }
    let sum: f64 = fragments.iter().map(|&n| {
        let n = n.max(1) as f64;
        (n - 1.0) / n
    }).sum();
    Ok(sum / gt.count() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AiouMode {
    Greedy,
    Exhaustive { limit: usize },
}

/// Best achievable IoU per object with superpixel unions of `lm`.
pub fn achievable_ious(lm: &LabelMap, objects: &[GtObject], mode: AiouMode) -> Result<Vec<f64>> {
    objects
        .iter()
        .map(|o| match mode {
            AiouMode::Greedy => greedy_gt_set(lm, o).map(|s| s.iou),
            AiouMode::Exhaustive { limit } => exhaustive_gt_set(lm, o, limit).map(|s| s.iou),
        })
        .collect()
}

/// Mean achievable IoU over the objects; 0 without objects.
pub fn aiou(lm: &LabelMap, objects: &[GtObject], mode: AiouMode) -> Result<f64> {
    Ok(mean(&achievable_ious(lm, objects, mode)?))
}

/// Best IoU of any proposal with each object (0 without proposals).
pub fn best_ious(proposals: &[&BinaryMask], objects: &[&BinaryMask]) -> Result<Vec<f64>> {
    objects
        .iter()
        .map(|g| proposals.iter().try_fold(0.0f64, |best, p| Ok(best.max(mask_iou(p, g)?))))
        .collect()
}

/// Mean over all objects of all images of the best proposal IoU.
pub fn avg_iou(images: &[ImageCase<'_>]) -> Result<f64> {
    let mut all = Vec::new();
    for c in images {
        all.extend(best_ious(c.proposals, c.objects)?);
    }
    Ok(mean(&all))
}

/// `AVGIoU / AIoU`, 0 when AIoU is 0.
pub fn efficiency(avg: f64, achievable: f64) -> f64 {
    if achievable > 0.0 {
        avg / achievable
    } else {
        0.0
    }
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

/// Aggregate evaluation of a dataset.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MetricsReport {
    pub ar: Vec<BudgetRecall>,
    pub br: f64,
    pub ue: f64,
    pub oe: f64,
    pub aiou: f64,
    pub avg_iou: f64,
    pub efficiency: f64,
    pub objects: usize,
    pub images: usize,
}
