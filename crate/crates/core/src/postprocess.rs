//! Proposal post-processing: a bilateral filter over the superpixel adjacency
//! graph, morphological opening and closing, and mask NMS.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::pool::SuperpixelStats;
use crate::raster::{mask_iou, BinaryMask, LabelMap};
use crate::refine::RefinedProposal;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct PostprocessConfig {
    /// Centroid distance scale in pixels.
    pub spatial_sigma: f64,
    /// Mean-color distance scale (colors in `[0, 1]`).
    pub color_sigma: f64,
    pub filter_threshold: f64,
    /// Disk radius for opening and closing; 0 disables them.
    pub radius: usize,
    pub nms_iou: f64,
}

impl Default for PostprocessConfig {
    fn default() -> Self {
        Self { spatial_sigma: 30.0, color_sigma: 0.1, filter_threshold: 0.5, radius: 2, nms_iou: 0.95 }
    }
}

impl PostprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.spatial_sigma > 0.0 && self.color_sigma > 0.0) {
            return Err(Error::InvalidParameter("filter sigmas must be positive".into()));
        }
        if !(self.filter_threshold > 0.0 && self.filter_threshold < 1.0) {
            return Err(Error::InvalidParameter("filter threshold must lie in (0, 1)".into()));
        }
        if !(self.nms_iou > 0.0 && self.nms_iou <= 1.0) {
            return Err(Error::InvalidParameter("NMS IoU must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

/// Which post-processing steps to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Steps {
    pub filter: bool,
    pub morphology: bool,
    pub nms: bool,
}

impl Steps {
    pub const NONE: Steps = Steps { filter: false, morphology: false, nms: false };
    pub const ALL: Steps = Steps { filter: true, morphology: true, nms: true };
}

/// Joint spatial/color weighted mean of each superpixel's probability with its
/// 1-ring neighbors (the superpixel itself has weight 1).
pub fn spx_bilateral_filter(probs: &[f64], stats: &SuperpixelStats, cfg: &PostprocessConfig) -> Result<Vec<f64>> {
    if probs.len() != stats.len() {
        return Err(Error::LengthMismatch { what: "superpixel probabilities", expected: stats.len(), found: probs.len() });
    }
    let two_ss = 2.0 * cfg.spatial_sigma * cfg.spatial_sigma;
    let two_cs = 2.0 * cfg.color_sigma * cfg.color_sigma;
    Ok((0..stats.len())
        .map(|s| {
            let (mut num, mut den) = (probs[s], 1.0);
            let (cs, ms) = (stats.centroids[s], stats.mean_colors[s]);
            for &n in stats.neighbors(s as u32) {
                let n = n as usize;
                let (cn, mn) = (stats.centroids[n], stats.mean_colors[n]);
                let d_space = sq(cs[0] - cn[0]) + sq(cs[1] - cn[1]);
                let d_color = (0..3).map(|c| sq(ms[c] - mn[c])).sum::<f64>();
                let w = libm::exp(-d_space / two_ss) * libm::exp(-d_color / two_cs);
                num += w * probs[n];
                den += w;
            }
            (num / den).clamp(0.0, 1.0)
        })
        .collect())
}

#[inline]
fn sq(v: f64) -> f64 {
    v * v
}

fn disk(radius: usize) -> Vec<(isize, isize)> {
    let r = radius as isize;
    let mut offsets = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if dx * dx + dy * dy <= r * r {
                offsets.push((dx, dy));
            }
        }
    }
    offsets
}

/// Morphology with the outside of the image ignored: erosion only inspects
/// in-image pixels and dilation only reaches in-image pixels.
fn morph(mask: &BinaryMask, se: &[(isize, isize)], erode: bool) -> BinaryMask {
    let (w, h) = (mask.width() as isize, mask.height() as isize);
    BinaryMask::from_fn(mask.width(), mask.height(), |x, y| {
        let mut hits = se.iter().filter_map(|&(dx, dy)| {
            let (nx, ny) = (x as isize + dx, y as isize + dy);
            (nx >= 0 && ny >= 0 && nx < w && ny < h).then(|| mask.get(nx as usize, ny as usize))
        });
        if erode {
            hits.all(|b| b)
        } else {
            hits.any(|b| b)
        }
    })
}

pub fn opening(mask: &BinaryMask, radius: usize) -> BinaryMask {
    if radius == 0 {
        return mask.clone();
    }
    let se = disk(radius);
    morph(&morph(mask, &se, true), &se, false)
}

pub fn closing(mask: &BinaryMask, radius: usize) -> BinaryMask {
    if radius == 0 {
        return mask.clone();
    }
    let se = disk(radius);
    morph(&morph(mask, &se, false), &se, true)
}

/// Opening followed by closing with a disk of `radius`.
pub fn open_close(mask: &BinaryMask, radius: usize) -> BinaryMask {
    closing(&opening(mask, radius), radius)
}

/// Greedy NMS over masks. Visits proposals by descending score (stable on
/// input order) and drops any whose IoU with an already kept mask is at least
/// `iou_threshold`. Returns kept indices in visiting order.
pub fn nms(masks: &[&BinaryMask], scores: &[f64], iou_threshold: f64) -> Result<Vec<usize>> {
    if masks.len() != scores.len() {
        return Err(Error::LengthMismatch { what: "scores", expected: masks.len(), found: scores.len() });
    }
    let mut order: Vec<usize> = (0..masks.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        let mut keep = true;
        for &k in &kept {
            if mask_iou(masks[i], masks[k])? >= iou_threshold {
                keep = false;
                break;
            }
        }
        if keep {
            kept.push(i);
        }
    }
    Ok(kept)
}

/// Filter then morphology for a single refined proposal. Without the filter
/// step the mask is the refined superpixel union.
pub fn postprocess_mask(
    refined: &RefinedProposal,
    labels: &LabelMap,
    stats: &SuperpixelStats,
    cfg: &PostprocessConfig,
    steps: Steps,
) -> Result<BinaryMask> {
    let mut mask = if steps.filter {
        let mut probs = vec![0.0; stats.len()];
        for &(id, p) in &refined.candidates {
            probs[id as usize] = p;
        }
        let filtered = spx_bilateral_filter(&probs, stats, cfg)?;
        let ids: Vec<u32> = (0..filtered.len() as u32).filter(|&s| filtered[s as usize] > cfg.filter_threshold).collect();
        labels.mask_of(&ids)
    } else {
        refined.mask.clone()
    };
    if steps.morphology {
        mask = open_close(&mask, cfg.radius);
    }
    Ok(mask)
}
