//! Refinement of coarse proposal windows into superpixel-precise masks.
//!
//! A 40×40 window is upsampled onto its image rectangle, pooled per
//! superpixel into a mask prior, concatenated with the superpixel's pooled
//! features and classified. The refined mask is the union of the full
//! extents of the object superpixels.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::mlp::MlpWeights;
use crate::pool::{pool_features, pool_scalar, PooledVector};
use crate::raster::{BinaryMask, FeatureMap, LabelMap, Rect};

/// Side length of a coarse proposal window.
pub const WINDOW_SIZE: usize = 40;

#[derive(Debug, Clone, PartialEq)]
pub struct CoarseProposal {
    /// `WINDOW_SIZE × WINDOW_SIZE` object probabilities, row-major.
    pub window: Vec<f64>,
    pub rect: Rect,
    pub level: usize,
    pub score: f64,
}

impl CoarseProposal {
    pub fn new(window: Vec<f64>, rect: Rect, level: usize, score: f64) -> Result<Self> {
        if window.len() != WINDOW_SIZE * WINDOW_SIZE {
            return Err(Error::LengthMismatch {
                what: "proposal window",
                expected: WINDOW_SIZE * WINDOW_SIZE,
                found: window.len(),
            });
        }
        if window.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidParameter("window probabilities must lie in [0, 1]".into()));
        }
        Ok(Self { window, rect, level, score })
    }

    /// Window upsampled to its rectangle (see [`upsample_bilinear`]).
    pub fn upsampled(&self) -> Vec<f64> {
        upsample_window(self)
    }

    /// Upsampled window thresholded at `threshold` (strictly above) and
    /// clipped to the image.
    pub fn threshold_mask(&self, width: usize, height: usize, threshold: f64) -> BinaryMask {
        let up = self.upsampled();
        let r = self.rect;
        BinaryMask::from_fn(width, height, |x, y| {
            let (fx, fy) = (x as i64 - r.x, y as i64 - r.y);
            fx >= 0 && fy >= 0 && (fx as usize) < r.w && (fy as usize) < r.h && up[fy as usize * r.w + fx as usize] > threshold
        })
    }
}

/// Bilinear resize of a `gw × gh` grid to `w × h`, treating samples as cell
/// centers; coordinates beyond the outer centers clamp to the border. Output
/// values are clamped to `[0, 1]`.
pub fn upsample_bilinear(grid: &[f64], gw: usize, gh: usize, w: usize, h: usize) -> Vec<f64> {
    assert_eq!(grid.len(), gw * gh);
    let axis = |n_out: usize, n_in: usize| -> Vec<(usize, usize, f64)> {
        (0..n_out)
            .map(|o| {
                let s = ((o as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).clamp(0.0, (n_in - 1) as f64);
                let i0 = libm::floor(s) as usize;
                let i1 = (i0 + 1).min(n_in - 1);
                (i0, i1, s - i0 as f64)
            })
            .collect()
    };
    let xs = axis(w, gw);
    let ys = axis(h, gh);
    let mut out = Vec::with_capacity(w * h);
    for &(y0, y1, ty) in &ys {
        for &(x0, x1, tx) in &xs {
            let top = grid[y0 * gw + x0] * (1.0 - tx) + grid[y0 * gw + x1] * tx;
            let bottom = grid[y1 * gw + x0] * (1.0 - tx) + grid[y1 * gw + x1] * tx;
            out.push((top * (1.0 - ty) + bottom * ty).clamp(0.0, 1.0));
        }
    }
    out
}

/// Per-pixel probabilities over `cp.rect`, row-major `rect.w × rect.h`.
pub fn upsample_window(cp: &CoarseProposal) -> Vec<f64> {
    upsample_bilinear(&cp.window, WINDOW_SIZE, WINDOW_SIZE, cp.rect.w, cp.rect.h)
}

/// Segmentation and pooled features of one pyramid level, shared by all of
/// that level's proposals.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelBundle {
    pub level: usize,
    pub labels: LabelMap,
    /// Indexed by superpixel id.
    pub features: Vec<PooledVector>,
    pub dim: usize,
}

impl LevelBundle {
    pub fn new(level: usize, labels: LabelMap, fm: &FeatureMap) -> Result<Self> {
        let features = pool_features(&labels, fm)?;
        Ok(Self { level, labels, features, dim: fm.dim() })
    }
}

/// Anything that scores superpixels as object parts from `[prior | features]`.
pub trait SpxClassifier {
    /// Required input length, if fixed.
    fn input_dim(&self) -> Option<usize>;

    /// Object probability for each candidate superpixel.
    fn probabilities(&self, ids: &[u32], inputs: &[Vec<f32>]) -> Result<Vec<f64>>;
}

impl SpxClassifier for MlpWeights<f32> {
    fn input_dim(&self) -> Option<usize> {
        Some(MlpWeights::input_dim(self))
    }

    fn probabilities(&self, _ids: &[u32], inputs: &[Vec<f32>]) -> Result<Vec<f64>> {
        Ok(self.forward(inputs)?.into_iter().map(f64::from).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefinedProposal {
    /// Superpixels classified as object, ascending.
    pub ids: Vec<u32>,
    pub mask: BinaryMask,
    pub score: f64,
    pub level: usize,
    /// `(id, probability)` for every superpixel that intersected the window.
    pub candidates: Vec<(u32, f64)>,
}

/// Classifier inputs `[prior | pooled features]` for the superpixels that
/// intersect the proposal window.
pub fn candidate_inputs(cp: &CoarseProposal, bundle: &LevelBundle) -> Result<(Vec<u32>, Vec<Vec<f32>>)> {
    if cp.level != bundle.level {
        return Err(Error::LevelMismatch { proposal: cp.level, bundle: bundle.level });
    }
    let priors = pool_scalar(&bundle.labels, &upsample_window(cp), cp.rect)?;
    let mut ids = Vec::with_capacity(priors.len());
    let mut inputs = Vec::with_capacity(priors.len());
    for p in priors {
        let mut input = Vec::with_capacity(1 + bundle.dim);
        input.push(p.values[0] as f32);
        input.extend(bundle.features[p.id as usize].values.iter().map(|&v| v as f32));
        ids.push(p.id);
        inputs.push(input);
    }
    Ok((ids, inputs))
}

/// Refines one coarse proposal against its level's bundle.
pub fn refine<C: SpxClassifier + ?Sized>(
    cp: &CoarseProposal,
    bundle: &LevelBundle,
    classifier: &C,
    threshold: f64,
) -> Result<RefinedProposal> {
    if let Some(dim) = classifier.input_dim() {
        if dim != 1 + bundle.dim {
            return Err(Error::LengthMismatch { what: "classifier input", expected: 1 + bundle.dim, found: dim });
        }
    }
    let (ids, inputs) = candidate_inputs(cp, bundle)?;
    let probs = classifier.probabilities(&ids, &inputs)?;
    if probs.len() != ids.len() {
        return Err(Error::LengthMismatch { what: "classifier output", expected: ids.len(), found: probs.len() });
    }
    let selected: Vec<u32> = ids.iter().zip(&probs).filter(|(_, &p)| p > threshold).map(|(&id, _)| id).collect();
    Ok(RefinedProposal {
        mask: bundle.labels.mask_of(&selected),
        ids: selected,
        score: cp.score,
        level: cp.level,
        candidates: ids.into_iter().zip(probs).collect(),
    })
}

/// Refines every proposal with the bundle of its level. Output order follows
/// input order; all failures are collected with their indices.
pub fn refine_batch<C: SpxClassifier + ?Sized>(
    proposals: &[CoarseProposal],
    bundles: &[LevelBundle],
    classifier: &C,
    threshold: f64,
) -> Result<Vec<RefinedProposal>> {
    let mut out = Vec::with_capacity(proposals.len());
    let mut failures = Vec::new();
    for (i, cp) in proposals.iter().enumerate() {
        let result = match bundles.iter().find(|b| b.level == cp.level) {
            Some(bundle) => refine(cp, bundle, classifier, threshold),
            None => Err(Error::LevelMismatch { proposal: cp.level, bundle: usize::MAX }),
        };
        match result {
            Ok(r) => out.push(r),
            Err(e) => failures.push((i, e)),
        }
    }
    if failures.is_empty() {
        Ok(out)
    } else {
        Err(Error::Batch(failures))
    }
}
