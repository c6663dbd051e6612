//! Superpixel statistics and superpixel pooling.
//!
//! Mask priors are pooled per proposal over the window intersection only;
//! features are pooled over each superpixel's full extent and shared by all
//! proposals of the same level.

use alloc::collections::BTreeSet;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::raster::{check_dims, FeatureMap, LabelMap, Rect, RgbImage};

/// Cached per-superpixel aggregates of a label map.
#[derive(Debug, Clone, PartialEq)]
pub struct SuperpixelStats {
    pub areas: Vec<u64>,
    pub mean_colors: Vec<[f64; 3]>,
    pub bboxes: Vec<Rect>,
    /// Mean pixel coordinates `(x, y)`.
    pub centroids: Vec<[f64; 2]>,
    /// Unordered adjacent pairs `(a, b)` with `a < b`, sorted.
    pub adjacency: Vec<(u32, u32)>,
    neighbors: Vec<Vec<u32>>,
}

impl SuperpixelStats {
    pub fn len(&self) -> usize {
        self.areas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.areas.is_empty()
    }

    /// Sorted ids of the 4-connected neighbors of `id`.
    pub fn neighbors(&self, id: u32) -> &[u32] {
        &self.neighbors[id as usize]
    }
}

/// Exact per-label aggregates plus the 4-connected adjacency graph.
pub fn compute_stats(lm: &LabelMap, img: &RgbImage) -> Result<SuperpixelStats> {
    lm.same_shape(img.width(), img.height(), "image")?;
    let n = lm.count();
    let (w, h) = (lm.width(), lm.height());
    let mut areas = vec![0u64; n];
    let mut color_sums = vec![[0.0f64; 3]; n];
    let mut coord_sums = vec![[0.0f64; 2]; n];
    let mut extents = vec![[usize::MAX, usize::MAX, 0usize, 0usize]; n];
    let mut pairs = BTreeSet::new();
    let labels = lm.labels();
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let l = labels[i] as usize;
            areas[l] += 1;
            let p = img.pixel(i);
            for c in 0..3 {
                color_sums[l][c] += p[c] as f64;
            }
            coord_sums[l][0] += x as f64;
            coord_sums[l][1] += y as f64;
            let e = &mut extents[l];
            e[0] = e[0].min(x);
            e[1] = e[1].min(y);
            e[2] = e[2].max(x);
            e[3] = e[3].max(y);
            if x + 1 < w && labels[i + 1] != labels[i] {
                pairs.insert(ordered(labels[i], labels[i + 1]));
            }
            if y + 1 < h && labels[i + w] != labels[i] {
                pairs.insert(ordered(labels[i], labels[i + w]));
            }
        }
    }
    let mut neighbors = vec![Vec::new(); n];
    for &(a, b) in &pairs {
        neighbors[a as usize].push(b);
        neighbors[b as usize].push(a);
    }
    neighbors.iter_mut().for_each(|v| v.sort_unstable());
    let mean_colors = color_sums
        .iter()
        .zip(&areas)
        .map(|(s, &a)| s.map(|v| v / a as f64))
        .collect();
    let centroids = coord_sums.iter().zip(&areas).map(|(s, &a)| s.map(|v| v / a as f64)).collect();
    let bboxes = extents
        .iter()
        .map(|e| Rect { x: e[0] as i64, y: e[1] as i64, w: e[2] - e[0] + 1, h: e[3] - e[1] + 1 })
        .collect();
    Ok(SuperpixelStats {
        areas,
        mean_colors,
        bboxes,
        centroids,
        adjacency: pairs.into_iter().collect(),
        neighbors,
    })
}

fn ordered(a: u32, b: u32) -> (u32, u32) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Pooled value(s) of one superpixel.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledVector {
    pub id: u32,
    pub values: Vec<f64>,
    /// Number of pixels averaged.
    pub support: u64,
}

/// Mean of `field` per superpixel over `window ∩ image`.
///
/// `field` holds `window.w × window.h` values row-major, covering the whole
/// window including any part outside the image. Superpixels that do not reach
/// into the window are absent; the result is sorted by id.
pub fn pool_scalar(lm: &LabelMap, field: &[f64], window: Rect) -> Result<Vec<PooledVector>> {
    if field.len() != window.area() {
        return Err(Error::LengthMismatch { what: "window field", expected: window.area(), found: field.len() });
    }
    let clip = window.clip(lm.width(), lm.height()).ok_or(Error::EmptyWindow)?;
    let mut sums = vec![0.0f64; lm.count()];
    let mut support = vec![0u64; lm.count()];
    for y in clip.y as usize..clip.y as usize + clip.h {
        let fy = (y as i64 - window.y) as usize;
        for x in clip.x as usize..clip.x as usize + clip.w {
            let fx = (x as i64 - window.x) as usize;
            let l = lm.label_at(x, y) as usize;
            sums[l] += field[fy * window.w + fx];
            support[l] += 1;
        }
    }
    Ok(support
        .iter()
        .enumerate()
        .filter(|(_, &s)| s > 0)
        .map(|(id, &s)| PooledVector { id: id as u32, values: vec![sums[id] / s as f64], support: s })
        .collect())
}

/// Channel-wise mean of the feature map over every superpixel, indexed by id.
pub fn pool_features(lm: &LabelMap, fm: &FeatureMap) -> Result<Vec<PooledVector>> {
    check_dims("feature map", (lm.width(), lm.height()), (fm.width(), fm.height()))?;
    let dim = fm.dim();
    let mut sums = vec![0.0f64; lm.count() * dim];
    let mut support = vec![0u64; lm.count()];
    for (i, &l) in lm.labels().iter().enumerate() {
        let l = l as usize;
        support[l] += 1;
        for (acc, &v) in sums[l * dim..(l + 1) * dim].iter_mut().zip(fm.feature(i)) {
            *acc += v as f64;
        }
    }
    Ok(support
        .iter()
        .enumerate()
        .map(|(id, &s)| PooledVector {
            id: id as u32,
            values: sums[id * dim..(id + 1) * dim].iter().map(|v| v / s as f64).collect(),
            support: s,
        })
        .collect())
}
