//! Felzenszwalb–Huttenlocher graph segmentation with DeepFH edge weights.
//!
//! Pixels are graph nodes, lattice neighbors are joined by edges weighted with
//! [`delta_deepfh`](crate::distance::delta_deepfh) (or the plain color distance
//! when no features are given). Edges are visited in non-decreasing weight
//! order and two components `A`, `B` merge when
//!
//! ```text
//! w ≤ min(Int(A) + k/|A|, Int(B) + k/|B|)
//! ```
//!
//! where `Int(C)` is the largest edge weight merged into `C`. A second pass over
//! the same order absorbs components smaller than `min_size`.

use alloc::vec::Vec;

use crate::distance::{blend, delta_fh, try_delta_cos, DEGENERATE_COSINE};
use crate::dsu::DisjointSet;
use crate::error::{Error, Result};
use crate::raster::{check_dims, FeatureMap, LabelMap, RgbImage};

/// Lattice neighborhood used to build the pixel graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(try_from = "u32", into = "u32"))]
pub enum Connectivity {
    Four,
    Eight,
}

impl TryFrom<u32> for Connectivity {
    type Error = Error;

    fn try_from(n: u32) -> Result<Self> {
        Self::from_count(n)
    }
}

impl From<Connectivity> for u32 {
    fn from(c: Connectivity) -> u32 {
        c.count()
    }
}

impl Connectivity {
    pub fn from_count(n: u32) -> Result<Self> {
        match n {
            4 => Ok(Self::Four),
            8 => Ok(Self::Eight),
            other => Err(Error::InvalidParameter(alloc::format!("connectivity must be 4 or 8, got {other}"))),
        }
    }

    pub fn count(self) -> u32 {
        match self {
            Self::Four => 4,
            Self::Eight => 8,
        }
    }

    /// Forward neighbor offsets `(dx, dy)`; every one yields a larger pixel index.
    pub fn forward_offsets(self) -> &'static [(isize, isize)] {
        match self {
            Self::Four => &[(1, 0), (0, 1)],
            Self::Eight => &[(1, 0), (0, 1), (1, 1), (-1, 1)],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct FhParams {
    /// Merge threshold scale; larger values give fewer, larger superpixels.
    pub k: f64,
    /// Weight of the feature cosine distance in the blended edge weight.
    pub alpha: f64,
    pub min_size: usize,
    pub connectivity: Connectivity,
    /// Gaussian pre-smoothing of the color channels, in pixels.
    pub sigma: f64,
}

impl Default for FhParams {
    fn default() -> Self {
        Self { k: 1.0, alpha: 0.2, min_size: 20, connectivity: Connectivity::Eight, sigma: 0.8 }
    }
}

impl FhParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.k > 0.0 && self.k.is_finite()) {
            return Err(Error::InvalidParameter(alloc::format!("k must be positive, got {}", self.k)));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidParameter(alloc::format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidParameter(alloc::format!("sigma must be non-negative, got {}", self.sigma)));
        }
        Ok(())
    }

    pub fn with_k(self, k: f64) -> Self {
        Self { k, ..self }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub a: u32,
    pub b: u32,
    pub w: f64,
}

/// Lattice edges sorted by `(w, a, b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeList {
    pub width: usize,
    pub height: usize,
    pub edges: Vec<Edge>,
    /// Pairs whose cosine term fell back to the neutral value because a
    /// feature vector was zero.
    pub degenerate_pairs: usize,
}

impl EdgeList {
    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let len = libm::ceil(sigma * 4.0) as usize + 1;
    let mut k: Vec<f64> = (0..len)
        .map(|i| {
            let t = i as f64 / sigma;
            libm::exp(-0.5 * t * t)
        })
        .collect();
    let sum = 2.0 * k.iter().sum::<f64>() - k[0];
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Separable Gaussian blur of the color channels with clamped borders.
/// `sigma` below 0.01 returns the image unchanged.
pub fn smooth(img: &RgbImage, sigma: f64) -> RgbImage {
    if sigma < 0.01 || img.is_empty() {
        return img.clone();
    }
    let kernel = gaussian_kernel(sigma);
    let (w, h) = (img.width(), img.height());
    let src = img.data();
    let mut tmp = alloc::vec![0.0f64; w * h * 3];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let mut acc = kernel[0] * src[(y * w + x) * 3 + c] as f64;
                for (r, kv) in kernel.iter().enumerate().skip(1) {
                    let l = x.saturating_sub(r);
                    let rr = (x + r).min(w - 1);
                    acc += kv * (src[(y * w + l) * 3 + c] as f64 + src[(y * w + rr) * 3 + c] as f64);
                }
                tmp[(y * w + x) * 3 + c] = acc;
            }
        }
    }
    let mut out = Vec::with_capacity(w * h * 3);
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let mut acc = kernel[0] * tmp[(y * w + x) * 3 + c];
                for (r, kv) in kernel.iter().enumerate().skip(1) {
                    let u = y.saturating_sub(r);
                    let d = (y + r).min(h - 1);
                    acc += kv * (tmp[(u * w + x) * 3 + c] + tmp[(d * w + x) * 3 + c]);
                }
                out.push(acc.clamp(0.0, 1.0) as f32);
            }
        }
    }
    RgbImage::new(w, h, out).expect("blur preserves shape and range")
}

/// Builds the sorted, weighted lattice graph of `img`.
pub fn build_edges(img: &RgbImage, features: Option<&FeatureMap>, params: &FhParams) -> Result<EdgeList> {
    params.validate()?;
    if let Some(fm) = features {
        check_dims("feature map", (img.width(), img.height()), (fm.width(), fm.height()))?;
    }
    let smoothed = smooth(img, params.sigma);
    let (w, h) = (img.width(), img.height());
    let offsets = params.connectivity.forward_offsets();
    let mut edges = Vec::with_capacity(w * h * offsets.len());
    let mut degenerate_pairs = 0;
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            for &(dx, dy) in offsets {
                let nx = x as isize + dx;
                let ny = y as isize + dy;
                if nx < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                let color = delta_fh(smoothed.pixel(i), smoothed.pixel(j));
                let weight = match features {
                    Some(fm) => {
                        let cos = try_delta_cos(fm.feature(i), fm.feature(j)).unwrap_or_else(|| {
                            degenerate_pairs += 1;
                            DEGENERATE_COSINE
                        });
                        blend(color, cos, params.alpha)
                    }
                    None => color,
                };
                edges.push(Edge { a: i as u32, b: j as u32, w: weight });
            }
        }
    }
    edges.sort_unstable_by(|p, q| p.w.total_cmp(&q.w).then(p.a.cmp(&q.a)).then(p.b.cmp(&q.b)));
    Ok(EdgeList { width: w, height: h, edges, degenerate_pairs })
}

/// Runs the merge pass and the `min_size` pass over a sorted edge list.
pub fn segment_edges(graph: &EdgeList, k: f64, min_size: usize) -> LabelMap {
    let n = graph.width * graph.height;
    let mut sets = DisjointSet::new(n);
    for e in &graph.edges {
        let ra = sets.find(e.a);
        let rb = sets.find(e.b);
        if ra == rb {
            continue;
        }
        let ta = sets.internal(ra) + k / sets.size(ra) as f64;
        let tb = sets.internal(rb) + k / sets.size(rb) as f64;
        if e.w <= ta.min(tb) {
            sets.union(ra, rb, e.w);
        }
    }
    if min_size > 1 {
        for e in &graph.edges {
            let ra = sets.find(e.a);
            let rb = sets.find(e.b);
            if ra != rb && ((sets.size(ra) as usize) < min_size || (sets.size(rb) as usize) < min_size) {
                sets.union(ra, rb, e.w);
            }
        }
    }
    let roots: Vec<usize> = (0..n as u32).map(|i| sets.find(i) as usize).collect();
    LabelMap::from_bounded_ids(graph.width, graph.height, &roots, n)
}

/// Segments `img` into superpixels. With `features`, edge weights blend color
/// and feature cosine distance by `params.alpha`.
pub fn segment(img: &RgbImage, features: Option<&FeatureMap>, params: &FhParams) -> Result<LabelMap> {
    let graph = build_edges(img, features, params)?;
    Ok(segment_edges(&graph, params.k, params.min_size))
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct CalibrationConfig {
    pub k_lo: f64,
    pub k_hi: f64,
    /// Relative tolerance on the mean superpixel count.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self { k_lo: 1e-4, k_hi: 10.0, tolerance: 0.10, max_iterations: 20 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub params: FhParams,
    pub mean_count: f64,
    pub iterations: usize,
    /// `false` when the target was not reached within tolerance; `params` then
    /// holds the best `k` seen.
    pub reached: bool,
}

/// Searches `k` so that the mean superpixel count over `inputs` is within
/// tolerance of `target`. The template's own `k` is tried first; afterwards a
/// bisection in log-space runs over `[k_lo, k_hi]`.
pub fn calibrate(
    inputs: &[(&RgbImage, Option<&FeatureMap>)],
    target: usize,
    template: &FhParams,
    config: &CalibrationConfig,
) -> Result<Calibration> {
    if inputs.is_empty() {
        return Err(Error::EmptyInput("calibration image set"));
    }
    if target == 0 {
        return Err(Error::InvalidParameter("target count must be positive".into()));
    }
    if !(config.k_lo > 0.0 && config.k_hi > config.k_lo) {
        return Err(Error::InvalidParameter("calibration bounds must satisfy 0 < k_lo < k_hi".into()));
    }
    let graphs = inputs
        .iter()
        .map(|(img, fm)| build_edges(img, *fm, template))
        .collect::<Result<Vec<_>>>()?;
    let mean_count = |k: f64| {
        let total: usize = graphs.iter().map(|g| segment_edges(g, k, template.min_size).count()).sum();
        total as f64 / graphs.len() as f64
    };
    let target_f = target as f64;
    let within = |c: f64| (c - target_f).abs() <= config.tolerance * target_f;

    let mut best_k = template.k;
    let mut best = mean_count(best_k);
    let mut iterations = 1;
    if !within(best) {
        let (mut lo, mut hi) = (libm::log(config.k_lo), libm::log(config.k_hi));
        for _ in 0..config.max_iterations {
            let mid = 0.5 * (lo + hi);
            let k = libm::exp(mid);
            let c = mean_count(k);
            iterations += 1;
            if (c - target_f).abs() < (best - target_f).abs() {
                best = c;
                best_k = k;
            }
            if within(c) {
                break;
            }
            // Counts fall as k grows.
            if c > target_f {
                lo = mid;
            } else {
                hi = mid;
            }
        }
    }
    Ok(Calibration { params: template.with_k(best_k), mean_count: best, iterations, reached: within(best) })
}

/// Geometric interpolation of superpixel targets from the finest level
/// (`finest`, most superpixels) to the coarsest (`coarsest`).
pub fn geometric_targets(finest: usize, coarsest: usize, levels: usize) -> Vec<usize> {
    match levels {
        0 => Vec::new(),
        1 => alloc::vec![finest],
        n => (0..n)
            .map(|i| {
                let t = i as f64 / (n - 1) as f64;
                libm::round(finest as f64 * libm::pow(coarsest as f64 / finest as f64, t)) as usize
            })
            .collect(),
    }
}
