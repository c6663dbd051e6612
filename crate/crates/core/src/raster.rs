//! Raster types shared by every module: color images, feature maps, label
//! maps, binary masks and rectangles.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Three-channel color image with channels in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::LengthMismatch {
                what: "rgb image data",
                expected: width * height * 3,
                found: data.len(),
            });
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidParameter(alloc::format!(
                "color channel {v} outside [0, 1]"
            )));
        }
        Ok(Self { width, height, data })
    }

    /// Image filled with a single color.
    pub fn filled(width: usize, height: usize, color: [f32; 3]) -> Self {
        let data = (0..width * height).flat_map(|_| color).collect();
        Self { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn pixel(&self, index: usize) -> [f32; 3] {
        let p = &self.data[index * 3..index * 3 + 3];
        [p[0], p[1], p[2]]
    }

    #[inline]
    pub fn pixel_at(&self, x: usize, y: usize) -> [f32; 3] {
        self.pixel(y * self.width + x)
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, color: [f32; 3]) {
        let i = (y * self.width + x) * 3;
        for (c, v) in color.iter().enumerate() {
            self.data[i + c] = v.clamp(0.0, 1.0);
        }
    }
}

/// Per-pixel `dim`-dimensional feature vectors, row-major, channel-fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    width: usize,
    height: usize,
    dim: usize,
    data: Vec<f32>,
}

impl FeatureMap {
    pub fn new(width: usize, height: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("feature dim must be at least 1".into()));
        }
        if data.len() != width * height * dim {
            return Err(Error::LengthMismatch {
                what: "feature map data",
                expected: width * height * dim,
                found: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("feature map holds non-finite values".into()));
        }
        Ok(Self { width, height, dim, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn feature(&self, index: usize) -> &[f32] {
        &self.data[index * self.dim..(index + 1) * self.dim]
    }
}

/// A partition of the pixel lattice into superpixels with dense ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    width: usize,
    height: usize,
    labels: Vec<u32>,
    count: usize,
}

impl LabelMap {
    /// Validates that `labels` are dense in `[0, count)` with every id used.
    pub fn new(width: usize, height: usize, labels: Vec<u32>, count: usize) -> Result<Self> {
        if labels.len() != width * height {
            return Err(Error::LengthMismatch {
                what: "label map",
                expected: width * height,
                found: labels.len(),
            });
        }
        let mut seen = vec![false; count];
        for &l in &labels {
            match seen.get_mut(l as usize) {
                Some(s) => *s = true,
                None => {
                    return Err(Error::InvalidLabelMap(alloc::format!(
                        "label {l} out of range for count {count}"
                    )))
                }
            }
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::InvalidLabelMap(alloc::format!("label {missing} missing")));
        }
        Ok(Self { width, height, labels, count })
    }

    /// Builds a label map from arbitrary ids, re-indexing them densely in
    /// row-major first-occurrence order.
    pub fn from_arbitrary(width: usize, height: usize, raw: &[u32]) -> Result<Self> {
        if raw.len() != width * height {
            return Err(Error::LengthMismatch {
                what: "label map",
                expected: width * height,
                found: raw.len(),
            });
        }
        let mut remap = alloc::collections::BTreeMap::new();
        let labels = raw
            .iter()
            .map(|&r| {
                let next = remap.len() as u32;
                *remap.entry(r).or_insert(next)
            })
            .collect();
        Ok(Self { width, height, labels, count: remap.len() })
    }

    /// Dense relabeling for ids known to lie in `[0, bound)`.
    pub(crate) fn from_bounded_ids(width: usize, height: usize, raw: &[usize], bound: usize) -> Self {
        let mut remap = vec![u32::MAX; bound];
        let mut count = 0u32;
        let labels = raw
            .iter()
            .map(|&r| {
                if remap[r] == u32::MAX {
                    remap[r] = count;
                    count += 1;
                }
                remap[r]
            })
            .collect();
        Self { width, height, labels, count: count as usize }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    /// Number of superpixels.
    pub fn count(&self) -> usize {
        self.count
    }

    #[inline]
    pub fn label_at(&self, x: usize, y: usize) -> u32 {
        self.labels[y * self.width + x]
    }

    /// Pixel count per superpixel.
    pub fn areas(&self) -> Vec<u64> {
        let mut areas = vec![0u64; self.count];
        for &l in &self.labels {
            areas[l as usize] += 1;
        }
        areas
    }

    /// Rasterizes the union of the given superpixels.
    pub fn mask_of(&self, ids: &[u32]) -> BinaryMask {
        let mut chosen = vec![false; self.count];
        for &id in ids {
            if let Some(c) = chosen.get_mut(id as usize) {
                *c = true;
            }
        }
        BinaryMask {
            width: self.width,
            height: self.height,
            bits: self.labels.iter().map(|&l| chosen[l as usize]).collect(),
        }
    }

    pub fn same_shape(&self, width: usize, height: usize, what: &'static str) -> Result<()> {
        check_dims(what, (self.width, self.height), (width, height))
    }
}

/// Per-pixel boolean mask, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::LengthMismatch {
                what: "binary mask",
                expected: width * height,
                found: bits.len(),
            });
        }
        Ok(Self { width, height, bits })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Self { width, height, bits: vec![false; width * height] }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        Self { width, height, bits }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.bits[y * self.width + x] = value;
    }

    /// Foreground pixel count.
    pub fn area(&self) -> u64 {
        self.bits.iter().filter(|b| **b).count() as u64
    }

    pub fn is_blank(&self) -> bool {
        !self.bits.iter().any(|b| *b)
    }
}

/// Axis-aligned rectangle in pixel coordinates; may extend past the image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Rect {
    pub x: i64,
    pub y: i64,
    pub w: usize,
    pub h: usize,
}

impl Rect {
    pub fn new(x: i64, y: i64, w: usize, h: usize) -> Result<Self> {
        if w == 0 || h == 0 {
            return Err(Error::InvalidParameter("rectangle extent must be positive".into()));
        }
        Ok(Self { x, y, w, h })
    }

    /// Intersection with the image `[0, width) × [0, height)`.
    pub fn clip(&self, width: usize, height: usize) -> Option<Rect> {
        let x0 = self.x.max(0);
        let y0 = self.y.max(0);
        let x1 = (self.x + self.w as i64).min(width as i64);
        let y1 = (self.y + self.h as i64).min(height as i64);
        (x1 > x0 && y1 > y0).then(|| Rect { x: x0, y: y0, w: (x1 - x0) as usize, h: (y1 - y0) as usize })
    }

    pub fn area(&self) -> usize {
        self.w * self.h
    }
}

pub(crate) fn check_dims(what: &'static str, expected: (usize, usize), found: (usize, usize)) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { what, expected, found })
    }
}

/// Intersection over union of two masks; `0` when both are empty.
pub fn mask_iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    check_dims("mask", (a.width, a.height), (b.width, b.height))?;
    let (inter, union) = a
        .bits
        .iter()
        .zip(&b.bits)
        .fold((0u64, 0u64), |(i, u), (&p, &q)| (i + (p && q) as u64, u + (p || q) as u64));
    Ok(if union == 0 { 0.0 } else { inter as f64 / union as f64 })
}
