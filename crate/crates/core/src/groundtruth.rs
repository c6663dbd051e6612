//! Superpixelized ground truth.
//!
//! For each annotated object the best-IoU set of superpixels is searched,
//! either greedily (the training-label procedure) or exhaustively over all
//! subsets (a test oracle for small instances). Also builds the combined GT
//! partition and the adjacent-pixel affinity labels for feature training.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::error::{Error, Result};
use crate::fh::Connectivity;
use crate::raster::{BinaryMask, LabelMap};

pub const DEFAULT_EXHAUSTIVE_LIMIT: usize = 15;

#[derive(Debug, Clone, PartialEq)]
pub struct GtObject {
    pub id: u32,
    pub mask: BinaryMask,
    pub category: Option<String>,
}

impl GtObject {
    pub fn new(id: u32, mask: BinaryMask) -> Result<Self> {
        if mask.is_blank() {
            return Err(Error::InvalidParameter(alloc::format!("ground-truth object {id} has an empty mask")));
        }
        Ok(Self { id, mask, category: None })
    }
}

/// Chosen superpixels (sorted ids) and the IoU of their union with the object.
#[derive(Debug, Clone, PartialEq)]
pub struct SpxSelection {
    pub ids: Vec<u32>,
    pub iou: f64,
}

/// Per-superpixel pixel counts inside and outside an object mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Overlap {
    pub inside: Vec<u64>,
    pub outside: Vec<u64>,
    pub object_area: u64,
}

impl Overlap {
    pub fn compute(lm: &LabelMap, mask: &BinaryMask) -> Result<Self> {
        lm.same_shape(mask.width(), mask.height(), "object mask")?;
        let mut inside = vec![0u64; lm.count()];
        let mut outside = vec![0u64; lm.count()];
        for (&l, &b) in lm.labels().iter().zip(mask.bits()) {
            if b {
                inside[l as usize] += 1;
            } else {
                outside[l as usize] += 1;
            }
        }
        Ok(Self { inside, outside, object_area: mask.area() })
    }

    /// Superpixels with at least one pixel inside the object, ascending.
    pub fn candidates(&self) -> Vec<u32> {
        (0..self.inside.len() as u32).filter(|&s| self.inside[s as usize] > 0).collect()
    }
}

/// Exact IoU as intersection / union pixel counts.
#[derive(Debug, Clone, Copy)]
struct Ratio {
    inter: u64,
    union: u64,
}

impl Ratio {
    fn empty(object_area: u64) -> Self {
        Self { inter: 0, union: object_area }
    }

    fn with(self, ov: &Overlap, s: u32) -> Self {
        Self { inter: self.inter + ov.inside[s as usize], union: self.union + ov.outside[s as usize] }
    }

    fn cmp(&self, other: &Ratio) -> Ordering {
        (self.inter as u128 * other.union as u128).cmp(&(other.inter as u128 * self.union as u128))
    }

    fn value(&self) -> f64 {
        if self.union == 0 {
            0.0
        } else {
            self.inter as f64 / self.union as f64
        }
    }
}

/// Greedy selection and the IoU after the seed and after every addition.
pub fn greedy_gt_trace(lm: &LabelMap, gt: &GtObject) -> Result<(SpxSelection, Vec<f64>)> {
    let ov = Overlap::compute(lm, &gt.mask)?;
    let candidates = ov.candidates();
    let mut chosen = vec![false; lm.count()];
    let mut cur = Ratio::empty(ov.object_area);
    for &s in &candidates {
        if ov.outside[s as usize] == 0 {
            chosen[s as usize] = true;
            cur = cur.with(&ov, s);
        }
    }
    if cur.inter == 0 {
        // nothing fits entirely inside: start from the best single superpixel
        let mut best: Option<(u32, Ratio)> = None;
        for &s in &candidates {
            let r = Ratio::empty(ov.object_area).with(&ov, s);
            if best.is_none_or(|(_, b)| r.cmp(&b) == Ordering::Greater) {
                best = Some((s, r));
            }
        }
        if let Some((s, r)) = best {
            chosen[s as usize] = true;
            cur = r;
        }
    }
    let mut trace = vec![cur.value()];
    loop {
        let mut best: Option<(u32, Ratio)> = None;
        for &s in &candidates {
            if chosen[s as usize] {
                continue;
            }
            let r = cur.with(&ov, s);
            let bar = best.map_or(cur, |(_, b)| b);
            if r.cmp(&bar) == Ordering::Greater {
                best = Some((s, r));
            }
        }
        match best {
            Some((s, r)) => {
                chosen[s as usize] = true;
                cur = r;
                trace.push(cur.value());
            }
            None => break,
        }
    }
    let ids = (0..lm.count() as u32).filter(|&s| chosen[s as usize]).collect();
    Ok((SpxSelection { ids, iou: cur.value() }, trace))
}

/// Starts from all superpixels completely inside the object (or, if there are
/// none, the best single superpixel) and keeps adding the superpixel with the
/// largest IoU gain, lowest id on ties, until no addition improves the IoU.
pub fn greedy_gt_set(lm: &LabelMap, gt: &GtObject) -> Result<SpxSelection> {
    greedy_gt_trace(lm, gt).map(|(s, _)| s)
}

/// Maximum-IoU subset of the superpixels intersecting the object, by
/// enumeration. Fails when more than `max_superpixels` intersect it.
pub fn exhaustive_gt_set(lm: &LabelMap, gt: &GtObject, max_superpixels: usize) -> Result<SpxSelection> {
    let ov = Overlap::compute(lm, &gt.mask)?;
    let candidates = ov.candidates();
    if candidates.len() > max_superpixels || candidates.len() >= 64 {
        return Err(Error::InstanceTooLarge { candidates: candidates.len(), limit: max_superpixels });
    }
    let mut best_bits = 0u64;
    let mut best = Ratio::empty(ov.object_area);
    for bits in 1u64..(1u64 << candidates.len()) {
        let mut r = Ratio::empty(ov.object_area);
        for (i, &s) in candidates.iter().enumerate() {
            if bits >> i & 1 == 1 {
                r = r.with(&ov, s);
            }
        }
        if r.cmp(&best) == Ordering::Greater {
            best = r;
            best_bits = bits;
        }
    }
    let ids = candidates.iter().enumerate().filter(|(i, _)| best_bits >> i & 1 == 1).map(|(_, &s)| s).collect();
    Ok(SpxSelection { ids, iou: best.value() })
}

/// Combined ground-truth partition: background plus one region per object,
/// painted in ascending id order so later ids win overlaps. Region ids are
/// re-indexed densely in row-major first-occurrence order.
pub fn gt_partition(objects: &[GtObject], width: usize, height: usize) -> Result<LabelMap> {
    let raw = paint(objects, width, height)?;
    LabelMap::from_arbitrary(width, height, &raw)
}

fn paint(objects: &[GtObject], width: usize, height: usize) -> Result<Vec<u32>> {
    let mut order: Vec<&GtObject> = objects.iter().collect();
    order.sort_by_key(|o| o.id);
    let mut raw = vec![0u32; width * height];
    for (rank, obj) in order.iter().enumerate() {
        if (obj.mask.width(), obj.mask.height()) != (width, height) {
            return Err(Error::DimensionMismatch {
                what: "object mask",
                expected: (width, height),
                found: (obj.mask.width(), obj.mask.height()),
            });
        }
        for (r, &b) in raw.iter_mut().zip(obj.mask.bits()) {
            if b {
                *r = rank as u32 + 1;
            }
        }
    }
    Ok(raw)
}

/// Same-segment labels for every adjacent pixel pair of the combined partition.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityLabels {
    pub width: usize,
    pub height: usize,
    pub connectivity: Connectivity,
    /// `(i, j, same)` with `i < j`, in row-major order of `i` then offset order.
    pub pairs: Vec<(u32, u32, bool)>,
}

impl AffinityLabels {
    /// Channel-per-offset raster (right, down, and for 8-connectivity
    /// down-right, down-left): `1.0` same segment, `0.0` different. Pairs
    /// that fall outside the image are written as `1.0`.
    pub fn to_channels(&self) -> (usize, Vec<f32>) {
        let offsets = self.connectivity.forward_offsets();
        let dim = offsets.len();
        let mut data = vec![1.0f32; self.width * self.height * dim];
        let w = self.width as isize;
        for &(i, j, same) in &self.pairs {
            let delta = j as isize - i as isize;
            let xi = i as isize % w;
            let c = offsets
                .iter()
                .position(|&(dx, dy)| dy * w + dx == delta && (0..w).contains(&(xi + dx)))
                .expect("pair matches an offset");
            data[i as usize * dim + c] = if same { 1.0 } else { 0.0 };
        }
        (dim, data)
    }
}

pub fn affinity_labels(
    objects: &[GtObject],
    width: usize,
    height: usize,
    connectivity: Connectivity,
) -> Result<AffinityLabels> {
    let raw = paint(objects, width, height)?;
    let mut pairs = Vec::new();
    for y in 0..height {
        for x in 0..width {
            let i = y * width + x;
            for &(dx, dy) in connectivity.forward_offsets() {
                let nx = x as isize + dx;
                let ny = y as isize + dy;
                if nx < 0 || nx >= width as isize || ny >= height as isize {
                    continue;
                }
                let j = ny as usize * width + nx as usize;
                pairs.push((i as u32, j as u32, raw[i] == raw[j]));
            }
        }
    }
    Ok(AffinityLabels { width, height, connectivity, pairs })
}
