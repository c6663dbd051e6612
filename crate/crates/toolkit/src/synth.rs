//! Seeded synthetic dataset: textured shapes on textured backgrounds, their
//! ground-truth masks, color-derived feature maps and coarse proposals.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use spxrefine_core::groundtruth::GtObject;
use spxrefine_core::refine::{CoarseProposal, WINDOW_SIZE};
use spxrefine_core::{BinaryMask, FeatureMap, Rect, RgbImage};

use crate::error::{Result, ToolkitError};
use crate::formats::write_feature_map;
use crate::image_io::{save_image, save_mask};
use crate::manifest::{
    write_json, DatasetEntry, DatasetManifest, GtEntry, GtManifest, ProposalEntry, ProposalManifest,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub width: usize,
    pub height: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    /// Shape radius range in pixels.
    pub min_radius: f64,
    pub max_radius: f64,
    /// Objects whose visible area falls below this are dropped.
    pub min_visible_area: u64,
    pub feature_dim: usize,
    /// Seed of the color-to-feature map, fixed across datasets so that
    /// features mean the same thing in every generated set.
    pub feature_seed: u64,
    /// Largest relative radius modulation of blob shapes.
    pub blob_amplitude: f64,
    /// Padding on each side of a GT bounding box, as a fraction of its longer side.
    pub pad_fraction: f64,
    /// Gaussian blur of the 40×40 window, in grid cells.
    pub blur_sigma: f64,
    /// Extra reframed proposals per object.
    pub duplicates: usize,
    /// Maximum shift and scale change of a reframed proposal, relative to its rect.
    pub jitter: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            width: 160,
            height: 120,
            min_objects: 1,
            max_objects: 4,
            min_radius: 8.0,
            max_radius: 32.0,
            min_visible_area: 60,
            feature_dim: 8,
            feature_seed: 0,
            blob_amplitude: 0.25,
            pad_fraction: 1.0,
            blur_sigma: 1.5,
            duplicates: 2,
            jitter: 0.08,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(ToolkitError::Config(format!("synth: {m}")));
        if self.width < 8 || self.height < 8 {
            return bad("images must be at least 8×8");
        }
        if self.min_objects > self.max_objects {
            return bad("min_objects exceeds max_objects");
        }
        if !(self.min_radius >= 2.0 && self.max_radius >= self.min_radius) {
            return bad("radius range must satisfy 2 ≤ min_radius ≤ max_radius");
        }
        if self.feature_dim == 0 {
            return bad("feature_dim must be at least 1");
        }
        if !(0.0..0.5).contains(&self.blob_amplitude) {
            return bad("blob_amplitude must lie in [0, 0.5)");
        }
        if !(self.pad_fraction >= 0.0 && self.blur_sigma >= 0.0 && (0.0..0.5).contains(&self.jitter)) {
            return bad("pad_fraction and blur_sigma must be non-negative, jitter in [0, 0.5)");
        }
        Ok(())
    }
}

/// One generated image with everything derived from it.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSample {
    pub name: String,
    pub image: RgbImage,
    pub features: FeatureMap,
    pub objects: Vec<GtObject>,
    pub proposals: Vec<CoarseProposal>,
    /// GT id each proposal was generated from.
    pub sources: Vec<u32>,
}

#[derive(Debug, Clone, Copy)]
enum Shape {
    Disk,
    Rect { a: f64, b: f64, theta: f64 },
    Blob { amp: [f64; 3], phase: [f64; 3] },
}

#[derive(Debug, Clone, Copy)]
struct Object {
    cx: f64,
    cy: f64,
    r: f64,
    shape: Shape,
    color: [f32; 3],
    stripe: (f64, f64, f64),
}

impl Object {
    fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.cx, y - self.cy);
        match self.shape {
            Shape::Disk => dx * dx + dy * dy <= self.r * self.r,
            Shape::Rect { a, b, theta } => {
                let (s, c) = theta.sin_cos();
                let u = c * dx + s * dy;
                let v = -s * dx + c * dy;
                u.abs() <= a && v.abs() <= b
            }
            Shape::Blob { amp, phase } => {
                let t = dy.atan2(dx);
                let mut rr = 1.0;
                for k in 0..3 {
                    rr += amp[k] * ((k + 2) as f64 * t + phase[k]).sin();
                }
                (dx * dx + dy * dy).sqrt() <= self.r * rr
            }
        }
    }
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.gen::<f64>()
}

fn random_color(rng: &mut ChaCha8Rng) -> [f32; 3] {
    [0; 3].map(|_| uniform(rng, 0.1, 0.9) as f32)
}

fn color_distance(a: [f32; 3], b: [f32; 3]) -> f64 {
    a.iter().zip(&b).map(|(x, y)| ((x - y) as f64).powi(2)).sum::<f64>().sqrt()
}

/// Pyramid level of an object whose bounding box has longer side `side`:
/// small objects go to fine levels (low index), large ones to coarse levels.
pub fn level_of(side: f64, cfg: &SynthConfig, level_count: usize) -> usize {
    if level_count <= 1 {
        return 0;
    }
    let lo = 2.0 * cfg.min_radius;
    let hi = 2.0 * cfg.max_radius;
    let t = if hi > lo { ((side.max(lo) / lo).ln() / (hi / lo).ln()).clamp(0.0, 1.0) } else { 0.0 };
    ((t * level_count as f64) as usize).min(level_count - 1)
}

/// Exact area-weighted average of `mask` over each of the 40×40 cells of
/// `rect`; pixels outside the image count as background.
pub fn box_downsample(mask: &BinaryMask, rect: Rect) -> Vec<f64> {
    let axis = |origin: i64, len: usize, limit: usize| -> Vec<Vec<(usize, f64)>> {
        let step = len as f64 / WINDOW_SIZE as f64;
        (0..WINDOW_SIZE)
            .map(|c| {
                let (s, e) = (c as f64 * step, (c + 1) as f64 * step);
                let mut parts = Vec::new();
                for p in (s.floor() as i64)..(e.ceil() as i64) {
                    let overlap = (e.min((p + 1) as f64) - s.max(p as f64)) / step;
                    let px = origin + p;
                    if overlap > 0.0 && px >= 0 && (px as usize) < limit {
                        parts.push((px as usize, overlap));
                    }
                }
                parts
            })
            .collect()
    };
    let xs = axis(rect.x, rect.w, mask.width());
    let ys = axis(rect.y, rect.h, mask.height());
    let mut out = Vec::with_capacity(WINDOW_SIZE * WINDOW_SIZE);
    for row in &ys {
        for col in &xs {
            let mut acc = 0.0;
            for &(y, wy) in row {
                for &(x, wx) in col {
                    if mask.get(x, y) {
                        acc += wx * wy;
                    }
                }
            }
            out.push(acc);
        }
    }
    out
}

/// Separable Gaussian blur of a 40×40 grid with clamped borders, then
/// clamping to `[0, 1]`.
pub fn blur_window(grid: &[f64], sigma: f64) -> Vec<f64> {
    let n = WINDOW_SIZE;
    if sigma <= 0.0 {
        return grid.iter().map(|v| v.clamp(0.0, 1.0)).collect();
    }
    let radius = (3.0 * sigma).ceil() as i64;
    let mut kernel: Vec<f64> = (-radius..=radius).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);
    let pass = |src: &[f64], horizontal: bool| -> Vec<f64> {
        let mut dst = vec![0.0; n * n];
        for y in 0..n {
            for x in 0..n {
                let mut acc = 0.0;
                for (j, k) in kernel.iter().enumerate() {
                    let o = j as i64 - radius;
                    let (sx, sy) = if horizontal { (x as i64 + o, y as i64) } else { (x as i64, y as i64 + o) };
                    let sx = sx.clamp(0, n as i64 - 1) as usize;
                    let sy = sy.clamp(0, n as i64 - 1) as usize;
                    acc += k * src[sy * n + sx];
                }
                dst[y * n + x] = acc;
            }
        }
        dst
    };
    pass(&pass(grid, true), false).into_iter().map(|v| v.clamp(0.0, 1.0)).collect()
}

fn bounding_box(mask: &BinaryMask) -> (usize, usize, usize, usize) {
    let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
    for y in 0..mask.height() {
        for x in 0..mask.width() {
            if mask.get(x, y) {
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x);
                y1 = y1.max(y);
            }
        }
    }
    (x0, y0, x1 - x0 + 1, y1 - y0 + 1)
}

/// Coarse window of `mask` framed by `rect`.
pub fn coarse_window(mask: &BinaryMask, rect: Rect, blur_sigma: f64) -> Vec<f64> {
    blur_window(&box_downsample(mask, rect), blur_sigma)
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Random affine map from color to features.
fn projection(cfg: &SynthConfig) -> Vec<[f64; 4]> {
    let mut rng = rng_for(cfg.feature_seed, u64::MAX);
    (0..cfg.feature_dim).map(|_| [0; 4].map(|_| uniform(&mut rng, -2.0, 2.0))).collect()
}

/// Generates image `index` of the dataset with `seed`.
pub fn generate_sample(cfg: &SynthConfig, level_count: usize, seed: u64, index: usize) -> SynthSample {
    let mut rng = rng_for(seed, index as u64);
    let (w, h) = (cfg.width, cfg.height);
    let bg = random_color(&mut rng);
    let bg_wave = (uniform(&mut rng, 0.02, 0.15), uniform(&mut rng, 0.02, 0.15), uniform(&mut rng, 0.0, 6.3));
    let bg_amp = uniform(&mut rng, 0.02, 0.08) as f32;

    let n = rng.gen_range(cfg.min_objects..=cfg.max_objects);
    let mut objects: Vec<Object> = (0..n)
        .map(|_| {
            let r = uniform(&mut rng, cfg.min_radius, cfg.max_radius);
            let cx = uniform(&mut rng, r * 0.5, w as f64 - r * 0.5);
            let cy = uniform(&mut rng, r * 0.5, h as f64 - r * 0.5);
            let shape = match rng.gen_range(0..3) {
                0 => Shape::Disk,
                1 => Shape::Rect {
                    a: r * uniform(&mut rng, 0.5, 1.0),
                    b: r * uniform(&mut rng, 0.5, 1.0),
                    theta: uniform(&mut rng, 0.0, std::f64::consts::PI),
                },
                _ => Shape::Blob {
                    amp: [0; 3].map(|_| uniform(&mut rng, 0.0, cfg.blob_amplitude)),
                    phase: [0; 3].map(|_| uniform(&mut rng, 0.0, 6.3)),
                },
            };
            let mut color = random_color(&mut rng);
            for _ in 0..20 {
                if color_distance(color, bg) >= 0.35 {
                    break;
                }
                color = random_color(&mut rng);
            }
            let stripe = (uniform(&mut rng, -0.4, 0.4), uniform(&mut rng, -0.4, 0.4), uniform(&mut rng, 0.0, 6.3));
            Object { cx, cy, r, shape, color, stripe }
        })
        .collect();

    // Paint back to front; drop objects that end up mostly hidden.
    let owner = loop {
        let mut owner = vec![0u32; w * h];
        for (i, o) in objects.iter().enumerate() {
            for y in 0..h {
                for x in 0..w {
                    if o.contains(x as f64 + 0.5, y as f64 + 0.5) {
                        owner[y * w + x] = i as u32 + 1;
                    }
                }
            }
        }
        let mut areas = vec![0u64; objects.len() + 1];
        owner.iter().for_each(|&o| areas[o as usize] += 1);
        match (1..=objects.len()).find(|&i| areas[i] < cfg.min_visible_area.max(1)) {
            Some(i) => {
                objects.remove(i - 1);
            }
            None => break owner,
        }
    };

    let mut image = RgbImage::filled(w, h, bg);
    for y in 0..h {
        for x in 0..w {
            let noise = uniform(&mut rng, -0.03, 0.03) as f32;
            let o = owner[y * w + x];
            let (base, wave, amp) = if o == 0 {
                (bg, bg_wave, bg_amp)
            } else {
                let ob = &objects[o as usize - 1];
                (ob.color, ob.stripe, 0.05)
            };
            let t = (amp as f64 * (wave.0 * x as f64 + wave.1 * y as f64 + wave.2).sin()) as f32;
            image.set_pixel(x, y, base.map(|c| c + t + noise));
        }
    }

    let proj = projection(cfg);
    let mut feats = Vec::with_capacity(w * h * cfg.feature_dim);
    for i in 0..w * h {
        let p = image.pixel(i);
        for row in &proj {
            let v = row[0] * p[0] as f64 + row[1] * p[1] as f64 + row[2] * p[2] as f64 + row[3] * 0.5;
            feats.push((v.tanh() + uniform(&mut rng, -0.05, 0.05)) as f32);
        }
    }
    let features = FeatureMap::new(w, h, cfg.feature_dim, feats).expect("finite features");

    let mut gt = Vec::new();
    let mut proposals = Vec::new();
    let mut sources = Vec::new();
    for id in 1..=objects.len() as u32 {
        let mask = BinaryMask::from_fn(w, h, |x, y| owner[y * w + x] == id);
        let (bx, by, bw, bh) = bounding_box(&mask);
        let side = bw.max(bh) as f64;
        let level = level_of(side, cfg, level_count);
        let pad = (cfg.pad_fraction * side).round() as i64;
        let base = Rect::new(bx as i64 - pad, by as i64 - pad, bw + 2 * pad as usize, bh + 2 * pad as usize).expect("non-empty");
        let mut frames = vec![(base, uniform(&mut rng, 0.6, 1.0))];
        for _ in 0..cfg.duplicates {
            let scale = 1.0 + uniform(&mut rng, -cfg.jitter, cfg.jitter);
            let rw = ((base.w as f64 * scale).round() as usize).max(1);
            let rh = ((base.h as f64 * scale).round() as usize).max(1);
            let dx = (uniform(&mut rng, -cfg.jitter, cfg.jitter) * base.w as f64).round() as i64;
            let dy = (uniform(&mut rng, -cfg.jitter, cfg.jitter) * base.h as f64).round() as i64;
            let cx = base.x + base.w as i64 / 2 + dx;
            let cy = base.y + base.h as i64 / 2 + dy;
            let rect = Rect::new(cx - rw as i64 / 2, cy - rh as i64 / 2, rw, rh).expect("non-empty");
            frames.push((rect, frames[0].1 * uniform(&mut rng, 0.7, 0.98)));
        }
        for (rect, score) in frames {
            let window = coarse_window(&mask, rect, cfg.blur_sigma).into_iter().map(|v| v as f32 as f64).collect();
            proposals.push(CoarseProposal::new(window, rect, level, score).expect("valid window"));
            sources.push(id);
        }
        gt.push(GtObject::new(id, mask).expect("visible object"));
    }
    let mut order: Vec<usize> = (0..proposals.len()).collect();
    order.sort_by(|&a, &b| proposals[b].score.total_cmp(&proposals[a].score).then(a.cmp(&b)));
    let proposals = order.iter().map(|&i| proposals[i].clone()).collect();
    let sources = order.iter().map(|&i| sources[i]).collect();

    SynthSample { name: format!("img_{index:04}"), image, features, objects: gt, proposals, sources }
}

pub fn generate(cfg: &SynthConfig, level_count: usize, seed: u64, count: usize) -> Vec<SynthSample> {
    (0..count).into_par_iter().map(|i| generate_sample(cfg, level_count, seed, i)).collect()
}

/// Writes samples under `out` and returns the dataset manifest, which is
/// also written to `out/dataset.json`.
pub fn write_dataset(samples: &[SynthSample], level_count: usize, out: &Path) -> Result<DatasetManifest> {
    samples.par_iter().try_for_each(|s| write_sample(s, level_count, out))?;
    let manifest = DatasetManifest {
        images: samples
            .iter()
            .map(|s| DatasetEntry {
                name: s.name.clone(),
                image: format!("images/{}.png", s.name),
                features: Some(format!("features/{}.fmap", s.name)),
                gt: Some(format!("gt/{}.json", s.name)),
                proposals: Some(format!("proposals/{}.json", s.name)),
            })
            .collect(),
    };
    write_json(&manifest, &out.join("dataset.json"))?;
    Ok(manifest)
}

fn write_sample(s: &SynthSample, level_count: usize, out: &Path) -> Result<()> {
    save_image(&s.image, &out.join("images").join(format!("{}.png", s.name)))?;
    write_feature_map(&s.features, &out.join("features").join(format!("{}.fmap", s.name)))?;
    let image_ref = format!("../images/{}.png", s.name);
    let mut objects = Vec::new();
    for o in &s.objects {
        let file = format!("{}_obj{:03}.png", s.name, o.id);
        save_mask(&o.mask, &out.join("gt").join(&file))?;
        objects.push(GtEntry { id: o.id, mask_png: file, category: o.category.clone() });
    }
    write_json(&GtManifest { image: image_ref.clone(), objects }, &out.join("gt").join(format!("{}.json", s.name)))?;
    let mut proposals = Vec::new();
    for (j, p) in s.proposals.iter().enumerate() {
        let file = format!("{}_p{j:03}.fmap", s.name);
        let window = FeatureMap::new(WINDOW_SIZE, WINDOW_SIZE, 1, p.window.iter().map(|&v| v as f32).collect())?;
        write_feature_map(&window, &out.join("proposals").join(&file))?;
        proposals.push(ProposalEntry { rect: p.rect.into(), level: p.level, score: p.score, window_file: file });
    }
    write_json(
        &ProposalManifest { image: image_ref, level_count, proposals },
        &out.join("proposals").join(format!("{}.json", s.name)),
    )
}
