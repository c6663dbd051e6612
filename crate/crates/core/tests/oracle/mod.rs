//! Straightforward reference implementations used as test oracles. They share
//! no code with the library paths they check.
#![allow(dead_code)]

use spxrefine_core::groundtruth::GtObject;
use spxrefine_core::raster::{BinaryMask, FeatureMap, LabelMap, RgbImage};

/// Reference FH segmentation: explicit pair enumeration, full-array relabeling
/// on every merge. Quadratic, only for tiny images. `sigma` is not applied.
pub fn reference_fh(
    img: &RgbImage,
    features: Option<&FeatureMap>,
    k: f64,
    alpha: f64,
    min_size: usize,
    eight: bool,
) -> Vec<usize> {
    let (w, h) = (img.width(), img.height());
    let n = w * h;
    let mut edges: Vec<(f64, usize, usize)> = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let (xi, yi) = ((i % w) as i64, (i / w) as i64);
            let (xj, yj) = ((j % w) as i64, (j / w) as i64);
            let (dx, dy) = ((xi - xj).abs(), (yi - yj).abs());
            let adjacent = if eight { dx.max(dy) == 1 } else { dx + dy == 1 };
            if !adjacent {
                continue;
            }
            let p = img.pixel(i);
            let q = img.pixel(j);
            let color = ((p[0] as f64 - q[0] as f64).powi(2)
                + (p[1] as f64 - q[1] as f64).powi(2)
                + (p[2] as f64 - q[2] as f64).powi(2))
            .sqrt()
                / 3f64.sqrt();
            let weight = match features {
                None => color,
                Some(fm) => {
                    let (f, g) = (fm.feature(i), fm.feature(j));
                    let dot: f64 = f.iter().zip(g).map(|(a, b)| *a as f64 * *b as f64).sum();
                    let nf: f64 = f.iter().map(|a| (*a as f64).powi(2)).sum();
                    let ng: f64 = g.iter().map(|a| (*a as f64).powi(2)).sum();
                    let cos = if nf == 0.0 || ng == 0.0 {
                        0.5
                    } else {
                        (dot / (nf.sqrt() * ng.sqrt())).clamp(-1.0, 1.0).acos() / std::f64::consts::PI
                    };
                    (1.0 - alpha) * color + alpha * cos
                }
            };
            edges.push((weight, i, j));
        }
    }
    edges.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let mut label: Vec<usize> = (0..n).collect();
    let mut internal = vec![0.0f64; n];
    let size_of = |label: &[usize], l: usize| label.iter().filter(|&&x| x == l).count();
    let relabel = |label: &mut Vec<usize>, from: usize, to: usize| {
        for x in label.iter_mut() {
            if *x == from {
                *x = to;
            }
        }
    };
    for &(wt, i, j) in &edges {
        let (a, b) = (label[i], label[j]);
        if a == b {
            continue;
        }
        let ta = internal[a] + k / size_of(&label, a) as f64;
        let tb = internal[b] + k / size_of(&label, b) as f64;
        if wt <= ta.min(tb) {
            relabel(&mut label, b, a);
            internal[a] = internal[a].max(internal[b]).max(wt);
        }
    }
    for &(_, i, j) in &edges {
        let (a, b) = (label[i], label[j]);
        if a != b && (size_of(&label, a) < min_size || size_of(&label, b) < min_size) {
            relabel(&mut label, b, a);
        }
    }
    // dense, first-occurrence order
    let mut order: Vec<usize> = Vec::new();
    label
        .iter()
        .map(|l| match order.iter().position(|o| o == l) {
            Some(p) => p,
            None => {
                order.push(*l);
                order.len() - 1
            }
        })
        .collect()
}

/// Plain FH with the color distance only, on an image that is already
/// smoothed. Edges come from a direct neighbor scan, components from a
/// parent array with explicit sizes. Linearithmic, usable on real images.
pub fn plain_fh(img: &RgbImage, k: f64, min_size: usize, eight: bool) -> Vec<usize> {
    let (w, h) = (img.width(), img.height());
    let n = w * h;
    let mut nbrs: Vec<(i64, i64)> = vec![(1, 0), (0, 1)];
    if eight {
        nbrs.extend([(1, 1), (-1, 1)]);
    }
    let mut edges: Vec<(f64, usize, usize)> = Vec::with_capacity(n * nbrs.len());
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            for &(dx, dy) in &nbrs {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || nx >= w as i64 || ny >= h as i64 {
                    continue;
                }
                let i = (y * w as i64 + x) as usize;
                let j = (ny * w as i64 + nx) as usize;
                let (p, q) = (img.pixel(i), img.pixel(j));
                let d: f64 = (0..3).map(|c| (p[c] as f64 - q[c] as f64).powi(2)).sum();
                edges.push((d.sqrt() / 3f64.sqrt(), i, j));
            }
        }
    }
    edges.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let mut parent: Vec<usize> = (0..n).collect();
    let mut size = vec![1usize; n];
    let mut internal = vec![0.0f64; n];
    fn root(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for &(wt, i, j) in &edges {
        let (a, b) = (root(&mut parent, i), root(&mut parent, j));
        if a != b && wt <= (internal[a] + k / size[a] as f64).min(internal[b] + k / size[b] as f64) {
            parent[b] = a;
            size[a] += size[b];
            internal[a] = internal[a].max(internal[b]).max(wt);
        }
    }
    for &(_, i, j) in &edges {
        let (a, b) = (root(&mut parent, i), root(&mut parent, j));
        if a != b && (size[a] < min_size || size[b] < min_size) {
            parent[b] = a;
            size[a] += size[b];
        }
    }
    let mut dense = std::collections::HashMap::new();
    (0..n)
        .map(|i| {
            let r = root(&mut parent, i);
            let next = dense.len();
            *dense.entry(r).or_insert(next)
        })
        .collect()
}

/// Tiny deterministic generator so oracle cases need no RNG crate.
pub struct SplitMix(pub u64);

impl SplitMix {
    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn below(&mut self, n: usize) -> usize {
        (self.next_u64() % n as u64) as usize
    }
}

/// Random image whose colors come from a small palette, so ties and
/// zero-weight edges occur often.
pub fn random_image(rng: &mut SplitMix, w: usize, h: usize) -> RgbImage {
    let palette: Vec<[f32; 3]> =
        (0..4).map(|_| [rng.unit() as f32, rng.unit() as f32, rng.unit() as f32]).collect();
    let mut data = Vec::with_capacity(w * h * 3);
    for _ in 0..w * h {
        let c = if rng.unit() < 0.5 {
            palette[rng.below(palette.len())]
        } else {
            [rng.unit() as f32, rng.unit() as f32, rng.unit() as f32]
        };
        data.extend_from_slice(&c);
    }
    RgbImage::new(w, h, data).unwrap()
}

pub fn random_features(rng: &mut SplitMix, w: usize, h: usize, dim: usize) -> FeatureMap {
    let data = (0..w * h * dim).map(|_| (rng.unit() * 2.0 - 1.0) as f32).collect();
    FeatureMap::new(w, h, dim, data).unwrap()
}

/// Central finite differences of the mean BCE loss with respect to every
/// parameter of `net`.
pub fn numeric_gradient(
    net: &spxrefine_core::mlp::MlpWeights<f64>,
    inputs: &[Vec<f64>],
    labels: &[bool],
    eps: f64,
) -> Vec<f64> {
    let bce = |net: &spxrefine_core::mlp::MlpWeights<f64>| -> f64 {
        let probs = net.forward(inputs).unwrap();
        probs
            .iter()
            .zip(labels)
            .map(|(&p, &y)| if y { -p.ln() } else { -(1.0 - p).ln() })
            .sum::<f64>()
            / inputs.len() as f64
    };
    let base = net.parameters();
    let mut probe = net.clone();
    (0..base.len())
        .map(|i| {
            let mut p = base.clone();
            p[i] = base[i] + eps;
            probe.set_parameters(&p);
            let up = bce(&probe);
            p[i] = base[i] - eps;
            probe.set_parameters(&p);
            let down = bce(&probe);
            (up - down) / (2.0 * eps)
        })
        .collect()
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, zero when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Random small network plus a batch for gradient checks.
pub fn gradient_case(seed: u64) -> (spxrefine_core::mlp::MlpWeights<f64>, Vec<Vec<f64>>, Vec<bool>) {
    use spxrefine_core::mlp::{Layer, MlpWeights};
    let mut rng = SplitMix(seed);
    let input = 2 + rng.below(4);
    let hidden: Vec<usize> = (0..3).map(|_| 2 + rng.below(5)).collect();
    let mut dims = vec![input];
    dims.extend(&hidden);
    dims.push(1);
    let layers = dims
        .windows(2)
        .map(|d| Layer {
            inputs: d[0],
            outputs: d[1],
            weights: (0..d[0] * d[1]).map(|_| rng.unit() * 2.0 - 1.0).collect(),
            bias: (0..d[1]).map(|_| rng.unit() * 0.4 - 0.2).collect(),
        })
        .collect();
    let net = MlpWeights::new(layers).unwrap();
    let n = 4 + rng.below(8);
    let inputs = (0..n).map(|_| (0..input).map(|_| rng.unit() * 2.0 - 1.0).collect()).collect();
    let labels = (0..n).map(|_| rng.unit() < 0.5).collect();
    (net, inputs, labels)
}

/// Seeded RNG for APIs that take a `rand::Rng`.
pub struct Chacha;

impl Chacha {
    pub fn from_seed_u64(seed: u64) -> rand_chacha::ChaCha8Rng {
        use rand::SeedableRng;
        rand_chacha::ChaCha8Rng::seed_from_u64(seed)
    }
}

/// Random partition with at most `max_labels` superpixels and a random
/// non-empty object mask built from a few rectangles.
pub fn random_instance(rng: &mut SplitMix, max_labels: usize) -> (LabelMap, GtObject) {
    let (w, h) = (4 + rng.below(6), 4 + rng.below(6));
    let k = 1 + rng.below(max_labels);
    // blocky labels so superpixels have some extent
    let seeds: Vec<(usize, usize)> = (0..k).map(|_| (rng.below(w), rng.below(h))).collect();
    let raw: Vec<u32> = (0..w * h)
        .map(|i| {
            let (x, y) = (i % w, i / w);
            (0..k)
                .min_by_key(|&s| {
                    let (sx, sy) = seeds[s];
                    (x.abs_diff(sx).pow(2) + y.abs_diff(sy).pow(2), s)
                })
                .unwrap() as u32
        })
        .collect();
    let lm = LabelMap::from_arbitrary(w, h, &raw).unwrap();
    let mut mask = BinaryMask::empty(w, h);
    for _ in 0..1 + rng.below(3) {
        let (x0, y0) = (rng.below(w), rng.below(h));
        let (rw, rh) = (1 + rng.below(w - x0), 1 + rng.below(h - y0));
        for y in y0..y0 + rh {
            for x in x0..x0 + rw {
                mask.set(x, y, true);
            }
        }
    }
    (lm, GtObject::new(0, mask).unwrap())
}

/// 18×1 instance on which greedy selection is suboptimal: labels
/// `[0,0,1,1,2×14]`, object pixels `{1,2,4,5,6}`. Greedy reaches 5/18,
/// the best set `{0,1}` reaches 2/7.
pub fn greedy_trap() -> (LabelMap, GtObject) {
    let mut labels = vec![0, 0, 1, 1];
    labels.extend([2; 14]);
    let lm = LabelMap::new(18, 1, labels, 3).unwrap();
    let mask = BinaryMask::from_fn(18, 1, |x, _| [1, 2, 4, 5, 6].contains(&x));
    (lm, GtObject::new(1, mask).unwrap())
}
