//! Pairwise pixel distances: color, feature cosine, and their blend.
//!
//! All three are bounded to `[0, 1]` so the blend weight only trades their
//! influence against each other.

use core::f64::consts::PI;

const SQRT_3: f64 = 1.732_050_807_568_877_2;

/// Value used for the cosine distance when either feature vector is zero.
pub const DEGENERATE_COSINE: f64 = 0.5;

/// Euclidean color distance scaled by `1/√3`, in `[0, 1]` for channels in `[0, 1]`.
#[inline]
pub fn delta_fh(p: [f32; 3], q: [f32; 3]) -> f64 {
    let mut sum = 0.0f64;
    for c in 0..3 {
        let d = p[c] as f64 - q[c] as f64;
        sum += d * d;
    }
    libm::sqrt(sum) / SQRT_3
}

/// Angular cosine distance `arccos(cos θ) / π`, or `None` if either vector is zero.
#[inline]
pub fn try_delta_cos(f: &[f32], g: &[f32]) -> Option<f64> {
    debug_assert_eq!(f.len(), g.len());
    let (mut dot, mut nf, mut ng) = (0.0f64, 0.0f64, 0.0f64);
    for (&a, &b) in f.iter().zip(g) {
        let (a, b) = (a as f64, b as f64);
        dot += a * b;
        nf += a * a;
        ng += b * b;
    }
    if nf == 0.0 || ng == 0.0 {
        return None;
    }
    let cos = (dot / (libm::sqrt(nf) * libm::sqrt(ng))).clamp(-1.0, 1.0);
    Some(libm::acos(cos) / PI)
}

/// Angular cosine distance in `[0, 1]`; zero vectors give [`DEGENERATE_COSINE`].
#[inline]
pub fn delta_cos(f: &[f32], g: &[f32]) -> f64 {
    try_delta_cos(f, g).unwrap_or(DEGENERATE_COSINE)
}

/// `(1 − α)·δ_color + α·δ_cos`.
#[inline]
pub fn blend(color: f64, cosine: f64, alpha: f64) -> f64 {
    (1.0 - alpha) * color + alpha * cosine
}

/// DeepFH distance between two adjacent pixels.
#[inline]
pub fn delta_deepfh(p: [f32; 3], q: [f32; 3], f: &[f32], g: &[f32], alpha: f64) -> f64 {
    blend(delta_fh(p, q), delta_cos(f, g), alpha)
}
