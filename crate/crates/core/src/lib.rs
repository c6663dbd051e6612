//! Superpixel segmentation and object-proposal refinement kernels.
//!
//! This crate is `no_std` (it needs `alloc`) and holds every algorithm of the
//! toolkit: the DeepFH graph segmentation ([`fh`]), superpixel statistics and
//! pooling ([`pool`]), the fully-connected superpixel classifier ([`mlp`]),
//! refinement of coarse 40×40 proposal windows into superpixel-precise masks
//! ([`refine`]), post-processing ([`postprocess`]), superpixelized ground truth
//! ([`groundtruth`]) and the evaluation measures ([`metrics`]).
//!
//! File formats, image decoding and the command line live in the `spxrefine`
//! companion crate.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod distance;
pub mod dsu;
pub mod error;
pub mod fh;
pub mod groundtruth;
pub mod metrics;
pub mod mlp;
pub mod pool;
pub mod postprocess;
pub mod raster;
pub mod refine;

pub use error::{Error, Result};
pub use raster::{mask_iou, BinaryMask, FeatureMap, LabelMap, Rect, RgbImage};
