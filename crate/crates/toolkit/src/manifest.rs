//! JSON manifests for datasets, ground truth, coarse proposals and refined
//! output. Paths inside a manifest are relative to the manifest's directory.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use spxrefine_core::groundtruth::GtObject;
use spxrefine_core::refine::{CoarseProposal, WINDOW_SIZE};
use spxrefine_core::Rect;

use crate::error::{Result, ToolkitError};
use crate::formats::read_feature_map;
use crate::image_io::load_mask;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RectJson {
    pub x: i64,
    pub y: i64,
    pub w: usize,
    pub h: usize,
}

impl From<Rect> for RectJson {
    fn from(r: Rect) -> Self {
        Self { x: r.x, y: r.y, w: r.w, h: r.h }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub name: String,
    pub image: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proposals: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub images: Vec<DatasetEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtEntry {
    pub id: u32,
    pub mask_png: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtManifest {
    pub image: String,
    pub objects: Vec<GtEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposalEntry {
    pub rect: RectJson,
    pub level: usize,
    pub score: f64,
    pub window_file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposalManifest {
    pub image: String,
    pub level_count: usize,
    pub proposals: Vec<ProposalEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinedEntry {
    pub mask_png: String,
    pub score: f64,
    pub level: usize,
    /// Index of the coarse proposal in the input manifest.
    pub source: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinedIndex {
    pub image: String,
    pub proposals: Vec<RefinedEntry>,
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| ToolkitError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| ToolkitError::Parse { path: path.to_path_buf(), reason: e.to_string() })
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("manifest serializes");
    text.push('\n');
    crate::formats::write_file(path, text.as_bytes())
}

/// Resolves `rel` against the directory holding `manifest`.
pub fn sibling(manifest: &Path, rel: &str) -> PathBuf {
    manifest.parent().unwrap_or(Path::new("")).join(rel)
}

/// Loads all GT objects of a manifest and checks them against the image size.
pub fn load_gt(path: &Path, width: usize, height: usize) -> Result<Vec<GtObject>> {
    let manifest: GtManifest = read_json(path)?;
    let mut objects = Vec::with_capacity(manifest.objects.len());
    for (i, entry) in manifest.objects.iter().enumerate() {
        let mask = load_mask(&sibling(path, &entry.mask_png))?;
        if (mask.width(), mask.height()) != (width, height) {
            return Err(ToolkitError::inconsistent(
                path,
                &format!("objects[{i}].mask_png"),
                format!("mask is {}×{}, image is {width}×{height}", mask.width(), mask.height()),
            ));
        }
        if objects.iter().any(|o: &GtObject| o.id == entry.id) {
            return Err(ToolkitError::inconsistent(path, &format!("objects[{i}].id"), format!("duplicate id {}", entry.id)));
        }
        let mut object = GtObject::new(entry.id, mask)
            .map_err(|e| ToolkitError::inconsistent(path, &format!("objects[{i}].mask_png"), e.to_string()))?;
        object.category = entry.category.clone();
        objects.push(object);
    }
    Ok(objects)
}

/// Loads coarse proposals, checking window files and levels.
pub fn load_proposals(path: &Path, level_count: usize) -> Result<Vec<CoarseProposal>> {
    let manifest: ProposalManifest = read_json(path)?;
    if manifest.level_count != level_count {
        return Err(ToolkitError::inconsistent(
            path,
            "level_count",
            format!("manifest has {} levels, configuration has {level_count}", manifest.level_count),
        ));
    }
    let mut out = Vec::with_capacity(manifest.proposals.len());
    for (i, p) in manifest.proposals.iter().enumerate() {
        let field = |name: &str| format!("proposals[{i}].{name}");
        if p.level >= level_count {
            return Err(ToolkitError::inconsistent(path, &field("level"), format!("level {} ≥ level count {level_count}", p.level)));
        }
        let window_path = sibling(path, &p.window_file);
        let fm = read_feature_map(&window_path)?;
        if (fm.width(), fm.height(), fm.dim()) != (WINDOW_SIZE, WINDOW_SIZE, 1) {
            return Err(ToolkitError::inconsistent(
                &window_path,
                "header",
                format!("window is {}×{}×{}, expected {WINDOW_SIZE}×{WINDOW_SIZE}×1", fm.width(), fm.height(), fm.dim()),
            ));
        }
        let rect = Rect::new(p.rect.x, p.rect.y, p.rect.w, p.rect.h)
            .map_err(|e| ToolkitError::inconsistent(path, &field("rect"), e.to_string()))?;
        let window = fm.data().iter().map(|&v| v as f64).collect();
        let cp = CoarseProposal::new(window, rect, p.level, p.score)
            .map_err(|e| ToolkitError::inconsistent(path, &field("window_file"), e.to_string()))?;
        out.push(cp);
    }
    Ok(out)
}
