//! The `.ann.json` annotation document: bounding boxes per slice, with
//! inclusive pixel coordinates and origin at the top-left.
//!
//! The shape mirrors a radiologist export (multiple boxes per slice, a
//! category string per box) so real annotations can replace synthetic ones
//! without code changes. The JSON schema ships under `docs/`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{AnnotationSet, BoundingBox};
use crate::model::Plane;

/// One annotation document, covering one plane of one case.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationFile {
    pub case_id: String,
    pub plane: Plane,
    pub slices: Vec<SliceAnnotations>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SliceAnnotations {
    pub index: usize,
    pub boxes: Vec<BoundingBox>,
}

impl AnnotationFile {
    /// Structural checks that do not need image dimensions: ordered box
    /// corners, non-empty categories, no duplicate slice entries. Bounds
    /// against the slice size are checked at rasterisation.
    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        for slice in &self.slices {
            if !seen.insert(slice.index) {
                return Err(Error::Annotation(format!(
                    "slice {} appears twice",
                    slice.index
                )));
            }
            for (i, b) in slice.boxes.iter().enumerate() {
                if b.x1 < b.x0 || b.y1 < b.y0 {
                    return Err(Error::Annotation(format!(
                        "slice {} box {i}: corners out of order ({},{})..({},{})",
                        slice.index, b.x0, b.y0, b.x1, b.y1
                    )));
                }
                if b.category.is_empty() {
                    return Err(Error::Annotation(format!(
                        "slice {} box {i}: empty category",
                        slice.index
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn to_annotation_set(&self) -> AnnotationSet {
        let mut set = AnnotationSet::new();
        for slice in &self.slices {
            for b in &slice.boxes {
                set.add(slice.index, b.clone());
            }
        }
        set
    }

    pub fn from_annotation_set(case_id: &str, plane: Plane, set: &AnnotationSet) -> Self {
        Self {
            case_id: case_id.to_string(),
            plane,
            slices: set
                .iter()
                .map(|(index, boxes)| SliceAnnotations {
                    index,
                    boxes: boxes.to_vec(),
                })
                .collect(),
        }
    }
}

pub fn save_annotations(path: impl AsRef<Path>, file: &AnnotationFile) -> Result<()> {
    file.validate()?;
    let mut json = serde_json::to_vec_pretty(file)?;
    json.push(b'\n');
    std::fs::write(path, json)?;
    Ok(())
}

pub fn load_annotations(path: impl AsRef<Path>) -> Result<AnnotationFile> {
    let file: AnnotationFile = serde_json::from_slice(&std::fs::read(path)?)?;
    file.validate()?;
    Ok(file)
}
