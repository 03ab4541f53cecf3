//! Minimal COCO reader: image sizes and polygon segmentations only.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;

use super::raster::rasterize_polygon;
use super::shapes::Polygon;
use crate::error::{invalid, Result};
use crate::fidelity::BinaryMask;

#[derive(Clone, Debug, Deserialize)]
pub struct CocoImage {
    pub id: u64,
    pub height: usize,
    pub width: usize,
}

#[derive(Clone, Debug, Deserialize)]
pub struct CocoAnnotation {
    pub image_id: u64,
    /// Polygon rings as flat `[x0, y0, x1, y1, ...]` lists.
    pub segmentation: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, Deserialize)]
pub struct CocoFile {
    pub images: Vec<CocoImage>,
    pub annotations: Vec<CocoAnnotation>,
}

impl CocoFile {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Semantic mask per image id: the union of all its annotation polygons.
    pub fn masks(&self) -> Result<BTreeMap<u64, BinaryMask>> {
        let mut out: BTreeMap<u64, BinaryMask> = self
            .images
            .iter()
            .map(|im| {
                if im.height == 0 || im.width == 0 {
                    return invalid(format!("image {} has zero size", im.id));
                }
                Ok((im.id, BinaryMask::zeros(im.height, im.width)))
            })
            .collect::<Result<_>>()?;
        for ann in &self.annotations {
            let Some(mask) = out.get_mut(&ann.image_id) else {
                return invalid(format!("annotation refers to unknown image {}", ann.image_id));
            };
            for ring in &ann.segmentation {
                if ring.len() % 2 != 0 {
                    return invalid(format!(
                        "segmentation ring for image {} has an odd coordinate count",
                        ann.image_id
                    ));
                }
                let poly = rasterize_polygon(&Polygon::from_flat(ring), mask.dims())?;
                *mask = mask.union(&poly)?;
            }
        }
        Ok(out)
    }
}

pub fn read_coco_masks(path: &Path) -> Result<BTreeMap<u64, BinaryMask>> {
    CocoFile::from_json(&std::fs::read_to_string(path)?)?.masks()
}
