//! Image, box and caption records plus the held-out split.

mod coco;
mod labels;
mod split;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use coco::{load_coco, load_coco_captions, load_coco_instances};
pub use labels::{load_detection_labels, parse_detection_labels, DetectionLabel, DetectionLabels};
pub use split::{
    build_heldout_split, partition_in_out_domain, read_split_manifest, write_split_manifest,
    DatasetSplit, SplitEntry, SplitKind,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ImageId(pub u64);

impl fmt::Display for ImageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Axis-aligned box in pixels, top-left origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

/// Integer pixel rectangle `[x0, x1) x [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelRect {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl PixelRect {
    pub fn width(&self) -> u32 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> u32 {
        self.y1 - self.y0
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        if !(w > 0.0 && h > 0.0) || !x.is_finite() || !y.is_finite() {
            return Err(Error::Integrity(format!(
                "degenerate box ({x}, {y}, {w}, {h})"
            )));
        }
        Ok(BBox { x, y, w, h })
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// Width over height.
    pub fn aspect_ratio(&self) -> f64 {
        self.w / self.h
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    /// Intersection with the image frame; `None` if nothing is left.
    pub fn clip(&self, width: u32, height: u32) -> Option<BBox> {
        let x0 = self.x.max(0.0);
        let y0 = self.y.max(0.0);
        let x1 = self.right().min(f64::from(width));
        let y1 = self.bottom().min(f64::from(height));
        (x1 > x0 && y1 > y0).then_some(BBox {
            x: x0,
            y: y0,
            w: x1 - x0,
            h: y1 - y0,
        })
    }

    /// All four edges of `other` inside or on ours, with at least one edge
    /// strictly inside. Equal boxes do not contain each other.
    pub fn strictly_contains(&self, other: &BBox) -> bool {
        let inside = self.x <= other.x
            && self.y <= other.y
            && other.right() <= self.right()
            && other.bottom() <= self.bottom();
        let strict = self.x < other.x
            || self.y < other.y
            || other.right() < self.right()
            || other.bottom() < self.bottom();
        inside && strict
    }

    /// Smallest pixel rectangle covering the box, clamped to the frame.
    pub fn pixel_rect(&self, width: u32, height: u32) -> PixelRect {
        let clamp = |v: f64, hi: u32| (v.max(0.0) as u32).min(hi);
        let x0 = clamp(self.x.floor(), width);
        let y0 = clamp(self.y.floor(), height);
        let x1 = clamp(self.right().ceil(), width).max(x0);
        let y1 = clamp(self.bottom().ceil(), height).max(y0);
        PixelRect { x0, y0, x1, y1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectInstance {
    pub instance_id: u64,
    /// Canonical lexicon class name when resolvable, raw category name otherwise.
    pub class: String,
    pub bbox: BBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_id: ImageId,
    pub file_path: PathBuf,
    pub width: u32,
    pub height: u32,
    pub objects: Vec<ObjectInstance>,
}

impl ImageRecord {
    /// Distinct annotated class names, sorted. This is the image
    /// conditioning handed to scorers.
    pub fn context_tags(&self) -> Vec<String> {
        let tags: BTreeSet<&str> = self.objects.iter().map(|o| o.class.as_str()).collect();
        tags.into_iter().map(str::to_owned).collect()
    }

    pub fn instances_of<'a>(&'a self, class: &'a str) -> impl Iterator<Item = &'a ObjectInstance> {
        self.objects.iter().filter(move |o| o.class == class)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaptionOrigin {
    Human,
    Synthetic,
    PseudoBs,
    PseudoCbs,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionRecord {
    pub caption_id: u64,
    pub image_id: ImageId,
    pub tokens: Vec<String>,
    origin: CaptionOrigin,
}

impl CaptionRecord {
    pub fn new(
        caption_id: u64,
        image_id: ImageId,
        tokens: Vec<String>,
        origin: CaptionOrigin,
    ) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::Integrity(format!(
                "caption {caption_id} of image {image_id} has no tokens"
            )));
        }
        Ok(CaptionRecord {
            caption_id,
            image_id,
            tokens,
            origin,
        })
    }

    pub fn origin(&self) -> CaptionOrigin {
        self.origin
    }
}

/// Reference captions per evaluation image.
pub type References = BTreeMap<ImageId, Vec<Vec<String>>>;

pub fn references_from(captions: &[CaptionRecord]) -> References {
    let mut refs = References::new();
    for cap in captions {
        refs.entry(cap.image_id).or_default().push(cap.tokens.clone());
    }
    refs
}

pub fn captions_by_image(captions: &[CaptionRecord]) -> BTreeMap<ImageId, Vec<&CaptionRecord>> {
    let mut out: BTreeMap<ImageId, Vec<&CaptionRecord>> = BTreeMap::new();
    for cap in captions {
        out.entry(cap.image_id).or_default().push(cap);
    }
    for caps in out.values_mut() {
        caps.sort_by_key(|c| c.caption_id);
    }
    out
}

pub fn index_images(images: &[ImageRecord]) -> BTreeMap<ImageId, &ImageRecord> {
    images.iter().map(|im| (im.image_id, im)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bbox(x: f64, y: f64, w: f64, h: f64) -> BBox {
        BBox::new(x, y, w, h).unwrap()
    }

    #[test]
    fn containment_rules() {
        let outer = bbox(0.0, 0.0, 100.0, 100.0);
        assert!(outer.strictly_contains(&bbox(10.0, 10.0, 20.0, 20.0)));
        assert!(!outer.strictly_contains(&outer));
        assert!(!bbox(0.0, 0.0, 10.0, 10.0).strictly_contains(&bbox(20.0, 20.0, 5.0, 5.0)));
        // shares three edges, one strictly inside
        assert!(outer.strictly_contains(&bbox(0.0, 0.0, 100.0, 50.0)));
    }

    #[test]
    fn clip_to_frame() {
        let b = bbox(-5.0, 10.0, 20.0, 100.0).clip(50, 40).unwrap();
        assert_eq!(b, bbox(0.0, 10.0, 15.0, 30.0));
        assert!(bbox(60.0, 0.0, 5.0, 5.0).clip(50, 40).is_none());
    }

    #[test]
    fn pixel_rect_covers_fractional_box() {
        let r = bbox(1.5, 2.2, 3.0, 1.0).pixel_rect(10, 10);
        assert_eq!(r, PixelRect { x0: 1, y0: 2, x1: 5, y1: 4 });
    }

    #[test]
    fn degenerate_box_rejected() {
        assert!(BBox::new(0.0, 0.0, 0.0, 3.0).is_err());
        assert!(BBox::new(0.0, 0.0, 3.0, f64::NAN).is_err());
    }

    #[test]
    fn empty_caption_rejected() {
        assert!(CaptionRecord::new(1, ImageId(1), vec![], CaptionOrigin::Human).is_err());
    }
}
