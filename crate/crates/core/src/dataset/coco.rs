//! COCO instances / captions JSON ingestion.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::{BBox, CaptionOrigin, CaptionRecord, ImageId, ImageRecord, ObjectInstance};
use crate::error::{Error, Result};
use crate::lexicon::Lexicon;
use crate::text::tokenize;

#[derive(Deserialize)]
struct InstancesFile {
    images: Vec<CocoImage>,
    #[serde(default)]
    annotations: Vec<CocoAnnotation>,
    #[serde(default)]
    categories: Vec<CocoCategory>,
}

#[derive(Deserialize)]
struct CocoImage {
    id: u64,
    #[serde(default)]
    file_name: String,
    width: u32,
    height: u32,
}

#[derive(Deserialize)]
struct CocoAnnotation {
    id: u64,
    image_id: u64,
    category_id: u64,
    bbox: [f64; 4],
}

#[derive(Deserialize)]
struct CocoCategory {
    id: u64,
    name: String,
}

#[derive(Deserialize)]
struct CaptionsFile {
    annotations: Vec<CocoCaption>,
}

#[derive(Deserialize)]
struct CocoCaption {
    id: u64,
    image_id: u64,
    caption: String,
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let content = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&content).map_err(|e| Error::json(path, &content, &e))
}

/// Loads images and their box annotations. Category names are mapped to
/// canonical lexicon names where possible; boxes are clipped to the image
/// and dropped (with a warning) if nothing remains.
pub fn load_coco_instances(path: &Path, lexicon: &Lexicon) -> Result<Vec<ImageRecord>> {
    let file: InstancesFile = read_json(path)?;

    let categories: BTreeMap<u64, String> = file
        .categories
        .into_iter()
        .map(|c| {
            let name = lexicon
                .resolve(&c.name)
                .map(|cls| cls.name.clone())
                .unwrap_or(c.name);
            (c.id, name)
        })
        .collect();

    let mut images: BTreeMap<u64, ImageRecord> = BTreeMap::new();
    for im in file.images {
        if im.width == 0 || im.height == 0 {
            return Err(Error::Integrity(format!("image {} has zero size", im.id)));
        }
        let record = ImageRecord {
            image_id: ImageId(im.id),
            file_path: PathBuf::from(im.file_name),
            width: im.width,
            height: im.height,
            objects: Vec::new(),
        };
        if images.insert(im.id, record).is_some() {
            return Err(Error::Integrity(format!("duplicate image id {}", im.id)));
        }
    }

    let mut seen_instances = BTreeSet::new();
    for ann in file.annotations {
        let image = images.get_mut(&ann.image_id).ok_or_else(|| {
            Error::Integrity(format!(
                "annotation {} references unknown image_id {}",
                ann.id, ann.image_id
            ))
        })?;
        let class = categories.get(&ann.category_id).ok_or_else(|| {
            Error::Integrity(format!(
                "annotation {} references unknown category_id {}",
                ann.id, ann.category_id
            ))
        })?;
        if !seen_instances.insert((ann.image_id, ann.id)) {
            return Err(Error::Integrity(format!(
                "duplicate annotation id {} in image {}",
                ann.id, ann.image_id
            )));
        }
        let [x, y, w, h] = ann.bbox;
        let clipped = BBox { x, y, w, h }.clip(image.width, image.height);
        match clipped {
            Some(bbox) if bbox.w > 0.0 && bbox.h > 0.0 => image.objects.push(ObjectInstance {
                instance_id: ann.id,
                class: class.clone(),
                bbox,
            }),
            _ => log::warn!(
                "annotation {} of image {} lies outside the image, dropped",
                ann.id,
                ann.image_id
            ),
        }
    }

    Ok(images.into_values().collect())
}

/// Loads and tokenizes human captions. Every `image_id` must be in `known`.
pub fn load_coco_captions(path: &Path, known: &BTreeSet<ImageId>) -> Result<Vec<CaptionRecord>> {
    let file: CaptionsFile = read_json(path)?;
    let mut captions = Vec::with_capacity(file.annotations.len());
    for cap in file.annotations {
        let image_id = ImageId(cap.image_id);
        if !known.contains(&image_id) {
            return Err(Error::Integrity(format!(
                "caption {} references unknown image_id {}",
                cap.id, cap.image_id
            )));
        }
        let tokens = tokenize(&cap.caption);
        if tokens.is_empty() {
            log::warn!("caption {} of image {} is empty, skipped", cap.id, cap.image_id);
            continue;
        }
        captions.push(CaptionRecord::new(cap.id, image_id, tokens, CaptionOrigin::Human)?);
    }
    captions.sort_by_key(|c| (c.image_id, c.caption_id));
    Ok(captions)
}

pub fn load_coco(
    annotation_file: &Path,
    caption_file: &Path,
    lexicon: &Lexicon,
) -> Result<(Vec<ImageRecord>, Vec<CaptionRecord>)> {
    let images = load_coco_instances(annotation_file, lexicon)?;
    let known: BTreeSet<ImageId> = images.iter().map(|im| im.image_id).collect();
    let captions = load_coco_captions(caption_file, &known)?;
    Ok((images, captions))
}
