//! Held-out split construction and in/out-of-domain partition.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{captions_by_image, CaptionRecord, ImageId, ImageRecord, References};
use crate::error::{Error, Result};
use crate::jsonl;
use crate::lexicon::{caption_mentions, ObjectClass};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    /// Training images that keep their captions.
    pub fully_paired: BTreeSet<ImageId>,
    /// Training images whose captions are withheld; only object labels remain.
    pub partially_paired: BTreeSet<ImageId>,
    pub val: BTreeSet<ImageId>,
    pub test: BTreeSet<ImageId>,
    /// Evaluation images whose references mention a novel class.
    pub out_of_domain: BTreeMap<ImageId, bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitKind {
    #[serde(rename = "fully")]
    Fully,
    #[serde(rename = "partial")]
    Partial,
    Val,
    Test,
}

/// One line of the split manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitEntry {
    pub image_id: ImageId,
    pub split: SplitKind,
    pub out_of_domain: bool,
}

fn mentions_any(tokens: &[String], novel: &[ObjectClass]) -> bool {
    novel.iter().any(|class| caption_mentions(tokens, class))
}

/// An image is partially paired iff at least one of its captions mentions a
/// novel class; its captions are then withheld. Every training image must
/// carry at least one caption.
pub fn build_heldout_split(
    images: &[ImageRecord],
    captions: &[CaptionRecord],
    novel_classes: &[ObjectClass],
) -> Result<DatasetSplit> {
    if novel_classes.is_empty() {
        return Err(Error::Config("no novel classes given".into()));
    }
    let by_image = captions_by_image(captions);
    let mut split = DatasetSplit::default();
    for image in images {
        let caps = by_image.get(&image.image_id).ok_or_else(|| {
            Error::Integrity(format!("training image {} has no captions", image.image_id))
        })?;
        if caps.iter().any(|c| mentions_any(&c.tokens, novel_classes)) {
            split.partially_paired.insert(image.image_id);
        } else {
            split.fully_paired.insert(image.image_id);
        }
    }
    Ok(split)
}

/// Flags every val/test image as out-of-domain iff one of its references
/// mentions a novel class.
pub fn partition_in_out_domain(
    split: &DatasetSplit,
    references: &References,
    novel_classes: &[ObjectClass],
) -> Result<BTreeMap<ImageId, bool>> {
    split
        .val
        .iter()
        .chain(&split.test)
        .map(|&id| {
            let refs = references
                .get(&id)
                .filter(|r| !r.is_empty())
                .ok_or_else(|| Error::Integrity(format!("image {id} has no references")))?;
            Ok((id, refs.iter().any(|r| mentions_any(r, novel_classes))))
        })
        .collect()
}

impl DatasetSplit {
    pub fn is_out_of_domain(&self, id: ImageId) -> bool {
        self.out_of_domain.get(&id).copied().unwrap_or(false)
    }

    /// Manifest lines ordered by split kind, then image id.
    pub fn to_manifest(&self) -> Vec<SplitEntry> {
        let mut out = Vec::new();
        let kinds = [
            (SplitKind::Fully, &self.fully_paired),
            (SplitKind::Partial, &self.partially_paired),
            (SplitKind::Val, &self.val),
            (SplitKind::Test, &self.test),
        ];
        for (kind, ids) in kinds {
            for &image_id in ids {
                let out_of_domain = match kind {
                    SplitKind::Fully => false,
                    SplitKind::Partial => true,
                    _ => self.is_out_of_domain(image_id),
                };
                out.push(SplitEntry {
                    image_id,
                    split: kind,
                    out_of_domain,
                });
            }
        }
        out
    }

    pub fn from_manifest(entries: &[SplitEntry]) -> Result<Self> {
        let mut split = DatasetSplit::default();
        for e in entries {
            let set = match e.split {
                SplitKind::Fully => &mut split.fully_paired,
                SplitKind::Partial => &mut split.partially_paired,
                SplitKind::Val => &mut split.val,
                SplitKind::Test => &mut split.test,
            };
            if !set.insert(e.image_id) {
                return Err(Error::Integrity(format!(
                    "image {} listed twice in split manifest",
                    e.image_id
                )));
            }
            if matches!(e.split, SplitKind::Val | SplitKind::Test) {
                split.out_of_domain.insert(e.image_id, e.out_of_domain);
            }
        }
        if let Some(id) = split.fully_paired.intersection(&split.partially_paired).next() {
            return Err(Error::Integrity(format!(
                "image {id} is both fully and partially paired"
            )));
        }
        Ok(split)
    }
}

pub fn write_split_manifest(path: &Path, split: &DatasetSplit) -> Result<()> {
    jsonl::write(path, &split.to_manifest())
}

pub fn read_split_manifest(path: &Path) -> Result<DatasetSplit> {
    DatasetSplit::from_manifest(&jsonl::read::<SplitEntry>(path)?)
}
