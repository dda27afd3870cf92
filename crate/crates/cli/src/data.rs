//! The dataset directory written by `split` and `toy`.

use std::path::Path;

use synthcap_core::dataset::{
    read_split_manifest, write_split_manifest, CaptionRecord, DatasetSplit, ImageId, ImageRecord,
};
use synthcap_core::jsonl;
use synthcap_core::Result;

pub const IMAGES_FILE: &str = "images.jsonl";
pub const CAPTIONS_FILE: &str = "captions.jsonl";
pub const SPLIT_FILE: &str = "split.jsonl";

pub struct Dataset {
    pub images: Vec<ImageRecord>,
    pub captions: Vec<CaptionRecord>,
    pub split: DatasetSplit,
}

impl Dataset {
    pub fn load(dir: &Path) -> Result<Self> {
        Ok(Dataset {
            images: jsonl::read(&dir.join(IMAGES_FILE))?,
            captions: jsonl::read(&dir.join(CAPTIONS_FILE))?,
            split: read_split_manifest(&dir.join(SPLIT_FILE))?,
        })
    }

    pub fn write(dir: &Path, images: &[ImageRecord], captions: &[CaptionRecord], split: &DatasetSplit) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| synthcap_core::Error::io(dir, e))?;
        jsonl::write(&dir.join(IMAGES_FILE), images)?;
        jsonl::write(&dir.join(CAPTIONS_FILE), captions)?;
        write_split_manifest(&dir.join(SPLIT_FILE), split)
    }

    pub fn images_in<'a>(&'a self, ids: &'a std::collections::BTreeSet<ImageId>) -> Vec<&'a ImageRecord> {
        self.images.iter().filter(|im| ids.contains(&im.image_id)).collect()
    }
}
