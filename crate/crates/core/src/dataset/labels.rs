use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ImageId;
use crate::error::{Error, Result};
use crate::jsonl;
use crate::lexicon::Lexicon;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionLabel {
    pub name: String,
    pub score: f64,
}

/// Detection labels per image, highest score first.
pub type DetectionLabels = BTreeMap<ImageId, Vec<DetectionLabel>>;

#[derive(Deserialize)]
struct LabelRecord {
    image_id: u64,
    #[serde(default)]
    labels: Vec<DetectionLabel>,
}

pub fn load_detection_labels(path: &Path, lexicon: &Lexicon) -> Result<DetectionLabels> {
    let content = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_detection_labels(path, &content, lexicon)
}

/// Parses `{image_id, labels: [{name, score}]}` lines. Names are normalized
/// through the lexicon; labels with unknown names are logged and skipped.
/// Repeated image ids are merged.
pub fn parse_detection_labels(
    path: &Path,
    content: &str,
    lexicon: &Lexicon,
) -> Result<DetectionLabels> {
    let records: Vec<LabelRecord> = jsonl::parse(path, content)?;
    let mut out = DetectionLabels::new();
    for record in records {
        let entry = out.entry(ImageId(record.image_id)).or_default();
        for label in record.labels {
            match lexicon.resolve(&label.name) {
                Some(class) if label.score.is_finite() => entry.push(DetectionLabel {
                    name: class.name.clone(),
                    score: label.score,
                }),
                Some(_) => log::warn!(
                    "image {}: non-finite score for {:?}, skipped",
                    record.image_id,
                    label.name
                ),
                None => log::warn!(
                    "image {}: unknown class {:?}, skipped",
                    record.image_id,
                    label.name
                ),
            }
        }
    }
    for labels in out.values_mut() {
        labels.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.name.cmp(&b.name)));
    }
    Ok(out)
}
