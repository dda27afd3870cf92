//! Synthetic image generation by bounding-box object replacement.
//!
//! A crop of a novel object, taken from a partially paired image, is pasted
//! over a similar-looking candidate object in a fully paired image. The
//! target's caption is rewritten to mention the novel object instead.

mod composite;
mod geometry;
mod plan;

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{BBox, CaptionRecord, ImageId};

pub use composite::{composite, generate_batch, BatchInputs, RewriteFn};
pub use geometry::{check_geometry, exclude_containing, PairConstraints};
pub use plan::{enumerate_replacement_pairs, plan_generation, DEFAULT_K};

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const IMAGES_DIR: &str = "images";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRef {
    pub image_id: ImageId,
    pub instance_id: u64,
    pub bbox: BBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplacementPair {
    pub novel_class: String,
    pub candidate_class: String,
    /// Source crop, from a partially paired image.
    pub novel: InstanceRef,
    /// Region to overwrite, in a fully paired image.
    pub candidate: InstanceRef,
}

/// One planned synthetic image: every listed candidate instance of `target`
/// is overwritten.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub synth_id: String,
    pub target: ImageId,
    pub novel_class: String,
    pub candidate_class: String,
    pub pairs: Vec<ReplacementPair>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationPlan {
    pub k: usize,
    pub m: usize,
    pub per_pair_quota: usize,
    pub seed: u64,
    pub assignments: Vec<Assignment>,
    /// Novel source image -> number of pastes taken from it.
    pub usage_counts: BTreeMap<ImageId, usize>,
    /// `"novel/candidate"` -> planned images missing from the quota.
    pub shortfalls: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReviewStatus {
    #[default]
    Pending,
    Accepted,
    Rejected,
}

impl ReviewStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            ReviewStatus::Pending => "pending",
            ReviewStatus::Accepted => "accepted",
            ReviewStatus::Rejected => "rejected",
        }
    }
}

impl std::str::FromStr for ReviewStatus {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pending" => Ok(ReviewStatus::Pending),
            "accepted" => Ok(ReviewStatus::Accepted),
            "rejected" => Ok(ReviewStatus::Rejected),
            other => Err(format!("unknown status {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub target_image: ImageId,
    /// Paths as recorded in the dataset, relative to the image root.
    pub target_file: PathBuf,
    pub source_files: BTreeMap<ImageId, PathBuf>,
    pub novel_class: String,
    pub candidate_class: String,
    pub pairs: Vec<ReplacementPair>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticPairRecord {
    pub synth_id: String,
    /// Relative to the directory holding the manifest.
    pub image_path: PathBuf,
    pub caption: CaptionRecord,
    /// Class names annotated in the synthetic image.
    pub context_tags: Vec<String>,
    pub provenance: Provenance,
    #[serde(default)]
    pub verdict: ReviewStatus,
}

/// Stable identifier of a synthetic image: hash of the target id and the
/// ordered replacement pairs.
pub fn synth_id(target: ImageId, pairs: &[ReplacementPair]) -> String {
    let mut h = Sha256::new();
    h.update(format!("target={target};"));
    for p in pairs {
        h.update(format!(
            "{}:{}/{}>{}:{};",
            p.novel_class,
            p.novel.image_id,
            p.novel.instance_id,
            p.candidate_class,
            p.candidate.instance_id
        ));
    }
    hex::encode(&h.finalize()[..12])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(novel_inst: u64) -> ReplacementPair {
        let b = BBox::new(0.0, 0.0, 40.0, 30.0).unwrap();
        ReplacementPair {
            novel_class: "zebra".into(),
            candidate_class: "cow".into(),
            novel: InstanceRef {
                image_id: ImageId(2),
                instance_id: novel_inst,
                bbox: b,
            },
            candidate: InstanceRef {
                image_id: ImageId(1),
                instance_id: 7,
                bbox: b,
            },
        }
    }

    #[test]
    fn synth_id_is_stable_and_order_sensitive() {
        let a = synth_id(ImageId(1), &[pair(1), pair(2)]);
        assert_eq!(a, synth_id(ImageId(1), &[pair(1), pair(2)]));
        assert_eq!(a.len(), 24);
        assert_ne!(a, synth_id(ImageId(1), &[pair(2), pair(1)]));
        assert_ne!(a, synth_id(ImageId(3), &[pair(1), pair(2)]));
    }

    #[test]
    fn status_strings() {
        for s in [ReviewStatus::Pending, ReviewStatus::Accepted, ReviewStatus::Rejected] {
            assert_eq!(s.as_str().parse::<ReviewStatus>().unwrap(), s);
            assert_eq!(serde_json::to_string(&s).unwrap(), format!("\"{}\"", s.as_str()));
        }
        assert!("maybe".parse::<ReviewStatus>().is_err());
    }
}
