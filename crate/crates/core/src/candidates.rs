//! Replacement-candidate selection.
//!
//! For a novel class, captions produced by a baseline model on validation
//! images containing that class are scanned for in-domain class mentions.
//! The most frequently mentioned classes that have box annotations become the
//! replacement candidates.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::CaptionRecord;
use crate::error::{Error, Result};
use crate::lexicon::{caption_mentions, Lexicon, ObjectClass};

pub const DEFAULT_CANDIDATES_PER_NOVEL: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRanking {
    pub novel_class: String,
    pub counts: BTreeMap<String, usize>,
    pub selected: Vec<String>,
}

/// Novel class name -> ordered candidate class names. This is also the
/// on-disk JSON format.
pub type CandidateMap = BTreeMap<String, Vec<String>>;

/// Number of captions mentioning each class; a caption counts at most once
/// per class. Every class in `in_domain_classes` gets an entry.
pub fn count_candidate_occurrences(
    generated_captions: &[CaptionRecord],
    in_domain_classes: &[ObjectClass],
) -> BTreeMap<String, usize> {
    if generated_captions.is_empty() {
        return BTreeMap::new();
    }
    in_domain_classes
        .iter()
        .map(|class| {
            let n = generated_captions
                .iter()
                .filter(|c| caption_mentions(&c.tokens, class))
                .count();
            (class.name.clone(), n)
        })
        .collect()
}

/// Top-`m` classes by count, ties alphabetical. Zero counts never qualify.
/// With `bbox_filter`, classes without box annotations (or unknown to the
/// lexicon) are dropped before taking the prefix.
pub fn select_candidates(
    counts: &BTreeMap<String, usize>,
    m: usize,
    bbox_filter: bool,
    lexicon: &Lexicon,
) -> Result<Vec<String>> {
    if m == 0 {
        return Err(Error::Config("m must be at least 1".into()));
    }
    let mut ranked: Vec<(&String, usize)> = counts
        .iter()
        .filter(|(_, &n)| n > 0)
        .filter(|(name, _)| {
            !bbox_filter || lexicon.get(name).is_some_and(|c| c.has_bbox_annotations)
        })
        .map(|(name, &n)| (name, n))
        .collect();
    if ranked.is_empty() {
        log::warn!("no candidate class has a non-zero count");
        return Ok(Vec::new());
    }
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    Ok(ranked.into_iter().take(m).map(|(n, _)| n.clone()).collect())
}

pub fn rank_candidates(
    novel: &ObjectClass,
    generated_captions: &[CaptionRecord],
    in_domain_classes: &[ObjectClass],
    m: usize,
    lexicon: &Lexicon,
) -> Result<CandidateRanking> {
    let in_domain: Vec<ObjectClass> = in_domain_classes
        .iter()
        .filter(|c| c.name != novel.name)
        .cloned()
        .collect();
    let counts = count_candidate_occurrences(generated_captions, &in_domain);
    let selected = select_candidates(&counts, m, true, lexicon)?;
    Ok(CandidateRanking {
        novel_class: novel.name.clone(),
        counts,
        selected,
    })
}

pub fn load_candidate_map(path: &Path) -> Result<CandidateMap> {
    let content = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&content).map_err(|e| Error::json(path, &content, &e))
}
