//! Object classes and their caption mention words.
//!
//! Mention detection is lexicon based: a caption mentions a class when any
//! of the class's word forms (single or multi-token) occurs as a contiguous
//! token run. The shipped lexicon covers the 80 COCO detection classes plus a
//! few caption-only candidate classes that have no box annotations.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::{find_subsequence, tokenize};

/// The eight held-out COCO classes.
pub const HELD_OUT_CLASSES: [&str; 8] = [
    "bottle",
    "bus",
    "couch",
    "microwave",
    "pizza",
    "racket",
    "suitcase",
    "zebra",
];

const DEFAULT_LEXICON: &str = include_str!("../data/lexicon.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawClass", into = "RawClass")]
pub struct ObjectClass {
    pub id: u32,
    pub name: String,
    mention_words: Vec<Vec<String>>,
    pub has_bbox_annotations: bool,
}

#[derive(Serialize, Deserialize)]
struct RawClass {
    id: u32,
    name: String,
    mention_words: Vec<String>,
    #[serde(default = "default_true")]
    has_bbox_annotations: bool,
}

fn default_true() -> bool {
    true
}

impl TryFrom<RawClass> for ObjectClass {
    type Error = Error;

    fn try_from(raw: RawClass) -> Result<Self> {
        ObjectClass::new(
            raw.id,
            &raw.name,
            &raw.mention_words,
            raw.has_bbox_annotations,
        )
    }
}

impl From<ObjectClass> for RawClass {
    fn from(class: ObjectClass) -> Self {
        RawClass {
            id: class.id,
            mention_words: class.mention_words.iter().map(|w| w.join(" ")).collect(),
            name: class.name,
            has_bbox_annotations: class.has_bbox_annotations,
        }
    }
}

impl ObjectClass {
    pub fn new<S: AsRef<str>>(
        id: u32,
        name: &str,
        mention_words: &[S],
        has_bbox_annotations: bool,
    ) -> Result<Self> {
        if name.is_empty() || name != name.to_lowercase() {
            return Err(Error::Config(format!(
                "class name {name:?} must be non-empty lowercase"
            )));
        }
        let mut words = Vec::new();
        for word in mention_words {
            let word = word.as_ref();
            if word != word.to_lowercase() {
                return Err(Error::Config(format!(
                    "mention word {word:?} of class {name} is not lowercase"
                )));
            }
            let toks = tokenize(word);
            if toks.is_empty() {
                return Err(Error::Config(format!("empty mention word in class {name}")));
            }
            if !words.contains(&toks) {
                words.push(toks);
            }
        }
        if words.is_empty() {
            return Err(Error::Config(format!("class {name} has no mention words")));
        }
        Ok(ObjectClass {
            id,
            name: name.to_owned(),
            mention_words: words,
            has_bbox_annotations,
        })
    }

    /// Word forms as token sequences, in lexicon order.
    pub fn mention_words(&self) -> &[Vec<String>] {
        &self.mention_words
    }

    /// Name as a token sequence (`"tennis racket"` -> `["tennis", "racket"]`).
    pub fn name_tokens(&self) -> Vec<String> {
        tokenize(&self.name)
    }

    /// Every token that appears in any mention word.
    pub fn mention_tokens(&self) -> BTreeSet<&str> {
        self.mention_words
            .iter()
            .flatten()
            .map(String::as_str)
            .collect()
    }

    /// Longest mention word starting at `pos`, returned as its token length.
    pub fn match_at<S: AsRef<str>>(&self, tokens: &[S], pos: usize) -> Option<usize> {
        self.mention_words
            .iter()
            .filter(|w| {
                pos + w.len() <= tokens.len()
                    && w.iter()
                        .zip(&tokens[pos..])
                        .all(|(a, b)| a == b.as_ref())
            })
            .map(Vec::len)
            .max()
    }

    /// Non-overlapping mention spans `(start, end)`, scanning left to right
    /// and preferring the longest form at each position.
    pub fn mention_spans<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<(usize, usize)> {
        let mut spans = Vec::new();
        let mut pos = 0;
        while pos < tokens.len() {
            match self.match_at(tokens, pos) {
                Some(len) => {
                    spans.push((pos, pos + len));
                    pos += len;
                }
                None => pos += 1,
            }
        }
        spans
    }
}

/// True iff any mention word of `class` occurs in `tokens` as a contiguous
/// run. Tokens are compared lowercased.
pub fn caption_mentions<S: AsRef<str>>(tokens: &[S], class: &ObjectClass) -> bool {
    let lowered: Vec<String>;
    let tokens: Vec<&str> = if tokens.iter().any(|t| t.as_ref().chars().any(char::is_uppercase)) {
        lowered = tokens.iter().map(|t| t.as_ref().to_lowercase()).collect();
        lowered.iter().map(String::as_str).collect()
    } else {
        tokens.iter().map(AsRef::as_ref).collect()
    };
    class
        .mention_words
        .iter()
        .any(|w| find_subsequence(&tokens, w, 0).is_some())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<ObjectClass>", into = "Vec<ObjectClass>")]
pub struct Lexicon {
    classes: Vec<ObjectClass>,
    by_name: BTreeMap<String, usize>,
    by_word: BTreeMap<String, usize>,
}

impl TryFrom<Vec<ObjectClass>> for Lexicon {
    type Error = Error;

    fn try_from(classes: Vec<ObjectClass>) -> Result<Self> {
        Lexicon::new(classes)
    }
}

impl From<Lexicon> for Vec<ObjectClass> {
    fn from(lex: Lexicon) -> Self {
        lex.classes
    }
}

impl Default for Lexicon {
    fn default() -> Self {
        serde_json::from_str(DEFAULT_LEXICON).expect("bundled lexicon is valid")
    }
}

impl Lexicon {
    pub fn new(classes: Vec<ObjectClass>) -> Result<Self> {
        let mut by_name = BTreeMap::new();
        let mut by_word = BTreeMap::new();
        for (idx, class) in classes.iter().enumerate() {
            if by_name.insert(class.name.clone(), idx).is_some() {
                return Err(Error::Config(format!("duplicate class name {}", class.name)));
            }
            for word in &class.mention_words {
                by_word.entry(word.join(" ")).or_insert(idx);
            }
        }
        Ok(Lexicon {
            classes,
            by_name,
            by_word,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let content = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&content).map_err(|e| Error::json(path, &content, &e))
    }

    pub fn classes(&self) -> &[ObjectClass] {
        &self.classes
    }

    pub fn get(&self, name: &str) -> Option<&ObjectClass> {
        self.by_name.get(name).map(|&i| &self.classes[i])
    }

    /// Resolves a label to a class: exact name first, then any mention word
    /// (so `"tennis racket"` and `"sofa"` resolve to `racket` and `couch`).
    pub fn resolve(&self, label: &str) -> Option<&ObjectClass> {
        let key = tokenize(label).join(" ");
        self.by_name
            .get(&key)
            .or_else(|| self.by_word.get(&key))
            .map(|&i| &self.classes[i])
    }

    pub fn require(&self, name: &str) -> Result<&ObjectClass> {
        self.resolve(name)
            .ok_or_else(|| Error::Config(format!("unknown object class {name:?}")))
    }

    /// Resolves a list of names, failing on the first unknown one.
    pub fn require_all<S: AsRef<str>>(&self, names: &[S]) -> Result<Vec<ObjectClass>> {
        names
            .iter()
            .map(|n| self.require(n.as_ref()).cloned())
            .collect()
    }
}
