//! Caption rewriting for synthetic pairs.
//!
//! Color words are dropped everywhere, adjectives and nouns near the
//! candidate mention are dropped, and the mention itself becomes the novel
//! class name in the same grammatical number. Part-of-speech tags come from
//! word lists rather than a statistical tagger.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lexicon::ObjectClass;

const COLORS: &str = include_str!("../data/rewrite/colors.txt");
const ADJECTIVES: &str = include_str!("../data/rewrite/adjectives.txt");
const NOUNS: &str = include_str!("../data/rewrite/nouns.txt");
const IRREGULAR: &str = include_str!("../data/rewrite/irregular_plurals.txt");

/// Counting words that mark an invariant noun ("sheep") as plural.
const PLURAL_QUANTIFIERS: &[&str] = &[
    "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten", "several", "many",
    "some", "few", "these", "those", "multiple", "numerous",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Tag {
    Adj,
    Noun,
    Other,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RewriteLexicons {
    pub color_words: BTreeSet<String>,
    pub adjectives: BTreeSet<String>,
    pub nouns: BTreeSet<String>,
    /// Singular -> plural.
    pub irregular_plurals: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewriteConfig {
    pub radius_adj: usize,
    pub radius_noun: usize,
    /// Adjust "a"/"an" directly before a replaced mention.
    pub fix_articles: bool,
}

impl Default for RewriteConfig {
    fn default() -> Self {
        RewriteConfig {
            radius_adj: 2,
            radius_noun: 1,
            fix_articles: true,
        }
    }
}

fn word_list(text: &str) -> BTreeSet<String> {
    text.lines()
        .map(|l| l.trim().to_lowercase())
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .collect()
}

fn plural_table(text: &str, origin: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        let [singular, plural] = cols[..] else {
            return Err(Error::Config(format!(
                "{origin} line {}: expected two columns, got {:?}",
                i + 1,
                line
            )));
        };
        out.insert(singular.to_lowercase(), plural.to_lowercase());
    }
    Ok(out)
}

impl Default for RewriteLexicons {
    fn default() -> Self {
        Self::from_texts(COLORS, ADJECTIVES, NOUNS, IRREGULAR).expect("bundled word lists parse")
    }
}

impl RewriteLexicons {
    pub fn from_texts(colors: &str, adjectives: &str, nouns: &str, irregular: &str) -> Result<Self> {
        Ok(RewriteLexicons {
            color_words: word_list(colors),
            adjectives: word_list(adjectives),
            nouns: word_list(nouns),
            irregular_plurals: plural_table(irregular, "irregular_plurals.txt")?,
        })
    }

    /// Reads `colors.txt`, `adjectives.txt`, `nouns.txt` and
    /// `irregular_plurals.txt` from `dir`; missing files fall back to the
    /// bundled lists.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let read = |name: &str, fallback: &'static str| -> Result<String> {
            let path = dir.join(name);
            match std::fs::read_to_string(&path) {
                Ok(s) => Ok(s),
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(fallback.to_owned()),
                Err(e) => Err(Error::io(path, e)),
            }
        };
        Self::from_texts(
            &read("colors.txt", COLORS)?,
            &read("adjectives.txt", ADJECTIVES)?,
            &read("nouns.txt", NOUNS)?,
            &read("irregular_plurals.txt", IRREGULAR)?,
        )
    }

    pub fn tag(&self, token: &str) -> Tag {
        if self.adjectives.contains(token) {
            Tag::Adj
        } else if self.nouns.contains(token) {
            Tag::Noun
        } else {
            Tag::Other
        }
    }

    pub fn is_color(&self, token: &str) -> bool {
        self.color_words.contains(token)
    }

    pub fn pluralize(&self, word: &str) -> String {
        if let Some(p) = self.irregular_plurals.get(word) {
            return p.clone();
        }
        let consonant_y = word.len() >= 2
            && word.ends_with('y')
            && !matches!(word.as_bytes()[word.len() - 2], b'a' | b'e' | b'i' | b'o' | b'u');
        if ["s", "x", "z", "ch", "sh"].iter().any(|s| word.ends_with(s)) {
            format!("{word}es")
        } else if consonant_y {
            format!("{}ies", &word[..word.len() - 1])
        } else {
            format!("{word}s")
        }
    }

    /// Number of the noun `word`; `previous` is the token before it.
    pub fn is_plural(&self, word: &str, previous: Option<&str>) -> bool {
        let is_key = self.irregular_plurals.contains_key(word);
        let is_value = self.irregular_plurals.values().any(|p| p == word);
        match (is_key, is_value) {
            // invariant nouns such as "sheep"
            (true, true) => previous.is_some_and(|p| PLURAL_QUANTIFIERS.contains(&p)),
            (true, false) => false,
            (false, true) => true,
            (false, false) => {
                word.ends_with('s')
                    && !word.ends_with("ss")
                    && !word.ends_with("us")
                    && !word.ends_with("is")
            }
        }
    }
}

pub fn tag_tokens<S: AsRef<str>>(tokens: &[S], lex: &RewriteLexicons) -> Vec<Tag> {
    tokens.iter().map(|t| lex.tag(t.as_ref())).collect()
}

/// Distance in positions from token `i` to the span `[start, end)`.
fn span_distance(i: usize, (start, end): (usize, usize)) -> usize {
    if i < start {
        start - i
    } else {
        i + 1 - end
    }
}

fn starts_with_vowel_sound(word: &str) -> bool {
    word.starts_with(['a', 'e', 'i', 'o', 'u'])
}

/// Rewrites a caption mentioning `candidate` into one mentioning `novel`.
///
/// 1. Color words outside the candidate mentions are removed.
/// 2. Around each mention, adjectives within `radius_adj` and nouns within
///    `radius_noun` positions (measured after step 1) are removed.
/// 3. Each mention is replaced by the novel class name, pluralized when the
///    mention's head word is plural.
pub fn rewrite_caption<S: AsRef<str>>(
    tokens: &[S],
    candidate: &ObjectClass,
    novel: &ObjectClass,
    lex: &RewriteLexicons,
    cfg: &RewriteConfig,
) -> Result<Vec<String>> {
    let tokens: Vec<&str> = tokens.iter().map(AsRef::as_ref).collect();
    let spans = candidate.mention_spans(&tokens);
    if spans.is_empty() {
        return Err(Error::Rewrite(format!(
            "caption {:?} does not mention {}",
            tokens.join(" "),
            candidate.name
        )));
    }

    // Step 1, tracking where each mention lands.
    let in_span = |i: usize| spans.iter().any(|&(s, e)| (s..e).contains(&i));
    let mut kept: Vec<&str> = Vec::with_capacity(tokens.len());
    let mut span_starts = Vec::with_capacity(spans.len());
    let mut span_iter = spans.iter().peekable();
    for (i, &tok) in tokens.iter().enumerate() {
        if span_iter.peek().is_some_and(|&&(s, _)| s == i) {
            span_starts.push(kept.len());
            span_iter.next();
        }
        if in_span(i) || !lex.is_color(tok) {
            kept.push(tok);
        }
    }
    let spans: Vec<(usize, usize)> = span_starts
        .iter()
        .zip(&spans)
        .map(|(&s, &(os, oe))| (s, s + (oe - os)))
        .collect();

    // Step 2.
    let drop: Vec<bool> = (0..kept.len())
        .map(|i| {
            if spans.iter().any(|&(s, e)| (s..e).contains(&i)) {
                return false;
            }
            let d = spans.iter().map(|&sp| span_distance(i, sp)).min().expect("non-empty");
            match lex.tag(kept[i]) {
                Tag::Adj => d <= cfg.radius_adj,
                Tag::Noun => d <= cfg.radius_noun,
                Tag::Other => false,
            }
        })
        .collect();

    // Step 3.
    let novel_tokens = novel.name_tokens();
    let (novel_head, novel_rest) = novel_tokens.split_last().expect("class names are non-empty");
    let novel_plural = lex.pluralize(novel_head);
    let mut out: Vec<String> = Vec::with_capacity(kept.len());
    let mut i = 0;
    while i < kept.len() {
        if let Some(&(s, e)) = spans.iter().find(|&&(s, _)| s == i) {
            let previous = s.checked_sub(1).map(|p| kept[p]);
            let plural = lex.is_plural(kept[e - 1], previous);
            out.extend(novel_rest.iter().cloned());
            out.push(if plural { novel_plural.clone() } else { novel_head.clone() });
            if cfg.fix_articles {
                let first = out.len() - novel_tokens.len();
                if first > 0 {
                    let wants_an = starts_with_vowel_sound(&out[first]);
                    match out[first - 1].as_str() {
                        "a" if wants_an => out[first - 1] = "an".into(),
                        "an" if !wants_an => out[first - 1] = "a".into(),
                        _ => {}
                    }
                }
            }
            i = e;
            continue;
        }
        if !drop[i] {
            out.push(kept[i].to_owned());
        }
        i += 1;
    }
    Ok(out)
}
