//! Reference scorer: an add-k smoothed n-gram model over caption tokens,
//! mixed with a unigram prior per context tag.
//!
//! `p(w | prefix, tags) = (1 - λ) · ngram(w | prefix) + λ · mean_t U_t(w)`
//!
//! The n-gram part uses the longest context (up to `order - 1` tokens,
//! `<bos>`-padded) that was seen in training, and falls back to shorter ones
//! otherwise. `U_t` is the token distribution of captions whose images carry
//! tag `t`, with a fixed share spread over the class's in-vocabulary mention
//! tokens. Tags without any such mass are ignored; with no usable tag λ is 0.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::decoding::{Scorer, TokenId, Vocabulary, BOS, EOS};
use crate::error::{Error, Result};
use crate::lexicon::Lexicon;

pub const FORMAT: &str = "synthcap-ngram";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NGramConfig {
    pub order: usize,
    /// Add-k constant.
    pub smoothing: f64,
    /// λ, weight of the tag prior.
    pub tag_weight: f64,
    /// Share of each tag prior reserved for the class's mention tokens.
    pub mention_floor: f64,
}

impl Default for NGramConfig {
    fn default() -> Self {
        NGramConfig {
            order: 3,
            smoothing: 0.1,
            tag_weight: 0.3,
            mention_floor: 0.5,
        }
    }
}

impl NGramConfig {
    pub fn validate(&self) -> Result<()> {
        if self.order == 0 {
            return Err(Error::Config("n-gram order must be at least 1".into()));
        }
        if !(self.smoothing > 0.0 && self.smoothing.is_finite()) {
            return Err(Error::Config("smoothing constant must be positive".into()));
        }
        for (name, v) in [("tag_weight", self.tag_weight), ("mention_floor", self.mention_floor)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        Ok(())
    }
}

/// A training caption together with the tags of the image it describes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaggedCaption {
    pub tokens: Vec<String>,
    pub tags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ContextCounts {
    context: Vec<TokenId>,
    counts: Vec<(TokenId, u64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TagCounts {
    counts: Vec<(TokenId, u64)>,
    mentions: Vec<TokenId>,
}

/// On-disk form. Only integer counts are stored; probabilities are
/// recomputed on load so a round trip is exact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    config: NGramConfig,
    vocab: Vocabulary,
    contexts: Vec<ContextCounts>,
    tags: BTreeMap<String, TagCounts>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NGramModel {
    file: ModelFile,
    /// Context -> (total, counts).
    table: BTreeMap<Vec<TokenId>, (u64, BTreeMap<TokenId, u64>)>,
    /// Tag -> dense probabilities.
    priors: BTreeMap<String, Vec<f64>>,
}

impl NGramModel {
    /// Counts every context of length `0..order` over `<bos>`-padded
    /// captions. The vocabulary is the set of training tokens.
    pub fn train(corpus: &[TaggedCaption], lexicon: &Lexicon, cfg: &NGramConfig) -> Result<Self> {
        cfg.validate()?;
        if corpus.iter().all(|c| c.tokens.is_empty()) {
            return Err(Error::Config("cannot train a scorer on an empty corpus".into()));
        }
        let vocab = Vocabulary::from_words(corpus.iter().flat_map(|c| c.tokens.iter()));

        let mut table: BTreeMap<Vec<TokenId>, BTreeMap<TokenId, u64>> = BTreeMap::new();
        let mut tag_counts: BTreeMap<String, BTreeMap<TokenId, u64>> = BTreeMap::new();
        for caption in corpus.iter().filter(|c| !c.tokens.is_empty()) {
            let mut seq = vec![BOS; cfg.order - 1];
            seq.extend(vocab.encode(&caption.tokens));
            seq.push(EOS);
            for i in cfg.order - 1..seq.len() {
                for n in 0..cfg.order {
                    let ctx = seq[i - n..i].to_vec();
                    *table.entry(ctx).or_default().entry(seq[i]).or_default() += 1;
                }
            }
            let tags: BTreeSet<&String> = caption.tags.iter().collect();
            for tag in tags {
                let counts = tag_counts.entry(tag.clone()).or_default();
                for t in vocab.encode(&caption.tokens) {
                    *counts.entry(t).or_default() += 1;
                }
            }
        }

        let mut tags = BTreeMap::new();
        let names: BTreeSet<String> = tag_counts
            .keys()
            .cloned()
            .chain(lexicon.classes().iter().map(|c| c.name.clone()))
            .collect();
        for name in names {
            let mentions: Vec<TokenId> = lexicon
                .get(&name)
                .map(|class| {
                    class
                        .mention_tokens()
                        .into_iter()
                        .filter_map(|w| vocab.id(w))
                        .collect()
                })
                .unwrap_or_default();
            let counts: Vec<(TokenId, u64)> = tag_counts
                .remove(&name)
                .unwrap_or_default()
                .into_iter()
                .collect();
            if counts.is_empty() && mentions.is_empty() {
                continue;
            }
            tags.insert(name, TagCounts { counts, mentions });
        }

        let file = ModelFile {
            format: FORMAT.to_owned(),
            version: FORMAT_VERSION,
            config: *cfg,
            vocab,
            contexts: table
                .into_iter()
                .map(|(context, counts)| ContextCounts {
                    context,
                    counts: counts.into_iter().collect(),
                })
                .collect(),
            tags,
        };
        Ok(Self::from_file(file))
    }

    fn from_file(file: ModelFile) -> Self {
        let table = file
            .contexts
            .iter()
            .map(|c| {
                let counts: BTreeMap<TokenId, u64> = c.counts.iter().copied().collect();
                (c.context.clone(), (counts.values().sum(), counts))
            })
            .collect();
        let v = file.vocab.len();
        let floor = file.config.mention_floor;
        let priors = file
            .tags
            .iter()
            .map(|(name, tc)| {
                let mut p = vec![0.0; v];
                let total: u64 = tc.counts.iter().map(|&(_, c)| c).sum();
                let mention_share = match (total, tc.mentions.is_empty()) {
                    (_, true) => 0.0,
                    (0, false) => 1.0,
                    _ => floor,
                };
                if total > 0 {
                    for &(t, c) in &tc.counts {
                        p[t as usize] += (1.0 - mention_share) * c as f64 / total as f64;
                    }
                }
                for &t in &tc.mentions {
                    p[t as usize] += mention_share / tc.mentions.len() as f64;
                }
                (name.clone(), p)
            })
            .collect();
        NGramModel {
            file,
            table,
            priors,
        }
    }

    pub fn config(&self) -> &NGramConfig {
        &self.file.config
    }

    /// Same counts, different λ.
    pub fn with_tag_weight(&self, tag_weight: f64) -> Result<Self> {
        let mut file = self.file.clone();
        file.config.tag_weight = tag_weight;
        file.config.validate()?;
        Ok(Self::from_file(file))
    }

    /// Tags that contribute to the prior.
    pub fn known_tags(&self) -> impl Iterator<Item = &str> {
        self.priors.keys().map(String::as_str)
    }

    /// Smoothed n-gram probabilities for the next token, without tags.
    pub fn ngram_probs(&self, prefix: &[TokenId]) -> Vec<f64> {
        let order = self.file.config.order;
        let k = self.file.config.smoothing;
        let v = self.file.vocab.len();
        let mut padded = vec![BOS; (order - 1).saturating_sub(prefix.len())];
        padded.extend_from_slice(&prefix[prefix.len().saturating_sub(order - 1)..]);

        let mut out = vec![0.0; v];
        for n in (0..order).rev() {
            let ctx = &padded[padded.len() - n..];
            let Some((total, counts)) = self.table.get(ctx) else {
                continue;
            };
            // every token but <bos> gets k
            let denom = *total as f64 + k * (v - 1) as f64;
            for (t, p) in out.iter_mut().enumerate().skip(1) {
                let c = counts.get(&(t as TokenId)).copied().unwrap_or(0);
                *p = (c as f64 + k) / denom;
            }
            return out;
        }
        unreachable!("the empty context is always counted")
    }

    /// Mixture of the usable tag priors, or `None`.
    pub fn tag_prior(&self, tags: &[String]) -> Option<Vec<f64>> {
        let found: Vec<&Vec<f64>> = tags
            .iter()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .filter_map(|t| self.priors.get(t))
            .collect();
        if found.is_empty() {
            return None;
        }
        let mut mix = vec![0.0; self.file.vocab.len()];
        for p in &found {
            for (m, x) in mix.iter_mut().zip(p.iter()) {
                *m += x / found.len() as f64;
            }
        }
        Some(mix)
    }

    /// Probabilities of the full mixture.
    pub fn probs(&self, prefix: &[TokenId], tags: &[String]) -> Vec<f64> {
        let mut p = self.ngram_probs(prefix);
        let lambda = self.file.config.tag_weight;
        if lambda > 0.0 {
            if let Some(prior) = self.tag_prior(tags) {
                for (x, u) in p.iter_mut().zip(prior) {
                    *x = (1.0 - lambda) * *x + lambda * u;
                }
            }
        }
        p
    }

    /// Unconditional unigram probability of `word` (0 when out of vocabulary).
    pub fn unigram_prob(&self, word: &str) -> f64 {
        match self.file.vocab.id(word) {
            Some(t) => self.ngram_probs_for_context(&[])[t as usize],
            None => 0.0,
        }
    }

    fn ngram_probs_for_context(&self, ctx: &[TokenId]) -> Vec<f64> {
        let k = self.file.config.smoothing;
        let v = self.file.vocab.len();
        let (total, counts) = &self.table[ctx];
        let denom = *total as f64 + k * (v - 1) as f64;
        (0..v)
            .map(|t| {
                if t == BOS as usize {
                    0.0
                } else {
                    (counts.get(&(t as TokenId)).copied().unwrap_or(0) as f64 + k) / denom
                }
            })
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.file).expect("model serializes")
    }

    pub fn from_json(path: &Path, content: &str) -> Result<Self> {
        let file: ModelFile =
            serde_json::from_str(content).map_err(|e| Error::json(path, content, &e))?;
        if file.format != FORMAT || file.version != FORMAT_VERSION {
            return Err(Error::Config(format!(
                "{}: unsupported model format {} v{}",
                path.display(),
                file.format,
                file.version
            )));
        }
        file.config.validate()?;
        let v = file.vocab.len() as TokenId;
        let ids_ok = file.contexts.iter().all(|c| {
            c.context.len() < file.config.order
                && c.context.iter().chain(c.counts.iter().map(|(t, _)| t)).all(|&t| t < v)
        }) && file
            .tags
            .values()
            .all(|tc| tc.counts.iter().map(|(t, _)| t).chain(&tc.mentions).all(|&t| t < v));
        if !ids_ok || !file.contexts.iter().any(|c| c.context.is_empty()) {
            return Err(Error::Integrity(format!(
                "{}: model counts are inconsistent with its vocabulary",
                path.display()
            )));
        }
        Ok(Self::from_file(file))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::jsonl::write_atomic(path, self.to_json().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let content = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(path, &content)
    }
}

impl Scorer for NGramModel {
    fn vocab(&self) -> &Vocabulary {
        &self.file.vocab
    }

    fn next_logprobs(&self, prefix: &[TokenId], context_tags: &[String]) -> Vec<f64> {
        self.probs(prefix, context_tags)
            .into_iter()
            .map(|p| if p > 0.0 { p.ln() } else { f64::NEG_INFINITY })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoding::{checked_logprobs, logsumexp, UNK};
    use crate::text::tokenize;
    use proptest::prelude::*;

    fn cap(text: &str, tags: &[&str]) -> TaggedCaption {
        TaggedCaption {
            tokens: tokenize(text),
            tags: tags.iter().map(|t| t.to_string()).collect(),
        }
    }

    fn corpus() -> Vec<TaggedCaption> {
        vec![
            cap("a cow in a field", &["cow"]),
            cap("two cows eating grass", &["cow"]),
            cap("a zebra standing in a field", &["zebra"]),
            cap("a dog on a couch", &["dog", "couch"]),
        ]
    }

    fn ids(m: &NGramModel, words: &[&str]) -> Vec<TokenId> {
        let mut out = vec![BOS];
        out.extend(words.iter().map(|w| m.vocab().id_or_unk(w)));
        out
    }

    #[test]
    fn bigram_add_k_estimate() {
        let cfg = NGramConfig {
            order: 2,
            tag_weight: 0.0,
            ..Default::default()
        };
        let m = NGramModel::train(&[cap("a cat", &[])], &Lexicon::default(), &cfg).unwrap();
        // vocab: <bos> <eos> <unk> a cat; context [a] seen once followed by cat
        let p = m.ngram_probs(&ids(&m, &["a"]));
        let cat = m.vocab().id("cat").unwrap() as usize;
        let denom = 1.0 + 0.1 * 4.0;
        assert!((p[cat] - 1.1 / denom).abs() < 1e-12);
        assert!((p[EOS as usize] - 0.1 / denom).abs() < 1e-12);
        let best = (0..p.len()).max_by(|&a, &b| p[a].total_cmp(&p[b])).unwrap();
        assert_eq!(best, cat);
    }

    #[test]
    fn deterministic_training() {
        let a = NGramModel::train(&corpus(), &Lexicon::default(), &NGramConfig::default()).unwrap();
        let b = NGramModel::train(&corpus(), &Lexicon::default(), &NGramConfig::default()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_json(), b.to_json());
    }

    #[test]
    fn empty_corpus_is_error() {
        let cfg = NGramConfig::default();
        assert!(NGramModel::train(&[], &Lexicon::default(), &cfg).is_err());
        assert!(NGramModel::train(&[cap("", &[])], &Lexicon::default(), &cfg).is_err());
    }

    #[test]
    fn unknown_words_are_unk() {
        let m = NGramModel::train(&corpus(), &Lexicon::default(), &NGramConfig::default()).unwrap();
        assert_eq!(m.vocab().id_or_unk("giraffe"), UNK);
        assert_eq!(m.unigram_prob("giraffe"), 0.0);
        let lp = checked_logprobs(&m, &ids(&m, &["a", "giraffe"]), &[]).unwrap();
        assert_eq!(lp[BOS as usize], f64::NEG_INFINITY);
    }

    #[test]
    fn zero_tag_weight_is_pure_ngram() {
        let m = NGramModel::train(&corpus(), &Lexicon::default(), &NGramConfig::default())
            .unwrap()
            .with_tag_weight(0.0)
            .unwrap();
        let prefix = ids(&m, &["a"]);
        assert_eq!(m.probs(&prefix, &["zebra".into()]), m.ngram_probs(&prefix));
    }

    #[test]
    fn zebra_tag_raises_zebra() {
        let m = NGramModel::train(&corpus(), &Lexicon::default(), &NGramConfig::default()).unwrap();
        let z = m.vocab().id("zebra").unwrap() as usize;
        let prefix = ids(&m, &["a"]);
        let plain = m.probs(&prefix, &[]);
        let tagged = m.probs(&prefix, &["zebra".into()]);
        assert!(tagged[z] > plain[z]);
        // direct mixture arithmetic
        let prior = m.tag_prior(&["zebra".into()]).unwrap();
        assert!((tagged[z] - (0.7 * plain[z] + 0.3 * prior[z])).abs() < 1e-12);
    }

    #[test]
    fn prior_of_untrained_tag_is_mentions_only() {
        // "couch" is a class tag with captions; "sheep" is a class never seen
        let m = NGramModel::train(&corpus(), &Lexicon::default(), &NGramConfig::default()).unwrap();
        assert!(m.tag_prior(&["sheep".into()]).is_none());
        assert!(m.tag_prior(&["not a class".into()]).is_none());
        let cows = m.tag_prior(&["cow".into()]).unwrap();
        let cow = m.vocab().id("cow").unwrap() as usize;
        let cows_id = m.vocab().id("cows").unwrap() as usize;
        // caption share 0.5 over 9 tokens, each cow form appears once;
        // mention share 0.5 over {cow, cows}
        assert!((cows[cow] - (0.5 / 9.0 + 0.25)).abs() < 1e-12);
        assert!((cows[cows_id] - (0.5 / 9.0 + 0.25)).abs() < 1e-12);
        assert!((cows.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn synthetic_captions_add_the_novel_word() {
        let base: Vec<TaggedCaption> = corpus()
            .into_iter()
            .filter(|c| !c.tokens.contains(&"zebra".to_owned()))
            .collect();
        let m = NGramModel::train(&base, &Lexicon::default(), &NGramConfig::default()).unwrap();
        assert_eq!(m.unigram_prob("zebra"), 0.0);
        let mut warm = base.clone();
        warm.push(cap("a zebra in a field", &["zebra"]));
        let m = NGramModel::train(&warm, &Lexicon::default(), &NGramConfig::default()).unwrap();
        assert!(m.unigram_prob("zebra") > 0.0);
    }

    #[test]
    fn json_round_trip_is_exact() {
        let m = NGramModel::train(&corpus(), &Lexicon::default(), &NGramConfig::default()).unwrap();
        let json = m.to_json();
        let back = NGramModel::from_json(Path::new("m.json"), &json).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_json(), json);
    }

    #[test]
    fn rejects_foreign_or_corrupt_files() {
        let m = NGramModel::train(&corpus(), &Lexicon::default(), &NGramConfig::default()).unwrap();
        let json = m.to_json();
        let wrong_version = json.replace("\"version\":1", "\"version\":9");
        assert!(NGramModel::from_json(Path::new("m"), &wrong_version).is_err());
        assert!(NGramModel::from_json(Path::new("m"), "{").is_err());
    }

    #[test]
    fn backs_off_to_shorter_contexts() {
        let m = NGramModel::train(&corpus(), &Lexicon::default(), &NGramConfig::default()).unwrap();
        // "grass a" never occurs; the bigram context [a] decides
        let p = m.ngram_probs(&ids(&m, &["grass", "a"]));
        let (total, counts) = &m.table[&vec![m.vocab().id("a").unwrap()]];
        let field = m.vocab().id("field").unwrap();
        let denom = *total as f64 + 0.1 * (m.vocab().len() - 1) as f64;
        assert!((p[field as usize] - (counts[&field] as f64 + 0.1) / denom).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn normalized_for_every_query(
            prefix in prop::collection::vec(0usize..20, 0..6),
            tags in prop::collection::vec(prop::sample::select(vec!["cow", "zebra", "dog", "couch", "x"]), 0..4),
            lambda in 0.0f64..=1.0,
        ) {
            let m = NGramModel::train(&corpus(), &Lexicon::default(), &NGramConfig::default())
                .unwrap()
                .with_tag_weight(lambda)
                .unwrap();
            let v = m.vocab().len();
            let mut p = vec![BOS];
            p.extend(prefix.iter().map(|&t| (2 + t % (v - 2)) as TokenId));
            let tags: Vec<String> = tags.iter().map(|t| t.to_string()).collect();
            let lp = m.next_logprobs(&p, &tags);
            prop_assert!(logsumexp(&lp).abs() < 1e-9);
        }

        #[test]
        fn tag_influence_is_monotone(
            prefix in prop::collection::vec(0usize..20, 0..4),
            l1 in 0.0f64..=1.0,
            l2 in 0.0f64..=1.0,
        ) {
            let (lo, hi) = if l1 <= l2 { (l1, l2) } else { (l2, l1) };
            let base = NGramModel::train(&corpus(), &Lexicon::default(), &NGramConfig::default()).unwrap();
            let v = base.vocab().len();
            let mut p = vec![BOS];
            p.extend(prefix.iter().map(|&t| (2 + t % (v - 2)) as TokenId));
            let tags = vec!["zebra".to_owned()];
            let prior = base.tag_prior(&tags).unwrap();
            let ngram = base.ngram_probs(&p);
            let a = base.with_tag_weight(lo).unwrap().probs(&p, &tags);
            let b = base.with_tag_weight(hi).unwrap().probs(&p, &tags);
            for t in 0..v {
                if prior[t] > ngram[t] {
                    prop_assert!(b[t] >= a[t] - 1e-15);
                }
            }
        }
    }
}
