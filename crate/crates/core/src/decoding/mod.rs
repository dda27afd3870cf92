//! Plain and constrained beam search over a pluggable next-token scorer.
//!
//! A caption is decoded from `<bos>`; every hypothesis ends in `<eos>`. Once a
//! hypothesis holds `max_len` words only `<eos>` may follow, so a finished
//! caption has at most `max_len` words.

mod beam;
mod cbs;
mod fsm;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataset::ImageId;
use crate::error::{Error, Result};

pub use beam::{beam_search, greedy};
pub use cbs::{constrained_beam_search, CbsOutput};
pub use fsm::{build_fsm, Constraint, ConstraintFsm, FsmState, StateId};

pub type TokenId = u32;

pub const BOS: TokenId = 0;
pub const EOS: TokenId = 1;
pub const UNK: TokenId = 2;
pub const BOS_TOKEN: &str = "<bos>";
pub const EOS_TOKEN: &str = "<eos>";
pub const UNK_TOKEN: &str = "<unk>";

/// Dense token index; ids 0, 1, 2 are `<bos>`, `<eos>`, `<unk>`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: BTreeMap<String, TokenId>,
}

impl TryFrom<Vec<String>> for Vocabulary {
    type Error = Error;

    fn try_from(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 3 || tokens[..3] != [BOS_TOKEN, EOS_TOKEN, UNK_TOKEN] {
            return Err(Error::Config(
                "vocabulary must start with <bos>, <eos>, <unk>".into(),
            ));
        }
        let mut index = BTreeMap::new();
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as TokenId).is_some() {
                return Err(Error::Config(format!("duplicate vocabulary entry {t:?}")));
            }
        }
        Ok(Vocabulary { tokens, index })
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

impl Vocabulary {
    /// Specials followed by the distinct words, sorted.
    pub fn from_words<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut distinct: Vec<String> = words
            .into_iter()
            .map(|w| w.as_ref().to_owned())
            .filter(|w| ![BOS_TOKEN, EOS_TOKEN, UNK_TOKEN].contains(&w.as_str()))
            .collect();
        distinct.sort();
        distinct.dedup();
        let mut tokens = vec![BOS_TOKEN.to_owned(), EOS_TOKEN.to_owned(), UNK_TOKEN.to_owned()];
        tokens.extend(distinct);
        Vocabulary::try_from(tokens).expect("specials are distinct")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, word: &str) -> Option<TokenId> {
        self.index.get(word).copied()
    }

    pub fn id_or_unk(&self, word: &str) -> TokenId {
        self.id(word).unwrap_or(UNK)
    }

    pub fn word(&self, id: TokenId) -> &str {
        &self.tokens[id as usize]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode<S: AsRef<str>>(&self, words: &[S]) -> Vec<TokenId> {
        words.iter().map(|w| self.id_or_unk(w.as_ref())).collect()
    }

    /// Words of `ids`, without `<bos>` and `<eos>`.
    pub fn decode(&self, ids: &[TokenId]) -> Vec<String> {
        ids.iter()
            .filter(|&&id| id != BOS && id != EOS)
            .map(|&id| self.word(id).to_owned())
            .collect()
    }
}

/// Next-token model `p(y_t | y_<t, image)`, the image given as class-name tags.
pub trait Scorer {
    fn vocab(&self) -> &Vocabulary;

    /// Log-probabilities over the whole vocabulary. `prefix` starts with
    /// `<bos>`.
    fn next_logprobs(&self, prefix: &[TokenId], context_tags: &[String]) -> Vec<f64>;
}

pub const NORMALIZATION_TOLERANCE: f64 = 1e-6;

pub fn logsumexp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Calls the scorer and enforces its contract.
pub fn checked_logprobs<S: Scorer + ?Sized>(
    scorer: &S,
    prefix: &[TokenId],
    tags: &[String],
) -> Result<Vec<f64>> {
    let lp = scorer.next_logprobs(prefix, tags);
    let v = scorer.vocab().len();
    if lp.len() != v {
        return Err(Error::Decode(format!(
            "scorer returned {} values for a vocabulary of {v}",
            lp.len()
        )));
    }
    if lp.iter().any(|x| x.is_nan() || *x == f64::INFINITY) {
        return Err(Error::Decode("scorer returned NaN or +inf".into()));
    }
    let z = logsumexp(&lp);
    if z.is_nan() || z.abs() > NORMALIZATION_TOLERANCE {
        return Err(Error::Decode(format!(
            "scorer output is not a distribution (logsumexp = {z})"
        )));
    }
    Ok(lp)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeConfig {
    pub beam_size: usize,
    /// Maximum number of words before `<eos>`.
    pub max_len: usize,
    /// Defaults to `min(#constraints, 2)` when unset.
    pub min_satisfied: Option<usize>,
    pub max_constraints: usize,
    /// Also accept the plural of each constraint's last word.
    pub expand_plurals: bool,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            beam_size: 5,
            max_len: 20,
            min_satisfied: None,
            max_constraints: 3,
            expand_plurals: true,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beam_size == 0 {
            return Err(Error::Config("beam_size must be at least 1".into()));
        }
        if self.max_len < 2 {
            return Err(Error::Config("max_len must be at least 2".into()));
        }
        Ok(())
    }

    pub fn min_satisfied_for(&self, n_constraints: usize) -> usize {
        self.min_satisfied.unwrap_or(n_constraints.min(2))
    }
}

/// A finished caption.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decoded {
    /// Word ids, without `<bos>` and `<eos>`.
    pub ids: Vec<TokenId>,
    pub logprob: f64,
    /// Constraints satisfied; 0 for plain beam search.
    pub satisfied: usize,
}

/// Best-first order: higher log-probability, then lexicographically
/// smaller token sequence.
pub(crate) fn rank(a_lp: f64, a_ids: &[TokenId], b_lp: f64, b_ids: &[TokenId]) -> std::cmp::Ordering {
    b_lp.total_cmp(&a_lp).then_with(|| a_ids.cmp(b_ids))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Bs,
    Cbs,
}

/// One line of decoder output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodedRecord {
    pub image_id: ImageId,
    pub tokens: Vec<String>,
    pub logprob: f64,
    pub method: Method,
    pub satisfied: usize,
}

#[cfg(test)]
pub(crate) mod testing {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Scorer backed by a table `prefix -> logprobs`, with a fallback row.
    pub struct TableScorer {
        pub vocab: Vocabulary,
        pub rows: BTreeMap<Vec<TokenId>, Vec<f64>>,
        pub fallback: Vec<f64>,
    }

    impl Scorer for TableScorer {
        fn vocab(&self) -> &Vocabulary {
            &self.vocab
        }

        fn next_logprobs(&self, prefix: &[TokenId], _tags: &[String]) -> Vec<f64> {
            self.rows.get(prefix).unwrap_or(&self.fallback).clone()
        }
    }

    pub fn normalize(weights: &[f64]) -> Vec<f64> {
        let z: f64 = weights.iter().sum();
        weights
            .iter()
            .map(|w| if *w == 0.0 { f64::NEG_INFINITY } else { (w / z).ln() })
            .collect()
    }

    /// Random table over every prefix of up to `max_len` words.
    pub fn random_scorer(words: &[&str], max_len: usize, seed: u64) -> TableScorer {
        let vocab = Vocabulary::from_words(words);
        let v = vocab.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let row = |rng: &mut ChaCha8Rng| {
            let w: Vec<f64> = (0..v)
                .map(|t| if t == BOS as usize { 0.0 } else { rng.random_range(0.01..1.0) })
                .collect();
            normalize(&w)
        };
        let mut rows = BTreeMap::new();
        let mut frontier = vec![vec![BOS]];
        for _ in 0..=max_len {
            let mut next = Vec::new();
            for p in frontier {
                rows.insert(p.clone(), row(&mut rng));
                for t in 2..v as TokenId {
                    let mut q = p.clone();
                    q.push(t);
                    next.push(q);
                }
            }
            frontier = next;
        }
        let fallback = row(&mut rng);
        TableScorer {
            vocab,
            rows,
            fallback,
        }
    }

    /// Every caption of at most `max_len` words, scored.
    pub fn enumerate(scorer: &TableScorer, max_len: usize) -> Vec<(Vec<TokenId>, f64)> {
        let v = scorer.vocab.len() as TokenId;
        let mut out = Vec::new();
        let mut frontier = vec![(vec![BOS], 0.0)];
        for len in 0..=max_len {
            let mut next = Vec::new();
            for (p, s) in frontier {
                let lp = scorer.next_logprobs(&p, &[]);
                out.push((p[1..].to_vec(), s + lp[EOS as usize]));
                if len < max_len {
                    for t in 2..v {
                        let mut q = p.clone();
                        q.push(t);
                        next.push((q, s + lp[t as usize]));
                    }
                }
            }
            frontier = next;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::testing::*;
    use super::*;

    #[test]
    fn vocabulary_layout() {
        let v = Vocabulary::from_words(["zebra", "a", "zebra", "<unk>"]);
        assert_eq!(v.tokens(), ["<bos>", "<eos>", "<unk>", "a", "zebra"]);
        assert_eq!(v.id("a"), Some(3));
        assert_eq!(v.id_or_unk("cow"), UNK);
        assert_eq!(v.decode(&[BOS, 3, 4, EOS]), ["a", "zebra"]);
        let json = serde_json::to_string(&v).unwrap();
        assert_eq!(serde_json::from_str::<Vocabulary>(&json).unwrap(), v);
        assert!(serde_json::from_str::<Vocabulary>(r#"["a","b","c"]"#).is_err());
    }

    #[test]
    fn contract_violations_are_errors() {
        let vocab = Vocabulary::from_words(["a"]);
        let bad_len = TableScorer {
            vocab: vocab.clone(),
            rows: BTreeMap::new(),
            fallback: vec![0.0],
        };
        assert!(checked_logprobs(&bad_len, &[BOS], &[]).is_err());
        let unnormalized = TableScorer {
            vocab: vocab.clone(),
            rows: BTreeMap::new(),
            fallback: vec![-1.0; 4],
        };
        assert!(checked_logprobs(&unnormalized, &[BOS], &[]).is_err());
        let ok = TableScorer {
            vocab,
            rows: BTreeMap::new(),
            fallback: normalize(&[0.0, 1.0, 1.0, 2.0]),
        };
        assert!(checked_logprobs(&ok, &[BOS], &[]).is_ok());
    }

    #[test]
    fn config_defaults() {
        let c = DecodeConfig::default();
        assert_eq!((c.beam_size, c.max_len, c.max_constraints), (5, 20, 3));
        assert_eq!(c.min_satisfied_for(0), 0);
        assert_eq!(c.min_satisfied_for(1), 1);
        assert_eq!(c.min_satisfied_for(3), 2);
        assert!(DecodeConfig { max_len: 1, ..c }.validate().is_err());
        assert!(DecodeConfig { beam_size: 0, ..c }.validate().is_err());
    }

    #[test]
    fn logsumexp_basics() {
        assert!((logsumexp(&[0.5f64.ln(), 0.5f64.ln()])).abs() < 1e-12);
        assert_eq!(logsumexp(&[f64::NEG_INFINITY]), f64::NEG_INFINITY);
    }
}
