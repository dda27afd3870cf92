//! CIDEr-D as computed by the coco-caption toolkit.
//!
//! Document frequencies come from the reference sets of the evaluated images
//! and the idf is `ln(#images) - ln(max(1, df))`. Per n-gram order the score is
//! the clipped tf-idf cosine against each reference times a Gaussian length
//! penalty, averaged over orders and references, then multiplied by 10.
//! The length entering the penalty is the number of bigrams, matching the
//! reference toolkit.

use std::collections::BTreeMap;

use crate::dataset::{ImageId, References};
use crate::error::{Error, Result};

pub const N_MAX: usize = 4;
pub const SIGMA: f64 = 6.0;

type Gram = Vec<String>;

fn ngram_counts<S: AsRef<str>>(tokens: &[S], n_max: usize) -> BTreeMap<Gram, f64> {
    let words: Vec<&str> = tokens.iter().map(AsRef::as_ref).collect();
    let mut counts = BTreeMap::new();
    for n in 1..=n_max {
        for w in words.windows(n) {
            *counts
                .entry(w.iter().map(|s| (*s).to_owned()).collect())
                .or_insert(0.0) += 1.0;
        }
    }
    counts
}

struct TfIdf {
    vec: Vec<BTreeMap<Gram, f64>>,
    norm: Vec<f64>,
    length: f64,
}

#[derive(Debug, Clone)]
pub struct CiderIndex {
    n_max: usize,
    sigma: f64,
    document_frequency: BTreeMap<Gram, f64>,
    log_images: f64,
}

impl CiderIndex {
    /// Builds the idf table over the reference sets of `refs`.
    pub fn new<'a, I>(refs: I) -> Self
    where
        I: IntoIterator<Item = &'a Vec<Vec<String>>>,
    {
        Self::with_params(refs, N_MAX, SIGMA)
    }

    pub fn with_params<'a, I>(refs: I, n_max: usize, sigma: f64) -> Self
    where
        I: IntoIterator<Item = &'a Vec<Vec<String>>>,
    {
        let mut document_frequency: BTreeMap<Gram, f64> = BTreeMap::new();
        let mut images = 0usize;
        for set in refs {
            images += 1;
            let mut seen: Vec<Gram> = set
                .iter()
                .flat_map(|r| ngram_counts(r, n_max).into_keys())
                .collect();
            seen.sort();
            seen.dedup();
            for g in seen {
                *document_frequency.entry(g).or_insert(0.0) += 1.0;
            }
        }
        CiderIndex {
            n_max,
            sigma,
            document_frequency,
            log_images: (images as f64).ln(),
        }
    }

    fn vectorize<S: AsRef<str>>(&self, tokens: &[S]) -> TfIdf {
        let mut vec = vec![BTreeMap::new(); self.n_max];
        let mut norm = vec![0.0; self.n_max];
        let mut length = 0.0;
        for (gram, tf) in ngram_counts(tokens, self.n_max) {
            let df = self
                .document_frequency
                .get(&gram)
                .copied()
                .unwrap_or(0.0)
                .max(1.0)
                .ln();
            let n = gram.len() - 1;
            let w = tf * (self.log_images - df);
            norm[n] += w * w;
            if n == 1 {
                length += tf;
            }
            vec[n].insert(gram, w);
        }
        TfIdf {
            vec,
            norm: norm.into_iter().map(f64::sqrt).collect(),
            length,
        }
    }

    fn similarity(&self, hyp: &TfIdf, reference: &TfIdf) -> Vec<f64> {
        let delta = hyp.length - reference.length;
        let penalty = (-(delta * delta) / (2.0 * self.sigma * self.sigma)).exp();
        (0..self.n_max)
            .map(|n| {
                let mut val = 0.0;
                for (gram, &h) in &hyp.vec[n] {
                    let r = reference.vec[n].get(gram).copied().unwrap_or(0.0);
                    val += h.min(r) * r;
                }
                if hyp.norm[n] != 0.0 && reference.norm[n] != 0.0 {
                    val /= hyp.norm[n] * reference.norm[n];
                }
                val * penalty
            })
            .collect()
    }

    /// Per-image score on the 0..10 scale.
    pub fn score<S: AsRef<str>>(&self, candidate: &[S], references: &[Vec<String>]) -> Result<f64> {
        if references.is_empty() {
            return Err(Error::Metric("CIDEr-D needs at least one reference".into()));
        }
        if candidate.is_empty() {
            log::warn!("empty candidate caption scores 0");
        }
        let hyp = self.vectorize(candidate);
        let mut total = vec![0.0; self.n_max];
        for r in references {
            let reference = self.vectorize(r);
            for (t, s) in total.iter_mut().zip(self.similarity(&hyp, &reference)) {
                *t += s;
            }
        }
        let mean = total.iter().sum::<f64>() / self.n_max as f64;
        Ok(mean / references.len() as f64 * 10.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CiderResult {
    /// Mean per-image score, 0..10 scale.
    pub mean: f64,
    pub per_image: BTreeMap<ImageId, f64>,
}

/// Scores `images` with an idf built from their own references.
pub fn corpus_cider<'a, I>(
    predictions: &BTreeMap<ImageId, Vec<String>>,
    references: &References,
    images: I,
) -> Result<CiderResult>
where
    I: IntoIterator<Item = &'a ImageId>,
{
    let ids: Vec<ImageId> = images.into_iter().copied().collect();
    if ids.is_empty() {
        return Err(Error::Metric("no images to score".into()));
    }
    let mut refs = Vec::with_capacity(ids.len());
    for id in &ids {
        let r = references
            .get(id)
            .filter(|r| !r.is_empty())
            .ok_or_else(|| Error::Integrity(format!("image {id} has no references")))?;
        refs.push(r);
    }
    let index = CiderIndex::new(refs.iter().copied());
    let mut per_image = BTreeMap::new();
    for (id, r) in ids.iter().zip(&refs) {
        let pred = predictions
            .get(id)
            .ok_or_else(|| Error::Integrity(format!("no prediction for image {id}")))?;
        per_image.insert(*id, index.score(pred, r)?);
    }
    let mean = per_image.values().sum::<f64>() / per_image.len() as f64;
    Ok(CiderResult { mean, per_image })
}
