//! Novel-object F1, macro averaging and the COF-β combination.

use std::collections::{BTreeMap, BTreeSet};

use crate::dataset::{ImageId, References};
use crate::error::{Error, Result};
use crate::lexicon::{caption_mentions, ObjectClass};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl Confusion {
    /// Percent; 0 when there is nothing to count.
    pub fn f1(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            0.0
        } else {
            100.0 * (2 * self.tp) as f64 / denom as f64
        }
    }
}

/// Mention counts of `class` over `images`: a hit in the prediction against
/// a hit in any reference.
pub fn novel_confusion(
    predictions: &BTreeMap<ImageId, Vec<String>>,
    references: &References,
    class: &ObjectClass,
    images: &BTreeSet<ImageId>,
) -> Result<Confusion> {
    let mut c = Confusion::default();
    for id in images {
        let pred = predictions
            .get(id)
            .ok_or_else(|| Error::Integrity(format!("no prediction for image {id}")))?;
        let refs = references
            .get(id)
            .ok_or_else(|| Error::Integrity(format!("image {id} has no references")))?;
        let p = caption_mentions(pred, class);
        let r = refs.iter().any(|r| caption_mentions(r, class));
        match (p, r) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => {}
        }
    }
    Ok(c)
}

pub fn novel_f1(
    predictions: &BTreeMap<ImageId, Vec<String>>,
    references: &References,
    class: &ObjectClass,
    images: &BTreeSet<ImageId>,
) -> Result<f64> {
    Ok(novel_confusion(predictions, references, class, images)?.f1())
}

/// Unweighted mean of `values` over exactly `classes`.
pub fn macro_average<S: AsRef<str>>(values: &BTreeMap<String, f64>, classes: &[S]) -> Result<f64> {
    if classes.is_empty() {
        return Err(Error::Metric("macro average over no classes".into()));
    }
    let mut sum = 0.0;
    for c in classes {
        sum += values
            .get(c.as_ref())
            .ok_or_else(|| Error::Metric(format!("no value for class {}", c.as_ref())))?;
    }
    Ok(sum / classes.len() as f64)
}

/// F-β of CIDEr and F1, with β weighting CIDEr:
/// `(1 + β²)·F1·C / (β²·F1 + C)`.
pub fn cof_beta(cider: f64, f1: f64, beta: f64) -> Result<f64> {
    if !(cider >= 0.0 && f1 >= 0.0 && cider.is_finite() && f1.is_finite()) {
        return Err(Error::Metric(format!(
            "COF needs non-negative inputs, got C={cider} F1={f1}"
        )));
    }
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::Metric(format!("beta must be positive, got {beta}")));
    }
    let b2 = beta * beta;
    let denom = b2 * f1 + cider;
    if denom == 0.0 {
        return Ok(0.0);
    }
    Ok((1.0 + b2) * f1 * cider / denom)
}
