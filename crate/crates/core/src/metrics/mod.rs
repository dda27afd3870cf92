//! Caption metrics: CIDEr-D, novel-object F1 and COF-β, plus the report
//! layout `Out-of-domain S M C F1 | In-domain S M C | COF...`.
//!
//! Reported CIDEr is the mean per-image score times 10 (so a perfect match
//! reads 100.0). SPICE and METEOR are never computed; they are carried
//! through from external files when given.

pub mod cider;
pub mod novel;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dataset::{ImageId, References};
use crate::error::{Error, Result};
use crate::lexicon::{caption_mentions, ObjectClass};

pub use cider::{corpus_cider, CiderIndex, CiderResult, N_MAX, SIGMA};
pub use novel::{cof_beta, macro_average, novel_confusion, novel_f1, Confusion};

pub const DEFAULT_BETAS: [f64; 2] = [1.0, 1.5];

/// Per-image 0..10 CIDEr to the reported scale.
pub fn cider_percent(mean: f64) -> f64 {
    mean * 10.0
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CiderMode {
    /// Mean of CIDEr over the images mentioning each novel class.
    #[default]
    Macro,
    /// One CIDEr over all out-of-domain images.
    Corpus,
}

/// Externally computed SPICE / METEOR, echoed into the report.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EchoedScores {
    pub spice: Option<f64>,
    pub meteor: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalOptions {
    pub betas: Vec<f64>,
    pub cider_mode: CiderMode,
    pub out_of_domain_echo: EchoedScores,
    pub in_domain_echo: EchoedScores,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            betas: DEFAULT_BETAS.to_vec(),
            cider_mode: CiderMode::Macro,
            out_of_domain_echo: EchoedScores::default(),
            in_domain_echo: EchoedScores::default(),
        }
    }
}

/// Images to evaluate, already partitioned.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalSet {
    pub in_domain: BTreeSet<ImageId>,
    pub out_of_domain: BTreeSet<ImageId>,
}

impl EvalSet {
    pub fn from_flags<'a, I>(images: I, is_out_of_domain: impl Fn(ImageId) -> bool) -> Self
    where
        I: IntoIterator<Item = &'a ImageId>,
    {
        let mut set = EvalSet::default();
        for &id in images {
            if is_out_of_domain(id) {
                set.out_of_domain.insert(id);
            } else {
                set.in_domain.insert(id);
            }
        }
        set
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InDomainReport {
    pub images: usize,
    pub cider: f64,
    pub spice: Option<f64>,
    pub meteor: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutOfDomainReport {
    pub images: usize,
    /// Reported CIDEr under `cider_mode`.
    pub cider: f64,
    pub cider_mode: CiderMode,
    pub cider_corpus: f64,
    pub per_class_cider: BTreeMap<String, f64>,
    pub per_class_f1: BTreeMap<String, f64>,
    pub macro_f1: f64,
    pub spice: Option<f64>,
    pub meteor: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub out_of_domain: Option<OutOfDomainReport>,
    pub in_domain: Option<InDomainReport>,
    /// β (as written, e.g. "1.5") to COF value; needs the out-of-domain part.
    pub cof: BTreeMap<String, f64>,
}

pub fn beta_label(beta: f64) -> String {
    format!("{beta}")
}

pub fn evaluate(
    predictions: &BTreeMap<ImageId, Vec<String>>,
    references: &References,
    set: &EvalSet,
    novel_classes: &[ObjectClass],
    opts: &EvalOptions,
) -> Result<EvalReport> {
    if novel_classes.is_empty() {
        return Err(Error::Config("evaluation needs at least one novel class".into()));
    }
    for &b in &opts.betas {
        if !(b > 0.0 && b.is_finite()) {
            return Err(Error::Config(format!("beta must be positive, got {b}")));
        }
    }

    let in_domain = if set.in_domain.is_empty() {
        log::warn!("no in-domain images; in-domain scores omitted");
        None
    } else {
        let r = corpus_cider(predictions, references, &set.in_domain)?;
        Some(InDomainReport {
            images: set.in_domain.len(),
            cider: cider_percent(r.mean),
            spice: opts.in_domain_echo.spice,
            meteor: opts.in_domain_echo.meteor,
        })
    };

    let out_of_domain = if set.out_of_domain.is_empty() {
        log::warn!("no out-of-domain images; out-of-domain scores omitted");
        None
    } else {
        Some(out_of_domain_report(predictions, references, set, novel_classes, opts)?)
    };

    let mut cof = BTreeMap::new();
    if let Some(ood) = &out_of_domain {
        for &b in &opts.betas {
            cof.insert(beta_label(b), cof_beta(ood.cider, ood.macro_f1, b)?);
        }
    }
    Ok(EvalReport {
        out_of_domain,
        in_domain,
        cof,
    })
}

fn out_of_domain_report(
    predictions: &BTreeMap<ImageId, Vec<String>>,
    references: &References,
    set: &EvalSet,
    novel_classes: &[ObjectClass],
    opts: &EvalOptions,
) -> Result<OutOfDomainReport> {
    let ids = &set.out_of_domain;
    let corpus = cider_percent(corpus_cider(predictions, references, ids)?.mean);
    let mut per_class_cider = BTreeMap::new();
    let mut per_class_f1 = BTreeMap::new();
    for class in novel_classes {
        per_class_f1.insert(
            class.name.clone(),
            novel_f1(predictions, references, class, ids)?,
        );
        let subset: Vec<ImageId> = ids
            .iter()
            .copied()
            .filter(|id| {
                references
                    .get(id)
                    .is_some_and(|rs| rs.iter().any(|r| caption_mentions(r, class)))
            })
            .collect();
        if subset.is_empty() {
            log::warn!("no out-of-domain image mentions {}", class.name);
        } else {
            let r = corpus_cider(predictions, references, &subset)?;
            per_class_cider.insert(class.name.clone(), cider_percent(r.mean));
        }
    }
    let names: Vec<&str> = novel_classes.iter().map(|c| c.name.as_str()).collect();
    let macro_f1 = macro_average(&per_class_f1, &names)?;
    let cider = match opts.cider_mode {
        CiderMode::Corpus => corpus,
        CiderMode::Macro if per_class_cider.is_empty() => corpus,
        CiderMode::Macro => {
            let present: Vec<&String> = per_class_cider.keys().collect();
            macro_average(&per_class_cider, &present)?
        }
    };
    Ok(OutOfDomainReport {
        images: ids.len(),
        cider,
        cider_mode: opts.cider_mode,
        cider_corpus: corpus,
        per_class_cider,
        per_class_f1,
        macro_f1,
        spice: opts.out_of_domain_echo.spice,
        meteor: opts.out_of_domain_echo.meteor,
    })
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_owned(), |x| format!("{x:.1}"))
}

impl EvalReport {
    /// Aligned text table in the column order of the published tables.
    pub fn to_table(&self, betas: &[f64]) -> String {
        let ood = self.out_of_domain.as_ref();
        let ind = self.in_domain.as_ref();
        let mut header = vec!["S", "M", "C", "F1", "S", "M", "C"]
            .into_iter()
            .map(str::to_owned)
            .collect::<Vec<_>>();
        let mut row = vec![
            cell(ood.and_then(|o| o.spice)),
            cell(ood.and_then(|o| o.meteor)),
            cell(ood.map(|o| o.cider)),
            cell(ood.map(|o| o.macro_f1)),
            cell(ind.and_then(|o| o.spice)),
            cell(ind.and_then(|o| o.meteor)),
            cell(ind.map(|o| o.cider)),
        ];
        for &b in betas {
            header.push(format!("COF{}", beta_label(b)));
            row.push(cell(self.cof.get(&beta_label(b)).copied()));
        }
        let widths: Vec<usize> = header
            .iter()
            .zip(&row)
            .map(|(h, r)| h.len().max(r.len()))
            .collect();
        let line = |cells: &[String]| {
            let mut s = String::new();
            for (i, (c, w)) in cells.iter().zip(&widths).enumerate() {
                if i == 4 || i == 7 {
                    s.push_str(" |");
                }
                let _ = write!(s, " {c:>w$}");
            }
            s.trim_start().to_owned()
        };
        let in_w: usize = widths[4..7].iter().map(|w| w + 1).sum::<usize>() + 1;
        let ood_w: usize = widths[..4].iter().map(|w| w + 1).sum::<usize>() - 1;
        let mut out = format!("{:<ood_w$} | {:<in_w$}|\n", "Out-of-domain", "In-domain");
        out.push_str(&line(&header));
        out.push('\n');
        out.push_str(&line(&row));
        out.push('\n');
        out
    }
}
