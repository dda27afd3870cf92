//! Three-step training: baseline on fully paired captions, warm-up with
//! synthetic pairs, then rounds of offline pseudo-labelling.
//!
//! Each round regenerates pseudo-labels for every partially paired image with
//! the current scorer and retrains on fully paired + synthetic + the new
//! labels; earlier labels are dropped. The reference scorer trains in closed
//! form, so iterations, learning rate and batch size are carried as metadata.
//!
//! An image is represented to the scorer by its annotated class names.
//! Detection labels only choose the constraints for constrained decoding.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{
    references_from, CaptionOrigin, CaptionRecord, DatasetSplit, DetectionLabels, ImageId,
    ImageRecord,
};
use crate::decoding::{
    beam_search, build_fsm, constrained_beam_search, DecodeConfig, DecodedRecord, Method, Scorer,
};
use crate::error::{Error, Result};
use crate::jsonl;
use crate::lexicon::{Lexicon, ObjectClass};
use crate::metrics::{evaluate, EvalOptions, EvalReport, EvalSet};
use crate::scorer::{NGramConfig, NGramModel, TaggedCaption};
use crate::synth::{ReviewStatus, SyntheticPairRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleName {
    Sch1,
    Sch2,
    Custom,
}

/// Step-3 schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSchedule {
    pub name: ScheduleName,
    pub iterations_per_round: u64,
    pub initial_lr: f64,
    pub lr_scale_per_round: f64,
    pub batch_size: u64,
}

impl TrainingSchedule {
    pub fn sch1() -> Self {
        TrainingSchedule {
            name: ScheduleName::Sch1,
            iterations_per_round: 15_000,
            initial_lr: 0.0025,
            lr_scale_per_round: 0.5,
            batch_size: 100,
        }
    }

    pub fn sch2() -> Self {
        TrainingSchedule {
            name: ScheduleName::Sch2,
            iterations_per_round: 6_000,
            initial_lr: 0.0025,
            lr_scale_per_round: 0.8,
            batch_size: 100,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations_per_round == 0 || self.batch_size == 0 {
            return Err(Error::Config("iterations and batch size must be positive".into()));
        }
        if !(self.lr_scale_per_round > 0.0 && self.lr_scale_per_round <= 1.0) {
            return Err(Error::Config(format!(
                "lr_scale_per_round must lie in (0, 1], got {}",
                self.lr_scale_per_round
            )));
        }
        if self.initial_lr.is_nan() || self.initial_lr <= 0.0 {
            return Err(Error::Config("initial_lr must be positive".into()));
        }
        Ok(())
    }

    /// Learning rate of round `round` (0-based).
    pub fn lr_for_round(&self, round: usize) -> f64 {
        self.initial_lr * self.lr_scale_per_round.powi(round as i32)
    }
}

impl Default for TrainingSchedule {
    fn default() -> Self {
        Self::sch1()
    }
}

/// Fixed schedule of Step 1 or Step 2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSchedule {
    pub iterations: u64,
    pub lr: f64,
    pub batch_size: u64,
}

pub const STEP1_SCHEDULE: StepSchedule = StepSchedule {
    iterations: 40_000,
    lr: 0.01,
    batch_size: 100,
};

pub const STEP2_SCHEDULE: StepSchedule = StepSchedule {
    iterations: 15_000,
    lr: 0.005,
    batch_size: 100,
};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PseudoLabelMode {
    /// One plain and one constrained caption per image.
    #[default]
    BsAndCbs,
    /// Only the constrained caption.
    CbsOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub rounds: usize,
    pub mode: PseudoLabelMode,
    pub step1: StepSchedule,
    pub step2: StepSchedule,
    pub schedule: TrainingSchedule,
    pub seed: u64,
    pub scorer: NGramConfig,
    pub decode: DecodeConfig,
    pub eval: EvalOptions,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            rounds: 4,
            mode: PseudoLabelMode::BsAndCbs,
            step1: STEP1_SCHEDULE,
            step2: STEP2_SCHEDULE,
            schedule: TrainingSchedule::sch1(),
            seed: 0,
            scorer: NGramConfig::default(),
            decode: DecodeConfig::default(),
            eval: EvalOptions::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::Config("at least one pseudo-labelling round is required".into()));
        }
        self.schedule.validate()?;
        self.scorer.validate()?;
        self.decode.validate()
    }
}

/// Training metadata stored next to each model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub stage: String,
    pub iterations: u64,
    pub lr: f64,
    pub batch_size: u64,
    pub human_captions: usize,
    pub synthetic_captions: usize,
    pub pseudo_labels: usize,
}

impl TrainingMeta {
    pub fn corpus_size(&self) -> usize {
        self.human_captions + self.synthetic_captions + self.pseudo_labels
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: NGramModel,
    pub meta: TrainingMeta,
}

/// Human captions of the fully paired images, tagged with their classes.
pub fn fully_paired_corpus(
    images: &[ImageRecord],
    captions: &[CaptionRecord],
    split: &DatasetSplit,
) -> Vec<TaggedCaption> {
    let tags: BTreeMap<ImageId, Vec<String>> = images
        .iter()
        .filter(|im| split.fully_paired.contains(&im.image_id))
        .map(|im| (im.image_id, im.context_tags()))
        .collect();
    captions
        .iter()
        .filter_map(|c| {
            tags.get(&c.image_id).map(|t| TaggedCaption {
                tokens: c.tokens.clone(),
                tags: t.clone(),
            })
        })
        .collect()
}

pub fn synthetic_corpus(records: &[&SyntheticPairRecord]) -> Vec<TaggedCaption> {
    records
        .iter()
        .map(|r| TaggedCaption {
            tokens: r.caption.tokens.clone(),
            tags: r.context_tags.clone(),
        })
        .collect()
}

/// Step 1.
pub fn train_baseline(
    fully: &[TaggedCaption],
    lexicon: &Lexicon,
    scorer: &NGramConfig,
    schedule: &StepSchedule,
) -> Result<Checkpoint> {
    if fully.is_empty() {
        return Err(Error::Config("no fully paired captions to train on".into()));
    }
    Ok(Checkpoint {
        model: NGramModel::train(fully, lexicon, scorer)?,
        meta: TrainingMeta {
            stage: "step1".into(),
            iterations: schedule.iterations,
            lr: schedule.lr,
            batch_size: schedule.batch_size,
            human_captions: fully.len(),
            synthetic_captions: 0,
            pseudo_labels: 0,
        },
    })
}

/// Step 2. Rejected records are skipped; with nothing left the input
/// checkpoint is returned unchanged.
pub fn warmup_with_synth(
    checkpoint: &Checkpoint,
    fully: &[TaggedCaption],
    synthetic: &[SyntheticPairRecord],
    lexicon: &Lexicon,
    scorer: &NGramConfig,
    schedule: &StepSchedule,
) -> Result<Checkpoint> {
    let kept: Vec<&SyntheticPairRecord> = synthetic
        .iter()
        .filter(|r| r.verdict != ReviewStatus::Rejected)
        .collect();
    if kept.is_empty() {
        log::warn!("no usable synthetic captions; warm-up skipped");
        return Ok(checkpoint.clone());
    }
    let mut corpus = fully.to_vec();
    corpus.extend(synthetic_corpus(&kept));
    Ok(Checkpoint {
        model: NGramModel::train(&corpus, lexicon, scorer)?,
        meta: TrainingMeta {
            stage: "step2".into(),
            iterations: schedule.iterations,
            lr: schedule.lr,
            batch_size: schedule.batch_size,
            human_captions: fully.len(),
            synthetic_captions: kept.len(),
            pseudo_labels: 0,
        },
    })
}

/// A generated caption and how it was obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabel {
    pub caption: CaptionRecord,
    pub tags: Vec<String>,
    /// Constraint classes used (constrained decoding only).
    pub constraints: Vec<String>,
    /// False when constrained decoding met fewer constraints than required.
    pub met: bool,
}

/// Constraint classes for an image: its detection labels by score, without
/// repeats or words the scorer cannot produce, capped at `max`.
pub fn select_constraints<'a>(
    labels: &DetectionLabels,
    image: ImageId,
    lexicon: &'a Lexicon,
    scorer: &dyn Scorer,
    max: usize,
) -> Vec<&'a ObjectClass> {
    let mut ranked: Vec<_> = labels.get(&image).map(|l| l.iter().collect()).unwrap_or_default();
    ranked.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.name.cmp(&b.name)));
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for label in ranked {
        if out.len() == max {
            break;
        }
        let Some(class) = lexicon.get(&label.name) else {
            continue;
        };
        if !seen.insert(class.name.as_str()) {
            continue;
        }
        if class.name_tokens().iter().all(|w| scorer.vocab().id(w).is_some()) {
            out.push(class);
        } else {
            log::debug!("image {image}: constraint {} is out of vocabulary, dropped", class.name);
        }
    }
    out
}

/// Plain beam search caption for one image.
pub fn decode_plain(
    scorer: &(dyn Scorer + Sync),
    image: ImageId,
    tags: &[String],
    cfg: &DecodeConfig,
) -> Result<DecodedRecord> {
    let best = beam_search(scorer, tags, cfg)?
        .into_iter()
        .next()
        .ok_or_else(|| Error::Decode(format!("image {image}: nothing decoded")))?;
    Ok(DecodedRecord {
        image_id: image,
        tokens: scorer.vocab().decode(&best.ids),
        logprob: best.logprob,
        method: Method::Bs,
        satisfied: 0,
    })
}

/// Constrained caption for one image, plus whether the minimum was met.
pub fn decode_constrained(
    scorer: &(dyn Scorer + Sync),
    image: ImageId,
    tags: &[String],
    constraints: &[&ObjectClass],
    cfg: &DecodeConfig,
) -> Result<(DecodedRecord, bool)> {
    let labels: Vec<Vec<String>> = constraints.iter().map(|c| c.name_tokens()).collect();
    let min = cfg.min_satisfied_for(labels.len());
    let fsm = build_fsm(&labels, min, scorer.vocab(), cfg.expand_plurals)?;
    let out = constrained_beam_search(scorer, tags, &fsm, cfg)?;
    let best = out.best();
    Ok((
        DecodedRecord {
            image_id: image,
            tokens: scorer.vocab().decode(&best.ids),
            logprob: best.logprob,
            method: Method::Cbs,
            satisfied: best.satisfied,
        },
        out.met,
    ))
}

/// Pseudo-labels for `images` in input order. Caption ids count up from
/// `first_caption_id`.
pub fn generate_pseudo_labels(
    scorer: &(dyn Scorer + Sync),
    images: &[&ImageRecord],
    labels: &DetectionLabels,
    lexicon: &Lexicon,
    mode: PseudoLabelMode,
    cfg: &DecodeConfig,
    first_caption_id: u64,
) -> Result<Vec<PseudoLabel>> {
    let per_image: Vec<Vec<(DecodedRecord, Vec<String>, bool)>> = images
        .par_iter()
        .map(|im| {
            let tags = im.context_tags();
            let constraints = select_constraints(labels, im.image_id, lexicon, scorer, cfg.max_constraints);
            let mut out = Vec::new();
            if mode == PseudoLabelMode::BsAndCbs {
                out.push((decode_plain(scorer, im.image_id, &tags, cfg)?, Vec::new(), true));
            }
            if mode == PseudoLabelMode::CbsOnly && constraints.is_empty() {
                log::warn!("image {}: no usable detection labels, skipped", im.image_id);
                return Ok(out);
            }
            let (rec, met) = decode_constrained(scorer, im.image_id, &tags, &constraints, cfg)?;
            let names = constraints.iter().map(|c| c.name.clone()).collect();
            out.push((rec, names, met));
            Ok(out)
        })
        .collect::<Result<_>>()?;

    let mut out = Vec::new();
    for (rec, constraints, met) in per_image.into_iter().flatten() {
        if rec.tokens.is_empty() {
            log::warn!("image {}: empty {:?} caption dropped", rec.image_id, rec.method);
            continue;
        }
        let origin = match rec.method {
            Method::Bs => CaptionOrigin::PseudoBs,
            Method::Cbs => CaptionOrigin::PseudoCbs,
        };
        let tags = images
            .iter()
            .find(|im| im.image_id == rec.image_id)
            .map(|im| im.context_tags())
            .unwrap_or_default();
        let id = first_caption_id + out.len() as u64;
        out.push(PseudoLabel {
            caption: CaptionRecord::new(id, rec.image_id, rec.tokens, origin)?,
            tags,
            constraints,
            met,
        });
    }
    Ok(out)
}

/// Plain beam search captions for evaluation.
pub fn predict(
    scorer: &(dyn Scorer + Sync),
    images: &[&ImageRecord],
    cfg: &DecodeConfig,
) -> Result<BTreeMap<ImageId, Vec<String>>> {
    images
        .par_iter()
        .map(|im| {
            let rec = decode_plain(scorer, im.image_id, &im.context_tags(), cfg)?;
            Ok((im.image_id, rec.tokens))
        })
        .collect()
}

pub struct PipelineInputs<'a> {
    pub images: &'a [ImageRecord],
    /// Human captions, including those of evaluation images.
    pub captions: &'a [CaptionRecord],
    pub split: &'a DatasetSplit,
    /// Synthetic pairs with their review status applied.
    pub synthetic: &'a [SyntheticPairRecord],
    pub labels: &'a DetectionLabels,
    pub lexicon: &'a Lexicon,
    pub novel_classes: &'a [ObjectClass],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub meta: TrainingMeta,
    pub report: EvalReport,
    /// Constrained pseudo-labels below the constraint minimum (rounds only).
    pub unmet_constraints: usize,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub stages: Vec<StageReport>,
    pub final_checkpoint: Checkpoint,
}

/// Runs Step 1, Step 2 and `cfg.rounds` pseudo-labelling rounds, evaluating
/// on the validation images after each. With `out_dir`, every stage writes
/// `model.json`, `meta.json`, `report.json` (and `pseudo_labels.jsonl`) into
/// its own subdirectory.
pub fn run_pipeline(
    inputs: &PipelineInputs<'_>,
    cfg: &PipelineConfig,
    out_dir: Option<&Path>,
) -> Result<PipelineOutput> {
    cfg.validate()?;
    let split = inputs.split;
    let by_id: BTreeMap<ImageId, &ImageRecord> =
        inputs.images.iter().map(|im| (im.image_id, im)).collect();
    let pick = |ids: &BTreeSet<ImageId>| -> Result<Vec<&ImageRecord>> {
        ids.iter()
            .map(|id| {
                by_id
                    .get(id)
                    .copied()
                    .ok_or_else(|| Error::Integrity(format!("split image {id} has no record")))
            })
            .collect()
    };
    let partial = pick(&split.partially_paired)?;
    let val = pick(&split.val)?;
    let references = references_from(
        &inputs
            .captions
            .iter()
            .filter(|c| split.val.contains(&c.image_id))
            .cloned()
            .collect::<Vec<_>>(),
    );
    let eval_set = EvalSet::from_flags(&split.val, |id| split.is_out_of_domain(id));

    let evaluate_stage = |ckpt: &Checkpoint, unmet: usize| -> Result<StageReport> {
        let preds = predict(&ckpt.model, &val, &cfg.decode)?;
        let report = evaluate(&preds, &references, &eval_set, inputs.novel_classes, &cfg.eval)?;
        Ok(StageReport {
            meta: ckpt.meta.clone(),
            report,
            unmet_constraints: unmet,
        })
    };
    let save = |name: &str, ckpt: &Checkpoint, stage: &StageReport, labels: Option<&[PseudoLabel]>| -> Result<()> {
        let Some(root) = out_dir else { return Ok(()) };
        let dir = root.join(name);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        ckpt.model.save(&dir.join("model.json"))?;
        write_json(&dir.join("meta.json"), &ckpt.meta)?;
        write_json(&dir.join("report.json"), &stage.report)?;
        if let Some(labels) = labels {
            jsonl::write(&dir.join("pseudo_labels.jsonl"), labels)?;
        }
        Ok(())
    };

    let fully = fully_paired_corpus(inputs.images, inputs.captions, split);
    let mut stages = Vec::new();

    let baseline = train_baseline(&fully, inputs.lexicon, &cfg.scorer, &cfg.step1)?;
    let report = evaluate_stage(&baseline, 0)?;
    save("step1", &baseline, &report, None)?;
    stages.push(report);

    let warm = warmup_with_synth(
        &baseline,
        &fully,
        inputs.synthetic,
        inputs.lexicon,
        &cfg.scorer,
        &cfg.step2,
    )?;
    let report = evaluate_stage(&warm, 0)?;
    save("step2", &warm, &report, None)?;
    stages.push(report);

    let kept: Vec<&SyntheticPairRecord> = inputs
        .synthetic
        .iter()
        .filter(|r| r.verdict != ReviewStatus::Rejected)
        .collect();
    let mut base_corpus = fully.clone();
    base_corpus.extend(synthetic_corpus(&kept));

    let mut current = warm;
    if partial.is_empty() {
        log::warn!("no partially paired images; pseudo-labelling rounds skipped");
    } else {
        for round in 0..cfg.rounds {
            let labels = generate_pseudo_labels(
                &current.model,
                &partial,
                inputs.labels,
                inputs.lexicon,
                cfg.mode,
                &cfg.decode,
                0,
            )?;
            let unmet = labels.iter().filter(|l| !l.met).count();
            let mut corpus = base_corpus.clone();
            corpus.extend(labels.iter().map(|l| TaggedCaption {
                tokens: l.caption.tokens.clone(),
                tags: l.tags.clone(),
            }));
            let ckpt = Checkpoint {
                model: NGramModel::train(&corpus, inputs.lexicon, &cfg.scorer)?,
                meta: TrainingMeta {
                    stage: format!("round{}", round + 1),
                    iterations: cfg.schedule.iterations_per_round,
                    lr: cfg.schedule.lr_for_round(round),
                    batch_size: cfg.schedule.batch_size,
                    human_captions: fully.len(),
                    synthetic_captions: kept.len(),
                    pseudo_labels: labels.len(),
                },
            };
            let report = evaluate_stage(&ckpt, unmet)?;
            save(&ckpt.meta.stage.clone(), &ckpt, &report, Some(&labels))?;
            stages.push(report);
            current = ckpt;
        }
    }
    if let Some(root) = out_dir {
        write_json(&root.join("summary.json"), &stages)?;
    }
    Ok(PipelineOutput {
        stages,
        final_checkpoint: current,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).expect("serializes");
    s.push('\n');
    jsonl::write_atomic(path, s.as_bytes())
}
