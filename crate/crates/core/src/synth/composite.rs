use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use image::imageops::{self, FilterType};
use image::{ImageFormat, RgbImage};
use rayon::prelude::*;

use super::{
    Assignment, GenerationPlan, Provenance, ReplacementPair, ReviewStatus, SyntheticPairRecord,
    IMAGES_DIR, MANIFEST_FILE,
};
use crate::dataset::{
    captions_by_image, index_images, CaptionOrigin, CaptionRecord, ImageId, ImageRecord,
};
use crate::error::{Error, Result};
use crate::jsonl;
use crate::lexicon::{caption_mentions, Lexicon, ObjectClass};

/// Caption rewriter: `(tokens, candidate, novel) -> tokens`.
pub type RewriteFn<'a> =
    dyn Fn(&[String], &ObjectClass, &ObjectClass) -> Result<Vec<String>> + Sync + 'a;

pub struct BatchInputs<'a> {
    pub images: &'a [ImageRecord],
    /// Human captions of the fully paired images.
    pub captions: &'a [CaptionRecord],
    /// Directory that dataset `file_path`s are relative to.
    pub image_root: &'a Path,
    pub lexicon: &'a Lexicon,
}

/// Pastes each novel crop, resized bilinearly to the candidate box, over
/// the candidate box. Pixels outside the candidate boxes are untouched.
pub fn composite(target: &RgbImage, pastes: &[(&RgbImage, &ReplacementPair)]) -> RgbImage {
    let mut out = target.clone();
    for (source, pair) in pastes {
        let src = pair.novel.bbox.pixel_rect(source.width(), source.height());
        let dst = pair.candidate.bbox.pixel_rect(out.width(), out.height());
        if src.width() == 0 || src.height() == 0 || dst.width() == 0 || dst.height() == 0 {
            log::warn!(
                "empty paste region for instance {} of image {}, skipped",
                pair.candidate.instance_id,
                pair.candidate.image_id
            );
            continue;
        }
        let crop = imageops::crop_imm(*source, src.x0, src.y0, src.width(), src.height()).to_image();
        let resized = imageops::resize(&crop, dst.width(), dst.height(), FilterType::Triangle);
        imageops::replace(&mut out, &resized, i64::from(dst.x0), i64::from(dst.y0));
    }
    out
}

fn load_rgb(path: &Path) -> Result<RgbImage> {
    let img = image::open(path).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Raster {
            path: path.to_owned(),
            message: other.to_string(),
        },
    })?;
    Ok(img.to_rgb8())
}

/// Tags of the synthetic image: the target's classes with replaced
/// instances relabelled as the novel class.
fn synthetic_tags(target: &ImageRecord, assignment: &Assignment) -> Vec<String> {
    let replaced: Vec<u64> = assignment.pairs.iter().map(|p| p.candidate.instance_id).collect();
    let mut tags: Vec<String> = target
        .objects
        .iter()
        .map(|o| {
            if replaced.contains(&o.instance_id) {
                assignment.novel_class.clone()
            } else {
                o.class.clone()
            }
        })
        .collect();
    tags.sort();
    tags.dedup();
    tags
}

fn rewrite_first(
    captions: &[&CaptionRecord],
    candidate: &ObjectClass,
    novel: &ObjectClass,
    rewrite: &RewriteFn,
) -> Option<Vec<String>> {
    captions
        .iter()
        .filter(|c| caption_mentions(&c.tokens, candidate))
        .find_map(|c| match rewrite(&c.tokens, candidate, novel) {
            Ok(tokens) if !tokens.is_empty() => Some(tokens),
            Ok(_) => None,
            Err(e) => {
                log::debug!("caption {} not rewritable: {e}", c.caption_id);
                None
            }
        })
}

struct Context<'a> {
    images: BTreeMap<ImageId, &'a ImageRecord>,
    captions: BTreeMap<ImageId, Vec<&'a CaptionRecord>>,
    inputs: &'a BatchInputs<'a>,
    images_dir: &'a Path,
}

fn generate_one(
    index: usize,
    assignment: &Assignment,
    ctx: &Context,
    rewrite: &RewriteFn,
) -> Result<Option<SyntheticPairRecord>> {
    let target = ctx.images.get(&assignment.target).ok_or_else(|| {
        Error::Integrity(format!("plan references unknown image {}", assignment.target))
    })?;
    let (Some(candidate), Some(novel)) = (
        ctx.inputs.lexicon.get(&assignment.candidate_class),
        ctx.inputs.lexicon.get(&assignment.novel_class),
    ) else {
        log::warn!(
            "{}: class {} or {} not in lexicon, dropped",
            assignment.synth_id,
            assignment.candidate_class,
            assignment.novel_class
        );
        return Ok(None);
    };
    let caps = ctx.captions.get(&assignment.target).map(Vec::as_slice).unwrap_or_default();
    let Some(tokens) = rewrite_first(caps, candidate, novel, rewrite) else {
        log::warn!(
            "{}: no caption of image {} could be rewritten, dropped",
            assignment.synth_id,
            assignment.target
        );
        return Ok(None);
    };

    let root = ctx.inputs.image_root;
    let target_raster = load_rgb(&root.join(&target.file_path))?;
    let mut source_files = BTreeMap::new();
    let mut sources = BTreeMap::new();
    for p in &assignment.pairs {
        let id = p.novel.image_id;
        if sources.contains_key(&id) {
            continue;
        }
        let record = ctx
            .images
            .get(&id)
            .ok_or_else(|| Error::Integrity(format!("plan references unknown image {id}")))?;
        sources.insert(id, load_rgb(&root.join(&record.file_path))?);
        source_files.insert(id, record.file_path.clone());
    }
    let pastes: Vec<(&RgbImage, &ReplacementPair)> =
        assignment.pairs.iter().map(|p| (&sources[&p.novel.image_id], p)).collect();
    let out = composite(&target_raster, &pastes);

    let file_name = format!("{}.png", assignment.synth_id);
    let out_path = ctx.images_dir.join(&file_name);
    out.save_with_format(&out_path, ImageFormat::Png)
        .map_err(|e| Error::Raster {
            path: out_path.clone(),
            message: e.to_string(),
        })?;

    Ok(Some(SyntheticPairRecord {
        synth_id: assignment.synth_id.clone(),
        image_path: Path::new(IMAGES_DIR).join(file_name),
        caption: CaptionRecord::new(index as u64, target.image_id, tokens, CaptionOrigin::Synthetic)?,
        context_tags: synthetic_tags(target, assignment),
        provenance: Provenance {
            target_image: target.image_id,
            target_file: target.file_path.clone(),
            source_files,
            novel_class: assignment.novel_class.clone(),
            candidate_class: assignment.candidate_class.clone(),
            pairs: assignment.pairs.clone(),
        },
        verdict: ReviewStatus::Pending,
    }))
}

/// Renders every assignment, rewrites a caption for it, and writes
/// `images/*.png` plus `manifest.jsonl` under `out_dir`. Assignments whose
/// captions cannot be rewritten are dropped with a warning. Records come
/// back in plan order.
pub fn generate_batch(
    plan: &GenerationPlan,
    inputs: &BatchInputs,
    rewrite: &RewriteFn,
    out_dir: &Path,
) -> Result<Vec<SyntheticPairRecord>> {
    let images_dir = out_dir.join(IMAGES_DIR);
    fs::create_dir_all(&images_dir).map_err(|e| Error::io(&images_dir, e))?;
    let ctx = Context {
        images: index_images(inputs.images),
        captions: captions_by_image(inputs.captions),
        inputs,
        images_dir: &images_dir,
    };
    let results: Vec<Result<Option<SyntheticPairRecord>>> = plan
        .assignments
        .par_iter()
        .enumerate()
        .map(|(i, a)| generate_one(i, a, &ctx, rewrite))
        .collect();
    let mut records = Vec::new();
    for r in results {
        records.extend(r?);
    }
    jsonl::write(&out_dir.join(MANIFEST_FILE), &records)?;
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::BBox;
    use crate::synth::InstanceRef;
    use image::Rgb;

    fn pair(novel: (f64, f64, f64, f64), cand: (f64, f64, f64, f64)) -> ReplacementPair {
        ReplacementPair {
            novel_class: "zebra".into(),
            candidate_class: "cow".into(),
            novel: InstanceRef {
                image_id: ImageId(2),
                instance_id: 1,
                bbox: BBox::new(novel.0, novel.1, novel.2, novel.3).unwrap(),
            },
            candidate: InstanceRef {
                image_id: ImageId(1),
                instance_id: 1,
                bbox: BBox::new(cand.0, cand.1, cand.2, cand.3).unwrap(),
            },
        }
    }

    #[test]
    fn no_assignments_is_identity() {
        let target = RgbImage::from_pixel(8, 8, Rgb([10, 20, 30]));
        assert_eq!(composite(&target, &[]), target);
    }

    #[test]
    fn pixel_oracle_on_tiny_rasters() {
        let target = RgbImage::from_pixel(8, 8, Rgb([0, 0, 255]));
        let source = RgbImage::from_pixel(8, 8, Rgb([255, 0, 0]));
        let p = pair((0.0, 0.0, 4.0, 4.0), (2.0, 3.0, 3.0, 2.0));
        let out = composite(&target, &[(&source, &p)]);
        for (x, y, px) in out.enumerate_pixels() {
            let inside = (2..5).contains(&x) && (3..5).contains(&y);
            let want = if inside { [255, 0, 0] } else { [0, 0, 255] };
            assert_eq!(px.0, want, "pixel ({x},{y})");
        }
    }

    #[test]
    fn fractional_box_covers_its_pixel_footprint_only() {
        let target = RgbImage::from_pixel(10, 10, Rgb([0, 0, 0]));
        let source = RgbImage::from_pixel(10, 10, Rgb([9, 9, 9]));
        let p = pair((1.0, 1.0, 5.0, 5.0), (2.5, 2.5, 2.0, 2.0));
        let out = composite(&target, &[(&source, &p)]);
        let rect = p.candidate.bbox.pixel_rect(10, 10);
        for (x, y, px) in out.enumerate_pixels() {
            if !rect.contains(x, y) {
                assert_eq!(px.0, [0, 0, 0]);
            } else {
                assert_eq!(px.0, [9, 9, 9]);
            }
        }
    }

    #[test]
    fn unreadable_raster_names_file() {
        let err = load_rgb(Path::new("/nonexistent/x.png")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/x.png"));
    }
}
