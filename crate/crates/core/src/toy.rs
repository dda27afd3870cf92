//! Small synthetic corpus for end-to-end runs.
//!
//! Images are flat scenes with coloured boxes for objects (zebras striped),
//! each with five templated captions. `zebra` is the novel class; horses,
//! cows and sheep share its scene and box shapes so they can be replaced by
//! zebra crops. Everything is a function of the seed.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::candidates::CandidateMap;
use crate::dataset::{
    build_heldout_split, partition_in_out_domain, references_from, BBox, CaptionOrigin,
    CaptionRecord, DatasetSplit, DetectionLabel, DetectionLabels, ImageId, ImageRecord,
    ObjectInstance,
};
use crate::error::{Error, Result};
use crate::jsonl;
use crate::lexicon::{Lexicon, ObjectClass};
use crate::pipeline::{PipelineConfig, PipelineInputs};
use crate::rewrite::{rewrite_caption, RewriteConfig, RewriteLexicons};
use crate::synth::{
    enumerate_replacement_pairs, generate_batch, plan_generation, BatchInputs, PairConstraints,
    SyntheticPairRecord,
};
use crate::text::tokenize;

pub const NOVEL_CLASS: &str = "zebra";
pub const CANDIDATES: [&str; 3] = ["horse", "cow", "sheep"];

pub const INSTANCES_FILE: &str = "instances.json";
pub const CAPTIONS_FILE: &str = "captions.json";
pub const DETECTIONS_FILE: &str = "detections.jsonl";
pub const VAL_IDS_FILE: &str = "val_ids.txt";
pub const TEST_IDS_FILE: &str = "test_ids.txt";
pub const CANDIDATES_FILE: &str = "candidates.json";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyConfig {
    pub seed: u64,
    pub train_images: usize,
    pub val_images: usize,
    pub test_images: usize,
    pub width: u32,
    pub height: u32,
    pub captions_per_image: usize,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            seed: 7,
            train_images: 120,
            val_images: 40,
            test_images: 40,
            width: 128,
            height: 96,
            captions_per_image: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyWorld {
    pub images: Vec<ImageRecord>,
    pub captions: Vec<CaptionRecord>,
    pub labels: DetectionLabels,
    pub train: BTreeSet<ImageId>,
    pub val: BTreeSet<ImageId>,
    pub test: BTreeSet<ImageId>,
    pub candidates: CandidateMap,
    /// Scene colour per image, used when rendering.
    backgrounds: BTreeMap<ImageId, [u8; 3]>,
    seed: u64,
}

#[derive(Clone, Copy, PartialEq)]
enum Scene {
    Field,
    Home,
    Street,
}

fn plural(class: &str) -> &str {
    match class {
        "cow" => "cows",
        "horse" => "horses",
        "sheep" => "sheep",
        "zebra" => "zebras",
        "dog" => "dogs",
        "cat" => "cats",
        other => other,
    }
}

fn coat(rng: &mut ChaCha8Rng, class: &str) -> &'static str {
    let options: &[&str] = match class {
        "cow" => &["brown", "black", "white"],
        "horse" => &["brown", "black", "white"],
        "sheep" => &["white", "fluffy"],
        "zebra" => &["striped", "young"],
        "dog" => &["brown", "black", "small"],
        "cat" => &["gray", "orange", "black"],
        _ => &["large"],
    };
    options.choose(rng).expect("non-empty")
}

fn field_captions(rng: &mut ChaCha8Rng, a: &str, count: usize, other: Option<&str>) -> Vec<String> {
    let mut out: Vec<String> = if count == 1 {
        vec![
            format!("a {a} standing in a grassy field"),
            format!("a {a} grazing on the green grass"),
            format!("a {} {a} in a field", coat(rng, a)),
            format!("there is a {a} in the middle of a field"),
            format!("a {a} eating grass in a pasture"),
            format!("a {} {a} standing on the grass", coat(rng, a)),
        ]
    } else {
        let p = plural(a);
        vec![
            format!("two {p} standing in a grassy field"),
            format!("two {p} grazing on the green grass"),
            format!("a couple of {p} in a field"),
            format!("two {p} next to each other in a field"),
            format!("two {} {p} eating grass in a pasture", coat(rng, a)),
        ]
    };
    if let Some(b) = other {
        out.truncate(3);
        out.push(format!("a {a} and a {b} in a field"));
        out.push(format!("a {a} standing next to a {b}"));
        out.push(format!("a {b} and a {a} grazing in a pasture"));
    }
    out
}

fn home_captions(rng: &mut ChaCha8Rng, a: &str) -> Vec<String> {
    vec![
        format!("a {a} laying on a couch"),
        format!("a {} {a} sitting on a couch", coat(rng, a)),
        format!("a {a} sleeping on a sofa in a living room"),
        format!("a {a} resting on a couch"),
        format!("a {a} curled up on the couch"),
    ]
}

fn street_captions(rng: &mut ChaCha8Rng) -> Vec<String> {
    let colour = ["red", "blue", "white", "black"].choose(rng).expect("non-empty");
    vec![
        "a man standing next to a car".to_owned(),
        "a person walking by a parked car".to_owned(),
        format!("a {colour} car parked on a street"),
        "a woman near a car on the street".to_owned(),
        format!("a man walking past a {colour} car"),
    ]
}

fn animal_box(rng: &mut ChaCha8Rng, width: u32, height: u32) -> BBox {
    let w = rng.random_range(40.0..60.0f64).round();
    let ar = rng.random_range(1.2..1.5f64);
    let h = (w / ar).round();
    let x = rng.random_range(0.0..(f64::from(width) - w)).round();
    let y = rng.random_range(0.0..(f64::from(height) - h)).round();
    BBox::new(x, y, w, h).expect("positive size")
}

fn fixed_box(rng: &mut ChaCha8Rng, width: u32, height: u32, w: f64, h: f64) -> BBox {
    let x = rng.random_range(0.0..=(f64::from(width) - w)).round();
    let y = rng.random_range(0.0..=(f64::from(height) - h)).round();
    BBox::new(x, y, w, h).expect("positive size")
}

impl ToyWorld {
    pub fn generate(cfg: &ToyConfig) -> Result<Self> {
        let total = cfg.train_images + cfg.val_images + cfg.test_images;
        if total == 0 || cfg.captions_per_image == 0 {
            return Err(Error::Config("toy corpus needs images and captions".into()));
        }
        if cfg.width < 100 || cfg.height < 80 {
            return Err(Error::Config("toy images must be at least 100x80".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut images = Vec::with_capacity(total);
        let mut captions = Vec::new();
        let mut labels = DetectionLabels::new();
        let mut backgrounds = BTreeMap::new();
        let mut next_instance = 1u64;
        let mut next_caption = 1u64;

        for i in 0..total {
            let image_id = ImageId(i as u64 + 1);
            let roll: f64 = rng.random();
            let scene = if roll < 0.7 {
                Scene::Field
            } else if roll < 0.88 {
                Scene::Home
            } else {
                Scene::Street
            };
            let mut objects: Vec<(String, BBox)> = Vec::new();
            let texts = match scene {
                Scene::Field => {
                    let a = *["zebra", "horse", "cow", "sheep"]
                        .choose(&mut rng)
                        .expect("non-empty");
                    let layout: f64 = rng.random();
                    let (count, other) = if layout < 0.25 {
                        (2, None)
                    } else if layout < 0.45 {
                        let b = *CANDIDATES
                            .iter()
                            .filter(|&&c| c != a)
                            .collect::<Vec<_>>()
                            .choose(&mut rng)
                            .expect("non-empty");
                        (1, Some(*b))
                    } else {
                        (1, None)
                    };
                    for _ in 0..count {
                        objects.push((a.to_owned(), animal_box(&mut rng, cfg.width, cfg.height)));
                    }
                    if let Some(b) = other {
                        objects.push((b.to_owned(), animal_box(&mut rng, cfg.width, cfg.height)));
                    }
                    backgrounds.insert(image_id, [70, 140, 60]);
                    field_captions(&mut rng, a, count, other)
                }
                Scene::Home => {
                    let a = *["dog", "cat"].choose(&mut rng).expect("non-empty");
                    objects.push(("couch".into(), fixed_box(&mut rng, cfg.width, cfg.height, 90.0, 36.0)));
                    objects.push((a.to_owned(), animal_box(&mut rng, cfg.width, cfg.height)));
                    backgrounds.insert(image_id, [200, 180, 150]);
                    home_captions(&mut rng, a)
                }
                Scene::Street => {
                    objects.push(("car".into(), fixed_box(&mut rng, cfg.width, cfg.height, 60.0, 30.0)));
                    objects.push(("person".into(), fixed_box(&mut rng, cfg.width, cfg.height, 22.0, 60.0)));
                    backgrounds.insert(image_id, [120, 120, 125]);
                    street_captions(&mut rng)
                }
            };
            // The first template of each scene is the common phrasing.
            let weights: Vec<u32> = (0..texts.len()).map(|k| if k == 0 { 4 } else { 1 }).collect();
            let pick = WeightedIndex::new(&weights).expect("positive weights");
            for _ in 0..cfg.captions_per_image {
                let text = &texts[pick.sample(&mut rng)];
                captions.push(CaptionRecord::new(
                    next_caption,
                    image_id,
                    tokenize(text),
                    CaptionOrigin::Human,
                )?);
                next_caption += 1;
            }

            let mut det: Vec<DetectionLabel> = objects
                .iter()
                .map(|(c, _)| c.clone())
                .collect::<BTreeSet<_>>()
                .into_iter()
                .map(|name| DetectionLabel {
                    name,
                    score: (rng.random_range(0.6..0.99f64) * 100.0).round() / 100.0,
                })
                .collect();
            if rng.random_bool(0.2) {
                det.push(DetectionLabel {
                    name: "bird".into(),
                    score: (rng.random_range(0.3..0.5f64) * 100.0).round() / 100.0,
                });
            }
            det.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.name.cmp(&b.name)));
            labels.insert(image_id, det);

            images.push(ImageRecord {
                image_id,
                file_path: PathBuf::from(format!("images/{}.png", image_id.0)),
                width: cfg.width,
                height: cfg.height,
                objects: objects
                    .into_iter()
                    .map(|(class, bbox)| {
                        let inst = ObjectInstance {
                            instance_id: next_instance,
                            class,
                            bbox,
                        };
                        next_instance += 1;
                        inst
                    })
                    .collect(),
            });
        }

        let mut ids: Vec<ImageId> = images.iter().map(|im| im.image_id).collect();
        ids.shuffle(&mut rng);
        let train = ids[..cfg.train_images].iter().copied().collect();
        let val = ids[cfg.train_images..cfg.train_images + cfg.val_images]
            .iter()
            .copied()
            .collect();
        let test = ids[cfg.train_images + cfg.val_images..].iter().copied().collect();
        let candidates = [(
            NOVEL_CLASS.to_owned(),
            CANDIDATES.iter().map(|s| s.to_string()).collect(),
        )]
        .into();
        Ok(ToyWorld {
            images,
            captions,
            labels,
            train,
            val,
            test,
            candidates,
            backgrounds,
            seed: cfg.seed,
        })
    }

    pub fn train_images(&self) -> Vec<ImageRecord> {
        self.images
            .iter()
            .filter(|im| self.train.contains(&im.image_id))
            .cloned()
            .collect()
    }

    pub fn train_captions(&self) -> Vec<CaptionRecord> {
        self.captions
            .iter()
            .filter(|c| self.train.contains(&c.image_id))
            .cloned()
            .collect()
    }

    pub fn render(&self, image: &ImageRecord) -> RgbImage {
        let bg = self.backgrounds.get(&image.image_id).copied().unwrap_or([128, 128, 128]);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ image.image_id.0.wrapping_mul(0x9E37_79B9));
        let mut img = RgbImage::from_fn(image.width, image.height, |_, _| {
            let j: i16 = rng.random_range(-6..=6);
            Rgb(bg.map(|c| (i16::from(c) + j).clamp(0, 255) as u8))
        });
        for obj in &image.objects {
            let r = obj.bbox.pixel_rect(image.width, image.height);
            for y in r.y0..r.y1 {
                for x in r.x0..r.x1 {
                    let px = match obj.class.as_str() {
                        "zebra" => {
                            if ((x - r.x0) / 3) % 2 == 0 {
                                [20, 20, 20]
                            } else {
                                [235, 235, 235]
                            }
                        }
                        "horse" => [120, 70, 30],
                        "cow" => [90, 60, 40],
                        "sheep" => [225, 225, 215],
                        "dog" => [150, 100, 50],
                        "cat" => [110, 110, 110],
                        "couch" => [60, 60, 140],
                        "car" => [180, 30, 30],
                        "person" => [230, 190, 160],
                        _ => [0, 0, 0],
                    };
                    img.put_pixel(x, y, Rgb(px));
                }
            }
        }
        img
    }

    /// Writes rasters, COCO-style annotation and caption files, detection
    /// labels, evaluation id lists and the candidate map under `dir`.
    pub fn write(&self, dir: &Path, lexicon: &Lexicon) -> Result<()> {
        let images_dir = dir.join("images");
        fs::create_dir_all(&images_dir).map_err(|e| Error::io(&images_dir, e))?;
        for im in &self.images {
            let path = dir.join(&im.file_path);
            self.render(im)
                .save_with_format(&path, image::ImageFormat::Png)
                .map_err(|e| Error::Raster {
                    path: path.clone(),
                    message: e.to_string(),
                })?;
        }

        let used: BTreeSet<&str> = self
            .images
            .iter()
            .flat_map(|im| im.objects.iter().map(|o| o.class.as_str()))
            .collect();
        let mut categories = Vec::new();
        for name in &used {
            let class = lexicon.require(name)?;
            categories.push(json!({"id": class.id, "name": class.name}));
        }
        let mut annotations = Vec::new();
        for im in &self.images {
            for o in &im.objects {
                let class = lexicon.require(&o.class)?;
                annotations.push(json!({
                    "id": o.instance_id,
                    "image_id": im.image_id.0,
                    "category_id": class.id,
                    "bbox": [o.bbox.x, o.bbox.y, o.bbox.w, o.bbox.h],
                }));
            }
        }
        let instances = json!({
            "images": self.images.iter().map(|im| json!({
                "id": im.image_id.0,
                "file_name": im.file_path,
                "width": im.width,
                "height": im.height,
            })).collect::<Vec<_>>(),
            "annotations": annotations,
            "categories": categories,
        });
        let captions = json!({
            "annotations": self.captions.iter().map(|c| json!({
                "id": c.caption_id,
                "image_id": c.image_id.0,
                "caption": c.tokens.join(" "),
            })).collect::<Vec<_>>(),
        });
        write_json(&dir.join(INSTANCES_FILE), &instances)?;
        write_json(&dir.join(CAPTIONS_FILE), &captions)?;
        write_json(&dir.join(CANDIDATES_FILE), &self.candidates)?;

        let det: Vec<serde_json::Value> = self
            .labels
            .iter()
            .map(|(id, l)| json!({"image_id": id.0, "labels": l}))
            .collect();
        jsonl::write(&dir.join(DETECTIONS_FILE), &det)?;
        for (file, ids) in [(VAL_IDS_FILE, &self.val), (TEST_IDS_FILE, &self.test)] {
            let text: String = ids.iter().map(|id| format!("{id}\n")).collect();
            jsonl::write_atomic(&dir.join(file), text.as_bytes())?;
        }
        Ok(())
    }
}

/// Synthetic budget used by [`prepare`].
pub const TOY_SYNTH_BUDGET: usize = 60;
/// Images drawn per replacement pair by [`prepare`].
pub const TOY_SYNTH_PER_PAIR: usize = 3;

/// Pipeline settings for toy runs. The toy scorer sees no pixels, so class
/// tags carry all of the image evidence and get a heavier mixture weight.
pub fn pipeline_config() -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    cfg.scorer.tag_weight = 0.5;
    cfg
}

/// Everything a toy pipeline run needs besides the world itself.
#[derive(Debug, Clone)]
pub struct ToyRun {
    pub split: DatasetSplit,
    pub synthetic: Vec<SyntheticPairRecord>,
    pub novel: Vec<ObjectClass>,
}

impl ToyRun {
    pub fn inputs<'a>(&'a self, world: &'a ToyWorld, lexicon: &'a Lexicon) -> PipelineInputs<'a> {
        PipelineInputs {
            images: &world.images,
            captions: &world.captions,
            split: &self.split,
            synthetic: &self.synthetic,
            labels: &world.labels,
            lexicon,
            novel_classes: &self.novel,
        }
    }
}

/// Writes `world` under `dir`, builds the held-out split and generates the
/// synthetic pairs (under `dir/synth`).
pub fn prepare(world: &ToyWorld, dir: &Path, lexicon: &Lexicon, seed: u64) -> Result<ToyRun> {
    world.write(dir, lexicon)?;
    let novel = lexicon.require_all(&[NOVEL_CLASS])?;
    let mut split = build_heldout_split(&world.train_images(), &world.train_captions(), &novel)?;
    split.val = world.val.clone();
    split.test = world.test.clone();
    split.out_of_domain = partition_in_out_domain(&split, &references_from(&world.captions), &novel)?;

    let mut pairs = Vec::new();
    for cand in world.candidates.get(NOVEL_CLASS).into_iter().flatten() {
        pairs.extend(enumerate_replacement_pairs(
            NOVEL_CLASS,
            cand,
            &world.images,
            &split,
            &PairConstraints::default(),
        ));
    }
    let plan = plan_generation(&pairs, TOY_SYNTH_BUDGET, TOY_SYNTH_PER_PAIR, seed)?;
    let fully: Vec<CaptionRecord> = world
        .captions
        .iter()
        .filter(|c| split.fully_paired.contains(&c.image_id))
        .cloned()
        .collect();
    let lexicons = RewriteLexicons::default();
    let rewrite_cfg = RewriteConfig::default();
    let rewrite = |t: &[String], c: &ObjectClass, n: &ObjectClass| rewrite_caption(t, c, n, &lexicons, &rewrite_cfg);
    let synthetic = generate_batch(
        &plan,
        &BatchInputs {
            images: &world.images,
            captions: &fully,
            image_root: dir,
            lexicon,
        },
        &rewrite,
        &dir.join("synth"),
    )?;
    Ok(ToyRun { split, synthetic, novel })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).expect("serializes");
    s.push('\n');
    jsonl::write_atomic(path, s.as_bytes())
}

/// Reads a list of image ids, one per line; blank lines and `#` comments
/// are ignored.
pub fn read_id_list(path: &Path) -> Result<BTreeSet<ImageId>> {
    let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = BTreeSet::new();
    let mut offset = 0;
    for line in content.split_inclusive('\n') {
        let t = line.trim();
        if !t.is_empty() && !t.starts_with('#') {
            let id = t.parse::<u64>().map_err(|e| Error::Parse {
                path: path.to_owned(),
                offset,
                message: format!("bad image id {t:?}: {e}"),
            })?;
            out.insert(ImageId(id));
        }
        offset += line.len();
    }
    Ok(out)
}
