use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use synthcap_core::candidates::{rank_candidates, load_candidate_map, CandidateMap};
use synthcap_core::dataset::{
    build_heldout_split, load_coco, load_detection_labels, partition_in_out_domain,
    references_from, CaptionOrigin, CaptionRecord, ImageId, ImageRecord,
};
use synthcap_core::decoding::DecodedRecord;
use synthcap_core::jsonl;
use synthcap_core::lexicon::{caption_mentions, Lexicon, ObjectClass};
use synthcap_core::metrics::{beta_label, evaluate, EvalSet};
use synthcap_core::pipeline::{
    decode_constrained, decode_plain, generate_pseudo_labels, run_pipeline, select_constraints,
    PipelineInputs, PipelineOutput,
};
use synthcap_core::review::load_reviewed_manifest;
use synthcap_core::rewrite::rewrite_caption;
use synthcap_core::scorer::NGramModel;
use synthcap_core::synth::{
    enumerate_replacement_pairs, generate_batch, plan_generation, BatchInputs, SyntheticPairRecord,
};
use synthcap_core::text::tokenize;
use synthcap_core::toy::{self, read_id_list, ToyConfig, ToyWorld};
use synthcap_review::{ReviewConfig, ReviewError};

use crate::config::CliConfig;
use crate::data::Dataset;
use crate::{
    CandidatesArgs, Cli, Command, DecodeArgs, EvalArgs, PseudolabelArgs, ReviewServeArgs,
    RewriteArgs, SplitArgs, Subset, SynthArgs, ToyArgs, TrainArgs,
};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] synthcap_core::Error),
    #[error(transparent)]
    Review(#[from] ReviewError),
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Core(synthcap_core::Error::Config(_)) => 2,
            _ => 1,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

/// An output directory that is removed again if the command fails before
/// calling [`OutputDir::keep`], unless it existed beforehand.
struct OutputDir {
    path: PathBuf,
    created: bool,
    keep: bool,
}

impl OutputDir {
    fn create(path: &Path) -> Result<Self> {
        let created = !path.exists();
        std::fs::create_dir_all(path).map_err(|e| synthcap_core::Error::io(path, e))?;
        Ok(OutputDir {
            path: path.to_owned(),
            created,
            keep: false,
        })
    }

    fn keep(mut self) {
        self.keep = true;
    }
}

impl Drop for OutputDir {
    fn drop(&mut self) {
        if !self.keep && self.created {
            log::warn!("removing partial output {}", self.path.display());
            let _ = std::fs::remove_dir_all(&self.path);
        }
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).expect("serializes");
    s.push('\n');
    Ok(jsonl::write_atomic(path, s.as_bytes())?)
}

struct Context {
    cfg: CliConfig,
    lexicon: Lexicon,
    /// Whether `cfg` came from a file rather than built-in defaults.
    from_file: bool,
}

impl Context {
    fn novel(&self) -> Result<Vec<ObjectClass>> {
        Ok(self.lexicon.require_all(&self.cfg.novel_classes)?)
    }
}

pub fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(usize::from(n))
            .build_global()
            .map_err(|e| CliError::Failed(format!("cannot start worker pool: {e}")))?;
    }
    let mut cfg = CliConfig::load_or_default(cli.config.as_deref())?;
    let from_file = cli.config.is_some();
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(novel) = cli.novel {
        cfg.novel_classes = novel.into_iter().filter(|s| !s.is_empty()).collect();
    }
    cfg.pipeline.seed = cfg.seed;
    let lexicon = cfg.lexicon()?;
    let mut ctx = Context {
        cfg,
        lexicon,
        from_file,
    };
    match cli.command {
        Command::Split(a) => split(&ctx, a),
        Command::Candidates(a) => candidates(&mut ctx, a),
        Command::Synth(a) => synth(&mut ctx, a),
        Command::Rewrite(a) => rewrite(&ctx, a),
        Command::Decode(a) => decode(&mut ctx, a),
        Command::Pseudolabel(a) => pseudolabel(&mut ctx, a),
        Command::Eval(a) => eval(&mut ctx, a),
        Command::Train(a) => train(&mut ctx, a),
        Command::ReviewServe(a) => review_serve(a),
        Command::Toy(a) => toy_cmd(&ctx, a),
    }
}

fn split(ctx: &Context, a: SplitArgs) -> Result<()> {
    ctx.cfg.validate()?;
    if a.instances.len() != a.captions.len() {
        return Err(CliError::Usage(format!(
            "--instances and --captions must come in pairs, got {} and {}",
            a.instances.len(),
            a.captions.len()
        )));
    }
    let novel = ctx.novel()?;
    let mut images: BTreeMap<ImageId, ImageRecord> = BTreeMap::new();
    let mut captions = Vec::new();
    for (inst, caps) in a.instances.iter().zip(&a.captions) {
        let (ims, cs) = load_coco(inst, caps, &ctx.lexicon)?;
        log::info!("{}: {} images, {} captions", inst.display(), ims.len(), cs.len());
        for im in ims {
            let id = im.image_id;
            if images.insert(id, im).is_some() {
                return Err(synthcap_core::Error::Integrity(format!("image {id} appears in more than one file")).into());
            }
        }
        captions.extend(cs);
    }
    let val = a.val_ids.as_deref().map(read_id_list).transpose()?.unwrap_or_default();
    let test = a.test_ids.as_deref().map(read_id_list).transpose()?.unwrap_or_default();
    if let Some(id) = val.intersection(&test).next() {
        return Err(synthcap_core::Error::Integrity(format!("image {id} is in both val and test lists")).into());
    }
    for id in val.iter().chain(&test) {
        if !images.contains_key(id) {
            return Err(synthcap_core::Error::Integrity(format!("held-out image {id} has no annotations")).into());
        }
    }
    let images: Vec<ImageRecord> = images.into_values().collect();
    let held_out = |id: &ImageId| val.contains(id) || test.contains(id);
    let train_images: Vec<ImageRecord> = images.iter().filter(|im| !held_out(&im.image_id)).cloned().collect();
    let train_captions: Vec<CaptionRecord> = captions.iter().filter(|c| !held_out(&c.image_id)).cloned().collect();
    let mut split = build_heldout_split(&train_images, &train_captions, &novel)?;
    split.val = val;
    split.test = test;
    split.out_of_domain = partition_in_out_domain(&split, &references_from(&captions), &novel)?;
    Dataset::write(&a.out, &images, &captions, &split)?;
    let ood = split.out_of_domain.values().filter(|&&b| b).count();
    log::info!(
        "split: {} fully paired, {} partially paired, {} val, {} test ({} out-of-domain)",
        split.fully_paired.len(),
        split.partially_paired.len(),
        split.val.len(),
        split.test.len(),
        ood
    );
    Ok(())
}

#[derive(Deserialize)]
struct PredLine {
    image_id: ImageId,
    #[serde(default)]
    tokens: Option<Vec<String>>,
    #[serde(default)]
    caption: Option<String>,
}

fn read_predictions(path: &Path) -> Result<BTreeMap<ImageId, Vec<String>>> {
    let mut out = BTreeMap::new();
    for line in jsonl::read::<PredLine>(path)? {
        let tokens = match (line.tokens, line.caption) {
            (Some(t), _) => t,
            (None, Some(c)) => tokenize(&c),
            (None, None) => {
                return Err(synthcap_core::Error::Integrity(format!(
                    "{}: prediction for image {} has neither tokens nor caption",
                    path.display(),
                    line.image_id
                ))
                .into())
            }
        };
        if out.insert(line.image_id, tokens).is_some() {
            return Err(synthcap_core::Error::Integrity(format!(
                "{}: image {} predicted twice",
                path.display(),
                line.image_id
            ))
            .into());
        }
    }
    Ok(out)
}

fn candidates(ctx: &mut Context, a: CandidatesArgs) -> Result<()> {
    if let Some(m) = a.m {
        ctx.cfg.m = m;
    }
    ctx.cfg.validate()?;
    let data = Dataset::load(&a.data)?;
    let preds = read_predictions(&a.pred)?;
    let novel = ctx.novel()?;
    let novel_names: BTreeSet<&str> = novel.iter().map(|c| c.name.as_str()).collect();
    let in_domain: Vec<ObjectClass> = ctx
        .lexicon
        .classes()
        .iter()
        .filter(|c| !novel_names.contains(c.name.as_str()))
        .cloned()
        .collect();
    let mut map = CandidateMap::new();
    let mut rankings = Vec::new();
    for class in &novel {
        let generated: Vec<CaptionRecord> = data
            .images
            .iter()
            .filter(|im| data.split.val.contains(&im.image_id) && im.instances_of(&class.name).next().is_some())
            .filter_map(|im| preds.get(&im.image_id).map(|t| (im.image_id, t)))
            .filter(|(_, t)| !t.is_empty())
            .enumerate()
            .map(|(i, (id, t))| CaptionRecord::new(i as u64, id, t.clone(), CaptionOrigin::PseudoBs))
            .collect::<synthcap_core::Result<_>>()?;
        if generated.is_empty() {
            log::warn!("no baseline captions for validation images with {}", class.name);
        }
        let ranking = rank_candidates(class, &generated, &in_domain, ctx.cfg.m, &ctx.lexicon)?;
        log::info!("{}: {:?}", class.name, ranking.selected);
        map.insert(class.name.clone(), ranking.selected.clone());
        rankings.push(ranking);
    }
    write_json(&a.out, &map)?;
    if let Some(path) = &a.rankings {
        jsonl::write(path, &rankings)?;
    }
    Ok(())
}

fn synth(ctx: &mut Context, a: SynthArgs) -> Result<()> {
    if let Some(k) = a.k {
        ctx.cfg.k = k;
    }
    if let Some(m) = a.m {
        ctx.cfg.m = m;
    }
    ctx.cfg.validate()?;
    let data = Dataset::load(&a.data)?;
    let map = load_candidate_map(&a.candidates)?;
    let novel = ctx.novel()?;
    let mut pairs = Vec::new();
    for class in &novel {
        let Some(cands) = map.get(&class.name) else {
            log::warn!("candidate map has no entry for {}", class.name);
            continue;
        };
        for cand in cands {
            ctx.lexicon.require(cand)?;
            let found = enumerate_replacement_pairs(&class.name, cand, &data.images, &data.split, &ctx.cfg.pair_constraints);
            log::info!("{} <- {}: {} compatible box pairs", class.name, cand, found.len());
            pairs.extend(found);
        }
    }
    let plan = plan_generation(&pairs, ctx.cfg.k, ctx.cfg.m, ctx.cfg.seed)?;
    for (key, missing) in &plan.shortfalls {
        log::warn!("{key}: {missing} images short of the quota");
    }
    if a.dry_run {
        let mut out = std::io::stdout().lock();
        serde_json::to_writer_pretty(&mut out, &plan).expect("plan serializes");
        writeln!(out).map_err(|e| CliError::Failed(format!("cannot write plan: {e}")))?;
        return Ok(());
    }
    let out = a.out.expect("clap requires --out without --dry-run");
    let guard = OutputDir::create(&out)?;
    let fully: Vec<CaptionRecord> = data
        .captions
        .iter()
        .filter(|c| data.split.fully_paired.contains(&c.image_id))
        .cloned()
        .collect();
    let lexicons = ctx.cfg.rewrite_lexicons()?;
    let rewrite_cfg = ctx.cfg.rewrite;
    let rewrite = |t: &[String], c: &ObjectClass, n: &ObjectClass| rewrite_caption(t, c, n, &lexicons, &rewrite_cfg);
    write_json(&out.join("plan.json"), &plan)?;
    let records = generate_batch(
        &plan,
        &BatchInputs {
            images: &data.images,
            captions: &fully,
            image_root: &a.image_root,
            lexicon: &ctx.lexicon,
        },
        &rewrite,
        &out,
    )?;
    log::info!("{} synthetic pairs written to {}", records.len(), out.display());
    guard.keep();
    Ok(())
}

fn rewrite(ctx: &Context, a: RewriteArgs) -> Result<()> {
    let candidate = ctx.lexicon.require(&a.candidate)?;
    let novel = ctx.lexicon.require(&a.novel)?;
    let lexicons = ctx.cfg.rewrite_lexicons()?;
    let captions: Vec<String> = if a.captions.is_empty() {
        std::io::stdin()
            .lock()
            .lines()
            .collect::<std::io::Result<_>>()
            .map_err(|e| CliError::Failed(format!("cannot read stdin: {e}")))?
    } else {
        a.captions
    };
    let mut failed = 0;
    let mut out = std::io::stdout().lock();
    for caption in captions.iter().filter(|c| !c.trim().is_empty()) {
        match rewrite_caption(&tokenize(caption), candidate, novel, &lexicons, &ctx.cfg.rewrite) {
            Ok(tokens) => writeln!(out, "{}", tokens.join(" ")),
            Err(e) => {
                log::error!("{e}");
                failed += 1;
                writeln!(out)
            }
        }
        .map_err(|e| CliError::Failed(format!("cannot write output: {e}")))?;
    }
    if failed > 0 {
        return Err(CliError::Failed(format!("{failed} captions could not be rewritten")));
    }
    Ok(())
}

fn subset_ids(data: &Dataset, subset: Subset) -> &BTreeSet<ImageId> {
    match subset {
        Subset::Val => &data.split.val,
        Subset::Test => &data.split.test,
        Subset::Partial => &data.split.partially_paired,
        Subset::Fully => &data.split.fully_paired,
    }
}

fn decode(ctx: &mut Context, a: DecodeArgs) -> Result<()> {
    let d = &mut ctx.cfg.pipeline.decode;
    if let Some(b) = a.beam {
        d.beam_size = b;
    }
    if let Some(l) = a.max_len {
        d.max_len = l;
    }
    d.validate()?;
    let cfg = *d;
    let model = NGramModel::load(&a.model)?;
    let data = Dataset::load(&a.data)?;
    let images = data.images_in(subset_ids(&data, a.subset));
    let labels = a.labels.as_deref().map(|p| load_detection_labels(p, &ctx.lexicon)).transpose()?;
    let records: Vec<DecodedRecord> = images
        .par_iter()
        .map(|im| {
            let tags = im.context_tags();
            match &labels {
                None => decode_plain(&model, im.image_id, &tags, &cfg),
                Some(labels) => {
                    let cons = select_constraints(labels, im.image_id, &ctx.lexicon, &model, cfg.max_constraints);
                    let (rec, met) = decode_constrained(&model, im.image_id, &tags, &cons, &cfg)?;
                    if !met {
                        log::warn!("image {}: constraints not satisfied", im.image_id);
                    }
                    Ok(rec)
                }
            }
        })
        .collect::<synthcap_core::Result<_>>()?;
    jsonl::write(&a.out, &records)?;
    log::info!("{} captions written to {}", records.len(), a.out.display());
    Ok(())
}

fn pseudolabel(ctx: &mut Context, a: PseudolabelArgs) -> Result<()> {
    if let Some(m) = a.mode {
        ctx.cfg.pipeline.mode = m.into();
    }
    ctx.cfg.pipeline.validate()?;
    let model = NGramModel::load(&a.model)?;
    let data = Dataset::load(&a.data)?;
    let labels = load_detection_labels(&a.labels, &ctx.lexicon)?;
    let images = data.images_in(&data.split.partially_paired);
    let out = generate_pseudo_labels(
        &model,
        &images,
        &labels,
        &ctx.lexicon,
        ctx.cfg.pipeline.mode,
        &ctx.cfg.pipeline.decode,
        0,
    )?;
    let unmet = out.iter().filter(|l| !l.met).count();
    if unmet > 0 {
        log::warn!("{unmet} constrained captions do not satisfy their constraints");
    }
    jsonl::write(&a.out, &out)?;
    log::info!("{} pseudo-labels written to {}", out.len(), a.out.display());
    Ok(())
}

fn eval(ctx: &mut Context, a: EvalArgs) -> Result<()> {
    if let Some(b) = a.betas {
        ctx.cfg.pipeline.eval.betas = b;
    }
    if let Some(m) = a.cider_mode {
        ctx.cfg.pipeline.eval.cider_mode = m.into();
    }
    let opts = &ctx.cfg.pipeline.eval;
    let novel = ctx.novel()?;
    let preds = read_predictions(&a.pred)?;
    let captions: Vec<CaptionRecord> = jsonl::read(&a.refs)?;
    let refs = references_from(&captions);
    let set = EvalSet::from_flags(preds.keys(), |id| {
        refs.get(&id)
            .is_some_and(|rs| rs.iter().any(|r| novel.iter().any(|c| caption_mentions(r, c))))
    });
    let report = evaluate(&preds, &refs, &set, &novel, opts)?;
    print!("{}", report.to_table(&opts.betas));
    for b in &opts.betas {
        log::debug!("COF{} = {:?}", beta_label(*b), report.cof.get(&beta_label(*b)));
    }
    if let Some(path) = &a.out {
        write_json(path, &report)?;
    }
    Ok(())
}

fn print_stages(out: &PipelineOutput) {
    println!("{:<8} {:>7} {:>7} {:>7} {:>7}", "stage", "corpus", "F1", "C-out", "C-in");
    for s in &out.stages {
        let ood = s.report.out_of_domain.as_ref();
        let ind = s.report.in_domain.as_ref();
        let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_owned(), |v| format!("{v:.1}"));
        println!(
            "{:<8} {:>7} {:>7} {:>7} {:>7}",
            s.meta.stage,
            s.meta.corpus_size(),
            fmt(ood.map(|o| o.macro_f1)),
            fmt(ood.map(|o| o.cider)),
            fmt(ind.map(|o| o.cider)),
        );
    }
}

fn run_training(ctx: &Context, inputs: &PipelineInputs<'_>, out: &Path) -> Result<()> {
    let guard = OutputDir::create(out)?;
    write_json(&out.join("config.json"), &ctx.cfg)?;
    let result = run_pipeline(inputs, &ctx.cfg.pipeline, Some(out))?;
    print_stages(&result);
    guard.keep();
    Ok(())
}

fn train(ctx: &mut Context, a: TrainArgs) -> Result<()> {
    if let Some(r) = a.rounds {
        ctx.cfg.pipeline.rounds = r;
    }
    if let Some(m) = a.mode {
        ctx.cfg.pipeline.mode = m.into();
    }
    ctx.cfg.validate()?;
    let data = Dataset::load(&a.data)?;
    let labels = load_detection_labels(&a.labels, &ctx.lexicon)?;
    let synthetic: Vec<SyntheticPairRecord> = match &a.synth {
        Some(p) => load_reviewed_manifest(p)?,
        None => Vec::new(),
    };
    let novel = ctx.novel()?;
    let inputs = PipelineInputs {
        images: &data.images,
        captions: &data.captions,
        split: &data.split,
        synthetic: &synthetic,
        labels: &labels,
        lexicon: &ctx.lexicon,
        novel_classes: &novel,
    };
    run_training(ctx, &inputs, &a.out)
}

fn review_serve(a: ReviewServeArgs) -> Result<()> {
    let cfg = ReviewConfig {
        manifest: a.manifest,
        image_root: a.image_root,
        ui_dir: a.ui,
    };
    let runtime = tokio::runtime::Runtime::new()
        .map_err(|e| CliError::Failed(format!("cannot start async runtime: {e}")))?;
    runtime.block_on(synthcap_review::serve((a.bind, a.port).into(), &cfg))?;
    Ok(())
}

fn toy_cmd(ctx: &Context, a: ToyArgs) -> Result<()> {
    let guard = OutputDir::create(&a.out)?;
    let world = ToyWorld::generate(&ToyConfig {
        seed: ctx.cfg.seed,
        ..ToyConfig::default()
    })?;
    let run = toy::prepare(&world, &a.out, &ctx.lexicon, ctx.cfg.seed)?;
    Dataset::write(&a.out.join("data"), &world.images, &world.captions, &run.split)?;
    log::info!(
        "toy world: {} images, {} synthetic pairs, {} partially paired",
        world.images.len(),
        run.synthetic.len(),
        run.split.partially_paired.len()
    );
    if a.run {
        let mut tctx = Context {
            cfg: ctx.cfg.clone(),
            lexicon: ctx.lexicon.clone(),
            from_file: ctx.from_file,
        };
        tctx.cfg.novel_classes = vec![toy::NOVEL_CLASS.to_owned()];
        if !ctx.from_file {
            tctx.cfg.pipeline = toy::pipeline_config();
            tctx.cfg.pipeline.seed = ctx.cfg.seed;
        }
        run_training(&tctx, &run.inputs(&world, &ctx.lexicon), &a.out.join("run"))?;
    }
    guard.keep();
    Ok(())
}
