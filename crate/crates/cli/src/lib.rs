//! The `brlkit` command line: scene generation, curation, VOC conversion,
//! training, evaluation, sweeps, loss-curve tables and the full experiment
//! matrix. Every command writes a run manifest next to its main output.

pub mod manifest;
pub mod plot;
pub mod settings;

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

use brlkit_core::curation::curate_per_category;
use brlkit_core::dataset::{convert_voc_dir, load_corpus, parse_voc_xml, save_corpus, validate_corpus};
use brlkit_core::detector::{predict_corpus, trace_tsv};
use brlkit_core::eval::{coco_thresholds, read_detections, write_detections};
use brlkit_core::experiment::{bench_assignment, results_csv, standard_matrix, CellOutcome};
use brlkit_core::{
    corpus_stats, curate, evaluate, generate_scenes, train, AnchorLayout, ApResult, AssignmentConfig, BenchConfig,
    Benchmark, CurationMode, Detection, DetectorModel, Error, FeatureBank, FeatureSpec, ImageRecord, LossConfig,
    LossKind, PredictConfig, SceneConfig, TrainConfig,
};

use crate::manifest::RunManifest;
use crate::settings::Settings;

pub const EXIT_OK: u8 = 0;
/// Anything not covered below, such as failing to write an output.
pub const EXIT_FAILURE: u8 = 1;
/// Bad flags, unreadable or malformed inputs, vocabulary mismatches.
pub const EXIT_INPUT: u8 = 2;
/// Training tripped the divergence guard.
pub const EXIT_DIVERGED: u8 = 3;

/// Marks an error as the caller's fault (exit code 2).
#[derive(Debug)]
pub struct InputError(pub String);

impl fmt::Display for InputError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InputError {}

pub fn exit_code(err: &anyhow::Error) -> u8 {
    // Also finds an InputError attached as context.
    if err.downcast_ref::<InputError>().is_some() {
        return EXIT_INPUT;
    }
    for cause in err.chain() {
        if cause.downcast_ref::<InputError>().is_some() {
            return EXIT_INPUT;
        }
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::Diverged { .. } => EXIT_DIVERGED,
                Error::Io(_) => EXIT_FAILURE,
                _ => EXIT_INPUT,
            };
        }
    }
    EXIT_FAILURE
}

#[derive(Debug, Parser)]
#[command(name = "brlkit", version, about = "Background recalibration loss toolkit")]
pub struct Cli {
    /// Flat `key = value` file; flags take precedence over it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Manifest path (default: `<main output>.manifest.json`).
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic scenes.
    Generate(GenerateArgs),
    /// Erase annotations under a curation mode.
    Curate(CurateArgs),
    /// Convert PASCAL VOC XML annotations to a corpus.
    ConvertVoc(ConvertVocArgs),
    /// Print annotation statistics for a corpus.
    Stats(StatsArgs),
    /// Train the toy detector.
    Train(TrainArgs),
    /// Evaluate a model or a detections file.
    Eval(EvalArgs),
    /// Train and evaluate once per value of one loss/assignment setting.
    Sweep(SweepArgs),
    /// Tabulate FL and BRL with their derivatives.
    PlotLoss(PlotLossArgs),
    /// Run the mode x loss matrix on a fresh synthetic benchmark.
    Experiment(ExperimentArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub num_scenes: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = "scene")]
    pub prefix: String,
    #[arg(long)]
    pub image_size: Option<u32>,
    #[arg(long)]
    pub min_objects: Option<usize>,
    #[arg(long)]
    pub max_objects: Option<usize>,
}

#[derive(Debug, Args)]
pub struct CurateArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub mode: String,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Training corpus; erased annotations are left out.
    #[arg(long)]
    pub out: PathBuf,
    /// Flat text summary.
    #[arg(long)]
    pub report: PathBuf,
    /// Kept-count histogram CSV (default: report path with `.hist.csv`).
    #[arg(long)]
    pub histogram: Option<PathBuf>,
    /// Also write the corpus with erased annotations flagged.
    #[arg(long)]
    pub audit: Option<PathBuf>,
    /// Halve each category separately (hard mode only).
    #[arg(long)]
    pub per_category: bool,
}

#[derive(Debug, Args)]
pub struct ConvertVocArgs {
    /// A VOC `Annotations` directory. Repeat for several datasets.
    #[arg(long = "annotations", required = true)]
    pub annotations: Vec<PathBuf>,
    /// Image-set list (one id per line) restricting the matching
    /// `--annotations` directory. Give one per directory or none.
    #[arg(long = "ids")]
    pub ids: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub corpus: PathBuf,
}

/// Loss, assignment, optimiser and feature settings shared by the training
/// commands.
#[derive(Debug, Clone, Default, Args)]
pub struct ModelArgs {
    /// `fl` or `brl`.
    #[arg(long)]
    pub loss: Option<String>,
    #[arg(long)]
    pub t: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub confusion_weight: Option<f64>,
    #[arg(long)]
    pub confusion_iou: Option<f64>,
    /// Treat anchors touching no labelled object as confusion anchors.
    #[arg(long)]
    pub ambiguous_background: Option<bool>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Scenes per gradient step.
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub feature_seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub score_threshold: Option<f64>,
    #[arg(long)]
    pub nms_iou: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training labels.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Full scenes the features come from (default: the corpus itself).
    /// Needed when the corpus was curated, since erasing a label does not
    /// remove the object from the image.
    #[arg(long)]
    pub scenes: Option<PathBuf>,
    #[arg(long)]
    pub out_model: PathBuf,
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Args)]
#[group(id = "source", required = true, multiple = false, args = ["model", "detections"])]
pub struct EvalArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub detections: Option<PathBuf>,
    #[arg(long)]
    pub test_corpus: PathBuf,
    /// APResult CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-IoU mAP TSV (default: out path with `.per_iou.tsv`).
    #[arg(long)]
    pub per_iou: Option<PathBuf>,
    /// Also save the model's detections.
    #[arg(long)]
    pub save_detections: Option<PathBuf>,
    #[command(flatten)]
    pub predict: PredictArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepAxis {
    T,
    Weight,
    ConfusionIou,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long, value_enum)]
    pub axis: SweepAxis,
    #[arg(long, value_delimiter = ',', required = true)]
    pub values: Vec<f64>,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub scenes: Option<PathBuf>,
    #[arg(long)]
    pub test_corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Text for the `mode` column.
    #[arg(long, default_value = "corpus")]
    pub label: String,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub predict: PredictArgs,
}

#[derive(Debug, Args)]
pub struct PlotLossArgs {
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub t: Option<f64>,
    #[arg(long, default_value_t = 1001)]
    pub points: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[arg(long, default_value_t = 500)]
    pub train_scenes: usize,
    #[arg(long, default_value_t = 200)]
    pub test_scenes: usize,
    #[arg(long, default_value_t = 1)]
    pub train_scene_seed: u64,
    #[arg(long, default_value_t = 2)]
    pub test_scene_seed: u64,
    #[arg(long)]
    pub curation_seed: Option<u64>,
    #[arg(long, value_delimiter = ',', default_value = "normal,easy,hard,extreme")]
    pub modes: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
    /// Long-format per-IoU table (default: out path with `.per_iou.tsv`).
    #[arg(long)]
    pub per_iou: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
}

pub fn run(cli: Cli) -> Result<()> {
    let settings = Settings::load(cli.config.as_deref())?;
    let manifest = cli.manifest.as_deref();
    match cli.command {
        Command::Generate(a) => cmd_generate(a, &settings, manifest),
        Command::Curate(a) => cmd_curate(a, &settings, manifest),
        Command::ConvertVoc(a) => cmd_convert_voc(a, manifest),
        Command::Stats(a) => cmd_stats(a),
        Command::Train(a) => cmd_train(a, &settings, manifest),
        Command::Eval(a) => cmd_eval(a, &settings, manifest),
        Command::Sweep(a) => cmd_sweep(a, &settings, manifest),
        Command::PlotLoss(a) => cmd_plot_loss(a, &settings, manifest),
        Command::Experiment(a) => cmd_experiment(a, &settings, manifest),
    }
}

fn read_corpus_file(path: &Path) -> Result<Vec<ImageRecord>> {
    load_corpus(path).map_err(|e| anyhow!(e).context(InputError(format!("corpus {}", path.display()))))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    path.with_extension(suffix)
}

/// Resolves model flags against the config file and library defaults.
pub fn resolve_model(
    args: &ModelArgs,
    settings: &Settings,
    assignment: AssignmentConfig,
) -> Result<(TrainConfig, FeatureSpec)> {
    let defaults = TrainConfig::default();
    let loss_kind: LossKind = match settings.pick(args.loss.clone(), "loss")? {
        Some(s) => s.parse()?,
        None => defaults.loss_kind,
    };
    let d = LossConfig::default();
    let loss = LossConfig::new(
        settings.pick_or(args.alpha, "alpha", d.alpha_t)?,
        settings.pick_or(args.gamma, "gamma", d.gamma)?,
        settings.pick_or(args.t, "t", d.recalib_t)?,
        settings.pick_or(args.confusion_weight, "confusion-weight", d.confusion_weight)?,
    )?;
    let assignment = AssignmentConfig {
        confusion_iou: settings.pick_or(args.confusion_iou, "confusion-iou", assignment.confusion_iou)?,
        ambiguous_background: settings.pick_or(
            args.ambiguous_background,
            "ambiguous-background",
            assignment.ambiguous_background,
        )?,
        ..assignment
    };
    assignment.validate()?;
    let tc = TrainConfig {
        loss_kind,
        loss,
        assignment,
        learning_rate: settings.pick_or(args.lr, "lr", defaults.learning_rate)?,
        epochs: settings.pick_or(args.epochs, "epochs", defaults.epochs)?,
        batch_scenes: settings.pick_or(args.batch, "batch", defaults.batch_scenes)?,
        seed: settings.seed(args.seed, "seed")?,
    };
    tc.validate()?;
    let fd = FeatureSpec::default();
    let features = FeatureSpec {
        dim: settings.pick_or(args.dim, "dim", fd.dim)?,
        noise: settings.pick_or(args.noise, "noise", fd.noise)?,
        seed: settings.pick_or(args.feature_seed, "feature-seed", fd.seed)?,
        ..fd
    };
    features.validate()?;
    Ok((tc, features))
}

fn resolve_predict(args: &PredictArgs, settings: &Settings) -> Result<PredictConfig> {
    let d = PredictConfig::default();
    let pc = PredictConfig {
        score_threshold: settings.pick_or(args.score_threshold, "score-threshold", d.score_threshold)?,
        nms_iou: settings.pick_or(args.nms_iou, "nms-iou", d.nms_iou)?,
        ..d
    };
    if !(0.0..=1.0).contains(&pc.score_threshold) || !(0.0..=1.0).contains(&pc.nms_iou) {
        bail!(InputError("score threshold and NMS IoU must lie in [0, 1]".into()));
    }
    Ok(pc)
}

/// Reorders `labels` to follow `scenes`, matching on image id.
pub fn align_labels(scenes: &[ImageRecord], labels: &[ImageRecord]) -> Result<Vec<ImageRecord>> {
    let by_id: HashMap<&str, &ImageRecord> = labels.iter().map(|r| (r.image_id.as_str(), r)).collect();
    if by_id.len() != scenes.len() {
        bail!(InputError(format!(
            "corpus has {} images but scenes have {}",
            by_id.len(),
            scenes.len()
        )));
    }
    scenes
        .iter()
        .map(|s| {
            by_id
                .get(s.image_id.as_str())
                .map(|r| (*r).clone())
                .ok_or_else(|| anyhow!(InputError(format!("no labels for scene {}", s.image_id))))
        })
        .collect()
}

/// Trains on `scenes` labelled by `labels` (same order).
pub fn fit(
    scenes: &[ImageRecord],
    labels: &[ImageRecord],
    tc: &TrainConfig,
    features: &FeatureSpec,
) -> Result<(DetectorModel, Vec<brlkit_core::EpochTrace>)> {
    let layout = AnchorLayout::default();
    let bank = FeatureBank::build(scenes, &layout, features)?;
    Ok(train(&bank, labels, features, &layout, tc)?)
}

pub fn model_detections(model: &DetectorModel, test: &[ImageRecord], pc: &PredictConfig) -> Result<Vec<Detection>> {
    let bank = FeatureBank::build(test, &model.layout, &model.features)?;
    Ok(predict_corpus(model, &bank, test, pc))
}

/// Detections must refer to images and categories present in the test set.
pub fn check_vocabulary(dets: &[Detection], test: &[ImageRecord]) -> Result<()> {
    let ids: BTreeSet<&str> = test.iter().map(|r| r.image_id.as_str()).collect();
    let cats: BTreeSet<u32> = test.iter().flat_map(|r| r.active().map(|a| a.category)).collect();
    for d in dets {
        if !ids.contains(d.image_id.as_str()) {
            return Err(Error::Vocabulary(format!("detection on unknown image {}", d.image_id)).into());
        }
        if !cats.contains(&d.category) {
            return Err(Error::Vocabulary(format!("category {} has no ground truth in the test corpus", d.category)).into());
        }
    }
    Ok(())
}

fn cmd_generate(a: GenerateArgs, settings: &Settings, manifest: Option<&Path>) -> Result<()> {
    let d = SceneConfig::default();
    let cfg = SceneConfig {
        num_scenes: a.num_scenes.unwrap_or(d.num_scenes),
        seed: settings.seed(a.seed, "seed")?,
        id_prefix: a.prefix.clone(),
        image_size: a.image_size.unwrap_or(d.image_size),
        min_objects: a.min_objects.unwrap_or(d.min_objects),
        max_objects: a.max_objects.unwrap_or(d.max_objects),
        ..d
    };
    let scenes = generate_scenes(&cfg)?;
    save_corpus(&scenes, &a.out, true)?;
    let mut m = RunManifest::new("generate", &cfg)?.seed("scene", cfg.seed);
    m.output(&a.out)?;
    m.write(&a.out, manifest)?;
    println!("wrote {} scenes to {}", scenes.len(), a.out.display());
    Ok(())
}

#[derive(Serialize)]
struct CurateConfig {
    mode: CurationMode,
    seed: u64,
    per_category: bool,
}

fn cmd_curate(a: CurateArgs, settings: &Settings, manifest: Option<&Path>) -> Result<()> {
    let mode: CurationMode = a.mode.parse()?;
    let seed = settings.seed(a.seed, "curation-seed")?;
    let corpus = read_corpus_file(&a.corpus)?;
    let (out, report) = if a.per_category {
        if mode != CurationMode::Hard {
            bail!(InputError("--per-category only applies to hard mode".into()));
        }
        curate_per_category(&corpus, seed)?
    } else {
        curate(&corpus, mode, seed)?
    };
    save_corpus(&out, &a.out, false)?;
    write_text(&a.report, &report.summary())?;
    let hist = a.histogram.clone().unwrap_or_else(|| sibling(&a.report, "hist.csv"));
    write_text(&hist, &report.histogram_csv())?;
    let mut m = RunManifest::new(
        "curate",
        CurateConfig {
            mode,
            seed,
            per_category: a.per_category,
        },
    )?
    .seed("curation", seed);
    m.input(&a.corpus)?;
    if let Some(audit) = &a.audit {
        save_corpus(&out, audit, true)?;
        m.output(audit)?;
    }
    for p in [&a.out, &a.report, &hist] {
        m.output(p)?;
    }
    m.write(&a.out, manifest)?;
    print!("{}", report.summary());
    Ok(())
}

fn read_ids(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| InputError(format!("{}: {e}", path.display())))?;
    Ok(text
        .lines()
        .map(|l| l.split_whitespace().next().unwrap_or("").to_string())
        .filter(|l| !l.is_empty())
        .collect())
}

fn cmd_convert_voc(a: ConvertVocArgs, manifest: Option<&Path>) -> Result<()> {
    if !a.ids.is_empty() && a.ids.len() != a.annotations.len() {
        bail!(InputError("give one --ids file per --annotations directory, or none".into()));
    }
    let mut corpus = Vec::new();
    for (k, dir) in a.annotations.iter().enumerate() {
        let input = |e: Error| anyhow!(e).context(InputError(format!("{}", dir.display())));
        match a.ids.get(k) {
            None => corpus.extend(convert_voc_dir(dir).map_err(input)?),
            Some(list) => {
                for id in read_ids(list)? {
                    let path = dir.join(format!("{id}.xml"));
                    let xml = fs::read_to_string(&path).map_err(|e| InputError(format!("{}: {e}", path.display())))?;
                    corpus.push(parse_voc_xml(&xml).map_err(input)?);
                }
            }
        }
    }
    validate_corpus(&corpus)?;
    save_corpus(&corpus, &a.out, false)?;
    let dirs: Vec<String> = a.annotations.iter().map(|d| d.display().to_string()).collect();
    let mut m = RunManifest::new("convert-voc", serde_json::json!({ "annotations": dirs }))?;
    for list in &a.ids {
        m.input(list)?;
    }
    m.output(&a.out)?;
    m.write(&a.out, manifest)?;
    print!("{}", corpus_stats(&corpus)?.summary());
    Ok(())
}

fn cmd_stats(a: StatsArgs) -> Result<()> {
    let corpus = read_corpus_file(&a.corpus)?;
    let report = corpus_stats(&corpus)?;
    print!("{}", report.summary());
    print!("{}", report.histogram_csv());
    Ok(())
}

#[derive(Serialize)]
struct TrainManifestConfig<'a> {
    train: &'a TrainConfig,
    features: &'a FeatureSpec,
    layout: AnchorLayout,
}

fn cmd_train(a: TrainArgs, settings: &Settings, manifest: Option<&Path>) -> Result<()> {
    let (tc, features) = resolve_model(&a.model, settings, AssignmentConfig::default())?;
    let labels = read_corpus_file(&a.corpus)?;
    let scenes = match &a.scenes {
        Some(p) => read_corpus_file(p)?,
        None => labels.clone(),
    };
    let labels = align_labels(&scenes, &labels)?;
    let (model, trace) = fit(&scenes, &labels, &tc, &features)?;
    let mut text = serde_json::to_string_pretty(&model)?;
    text.push('\n');
    write_text(&a.out_model, &text)?;
    let mut m = RunManifest::new(
        "train",
        TrainManifestConfig {
            train: &tc,
            features: &features,
            layout: AnchorLayout::default(),
        },
    )?
    .seed("train", tc.seed)
    .seed("features", features.seed);
    m.input(&a.corpus)?;
    if let Some(p) = &a.scenes {
        m.input(p)?;
    }
    m.output(&a.out_model)?;
    if let Some(t) = &a.trace {
        write_text(t, &trace_tsv(&trace))?;
        m.output(t)?;
    }
    m.write(&a.out_model, manifest)?;
    if let Some(last) = trace.last() {
        println!("final epoch loss {:.6}", last.total_loss);
    }
    Ok(())
}

fn report_metrics(r: &ApResult) {
    let show = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.4}"));
    println!("mAP50 = {}", show(r.map50));
    println!("mAP75 = {}", show(r.map75));
    println!("mAP_0.5:0.95 = {}", show(r.map_coco));
}

fn cmd_eval(a: EvalArgs, settings: &Settings, manifest: Option<&Path>) -> Result<()> {
    let test = read_corpus_file(&a.test_corpus)?;
    let pc = resolve_predict(&a.predict, settings)?;
    let mut m;
    let dets = if let Some(model_path) = &a.model {
        let text = fs::read_to_string(model_path).map_err(|e| InputError(format!("{}: {e}", model_path.display())))?;
        let model: DetectorModel = serde_json::from_str(&text)
            .map_err(|e| InputError(format!("model {}: {e}", model_path.display())))?;
        m = RunManifest::new("eval", &pc)?;
        m.input(model_path)?;
        model_detections(&model, &test, &pc)?
    } else {
        let path = a.detections.as_ref().expect("clap enforces one source");
        let file = fs::File::open(path).map_err(|e| InputError(format!("{}: {e}", path.display())))?;
        let dets = read_detections(std::io::BufReader::new(file))
            .map_err(|e| anyhow!(e).context(InputError(format!("detections {}", path.display()))))?;
        m = RunManifest::new("eval", serde_json::json!({}))?;
        m.input(path)?;
        dets
    };
    check_vocabulary(&dets, &test)?;
    let result = evaluate(&dets, &test, &coco_thresholds())?;
    write_text(&a.out, &result.to_csv())?;
    let per_iou = a.per_iou.clone().unwrap_or_else(|| sibling(&a.out, "per_iou.tsv"));
    write_text(&per_iou, &result.per_iou_tsv())?;
    m.input(&a.test_corpus)?;
    m.output(&a.out)?;
    m.output(&per_iou)?;
    if let Some(p) = &a.save_detections {
        let mut f = std::io::BufWriter::new(fs::File::create(p).with_context(|| format!("writing {}", p.display()))?);
        write_detections(&dets, &mut f)?;
        f.flush()?;
        drop(f);
        m.output(p)?;
    }
    m.write(&a.out, manifest)?;
    report_metrics(&result);
    Ok(())
}

/// One sweep row: the settings used and either metrics or a status.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub value: f64,
    pub train: TrainConfig,
    pub outcome: CellOutcome,
}

/// Applies `value` along `axis`. Sweeping `t` implies BRL.
pub fn sweep_config(base: &TrainConfig, axis: SweepAxis, value: f64) -> Result<TrainConfig> {
    let mut tc = base.clone();
    match axis {
        SweepAxis::T => {
            tc.loss_kind = LossKind::Brl;
            tc.loss.recalib_t = value;
        }
        SweepAxis::Weight => tc.loss.confusion_weight = value,
        SweepAxis::ConfusionIou => tc.assignment.confusion_iou = value,
    }
    tc.validate()?;
    Ok(tc)
}

pub fn train_and_score(
    scenes: &[ImageRecord],
    labels: &[ImageRecord],
    test: &[ImageRecord],
    tc: &TrainConfig,
    features: &FeatureSpec,
    pc: &PredictConfig,
) -> Result<ApResult> {
    let (model, _) = fit(scenes, labels, tc, features)?;
    let dets = model_detections(&model, test, pc)?;
    Ok(evaluate(&dets, test, &coco_thresholds())?)
}

fn outcome_of(r: Result<ApResult>) -> CellOutcome {
    match r {
        Ok(r) => CellOutcome::Done {
            map50: r.map50.unwrap_or(0.0),
            map75: r.map75.unwrap_or(0.0),
            map_coco: r.map_coco.unwrap_or(0.0),
            per_iou: r.per_iou_map,
        },
        Err(e) => match e.downcast_ref::<Error>() {
            Some(Error::Diverged { epoch, .. }) => CellOutcome::Diverged { epoch: *epoch },
            _ => CellOutcome::Failed(e.to_string()),
        },
    }
}

pub fn sweep_rows(
    axis: SweepAxis,
    values: &[f64],
    base: &TrainConfig,
    scenes: &[ImageRecord],
    labels: &[ImageRecord],
    test: &[ImageRecord],
    features: &FeatureSpec,
    pc: &PredictConfig,
) -> Result<Vec<SweepRow>> {
    let configs = values
        .iter()
        .map(|&v| sweep_config(base, axis, v).map(|tc| (v, tc)))
        .collect::<Result<Vec<_>>>()?;
    Ok(configs
        .into_par_iter()
        .map(|(value, tc)| {
            let outcome = outcome_of(train_and_score(scenes, labels, test, &tc, features, pc));
            SweepRow {
                value,
                train: tc,
                outcome,
            }
        })
        .collect())
}

pub fn sweep_csv(label: &str, rows: &[SweepRow]) -> String {
    let mut s = format!("{}\n", brlkit_core::experiment::RESULTS_HEADER);
    for r in rows {
        let tc = &r.train;
        let (metrics, status) = match &r.outcome {
            CellOutcome::Done {
                map50,
                map75,
                map_coco,
                ..
            } => (format!("{map50:.6},{map75:.6},{map_coco:.6}"), "ok".to_string()),
            CellOutcome::Diverged { epoch } => (",,".into(), format!("diverged@{epoch}")),
            CellOutcome::Failed(msg) => (",,".into(), format!("failed: {}", msg.replace(',', ";"))),
        };
        s.push_str(&format!(
            "{label},{},{},{},{},{},{metrics},{status}\n",
            tc.loss_kind,
            tc.loss_kind.effective(&tc.loss).recalib_t,
            tc.loss.confusion_weight,
            tc.assignment.confusion_iou,
            tc.seed
        ));
    }
    s
}

fn cmd_sweep(a: SweepArgs, settings: &Settings, manifest: Option<&Path>) -> Result<()> {
    let (base, features) = resolve_model(&a.model, settings, AssignmentConfig::default())?;
    let pc = resolve_predict(&a.predict, settings)?;
    let labels = read_corpus_file(&a.corpus)?;
    let scenes = match &a.scenes {
        Some(p) => read_corpus_file(p)?,
        None => labels.clone(),
    };
    let labels = align_labels(&scenes, &labels)?;
    let test = read_corpus_file(&a.test_corpus)?;
    let rows = sweep_rows(a.axis, &a.values, &base, &scenes, &labels, &test, &features, &pc)?;
    write_text(&a.out, &sweep_csv(&a.label, &rows))?;
    let mut m = RunManifest::new(
        "sweep",
        serde_json::json!({ "axis": a.axis, "values": a.values, "base": base, "features": features, "predict": pc }),
    )?
    .seed("train", base.seed)
    .seed("features", features.seed);
    m.input(&a.corpus)?;
    if let Some(p) = &a.scenes {
        m.input(p)?;
    }
    m.input(&a.test_corpus)?;
    m.output(&a.out)?;
    m.write(&a.out, manifest)?;
    for r in &rows {
        if !matches!(r.outcome, CellOutcome::Done { .. }) {
            eprintln!("value {}: {:?}", r.value, r.outcome);
        }
    }
    Ok(())
}

fn cmd_plot_loss(a: PlotLossArgs, settings: &Settings, manifest: Option<&Path>) -> Result<()> {
    let d = LossConfig::default();
    let cfg = LossConfig {
        alpha_t: settings.pick_or(a.alpha, "alpha", d.alpha_t)?,
        gamma: settings.pick_or(a.gamma, "gamma", d.gamma)?,
        recalib_t: settings.pick_or(a.t, "t", d.recalib_t)?,
        ..d
    };
    let rows = plot::loss_table(&cfg, a.points)?;
    write_text(&a.out, &plot::table_tsv(&rows))?;
    let check = plot::continuity(&rows, &cfg);
    let mut m = RunManifest::new("plot-loss", serde_json::json!({ "loss": cfg, "points": a.points }))?;
    m.output(&a.out)?;
    m.write(&a.out, manifest)?;
    print!("{}", check.summary());
    Ok(())
}

fn cmd_experiment(a: ExperimentArgs, settings: &Settings, manifest: Option<&Path>) -> Result<()> {
    if a.model.loss.is_some() {
        bail!(InputError("experiment always runs both losses; drop --loss".into()));
    }
    let (base, features) = resolve_model(&a.model, settings, bench_assignment())?;
    let curation_seed = settings.seed(a.curation_seed, "curation-seed")?;
    let modes = a
        .modes
        .iter()
        .map(|m| m.parse::<CurationMode>())
        .collect::<brlkit_core::Result<Vec<_>>>()?;
    let mut config = BenchConfig {
        features,
        ..BenchConfig::default()
    };
    config.train_scenes.num_scenes = a.train_scenes;
    config.train_scenes.seed = a.train_scene_seed;
    config.test_scenes.num_scenes = a.test_scenes;
    config.test_scenes.seed = a.test_scene_seed;
    let bench = Benchmark::build(config.clone())?;
    let mut cells = standard_matrix(&modes);
    for c in &mut cells {
        c.assignment = base.assignment;
        if c.loss_kind == LossKind::Brl {
            c.loss = base.loss;
        } else {
            c.loss.alpha_t = base.loss.alpha_t;
            c.loss.gamma = base.loss.gamma;
        }
    }
    let results = bench.run(&cells, &base, curation_seed);
    write_text(&a.out, &results_csv(&results))?;
    let per_iou = a.per_iou.clone().unwrap_or_else(|| sibling(&a.out, "per_iou.tsv"));
    let mut table = String::from("mode\tloss_kind\tiou\tmap\n");
    for r in &results {
        if let CellOutcome::Done { per_iou, .. } = &r.outcome {
            for (thr, v) in coco_thresholds().iter().zip(per_iou) {
                table.push_str(&format!("{}\t{}\t{thr:.2}\t{v:.6}\n", r.cell.mode, r.cell.loss_kind));
            }
        }
    }
    write_text(&per_iou, &table)?;
    let mut m = RunManifest::new(
        "experiment",
        serde_json::json!({ "bench": config, "base": base, "cells": cells }),
    )?
    .seed("train", base.seed)
    .seed("curation", curation_seed)
    .seed("train_scenes", a.train_scene_seed)
    .seed("test_scenes", a.test_scene_seed)
    .seed("features", config.features.seed);
    m.output(&a.out)?;
    m.output(&per_iou)?;
    m.write(&a.out, manifest)?;
    print!("{}", results_csv(&results));
    Ok(())
}
