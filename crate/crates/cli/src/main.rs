//! `shelfid` command-line entry point.
//!
//! Every subcommand resolves its settings from an optional `key = value`
//! config file, then `--set KEY=VALUE` pairs, then explicit flags, and echoes
//! the resolved configuration to stderr before running.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data or format
//! error.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::parser::ValueSource;
use clap::{ArgMatches, Args, CommandFactory, FromArgMatches, Parser, Subcommand};

use shelfid::arcface::ArcFaceHead;
use shelfid::augment::{load_image, AugmentationPolicy, ImageCache};
use shelfid::balancing::{default_depth_grid, make_validation_split};
use shelfid::checkpoint::Checkpoint;
use shelfid::encoder::{EncoderConfig, ImageEncoder, VitEncoder, ENCODER_KEYS};
use shelfid::evalharness::{build_gallery, render_report, zero_shot_eval, EvalOptions, ReportFormat, Selection};
use shelfid::finetune::{finetune, sweep_depth, FinetuneConfig, FINETUNE_KEYS};
use shelfid::gallery::Gallery;
use shelfid::kvconfig::{parse_list, KvConfig};
use shelfid::lr_schedule::BlockLrSchedule;
use shelfid::manifest::{DatasetManifest, Split};
use shelfid::synthetic::{generate, SyntheticSpec};
use shelfid::{Error, Result};

/// Keys for paths and subcommand options that are not part of the encoder
/// or finetune configuration.
const RUN_KEYS: &[&str] = &[
    "manifest",
    "init",
    "out",
    "history",
    "depths",
    "checkpoint",
    "gallery",
    "id",
    "image",
    "train",
    "test",
    "aug",
    "selection",
    "format",
    "top_confusions",
    "num_classes",
    "min_class_size",
    "max_class_size",
    "test_per_class",
];

#[derive(Parser, Debug)]
#[command(
    name = "shelfid",
    version,
    about = "Finetune an image encoder with ArcFace and classify products by nearest-neighbor gallery lookup",
    arg_required_else_help = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print the blockwise learning-rate schedule as CSV.
    Schedule(ScheduleArgs),
    /// Write a freshly initialized (untrained) encoder checkpoint.
    Init(InitArgs),
    /// Render a procedurally generated long-tailed product dataset.
    Synth(SynthArgs),
    /// Train one model per balancing depth and report the best depth.
    SweepDepth(SweepArgs),
    /// Finetune an encoder with an ArcFace head and blockwise learning rates.
    Finetune(FinetuneArgs),
    /// Add products to a gallery from one image each.
    Enroll(EnrollArgs),
    /// Classify images against a gallery; prints `id<TAB>score` per image.
    Classify(ClassifyArgs),
    /// Zero-shot evaluation: one enrolled train image per class, every test image classified.
    Eval(EvalArgs),
}

#[derive(Args, Debug)]
struct ConfigArgs {
    /// `key = value` configuration file; flags override its values.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override one configuration key (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args, Debug)]
struct ScheduleArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Number of encoder blocks.
    #[arg(long = "blocks", default_value_t = EncoderConfig::default().num_blocks)]
    num_blocks: usize,
    /// Learning rate of the top block.
    #[arg(long, default_value_t = FinetuneConfig::default().top_lr)]
    top_lr: f64,
    /// Per-block decay factor towards the input.
    #[arg(long = "decay", default_value_t = FinetuneConfig::default().lr_decay)]
    lr_decay: f64,
    /// Output file [default: stdout].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EncoderArgs {
    /// Encoder blocks.
    #[arg(long = "blocks", default_value_t = EncoderConfig::default().num_blocks)]
    num_blocks: usize,
    /// Embedding dimension.
    #[arg(long, default_value_t = EncoderConfig::default().embed_dim)]
    embed_dim: usize,
    /// Input image side length (square images).
    #[arg(long = "image-size", default_value_t = EncoderConfig::default().image_height)]
    image_size: usize,
    /// Patch side length.
    #[arg(long, default_value_t = EncoderConfig::default().patch_size)]
    patch_size: usize,
    /// Attention heads.
    #[arg(long, default_value_t = EncoderConfig::default().heads)]
    heads: usize,
}

#[derive(Args, Debug)]
struct InitArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    encoder: EncoderArgs,
    /// Initialization seed.
    #[arg(long, default_value_t = EncoderConfig::default().seed)]
    seed: u64,
    /// Checkpoint to write.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Number of product classes.
    #[arg(long, default_value_t = SyntheticSpec::default().num_classes)]
    num_classes: usize,
    /// Images in the smallest class.
    #[arg(long, default_value_t = SyntheticSpec::default().min_class_size)]
    min_class_size: usize,
    /// Images in the largest class.
    #[arg(long, default_value_t = SyntheticSpec::default().max_class_size)]
    max_class_size: usize,
    /// Test images per class (at most a third of each class).
    #[arg(long, default_value_t = SyntheticSpec::default().test_per_class)]
    test_per_class: usize,
    /// Generation seed.
    #[arg(long, default_value_t = SyntheticSpec::default().seed)]
    seed: u64,
    /// Output directory; receives the PNGs and `manifest.csv`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Training epochs.
    #[arg(long, default_value_t = FinetuneConfig::default().epochs)]
    epochs: usize,
    /// Mini-batch size.
    #[arg(long, default_value_t = FinetuneConfig::default().batch_size)]
    batch_size: usize,
    /// Learning rate of the top block, post-block layers and head.
    #[arg(long, default_value_t = FinetuneConfig::default().top_lr)]
    top_lr: f64,
    /// Per-block learning-rate decay towards the input.
    #[arg(long = "decay", default_value_t = FinetuneConfig::default().lr_decay)]
    lr_decay: f64,
    /// Learning-rate evolution over steps: constant or linear.
    #[arg(long, default_value_t = FinetuneConfig::default().lr_time.to_string())]
    lr_time: String,
    /// AdamW decoupled weight decay.
    #[arg(long, default_value_t = FinetuneConfig::default().adamw.weight_decay)]
    weight_decay: f64,
    /// Seed for shuffling, resampling, augmentation and head initialization.
    #[arg(long, default_value_t = FinetuneConfig::default().seed)]
    seed: u64,
    /// Augmentation policy, e.g. `flip:0.5,crop:0.5:0.8,color:0.5:0.2:0.2,blur:0.2:1`, or `none`.
    #[arg(long, default_value_t = FinetuneConfig::default().augment.to_string())]
    augment: String,
    /// Probability of augmenting records that are not flagged.
    #[arg(long, default_value_t = FinetuneConfig::default().augment_all_prob)]
    augment_all_prob: f64,
    /// ArcFace additive angular margin (radians).
    #[arg(long, default_value_t = FinetuneConfig::default().margin)]
    margin: f64,
    /// ArcFace logit scale.
    #[arg(long, default_value_t = FinetuneConfig::default().scale)]
    scale: f64,
    /// Validation images held out per class when the manifest has no val split.
    #[arg(long, default_value_t = FinetuneConfig::default().val_per_class)]
    val_per_class: usize,
    /// Augmented views per validation gallery entry.
    #[arg(long, default_value_t = FinetuneConfig::default().val_aug)]
    val_aug: usize,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    train: TrainArgs,
    /// Dataset manifest CSV (`image_ref,class_label,split,augment`).
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Comma-separated depths [default: powers of two up to the largest class].
    #[arg(long)]
    depths: Option<String>,
    /// Output file for the `depth,macro_accuracy` table [default: stdout].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct FinetuneArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    train: TrainArgs,
    /// Per-class depth after balancing, or `unbalanced`.
    #[arg(long, default_value_t = FinetuneConfig::default().depth.to_string())]
    depth: String,
    /// Dataset manifest CSV (`image_ref,class_label,split,augment`).
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Start from this encoder checkpoint instead of a fresh encoder.
    #[arg(long)]
    init: Option<PathBuf>,
    /// Checkpoint to write (also rewritten after every epoch).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Output file for the `epoch,loss,val_macro_acc` history [default: stdout].
    #[arg(long)]
    history: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EnrollArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Encoder checkpoint.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Gallery file; created when it does not exist.
    #[arg(long)]
    gallery: Option<PathBuf>,
    /// Product id for `--image`.
    #[arg(long)]
    id: Option<String>,
    /// Image to enroll under `--id`.
    #[arg(long)]
    image: Option<PathBuf>,
    /// Enroll one train image per class of this manifest instead.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Augmented views enrolled alongside each image.
    #[arg(long, default_value_t = EvalOptions::default().n_augmentations)]
    aug: usize,
    /// Seed for augmentation and image selection.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Image selection per class with `--manifest`: random or first.
    #[arg(long, default_value = "random")]
    selection: String,
}

#[derive(Args, Debug)]
struct ClassifyArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Encoder checkpoint.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Gallery file.
    #[arg(long)]
    gallery: Option<PathBuf>,
    /// Image to classify (repeatable).
    #[arg(long = "image", required = true)]
    images: Vec<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Encoder checkpoint.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Manifest supplying the enrolled images (its train split if it has one).
    #[arg(long)]
    train: Option<PathBuf>,
    /// Manifest of images to classify (its test split if it has one).
    #[arg(long)]
    test: Option<PathBuf>,
    /// Augmented views enrolled per class.
    #[arg(long, default_value_t = EvalOptions::default().n_augmentations)]
    aug: usize,
    /// Seed for image selection and augmentation.
    #[arg(long, default_value_t = EvalOptions::default().seed)]
    seed: u64,
    /// Image selection per class: random or first.
    #[arg(long, default_value = "random")]
    selection: String,
    /// Report format: text, csv or json-lines.
    #[arg(long, default_value = "text")]
    format: String,
    /// Most-confused class pairs listed in the report.
    #[arg(long, default_value_t = EvalOptions::default().top_confusions)]
    top_confusions: usize,
    /// Output file [default: stdout].
    #[arg(long)]
    out: Option<PathBuf>,
}

fn all_keys() -> Vec<&'static str> {
    ENCODER_KEYS.iter().chain(FINETUNE_KEYS).chain(RUN_KEYS).copied().collect()
}

/// Config file, then `--set`, then flags given on the command line. Flags
/// left at their defaults do not override the file.
fn resolve(matches: &ArgMatches, config: &ConfigArgs) -> Result<KvConfig> {
    let allowed = all_keys();
    let mut kv = match &config.config {
        Some(path) => KvConfig::read(path)?,
        None => KvConfig::new(),
    };
    kv.check_keys(&allowed)?;
    for pair in &config.set {
        let (key, value) = pair
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {pair:?}")))?;
        kv.set(key.trim(), value.trim());
    }
    kv.check_keys(&allowed)?;
    for id in matches.ids() {
        let id = id.as_str();
        let key = if id == "image_size" { "image_height" } else { id };
        if !allowed.contains(&key) || matches.value_source(id) != Some(ValueSource::CommandLine) {
            continue;
        }
        let Some(raw) = matches.get_raw(id) else { continue };
        let value = raw.map(|v| v.to_string_lossy().into_owned()).collect::<Vec<_>>().join(",");
        if id == "image_size" {
            kv.set("image_width", &value);
        }
        kv.set(key, value);
    }
    Ok(kv)
}

fn echo(kv: &KvConfig) {
    eprint!("# resolved configuration\n{}", kv.render());
}

fn required_path(kv: &KvConfig, key: &str) -> Result<PathBuf> {
    kv.get(key)
        .map(PathBuf::from)
        .ok_or_else(|| Error::Config(format!("missing --{key} (or `{key}` in the config file)")))
}

fn write_output(out: Option<&str>, text: &str) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| Error::io(Path::new(path), e)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn parse_selection(s: &str) -> Result<Selection> {
    match s {
        "random" => Ok(Selection::Random),
        "first" => Ok(Selection::First),
        other => Err(Error::Config(format!("unknown selection {other:?} (random, first)"))),
    }
}

/// Records of `split` when the manifest has any, otherwise all records.
fn select_split(manifest: DatasetManifest, split: Split) -> DatasetManifest {
    let part = manifest.split(split);
    if part.is_empty() {
        manifest
    } else {
        part
    }
}

fn load_encoder(kv: &KvConfig) -> Result<VitEncoder> {
    Ok(Checkpoint::load(&required_path(kv, "checkpoint")?)?.encoder)
}

fn run_schedule(kv: KvConfig) -> Result<()> {
    let blocks: usize = kv.parse_value("num_blocks")?.unwrap_or(EncoderConfig::default().num_blocks);
    let top_lr: f64 = kv.parse_value("top_lr")?.unwrap_or(FinetuneConfig::default().top_lr);
    let decay: f64 = kv.parse_value("lr_decay")?.unwrap_or(FinetuneConfig::default().lr_decay);
    let mut resolved = KvConfig::new();
    resolved.set("num_blocks", blocks);
    resolved.set("top_lr", top_lr);
    resolved.set("lr_decay", decay);
    echo(&resolved);
    let schedule = BlockLrSchedule::new(blocks, top_lr, decay)?;
    write_output(kv.get("out"), &schedule.to_csv())
}

fn run_init(kv: KvConfig) -> Result<()> {
    let config = EncoderConfig::from_kv(&kv)?;
    let out = required_path(&kv, "out")?;
    let mut resolved = config.to_kv();
    resolved.set("out", out.display());
    echo(&resolved);
    Checkpoint::new(VitEncoder::new(config)?).save(&out)
}

fn run_synth(kv: KvConfig) -> Result<()> {
    let d = SyntheticSpec::default();
    let spec = SyntheticSpec {
        num_classes: kv.parse_value("num_classes")?.unwrap_or(d.num_classes),
        min_class_size: kv.parse_value("min_class_size")?.unwrap_or(d.min_class_size),
        max_class_size: kv.parse_value("max_class_size")?.unwrap_or(d.max_class_size),
        test_per_class: kv.parse_value("test_per_class")?.unwrap_or(d.test_per_class),
        seed: kv.parse_value("seed")?.unwrap_or(d.seed),
        ..d
    };
    let out = required_path(&kv, "out")?;
    let mut resolved = KvConfig::new();
    resolved.set("num_classes", spec.num_classes);
    resolved.set("min_class_size", spec.min_class_size);
    resolved.set("max_class_size", spec.max_class_size);
    resolved.set("test_per_class", spec.test_per_class);
    resolved.set("seed", spec.seed);
    resolved.set("out", out.display());
    echo(&resolved);
    let manifest = generate(&out, &spec)?;
    eprintln!("wrote {} images and {}", manifest.len(), out.join("manifest.csv").display());
    Ok(())
}

/// Train and validation manifests: the manifest's own val split when it has
/// one, otherwise images held out from train.
fn train_val(kv: &KvConfig, config: &FinetuneConfig) -> Result<(DatasetManifest, DatasetManifest)> {
    let manifest = DatasetManifest::read(&required_path(kv, "manifest")?)?;
    let train = manifest.split(Split::Train);
    if train.is_empty() {
        return Err(Error::Data("manifest has no train records".into()));
    }
    let val = manifest.split(Split::Val);
    if !val.is_empty() {
        return Ok((train, val));
    }
    let split = make_validation_split(&train, config.val_per_class, config.seed)?;
    for w in &split.warnings {
        eprintln!("warning: {w}");
    }
    Ok((split.train, split.val))
}

fn run_sweep(kv: KvConfig) -> Result<()> {
    let encoder_config = EncoderConfig::from_kv(&kv)?;
    let config = FinetuneConfig::from_kv(&kv)?;
    let (train, val) = train_val(&kv, &config)?;
    let depths: Vec<usize> = match kv.get("depths") {
        Some(v) => parse_list("depths", v)?,
        None => default_depth_grid(train.class_counts().into_values().max().unwrap_or(1)),
    };
    let mut resolved = encoder_config.to_kv();
    config.write_kv(&mut resolved);
    resolved.set("manifest", kv.get("manifest").unwrap_or_default());
    resolved.set("depths", shelfid::kvconfig::join_list(&depths));
    echo(&resolved);
    let result = sweep_depth(&encoder_config, &train, &val, &config, &depths)?;
    eprintln!("best depth: {}", result.best_depth);
    write_output(kv.get("out"), &result.to_csv())
}

fn run_finetune(kv: KvConfig) -> Result<()> {
    let mut config = FinetuneConfig::from_kv(&kv)?;
    let out = required_path(&kv, "out")?;
    let mut encoder = match kv.get("init") {
        Some(path) => Checkpoint::load(Path::new(path))?.encoder,
        None => VitEncoder::new(EncoderConfig::from_kv(&kv)?)?,
    };
    let (train, val) = train_val(&kv, &config)?;
    let mut resolved = encoder.config().to_kv();
    config.write_kv(&mut resolved);
    for key in ["manifest", "init", "out", "history"] {
        if let Some(v) = kv.get(key) {
            resolved.set(key, v);
        }
    }
    echo(&resolved);
    config.checkpoint_path = Some(out.clone());
    let labels = train.class_labels();
    let mut head = ArcFaceHead::new(encoder.embed_dim(), labels.len(), config.margin, config.scale, config.seed)?;
    let history = finetune(&mut encoder, &mut head, &train, Some(&val), &config)?;
    Checkpoint::with_head(encoder, head, labels)?.save(&out)?;
    write_output(kv.get("history"), &history.to_csv())
}

fn run_enroll(kv: KvConfig) -> Result<()> {
    let encoder = load_encoder(&kv)?;
    let gallery_path = required_path(&kv, "gallery")?;
    let aug: usize = kv.parse_value("aug")?.unwrap_or(EvalOptions::default().n_augmentations);
    let seed: u64 = kv.parse_value("seed")?.unwrap_or(0);
    let selection = parse_selection(kv.get("selection").unwrap_or("random"))?;
    echo(&kv);
    let mut gallery = if gallery_path.exists() {
        Gallery::load(&gallery_path)?
    } else {
        Gallery::new(encoder.embed_dim())
    };
    match (kv.get("manifest"), kv.get("id"), kv.get("image")) {
        (Some(manifest), None, None) => {
            let train = select_split(DatasetManifest::read(Path::new(manifest))?, Split::Train);
            let options = EvalOptions { n_augmentations: aug, seed, selection, ..Default::default() };
            let mut cache = ImageCache::new(encoder.input_shape());
            let added = build_gallery(&encoder, &train, &mut cache, &options)?;
            for id in added.product_ids() {
                let embs: Vec<_> = added
                    .embeddings(id)
                    .unwrap_or_default()
                    .iter()
                    .map(|e| shelfid::EmbeddingVector::new(e.iter().map(|&v| v as f64).collect()))
                    .collect::<Result<_>>()?;
                gallery.enroll_embeddings(id, &embs)?;
            }
        }
        (None, Some(id), Some(image)) => {
            let (h, w, c) = encoder.input_shape();
            let image = load_image(Path::new(image), h, w, c)?;
            gallery.enroll(id, &image, &encoder, &AugmentationPolicy::enrollment_default(), aug, seed)?;
        }
        _ => return Err(Error::Config("enroll needs either --id and --image, or --manifest".into())),
    }
    gallery.save(&gallery_path)?;
    eprintln!("gallery {} now holds {} products", gallery_path.display(), gallery.len());
    Ok(())
}

fn run_classify(kv: KvConfig, images: &[PathBuf]) -> Result<()> {
    echo(&kv);
    let gallery = Gallery::load(&required_path(&kv, "gallery")?)?;
    let encoder = load_encoder(&kv)?;
    let (h, w, c) = encoder.input_shape();
    let mut out = String::new();
    for path in images {
        let m = gallery.classify(&load_image(path, h, w, c)?, &encoder)?;
        out.push_str(&format!("{}\t{}\n", m.product_id, m.score));
    }
    write_output(None, &out)
}

fn run_eval(kv: KvConfig) -> Result<()> {
    let d = EvalOptions::default();
    let options = EvalOptions {
        n_augmentations: kv.parse_value("aug")?.unwrap_or(d.n_augmentations),
        seed: kv.parse_value("seed")?.unwrap_or(d.seed),
        selection: parse_selection(kv.get("selection").unwrap_or("random"))?,
        top_confusions: kv.parse_value("top_confusions")?.unwrap_or(d.top_confusions),
        ..d
    };
    let format: ReportFormat = kv.get("format").unwrap_or("text").parse()?;
    let train_path = required_path(&kv, "train")?;
    let test_path = required_path(&kv, "test")?;
    echo(&kv);
    let encoder = load_encoder(&kv)?;
    let train = select_split(DatasetManifest::read(&train_path)?, Split::Train);
    let test = select_split(DatasetManifest::read(&test_path)?, Split::Test);
    let report = zero_shot_eval(&encoder, &train, &test, &options)?;
    write_output(kv.get("out"), &render_report(&report, format))
}

fn execute(command: Command, sub: &ArgMatches) -> Result<()> {
    match command {
        Command::Schedule(a) => run_schedule(resolve(sub, &a.config)?),
        Command::Init(a) => run_init(resolve(sub, &a.config)?),
        Command::Synth(a) => run_synth(resolve(sub, &a.config)?),
        Command::SweepDepth(a) => run_sweep(resolve(sub, &a.config)?),
        Command::Finetune(a) => run_finetune(resolve(sub, &a.config)?),
        Command::Enroll(a) => run_enroll(resolve(sub, &a.config)?),
        Command::Classify(a) => run_classify(resolve(sub, &a.config)?, &a.images),
        Command::Eval(a) => run_eval(resolve(sub, &a.config)?),
    }
}

fn dispatch(matches: &ArgMatches) -> Result<()> {
    let (name, sub) = matches.subcommand().expect("subcommand required");
    Command::from_arg_matches(matches)
        .map_err(|e| Error::Config(e.to_string()))
        .and_then(|command| execute(command, sub))
        .inspect_err(|e| eprintln!("shelfid {name}: {e}"))
}

fn run(args: impl IntoIterator<Item = OsString>) -> ExitCode {
    let matches = match Cli::command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match dispatch(&matches) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is_usage() => ExitCode::from(1),
        Err(_) => ExitCode::from(2),
    }
}

fn main() -> ExitCode {
    run(std::env::args_os())
}
