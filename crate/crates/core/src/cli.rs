//! Command-line front end. Exit codes: 0 success, 1 usage error, 2 data
//! error, 3 diverged training.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::checkpoint::{load_checkpoint, save_checkpoint, TrainingMetadata};
use crate::data::{
    augment_with_rotations, generate_synthetic_scene, load_dataset, load_image_dir, parse_geotags, write_dataset,
    AnnotatedImage, Geotag, SyntheticSceneSpec,
};
use crate::detections::{DetectionRecord, DetectionsFile};
use crate::eval::{mean_test_iou, severity_distribution, side_by_side};
use crate::geo::{geolocate, meters_to_degrees, CameraModel};
use crate::inventory::{
    aggregate_segments, export_report, parse_segments, segments_geojson, ReportFormat, Segment,
    DEFAULT_CUTOFF_M,
};
use crate::model::{build_network, NetworkConfig};
use crate::train::{history_csv, split_dataset, train, TrainConfig, TrainError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;

/// Survey origin used for synthetic geotags.
const SYNTH_ORIGIN: (f64, f64) = (4.61600, -74.10096);
const SYNTH_ALTITUDE_M: f64 = 12.0;
/// Along-road distance between consecutive synthetic frames.
const SYNTH_SPACING_M: f64 = 20.0;
const DEFAULT_FOV_DEG: f64 = 77.0;

#[derive(Debug, Parser)]
#[command(name = "rdiv", version, about = "Pothole detection and road inventory from aerial images")]
struct Cli {
    /// Seed for every random choice.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    /// Only log errors.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic geotagged dataset plus a road map.
    Synth(SynthArgs),
    /// Train a detector on the training split of a dataset.
    Train(TrainArgs),
    /// Detect potholes in a directory of images.
    Infer(InferArgs),
    /// Mean test IOU and severity histograms on the held-out split.
    Eval(EvalArgs),
    /// Geolocate detections and aggregate them per road segment.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    count: usize,
    /// At most one pothole per grid cell, with a free cell between any two.
    #[arg(long)]
    separable: bool,
    #[arg(long, default_value_t = 112, value_parser = clap::value_parser!(u32).range(8..))]
    size: u32,
    /// Add this many rotated copies of randomly chosen scenes.
    #[arg(long, default_value_t = 0)]
    rotations: usize,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 2000, value_parser = clap::value_parser!(u64).range(1..))]
    steps: u64,
    #[arg(long, default_value_t = 0.01, value_parser = learning_rate)]
    lr: f64,
    #[arg(long, default_value_t = 8, value_parser = clap::value_parser!(u64).range(1..))]
    batch: u64,
    #[arg(long, default_value_t = 0.8, value_parser = open_unit)]
    split: f64,
    /// Write the per-step loss as `step,loss` CSV.
    #[arg(long)]
    history: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct InferArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    images: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.5, value_parser = closed_unit)]
    conf: f64,
    #[arg(long, default_value_t = 0.45, value_parser = closed_unit)]
    nms: f64,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 0.8, value_parser = open_unit)]
    split: f64,
    #[arg(long, default_value_t = 0.5, value_parser = closed_unit)]
    conf: f64,
    #[arg(long, default_value_t = 0.45, value_parser = closed_unit)]
    nms: f64,
    /// Also write the results as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    #[arg(long)]
    dets: PathBuf,
    #[arg(long)]
    geotags: PathBuf,
    #[arg(long)]
    segments: PathBuf,
    /// `.csv` selects the CSV table, anything else GeoJSON.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "1,2,4", value_parser = severity_weights)]
    weights: [f64; 3],
    /// Detections farther than this from every segment stay unassigned.
    #[arg(long, default_value_t = DEFAULT_CUTOFF_M, value_parser = non_negative)]
    cutoff: f64,
    /// Horizontal field of view of the camera in degrees.
    #[arg(long, default_value_t = DEFAULT_FOV_DEG)]
    fov: f64,
    #[arg(long, default_value_t = 112)]
    image_width: u32,
    #[arg(long, default_value_t = 112)]
    image_height: u32,
}

fn parse_f64(s: &str) -> Result<f64, String> {
    s.trim().parse::<f64>().map_err(|e| format!("{s:?}: {e}"))
}

fn learning_rate(s: &str) -> Result<f64, String> {
    let v = parse_f64(s)?;
    if v.is_finite() && v >= 0.0 {
        Ok(v)
    } else {
        Err(format!("learning rate must be finite and non-negative, got {s}"))
    }
}

fn open_unit(s: &str) -> Result<f64, String> {
    let v = parse_f64(s)?;
    if v > 0.0 && v < 1.0 {
        Ok(v)
    } else {
        Err(format!("{s} must lie strictly between 0 and 1"))
    }
}

fn closed_unit(s: &str) -> Result<f64, String> {
    let v = parse_f64(s)?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("{s} must lie in [0, 1]"))
    }
}

fn non_negative(s: &str) -> Result<f64, String> {
    let v = parse_f64(s)?;
    if v.is_finite() && v >= 0.0 {
        Ok(v)
    } else {
        Err(format!("{s} must be finite and non-negative"))
    }
}

fn severity_weights(s: &str) -> Result<[f64; 3], String> {
    let parts: Vec<f64> = s.split(',').map(non_negative).collect::<Result<_, _>>()?;
    parts
        .try_into()
        .map_err(|_| format!("expected three comma-separated weights, got {s:?}"))
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Data(String),
    Diverged(String),
}

impl Failure {
    fn data(e: impl std::fmt::Display) -> Self {
        Failure::Data(e.to_string())
    }

    fn code(&self) -> i32 {
        match self {
            Failure::Usage(_) => EXIT_USAGE,
            Failure::Data(_) => EXIT_DATA,
            Failure::Diverged(_) => EXIT_DIVERGED,
        }
    }
}

impl From<TrainError> for Failure {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Diverged { .. } => Failure::Diverged(e.to_string()),
            TrainError::Config(_) => Failure::Usage(e.to_string()),
            other => Failure::Data(other.to_string()),
        }
    }
}

fn init_logging(verbose: u8, quiet: bool) {
    let level = match (quiet, verbose) {
        (true, _) => log::LevelFilter::Error,
        (false, 0) => log::LevelFilter::Info,
        (false, 1) => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .try_init();
}

/// Parses `args` (program name first) and runs the chosen verb.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    init_logging(cli.verbose, cli.quiet);
    let seed = cli.seed;
    let result = match cli.command {
        Command::Synth(a) => synth(a, seed),
        Command::Train(a) => train_cmd(a, seed),
        Command::Infer(a) => infer(a),
        Command::Eval(a) => eval(a, seed),
        Command::Report(a) => report(a),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(f) => {
            let msg = match &f {
                Failure::Usage(m) | Failure::Data(m) | Failure::Diverged(m) => m,
            };
            eprintln!("error: {msg}");
            f.code()
        }
    }
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), Failure> {
    fs::write(path, bytes).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

/// Frame positions along an L-shaped road: eastwards from the origin for
/// the first half, then northwards. Returns geotags and the two centrelines.
fn synthetic_route(count: usize) -> (Vec<Geotag>, Vec<Segment>) {
    let (lat0, lon0) = SYNTH_ORIGIN;
    let east_frames = count.div_ceil(2).max(1);
    let at = |north_m: f64, east_m: f64| {
        let (dlat, dlon) = meters_to_degrees(lat0, north_m, east_m);
        (lat0 + dlat, lon0 + dlon)
    };
    let tags = (0..count)
        .map(|i| {
            let (north, east) = if i < east_frames {
                (0.0, i as f64 * SYNTH_SPACING_M)
            } else {
                ((i + 1 - east_frames) as f64 * SYNTH_SPACING_M, (east_frames - 1) as f64 * SYNTH_SPACING_M)
            };
            let (lat, lon) = at(north, east);
            Geotag {
                lat,
                lon,
                alt_m: SYNTH_ALTITUDE_M,
            }
        })
        .collect();
    let corner_east = (east_frames - 1) as f64 * SYNTH_SPACING_M;
    let north_end = (count - east_frames.min(count)) as f64 * SYNTH_SPACING_M + SYNTH_SPACING_M / 2.0;
    let segments = vec![
        Segment {
            id: "road-a".into(),
            points: vec![at(0.0, -SYNTH_SPACING_M / 2.0), at(0.0, corner_east)],
        },
        Segment {
            id: "road-b".into(),
            points: vec![at(0.0, corner_east), at(north_end, corner_east)],
        },
    ];
    (tags, segments)
}

fn synth(a: SynthArgs, seed: u64) -> Result<(), Failure> {
    if a.count == 0 {
        return Err(Failure::Usage("--count must be at least 1".into()));
    }
    let spec = SyntheticSceneSpec {
        image_size: a.size as usize,
        separable: a.separable,
        ..SyntheticSceneSpec::default()
    };
    spec.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let (tags, segments) = synthetic_route(a.count);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut images = Vec::with_capacity(a.count + a.rotations);
    for (i, tag) in tags.into_iter().enumerate() {
        let mut scene = generate_synthetic_scene(&spec, rng.gen()).map_err(Failure::data)?;
        scene.source_id = format!("img_{i:04}");
        scene.geotag = Some(tag);
        images.push(scene);
    }
    if a.rotations > 0 {
        let rotated = augment_with_rotations(&images, a.rotations, rng.gen());
        images.extend(rotated);
    }
    write_dataset(&a.out, &images).map_err(Failure::data)?;
    write_file(&a.out.join("segments.geojson"), segments_geojson(&segments))?;
    log::info!("wrote {} image(s) to {}", images.len(), a.out.display());
    Ok(())
}

fn train_cmd(a: TrainArgs, seed: u64) -> Result<(), Failure> {
    let config = NetworkConfig::default();
    let loaded = load_dataset(&a.data, config.input_size).map_err(Failure::data)?;
    let (train_set, test_set) = split_dataset(&loaded.images, a.split, seed)?;
    log::info!("train={} test={}", train_set.len(), test_set.len());
    let model = build_network(config, seed).map_err(Failure::data)?;
    let tc = TrainConfig {
        learning_rate: a.lr,
        steps: a.steps as usize,
        batch_size: a.batch as usize,
        seed,
        split_ratio: a.split,
        ..TrainConfig::default()
    };
    let (model, history) = train(model, &train_set, &tc)?;
    let meta = TrainingMetadata {
        steps: history.len() as u64,
        final_loss: *history.last().expect("at least one step"),
        seed,
    };
    save_checkpoint(&model, meta, &a.out).map_err(Failure::data)?;
    if let Some(path) = &a.history {
        write_file(path, history_csv(&history))?;
    }
    log::info!("saved {} (final loss {:.6})", a.out.display(), meta.final_loss);
    Ok(())
}

fn infer(a: InferArgs) -> Result<(), Failure> {
    let ckpt = load_checkpoint(&a.model).map_err(Failure::data)?;
    let model = ckpt.model;
    let loaded = load_image_dir(&a.images, model.config().input_size).map_err(Failure::data)?;
    let mut file = DetectionsFile::new(a.conf, a.nms);
    for img in &loaded.images {
        let dets = model.detect(&img.pixels, a.conf, a.nms).map_err(Failure::data)?;
        log::debug!("{}: {} detection(s)", img.source_id, dets.len());
        file.images.push(img.source_id.clone());
        file.detections
            .extend(dets.iter().map(|d| DetectionRecord::new(&img.source_id, d)));
    }
    file.save(&a.out).map_err(Failure::data)?;
    log::info!("{} detection(s) in {} image(s)", file.detections.len(), file.images.len());
    Ok(())
}

fn eval(a: EvalArgs, seed: u64) -> Result<(), Failure> {
    let ckpt = load_checkpoint(&a.model).map_err(Failure::data)?;
    let model = ckpt.model;
    let loaded = load_dataset(&a.data, model.config().input_size).map_err(Failure::data)?;
    let (train_set, test_set): (Vec<AnnotatedImage>, Vec<AnnotatedImage>) =
        split_dataset(&loaded.images, a.split, seed)?;
    log::info!("train={} test={}", train_set.len(), test_set.len());

    let mut predictions = Vec::with_capacity(test_set.len());
    let mut predicted_categories = Vec::new();
    for img in &test_set {
        let dets = model.detect(&img.pixels, a.conf, a.nms).map_err(Failure::data)?;
        predicted_categories.extend(dets.iter().map(|d| d.category));
        predictions.push(dets.iter().map(|d| d.bbox).collect::<Vec<_>>());
    }
    let truths: Vec<Vec<_>> = test_set.iter().map(|i| i.labels.iter().map(|l| l.bbox).collect()).collect();
    let miou = mean_test_iou(&predictions, &truths).map_err(Failure::data)?;
    let train_hist = severity_distribution(train_set.iter().flat_map(|i| i.labels.iter().map(|l| l.category)));
    let test_hist = severity_distribution(predicted_categories);

    println!("mean test IOU: {miou:.4}");
    print!("{}", side_by_side("train labels", &train_hist, "test predictions", &test_hist));
    if let Some(path) = &a.out {
        let doc = json!({
            "train": train_set.len(),
            "test": test_set.len(),
            "mean_test_iou": miou,
            "train_labels": train_hist,
            "test_predictions": test_hist,
        });
        let mut text = serde_json::to_string_pretty(&doc).expect("JSON values serialize");
        text.push('\n');
        write_file(path, text)?;
    }
    Ok(())
}

fn report(a: ReportArgs) -> Result<(), Failure> {
    let cam = CameraModel::new(a.fov, a.image_width, a.image_height).map_err(|e| Failure::Usage(e.to_string()))?;
    let dets = DetectionsFile::load(&a.dets).map_err(Failure::data)?;
    let geotag_text =
        fs::read_to_string(&a.geotags).map_err(|e| Failure::Data(format!("{}: {e}", a.geotags.display())))?;
    let geotags = parse_geotags(&geotag_text, &a.geotags).map_err(Failure::data)?;
    let segment_text =
        fs::read_to_string(&a.segments).map_err(|e| Failure::Data(format!("{}: {e}", a.segments.display())))?;
    let segments = parse_segments(&segment_text).map_err(Failure::data)?;

    let mut located = Vec::with_capacity(dets.detections.len());
    let mut ungeoreferenced = 0;
    for rec in &dets.detections {
        match geolocate(&rec.detection(), geotags.get(&rec.image).copied(), &cam, &rec.image) {
            Ok(g) => located.push(g),
            Err(e) => {
                log::warn!("{e}");
                ungeoreferenced += 1;
            }
        }
    }
    let inventory = aggregate_segments(&located, &segments, a.weights, a.cutoff).map_err(Failure::data)?;
    export_report(&inventory, &located, ReportFormat::from_path(&a.out), &a.out).map_err(Failure::data)?;
    log::info!(
        "{} detection(s) geolocated, {} without geotag, {} farther than {} m from any road",
        located.len(),
        ungeoreferenced,
        inventory.unassigned,
        a.cutoff
    );
    Ok(())
}
