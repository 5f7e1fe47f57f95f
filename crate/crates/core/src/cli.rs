//! The `mudiknn` command line.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure
//! (non-finite loss or a failed gradient check). Diagnostics go to stderr;
//! results go to the `--out` files and a short summary to stdout.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::annotations::{dataset_stats, load_annotations, AnnotationSet};
use crate::labelmaps::{
    export_png, generate, pool_map, read_lmap, write_lmap, MapConfig, MapKind, PngScale, SigmaMode, NATIVE_RESOLUTION,
};
use crate::model::{check_model_gradients, BackboneConfig, ModelConfig, ModelGradCheck, MudModel, Precision};
use crate::synthetic::{generate_dataset, generate_split, SceneConfig};
use crate::train::{
    ablation_sweep, evaluate, history_csv, load_dataset, load_split, method_name, metrics_csv, sweep_csv, train,
    SweepAxis, TrainConfig, TrainError, DEFAULT_STEP,
};

#[derive(Debug, Parser)]
#[command(name = "mudiknn", version, about = "Crowd-count label maps and a multi-scale counting network")]
pub struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Rasterize an annotation file into an LMAP label map.
    GenMap(GenMapArgs),
    /// Render an LMAP file as a grayscale PNG.
    Viz(VizArgs),
    /// Print dataset statistics for a directory of image/CSV pairs.
    Stats(StatsArgs),
    /// Generate a seeded synthetic dataset.
    Synth(SynthArgs),
    /// Train a model on a dataset directory.
    Train(TrainArgs),
    /// Evaluate a checkpoint with sliding-window inference.
    Eval(EvalArgs),
    /// Train and evaluate one model per value of a label parameter.
    Sweep(SweepArgs),
    /// Finite-difference check of the full training loss.
    GradCheck(GradCheckArgs),
}

#[derive(Debug, Args)]
pub struct LabelArgs {
    /// Label map kind: density, knn or iknn.
    #[arg(long, default_value = "iknn")]
    pub kind: MapKind,
    /// Neighbor count for knn and iknn maps.
    #[arg(long, default_value_t = 1)]
    pub k: usize,
    /// Density kernel scale relative to the adaptive sigma.
    #[arg(long, default_value_t = 0.3)]
    pub beta: f64,
    /// Density sigma rule: adaptive:K or fixed:S.
    #[arg(long, default_value = "adaptive:3")]
    pub sigma_mode: SigmaMode,
    /// Label resolution per 224-pixel patch side.
    #[arg(long, default_value_t = 224, value_parser = parse_resolution)]
    pub resolution: usize,
}

impl LabelArgs {
    fn map_config(&self) -> MapConfig {
        MapConfig {
            k: self.k,
            beta: self.beta,
            sigma_mode: self.sigma_mode,
            label_resolution: self.resolution,
        }
    }
}

fn parse_resolution(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(r @ (28 | 56 | 112 | 224)) => Ok(r),
        _ => Err(format!("`{s}` is not one of 28, 56, 112, 224")),
    }
}

#[derive(Debug, Args)]
pub struct GenMapArgs {
    #[command(flatten)]
    pub label: LabelArgs,
    /// Image whose size the map takes (PNG).
    #[arg(long)]
    pub image: PathBuf,
    /// Head annotations (CSV with x,y rows).
    #[arg(long)]
    pub heads: PathBuf,
    /// Output LMAP path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct VizArgs {
    /// LMAP file to render.
    #[arg(long)]
    pub map: PathBuf,
    /// Intensity scale: linear or log.
    #[arg(long, default_value = "linear")]
    pub scale: PngScale,
    /// Output PNG path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    /// Dataset directory; `train/` and `test/` subdirectories are included.
    #[arg(long)]
    pub data: PathBuf,
    /// Also write the statistics as key = value lines to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Number of scenes (training scenes when --test is given).
    #[arg(long, default_value_t = 200)]
    pub scenes: usize,
    /// Also write this many test scenes; scenes then go to train/ and test/.
    #[arg(long)]
    pub test: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 224)]
    pub width: usize,
    #[arg(long, default_value_t = 224)]
    pub height: usize,
    #[arg(long, default_value_t = 5)]
    pub count_min: usize,
    #[arg(long, default_value_t = 50)]
    pub count_max: usize,
    /// Gaussian pixel-noise standard deviation.
    #[arg(long, default_value_t = 0.05)]
    pub noise: f64,
}

#[derive(Debug, Args)]
pub struct OptimArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    /// Patches per optimizer step.
    #[arg(long, default_value_t = 8)]
    pub batch: usize,
    /// Adam learning rate.
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    /// Training patch side (multiple of 32).
    #[arg(long, default_value_t = 224)]
    pub patch: usize,
    /// Use the wide densely connected backbone.
    #[arg(long)]
    pub paper_scale: bool,
}

impl OptimArgs {
    fn train_config(&self, label: &LabelArgs) -> TrainConfig {
        let backbone = if self.paper_scale {
            BackboneConfig::paper_scale()
        } else {
            BackboneConfig::default()
        };
        let mut map = label.map_config();
        // The label resolution is quoted per 224-pixel patch.
        map.label_resolution = label.resolution * self.patch / NATIVE_RESOLUTION;
        TrainConfig {
            kind: label.kind,
            map,
            epochs: self.epochs,
            batch_size: self.batch,
            learning_rate: self.lr,
            seed: self.seed,
            model: ModelConfig {
                backbone,
                patch: self.patch,
                seed: self.seed,
                ..Default::default()
            },
            init_count_bias: true,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub label: LabelArgs,
    #[command(flatten)]
    pub optim: OptimArgs,
    /// Dataset directory (train/ subdirectory, or the first 80% of images).
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint path; the model config is written next to it as <out>.cfg.
    #[arg(long)]
    pub out: PathBuf,
    /// Loss history CSV (default: <out>.history.csv).
    #[arg(long)]
    pub history: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint written by `train`.
    #[arg(long)]
    pub model: PathBuf,
    /// Dataset directory (test/ subdirectory, or the last 20% of images).
    #[arg(long)]
    pub data: PathBuf,
    /// Evaluate every image in --data instead of the test split.
    #[arg(long)]
    pub all: bool,
    /// Sliding-window step.
    #[arg(long, default_value_t = DEFAULT_STEP)]
    pub step: usize,
    /// Method label in the CSV.
    #[arg(long, default_value = "MUD")]
    pub method: String,
    /// Metrics CSV (method,mae,nae,rmse).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub label: LabelArgs,
    #[command(flatten)]
    pub optim: OptimArgs,
    /// Parameter to vary: beta, k or resolution.
    #[arg(long)]
    pub axis: SweepAxis,
    /// Comma-separated values.
    #[arg(long, value_delimiter = ',', required = true)]
    pub values: Vec<f64>,
    /// Comma-separated seeds; each value is trained once per seed and the
    /// table reports per-metric medians.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = DEFAULT_STEP)]
    pub step: usize,
    /// Table CSV (method,mae,nae,rmse).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GradCheckArgs {
    /// Arithmetic: 64, or 32 (checked against 64-bit differences).
    #[arg(long, default_value = "64")]
    pub precision: Precision,
    /// Share of parameters checked.
    #[arg(long, default_value_t = 0.01)]
    pub fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Patch side of the checked network (multiple of 32).
    #[arg(long, default_value_t = 224)]
    pub patch: usize,
    /// Also write the report as key = value lines to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// A failed command and its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn data(e: impl std::fmt::Display) -> Self {
        Self {
            code: 2,
            message: e.to_string(),
        }
    }

    fn numeric(e: impl std::fmt::Display) -> Self {
        Self {
            code: 3,
            message: e.to_string(),
        }
    }
}

impl From<TrainError> for Failure {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::NonFinite { .. } => Self::numeric(e),
            other => Self::data(other),
        }
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| Failure::data(format!("{}: {e}", path.display())))
}

fn gen_map(a: &GenMapArgs) -> Result<(), Failure> {
    let (w, h) = image::image_dimensions(&a.image).map_err(|e| Failure::data(format!("{}: {e}", a.image.display())))?;
    let ann = load_annotations(&a.heads, w as usize, h as usize).map_err(Failure::data)?;
    let cfg = a.label.map_config();
    cfg.validate().map_err(Failure::data)?;
    let mut map = generate(&ann, a.label.kind, &cfg).map_err(Failure::data)?;
    if cfg.label_resolution < NATIVE_RESOLUTION {
        map = pool_map(&map, NATIVE_RESOLUTION / cfg.label_resolution, a.label.kind.pool_mode()).map_err(Failure::data)?;
    }
    let file = File::create(&a.out).map_err(|e| Failure::data(format!("{}: {e}", a.out.display())))?;
    write_lmap(&map, &mut BufWriter::new(file)).map_err(Failure::data)?;
    println!("{} map {}x{}, sum {:.6}", map.kind(), map.width(), map.height(), map.sum());
    Ok(())
}

fn viz(a: &VizArgs) -> Result<(), Failure> {
    let file = File::open(&a.map).map_err(|e| Failure::data(format!("{}: {e}", a.map.display())))?;
    let map = read_lmap(&mut std::io::BufReader::new(file)).map_err(Failure::data)?;
    export_png(&map, &a.out, a.scale).map_err(Failure::data)
}

fn stats(a: &StatsArgs) -> Result<(), Failure> {
    let mut dirs = vec![a.data.clone()];
    dirs.extend(["train", "test"].map(|d| a.data.join(d)).into_iter().filter(|d| d.is_dir()));
    let mut csvs = Vec::new();
    for dir in &dirs {
        let entries = fs::read_dir(dir).map_err(|e| Failure::data(format!("{}: {e}", dir.display())))?;
        csvs.extend(
            entries
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "csv")),
        );
    }
    csvs.sort();
    let mut sets: Vec<AnnotationSet> = Vec::new();
    for csv in &csvs {
        let png = csv.with_extension("png");
        if !png.exists() {
            continue;
        }
        let (w, h) = image::image_dimensions(&png).map_err(|e| Failure::data(format!("{}: {e}", png.display())))?;
        sets.push(load_annotations(csv, w as usize, h as usize).map_err(Failure::data)?);
    }
    let s = dataset_stats(&sets).map_err(Failure::data)?;
    let text = format!(
        "images = {}\ntotal_count = {}\nmean_count = {:.4}\nmax_count = {}\naverage_height = {:.2}\naverage_width = {:.2}\n",
        s.images, s.total_count, s.mean_count, s.max_count, s.average_resolution.0, s.average_resolution.1
    );
    print!("{text}");
    if let Some(out) = &a.out {
        write_file(out, &text)?;
    }
    Ok(())
}

fn synth(a: &SynthArgs) -> Result<(), Failure> {
    let cfg = SceneConfig {
        seed: a.seed,
        width: a.width,
        height: a.height,
        count_range: (a.count_min, a.count_max),
        noise: a.noise,
        ..Default::default()
    };
    match a.test {
        Some(n_test) => {
            let (tr, te) = generate_split(&a.out, &cfg, a.scenes, n_test).map_err(Failure::data)?;
            println!(
                "wrote {} train scenes ({} heads) and {} test scenes ({} heads)",
                tr.counts.len(),
                tr.total_count,
                te.counts.len(),
                te.total_count
            );
        }
        None => {
            let s = generate_dataset(&a.out, &cfg, a.scenes).map_err(Failure::data)?;
            println!("wrote {} scenes ({} heads)", s.counts.len(), s.total_count);
        }
    }
    Ok(())
}

fn run_train(a: &TrainArgs) -> Result<(), Failure> {
    let cfg = a.optim.train_config(&a.label);
    let (train_set, _) = load_split(&a.data)?;
    let out = train(&train_set, &cfg)?;
    out.model.save(&a.out).map_err(Failure::data)?;
    let history = a.history.clone().unwrap_or_else(|| {
        let mut s = a.out.clone().into_os_string();
        s.push(".history.csv");
        PathBuf::from(s)
    });
    write_file(&history, &history_csv(&out.history))?;
    if let Some(last) = out.history.last() {
        println!("{}: final L = {:.6}", method_name(&cfg), last.total);
    }
    Ok(())
}

fn run_eval(a: &EvalArgs) -> Result<(), Failure> {
    let model = MudModel::<f32>::load(&a.model).map_err(Failure::data)?;
    let samples = if a.all { load_dataset(&a.data)? } else { load_split(&a.data)?.1 };
    let report = evaluate(&model, &samples, a.step)?;
    let csv = metrics_csv([(a.method.as_str(), &report)]);
    write_file(&a.out, &csv)?;
    print!("{csv}");
    if report.nae_excluded > 0 {
        eprintln!("note: {} images with zero count left out of NAE", report.nae_excluded);
    }
    Ok(())
}

fn run_sweep(a: &SweepArgs) -> Result<(), Failure> {
    let base = a.optim.train_config(&a.label);
    let (train_set, test_set) = load_split(&a.data)?;
    let seeds = a.seeds.clone().unwrap_or_else(|| vec![a.optim.seed]);
    // Resolutions are quoted per 224-pixel patch, like --resolution.
    let values: Vec<f64> = if a.axis == SweepAxis::Resolution {
        a.values.iter().map(|v| v * a.optim.patch as f64 / NATIVE_RESOLUTION as f64).collect()
    } else {
        a.values.clone()
    };
    let rows = ablation_sweep(&train_set, &test_set, &base, a.axis, &values, &seeds, a.step)?;
    let csv = sweep_csv(&rows);
    write_file(&a.out, &csv)?;
    print!("{csv}");
    Ok(())
}

fn grad_check(a: &GradCheckArgs) -> Result<(), Failure> {
    let check = ModelGradCheck {
        model: ModelConfig {
            patch: a.patch,
            ..Default::default()
        },
        precision: a.precision,
        fraction: a.fraction,
        seed: a.seed,
        ..Default::default()
    };
    let report = check_model_gradients(&check).map_err(Failure::data)?;
    let tol = a.precision.tolerance();
    let pass = report.max_rel_error < tol;
    let text = format!(
        "precision = {}\nchecked = {}\nkinked = {}\nmax_rel_error = {:e}\ntolerance = {:e}\npass = {}\n",
        a.precision, report.checked, report.kinked, report.max_rel_error, tol, pass
    );
    print!("{text}");
    if let Some(out) = &a.out {
        write_file(out, &text)?;
    }
    if pass {
        Ok(())
    } else {
        Err(Failure::numeric(format!(
            "gradient check failed: relative error {:e} at {:?}",
            report.max_rel_error, report.worst
        )))
    }
}

fn dispatch(cli: &Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::GenMap(a) => gen_map(a),
        Command::Viz(a) => viz(a),
        Command::Stats(a) => stats(a),
        Command::Synth(a) => synth(a),
        Command::Train(a) => run_train(a),
        Command::Eval(a) => run_eval(a),
        Command::Sweep(a) => run_sweep(a),
        Command::GradCheck(a) => grad_check(a),
    }
}

/// Parses `argv` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        pool = pool.num_threads(n);
    }
    let result = match pool.build() {
        Ok(pool) => pool.install(|| dispatch(&cli)),
        Err(e) => Err(Failure::data(e)),
    };
    match result {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}
