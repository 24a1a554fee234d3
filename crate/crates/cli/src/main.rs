use clap::{Args, Parser, Subcommand};
use skph_core::gs::{load_cameras, ply, Camera, GaussianCloud};
use skph_core::lines::{extract_lines_from_points, load_lines, write_lines, ExtractionConfig, LineSegment3D};
use skph_core::partition::PartitionConfig;
use skph_core::patch::DEFAULT_KMEANS_ITERS;
use skph_core::pipeline::{
    decode_bytes, encode, evaluate, sweep, EncodeConfig, PipelineError, Stage, SweepSpec, Views,
};
use skph_core::render::{Image, LearningRates, LossConfig, RetrainConfig};
use skph_core::synth::{generate, view_name, write_scene, SynthSpec};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "skph", version, about = "Sketch/Patch hybrid codec for Gaussian splatting scenes")]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Encode a PLY scene into an SKPH file.
    Encode(EncodeArgs),
    /// Decode an SKPH file back to a PLY.
    Decode {
        input: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Per-view PSNR/SSIM of a PLY scene against truth images, as CSV.
    Eval {
        #[arg(long)]
        ply: PathBuf,
        #[command(flatten)]
        views: ViewArgs,
        /// CSV destination; stdout if omitted.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Rate-distortion sweep over pruning factors and line fractions.
    Sweep(SweepArgs),
    /// Generate a synthetic box-room scene with lines, cameras, and truth images.
    Synth(SynthArgs),
    /// Fit line segments to splat centers (for scenes without a line file).
    ExtractLines {
        #[arg(long)]
        ply: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long, default_value_t = ExtractionConfig::default().inlier_radius)]
        inlier_radius: f64,
        #[arg(long, default_value_t = ExtractionConfig::default().min_inliers)]
        min_inliers: usize,
        #[arg(long, default_value_t = ExtractionConfig::default().max_lines)]
        max_lines: usize,
        #[arg(long, default_value_t = ExtractionConfig::default().iterations)]
        iterations: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args, Clone)]
struct ViewArgs {
    /// cameras.json as written by `synth`.
    #[arg(long)]
    cameras: Option<PathBuf>,
    /// Directory of truth images named view_000.png, view_001.png, ...
    #[arg(long)]
    images: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct CodecArgs {
    #[arg(long)]
    ply: PathBuf,
    /// Line file (`id x1 y1 z1 x2 y2 z2` per line). Without it every splat is Patch.
    #[arg(long)]
    lines: Option<PathBuf>,
    /// Sketch radius; defaults to 0.5% of the scene's bounding-box diagonal.
    #[arg(long)]
    radius: Option<f64>,
    #[arg(long, default_value_t = 3.0)]
    eta: f64,
    #[arg(long, default_value_t = 100)]
    ransac_iters: usize,
    #[arg(long, default_value_t = 8)]
    min_group: usize,
    #[arg(long, default_value_t = 3)]
    fit_degree: usize,
    #[arg(long, default_value_t = 1.5)]
    iqr_multiplier: f64,
    #[arg(long, default_value_t = 0.9)]
    alignment_cos: f64,
    #[arg(long, default_value_t = 0)]
    partition_seed: u64,
    #[arg(long, default_value_t = 0)]
    prune_seed: u64,
    #[arg(long, default_value_t = 0)]
    vq_seed: u64,
    #[arg(long, default_value_t = DEFAULT_KMEANS_ITERS)]
    kmeans_iters: usize,
    /// Retrain the pruned Patch splats against the truth views.
    #[arg(long)]
    retrain: bool,
    #[arg(long, default_value_t = 500)]
    retrain_steps: usize,
    #[arg(long, default_value_t = 0)]
    retrain_seed: u64,
    /// Weight of the L1 term in the retraining loss.
    #[arg(long, default_value_t = 0.8)]
    lambda: f64,
    #[command(flatten)]
    views: ViewArgs,
}

#[derive(Args)]
struct EncodeArgs {
    #[command(flatten)]
    codec: CodecArgs,
    #[arg(long, default_value_t = 1.0)]
    line_fraction: f64,
    #[arg(long, default_value_t = 1.0)]
    prune: f64,
    #[arg(short, long)]
    out: PathBuf,
    /// JSON report destination; printed to stdout if omitted.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    codec: CodecArgs,
    #[arg(long, value_delimiter = ',', default_values_t = vec![2.0, 4.0, 6.0, 8.0, 10.0, 15.0, 20.0])]
    factors: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = vec![1.0])]
    line_fractions: Vec<f64>,
    /// Output directory for sweep.csv and per-point reports.
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(short, long)]
    out: PathBuf,
    #[arg(long, default_value_t = SynthSpec::default().edges)]
    edges: usize,
    #[arg(long, default_value_t = SynthSpec::default().splats_per_edge)]
    splats_per_edge: usize,
    #[arg(long, default_value_t = SynthSpec::default().curve_degree)]
    curve_degree: usize,
    #[arg(long, default_value_t = 0.0)]
    outliers: f64,
    #[arg(long, default_value_t = SynthSpec::default().filler_count)]
    filler: usize,
    #[arg(long, default_value_t = SynthSpec::default().width)]
    width: u32,
    #[arg(long, default_value_t = SynthSpec::default().height)]
    height: u32,
    #[arg(long, default_value_t = SynthSpec::default().cameras)]
    cameras: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = SynthSpec::default().sh_degree)]
    sh_degree: u8,
}

type CliResult<T> = Result<T, PipelineError>;

fn err(stage: Stage) -> impl Fn(String) -> PipelineError {
    move |message| PipelineError { stage, message }
}

fn read(path: &Path, stage: Stage) -> CliResult<Vec<u8>> {
    fs::read(path).map_err(|e| err(stage)(format!("{}: {e}", path.display())))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>, stage: Stage) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| err(stage)(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, bytes).map_err(|e| err(stage)(format!("{}: {e}", path.display())))
}

fn load_cloud(path: &Path) -> CliResult<GaussianCloud> {
    ply::load_ply(&read(path, Stage::Input)?).map_err(|e| err(Stage::Input)(format!("{}: {e}", path.display())))
}

fn load_line_file(path: Option<&Path>) -> CliResult<Vec<LineSegment3D>> {
    let Some(path) = path else { return Ok(Vec::new()) };
    let text = String::from_utf8(read(path, Stage::Input)?)
        .map_err(|e| err(Stage::Input)(format!("{}: {e}", path.display())))?;
    load_lines(&text).map_err(|e| err(Stage::Input)(format!("{}: {e}", path.display())))
}

/// Cameras and their truth images, paired by index.
fn load_views(args: &ViewArgs) -> CliResult<Option<(Vec<Camera>, Vec<Image>)>> {
    let (cams, dir) = match (&args.cameras, &args.images) {
        (None, None) => return Ok(None),
        (Some(c), Some(d)) => (c, d),
        _ => return Err(err(Stage::Input)("--cameras and --images must be given together".into())),
    };
    let text = String::from_utf8(read(cams, Stage::Input)?)
        .map_err(|e| err(Stage::Input)(format!("{}: {e}", cams.display())))?;
    let cameras = load_cameras(&text).map_err(|e| err(Stage::Input)(format!("{}: {e}", cams.display())))?;
    let mut images = Vec::with_capacity(cameras.len());
    for (i, cam) in cameras.iter().enumerate() {
        let path = dir.join(view_name(i));
        let img = Image::decode_png(&read(&path, Stage::Input)?)
            .map_err(|e| err(Stage::Input)(format!("{}: {e}", path.display())))?;
        if (img.width, img.height) != (cam.width(), cam.height()) {
            return Err(err(Stage::Input)(format!(
                "{} is {}x{} but camera {i} is {}x{}",
                path.display(),
                img.width,
                img.height,
                cam.width(),
                cam.height()
            )));
        }
        images.push(img);
    }
    Ok(Some((cameras, images)))
}

fn encode_config(c: &CodecArgs) -> EncodeConfig {
    let partition = PartitionConfig {
        eta: c.eta,
        ransac_iters: c.ransac_iters,
        min_group_size: c.min_group,
        fit_degree: c.fit_degree,
        iqr_multiplier: c.iqr_multiplier,
        alignment_cos_min: c.alignment_cos,
        seed: c.partition_seed,
        ..PartitionConfig::with_radius(1.0)
    };
    EncodeConfig {
        radius: c.radius,
        partition,
        prune_seed: c.prune_seed,
        vq_seed: c.vq_seed,
        kmeans_iters: c.kmeans_iters,
        retrain: c.retrain.then(|| RetrainConfig {
            steps: c.retrain_steps,
            lr: LearningRates::default(),
            seed: c.retrain_seed,
        }),
        loss: LossConfig {
            lambda: c.lambda,
            ..LossConfig::default()
        },
        ..EncodeConfig::default()
    }
}

fn to_json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("report serializes") + "\n"
}

fn cmd_encode(a: &EncodeArgs) -> CliResult<()> {
    let cloud = load_cloud(&a.codec.ply)?;
    let lines = load_line_file(a.codec.lines.as_deref())?;
    let views = load_views(&a.codec.views)?;
    let cfg = EncodeConfig {
        line_fraction: a.line_fraction,
        prune_factor: a.prune,
        ..encode_config(&a.codec)
    };
    let v = views.as_ref().map(|(c, i)| Views { cameras: c, images: i });
    let out = encode(&cloud, &lines, &cfg, v)?;
    write(&a.out, &out.bytes, Stage::Container)?;
    let report = to_json(&out.report);
    match &a.report {
        Some(p) => write(p, report, Stage::Container),
        None => {
            print!("{report}");
            Ok(())
        }
    }
}

fn cmd_decode(input: &Path, out: &Path) -> CliResult<()> {
    let cloud = decode_bytes(&read(input, Stage::Input)?).map_err(|e| err(Stage::Container)(e.to_string()))?;
    write(out, ply::save_ply(&cloud), Stage::Container)
}

fn cmd_eval(ply_path: &Path, views: &ViewArgs, out: Option<&Path>) -> CliResult<()> {
    let cloud = load_cloud(ply_path)?;
    let (cams, images) = load_views(views)?.ok_or_else(|| err(Stage::Input)("eval needs --cameras and --images".into()))?;
    let csv = evaluate(&cloud, &cams, &images)?.to_csv();
    match out {
        Some(p) => write(p, csv, Stage::Eval),
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}

fn cmd_sweep(a: &SweepArgs) -> CliResult<()> {
    let cloud = load_cloud(&a.codec.ply)?;
    let lines = load_line_file(a.codec.lines.as_deref())?;
    let (cams, images) =
        load_views(&a.codec.views)?.ok_or_else(|| err(Stage::Input)("sweep needs --cameras and --images".into()))?;
    if let Some(f) = a.factors.iter().find(|f| !(**f >= 1.0)) {
        return Err(err(Stage::Input)(format!("pruning factors must be >= 1, got {f}")));
    }
    if let Some(f) = a.line_fractions.iter().find(|f| !(**f > 0.0 && **f <= 1.0)) {
        return Err(err(Stage::Input)(format!("line fractions must lie in (0, 1], got {f}")));
    }
    let spec = SweepSpec {
        factors: a.factors.clone(),
        line_fractions: a.line_fractions.clone(),
    };
    let views = Views {
        cameras: &cams,
        images: &images,
    };
    let outcome = sweep(&cloud, &lines, views, &spec, &encode_config(&a.codec));
    write(&a.out.join("sweep.csv"), outcome.to_csv(), Stage::Eval)?;
    for p in &outcome.points {
        let name = format!("point_f{}_l{}.json", p.factor, p.line_fraction);
        write(&a.out.join(name), to_json(p), Stage::Eval)?;
    }
    if !outcome.failures.is_empty() {
        write(&a.out.join("failures.json"), to_json(&outcome.failures), Stage::Eval)?;
    }
    print!("{}", outcome.to_csv());
    Ok(())
}

fn cmd_synth(a: &SynthArgs) -> CliResult<()> {
    let spec = SynthSpec {
        edges: a.edges,
        splats_per_edge: a.splats_per_edge,
        curve_degree: a.curve_degree,
        outlier_fraction: a.outliers,
        filler_count: a.filler,
        width: a.width,
        height: a.height,
        cameras: a.cameras,
        seed: a.seed,
        sh_degree: a.sh_degree,
        ..SynthSpec::default()
    };
    let scene = generate(&spec).map_err(|e| err(Stage::Input)(e.to_string()))?;
    write_scene(&scene, &a.out).map_err(|e| err(Stage::Container)(format!("{}: {e}", a.out.display())))
}

fn run(cli: Cli) -> CliResult<()> {
    match &cli.command {
        Command::Encode(a) => cmd_encode(a),
        Command::Decode { input, out } => cmd_decode(input, out),
        Command::Eval { ply, views, out } => cmd_eval(ply, views, out.as_deref()),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Synth(a) => cmd_synth(a),
        Command::ExtractLines {
            ply,
            out,
            inlier_radius,
            min_inliers,
            max_lines,
            iterations,
            seed,
        } => {
            let cloud = load_cloud(ply)?;
            let cfg = ExtractionConfig {
                inlier_radius: *inlier_radius,
                min_inliers: *min_inliers,
                max_lines: *max_lines,
                iterations: *iterations,
                seed: *seed,
            };
            let lines = extract_lines_from_points(&cloud, &cfg);
            log::info!("extracted {} lines", lines.len());
            write(out, write_lines(&lines), Stage::Container)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("skph: {e}");
            ExitCode::FAILURE
        }
    }
}
