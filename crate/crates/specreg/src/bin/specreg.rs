//! Command-line front end: register, evaluate, synth, overlay.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use specreg::evaluate::{
    edge_overlay, region_report, synthetic_validation, RegionSpec, SyntheticDistortion,
};
use specreg::img::{
    load_image, load_stack, save_png_gray, save_png_rgb, sobel_edge_map, BitDepth, Image2D,
    SpectralStack,
};
use specreg::pipeline::{register, select_channel, ChannelSelect, RegistrationConfig};
use specreg::similarity::Measure;

/// Exit 1: bad invocation or unreadable input. Exit 2: processing failure.
enum CliError {
    Usage(String),
    Processing(String),
}

impl From<specreg::Error> for CliError {
    fn from(e: specreg::Error) -> Self {
        CliError::Processing(e.to_string())
    }
}

type CliResult = Result<(), CliError>;

fn usage<T: std::fmt::Display>(msg: T) -> CliError {
    CliError::Usage(msg.to_string())
}

#[derive(Parser)]
#[command(name = "specreg", version, about = "2D multimodal non-rigid image registration")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Register a moving image or spectral stack onto a reference image
    Register(RegisterArgs),
    /// Score alignment of before/after images over named regions
    Evaluate(EvaluateArgs),
    /// Warp an image with a seeded deformation and measure recovery
    Synth(SynthArgs),
    /// Write a color-coded edge overlay of two images
    Overlay(OverlayArgs),
}

#[derive(Args)]
struct RegisterArgs {
    /// Reference image (PNG/PGM)
    #[arg(long = "ref")]
    reference: PathBuf,
    /// Moving image, or a stack manifest (one image path per line)
    #[arg(long)]
    moving: PathBuf,
    #[arg(long = "out-dir")]
    out_dir: PathBuf,
    /// Flat key = value configuration file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Similarity measure: ssd|cc|cr|mi|nmi|lmi|rc
    #[arg(long)]
    measure: Option<String>,
    /// Moving channel: an index, or "mean"
    #[arg(long)]
    channel: Option<String>,
    /// Pyramid levels
    #[arg(long)]
    levels: Option<usize>,
    /// Accepted for reproducibility bookkeeping; registration itself is
    /// deterministic
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long = "ref")]
    reference: PathBuf,
    #[arg(long)]
    before: PathBuf,
    #[arg(long)]
    after: PathBuf,
    /// Region file: `name x y w h` per line
    #[arg(long)]
    regions: PathBuf,
    #[arg(long = "out-dir")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    seed: u64,
    /// Peak control-point displacement in px
    #[arg(long = "max-disp")]
    max_disp: f64,
    #[arg(long = "out-dir")]
    out_dir: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    measure: Option<String>,
    #[arg(long)]
    levels: Option<usize>,
}

#[derive(Args)]
struct OverlayArgs {
    #[arg(long = "ref")]
    reference: PathBuf,
    #[arg(long)]
    moving: PathBuf,
    #[arg(long = "out-dir")]
    out_dir: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // keep clap's help/version on stdout with success status
            if e.use_stderr() {
                eprint!("{e}");
                return ExitCode::from(1);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    init_threads();
    let run = match cli.command {
        Command::Register(a) => cmd_register(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Overlay(a) => cmd_overlay(a),
    };
    match run {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(CliError::Processing(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}

fn init_threads() {
    if let Ok(v) = std::env::var("SPECREG_THREADS") {
        if let Ok(n) = v.parse::<usize>() {
            if n >= 1 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}

/// Temp name keeping the real extension, since image writers sniff it.
fn tmp_path(path: &Path) -> PathBuf {
    let mut name = std::ffi::OsString::from(".");
    name.push(path.file_name().unwrap_or_default());
    let ext = path.extension().map(|e| e.to_os_string());
    let mut out = path.with_file_name(name);
    out.set_extension("tmp");
    if let Some(ext) = ext {
        let mut n = out.into_os_string();
        n.push(".");
        n.push(ext);
        out = PathBuf::from(n);
    }
    out
}

/// Write-then-rename so interrupted runs leave no truncated artifact.
fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult {
    let tmp = tmp_path(path);
    fs::write(&tmp, bytes)
        .and_then(|_| fs::rename(&tmp, path))
        .map_err(|e| CliError::Processing(format!("writing {}: {e}", path.display())))
}

/// Route library writers through the atomic rename.
fn save_atomic(
    path: &Path,
    f: impl FnOnce(&Path) -> specreg::Result<()>,
) -> CliResult {
    let tmp = tmp_path(path);
    f(&tmp)?;
    fs::rename(&tmp, path)
        .map_err(|e| CliError::Processing(format!("writing {}: {e}", path.display())))
}

fn load_input_image(path: &Path) -> Result<Image2D, CliError> {
    load_image(path).map_err(|e| usage(format!("reading {}: {e}", path.display())))
}

fn ensure_out_dir(dir: &Path) -> CliResult {
    fs::create_dir_all(dir)
        .map_err(|e| usage(format!("creating {}: {e}", dir.display())))
}

fn build_config(
    config: Option<&Path>,
    measure: Option<&str>,
    channel: Option<&str>,
    levels: Option<usize>,
) -> Result<RegistrationConfig, CliError> {
    let mut cfg = match config {
        Some(p) => RegistrationConfig::from_file(p)
            .map_err(|e| usage(format!("config {}: {e}", p.display())))?,
        None => RegistrationConfig::default(),
    };
    if let Some(m) = measure {
        cfg.similarity.measure = m.parse::<Measure>().map_err(usage)?;
    }
    if let Some(c) = channel {
        cfg.moving_channel = c.parse::<ChannelSelect>().map_err(usage)?;
    }
    if let Some(l) = levels {
        cfg.optimizer.pyramid_levels = l;
    }
    cfg.validate().map_err(usage)?;
    Ok(cfg)
}

#[derive(Serialize)]
struct RegisterReport {
    measure: String,
    channel: String,
    score_before: f64,
    score_after: f64,
    iterations: usize,
    aborted: bool,
}

fn cmd_register(a: RegisterArgs) -> CliResult {
    let cfg = build_config(
        a.config.as_deref(),
        a.measure.as_deref(),
        a.channel.as_deref(),
        a.levels,
    )?;
    let reference = load_input_image(&a.reference)?;
    let stack = load_moving(&a.moving)?;
    let moving = select_channel(&stack, cfg.moving_channel)?;
    ensure_out_dir(&a.out_dir)?;

    let result = register(&reference, &moving, &cfg)?;
    let registered = result.warp(&moving)?;

    save_atomic(&a.out_dir.join("registered.png"), |p| {
        save_png_gray(&registered.image, p, BitDepth::Eight)
    })?;
    save_atomic(&a.out_dir.join("field.dfld"), |p| result.dense.save(p))?;
    let report = RegisterReport {
        measure: cfg.similarity.measure.name().to_string(),
        channel: match cfg.moving_channel {
            ChannelSelect::Mean => "mean".to_string(),
            ChannelSelect::Index(i) => i.to_string(),
        },
        score_before: result.score_before,
        score_after: result.score_after,
        iterations: result.trace.rows.len(),
        aborted: result.trace.aborted,
    };
    let json = serde_json::to_string_pretty(&report).map_err(|e| CliError::Processing(e.to_string()))?;
    write_atomic(&a.out_dir.join("report.json"), json.as_bytes())?;
    write_atomic(
        &a.out_dir.join("trace.csv"),
        result.trace.to_csv().as_bytes(),
    )?;
    Ok(())
}

fn load_moving(path: &Path) -> Result<SpectralStack, CliError> {
    let is_manifest = path
        .extension()
        .map(|e| e == "txt" || e == "stack")
        .unwrap_or(false);
    if is_manifest {
        load_stack(path).map_err(|e| usage(format!("reading {}: {e}", path.display())))
    } else {
        let img = load_input_image(path)?;
        SpectralStack::new(vec![img], None).map_err(CliError::from)
    }
}

fn parse_regions(path: &Path) -> Result<Vec<RegionSpec>, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| usage(format!("reading {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 5 {
            return Err(usage(format!(
                "{}:{lineno}: expected `name x y w h`",
                path.display()
            )));
        }
        let mut nums = [0usize; 4];
        for (slot, tok) in nums.iter_mut().zip(&fields[1..]) {
            *slot = tok.parse().map_err(|_| {
                usage(format!(
                    "{}:{lineno}: `{tok}` is not a non-negative integer",
                    path.display()
                ))
            })?;
        }
        out.push(RegionSpec {
            name: fields[0].to_string(),
            rect: (nums[0], nums[1], nums[2], nums[3]),
        });
    }
    if out.is_empty() {
        return Err(usage(format!("{}: no regions", path.display())));
    }
    Ok(out)
}

fn cmd_evaluate(a: EvaluateArgs) -> CliResult {
    let reference = load_input_image(&a.reference)?;
    let before = load_input_image(&a.before)?;
    let after = load_input_image(&a.after)?;
    let regions = parse_regions(&a.regions)?;
    ensure_out_dir(&a.out_dir)?;

    let report = region_report(&reference, &before, &after, &regions)?;
    let json = serde_json::to_string_pretty(&report).map_err(|e| CliError::Processing(e.to_string()))?;
    write_atomic(&a.out_dir.join("report.json"), json.as_bytes())?;

    for spec in &regions {
        let (x, y, w, h) = spec.rect;
        let ref_edges = sobel_edge_map(&reference.crop(x, y, w, h)?, 90.0)?;
        let reg_edges = sobel_edge_map(&after.crop(x, y, w, h)?, 90.0)?;
        let overlay = edge_overlay(&ref_edges, &reg_edges)?;
        save_atomic(&a.out_dir.join(format!("overlay_{}.png", spec.name)), |p| {
            save_png_rgb(&overlay, p)
        })?;
    }
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> CliResult {
    let cfg = build_config(a.config.as_deref(), a.measure.as_deref(), None, a.levels)?;
    let distortion = SyntheticDistortion {
        max_disp: a.max_disp,
        ..SyntheticDistortion::default()
    };
    if !(a.max_disp >= 0.0 && a.max_disp < 0.4 * distortion.spacing) {
        return Err(usage(format!(
            "--max-disp {} violates the folding guard (must be below {})",
            a.max_disp,
            0.4 * distortion.spacing
        )));
    }
    let image = load_input_image(&a.image)?;
    ensure_out_dir(&a.out_dir)?;

    let outcome = synthetic_validation(&image, a.seed, &cfg, &distortion)?;

    save_atomic(&a.out_dir.join("warped.png"), |p| {
        save_png_gray(&outcome.distorted, p, BitDepth::Eight)
    })?;
    save_atomic(&a.out_dir.join("truth.dfld"), |p| outcome.truth.save(p))?;
    let json = serde_json::to_string_pretty(&outcome.report)
        .map_err(|e| CliError::Processing(e.to_string()))?;
    write_atomic(&a.out_dir.join("report.json"), json.as_bytes())?;
    Ok(())
}

fn cmd_overlay(a: OverlayArgs) -> CliResult {
    let reference = load_input_image(&a.reference)?;
    let moving = load_input_image(&a.moving)?;
    ensure_out_dir(&a.out_dir)?;
    let ref_edges = sobel_edge_map(&reference, 90.0)?;
    let mov_edges = sobel_edge_map(&moving, 90.0)?;
    let overlay = edge_overlay(&ref_edges, &mov_edges)?;
    save_atomic(&a.out_dir.join("overlay.png"), |p| save_png_rgb(&overlay, p))
}
