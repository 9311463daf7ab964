use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use image::Rgb;

use shelfid_core::augment::{angle_schedule, generate_rotated_dataset, verify_dataset, AugmentConfig};
use shelfid_core::evalkit::{evaluate_dirs, incremental_benchmark, BenchmarkConfig};
use shelfid_core::geometry::DEFAULT_FILL;
use shelfid_service::ApiConfig;

#[derive(Debug, Parser)]
#[command(name = "shelfid", version, about = "Product recognition without detector retraining")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write rotated copies of a YOLO dataset with tightened boxes.
    Augment(AugmentArgs),
    /// Check image/label pairing and label syntax in a dataset directory.
    Verify {
        dir: PathBuf,
        #[arg(long)]
        json: bool,
    },
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Run the HTTP API.
    Serve {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Debug, Args)]
struct AugmentArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Rotate by every multiple of STEP degrees in (0, 360).
    #[arg(long, conflicts_with = "angles", default_value_t = 10)]
    step: u32,
    /// Explicit comma-separated angles in degrees.
    #[arg(long, value_delimiter = ',')]
    angles: Option<Vec<u32>>,
    #[arg(long, default_value_t = 0.9)]
    tightness: f64,
    /// Fill for uncovered corners as R,G,B.
    #[arg(long, value_parser = parse_rgb)]
    fill: Option<Rgb<u8>>,
    /// Do not copy the unrotated originals.
    #[arg(long)]
    no_originals: bool,
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Subcommand)]
enum EvalCommand {
    /// mAP at an IoU threshold over YOLO label directories.
    Map50 {
        #[arg(long)]
        gt: PathBuf,
        /// Predictions as `class cx cy w h confidence` per line.
        #[arg(long)]
        pred: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        iou: f64,
        #[arg(long)]
        json: bool,
    },
    /// Incremental-batch registration benchmark on synthetic classes.
    Bench {
        /// TOML or JSON benchmark config; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Also write the stage table as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

fn parse_rgb(s: &str) -> Result<Rgb<u8>, String> {
    let parts: Vec<_> = s.split(',').map(|p| p.trim().parse::<u8>()).collect();
    match parts.as_slice() {
        [Ok(r), Ok(g), Ok(b)] => Ok(Rgb([*r, *g, *b])),
        _ => Err(format!("expected R,G,B with values 0-255, got '{s}'")),
    }
}

fn load_bench_config(path: &Path) -> Result<BenchmarkConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let cfg = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
    } else {
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
    };
    Ok(cfg)
}

fn augment(a: AugmentArgs) -> Result<ExitCode> {
    let mut cfg = AugmentConfig::new(&a.input, &a.output);
    cfg.angles = a.angles.unwrap_or_else(|| angle_schedule(a.step));
    cfg.tightness = a.tightness;
    cfg.fill = a.fill.unwrap_or(DEFAULT_FILL);
    cfg.keep_originals = !a.no_originals;
    let r = generate_rotated_dataset(&cfg)?;
    if a.json {
        println!("{}", serde_json::to_string_pretty(&r)?);
    } else {
        println!(
            "{} images in, {} images out ({} angles{}), boxes {} -> {} ({} dropped), {} without labels, {:.1}s",
            r.images_in,
            r.images_out,
            cfg.angles.len(),
            if cfg.keep_originals { " + originals" } else { "" },
            r.boxes_in,
            r.boxes_out,
            r.boxes_dropped,
            r.missing_annotations,
            r.elapsed_s
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn verify(dir: &Path, json: bool) -> Result<ExitCode> {
    let r = verify_dataset(dir)?;
    if json {
        println!("{}", serde_json::to_string_pretty(&r)?);
    } else {
        println!("{} images, {} labels, {} pairs, {} boxes", r.images, r.labels, r.pairs, r.boxes);
        for f in &r.unpaired_images {
            println!("image without label: {f}");
        }
        for f in &r.unpaired_labels {
            println!("label without image: {f}");
        }
        for d in r.malformed_lines.iter().chain(&r.out_of_range) {
            println!("{}:{}: {}", d.file, d.line, d.reason);
        }
        println!("{}", if r.is_clean() { "clean".to_string() } else { format!("{} defects", r.defect_count()) });
    }
    Ok(if r.is_clean() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn map50(gt: &Path, pred: &Path, iou: f64, json: bool) -> Result<ExitCode> {
    let s = evaluate_dirs(gt, pred, iou)?;
    if json {
        println!("{}", serde_json::to_string_pretty(&s)?);
    } else {
        println!("class        AP   precision   recall   tp   fp   gt");
        let last = |v: &[f64]| v.last().copied().unwrap_or(0.0);
        for c in &s.classes {
            println!(
                "{:>5}  {:8.4}  {:10.4}  {:7.4}  {:3}  {:3}  {:3}",
                c.label,
                c.ap,
                last(&c.precision),
                last(&c.recall),
                c.tp,
                c.fp,
                c.n_gt
            );
        }
        println!("mAP@{:.2} = {:.4} over {} images", s.iou_threshold, s.map, s.images);
    }
    Ok(ExitCode::SUCCESS)
}

fn bench(config: Option<&Path>, out: &Path, csv: Option<&Path>) -> Result<ExitCode> {
    let cfg = match config {
        Some(p) => load_bench_config(p)?,
        None => BenchmarkConfig::default(),
    };
    let report = incremental_benchmark(&cfg)?;
    std::fs::write(out, serde_json::to_string_pretty(&report)?).with_context(|| format!("writing {}", out.display()))?;
    if let Some(csv) = csv {
        std::fs::write(csv, report.to_csv()).with_context(|| format!("writing {}", csv.display()))?;
    }
    print!("{}", report.to_csv());
    println!("{:.1}s, report written to {}", report.elapsed_s, out.display());
    Ok(ExitCode::SUCCESS)
}

fn serve(config: &Path) -> Result<ExitCode> {
    let cfg = ApiConfig::load(config)?;
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .init();
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(shelfid_service::serve(cfg))?;
    Ok(ExitCode::SUCCESS)
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Augment(a) => {
            if a.angles.as_ref().is_some_and(|v| v.is_empty()) {
                bail!("--angles needs at least one value");
            }
            augment(a)
        }
        Command::Verify { dir, json } => verify(&dir, json),
        Command::Eval(EvalCommand::Map50 { gt, pred, iou, json }) => map50(&gt, &pred, iou, json),
        Command::Eval(EvalCommand::Bench { config, out, csv }) => bench(config.as_deref(), &out, csv.as_deref()),
        Command::Serve { config } => serve(&config),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
