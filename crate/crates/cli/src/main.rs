use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use hybrid_restore::noise::{gibbs_sample_with, replicate_rng, run_experiment, ExperimentReport};
use hybrid_restore::pipeline::{detect, restore, restore_with_truth, spectral_baseline, PipelineConfig};
use hybrid_restore::{DensityGrid, ImageHistogram};
use serde::Serialize;

mod imageio;
mod plot;
mod settings;

use imageio::Format;
use settings::{FileSettings, NoiseSettings, PipelineSettings};

/// Bad arguments, bad config or an unusable input file type.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser)]
#[command(name = "hybrid-restore", version, about = "Edge-preserving restoration of count images")]
struct Cli {
    /// Flat TOML file of settings; command-line flags take precedence
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Scan for edge windows and write the edge mask and per-window fits
    Detect {
        #[command(flatten)]
        io: IoArgs,
        #[command(flatten)]
        pipeline: PipelineSettings,
    },
    /// Restore an image: edge fits plus spectral smoothing of the rest
    Restore {
        #[command(flatten)]
        io: IoArgs,
        /// Ground-truth image; lambda is then chosen to match it
        #[arg(long, value_name = "FILE")]
        truth: Option<PathBuf>,
        #[command(flatten)]
        pipeline: PipelineSettings,
    },
    /// Draw noisy histograms from a truth image with the Gibbs sampler
    Simulate {
        #[command(flatten)]
        io: IoArgs,
        /// Sample size as a multiple of the pixel count
        #[arg(long, default_value_t = 10)]
        multiplier: u32,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        noise: NoiseSettings,
    },
    /// Replicate study: DMSE, within-sample variance and their ratio over m
    Report {
        #[command(flatten)]
        io: IoArgs,
        /// Comma-separated sample size multipliers
        #[arg(long, value_delimiter = ',', default_value = "10,20,50,100")]
        multipliers: Vec<u32>,
        #[arg(long, value_enum, default_value_t = Method::Pipeline)]
        method: Method,
        /// Choose lambda against the truth, or by the unbiased risk estimate
        #[arg(long, value_enum, default_value_t = Selection::Truth)]
        lambda_selection: Selection,
        #[command(flatten)]
        pipeline: PipelineSettings,
        #[command(flatten)]
        noise: NoiseSettings,
    },
}

#[derive(Args)]
struct IoArgs {
    #[arg(long, value_name = "FILE")]
    input: PathBuf,
    #[arg(long, value_name = "DIR", default_value = ".")]
    output_dir: PathBuf,
    /// Image format for outputs
    #[arg(long, value_enum, default_value_t = Format::Pgm)]
    format: Format,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Method {
    Pipeline,
    Baseline,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Selection {
    Truth,
    Sure,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

/// 2 for arguments and input errors, 3 for I/O, 4 for numerical failures.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<hybrid_restore::Error>() {
            if e.is_io_error() {
                return 3;
            }
            if e.is_input_error() {
                return 2;
            }
            return 4;
        }
        if cause.is::<std::io::Error>() || cause.is::<image::ImageError>() {
            return 3;
        }
    }
    4
}

fn run(cli: Cli) -> Result<()> {
    let file = settings::load(cli.config.as_deref())?;
    match cli.command {
        Command::Detect { io, pipeline } => cmd_detect(&io, &pipeline.resolve(&file.pipeline)?),
        Command::Restore { io, truth, pipeline } => {
            cmd_restore(&io, truth.as_deref(), &pipeline.resolve(&file.pipeline)?)
        }
        Command::Simulate {
            io,
            multiplier,
            seed,
            noise,
        } => cmd_simulate(&io, multiplier, seed, &noise, &file),
        Command::Report {
            io,
            multipliers,
            method,
            lambda_selection,
            pipeline,
            noise,
        } => {
            let cfg = pipeline.resolve(&file.pipeline)?;
            cmd_report(&io, &multipliers, method, lambda_selection, &cfg, &noise, &file)
        }
    }
}

fn prepare(io: &IoArgs) -> Result<()> {
    fs::create_dir_all(&io.output_dir)
        .with_context(|| format!("cannot create {}", io.output_dir.display()))
}

fn load_histogram(path: &Path) -> Result<ImageHistogram> {
    let values = imageio::read_gray(path)?;
    ImageHistogram::from_intensities(values).with_context(|| format!("{} is not a usable image", path.display()))
}

fn load_truth(path: &Path) -> Result<DensityGrid> {
    let values = imageio::read_gray(path)?;
    DensityGrid::new(values)
        .and_then(|g| g.normalized())
        .with_context(|| format!("{} is not a usable truth image", path.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn cmd_detect(io: &IoArgs, cfg: &PipelineConfig) -> Result<()> {
    let h = load_histogram(&io.input)?;
    let det = detect(&h, cfg)?;
    prepare(io)?;
    imageio::write_mask(&io.output_dir, "edges", &det.edge_set.edge_mask, io.format)?;

    let mut csv = String::from("row,col,pvalue,beta1,beta2,eta,rejected\n");
    for (k, &(r, c)) in det.scan.centers.iter().enumerate() {
        let p = &det.scan.fits[k].params;
        csv.push_str(&format!(
            "{r},{c},{:e},{},{},{},{}\n",
            det.scan.pvalues[k], p.beta[0], p.beta[1], p.eta, det.rejects[k]
        ));
    }
    write_text(&io.output_dir.join("windows.csv"), &csv)
}

#[derive(Serialize)]
struct RestoreSummary<'a> {
    size: usize,
    lambda: f64,
    lambda_selection: &'a str,
    t_star: f64,
    windows_scanned: usize,
    rejected_windows: usize,
    edge_pixels: usize,
    config: &'a PipelineConfig,
}

fn cmd_restore(io: &IoArgs, truth: Option<&Path>, cfg: &PipelineConfig) -> Result<()> {
    let h = load_histogram(&io.input)?;
    let (res, selection) = match truth {
        Some(path) => {
            let t = load_truth(path)?;
            (restore_with_truth(&h, cfg, &t)?, "truth")
        }
        None => (restore(&h, cfg)?, "sure"),
    };
    let selection = if cfg.lambda.is_some() { "fixed" } else { selection };
    prepare(io)?;
    let dir = &io.output_dir;
    imageio::write_field(dir, "combined", res.combined.values(), io.format)?;
    imageio::write_field(dir, "edge", res.edge_estimate.values(), io.format)?;
    imageio::write_field(dir, "smooth", res.smooth_estimate.values(), io.format)?;

    let coeff_path = dir.join("spectrum.csv");
    let file = fs::File::create(&coeff_path).with_context(|| format!("cannot write {}", coeff_path.display()))?;
    res.spectral.write_csv(std::io::BufWriter::new(file))?;

    let summary = RestoreSummary {
        size: h.size(),
        lambda: res.selected_lambda,
        lambda_selection: selection,
        t_star: res.partition().t_star,
        windows_scanned: res.detection.scan.len(),
        rejected_windows: res.edge_set().rejected_centers.len(),
        edge_pixels: res.edge_set().edge_mask.iter().filter(|m| **m).count(),
        config: cfg,
    };
    write_text(&dir.join("restore.json"), &serde_json::to_string_pretty(&summary)?)
}

fn cmd_simulate(io: &IoArgs, multiplier: u32, seed: Option<u64>, noise: &NoiseSettings, file: &FileSettings) -> Result<()> {
    let truth = load_truth(&io.input)?;
    let seed = seed.or(file.pipeline.seed).unwrap_or(0);
    let gibbs = noise.gibbs(&file.noise, seed, multiplier)?;
    let replicates = noise.replicates(&file.noise, 1);
    prepare(io)?;
    for i in 0..replicates {
        let mut rng = replicate_rng(seed, multiplier, i);
        let h = gibbs_sample_with(&truth, &gibbs, &mut rng)?;
        let path = io
            .output_dir
            .join(format!("sample-m{multiplier}-{i:03}.{}", io.format.extension()));
        imageio::write_counts(&path, h.counts(), io.format)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct ReportFile<'a> {
    method: Method,
    lambda_selection: Selection,
    seed: u64,
    #[serde(flatten)]
    report: &'a ExperimentReport,
}

fn cmd_report(
    io: &IoArgs,
    multipliers: &[u32],
    method: Method,
    selection: Selection,
    cfg: &PipelineConfig,
    noise: &NoiseSettings,
    file: &FileSettings,
) -> Result<()> {
    if multipliers.is_empty() {
        return Err(UsageError("at least one multiplier is required".into()).into());
    }
    let truth = load_truth(&io.input)?;
    let gibbs = noise.gibbs(&file.noise, cfg.seed, multipliers[0])?;
    let replicates = noise.replicates(&file.noise, 20);
    let target = (selection == Selection::Truth).then_some(&truth);
    let report = run_experiment(&truth, multipliers, replicates, &gibbs, |h| match (method, target) {
        (Method::Pipeline, Some(t)) => Ok(restore_with_truth(h, cfg, t)?.combined),
        (Method::Pipeline, None) => Ok(restore(h, cfg)?.combined),
        (Method::Baseline, t) => Ok(spectral_baseline(h, cfg, t)?.0),
    })?;

    prepare(io)?;
    let dir = &io.output_dir;
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.10e}")).unwrap_or_default();
    let mut t1 = String::from("m,dmse\n");
    let mut t2 = String::from("m,within_var\n");
    let mut t3 = String::from("m,ratio\n");
    for row in &report.rows {
        t1.push_str(&format!("{},{:.10e}\n", row.m, row.dmse));
        t2.push_str(&format!("{},{}\n", row.m, opt(row.within_var)));
        t3.push_str(&format!("{},{}\n", row.m, opt(row.ratio)));
    }
    write_text(&dir.join("table1_dmse.csv"), &t1)?;
    write_text(&dir.join("table2_within_var.csv"), &t2)?;
    write_text(&dir.join("table3_ratio.csv"), &t3)?;
    write_text(&dir.join("report.csv"), &report.to_csv())?;
    let meta = ReportFile {
        method,
        lambda_selection: selection,
        seed: cfg.seed,
        report: &report,
    };
    write_text(&dir.join("report.json"), &serde_json::to_string_pretty(&meta)?)?;

    let dmse: Vec<(f64, f64)> = report.rows.iter().map(|r| (f64::from(r.m), r.dmse)).collect();
    let ratio: Vec<(f64, f64)> = report
        .rows
        .iter()
        .map(|r| (f64::from(r.m), r.ratio.unwrap_or(f64::NAN)))
        .collect();
    let ext = io.format.extension();
    imageio::write_gray(&dir.join(format!("dmse.{ext}")), &plot::line_plot(&dmse), io.format)?;
    imageio::write_gray(&dir.join(format!("ratio.{ext}")), &plot::line_plot(&ratio), io.format)?;
    Ok(())
}
