use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use loopgate::dataset::{load_manifest, write_dataset};
use loopgate::formats::cache::DescriptorCache;
use loopgate::pipeline::{
    bench, detect_dataset, evaluate_detect_dir, extract_to_cache, open_cache, parse_frame_ranges, thread_pool,
    write_bench, write_detect, write_eval, Mode,
};
use loopgate::PipelineConfig;

/// Pose-gated visual loop-closure detection.
#[derive(Debug, Parser)]
#[command(name = "loopgate", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// TOML configuration file; defaults apply to absent keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `synth.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides `run.threads` (0 = all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Also write PR and timing tables as JSON.
    #[arg(long, global = true)]
    plot_data: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// Overrides `synth.frame_count`.
        #[arg(long)]
        frames: Option<usize>,
    },
    /// Compute descriptors into a cache file.
    Extract {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        cache: PathBuf,
        /// Frame ranges such as `0-99,200-249`; all frames when omitted.
        #[arg(long)]
        frames: Option<String>,
    },
    /// Run the loop detection pipeline.
    Detect {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Search the whole triangle instead of the candidate areas.
        #[arg(long, conflicts_with = "full_coverage")]
        baseline: bool,
        /// Use one candidate area covering every frame.
        #[arg(long)]
        full_coverage: bool,
        /// Read and extend this descriptor cache.
        #[arg(long)]
        cache: Option<PathBuf>,
    },
    /// Sweep thresholds over `detect` outputs and score them.
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        /// Output directory of a `detect` run.
        #[arg(long)]
        detect: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Time the constrained and baseline pipelines.
    Bench {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(g: &Global) -> anyhow::Result<PipelineConfig> {
    let mut cfg = PipelineConfig::load(g.config.as_deref())?;
    if let Some(seed) = g.seed {
        cfg.synth.seed = seed;
    }
    if let Some(t) = g.threads {
        cfg.run.threads = t;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = load_config(&cli.global)?;
    let plot = cli.global.plot_data;
    let pool = thread_pool(cfg.run.threads)?;
    match cli.command {
        Command::Synth { out, frames } => {
            if let Some(n) = frames {
                cfg.synth.frame_count = n;
            }
            cfg.validate()?;
            let ds = loopgate_core::synth::generate(&cfg.synth).context("stage synth")?;
            let path = pool.install(|| write_dataset(&ds, &out))?;
            println!("{}", path.display());
        }
        Command::Extract { manifest, cache, frames } => {
            let ds = load_manifest(&manifest)?;
            let frames = match frames {
                Some(ranges) => parse_frame_ranges(&ranges)?,
                None => (0..ds.frame_count()).collect(),
            };
            let count = pool.install(|| extract_to_cache(&ds, &frames, &cfg.dird, &cache))?;
            println!("{count} records in {}", cache.display());
        }
        Command::Detect {
            manifest,
            out,
            baseline,
            full_coverage,
            cache,
        } => {
            let ds = load_manifest(&manifest)?;
            let mode = match (baseline, full_coverage) {
                (true, _) => Mode::Baseline,
                (_, true) => Mode::FullCoverage,
                _ => Mode::Constrained,
            };
            let run = pool.install(|| detect_with_cache(&ds, &cfg, mode, cache.as_deref()))?;
            write_detect(&run, &cfg, &out, plot)?;
            println!(
                "{} loops, {} comparisons ({} mode)",
                run.detection.loops.len(),
                run.similarity.comparisons,
                mode.name()
            );
        }
        Command::Eval { manifest, detect, out } => {
            let ds = load_manifest(&manifest)?;
            let report = pool.install(|| evaluate_detect_dir(&ds, &detect, &cfg))?;
            write_eval(&report, &out, plot)?;
            println!(
                "max recall at precision 1: {:.3}; comparison reduction: {:.2}x",
                report.summary.max_recall_at_precision_1, report.summary.comparison_reduction_ratio
            );
        }
        Command::Bench { manifest, out } => {
            let ds = load_manifest(&manifest)?;
            let (rows, summary) = bench(&ds, &cfg)?;
            write_bench(&rows, &summary, &out, plot)?;
            println!(
                "constrained {:.1} ms / baseline {:.1} ms; comparisons {} / {}",
                summary.constrained_total_ms,
                summary.baseline_total_ms,
                summary.constrained_comparisons,
                summary.baseline_comparisons
            );
        }
    }
    Ok(())
}

fn detect_with_cache(
    ds: &loopgate::Dataset,
    cfg: &PipelineConfig,
    mode: Mode,
    cache: Option<&Path>,
) -> anyhow::Result<loopgate::pipeline::DetectRun> {
    let Some(path) = cache else {
        return detect_dataset(ds, cfg, mode, None);
    };
    let (_lock, mut c): (_, DescriptorCache) = open_cache(path, &cfg.dird)?;
    let before = c.len();
    let run = detect_dataset(ds, cfg, mode, Some(&mut c))?;
    if c.len() != before {
        c.write(path)?;
    }
    Ok(run)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
