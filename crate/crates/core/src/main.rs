use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::{error, info};

use stabweave::config::PipelineConfig;
use stabweave::estimate::cache::MeshCache;
use stabweave::ingest::FramePairs;
use stabweave::pipeline::{configure_threads, estimate_all, run, DirSink, Motions, NullSink, RunReport};
use stabweave::smoothing::Mode;
use stabweave::synth::{synth_generate, SyntheticSpec};
use stabweave::{Error, Result};

#[derive(Parser)]
#[command(name = "stabweave", version, about = "Two-view video stitching with warp smoothing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Online,
    Offline,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Online => Mode::Online,
            ModeArg::Offline => Mode::Offline,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic shaky two-view sequence with ground truth.
    Synth {
        /// Sequence description (JSON); defaults apply to missing keys.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate spatial and temporal motions and write them as a mesh cache.
    Estimate {
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long = "tgt")]
        target: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Stitch two frame sequences into one stabilized sequence.
    Stitch {
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long = "tgt")]
        target: PathBuf,
        /// Precomputed motions; skips estimation.
        #[arg(long)]
        meshes: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long)]
        window: Option<usize>,
    },
    /// Run the pipeline and write only the quality report.
    Eval {
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long = "tgt")]
        target: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        #[arg(long)]
        meshes: Option<PathBuf>,
    },
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig> {
    match path {
        Some(p) => PipelineConfig::load(p),
        None => Ok(PipelineConfig::default()),
    }
}

/// Opens the inputs and adopts their size as the working size when resizing is off.
fn open_pairs(cfg: &mut PipelineConfig, reference: &Path, target: &Path) -> Result<FramePairs> {
    let pairs = FramePairs::open(reference, target, cfg.resize.then(|| cfg.size()))?;
    cfg.width = pairs.size().width;
    cfg.height = pairs.size().height;
    cfg.validate()?;
    Ok(pairs)
}

fn write_report(report: &RunReport, path: &Path) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(report)? + "\n")?;
    Ok(())
}

fn stitch_or_eval(
    mut cfg: PipelineConfig,
    reference: &Path,
    target: &Path,
    meshes: Option<&Path>,
    frames_out: Option<&Path>,
    report_out: &Path,
) -> Result<()> {
    let pairs = open_pairs(&mut cfg, reference, target)?;
    let threads = configure_threads(&cfg)?;
    info!("{} frame pairs at {:?}, {threads} worker threads", pairs.len(), cfg.size());
    let cache = meshes.map(|p| MeshCache::read(p, &cfg.grid_spec())).transpose()?;
    let motions = cache.as_ref().map_or(Motions::Estimate, Motions::Cached);
    let name = reference
        .parent()
        .and_then(|p| p.file_name())
        .map_or_else(|| "video".to_string(), |n| n.to_string_lossy().into_owned());
    let out = match frames_out {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            run(&cfg, &pairs, motions, &mut DirSink(dir), &name)?
        }
        None => run(&cfg, &pairs, motions, &mut NullSink, &name)?,
    };
    write_report(&out.report, report_out)?;
    let v = &out.report.video;
    info!(
        "psnr {:.2} dB, ssim {:.4}, stability {:.3} (raw {:.3}), distortion {:.3}",
        v.psnr_mean, v.ssim_mean, v.stability, v.stability_raw, v.distortion
    );
    Ok(())
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { spec, out } => {
            let spec: SyntheticSpec = match spec {
                Some(p) => serde_json::from_str(&std::fs::read_to_string(&p)?)
                    .map_err(|e| Error::InvalidConfig(format!("{}: {e}", p.display())))?,
                None => SyntheticSpec::default(),
            };
            let truth = synth_generate(&spec, &out)?;
            info!("wrote {} frame pairs to {}", truth.frames.len(), out.display());
            Ok(())
        }
        Command::Estimate {
            reference,
            target,
            out,
            config,
        } => {
            let mut cfg = load_config(config.as_deref())?;
            let pairs = open_pairs(&mut cfg, &reference, &target)?;
            configure_threads(&cfg)?;
            let cache = estimate_all(&cfg, &pairs)?;
            cache.write(&out)?;
            info!("wrote motions of {} frames to {}", cache.frames.len(), out.display());
            Ok(())
        }
        Command::Stitch {
            mode,
            reference,
            target,
            meshes,
            out,
            config,
            beta,
            window,
        } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(m) = mode {
                cfg.mode = m.into();
            }
            if let Some(b) = beta {
                cfg.beta = b;
            }
            if let Some(n) = window {
                cfg.window = n;
            }
            cfg.validate()?;
            let report = out.join("report.json");
            stitch_or_eval(cfg, &reference, &target, meshes.as_deref(), Some(&out), &report)
        }
        Command::Eval {
            reference,
            target,
            out,
            config,
            mode,
            meshes,
        } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(m) = mode {
                cfg.mode = m.into();
            }
            stitch_or_eval(cfg, &reference, &target, meshes.as_deref(), None, &out)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
