use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gs4d::codec::BitPolicy;
use gs4d_cli::commands as cmd;
use gs4d_cli::error::CliError;
use gs4d_cli::{CliResult, PipelineConfig};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "gs4d", version, about = "Temporal Gaussian kernel pipeline: synth, track, warp, optimize, encode, decode, stats")]
struct Cli {
    /// Pipeline configuration (TOML); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (0 = all cores). Results do not depend on it.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

/// Flags that override the configuration file.
#[derive(Args)]
struct Overrides {
    #[arg(long, global = true)]
    frames: Option<usize>,
    #[arg(long, global = true)]
    kernels: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    iterations: Option<usize>,
    #[arg(long, global = true)]
    segment_length: Option<usize>,
}

impl Overrides {
    fn apply(&self, cfg: &mut PipelineConfig) {
        if let Some(v) = self.frames {
            cfg.sequence.frames = v;
        }
        if let Some(v) = self.kernels {
            cfg.scene.kernel_count = v;
        }
        if let Some(v) = self.seed {
            cfg.scene.seed = v;
        }
        if let Some(v) = self.iterations {
            cfg.optimize.iterations = v;
        }
        if let Some(v) = self.segment_length {
            cfg.segment_length = v;
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Configuration files.
    Config {
        #[command(subcommand)]
        action: ConfigAction,
    },
    /// Generate a synthetic ground-truth sequence.
    Synth {
        #[arg(long)]
        out: PathBuf,
    },
    /// Track ED motion per frame from correspondences.
    Track {
        #[arg(long)]
        seq: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Warp segment keyframes by the tracked motion.
    Warp {
        #[arg(long)]
        seq: PathBuf,
        #[arg(long)]
        track: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Optimise warped frames against the target images.
    Optimize {
        #[arg(long)]
        seq: PathBuf,
        #[arg(long)]
        track: PathBuf,
        #[arg(long)]
        warp: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compress frames into one container per segment.
    Encode(EncodeArgs),
    /// Reconstruct frames from containers.
    Decode {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Encoder input frames; checks every group against its step/2 bound.
        #[arg(long)]
        reference: Option<PathBuf>,
    },
    /// Render frames from a camera file to PNG.
    Render {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        cameras: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// PSNR and storage per frame, or raw storage arithmetic.
    Stats(StatsArgs),
    /// synth → track → warp → optimize → encode → decode → stats.
    Pipeline {
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum ConfigAction {
    /// Write the full default configuration.
    Init {
        /// Destination file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Config,
    HighBitNoResidual,
    LowBitNoResidual,
}

#[derive(Args)]
struct EncodeArgs {
    #[arg(long)]
    input: PathBuf,
    /// Tracking output; required for residual coding.
    #[arg(long)]
    track: Option<PathBuf>,
    /// Target sequence; enables the motion-only fine-tune.
    #[arg(long)]
    seq: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "config")]
    preset: Preset,
    /// Code every frame on its own.
    #[arg(long)]
    no_residual: bool,
    #[arg(long)]
    key_motion_bits: Option<u8>,
    #[arg(long)]
    key_appearance_bits: Option<u8>,
    #[arg(long)]
    motion_bits: Option<u8>,
    #[arg(long)]
    appearance_bits: Option<u8>,
}

impl EncodeArgs {
    fn policy(&self, cfg: &PipelineConfig) -> BitPolicy {
        let mut p = match self.preset {
            Preset::Config => cfg.codec.clone(),
            Preset::HighBitNoResidual => BitPolicy::high_bit_no_residual(),
            Preset::LowBitNoResidual => BitPolicy::low_bit_no_residual(),
        };
        if self.no_residual {
            p.residual = false;
        }
        let set = |slot: &mut u8, v: Option<u8>| {
            if let Some(v) = v {
                *slot = v;
            }
        };
        set(&mut p.key_motion, self.key_motion_bits);
        set(&mut p.key_appearance, self.key_appearance_bits);
        set(&mut p.motion, self.motion_bits);
        set(&mut p.appearance, self.appearance_bits);
        p
    }
}

#[derive(Args)]
struct StatsArgs {
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    cameras: Option<PathBuf>,
    /// Sequence directory holding the target images.
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Encode directory, for per-frame storage.
    #[arg(long)]
    encoded: Option<PathBuf>,
    /// CSV file, or a directory to hold stats.csv.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print raw per-frame storage for this many kernels instead.
    #[arg(long, conflicts_with_all = ["input", "cameras", "reference", "encoded"])]
    raw_kernels: Option<usize>,
    #[arg(long, default_value_t = 3)]
    sh_degree: u8,
}

fn required<'a>(v: &'a Option<PathBuf>, flag: &str) -> CliResult<&'a Path> {
    v.as_deref().ok_or_else(|| CliError::input(format!("--{flag} is required")))
}

fn print<T: Serialize>(value: &T) {
    println!("{}", serde_json::to_string(value).expect("serialisable"));
}

fn run(cli: Cli) -> CliResult<()> {
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .map_err(|e| CliError::input(format!("thread pool: {e}")))?;
    }
    let mut cfg = PipelineConfig::load_or_default(cli.config.as_deref())?;
    cli.overrides.apply(&mut cfg);
    cfg.validate()?;
    match cli.command {
        Command::Config {
            action: ConfigAction::Init { out },
        } => match out {
            Some(p) => gs4d::io::write_bytes(&p, cfg.to_toml().as_bytes())?,
            None => print!("{}", cfg.to_toml()),
        },
        Command::Synth { out } => print(&cmd::cmd_synth(&cfg, &out)?),
        Command::Track { seq, out } => {
            let rows = cmd::cmd_track(&seq, &cfg, &out)?;
            print(&serde_json::json!({ "frames": rows.len(), "report": out.join(cmd::TRACK_REPORT) }));
        }
        Command::Warp { seq, track, out } => {
            print(&serde_json::json!({ "frames": cmd::cmd_warp(&seq, &track, &out)? }));
        }
        Command::Optimize { seq, track, warp, out } => {
            let rows = cmd::cmd_optimize(&seq, &track, &warp, &cfg, &out)?;
            let min = rows.iter().map(|r| r.min_psnr).fold(f64::INFINITY, f64::min);
            print(&serde_json::json!({ "frames": rows.len(), "min_psnr": min }));
        }
        Command::Encode(args) => {
            let policy = args.policy(&cfg);
            for row in cmd::cmd_encode(&args.input, args.track.as_deref(), args.seq.as_deref(), &policy, &cfg, &args.out)? {
                print(&row);
            }
        }
        Command::Decode { input, out, reference } => {
            let rows = cmd::cmd_decode(&input, reference.as_deref(), &out)?;
            if reference.is_some() {
                print(&serde_json::json!({
                    "checked": rows.len(),
                    "worst_ratio": rows.iter().map(|r| r.worst_ratio).fold(0.0, f64::max),
                }));
            }
        }
        Command::Render { input, cameras, out } => {
            print(&serde_json::json!({ "images": cmd::cmd_render(&input, &cameras, &cfg.sequence.raster, &out)? }));
        }
        Command::Stats(args) => match args.raw_kernels {
            Some(n) => print(&cmd::raw_storage(n, args.sh_degree)),
            None => {
                let input = required(&args.input, "input")?;
                let rows = cmd::cmd_stats(
                    input,
                    required(&args.cameras, "cameras")?,
                    required(&args.reference, "reference")?,
                    args.encoded.as_deref(),
                    &cfg.sequence.raster,
                    &args.out.clone().unwrap_or_else(|| input.join(cmd::STATS_REPORT)),
                )?;
                let min = rows.iter().map(|r| r.psnr_db).fold(f64::INFINITY, f64::min);
                print(&serde_json::json!({ "rows": rows.len(), "min_psnr": min }));
            }
        },
        Command::Pipeline { out } => {
            let summary = cmd::cmd_pipeline(&cfg, &out)?;
            print(&summary);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code() as u8)
        }
    }
}
