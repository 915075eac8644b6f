use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use patchnet::cli;
use patchnet::tracking::KeyframePolicy;
use patchnet::util::thread_limit_from_env;

#[derive(Parser)]
#[command(name = "patchnet", about = "Patch-wise correlation template matcher")]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyKind {
    Fixed,
    Online,
}

#[derive(Subcommand)]
enum Command {
    /// Train on synthetic motion pairs and write a weight file.
    Train {
        /// Flat key=value config file ('#' comments).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output weight file.
        #[arg(long)]
        out: PathBuf,
        /// CSV loss log (default: <out>.log.csv).
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Track a PPM sequence under a skip-frame keyframe policy.
    Track {
        #[arg(long)]
        weights: PathBuf,
        /// Sequence directory: frame_%06d.ppm + groundtruth.txt.
        #[arg(long)]
        seq: PathBuf,
        #[arg(long, value_enum, default_value = "fixed")]
        policy: PolicyKind,
        /// Keyframe interval for the fixed policy.
        #[arg(long, default_value_t = 5)]
        interval: usize,
        /// Confidence threshold for the online policy (self-calibrates when
        /// omitted).
        #[arg(long)]
        conf_threshold: Option<f64>,
        /// Inter-frame limit for the online policy.
        #[arg(long, default_value_t = 10)]
        max_inter: usize,
        /// Per-keyframe oracle cost used for the average-FLOP summary.
        #[arg(long, default_value_t = 2.5e9)]
        oracle_flops: f64,
        /// Results CSV (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Emit the analytic FLOP report (ablation rows + patch-size sweep).
    Flops {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Center-error-vs-scale comparison against whole-template correlation.
    ScaleSweep {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long, default_value_t = 100)]
        objects: usize,
        /// Comma-separated scale factors.
        #[arg(long, default_value = "0.7,0.8,0.9,1.0,1.1,1.2,1.3,1.4")]
        scales: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the oracle-equivalence and gradient-check suites.
    Selftest,
}

fn run() -> patchnet::Result<()> {
    let args = Args::parse();
    let threads = thread_limit_from_env();
    match args.command {
        Command::Train {
            config,
            out,
            log,
            seed,
        } => cli::cmd_train(config.as_deref(), &out, log.as_deref(), seed, threads),
        Command::Track {
            weights,
            seq,
            policy,
            interval,
            conf_threshold,
            max_inter,
            oracle_flops,
            out,
        } => {
            let policy = match policy {
                PolicyKind::Fixed => KeyframePolicy::Fixed { interval },
                PolicyKind::Online => KeyframePolicy::Online {
                    conf_threshold,
                    max_inter,
                },
            };
            cli::cmd_track(&weights, &seq, policy, out.as_deref(), oracle_flops, threads)
                .map(|_| ())
        }
        Command::Flops { config, out } => {
            let csv = cli::cmd_flops(config.as_deref(), out.as_deref())?;
            if out.is_none() {
                print!("{csv}");
            }
            Ok(())
        }
        Command::ScaleSweep {
            weights,
            objects,
            scales,
            seed,
            out,
        } => {
            let scales: Vec<f64> = scales
                .split(',')
                .filter(|s| !s.trim().is_empty())
                .map(|s| {
                    s.trim().parse::<f64>().map_err(|_| {
                        patchnet::Error::InvalidArgument(format!("bad scale value {s:?}"))
                    })
                })
                .collect::<patchnet::Result<_>>()?;
            cli::cmd_scale_sweep(&weights, objects, &scales, seed, out.as_deref()).map(|_| ())
        }
        Command::Selftest => cli::cmd_selftest(),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
