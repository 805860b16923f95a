use std::io::ErrorKind;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mrdiff::pipeline::{self, LoadedModel};
use mrdiff::sampling::SampleConfig;
use mrdiff::toolkit::config::RunConfig;
use mrdiff::toolkit::{synth_dataset, DatasetSpec, Family};
use mrdiff::Error;

/// Mean-reverting SDE diffusion super-resolution.
#[derive(Parser)]
#[command(name = "mrdiff", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a denoiser from a config file.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Override the config's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Super-resolve a PNG or a directory of PNGs.
    Sample {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Reverse steps (default: every schedule step).
        #[arg(long)]
        steps: Option<usize>,
        /// Drop the diffusion term and start from a fixed noise draw.
        #[arg(long)]
        deterministic: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Score predictions against ground truth, pairing files by name.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Write a synthetic HR dataset.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        count: usize,
        #[arg(long)]
        size: usize,
        #[arg(long)]
        scale: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value = "mixed")]
        family: Family,
    },
    /// Run the built-in oracle suites.
    Selfcheck {
        /// Tenfold smaller Monte-Carlo runs.
        #[arg(long)]
        quick: bool,
    },
}

enum Failure {
    Usage(String),
    Internal(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match &e {
            Error::Io { source, .. } if source.kind() == ErrorKind::NotFound => Failure::Usage(e.to_string()),
            Error::Config(_) | Error::InvalidArgument(_) => Failure::Usage(e.to_string()),
            _ => Failure::Internal(e.to_string()),
        }
    }
}

fn run(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Train { config, resume, seed } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.train.seed = s;
            }
            let total = cfg.train.iterations;
            let rows = pipeline::train(&cfg, resume.as_deref(), |row| {
                if row.iteration % 50 == 0 || row.iteration == total {
                    eprintln!("iter {:>7}  loss {:.6}  lr {:.3e}", row.iteration, row.loss, row.lr);
                }
            })?;
            println!("trained {} iterations; outputs in {}", rows.len(), cfg.out_dir.display());
        }
        Command::Sample { ckpt, input, out, steps, deterministic, seed } => {
            let model = LoadedModel::load(&ckpt)?;
            let inputs = pipeline::input_pngs(&input)?;
            if inputs.is_empty() {
                return Err(Failure::Usage(format!("no PNG files in {}", input.display())));
            }
            let cfg = SampleConfig { steps, stochastic: !deterministic, seed };
            let written = pipeline::sample_files(&model, &inputs, &out, &cfg)?;
            println!("wrote {} images to {}", written.len(), out.display());
        }
        Command::Eval { pred, gt, report } => match pipeline::evaluate_dirs(&pred, &gt)? {
            Ok(r) => {
                let file = std::fs::File::create(&report).map_err(|e| Error::Io { path: report.clone(), source: e })?;
                r.write_csv(file)?;
                let (p, s, a) = r.means();
                println!("{} images: psnr {p:.3} dB  ssim {s:.4}  ag {a:.5}", r.rows.len());
                println!("ag = mean over pixels of sqrt((dx^2 + dy^2) / 2), forward differences of luminance");
            }
            Err(unpaired) => {
                let mut msg = String::from("unpaired files:");
                for n in &unpaired.only_pred {
                    msg.push_str(&format!("\n  only in {}: {n}", pred.display()));
                }
                for n in &unpaired.only_gt {
                    msg.push_str(&format!("\n  only in {}: {n}", gt.display()));
                }
                return Err(Failure::Usage(msg));
            }
        },
        Command::Synth { out, count, size, scale, seed, family } => {
            let spec = DatasetSpec { count, hr_size: size, scale, seed, family };
            let files = synth_dataset(&spec, &out)?;
            println!("wrote {} images to {}", files.len(), out.display());
        }
        Command::Selfcheck { quick } => {
            let report = mrdiff::selfcheck::run(quick)?;
            print!("{report}");
            if !report.passed() {
                return Err(Failure::Internal("self-check failed".into()));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Internal(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
