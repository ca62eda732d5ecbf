use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use driftct::config::RunConfig;
use driftct::pipeline::{self, NoiseMode, PipelineError};

#[derive(Parser)]
#[command(name = "driftct", version = pipeline::VERSION, about = "One-step conditional image synthesis with drift-field training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArg {
    /// Run config (TOML). Defaults apply when omitted.
    #[arg(long, alias = "spec")]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct NoiseArgs {
    /// Base noise seed.
    #[arg(long, default_value_t = 0, conflicts_with = "no_noise")]
    seed: u64,
    /// Switch the noise input off (deterministic output).
    #[arg(long)]
    no_noise: bool,
}

impl NoiseArgs {
    fn mode(&self) -> NoiseMode {
        if self.no_noise {
            NoiseMode::Off
        } else {
            NoiseMode::Seeded(self.seed)
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate paired phantom volumes and a manifest.
    Phantom {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        count: usize,
    },
    /// Resample, crop/pad and normalize every pair in a directory.
    Prep {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Train a generator on preprocessed pairs.
    Train {
        #[arg(long)]
        data: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a prediction for every condition volume.
    Infer {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        noise: NoiseArgs,
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Per-slice SSIM/PSNR/RMSE of predictions against targets, as CSV.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Per-pixel standard deviation over repeated generations.
    Uncertainty {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Number of generations per map (config value when omitted).
        #[arg(long = "K", alias = "k")]
        k: Option<usize>,
        #[command(flatten)]
        noise: NoiseArgs,
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Compare the production drift field with the brute-force reference.
    Driftcheck {
        /// Sample dimensions to draw from.
        #[arg(long, num_args = 1.., value_delimiter = ',')]
        sizes: Option<Vec<usize>>,
        #[arg(long, default_value_t = 100)]
        instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-12)]
        tol: f64,
    },
    /// Time one-step generation.
    Bench {
        /// Checkpoint to time; a freshly initialized generator when omitted.
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long, default_value_t = 20)]
        reps: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        /// Write the timing CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArg,
    },
}

fn load(c: &ConfigArg) -> Result<RunConfig, PipelineError> {
    Ok(RunConfig::load_or_default(c.config.as_deref())?)
}

fn required(flag: Option<PathBuf>, fallback: &Option<PathBuf>, name: &str) -> Result<PathBuf, PipelineError> {
    flag.or_else(|| fallback.clone())
        .ok_or_else(|| PipelineError::Usage(format!("--{name} is required (or set paths.{name} in the config)")))
}

fn write_out(path: &Path, text: &str) -> Result<(), PipelineError> {
    std::fs::write(path, text).map_err(|source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    match cli.command {
        Command::Phantom { config, out, count } => {
            let cfg = load(&config)?;
            let out = required(out, &cfg.paths.out, "out")?;
            let (manifest, digest) = pipeline::phantom(&cfg, &out, count)?;
            println!("wrote {} subjects to {} (manifest sha256 {digest})", manifest.count, out.display());
        }
        Command::Prep { input, out, config } => {
            let cfg = load(&config)?;
            let recs = pipeline::prep(&cfg, &input, &out)?;
            println!("preprocessed {} subjects into {}", recs.len(), out.display());
        }
        Command::Train { data, config, out } => {
            let cfg = load(&config)?;
            let data = required(data, &cfg.paths.data, "data")?;
            let out = required(out, &cfg.paths.out, "out")?;
            let run = pipeline::train_run(&cfg, &data, &out)?;
            let o = &run.outcome;
            println!(
                "trained {} epochs{}; best validation L1 {:.5} (initial {:.5}); outputs in {}",
                o.history.len(),
                if o.stopped_early { " (early stop)" } else { "" },
                o.best_val_l1,
                o.initial_val_l1,
                out.display()
            );
        }
        Command::Infer {
            ckpt,
            input,
            out,
            noise,
            config,
        } => {
            let cfg = load(&config)?;
            let subjects = pipeline::infer(&cfg, &ckpt, &input, &out, noise.mode())?;
            println!("generated {} volumes into {}", subjects.len(), out.display());
        }
        Command::Eval {
            pred,
            reference,
            out,
            config,
        } => {
            let cfg = load(&config)?;
            let report = pipeline::eval(&cfg, &pred, &reference, &out)?;
            let (s, p, r) = report.summary();
            println!(
                "{} slices: ssim {:.4} ± {:.4}, psnr {:.2} ± {:.2} dB, rmse {:.4} ± {:.4} (per-subject means)",
                report.rows.len(),
                s.mean,
                s.std,
                p.mean,
                p.std,
                r.mean,
                r.std
            );
        }
        Command::Uncertainty {
            ckpt,
            input,
            out,
            k,
            noise,
            config,
        } => {
            let cfg = load(&config)?;
            let k = k.unwrap_or(cfg.metrics.uncertainty_samples);
            let maxima = pipeline::uncertainty(&cfg, &ckpt, &input, &out, k, noise.mode())?;
            for (subject, max) in maxima {
                println!("{subject}: max std {max:.6}");
            }
        }
        Command::Driftcheck {
            sizes,
            instances,
            seed,
            tol,
        } => {
            let s = pipeline::driftcheck(sizes, instances, seed, tol)?;
            println!(
                "{} instances: max relative error {:.3e} <= {tol:.0e} ({:.2}s)",
                s.instances,
                s.max_relative_error,
                s.elapsed.as_secs_f64()
            );
        }
        Command::Bench {
            ckpt,
            reps,
            size,
            out,
            config,
        } => {
            let cfg = load(&config)?;
            let rec = pipeline::bench(&cfg, ckpt.as_deref(), size, reps)?;
            let csv = pipeline::timing_csv(&rec);
            match out {
                Some(path) => {
                    write_out(&path, &csv)?;
                    println!("median {:.3} ms over {} reps", rec.median_ms, rec.reps);
                }
                None => print!("{csv}"),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let mut msg = e.to_string();
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                let text = s.to_string();
                if !msg.contains(&text) {
                    msg = format!("{msg}: {text}");
                }
                source = s.source();
            }
            eprintln!("error: {msg}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
