//! `speckle-rng`: simulate speckle datasets, extract random bits and test them.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use speckle_rng::pipeline::{self, PipelineConfig};
use speckle_rng::Error;

#[derive(Parser, Debug)]
#[command(name = "speckle-rng", version, about = "Random bits from simulated optical-PUF speckle")]
struct Cli {
    #[command(flatten)]
    common: Common,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// TOML configuration; every field is optional.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory, overriding `output.dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// PUF seed, overriding `puf.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "SPECKLE_RNG_THREADS")]
    threads: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render the intra and inter datasets to PGM frames.
    Simulate,
    /// Euclidean and Gabor-hash distance statistics of a dataset.
    Characterize,
    /// Min-entropy of the raw frames and the block length it implies.
    Calibrate,
    /// Hash the inter frames into a bitstream.
    Extract(ExtractArgs),
    /// Run the SP800-22 battery on a bitstream.
    Test {
        /// Bitstream file (default: the extracted one).
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// All stages in one run.
    Pipeline(ExtractArgs),
    /// Simulation and extraction throughput.
    Bench {
        #[arg(long)]
        block_bits: Option<usize>,
    },
    /// Print the resolved configuration as TOML.
    Config,
}

#[derive(Args, Debug)]
struct ExtractArgs {
    /// Raw bits per SHA-256 block, overriding config and calibration.
    #[arg(long)]
    block_bits: Option<usize>,

    /// Also write the stream as ASCII '0'/'1'.
    #[arg(long)]
    export_ascii: bool,
}

const EXIT_VALIDATION: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_IO: u8 = 3;

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>().map(Error::root) {
        Some(Error::InvalidArgument(_) | Error::Config { .. }) => EXIT_USAGE,
        Some(Error::Io { .. } | Error::Format { .. }) => EXIT_IO,
        Some(_) => EXIT_VALIDATION,
        None => EXIT_USAGE,
    }
}

fn load_config(c: &Common) -> anyhow::Result<PipelineConfig> {
    let mut cfg = match &c.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(out) = &c.out {
        cfg.output.dir = out.clone();
    }
    if let Some(seed) = c.seed {
        cfg.puf.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn verdict(passed: bool) -> &'static str {
    if passed {
        "PASS"
    } else {
        "FAIL"
    }
}

/// Runs the command; `Ok(false)` means a validation verdict failed.
fn run(cli: Cli) -> anyhow::Result<bool> {
    let cfg = load_config(&cli.common)?;
    if let Some(n) = cli.common.threads {
        anyhow::ensure!(n >= 1, Error::Config {
            field: "--threads".into(),
            message: "must be at least 1".into(),
        });
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    let out = cfg.out_dir().display().to_string();
    match cli.command {
        Command::Config => print!("{}", cfg.to_toml()),
        Command::Simulate => {
            let (ds, t) = pipeline::cmd_simulate(&cfg)?;
            println!(
                "simulated {} intra + {} inter frames in {:.2} s -> {out}/dataset",
                ds.intra.len(),
                ds.inter.len(),
                t.seconds
            );
        }
        Command::Characterize => {
            let r = pipeline::cmd_characterize(&cfg)?;
            for (name, c) in [("euclidean", &r.euclidean), ("hamming", &r.hamming)] {
                println!(
                    "{name:<9} intra mean {:.4} [{:.4}, {:.4}]  inter mean {:.4} [{:.4}, {:.4}] cv {:.4}  separated: {}",
                    c.intra.mean, c.intra.min, c.intra.max, c.inter.mean, c.inter.min, c.inter.max, c.inter.cv, c.separated
                );
            }
        }
        Command::Calibrate => {
            let r = pipeline::cmd_calibrate(&cfg)?;
            let e = &r.entropy;
            println!(
                "h_min {:.3} bits/pixel (p_max {:.5}, {} samples), extraction ratio {:.3}, block {} bits",
                e.h_min, e.p_max, e.samples, e.extraction_ratio, e.block_bits
            );
        }
        Command::Extract(a) => {
            let (rec, t) = pipeline::cmd_extract(&cfg, a.block_bits, a.export_ascii)?;
            println!(
                "{} frames, {} raw bits -> {} random bits ({} blocks of {} bits, from {:?})",
                rec.frames, rec.raw_bits, rec.output_bits, rec.blocks, rec.extractor.block_bits, rec.block_bits_source
            );
            println!(
                "extraction {:.1} Mbit/s (simulation excluded; reference 0.96 Gbit/s optical), sha256 {}",
                t.bits_per_second / 1e6,
                rec.bitstream_sha256
            );
        }
        Command::Test { input } => {
            let r = pipeline::cmd_test(&cfg, input.as_deref())?;
            print!("{}", r.report.table());
            println!("overall: {}", verdict(r.report.passed));
            return Ok(r.report.passed);
        }
        Command::Pipeline(a) => {
            let s = pipeline::cmd_pipeline(&cfg, a.block_bits, a.export_ascii)?;
            println!("frames            {}", s.frames);
            println!("euclidean split   {}", s.euclidean_separated);
            println!("inter HD          mean {:.4} cv {:.4}", s.inter_hd_mean, s.inter_hd_cv);
            println!("h_min             {:.3}", s.h_min);
            println!("block_bits        {} ({:?})", s.block_bits, s.block_bits_source);
            println!("output bits       {}", s.output_bits);
            println!("bitstream sha256  {}", s.bitstream_sha256);
            println!(
                "pattern |rho|     {:.2e} (bound {:.2e}) {}",
                s.pattern_correlation.rho.abs(),
                s.pattern_correlation.bound,
                verdict(s.pattern_correlation.within_bound)
            );
            println!(
                "frame |rho|       raw {:.2e} hashed {:.2e} (max {:.2e}, bound {:.2e})",
                s.decorrelation.raw_mean_abs,
                s.decorrelation.hashed_mean_abs,
                s.decorrelation.hashed_max_abs,
                s.decorrelation.bound
            );
            println!("battery           {}", verdict(s.battery_passed));
            println!("overall           {}  (reports in {out})", verdict(s.passed));
            return Ok(s.passed);
        }
        Command::Bench { block_bits } => {
            let r = pipeline::cmd_bench(&cfg, block_bits)?;
            print!("{}", r.table());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_VALIDATION),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
