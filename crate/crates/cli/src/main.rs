//! `sigle`: experiment driver for post-selection inference in sparse
//! logistic regression.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use sigle_core::event::{bitstring, enumerate_event, EventSpec, DEFAULT_N_CAP};
use sigle_core::experiment::{first_selection_problem, write_csv, Experiment, ExperimentConfig};
use sigle_core::sampler::hamming_matrix;
use sigle_core::{solve_gll, SigleError};

#[derive(Parser)]
#[command(name = "sigle", version, about = "Post-selection inference for l1-penalized logistic regression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML experiment configuration.
    #[arg(long)]
    config: PathBuf,
    /// Override the design seed (also read from SIGLE_SEED).
    #[arg(long, env = "SIGLE_SEED")]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; defaults to all cores.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the lasso on the selection draw and write its certificate.
    Solve(Common),
    /// Enumerate the selection event (N <= 20).
    Enumerate(Common),
    /// Run one null chain and dump its trace and the Hamming matrix of the
    /// visited event members.
    Sample {
        #[command(flatten)]
        common: Common,
        /// Keep every k-th step in the trace.
        #[arg(long, default_value_t = 1)]
        stride: usize,
        /// Cap on the number of distinct states in the Hamming matrix.
        #[arg(long, default_value_t = 500)]
        hamming_cap: usize,
    },
    /// Per-replicate p-values of every configured method.
    Test(Common),
    /// Power at the configured level over a grid of signal strengths.
    Power(Common),
    /// Confidence region around the selection draw.
    Cr(Common),
}

struct Context_ {
    experiment: Experiment,
    out: PathBuf,
}

fn load(common: &Common) -> Result<(ExperimentConfig, PathBuf)> {
    let text = fs::read_to_string(&common.config).with_context(|| format!("reading {}", common.config.display()))?;
    let mut cfg: ExperimentConfig = toml::from_str(&text).with_context(|| format!("parsing {}", common.config.display()))?;
    if let Some(seed) = common.seed {
        cfg.design.seed = seed;
    }
    let out = common.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.output));
    if let Some(t) = common.threads {
        rayon::ThreadPoolBuilder::new().num_threads(t).build_global()?;
    }
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    Ok((cfg, out))
}

fn setup(common: &Common) -> Result<Context_> {
    let (cfg, out) = load(common)?;
    Ok(Context_ {
        experiment: Experiment::setup(cfg)?,
        out,
    })
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let f = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    serde_json::to_writer_pretty(f, value)?;
    Ok(())
}

fn cmd_solve(common: &Common) -> Result<()> {
    let (cfg, out) = load(common)?;
    let prob = first_selection_problem(&cfg)?;
    let cert = solve_gll(&prob, cfg.solver)?;
    write_json(&out.join("certificate.json"), &cert)?;
    println!(
        "support {:?}  kkt residual {:.3e}  iterations {}",
        cert.support, cert.kkt_residual, cert.iterations
    );
    Ok(())
}

fn cmd_enumerate(common: &Common) -> Result<()> {
    let (cfg, out) = load(common)?;
    let prob = first_selection_problem(&cfg)?;
    let (spec, _) = EventSpec::from_observation(&prob, cfg.delta, cfg.solver)?;
    let ev = enumerate_event(&spec, DEFAULT_N_CAP)?;
    write_json(&out.join("event.json"), &ev)?;
    println!("support {:?}  |E_M| = {} of 2^{}", ev.support, ev.len(), ev.n);
    Ok(())
}

fn cmd_sample(common: &Common, stride: usize, hamming_cap: usize) -> Result<()> {
    let ctx = setup(common)?;
    let e = &ctx.experiment;
    let chain = e.chain(&e.pi_null, 2)?;
    let f = BufWriter::new(File::create(ctx.out.join("trace.jsonl"))?);
    chain.write_trace(f, Some(&e.pi_null), stride)?;
    let mut members: Vec<Vec<u8>> = chain
        .iter_states()
        .zip(&chain.in_event)
        .filter(|(_, &inside)| inside)
        .map(|(y, _)| y.to_vec())
        .collect();
    members.sort();
    members.dedup();
    members.truncate(hamming_cap);
    let h = hamming_matrix(&members);
    let states: Vec<String> = members.iter().map(|y| bitstring(y)).collect();
    write_json(
        &ctx.out.join("hamming.json"),
        &serde_json::json!({ "states": states, "normalized_distance": h }),
    )?;
    println!(
        "{} steps, occupation {:.4}, {} distinct members",
        chain.len(),
        chain.occupation(),
        members.len()
    );
    Ok(())
}

fn cmd_test(common: &Common) -> Result<()> {
    let ctx = setup(common)?;
    let study = ctx.experiment.test_study()?;
    write_csv(File::create(ctx.out.join("pvalues.csv"))?, &study.rows)?;
    write_json(&ctx.out.join("summary.json"), &study.summary)?;
    for (m, r) in &study.summary.rejection_rates {
        println!("{m:>10}  rejection rate {r:.4}");
    }
    Ok(())
}

fn cmd_power(common: &Common) -> Result<()> {
    let ctx = setup(common)?;
    let rows = ctx.experiment.power_study()?;
    write_csv(File::create(ctx.out.join("power.csv"))?, &rows)?;
    for r in &rows {
        println!("nu {:<6} {:>10}  power {:.4}", r.nu, r.method, r.power);
    }
    Ok(())
}

fn cmd_cr(common: &Common) -> Result<()> {
    let ctx = setup(common)?;
    let report = ctx.experiment.region()?;
    write_json(&ctx.out.join("region.json"), &report)?;
    println!("radius {:.6}", report.radius);
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<SigleError>() {
        Some(SigleError::NonConvergence { .. }) => 2,
        Some(SigleError::InvalidInput(_)) | Some(SigleError::DimensionMismatch { .. }) => 3,
        Some(SigleError::AcceptanceTooLow { .. })
        | Some(SigleError::InsufficientSamples { .. })
        | Some(SigleError::DegenerateWeights { .. }) => 4,
        Some(_) => 1,
        None if err.downcast_ref::<toml::de::Error>().is_some() => 3,
        None => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Solve(c) => cmd_solve(c),
        Command::Enumerate(c) => cmd_enumerate(c),
        Command::Sample {
            common,
            stride,
            hamming_cap,
        } => cmd_sample(common, *stride, *hamming_cap),
        Command::Test(c) => cmd_test(c),
        Command::Power(c) => cmd_power(c),
        Command::Cr(c) => cmd_cr(c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
