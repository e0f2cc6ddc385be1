use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use ndarray::Array1;
use serde::{Deserialize, Serialize};

use smo_bench::experiment::{markdown_summary, run_experiment, write_reports, ExperimentConfig};
use smo_bench::instance;
use smo_core::kkt::{kkt_report, LowerValueOracle};
use smo_core::model::Multipliers;

#[derive(Parser)]
#[command(name = "bench", about = "Benchmark harness for the bilevel solver")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run an experiment grid from a JSON config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Override every family's seed list with this single seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (overrides the config's out_dir).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads; BENCH_THREADS overrides this flag.
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Generate a single instance and write it as JSON.
    Gen {
        #[arg(long)]
        family: String,
        /// Comma-separated n,m,l.
        #[arg(long)]
        dims: String,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Verify a candidate point against an instance file.
    Verify {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long)]
        point: PathBuf,
    },
}

/// Candidate point file for `bench verify`.
#[derive(Serialize, Deserialize)]
struct PointFile {
    x: Vec<f64>,
    y: Vec<f64>,
    z: Vec<f64>,
    #[serde(default)]
    lam: Vec<f64>,
    rho: f64,
    mu: f64,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.cmd {
        Cmd::Run {
            config,
            seed,
            out,
            jobs,
        } => {
            let text = fs::read_to_string(&config)
                .with_context(|| format!("reading {}", config.display()))?;
            let mut cfg: ExperimentConfig =
                serde_json::from_str(&text).context("parsing experiment config")?;
            if let Some(s) = seed {
                for fam in &mut cfg.families {
                    fam.seeds = vec![s];
                }
            }
            let jobs = std::env::var("BENCH_THREADS")
                .ok()
                .and_then(|v| v.parse::<usize>().ok())
                .or(jobs);
            let records = run_experiment(&cfg, jobs)?;
            let out_dir = out.or_else(|| cfg.out_dir.clone());
            match out_dir {
                Some(dir) => {
                    write_reports(&records, &dir)?;
                    eprintln!(
                        "wrote {} records to {}",
                        records.len(),
                        dir.join("results.csv").display()
                    );
                }
                None => print!("{}", markdown_summary(&records)),
            }
            Ok(())
        }
        Cmd::Gen {
            family,
            dims,
            seed,
            out,
        } => {
            let parts: Vec<usize> = dims
                .split(',')
                .map(|t| t.trim().parse::<usize>())
                .collect::<std::result::Result<_, _>>()
                .context("parsing --dims as comma-separated integers")?;
            if parts.len() != 3 {
                bail!("--dims must be n,m,l");
            }
            let (n, m, l) = (parts[0], parts[1], parts[2]);
            let data = match family.as_str() {
                "linear" => instance::gen_linear(n, m, l, seed)?,
                "quadlinear" => instance::gen_quadlinear(n, m, l, seed)?,
                other => bail!("unknown family '{other}' (expected linear or quadlinear)"),
            };
            fs::write(&out, serde_json::to_string_pretty(&data)?)
                .with_context(|| format!("writing {}", out.display()))?;
            eprintln!("wrote {} to {}", data.id(), out.display());
            Ok(())
        }
        Cmd::Verify { instance, point } => {
            let data: instance::InstanceData =
                serde_json::from_str(&fs::read_to_string(&instance)?)
                    .context("parsing instance JSON")?;
            let pf: PointFile =
                serde_json::from_str(&fs::read_to_string(&point)?).context("parsing point JSON")?;
            let prob = instance::to_problem(&data)?;
            let lam = if pf.lam.is_empty() {
                Multipliers::zeros(prob.g.n_constraints)
            } else {
                Multipliers::new(Array1::from_vec(pf.lam))?
            };
            let report = kkt_report(
                &prob,
                &Array1::from_vec(pf.x),
                &Array1::from_vec(pf.y),
                &Array1::from_vec(pf.z),
                &lam,
                pf.rho,
                pf.mu,
                &LowerValueOracle::with_tolerance(1e-8),
            )?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(())
        }
    }
}
