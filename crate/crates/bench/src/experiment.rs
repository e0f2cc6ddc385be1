//! Experiment driver: runs method x instance grids, collects per-run
//! metrics, and writes CSV plus a markdown summary.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baseline::penalty_baseline;
use crate::instance::{self, InstanceData};
use crate::svm;
use smo_core::kkt::{kkt_report, LowerValueOracle};
use smo_core::minimax::SaddleCaps;
use smo_core::model::{positive_part, BilevelProblem, Multipliers, VecF};
use smo_core::smo::{run_smo, schedule, OracleCounts, SmoConfig};
use smo_core::{Result, SolverError};

/// One family block of a config file.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FamilySpec {
    /// "linear", "quadlinear", or "svm".
    pub family: String,
    /// `[n, m, l]` for the random families; `[n_samples, q]` for svm.
    pub dims: Vec<usize>,
    pub seeds: Vec<u64>,
}

/// Top-level experiment configuration.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub families: Vec<FamilySpec>,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default = "default_eps0")]
    pub eps0: f64,
    /// Any of "smo", "baseline"; default both.
    #[serde(default = "default_methods")]
    pub methods: Vec<String>,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

fn default_eps() -> f64 {
    1e-2
}
fn default_tau() -> f64 {
    0.8
}
fn default_eps0() -> f64 {
    1.0
}
fn default_methods() -> Vec<String> {
    vec!["smo".into(), "baseline".into()]
}

/// One row of the CSV report.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunRecord {
    pub instance_id: String,
    pub method: String,
    pub n: usize,
    pub m: usize,
    pub l: usize,
    pub seed: u64,
    pub f_init: f64,
    pub f_final: f64,
    pub stat_xy: f64,
    pub stat_z: f64,
    pub feas_y: f64,
    pub feas_z: f64,
    pub compl_y: f64,
    pub compl_z: f64,
    pub value_gap: f64,
    pub grad_calls_f1: u64,
    pub grad_calls_tf1: u64,
    pub grad_calls_g: u64,
    pub prox_calls_f2: u64,
    pub prox_calls_tf2: u64,
    pub outer_iters: u64,
    pub wall_ms: u64,
}

/// A fully materialized unit of work.
enum Job {
    Generated {
        data: InstanceData,
        tau: f64,
    },
    Svm {
        n_samples: usize,
        q: usize,
        seed: u64,
    },
}

struct Solved {
    x: VecF,
    y: VecF,
    z: VecF,
    lam: Multipliers,
    rho: f64,
    mu: f64,
    counts: OracleCounts,
    outer_iters: u64,
}

fn caps() -> SaddleCaps {
    SaddleCaps::default()
}

/// Terminal penalty parameters of the multiplier schedule for a config.
fn terminal_params(eps: f64, tau: f64, eps0: f64) -> (f64, f64, f64) {
    let cfg = SmoConfig {
        eps,
        tau,
        eps0,
        lambda0: None,
        x0: VecF::zeros(1),
        y0: VecF::zeros(1),
        z0: None,
        caps: caps(),
    };
    schedule(&cfg, cfg.k_outer())
}

fn solve_with(
    method: &str,
    prob: &BilevelProblem,
    eps: f64,
    tau: f64,
    eps0: f64,
    x0: &VecF,
    y0: &VecF,
) -> Result<Solved> {
    match method {
        "smo" => {
            let cfg = SmoConfig {
                eps,
                tau,
                eps0,
                lambda0: None,
                x0: x0.clone(),
                y0: y0.clone(),
                z0: None,
                caps: caps(),
            };
            let out = run_smo(prob, &cfg)?;
            let last = out
                .trace
                .iterations
                .last()
                .ok_or_else(|| SolverError::NumericalFailure {
                    context: "empty trace".into(),
                    iteration: 0,
                })?;
            Ok(Solved {
                x: out.x,
                y: out.y,
                z: out.trace.z.clone(),
                lam: out.trace.lambda.clone(),
                rho: last.rho_k,
                mu: last.mu_k,
                counts: out.trace.totals,
                outer_iters: out.trace.iterations.len() as u64,
            })
        }
        "baseline" => {
            let out = penalty_baseline(prob, eps, x0, y0, None, &caps())?;
            // report against the same terminal multiplier-free penalty:
            // lam = 0, with the terminal schedule parameters so that the
            // recovered multipliers are comparable
            let (_, rho_k, mu_k) = terminal_params(eps, tau, eps0);
            Ok(Solved {
                x: out.x,
                y: out.y,
                z: out.z,
                lam: Multipliers::zeros(prob.g.n_constraints),
                rho: rho_k,
                mu: mu_k,
                counts: out.counts,
                outer_iters: 1,
            })
        }
        other => Err(SolverError::InvalidInput(format!(
            "unknown method '{other}'"
        ))),
    }
}

fn run_one(job: &Job, method: &str, cfg: &ExperimentConfig) -> Result<RunRecord> {
    let t0 = Instant::now();
    match job {
        Job::Generated { data, tau } => {
            let prob = instance::to_problem(data)?;
            let x0 = VecF::zeros(data.n);
            let y0 = VecF::zeros(data.m);
            let f_init = instance::initial_objective(data, &prob);
            let solved = solve_with(method, &prob, cfg.eps, *tau, cfg.eps0, &x0, &y0)?;
            let report = kkt_report(
                &prob,
                &solved.x,
                &solved.y,
                &solved.z,
                &solved.lam,
                solved.rho,
                solved.mu,
                &LowerValueOracle::with_tolerance(1e-8),
            )?;
            let f_final = prob.f_value(&solved.x, &solved.y);
            Ok(RunRecord {
                instance_id: data.id(),
                method: method.into(),
                n: data.n,
                m: data.m,
                l: data.l,
                seed: data.seed,
                f_init,
                f_final,
                stat_xy: report.stationarity_xy,
                stat_z: report.stationarity_z,
                feas_y: report.feas_y,
                feas_z: report.feas_z,
                compl_y: report.compl_y,
                compl_z: report.compl_z,
                value_gap: report.value_gap,
                grad_calls_f1: solved.counts.grad_f1 as u64,
                grad_calls_tf1: solved.counts.grad_tf1 as u64,
                grad_calls_g: solved.counts.grad_g as u64,
                prox_calls_f2: solved.counts.prox_f2 as u64,
                prox_calls_tf2: solved.counts.prox_tf2 as u64,
                outer_iters: solved.outer_iters,
                wall_ms: t0.elapsed().as_millis() as u64,
            })
        }
        Job::Svm { n_samples, q, seed } => {
            let data = svm::synthetic(*n_samples, *q, *seed);
            let inst = svm::split(&data, *seed)?;
            let prob = svm::to_problem(&inst);
            let f_init = svm::initial_objective(&inst, 1e-6)?;
            let x0 = VecF::zeros(prob.nx);
            // lower start: entries uniform in [0, 1]; deterministic via
            // the instance seed stream
            let mut y0 = VecF::zeros(prob.ny);
            {
                use rand::prelude::*;
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
                for t in y0.iter_mut() {
                    *t = rng.gen_range(0.0..1.0);
                }
            }
            let solved = solve_with(method, &prob, cfg.eps, 0.9, cfg.eps0, &x0, &y0)?;
            let report = kkt_report(
                &prob,
                &solved.x,
                &solved.y,
                &solved.z,
                &solved.lam,
                solved.rho,
                solved.mu,
                &LowerValueOracle::with_tolerance(1e-7),
            )?;
            let f_final = prob.f_value(&solved.x, &solved.y);
            Ok(RunRecord {
                instance_id: format!("svm-{n_samples}x{q}-s{seed}"),
                method: method.into(),
                n: prob.nx,
                m: prob.ny,
                l: prob.g.n_constraints,
                seed: *seed,
                f_init,
                f_final,
                stat_xy: report.stationarity_xy,
                stat_z: report.stationarity_z,
                feas_y: report.feas_y,
                feas_z: report.feas_z,
                compl_y: report.compl_y,
                compl_z: report.compl_z,
                value_gap: report.value_gap,
                grad_calls_f1: solved.counts.grad_f1 as u64,
                grad_calls_tf1: solved.counts.grad_tf1 as u64,
                grad_calls_g: solved.counts.grad_g as u64,
                prox_calls_f2: solved.counts.prox_f2 as u64,
                prox_calls_tf2: solved.counts.prox_tf2 as u64,
                outer_iters: solved.outer_iters,
                wall_ms: t0.elapsed().as_millis() as u64,
            })
        }
    }
}

/// Expand the config into (job, method) pairs and run them, optionally in
/// parallel. Returns records in deterministic (config) order.
pub fn run_experiment(cfg: &ExperimentConfig, jobs: Option<usize>) -> Result<Vec<RunRecord>> {
    let mut units: Vec<(Job, String)> = Vec::new();
    for fam in &cfg.families {
        match fam.family.as_str() {
            "linear" | "quadlinear" => {
                if fam.dims.len() != 3 {
                    return Err(SolverError::InvalidInput(
                        "linear/quadlinear dims must be [n, m, l]".into(),
                    ));
                }
                let (n, m, l) = (fam.dims[0], fam.dims[1], fam.dims[2]);
                for &seed in &fam.seeds {
                    let data = if fam.family == "linear" {
                        instance::gen_linear(n, m, l, seed)?
                    } else {
                        instance::gen_quadlinear(n, m, l, seed)?
                    };
                    for method in &cfg.methods {
                        units.push((
                            Job::Generated {
                                data: data.clone(),
                                tau: cfg.tau,
                            },
                            method.clone(),
                        ));
                    }
                }
            }
            "svm" => {
                if fam.dims.len() != 2 {
                    return Err(SolverError::InvalidInput(
                        "svm dims must be [n_samples, q]".into(),
                    ));
                }
                for &seed in &fam.seeds {
                    for method in &cfg.methods {
                        units.push((
                            Job::Svm {
                                n_samples: fam.dims[0],
                                q: fam.dims[1],
                                seed,
                            },
                            method.clone(),
                        ));
                    }
                }
            }
            other => {
                return Err(SolverError::InvalidInput(format!(
                    "unknown family '{other}'"
                )))
            }
        }
    }

    let worker = |(job, method): &(Job, String)| run_one(job, method, cfg);
    let results: Vec<Result<RunRecord>> = if let Some(j) = jobs.filter(|&j| j > 1) {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build()
            .map_err(|e| SolverError::InvalidInput(format!("thread pool: {e}")))?;
        pool.install(|| units.par_iter().map(worker).collect())
    } else if jobs.is_none() {
        units.par_iter().map(worker).collect()
    } else {
        units.iter().map(worker).collect()
    };
    results.into_iter().collect()
}

/// Fixed CSV column order.
pub const CSV_HEADER: [&str; 22] = [
    "instance_id",
    "method",
    "n",
    "m",
    "l",
    "seed",
    "f_init",
    "f_final",
    "stat_xy",
    "stat_z",
    "feas_y",
    "feas_z",
    "compl_y",
    "compl_z",
    "value_gap",
    "grad_calls_f1",
    "grad_calls_tf1",
    "grad_calls_g",
    "prox_calls_f2",
    "prox_calls_tf2",
    "outer_iters",
    "wall_ms",
];

/// Write records as CSV.
pub fn write_csv(records: &[RunRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| SolverError::InvalidInput(format!("csv open: {e}")))?;
    w.write_record(CSV_HEADER)
        .map_err(|e| SolverError::InvalidInput(format!("csv write: {e}")))?;
    for r in records {
        w.write_record(&[
            r.instance_id.clone(),
            r.method.clone(),
            r.n.to_string(),
            r.m.to_string(),
            r.l.to_string(),
            r.seed.to_string(),
            format!("{:.6}", r.f_init),
            format!("{:.6}", r.f_final),
            format!("{:.3e}", r.stat_xy),
            format!("{:.3e}", r.stat_z),
            format!("{:.3e}", r.feas_y),
            format!("{:.3e}", r.feas_z),
            format!("{:.3e}", r.compl_y),
            format!("{:.3e}", r.compl_z),
            format!("{:.3e}", r.value_gap),
            r.grad_calls_f1.to_string(),
            r.grad_calls_tf1.to_string(),
            r.grad_calls_g.to_string(),
            r.prox_calls_f2.to_string(),
            r.prox_calls_tf2.to_string(),
            r.outer_iters.to_string(),
            r.wall_ms.to_string(),
        ])
        .map_err(|e| SolverError::InvalidInput(format!("csv write: {e}")))?;
    }
    w.flush()
        .map_err(|e| SolverError::InvalidInput(format!("csv flush: {e}")))?;
    Ok(())
}

/// Render a markdown table grouped by method, with an averages row per
/// method.
pub fn markdown_summary(records: &[RunRecord]) -> String {
    let mut out = String::new();
    out.push_str(
        "| instance | method | f_init | f_final | feas_y | value_gap | grads | outer | ms |\n",
    );
    out.push_str("|---|---|---|---|---|---|---|---|---|\n");
    let mut methods: Vec<&str> = Vec::new();
    for r in records {
        if !methods.contains(&r.method.as_str()) {
            methods.push(&r.method);
        }
    }
    for method in &methods {
        let rows: Vec<&RunRecord> = records.iter().filter(|r| r.method == *method).collect();
        for r in &rows {
            out.push_str(&format!(
                "| {} | {} | {:.3} | {:.3} | {:.2e} | {:.2e} | {} | {} | {} |\n",
                r.instance_id,
                r.method,
                r.f_init,
                r.f_final,
                r.feas_y,
                r.value_gap,
                r.grad_calls_f1 + r.grad_calls_tf1 + r.grad_calls_g,
                r.outer_iters,
                r.wall_ms
            ));
        }
        if !rows.is_empty() {
            let k = rows.len() as f64;
            let avg = |f: &dyn Fn(&RunRecord) -> f64| rows.iter().map(|r| f(r)).sum::<f64>() / k;
            out.push_str(&format!(
                "| **avg** | {} | {:.3} | {:.3} | {:.2e} | {:.2e} | {:.0} | {:.1} | {:.0} |\n",
                method,
                avg(&|r| r.f_init),
                avg(&|r| r.f_final),
                avg(&|r| r.feas_y),
                avg(&|r| r.value_gap),
                avg(&|r| (r.grad_calls_f1 + r.grad_calls_tf1 + r.grad_calls_g) as f64),
                avg(&|r| r.outer_iters as f64),
                avg(&|r| r.wall_ms as f64),
            ));
        }
    }
    out
}

/// Write both report artifacts into a directory.
pub fn write_reports(records: &[RunRecord], out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir)
        .map_err(|e| SolverError::InvalidInput(format!("mkdir {}: {e}", out_dir.display())))?;
    write_csv(records, &out_dir.join("results.csv"))?;
    fs::write(out_dir.join("summary.md"), markdown_summary(records))
        .map_err(|e| SolverError::InvalidInput(format!("write summary: {e}")))?;
    Ok(())
}

/// Post-hoc check of the termination conditions used in the reports:
/// feasibility of `(x, y)` and the lower-level value gap, both at 1e-2.
pub fn stopping_conditions(
    prob: &BilevelProblem,
    x: &VecF,
    y: &VecF,
    tol: f64,
) -> Result<(f64, f64)> {
    let feas = positive_part(&prob.g.value(x, y))
        .mapv(|t| t * t)
        .sum()
        .sqrt();
    let star = smo_core::kkt::lower_optimal_value(
        prob,
        x,
        &LowerValueOracle::with_tolerance((tol * 1e-4).max(1e-10)),
    )?;
    let gap = prob.tf_value(x, y) - star;
    Ok((feas, gap))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(id: &str, method: &str) -> RunRecord {
        RunRecord {
            instance_id: id.into(),
            method: method.into(),
            n: 2,
            m: 2,
            l: 1,
            seed: 0,
            f_init: 1.0,
            f_final: -1.0,
            stat_xy: 1e-3,
            stat_z: 1e-3,
            feas_y: 1e-4,
            feas_z: 1e-4,
            compl_y: 1e-5,
            compl_z: 1e-5,
            value_gap: 1e-3,
            grad_calls_f1: 10,
            grad_calls_tf1: 20,
            grad_calls_g: 20,
            prox_calls_f2: 5,
            prox_calls_tf2: 10,
            outer_iters: 3,
            wall_ms: 12,
        }
    }

    #[test]
    fn csv_has_fixed_header_and_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        write_csv(&[record("a", "smo"), record("b", "baseline")], &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), CSV_HEADER.join(","));
        assert_eq!(lines.count(), 2);
    }

    #[test]
    fn markdown_has_average_rows_per_method() {
        let md = markdown_summary(&[
            record("a", "smo"),
            record("b", "smo"),
            record("a", "baseline"),
        ]);
        assert_eq!(md.matches("**avg**").count(), 2);
        assert!(md.contains("| a | smo |"));
    }

    #[test]
    fn config_defaults_apply() {
        let cfg: ExperimentConfig =
            serde_json::from_str(r#"{"families":[{"family":"linear","dims":[4,4,2],"seeds":[1]}]}"#)
                .unwrap();
        assert_eq!(cfg.eps, 1e-2);
        assert_eq!(cfg.tau, 0.8);
        assert_eq!(cfg.eps0, 1.0);
        assert_eq!(cfg.methods, vec!["smo".to_string(), "baseline".to_string()]);
    }

    #[test]
    fn rejects_unknown_family_and_method() {
        let cfg = ExperimentConfig {
            families: vec![FamilySpec {
                family: "nope".into(),
                dims: vec![2, 2, 1],
                seeds: vec![1],
            }],
            eps: 0.1,
            tau: 0.8,
            eps0: 1.0,
            methods: vec!["smo".into()],
            out_dir: None,
        };
        assert!(run_experiment(&cfg, Some(1)).is_err());
        let prob = crate::instance::analytic_1d();
        let bad = solve_with(
            "nope",
            &prob,
            0.1,
            0.8,
            1.0,
            &VecF::zeros(1),
            &VecF::zeros(1),
        );
        assert!(bad.is_err());
    }

    #[test]
    fn terminal_params_match_schedule() {
        let (eps_k, rho_k, mu_k) = terminal_params(1e-2, 0.8, 1.0);
        assert!(eps_k <= 1e-2 && eps_k > 0.8 * 1e-2);
        assert!((rho_k - 1.0 / eps_k).abs() < 1e-9 * rho_k);
        assert!((mu_k - eps_k.powi(-3)).abs() < 1e-6 * mu_k);
    }

    #[test]
    fn small_linear_experiment_end_to_end() {
        let cfg = ExperimentConfig {
            families: vec![FamilySpec {
                family: "linear".into(),
                dims: vec![4, 4, 2],
                seeds: vec![1],
            }],
            eps: 0.1,
            tau: 0.8,
            eps0: 1.0,
            methods: vec!["smo".into()],
            out_dir: None,
        };
        let records = run_experiment(&cfg, Some(1)).unwrap();
        assert_eq!(records.len(), 1);
        let r = &records[0];
        assert_eq!(r.instance_id, "linear-4x4x2-s1");
        assert!(r.f_final < r.f_init, "{} vs {}", r.f_final, r.f_init);
        assert!(r.grad_calls_tf1 > 0 && r.prox_calls_tf2 > 0);
        let dir = tempfile::tempdir().unwrap();
        write_reports(&records, dir.path()).unwrap();
        assert!(dir.path().join("results.csv").exists());
        assert!(dir.path().join("summary.md").exists());
    }
}
