//! Experiment CLI: run training configs, compare strategies, sweep the
//! perturbation count, and execute the standalone oracle checks.
//!
//! Exit codes: 0 success, 1 validation error, 2 runtime failure,
//! 3 oracle/acceptance-check failure.

use clap::{Parser, Subcommand};
use diverse_explore::config::parse_config;
use diverse_explore::error::Error;
use diverse_explore::experiment::{ablate_k, compare_runs, run_experiment, OUTPUT_ROOT_ENV};
use diverse_explore::linalg::{cg_solve, conjugacy_check, norm2, sub, DenseMatrix};
use diverse_explore::perturbation::{
    brute_force_best_set, conjugate_set, pairwise_kl_total, random_set, theorem1_objective,
    theorem1_oracle,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "dex", about = "Diverse exploration via conjugate policies", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every seed of a config and write metrics + manifest.
    Run { config: PathBuf },
    /// Compare two strategies' finished runs found under a directory.
    Compare { dir: PathBuf, strategy_a: String, strategy_b: String },
    /// Run the config once per k value with shared seeds.
    Ablate {
        config: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        k: Vec<usize>,
    },
    /// Execute a standalone oracle check: theorem1, theorem2, or cg.
    Oracle { name: String },
}

fn output_root() -> PathBuf {
    std::env::var_os(OUTPUT_ROOT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("."))
}

fn find_strategy_dir(root: &Path, strategy: &str) -> Result<PathBuf, String> {
    let needle = format!("_{}_k", strategy.to_lowercase());
    let mut matches: Vec<PathBuf> = std::fs::read_dir(root)
        .map_err(|e| format!("cannot read {}: {e}", root.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_dir() && p.file_name().is_some_and(|n| n.to_string_lossy().contains(&needle))
        })
        .collect();
    matches.sort();
    match matches.len() {
        0 => Err(format!("no run directory for strategy {strategy} under {}", root.display())),
        1 => Ok(matches.pop().unwrap()),
        _ => Err(format!("ambiguous run directories for {strategy}: {matches:?}")),
    }
}

fn random_spd(n: usize, rng: &mut ChaCha8Rng) -> DenseMatrix<f64> {
    let mut m = DenseMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            m[(i, j)] = rng.gen_range(-1.0..1.0);
        }
    }
    let mut spd = m.transpose().matmul(&m);
    for i in 0..n {
        spd[(i, i)] += 0.5;
    }
    spd
}

/// Theorem 2 style check: conjugate sets dominate random sets at equal
/// radius, and the brute-force maximizer is consistent with the conjugate
/// construction.
fn oracle_theorem2() -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for trial in 0..100 {
        let n = 4 + trial % 5;
        let f = random_spd(n, &mut rng);
        let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let cg = cg_solve(&f, &b, n, 1e-12).map_err(|e| e.to_string())?;
        let k = 2 + 2 * (trial % 2);
        if cg.directions.len() < k / 2 {
            continue;
        }
        let delta = 0.05;
        let cset = conjugate_set(&cg.directions, k, &f, delta).map_err(|e| e.to_string())?;
        let rset = random_set(n, k, &f, delta, &mut rng).map_err(|e| e.to_string())?;
        let ct = pairwise_kl_total(&cset, &f).map_err(|e| e.to_string())?;
        let rt = pairwise_kl_total(&rset, &f).map_err(|e| e.to_string())?;
        if ct < rt - 1e-8 {
            return Err(format!("trial {trial}: conjugate {ct} < random {rt}"));
        }
        let (_, best) =
            brute_force_best_set(&f, &cg.directions, 2).map_err(|e| e.to_string())?;
        if best <= 0.0 {
            return Err(format!("trial {trial}: degenerate brute-force objective {best}"));
        }
    }
    println!("theorem2 oracle: conjugate >= random in all trials");
    Ok(())
}

fn oracle_theorem1() -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for trial in 0..50 {
        let n = 3 + trial % 8;
        let f = random_spd(n, &mut rng);
        let d = 0.2;
        let (ei, ej) = theorem1_oracle(&f, d).map_err(|e| e.to_string())?;
        let best = theorem1_objective(&f, &ei, &ej);
        for _ in 0..1000 {
            let a: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let a: Vec<f64> = a.iter().map(|v| v * d / norm2(&a)).collect();
            let b: Vec<f64> = b.iter().map(|v| v * d / norm2(&b)).collect();
            if theorem1_objective(&f, &a, &b) > best * (1.0 + 1e-8) {
                return Err(format!("trial {trial}: random pair beat the eigen pair"));
            }
        }
        let diff = sub(&ej, &ei);
        if (norm2(&diff) - 2.0 * d).abs() > 1e-9 {
            return Err(format!("trial {trial}: eigen pair not antipodal"));
        }
    }
    println!("theorem1 oracle: eigen pair maximal in all trials");
    Ok(())
}

fn oracle_cg() -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for trial in 0..25 {
        let n = 10 + trial;
        let f = random_spd(n, &mut rng);
        let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let cg = cg_solve(&f, &b, n, 1e-10).map_err(|e| e.to_string())?;
        let resid = norm2(&sub(&f.matvec(&cg.solution), &b)) / norm2(&b);
        if resid > 1e-6 {
            return Err(format!("trial {trial}: residual {resid}"));
        }
        let conj = conjugacy_check(&cg.directions, &f).map_err(|e| e.to_string())?;
        if conj > 1e-6 {
            return Err(format!("trial {trial}: conjugacy violation {conj}"));
        }
    }
    println!("cg oracle: residual and conjugacy within tolerance");
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config } => {
            let cfg = match parse_config(&config) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("config error: {e}");
                    return ExitCode::from(1);
                }
            };
            for w in &cfg.warnings {
                eprintln!("warning: {w}");
            }
            match run_experiment(&cfg, &output_root()) {
                Ok(out) => {
                    println!(
                        "wrote {} metrics files to {}",
                        out.metrics_files.len(),
                        out.directory.display()
                    );
                    if out.failures > 0 {
                        eprintln!("{} seed(s) failed; see manifest", out.failures);
                        return ExitCode::from(2);
                    }
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("run failed: {e}");
                    ExitCode::from(2)
                }
            }
        }
        Command::Compare { dir, strategy_a, strategy_b } => {
            let a = match find_strategy_dir(&dir, &strategy_a) {
                Ok(p) => p,
                Err(e) => {
                    eprintln!("{e}");
                    return ExitCode::from(1);
                }
            };
            let b = match find_strategy_dir(&dir, &strategy_b) {
                Ok(p) => p,
                Err(e) => {
                    eprintln!("{e}");
                    return ExitCode::from(1);
                }
            };
            match compare_runs(&a, &b) {
                Ok(summary) => {
                    print!("{}", summary.render(&strategy_a, &strategy_b));
                    ExitCode::SUCCESS
                }
                Err(e @ Error::MisalignedRuns(_, _)) => {
                    eprintln!("compare failed: {e}");
                    ExitCode::from(1)
                }
                Err(e) => {
                    eprintln!("compare failed: {e}");
                    ExitCode::from(2)
                }
            }
        }
        Command::Ablate { config, k } => {
            let cfg = match parse_config(&config) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("config error: {e}");
                    return ExitCode::from(1);
                }
            };
            if let Some(bad) = k.iter().find(|&&v| v % 2 != 0 && v != 0) {
                eprintln!("k = {bad} is odd; perturbation counts must be even");
                return ExitCode::from(1);
            }
            match ablate_k(&cfg, &k, &output_root()) {
                Ok(outs) => {
                    let failures: usize = outs.iter().map(|o| o.failures).sum();
                    println!("ablation complete over k = {k:?}");
                    if failures > 0 {
                        eprintln!("{failures} seed run(s) failed; see manifests");
                        return ExitCode::from(2);
                    }
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("ablation failed: {e}");
                    ExitCode::from(2)
                }
            }
        }
        Command::Oracle { name } => {
            let result = match name.as_str() {
                "theorem1" => oracle_theorem1(),
                "theorem2" => oracle_theorem2(),
                "cg" => oracle_cg(),
                other => {
                    eprintln!("unknown oracle {other}; expected theorem1, theorem2, or cg");
                    return ExitCode::from(1);
                }
            };
            match result {
                Ok(()) => ExitCode::SUCCESS,
                Err(msg) => {
                    eprintln!("oracle {name} failed: {msg}");
                    ExitCode::from(3)
                }
            }
        }
    }
}
