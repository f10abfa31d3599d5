//! Experiment orchestration: multi-seed runs with CSV metrics and a JSON
//! manifest, cross-run statistical comparison, and the k-ablation sweep.

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::stats::{iqr, mean, paired_t_test, sign_test, PairedTest, SignTest};
use crate::trpo::{run, IterationRecord, Strategy};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

pub const OUTPUT_ROOT_ENV: &str = "DEX_OUTPUT_ROOT";

pub const METRICS_HEADER: &str = "iteration,aggregate_return,main_return,pairwise_kl,cov_trace,delta_p,step_kl,surrogate_improvement,env_steps";

fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "NaN".to_string()
    } else {
        format!("{v:?}")
    }
}

pub fn metrics_csv(records: &[IterationRecord]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.iteration,
            fmt_f64(r.aggregate_return),
            fmt_f64(r.main_return),
            fmt_f64(r.pairwise_kl),
            fmt_f64(r.cov_trace),
            fmt_f64(r.delta_p),
            fmt_f64(r.step_kl),
            fmt_f64(r.surrogate_improvement),
            r.env_steps,
        );
    }
    out
}

/// One parsed metrics row; only the CSV columns, not the full record.
#[derive(Debug, Clone)]
pub struct MetricsRow {
    pub iteration: usize,
    pub aggregate_return: f64,
    pub main_return: f64,
    pub pairwise_kl: f64,
    pub cov_trace: f64,
    pub delta_p: f64,
    pub step_kl: f64,
    pub surrogate_improvement: f64,
    pub env_steps: usize,
}

pub fn parse_metrics_csv(text: &str) -> Result<Vec<MetricsRow>> {
    let mut lines = text.lines();
    let header = lines.next().ok_or(Error::EmptyInput("metrics file"))?;
    if header != METRICS_HEADER {
        return Err(Error::Config(format!("unexpected metrics header: {header}")));
    }
    let mut rows = Vec::new();
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 9 {
            return Err(Error::Config(format!("bad metrics row: {line}")));
        }
        let f = |s: &str| -> Result<f64> {
            if s == "NaN" {
                Ok(f64::NAN)
            } else {
                s.parse().map_err(|_| Error::Config(format!("bad float: {s}")))
            }
        };
        rows.push(MetricsRow {
            iteration: parts[0].parse().map_err(|_| Error::Config("bad iteration".into()))?,
            aggregate_return: f(parts[1])?,
            main_return: f(parts[2])?,
            pairwise_kl: f(parts[3])?,
            cov_trace: f(parts[4])?,
            delta_p: f(parts[5])?,
            step_kl: f(parts[6])?,
            surrogate_improvement: f(parts[7])?,
            env_steps: parts[8].parse().map_err(|_| Error::Config("bad env_steps".into()))?,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub status: String,
    pub iterations: usize,
    pub env_steps_total: usize,
    pub wall_clock_secs: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub directory: PathBuf,
    pub metrics_files: Vec<PathBuf>,
    pub manifest_file: PathBuf,
    pub failures: usize,
}

pub fn run_label(config: &ExperimentConfig) -> String {
    format!("{}_{}_k{}", config.env_kind, config.strategy.as_str().to_lowercase(), config.k)
}

/// Execute every seed of the config, writing one metrics CSV per seed and
/// a manifest describing the run. Per-seed failures are recorded and do
/// not abort the remaining seeds.
pub fn run_experiment(config: &ExperimentConfig, output_root: &Path) -> Result<ExperimentOutput> {
    let dir = output_root.join(&config.output_dir).join(run_label(config));
    std::fs::create_dir_all(&dir)?;
    let mut outcomes: Vec<SeedOutcome> = Vec::new();
    let mut metrics_files = Vec::new();
    let mut failures = 0;
    for &seed in &config.seeds {
        let started = Instant::now();
        let run_config = config.to_run_config(seed);
        match run(&run_config) {
            Ok(records) => {
                let path = dir.join(format!("seed_{seed}.csv"));
                std::fs::write(&path, metrics_csv(&records))?;
                outcomes.push(SeedOutcome {
                    seed,
                    status: "ok".into(),
                    iterations: records.len(),
                    env_steps_total: records.iter().map(|r| r.env_steps).sum(),
                    wall_clock_secs: started.elapsed().as_secs_f64(),
                });
                metrics_files.push(path);
            }
            Err(e) => {
                failures += 1;
                outcomes.push(SeedOutcome {
                    seed,
                    status: format!("error: {e}"),
                    iterations: 0,
                    env_steps_total: 0,
                    wall_clock_secs: started.elapsed().as_secs_f64(),
                });
            }
        }
    }
    let provenance: std::collections::BTreeMap<&str, &str> = config
        .provenance
        .iter()
        .map(|(k, p)| (k.as_str(), p.as_str()))
        .collect();
    let manifest = serde_json::json!({
        "version": env!("CARGO_PKG_VERSION"),
        "config": config.serialize(),
        "provenance": provenance,
        "warnings": config.warnings,
        "seeds": outcomes,
    });
    let manifest_file = dir.join("manifest.json");
    std::fs::write(&manifest_file, serde_json::to_string_pretty(&manifest)?)?;
    Ok(ExperimentOutput { directory: dir, metrics_files, manifest_file, failures })
}

fn load_strategy_runs(dir: &Path) -> Result<Vec<Vec<MetricsRow>>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().is_some_and(|x| x == "csv")
                && p.file_name().is_some_and(|n| n.to_string_lossy().starts_with("seed_"))
        })
        .collect();
    files.sort();
    if files.len() < 2 {
        return Err(Error::EmptyInput("need at least two seed metrics files"));
    }
    let mut runs = Vec::new();
    for f in files {
        runs.push(parse_metrics_csv(&std::fs::read_to_string(f)?)?);
    }
    let len = runs[0].len();
    if runs.iter().any(|r| r.len() != len) {
        return Err(Error::MisalignedRuns(len, runs.iter().map(|r| r.len()).max().unwrap()));
    }
    Ok(runs)
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub iterations: usize,
    /// Cross-seed mean aggregate return per iteration, per strategy.
    pub return_mean_a: Vec<f64>,
    pub return_mean_b: Vec<f64>,
    /// Cross-seed interquartile range per iteration, per strategy.
    pub return_iqr_a: Vec<(f64, f64)>,
    pub return_iqr_b: Vec<(f64, f64)>,
    /// Paired across iteration indices on the per-iteration averages.
    pub return_test: PairedTest,
    pub return_sign: SignTest,
    /// Pairwise-KL table: per-strategy grand means over iterations where
    /// the metric is defined for both, plus the paired test on them.
    pub kl_mean_a: f64,
    pub kl_mean_b: f64,
    pub kl_test: Option<PairedTest>,
    pub cov_mean_a: f64,
    pub cov_mean_b: f64,
}

fn per_iteration_means(runs: &[Vec<MetricsRow>], get: impl Fn(&MetricsRow) -> f64) -> Vec<f64> {
    let iters = runs[0].len();
    (0..iters)
        .map(|i| {
            let vals: Vec<f64> = runs.iter().map(|r| get(&r[i])).collect();
            mean(&vals)
        })
        .collect()
}

/// Compare two strategies' run directories: per-iteration cross-seed
/// mean/IQR curves, a paired t-test over iteration indices on average
/// performance, and the pairwise-KL comparison table.
pub fn compare_runs(dir_a: &Path, dir_b: &Path) -> Result<RunSummary> {
    let a = load_strategy_runs(dir_a)?;
    let b = load_strategy_runs(dir_b)?;
    let iters = a[0].len();
    if b[0].len() != iters {
        return Err(Error::MisalignedRuns(iters, b[0].len()));
    }
    let return_mean_a = per_iteration_means(&a, |r| r.aggregate_return);
    let return_mean_b = per_iteration_means(&b, |r| r.aggregate_return);
    let mut return_iqr_a = Vec::with_capacity(iters);
    let mut return_iqr_b = Vec::with_capacity(iters);
    for i in 0..iters {
        let va: Vec<f64> = a.iter().map(|r| r[i].aggregate_return).collect();
        let vb: Vec<f64> = b.iter().map(|r| r[i].aggregate_return).collect();
        return_iqr_a.push(iqr(&va)?);
        return_iqr_b.push(iqr(&vb)?);
    }
    let return_test = paired_t_test(&return_mean_a, &return_mean_b)?;
    let return_sign = sign_test(&return_mean_a, &return_mean_b)?;

    let kl_a_all = per_iteration_means(&a, |r| r.pairwise_kl);
    let kl_b_all = per_iteration_means(&b, |r| r.pairwise_kl);
    let defined: Vec<usize> = (0..iters)
        .filter(|&i| kl_a_all[i].is_finite() && kl_b_all[i].is_finite())
        .collect();
    let kl_a: Vec<f64> = defined.iter().map(|&i| kl_a_all[i]).collect();
    let kl_b: Vec<f64> = defined.iter().map(|&i| kl_b_all[i]).collect();
    let kl_test = if kl_a.len() >= 2 { Some(paired_t_test(&kl_a, &kl_b)?) } else { None };
    let finite_mean = |xs: &[f64]| {
        let f: Vec<f64> = xs.iter().copied().filter(|v| v.is_finite()).collect();
        if f.is_empty() {
            f64::NAN
        } else {
            mean(&f)
        }
    };
    Ok(RunSummary {
        iterations: iters,
        return_mean_a,
        return_mean_b,
        return_iqr_a,
        return_iqr_b,
        return_test,
        return_sign,
        kl_mean_a: finite_mean(&kl_a),
        kl_mean_b: finite_mean(&kl_b),
        kl_test,
        cov_mean_a: finite_mean(&per_iteration_means(&a, |r| r.cov_trace)),
        cov_mean_b: finite_mean(&per_iteration_means(&b, |r| r.cov_trace)),
    })
}

impl RunSummary {
    /// Human-readable comparison table; each p-value labels its metric.
    pub fn render(&self, name_a: &str, name_b: &str) -> String {
        let mut out = String::new();
        let last = self.iterations.saturating_sub(1);
        let _ = writeln!(out, "iterations compared: {}", self.iterations);
        let _ = writeln!(
            out,
            "final mean return   {name_a}: {:.4}  {name_b}: {:.4}",
            self.return_mean_a.get(last).copied().unwrap_or(f64::NAN),
            self.return_mean_b.get(last).copied().unwrap_or(f64::NAN),
        );
        let _ = writeln!(
            out,
            "return paired t (per-iteration averages): mean diff {:.4}, p = {:.4e}",
            self.return_test.mean_diff, self.return_test.p_value
        );
        let _ = writeln!(
            out,
            "return sign test: +{} -{} ties {}, p = {:.4e}",
            self.return_sign.positive, self.return_sign.negative, self.return_sign.ties,
            self.return_sign.p_value
        );
        let _ = writeln!(
            out,
            "pairwise KL mean    {name_a}: {:.4}  {name_b}: {:.4}",
            self.kl_mean_a, self.kl_mean_b
        );
        match &self.kl_test {
            Some(t) => {
                let _ = writeln!(
                    out,
                    "pairwise KL paired t: mean diff {:.4}, p = {:.4e}",
                    t.mean_diff, t.p_value
                );
            }
            None => {
                let _ = writeln!(out, "pairwise KL paired t: undefined (too few iterations)");
            }
        }
        let _ = writeln!(
            out,
            "cov trace mean      {name_a}: {:.4}  {name_b}: {:.4}",
            self.cov_mean_a, self.cov_mean_b
        );
        out
    }
}

/// Run the experiment once per k with shared seeds (k = 0 runs as plain
/// TRPO) and write a combined per-iteration curve table.
pub fn ablate_k(
    config: &ExperimentConfig,
    k_values: &[usize],
    output_root: &Path,
) -> Result<Vec<ExperimentOutput>> {
    let mut outputs = Vec::new();
    let mut table = String::from("k,iteration,mean_aggregate_return\n");
    for &k in k_values {
        let mut cfg = config.clone();
        cfg.k = k;
        if k == 0 {
            cfg.strategy = Strategy::Trpo;
        }
        cfg.validate()?;
        let out = run_experiment(&cfg, output_root)?;
        let mut runs = Vec::new();
        for f in &out.metrics_files {
            runs.push(parse_metrics_csv(&std::fs::read_to_string(f)?)?);
        }
        if !runs.is_empty() {
            let means = per_iteration_means(&runs, |r| r.aggregate_return);
            for (i, m) in means.iter().enumerate() {
                let _ = writeln!(table, "{k},{i},{}", fmt_f64(*m));
            }
        }
        outputs.push(out);
    }
    let dir = output_root.join(&config.output_dir);
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("ablation_k.csv"), table)?;
    Ok(outputs)
}
