use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::run::{run_dir, ExperimentSummary, SweepTable};
use crate::error::{Error, Result};

/// Files every run directory must contain.
pub const RUN_ARTIFACTS: [&str; 3] = ["history.jsonl", "features.csv", "stats.json"];

fn opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map_or("-".into(), |v| v.to_string())
}

fn fmt_f(v: Option<f64>) -> String {
    v.map_or("-".into(), |v| format!("{v:.6}"))
}

/// Human-readable summary of a run directory written by `run_experiment`
/// or `sweep_h`.
pub fn report(dir: &Path) -> Result<String> {
    let summary_path = dir.join("summary.json");
    let sweep_path = dir.join("h_sweep.json");
    if !summary_path.exists() {
        if sweep_path.exists() {
            return report_sweep(&sweep_path);
        }
        let mut paths = vec![summary_path];
        paths.extend(RUN_ARTIFACTS.iter().map(|f| dir.join("seed-*").join("*").join(f)));
        return Err(Error::MissingArtifacts { paths });
    }
    let text = std::fs::read_to_string(&summary_path).map_err(|e| Error::io(&summary_path, e))?;
    let summary = ExperimentSummary::from_json(&text)?;
    let missing: Vec<PathBuf> = summary
        .runs
        .iter()
        .flat_map(|r| {
            let d = run_dir(dir, r.seed, &r.mode);
            RUN_ARTIFACTS.iter().map(move |f| d.join(f))
        })
        .filter(|p| !p.exists())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingArtifacts { paths: missing });
    }
    Ok(render(&summary))
}

fn report_sweep(path: &Path) -> Result<String> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let table: SweepTable =
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let mut out = String::new();
    let seeds: Vec<String> = table.seeds.iter().map(|s| format!("seed {s}")).collect();
    let _ = writeln!(out, "H sweep over {}", seeds.join(", "));
    let _ = writeln!(out, "{:>4}  {:>10}  per-seed probe accuracy", "H", "mean");
    for r in &table.rows {
        let per: Vec<String> = r.per_seed.iter().map(|v| format!("{v:.6}")).collect();
        let _ = writeln!(out, "{:>4}  {:>10.6}  {}", r.h, r.mean, per.join(" "));
    }
    if let (Some(first), Some(last)) = (table.rows.first(), table.rows.last()) {
        if table.rows.len() > 1 {
            let wins = first
                .per_seed
                .iter()
                .zip(&last.per_seed)
                .filter(|(lo, hi)| hi >= lo)
                .count();
            let n = table.seeds.len();
            let verdict = if 2 * wins > n { "PASS" } else { "FAIL" };
            let _ = writeln!(
                out,
                "H = {} at least as accurate as H = {} on {wins}/{n} seeds: {verdict}",
                last.h, first.h
            );
        }
    }
    Ok(out)
}

pub fn render(summary: &ExperimentSummary) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "experiment {}: {} seed(s), up to {} iterations",
        summary.name,
        summary.seeds.len(),
        summary.max_iter
    );
    let _ = writeln!(
        out,
        "\n{:<10} {:>5} {:>12} {:>10} {:>12} {:>12} {:>10}",
        "mode", "seed", "final_loss", "probe", "intra_mean", "intra_var", "peak_iter"
    );
    for r in &summary.runs {
        let total = r.intra_class.total;
        let _ = writeln!(
            out,
            "{:<10} {:>5} {:>12.6} {:>10.6} {:>12} {:>12} {:>10}",
            r.mode,
            r.seed,
            r.final_loss,
            r.probe_accuracy,
            fmt_f(total.map(|t| t.mean)),
            fmt_f(total.map(|t| t.variance)),
            opt(r.peak_validation.map(|p| p.iteration)),
        );
    }

    let _ = writeln!(out, "\nper-mode means");
    for mode in &summary.modes {
        let runs: Vec<_> = summary.runs.iter().filter(|r| &r.mode == mode).collect();
        if runs.is_empty() {
            continue;
        }
        let n = runs.len() as f64;
        let mean = |f: &dyn Fn(&super::run::RunStats) -> f64| runs.iter().map(|r| f(r)).sum::<f64>() / n;
        let _ = writeln!(
            out,
            "{:<10} final_loss {:.6}  probe {:.6}  intra_mean {:.6}  intra_var {:.6}",
            mode,
            mean(&|r| r.final_loss),
            mean(&|r| r.probe_accuracy),
            mean(&|r| r.intra_class.total.map_or(f64::NAN, |t| t.mean)),
            mean(&|r| r.intra_class.total.map_or(f64::NAN, |t| t.variance)),
        );
    }

    if !summary.comparisons.is_empty() {
        let _ = writeln!(
            out,
            "\n{:>5} {:>10} {:>10} {:>12} {:>12} {:>10} {:>10}",
            "seed", "var_ratio", "mean_ratio", "half_base", "half_stmn", "peak_base", "peak_stmn"
        );
        for c in &summary.comparisons {
            let _ = writeln!(
                out,
                "{:>5} {:>10.6} {:>10.6} {:>12} {:>12} {:>10} {:>10}",
                c.seed,
                c.variance_ratio,
                c.mean_ratio,
                fmt_f(c.half_loss_baseline),
                fmt_f(c.half_loss_stmn),
                opt(c.peak_iteration_baseline),
                opt(c.peak_iteration_stmn),
            );
        }
        let _ = writeln!(out, "\nchecks");
        for c in &summary.checks {
            let _ = writeln!(
                out,
                "  {:<24} {}/{} seeds (need {})  {}",
                c.name,
                c.passed_seeds,
                c.seeds,
                c.required,
                if c.passed { "PASS" } else { "FAIL" }
            );
        }
    }
    out
}
