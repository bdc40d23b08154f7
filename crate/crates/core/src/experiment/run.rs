use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::admm::{extract_features, FeatureChain, TrainHistory, Trainer};
use crate::data::{gen_synthetic_manifold, read_sequences_csv, ClipBatch, SequenceSample};
use crate::error::{Error, Result};
use crate::metrics::{intra_class_stats, linear_probe, pca_embed_2d, IntraClassStats, PcaEmbedding};
use crate::net::{accuracy, argmax_rows, forward, objective_j_lambda, NetParams};
use crate::rng::SeedStreams;

/// A parsed config together with the exact text it came from.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub source: String,
}

impl Experiment {
    pub fn parse(source: &str) -> Result<Self> {
        Ok(Self {
            config: ExperimentConfig::from_toml(source)?,
            source: source.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let source = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config = ExperimentConfig::load(path)?;
        Ok(Self { config, source })
    }
}

/// Train, validation and test clips for one seed. Splits are by sequence, so
/// overlapping clips of one sequence never straddle two splits.
#[derive(Debug, Clone)]
pub struct Splits {
    pub train: ClipBatch,
    pub validation: Option<ClipBatch>,
    pub test: ClipBatch,
    pub num_classes: usize,
}

pub fn load_sequences(config: &ExperimentConfig, seed: u64) -> Result<Vec<SequenceSample>> {
    match &config.data.input_file {
        Some(path) => read_sequences_csv(path),
        None => {
            let data_seed = SeedStreams::new(seed).stream("data").next_u64();
            Ok(gen_synthetic_manifold(&config.data.generator, data_seed)?.sequences)
        }
    }
}

pub fn prepare_data(config: &ExperimentConfig, seed: u64) -> Result<Splits> {
    let sequences = load_sequences(config, seed)?;
    let num_classes = sequences.iter().map(|s| s.label + 1).max().unwrap_or(0);
    let mut by_class: Vec<Vec<&SequenceSample>> = vec![Vec::new(); num_classes];
    for s in &sequences {
        by_class[s.label].push(s);
    }
    let streams = SeedStreams::new(seed);
    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for (label, members) in by_class.iter_mut().enumerate() {
        let n = members.len();
        if n < 2 {
            return Err(Error::input(format!(
                "class {label} has {n} sequences; a train/test split needs at least 2"
            )));
        }
        members.sort_by_key(|s| s.id);
        members.shuffle(&mut streams.indexed("split", label as u64));
        let n_test = ((config.data.test_fraction * n as f64).round() as usize).clamp(1, n - 1);
        let n_pool = n - n_test;
        let n_train = ((config.train_fraction * n_pool as f64).round() as usize).clamp(1, n_pool);
        test.extend(members[..n_test].iter().map(|s| (*s).clone()));
        train.extend(members[n_test..n_test + n_train].iter().map(|s| (*s).clone()));
        val.extend(members[n_test + n_train..].iter().map(|s| (*s).clone()));
    }
    for part in [&mut train, &mut val, &mut test] {
        part.sort_by_key(|s| s.id);
    }
    let clips = |seqs: &[SequenceSample]| {
        ClipBatch::from_sequences(seqs, config.data.clip_len, config.data.overlap)
    };
    Ok(Splits {
        train: clips(&train)?,
        validation: if val.is_empty() { None } else { Some(clips(&val)?) },
        test: clips(&test)?,
        num_classes,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakValidation {
    pub iteration: usize,
    pub accuracy: f64,
}

/// Everything measured on one trained network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub seed: u64,
    pub mode: String,
    /// Neighbourhood size, for modes that use one.
    pub h: Option<usize>,
    pub iterations: usize,
    pub converged: bool,
    /// `J_λ` over the whole training split after the last iteration.
    pub final_loss: f64,
    /// Evaluated training loss closest to half the iteration budget.
    pub half_budget_loss: Option<f64>,
    pub train_accuracy: f64,
    /// Linear probe trained on train-split features, scored on test-split features.
    pub probe_accuracy: f64,
    /// Intra-class distance statistics of the test-split features.
    pub intra_class: IntraClassStats,
    pub pca_explained: [f64; 2],
    pub peak_validation: Option<PeakValidation>,
    pub final_sigma: f64,
    pub accepted: usize,
    pub rejected: usize,
}

/// One (seed, mode, H) job.
#[derive(Debug, Clone)]
pub struct RunSpec {
    pub seed: u64,
    pub mode: String,
    pub h: usize,
    /// Directory name under `seed-N/`.
    pub label: String,
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("value serialises");
    text.push('\n');
    write(path, &text)
}

fn write_features_csv(path: &Path, chain: &FeatureChain) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    let csv_err = |e: csv::Error| Error::Format(format!("{}: {e}", path.display()));
    let d = chain.sequences.first().map_or(0, |s| s.features.cols());
    let mut header = vec!["id".to_string(), "clip_index".into(), "label".into()];
    header.extend((0..d).map(|k| format!("f{k}")));
    w.write_record(&header).map_err(csv_err)?;
    for s in &chain.sequences {
        for (row, &clip) in s.features.iter_rows().zip(&s.clip_index) {
            let mut rec = vec![s.source_id.to_string(), clip.to_string(), s.label.to_string()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec).map_err(csv_err)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_pca_csv(path: &Path, chain: &FeatureChain, pca: &PcaEmbedding) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    let csv_err = |e: csv::Error| Error::Format(format!("{}: {e}", path.display()));
    w.write_record(["id", "clip_index", "label", "pc0", "pc1"]).map_err(csv_err)?;
    let mut row = 0;
    for s in &chain.sequences {
        for &clip in &s.clip_index {
            let p = pca.coords.row(row);
            w.write_record([
                s.source_id.to_string(),
                clip.to_string(),
                s.label.to_string(),
                p[0].to_string(),
                p[1].to_string(),
            ])
            .map_err(csv_err)?;
            row += 1;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn initial_params(config: &ExperimentConfig, splits: &Splits, seed: u64) -> Result<NetParams> {
    let layers = config.net.layer_specs(splits.train.clips.cols());
    NetParams::init(&layers, splits.num_classes, &mut SeedStreams::new(seed).stream("init"))
}

/// Trains one network and writes its artifacts to `dir`. On divergence the
/// history and last checkpoint are still written before the error returns.
pub fn execute_run(
    config: &ExperimentConfig,
    splits: &Splits,
    spec: &RunSpec,
    dir: &Path,
) -> Result<RunStats> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut admm = config.admm.clone();
    admm.mode = spec.mode.clone();
    admm.manifold.h = spec.h;
    let init = initial_params(config, splits, spec.seed)?;
    let validation = splits.validation.as_ref().unwrap_or(&splits.test);
    let mut trainer = Trainer::new(init, &splits.train, Some(validation), &admm, spec.seed)?;
    log::info!("seed {} {}: training for up to {} iterations", spec.seed, spec.label, admm.max_iter);
    let outcome = trainer.run();
    write(&dir.join("history.jsonl"), &trainer.history().to_jsonl())?;
    write_json(&dir.join("checkpoint.json"), &trainer.checkpoint())?;
    outcome?;

    let params = trainer.params();
    let history: &TrainHistory = trainer.history();
    let state = trainer.state();
    let train_chain = extract_features(params, &splits.train)?;
    let test_chain = extract_features(params, &splits.test)?;
    let (train_x, train_y) = train_chain.stacked();
    let (test_x, test_y) = test_chain.stacked();
    let probe = linear_probe(&train_x, &train_y, &test_x, &test_y, &config.probe, spec.seed)?;
    let intra = intra_class_stats(&test_x, &test_y)?;
    let pca = pca_embed_2d(&test_x)?;
    let cache = forward(params, &splits.train.clips)?;
    let final_loss = objective_j_lambda(params, &cache, &splits.train.labels, admm.lambda_reg)?;
    let train_accuracy = accuracy(&argmax_rows(&cache.logits), &splits.train.labels);
    let half = (admm.max_iter / 2).saturating_sub(1);

    let stats = RunStats {
        seed: spec.seed,
        mode: spec.mode.clone(),
        h: (spec.mode != "baseline").then_some(spec.h),
        iterations: history.len(),
        converged: trainer.converged(),
        final_loss,
        half_budget_loss: history.eval_loss_near(half),
        train_accuracy,
        probe_accuracy: probe,
        intra_class: intra,
        pca_explained: pca.explained,
        peak_validation: history
            .peak_validation()
            .map(|(iteration, accuracy)| PeakValidation { iteration, accuracy }),
        final_sigma: state.sigma,
        accepted: history.records.iter().filter(|r| r.accepted).count(),
        rejected: state.rejected,
    };
    write_features_csv(&dir.join("features.csv"), &test_chain)?;
    write_pca_csv(&dir.join("pca.csv"), &test_chain, &pca)?;
    write_json(&dir.join("stats.json"), &stats)?;
    Ok(stats)
}

/// Runs independent jobs on scoped threads; results come back in job order.
fn run_all(
    config: &ExperimentConfig,
    jobs: &[RunSpec],
    out_dir: &Path,
) -> Result<Vec<RunStats>> {
    let mut splits = BTreeMap::new();
    for job in jobs {
        if let std::collections::btree_map::Entry::Vacant(e) = splits.entry(job.seed) {
            e.insert(prepare_data(config, job.seed)?);
        }
    }
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get());
    let mut results: Vec<Option<Result<RunStats>>> = (0..jobs.len()).map(|_| None).collect();
    for (chunk_jobs, chunk_out) in jobs.chunks(workers).zip(results.chunks_mut(workers)) {
        std::thread::scope(|scope| {
            let handles: Vec<_> = chunk_jobs
                .iter()
                .map(|job| {
                    let data = &splits[&job.seed];
                    let dir = run_dir(out_dir, job.seed, &job.label);
                    scope.spawn(move || execute_run(config, data, job, &dir))
                })
                .collect();
            for (slot, h) in chunk_out.iter_mut().zip(handles) {
                *slot = Some(h.join().expect("run thread panicked"));
            }
        });
    }
    results.into_iter().map(|r| r.expect("every job ran")).collect()
}

pub fn run_dir(out_dir: &Path, seed: u64, label: &str) -> PathBuf {
    out_dir.join(format!("seed-{seed}")).join(label)
}

/// Minimum number of passing seeds for a directional check: three out of
/// every five, rounded up.
pub fn required_passes(seeds: usize) -> usize {
    (3 * seeds).div_ceil(5)
}

/// Baseline versus STMN on one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedComparison {
    pub seed: u64,
    pub baseline_train_accuracy: f64,
    pub variance_ratio: f64,
    pub mean_ratio: f64,
    pub probe_baseline: f64,
    pub probe_stmn: f64,
    pub half_loss_baseline: Option<f64>,
    pub half_loss_stmn: Option<f64>,
    pub peak_iteration_baseline: Option<usize>,
    pub peak_iteration_stmn: Option<usize>,
    /// Baseline fits the data (train accuracy ≥ 0.95) and STMN's test
    /// intra-class variance and mean are both ≤ 0.9× the baseline's.
    pub compaction: bool,
    pub faster_convergence: bool,
    pub later_peak: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed_seeds: usize,
    pub seeds: usize,
    pub required: usize,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub name: String,
    pub seeds: Vec<u64>,
    pub modes: Vec<String>,
    pub max_iter: usize,
    pub runs: Vec<RunStats>,
    pub comparisons: Vec<SeedComparison>,
    pub checks: Vec<CheckOutcome>,
}

impl ExperimentSummary {
    pub fn run(&self, seed: u64, mode: &str) -> Option<&RunStats> {
        self.runs.iter().find(|r| r.seed == seed && r.mode == mode)
    }

    pub fn check(&self, name: &str) -> Option<&CheckOutcome> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("summary serialises");
        s.push('\n');
        s
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Format(format!("summary.json: {e}")))
    }
}

fn compare(seed: u64, base: &RunStats, stmn: &RunStats) -> SeedComparison {
    let (b, s) = (base.intra_class.total, stmn.intra_class.total);
    let ratio = |f: fn(&crate::metrics::PairStats) -> f64| match (b, s) {
        (Some(b), Some(s)) if f(&b) > 0.0 => f(&s) / f(&b),
        _ => f64::NAN,
    };
    let variance_ratio = ratio(|p| p.variance);
    let mean_ratio = ratio(|p| p.mean);
    let peak_b = base.peak_validation.map(|p| p.iteration);
    let peak_s = stmn.peak_validation.map(|p| p.iteration);
    SeedComparison {
        seed,
        baseline_train_accuracy: base.train_accuracy,
        variance_ratio,
        mean_ratio,
        probe_baseline: base.probe_accuracy,
        probe_stmn: stmn.probe_accuracy,
        half_loss_baseline: base.half_budget_loss,
        half_loss_stmn: stmn.half_budget_loss,
        peak_iteration_baseline: peak_b,
        peak_iteration_stmn: peak_s,
        compaction: base.train_accuracy >= 0.95 && variance_ratio <= 0.9 && mean_ratio <= 0.9,
        faster_convergence: matches!(
            (stmn.half_budget_loss, base.half_budget_loss),
            (Some(s), Some(b)) if s <= b
        ),
        later_peak: matches!((peak_s, peak_b), (Some(s), Some(b)) if s >= b),
    }
}

fn summarize(config: &ExperimentConfig, runs: Vec<RunStats>) -> ExperimentSummary {
    let mut comparisons = Vec::new();
    for &seed in &config.seeds {
        let find = |m: &str| runs.iter().find(|r| r.seed == seed && r.mode == m);
        if let (Some(b), Some(s)) = (find("baseline"), find("stmn")) {
            comparisons.push(compare(seed, b, s));
        }
    }
    let mut checks = Vec::new();
    if !comparisons.is_empty() {
        let n = comparisons.len();
        let mut add = |name: &str, pass: fn(&SeedComparison) -> bool| {
            let passed_seeds = comparisons.iter().filter(|c| pass(c)).count();
            checks.push(CheckOutcome {
                name: name.into(),
                passed_seeds,
                seeds: n,
                required: required_passes(n),
                passed: passed_seeds >= required_passes(n),
            });
        };
        add("intra_class_compaction", |c| c.compaction);
        add("faster_convergence", |c| c.faster_convergence);
        add("delayed_overfitting", |c| c.later_peak);
    }
    ExperimentSummary {
        name: config.name.clone(),
        seeds: config.seeds.clone(),
        modes: config.modes.clone(),
        max_iter: config.admm.max_iter,
        runs,
        comparisons,
        checks,
    }
}

fn prepare_out_dir(experiment: &Experiment, out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    write(&out_dir.join("config.toml"), &experiment.source)?;
    write(&out_dir.join("effective_config.toml"), &experiment.config.to_toml())
}

/// Every configured mode on every seed; writes per-run artifacts and `summary.json`.
pub fn run_experiment(experiment: &Experiment, out_dir: &Path) -> Result<ExperimentSummary> {
    let config = &experiment.config;
    config.validate()?;
    prepare_out_dir(experiment, out_dir)?;
    let jobs: Vec<RunSpec> = config
        .seeds
        .iter()
        .flat_map(|&seed| {
            config.modes.iter().map(move |mode| RunSpec {
                seed,
                mode: mode.clone(),
                h: config.admm.manifold.h,
                label: mode.clone(),
            })
        })
        .collect();
    let runs = run_all(config, &jobs, out_dir)?;
    let summary = summarize(config, runs);
    write(&out_dir.join("summary.json"), &summary.to_json())?;
    Ok(summary)
}

/// Probe accuracy of STMN for each neighbourhood size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub h: usize,
    pub mean: f64,
    /// In the order of the config's seeds.
    pub per_seed: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub seeds: Vec<u64>,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("h,mean");
        for s in &self.seeds {
            out.push_str(&format!(",seed_{s}"));
        }
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!("{},{}", r.h, r.mean));
            for v in &r.per_seed {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}

/// One `stmn` run per H value per seed, sharing data and initialisation;
/// every H is checked against the batch size before anything trains.
pub fn sweep_h(experiment: &Experiment, values: &[usize], out_dir: &Path) -> Result<SweepTable> {
    let config = &experiment.config;
    config.validate()?;
    let values = config.sweep_values(values)?;
    prepare_out_dir(experiment, out_dir)?;
    let jobs: Vec<RunSpec> = config
        .seeds
        .iter()
        .flat_map(|&seed| {
            values.iter().map(move |&h| RunSpec {
                seed,
                mode: "stmn".into(),
                h,
                label: format!("stmn-h{h}"),
            })
        })
        .collect();
    let runs = run_all(config, &jobs, out_dir)?;
    let rows = values
        .iter()
        .map(|&h| {
            let per_seed: Vec<f64> = config
                .seeds
                .iter()
                .map(|&seed| {
                    runs.iter()
                        .find(|r| r.seed == seed && r.h == Some(h))
                        .expect("run exists")
                        .probe_accuracy
                })
                .collect();
            let mean = per_seed.iter().sum::<f64>() / per_seed.len() as f64;
            SweepRow { h, mean, per_seed }
        })
        .collect();
    let table = SweepTable {
        seeds: config.seeds.clone(),
        rows,
    };
    write(&out_dir.join("h_sweep.csv"), &table.to_csv())?;
    write_json(&out_dir.join("h_sweep.json"), &table)?;
    Ok(table)
}
