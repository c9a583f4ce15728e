//! Evaluation and full experiment runs with their on-disk artifacts.
//!
//! A run directory holds:
//!
//! ```text
//! config.txt       every configuration key
//! metrics.log      one loss record per step
//! degeneracy.log   epoch step max_marginal marginal,...
//! model.mixem      final checkpoint
//! reports.txt      one key=value evaluation record per mode
//! run.txt          row counts, checkpoint path, wall-clock seconds
//! ```
//! Everything except `run.txt` is a deterministic function of the
//! configuration and the dataset.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use crate::clustering::{cluster_pipeline, Components, KMeansParams};
use crate::error::{Error, Result};
use crate::harness::config::{EvalMode, ExperimentConfig};
use crate::harness::data::{split_indices, Dataset};
use crate::harness::train::{train, DegeneracyRecord, StepRecord};
use crate::metrics::{parse_record, EvalReport};
use crate::model::{dominant_components, save_checkpoint, Model};

/// Clusters the representations of `dataset` under every mode and scores
/// the result against its labels. `k` is the class count.
pub fn evaluate(model: &Model, dataset: &Dataset, modes: &[EvalMode], params: &KMeansParams) -> Result<Vec<EvalReport>> {
    let labels = dataset.require_labels()?;
    let k = dataset
        .class_count
        .ok_or_else(|| Error::contract("labeled dataset without a class count"))?;
    let reps = model.representations(&dataset.features)?;
    let dominant = match model.num_components() {
        Some(_) => {
            let (_, batch) = model.mixture_batch(&dataset.features)?;
            Some(dominant_components(&batch.coefficients))
        }
        None => None,
    };
    let components = dominant.as_deref().map(|d| Components {
        dominant: d,
        num_components: model.num_components().unwrap_or(0),
    });
    modes
        .iter()
        .map(|mode| {
            let res = cluster_pipeline(&reps, components, k, mode.cluster, mode.normalize, params)?;
            EvalReport::compute(&res.assignments, labels, mode.cluster.name(), mode.normalize)
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct RunRecord {
    pub config: ExperimentConfig,
    pub steps: Vec<StepRecord>,
    pub degeneracy: Vec<DegeneracyRecord>,
    /// Empty when the dataset is unlabeled.
    pub reports: Vec<EvalReport>,
    pub checkpoint: PathBuf,
    pub model: Model,
    pub train_rows: usize,
    pub eval_rows: usize,
    pub wall_clock: Duration,
}

fn write_lines<I: IntoIterator<Item = String>>(path: &Path, header: Option<&str>, lines: I) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    if let Some(h) = header {
        writeln!(w, "{h}")?;
    }
    for l in lines {
        writeln!(w, "{l}")?;
    }
    w.flush()?;
    Ok(())
}

/// Trains on train+test (or the train split alone with `holdout_test`),
/// evaluates on the test split (every row when `test_fraction = 0`), and
/// writes the run directory `out_dir`.
pub fn run_experiment(config: &ExperimentConfig, dataset: &Dataset, out_dir: &Path) -> Result<RunRecord> {
    config.validate()?;
    let started = Instant::now();
    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join("config.txt"), config.to_text())?;

    let (train_idx, test_idx) = split_indices(dataset.len(), config.test_fraction, config.seed)?;
    let train_set = if config.holdout_test {
        dataset.select(&train_idx)
    } else {
        dataset.clone()
    };
    let eval_set = if test_idx.is_empty() {
        dataset.clone()
    } else {
        dataset.select(&test_idx)
    };

    let outcome = {
        let mut log = BufWriter::new(File::create(out_dir.join("metrics.log"))?);
        let res = train(config, &train_set, Some(&mut log));
        log.flush()?;
        res?
    };
    write_lines(
        &out_dir.join("degeneracy.log"),
        Some("# epoch step max_marginal marginal"),
        outcome.degeneracy.iter().map(|d| d.log_line()),
    )?;
    let checkpoint = out_dir.join("model.mixem");
    save_checkpoint(&outcome.model, &checkpoint)?;

    let reports = if eval_set.labels.is_some() {
        let modes = config.eval_modes(outcome.model.num_components().is_some())?;
        evaluate(&outcome.model, &eval_set, &modes, &config.kmeans_params())?
    } else {
        Vec::new()
    };
    write_lines(&out_dir.join("reports.txt"), None, reports.iter().map(|r| r.to_record()))?;

    let wall_clock = started.elapsed();
    fs::write(
        out_dir.join("run.txt"),
        format!(
            "train_rows={} eval_rows={} checkpoint={} wall_clock_s={}\n",
            train_set.len(),
            eval_set.len(),
            checkpoint.display(),
            wall_clock.as_secs_f64()
        ),
    )?;
    Ok(RunRecord {
        config: config.clone(),
        steps: outcome.steps,
        degeneracy: outcome.degeneracy,
        reports,
        checkpoint,
        model: outcome.model,
        train_rows: train_set.len(),
        eval_rows: eval_set.len(),
        wall_clock,
    })
}

/// Mean and population standard deviation of acc/nmi/ari per
/// (mode, normalized) across the `reports.txt` of several run directories.
pub fn summarize_runs(run_dirs: &[PathBuf]) -> Result<String> {
    use std::collections::BTreeMap;
    let mut groups: BTreeMap<(String, String), Vec<[f64; 3]>> = BTreeMap::new();
    for dir in run_dirs {
        let text = fs::read_to_string(dir.join("reports.txt"))?;
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let rec = parse_record(line)?;
            let get = |k: &str| -> Result<&String> {
                rec.get(k)
                    .ok_or_else(|| Error::contract(format!("{}: record lacks `{k}`", dir.display())))
            };
            let num = |k: &str| -> Result<f64> {
                get(k)?
                    .parse()
                    .map_err(|_| Error::contract(format!("{}: `{k}` is not a number", dir.display())))
            };
            groups
                .entry((get("mode")?.clone(), get("normalized")?.clone()))
                .or_default()
                .push([num("acc")?, num("nmi")?, num("ari")?]);
        }
    }
    let mut out = String::from("mode normalized runs acc_mean acc_std nmi_mean nmi_std ari_mean ari_std\n");
    for ((mode, norm), vals) in groups {
        let n = vals.len() as f64;
        out.push_str(&format!("{mode} {norm} {}", vals.len()));
        for m in 0..3 {
            let mean = vals.iter().map(|v| v[m]).sum::<f64>() / n;
            let var = vals.iter().map(|v| (v[m] - mean).powi(2)).sum::<f64>() / n;
            out.push_str(&format!(" {mean:.4} {:.4}", var.sqrt()));
        }
        out.push('\n');
    }
    Ok(out)
}
