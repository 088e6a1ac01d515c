//! Run orchestration behind the `svrl` binary.
//!
//! A training run owns one directory under the run root (`$SVRL_RUN_ROOT`,
//! default `runs/`) holding the resolved config, a manifest, a metrics JSONL
//! stream, an eval CSV and a rolling set of checkpoints.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::config::{Regime, TrainConfig};
use crate::error::{Error, Result};
use crate::evaluator::{generation_stats, own_candidate_set, verification_accuracy, voting_accuracy, EvalSet};
use crate::grpo::RewardedGroup;
use crate::policy::PolicyParams;
use crate::rng::{derive_seed, stream};
use crate::scheduler::{Checkpoint, EvalSnapshot, Phase, StepRecord, TrainObserver, Trainer};
use crate::task_env::{Task, Vocabulary};

pub const RUN_ROOT_ENV: &str = "SVRL_RUN_ROOT";
pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const EVAL_CSV_HEADER: &str = "regime,checkpoint_step,metric,value,k,seed";
/// Checkpoints kept besides the final one.
pub const KEEP_CHECKPOINTS: usize = 3;

const CONFIG_FILE: &str = "config.toml";
const MANIFEST_FILE: &str = "manifest.json";
const METRICS_FILE: &str = "metrics.jsonl";
const EVAL_FILE: &str = "eval.csv";
const CHECKPOINT_DIR: &str = "checkpoints";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifacts {
    pub config: String,
    pub metrics: String,
    pub eval_csv: String,
    pub checkpoints: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub seed: u64,
    pub regime: Regime,
    pub overrides: Vec<String>,
    pub started_at: u64,
    pub finished_at: Option<u64>,
    pub completed: bool,
    pub artifacts: Artifacts,
    pub code_version: String,
    pub vocabulary: Vec<String>,
}

impl RunManifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Serde(format!("{}: {e}", path.display())))
    }

    fn save(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Serde(e.to_string()))?;
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

pub fn run_root() -> PathBuf {
    std::env::var_os(RUN_ROOT_ENV).map_or_else(|| PathBuf::from("runs"), PathBuf::from)
}

/// `{regime}-{hash prefix}-s{seed}`; the hash covers the seed as well.
pub fn run_dir_name(config: &TrainConfig) -> Result<String> {
    Ok(format!("{}-{}-s{}", config.regime.name(), &config.hash()?[..12], config.seed))
}

/// One CSV row of evaluation output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub regime: String,
    pub checkpoint_step: usize,
    pub metric: String,
    pub value: f64,
    pub k: usize,
    pub seed: u64,
}

pub fn snapshot_rows(snapshot: &EvalSnapshot, config: &TrainConfig) -> Vec<EvalRow> {
    let row = |metric: &str, value: f64, k: usize| EvalRow {
        regime: config.regime.name().to_string(),
        checkpoint_step: snapshot.step,
        metric: metric.to_string(),
        value,
        k,
        seed: config.seed,
    };
    let mut rows = vec![
        row("acc_at_k", snapshot.accuracy, config.eval.k),
        row("avg_tokens", snapshot.avg_tokens, config.eval.k),
    ];
    if let Some(v) = snapshot.verification_accuracy {
        rows.push(row("verification_accuracy", v, config.eval.verify_k));
    }
    rows
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::Serde(format!("{}: {e}", path.display()))
}

pub fn write_eval_csv(path: &Path, rows: &[EvalRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    if rows.is_empty() {
        w.write_record(EVAL_CSV_HEADER.split(',')).map_err(|e| csv_error(path, e))?;
    }
    for r in rows {
        w.serialize(r).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_eval_csv(path: &Path) -> Result<Vec<EvalRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let header = r.headers().map_err(|e| csv_error(path, e))?;
    if header.iter().collect::<Vec<_>>().join(",") != EVAL_CSV_HEADER {
        return Err(Error::Serde(format!("{}: unexpected header", path.display())));
    }
    r.deserialize().map(|row| row.map_err(|e| csv_error(path, e))).collect()
}

/// Streams metrics, eval rows and checkpoints into a run directory.
struct RunWriter {
    dir: PathBuf,
    metrics: BufWriter<File>,
    eval: csv::Writer<File>,
    checkpoints: Vec<PathBuf>,
}

impl RunWriter {
    fn checkpoint_path(&self, step: usize) -> PathBuf {
        self.dir.join(CHECKPOINT_DIR).join(format!("step-{step:06}.json"))
    }
}

impl TrainObserver for RunWriter {
    fn before_update(&mut self, _step: usize, _phase: Phase, _groups: &[RewardedGroup]) {}

    fn on_record(&mut self, record: &StepRecord) -> Result<()> {
        let path = self.dir.join(METRICS_FILE);
        let line = serde_json::to_string(record).map_err(|e| Error::Serde(e.to_string()))?;
        writeln!(self.metrics, "{line}").map_err(|e| Error::io(&path, e))?;
        self.metrics.flush().map_err(|e| Error::io(&path, e))
    }

    fn on_eval(&mut self, snapshot: &EvalSnapshot, trainer: &Trainer) -> Result<()> {
        let path = self.dir.join(EVAL_FILE);
        for row in snapshot_rows(snapshot, trainer.config()) {
            self.eval.serialize(row).map_err(|e| csv_error(&path, e))?;
        }
        self.eval.flush().map_err(|e| Error::io(&path, e))?;
        let ckpt_path = self.checkpoint_path(snapshot.step);
        trainer.checkpoint()?.save(&ckpt_path)?;
        self.checkpoints.push(ckpt_path);
        while self.checkpoints.len() > KEEP_CHECKPOINTS {
            let old = self.checkpoints.remove(0);
            fs::remove_file(&old).map_err(|e| Error::io(&old, e))?;
        }
        Ok(())
    }
}

fn relative(dir: &Path, path: &Path) -> String {
    path.strip_prefix(dir).unwrap_or(path).display().to_string()
}

fn latest_checkpoint(dir: &Path) -> Result<Option<PathBuf>> {
    let ckpt_dir = dir.join(CHECKPOINT_DIR);
    if !ckpt_dir.exists() {
        return Ok(None);
    }
    let mut found: Vec<PathBuf> = fs::read_dir(&ckpt_dir)
        .map_err(|e| Error::io(&ckpt_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    found.sort();
    Ok(found.pop())
}

/// Keeps the lines of a partially written run that precede `step`.
fn truncate_lines(path: &Path, keep: impl Fn(&str) -> bool) -> Result<()> {
    if !path.exists() {
        return Ok(());
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let kept: String = text.lines().filter(|l| keep(l)).map(|l| format!("{l}\n")).collect();
    fs::write(path, kept).map_err(|e| Error::io(path, e))
}

fn append_file(path: &Path) -> Result<File> {
    OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))
}

/// Trains `config` inside `root`, resuming an interrupted run with the same
/// config from its newest checkpoint. Returns the run directory.
pub fn train_in(root: &Path, config: &TrainConfig, overrides: &[String]) -> Result<PathBuf> {
    config.validate()?;
    let dir = root.join(run_dir_name(config)?);
    let config_text = config.to_toml()?;
    let mut resume = None;
    if dir.join(MANIFEST_FILE).exists() {
        let manifest = RunManifest::load(&dir)?;
        if manifest.completed {
            return Err(Error::RunCompleted(dir));
        }
        resume = latest_checkpoint(&dir)?;
    }
    fs::create_dir_all(dir.join(CHECKPOINT_DIR)).map_err(|e| Error::io(&dir, e))?;
    let config_path = dir.join(CONFIG_FILE);
    fs::write(&config_path, &config_text).map_err(|e| Error::io(&config_path, e))?;

    let mut trainer = match &resume {
        Some(path) => {
            let ckpt = Checkpoint::load(path)?;
            if ckpt.config != *config {
                return Err(Error::Checkpoint(format!("{} belongs to another config", path.display())));
            }
            Trainer::from_checkpoint(ckpt)?
        }
        None => Trainer::new(config.clone())?,
    };
    let step = trainer.step();
    let metrics_path = dir.join(METRICS_FILE);
    let eval_path = dir.join(EVAL_FILE);
    if resume.is_some() {
        truncate_lines(&metrics_path, |l| {
            serde_json::from_str::<StepRecord>(l).is_ok_and(|r| r.step <= step)
        })?;
        let mut rows = if eval_path.exists() { read_eval_csv(&eval_path)? } else { Vec::new() };
        rows.retain(|r| r.checkpoint_step <= step);
        write_eval_csv(&eval_path, &rows)?;
    } else {
        fs::write(&metrics_path, "").map_err(|e| Error::io(&metrics_path, e))?;
        write_eval_csv(&eval_path, &[])?;
    }

    let mut manifest = RunManifest {
        config_hash: config.hash()?,
        seed: config.seed,
        regime: config.regime,
        overrides: overrides.to_vec(),
        started_at: unix_now(),
        finished_at: None,
        completed: false,
        artifacts: Artifacts {
            config: CONFIG_FILE.into(),
            metrics: METRICS_FILE.into(),
            eval_csv: EVAL_FILE.into(),
            checkpoints: Vec::new(),
        },
        code_version: CODE_VERSION.into(),
        vocabulary: vocabulary_symbols(&config.task),
    };
    manifest.save(&dir)?;

    let mut writer = RunWriter {
        metrics: BufWriter::new(append_file(&metrics_path)?),
        eval: csv::WriterBuilder::new().has_headers(false).from_writer(append_file(&eval_path)?),
        checkpoints: resume.into_iter().collect(),
        dir: dir.clone(),
    };
    trainer.run(&mut writer)?;

    manifest.finished_at = Some(unix_now());
    manifest.completed = true;
    manifest.artifacts.checkpoints = writer.checkpoints.iter().map(|p| relative(&dir, p)).collect();
    manifest.save(&dir)?;
    Ok(dir)
}

fn vocabulary_symbols(task: &Task) -> Vec<String> {
    match task {
        Task::Arithmetic(_) => Vocabulary.symbols().iter().map(|s| s.to_string()).collect(),
        Task::Bandit => ["BOS", "A", "B"].iter().map(|s| s.to_string()).collect(),
    }
}

pub fn cmd_train(config_path: Option<&Path>, overrides: &[String]) -> Result<PathBuf> {
    let config = match config_path {
        Some(p) => TrainConfig::from_file(p, overrides)?,
        None => crate::config::load_with_overrides("", overrides)?,
    };
    train_in(&run_root(), &config, overrides)
}

/// Evaluates a checkpoint. `eval_config` may replace the evaluation settings
/// (and seed); its model and task must describe the same network.
pub fn cmd_eval(checkpoint_path: &Path, eval_config: Option<&Path>, out: &Path) -> Result<Vec<EvalRow>> {
    let ckpt = Checkpoint::load(checkpoint_path)?;
    let config = match eval_config {
        Some(path) => {
            let requested = TrainConfig::from_file(path, &[])?;
            if requested.policy_shape() != ckpt.config.policy_shape() || requested.task != ckpt.config.task {
                return Err(Error::Incompatible(format!(
                    "{} describes a different task or network than {}",
                    path.display(),
                    checkpoint_path.display()
                )));
            }
            requested
        }
        None => ckpt.config.clone(),
    };
    let rows = evaluate_params(&ckpt.learner.params, &config, ckpt.step)?;
    write_eval_csv(out, &rows)?;
    Ok(rows)
}

/// Every evaluator metric for `params` under `config.eval`.
pub fn evaluate_params(params: &PolicyParams, config: &TrainConfig, step: usize) -> Result<Vec<EvalRow>> {
    let ev = &config.eval;
    let set = EvalSet::generate(&config.task, config.seed, ev.size)?;
    let seed = derive_seed(config.seed, &[stream::EVAL]);
    let stats = generation_stats(params, &config.task, &set, ev.k, &ev.decode, seed)?;
    let row = |metric: &str, value: f64, k: usize| EvalRow {
        regime: config.regime.name().to_string(),
        checkpoint_step: step,
        metric: metric.to_string(),
        value,
        k,
        seed: config.seed,
    };
    let mut rows = vec![
        row("acc_at_k", stats.accuracy, ev.k),
        row("avg_tokens", stats.avg_tokens, ev.k),
    ];
    if config.task.supports_verification() {
        let triplets = own_candidate_set(params, &set, ev.verify_candidates, &ev.decode, seed)?;
        if !triplets.is_empty() {
            let acc = verification_accuracy(params, &triplets, ev.verify_k, &ev.decode, seed)?;
            rows.push(row("verification_accuracy", acc, ev.verify_k));
        }
        let votes = voting_accuracy(params, &config.task, &set, &ev.vote, &ev.decode, seed)?;
        rows.push(row("vote_majority", votes.majority, ev.vote.num_candidates));
        rows.push(row("vote_with_verify", votes.with_verify, ev.vote.num_candidates));
    }
    Ok(rows)
}

/// Cells of a merged comparison: `(metric, step) -> regime -> (sum, runs)`.
pub type CompareTable = BTreeMap<(String, usize), BTreeMap<String, (f64, usize)>>;

/// Merges the eval CSVs of several runs. Runs sharing a regime are averaged.
pub fn compare_runs(run_dirs: &[PathBuf]) -> Result<CompareTable> {
    if run_dirs.len() < 2 {
        return Err(Error::InvalidArgument("compare needs at least two run directories".into()));
    }
    let mut metric_sets: Vec<(PathBuf, BTreeSet<String>)> = Vec::new();
    let mut table = CompareTable::new();
    for dir in run_dirs {
        let rows = read_eval_csv(&dir.join(EVAL_FILE))?;
        metric_sets.push((dir.clone(), rows.iter().map(|r| r.metric.clone()).collect()));
        for r in rows {
            let cell = table
                .entry((r.metric, r.checkpoint_step))
                .or_default()
                .entry(r.regime)
                .or_insert((0.0, 0));
            cell.0 += r.value;
            cell.1 += 1;
        }
    }
    let (first_dir, first) = &metric_sets[0];
    for (dir, set) in &metric_sets[1..] {
        if set != first {
            return Err(Error::Incompatible(format!(
                "{} reports {:?} but {} reports {:?}",
                first_dir.display(),
                first,
                dir.display(),
                set
            )));
        }
    }
    Ok(table)
}

pub fn render_compare(table: &CompareTable) -> (String, String) {
    let regimes: BTreeSet<&String> = table.values().flat_map(|m| m.keys()).collect();
    let mut text = format!("{:<24} {:>6}", "metric", "step");
    for r in &regimes {
        text.push_str(&format!(" {r:>14}"));
    }
    text.push('\n');
    let mut csv = csv::Writer::from_writer(Vec::new());
    csv.write_record(["regime", "metric", "step", "value", "runs"]).expect("in-memory write");
    for ((metric, step), cells) in table {
        text.push_str(&format!("{metric:<24} {step:>6}"));
        for r in &regimes {
            match cells.get(*r) {
                Some((sum, n)) => text.push_str(&format!(" {:>14.4}", sum / *n as f64)),
                None => text.push_str(&format!(" {:>14}", "-")),
            }
        }
        text.push('\n');
        for (regime, (sum, n)) in cells {
            csv.serialize((regime, metric, step, sum / *n as f64, n)).expect("in-memory write");
        }
    }
    let csv = String::from_utf8(csv.into_inner().expect("in-memory flush")).expect("utf-8 fields");
    (text, csv)
}

pub fn cmd_compare(run_dirs: &[PathBuf], out: Option<&Path>) -> Result<String> {
    let table = compare_runs(run_dirs)?;
    let (text, csv) = render_compare(&table);
    if let Some(path) = out {
        fs::write(path, csv).map_err(|e| Error::io(path, e))?;
    }
    Ok(text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eval_rows_round_trip() {
        let row = EvalRow {
            regime: "mixed".into(),
            checkpoint_step: 25,
            metric: "acc_at_k".into(),
            value: 0.3125,
            k: 16,
            seed: 4,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("eval.csv");
        write_eval_csv(&path, std::slice::from_ref(&row)).unwrap();
        assert!(fs::read_to_string(&path).unwrap().starts_with(EVAL_CSV_HEADER));
        assert_eq!(read_eval_csv(&path).unwrap(), vec![row]);

        write_eval_csv(&path, &[]).unwrap();
        assert!(read_eval_csv(&path).unwrap().is_empty());
        fs::write(&path, "a,b,c\n1,2,3\n").unwrap();
        assert!(read_eval_csv(&path).is_err());
    }

    #[test]
    fn compare_orders_rows_and_averages_shared_regimes() {
        let root = tempfile::tempdir().unwrap();
        let mut dirs = Vec::new();
        for (i, (regime, v)) in [("self_verify", 0.5), ("generate", 0.25), ("generate", 0.75)].iter().enumerate() {
            let dir = root.path().join(format!("run{i}"));
            fs::create_dir_all(&dir).unwrap();
            let rows: Vec<EvalRow> = [10, 0]
                .iter()
                .map(|&step| EvalRow {
                    regime: regime.to_string(),
                    checkpoint_step: step,
                    metric: "acc_at_k".into(),
                    value: *v,
                    k: 16,
                    seed: i as u64,
                })
                .collect();
            write_eval_csv(&dir.join(EVAL_FILE), &rows).unwrap();
            dirs.push(dir);
        }
        let table = compare_runs(&dirs).unwrap();
        let keys: Vec<_> = table.keys().cloned().collect();
        assert_eq!(keys, vec![("acc_at_k".to_string(), 0), ("acc_at_k".to_string(), 10)]);
        assert_eq!(table[&("acc_at_k".to_string(), 0)]["generate"], (1.0, 2));
        let (text, csv) = render_compare(&table);
        assert!(text.contains("generate") && text.contains("self_verify"));
        assert!(csv.lines().nth(1).unwrap().starts_with("generate,acc_at_k,0,0.5,2"));
        assert!(compare_runs(&dirs[..1]).is_err());
    }
}
