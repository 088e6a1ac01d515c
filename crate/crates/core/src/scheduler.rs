//! Training regimes over one shared policy.
//!
//! A regime compiles to a flat plan of [`Phase`]s, one per update step. The
//! trainer walks the plan; every stochastic draw of step `s` comes from
//! streams keyed by `(seed, s)`, so a run resumed from a checkpoint replays
//! exactly what an uninterrupted run would have done.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rayon::{ThreadPool, ThreadPoolBuilder};
use serde::{Deserialize, Serialize};

use crate::config::{BufferMode, Regime, TrainConfig};
use crate::error::{Error, Result};
use crate::evaluator::{generation_stats, own_candidate_set, verification_accuracy, EvalSet};
use crate::grpo::{collect_group, train_step, Learner, RewardedGroup, TaskKind};
use crate::pipeline::{
    balance_and_sample, build_verification_groups, collect_candidates, filter_samples, triplets_from_trajectories,
    CandidateBuffer, VerificationTriplet,
};
use crate::policy::{init_policy, OptimizerState, PolicyParams};
use crate::rng::{derive_seed, derived_rng, stream};
use crate::task_env::{Query, Task};
use crate::warmstart::warm_start;

/// Training query ids for step `s` are `s * QUERY_ID_STRIDE + i`.
pub const QUERY_ID_STRIDE: u64 = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Generate,
    SelfVerify,
    Mixed,
    /// Verification update fed by the preceding generation window.
    AlterVerify,
}

impl Phase {
    pub fn label(self) -> &'static str {
        match self {
            Phase::Generate => "generate",
            Phase::SelfVerify | Phase::AlterVerify => "self_verify",
            Phase::Mixed => "mixed",
        }
    }
}

pub fn schedule(config: &TrainConfig) -> Vec<Phase> {
    let t = config.total_steps;
    match config.regime {
        Regime::Generate => vec![Phase::Generate; t],
        Regime::SelfVerify => vec![Phase::SelfVerify; t],
        Regime::Mixed => vec![Phase::Mixed; t],
        Regime::VerifyInit => {
            let mut plan = vec![Phase::SelfVerify; config.verify_init_steps];
            plan.extend(vec![Phase::Generate; t - config.verify_init_steps]);
            plan
        }
        Regime::VerifyAlter => {
            let mut plan = Vec::new();
            for g in 1..=t {
                plan.push(Phase::Generate);
                if g % config.alternation_period_n == 0 {
                    plan.extend(vec![Phase::AlterVerify; config.verify_phase_steps]);
                }
            }
            plan
        }
    }
}

/// One line of the metrics stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub regime: String,
    pub mean_reward: f64,
    pub objective: f64,
    pub clip_fraction: f64,
    pub grad_norm: f64,
    pub mean_tokens: f64,
    pub skipped: bool,
    pub generation_groups: usize,
    pub verification_groups: usize,
    /// Share of correct answers among the step's generation rollouts.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub candidate_accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub note: Option<String>,
}

impl StepRecord {
    fn empty(step: usize, phase: Phase) -> Self {
        StepRecord {
            step,
            regime: phase.label().to_string(),
            mean_reward: 0.0,
            objective: 0.0,
            clip_fraction: 0.0,
            grad_norm: 0.0,
            mean_tokens: 0.0,
            skipped: false,
            generation_groups: 0,
            verification_groups: 0,
            candidate_accuracy: None,
            note: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSnapshot {
    /// Completed update steps when the snapshot was taken.
    pub step: usize,
    pub accuracy: f64,
    pub avg_tokens: f64,
    /// Judging a balanced set of the policy's own held-out answers.
    pub verification_accuracy: Option<f64>,
    pub verification_set: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub metrics: Vec<StepRecord>,
    pub evals: Vec<EvalSnapshot>,
    pub final_checkpoint: Option<PathBuf>,
    pub wall_clock_secs: f64,
}

impl TrainReport {
    pub fn first_eval(&self) -> Option<&EvalSnapshot> {
        self.evals.first()
    }

    pub fn last_eval(&self) -> Option<&EvalSnapshot> {
        self.evals.last()
    }
}

/// Hooks into the training loop.
pub trait TrainObserver: Send {
    /// Sees every batch right before it is used for an update.
    fn before_update(&mut self, _step: usize, _phase: Phase, _groups: &[RewardedGroup]) {}

    fn on_record(&mut self, _record: &StepRecord) -> Result<()> {
        Ok(())
    }

    fn on_eval(&mut self, _snapshot: &EvalSnapshot, _trainer: &Trainer) -> Result<()> {
        Ok(())
    }
}

impl TrainObserver for () {}

pub const CHECKPOINT_VERSION: u32 = 1;

/// Everything needed to continue a run bit-exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config_hash: String,
    pub config: TrainConfig,
    pub step: usize,
    pub learner: Learner,
    pub buffer: CandidateBuffer,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).map_err(|e| Error::Serde(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if ckpt.format_version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {}",
                ckpt.format_version
            )));
        }
        if ckpt.config.hash()? != ckpt.config_hash {
            return Err(Error::Checkpoint("stored config does not match its hash".into()));
        }
        if ckpt.learner.params.shape() != &ckpt.config.policy_shape() || !ckpt.learner.params.is_finite() {
            return Err(Error::Checkpoint("parameters do not match the stored config".into()));
        }
        Ok(ckpt)
    }
}

/// Initial policy for a config: seeded init followed by the warm start.
pub fn base_policy(config: &TrainConfig) -> Result<PolicyParams> {
    config.validate()?;
    let mut params = init_policy(config.policy_shape(), &mut derived_rng(config.seed, &[stream::INIT]))?;
    if let Task::Arithmetic(task) = &config.task {
        if config.warm_start.steps > 0 {
            let pool = build_pool(config.workers)?;
            pool.install(|| warm_start(&mut params, task, &config.warm_start, config.seed))?;
        }
    }
    Ok(params)
}

fn build_pool(workers: Option<usize>) -> Result<ThreadPool> {
    let threads = workers.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidArgument(e.to_string()))
}

pub struct Trainer {
    config: TrainConfig,
    learner: Learner,
    buffer: CandidateBuffer,
    step: usize,
    plan: Vec<Phase>,
    eval_set: EvalSet,
    pool: Arc<ThreadPool>,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        let params = base_policy(&config)?;
        Self::with_params(config, params)
    }

    /// Starts from given parameters (skipping init and warm start) with a
    /// fresh optimizer.
    pub fn with_params(config: TrainConfig, params: PolicyParams) -> Result<Self> {
        config.validate()?;
        if params.shape() != &config.policy_shape() {
            return Err(Error::ShapeMismatch("initial parameters do not match the model config".into()));
        }
        let learner = Learner {
            optimizer: OptimizerState::new(config.optimizer.clone(), params.shape()),
            params,
        };
        Self::assemble(config, learner, CandidateBuffer::new(0), 0)
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        Self::assemble(ckpt.config, ckpt.learner, ckpt.buffer, ckpt.step)
    }

    fn assemble(config: TrainConfig, learner: Learner, buffer: CandidateBuffer, step: usize) -> Result<Self> {
        let plan = schedule(&config);
        if step > plan.len() {
            return Err(Error::Checkpoint(format!("step {step} beyond a plan of {}", plan.len())));
        }
        let buffer = if buffer.capacity() == 0 {
            CandidateBuffer::new(config.buffer.capacity)
        } else {
            buffer
        };
        Ok(Trainer {
            eval_set: EvalSet::generate(&config.task, config.seed, config.eval.size)?,
            pool: Arc::new(build_pool(config.workers)?),
            config,
            learner,
            buffer,
            step,
            plan,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn params(&self) -> &PolicyParams {
        &self.learner.params
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn plan(&self) -> &[Phase] {
        &self.plan
    }

    pub fn is_finished(&self) -> bool {
        self.step >= self.plan.len()
    }

    pub fn eval_set(&self) -> &EvalSet {
        &self.eval_set
    }

    pub fn buffer(&self) -> &CandidateBuffer {
        &self.buffer
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        Ok(Checkpoint {
            format_version: CHECKPOINT_VERSION,
            config_hash: self.config.hash()?,
            config: self.config.clone(),
            step: self.step,
            learner: self.learner.clone(),
            buffer: self.buffer.clone(),
        })
    }

    pub fn evaluate(&self) -> Result<EvalSnapshot> {
        self.pool.install(|| {
            let ev = &self.config.eval;
            let seed = derive_seed(self.config.seed, &[stream::EVAL]);
            let params = &self.learner.params;
            let stats = generation_stats(params, &self.config.task, &self.eval_set, ev.k, &ev.decode, seed)?;
            let (verification_accuracy, verification_set) = if self.config.task.supports_verification() {
                let set = own_candidate_set(params, &self.eval_set, ev.verify_candidates, &ev.decode, seed)?;
                if set.is_empty() {
                    (None, 0)
                } else {
                    (Some(verification_accuracy(params, &set, ev.verify_k, &ev.decode, seed)?), set.len())
                }
            } else {
                (None, 0)
            };
            Ok(EvalSnapshot {
                step: self.step,
                accuracy: stats.accuracy,
                avg_tokens: stats.avg_tokens,
                verification_accuracy,
                verification_set,
            })
        })
    }

    /// Runs the rest of the plan with evaluations at step 0, every
    /// `eval_every` steps and at the end.
    pub fn run(&mut self, observer: &mut dyn TrainObserver) -> Result<TrainReport> {
        let start = Instant::now();
        let mut report = TrainReport::default();
        if self.step == 0 {
            let snap = self.evaluate()?;
            observer.on_eval(&snap, self)?;
            report.evals.push(snap);
        }
        while !self.is_finished() {
            let record = self.execute_step(observer)?;
            observer.on_record(&record)?;
            report.metrics.push(record);
            if self.step.is_multiple_of(self.config.eval_every) || self.is_finished() {
                let snap = self.evaluate()?;
                observer.on_eval(&snap, self)?;
                report.evals.push(snap);
            }
        }
        report.wall_clock_secs = start.elapsed().as_secs_f64();
        Ok(report)
    }

    /// Executes up to `n` steps without evaluating.
    pub fn run_steps(&mut self, n: usize, observer: &mut dyn TrainObserver) -> Result<Vec<StepRecord>> {
        let mut out = Vec::new();
        for _ in 0..n {
            if self.is_finished() {
                break;
            }
            let record = self.execute_step(observer)?;
            observer.on_record(&record)?;
            out.push(record);
        }
        Ok(out)
    }

    fn execute_step(&mut self, observer: &mut dyn TrainObserver) -> Result<StepRecord> {
        let pool = Arc::clone(&self.pool);
        pool.install(|| self.execute_step_inner(observer))
    }

    fn sample_queries(&self, s: u64, n: usize) -> Result<Vec<Query>> {
        let mut rng = derived_rng(self.config.seed, &[stream::QUERIES, s]);
        (0..n as u64)
            .map(|i| self.config.task.sample_query(&mut rng, s * QUERY_ID_STRIDE + i))
            .collect()
    }

    fn generation_groups(&self, s: u64, n: usize) -> Result<(Vec<Query>, Vec<RewardedGroup>)> {
        let cfg = &self.config;
        let queries = self.sample_queries(s, n)?;
        let mut rng = derived_rng(cfg.seed, &[stream::GEN_ROLLOUT, s]);
        let decode = cfg.task.generation_decode(&cfg.decode);
        let max_len = decode.max_new_tokens;
        let groups = queries
            .iter()
            .map(|q| {
                let prompt = cfg.task.generation_prompt(q)?;
                collect_group(
                    &self.learner.params,
                    q.id,
                    &prompt,
                    cfg.group_g,
                    &decode,
                    cfg.task.stop_token(),
                    |t| cfg.task.score_generation(q, &t.generated, max_len).reward,
                    &mut rng,
                    cfg.clip.eps_norm,
                    TaskKind::Generation,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((queries, groups))
    }

    fn candidate_triplets(&self, queries: &[Query], groups: &[RewardedGroup], s: u64) -> Vec<VerificationTriplet> {
        let raw: Vec<VerificationTriplet> = queries
            .iter()
            .zip(groups)
            .flat_map(|(q, g)| triplets_from_trajectories(q, &g.trajectories, self.config.decode.max_new_tokens, s))
            .collect();
        filter_samples(raw, self.config.decode.max_new_tokens)
    }

    fn verification_batch(&mut self, s: u64, size: usize) -> Result<Vec<RewardedGroup>> {
        let batch = balance_and_sample(
            &mut self.buffer,
            size,
            &mut derived_rng(self.config.seed, &[stream::BALANCE, s]),
        )?;
        if batch.is_empty() {
            return Ok(Vec::new());
        }
        build_verification_groups(
            &self.learner.params,
            &batch,
            self.config.group_g,
            &self.config.decode,
            &mut derived_rng(self.config.seed, &[stream::JUDGE_ROLLOUT, s]),
            self.config.clip.eps_norm,
            self.config.constant_verify_reward,
        )
    }

    fn execute_step_inner(&mut self, observer: &mut dyn TrainObserver) -> Result<StepRecord> {
        let s = self.step as u64;
        let phase = self.plan[self.step];
        let mut record = StepRecord::empty(self.step + 1, phase);
        let per_iteration = self.config.buffer.mode == BufferMode::PerIteration;
        let groups = match phase {
            Phase::Generate => {
                let (queries, groups) = self.generation_groups(s, self.config.batch_b)?;
                if self.config.regime == Regime::VerifyAlter {
                    let triplets = self.candidate_triplets(&queries, &groups, s);
                    self.buffer.insert(triplets);
                }
                groups
            }
            Phase::SelfVerify => {
                let queries = self.sample_queries(s, self.config.batch_b)?;
                let raw = collect_candidates(
                    &self.learner.params,
                    &queries,
                    self.config.group_g,
                    &self.config.decode,
                    &mut derived_rng(self.config.seed, &[stream::CANDIDATES, s]),
                    s,
                )?;
                record.candidate_accuracy = Some(raw.iter().filter(|t| t.label).count() as f64 / raw.len() as f64);
                if per_iteration {
                    self.buffer.clear();
                }
                self.buffer.insert(filter_samples(raw, self.config.decode.max_new_tokens));
                self.verification_batch(s, self.config.verify_batch())?
            }
            Phase::Mixed => {
                let gen_count = self.config.batch_b / 2;
                let (queries, mut groups) = self.generation_groups(s, gen_count)?;
                let triplets = self.candidate_triplets(&queries, &groups, s);
                if per_iteration {
                    self.buffer.clear();
                }
                self.buffer.insert(triplets);
                let verify_size = (self.config.batch_b - gen_count) / 2 * 2;
                let verification = self.verification_batch(s, verify_size)?;
                if verification.is_empty() {
                    record.note = Some("no verification data; generation only".into());
                }
                groups.extend(verification);
                groups
            }
            Phase::AlterVerify => {
                let groups = self.verification_batch(s, self.config.verify_batch())?;
                let phase_ends = self.plan.get(self.step + 1) != Some(&Phase::AlterVerify);
                if per_iteration && phase_ends {
                    self.buffer.clear();
                }
                groups
            }
        };
        if let Some(acc) = generation_accuracy(&groups) {
            record.candidate_accuracy.get_or_insert(acc);
        }
        self.step += 1;
        if groups.is_empty() {
            record.skipped = true;
            record.note.get_or_insert_with(|| "no balanced verification batch".into());
            return Ok(record);
        }
        observer.before_update(record.step, phase, &groups);
        let stats = train_step(
            &mut self.learner,
            &groups,
            self.config.inner_epochs,
            &self.config.clip,
            self.config.aggregation,
        )?;
        record.mean_reward = stats.mean_reward;
        record.objective = stats.objective;
        record.clip_fraction = stats.clip_fraction;
        record.grad_norm = stats.grad_norm;
        record.mean_tokens = stats.mean_tokens;
        record.generation_groups = stats.generation_groups;
        record.verification_groups = stats.verification_groups;
        Ok(record)
    }
}

fn generation_accuracy(groups: &[RewardedGroup]) -> Option<f64> {
    let rewards: Vec<f64> = groups
        .iter()
        .filter(|g| g.task_kind == TaskKind::Generation)
        .flat_map(|g| g.rewards.iter().copied())
        .collect();
    (!rewards.is_empty()).then(|| rewards.iter().sum::<f64>() / rewards.len() as f64)
}

pub fn train(config: &TrainConfig, observer: &mut dyn TrainObserver) -> Result<TrainReport> {
    Trainer::new(config.clone())?.run(observer)
}

fn with_regime(config: &TrainConfig, regime: Regime) -> TrainConfig {
    TrainConfig {
        regime,
        ..config.clone()
    }
}

pub fn run_generate(config: &TrainConfig) -> Result<TrainReport> {
    train(&with_regime(config, Regime::Generate), &mut ())
}

pub fn run_self_verify(config: &TrainConfig) -> Result<TrainReport> {
    train(&with_regime(config, Regime::SelfVerify), &mut ())
}

pub fn run_mixed(config: &TrainConfig) -> Result<TrainReport> {
    train(&with_regime(config, Regime::Mixed), &mut ())
}

pub fn run_verify_init(config: &TrainConfig) -> Result<TrainReport> {
    train(&with_regime(config, Regime::VerifyInit), &mut ())
}

pub fn run_verify_alter(config: &TrainConfig) -> Result<TrainReport> {
    train(&with_regime(config, Regime::VerifyAlter), &mut ())
}
