//! The coupled self-learning loop, its ablations and the baselines.
//!
//! Per iteration: roll out the actor on every task, triage each trajectory
//! with the critic, build both datasets, fine-tune the critic then the actor,
//! and re-evaluate on a fixed seeded evaluation batch.

mod config;
mod metrics;

use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;

pub use config::{ConfigError, RunConfig, TrainingMeta, Variant};
pub use metrics::{IterationMetrics, MetricsReport, TaskMetrics, TriageCounts};

use crate::actor::{
    augment_shuffle_action_list, build_actor_dataset, collect_trajectory, ActorSample, CollectError, DatasetError,
    DecisionMode, Trajectory,
};
use crate::backends::{
    self, BackendError, BackendKind, CriticQuery, Dataset, DetectionResult, Label, Model, Provenance, Roles,
};
use crate::critic::{
    build_critic_dataset, critic_seed, evaluate_trajectory, CriticSample, EvaluationOutcome, TriageError,
    TriagePolicy, TriageResult,
};
use crate::instruction::Instruction;
use crate::seed::{self, domain};
use crate::worldsim::{ground_truth_success, SceneError, SceneSpec, WorldError};

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Collect(#[from] CollectError),
    #[error(transparent)]
    Triage(#[from] TriageError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error("evaluation batch is empty")]
    EmptyBatch,
    #[error("variant `{0}` cannot be run through this entry point")]
    WrongVariant(Variant),
}

impl RunError {
    /// True when the failure is a remote endpoint that could not be reached.
    pub fn is_connectivity(&self) -> bool {
        matches!(
            self,
            RunError::Backend(BackendError::Connectivity(_))
                | RunError::Collect(CollectError::Backend { source: BackendError::Connectivity(_), .. })
                | RunError::Triage(TriageError { source: BackendError::Connectivity(_), .. })
        )
    }
}

/// A validated configuration with its scene loaded.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: RunConfig,
    pub scene: SceneSpec,
    /// Directory relative paths in the config resolve against.
    pub base_dir: PathBuf,
}

impl Experiment {
    pub fn new(config: RunConfig, scene: SceneSpec) -> Result<Self, RunError> {
        config.validate_against(&scene)?;
        Ok(Self { config, scene, base_dir: PathBuf::from(".") })
    }

    pub fn load(config_path: &Path) -> Result<Self, RunError> {
        let config = RunConfig::load(config_path)?;
        config.validate()?;
        let base_dir = config_path.parent().map(Path::to_path_buf).unwrap_or_default();
        let scene = SceneSpec::load(&base_dir.join(&config.scene))?;
        config.validate_against(&scene)?;
        Ok(Self { config, scene, base_dir })
    }

    pub fn with_variant(mut self, v: Variant) -> Self {
        self.config.variant = v;
        self
    }
}

/// The actor and critic, or one model playing both.
pub struct Models {
    actor: Box<dyn Model>,
    critic: Option<Box<dyn Model>>,
}

impl Models {
    pub fn separate(actor: Box<dyn Model>, critic: Box<dyn Model>) -> Self {
        Self { actor, critic: Some(critic) }
    }

    pub fn shared(model: Box<dyn Model>) -> Self {
        Self { actor: model, critic: None }
    }

    pub fn build(exp: &Experiment) -> Result<Self, BackendError> {
        let c = &exp.config;
        if c.variant == Variant::SeluOne {
            return Ok(Self::shared(backends::build(&c.actor_backend, Roles::BOTH, &exp.base_dir)?));
        }
        Ok(Self::separate(
            backends::build(&c.actor_backend, Roles::ACTOR, &exp.base_dir)?,
            backends::build(&c.critic_backend, Roles::CRITIC, &exp.base_dir)?,
        ))
    }

    pub fn actor(&self) -> &dyn Model {
        self.actor.as_ref()
    }

    pub fn critic(&self) -> &dyn Model {
        self.critic.as_deref().unwrap_or(self.actor.as_ref())
    }

    pub fn is_shared(&self) -> bool {
        self.critic.is_none()
    }

    pub fn actor_mut(&mut self) -> &mut dyn Model {
        self.actor.as_mut()
    }

    /// The critic slot; the shared model when there is only one.
    pub fn critic_mut(&mut self) -> &mut dyn Model {
        match &mut self.critic {
            Some(c) => c.as_mut(),
            None => self.actor.as_mut(),
        }
    }
}

/// Everything one training iteration produced.
#[derive(Debug, Clone)]
pub struct IterationArtifacts {
    pub iteration: u32,
    pub trajectories: Vec<Trajectory>,
    pub outcomes: Vec<EvaluationOutcome>,
    /// Ids of trajectories contributing to `d_actor`, in dataset order.
    pub d_actor_ids: Vec<String>,
    /// Augmented actor dataset as handed to fine-tuning.
    pub d_actor: Vec<ActorSample>,
    pub d_critic: Vec<CriticSample>,
    pub fine_tune_calls: u32,
}

#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub report: MetricsReport,
    pub iterations: Vec<IterationArtifacts>,
}

/// One evaluation episode: a task on a seeded scene.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalEpisode {
    pub task: usize,
    pub scene_seed: u64,
    pub episode_seed: u64,
}

/// The fixed evaluation batch of a run, disjoint from training seeds.
pub fn eval_batch(config: &RunConfig) -> Vec<EvalEpisode> {
    (0..config.tasks.len())
        .flat_map(|task| {
            (0..config.eval_episodes_per_task).map(move |ep| EvalEpisode {
                task,
                scene_seed: seed::derive(config.seed, &[domain::EVAL_SCENE, task as u64, u64::from(ep)]),
                episode_seed: seed::derive(config.seed, &[domain::EVAL_SCENE, task as u64, u64::from(ep), 1]),
            })
        })
        .collect()
}

/// Detection accuracy and task success per task over `batch`, measured
/// against the simulator's ground truth.
#[allow(clippy::too_many_arguments)]
pub fn compute_metrics(
    scene: &SceneSpec,
    tasks: &[Instruction],
    batch: &[EvalEpisode],
    horizon: u32,
    actor: &dyn Model,
    critic: &dyn Model,
    mode: DecisionMode,
) -> Result<Vec<TaskMetrics>, RunError> {
    if batch.is_empty() {
        return Err(RunError::EmptyBatch);
    }
    let results: Vec<(usize, bool, bool)> = batch
        .par_iter()
        .map(|ep| -> Result<(usize, bool, bool), RunError> {
            let task = &tasks[ep.task];
            let world = scene.reset(ep.scene_seed)?;
            let id = format!("eval-t{}-{:016x}", ep.task, ep.episode_seed);
            let traj = collect_trajectory(actor, world, task, horizon, ep.episode_seed, mode, id)?;
            let truth = ground_truth_success(&traj.final_state, task)? && traj.aborted.is_none();
            let q = CriticQuery {
                instruction: task,
                frame: &traj.final_frame,
                environment: traj.environment,
                seed: critic_seed(&traj),
                variant: 0,
            };
            let said = critic.critic_detect(&q)?.label.is_yes();
            Ok((ep.task, truth, said == truth))
        })
        .collect::<Result<_, _>>()?;
    Ok(tasks
        .iter()
        .enumerate()
        .filter_map(|(i, task)| {
            let mine: Vec<_> = results.iter().filter(|r| r.0 == i).collect();
            if mine.is_empty() {
                return None;
            }
            let n = mine.len() as f64;
            Some(TaskMetrics {
                task: task.clone(),
                episodes: mine.len() as u32,
                detection_accuracy: mine.iter().filter(|r| r.2).count() as f64 / n,
                task_success_rate: mine.iter().filter(|r| r.1).count() as f64 / n,
            })
        })
        .collect())
}

/// How a variant triages, trains and acts.
#[derive(Debug, Clone, Copy)]
struct Plan {
    /// `None` means LMSI-style majority voting by the raw critic.
    policy: Option<TriagePolicy>,
    train: bool,
    train_critic: bool,
    mode: DecisionMode,
}

fn plan_for(config: &RunConfig) -> Plan {
    let base = Plan { policy: Some(TriagePolicy::FULL), train: true, train_critic: true, mode: DecisionMode::Direct };
    match config.variant {
        Variant::Selu | Variant::SeluOne => base,
        Variant::WoHr => Plan { policy: Some(TriagePolicy::WITHOUT_RELABEL), ..base },
        Variant::WoCritic => Plan { policy: Some(TriagePolicy::DIRECT_ONLY), train_critic: false, ..base },
        Variant::Lmsi => Plan { policy: None, train_critic: false, ..base },
        Variant::Dg => Plan { train: false, ..base },
        Variant::Sc => Plan { train: false, mode: DecisionMode::SelfConsistency { variants: config.sc_variants }, ..base },
        Variant::SelfRefine => Plan { train: false, mode: DecisionMode::SelfRefine { rounds: config.refine_rounds }, ..base },
    }
}

/// Collects `trajectories_per_task` training trajectories for every task.
pub fn collect_batch(exp: &Experiment, actor: &dyn Model, iteration: u32) -> Result<Vec<Trajectory>, RunError> {
    let c = &exp.config;
    let specs: Vec<(usize, u32)> =
        (0..c.tasks.len()).flat_map(|t| (0..c.trajectories_per_task).map(move |e| (t, e))).collect();
    specs
        .par_iter()
        .map(|&(t, e)| {
            let coords = [domain::TRAIN_SCENE, u64::from(iteration), t as u64, u64::from(e)];
            let scene_seed = seed::derive(c.seed, &coords);
            let episode_seed = seed::derive(scene_seed, &[1]);
            let world = exp.scene.reset(scene_seed)?;
            let id = format!("it{iteration}-t{t}-e{e}");
            Ok(collect_trajectory(actor, world, &c.tasks[t], c.horizon, episode_seed, DecisionMode::Direct, id)?)
        })
        .collect()
}

/// Triage of one trajectory by a majority vote of the raw critic over
/// `variants` prompt variants; no self-asking, no relabeling.
fn vote_triage(critic: &dyn Model, traj: &Trajectory, variants: u32) -> Result<EvaluationOutcome, RunError> {
    let mut out = EvaluationOutcome {
        trajectory_id: traj.id.clone(),
        instruction: traj.instruction.clone(),
        result: TriageResult::Discarded { reason: String::new() },
        detection: DetectionResult::new(Label::No, "", Provenance::Direct),
        relabel: None,
        frame: traj.final_frame.clone(),
    };
    if let Some(reason) = &traj.aborted {
        out.result = TriageResult::Discarded { reason: format!("aborted: {reason}") };
        return Ok(out);
    }
    let mut yes = 0;
    for v in 0..variants {
        let q = CriticQuery {
            instruction: &traj.instruction,
            frame: &traj.final_frame,
            environment: traj.environment,
            seed: critic_seed(traj),
            variant: v,
        };
        if critic.critic_detect(&q)?.label.is_yes() {
            yes += 1;
        }
    }
    let accepted = 2 * yes > variants;
    out.detection = DetectionResult::new(Label::from_bool(accepted), format!("{yes} of {variants} votes yes"), Provenance::Direct);
    out.result = if accepted {
        TriageResult::SuccessDirect
    } else {
        TriageResult::Discarded { reason: "vote negative".into() }
    };
    Ok(out)
}

fn evaluate(exp: &Experiment, models: &Models, mode: DecisionMode, variant: Variant, iteration: u32) -> Result<IterationMetrics, RunError> {
    let c = &exp.config;
    let tasks = compute_metrics(
        &exp.scene,
        &c.tasks,
        &eval_batch(c),
        c.horizon,
        models.actor(),
        models.critic(),
        mode,
    )?;
    Ok(IterationMetrics::new(variant, iteration, tasks))
}

/// Runs whatever variant the configuration names.
pub fn run(exp: &Experiment) -> Result<RunArtifacts, RunError> {
    let mut models = Models::build(exp)?;
    run_with_models(exp, &mut models)
}

/// Same as [`run`] with caller-supplied models (custom or stub backends).
pub fn run_with_models(exp: &Experiment, models: &mut Models) -> Result<RunArtifacts, RunError> {
    let c = &exp.config;
    c.validate_against(&exp.scene)?;
    let plan = plan_for(c);
    let variant = c.variant;
    let mut series = vec![evaluate(exp, models, plan.mode, variant, 0)?];
    let mut iterations = Vec::new();
    let rounds = if plan.train { c.iterations } else { 0 };

    for it in 1..=rounds {
        let trajectories = collect_batch(exp, models.actor(), it)?;
        let outcomes: Vec<EvaluationOutcome> = match plan.policy {
            Some(policy) => trajectories
                .par_iter()
                .map(|t| evaluate_trajectory(models.critic(), t, policy, None).map(|r| r.outcome))
                .collect::<Result<_, _>>()?,
            None => trajectories
                .par_iter()
                .map(|t| vote_triage(models.critic(), t, c.sc_variants))
                .collect::<Result<_, _>>()?,
        };
        let triage = TriageCounts::tally(&outcomes);
        debug_assert!(triage.reconciles());

        let d_critic = build_critic_dataset(&outcomes);
        let (d_actor_raw, d_actor_ids) = build_actor_dataset(&outcomes, &trajectories)?;
        let list_len = exp.scene.environment.action_list().len();
        let aug_seed = seed::derive(c.seed, &[domain::AUGMENT, u64::from(it)]);
        let d_actor = augment_shuffle_action_list(&d_actor_raw, c.augmentation, list_len, aug_seed)?;

        let mut calls = 0;
        if models.is_shared() {
            let critic_part: &[CriticSample] = if plan.train_critic { &d_critic } else { &[] };
            models.actor_mut().fine_tune(&Dataset::Joint { actor: &d_actor, critic: critic_part })?;
            calls += 1;
        } else {
            if plan.train_critic {
                models.critic_mut().fine_tune(&Dataset::Critic(&d_critic))?;
                calls += 1;
            }
            models.actor_mut().fine_tune(&Dataset::Actor(&d_actor))?;
            calls += 1;
        }

        let mut m = evaluate(exp, models, plan.mode, variant, it)?;
        m.triage = triage;
        m.d_actor_trajectories = d_actor_ids.len() as u64;
        m.d_actor_samples = d_actor_raw.len() as u64;
        m.d_actor_augmented = d_actor.len() as u64;
        m.d_critic_samples = d_critic.len() as u64;
        m.fine_tune_calls = calls;
        series.push(m);
        iterations.push(IterationArtifacts {
            iteration: it,
            trajectories,
            outcomes,
            d_actor_ids,
            d_actor,
            d_critic,
            fine_tune_calls: calls,
        });
    }
    Ok(RunArtifacts { report: MetricsReport { variant, series }, iterations })
}

fn run_as(exp: &Experiment, allowed: &[Variant]) -> Result<RunArtifacts, RunError> {
    if !allowed.contains(&exp.config.variant) {
        return Err(RunError::WrongVariant(exp.config.variant));
    }
    run(exp)
}

pub fn run_selu(exp: &Experiment) -> Result<RunArtifacts, RunError> {
    run_as(exp, &[Variant::Selu])
}

/// Ablations: `selu_one`, `wo_hr`, `wo_critic`.
pub fn run_variant(exp: &Experiment) -> Result<RunArtifacts, RunError> {
    run_as(exp, &[Variant::SeluOne, Variant::WoHr, Variant::WoCritic])
}

pub fn run_baseline_dg(exp: &Experiment) -> Result<RunArtifacts, RunError> {
    run_as(exp, &[Variant::Dg])
}

pub fn run_baseline_sc(exp: &Experiment) -> Result<RunArtifacts, RunError> {
    run_as(exp, &[Variant::Sc])
}

pub fn run_baseline_self_refine(exp: &Experiment) -> Result<RunArtifacts, RunError> {
    run_as(exp, &[Variant::SelfRefine])
}

pub fn run_baseline_lmsi(exp: &Experiment) -> Result<RunArtifacts, RunError> {
    run_as(exp, &[Variant::Lmsi])
}

/// Seeded shuffle helper shared by dataset splitting.
pub fn seeded_shuffle<T>(items: &mut [T], seed_value: u64) {
    let mut rng = seed::rng(seed_value, &[domain::SPLIT]);
    for i in (1..items.len()).rev() {
        let j = rng.gen_range(0..=i);
        items.swap(i, j);
    }
}

/// Whether `kind` can learn from fine-tuning in-process.
pub fn learns(kind: BackendKind) -> bool {
    kind == BackendKind::Tabular
}
