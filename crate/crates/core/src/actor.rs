//! Trajectory collection and actor dataset construction.

use std::collections::{BTreeSet, HashMap};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::backends::{ActionRecord, ActorQuery, BackendError, Model, PromptId};
use crate::critic::EvaluationOutcome;
use crate::instruction::Instruction;
use crate::seed;
use crate::worldsim::{
    observe, step, Environment, Observation, SceneError, SceneSpec, StepOutcome, View, WorldError, WorldState,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    /// First-person observation before the action.
    pub observation: Observation,
    pub action: ActionRecord,
    pub outcome: StepOutcome,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trajectory {
    pub id: String,
    pub instruction: Instruction,
    pub environment: Environment,
    /// Episode seed; actor and critic call seeds derive from it.
    pub seed: u64,
    /// Placement seed the scene was reset with.
    pub scene_seed: u64,
    pub steps: Vec<Step>,
    /// Third-person frame before the first step.
    pub baseline_frame: Observation,
    /// Third-person frame after the last step (the detection frame).
    pub final_frame: Observation,
    pub final_state: WorldState,
    /// Set when a backend failure cut the episode short.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aborted: Option<String>,
}

/// How each action decision is produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum DecisionMode {
    Direct,
    /// Majority over `variants` prompt variants; ties go to the lowest index.
    SelfConsistency { variants: u32 },
    /// `rounds` backend calls: an initial answer then reflect-and-revise.
    SelfRefine { rounds: u32 },
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CollectError {
    #[error("horizon must be at least 1")]
    ZeroHorizon,
    #[error(transparent)]
    World(#[from] WorldError),
    #[error("trajectory {id}: {source}")]
    Backend { id: String, source: BackendError },
}

fn decide(
    actor: &dyn Model,
    q: &ActorQuery<'_>,
    mode: DecisionMode,
) -> Result<ActionRecord, BackendError> {
    match mode {
        DecisionMode::Direct => actor.actor_plan(q),
        DecisionMode::SelfConsistency { variants } => {
            let mut votes = Vec::new();
            for v in 0..variants.max(1) {
                votes.push(actor.actor_plan(&ActorQuery { variant: v, ..*q })?);
            }
            Ok(majority(&votes).clone())
        }
        DecisionMode::SelfRefine { rounds } => {
            let mut answer = actor.actor_plan(q)?;
            for round in 1..rounds.max(1) {
                answer = actor.actor_revise(q, &answer, round)?;
            }
            Ok(answer)
        }
    }
}

/// Most frequent decision; among equals the one first proposed wins.
pub fn majority(votes: &[ActionRecord]) -> &ActionRecord {
    let mut best = 0;
    let mut best_count = 0;
    for (i, v) in votes.iter().enumerate() {
        let count = votes.iter().filter(|o| o.same_decision(v)).count();
        if count > best_count {
            best = i;
            best_count = count;
        }
    }
    &votes[best]
}

/// Rolls out exactly `horizon` steps of `actor` from a fresh world.
///
/// Backend failures other than lost connectivity end the episode early and
/// flag the trajectory as aborted; connectivity failures are returned.
pub fn collect_trajectory(
    actor: &dyn Model,
    mut world: WorldState,
    instruction: &Instruction,
    horizon: u32,
    episode_seed: u64,
    mode: DecisionMode,
    id: impl Into<String>,
) -> Result<Trajectory, CollectError> {
    if horizon == 0 {
        return Err(CollectError::ZeroHorizon);
    }
    let id = id.into();
    world.horizon = horizon;
    let baseline_frame = observe(&world, View::ThirdPerson);
    let mut steps = Vec::with_capacity(horizon as usize);
    let mut aborted = None;
    for t in 1..=horizon {
        let observation = observe(&world, View::FirstPerson);
        let q = ActorQuery {
            instruction,
            observation: &observation,
            environment: world.environment,
            world: Some(&world),
            seed: seed::derive(episode_seed, &[seed::domain::ACTOR, u64::from(t)]),
            variant: 0,
        };
        let action = match decide(actor, &q, mode) {
            Ok(a) => a,
            Err(e @ BackendError::Connectivity(_)) => return Err(CollectError::Backend { id, source: e }),
            Err(e) => {
                tracing::warn!(trajectory = %id, step = t, error = %e, "aborting trajectory");
                aborted = Some(e.to_string());
                break;
            }
        };
        let (next, outcome) = match step(&world, &action) {
            Ok(r) => r,
            Err(WorldError::UnknownAction(name)) => {
                aborted = Some(format!("unknown action `{name}`"));
                break;
            }
            Err(e) => return Err(e.into()),
        };
        steps.push(Step { observation, action, outcome });
        world = next;
    }
    Ok(Trajectory {
        id,
        instruction: instruction.clone(),
        environment: world.environment,
        seed: episode_seed,
        scene_seed: world.rng_seed,
        steps,
        baseline_frame,
        final_frame: observe(&world, View::ThirdPerson),
        final_state: world,
        aborted,
    })
}

/// One `(instruction, actor prompt, observation, action)` tuple.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActorSample {
    pub instruction: Instruction,
    pub prompt_id: PromptId,
    pub observation: Observation,
    pub action: ActionRecord,
    /// Lexicographic rank of the action-list permutation shown in the prompt.
    pub action_list_order: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DatasetError {
    #[error("outcome refers to unknown trajectory `{0}`")]
    DanglingReference(String),
    #[error("permutations_per_sample must be at least 1")]
    NoPermutations,
}

/// Every step of every non-discarded trajectory, credited to the instruction
/// the critic settled on. Also returns the ids of contributing trajectories.
pub fn build_actor_dataset(
    outcomes: &[EvaluationOutcome],
    trajectories: &[Trajectory],
) -> Result<(Vec<ActorSample>, Vec<String>), DatasetError> {
    let by_id: HashMap<&str, &Trajectory> = trajectories.iter().map(|t| (t.id.as_str(), t)).collect();
    let mut samples = Vec::new();
    let mut ids = Vec::new();
    for o in outcomes {
        let traj = by_id
            .get(o.trajectory_id.as_str())
            .ok_or_else(|| DatasetError::DanglingReference(o.trajectory_id.clone()))?;
        let Some(instruction) = o.credited_instruction() else { continue };
        ids.push(traj.id.clone());
        samples.extend(traj.steps.iter().map(|s| ActorSample {
            instruction: instruction.clone(),
            prompt_id: PromptId::ActorInteraction,
            observation: s.observation.clone(),
            action: s.action.clone(),
            action_list_order: 0,
        }));
    }
    Ok((samples, ids))
}

fn factorial(n: usize) -> u64 {
    (1..=n as u64).product()
}

/// Permutation of `0..n` with the given lexicographic rank.
pub fn permutation_from_rank(mut rank: u64, n: usize) -> Vec<usize> {
    let mut pool: Vec<usize> = (0..n).collect();
    let mut out = Vec::with_capacity(n);
    for i in (0..n).rev() {
        let f = factorial(i);
        let idx = (rank / f) as usize;
        rank %= f;
        out.push(pool.remove(idx));
    }
    out
}

/// The environment's action list in the order a sample's prompt showed it.
pub fn action_list_in_order(env: Environment, rank: u32) -> Vec<&'static str> {
    let list = env.action_list();
    permutation_from_rank(u64::from(rank), list.len()).into_iter().map(|i| list[i].as_str()).collect()
}

/// Expands each sample into `permutations_per_sample` copies with distinct
/// action-list orderings. The first copy keeps the original ordering; the
/// observation and action payloads are never touched.
pub fn augment_shuffle_action_list(
    samples: &[ActorSample],
    permutations_per_sample: u32,
    list_len: usize,
    seed_value: u64,
) -> Result<Vec<ActorSample>, DatasetError> {
    if permutations_per_sample == 0 {
        return Err(DatasetError::NoPermutations);
    }
    let distinct = factorial(list_len);
    let k = u64::from(permutations_per_sample).min(distinct);
    if k < u64::from(permutations_per_sample) {
        tracing::warn!(requested = permutations_per_sample, capped = k, "not enough distinct action-list orderings");
    }
    let mut out = Vec::with_capacity(samples.len() * k as usize);
    for (i, s) in samples.iter().enumerate() {
        let mut rng = seed::rng(seed_value, &[seed::domain::AUGMENT, i as u64]);
        let mut used = BTreeSet::from([u64::from(s.action_list_order)]);
        out.push(s.clone());
        while (used.len() as u64) < k {
            let rank = rng.gen_range(0..distinct);
            if used.insert(rank) {
                out.push(ActorSample { action_list_order: rank as u32, ..s.clone() });
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ReplayError {
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error("trajectory {id}: diverged at {at}: {detail}")]
    Diverged { id: String, at: String, detail: String },
}

/// Re-executes the stored actions from the stored placement seed and checks
/// every observation, outcome and the final state against the archive.
pub fn replay_trajectory(scene: &SceneSpec, traj: &Trajectory) -> Result<(), ReplayError> {
    let diverged = |at: String, detail: &str| ReplayError::Diverged { id: traj.id.clone(), at, detail: detail.into() };
    let mut world = scene.reset(traj.scene_seed)?;
    world.horizon = traj.final_state.horizon;
    if observe(&world, View::ThirdPerson) != traj.baseline_frame {
        return Err(diverged("reset".into(), "baseline frame differs"));
    }
    for (i, s) in traj.steps.iter().enumerate() {
        if observe(&world, View::FirstPerson) != s.observation {
            return Err(diverged(format!("step {}", i + 1), "observation differs"));
        }
        let (next, outcome) = step(&world, &s.action)?;
        if outcome != s.outcome {
            return Err(diverged(format!("step {}", i + 1), "outcome differs"));
        }
        world = next;
    }
    if observe(&world, View::ThirdPerson) != traj.final_frame {
        return Err(diverged("end".into(), "final frame differs"));
    }
    if world != traj.final_state {
        return Err(diverged("end".into(), "final state differs"));
    }
    Ok(())
}
