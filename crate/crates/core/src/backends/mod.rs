//! Model backends playing the actor and the critic.
//!
//! Three interchangeable implementations sit behind [`Model`]: a scripted
//! oracle-plus-noise model, a tabular model whose fine-tuning is exact-match
//! memorisation, and a client for a remote chat endpoint.

mod config;
mod parse;
pub mod prompt;
mod remote;
mod scripted;
mod tabular;

use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

pub use config::{BackendConfig, BackendKind, ErrorModel, VerbErrors};
pub use parse::{field as parse_field, object_or_none, yes_no};
pub use prompt::{PromptError, PromptId, PromptSet, PromptTemplate};
pub use remote::{ChatContent, ChatMessage, ChatRequest, ChatResponse, RemoteModel, MAX_RETRIES};
pub use scripted::{verbalize_state, ScriptedModel};
pub use tabular::{Answer, Memory, TabularModel};

pub use crate::worldsim::ActionRecord;

use crate::actor::ActorSample;
use crate::critic::CriticSample;
use crate::instruction::{Instruction, Verb};
use crate::worldsim::{Environment, Observation, WorldState};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BackendError {
    #[error("could not parse {expected} from model reply after {attempts} attempts; last reply: {raw:?}")]
    Parse { expected: String, attempts: u32, raw: String },
    #[error("endpoint unreachable: {0}")]
    Connectivity(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("dataset does not match backend role: {0}")]
    Schema(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("invalid backend configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("i/o error: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Yes,
    No,
}

impl Label {
    pub fn from_bool(b: bool) -> Self {
        if b {
            Label::Yes
        } else {
            Label::No
        }
    }

    pub fn is_yes(self) -> bool {
        self == Label::Yes
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Yes => "yes",
            Label::No => "no",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Direct,
    SelfAsked,
    Relabeled,
}

/// A yes/no completion judgment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectionResult {
    pub label: Label,
    pub reasoning: String,
    pub provenance: Provenance,
}

impl DetectionResult {
    pub fn new(label: Label, reasoning: impl Into<String>, provenance: Provenance) -> Self {
        debug_assert!(provenance != Provenance::Relabeled || label.is_yes());
        Self { label, reasoning: reasoning.into(), provenance }
    }

    pub fn relabeled(reasoning: impl Into<String>) -> Self {
        Self::new(Label::Yes, reasoning, Provenance::Relabeled)
    }
}

/// The critic's verbal description of one object's state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateAnalysis {
    pub object: String,
    pub state_text: String,
}

pub const NOT_PRESENT: &str = "not present";

/// Inputs of one actor decision.
#[derive(Debug, Clone, Copy)]
pub struct ActorQuery<'a> {
    pub instruction: &'a Instruction,
    pub observation: &'a Observation,
    pub environment: Environment,
    /// Privileged world access, consulted only by oracle-backed models.
    pub world: Option<&'a WorldState>,
    /// Decision seed; every random draw of the call derives from it.
    pub seed: u64,
    /// Prompt variant (0 is the base prompt).
    pub variant: u32,
}

/// Inputs of one critic call on a detection frame.
#[derive(Debug, Clone, Copy)]
pub struct CriticQuery<'a> {
    pub instruction: &'a Instruction,
    pub frame: &'a Observation,
    pub environment: Environment,
    pub seed: u64,
    pub variant: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Actor,
    Critic,
}

/// Which roles a model instance serves. A shared model serves both.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Roles {
    pub actor: bool,
    pub critic: bool,
}

impl Roles {
    pub const ACTOR: Roles = Roles { actor: true, critic: false };
    pub const CRITIC: Roles = Roles { actor: false, critic: true };
    pub const BOTH: Roles = Roles { actor: true, critic: true };
}

/// Fine-tuning data handed to a backend.
#[derive(Debug, Clone, Copy)]
pub enum Dataset<'a> {
    Actor(&'a [ActorSample]),
    Critic(&'a [CriticSample]),
    /// Concatenation used when one model plays both roles.
    Joint { actor: &'a [ActorSample], critic: &'a [CriticSample] },
}

impl Dataset<'_> {
    pub fn len(&self) -> usize {
        match self {
            Dataset::Actor(a) => a.len(),
            Dataset::Critic(c) => c.len(),
            Dataset::Joint { actor, critic } => actor.len() + critic.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub(crate) fn check_roles(&self, roles: Roles) -> Result<(), BackendError> {
        let (needs_actor, needs_critic) = match self {
            Dataset::Actor(a) => (!a.is_empty(), false),
            Dataset::Critic(c) => (false, !c.is_empty()),
            Dataset::Joint { actor, critic } => (!actor.is_empty(), !critic.is_empty()),
        };
        if needs_actor && !roles.actor {
            return Err(BackendError::Schema("actor samples given to a critic-only backend".into()));
        }
        if needs_critic && !roles.critic {
            return Err(BackendError::Schema("critic samples given to an actor-only backend".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FineTuneReport {
    pub samples: usize,
    pub keys_updated: usize,
    pub exported: Option<PathBuf>,
}

/// The uniform interface behind the actor and the critic.
///
/// Inference calls take `&self` and may run concurrently; `fine_tune` needs
/// exclusive access.
pub trait Model: Send + Sync {
    fn kind(&self) -> BackendKind;

    fn actor_plan(&self, q: &ActorQuery<'_>) -> Result<ActionRecord, BackendError>;

    /// One reflect-and-revise round given the model's previous answer.
    fn actor_revise(&self, q: &ActorQuery<'_>, previous: &ActionRecord, round: u32)
        -> Result<ActionRecord, BackendError>;

    fn critic_detect(&self, q: &CriticQuery<'_>) -> Result<DetectionResult, BackendError>;

    fn critic_state_analysis(&self, object: &str, q: &CriticQuery<'_>) -> Result<StateAnalysis, BackendError>;

    /// Re-judges completion from a state analysis; provenance is always self-asked.
    fn critic_rejudge(&self, analysis: &StateAnalysis, q: &CriticQuery<'_>) -> Result<DetectionResult, BackendError>;

    /// Names the first non-target object whose state now satisfies `verb`
    /// (and did not at `baseline`, when given).
    fn critic_scan_other_objects(
        &self,
        verb: Verb,
        target: &str,
        baseline: Option<&Observation>,
        q: &CriticQuery<'_>,
    ) -> Result<Option<String>, BackendError>;

    /// Builds the hindsight instruction for `object`.
    fn critic_relabel(&self, object: Option<&str>, verb: Verb, q: &CriticQuery<'_>) -> Result<Instruction, BackendError> {
        let object = object.ok_or_else(|| BackendError::Contract("relabel requires an object".into()))?;
        relabel_template(object, verb, q.instruction)
    }

    fn fine_tune(&mut self, dataset: &Dataset<'_>) -> Result<FineTuneReport, BackendError>;
}

pub(crate) fn relabel_template(object: &str, verb: Verb, original: &Instruction) -> Result<Instruction, BackendError> {
    if object == original.object() {
        return Err(BackendError::Contract(format!("relabel target `{object}` equals the original target")));
    }
    Instruction::new(verb, object).map_err(|e| BackendError::Contract(e.to_string()))
}

/// Builds a model from its configuration. Relative paths resolve against `base_dir`.
pub fn build(config: &BackendConfig, roles: Roles, base_dir: &std::path::Path) -> Result<Box<dyn Model>, BackendError> {
    if let Err(issues) = config.validate() {
        let msg = issues.into_iter().map(|(f, m)| format!("{f}: {m}")).collect::<Vec<_>>().join("; ");
        return Err(BackendError::Config(msg));
    }
    let prompts = match &config.prompt_dir {
        Some(dir) => PromptSet::load_dir(&base_dir.join(dir))?,
        None => PromptSet::default(),
    };
    Ok(match config.kind {
        BackendKind::Scripted => Box::new(ScriptedModel::new(config.seed, config.error_model.clone().unwrap_or_default())),
        BackendKind::Tabular => {
            let base = ScriptedModel::new(config.seed, config.error_model.clone().unwrap_or_default());
            let mut model = TabularModel::new(base, roles);
            if let Some(path) = &config.memory {
                model.load_memory(&base_dir.join(path))?;
            }
            Box::new(model)
        }
        BackendKind::Remote => Box::new(RemoteModel::from_config(config, roles, prompts, base_dir)?),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::worldsim::{fixtures::tiny, observe, View};

    fn samples() -> (Vec<ActorSample>, Vec<CriticSample>) {
        let instruction: Instruction = "open the drawer".parse().unwrap();
        let world = tiny();
        let a = ActorSample {
            instruction: instruction.clone(),
            prompt_id: PromptId::ActorInteraction,
            observation: observe(&world, View::FirstPerson),
            action: ActionRecord::navigation(crate::worldsim::ActionKind::MoveAhead),
            action_list_order: 0,
        };
        let c = CriticSample {
            instruction,
            prompt_id: PromptId::SuccessDetection,
            frame: observe(&world, View::ThirdPerson),
            label: Label::Yes,
        };
        (vec![a], vec![c])
    }

    #[test]
    fn datasets_must_match_roles() {
        let (a, c) = samples();
        assert!(Dataset::Actor(&a).check_roles(Roles::ACTOR).is_ok());
        assert!(Dataset::Actor(&a).check_roles(Roles::CRITIC).is_err());
        assert!(Dataset::Critic(&c).check_roles(Roles::ACTOR).is_err());
        assert!(Dataset::Joint { actor: &a, critic: &c }.check_roles(Roles::BOTH).is_ok());
        assert!(Dataset::Joint { actor: &a, critic: &c }.check_roles(Roles::ACTOR).is_err());
        // An empty half asks nothing of the role.
        assert!(Dataset::Joint { actor: &a, critic: &[] }.check_roles(Roles::ACTOR).is_ok());
        assert_eq!(Dataset::Joint { actor: &a, critic: &c }.len(), 2);
    }

    #[test]
    fn build_checks_config_and_roles() {
        let dir = std::path::Path::new(".");
        let m = build(&BackendConfig::scripted(1, ErrorModel::default()), Roles::ACTOR, dir).unwrap();
        assert_eq!(m.kind(), BackendKind::Scripted);
        let mut m = build(&BackendConfig::tabular(1, ErrorModel::default()), Roles::CRITIC, dir).unwrap();
        let (a, c) = samples();
        assert!(m.fine_tune(&Dataset::Critic(&c)).is_ok());
        assert!(matches!(m.fine_tune(&Dataset::Actor(&a)), Err(BackendError::Schema(_))));

        let mut bad = BackendConfig::scripted(1, ErrorModel::default());
        bad.memory = Some("m.json".into());
        assert!(matches!(build(&bad, Roles::ACTOR, dir), Err(BackendError::Config(m)) if m.contains("memory")));
        let no_url = BackendConfig { endpoint_url: None, ..BackendConfig::remote("http://x") };
        assert!(matches!(build(&no_url, Roles::ACTOR, dir), Err(BackendError::Config(_))));
    }

    #[test]
    fn relabel_refuses_the_original_target() {
        let original: Instruction = "open the drawer".parse().unwrap();
        assert!(relabel_template("drawer", Verb::Open, &original).is_err());
        assert_eq!(relabel_template("cabinet", Verb::Open, &original).unwrap().raw(), "open the cabinet");
    }
}
