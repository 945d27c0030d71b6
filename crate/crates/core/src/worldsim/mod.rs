//! Deterministic symbolic household environment.
//!
//! A grid of cells holding interactive objects and a single agent. The actor
//! sees a first-person view restricted to a forward cone; the critic sees a
//! third-person frame listing every object.

mod action;
mod observe;
mod planner;
mod scene;
mod state;

pub use action::{ActionKind, ActionRecord, Environment};
pub use observe::{observe, Direction, ObservedObject, Observation, View, REACH, VIEW_DISTANCE};
pub use planner::{greedy_action, legal_actions};
pub use scene::{AgentSpec, ObjectSpec, SceneError, SceneSpec};
pub use state::{
    ground_truth_success, step, Affordance, AgentPose, Cell, Facing, FailReason, ObjectState,
    StepOutcome, WorldObject, WorldState,
};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum WorldError {
    #[error("unknown action `{0}`")]
    UnknownAction(String),
    #[error("step {step} exceeds horizon {horizon}")]
    HorizonExceeded { step: u32, horizon: u32 },
    #[error("object `{0}` is not in the scene")]
    UnknownObject(String),
    #[error(transparent)]
    Scene(#[from] SceneError),
}
