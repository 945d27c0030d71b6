use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::WorldError;
use crate::instruction::Verb;

/// Which household environment a scene imitates. Decides the agent name and
/// the action vocabulary offered to the actor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Environment {
    Ai2thor,
    Virtualhome,
}

impl Environment {
    pub fn display_name(self) -> &'static str {
        match self {
            Environment::Ai2thor => "AI2-THOR",
            Environment::Virtualhome => "VirtualHome",
        }
    }

    pub fn default_agent(self) -> &'static str {
        match self {
            Environment::Ai2thor => "locobot",
            Environment::Virtualhome => "female1",
        }
    }

    /// Actions listed in the actor prompt, in canonical order.
    pub fn action_list(self) -> &'static [ActionKind] {
        use ActionKind::*;
        match self {
            Environment::Ai2thor => &[MoveAhead, RotateLeft, RotateRight, PickupObject, OpenObject, BreakObject],
            Environment::Virtualhome => &[MoveAhead, RotateLeft, RotateRight, GrabObject, OpenObject, SitObject],
        }
    }

    pub fn object_actions(self) -> impl Iterator<Item = ActionKind> {
        self.action_list().iter().copied().filter(|a| a.is_object_action())
    }

    pub fn supports(self, verb: Verb) -> bool {
        self.action_list().contains(&ActionKind::for_verb(verb))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ActionKind {
    MoveAhead,
    RotateLeft,
    RotateRight,
    PickupObject,
    GrabObject,
    OpenObject,
    BreakObject,
    SitObject,
}

impl ActionKind {
    pub const NAVIGATION: [ActionKind; 3] =
        [ActionKind::MoveAhead, ActionKind::RotateLeft, ActionKind::RotateRight];

    pub fn as_str(self) -> &'static str {
        match self {
            ActionKind::MoveAhead => "MoveAhead",
            ActionKind::RotateLeft => "RotateLeft",
            ActionKind::RotateRight => "RotateRight",
            ActionKind::PickupObject => "PickupObject",
            ActionKind::GrabObject => "GrabObject",
            ActionKind::OpenObject => "OpenObject",
            ActionKind::BreakObject => "BreakObject",
            ActionKind::SitObject => "SitObject",
        }
    }

    pub fn is_object_action(self) -> bool {
        !Self::NAVIGATION.contains(&self)
    }

    pub fn for_verb(verb: Verb) -> ActionKind {
        match verb {
            Verb::PickUp => ActionKind::PickupObject,
            Verb::Grab => ActionKind::GrabObject,
            Verb::Open => ActionKind::OpenObject,
            Verb::Break => ActionKind::BreakObject,
            Verb::Sit => ActionKind::SitObject,
        }
    }
}

impl fmt::Display for ActionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ActionKind {
    type Err = WorldError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let all = [
            ActionKind::MoveAhead,
            ActionKind::RotateLeft,
            ActionKind::RotateRight,
            ActionKind::PickupObject,
            ActionKind::GrabObject,
            ActionKind::OpenObject,
            ActionKind::BreakObject,
            ActionKind::SitObject,
        ];
        let t = s.trim();
        all.into_iter()
            .find(|a| a.as_str().eq_ignore_ascii_case(t))
            .ok_or_else(|| WorldError::UnknownAction(s.to_string()))
    }
}

/// One actor decision: an action token, an optional target object id and the
/// model's free-text reasoning.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ActionRecord {
    pub action: String,
    pub target: Option<String>,
    #[serde(default)]
    pub reasoning: String,
}

impl ActionRecord {
    pub fn new(kind: ActionKind, target: Option<&str>, reasoning: impl Into<String>) -> Self {
        Self {
            action: kind.as_str().to_string(),
            target: if kind.is_object_action() { target.map(str::to_string) } else { None },
            reasoning: reasoning.into(),
        }
    }

    pub fn navigation(kind: ActionKind) -> Self {
        Self::new(kind, None, "")
    }

    pub fn kind(&self) -> Result<ActionKind, WorldError> {
        self.action.parse()
    }

    /// Identity of the decision, ignoring the reasoning text.
    pub fn same_decision(&self, other: &ActionRecord) -> bool {
        self.action.eq_ignore_ascii_case(&other.action) && self.target == other.target
    }

    /// Compact `Action(target)` rendering used as a memory answer and in logs.
    pub fn decision_key(&self) -> String {
        match &self.target {
            Some(t) => format!("{}({})", self.action, t),
            None => self.action.clone(),
        }
    }
}

impl fmt::Display for ActionRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.decision_key())
    }
}
