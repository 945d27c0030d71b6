//! Prompt templates for the actor and the critic.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PromptError {
    #[error("{0} unbound")]
    Unbound(String),
    #[error("unknown prompt id `{0}`")]
    UnknownId(String),
    #[error("cannot read prompt asset `{path}`: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptId {
    ActorInteraction,
    SuccessDetection,
    SelfAskState,
    SelfAskJudge,
    RelabelScan,
    RelabelInstruct,
}

impl PromptId {
    pub const ALL: [PromptId; 6] = [
        PromptId::ActorInteraction,
        PromptId::SuccessDetection,
        PromptId::SelfAskState,
        PromptId::SelfAskJudge,
        PromptId::RelabelScan,
        PromptId::RelabelInstruct,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PromptId::ActorInteraction => "actor_interaction",
            PromptId::SuccessDetection => "success_detection",
            PromptId::SelfAskState => "self_ask_state",
            PromptId::SelfAskJudge => "self_ask_judge",
            PromptId::RelabelScan => "relabel_scan",
            PromptId::RelabelInstruct => "relabel_instruct",
        }
    }

    fn default_body(self) -> &'static str {
        match self {
            PromptId::ActorInteraction => ACTOR_INTERACTION,
            PromptId::SuccessDetection => SUCCESS_DETECTION,
            PromptId::SelfAskState => SELF_ASK_STATE,
            PromptId::SelfAskJudge => SELF_ASK_JUDGE,
            PromptId::RelabelScan => RELABEL_SCAN,
            PromptId::RelabelInstruct => RELABEL_INSTRUCT,
        }
    }
}

impl fmt::Display for PromptId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PromptId {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PromptId::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| PromptError::UnknownId(s.to_string()))
    }
}

const ACTOR_INTERACTION: &str = "This is the current observation from a {agent} in a {environment} environment. Now the {agent} needs to finish the task {instruction}, you can only choose the following action to interact with the environment, which are {action_list}. If you choose {pickup_action}, OpenObject, {special_action}, you should give a specific object name. Now the objects you can interact with are {visible_objs}. What's your next action to implement the command to {instruction}? You should output your action and the reasoning. The output format should be:

Action:...
Object:...
Reasoning:...";

const SUCCESS_DETECTION: &str = "The image shows a third-person view from the {agent}'s perspective in a {environment} environment. Please check whether the {object} in the image is {verb_adj} or not? You should output yes or no, and the reasoning. The output format should be:

Result:...
Reasoning:...";

const SELF_ASK_STATE: &str = "The image shows a third-person view from the {agent}'s perspective in a {environment} environment. Please check the state of the {object} in the image. You should output the state and the reasoning. The output format should be:

State:...
Reasoning:...";

const SELF_ASK_JUDGE: &str = "The image shows a third-person view from the {agent}'s perspective in a {environment} environment. The {object} in the observation is in {state} state, please determine whether the {instruction} has been completed or not. You should output yes or no, and the reasoning. The output format should be:

Result:...
Reasoning:...";

const RELABEL_SCAN: &str = "The image shows a third-person view from the {agent}'s perspective in a {environment} environment. Please see the image carefully. Determine whether there is any object that is {verb_adj} by the {agent}? You should output the object name and the reasoning. The output format should be:

Object:...
Reasoning:...";

const RELABEL_INSTRUCT: &str = "The image shows a third-person view from the {agent}'s perspective in a {environment} environment. The {object} in the observation is {verb_adj}, you should give a new instruction based on it. The original instruction is {instruction}, what's the new instruction? The output format should be:

New instruction:...
Reasoning:...";

/// A template body with `{name}` placeholders.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub id: PromptId,
    pub body: String,
}

impl PromptTemplate {
    pub fn default_for(id: PromptId) -> Self {
        Self { id, body: id.default_body().to_string() }
    }

    /// Placeholder names in order of first appearance.
    pub fn placeholders(&self) -> Vec<String> {
        let mut names: Vec<String> = Vec::new();
        for name in scan(&self.body).into_iter().filter_map(|seg| match seg {
            Segment::Slot(n) => Some(n),
            Segment::Text(_) => None,
        }) {
            if !names.iter().any(|n| n == name) {
                names.push(name.to_string());
            }
        }
        names
    }

    /// Substitutes every placeholder. Templates whose body never mentions the
    /// instruction get it appended as a trailing context line, so every
    /// rendered prompt carries the task text.
    pub fn render(&self, bindings: &BTreeMap<&str, String>) -> Result<String, PromptError> {
        let mut out = String::with_capacity(self.body.len() + 64);
        let mut mentions_instruction = false;
        for seg in scan(&self.body) {
            match seg {
                Segment::Text(t) => out.push_str(t),
                Segment::Slot(name) => {
                    mentions_instruction |= name == "instruction";
                    let value = bindings.get(name).ok_or_else(|| PromptError::Unbound(name.to_string()))?;
                    out.push_str(value);
                }
            }
        }
        if !mentions_instruction {
            let ins = bindings
                .get("instruction")
                .ok_or_else(|| PromptError::Unbound("instruction".to_string()))?;
            out.push_str("\nInstruction: ");
            out.push_str(ins);
        }
        Ok(out)
    }
}

enum Segment<'a> {
    Text(&'a str),
    Slot(&'a str),
}

fn scan(body: &str) -> Vec<Segment<'_>> {
    let mut segs = Vec::new();
    let mut rest = body;
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        let close = after.find('}');
        let name = close.map(|c| &after[..c]);
        match name {
            Some(n) if !n.is_empty() && n.bytes().all(|b| b.is_ascii_lowercase() || b == b'_') => {
                segs.push(Segment::Text(&rest[..open]));
                segs.push(Segment::Slot(n));
                rest = &after[n.len() + 1..];
            }
            _ => {
                segs.push(Segment::Text(&rest[..=open]));
                rest = after;
            }
        }
    }
    segs.push(Segment::Text(rest));
    segs
}

/// The six templates used by one model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptSet {
    templates: BTreeMap<PromptId, PromptTemplate>,
}

impl Default for PromptSet {
    fn default() -> Self {
        Self {
            templates: PromptId::ALL.into_iter().map(|id| (id, PromptTemplate::default_for(id))).collect(),
        }
    }
}

impl PromptSet {
    /// Defaults overridden by any `<prompt_id>.txt` found in `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self, PromptError> {
        let mut set = Self::default();
        for id in PromptId::ALL {
            let path = dir.join(format!("{}.txt", id.as_str()));
            if path.exists() {
                let body = std::fs::read_to_string(&path).map_err(|e| PromptError::Io {
                    path: path.display().to_string(),
                    message: e.to_string(),
                })?;
                set.templates.insert(id, PromptTemplate { id, body: body.trim_end().to_string() });
            }
        }
        Ok(set)
    }

    pub fn get(&self, id: PromptId) -> &PromptTemplate {
        &self.templates[&id]
    }
}
