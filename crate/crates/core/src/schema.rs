//! Line-delimited JSON schemas for datasets, trajectories and metrics.
//!
//! Every record carries `schema_version`. Field order is fixed by the record
//! structs, so export -> parse -> export is byte-stable.

use std::fmt;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::actor::{ActorSample, Trajectory};
use crate::backends::{ActionRecord, Label, PromptId};
use crate::critic::CriticSample;
use crate::instruction::Instruction;
use crate::worldsim::{ActionKind, Observation, View};

pub const SCHEMA_VERSION: u32 = 1;

/// A problem with one field of one line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldError {
    pub line: usize,
    pub field: String,
    pub message: String,
}

impl fmt::Display for FieldError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: field `{}`: {}", self.line, self.field, self.message)
    }
}

impl std::error::Error for FieldError {}

#[derive(Serialize)]
struct CriticLineOut<'a> {
    schema_version: u32,
    instruction: &'a Instruction,
    prompt_id: PromptId,
    frame: &'a Observation,
    label: Label,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CriticLineIn {
    schema_version: u32,
    instruction: Instruction,
    prompt_id: PromptId,
    frame: Observation,
    label: Label,
}

#[derive(Serialize)]
struct ActorLineOut<'a> {
    schema_version: u32,
    instruction: &'a Instruction,
    prompt_id: PromptId,
    observation: &'a Observation,
    action: &'a ActionRecord,
    action_list_order: u32,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ActorLineIn {
    schema_version: u32,
    instruction: Instruction,
    prompt_id: PromptId,
    observation: Observation,
    action: ActionRecord,
    action_list_order: u32,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrajectoryLine {
    schema_version: u32,
    trajectory: Trajectory,
}

pub fn critic_line(s: &CriticSample) -> String {
    serde_json::to_string(&CriticLineOut {
        schema_version: SCHEMA_VERSION,
        instruction: &s.instruction,
        prompt_id: s.prompt_id,
        frame: &s.frame,
        label: s.label,
    })
    .expect("critic sample serialises")
}

pub fn actor_line(s: &ActorSample) -> String {
    serde_json::to_string(&ActorLineOut {
        schema_version: SCHEMA_VERSION,
        instruction: &s.instruction,
        prompt_id: s.prompt_id,
        observation: &s.observation,
        action: &s.action,
        action_list_order: s.action_list_order,
    })
    .expect("actor sample serialises")
}

pub fn trajectory_line(t: &Trajectory) -> String {
    // Serialising through an owned wrapper would clone the whole trajectory.
    let body = serde_json::to_string(t).expect("trajectory serialises");
    format!("{{\"schema_version\":{SCHEMA_VERSION},\"trajectory\":{body}}}")
}

fn to_jsonl<T>(items: &[T], f: impl Fn(&T) -> String) -> String {
    let mut out = String::new();
    for item in items {
        out.push_str(&f(item));
        out.push('\n');
    }
    out
}

pub fn critic_jsonl(samples: &[CriticSample]) -> String {
    to_jsonl(samples, critic_line)
}

pub fn actor_jsonl(samples: &[ActorSample]) -> String {
    to_jsonl(samples, actor_line)
}

pub fn trajectory_jsonl(trajs: &[Trajectory]) -> String {
    to_jsonl(trajs, trajectory_line)
}

fn decode<T: DeserializeOwned>(line: &str, lineno: usize) -> Result<T, FieldError> {
    let de = &mut serde_json::Deserializer::from_str(line);
    serde_path_to_error::deserialize(de).map_err(|e| {
        // Syntax errors carry no usable path.
        let path = match e.path().to_string() {
            p if p == "?" => ".".to_string(),
            p => p,
        };
        let message = e.inner().to_string();
        // Missing fields are reported against their parent; name the field itself.
        let field = match message.strip_prefix("missing field `").and_then(|m| m.split('`').next()) {
            Some(name) if path == "." => name.to_string(),
            Some(name) => format!("{path}.{name}"),
            None if path == "." => "<record>".to_string(),
            None => path,
        };
        FieldError { line: lineno, field, message }
    })
}

fn err(line: usize, field: &str, message: impl Into<String>) -> FieldError {
    FieldError { line, field: field.to_string(), message: message.into() }
}

fn check_version(v: u32, line: usize, errors: &mut Vec<FieldError>) {
    if v != SCHEMA_VERSION {
        errors.push(err(line, "schema_version", format!("expected {SCHEMA_VERSION}, found {v}")));
    }
}

pub fn parse_critic_line(line: &str, lineno: usize) -> Result<CriticSample, Vec<FieldError>> {
    let rec: CriticLineIn = decode(line, lineno).map_err(|e| vec![e])?;
    let mut errors = Vec::new();
    check_version(rec.schema_version, lineno, &mut errors);
    if rec.prompt_id != PromptId::SuccessDetection {
        errors.push(err(lineno, "prompt_id", format!("expected success_detection, found {}", rec.prompt_id)));
    }
    if rec.label != Label::Yes {
        errors.push(err(lineno, "label", "critic samples are always labelled yes"));
    }
    if rec.frame.view != View::ThirdPerson {
        errors.push(err(lineno, "frame.view", "detection frames are third-person"));
    }
    if errors.is_empty() {
        Ok(CriticSample { instruction: rec.instruction, prompt_id: rec.prompt_id, frame: rec.frame, label: rec.label })
    } else {
        Err(errors)
    }
}

pub fn parse_actor_line(line: &str, lineno: usize) -> Result<ActorSample, Vec<FieldError>> {
    let rec: ActorLineIn = decode(line, lineno).map_err(|e| vec![e])?;
    let mut errors = Vec::new();
    check_version(rec.schema_version, lineno, &mut errors);
    if rec.prompt_id != PromptId::ActorInteraction {
        errors.push(err(lineno, "prompt_id", format!("expected actor_interaction, found {}", rec.prompt_id)));
    }
    if rec.observation.view != View::FirstPerson {
        errors.push(err(lineno, "observation.view", "actor observations are first-person"));
    }
    match rec.action.kind() {
        Err(e) => errors.push(err(lineno, "action.action", e.to_string())),
        Ok(k) if k.is_object_action() && rec.action.target.is_none() => {
            errors.push(err(lineno, "action.target", format!("{k} needs a target object")))
        }
        Ok(k) if !k.is_object_action() && rec.action.target.is_some() => {
            errors.push(err(lineno, "action.target", format!("{k} takes no target")))
        }
        Ok(_) => {}
    }
    if rec.action_list_order >= 720 {
        errors.push(err(lineno, "action_list_order", "rank exceeds 6! orderings"));
    }
    if errors.is_empty() {
        Ok(ActorSample {
            instruction: rec.instruction,
            prompt_id: rec.prompt_id,
            observation: rec.observation,
            action: rec.action,
            action_list_order: rec.action_list_order,
        })
    } else {
        Err(errors)
    }
}

pub fn parse_trajectory_line(line: &str, lineno: usize) -> Result<Trajectory, Vec<FieldError>> {
    let rec: TrajectoryLine = decode(line, lineno).map_err(|e| vec![e])?;
    let mut errors = Vec::new();
    check_version(rec.schema_version, lineno, &mut errors);
    let t = &rec.trajectory;
    if t.steps.is_empty() && t.aborted.is_none() {
        errors.push(err(lineno, "trajectory.steps", "a completed trajectory has at least one step"));
    }
    for (i, s) in t.steps.iter().enumerate() {
        if s.action.action.parse::<ActionKind>().is_err() {
            errors.push(err(lineno, &format!("trajectory.steps[{i}].action.action"), "unknown action"));
        }
    }
    if errors.is_empty() {
        Ok(rec.trajectory)
    } else {
        Err(errors)
    }
}

/// Parses every non-empty line, collecting all field errors.
pub fn parse_jsonl<T>(
    text: &str,
    parse: impl Fn(&str, usize) -> Result<T, Vec<FieldError>>,
) -> Result<Vec<T>, Vec<FieldError>> {
    let mut out = Vec::new();
    let mut errors = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match parse(line, i + 1) {
            Ok(v) => out.push(v),
            Err(e) => errors.extend(e),
        }
    }
    if errors.is_empty() {
        Ok(out)
    } else {
        Err(errors)
    }
}
