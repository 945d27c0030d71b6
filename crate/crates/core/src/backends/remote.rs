//! Client for a chat-style JSON endpoint.
//!
//! Request: `{model, messages: [{role, content: [{type: "text", text}, {type: "image_ref", ...}]}]}`.
//! Response: `{content: "<reply text>"}`. Frames are sent as scene-description
//! text inside the `image_ref` part since the simulator does not render.

use std::path::{Path, PathBuf};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{BackendConfig, BackendKind};
use super::parse::{field, object_or_none, yes_no};
use super::prompt::{PromptId, PromptSet};
use super::{
    ActionRecord, ActorQuery, BackendError, CriticQuery, Dataset, DetectionResult, FineTuneReport, Label, Model,
    Provenance, Roles, StateAnalysis,
};
use crate::instruction::{Instruction, Verb};
use crate::worldsim::{ActionKind, Environment, Observation};

/// Re-prompts after an unparseable reply before giving up.
pub const MAX_RETRIES: u32 = 3;
const TRANSPORT_RETRIES: u32 = 3;
const DEFAULT_TOKEN_ENV: &str = "SELU_REMOTE_TOKEN";

/// Chain-of-thought nudges appended for prompt variants 1, 2, ...
const VARIANT_HINTS: [&str; 3] = [
    "Think step by step about where the target object is before answering.",
    "First list the objects you can see and their directions, then decide.",
    "Consider whether the target is within reach before choosing an interaction.",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ChatContent {
    Text { text: String },
    ImageRef { id: String, description: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: Vec<ChatContent>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub content: String,
}

/// Counting semaphore bounding in-flight requests.
#[derive(Debug)]
struct Limiter {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Limiter {
    fn new(n: usize) -> Self {
        Self { free: Mutex::new(n), cv: Condvar::new() }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap();
        while *free == 0 {
            free = self.cv.wait(free).unwrap();
        }
        *free -= 1;
        Permit(self)
    }
}

struct Permit<'a>(&'a Limiter);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap() += 1;
        self.0.cv.notify_one();
    }
}

pub struct RemoteModel {
    endpoint: String,
    token: Option<String>,
    model: String,
    prompts: PromptSet,
    roles: Roles,
    agent: ureq::Agent,
    limiter: Limiter,
    export_dir: Option<PathBuf>,
    exports: u32,
}

impl std::fmt::Debug for RemoteModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteModel").field("endpoint", &self.endpoint).field("model", &self.model).finish()
    }
}

impl RemoteModel {
    pub fn new(endpoint: impl Into<String>, prompts: PromptSet, roles: Roles) -> Self {
        Self {
            endpoint: endpoint.into(),
            token: None,
            model: "selu-remote".to_string(),
            prompts,
            roles,
            agent: ureq::AgentBuilder::new().timeout(Duration::from_secs(30)).build(),
            limiter: Limiter::new(4),
            export_dir: None,
            exports: 0,
        }
    }

    pub fn from_config(config: &BackendConfig, roles: Roles, prompts: PromptSet, base_dir: &Path) -> Result<Self, BackendError> {
        let endpoint = config
            .endpoint_url
            .clone()
            .ok_or_else(|| BackendError::Config("endpoint_url: required for kind `remote`".into()))?;
        let token_env = config.token_env.as_deref().unwrap_or(DEFAULT_TOKEN_ENV);
        let mut m = Self::new(endpoint, prompts, roles);
        m.token = std::env::var(token_env).ok().filter(|t| !t.is_empty());
        if let Some(name) = &config.model {
            m.model = name.clone();
        }
        if let Some(n) = config.max_in_flight {
            m.limiter = Limiter::new(n);
        }
        if let Some(secs) = config.timeout_secs {
            m.agent = ureq::AgentBuilder::new().timeout(Duration::from_secs(secs)).build();
        }
        m.export_dir = config.export_dir.as_ref().map(|d| base_dir.join(d));
        Ok(m)
    }

    pub fn with_export_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.export_dir = Some(dir.into());
        self
    }

    fn request(&self, prompt: &str, frame: Option<&Observation>) -> ChatRequest {
        let mut content = vec![ChatContent::Text { text: prompt.to_string() }];
        if let Some(f) = frame {
            let description = f.describe();
            let id = hex::encode(&Sha256::digest(description.as_bytes())[..8]);
            content.push(ChatContent::ImageRef { id, description });
        }
        ChatRequest { model: self.model.clone(), messages: vec![ChatMessage { role: "user".into(), content }] }
    }

    /// One round trip; transport failures are retried, then reported as
    /// connectivity errors.
    fn send(&self, req: &ChatRequest) -> Result<String, BackendError> {
        let _permit = self.limiter.acquire();
        let mut last = String::new();
        for _ in 0..=TRANSPORT_RETRIES {
            let mut call = self.agent.post(&self.endpoint);
            if let Some(t) = &self.token {
                call = call.set("Authorization", &format!("Bearer {t}"));
            }
            match call.send_json(req) {
                Ok(resp) => {
                    let body: ChatResponse = resp
                        .into_json()
                        .map_err(|e| BackendError::Protocol(format!("malformed response body: {e}")))?;
                    return Ok(body.content);
                }
                Err(ureq::Error::Status(code, resp)) if code < 500 => {
                    let text = resp.into_string().unwrap_or_default();
                    return Err(BackendError::Protocol(format!("HTTP {code}: {text}")));
                }
                Err(e) => last = e.to_string(),
            }
        }
        Err(BackendError::Connectivity(last))
    }

    /// Sends `prompt`, re-prompting up to [`MAX_RETRIES`] times until `parse`
    /// accepts the reply.
    fn ask<T>(
        &self,
        prompt: String,
        frame: Option<&Observation>,
        expected: &str,
        parse: impl Fn(&str) -> Option<T>,
    ) -> Result<T, BackendError> {
        let mut text = prompt.clone();
        let mut raw = String::new();
        for attempt in 0..=MAX_RETRIES {
            if attempt > 0 {
                text = format!(
                    "{prompt}\n\nYour previous reply could not be parsed:\n{raw}\nReply again using exactly the requested output format."
                );
            }
            raw = self.send(&self.request(&text, frame))?;
            if let Some(v) = parse(&raw) {
                return Ok(v);
            }
            tracing::debug!(attempt, expected, "unparseable reply");
        }
        Err(BackendError::Parse { expected: expected.to_string(), attempts: MAX_RETRIES + 1, raw })
    }

    fn common_bindings(&self, env: Environment, instruction: &Instruction) -> std::collections::BTreeMap<&'static str, String> {
        let mut b = std::collections::BTreeMap::new();
        b.insert("agent", env.default_agent().to_string());
        b.insert("environment", env.display_name().to_string());
        b.insert("instruction", instruction.raw().to_string());
        b.insert("object", instruction.object().to_string());
        b.insert("verb_adj", instruction.verb().adjective().to_string());
        b
    }

    fn actor_prompt(&self, q: &ActorQuery<'_>) -> Result<String, BackendError> {
        let mut b = self.common_bindings(q.environment, q.instruction);
        let list = q.environment.action_list();
        b.insert("action_list", list.iter().map(|a| a.as_str()).collect::<Vec<_>>().join(", "));
        let mut objs: Vec<&str> = q.observation.visible.iter().map(|o| o.id.as_str()).collect();
        objs.sort_unstable();
        b.insert("visible_objs", if objs.is_empty() { "none".to_string() } else { objs.join(", ") });
        let (pickup, special) = match q.environment {
            Environment::Ai2thor => ("PickupObject", "BreakObject"),
            Environment::Virtualhome => ("GrabObject", "SitObject"),
        };
        b.insert("pickup_action", pickup.to_string());
        b.insert("special_action", special.to_string());
        let mut text = self.prompts.get(PromptId::ActorInteraction).render(&b)?;
        if q.variant > 0 {
            text.push('\n');
            text.push_str(VARIANT_HINTS[(q.variant as usize - 1) % VARIANT_HINTS.len()]);
        }
        Ok(text)
    }

    fn critic_prompt(&self, id: PromptId, q: &CriticQuery<'_>, extra: &[(&'static str, String)]) -> Result<String, BackendError> {
        let mut b = self.common_bindings(q.environment, q.instruction);
        for (k, v) in extra {
            b.insert(k, v.clone());
        }
        let mut text = self.prompts.get(id).render(&b)?;
        if q.variant > 0 {
            text.push('\n');
            text.push_str(VARIANT_HINTS[(q.variant as usize - 1) % VARIANT_HINTS.len()]);
        }
        Ok(text)
    }
}

fn parse_action(reply: &str) -> Option<ActionRecord> {
    let kind: ActionKind = field(reply, "Action")?.parse().ok()?;
    let target = field(reply, "Object").and_then(object_or_none);
    if kind.is_object_action() && target.is_none() {
        return None;
    }
    let reasoning = field(reply, "Reasoning").unwrap_or_default();
    Some(ActionRecord::new(kind, target.as_deref(), reasoning))
}

fn parse_detection(reply: &str, provenance: Provenance) -> Option<DetectionResult> {
    let yes = yes_no(reply)?;
    let reasoning = field(reply, "Reasoning").unwrap_or_default();
    Some(DetectionResult::new(Label::from_bool(yes), reasoning, provenance))
}

impl Model for RemoteModel {
    fn kind(&self) -> BackendKind {
        BackendKind::Remote
    }

    fn actor_plan(&self, q: &ActorQuery<'_>) -> Result<ActionRecord, BackendError> {
        let prompt = self.actor_prompt(q)?;
        self.ask(prompt, Some(q.observation), "Action/Object block", parse_action)
    }

    fn actor_revise(&self, q: &ActorQuery<'_>, previous: &ActionRecord, _round: u32) -> Result<ActionRecord, BackendError> {
        let prompt = format!(
            "{}\n\nYour previous answer was:\nAction: {}\nObject: {}\nReasoning: {}\nReflect on whether it is correct and give your final answer in the same format.",
            self.actor_prompt(q)?,
            previous.action,
            previous.target.as_deref().unwrap_or("None"),
            previous.reasoning
        );
        self.ask(prompt, Some(q.observation), "Action/Object block", parse_action)
    }

    fn critic_detect(&self, q: &CriticQuery<'_>) -> Result<DetectionResult, BackendError> {
        let prompt = self.critic_prompt(PromptId::SuccessDetection, q, &[])?;
        self.ask(prompt, Some(q.frame), "Result: yes/no", |r| parse_detection(r, Provenance::Direct))
    }

    fn critic_state_analysis(&self, object: &str, q: &CriticQuery<'_>) -> Result<StateAnalysis, BackendError> {
        let prompt = self.critic_prompt(PromptId::SelfAskState, q, &[("object", object.to_string())])?;
        self.ask(prompt, Some(q.frame), "State: line", |r| {
            field(r, "State").map(|s| StateAnalysis { object: object.to_string(), state_text: s.to_string() })
        })
    }

    fn critic_rejudge(&self, analysis: &StateAnalysis, q: &CriticQuery<'_>) -> Result<DetectionResult, BackendError> {
        let prompt = self.critic_prompt(
            PromptId::SelfAskJudge,
            q,
            &[("object", analysis.object.clone()), ("state", analysis.state_text.clone())],
        )?;
        self.ask(prompt, Some(q.frame), "Result: yes/no", |r| parse_detection(r, Provenance::SelfAsked))
    }

    fn critic_scan_other_objects(
        &self,
        verb: Verb,
        target: &str,
        _baseline: Option<&Observation>,
        q: &CriticQuery<'_>,
    ) -> Result<Option<String>, BackendError> {
        let prompt = self.critic_prompt(PromptId::RelabelScan, q, &[("verb_adj", verb.adjective().to_string())])?;
        let named = self.ask(prompt, Some(q.frame), "Object: line", |r| field(r, "Object").map(object_or_none))?;
        // Only objects actually in the frame and distinct from the target count.
        Ok(named.filter(|n| n != target && q.frame.get(n).is_some()))
    }

    fn critic_relabel(&self, object: Option<&str>, verb: Verb, q: &CriticQuery<'_>) -> Result<Instruction, BackendError> {
        let object = object.ok_or_else(|| BackendError::Contract("relabel requires an object".into()))?;
        let prompt = self.critic_prompt(
            PromptId::RelabelInstruct,
            q,
            &[("object", object.to_string()), ("verb_adj", verb.adjective().to_string())],
        )?;
        let original = q.instruction.object().to_string();
        self.ask(prompt, Some(q.frame), "New instruction: line", |r| {
            let ins = Instruction::parse(field(r, "New instruction")?).ok()?;
            (ins.object() != original).then_some(ins)
        })
    }

    /// Writes the dataset to the export directory; the model itself is unchanged.
    fn fine_tune(&mut self, dataset: &Dataset<'_>) -> Result<FineTuneReport, BackendError> {
        dataset.check_roles(self.roles)?;
        let Some(dir) = self.export_dir.clone() else {
            tracing::warn!("remote backend has no export_dir; fine-tuning data dropped");
            return Ok(FineTuneReport { samples: dataset.len(), ..Default::default() });
        };
        std::fs::create_dir_all(&dir).map_err(|e| BackendError::Io(e.to_string()))?;
        self.exports += 1;
        let path = dir.join(format!("finetune-{:03}.jsonl", self.exports));
        let mut lines = String::new();
        let (actor, critic): (&[_], &[_]) = match dataset {
            Dataset::Actor(a) => (a, &[]),
            Dataset::Critic(c) => (&[], c),
            Dataset::Joint { actor, critic } => (actor, critic),
        };
        for s in critic {
            lines.push_str(&crate::schema::critic_line(s));
            lines.push('\n');
        }
        for s in actor {
            lines.push_str(&crate::schema::actor_line(s));
            lines.push('\n');
        }
        std::fs::write(&path, lines).map_err(|e| BackendError::Io(e.to_string()))?;
        Ok(FineTuneReport { samples: dataset.len(), keys_updated: 0, exported: Some(path) })
    }
}
