use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use super::config::BackendKind;
use super::scripted::ScriptedModel;
use super::{
    ActionRecord, ActorQuery, BackendError, CriticQuery, Dataset, DetectionResult, FineTuneReport, Label, Model,
    Provenance, Roles, StateAnalysis,
};
use crate::instruction::{Instruction, Verb};
use crate::worldsim::Observation;

/// A memorised answer.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Answer {
    Action { action: String, target: Option<String> },
    Label { label: Label },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct Vote {
    answer: Answer,
    count: u64,
    last_seen: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
struct Tally {
    votes: Vec<Vote>,
}

impl Tally {
    /// Majority, then most recently seen.
    fn winner(&self) -> Option<&Answer> {
        self.votes.iter().max_by_key(|v| (v.count, v.last_seen)).map(|v| &v.answer)
    }
}

/// Exact-match key/answer store with vote counts.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Memory {
    entries: BTreeMap<String, Tally>,
    clock: u64,
}

impl Memory {
    /// Keys ignore reasoning text and prompt ordering: only the instruction
    /// and the canonical observation matter.
    pub fn key(instruction: &Instruction, obs: &Observation) -> String {
        format!("{}\u{1f}{}", instruction.raw(), obs.canonical_key())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn record(&mut self, key: String, answer: Answer) {
        self.clock += 1;
        let tally = self.entries.entry(key).or_default();
        match tally.votes.iter_mut().find(|v| v.answer == answer) {
            Some(v) => {
                v.count += 1;
                v.last_seen = self.clock;
            }
            None => tally.votes.push(Vote { answer, count: 1, last_seen: self.clock }),
        }
    }

    pub fn recall(&self, key: &str) -> Option<&Answer> {
        self.entries.get(key).and_then(Tally::winner)
    }
}

/// Learnable policy/judge: answers from memory on trained keys and from a
/// scripted base model everywhere else.
#[derive(Debug)]
pub struct TabularModel {
    base: ScriptedModel,
    memory: Memory,
    roles: Roles,
    hits: AtomicU64,
    misses: AtomicU64,
}

impl TabularModel {
    pub fn new(base: ScriptedModel, roles: Roles) -> Self {
        Self { base, memory: Memory::default(), roles, hits: AtomicU64::new(0), misses: AtomicU64::new(0) }
    }

    pub fn memory(&self) -> &Memory {
        &self.memory
    }

    /// (memory hits, fallbacks to the base model) since construction.
    pub fn hit_stats(&self) -> (u64, u64) {
        (self.hits.load(Ordering::Relaxed), self.misses.load(Ordering::Relaxed))
    }

    pub fn load_memory(&mut self, path: &Path) -> Result<(), BackendError> {
        let text = std::fs::read_to_string(path).map_err(|e| BackendError::Io(format!("{}: {e}", path.display())))?;
        self.memory = serde_json::from_str(&text).map_err(|e| BackendError::Io(format!("{}: {e}", path.display())))?;
        Ok(())
    }

    pub fn save_memory(&self, path: &Path) -> Result<(), BackendError> {
        let text = serde_json::to_string(&self.memory).expect("memory serialises");
        std::fs::write(path, text).map_err(|e| BackendError::Io(format!("{}: {e}", path.display())))
    }

    fn recall_action(&self, q: &ActorQuery<'_>) -> Option<ActionRecord> {
        match self.memory.recall(&Memory::key(q.instruction, q.observation)) {
            Some(Answer::Action { action, target }) => Some(ActionRecord {
                action: action.clone(),
                target: target.clone(),
                reasoning: "recalled from fine-tuning data".to_string(),
            }),
            _ => None,
        }
    }

    fn count(&self, hit: bool) {
        let c = if hit { &self.hits } else { &self.misses };
        c.fetch_add(1, Ordering::Relaxed);
    }
}

impl Model for TabularModel {
    fn kind(&self) -> BackendKind {
        BackendKind::Tabular
    }

    fn actor_plan(&self, q: &ActorQuery<'_>) -> Result<ActionRecord, BackendError> {
        let recalled = self.recall_action(q);
        self.count(recalled.is_some());
        match recalled {
            Some(a) => Ok(a),
            None => self.base.actor_plan(q),
        }
    }

    fn actor_revise(&self, q: &ActorQuery<'_>, previous: &ActionRecord, round: u32) -> Result<ActionRecord, BackendError> {
        match self.recall_action(q) {
            Some(a) => Ok(a),
            None => self.base.actor_revise(q, previous, round),
        }
    }

    fn critic_detect(&self, q: &CriticQuery<'_>) -> Result<DetectionResult, BackendError> {
        let hit = match self.memory.recall(&Memory::key(q.instruction, q.frame)) {
            Some(Answer::Label { label }) => Some(*label),
            _ => None,
        };
        self.count(hit.is_some());
        match hit {
            Some(label) => Ok(DetectionResult::new(label, "recalled from fine-tuning data", Provenance::Direct)),
            None => self.base.critic_detect(q),
        }
    }

    fn critic_state_analysis(&self, object: &str, q: &CriticQuery<'_>) -> Result<StateAnalysis, BackendError> {
        self.base.critic_state_analysis(object, q)
    }

    fn critic_rejudge(&self, analysis: &StateAnalysis, q: &CriticQuery<'_>) -> Result<DetectionResult, BackendError> {
        self.base.critic_rejudge(analysis, q)
    }

    fn critic_scan_other_objects(
        &self,
        verb: Verb,
        target: &str,
        baseline: Option<&Observation>,
        q: &CriticQuery<'_>,
    ) -> Result<Option<String>, BackendError> {
        self.base.critic_scan_other_objects(verb, target, baseline, q)
    }

    fn fine_tune(&mut self, dataset: &Dataset<'_>) -> Result<FineTuneReport, BackendError> {
        dataset.check_roles(self.roles)?;
        let before = self.memory.len();
        let (actor, critic): (&[_], &[_]) = match dataset {
            Dataset::Actor(a) => (a, &[]),
            Dataset::Critic(c) => (&[], c),
            Dataset::Joint { actor, critic } => (actor, critic),
        };
        let mut touched = std::collections::BTreeSet::new();
        for s in critic {
            let key = Memory::key(&s.instruction, &s.frame);
            self.memory.record(key.clone(), Answer::Label { label: s.label });
            touched.insert(key);
        }
        for s in actor {
            let key = Memory::key(&s.instruction, &s.observation);
            let answer = Answer::Action { action: s.action.action.clone(), target: s.action.target.clone() };
            self.memory.record(key.clone(), answer);
            touched.insert(key);
        }
        tracing::debug!(new_keys = self.memory.len() - before, "tabular fine-tune");
        Ok(FineTuneReport { samples: dataset.len(), keys_updated: touched.len(), exported: None })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn action(a: &str) -> Answer {
        Answer::Action { action: a.to_string(), target: None }
    }

    #[test]
    fn majority_then_recency() {
        let mut m = Memory::default();
        m.record("k".into(), Answer::Label { label: Label::Yes });
        m.record("k".into(), Answer::Label { label: Label::No });
        m.record("k".into(), Answer::Label { label: Label::Yes });
        assert_eq!(m.recall("k"), Some(&Answer::Label { label: Label::Yes }));

        let mut m = Memory::default();
        m.record("k".into(), action("RotateLeft"));
        m.record("k".into(), action("MoveAhead"));
        assert_eq!(m.recall("k"), Some(&action("MoveAhead")), "tie goes to the most recent");
        m.record("k".into(), action("RotateLeft"));
        assert_eq!(m.recall("k"), Some(&action("RotateLeft")));
    }

    #[test]
    fn memory_round_trips_through_json() {
        let mut m = Memory::default();
        m.record("a".into(), action("MoveAhead"));
        let text = serde_json::to_string(&m).unwrap();
        assert_eq!(serde_json::from_str::<Memory>(&text).unwrap(), m);
    }

    use crate::actor::{collect_trajectory, ActorSample, DecisionMode};
    use crate::backends::config::{ErrorModel, VerbErrors};
    use crate::backends::PromptId;
    use crate::critic::CriticSample;
    use crate::worldsim::fixtures::tiny;
    use crate::worldsim::{ground_truth_success, observe, View};

    fn noisy(misact: f64, fnr: f64) -> ScriptedModel {
        ScriptedModel::new(
            5,
            ErrorModel::uniform(VerbErrors { false_negative_rate: fnr, false_positive_rate: 0.0, misact_rate: misact }),
        )
    }

    #[test]
    fn role_mismatch_is_a_schema_error() {
        let mut critic_only = TabularModel::new(noisy(0.0, 0.0), Roles::CRITIC);
        let w = tiny();
        let sample = ActorSample {
            instruction: Instruction::parse("pick up the lettuce").unwrap(),
            prompt_id: PromptId::ActorInteraction,
            observation: observe(&w, View::FirstPerson),
            action: ActionRecord::navigation(crate::worldsim::ActionKind::MoveAhead),
            action_list_order: 0,
        };
        let err = critic_only.fine_tune(&Dataset::Actor(std::slice::from_ref(&sample))).unwrap_err();
        assert!(matches!(err, BackendError::Schema(_)));
        let mut both = TabularModel::new(noisy(0.0, 0.0), Roles::BOTH);
        let r = both.fine_tune(&Dataset::Joint { actor: &[sample], critic: &[] }).unwrap();
        assert_eq!((r.samples, r.keys_updated), (1, 1));
    }

    /// After training on successful rollouts, replaying the same episodes
    /// reproduces the stored action wherever the key was seen.
    #[test]
    fn fine_tuned_actor_replays_stored_actions() {
        let task = Instruction::parse("pick up the lettuce").unwrap();
        let mut model = TabularModel::new(noisy(0.6, 0.0), Roles::ACTOR);
        let mut samples = Vec::new();
        for ep in 0..40u64 {
            let t = collect_trajectory(&model, tiny(), &task, 8, ep, DecisionMode::Direct, format!("e{ep}")).unwrap();
            if ground_truth_success(&t.final_state, &task).unwrap() {
                samples.extend(t.steps.iter().map(|s| ActorSample {
                    instruction: task.clone(),
                    prompt_id: PromptId::ActorInteraction,
                    observation: s.observation.clone(),
                    action: s.action.clone(),
                    action_list_order: 0,
                }));
            }
        }
        assert!(!samples.is_empty());
        model.fine_tune(&Dataset::Actor(&samples)).unwrap();
        for s in &samples {
            let winner = model.memory().recall(&Memory::key(&s.instruction, &s.observation)).unwrap().clone();
            let q = ActorQuery {
                instruction: &s.instruction,
                observation: &s.observation,
                environment: crate::worldsim::Environment::Ai2thor,
                world: None,
                seed: 0,
                variant: 0,
            };
            let got = model.actor_plan(&q).unwrap();
            assert_eq!(Answer::Action { action: got.action, target: got.target }, winner);
        }
        let (hits, _) = model.hit_stats();
        assert_eq!(hits as usize, samples.len());
    }

    #[test]
    fn trained_frames_override_the_base_critic() {
        let mut w = tiny();
        w.objects.get_mut("drawer").unwrap().state.opened = true;
        let frame = observe(&w, View::ThirdPerson);
        let i = Instruction::parse("open the drawer").unwrap();
        let mut model = TabularModel::new(noisy(0.0, 1.0), Roles::CRITIC);
        let q = CriticQuery { instruction: &i, frame: &frame, environment: w.environment, seed: 0, variant: 0 };
        assert_eq!(model.critic_detect(&q).unwrap().label, Label::No);
        let sample = CriticSample { instruction: i.clone(), prompt_id: PromptId::SuccessDetection, frame: frame.clone(), label: Label::Yes };
        model.fine_tune(&Dataset::Critic(&[sample])).unwrap();
        assert_eq!(model.critic_detect(&q).unwrap().label, Label::Yes);
    }

    #[test]
    fn memory_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mem.json");
        let mut a = TabularModel::new(noisy(0.0, 0.0), Roles::BOTH);
        a.memory.record("k".into(), action("MoveAhead"));
        a.save_memory(&path).unwrap();
        let mut b = TabularModel::new(noisy(0.0, 0.0), Roles::BOTH);
        b.load_memory(&path).unwrap();
        assert_eq!(a.memory(), b.memory());
    }
}
