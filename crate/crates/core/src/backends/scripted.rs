use rand::Rng;

use super::config::{BackendKind, ErrorModel};
use super::{
    ActionRecord, ActorQuery, BackendError, CriticQuery, Dataset, DetectionResult, FineTuneReport, Label, Model,
    Provenance, StateAnalysis, NOT_PRESENT,
};
use crate::instruction::Verb;
use crate::seed;
use crate::worldsim::{greedy_action, legal_actions, ActionKind, Affordance, ObjectState, ObservedObject, Observation};

// Call-kind tags mixed into per-call seeds.
const PLAN: u64 = 1;
const DETECT: u64 = 2;
const ANALYSE: u64 = 3;
const REVISE: u64 = 4;

/// Oracle-plus-noise model. Every answer is a pure function of the backend
/// seed and the query.
#[derive(Debug, Clone)]
pub struct ScriptedModel {
    seed: u64,
    errors: ErrorModel,
}

impl ScriptedModel {
    pub fn new(seed: u64, errors: ErrorModel) -> Self {
        Self { seed, errors }
    }

    pub fn errors(&self) -> &ErrorModel {
        &self.errors
    }

    fn rng(&self, tag: u64, call_seed: u64, variant: u32) -> rand_chacha::ChaCha8Rng {
        seed::rng(self.seed, &[tag, call_seed, u64::from(variant)])
    }

    fn plan_with(&self, q: &ActorQuery<'_>, mut rng: rand_chacha::ChaCha8Rng) -> ActionRecord {
        let misact = self.errors.for_verb(q.instruction.verb()).misact_rate;
        if rng.gen_bool(misact) {
            let legal = legal_actions(q.observation, q.environment);
            let mut pick = legal[rng.gen_range(0..legal.len())].clone();
            pick.reasoning = "exploring".to_string();
            return pick;
        }
        match q.world {
            Some(world) => greedy_action(world, q.instruction),
            None => view_only_plan(q),
        }
    }
}

/// Fallback policy when no world access is available: interact if the target
/// is in reach, approach it if visible, otherwise turn.
fn view_only_plan(q: &ActorQuery<'_>) -> ActionRecord {
    let target = q.instruction.object();
    let task = ActionKind::for_verb(q.instruction.verb());
    match q.observation.get(target) {
        Some(o) if o.distance <= crate::worldsim::REACH => ActionRecord::new(task, Some(target), "target in reach"),
        Some(_) => ActionRecord::new(ActionKind::MoveAhead, None, "approaching target"),
        None => ActionRecord::new(ActionKind::RotateRight, None, "searching"),
    }
}

/// Verbalises an object's state, one phrase per affordance. `flip_verb`
/// inverts the phrase relevant to that verb.
pub fn verbalize_state(obj: &ObservedObject, affordances: &[Affordance], flip_verb: Option<Verb>) -> String {
    let s: &ObjectState = &obj.state;
    let flip = |a: Affordance| flip_verb.map(|v| relevant_affordance(v) == a).unwrap_or(false);
    let mut parts = Vec::new();
    for &a in affordances {
        let (on, yes, no) = match a {
            Affordance::Openable => (s.opened, "open", "closed"),
            Affordance::Breakable => (s.broken, "broken", "intact"),
            Affordance::Pickupable => (s.held_by.is_some(), "held", "not held"),
            Affordance::Sittable => (s.occupied_by.is_some(), "occupied", "unoccupied"),
        };
        parts.push(if on != flip(a) { yes } else { no });
    }
    if parts.is_empty() {
        "idle".to_string()
    } else {
        parts.join(", ")
    }
}

fn relevant_affordance(verb: Verb) -> Affordance {
    match verb {
        Verb::PickUp | Verb::Grab => Affordance::Pickupable,
        Verb::Open => Affordance::Openable,
        Verb::Break => Affordance::Breakable,
        Verb::Sit => Affordance::Sittable,
    }
}

fn positive_phrase(verb: Verb) -> &'static str {
    match verb {
        Verb::PickUp | Verb::Grab => "held",
        Verb::Open => "open",
        Verb::Break => "broken",
        Verb::Sit => "occupied",
    }
}

/// Affordances are not part of an observation; infer the phrases to emit from
/// the state fields that are set plus the verb being asked about.
fn implied_affordances(obj: &ObservedObject, verb: Verb) -> Vec<Affordance> {
    let s = &obj.state;
    let mut out = Vec::new();
    for a in [Affordance::Openable, Affordance::Breakable, Affordance::Pickupable, Affordance::Sittable] {
        let set = match a {
            Affordance::Openable => s.opened,
            Affordance::Breakable => s.broken,
            Affordance::Pickupable => s.held_by.is_some(),
            Affordance::Sittable => s.occupied_by.is_some(),
        };
        if set || relevant_affordance(verb) == a {
            out.push(a);
        }
    }
    out
}

impl Model for ScriptedModel {
    fn kind(&self) -> BackendKind {
        BackendKind::Scripted
    }

    fn actor_plan(&self, q: &ActorQuery<'_>) -> Result<ActionRecord, BackendError> {
        Ok(self.plan_with(q, self.rng(PLAN, q.seed, q.variant)))
    }

    /// Keeps a legal previous answer; replaces an illegal one with a fresh plan.
    fn actor_revise(&self, q: &ActorQuery<'_>, previous: &ActionRecord, round: u32) -> Result<ActionRecord, BackendError> {
        let legal = legal_actions(q.observation, q.environment);
        if legal.iter().any(|a| a.same_decision(previous)) {
            return Ok(previous.clone());
        }
        let rng = seed::rng(self.seed, &[REVISE, q.seed, u64::from(q.variant), u64::from(round)]);
        Ok(self.plan_with(q, rng))
    }

    fn critic_detect(&self, q: &CriticQuery<'_>) -> Result<DetectionResult, BackendError> {
        let truth = q.frame.shows_completed(q.instruction).unwrap_or(false);
        let e = self.errors.for_verb(q.instruction.verb());
        let rate = if truth { e.false_negative_rate } else { e.false_positive_rate };
        let flip = self.rng(DETECT, q.seed, q.variant).gen_bool(rate);
        let label = Label::from_bool(truth != flip);
        let adj = q.instruction.verb().adjective();
        let reasoning = match label {
            Label::Yes => format!("the {} appears {adj}", q.instruction.object()),
            Label::No => format!("the {} does not appear {adj}", q.instruction.object()),
        };
        Ok(DetectionResult::new(label, reasoning, Provenance::Direct))
    }

    fn critic_state_analysis(&self, object: &str, q: &CriticQuery<'_>) -> Result<StateAnalysis, BackendError> {
        let Some(obj) = q.frame.get(object) else {
            return Ok(StateAnalysis { object: object.to_string(), state_text: NOT_PRESENT.to_string() });
        };
        let verb = q.instruction.verb();
        let truth = obj.state.completes(verb);
        let e = self.errors.for_verb(verb);
        let base = if truth { e.false_negative_rate } else { e.false_positive_rate };
        let rate = (base * self.errors.self_ask_scale).clamp(0.0, 1.0);
        let flip = self.rng(ANALYSE, q.seed, q.variant).gen_bool(rate);
        let text = verbalize_state(obj, &implied_affordances(obj, verb), flip.then_some(verb));
        Ok(StateAnalysis { object: object.to_string(), state_text: text })
    }

    fn critic_rejudge(&self, analysis: &StateAnalysis, q: &CriticQuery<'_>) -> Result<DetectionResult, BackendError> {
        let verb = q.instruction.verb();
        let done = analysis.object == q.instruction.object()
            && analysis.state_text != NOT_PRESENT
            && analysis.state_text.split(',').map(str::trim).any(|p| p == positive_phrase(verb));
        let reasoning = format!("the {} is {}", analysis.object, analysis.state_text);
        Ok(DetectionResult::new(Label::from_bool(done), reasoning, Provenance::SelfAsked))
    }

    fn critic_scan_other_objects(
        &self,
        verb: Verb,
        target: &str,
        baseline: Option<&Observation>,
        q: &CriticQuery<'_>,
    ) -> Result<Option<String>, BackendError> {
        Ok(scan_frame(verb, target, baseline, q.frame))
    }

    fn fine_tune(&mut self, dataset: &Dataset<'_>) -> Result<FineTuneReport, BackendError> {
        if !dataset.is_empty() {
            tracing::warn!(samples = dataset.len(), "scripted backend ignores fine-tuning data");
        }
        Ok(FineTuneReport { samples: dataset.len(), ..Default::default() })
    }
}

/// First non-target object, in id order, that satisfies `verb` in `frame` and
/// did not already satisfy it in `baseline`.
pub(crate) fn scan_frame(verb: Verb, target: &str, baseline: Option<&Observation>, frame: &Observation) -> Option<String> {
    let mut objs: Vec<&ObservedObject> = frame.visible.iter().collect();
    objs.sort_by(|a, b| a.id.cmp(&b.id));
    objs.into_iter()
        .filter(|o| o.id != target && o.state.completes(verb))
        .find(|o| {
            baseline
                .and_then(|b| b.get(&o.id))
                .map(|before| !before.state.completes(verb))
                .unwrap_or(true)
        })
        .map(|o| o.id.clone())
}
