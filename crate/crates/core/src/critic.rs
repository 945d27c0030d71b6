//! Trajectory triage and critic dataset construction.
//!
//! Each trajectory takes exactly one branch: direct detection, self-asking
//! correction, hindsight relabeling, or discard.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::actor::Trajectory;
use crate::backends::{BackendError, CriticQuery, DetectionResult, Label, Model, PromptId, Provenance, StateAnalysis};
pub use crate::instruction::Instruction;
use crate::instruction::{InstructionError, Verb};
use crate::seed;
use crate::worldsim::Observation;

/// Target object named by an instruction (raw text is parsed by template).
pub fn extract_object(text: &str) -> Result<String, InstructionError> {
    Instruction::parse(text).map(|i| i.object().to_string())
}

/// Verb of an instruction; multi-word verbs are matched first.
pub fn extract_verb(text: &str) -> Result<Verb, InstructionError> {
    Instruction::parse(text).map(|i| i.verb())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TriageResult {
    SuccessDirect,
    SuccessSelfAsked,
    SuccessRelabeled { new_instruction: Instruction },
    Discarded { reason: String },
}

impl TriageResult {
    pub fn is_success(&self) -> bool {
        !matches!(self, TriageResult::Discarded { .. })
    }
}

/// The verdict on one trajectory together with its detection frame.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvaluationOutcome {
    pub trajectory_id: String,
    pub instruction: Instruction,
    pub result: TriageResult,
    pub detection: DetectionResult,
    pub relabel: Option<String>,
    pub frame: Observation,
}

impl EvaluationOutcome {
    /// Instruction the trajectory is credited with, if any.
    pub fn credited_instruction(&self) -> Option<&Instruction> {
        match &self.result {
            TriageResult::SuccessDirect | TriageResult::SuccessSelfAsked => Some(&self.instruction),
            TriageResult::SuccessRelabeled { new_instruction } => Some(new_instruction),
            TriageResult::Discarded { .. } => None,
        }
    }
}

/// Which correction stages run after a negative direct detection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TriagePolicy {
    pub self_ask: bool,
    pub relabel: bool,
}

impl TriagePolicy {
    pub const FULL: TriagePolicy = TriagePolicy { self_ask: true, relabel: true };
    pub const WITHOUT_RELABEL: TriagePolicy = TriagePolicy { self_ask: true, relabel: false };
    pub const DIRECT_ONLY: TriagePolicy = TriagePolicy { self_ask: false, relabel: false };
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("trajectory {trajectory_id}: {source}")]
pub struct TriageError {
    pub trajectory_id: String,
    #[source]
    pub source: BackendError,
}

/// Triage output plus the oracle's verdict when one was supplied. The oracle
/// never influences `outcome`.
#[derive(Debug, Clone, PartialEq)]
pub struct Triage {
    pub outcome: EvaluationOutcome,
    pub oracle_success: Option<bool>,
}

/// Seed of every critic call made about `traj`.
pub fn critic_seed(traj: &Trajectory) -> u64 {
    seed::derive(traj.seed, &[seed::domain::CRITIC])
}

pub fn evaluate_trajectory(
    critic: &dyn Model,
    traj: &Trajectory,
    policy: TriagePolicy,
    oracle: Option<&dyn Fn(&Trajectory) -> bool>,
) -> Result<Triage, TriageError> {
    let outcome = triage(critic, traj, policy).map_err(|source| TriageError { trajectory_id: traj.id.clone(), source })?;
    Ok(Triage { outcome, oracle_success: oracle.map(|f| f(traj)) })
}

fn triage(critic: &dyn Model, traj: &Trajectory, policy: TriagePolicy) -> Result<EvaluationOutcome, BackendError> {
    let frame = &traj.final_frame;
    let mut out = EvaluationOutcome {
        trajectory_id: traj.id.clone(),
        instruction: traj.instruction.clone(),
        result: TriageResult::Discarded { reason: String::new() },
        detection: DetectionResult::new(Label::No, "", Provenance::Direct),
        relabel: None,
        frame: frame.clone(),
    };
    if let Some(reason) = &traj.aborted {
        out.result = TriageResult::Discarded { reason: format!("aborted: {reason}") };
        out.detection.reasoning = "trajectory aborted before completion".into();
        tracing::info!(trajectory = %traj.id, %reason, "discarded aborted trajectory");
        return Ok(out);
    }
    let q = CriticQuery {
        instruction: &traj.instruction,
        frame,
        environment: traj.environment,
        seed: critic_seed(traj),
        variant: 0,
    };

    let direct = critic.critic_detect(&q)?;
    if direct.label.is_yes() {
        out.result = TriageResult::SuccessDirect;
        out.detection = direct;
        return Ok(out);
    }
    out.detection = direct;

    if policy.self_ask {
        let analysis: StateAnalysis = critic.critic_state_analysis(traj.instruction.object(), &q)?;
        let second = critic.critic_rejudge(&analysis, &q)?;
        let yes = second.label.is_yes();
        out.detection = second;
        if yes {
            out.result = TriageResult::SuccessSelfAsked;
            return Ok(out);
        }
    }

    if policy.relabel {
        let verb = traj.instruction.verb();
        let found = critic.critic_scan_other_objects(verb, traj.instruction.object(), Some(&traj.baseline_frame), &q)?;
        if let Some(object) = found {
            let new_instruction = critic.critic_relabel(Some(&object), verb, &q)?;
            out.detection = DetectionResult::relabeled(format!("the {object} is {}", verb.adjective()));
            out.relabel = Some(object);
            out.result = TriageResult::SuccessRelabeled { new_instruction };
            return Ok(out);
        }
    }

    let reason = "critic judged the task incomplete and no relabel applies".to_string();
    tracing::info!(trajectory = %traj.id, %reason, "discarded trajectory");
    out.result = TriageResult::Discarded { reason };
    Ok(out)
}

/// One `(instruction, success_detection prompt, final frame, "yes")` tuple.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CriticSample {
    pub instruction: Instruction,
    pub prompt_id: PromptId,
    pub frame: Observation,
    pub label: Label,
}

pub fn frame_hash(frame: &Observation) -> String {
    let json = serde_json::to_string(frame).expect("frame serialises");
    hex::encode(Sha256::digest(json.as_bytes()))
}

/// One sample per non-discarded outcome, deduplicated on (instruction, frame).
pub fn build_critic_dataset(outcomes: &[EvaluationOutcome]) -> Vec<CriticSample> {
    let mut seen = HashSet::new();
    outcomes
        .iter()
        .filter_map(|o| o.credited_instruction().map(|i| (o, i)))
        .filter(|(o, i)| seen.insert((i.raw().to_string(), frame_hash(&o.frame))))
        .map(|(o, i)| CriticSample {
            instruction: i.clone(),
            prompt_id: PromptId::SuccessDetection,
            frame: o.frame.clone(),
            label: Label::Yes,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::backends::{ErrorModel, ScriptedModel, VerbErrors};
    use crate::worldsim::fixtures::tiny;
    use crate::worldsim::{observe, View, WorldState};

    /// A trajectory whose only content is its start and end state.
    fn traj(id: &str, task: &str, end: impl FnOnce(&mut WorldState)) -> Trajectory {
        let start = tiny();
        let mut w = start.clone();
        end(&mut w);
        Trajectory {
            id: id.into(),
            instruction: Instruction::parse(task).unwrap(),
            environment: w.environment,
            seed: seed::text(id),
            scene_seed: 0,
            steps: Vec::new(),
            baseline_frame: observe(&start, View::ThirdPerson),
            final_frame: observe(&w, View::ThirdPerson),
            final_state: w,
            aborted: None,
        }
    }

    fn open(id: &'static str) -> impl FnOnce(&mut WorldState) {
        move |w| w.objects.get_mut(id).unwrap().state.opened = true
    }

    /// Open-verb detections always miss; analysis is exact.
    fn blind_to_open() -> ScriptedModel {
        let mut verbs = BTreeMap::new();
        verbs.insert(Verb::Open, VerbErrors { false_negative_rate: 1.0, ..Default::default() });
        ScriptedModel::new(0, ErrorModel { verbs, self_ask_scale: 0.0, ..ErrorModel::default() })
    }

    fn kind(critic: &dyn Model, t: &Trajectory, policy: TriagePolicy) -> TriageResult {
        evaluate_trajectory(critic, t, policy, None).unwrap().outcome.result
    }

    #[test]
    fn misjudged_success_is_corrected_by_self_asking() {
        let t = traj("a", "open the cabinet", open("cabinet"));
        let critic = blind_to_open();
        assert_eq!(kind(&critic, &t, TriagePolicy::FULL), TriageResult::SuccessSelfAsked);
        assert!(matches!(kind(&critic, &t, TriagePolicy::DIRECT_ONLY), TriageResult::Discarded { .. }));
        let out = evaluate_trajectory(&critic, &t, TriagePolicy::FULL, None).unwrap().outcome;
        assert_eq!(out.detection.provenance, Provenance::SelfAsked);
    }

    #[test]
    fn failure_on_target_is_relabeled_to_the_achieved_object() {
        let t = traj("b", "open the cabinet", open("drawer"));
        let critic = ScriptedModel::new(0, ErrorModel::default());
        let out = evaluate_trajectory(&critic, &t, TriagePolicy::FULL, None).unwrap().outcome;
        assert_eq!(
            out.result,
            TriageResult::SuccessRelabeled { new_instruction: Instruction::parse("open the drawer").unwrap() }
        );
        assert_eq!(out.detection.provenance, Provenance::Relabeled);
        assert!(out.detection.label.is_yes());
        assert_eq!(out.credited_instruction().unwrap().raw(), "open the drawer");
        assert!(matches!(kind(&critic, &t, TriagePolicy::WITHOUT_RELABEL), TriageResult::Discarded { .. }));
    }

    #[test]
    fn direct_success_and_plain_discard() {
        let critic = ScriptedModel::new(0, ErrorModel::default());
        let ok = traj("c", "open the drawer", open("drawer"));
        assert_eq!(kind(&critic, &ok, TriagePolicy::FULL), TriageResult::SuccessDirect);
        let nothing = traj("d", "open the drawer", |_| {});
        assert!(matches!(kind(&critic, &nothing, TriagePolicy::FULL), TriageResult::Discarded { .. }));
    }

    #[test]
    fn oracle_is_reported_but_never_consulted() {
        let critic = ScriptedModel::new(0, ErrorModel::uniform(VerbErrors { false_positive_rate: 1.0, ..Default::default() }));
        let t = traj("e", "open the drawer", |_| {});
        let lie = |_: &Trajectory| true;
        let with = evaluate_trajectory(&critic, &t, TriagePolicy::FULL, Some(&lie)).unwrap();
        let without = evaluate_trajectory(&critic, &t, TriagePolicy::FULL, None).unwrap();
        assert_eq!(with.outcome, without.outcome);
        assert_eq!((with.oracle_success, without.oracle_success), (Some(true), None));
    }

    #[test]
    fn critic_dataset_is_deduplicated_and_labelled_yes() {
        let critic = ScriptedModel::new(0, ErrorModel::default());
        let batch = [
            traj("f", "open the drawer", open("drawer")),
            traj("g", "open the drawer", open("drawer")),
            traj("h", "open the cabinet", open("drawer")),
            traj("i", "open the cabinet", |_| {}),
        ];
        let outcomes: Vec<_> = batch
            .iter()
            .map(|t| evaluate_trajectory(&critic, t, TriagePolicy::FULL, None).unwrap().outcome)
            .collect();
        let d = build_critic_dataset(&outcomes);
        // f and g share instruction and frame; h relabels onto the same pair.
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].label, Label::Yes);
        assert_eq!(d[0].prompt_id, PromptId::SuccessDetection);
    }

    #[test]
    fn text_extraction() {
        assert_eq!(extract_object("pick up the lettuce").unwrap(), "lettuce");
        assert_eq!(extract_verb("pick up the lettuce").unwrap(), Verb::PickUp);
        assert_eq!(extract_verb("sit on the sofa").unwrap(), Verb::Sit);
        assert!(extract_object("dance with the mop").is_err());
    }
}
