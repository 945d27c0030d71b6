use serde::{Deserialize, Serialize};

use crate::critic::{EvaluationOutcome, TriageResult};
use crate::instruction::Instruction;

use super::config::Variant;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskMetrics {
    pub task: Instruction,
    pub episodes: u32,
    /// Fraction of evaluation frames where the critic agrees with the oracle.
    pub detection_accuracy: f64,
    /// Fraction of evaluation episodes ending with the task completed.
    pub task_success_rate: f64,
}

/// Branch counts of one triage pass.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TriageCounts {
    pub total: u64,
    pub direct: u64,
    pub self_asked: u64,
    pub relabeled: u64,
    pub discarded: u64,
    /// Subset of `discarded` cut short by backend failures.
    pub aborted: u64,
}

impl TriageCounts {
    pub fn tally(outcomes: &[EvaluationOutcome]) -> Self {
        let mut c = TriageCounts { total: outcomes.len() as u64, ..Default::default() };
        for o in outcomes {
            match &o.result {
                TriageResult::SuccessDirect => c.direct += 1,
                TriageResult::SuccessSelfAsked => c.self_asked += 1,
                TriageResult::SuccessRelabeled { .. } => c.relabeled += 1,
                TriageResult::Discarded { reason } => {
                    c.discarded += 1;
                    if reason.starts_with("aborted") {
                        c.aborted += 1;
                    }
                }
            }
        }
        c
    }

    pub fn reconciles(&self) -> bool {
        self.direct + self.self_asked + self.relabeled + self.discarded == self.total && self.aborted <= self.discarded
    }
}

/// Metrics after one iteration (iteration 0 = the untrained backends).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IterationMetrics {
    pub schema_version: u32,
    pub variant: Variant,
    pub iteration: u32,
    pub tasks: Vec<TaskMetrics>,
    pub avg_detection_accuracy: f64,
    pub avg_task_success_rate: f64,
    pub triage: TriageCounts,
    pub d_actor_trajectories: u64,
    pub d_actor_samples: u64,
    pub d_actor_augmented: u64,
    pub d_critic_samples: u64,
    pub fine_tune_calls: u32,
}

impl IterationMetrics {
    pub fn new(variant: Variant, iteration: u32, tasks: Vec<TaskMetrics>) -> Self {
        let n = tasks.len().max(1) as f64;
        Self {
            schema_version: crate::schema::SCHEMA_VERSION,
            variant,
            iteration,
            avg_detection_accuracy: tasks.iter().map(|t| t.detection_accuracy).sum::<f64>() / n,
            avg_task_success_rate: tasks.iter().map(|t| t.task_success_rate).sum::<f64>() / n,
            tasks,
            triage: TriageCounts::default(),
            d_actor_trajectories: 0,
            d_actor_samples: 0,
            d_actor_augmented: 0,
            d_critic_samples: 0,
            fine_tune_calls: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub variant: Variant,
    pub series: Vec<IterationMetrics>,
}

impl MetricsReport {
    pub fn initial(&self) -> &IterationMetrics {
        &self.series[0]
    }

    pub fn last(&self) -> &IterationMetrics {
        self.series.last().expect("series has the pre-training entry")
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for m in &self.series {
            out.push_str(&serde_json::to_string(m).expect("metrics serialise"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, String> {
        let series: Vec<IterationMetrics> = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .enumerate()
            .map(|(i, l)| serde_json::from_str(l).map_err(|e| format!("line {}: {e}", i + 1)))
            .collect::<Result<_, _>>()?;
        let variant = series.first().map(|m| m.variant).ok_or("no metrics")?;
        Ok(Self { variant, series })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::{DetectionResult, Label, Provenance};
    use crate::worldsim::{fixtures::tiny, observe, View};

    fn outcome(result: TriageResult) -> EvaluationOutcome {
        EvaluationOutcome {
            trajectory_id: "x".into(),
            instruction: "open the drawer".parse().unwrap(),
            result,
            detection: DetectionResult::new(Label::No, "", Provenance::Direct),
            relabel: None,
            frame: observe(&tiny(), View::ThirdPerson),
        }
    }

    #[test]
    fn tally_reconciles() {
        let relabeled = TriageResult::SuccessRelabeled { new_instruction: "open the cabinet".parse().unwrap() };
        let outcomes = vec![
            outcome(TriageResult::SuccessDirect),
            outcome(TriageResult::SuccessSelfAsked),
            outcome(relabeled),
            outcome(TriageResult::Discarded { reason: "no".into() }),
            outcome(TriageResult::Discarded { reason: "aborted: parse".into() }),
        ];
        let c = TriageCounts::tally(&outcomes);
        assert_eq!(c, TriageCounts { total: 5, direct: 1, self_asked: 1, relabeled: 1, discarded: 2, aborted: 1 });
        assert!(c.reconciles());
        assert!(!TriageCounts { total: 6, ..c }.reconciles());
        assert!(!TriageCounts { aborted: 3, ..c }.reconciles());
    }

    #[test]
    fn averages_and_jsonl_round_trip() {
        let t = |s: &str, a, r| TaskMetrics { task: s.parse().unwrap(), episodes: 4, detection_accuracy: a, task_success_rate: r };
        let m = IterationMetrics::new(Variant::Dg, 0, vec![t("open the drawer", 0.5, 0.25), t("break the mug", 1.0, 0.75)]);
        assert_eq!((m.avg_detection_accuracy, m.avg_task_success_rate), (0.75, 0.5));
        let report = MetricsReport { variant: Variant::Dg, series: vec![m.clone(), IterationMetrics { iteration: 1, ..m }] };
        assert_eq!(MetricsReport::from_jsonl(&report.to_jsonl()).unwrap(), report);
        assert!(MetricsReport::from_jsonl("\n").is_err());
        assert!(MetricsReport::from_jsonl("{}").unwrap_err().starts_with("line 1"));
    }
}
