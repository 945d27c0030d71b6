//! Human-readable and JSON renderings of a metrics series.
//!
//! Two tables, one row per task plus an `Avg.` row, one column per
//! iteration (`Init` is the untrained pair).

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::runner::{IterationMetrics, MetricsReport, TriageCounts, Variant};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub task: String,
    /// Percentages, one per column.
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub title: String,
    pub columns: Vec<String>,
    pub rows: Vec<Row>,
    pub avg: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationData {
    pub iteration: u32,
    pub triage: TriageCounts,
    pub d_actor_trajectories: u64,
    pub d_actor_samples: u64,
    pub d_actor_augmented: u64,
    pub d_critic_samples: u64,
    pub fine_tune_calls: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDoc {
    pub variant: Variant,
    pub detection_accuracy: Table,
    pub task_success_rate: Table,
    pub iterations: Vec<IterationData>,
}

fn column_name(m: &IterationMetrics) -> String {
    if m.iteration == 0 {
        "Init".into()
    } else {
        format!("Iter {}", m.iteration)
    }
}

fn pct(x: f64) -> f64 {
    (x * 1000.0).round() / 10.0
}

fn table(report: &MetricsReport, title: &str, task_value: impl Fn(&crate::runner::TaskMetrics) -> f64, avg: impl Fn(&IterationMetrics) -> f64) -> Table {
    let first = report.initial();
    let rows = first
        .tasks
        .iter()
        .enumerate()
        .map(|(i, t)| Row {
            task: t.task.raw().to_string(),
            values: report.series.iter().map(|m| m.tasks.get(i).map_or(f64::NAN, |t| pct(task_value(t)))).collect(),
        })
        .collect();
    Table {
        title: title.into(),
        columns: report.series.iter().map(column_name).collect(),
        rows,
        avg: report.series.iter().map(|m| pct(avg(m))).collect(),
    }
}

pub fn document(report: &MetricsReport) -> ReportDoc {
    ReportDoc {
        variant: report.variant,
        detection_accuracy: table(
            report,
            "Accuracy of task success detection (%)",
            |t| t.detection_accuracy,
            |m| m.avg_detection_accuracy,
        ),
        task_success_rate: table(report, "Task success rate (%)", |t| t.task_success_rate, |m| m.avg_task_success_rate),
        iterations: report
            .series
            .iter()
            .filter(|m| m.iteration > 0)
            .map(|m| IterationData {
                iteration: m.iteration,
                triage: m.triage,
                d_actor_trajectories: m.d_actor_trajectories,
                d_actor_samples: m.d_actor_samples,
                d_actor_augmented: m.d_actor_augmented,
                d_critic_samples: m.d_critic_samples,
                fine_tune_calls: m.fine_tune_calls,
            })
            .collect(),
    }
}

fn write_table(out: &mut String, t: &Table) {
    let width = t.rows.iter().map(|r| r.task.len()).chain([5]).max().unwrap_or(5);
    let _ = writeln!(out, "{}", t.title);
    let _ = write!(out, "{:<width$}", "Task");
    for c in &t.columns {
        let _ = write!(out, "  {c:>7}");
    }
    out.push('\n');
    let mut line = |name: &str, values: &[f64]| {
        let _ = write!(out, "{name:<width$}");
        for v in values {
            let _ = write!(out, "  {v:>7.1}");
        }
        out.push('\n');
    };
    for r in &t.rows {
        line(&r.task, &r.values);
    }
    line("Avg.", &t.avg);
}

pub fn render_table(report: &MetricsReport) -> String {
    let doc = document(report);
    let mut out = String::new();
    let _ = writeln!(out, "Variant: {}\n", doc.variant);
    write_table(&mut out, &doc.detection_accuracy);
    out.push('\n');
    write_table(&mut out, &doc.task_success_rate);
    if !doc.iterations.is_empty() {
        out.push_str("\nTriage and datasets\n");
        let _ = writeln!(
            out,
            "{:>4}  {:>6}  {:>6}  {:>10}  {:>9}  {:>9}  {:>7}  {:>11}  {:>9}  {:>9}  {:>8}  {:>10}",
            "Iter", "Total", "Direct", "Self-asked", "Relabeled", "Discarded", "Aborted", "D_actor trj",
            "D_actor", "Augmented", "D_critic", "Fine-tunes"
        );
        for d in &doc.iterations {
            let c = d.triage;
            let _ = writeln!(
                out,
                "{:>4}  {:>6}  {:>6}  {:>10}  {:>9}  {:>9}  {:>7}  {:>11}  {:>9}  {:>9}  {:>8}  {:>10}",
                d.iteration,
                c.total,
                c.direct,
                c.self_asked,
                c.relabeled,
                c.discarded,
                c.aborted,
                d.d_actor_trajectories,
                d.d_actor_samples,
                d.d_actor_augmented,
                d.d_critic_samples,
                d.fine_tune_calls
            );
        }
    }
    out
}

pub fn render_json(report: &MetricsReport) -> String {
    let mut s = serde_json::to_string_pretty(&document(report)).expect("report serialises");
    s.push('\n');
    s
}
