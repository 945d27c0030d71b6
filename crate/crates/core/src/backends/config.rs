use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::instruction::Verb;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Scripted,
    Tabular,
    Remote,
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BackendKind::Scripted => "scripted",
            BackendKind::Tabular => "tabular",
            BackendKind::Remote => "remote",
        })
    }
}

/// Error probabilities for one verb.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerbErrors {
    /// Critic answers "no" on a completed task.
    pub false_negative_rate: f64,
    /// Critic answers "yes" on an uncompleted task.
    pub false_positive_rate: f64,
    /// Actor emits a uniformly random legal action instead of the oracle one.
    pub misact_rate: f64,
}

/// Per-verb error model of the scripted backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ErrorModel {
    pub default: VerbErrors,
    pub verbs: BTreeMap<Verb, VerbErrors>,
    /// State-analysis error rate as a fraction of the detection error rate.
    pub self_ask_scale: f64,
}

impl Default for ErrorModel {
    fn default() -> Self {
        Self { default: VerbErrors::default(), verbs: BTreeMap::new(), self_ask_scale: 0.25 }
    }
}

impl ErrorModel {
    pub fn for_verb(&self, verb: Verb) -> VerbErrors {
        self.verbs.get(&verb).copied().unwrap_or(self.default)
    }

    /// The shipped default: a critic that misses 40% of successes and accepts
    /// 10% of failures, and an actor that acts at random 70% of the time
    /// (about 40% task success on the bundled scenes).
    pub fn standard() -> Self {
        Self::uniform(VerbErrors { false_negative_rate: 0.4, false_positive_rate: 0.1, misact_rate: 0.7 })
    }

    /// Same rates for every verb.
    pub fn uniform(errors: VerbErrors) -> Self {
        Self { default: errors, ..Self::default() }
    }

    fn issues(&self, prefix: &str) -> Vec<(String, String)> {
        let mut out = Vec::new();
        let mut check = |path: String, v: f64| {
            if !(0.0..=1.0).contains(&v) || v.is_nan() {
                out.push((path, format!("probability {v} outside [0, 1]")));
            }
        };
        let entries = std::iter::once(("default".to_string(), self.default))
            .chain(self.verbs.iter().map(|(v, e)| (format!("verbs.{}", v.as_str().replace(' ', "_")), *e)));
        for (name, e) in entries {
            check(format!("{prefix}.{name}.false_negative_rate"), e.false_negative_rate);
            check(format!("{prefix}.{name}.false_positive_rate"), e.false_positive_rate);
            check(format!("{prefix}.{name}.misact_rate"), e.misact_rate);
        }
        check(format!("{prefix}.self_ask_scale"), self.self_ask_scale);
        out
    }
}

/// Declarative backend description, one per model slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    #[serde(default)]
    pub seed: u64,
    /// scripted / tabular only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_model: Option<ErrorModel>,
    /// tabular only: a memory file to preload.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub memory: Option<PathBuf>,
    /// remote only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint_url: Option<String>,
    /// remote only: name of the environment variable holding the bearer token.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_env: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_in_flight: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timeout_secs: Option<u64>,
    /// remote only: where fine-tuning datasets are exported.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub export_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_dir: Option<PathBuf>,
}

impl BackendConfig {
    pub fn scripted(seed: u64, error_model: ErrorModel) -> Self {
        Self { kind: BackendKind::Scripted, seed, error_model: Some(error_model), ..Self::empty(BackendKind::Scripted) }
    }

    pub fn tabular(seed: u64, error_model: ErrorModel) -> Self {
        Self { kind: BackendKind::Tabular, seed, error_model: Some(error_model), ..Self::empty(BackendKind::Tabular) }
    }

    pub fn remote(endpoint_url: impl Into<String>) -> Self {
        Self { endpoint_url: Some(endpoint_url.into()), ..Self::empty(BackendKind::Remote) }
    }

    fn empty(kind: BackendKind) -> Self {
        Self {
            kind,
            seed: 0,
            error_model: None,
            memory: None,
            endpoint_url: None,
            token_env: None,
            model: None,
            max_in_flight: None,
            timeout_secs: None,
            export_dir: None,
            prompt_dir: None,
        }
    }

    /// Field-level problems: probabilities in range and exactly the fields of
    /// the configured kind populated.
    pub fn validate(&self) -> Result<(), Vec<(String, String)>> {
        let mut issues = Vec::new();
        let not_for = |field: &str, present: bool, issues: &mut Vec<(String, String)>| {
            if present {
                issues.push((field.to_string(), format!("not allowed for kind `{}`", self.kind)));
            }
        };
        match self.kind {
            BackendKind::Scripted | BackendKind::Tabular => {
                if let Some(em) = &self.error_model {
                    issues.extend(em.issues("error_model"));
                }
                not_for("endpoint_url", self.endpoint_url.is_some(), &mut issues);
                not_for("token_env", self.token_env.is_some(), &mut issues);
                not_for("model", self.model.is_some(), &mut issues);
                not_for("max_in_flight", self.max_in_flight.is_some(), &mut issues);
                not_for("timeout_secs", self.timeout_secs.is_some(), &mut issues);
                not_for("export_dir", self.export_dir.is_some(), &mut issues);
                if self.kind == BackendKind::Scripted {
                    not_for("memory", self.memory.is_some(), &mut issues);
                }
            }
            BackendKind::Remote => {
                match &self.endpoint_url {
                    None => issues.push(("endpoint_url".into(), "required for kind `remote`".into())),
                    Some(u) if !(u.starts_with("http://") || u.starts_with("https://")) => {
                        issues.push(("endpoint_url".into(), format!("`{u}` is not an http(s) URL")))
                    }
                    _ => {}
                }
                if self.max_in_flight == Some(0) {
                    issues.push(("max_in_flight".into(), "must be at least 1".into()));
                }
                not_for("error_model", self.error_model.is_some(), &mut issues);
                not_for("memory", self.memory.is_some(), &mut issues);
            }
        }
        if issues.is_empty() {
            Ok(())
        } else {
            Err(issues)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn probabilities_out_of_range_are_reported_by_path() {
        let mut em = ErrorModel::default();
        em.verbs.insert(Verb::Open, VerbErrors { false_negative_rate: 1.5, ..Default::default() });
        let issues = BackendConfig::scripted(0, em).validate().unwrap_err();
        assert_eq!(issues[0].0, "error_model.verbs.open.false_negative_rate");
    }

    #[test]
    fn kind_specific_fields() {
        let mut c = BackendConfig::scripted(0, ErrorModel::default());
        c.endpoint_url = Some("http://x".into());
        assert_eq!(c.validate().unwrap_err()[0].0, "endpoint_url");
        let r = BackendConfig::remote("ftp://nope");
        assert_eq!(r.validate().unwrap_err()[0].0, "endpoint_url");
        assert!(BackendConfig::remote("http://127.0.0.1:9/chat").validate().is_ok());
    }

    #[test]
    fn toml_shape() {
        let text = r#"
kind = "tabular"
seed = 3
[error_model]
self_ask_scale = 0.25
[error_model.default]
false_negative_rate = 0.3
[error_model.verbs.open]
false_negative_rate = 0.5
"#;
        let c: BackendConfig = toml::from_str(text).unwrap();
        let em = c.error_model.unwrap();
        assert_eq!(em.for_verb(Verb::Open).false_negative_rate, 0.5);
        assert_eq!(em.for_verb(Verb::Break).false_negative_rate, 0.3);
    }
}
