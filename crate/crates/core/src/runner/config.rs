use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::backends::{BackendConfig, BackendKind};
use crate::instruction::Instruction;
use crate::worldsim::SceneSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Selu,
    SeluOne,
    WoHr,
    WoCritic,
    Dg,
    Sc,
    SelfRefine,
    Lmsi,
}

impl Variant {
    pub const ALL: [Variant; 8] = [
        Variant::Selu,
        Variant::SeluOne,
        Variant::WoHr,
        Variant::WoCritic,
        Variant::Dg,
        Variant::Sc,
        Variant::SelfRefine,
        Variant::Lmsi,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Selu => "selu",
            Variant::SeluOne => "selu_one",
            Variant::WoHr => "wo_hr",
            Variant::WoCritic => "wo_critic",
            Variant::Dg => "dg",
            Variant::Sc => "sc",
            Variant::SelfRefine => "self_refine",
            Variant::Lmsi => "lmsi",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == norm)
            .ok_or_else(|| format!("unknown variant `{s}`"))
    }
}

/// Fine-tuning hyperparameters, recorded for provenance only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingMeta {
    pub lr_actor: f64,
    pub lr_critic: f64,
}

impl Default for TrainingMeta {
    fn default() -> Self {
        Self { lr_actor: 2e-5, lr_critic: 2e-6 }
    }
}

fn d_horizon() -> u32 {
    10
}
fn d_traj() -> u32 {
    1000
}
fn d_eval() -> u32 {
    500
}
fn d_iter() -> u32 {
    1
}
fn d_aug() -> u32 {
    3
}
fn d_three() -> u32 {
    3
}
fn d_variant() -> Variant {
    Variant::Selu
}

/// Experiment declaration, loaded from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Scene file, relative to the config file.
    pub scene: PathBuf,
    pub tasks: Vec<Instruction>,
    #[serde(default = "d_horizon")]
    pub horizon: u32,
    #[serde(default = "d_traj")]
    pub trajectories_per_task: u32,
    #[serde(default = "d_eval")]
    pub eval_episodes_per_task: u32,
    #[serde(default = "d_iter")]
    pub iterations: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "d_variant")]
    pub variant: Variant,
    /// Action-list permutations per actor sample.
    #[serde(default = "d_aug")]
    pub augmentation: u32,
    /// Prompt variants voted over by SC (and by LMSI's critic).
    #[serde(default = "d_three")]
    pub sc_variants: u32,
    /// Backend calls per decision for Self-Refine.
    #[serde(default = "d_three")]
    pub refine_rounds: u32,
    pub actor_backend: BackendConfig,
    pub critic_backend: BackendConfig,
    #[serde(default)]
    pub recorded_training_meta: TrainingMeta,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config `{path}`: {message}")]
    Io { path: String, message: String },
    #[error("{0}")]
    Parse(String),
    #[error("invalid config: {}", .0.iter().map(|(f, m)| format!("{f}: {m}")).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<(String, String)>),
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io { path: path.display().to_string(), message: e.to_string() })?;
        Self::from_toml(&text)
    }

    /// Field-level checks that do not need the scene.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut issues: Vec<(String, String)> = Vec::new();
        if self.tasks.is_empty() {
            issues.push(("tasks".into(), "at least one task is required".into()));
        }
        if self.horizon == 0 {
            issues.push(("horizon".into(), "must be at least 1".into()));
        }
        if self.trajectories_per_task == 0 {
            issues.push(("trajectories_per_task".into(), "must be at least 1".into()));
        }
        if self.eval_episodes_per_task == 0 {
            issues.push(("eval_episodes_per_task".into(), "must be at least 1".into()));
        }
        if self.augmentation == 0 {
            issues.push(("augmentation".into(), "must be at least 1".into()));
        }
        if self.sc_variants == 0 {
            issues.push(("sc_variants".into(), "must be at least 1".into()));
        }
        for (slot, b) in [("actor_backend", &self.actor_backend), ("critic_backend", &self.critic_backend)] {
            if let Err(errs) = b.validate() {
                issues.extend(errs.into_iter().map(|(f, m)| (format!("{slot}.{f}"), m)));
            }
        }
        if self.variant == Variant::SeluOne && self.actor_backend != self.critic_backend {
            tracing::warn!("selu_one shares the actor backend for both roles; critic_backend is ignored");
        }
        if self.variant == Variant::SeluOne && self.actor_backend.kind == BackendKind::Scripted {
            tracing::warn!("selu_one with a scripted backend cannot learn");
        }
        if issues.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(issues))
        }
    }

    /// Checks that every task names an object of the scene with a verb the
    /// scene's environment offers.
    pub fn validate_against(&self, scene: &SceneSpec) -> Result<(), ConfigError> {
        self.validate()?;
        let mut issues = Vec::new();
        for (i, t) in self.tasks.iter().enumerate() {
            if !scene.objects.iter().any(|o| o.id == t.object()) {
                issues.push((format!("tasks[{i}]"), format!("object `{}` is not in scene `{}`", t.object(), scene.name)));
            }
            if !scene.environment.supports(t.verb()) {
                issues.push((
                    format!("tasks[{i}]"),
                    format!("verb `{}` is not available in {}", t.verb(), scene.environment.display_name()),
                ));
            }
        }
        if issues.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(issues))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::worldsim::fixtures::{kitchen, living_room};

    const MINIMAL: &str = r#"
scene = "kitchen.toml"
tasks = ["pick up the lettuce", "open the cabinet"]

[actor_backend]
kind = "scripted"

[critic_backend]
kind = "tabular"
seed = 4
"#;

    fn fields(e: ConfigError) -> Vec<String> {
        match e {
            ConfigError::Invalid(v) => v.into_iter().map(|(f, _)| f).collect(),
            other => panic!("expected field errors, got {other}"),
        }
    }

    #[test]
    fn defaults_and_round_trip() {
        let c = RunConfig::from_toml(MINIMAL).unwrap();
        assert_eq!((c.horizon, c.trajectories_per_task, c.eval_episodes_per_task), (10, 1000, 500));
        assert_eq!((c.iterations, c.augmentation, c.sc_variants, c.refine_rounds), (1, 3, 3, 3));
        assert_eq!(c.variant, Variant::Selu);
        assert_eq!(c.recorded_training_meta, TrainingMeta::default());
        c.validate_against(&kitchen()).unwrap();
        assert_eq!(RunConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn every_bad_field_is_reported() {
        let mut c = RunConfig::from_toml(MINIMAL).unwrap();
        c.tasks.clear();
        c.horizon = 0;
        c.trajectories_per_task = 0;
        c.eval_episodes_per_task = 0;
        c.augmentation = 0;
        c.sc_variants = 0;
        c.actor_backend.endpoint_url = Some("http://x".into());
        let got = fields(c.validate().unwrap_err());
        assert_eq!(
            got,
            [
                "tasks",
                "horizon",
                "trajectories_per_task",
                "eval_episodes_per_task",
                "augmentation",
                "sc_variants",
                "actor_backend.endpoint_url"
            ]
        );
    }

    #[test]
    fn tasks_must_fit_the_scene() {
        let c = RunConfig::from_toml(MINIMAL).unwrap();
        // No lettuce in the living room, and picking up is spelled "grab" there.
        assert_eq!(fields(c.validate_against(&living_room()).unwrap_err()), ["tasks[0]", "tasks[0]"]);
        let mut c = c;
        c.tasks = vec!["sit on the sofa".parse().unwrap()];
        // Sofa is absent and sitting is not an ai2thor action.
        assert_eq!(fields(c.validate_against(&kitchen()).unwrap_err()), ["tasks[0]", "tasks[0]"]);
    }

    #[test]
    fn unknown_keys_and_variants_are_rejected() {
        assert!(matches!(RunConfig::from_toml(&format!("{MINIMAL}\nhorizn = 3")), Err(ConfigError::Parse(_))));
        let bad = MINIMAL.replace("tasks =", "variant = \"best\"\ntasks =");
        assert!(matches!(RunConfig::from_toml(&bad), Err(ConfigError::Parse(_))));
        assert_eq!("WO-HR".parse::<Variant>().unwrap(), Variant::WoHr);
        for v in Variant::ALL {
            assert_eq!(v.as_str().parse::<Variant>().unwrap(), v);
        }
    }
}
