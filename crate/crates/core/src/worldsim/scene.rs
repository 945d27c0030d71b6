use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::action::Environment;
use super::state::{Affordance, AgentPose, Cell, Facing, ObjectState, WorldObject, WorldState};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SceneError {
    #[error("cannot read scene `{path}`: {message}")]
    Io { path: String, message: String },
    #[error("cannot parse scene: {0}")]
    Parse(String),
    #[error("invalid scene: {}", .0.iter().map(|(o, r)| format!("{o}: {r}")).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<(String, String)>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSpec {
    #[serde(default)]
    pub id: Option<String>,
    pub cell: [i32; 2],
    #[serde(default = "default_facing")]
    pub facing: Facing,
    /// Alternative start cells drawn from by the placement seed.
    #[serde(default)]
    pub candidates: Vec<[i32; 2]>,
    #[serde(default)]
    pub facings: Vec<Facing>,
}

fn default_facing() -> Facing {
    Facing::North
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectSpec {
    pub id: String,
    pub kind: String,
    #[serde(default)]
    pub cell: Option<[i32; 2]>,
    /// Alternative cells drawn from by the placement seed.
    #[serde(default)]
    pub candidates: Vec<[i32; 2]>,
    #[serde(default)]
    pub affordances: BTreeSet<Affordance>,
    #[serde(default)]
    pub opened: bool,
    #[serde(default)]
    pub broken: bool,
    #[serde(default)]
    pub held: bool,
}

/// Declarative scene description, stored as TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub name: String,
    pub environment: Environment,
    pub width: i32,
    pub height: i32,
    #[serde(default = "default_horizon")]
    pub horizon: u32,
    pub agent: AgentSpec,
    #[serde(default)]
    pub objects: Vec<ObjectSpec>,
}

fn default_horizon() -> u32 {
    10
}

fn cell(c: [i32; 2]) -> Cell {
    Cell::new(c[0], c[1])
}

impl SceneSpec {
    pub fn from_toml(text: &str) -> Result<Self, SceneError> {
        let spec: SceneSpec = toml::from_str(text).map_err(|e| SceneError::Parse(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self, SceneError> {
        let text = std::fs::read_to_string(path).map_err(|e| SceneError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scene serialises")
    }

    pub fn agent_id(&self) -> String {
        self.agent.id.clone().unwrap_or_else(|| self.environment.default_agent().to_string())
    }

    /// Collects every structural problem, keyed by the offending object.
    pub fn validate(&self) -> Result<(), SceneError> {
        let mut issues = Vec::new();
        let in_bounds = |c: [i32; 2]| c[0] >= 0 && c[1] >= 0 && c[0] < self.width && c[1] < self.height;
        if self.width < 1 || self.height < 1 {
            issues.push(("scene".to_string(), "grid must be at least 1x1".to_string()));
        }
        if self.horizon == 0 {
            issues.push(("scene".to_string(), "horizon must be at least 1".to_string()));
        }
        let mut seen = BTreeSet::new();
        let mut held = 0;
        for o in &self.objects {
            let mut bad = |r: &str| issues.push((o.id.clone(), r.to_string()));
            if o.id.trim().is_empty() {
                bad("empty id");
            }
            if !seen.insert(o.id.as_str()) {
                bad("duplicate id");
            }
            if o.opened && !o.affordances.contains(&Affordance::Openable) {
                bad("opened=true but not openable");
            }
            if o.broken && !o.affordances.contains(&Affordance::Breakable) {
                bad("broken=true but not breakable");
            }
            if o.held {
                held += 1;
                if !o.affordances.contains(&Affordance::Pickupable) {
                    bad("held=true but not pickupable");
                }
                if o.cell.is_some() || !o.candidates.is_empty() {
                    bad("held objects cannot have a cell");
                }
            } else if o.cell.is_none() && o.candidates.is_empty() {
                bad("needs a cell or candidates");
            }
            for c in o.cell.iter().chain(o.candidates.iter()) {
                if !in_bounds(*c) {
                    bad(&format!("cell {c:?} out of bounds"));
                }
            }
        }
        if held > 1 {
            issues.push(("agent".to_string(), "agent can hold at most one object".to_string()));
        }
        for c in std::iter::once(&self.agent.cell).chain(self.agent.candidates.iter()) {
            if !in_bounds(*c) {
                issues.push(("agent".to_string(), format!("cell {c:?} out of bounds")));
            }
        }
        if issues.is_empty() {
            Ok(())
        } else {
            Err(SceneError::Invalid(issues))
        }
    }

    /// Builds the initial world. A pure function of `(self, seed)`: fixed
    /// objects go down first, then randomised ones in id order, then the agent.
    pub fn reset(&self, seed: u64) -> Result<WorldState, SceneError> {
        self.validate()?;
        let mut rng = seed::rng(seed, &[seed::domain::PLACEMENT, seed::text(&self.name)]);
        let agent_id = self.agent_id();
        let mut taken: BTreeSet<Cell> = BTreeSet::new();
        let mut placed: BTreeMap<&str, Option<Cell>> = BTreeMap::new();
        let mut issues = Vec::new();

        for o in self.objects.iter().filter(|o| o.candidates.is_empty()) {
            let c = o.cell.map(cell);
            if let Some(c) = c {
                if !taken.insert(c) {
                    issues.push((o.id.clone(), format!("cell {c} already occupied")));
                }
            }
            placed.insert(&o.id, c);
        }
        let mut random: Vec<&ObjectSpec> = self.objects.iter().filter(|o| !o.candidates.is_empty()).collect();
        random.sort_by(|a, b| a.id.cmp(&b.id));
        for o in random {
            let mut options: Vec<Cell> = o.candidates.iter().copied().map(cell).collect();
            options.shuffle(&mut rng);
            match options.into_iter().find(|c| !taken.contains(c)) {
                Some(c) => {
                    taken.insert(c);
                    placed.insert(&o.id, Some(c));
                }
                None => issues.push((o.id.clone(), "no free candidate cell".to_string())),
            }
        }

        let mut starts: Vec<Cell> = if self.agent.candidates.is_empty() {
            vec![cell(self.agent.cell)]
        } else {
            self.agent.candidates.iter().copied().map(cell).collect()
        };
        starts.shuffle(&mut rng);
        let start = starts.into_iter().find(|c| !taken.contains(c));
        let facing = if self.agent.facings.is_empty() {
            self.agent.facing
        } else {
            *self.agent.facings.choose(&mut rng).expect("non-empty")
        };
        let Some(start) = start else {
            issues.push(("agent".to_string(), "no free start cell".to_string()));
            return Err(SceneError::Invalid(issues));
        };
        if !issues.is_empty() {
            return Err(SceneError::Invalid(issues));
        }

        let mut holding = None;
        let objects = self
            .objects
            .iter()
            .map(|o| {
                if o.held {
                    holding = Some(o.id.clone());
                }
                let obj = WorldObject {
                    id: o.id.clone(),
                    kind: o.kind.clone(),
                    position: placed.get(o.id.as_str()).copied().flatten(),
                    affordances: o.affordances.clone(),
                    state: ObjectState {
                        opened: o.opened,
                        broken: o.broken,
                        held_by: o.held.then(|| agent_id.clone()),
                        occupied_by: None,
                    },
                };
                (o.id.clone(), obj)
            })
            .collect();

        Ok(WorldState {
            scene: self.name.clone(),
            environment: self.environment,
            width: self.width,
            height: self.height,
            horizon: self.horizon,
            step_count: 0,
            rng_seed: seed,
            agent: AgentPose { id: agent_id, position: start, facing, sitting_on: None, holding },
            objects,
        })
    }
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use super::*;
    use crate::worldsim::fixtures::{kitchen, KITCHEN};

    #[test]
    fn reset_is_deterministic() {
        let s = kitchen();
        assert_eq!(s.reset(7).unwrap().canonical_json(), s.reset(7).unwrap().canonical_json());
        assert_eq!(s.reset(7).unwrap().step_count, 0);
    }

    /// Enumerates every placement draw: fixed objects never move, random
    /// ones stay within their candidates, every combination shows up, and
    /// two seeds differ only in placements.
    #[test]
    fn placements_enumerate_candidates() {
        let s = kitchen();
        let mut layouts = BTreeSet::new();
        for seed in 0..400 {
            let w = s.reset(seed).unwrap();
            for spec in &s.objects {
                let pos = w.object(&spec.id).unwrap().position.unwrap();
                match spec.cell {
                    Some(c) if spec.candidates.is_empty() => assert_eq!(pos, cell(c)),
                    _ => assert!(spec.candidates.iter().any(|&c| cell(c) == pos), "{} at {pos}", spec.id),
                }
            }
            let agent_ok = s.agent.candidates.iter().any(|&c| cell(c) == w.agent.position);
            assert!(agent_ok && s.agent.facings.contains(&w.agent.facing));
            let key: Vec<_> = w.objects.values().map(|o| o.position).collect();
            layouts.insert((key, w.agent.position, w.agent.facing));
        }
        let object_combos: usize = s.objects.iter().map(|o| o.candidates.len().max(1)).product();
        let agent_combos = s.agent.candidates.len() * s.agent.facings.len();
        assert_eq!(layouts.len(), object_combos * agent_combos);

        let (a, b) = (s.reset(7).unwrap(), s.reset(8).unwrap());
        for (id, oa) in &a.objects {
            let ob = b.object(id).unwrap();
            assert_eq!((&oa.kind, &oa.affordances, &oa.state), (&ob.kind, &ob.affordances, &ob.state));
        }
    }

    #[test]
    fn opened_without_openable_names_the_object() {
        let text = KITCHEN.replacen(
            "id = \"apple\"\nkind = \"Apple\"",
            "id = \"apple\"\nkind = \"Apple\"\nopened = true",
            1,
        );
        match SceneSpec::from_toml(&text) {
            Err(SceneError::Invalid(issues)) => {
                assert_eq!(issues, vec![("apple".to_string(), "opened=true but not openable".to_string())])
            }
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn validation_collects_every_issue() {
        let mut s = kitchen();
        s.objects[0].cell = Some([9, 9]);
        s.objects[1].id = s.objects[2].id.clone();
        let Err(SceneError::Invalid(issues)) = s.validate() else { panic!() };
        assert_eq!(issues.len(), 2, "{issues:?}");
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let text = format!("{KITCHEN}\ncolour = \"blue\"\n");
        assert!(matches!(SceneSpec::from_toml(&text), Err(SceneError::Parse(_))));
    }

    #[test]
    fn toml_round_trip() {
        let s = kitchen();
        assert_eq!(SceneSpec::from_toml(&s.to_toml()).unwrap(), s);
    }
}
