use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::action::{ActionKind, ActionRecord, Environment};
use super::observe::{locate, REACH};
use super::WorldError;
use crate::instruction::{Instruction, Verb};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Cell {
    pub x: i32,
    pub y: i32,
}

impl Cell {
    pub const fn new(x: i32, y: i32) -> Self {
        Self { x, y }
    }

    pub fn offset(self, dx: i32, dy: i32) -> Self {
        Self::new(self.x + dx, self.y + dy)
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.x, self.y)
    }
}

/// Cardinal facing. `y` grows southwards.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Facing {
    North,
    East,
    South,
    West,
}

impl Facing {
    pub fn delta(self) -> (i32, i32) {
        match self {
            Facing::North => (0, -1),
            Facing::East => (1, 0),
            Facing::South => (0, 1),
            Facing::West => (-1, 0),
        }
    }

    pub fn left(self) -> Facing {
        match self {
            Facing::North => Facing::West,
            Facing::West => Facing::South,
            Facing::South => Facing::East,
            Facing::East => Facing::North,
        }
    }

    pub fn right(self) -> Facing {
        self.left().left().left()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Affordance {
    Openable,
    Breakable,
    Pickupable,
    Sittable,
}

impl Affordance {
    pub fn for_action(kind: ActionKind) -> Option<Affordance> {
        match kind {
            ActionKind::PickupObject | ActionKind::GrabObject => Some(Affordance::Pickupable),
            ActionKind::OpenObject => Some(Affordance::Openable),
            ActionKind::BreakObject => Some(Affordance::Breakable),
            ActionKind::SitObject => Some(Affordance::Sittable),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ObjectState {
    pub opened: bool,
    pub broken: bool,
    pub held_by: Option<String>,
    pub occupied_by: Option<String>,
}

impl ObjectState {
    /// Whether this state counts as `verb` having been carried out on the object.
    pub fn completes(&self, verb: Verb) -> bool {
        match verb {
            Verb::PickUp | Verb::Grab => self.held_by.is_some(),
            Verb::Open => self.opened,
            Verb::Break => self.broken,
            Verb::Sit => self.occupied_by.is_some(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorldObject {
    pub id: String,
    pub kind: String,
    /// `None` while held: the object travels with its holder.
    pub position: Option<Cell>,
    pub affordances: BTreeSet<Affordance>,
    pub state: ObjectState,
}

impl WorldObject {
    pub fn has(&self, a: Affordance) -> bool {
        self.affordances.contains(&a)
    }

    /// Checks the state/affordance pairing rules.
    pub fn check(&self) -> Result<(), String> {
        let s = &self.state;
        if s.opened && !self.has(Affordance::Openable) {
            return Err("opened but not openable".into());
        }
        if s.broken && !self.has(Affordance::Breakable) {
            return Err("broken but not breakable".into());
        }
        if s.held_by.is_some() && !self.has(Affordance::Pickupable) {
            return Err("held but not pickupable".into());
        }
        if s.occupied_by.is_some() && !self.has(Affordance::Sittable) {
            return Err("occupied but not sittable".into());
        }
        if s.held_by.is_some() == self.position.is_some() {
            return Err("held objects have no position and unheld objects need one".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AgentPose {
    pub id: String,
    pub position: Cell,
    pub facing: Facing,
    pub sitting_on: Option<String>,
    pub holding: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorldState {
    pub scene: String,
    pub environment: Environment,
    pub width: i32,
    pub height: i32,
    pub horizon: u32,
    pub step_count: u32,
    pub rng_seed: u64,
    pub agent: AgentPose,
    pub objects: BTreeMap<String, WorldObject>,
}

impl WorldState {
    pub fn object(&self, id: &str) -> Option<&WorldObject> {
        self.objects.get(id)
    }

    pub fn in_bounds(&self, c: Cell) -> bool {
        c.x >= 0 && c.y >= 0 && c.x < self.width && c.y < self.height
    }

    /// Cells blocked by furniture and other unheld objects.
    pub fn is_blocked(&self, c: Cell) -> bool {
        !self.in_bounds(c) || self.objects.values().any(|o| o.position == Some(c))
    }

    /// Byte-stable JSON encoding (objects are kept in id order).
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("world state serialises")
    }

    /// Full invariant check: object pairing rules plus agent cross-references.
    pub fn check_invariants(&self) -> Result<(), String> {
        for (id, o) in &self.objects {
            if id != &o.id {
                return Err(format!("{id}: key does not match object id"));
            }
            o.check().map_err(|e| format!("{id}: {e}"))?;
            if let Some(h) = &o.state.held_by {
                if h != &self.agent.id || self.agent.holding.as_deref() != Some(id) {
                    return Err(format!("{id}: held_by not mirrored by agent"));
                }
            }
            if let Some(h) = &o.state.occupied_by {
                if h != &self.agent.id || self.agent.sitting_on.as_deref() != Some(id) {
                    return Err(format!("{id}: occupied_by not mirrored by agent"));
                }
            }
        }
        if let Some(h) = &self.agent.holding {
            let held = self.objects.get(h).and_then(|o| o.state.held_by.as_ref());
            if held != Some(&self.agent.id) {
                return Err(format!("agent holds {h} but the object disagrees"));
            }
        }
        if let Some(s) = &self.agent.sitting_on {
            let occ = self.objects.get(s).and_then(|o| o.state.occupied_by.as_ref());
            if occ != Some(&self.agent.id) {
                return Err(format!("agent sits on {s} but the object disagrees"));
            }
        }
        if self.is_blocked(self.agent.position) {
            return Err("agent stands on a blocked cell".into());
        }
        if self.step_count > self.horizon {
            return Err("step count beyond horizon".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailReason {
    Blocked,
    NoTarget,
    NoSuchObject,
    NotVisible,
    OutOfReach,
    NotAfforded,
    AlreadyOpen,
    AlreadyBroken,
    AlreadyHeld,
    AlreadySitting,
    HandsFull,
    NotInEnvironment,
}

impl fmt::Display for FailReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FailReason::Blocked => "blocked",
            FailReason::NoTarget => "no target",
            FailReason::NoSuchObject => "no such object",
            FailReason::NotVisible => "not visible",
            FailReason::OutOfReach => "out of reach",
            FailReason::NotAfforded => "not afforded",
            FailReason::AlreadyOpen => "already open",
            FailReason::AlreadyBroken => "already broken",
            FailReason::AlreadyHeld => "already held",
            FailReason::AlreadySitting => "already sitting",
            FailReason::HandsFull => "hands full",
            FailReason::NotInEnvironment => "action not available in this environment",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "status", content = "reason", rename_all = "snake_case")]
pub enum StepOutcome {
    Ok,
    Failed(FailReason),
}

impl StepOutcome {
    pub fn is_ok(&self) -> bool {
        matches!(self, StepOutcome::Ok)
    }
}

/// Advances the world by one action. In-world failures leave everything but
/// `step_count` untouched; unknown action names are protocol errors.
pub fn step(state: &WorldState, action: &ActionRecord) -> Result<(WorldState, StepOutcome), WorldError> {
    if state.step_count >= state.horizon {
        return Err(WorldError::HorizonExceeded { step: state.step_count + 1, horizon: state.horizon });
    }
    let kind = action.kind()?;
    let mut next = state.clone();
    next.step_count += 1;
    let outcome = match apply(&mut next, kind, action.target.as_deref()) {
        Ok(()) => StepOutcome::Ok,
        Err(reason) => {
            let mut unchanged = state.clone();
            unchanged.step_count += 1;
            return Ok((unchanged, StepOutcome::Failed(reason)));
        }
    };
    Ok((next, outcome))
}

fn stand_up(world: &mut WorldState) {
    if let Some(seat) = world.agent.sitting_on.take() {
        if let Some(o) = world.objects.get_mut(&seat) {
            o.state.occupied_by = None;
        }
    }
}

fn apply(world: &mut WorldState, kind: ActionKind, target: Option<&str>) -> Result<(), FailReason> {
    match kind {
        ActionKind::RotateLeft => {
            world.agent.facing = world.agent.facing.left();
            return Ok(());
        }
        ActionKind::RotateRight => {
            world.agent.facing = world.agent.facing.right();
            return Ok(());
        }
        ActionKind::MoveAhead => {
            // A seated agent first stands up in place.
            if world.agent.sitting_on.is_some() {
                stand_up(world);
                return Ok(());
            }
            let (dx, dy) = world.agent.facing.delta();
            let dest = world.agent.position.offset(dx, dy);
            if world.is_blocked(dest) {
                return Err(FailReason::Blocked);
            }
            world.agent.position = dest;
            return Ok(());
        }
        _ => {}
    }

    if !world.environment.action_list().contains(&kind) {
        return Err(FailReason::NotInEnvironment);
    }
    let target = target.ok_or(FailReason::NoTarget)?;
    let obj = world.objects.get(target).ok_or(FailReason::NoSuchObject)?;
    let rel = locate(&world.agent, obj);
    if !rel.visible {
        return Err(FailReason::NotVisible);
    }
    if rel.distance > REACH {
        return Err(FailReason::OutOfReach);
    }
    let needed = Affordance::for_action(kind).expect("object action");
    if !obj.has(needed) {
        return Err(FailReason::NotAfforded);
    }
    let agent_id = world.agent.id.clone();
    match kind {
        ActionKind::OpenObject => {
            if obj.state.opened {
                return Err(FailReason::AlreadyOpen);
            }
            world.objects.get_mut(target).unwrap().state.opened = true;
        }
        ActionKind::BreakObject => {
            if obj.state.broken {
                return Err(FailReason::AlreadyBroken);
            }
            world.objects.get_mut(target).unwrap().state.broken = true;
        }
        ActionKind::PickupObject | ActionKind::GrabObject => {
            if obj.state.held_by.is_some() {
                return Err(FailReason::AlreadyHeld);
            }
            if world.agent.holding.is_some() {
                return Err(FailReason::HandsFull);
            }
            let o = world.objects.get_mut(target).unwrap();
            o.state.held_by = Some(agent_id);
            o.position = None;
            world.agent.holding = Some(target.to_string());
        }
        ActionKind::SitObject => {
            if obj.state.occupied_by.is_some() {
                return Err(FailReason::AlreadySitting);
            }
            stand_up(world);
            world.objects.get_mut(target).unwrap().state.occupied_by = Some(agent_id);
            world.agent.sitting_on = Some(target.to_string());
        }
        _ => unreachable!("navigation handled above"),
    }
    Ok(())
}

/// Evaluation oracle: does the world satisfy the instruction right now?
pub fn ground_truth_success(state: &WorldState, instruction: &Instruction) -> Result<bool, WorldError> {
    let target = instruction.object();
    let obj = state
        .object(target)
        .ok_or_else(|| WorldError::UnknownObject(target.to_string()))?;
    Ok(match instruction.verb() {
        Verb::PickUp | Verb::Grab => state.agent.holding.as_deref() == Some(target),
        Verb::Open => obj.state.opened,
        Verb::Break => obj.state.broken,
        Verb::Sit => state.agent.sitting_on.as_deref() == Some(target),
    })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::worldsim::fixtures::{act, kitchen, living_room, tiny};
    use crate::worldsim::{observe, View};

    fn unchanged_but_step(before: &WorldState, after: &WorldState) -> bool {
        let mut b = before.clone();
        b.step_count += 1;
        &b == after
    }

    #[test]
    fn approach_then_pick_up() {
        let mut w = tiny();
        for kind in [ActionKind::MoveAhead, ActionKind::MoveAhead] {
            let (next, out) = step(&w, &act(kind, None)).unwrap();
            assert_eq!(out, StepOutcome::Ok);
            w = next;
        }
        assert_eq!(w.agent.position, Cell::new(2, 2));
        let (w, out) = step(&w, &act(ActionKind::PickupObject, Some("lettuce"))).unwrap();
        assert_eq!(out, StepOutcome::Ok);
        assert_eq!(w.agent.holding.as_deref(), Some("lettuce"));
        assert_eq!(w.object("lettuce").unwrap().position, None);
        assert!(ground_truth_success(&w, &Instruction::parse("pick up the lettuce").unwrap()).unwrap());
        w.check_invariants().unwrap();
    }

    #[test]
    fn visible_but_far_is_out_of_reach() {
        let w = tiny();
        let (after, out) = step(&w, &act(ActionKind::PickupObject, Some("lettuce"))).unwrap();
        assert_eq!(out, StepOutcome::Failed(FailReason::OutOfReach));
        assert!(unchanged_but_step(&w, &after));
    }

    #[test]
    fn outside_the_cone_is_not_visible() {
        let w = tiny();
        // The mug is directly to the left: in reach, but outside the cone.
        let (after, out) = step(&w, &act(ActionKind::PickupObject, Some("mug"))).unwrap();
        assert_eq!(out, StepOutcome::Failed(FailReason::NotVisible));
        assert!(unchanged_but_step(&w, &after));
        assert_eq!(FailReason::NotVisible.to_string(), "not visible");
    }

    #[test]
    fn open_visible_openable_closed_object() {
        let w = tiny();
        let (w, out) = step(&w, &act(ActionKind::OpenObject, Some("drawer"))).unwrap();
        assert_eq!(out, StepOutcome::Ok);
        assert!(w.object("drawer").unwrap().state.opened);
        let (_, again) = step(&w, &act(ActionKind::OpenObject, Some("drawer"))).unwrap();
        assert_eq!(again, StepOutcome::Failed(FailReason::AlreadyOpen));
    }

    #[test]
    fn break_twice_fails_softly() {
        let mut w = tiny();
        w = step(&w, &act(ActionKind::RotateLeft, None)).unwrap().0;
        let (w, first) = step(&w, &act(ActionKind::BreakObject, Some("mug"))).unwrap();
        assert_eq!(first, StepOutcome::Ok);
        let (after, second) = step(&w, &act(ActionKind::BreakObject, Some("mug"))).unwrap();
        assert_eq!(second, StepOutcome::Failed(FailReason::AlreadyBroken));
        assert!(unchanged_but_step(&w, &after));
        assert_eq!(FailReason::AlreadyBroken.to_string(), "already broken");
    }

    #[test]
    fn affordance_and_environment_checks() {
        let w = tiny();
        let (_, out) = step(&w, &act(ActionKind::BreakObject, Some("drawer"))).unwrap();
        assert_eq!(out, StepOutcome::Failed(FailReason::NotAfforded));
        let (_, out) = step(&w, &act(ActionKind::SitObject, Some("drawer"))).unwrap();
        assert_eq!(out, StepOutcome::Failed(FailReason::NotInEnvironment));
        let (_, out) = step(&w, &act(ActionKind::OpenObject, Some("sofa"))).unwrap();
        assert_eq!(out, StepOutcome::Failed(FailReason::NoSuchObject));
    }

    #[test]
    fn hands_full() {
        let mut w = tiny();
        w = step(&w, &act(ActionKind::RotateLeft, None)).unwrap().0;
        w = step(&w, &act(ActionKind::PickupObject, Some("mug"))).unwrap().0;
        w = step(&w, &act(ActionKind::RotateRight, None)).unwrap().0;
        w = step(&w, &act(ActionKind::MoveAhead, None)).unwrap().0;
        w = step(&w, &act(ActionKind::MoveAhead, None)).unwrap().0;
        let (_, out) = step(&w, &act(ActionKind::PickupObject, Some("lettuce"))).unwrap();
        assert_eq!(out, StepOutcome::Failed(FailReason::HandsFull));
    }

    #[test]
    fn unknown_action_is_a_protocol_error() {
        let w = tiny();
        let bogus = ActionRecord { action: "Teleport".into(), target: None, reasoning: String::new() };
        assert_eq!(step(&w, &bogus).unwrap_err(), WorldError::UnknownAction("Teleport".into()));
    }

    #[test]
    fn horizon_is_enforced() {
        let mut w = tiny();
        w.horizon = 2;
        for _ in 0..2 {
            w = step(&w, &act(ActionKind::RotateLeft, None)).unwrap().0;
        }
        assert_eq!(
            step(&w, &act(ActionKind::RotateLeft, None)).unwrap_err(),
            WorldError::HorizonExceeded { step: 3, horizon: 2 }
        );
    }

    #[test]
    fn moving_while_seated_stands_up() {
        let scene = living_room();
        let mut w = scene.reset(0).unwrap();
        // Put the agent right in front of the sofa.
        w.agent.position = Cell::new(1, 3);
        w.agent.facing = Facing::West;
        let (seated, out) = step(&w, &act(ActionKind::SitObject, Some("sofa"))).unwrap();
        assert_eq!(out, StepOutcome::Ok);
        seated.check_invariants().unwrap();
        assert!(ground_truth_success(&seated, &Instruction::parse("sit on the sofa").unwrap()).unwrap());
        let (stood, _) = step(&seated, &act(ActionKind::MoveAhead, None)).unwrap();
        assert_eq!(stood.agent.position, Cell::new(1, 3));
        assert_eq!(stood.agent.sitting_on, None);
        assert_eq!(stood.object("sofa").unwrap().state.occupied_by, None);
    }

    #[test]
    fn oracle_examples() {
        let mut w = tiny();
        let open = Instruction::parse("open the cabinet").unwrap();
        assert!(!ground_truth_success(&w, &open).unwrap());
        w.objects.get_mut("cabinet").unwrap().state.opened = true;
        assert!(ground_truth_success(&w, &open).unwrap());
        assert!(!ground_truth_success(&w, &Instruction::parse("pick up the lettuce").unwrap()).unwrap());
        // Broken counts wherever the agent is.
        w.objects.get_mut("mug").unwrap().state.broken = true;
        let before = w.clone();
        assert!(ground_truth_success(&w, &Instruction::parse("break the mug").unwrap()).unwrap());
        assert_eq!(w, before, "the oracle never mutates");
        assert!(matches!(
            ground_truth_success(&w, &Instruction::parse("open the fridge").unwrap()),
            Err(WorldError::UnknownObject(_))
        ));
    }

    fn any_action(ids: Vec<String>) -> impl Strategy<Value = ActionRecord> {
        let kinds = prop::sample::select(vec![
            ActionKind::MoveAhead,
            ActionKind::RotateLeft,
            ActionKind::RotateRight,
            ActionKind::PickupObject,
            ActionKind::OpenObject,
            ActionKind::BreakObject,
            ActionKind::GrabObject,
            ActionKind::SitObject,
        ]);
        (kinds, prop::sample::select(ids)).prop_map(|(k, id)| ActionRecord::new(k, Some(&id), ""))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        /// No reachable state breaks an object or agent invariant; failed
        /// actions change nothing but the step counter; replays are exact.
        #[test]
        fn affordance_safety(
            seed in any::<u64>(),
            living in any::<bool>(),
            actions in prop::collection::vec(any_action(
                ["fridge", "cabinet", "drawer", "lettuce", "mug", "apple", "sofa", "chair", "closet", "book", "remotecontrol"]
                    .iter().map(|s| s.to_string()).collect()), 1..40),
        ) {
            let scene = if living { living_room() } else { kitchen() };
            let mut w = scene.reset(seed).unwrap();
            w.horizon = 40;
            w.check_invariants().unwrap();
            let start = w.clone();
            for a in &actions {
                let (next, out) = step(&w, a).unwrap();
                prop_assert!(next.check_invariants().is_ok(), "{:?}", next.check_invariants());
                if let StepOutcome::Failed(reason) = out {
                    prop_assert!(unchanged_but_step(&w, &next));
                    if reason == FailReason::NotVisible {
                        prop_assert!(observe(&w, View::FirstPerson).get(a.target.as_deref().unwrap()).is_none());
                    }
                }
                w = next;
            }
            let mut again = start;
            for a in &actions {
                again = step(&again, a).unwrap().0;
            }
            prop_assert_eq!(again.canonical_json(), w.canonical_json());
        }
    }
}
