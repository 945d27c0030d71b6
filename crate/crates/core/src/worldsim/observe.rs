use std::fmt;

use serde::{Deserialize, Serialize};

use super::state::{AgentPose, Cell, Facing, ObjectState, WorldObject, WorldState};
use crate::instruction::Instruction;

/// Chebyshev radius of the first-person view.
pub const VIEW_DISTANCE: u32 = 3;
/// Chebyshev radius within which visible objects can be manipulated.
pub const REACH: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum View {
    FirstPerson,
    ThirdPerson,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    InHand,
    Ahead,
    AheadLeft,
    AheadRight,
    Left,
    Right,
    Behind,
    BehindLeft,
    BehindRight,
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::InHand => "in hand",
            Direction::Ahead => "ahead",
            Direction::AheadLeft => "ahead-left",
            Direction::AheadRight => "ahead-right",
            Direction::Left => "left",
            Direction::Right => "right",
            Direction::Behind => "behind",
            Direction::BehindLeft => "behind-left",
            Direction::BehindRight => "behind-right",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ObservedObject {
    pub id: String,
    pub kind: String,
    pub state: ObjectState,
    pub direction: Direction,
    pub distance: u32,
    /// Absolute cell; third-person frames only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cell: Option<Cell>,
}

/// What a model is shown. First-person views carry the facing and the objects
/// in the view cone; third-person frames carry the full pose and every object.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Observation {
    pub view: View,
    pub facing: Facing,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agent: Option<AgentPose>,
    pub visible: Vec<ObservedObject>,
}

impl Observation {
    pub fn get(&self, id: &str) -> Option<&ObservedObject> {
        self.visible.iter().find(|o| o.id == id)
    }

    /// Compact canonical key: sorted (id, state, placement) tuples.
    pub fn canonical_key(&self) -> String {
        let mut parts = Vec::with_capacity(self.visible.len() + 1);
        match (&self.view, &self.agent) {
            (View::ThirdPerson, Some(a)) => parts.push(format!(
                "@{},{}:{:?}:s={}:h={}",
                a.position.x,
                a.position.y,
                a.facing,
                a.sitting_on.as_deref().unwrap_or("-"),
                a.holding.as_deref().unwrap_or("-")
            )),
            _ => parts.push(format!("^{:?}", self.facing)),
        }
        let mut objs: Vec<&ObservedObject> = self.visible.iter().collect();
        objs.sort_by(|a, b| a.id.cmp(&b.id));
        for o in objs {
            let place = match o.cell {
                Some(c) => format!("{},{}", c.x, c.y),
                None => format!("{}:{}", o.direction, o.distance),
            };
            parts.push(format!(
                "{}[{}{}{}{}]{}",
                o.id,
                if o.state.opened { "o" } else { "" },
                if o.state.broken { "b" } else { "" },
                if o.state.held_by.is_some() { "h" } else { "" },
                if o.state.occupied_by.is_some() { "s" } else { "" },
                place
            ));
        }
        parts.join("|")
    }

    /// Verb predicate read off the frame, `None` if the target is absent.
    pub fn shows_completed(&self, instruction: &Instruction) -> Option<bool> {
        self.get(instruction.object()).map(|o| o.state.completes(instruction.verb()))
    }

    /// Plain-text rendering used in place of an image for remote models.
    pub fn describe(&self) -> String {
        let mut out = String::new();
        match &self.agent {
            Some(a) => out.push_str(&format!(
                "Agent {} at cell {} facing {:?}{}{}.",
                a.id,
                a.position,
                a.facing,
                a.holding.as_ref().map(|h| format!(", holding the {h}")).unwrap_or_default(),
                a.sitting_on.as_ref().map(|s| format!(", sitting on the {s}")).unwrap_or_default(),
            )),
            None => out.push_str(&format!("Facing {:?}.", self.facing)),
        }
        if self.visible.is_empty() {
            out.push_str(" No objects in view.");
        }
        for o in &self.visible {
            let mut flags = Vec::new();
            if o.state.opened {
                flags.push("open");
            }
            if o.state.broken {
                flags.push("broken");
            }
            if o.state.held_by.is_some() {
                flags.push("held");
            }
            if o.state.occupied_by.is_some() {
                flags.push("occupied");
            }
            let state = if flags.is_empty() { String::new() } else { format!(" ({})", flags.join(", ")) };
            out.push_str(&format!(" {} [{}]{}: {}, distance {}.", o.id, o.kind, state, o.direction, o.distance));
        }
        out
    }
}

pub(crate) struct Relative {
    pub direction: Direction,
    pub distance: u32,
    pub visible: bool,
}

/// Places an object in the agent's egocentric frame.
pub(crate) fn locate(agent: &AgentPose, obj: &WorldObject) -> Relative {
    let Some(pos) = obj.position else {
        return Relative { direction: Direction::InHand, distance: 0, visible: true };
    };
    let dx = pos.x - agent.position.x;
    let dy = pos.y - agent.position.y;
    let (forward, lateral) = match agent.facing {
        Facing::North => (-dy, dx),
        Facing::South => (dy, -dx),
        Facing::East => (dx, dy),
        Facing::West => (-dx, -dy),
    };
    let distance = forward.unsigned_abs().max(lateral.unsigned_abs());
    let direction = match (forward.signum(), lateral.signum()) {
        (1, 0) | (0, 0) => Direction::Ahead,
        (1, -1) => Direction::AheadLeft,
        (1, _) => Direction::AheadRight,
        (0, -1) => Direction::Left,
        (0, _) => Direction::Right,
        (_, 0) => Direction::Behind,
        (_, -1) => Direction::BehindLeft,
        _ => Direction::BehindRight,
    };
    // 90 degree cone centred on the facing, Chebyshev range limit.
    let visible = forward > 0 && lateral.abs() <= forward && distance <= VIEW_DISTANCE;
    Relative { direction, distance, visible }
}

/// Renders the world from the requested viewpoint. Pure.
pub fn observe(state: &WorldState, view: View) -> Observation {
    let visible = state
        .objects
        .values()
        .filter_map(|o| {
            let rel = locate(&state.agent, o);
            if view == View::FirstPerson && !rel.visible {
                return None;
            }
            Some(ObservedObject {
                id: o.id.clone(),
                kind: o.kind.clone(),
                state: o.state.clone(),
                direction: rel.direction,
                distance: rel.distance,
                cell: match view {
                    View::ThirdPerson => o.position,
                    View::FirstPerson => None,
                },
            })
        })
        .collect();
    Observation {
        view,
        facing: state.agent.facing,
        agent: (view == View::ThirdPerson).then(|| state.agent.clone()),
        visible,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::worldsim::fixtures::{act, kitchen, tiny};
    use crate::worldsim::{step, ActionKind};

    /// Independent cone oracle: the cells swept row by row in front of the agent.
    fn cone_cells(agent: &AgentPose) -> Vec<Cell> {
        let (fx, fy) = agent.facing.delta();
        let (rx, ry) = agent.facing.right().delta();
        let mut out = Vec::new();
        for d in 1..=VIEW_DISTANCE as i32 {
            for l in -d..=d {
                out.push(agent.position.offset(d * fx + l * rx, d * fy + l * ry));
            }
        }
        out
    }

    #[test]
    fn first_person_matches_the_cone_oracle() {
        let scene = kitchen();
        for seed in 0..200 {
            let w = scene.reset(seed).unwrap();
            let cone = cone_cells(&w.agent);
            let fp = observe(&w, View::FirstPerson);
            for o in w.objects.values() {
                let expect = o.position.is_none_or(|c| cone.contains(&c));
                assert_eq!(fp.get(&o.id).is_some(), expect, "seed {seed} object {}", o.id);
            }
            assert!(fp.agent.is_none());
            assert_eq!(fp.facing, w.agent.facing);
        }
    }

    #[test]
    fn adjacent_object_ahead_is_visible() {
        let mut w = tiny();
        w.agent.facing = Facing::East;
        w.agent.position = Cell::new(2, 3);
        let fp = observe(&w, View::FirstPerson);
        let drawer = fp.get("drawer").expect("drawer directly ahead");
        assert_eq!((drawer.direction, drawer.distance), (Direction::Ahead, 1));
    }

    #[test]
    fn third_person_lists_everything() {
        let w = tiny();
        let tp = observe(&w, View::ThirdPerson);
        assert_eq!(tp.visible.len(), w.objects.len());
        assert!(tp.visible.iter().all(|o| o.cell.is_some()));
        assert_eq!(tp.agent.as_ref(), Some(&w.agent));
    }

    #[test]
    fn turning_around_hides_what_was_ahead() {
        let w = tiny();
        assert!(observe(&w, View::FirstPerson).get("lettuce").is_some());
        let w = step(&w, &act(ActionKind::RotateLeft, None)).unwrap().0;
        let w = step(&w, &act(ActionKind::RotateLeft, None)).unwrap().0;
        assert!(observe(&w, View::FirstPerson).get("lettuce").is_none());
    }

    #[test]
    fn held_objects_are_in_hand() {
        let mut w = tiny();
        w = step(&w, &act(ActionKind::RotateLeft, None)).unwrap().0;
        w = step(&w, &act(ActionKind::PickupObject, Some("mug"))).unwrap().0;
        w = step(&w, &act(ActionKind::RotateLeft, None)).unwrap().0;
        let mug = observe(&w, View::FirstPerson).get("mug").cloned().unwrap();
        assert_eq!((mug.direction, mug.distance), (Direction::InHand, 0));
    }

    #[test]
    fn keys_separate_views_and_layouts() {
        let w = tiny();
        let fp = observe(&w, View::FirstPerson).canonical_key();
        let tp = observe(&w, View::ThirdPerson).canonical_key();
        assert!(fp.starts_with('^') && tp.starts_with('@'));
        let mut moved = w.clone();
        moved.objects.get_mut("mug").unwrap().position = Some(Cell::new(0, 4));
        assert_ne!(observe(&moved, View::ThirdPerson).canonical_key(), tp);
        assert_eq!(observe(&moved, View::FirstPerson).canonical_key(), fp, "mug is out of view either way");
    }

    #[test]
    fn shows_completed_reads_the_frame() {
        let mut w = tiny();
        let i = Instruction::parse("open the drawer").unwrap();
        assert_eq!(observe(&w, View::ThirdPerson).shows_completed(&i), Some(false));
        w.objects.get_mut("drawer").unwrap().state.opened = true;
        assert_eq!(observe(&w, View::ThirdPerson).shows_completed(&i), Some(true));
        assert!(observe(&w, View::ThirdPerson).describe().contains("drawer [Drawer] (open)"));
        let gone = Instruction::parse("open the fridge").unwrap();
        assert_eq!(observe(&w, View::ThirdPerson).shows_completed(&gone), None);
    }
}
