//! MiniHouse: a small deterministic household text world.
//!
//! Worlds are declared as data (receptacles with contents plus a typed goal)
//! and speak a subset of the ALFWorld command grammar:
//!
//! ```text
//! go to R | open R | take O from R | put O in/on R
//! clean O with sinkbasin N | heat O with microwave N | cool O with fridge N
//! use desklamp N
//! ```
//!
//! Anything else, or a command whose preconditions fail, yields
//! `Nothing happens.` with reward 0.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{EnvError, EnvStep, Environment};
use crate::memory::{Observation, TaskSpec};
use crate::planner::sentence;

pub const NOTHING_HAPPENS: &str = "Nothing happens.";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReceptacleSpec {
    pub name: String,
    #[serde(default)]
    pub openable: bool,
    #[serde(default)]
    pub open: bool,
    #[serde(default)]
    pub contents: Vec<String>,
}

/// Goal over object and receptacle *types* ("mug", "desk"), never instances.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Goal {
    Pick { object: String, target: String },
    Clean { object: String, target: String },
    Heat { object: String, target: String },
    Cool { object: String, target: String },
    Look { object: String },
    Pick2 { object: String, target: String },
}

impl Goal {
    pub fn family(&self) -> &'static str {
        match self {
            Goal::Pick { .. } => "pick",
            Goal::Clean { .. } => "clean",
            Goal::Heat { .. } => "heat",
            Goal::Cool { .. } => "cool",
            Goal::Look { .. } => "look",
            Goal::Pick2 { .. } => "pick2",
        }
    }

    pub fn object(&self) -> &str {
        match self {
            Goal::Pick { object, .. }
            | Goal::Clean { object, .. }
            | Goal::Heat { object, .. }
            | Goal::Cool { object, .. }
            | Goal::Look { object }
            | Goal::Pick2 { object, .. } => object,
        }
    }

    pub fn target(&self) -> Option<&str> {
        match self {
            Goal::Look { .. } => None,
            Goal::Pick { target, .. }
            | Goal::Clean { target, .. }
            | Goal::Heat { target, .. }
            | Goal::Cool { target, .. }
            | Goal::Pick2 { target, .. } => Some(target),
        }
    }

    /// Appliance receptacle type the goal needs, if any.
    pub fn appliance(&self) -> Option<&'static str> {
        match self {
            Goal::Clean { .. } => Some("sinkbasin"),
            Goal::Heat { .. } => Some("microwave"),
            Goal::Cool { .. } => Some("fridge"),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorldSpec {
    pub receptacles: Vec<ReceptacleSpec>,
    pub goal: Goal,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureTask {
    #[serde(flatten)]
    pub task: TaskSpec,
    pub world: WorldSpec,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureSuite {
    pub name: String,
    pub tasks: Vec<FixtureTask>,
}

impl FixtureSuite {
    pub fn validate(&self) -> Result<(), EnvError> {
        let mut ids = BTreeSet::new();
        for t in &self.tasks {
            if !ids.insert(t.task.id.as_str()) {
                return Err(EnvError::InvalidFixture(format!("duplicate task id {}", t.task.id)));
            }
            if t.task.description.trim().is_empty() {
                return Err(EnvError::InvalidFixture(format!("task {} has no description", t.task.id)));
            }
            t.world.validate().map_err(|e| EnvError::InvalidFixture(format!("task {}: {e}", t.task.id)))?;
        }
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&FixtureTask> {
        self.tasks.iter().find(|t| t.task.id == id)
    }

    pub fn task_specs(&self) -> Vec<TaskSpec> {
        self.tasks.iter().map(|t| t.task.clone()).collect()
    }
}

/// `"mug 2"` → `"mug"`.
pub fn type_of(name: &str) -> &str {
    match name.rsplit_once(' ') {
        Some((ty, n)) if !n.is_empty() && n.bytes().all(|b| b.is_ascii_digit()) => ty,
        _ => name,
    }
}

fn is_instance_name(name: &str) -> bool {
    matches!(name.rsplit_once(' '), Some((ty, n)) if !ty.is_empty() && !n.is_empty() && n.bytes().all(|b| b.is_ascii_digit()))
}

impl WorldSpec {
    pub fn validate(&self) -> Result<(), String> {
        let mut receptacles = BTreeSet::new();
        let mut objects = BTreeSet::new();
        for r in &self.receptacles {
            if !is_instance_name(&r.name) {
                return Err(format!("receptacle name {:?} must look like \"type N\"", r.name));
            }
            if !receptacles.insert(r.name.as_str()) {
                return Err(format!("duplicate receptacle {}", r.name));
            }
            if r.open && !r.openable {
                return Err(format!("{} is open but not openable", r.name));
            }
            for o in &r.contents {
                if !is_instance_name(o) {
                    return Err(format!("object name {o:?} must look like \"type N\""));
                }
                if !objects.insert(o.as_str()) {
                    return Err(format!("object {o} placed twice"));
                }
            }
        }
        let obj_type = self.goal.object();
        let count = objects.iter().filter(|o| type_of(o) == obj_type).count();
        let needed = if matches!(self.goal, Goal::Pick2 { .. }) { 2 } else { 1 };
        if count < needed {
            return Err(format!("goal needs {needed} {obj_type} object(s), world has {count}"));
        }
        if let Some(target) = self.goal.target() {
            if !receptacles.iter().any(|r| type_of(r) == target) {
                return Err(format!("goal target {target} missing"));
            }
        }
        if let Some(app) = self.goal.appliance() {
            if !receptacles.iter().any(|r| type_of(r) == app) {
                return Err(format!("goal needs a {app}"));
            }
        }
        if matches!(self.goal, Goal::Look { .. }) && !objects.iter().any(|o| type_of(o) == "desklamp") {
            return Err("look goal needs a desklamp".to_string());
        }
        if World::from_spec(self).goal_satisfied() {
            return Err("goal already holds in the initial state".to_string());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ObjectState {
    pub clean: bool,
    pub hot: bool,
    pub cold: bool,
    pub examined: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Receptacle {
    pub name: String,
    pub openable: bool,
    pub open: bool,
    pub contents: Vec<String>,
}

impl Receptacle {
    fn accessible(&self) -> bool {
        !self.openable || self.open
    }
}

/// Mutable world state. Hashable so that searches can deduplicate states.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct World {
    pub receptacles: Vec<Receptacle>,
    pub location: Option<usize>,
    pub holding: Option<String>,
    pub states: BTreeMap<String, ObjectState>,
    pub lamps_on: BTreeSet<String>,
    pub goal: Goal,
}

fn list_items(items: &[String]) -> String {
    match items.len() {
        0 => "nothing".to_string(),
        1 => format!("a {}", items[0]),
        n => {
            let head: Vec<String> = items[..n - 1].iter().map(|i| format!("a {i}")).collect();
            format!("{}, and a {}", head.join(", "), items[n - 1])
        }
    }
}

enum Command<'a> {
    GoTo(&'a str),
    Open(&'a str),
    Take(&'a str, &'a str),
    Put(&'a str, &'a str),
    Apply(&'static str, &'a str, &'a str),
    Use(&'a str),
}

fn parse_command(cmd: &str) -> Option<Command<'_>> {
    if let Some(r) = cmd.strip_prefix("go to ") {
        return Some(Command::GoTo(r));
    }
    if let Some(r) = cmd.strip_prefix("open ") {
        return Some(Command::Open(r));
    }
    if let Some(rest) = cmd.strip_prefix("take ") {
        let (o, r) = rest.split_once(" from ")?;
        return Some(Command::Take(o, r));
    }
    if let Some(rest) = cmd.strip_prefix("put ") {
        for sep in [" in/on ", " in ", " on "] {
            if let Some((o, r)) = rest.split_once(sep) {
                return Some(Command::Put(o, r));
            }
        }
        return None;
    }
    for verb in ["clean", "heat", "cool"] {
        if let Some(rest) = cmd.strip_prefix(verb).and_then(|r| r.strip_prefix(' ')) {
            let (o, r) = rest.split_once(" with ")?;
            return Some(Command::Apply(verb, o, r));
        }
    }
    cmd.strip_prefix("use ").map(Command::Use)
}

impl World {
    pub fn from_spec(spec: &WorldSpec) -> World {
        let receptacles: Vec<Receptacle> = spec
            .receptacles
            .iter()
            .map(|r| Receptacle { name: r.name.clone(), openable: r.openable, open: r.open, contents: r.contents.clone() })
            .collect();
        let states = receptacles.iter().flat_map(|r| r.contents.iter()).map(|o| (o.clone(), ObjectState::default())).collect();
        World { receptacles, location: None, holding: None, states, lamps_on: BTreeSet::new(), goal: spec.goal.clone() }
    }

    pub fn intro(&self, task: &TaskSpec) -> String {
        let names: Vec<String> = self.receptacles.iter().map(|r| r.name.clone()).collect();
        format!(
            "You are in the middle of a room. Looking quickly around you, you see {}.\nYour task is to: {}",
            list_items(&names),
            sentence(&task.description)
        )
    }

    fn find(&self, name: &str) -> Option<usize> {
        self.receptacles.iter().position(|r| r.name == name)
    }

    fn here(&self) -> Option<&Receptacle> {
        self.location.map(|i| &self.receptacles[i])
    }

    /// Does the goal hold in the current state?
    pub fn goal_satisfied(&self) -> bool {
        let obj = self.goal.object();
        let placed = |target: &str, ok: &dyn Fn(&ObjectState) -> bool| {
            self.receptacles.iter().filter(|r| type_of(&r.name) == target).any(|r| {
                r.contents.iter().any(|o| type_of(o) == obj && self.states.get(o).is_some_and(ok))
            })
        };
        match &self.goal {
            Goal::Pick { target, .. } => placed(target, &|_| true),
            Goal::Clean { target, .. } => placed(target, &|s| s.clean),
            Goal::Heat { target, .. } => placed(target, &|s| s.hot),
            Goal::Cool { target, .. } => placed(target, &|s| s.cold),
            Goal::Look { .. } => self.states.iter().any(|(o, s)| type_of(o) == obj && s.examined),
            Goal::Pick2 { target, .. } => self
                .receptacles
                .iter()
                .filter(|r| type_of(&r.name) == target)
                .any(|r| r.contents.iter().filter(|o| type_of(o) == obj).count() >= 2),
        }
    }

    /// Execute a command and return the observation text.
    pub fn apply(&mut self, action: &str) -> String {
        let normalized: String = action.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
        self.apply_normalized(&normalized).unwrap_or_else(|| NOTHING_HAPPENS.to_string())
    }

    fn apply_normalized(&mut self, cmd: &str) -> Option<String> {
        match parse_command(cmd)? {
            Command::GoTo(r) => {
                let idx = self.find(r)?;
                if self.location == Some(idx) {
                    return None;
                }
                self.location = Some(idx);
                let rec = &self.receptacles[idx];
                Some(if rec.openable && !rec.open {
                    format!("The {} is closed.", rec.name)
                } else if rec.openable {
                    format!("The {} is open. In it, you see {}.", rec.name, list_items(&rec.contents))
                } else {
                    format!("On the {}, you see {}.", rec.name, list_items(&rec.contents))
                })
            }
            Command::Open(r) => {
                let idx = self.find(r)?;
                let rec = &mut self.receptacles[idx];
                if self.location != Some(idx) || !rec.openable || rec.open {
                    return None;
                }
                rec.open = true;
                Some(format!("You open the {0}. The {0} is open. In it, you see {1}.", rec.name, list_items(&rec.contents)))
            }
            Command::Take(o, r) => {
                let idx = self.find(r)?;
                if self.location != Some(idx) || self.holding.is_some() {
                    return None;
                }
                let rec = &mut self.receptacles[idx];
                if !rec.accessible() {
                    return None;
                }
                let pos = rec.contents.iter().position(|c| c == o)?;
                if type_of(o) == "desklamp" {
                    return None;
                }
                let obj = rec.contents.remove(pos);
                let msg = format!("You pick up the {} from the {}.", obj, rec.name);
                self.holding = Some(obj);
                Some(msg)
            }
            Command::Put(o, r) => {
                let idx = self.find(r)?;
                if self.location != Some(idx) || self.holding.as_deref() != Some(o) {
                    return None;
                }
                let rec = &mut self.receptacles[idx];
                if !rec.accessible() {
                    return None;
                }
                let obj = self.holding.take()?;
                let msg = format!("You put the {} in/on the {}.", obj, rec.name);
                rec.contents.push(obj);
                Some(msg)
            }
            Command::Apply(verb, o, r) => {
                let appliance = match verb {
                    "clean" => "sinkbasin",
                    "heat" => "microwave",
                    _ => "fridge",
                };
                let idx = self.find(r)?;
                if type_of(r) != appliance || self.location != Some(idx) || self.holding.as_deref() != Some(o) {
                    return None;
                }
                let state = self.states.entry(o.to_string()).or_default();
                match verb {
                    "clean" => state.clean = true,
                    "heat" => {
                        state.hot = true;
                        state.cold = false;
                    }
                    _ => {
                        state.cold = true;
                        state.hot = false;
                    }
                }
                Some(format!("You {verb} the {o} using the {r}."))
            }
            Command::Use(d) => {
                if type_of(d) != "desklamp" || !self.here()?.contents.iter().any(|c| c == d) {
                    return None;
                }
                self.lamps_on.insert(d.to_string());
                if let Some(held) = self.holding.clone() {
                    self.states.entry(held).or_default().examined = true;
                }
                Some(format!("You turn on the {d}."))
            }
        }
    }

    /// Every command with a chance of changing the state, in a fixed order.
    pub fn admissible_actions(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (i, r) in self.receptacles.iter().enumerate() {
            if self.location != Some(i) {
                out.push(format!("go to {}", r.name));
            }
        }
        if let Some(here) = self.here() {
            if here.openable && !here.open {
                out.push(format!("open {}", here.name));
            }
            if here.accessible() {
                match &self.holding {
                    None => {
                        for o in here.contents.iter().filter(|o| type_of(o) != "desklamp") {
                            out.push(format!("take {} from {}", o, here.name));
                        }
                    }
                    Some(h) => {
                        out.push(format!("put {} in/on {}", h, here.name));
                    }
                }
            }
            if let Some(h) = &self.holding {
                match type_of(&here.name) {
                    "sinkbasin" => out.push(format!("clean {} with {}", h, here.name)),
                    "microwave" => out.push(format!("heat {} with {}", h, here.name)),
                    "fridge" => out.push(format!("cool {} with {}", h, here.name)),
                    _ => {}
                }
            }
            for d in here.contents.iter().filter(|o| type_of(o) == "desklamp") {
                out.push(format!("use {d}"));
            }
        }
        out
    }
}

impl World {
    /// Shortest action sequence reaching the goal within `max_depth` steps,
    /// by breadth-first search over [`World::admissible_actions`].
    pub fn shortest_solution(&self, max_depth: usize) -> Option<Vec<String>> {
        if self.goal_satisfied() {
            return Some(Vec::new());
        }
        // (state, parent index, action taken from parent)
        let mut nodes: Vec<(World, usize, String)> = alloc::vec![(self.clone(), usize::MAX, String::new())];
        let mut seen = BTreeSet::new();
        seen.insert(self.clone());
        let mut frontier = alloc::vec![0usize];
        for _ in 0..max_depth {
            let mut next = Vec::new();
            for idx in frontier {
                // taking an object of another type can only block the hands
                let actions = nodes[idx].0.admissible_actions().into_iter().filter(|a| {
                    a.strip_prefix("take ")
                        .and_then(|r| r.split_once(" from "))
                        .is_none_or(|(o, _)| type_of(o) == self.goal.object())
                });
                for action in actions {
                    let mut w = nodes[idx].0.clone();
                    w.apply(&action);
                    if !seen.insert(w.clone()) {
                        continue;
                    }
                    let done = w.goal_satisfied();
                    nodes.push((w, idx, action));
                    let child = nodes.len() - 1;
                    if done {
                        let mut path = Vec::new();
                        let mut at = child;
                        while at != 0 {
                            path.push(nodes[at].2.clone());
                            at = nodes[at].1;
                        }
                        path.reverse();
                        return Some(path);
                    }
                    next.push(child);
                }
            }
            frontier = next;
        }
        None
    }
}

/// Environment over a suite of fixture worlds, keyed by task id.
#[derive(Debug, Clone)]
pub struct MiniHouse {
    suite: Arc<FixtureSuite>,
    world: Option<World>,
}

impl MiniHouse {
    pub fn new(suite: FixtureSuite) -> Result<Self, EnvError> {
        suite.validate()?;
        Ok(MiniHouse { suite: Arc::new(suite), world: None })
    }

    pub fn from_shared(suite: Arc<FixtureSuite>) -> Self {
        MiniHouse { suite, world: None }
    }

    pub fn suite(&self) -> &FixtureSuite {
        &self.suite
    }

    pub fn world(&self) -> Option<&World> {
        self.world.as_ref()
    }
}

impl Environment for MiniHouse {
    fn reset(&mut self, task: &TaskSpec) -> Result<Observation, EnvError> {
        let fixture = self.suite.get(&task.id).ok_or_else(|| EnvError::UnknownTask(task.id.clone()))?;
        let world = World::from_spec(&fixture.world);
        let intro = world.intro(&fixture.task);
        self.world = Some(world);
        Ok(Observation::text(intro))
    }

    fn step(&mut self, action: &str) -> Result<EnvStep, EnvError> {
        let world = self.world.as_mut().ok_or(EnvError::NotReset)?;
        let text = world.apply(action);
        let done = world.goal_satisfied();
        Ok(EnvStep { observation: Observation::text(text), reward: if done { 1.0 } else { 0.0 }, done })
    }
}
