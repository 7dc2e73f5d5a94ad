//! Browser bindings: instruction parsing and an in-page mission you can
//! step and re-goal by clicking. Structured values cross the boundary as
//! JSON strings; errors come back as plain strings.

use serde::Serialize;
use travnav_core::instruction::{parse_instruction, Instruction, VerbLexicon};
use travnav_core::runtime::{Mission, MissionConfig, MissionState};
use travnav_core::scenario::Scenario;
use wasm_bindgen::prelude::*;

fn to_json<T: Serialize + ?Sized>(value: &T) -> String {
    serde_json::to_string(value).expect("plain data serializes")
}

/// Directives for `text` under the default lexicon, as a JSON array.
#[wasm_bindgen]
pub fn parse(text: &str) -> String {
    to_json(&parse_instruction(
        &Instruction::new(text),
        &VerbLexicon::default(),
    ))
}

#[wasm_bindgen]
pub fn scenario_names() -> String {
    to_json(&Scenario::builtin_names())
}

#[derive(Serialize)]
struct Polygon<'a> {
    label: &'a str,
    polygon: &'a [[f64; 2]],
    traversable: bool,
}

#[derive(Serialize)]
struct Layout<'a> {
    name: &'a str,
    min: [f64; 2],
    max: [f64; 2],
    resolution: f64,
    origin: [f64; 2],
    width: usize,
    height: usize,
    shapes: Vec<Polygon<'a>>,
    description: &'a str,
    goal: [f64; 2],
}

#[derive(Serialize)]
struct Snapshot<'a> {
    #[serde(flatten)]
    state: &'a MissionState,
    replanned: bool,
}

#[wasm_bindgen]
pub struct Demo {
    mission: Mission,
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(scenario: &str, seed: Option<u64>) -> Result<Demo, String> {
        let scenario = Scenario::builtin(scenario).map_err(|e| e.to_string())?;
        let config = MissionConfig {
            seed,
            ..Default::default()
        };
        let mission = Mission::new(scenario, config).map_err(|e| e.to_string())?;
        Ok(Demo { mission })
    }

    /// Bounds, grid geometry and the outlines to draw.
    pub fn layout(&self) -> String {
        let world = self.mission.world();
        let spec = self.mission.costmap().spec();
        let mut shapes: Vec<Polygon> = world
            .static_map
            .iter()
            .map(|f| Polygon {
                label: &f.label,
                polygon: f.polygon.vertices(),
                traversable: false,
            })
            .collect();
        shapes.extend(world.objects.iter().map(|o| Polygon {
            label: &o.label,
            polygon: o.footprint.vertices(),
            traversable: o.truly_traversable,
        }));
        let scenario = self.mission.scenario();
        to_json(&Layout {
            name: &scenario.name,
            min: world.bounds.min,
            max: world.bounds.max,
            resolution: spec.resolution,
            origin: spec.origin,
            width: spec.width,
            height: spec.height,
            shapes,
            description: &scenario.description,
            goal: scenario.goal,
        })
    }

    /// Replaces the directives; returns them as JSON.
    pub fn instruct(&mut self, text: &str) -> Result<String, String> {
        self.mission
            .inject_instruction(text)
            .map(to_json)
            .map_err(|e| e.to_string())
    }

    /// Sets a new goal and runs one tick so the new plan shows at once.
    pub fn set_goal(&mut self, x: f64, y: f64) -> Result<String, String> {
        self.mission.set_goal(x, y).map_err(|e| e.to_string())?;
        self.mission.tick();
        Ok(self.snapshot(true))
    }

    /// Runs up to `n` ticks, stopping early when the mission ends.
    pub fn step(&mut self, n: u32) -> String {
        for _ in 0..n {
            if !self.mission.tick() {
                break;
            }
        }
        self.snapshot(false)
    }

    pub fn state(&self) -> String {
        self.snapshot(false)
    }

    /// Master costmap, row-major from the grid origin.
    pub fn grid(&self) -> Vec<u8> {
        self.mission.costmap().master().to_vec()
    }

    pub fn running(&self) -> bool {
        !self.mission.phase().is_terminal()
    }

    fn snapshot(&self, replanned: bool) -> String {
        to_json(&Snapshot {
            state: &self.mission.state(),
            replanned,
        })
    }
}
