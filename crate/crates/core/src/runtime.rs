//! The closed loop: parse the instruction, then every tick ground, attach
//! attributes, segment, update the costmap, replan when needed and step the
//! robot until it is within the goal threshold.

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::costmap::{encode_pgm, Costmap, CostmapError, GridSpec, LETHAL};
use crate::geometry::CameraModel;
use crate::grounding::{attach_attributes, ground_synthetic, AttributedBox};
use crate::instruction::{parse_instruction, Instruction, LandmarkDirective, VerbLexicon};
use crate::planner::{plan, Path, PlannerConfig};
use crate::scenario::{Scenario, ScenarioError};
use crate::segmentation::{segment, SegmentedCloud};
use crate::simworld::{
    camera_view, lidar_scan, step_robot, traversal_permissions, CollisionFault, RobotState, World,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MissionConfig {
    /// Goal-distance threshold in meters.
    pub threshold: f64,
    pub dt: f64,
    /// Replan cadence `R` in ticks.
    pub replan_every: u64,
    /// Consecutive NoPath plans `S` before the mission stalls.
    pub stall_limit: u32,
    pub max_ticks: u64,
    /// Costmap snapshot interval in ticks; 0 keeps only the final map.
    pub snapshot_every: u64,
    pub planner: PlannerConfig,
    /// Overrides the scenario seed.
    pub seed: Option<u64>,
}

impl Default for MissionConfig {
    fn default() -> Self {
        Self {
            threshold: 0.3,
            dt: 0.05,
            replan_every: 5,
            stall_limit: 40,
            max_ticks: 4000,
            snapshot_every: 20,
            planner: PlannerConfig::default(),
            seed: None,
        }
    }
}

impl MissionConfig {
    pub fn validate(&self) -> Result<(), MissionError> {
        let bad = |m: &str| Err(MissionError::InvalidConfig(m.to_string()));
        if !(self.threshold > 0.0) {
            return bad("threshold must be positive");
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad("dt must be positive");
        }
        if self.replan_every == 0 {
            return bad("replan_every must be at least 1");
        }
        if self.stall_limit == 0 {
            return bad("stall_limit must be at least 1");
        }
        if !(self.planner.cost_weight >= 0.0) {
            return bad("cost_weight must be >= 0");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Idle,
    Running,
    Reached,
    NoPathStalled,
    Faulted,
}

impl Phase {
    pub fn is_terminal(self) -> bool {
        matches!(self, Phase::Reached | Phase::NoPathStalled | Phase::Faulted)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Fault {
    Collision(CollisionFault),
    TickBudget { max_ticks: u64 },
    Map { message: String },
}

#[derive(Debug, Error)]
pub enum MissionError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Costmap(#[from] CostmapError),
    #[error("invalid mission config: {0}")]
    InvalidConfig(String),
    #[error("goal ({x:.3}, {y:.3}) is outside the world bounds")]
    GoalOutOfBounds { x: f64, y: f64 },
    #[error("mission is {0:?} and does not accept this command")]
    NotAccepting(Phase),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Command {
    Instruction { text: String },
    Goal { x: f64, y: f64 },
}

/// An accepted command and the tick boundary it took effect at.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub tick: u64,
    #[serde(flatten)]
    pub command: Command,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub directives: Option<Vec<LandmarkDirective>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySample {
    pub tick: u64,
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

/// Master grid after the given tick, base64 of the row-major cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostmapSnapshot {
    pub tick: u64,
    pub master: String,
}

impl CostmapSnapshot {
    fn new(tick: u64, map: &Costmap) -> Self {
        Self {
            tick,
            master: B64.encode(map.master()),
        }
    }

    pub fn cells(&self) -> Vec<u8> {
        B64.decode(&self.master).unwrap_or_default()
    }

    pub fn to_pgm(&self, spec: &GridSpec) -> Vec<u8> {
        encode_pgm(spec, &self.cells())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaggedPoint {
    pub x: f64,
    pub y: f64,
    pub traversable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissionReport {
    pub scenario: String,
    pub seed: u64,
    pub config: MissionConfig,
    pub goal: Option<[f64; 2]>,
    pub phase: Phase,
    pub fault: Option<Fault>,
    pub ticks: u64,
    pub replans: u64,
    pub events: Vec<Event>,
    pub trajectory: Vec<TrajectorySample>,
    /// Whether a path was held after each tick's planning step.
    pub plan_available: Vec<bool>,
    pub grid: GridSpec,
    pub snapshots: Vec<CostmapSnapshot>,
}

impl MissionReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn trajectory_csv(&self) -> String {
        let mut out = String::from("tick,x,y,θ\n");
        for s in &self.trajectory {
            out.push_str(&format!("{},{},{},{}\n", s.tick, s.x, s.y, s.theta));
        }
        out
    }
}

/// Everything a viewer needs about the current tick, minus the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissionState {
    pub tick: u64,
    pub phase: Phase,
    pub robot: RobotState,
    pub goal: Option<[f64; 2]>,
    pub path: Option<Vec<[f64; 2]>>,
    pub directives: Vec<LandmarkDirective>,
    pub boxes: Vec<AttributedBox>,
    pub points: Vec<TaggedPoint>,
    pub fault: Option<Fault>,
}

pub struct Mission {
    scenario: Scenario,
    world: World,
    camera: CameraModel,
    lexicon: VerbLexicon,
    config: MissionConfig,
    seed: u64,
    robot: RobotState,
    goal: Option<[f64; 2]>,
    directives: Vec<LandmarkDirective>,
    costmap: Costmap,
    path: Option<Path>,
    phase: Phase,
    fault: Option<Fault>,
    tick: u64,
    since_plan: u64,
    no_path_streak: u32,
    replans: u64,
    boxes: Vec<AttributedBox>,
    points: Vec<TaggedPoint>,
    events: Vec<Event>,
    trajectory: Vec<TrajectorySample>,
    plan_available: Vec<bool>,
    snapshots: Vec<CostmapSnapshot>,
}

fn noise_seed(seed: u64, tick: u64) -> u64 {
    (seed ^ 0x9E37_79B9_7F4A_7C15).wrapping_add(tick)
}

impl Mission {
    /// A mission in [`Phase::Idle`]; it runs once a goal is set.
    pub fn new(scenario: Scenario, config: MissionConfig) -> Result<Self, MissionError> {
        Self::with_lexicon(scenario, config, VerbLexicon::default())
    }

    pub fn with_lexicon(
        scenario: Scenario,
        config: MissionConfig,
        lexicon: VerbLexicon,
    ) -> Result<Self, MissionError> {
        config.validate()?;
        scenario.validate()?;
        let camera = scenario.camera_model().map_err(ScenarioError::from)?;
        let costmap = scenario.initial_costmap()?;
        let robot = scenario.start_state();
        Ok(Self {
            world: scenario.world(),
            camera,
            lexicon,
            seed: config.seed.unwrap_or(scenario.seed),
            config,
            robot,
            goal: None,
            directives: Vec::new(),
            costmap,
            path: None,
            phase: Phase::Idle,
            fault: None,
            tick: 0,
            since_plan: 0,
            no_path_streak: 0,
            replans: 0,
            boxes: Vec::new(),
            points: Vec::new(),
            events: Vec::new(),
            trajectory: vec![TrajectorySample {
                tick: 0,
                x: robot.x,
                y: robot.y,
                theta: robot.theta,
            }],
            plan_available: Vec::new(),
            snapshots: Vec::new(),
            scenario,
        })
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn config(&self) -> &MissionConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn tick_count(&self) -> u64 {
        self.tick
    }

    pub fn robot(&self) -> &RobotState {
        &self.robot
    }

    pub fn goal(&self) -> Option<[f64; 2]> {
        self.goal
    }

    pub fn directives(&self) -> &[LandmarkDirective] {
        &self.directives
    }

    pub fn costmap(&self) -> &Costmap {
        &self.costmap
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_ref()
    }

    pub fn fault(&self) -> Option<&Fault> {
        self.fault.as_ref()
    }

    pub fn camera(&self) -> &CameraModel {
        &self.camera
    }

    pub fn world(&self) -> &World {
        &self.world
    }

    fn accepts_commands(&self) -> Result<(), MissionError> {
        match self.phase {
            Phase::Idle | Phase::Running | Phase::NoPathStalled => Ok(()),
            p => Err(MissionError::NotAccepting(p)),
        }
    }

    /// Replaces the directives with the parse of `text`.
    pub fn inject_instruction(&mut self, text: &str) -> Result<&[LandmarkDirective], MissionError> {
        let directives = parse_instruction(&Instruction::new(text), &self.lexicon);
        self.inject_directives(text, directives)
    }

    /// Replaces the directives with ones extracted elsewhere (e.g. by a
    /// remote model) from `text`.
    pub fn inject_directives(
        &mut self,
        text: &str,
        directives: Vec<LandmarkDirective>,
    ) -> Result<&[LandmarkDirective], MissionError> {
        self.accepts_commands()?;
        self.events.push(Event {
            tick: self.tick,
            command: Command::Instruction {
                text: text.to_string(),
            },
            directives: Some(directives.clone()),
        });
        self.directives = directives;
        self.path = None;
        if self.phase == Phase::NoPathStalled {
            self.phase = Phase::Running;
            self.no_path_streak = 0;
        }
        Ok(&self.directives)
    }

    pub fn set_goal(&mut self, x: f64, y: f64) -> Result<(), MissionError> {
        self.accepts_commands()?;
        if !(x.is_finite() && y.is_finite()) || !self.world.bounds.contains(x, y) {
            return Err(MissionError::GoalOutOfBounds { x, y });
        }
        self.events.push(Event {
            tick: self.tick,
            command: Command::Goal { x, y },
            directives: None,
        });
        self.goal = Some([x, y]);
        self.path = None;
        self.no_path_streak = 0;
        self.phase = Phase::Running;
        Ok(())
    }

    pub fn apply(&mut self, command: &Command) -> Result<(), MissionError> {
        match command {
            Command::Instruction { text } => self.inject_instruction(text).map(|_| ()),
            Command::Goal { x, y } => self.set_goal(*x, *y),
        }
    }

    fn finish(&mut self, phase: Phase, fault: Option<Fault>) {
        self.phase = phase;
        self.fault = fault;
        if self.snapshots.last().map(|s| s.tick) != Some(self.tick) {
            self.snapshots
                .push(CostmapSnapshot::new(self.tick, &self.costmap));
        }
    }

    fn remaining_path_blocked(&self) -> bool {
        let Some(path) = &self.path else {
            return false;
        };
        let nearest = path
            .waypoints
            .iter()
            .enumerate()
            .map(|(k, w)| (k, (w[0] - self.robot.x).hypot(w[1] - self.robot.y)))
            .fold(
                (0, f64::INFINITY),
                |best, cur| if cur.1 < best.1 { cur } else { best },
            )
            .0;
        path.cells[nearest..]
            .iter()
            .any(|&c| self.costmap.cost(c) >= LETHAL)
    }

    fn sense(&mut self) -> Result<(), CostmapError> {
        let scenario = &self.scenario;
        let cloud = lidar_scan(
            &self.world,
            &self.robot,
            &scenario.lidar,
            self.seed.wrapping_add(self.tick),
        );
        let view = camera_view(&self.world, &self.robot, &self.camera, &scenario.mount);
        let labels: Vec<String> = self.directives.iter().map(|d| d.label.clone()).collect();
        let noise = scenario
            .grounder_noise
            .with_seed(noise_seed(self.seed, self.tick));
        let boxes = ground_synthetic(&view, &labels, &self.camera, &noise);
        // labels come from the directives, so every box has one
        self.boxes = attach_attributes(&boxes, &self.directives).unwrap_or_default();
        let pose = self.robot.pose();
        let lidar_pose = scenario.lidar.lidar_to_world(&self.robot);
        let seg = if self.boxes.is_empty() {
            self.costmap = self.costmap.update_fallback(&cloud, &pose, &lidar_pose)?;
            SegmentedCloud::all_untraversable(cloud.len())
        } else {
            let seg = segment(&cloud, &self.boxes, &self.camera);
            let in_view: Vec<bool> = cloud
                .points
                .iter()
                .map(|p| {
                    self.camera
                        .project(p)
                        .is_ok_and(|s| self.camera.in_image(&s))
                })
                .collect();
            self.costmap =
                self.costmap
                    .update_in_view(&seg, &cloud, &pose, &lidar_pose, &in_view)?;
            seg
        };
        let mut tags = vec![false; cloud.len()];
        for &i in &seg.traversable {
            tags[i] = true;
        }
        self.points = cloud
            .points
            .iter()
            .zip(tags)
            .map(|(p, traversable)| {
                let (x, y) = lidar_pose.transform_point(p.x, p.y);
                TaggedPoint { x, y, traversable }
            })
            .collect();
        Ok(())
    }

    /// Runs one tick. Returns false when the mission is not running.
    pub fn tick(&mut self) -> bool {
        if self.phase != Phase::Running {
            return false;
        }
        let goal = self.goal.expect("running missions have a goal");
        if (self.robot.x - goal[0]).hypot(self.robot.y - goal[1]) <= self.config.threshold {
            self.finish(Phase::Reached, None);
            return true;
        }
        if self.tick >= self.config.max_ticks {
            let max_ticks = self.config.max_ticks;
            self.finish(Phase::Faulted, Some(Fault::TickBudget { max_ticks }));
            return true;
        }
        if let Err(e) = self.sense() {
            self.finish(
                Phase::Faulted,
                Some(Fault::Map {
                    message: e.to_string(),
                }),
            );
            return true;
        }

        self.since_plan += 1;
        if self.path.is_none()
            || self.since_plan >= self.config.replan_every
            || self.remaining_path_blocked()
        {
            self.since_plan = 0;
            self.replans += 1;
            // a lethal start cell is as good as no path
            self.path = plan(
                &self.costmap,
                [self.robot.x, self.robot.y],
                goal,
                &self.config.planner,
            )
            .ok()
            .flatten();
            if self.path.is_some() {
                self.no_path_streak = 0;
            } else {
                self.no_path_streak += 1;
            }
        }

        let mut outcome = None;
        if let Some(path) = &self.path {
            let permissions = traversal_permissions(&self.world, &self.directives);
            match step_robot(&self.world, &self.robot, path, self.config.dt, &permissions) {
                Ok(next) => self.robot = next,
                Err(fault) => outcome = Some(fault),
            }
        }

        self.tick += 1;
        self.plan_available.push(self.path.is_some());
        self.trajectory.push(TrajectorySample {
            tick: self.tick,
            x: self.robot.x,
            y: self.robot.y,
            theta: self.robot.theta,
        });
        if self.config.snapshot_every > 0 && self.tick.is_multiple_of(self.config.snapshot_every) {
            self.snapshots
                .push(CostmapSnapshot::new(self.tick, &self.costmap));
        }
        if let Some(fault) = outcome {
            self.finish(Phase::Faulted, Some(Fault::Collision(fault)));
        } else if self.no_path_streak >= self.config.stall_limit {
            self.finish(Phase::NoPathStalled, None);
        }
        true
    }

    /// Ticks until the mission leaves [`Phase::Running`].
    pub fn run_to_end(&mut self) {
        while self.tick() {}
    }

    pub fn state(&self) -> MissionState {
        MissionState {
            tick: self.tick,
            phase: self.phase,
            robot: self.robot,
            goal: self.goal,
            path: self.path.as_ref().map(|p| p.waypoints.clone()),
            directives: self.directives.clone(),
            boxes: self.boxes.clone(),
            points: self.points.clone(),
            fault: self.fault.clone(),
        }
    }

    pub fn report(&self) -> MissionReport {
        MissionReport {
            scenario: self.scenario.name.clone(),
            seed: self.seed,
            config: self.config,
            goal: self.goal,
            phase: self.phase,
            fault: self.fault.clone(),
            ticks: self.tick,
            replans: self.replans,
            events: self.events.clone(),
            trajectory: self.trajectory.clone(),
            plan_available: self.plan_available.clone(),
            grid: *self.costmap.spec(),
            snapshots: self.snapshots.clone(),
        }
    }
}

/// Parse once, set the goal (the scenario default when `None`) and run to a
/// terminal phase.
pub fn run_mission(
    scenario: &Scenario,
    instruction: &str,
    goal: Option<[f64; 2]>,
    config: &MissionConfig,
) -> Result<MissionReport, MissionError> {
    let mut mission = Mission::new(scenario.clone(), *config)?;
    mission.inject_instruction(instruction)?;
    let [x, y] = goal.unwrap_or(scenario.goal);
    mission.set_goal(x, y)?;
    mission.run_to_end();
    Ok(mission.report())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduledCommand {
    pub tick: u64,
    #[serde(flatten)]
    pub command: Command,
}

/// Runs a mission driven by commands applied at tick boundaries. A command
/// is applied once the mission reaches its tick, or as soon as the mission
/// stops running. Rejected commands are skipped.
pub fn run_schedule(
    scenario: &Scenario,
    config: &MissionConfig,
    schedule: &[ScheduledCommand],
) -> Result<MissionReport, MissionError> {
    let mut mission = Mission::new(scenario.clone(), *config)?;
    let mut pending: Vec<&ScheduledCommand> = schedule.iter().collect();
    pending.sort_by_key(|c| c.tick);
    let mut next = 0;
    loop {
        while next < pending.len()
            && (pending[next].tick <= mission.tick_count() || mission.phase() != Phase::Running)
        {
            let _ = mission.apply(&pending[next].command);
            next += 1;
        }
        if !mission.tick() && next >= pending.len() {
            break;
        }
    }
    Ok(mission.report())
}
