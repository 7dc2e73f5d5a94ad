use travnav_core::costmap::LETHAL;
use travnav_core::geometry::CameraModel;
use travnav_core::grounding::{silhouette_box, Silhouette};
use travnav_core::planar::Polygon;
use travnav_core::runtime::{
    run_mission, run_schedule, Command, Mission, MissionConfig, Phase, ScheduledCommand,
};
use travnav_core::scenario::Scenario;
use travnav_core::simworld::{camera_view, CAMERA_NEAR};

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const CURTAIN_INSTRUCTION: &str = "Go through the curtain and watch out the chair.";

fn scenario(name: &str) -> Scenario {
    Scenario::builtin(name).unwrap()
}

fn min_clearance(trajectory: &[[f64; 2]], poly: &Polygon) -> f64 {
    let mut best = f64::INFINITY;
    for seg in trajectory.windows(2) {
        for k in 0..=10 {
            let t = k as f64 / 10.0;
            let p = [
                seg[0][0] + t * (seg[1][0] - seg[0][0]),
                seg[0][1] + t * (seg[1][1] - seg[0][1]),
            ];
            best = best.min(poly.distance(p[0], p[1]));
        }
    }
    best
}

#[test]
fn stalled_mission_recovers_after_instruction() {
    let s = scenario("curtain_room");
    let cfg = MissionConfig::default();
    let mut m = Mission::new(s.clone(), cfg).unwrap();
    m.set_goal(s.goal[0], s.goal[1]).unwrap();
    m.run_to_end();
    assert_eq!(m.phase(), Phase::NoPathStalled);

    m.inject_instruction("pass through the curtain").unwrap();
    assert_eq!(m.phase(), Phase::Running);
    let mut found = false;
    for _ in 0..cfg.replan_every {
        m.tick();
        if m.path().is_some() {
            found = true;
            break;
        }
    }
    assert!(
        found,
        "no path within {} ticks of the instruction",
        cfg.replan_every
    );
    m.run_to_end();
    assert_eq!(m.phase(), Phase::Reached);
}

#[test]
fn absent_object_changes_nothing_but_directives() {
    let s = scenario("curtain_room");
    let cfg = MissionConfig {
        max_ticks: 120,
        ..Default::default()
    };
    let blind = run_mission(&s, "", None, &cfg).unwrap();
    let piano = run_mission(&s, "avoid the piano", None, &cfg).unwrap();
    assert_eq!(piano.events[0].directives.as_ref().unwrap().len(), 1);
    assert_eq!(piano.phase, blind.phase);
    assert_eq!(piano.trajectory, blind.trajectory);
    assert_eq!(piano.plan_available, blind.plan_available);
    assert_eq!(piano.snapshots, blind.snapshots);
}

#[test]
fn demoting_the_curtain_mid_crossing_closes_it() {
    let s = scenario("curtain_room");
    let mut m = Mission::new(s.clone(), MissionConfig::default()).unwrap();
    m.inject_instruction(CURTAIN_INSTRUCTION).unwrap();
    m.set_goal(s.goal[0], s.goal[1]).unwrap();
    while m.robot().x < 3.6 {
        assert!(m.tick(), "mission ended before reaching the curtain");
    }
    m.inject_instruction("avoid the curtain").unwrap();
    let curtain = s.object("curtain").unwrap().footprint.clone();
    let spec = *m.costmap().spec();
    let mut lethal_curtain_seen = false;
    while m.tick() {
        let map = m.costmap();
        let curtain_cells: Vec<usize> = (0..spec.len())
            .filter(|&k| {
                let (x, y) = spec.cell_center(spec.cell_of(k));
                curtain.contains(x, y)
            })
            .filter(|&k| map.master()[k] >= LETHAL)
            .collect();
        lethal_curtain_seen |= !curtain_cells.is_empty();
        if let Some(path) = m.path() {
            let robot = m.robot();
            let ahead = path
                .waypoints
                .iter()
                .position(|w| (w[0] - robot.x).hypot(w[1] - robot.y) < 0.1)
                .unwrap_or(0);
            for c in &path.cells[ahead..] {
                assert!(
                    !curtain_cells.contains(&spec.index(*c)),
                    "tick {}: path crosses a lethal curtain cell",
                    m.tick_count()
                );
            }
        }
    }
    assert!(lethal_curtain_seen);
    assert_ne!(m.phase(), Phase::Reached);
    assert!(
        m.robot().x < 4.1,
        "robot crossed a curtain it was told to avoid"
    );
}

#[test]
fn mrc_ward_keeps_clear_of_the_warning_sign() {
    let s = scenario("mrc_ward");
    let r = run_mission(
        &s,
        "Go through the curtain and watch out the warning sign.",
        None,
        &MissionConfig::default(),
    )
    .unwrap();
    assert_eq!(r.phase, Phase::Reached);
    assert_eq!(r.fault, None);
    let traj: Vec<[f64; 2]> = r.trajectory.iter().map(|t| [t.x, t.y]).collect();
    let sign = &s.object("warning sign").unwrap().footprint;
    let clearance = min_clearance(&traj, sign);
    assert!(clearance >= s.inflation_radius, "clearance {clearance}");
}

#[test]
fn schedule_matches_direct_run() {
    let s = scenario("grass_field");
    let cfg = MissionConfig::default();
    let direct = run_mission(&s, "cross the grass and avoid the chair", None, &cfg).unwrap();
    let scheduled = run_schedule(
        &s,
        &cfg,
        &[
            ScheduledCommand {
                tick: 0,
                command: Command::Instruction {
                    text: "cross the grass and avoid the chair".into(),
                },
            },
            ScheduledCommand {
                tick: 0,
                command: Command::Goal {
                    x: s.goal[0],
                    y: s.goal[1],
                },
            },
        ],
    )
    .unwrap();
    assert_eq!(direct.to_json(), scheduled.to_json());
    assert_eq!(direct.phase, Phase::Reached);
}

#[test]
fn late_instruction_in_schedule_is_logged_at_its_tick() {
    let s = scenario("curtain_room");
    let cfg = MissionConfig::default();
    let r = run_schedule(
        &s,
        &cfg,
        &[
            ScheduledCommand {
                tick: 0,
                command: Command::Goal {
                    x: s.goal[0],
                    y: s.goal[1],
                },
            },
            ScheduledCommand {
                tick: 15,
                command: Command::Instruction {
                    text: CURTAIN_INSTRUCTION.into(),
                },
            },
        ],
    )
    .unwrap();
    assert_eq!(r.events.len(), 2);
    assert_eq!(r.events[1].tick, 15);
    assert_eq!(r.phase, Phase::Reached);
}

/// Dense re-sampling of each prism edge at 0.1 px, clipped at the near plane.
fn dense_aabb(cam: &CameraModel, edges: &[(Vector3<f64>, Vector3<f64>)]) -> Option<[f64; 4]> {
    let mut b = [
        f64::INFINITY,
        f64::INFINITY,
        f64::NEG_INFINITY,
        f64::NEG_INFINITY,
    ];
    for &(a, c) in edges {
        let (lo, hi) = if a.z >= CAMERA_NEAR { (a, c) } else { (c, a) };
        if lo.z < CAMERA_NEAR {
            continue;
        }
        let hi = if hi.z < CAMERA_NEAR {
            lo + (hi - lo) * ((CAMERA_NEAR - lo.z) / (hi.z - lo.z))
        } else {
            hi
        };
        let pa = cam.project_camera_point(&lo).unwrap();
        let pb = cam.project_camera_point(&hi).unwrap();
        let n = (((pa.u - pb.u).hypot(pa.v - pb.v) / 0.1).ceil() as usize).clamp(1, 200_000);
        for k in 0..=n {
            let p = lo + (hi - lo) * (k as f64 / n as f64);
            let Ok(s) = cam.project_camera_point(&p) else {
                continue;
            };
            b = [b[0].min(s.u), b[1].min(s.v), b[2].max(s.u), b[3].max(s.v)];
        }
    }
    let (w, h) = cam.image_size();
    (b[0] <= w as f64 && b[2] >= 0.0 && b[1] <= h as f64 && b[3] >= 0.0).then_some(b)
}

#[test]
fn camera_view_box_matches_dense_sampling() {
    let s = scenario("mrc_ward");
    let world = s.world();
    let cam = s.camera_model().unwrap();
    let (r, t) = s.mount.robot_to_optical();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut compared = 0;
    for _ in 0..60 {
        let mut robot = s.start_state();
        robot.x = rng.random_range(0.5..9.5);
        robot.y = rng.random_range(0.5..5.5);
        robot.theta = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        let pose = robot.pose();
        let view = camera_view(&world, &robot, &cam, &s.mount);
        for o in &world.objects {
            let to_cam = |x: f64, y: f64, z: f64| {
                let (lx, ly) = pose.inverse_transform_point(x, y);
                r * Vector3::new(lx, ly, z) + t
            };
            let [z0, z1] = o.height_band;
            let mut edges = Vec::new();
            for (a, b) in o.footprint.edges() {
                for z in [z0, z1] {
                    edges.push((to_cam(a[0], a[1], z), to_cam(b[0], b[1], z)));
                }
                edges.push((to_cam(a[0], a[1], z0), to_cam(a[0], a[1], z1)));
            }
            let dense = dense_aabb(&cam, &edges);
            let got = view
                .silhouettes
                .iter()
                .find(|sil: &&Silhouette| sil.label == o.label)
                .and_then(|sil| silhouette_box(sil, &cam));
            match (got, dense) {
                (Some(b), Some(o)) => {
                    let tol = 1e-6 * (1.0 + o.iter().fold(0.0f64, |m, v| m.max(v.abs())));
                    if o[2] > o[0] && o[3] > o[1] {
                        assert!(
                            (b.min_u() - o[0]).abs() <= tol,
                            "min_u {} vs {}",
                            b.min_u(),
                            o[0]
                        );
                        assert!((b.min_v() - o[1]).abs() <= tol);
                        assert!((b.max_u() - o[2]).abs() <= tol);
                        assert!((b.max_v() - o[3]).abs() <= tol);
                        compared += 1;
                    }
                }
                (None, None) => {}
                (g, d) => panic!("visibility disagrees for {}: {:?} vs {:?}", o.label, g, d),
            }
        }
    }
    assert!(compared > 30, "only {compared} visible objects compared");
}
