//! `travnav` subcommands.

use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;
use travnav_core::costmap::{Costmap, CostmapError};
use travnav_core::geometry::{CameraError, CameraModel, LidarPoint};
use travnav_core::grounding::{
    ground_synthetic, remote_detect, EncodedImage, GrounderNoise, RemoteDetectError,
};
use travnav_core::instruction::{
    parse_instruction, remote_extract, Instruction, RemoteExtractError, VerbLexicon,
};
use travnav_core::planner::{plan, PlanError, PlannerConfig, DEFAULT_COST_WEIGHT};
use travnav_core::runtime::{Mission, MissionConfig, MissionError, MissionReport, Phase};
use travnav_core::segmentation::segment;
use travnav_core::simworld::camera_view;

use crate::io::{
    load_scenario, parse_boxes, parse_cloud, parse_tuple, read_bytes, read_text, InputError,
};
use crate::remote::{HttpDetectorClient, HttpModelClient};
use crate::service::{self, Op, ServiceConfig, ServiceError};

/// Exit status for NoPath outcomes.
pub const EXIT_NO_PATH: u8 = 3;
/// Exit status when a projected point is behind the camera.
pub const EXIT_BEHIND_CAMERA: u8 = 4;
/// Exit status for a mission that ended in a fault.
pub const EXIT_FAULTED: u8 = 5;

#[derive(Debug, Parser)]
#[command(
    name = "travnav",
    version,
    about = "Action-aware costmap navigation tools"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Extract (landmark, attribute) directives from an instruction.
    Parse {
        text: String,
        /// Verb lexicon JSON file.
        #[arg(long)]
        lexicon: Option<PathBuf>,
        /// Ask the model at MODEL_ENDPOINT instead of the built-in parser.
        #[arg(long)]
        remote: bool,
    },
    /// Boxes for the requested labels as seen from a pose.
    Ground {
        #[arg(long)]
        scenario: String,
        /// x,y,theta in meters and radians.
        #[arg(long, allow_hyphen_values = true)]
        pose: String,
        #[arg(long)]
        labels: String,
        /// Send this image to the detector at DETECTOR_ENDPOINT instead of
        /// grounding the simulated scene.
        #[arg(long)]
        image: Option<PathBuf>,
    },
    /// Project a LiDAR-frame point to pixels.
    Project {
        #[arg(long)]
        calib: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        point: String,
    },
    /// Split a cloud into traversable and untraversable indices.
    Segment {
        #[arg(long)]
        calib: PathBuf,
        #[arg(long)]
        cloud: PathBuf,
        #[arg(long)]
        boxes: PathBuf,
    },
    /// Run a scenario for N ticks and export the master costmap.
    Costmap {
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        steps: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "")]
        instruction: String,
        #[arg(long, allow_hyphen_values = true)]
        goal: Option<String>,
    },
    /// A* over an exported costmap.
    Plan {
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        meta: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        start: String,
        #[arg(long, allow_hyphen_values = true)]
        goal: String,
        #[arg(long, default_value_t = DEFAULT_COST_WEIGHT)]
        cost_weight: f64,
    },
    /// Run a mission headless or behind the live service.
    Sim(SimArgs),
}

#[derive(Debug, Args)]
pub struct SimArgs {
    #[arg(long)]
    pub scenario: String,
    #[arg(long, default_value = "")]
    pub instruction: String,
    /// Defaults to the scenario goal.
    #[arg(long, allow_hyphen_values = true)]
    pub goal: Option<String>,
    /// Run to completion without a service (the default without --serve).
    #[arg(long)]
    pub headless: bool,
    /// Serve the mission over HTTP/WebSocket at this address.
    #[arg(long)]
    pub serve: Option<SocketAddr>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Write report.json, trajectory.csv and costmap snapshots here.
    #[arg(long)]
    pub record: Option<PathBuf>,
    #[arg(long)]
    pub max_ticks: Option<u64>,
    /// Parse the instruction with the model at MODEL_ENDPOINT.
    #[arg(long)]
    pub remote: bool,
    /// Service tick rate; defaults to real time.
    #[arg(long)]
    pub tick_hz: Option<f64>,
    #[arg(long, default_value_t = service::DEFAULT_STREAM_HZ)]
    pub stream_hz: f64,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Input(#[from] InputError),
    #[error(transparent)]
    Camera(#[from] CameraError),
    #[error(transparent)]
    Costmap(#[from] CostmapError),
    #[error(transparent)]
    Mission(#[from] MissionError),
    #[error(transparent)]
    RemoteExtract(#[from] RemoteExtractError),
    #[error(transparent)]
    RemoteDetect(#[from] RemoteDetectError),
    #[error(transparent)]
    Service(#[from] ServiceError),
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

fn labels(list: &str) -> Vec<String> {
    list.split(',')
        .map(|l| l.trim().to_string())
        .filter(|l| !l.is_empty())
        .collect()
}

fn model_client() -> Result<HttpModelClient, CliError> {
    HttpModelClient::from_env()
        .ok_or_else(|| CliError::Usage("--remote needs MODEL_ENDPOINT".into()))
}

/// Runs one command, writing its normal output to `out`. Returns the exit
/// status.
pub fn run(cli: Cli, out: &mut dyn Write) -> Result<u8, CliError> {
    match cli.command {
        Cmd::Parse {
            text,
            lexicon,
            remote,
        } => {
            let instr = Instruction::new(text);
            let directives = if remote {
                remote_extract(&instr, &model_client()?)?
            } else {
                let lexicon = match lexicon {
                    Some(p) => VerbLexicon::from_json(&read_text(&p)?)
                        .map_err(|e| CliError::Usage(e.to_string()))?,
                    None => VerbLexicon::default(),
                };
                parse_instruction(&instr, &lexicon)
            };
            for d in directives {
                writeln!(out, "{}\t{}", d.label, d.attribute.as_u8())?;
            }
            Ok(0)
        }
        Cmd::Ground {
            scenario,
            pose,
            labels: list,
            image,
        } => {
            let scenario = load_scenario(&scenario)?;
            let labels = labels(&list);
            let boxes = match image {
                Some(path) => {
                    let client = HttpDetectorClient::from_env()
                        .ok_or_else(|| CliError::Usage("--image needs DETECTOR_ENDPOINT".into()))?;
                    let image = EncodedImage {
                        bytes: read_bytes(&path)?,
                        width: scenario.camera.image_w,
                        height: scenario.camera.image_h,
                    };
                    remote_detect(&image, &labels, &client)?
                }
                None => {
                    let [x, y, theta] = parse_tuple::<3>("pose", &pose)?;
                    let mut robot = scenario.start_state();
                    (robot.x, robot.y, robot.theta) = (x, y, theta);
                    let cam = scenario.camera_model()?;
                    let view = camera_view(&scenario.world(), &robot, &cam, &scenario.mount);
                    ground_synthetic(&view, &labels, &cam, &GrounderNoise::none())
                }
            };
            for b in boxes {
                let bb = b.bbox;
                writeln!(
                    out,
                    "{} {:.3} {:.3} {:.3} {:.3}",
                    b.label, bb.cx, bb.cy, bb.w, bb.h
                )?;
            }
            Ok(0)
        }
        Cmd::Project { calib, point } => {
            let cam = CameraModel::from_json(&read_text(&calib)?)?;
            let [x, y, z] = parse_tuple::<3>("point", &point)?;
            match cam.project(&LidarPoint::new(x, y, z)) {
                Ok(s) => {
                    writeln!(out, "{} {} {}", s.u, s.v, s.depth)?;
                    Ok(0)
                }
                Err(e) => {
                    writeln!(out, "behind_camera {}", e.depth)?;
                    Ok(EXIT_BEHIND_CAMERA)
                }
            }
        }
        Cmd::Segment {
            calib,
            cloud,
            boxes,
        } => {
            let cam = CameraModel::from_json(&read_text(&calib)?)?;
            let cloud = parse_cloud(&read_text(&cloud)?)?;
            let boxes = parse_boxes(&read_text(&boxes)?)?;
            let seg = segment(&cloud, &boxes, &cam);
            let join = |v: &[usize]| {
                v.iter()
                    .map(|i| i.to_string())
                    .collect::<Vec<_>>()
                    .join(" ")
            };
            writeln!(out, "traversable: {}", join(&seg.traversable))?;
            writeln!(out, "untraversable: {}", join(&seg.untraversable))?;
            Ok(0)
        }
        Cmd::Costmap {
            scenario,
            steps,
            out: path,
            instruction,
            goal,
        } => {
            let scenario = load_scenario(&scenario)?;
            let goal = match goal {
                Some(g) => parse_tuple::<2>("goal", &g)?,
                None => scenario.goal,
            };
            let mut mission = Mission::new(scenario, MissionConfig::default())?;
            mission.inject_instruction(&instruction)?;
            mission.set_goal(goal[0], goal[1])?;
            for _ in 0..steps {
                if !mission.tick() {
                    break;
                }
            }
            let map = mission.costmap();
            std::fs::write(&path, map.to_pgm())?;
            let meta = path.with_extension("meta");
            std::fs::write(&meta, map.meta_json())?;
            writeln!(
                out,
                "{} after {} ticks ({:?}); metadata in {}",
                path.display(),
                mission.tick_count(),
                mission.phase(),
                meta.display()
            )?;
            Ok(0)
        }
        Cmd::Plan {
            map,
            meta,
            start,
            goal,
            cost_weight,
        } => {
            let map = Costmap::from_pgm(&read_bytes(&map)?, &read_text(&meta)?)?;
            let start = parse_tuple::<2>("start", &start)?;
            let goal = parse_tuple::<2>("goal", &goal)?;
            let config = PlannerConfig { cost_weight };
            match plan(&map, start, goal, &config) {
                Ok(Some(path)) => {
                    for [x, y] in path.waypoints {
                        writeln!(out, "{x:.3} {y:.3}")?;
                    }
                    Ok(0)
                }
                Ok(None) => {
                    eprintln!("no path");
                    Ok(EXIT_NO_PATH)
                }
                Err(e @ PlanError::StartInLethal { .. }) => {
                    eprintln!("no path: {e}");
                    Ok(EXIT_NO_PATH)
                }
                Err(e) => Err(CliError::Usage(e.to_string())),
            }
        }
        Cmd::Sim(args) => sim(args, out),
    }
}

fn exit_for(phase: Phase) -> u8 {
    match phase {
        Phase::Reached => 0,
        Phase::NoPathStalled => EXIT_NO_PATH,
        _ => EXIT_FAULTED,
    }
}

/// Writes `report.json`, `trajectory.csv`, `costmap.meta` and one
/// `costmap_<tick>.pgm` per snapshot into `dir`.
pub fn record(report: &MissionReport, dir: &Path) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("report.json"), report.to_json())?;
    std::fs::write(dir.join("trajectory.csv"), report.trajectory_csv())?;
    std::fs::write(
        dir.join("costmap.meta"),
        serde_json::to_string_pretty(&report.grid).expect("grid spec serializes"),
    )?;
    for snap in &report.snapshots {
        std::fs::write(
            dir.join(format!("costmap_{:06}.pgm", snap.tick)),
            snap.to_pgm(&report.grid),
        )?;
    }
    Ok(())
}

fn sim(args: SimArgs, out: &mut dyn Write) -> Result<u8, CliError> {
    let scenario = load_scenario(&args.scenario)?;
    let goal = match &args.goal {
        Some(g) => parse_tuple::<2>("goal", g)?,
        None => scenario.goal,
    };
    let mut config = MissionConfig {
        seed: args.seed,
        ..Default::default()
    };
    if let Some(m) = args.max_ticks {
        config.max_ticks = m;
    }
    let directives = if args.remote {
        Some(remote_extract(
            &Instruction::new(args.instruction.as_str()),
            &model_client()?,
        )?)
    } else {
        None
    };

    if let Some(addr) = args.serve {
        if args.headless {
            return Err(CliError::Usage(
                "--headless and --serve are exclusive".into(),
            ));
        }
        let mut cfg = ServiceConfig {
            mission: config,
            stream_hz: args.stream_hz,
            initial: scenario.name.clone(),
            ..Default::default()
        };
        if let Some(hz) = args.tick_hz {
            cfg.tick_hz = Some(hz);
        }
        cfg.register(scenario);
        let rt = tokio::runtime::Runtime::new()?;
        return rt.block_on(async {
            let model = HttpModelClient::from_env().map(|c| Arc::new(c) as _);
            let handle = service::spawn(addr, cfg, model).await?;
            let app = handle.app.clone();
            let fail = |e: service::ApiError| CliError::Usage(e.message);
            app.command(Op::Pause).await.map_err(fail)?;
            match directives {
                Some(d) => app
                    .command(Op::Directives {
                        text: args.instruction.clone(),
                        directives: d,
                    })
                    .await
                    .map(|_| ()),
                None => app
                    .instruct(args.instruction.clone(), false)
                    .await
                    .map(|_| ()),
            }
            .map_err(fail)?;
            app.command(Op::Goal {
                x: goal[0],
                y: goal[1],
            })
            .await
            .map_err(fail)?;
            app.command(Op::Resume).await.map_err(fail)?;
            writeln!(out, "serving on http://{}", handle.addr)?;
            out.flush()?;
            handle.run_until_ctrl_c().await?;
            Ok(0)
        });
    }

    let mut mission = Mission::new(scenario, config)?;
    match directives {
        Some(d) => mission
            .inject_directives(&args.instruction, d)
            .map(|_| ())?,
        None => mission.inject_instruction(&args.instruction).map(|_| ())?,
    }
    mission.set_goal(goal[0], goal[1])?;
    mission.run_to_end();
    let report = mission.report();
    if let Some(dir) = &args.record {
        record(&report, dir)?;
    }
    let last = report.trajectory.last();
    writeln!(
        out,
        "{} seed {}: {:?} after {} ticks, {} replans, final pose ({:.3}, {:.3})",
        report.scenario,
        report.seed,
        report.phase,
        report.ticks,
        report.replans,
        last.map_or(f64::NAN, |t| t.x),
        last.map_or(f64::NAN, |t| t.y),
    )?;
    if let Some(fault) = &report.fault {
        writeln!(
            out,
            "fault: {}",
            serde_json::to_string(fault).expect("fault serializes")
        )?;
    }
    Ok(exit_for(report.phase))
}
