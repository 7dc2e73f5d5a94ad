use std::path::Path;
use std::process::{Command, Output};

use travnav_core::geometry::CameraModel;
use travnav_core::runtime::{MissionReport, Phase};

fn travnav(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_travnav"))
        .args(args)
        .env_remove("MODEL_ENDPOINT")
        .env_remove("DETECTOR_ENDPOINT")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn calib(dir: &Path) -> String {
    let path = dir.join("calib.json");
    std::fs::write(&path, CameraModel::default_synthetic().to_json()).unwrap();
    path.display().to_string()
}

#[test]
fn parse_prints_label_and_attribute() {
    let o = travnav(&["parse", "Go through the curtain, and watch out the chair."]);
    assert!(o.status.success());
    assert_eq!(stdout(&o), "curtain\t1\nchair\t0\n");
    let o = travnav(&["parse", ""]);
    assert_eq!(stdout(&o), "");
}

#[test]
fn parse_remote_without_endpoint_is_an_error() {
    let o = travnav(&["parse", "--remote", "go through the curtain"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("MODEL_ENDPOINT"));
}

#[test]
fn ground_lists_visible_boxes() {
    let o = travnav(&[
        "ground",
        "--scenario",
        "curtain_room",
        "--pose",
        "1.5,3,0",
        "--labels",
        "curtain,chair,piano",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    let labels: Vec<&str> = out.lines().map(|l| l.split(' ').next().unwrap()).collect();
    assert!(
        labels.contains(&"curtain") && labels.contains(&"chair"),
        "{out}"
    );
    assert!(!labels.contains(&"piano"));
    for line in out.lines() {
        let nums: Vec<f64> = line
            .split(' ')
            .skip(1)
            .map(|v| v.parse().unwrap())
            .collect();
        assert_eq!(nums.len(), 4);
        assert!(nums[2] > 0.0 && nums[3] > 0.0);
    }
    // facing away from everything
    let o = travnav(&[
        "ground",
        "--scenario",
        "curtain_room",
        "--pose",
        "1.5,3,3.14159",
        "--labels",
        "curtain",
    ]);
    assert_eq!(stdout(&o), "");
}

#[test]
fn project_and_behind_camera() {
    let dir = tempfile::tempdir().unwrap();
    let calib = calib(dir.path());
    let o = travnav(&["project", "--calib", &calib, "--point", "2,0,0"]);
    assert!(o.status.success());
    let v: Vec<f64> = stdout(&o)
        .split_whitespace()
        .map(|s| s.parse().unwrap())
        .collect();
    assert_eq!(v, vec![320.0, 240.0, 2.0]);
    let o = travnav(&["project", "--calib", &calib, "--point", "-1,0,0"]);
    assert_eq!(o.status.code(), Some(4));
    assert!(stdout(&o).starts_with("behind_camera"));
}

#[test]
fn segment_reports_indices_per_class() {
    let dir = tempfile::tempdir().unwrap();
    let calib = calib(dir.path());
    let cloud = dir.path().join("cloud.txt");
    // ahead (pixel 320,240), left of center, and behind
    std::fs::write(&cloud, "2 0 0\n2 1 0\n-2 0 0\n").unwrap();
    let boxes = dir.path().join("boxes.txt");
    std::fs::write(&boxes, "curtain 320 240 40 40 1\n").unwrap();
    let o = travnav(&[
        "segment",
        "--calib",
        &calib,
        "--cloud",
        cloud.to_str().unwrap(),
        "--boxes",
        boxes.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout(&o), "traversable: 0\nuntraversable: 1 2\n");

    std::fs::write(
        &boxes,
        "curtain 320 240 40 40 1\nmedical trolley 320 240 10 10 0\n",
    )
    .unwrap();
    let o = travnav(&[
        "segment",
        "--calib",
        &calib,
        "--cloud",
        cloud.to_str().unwrap(),
        "--boxes",
        boxes.to_str().unwrap(),
    ]);
    assert_eq!(stdout(&o), "traversable: \nuntraversable: 0 1 2\n");
}

#[test]
fn costmap_export_then_plan() {
    let dir = tempfile::tempdir().unwrap();
    let blind = dir.path().join("blind.pgm");
    let o = travnav(&[
        "costmap",
        "--scenario",
        "curtain_room",
        "--steps",
        "5",
        "--out",
        blind.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(std::fs::read(&blind)
        .unwrap()
        .starts_with(b"P5\n160 120\n255\n"));
    let meta = dir.path().join("blind.meta");
    let plan = |map: &Path, meta: &Path| {
        travnav(&[
            "plan",
            "--map",
            map.to_str().unwrap(),
            "--meta",
            meta.to_str().unwrap(),
            "--start",
            "1.5,3",
            "--goal",
            "6.5,3",
        ])
    };
    assert_eq!(plan(&blind, &meta).status.code(), Some(3));

    let aware = dir.path().join("aware.pgm");
    let o = travnav(&[
        "costmap",
        "--scenario",
        "curtain_room",
        "--steps",
        "5",
        "--instruction",
        "Go through the curtain and watch out the chair.",
        "--out",
        aware.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let o = plan(&aware, &dir.path().join("aware.meta"));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let pts: Vec<Vec<f64>> = stdout(&o)
        .lines()
        .map(|l| l.split(' ').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert!(pts.len() > 50);
    assert!((pts[0][0] - 1.525).abs() < 1e-9 && (pts.last().unwrap()[0] - 6.525).abs() < 1e-9);
}

#[test]
fn sim_records_a_mission() {
    let dir = tempfile::tempdir().unwrap();
    let rec = dir.path().join("run");
    let o = travnav(&[
        "sim",
        "--scenario",
        "curtain_room",
        "--instruction",
        "Go through the curtain and watch out the chair.",
        "--goal",
        "6.5,3",
        "--headless",
        "--seed",
        "9",
        "--record",
        rec.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("Reached"));
    let report =
        MissionReport::from_json(&std::fs::read_to_string(rec.join("report.json")).unwrap())
            .unwrap();
    assert_eq!(report.phase, Phase::Reached);
    assert_eq!(report.seed, 9);
    let csv = std::fs::read_to_string(rec.join("trajectory.csv")).unwrap();
    assert!(csv.starts_with("tick,x,y,θ\n"));
    assert_eq!(csv.lines().count(), report.trajectory.len() + 1);
    for snap in &report.snapshots {
        let pgm = std::fs::read(rec.join(format!("costmap_{:06}.pgm", snap.tick))).unwrap();
        assert!(pgm.starts_with(b"P5\n"));
    }
    assert!(rec.join("costmap.meta").exists());
}

#[test]
fn sim_without_directive_stalls_with_no_path_status() {
    let o = travnav(&["sim", "--scenario", "hospital_wall", "--headless"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stdout(&o).contains("NoPathStalled"));
}

#[test]
fn bad_arguments_fail_cleanly() {
    let o = travnav(&[
        "plan",
        "--map",
        "/nonexistent.pgm",
        "--meta",
        "/x",
        "--start",
        "0,0",
        "--goal",
        "1,1",
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("/nonexistent.pgm"));
    let o = travnav(&["sim", "--scenario", "no_such_place"]);
    assert_eq!(o.status.code(), Some(1));
    let o = travnav(&[
        "ground",
        "--scenario",
        "curtain_room",
        "--pose",
        "1,2",
        "--labels",
        "x",
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("pose"));
}
