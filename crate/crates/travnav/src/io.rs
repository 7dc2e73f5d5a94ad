//! Text formats read and written by the command line tools.

use std::path::Path;

use thiserror::Error;
use travnav_core::geometry::{BoundingBox, LidarPoint};
use travnav_core::grounding::AttributedBox;
use travnav_core::instruction::Attribute;
use travnav_core::scenario::{Scenario, ScenarioError};
use travnav_core::segmentation::PointCloud;

#[derive(Debug, Error)]
pub enum InputError {
    #[error("{what}: expected {want} comma-separated numbers, got `{got}`")]
    Tuple {
        what: &'static str,
        want: usize,
        got: String,
    },
    #[error("line {line}: {reason}")]
    Line { line: usize, reason: String },
    #[error("{path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
}

/// Parses `a,b,c` into exactly `N` finite numbers.
pub fn parse_tuple<const N: usize>(what: &'static str, text: &str) -> Result<[f64; N], InputError> {
    let err = || InputError::Tuple {
        what,
        want: N,
        got: text.to_string(),
    };
    let vals: Vec<f64> = text
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| err())?;
    if vals.len() != N || vals.iter().any(|v| !v.is_finite()) {
        return Err(err());
    }
    let mut out = [0.0; N];
    out.copy_from_slice(&vals);
    Ok(out)
}

pub fn read_text(path: &Path) -> Result<String, InputError> {
    std::fs::read_to_string(path).map_err(|source| InputError::Read {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>, InputError> {
    std::fs::read(path).map_err(|source| InputError::Read {
        path: path.display().to_string(),
        source,
    })
}

/// A scenario file, or the name of a built-in scenario.
pub fn load_scenario(arg: &str) -> Result<Scenario, InputError> {
    let path = Path::new(arg);
    if path.exists() {
        return Ok(Scenario::from_json(&read_text(path)?)?);
    }
    Ok(Scenario::builtin(arg)?)
}

fn significant(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

/// Whitespace-separated `x y z` lines.
pub fn parse_cloud(text: &str) -> Result<PointCloud, InputError> {
    let mut points = Vec::new();
    for (line, l) in significant(text) {
        let vals: Vec<f64> = l
            .split_whitespace()
            .map(str::parse)
            .collect::<Result<_, _>>()
            .map_err(|e| InputError::Line {
                line,
                reason: format!("{e}"),
            })?;
        let [x, y, z] = vals[..] else {
            return Err(InputError::Line {
                line,
                reason: format!("expected `x y z`, got {} fields", vals.len()),
            });
        };
        points.push(LidarPoint::new(x, y, z));
    }
    Ok(PointCloud::new(points, 0.0))
}

/// `label cx cy w h attr` lines. Labels may contain spaces; the last five
/// fields are numeric.
pub fn parse_boxes(text: &str) -> Result<Vec<AttributedBox>, InputError> {
    let mut boxes = Vec::new();
    for (line, l) in significant(text) {
        let bad = |reason: String| InputError::Line { line, reason };
        let fields: Vec<&str> = l.split_whitespace().collect();
        if fields.len() < 6 {
            return Err(bad("expected `label cx cy w h attr`".into()));
        }
        let (label, nums) = fields.split_at(fields.len() - 5);
        let v: Vec<f64> = nums[..4]
            .iter()
            .map(|s| s.parse())
            .collect::<Result<_, _>>()
            .map_err(|e| bad(format!("{e}")))?;
        let attribute = match nums[4] {
            "0" => Attribute::Untraversable,
            "1" => Attribute::Traversable,
            other => return Err(bad(format!("attribute must be 0 or 1, got `{other}`"))),
        };
        let bbox = BoundingBox::new(v[0], v[1], v[2], v[3])
            .ok_or_else(|| bad("box needs finite values and positive size".into()))?;
        boxes.push(AttributedBox {
            label: label.join(" "),
            bbox,
            attribute,
        });
    }
    Ok(boxes)
}
