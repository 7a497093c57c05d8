//! 2D landmark sets and their file formats.
//!
//! JSON: `{"scheme": "mpie68", "points": [{"id": 0, "x": .., "y": .., "visible": true}, ..]}`.
//! The whitespace `pts` text format (`version:`/`n_points:` header, points in
//! braces) is read-only; its points get ids `0..n` and are all visible.

use std::fmt;
use std::io::BufRead;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::projection::Point2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    /// 21-point AFLW annotation.
    Aflw21,
    /// 68-point Multi-PIE annotation.
    Mpie68,
}

impl Scheme {
    pub fn count(self) -> usize {
        match self {
            Scheme::Aflw21 => 21,
            Scheme::Mpie68 => 68,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Aflw21 => "aflw21",
            Scheme::Mpie68 => "mpie68",
        }
    }

    pub fn from_count(n: usize) -> Option<Scheme> {
        match n {
            21 => Some(Scheme::Aflw21),
            68 => Some(Scheme::Mpie68),
            _ => None,
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "aflw21" => Ok(Scheme::Aflw21),
            "mpie68" => Ok(Scheme::Mpie68),
            _ => Err(Error::InvalidArgument(format!("unknown landmark scheme {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Landmark {
    pub id: u32,
    pub x: f64,
    pub y: f64,
    #[serde(default = "default_visible")]
    pub visible: bool,
}

fn default_visible() -> bool {
    true
}

impl Landmark {
    pub fn point(&self) -> Point2 {
        Point2::new(self.x, self.y)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandmarkSet2D {
    pub scheme: Scheme,
    pub points: Vec<Landmark>,
}

impl LandmarkSet2D {
    /// Builds a set with ids `0..n` from points and visibility flags.
    pub fn from_points(scheme: Scheme, pts: &[Point2], visible: &[bool]) -> Result<Self> {
        if pts.len() != visible.len() {
            return Err(Error::LengthMismatch {
                what: "visibility flags",
                expected: pts.len(),
                got: visible.len(),
            });
        }
        let points = pts
            .iter()
            .zip(visible)
            .enumerate()
            .map(|(i, (p, &v))| Landmark {
                id: i as u32,
                x: p.x,
                y: p.y,
                visible: v,
            })
            .collect();
        let set = LandmarkSet2D { scheme, points };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for p in &self.points {
            if !seen.insert(p.id) {
                return Err(Error::InvalidArgument(format!("duplicate landmark id {}", p.id)));
            }
            if !(p.x.is_finite() && p.y.is_finite()) {
                return Err(Error::InvalidArgument(format!("landmark {} not finite", p.id)));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn positions(&self) -> Vec<Point2> {
        self.points.iter().map(Landmark::point).collect()
    }

    pub fn get(&self, id: u32) -> Option<&Landmark> {
        self.points.iter().find(|p| p.id == id)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let set: LandmarkSet2D = serde_json::from_str(s)?;
        set.validate()?;
        Ok(set)
    }

    /// Reads `pts` text: optional `version:` / `n_points:` header lines,
    /// optional braces, then one `x y` pair per line.
    pub fn read_pts<R: BufRead>(r: R, path: &Path) -> Result<Self> {
        let mut pts = Vec::new();
        let mut declared = None;
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            let t = line.trim();
            let err = |msg: String| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg,
            };
            if t.is_empty() || t == "{" || t == "}" || t.starts_with("version") || t.starts_with('#') {
                continue;
            }
            if let Some(rest) = t.strip_prefix("n_points:") {
                declared = Some(
                    rest.trim()
                        .parse::<usize>()
                        .map_err(|e| err(format!("n_points: {e}")))?,
                );
                continue;
            }
            let nums: Vec<f64> = t
                .split_whitespace()
                .map(|v| v.parse::<f64>().map_err(|e| err(format!("{v:?}: {e}"))))
                .collect::<Result<_>>()?;
            if nums.len() != 2 {
                return Err(err(format!("expected 2 numbers, found {}", nums.len())));
            }
            pts.push(Point2::new(nums[0], nums[1]));
        }
        if let Some(n) = declared {
            if n != pts.len() {
                return Err(Error::LengthMismatch {
                    what: "pts points",
                    expected: n,
                    got: pts.len(),
                });
            }
        }
        let scheme = Scheme::from_count(pts.len()).ok_or_else(|| {
            Error::InvalidArgument(format!("pts file has {} points; expected 21 or 68", pts.len()))
        })?;
        LandmarkSet2D::from_points(scheme, &pts, &vec![true; pts.len()])
    }

    /// Loads JSON, or `pts` text when the extension is `.pts`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if path.extension().is_some_and(|e| e == "pts") {
            let f = std::io::BufReader::new(std::fs::File::open(path)?);
            LandmarkSet2D::read_pts(f, path)
        } else {
            LandmarkSet2D::from_json(&std::fs::read_to_string(path)?)
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }
}
