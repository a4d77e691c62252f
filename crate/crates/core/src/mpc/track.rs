use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TrackFile {
    centerline: Vec<[f64; 2]>,
    half_width: f64,
}

/// Closed centerline polyline with a constant half width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TrackFile", into = "TrackFile")]
pub struct Track {
    centerline: Vec<[f64; 2]>,
    half_width: f64,
    /// Arc length at each vertex; one extra entry for the closing vertex.
    cumulative: Vec<f64>,
}

impl TryFrom<TrackFile> for Track {
    type Error = Error;

    fn try_from(f: TrackFile) -> Result<Self> {
        Track::new(f.centerline, f.half_width)
    }
}

impl From<Track> for TrackFile {
    fn from(t: Track) -> Self {
        Self {
            centerline: t.centerline,
            half_width: t.half_width,
        }
    }
}

/// Nearest-segment projection of a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    /// Arc length in `[0, length)`.
    pub s: f64,
    /// Signed lateral offset, left positive.
    pub d: f64,
    pub segment: usize,
    pub tangent: [f64; 2],
}

impl Projection {
    pub fn normal(&self) -> [f64; 2] {
        [-self.tangent[1], self.tangent[0]]
    }
}

const DESK_OVAL: &str = include_str!("../../assets/tracks/desk_oval.json");

impl Track {
    pub fn new(centerline: Vec<[f64; 2]>, half_width: f64) -> Result<Self> {
        if centerline.len() < 3 {
            return Err(Error::InvalidParameter(format!(
                "track needs at least 3 vertices, got {}",
                centerline.len()
            )));
        }
        if !(half_width > 0.0) || !half_width.is_finite() {
            return Err(Error::InvalidParameter("track half_width must be > 0".into()));
        }
        if centerline.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter("track vertices must be finite".into()));
        }
        let m = centerline.len();
        let mut cumulative = Vec::with_capacity(m + 1);
        cumulative.push(0.0);
        for k in 0..m {
            let (a, b) = (centerline[k], centerline[(k + 1) % m]);
            let len = (b[0] - a[0]).hypot(b[1] - a[1]);
            if len == 0.0 {
                return Err(Error::InvalidParameter(format!("track vertices {k} and {} coincide", (k + 1) % m)));
            }
            cumulative.push(cumulative[k] + len);
        }
        Ok(Self {
            centerline,
            half_width,
            cumulative,
        })
    }

    /// Two straights of `straight` meters joined by semicircles of `radius`, counter-clockwise.
    pub fn oval(straight: f64, radius: f64, half_width: f64, arc_segments: usize) -> Result<Self> {
        if !(straight > 0.0) || !(radius > 0.0) || arc_segments == 0 {
            return Err(Error::InvalidParameter("oval needs positive straight, radius and arc segments".into()));
        }
        let pieces = (straight / 0.5).ceil().max(1.0) as usize;
        let mut pts = Vec::new();
        for k in 0..pieces {
            pts.push([straight * k as f64 / pieces as f64, 0.0]);
        }
        let arc = |pts: &mut Vec<[f64; 2]>, cx: f64, start: f64| {
            for k in 0..arc_segments {
                let a = start + std::f64::consts::PI * k as f64 / arc_segments as f64;
                pts.push([cx + radius * a.cos(), radius + radius * a.sin()]);
            }
        };
        arc(&mut pts, straight, -std::f64::consts::FRAC_PI_2);
        for k in 0..pieces {
            pts.push([straight * (1.0 - k as f64 / pieces as f64), 2.0 * radius]);
        }
        arc(&mut pts, 0.0, std::f64::consts::FRAC_PI_2);
        Self::new(pts, half_width)
    }

    /// Two 4 m straights, radius 1.5 m turns, 0.4 m half width.
    pub fn desk_oval() -> Self {
        Self::from_json(DESK_OVAL).expect("bundled track is valid")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn centerline(&self) -> &[[f64; 2]] {
        &self.centerline
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn length(&self) -> f64 {
        self.cumulative[self.centerline.len()]
    }

    /// Start pose: first vertex, facing along the first segment.
    pub fn start_pose(&self) -> [f64; 3] {
        let (a, b) = (self.centerline[0], self.centerline[1]);
        [a[0], a[1], (b[1] - a[1]).atan2(b[0] - a[0])]
    }

    /// Projects onto the nearest segment; exact ties go to the lower arc length.
    pub fn progress(&self, p: [f64; 2]) -> Projection {
        let m = self.centerline.len();
        let mut best: Option<(f64, Projection)> = None;
        for k in 0..m {
            let (a, b) = (self.centerline[k], self.centerline[(k + 1) % m]);
            let seg_len = self.cumulative[k + 1] - self.cumulative[k];
            let t = [(b[0] - a[0]) / seg_len, (b[1] - a[1]) / seg_len];
            let r = [p[0] - a[0], p[1] - a[1]];
            let along = (r[0] * t[0] + r[1] * t[1]).clamp(0.0, seg_len);
            let off = [r[0] - along * t[0], r[1] - along * t[1]];
            let dist2 = off[0] * off[0] + off[1] * off[1];
            if best.as_ref().is_none_or(|(d2, _)| dist2 < *d2) {
                let cross = t[0] * off[1] - t[1] * off[0];
                let d = if cross < 0.0 { -dist2.sqrt() } else { dist2.sqrt() };
                let mut s = self.cumulative[k] + along;
                if s >= self.length() {
                    s -= self.length();
                }
                best = Some((dist2, Projection { s, d, segment: k, tangent: t }));
            }
        }
        best.expect("track has segments").1
    }

    /// Shifts `s` by whole laps to land nearest `reference`.
    pub fn unwrap_s(&self, s: f64, reference: f64) -> f64 {
        let l = self.length();
        s + ((reference - s) / l).round() * l
    }
}
