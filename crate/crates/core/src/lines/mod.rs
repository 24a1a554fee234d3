//! Line-segment priors: text I/O, point/segment projection, and selection.

mod extract;

pub use extract::{extract_lines_from_points, ExtractionConfig};

use nalgebra::Vector3;
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LineError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("line {line}: segment {id} has zero length")]
    ZeroLength { line: usize, id: u32 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LineSegment3D {
    pub id: u32,
    pub p_start: [f64; 3],
    pub p_end: [f64; 3],
}

/// Closest point on a segment, as a clamped parameter and its distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineProjection {
    pub t: f64,
    pub distance: f64,
}

impl LineSegment3D {
    pub fn new(id: u32, p_start: [f64; 3], p_end: [f64; 3]) -> Self {
        Self { id, p_start, p_end }
    }

    pub fn start(&self) -> Vector3<f64> {
        Vector3::from(self.p_start)
    }

    pub fn end(&self) -> Vector3<f64> {
        Vector3::from(self.p_end)
    }

    pub fn delta(&self) -> Vector3<f64> {
        self.end() - self.start()
    }

    pub fn length(&self) -> f64 {
        self.delta().norm()
    }

    pub fn direction(&self) -> Vector3<f64> {
        self.delta().normalize()
    }

    /// `L(t) = (1 - t) p_start + t p_end`.
    pub fn point_at(&self, t: f64) -> Vector3<f64> {
        self.start() * (1.0 - t) + self.end() * t
    }

    /// Unclamped parameter of the perpendicular foot on the infinite line;
    /// 0 for a zero-length segment.
    pub fn raw_parameter(&self, point: &Vector3<f64>) -> f64 {
        let d = self.delta();
        let len2 = d.norm_squared();
        if len2 > 0.0 {
            (point - self.start()).dot(&d) / len2
        } else {
            0.0
        }
    }
}

pub fn project_to_segment(point: [f64; 3], seg: &LineSegment3D) -> LineProjection {
    let p = Vector3::from(point);
    let t = seg.raw_parameter(&p).clamp(0.0, 1.0);
    LineProjection {
        t,
        distance: (p - seg.point_at(t)).norm(),
    }
}

/// Distance from `point` to the infinite line through `seg`.
pub fn distance_to_line(point: [f64; 3], seg: &LineSegment3D) -> f64 {
    let p = Vector3::from(point);
    (p - seg.point_at(seg.raw_parameter(&p))).norm()
}

/// Parses `id x1 y1 z1 x2 y2 z2` records; `#` starts a comment.
pub fn load_lines(text: &str) -> Result<Vec<LineSegment3D>, LineError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let fields: Vec<&str> = body.split_whitespace().collect();
        if fields.len() != 7 {
            return Err(LineError::Parse {
                line,
                reason: format!("expected 7 fields, found {}", fields.len()),
            });
        }
        let id = fields[0].parse::<u32>().map_err(|e| LineError::Parse {
            line,
            reason: format!("bad id `{}`: {e}", fields[0]),
        })?;
        let mut v = [0.0; 6];
        for (slot, f) in v.iter_mut().zip(&fields[1..]) {
            *slot = f.parse::<f64>().ok().filter(|x| x.is_finite()).ok_or_else(|| LineError::Parse {
                line,
                reason: format!("bad coordinate `{f}`"),
            })?;
        }
        let seg = LineSegment3D::new(id, [v[0], v[1], v[2]], [v[3], v[4], v[5]]);
        if !(seg.length() > 0.0) {
            return Err(LineError::ZeroLength { line, id });
        }
        out.push(seg);
    }
    Ok(out)
}

/// Writes segments with round-trip (shortest exact) float formatting.
pub fn write_lines(lines: &[LineSegment3D]) -> String {
    let mut s = String::from("# id x1 y1 z1 x2 y2 z2\n");
    for l in lines {
        let [a, b, c] = l.p_start;
        let [d, e, f] = l.p_end;
        let _ = writeln!(s, "{} {a:?} {b:?} {c:?} {d:?} {e:?} {f:?}", l.id);
    }
    s
}

/// Keeps the `ceil(fraction * n)` longest segments (ties broken by id), in
/// their original order.
pub fn select_longest(lines: &[LineSegment3D], fraction: f64) -> Vec<LineSegment3D> {
    let keep = ((lines.len() as f64) * fraction.clamp(0.0, 1.0)).ceil() as usize;
    let mut order: Vec<usize> = (0..lines.len()).collect();
    order.sort_by(|&a, &b| {
        lines[b]
            .length()
            .total_cmp(&lines[a].length())
            .then(lines[a].id.cmp(&lines[b].id))
    });
    let mut chosen: Vec<usize> = order.into_iter().take(keep).collect();
    chosen.sort_unstable();
    chosen.into_iter().map(|i| lines[i].clone()).collect()
}
