//! Deterministic synthetic scenes: a cube (plus an optional second box) whose
//! edges carry line-coherent splats and whose faces carry planar filler.

use crate::gs::{ply::save_ply, save_cameras, Camera, GaussianCloud, GaussianSplat};
use crate::lines::{project_to_segment, write_lines, LineSegment3D};
use crate::render::{render, Image, RenderError};
use nalgebra::{UnitQuaternion, Vector3};
use rand::{seq::index::sample, Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::path::Path;
use thiserror::Error;

pub const MAX_EDGES: usize = 24;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid spec: {0}")]
    Spec(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Render(#[from] RenderError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub edges: usize,
    pub splats_per_edge: usize,
    pub curve_degree: usize,
    pub outlier_fraction: f64,
    pub filler_count: usize,
    pub width: u32,
    pub height: u32,
    pub cameras: usize,
    pub seed: u64,
    pub sh_degree: u8,
    /// Sketch radius used for placement; the default matches the partition
    /// default (0.5% of the scene diagonal).
    pub radius: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            edges: 12,
            splats_per_edge: 100,
            curve_degree: 3,
            outlier_fraction: 0.0,
            filler_count: 3000,
            width: 64,
            height: 64,
            cameras: 4,
            seed: 0,
            sh_degree: 3,
            radius: 0.005 * 2.0 * 3f64.sqrt(),
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::Spec(m));
        if self.edges > MAX_EDGES {
            return bad(format!("at most {MAX_EDGES} edges"));
        }
        if !(0.0..=1.0).contains(&self.outlier_fraction) {
            return bad("outlier fraction must lie in [0, 1]".into());
        }
        if self.sh_degree > 3 {
            return bad("sh degree must be at most 3".into());
        }
        if !(self.radius > 0.0 && self.radius < 0.05) {
            return bad("radius must lie in (0, 0.05)".into());
        }
        if self.cameras == 0 || self.width == 0 || self.height == 0 {
            return bad("need at least one camera and a non-empty image".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeLabel {
    pub line_id: u32,
    /// Every splat generated for this edge, outliers included.
    pub members: Vec<usize>,
    pub outliers: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Labels {
    pub seed: u64,
    pub radius: f64,
    pub edges: Vec<EdgeLabel>,
    pub filler_start: usize,
    pub filler_count: usize,
}

impl Labels {
    pub fn all_outliers(&self) -> Vec<usize> {
        self.edges.iter().flat_map(|e| e.outliers.iter().copied()).collect()
    }
}

#[derive(Debug, Clone)]
pub struct SynthScene {
    pub cloud: GaussianCloud,
    pub lines: Vec<LineSegment3D>,
    pub cameras: Vec<Camera>,
    pub images: Vec<Image>,
    pub labels: Labels,
}

fn box_edges(lo: [f64; 3], hi: [f64; 3]) -> Vec<([f64; 3], [f64; 3])> {
    let mut out = Vec::with_capacity(12);
    for axis in 0..3 {
        let (a, b) = ((axis + 1) % 3, (axis + 2) % 3);
        for (ua, ub) in [(lo[a], lo[b]), (hi[a], lo[b]), (hi[a], hi[b]), (lo[a], hi[b])] {
            let mut p = [0.0; 3];
            let mut q = [0.0; 3];
            p[axis] = lo[axis];
            q[axis] = hi[axis];
            p[a] = ua;
            q[a] = ua;
            p[b] = ub;
            q[b] = ub;
            out.push((p, q));
        }
    }
    out
}

/// Axis-aligned faces as (center, normal axis, normal sign).
fn box_faces(lo: [f64; 3], hi: [f64; 3]) -> Vec<([f64; 3], usize, f64)> {
    let mut out = Vec::with_capacity(6);
    for axis in 0..3 {
        for (side, v) in [(-1.0, lo[axis]), (1.0, hi[axis])] {
            let mut c = [0.0; 3];
            for k in 0..3 {
                c[k] = 0.5 * (lo[k] + hi[k]);
            }
            c[axis] = v;
            out.push((c, axis, side));
        }
    }
    out
}

const CUBE: ([f64; 3], [f64; 3]) = ([-1.0; 3], [1.0; 3]);
const TOP_BOX: ([f64; 3], [f64; 3]) = ([-0.5, 1.0, -0.5], [0.5, 1.8, 0.5]);

/// Seeded polynomial `base + amp · Σ_p a_p (2t − 1)^p`.
struct Curve {
    base: f64,
    coeffs: Vec<f64>,
}

impl Curve {
    fn new(rng: &mut ChaCha8Rng, base: f64, amp: f64, degree: usize) -> Self {
        let coeffs = (1..=degree).map(|_| amp * rng.random_range(-1.0..1.0) / degree as f64).collect();
        Self { base, coeffs }
    }

    fn at(&self, t: f64) -> f64 {
        let u = 2.0 * t - 1.0;
        self.base + self.coeffs.iter().rev().fold(0.0, |acc, &c| (acc + c) * u)
    }
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    let n = Normal::new(0.0, 1.0).unwrap();
    loop {
        let v = Vector3::new(n.sample(rng), n.sample(rng), n.sample(rng));
        if v.norm() > 1e-6 {
            return v.normalize();
        }
    }
}

fn quat_wxyz(q: &UnitQuaternion<f64>) -> [f64; 4] {
    [q.w, q.i, q.j, q.k]
}

/// Rotation taking the local x axis onto `dir`.
fn align_x(dir: &Vector3<f64>) -> UnitQuaternion<f64> {
    UnitQuaternion::rotation_between(&Vector3::x(), dir)
        .unwrap_or_else(|| UnitQuaternion::from_axis_angle(&Vector3::z_axis(), PI))
}

pub fn generate(spec: &SynthSpec) -> Result<SynthScene, SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let r = spec.radius;
    let deg = spec.sh_degree;

    let mut segments = box_edges(CUBE.0, CUBE.1);
    segments.extend(box_edges(TOP_BOX.0, TOP_BOX.1));
    let inset = 4.0 * r;
    let lines: Vec<LineSegment3D> = segments[..spec.edges]
        .iter()
        .enumerate()
        .map(|(i, (p, q))| {
            let d = (Vector3::from(*q) - Vector3::from(*p)).normalize() * inset;
            let a = Vector3::from(*p) + d;
            let b = Vector3::from(*q) - d;
            LineSegment3D::new(i as u32, a.into(), b.into())
        })
        .collect();

    let mut splats = Vec::new();
    let mut edge_labels = Vec::new();
    let noise = |sd: f64| Normal::new(0.0, sd).unwrap();
    let (n_op, n_col, n_sc, n_rot, n_rest) = (noise(0.05), noise(0.02), noise(0.03), noise(0.01), noise(0.005));
    for seg in &lines {
        let n = spec.splats_per_edge;
        let dir = seg.direction();
        let d = spec.curve_degree;
        let spacing = seg.length() / n.max(1) as f64;
        let op_base = rng.random_range(2.0..3.5);
        let opacity = Curve::new(&mut rng, op_base, 1.0, d);
        let color: Vec<Curve> = (0..3)
            .map(|_| {
                let base = rng.random_range(-1.4..1.4);
                Curve::new(&mut rng, base, 0.4, d)
            })
            .collect();
        let along = (1.5 * spacing).max(1e-4).ln();
        let scale: Vec<Curve> = [along, (0.004f64).ln(), (0.004f64).ln()]
            .iter()
            .map(|&b| Curve::new(&mut rng, b, 0.2, d))
            .collect();
        let q0 = quat_wxyz(&align_x(&dir));
        let rot: Vec<Curve> = q0.iter().map(|&b| Curve::new(&mut rng, b, 0.1, d)).collect();

        let start = splats.len();
        for i in 0..n {
            let t = (i as f64 + rng.random::<f64>()) / n as f64;
            let mut perp = random_unit(&mut rng);
            perp -= dir * perp.dot(&dir);
            let perp = if perp.norm() > 1e-9 { perp.normalize() } else { dir.cross(&Vector3::y()).normalize() };
            let pos = seg.point_at(t) + perp * (rng.random::<f64>() * 0.8 * r);
            let mut s = GaussianSplat::at(pos.into(), deg);
            s.opacity_logit = opacity.at(t) + n_op.sample(&mut rng);
            for c in 0..3 {
                s.sh_dc[c] = color[c].at(t) + n_col.sample(&mut rng);
                s.log_scale[c] = scale[c].at(t) + n_sc.sample(&mut rng);
            }
            for c in 0..4 {
                s.rotation[c] = rot[c].at(t) + n_rot.sample(&mut rng);
            }
            for v in &mut s.sh_rest {
                *v = n_rest.sample(&mut rng);
            }
            splats.push(s);
        }
        let n_out = (spec.outlier_fraction * n as f64).round() as usize;
        let mut outliers: Vec<usize> = sample(&mut rng, n, n_out.min(n)).into_iter().map(|k| start + k).collect();
        outliers.sort_unstable();
        for &k in &outliers {
            let s = &mut splats[k];
            s.opacity_logit = rng.random_range(-3.0..6.0);
            s.sh_dc = [0.0; 3].map(|_| rng.random_range(-1.8..1.8));
            s.log_scale = [0.0; 3].map(|_| rng.random_range((0.002f64).ln()..(0.08f64).ln()));
            let u = random_unit(&mut rng);
            let q = UnitQuaternion::from_axis_angle(&nalgebra::Unit::new_normalize(u), rng.random_range(0.0..PI));
            s.rotation = quat_wxyz(&q);
            for v in &mut s.sh_rest {
                *v = rng.random_range(-0.2..0.2);
            }
        }
        edge_labels.push(EdgeLabel {
            line_id: seg.id,
            members: (start..splats.len()).collect(),
            outliers,
        });
    }

    let filler_start = splats.len();
    let mut faces = box_faces(CUBE.0, CUBE.1);
    if spec.edges > 12 {
        // The second box sits on the cube; skip its bottom face.
        faces.extend(box_faces(TOP_BOX.0, TOP_BOX.1).into_iter().filter(|f| !(f.1 == 1 && f.2 < 0.0)));
    }
    let face_color: Vec<([f64; 3], [f64; 3])> = faces
        .iter()
        .map(|_| {
            let base = [0.0; 3].map(|_| rng.random_range(-1.0..1.0));
            let grad = [0.0; 3].map(|_| rng.random_range(-0.4..0.4));
            (base, grad)
        })
        .collect();
    let box_of = |f: usize| if f < 6 { CUBE } else { TOP_BOX };
    let area = |f: usize| {
        let (lo, hi) = box_of(f);
        let axis = faces[f].1;
        let (a, b) = ((axis + 1) % 3, (axis + 2) % 3);
        (hi[a] - lo[a]) * (hi[b] - lo[b])
    };
    let total_area: f64 = (0..faces.len()).map(area).sum();
    let plane_sigma = 0.9 * (total_area / spec.filler_count.max(1) as f64).sqrt().max(0.05);
    let plane_sigma = plane_sigma.min(0.25);
    let mut placed = 0;
    let mut attempts = 0usize;
    while placed < spec.filler_count {
        attempts += 1;
        if attempts > 1000 * spec.filler_count.max(1) {
            return Err(SynthError::Spec("could not place filler splats".into()));
        }
        // Area-weighted face choice.
        let mut pick = rng.random::<f64>() * total_area;
        let mut f = 0;
        while f + 1 < faces.len() && pick >= area(f) {
            pick -= area(f);
            f += 1;
        }
        let (center, axis, side) = faces[f];
        let (lo, hi) = box_of(f);
        let mut p = center;
        let (a, b) = ((axis + 1) % 3, (axis + 2) % 3);
        p[a] = rng.random_range(lo[a]..hi[a]);
        p[b] = rng.random_range(lo[b]..hi[b]);
        if lines.iter().any(|l| project_to_segment(p, l).distance <= 2.0 * r) {
            continue;
        }
        let mut normal = Vector3::zeros();
        normal[axis] = side;
        // Local z onto the face normal; x, y span the face.
        let q = UnitQuaternion::rotation_between(&Vector3::z(), &normal)
            .unwrap_or_else(|| UnitQuaternion::from_axis_angle(&Vector3::x_axis(), PI));
        let spin = UnitQuaternion::from_axis_angle(&nalgebra::Unit::new_normalize(normal), rng.random_range(0.0..PI));
        let mut s = GaussianSplat::at(p, deg);
        s.rotation = quat_wxyz(&(spin * q));
        let jitter = rng.random_range(0.8..1.2);
        s.log_scale = [(plane_sigma * jitter).ln(), (plane_sigma / jitter).ln(), (0.004f64).ln()];
        s.opacity_logit = rng.random_range(2.0..3.0);
        let (base, grad) = face_color[f];
        for c in 0..3 {
            s.sh_dc[c] = base[c] + grad[c] * (p[a] + p[b]) + 0.01 * rng.random_range(-1.0..1.0);
        }
        for v in &mut s.sh_rest {
            *v = rng.random_range(-0.02..0.02);
        }
        splats.push(s);
        placed += 1;
    }
    debug_assert_eq!(splats.len() - filler_start, spec.filler_count);

    let cloud = GaussianCloud::from_splats(splats, deg);
    let cameras = ring_cameras(spec.cameras, spec.width, spec.height);
    // Truth images carry 8-bit precision, exactly as written to disk.
    let images = cameras.iter().map(|c| render(&cloud, c).quantized()).collect();
    let labels = Labels {
        seed: spec.seed,
        radius: r,
        edges: edge_labels,
        filler_start,
        filler_count: spec.filler_count,
    };
    Ok(SynthScene {
        cloud,
        lines,
        cameras,
        images,
        labels,
    })
}

/// Cameras on a raised ring around the origin, all looking at it.
pub fn ring_cameras(n: usize, width: u32, height: u32) -> Vec<Camera> {
    let focal = 1.6 * width.min(height) as f64;
    (0..n)
        .map(|i| {
            let a = 2.0 * PI * i as f64 / n as f64 + PI / 4.0;
            let eye = [5.5 * a.cos(), 2.8, 5.5 * a.sin()];
            Camera::look_at(eye, [0.0, 0.3, 0.0], [0.0, 1.0, 0.0], focal, width, height)
        })
        .collect()
}

/// Writes `scene.ply`, `lines.txt`, `cameras.json`, `labels.json`, and
/// `images/view_NNN.png` under `dir`.
pub fn write_scene(scene: &SynthScene, dir: &Path) -> Result<(), SynthError> {
    std::fs::create_dir_all(dir.join("images"))?;
    std::fs::write(dir.join("scene.ply"), save_ply(&scene.cloud))?;
    std::fs::write(dir.join("lines.txt"), write_lines(&scene.lines))?;
    std::fs::write(dir.join("cameras.json"), save_cameras(&scene.cameras))?;
    let labels = serde_json::to_string_pretty(&scene.labels).map_err(std::io::Error::other)?;
    std::fs::write(dir.join("labels.json"), labels)?;
    for (i, img) in scene.images.iter().enumerate() {
        std::fs::write(dir.join("images").join(view_name(i)), img.encode_png()?)?;
    }
    Ok(())
}

pub fn view_name(i: usize) -> String {
    format!("view_{i:03}.png")
}
