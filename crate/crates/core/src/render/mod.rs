//! CPU splatting renderer with analytic gradients.
//!
//! Splats are projected with the first-order (Jacobian) approximation, sorted
//! globally by camera-space depth, and alpha-composited front to back per
//! pixel. The backward pass mirrors the forward pass exactly, so every
//! threshold below also defines where the gradient is discontinuous.

mod backward;
mod image;
pub mod metrics;
mod retrain;
pub mod sh;

pub use backward::{gradients, Gradients, PARAMS_FIXED};
pub use image::Image;
pub use metrics::{loss, loss_and_grad, psnr, ssim, ssim_with, LossConfig};
pub use retrain::{retrain_patch, scene_extent, LearningRates, RetrainConfig, RetrainOutcome};

use crate::gs::{quat_to_matrix, sigmoid, Camera, GaussianCloud, GaussianSplat};
use crate::par;
use nalgebra::{Matrix2x3, Matrix3, Vector3};
use std::hash::{DefaultHasher, Hash, Hasher};
use thiserror::Error;

/// Camera-space depth at or below which a splat is culled.
pub const NEAR_PLANE: f64 = 0.01;
/// Isotropic screen-space dilation added to every projected covariance.
pub const DILATION: f64 = 0.3;
/// Per-splat alpha ceiling.
pub const ALPHA_MAX: f64 = 0.99;
/// Compositing stops once transmittance would fall below this.
pub const TRANSMITTANCE_MIN: f64 = 1e-4;
/// Squared Mahalanobis clip radius (3σ).
pub const CLIP_RADIUS2: f64 = 9.0;

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("image size mismatch: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("png: {0}")]
    Png(String),
    #[error("{0} cameras but {1} images")]
    ViewCount(usize, usize),
}

/// Screen-space state of one visible splat.
#[derive(Debug, Clone)]
pub(crate) struct Projected {
    pub index: usize,
    pub depth: f64,
    pub mean: [f64; 2],
    /// Inverse 2D covariance `[a, b, c]` for `[[a, b], [b, c]]`.
    pub conic: [f64; 3],
    pub opacity: f64,
    pub color: [f64; 3],
    pub color_clamped: [bool; 3],
    pub cols: (usize, usize),
    pub rows: (usize, usize),
}

pub(crate) struct CameraFrame {
    pub w: Matrix3<f64>,
    pub t: Vector3<f64>,
    pub center: Vector3<f64>,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraFrame {
    pub fn new(cam: &Camera) -> Self {
        Self {
            w: cam.rotation(),
            t: cam.translation(),
            center: cam.center(),
            fx: cam.focal[0],
            fy: cam.focal[1],
            cx: cam.principal_point[0],
            cy: cam.principal_point[1],
            width: cam.width(),
            height: cam.height(),
        }
    }

    /// Projection Jacobian at camera-space point `t`.
    pub fn jacobian(&self, t: &Vector3<f64>) -> Matrix2x3<f64> {
        let iz = 1.0 / t.z;
        Matrix2x3::new(
            self.fx * iz,
            0.0,
            -self.fx * t.x * iz * iz,
            0.0,
            self.fy * iz,
            -self.fy * t.y * iz * iz,
        )
    }
}

/// Normalized view direction and distance from the camera center.
pub(crate) fn view_direction(frame: &CameraFrame, splat: &GaussianSplat) -> ([f64; 3], f64) {
    let v = splat.center() - frame.center;
    let n = v.norm();
    if n > 0.0 {
        ([v.x / n, v.y / n, v.z / n], n)
    } else {
        ([0.0, 0.0, 1.0], 0.0)
    }
}

pub(crate) fn project_splat(frame: &CameraFrame, splat: &GaussianSplat, index: usize, sh_degree: u8) -> Option<Projected> {
    if !splat.is_finite() {
        return None;
    }
    let t = frame.w * splat.center() + frame.t;
    if t.z <= NEAR_PLANE {
        return None;
    }
    let r = quat_to_matrix(splat.rotation).ok()?;
    let m = r * Matrix3::from_diagonal(&Vector3::from(splat.scale()));
    let sigma3 = m * m.transpose();
    let tm = frame.jacobian(&t) * frame.w;
    let cov = tm * sigma3 * tm.transpose();
    let (ca, cb, cc) = (cov[(0, 0)] + DILATION, 0.5 * (cov[(0, 1)] + cov[(1, 0)]), cov[(1, 1)] + DILATION);
    let det = ca * cc - cb * cb;
    if !(det > 0.0) {
        return None;
    }
    let mid = 0.5 * (ca + cc);
    let sigma = (mid + (mid * mid - det).max(0.0).sqrt()).sqrt();
    let u = frame.fx * t.x / t.z + frame.cx;
    let v = frame.fy * t.y / t.z + frame.cy;
    let (wf, hf) = (frame.width as f64, frame.height as f64);
    if u < -3.0 * sigma || u > wf + 3.0 * sigma || v < -3.0 * sigma || v > hf + 3.0 * sigma {
        return None;
    }
    let cols = pixel_span(u, 3.0 * ca.sqrt(), frame.width)?;
    let rows = pixel_span(v, 3.0 * cc.sqrt(), frame.height)?;

    let (dir, _) = view_direction(frame, splat);
    let b = sh::basis(sh_degree, dir);
    let raw = sh::color(sh_degree, &splat.sh_dc, &splat.sh_rest, &b);
    Some(Projected {
        index,
        depth: t.z,
        mean: [u, v],
        conic: [cc / det, -cb / det, ca / det],
        opacity: sigmoid(splat.opacity_logit),
        color: raw.map(|c| c.max(0.0)),
        color_clamped: raw.map(|c| c < 0.0),
        cols,
        rows,
    })
}

/// Pixels whose centers lie within `radius` of `center`, as `[lo, hi)`.
fn pixel_span(center: f64, radius: f64, size: usize) -> Option<(usize, usize)> {
    let lo = (center - radius - 0.5).ceil().max(0.0);
    let hi = (center + radius - 0.5).floor().min(size as f64 - 1.0);
    (lo <= hi).then(|| (lo as usize, hi as usize + 1))
}

/// Projected splats in compositing order plus, for each image row, the
/// positions (into that list) of splats whose support touches the row.
pub(crate) struct Scene {
    pub projected: Vec<Projected>,
    pub rows: Vec<Vec<u32>>,
}

pub(crate) fn prepare(cloud: &GaussianCloud, frame: &CameraFrame) -> Scene {
    let mut projected: Vec<Projected> = par::map_range(cloud.splats.len(), |i| {
        project_splat(frame, &cloud.splats[i], i, cloud.sh_degree)
    })
    .into_iter()
    .flatten()
    .collect();
    projected.sort_by(|a, b| a.depth.total_cmp(&b.depth).then(a.index.cmp(&b.index)));
    let mut rows = vec![Vec::new(); frame.height];
    for (k, p) in projected.iter().enumerate() {
        for row in &mut rows[p.rows.0..p.rows.1] {
            row.push(k as u32);
        }
    }
    Scene { projected, rows }
}

/// One composited term at a pixel.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Contribution {
    pub k: u32,
    pub alpha: f64,
    pub falloff: f64,
    pub transmittance: f64,
    pub saturated: bool,
    pub dx: f64,
    pub dy: f64,
}

/// Composites one pixel, handing each term to `visit`. Returns the raw color.
#[inline]
pub(crate) fn composite_pixel(
    scene: &Scene,
    x: usize,
    y: usize,
    mut visit: impl FnMut(&Contribution),
) -> [f64; 3] {
    let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
    let mut c = [0.0; 3];
    let mut trans = 1.0;
    for &k in &scene.rows[y] {
        let p = &scene.projected[k as usize];
        if x < p.cols.0 || x >= p.cols.1 {
            continue;
        }
        let (dx, dy) = (px - p.mean[0], py - p.mean[1]);
        let [a, b, cc] = p.conic;
        let m = a * dx * dx + 2.0 * b * dx * dy + cc * dy * dy;
        if m > CLIP_RADIUS2 {
            continue;
        }
        let falloff = (-0.5 * m).exp();
        let raw_alpha = p.opacity * falloff;
        let saturated = raw_alpha > ALPHA_MAX;
        let alpha = if saturated { ALPHA_MAX } else { raw_alpha };
        let next = trans * (1.0 - alpha);
        if next < TRANSMITTANCE_MIN {
            break;
        }
        for ch in 0..3 {
            c[ch] += p.color[ch] * alpha * trans;
        }
        visit(&Contribution {
            k,
            alpha,
            falloff,
            transmittance: trans,
            saturated,
            dx,
            dy,
        });
        trans = next;
    }
    c
}

pub fn render(cloud: &GaussianCloud, cam: &Camera) -> Image {
    let frame = CameraFrame::new(cam);
    let scene = prepare(cloud, &frame);
    let mut img = Image::new(frame.width, frame.height);
    if frame.width == 0 {
        return img;
    }
    par::for_each_chunk_mut(&mut img.data, 3 * frame.width, |y, row| {
        for x in 0..frame.width {
            let c = composite_pixel(&scene, x, y, |_| {});
            for ch in 0..3 {
                row[3 * x + ch] = c[ch].clamp(0.0, 1.0);
            }
        }
    });
    img
}

/// Accumulated alpha (`1 - T`) per pixel.
pub fn render_alpha(cloud: &GaussianCloud, cam: &Camera) -> Vec<f64> {
    let frame = CameraFrame::new(cam);
    let scene = prepare(cloud, &frame);
    let mut out = vec![0.0; frame.width * frame.height];
    if frame.width == 0 {
        return out;
    }
    par::for_each_chunk_mut(&mut out, frame.width, |y, row| {
        for (x, o) in row.iter_mut().enumerate() {
            let mut t = 1.0;
            composite_pixel(&scene, x, y, |c| t = c.transmittance * (1.0 - c.alpha));
            *o = 1.0 - t;
        }
    });
    out
}

/// Hash of every discrete decision the renderer makes: which splats are
/// visible, which terms reach each pixel, and where alpha, color, or output
/// clamps engage. Two parameter settings with the same signature lie in the
/// same smooth piece of the rendering function.
pub fn contribution_signature(cloud: &GaussianCloud, cam: &Camera) -> u64 {
    let frame = CameraFrame::new(cam);
    let scene = prepare(cloud, &frame);
    let mut h = DefaultHasher::new();
    for p in &scene.projected {
        (p.index, p.color_clamped, p.cols, p.rows).hash(&mut h);
    }
    for y in 0..frame.height {
        for x in 0..frame.width {
            let mut terms = Vec::new();
            let c = composite_pixel(&scene, x, y, |t| terms.push((t.k, t.saturated)));
            terms.hash(&mut h);
            c.map(|v| (v < 0.0, v > 1.0)).hash(&mut h);
        }
    }
    h.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn axis_camera(size: u32) -> Camera {
        Camera::look_at([0.0, 0.0, -4.0], [0.0; 3], [0.0, -1.0, 0.0], 40.0, size, size)
    }

    #[test]
    fn empty_cloud_is_black() {
        let img = render(&GaussianCloud::new(0), &axis_camera(8));
        assert!(img.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn centered_splat_is_symmetric() {
        let mut s = GaussianSplat::at([0.0; 3], 0);
        s.log_scale = [0.2f64.ln(); 3];
        s.opacity_logit = 1.0;
        s.sh_dc = [0.4; 3];
        let img = render(&GaussianCloud::from_splats(vec![s], 0), &axis_camera(16));
        for y in 0..16 {
            for x in 0..16 {
                let v = img.get(x, y)[0];
                assert!((v - img.get(15 - x, y)[0]).abs() < 1e-6);
                assert!((v - img.get(x, 15 - y)[0]).abs() < 1e-6);
                assert!(v <= img.get(7, 7)[0] + 1e-12);
            }
        }
        assert!(img.get(7, 7)[0] > 0.0);
    }

    #[test]
    fn behind_camera_culled() {
        let s = GaussianSplat::at([0.0, 0.0, -10.0], 0);
        let img = render(&GaussianCloud::from_splats(vec![s], 0), &axis_camera(8));
        assert!(img.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn transmittance_is_monotone() {
        let mut splats = Vec::new();
        for i in 0..6 {
            let mut s = GaussianSplat::at([0.1 * i as f64, 0.0, 0.3 * i as f64], 0);
            s.log_scale = [0.3f64.ln(); 3];
            s.opacity_logit = 3.0;
            s.sh_dc = [1.0; 3];
            splats.push(s);
        }
        let cloud = GaussianCloud::from_splats(splats, 0);
        let frame = CameraFrame::new(&axis_camera(16));
        let scene = prepare(&cloud, &frame);
        for y in 0..16 {
            for x in 0..16 {
                let mut last = 1.0;
                composite_pixel(&scene, x, y, |c| {
                    assert!(c.transmittance <= last);
                    last = c.transmittance;
                });
            }
        }
        assert!(render_alpha(&cloud, &axis_camera(16)).iter().all(|a| (0.0..=1.0).contains(a)));
    }
}
