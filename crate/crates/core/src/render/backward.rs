//! Reverse-mode pass through compositing, projection, and SH color.

use super::{
    composite_pixel, metrics, prepare, sh, view_direction, CameraFrame, Image, LossConfig, RenderError, DILATION,
};
use crate::gs::{quat_to_matrix, sh_rest_len, sigmoid, Camera, GaussianCloud, GaussianSplat};
use crate::par;
use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector3};

/// Per-splat parameters before the SH rest block:
/// position 3, log_scale 3, rotation 4, opacity 1, sh_dc 3.
pub const PARAMS_FIXED: usize = 14;
pub(crate) const OFF_POS: usize = 0;
pub(crate) const OFF_SCALE: usize = 3;
pub(crate) const OFF_ROT: usize = 6;
pub(crate) const OFF_OPACITY: usize = 10;
pub(crate) const OFF_DC: usize = 11;
pub(crate) const OFF_REST: usize = 14;

/// Rows per reduction chunk in the pixel pass.
const ROW_CHUNK: usize = 4;
/// Screen-space accumulators per projected splat: mean (2), conic (3),
/// activated opacity (1), color (3).
const ACC: usize = 9;

#[derive(Debug, Clone)]
pub struct Gradients {
    pub loss: f64,
    pub image: Image,
    /// `stride` values per splat in cloud order; see [`PARAMS_FIXED`].
    pub grad: Vec<f64>,
    pub stride: usize,
}

impl Gradients {
    pub fn splat(&self, i: usize) -> &[f64] {
        &self.grad[i * self.stride..(i + 1) * self.stride]
    }
}

/// Loss of `render(cloud, cam)` against `truth` and its gradient with respect
/// to every parameter of every splat whose `trainable` flag is set.
pub fn gradients(
    cloud: &GaussianCloud,
    trainable: &[bool],
    cam: &Camera,
    truth: &Image,
    cfg: &LossConfig,
) -> Result<Gradients, RenderError> {
    let frame = CameraFrame::new(cam);
    let scene = prepare(cloud, &frame);
    let (w, h) = (frame.width, frame.height);
    let truth_dims = Image::new(w, h);
    truth.same_size(&truth_dims)?;

    let mut raw = vec![0.0; 3 * w * h];
    if w > 0 {
        par::for_each_chunk_mut(&mut raw, 3 * w, |y, row| {
            for x in 0..w {
                let c = composite_pixel(&scene, x, y, |_| {});
                row[3 * x..3 * x + 3].copy_from_slice(&c);
            }
        });
    }
    let image = Image {
        width: w,
        height: h,
        data: raw.iter().map(|v| v.clamp(0.0, 1.0)).collect(),
    };
    let (loss, mut dimg) = metrics::loss_and_grad(&image, truth, cfg)?;
    for (g, v) in dimg.iter_mut().zip(&raw) {
        if *v < 0.0 || *v > 1.0 {
            *g = 0.0;
        }
    }

    let np = scene.projected.len();
    let chunks = h.div_ceil(ROW_CHUNK);
    let partial = par::map_range(chunks, |ci| {
        let mut acc = vec![0.0; ACC * np];
        let mut terms = Vec::new();
        for y in ci * ROW_CHUNK..((ci + 1) * ROW_CHUNK).min(h) {
            for x in 0..w {
                let i = 3 * (y * w + x);
                let dc = [dimg[i], dimg[i + 1], dimg[i + 2]];
                if dc == [0.0; 3] {
                    continue;
                }
                terms.clear();
                composite_pixel(&scene, x, y, |t| terms.push(*t));
                let mut suffix = [0.0; 3];
                for t in terms.iter().rev() {
                    let p = &scene.projected[t.k as usize];
                    let a = &mut acc[ACC * t.k as usize..ACC * (t.k as usize + 1)];
                    let wgt = t.alpha * t.transmittance;
                    let mut dalpha = 0.0;
                    for ch in 0..3 {
                        a[6 + ch] += dc[ch] * wgt;
                        dalpha += dc[ch] * (p.color[ch] * t.transmittance - suffix[ch] / (1.0 - t.alpha));
                        suffix[ch] += p.color[ch] * wgt;
                    }
                    if t.saturated {
                        continue;
                    }
                    a[5] += dalpha * t.falloff;
                    let dm = -0.5 * t.falloff * dalpha * p.opacity;
                    let [ca, cb, cc] = p.conic;
                    let (dx, dy) = (t.dx, t.dy);
                    a[0] -= dm * 2.0 * (ca * dx + cb * dy);
                    a[1] -= dm * 2.0 * (cb * dx + cc * dy);
                    a[2] += dm * dx * dx;
                    a[3] += dm * 2.0 * dx * dy;
                    a[4] += dm * dy * dy;
                }
            }
        }
        acc
    });
    let mut acc = vec![0.0; ACC * np];
    for part in &partial {
        for (a, p) in acc.iter_mut().zip(part) {
            *a += p;
        }
    }

    let stride = PARAMS_FIXED + sh_rest_len(cloud.sh_degree);
    let mut grad = vec![0.0; stride * cloud.len()];
    let per_splat = par::map_range(np, |k| {
        let p = &scene.projected[k];
        if !trainable.get(p.index).copied().unwrap_or(false) {
            return None;
        }
        let a: [f64; ACC] = acc[ACC * k..ACC * (k + 1)].try_into().unwrap();
        Some(splat_backward(&frame, &cloud.splats[p.index], cloud.sh_degree, &a, p.color_clamped))
    });
    for (k, g) in per_splat.into_iter().enumerate() {
        if let Some(g) = g {
            let i = scene.projected[k].index;
            grad[i * stride..(i + 1) * stride].copy_from_slice(&g);
        }
    }
    Ok(Gradients {
        loss,
        image,
        grad,
        stride,
    })
}

/// Chain rule from screen-space accumulators to splat parameters.
fn splat_backward(
    frame: &CameraFrame,
    splat: &GaussianSplat,
    sh_degree: u8,
    acc: &[f64; ACC],
    color_clamped: [bool; 3],
) -> Vec<f64> {
    let rest_len = sh_rest_len(sh_degree);
    let mut out = vec![0.0; PARAMS_FIXED + rest_len];

    let t = frame.w * splat.center() + frame.t;
    let (iz, iz2) = (1.0 / t.z, 1.0 / (t.z * t.z));
    let j = frame.jacobian(&t);
    let tm = j * frame.w;
    let r = quat_to_matrix(splat.rotation).expect("projected splat has a valid rotation");
    let s = splat.scale();
    let m = r * Matrix3::from_diagonal(&Vector3::from(s));
    let sigma3 = m * m.transpose();
    let cov = tm * sigma3 * tm.transpose();
    let (ca, cb, cc) = (cov[(0, 0)] + DILATION, 0.5 * (cov[(0, 1)] + cov[(1, 0)]), cov[(1, 1)] + DILATION);
    let det = ca * cc - cb * cb;
    let q = Matrix2::new(cc / det, -cb / det, -cb / det, ca / det);

    // dL/dQ as a symmetric matrix, then dL/dΣ2 = -Q G Q.
    let gq = Matrix2::new(acc[2], 0.5 * acc[3], 0.5 * acc[3], acc[4]);
    let gcov = -(q * gq * q);
    let g3 = tm.transpose() * gcov * tm;
    let gt: Matrix2x3<f64> = 2.0 * gcov * tm * sigma3;
    let gj = gt * frame.w.transpose();

    let (fx, fy) = (frame.fx, frame.fy);
    let mut dt = Vector3::new(acc[0] * fx * iz, acc[1] * fy * iz, -(acc[0] * fx * t.x + acc[1] * fy * t.y) * iz2);
    dt.z += gj[(0, 0)] * (-fx * iz2) + gj[(0, 2)] * (2.0 * fx * t.x * iz2 * iz) + gj[(1, 1)] * (-fy * iz2)
        + gj[(1, 2)] * (2.0 * fy * t.y * iz2 * iz);
    dt.x += gj[(0, 2)] * (-fx * iz2);
    dt.y += gj[(1, 2)] * (-fy * iz2);
    let mut dmu = frame.w.transpose() * dt;

    let gm = 2.0 * g3 * m;
    for i in 0..3 {
        let ds = (0..3).map(|row| gm[(row, i)] * r[(row, i)]).sum::<f64>();
        out[OFF_SCALE + i] = ds * s[i];
    }
    let gr = Matrix3::from_fn(|row, col| gm[(row, col)] * s[col]);
    let qn = splat.rotation.iter().map(|v| v * v).sum::<f64>().sqrt();
    let [w, x, y, z] = splat.rotation.map(|v| v / qn);
    let g = |a: usize, b: usize| gr[(a, b)];
    let dqh = [
        2.0 * (-z * g(0, 1) + y * g(0, 2) + z * g(1, 0) - x * g(1, 2) - y * g(2, 0) + x * g(2, 1)),
        2.0 * (y * g(0, 1) + z * g(0, 2) + y * g(1, 0) - 2.0 * x * g(1, 1) - w * g(1, 2) + z * g(2, 0) + w * g(2, 1)
            - 2.0 * x * g(2, 2)),
        2.0 * (-2.0 * y * g(0, 0) + x * g(0, 1) + w * g(0, 2) + x * g(1, 0) + z * g(1, 2) - w * g(2, 0) + z * g(2, 1)
            - 2.0 * y * g(2, 2)),
        2.0 * (-2.0 * z * g(0, 0) - w * g(0, 1) + x * g(0, 2) + w * g(1, 0) - 2.0 * z * g(1, 1) + y * g(1, 2)
            + x * g(2, 0)
            + y * g(2, 1)),
    ];
    let qh = [w, x, y, z];
    let dot: f64 = qh.iter().zip(&dqh).map(|(a, b)| a * b).sum();
    for i in 0..4 {
        out[OFF_ROT + i] = (dqh[i] - qh[i] * dot) / qn;
    }

    let o = sigmoid(splat.opacity_logit);
    out[OFF_OPACITY] = acc[5] * o * (1.0 - o);

    let (dir, dist) = view_direction(frame, splat);
    let basis = sh::basis(sh_degree, dir);
    let bgrad = sh::basis_grad(sh_degree, dir);
    let n = sh::basis_len(sh_degree) - 1;
    let mut ddir = [0.0; 3];
    for ch in 0..3 {
        if color_clamped[ch] {
            continue;
        }
        let gc = acc[6 + ch];
        out[OFF_DC + ch] = gc * basis[0];
        for jx in 0..n {
            let coef = splat.sh_rest[ch * n + jx];
            out[OFF_REST + ch * n + jx] = gc * basis[jx + 1];
            for axis in 0..3 {
                ddir[axis] += gc * coef * bgrad[jx + 1][axis];
            }
        }
    }
    if dist > 0.0 && n > 0 {
        let d = Vector3::from(dir);
        let gd = Vector3::from(ddir);
        dmu += (gd - d * d.dot(&gd)) / dist;
    }
    out[OFF_POS..OFF_POS + 3].copy_from_slice(dmu.as_slice());
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::render::render;

    #[test]
    fn zero_gradient_at_truth() {
        let mut s = GaussianSplat::at([0.1, -0.05, 0.0], 1);
        s.log_scale = [-1.5, -1.2, -1.8];
        s.rotation = [0.9, 0.1, -0.2, 0.3];
        s.sh_dc = [0.3, -0.1, 0.2];
        s.sh_rest = vec![0.05; 9];
        let cloud = GaussianCloud::from_splats(vec![s], 1);
        let cam = Camera::look_at([0.0, 0.0, -3.0], [0.0; 3], [0.0, -1.0, 0.0], 30.0, 16, 16);
        let truth = render(&cloud, &cam);
        let g = gradients(&cloud, &[true], &cam, &truth, &LossConfig::default()).unwrap();
        assert!(g.loss.abs() < 1e-12);
        assert!(g.grad.iter().all(|v| v.abs() < 1e-10), "{:?}", g.grad);
    }
}
