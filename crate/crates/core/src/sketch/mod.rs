//! Per-line parametric encoding of sketch splats.
//!
//! A group of splats attached to one segment is stored as 16-bit fixed-point
//! line parameters plus four polynomial models over `t` (opacity logit, DC
//! color, log-scale, sign-aligned quaternion). Decoding places each splat
//! exactly on the segment; the perpendicular offset is not kept.

pub mod poly;

pub use poly::{fit_poly, select_degree, PolyError, PolyModel};

use crate::gs::{sh_rest_len, GaussianCloud, GaussianSplat};
use crate::lines::LineSegment3D;
use crate::partition::SketchGroup;
use nalgebra::{DMatrix, Matrix4, Vector4};
use thiserror::Error;

/// Smallest group the codec accepts (two points pin a degree-1 model).
pub const MIN_GROUP: usize = 2;

const T_SCALE: f64 = 65535.0;

#[derive(Debug, Error, PartialEq)]
pub enum SketchError {
    #[error("group for line {line_id} has {size} members, need at least {MIN_GROUP}")]
    GroupTooSmall { line_id: u32, size: usize },
    #[error("group for line {line_id}: {source}")]
    Fit {
        line_id: u32,
        #[source]
        source: PolyError,
    },
    #[error("malformed block for line {line_id}: {reason}")]
    Malformed { line_id: u32, reason: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SketchLineBlock {
    pub line_id: u32,
    /// Endpoints, binary32-representable.
    pub p_start: [f64; 3],
    pub p_end: [f64; 3],
    pub t_q: Vec<u16>,
    pub opacity_model: PolyModel,
    pub color_model: PolyModel,
    pub scale_model: PolyModel,
    pub rotation_model: PolyModel,
}

impl SketchLineBlock {
    pub fn count(&self) -> usize {
        self.t_q.len()
    }

    pub fn models(&self) -> [&PolyModel; 4] {
        [
            &self.opacity_model,
            &self.color_model,
            &self.scale_model,
            &self.rotation_model,
        ]
    }

    /// Serialized size: 40 fixed bytes + 2 per splat + 4 per coefficient.
    pub fn encoded_len(&self) -> usize {
        4 + 24 + 4 + 2 * self.count() + self.models().iter().map(|m| 2 + 4 * m.coeffs.len()).sum::<usize>()
    }

    pub fn validate(&self) -> Result<(), SketchError> {
        let bad = |reason: String| SketchError::Malformed {
            line_id: self.line_id,
            reason,
        };
        for (m, k, name) in self
            .models()
            .into_iter()
            .zip([1, 3, 3, 4])
            .zip(["opacity", "color", "scale", "rotation"])
            .map(|((m, k), n)| (m, k, n))
        {
            if m.k != k || !m.is_valid() {
                return Err(bad(format!("{name} model invalid (k = {}, degree = {})", m.k, m.degree)));
            }
        }
        if !self.p_start.iter().chain(&self.p_end).all(|v| v.is_finite()) {
            return Err(bad("non-finite endpoint".into()));
        }
        Ok(())
    }
}

pub fn quantize_t(t: f64) -> u16 {
    (t.clamp(0.0, 1.0) * T_SCALE).round() as u16
}

pub fn dequantize_t(q: u16) -> f64 {
    q as f64 / T_SCALE
}

/// Flips quaternion signs into the hemisphere of the set's dominant axis (the
/// principal eigenvector of `Σ q qᵀ`, which is sign-invariant). A stray
/// quaternion cannot flip its neighbours, unlike chaining member to member.
pub fn sign_align(quats: &mut [[f64; 4]]) {
    if quats.is_empty() {
        return;
    }
    let mut m = Matrix4::<f64>::zeros();
    for q in quats.iter() {
        let v = Vector4::from(*q);
        m += v * v.transpose();
    }
    let eig = m.symmetric_eigen();
    let top = (0..4).max_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b])).unwrap();
    let mut axis: Vector4<f64> = eig.eigenvectors.column(top).into_owned();
    // Deterministic global sign: agree with the first member.
    if axis.dot(&Vector4::from(quats[0])) < 0.0 {
        axis = -axis;
    }
    for q in quats.iter_mut() {
        if Vector4::from(*q).dot(&axis) < 0.0 {
            *q = q.map(|v| -v);
        }
    }
}

/// Attribute channels used for both partition voting and encoding.
pub(crate) struct Channels {
    pub opacity: DMatrix<f64>,
    pub color: DMatrix<f64>,
    pub scale: DMatrix<f64>,
    pub rotation: DMatrix<f64>,
}

/// Gathers the four attribute channels for `members` (assumed in `t` order),
/// with quaternions sign-aligned along that order.
pub(crate) fn gather_channels(cloud: &GaussianCloud, members: &[usize]) -> Channels {
    let n = members.len();
    let mut quats: Vec<[f64; 4]> = members.iter().map(|&i| cloud.splats[i].rotation).collect();
    sign_align(&mut quats);
    let s = |i: usize| &cloud.splats[members[i]];
    Channels {
        opacity: DMatrix::from_fn(n, 1, |i, _| s(i).opacity_logit),
        color: DMatrix::from_fn(n, 3, |i, c| s(i).sh_dc[c]),
        scale: DMatrix::from_fn(n, 3, |i, c| s(i).log_scale[c]),
        rotation: DMatrix::from_fn(n, 4, |i, c| quats[i][c]),
    }
}

fn fit_channel(t: &[f64], values: &DMatrix<f64>, line_id: u32) -> Result<PolyModel, SketchError> {
    let wrap = |source| SketchError::Fit { line_id, source };
    let degree = select_degree(t, values).map_err(wrap)?;
    Ok(fit_poly(t, values, degree).map_err(wrap)?.rounded_to_f32())
}

/// Encodes one group. Models are fit against the dequantized `t` so the
/// decoder evaluates them at exactly the fitted abscissae.
pub fn encode_group(
    cloud: &GaussianCloud,
    group: &SketchGroup,
    seg: &LineSegment3D,
) -> Result<SketchLineBlock, SketchError> {
    let n = group.member_indices.len();
    if n < MIN_GROUP {
        return Err(SketchError::GroupTooSmall {
            line_id: group.line_id,
            size: n,
        });
    }
    let t_q: Vec<u16> = group.member_t.iter().map(|&t| quantize_t(t)).collect();
    let t: Vec<f64> = t_q.iter().map(|&q| dequantize_t(q)).collect();
    let ch = gather_channels(cloud, &group.member_indices);
    let id = group.line_id;
    Ok(SketchLineBlock {
        line_id: id,
        p_start: seg.p_start.map(|v| v as f32 as f64),
        p_end: seg.p_end.map(|v| v as f32 as f64),
        t_q,
        opacity_model: fit_channel(&t, &ch.opacity, id)?,
        color_model: fit_channel(&t, &ch.color, id)?,
        scale_model: fit_channel(&t, &ch.scale, id)?,
        rotation_model: fit_channel(&t, &ch.rotation, id)?,
    })
}

/// Reconstructs the group's splats in stored order. Higher-order SH
/// coefficients are zero; a quaternion that evaluates to zero becomes identity.
pub fn decode_group(block: &SketchLineBlock, sh_degree: u8) -> Result<Vec<GaussianSplat>, SketchError> {
    block.validate()?;
    let rest = sh_rest_len(sh_degree);
    let mut degenerate = 0usize;
    let splats = block
        .t_q
        .iter()
        .map(|&q| {
            let t = dequantize_t(q);
            let position = [0, 1, 2].map(|a| (1.0 - t) * block.p_start[a] + t * block.p_end[a]);
            let r = block.rotation_model.eval(t);
            let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            let rotation = if norm > 1e-12 && norm.is_finite() {
                [r[0] / norm, r[1] / norm, r[2] / norm, r[3] / norm]
            } else {
                degenerate += 1;
                [1.0, 0.0, 0.0, 0.0]
            };
            let c = block.color_model.eval(t);
            let s = block.scale_model.eval(t);
            GaussianSplat {
                position,
                log_scale: [s[0], s[1], s[2]],
                rotation,
                opacity_logit: block.opacity_model.eval_component(0, t),
                sh_dc: [c[0], c[1], c[2]],
                sh_rest: vec![0.0; rest],
            }
        })
        .collect();
    if degenerate > 0 {
        log::warn!(
            "line {}: {degenerate} decoded rotations had zero norm, replaced by identity",
            block.line_id
        );
    }
    Ok(splats)
}
