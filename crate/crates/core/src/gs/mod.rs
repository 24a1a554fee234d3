//! Splat data model, covariance math, and activation conventions.
//!
//! Every field is kept pre-activation, exactly as the standard 3DGS point file
//! stores it: log-scales, opacity logit, and a raw (unnormalized) quaternion in
//! `(w, x, y, z)` order. Activations are applied only where a consumer needs
//! them (rendering, density evaluation, the IQR scale filter).

mod camera;
pub mod ply;

pub use camera::{load_cameras, save_cameras, Camera, CameraError};

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

/// Lower bound applied to activated scales before inverting a covariance.
pub const SCALE_FLOOR: f64 = 1e-8;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("quaternion has zero norm")]
    ZeroQuaternion,
    #[error("covariance is singular")]
    SingularCovariance,
}

/// Number of higher-order SH coefficients (all three channels) for a degree.
pub const fn sh_rest_len(sh_degree: u8) -> usize {
    let d = sh_degree as usize;
    3 * ((d + 1) * (d + 1) - 1)
}

/// Inverse of [`sh_rest_len`]; `None` for lengths no degree in `0..=3` produces.
pub fn sh_degree_for_rest_len(len: usize) -> Option<u8> {
    (0..=3u8).find(|&d| sh_rest_len(d) == len)
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSplat {
    pub position: [f64; 3],
    pub log_scale: [f64; 3],
    /// `(w, x, y, z)`, not necessarily unit length.
    pub rotation: [f64; 4],
    pub opacity_logit: f64,
    pub sh_dc: [f64; 3],
    /// Degree 1..3 coefficients in file order: `f_rest_{c * n + j}` holds
    /// coefficient `j + 1` of channel `c`, with `n = sh_rest.len() / 3`.
    pub sh_rest: Vec<f64>,
}

impl GaussianSplat {
    /// Unit-scale, identity-rotation splat at `position` with 50% opacity.
    pub fn at(position: [f64; 3], sh_degree: u8) -> Self {
        Self {
            position,
            log_scale: [0.0; 3],
            rotation: [1.0, 0.0, 0.0, 0.0],
            opacity_logit: 0.0,
            sh_dc: [0.0; 3],
            sh_rest: vec![0.0; sh_rest_len(sh_degree)],
        }
    }

    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }

    pub fn scale(&self) -> [f64; 3] {
        self.log_scale.map(f64::exp)
    }

    pub fn center(&self) -> Vector3<f64> {
        Vector3::from(self.position)
    }

    pub fn is_finite(&self) -> bool {
        self.position
            .iter()
            .chain(&self.log_scale)
            .chain(&self.rotation)
            .chain(&self.sh_dc)
            .chain(&self.sh_rest)
            .all(|v| v.is_finite())
            && self.opacity_logit.is_finite()
    }

    /// Rotation matrix of the normalized quaternion.
    pub fn rotation_matrix(&self) -> Result<Matrix3<f64>, GeometryError> {
        quat_to_matrix(self.rotation)
    }

    /// Unit direction of the covariance axis with the largest scale.
    pub fn longest_axis(&self) -> Result<Vector3<f64>, GeometryError> {
        let r = self.rotation_matrix()?;
        let axis = (0..3)
            .max_by(|&a, &b| self.log_scale[a].total_cmp(&self.log_scale[b]))
            .unwrap_or(0);
        Ok(r.column(axis).into_owned())
    }
}

/// `R(q / |q|)` for a `(w, x, y, z)` quaternion.
pub fn quat_to_matrix(q: [f64; 4]) -> Result<Matrix3<f64>, GeometryError> {
    let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(norm > 0.0) {
        return Err(GeometryError::ZeroQuaternion);
    }
    let [w, x, y, z] = q.map(|v| v / norm);
    Ok(Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    ))
}

/// `Σ = R S Sᵀ Rᵀ` with `S = diag(exp(log_scale))`.
pub fn covariance(splat: &GaussianSplat) -> Result<Matrix3<f64>, GeometryError> {
    covariance_with_floor(splat, 0.0)
}

fn covariance_with_floor(splat: &GaussianSplat, floor: f64) -> Result<Matrix3<f64>, GeometryError> {
    let r = splat.rotation_matrix()?;
    let s = splat.scale().map(|v| v.max(floor));
    let m = r * Matrix3::from_diagonal(&Vector3::from(s));
    let cov = m * m.transpose();
    // Exact symmetry: average the two triangles.
    Ok((cov + cov.transpose()) * 0.5)
}

/// Unnormalized Gaussian density `exp(-½ (x-μ)ᵀ Σ⁻¹ (x-μ))`.
pub fn evaluate_density(splat: &GaussianSplat, x: [f64; 3]) -> Result<f64, GeometryError> {
    let cov = covariance_with_floor(splat, SCALE_FLOOR)?;
    let inv = cov
        .cholesky()
        .map(|c| c.inverse())
        .ok_or(GeometryError::SingularCovariance)?;
    let d = Vector3::from(x) - splat.center();
    let m = d.dot(&(inv * d));
    Ok((-0.5 * m).exp())
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianCloud {
    pub splats: Vec<GaussianSplat>,
    pub sh_degree: u8,
}

impl GaussianCloud {
    pub fn new(sh_degree: u8) -> Self {
        Self {
            splats: Vec::new(),
            sh_degree,
        }
    }

    pub fn from_splats(splats: Vec<GaussianSplat>, sh_degree: u8) -> Self {
        Self { splats, sh_degree }
    }

    pub fn len(&self) -> usize {
        self.splats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.splats.is_empty()
    }

    /// Axis-aligned bounds of splat centers, `None` when empty.
    pub fn bounds(&self) -> Option<([f64; 3], [f64; 3])> {
        let first = self.splats.first()?.position;
        Some(self.splats.iter().fold((first, first), |(mut lo, mut hi), s| {
            for a in 0..3 {
                lo[a] = lo[a].min(s.position[a]);
                hi[a] = hi[a].max(s.position[a]);
            }
            (lo, hi)
        }))
    }

    /// Diagonal length of the center bounding box (0 for empty clouds).
    pub fn bbox_diagonal(&self) -> f64 {
        self.bounds()
            .map(|(lo, hi)| (Vector3::from(hi) - Vector3::from(lo)).norm())
            .unwrap_or(0.0)
    }

    /// Checks the structural invariants: consistent SH length and finite values.
    pub fn validate(&self) -> Result<(), String> {
        if self.sh_degree > 3 {
            return Err(format!("sh_degree {} exceeds 3", self.sh_degree));
        }
        let want = sh_rest_len(self.sh_degree);
        for (i, s) in self.splats.iter().enumerate() {
            if s.sh_rest.len() != want {
                return Err(format!(
                    "splat {i} has {} SH rest coefficients, expected {want}",
                    s.sh_rest.len()
                ));
            }
            if !s.is_finite() {
                return Err(format!("splat {i} has non-finite components"));
            }
        }
        Ok(())
    }

    pub fn select(&self, indices: &[usize]) -> GaussianCloud {
        GaussianCloud {
            splats: indices.iter().map(|&i| self.splats[i].clone()).collect(),
            sh_degree: self.sh_degree,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_splat(rng: &mut ChaCha8Rng) -> GaussianSplat {
        GaussianSplat {
            position: [0.0; 3].map(|_| rng.random_range(-2.0..2.0)),
            log_scale: [0.0; 3].map(|_| rng.random_range(-2.0..0.5)),
            rotation: [0.0; 4].map(|_| rng.random_range(-1.0..1.0)),
            opacity_logit: rng.random_range(-3.0..3.0),
            sh_dc: [0.0; 3],
            sh_rest: vec![],
        }
    }

    #[test]
    fn identity_covariance() {
        let s = GaussianSplat::at([0.0; 3], 0);
        assert_eq!(covariance(&s).unwrap(), Matrix3::identity());
    }

    #[test]
    fn scaled_covariance() {
        let mut s = GaussianSplat::at([0.0; 3], 0);
        s.log_scale = [2f64.ln(), 0.0, 0.0];
        let c = covariance(&s).unwrap();
        let want = Matrix3::from_diagonal(&Vector3::new(4.0, 1.0, 1.0));
        assert!((c - want).amax() < 1e-12);
    }

    #[test]
    fn zero_quaternion_rejected() {
        let mut s = GaussianSplat::at([0.0; 3], 0);
        s.rotation = [0.0; 4];
        assert_eq!(covariance(&s), Err(GeometryError::ZeroQuaternion));
    }

    #[test]
    fn covariance_eigenvalues_match_scales() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let s = random_splat(&mut rng);
            let c = covariance(&s).unwrap();
            assert_eq!(c, c.transpose());
            let mut eig: Vec<f64> = c.symmetric_eigenvalues().iter().copied().collect();
            let mut want: Vec<f64> = s.log_scale.iter().map(|l| (2.0 * l).exp()).collect();
            eig.sort_by(f64::total_cmp);
            want.sort_by(f64::total_cmp);
            for (a, b) in eig.iter().zip(&want) {
                assert!((a - b).abs() < 1e-9, "{eig:?} vs {want:?}");
            }
            assert!(eig[0] >= -1e-9);
        }
    }

    #[test]
    fn density_at_center_and_unit_distance() {
        let s = GaussianSplat::at([1.0, 2.0, 3.0], 0);
        assert_eq!(evaluate_density(&s, [1.0, 2.0, 3.0]).unwrap(), 1.0);
        for x in [[2.0, 2.0, 3.0], [1.0, 1.0, 3.0], [1.0, 2.0, 4.0]] {
            let v = evaluate_density(&s, x).unwrap();
            assert!((v - (-0.5f64).exp()).abs() < 1e-15);
        }
    }

    #[test]
    fn density_matches_dense_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let s = random_splat(&mut rng);
            let x = [0.0; 3].map(|_| rng.random_range(-2.0..2.0));
            let cov = covariance(&s).unwrap();
            let inv = cov.try_inverse().unwrap();
            let d = Vector3::from(x) - s.center();
            let want = (-0.5 * (d.transpose() * inv * d)[0]).exp();
            let got = evaluate_density(&s, x).unwrap();
            assert!((got - want).abs() <= 1e-9 * want.max(1e-300), "{got} vs {want}");
        }
    }

    #[test]
    fn density_peaks_at_center() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = random_splat(&mut rng);
        let peak = evaluate_density(&s, s.position).unwrap();
        for i in -5..=5 {
            for j in -5..=5 {
                for k in -5..=5 {
                    let x = [
                        s.position[0] + 0.1 * i as f64,
                        s.position[1] + 0.1 * j as f64,
                        s.position[2] + 0.1 * k as f64,
                    ];
                    assert!(evaluate_density(&s, x).unwrap() <= peak);
                }
            }
        }
    }

    #[test]
    fn sh_lengths() {
        assert_eq!(sh_rest_len(0), 0);
        assert_eq!(sh_rest_len(1), 9);
        assert_eq!(sh_rest_len(3), 45);
        assert_eq!(sh_degree_for_rest_len(24), Some(2));
        assert_eq!(sh_degree_for_rest_len(5), None);
    }
}
