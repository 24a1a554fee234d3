use nalgebra::{Matrix3, Matrix4, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CameraError {
    #[error("camera file: {0}")]
    Json(#[from] serde_json::Error),
    #[error("camera {index}: {reason}")]
    Invalid { index: usize, reason: String },
}

/// Pinhole camera. Camera space is x right, y down, z forward; pixel `(i, j)`
/// covers `[i, i+1) × [j, j+1)` so its center sits at `(i + 0.5, j + 0.5)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub world_to_camera: Matrix4<f64>,
    pub focal: [f64; 2],
    pub principal_point: [f64; 2],
    pub resolution: [u32; 2],
}

#[derive(Serialize, Deserialize)]
struct CameraRecord {
    world_to_camera: [f64; 16],
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: u32,
    height: u32,
}

impl Camera {
    /// Camera at `eye` looking at `target`; principal point at the image center.
    pub fn look_at(eye: [f64; 3], target: [f64; 3], up: [f64; 3], focal: f64, width: u32, height: u32) -> Self {
        let eye = Vector3::from(eye);
        let forward = (Vector3::from(target) - eye).normalize();
        let right = forward.cross(&Vector3::from(up)).normalize();
        let down = forward.cross(&right);
        let rot = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let t = -(rot * eye);
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&rot);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&t);
        Self {
            world_to_camera: m,
            focal: [focal, focal],
            principal_point: [width as f64 / 2.0, height as f64 / 2.0],
            resolution: [width, height],
        }
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        self.world_to_camera.fixed_view::<3, 3>(0, 0).into_owned()
    }

    pub fn translation(&self) -> Vector3<f64> {
        self.world_to_camera.fixed_view::<3, 1>(0, 3).into_owned()
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation().transpose() * self.translation())
    }

    pub fn width(&self) -> usize {
        self.resolution[0] as usize
    }

    pub fn height(&self) -> usize {
        self.resolution[1] as usize
    }

    pub fn validate(&self) -> Result<(), String> {
        let r = self.rotation();
        let err = (r * r.transpose() - Matrix3::identity()).amax();
        if !(err <= 1e-6) {
            return Err(format!("rotation block not orthonormal (error {err:e})"));
        }
        if !(self.focal[0] > 0.0 && self.focal[1] > 0.0) {
            return Err("focal lengths must be positive".into());
        }
        if self.resolution[0] == 0 || self.resolution[1] == 0 {
            return Err("resolution must be non-zero".into());
        }
        Ok(())
    }
}

/// Parses a JSON list of camera records.
pub fn load_cameras(text: &str) -> Result<Vec<Camera>, CameraError> {
    let records: Vec<CameraRecord> = serde_json::from_str(text)?;
    records
        .into_iter()
        .enumerate()
        .map(|(index, r)| {
            let cam = Camera {
                world_to_camera: Matrix4::from_row_slice(&r.world_to_camera),
                focal: [r.fx, r.fy],
                principal_point: [r.cx, r.cy],
                resolution: [r.width, r.height],
            };
            cam.validate().map_err(|reason| CameraError::Invalid { index, reason })?;
            Ok(cam)
        })
        .collect()
}

pub fn save_cameras(cams: &[Camera]) -> String {
    let records: Vec<CameraRecord> = cams
        .iter()
        .map(|c| {
            let mut m = [0.0; 16];
            for r in 0..4 {
                for col in 0..4 {
                    m[r * 4 + col] = c.world_to_camera[(r, col)];
                }
            }
            CameraRecord {
                world_to_camera: m,
                fx: c.focal[0],
                fy: c.focal[1],
                cx: c.principal_point[0],
                cy: c.principal_point[1],
                width: c.resolution[0],
                height: c.resolution[1],
            }
        })
        .collect();
    serde_json::to_string_pretty(&records).expect("camera records serialize")
}
