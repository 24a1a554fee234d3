use super::backward::{OFF_DC, OFF_OPACITY, OFF_POS, OFF_REST, OFF_ROT, OFF_SCALE, PARAMS_FIXED};
use super::{gradients, Image, LossConfig, RenderError};
use crate::gs::{sh_degree_for_rest_len, Camera, GaussianCloud, GaussianSplat};
use nalgebra::Vector3;
use rand::{seq::SliceRandom, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-15;

/// Per-group step sizes. `position` is multiplied by the scene extent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LearningRates {
    pub position: f64,
    pub opacity: f64,
    pub scale: f64,
    pub rotation: f64,
    pub sh_dc: f64,
    pub sh_rest: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            position: 1.6e-4,
            opacity: 0.05,
            scale: 5e-3,
            rotation: 1e-3,
            sh_dc: 2.5e-3,
            sh_rest: 1.25e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrainConfig {
    pub steps: usize,
    pub lr: LearningRates,
    pub seed: u64,
}

impl Default for RetrainConfig {
    fn default() -> Self {
        Self {
            steps: 500,
            lr: LearningRates::default(),
            seed: 0,
        }
    }
}

impl RetrainConfig {
    pub fn snapshot(&self) -> BTreeMap<String, String> {
        let lr = &self.lr;
        [
            ("retrain.steps", self.steps.to_string()),
            ("retrain.seed", self.seed.to_string()),
            ("retrain.lr.position", lr.position.to_string()),
            ("retrain.lr.opacity", lr.opacity.to_string()),
            ("retrain.lr.scale", lr.scale.to_string()),
            ("retrain.lr.rotation", lr.rotation.to_string()),
            ("retrain.lr.sh_dc", lr.sh_dc.to_string()),
            ("retrain.lr.sh_rest", lr.sh_rest.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }
}

#[derive(Debug, Clone)]
pub struct RetrainOutcome {
    pub patch: Vec<GaussianSplat>,
    /// Loss at every step, measured before that step's update.
    pub losses: Vec<f64>,
}

/// 1.1 × the largest camera distance from the camera centroid.
pub fn scene_extent(cams: &[Camera]) -> f64 {
    if cams.len() < 2 {
        return 1.0;
    }
    let centers: Vec<Vector3<f64>> = cams.iter().map(Camera::center).collect();
    let mean = centers.iter().sum::<Vector3<f64>>() / centers.len() as f64;
    let r = centers.iter().map(|c| (c - mean).norm()).fold(0.0, f64::max);
    if r > 0.0 {
        1.1 * r
    } else {
        1.0
    }
}

/// Adam over the patch parameters only; `sketch_decoded` is rendered in every
/// step but never modified.
pub fn retrain_patch(
    sketch_decoded: &[GaussianSplat],
    patch: &[GaussianSplat],
    cams: &[Camera],
    truths: &[Image],
    cfg: &RetrainConfig,
    loss_cfg: &LossConfig,
) -> Result<RetrainOutcome, RenderError> {
    if cams.len() != truths.len() {
        return Err(RenderError::ViewCount(cams.len(), truths.len()));
    }
    if cfg.steps == 0 || patch.is_empty() || cams.is_empty() {
        return Ok(RetrainOutcome {
            patch: patch.to_vec(),
            losses: Vec::new(),
        });
    }
    let rest = sketch_decoded.first().or(patch.first()).map_or(0, |s| s.sh_rest.len());
    let sh_degree = sh_degree_for_rest_len(rest).unwrap_or(0);
    let ns = sketch_decoded.len();
    let mut cloud = GaussianCloud::from_splats(sketch_decoded.iter().chain(patch).cloned().collect(), sh_degree);
    let trainable: Vec<bool> = (0..cloud.len()).map(|i| i >= ns).collect();

    let stride = PARAMS_FIXED + rest;
    let mut lr = vec![0.0; stride];
    let pos_lr = cfg.lr.position * scene_extent(cams);
    lr[OFF_POS..OFF_POS + 3].fill(pos_lr);
    lr[OFF_SCALE..OFF_SCALE + 3].fill(cfg.lr.scale);
    lr[OFF_ROT..OFF_ROT + 4].fill(cfg.lr.rotation);
    lr[OFF_OPACITY] = cfg.lr.opacity;
    lr[OFF_DC..OFF_DC + 3].fill(cfg.lr.sh_dc);
    lr[OFF_REST..].fill(cfg.lr.sh_rest);

    let np = patch.len();
    let mut m1 = vec![0.0; stride * np];
    let mut m2 = vec![0.0; stride * np];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = Vec::new();
    let mut losses = Vec::with_capacity(cfg.steps);

    for step in 1..=cfg.steps {
        if order.is_empty() {
            order = (0..cams.len()).collect();
            order.shuffle(&mut rng);
            order.reverse();
        }
        let view = order.pop().unwrap();
        let g = gradients(&cloud, &trainable, &cams[view], &truths[view], loss_cfg)?;
        losses.push(g.loss);
        let bc1 = 1.0 - BETA1.powi(step as i32);
        let bc2 = 1.0 - BETA2.powi(step as i32);
        for p in 0..np {
            let splat = &mut cloud.splats[ns + p];
            let gs = g.splat(ns + p);
            for (k, &gk) in gs.iter().enumerate() {
                let ix = p * stride + k;
                m1[ix] = BETA1 * m1[ix] + (1.0 - BETA1) * gk;
                m2[ix] = BETA2 * m2[ix] + (1.0 - BETA2) * gk * gk;
                let delta = lr[k] * (m1[ix] / bc1) / ((m2[ix] / bc2).sqrt() + ADAM_EPS);
                *param_mut(splat, k) -= delta;
            }
        }
    }
    Ok(RetrainOutcome {
        patch: cloud.splats.split_off(ns),
        losses,
    })
}

fn param_mut(s: &mut GaussianSplat, k: usize) -> &mut f64 {
    match k {
        0..3 => &mut s.position[k],
        3..6 => &mut s.log_scale[k - OFF_SCALE],
        6..10 => &mut s.rotation[k - OFF_ROT],
        10 => &mut s.opacity_logit,
        11..14 => &mut s.sh_dc[k - OFF_DC],
        _ => &mut s.sh_rest[k - OFF_REST],
    }
}
