//! Sequential RANSAC line extraction over splat centers.
//!
//! A small stand-in for multi-view line reconstruction, good enough to build
//! synthetic test scenes and to bootstrap priors when no line file exists.

use super::LineSegment3D;
use crate::gs::GaussianCloud;
use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct ExtractionConfig {
    pub inlier_radius: f64,
    pub min_inliers: usize,
    pub max_lines: usize,
    pub iterations: usize,
    pub seed: u64,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        Self {
            inlier_radius: 0.01,
            min_inliers: 30,
            max_lines: 64,
            iterations: 500,
            seed: 0,
        }
    }
}

const TRIM_LO: f64 = 0.01;
const TRIM_HI: f64 = 0.99;

fn dist_to_line(p: &Vector3<f64>, origin: &Vector3<f64>, dir: &Vector3<f64>) -> f64 {
    let d = p - origin;
    (d - dir * d.dot(dir)).norm()
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Principal axis (centroid, unit direction) of a point set.
fn fit_axis(points: &[Vector3<f64>]) -> (Vector3<f64>, Vector3<f64>) {
    let n = points.len() as f64;
    let c = points.iter().sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - c;
        cov += d * d.transpose();
    }
    let eig = cov.symmetric_eigen();
    let k = eig.eigenvalues.imax();
    (c, eig.eigenvectors.column(k).into_owned())
}

/// Repeatedly fits the best-supported line, trims it to its inlier extent,
/// and removes its inliers. Deterministic for a given seed.
pub fn extract_lines_from_points(cloud: &GaussianCloud, cfg: &ExtractionConfig) -> Vec<LineSegment3D> {
    let points: Vec<Vector3<f64>> = cloud.splats.iter().map(|s| s.center()).collect();
    let min_len = 1e-6 * cloud.bbox_diagonal();
    let min_inliers = cfg.min_inliers.max(2);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut remaining: Vec<usize> = (0..points.len()).collect();
    let mut out = Vec::new();

    while out.len() < cfg.max_lines && remaining.len() >= min_inliers {
        let mut best: Option<(usize, Vector3<f64>, Vector3<f64>)> = None;
        for _ in 0..cfg.iterations {
            let a = rng.random_range(0..remaining.len());
            let mut b = rng.random_range(0..remaining.len() - 1);
            if b >= a {
                b += 1;
            }
            let pa = points[remaining[a]];
            let d = points[remaining[b]] - pa;
            if d.norm() <= f64::EPSILON * (1.0 + pa.norm()) {
                continue;
            }
            let dir = d.normalize();
            let support = remaining
                .iter()
                .filter(|&&i| dist_to_line(&points[i], &pa, &dir) <= cfg.inlier_radius)
                .count();
            if best.as_ref().is_none_or(|(s, _, _)| support > *s) {
                best = Some((support, pa, dir));
            }
        }
        let Some((support, mut origin, mut dir)) = best else { break };
        if support < min_inliers {
            break;
        }

        // Refine with a least-squares axis through the consensus set.
        let mut inliers: Vec<usize> = Vec::new();
        for _ in 0..2 {
            inliers = remaining
                .iter()
                .copied()
                .filter(|&i| dist_to_line(&points[i], &origin, &dir) <= cfg.inlier_radius)
                .collect();
            if inliers.len() < 2 {
                break;
            }
            let pts: Vec<_> = inliers.iter().map(|&i| points[i]).collect();
            (origin, dir) = fit_axis(&pts);
        }
        if inliers.len() < min_inliers {
            break;
        }

        let mut ts: Vec<f64> = inliers.iter().map(|&i| (points[i] - origin).dot(&dir)).collect();
        ts.sort_by(f64::total_cmp);
        let (q_lo, q_hi) = (quantile(&ts, TRIM_LO), quantile(&ts, TRIM_HI));
        // Percentiles of a uniform spread sit inside the true extent; undo that bias.
        let extent = (q_hi - q_lo) / (TRIM_HI - TRIM_LO);
        let t0 = q_lo - TRIM_LO * extent;
        let t1 = t0 + extent;

        remaining.retain(|i| inliers.binary_search(i).is_err());
        if extent > min_len && extent > 0.0 {
            let p0 = origin + dir * t0;
            let p1 = origin + dir * t1;
            out.push(LineSegment3D::new(out.len() as u32, p0.into(), p1.into()));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gs::GaussianSplat;
    use rand_distr::{Distribution, Normal};

    fn cloud_on(segments: &[([f64; 3], [f64; 3])], per: usize, sigma: f64, seed: u64) -> GaussianCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, sigma).unwrap();
        let mut cloud = GaussianCloud::new(0);
        for &(a, b) in segments {
            for _ in 0..per {
                let t: f64 = rng.random();
                let p = [0, 1, 2].map(|k| a[k] + t * (b[k] - a[k]) + noise.sample(&mut rng));
                cloud.splats.push(GaussianSplat::at(p, 0));
            }
        }
        cloud
    }

    fn angle_deg(a: Vector3<f64>, b: Vector3<f64>) -> f64 {
        a.normalize().dot(&b.normalize()).abs().min(1.0).acos().to_degrees()
    }

    #[test]
    fn recovers_single_segment() {
        let radius = 0.05;
        let sigma = radius / 5.0;
        let (a, b) = ([0.2, -0.1, 0.3], [1.0, 0.4, 0.1]);
        let cloud = cloud_on(&[(a, b)], 500, sigma, 1);
        let cfg = ExtractionConfig {
            inlier_radius: radius,
            min_inliers: 50,
            max_lines: 4,
            iterations: 200,
            seed: 3,
        };
        let lines = extract_lines_from_points(&cloud, &cfg);
        assert_eq!(lines.len(), 1);
        let l = &lines[0];
        let truth = Vector3::from(b) - Vector3::from(a);
        assert!(angle_deg(l.delta(), truth) < 2.0);
        // Endpoint order is arbitrary.
        let (s, e) = if (l.start() - Vector3::from(a)).norm() < (l.end() - Vector3::from(a)).norm() {
            (l.start(), l.end())
        } else {
            (l.end(), l.start())
        };
        assert!((s - Vector3::from(a)).norm() < 2.0 * sigma, "{s:?}");
        assert!((e - Vector3::from(b)).norm() < 2.0 * sigma, "{e:?}");
    }

    #[test]
    fn two_orthogonal_edges() {
        let radius = 0.03;
        let segs = [([0.0, 0.0, 0.0], [1.0, 0.0, 0.0]), ([0.0, 0.2, 0.5], [0.0, 1.2, 0.5])];
        let cloud = cloud_on(&segs, 200, radius / 5.0, 2);
        let cfg = ExtractionConfig {
            inlier_radius: radius,
            min_inliers: 40,
            max_lines: 10,
            iterations: 300,
            seed: 4,
        };
        let lines = extract_lines_from_points(&cloud, &cfg);
        assert_eq!(lines.len(), 2);
        for (a, b) in segs {
            let truth = Vector3::from(b) - Vector3::from(a);
            assert!(lines.iter().any(|l| angle_deg(l.delta(), truth) < 2.0));
        }
    }

    #[test]
    fn too_few_points() {
        let cloud = cloud_on(&[([0.0; 3], [1.0, 0.0, 0.0])], 10, 0.001, 0);
        let cfg = ExtractionConfig {
            min_inliers: 11,
            ..Default::default()
        };
        assert!(extract_lines_from_points(&cloud, &cfg).is_empty());
    }

    #[test]
    fn rigid_transform_invariance() {
        let segs = [([0.0, 0.0, 0.0], [1.0, 0.0, 0.0]), ([0.0, 0.2, 0.5], [0.0, 1.2, 0.5])];
        let cloud = cloud_on(&segs, 150, 0.004, 8);
        let cfg = ExtractionConfig {
            inlier_radius: 0.02,
            min_inliers: 40,
            max_lines: 10,
            iterations: 200,
            seed: 1,
        };
        let rot = nalgebra::Rotation3::from_euler_angles(0.3, -0.7, 1.1);
        let shift = Vector3::new(0.5, -2.0, 3.0);
        let mut moved = cloud.clone();
        for s in &mut moved.splats {
            s.position = (rot * s.center() + shift).into();
        }
        let a = extract_lines_from_points(&cloud, &cfg);
        let b = extract_lines_from_points(&moved, &cfg);
        assert_eq!(a.len(), b.len());
        for (la, lb) in a.iter().zip(&b) {
            let s = rot * la.start() + shift;
            let e = rot * la.end() + shift;
            let direct = (s - lb.start()).norm().max((e - lb.end()).norm());
            let swapped = (s - lb.end()).norm().max((e - lb.start()).norm());
            assert!(direct.min(swapped) < 1e-6, "{direct} {swapped}");
        }
    }
}
