//! Sketch/patch partitioning.
//!
//! Each splat ends up either in exactly one [`SketchGroup`] (attached to the
//! line it is closest to) or in the patch set. Candidates come from a radius
//! search around each segment and are filtered by independent RANSAC runs on
//! four attribute channels whose inlier sets are intersected.

use crate::gs::{GaussianCloud, GaussianSplat};
use crate::lines::{project_to_segment, LineSegment3D};
use crate::par;
use crate::sketch::{fit_poly, gather_channels, PolyModel};
use nalgebra::DMatrix;
use rand::{seq::index::sample, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

/// Inlier threshold used when the residual MAD is zero.
pub const EPSILON_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct PartitionConfig {
    pub radius_r: f64,
    /// MAD multiplier for the inlier threshold.
    pub eta: f64,
    pub ransac_iters: usize,
    pub min_group_size: usize,
    /// Polynomial degree of the RANSAC hypotheses.
    pub fit_degree: usize,
    pub iqr_multiplier: f64,
    pub alignment_cos_min: f64,
    pub seed: u64,
}

impl PartitionConfig {
    /// Defaults with an explicit radius.
    pub fn with_radius(radius_r: f64) -> Self {
        Self {
            radius_r,
            eta: 3.0,
            ransac_iters: 100,
            min_group_size: 8,
            fit_degree: 3,
            iqr_multiplier: 1.5,
            alignment_cos_min: 0.9,
            seed: 0,
        }
    }

    /// Defaults with the radius set to 0.5% of the scene's bounding-box diagonal.
    pub fn for_cloud(cloud: &GaussianCloud) -> Self {
        Self::with_radius(0.005 * cloud.bbox_diagonal())
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.radius_r > 0.0) {
            return Err(format!("radius must be positive, got {}", self.radius_r));
        }
        if !(self.eta > 0.0) {
            return Err(format!("eta must be positive, got {}", self.eta));
        }
        if self.ransac_iters == 0 {
            return Err("ransac_iters must be at least 1".into());
        }
        if self.min_group_size < 2 {
            return Err("min_group_size must be at least 2".into());
        }
        if self.fit_degree == 0 {
            return Err("fit_degree must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.alignment_cos_min) {
            return Err("alignment_cos_min must lie in [0, 1]".into());
        }
        Ok(())
    }

    /// Key/value snapshot for the container header.
    pub fn snapshot(&self) -> BTreeMap<String, String> {
        [
            ("partition.radius_r", format!("{:?}", self.radius_r)),
            ("partition.eta", format!("{:?}", self.eta)),
            ("partition.ransac_iters", self.ransac_iters.to_string()),
            ("partition.min_group_size", self.min_group_size.to_string()),
            ("partition.fit_degree", self.fit_degree.to_string()),
            ("partition.iqr_multiplier", format!("{:?}", self.iqr_multiplier)),
            ("partition.alignment_cos_min", format!("{:?}", self.alignment_cos_min)),
            ("partition.seed", self.seed.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SketchGroup {
    pub line_id: u32,
    pub member_indices: Vec<usize>,
    pub member_t: Vec<f64>,
}

impl SketchGroup {
    pub fn len(&self) -> usize {
        self.member_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.member_indices.is_empty()
    }

    /// Subgroup keeping only the listed member positions (not splat indices).
    pub fn subset(&self, positions: &[usize]) -> SketchGroup {
        SketchGroup {
            line_id: self.line_id,
            member_indices: positions.iter().map(|&p| self.member_indices[p]).collect(),
            member_t: positions.iter().map(|&p| self.member_t[p]).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PartitionResult {
    pub groups: Vec<SketchGroup>,
    pub patch_indices: Vec<usize>,
}

impl PartitionResult {
    pub fn sketch_count(&self) -> usize {
        self.groups.iter().map(SketchGroup::len).sum()
    }

    /// Disjoint and exhaustive over `0..n`.
    pub fn is_partition_of(&self, n: usize) -> bool {
        let mut seen = vec![false; n];
        let all = self
            .groups
            .iter()
            .flat_map(|g| g.member_indices.iter())
            .chain(&self.patch_indices);
        for &i in all {
            if i >= n || seen[i] {
                return false;
            }
            seen[i] = true;
        }
        seen.into_iter().all(|s| s)
    }
}

/// Splats whose center lies within `r` (inclusive) of the segment, with their clamped `t`.
pub fn radius_search(cloud: &GaussianCloud, seg: &LineSegment3D, r: f64) -> Vec<(usize, f64)> {
    cloud
        .splats
        .iter()
        .enumerate()
        .filter_map(|(i, s)| {
            let p = project_to_segment(s.position, seg);
            (p.distance <= r).then_some((i, p.t))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RansacOutcome {
    /// Sorted positions into the input list.
    pub inliers: Vec<usize>,
    /// Too few points to draw a sample; every point was passed through.
    pub degenerate: bool,
    pub threshold: f64,
}

fn median(v: &mut [f64]) -> f64 {
    let n = v.len();
    if n == 0 {
        return 0.0;
    }
    let mid = n / 2;
    let (_, &mut upper, _) = v.select_nth_unstable_by(mid, f64::total_cmp);
    if n % 2 == 1 {
        upper
    } else {
        let lower = v[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    }
}

fn residuals(model: &PolyModel, t: &[f64], values: &DMatrix<f64>) -> Vec<f64> {
    t.iter()
        .enumerate()
        .map(|(i, &ti)| {
            (0..model.k)
                .map(|c| (values[(i, c)] - model.eval_component(c, ti)).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .collect()
}

/// `ε = max(η · MAD, ε_floor)` where MAD is the median absolute deviation of
/// the samples from the model, i.e. the median residual norm.
fn threshold(res: &[f64], eta: f64) -> f64 {
    let mut scratch = res.to_vec();
    (eta * median(&mut scratch)).max(EPSILON_FLOOR)
}

fn inliers_within(res: &[f64], eps: f64) -> Vec<usize> {
    (0..res.len()).filter(|&i| res[i] <= eps).collect()
}

/// RANSAC over one attribute channel (`values` is `n × k`). Hypotheses are
/// degree-`fit_degree` polynomials through `fit_degree + 1` sampled points; the
/// winner (most inliers, then lowest median residual) is refit on its inliers
/// and the inlier set recomputed once against the refit model.
pub fn ransac_attribute(t: &[f64], values: &DMatrix<f64>, cfg: &PartitionConfig, seed: u64) -> RansacOutcome {
    let n = t.len();
    let sample_size = cfg.fit_degree + 1;
    if n < sample_size {
        return RansacOutcome {
            inliers: (0..n).collect(),
            degenerate: true,
            threshold: f64::INFINITY,
        };
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(usize, f64, Vec<usize>)> = None;
    for _ in 0..cfg.ransac_iters {
        let idx = sample(&mut rng, n, sample_size).into_vec();
        let ts: Vec<f64> = idx.iter().map(|&i| t[i]).collect();
        let vs = values.select_rows(idx.iter());
        let Ok(model) = fit_poly(&ts, &vs, cfg.fit_degree) else { continue };
        let res = residuals(&model, t, values);
        if res.iter().any(|r| !r.is_finite()) {
            continue;
        }
        let eps = threshold(&res, cfg.eta);
        let inl = inliers_within(&res, eps);
        let med = median(&mut res.clone());
        let better = match &best {
            None => true,
            Some((count, m, _)) => inl.len() > *count || (inl.len() == *count && med < *m),
        };
        if better {
            best = Some((inl.len(), med, inl));
        }
    }
    let Some((_, _, winners)) = best else {
        return RansacOutcome {
            inliers: (0..n).collect(),
            degenerate: true,
            threshold: f64::INFINITY,
        };
    };

    if winners.len() < sample_size {
        return RansacOutcome {
            inliers: winners,
            degenerate: false,
            threshold: EPSILON_FLOOR,
        };
    }
    let ts: Vec<f64> = winners.iter().map(|&i| t[i]).collect();
    let vs = values.select_rows(winners.iter());
    match fit_poly(&ts, &vs, cfg.fit_degree) {
        Ok(model) => {
            let res = residuals(&model, t, values);
            let eps = threshold(&res, cfg.eta);
            RansacOutcome {
                inliers: inliers_within(&res, eps),
                degenerate: false,
                threshold: eps,
            }
        }
        Err(_) => RansacOutcome {
            inliers: winners,
            degenerate: false,
            threshold: f64::NAN,
        },
    }
}

/// Intersection of sorted index sets.
pub fn intersect_inliers(sets: &[Vec<usize>]) -> Vec<usize> {
    let Some((first, rest)) = sets.split_first() else {
        return Vec::new();
    };
    first
        .iter()
        .copied()
        .filter(|i| rest.iter().all(|s| s.binary_search(i).is_ok()))
        .collect()
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Scale post-filter on decoded group splats. Members whose largest activated
/// scale exceeds `Q3 + k·IQR` are outliers; an outlier whose longest axis is
/// not aligned with the segment (`|cos| < alignment_cos_min`) is reclassified.
///
/// Returns `(kept, reclassified)` as splat indices.
pub fn iqr_scale_filter(
    group: &SketchGroup,
    decoded: &[GaussianSplat],
    seg: &LineSegment3D,
    cfg: &PartitionConfig,
) -> (Vec<usize>, Vec<usize>) {
    assert_eq!(group.len(), decoded.len(), "decoded splats must match group members");
    if group.len() < 4 {
        return (group.member_indices.clone(), Vec::new());
    }
    let max_scale: Vec<f64> = decoded
        .iter()
        .map(|s| s.log_scale.iter().copied().fold(f64::NEG_INFINITY, f64::max).exp())
        .collect();
    let mut sorted = max_scale.clone();
    sorted.sort_by(f64::total_cmp);
    let q1 = quantile(&sorted, 0.25);
    let q3 = quantile(&sorted, 0.75);
    let fence = q3 + cfg.iqr_multiplier * (q3 - q1);
    let dir = seg.direction();

    let mut kept = Vec::new();
    let mut moved = Vec::new();
    for (pos, &idx) in group.member_indices.iter().enumerate() {
        let reclassify = max_scale[pos] > fence
            && decoded[pos]
                .longest_axis()
                .map(|axis| axis.dot(&dir).abs() < cfg.alignment_cos_min)
                .unwrap_or(true);
        if reclassify {
            moved.push(idx);
        } else {
            kept.push(idx);
        }
    }
    (kept, moved)
}

fn mix_seed(seed: u64, a: u64, b: u64) -> u64 {
    // splitmix64 finalizer over the combined words.
    let mut z = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Nearest line (within `r`) for every splat, as `(line position, t, distance)`.
/// Ties go to the earlier line.
pub fn assign_nearest(cloud: &GaussianCloud, lines: &[LineSegment3D], r: f64) -> Vec<Option<(usize, f64)>> {
    par::map(&cloud.splats, |s| {
        let mut best: Option<(usize, f64, f64)> = None;
        for (li, seg) in lines.iter().enumerate() {
            let p = project_to_segment(s.position, seg);
            if p.distance <= r && best.is_none_or(|(_, _, d)| p.distance < d) {
                best = Some((li, p.t, p.distance));
            }
        }
        best.map(|(li, t, _)| (li, t))
    })
}

/// Per-line outcome of the RANSAC stage, kept for diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct LineVote {
    pub line_id: u32,
    pub candidates: usize,
    pub inliers: usize,
    pub degenerate_channels: usize,
}

/// Full partition. Candidates are assigned to their nearest line first, then
/// each line's candidates (sorted by `t`) are voted on independently.
pub fn partition(cloud: &GaussianCloud, lines: &[LineSegment3D], cfg: &PartitionConfig) -> PartitionResult {
    partition_with_votes(cloud, lines, cfg).0
}

pub fn partition_with_votes(
    cloud: &GaussianCloud,
    lines: &[LineSegment3D],
    cfg: &PartitionConfig,
) -> (PartitionResult, Vec<LineVote>) {
    let assignment = assign_nearest(cloud, lines, cfg.radius_r);
    let mut candidates: Vec<Vec<(usize, f64)>> = vec![Vec::new(); lines.len()];
    for (i, a) in assignment.iter().enumerate() {
        if let Some((li, t)) = *a {
            candidates[li].push((i, t));
        }
    }
    for c in &mut candidates {
        c.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    }

    let per_line = par::map_range(lines.len(), |li| {
        let cands = &candidates[li];
        let line_id = lines[li].id;
        let mut vote = LineVote {
            line_id,
            candidates: cands.len(),
            inliers: 0,
            degenerate_channels: 0,
        };
        if cands.len() < cfg.min_group_size {
            return (None, vote);
        }
        let members: Vec<usize> = cands.iter().map(|c| c.0).collect();
        let t: Vec<f64> = cands.iter().map(|c| c.1).collect();
        let ch = gather_channels(cloud, &members);
        let outcomes: Vec<RansacOutcome> = [&ch.opacity, &ch.color, &ch.scale, &ch.rotation]
            .iter()
            .enumerate()
            .map(|(k, values)| ransac_attribute(&t, values, cfg, mix_seed(cfg.seed, li as u64, k as u64)))
            .collect();
        vote.degenerate_channels = outcomes.iter().filter(|o| o.degenerate).count();
        let sets: Vec<Vec<usize>> = outcomes.into_iter().map(|o| o.inliers).collect();
        let keep = intersect_inliers(&sets);
        vote.inliers = keep.len();
        if keep.len() < cfg.min_group_size {
            return (None, vote);
        }
        let group = SketchGroup {
            line_id,
            member_indices: keep.iter().map(|&p| members[p]).collect(),
            member_t: keep.iter().map(|&p| t[p]).collect(),
        };
        (Some(group), vote)
    });

    let mut in_group = vec![false; cloud.len()];
    let mut groups = Vec::new();
    let mut votes = Vec::with_capacity(per_line.len());
    for (g, v) in per_line {
        if let Some(g) = g {
            for &i in &g.member_indices {
                in_group[i] = true;
            }
            groups.push(g);
        }
        votes.push(v);
    }
    let patch_indices = (0..cloud.len()).filter(|&i| !in_group[i]).collect();
    (PartitionResult { groups, patch_indices }, votes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    fn column(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_column_slice(v.len(), 1, v)
    }

    #[test]
    fn radius_search_is_inclusive() {
        let seg = LineSegment3D::new(0, [0.0; 3], [1.0, 0.0, 0.0]);
        let mut cloud = GaussianCloud::new(0);
        cloud.splats.push(GaussianSplat::at([0.5, 0.25, 0.0], 0));
        cloud.splats.push(GaussianSplat::at([0.5, 0.5, 0.0], 0));
        assert_eq!(radius_search(&cloud, &seg, 0.25), vec![(0, 0.5)]);
        assert!(radius_search(&cloud, &seg, 0.1).is_empty());
    }

    #[test]
    fn radius_search_matches_brute_force_and_is_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut cloud = GaussianCloud::new(0);
        for _ in 0..2000 {
            cloud.splats.push(GaussianSplat::at([0.0; 3].map(|_| rng.random_range(-1.0..1.0)), 0));
        }
        let seg = LineSegment3D::new(0, [-0.5, 0.1, 0.0], [0.6, -0.2, 0.3]);
        let mut prev: Vec<usize> = Vec::new();
        for r in [0.05, 0.1, 0.2, 0.4] {
            let got: Vec<usize> = radius_search(&cloud, &seg, r).into_iter().map(|x| x.0).collect();
            let want: Vec<usize> = (0..cloud.len())
                .filter(|&i| project_to_segment(cloud.splats[i].position, &seg).distance <= r)
                .collect();
            assert_eq!(got, want);
            assert!(prev.iter().all(|i| got.contains(i)));
            prev = got;
        }
    }

    #[test]
    fn exact_line_all_inliers() {
        let t: Vec<f64> = (0..30).map(|i| i as f64 / 29.0).collect();
        let v: Vec<f64> = t.iter().map(|x| 0.5 * x - 1.0).collect();
        let cfg = PartitionConfig {
            fit_degree: 1,
            ..PartitionConfig::with_radius(1.0)
        };
        let out = ransac_attribute(&t, &column(&v), &cfg, 0);
        assert_eq!(out.inliers, (0..30).collect::<Vec<_>>());
        assert!(!out.degenerate);
    }

    #[test]
    fn quadratic_with_planted_outliers() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let sigma = 0.02;
        let mad = 0.6745 * sigma;
        let noise = Normal::new(0.0, sigma).unwrap();
        let mut t = Vec::new();
        let mut v = Vec::new();
        let mut outlier = Vec::new();
        for i in 0..100 {
            let ti: f64 = rng.random();
            let clean = 1.0 + ti - 2.0 * ti * ti + noise.sample(&mut rng);
            let bad = i % 5 == 0;
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            v.push(if bad { clean + sign * 10.0 * mad } else { clean });
            t.push(ti);
            outlier.push(bad);
        }
        let cfg = PartitionConfig::with_radius(1.0);
        let out = ransac_attribute(&t, &column(&v), &cfg, 11);
        let kept_out = out.inliers.iter().filter(|&&i| outlier[i]).count();
        let kept_clean = out.inliers.iter().filter(|&&i| !outlier[i]).count();
        assert!(kept_out as f64 <= 0.05 * 20.0, "kept {kept_out} outliers");
        assert!(kept_clean as f64 >= 0.95 * 80.0, "kept {kept_clean} clean");
    }

    #[test]
    fn constant_with_single_extreme() {
        let t: Vec<f64> = (0..20).map(|i| i as f64 / 19.0).collect();
        let mut v = vec![0.7; 20];
        v[13] = 50.0;
        let out = ransac_attribute(&t, &column(&v), &PartitionConfig::with_radius(1.0), 2);
        assert!(!out.inliers.contains(&13));
        assert_eq!(out.inliers.len(), 19);
    }

    #[test]
    fn too_few_points_pass_through() {
        let out = ransac_attribute(&[0.0, 1.0], &column(&[1.0, 2.0]), &PartitionConfig::with_radius(1.0), 0);
        assert!(out.degenerate);
        assert_eq!(out.inliers, vec![0, 1]);
    }

    #[test]
    fn intersection_cases() {
        let a = vec![1, 3, 5, 7];
        assert_eq!(intersect_inliers(&[a.clone(), a.clone(), a.clone(), a.clone()]), a);
        assert!(intersect_inliers(&[a.clone(), vec![], a.clone(), a.clone()]).is_empty());

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let bits: Vec<Vec<bool>> = (0..4).map(|_| (0..64).map(|_| rng.random_bool(0.7)).collect()).collect();
            let sets: Vec<Vec<usize>> = bits.iter().map(|b| (0..64).filter(|&i| b[i]).collect()).collect();
            let want: Vec<usize> = (0..64).filter(|&i| bits.iter().all(|b| b[i])).collect();
            assert_eq!(intersect_inliers(&sets), want);
        }
    }

    fn filter_case(outlier_rotation: [f64; 4]) -> (Vec<usize>, Vec<usize>) {
        let seg = LineSegment3D::new(0, [0.0; 3], [1.0, 0.0, 0.0]);
        let n = 20;
        let group = SketchGroup {
            line_id: 0,
            member_indices: (100..100 + n).collect(),
            member_t: (0..n).map(|i| i as f64 / (n - 1) as f64).collect(),
        };
        let decoded: Vec<GaussianSplat> = (0..n)
            .map(|i| {
                let mut s = GaussianSplat::at([i as f64 / (n - 1) as f64, 0.0, 0.0], 0);
                s.log_scale = [(0.01f64).ln(), (0.005f64).ln(), (0.005f64).ln()];
                if i == 7 {
                    s.log_scale[0] = (1.0f64).ln();
                    s.rotation = outlier_rotation;
                }
                s
            })
            .collect();
        iqr_scale_filter(&group, &decoded, &seg, &PartitionConfig::with_radius(0.1))
    }

    #[test]
    fn perpendicular_outlier_reclassified() {
        // 90° about z maps the long x axis onto y.
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let (kept, moved) = filter_case([h, 0.0, 0.0, h]);
        assert_eq!(moved, vec![107]);
        assert_eq!(kept.len(), 19);
    }

    #[test]
    fn parallel_outlier_kept() {
        let (kept, moved) = filter_case([1.0, 0.0, 0.0, 0.0]);
        assert!(moved.is_empty());
        assert_eq!(kept.len(), 20);
    }

    #[test]
    fn identical_scales_no_outliers() {
        let seg = LineSegment3D::new(0, [0.0; 3], [1.0, 0.0, 0.0]);
        let group = SketchGroup {
            line_id: 0,
            member_indices: (0..10).collect(),
            member_t: vec![0.5; 10],
        };
        let decoded = vec![GaussianSplat::at([0.5, 0.0, 0.0], 0); 10];
        let (kept, moved) = iqr_scale_filter(&group, &decoded, &seg, &PartitionConfig::with_radius(0.1));
        assert_eq!(kept.len(), 10);
        assert!(moved.is_empty());
    }

    #[test]
    fn small_group_unfiltered() {
        let seg = LineSegment3D::new(0, [0.0; 3], [1.0, 0.0, 0.0]);
        let group = SketchGroup {
            line_id: 0,
            member_indices: vec![0, 1, 2],
            member_t: vec![0.0, 0.5, 1.0],
        };
        let mut decoded = vec![GaussianSplat::at([0.0; 3], 0); 3];
        decoded[1].log_scale = [5.0, 0.0, 0.0];
        let (kept, moved) = iqr_scale_filter(&group, &decoded, &seg, &PartitionConfig::with_radius(0.1));
        assert_eq!(kept, vec![0, 1, 2]);
        assert!(moved.is_empty());
    }

    fn smooth_line_cloud(lines: &[LineSegment3D], per: usize, seed: u64) -> GaussianCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 0.01).unwrap();
        let mut cloud = GaussianCloud::new(0);
        for l in lines {
            for _ in 0..per {
                let t: f64 = rng.random_range(0.05..0.95);
                let mut s = GaussianSplat::at(l.point_at(t).into(), 0);
                s.opacity_logit = 1.0 + t + noise.sample(&mut rng);
                s.sh_dc = [0.2 * t, 0.5, -0.3 + t * t].map(|v| v + noise.sample(&mut rng));
                s.log_scale = [-3.0 + 0.2 * t, -4.0, -4.0].map(|v| v + noise.sample(&mut rng));
                s.rotation = [1.0, 0.1 * t, 0.0, 0.0].map(|v| v + 0.1 * noise.sample(&mut rng));
                cloud.splats.push(s);
            }
        }
        cloud
    }

    #[test]
    fn no_lines_all_patch() {
        let cloud = smooth_line_cloud(&[LineSegment3D::new(0, [0.0; 3], [1.0, 0.0, 0.0])], 20, 0);
        let r = partition(&cloud, &[], &PartitionConfig::with_radius(0.1));
        assert!(r.groups.is_empty());
        assert_eq!(r.patch_indices, (0..20).collect::<Vec<_>>());
    }

    #[test]
    fn splat_between_two_lines_goes_to_nearest() {
        let lines = vec![
            LineSegment3D::new(0, [0.0, 0.0, 0.0], [1.0, 0.0, 0.0]),
            LineSegment3D::new(1, [0.0, 0.1, 0.0], [1.0, 0.1, 0.0]),
        ];
        let mut cloud = smooth_line_cloud(&lines, 40, 2);
        let mut shared = cloud.splats[5].clone();
        shared.position = [0.5, 0.03, 0.0];
        cloud.splats.push(shared);
        let idx = cloud.len() - 1;
        let cfg = PartitionConfig::with_radius(0.08);
        let r = partition(&cloud, &lines, &cfg);
        assert!(r.is_partition_of(cloud.len()));
        let hits: Vec<u32> = r
            .groups
            .iter()
            .filter(|g| g.member_indices.contains(&idx))
            .map(|g| g.line_id)
            .collect();
        assert!(hits.len() <= 1);
        assert!(!r.groups.iter().any(|g| g.line_id == 1 && g.member_indices.contains(&idx)));
        let assigned = assign_nearest(&cloud, &lines, cfg.radius_r);
        assert_eq!(assigned[idx].map(|a| a.0), Some(0));
    }

    #[test]
    fn partition_is_deterministic_and_exhaustive() {
        let lines = vec![
            LineSegment3D::new(0, [0.0, 0.0, 0.0], [1.0, 0.0, 0.0]),
            LineSegment3D::new(1, [0.0, 1.0, 0.0], [0.0, 1.0, 1.0]),
        ];
        let mut cloud = smooth_line_cloud(&lines, 60, 3);
        // Filler well away from both lines.
        for i in 0..50 {
            cloud.splats.push(GaussianSplat::at([0.5, 0.5, 0.3 + i as f64 * 0.01], 0));
        }
        let cfg = PartitionConfig::with_radius(0.05);
        let a = partition(&cloud, &lines, &cfg);
        let b = partition(&cloud, &lines, &cfg);
        assert_eq!(a, b);
        assert!(a.is_partition_of(cloud.len()));
        assert!(a.groups.iter().all(|g| g.member_indices.iter().all(|&i| i < 120)));
        let planted_in_right_group: usize = a
            .groups
            .iter()
            .map(|g| {
                let lo = g.line_id as usize * 60;
                g.member_indices.iter().filter(|&&i| (lo..lo + 60).contains(&i)).count()
            })
            .sum();
        assert!(planted_in_right_group as f64 >= 0.9 * 120.0, "{planted_in_right_group}");
        for g in &a.groups {
            let seg = &lines[g.line_id as usize];
            for (i, t) in g.member_indices.iter().zip(&g.member_t) {
                assert_eq!(*t, project_to_segment(cloud.splats[*i].position, seg).t);
            }
        }
    }
}
