//! End-to-end encode, evaluation, and rate-distortion sweeps.

use crate::container::{decode_full, read_hybrid, write_hybrid, ContainerError, HybridModel, SizeBreakdown};
use crate::gs::{ply::raw_splat_bytes, Camera, GaussianCloud};
use crate::lines::{select_longest, LineSegment3D};
use crate::par;
use crate::partition::{iqr_scale_filter, partition, PartitionConfig, SketchGroup};
use crate::patch::{prune_uniform, quantize_patch_with, DEFAULT_KMEANS_ITERS};
use crate::render::{psnr, render, retrain_patch, ssim_with, Image, LossConfig, RetrainConfig};
use crate::sketch::{decode_group, encode_group, SketchLineBlock};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Input,
    Partition,
    SketchEncode,
    Reclassify,
    Prune,
    Retrain,
    Quantize,
    Container,
    Eval,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Input => "input",
            Stage::Partition => "partition",
            Stage::SketchEncode => "sketch-encode",
            Stage::Reclassify => "reclassify",
            Stage::Prune => "prune",
            Stage::Retrain => "retrain",
            Stage::Quantize => "quantize",
            Stage::Container => "container",
            Stage::Eval => "eval",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
#[error("{stage}: {message}")]
pub struct PipelineError {
    pub stage: Stage,
    pub message: String,
}

fn fail(stage: Stage) -> impl Fn(String) -> PipelineError {
    move |message| PipelineError { stage, message }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodeConfig {
    /// `None` derives the radius from the cloud (0.5% of its diagonal).
    pub radius: Option<f64>,
    pub partition: PartitionConfig,
    pub line_fraction: f64,
    pub prune_factor: f64,
    pub prune_seed: u64,
    pub vq_seed: u64,
    pub kmeans_iters: usize,
    pub retrain: Option<RetrainConfig>,
    pub loss: LossConfig,
}

impl Default for EncodeConfig {
    fn default() -> Self {
        Self {
            radius: None,
            partition: PartitionConfig::with_radius(1.0),
            line_fraction: 1.0,
            prune_factor: 1.0,
            prune_seed: 0,
            vq_seed: 0,
            kmeans_iters: DEFAULT_KMEANS_ITERS,
            retrain: None,
            loss: LossConfig::default(),
        }
    }
}

/// Training views for the optional retraining stage.
#[derive(Debug, Clone, Copy)]
pub struct Views<'a> {
    pub cameras: &'a [Camera],
    pub images: &'a [Image],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodeReport {
    pub input_splats: usize,
    pub lines_used: usize,
    pub sketch_groups: usize,
    pub sketch_splats: usize,
    /// Members moved from sketch groups to the patch set by the scale filter
    /// or because their group fell below the minimum size.
    pub reclassified: usize,
    pub patch_before_prune: usize,
    pub patch_splats: usize,
    pub raw_ply_bytes: usize,
    pub raw_sketch_bytes: usize,
    pub raw_patch_bytes: usize,
    pub header_bytes: usize,
    pub sketch_bytes: usize,
    pub patch_bytes: usize,
    pub total_bytes: usize,
    /// Sketch splats over all stored splats.
    pub sketch_ratio: f64,
    pub retrain_steps: usize,
    pub retrain_first_loss: Option<f64>,
    pub retrain_last_loss: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct EncodeOutput {
    pub model: HybridModel,
    pub bytes: Vec<u8>,
    pub report: EncodeReport,
}

/// PLY size of a cloud in the canonical layout (header plus 4 bytes per property).
pub fn raw_ply_size(cloud: &GaussianCloud) -> usize {
    crate::gs::ply::save_ply(&GaussianCloud::new(cloud.sh_degree)).len() + cloud.len() * raw_splat_bytes(cloud.sh_degree)
}

struct SketchStage {
    blocks: Vec<SketchLineBlock>,
    reclassified: Vec<usize>,
}

fn encode_sketch(
    cloud: &GaussianCloud,
    groups: &[SketchGroup],
    lines: &[LineSegment3D],
    cfg: &PartitionConfig,
) -> Result<SketchStage, PipelineError> {
    let by_id: HashMap<u32, &LineSegment3D> = lines.iter().map(|l| (l.id, l)).collect();
    let results = par::map(groups, |g| -> Result<(Option<SketchLineBlock>, Vec<usize>), PipelineError> {
        let seg = by_id[&g.line_id];
        let block = encode_group(cloud, g, seg).map_err(|e| fail(Stage::SketchEncode)(e.to_string()))?;
        let decoded = decode_group(&block, cloud.sh_degree).map_err(|e| fail(Stage::SketchEncode)(e.to_string()))?;
        let (kept, moved) = iqr_scale_filter(g, &decoded, seg, cfg);
        if moved.is_empty() {
            return Ok((Some(block), Vec::new()));
        }
        if kept.len() < cfg.min_group_size {
            return Ok((None, g.member_indices.clone()));
        }
        let keep_pos: Vec<usize> = (0..g.len()).filter(|&p| !moved.contains(&g.member_indices[p])).collect();
        let sub = g.subset(&keep_pos);
        let block = encode_group(cloud, &sub, seg).map_err(|e| fail(Stage::Reclassify)(e.to_string()))?;
        Ok((Some(block), moved))
    });
    let mut blocks = Vec::new();
    let mut reclassified = Vec::new();
    for r in results {
        let (b, moved) = r?;
        blocks.extend(b);
        reclassified.extend(moved);
    }
    reclassified.sort_unstable();
    Ok(SketchStage { blocks, reclassified })
}

pub fn encode(
    cloud: &GaussianCloud,
    lines: &[LineSegment3D],
    cfg: &EncodeConfig,
    views: Option<Views<'_>>,
) -> Result<EncodeOutput, PipelineError> {
    cloud.validate().map_err(fail(Stage::Input))?;
    if !(cfg.prune_factor >= 1.0) {
        return Err(fail(Stage::Prune)(format!("pruning factor must be >= 1, got {}", cfg.prune_factor)));
    }
    let mut pcfg = cfg.partition.clone();
    pcfg.radius_r = cfg.radius.unwrap_or_else(|| PartitionConfig::for_cloud(cloud).radius_r);
    if cloud.is_empty() && cfg.radius.is_none() {
        pcfg.radius_r = 1.0;
    }
    pcfg.validate().map_err(fail(Stage::Partition))?;

    let used = select_longest(lines, cfg.line_fraction);
    let parts = partition(cloud, &used, &pcfg);
    let sketch = encode_sketch(cloud, &parts.groups, &used, &pcfg)?;

    let mut patch_all = parts.patch_indices.clone();
    patch_all.extend(&sketch.reclassified);
    patch_all.sort_unstable();
    let kept = prune_uniform(&patch_all, cfg.prune_factor, cfg.prune_seed);

    let mut patch_cloud = cloud.select(&kept);
    let mut retrain_losses = Vec::new();
    if let Some(rcfg) = &cfg.retrain {
        let v = views.ok_or_else(|| fail(Stage::Retrain)("retraining needs cameras and images".into()))?;
        let mut sketch_decoded = Vec::new();
        for b in &sketch.blocks {
            sketch_decoded.extend(decode_group(b, cloud.sh_degree).map_err(|e| fail(Stage::Retrain)(e.to_string()))?);
        }
        let out = retrain_patch(&sketch_decoded, &patch_cloud.splats, v.cameras, v.images, rcfg, &cfg.loss)
            .map_err(|e| fail(Stage::Retrain)(e.to_string()))?;
        patch_cloud.splats = out.patch;
        retrain_losses = out.losses;
        if !patch_cloud.splats.iter().all(|s| s.is_finite()) {
            return Err(fail(Stage::Retrain)("retraining produced non-finite parameters".into()));
        }
    }

    let all: Vec<usize> = (0..patch_cloud.len()).collect();
    let patch = quantize_patch_with(&patch_cloud, &all, cfg.vq_seed, cfg.kmeans_iters);

    let mut config: BTreeMap<String, String> = pcfg.snapshot();
    config.insert("encode.line_fraction".into(), format!("{:?}", cfg.line_fraction));
    config.insert("encode.lines_used".into(), used.len().to_string());
    config.insert("encode.prune_factor".into(), format!("{:?}", cfg.prune_factor));
    config.insert("encode.prune_seed".into(), cfg.prune_seed.to_string());
    config.insert("encode.vq_seed".into(), cfg.vq_seed.to_string());
    config.insert("encode.kmeans_iters".into(), cfg.kmeans_iters.to_string());
    config.insert("encode.retrain".into(), if cfg.retrain.is_some() { "on" } else { "off" }.into());
    if let Some(r) = &cfg.retrain {
        config.extend(r.snapshot());
        config.insert("loss.lambda".into(), format!("{:?}", cfg.loss.lambda));
    }

    let model = HybridModel {
        sh_degree: cloud.sh_degree,
        config,
        sketch_blocks: sketch.blocks,
        patch,
    };
    let bytes = write_hybrid(&model).map_err(|e| fail(Stage::Container)(e.to_string()))?;
    let sizes = model.size_breakdown();
    debug_assert_eq!(sizes.total, bytes.len());

    let sketch_splats = model.sketch_splats();
    let stored = sketch_splats + model.patch.count;
    let per = raw_splat_bytes(cloud.sh_degree);
    let report = EncodeReport {
        input_splats: cloud.len(),
        lines_used: used.len(),
        sketch_groups: model.sketch_blocks.len(),
        sketch_splats,
        reclassified: sketch.reclassified.len(),
        patch_before_prune: patch_all.len(),
        patch_splats: model.patch.count,
        raw_ply_bytes: raw_ply_size(cloud),
        raw_sketch_bytes: sketch_splats * per,
        raw_patch_bytes: model.patch.count * per,
        header_bytes: sizes.header,
        sketch_bytes: sizes.sketch,
        patch_bytes: sizes.patch,
        total_bytes: sizes.total,
        sketch_ratio: if stored == 0 { 0.0 } else { sketch_splats as f64 / stored as f64 },
        retrain_steps: retrain_losses.len(),
        retrain_first_loss: retrain_losses.first().copied(),
        retrain_last_loss: retrain_losses.last().copied(),
    };
    log::info!(
        "encoded {} splats: {} sketch in {} groups, {} patch kept of {}, {} bytes",
        cloud.len(),
        sketch_splats,
        report.sketch_groups,
        report.patch_splats,
        report.patch_before_prune,
        report.total_bytes
    );
    Ok(EncodeOutput { model, bytes, report })
}

/// Parses and fully decodes an `SKPH` file.
pub fn decode_bytes(bytes: &[u8]) -> Result<GaussianCloud, ContainerError> {
    decode_full(&read_hybrid(bytes)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViewMetrics {
    pub view: usize,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub views: Vec<ViewMetrics>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
}

/// Renders every camera, quantizes to 8 bits (the truth images' precision),
/// and scores against the paired truth image.
pub fn evaluate(cloud: &GaussianCloud, cameras: &[Camera], truths: &[Image]) -> Result<EvalResult, PipelineError> {
    if cameras.len() != truths.len() {
        return Err(fail(Stage::Eval)(format!("{} cameras but {} images", cameras.len(), truths.len())));
    }
    let cfg = LossConfig::default();
    let mut views = Vec::with_capacity(cameras.len());
    for (i, (cam, truth)) in cameras.iter().zip(truths).enumerate() {
        let img = render(cloud, cam).quantized();
        let err = |e: crate::render::RenderError| fail(Stage::Eval)(format!("view {i}: {e}"));
        views.push(ViewMetrics {
            view: i,
            psnr: psnr(&img, truth).map_err(err)?,
            ssim: ssim_with(&img, truth, &cfg).map_err(err)?,
        });
    }
    let n = views.len().max(1) as f64;
    Ok(EvalResult {
        mean_psnr: views.iter().map(|v| v.psnr).sum::<f64>() / n,
        mean_ssim: views.iter().map(|v| v.ssim).sum::<f64>() / n,
        views,
    })
}

#[derive(Serialize, Deserialize)]
struct EvalRow {
    view: String,
    psnr: f64,
    ssim: f64,
}

impl EvalResult {
    /// `view,psnr,ssim` with one row per view and a final `mean` row.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        for v in &self.views {
            w.serialize(EvalRow {
                view: v.view.to_string(),
                psnr: v.psnr,
                ssim: v.ssim,
            })
            .expect("in-memory csv write");
        }
        w.serialize(EvalRow {
            view: "mean".into(),
            psnr: self.mean_psnr,
            ssim: self.mean_ssim,
        })
        .expect("in-memory csv write");
        String::from_utf8(w.into_inner().expect("in-memory csv flush")).expect("csv is utf-8")
    }

    pub fn from_csv(text: &str) -> Result<Self, csv::Error> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let mut views = Vec::new();
        let mut mean = (f64::NAN, f64::NAN);
        for row in r.deserialize() {
            let row: EvalRow = row?;
            match row.view.parse::<usize>() {
                Ok(view) => views.push(ViewMetrics {
                    view,
                    psnr: row.psnr,
                    ssim: row.ssim,
                }),
                Err(_) => mean = (row.psnr, row.ssim),
            }
        }
        Ok(Self {
            views,
            mean_psnr: mean.0,
            mean_ssim: mean.1,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub factors: Vec<f64>,
    pub line_fractions: Vec<f64>,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            factors: vec![2.0, 4.0, 6.0, 8.0, 10.0, 15.0, 20.0],
            line_fractions: vec![1.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub factor: f64,
    pub line_fraction: f64,
    pub sketch_bytes: usize,
    pub patch_bytes: usize,
    pub total_bytes: usize,
    pub psnr: f64,
    pub ssim: f64,
    pub sketch_ratio: f64,
    pub report: EncodeReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepFailure {
    pub factor: f64,
    pub line_fraction: f64,
    pub error: String,
}

#[derive(Debug, Clone, Default)]
pub struct SweepOutcome {
    pub points: Vec<SweepPoint>,
    pub failures: Vec<SweepFailure>,
}

#[derive(Serialize, Deserialize)]
struct SweepRow {
    factor: f64,
    line_fraction: f64,
    sketch_bytes: usize,
    patch_bytes: usize,
    total_bytes: usize,
    psnr: f64,
    ssim: f64,
}

impl SweepOutcome {
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        for p in &self.points {
            w.serialize(SweepRow {
                factor: p.factor,
                line_fraction: p.line_fraction,
                sketch_bytes: p.sketch_bytes,
                patch_bytes: p.patch_bytes,
                total_bytes: p.total_bytes,
                psnr: p.psnr,
                ssim: p.ssim,
            })
            .expect("in-memory csv write");
        }
        if self.points.is_empty() {
            w.write_record(["factor", "line_fraction", "sketch_bytes", "patch_bytes", "total_bytes", "psnr", "ssim"])
                .expect("in-memory csv write");
        }
        String::from_utf8(w.into_inner().expect("in-memory csv flush")).expect("csv is utf-8")
    }
}

/// One encode, decode, and evaluation per `(line fraction, factor)` point.
/// Points run concurrently; a failing point is recorded and skipped.
pub fn sweep(
    cloud: &GaussianCloud,
    lines: &[LineSegment3D],
    views: Views<'_>,
    spec: &SweepSpec,
    base: &EncodeConfig,
) -> SweepOutcome {
    let grid: Vec<(f64, f64)> = spec
        .line_fractions
        .iter()
        .flat_map(|&lf| spec.factors.iter().map(move |&f| (lf, f)))
        .collect();
    let results = par::map(&grid, |&(lf, f)| {
        let cfg = EncodeConfig {
            line_fraction: lf,
            prune_factor: f,
            ..base.clone()
        };
        let run = || -> Result<SweepPoint, PipelineError> {
            let out = encode(cloud, lines, &cfg, Some(views))?;
            let decoded = decode_bytes(&out.bytes).map_err(|e| fail(Stage::Container)(e.to_string()))?;
            let eval = evaluate(&decoded, views.cameras, views.images)?;
            Ok(SweepPoint {
                factor: f,
                line_fraction: lf,
                sketch_bytes: out.report.sketch_bytes,
                patch_bytes: out.report.patch_bytes,
                total_bytes: out.report.total_bytes,
                psnr: eval.mean_psnr,
                ssim: eval.mean_ssim,
                sketch_ratio: out.report.sketch_ratio,
                report: out.report,
            })
        };
        run().map_err(|e| SweepFailure {
            factor: f,
            line_fraction: lf,
            error: e.to_string(),
        })
    });
    let mut outcome = SweepOutcome::default();
    for r in results {
        match r {
            Ok(p) => outcome.points.push(p),
            Err(e) => {
                log::warn!("sweep point factor={} lines={} failed: {}", e.factor, e.line_fraction, e.error);
                outcome.failures.push(e);
            }
        }
    }
    outcome
}

/// Byte breakdown of a file, for reports.
pub fn breakdown(bytes: &[u8]) -> Result<SizeBreakdown, ContainerError> {
    Ok(read_hybrid(bytes)?.size_breakdown())
}
