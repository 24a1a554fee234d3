//! Patch splat pruning and vector quantization.
//!
//! Surviving patch splats keep half-float positions; every other attribute
//! component becomes a one-byte index into a per-attribute codebook of at
//! most 256 half-float entries. Vector attributes share one codebook across
//! their components.

pub mod half;
pub mod kmeans;

pub use half::{from_half, round_half, to_half};
pub use kmeans::{kmeans_1d, nearest_index, KMeans1d};

use crate::gs::{sh_degree_for_rest_len, sh_rest_len, GaussianCloud, GaussianSplat};
use crate::par;
use rand::{seq::index::sample, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub const CODEBOOK_SIZE: usize = 256;
pub const DEFAULT_KMEANS_ITERS: usize = 25;

#[derive(Debug, Error, PartialEq)]
pub enum PatchError {
    #[error("{tag:?} index {index} out of range for a {size}-entry codebook (splat {splat})")]
    IndexOutOfRange {
        tag: AttributeTag,
        splat: usize,
        index: u8,
        size: usize,
    },
    #[error("{tag:?} index stream has {found} entries, expected {expected}")]
    IndexLength {
        tag: AttributeTag,
        found: usize,
        expected: usize,
    },
    #[error("position stream has {found} entries, expected {expected}")]
    PositionLength { found: usize, expected: usize },
    #[error("{0:?} codebook is empty but splats reference it")]
    EmptyCodebook(AttributeTag),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[repr(u8)]
pub enum AttributeTag {
    Opacity = 0,
    Scale = 1,
    RotReal = 2,
    RotImag = 3,
    ColorDc = 4,
    ColorRest = 5,
}

impl AttributeTag {
    pub const ALL: [AttributeTag; 6] = [
        AttributeTag::Opacity,
        AttributeTag::Scale,
        AttributeTag::RotReal,
        AttributeTag::RotImag,
        AttributeTag::ColorDc,
        AttributeTag::ColorRest,
    ];

    pub fn from_u8(v: u8) -> Option<Self> {
        Self::ALL.get(v as usize).copied()
    }

    /// Scalar components per splat.
    pub fn components(self, sh_degree: u8) -> usize {
        match self {
            AttributeTag::Opacity | AttributeTag::RotReal => 1,
            AttributeTag::Scale | AttributeTag::RotImag | AttributeTag::ColorDc => 3,
            AttributeTag::ColorRest => sh_rest_len(sh_degree),
        }
    }

    fn read(self, s: &GaussianSplat, out: &mut Vec<f64>) {
        match self {
            AttributeTag::Opacity => out.push(s.opacity_logit),
            AttributeTag::Scale => out.extend_from_slice(&s.log_scale),
            AttributeTag::RotReal => out.push(s.rotation[0]),
            AttributeTag::RotImag => out.extend_from_slice(&s.rotation[1..]),
            AttributeTag::ColorDc => out.extend_from_slice(&s.sh_dc),
            AttributeTag::ColorRest => out.extend_from_slice(&s.sh_rest),
        }
    }

    fn write(self, s: &mut GaussianSplat, vals: &[f64]) {
        match self {
            AttributeTag::Opacity => s.opacity_logit = vals[0],
            AttributeTag::Scale => s.log_scale.copy_from_slice(vals),
            AttributeTag::RotReal => s.rotation[0] = vals[0],
            AttributeTag::RotImag => s.rotation[1..].copy_from_slice(vals),
            AttributeTag::ColorDc => s.sh_dc.copy_from_slice(vals),
            AttributeTag::ColorRest => s.sh_rest.copy_from_slice(vals),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    pub tag: AttributeTag,
    /// Binary16 bit patterns, ascending by value.
    pub entries: Vec<u16>,
}

impl Codebook {
    pub fn values(&self) -> Vec<f64> {
        self.entries.iter().map(|&h| from_half(h)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedPatchBlock {
    pub count: usize,
    pub sh_degree: u8,
    /// `3 * count` binary16 patterns, xyz per splat.
    pub positions: Vec<u16>,
    /// One per tag, in [`AttributeTag::ALL`] order.
    pub codebooks: Vec<Codebook>,
    /// One stream per tag, `components(tag) * count` bytes, splat-major.
    pub indices: Vec<Vec<u8>>,
}

impl QuantizedPatchBlock {
    pub fn empty(sh_degree: u8) -> Self {
        Self {
            count: 0,
            sh_degree,
            positions: Vec::new(),
            codebooks: AttributeTag::ALL
                .iter()
                .map(|&tag| Codebook { tag, entries: Vec::new() })
                .collect(),
            indices: vec![Vec::new(); AttributeTag::ALL.len()],
        }
    }

    /// Index bytes per splat (56 for degree-3 SH).
    pub fn index_bytes_per_splat(sh_degree: u8) -> usize {
        AttributeTag::ALL.iter().map(|t| t.components(sh_degree)).sum()
    }

    /// Serialized size inside the container.
    pub fn encoded_len(&self) -> usize {
        4 + 2 * self.positions.len()
            + self.codebooks.iter().map(|c| 3 + 2 * c.entries.len()).sum::<usize>()
            + self.indices.iter().map(Vec::len).sum::<usize>()
    }

    pub fn validate(&self) -> Result<(), PatchError> {
        if self.positions.len() != 3 * self.count {
            return Err(PatchError::PositionLength {
                found: self.positions.len(),
                expected: 3 * self.count,
            });
        }
        for (i, &tag) in AttributeTag::ALL.iter().enumerate() {
            let stream = &self.indices[i];
            let per = tag.components(self.sh_degree);
            if stream.len() != per * self.count {
                return Err(PatchError::IndexLength {
                    tag,
                    found: stream.len(),
                    expected: per * self.count,
                });
            }
            let size = self.codebooks[i].entries.len();
            if size == 0 && !stream.is_empty() {
                return Err(PatchError::EmptyCodebook(tag));
            }
            if let Some(pos) = stream.iter().position(|&ix| ix as usize >= size) {
                return Err(PatchError::IndexOutOfRange {
                    tag,
                    splat: pos / per.max(1),
                    index: stream[pos],
                    size,
                });
            }
        }
        Ok(())
    }
}

/// Keeps `ceil(n / factor)` of `indices`, drawn uniformly without replacement,
/// returned in ascending order.
pub fn prune_uniform(indices: &[usize], factor: f64, seed: u64) -> Vec<usize> {
    assert!(factor >= 1.0, "pruning factor must be at least 1");
    let n = indices.len();
    let keep = ((n as f64 / factor).ceil() as usize).min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<usize> = sample(&mut rng, n, keep).into_iter().map(|p| indices[p]).collect();
    out.sort_unstable();
    out
}

/// Builds the six codebooks over pooled components of the kept splats and
/// maps every component to its nearest (half-rounded) entry.
pub fn quantize_patch(cloud: &GaussianCloud, indices: &[usize], seed: u64) -> QuantizedPatchBlock {
    quantize_patch_with(cloud, indices, seed, DEFAULT_KMEANS_ITERS)
}

pub fn quantize_patch_with(cloud: &GaussianCloud, indices: &[usize], seed: u64, iters: usize) -> QuantizedPatchBlock {
    let sh_degree = cloud.sh_degree;
    if indices.is_empty() {
        return QuantizedPatchBlock::empty(sh_degree);
    }
    let splats: Vec<&GaussianSplat> = indices.iter().map(|&i| &cloud.splats[i]).collect();
    let positions = splats.iter().flat_map(|s| s.position.map(to_half)).collect();

    let per_tag = par::map(&AttributeTag::ALL, |&tag| {
        let mut pool = Vec::with_capacity(splats.len() * tag.components(sh_degree));
        for s in &splats {
            tag.read(s, &mut pool);
        }
        if pool.is_empty() {
            return (Codebook { tag, entries: Vec::new() }, Vec::new());
        }
        let km = kmeans_1d(&pool, CODEBOOK_SIZE, iters, seed ^ ((tag as u64) << 32));
        let mut entries: Vec<u16> = km.centroids.iter().map(|&c| to_half(c)).collect();
        entries.sort_by(|a, b| from_half(*a).total_cmp(&from_half(*b)));
        entries.dedup();
        let table: Vec<f64> = entries.iter().map(|&h| from_half(h)).collect();
        let idx = pool.iter().map(|&v| nearest_index(&table, v) as u8).collect();
        (Codebook { tag, entries }, idx)
    });
    let (codebooks, idx): (Vec<_>, Vec<_>) = per_tag.into_iter().unzip();
    QuantizedPatchBlock {
        count: splats.len(),
        sh_degree,
        positions,
        codebooks,
        indices: idx,
    }
}

/// Re-quantizes splats against an existing block's codebooks.
pub fn requantize_with(block: &QuantizedPatchBlock, splats: &[GaussianSplat]) -> Vec<Vec<u8>> {
    AttributeTag::ALL
        .iter()
        .enumerate()
        .map(|(i, &tag)| {
            let table = block.codebooks[i].values();
            let mut pool = Vec::new();
            for s in splats {
                tag.read(s, &mut pool);
            }
            pool.iter().map(|&v| nearest_index(&table, v) as u8).collect()
        })
        .collect()
}

pub fn dequantize_patch(block: &QuantizedPatchBlock) -> Result<Vec<GaussianSplat>, PatchError> {
    block.validate()?;
    let tables: Vec<Vec<f64>> = block.codebooks.iter().map(Codebook::values).collect();
    let rest = sh_rest_len(block.sh_degree);
    debug_assert_eq!(sh_degree_for_rest_len(rest), Some(block.sh_degree));
    let mut scratch = Vec::with_capacity(rest.max(3));
    Ok((0..block.count)
        .map(|i| {
            let mut s = GaussianSplat::at(
                [0, 1, 2].map(|a| from_half(block.positions[3 * i + a])),
                block.sh_degree,
            );
            for (t, &tag) in AttributeTag::ALL.iter().enumerate() {
                let per = tag.components(block.sh_degree);
                scratch.clear();
                scratch.extend(block.indices[t][i * per..(i + 1) * per].iter().map(|&ix| tables[t][ix as usize]));
                tag.write(&mut s, &scratch);
            }
            s
        })
        .collect())
}
