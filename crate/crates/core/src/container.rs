//! The `SKPH` hybrid container.
//!
//! ```text
//! "SKPH" | u8 version | u8 sh_degree | u16 header_len | header payload
//! u32 block_count | blocks...
//! patch block
//! u32 crc32 (of every preceding byte)
//! ```
//!
//! All integers are little-endian. See `format.md` for the full layout.

use crate::gs::{sh_rest_len, GaussianCloud};
use crate::patch::{dequantize_patch, AttributeTag, Codebook, PatchError, QuantizedPatchBlock};
use crate::sketch::poly::MAX_DEGREE;
use crate::sketch::{decode_group, PolyModel, SketchError, SketchLineBlock};
use std::collections::BTreeMap;
use thiserror::Error;

pub const MAGIC: [u8; 4] = *b"SKPH";
pub const VERSION: u8 = 1;
/// Bytes outside every accounted section: magic and CRC.
pub const FRAMING_BYTES: usize = 8;

const COUNT_BLOCKS: &str = "count.sketch_blocks";
const COUNT_SKETCH: &str = "count.sketch_splats";
const COUNT_PATCH: &str = "count.patch_splats";

#[derive(Debug, Error, PartialEq)]
pub enum ContainerError {
    #[error("bad magic {found:02x?} at offset 0")]
    BadMagic { found: Vec<u8> },
    #[error("unsupported version {0} at offset 4")]
    UnsupportedVersion(u8),
    #[error("crc mismatch at offset {offset}: stored {stored:08x}, computed {computed:08x}")]
    CrcMismatch { offset: usize, stored: u32, computed: u32 },
    #[error("truncated {section} at offset {offset}")]
    Truncated { offset: usize, section: &'static str },
    #[error("invalid data at offset {offset}: {reason}")]
    Invalid { offset: usize, reason: String },
    #[error("sketch decode: {0}")]
    Sketch(#[from] SketchError),
    #[error("patch decode: {0}")]
    Patch(#[from] PatchError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct HybridModel {
    pub sh_degree: u8,
    /// Configuration snapshot; `count.*` keys are reserved and derived on write.
    pub config: BTreeMap<String, String>,
    pub sketch_blocks: Vec<SketchLineBlock>,
    pub patch: QuantizedPatchBlock,
}

/// Byte accounting; `header + sketch + patch + FRAMING_BYTES == total`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub struct SizeBreakdown {
    /// Version, degree, length field, and payload.
    pub header: usize,
    /// Block count plus every block.
    pub sketch: usize,
    pub patch: usize,
    pub total: usize,
}

impl HybridModel {
    pub fn empty(sh_degree: u8) -> Self {
        Self {
            sh_degree,
            config: BTreeMap::new(),
            sketch_blocks: Vec::new(),
            patch: QuantizedPatchBlock::empty(sh_degree),
        }
    }

    pub fn sketch_splats(&self) -> usize {
        self.sketch_blocks.iter().map(SketchLineBlock::count).sum()
    }

    pub fn splat_count(&self) -> usize {
        self.sketch_splats() + self.patch.count
    }

    fn header_payload(&self) -> Vec<u8> {
        let mut kv = self.config.clone();
        kv.insert(COUNT_BLOCKS.into(), self.sketch_blocks.len().to_string());
        kv.insert(COUNT_SKETCH.into(), self.sketch_splats().to_string());
        kv.insert(COUNT_PATCH.into(), self.patch.count.to_string());
        kv.iter().flat_map(|(k, v)| format!("{k}={v}\n").into_bytes()).collect()
    }

    pub fn validate(&self) -> Result<(), ContainerError> {
        let bad = |reason: String| ContainerError::Invalid { offset: 0, reason };
        if self.sh_degree > 3 {
            return Err(bad(format!("sh degree {} unsupported", self.sh_degree)));
        }
        for (k, v) in &self.config {
            if k.starts_with("count.") {
                return Err(bad(format!("reserved header key {k}")));
            }
            if k.is_empty() || k.contains(['=', '\n']) || v.contains('\n') {
                return Err(bad(format!("header entry {k:?} is not representable")));
            }
        }
        if self.header_payload().len() > u16::MAX as usize {
            return Err(bad("header payload exceeds 65535 bytes".into()));
        }
        for b in &self.sketch_blocks {
            b.validate()?;
            let narrow = |v: &f64| (*v as f32) as f64 == *v;
            if !b.p_start.iter().chain(&b.p_end).all(narrow)
                || !b.models().iter().all(|m| m.coeffs.iter().all(narrow))
            {
                return Err(bad(format!("line {}: values not binary32-representable", b.line_id)));
            }
            if b.count() > u32::MAX as usize {
                return Err(bad(format!("line {}: too many splats", b.line_id)));
            }
        }
        if self.patch.sh_degree != self.sh_degree {
            return Err(bad("patch block sh degree differs from header".into()));
        }
        self.patch.validate()?;
        for cb in &self.patch.codebooks {
            if cb.entries.len() > 256 {
                return Err(bad(format!("{:?} codebook has {} entries", cb.tag, cb.entries.len())));
            }
        }
        Ok(())
    }

    pub fn size_breakdown(&self) -> SizeBreakdown {
        let header = 4 + self.header_payload().len();
        let sketch = 4 + self.sketch_blocks.iter().map(SketchLineBlock::encoded_len).sum::<usize>();
        let patch = self.patch.encoded_len();
        SizeBreakdown {
            header,
            sketch,
            patch,
            total: header + sketch + patch + FRAMING_BYTES,
        }
    }
}

pub fn write_hybrid(model: &HybridModel) -> Result<Vec<u8>, ContainerError> {
    model.validate()?;
    let mut out = Vec::with_capacity(model.size_breakdown().total);
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.push(model.sh_degree);
    let payload = model.header_payload();
    out.extend_from_slice(&(payload.len() as u16).to_le_bytes());
    out.extend_from_slice(&payload);

    out.extend_from_slice(&(model.sketch_blocks.len() as u32).to_le_bytes());
    for b in &model.sketch_blocks {
        out.extend_from_slice(&b.line_id.to_le_bytes());
        for v in b.p_start.iter().chain(&b.p_end) {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        out.extend_from_slice(&(b.count() as u32).to_le_bytes());
        for q in &b.t_q {
            out.extend_from_slice(&q.to_le_bytes());
        }
        for m in b.models() {
            out.push(m.degree as u8);
            out.push(m.k as u8);
            for c in &m.coeffs {
                out.extend_from_slice(&(*c as f32).to_le_bytes());
            }
        }
    }

    let p = &model.patch;
    out.extend_from_slice(&(p.count as u32).to_le_bytes());
    for h in &p.positions {
        out.extend_from_slice(&h.to_le_bytes());
    }
    for cb in &p.codebooks {
        out.push(cb.tag as u8);
        out.extend_from_slice(&(cb.entries.len() as u16).to_le_bytes());
        for h in &cb.entries {
            out.extend_from_slice(&h.to_le_bytes());
        }
    }
    for stream in &p.indices {
        out.extend_from_slice(stream);
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, section: &'static str) -> Result<&'a [u8], ContainerError> {
        if self.buf.len() - self.pos < n {
            return Err(ContainerError::Truncated {
                offset: self.pos,
                section,
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, section: &'static str) -> Result<u8, ContainerError> {
        Ok(self.take(1, section)?[0])
    }

    fn u16(&mut self, section: &'static str) -> Result<u16, ContainerError> {
        Ok(u16::from_le_bytes(self.take(2, section)?.try_into().unwrap()))
    }

    fn u32(&mut self, section: &'static str) -> Result<u32, ContainerError> {
        Ok(u32::from_le_bytes(self.take(4, section)?.try_into().unwrap()))
    }

    fn f32(&mut self, section: &'static str) -> Result<f64, ContainerError> {
        Ok(f32::from_le_bytes(self.take(4, section)?.try_into().unwrap()) as f64)
    }

    fn u16_vec(&mut self, n: usize, section: &'static str) -> Result<Vec<u16>, ContainerError> {
        let bytes = self.take(n.checked_mul(2).unwrap_or(usize::MAX), section)?;
        Ok(bytes.chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]])).collect())
    }

    fn invalid(&self, reason: impl Into<String>) -> ContainerError {
        ContainerError::Invalid {
            offset: self.pos,
            reason: reason.into(),
        }
    }
}

pub fn read_hybrid(bytes: &[u8]) -> Result<HybridModel, ContainerError> {
    if bytes.len() < 4 || bytes[..4] != MAGIC {
        return Err(ContainerError::BadMagic {
            found: bytes[..bytes.len().min(4)].to_vec(),
        });
    }
    match bytes.get(4) {
        None => return Err(ContainerError::Truncated { offset: 4, section: "version" }),
        Some(&VERSION) => {}
        Some(&v) => return Err(ContainerError::UnsupportedVersion(v)),
    }
    if bytes.len() < 4 + 1 + 1 + 2 + 4 + 4 + 4 {
        return Err(ContainerError::Truncated {
            offset: bytes.len(),
            section: "file",
        });
    }
    let body_len = bytes.len() - 4;
    let stored = u32::from_le_bytes(bytes[body_len..].try_into().unwrap());
    let computed = crc32fast::hash(&bytes[..body_len]);
    if stored != computed {
        return Err(ContainerError::CrcMismatch {
            offset: body_len,
            stored,
            computed,
        });
    }

    let mut r = Reader {
        buf: &bytes[..body_len],
        pos: 5,
    };
    let sh_degree = r.u8("header")?;
    if sh_degree > 3 {
        return Err(r.invalid(format!("sh degree {sh_degree} unsupported")));
    }
    let hlen = r.u16("header")? as usize;
    let payload = r.take(hlen, "header")?;
    let mut config = parse_header(payload).map_err(|reason| ContainerError::Invalid { offset: 8, reason })?;
    let mut count = |key: &str| -> Result<usize, ContainerError> {
        config
            .remove(key)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| ContainerError::Invalid {
                offset: 8,
                reason: format!("missing or malformed {key}"),
            })
    };
    let (n_blocks, n_sketch, n_patch) = (count(COUNT_BLOCKS)?, count(COUNT_SKETCH)?, count(COUNT_PATCH)?);

    let block_count = r.u32("sketch block count")? as usize;
    if block_count != n_blocks {
        return Err(r.invalid(format!("header lists {n_blocks} blocks, file has {block_count}")));
    }
    let mut sketch_blocks = Vec::with_capacity(block_count.min(1 << 16));
    for _ in 0..block_count {
        sketch_blocks.push(read_block(&mut r)?);
    }
    let sketch_total: usize = sketch_blocks.iter().map(SketchLineBlock::count).sum();
    if sketch_total != n_sketch {
        return Err(r.invalid(format!("header lists {n_sketch} sketch splats, blocks hold {sketch_total}")));
    }

    let count = r.u32("patch count")? as usize;
    if count != n_patch {
        return Err(r.invalid(format!("header lists {n_patch} patch splats, block holds {count}")));
    }
    let positions = r.u16_vec(3 * count, "patch positions")?;
    let mut codebooks = Vec::with_capacity(6);
    for expected in AttributeTag::ALL {
        let tag = r.u8("patch codebooks")?;
        if tag != expected as u8 {
            return Err(r.invalid(format!("codebook tag {tag}, expected {}", expected as u8)));
        }
        let size = r.u16("patch codebooks")? as usize;
        if size > 256 {
            return Err(r.invalid(format!("codebook size {size} exceeds 256")));
        }
        codebooks.push(Codebook {
            tag: expected,
            entries: r.u16_vec(size, "patch codebooks")?,
        });
    }
    let mut indices = Vec::with_capacity(6);
    for tag in AttributeTag::ALL {
        let n = tag.components(sh_degree) * count;
        indices.push(r.take(n, "patch indices")?.to_vec());
    }
    if r.pos != body_len {
        return Err(r.invalid(format!("{} trailing bytes", body_len - r.pos)));
    }
    let patch = QuantizedPatchBlock {
        count,
        sh_degree,
        positions,
        codebooks,
        indices,
    };
    patch.validate()?;
    debug_assert_eq!(sh_rest_len(sh_degree), AttributeTag::ColorRest.components(sh_degree));
    Ok(HybridModel {
        sh_degree,
        config,
        sketch_blocks,
        patch,
    })
}

fn read_block(r: &mut Reader) -> Result<SketchLineBlock, ContainerError> {
    const S: &str = "sketch block";
    let line_id = r.u32(S)?;
    let mut ends = [0.0; 6];
    for e in &mut ends {
        *e = r.f32(S)?;
    }
    let count = r.u32(S)? as usize;
    let t_q = r.u16_vec(count, S)?;
    let mut models = Vec::with_capacity(4);
    for _ in 0..4 {
        let degree = r.u8(S)? as usize;
        let k = r.u8(S)? as usize;
        if degree > MAX_DEGREE {
            return Err(r.invalid(format!("line {line_id}: model degree {degree}")));
        }
        let mut coeffs = Vec::with_capacity((degree + 1) * k);
        for _ in 0..(degree + 1) * k {
            coeffs.push(r.f32(S)?);
        }
        models.push(PolyModel { degree, k, coeffs });
    }
    let [opacity_model, color_model, scale_model, rotation_model]: [PolyModel; 4] = models.try_into().unwrap();
    let block = SketchLineBlock {
        line_id,
        p_start: [ends[0], ends[1], ends[2]],
        p_end: [ends[3], ends[4], ends[5]],
        t_q,
        opacity_model,
        color_model,
        scale_model,
        rotation_model,
    };
    block.validate().map_err(|e| r.invalid(e.to_string()))?;
    Ok(block)
}

fn parse_header(payload: &[u8]) -> Result<BTreeMap<String, String>, String> {
    let text = std::str::from_utf8(payload).map_err(|e| format!("header is not UTF-8: {e}"))?;
    let mut map = BTreeMap::new();
    let mut last: Option<&str> = None;
    for line in text.split_terminator('\n') {
        let (k, v) = line.split_once('=').ok_or_else(|| format!("header line {line:?} lacks '='"))?;
        if last.is_some_and(|p| p >= k) {
            return Err(format!("header keys not strictly sorted at {k:?}"));
        }
        last = Some(k);
        map.insert(k.to_string(), v.to_string());
    }
    if !text.is_empty() && !text.ends_with('\n') {
        return Err("header payload must end with a newline".into());
    }
    Ok(map)
}

/// Sketch groups in block order, then the dequantized patch splats.
pub fn decode_full(model: &HybridModel) -> Result<GaussianCloud, ContainerError> {
    let mut splats = Vec::with_capacity(model.splat_count());
    for b in &model.sketch_blocks {
        splats.extend(decode_group(b, model.sh_degree)?);
    }
    splats.extend(dequantize_patch(&model.patch)?);
    Ok(GaussianCloud::from_splats(splats, model.sh_degree))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_model_round_trip() {
        let m = HybridModel::empty(3);
        let bytes = write_hybrid(&m).unwrap();
        let sizes = m.size_breakdown();
        assert_eq!(bytes.len(), sizes.total);
        assert_eq!(read_hybrid(&bytes).unwrap(), m);
    }

    #[test]
    fn reserved_keys_rejected() {
        let mut m = HybridModel::empty(0);
        m.config.insert("count.sketch_blocks".into(), "3".into());
        assert!(matches!(write_hybrid(&m), Err(ContainerError::Invalid { .. })));
    }

    #[test]
    fn header_parse_rules() {
        assert!(parse_header(b"a=1\nb=2\n").is_ok());
        assert!(parse_header(b"b=1\na=2\n").is_err());
        assert!(parse_header(b"a1\n").is_err());
        assert!(parse_header(b"a=1").is_err());
    }
}
