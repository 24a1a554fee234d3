//! Binary little-endian PLY in the standard 3DGS vertex layout.
//!
//! Canonical files (the ones [`save_ply`] writes) carry exactly the
//! properties `x y z nx ny nz f_dc_0..2 f_rest_0..R opacity scale_0..2
//! rot_0..3`, all `float`. The reader also accepts extra scalar properties in
//! any order and skips them.

use super::{sh_degree_for_rest_len, sh_rest_len, GaussianCloud, GaussianSplat};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PlyError {
    #[error("malformed header at byte {offset}: {reason}")]
    MalformedHeader { offset: usize, reason: String },
    #[error("missing vertex property `{name}` (header ends at byte {offset})")]
    MissingProperty { name: String, offset: usize },
    #[error("truncated payload at byte {offset}: expected {expected} bytes of vertex data, found {found}")]
    Truncated {
        offset: usize,
        expected: usize,
        found: usize,
    },
}

fn scalar_size(ty: &str) -> Option<usize> {
    Some(match ty {
        "char" | "uchar" | "int8" | "uint8" => 1,
        "short" | "ushort" | "int16" | "uint16" => 2,
        "int" | "uint" | "int32" | "uint32" | "float" | "float32" => 4,
        "double" | "float64" => 8,
        _ => return None,
    })
}

struct Property {
    name: String,
    ty: String,
    offset: usize,
}

fn header_err(offset: usize, reason: impl Into<String>) -> PlyError {
    PlyError::MalformedHeader {
        offset,
        reason: reason.into(),
    }
}

/// Parses a binary little-endian 3DGS PLY. Values are kept verbatim (no activation).
pub fn load_ply(bytes: &[u8]) -> Result<GaussianCloud, PlyError> {
    let mut pos = 0usize;
    let next_line = |pos: &mut usize| -> Result<(usize, String), PlyError> {
        let start = *pos;
        let rel = bytes[start..]
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| header_err(start, "header not terminated by end_header"))?;
        *pos = start + rel + 1;
        let line = std::str::from_utf8(&bytes[start..start + rel])
            .map_err(|_| header_err(start, "header is not valid UTF-8"))?;
        Ok((start, line.trim_end_matches('\r').to_string()))
    };

    let (at, magic) = next_line(&mut pos)?;
    if magic != "ply" {
        return Err(header_err(at, "missing `ply` magic line"));
    }
    let mut format_seen = false;
    let mut vertex_count: Option<usize> = None;
    let mut props: Vec<Property> = Vec::new();
    let mut stride = 0usize;
    loop {
        let (at, line) = next_line(&mut pos)?;
        let mut words = line.split_whitespace();
        match words.next() {
            Some("end_header") => break,
            Some("comment") | Some("obj_info") | None => {}
            Some("format") => {
                let fmt: Vec<&str> = words.collect();
                if fmt != ["binary_little_endian", "1.0"] {
                    return Err(header_err(at, format!("unsupported format `{}`", fmt.join(" "))));
                }
                format_seen = true;
            }
            Some("element") => {
                let name = words.next().unwrap_or_default();
                if name != "vertex" || vertex_count.is_some() {
                    return Err(header_err(at, format!("unsupported element `{name}`")));
                }
                let n = words
                    .next()
                    .and_then(|w| w.parse::<usize>().ok())
                    .ok_or_else(|| header_err(at, "bad vertex count"))?;
                vertex_count = Some(n);
            }
            Some("property") => {
                if vertex_count.is_none() {
                    return Err(header_err(at, "property before element"));
                }
                let ty = words.next().unwrap_or_default();
                if ty == "list" {
                    return Err(header_err(at, "list properties are not supported"));
                }
                let size = scalar_size(ty).ok_or_else(|| header_err(at, format!("unknown type `{ty}`")))?;
                let name = words
                    .next()
                    .ok_or_else(|| header_err(at, "property without name"))?
                    .to_string();
                if props.iter().any(|p| p.name == name) {
                    return Err(header_err(at, format!("duplicate property `{name}`")));
                }
                props.push(Property {
                    name,
                    ty: ty.to_string(),
                    offset: stride,
                });
                stride += size;
            }
            Some(other) => return Err(header_err(at, format!("unexpected keyword `{other}`"))),
        }
    }
    let header_end = pos;
    if !format_seen {
        return Err(header_err(header_end, "missing format line"));
    }
    let count = vertex_count.ok_or_else(|| header_err(header_end, "missing vertex element"))?;

    let find = |name: &str| -> Result<usize, PlyError> {
        let p = props
            .iter()
            .find(|p| p.name == name)
            .ok_or_else(|| PlyError::MissingProperty {
                name: name.to_string(),
                offset: header_end,
            })?;
        if p.ty != "float" && p.ty != "float32" {
            return Err(header_err(header_end, format!("property `{name}` must be float")));
        }
        Ok(p.offset)
    };
    let pos_off = ["x", "y", "z"].map(find);
    let dc_off = ["f_dc_0", "f_dc_1", "f_dc_2"].map(find);
    let scale_off = ["scale_0", "scale_1", "scale_2"].map(find);
    let rot_off = ["rot_0", "rot_1", "rot_2", "rot_3"].map(find);
    let pos_off = collect3(pos_off)?;
    let dc_off = collect3(dc_off)?;
    let scale_off = collect3(scale_off)?;
    let rot_off = {
        let [a, b, c, d] = rot_off;
        [a?, b?, c?, d?]
    };
    let opacity_off = find("opacity")?;
    let rest_count = (0..).take_while(|i| props.iter().any(|p| p.name == format!("f_rest_{i}"))).count();
    let sh_degree = sh_degree_for_rest_len(rest_count).ok_or_else(|| {
        header_err(header_end, format!("{rest_count} f_rest properties match no SH degree"))
    })?;
    let rest_off: Vec<usize> = (0..rest_count)
        .map(|i| find(&format!("f_rest_{i}")))
        .collect::<Result<_, _>>()?;

    let payload = &bytes[header_end..];
    let expected = count
        .checked_mul(stride)
        .ok_or_else(|| header_err(header_end, "vertex count overflows"))?;
    if payload.len() < expected {
        return Err(PlyError::Truncated {
            offset: header_end + payload.len(),
            expected,
            found: payload.len(),
        });
    }
    if payload.len() > expected {
        return Err(header_err(
            header_end + expected,
            format!("{} trailing bytes after vertex data", payload.len() - expected),
        ));
    }

    let splats = payload
        .chunks_exact(stride.max(1))
        .take(count)
        .map(|rec| {
            let f = |off: usize| f32::from_le_bytes(rec[off..off + 4].try_into().unwrap()) as f64;
            GaussianSplat {
                position: pos_off.map(f),
                log_scale: scale_off.map(f),
                rotation: rot_off.map(f),
                opacity_logit: f(opacity_off),
                sh_dc: dc_off.map(f),
                sh_rest: rest_off.iter().map(|&o| f(o)).collect(),
            }
        })
        .collect();
    Ok(GaussianCloud { splats, sh_degree })
}

fn collect3(a: [Result<usize, PlyError>; 3]) -> Result<[usize; 3], PlyError> {
    let [x, y, z] = a;
    Ok([x?, y?, z?])
}

/// Property names in canonical order for a given SH degree.
pub fn canonical_properties(sh_degree: u8) -> Vec<String> {
    let mut names: Vec<String> = ["x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    names.extend((0..sh_rest_len(sh_degree)).map(|i| format!("f_rest_{i}")));
    names.push("opacity".into());
    names.extend((0..3).map(|i| format!("scale_{i}")));
    names.extend((0..4).map(|i| format!("rot_{i}")));
    names
}

/// Serializes a cloud as a canonical PLY. Normals are written as zeros and all
/// values are narrowed to binary32.
pub fn save_ply(cloud: &GaussianCloud) -> Vec<u8> {
    let names = canonical_properties(cloud.sh_degree);
    let mut out = format!(
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\n",
        cloud.splats.len()
    );
    for n in &names {
        out.push_str("property float ");
        out.push_str(n);
        out.push('\n');
    }
    out.push_str("end_header\n");
    let mut bytes = out.into_bytes();
    bytes.reserve(cloud.splats.len() * names.len() * 4);
    let rest_len = sh_rest_len(cloud.sh_degree);
    for s in &cloud.splats {
        let mut put = |v: f64| bytes.extend_from_slice(&(v as f32).to_le_bytes());
        s.position.iter().for_each(|&v| put(v));
        (0..3).for_each(|_| put(0.0));
        s.sh_dc.iter().for_each(|&v| put(v));
        (0..rest_len).for_each(|i| put(s.sh_rest.get(i).copied().unwrap_or(0.0)));
        put(s.opacity_logit);
        s.log_scale.iter().for_each(|&v| put(v));
        s.rotation.iter().for_each(|&v| put(v));
    }
    bytes
}

/// Raw (uncompressed) per-splat payload size of a canonical file, normals excluded.
pub const fn raw_splat_bytes(sh_degree: u8) -> usize {
    4 * (3 + 3 + 1 + 3 + 4 + sh_rest_len(sh_degree))
}
