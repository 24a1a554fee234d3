use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use skph_core::container::{decode_full, read_hybrid, write_hybrid, ContainerError, HybridModel};
use skph_core::partition::SketchGroup;
use skph_core::patch::{dequantize_patch, quantize_patch};
use skph_core::sketch::{decode_group, encode_group};
use skph_core::{GaussianCloud, GaussianSplat, LineSegment3D};

fn cloud(seed: u64, n: usize) -> GaussianCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let splats = (0..n)
        .map(|i| GaussianSplat {
            log_scale: [0; 3].map(|_| rng.random_range(-5.0..-2.0)),
            rotation: [1.0, 0.0, 0.0, rng.random_range(-0.2..0.2)],
            opacity_logit: rng.random_range(-1.0..3.0),
            sh_dc: [0; 3].map(|_| rng.random_range(-1.0..1.0)),
            ..GaussianSplat::at([i as f64 / n as f64, rng.random_range(-0.01..0.01), 0.0], 1)
        })
        .collect();
    GaussianCloud::from_splats(splats, 1)
}

fn patch_model(seed: u64, n: usize) -> (HybridModel, GaussianCloud) {
    let c = cloud(seed, n);
    let idx: Vec<usize> = (0..n).collect();
    let mut m = HybridModel::empty(1);
    m.patch = quantize_patch(&c, &idx, seed);
    (m, c)
}

#[test]
fn patch_only_model_decodes_to_dequantized_block() {
    let (m, _) = patch_model(1, 50);
    let decoded = decode_full(&read_hybrid(&write_hybrid(&m).unwrap()).unwrap()).unwrap();
    assert_eq!(decoded.splats, dequantize_patch(&m.patch).unwrap());
}

#[test]
fn sketch_only_model_decodes_to_concatenated_groups() {
    let c = cloud(2, 40);
    let seg = LineSegment3D::new(3, [0.0; 3], [1.0, 0.0, 0.0]);
    let mut m = HybridModel::empty(1);
    let mut want = Vec::new();
    for (lo, hi) in [(0, 25), (25, 40)] {
        let g = SketchGroup {
            line_id: 3,
            member_indices: (lo..hi).collect(),
            member_t: (lo..hi).map(|i| c.splats[i].position[0]).collect(),
        };
        let b = encode_group(&c, &g, &seg).unwrap();
        want.extend(decode_group(&b, 1).unwrap());
        m.sketch_blocks.push(b);
    }
    let decoded = decode_full(&read_hybrid(&write_hybrid(&m).unwrap()).unwrap()).unwrap();
    assert_eq!(decoded.splats, want);
}

#[test]
fn corruption_and_magic() {
    let (m, _) = patch_model(3, 20);
    let bytes = write_hybrid(&m).unwrap();
    let mut bad = bytes.clone();
    *bad.last_mut().unwrap() ^= 1;
    assert!(matches!(read_hybrid(&bad), Err(ContainerError::CrcMismatch { .. })));
    let mut flipped = bytes.clone();
    flipped[40] ^= 0x10;
    assert!(matches!(read_hybrid(&flipped), Err(ContainerError::CrcMismatch { .. })));
    let mut magic = bytes.clone();
    magic[0] = b'X';
    assert!(matches!(read_hybrid(&magic), Err(ContainerError::BadMagic { .. })));
    let mut version = bytes;
    version[4] = 9;
    assert!(matches!(read_hybrid(&version), Err(ContainerError::UnsupportedVersion(9))));
}

#[test]
fn empty_model_is_fixed_size() {
    let m = HybridModel::empty(3);
    let a = write_hybrid(&m).unwrap();
    let b = write_hybrid(&HybridModel::empty(0)).unwrap();
    assert_eq!(a.len(), b.len());
    assert_eq!(read_hybrid(&a).unwrap(), m);
    let sizes = m.size_breakdown();
    assert_eq!(sizes.header + sizes.sketch + sizes.patch + 8, a.len());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn patch_models_round_trip(seed in any::<u64>(), n in 0usize..60) {
        let (m, _) = patch_model(seed, n);
        let bytes = write_hybrid(&m).unwrap();
        let back = read_hybrid(&bytes).unwrap();
        prop_assert_eq!(&back, &m);
        prop_assert_eq!(write_hybrid(&back).unwrap(), bytes);
    }
}
