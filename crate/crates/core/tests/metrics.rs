use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use skph_core::render::{loss, psnr, ssim, Image, LossConfig};

fn random_image(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Image {
    Image {
        width: w,
        height: h,
        data: (0..3 * w * h).map(|_| rng.random::<f64>()).collect(),
    }
}

/// Direct 2D windowed SSIM: 11x11 Gaussian weights (sigma 1.5), zero outside
/// the image, averaged over pixels and channels.
fn reference_ssim(a: &Image, b: &Image) -> f64 {
    let g: Vec<f64> = (0..11).map(|i| (-((i as f64 - 5.0).powi(2)) / 4.5).exp()).collect();
    let gs: f64 = g.iter().sum();
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let (w, h) = (a.width as isize, a.height as isize);
    let mut total = 0.0;
    for ch in 0..3 {
        for y in 0..h {
            for x in 0..w {
                let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for j in 0..11 {
                    for i in 0..11 {
                        let (xx, yy) = (x + i - 5, y + j - 5);
                        if xx < 0 || yy < 0 || xx >= w || yy >= h {
                            continue;
                        }
                        let wt = g[i as usize] * g[j as usize] / (gs * gs);
                        let va = a.get(xx as usize, yy as usize)[ch];
                        let vb = b.get(xx as usize, yy as usize)[ch];
                        ma += wt * va;
                        mb += wt * vb;
                        saa += wt * va * va;
                        sbb += wt * vb * vb;
                        sab += wt * va * vb;
                    }
                }
                let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
                total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            }
        }
    }
    total / (3 * a.width * a.height) as f64
}

#[test]
fn identical_images() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let a = random_image(&mut rng, 13, 9);
    assert_eq!(psnr(&a, &a).unwrap(), 100.0);
    assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    for lambda in [0.0, 0.2, 0.8, 1.0] {
        assert!(loss(&a, &a, &LossConfig { lambda, ..Default::default() }).unwrap().abs() < 1e-12);
    }
}

#[test]
fn uniform_offset_psnr() {
    let a = Image::filled(8, 8, [0.3; 3]);
    let b = Image::filled(8, 8, [0.4; 3]);
    assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
}

#[test]
fn lambda_one_is_mean_absolute_error() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (a, b) = (random_image(&mut rng, 10, 7), random_image(&mut rng, 10, 7));
    let mae = a.data.iter().zip(&b.data).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.data.len() as f64;
    let l = loss(&a, &b, &LossConfig { lambda: 1.0, ..Default::default() }).unwrap();
    assert!((l - mae).abs() < 1e-15);
}

#[test]
fn matches_reference_implementation() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for (w, h) in [(16, 16), (23, 11), (5, 30)] {
        let a = random_image(&mut rng, w, h);
        let mut b = a.clone();
        for v in &mut b.data {
            *v = (*v + rng.random_range(-0.2..0.2)).clamp(0.0, 1.0);
        }
        let s = reference_ssim(&a, &b);
        assert!((ssim(&a, &b).unwrap() - s).abs() < 1e-9);
        let mae = a.data.iter().zip(&b.data).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.data.len() as f64;
        let mse = a.data.iter().zip(&b.data).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.data.len() as f64;
        let l = loss(&a, &b, &LossConfig::default()).unwrap();
        assert!((l - (0.8 * mae + 0.2 * (1.0 - s))).abs() < 1e-9);
        assert!((psnr(&a, &b).unwrap() - 10.0 * (1.0 / mse).log10()).abs() < 1e-9);
    }
}
