//! Image metrics and the training loss `λ·L1 + (1 − λ)·(1 − SSIM)`.

use super::{Image, RenderError};

pub const PSNR_CAP: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub lambda: f64,
    pub ssim_window: usize,
    pub ssim_sigma: f64,
    pub ssim_k1: f64,
    pub ssim_k2: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda: 0.8,
            ssim_window: 11,
            ssim_sigma: 1.5,
            ssim_k1: 0.01,
            ssim_k2: 0.03,
        }
    }
}

pub fn psnr(a: &Image, b: &Image) -> Result<f64, RenderError> {
    a.same_size(b)?;
    let n = a.data.len().max(1) as f64;
    let mse = a.data.iter().zip(&b.data).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / n;
    Ok(if mse < 1e-10 { PSNR_CAP } else { 10.0 * (1.0 / mse).log10() })
}

pub fn ssim(a: &Image, b: &Image) -> Result<f64, RenderError> {
    ssim_with(a, b, &LossConfig::default())
}

pub fn ssim_with(a: &Image, b: &Image, cfg: &LossConfig) -> Result<f64, RenderError> {
    a.same_size(b)?;
    Ok(SsimMaps::new(a, b, cfg).mean())
}

pub fn loss(rendered: &Image, truth: &Image, cfg: &LossConfig) -> Result<f64, RenderError> {
    rendered.same_size(truth)?;
    let l1 = l1(rendered, truth);
    let s = if cfg.lambda < 1.0 {
        SsimMaps::new(rendered, truth, cfg).mean()
    } else {
        1.0
    };
    Ok(cfg.lambda * l1 + (1.0 - cfg.lambda) * (1.0 - s))
}

/// Loss and its gradient with respect to every value of `rendered`.
pub fn loss_and_grad(rendered: &Image, truth: &Image, cfg: &LossConfig) -> Result<(f64, Vec<f64>), RenderError> {
    rendered.same_size(truth)?;
    let n = rendered.data.len().max(1) as f64;
    let mut grad: Vec<f64> = rendered
        .data
        .iter()
        .zip(&truth.data)
        .map(|(x, y)| cfg.lambda * sign(x - y) / n)
        .collect();
    let mut value = cfg.lambda * l1(rendered, truth);
    if cfg.lambda < 1.0 {
        let maps = SsimMaps::new(rendered, truth, cfg);
        value += (1.0 - cfg.lambda) * (1.0 - maps.mean());
        let ds = maps.gradient(rendered, truth);
        for (g, d) in grad.iter_mut().zip(ds) {
            *g -= (1.0 - cfg.lambda) * d;
        }
    }
    Ok((value, grad))
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn l1(a: &Image, b: &Image) -> f64 {
    a.data.iter().zip(&b.data).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.data.len().max(1) as f64
}

fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let w: Vec<f64> = (0..size).map(|i| (-(i as f64 - c).powi(2) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Separable "same" convolution with zero padding over one channel plane.
fn blur(plane: &[f64], w: usize, h: usize, k: &[f64]) -> Vec<f64> {
    let r = (k.len() / 2) as isize;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0;
            for (i, kv) in k.iter().enumerate() {
                let xx = x as isize + i as isize - r;
                if xx >= 0 && (xx as usize) < w {
                    s += kv * plane[y * w + xx as usize];
                }
            }
            tmp[y * w + x] = s;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0;
            for (i, kv) in k.iter().enumerate() {
                let yy = y as isize + i as isize - r;
                if yy >= 0 && (yy as usize) < h {
                    s += kv * tmp[yy as usize * w + x];
                }
            }
            out[y * w + x] = s;
        }
    }
    out
}

fn plane(img: &Image, ch: usize) -> Vec<f64> {
    img.data.iter().skip(ch).step_by(3).copied().collect()
}

/// Per-channel local statistics needed for SSIM and its gradient.
struct SsimMaps {
    kernel: Vec<f64>,
    c1: f64,
    c2: f64,
    w: usize,
    h: usize,
    /// Per channel: (mu_x, mu_y, var_x, var_y, cov_xy).
    stats: Vec<[Vec<f64>; 5]>,
}

impl SsimMaps {
    fn new(x: &Image, y: &Image, cfg: &LossConfig) -> Self {
        let kernel = gaussian_window(cfg.ssim_window, cfg.ssim_sigma);
        let (w, h) = (x.width, x.height);
        let stats = (0..3)
            .map(|ch| {
                let (px, py) = (plane(x, ch), plane(y, ch));
                let mx = blur(&px, w, h, &kernel);
                let my = blur(&py, w, h, &kernel);
                let sq = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(a, b)| a * b).collect::<Vec<_>>();
                let xx = blur(&sq(&px, &px), w, h, &kernel);
                let yy = blur(&sq(&py, &py), w, h, &kernel);
                let xy = blur(&sq(&px, &py), w, h, &kernel);
                let vx = (0..w * h).map(|i| xx[i] - mx[i] * mx[i]).collect();
                let vy = (0..w * h).map(|i| yy[i] - my[i] * my[i]).collect();
                let cxy = (0..w * h).map(|i| xy[i] - mx[i] * my[i]).collect();
                [mx, my, vx, vy, cxy]
            })
            .collect();
        Self {
            kernel,
            c1: cfg.ssim_k1 * cfg.ssim_k1,
            c2: cfg.ssim_k2 * cfg.ssim_k2,
            w,
            h,
            stats,
        }
    }

    fn terms(&self, ch: usize, i: usize) -> (f64, f64, f64, f64, f64) {
        let [mx, my, vx, vy, cxy] = &self.stats[ch];
        let n1 = 2.0 * mx[i] * my[i] + self.c1;
        let d1 = mx[i] * mx[i] + my[i] * my[i] + self.c1;
        let n2 = 2.0 * cxy[i] + self.c2;
        let d2 = vx[i] + vy[i] + self.c2;
        (n1, d1, n2, d2, n1 * n2 / (d1 * d2))
    }

    fn mean(&self) -> f64 {
        let n = self.w * self.h;
        if n == 0 {
            return 1.0;
        }
        let total: f64 = (0..3).map(|ch| (0..n).map(|i| self.terms(ch, i).4).sum::<f64>()).sum();
        total / (3 * n) as f64
    }

    /// d(mean SSIM)/dx for every interleaved value of `x`.
    fn gradient(&self, x: &Image, y: &Image) -> Vec<f64> {
        let n = self.w * self.h;
        let scale = 1.0 / (3 * n).max(1) as f64;
        let mut out = vec![0.0; 3 * n];
        for ch in 0..3 {
            let [mx, my, ..] = &self.stats[ch];
            let mut a = vec![0.0; n];
            let mut b = vec![0.0; n];
            let mut c = vec![0.0; n];
            for i in 0..n {
                let (n1, d1, n2, d2, s) = self.terms(ch, i);
                let ds_dvx = -s / d2;
                let ds_dcxy = 2.0 * n1 / (d1 * d2);
                let ds_dmx = 2.0 * my[i] * n2 / (d1 * d2) - s * 2.0 * mx[i] / d1;
                a[i] = ds_dmx - 2.0 * mx[i] * ds_dvx - my[i] * ds_dcxy;
                b[i] = ds_dvx;
                c[i] = ds_dcxy;
            }
            let (ga, gb, gc) = (
                blur(&a, self.w, self.h, &self.kernel),
                blur(&b, self.w, self.h, &self.kernel),
                blur(&c, self.w, self.h, &self.kernel),
            );
            for i in 0..n {
                let (xv, yv) = (x.data[3 * i + ch], y.data[3 * i + ch]);
                out[3 * i + ch] = scale * (ga[i] + 2.0 * xv * gb[i] + yv * gc[i]);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_sums_to_one() {
        let w = gaussian_window(11, 1.5);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(w[0], w[10]);
    }

    #[test]
    fn blur_constant_interior() {
        let w = 30;
        let out = blur(&vec![2.0; w * w], w, w, &gaussian_window(11, 1.5));
        assert!((out[15 * w + 15] - 2.0).abs() < 1e-12);
        assert!(out[0] < 2.0);
    }

    #[test]
    fn ssim_gradient_matches_finite_difference() {
        let (w, h) = (9, 7);
        let mut a = Image::new(w, h);
        let mut b = Image::new(w, h);
        for i in 0..a.data.len() {
            a.data[i] = ((i * 37 % 101) as f64) / 101.0;
            b.data[i] = ((i * 53 % 97) as f64) / 97.0;
        }
        let cfg = LossConfig { lambda: 0.3, ..Default::default() };
        let (_, g) = loss_and_grad(&a, &b, &cfg).unwrap();
        let hstep = 1e-6;
        for i in (0..a.data.len()).step_by(7) {
            let mut p = a.clone();
            let mut m = a.clone();
            p.data[i] += hstep;
            m.data[i] -= hstep;
            let fd = (loss(&p, &b, &cfg).unwrap() - loss(&m, &b, &cfg).unwrap()) / (2.0 * hstep);
            assert!((fd - g[i]).abs() < 1e-7, "{i}: {fd} vs {}", g[i]);
        }
    }
}
