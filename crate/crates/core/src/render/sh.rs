//! Real spherical-harmonic basis up to degree 3, in the 3DGS sign convention.

pub const C0: f64 = 0.282_094_791_773_878_14;
const C1: f64 = 0.488_602_511_902_919_9;
const C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
const C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];

/// Number of basis functions for a degree.
pub const fn basis_len(sh_degree: u8) -> usize {
    let d = sh_degree as usize + 1;
    d * d
}

/// Basis values at unit direction `d`; entries past `basis_len` are zero.
pub fn basis(sh_degree: u8, d: [f64; 3]) -> [f64; 16] {
    let [x, y, z] = d;
    let mut b = [0.0; 16];
    b[0] = C0;
    if sh_degree >= 1 {
        b[1] = -C1 * y;
        b[2] = C1 * z;
        b[3] = -C1 * x;
    }
    if sh_degree >= 2 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        b[4] = C2[0] * x * y;
        b[5] = C2[1] * y * z;
        b[6] = C2[2] * (2.0 * zz - xx - yy);
        b[7] = C2[3] * x * z;
        b[8] = C2[4] * (xx - yy);
        if sh_degree >= 3 {
            b[9] = C3[0] * y * (3.0 * xx - yy);
            b[10] = C3[1] * x * y * z;
            b[11] = C3[2] * y * (4.0 * zz - xx - yy);
            b[12] = C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy);
            b[13] = C3[4] * x * (4.0 * zz - xx - yy);
            b[14] = C3[5] * z * (xx - yy);
            b[15] = C3[6] * x * (xx - 3.0 * yy);
        }
    }
    b
}

/// Partial derivatives of each basis function with respect to the (unnormalized)
/// components of `d`.
pub fn basis_grad(sh_degree: u8, d: [f64; 3]) -> [[f64; 3]; 16] {
    let [x, y, z] = d;
    let mut g = [[0.0; 3]; 16];
    if sh_degree >= 1 {
        g[1] = [0.0, -C1, 0.0];
        g[2] = [0.0, 0.0, C1];
        g[3] = [-C1, 0.0, 0.0];
    }
    if sh_degree >= 2 {
        g[4] = [C2[0] * y, C2[0] * x, 0.0];
        g[5] = [0.0, C2[1] * z, C2[1] * y];
        g[6] = [-2.0 * C2[2] * x, -2.0 * C2[2] * y, 4.0 * C2[2] * z];
        g[7] = [C2[3] * z, 0.0, C2[3] * x];
        g[8] = [2.0 * C2[4] * x, -2.0 * C2[4] * y, 0.0];
    }
    if sh_degree >= 3 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        g[9] = [C3[0] * 6.0 * x * y, C3[0] * (3.0 * xx - 3.0 * yy), 0.0];
        g[10] = [C3[1] * y * z, C3[1] * x * z, C3[1] * x * y];
        g[11] = [
            C3[2] * -2.0 * x * y,
            C3[2] * (4.0 * zz - xx - 3.0 * yy),
            C3[2] * 8.0 * y * z,
        ];
        g[12] = [
            C3[3] * -6.0 * x * z,
            C3[3] * -6.0 * y * z,
            C3[3] * (6.0 * zz - 3.0 * xx - 3.0 * yy),
        ];
        g[13] = [
            C3[4] * (4.0 * zz - 3.0 * xx - yy),
            C3[4] * -2.0 * x * y,
            C3[4] * 8.0 * x * z,
        ];
        g[14] = [C3[5] * 2.0 * x * z, C3[5] * -2.0 * y * z, C3[5] * (xx - yy)];
        g[15] = [C3[6] * (3.0 * xx - 3.0 * yy), C3[6] * -6.0 * x * y, 0.0];
    }
    g
}

/// Raw color `Σ b_k c_k + 0.5` per channel, before the clamp at zero.
pub fn color(sh_degree: u8, dc: &[f64; 3], rest: &[f64], b: &[f64; 16]) -> [f64; 3] {
    let n = basis_len(sh_degree) - 1;
    let mut out = [0.0; 3];
    for (ch, o) in out.iter_mut().enumerate() {
        let mut v = b[0] * dc[ch];
        for j in 0..n {
            v += b[j + 1] * rest[ch * n + j];
        }
        *o = v + 0.5;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gradient_matches_finite_difference() {
        let d = [0.3, -0.5, 0.7];
        let g = basis_grad(3, d);
        let h = 1e-6;
        for axis in 0..3 {
            let mut p = d;
            let mut m = d;
            p[axis] += h;
            m[axis] -= h;
            let (bp, bm) = (basis(3, p), basis(3, m));
            for k in 0..16 {
                let fd = (bp[k] - bm[k]) / (2.0 * h);
                assert!((fd - g[k][axis]).abs() < 1e-7, "basis {k} axis {axis}");
            }
        }
    }

    #[test]
    fn dc_only_color() {
        let b = basis(0, [0.0, 0.0, 1.0]);
        let c = color(0, &[1.0, 0.0, -1.0], &[], &b);
        assert!((c[0] - (0.5 + C0)).abs() < 1e-15);
        assert_eq!(c[1], 0.5);
    }
}
