//! IEEE 754 binary16 conversion with round-to-nearest-even.
//!
//! Out-of-range magnitudes (including infinities) saturate to ±65504 instead
//! of overflowing; NaN maps to the canonical quiet NaN `0x7E00`.

pub const HALF_MAX: f64 = 65504.0;
const MAX_FINITE_BITS: u16 = 0x7BFF;

pub fn to_half(x: f64) -> u16 {
    if x.is_nan() {
        return 0x7E00;
    }
    let sign: u16 = if x.is_sign_negative() { 0x8000 } else { 0 };
    let a = x.abs();
    if a == 0.0 {
        return sign;
    }
    if a >= 65520.0 {
        return sign | MAX_FINITE_BITS;
    }
    // Binary exponent e with 2^e <= a < 2^(e+1); exact for normal f64 inputs.
    let e = if a < f64::MIN_POSITIVE {
        -1023
    } else {
        ((a.to_bits() >> 52) as i32) - 1023
    };
    let bits = if e < -14 {
        // Subnormal half: multiples of 2^-24. A rounded value of 1024 lands on
        // the smallest normal, whose encoding is also 0x0400.
        (a * (1u64 << 24) as f64).round_ties_even() as u32
    } else {
        let m = (a * 2f64.powi(10 - e)).round_ties_even() as u32; // in [1024, 2048]
        (((e + 15) as u32) << 10) + (m - 1024)
    };
    if bits >= 0x7C00 {
        sign | MAX_FINITE_BITS
    } else {
        sign | bits as u16
    }
}

pub fn from_half(h: u16) -> f64 {
    let sign = if h & 0x8000 != 0 { -1.0 } else { 1.0 };
    let exp = ((h >> 10) & 0x1F) as i32;
    let man = (h & 0x3FF) as f64;
    let mag = match exp {
        0 => man * 2f64.powi(-24),
        31 if man == 0.0 => f64::INFINITY,
        31 => f64::NAN,
        _ => (1.0 + man / 1024.0) * 2f64.powi(exp - 15),
    };
    sign * mag
}

/// Value after a round trip through binary16.
pub fn round_half(x: f64) -> f64 {
    from_half(to_half(x))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_points() {
        assert_eq!(to_half(1.0), 0x3C00);
        assert_eq!(to_half(-2.0), 0xC000);
        assert_eq!(to_half(0.0), 0x0000);
        assert_eq!(to_half(-0.0), 0x8000);
        assert_eq!(to_half(65504.0), 0x7BFF);
        assert_eq!(from_half(to_half(65505.0)), 65504.0);
        assert_eq!(to_half(1e9), 0x7BFF);
        assert_eq!(to_half(f64::NEG_INFINITY), 0xFBFF);
        assert_eq!(to_half(2f64.powi(-24)), 0x0001);
        assert_eq!(to_half(2f64.powi(-14)), 0x0400);
        assert_eq!(from_half(0x3555), 0.333251953125);
    }

    #[test]
    fn ties_round_to_even() {
        // 1 + 2^-11 is exactly halfway between 1.0 and the next half.
        assert_eq!(to_half(1.0 + 2f64.powi(-11)), 0x3C00);
        assert_eq!(to_half(1.0 + 3.0 * 2f64.powi(-11)), 0x3C02);
        // Halfway between the two smallest subnormals.
        assert_eq!(to_half(1.5 * 2f64.powi(-24)), 0x0002);
        assert_eq!(to_half(0.5 * 2f64.powi(-24)), 0x0000);
    }
}
