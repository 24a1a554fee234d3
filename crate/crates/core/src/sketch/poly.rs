//! Least-squares polynomial models over the line parameter `t`.

use nalgebra::DMatrix;
use thiserror::Error;

pub const MAX_DEGREE: usize = 10;

#[derive(Debug, Error, PartialEq)]
pub enum PolyError {
    #[error("cannot fit a polynomial to an empty sample")]
    Empty,
    #[error("sample has {t} parameters but {values} value rows")]
    LengthMismatch { t: usize, values: usize },
    #[error("least-squares solve failed")]
    Solve,
}

/// Vector-valued polynomial `f(t) = Σ_p c_p t^p` with `k` output components.
///
/// Coefficients are component-major: component `c` owns
/// `coeffs[c * (degree + 1) .. (c + 1) * (degree + 1)]`, ascending power.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyModel {
    pub degree: usize,
    pub k: usize,
    pub coeffs: Vec<f64>,
}

impl PolyModel {
    pub fn constant(values: &[f64]) -> Self {
        Self {
            degree: 0,
            k: values.len(),
            coeffs: values.to_vec(),
        }
    }

    pub fn component(&self, c: usize) -> &[f64] {
        let n = self.degree + 1;
        &self.coeffs[c * n..(c + 1) * n]
    }

    pub fn eval_component(&self, c: usize, t: f64) -> f64 {
        // Horner.
        self.component(c).iter().rev().fold(0.0, |acc, &a| acc * t + a)
    }

    pub fn eval(&self, t: f64) -> Vec<f64> {
        (0..self.k).map(|c| self.eval_component(c, t)).collect()
    }

    /// Same model with every coefficient narrowed to binary32 precision.
    pub fn rounded_to_f32(&self) -> Self {
        Self {
            coeffs: self.coeffs.iter().map(|&c| c as f32 as f64).collect(),
            ..self.clone()
        }
    }

    pub fn is_valid(&self) -> bool {
        self.degree <= MAX_DEGREE
            && self.coeffs.len() == (self.degree + 1) * self.k
            && self.coeffs.iter().all(|c| c.is_finite())
    }
}

/// Vandermonde matrix `[1, t, …, t^degree]`, one row per sample.
pub fn vandermonde(t: &[f64], degree: usize) -> DMatrix<f64> {
    DMatrix::from_fn(t.len(), degree + 1, |i, p| t[i].powi(p as i32))
}

struct LstsqFit {
    coeffs: DMatrix<f64>,
    /// Diagonal of the hat matrix `X X⁺`.
    leverage: Vec<f64>,
}

fn lstsq(t: &[f64], values: &DMatrix<f64>, degree: usize) -> Result<LstsqFit, PolyError> {
    let x = vandermonde(t, degree);
    let svd = x.svd(true, true);
    let smax = svd.singular_values.max();
    let eps = smax * (t.len().max(degree + 1) as f64) * f64::EPSILON;
    let coeffs = svd.solve(values, eps).map_err(|_| PolyError::Solve)?;
    let u = svd.u.as_ref().ok_or(PolyError::Solve)?;
    let rank_cols: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&j| svd.singular_values[j] > eps)
        .collect();
    let leverage = (0..t.len())
        .map(|i| rank_cols.iter().map(|&j| u[(i, j)] * u[(i, j)]).sum())
        .collect();
    Ok(LstsqFit { coeffs, leverage })
}

fn check(t: &[f64], values: &DMatrix<f64>) -> Result<(), PolyError> {
    if t.is_empty() {
        return Err(PolyError::Empty);
    }
    if values.nrows() != t.len() {
        return Err(PolyError::LengthMismatch {
            t: t.len(),
            values: values.nrows(),
        });
    }
    Ok(())
}

/// Per-component ordinary least squares; rank deficiency resolves to the
/// minimum-norm solution.
pub fn fit_poly(t: &[f64], values: &DMatrix<f64>, degree: usize) -> Result<PolyModel, PolyError> {
    check(t, values)?;
    let fit = lstsq(t, values, degree)?;
    let k = values.ncols();
    let mut coeffs = Vec::with_capacity((degree + 1) * k);
    for c in 0..k {
        coeffs.extend(fit.coeffs.column(c).iter());
    }
    Ok(PolyModel { degree, k, coeffs })
}

/// Root-mean-square residual of `model` over the sample, pooled across components.
pub fn rmse(model: &PolyModel, t: &[f64], values: &DMatrix<f64>) -> f64 {
    let mut sum = 0.0;
    for (i, &ti) in t.iter().enumerate() {
        for c in 0..model.k {
            let r = values[(i, c)] - model.eval_component(c, ti);
            sum += r * r;
        }
    }
    (sum / (t.len() * model.k).max(1) as f64).sqrt()
}

/// Number of samples from which degree selection switches to leave-one-out scoring.
pub const LOO_MIN_SAMPLES: usize = 12;

/// Relative slack within which a lower degree is preferred over the best score.
pub const DEGREE_SLACK: f64 = 0.01;

fn degree_score(t: &[f64], values: &DMatrix<f64>, degree: usize) -> Result<f64, PolyError> {
    let fit = lstsq(t, values, degree)?;
    let x = vandermonde(t, degree);
    let resid = values - &x * &fit.coeffs;
    let loo = t.len() >= LOO_MIN_SAMPLES;
    let mut sum = 0.0;
    for i in 0..t.len() {
        let scale = if loo {
            let h = fit.leverage[i];
            if h > 1.0 - 1e-9 {
                // The fit interpolates this sample; leaving it out is unconstrained.
                return Ok(f64::INFINITY);
            }
            1.0 / (1.0 - h)
        } else {
            1.0
        };
        for c in 0..values.ncols() {
            let r = resid[(i, c)] * scale;
            sum += r * r;
        }
    }
    Ok((sum / (t.len() * values.ncols()) as f64).sqrt())
}

/// Grid search over degrees `1..=min(10, n-1)`: leave-one-out RMSE for 12 or
/// more samples, training RMSE otherwise. Returns the smallest degree whose
/// score is within 1% of the best.
pub fn select_degree(t: &[f64], values: &DMatrix<f64>) -> Result<usize, PolyError> {
    check(t, values)?;
    let max_deg = MAX_DEGREE.min(t.len().saturating_sub(1)).max(1);
    let scores: Vec<f64> = (1..=max_deg)
        .map(|d| degree_score(t, values, d))
        .collect::<Result<_, _>>()?;
    let best = scores.iter().copied().fold(f64::INFINITY, f64::min);
    if !best.is_finite() {
        return Ok(1);
    }
    // Absolute floor so exact data is not decided by rounding noise.
    let scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = 1e-12 * (1.0 + scale);
    let limit = best * (1.0 + DEGREE_SLACK) + floor;
    Ok(scores.iter().position(|&s| s <= limit).map_or(1, |i| i + 1))
}
