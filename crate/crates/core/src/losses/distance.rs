use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest exponent fed to `exp` by the LogExp distance. Unit-normalized
/// embeddings keep `|x_i - y_i| <= 2`, so this only matters for raw inputs.
pub const LOGEXP_EXP_CLAMP: f64 = 50.0;

/// Per-pair feature distance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DistanceKind {
    L1,
    L2,
    SmoothL1 { beta: f64 },
    LogExp { p: f64 },
}

impl Default for DistanceKind {
    fn default() -> Self {
        DistanceKind::LogExp { p: 1.0 }
    }
}

impl fmt::Display for DistanceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DistanceKind::L1 => write!(f, "l1"),
            DistanceKind::L2 => write!(f, "l2"),
            DistanceKind::SmoothL1 { beta } => write!(f, "smooth_l1(beta={beta})"),
            DistanceKind::LogExp { p } => write!(f, "logexp(p={p})"),
        }
    }
}

/// Value and gradients of a distance between two vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct DistResult {
    pub value: f64,
    pub grad_x: Vec<f64>,
    pub grad_y: Vec<f64>,
}

impl DistResult {
    fn from_grad_x(value: f64, grad_x: Vec<f64>) -> Self {
        let grad_y = grad_x.iter().map(|g| -g).collect();
        Self {
            value,
            grad_x,
            grad_y,
        }
    }
}

fn check(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() || x.is_empty() {
        return Err(Error::shape(
            "distance",
            format!("x has {} dims, y has {}", x.len(), y.len()),
        ));
    }
    Ok(())
}

fn sign(d: f64) -> f64 {
    if d > 0.0 {
        1.0
    } else if d < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Mean absolute error.
pub fn dist_l1(x: &[f64], y: &[f64]) -> Result<DistResult> {
    check(x, y)?;
    let n = x.len() as f64;
    let diffs = x.iter().zip(y).map(|(a, b)| a - b);
    let value = diffs.clone().map(f64::abs).sum::<f64>() / n;
    Ok(DistResult::from_grad_x(value, diffs.map(|d| sign(d) / n).collect()))
}

/// Half mean squared error.
pub fn dist_l2(x: &[f64], y: &[f64]) -> Result<DistResult> {
    check(x, y)?;
    let n = x.len() as f64;
    let diffs = x.iter().zip(y).map(|(a, b)| a - b);
    let value = diffs.clone().map(|d| d * d).sum::<f64>() / (2.0 * n);
    Ok(DistResult::from_grad_x(value, diffs.map(|d| d / n).collect()))
}

/// Huber-style smooth L1: quadratic inside `|d| < beta`, linear outside.
pub fn dist_smooth_l1(x: &[f64], y: &[f64], beta: f64) -> Result<DistResult> {
    check(x, y)?;
    if !(beta > 0.0) {
        return Err(Error::invalid(format!("smooth-L1 beta must be > 0, got {beta}")));
    }
    let n = x.len() as f64;
    let mut value = 0.0;
    let mut grad = Vec::with_capacity(x.len());
    for (a, b) in x.iter().zip(y) {
        let d = a - b;
        if d.abs() < beta {
            value += d * d / (2.0 * beta);
            grad.push(d / beta / n);
        } else {
            value += d.abs() - beta / 2.0;
            grad.push(sign(d) / n);
        }
    }
    Ok(DistResult::from_grad_x(value / n, grad))
}

fn logexp_terms(x: &[f64], y: &[f64], p: f64) -> (Vec<f64>, Vec<f64>, f64) {
    let dists: Vec<f64> = x.iter().zip(y).map(|(a, b)| (a - b).abs()).collect();
    let exps: Vec<f64> = dists
        .iter()
        .map(|d| d.powf(p).min(LOGEXP_EXP_CLAMP).exp())
        .collect();
    let s: f64 = exps.iter().map(|e| e - 1.0).sum();
    (dists, exps, s)
}

/// `ln(1 + Σ (e^{|x_i-y_i|^p} - 1)) / (p·D)`.
///
/// The gradient of coordinate `i` is
/// `sign(x_i-y_i) · |x_i-y_i|^{p-1} · e^{|x_i-y_i|^p} / (D · (1 + S))`,
/// with the sign taken as 0 where `x_i == y_i`.
pub fn dist_logexp(x: &[f64], y: &[f64], p: f64) -> Result<DistResult> {
    check(x, y)?;
    if !(p > 0.0 && p.is_finite()) {
        return Err(Error::invalid(format!("LogExp p must be > 0, got {p}")));
    }
    let n = x.len() as f64;
    let (dists, exps, s) = logexp_terms(x, y, p);
    let value = s.ln_1p() / (p * n);
    let denom = n * (1.0 + s);
    let grad = x
        .iter()
        .zip(y)
        .zip(dists.iter().zip(&exps))
        .map(|((a, b), (&d, &e))| {
            let sg = sign(a - b);
            if sg == 0.0 {
                0.0
            } else {
                sg * d.powf(p - 1.0) * e / denom
            }
        })
        .collect();
    Ok(DistResult::from_grad_x(value, grad))
}

/// Per-coordinate gradient magnitude of the LogExp distance as given by its
/// closed form, `|x_i-y_i|^{p-1} · e^{|x_i-y_i|^p} / (D · (1 + S))`.
///
/// Unlike [`dist_logexp`], this does not zero coordinates with `x_i == y_i`:
/// for `p = 1` it returns the magnitude of the one-sided derivatives there.
pub fn logexp_gradient_magnitudes(x: &[f64], y: &[f64], p: f64) -> Result<Vec<f64>> {
    check(x, y)?;
    let n = x.len() as f64;
    let (dists, exps, s) = logexp_terms(x, y, p);
    let denom = n * (1.0 + s);
    Ok(dists
        .iter()
        .zip(&exps)
        .map(|(d, e)| d.powf(p - 1.0) * e / denom)
        .collect())
}

/// Remainder term of coordinate `i` for `p = 1`: `Σ_{j≠i} (e^{d_j} - 1)`, so
/// that the gradient magnitude reads `e^{d_i} / (D · (C + e^{d_i}))`.
pub fn logexp_remainder(dists: &[f64], i: usize) -> f64 {
    dists
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, d)| d.abs().min(LOGEXP_EXP_CLAMP).exp() - 1.0)
        .sum()
}

impl DistanceKind {
    pub fn validate(&self) -> Result<()> {
        match *self {
            DistanceKind::SmoothL1 { beta } if !(beta > 0.0 && beta.is_finite()) => {
                Err(Error::invalid(format!("smooth-L1 beta must be > 0, got {beta}")))
            }
            DistanceKind::LogExp { p } if !(p > 0.0 && p.is_finite()) => {
                Err(Error::invalid(format!("LogExp p must be > 0, got {p}")))
            }
            _ => Ok(()),
        }
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<DistResult> {
        match *self {
            DistanceKind::L1 => dist_l1(x, y),
            DistanceKind::L2 => dist_l2(x, y),
            DistanceKind::SmoothL1 { beta } => dist_smooth_l1(x, y, beta),
            DistanceKind::LogExp { p } => dist_logexp(x, y, p),
        }
    }

    /// Parse `l1`, `l2`, `smooth_l1[:beta]`, `logexp[:p]`.
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n.trim().to_string(), Some(a.trim().to_string())),
            None => (s.clone(), None),
        };
        let num = |default: f64| -> Result<f64> {
            match &arg {
                None => Ok(default),
                Some(a) => a
                    .parse()
                    .map_err(|_| Error::invalid(format!("bad distance parameter `{a}`"))),
            }
        };
        let kind = match name.as_str() {
            "l1" => DistanceKind::L1,
            "l2" => DistanceKind::L2,
            "smooth_l1" | "smoothl1" => DistanceKind::SmoothL1 { beta: num(1.0)? },
            "logexp" => DistanceKind::LogExp { p: num(1.0)? },
            other => return Err(Error::invalid(format!("unknown distance `{other}`"))),
        };
        kind.validate()?;
        Ok(kind)
    }
}
