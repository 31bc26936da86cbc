//! GeM pooling and additive-angular-margin (ArcFace) logits and loss.

use crate::error::{Error, Result};

/// Tolerance on the unit-norm precondition of the ArcFace inputs.
pub const UNIT_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GemConfig {
    pub p: f64,
}

impl Default for GemConfig {
    fn default() -> Self {
        Self { p: 3.0 }
    }
}

impl GemConfig {
    pub fn new(p: f64) -> Result<Self> {
        if !(p > 0.0 && p.is_finite()) {
            return Err(Error::invalid(format!("GeM exponent must be > 0, got {p}")));
        }
        Ok(Self { p })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArcfaceConfig {
    pub scale: f64,
    pub margin: f64,
}

impl Default for ArcfaceConfig {
    fn default() -> Self {
        Self {
            scale: 30.0,
            margin: 0.3,
        }
    }
}

impl ArcfaceConfig {
    pub fn new(scale: f64, margin: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::invalid(format!("scale must be > 0, got {scale}")));
        }
        if !(0.0..std::f64::consts::FRAC_PI_2).contains(&margin) {
            return Err(Error::invalid(format!("margin must be in [0, pi/2), got {margin}")));
        }
        Ok(Self { scale, margin })
    }
}

/// Element-wise power mean over `features` (M rows of length D):
/// `out[d] = (mean_i features[i][d]^p)^(1/p)`.
pub fn gem_pool<R: AsRef<[f64]>>(features: &[R], cfg: GemConfig) -> Result<Vec<f64>> {
    let cfg = GemConfig::new(cfg.p)?;
    let first = features
        .first()
        .ok_or_else(|| Error::invalid("GeM over zero vectors"))?;
    let dim = first.as_ref().len();
    let mut acc = vec![0.0f64; dim];
    for (i, row) in features.iter().enumerate() {
        let row = row.as_ref();
        if row.len() != dim {
            return Err(Error::DimMismatch {
                left: dim,
                right: row.len(),
            });
        }
        for (d, (&v, a)) in row.iter().zip(acc.iter_mut()).enumerate() {
            if !(v >= 0.0) {
                return Err(Error::invalid(format!(
                    "GeM needs non-negative activations, got {v} at [{i}][{d}]"
                )));
            }
            *a += v.powf(cfg.p);
        }
    }
    let m = features.len() as f64;
    Ok(acc.into_iter().map(|a| (a / m).powf(1.0 / cfg.p)).collect())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_unit(v: &[f64], what: &str) -> Result<()> {
    let n = dot(v, v).sqrt();
    if (n - 1.0).abs() > UNIT_TOLERANCE {
        return Err(Error::invalid(format!("{what} has norm {n}, expected unit")));
    }
    Ok(())
}

/// Raw cosines `<x, W_j>` after validating shapes and norms.
fn cosines<R: AsRef<[f64]>>(x: &[f64], weights: &[R], target: usize) -> Result<Vec<f64>> {
    if target >= weights.len() {
        return Err(Error::invalid(format!(
            "target {target} out of range for {} classes",
            weights.len()
        )));
    }
    check_unit(x, "x")?;
    weights
        .iter()
        .enumerate()
        .map(|(j, w)| {
            let w = w.as_ref();
            if w.len() != x.len() {
                return Err(Error::DimMismatch {
                    left: x.len(),
                    right: w.len(),
                });
            }
            check_unit(w, &format!("W[{j}]"))?;
            Ok(dot(x, w))
        })
        .collect()
}

/// `s*cos(theta_j)` for non-target classes, `s*cos(theta_t + m)` for the target.
///
/// `cos(theta + m)` is expanded as `cos*cos(m) - sin*sin(m)` with
/// `sin = sqrt(max(0, 1 - cos^2))`, so no `acos` is taken. There is no
/// easy-margin fallback: once `theta + m > pi` the target logit stops being
/// monotone in theta, which is left as is.
pub fn arcface_logits<R: AsRef<[f64]>>(
    x: &[f64],
    weights: &[R],
    target: usize,
    cfg: ArcfaceConfig,
) -> Result<Vec<f64>> {
    let cfg = ArcfaceConfig::new(cfg.scale, cfg.margin)?;
    let cos = cosines(x, weights, target)?;
    Ok(logits_from_cos(&cos, target, cfg))
}

fn logits_from_cos(cos: &[f64], target: usize, cfg: ArcfaceConfig) -> Vec<f64> {
    cos.iter()
        .enumerate()
        .map(|(j, &c)| {
            let c = c.clamp(-1.0, 1.0);
            if j == target && cfg.margin != 0.0 {
                let sin = (1.0 - c * c).max(0.0).sqrt();
                cfg.scale * (c * cfg.margin.cos() - sin * cfg.margin.sin())
            } else {
                cfg.scale * c
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    /// Gradient of the loss w.r.t. `x` as a free vector (no renormalization).
    pub grad_x: Vec<f64>,
}

/// Softmax cross-entropy over [`arcface_logits`] and its analytic gradient in `x`.
///
/// Where the cosine sits on the clamp boundary the target term uses the
/// one-sided derivative with the `sin` contribution dropped.
pub fn arcface_loss_grad<R: AsRef<[f64]>>(
    x: &[f64],
    weights: &[R],
    target: usize,
    cfg: ArcfaceConfig,
) -> Result<LossGrad> {
    let cfg = ArcfaceConfig::new(cfg.scale, cfg.margin)?;
    let cos = cosines(x, weights, target)?;
    let logits = logits_from_cos(&cos, target, cfg);

    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    let loss = max + z.ln() - logits[target];

    let mut grad_x = vec![0.0; x.len()];
    for (j, w) in weights.iter().enumerate() {
        let dl_dlogit = exps[j] / z - if j == target { 1.0 } else { 0.0 };
        let raw = cos[j];
        let dlogit_dcos = if !(-1.0..=1.0).contains(&raw) {
            0.0
        } else if j == target && cfg.margin != 0.0 {
            let sin = (1.0 - raw * raw).max(0.0).sqrt();
            let sin_term = if sin > 0.0 {
                raw / sin * cfg.margin.sin()
            } else {
                0.0
            };
            cfg.scale * (cfg.margin.cos() + sin_term)
        } else {
            cfg.scale
        };
        let coef = dl_dlogit * dlogit_dcos;
        for (g, &wv) in grad_x.iter_mut().zip(w.as_ref()) {
            *g += coef * wv;
        }
    }
    Ok(LossGrad { loss, grad_x })
}
