//! Per-patch signal conditioning.
//!
//! Incoming windows at the S layers are partially whitened,
//! `y = (x - alpha * mean) / (std + beta)`, then scaled to unit length.
//! Stored filters and templates are fully whitened (mean removed) and
//! unit-normalized, with no saturation constant.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Norm below which [`unit_normalize`] returns the zero vector.
pub const NORM_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StdConvention {
    /// Divide by n.
    #[default]
    Population,
    /// Divide by n - 1.
    Sample,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WhiteningParams {
    /// Fraction of the mean removed, in [0, 1].
    pub alpha: f64,
    /// Semi-saturation constant added to the standard deviation.
    pub beta: f64,
    #[serde(default)]
    pub std: StdConvention,
}

impl Default for WhiteningParams {
    fn default() -> Self {
        Self {
            alpha: 0.98,
            beta: 3.0,
            std: StdConvention::Population,
        }
    }
}

impl WhiteningParams {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        let p = Self {
            alpha,
            beta,
            std: StdConvention::Population,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidParameter(format!(
                "alpha {} outside [0, 1]",
                self.alpha
            )));
        }
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "beta {} must be finite and >= 0",
                self.beta
            )));
        }
        Ok(())
    }
}

/// How an incoming S-layer window is conditioned before matching.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PatchConditioning {
    /// Partial whitening followed by unit normalization.
    Whiten(WhiteningParams),
    /// Raw window, unit normalization only.
    NormalizeOnly,
}

impl Default for PatchConditioning {
    fn default() -> Self {
        PatchConditioning::Whiten(WhiteningParams::default())
    }
}

impl PatchConditioning {
    /// Conditions `buf` in place: whiten (if configured) then unit-normalize.
    pub fn apply(&self, buf: &mut [f64]) -> Result<()> {
        if let PatchConditioning::Whiten(p) = self {
            partial_whiten_in_place(buf, p)?;
        }
        unit_normalize_in_place(buf);
        Ok(())
    }
}

pub(crate) fn mean_std(x: &[f64], convention: StdConvention) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let ss: f64 = x.iter().map(|v| (v - mean) * (v - mean)).sum();
    let denom = match convention {
        StdConvention::Population => n,
        StdConvention::Sample => (n - 1.0).max(1.0),
    };
    (mean, (ss / denom).sqrt())
}

pub fn partial_whiten_in_place(x: &mut [f64], params: &WhiteningParams) -> Result<()> {
    if x.is_empty() {
        return Err(Error::InvalidParameter("empty patch".into()));
    }
    let (mean, std) = mean_std(x, params.std);
    let denom = std + params.beta;
    if denom == 0.0 {
        return Err(Error::WhiteningDivideByZero);
    }
    let shift = params.alpha * mean;
    for v in x.iter_mut() {
        *v = (*v - shift) / denom;
    }
    Ok(())
}

/// `y = (x - alpha * mean) / (std + beta)`.
pub fn partial_whiten(x: &[f64], params: &WhiteningParams) -> Result<Vec<f64>> {
    let mut out = x.to_vec();
    partial_whiten_in_place(&mut out, params)?;
    Ok(out)
}

/// Scales to unit L2 norm; returns the L2 norm before scaling. Vectors with
/// norm at or below [`NORM_EPS`] are set to zero.
pub fn unit_normalize_in_place(x: &mut [f64]) -> f64 {
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > NORM_EPS {
        for v in x.iter_mut() {
            *v /= norm;
        }
    } else {
        x.iter_mut().for_each(|v| *v = 0.0);
    }
    norm
}

pub fn unit_normalize(x: &[f64]) -> Vec<f64> {
    let mut out = x.to_vec();
    unit_normalize_in_place(&mut out);
    out
}

pub fn full_whiten_unit_in_place(x: &mut [f64]) {
    if x.is_empty() {
        return;
    }
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    for v in x.iter_mut() {
        *v -= mean;
    }
    unit_normalize_in_place(x);
}

/// Mean removal followed by unit normalization. Constant input maps to zero.
pub fn full_whiten_unit(x: &[f64]) -> Vec<f64> {
    let mut out = x.to_vec();
    full_whiten_unit_in_place(&mut out);
    out
}
