use std::fmt;
use std::str::FromStr;

use super::embedding::{cosine, Embedding};
use crate::error::{Error, Result};

/// Pixel count of a 3×256×256 image, the resolution at which the default
/// perturbation radius is calibrated.
const REFERENCE_NUMEL: f64 = 196_608.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Denominator {
    /// `‖Δ‖² + ε`: perturbation magnitude `ρ/‖Δ‖`.
    #[default]
    SquaredNorm,
    /// `‖Δ‖ + ε`: perturbation magnitude `ρ` (unit direction).
    Norm,
}

impl fmt::Display for Denominator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Denominator::SquaredNorm => "squared-norm",
            Denominator::Norm => "norm",
        })
    }
}

impl FromStr for Denominator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "squared-norm" => Ok(Denominator::SquaredNorm),
            "norm" => Ok(Denominator::Norm),
            other => Err(Error::invalid(format!("unknown denominator '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SscdNormConfig {
    pub rho: f64,
    pub eps_div: f64,
    pub denominator: Denominator,
}

impl Default for SscdNormConfig {
    fn default() -> Self {
        SscdNormConfig {
            rho: 100.0,
            eps_div: 1e-8,
            denominator: Denominator::SquaredNorm,
        }
    }
}

impl SscdNormConfig {
    /// Default radius rescaled so the per-pixel perturbation matches the
    /// reference resolution: `100·sqrt(numel / 196608)`.
    pub fn for_numel(numel: usize) -> Self {
        SscdNormConfig {
            rho: 100.0 * (numel as f64 / REFERENCE_NUMEL).sqrt(),
            ..Self::default()
        }
    }
}

/// `x0 + ρ·Δ/(‖Δ‖² + ε)` (or `/(‖Δ‖ + ε)`) with `Δ = x0_hat - x0`.
pub fn sscd_norm_perturbed(x0: &[f64], x0_hat: &[f64], cfg: &SscdNormConfig) -> Result<Vec<f64>> {
    check_len(x0, x0_hat)?;
    let delta: Vec<f64> = x0_hat.iter().zip(x0).map(|(h, x)| h - x).collect();
    let sq: f64 = delta.iter().map(|d| d * d).sum();
    let denom = match cfg.denominator {
        Denominator::SquaredNorm => sq + cfg.eps_div,
        Denominator::Norm => sq.sqrt() + cfg.eps_div,
    };
    let scale = cfg.rho / denom;
    Ok(x0.iter().zip(&delta).map(|(x, d)| x + scale * d).collect())
}

/// Embedding similarity between the original and the original pushed along
/// the reconstruction error direction by a bounded perturbation.
pub fn sscd_norm(
    x0: &[f64],
    x0_hat: &[f64],
    embed: &dyn Embedding,
    cfg: &SscdNormConfig,
) -> Result<f64> {
    let perturbed = sscd_norm_perturbed(x0, x0_hat, cfg)?;
    Ok(cosine(&embed.embed(x0), &embed.embed(&perturbed)))
}

/// Cosine similarity of the two embeddings.
pub fn sscd_plain(x0: &[f64], x0_hat: &[f64], embed: &dyn Embedding) -> Result<f64> {
    check_len(x0, x0_hat)?;
    Ok(cosine(&embed.embed(x0), &embed.embed(x0_hat)))
}

fn check_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch {
            op: "sscd",
            left: vec![a.len()],
            right: vec![b.len()],
        });
    }
    Ok(())
}
