//! Acquisition functions and next-point selection.
//!
//! Plain mode picks the acquisition argmax over unmeasured candidates.
//! Strategic mode multiplies the acquisition by an under-sampling factor
//! `(1 - exp(-dmin^2 / 2 tau^2))` on regular steps and, every `jump_period`
//! steps, restricts the search to candidates at least `jump_radius` pixels
//! from everything measured so far, taking the raw argmax there.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

use crate::dataspace::MeasuredSet;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum AcquisitionKind {
    /// Expected improvement with exploration margin `xi`.
    Ei { xi: f64 },
    /// Upper confidence bound with exploration weight `beta`.
    Ucb { beta: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AcquisitionConfig {
    pub kind: AcquisitionKind,
    /// Enables strategic sampling (proximity cost + periodic jumps).
    pub sane: bool,
    /// Jump every `jump_period`-th post-seed step.
    pub jump_period: usize,
    /// Proximity cost length scale tau, in pixels.
    pub proximity_scale: f64,
    /// Minimum distance from measured points for jump targets, in pixels.
    pub jump_radius: f64,
}

impl Default for AcquisitionConfig {
    fn default() -> Self {
        Self {
            kind: AcquisitionKind::Ucb { beta: 1.5 },
            sane: false,
            jump_period: 5,
            proximity_scale: 4.0,
            jump_radius: 15.0,
        }
    }
}

impl AcquisitionConfig {
    /// Defaults with tau and rho scaled by `min(H, W) / 64`.
    pub fn default_for_grid(height: usize, width: usize) -> Self {
        let scale = height.min(width) as f64 / 64.0;
        Self {
            proximity_scale: 4.0 * scale,
            jump_radius: 15.0 * scale,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            AcquisitionKind::Ei { xi } if xi < 0.0 => {
                return Err(Error::invalid("xi", "must be >= 0"));
            }
            AcquisitionKind::Ucb { beta } if beta < 0.0 => {
                return Err(Error::invalid("beta", "must be >= 0"));
            }
            _ => {}
        }
        if self.sane {
            if self.jump_period < 2 {
                return Err(Error::invalid("jump_period", "must be >= 2 when sane"));
            }
            if !(self.proximity_scale > 0.0) {
                return Err(Error::invalid("proximity_scale", "must be > 0"));
            }
            if !(self.jump_radius > 0.0) {
                return Err(Error::invalid("jump_radius", "must be > 0"));
            }
        }
        Ok(())
    }
}

fn normal_cdf<S: Scalar>(x: S) -> S {
    S::cast(0.5 * (1.0 + erf(x.f64() / std::f64::consts::SQRT_2)))
}

fn normal_pdf<S: Scalar>(x: S) -> S {
    let inv_sqrt_2pi = S::cast(0.398_942_280_401_432_7);
    inv_sqrt_2pi * (-x * x / S::cast(2.0)).exp()
}

/// Expected improvement over `best` with margin `xi`; zero-variance inputs
/// reduce to the positive part of the mean gap.
pub fn expected_improvement<S: Scalar>(mean: S, sigma: S, best: S, xi: S) -> S {
    let gap = mean - best - xi;
    if sigma > S::zero() {
        let u = gap / sigma;
        gap * normal_cdf(u) + sigma * normal_pdf(u)
    } else {
        gap.max(S::zero())
    }
}

/// Upper confidence bound `mean + beta * sigma`.
pub fn ucb<S: Scalar>(mean: S, sigma: S, beta: S) -> S {
    mean + beta * sigma
}

fn min_sq_dist(loc: (usize, usize), measured: &MeasuredSet) -> f64 {
    let mut best = f64::INFINITY;
    for (&(r, c), _) in measured.iter() {
        let dr = loc.0 as f64 - r as f64;
        let dc = loc.1 as f64 - c as f64;
        best = best.min(dr * dr + dc * dc);
    }
    best
}

/// Gaussian proximity cost in [0, 1): 1 on top of a measured point, decaying
/// with the distance to the nearest one.
pub fn proximity_cost(loc: (usize, usize), measured: &MeasuredSet, tau: f64) -> Result<f64> {
    if measured.is_empty() {
        return Err(Error::EmptyMeasuredSet {
            what: "proximity_cost",
        });
    }
    if !(tau > 0.0) {
        return Err(Error::invalid("tau", "must be > 0"));
    }
    let d2 = min_sq_dist(loc, measured);
    Ok((-d2 / (2.0 * tau * tau)).exp())
}

/// Applies the acquisition rule at post-seed step `t` (1-based) and returns
/// the chosen location plus whether this was a jump step that found a remote
/// candidate. `acq` must align with `candidates`; measured candidates are
/// skipped. Ties break toward the lower (row-major) index.
pub fn select_next(
    acq: &[f64],
    candidates: &[(usize, usize)],
    measured: &MeasuredSet,
    step: usize,
    cfg: &AcquisitionConfig,
) -> Result<((usize, usize), bool)> {
    cfg.validate()?;
    if acq.len() != candidates.len() {
        return Err(Error::DimMismatch {
            what: "acquisition values",
            expected: candidates.len(),
            actual: acq.len(),
        });
    }

    let argmax = |value: &dyn Fn(usize) -> Option<f64>| -> Option<(usize, usize)> {
        let mut best: Option<(f64, usize)> = None;
        for (i, &loc) in candidates.iter().enumerate() {
            if measured.contains(loc) {
                continue;
            }
            let Some(v) = value(i) else { continue };
            match best {
                Some((bv, _)) if v <= bv => {}
                _ => best = Some((v, i)),
            }
        }
        best.map(|(_, i)| candidates[i])
    };

    let any_unmeasured = candidates.iter().any(|&l| !measured.contains(l));
    if !any_unmeasured {
        return Err(Error::CandidatesExhausted);
    }

    if !cfg.sane {
        let loc = argmax(&|i| Some(acq[i])).ok_or(Error::CandidatesExhausted)?;
        return Ok((loc, false));
    }

    if measured.is_empty() {
        return Err(Error::EmptyMeasuredSet { what: "select_next" });
    }

    let jump_step = step % cfg.jump_period == 0;
    if jump_step {
        let rho2 = cfg.jump_radius * cfg.jump_radius;
        let remote = argmax(&|i| {
            if min_sq_dist(candidates[i], measured) >= rho2 {
                Some(acq[i])
            } else {
                None
            }
        });
        if let Some(loc) = remote {
            return Ok((loc, true));
        }
        log::debug!("jump step {step}: remote set empty, using the regular rule");
    }

    let tau2 = 2.0 * cfg.proximity_scale * cfg.proximity_scale;
    let loc = argmax(&|i| {
        let cost = (-min_sq_dist(candidates[i], measured) / tau2).exp();
        Some(acq[i] * (1.0 - cost))
    })
    .ok_or(Error::CandidatesExhausted)?;
    Ok((loc, false))
}
