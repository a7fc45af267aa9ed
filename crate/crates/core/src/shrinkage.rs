//! Constrained James–Stein correction of the plug-in allocation, plus the
//! divergence and risk-difference diagnostics used to test its dominance.
//!
//! With `s` the number of positive plug-in transfers, the corrected
//! allocation rescales the plug-in vector by
//!
//!   factor = 1 - σ²(s - 3) / ‖τ‖²,
//!
//! truncated back to 1 whenever the raw factor leaves (0, 1). Scaling by a
//! factor in (0, 1] keeps the result inside the action space.
//! [`divergence_g`] and [`stein_risk_difference_sample`] are diagnostics for
//! the test suite, not allocation rules.

use crate::allocation::TransferVector;
use crate::scalar::{real, Real};
use crate::{Error, Result};

/// Result of applying the James–Stein correction.
#[derive(Debug, Clone)]
pub struct ShrinkageOutcome<R> {
    pub transfers: TransferVector<R>,
    /// Applied factor in (0, 1]; exactly 1 when no shrinkage was applied.
    pub factor: R,
    /// Number of strictly positive plug-in transfers.
    pub active_count: usize,
}

/// Applies the truncated shrinkage factor to a plug-in allocation.
///
/// `noise_scale` is the common standard deviation σ of the estimates
/// (heteroskedastic callers pass a pooled scale). A zero plug-in vector is
/// returned untouched with factor 1: the normalized direction is undefined
/// there, and the event has measure zero under any noise distribution.
pub fn james_stein_shrink<R: Real>(
    plug_in: &TransferVector<R>,
    noise_scale: R,
) -> Result<ShrinkageOutcome<R>> {
    if !(noise_scale.is_finite() && noise_scale > R::zero()) {
        return Err(Error::Invalid(format!(
            "noise scale must be positive, got {noise_scale}"
        )));
    }
    let active_count = plug_in.active_count();
    let norm_sq = plug_in.norm_sq();

    let factor = if norm_sq > R::zero() {
        let s = real::<R>(active_count as f64);
        let raw = R::one() - noise_scale * noise_scale * (s - real(3.0)) / norm_sq;
        if raw > R::zero() && raw < R::one() {
            raw
        } else {
            R::one()
        }
    } else {
        R::one()
    };

    Ok(ShrinkageOutcome {
        transfers: plug_in.scaled(factor),
        factor,
        active_count,
    })
}

/// Divergence of the normalized direction g(X) = τ/‖τ‖² on the region where
/// the budget binds with `s` active coordinates:
///
///   div g = (s - 3)/‖τ‖² + 2B²/(s·‖τ‖⁴).
pub fn divergence_g<R: Real>(plug_in: &TransferVector<R>, budget: R) -> Result<R> {
    let norm_sq = plug_in.norm_sq();
    if norm_sq <= R::zero() {
        return Err(Error::ZeroVector);
    }
    let s = real::<R>(plug_in.active_count() as f64);
    Ok((s - real(3.0)) / norm_sq + real::<R>(2.0) * budget * budget / (s * norm_sq * norm_sq))
}

/// Single-sample contribution to the risk difference R(JS) - R(plug-in).
///
/// On the shrinkage event `{s > 3, 0 < σ²(s-3) < ‖τ‖²}` the value is
///
///   -σ⁴ [ (s-3)²/‖τ‖² + 4B²(s-3)/(s·‖τ‖⁴) ],
///
/// and 0 otherwise. Averaging over draws of the noisy estimates estimates
/// the risk difference, which is strictly negative whenever the event has
/// positive probability.
pub fn stein_risk_difference_sample<R: Real>(
    plug_in: &TransferVector<R>,
    noise_scale: R,
    budget: R,
) -> R {
    let s_count = plug_in.active_count();
    if s_count <= 3 {
        return R::zero();
    }
    let norm_sq = plug_in.norm_sq();
    let s = real::<R>(s_count as f64);
    let sigma_sq = noise_scale * noise_scale;
    let shift = sigma_sq * (s - real(3.0));
    if !(shift > R::zero() && shift < norm_sq) {
        return R::zero();
    }
    let first = (s - real(3.0)) * (s - real(3.0)) / norm_sq;
    let second = real::<R>(4.0) * budget * budget * (s - real(3.0)) / (s * norm_sq * norm_sq);
    -sigma_sq * sigma_sq * (first + second)
}
