//! Estimation of the mixing distribution of latent incomes and the posterior
//! quantities derived from it.
//!
//! The latent conditional mean income of household `i` is modeled as a draw
//! from an unknown distribution `G` on the nonnegative reals, observed
//! through `ŷ_i ~ N(μ_i, σ_i²)`. [`fit_npmle`] maximizes the marginal
//! log-likelihood over distributions supported on a fixed grid with an EM
//! fixed-point iteration; the average log-likelihood is nondecreasing at
//! every step and convergence is certified by the step-change tolerance
//! together with a first-order stationarity residual. Posterior means under
//! any [`DiscretePrior`] come in two algebraically identical forms — the
//! direct mixture ratio ([`posterior_mean`]) and the score-based form
//! ([`tweedie_posterior_mean`]) — which the test suite holds to agreement.
//!
//! All mixture sums shift exponents by the largest per-observation component
//! log-density before exponentiating.

use std::io::{BufRead, Write};

use rayon::prelude::*;

use crate::scalar::{real, Real};
use crate::stats::{log_sum_exp, mean, mills_gap, normal_log_pdf, population_variance};
use crate::{Error, Result};

/// Weight mass below which the EM stationarity check treats a grid point as
/// inactive; also the reporting threshold for the fitted support size.
pub const SUPPORT_WEIGHT_THRESHOLD: f64 = 1e-6;

/// A discrete mixing distribution: strictly increasing nonnegative support
/// points with weights summing to one (tolerance 1e-10).
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretePrior<R> {
    support: Vec<R>,
    weights: Vec<R>,
}

impl<R: Real> DiscretePrior<R> {
    pub fn new(support: Vec<R>, weights: Vec<R>) -> Result<Self> {
        if support.is_empty() {
            return Err(Error::EmptyInput("prior support"));
        }
        if support.len() != weights.len() {
            return Err(Error::LengthMismatch {
                left: support.len(),
                right: weights.len(),
            });
        }
        for (index, &mu) in support.iter().enumerate() {
            if !mu.is_finite() {
                return Err(Error::NonFinite { index });
            }
            if mu < R::zero() {
                return Err(Error::Invalid(format!(
                    "support point {mu} at index {index} is negative"
                )));
            }
            if index > 0 && mu <= support[index - 1] {
                return Err(Error::Invalid(format!(
                    "support must be strictly increasing (index {index})"
                )));
            }
        }
        let mut total = R::zero();
        for (index, &w) in weights.iter().enumerate() {
            if !w.is_finite() {
                return Err(Error::NonFinite { index });
            }
            if w < R::zero() {
                return Err(Error::Invalid(format!("negative weight at index {index}")));
            }
            total += w;
        }
        if (total - R::one()).abs() > real(1e-10) {
            return Err(Error::Invalid(format!("weights sum to {total}, expected 1")));
        }
        Ok(Self { support, weights })
    }

    pub fn point_mass(mu: R) -> Result<Self> {
        Self::new(vec![mu], vec![R::one()])
    }

    pub fn support(&self) -> &[R] {
        &self.support
    }

    pub fn weights(&self) -> &[R] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    pub fn mean(&self) -> R {
        self.support
            .iter()
            .zip(&self.weights)
            .map(|(&mu, &w)| mu * w)
            .sum()
    }

    pub fn second_moment(&self) -> R {
        self.support
            .iter()
            .zip(&self.weights)
            .map(|(&mu, &w)| mu * mu * w)
            .sum()
    }

    /// Number of support points carrying more than `threshold` weight.
    pub fn support_count_above(&self, threshold: R) -> usize {
        self.weights.iter().filter(|&&w| w > threshold).count()
    }
}

/// Noisy income estimates with their known per-household noise scales.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisyPanel<R> {
    estimates: Vec<R>,
    noise_scales: Vec<R>,
}

impl<R: Real> NoisyPanel<R> {
    pub fn new(estimates: Vec<R>, noise_scales: Vec<R>) -> Result<Self> {
        if estimates.is_empty() {
            return Err(Error::EmptyInput("panel"));
        }
        if estimates.len() != noise_scales.len() {
            return Err(Error::LengthMismatch {
                left: estimates.len(),
                right: noise_scales.len(),
            });
        }
        for (index, &y) in estimates.iter().enumerate() {
            if !y.is_finite() {
                return Err(Error::NonFinite { index });
            }
        }
        for (index, &s) in noise_scales.iter().enumerate() {
            if !(s.is_finite() && s > R::zero()) {
                return Err(Error::Invalid(format!(
                    "noise scale must be positive, got {s} at index {index}"
                )));
            }
        }
        Ok(Self {
            estimates,
            noise_scales,
        })
    }

    pub fn len(&self) -> usize {
        self.estimates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.estimates.is_empty()
    }

    pub fn estimates(&self) -> &[R] {
        &self.estimates
    }

    pub fn noise_scales(&self) -> &[R] {
        &self.noise_scales
    }

    pub fn max_noise_scale(&self) -> R {
        self.noise_scales.iter().copied().fold(R::zero(), R::max)
    }

    /// Pooled root-mean-square noise scale.
    pub fn pooled_noise_scale(&self) -> R {
        let n = real::<R>(self.len() as f64);
        (self.noise_scales.iter().map(|&s| s * s).sum::<R>() / n).sqrt()
    }
}

/// Default grid size: at least √n support points, floored at 100.
pub fn default_grid_size(n: usize) -> usize {
    ((n as f64).sqrt().ceil() as usize).max(100)
}

fn sqrt_n_floor(n: usize) -> usize {
    (n as f64).sqrt().ceil() as usize
}

/// Equally spaced grid spanning the data range widened by three maximum
/// noise scales, clipped to the nonnegative half-line.
pub fn build_grid<R: Real>(panel: &NoisyPanel<R>, grid_size: usize) -> Result<Vec<R>> {
    let floor = sqrt_n_floor(panel.len());
    if grid_size < floor {
        return Err(Error::InvalidConfig(format!(
            "grid size {grid_size} is below the √n floor {floor}"
        )));
    }
    let spread = real::<R>(3.0) * panel.max_noise_scale();
    let min_est = panel
        .estimates()
        .iter()
        .copied()
        .fold(R::infinity(), R::min);
    let max_est = panel
        .estimates()
        .iter()
        .copied()
        .fold(R::neg_infinity(), R::max);
    let lo = (min_est - spread).max(R::zero());
    let hi = max_est + spread;
    if hi <= lo {
        return Ok(vec![lo.max(R::zero())]);
    }
    if grid_size == 1 {
        return Ok(vec![(lo + hi) * real(0.5)]);
    }
    let step = (hi - lo) / real((grid_size - 1) as f64);
    Ok((0..grid_size)
        .map(|j| lo + step * real(j as f64))
        .collect())
}

/// Quantile-spaced alternative to [`build_grid`]: grid points at empirical
/// quantiles of the estimates (clipped to the nonnegative half-line), with
/// the ends widened by three maximum noise scales.
pub fn build_quantile_grid<R: Real>(panel: &NoisyPanel<R>, grid_size: usize) -> Result<Vec<R>> {
    let floor = sqrt_n_floor(panel.len());
    if grid_size < floor {
        return Err(Error::InvalidConfig(format!(
            "grid size {grid_size} is below the √n floor {floor}"
        )));
    }
    let mut sorted = panel.estimates().to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite estimates"));
    let spread = real::<R>(3.0) * panel.max_noise_scale();
    let lo = (sorted[0] - spread).max(R::zero());
    let hi = sorted[sorted.len() - 1] + spread;
    let mut grid = Vec::with_capacity(grid_size);
    grid.push(lo);
    if grid_size > 2 {
        let inner = grid_size - 2;
        for j in 1..=inner {
            let q = j as f64 / (inner + 1) as f64;
            let idx = ((sorted.len() - 1) as f64 * q).round() as usize;
            grid.push(sorted[idx].max(R::zero()));
        }
    }
    grid.push(hi.max(lo));
    grid.sort_by(|a, b| a.partial_cmp(b).expect("finite grid"));
    grid.dedup_by(|a, b| (*a - *b).abs() <= real(1e-12));
    Ok(grid)
}

/// Result of the EM fit: the estimated prior plus convergence diagnostics.
#[derive(Debug, Clone)]
pub struct NpmleFit<R> {
    pub prior: DiscretePrior<R>,
    /// EM updates performed.
    pub iterations: usize,
    /// Whether the average log-likelihood change fell below the tolerance.
    pub converged: bool,
    /// max_k (1/n) Σ_i φ_ik / f_i − 1, nonpositive (to tolerance) at an exact
    /// maximizer.
    pub stationarity_residual: R,
    /// Average log-likelihood before each EM update (index 0 = initial
    /// uniform weights).
    pub log_likelihood_trace: Vec<R>,
    pub n: usize,
    pub grid_lo: R,
    pub grid_hi: R,
}

impl<R: Real> NpmleFit<R> {
    pub fn final_log_likelihood(&self) -> R {
        *self
            .log_likelihood_trace
            .last()
            .expect("trace has at least the initial entry")
    }

    /// Convergence certificate: EM step tolerance met and the first-order
    /// stationarity residual within 1e-6.
    pub fn certified(&self) -> bool {
        self.converged && self.stationarity_residual <= real(1e-6)
    }
}

/// Maximizes the marginal log-likelihood over priors supported on `grid`
/// by the EM fixed point
///
///   w_k ← w_k · (1/n) Σ_i φ((ŷ_i − μ_k)/σ_i) / (σ_i f(ŷ_i)).
///
/// Stops when the average log-likelihood improves by less than `tol` or at
/// `max_iter` updates, whichever comes first.
pub fn fit_npmle<R: Real>(
    panel: &NoisyPanel<R>,
    grid: &[R],
    tol: R,
    max_iter: usize,
) -> Result<NpmleFit<R>> {
    if grid.is_empty() {
        return Err(Error::EmptyInput("grid"));
    }
    if !(tol > R::zero()) {
        return Err(Error::InvalidConfig(format!("tolerance must be positive, got {tol}")));
    }
    for (index, &g) in grid.iter().enumerate() {
        if !g.is_finite() || g < R::zero() {
            return Err(Error::Invalid(format!("bad grid point {g} at index {index}")));
        }
        if index > 0 && g <= grid[index - 1] {
            return Err(Error::Invalid(format!(
                "grid must be strictly increasing (index {index})"
            )));
        }
    }

    let n = panel.len();
    let k = grid.len();
    let n_scalar = real::<R>(n as f64);

    // Shifted component densities: a[i][j] = exp(L_ij - max_j L_ij), stored
    // both row-major (for f) and column-major (for the weight update) so that
    // every per-element reduction runs in a fixed order regardless of the
    // thread count.
    let mut a = vec![R::zero(); n * k];
    let mut shifts = vec![R::zero(); n];
    a.par_chunks_mut(k)
        .zip(shifts.par_iter_mut())
        .enumerate()
        .for_each(|(i, (row, shift))| {
            let y = panel.estimates()[i];
            let sigma = panel.noise_scales()[i];
            let mut m = R::neg_infinity();
            for (j, &mu) in grid.iter().enumerate() {
                let l = normal_log_pdf(y, mu, sigma);
                row[j] = l;
                if l > m {
                    m = l;
                }
            }
            *shift = m;
            for v in row.iter_mut() {
                *v = (*v - m).exp();
            }
        });
    let mut a_t = vec![R::zero(); n * k];
    for i in 0..n {
        for j in 0..k {
            a_t[j * n + i] = a[i * k + j];
        }
    }

    let mut weights = vec![R::one() / real::<R>(k as f64); k];
    let mut trace: Vec<R> = Vec::new();
    let mut inv_f = vec![R::zero(); n];
    let mut converged = false;
    let mut iterations = 0usize;

    let avg_ll = |inv_f: &[R], shifts: &[R]| -> R {
        let mut total = R::zero();
        for (i, &inv) in inv_f.iter().enumerate() {
            total += shifts[i] - inv.ln();
        }
        total / n_scalar
    };

    for iter in 0..=max_iter {
        // E-step: shifted marginal f_i = Σ_j w_j a_ij.
        inv_f
            .par_iter_mut()
            .enumerate()
            .for_each(|(i, out)| {
                let row = &a[i * k..(i + 1) * k];
                let mut f = R::zero();
                for (j, &w) in weights.iter().enumerate() {
                    f += w * row[j];
                }
                *out = f.recip();
            });

        let ll = avg_ll(&inv_f, &shifts);
        if !ll.is_finite() {
            return Err(Error::Numerical(format!(
                "marginal log-likelihood became {ll} at iteration {iter}"
            )));
        }
        if let Some(&prev) = trace.last() {
            debug_assert!(ll >= prev - real(1e-9), "EM step decreased the likelihood");
            if ll - prev < tol {
                trace.push(ll);
                converged = true;
                break;
            }
        }
        trace.push(ll);
        if iter == max_iter {
            break;
        }

        // M-step: multiplicative reweighting, column dot products.
        let gradient: Vec<R> = (0..k)
            .into_par_iter()
            .map(|j| {
                let col = &a_t[j * n..(j + 1) * n];
                let mut d = R::zero();
                for (i, &aij) in col.iter().enumerate() {
                    d += aij * inv_f[i];
                }
                d / n_scalar
            })
            .collect();
        let mut total = R::zero();
        for (w, g) in weights.iter_mut().zip(&gradient) {
            *w = *w * *g;
            total += *w;
        }
        for w in weights.iter_mut() {
            *w = *w / total;
        }
        iterations = iter + 1;
    }

    // First-order stationarity at the final weights: the normalized
    // likelihood gradient (1/n) Σ_i a_ij / f_i must not exceed 1 on any grid
    // point at an exact maximizer.
    inv_f
        .par_iter_mut()
        .enumerate()
        .for_each(|(i, out)| {
            let row = &a[i * k..(i + 1) * k];
            let mut f = R::zero();
            for (j, &w) in weights.iter().enumerate() {
                f += w * row[j];
            }
            *out = f.recip();
        });
    let mut residual = R::neg_infinity();
    for j in 0..k {
        let col = &a_t[j * n..(j + 1) * n];
        let mut d = R::zero();
        for (i, &aij) in col.iter().enumerate() {
            d += aij * inv_f[i];
        }
        let excess = d / n_scalar - R::one();
        if excess > residual {
            residual = excess;
        }
    }

    // Collapse near-zero weights that are pure floating-point dust so the
    // prior invariants hold exactly.
    let mut total = R::zero();
    for w in weights.iter_mut() {
        if *w < real(1e-300) {
            *w = R::zero();
        }
        total += *w;
    }
    for w in weights.iter_mut() {
        *w = *w / total;
    }

    let grid_lo = grid[0];
    let grid_hi = grid[k - 1];
    Ok(NpmleFit {
        prior: DiscretePrior::new(grid.to_vec(), weights)?,
        iterations,
        converged,
        stationarity_residual: residual,
        log_likelihood_trace: trace,
        n,
        grid_lo,
        grid_hi,
    })
}

/// Average marginal log-likelihood of a panel under a discrete prior.
pub fn average_log_likelihood<R: Real>(prior: &DiscretePrior<R>, panel: &NoisyPanel<R>) -> R {
    let n = real::<R>(panel.len() as f64);
    panel
        .estimates()
        .iter()
        .zip(panel.noise_scales())
        .map(|(&y, &s)| marginal_log_density(prior, y, s))
        .sum::<R>()
        / n
}

/// log f(ŷ) = log Σ_k w_k φ((ŷ − μ_k)/σ)/σ, in shifted-exponent form.
pub fn marginal_log_density<R: Real>(prior: &DiscretePrior<R>, y_hat: R, sigma: R) -> R {
    debug_assert!(sigma > R::zero());
    let terms: Vec<R> = prior
        .support()
        .iter()
        .zip(prior.weights())
        .map(|(&mu, &w)| {
            if w > R::zero() {
                w.ln() + normal_log_pdf(y_hat, mu, sigma)
            } else {
                R::neg_infinity()
            }
        })
        .collect();
    log_sum_exp(&terms)
}

/// Posterior mean Σ_k w_k φ_k μ_k / Σ_k w_k φ_k with the usual exponent
/// shift; the result lies inside the support range.
///
/// The boolean flag reports the (pathological) total-underflow fallback, in
/// which case the support point nearest the observation is returned.
pub fn posterior_mean_with_flag<R: Real>(prior: &DiscretePrior<R>, y_hat: R, sigma: R) -> (R, bool) {
    debug_assert!(sigma > R::zero());
    let mut max_term = R::neg_infinity();
    let terms: Vec<R> = prior
        .support()
        .iter()
        .zip(prior.weights())
        .map(|(&mu, &w)| {
            let t = if w > R::zero() {
                w.ln() + normal_log_pdf(y_hat, mu, sigma)
            } else {
                R::neg_infinity()
            };
            if t > max_term {
                max_term = t;
            }
            t
        })
        .collect();

    if !max_term.is_finite() {
        return (nearest_support(prior, y_hat), true);
    }

    let mut num = R::zero();
    let mut den = R::zero();
    for (&mu, &t) in prior.support().iter().zip(&terms) {
        let r = (t - max_term).exp();
        num += r * mu;
        den += r;
    }
    if !(den > R::zero() && den.is_finite() && num.is_finite()) {
        return (nearest_support(prior, y_hat), true);
    }
    (num / den, false)
}

/// Posterior mean of the latent income given the estimate and its scale.
pub fn posterior_mean<R: Real>(prior: &DiscretePrior<R>, y_hat: R, sigma: R) -> R {
    posterior_mean_with_flag(prior, y_hat, sigma).0
}

fn nearest_support<R: Real>(prior: &DiscretePrior<R>, y_hat: R) -> R {
    let mut best = prior.support()[0];
    let mut best_dist = (best - y_hat).abs();
    for &mu in prior.support() {
        let d = (mu - y_hat).abs();
        if d < best_dist {
            best = mu;
            best_dist = d;
        }
    }
    best
}

/// Posterior mean via the score of the marginal density:
/// `ŷ + σ² · d/dŷ log f(ŷ)`, with the derivative computed analytically from
/// the mixture (not by finite differences). Agrees with [`posterior_mean`]
/// as an algebraic identity for Gaussian mixtures.
pub fn tweedie_posterior_mean<R: Real>(prior: &DiscretePrior<R>, y_hat: R, sigma: R) -> R {
    debug_assert!(sigma > R::zero());
    let sigma_sq = sigma * sigma;
    let mut max_term = R::neg_infinity();
    let terms: Vec<R> = prior
        .support()
        .iter()
        .zip(prior.weights())
        .map(|(&mu, &w)| {
            let t = if w > R::zero() {
                w.ln() + normal_log_pdf(y_hat, mu, sigma)
            } else {
                R::neg_infinity()
            };
            if t > max_term {
                max_term = t;
            }
            t
        })
        .collect();
    if !max_term.is_finite() {
        return nearest_support(prior, y_hat);
    }
    // d/dŷ log f = Σ_k r_k (μ_k − ŷ)/σ² / Σ_k r_k under the same shift.
    let mut num = R::zero();
    let mut den = R::zero();
    for (&mu, &t) in prior.support().iter().zip(&terms) {
        let r = (t - max_term).exp();
        num += r * (mu - y_hat) / sigma_sq;
        den += r;
    }
    y_hat + sigma_sq * (num / den)
}

/// Parameters of the conjugate truncated-normal prior fit: prior mean before
/// truncation, prior variance, and the implied posterior variance
/// ν² = γ²/(γ² + 1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncNormParams<R> {
    pub alpha: R,
    pub gamma_sq: R,
    pub nu_sq: R,
}

impl<R: Real> TruncNormParams<R> {
    pub fn new(alpha: R, gamma_sq: R) -> Result<Self> {
        if !alpha.is_finite() || !gamma_sq.is_finite() {
            return Err(Error::Invalid("non-finite truncated-normal parameter".into()));
        }
        if gamma_sq < R::zero() {
            return Err(Error::Invalid(format!("negative prior variance {gamma_sq}")));
        }
        Ok(Self {
            alpha,
            gamma_sq,
            nu_sq: gamma_sq / (gamma_sq + R::one()),
        })
    }
}

/// Method-of-moments fit of the left-truncated normal prior under unit
/// noise: α̂ = mean(ŷ), γ̂² = max(0, var(ŷ) − 1), ν̂² = γ̂²/(γ̂² + 1).
///
/// The panel must be homoskedastic with σ_i = 1; callers with a different
/// common scale rescale the estimates first.
pub fn fit_truncated_normal<R: Real>(panel: &NoisyPanel<R>) -> Result<TruncNormParams<R>> {
    for (index, &s) in panel.noise_scales().iter().enumerate() {
        if (s - R::one()).abs() > real(1e-12) {
            return Err(Error::Invalid(format!(
                "truncated-normal fit requires unit noise scales (σ = {s} at index {index})"
            )));
        }
    }
    let alpha = mean(panel.estimates());
    let var = population_variance(panel.estimates());
    let gamma_sq = (var - R::one()).max(R::zero());
    TruncNormParams::new(alpha, gamma_sq)
}

/// Posterior mean under the truncated-normal prior:
/// `m(ŷ) = δ(ŷ) + ν κ(−δ(ŷ)/ν)` with `δ(ŷ) = α + (γ²/(γ²+1))(ŷ − α)` and
/// κ the inverse Mills ratio. Evaluated as `ν · (κ(t) − t)` with
/// `t = −δ/ν`, which stays positive and cancellation-free even when δ is
/// far negative; at ν = 0 it degenerates to `max(0, δ)`.
pub fn truncated_normal_posterior_mean<R: Real>(params: &TruncNormParams<R>, y_hat: R) -> R {
    let shrink = params.gamma_sq / (params.gamma_sq + R::one());
    let delta = params.alpha + shrink * (y_hat - params.alpha);
    let nu = params.nu_sq.sqrt();
    if nu == R::zero() {
        return delta.max(R::zero());
    }
    nu * mills_gap(-delta / nu)
}

/// Writes a fitted prior in the two-column text format with a header line
/// recording the sample size, grid bounds, iteration count, and final
/// average log-likelihood.
pub fn write_prior_file<R: Real, W: Write>(out: &mut W, fit: &NpmleFit<R>) -> std::io::Result<()> {
    writeln!(
        out,
        "# n={} grid_lo={} grid_hi={} points={} iterations={} converged={} avg_loglik={} stationarity_residual={}",
        fit.n,
        fit.grid_lo,
        fit.grid_hi,
        fit.prior.len(),
        fit.iterations,
        fit.converged,
        fit.final_log_likelihood(),
        fit.stationarity_residual,
    )?;
    writeln!(out, "# support weight")?;
    for (mu, w) in fit.prior.support().iter().zip(fit.prior.weights()) {
        writeln!(out, "{mu} {w}")?;
    }
    Ok(())
}

/// Reads a prior written by [`write_prior_file`]; header lines (`#`) are
/// ignored.
pub fn read_prior_file<R: Real, B: BufRead>(input: B) -> Result<DiscretePrior<R>> {
    let mut support = Vec::new();
    let mut weights = Vec::new();
    for (lineno, line) in input.lines().enumerate() {
        let line = line.map_err(|e| Error::Invalid(format!("read error: {e}")))?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut parts = trimmed.split_whitespace();
        let mu: f64 = parts
            .next()
            .ok_or_else(|| Error::Invalid(format!("line {}: missing support", lineno + 1)))?
            .parse()
            .map_err(|e| Error::Invalid(format!("line {}: {e}", lineno + 1)))?;
        let w: f64 = parts
            .next()
            .ok_or_else(|| Error::Invalid(format!("line {}: missing weight", lineno + 1)))?
            .parse()
            .map_err(|e| Error::Invalid(format!("line {}: {e}", lineno + 1)))?;
        support.push(real(mu));
        weights.push(real(w));
    }
    // Absorb formatting round-off so the sum-to-one invariant holds.
    let total: R = weights.iter().copied().sum();
    if total > R::zero() {
        for w in weights.iter_mut() {
            *w = *w / total;
        }
    }
    DiscretePrior::new(support, weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::normal_log_pdf;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn panel(estimates: Vec<f64>, sigma: f64) -> NoisyPanel<f64> {
        let n = estimates.len();
        NoisyPanel::new(estimates, vec![sigma; n]).unwrap()
    }

    #[test]
    fn prior_validation() {
        assert!(DiscretePrior::new(vec![1.0, 2.0], vec![0.5, 0.5]).is_ok());
        assert!(DiscretePrior::new(vec![2.0, 1.0], vec![0.5, 0.5]).is_err());
        assert!(DiscretePrior::new(vec![-1.0, 1.0], vec![0.5, 0.5]).is_err());
        assert!(DiscretePrior::new(vec![1.0, 2.0], vec![0.6, 0.5]).is_err());
        assert!(DiscretePrior::<f64>::new(vec![], vec![]).is_err());
    }

    #[test]
    fn grid_spans_data_plus_three_sigma() {
        let p = panel(vec![5.0; 16], 1.0);
        let grid = build_grid(&p, 10).unwrap();
        assert_eq!(grid.len(), 10);
        assert!((grid[0] - 2.0).abs() < 1e-12);
        assert!((grid[9] - 8.0).abs() < 1e-12);
    }

    #[test]
    fn grid_clips_at_zero() {
        let p = panel(vec![0.5; 16], 1.0);
        let grid = build_grid(&p, 10).unwrap();
        assert_eq!(grid[0], 0.0);
    }

    #[test]
    fn grid_enforces_sqrt_n_floor() {
        let p = panel(vec![1.0; 100], 1.0);
        assert!(matches!(build_grid(&p, 9), Err(Error::InvalidConfig(_))));
        assert!(build_grid(&p, 10).is_ok());
        assert_eq!(default_grid_size(100), 100);
        assert_eq!(default_grid_size(40_000), 200);
    }

    #[test]
    fn quantile_grid_is_strictly_increasing() {
        let p = NoisyPanel::new(vec![1.0, 2.0, 2.0, 3.0, 10.0], vec![1.0; 5]).unwrap();
        let grid = build_quantile_grid(&p, 5).unwrap();
        for w in grid.windows(2) {
            assert!(w[1] > w[0]);
        }
    }

    #[test]
    fn marginal_log_density_point_mass_is_gaussian() {
        let prior = DiscretePrior::point_mass(4.0).unwrap();
        let got = marginal_log_density(&prior, 5.5, 2.0);
        assert!((got - normal_log_pdf(5.5f64, 4.0, 2.0)).abs() < 1e-14);
    }

    #[test]
    fn marginal_log_density_symmetric_pair() {
        let prior = DiscretePrior::new(vec![3.0f64, 7.0], vec![0.5, 0.5]).unwrap();
        // Both components contribute equally at the midpoint.
        let got = marginal_log_density(&prior, 5.0, 1.0);
        let expected = normal_log_pdf(5.0, 3.0, 1.0); // ln(0.5·φ + 0.5·φ) = ln φ
        assert!((got - expected).abs() < 1e-14);
    }

    #[test]
    fn marginal_log_density_matches_naive_sum() {
        let prior =
            DiscretePrior::new(vec![1.0f64, 2.5, 6.0], vec![0.2, 0.5, 0.3]).unwrap();
        for y in [-2.0f64, 0.0, 3.3, 8.0] {
            let naive: f64 = prior
                .support()
                .iter()
                .zip(prior.weights())
                .map(|(&mu, &w)| w * normal_log_pdf(y, mu, 1.5).exp())
                .sum();
            let got = marginal_log_density(&prior, y, 1.5).exp();
            assert!(((got - naive) / naive).abs() < 1e-12);
        }
    }

    #[test]
    fn posterior_mean_point_mass_returns_the_point() {
        let prior = DiscretePrior::point_mass(7.5).unwrap();
        for y in [-100.0, 0.0, 7.5, 300.0] {
            assert_eq!(posterior_mean(&prior, y, 1.0), 7.5);
        }
    }

    #[test]
    fn posterior_mean_symmetric_pair_at_midpoint() {
        let prior = DiscretePrior::new(vec![2.0f64, 8.0], vec![0.5, 0.5]).unwrap();
        let got = posterior_mean(&prior, 5.0, 1.0);
        assert!((got - 5.0).abs() < 1e-12);
    }

    #[test]
    fn posterior_mean_stays_inside_support_range() {
        let prior = DiscretePrior::new(vec![1.0f64, 4.0, 9.0], vec![0.3, 0.4, 0.3]).unwrap();
        for y in [-50.0f64, 0.0, 5.0, 50.0] {
            let m = posterior_mean(&prior, y, 2.0);
            assert!((1.0..=9.0).contains(&m));
        }
    }

    #[test]
    fn tweedie_point_mass_cancels_analytically() {
        let prior = DiscretePrior::point_mass(6.0).unwrap();
        for y in [-10.0f64, 0.0, 6.0, 42.0] {
            assert!((tweedie_posterior_mean(&prior, y, 3.0) - 6.0).abs() < 1e-9);
        }
    }

    #[test]
    fn tweedie_matches_posterior_mean() {
        let prior =
            DiscretePrior::new(vec![0.5f64, 2.0, 5.5, 11.0], vec![0.1, 0.4, 0.3, 0.2]).unwrap();
        for y in [-3.0f64, 0.0, 2.2, 5.0, 9.9, 20.0] {
            for sigma in [0.3f64, 1.0, 4.0] {
                let pm = posterior_mean(&prior, y, sigma);
                let tw = tweedie_posterior_mean(&prior, y, sigma);
                assert!((pm - tw).abs() < 1e-10 * pm.abs().max(1.0), "{pm} vs {tw}");
            }
        }
    }

    #[test]
    fn tweedie_far_from_one_of_two_points_favors_the_near_one() {
        let prior = DiscretePrior::new(vec![1.0f64, 101.0], vec![0.5, 0.5]).unwrap();
        let m = tweedie_posterior_mean(&prior, 1.2, 1.0);
        assert!((m - 1.0).abs() < 1e-6);
    }

    #[test]
    fn em_recovers_a_point_mass() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let sigma = 0.1;
        let estimates: Vec<f64> = (0..500)
            .map(|_| 10.0 + sigma * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
            .collect();
        let p = NoisyPanel::new(estimates, vec![sigma; 500]).unwrap();
        let grid = build_grid(&p, default_grid_size(500)).unwrap();
        let fit = fit_npmle(&p, &grid, 1e-9, 10_000).unwrap();
        assert!((fit.prior.mean() - 10.0).abs() < 0.05, "mean {}", fit.prior.mean());
        let near_mass: f64 = fit
            .prior
            .support()
            .iter()
            .zip(fit.prior.weights())
            .filter(|(&mu, _)| (mu - 10.0).abs() <= 0.3)
            .map(|(_, &w)| w)
            .sum();
        assert!(near_mass >= 0.95, "mass near 10: {near_mass}");
    }

    #[test]
    fn em_beats_uniform_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let estimates: Vec<f64> = (0..400)
            .map(|i| {
                let mu = if i % 2 == 0 { 3.0 } else { 9.0 };
                mu + <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
            })
            .collect();
        let p = NoisyPanel::new(estimates, vec![1.0; 400]).unwrap();
        let grid = build_grid(&p, default_grid_size(400)).unwrap();
        let fit = fit_npmle(&p, &grid, 1e-9, 10_000).unwrap();
        let uniform = DiscretePrior::new(
            grid.clone(),
            vec![1.0 / grid.len() as f64; grid.len()],
        )
        .unwrap();
        assert!(fit.final_log_likelihood() >= average_log_likelihood(&uniform, &p));
    }

    #[test]
    fn em_handles_a_degenerate_panel() {
        let p = panel(vec![4.0; 64], 1.0);
        let grid = build_grid(&p, 8).unwrap();
        let fit = fit_npmle(&p, &grid, 1e-9, 10_000).unwrap();
        assert!(fit.converged);
        assert!((fit.prior.mean() - 4.0).abs() < 0.2);
    }

    #[test]
    fn truncated_normal_moment_fit() {
        let p = panel(vec![5.0 - 3.0f64.sqrt(), 5.0 + 3.0f64.sqrt()], 1.0);
        let params = fit_truncated_normal(&p).unwrap();
        assert!((params.alpha - 5.0).abs() < 1e-12);
        assert!((params.gamma_sq - 2.0).abs() < 1e-12);
        assert!((params.nu_sq - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn truncated_normal_fit_clamps_small_variance() {
        let p = panel(vec![5.0, 5.2, 4.8, 5.1, 4.9], 1.0);
        let params = fit_truncated_normal(&p).unwrap();
        assert_eq!(params.gamma_sq, 0.0);
        assert_eq!(params.nu_sq, 0.0);
    }

    #[test]
    fn truncated_normal_fit_rejects_non_unit_noise() {
        let p = panel(vec![1.0, 2.0], 2.0);
        assert!(fit_truncated_normal(&p).is_err());
    }

    #[test]
    fn truncated_posterior_mean_at_zero_delta() {
        // δ = 0 when ŷ puts the shrunk estimate at zero; m = ν κ(0) ≈ 0.7979 ν.
        let params = TruncNormParams::new(0.0, 2.0).unwrap();
        let nu = (2.0f64 / 3.0).sqrt();
        let got = truncated_normal_posterior_mean(&params, 0.0);
        assert!((got - nu * 0.797_884_560_802_865_4).abs() < 1e-12);
    }

    #[test]
    fn truncated_posterior_mean_tail_limit() {
        let params = TruncNormParams::new(0.0f64, 4.0).unwrap();
        // Large positive δ: the truncation correction vanishes.
        let y = 1e6;
        let delta = 0.8 * y;
        let got = truncated_normal_posterior_mean(&params, y);
        assert!(((got - delta) / delta).abs() < 1e-9);
        // Result is strictly positive even for extreme negative estimates.
        assert!(truncated_normal_posterior_mean(&params, -1e8) > 0.0);
    }

    #[test]
    fn truncated_posterior_mean_matches_quadrature() {
        let params = TruncNormParams::new(1.3f64, 2.7).unwrap();
        for y in [-4.0f64, -1.0, 0.0, 0.7, 2.5, 9.0] {
            let shrink = params.gamma_sq / (params.gamma_sq + 1.0);
            let delta = params.alpha + shrink * (y - params.alpha);
            let nu = params.nu_sq.sqrt();
            // Simpson integration of the truncated posterior.
            let lo = 0.0;
            let hi = (delta + 12.0 * nu).max(12.0 * nu);
            let steps = 200_000;
            let h = (hi - lo) / steps as f64;
            let density = |x: f64| normal_log_pdf(x, delta, nu).exp();
            let mut num = 0.0;
            let mut den = 0.0;
            for i in 0..=steps {
                let x = lo + h * i as f64;
                let w = if i == 0 || i == steps {
                    1.0
                } else if i % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                num += w * x * density(x);
                den += w * density(x);
            }
            let quad = num / den;
            let got = truncated_normal_posterior_mean(&params, y);
            assert!((got - quad).abs() < 1e-6, "y={y}: {got} vs {quad}");
        }
    }

    #[test]
    fn prior_file_round_trip() {
        let p = panel(vec![2.0, 3.0, 4.0, 2.5, 3.5, 2.8, 3.1, 2.2, 3.9], 0.5);
        let grid = build_grid(&p, 12).unwrap();
        let fit = fit_npmle(&p, &grid, 1e-9, 5_000).unwrap();
        let mut buf = Vec::new();
        write_prior_file(&mut buf, &fit).unwrap();
        let parsed: DiscretePrior<f64> = read_prior_file(buf.as_slice()).unwrap();
        assert_eq!(parsed.len(), fit.prior.len());
        for (a, b) in parsed.support().iter().zip(fit.prior.support()) {
            assert_eq!(a, b);
        }
        for (a, b) in parsed.weights().iter().zip(fit.prior.weights()) {
            assert!((a - b).abs() < 1e-15);
        }
    }
}
