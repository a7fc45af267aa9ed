//! Exact solution of the full-information allocation problem.
//!
//! Given per-household shortfalls ("gaps") from a poverty line and a budget
//! `B`, the optimal transfer vector is the Euclidean projection of the gap
//! vector onto the budget simplex `{τ ≥ 0, Στ ≤ B}`. Three equivalent
//! routes are provided:
//!
//! - [`project_to_budget_simplex`]: threshold form `τ_i = max(0, g_i - γ)`
//!   with the multiplier from [`solve_budget_multiplier`],
//! - the same threshold written as `max(0, z - y_i - λ/2)` with `λ = 2γ`
//!   (used by the decision rules), and
//! - [`leveling_up`]: the progressive algorithm that raises the poorest
//!   households to a common income level until the budget is exhausted.
//!
//! All routines are pure functions and safe to call concurrently.

use crate::scalar::{real, Real};
use crate::{Error, Result};

/// Absolute slack allowed on the budget constraint when validating transfers.
pub const FEASIBILITY_SLACK: f64 = 1e-9;

/// A vector of poverty gaps `z - value`, one entry per household.
///
/// Entries may be negative (household above the line); they must be finite
/// and there must be at least one.
#[derive(Debug, Clone, PartialEq)]
pub struct GapVector<R>(Vec<R>);

impl<R: Real> GapVector<R> {
    pub fn new(gaps: Vec<R>) -> Result<Self> {
        if gaps.is_empty() {
            return Err(Error::EmptyInput("gap vector"));
        }
        if let Some(index) = gaps.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self(gaps))
    }

    /// Gaps `z - y_i` for a slice of incomes.
    pub fn from_incomes(z: R, incomes: &[R]) -> Result<Self> {
        if !z.is_finite() {
            return Err(Error::Invalid("poverty line must be finite".into()));
        }
        Self::new(incomes.iter().map(|&y| z - y).collect())
    }

    pub fn as_slice(&self) -> &[R] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// A feasible allocation: nonnegative transfers summing to at most the budget.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferVector<R> {
    transfers: Vec<R>,
    budget: R,
}

impl<R: Real> TransferVector<R> {
    /// Validates nonnegativity and the budget constraint (with
    /// [`FEASIBILITY_SLACK`] absolute slack on the sum).
    pub fn new(transfers: Vec<R>, budget: R) -> Result<Self> {
        if transfers.is_empty() {
            return Err(Error::EmptyInput("transfer vector"));
        }
        if !(budget.is_finite() && budget > R::zero()) {
            return Err(Error::Invalid(format!("budget must be positive, got {budget}")));
        }
        for (index, &t) in transfers.iter().enumerate() {
            if !t.is_finite() {
                return Err(Error::NonFinite { index });
            }
            if t < R::zero() {
                return Err(Error::Invalid(format!("negative transfer {t} at index {index}")));
            }
        }
        let total: R = transfers.iter().copied().sum();
        if total > budget + real(FEASIBILITY_SLACK) {
            return Err(Error::Invalid(format!(
                "transfers sum to {total}, exceeding budget {budget}"
            )));
        }
        Ok(Self { transfers, budget })
    }

    pub fn transfers(&self) -> &[R] {
        &self.transfers
    }

    pub fn budget(&self) -> R {
        self.budget
    }

    pub fn len(&self) -> usize {
        self.transfers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transfers.is_empty()
    }

    /// Total amount disbursed.
    pub fn spend(&self) -> R {
        self.transfers.iter().copied().sum()
    }

    /// Number of strictly positive transfers.
    pub fn active_count(&self) -> usize {
        self.transfers.iter().filter(|&&t| t > R::zero()).count()
    }

    /// Squared Euclidean norm of the transfers.
    pub fn norm_sq(&self) -> R {
        self.transfers.iter().map(|&t| t * t).sum()
    }

    /// Componentwise rescaling by a factor in (0, 1]; stays feasible.
    pub(crate) fn scaled(&self, factor: R) -> Self {
        Self {
            transfers: self.transfers.iter().map(|&t| t * factor).collect(),
            budget: self.budget,
        }
    }
}

/// Output of [`leveling_up`]: the `cutoff_index` poorest households are
/// raised to the common income `level`; everyone else receives nothing.
#[derive(Debug, Clone)]
pub struct LevelingResult<R> {
    pub transfers: TransferVector<R>,
    pub cutoff_index: usize,
    pub level: R,
}

fn validate_budget<R: Real>(budget: R) -> Result<()> {
    if !(budget.is_finite() && budget > R::zero()) {
        return Err(Error::Invalid(format!("budget must be positive, got {budget}")));
    }
    Ok(())
}

/// The unique γ ≥ 0 with `Σ max(0, v_i - γ) = min(budget, Σ max(0, v_i))`.
///
/// Exact sort-based threshold search, O(n log n). Returns 0 when the budget
/// is slack (total positive part no larger than the budget).
pub fn solve_budget_multiplier<R: Real>(values: &[R], budget: R) -> Result<R> {
    validate_budget(budget)?;
    if values.is_empty() {
        return Err(Error::EmptyInput("multiplier values"));
    }
    if let Some(index) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { index });
    }

    let total_positive: R = values
        .iter()
        .map(|&v| if v > R::zero() { v } else { R::zero() })
        .sum();
    if total_positive <= budget {
        return Ok(R::zero());
    }

    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).expect("finite values"));

    // Largest k with sorted[k-1] > (S_k - B)/k identifies the active set.
    let mut prefix = R::zero();
    let mut gamma = R::zero();
    let mut active = 0usize;
    for (i, &v) in sorted.iter().enumerate() {
        prefix += v;
        let k = real::<R>((i + 1) as f64);
        let candidate = (prefix - budget) / k;
        if v > candidate {
            gamma = candidate;
            active = i + 1;
        } else {
            break;
        }
    }

    // One Newton step on the piecewise-linear spend curve clears the rounding
    // accumulated in the prefix sums.
    if active > 0 {
        let spent: R = values
            .iter()
            .map(|&v| if v > gamma { v - gamma } else { R::zero() })
            .sum();
        let count: R = real(values.iter().filter(|&&v| v > gamma).count() as f64);
        if count > R::zero() {
            gamma = (gamma + (spent - budget) / count).max(R::zero());
        }
    }
    Ok(gamma)
}

/// Bisection fallback for the multiplier; the spend residual is driven below
/// `1e-12` relative to the budget scale. Intended for inputs that cannot be
/// sorted in memory; the sort-based solver is the default.
pub fn solve_budget_multiplier_bisect<R: Real>(values: &[R], budget: R) -> Result<R> {
    validate_budget(budget)?;
    if values.is_empty() {
        return Err(Error::EmptyInput("multiplier values"));
    }
    let spend_at = |g: R| -> R {
        values
            .iter()
            .map(|&v| if v > g { v - g } else { R::zero() })
            .sum()
    };
    let total_positive = spend_at(R::zero());
    if total_positive <= budget {
        return Ok(R::zero());
    }
    let mut lo = R::zero();
    let mut hi = values.iter().copied().fold(R::zero(), R::max);
    for _ in 0..200 {
        let mid = (lo + hi) * real(0.5);
        if spend_at(mid) > budget {
            lo = mid;
        } else {
            hi = mid;
        }
        let scale = budget.max(R::one());
        if (spend_at(lo) - spend_at(hi)).abs() <= real::<R>(1e-12) * scale {
            break;
        }
    }
    Ok((lo + hi) * real(0.5))
}

/// Euclidean projection of a gap vector onto `{τ ≥ 0, Στ ≤ budget}`.
///
/// When the total positive gap is within budget the projection is the
/// positive part taken exactly; otherwise the budget binds and
/// `τ_i = max(0, g_i - γ)` with γ from [`solve_budget_multiplier`].
pub fn project_to_budget_simplex<R: Real>(
    gaps: &GapVector<R>,
    budget: R,
) -> Result<TransferVector<R>> {
    let gamma = solve_budget_multiplier(gaps.as_slice(), budget)?;
    let transfers = gaps
        .as_slice()
        .iter()
        .map(|&g| if g > gamma { g - gamma } else { R::zero() })
        .collect();
    TransferVector::new(transfers, budget)
}

/// Progressive leveling-up over incomes sorted ascending.
///
/// Pools the budget to raise the poorest households to a common level,
/// admitting one household at a time, until `min(budget, total gap below z)`
/// is spent. Unsorted input is rejected so that the cutoff index stays
/// meaningful; see [`leveling_up_unsorted`] for the sorting wrapper.
pub fn leveling_up<R: Real>(incomes: &[R], z: R, budget: R) -> Result<LevelingResult<R>> {
    validate_budget(budget)?;
    if incomes.is_empty() {
        return Err(Error::EmptyInput("incomes"));
    }
    if !z.is_finite() {
        return Err(Error::Invalid("poverty line must be finite".into()));
    }
    for (index, &y) in incomes.iter().enumerate() {
        if !y.is_finite() {
            return Err(Error::NonFinite { index });
        }
        if index > 0 && y < incomes[index - 1] {
            return Err(Error::Unsorted { index });
        }
    }

    let total_gap: R = incomes
        .iter()
        .map(|&y| if y < z { z - y } else { R::zero() })
        .sum();

    if total_gap <= budget {
        // Slack budget: every poor household is lifted exactly to z.
        let transfers: Vec<R> = incomes
            .iter()
            .map(|&y| if y < z { z - y } else { R::zero() })
            .collect();
        let cutoff_index = incomes.iter().filter(|&&y| y < z).count();
        return Ok(LevelingResult {
            transfers: TransferVector::new(transfers, budget)?,
            cutoff_index,
            level: z,
        });
    }

    // Binding budget: find the cutoff p and level with
    // sum_{i<=p} (level - y_i) = budget and y_p <= level <= y_{p+1}.
    let n = incomes.len();
    let mut prefix = R::zero();
    let mut cutoff = n;
    let mut level = R::zero();
    for k in 1..=n {
        prefix += incomes[k - 1];
        let candidate = (budget + prefix) / real((k) as f64);
        if k == n || candidate <= incomes[k] {
            cutoff = k;
            level = candidate;
            break;
        }
    }

    let transfers: Vec<R> = incomes
        .iter()
        .enumerate()
        .map(|(i, &y)| {
            if i < cutoff {
                (level - y).max(R::zero())
            } else {
                R::zero()
            }
        })
        .collect();
    Ok(LevelingResult {
        transfers: TransferVector::new(transfers, budget)?,
        cutoff_index: cutoff,
        level,
    })
}

/// Convenience wrapper around [`leveling_up`] for unsorted incomes: sorts,
/// levels, and maps the transfers back to the original order. The cutoff
/// index is not meaningful under permutation, so only the transfers and the
/// level are returned.
pub fn leveling_up_unsorted<R: Real>(
    incomes: &[R],
    z: R,
    budget: R,
) -> Result<(TransferVector<R>, R)> {
    let mut order: Vec<usize> = (0..incomes.len()).collect();
    for (index, &y) in incomes.iter().enumerate() {
        if !y.is_finite() {
            return Err(Error::NonFinite { index });
        }
    }
    order.sort_by(|&a, &b| incomes[a].partial_cmp(&incomes[b]).expect("finite incomes"));
    let sorted: Vec<R> = order.iter().map(|&i| incomes[i]).collect();
    let result = leveling_up(&sorted, z, budget)?;
    let mut transfers = vec![R::zero(); incomes.len()];
    for (pos, &original) in order.iter().enumerate() {
        transfers[original] = result.transfers.transfers()[pos];
    }
    Ok((TransferVector::new(transfers, budget)?, result.level))
}
