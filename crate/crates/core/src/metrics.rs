//! Performance metrics: squared-gap and one-sided losses, the loss ratio
//! against the full-information optimum, targeting error rates, and paired
//! Monte-Carlo regret estimates.

use serde::{Deserialize, Serialize};

use crate::allocation::TransferVector;
use crate::rules::{full_info_rule, PolicyContext};
use crate::scalar::{real, Real};
use crate::{Error, Result};

/// Transfers below this threshold (in currency units) do not count as
/// received, to avoid floating-point phantom recipients.
pub const RECIPIENT_THRESHOLD: f64 = 1e-9;

/// Which loss the evaluation uses; rules are unaffected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    #[default]
    Squared,
    OneSided,
}

fn check_lengths<R: Real>(transfers: &TransferVector<R>, incomes: &[R]) -> Result<()> {
    if transfers.len() != incomes.len() {
        return Err(Error::LengthMismatch {
            left: transfers.len(),
            right: incomes.len(),
        });
    }
    Ok(())
}

/// Average squared shortfall `(1/n) Σ (z - y_i - τ_i)²`.
pub fn squared_gap_loss<R: Real>(
    transfers: &TransferVector<R>,
    incomes: &[R],
    z: R,
) -> Result<R> {
    check_lengths(transfers, incomes)?;
    let n = real::<R>(incomes.len() as f64);
    Ok(transfers
        .transfers()
        .iter()
        .zip(incomes)
        .map(|(&t, &y)| {
            let r = z - y - t;
            r * r
        })
        .sum::<R>()
        / n)
}

/// One-sided variant `(1/n) Σ max(0, z - y_i - τ_i)²`; overshooting a
/// household contributes nothing.
pub fn one_sided_loss<R: Real>(transfers: &TransferVector<R>, incomes: &[R], z: R) -> Result<R> {
    check_lengths(transfers, incomes)?;
    let n = real::<R>(incomes.len() as f64);
    Ok(transfers
        .transfers()
        .iter()
        .zip(incomes)
        .map(|(&t, &y)| {
            let r = (z - y - t).max(R::zero());
            r * r
        })
        .sum::<R>()
        / n)
}

/// Loss under the selected kind.
pub fn loss<R: Real>(
    kind: LossKind,
    transfers: &TransferVector<R>,
    incomes: &[R],
    z: R,
) -> Result<R> {
    match kind {
        LossKind::Squared => squared_gap_loss(transfers, incomes, z),
        LossKind::OneSided => one_sided_loss(transfers, incomes, z),
    }
}

/// The two loss anchors of the loss ratio: no transfers and the
/// full-information optimum, both evaluated on the same incomes.
#[derive(Debug, Clone, Copy)]
pub struct LossBaseline<R> {
    pub loss_zero: R,
    pub loss_optimal: R,
}

impl<R: Real> LossBaseline<R> {
    pub fn compute(incomes: &[R], z: R, budget: R, kind: LossKind) -> Result<Self> {
        let ctx = PolicyContext::new(z, budget)?;
        let optimal = full_info_rule(incomes, &ctx)?;
        let zero = TransferVector::new(vec![R::zero(); incomes.len()], budget)?;
        Ok(Self {
            loss_zero: loss(kind, &zero, incomes, z)?,
            loss_optimal: loss(kind, &optimal, incomes, z)?,
        })
    }
}

/// Loss ratio of a precomputed loss value against a baseline:
/// `(L - L₀) / (L* - L₀)`, where 1 means full-information performance, 0 no
/// better than doing nothing, and negative values a harmful allocation.
pub fn loss_ratio_from_baseline<R: Real>(loss_value: R, baseline: &LossBaseline<R>) -> Result<R> {
    let denom = baseline.loss_optimal - baseline.loss_zero;
    if denom == R::zero() || !denom.is_finite() {
        return Err(Error::UndefinedMetric(
            "loss ratio denominator is degenerate (no poor households or no budget effect)",
        ));
    }
    Ok((loss_value - baseline.loss_zero) / denom)
}

/// Loss ratio of a transfer vector, computing the full-information optimum
/// internally.
pub fn loss_ratio<R: Real>(
    transfers: &TransferVector<R>,
    incomes: &[R],
    z: R,
    budget: R,
    kind: LossKind,
) -> Result<R> {
    let baseline = LossBaseline::compute(incomes, z, budget, kind)?;
    loss_ratio_from_baseline(loss(kind, transfers, incomes, z)?, &baseline)
}

/// Inclusion/exclusion error rates, reach, and the conditional mean transfer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetingErrors<R> {
    /// Share of recipients who are not poor; 0 when nobody receives anything.
    pub inclusion_error: R,
    /// Share of poor households receiving nothing; 0 when nobody is poor.
    pub exclusion_error: R,
    /// Share of households receiving a positive transfer.
    pub reach: R,
    /// Mean transfer among recipients; 0 when there are none.
    pub avg_transfer_given_positive: R,
    /// Set when the inclusion-error denominator was empty.
    pub no_recipients: bool,
}

/// Counts recipients against a small positivity threshold and reports the
/// standard targeting error rates.
pub fn targeting_errors<R: Real>(
    transfers: &TransferVector<R>,
    incomes: &[R],
    z: R,
) -> Result<TargetingErrors<R>> {
    check_lengths(transfers, incomes)?;
    let threshold = real::<R>(RECIPIENT_THRESHOLD);
    let n = incomes.len();
    let mut recipients = 0usize;
    let mut nonpoor_recipients = 0usize;
    let mut poor = 0usize;
    let mut poor_excluded = 0usize;
    let mut transferred = R::zero();
    for (&t, &y) in transfers.transfers().iter().zip(incomes) {
        let receives = t > threshold;
        let is_poor = y < z;
        if receives {
            recipients += 1;
            transferred += t;
            if !is_poor {
                nonpoor_recipients += 1;
            }
        }
        if is_poor {
            poor += 1;
            if !receives {
                poor_excluded += 1;
            }
        }
    }
    let ratio = |num: usize, den: usize| -> R {
        if den == 0 {
            R::zero()
        } else {
            real::<R>(num as f64) / real::<R>(den as f64)
        }
    };
    Ok(TargetingErrors {
        inclusion_error: ratio(nonpoor_recipients, recipients),
        exclusion_error: ratio(poor_excluded, poor),
        reach: ratio(recipients, n),
        avg_transfer_given_positive: if recipients == 0 {
            R::zero()
        } else {
            transferred / real::<R>(recipients as f64)
        },
        no_recipients: recipients == 0,
    })
}

/// One evaluated allocation: the row format shared by the replication CSV
/// and the aggregate summary.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct MetricsReport {
    pub loss: f64,
    pub loss_ratio: f64,
    pub inclusion_error: f64,
    pub exclusion_error: f64,
    pub reach: f64,
    pub avg_transfer_given_positive: f64,
    pub spend: f64,
}

impl MetricsReport {
    /// Evaluates a transfer vector against realized incomes. When a baseline
    /// is supplied it is reused for the loss ratio; otherwise the
    /// full-information optimum is recomputed here.
    pub fn compute<R: Real>(
        transfers: &TransferVector<R>,
        incomes: &[R],
        z: R,
        budget: R,
        kind: LossKind,
        baseline: Option<&LossBaseline<R>>,
    ) -> Result<Self> {
        let loss_value = loss(kind, transfers, incomes, z)?;
        let ratio = match baseline {
            Some(b) => loss_ratio_from_baseline(loss_value, b)?,
            None => loss_ratio(transfers, incomes, z, budget, kind)?,
        };
        let errors = targeting_errors(transfers, incomes, z)?;
        let f = |v: R| v.to_f64().unwrap_or(f64::NAN);
        Ok(Self {
            loss: f(loss_value),
            loss_ratio: f(ratio),
            inclusion_error: f(errors.inclusion_error),
            exclusion_error: f(errors.exclusion_error),
            reach: f(errors.reach),
            avg_transfer_given_positive: f(errors.avg_transfer_given_positive),
            spend: f(transfers.spend()),
        })
    }
}

/// Paired mean difference with its Monte-Carlo standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegretEstimate<R> {
    pub mean: R,
    pub std_error: R,
}

/// Mean of `rule_losses - oracle_losses` over paired replications, with the
/// standard error of the paired differences.
pub fn bayes_regret_estimate<R: Real>(
    rule_losses: &[R],
    oracle_losses: &[R],
) -> Result<RegretEstimate<R>> {
    if rule_losses.len() != oracle_losses.len() {
        return Err(Error::LengthMismatch {
            left: rule_losses.len(),
            right: oracle_losses.len(),
        });
    }
    if rule_losses.is_empty() {
        return Err(Error::EmptyInput("paired losses"));
    }
    let n = real::<R>(rule_losses.len() as f64);
    let diffs: Vec<R> = rule_losses
        .iter()
        .zip(oracle_losses)
        .map(|(&a, &b)| a - b)
        .collect();
    let mean = diffs.iter().copied().sum::<R>() / n;
    let std_error = if rule_losses.len() == 1 {
        R::zero()
    } else {
        let var = diffs
            .iter()
            .map(|&d| (d - mean) * (d - mean))
            .sum::<R>()
            / (n - R::one());
        (var / n).sqrt()
    };
    Ok(RegretEstimate { mean, std_error })
}
