//! The decision rules: full-information optimum, plug-in, James–Stein,
//! oracle Bayes, empirical Bayes (nonparametric or truncated-normal), and
//! uniform transfers, all producing a feasible [`TransferVector`] from the
//! same inputs.
//!
//! Every thresholded rule computes its shadow price λ as twice the simplex
//! multiplier γ, so the componentwise form `max(0, z - m_i - λ/2)` and the
//! Euclidean projection of `z - m` coincide by construction.

use serde::{Deserialize, Serialize};

use crate::allocation::{
    project_to_budget_simplex, solve_budget_multiplier, GapVector, TransferVector,
};
use crate::prior::{
    build_grid, build_quantile_grid, default_grid_size, fit_npmle, fit_truncated_normal,
    posterior_mean, truncated_normal_posterior_mean, DiscretePrior, NoisyPanel, NpmleFit,
};
use crate::scalar::{real, Real};
use crate::shrinkage::james_stein_shrink;
use crate::{Error, Result};

/// The poverty line and the budget a rule must respect.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyContext<R> {
    pub poverty_line: R,
    pub budget: R,
}

impl<R: Real> PolicyContext<R> {
    pub fn new(poverty_line: R, budget: R) -> Result<Self> {
        if !poverty_line.is_finite() {
            return Err(Error::Invalid("poverty line must be finite".into()));
        }
        if !(budget.is_finite() && budget > R::zero()) {
            return Err(Error::Invalid(format!("budget must be positive, got {budget}")));
        }
        Ok(Self {
            poverty_line,
            budget,
        })
    }
}

/// Options for the nonparametric EB rule.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct NpmleOptions {
    /// Grid size; defaults to `max(⌈√n⌉, 100)`.
    pub grid_size: Option<usize>,
    /// Stop when the average log-likelihood improves by less than this.
    pub tol: f64,
    pub max_iter: usize,
    /// Quantile-spaced grid instead of the default equal spacing.
    pub quantile_grid: bool,
}

impl Default for NpmleOptions {
    fn default() -> Self {
        Self {
            grid_size: None,
            tol: 1e-9,
            max_iter: 10_000,
            quantile_grid: false,
        }
    }
}

/// A rule selection with its rule-specific options, as parsed from an
/// experiment configuration.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RuleSpec {
    /// Project true poverty gaps; requires true incomes.
    FullInfo,
    /// Project estimated poverty gaps.
    PlugIn,
    /// Plug-in rescaled by the truncated shrinkage factor.
    JamesStein {
        /// Pooled σ; when absent the caller's default (the calibrated σ_c in
        /// simulations, the panel RMS otherwise) is used.
        #[serde(default)]
        pooled_sigma: Option<f64>,
    },
    /// Posterior means under the true prior; requires a known prior.
    OracleBayes,
    /// Posterior means under the NPMLE prior fitted on the same panel.
    EbNpmle {
        #[serde(flatten, default)]
        options: NpmleOptions,
    },
    /// Posterior means under the moment-fitted truncated-normal prior.
    EbTruncNorm,
    /// Budget split equally across households.
    Ubi,
}

impl RuleSpec {
    pub fn name(&self) -> &'static str {
        match self {
            RuleSpec::FullInfo => "full_info",
            RuleSpec::PlugIn => "plug_in",
            RuleSpec::JamesStein { .. } => "james_stein",
            RuleSpec::OracleBayes => "oracle_bayes",
            RuleSpec::EbNpmle { .. } => "eb_npmle",
            RuleSpec::EbTruncNorm => "eb_truncnorm",
            RuleSpec::Ubi => "ubi",
        }
    }
}

/// Transfers plus the bookkeeping the evaluation layer wants: the shadow
/// price, realized spend, active count, and rule-specific extras.
#[derive(Debug, Clone)]
pub struct RuleOutput<R> {
    pub transfers: TransferVector<R>,
    /// Shadow price λ = 2γ of the budget constraint (0 when slack or for UBI).
    pub multiplier: R,
    pub spend: R,
    pub active_count: usize,
    /// James–Stein factor, when the rule shrinks.
    pub shrink_factor: Option<R>,
    /// Fitted prior diagnostics, when the rule estimates one.
    pub npmle_fit: Option<NpmleFit<R>>,
}

impl<R: Real> RuleOutput<R> {
    fn from_transfers(transfers: TransferVector<R>, multiplier: R) -> Self {
        let spend = transfers.spend();
        let active_count = transfers.active_count();
        Self {
            transfers,
            multiplier,
            spend,
            active_count,
            shrink_factor: None,
            npmle_fit: None,
        }
    }
}

/// Side inputs a rule may need beyond the panel and the policy context.
#[derive(Debug, Clone, Copy, Default)]
pub struct RuleInputs<'a, R> {
    /// Realized incomes; required by the full-information rule.
    pub true_incomes: Option<&'a [R]>,
    /// The true mixing distribution; required by the oracle rule.
    pub oracle_prior: Option<&'a DiscretePrior<R>>,
    /// Default pooled σ for James–Stein when the spec does not fix one.
    pub pooled_sigma: Option<R>,
}

fn project_gaps<R: Real>(
    values: &[R],
    ctx: &PolicyContext<R>,
) -> Result<(TransferVector<R>, R)> {
    let gaps = GapVector::from_incomes(ctx.poverty_line, values)?;
    let gamma = solve_budget_multiplier(gaps.as_slice(), ctx.budget)?;
    let transfers = project_to_budget_simplex(&gaps, ctx.budget)?;
    Ok((transfers, real::<R>(2.0) * gamma))
}

/// Full-information optimum: projection of the true poverty gaps.
pub fn full_info_rule<R: Real>(incomes: &[R], ctx: &PolicyContext<R>) -> Result<TransferVector<R>> {
    Ok(project_gaps(incomes, ctx)?.0)
}

/// Plug-in rule: the full-information rule applied to the noisy estimates.
pub fn plug_in_rule<R: Real>(
    panel: &NoisyPanel<R>,
    ctx: &PolicyContext<R>,
) -> Result<TransferVector<R>> {
    Ok(project_gaps(panel.estimates(), ctx)?.0)
}

/// James–Stein rule: the plug-in allocation rescaled by the truncated
/// shrinkage factor under a pooled noise scale.
pub fn james_stein_rule<R: Real>(
    panel: &NoisyPanel<R>,
    ctx: &PolicyContext<R>,
    pooled_sigma: R,
) -> Result<TransferVector<R>> {
    let plug_in = plug_in_rule(panel, ctx)?;
    Ok(james_stein_shrink(&plug_in, pooled_sigma)?.transfers)
}

/// Thresholded allocation from a vector of posterior mean incomes:
/// `t_i = max(0, z - m_i - λ/2)` with the smallest feasible λ ≥ 0, which is
/// exactly the projection of `z - m` onto the budget simplex.
pub fn bayes_rule_from_means<R: Real>(
    posterior_means: &[R],
    ctx: &PolicyContext<R>,
) -> Result<TransferVector<R>> {
    Ok(project_gaps(posterior_means, ctx)?.0)
}

/// Oracle Bayes rule: posterior means under the true prior.
pub fn oracle_bayes_rule<R: Real>(
    panel: &NoisyPanel<R>,
    true_prior: &DiscretePrior<R>,
    ctx: &PolicyContext<R>,
) -> Result<TransferVector<R>> {
    let means: Vec<R> = panel
        .estimates()
        .iter()
        .zip(panel.noise_scales())
        .map(|(&y, &s)| posterior_mean(true_prior, y, s))
        .collect();
    bayes_rule_from_means(&means, ctx)
}

/// Feasible EB rule: fit the NPMLE prior on the panel being allocated, then
/// apply the threshold rule to its posterior means. Returns the fit alongside
/// the transfers so callers can persist the estimated prior.
pub fn eb_rule<R: Real>(
    panel: &NoisyPanel<R>,
    ctx: &PolicyContext<R>,
    options: &NpmleOptions,
) -> Result<(TransferVector<R>, NpmleFit<R>)> {
    let grid_size = options.grid_size.unwrap_or_else(|| default_grid_size(panel.len()));
    let grid = if options.quantile_grid {
        build_quantile_grid(panel, grid_size)?
    } else {
        build_grid(panel, grid_size)?
    };
    let fit = fit_npmle(panel, &grid, real(options.tol), options.max_iter)?;
    let means: Vec<R> = panel
        .estimates()
        .iter()
        .zip(panel.noise_scales())
        .map(|(&y, &s)| posterior_mean(&fit.prior, y, s))
        .collect();
    let transfers = bayes_rule_from_means(&means, ctx)?;
    Ok((transfers, fit))
}

/// Parametric EB rule under the truncated-normal prior. The moment fit is
/// defined for unit noise, so the estimates are rescaled by the pooled RMS
/// noise scale, fitted, and the posterior means mapped back; this is exact
/// for homoskedastic panels.
pub fn eb_truncnorm_rule<R: Real>(
    panel: &NoisyPanel<R>,
    ctx: &PolicyContext<R>,
) -> Result<TransferVector<R>> {
    let pool = panel.pooled_noise_scale();
    if !(pool > R::zero()) {
        return Err(Error::Invalid("panel has zero pooled noise scale".into()));
    }
    let scaled: Vec<R> = panel.estimates().iter().map(|&y| y / pool).collect();
    let unit = NoisyPanel::new(scaled, vec![R::one(); panel.len()])?;
    let params = fit_truncated_normal(&unit)?;
    let means: Vec<R> = unit
        .estimates()
        .iter()
        .map(|&y| pool * truncated_normal_posterior_mean(&params, y))
        .collect();
    bayes_rule_from_means(&means, ctx)
}

/// Uniform transfers: every household receives `budget / n`.
pub fn ubi_rule<R: Real>(n: usize, ctx: &PolicyContext<R>) -> Result<TransferVector<R>> {
    if n == 0 {
        return Err(Error::EmptyInput("household count"));
    }
    let share = ctx.budget / real(n as f64);
    TransferVector::new(vec![share; n], ctx.budget)
}

/// Dispatches a [`RuleSpec`] to its implementation, attaching the metadata
/// record (multiplier, spend, active count, rule extras).
pub fn apply_rule<R: Real>(
    spec: &RuleSpec,
    panel: &NoisyPanel<R>,
    ctx: &PolicyContext<R>,
    inputs: &RuleInputs<R>,
) -> Result<RuleOutput<R>> {
    match spec {
        RuleSpec::FullInfo => {
            let incomes = inputs.true_incomes.ok_or_else(|| {
                Error::InvalidConfig("full_info rule requires true incomes".into())
            })?;
            if incomes.len() != panel.len() {
                return Err(Error::LengthMismatch {
                    left: incomes.len(),
                    right: panel.len(),
                });
            }
            let (transfers, lambda) = project_gaps(incomes, ctx)?;
            Ok(RuleOutput::from_transfers(transfers, lambda))
        }
        RuleSpec::PlugIn => {
            let (transfers, lambda) = project_gaps(panel.estimates(), ctx)?;
            Ok(RuleOutput::from_transfers(transfers, lambda))
        }
        RuleSpec::JamesStein { pooled_sigma } => {
            let sigma = match pooled_sigma {
                Some(s) => real(*s),
                None => inputs
                    .pooled_sigma
                    .unwrap_or_else(|| panel.pooled_noise_scale()),
            };
            let (plug_in, lambda) = project_gaps(panel.estimates(), ctx)?;
            let outcome = james_stein_shrink(&plug_in, sigma)?;
            let mut output = RuleOutput::from_transfers(outcome.transfers, lambda);
            output.shrink_factor = Some(outcome.factor);
            Ok(output)
        }
        RuleSpec::OracleBayes => {
            let prior = inputs.oracle_prior.ok_or_else(|| {
                Error::InvalidConfig(
                    "oracle_bayes rule requires a known prior (synthetic income source)".into(),
                )
            })?;
            let means: Vec<R> = panel
                .estimates()
                .iter()
                .zip(panel.noise_scales())
                .map(|(&y, &s)| posterior_mean(prior, y, s))
                .collect();
            let (transfers, lambda) = project_gaps(&means, ctx)?;
            Ok(RuleOutput::from_transfers(transfers, lambda))
        }
        RuleSpec::EbNpmle { options } => {
            let (transfers, fit) = eb_rule(panel, ctx, options)?;
            let means_lambda = {
                let means: Vec<R> = panel
                    .estimates()
                    .iter()
                    .zip(panel.noise_scales())
                    .map(|(&y, &s)| posterior_mean(&fit.prior, y, s))
                    .collect();
                real::<R>(2.0) * solve_budget_multiplier(
                    &means.iter().map(|&m| ctx.poverty_line - m).collect::<Vec<_>>(),
                    ctx.budget,
                )?
            };
            let mut output = RuleOutput::from_transfers(transfers, means_lambda);
            output.npmle_fit = Some(fit);
            Ok(output)
        }
        RuleSpec::EbTruncNorm => {
            let transfers = eb_truncnorm_rule(panel, ctx)?;
            let lambda = {
                let pool = panel.pooled_noise_scale();
                let unit = NoisyPanel::new(
                    panel.estimates().iter().map(|&y| y / pool).collect(),
                    vec![R::one(); panel.len()],
                )?;
                let params = fit_truncated_normal(&unit)?;
                let gaps: Vec<R> = unit
                    .estimates()
                    .iter()
                    .map(|&y| {
                        ctx.poverty_line - pool * truncated_normal_posterior_mean(&params, y)
                    })
                    .collect();
                real::<R>(2.0) * solve_budget_multiplier(&gaps, ctx.budget)?
            };
            Ok(RuleOutput::from_transfers(transfers, lambda))
        }
        RuleSpec::Ubi => {
            let transfers = ubi_rule(panel.len(), ctx)?;
            Ok(RuleOutput::from_transfers(transfers, R::zero()))
        }
    }
}
