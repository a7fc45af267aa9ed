//! Seeded Monte-Carlo experiment engine.
//!
//! One experiment fixes a population of latent incomes, builds the poverty
//! line (median income) and budget (a fraction of the total poverty gap),
//! calibrates the noise scale to a target signal-to-noise ratio, and then
//! redraws the noisy estimates `replications` times. Within a replication
//! every rule sees the identical panel (common random numbers), so paired
//! differences across rules isolate rule effects.
//!
//! Determinism: the master seed fixes the population on ChaCha stream 0 and
//! replication `r` draws its noise from stream `r + 1`, so outputs are
//! byte-identical across runs and independent of how replications are
//! scheduled across threads.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, StandardNormal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::ContinuousCDF;

use crate::metrics::{LossBaseline, LossKind, MetricsReport};
use crate::prior::{DiscretePrior, NoisyPanel};
use crate::rules::{apply_rule, PolicyContext, RuleInputs, RuleSpec};
use crate::stats::{lower_median, population_variance};
use crate::{Error, Result};

/// Second moment of Uniform[1/2, 3/2]: (a² + ab + b²)/3.
const UNIFORM_SCALE_SECOND_MOMENT: f64 = 3.25 / 3.0;

/// Default number of support points when a continuous income family is
/// discretized into the oracle prior.
pub const DEFAULT_ORACLE_RESOLUTION: usize = 2001;

/// A synthetic income distribution. Grid-supported families double as the
/// oracle's true prior; continuous families are discretized for the oracle
/// at a configurable resolution.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum IncomeFamily {
    Lognormal {
        meanlog: f64,
        sdlog: f64,
    },
    TwoPoint {
        low: f64,
        high: f64,
        low_weight: f64,
    },
    /// Mixture of normals left-truncated at zero.
    TruncNormalMix {
        components: Vec<MixComponent>,
    },
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct MixComponent {
    pub mean: f64,
    pub sd: f64,
    pub weight: f64,
}

impl IncomeFamily {
    fn validate(&self) -> Result<()> {
        match self {
            IncomeFamily::Lognormal { sdlog, .. } => {
                if *sdlog <= 0.0 {
                    return Err(Error::InvalidConfig("lognormal sdlog must be positive".into()));
                }
            }
            IncomeFamily::TwoPoint {
                low,
                high,
                low_weight,
            } => {
                if !(*low >= 0.0 && *high > *low) {
                    return Err(Error::InvalidConfig(
                        "two_point requires 0 <= low < high".into(),
                    ));
                }
                if !(0.0..=1.0).contains(low_weight) {
                    return Err(Error::InvalidConfig(
                        "two_point low_weight must be in [0, 1]".into(),
                    ));
                }
            }
            IncomeFamily::TruncNormalMix { components } => {
                if components.is_empty() {
                    return Err(Error::InvalidConfig("mixture needs components".into()));
                }
                let total: f64 = components.iter().map(|c| c.weight).sum();
                if (total - 1.0).abs() > 1e-9 {
                    return Err(Error::InvalidConfig(format!(
                        "mixture weights sum to {total}, expected 1"
                    )));
                }
                for c in components {
                    if c.sd <= 0.0 || c.weight < 0.0 {
                        return Err(Error::InvalidConfig(
                            "mixture components need sd > 0 and weight >= 0".into(),
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    /// Draws `n` nonnegative incomes.
    pub fn sample(&self, n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        self.validate()?;
        let mut out = Vec::with_capacity(n);
        match self {
            IncomeFamily::Lognormal { meanlog, sdlog } => {
                let dist = LogNormal::new(*meanlog, *sdlog)
                    .map_err(|e| Error::InvalidConfig(format!("lognormal: {e}")))?;
                for _ in 0..n {
                    out.push(dist.sample(rng));
                }
            }
            IncomeFamily::TwoPoint {
                low,
                high,
                low_weight,
            } => {
                for _ in 0..n {
                    let u: f64 = rng.random();
                    out.push(if u < *low_weight { *low } else { *high });
                }
            }
            IncomeFamily::TruncNormalMix { components } => {
                for _ in 0..n {
                    let u: f64 = rng.random();
                    let mut acc = 0.0;
                    let mut comp = components[components.len() - 1];
                    for c in components {
                        acc += c.weight;
                        if u < acc {
                            comp = *c;
                            break;
                        }
                    }
                    // Rejection sampling against the zero truncation.
                    loop {
                        let z: f64 = rng.sample(StandardNormal);
                        let v = comp.mean + comp.sd * z;
                        if v >= 0.0 {
                            out.push(v);
                            break;
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    /// The true mixing distribution as a [`DiscretePrior`]. Exact for the
    /// two-point family; continuous families are discretized into
    /// `resolution` cells by CDF differences with the tail mass folded into
    /// the end cells.
    pub fn oracle_prior(&self, resolution: usize) -> Result<DiscretePrior<f64>> {
        self.validate()?;
        match self {
            IncomeFamily::TwoPoint {
                low,
                high,
                low_weight,
            } => DiscretePrior::new(vec![*low, *high], vec![*low_weight, 1.0 - *low_weight]),
            IncomeFamily::Lognormal { meanlog, sdlog } => {
                let dist = statrs::distribution::LogNormal::new(*meanlog, *sdlog)
                    .map_err(|e| Error::InvalidConfig(format!("lognormal: {e}")))?;
                let lo = dist.inverse_cdf(1e-7);
                let hi = dist.inverse_cdf(1.0 - 1e-7);
                discretize_by_cdf(resolution, lo, hi, |x| dist.cdf(x))
            }
            IncomeFamily::TruncNormalMix { components } => {
                let hi = components
                    .iter()
                    .map(|c| c.mean + 8.0 * c.sd)
                    .fold(0.0, f64::max);
                let cdf = |x: f64| -> f64 {
                    if x <= 0.0 {
                        return 0.0;
                    }
                    components
                        .iter()
                        .map(|c| {
                            let normal =
                                statrs::distribution::Normal::new(c.mean, c.sd).expect("validated");
                            let base = normal.cdf(0.0);
                            c.weight * (normal.cdf(x) - base) / (1.0 - base)
                        })
                        .sum()
                };
                discretize_by_cdf(resolution, 0.0, hi, cdf)
            }
        }
    }
}

fn discretize_by_cdf(
    resolution: usize,
    lo: f64,
    hi: f64,
    cdf: impl Fn(f64) -> f64,
) -> Result<DiscretePrior<f64>> {
    let k = resolution.max(2);
    let lo = lo.max(0.0);
    let step = (hi - lo) / k as f64;
    if !(step > 0.0) {
        return Err(Error::InvalidConfig("degenerate discretization range".into()));
    }
    let mut support = Vec::with_capacity(k);
    let mut weights = Vec::with_capacity(k);
    for j in 0..k {
        let a = lo + step * j as f64;
        let b = a + step;
        support.push(0.5 * (a + b));
        let mut w = cdf(b) - cdf(a);
        if j == 0 {
            w += cdf(a);
        }
        if j == k - 1 {
            w += 1.0 - cdf(b);
        }
        weights.push(w.max(0.0));
    }
    let total: f64 = weights.iter().sum();
    for w in weights.iter_mut() {
        *w /= total;
    }
    DiscretePrior::new(support, weights)
}

/// Where the fixed population of incomes comes from.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub enum IncomeSource {
    /// Incomes drawn once from a named family using the experiment seed.
    Synthetic(IncomeFamily),
    /// Externally supplied incomes (e.g. ingested microdata); no oracle
    /// prior is available.
    External(Vec<f64>),
}

/// Whether losses are evaluated against realized incomes or the latent
/// conditional means (regret diagnostics).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum EvalTarget {
    #[default]
    Realized,
    ConditionalMean,
}

/// Full parameterization of one experiment at a single SNR level.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimConfig {
    pub n: usize,
    pub snr_target: f64,
    pub replications: usize,
    pub seed: u64,
    /// Budget as a fraction of the total poverty gap, in (0, 1].
    pub budget_fraction: f64,
    pub rules: Vec<RuleSpec>,
    pub income_source: IncomeSource,
    #[serde(default)]
    pub loss: LossKind,
    /// Standard deviation of idiosyncratic income noise ε added to the
    /// latent means when forming realized incomes; 0 identifies y with μ.
    #[serde(default)]
    pub income_noise_sd: f64,
    #[serde(default)]
    pub eval_against: EvalTarget,
    /// Support size when a continuous family is discretized for the oracle.
    #[serde(default = "default_oracle_resolution")]
    pub oracle_resolution: usize,
}

fn default_oracle_resolution() -> usize {
    DEFAULT_ORACLE_RESOLUTION
}

impl SimConfig {
    fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::InvalidConfig("replications must be >= 1".into()));
        }
        if !(self.snr_target > 0.0) {
            return Err(Error::InvalidConfig("snr_target must be positive".into()));
        }
        if !(self.budget_fraction > 0.0 && self.budget_fraction <= 1.0) {
            return Err(Error::InvalidConfig("budget_fraction must be in (0, 1]".into()));
        }
        if self.rules.is_empty() {
            return Err(Error::InvalidConfig("at least one rule is required".into()));
        }
        if matches!(self.income_source, IncomeSource::Synthetic(_)) && self.n == 0 {
            return Err(Error::InvalidConfig("n must be >= 1".into()));
        }
        if self.income_noise_sd < 0.0 {
            return Err(Error::InvalidConfig("income_noise_sd must be >= 0".into()));
        }
        Ok(())
    }
}

/// One rule evaluated on one replication.
#[derive(Debug, Clone)]
pub struct ReplicationRecord {
    pub replication: usize,
    pub rule: String,
    pub metrics: Option<MetricsReport>,
    pub error: Option<String>,
    pub runtime: Duration,
}

/// The fixed population and derived policy quantities of an experiment,
/// returned alongside the replication records.
#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub records: Vec<ReplicationRecord>,
    pub context: PolicyContext<f64>,
    pub sigma_c: f64,
    pub incomes: Vec<f64>,
    pub conditional_means: Vec<f64>,
}

/// σ_c such that Var(y) / E[σ_i²] equals the target SNR when
/// σ_i ~ Uniform[σ_c/2, 3σ_c/2]: σ_c = sqrt(3 Var(y) / (3.25 snr)).
pub fn calibrate_noise_scale(incomes: &[f64], snr_target: f64) -> Result<f64> {
    if incomes.is_empty() {
        return Err(Error::EmptyInput("incomes"));
    }
    if !(snr_target > 0.0) {
        return Err(Error::Invalid("snr target must be positive".into()));
    }
    let var = population_variance(incomes);
    if !(var > 0.0) {
        return Err(Error::Invalid("income variance must be positive".into()));
    }
    Ok((var / (snr_target * UNIFORM_SCALE_SECOND_MOMENT)).sqrt())
}

/// Poverty line at the (lower) median income; budget as a fraction of the
/// total poverty gap below it.
pub fn make_policy_context(incomes: &[f64], budget_fraction: f64) -> Result<PolicyContext<f64>> {
    if incomes.is_empty() {
        return Err(Error::EmptyInput("incomes"));
    }
    if !(budget_fraction > 0.0 && budget_fraction <= 1.0) {
        return Err(Error::InvalidConfig("budget_fraction must be in (0, 1]".into()));
    }
    let z = lower_median(incomes);
    let total_gap: f64 = incomes.iter().map(|&y| (z - y).max(0.0)).sum();
    if !(total_gap > 0.0) {
        return Err(Error::InvalidConfig(
            "total poverty gap is zero (all incomes equal?)".into(),
        ));
    }
    PolicyContext::new(z, budget_fraction * total_gap)
}

/// Draws a noisy panel around fixed means: σ_i ~ Uniform[σ_c/2, 3σ_c/2] and
/// ŷ_i ~ N(μ_i, σ_i²), independently across households.
pub fn generate_panel(mu: &[f64], sigma_c: f64, rng: &mut ChaCha8Rng) -> Result<NoisyPanel<f64>> {
    if !(sigma_c > 0.0) {
        return Err(Error::Invalid("noise scale must be positive".into()));
    }
    let scale_dist = Uniform::new(0.5f64, 1.5).expect("static bounds");
    let mut estimates = Vec::with_capacity(mu.len());
    let mut scales = Vec::with_capacity(mu.len());
    for &m in mu {
        let sigma = sigma_c * scale_dist.sample(rng);
        let eps: f64 = rng.sample(StandardNormal);
        estimates.push(m + sigma * eps);
        scales.push(sigma);
    }
    NoisyPanel::new(estimates, scales)
}

/// Runs one experiment: fixed population, fresh noise per replication, every
/// rule on the identical panel, metrics against realized incomes.
///
/// Rule failures are recorded per record without aborting the experiment.
pub fn run_experiment(config: &SimConfig) -> Result<ExperimentOutput> {
    config.validate()?;

    // Stream 0: the fixed population.
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(0);
    let (mu, oracle_prior) = match &config.income_source {
        IncomeSource::Synthetic(family) => (
            family.sample(config.n, &mut rng)?,
            Some(family.oracle_prior(config.oracle_resolution)?),
        ),
        IncomeSource::External(incomes) => {
            if incomes.is_empty() {
                return Err(Error::EmptyInput("external incomes"));
            }
            (incomes.clone(), None)
        }
    };
    let incomes: Vec<f64> = if config.income_noise_sd > 0.0 {
        mu.iter()
            .map(|&m| {
                let eps: f64 = rng.sample(StandardNormal);
                (m + config.income_noise_sd * eps).max(0.0)
            })
            .collect()
    } else {
        mu.clone()
    };

    let context = make_policy_context(&incomes, config.budget_fraction)?;
    let sigma_c = calibrate_noise_scale(&incomes, config.snr_target)?;
    let eval_incomes: &[f64] = match config.eval_against {
        EvalTarget::Realized => &incomes,
        EvalTarget::ConditionalMean => &mu,
    };
    let baseline = LossBaseline::compute(
        eval_incomes,
        context.poverty_line,
        context.budget,
        config.loss,
    )?;

    let records: Vec<ReplicationRecord> = (0..config.replications)
        .into_par_iter()
        .flat_map_iter(|replication| {
            // Stream r + 1: this replication's noise draws.
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(replication as u64 + 1);
            let panel = generate_panel(&mu, sigma_c, &mut rng);
            config
                .rules
                .iter()
                .map(|spec| {
                    let start = Instant::now();
                    let outcome = panel.as_ref().map_err(|e| e.to_string()).and_then(|panel| {
                        let inputs = RuleInputs {
                            true_incomes: Some(&incomes),
                            oracle_prior: oracle_prior.as_ref(),
                            pooled_sigma: Some(sigma_c),
                        };
                        let output = apply_rule(spec, panel, &context, &inputs)
                            .map_err(|e| e.to_string())?;
                        MetricsReport::compute(
                            &output.transfers,
                            eval_incomes,
                            context.poverty_line,
                            context.budget,
                            config.loss,
                            Some(&baseline),
                        )
                        .map_err(|e| e.to_string())
                    });
                    let (metrics, error) = match outcome {
                        Ok(m) => (Some(m), None),
                        Err(e) => (None, Some(e)),
                    };
                    ReplicationRecord {
                        replication,
                        rule: spec.name().to_string(),
                        metrics,
                        error,
                        runtime: start.elapsed(),
                    }
                })
                .collect::<Vec<_>>()
        })
        .collect();

    Ok(ExperimentOutput {
        records,
        context,
        sigma_c,
        incomes,
        conditional_means: mu,
    })
}

/// Per-rule aggregate over an experiment's records.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RuleSummary {
    pub rule: String,
    pub replications: usize,
    pub failures: usize,
    pub mean_loss_ratio: f64,
    pub sd_loss_ratio: f64,
    pub min_loss_ratio: f64,
    pub max_loss_ratio: f64,
    pub mean_loss: f64,
    pub mean_inclusion_error: f64,
    pub mean_exclusion_error: f64,
    pub mean_reach: f64,
    pub mean_avg_transfer_given_positive: f64,
    pub mean_spend: f64,
}

/// Groups records by rule (in first-appearance order) and aggregates.
pub fn summarize(records: &[ReplicationRecord]) -> Vec<RuleSummary> {
    let mut order: Vec<&str> = Vec::new();
    for r in records {
        if !order.contains(&r.rule.as_str()) {
            order.push(&r.rule);
        }
    }
    order
        .into_iter()
        .map(|rule| {
            let group: Vec<&ReplicationRecord> =
                records.iter().filter(|r| r.rule == rule).collect();
            let metrics: Vec<&MetricsReport> =
                group.iter().filter_map(|r| r.metrics.as_ref()).collect();
            let failures = group.len() - metrics.len();
            let count = metrics.len().max(1) as f64;
            let mean = |f: &dyn Fn(&MetricsReport) -> f64| -> f64 {
                metrics.iter().map(|m| f(m)).sum::<f64>() / count
            };
            let mean_lr = mean(&|m| m.loss_ratio);
            let sd_lr = if metrics.len() > 1 {
                (metrics
                    .iter()
                    .map(|m| (m.loss_ratio - mean_lr).powi(2))
                    .sum::<f64>()
                    / (metrics.len() as f64 - 1.0))
                    .sqrt()
            } else {
                0.0
            };
            RuleSummary {
                rule: rule.to_string(),
                replications: group.len(),
                failures,
                mean_loss_ratio: mean_lr,
                sd_loss_ratio: sd_lr,
                min_loss_ratio: metrics
                    .iter()
                    .map(|m| m.loss_ratio)
                    .fold(f64::INFINITY, f64::min),
                max_loss_ratio: metrics
                    .iter()
                    .map(|m| m.loss_ratio)
                    .fold(f64::NEG_INFINITY, f64::max),
                mean_loss: mean(&|m| m.loss),
                mean_inclusion_error: mean(&|m| m.inclusion_error),
                mean_exclusion_error: mean(&|m| m.exclusion_error),
                mean_reach: mean(&|m| m.reach),
                mean_avg_transfer_given_positive: mean(&|m| m.avg_transfer_given_positive),
                mean_spend: mean(&|m| m.spend),
            }
        })
        .collect()
}
