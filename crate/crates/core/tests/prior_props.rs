//! Property and sampling-oracle tests for prior estimation and posterior
//! means.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use targeting_core::prior::{
    build_grid, default_grid_size, fit_npmle, posterior_mean, tweedie_posterior_mean,
    DiscretePrior, NoisyPanel,
};

fn prior_strategy() -> impl Strategy<Value = DiscretePrior<f64>> {
    (
        prop::collection::vec(0.0f64..30.0, 1..8),
        prop::collection::vec(0.05f64..1.0, 8),
    )
        .prop_map(|(mut support, raw_weights)| {
            support.sort_by(f64::total_cmp);
            support.dedup_by(|a, b| (*a - *b).abs() < 1e-6);
            let k = support.len();
            let total: f64 = raw_weights[..k].iter().sum();
            let weights: Vec<f64> = raw_weights[..k].iter().map(|w| w / total).collect();
            DiscretePrior::new(support, weights).unwrap()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    // The two posterior-mean routes are the same algebraic object; hold them
    // to near machine agreement.
    #[test]
    fn tweedie_identity(prior in prior_strategy(), y in -10.0f64..40.0, sigma in 0.05f64..8.0) {
        let pm = posterior_mean(&prior, y, sigma);
        let tw = tweedie_posterior_mean(&prior, y, sigma);
        prop_assert!((pm - tw).abs() <= 1e-10 * pm.abs().max(1.0), "{pm} vs {tw}");
    }

    #[test]
    fn posterior_mean_within_support_hull(
        prior in prior_strategy(),
        y in -50.0f64..80.0,
        sigma in 0.05f64..10.0,
    ) {
        let m = posterior_mean(&prior, y, sigma);
        let lo = prior.support()[0];
        let hi = prior.support()[prior.len() - 1];
        prop_assert!(m >= lo - 1e-12 && m <= hi + 1e-12);
    }
}

/// Draws a panel from a discrete prior with a common noise scale.
fn sample_panel(
    prior: &DiscretePrior<f64>,
    n: usize,
    sigma: f64,
    rng: &mut ChaCha8Rng,
) -> (Vec<f64>, NoisyPanel<f64>) {
    let mut mu = Vec::with_capacity(n);
    let mut estimates = Vec::with_capacity(n);
    for _ in 0..n {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut chosen = prior.support()[prior.len() - 1];
        for (&m, &w) in prior.support().iter().zip(prior.weights()) {
            acc += w;
            if u < acc {
                chosen = m;
                break;
            }
        }
        mu.push(chosen);
        let eps: f64 = rng.sample(StandardNormal);
        estimates.push(chosen + sigma * eps);
    }
    let panel = NoisyPanel::new(estimates, vec![sigma; n]).unwrap();
    (mu, panel)
}

#[test]
fn em_log_likelihood_is_monotone() {
    let truth = DiscretePrior::new(vec![2.0, 6.0, 11.0], vec![0.5, 0.3, 0.2]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let (_, panel) = sample_panel(&truth, 600, 1.5, &mut rng);
    let grid = build_grid(&panel, default_grid_size(600)).unwrap();
    let fit = fit_npmle(&panel, &grid, 1e-9, 10_000).unwrap();
    let trace = &fit.log_likelihood_trace;
    assert!(trace.len() > 2);
    for w in trace.windows(2) {
        assert!(w[1] >= w[0] - 1e-10, "step decreased: {} -> {}", w[0], w[1]);
    }
    assert!(fit.converged, "EM did not converge in {} iterations", fit.iterations);
    assert!(fit.stationarity_residual < 1e-3, "residual {}", fit.stationarity_residual);
}

#[test]
fn two_point_prior_moments_are_recovered() {
    // Equal-weight mass at 3 and 9 observed through unit noise: the fitted
    // mean and second moment land near (6, 45).
    let truth = DiscretePrior::new(vec![3.0, 9.0], vec![0.5, 0.5]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let (_, panel) = sample_panel(&truth, 2000, 1.0, &mut rng);
    let grid = build_grid(&panel, default_grid_size(2000)).unwrap();
    let fit = fit_npmle(&panel, &grid, 1e-9, 10_000).unwrap();
    assert!((fit.prior.mean() - 6.0).abs() < 0.15, "mean {}", fit.prior.mean());
    assert!(
        (fit.prior.second_moment() - 45.0).abs() < 1.5,
        "second moment {}",
        fit.prior.second_moment()
    );
}

#[test]
fn posterior_means_shrink_toward_a_unimodal_prior() {
    // Discretized bell-shaped prior centered at 10.
    let support: Vec<f64> = (0..21).map(|j| 5.0 + 0.5 * j as f64).collect();
    let raw: Vec<f64> = support
        .iter()
        .map(|&m| (-0.5 * ((m - 10.0) / 1.5f64).powi(2)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
    let prior = DiscretePrior::new(support, weights).unwrap();
    let prior_mean = prior.mean();
    for sigma in [0.5, 1.0, 3.0] {
        for j in 0..40 {
            let y = 2.0 + 0.4 * j as f64;
            let m = posterior_mean(&prior, y, sigma);
            assert!(
                (m - prior_mean).abs() <= (y - prior_mean).abs() + 1e-9,
                "sigma={sigma} y={y}: m={m} expands past the observation"
            );
        }
    }
}

#[test]
fn fitted_support_grows_sublinearly_in_n() {
    // Smooth (bell-shaped mixture) truth; the share of grid points carrying
    // real mass must shrink as n grows.
    let truth = {
        let support: Vec<f64> = (0..41).map(|j| 2.0 + 0.2 * j as f64).collect();
        let raw: Vec<f64> = support
            .iter()
            .map(|&m| (-0.5 * ((m - 6.0) / 1.2f64).powi(2)).exp())
            .collect();
        let total: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
        DiscretePrior::new(support, weights).unwrap()
    };
    let mut ratios = Vec::new();
    for (seed, n) in [(101u64, 250usize), (102, 1000), (103, 4000)] {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (_, panel) = sample_panel(&truth, n, 1.0, &mut rng);
        let grid = build_grid(&panel, default_grid_size(n)).unwrap();
        let fit = fit_npmle(&panel, &grid, 1e-9, 10_000).unwrap();
        let count = fit.prior.support_count_above(1e-6);
        ratios.push(count as f64 / n as f64);
    }
    // Sublinear growth: the fraction of households "explained" by an extra
    // support point keeps falling (counts must grow slower than n does).
    assert!(
        ratios[0] > ratios[1] && ratios[1] > ratios[2],
        "support share not shrinking: {ratios:?}"
    );
}

#[test]
fn posterior_means_beat_raw_estimates_in_mse() {
    // At SNR <= 1 the fitted posterior means must improve on the raw data.
    let truth = DiscretePrior::new(vec![2.0, 5.0, 9.0], vec![0.4, 0.35, 0.25]).unwrap();
    let prior_var = truth.second_moment() - truth.mean() * truth.mean();
    for snr in [0.5f64, 1.0] {
        let sigma = (prior_var / snr).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let (mu, panel) = sample_panel(&truth, 1000, sigma, &mut rng);
        let grid = build_grid(&panel, default_grid_size(1000)).unwrap();
        let fit = fit_npmle(&panel, &grid, 1e-9, 10_000).unwrap();
        let mut mse_post = 0.0;
        let mut mse_raw = 0.0;
        for i in 0..mu.len() {
            let m = posterior_mean(&fit.prior, panel.estimates()[i], sigma);
            mse_post += (m - mu[i]).powi(2);
            mse_raw += (panel.estimates()[i] - mu[i]).powi(2);
        }
        assert!(
            mse_post < mse_raw,
            "snr={snr}: posterior MSE {mse_post} vs raw {mse_raw}"
        );
    }
}
