#![allow(clippy::needless_range_loop)]

use std::sync::Arc;

use rand::Rng;
use sgmc::data::Dataset;
use sgmc::diagnostics::{diagnostics_summary, effective_sample_size};
use sgmc::models::*;
use sgmc::potential::LogDensityModel;
use sgmc::{Layout, RandomKey};

#[test]
fn analytic_gradients_match_finite_differences() {
    for kind in BuiltinKind::ALL {
        let model = kind.build(None, 200).unwrap();
        let data = model.generate(RandomKey::new(1), 200, &model.default_truth()).unwrap();
        let mut rng = RandomKey::new(2).fold_in(kind as u64).rng();
        for _ in 0..100 {
            let theta: Vec<f64> = (0..model.layout().size())
                .map(|_| rng.random_range(-2.0..2.0))
                .collect();
            let err = gradient_check(model.as_ref(), &data, &theta, 1e-5).unwrap();
            assert!(err <= 1e-5, "{kind} at {theta:?}: relative error {err}");
        }
    }
}

/// A standard normal target with no data dependence.
struct StandardNormal(Arc<Layout>);

impl LogDensityModel for StandardNormal {
    fn layout(&self) -> &Arc<Layout> {
        &self.0
    }

    fn log_likelihood_and_score(&self, _: &[f64], _: &sgmc::data::Observation<'_>, _: &mut [f64]) -> f64 {
        0.0
    }

    fn log_prior_and_grad(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        grad[0] -= theta[0];
        -0.5 * theta[0] * theta[0]
    }
}

#[test]
fn oracle_recovers_standard_normal() {
    let model = StandardNormal(Layout::new([("x", vec![])]).unwrap());
    let data = Dataset::from_arrays([("dummy", vec![1], vec![0.0])]).unwrap();
    let out = rwmh_oracle(&model, &data, &[0.0], &[2.4], 100_000, 1_000, RandomKey::new(8)).unwrap();
    let x = out.column(0);
    let s = diagnostics_summary(&x, None).unwrap();
    let se = s.std / s.ess.sqrt();
    assert!(s.mean.abs() < 3.0 * se, "mean {} se {se}", s.mean);
    assert!((s.std * s.std - 1.0).abs() < 0.05, "variance {}", s.std * s.std);
    assert!(out.acceptance_rate > 0.2 && out.acceptance_rate < 0.7);
}

#[test]
fn oracle_detailed_balance_on_three_bins() {
    let model = StandardNormal(Layout::new([("x", vec![])]).unwrap());
    let data = Dataset::from_arrays([("dummy", vec![1], vec![0.0])]).unwrap();
    let out = rwmh_oracle(&model, &data, &[0.0], &[1.5], 100_000, 0, RandomKey::new(3)).unwrap();
    let edge = 0.430_727_299_295_457_5;
    let bin = |x: f64| {
        if x < -edge {
            0
        } else if x < edge {
            1
        } else {
            2
        }
    };
    let mut counts = [[0.0f64; 3]; 3];
    for w in out.samples.windows(2) {
        counts[bin(w[0][0])][bin(w[1][0])] += 1.0;
    }
    for i in 0..3 {
        for j in (i + 1)..3 {
            let (f, b) = (counts[i][j], counts[j][i]);
            assert!((f - b).abs() <= 3.0 * (f + b).sqrt(), "{i}->{j}: {f} vs {b}");
        }
    }
}

#[test]
fn tuned_reference_matches_conjugate_posterior() {
    let model = GaussianMean::new();
    let data = model.generate(RandomKey::new(4), 100, &model.default_truth()).unwrap();
    let (mu, sd) = model.posterior(&data).unwrap();
    let out = rwmh_reference(&model, &data, &[0.0], 50_000, 1_000, RandomKey::new(5)).unwrap();
    let x = out.column(0);
    let s = diagnostics_summary(&x, None).unwrap();
    assert!((s.mean - mu).abs() < 3.0 * sd / s.ess.sqrt());
    assert!((s.std / sd - 1.0).abs() < 0.05);
}

#[test]
fn predictive_mean_matches_conjugate_formula() {
    let model = GaussianMean::new();
    let data = model.generate(RandomKey::new(6), 40, &model.default_truth()).unwrap();
    let (mu, sd) = model.posterior(&data).unwrap();
    // exact posterior draws stand in for a sampler's output
    let draws: Vec<Vec<f64>> = RandomKey::new(7)
        .normal_vec(5_000, sd)
        .unwrap()
        .into_iter()
        .map(|z| vec![mu + z])
        .collect();
    let pred = ensemble_predict(draws.iter().map(Vec::as_slice), &[], &model).unwrap();
    let se = sd / (draws.len() as f64).sqrt();
    assert!((pred.mean - mu).abs() < 3.0 * se);
    assert!((pred.std / sd - 1.0).abs() < 0.05);
    assert_eq!(pred.outputs.len(), 5_000);
    assert!(effective_sample_size(&pred.outputs).unwrap() > 4_000.0);
}

#[test]
fn regression_and_classification_predictions() {
    let lin = LinregSigma::new(2).unwrap();
    assert_eq!(lin.predict(&[1.0, -2.0, 0.0], &[3.0, 1.0]), 1.0);
    let log = Logreg2d::new();
    assert_eq!(log.predict(&[0.0, 0.0], &[5.0, 5.0]), 0.5);
}
