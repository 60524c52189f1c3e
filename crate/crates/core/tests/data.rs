use std::collections::BTreeSet;
use std::sync::Arc;

use sgmc::data::*;
use sgmc::models::{BuiltinKind, BuiltinModel, LinregSigma};
use sgmc::potential::{stochastic_potential, Potential};
use sgmc::RandomKey;

fn indexed(n: usize) -> Dataset {
    Dataset::from_arrays([("i", vec![n], (0..n).map(|i| i as f64).collect())]).unwrap()
}

#[test]
fn every_epoch_is_a_partition() {
    for (total, n) in [(10, 3), (12, 4), (7, 7), (100, 9), (5, 1)] {
        let ds = indexed(total);
        let spec = BatchSpec::new(n, BatchStrategy::ShuffleInEpochs, RandomKey::new(total as u64));
        let mut state = BatchState::new();
        let per_epoch = total.div_ceil(n);
        for _epoch in 0..4 {
            let mut seen = Vec::new();
            for _ in 0..per_epoch {
                let (batch, next) = next_batch(&ds, &spec, state).unwrap();
                state = next;
                assert_eq!(batch.len(), n);
                seen.extend(batch.indices().iter().flatten().copied());
            }
            let unique: BTreeSet<usize> = seen.iter().copied().collect();
            assert_eq!(seen.len(), total);
            assert_eq!(unique.len(), total);
        }
    }
}

#[test]
fn masked_rows_never_reach_the_potential() {
    let model = LinregSigma::new(3).unwrap();
    let ds = Arc::new(model.generate(RandomKey::new(0), 10, &model.default_truth()).unwrap());
    let spec = BatchSpec::new(4, BatchStrategy::ShuffleInEpochs, RandomKey::new(1));
    let mut state = BatchState::new();
    let theta = [0.3, -0.2, 1.0, 0.1];
    let mut padded_batches = 0;
    for _ in 0..9 {
        let (mut batch, next) = next_batch(&ds, &spec, state).unwrap();
        state = next;
        let clean = stochastic_potential(&model, &theta, &batch).unwrap();
        if batch.valid_count() < batch.len() {
            padded_batches += 1;
            let masked: Vec<usize> = (0..batch.len()).filter(|&k| !batch.mask()[k]).collect();
            for name in ["x", "y"] {
                let width = ds.array(name).unwrap().row_len();
                let values = batch.array_mut(name).unwrap();
                for &k in &masked {
                    values[k * width..(k + 1) * width].fill(1e300);
                }
            }
            let dirty = stochastic_potential(&model, &theta, &batch).unwrap();
            assert_eq!(clean.0.to_bits(), dirty.0.to_bits());
            assert_eq!(clean.1, dirty.1);
        }
    }
    assert_eq!(padded_batches, 3);
}

/// Mean of `draws` stochastic potentials, its standard error, and the exact potential.
fn unbiasedness(strategy: BatchStrategy, draws: usize) -> (f64, f64, f64) {
    let model = BuiltinKind::LinregSigma.build(Some(4), 0).unwrap();
    let ds = Arc::new(model.generate(RandomKey::new(3), 103, &model.default_truth()).unwrap());
    let pot = Potential::new(model.clone(), Arc::clone(&ds), 103).unwrap();
    let theta = [0.8, -1.5, 0.2, 2.5, -0.4];
    let exact = pot.exact_value(&theta).unwrap();
    let spec = BatchSpec::new(10, strategy, RandomKey::new(4));
    let mut stream = BatchStream::new(ds, spec).unwrap();
    let values: Vec<f64> = (0..draws)
        .map(|_| pot.stochastic(&theta, &stream.next_batch().unwrap()).unwrap().0)
        .collect();
    let mean = values.iter().sum::<f64>() / draws as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (draws - 1) as f64;
    (mean, (var / draws as f64).sqrt(), exact)
}

#[test]
fn stochastic_potential_is_unbiased_for_every_strategy() {
    for strategy in [
        BatchStrategy::DrawReplacement,
        BatchStrategy::Shuffle,
        BatchStrategy::ShuffleInEpochs,
    ] {
        let (mean, se, exact) = unbiasedness(strategy, 10_000);
        assert!(
            (mean - exact).abs() <= 3.0 * se,
            "{strategy:?}: {mean} vs {exact} (se {se})"
        );
    }
}

#[test]
fn prefetch_depth_does_not_change_the_sequence() {
    let ds = Arc::new(indexed(37));
    let take = |cache: usize| {
        let spec = BatchSpec::new(5, BatchStrategy::ShuffleInEpochs, RandomKey::new(2)).with_cache(cache);
        let mut s = BatchStream::new(Arc::clone(&ds), spec).unwrap();
        (0..40)
            .map(|_| s.next_batch().unwrap().indices().to_vec())
            .collect::<Vec<_>>()
    };
    assert_eq!(take(1), take(3));
    assert_eq!(take(1), take(16));
}
