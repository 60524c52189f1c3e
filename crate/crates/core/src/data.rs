//! In-memory datasets, mini-batching and masked full-data sweeps.
//!
//! Three batching strategies are supported:
//!
//! * [`BatchStrategy::DrawReplacement`]: every row of every batch is drawn i.i.d. uniformly.
//! * [`BatchStrategy::ShuffleInEpochs`]: each epoch is one permutation cut into
//!   `ceil(N / n)` batches; the last batch of an epoch is padded with masked-out zero rows.
//! * [`BatchStrategy::Shuffle`]: permutations are concatenated back to back, so a short tail
//!   is completed from the next permutation and no padding ever occurs.
//!
//! The batch sequence is a pure function of `(dataset, spec)`; the prefetch depth
//! `cache_count` only controls how many batches are assembled ahead of time.

use std::collections::VecDeque;
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::random::RandomKey;

/// One named array; the leading axis indexes observations.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    name: String,
    row_shape: Vec<usize>,
    row_len: usize,
    data: Vec<f64>,
}

impl NamedArray {
    pub fn name(&self) -> &str {
        &self.name
    }

    /// Shape of a single observation (without the leading axis).
    pub fn row_shape(&self) -> &[usize] {
        &self.row_shape
    }

    pub fn row_len(&self) -> usize {
        self.row_len
    }

    pub fn rows(&self) -> usize {
        self.data.len() / self.row_len
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.row_len..(i + 1) * self.row_len]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    fn empty_like(&self, rows: usize) -> Self {
        Self {
            name: self.name.clone(),
            row_shape: self.row_shape.clone(),
            row_len: self.row_len,
            data: vec![0.0; rows * self.row_len],
        }
    }
}

/// A single observation: one row across all named arrays.
#[derive(Debug, Clone, Copy)]
pub struct Observation<'a> {
    arrays: &'a [NamedArray],
    row: usize,
}

impl<'a> Observation<'a> {
    pub fn try_get(&self, name: &str) -> Option<&'a [f64]> {
        self.arrays.iter().find(|a| a.name == name).map(|a| a.row(self.row))
    }

    /// Row of the named array.
    ///
    /// Panics if the array does not exist; models check their datasets up front
    /// through `LogDensityModel::check_data`.
    pub fn get(&self, name: &str) -> &'a [f64] {
        self.try_get(name)
            .unwrap_or_else(|| panic!("observation has no field `{name}`"))
    }

    /// First element of the named row, for scalar observations.
    pub fn scalar(&self, name: &str) -> f64 {
        self.get(name)[0]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    arrays: Vec<NamedArray>,
    len: usize,
}

/// Where [`load_in_memory`] reads from.
#[derive(Debug, Clone)]
pub enum DataSource {
    /// `(name, full shape with leading N, row-major values)`.
    Arrays(Vec<(String, Vec<usize>, Vec<f64>)>),
    /// CSV with header; each named array collects the listed columns in order.
    Csv {
        path: std::path::PathBuf,
        columns: Vec<(String, Vec<String>)>,
    },
}

pub fn load_in_memory(source: DataSource) -> Result<Dataset> {
    match source {
        DataSource::Arrays(arrays) => Dataset::from_arrays(arrays),
        DataSource::Csv { path, columns } => Dataset::from_csv(path, &columns),
    }
}

impl Dataset {
    pub fn from_arrays<S: Into<String>>(arrays: impl IntoIterator<Item = (S, Vec<usize>, Vec<f64>)>) -> Result<Self> {
        let mut out: Vec<NamedArray> = Vec::new();
        let mut len = None;
        for (name, shape, data) in arrays {
            let name = name.into();
            let (&rows, row_shape) = shape
                .split_first()
                .ok_or_else(|| Error::Shape(format!("array `{name}` needs a leading axis")))?;
            let row_len: usize = row_shape.iter().product();
            if rows * row_len != data.len() {
                return Err(Error::Shape(format!(
                    "array `{name}` has shape {shape:?} but {} values",
                    data.len()
                )));
            }
            if row_len == 0 {
                return Err(Error::Shape(format!("array `{name}` has empty rows")));
            }
            match len {
                None => len = Some(rows),
                Some(n) if n != rows => {
                    return Err(Error::Shape(format!("array `{name}` has {rows} rows, expected {n}")))
                }
                _ => {}
            }
            if out.iter().any(|a| a.name == name) {
                return Err(Error::Shape(format!("duplicate array `{name}`")));
            }
            out.push(NamedArray {
                name,
                row_shape: row_shape.to_vec(),
                row_len,
                data,
            });
        }
        let len = len.ok_or_else(|| Error::Shape("dataset needs at least one array".into()))?;
        if len == 0 {
            return Err(Error::Shape("dataset must contain at least one row".into()));
        }
        Ok(Self { arrays: out, len })
    }

    pub fn from_csv(path: impl AsRef<Path>, columns: &[(String, Vec<String>)]) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv_reader(file, columns)
    }

    /// Header row required; a group of one column yields shape `(N,)`, more yield `(N, k)`.
    pub fn from_csv_reader(reader: impl std::io::Read, columns: &[(String, Vec<String>)]) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let headers = rdr
            .headers()
            .map_err(|e| Error::Parse(format!("csv header: {e}")))?
            .clone();
        let mut index = Vec::with_capacity(columns.len());
        for (name, cols) in columns {
            if cols.is_empty() {
                return Err(Error::Shape(format!("array `{name}` lists no columns")));
            }
            let idx = cols
                .iter()
                .map(|c| {
                    headers.iter().position(|h| h == c).ok_or_else(|| Error::Ingestion {
                        row: 0,
                        column: c.clone(),
                        message: "column missing from header".into(),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            index.push(idx);
        }
        let mut data: Vec<Vec<f64>> = vec![Vec::new(); columns.len()];
        let mut rows = 0usize;
        for (r, record) in rdr.records().enumerate() {
            // row numbers are 1-based over data rows
            let row = r + 1;
            let record = record.map_err(|e| Error::Ingestion {
                row,
                column: String::new(),
                message: e.to_string(),
            })?;
            for (g, idx) in index.iter().enumerate() {
                for &c in idx {
                    let cell = record.get(c).unwrap_or("");
                    let value: f64 = cell.trim().parse().map_err(|_| Error::Ingestion {
                        row,
                        column: headers[c].to_string(),
                        message: format!("cannot parse `{cell}` as a number"),
                    })?;
                    data[g].push(value);
                }
            }
            rows += 1;
        }
        let arrays = columns.iter().zip(data).map(|((name, cols), values)| {
            let shape = if cols.len() == 1 {
                vec![rows]
            } else {
                vec![rows, cols.len()]
            };
            (name.clone(), shape, values)
        });
        Self::from_arrays(arrays.collect::<Vec<_>>())
    }

    /// Observation count N.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn arrays(&self) -> &[NamedArray] {
        &self.arrays
    }

    pub fn array(&self, name: &str) -> Option<&NamedArray> {
        self.arrays.iter().find(|a| a.name == name)
    }

    pub fn observation(&self, i: usize) -> Observation<'_> {
        assert!(i < self.len, "row {i} out of range for dataset of {}", self.len);
        Observation {
            arrays: &self.arrays,
            row: i,
        }
    }

    pub fn observations(&self) -> impl Iterator<Item = Observation<'_>> + '_ {
        (0..self.len).map(move |i| self.observation(i))
    }

    /// Gather rows into a batch; `None` entries become masked zero rows.
    pub(crate) fn gather(&self, rows: &[Option<usize>]) -> MiniBatch {
        let mut arrays: Vec<NamedArray> = self.arrays.iter().map(|a| a.empty_like(rows.len())).collect();
        for (dst, src) in arrays.iter_mut().zip(&self.arrays) {
            let w = src.row_len;
            for (pos, row) in rows.iter().enumerate() {
                if let Some(i) = row {
                    dst.data[pos * w..(pos + 1) * w].copy_from_slice(src.row(*i));
                }
            }
        }
        MiniBatch {
            arrays,
            mask: rows.iter().map(Option::is_some).collect(),
            indices: rows.to_vec(),
            full_size: self.len,
        }
    }
}

/// Rows of a dataset with a validity mask and the full dataset size.
#[derive(Debug, Clone, PartialEq)]
pub struct MiniBatch {
    arrays: Vec<NamedArray>,
    mask: Vec<bool>,
    indices: Vec<Option<usize>>,
    full_size: usize,
}

impl MiniBatch {
    /// Nominal batch size n, including padded rows.
    pub fn len(&self) -> usize {
        self.mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mask.is_empty()
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    /// Source row of each position; `None` for padding.
    pub fn indices(&self) -> &[Option<usize>] {
        &self.indices
    }

    pub fn full_size(&self) -> usize {
        self.full_size
    }

    /// Number of unmasked rows.
    pub fn valid_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn arrays(&self) -> &[NamedArray] {
        &self.arrays
    }

    /// Raw access to a batch array, masked rows included.
    pub fn array_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        self.arrays
            .iter_mut()
            .find(|a| a.name == name)
            .map(|a| a.data.as_mut_slice())
    }

    pub fn observation(&self, pos: usize) -> Observation<'_> {
        Observation {
            arrays: &self.arrays,
            row: pos,
        }
    }

    /// Unmasked rows only.
    pub fn valid_observations(&self) -> impl Iterator<Item = Observation<'_>> + '_ {
        self.mask
            .iter()
            .enumerate()
            .filter(|(_, &m)| m)
            .map(move |(pos, _)| self.observation(pos))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchStrategy {
    DrawReplacement,
    Shuffle,
    ShuffleInEpochs,
}

#[derive(Debug, Clone)]
pub struct BatchSpec {
    pub batch_size: usize,
    pub strategy: BatchStrategy,
    pub key: RandomKey,
    pub cache_count: usize,
}

impl BatchSpec {
    pub fn new(batch_size: usize, strategy: BatchStrategy, key: RandomKey) -> Self {
        Self {
            batch_size,
            strategy,
            key,
            cache_count: 1,
        }
    }

    pub fn with_cache(mut self, cache_count: usize) -> Self {
        self.cache_count = cache_count;
        self
    }

    fn validate(&self, dataset: &Dataset) -> Result<()> {
        if self.batch_size == 0 || self.batch_size > dataset.len() {
            return Err(Error::Argument(format!(
                "batch size {} must lie in 1..={}",
                self.batch_size,
                dataset.len()
            )));
        }
        Ok(())
    }
}

/// Position in the batch sequence. Independent states can be advanced concurrently.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BatchState {
    batches: u64,
    epoch: u64,
    pending: VecDeque<usize>,
    position: usize,
    order: Vec<usize>,
}

impl BatchState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Batches emitted so far.
    pub fn batches_emitted(&self) -> u64 {
        self.batches
    }
}

fn permutation(key: &RandomKey, epoch: u64, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut key.fold_in(epoch).rng());
    order
}

/// Advance a batch sequence by one batch.
pub fn next_batch(dataset: &Dataset, spec: &BatchSpec, mut state: BatchState) -> Result<(MiniBatch, BatchState)> {
    spec.validate(dataset)?;
    let n = spec.batch_size;
    let total = dataset.len();
    let rows: Vec<Option<usize>> = match spec.strategy {
        BatchStrategy::DrawReplacement => {
            let mut rng = spec.key.fold_in(state.batches).rng();
            (0..n).map(|_| Some(rng.random_range(0..total))).collect()
        }
        BatchStrategy::ShuffleInEpochs => {
            if state.order.is_empty() || state.position >= total {
                if !state.order.is_empty() {
                    state.epoch += 1;
                }
                state.order = permutation(&spec.key, state.epoch, total);
                state.position = 0;
            }
            let end = (state.position + n).min(total);
            let mut rows: Vec<Option<usize>> = state.order[state.position..end].iter().copied().map(Some).collect();
            rows.resize(n, None);
            state.position = end;
            rows
        }
        BatchStrategy::Shuffle => {
            while state.pending.len() < n {
                let order = permutation(&spec.key, state.epoch, total);
                state.epoch += 1;
                state.pending.extend(order);
            }
            state.pending.drain(..n).map(Some).collect()
        }
    };
    state.batches += 1;
    Ok((dataset.gather(&rows), state))
}

/// A batch sequence bound to a dataset, with a prefetch queue of `cache_count` batches.
#[derive(Debug, Clone)]
pub struct BatchStream {
    dataset: Arc<Dataset>,
    spec: BatchSpec,
    state: BatchState,
    cache: VecDeque<MiniBatch>,
}

impl BatchStream {
    pub fn new(dataset: Arc<Dataset>, spec: BatchSpec) -> Result<Self> {
        spec.validate(&dataset)?;
        Ok(Self {
            dataset,
            spec,
            state: BatchState::new(),
            cache: VecDeque::new(),
        })
    }

    pub fn dataset(&self) -> &Arc<Dataset> {
        &self.dataset
    }

    pub fn spec(&self) -> &BatchSpec {
        &self.spec
    }

    pub fn next_batch(&mut self) -> Result<MiniBatch> {
        if self.cache.is_empty() {
            for _ in 0..self.spec.cache_count.max(1) {
                let state = std::mem::take(&mut self.state);
                let (batch, state) = next_batch(&self.dataset, &self.spec, state)?;
                self.state = state;
                self.cache.push_back(batch);
            }
        }
        Ok(self.cache.pop_front().expect("prefetch queue refilled above"))
    }
}

/// Sequential batches of `n` rows covering the dataset once, tail padded and masked.
pub fn sequential_batches(dataset: &Dataset, n: usize) -> Result<impl Iterator<Item = MiniBatch> + '_> {
    if n == 0 {
        return Err(Error::Argument("batch size must be at least 1".into()));
    }
    let n = n.min(dataset.len());
    let total = dataset.len();
    Ok((0..total.div_ceil(n)).map(move |b| {
        let rows: Vec<Option<usize>> = (b * n..b * n + n).map(|i| (i < total).then_some(i)).collect();
        dataset.gather(&rows)
    }))
}

/// Apply `f` batch-wise across the whole dataset and concatenate its per-row outputs.
///
/// `f` returns one value per batch position; values at masked positions are dropped,
/// so the result has exactly one entry per dataset row, in dataset order.
pub fn full_data_map<T>(
    dataset: &Dataset,
    n: usize,
    mut f: impl FnMut(&MiniBatch) -> Result<Vec<T>>,
) -> Result<Vec<T>> {
    let mut out = Vec::with_capacity(dataset.len());
    for batch in sequential_batches(dataset, n)? {
        let values = f(&batch)?;
        if values.len() != batch.len() {
            return Err(Error::Shape(format!(
                "mapped function returned {} values for a batch of {}",
                values.len(),
                batch.len()
            )));
        }
        out.extend(values.into_iter().zip(batch.mask()).filter(|(_, &m)| m).map(|(v, _)| v));
    }
    Ok(out)
}

/// Fold `f` over sequential batches; `f` is responsible for honoring the mask.
pub fn full_data_reduce<A>(
    dataset: &Dataset,
    n: usize,
    init: A,
    mut f: impl FnMut(A, &MiniBatch) -> Result<A>,
) -> Result<A> {
    let mut acc = init;
    for batch in sequential_batches(dataset, n)? {
        acc = f(acc, &batch)?;
    }
    Ok(acc)
}

/// Sum-reduction of a per-row function over unmasked rows.
pub fn full_data_sum(dataset: &Dataset, n: usize, f: impl Fn(&Observation<'_>) -> f64) -> Result<f64> {
    full_data_reduce(dataset, n, 0.0, |acc, batch| {
        Ok(acc + batch.valid_observations().map(|o| f(&o)).sum::<f64>())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn column(values: &[f64]) -> Dataset {
        Dataset::from_arrays([("y", vec![values.len()], values.to_vec())]).unwrap()
    }

    fn indices(batch: &MiniBatch) -> Vec<usize> {
        batch.indices().iter().flatten().copied().collect()
    }

    #[test]
    fn arrays_define_row_count() {
        let ds = Dataset::from_arrays([("x", vec![100, 4], vec![0.0; 400]), ("y", vec![100], vec![0.0; 100])]).unwrap();
        assert_eq!(ds.len(), 100);
        assert_eq!(ds.observation(3).get("x").len(), 4);
    }

    #[test]
    fn ragged_arrays_are_rejected() {
        let err =
            Dataset::from_arrays([("x", vec![100, 4], vec![0.0; 400]), ("y", vec![99], vec![0.0; 99])]).unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
    }

    #[test]
    fn csv_rows_and_groups() {
        let text = "a,b,target\n1,2,3\n4,5,6\n7,8,9\n";
        let ds = Dataset::from_csv_reader(
            text.as_bytes(),
            &[
                ("x".into(), vec!["a".into(), "b".into()]),
                ("y".into(), vec!["target".into()]),
            ],
        )
        .unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.observation(1).get("x"), &[4.0, 5.0]);
        assert_eq!(ds.observation(2).scalar("y"), 9.0);
    }

    #[test]
    fn csv_bad_cell_reports_location() {
        let text = "a,y\n1,2\n3,oops\n";
        let err = Dataset::from_csv_reader(
            text.as_bytes(),
            &[("x".into(), vec!["a".into()]), ("y".into(), vec!["y".into()])],
        )
        .unwrap_err();
        match err {
            Error::Ingestion { row, column, .. } => {
                assert_eq!(row, 2);
                assert_eq!(column, "y");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn epoch_batches_partition_rows() {
        let ds = column(&[0.0, 1.0, 2.0, 3.0]);
        let spec = BatchSpec::new(2, BatchStrategy::ShuffleInEpochs, RandomKey::new(5));
        let (b1, s) = next_batch(&ds, &spec, BatchState::new()).unwrap();
        let (b2, _) = next_batch(&ds, &spec, s).unwrap();
        let mut all = [indices(&b1), indices(&b2)].concat();
        all.sort_unstable();
        assert_eq!(all, vec![0, 1, 2, 3]);
    }

    #[test]
    fn epoch_tail_is_padded_and_masked() {
        let ds = column(&[0.0, 1.0, 2.0, 3.0, 4.0]);
        let spec = BatchSpec::new(2, BatchStrategy::ShuffleInEpochs, RandomKey::new(5));
        let mut state = BatchState::new();
        let mut batches = Vec::new();
        for _ in 0..3 {
            let (b, s) = next_batch(&ds, &spec, state).unwrap();
            batches.push(b);
            state = s;
        }
        assert_eq!(batches[2].mask(), &[true, false]);
        assert_eq!(batches[2].arrays()[0].row(1), &[0.0]);
        assert_eq!(batches[2].valid_count(), 1);
    }

    #[test]
    fn shuffle_merges_tail_without_padding() {
        let ds = column(&[0.0; 5]);
        let spec = BatchSpec::new(2, BatchStrategy::Shuffle, RandomKey::new(1));
        let mut state = BatchState::new();
        let mut seen = Vec::new();
        for _ in 0..5 {
            let (b, s) = next_batch(&ds, &spec, state).unwrap();
            assert!(b.mask().iter().all(|&m| m));
            seen.extend(indices(&b));
            state = s;
        }
        // 10 rows = exactly two permutations back to back
        let mut first = seen[..5].to_vec();
        let mut second = seen[5..].to_vec();
        first.sort_unstable();
        second.sort_unstable();
        assert_eq!(first, vec![0, 1, 2, 3, 4]);
        assert_eq!(second, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn draw_replacement_frequencies_are_uniform() {
        let ds = column(&[0.0, 1.0, 2.0]);
        let spec = BatchSpec::new(1, BatchStrategy::DrawReplacement, RandomKey::new(77));
        let mut counts = [0usize; 3];
        let mut state = BatchState::new();
        let draws = 30_000;
        for _ in 0..draws {
            let (b, s) = next_batch(&ds, &spec, state).unwrap();
            counts[b.indices()[0].unwrap()] += 1;
            state = s;
        }
        for c in counts {
            let freq = c as f64 / draws as f64;
            assert!((freq - 1.0 / 3.0).abs() < 0.02, "frequency {freq}");
        }
        let expected = draws as f64 / 3.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // 2 dof, p = 0.01
        assert!(chi2 < 9.21, "chi-square {chi2}");
    }

    #[test]
    fn oversized_batch_is_rejected() {
        let ds = column(&[1.0, 2.0]);
        let spec = BatchSpec::new(3, BatchStrategy::Shuffle, RandomKey::new(0));
        assert!(next_batch(&ds, &spec, BatchState::new()).is_err());
        assert!(BatchStream::new(Arc::new(ds), spec).is_err());
    }

    #[test]
    fn cache_depth_does_not_change_sequence() {
        let ds = Arc::new(column(&(0..13).map(f64::from).collect::<Vec<_>>()));
        for strategy in [
            BatchStrategy::DrawReplacement,
            BatchStrategy::Shuffle,
            BatchStrategy::ShuffleInEpochs,
        ] {
            let spec = BatchSpec::new(4, strategy, RandomKey::new(8));
            let mut a = BatchStream::new(Arc::clone(&ds), spec.clone()).unwrap();
            let mut b = BatchStream::new(Arc::clone(&ds), spec.with_cache(7)).unwrap();
            for _ in 0..20 {
                assert_eq!(a.next_batch().unwrap(), b.next_batch().unwrap());
            }
        }
    }

    #[test]
    fn masked_sum_ignores_padding() {
        let ds = column(&[1.0, 2.0, 3.0]);
        let total = full_data_sum(&ds, 2, |o| o.scalar("y")).unwrap();
        assert_eq!(total, 6.0);
    }

    #[test]
    fn identity_map_preserves_order() {
        let values: Vec<f64> = (0..7).map(|i| i as f64 * 1.5).collect();
        let ds = column(&values);
        let out = full_data_map(&ds, 3, |batch| {
            Ok((0..batch.len()).map(|p| batch.observation(p).scalar("y")).collect())
        })
        .unwrap();
        assert_eq!(out, values);
    }
}
