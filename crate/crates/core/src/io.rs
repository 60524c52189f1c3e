//! Sample collection and result serialization.
//!
//! JSONL output writes one object per kept sample,
//! `{"iteration": t, "step_size": ε_t, "variables": {name: [flattened values]}}`.
//! CSV output has a header `iteration,step_size,<columns>` where columns follow
//! [`Layout::column_names`]. Both use shortest round-trip float formatting.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{Layout, ParameterVector};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleMetadata {
    pub sampler: String,
    pub seed: u64,
    pub config_digest: String,
}

/// Kept samples of one chain, in collection order.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleStore {
    layout: Arc<Layout>,
    chain_id: usize,
    metadata: SampleMetadata,
    iterations: Vec<usize>,
    step_sizes: Vec<f64>,
    values: Vec<f64>,
}

impl SampleStore {
    pub fn new(layout: Arc<Layout>, chain_id: usize, metadata: SampleMetadata) -> Self {
        Self {
            layout,
            chain_id,
            metadata,
            iterations: Vec::new(),
            step_sizes: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn chain_id(&self) -> usize {
        self.chain_id
    }

    pub fn metadata(&self) -> &SampleMetadata {
        &self.metadata
    }

    pub fn sample_count(&self) -> usize {
        self.iterations.len()
    }

    pub fn iterations(&self) -> &[usize] {
        &self.iterations
    }

    pub fn step_sizes(&self) -> &[f64] {
        &self.step_sizes
    }

    /// Flat values of sample `i`.
    pub fn sample(&self, i: usize) -> &[f64] {
        let d = self.layout.size();
        &self.values[i * d..(i + 1) * d]
    }

    pub fn samples(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.values.chunks_exact(self.layout.size())
    }

    /// Trace of one flat coordinate.
    pub fn column(&self, index: usize) -> Vec<f64> {
        self.samples().map(|s| s[index]).collect()
    }

    /// Per-sample flattened values of one variable.
    pub fn variable(&self, name: &str) -> Option<Vec<Vec<f64>>> {
        let slot = self.layout.slot(name)?;
        Some(self.samples().map(|s| s[slot.range()].to_vec()).collect())
    }

    pub fn collect(&mut self, theta: &ParameterVector, iteration: usize, step_size: f64) -> Result<()> {
        if **theta.layout() != *self.layout {
            return Err(Error::Store("sample layout differs from the store layout".into()));
        }
        self.push_flat(theta.flatten(), iteration, step_size)
    }

    pub fn push_flat(&mut self, values: &[f64], iteration: usize, step_size: f64) -> Result<()> {
        if values.len() != self.layout.size() {
            return Err(Error::Store(format!(
                "sample has {} values, layout expects {}",
                values.len(),
                self.layout.size()
            )));
        }
        self.iterations.push(iteration);
        self.step_sizes.push(step_size);
        self.values.extend_from_slice(values);
        Ok(())
    }

    /// Concatenate stores of several chains (in the given order) into one.
    pub fn pooled(stores: &[SampleStore]) -> Result<SampleStore> {
        let first = stores.first().ok_or_else(|| Error::Store("no stores to pool".into()))?;
        let mut out = SampleStore::new(Arc::clone(&first.layout), first.chain_id, first.metadata.clone());
        for s in stores {
            if *s.layout != *first.layout {
                return Err(Error::Store("cannot pool stores with different layouts".into()));
            }
            out.iterations.extend_from_slice(&s.iterations);
            out.step_sizes.extend_from_slice(&s.step_sizes);
            out.values.extend_from_slice(&s.values);
        }
        Ok(out)
    }

    pub fn to_results(&self) -> Results {
        let variables = self
            .layout
            .slots()
            .iter()
            .map(|slot| {
                (
                    slot.name().to_string(),
                    self.variable(slot.name()).expect("slot exists"),
                )
            })
            .collect();
        Results {
            sample_count: self.sample_count(),
            samples: Samples {
                variables,
                iteration: self.iterations.clone(),
                step_size: self.step_sizes.clone(),
            },
        }
    }

    pub fn write_jsonl(&self, mut out: impl Write) -> Result<()> {
        for (i, values) in self.samples().enumerate() {
            let mut variables = serde_json::Map::new();
            for slot in self.layout.slots() {
                variables.insert(
                    slot.name().to_string(),
                    serde_json::to_value(&values[slot.range()]).map_err(json_err)?,
                );
            }
            let line = serde_json::json!({
                "iteration": self.iterations[i],
                "step_size": self.step_sizes[i],
                "variables": variables,
            });
            serde_json::to_writer(&mut out, &line).map_err(json_err)?;
            out.write_all(b"\n").map_err(|e| Error::io("<jsonl>", e))?;
        }
        Ok(())
    }

    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["iteration".to_string(), "step_size".to_string()];
        header.extend(self.layout.column_names());
        w.write_record(&header).map_err(csv_err)?;
        for (i, values) in self.samples().enumerate() {
            let mut record = Vec::with_capacity(values.len() + 2);
            record.push(self.iterations[i].to_string());
            record.push(self.step_sizes[i].to_string());
            record.extend(values.iter().map(|v| v.to_string()));
            w.write_record(&record).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn read_jsonl(
        input: impl Read,
        layout: Arc<Layout>,
        chain_id: usize,
        metadata: SampleMetadata,
    ) -> Result<Self> {
        let mut store = SampleStore::new(layout, chain_id, metadata);
        for (n, line) in BufReader::new(input).lines().enumerate() {
            let line = line.map_err(|e| Error::io("<jsonl>", e))?;
            if line.trim().is_empty() {
                continue;
            }
            let record: JsonlRecord =
                serde_json::from_str(&line).map_err(|e| Error::Parse(format!("jsonl line {}: {e}", n + 1)))?;
            let mut values = Vec::with_capacity(store.layout.size());
            for slot in store.layout.slots() {
                let v = record
                    .variables
                    .get(slot.name())
                    .ok_or_else(|| Error::Parse(format!("jsonl line {}: missing variable `{}`", n + 1, slot.name())))?;
                if v.len() != slot.len() {
                    return Err(Error::Parse(format!(
                        "jsonl line {}: variable `{}` has {} values, expected {}",
                        n + 1,
                        slot.name(),
                        v.len(),
                        slot.len()
                    )));
                }
                values.extend_from_slice(v);
            }
            store.push_flat(&values, record.iteration, record.step_size)?;
        }
        Ok(store)
    }

    pub fn read_csv(input: impl Read, layout: Arc<Layout>, chain_id: usize, metadata: SampleMetadata) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(input);
        let headers = rdr.headers().map_err(csv_err)?.clone();
        let mut expected = vec!["iteration".to_string(), "step_size".to_string()];
        expected.extend(layout.column_names());
        if headers.iter().collect::<Vec<_>>() != expected.iter().map(String::as_str).collect::<Vec<_>>() {
            return Err(Error::Parse("csv header does not match the layout".into()));
        }
        let mut store = SampleStore::new(layout, chain_id, metadata);
        for (r, record) in rdr.records().enumerate() {
            let record = record.map_err(csv_err)?;
            let parse = |c: usize| -> Result<f64> {
                record[c].parse::<f64>().map_err(|_| Error::Ingestion {
                    row: r + 1,
                    column: headers[c].to_string(),
                    message: format!("cannot parse `{}`", &record[c]),
                })
            };
            let iteration: usize = record[0].parse().map_err(|_| Error::Ingestion {
                row: r + 1,
                column: "iteration".into(),
                message: format!("cannot parse `{}`", &record[0]),
            })?;
            let step_size = parse(1)?;
            let values = (2..record.len()).map(parse).collect::<Result<Vec<_>>>()?;
            store.push_flat(&values, iteration, step_size)?;
        }
        Ok(store)
    }
}

#[derive(Deserialize)]
struct JsonlRecord {
    iteration: usize,
    step_size: f64,
    variables: BTreeMap<String, Vec<f64>>,
}

fn json_err(e: serde_json::Error) -> Error {
    Error::Parse(e.to_string())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Parse(e.to_string())
}

/// Append one sample to a store.
pub fn collect_sample(
    store: &mut SampleStore,
    theta: &ParameterVector,
    iteration: usize,
    step_size: f64,
) -> Result<()> {
    store.collect(theta, iteration, step_size)
}

/// In-memory results, accessed as `results.samples.variables["w"]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Results {
    pub sample_count: usize,
    pub samples: Samples,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Samples {
    /// Per-sample flattened values of each variable.
    pub variables: BTreeMap<String, Vec<Vec<f64>>>,
    pub iteration: Vec<usize>,
    pub step_size: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Memory,
    Jsonl,
    Csv,
}

impl OutputFormat {
    pub fn extension(self) -> Option<&'static str> {
        match self {
            OutputFormat::Memory => None,
            OutputFormat::Jsonl => Some("jsonl"),
            OutputFormat::Csv => Some("csv"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Finalized {
    Memory(Results),
    Written(PathBuf),
}

pub fn finalize_results(store: &SampleStore, format: OutputFormat, path: Option<&Path>) -> Result<Finalized> {
    let open = |path: Option<&Path>| -> Result<(PathBuf, BufWriter<File>)> {
        let path = path.ok_or_else(|| Error::Argument("file output needs a path".into()))?;
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        Ok((path.to_path_buf(), BufWriter::new(file)))
    };
    match format {
        OutputFormat::Memory => Ok(Finalized::Memory(store.to_results())),
        OutputFormat::Jsonl => {
            let (path, mut w) = open(path)?;
            store.write_jsonl(&mut w)?;
            w.flush().map_err(|e| Error::io(&path, e))?;
            Ok(Finalized::Written(path))
        }
        OutputFormat::Csv => {
            let (path, mut w) = open(path)?;
            store.write_csv(&mut w)?;
            w.flush().map_err(|e| Error::io(&path, e))?;
            Ok(Finalized::Written(path))
        }
    }
}

/// Read a samples file previously written by [`finalize_results`].
pub fn read_samples(path: &Path, format: OutputFormat, layout: Arc<Layout>, chain_id: usize) -> Result<SampleStore> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    match format {
        OutputFormat::Jsonl => SampleStore::read_jsonl(file, layout, chain_id, SampleMetadata::default()),
        OutputFormat::Csv => SampleStore::read_csv(file, layout, chain_id, SampleMetadata::default()),
        OutputFormat::Memory => Err(Error::Argument("memory results have no file to read".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn layout() -> Arc<Layout> {
        Layout::new([("w", vec![2]), ("log_sigma", vec![])]).unwrap()
    }

    fn pv(values: [f64; 3]) -> ParameterVector {
        ParameterVector::structure(layout(), values.to_vec()).unwrap()
    }

    #[test]
    fn collect_counts_and_layout_check() {
        let mut store = SampleStore::new(layout(), 0, SampleMetadata::default());
        collect_sample(&mut store, &pv([1.0, 2.0, 3.0]), 5, 0.1).unwrap();
        assert_eq!(store.sample_count(), 1);
        let other = ParameterVector::zeros(Layout::new([("w", vec![3])]).unwrap());
        assert!(matches!(store.collect(&other, 6, 0.1), Err(Error::Store(_))));
    }

    #[test]
    fn thousand_collects_share_length() {
        let mut store = SampleStore::new(layout(), 0, SampleMetadata::default());
        for i in 0..1000 {
            store.collect(&pv([i as f64, 0.0, 1.0]), i, 0.01).unwrap();
        }
        let results = store.to_results();
        assert_eq!(results.sample_count, 1000);
        assert_eq!(results.samples.variables["w"].len(), 1000);
        assert_eq!(results.samples.variables["log_sigma"].len(), 1000);
        assert_eq!(results.samples.variables["w"][7], vec![7.0, 0.0]);
    }

    #[test]
    fn empty_csv_has_header_only() {
        let store = SampleStore::new(
            Layout::new([("a", vec![2, 1]), ("b", vec![])]).unwrap(),
            0,
            SampleMetadata::default(),
        );
        let mut out = Vec::new();
        store.write_csv(&mut out).unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "iteration,step_size,\"a[0,0]\",\"a[1,0]\",b\n"
        );
    }

    #[test]
    fn unwritable_path_is_io_error() {
        let store = SampleStore::new(layout(), 0, SampleMetadata::default());
        let err =
            finalize_results(&store, OutputFormat::Jsonl, Some(Path::new("/nonexistent/dir/x.jsonl"))).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn jsonl_line_shape() {
        let mut store = SampleStore::new(layout(), 0, SampleMetadata::default());
        store.collect(&pv([0.1, -2.5, 3.0]), 42, 0.001).unwrap();
        let mut out = Vec::new();
        store.write_jsonl(&mut out).unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "{\"iteration\":42,\"step_size\":0.001,\"variables\":{\"w\":[0.1,-2.5],\"log_sigma\":[3.0]}}\n"
        );
    }

    proptest! {
        #[test]
        fn serialization_round_trips_exactly(
            rows in proptest::collection::vec(proptest::collection::vec(-1e300f64..1e300, 3), 0..40),
            small in -1e-300f64..1e-300,
        ) {
            let mut store = SampleStore::new(layout(), 0, SampleMetadata::default());
            for (i, r) in rows.iter().enumerate() {
                store.push_flat(&[r[0], r[1] * 1e-5, small], i * 3, 1.0 / (i + 1) as f64).unwrap();
            }
            let mut jsonl = Vec::new();
            store.write_jsonl(&mut jsonl).unwrap();
            let back = SampleStore::read_jsonl(&jsonl[..], layout(), 0, SampleMetadata::default()).unwrap();
            prop_assert_eq!(&back, &store);

            let mut csv_out = Vec::new();
            store.write_csv(&mut csv_out).unwrap();
            let back = SampleStore::read_csv(&csv_out[..], layout(), 0, SampleMetadata::default()).unwrap();
            prop_assert_eq!(&back, &store);
        }
    }
}
