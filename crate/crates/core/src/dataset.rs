//! Activation datasets: loading, validation, stratified splitting and
//! open-set label remapping.
//!
//! The on-disk interchange is a comma-delimited activation file with header
//! `sample_id,label,split,a_0,...,a_{D-1}` plus a JSON manifest carrying
//! class names, the vector dimension and (optionally) the known-class list.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{OsrError, Result};

/// Partition tag carried by every sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
    Unassigned,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
            Split::Unassigned => "unassigned",
        }
    }

    pub fn parse(s: &str) -> Option<Split> {
        match s {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            "unassigned" => Some(Split::Unassigned),
            _ => None,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One activation record: id, class label, split tag and the vector itself.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub sample_id: String,
    pub label: usize,
    pub activations: Vec<f64>,
    pub split: Split,
}

/// A validated matrix of per-sample activation vectors with labels and
/// split tags. Immutable after load/split; safe for concurrent reads.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationDataset {
    samples: Vec<Sample>,
    class_names: Vec<String>,
    dim: usize,
}

/// Sidecar JSON document describing an activation file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub class_names: Vec<String>,
    pub dim: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub known_classes: Option<Vec<String>>,
}

impl ActivationDataset {
    /// Assemble a dataset, checking every invariant: vector length, finiteness,
    /// label range, id uniqueness and class-name validity.
    pub fn new(samples: Vec<Sample>, class_names: Vec<String>, dim: usize) -> Result<Self> {
        validate_class_names(&class_names)?;
        let mut seen = HashSet::with_capacity(samples.len());
        for (i, s) in samples.iter().enumerate() {
            if s.activations.len() != dim {
                return Err(OsrError::InvalidDataset(format!(
                    "sample {} ({:?}) has {} activations, expected {}",
                    i,
                    s.sample_id,
                    s.activations.len(),
                    dim
                )));
            }
            if s.activations.iter().any(|a| !a.is_finite()) {
                return Err(OsrError::InvalidDataset(format!(
                    "sample {} ({:?}) contains a non-finite activation",
                    i, s.sample_id
                )));
            }
            if s.label >= class_names.len() {
                return Err(OsrError::LabelOutOfRange {
                    index: i,
                    label: s.label,
                    limit: class_names.len(),
                });
            }
            if !seen.insert(s.sample_id.as_str()) {
                return Err(OsrError::InvalidDataset(format!(
                    "duplicate sample_id {:?} (sample {})",
                    s.sample_id, i
                )));
            }
        }
        Ok(ActivationDataset {
            samples,
            class_names,
            dim,
        })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn class_count(&self) -> usize {
        self.class_names.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn manifest(&self) -> Manifest {
        Manifest {
            class_names: self.class_names.clone(),
            dim: self.dim,
            known_classes: None,
        }
    }

    /// Indices of samples carrying the given split tag, in row order.
    pub fn split_indices(&self, split: Split) -> Vec<usize> {
        self.samples
            .iter()
            .enumerate()
            .filter(|(_, s)| s.split == split)
            .map(|(i, _)| i)
            .collect()
    }

    /// Per-class sample counts.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.class_names.len()];
        for s in &self.samples {
            counts[s.label] += 1;
        }
        counts
    }
}

fn validate_class_names(class_names: &[String]) -> Result<()> {
    if class_names.is_empty() {
        return Err(OsrError::InvalidDataset("class_names is empty".into()));
    }
    let mut seen = HashSet::new();
    for name in class_names {
        if name.is_empty() {
            return Err(OsrError::InvalidDataset("empty class name".into()));
        }
        if !seen.insert(name.as_str()) {
            return Err(OsrError::InvalidDataset(format!(
                "duplicate class name {name:?}"
            )));
        }
    }
    Ok(())
}

/// Read a manifest JSON document.
pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let text = std::fs::read_to_string(path)?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    validate_class_names(&manifest.class_names)?;
    Ok(manifest)
}

/// Write a manifest JSON document.
pub fn write_manifest(manifest: &Manifest, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(manifest)?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

/// Load an activation file against its manifest.
///
/// Every malformed condition (bad header, wrong vector length, non-finite
/// value, duplicate id, out-of-range label, bad split tag) is reported with
/// the 1-based file line it occurred on. Row order is preserved.
pub fn load_dataset(csv_path: &Path, manifest: &Manifest) -> Result<ActivationDataset> {
    let file = std::fs::File::open(csv_path)?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(file);

    let dim = manifest.dim;
    let expected_header = header_fields(dim);
    {
        let headers = reader.headers().map_err(|e| OsrError::DataFormat {
            line: 1,
            message: format!("unreadable header: {e}"),
        })?;
        let got: Vec<&str> = headers.iter().collect();
        if got != expected_header {
            return Err(OsrError::DataFormat {
                line: 1,
                message: format!(
                    "malformed header: expected {:?}..., got {:?}...",
                    &expected_header[..expected_header.len().min(4)],
                    &got[..got.len().min(4)]
                ),
            });
        }
    }

    let class_count = manifest.class_names.len();
    let mut samples = Vec::new();
    let mut seen_ids: HashSet<String> = HashSet::new();
    for (row_idx, record) in reader.records().enumerate() {
        let line = row_idx + 2; // header occupies line 1
        let record = record.map_err(|e| OsrError::DataFormat {
            line,
            message: format!("unparseable row: {e}"),
        })?;
        if record.len() != dim + 3 {
            return Err(OsrError::DataFormat {
                line,
                message: format!(
                    "row has {} fields, expected {} (sample_id,label,split + {} activations)",
                    record.len(),
                    dim + 3,
                    dim
                ),
            });
        }
        let sample_id = record[0].to_string();
        if sample_id.is_empty() {
            return Err(OsrError::DataFormat {
                line,
                message: "empty sample_id".into(),
            });
        }
        if !seen_ids.insert(sample_id.clone()) {
            return Err(OsrError::DataFormat {
                line,
                message: format!("duplicate sample_id {sample_id:?}"),
            });
        }
        let label: usize = record[1].parse().map_err(|_| OsrError::DataFormat {
            line,
            message: format!("unparseable label {:?}", &record[1]),
        })?;
        if label >= class_count {
            return Err(OsrError::DataFormat {
                line,
                message: format!("unknown label {label} (dataset has {class_count} classes)"),
            });
        }
        let split = Split::parse(&record[2]).ok_or_else(|| OsrError::DataFormat {
            line,
            message: format!("invalid split tag {:?}", &record[2]),
        })?;
        let mut activations = Vec::with_capacity(dim);
        for k in 0..dim {
            let raw = &record[3 + k];
            let value: f64 = raw.parse().map_err(|_| OsrError::DataFormat {
                line,
                message: format!("unparseable activation a_{k} = {raw:?}"),
            })?;
            if !value.is_finite() {
                return Err(OsrError::DataFormat {
                    line,
                    message: format!("non-finite activation a_{k} = {raw:?}"),
                });
            }
            activations.push(value);
        }
        samples.push(Sample {
            sample_id,
            label,
            activations,
            split,
        });
    }

    ActivationDataset::new(samples, manifest.class_names.clone(), dim)
}

/// Write an activation file. Floats are serialized with full round-trip
/// precision so that `load(write(ds))` reproduces the dataset exactly.
pub fn write_dataset(ds: &ActivationDataset, csv_path: &Path) -> Result<()> {
    let file = std::fs::File::create(csv_path)?;
    let mut writer = csv::WriterBuilder::new()
        .quote_style(csv::QuoteStyle::Never)
        .from_writer(file);
    writer.write_record(header_fields(ds.dim)).map_err(csv_io)?;
    let mut row: Vec<String> = Vec::with_capacity(ds.dim + 3);
    for s in &ds.samples {
        row.clear();
        row.push(s.sample_id.clone());
        row.push(s.label.to_string());
        row.push(s.split.to_string());
        for a in &s.activations {
            row.push(format_float(*a));
        }
        writer.write_record(&row).map_err(csv_io)?;
    }
    writer.flush()?;
    Ok(())
}

/// Shortest representation that parses back to the identical f64.
pub(crate) fn format_float(x: f64) -> String {
    format!("{x}")
}

fn csv_io(e: csv::Error) -> OsrError {
    OsrError::InvalidDataset(format!("csv write failed: {e}"))
}

fn header_fields(dim: usize) -> Vec<String> {
    let mut fields = vec![
        "sample_id".to_string(),
        "label".to_string(),
        "split".to_string(),
    ];
    fields.extend((0..dim).map(|k| format!("a_{k}")));
    fields
}

/// Assign train/val/test tags per class with largest-remainder rounding.
///
/// Per class the target counts are `floor(n_c * r)` with leftovers assigned
/// by descending remainder (ties resolved in order train, val, test).
/// Shuffling within a class is a seeded Fisher-Yates permutation, so the
/// assignment is a deterministic function of `(ds, ratios, seed)`.
pub fn split_dataset(
    ds: &ActivationDataset,
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<ActivationDataset> {
    let r = [ratios.0, ratios.1, ratios.2];
    if r.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(OsrError::InvalidConfig(
            "split ratios must be nonnegative finite reals".into(),
        ));
    }
    let sum: f64 = r.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(OsrError::InvalidConfig(format!(
            "split ratios sum to {sum}, expected 1"
        )));
    }

    // Row indices per class, in dataset order.
    let class_count = ds.class_count();
    let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); class_count];
    for (i, s) in ds.samples.iter().enumerate() {
        per_class[s.label].push(i);
    }
    for (c, rows) in per_class.iter().enumerate() {
        if rows.is_empty() {
            return Err(OsrError::EmptyClass {
                class: ds.class_names[c].clone(),
            });
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tags: Vec<Split> = vec![Split::Unassigned; ds.len()];
    for rows in &mut per_class {
        fisher_yates(rows, &mut rng);
        let counts = largest_remainder_counts(rows.len(), &r);
        let mut cursor = 0usize;
        for (k, split) in [Split::Train, Split::Val, Split::Test].iter().enumerate() {
            for _ in 0..counts[k] {
                tags[rows[cursor]] = *split;
                cursor += 1;
            }
        }
        debug_assert_eq!(cursor, rows.len());
    }

    let samples = ds
        .samples
        .iter()
        .enumerate()
        .map(|(i, s)| Sample {
            split: tags[i],
            ..s.clone()
        })
        .collect();
    ActivationDataset::new(samples, ds.class_names.clone(), ds.dim)
}

/// Integer targets per split: floors of `n * r`, then one leftover each to
/// the splits with the largest remainders (train before val before test on
/// ties).
fn largest_remainder_counts(n: usize, ratios: &[f64; 3]) -> [usize; 3] {
    let mut counts = [0usize; 3];
    let mut remainders = [0f64; 3];
    let mut assigned = 0usize;
    for k in 0..3 {
        let exact = n as f64 * ratios[k];
        let floor = exact.floor() as usize;
        counts[k] = floor;
        remainders[k] = exact - floor as f64;
        assigned += floor;
    }
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| remainders[b].partial_cmp(&remainders[a]).unwrap());
    let mut leftover = n - assigned;
    for &k in &order {
        if leftover == 0 {
            break;
        }
        counts[k] += 1;
        leftover -= 1;
    }
    counts
}

fn fisher_yates(items: &mut [usize], rng: &mut ChaCha8Rng) {
    for i in (1..items.len()).rev() {
        let j = rng.random_range(0..=i);
        items.swap(i, j);
    }
}

/// Open-set remapping of a dataset: the named known classes become view
/// labels `1..=K_known` (in the given name order) and every other class
/// collapses to the reserved unknown label `0`.
#[derive(Debug, Clone)]
pub struct OpenSetView<'a> {
    base: &'a ActivationDataset,
    known_class_names: Vec<String>,
    /// base label -> view label; 0 is unknown.
    label_map: Vec<usize>,
    known_count: usize,
}

impl<'a> OpenSetView<'a> {
    pub fn base(&self) -> &'a ActivationDataset {
        self.base
    }

    pub fn known_class_names(&self) -> &[String] {
        &self.known_class_names
    }

    pub fn known_count(&self) -> usize {
        self.known_count
    }

    /// Label names over the view space: slot 0 is "unknown".
    pub fn label_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.known_count + 1);
        names.push("unknown".to_string());
        names.extend(self.known_class_names.iter().cloned());
        names
    }

    /// View label of a base-dataset label.
    pub fn map_label(&self, base_label: usize) -> usize {
        self.label_map[base_label]
    }

    /// View label of the sample at a dataset row.
    pub fn view_label(&self, index: usize) -> usize {
        self.label_map[self.base.samples()[index].label]
    }

    /// View labels for every sample, in row order.
    pub fn view_labels(&self) -> Vec<usize> {
        self.base
            .samples()
            .iter()
            .map(|s| self.label_map[s.label])
            .collect()
    }

    /// All sample indices in a split, knowns and unknowns alike.
    pub fn split_indices(&self, split: Split) -> Vec<usize> {
        self.base.split_indices(split)
    }

    /// Calibration rows for a split: only known-class samples, yielded as
    /// `(row index, known-class index in 0..K_known)`.
    pub fn known_indices(&self, split: Split) -> Vec<(usize, usize)> {
        self.base
            .samples()
            .iter()
            .enumerate()
            .filter(|(_, s)| s.split == split)
            .filter_map(|(i, s)| {
                let view = self.label_map[s.label];
                (view > 0).then(|| (i, view - 1))
            })
            .collect()
    }
}

/// Build an [`OpenSetView`] over a dataset.
///
/// Requires at least two known classes, all present in the dataset. Sample
/// count, ids and activation vectors are untouched; only labels change.
pub fn apply_openset_protocol<'a>(
    ds: &'a ActivationDataset,
    known_class_names: &[String],
) -> Result<OpenSetView<'a>> {
    if known_class_names.len() < 2 {
        return Err(OsrError::InvalidConfig(format!(
            "open-set protocol needs at least 2 known classes, got {}",
            known_class_names.len()
        )));
    }
    let mut label_map = vec![0usize; ds.class_count()];
    let mut seen = HashSet::new();
    for (k, name) in known_class_names.iter().enumerate() {
        if !seen.insert(name.as_str()) {
            return Err(OsrError::InvalidConfig(format!(
                "duplicate known class {name:?}"
            )));
        }
        let base = ds
            .class_names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| {
                OsrError::InvalidConfig(format!("unknown class name {name:?} in known list"))
            })?;
        label_map[base] = k + 1;
    }
    Ok(OpenSetView {
        base: ds,
        known_class_names: known_class_names.to_vec(),
        label_map,
        known_count: known_class_names.len(),
    })
}
