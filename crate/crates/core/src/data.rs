//! Tabular ingestion, vocabularies and integer encoding of categorical features.
//!
//! Every feature ends up as a column of codes into a per-feature vocabulary.
//! Continuous columns are discretized by equal-frequency binning first; their
//! vocabulary entries are machine-readable interval labels such as
//! `"(2.0,3.5]"`, so a stored vocabulary is enough to bin new data the same
//! way.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{FirdError, Result};

/// Code used for a value that is absent from the feature vocabulary.
pub const UNK: u32 = u32::MAX;

/// Default number of quantile bins for a continuous feature.
pub const DEFAULT_BINS: usize = 10;

/// Vocabulary entry for values outside a feature's whitelist.
pub const OTHER_VALUE: &str = "<other>";

/// Vocabulary entry for the dedicated missing-value bin of a continuous feature.
pub const NAN_LABEL: &str = "NaN";

#[derive(Debug, Clone, PartialEq)]
pub enum ColumnData {
    Categorical(Vec<String>),
    Continuous(Vec<f64>),
}

impl ColumnData {
    pub fn len(&self) -> usize {
        match self {
            ColumnData::Categorical(v) => v.len(),
            ColumnData::Continuous(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub name: String,
    pub data: ColumnData,
}

/// Named, typed columns of equal length.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    columns: Vec<Column>,
    n_rows: usize,
}

impl RawTable {
    pub fn new(columns: Vec<Column>) -> Result<Self> {
        let n_rows = columns.first().map_or(0, |c| c.data.len());
        let mut seen = HashSet::new();
        for c in &columns {
            if !seen.insert(c.name.as_str()) {
                return Err(FirdError::Schema(format!(
                    "duplicate column name '{}'",
                    c.name
                )));
            }
            if c.data.len() != n_rows {
                return Err(FirdError::Schema(format!(
                    "column '{}' has {} entries, expected {}",
                    c.name,
                    c.data.len(),
                    n_rows
                )));
            }
        }
        Ok(RawTable { columns, n_rows })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.columns.iter().find(|c| c.name == name)
    }

    /// Cells of a column as strings, whatever its type.
    pub fn column_strings(&self, name: &str) -> Option<Vec<String>> {
        self.column(name).map(|c| match &c.data {
            ColumnData::Categorical(v) => v.clone(),
            ColumnData::Continuous(v) => v.iter().map(|x| format!("{x}")).collect(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Categorical,
    Continuous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub kind: FeatureKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bins: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub whitelist: Option<Vec<String>>,
}

impl FeatureSpec {
    pub fn categorical(name: impl Into<String>) -> Self {
        FeatureSpec {
            name: name.into(),
            kind: FeatureKind::Categorical,
            bins: None,
            whitelist: None,
        }
    }

    pub fn continuous(name: impl Into<String>, bins: usize) -> Self {
        FeatureSpec {
            name: name.into(),
            kind: FeatureKind::Continuous,
            bins: Some(bins),
            whitelist: None,
        }
    }

    pub fn bin_count(&self) -> usize {
        self.bins.unwrap_or(DEFAULT_BINS)
    }
}

/// Which columns to encode and how. The optional label column is kept out of
/// the encoding and only used for evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub features: Vec<FeatureSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

impl FeatureSchema {
    pub fn new(features: Vec<FeatureSpec>, label: Option<String>) -> Result<Self> {
        let schema = FeatureSchema { features, label };
        schema.validate()?;
        Ok(schema)
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| FirdError::io(path, e))?;
        let schema: FeatureSchema = serde_json::from_str(&text)?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn to_json_file(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| FirdError::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        if self.features.is_empty() {
            return Err(FirdError::Schema("schema declares no features".into()));
        }
        let mut seen = HashSet::new();
        for f in &self.features {
            if !seen.insert(f.name.as_str()) {
                return Err(FirdError::Schema(format!("duplicate feature '{}'", f.name)));
            }
            if f.kind == FeatureKind::Continuous && f.bin_count() < 2 {
                return Err(FirdError::Schema(format!(
                    "feature '{}': bin count must be at least 2",
                    f.name
                )));
            }
        }
        if let Some(label) = &self.label {
            if seen.contains(label.as_str()) {
                return Err(FirdError::Schema(format!(
                    "label column '{label}' is also declared as a feature"
                )));
            }
        }
        Ok(())
    }

    pub fn names(&self) -> Vec<String> {
        self.features.iter().map(|f| f.name.clone()).collect()
    }

    /// Every column except `label` as a continuous feature with `bins` bins.
    pub fn all_continuous(columns: &[String], label: Option<&str>, bins: usize) -> Result<Self> {
        let features = columns
            .iter()
            .filter(|c| Some(c.as_str()) != label)
            .map(|c| FeatureSpec::continuous(c.clone(), bins))
            .collect();
        FeatureSchema::new(features, label.map(str::to_string))
    }
}

fn parse_float(cell: &str) -> Option<f64> {
    let t = cell.trim();
    if t.is_empty() || t.eq_ignore_ascii_case("nan") || t.eq_ignore_ascii_case("na") {
        return Some(f64::NAN);
    }
    t.parse::<f64>().ok()
}

/// Column names from the header row of a CSV file.
pub fn read_header(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| FirdError::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(file);
    let header = rdr.headers().map_err(|e| FirdError::Parse {
        line: 1,
        message: e.to_string(),
    })?;
    Ok(header.iter().map(|s| s.trim().to_string()).collect())
}

/// Reads a CSV file with a header row into typed columns following `schema`.
///
/// Columns not mentioned by the schema are ignored. Empty cells, `NaN` and
/// `NA` in continuous columns become NaN.
pub fn load_csv(path: impl AsRef<Path>, schema: &FeatureSchema) -> Result<RawTable> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| FirdError::io(path, e))?;
    read_csv(file, schema)
}

pub fn read_csv<R: Read>(reader: R, schema: &FeatureSchema) -> Result<RawTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| FirdError::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .iter()
        .map(|s| s.trim().to_string())
        .collect();

    let index_of = |name: &str| -> Result<usize> {
        header.iter().position(|h| h == name).ok_or_else(|| {
            FirdError::Schema(format!("column '{name}' is missing from the CSV header"))
        })
    };
    let feature_idx: Vec<usize> = schema
        .features
        .iter()
        .map(|f| index_of(&f.name))
        .collect::<Result<_>>()?;
    let label_idx = match &schema.label {
        Some(l) => Some(index_of(l)?),
        None => None,
    };

    let mut cat: Vec<Vec<String>> = vec![Vec::new(); schema.features.len()];
    let mut cont: Vec<Vec<f64>> = vec![Vec::new(); schema.features.len()];
    let mut labels = Vec::new();

    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| FirdError::Parse {
            line: e.position().map_or(i as u64 + 2, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(i as u64 + 2, |p| p.line());
        if rec.len() != header.len() {
            return Err(FirdError::Parse {
                line,
                message: format!("expected {} fields, found {}", header.len(), rec.len()),
            });
        }
        for (k, (spec, &idx)) in schema.features.iter().zip(&feature_idx).enumerate() {
            let cell = &rec[idx];
            match spec.kind {
                FeatureKind::Categorical => cat[k].push(cell.to_string()),
                FeatureKind::Continuous => {
                    let v = parse_float(cell).ok_or_else(|| FirdError::Parse {
                        line,
                        message: format!("column '{}': '{}' is not a number", spec.name, cell),
                    })?;
                    cont[k].push(v);
                }
            }
        }
        if let Some(idx) = label_idx {
            labels.push(rec[idx].to_string());
        }
    }

    let mut columns = Vec::with_capacity(schema.features.len() + 1);
    for (k, spec) in schema.features.iter().enumerate() {
        let data = match spec.kind {
            FeatureKind::Categorical => ColumnData::Categorical(std::mem::take(&mut cat[k])),
            FeatureKind::Continuous => ColumnData::Continuous(std::mem::take(&mut cont[k])),
        };
        columns.push(Column {
            name: spec.name.clone(),
            data,
        });
    }
    if let Some(l) = &schema.label {
        columns.push(Column {
            name: l.clone(),
            data: ColumnData::Categorical(labels),
        });
    }
    RawTable::new(columns)
}

/// Cut points of an equal-frequency discretization.
///
/// Bin `j` covers `(edges[j-1], edges[j]]`, with open ends at the extremes.
/// Missing values get their own bin after the finite ones when `nan_bin` is set.
#[derive(Debug, Clone, PartialEq)]
pub struct Binning {
    edges: Vec<f64>,
    nan_bin: bool,
}

impl Binning {
    pub fn fit(values: &[f64], bin_count: usize) -> Result<Self> {
        if bin_count < 2 {
            return Err(FirdError::InvalidArgument(format!(
                "bin count must be at least 2, got {bin_count}"
            )));
        }
        let mut sorted: Vec<f64> = values.iter().copied().filter(|v| !v.is_nan()).collect();
        if sorted.is_empty() {
            return Err(FirdError::InvalidArgument(
                "cannot bin a column without finite values".into(),
            ));
        }
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let max = sorted[n - 1];
        let mut edges: Vec<f64> = Vec::with_capacity(bin_count - 1);
        for j in 1..bin_count {
            let pos = (j * n) / bin_count;
            if pos == 0 {
                continue;
            }
            let e = sorted[pos - 1];
            // A cut at the maximum would leave the last bin empty.
            if e >= max {
                continue;
            }
            if edges.last().is_none_or(|&last| e > last) {
                edges.push(e);
            }
        }
        let nan_bin = values.iter().any(|v| v.is_nan());
        Ok(Binning { edges, nan_bin })
    }

    /// Number of bins, including the missing-value bin.
    pub fn n_bins(&self) -> usize {
        self.edges.len() + 1 + usize::from(self.nan_bin)
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    /// Bin index of a value, or `None` for NaN without a missing-value bin.
    pub fn code(&self, v: f64) -> Option<u32> {
        if v.is_nan() {
            return self.nan_bin.then_some((self.edges.len() + 1) as u32);
        }
        Some(self.edges.partition_point(|&e| e < v) as u32)
    }

    pub fn labels(&self) -> Vec<String> {
        let k = self.edges.len() + 1;
        let mut out = Vec::with_capacity(self.n_bins());
        for j in 0..k {
            let lo = if j == 0 {
                f64::NEG_INFINITY
            } else {
                self.edges[j - 1]
            };
            let hi = if j + 1 == k {
                f64::INFINITY
            } else {
                self.edges[j]
            };
            out.push(format!("({lo:?},{hi:?}]"));
        }
        if self.nan_bin {
            out.push(NAN_LABEL.to_string());
        }
        out
    }

    /// Rebuilds a binning from the labels produced by [`Binning::labels`].
    pub fn from_labels(labels: &[String]) -> Result<Self> {
        let bad = |l: &str| FirdError::Schema(format!("'{l}' is not a bin label"));
        let mut edges = Vec::new();
        let mut nan_bin = false;
        let mut finite = 0usize;
        for l in labels {
            if l == NAN_LABEL {
                nan_bin = true;
                continue;
            }
            let inner = l
                .strip_prefix('(')
                .and_then(|s| s.strip_suffix(']'))
                .ok_or_else(|| bad(l))?;
            let (_, hi) = inner.split_once(',').ok_or_else(|| bad(l))?;
            let hi: f64 = hi.parse().map_err(|_| bad(l))?;
            if hi.is_finite() {
                edges.push(hi);
            }
            finite += 1;
        }
        if finite != edges.len() + 1 {
            return Err(FirdError::Schema("inconsistent bin labels".into()));
        }
        Ok(Binning { edges, nan_bin })
    }
}

/// Equal-frequency discretization of a numeric column.
///
/// Returns the per-row bin codes and the bin labels (the feature vocabulary).
pub fn bin_continuous(values: &[f64], bin_count: usize) -> Result<(Vec<u32>, Vec<String>)> {
    let binning = Binning::fit(values, bin_count)?;
    let codes = values
        .iter()
        .map(|&v| {
            binning
                .code(v)
                .expect("fitted binning covers its own values")
        })
        .collect();
    Ok((codes, binning.labels()))
}

/// N rows by M features of vocabulary codes, stored row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedDataset {
    codes: Vec<u32>,
    vocab: Vec<Vec<String>>,
    names: Vec<String>,
    n_rows: usize,
}

impl EncodedDataset {
    /// Builds a dataset from row-major codes. Codes must index into `vocab`
    /// or equal [`UNK`].
    pub fn new(codes: Vec<u32>, vocab: Vec<Vec<String>>, names: Vec<String>) -> Result<Self> {
        let m = vocab.len();
        if m == 0 {
            return Err(FirdError::Dimension(
                "dataset needs at least one feature".into(),
            ));
        }
        if names.len() != m {
            return Err(FirdError::Dimension(format!(
                "{} feature names for {} vocabularies",
                names.len(),
                m
            )));
        }
        if codes.len() % m != 0 {
            return Err(FirdError::Dimension(format!(
                "{} codes is not a multiple of {} features",
                codes.len(),
                m
            )));
        }
        for (j, v) in vocab.iter().enumerate() {
            if v.is_empty() {
                return Err(FirdError::Dimension(format!(
                    "feature {j} has an empty vocabulary"
                )));
            }
            let distinct: HashSet<&String> = v.iter().collect();
            if distinct.len() != v.len() {
                return Err(FirdError::Schema(format!(
                    "feature {j} has duplicate vocabulary entries"
                )));
            }
        }
        let n_rows = codes.len() / m;
        for (i, row) in codes.chunks(m).enumerate() {
            for (j, &c) in row.iter().enumerate() {
                if c != UNK && c as usize >= vocab[j].len() {
                    return Err(FirdError::Dimension(format!(
                        "row {i} feature {j}: code {c} outside vocabulary of size {}",
                        vocab[j].len()
                    )));
                }
            }
        }
        Ok(EncodedDataset {
            codes,
            vocab,
            names,
            n_rows,
        })
    }

    /// Dataset whose vocabularies are the placeholder values `v0..v{D-1}`.
    pub fn from_codes(codes: Vec<u32>, dims: &[usize]) -> Result<Self> {
        let vocab = dims
            .iter()
            .map(|&d| (0..d).map(|i| format!("v{i}")).collect())
            .collect();
        let names = (0..dims.len()).map(|j| format!("f{j}")).collect();
        Self::new(codes, vocab, names)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_features(&self) -> usize {
        self.vocab.len()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.vocab.iter().map(Vec::len).collect()
    }

    pub fn vocab(&self) -> &[Vec<String>] {
        &self.vocab
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn codes(&self) -> &[u32] {
        &self.codes
    }

    #[inline]
    pub fn row(&self, n: usize) -> &[u32] {
        let m = self.vocab.len();
        &self.codes[n * m..(n + 1) * m]
    }

    #[inline]
    pub fn code(&self, n: usize, m: usize) -> u32 {
        self.codes[n * self.vocab.len() + m]
    }

    pub fn has_unk(&self) -> bool {
        self.codes.contains(&UNK)
    }

    /// Raw value of a cell, `None` for [`UNK`].
    pub fn decode(&self, n: usize, m: usize) -> Option<&str> {
        let c = self.code(n, m);
        (c != UNK).then(|| self.vocab[m][c as usize].as_str())
    }

    /// Subset of rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> EncodedDataset {
        let mut codes = Vec::with_capacity(rows.len() * self.n_features());
        for &r in rows {
            codes.extend_from_slice(self.row(r));
        }
        EncodedDataset {
            codes,
            vocab: self.vocab.clone(),
            names: self.names.clone(),
            n_rows: rows.len(),
        }
    }
}

fn feature_column<'a>(table: &'a RawTable, spec: &FeatureSpec) -> Result<&'a ColumnData> {
    let col = table
        .column(&spec.name)
        .ok_or_else(|| FirdError::Schema(format!("table has no column '{}'", spec.name)))?;
    match (&col.data, spec.kind) {
        (ColumnData::Categorical(_), FeatureKind::Categorical)
        | (ColumnData::Continuous(_), FeatureKind::Continuous) => Ok(&col.data),
        _ => Err(FirdError::Schema(format!(
            "column '{}' does not have the declared {:?} type",
            spec.name, spec.kind
        ))),
    }
}

fn whitelisted<'a>(value: &'a str, whitelist: Option<&HashSet<&str>>) -> &'a str {
    match whitelist {
        Some(w) if !w.contains(value) => OTHER_VALUE,
        _ => value,
    }
}

/// Encodes the schema's features, building vocabularies from the table.
///
/// Categorical vocabularies are in first-appearance order; continuous features
/// are quantile-binned and their codes are bin indices in ascending order.
pub fn encode(table: &RawTable, schema: &FeatureSchema) -> Result<EncodedDataset> {
    schema.validate()?;
    let n = table.n_rows();
    let m = schema.features.len();
    let mut codes = vec![0u32; n * m];
    let mut vocab = Vec::with_capacity(m);
    for (j, spec) in schema.features.iter().enumerate() {
        let (col_codes, col_vocab) = match feature_column(table, spec)? {
            ColumnData::Categorical(values) => {
                let wl: Option<HashSet<&str>> = spec
                    .whitelist
                    .as_ref()
                    .map(|w| w.iter().map(String::as_str).collect());
                let mut index: HashMap<&str, u32> = HashMap::new();
                let mut voc: Vec<String> = Vec::new();
                let mut cc = Vec::with_capacity(n);
                for v in values {
                    let v = whitelisted(v, wl.as_ref());
                    let next = voc.len() as u32;
                    let code = *index.entry(v).or_insert_with(|| {
                        voc.push(v.to_string());
                        next
                    });
                    cc.push(code);
                }
                if voc.is_empty() {
                    voc.push(OTHER_VALUE.to_string());
                }
                (cc, voc)
            }
            ColumnData::Continuous(values) => {
                if values.is_empty() {
                    (
                        Vec::new(),
                        vec![format!("({:?},{:?}]", f64::NEG_INFINITY, f64::INFINITY)],
                    )
                } else {
                    bin_continuous(values, spec.bin_count())?
                }
            }
        };
        for (i, c) in col_codes.into_iter().enumerate() {
            codes[i * m + j] = c;
        }
        vocab.push(col_vocab);
    }
    EncodedDataset::new(codes, vocab, schema.names())
}

/// Encodes a table against an existing vocabulary; unseen values become [`UNK`].
pub fn encode_with_vocab(
    table: &RawTable,
    schema: &FeatureSchema,
    vocab: &[Vec<String>],
) -> Result<EncodedDataset> {
    schema.validate()?;
    let m = schema.features.len();
    if vocab.len() != m {
        return Err(FirdError::Dimension(format!(
            "vocabulary has {} features, schema declares {}",
            vocab.len(),
            m
        )));
    }
    let n = table.n_rows();
    let mut codes = vec![UNK; n * m];
    for (j, spec) in schema.features.iter().enumerate() {
        match feature_column(table, spec)? {
            ColumnData::Categorical(values) => {
                let wl: Option<HashSet<&str>> = spec
                    .whitelist
                    .as_ref()
                    .map(|w| w.iter().map(String::as_str).collect());
                let index: HashMap<&str, u32> = vocab[j]
                    .iter()
                    .enumerate()
                    .map(|(i, v)| (v.as_str(), i as u32))
                    .collect();
                for (i, v) in values.iter().enumerate() {
                    let v = whitelisted(v, wl.as_ref());
                    codes[i * m + j] = index.get(v).copied().unwrap_or(UNK);
                }
            }
            ColumnData::Continuous(values) => {
                let binning = Binning::from_labels(&vocab[j])?;
                for (i, &v) in values.iter().enumerate() {
                    codes[i * m + j] = binning.code(v).unwrap_or(UNK);
                }
            }
        }
    }
    EncodedDataset::new(codes, vocab.to_vec(), schema.names())
}
