//! Datasets: typed schemas, CSV ingestion, min-max normalization to `[0, 1]`,
//! distance weights and seeded synthetic data.

use std::collections::{BTreeMap, HashMap};
use std::io::Read;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("schema: {0}")]
    Schema(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("row {row}, column `{column}`: cannot parse `{value}`")]
    Unparseable {
        row: usize,
        column: String,
        value: String,
    },
    #[error("row {row}, column `{column}`: missing value")]
    MissingValue { row: usize, column: String },
    #[error("row {row}, column `{column}`: {value} outside declared range [{min}, {max}]")]
    OutOfRange {
        row: usize,
        column: String,
        value: f64,
        min: f64,
        max: f64,
    },
    #[error("row {row}, column `{column}`: {value} is not a valid {kind} value")]
    InvalidValue {
        row: usize,
        column: String,
        value: f64,
        kind: &'static str,
    },
    #[error("row {row}: one-hot group `{group}` sums to {sum}, expected 1")]
    OneHot { row: usize, group: String, sum: f64 },
    #[error("row {row}: label `{value}` is not 0 or 1")]
    Label { row: usize, value: String },
    #[error("feature `{0}` is constant")]
    ConstantFeature(String),
    #[error("dataset is empty")]
    Empty,
    #[error("row has {got} values, schema has {expected} features")]
    Dimension { expected: usize, got: usize },
    #[error("synthetic spec: {0}")]
    Synthetic(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureKind {
    Binary,
    /// One column of a one-hot encoded attribute.
    Categorical {
        group: String,
        cardinality: usize,
    },
    /// Integer grid `min..=max`.
    Discrete,
    Continuous,
}

impl FeatureKind {
    pub fn is_continuous(&self) -> bool {
        matches!(self, FeatureKind::Continuous)
    }

    fn label(&self) -> &'static str {
        match self {
            FeatureKind::Binary => "binary",
            FeatureKind::Categorical { .. } => "categorical",
            FeatureKind::Discrete => "discrete",
            FeatureKind::Continuous => "continuous",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Actionability {
    #[default]
    Free,
    Fixed,
    IncreaseOnly,
    DecreaseOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub kind: FeatureKind,
    pub actionability: Actionability,
    /// Range in original units; binary and categorical features use `[0, 1]`.
    pub range: (f64, f64),
}

impl FeatureSpec {
    /// Number of grid steps for discrete features, `None` otherwise.
    pub fn grid_steps(&self) -> Option<u64> {
        match self.kind {
            FeatureKind::Discrete => Some((self.range.1 - self.range.0).round() as u64),
            FeatureKind::Binary | FeatureKind::Categorical { .. } => Some(1),
            FeatureKind::Continuous => None,
        }
    }

    pub fn normalize(&self, raw: f64) -> f64 {
        match self.kind {
            FeatureKind::Binary | FeatureKind::Categorical { .. } => raw,
            _ => (raw - self.range.0) / (self.range.1 - self.range.0),
        }
    }

    pub fn denormalize(&self, value: f64) -> f64 {
        match self.kind {
            FeatureKind::Binary | FeatureKind::Categorical { .. } => value,
            FeatureKind::Discrete => (self.range.0 + value * (self.range.1 - self.range.0)).round(),
            FeatureKind::Continuous => self.range.0 + value * (self.range.1 - self.range.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSchema {
    pub features: Vec<FeatureSpec>,
    pub target: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SchemaFile {
    target: String,
    #[serde(rename = "feature")]
    features: Vec<FeatureEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FeatureEntry {
    name: String,
    kind: String,
    #[serde(default)]
    actionability: Actionability,
    #[serde(skip_serializing_if = "Option::is_none")]
    range: Option<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    group: Option<String>,
}

impl DatasetSchema {
    /// Parses the TOML schema format (see `docs/schema.md`). Features without a
    /// `range` get one fitted from data at load time.
    pub fn from_toml_str(text: &str) -> Result<PartialSchema, DataError> {
        let file: SchemaFile =
            toml::from_str(text).map_err(|e| DataError::Schema(e.message().to_string()))?;
        let mut group_sizes: BTreeMap<String, usize> = BTreeMap::new();
        for f in &file.features {
            if f.kind == "categorical" {
                let g = f.group.clone().ok_or_else(|| {
                    DataError::Schema(format!("categorical feature `{}` needs a group", f.name))
                })?;
                *group_sizes.entry(g).or_default() += 1;
            } else if f.group.is_some() {
                return Err(DataError::Schema(format!(
                    "feature `{}`: only categorical features take a group",
                    f.name
                )));
            }
        }
        if let Some((g, _)) = group_sizes.iter().find(|(_, &c)| c < 2) {
            return Err(DataError::Schema(format!(
                "one-hot group `{g}` has a single column"
            )));
        }
        let mut features = Vec::with_capacity(file.features.len());
        for f in file.features {
            let kind = match f.kind.as_str() {
                "binary" => FeatureKind::Binary,
                "continuous" => FeatureKind::Continuous,
                "discrete" => FeatureKind::Discrete,
                "categorical" => {
                    let group = f.group.clone().unwrap_or_default();
                    let cardinality = group_sizes[&group];
                    FeatureKind::Categorical { group, cardinality }
                }
                other => {
                    return Err(DataError::Schema(format!(
                        "feature `{}`: unknown kind `{other}`",
                        f.name
                    )))
                }
            };
            let range = match (&kind, f.range) {
                (FeatureKind::Binary | FeatureKind::Categorical { .. }, _) => Some((0.0, 1.0)),
                (_, Some([lo, hi])) => {
                    if !(lo.is_finite() && hi.is_finite()) || lo >= hi {
                        return Err(DataError::Schema(format!(
                            "feature `{}`: range must satisfy min < max",
                            f.name
                        )));
                    }
                    if kind == FeatureKind::Discrete && (lo.fract() != 0.0 || hi.fract() != 0.0) {
                        return Err(DataError::Schema(format!(
                            "feature `{}`: discrete range bounds must be integers",
                            f.name
                        )));
                    }
                    Some((lo, hi))
                }
                (_, None) => None,
            };
            features.push(PartialFeature {
                name: f.name,
                kind,
                actionability: f.actionability,
                range,
            });
        }
        let mut seen = std::collections::HashSet::new();
        for f in &features {
            if !seen.insert(f.name.as_str()) {
                return Err(DataError::Schema(format!("duplicate feature `{}`", f.name)));
            }
        }
        if seen.contains(file.target.as_str()) {
            return Err(DataError::Schema(format!(
                "target `{}` is also a feature",
                file.target
            )));
        }
        if features.is_empty() {
            return Err(DataError::Schema("no features".into()));
        }
        Ok(PartialSchema {
            features,
            target: file.target,
        })
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<PartialSchema, DataError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    /// The schema in the TOML format, every range written out.
    pub fn to_toml_string(&self) -> String {
        let file = SchemaFile {
            target: self.target.clone(),
            features: self
                .features
                .iter()
                .map(|f| FeatureEntry {
                    name: f.name.clone(),
                    kind: f.kind.label().into(),
                    actionability: f.actionability,
                    range: match f.kind {
                        FeatureKind::Discrete | FeatureKind::Continuous => Some([f.range.0, f.range.1]),
                        _ => None,
                    },
                    group: match &f.kind {
                        FeatureKind::Categorical { group, .. } => Some(group.clone()),
                        _ => None,
                    },
                })
                .collect(),
        };
        toml::to_string(&file).expect("schema serialization is infallible")
    }

    pub fn d(&self) -> usize {
        self.features.len()
    }

    /// Number of continuous features.
    pub fn k(&self) -> usize {
        self.features.iter().filter(|f| f.kind.is_continuous()).count()
    }

    /// Column indices of every one-hot group, in order of first appearance.
    pub fn groups(&self) -> Vec<(String, Vec<usize>)> {
        let mut out: Vec<(String, Vec<usize>)> = Vec::new();
        for (j, f) in self.features.iter().enumerate() {
            if let FeatureKind::Categorical { group, .. } = &f.kind {
                match out.iter_mut().find(|(g, _)| g == group) {
                    Some((_, cols)) => cols.push(j),
                    None => out.push((group.clone(), vec![j])),
                }
            }
        }
        out
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }

    /// Schema of `continuous` free continuous features `x0..` followed by
    /// `binary` free binary features `b0..`, target `y`.
    pub fn synthetic(continuous: usize, binary: usize) -> Self {
        let mut features = Vec::new();
        for j in 0..continuous {
            features.push(FeatureSpec {
                name: format!("x{j}"),
                kind: FeatureKind::Continuous,
                actionability: Actionability::Free,
                range: (0.0, 1.0),
            });
        }
        for j in 0..binary {
            features.push(FeatureSpec {
                name: format!("b{j}"),
                kind: FeatureKind::Binary,
                actionability: Actionability::Free,
                range: (0.0, 1.0),
            });
        }
        DatasetSchema {
            features,
            target: "y".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartialFeature {
    pub name: String,
    pub kind: FeatureKind,
    pub actionability: Actionability,
    pub range: Option<(f64, f64)>,
}

/// A parsed schema whose ranges may still need fitting from data.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialSchema {
    pub features: Vec<PartialFeature>,
    pub target: String,
}

impl PartialSchema {
    /// Completes the schema when every range is declared.
    pub fn into_complete(self) -> Result<DatasetSchema, DataError> {
        let features = self
            .features
            .into_iter()
            .map(|f| {
                let range = f.range.ok_or_else(|| {
                    DataError::Schema(format!("feature `{}` has no range", f.name))
                })?;
                Ok(FeatureSpec {
                    name: f.name,
                    kind: f.kind,
                    actionability: f.actionability,
                    range,
                })
            })
            .collect::<Result<_, DataError>>()?;
        Ok(DatasetSchema {
            features,
            target: self.target,
        })
    }
}

/// Per-feature weights of the `l1` distance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceWeights(pub Vec<f64>);

impl DistanceWeights {
    /// 1 for continuous features and 1/4 for the rest.
    pub fn from_schema(schema: &DatasetSchema) -> Self {
        DistanceWeights(
            schema
                .features
                .iter()
                .map(|f| if f.kind.is_continuous() { 1.0 } else { 0.25 })
                .collect(),
        )
    }

    pub fn distance(&self, a: &[f64], b: &[f64]) -> f64 {
        self.0
            .iter()
            .zip(a.iter().zip(b))
            .map(|(w, (x, y))| w * (x - y).abs())
            .sum()
    }

    /// Largest possible distance on `[0, 1]^d`.
    pub fn diameter(&self) -> f64 {
        self.0.iter().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RangeMode {
    /// Values outside the declared range are errors.
    #[default]
    Strict,
    /// Values outside the declared range are clamped with a warning.
    Lenient,
}

#[derive(Debug, Clone, Default)]
pub struct LoadOptions {
    pub range_mode: RangeMode,
    /// Label value mapped to class 1, all other values to 0. When unset the
    /// label column must already hold 0/1.
    pub positive_label: Option<String>,
}

/// Normalized feature matrix with binary labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub schema: DatasetSchema,
    /// Row-major `n x d`, every entry in `[0, 1]`.
    pub x: Vec<f64>,
    pub y: Vec<u8>,
}

impl Dataset {
    pub fn new(schema: DatasetSchema, x: Vec<f64>, y: Vec<u8>) -> Result<Self, DataError> {
        let d = schema.d();
        if x.len() != y.len() * d {
            return Err(DataError::Dimension {
                expected: y.len() * d,
                got: x.len(),
            });
        }
        if let Some(row) = y.iter().position(|&v| v > 1) {
            return Err(DataError::Label {
                row,
                value: y[row].to_string(),
            });
        }
        Ok(Dataset { schema, x, y })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn d(&self) -> usize {
        self.schema.d()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.d();
        &self.x[i * d..(i + 1) * d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.x.chunks_exact(self.d().max(1))
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut x = Vec::with_capacity(indices.len() * self.d());
        let mut y = Vec::with_capacity(indices.len());
        for &i in indices {
            x.extend_from_slice(self.row(i));
            y.push(self.y[i]);
        }
        Dataset {
            schema: self.schema.clone(),
            x,
            y,
        }
    }

    /// Rows whose label equals `class`.
    pub fn class_rows(&self, class: u8) -> Vec<Vec<f64>> {
        (0..self.n())
            .filter(|&i| self.y[i] == class)
            .map(|i| self.row(i).to_vec())
            .collect()
    }

    pub fn class_counts(&self) -> [usize; 2] {
        let ones = self.y.iter().filter(|&&v| v == 1).count();
        [self.n() - ones, ones]
    }

    pub fn from_reader<R: Read>(
        reader: R,
        schema: PartialSchema,
        options: &LoadOptions,
    ) -> Result<Dataset, DataError> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let column = |name: &str| {
            headers
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| DataError::MissingColumn(name.to_string()))
        };
        let feature_cols = schema
            .features
            .iter()
            .map(|f| column(&f.name))
            .collect::<Result<Vec<_>, _>>()?;
        let target_col = column(&schema.target)?;

        let d = schema.features.len();
        let mut raw: Vec<f64> = Vec::new();
        let mut y = Vec::new();
        for (row, record) in rdr.records().enumerate() {
            let record = record?;
            for (f, &c) in schema.features.iter().zip(&feature_cols) {
                raw.push(parse_cell(record.get(c), row, &f.name)?);
            }
            let label = record.get(target_col).unwrap_or("").trim();
            y.push(parse_label(label, row, options.positive_label.as_deref())?);
        }
        if y.is_empty() {
            return Err(DataError::Empty);
        }

        let features = fit_ranges(schema.features, &raw, d)?;
        let schema = DatasetSchema {
            features,
            target: schema.target,
        };
        let x = normalize(&raw, &schema, options.range_mode)?;
        Ok(Dataset { schema, x, y })
    }

    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<(), DataError> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = self.schema.features.iter().map(|f| f.name.clone()).collect();
        header.push(self.schema.target.clone());
        wtr.write_record(&header)?;
        for (i, row) in self.rows().enumerate() {
            let mut rec: Vec<String> = row
                .iter()
                .zip(&self.schema.features)
                .map(|(v, f)| f.denormalize(*v).to_string())
                .collect();
            rec.push(self.y[i].to_string());
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

fn parse_cell(cell: Option<&str>, row: usize, column: &str) -> Result<f64, DataError> {
    let text = cell.unwrap_or("").trim();
    if text.is_empty() {
        return Err(DataError::MissingValue {
            row,
            column: column.to_string(),
        });
    }
    match text.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(DataError::Unparseable {
            row,
            column: column.to_string(),
            value: text.to_string(),
        }),
    }
}

fn parse_label(text: &str, row: usize, positive: Option<&str>) -> Result<u8, DataError> {
    if let Some(pos) = positive {
        if text.is_empty() {
            return Err(DataError::Label {
                row,
                value: text.to_string(),
            });
        }
        return Ok(u8::from(text == pos));
    }
    match text.parse::<f64>() {
        Ok(v) if v == 0.0 => Ok(0),
        Ok(v) if v == 1.0 => Ok(1),
        _ => Err(DataError::Label {
            row,
            value: text.to_string(),
        }),
    }
}

fn fit_ranges(
    features: Vec<PartialFeature>,
    raw: &[f64],
    d: usize,
) -> Result<Vec<FeatureSpec>, DataError> {
    features
        .into_iter()
        .enumerate()
        .map(|(j, f)| {
            let range = match f.range {
                Some(r) => r,
                None => {
                    let (lo, hi) = raw
                        .iter()
                        .skip(j)
                        .step_by(d)
                        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                            (lo.min(v), hi.max(v))
                        });
                    if lo >= hi {
                        return Err(DataError::ConstantFeature(f.name));
                    }
                    if f.kind == FeatureKind::Discrete {
                        (lo.floor(), hi.ceil())
                    } else {
                        (lo, hi)
                    }
                }
            };
            Ok(FeatureSpec {
                name: f.name,
                kind: f.kind,
                actionability: f.actionability,
                range,
            })
        })
        .collect()
}

/// Min-max scales a row-major raw matrix into `[0, 1]` and checks the
/// encoding invariants of every row.
pub fn normalize(raw: &[f64], schema: &DatasetSchema, mode: RangeMode) -> Result<Vec<f64>, DataError> {
    let d = schema.d();
    if d == 0 || !raw.len().is_multiple_of(d) {
        return Err(DataError::Dimension {
            expected: d,
            got: raw.len() % d.max(1),
        });
    }
    let groups = schema.groups();
    let mut out = Vec::with_capacity(raw.len());
    for (row, values) in raw.chunks_exact(d).enumerate() {
        for (f, &v) in schema.features.iter().zip(values) {
            out.push(normalize_value(v, f, row, mode)?);
        }
        let start = row * d;
        for (group, cols) in &groups {
            let sum: f64 = cols.iter().map(|&c| out[start + c]).sum();
            if sum != 1.0 {
                return Err(DataError::OneHot {
                    row,
                    group: group.clone(),
                    sum,
                });
            }
        }
    }
    Ok(out)
}

fn normalize_value(v: f64, f: &FeatureSpec, row: usize, mode: RangeMode) -> Result<f64, DataError> {
    let invalid = |kind| DataError::InvalidValue {
        row,
        column: f.name.clone(),
        value: v,
        kind,
    };
    match f.kind {
        FeatureKind::Binary | FeatureKind::Categorical { .. } => {
            if v == 0.0 || v == 1.0 {
                Ok(v)
            } else {
                Err(invalid(f.kind.label()))
            }
        }
        FeatureKind::Discrete | FeatureKind::Continuous => {
            if f.kind == FeatureKind::Discrete && v.fract() != 0.0 {
                return Err(invalid("discrete"));
            }
            let (lo, hi) = f.range;
            let v = if v < lo || v > hi {
                match mode {
                    RangeMode::Strict => {
                        return Err(DataError::OutOfRange {
                            row,
                            column: f.name.clone(),
                            value: v,
                            min: lo,
                            max: hi,
                        })
                    }
                    RangeMode::Lenient => {
                        log::warn!("row {row}, `{}`: {v} clamped to [{lo}, {hi}]", f.name);
                        v.clamp(lo, hi)
                    }
                }
            } else {
                v
            };
            Ok(f.normalize(v))
        }
    }
}

/// Maps normalized values back to original units.
pub fn denormalize(values: &[f64], schema: &DatasetSchema) -> Vec<f64> {
    values
        .iter()
        .zip(&schema.features)
        .map(|(v, f)| f.denormalize(*v))
        .collect()
}

pub fn load_dataset(
    csv_path: impl AsRef<Path>,
    schema_path: impl AsRef<Path>,
    options: &LoadOptions,
) -> Result<Dataset, DataError> {
    let schema = DatasetSchema::from_path(schema_path)?;
    let file = std::fs::File::open(csv_path)?;
    Dataset::from_reader(file, schema, options)
}

/// Reads query rows (feature columns only; extra columns are ignored) and
/// normalizes them with a complete schema.
pub fn read_queries<R: Read>(
    reader: R,
    schema: &DatasetSchema,
    mode: RangeMode,
) -> Result<Vec<Vec<f64>>, DataError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let cols = schema
        .features
        .iter()
        .map(|f| {
            headers
                .iter()
                .position(|h| h.trim() == f.name)
                .ok_or_else(|| DataError::MissingColumn(f.name.clone()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut raw = Vec::new();
    let mut rows = 0;
    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        for (f, &c) in schema.features.iter().zip(&cols) {
            raw.push(parse_cell(record.get(c), row, &f.name)?);
        }
        rows += 1;
    }
    let x = normalize(&raw, schema, mode)?;
    Ok(x.chunks_exact(schema.d()).take(rows).map(<[f64]>::to_vec).collect())
}

/// Decision rule of a synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum Boundary {
    /// Class 1 iff `weights . x >= offset`.
    Linear { weights: Vec<f64>, offset: f64 },
    /// Class 1 iff `lower <= x <= upper` componentwise.
    Box { lower: Vec<f64>, upper: Vec<f64> },
}

impl Boundary {
    /// All-ones weights with offset `d / 2`.
    pub fn balanced_linear(d: usize) -> Self {
        Boundary::Linear {
            weights: vec![1.0; d],
            offset: d as f64 / 2.0,
        }
    }

    pub fn classify(&self, x: &[f64]) -> u8 {
        match self {
            Boundary::Linear { weights, offset } => {
                let s: f64 = weights.iter().zip(x).map(|(w, v)| w * v).sum();
                u8::from(s >= *offset)
            }
            Boundary::Box { lower, upper } => u8::from(
                x.iter()
                    .zip(lower.iter().zip(upper))
                    .all(|(v, (lo, hi))| lo <= v && v <= hi),
            ),
        }
    }

    fn dimension(&self) -> usize {
        match self {
            Boundary::Linear { weights, .. } => weights.len(),
            Boundary::Box { lower, upper } => lower.len().min(upper.len()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n: usize,
    pub continuous: usize,
    #[serde(default)]
    pub binary: usize,
    #[serde(default)]
    pub noise: f64,
    /// Defaults to [`Boundary::balanced_linear`].
    #[serde(default)]
    pub boundary: Option<Boundary>,
}

impl SyntheticSpec {
    pub fn linear(n: usize, continuous: usize, binary: usize, noise: f64) -> Self {
        SyntheticSpec {
            n,
            continuous,
            binary,
            noise,
            boundary: None,
        }
    }
}

/// Uniform continuous features, fair-coin binary features, labels from the
/// boundary flipped with probability `noise`.
pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<Dataset, DataError> {
    let d = spec.continuous + spec.binary;
    if d == 0 {
        return Err(DataError::Synthetic("at least one feature is required".into()));
    }
    if spec.n < 20 {
        return Err(DataError::Synthetic(format!("n = {} is below 20", spec.n)));
    }
    if !(0.0..0.5).contains(&spec.noise) {
        return Err(DataError::Synthetic(format!(
            "noise level {} outside [0, 0.5)",
            spec.noise
        )));
    }
    let boundary = spec
        .boundary
        .clone()
        .unwrap_or_else(|| Boundary::balanced_linear(d));
    if boundary.dimension() != d {
        return Err(DataError::Synthetic(format!(
            "boundary has dimension {}, dataset has {d} features",
            boundary.dimension()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Vec::with_capacity(spec.n * d);
    let mut y = Vec::with_capacity(spec.n);
    for _ in 0..spec.n {
        let start = x.len();
        for _ in 0..spec.continuous {
            x.push(rng.random::<f64>());
        }
        for _ in 0..spec.binary {
            x.push(if rng.random_bool(0.5) { 1.0 } else { 0.0 });
        }
        let mut label = boundary.classify(&x[start..]);
        if spec.noise > 0.0 && rng.random_bool(spec.noise) {
            label ^= 1;
        }
        y.push(label);
    }
    let data = Dataset::new(DatasetSchema::synthetic(spec.continuous, spec.binary), x, y)?;
    let counts = data.class_counts();
    if counts[0] < 5 || counts[1] < 5 {
        return Err(DataError::Synthetic(format!(
            "class counts {counts:?}: both classes need at least 5 samples"
        )));
    }
    Ok(data)
}

/// Per-column summary used by reports.
pub fn column_means(data: &Dataset) -> HashMap<String, f64> {
    let n = data.n().max(1) as f64;
    data.schema
        .features
        .iter()
        .enumerate()
        .map(|(j, f)| (f.name.clone(), data.rows().map(|r| r[j]).sum::<f64>() / n))
        .collect()
}
