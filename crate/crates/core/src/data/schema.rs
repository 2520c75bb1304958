//! Schema-driven CSV ingestion.
//!
//! A schema names the label column, the sensitive attributes, row filters and
//! the feature columns. Categorical features are aggregated into named levels
//! and one-hot encoded as `column=level`.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::dataset::{ColumnKind, TabularDataset};
use crate::error::{Error, Result};
use crate::numeric::Matrix;

const ADULT_SCHEMA: &str = include_str!("../../schemas/adult.toml");
const COMPAS_SCHEMA: &str = include_str!("../../schemas/compas.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schema {
    pub name: String,
    pub version: u32,
    /// Whether the first row holds column names.
    #[serde(default = "yes")]
    pub header: bool,
    /// Column names for headerless files.
    #[serde(default)]
    pub columns: Vec<String>,
    #[serde(default = "comma")]
    pub delimiter: char,
    /// Cell values treated as missing (in addition to the empty string).
    #[serde(default)]
    pub missing: Vec<String>,
    pub label: LabelSpec,
    pub sensitive: Vec<SensitiveSpec>,
    #[serde(default)]
    pub filters: Vec<FilterSpec>,
    pub features: Vec<FeatureSpec>,
}

fn yes() -> bool {
    true
}

fn comma() -> char {
    ','
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelSpec {
    pub column: String,
    pub positive: Vec<String>,
    pub negative: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensitiveSpec {
    pub name: String,
    pub column: String,
    /// Values that set the bit.
    pub values: Vec<String>,
}

/// Keeps a row when the column value is in `keep`, not in `drop`, and inside
/// `[min, max]` when bounds are given. Rows with a missing value are dropped.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterSpec {
    pub column: String,
    #[serde(default)]
    pub keep: Vec<String>,
    #[serde(default)]
    pub drop: Vec<String>,
    pub min: Option<f64>,
    pub max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FeatureSpec {
    Continuous { column: String },
    Categorical { column: String, levels: Vec<LevelSpec> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelSpec {
    pub name: String,
    #[serde(default)]
    pub values: Vec<String>,
    /// Catches every value not listed by another level, including missing
    /// markers.
    #[serde(default)]
    pub other: bool,
}

impl Schema {
    pub fn adult() -> Self {
        Self::from_toml_str(ADULT_SCHEMA).expect("bundled schema parses")
    }

    pub fn compas() -> Self {
        Self::from_toml_str(COMPAS_SCHEMA).expect("bundled schema parses")
    }

    /// Bundled schema by name.
    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "adult" => Some(Self::adult()),
            "compas" => Some(Self::compas()),
            _ => None,
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let s: Schema = toml::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.header && self.columns.is_empty() {
            return Err(Error::Config("headerless schema must list its columns".into()));
        }
        if self.sensitive.is_empty() {
            return Err(Error::Config("schema needs at least one sensitive attribute".into()));
        }
        if self.features.is_empty() {
            return Err(Error::Config("schema lists no features".into()));
        }
        for f in &self.features {
            if let FeatureSpec::Categorical { column, levels } = f {
                if levels.is_empty() {
                    return Err(Error::Config(format!("categorical `{column}` has no levels")));
                }
                if levels.iter().filter(|l| l.other).count() > 1 {
                    return Err(Error::Config(format!("categorical `{column}` has several catch-all levels")));
                }
            }
        }
        Ok(())
    }

    /// Output column names and kinds after encoding.
    pub fn encoded_columns(&self) -> Vec<(String, ColumnKind)> {
        let mut out = Vec::new();
        for f in &self.features {
            match f {
                FeatureSpec::Continuous { column } => out.push((column.clone(), ColumnKind::Continuous)),
                FeatureSpec::Categorical { column, levels } => {
                    for l in levels {
                        out.push((format!("{column}={}", l.name), ColumnKind::OneHot));
                    }
                }
            }
        }
        out
    }
}

enum Cell<'a> {
    Missing,
    Value(&'a str),
}

struct Resolver<'s> {
    schema: &'s Schema,
    index: HashMap<String, usize>,
}

impl<'s> Resolver<'s> {
    fn new(schema: &'s Schema, names: &[String]) -> Result<Self> {
        let mut index = HashMap::new();
        for (i, n) in names.iter().enumerate() {
            // Duplicated headers resolve to their first occurrence.
            index.entry(n.trim().to_string()).or_insert(i);
        }
        let r = Self { schema, index };
        let mut needed: Vec<&str> = vec![&schema.label.column];
        needed.extend(schema.sensitive.iter().map(|s| s.column.as_str()));
        needed.extend(schema.filters.iter().map(|f| f.column.as_str()));
        needed.extend(schema.features.iter().map(|f| match f {
            FeatureSpec::Continuous { column } | FeatureSpec::Categorical { column, .. } => column.as_str(),
        }));
        for c in needed {
            if !r.index.contains_key(c) {
                return Err(Error::Ingest {
                    row: 0,
                    message: format!("column `{c}` not found"),
                });
            }
        }
        Ok(r)
    }

    fn cell<'r>(&self, record: &'r csv::StringRecord, column: &str, row: usize) -> Result<Cell<'r>> {
        let i = self.index[column];
        let v = record.get(i).ok_or_else(|| Error::Ingest {
            row,
            message: format!("expected at least {} fields, found {}", i + 1, record.len()),
        })?;
        let v = v.trim();
        if v.is_empty() || self.schema.missing.iter().any(|m| m == v) {
            Ok(Cell::Missing)
        } else {
            Ok(Cell::Value(v))
        }
    }
}

fn parse_number(v: &str, column: &str, row: usize) -> Result<f64> {
    v.parse::<f64>()
        .ok()
        .filter(|x| x.is_finite())
        .ok_or_else(|| Error::Ingest {
            row,
            message: format!("column `{column}`: `{v}` is not a finite number"),
        })
}

/// One encoded row, or `None` when the row is dropped.
type Encoded = Option<(Vec<f64>, Vec<u8>, u8)>;

fn encode_row(r: &Resolver<'_>, rec: &csv::StringRecord, row: usize) -> Result<Encoded> {
    let s = r.schema;
    for f in &s.filters {
        let v = match r.cell(rec, &f.column, row)? {
            Cell::Missing => return Ok(None),
            Cell::Value(v) => v,
        };
        if !f.keep.is_empty() && !f.keep.iter().any(|k| k == v) {
            return Ok(None);
        }
        if f.drop.iter().any(|k| k == v) {
            return Ok(None);
        }
        if f.min.is_some() || f.max.is_some() {
            let x = parse_number(v, &f.column, row)?;
            if f.min.is_some_and(|m| x < m) || f.max.is_some_and(|m| x > m) {
                return Ok(None);
            }
        }
    }
    let label = match r.cell(rec, &s.label.column, row)? {
        Cell::Missing => return Ok(None),
        Cell::Value(v) if s.label.positive.iter().any(|p| p == v) => 1,
        Cell::Value(v) if s.label.negative.iter().any(|p| p == v) => 0,
        Cell::Value(v) => {
            return Err(Error::Ingest {
                row,
                message: format!("unknown label value `{v}`"),
            })
        }
    };
    let mut bits = Vec::with_capacity(s.sensitive.len());
    for a in &s.sensitive {
        match r.cell(rec, &a.column, row)? {
            Cell::Missing => return Ok(None),
            Cell::Value(v) => bits.push(a.values.iter().any(|x| x == v) as u8),
        }
    }
    let mut x = Vec::new();
    for f in &s.features {
        match f {
            FeatureSpec::Continuous { column } => match r.cell(rec, column, row)? {
                Cell::Missing => return Ok(None),
                Cell::Value(v) => x.push(parse_number(v, column, row)?),
            },
            FeatureSpec::Categorical { column, levels } => {
                let raw = r.cell(rec, column, row)?;
                let explicit = match raw {
                    Cell::Value(v) => levels.iter().position(|l| l.values.iter().any(|x| x == v)),
                    Cell::Missing => None,
                };
                let hit = match explicit.or_else(|| levels.iter().position(|l| l.other)) {
                    Some(h) => h,
                    None => match raw {
                        Cell::Missing => return Ok(None),
                        Cell::Value(v) => {
                            return Err(Error::Ingest {
                                row,
                                message: format!("unknown category `{v}` in column `{column}`"),
                            })
                        }
                    },
                };
                x.extend((0..levels.len()).map(|j| (j == hit) as u8 as f64));
            }
        }
    }
    Ok(Some((x, bits, label)))
}

/// Reads a CSV file according to `schema`. Rows failing a filter or holding a
/// missing value in a used column are dropped. The loaded labels are treated
/// as clean, so they are also stored as ideal labels.
pub fn load_tabular(path: &Path, schema: &Schema) -> Result<TabularDataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_tabular(file, schema)
}

pub fn read_tabular<R: std::io::Read>(reader: R, schema: &Schema) -> Result<TabularDataset> {
    schema.validate()?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(schema.header)
        .delimiter(schema.delimiter as u8)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let names: Vec<String> = if schema.header {
        rdr.headers()?.iter().map(str::to_string).collect()
    } else {
        schema.columns.clone()
    };
    if names.is_empty() || names.iter().all(|n| n.is_empty()) {
        return Err(Error::Ingest {
            row: 0,
            message: "file is empty".into(),
        });
    }
    let resolver = Resolver::new(schema, &names)?;
    let cols = schema.encoded_columns();
    let mut data = Vec::new();
    let mut sensitive = Vec::new();
    let mut labels = Vec::new();
    let mut seen = 0usize;
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| Error::Ingest {
            row,
            message: e.to_string(),
        })?;
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        seen += 1;
        if let Some((x, bits, y)) = encode_row(&resolver, &rec, row)? {
            data.extend(x);
            sensitive.extend(bits);
            labels.push(y);
        }
    }
    if seen == 0 {
        return Err(Error::Ingest {
            row: 0,
            message: "file holds no data rows".into(),
        });
    }
    if labels.is_empty() {
        return Err(Error::Ingest {
            row: seen,
            message: "every row was filtered out".into(),
        });
    }
    let n = labels.len();
    TabularDataset::new(
        Matrix::from_vec(n, cols.len(), data)?,
        cols.iter().map(|c| c.0.clone()).collect(),
        cols.iter().map(|c| c.1).collect(),
        sensitive,
        schema.sensitive.iter().map(|s| s.name.clone()).collect(),
        labels.clone(),
        Some(labels),
    )
}
