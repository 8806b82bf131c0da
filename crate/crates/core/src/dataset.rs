//! Raw dataset ingestion: CSV loading against a column schema, equal-frequency
//! discretization and tabulation into count tables.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{CountTable, Observation};
use crate::lattice::{Influence, InfluenceSpec, ParentSpace};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Parent,
    Child,
    Ignored,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    /// Already coded as `1..=cardinality`.
    #[default]
    Ordinal,
    /// Binned by equal-frequency discretization into `bins` levels.
    Continuous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnSpec {
    pub name: String,
    pub role: Role,
    #[serde(default)]
    pub kind: ColumnKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bins: Option<usize>,
    /// Ordinal columns only; inferred from the largest value when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cardinality: Option<usize>,
    /// Parent columns only; positive when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub influence: Option<Influence>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSchema {
    pub schema_version: u32,
    /// Parents in the order they index configurations. CSV columns not listed
    /// here are ignored.
    pub columns: Vec<ColumnSpec>,
}

impl DatasetSchema {
    pub fn from_json(text: &str) -> Result<Self> {
        let schema: DatasetSchema = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("dataset schema: {e}")))?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported schema_version {}",
                self.schema_version
            )));
        }
        let children = self
            .columns
            .iter()
            .filter(|c| c.role == Role::Child)
            .count();
        if children != 1 {
            return Err(Error::Config(format!(
                "need exactly one child column, found {children}"
            )));
        }
        if self.parents().next().is_none() {
            return Err(Error::Config("need at least one parent column".into()));
        }
        for (i, c) in self.columns.iter().enumerate() {
            if self.columns[..i].iter().any(|o| o.name == c.name) {
                return Err(Error::Config(format!("column `{}` listed twice", c.name)));
            }
            if c.role == Role::Ignored {
                continue;
            }
            match (c.kind, c.bins, c.cardinality) {
                (ColumnKind::Continuous, Some(b), None) if b >= 2 => {}
                (ColumnKind::Continuous, _, _) => {
                    return Err(Error::Config(format!(
                        "continuous column `{}` needs bins ≥ 2 and no cardinality",
                        c.name
                    )))
                }
                (ColumnKind::Ordinal, None, card) if card != Some(0) => {}
                (ColumnKind::Ordinal, _, _) => {
                    return Err(Error::Config(format!(
                        "ordinal column `{}` takes a positive cardinality and no bins",
                        c.name
                    )))
                }
            }
            if c.role == Role::Child && c.influence.is_some() {
                return Err(Error::Config(format!(
                    "child column `{}` has an influence",
                    c.name
                )));
            }
        }
        Ok(())
    }

    pub fn parents(&self) -> impl Iterator<Item = &ColumnSpec> {
        self.columns.iter().filter(|c| c.role == Role::Parent)
    }

    pub fn child(&self) -> &ColumnSpec {
        self.columns
            .iter()
            .find(|c| c.role == Role::Child)
            .expect("validated schema has a child")
    }

    pub fn influences(&self) -> InfluenceSpec {
        InfluenceSpec {
            signs: self
                .parents()
                .map(|c| c.influence.unwrap_or(Influence::Positive))
                .collect(),
        }
    }

    /// Parents in order, then the child.
    fn used(&self) -> Vec<&ColumnSpec> {
        self.parents()
            .chain(std::iter::once(self.child()))
            .collect()
    }
}

/// Records restricted to the schema's parent and child columns, rows with a
/// missing value removed.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetFile {
    schema: DatasetSchema,
    /// Row-major, parents then child.
    rows: Vec<Vec<f64>>,
    dropped: usize,
}

impl DatasetFile {
    pub fn schema(&self) -> &DatasetSchema {
        &self.schema
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Rows removed for missing values.
    pub fn dropped(&self) -> usize {
        self.dropped
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    /// Codes every column as `1..=cardinality`, binning continuous columns.
    pub fn discretize(&self) -> Result<DiscreteDataset> {
        let used = self.schema.used();
        let k = used.len();
        let mut coded = vec![vec![0usize; k]; self.rows.len()];
        let mut cards = Vec::with_capacity(k);
        let mut binnings = Vec::new();
        for (j, spec) in used.iter().enumerate() {
            let column: Vec<f64> = self.rows.iter().map(|r| r[j]).collect();
            let card = match spec.kind {
                ColumnKind::Continuous => {
                    let bins = spec.bins.expect("validated");
                    let b = discretize_equal_frequency(&column, bins)?;
                    for (row, &l) in coded.iter_mut().zip(&b.labels) {
                        row[j] = l;
                    }
                    binnings.push(ColumnBinning {
                        column: spec.name.clone(),
                        cuts: b.cuts,
                    });
                    bins
                }
                ColumnKind::Ordinal => {
                    let mut max = 0;
                    for (row, &v) in coded.iter_mut().zip(&column) {
                        if v.fract() != 0.0 || v < 1.0 || v > u32::MAX as f64 {
                            return Err(Error::Range {
                                column: spec.name.clone(),
                                value: v,
                                cardinality: spec.cardinality.unwrap_or(0),
                            });
                        }
                        row[j] = v as usize;
                        max = max.max(row[j]);
                    }
                    spec.cardinality.unwrap_or(max.max(1))
                }
            };
            cards.push(card);
        }
        let d_y = cards.pop().expect("child column");
        Ok(DiscreteDataset {
            names: used.iter().map(|c| c.name.clone()).collect(),
            cardinalities: cards,
            d_y,
            influences: self.schema.influences(),
            rows: coded,
            binnings,
            dropped: self.dropped,
        })
    }
}

pub fn load_csv(path: impl AsRef<Path>, schema: &DatasetSchema) -> Result<DatasetFile> {
    let file = std::fs::File::open(path.as_ref())?;
    read_csv(file, schema)
}

/// [`load_csv`] over any reader.
pub fn read_csv(reader: impl std::io::Read, schema: &DatasetSchema) -> Result<DatasetFile> {
    schema.validate()?;
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    let used = schema.used();
    let mut positions = Vec::with_capacity(used.len());
    for spec in schema.columns.iter() {
        if header.iter().all(|h| h != spec.name) {
            return Err(Error::Config(format!(
                "column `{}` not in the file header",
                spec.name
            )));
        }
    }
    for spec in &used {
        positions.push(header.iter().position(|h| h == spec.name).expect("checked"));
    }

    let mut rows = Vec::new();
    let mut dropped = 0;
    let mut record = csv::StringRecord::new();
    loop {
        let line = rdr.position().line();
        match rdr.read_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => {
                return Err(Error::Parse {
                    line: e.position().map_or(line, |p| p.line()),
                    message: e.to_string(),
                })
            }
        }
        let line = record.position().map_or(line, |p| p.line());
        if record.len() != header.len() {
            return Err(Error::Parse {
                line,
                message: format!("{} fields, header has {}", record.len(), header.len()),
            });
        }
        let mut row = Vec::with_capacity(positions.len());
        let mut missing = false;
        for (&p, spec) in positions.iter().zip(&used) {
            let field = &record[p];
            if is_missing(field) {
                missing = true;
                continue;
            }
            match field.parse::<f64>() {
                Ok(v) if v.is_finite() => row.push(v),
                _ => {
                    return Err(Error::Parse {
                        line,
                        message: format!("column `{}`: `{field}` is not a number", spec.name),
                    })
                }
            }
        }
        if missing {
            dropped += 1;
        } else {
            rows.push(row);
        }
    }
    Ok(DatasetFile {
        schema: schema.clone(),
        rows,
        dropped,
    })
}

fn is_missing(field: &str) -> bool {
    field.is_empty()
        || field == "?"
        || field.eq_ignore_ascii_case("na")
        || field.eq_ignore_ascii_case("nan")
        || field.eq_ignore_ascii_case("null")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnBinning {
    pub column: String,
    pub cuts: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Discretized {
    /// 1-based bin of every input value.
    pub labels: Vec<usize>,
    /// `bins − 1` nondecreasing cut points; a value `v` falls in bin
    /// `1 + #{cuts < v}`.
    pub cuts: Vec<f64>,
}

/// Cuts at the empirical `i/bins` quantiles, interpolating the order
/// statistics at position `(n + 1)p` (clamped to the sample range). Equal
/// values always share a bin, so bins can be unequal under ties.
pub fn discretize_equal_frequency(values: &[f64], bins: usize) -> Result<Discretized> {
    if bins < 2 {
        return Err(Error::Discretization(format!(
            "need at least 2 bins, got {bins}"
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Discretization("non-finite value".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut distinct = sorted.clone();
    distinct.dedup();
    if distinct.len() < bins {
        return Err(Error::Discretization(format!(
            "{} distinct values for {bins} bins",
            distinct.len()
        )));
    }
    let n = sorted.len();
    let cuts: Vec<f64> = (1..bins)
        .map(|i| {
            let h = (n + 1) as f64 * i as f64 / bins as f64;
            let lo = (h.floor() as usize).clamp(1, n);
            let hi = (lo + 1).min(n);
            let frac = (h - lo as f64).clamp(0.0, 1.0);
            sorted[lo - 1] + frac * (sorted[hi - 1] - sorted[lo - 1])
        })
        .collect();
    let labels = values
        .iter()
        .map(|&v| 1 + cuts.iter().filter(|&&c| c < v).count())
        .collect();
    Ok(Discretized { labels, cuts })
}

/// A dataset coded to `1..=cardinality` in every column.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDataset {
    /// Parents then child.
    pub names: Vec<String>,
    pub cardinalities: Vec<usize>,
    pub d_y: usize,
    pub influences: InfluenceSpec,
    /// 1-based values, parents then child.
    pub rows: Vec<Vec<usize>>,
    pub binnings: Vec<ColumnBinning>,
    pub dropped: usize,
}

impl DiscreteDataset {
    pub fn space(&self) -> Result<ParentSpace> {
        ParentSpace::new(self.cardinalities.clone())
    }

    /// Every row as a 0-based observation over `space`.
    pub fn observations(&self, space: &ParentSpace) -> Result<Vec<Observation>> {
        let k = space.num_parents();
        if self.cardinalities.len() != k {
            return Err(Error::invalid(format!(
                "dataset has {} parents, space has {k}",
                self.cardinalities.len()
            )));
        }
        let cards = space.cardinalities();
        self.rows
            .iter()
            .map(|row| {
                for (j, &v) in row.iter().enumerate() {
                    let card = if j < k { cards[j] } else { self.d_y };
                    if v < 1 || v > card {
                        return Err(Error::Range {
                            column: self.names[j].clone(),
                            value: v as f64,
                            cardinality: card,
                        });
                    }
                }
                let x = (0..k).map(|j| (row[j] - 1) * space.stride(j)).sum();
                Ok(Observation { y: row[k] - 1, x })
            })
            .collect()
    }
}

/// Tabulates `n(y, x)` over `space`.
pub fn build_counts(data: &DiscreteDataset, space: &ParentSpace) -> Result<CountTable> {
    let obs = data.observations(space)?;
    CountTable::from_observations(space.clone(), data.d_y, &obs)
}
