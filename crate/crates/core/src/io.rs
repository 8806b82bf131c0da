//! File formats: family and plan JSON documents, counts CSV, report CSV.
//!
//! Every JSON document carries `schema_version: 1`. Paths inside a plan are
//! resolved relative to the plan file.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cml_mixture::{EmOptions, DEFAULT_EXTREME_CAP};
use crate::dataset::{load_csv, DatasetSchema};
use crate::error::{Error, Result};
use crate::estimators::{CountTable, DistributionFamily};
use crate::experiments::{
    DatasetSummary, Estimator, ExperimentReport, HoldoutData, HoldoutPlan, SimulationPlan, Variant,
};
use crate::lattice::ParentSpace;

pub const SCHEMA_VERSION: u32 = 1;

/// Probability columns must sum to one within this before renormalization.
pub const SUM_TOL: f64 = 1e-6;

fn check_version(v: u32, what: &str) -> Result<()> {
    if v == SCHEMA_VERSION {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "{what}: unsupported schema_version {v}"
        )))
    }
}

fn parse_json<T: for<'de> Deserialize<'de>>(text: &str, what: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::Config(format!("{what}: {e}")))
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })
}

/// A conditional distribution family, given either per configuration
/// (`probs`, index order with the last parent varying fastest) or per rank
/// layer (`layers[r]` for every configuration with `Σ(x_i − 1) = r`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilyFile {
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    /// Parent cardinalities.
    pub parents: Vec<usize>,
    pub d_y: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probs: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layers: Option<Vec<Vec<f64>>>,
}

impl FamilyFile {
    pub fn from_json(text: &str) -> Result<Self> {
        parse_json(text, "family")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&read_text(path.as_ref())?)
    }

    pub fn from_family(family: &DistributionFamily, description: Option<String>) -> Self {
        FamilyFile {
            schema_version: SCHEMA_VERSION,
            description,
            parents: family.space().cardinalities().to_vec(),
            d_y: family.d_y(),
            probs: Some(
                family
                    .as_flat()
                    .chunks(family.d_y())
                    .map(<[f64]>::to_vec)
                    .collect(),
            ),
            layers: None,
        }
    }

    pub fn to_family(&self) -> Result<DistributionFamily> {
        check_version(self.schema_version, "family")?;
        let space =
            ParentSpace::new(self.parents.clone()).map_err(|e| Error::Config(e.to_string()))?;
        let columns: Vec<Vec<f64>> = match (&self.probs, &self.layers) {
            (Some(p), None) => {
                if p.len() != space.len() {
                    return Err(Error::Config(format!(
                        "family: {} probability rows for {} configurations",
                        p.len(),
                        space.len()
                    )));
                }
                p.clone()
            }
            (None, Some(l)) => {
                if l.len() != space.max_rank() + 1 {
                    return Err(Error::Config(format!(
                        "family: {} layers for ranks 0..={}",
                        l.len(),
                        space.max_rank()
                    )));
                }
                (0..space.len()).map(|x| l[space.rank(x)].clone()).collect()
            }
            _ => {
                return Err(Error::Config(
                    "family: give exactly one of `probs` and `layers`".into(),
                ))
            }
        };
        if columns.iter().any(|c| c.len() != self.d_y) {
            return Err(Error::Config(format!(
                "family: every row needs {} probabilities",
                self.d_y
            )));
        }
        DistributionFamily::with_tolerance(space, self.d_y, columns.concat(), SUM_TOL)
    }
}

/// Counts CSV with header `x1,...,xk,y,count` and 1-based values. Repeated
/// rows accumulate. Cardinalities default to the largest value seen.
pub fn read_counts_csv(
    reader: impl Read,
    parents: Option<&[usize]>,
    d_y: Option<usize>,
) -> Result<CountTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    let k = header
        .len()
        .checked_sub(2)
        .filter(|&k| k >= 1)
        .ok_or_else(|| Error::Parse {
            line: 1,
            message: "header needs x1..xk, y and count".into(),
        })?;
    let expected: Vec<String> = (1..=k)
        .map(|i| format!("x{i}"))
        .chain(["y".to_string(), "count".to_string()])
        .collect();
    if header.iter().ne(expected.iter().map(String::as_str)) {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header `{}`", expected.join(",")),
        });
    }
    let mut rows: Vec<(Vec<usize>, usize, u64)> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let field = |i: usize| -> Result<u64> {
            rec[i].parse::<u64>().map_err(|_| Error::Parse {
                line,
                message: format!(
                    "`{}` in column {} is not a nonnegative integer",
                    &rec[i], &header[i]
                ),
            })
        };
        let mut config = Vec::with_capacity(k);
        for i in 0..=k {
            let v = field(i)?;
            if v == 0 {
                return Err(Error::Parse {
                    line,
                    message: format!("column {} is 1-based", &header[i]),
                });
            }
            if i < k {
                config.push(v as usize);
            }
        }
        rows.push((config, field(k)? as usize, field(k + 1)?));
    }

    let cards: Vec<usize> = match parents {
        Some(p) if p.len() != k => {
            return Err(Error::Config(format!(
                "{} parent cardinalities for {k} parent columns",
                p.len()
            )))
        }
        Some(p) => p.to_vec(),
        None => (0..k)
            .map(|j| rows.iter().map(|r| r.0[j]).max().unwrap_or(1))
            .collect(),
    };
    let d_y = d_y.unwrap_or_else(|| rows.iter().map(|r| r.1).max().unwrap_or(2).max(2));
    let space = ParentSpace::new(cards.clone())?;
    let mut counts = CountTable::zeros(space.clone(), d_y)?;
    for (config, y, m) in rows {
        for (j, &v) in config.iter().enumerate() {
            if v > cards[j] {
                return Err(Error::Range {
                    column: format!("x{}", j + 1),
                    value: v as f64,
                    cardinality: cards[j],
                });
            }
        }
        if y > d_y {
            return Err(Error::Range {
                column: "y".into(),
                value: y as f64,
                cardinality: d_y,
            });
        }
        let x = space.index_of(&crate::lattice::Config(config))?;
        counts.add(y - 1, x, m)?;
    }
    Ok(counts)
}

/// Every cell, zeros included, in configuration index order.
pub fn write_counts_csv(counts: &CountTable, writer: impl Write) -> Result<()> {
    let space = counts.space();
    let k = space.num_parents();
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(writer);
    let header: Vec<String> = (1..=k)
        .map(|i| format!("x{i}"))
        .chain(["y".into(), "count".into()])
        .collect();
    w.write_record(&header)?;
    for x in 0..space.len() {
        let config = space.config_at(x)?;
        for y in 0..counts.d_y() {
            let mut row: Vec<String> = config.values().iter().map(usize::to_string).collect();
            row.push((y + 1).to_string());
            row.push(counts.count(y, x).to_string());
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Inline<T> {
    Path(PathBuf),
    Value(T),
}

fn default_estimators() -> Vec<Estimator> {
    Estimator::ALL.to_vec()
}

fn default_none() -> Vec<Variant> {
    vec![Variant::None]
}

fn default_laplace() -> Vec<Variant> {
    vec![Variant::Laplace]
}

fn default_cap() -> usize {
    DEFAULT_EXTREME_CAP
}

fn default_reps() -> usize {
    100
}

fn default_em_tol() -> f64 {
    EmOptions::default().tol
}

fn default_em_max_iter() -> usize {
    EmOptions::default().max_iter
}

fn default_train_sizes() -> Vec<usize> {
    vec![20, 50, 100]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationPlanFile {
    pub schema_version: u32,
    /// Path to a family document, or the document itself.
    pub generating: Inline<FamilyFile>,
    pub sample_sizes: Vec<usize>,
    #[serde(default = "default_reps")]
    pub replications: usize,
    #[serde(default = "default_estimators")]
    pub estimators: Vec<Estimator>,
    #[serde(default = "default_none")]
    pub smoothing: Vec<Variant>,
    #[serde(default)]
    pub reverse_constraints: bool,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_cap")]
    pub extreme_cap: usize,
    #[serde(default = "default_em_tol")]
    pub em_tol: f64,
    #[serde(default = "default_em_max_iter")]
    pub em_max_iter: usize,
}

impl SimulationPlanFile {
    pub fn from_json(text: &str) -> Result<Self> {
        parse_json(text, "simulation plan")
    }

    /// Reads the plan and the family it points to.
    pub fn load(path: impl AsRef<Path>) -> Result<SimulationPlan> {
        let path = path.as_ref();
        let file = Self::from_json(&read_text(path)?)?;
        file.resolve(path.parent().unwrap_or(Path::new(".")))
    }

    pub fn resolve(&self, base: &Path) -> Result<SimulationPlan> {
        check_version(self.schema_version, "simulation plan")?;
        let family = match &self.generating {
            Inline::Path(p) => FamilyFile::load(base.join(p))?,
            Inline::Value(f) => f.clone(),
        };
        Ok(SimulationPlan {
            generating: family.to_family()?,
            sample_sizes: self.sample_sizes.clone(),
            replications: self.replications,
            estimators: self.estimators.clone(),
            variants: self.smoothing.clone(),
            reverse_constraints: self.reverse_constraints,
            seed: self.seed,
            extreme_cap: self.extreme_cap,
            em: EmOptions {
                tol: self.em_tol,
                max_iter: self.em_max_iter,
                ..EmOptions::default()
            },
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HoldoutPlanFile {
    pub schema_version: u32,
    /// Dataset CSV, relative to the plan.
    pub dataset: PathBuf,
    /// Path to a dataset schema, or the schema itself.
    pub schema: Inline<DatasetSchema>,
    #[serde(default = "default_train_sizes")]
    pub train_sizes: Vec<usize>,
    #[serde(default = "default_reps")]
    pub replications: usize,
    #[serde(default = "default_estimators")]
    pub estimators: Vec<Estimator>,
    #[serde(default = "default_laplace")]
    pub smoothing: Vec<Variant>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_cap")]
    pub extreme_cap: usize,
    #[serde(default = "default_em_tol")]
    pub em_tol: f64,
    #[serde(default = "default_em_max_iter")]
    pub em_max_iter: usize,
}

/// A holdout plan with its dataset loaded, discretized and oriented.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedHoldout {
    pub plan: HoldoutPlan,
    pub data: HoldoutData,
    pub summary: DatasetSummary,
}

impl HoldoutPlanFile {
    pub fn from_json(text: &str) -> Result<Self> {
        parse_json(text, "holdout plan")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<LoadedHoldout> {
        let path = path.as_ref();
        let file = Self::from_json(&read_text(path)?)?;
        file.resolve(path.parent().unwrap_or(Path::new(".")))
    }

    pub fn resolve(&self, base: &Path) -> Result<LoadedHoldout> {
        check_version(self.schema_version, "holdout plan")?;
        let schema = match &self.schema {
            Inline::Path(p) => DatasetSchema::from_json(&read_text(&base.join(p))?)?,
            Inline::Value(s) => {
                s.validate()?;
                s.clone()
            }
        };
        let raw = load_csv(base.join(&self.dataset), &schema)?;
        let disc = raw.discretize()?;
        let space = disc.space()?;
        let obs = disc.observations(&space)?;
        let data = HoldoutData::normalized(space.clone(), disc.d_y, &obs, &disc.influences)?;
        Ok(LoadedHoldout {
            plan: HoldoutPlan {
                train_sizes: self.train_sizes.clone(),
                replications: self.replications,
                estimators: self.estimators.clone(),
                variants: self.smoothing.clone(),
                seed: self.seed,
                extreme_cap: self.extreme_cap,
                em: EmOptions {
                    tol: self.em_tol,
                    max_iter: self.em_max_iter,
                    ..EmOptions::default()
                },
            },
            data,
            summary: DatasetSummary {
                records: raw.len(),
                dropped: raw.dropped(),
                parents: space.cardinalities().to_vec(),
                d_y: disc.d_y,
                binnings: disc.binnings,
            },
        })
    }
}

/// 17 significant digits.
fn num(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| format!("{v:.16e}"))
}

/// One row per estimator × smoothing × sample size. Missing means are empty
/// fields.
pub fn write_report_csv(report: &ExperimentReport, writer: impl Write) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(writer);
    w.write_record([
        "estimator",
        "smoothing",
        "n",
        "mean",
        "stderr",
        "rev_pct",
        "completed",
        "failed",
    ])?;
    for r in &report.summary {
        w.write_record([
            r.estimator.name().to_string(),
            r.smoothing.name().to_string(),
            r.n.to_string(),
            num(r.mean),
            num(r.stderr),
            num(Some(r.rev_pct)),
            r.completed.to_string(),
            r.failed.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Pretty JSON with a trailing newline.
pub fn to_json_string<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}
