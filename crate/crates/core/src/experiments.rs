//! Simulation and holdout protocols comparing the estimators.
//!
//! Every (sample size, replication) cell draws from its own ChaCha8 stream,
//! keyed by the plan seed and the cell index, and writes into a pre-assigned
//! slot. Reports are therefore identical whatever the thread count.

use std::fmt;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cml_mixture::{
    em_fit, enumerate_extreme_points, EmOptions, ExtremePointSet, DEFAULT_EXTREME_CAP,
};
use crate::error::{Error, Result};
use crate::estimators::{
    detect_reversals_with, isotonic_estimator, standard_mle, CountTable, DistributionFamily,
    Observation, ReversalOptions, Smoothing,
};
use crate::lattice::{Influence, InfluenceSpec};
use crate::metrics::{log_loss, summed_hellinger};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    Iso,
    Cml,
    Standard,
}

impl Estimator {
    pub const ALL: [Estimator; 3] = [Estimator::Iso, Estimator::Cml, Estimator::Standard];

    pub fn name(self) -> &'static str {
        match self {
            Estimator::Iso => "iso",
            Estimator::Cml => "cml",
            Estimator::Standard => "standard",
        }
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "iso" => Ok(Estimator::Iso),
            "cml" => Ok(Estimator::Cml),
            "standard" | "stand" => Ok(Estimator::Standard),
            _ => Err(Error::Config(format!("unknown estimator `{s}`"))),
        }
    }
}

/// Smoothing protocol shared by all three estimators. `Laplace` adds one to
/// every cell: the corrected standard estimate, isotonic regression of the
/// corrected estimate, and the MAP estimate with prior count one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    None,
    Laplace,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::None => "none",
            Variant::Laplace => "laplace",
        }
    }

    pub fn smoothing(self) -> Smoothing {
        match self {
            Variant::None => Smoothing::None,
            Variant::Laplace => Smoothing::LAPLACE,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" | "raw" => Ok(Variant::None),
            "laplace" => Ok(Variant::Laplace),
            _ => Err(Error::Config(format!("unknown smoothing `{s}`"))),
        }
    }
}

/// Fits one estimator. The smoothing pseudo-count doubles as the CML prior
/// count; `extremes` is required for CML.
pub fn fit_estimator(
    estimator: Estimator,
    counts: &CountTable,
    smoothing: Smoothing,
    extremes: Option<&ExtremePointSet>,
    em: &EmOptions,
) -> Result<DistributionFamily> {
    match estimator {
        Estimator::Standard => standard_mle(counts, smoothing),
        Estimator::Iso => isotonic_estimator(counts, smoothing),
        Estimator::Cml => {
            let extremes =
                extremes.ok_or_else(|| Error::invalid("CML needs the extreme points"))?;
            let prior_count = match smoothing {
                Smoothing::None => 0.0,
                Smoothing::Laplace(a) => a,
            };
            let (family, _) = em_fit(counts, extremes, &EmOptions { prior_count, ..*em })?;
            Ok(family)
        }
    }
}

/// Fits under arbitrary influence signs by relabeling negative parents,
/// fitting, and relabeling back.
pub fn fit_with_influences(
    estimator: Estimator,
    counts: &CountTable,
    influences: &InfluenceSpec,
    smoothing: Smoothing,
    extremes: Option<&ExtremePointSet>,
    em: &EmOptions,
) -> Result<DistributionFamily> {
    let perm = influences.reflection(counts.space())?;
    let fitted = fit_estimator(
        estimator,
        &counts.permute_configs(&perm),
        smoothing,
        extremes,
        em,
    )?;
    Ok(fitted.permute_configs(&perm))
}

/// Draws `n_per_config` outcomes from every `P(·|x)` by inverse-CDF sampling.
pub fn sample_counts(
    generating: &DistributionFamily,
    n_per_config: usize,
    rng: &mut impl RngCore,
) -> Result<CountTable> {
    if n_per_config == 0 {
        return Err(Error::invalid(
            "sample size per configuration must be positive",
        ));
    }
    let d = generating.d_y();
    let cdf = generating.cdf();
    let mut counts = CountTable::zeros(generating.space().clone(), d)?;
    for x in 0..generating.space().len() {
        let col = cdf.column(x);
        for _ in 0..n_per_config {
            let u: f64 = rng.gen();
            let y = col[..d - 1].iter().position(|&f| u < f).unwrap_or(d - 1);
            counts.add(y, x, 1)?;
        }
    }
    Ok(counts)
}

/// Swaps the distributions of rank layers `r` and `R − r`. The family must be
/// constant on each layer.
pub fn reverse_generating(generating: &DistributionFamily) -> Result<DistributionFamily> {
    let space = generating.space();
    let mut layer: Vec<Option<usize>> = vec![None; space.max_rank() + 1];
    for x in 0..space.len() {
        let r = space.rank(x);
        match layer[r] {
            None => layer[r] = Some(x),
            Some(rep) => {
                if generating.column(rep) != generating.column(x) {
                    return Err(Error::invalid(format!(
                        "generating family is not constant on rank layer {r}"
                    )));
                }
            }
        }
    }
    // Reflecting every parent maps rank r onto rank R − r.
    let all_negative = InfluenceSpec {
        signs: vec![Influence::Negative; space.num_parents()],
    };
    Ok(generating.permute_configs(&all_negative.reflection(space)?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationPlan {
    pub generating: DistributionFamily,
    pub sample_sizes: Vec<usize>,
    pub replications: usize,
    pub estimators: Vec<Estimator>,
    pub variants: Vec<Variant>,
    /// Sample from the layer-reversed family while fitting under the original
    /// positive constraints.
    pub reverse_constraints: bool,
    pub seed: u64,
    pub extreme_cap: usize,
    pub em: EmOptions,
}

impl SimulationPlan {
    pub fn new(generating: DistributionFamily) -> Self {
        SimulationPlan {
            generating,
            sample_sizes: vec![5, 10, 20, 50, 100],
            replications: 100,
            estimators: Estimator::ALL.to_vec(),
            variants: vec![Variant::None],
            reverse_constraints: false,
            seed: 0,
            extreme_cap: DEFAULT_EXTREME_CAP,
            em: EmOptions::default(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::invalid("replications must be at least 1"));
        }
        if self.sample_sizes.is_empty() || self.sample_sizes.contains(&0) {
            return Err(Error::invalid("sample sizes must be nonempty and positive"));
        }
        if self.estimators.is_empty() || self.variants.is_empty() {
            return Err(Error::invalid(
                "no estimators or smoothing variants requested",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HoldoutPlan {
    pub train_sizes: Vec<usize>,
    pub replications: usize,
    pub estimators: Vec<Estimator>,
    pub variants: Vec<Variant>,
    pub seed: u64,
    pub extreme_cap: usize,
    pub em: EmOptions,
}

impl Default for HoldoutPlan {
    fn default() -> Self {
        HoldoutPlan {
            train_sizes: vec![20, 50, 100],
            replications: 100,
            estimators: Estimator::ALL.to_vec(),
            variants: vec![Variant::Laplace],
            seed: 0,
            extreme_cap: DEFAULT_EXTREME_CAP,
            em: EmOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    SummedHellinger,
    LogLoss,
}

/// One fit in one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub estimator: Estimator,
    pub smoothing: Variant,
    pub n: usize,
    pub replication: usize,
    pub value: Option<f64>,
    /// Whether the sample's empirical CDFs reverse the assumed order.
    pub reversal: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub estimator: Estimator,
    pub smoothing: Variant,
    pub n: usize,
    /// `None` when every replication failed.
    pub mean: Option<f64>,
    pub stderr: Option<f64>,
    pub rev_pct: f64,
    /// Replications that produced a value.
    pub completed: usize,
    pub failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema_version: u32,
    pub metric: Metric,
    pub seed: u64,
    pub replications: usize,
    /// Holdout runs: how the dataset was prepared.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<DatasetSummary>,
    pub summary: Vec<SummaryRow>,
    pub records: Vec<Record>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub records: usize,
    pub dropped: usize,
    pub parents: Vec<usize>,
    pub d_y: usize,
    pub binnings: Vec<crate::dataset::ColumnBinning>,
}

impl ExperimentReport {
    fn from_records(metric: Metric, seed: u64, replications: usize, records: Vec<Record>) -> Self {
        let mut keys: Vec<(Estimator, Variant, usize)> = Vec::new();
        for r in &records {
            let k = (r.estimator, r.smoothing, r.n);
            if !keys.contains(&k) {
                keys.push(k);
            }
        }
        let summary = keys
            .into_iter()
            .map(|(estimator, smoothing, n)| {
                let group: Vec<&Record> = records
                    .iter()
                    .filter(|r| r.estimator == estimator && r.smoothing == smoothing && r.n == n)
                    .collect();
                let values: Vec<f64> = group.iter().filter_map(|r| r.value).collect();
                let (mean, stderr) = mean_stderr(&values);
                let rev = group.iter().filter(|r| r.reversal).count();
                SummaryRow {
                    estimator,
                    smoothing,
                    n,
                    mean,
                    stderr,
                    rev_pct: 100.0 * rev as f64 / group.len() as f64,
                    completed: values.len(),
                    failed: group.len() - values.len(),
                }
            })
            .collect();
        ExperimentReport {
            schema_version: REPORT_SCHEMA_VERSION,
            metric,
            seed,
            replications,
            dataset: None,
            summary,
            records,
        }
    }

    pub fn row(&self, estimator: Estimator, smoothing: Variant, n: usize) -> Option<&SummaryRow> {
        self.summary
            .iter()
            .find(|r| r.estimator == estimator && r.smoothing == smoothing && r.n == n)
    }
}

/// Mean and standard error (sample standard deviation over `√m`); the error
/// is zero for a single value.
pub fn mean_stderr(values: &[f64]) -> (Option<f64>, Option<f64>) {
    let m = values.len();
    if m == 0 {
        return (None, None);
    }
    let mean = values.iter().sum::<f64>() / m as f64;
    if m == 1 {
        return (Some(mean), Some(0.0));
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1) as f64;
    (Some(mean), Some((var / m as f64).sqrt()))
}

fn cell_rng(seed: u64, cell: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(cell);
    rng
}

fn extremes_for(
    estimators: &[Estimator],
    counts_shape: (&crate::lattice::ParentSpace, usize),
    cap: usize,
) -> Option<std::result::Result<ExtremePointSet, String>> {
    estimators.contains(&Estimator::Cml).then(|| {
        enumerate_extreme_points(counts_shape.0, counts_shape.1, cap).map_err(|e| e.to_string())
    })
}

/// Runs `cell` over `0..cells` on the pool, results in index order.
fn run_cells<T: Send>(
    cells: usize,
    threads: Option<usize>,
    cell: impl Fn(usize) -> T + Sync + Send,
) -> Result<Vec<T>> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        let work = || (0..cells).into_par_iter().map(&cell).collect::<Vec<T>>();
        match threads {
            Some(t) => {
                let pool = rayon::ThreadPoolBuilder::new()
                    .num_threads(t)
                    .build()
                    .map_err(|e| Error::Internal(format!("thread pool: {e}")))?;
                Ok(pool.install(work))
            }
            None => Ok(work()),
        }
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = threads;
        Ok((0..cells).map(cell).collect())
    }
}

fn fit_all(
    counts: &CountTable,
    estimators: &[Estimator],
    variants: &[Variant],
    extremes: Option<&std::result::Result<ExtremePointSet, String>>,
    em: &EmOptions,
    mut evaluate: impl FnMut(&DistributionFamily) -> Result<f64>,
    mut push: impl FnMut(Estimator, Variant, std::result::Result<f64, String>),
) {
    for &variant in variants {
        for &est in estimators {
            let ext = match (est, extremes) {
                (Estimator::Cml, Some(Err(e))) => {
                    push(est, variant, Err(e.clone()));
                    continue;
                }
                (Estimator::Cml, Some(Ok(e))) => Some(e),
                _ => None,
            };
            let outcome = fit_estimator(est, counts, variant.smoothing(), ext, em)
                .and_then(|f| {
                    if est != Estimator::Standard && !f.order_certified() {
                        return Err(Error::Internal(format!("{est} fit is not order certified")));
                    }
                    evaluate(&f)
                })
                .map_err(|e| e.to_string())
                .and_then(|v| {
                    if v.is_finite() {
                        Ok(v)
                    } else {
                        Err("metric is infinite".to_string())
                    }
                });
            push(est, variant, outcome);
        }
    }
}

/// Paired design: each replication's sample is fitted by every requested
/// estimator and scored by summed Hellinger distance to the generating family.
pub fn run_simulation(plan: &SimulationPlan, threads: Option<usize>) -> Result<ExperimentReport> {
    plan.validate()?;
    let truth = if plan.reverse_constraints {
        reverse_generating(&plan.generating)?
    } else {
        plan.generating.clone()
    };
    let space = truth.space();
    let extremes = extremes_for(&plan.estimators, (space, truth.d_y()), plan.extreme_cap);
    let reps = plan.replications;
    let cells = plan.sample_sizes.len() * reps;

    let per_cell = run_cells(cells, threads, |cell| -> Result<Vec<Record>> {
        let n = plan.sample_sizes[cell / reps];
        let replication = cell % reps;
        let mut rng = cell_rng(plan.seed, cell as u64);
        let counts = sample_counts(&truth, n, &mut rng)?;
        let reversal = detect_reversals_with(
            &counts,
            ReversalOptions {
                scope: None,
                skip_empty: true,
            },
        )?
        .violated;
        let mut out = Vec::new();
        fit_all(
            &counts,
            &plan.estimators,
            &plan.variants,
            extremes.as_ref(),
            &plan.em,
            |f| summed_hellinger(&truth, f),
            |estimator, smoothing, outcome| {
                out.push(Record {
                    estimator,
                    smoothing,
                    n,
                    replication,
                    value: outcome.as_ref().ok().copied(),
                    reversal,
                    error: outcome.err(),
                })
            },
        );
        Ok(out)
    })?;
    let records = collect_records(per_cell)?;
    Ok(ExperimentReport::from_records(
        Metric::SummedHellinger,
        plan.seed,
        reps,
        records,
    ))
}

fn collect_records(per_cell: Vec<Result<Vec<Record>>>) -> Result<Vec<Record>> {
    let mut records = Vec::new();
    for cell in per_cell {
        records.extend(cell?);
    }
    records.sort_by(|a, b| {
        (a.smoothing, a.estimator, a.n, a.replication).cmp(&(
            b.smoothing,
            b.estimator,
            b.n,
            b.replication,
        ))
    });
    Ok(records)
}

/// Observations over a parent space, in the orientation where every influence
/// is positive.
#[derive(Debug, Clone, PartialEq)]
pub struct HoldoutData {
    pub space: crate::lattice::ParentSpace,
    pub d_y: usize,
    pub observations: Vec<Observation>,
}

impl HoldoutData {
    /// Relabels negatively influencing parents of raw observations.
    pub fn normalized(
        space: crate::lattice::ParentSpace,
        d_y: usize,
        observations: &[Observation],
        influences: &InfluenceSpec,
    ) -> Result<Self> {
        let perm = influences.reflection(&space)?;
        let observations = observations
            .iter()
            .map(|o| Observation {
                y: o.y,
                x: perm[o.x],
            })
            .collect();
        Ok(HoldoutData {
            space,
            d_y,
            observations,
        })
    }
}

/// Repeated random train/test splits without replacement, scored by test-set
/// log-loss.
pub fn run_holdout(
    plan: &HoldoutPlan,
    data: &HoldoutData,
    threads: Option<usize>,
) -> Result<ExperimentReport> {
    let total = data.observations.len();
    if plan.replications == 0 || plan.train_sizes.is_empty() || plan.train_sizes.contains(&0) {
        return Err(Error::invalid(
            "need replications ≥ 1 and positive train sizes",
        ));
    }
    if plan.estimators.is_empty() || plan.variants.is_empty() {
        return Err(Error::invalid(
            "no estimators or smoothing variants requested",
        ));
    }
    if let Some(&n) = plan.train_sizes.iter().find(|&&n| n >= total) {
        return Err(Error::invalid(format!(
            "train size {n} not below dataset size {total}"
        )));
    }
    let extremes = extremes_for(&plan.estimators, (&data.space, data.d_y), plan.extreme_cap);
    let reps = plan.replications;
    let cells = plan.train_sizes.len() * reps;

    let per_cell = run_cells(cells, threads, |cell| -> Result<Vec<Record>> {
        let n = plan.train_sizes[cell / reps];
        let replication = cell % reps;
        let mut rng = cell_rng(plan.seed, cell as u64);
        let (train, test) = split(&data.observations, n, &mut rng);
        let counts = CountTable::from_observations(data.space.clone(), data.d_y, &train)?;
        let reversal = detect_reversals_with(
            &counts,
            ReversalOptions {
                scope: None,
                skip_empty: true,
            },
        )?
        .violated;
        let mut out = Vec::new();
        fit_all(
            &counts,
            &plan.estimators,
            &plan.variants,
            extremes.as_ref(),
            &plan.em,
            |f| log_loss(f, &test),
            |estimator, smoothing, outcome| {
                out.push(Record {
                    estimator,
                    smoothing,
                    n,
                    replication,
                    value: outcome.as_ref().ok().copied(),
                    reversal,
                    error: outcome.err(),
                })
            },
        );
        Ok(out)
    })?;
    let records = collect_records(per_cell)?;
    Ok(ExperimentReport::from_records(
        Metric::LogLoss,
        plan.seed,
        reps,
        records,
    ))
}

/// Uniform subset of size `n` without replacement, and its complement, both
/// in original order.
pub fn split<T: Copy>(items: &[T], n: usize, rng: &mut impl RngCore) -> (Vec<T>, Vec<T>) {
    let chosen = rand::seq::index::sample(rng, items.len(), n.min(items.len()));
    let mut take = vec![false; items.len()];
    for i in chosen.iter() {
        take[i] = true;
    }
    let mut train = Vec::with_capacity(n);
    let mut test = Vec::with_capacity(items.len() - n);
    for (item, t) in items.iter().zip(take) {
        if t {
            train.push(*item);
        } else {
            test.push(*item);
        }
    }
    (train, test)
}
