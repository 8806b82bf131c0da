use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use orderedcpt::cml_mixture::{em_fit, enumerate_extreme_points, EmOptions, DEFAULT_EXTREME_CAP};
use orderedcpt::dataset::{build_counts, load_csv, ColumnBinning, DatasetSchema};
use orderedcpt::estimators::{
    detect_reversals_with, CountTable, ReversalOptions, ReversalReport, ReversalScope, Smoothing,
};
use orderedcpt::experiments::{
    fit_estimator, run_holdout, run_simulation, Estimator, ExperimentReport,
};
use orderedcpt::io::{
    read_counts_csv, to_json_string, write_report_csv, FamilyFile, HoldoutPlanFile,
    SimulationPlanFile, SCHEMA_VERSION,
};
use orderedcpt::lattice::{Influence, InfluenceSpec, ParentSpace};
use orderedcpt::Error;

#[derive(Parser)]
#[command(
    name = "orderedcpt",
    version,
    about = "Conditional probability tables under stochastic order constraints"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit one or more estimators to a count table or a dataset.
    Fit(FitArgs),
    /// Run a simulation plan and report summed Hellinger distances.
    Simulate(ExperimentArgs),
    /// Run a holdout plan and report test-set log-loss.
    Holdout(ExperimentArgs),
    /// Count the monotone labelings of a parent space.
    EnumerateExtremes(EnumerateArgs),
    /// Report order reversals in the empirical distributions.
    CheckOrder(CheckArgs),
}

#[derive(Args)]
struct InputArgs {
    /// Counts CSV with header x1,...,xk,y,count.
    #[arg(long, conflicts_with_all = ["dataset", "schema"], required_unless_present = "dataset")]
    counts: Option<PathBuf>,
    /// Parent cardinalities for a counts CSV, e.g. 3,3. Inferred when absent.
    #[arg(long, value_delimiter = ',', requires = "counts")]
    parents: Option<Vec<usize>>,
    /// Child cardinality for a counts CSV. Inferred when absent.
    #[arg(long, requires = "counts")]
    d_y: Option<usize>,
    /// Raw dataset CSV, tabulated through --schema.
    #[arg(long, requires = "schema")]
    dataset: Option<PathBuf>,
    /// Dataset schema JSON.
    #[arg(long, requires = "dataset")]
    schema: Option<PathBuf>,
    /// Influence sign per parent, e.g. +,- or positive,negative. Defaults to
    /// the schema's signs, or all positive.
    #[arg(long, value_delimiter = ',', value_parser = parse_influence)]
    influences: Option<Vec<Influence>>,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Estimator to fit; repeat for several.
    #[arg(long, value_enum, default_values_t = [EstimatorArg::Iso])]
    estimator: Vec<EstimatorArg>,
    #[arg(long, value_enum, default_value_t = SmoothingArg::None)]
    smoothing: SmoothingArg,
    /// Pseudo-count per cell: the Laplace correction for standard and
    /// isotonic fits, the MAP prior count for CML. Implies smoothing.
    #[arg(long)]
    prior_count: Option<f64>,
    /// Extreme-point limit for CML.
    #[arg(long, default_value_t = DEFAULT_EXTREME_CAP)]
    cap: usize,
    #[arg(long, default_value_t = EmOptions::default().tol)]
    em_tol: f64,
    #[arg(long, default_value_t = EmOptions::default().max_iter)]
    em_max_iter: usize,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    /// Plan JSON.
    #[arg(long)]
    plan: PathBuf,
    /// Overrides the plan seed.
    #[arg(long, env = "ORDEREDCPT_SEED")]
    seed: Option<u64>,
    /// Worker threads; all cores when absent.
    #[arg(long)]
    threads: Option<usize>,
    /// Report JSON; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the per-row summary as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct EnumerateArgs {
    /// Parent cardinalities, e.g. 3,3.
    #[arg(long, value_delimiter = ',', required = true)]
    parents: Vec<usize>,
    #[arg(long)]
    d_y: usize,
    #[arg(long, default_value_t = DEFAULT_EXTREME_CAP)]
    cap: usize,
    /// Include every labeling (1-based child values in configuration order).
    #[arg(long)]
    list: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CheckArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Pairs to compare; by default all comparable pairs for small spaces.
    #[arg(long, value_enum)]
    scope: Option<ScopeArg>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum EstimatorArg {
    Iso,
    Cml,
    Standard,
}

impl From<EstimatorArg> for Estimator {
    fn from(e: EstimatorArg) -> Self {
        match e {
            EstimatorArg::Iso => Estimator::Iso,
            EstimatorArg::Cml => Estimator::Cml,
            EstimatorArg::Standard => Estimator::Standard,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SmoothingArg {
    None,
    Laplace,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ScopeArg {
    Covering,
    All,
}

fn parse_influence(s: &str) -> Result<Influence, String> {
    match s {
        "+" | "positive" | "pos" => Ok(Influence::Positive),
        "-" | "negative" | "neg" => Ok(Influence::Negative),
        _ => Err(format!("`{s}` is not + or -")),
    }
}

/// Counts in the file's orientation, plus what is known about the source.
struct LoadedCounts {
    counts: CountTable,
    influences: InfluenceSpec,
    source: Source,
}

#[derive(Serialize)]
struct Source {
    kind: &'static str,
    path: PathBuf,
    records: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    dropped: Option<usize>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    binnings: Vec<ColumnBinning>,
}

fn load_input(args: &InputArgs) -> anyhow::Result<LoadedCounts> {
    let (counts, schema_signs, source) = if let Some(path) = &args.counts {
        let file =
            std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
        let counts = read_counts_csv(file, args.parents.as_deref(), args.d_y)?;
        let source = Source {
            kind: "counts",
            path: path.clone(),
            records: counts.grand_total(),
            dropped: None,
            binnings: Vec::new(),
        };
        (counts, None, source)
    } else {
        let (data, schema) = (
            args.dataset.as_ref().expect("clap"),
            args.schema.as_ref().expect("clap"),
        );
        let schema = DatasetSchema::from_json(
            &std::fs::read_to_string(schema)
                .with_context(|| format!("reading {}", schema.display()))?,
        )?;
        let raw = load_csv(data, &schema)?;
        let disc = raw.discretize()?;
        let space = disc.space()?;
        let counts = build_counts(&disc, &space)?;
        let source = Source {
            kind: "dataset",
            path: data.clone(),
            records: counts.grand_total(),
            dropped: Some(raw.dropped()),
            binnings: disc.binnings.clone(),
        };
        (counts, Some(disc.influences), source)
    };
    let k = counts.space().num_parents();
    let influences = match (&args.influences, schema_signs) {
        (Some(signs), _) => InfluenceSpec {
            signs: signs.clone(),
        },
        (None, Some(s)) => s,
        (None, None) => InfluenceSpec::all_positive(k),
    };
    if influences.signs.len() != k {
        return Err(Error::Config(format!(
            "{} influence signs for {k} parents",
            influences.signs.len()
        ))
        .into());
    }
    Ok(LoadedCounts {
        counts,
        influences,
        source,
    })
}

#[derive(Serialize)]
struct FitOutput {
    schema_version: u32,
    source: Source,
    influences: InfluenceSpec,
    smoothing: Smoothing,
    /// Reversals in the empirical distributions under the given influences.
    reversals: ReversalReport,
    fits: Vec<FitEntry>,
}

#[derive(Serialize)]
struct FitEntry {
    estimator: Estimator,
    family: FamilyFile,
    #[serde(skip_serializing_if = "Option::is_none")]
    em: Option<EmSummary>,
}

#[derive(Serialize)]
struct EmSummary {
    extreme_points: usize,
    iterations: usize,
    converged: bool,
    refine_steps: usize,
    gap: f64,
    loglik: f64,
}

fn fit(args: &FitArgs) -> anyhow::Result<()> {
    let input = load_input(&args.input)?;
    let smoothing = match (args.prior_count, args.smoothing) {
        (Some(a), _) if !(a >= 0.0 && a.is_finite()) => {
            return Err(Error::Config("--prior-count must be a nonnegative number".into()).into())
        }
        (Some(0.0), _) => Smoothing::None,
        (Some(a), _) => Smoothing::Laplace(a),
        (None, SmoothingArg::None) => Smoothing::None,
        (None, SmoothingArg::Laplace) => Smoothing::LAPLACE,
    };
    let perm = input.influences.reflection(input.counts.space())?;
    let oriented = input.counts.permute_configs(&perm);
    let reversals = reversals(&oriented, None)?;
    let em = EmOptions {
        tol: args.em_tol,
        max_iter: args.em_max_iter,
        ..EmOptions::default()
    };

    let mut estimators: Vec<Estimator> = Vec::new();
    for e in &args.estimator {
        let e = Estimator::from(*e);
        if !estimators.contains(&e) {
            estimators.push(e);
        }
    }
    let mut fits = Vec::new();
    for est in estimators {
        let (family, em_summary) = if est == Estimator::Cml {
            let extremes = enumerate_extreme_points(oriented.space(), oriented.d_y(), args.cap)?;
            let prior_count = match smoothing {
                Smoothing::None => 0.0,
                Smoothing::Laplace(a) => a,
            };
            let (family, report) = em_fit(&oriented, &extremes, &EmOptions { prior_count, ..em })?;
            if !report.converged && report.gap > em.tol {
                return Err(Error::Convergence {
                    cycles: report.iterations,
                    residual: report.gap,
                    last: family.as_flat().to_vec(),
                }
                .into());
            }
            let summary = EmSummary {
                extreme_points: extremes.len(),
                iterations: report.iterations,
                converged: report.converged,
                refine_steps: report.refine_steps,
                gap: report.gap,
                loglik: *report
                    .loglik_trace
                    .last()
                    .expect("trace starts with the initial value"),
            };
            (family, Some(summary))
        } else {
            (fit_estimator(est, &oriented, smoothing, None, &em)?, None)
        };
        fits.push(FitEntry {
            estimator: est,
            family: FamilyFile::from_family(&family.permute_configs(&perm), None),
            em: em_summary,
        });
    }
    let out = FitOutput {
        schema_version: SCHEMA_VERSION,
        source: input.source,
        influences: input.influences,
        smoothing,
        reversals,
        fits,
    };
    emit(&to_json_string(&out)?, args.out.as_deref())
}

fn reversals(
    oriented: &CountTable,
    scope: Option<ReversalScope>,
) -> orderedcpt::Result<ReversalReport> {
    detect_reversals_with(
        oriented,
        ReversalOptions {
            scope,
            skip_empty: true,
        },
    )
}

#[derive(Serialize)]
struct CheckOutput {
    schema_version: u32,
    source: Source,
    influences: InfluenceSpec,
    /// Configurations without data, skipped (1-based).
    empty_configs: Vec<Vec<usize>>,
    /// Reversed pairs use configurations in the file's orientation.
    #[serde(flatten)]
    report: ReversalReport,
}

fn check_order(args: &CheckArgs) -> anyhow::Result<()> {
    let input = load_input(&args.input)?;
    let space = input.counts.space().clone();
    let perm = input.influences.reflection(&space)?;
    let oriented = input.counts.permute_configs(&perm);
    let scope = args.scope.map(|s| match s {
        ScopeArg::Covering => ReversalScope::CoveringPairs,
        ScopeArg::All => ReversalScope::AllComparable,
    });
    let mut report = reversals(&oriented, scope)?;
    // back to the file's orientation; the reflection is an involution
    let unreflect =
        |c: &orderedcpt::lattice::Config| -> orderedcpt::Result<orderedcpt::lattice::Config> {
            space.config_at(perm[space.index_of(c)?])
        };
    for r in &mut report.pairs {
        r.lower = unreflect(&r.lower)?;
        r.upper = unreflect(&r.upper)?;
    }
    let empty_configs = (0..space.len())
        .filter(|&x| input.counts.total(x) == 0)
        .map(|x| space.config_at(x).map(|c| c.0))
        .collect::<orderedcpt::Result<_>>()?;
    let out = CheckOutput {
        schema_version: SCHEMA_VERSION,
        source: input.source,
        influences: input.influences,
        empty_configs,
        report,
    };
    emit(&to_json_string(&out)?, args.out.as_deref())
}

#[derive(Serialize)]
struct EnumerateOutput {
    schema_version: u32,
    parents: Vec<usize>,
    d_y: usize,
    count: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    labelings: Option<Vec<Vec<u16>>>,
}

fn enumerate(args: &EnumerateArgs) -> anyhow::Result<()> {
    let space = ParentSpace::new(args.parents.clone()).map_err(|e| Error::Config(e.to_string()))?;
    let set = enumerate_extreme_points(&space, args.d_y, args.cap)?;
    let labelings = args.list.then(|| {
        set.points()
            .map(|p| p.iter().map(|&v| v as u16 + 1).collect())
            .collect()
    });
    let out = EnumerateOutput {
        schema_version: SCHEMA_VERSION,
        parents: args.parents.clone(),
        d_y: args.d_y,
        count: set.len(),
        labelings,
    };
    emit(&to_json_string(&out)?, args.out.as_deref())
}

fn simulate(args: &ExperimentArgs) -> anyhow::Result<()> {
    let mut plan = SimulationPlanFile::load(&args.plan)?;
    if let Some(seed) = args.seed {
        plan.seed = seed;
    }
    let report = run_simulation(&plan, threads(args)?)?;
    write_report(&report, args)
}

fn holdout(args: &ExperimentArgs) -> anyhow::Result<()> {
    let mut loaded = HoldoutPlanFile::load(&args.plan)?;
    if let Some(seed) = args.seed {
        loaded.plan.seed = seed;
    }
    let mut report = run_holdout(&loaded.plan, &loaded.data, threads(args)?)?;
    report.dataset = Some(loaded.summary);
    write_report(&report, args)
}

fn threads(args: &ExperimentArgs) -> anyhow::Result<Option<usize>> {
    match args.threads {
        Some(0) => bail!(Error::Config("--threads must be positive".into())),
        t => Ok(t),
    }
}

fn write_report(report: &ExperimentReport, args: &ExperimentArgs) -> anyhow::Result<()> {
    if let Some(path) = &args.csv {
        let file =
            std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
        write_report_csv(report, file)?;
    }
    emit(&to_json_string(report)?, args.out.as_deref())
}

fn emit(text: &str, out: Option<&Path>) -> anyhow::Result<()> {
    match out {
        Some(path) => {
            std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
        }
        None => {
            use std::io::Write;
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            stdout.flush()?;
            Ok(())
        }
    }
}

/// 2 configuration, 3 data, 4 convergence, 5 enumeration cap, 1 otherwise.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(
            Error::Config(_) | Error::InvalidInput(_) | Error::Json(_) | Error::OracleScale { .. },
        ) => 2,
        Some(
            Error::Parse { .. }
            | Error::Range { .. }
            | Error::Discretization(_)
            | Error::ZeroCount { .. }
            | Error::Csv(_)
            | Error::Io(_),
        ) => 3,
        Some(Error::Convergence { .. }) => 4,
        Some(Error::EnumerationCap { .. }) => 5,
        Some(Error::Internal(_)) => 1,
        None if err.downcast_ref::<std::io::Error>().is_some() => 3,
        None => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Fit(a) => fit(a),
        Command::Simulate(a) => simulate(a),
        Command::Holdout(a) => holdout(a),
        Command::EnumerateExtremes(a) => enumerate(a),
        Command::CheckOrder(a) => check_order(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
