use std::path::{Path, PathBuf};

use proptest::prelude::*;

use orderedcpt::dataset::{discretize_equal_frequency, read_csv, DatasetSchema};
use orderedcpt::estimators::CountTable;
use orderedcpt::experiments::{
    run_simulation, Estimator, ExperimentReport, SimulationPlan, Variant,
};
use orderedcpt::io::{
    read_counts_csv, to_json_string, write_counts_csv, FamilyFile, SimulationPlanFile,
};
use orderedcpt::lattice::ParentSpace;

fn data(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../data")
        .join(rel)
}

fn large_margin(sizes: Vec<usize>, replications: usize) -> SimulationPlan {
    let family = FamilyFile::load(data("families/large_margin.json"))
        .unwrap()
        .to_family()
        .unwrap();
    let mut plan = SimulationPlan::new(family);
    plan.sample_sizes = sizes;
    plan.replications = replications;
    plan.seed = 17;
    plan
}

fn rev(report: &ExperimentReport, n: usize) -> f64 {
    report
        .row(Estimator::Standard, Variant::None, n)
        .unwrap()
        .rev_pct
}

#[test]
fn reversals_fade_with_sample_size() {
    let mut plan = large_margin(vec![5, 100], 100);
    plan.estimators = vec![Estimator::Standard];
    let report = run_simulation(&plan, None).unwrap();
    assert!(
        rev(&report, 5) >= rev(&report, 100),
        "{} vs {}",
        rev(&report, 5),
        rev(&report, 100)
    );
}

#[test]
fn every_constrained_fit_succeeds_and_summaries_recompute() {
    let mut plan = large_margin(vec![5, 20], 12);
    plan.variants = vec![Variant::None, Variant::Laplace];
    let report = run_simulation(&plan, Some(2)).unwrap();
    assert_eq!(report.records.len(), 2 * 3 * 2 * 12);
    assert!(report
        .records
        .iter()
        .all(|r| r.error.is_none() && r.value.is_some()));
    for row in &report.summary {
        let vals: Vec<f64> = report
            .records
            .iter()
            .filter(|r| {
                r.estimator == row.estimator && r.smoothing == row.smoothing && r.n == row.n
            })
            .filter_map(|r| r.value)
            .collect();
        let m = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / m;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0);
        assert_eq!(row.mean, Some(mean));
        assert_eq!(row.stderr, Some((var / m).sqrt()));
    }
}

#[test]
fn reports_do_not_depend_on_thread_count() {
    let plan = large_margin(vec![5, 10], 8);
    let one = to_json_string(&run_simulation(&plan, Some(1)).unwrap()).unwrap();
    let four = to_json_string(&run_simulation(&plan, Some(4)).unwrap()).unwrap();
    assert_eq!(one, four);
}

#[test]
fn shipped_plans_load() {
    for name in [
        "simulate_small_margin",
        "simulate_large_margin",
        "simulate_small_margin_reversed",
        "simulate_large_margin_reversed",
    ] {
        let plan = SimulationPlanFile::load(data(&format!("plans/{name}.json"))).unwrap();
        assert_eq!(plan.generating.space().cardinalities(), &[3, 3]);
        assert_eq!(plan.replications, 100);
    }
}

#[test]
fn ingestion_accounts_for_every_row() {
    let schema = DatasetSchema::from_json(
        r#"{"schema_version": 1, "columns": [
            {"name": "a", "role": "parent", "kind": "continuous", "bins": 2},
            {"name": "y", "role": "child", "cardinality": 2}
        ]}"#,
    )
    .unwrap();
    let text = "a,y\n1.5,1\nNA,2\n2.5,2\n,1\n0.5,?\n3.5,2\n";
    let file = read_csv(text.as_bytes(), &schema).unwrap();
    assert_eq!(file.len() + file.dropped(), 6);
    assert_eq!(file.dropped(), 3);
}

#[test]
fn counts_csv_round_trip() {
    let space = ParentSpace::new(vec![2, 3]).unwrap();
    let flat: Vec<u64> = (0..12).map(|i| (i * 7 % 5) as u64).collect();
    let counts = CountTable::from_flat(space, 2, flat).unwrap();
    let mut buf = Vec::new();
    write_counts_csv(&counts, &mut buf).unwrap();
    let back = read_counts_csv(buf.as_slice(), Some(&[2, 3]), Some(2)).unwrap();
    assert_eq!(back, counts);
}

proptest! {
    #[test]
    fn binning_preserves_order(values in prop::collection::vec(-100.0..100.0f64, 4..60), bins in 2..6usize) {
        let Ok(d) = discretize_equal_frequency(&values, bins) else {
            // too few distinct values is a reported error
            return Ok(());
        };
        for (i, a) in values.iter().enumerate() {
            for (j, b) in values.iter().enumerate() {
                if a <= b {
                    prop_assert!(d.labels[i] <= d.labels[j]);
                }
            }
        }
        prop_assert!(d.labels.iter().all(|&l| (1..=bins).contains(&l)));
    }

    #[test]
    fn family_json_round_trips_exactly(raw in prop::collection::vec(0.01..1.0f64, 12)) {
        let space = ParentSpace::new(vec![2, 2]).unwrap();
        let cols: Vec<Vec<f64>> = raw
            .chunks(3)
            .map(|c| {
                let s: f64 = c.iter().sum();
                c.iter().map(|v| v / s).collect()
            })
            .collect();
        let family = orderedcpt::estimators::DistributionFamily::from_columns(space, 3, cols).unwrap();
        let file = FamilyFile::from_family(&family, None);
        let parsed = FamilyFile::from_json(&to_json_string(&file).unwrap()).unwrap();
        prop_assert_eq!(&parsed, &file);
        // loading renormalizes each column, which may move the last bit
        let back = parsed.to_family().unwrap();
        for (a, b) in back.as_flat().iter().zip(family.as_flat()) {
            prop_assert!((a - b).abs() <= 1e-15);
        }
    }
}
