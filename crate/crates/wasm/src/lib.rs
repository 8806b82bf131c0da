//! Browser bindings. Every operation takes and returns JSON text so the page
//! needs no generated glue beyond strings.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

use orderedcpt::cml_mixture::{enumerate_extreme_points, DEFAULT_EXTREME_CAP};
use orderedcpt::experiments::{
    fit_estimator, run_simulation, sample_counts, Estimator, SimulationPlan, Variant,
};
use orderedcpt::io::FamilyFile;
use orderedcpt::metrics::summed_hellinger;
use orderedcpt::pav::{pav, Direction, WeightedSequence};

type Out = Result<String, String>;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn to_json(v: &impl Serialize) -> Out {
    serde_json::to_string(v).map_err(err)
}

#[derive(Deserialize)]
struct PavRequest {
    values: Vec<f64>,
    #[serde(default)]
    weights: Option<Vec<f64>>,
    #[serde(default)]
    decreasing: bool,
}

#[derive(Serialize)]
struct PavResponse {
    fitted: Vec<f64>,
    blocks: usize,
}

pub fn pav_json(request: &str) -> Out {
    let req: PavRequest = serde_json::from_str(request).map_err(err)?;
    let weights = req.weights.unwrap_or_else(|| vec![1.0; req.values.len()]);
    let seq = WeightedSequence::new(req.values, weights).map_err(err)?;
    let direction = if req.decreasing {
        Direction::Antitonic
    } else {
        Direction::Isotonic
    };
    let fitted = pav(&seq, direction);
    let blocks = if fitted.is_empty() {
        0
    } else {
        1 + fitted.windows(2).filter(|w| w[0] != w[1]).count()
    };
    to_json(&PavResponse { fitted, blocks })
}

#[derive(Deserialize)]
struct SampleRequest {
    family: FamilyFile,
    n: usize,
    seed: u64,
    #[serde(default)]
    laplace: bool,
}

#[derive(Serialize)]
struct SampleResponse {
    parents: Vec<usize>,
    d_y: usize,
    counts: Vec<Vec<u64>>,
    truth: Vec<Vec<f64>>,
    fits: Vec<SampleFit>,
}

#[derive(Serialize)]
struct SampleFit {
    estimator: Estimator,
    probs: Vec<Vec<f64>>,
    hellinger: f64,
}

fn rows<T: Clone>(flat: &[T], d_y: usize) -> Vec<Vec<T>> {
    flat.chunks(d_y).map(<[T]>::to_vec).collect()
}

pub fn sample_and_fit_json(request: &str) -> Out {
    let req: SampleRequest = serde_json::from_str(request).map_err(err)?;
    let truth = req.family.to_family().map_err(err)?;
    let mut rng = ChaCha8Rng::seed_from_u64(req.seed);
    let counts = sample_counts(&truth, req.n, &mut rng).map_err(err)?;
    let smoothing = if req.laplace {
        Variant::Laplace
    } else {
        Variant::None
    }
    .smoothing();
    let extremes =
        enumerate_extreme_points(truth.space(), truth.d_y(), DEFAULT_EXTREME_CAP).map_err(err)?;
    let fits = Estimator::ALL
        .iter()
        .map(|&est| {
            let f = fit_estimator(
                est,
                &counts,
                smoothing,
                Some(&extremes),
                &Default::default(),
            )
            .map_err(err)?;
            Ok(SampleFit {
                estimator: est,
                hellinger: summed_hellinger(&truth, &f).map_err(err)?,
                probs: rows(f.as_flat(), f.d_y()),
            })
        })
        .collect::<Result<Vec<_>, String>>()?;
    to_json(&SampleResponse {
        parents: truth.space().cardinalities().to_vec(),
        d_y: truth.d_y(),
        counts: rows(counts.as_flat(), counts.d_y()),
        truth: rows(truth.as_flat(), truth.d_y()),
        fits,
    })
}

#[derive(Deserialize)]
struct CurveRequest {
    family: FamilyFile,
    sample_sizes: Vec<usize>,
    replications: usize,
    seed: u64,
    #[serde(default)]
    laplace: bool,
    #[serde(default)]
    reverse_constraints: bool,
}

pub fn simulate_json(request: &str) -> Out {
    let req: CurveRequest = serde_json::from_str(request).map_err(err)?;
    let mut plan = SimulationPlan::new(req.family.to_family().map_err(err)?);
    plan.sample_sizes = req.sample_sizes;
    plan.replications = req.replications;
    plan.seed = req.seed;
    plan.reverse_constraints = req.reverse_constraints;
    plan.variants = vec![if req.laplace {
        Variant::Laplace
    } else {
        Variant::None
    }];
    let report = run_simulation(&plan, None).map_err(err)?;
    to_json(&report.summary)
}

fn js(r: Out) -> Result<String, JsError> {
    r.map_err(|e| JsError::new(&e))
}

/// Monotone least-squares fit of `{values, weights?, decreasing?}`.
#[wasm_bindgen(js_name = pavFit)]
pub fn pav_fit(request: &str) -> Result<String, JsError> {
    js(pav_json(request))
}

/// Sample `n` observations per configuration and fit all three estimators.
#[wasm_bindgen(js_name = sampleAndFit)]
pub fn sample_and_fit(request: &str) -> Result<String, JsError> {
    js(sample_and_fit_json(request))
}

/// Mean summed Hellinger distance per estimator and sample size.
#[wasm_bindgen(js_name = simulateCurve)]
pub fn simulate_curve(request: &str) -> Result<String, JsError> {
    js(simulate_json(request))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::Value;

    const FAMILY: &str = r#"{"schema_version": 1, "parents": [3, 3], "d_y": 3,
        "layers": [[0.7,0.2,0.1],[0.5,0.3,0.2],[0.3,0.4,0.3],[0.2,0.3,0.5],[0.1,0.2,0.7]]}"#;

    #[test]
    fn pav_pools_violators() {
        let v: Value =
            serde_json::from_str(&pav_json(r#"{"values": [1, 3, 2, 4]}"#).unwrap()).unwrap();
        assert_eq!(v["fitted"], serde_json::json!([1.0, 2.5, 2.5, 4.0]));
        assert_eq!(v["blocks"], 3);
        let v: Value = serde_json::from_str(
            &pav_json(r#"{"values": [1, 3], "weights": [3, 1], "decreasing": true}"#).unwrap(),
        )
        .unwrap();
        assert_eq!(v["fitted"], serde_json::json!([1.5, 1.5]));
    }

    #[test]
    fn pav_rejects_bad_weights() {
        assert!(pav_json(r#"{"values": [1, 2], "weights": [1]}"#).is_err());
        assert!(pav_json("not json").is_err());
    }

    #[test]
    fn sample_fits_three_estimators() {
        let req = format!(r#"{{"family": {FAMILY}, "n": 10, "seed": 4, "laplace": true}}"#);
        let v: Value = serde_json::from_str(&sample_and_fit_json(&req).unwrap()).unwrap();
        assert_eq!(v["counts"].as_array().unwrap().len(), 9);
        for row in v["counts"].as_array().unwrap() {
            assert_eq!(
                row.as_array()
                    .unwrap()
                    .iter()
                    .map(|c| c.as_u64().unwrap())
                    .sum::<u64>(),
                10
            );
        }
        let fits = v["fits"].as_array().unwrap();
        assert_eq!(fits.len(), 3);
        assert!(fits.iter().all(|f| f["hellinger"].as_f64().unwrap() >= 0.0));
        // same seed, same answer
        assert_eq!(
            sample_and_fit_json(&req).unwrap(),
            sample_and_fit_json(&req).unwrap()
        );
    }

    #[test]
    fn curve_has_a_row_per_cell() {
        let req = format!(
            r#"{{"family": {FAMILY}, "sample_sizes": [5, 20], "replications": 3, "seed": 1}}"#
        );
        let v: Value = serde_json::from_str(&simulate_json(&req).unwrap()).unwrap();
        assert_eq!(v.as_array().unwrap().len(), 6);
        assert!(simulate_json(&req.replace("\"replications\": 3", "\"replications\": 0")).is_err());
    }
}
