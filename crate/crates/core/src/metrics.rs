//! Distances between fitted and true distributions, and held-out log-loss.

use crate::error::{Error, Result};
use crate::estimators::{DistributionFamily, Observation};

/// `Σ_y (√p(y) − √q(y))²`.
///
/// This is the squared form without the conventional ½ factor or outer square
/// root, so it ranges over `[0, 2]` rather than `[0, 1]`.
pub fn hellinger(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::invalid(format!(
            "support sizes differ: {} vs {}",
            p.len(),
            q.len()
        )));
    }
    Ok(p.iter()
        .zip(q)
        .map(|(a, b)| {
            let d = a.sqrt() - b.sqrt();
            d * d
        })
        .sum())
}

/// [`hellinger`] summed over every parent configuration.
pub fn summed_hellinger(truth: &DistributionFamily, fitted: &DistributionFamily) -> Result<f64> {
    if truth.space() != fitted.space() || truth.d_y() != fitted.d_y() {
        return Err(Error::invalid("families have different shapes"));
    }
    (0..truth.space().len())
        .map(|x| hellinger(truth.column(x), fitted.column(x)))
        .sum()
}

/// Mean negative natural-log probability of the test cases. A case with
/// probability zero makes the loss `+∞`.
pub fn log_loss(fitted: &DistributionFamily, test: &[Observation]) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::invalid("empty test set"));
    }
    let mut total = 0.0;
    for o in test {
        if o.y >= fitted.d_y() || o.x >= fitted.space().len() {
            return Err(Error::invalid(format!(
                "test case {o:?} outside the family"
            )));
        }
        total -= fitted.prob(o.y, o.x).ln();
    }
    Ok(total / test.len() as f64)
}
