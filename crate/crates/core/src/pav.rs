//! Weighted isotonic / antitonic regression on a chain (Pool Adjacent Violators).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Longest sequence [`monotone_qp_oracle`] accepts by default.
pub const PAV_ORACLE_CAP: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// Nondecreasing fit.
    Isotonic,
    /// Nonincreasing fit.
    Antitonic,
}

impl Direction {
    /// True when `before` followed by `after` breaks the required order.
    #[inline]
    fn violates(self, before: f64, after: f64) -> bool {
        match self {
            Direction::Isotonic => before > after,
            Direction::Antitonic => before < after,
        }
    }

    pub fn reverse(self) -> Self {
        match self {
            Direction::Isotonic => Direction::Antitonic,
            Direction::Antitonic => Direction::Isotonic,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightedSequence {
    values: Vec<f64>,
    weights: Vec<f64>,
}

impl WeightedSequence {
    pub fn new(values: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if values.len() != weights.len() {
            return Err(Error::invalid(format!(
                "{} values but {} weights",
                values.len(),
                weights.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("values must be finite"));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::invalid("weights must be finite and nonnegative"));
        }
        if !weights.iter().any(|&w| w > 0.0) {
            return Err(Error::invalid("at least one weight must be positive"));
        }
        Ok(WeightedSequence { values, weights })
    }

    pub fn unit(values: Vec<f64>) -> Result<Self> {
        let weights = vec![1.0; values.len()];
        Self::new(values, weights)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn reversed(&self) -> Self {
        WeightedSequence {
            values: self.values.iter().rev().copied().collect(),
            weights: self.weights.iter().rev().copied().collect(),
        }
    }
}

pub fn pav_isotonic(seq: &WeightedSequence) -> Vec<f64> {
    pav(seq, Direction::Isotonic)
}

pub fn pav_antitonic(seq: &WeightedSequence) -> Vec<f64> {
    pav(seq, Direction::Antitonic)
}

pub fn pav(seq: &WeightedSequence, direction: Direction) -> Vec<f64> {
    let mut out = seq.values.clone();
    let mut scratch = Vec::new();
    fit_in_place(&mut out, &seq.weights, direction, &mut scratch);
    out
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Block {
    sum_wv: f64,
    weight: f64,
    /// Sum of raw values, used only when the whole block has zero weight.
    sum_v: f64,
    len: usize,
    mean: f64,
}

impl Block {
    fn merge(self, other: Block) -> Block {
        let sum_wv = self.sum_wv + other.sum_wv;
        let weight = self.weight + other.weight;
        let sum_v = self.sum_v + other.sum_v;
        let len = self.len + other.len;
        let mean = if weight > 0.0 {
            sum_wv / weight
        } else {
            sum_v / len as f64
        };
        Block {
            sum_wv,
            weight,
            sum_v,
            len,
            mean,
        }
    }
}

/// Stack-of-blocks PAV, O(n). Overwrites `values` with the fit.
///
/// Zero weights never produce 0/0: a zero-weight entry that must be pooled
/// takes the mean of the positive-weight block it joins, and a pool made only
/// of zero-weight entries takes their plain average. Equal neighbours are not
/// pooled.
pub(crate) fn fit_in_place(
    values: &mut [f64],
    weights: &[f64],
    direction: Direction,
    stack: &mut Vec<Block>,
) {
    stack.clear();
    for (&v, &w) in values.iter().zip(weights) {
        let mut top = Block {
            sum_wv: w * v,
            weight: w,
            sum_v: v,
            len: 1,
            mean: v,
        };
        while let Some(&prev) = stack.last() {
            if !direction.violates(prev.mean, top.mean) {
                break;
            }
            stack.pop();
            top = prev.merge(top);
        }
        stack.push(top);
    }
    let mut i = 0;
    for b in stack.iter() {
        values[i..i + b.len].fill(b.mean);
        i += b.len;
    }
}

/// Brute-force weighted monotone least squares, independent of PAV pooling.
///
/// The optimum is constant on contiguous blocks and equals each block's
/// weighted mean, so enumerating all `2^(n-1)` contiguous partitions, keeping
/// those whose block means respect the direction, and taking the one with the
/// smallest objective is exact.
pub fn monotone_qp_oracle(seq: &WeightedSequence, direction: Direction) -> Result<Vec<f64>> {
    monotone_qp_oracle_capped(seq, direction, PAV_ORACLE_CAP)
}

pub fn monotone_qp_oracle_capped(
    seq: &WeightedSequence,
    direction: Direction,
    cap: usize,
) -> Result<Vec<f64>> {
    let n = seq.len();
    if n > cap || n > 30 {
        return Err(Error::OracleScale { size: n, cap });
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let g = &seq.values;
    let w = &seq.weights;
    let mut best: Option<(f64, Vec<f64>)> = None;
    // Bit i set means a cut between positions i and i + 1.
    for cuts in 0u32..(1u32 << (n - 1)) {
        let mut fit = Vec::with_capacity(n);
        let mut start = 0;
        let mut ok = true;
        for end in 1..=n {
            let is_cut = end == n || cuts & (1 << (end - 1)) != 0;
            if !is_cut {
                continue;
            }
            let bw: f64 = w[start..end].iter().sum();
            if bw <= 0.0 {
                ok = false;
                break;
            }
            let mean = g[start..end]
                .iter()
                .zip(&w[start..end])
                .map(|(v, x)| v * x)
                .sum::<f64>()
                / bw;
            if let Some(&last) = fit.last() {
                if direction.violates(last, mean) {
                    ok = false;
                    break;
                }
            }
            fit.extend(std::iter::repeat_n(mean, end - start));
            start = end;
        }
        if !ok {
            continue;
        }
        let obj: f64 = fit
            .iter()
            .zip(g)
            .zip(w)
            .map(|((f, v), x)| x * (f - v) * (f - v))
            .sum();
        if best.as_ref().is_none_or(|(b, _)| obj < *b) {
            best = Some((obj, fit));
        }
    }
    best.map(|(_, f)| f)
        .ok_or_else(|| Error::Internal("no feasible partition".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seq(g: &[f64], w: &[f64]) -> WeightedSequence {
        WeightedSequence::new(g.to_vec(), w.to_vec()).unwrap()
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn isotonic_examples() {
        assert_eq!(
            pav_isotonic(&seq(&[1., 2., 3.], &[1., 1., 1.])),
            vec![1., 2., 3.]
        );
        assert!(close(
            &pav_isotonic(&seq(&[3., 1., 2.], &[1., 1., 1.])),
            &[2., 2., 2.],
            1e-12
        ));
        assert!(close(
            &pav_isotonic(&seq(&[0.8, 0.2], &[1., 3.])),
            &[0.35, 0.35],
            1e-12
        ));
    }

    #[test]
    fn antitonic_examples() {
        assert_eq!(
            pav_antitonic(&seq(&[0.9, 0.5, 0.1], &[1., 1., 1.])),
            vec![0.9, 0.5, 0.1]
        );
        assert!(close(
            &pav_antitonic(&seq(&[0.2, 0.8], &[1., 1.])),
            &[0.5, 0.5],
            1e-12
        ));
        assert!(close(
            &pav_antitonic(&seq(&[0.2, 0.8, 0.5], &[1., 1., 2.])),
            &[0.5, 0.5, 0.5],
            1e-12
        ));
    }

    #[test]
    fn oracle_examples() {
        let s = seq(&[3., 1., 2.], &[1., 1., 1.]);
        assert!(close(
            &monotone_qp_oracle(&s, Direction::Isotonic).unwrap(),
            &[2., 2., 2.],
            1e-12
        ));
        let s = seq(&[1., 0.], &[1., 1.]);
        assert!(close(
            &monotone_qp_oracle(&s, Direction::Isotonic).unwrap(),
            &[0.5, 0.5],
            1e-12
        ));
        let s = seq(&[0.1, 0.4, 0.4, 2.0], &[1., 2., 1., 0.5]);
        assert_eq!(
            monotone_qp_oracle(&s, Direction::Isotonic).unwrap(),
            s.values().to_vec()
        );
        let long = WeightedSequence::unit(vec![0.0; 9]).unwrap();
        assert!(matches!(
            monotone_qp_oracle(&long, Direction::Isotonic),
            Err(Error::OracleScale { size: 9, cap: 8 })
        ));
    }

    #[test]
    fn invalid_sequences() {
        assert!(WeightedSequence::new(vec![1., 2.], vec![0., 0.]).is_err());
        assert!(WeightedSequence::new(vec![1., 2.], vec![1.]).is_err());
        assert!(WeightedSequence::new(vec![1.], vec![-1.]).is_err());
        assert!(WeightedSequence::new(vec![f64::NAN], vec![1.]).is_err());
    }

    #[test]
    fn zero_weights_are_absorbed() {
        // zero-weight entry between violators takes the pooled mean
        let out = pav_isotonic(&seq(&[0.9, 5.0, 0.1], &[1., 0., 1.]));
        assert!(close(&out, &[0.5, 0.5, 0.5], 1e-12));
        // zero-weight entry that violates nothing keeps its value
        let out = pav_isotonic(&seq(&[0.1, 0.3, 0.9], &[1., 0., 1.]));
        assert_eq!(out, vec![0.1, 0.3, 0.9]);
        // zero-weight tail joins the last positive block
        let out = pav_isotonic(&seq(&[0.6, 0.2, 0.0], &[1., 1., 0.]));
        assert!(close(&out, &[0.4, 0.4, 0.4], 1e-12));
        // pooling two zero-weight entries still produces finite output
        let mut v = vec![2.0, 1.0];
        fit_in_place(&mut v, &[0.0, 0.0], Direction::Isotonic, &mut Vec::new());
        assert_eq!(v, vec![1.5, 1.5]);
    }

    fn arb_seq(max_len: usize) -> impl Strategy<Value = WeightedSequence> {
        (1..=max_len).prop_flat_map(|n| {
            (
                prop::collection::vec(-5.0f64..5.0, n),
                prop::collection::vec(0.05f64..4.0, n),
            )
                .prop_map(|(g, w)| WeightedSequence::new(g, w).unwrap())
        })
    }

    proptest! {
        #[test]
        fn output_is_monotone_and_bounded(s in arb_seq(40)) {
            let lo = s.values().iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = s.values().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let iso = pav_isotonic(&s);
            let anti = pav_antitonic(&s);
            prop_assert_eq!(iso.len(), s.len());
            for p in iso.windows(2) {
                prop_assert!(p[0] <= p[1] + 1e-12);
            }
            for p in anti.windows(2) {
                prop_assert!(p[0] + 1e-12 >= p[1]);
            }
            for v in iso.iter().chain(&anti) {
                prop_assert!(*v >= lo - 1e-12 && *v <= hi + 1e-12);
            }
        }

        #[test]
        fn weighted_mean_is_conserved(s in arb_seq(40)) {
            let before: f64 = s.values().iter().zip(s.weights()).map(|(v, w)| v * w).sum();
            for fit in [pav_isotonic(&s), pav_antitonic(&s)] {
                let after: f64 = fit.iter().zip(s.weights()).map(|(v, w)| v * w).sum();
                prop_assert!((before - after).abs() <= 1e-9);
            }
        }

        #[test]
        fn idempotent(s in arb_seq(40)) {
            let once = pav_isotonic(&s);
            let again = pav_isotonic(&WeightedSequence::new(once.clone(), s.weights().to_vec()).unwrap());
            prop_assert_eq!(once, again);
        }

        #[test]
        fn antitonic_is_reversed_isotonic(s in arb_seq(30)) {
            let mut via_iso = pav_isotonic(&s.reversed());
            via_iso.reverse();
            prop_assert!(close(&pav_antitonic(&s), &via_iso, 1e-12));
        }

        #[test]
        fn agrees_with_oracle(s in arb_seq(8)) {
            for dir in [Direction::Isotonic, Direction::Antitonic] {
                let oracle = monotone_qp_oracle(&s, dir).unwrap();
                prop_assert!(close(&pav(&s, dir), &oracle, 1e-7));
            }
        }
    }
}
