//! Isotonic / antitonic regression under the product order.
//!
//! [`ir_product_order`] is the cyclic algorithm of Dykstra and Robertson: each
//! parent axis in turn gets a chain-wise PAV fit of the data plus the
//! increments left behind by the other axes, until the increments stop moving.
//! [`minmax_oracle`] evaluates the lower/upper-set characterization
//! `g*(x) = max_{L ∋ x} min_{U ∋ x} Av(L ∩ U)` by brute force and is only meant
//! for tests.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{ParentSpace, Poset, ORACLE_CAP};
use crate::nnls::nnls;
use crate::pav::{fit_in_place, Block, Direction};

/// A real function on the configurations of a [`ParentSpace`], with weights.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeFunction {
    space: ParentSpace,
    values: Vec<f64>,
    weights: Vec<f64>,
}

impl LatticeFunction {
    pub fn new(space: ParentSpace, values: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        let n = space.len();
        if values.len() != n || weights.len() != n {
            return Err(Error::invalid(format!(
                "expected {n} values and weights, got {} and {}",
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
        Ok(LatticeFunction {
            space,
            values,
            weights,
        })
    }

    pub fn space(&self) -> &ParentSpace {
        &self.space
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterOptions {
    /// Stop once no increment moved by this much over a full cycle.
    pub tol: f64,
    pub max_cycles: usize,
}

impl Default for IterOptions {
    fn default() -> Self {
        IterOptions {
            tol: 1e-8,
            max_cycles: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProductFit {
    pub values: Vec<f64>,
    pub cycles: usize,
    /// Largest increment change in the final cycle.
    pub residual: f64,
    /// Chain PAV calls made inside the repeat loop (excludes the final
    /// re-projection).
    pub cycle_pav_calls: usize,
    /// Whether the result was replaced by exact block averages.
    pub snapped: bool,
}

/// Feasibility slack accepted for the exact block-average solution.
const SNAP_FEASIBILITY: f64 = 1e-12;
const MAX_POLISH_SWEEPS: usize = 1000;
/// Largest violation of the requested order over covering pairs.
pub fn max_violation(space: &ParentSpace, direction: Direction, values: &[f64]) -> f64 {
    space
        .covering_pairs()
        .into_iter()
        .map(|(a, b)| match direction {
            Direction::Isotonic => values[a] - values[b],
            Direction::Antitonic => values[b] - values[a],
        })
        .fold(0.0, f64::max)
}

/// Weighted least-squares regression of `f` onto the functions monotone in
/// the product order.
///
/// When some weights are zero the chain sweeps cannot pass violations across
/// weightless configurations, so that case is solved directly: the weighted
/// configurations through the dual of their regression, the rest clamped
/// between their weighted neighbours.
pub fn ir_product_order(
    f: &LatticeFunction,
    direction: Direction,
    opts: &IterOptions,
) -> Result<ProductFit> {
    if opts.tol.is_nan() || opts.tol <= 0.0 {
        return Err(Error::invalid("tolerance must be positive"));
    }
    let space = &f.space;
    let n = space.len();
    let k = space.num_parents();
    if k == 0 {
        return Ok(ProductFit {
            values: f.values.clone(),
            cycles: 0,
            residual: 0.0,
            cycle_pav_calls: 0,
            snapped: false,
        });
    }

    if f.weights.contains(&0.0) {
        return Ok(weightless_fit(f, direction));
    }

    let mut increments = vec![vec![0.0; n]; k];
    let mut shifted = vec![0.0; n];
    let mut fitted = vec![0.0; n];
    let mut scratch = AxisScratch::default();
    let mut pav_calls = 0;
    let mut residual = f64::INFINITY;

    for cycle in 1..=opts.max_cycles {
        residual = 0.0;
        for j in 0..k {
            for x in 0..n {
                let others: f64 = (0..k).filter(|&i| i != j).map(|i| increments[i][x]).sum();
                shifted[x] = f.values[x] + others;
            }
            fitted.copy_from_slice(&shifted);
            pav_calls += scratch.fit_axis(space, j, &mut fitted, &f.weights, direction);
            for x in 0..n {
                let next = fitted[x] - shifted[x];
                residual = residual.max((next - increments[j][x]).abs());
                increments[j][x] = next;
            }
        }
        if residual < opts.tol {
            for j in 0..k {
                scratch.fit_axis(space, j, &mut fitted, &f.weights, direction);
            }
            let (values, snapped) = match snap_to_blocks(f, direction, &fitted, opts.tol) {
                Some(v) => (v, true),
                None => {
                    // Plain alternating sweeps from a nearly feasible point
                    // shrink the remaining violations geometrically.
                    for _ in 0..MAX_POLISH_SWEEPS {
                        if max_violation(space, direction, &fitted) <= SNAP_FEASIBILITY {
                            break;
                        }
                        for j in 0..k {
                            scratch.fit_axis(space, j, &mut fitted, &f.weights, direction);
                        }
                    }
                    (fitted, false)
                }
            };
            return Ok(ProductFit {
                values,
                cycles: cycle,
                residual,
                cycle_pav_calls: pav_calls,
                snapped,
            });
        }
    }
    Err(Error::Convergence {
        cycles: opts.max_cycles,
        residual,
        last: fitted,
    })
}

fn weightless_fit(f: &LatticeFunction, direction: Direction) -> ProductFit {
    let space = &f.space;
    let (g, w) = (&f.values, &f.weights);
    let pos: Vec<usize> = (0..space.len()).filter(|&x| w[x] > 0.0).collect();
    let m = pos.len();
    // (p, q) with the constraint f(p) ≥ f(q), over covers of the induced order
    let mut pairs = Vec::new();
    for (i, &a) in pos.iter().enumerate() {
        for &b in &pos[i + 1..] {
            let (lo, hi) = match (space.leq(a, b), space.leq(b, a)) {
                (true, _) => (a, b),
                (_, true) => (b, a),
                _ => continue,
            };
            let covered = pos
                .iter()
                .any(|&c| c != lo && c != hi && space.leq(lo, c) && space.leq(c, hi));
            if !covered {
                pairs.push(match direction {
                    Direction::Antitonic => (lo, hi),
                    Direction::Isotonic => (hi, lo),
                });
            }
        }
    }
    let slot = |x: usize| pos.binary_search(&x).expect("weighted configuration");
    let cols: Vec<Vec<f64>> = pairs
        .iter()
        .map(|&(p, q)| {
            let mut c = vec![0.0; m];
            c[slot(p)] = 1.0 / w[p].sqrt();
            c[slot(q)] = -1.0 / w[q].sqrt();
            c
        })
        .collect();
    let target: Vec<f64> = pos.iter().map(|&x| -w[x].sqrt() * g[x]).collect();
    let lambda = nnls(&cols, &target);

    let mut out = g.clone();
    for (&(p, q), &l) in pairs.iter().zip(&lambda) {
        out[p] += l / w[p];
        out[q] -= l / w[q];
    }
    // active constraints join blocks that sit at their weighted mean
    let mut root: Vec<usize> = (0..space.len()).collect();
    fn find(root: &mut [usize], mut x: usize) -> usize {
        while root[x] != x {
            root[x] = root[root[x]];
            x = root[x];
        }
        x
    }
    for (&(p, q), &l) in pairs.iter().zip(&lambda) {
        if l > 0.0 {
            let (a, b) = (find(&mut root, p), find(&mut root, q));
            root[a.max(b)] = a.min(b);
        }
    }
    let mut sums = vec![(0.0, 0.0); space.len()];
    for &x in &pos {
        let r = find(&mut root, x);
        sums[r].0 += w[x] * g[x];
        sums[r].1 += w[x];
    }
    let mut snapped = out.clone();
    for &x in &pos {
        let (sv, sw) = sums[find(&mut root, x)];
        snapped[x] = sv / sw;
    }
    let exact = pairs
        .iter()
        .all(|&(p, q)| snapped[p] >= snapped[q] - SNAP_FEASIBILITY);
    if exact {
        out = snapped;
    }

    let mean =
        pos.iter().map(|&x| w[x] * g[x]).sum::<f64>() / pos.iter().map(|&x| w[x]).sum::<f64>();
    for z in (0..space.len()).filter(|&z| w[z] == 0.0) {
        let (mut above, mut below) = (f64::NEG_INFINITY, f64::INFINITY);
        for &x in &pos {
            // `above` bounds f(z) from below, `below` from above
            let (bounds_below, bounds_above) = match direction {
                Direction::Antitonic => (space.leq(z, x), space.leq(x, z)),
                Direction::Isotonic => (space.leq(x, z), space.leq(z, x)),
            };
            if bounds_below {
                above = above.max(out[x]);
            }
            if bounds_above {
                below = below.min(out[x]);
            }
        }
        out[z] = mean.min(below).max(above);
    }
    ProductFit {
        values: out,
        cycles: 0,
        residual: 0.0,
        cycle_pav_calls: 0,
        snapped: exact,
    }
}

#[derive(Default)]
struct AxisScratch {
    chain_v: Vec<f64>,
    chain_w: Vec<f64>,
    stack: Vec<Block>,
}

impl AxisScratch {
    /// Runs PAV along every chain parallel to `parent`'s axis. Returns the
    /// number of chains fitted.
    fn fit_axis(
        &mut self,
        space: &ParentSpace,
        parent: usize,
        values: &mut [f64],
        weights: &[f64],
        direction: Direction,
    ) -> usize {
        let stride = space.stride(parent);
        let d = space.cardinalities()[parent];
        let mut calls = 0;
        for start in space.chain_starts(parent) {
            self.chain_v.clear();
            self.chain_w.clear();
            for t in 0..d {
                self.chain_v.push(values[start + t * stride]);
                self.chain_w.push(weights[start + t * stride]);
            }
            fit_in_place(&mut self.chain_v, &self.chain_w, direction, &mut self.stack);
            for t in 0..d {
                values[start + t * stride] = self.chain_v[t];
            }
            calls += 1;
        }
        calls
    }
}

/// The exact regression is constant on connected level sets, each at the
/// weighted average of the data over that set. Groups configurations whose
/// approximate values are within a threshold along covering pairs, replaces
/// each group by its exact average, and keeps the result only if it satisfies
/// every covering constraint.
fn snap_to_blocks(
    f: &LatticeFunction,
    direction: Direction,
    approx: &[f64],
    tol: f64,
) -> Option<Vec<f64>> {
    let space = &f.space;
    let n = space.len();
    let (lo, hi) = f
        .values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
            (a.min(v), b.max(v))
        });
    let scale = (hi - lo).max(1.0);
    let threshold = (100.0 * tol).max(1e-9) * scale;

    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for (a, b) in space.covering_pairs() {
        if (approx[a] - approx[b]).abs() <= threshold {
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            if ra != rb {
                parent[ra.max(rb)] = ra.min(rb);
            }
        }
    }
    let mut sum_wv = vec![0.0; n];
    let mut sum_w = vec![0.0; n];
    for x in 0..n {
        let r = find(&mut parent, x);
        sum_wv[r] += f.weights[x] * f.values[x];
        sum_w[r] += f.weights[x];
    }
    let mut out = approx.to_vec();
    for (x, o) in out.iter_mut().enumerate() {
        let r = find(&mut parent, x);
        if sum_w[r] > 0.0 {
            *o = sum_wv[r] / sum_w[r];
        }
    }
    let feasible = max_violation(space, direction, &out) <= SNAP_FEASIBILITY;
    let near = out
        .iter()
        .zip(approx)
        .all(|(s, a)| (s - a).abs() <= 10.0 * threshold);
    (feasible && near).then_some(out)
}

/// Exact regression by evaluating the lower/upper-set min–max formula.
/// Limited to spaces with at most [`ORACLE_CAP`] configurations.
///
/// Intersections of zero total weight are skipped; with all weights positive
/// the result is the unique regression.
pub fn minmax_oracle(f: &LatticeFunction, direction: Direction) -> Result<Vec<f64>> {
    let poset = Poset::from_space(&f.space, ORACLE_CAP)?;
    let (values, sign) = match direction {
        Direction::Antitonic => (f.values.clone(), 1.0),
        Direction::Isotonic => (f.values.iter().map(|v| -v).collect(), -1.0),
    };
    let lowers = poset.lower_sets();
    let uppers = poset.upper_sets();
    let n = poset.len();
    let avg = |set: u32| -> Option<f64> {
        let (mut s, mut w) = (0.0, 0.0);
        for (i, (&wi, &vi)) in f.weights.iter().zip(&values).enumerate() {
            if set & (1 << i) != 0 {
                s += wi * vi;
                w += wi;
            }
        }
        (w > 0.0).then(|| s / w)
    };
    let mut out = Vec::with_capacity(n);
    for x in 0..n {
        let bit = 1u32 << x;
        let mut best = f64::NEG_INFINITY;
        for &l in lowers.iter().filter(|&&l| l & bit != 0) {
            let inner = uppers
                .iter()
                .filter(|&&u| u & bit != 0)
                .filter_map(|&u| avg(l & u))
                .fold(f64::INFINITY, f64::min);
            if inner.is_finite() {
                best = best.max(inner);
            }
        }
        out.push(if best.is_finite() {
            sign * best
        } else {
            f.values[x]
        });
    }
    Ok(out)
}
