//! Count tables, conditional distribution families, and the standard and
//! isotonic-regression estimators.
//!
//! Child values and configuration indices are 0-based here; [`Config`] values
//! and the `y` reported in [`Reversal`] are 1-based.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{Config, ParentSpace};
use crate::pav::Direction;
use crate::product_iso::{ir_product_order, IterOptions, LatticeFunction};

/// Tolerance for the validity checks on fitted distributions.
pub const VALIDITY_TOL: f64 = 1e-9;

/// Strict margin for calling an empirical CDF pair reversed.
const REVERSAL_MARGIN: f64 = 1e-12;

/// Above this many configurations [`detect_reversals`] checks covering pairs
/// only.
pub const FULL_REVERSAL_CHECK_MAX: usize = 256;

/// A single case: 0-based child value and configuration index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Observation {
    pub y: usize,
    pub x: usize,
}

/// Counts `n(y, x)` for every child value and parent configuration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountTable {
    space: ParentSpace,
    d_y: usize,
    /// Column-major: `counts[x * d_y + y]`.
    counts: Vec<u64>,
}

impl CountTable {
    pub fn zeros(space: ParentSpace, d_y: usize) -> Result<Self> {
        check_dy(d_y)?;
        let counts = vec![0; space.len() * d_y];
        Ok(CountTable { space, d_y, counts })
    }

    pub fn from_flat(space: ParentSpace, d_y: usize, counts: Vec<u64>) -> Result<Self> {
        check_dy(d_y)?;
        if counts.len() != space.len() * d_y {
            return Err(Error::invalid(format!(
                "expected {} counts, got {}",
                space.len() * d_y,
                counts.len()
            )));
        }
        Ok(CountTable { space, d_y, counts })
    }

    /// One column of `d_y` counts per configuration, in index order.
    pub fn from_columns(space: ParentSpace, d_y: usize, columns: Vec<Vec<u64>>) -> Result<Self> {
        if columns.len() != space.len() || columns.iter().any(|c| c.len() != d_y) {
            return Err(Error::invalid(format!(
                "expected {} columns of length {d_y}",
                space.len()
            )));
        }
        Self::from_flat(space, d_y, columns.concat())
    }

    pub fn from_observations(space: ParentSpace, d_y: usize, obs: &[Observation]) -> Result<Self> {
        let mut t = Self::zeros(space, d_y)?;
        for o in obs {
            t.add(o.y, o.x, 1)?;
        }
        Ok(t)
    }

    pub fn add(&mut self, y: usize, x: usize, m: u64) -> Result<()> {
        if y >= self.d_y || x >= self.space.len() {
            return Err(Error::invalid(format!(
                "cell (y={y}, x={x}) outside {}×{}",
                self.d_y,
                self.space.len()
            )));
        }
        self.counts[x * self.d_y + y] += m;
        Ok(())
    }

    pub fn space(&self) -> &ParentSpace {
        &self.space
    }

    pub fn d_y(&self) -> usize {
        self.d_y
    }

    pub fn count(&self, y: usize, x: usize) -> u64 {
        self.counts[x * self.d_y + y]
    }

    pub fn column(&self, x: usize) -> &[u64] {
        &self.counts[x * self.d_y..(x + 1) * self.d_y]
    }

    /// `n(x)`.
    pub fn total(&self, x: usize) -> u64 {
        self.column(x).iter().sum()
    }

    pub fn grand_total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn as_flat(&self) -> &[u64] {
        &self.counts
    }

    /// Moves the column of configuration `x` to `perm[x]`.
    pub fn permute_configs(&self, perm: &[usize]) -> CountTable {
        let mut counts = vec![0; self.counts.len()];
        for (x, &to) in perm.iter().enumerate() {
            counts[to * self.d_y..(to + 1) * self.d_y].copy_from_slice(self.column(x));
        }
        CountTable {
            space: self.space.clone(),
            d_y: self.d_y,
            counts,
        }
    }

    fn require_observed(&self) -> Result<()> {
        match (0..self.space.len()).find(|&x| self.total(x) == 0) {
            Some(x) => Err(Error::ZeroCount {
                config: self.space.config_at(x)?.0,
            }),
            None => Ok(()),
        }
    }
}

fn check_dy(d_y: usize) -> Result<()> {
    if d_y == 0 {
        return Err(Error::invalid("child cardinality must be at least 1"));
    }
    Ok(())
}

/// `P(y | x)` for every configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct DistributionFamily {
    space: ParentSpace,
    d_y: usize,
    /// Column-major: `probs[x * d_y + y]`.
    probs: Vec<f64>,
    order_certified: bool,
}

impl DistributionFamily {
    /// Columns must sum to one within [`VALIDITY_TOL`].
    pub fn new(space: ParentSpace, d_y: usize, probs: Vec<f64>) -> Result<Self> {
        Self::with_tolerance(space, d_y, probs, VALIDITY_TOL)
    }

    /// Accepts columns summing to one within `tol`, then renormalizes them
    /// exactly.
    pub fn with_tolerance(
        space: ParentSpace,
        d_y: usize,
        mut probs: Vec<f64>,
        tol: f64,
    ) -> Result<Self> {
        check_dy(d_y)?;
        if probs.len() != space.len() * d_y {
            return Err(Error::invalid(format!(
                "expected {} probabilities, got {}",
                space.len() * d_y,
                probs.len()
            )));
        }
        if probs
            .iter()
            .any(|p| !p.is_finite() || *p < 0.0 || *p > 1.0 + tol)
        {
            return Err(Error::invalid("probabilities must lie in [0, 1]"));
        }
        for (x, col) in probs.chunks_mut(d_y).enumerate() {
            let s: f64 = col.iter().sum();
            if (s - 1.0).abs() > tol {
                return Err(Error::invalid(format!(
                    "probabilities for configuration {:?} sum to {s}",
                    space.config_at(x)?.0
                )));
            }
            col.iter_mut().for_each(|p| *p /= s);
        }
        Ok(DistributionFamily {
            space,
            d_y,
            probs,
            order_certified: false,
        })
    }

    pub fn from_columns(space: ParentSpace, d_y: usize, columns: Vec<Vec<f64>>) -> Result<Self> {
        if columns.len() != space.len() || columns.iter().any(|c| c.len() != d_y) {
            return Err(Error::invalid(format!(
                "expected {} columns of length {d_y}",
                space.len()
            )));
        }
        Self::new(space, d_y, columns.concat())
    }

    pub fn uniform(space: ParentSpace, d_y: usize) -> Result<Self> {
        let n = space.len();
        Self::new(space, d_y, vec![1.0 / d_y as f64; n * d_y])
    }

    pub fn space(&self) -> &ParentSpace {
        &self.space
    }

    pub fn d_y(&self) -> usize {
        self.d_y
    }

    pub fn prob(&self, y: usize, x: usize) -> f64 {
        self.probs[x * self.d_y + y]
    }

    pub fn column(&self, x: usize) -> &[f64] {
        &self.probs[x * self.d_y..(x + 1) * self.d_y]
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.probs
    }

    pub fn order_certified(&self) -> bool {
        self.order_certified
    }

    pub fn cdf(&self) -> CdfFamily {
        let mut cdf = Vec::with_capacity(self.probs.len());
        for col in self.probs.chunks(self.d_y) {
            let mut acc = 0.0;
            for (y, p) in col.iter().enumerate() {
                acc += p;
                cdf.push(if y + 1 == self.d_y { 1.0 } else { acc.min(1.0) });
            }
        }
        CdfFamily {
            space: self.space.clone(),
            d_y: self.d_y,
            cdf,
        }
    }

    /// Largest amount by which `F(y|x) < F(y|x')` for a covering pair `x ≺ x'`.
    pub fn max_order_violation(&self) -> f64 {
        self.cdf().max_order_violation()
    }

    /// Marks the family as stochastically ordered after checking every
    /// covering pair within [`VALIDITY_TOL`].
    pub fn certify(mut self) -> Result<Self> {
        let v = self.max_order_violation();
        if v > VALIDITY_TOL {
            return Err(Error::Internal(format!(
                "family violates the stochastic order by {v:e}"
            )));
        }
        self.order_certified = true;
        Ok(self)
    }

    /// Moves the column of configuration `x` to `perm[x]`. Drops certification.
    pub fn permute_configs(&self, perm: &[usize]) -> DistributionFamily {
        let d = self.d_y;
        let mut probs = vec![0.0; self.probs.len()];
        for (x, &to) in perm.iter().enumerate() {
            probs[to * d..(to + 1) * d].copy_from_slice(self.column(x));
        }
        DistributionFamily {
            space: self.space.clone(),
            d_y: d,
            probs,
            order_certified: false,
        }
    }
}

/// `F(y | x) = P(Y ≤ y | x)` for every configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct CdfFamily {
    space: ParentSpace,
    d_y: usize,
    cdf: Vec<f64>,
}

impl CdfFamily {
    pub fn value(&self, y: usize, x: usize) -> f64 {
        self.cdf[x * self.d_y + y]
    }

    pub fn column(&self, x: usize) -> &[f64] {
        &self.cdf[x * self.d_y..(x + 1) * self.d_y]
    }

    pub fn space(&self) -> &ParentSpace {
        &self.space
    }

    pub fn d_y(&self) -> usize {
        self.d_y
    }

    pub fn max_order_violation(&self) -> f64 {
        self.space
            .covering_pairs()
            .into_iter()
            .flat_map(|(lo, hi)| (0..self.d_y).map(move |y| (lo, hi, y)))
            .map(|(lo, hi, y)| self.value(y, hi) - self.value(y, lo))
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", content = "alpha", rename_all = "lowercase")]
pub enum Smoothing {
    #[default]
    None,
    /// Add `α` to every cell; `α = 1` is the Laplace correction.
    Laplace(f64),
}

impl Smoothing {
    pub const LAPLACE: Smoothing = Smoothing::Laplace(1.0);

    fn alpha(self) -> f64 {
        match self {
            Smoothing::None => 0.0,
            Smoothing::Laplace(a) => a,
        }
    }
}

/// Relative frequencies `(n(y,x) + α) / (n(x) + α·d_y)`.
pub fn standard_mle(counts: &CountTable, smoothing: Smoothing) -> Result<DistributionFamily> {
    let (cdf, _) = empirical_cdf(counts, smoothing)?;
    let d = counts.d_y;
    let mut probs = Vec::with_capacity(cdf.len());
    for x in 0..counts.space.len() {
        let a = smoothing.alpha();
        let denom = counts.total(x) as f64 + a * d as f64;
        probs.extend(counts.column(x).iter().map(|&m| (m as f64 + a) / denom));
    }
    DistributionFamily::new(counts.space.clone(), d, probs)
}

/// Empirical (optionally smoothed) CDF, laid out like the count table, and the
/// per-configuration weights `n(x) + α·d_y`.
fn empirical_cdf(counts: &CountTable, smoothing: Smoothing) -> Result<(Vec<f64>, Vec<f64>)> {
    let a = smoothing.alpha();
    if !(a >= 0.0 && a.is_finite()) {
        return Err(Error::invalid("smoothing pseudo-count must be nonnegative"));
    }
    if a == 0.0 {
        counts.require_observed()?;
    }
    let d = counts.d_y;
    let mut cdf = Vec::with_capacity(counts.counts.len());
    let mut weights = Vec::with_capacity(counts.space.len());
    for x in 0..counts.space.len() {
        let w = counts.total(x) as f64 + a * d as f64;
        let mut acc = 0.0;
        for (y, &m) in counts.column(x).iter().enumerate() {
            acc += m as f64 + a;
            cdf.push(if y + 1 == d { 1.0 } else { acc / w });
        }
        weights.push(w);
    }
    Ok((cdf, weights))
}

pub fn isotonic_estimator(counts: &CountTable, smoothing: Smoothing) -> Result<DistributionFamily> {
    isotonic_estimator_with(counts, smoothing, &IterOptions::default())
}

/// Antitonic regression of each empirical CDF level `F̂(y|·)`, `y < d_y`, over
/// the product order, weighted by the (smoothed) configuration totals.
///
/// Requires every `n(x) > 0` when `smoothing` is [`Smoothing::None`].
pub fn isotonic_estimator_with(
    counts: &CountTable,
    smoothing: Smoothing,
    opts: &IterOptions,
) -> Result<DistributionFamily> {
    let (g, w) = empirical_cdf(counts, smoothing)?;
    let space = &counts.space;
    let d = counts.d_y;
    let n = space.len();
    let mut fitted = g.clone();
    for y in 0..d.saturating_sub(1) {
        let level: Vec<f64> = (0..n).map(|x| g[x * d + y]).collect();
        let f = LatticeFunction::new(space.clone(), level, w.clone())?;
        let fit = ir_product_order(&f, Direction::Antitonic, opts)?;
        for (x, v) in fit.values.into_iter().enumerate() {
            fitted[x * d + y] = v.clamp(0.0, 1.0);
        }
    }

    let mut probs = Vec::with_capacity(g.len());
    for x in 0..n {
        let col = &fitted[x * d..(x + 1) * d];
        let start = probs.len();
        let mut prev = 0.0;
        for &f in col {
            let mut p = f - prev;
            if p < 0.0 {
                if p < -VALIDITY_TOL {
                    return Err(Error::Internal(format!(
                        "fitted CDF decreases by {:e} at configuration {:?}",
                        -p,
                        space.config_at(x)?.0
                    )));
                }
                p = 0.0;
            }
            probs.push(p);
            prev = f;
        }
        let s: f64 = probs[start..].iter().sum();
        probs[start..].iter_mut().for_each(|p| *p /= s);
    }
    DistributionFamily::new(space.clone(), d, probs)?.certify()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReversalScope {
    CoveringPairs,
    AllComparable,
}

impl ReversalScope {
    pub fn default_for(space: &ParentSpace) -> Self {
        if space.len() <= FULL_REVERSAL_CHECK_MAX {
            ReversalScope::AllComparable
        } else {
            ReversalScope::CoveringPairs
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ReversalOptions {
    /// `None` picks [`ReversalScope::default_for`] the space.
    pub scope: Option<ReversalScope>,
    /// Ignore configurations without data instead of failing.
    pub skip_empty: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reversal {
    pub lower: Config,
    pub upper: Config,
    /// 1-based child value whose CDF is out of order.
    pub y: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReversalReport {
    pub violated: bool,
    pub scope: ReversalScope,
    pub pairs: Vec<Reversal>,
}

/// Order reversals in the unsmoothed empirical CDFs.
pub fn detect_reversals(counts: &CountTable) -> Result<ReversalReport> {
    detect_reversals_with(counts, ReversalOptions::default())
}

pub fn detect_reversals_with(counts: &CountTable, opts: ReversalOptions) -> Result<ReversalReport> {
    let space = &counts.space;
    let d = counts.d_y;
    let observed: Vec<bool> = (0..space.len()).map(|x| counts.total(x) > 0).collect();
    if !opts.skip_empty {
        counts.require_observed()?;
    }
    let cdf: Vec<f64> = (0..space.len())
        .flat_map(|x| {
            let n = counts.total(x).max(1) as f64;
            let mut acc = 0;
            counts
                .column(x)
                .iter()
                .map(move |&m| {
                    acc += m;
                    acc as f64 / n
                })
                .collect::<Vec<_>>()
        })
        .collect();
    let scope = opts
        .scope
        .unwrap_or_else(|| ReversalScope::default_for(space));
    reversals_in(space, d, &cdf, scope, |x| observed[x])
}

/// Order reversals in the exact CDFs of a family, e.g. a generating
/// distribution.
pub fn family_reversals(
    family: &DistributionFamily,
    scope: ReversalScope,
) -> Result<ReversalReport> {
    let cdf = family.cdf();
    reversals_in(&family.space, family.d_y, &cdf.cdf, scope, |_| true)
}

fn reversals_in(
    space: &ParentSpace,
    d: usize,
    cdf: &[f64],
    scope: ReversalScope,
    include: impl Fn(usize) -> bool,
) -> Result<ReversalReport> {
    let pairs = match scope {
        ReversalScope::CoveringPairs => space.covering_pairs(),
        ReversalScope::AllComparable => space.comparable_pairs(),
    };
    let mut found = Vec::new();
    for (lo, hi) in pairs {
        if !include(lo) || !include(hi) {
            continue;
        }
        for y in 0..d.saturating_sub(1) {
            if cdf[lo * d + y] < cdf[hi * d + y] - REVERSAL_MARGIN {
                found.push(Reversal {
                    lower: space.config_at(lo)?,
                    upper: space.config_at(hi)?,
                    y: y + 1,
                });
            }
        }
    }
    Ok(ReversalReport {
        violated: !found.is_empty(),
        scope,
        pairs: found,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{compare, Relation};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn space(c: &[usize]) -> ParentSpace {
        ParentSpace::new(c.to_vec()).unwrap()
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn standard_examples() {
        let t = CountTable::from_columns(space(&[]), 3, vec![vec![2, 1, 1]]).unwrap();
        let p = standard_mle(&t, Smoothing::None).unwrap();
        assert!(close(p.column(0), &[0.5, 0.25, 0.25], 1e-15));
        let p = standard_mle(&t, Smoothing::LAPLACE).unwrap();
        assert!(close(p.column(0), &[3. / 7., 2. / 7., 2. / 7.], 1e-15));
        assert!(!p.order_certified());

        let empty = CountTable::zeros(space(&[]), 3).unwrap();
        let p = standard_mle(&empty, Smoothing::LAPLACE).unwrap();
        assert!(close(p.column(0), &[1. / 3.; 3], 1e-15));
    }

    #[test]
    fn zero_count_is_named() {
        let t = CountTable::from_columns(space(&[2]), 2, vec![vec![1, 1], vec![0, 0]]).unwrap();
        match standard_mle(&t, Smoothing::None) {
            Err(Error::ZeroCount { config }) => assert_eq!(config, vec![2]),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            isotonic_estimator(&t, Smoothing::None),
            Err(Error::ZeroCount { .. })
        ));
        assert!(matches!(detect_reversals(&t), Err(Error::ZeroCount { .. })));
        let r = detect_reversals_with(
            &t,
            ReversalOptions {
                skip_empty: true,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(!r.violated);
    }

    #[test]
    fn binary_chain_pools_reversed_pair() {
        // P(Y=2|x) = 0.8 then 0.2 under a positive influence
        let t = CountTable::from_columns(space(&[2]), 2, vec![vec![2, 8], vec![8, 2]]).unwrap();
        let iso = isotonic_estimator(&t, Smoothing::None).unwrap();
        assert!(close(iso.column(0), &[0.5, 0.5], 1e-12));
        assert!(close(iso.column(1), &[0.5, 0.5], 1e-12));
        assert!(iso.order_certified());

        let r = detect_reversals(&t).unwrap();
        assert!(r.violated);
        assert_eq!(
            r.pairs,
            vec![Reversal {
                lower: Config(vec![1]),
                upper: Config(vec![2]),
                y: 1
            }]
        );
    }

    #[test]
    fn ordered_counts_reproduce_standard() {
        let t = CountTable::from_columns(
            space(&[3]),
            3,
            vec![vec![5, 3, 2], vec![3, 4, 3], vec![1, 2, 7]],
        )
        .unwrap();
        assert!(!detect_reversals(&t).unwrap().violated);
        let iso = isotonic_estimator(&t, Smoothing::None).unwrap();
        let st = standard_mle(&t, Smoothing::None).unwrap();
        assert!(close(iso.as_flat(), st.as_flat(), 1e-12));
    }

    #[test]
    fn single_configuration_is_standard() {
        let t = CountTable::from_columns(space(&[1]), 4, vec![vec![1, 0, 6, 2]]).unwrap();
        for s in [Smoothing::None, Smoothing::LAPLACE] {
            let iso = isotonic_estimator(&t, s).unwrap();
            let st = standard_mle(&t, s).unwrap();
            assert!(close(iso.as_flat(), st.as_flat(), 1e-12));
        }
    }

    #[test]
    fn incomparable_pairs_never_reported() {
        // (1,2) puts all mass on y=1, (2,1) all on y=2
        let s = space(&[2, 2]);
        let t = CountTable::from_columns(
            s.clone(),
            2,
            vec![vec![3, 0], vec![3, 0], vec![0, 3], vec![0, 3]],
        )
        .unwrap();
        let r = detect_reversals(&t).unwrap();
        for p in &r.pairs {
            assert_eq!(compare(&p.lower, &p.upper).unwrap(), Relation::Less);
        }
        assert!(!r.pairs.iter().any(|p| {
            (p.lower.0 == vec![1, 2] && p.upper.0 == vec![2, 1])
                || (p.lower.0 == vec![2, 1] && p.upper.0 == vec![1, 2])
        }));
    }

    #[test]
    fn covering_scope_misses_nothing_on_chains_of_two() {
        let t = CountTable::from_columns(space(&[3]), 2, vec![vec![1, 1], vec![2, 0], vec![1, 1]])
            .unwrap();
        let cover = detect_reversals_with(
            &t,
            ReversalOptions {
                scope: Some(ReversalScope::CoveringPairs),
                skip_empty: false,
            },
        )
        .unwrap();
        let full = detect_reversals(&t).unwrap();
        assert_eq!(full.scope, ReversalScope::AllComparable);
        assert_eq!(cover.pairs.len(), 1);
        assert_eq!(full.pairs.len(), 1);
    }

    fn random_table(rng: &mut ChaCha8Rng, cards: &[usize], d_y: usize, max: u64) -> CountTable {
        let s = space(cards);
        let counts = (0..s.len() * d_y).map(|_| rng.gen_range(0..=max)).collect();
        let mut t = CountTable::from_flat(s, d_y, counts).unwrap();
        for x in 0..t.space().len() {
            if t.total(x) == 0 {
                t.add(rng.gen_range(0..d_y), x, 1).unwrap();
            }
        }
        t
    }

    #[test]
    fn iso_output_is_valid_and_ordered() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let t = random_table(&mut rng, &[3, 3], 4, 6);
            for s in [Smoothing::None, Smoothing::LAPLACE] {
                let iso = isotonic_estimator(&t, s).unwrap();
                let cdf = iso.cdf();
                for x in 0..9 {
                    let col = cdf.column(x);
                    assert!(col
                        .iter()
                        .all(|&f| (-VALIDITY_TOL..=1.0 + VALIDITY_TOL).contains(&f)));
                    assert!(col.windows(2).all(|w| w[0] <= w[1] + VALIDITY_TOL));
                }
                for (lo, hi) in t.space().comparable_pairs() {
                    for y in 0..4 {
                        assert!(cdf.value(y, lo) >= cdf.value(y, hi) - VALIDITY_TOL);
                    }
                }
                if !detect_reversals(&t).unwrap().violated && s == Smoothing::None {
                    let st = standard_mle(&t, s).unwrap();
                    assert!(close(iso.as_flat(), st.as_flat(), 1e-12));
                }
            }
        }
    }

    #[test]
    fn equivariant_under_parent_swap() {
        // transposing a square grid is an order automorphism
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let s = space(&[3, 3]);
        let transpose: Vec<usize> = (0..9).map(|i| (i % 3) * 3 + i / 3).collect();
        for _ in 0..30 {
            let t = random_table(&mut rng, &[3, 3], 3, 5);
            let swapped = t.permute_configs(&transpose);
            let a = isotonic_estimator(&t, Smoothing::None).unwrap();
            let b = isotonic_estimator(&swapped, Smoothing::None).unwrap();
            let a_swapped = a.permute_configs(&transpose);
            assert!(close(a_swapped.as_flat(), b.as_flat(), 1e-9));
            assert_eq!(s.len(), 9);
        }
    }

    #[test]
    fn family_validation() {
        let s = space(&[2]);
        assert!(DistributionFamily::new(s.clone(), 2, vec![0.5, 0.5, 0.7, 0.4]).is_err());
        assert!(DistributionFamily::new(s.clone(), 2, vec![0.5, 0.5]).is_err());
        let f =
            DistributionFamily::with_tolerance(s.clone(), 2, vec![0.5, 0.5000001, 0.3, 0.7], 1e-6)
                .unwrap();
        assert!((f.column(0).iter().sum::<f64>() - 1.0).abs() < 1e-15);
        let ordered = DistributionFamily::new(s.clone(), 2, vec![0.8, 0.2, 0.3, 0.7]).unwrap();
        assert!(ordered.certify().unwrap().order_certified());
        let reversed = DistributionFamily::new(s, 2, vec![0.3, 0.7, 0.8, 0.2]).unwrap();
        assert!(reversed.certify().is_err());
    }
}
