//! Constrained maximum likelihood through a finite mixture with known
//! components.
//!
//! The stochastically ordered families form a convex set whose extreme points
//! are the monotone point-mass labelings `s: 𝒳 → 𝒴`. Any ordered family is a
//! mixture `P(y|x) = Σ_k π_k I(s_k(x) = y)`, so maximizing the likelihood over
//! the ordered families reduces to estimating the mixing proportions `π` by
//! EM.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{CountTable, DistributionFamily};
use crate::lattice::ParentSpace;
use crate::nnls::nnls;

pub const DEFAULT_EXTREME_CAP: usize = 1_000_000;

/// Proportions below this are pinned to zero between iterations.
const FREEZE_BELOW: f64 = 1e-15;

/// Refinement stops once the certified objective gap falls below this
/// multiple of the total weight.
const REFINE_GAP: f64 = 1e-14;
const REFINE_MAX_STEPS: usize = 200;
const LINE_SEARCH_HALVINGS: usize = 40;
const ARMIJO: f64 = 1e-4;
/// Weight of the unit-sum row relative to the total weight.
const SUM_PENALTY: f64 = 1e2;

/// All monotone labelings of a parent space, stored row-major as 0-based
/// child values.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExtremePointSet {
    space: ParentSpace,
    d_y: usize,
    labels: Vec<u8>,
}

impl ExtremePointSet {
    pub fn space(&self) -> &ParentSpace {
        &self.space
    }

    pub fn d_y(&self) -> usize {
        self.d_y
    }

    pub fn len(&self) -> usize {
        if self.space.is_empty() {
            0
        } else {
            self.labels.len() / self.space.len()
        }
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn point(&self, k: usize) -> &[u8] {
        let n = self.space.len();
        &self.labels[k * n..(k + 1) * n]
    }

    pub fn points(&self) -> impl Iterator<Item = &[u8]> {
        self.labels.chunks(self.space.len())
    }
}

/// Enumerates every labeling with `x ⪯ x' ⇒ s(x) ≤ s(x')` by depth-first
/// search in configuration index order, each label starting at the largest
/// label among the configuration's immediate predecessors.
pub fn enumerate_extreme_points(
    space: &ParentSpace,
    d_y: usize,
    cap: usize,
) -> Result<ExtremePointSet> {
    if cap == 0 {
        return Err(Error::invalid("enumeration cap must be positive"));
    }
    if d_y == 0 || d_y > u8::MAX as usize + 1 {
        return Err(Error::invalid(format!(
            "child cardinality {d_y} unsupported"
        )));
    }
    let n = space.len();
    let preds: Vec<Vec<usize>> = (0..n).map(|x| space.predecessors(x).collect()).collect();
    let mut search = Search {
        preds: &preds,
        d_y: d_y as u8,
        cap,
        current: vec![0; n],
        labels: Vec::new(),
        count: 0,
    };
    search.descend(0)?;
    Ok(ExtremePointSet {
        space: space.clone(),
        d_y,
        labels: search.labels,
    })
}

struct Search<'a> {
    preds: &'a [Vec<usize>],
    d_y: u8,
    cap: usize,
    current: Vec<u8>,
    labels: Vec<u8>,
    count: usize,
}

impl Search<'_> {
    fn descend(&mut self, x: usize) -> Result<()> {
        if x == self.current.len() {
            if self.count == self.cap {
                return Err(Error::EnumerationCap { cap: self.cap });
            }
            self.count += 1;
            self.labels.extend_from_slice(&self.current);
            return Ok(());
        }
        let floor = self.preds[x]
            .iter()
            .map(|&p| self.current[p])
            .max()
            .unwrap_or(0);
        for s in floor..self.d_y {
            self.current[x] = s;
            self.descend(x + 1)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmOptions {
    /// Stop when the log-likelihood improves by less than this.
    pub tol: f64,
    pub max_iter: usize,
    /// Pseudo-count added to every `(y, x)` cell; 0 gives the constrained MLE,
    /// 1 the MAP variant.
    pub prior_count: f64,
    /// Finish with constrained Newton steps after EM stops. EM alone can
    /// crawl when the optimum is degenerate.
    pub refine: bool,
}

impl Default for EmOptions {
    fn default() -> Self {
        EmOptions {
            tol: 1e-9,
            max_iter: 10_000,
            prior_count: 0.0,
            refine: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureFitReport {
    pub pi: Vec<f64>,
    /// Objective at each iterate, starting from the uniform initialization.
    /// With a prior count this is the log-likelihood of the augmented counts.
    pub loglik_trace: Vec<f64>,
    /// EM iterations.
    pub iterations: usize,
    /// Whether EM met its tolerance within `max_iter`.
    pub converged: bool,
    pub refine_steps: usize,
    /// Certified bound on the remaining objective gap at the returned `π`.
    pub gap: f64,
}

pub fn em_fit(
    counts: &CountTable,
    extremes: &ExtremePointSet,
    opts: &EmOptions,
) -> Result<(DistributionFamily, MixtureFitReport)> {
    if counts.space() != extremes.space() || counts.d_y() != extremes.d_y() {
        return Err(Error::invalid(
            "count table and extreme points describe different families",
        ));
    }
    if opts.tol.is_nan()
        || opts.tol <= 0.0
        || !opts.prior_count.is_finite()
        || opts.prior_count < 0.0
    {
        return Err(Error::invalid("EM needs tol > 0 and prior_count ≥ 0"));
    }
    let d = counts.d_y();
    let n = counts.space().len();
    let weights: Vec<f64> = counts
        .as_flat()
        .iter()
        .map(|&m| m as f64 + opts.prior_count)
        .collect();
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::invalid("no data and no prior count"));
    }

    let c = extremes.len();
    let em = EmStep {
        extremes,
        weights: &weights,
        total,
    };
    let mut pi = vec![1.0 / c as f64; c];
    let mut next = vec![0.0; c];
    let mut mix = vec![0.0; n * d];
    let mut ll = em.loglik(&pi, &mut mix);
    let mut trace = vec![ll];
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iter {
        iterations += 1;
        em.update(&pi, &mix, &mut next);
        for p in next.iter_mut() {
            if *p < FREEZE_BELOW {
                *p = 0.0;
            }
        }
        let s: f64 = next.iter().sum();
        next.iter_mut().for_each(|p| *p /= s);
        std::mem::swap(&mut pi, &mut next);
        let new_ll = em.loglik(&pi, &mut mix);
        let gain = new_ll - ll;
        ll = new_ll;
        trace.push(ll);
        if gain < opts.tol {
            converged = true;
            break;
        }
    }

    let mut refine_steps = 0;
    if opts.refine && ll.is_finite() {
        refine_steps = em.refine(&mut pi, &mut mix, &mut ll, &mut trace);
    }
    let gap = if ll.is_finite() {
        em.gap(&em.gradient(&mix))
    } else {
        f64::INFINITY
    };

    let family = DistributionFamily::new(counts.space().clone(), d, mix)?.certify()?;
    Ok((
        family,
        MixtureFitReport {
            pi,
            loglik_trace: trace,
            iterations,
            converged,
            refine_steps,
            gap,
        },
    ))
}

struct EmStep<'a> {
    extremes: &'a ExtremePointSet,
    weights: &'a [f64],
    total: f64,
}

impl EmStep<'_> {
    /// Fills `mix` with the mixture probabilities of `pi` and returns the
    /// weighted log-likelihood.
    fn loglik(&self, pi: &[f64], mix: &mut [f64]) -> f64 {
        mixture_probs(self.extremes, pi, mix);
        weighted_loglik(self.weights, mix)
    }

    /// One EM update with E and M steps folded over aggregated cells:
    /// `π_k ← π_k Σ_x w(s_k(x), x) / P(s_k(x) | x) / W`, where `mix` holds
    /// `P` for `pi`.
    fn update(&self, pi: &[f64], mix: &[f64], out: &mut [f64]) {
        let ratio = self.ratios(mix);
        let d = self.extremes.d_y();
        for (k, s) in self.extremes.points().enumerate() {
            out[k] = if pi[k] == 0.0 {
                0.0
            } else {
                pi[k] * label_sum(&ratio, s, d) / self.total
            };
        }
    }

    /// `w / P` on weighted cells, zero elsewhere.
    fn ratios(&self, mix: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .zip(mix)
            .map(|(&w, &p)| if w > 0.0 { w / p } else { 0.0 })
            .collect()
    }

    /// `D_k = Σ_x w(s_k(x), x) / P(s_k(x) | x) / W`, the directional
    /// derivative of the objective towards component `k`, scaled by `1/W`.
    fn gradient(&self, mix: &[f64]) -> Vec<f64> {
        let ratio = self.ratios(mix);
        let d = self.extremes.d_y();
        self.extremes
            .points()
            .map(|s| label_sum(&ratio, s, d) / self.total)
            .collect()
    }

    /// Upper bound on the distance to the optimal objective. By concavity
    /// `ℒ* − ℒ(π) ≤ W (max_k D_k − 1)`.
    fn gap(&self, grad: &[f64]) -> f64 {
        let max = grad.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (self.total * (max - 1.0)).max(0.0)
    }

    /// Constrained Newton steps on a sparse support. On the simplex the
    /// objective is locally `−½ Σ_c w_c (u_c − 2)²` up to a constant, with
    /// `u_c = Σ_k π_k I(s_k ∋ c) / P_c`. Each step minimizes that model by
    /// nonnegative least squares, the unit sum held by a penalty row, over the
    /// heaviest components plus those with the steepest ascent, then line
    /// searches towards the result.
    fn refine(
        &self,
        pi: &mut Vec<f64>,
        mix: &mut [f64],
        ll: &mut f64,
        trace: &mut Vec<f64>,
    ) -> usize {
        let d = self.extremes.d_y();
        let cells: Vec<usize> = (0..self.weights.len())
            .filter(|&c| self.weights[c] > 0.0)
            .collect();
        let m = cells.len();
        let keep = (4 * m).max(8);
        let mut steps = 0;
        let mut cand = vec![0.0; pi.len()];
        let mut trial = vec![0.0; mix.len()];
        while steps < REFINE_MAX_STEPS {
            let grad = self.gradient(mix);
            if self.gap(&grad) <= REFINE_GAP * self.total {
                break;
            }
            let mut support: Vec<usize> = (0..pi.len()).filter(|&k| pi[k] > 0.0).collect();
            support.sort_by(|&a, &b| pi[b].total_cmp(&pi[a]).then(a.cmp(&b)));
            support.truncate(keep);
            let mut ascent: Vec<usize> = (0..grad.len()).filter(|&k| grad[k] > 1.0).collect();
            ascent.sort_by(|&a, &b| grad[b].total_cmp(&grad[a]).then(a.cmp(&b)));
            ascent.truncate(m.max(1));
            for k in ascent {
                if !support.contains(&k) {
                    support.push(k);
                }
            }

            let sqrt_w: Vec<f64> = cells.iter().map(|&c| self.weights[c].sqrt()).collect();
            let penalty = (SUM_PENALTY * self.total).sqrt();
            let mut b: Vec<f64> = sqrt_w.iter().map(|w| 2.0 * w).collect();
            b.push(penalty);
            let cols: Vec<Vec<f64>> = support
                .iter()
                .map(|&k| {
                    let s = self.extremes.point(k);
                    cells
                        .iter()
                        .zip(&sqrt_w)
                        .map(|(&c, &w)| {
                            if s[c / d] as usize == c % d {
                                w / mix[c]
                            } else {
                                0.0
                            }
                        })
                        .chain(std::iter::once(penalty))
                        .collect()
                })
                .collect();
            let x = nnls(&cols, &b);
            let sum: f64 = x.iter().sum();
            if sum.is_nan() || sum <= 0.0 {
                break;
            }
            let slope = self.total
                * (support
                    .iter()
                    .zip(&x)
                    .map(|(&k, &v)| v / sum * grad[k])
                    .sum::<f64>()
                    - 1.0);
            if slope.is_nan() || slope <= 0.0 {
                break;
            }

            let mut t = 1.0;
            let mut accepted = false;
            for _ in 0..LINE_SEARCH_HALVINGS {
                cand.iter_mut()
                    .zip(pi.iter())
                    .for_each(|(c, &p)| *c = (1.0 - t) * p);
                for (&k, &v) in support.iter().zip(&x) {
                    cand[k] += t * v / sum;
                }
                let cand_ll = self.loglik(&cand, &mut trial);
                if cand_ll > *ll && cand_ll >= *ll + ARMIJO * t * slope {
                    accepted = true;
                    *ll = cand_ll;
                    break;
                }
                t /= 2.0;
            }
            if !accepted {
                break;
            }
            std::mem::swap(pi, &mut cand);
            mix.copy_from_slice(&trial);
            trace.push(*ll);
            steps += 1;
        }
        mixture_probs(self.extremes, pi, mix);
        steps
    }
}

fn label_sum(ratio: &[f64], labels: &[u8], d: usize) -> f64 {
    labels
        .iter()
        .enumerate()
        .map(|(x, &y)| ratio[x * d + y as usize])
        .sum()
}

/// `P(y|x) = Σ_k π_k I(s_k(x) = y)`.
fn mixture_probs(extremes: &ExtremePointSet, pi: &[f64], out: &mut [f64]) {
    let d = extremes.d_y();
    out.fill(0.0);
    for (s, &p) in extremes.points().zip(pi) {
        if p == 0.0 {
            continue;
        }
        for (x, &y) in s.iter().enumerate() {
            out[x * d + y as usize] += p;
        }
    }
}

fn weighted_loglik(weights: &[f64], probs: &[f64]) -> f64 {
    weights
        .iter()
        .zip(probs)
        .filter(|(w, _)| **w > 0.0)
        .map(|(w, p)| {
            if *p > 0.0 {
                w * p.ln()
            } else {
                f64::NEG_INFINITY
            }
        })
        .sum()
}

/// `Σ n(y,x) log P(y|x)`. Empty cells contribute nothing; a positive count on
/// a zero-probability cell gives `-∞`.
pub fn constrained_loglik(dist: &DistributionFamily, counts: &CountTable) -> Result<f64> {
    if dist.space() != counts.space() || dist.d_y() != counts.d_y() {
        return Err(Error::invalid("family and counts have different shapes"));
    }
    let w: Vec<f64> = counts.as_flat().iter().map(|&m| m as f64).collect();
    Ok(weighted_loglik(&w, dist.as_flat()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::{isotonic_estimator, Smoothing};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn space(c: &[usize]) -> ParentSpace {
        ParentSpace::new(c.to_vec()).unwrap()
    }

    /// Every labeling in `d_y^N`, kept when monotone on all comparable pairs.
    fn brute_force_count(space: &ParentSpace, d_y: usize) -> usize {
        let n = space.len();
        let pairs = space.comparable_pairs();
        let mut labels = vec![0usize; n];
        let mut count = 0;
        'outer: loop {
            if pairs.iter().all(|&(a, b)| labels[a] <= labels[b]) {
                count += 1;
            }
            for slot in labels.iter_mut() {
                *slot += 1;
                if *slot < d_y {
                    continue 'outer;
                }
                *slot = 0;
            }
            break;
        }
        count
    }

    fn binomial(n: usize, k: usize) -> usize {
        (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
    }

    #[test]
    fn ternary_counts() {
        let one = enumerate_extreme_points(&space(&[3]), 3, DEFAULT_EXTREME_CAP).unwrap();
        assert_eq!(one.len(), 10);
        let two = enumerate_extreme_points(&space(&[3, 3]), 3, DEFAULT_EXTREME_CAP).unwrap();
        assert_eq!(two.len(), 175);
    }

    #[test]
    fn matches_brute_force() {
        for cards in [
            vec![2],
            vec![3],
            vec![2, 2],
            vec![3, 2],
            vec![3, 3],
            vec![2, 2, 2],
            vec![4, 2],
        ] {
            for d_y in 1..=3 {
                let s = space(&cards);
                let e = enumerate_extreme_points(&s, d_y, DEFAULT_EXTREME_CAP).unwrap();
                assert_eq!(e.len(), brute_force_count(&s, d_y), "{cards:?} d_y={d_y}");
                let mut seen: Vec<&[u8]> = e.points().collect();
                seen.sort();
                seen.dedup();
                assert_eq!(seen.len(), e.len());
                for p in e.points() {
                    for (a, b) in s.comparable_pairs() {
                        assert!(p[a] <= p[b]);
                    }
                }
            }
        }
    }

    #[test]
    fn chain_count_is_stars_and_bars() {
        for n in 1..=7 {
            for d_y in 1..=4 {
                let e = enumerate_extreme_points(&space(&[n]), d_y, DEFAULT_EXTREME_CAP).unwrap();
                assert_eq!(e.len(), binomial(n + d_y - 1, n));
            }
        }
    }

    #[test]
    fn cap_is_enforced() {
        assert!(matches!(
            enumerate_extreme_points(&space(&[3, 3]), 3, 174),
            Err(Error::EnumerationCap { cap: 174 })
        ));
        assert_eq!(
            enumerate_extreme_points(&space(&[3, 3]), 3, 175)
                .unwrap()
                .len(),
            175
        );
        assert!(enumerate_extreme_points(&space(&[3]), 3, 0).is_err());
    }

    #[test]
    fn single_configuration_binomial() {
        let s = space(&[]);
        let t = CountTable::from_columns(s.clone(), 2, vec![vec![3, 1]]).unwrap();
        let e = enumerate_extreme_points(&s, 2, 10).unwrap();
        assert_eq!(e.len(), 2);
        let (fam, rep) = em_fit(&t, &e, &EmOptions::default()).unwrap();
        assert!((fam.prob(0, 0) - 0.75).abs() < 1e-6);
        assert!(rep.converged);
        assert!((rep.pi.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn all_mass_at_top() {
        let s = space(&[2, 2]);
        let t = CountTable::from_columns(s.clone(), 3, vec![vec![0, 0, 4]; 4]).unwrap();
        let e = enumerate_extreme_points(&s, 3, DEFAULT_EXTREME_CAP).unwrap();
        let opts = EmOptions {
            tol: 1e-12,
            max_iter: 100_000,
            ..Default::default()
        };
        let (fam, rep) = em_fit(&t, &e, &opts).unwrap();
        for x in 0..4 {
            assert!((fam.prob(2, x) - 1.0).abs() < 1e-6, "{:?}", fam.column(x));
        }
        let top = e.points().position(|p| p.iter().all(|&v| v == 2)).unwrap();
        assert!(rep.pi[top] > 1.0 - 1e-6);
    }

    #[test]
    fn empty_data_without_prior_rejected() {
        let s = space(&[2]);
        let t = CountTable::zeros(s.clone(), 2).unwrap();
        let e = enumerate_extreme_points(&s, 2, 10).unwrap();
        assert!(em_fit(&t, &e, &EmOptions::default()).is_err());
        let map = EmOptions {
            prior_count: 1.0,
            ..Default::default()
        };
        let (fam, _) = em_fit(&t, &e, &map).unwrap();
        assert!(fam.order_certified());
    }

    #[test]
    fn loglik_examples() {
        let s = space(&[2]);
        let t = CountTable::from_columns(s.clone(), 3, vec![vec![0, 4, 0], vec![0, 0, 2]]).unwrap();
        let point = DistributionFamily::from_columns(
            s.clone(),
            3,
            vec![vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]],
        )
        .unwrap();
        assert_eq!(constrained_loglik(&point, &t).unwrap(), 0.0);

        let t9 =
            CountTable::from_columns(s.clone(), 3, vec![vec![2, 1, 1], vec![3, 1, 1]]).unwrap();
        let uni = DistributionFamily::uniform(s.clone(), 3).unwrap();
        let ll = constrained_loglik(&uni, &t9).unwrap();
        assert!((ll - 9.0 * (1.0f64 / 3.0).ln()).abs() < 1e-12);
        assert!((ll + 9.8875).abs() < 1e-4);

        let t1 =
            CountTable::from_columns(s.clone(), 3, vec![vec![1, 0, 0], vec![0, 0, 0]]).unwrap();
        let miss =
            DistributionFamily::from_columns(s, 3, vec![vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]])
                .unwrap();
        assert_eq!(constrained_loglik(&miss, &t1).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn em_invariants_on_random_tables() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let s = space(&[3, 2]);
        let e = enumerate_extreme_points(&s, 3, DEFAULT_EXTREME_CAP).unwrap();
        for _ in 0..20 {
            let counts = (0..18).map(|_| rng.gen_range(1..6)).collect();
            let t = CountTable::from_flat(s.clone(), 3, counts).unwrap();
            let (cml, rep) = em_fit(&t, &e, &EmOptions::default()).unwrap();
            assert!(rep.loglik_trace.windows(2).all(|w| w[1] >= w[0] - 1e-9));
            assert!(cml.order_certified());
            let iso = isotonic_estimator(&t, Smoothing::None).unwrap();
            let (lc, li) = (
                constrained_loglik(&cml, &t).unwrap(),
                constrained_loglik(&iso, &t).unwrap(),
            );
            assert!(lc >= li - 1e-6, "cml {lc} < iso {li}");
        }
    }

    #[test]
    fn binary_child_matches_isotonic() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for cards in [vec![2, 2], vec![3, 3], vec![4]] {
            let s = space(&cards);
            let e = enumerate_extreme_points(&s, 2, DEFAULT_EXTREME_CAP).unwrap();
            for _ in 0..10 {
                let counts = (0..s.len() * 2).map(|_| rng.gen_range(0..8)).collect();
                let mut t = CountTable::from_flat(s.clone(), 2, counts).unwrap();
                for x in 0..s.len() {
                    if t.total(x) == 0 {
                        t.add(1, x, 1).unwrap();
                    }
                }
                let iso = isotonic_estimator(&t, Smoothing::None).unwrap();
                let (cml, _) = em_fit(&t, &e, &EmOptions::default()).unwrap();
                let dev = iso
                    .as_flat()
                    .iter()
                    .zip(cml.as_flat())
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                assert!(dev < 1e-5, "{cards:?}: {dev}");
            }
        }
    }

    #[test]
    fn degenerate_optimum_is_reached() {
        // Fully reversed 2×2 data pools every configuration to one half. A
        // labeling with zero gradient but no optimal mass slows plain EM.
        let s = space(&[2, 2]);
        let t = CountTable::from_flat(s.clone(), 2, vec![0, 4, 3, 5, 7, 3, 2, 0]).unwrap();
        let e = enumerate_extreme_points(&s, 2, DEFAULT_EXTREME_CAP).unwrap();
        let (fit, report) = em_fit(&t, &e, &EmOptions::default()).unwrap();
        for &p in fit.as_flat() {
            assert!((p - 0.5).abs() < 1e-7, "{p}");
        }
        assert!(report.refine_steps >= 1);
        assert!(report.loglik_trace.windows(2).all(|w| w[1] >= w[0]));

        let plain = EmOptions {
            refine: false,
            ..EmOptions::default()
        };
        let (slow, _) = em_fit(&t, &e, &plain).unwrap();
        let dev = slow
            .as_flat()
            .iter()
            .map(|p| (p - 0.5).abs())
            .fold(0.0, f64::max);
        assert!(dev > 1e-6);
    }
}
