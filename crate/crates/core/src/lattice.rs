//! Parent configurations under the product order.
//!
//! A [`ParentSpace`] is the product of the parents' value chains. Configurations
//! are addressed two ways:
//!
//! * [`Config`] holds 1-based parent values, as they appear in data files and
//!   reports (`x_i ∈ {1, …, d_i}`).
//! * A configuration *index* is a 0-based mixed-radix number with the last
//!   parent varying fastest. Every table in this crate is laid out in index
//!   order, and this order is a linear extension of the product order:
//!   `x ≺ x'` implies `index(x) < index(x')`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::CountTable;

/// Largest poset the brute-force lower/upper set enumeration accepts by default.
pub const ORACLE_CAP: usize = 16;

/// Hard ceiling for [`Poset`], whose subsets are stored as `u32` bitmasks.
const POSET_MAX: usize = 24;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct ParentSpace {
    cards: Vec<usize>,
    strides: Vec<usize>,
    size: usize,
}

impl TryFrom<Vec<usize>> for ParentSpace {
    type Error = Error;

    fn try_from(cards: Vec<usize>) -> Result<Self> {
        ParentSpace::new(cards)
    }
}

impl From<ParentSpace> for Vec<usize> {
    fn from(space: ParentSpace) -> Self {
        space.cards
    }
}

impl ParentSpace {
    /// An empty cardinality list is allowed and gives the one-point space of a
    /// parentless node.
    pub fn new(cards: Vec<usize>) -> Result<Self> {
        if let Some(j) = cards.iter().position(|&d| d == 0) {
            return Err(Error::invalid(format!(
                "parent {} has cardinality 0",
                j + 1
            )));
        }
        let mut strides = vec![0; cards.len()];
        let mut size = 1usize;
        for j in (0..cards.len()).rev() {
            strides[j] = size;
            size = size
                .checked_mul(cards[j])
                .ok_or_else(|| Error::invalid("parent space too large"))?;
        }
        Ok(ParentSpace {
            cards,
            strides,
            size,
        })
    }

    pub fn cardinalities(&self) -> &[usize] {
        &self.cards
    }

    pub fn num_parents(&self) -> usize {
        self.cards.len()
    }

    /// Number of configurations, `N = ∏ d_i`.
    pub fn len(&self) -> usize {
        self.size
    }

    pub fn is_empty(&self) -> bool {
        self.size == 0
    }

    pub fn stride(&self, parent: usize) -> usize {
        self.strides[parent]
    }

    pub fn index_of(&self, config: &Config) -> Result<usize> {
        if config.0.len() != self.cards.len() {
            return Err(Error::invalid(format!(
                "configuration has {} components, space has {} parents",
                config.0.len(),
                self.cards.len()
            )));
        }
        let mut idx = 0;
        for (j, (&v, &d)) in config.0.iter().zip(&self.cards).enumerate() {
            if v == 0 || v > d {
                return Err(Error::invalid(format!(
                    "parent {} value {} outside 1..={}",
                    j + 1,
                    v,
                    d
                )));
            }
            idx += (v - 1) * self.strides[j];
        }
        Ok(idx)
    }

    pub fn config_at(&self, idx: usize) -> Result<Config> {
        if idx >= self.size {
            return Err(Error::invalid(format!(
                "index {idx} outside 0..{}",
                self.size
            )));
        }
        Ok(Config(
            self.digits(idx).into_iter().map(|v| v + 1).collect(),
        ))
    }

    /// 0-based parent values of configuration `idx`.
    pub fn digits(&self, idx: usize) -> Vec<usize> {
        self.cards
            .iter()
            .zip(&self.strides)
            .map(|(&d, &s)| (idx / s) % d)
            .collect()
    }

    /// 0-based value of one parent in configuration `idx`.
    pub fn digit(&self, idx: usize, parent: usize) -> usize {
        (idx / self.strides[parent]) % self.cards[parent]
    }

    /// Sum of 0-based parent values; configurations of equal rank form the
    /// antichain "layers" of the lattice.
    pub fn rank(&self, idx: usize) -> usize {
        self.digits(idx).iter().sum()
    }

    pub fn max_rank(&self) -> usize {
        self.cards.iter().map(|d| d - 1).sum()
    }

    /// Product order on indices.
    pub fn leq(&self, a: usize, b: usize) -> bool {
        (0..self.cards.len()).all(|j| self.digit(a, j) <= self.digit(b, j))
    }

    /// Indices of the configurations covered by `idx`.
    pub fn predecessors(&self, idx: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.cards.len())
            .filter(move |&j| self.digit(idx, j) > 0)
            .map(move |j| idx - self.strides[j])
    }

    /// Indices of the configurations covering `idx`.
    pub fn successors(&self, idx: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.cards.len())
            .filter(move |&j| self.digit(idx, j) + 1 < self.cards[j])
            .map(move |j| idx + self.strides[j])
    }

    /// All covering pairs `(lower, upper)`, in index order of `upper`.
    pub fn covering_pairs(&self) -> Vec<(usize, usize)> {
        (0..self.size)
            .flat_map(|hi| self.predecessors(hi).map(move |lo| (lo, hi)))
            .collect()
    }

    /// All strictly comparable pairs `(lower, upper)`.
    pub fn comparable_pairs(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for hi in 0..self.size {
            for lo in 0..hi {
                if self.leq(lo, hi) {
                    out.push((lo, hi));
                }
            }
        }
        out
    }

    /// Start index of every chain running along `parent`'s axis, i.e. every
    /// configuration with that parent at its lowest value.
    pub fn chain_starts(&self, parent: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.size).filter(move |&idx| self.digit(idx, parent) == 0)
    }
}

/// A parent configuration with 1-based values.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Config(pub Vec<usize>);

impl Config {
    pub fn new(values: Vec<usize>) -> Self {
        Config(values)
    }

    pub fn values(&self) -> &[usize] {
        &self.0
    }

    /// Configurations obtained by lowering exactly one parent by one step.
    pub fn immediate_predecessors(&self) -> Vec<Config> {
        (0..self.0.len())
            .filter(|&j| self.0[j] > 1)
            .map(|j| {
                let mut v = self.0.clone();
                v[j] -= 1;
                Config(v)
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Less,
    Greater,
    Equal,
    Incomparable,
}

/// Compares two configurations under the product order.
pub fn compare(a: &Config, b: &Config) -> Result<Relation> {
    if a.0.len() != b.0.len() {
        return Err(Error::invalid(format!(
            "cannot compare configurations of length {} and {}",
            a.0.len(),
            b.0.len()
        )));
    }
    let le = a.0.iter().zip(&b.0).all(|(x, y)| x <= y);
    let ge = a.0.iter().zip(&b.0).all(|(x, y)| x >= y);
    Ok(match (le, ge) {
        (true, true) => Relation::Equal,
        (true, false) => Relation::Less,
        (false, true) => Relation::Greater,
        (false, false) => Relation::Incomparable,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Influence {
    Positive,
    Negative,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct InfluenceSpec {
    pub signs: Vec<Influence>,
}

impl InfluenceSpec {
    pub fn all_positive(parents: usize) -> Self {
        InfluenceSpec {
            signs: vec![Influence::Positive; parents],
        }
    }

    pub fn is_all_positive(&self) -> bool {
        self.signs.iter().all(|&s| s == Influence::Positive)
    }

    /// Maps each configuration index to the index obtained by reversing the
    /// value order of every negatively influencing parent. The map is an
    /// involution.
    pub fn reflection(&self, space: &ParentSpace) -> Result<Vec<usize>> {
        if self.signs.len() != space.num_parents() {
            return Err(Error::invalid(format!(
                "{} influence signs for {} parents",
                self.signs.len(),
                space.num_parents()
            )));
        }
        Ok((0..space.len())
            .map(|idx| {
                self.signs
                    .iter()
                    .enumerate()
                    .map(|(j, sign)| {
                        let v = space.digit(idx, j);
                        let v = match sign {
                            Influence::Positive => v,
                            Influence::Negative => space.cardinalities()[j] - 1 - v,
                        };
                        v * space.stride(j)
                    })
                    .sum()
            })
            .collect())
    }
}

/// Relabels parent values so every influence in `spec` becomes positive
/// (`v ↦ d_i + 1 − v` for each negative parent). Applying it twice gives back
/// the original table.
pub fn normalize_influences(counts: &CountTable, spec: &InfluenceSpec) -> Result<CountTable> {
    let perm = spec.reflection(counts.space())?;
    Ok(counts.permute_configs(&perm))
}

/// Small explicit partial order used by the brute-force oracles.
///
/// `below[i]` is the bitmask of elements `j` with `j ⪯ i`. The relation passed
/// in must already be transitive; only reflexivity is added.
#[derive(Debug, Clone)]
pub struct Poset {
    n: usize,
    below: Vec<u32>,
}

impl Poset {
    pub fn from_space(space: &ParentSpace, cap: usize) -> Result<Self> {
        let n = space.len();
        check_cap(n, cap)?;
        let below = (0..n)
            .map(|i| {
                (0..n)
                    .filter(|&j| space.leq(j, i))
                    .fold(0u32, |m, j| m | (1 << j))
            })
            .collect();
        Ok(Poset { n, below })
    }

    /// Builds a poset from explicit `(a, b)` pairs meaning `a ⪯ b`.
    pub fn from_relation(n: usize, pairs: &[(usize, usize)], cap: usize) -> Result<Self> {
        check_cap(n, cap)?;
        let mut below: Vec<u32> = (0..n).map(|i| 1 << i).collect();
        for &(a, b) in pairs {
            if a >= n || b >= n {
                return Err(Error::invalid(format!("pair ({a}, {b}) outside 0..{n}")));
            }
            below[b] |= 1 << a;
        }
        Ok(Poset { n, below })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// All downward-closed subsets as bitmasks, including ∅ and the full set.
    pub fn lower_sets(&self) -> Vec<u32> {
        let full: u64 = 1 << self.n;
        (0..full)
            .map(|m| m as u32)
            .filter(|&m| {
                (0..self.n)
                    .filter(|&i| m & (1 << i) != 0)
                    .all(|i| self.below[i] & !m == 0)
            })
            .collect()
    }

    /// Upper sets are exactly the complements of lower sets.
    pub fn upper_sets(&self) -> Vec<u32> {
        let all = if self.n == 32 {
            u32::MAX
        } else {
            (1u32 << self.n) - 1
        };
        self.lower_sets().into_iter().map(|m| all & !m).collect()
    }
}

fn check_cap(n: usize, cap: usize) -> Result<()> {
    if n > cap.min(POSET_MAX) {
        return Err(Error::OracleScale {
            size: n,
            cap: cap.min(POSET_MAX),
        });
    }
    Ok(())
}

/// Every lower set of the product order on `space`, as sorted index lists.
/// Exponential; intended for test oracles on spaces with at most
/// [`ORACLE_CAP`] configurations.
pub fn enumerate_lower_sets(space: &ParentSpace) -> Result<Vec<Vec<usize>>> {
    let poset = Poset::from_space(space, ORACLE_CAP)?;
    Ok(poset
        .lower_sets()
        .into_iter()
        .map(|m| (0..poset.n).filter(|&i| m & (1 << i) != 0).collect())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(v: &[usize]) -> Config {
        Config(v.to_vec())
    }

    #[test]
    fn compare_examples() {
        assert_eq!(compare(&c(&[1, 1]), &c(&[2, 1])).unwrap(), Relation::Less);
        assert_eq!(
            compare(&c(&[2, 1]), &c(&[1, 2])).unwrap(),
            Relation::Incomparable
        );
        assert_eq!(compare(&c(&[2, 2]), &c(&[2, 2])).unwrap(), Relation::Equal);
        assert_eq!(
            compare(&c(&[2, 2]), &c(&[1, 2])).unwrap(),
            Relation::Greater
        );
        assert!(compare(&c(&[1]), &c(&[1, 1])).is_err());
    }

    #[test]
    fn index_round_trip() {
        let s = ParentSpace::new(vec![3, 3]).unwrap();
        assert_eq!(s.index_of(&c(&[1, 1])).unwrap(), 0);
        assert_eq!(s.index_of(&c(&[3, 3])).unwrap(), 8);
        // last parent varies fastest
        assert_eq!(s.index_of(&c(&[1, 2])).unwrap(), 1);
        assert!(s.index_of(&c(&[4, 1])).is_err());
        assert!(s.index_of(&c(&[0, 1])).is_err());

        let s = ParentSpace::new(vec![2, 3]).unwrap();
        for i in 0..6 {
            assert_eq!(s.index_of(&s.config_at(i).unwrap()).unwrap(), i);
        }
        assert!(s.config_at(6).is_err());
    }

    #[test]
    fn zero_cardinality_rejected() {
        assert!(ParentSpace::new(vec![3, 0]).is_err());
        assert_eq!(ParentSpace::new(vec![]).unwrap().len(), 1);
    }

    #[test]
    fn predecessor_examples() {
        let mut p = c(&[2, 2]).immediate_predecessors();
        p.sort_by(|a, b| a.0.cmp(&b.0));
        assert_eq!(p, vec![c(&[1, 2]), c(&[2, 1])]);
        assert!(c(&[1, 1]).immediate_predecessors().is_empty());
        assert_eq!(c(&[3, 1]).immediate_predecessors(), vec![c(&[2, 1])]);
    }

    #[test]
    fn index_order_is_linear_extension() {
        let s = ParentSpace::new(vec![3, 2, 4]).unwrap();
        for (lo, hi) in s.comparable_pairs() {
            assert!(lo < hi);
        }
        for hi in 0..s.len() {
            for lo in s.predecessors(hi) {
                assert!(s.successors(lo).any(|x| x == hi));
            }
        }
    }

    #[test]
    fn lower_set_counts() {
        let chain2 = ParentSpace::new(vec![2]).unwrap();
        let sets = enumerate_lower_sets(&chain2).unwrap();
        assert_eq!(sets, vec![vec![], vec![0], vec![0, 1]]);

        // brute force over the 16 subsets of a 2×2 grid gives 6 ideals
        let grid = ParentSpace::new(vec![2, 2]).unwrap();
        assert_eq!(enumerate_lower_sets(&grid).unwrap().len(), 6);

        let antichain = Poset::from_relation(3, &[], ORACLE_CAP).unwrap();
        assert_eq!(antichain.lower_sets().len(), 8);

        for n in 1..=8 {
            let chain = ParentSpace::new(vec![n]).unwrap();
            assert_eq!(enumerate_lower_sets(&chain).unwrap().len(), n + 1);
        }

        let big = ParentSpace::new(vec![5, 4]).unwrap();
        assert!(matches!(
            enumerate_lower_sets(&big),
            Err(Error::OracleScale { size: 20, cap: 16 })
        ));
    }

    #[test]
    fn upper_sets_are_upward_closed() {
        let s = ParentSpace::new(vec![2, 3]).unwrap();
        let p = Poset::from_space(&s, ORACLE_CAP).unwrap();
        for u in p.upper_sets() {
            for (lo, hi) in s.comparable_pairs() {
                if u & (1 << lo) != 0 {
                    assert!(u & (1 << hi) != 0);
                }
            }
        }
    }

    #[test]
    fn reflection_is_involution() {
        let s = ParentSpace::new(vec![3, 2]).unwrap();
        let spec = InfluenceSpec {
            signs: vec![Influence::Negative, Influence::Positive],
        };
        let r = spec.reflection(&s).unwrap();
        assert_eq!(
            r[s.index_of(&c(&[1, 2])).unwrap()],
            s.index_of(&c(&[3, 2])).unwrap()
        );
        for i in 0..s.len() {
            assert_eq!(r[r[i]], i);
        }
        let short = InfluenceSpec::all_positive(1);
        assert!(short.reflection(&s).is_err());
    }

    #[test]
    fn normalize_influences_examples() {
        let s = ParentSpace::new(vec![2]).unwrap();
        let t = CountTable::from_columns(s.clone(), 2, vec![vec![3, 1], vec![0, 5]]).unwrap();
        let same = normalize_influences(&t, &InfluenceSpec::all_positive(1)).unwrap();
        assert_eq!(same, t);
        let neg = InfluenceSpec {
            signs: vec![Influence::Negative],
        };
        let flipped = normalize_influences(&t, &neg).unwrap();
        assert_eq!(flipped.column(0), &[0, 5]);
        assert_eq!(flipped.column(1), &[3, 1]);
        assert_eq!(normalize_influences(&flipped, &neg).unwrap(), t);
    }

    fn arb_space() -> impl Strategy<Value = ParentSpace> {
        prop::collection::vec(1usize..4, 1..4).prop_map(|c| ParentSpace::new(c).unwrap())
    }

    proptest! {
        #[test]
        fn product_order_is_partial_order(
            space in arb_space(),
            picks in prop::collection::vec(any::<prop::sample::Index>(), 3),
        ) {
            let n = space.len();
            let [a, b, d] = [picks[0].index(n), picks[1].index(n), picks[2].index(n)];
            let (ca, cb, cd) = (
                space.config_at(a).unwrap(),
                space.config_at(b).unwrap(),
                space.config_at(d).unwrap(),
            );
            prop_assert_eq!(compare(&ca, &ca).unwrap(), Relation::Equal);
            let ab = compare(&ca, &cb).unwrap();
            let ba = compare(&cb, &ca).unwrap();
            let flipped = match ab {
                Relation::Less => Relation::Greater,
                Relation::Greater => Relation::Less,
                r => r,
            };
            prop_assert_eq!(ba, flipped);
            if ab == Relation::Equal {
                prop_assert_eq!(a, b);
            }
            let le = |r: Relation| matches!(r, Relation::Less | Relation::Equal);
            if le(ab) && le(compare(&cb, &cd).unwrap()) {
                prop_assert!(le(compare(&ca, &cd).unwrap()));
            }
        }

        #[test]
        fn predecessors_are_covers(space in arb_space(), pick in any::<prop::sample::Index>()) {
            let idx = pick.index(space.len());
            let cfg = space.config_at(idx).unwrap();
            for p in cfg.immediate_predecessors() {
                prop_assert_eq!(compare(&p, &cfg).unwrap(), Relation::Less);
                let pi = space.index_of(&p).unwrap();
                for q in 0..space.len() {
                    let strictly_between = q != pi && q != idx
                        && space.leq(pi, q) && space.leq(q, idx);
                    prop_assert!(!strictly_between);
                }
            }
        }

        #[test]
        fn normalize_twice_is_identity(
            space in arb_space(),
            neg in prop::collection::vec(any::<bool>(), 3),
            seed in prop::collection::vec(0u64..6, 81 * 3),
        ) {
            let k = space.num_parents();
            let spec = InfluenceSpec {
                signs: neg[..k].iter().map(|&b| if b { Influence::Negative } else { Influence::Positive }).collect(),
            };
            let counts = seed[..space.len() * 3].to_vec();
            let t = CountTable::from_flat(space, 3, counts).unwrap();
            let twice = normalize_influences(&normalize_influences(&t, &spec).unwrap(), &spec).unwrap();
            prop_assert_eq!(twice, t);
        }
    }
}
