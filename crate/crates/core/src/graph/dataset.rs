//! Train/validation/test splits over relation edges plus sampled non-relation pairs.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::io::RawDataset;
use crate::error::{Error, Result};

/// A (possibly corrupted) training triple. `positive` is the label y.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Triple {
    pub src: usize,
    pub dst: usize,
    pub relation: usize,
    pub positive: bool,
}

/// An evaluation pair with its true class in the scored relation space.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct LabeledPair {
    pub src: usize,
    pub dst: usize,
    pub relation: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplitConfig {
    pub train_frac: f64,
    pub val_frac: f64,
    /// Non-relation pairs added to val and test, as a fraction of that split's edges.
    pub none_ratio: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            train_frac: 0.6,
            val_frac: 0.2,
            none_ratio: 0.65,
            seed: 7,
        }
    }
}

impl SplitConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.train_frac > 0.0
            && self.val_frac >= 0.0
            && self.train_frac + self.val_frac <= 1.0
            && self.none_ratio >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "bad split fractions train={} val={} none_ratio={}",
                self.train_frac, self.val_frac, self.none_ratio
            )))
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub num_pois: usize,
    pub none_relation: usize,
    /// Positive training triples.
    pub train: Vec<Triple>,
    /// Validation edges followed by sampled non-relation pairs.
    pub val: Vec<LabeledPair>,
    /// Test edges followed by sampled non-relation pairs.
    pub test: Vec<LabeledPair>,
}

impl Dataset {
    pub fn split(raw: &RawDataset, cfg: &SplitConfig) -> Result<Self> {
        cfg.validate()?;
        let n = raw.pois.len();
        let m = raw.edges.len();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut order: Vec<usize> = (0..m).collect();
        order.shuffle(&mut rng);
        let n_train = (cfg.train_frac * m as f64).floor() as usize;
        let n_val = ((cfg.val_frac * m as f64).floor() as usize).min(m - n_train);

        let pick = |idx: &[usize]| -> Vec<LabeledPair> {
            idx.iter()
                .map(|&e| {
                    let (src, dst, relation) = raw.edges[e];
                    LabeledPair { src, dst, relation }
                })
                .collect()
        };
        let train = pick(&order[..n_train])
            .into_iter()
            .map(|p| Triple {
                src: p.src,
                dst: p.dst,
                relation: p.relation,
                positive: true,
            })
            .collect();
        let mut val = pick(&order[n_train..n_train + n_val]);
        let mut test = pick(&order[n_train + n_val..]);

        let mut taken: HashSet<(usize, usize)> = raw.edges.iter().map(|&(a, b, _)| key(a, b)).collect();
        let none = raw.relations.none_id();
        let n_val_none = (cfg.none_ratio * val.len() as f64).round() as usize;
        let n_test_none = (cfg.none_ratio * test.len() as f64).round() as usize;
        val.extend(sample_none_pairs(n, n_val_none, none, &mut taken, &mut rng)?);
        test.extend(sample_none_pairs(n, n_test_none, none, &mut taken, &mut rng)?);

        Ok(Self {
            num_pois: n,
            none_relation: none,
            train,
            val,
            test,
        })
    }

    /// Undirected training edges for building the aggregation graph.
    pub fn train_edges(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        self.train.iter().map(|t| (t.src, t.dst, t.relation))
    }

    /// Training triples grouped for negative filtering: `(min, max, relation)`.
    pub fn train_positive_set(&self) -> HashSet<(usize, usize, usize)> {
        self.train
            .iter()
            .map(|t| {
                let (a, b) = key(t.src, t.dst);
                (a, b, t.relation)
            })
            .collect()
    }

    pub fn num_none(pairs: &[LabeledPair], none: usize) -> usize {
        pairs.iter().filter(|p| p.relation == none).count()
    }

    /// Keeps only items whose endpoints both survive `map` (old → new id) and renumbers them.
    pub fn restrict(&self, map: &[Option<usize>]) -> Self {
        let num_pois = map.iter().filter(|m| m.is_some()).count();
        let remap = |p: &LabeledPair| {
            Some(LabeledPair {
                src: map[p.src]?,
                dst: map[p.dst]?,
                relation: p.relation,
            })
        };
        Self {
            num_pois,
            none_relation: self.none_relation,
            train: self
                .train
                .iter()
                .filter_map(|t| {
                    Some(Triple {
                        src: map[t.src]?,
                        dst: map[t.dst]?,
                        ..*t
                    })
                })
                .collect(),
            val: self.val.iter().filter_map(remap).collect(),
            test: self.test.iter().filter_map(remap).collect(),
        }
    }
}

pub(crate) fn key(a: usize, b: usize) -> (usize, usize) {
    (a.min(b), a.max(b))
}

/// Uniform unordered pairs with no relation and not already in `taken`.
fn sample_none_pairs(
    n: usize,
    count: usize,
    none: usize,
    taken: &mut HashSet<(usize, usize)>,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<LabeledPair>> {
    let capacity = n * n.saturating_sub(1) / 2;
    if taken.len() + count > capacity {
        return Err(Error::Contract(format!(
            "cannot sample {count} non-relation pairs among {n} POIs"
        )));
    }
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let (a, b) = (rng.gen_range(0..n), rng.gen_range(0..n));
        if a != b && taken.insert(key(a, b)) {
            out.push(LabeledPair {
                src: a,
                dst: b,
                relation: none,
            });
        }
    }
    Ok(out)
}

/// The `floor(frac·n)` POIs hidden for the inductive protocol, ascending.
pub fn hidden_pois(n: usize, frac: f64, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1d_a5_5e_ed);
    let mut ids: Vec<usize> = (0..n).collect();
    ids.shuffle(&mut rng);
    let mut hidden = ids[..(frac * n as f64).floor() as usize].to_vec();
    hidden.sort_unstable();
    hidden
}
