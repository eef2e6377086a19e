//! Distance-specific hyperplane projection and the symmetric bilinear score.

use std::rc::Rc;

use crate::error::{Error, Result};
use crate::graph::{DistanceBins, PoiGraph};
use crate::tensor::{BoundParams, Tape, Var};

/// POI pairs to score, with the distance bin of each.
#[derive(Clone, Debug, PartialEq)]
pub struct PairBatch {
    pub i: Rc<[usize]>,
    pub j: Rc<[usize]>,
    pub bin: Rc<[usize]>,
}

impl PairBatch {
    pub fn new(graph: &PoiGraph, bins: &DistanceBins, pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut i = Vec::new();
        let mut j = Vec::new();
        let mut bin = Vec::new();
        for (a, b) in pairs {
            if a >= graph.len() || b >= graph.len() {
                return Err(Error::Contract(format!("pair ({a}, {b}) outside {} POIs", graph.len())));
            }
            i.push(a);
            j.push(b);
            bin.push(bins.bin_of(graph.distance_km(a, b))?);
        }
        if i.is_empty() {
            return Err(Error::Contract("no pairs to score".into()));
        }
        Ok(Self {
            i: i.into(),
            j: j.into(),
            bin: bin.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.i.len()
    }

    pub fn is_empty(&self) -> bool {
        self.i.is_empty()
    }

    pub fn swapped(&self) -> Self {
        Self {
            i: self.j.clone(),
            j: self.i.clone(),
            bin: self.bin.clone(),
        }
    }
}

/// Unit normals, one row per bin.
pub fn unit_normals(tape: &mut Tape, p: &BoundParams) -> Result<Var> {
    tape.normalize_rows(p.var("hyper")?)
}

/// `h - (ŵᵀh) ŵ` for each row of `h` with the normal row selected by `bin`.
pub fn project(tape: &mut Tape, h: Var, normals: Var, bin: Rc<[usize]>) -> Result<Var> {
    let w = tape.gather_rows(normals, bin)?;
    let c = tape.row_dot(h, w)?;
    let along = tape.row_scale(w, c)?;
    tape.sub(h, along)
}

/// Scores `[P, R*]` of every pair against the first `num_scored` relation rows.
///
/// `s = Σ_k hi_k · hj_k · r_k`; the product `hi ⊙ hj` is formed first so the
/// score is bit-identical under swapping `i` and `j`.
pub fn score_all(
    tape: &mut Tape,
    p: &BoundParams,
    h: Var,
    rel: Var,
    num_scored: usize,
    pairs: &PairBatch,
    project_by_distance: bool,
) -> Result<Var> {
    let mut hi = tape.gather_rows(h, pairs.i.clone())?;
    let mut hj = tape.gather_rows(h, pairs.j.clone())?;
    if project_by_distance {
        let normals = unit_normals(tape, p)?;
        hi = project(tape, hi, normals, pairs.bin.clone())?;
        hj = project(tape, hj, normals, pairs.bin.clone())?;
    }
    let x = tape.mul(hi, hj)?;
    let rows: Rc<[usize]> = (0..pairs.len())
        .flat_map(|q| std::iter::repeat_n(q, num_scored))
        .collect();
    let rels: Rc<[usize]> = (0..pairs.len()).flat_map(|_| 0..num_scored).collect();
    let s = tape.pair_dot(x, rel, rows, rels)?;
    tape.reshape(s, vec![pairs.len(), num_scored])
}

/// Index of the largest score; ties go to the lowest index.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (k, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = k;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[2.0, -1.0, 0.5]), 0);
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[0.0, 0.0, 0.0]), 0);
    }
}
