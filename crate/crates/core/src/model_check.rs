//! Small random instances for checking the full model's gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::graph::{CoordMode, DistanceBins, Location, Poi, PoiGraph, RelationSet, Taxonomy, Triple};
use crate::model::{self, GammaScope, GraphContext, ModelConfig, ModelShape, NodeInit, PairBatch};
use crate::tensor::{grad_check, GradCheckReport, ParamStore};
use crate::training::{batch_loss, loss_terms, LossForm};

/// Finite-difference step used by [`model_gradcheck`]. At 1e-6 rounding in
/// the loss leaves an absolute error near 3e-10, comparable to the smallest
/// gradients.
pub const STEP: f64 = 1e-5;

pub struct TinyInstance {
    pub taxonomy: Taxonomy,
    pub graph: PoiGraph,
    pub cfg: ModelConfig,
    pub ctx: GraphContext,
    pub params: ParamStore,
    pub triples: Vec<Triple>,
}

/// `n` POIs inside a 2 km square with two relation types and `layers`
/// layers. Every parameter family is present: taxonomy and free node
/// embeddings, relation-gated taxonomy messages, spatial context, distance
/// features and hyperplanes.
pub fn tiny_instance(n: usize, layers: usize, seed: u64) -> Result<TinyInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let taxonomy = Taxonomy::balanced(2, 2);
    let leaves = taxonomy.leaves();
    let pois: Vec<Poi> = (0..n)
        .map(|id| Poi {
            id,
            location: Location::new(rng.gen_range(0.0..2000.0), rng.gen_range(0.0..2000.0)),
            category: leaves[rng.gen_range(0..leaves.len())],
        })
        .collect();
    let relations = RelationSet::new(&["competitive", "complementary"])?;
    let mut edges = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            if rng.gen_bool(0.35) {
                edges.push((a, b, rng.gen_range(0..2)));
            }
        }
    }
    if edges.is_empty() && n >= 2 {
        edges.push((0, 1, 0));
    }
    let graph = PoiGraph::new(CoordMode::Planar, pois, relations, edges.iter().copied(), 1.0)?;

    let cfg = ModelConfig {
        d_p: 4,
        d_c: 4,
        heads: 2,
        layers,
        d_att: 3,
        d_dfeat: 2,
        rbf_centers: vec![0.0, 0.5, 1.0, 2.0],
        bins: DistanceBins::new(vec![0.0, 0.5, 1.0])?,
        node_init: NodeInit::TaxonomyFree,
        gamma_scope: GammaScope::Full,
        ..ModelConfig::default()
    };
    cfg.validate()?;
    let ctx = GraphContext::new(&graph, &taxonomy, &cfg)?;
    let shape = ModelShape {
        num_pois: n,
        num_tax_nodes: taxonomy.len(),
        relations: graph.relations().clone(),
    };
    let mut params = model::init_params(&cfg, &shape, seed)?;
    // Gates start at exactly one; move them so their gradients are generic.
    for (name, t) in params.iter_mut() {
        if name.ends_with("rel_tax") {
            t.data_mut().iter_mut().for_each(|v| *v += rng.gen_range(-0.3..0.3));
        }
    }

    let mut triples = Vec::new();
    for &(a, b, r) in &edges {
        triples.push(Triple {
            src: a,
            dst: b,
            relation: r,
            positive: true,
        });
        let c = (b + 1 + rng.gen_range(0..n - 1)) % n;
        if c != a {
            triples.push(Triple {
                src: a,
                dst: c,
                relation: r,
                positive: false,
            });
        }
    }
    Ok(TinyInstance {
        taxonomy,
        graph,
        cfg,
        ctx,
        params,
        triples,
    })
}

/// Central-difference check of every parameter of the full model on the
/// instance's training loss.
pub fn model_gradcheck(inst: &TinyInstance, relation_negatives: bool, tolerance: f64) -> Result<GradCheckReport> {
    let none = inst.graph.relations().none_id();
    let k = inst.graph.relations().num_scored();
    let terms = loss_terms(&inst.triples, none, relation_negatives);
    let pairs = PairBatch::new(&inst.graph, &inst.cfg.bins, inst.triples.iter().map(|t| (t.src, t.dst)))?;
    grad_check(
        &inst.params,
        |tape, p| {
            let enc = model::encode(tape, p, &inst.cfg, &inst.ctx)?;
            let scores = model::score_pairs(tape, p, &inst.cfg, &enc, k, &pairs)?;
            batch_loss(tape, scores, &terms, inst.triples.len(), LossForm::Standard)
        },
        STEP,
        tolerance,
    )
}
