//! The relationship model: taxonomy-aware initial states, relational
//! message passing, spatial context, and distance-aware scoring.

pub mod context;
pub mod scoring;
pub mod spatial_context;
pub mod taxonomy_encoder;
pub mod wrgnn;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use context::{geo_kernel, GraphContext};
pub use scoring::{argmax, PairBatch};

use crate::error::{Error, Result};
use crate::graph::{DistanceBins, RelationSet};
use crate::tensor::{BoundParams, ParamStore, Tape, Tensor, Var};
use wrgnn::pname;

/// How layer-0 node states are produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NodeInit {
    /// Linear image of the category representation; works for unseen POIs.
    Taxonomy,
    /// A learned vector per POI; transductive only.
    Free,
    TaxonomyFree,
}

impl NodeInit {
    pub fn as_str(self) -> &'static str {
        match self {
            NodeInit::Taxonomy => "taxonomy",
            NodeInit::Free => "free",
            NodeInit::TaxonomyFree => "taxonomy+free",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "taxonomy" => Some(NodeInit::Taxonomy),
            "free" => Some(NodeInit::Free),
            "taxonomy+free" => Some(NodeInit::TaxonomyFree),
            _ => None,
        }
    }

    pub fn uses_taxonomy(self) -> bool {
        self != NodeInit::Free
    }

    pub fn uses_free(self) -> bool {
        self != NodeInit::Taxonomy
    }
}

/// Which part of `[h ∥ q]` the relation vector gates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GammaScope {
    /// Only `h`; the category part passes through.
    GraphPart,
    /// Both parts; the category part gets its own learned per-relation gate.
    Full,
}

impl GammaScope {
    pub fn as_str(self) -> &'static str {
        match self {
            GammaScope::GraphPart => "graph_part",
            GammaScope::Full => "full",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "graph_part" => Some(GammaScope::GraphPart),
            "full" => Some(GammaScope::Full),
            _ => None,
        }
    }
}

/// Component switches: `T` taxonomy path sums, `S` spatial context, `D` distance projection.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Ablations {
    pub no_taxonomy: bool,
    pub no_spatial: bool,
    pub no_distance: bool,
}

impl Ablations {
    /// Parses letters such as `"T,S"`, `"DST"` or `""`.
    pub fn parse(s: &str) -> Result<Self> {
        let mut a = Self::default();
        for c in s.chars().filter(|c| !matches!(c, ',' | ' ' | '-')) {
            match c.to_ascii_uppercase() {
                'T' => a.no_taxonomy = true,
                'S' => a.no_spatial = true,
                'D' => a.no_distance = true,
                _ => return Err(Error::Config(format!("unknown ablation {c:?}; expected T, S or D"))),
            }
        }
        Ok(a)
    }

    pub fn label(&self) -> String {
        let mut s = String::new();
        if self.no_distance {
            s.push('D');
        }
        if self.no_spatial {
            s.push('S');
        }
        if self.no_taxonomy {
            s.push('T');
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub d_p: usize,
    pub d_c: usize,
    pub heads: usize,
    pub layers: usize,
    pub d_att: usize,
    pub d_dfeat: usize,
    pub rbf_centers: Vec<f64>,
    pub rbf_width: f64,
    pub leaky_slope: f64,
    pub radius_km: f64,
    pub theta: f64,
    pub bins: DistanceBins,
    pub node_init: NodeInit,
    pub gamma_scope: GammaScope,
    pub ablations: Ablations,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_p: 128,
            d_c: 128,
            heads: 4,
            layers: 3,
            d_att: 32,
            d_dfeat: 8,
            rbf_centers: vec![0.0, 0.5, 1.0, 2.0, 4.0, 8.0],
            rbf_width: 1.0,
            leaky_slope: 0.2,
            radius_km: 1.15,
            theta: 2.0,
            bins: DistanceBins::default(),
            node_init: NodeInit::Taxonomy,
            gamma_scope: GammaScope::GraphPart,
            ablations: Ablations::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.d_p == 0 || self.d_c == 0 || self.d_att == 0 || self.d_dfeat == 0 {
            return fail("embedding sizes must be positive".into());
        }
        if self.heads == 0 || !self.d_p.is_multiple_of(self.heads) {
            return fail(format!("heads ({}) must divide d_p ({})", self.heads, self.d_p));
        }
        if self.layers == 0 {
            return fail("layers must be at least 1".into());
        }
        if self.rbf_centers.is_empty() || !(self.rbf_width > 0.0) {
            return fail("distance features need centers and a positive width".into());
        }
        if !(self.radius_km > 0.0) || !(self.theta > 0.0) {
            return fail("radius_km and theta must be positive".into());
        }
        Ok(())
    }
}

/// Shape facts a parameter set is built for.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelShape {
    pub num_pois: usize,
    pub num_tax_nodes: usize,
    pub relations: RelationSet,
}

fn glorot(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let lim = (6.0 / (rows + cols) as f64).sqrt();
    uniform(rng, vec![rows, cols], lim)
}

fn uniform(rng: &mut ChaCha8Rng, shape: Vec<usize>, lim: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-lim..lim)).collect();
    Tensor::new(shape, data).expect("positive shape")
}

/// Fresh parameters for `cfg` and `shape`, deterministic in `seed`.
pub fn init_params(cfg: &ModelConfig, shape: &ModelShape, seed: u64) -> Result<ParamStore> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (dp, dc) = (cfg.d_p, cfg.d_c);
    let rs = shape.relations.structural().len();
    let mut p = ParamStore::new();
    p.insert(
        "cat_emb",
        uniform(&mut rng, vec![shape.num_tax_nodes, dc], 1.0 / (dc as f64).sqrt()),
    )?;
    if cfg.node_init.uses_taxonomy() {
        p.insert("init.w", glorot(&mut rng, dp, dc))?;
    }
    if cfg.node_init.uses_free() {
        p.insert(
            "free",
            uniform(&mut rng, vec![shape.num_pois, dp], 1.0 / (dp as f64).sqrt()),
        )?;
    }
    p.insert(
        "rel",
        uniform(&mut rng, vec![shape.relations.len(), dp], 1.0 / (dp as f64).sqrt()),
    )?;
    let att_len = 2 * cfg.d_att + cfg.d_dfeat;
    for l in 0..cfg.layers {
        p.insert(pname(l, "w"), glorot(&mut rng, dp, dp + dc))?;
        p.insert(pname(l, "w_a"), glorot(&mut rng, cfg.d_att, dp + dc))?;
        p.insert(pname(l, "w_d"), glorot(&mut rng, cfg.d_dfeat, cfg.rbf_centers.len()))?;
        p.insert(
            pname(l, "attn"),
            uniform(&mut rng, vec![rs * cfg.heads, att_len], 1.0 / (att_len as f64).sqrt()),
        )?;
        p.insert(pname(l, "w_r"), glorot(&mut rng, dp, dp))?;
        if cfg.gamma_scope == GammaScope::Full {
            p.insert(pname(l, "rel_tax"), Tensor::new(vec![rs, dc], vec![1.0; rs * dc])?)?;
        }
    }
    for name in ["spatial.w_q", "spatial.w_k", "spatial.w_v"] {
        p.insert(name, glorot(&mut rng, dp, dp))?;
    }
    p.insert(
        "hyper",
        uniform(&mut rng, vec![cfg.bins.len(), dp], 1.0 / (dp as f64).sqrt()),
    )?;
    Ok(p)
}

/// Final-layer tensors on a tape.
#[derive(Clone, Copy, Debug)]
pub struct Encoded {
    /// Fused POI representations `[n, d_p]`.
    pub h: Var,
    /// Graph-view representations before fusion.
    pub h_graph: Var,
    /// Relation embeddings after the last update `[|R|, d_p]`.
    pub rel: Var,
    pub q: Var,
}

/// Layer-0 node states.
pub fn initial_states(tape: &mut Tape, p: &BoundParams, cfg: &ModelConfig, ctx: &GraphContext, q: Var) -> Result<Var> {
    let tax = if cfg.node_init.uses_taxonomy() {
        Some(tape.matmul_bt(q, p.var("init.w")?)?)
    } else {
        None
    };
    let free = if cfg.node_init.uses_free() {
        let f = p.var("free")?;
        let rows = tape.value(f).rows();
        if rows != ctx.n {
            return Err(Error::Contract(format!(
                "node_init={} learns one vector per training POI ({rows}); this graph has {} POIs. \
                 Unseen POIs need node_init=taxonomy",
                cfg.node_init.as_str(),
                ctx.n
            )));
        }
        Some(f)
    } else {
        None
    };
    match (tax, free) {
        (Some(a), Some(b)) => tape.add(a, b),
        (Some(a), None) | (None, Some(a)) => Ok(a),
        (None, None) => unreachable!("node_init always selects a source"),
    }
}

/// Full encoder: categories, message passing, spatial context, fusion.
pub fn encode(tape: &mut Tape, p: &BoundParams, cfg: &ModelConfig, ctx: &GraphContext) -> Result<Encoded> {
    let q = taxonomy_encoder::category_repr(tape, p, ctx, cfg.ablations.no_taxonomy)?;
    let h0 = initial_states(tape, p, cfg, ctx, q)?;
    let rel0 = p.var("rel")?;
    let g = wrgnn::forward(tape, p, cfg, ctx, h0, q, rel0)?;
    let h = if cfg.ablations.no_spatial {
        g.h
    } else {
        let s = spatial_context::spatial_context(tape, p, cfg, ctx, g.h)?;
        spatial_context::fuse(tape, g.h, s.context)?
    };
    Ok(Encoded {
        h,
        h_graph: g.h,
        rel: g.rel,
        q,
    })
}

/// Scores `[P, R*]` for `pairs` under an encoding.
pub fn score_pairs(
    tape: &mut Tape,
    p: &BoundParams,
    cfg: &ModelConfig,
    enc: &Encoded,
    num_scored: usize,
    pairs: &PairBatch,
) -> Result<Var> {
    scoring::score_all(tape, p, enc.h, enc.rel, num_scored, pairs, !cfg.ablations.no_distance)
}

/// Forward-only scoring returning a row-major `[P, R*]` score matrix.
pub fn predict_scores(
    params: &ParamStore,
    cfg: &ModelConfig,
    ctx: &GraphContext,
    num_scored: usize,
    pairs: &PairBatch,
) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let p = params.bind(&mut tape);
    let enc = encode(&mut tape, &p, cfg, ctx)?;
    let s = score_pairs(&mut tape, &p, cfg, &enc, num_scored, pairs)?;
    let out = tape.value(s);
    out.check_finite("pair scores")?;
    Ok(out.data().to_vec())
}
