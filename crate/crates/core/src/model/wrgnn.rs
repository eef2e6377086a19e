//! Weighted relational message passing with spatial-aware attention.

use super::context::GraphContext;
use super::taxonomy_encoder::augment;
use super::{GammaScope, ModelConfig};
use crate::error::Result;
use crate::tensor::{BoundParams, Tape, Var};

/// Fixed Gaussian features of a distance: `exp(-(d - c_k)² / γ²)`.
pub fn distance_features(d_km: f64, centers: &[f64], width: f64) -> Vec<f64> {
    centers
        .iter()
        .map(|c| (-(d_km - c).powi(2) / (width * width)).exp())
        .collect()
}

pub(crate) fn pname(layer: usize, what: &str) -> String {
    format!("layer{layer}.{what}")
}

/// Attention coefficients `[m, K]`, normalized within each (dst, relation) group.
///
/// `hq` is `[h ∥ q]` for every POI.
pub fn attention(
    tape: &mut Tape,
    p: &BoundParams,
    cfg: &ModelConfig,
    ctx: &GraphContext,
    layer: usize,
    hq: Var,
) -> Result<Var> {
    let w_a = p.var(&pname(layer, "w_a"))?;
    let w_d = p.var(&pname(layer, "w_d"))?;
    let attn = p.var(&pname(layer, "attn"))?;
    let da = cfg.d_att;

    let z = tape.matmul_bt(hq, w_a)?;
    let a_dst = tape.slice_cols(attn, 0, da)?;
    let a_src = tape.slice_cols(attn, da, 2 * da)?;
    let a_dist = tape.slice_cols(attn, 2 * da, 2 * da + cfg.d_dfeat)?;

    let rbf = tape.constant(ctx.rbf.clone());
    let g = tape.matmul_bt(rbf, w_d)?;

    let e_dst = tape.pair_dot(z, a_dst, ctx.att_dst.clone(), ctx.att_row.clone())?;
    let e_src = tape.pair_dot(z, a_src, ctx.att_src.clone(), ctx.att_row.clone())?;
    let e_dist = tape.pair_dot(g, a_dist, ctx.att_edge.clone(), ctx.att_row.clone())?;
    let e = tape.add(e_dst, e_src)?;
    let e = tape.add(e, e_dist)?;
    let e = tape.leaky_relu(e, cfg.leaky_slope);
    let e = tape.reshape(e, vec![ctx.num_edges(), cfg.heads])?;
    tape.segment_softmax(e, ctx.segment.clone(), ctx.n_segments)
}

pub struct LayerOutput {
    pub alpha: Var,
    pub h: Var,
}

/// One round of two-level aggregation: within each relation by attention,
/// then summed across relations, per head, followed by ReLU.
pub fn aggregate_layer(
    tape: &mut Tape,
    p: &BoundParams,
    cfg: &ModelConfig,
    ctx: &GraphContext,
    layer: usize,
    h: Var,
    q: Var,
    rel: Var,
) -> Result<LayerOutput> {
    let hq = augment(tape, h, q)?;
    let alpha = attention(tape, p, cfg, ctx, layer, hq)?;

    let w = p.var(&pname(layer, "w"))?;
    let w_h = tape.slice_cols(w, 0, cfg.d_p)?;
    let w_q = tape.slice_cols(w, cfg.d_p, cfg.d_p + cfg.d_c)?;
    let q_shared = match cfg.gamma_scope {
        GammaScope::GraphPart => Some(tape.matmul_bt(q, w_q)?),
        GammaScope::Full => None,
    };

    let mut blocks = Vec::with_capacity(ctx.structural.len());
    for (pos, &r) in ctx.structural.iter().enumerate() {
        let h_r = tape.slice_rows(rel, r, r + 1)?;
        let gated = tape.mul_row(h, h_r)?;
        let graph_part = tape.matmul_bt(gated, w_h)?;
        let q_part = match q_shared {
            Some(v) => v,
            None => {
                let scale = p.var(&pname(layer, "rel_tax"))?;
                let s = tape.slice_rows(scale, pos, pos + 1)?;
                let gq = tape.mul_row(q, s)?;
                tape.matmul_bt(gq, w_q)?
            }
        };
        blocks.push(tape.add(graph_part, q_part)?);
    }
    let messages = tape.concat_rows(&blocks)?;
    let agg = tape.edge_aggregate(messages, alpha, ctx.msg_row.clone(), ctx.edge_dst.clone(), ctx.n)?;
    let out = tape.relu(agg);
    tape.value(out)
        .check_finite(&format!("node states after layer {layer}"))?;
    Ok(LayerOutput { alpha, h: out })
}

/// `h_r ← W_r h_r` for every relation row.
pub fn update_relations(tape: &mut Tape, p: &BoundParams, layer: usize, rel: Var) -> Result<Var> {
    let w_r = p.var(&pname(layer, "w_r"))?;
    tape.matmul_bt(rel, w_r)
}

pub struct WrgnnOutput {
    pub h: Var,
    pub rel: Var,
    pub alphas: Vec<Var>,
}

/// Alternates aggregation and relation updates for `cfg.layers` rounds.
pub fn forward(
    tape: &mut Tape,
    p: &BoundParams,
    cfg: &ModelConfig,
    ctx: &GraphContext,
    h0: Var,
    q: Var,
    rel0: Var,
) -> Result<WrgnnOutput> {
    let (mut h, mut rel) = (h0, rel0);
    let mut alphas = Vec::with_capacity(cfg.layers);
    for l in 0..cfg.layers {
        let out = aggregate_layer(tape, p, cfg, ctx, l, h, q, rel)?;
        alphas.push(out.alpha);
        h = out.h;
        rel = update_relations(tape, p, l, rel)?;
    }
    Ok(WrgnnOutput { h, rel, alphas })
}
