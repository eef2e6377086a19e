//! Geographically weighted self-attention over each POI's spatial neighbors.

use super::context::GraphContext;
use super::ModelConfig;
use crate::error::Result;
use crate::tensor::{BoundParams, Tape, Tensor, Var};

pub struct SpatialOutput {
    /// Spatial context `[n, d_p]`; zero rows for POIs without neighbors.
    pub context: Option<Var>,
    /// Attention over the flattened spatial pairs, `[P]`.
    pub beta: Option<Var>,
}

pub fn spatial_context(
    tape: &mut Tape,
    p: &BoundParams,
    cfg: &ModelConfig,
    ctx: &GraphContext,
    h: Var,
) -> Result<SpatialOutput> {
    if ctx.sp_i.is_empty() {
        return Ok(SpatialOutput {
            context: None,
            beta: None,
        });
    }
    let qs = tape.matmul_bt(h, p.var("spatial.w_q")?)?;
    let ks = tape.matmul_bt(h, p.var("spatial.w_k")?)?;
    let vs = tape.matmul_bt(h, p.var("spatial.w_v")?)?;
    let raw = tape.pair_dot(qs, ks, ctx.sp_i.clone(), ctx.sp_j.clone())?;
    let raw = tape.scale(raw, 1.0 / (cfg.d_p as f64).sqrt());
    let kernel = tape.constant(Tensor::vector(ctx.sp_kernel.clone())?);
    let e = tape.mul(raw, kernel)?;
    let beta = tape.segment_softmax(e, ctx.sp_i.clone(), ctx.n)?;
    let out = tape.edge_aggregate(vs, beta, ctx.sp_j.clone(), ctx.sp_i.clone(), ctx.n)?;
    Ok(SpatialOutput {
        context: Some(out),
        beta: Some(beta),
    })
}

/// View fusion by element-wise sum.
pub fn fuse(tape: &mut Tape, h_graph: Var, h_spatial: Option<Var>) -> Result<Var> {
    match h_spatial {
        Some(s) => tape.add(h_graph, s),
        None => Ok(h_graph),
    }
}
