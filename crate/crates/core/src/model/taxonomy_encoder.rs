//! Category representations from root-path sums of taxonomy node embeddings.

use super::context::GraphContext;
use crate::error::Result;
use crate::tensor::{BoundParams, Tape, Var};

/// `[|T|, d_c]`: row `t` is the sum of `cat_emb` rows on the root→`t` path,
/// or just `cat_emb[t]` when `independent` (the taxonomy ablation).
pub fn node_representations(tape: &mut Tape, p: &BoundParams, ctx: &GraphContext, independent: bool) -> Result<Var> {
    let table = p.var("cat_emb")?;
    if independent {
        return Ok(table);
    }
    let rows = tape.gather_rows(table, ctx.tax_path_nodes.clone())?;
    tape.segment_sum(rows, ctx.tax_path_owner.clone(), ctx.n_tax)
}

/// Category representation `q` of every POI, `[n, d_c]`.
pub fn category_repr(tape: &mut Tape, p: &BoundParams, ctx: &GraphContext, independent: bool) -> Result<Var> {
    let nodes = node_representations(tape, p, ctx, independent)?;
    tape.gather_rows(nodes, ctx.categories.clone())
}

/// `[h ∥ q]`.
pub fn augment(tape: &mut Tape, h: Var, q: Var) -> Result<Var> {
    tape.concat_cols(h, q)
}
