use crate::error::Result;
use crate::tensor::{Graph, Scalar, Var};

/// Unmasked multi-head self-attention over `x: [B, T, d]`.
///
/// Each head computes `softmax(Q K^T / sqrt(d / heads)) V` on its slice of
/// the projected sequence; heads are concatenated and projected by `wo`.
pub fn multi_head_attention<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    [wq, wk, wv, wo]: [Var; 4],
    heads: usize,
) -> Result<Var> {
    let d = *g.shape(x).last().unwrap_or(&0);
    let q = g.matmul(x, wq)?;
    let k = g.matmul(x, wk)?;
    let v = g.matmul(x, wv)?;
    let qh = g.split_heads(q, heads)?;
    let kh = g.split_heads(k, heads)?;
    let vh = g.split_heads(v, heads)?;
    let kt = g.transpose_last2(kh)?;
    let scores = g.matmul(qh, kt)?;
    let scaled = g.scale(scores, T::of(1.0 / ((d / heads) as f64).sqrt()));
    let weights = g.softmax_last(scaled);
    let ctx = g.matmul(weights, vh)?;
    let merged = g.merge_heads(ctx)?;
    g.matmul(merged, wo)
}
