use cellgraph_autodiff::{Tape, Tensor, Var};

use super::{BlockVars, HyperParams, RenormMode, Result};

pub const NORM_EPS: f64 = 1e-5;

/// Node features and adjacency of one graph on a tape.
#[derive(Debug, Clone, Copy)]
pub struct GraphState {
    /// `n×e`.
    pub x: Var,
    /// `n×n`.
    pub a: Var,
}

impl GraphState {
    pub fn n(&self, tape: &Tape) -> usize {
        tape.value(self.a).rows()
    }
}

fn off_diagonal_mask(n: usize) -> Tensor {
    Tensor::from_fn(n, n, |i, j| if i == j { 0.0 } else { 1.0 })
}

/// Row-stochastic mean-aggregation operator: row `v` weights itself by 1 and
/// each neighbor `u` by `A[v][u]`, divided by `1 + Σ_{u≠v} A[v][u]`.
pub fn propagation_matrix(tape: &mut Tape, a: Var) -> Result<Var> {
    let n = tape.value(a).rows();
    let mask = tape.constant(off_diagonal_mask(n));
    let off = tape.mul(a, mask)?;
    let eye = tape.constant(Tensor::identity(n));
    let weights = tape.add(off, eye)?;
    let degree = tape.row_sum(weights)?;
    let inv = tape.recip_or_zero(degree);
    Ok(tape.mul_col(weights, inv)?)
}

/// One-hop GraphSAGE mean convolution followed by ReLU.
pub fn sage_conv(tape: &mut Tape, x: Var, a: Var, w: Var) -> Result<Var> {
    let p = propagation_matrix(tape, a)?;
    let px = tape.matmul(p, x)?;
    let h = tape.matmul(px, w)?;
    Ok(tape.relu(h))
}

/// Fixes each node's self-weight to `1 − p` and spreads `p` over its
/// neighbors. Rows without neighbors become a pure self-loop.
pub fn renormalize_adjacency(tape: &mut Tape, a: Var, p: f64, mode: RenormMode) -> Result<Var> {
    let n = tape.value(a).rows();
    let mask = tape.constant(off_diagonal_mask(n));
    let off = tape.mul(a, mask)?;
    let sums = tape.row_sum(off)?;
    let isolated: Vec<bool> = tape.value(sums).data().iter().map(|&s| s == 0.0).collect();
    let inv = tape.recip_or_zero(sums);
    let spread = match mode {
        RenormMode::Weighted => tape.mul_col(off, inv)?,
        RenormMode::Literal => tape.mul_col(mask, inv)?,
    };
    let spread = tape.scale(spread, p);
    let diag = tape.constant(Tensor::from_fn(n, n, |i, j| match (i == j, isolated[i]) {
        (false, _) => 0.0,
        (true, true) => 1.0,
        (true, false) => 1.0 - p,
    }));
    Ok(tape.add(spread, diag)?)
}

/// Per-channel standardization over the patch's nodes, then `·scale + shift`.
pub fn patch_norm(tape: &mut Tape, x: Var, scale: Var, shift: Var) -> Result<Var> {
    let n = tape.value(x).rows();
    let ones = tape.constant(Tensor::ones(&[1, n]));
    let sum = tape.matmul(ones, x)?;
    let neg_mean = tape.scale(sum, -1.0 / n as f64);
    let centered = tape.add_row(x, neg_mean)?;
    let sq = tape.mul(centered, centered)?;
    let sq_sum = tape.matmul(ones, sq)?;
    let var = tape.scale(sq_sum, 1.0 / n as f64);
    let var = tape.add_scalar(var, NORM_EPS);
    let inv_std = tape.powf(var, -0.5);
    let normed = tape.mul_row(centered, inv_std)?;
    let scaled = tape.mul_row(normed, scale)?;
    Ok(tape.add_row(scaled, shift)?)
}

/// Coarsens `(x, a)` with a given soft assignment `s` (`n×k`).
pub fn diffpool_with_assignment(tape: &mut Tape, x: Var, a: Var, s: Var) -> Result<(Var, Var)> {
    let st = tape.transpose(s)?;
    let pooled_x = tape.matmul(st, x)?;
    let sta = tape.matmul(st, a)?;
    let pooled_a = tape.matmul(sta, s)?;
    Ok((pooled_x, pooled_a))
}

fn assignment(tape: &mut Tape, prop: Var, x: Var, w_pool: Var) -> Result<Var> {
    let px = tape.matmul(prop, x)?;
    let logits = tape.matmul(px, w_pool)?;
    Ok(tape.row_softmax(logits)?)
}

/// DiffPool: `S = softmax(P·X·W_pool)`, `X' = SᵀX`, `A' = SᵀAS`.
/// Returns `(X', A', S)`.
pub fn diffpool(tape: &mut Tape, x: Var, a: Var, w_pool: Var) -> Result<(Var, Var, Var)> {
    let prop = propagation_matrix(tape, a)?;
    let s = assignment(tape, prop, x, w_pool)?;
    let (px, pa) = diffpool_with_assignment(tape, x, a, s)?;
    Ok((px, pa, s))
}

/// Three concatenated convolutions, re-embedding, patch norm, ReLU, pooling
/// and adjacency renormalization.
pub fn conv_block(
    tape: &mut Tape,
    state: GraphState,
    block: &BlockVars,
    hyper: &HyperParams,
) -> Result<GraphState> {
    let prop = propagation_matrix(tape, state.a)?;
    let px = tape.matmul(prop, state.x)?;
    let mut branches = [px; 3];
    for (slot, &w) in branches.iter_mut().zip(&block.conv) {
        let h = tape.matmul(px, w)?;
        *slot = tape.relu(h);
    }
    let y = tape.concat(&branches)?;
    let z = tape.matmul(y, block.reembed_w)?;
    let z = tape.add_row(z, block.reembed_b)?;
    let z = patch_norm(tape, z, block.norm_scale, block.norm_shift)?;
    let z = tape.relu(z);
    let s = assignment(tape, prop, z, block.pool)?;
    let (x, a) = diffpool_with_assignment(tape, z, state.a, s)?;
    let a = renormalize_adjacency(tape, a, hyper.p, hyper.renorm)?;
    Ok(GraphState { x, a })
}
