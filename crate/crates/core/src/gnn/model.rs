use std::cmp::Ordering;

use cellgraph_autodiff::{Checkpoint, Tape, Tensor, Var};

use super::{conv_block, GnnError, GraphState, ModelParams, ParamVars, Result};
use crate::graphbuilder::{CellGraph, PatchedGraph};

/// How empty patches enter the merge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PatchPolicy {
    /// Replace an empty patch by a single all-zero node.
    #[default]
    PadEmpty,
    /// Leave empty patches out of the merge mean.
    SkipEmpty,
}

/// Node order used for every forward pass: by centroid, then features.
/// Fixes the summation order so the prediction is bit-identical under any
/// input permutation.
pub fn canonical_order(graph: &CellGraph) -> Vec<usize> {
    let mut order: Vec<usize> = (0..graph.n()).collect();
    order.sort_by(|&a, &b| {
        let (ca, cb) = (graph.coords[a], graph.coords[b]);
        ca.0.total_cmp(&cb.0)
            .then(ca.1.total_cmp(&cb.1))
            .then_with(|| {
                graph
                    .feature_row(a)
                    .iter()
                    .zip(graph.feature_row(b))
                    .map(|(x, y)| x.total_cmp(y))
                    .find(|o| *o != Ordering::Equal)
                    .unwrap_or(Ordering::Equal)
            })
    });
    order
}

/// Per-feature affine map applied to node features before the network.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureScaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureScaler {
    /// Mean and population std over every node of `graphs`; constant
    /// features get std 1.
    pub fn fit<'a>(graphs: impl IntoIterator<Item = &'a CellGraph>) -> Option<Self> {
        let mut sum: Vec<f64> = Vec::new();
        let mut sq: Vec<f64> = Vec::new();
        let mut count = 0usize;
        for g in graphs {
            if sum.is_empty() {
                sum = vec![0.0; g.f];
                sq = vec![0.0; g.f];
            }
            for k in 0..g.n() {
                for (j, &v) in g.feature_row(k).iter().enumerate() {
                    sum[j] += v;
                    sq[j] += v * v;
                }
            }
            count += g.n();
        }
        if count == 0 {
            return None;
        }
        let c = count as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / c).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| {
                let s = (q / c - m * m).max(0.0).sqrt();
                if s > 1e-12 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Some(FeatureScaler { mean, std })
    }

    pub fn apply(&self, j: usize, v: f64) -> f64 {
        (v - self.mean[j]) / self.std[j]
    }
}

/// Prediction, loss and parameter gradients for one sample.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub prediction: f64,
    pub loss: f64,
    /// Aligned with [`ModelParams::tensors`].
    pub grads: Vec<Tensor>,
}

fn graph_inputs(
    tape: &mut Tape,
    graph: &CellGraph,
    feature_dim: usize,
    scaler: Option<&FeatureScaler>,
) -> Result<GraphState> {
    if graph.f != feature_dim {
        return Err(GnnError::FeatureWidth {
            expected: feature_dim,
            got: graph.f,
        });
    }
    if graph.is_empty() {
        let x = tape.constant(Tensor::zeros(&[1, feature_dim]));
        let a = tape.constant(Tensor::zeros(&[1, 1]));
        return Ok(GraphState { x, a });
    }
    let order = canonical_order(graph);
    let n = order.len();
    let x = Tensor::from_fn(n, feature_dim, |i, j| {
        let v = graph.feature_row(order[i])[j];
        scaler.map_or(v, |s| s.apply(j, v))
    });
    let a = Tensor::from_fn(n, n, |i, j| graph.adj(order[i], order[j]));
    Ok(GraphState {
        x: tape.constant(x),
        a: tape.constant(a),
    })
}

fn linear(tape: &mut Tape, x: Var, (w, b): (Var, Var)) -> Result<Var> {
    let y = tape.matmul(x, w)?;
    Ok(tape.add_row(y, b)?)
}

fn patch_embedding(
    tape: &mut Tape,
    vars: &ParamVars,
    params: &ModelParams,
    state: GraphState,
) -> Result<Var> {
    let mut state = state;
    if params.hyper.renorm_input {
        state.a = super::renormalize_adjacency(tape, state.a, params.hyper.p, params.hyper.renorm)?;
    }
    for block in &vars.blocks {
        state = conv_block(tape, state, block, &params.hyper)?;
    }
    Ok(state.x)
}

fn patch_scalar(
    tape: &mut Tape,
    vars: &ParamVars,
    params: &ModelParams,
    state: GraphState,
) -> Result<Var> {
    let heads = &vars.head;
    let mut h = patch_embedding(tape, vars, params, state)?;
    for (i, &layer) in heads.head.iter().enumerate() {
        h = linear(tape, h, layer)?;
        if i + 1 < heads.head.len() {
            h = tape.relu(h);
        }
    }
    let m = linear(tape, h, heads.merge[0])?;
    let m = tape.relu(m);
    linear(tape, m, heads.merge[1])
}

/// Records the full forward pass over `patches` and returns the `1×1`
/// prediction. `patches` holds the four quadrants, or one whole graph.
pub fn forward_on_tape(
    tape: &mut Tape,
    vars: &ParamVars,
    params: &ModelParams,
    patches: &[CellGraph],
    scaler: Option<&FeatureScaler>,
    policy: PatchPolicy,
) -> Result<Var> {
    let mut scalars = Vec::with_capacity(patches.len());
    for patch in patches {
        if patch.is_empty() && policy == PatchPolicy::SkipEmpty {
            continue;
        }
        let state = graph_inputs(tape, patch, params.feature_dim, scaler)?;
        scalars.push(patch_scalar(tape, vars, params, state)?);
    }
    if scalars.is_empty() {
        return Err(GnnError::EmptyGraph);
    }
    let mut total = scalars[0];
    for &s in &scalars[1..] {
        total = tape.add(total, s)?;
    }
    Ok(tape.scale(total, 1.0 / scalars.len() as f64))
}

fn predict_patches(
    params: &ModelParams,
    patches: &[CellGraph],
    policy: PatchPolicy,
) -> Result<f64> {
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape, false);
    let out = forward_on_tape(&mut tape, &vars, params, patches, None, policy)?;
    Ok(tape.value(out).item())
}

/// Prediction for a four-patch graph; empty patches become one zero node.
pub fn forward(pg: &PatchedGraph, params: &ModelParams) -> Result<f64> {
    if pg.patches.len() != 4 {
        return Err(GnnError::PatchCount(pg.patches.len()));
    }
    predict_patches(params, &pg.patches, PatchPolicy::PadEmpty)
}

/// Prediction for an unpatched graph.
pub fn forward_single(graph: &CellGraph, params: &ModelParams) -> Result<f64> {
    if graph.is_empty() {
        return Err(GnnError::EmptyGraph);
    }
    predict_patches(params, std::slice::from_ref(graph), PatchPolicy::PadEmpty)
}

/// Parameters plus the input scaling and patch policy used with them.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphModel {
    pub params: ModelParams,
    pub scaler: Option<FeatureScaler>,
    pub policy: PatchPolicy,
}

impl GraphModel {
    pub fn new(params: ModelParams) -> Self {
        GraphModel {
            params,
            scaler: None,
            policy: PatchPolicy::PadEmpty,
        }
    }

    pub fn predict(&self, patches: &[CellGraph]) -> Result<f64> {
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape, false);
        let out = forward_on_tape(
            &mut tape,
            &vars,
            &self.params,
            patches,
            self.scaler.as_ref(),
            self.policy,
        )?;
        Ok(tape.value(out).item())
    }

    /// Output of the last conv block for every patch the policy keeps.
    pub fn embeddings(&self, patches: &[CellGraph]) -> Result<Vec<Vec<f64>>> {
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape, false);
        let mut out = Vec::with_capacity(patches.len());
        for patch in patches {
            if patch.is_empty() && self.policy == PatchPolicy::SkipEmpty {
                continue;
            }
            let state = graph_inputs(
                &mut tape,
                patch,
                self.params.feature_dim,
                self.scaler.as_ref(),
            )?;
            let x = patch_embedding(&mut tape, &vars, &self.params, state)?;
            out.push(tape.value(x).data().to_vec());
        }
        Ok(out)
    }

    /// Data-dependent start for the head and the hidden merge layer: each
    /// unit's bias is shifted so its pre-activation has zero mean over the
    /// patches of `samples`. The patch embedding carries a large
    /// sample-independent offset; left in place, the first steps move the
    /// head along it and can silence every merge unit.
    pub fn calibrate_head<'a>(
        &mut self,
        samples: impl IntoIterator<Item = &'a [CellGraph]>,
    ) -> Result<()> {
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for patches in samples {
            rows.extend(self.embeddings(patches)?);
        }
        if rows.is_empty() {
            return Ok(());
        }
        let n = rows.len() as f64;
        for (li, layer) in ["head1", "head2", "head3", "merge1"].iter().enumerate() {
            let w = self
                .params
                .get(&format!("{layer}.weight"))
                .expect("head layout")
                .clone();
            let b = self
                .params
                .get_mut(&format!("{layer}.bias"))
                .expect("head layout");
            let (fan_in, width) = (w.shape()[0], w.shape()[1]);
            let pre: Vec<Vec<f64>> = rows
                .iter()
                .map(|r| {
                    (0..width)
                        .map(|j| {
                            (0..fan_in)
                                .map(|i| r[i] * w.data()[i * width + j])
                                .sum::<f64>()
                        })
                        .collect()
                })
                .collect();
            for j in 0..width {
                b.data_mut()[j] = -pre.iter().map(|p| p[j]).sum::<f64>() / n;
            }
            // head3 feeds merge1 without a ReLU
            let relu = li != 2;
            rows = pre
                .iter()
                .map(|p| {
                    p.iter()
                        .zip(b.data())
                        .map(|(v, c)| if relu { (v + c).max(0.0) } else { v + c })
                        .collect()
                })
                .collect();
        }
        Ok(())
    }

    /// Smooth-L1 loss against `target` and its gradient for every parameter.
    pub fn evaluate(&self, patches: &[CellGraph], target: f64, delta: f64) -> Result<Evaluation> {
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape, true);
        let out = forward_on_tape(
            &mut tape,
            &vars,
            &self.params,
            patches,
            self.scaler.as_ref(),
            self.policy,
        )?;
        let prediction = tape.value(out).item();
        let residual = tape.add_scalar(out, -target);
        let loss = tape.huber(residual, delta);
        tape.backward(loss)?;
        Ok(Evaluation {
            prediction,
            loss: tape.value(loss).item(),
            grads: vars.flat.iter().map(|&v| tape.grad_or_zeros(v)).collect(),
        })
    }

    /// `θ ← θ − lr·g` for every parameter tensor.
    pub fn step(&mut self, grads: &[Tensor], lr: f64) {
        for (t, g) in self.params.tensors.iter_mut().zip(grads) {
            for (w, d) in t.data_mut().iter_mut().zip(g.data()) {
                *w -= lr * d;
            }
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = self.params.to_checkpoint();
        ck.header.push((
            "patch_policy".into(),
            match self.policy {
                PatchPolicy::PadEmpty => "pad",
                PatchPolicy::SkipEmpty => "skip",
            }
            .into(),
        ));
        if let Some(s) = &self.scaler {
            let f = s.mean.len();
            ck.tensors.push((
                "input.mean".into(),
                Tensor::new(&[1, f], s.mean.clone()).expect("scaler width"),
            ));
            ck.tensors.push((
                "input.std".into(),
                Tensor::new(&[1, f], s.std.clone()).expect("scaler width"),
            ));
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let params = ModelParams::from_checkpoint(ck)?;
        let policy = match ck.header_value("patch_policy") {
            None | Some("pad") => PatchPolicy::PadEmpty,
            Some("skip") => PatchPolicy::SkipEmpty,
            Some(other) => {
                return Err(GnnError::Checkpoint(format!(
                    "unknown patch policy {other:?}"
                )))
            }
        };
        let scaler = match (ck.tensor("input.mean"), ck.tensor("input.std")) {
            (Some(m), Some(s))
                if m.numel() == params.feature_dim && s.numel() == params.feature_dim =>
            {
                Some(FeatureScaler {
                    mean: m.data().to_vec(),
                    std: s.data().to_vec(),
                })
            }
            (None, None) => None,
            _ => return Err(GnnError::Checkpoint("malformed input scaler".into())),
        };
        Ok(GraphModel {
            params,
            scaler,
            policy,
        })
    }
}
