use cellgraph_autodiff::{Checkpoint, Tape, Tensor, Var};
use rand::Rng;

use super::{GnnError, HyperParams, Result, HEAD_DIMS, MERGE_DIMS};
use crate::rng::rng_from;

const BLOCK_TENSORS: usize = 8;

/// All learnable tensors, in a fixed order determined by the configuration.
///
/// Per block: three convolution weights (`in×e`), re-embedding weight
/// (`3e×e`) and bias (`1×e`), patch-norm scale and shift (`1×e`), and the
/// pooling convolution weight (`e×k_b`). Then the head (`e→50→25→3`) and
/// merge (`3→3→1`) layers, each a weight and a `1×out` bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub feature_dim: usize,
    pub hyper: HyperParams,
    pub names: Vec<String>,
    pub tensors: Vec<Tensor>,
}

/// Shapes with `(name, rows, cols, kind)`; kind 0 = weight, 1 = bias,
/// 2 = norm scale.
fn layout(feature_dim: usize, hyper: &HyperParams) -> Vec<(String, usize, usize, u8)> {
    let e = hyper.embed_dim;
    let mut out = Vec::new();
    for (b, &k) in hyper.pool_sizes.iter().enumerate() {
        let input = if b == 0 { feature_dim } else { e };
        let blk = b + 1;
        for c in 1..=3 {
            out.push((format!("block{blk}.conv{c}"), input, e, 0));
        }
        out.push((format!("block{blk}.reembed.weight"), 3 * e, e, 0));
        out.push((format!("block{blk}.reembed.bias"), 1, e, 1));
        out.push((format!("block{blk}.norm.scale"), 1, e, 2));
        out.push((format!("block{blk}.norm.shift"), 1, e, 1));
        out.push((format!("block{blk}.pool"), e, k, 0));
    }
    let mut prev = e;
    for (i, &width) in HEAD_DIMS.iter().enumerate() {
        out.push((format!("head{}.weight", i + 1), prev, width, 0));
        out.push((format!("head{}.bias", i + 1), 1, width, 1));
        prev = width;
    }
    for (i, &width) in MERGE_DIMS.iter().enumerate() {
        out.push((format!("merge{}.weight", i + 1), prev, width, 0));
        out.push((format!("merge{}.bias", i + 1), 1, width, 1));
        prev = width;
    }
    out
}

impl ModelParams {
    /// Weights uniform in `±sqrt(6/(fan_in+fan_out))`, biases and shifts zero,
    /// norm scales one.
    pub fn init(feature_dim: usize, hyper: &HyperParams, seed: u64) -> Result<Self> {
        hyper.validate()?;
        let mut rng = rng_from(seed);
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        for (name, rows, cols, kind) in layout(feature_dim, hyper) {
            let t = match kind {
                0 => {
                    let bound = (6.0 / (rows + cols) as f64).sqrt();
                    Tensor::from_fn(rows, cols, |_, _| rng.random_range(-bound..=bound))
                }
                1 => Tensor::zeros(&[rows, cols]),
                _ => Tensor::ones(&[rows, cols]),
            };
            names.push(name);
            tensors.push(t);
        }
        Ok(ModelParams {
            feature_dim,
            hyper: hyper.clone(),
            names,
            tensors,
        })
    }

    /// Every tensor zero, including norm scales.
    pub fn zeros(feature_dim: usize, hyper: &HyperParams) -> Result<Self> {
        let mut p = Self::init(feature_dim, hyper, 0)?;
        for t in &mut p.tensors {
            t.data_mut().fill(0.0);
        }
        Ok(p)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index_of(name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index_of(name).map(move |i| &mut self.tensors[i])
    }

    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Records every tensor on `tape`, tracked when `trainable`.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> ParamVars {
        let vars: Vec<Var> = self
            .tensors
            .iter()
            .map(|t| tape.leaf(t.clone(), trainable))
            .collect();
        ParamVars::from_flat(&vars, self.hyper.blocks())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let h = &self.hyper;
        let pools: Vec<String> = h.pool_sizes.iter().map(usize::to_string).collect();
        Checkpoint {
            header: vec![
                ("model".into(), "cellgraph-sage-diffpool".into()),
                ("feature_dim".into(), self.feature_dim.to_string()),
                ("embed_dim".into(), h.embed_dim.to_string()),
                ("p".into(), h.p.to_string()),
                ("pool_sizes".into(), pools.join(",")),
                ("renorm".into(), h.renorm.to_string()),
                ("renorm_input".into(), h.renorm_input.to_string()),
            ],
            tensors: self
                .names
                .iter()
                .cloned()
                .zip(self.tensors.iter().cloned())
                .collect(),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let field = |k: &str| {
            ck.header_value(k)
                .ok_or_else(|| GnnError::Checkpoint(format!("missing header {k}")))
        };
        let num = |k: &str| -> Result<usize> {
            field(k)?
                .parse()
                .map_err(|_| GnnError::Checkpoint(format!("bad header {k}")))
        };
        let pool_sizes = field("pool_sizes")?
            .split(',')
            .map(|s| {
                s.parse()
                    .map_err(|_| GnnError::Checkpoint("bad pool_sizes".into()))
            })
            .collect::<Result<Vec<usize>>>()?;
        let hyper = HyperParams {
            embed_dim: num("embed_dim")?,
            p: field("p")?
                .parse()
                .map_err(|_| GnnError::Checkpoint("bad p".into()))?,
            pool_sizes,
            renorm: field("renorm")?.parse().map_err(GnnError::Checkpoint)?,
            renorm_input: field("renorm_input")?
                .parse()
                .map_err(|_| GnnError::Checkpoint("bad renorm_input".into()))?,
        };
        let mut params = Self::init(num("feature_dim")?, &hyper, 0)?;
        for (name, slot) in params.names.iter().zip(params.tensors.iter_mut()) {
            let t = ck
                .tensor(name)
                .ok_or_else(|| GnnError::Checkpoint(format!("missing tensor {name}")))?;
            if t.shape() != slot.shape() {
                return Err(GnnError::Checkpoint(format!(
                    "tensor {name} has shape {:?}, expected {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            *slot = t.clone();
        }
        Ok(params)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BlockVars {
    pub conv: [Var; 3],
    pub reembed_w: Var,
    pub reembed_b: Var,
    pub norm_scale: Var,
    pub norm_shift: Var,
    pub pool: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct HeadVars {
    pub head: [(Var, Var); 3],
    pub merge: [(Var, Var); 2],
}

/// Tape handles for a bound [`ModelParams`], in the same order.
#[derive(Debug, Clone)]
pub struct ParamVars {
    pub blocks: Vec<BlockVars>,
    pub head: HeadVars,
    pub flat: Vec<Var>,
}

impl ParamVars {
    fn from_flat(vars: &[Var], blocks: usize) -> Self {
        let block_vars = (0..blocks)
            .map(|b| {
                let v = &vars[b * BLOCK_TENSORS..(b + 1) * BLOCK_TENSORS];
                BlockVars {
                    conv: [v[0], v[1], v[2]],
                    reembed_w: v[3],
                    reembed_b: v[4],
                    norm_scale: v[5],
                    norm_shift: v[6],
                    pool: v[7],
                }
            })
            .collect();
        let h = &vars[blocks * BLOCK_TENSORS..];
        ParamVars {
            blocks: block_vars,
            head: HeadVars {
                head: [(h[0], h[1]), (h[2], h[3]), (h[4], h[5])],
                merge: [(h[6], h[7]), (h[8], h[9])],
            },
            flat: vars.to_vec(),
        }
    }
}
