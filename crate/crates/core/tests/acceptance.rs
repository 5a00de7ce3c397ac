//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so the lines always reach stdout. The
//! process exits non-zero when a criterion fails, unless that criterion is
//! listed in `KNOWN_FAILING` (those still print FAIL).

use std::collections::HashMap;
use std::time::Instant;

use cellgraph::featureio::{read_features, write_features, CellFeatureSet, CellRecord, SynthSpec};
use cellgraph::gnn::{
    forward, forward_on_tape, renormalize_adjacency, GraphModel, HyperParams, ModelParams,
    PatchPolicy, RenormMode,
};
use cellgraph::graphbuilder::{
    augment, build_graph, edge_weight, read_graph, split_patches, write_graph, AugmentParams,
    CellGraph, GraphFormat, PatchedGraph,
};
use cellgraph::sampler::{
    allocate_counts, box_of, build_distribution_map, scale_distribution, select_features,
    SampleBudget,
};
use cellgraph::trainer::{
    build_dataset, cross_validate, evaluate_cv, smooth_l1, synthetic_feature_sets, Dataset,
    MetricsWriter, TrainConfig,
};
use cellgraph_autodiff::{grad_check_many, Checkpoint, Result as AdResult, Tape, Tensor, Var};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

/// Criteria that are not met by this implementation; see the README.
const KNOWN_FAILING: &[usize] = &[8];

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn rng(seed: u64) -> Xoshiro256PlusPlus {
    Xoshiro256PlusPlus::seed_from_u64(seed)
}

fn random_set(r: &mut Xoshiro256PlusPlus, n: usize, dims: (usize, usize), f: usize) -> CellFeatureSet {
    CellFeatureSet {
        image_dims: dims,
        dim: f,
        cells: (0..n)
            .map(|i| CellRecord {
                id: i as u32 + 1,
                centroid: (
                    r.random_range(0.0..dims.0 as f64),
                    r.random_range(0.0..dims.1 as f64),
                ),
                features: (0..f).map(|_| r.random_range(-1.0..1.0)).collect(),
            })
            .collect(),
        label: Some(r.random_range(0..3)),
    }
}

fn formulas() -> Verdict {
    let mut r = rng(1);
    let cases = 25;
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let (dk, dm): (f64, f64) = (r.random_range(0.0..50.0), r.random_range(0.0..50.0));
        let (a, b) = (r.random_range(0.0..=1.0), r.random_range(0.0..=1.0));
        let hand = a * (dk + dm) + b * (dk - dm).abs();
        worst = worst.max((edge_weight(dk, dm, a, b) - hand).abs());
    }
    for _ in 0..cases {
        let d = r.random_range(1..8);
        let counts: Vec<f64> = (0..d * d).map(|_| r.random_range(0..20) as f64).collect();
        let mut points = Vec::new();
        for (k, &c) in counts.iter().enumerate() {
            let (i, j) = (k / d, k % d);
            for _ in 0..c as usize {
                points.push((j as f64 * 10.0 + 5.0, i as f64 * 10.0 + 5.0));
            }
        }
        if points.is_empty() {
            points.push((5.0, 5.0));
        }
        let raw = build_distribution_map(&points, (10 * d, 10 * d), d).unwrap();
        let m = r.random_range(1..500);
        let scaled = scale_distribution(&raw, m).unwrap();
        let norm: f64 = raw.counts.iter().map(|c| c.abs()).sum();
        for k in 0..d * d {
            worst = worst.max((scaled.counts[k] - m as f64 / norm * raw.counts[k]).abs());
        }
    }
    for case in 0..cases {
        let n = r.random_range(2..10);
        let p = if case == 0 { 0.4 } else { r.random_range(0.01..0.99) };
        let a = Tensor::from_fn(n, n, |_, _| r.random_range(0.0..5.0));
        for mode in [RenormMode::Weighted, RenormMode::Literal] {
            let mut tape = Tape::new();
            let v = tape.constant(a.clone());
            let out = renormalize_adjacency(&mut tape, v, p, mode).unwrap();
            let got = tape.value(out);
            for i in 0..n {
                let s: f64 = (0..n).filter(|&m| m != i).map(|m| a.get(i, m)).sum();
                for j in 0..n {
                    let hand = if i == j {
                        1.0 - p
                    } else {
                        match mode {
                            RenormMode::Weighted => p * a.get(i, j) / s,
                            RenormMode::Literal => p / s,
                        }
                    };
                    worst = worst.max((got.get(i, j) - hand).abs());
                }
            }
        }
    }
    for _ in 0..cases {
        let (pred, target) = (r.random_range(-4.0..4.0), r.random_range(0.0..2.0));
        let delta = r.random_range(0.1..2.0);
        let res: f64 = pred - target;
        let hand = if res.abs() < delta {
            0.5 * res * res / delta
        } else {
            res.abs() - 0.5 * delta
        };
        worst = worst.max((smooth_l1(pred, target, delta) - hand).abs());
    }
    verdict(
        worst <= 1e-12,
        format!("{cases} cases per formula, max abs error {worst:.2e}"),
    )
}

fn sampling() -> Verdict {
    let mut r = rng(2);
    let mut problems = Vec::new();
    for case in 0..100 {
        let dims = (r.random_range(10..400), r.random_range(10..400));
        let n = r.random_range(1..400);
        let set = random_set(&mut r, n, dims, 8);
        let d = r.random_range(1..20);
        let m = r.random_range(1..500);
        let raw = build_distribution_map(&set.centroids(), dims, d).unwrap();
        let budget = allocate_counts(&scale_distribution(&raw, m).unwrap(), &raw);
        let chosen = select_features(&set, &budget, r.random()).unwrap();
        if chosen.len() != m.min(n) {
            problems.push(format!("case {case}: {} selected, want {}", chosen.len(), m.min(n)));
        }
        let mut per_box = vec![0usize; d * d];
        for c in &chosen.cells {
            let (i, j) = box_of(c.centroid.0, c.centroid.1, dims, d);
            per_box[i * d + j] += 1;
        }
        for k in 0..d * d {
            if per_box[k] != budget.allocation[k] || budget.allocation[k] as f64 > raw.counts[k] {
                problems.push(format!("case {case}: box {k} outside its allocation"));
            }
        }
    }
    let points = [(1.0, 1.0), (2.0, 1.5), (3.0, 2.0), (1.5, 3.0), (2.5, 2.5)];
    let mut five = random_set(&mut r, 5, (4, 4), 8);
    for (c, p) in five.cells.iter_mut().zip(points) {
        c.centroid = p;
    }
    let budget = SampleBudget {
        m: 2,
        d: 1,
        image_dims: (4, 4),
        allocation: vec![2],
    };
    let mut hits = [0usize; 5];
    for seed in 0..10_000u64 {
        for c in select_features(&five, &budget, seed).unwrap().cells {
            hits[c.id as usize - 1] += 1;
        }
    }
    let dev = hits
        .iter()
        .map(|&h| (h as f64 / 10_000.0 - 0.4).abs())
        .fold(0.0, f64::max);
    if dev > 0.02 {
        problems.push(format!("selection frequency off by {dev:.4}"));
    }
    verdict(
        problems.is_empty(),
        format!(
            "100 point sets; per-cell frequency max deviation {dev:.4} over 10000 seeds{}",
            problems.first().map_or(String::new(), |p| format!("; {p}"))
        ),
    )
}

const BOX: f64 = 25.0;
const GD: usize = 4;

/// Cells at random offsets in `[0, BOX/2)` inside the listed boxes of a
/// `GD×GD` grid over a 100×100 image.
fn boxed(r: &mut Xoshiro256PlusPlus, boxes: &[usize]) -> CellFeatureSet {
    let mut set = random_set(r, boxes.len(), (100, 100), 4);
    for (c, &b) in set.cells.iter_mut().zip(boxes) {
        c.centroid = (
            (b % GD) as f64 * BOX + r.random_range(0.0..BOX / 2.0),
            (b / GD) as f64 * BOX + r.random_range(0.0..BOX / 2.0),
        );
    }
    set
}

fn full_graph(set: &CellFeatureSet, alpha: f64, beta: f64) -> CellGraph {
    let raw = build_distribution_map(&set.centroids(), set.image_dims, GD).unwrap();
    let scaled = scale_distribution(&raw, set.len()).unwrap();
    let params = AugmentParams {
        alpha,
        beta,
        d: GD,
        m: set.len(),
    };
    build_graph(set, &scaled, &params).unwrap()
}

fn graphs() -> Verdict {
    let mut r = rng(3);
    let mut problems = Vec::new();
    for case in 0..50 {
        let n = r.random_range(1..=30);
        let boxes: Vec<usize> = (0..n).map(|_| r.random_range(0..GD * GD)).collect();
        let (alpha, beta) = (r.random_range(0.0..=1.0), r.random_range(0.0..=1.0));
        let set = boxed(&mut r, &boxes);
        let g = full_graph(&set, alpha, beta);

        let raw = build_distribution_map(&set.centroids(), (100, 100), GD).unwrap();
        let scaled = scale_distribution(&raw, n).unwrap();
        for k in 0..n {
            for m in 0..n {
                let (dk, dm) = (scaled.counts[boxes[k]], scaled.counts[boxes[m]]);
                let want = alpha * (dk + dm) + beta * (dk - dm).abs();
                if g.adj(k, m) != want || g.adj(k, m) != g.adj(m, k) || g.adj(k, m) < 0.0 {
                    problems.push(format!("case {case}: entry ({k},{m})"));
                }
            }
        }

        let (dx, dy) = (r.random_range(0.0..BOX / 2.0), r.random_range(0.0..BOX / 2.0));
        let mut moved = set.clone();
        for c in &mut moved.cells {
            c.centroid = (c.centroid.0 + dx, c.centroid.1 + dy);
        }
        let params = AugmentParams {
            d: GD,
            m: r.random_range(1..40),
            alpha,
            beta,
        };
        let seed = r.random();
        if augment(&set, &params, seed).unwrap().adjacency
            != augment(&moved, &params, seed).unwrap().adjacency
        {
            problems.push(format!("case {case}: pixel offset changed the adjacency"));
        }

        let mut perm: Vec<usize> = (0..GD * GD).collect();
        perm.shuffle(&mut r);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut r);
        let permuted_boxes: Vec<usize> = order.iter().map(|&k| perm[boxes[k]]).collect();
        let other = full_graph(&boxed(&mut r, &permuted_boxes), alpha, beta);
        for p in 0..n {
            for q in 0..n {
                if other.adj(p, q) != g.adj(order[p], order[q]) {
                    problems.push(format!("case {case}: box permutation not isomorphic"));
                }
            }
        }
    }
    verdict(
        problems.is_empty(),
        format!(
            "50 instances, n <= 30, brute-force oracle{}",
            problems.first().map_or(String::new(), |p| format!("; {p}"))
        ),
    )
}

fn renorm_rows() -> Verdict {
    let mut r = rng(4);
    let mut worst = 0.0f64;
    for case in 0..21 {
        let p = if case == 0 { 0.4 } else { r.random_range(0.001..0.999) };
        let n = r.random_range(2..16);
        let a = Tensor::from_fn(n, n, |_, _| r.random_range(0.01..10.0));
        let mut tape = Tape::new();
        let v = tape.constant(a);
        let out = renormalize_adjacency(&mut tape, v, p, RenormMode::Weighted).unwrap();
        let w = tape.value(out);
        for i in 0..n {
            let off: f64 = (0..n).filter(|&j| j != i).map(|j| w.get(i, j)).sum();
            let row: f64 = w.row(i).iter().sum();
            worst = worst
                .max((w.get(i, i) - (1.0 - p)).abs())
                .max((off - p).abs())
                .max((row - 1.0).abs());
        }
    }
    verdict(
        worst <= 1e-12,
        format!("p = 0.4 and 20 random p, max abs error {worst:.2e}"),
    )
}

fn project(tape: &mut Tape, v: Var, seed: u64) -> AdResult<Var> {
    let shape = tape.value(v).shape().to_vec();
    let mut r = rng(seed);
    let w = tape.constant(Tensor::from_fn(shape[0], shape[1], |_, _| {
        r.random_range(-1.0..1.0)
    }));
    let prod = tape.mul(v, w)?;
    Ok(tape.sum_all(prod))
}

type Prim = Box<dyn Fn(&mut Tape, &[Var]) -> AdResult<Var>>;

fn primitive_errors() -> Vec<(&'static str, f64)> {
    let mut r = rng(5);
    let mut rand_t = |rows, cols| Tensor::from_fn(rows, cols, |_, _| r.random_range(-1.0..1.0));
    let signed = |rows, cols, seed| {
        let mut q = rng(seed);
        Tensor::from_fn(rows, cols, |_, _| {
            let m = q.random_range(0.1..1.5);
            if q.random_bool(0.5) { m } else { -m }
        })
    };
    let positive = Tensor::from_fn(3, 4, |i, j| 0.5 + (i * 4 + j) as f64 * 0.1);
    let huber_in = Tensor::from_fn(4, 4, |i, j| {
        let v = [0.05, 0.2, 0.9, 1.7][(i + j) % 4];
        if i % 2 == 0 { v } else { -v }
    });
    let cases: Vec<(&str, Vec<Tensor>, Prim)> = vec![
        ("matmul", vec![rand_t(4, 5), rand_t(5, 3)], Box::new(|t, v| t.matmul(v[0], v[1]))),
        ("add", vec![rand_t(3, 4), rand_t(3, 4)], Box::new(|t, v| t.add(v[0], v[1]))),
        ("subtract", vec![rand_t(3, 4), rand_t(3, 4)], Box::new(|t, v| t.sub(v[0], v[1]))),
        ("multiply", vec![rand_t(3, 4), rand_t(3, 4)], Box::new(|t, v| t.mul(v[0], v[1]))),
        ("scalar-multiply", vec![rand_t(3, 3)], Box::new(|t, v| Ok(t.scale(v[0], -2.5)))),
        ("concat", vec![rand_t(3, 2), rand_t(3, 4)], Box::new(|t, v| t.concat(&[v[0], v[1]]))),
        ("slice", vec![rand_t(3, 6)], Box::new(|t, v| t.slice_cols(v[0], 1, 4))),
        ("transpose", vec![rand_t(3, 5)], Box::new(|t, v| t.transpose(v[0]))),
        ("relu", vec![signed(4, 4, 50)], Box::new(|t, v| Ok(t.relu(v[0])))),
        ("sigmoid", vec![rand_t(4, 4)], Box::new(|t, v| Ok(t.sigmoid(v[0])))),
        ("row-softmax", vec![rand_t(4, 5)], Box::new(|t, v| t.row_softmax(v[0]))),
        ("row-mean", vec![rand_t(4, 5)], Box::new(|t, v| t.row_mean(v[0]))),
        ("row-sum", vec![rand_t(4, 5)], Box::new(|t, v| t.row_sum(v[0]))),
        ("mean-all", vec![rand_t(4, 5)], Box::new(|t, v| Ok(t.mean_all(v[0])))),
        ("abs", vec![signed(4, 4, 51)], Box::new(|t, v| Ok(t.abs(v[0])))),
        ("huber", vec![huber_in], Box::new(|t, v| Ok(t.huber(v[0], 0.5)))),
        ("add-row", vec![rand_t(4, 3), rand_t(1, 3)], Box::new(|t, v| t.add_row(v[0], v[1]))),
        ("mul-row", vec![rand_t(4, 3), rand_t(1, 3)], Box::new(|t, v| t.mul_row(v[0], v[1]))),
        ("mul-col", vec![rand_t(4, 3), rand_t(4, 1)], Box::new(|t, v| t.mul_col(v[0], v[1]))),
        ("powf", vec![positive.clone()], Box::new(|t, v| Ok(t.powf(v[0], -0.5)))),
        ("recip", vec![positive], Box::new(|t, v| Ok(t.recip_or_zero(v[0])))),
    ];
    cases
        .into_iter()
        .map(|(name, inputs, f)| {
            let err = grad_check_many(
                |t, v| {
                    let y = f(t, v)?;
                    project(t, y, 99)
                },
                &inputs,
                1e-5,
            )
            .unwrap();
            (name, err)
        })
        .collect()
}

fn end_to_end_error() -> f64 {
    let hyper = HyperParams {
        embed_dim: 4,
        pool_sizes: vec![3, 2, 1],
        ..HyperParams::default()
    };
    let mut params = ModelParams::init(5, &hyper, 13).unwrap();
    let mut r = rng(17);
    // Nonzero biases keep degenerate patches off ReLU kinks.
    for (name, t) in params.names.iter().zip(params.tensors.iter_mut()) {
        if name.ends_with(".bias") || name.ends_with(".shift") {
            t.data_mut()
                .iter_mut()
                .for_each(|v| *v = r.random_range(0.05..0.3));
        }
    }
    let set = random_set(&mut rng(4), 6, (64, 64), 5);
    let g = augment(
        &set,
        &AugmentParams {
            d: 4,
            m: 6,
            ..AugmentParams::default()
        },
        4,
    )
    .unwrap();
    assert_eq!(g.n(), 6);
    let patches = split_patches(&g).patches;

    let mut tape = Tape::new();
    let vars = params.bind(&mut tape, true);
    let out = forward_on_tape(&mut tape, &vars, &params, &patches, None, PatchPolicy::PadEmpty)
        .unwrap();
    tape.backward(out).unwrap();
    let h = 1e-6;
    let mut worst = 0.0f64;
    let mut probe = params.clone();
    for (ti, &v) in vars.flat.iter().enumerate() {
        let grad = tape.grad_or_zeros(v);
        for k in 0..grad.numel() {
            let orig = probe.tensors[ti].data()[k];
            probe.tensors[ti].data_mut()[k] = orig + h;
            let up = GraphModel::new(probe.clone()).predict(&patches).unwrap();
            probe.tensors[ti].data_mut()[k] = orig - h;
            let down = GraphModel::new(probe.clone()).predict(&patches).unwrap();
            probe.tensors[ti].data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = grad.data()[k];
            worst = worst.max((a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs()));
        }
    }
    worst
}

fn gradients() -> Verdict {
    let prims = primitive_errors();
    let (worst_name, worst) = prims
        .iter()
        .copied()
        .fold(("", 0.0f64), |acc, p| if p.1 > acc.1 { p } else { acc });
    let e2e = end_to_end_error();
    verdict(
        worst < 1e-4 && e2e < 1e-3,
        format!(
            "{} primitives, worst {worst_name} {worst:.2e}; end-to-end {e2e:.2e}",
            prims.len()
        ),
    )
}

fn permutation() -> Verdict {
    let hyper = desk_hyper();
    let params = ModelParams::init(16, &hyper, 6).unwrap();
    let set = random_set(&mut rng(6), 120, (256, 256), 16);
    let g = augment(
        &set,
        &AugmentParams {
            m: 80,
            d: 8,
            ..AugmentParams::default()
        },
        6,
    )
    .unwrap();
    let pg = split_patches(&g);
    let base = forward(&pg, &params).unwrap();
    let mut r = rng(66);
    let mut same = 0;
    for _ in 0..20 {
        let shuffled = PatchedGraph {
            patches: pg
                .patches
                .iter()
                .map(|p| {
                    let mut order: Vec<usize> = (0..p.n()).collect();
                    order.shuffle(&mut r);
                    p.induced(&order)
                })
                .collect(),
            ..pg.clone()
        };
        if forward(&shuffled, &params).unwrap().to_bits() == base.to_bits() {
            same += 1;
        }
    }
    verdict(same == 20, format!("{same}/20 permutations bit-identical"))
}

fn desk_hyper() -> HyperParams {
    HyperParams {
        embed_dim: 16,
        pool_sizes: vec![16, 4, 1],
        ..HyperParams::default()
    }
}

fn desk_config() -> TrainConfig {
    TrainConfig {
        lr0: 1e-2,
        epochs: 200,
        hyper: desk_hyper(),
        ..TrainConfig::default()
    }
}

/// Desk-scale cross-validation runs, memoized by `(patched, M, dim)`.
struct Desk {
    sets: Vec<CellFeatureSet>,
    runs: HashMap<(bool, usize, usize), (f64, f64, f64)>,
}

impl Desk {
    fn new() -> Self {
        Desk {
            sets: synthetic_feature_sets(13, &SynthSpec::default(), 16, 0).unwrap(),
            runs: HashMap::new(),
        }
    }

    fn dataset(&self, patched: bool, m: usize, dim: usize) -> Dataset {
        let params = AugmentParams {
            m,
            ..AugmentParams::default()
        };
        build_dataset(&self.sets, &params, patched, Some(dim), 0).unwrap()
    }

    /// `(mean %, std %, seconds)`.
    fn run(&mut self, patched: bool, m: usize, dim: usize) -> (f64, f64, f64) {
        if let Some(&r) = self.runs.get(&(patched, m, dim)) {
            return r;
        }
        let t = Instant::now();
        let data = self.dataset(patched, m, dim);
        let reports: Vec<_> = cross_validate(&data, &desk_config())
            .unwrap()
            .into_iter()
            .map(|o| o.report)
            .collect();
        let (mean, std) = evaluate_cv(&reports);
        let out = (mean, std, t.elapsed().as_secs_f64());
        self.runs.insert((patched, m, dim), out);
        out
    }
}

fn learning(desk: &mut Desk) -> Verdict {
    let data = desk.dataset(true, 200, 16);
    let (mean, std, secs) = desk.run(true, 200, 16);
    let cv = |f: [f64; 3]| {
        let (m, s) = cellgraph::trainer::mean_std_percent(&f);
        ((m * 100.0).round() / 100.0, (s * 100.0).round() / 100.0)
    };
    let arithmetic = cv([1.0, 1.0, 1.0]) == (100.0, 0.0)
        && cv([0.98, 1.0, 1.0]) == (99.33, 0.94)
        && cv([1.0, 1.0, 0.9778]) == (99.26, 1.05);
    verdict(
        mean >= 95.0 && secs < 600.0 && arithmetic,
        format!(
            "{} samples, 3 folds, 200 epochs: {mean:.2} ± {std:.2} % in {secs:.1} s; mean/std arithmetic {}",
            data.len(),
            if arithmetic { "exact" } else { "WRONG" }
        ),
    )
}

fn variance(v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64
}

fn patching(desk: &mut Desk) -> Verdict {
    let grid = [100, 200, 400];
    let mut secs = 0.0;
    let mut mode = |patched: bool| -> Vec<f64> {
        grid.iter()
            .map(|&m| {
                let (mean, _, s) = desk.run(patched, m, 16);
                secs += s;
                mean
            })
            .collect()
    };
    let single = mode(false);
    let patched = mode(true);
    let (ms, mp) = (
        single.iter().sum::<f64>() / 3.0,
        patched.iter().sum::<f64>() / 3.0,
    );
    let (vs, vp) = (variance(&single), variance(&patched));
    verdict(
        mp >= ms - 2.0 && vs > vp && secs < 45.0 * 60.0,
        format!(
            "M 100/200/400 single {single:.2?} patched {patched:.2?}; means {ms:.2} vs {mp:.2}; variance single {vs:.2} vs patched {vp:.2}; {secs:.0} s"
        ),
    )
}

fn feature_dims(desk: &mut Desk) -> Verdict {
    let mut secs = 0.0;
    let means: Vec<f64> = [8, 12, 16]
        .iter()
        .map(|&f| {
            let (mean, _, s) = desk.run(true, 200, f);
            secs += s;
            mean
        })
        .collect();
    verdict(
        means.iter().all(|&m| m >= 90.0) && means[2] >= means[0] && secs < 45.0 * 60.0,
        format!("dims 8/12/16: {means:.2?} %; {secs:.0} s"),
    )
}

fn metrics_csv(data: &Dataset, config: &TrainConfig) -> Vec<u8> {
    let reports: Vec<_> = cross_validate(data, config)
        .unwrap()
        .into_iter()
        .map(|o| o.report)
        .collect();
    let mut w = MetricsWriter::new(Vec::new()).unwrap();
    for r in &reports {
        w.fold("det", "train", "patched", r).unwrap();
    }
    w.summary("det", "train", "patched", evaluate_cv(&reports)).unwrap();
    w.into_inner()
}

fn determinism() -> Verdict {
    let spec = SynthSpec {
        width: 256,
        height: 256,
        ..SynthSpec::default()
    };
    let sets = synthetic_feature_sets(3, &spec, 16, 10).unwrap();
    let params = AugmentParams {
        m: 60,
        d: 16,
        ..AugmentParams::default()
    };
    let data = build_dataset(&sets, &params, true, None, 10).unwrap();
    let config = TrainConfig {
        epochs: 5,
        ..desk_config()
    };
    let csv_same = metrics_csv(&data, &config) == metrics_csv(&data, &config);

    let mut tables = true;
    for set in &sets {
        let mut buf = Vec::new();
        write_features(set, &mut buf).unwrap();
        tables &= read_features(buf.as_slice()).unwrap() == *set;
    }
    let mut graphs = true;
    for s in &data.samples {
        for g in &s.patches {
            for format in [GraphFormat::Binary, GraphFormat::Text] {
                let mut buf = Vec::new();
                write_graph(g, format, &mut buf).unwrap();
                graphs &= read_graph(buf.as_slice()).unwrap() == *g;
            }
        }
    }
    let mut reload = true;
    for o in cross_validate(&data, &config).unwrap() {
        let mut buf = Vec::new();
        o.model.to_checkpoint().write_to(&mut buf).unwrap();
        let back =
            GraphModel::from_checkpoint(&Checkpoint::read_from(buf.as_slice()).unwrap()).unwrap();
        for s in &data.samples {
            reload &= back.predict(&s.patches).unwrap().to_bits()
                == o.model.predict(&s.patches).unwrap().to_bits();
        }
    }
    verdict(
        csv_same && tables && graphs && reload,
        format!(
            "metrics CSV identical: {csv_same}; feature table round-trip: {tables}; graph round-trip: {graphs}; checkpoint predictions: {reload}"
        ),
    )
}

fn main() {
    // Other libtest flags (--nocapture, name filters) are ignored.
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let mut desk = Desk::new();
    type Check<'a> = Box<dyn FnMut() -> Verdict + 'a>;
    let mut failures = Vec::new();
    {
        let desk = std::cell::RefCell::new(&mut desk);
        let criteria: Vec<(usize, &str, Check)> = vec![
            (1, "formula fidelity", Box::new(formulas)),
            (2, "sampling invariants", Box::new(sampling)),
            (3, "graph invariants", Box::new(graphs)),
            (4, "renormalized rows", Box::new(renorm_rows)),
            (5, "gradient correctness", Box::new(gradients)),
            (6, "permutation invariance", Box::new(permutation)),
            (7, "desk-scale learning", Box::new(|| learning(&mut desk.borrow_mut()))),
            (8, "patching ablation", Box::new(|| patching(&mut desk.borrow_mut()))),
            (9, "feature-dim ablation", Box::new(|| feature_dims(&mut desk.borrow_mut()))),
            (10, "determinism and round-trips", Box::new(determinism)),
        ];
        let limits = [1.0, 30.0, 30.0, 1.0, 120.0, 60.0, 600.0, 2700.0, 2700.0, 600.0];
        for (id, name, mut check) in criteria {
            let t = Instant::now();
            let v = check();
            let secs = t.elapsed().as_secs_f64();
            let pass = v.pass && secs < limits[id - 1];
            let known = if !pass && KNOWN_FAILING.contains(&id) {
                " (known)"
            } else {
                ""
            };
            println!(
                "criterion {id:>2} {}{known}: {name}: {} [{secs:.2} s]",
                if pass { "PASS" } else { "FAIL" },
                v.detail
            );
            if !pass && !KNOWN_FAILING.contains(&id) {
                failures.push(id);
            }
        }
    }
    if !failures.is_empty() {
        eprintln!("failing criteria: {failures:?}");
        std::process::exit(1);
    }
}
