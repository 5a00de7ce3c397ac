use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use cellgraph::featureio::{compute_features, extract_cells, load_features, save_features, LabeledMask, SynthSpec};
use cellgraph::gnn::GraphModel;
use cellgraph::graphbuilder::{read_graph_file, split_patches, write_graph_file, AugmentParams, CellGraph, GraphFormat};
use cellgraph::trainer::{
    classify, cross_validate, dataset_from_graphs, evaluate_cv, mean_std_percent, run_ablation, selection_seed,
    synthetic_image, AblationKind, ExperimentConfig, GridPoint, MetricsWriter,
};
use cellgraph_autodiff::Checkpoint;
use rayon::prelude::*;

use crate::cache::GraphCache;
use crate::error::usage;
use crate::manifest::{sha256_bytes, RunManifest};
use crate::{
    AblateArgs, AugmentFlags, BuildGraphArgs, Command, ConfigFlags, EvaluateArgs, ExtractArgs, FormatArg, InspectArgs,
    SynthArgs, TrainArgs,
};

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::ExtractFeatures(a) => extract_features(a),
        Command::Synth(a) => synth(a),
        Command::BuildGraph(a) => build_graph(a),
        Command::Train(a) => train(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Ablate(a) => ablate(a),
        Command::Inspect(a) => inspect(a),
    }
}

fn extract_features(a: ExtractArgs) -> Result<()> {
    let mask = LabeledMask::load(&a.mask, Some(&a.image))
        .with_context(|| format!("loading {} and {}", a.mask.display(), a.image.display()))?;
    let cells = extract_cells(&mask).with_context(|| format!("extracting cells from {}", a.mask.display()))?;
    let mut set = compute_features(&mask, &cells, a.dim).context("--dim")?;
    if let Some(label) = a.label {
        if label > 2 {
            return Err(usage(format!("--label {label}: grades are 0, 1 or 2")));
        }
        set.label = Some(label);
    }
    create_parent(&a.out)?;
    save_features(&set, &a.out).with_context(|| format!("writing {}", a.out.display()))?;
    log::info!("{} cells written to {}", set.len(), a.out.display());
    Ok(())
}

fn synth(a: SynthArgs) -> Result<()> {
    if a.samples == 0 {
        return Err(usage("--samples must be positive"));
    }
    let spec = SynthSpec {
        width: a.size,
        height: a.size,
        ..SynthSpec::default()
    };
    let features = a.out.join("features");
    let masks = a.out.join("masks");
    fs::create_dir_all(&features).with_context(|| format!("creating {}", features.display()))?;
    if !a.no_masks {
        fs::create_dir_all(&masks)?;
    }
    let mut manifest = RunManifest::new(
        format!("synth-{}", a.seed),
        format!("samples = {}\nseed = {}\nsize = {}\ndim = {}\n", a.samples, a.seed, a.size, a.dim),
    );
    manifest.stage("generate");
    let written: Vec<Vec<PathBuf>> = (0..a.samples)
        .into_par_iter()
        .map(|i| -> Result<Vec<PathBuf>> {
            let (mask, set) = synthetic_image(&spec, a.dim, a.seed, i).with_context(|| format!("synthetic image {i}"))?;
            let stem = format!("img_{i:03}");
            let table = features.join(format!("{stem}.csv"));
            save_features(&set, &table)?;
            let mut out = vec![table];
            if !a.no_masks {
                let pgm = masks.join(format!("{stem}.pgm"));
                let ppm = masks.join(format!("{stem}.ppm"));
                mask.save(&pgm, Some(&ppm))?;
                out.extend([pgm, ppm]);
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    manifest.stage("hash");
    for path in written.iter().flatten() {
        manifest.artifact(path)?;
    }
    manifest.finish(&a.out.join("manifest.json"))?;
    log::info!("{} synthetic images written to {}", a.samples, a.out.display());
    Ok(())
}

fn apply_augment(flags: &AugmentFlags, params: &mut AugmentParams) {
    if let Some(v) = flags.alpha {
        params.alpha = v;
    }
    if let Some(v) = flags.beta {
        params.beta = v;
    }
    if let Some(v) = flags.grid_d {
        params.d = v;
    }
    if let Some(v) = flags.nodes {
        params.m = v;
    }
}

/// Config file, then `--set` pairs, then the dedicated flags.
fn resolve_config(flags: &ConfigFlags) -> Result<ExperimentConfig> {
    if flags.group_by_patient {
        return Err(usage("--group-by-patient: feature tables carry no patient ids"));
    }
    let mut cfg = match &flags.config {
        Some(path) => ExperimentConfig::load(path).with_context(|| format!("config {}", path.display()))?,
        None => ExperimentConfig::default(),
    };
    for pair in &flags.set {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| usage(format!("--set {pair:?}: expected KEY=VALUE")))?;
        cfg.set(k.trim(), v.trim()).with_context(|| format!("--set {pair}"))?;
    }
    let t = &mut cfg.train;
    if let Some(v) = flags.seed {
        t.seed = v;
    }
    if let Some(v) = flags.epochs {
        t.epochs = v;
    }
    if let Some(v) = flags.lr0 {
        t.lr0 = v;
    }
    if let Some(v) = flags.feature_dim {
        cfg.feature_dim = v;
    }
    if let Some(v) = flags.patched {
        cfg.patched = v;
    }
    apply_augment(&flags.augment, &mut cfg.augment);
    cfg.validate()?;
    Ok(cfg)
}

/// Feature tables of a dataset directory, sorted by name: `dir/features/`
/// when it exists, else `dir` itself.
fn dataset_tables(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Err(usage(format!("--data {}: not a directory", dir.display())));
    }
    let sub = dir.join("features");
    let root = if sub.is_dir() { sub } else { dir.to_path_buf() };
    let tables = list_files(&root, "csv")?;
    if tables.is_empty() {
        return Err(usage(format!("no .csv feature tables under {}", root.display())));
    }
    Ok(tables)
}

fn list_files(dir: &Path, ext: &str) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let path = entry?.path();
        if path.is_file() && path.extension().is_some_and(|e| e == ext) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

fn create_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    Ok(())
}

fn file_stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn graph_format(f: FormatArg) -> GraphFormat {
    match f {
        FormatArg::Text => GraphFormat::Text,
        FormatArg::Binary => GraphFormat::Binary,
    }
}

fn build_graph(a: BuildGraphArgs) -> Result<()> {
    let mut params = AugmentParams::default();
    apply_augment(&a.augment, &mut params);
    params.validate()?;
    let inputs = if a.features.is_dir() {
        list_files(&a.features, "csv")?
    } else if a.features.is_file() {
        vec![a.features.clone()]
    } else {
        return Err(usage(format!("--features {}: no such file or directory", a.features.display())));
    };
    if inputs.is_empty() {
        return Err(usage(format!("no .csv tables in {}", a.features.display())));
    }
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let cache = GraphCache::new(a.cache.as_deref())?;
    let format = graph_format(a.format);
    let config = format!(
        "alpha = {}\nbeta = {}\ngrid_d = {}\nnodes = {}\npatched = {}\nseed = {}\n",
        params.alpha, params.beta, params.d, params.m, a.patched, a.seed
    );
    let mut manifest = RunManifest::new(format!("build-{}", &sha256_bytes(config.as_bytes())[..12]), config);
    manifest.stage("hash-inputs");
    for path in &inputs {
        manifest.input(path)?;
    }
    manifest.stage("build");
    let written: Vec<Vec<PathBuf>> = inputs
        .par_iter()
        .enumerate()
        .map(|(i, path)| -> Result<Vec<PathBuf>> {
            let graph = cache.graph(path, &params, a.feature_dim, selection_seed(a.seed, i))?;
            let stem = file_stem(path);
            let main = a.out.join(format!("{stem}.cgph"));
            write_graph_file(&graph, format, &main)?;
            let mut out = vec![main];
            if a.patched {
                for (q, patch) in split_patches(&graph).patches.iter().enumerate() {
                    let p = a.out.join(format!("{stem}.q{q}.cgph"));
                    write_graph_file(patch, format, &p)?;
                    out.push(p);
                }
            }
            log::info!("{}: {} nodes", path.display(), graph.n());
            Ok(out)
        })
        .collect::<Result<_>>()?;
    manifest.stage("hash-artifacts");
    for path in written.iter().flatten() {
        manifest.artifact(path)?;
    }
    manifest.finish(&a.out.join("manifest.json"))?;
    Ok(())
}

fn default_run_id(cfg: &ExperimentConfig, manifest: &RunManifest) -> String {
    let mut key = cfg.to_text();
    for (path, hash) in &manifest.inputs {
        let _ = writeln!(key, "{path} {hash}");
    }
    sha256_bytes(key.as_bytes())[..12].to_string()
}

fn grid_point(cfg: &ExperimentConfig) -> GridPoint {
    GridPoint {
        patched: cfg.patched,
        nodes: cfg.augment.m,
        feature_dim: cfg.feature_dim,
    }
}

fn train(a: TrainArgs) -> Result<()> {
    let cfg = resolve_config(&a.config)?;
    let tables = dataset_tables(&a.data)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let mut manifest = RunManifest::new(String::new(), cfg.to_text());
    manifest.stage("hash-inputs");
    for path in &tables {
        manifest.input(path)?;
    }
    let run_id = a.run_id.clone().unwrap_or_else(|| default_run_id(&cfg, &manifest));
    manifest.run_id = run_id.clone();

    manifest.stage("graphs");
    let cache_dir = a.cache.clone().unwrap_or_else(|| a.data.join("graph-cache"));
    let cache = GraphCache::new(Some(&cache_dir))?;
    let graphs: Vec<CellGraph> = tables
        .par_iter()
        .enumerate()
        .map(|(i, path)| cache.graph(path, &cfg.augment, Some(cfg.feature_dim), selection_seed(cfg.train.seed, i)))
        .collect::<Result<_>>()?;
    let data = dataset_from_graphs(graphs, cfg.patched)?;

    manifest.stage("train");
    let outcomes = cross_validate(&data, &cfg.train)?;

    manifest.stage("write");
    let label = grid_point(&cfg).label();
    let metrics_path = a.out.join("metrics.csv");
    let file = fs::File::create(&metrics_path).with_context(|| format!("creating {}", metrics_path.display()))?;
    let mut writer = MetricsWriter::new(BufWriter::new(file))?;
    let reports: Vec<_> = outcomes.iter().map(|o| o.report.clone()).collect();
    for r in &reports {
        writer.fold(&run_id, "train", &label, r)?;
    }
    let summary = evaluate_cv(&reports);
    writer.summary(&run_id, "train", &label, summary)?;
    writer.into_inner().flush()?;
    manifest.artifact(&metrics_path)?;

    for o in &outcomes {
        let path = a.out.join(format!("fold{}.ckpt", o.report.fold));
        let mut ck = o.model.to_checkpoint();
        ck.header.push(("patched".into(), cfg.patched.to_string()));
        ck.save(&path).with_context(|| format!("writing {}", path.display()))?;
        manifest.artifact(&path)?;
    }
    let cfg_path = a.out.join("config.cfg");
    fs::write(&cfg_path, cfg.to_text())?;
    manifest.artifact(&cfg_path)?;
    manifest.finish(&a.out.join("manifest.json"))?;

    println!("run {run_id}: accuracy {:.2} ± {:.2} % over {} folds", summary.0, summary.1, reports.len());
    Ok(())
}

/// Whole-image graph files named by `paths`; directories are expanded and
/// quadrant patch files (`*.qN.cgph`) skipped.
fn graph_files(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            out.extend(list_files(p, "cgph")?.into_iter().filter(|f| !is_patch_file(f)));
        } else if p.is_file() {
            out.push(p.clone());
        } else {
            return Err(usage(format!("--graphs {}: no such file or directory", p.display())));
        }
    }
    if out.is_empty() {
        return Err(usage("no graph files to evaluate"));
    }
    Ok(out)
}

fn is_patch_file(path: &Path) -> bool {
    let stem = file_stem(path);
    Path::new(&stem)
        .extension()
        .is_some_and(|e| matches!(e.to_str(), Some("q0" | "q1" | "q2" | "q3")))
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let files = graph_files(&a.graphs)?;
    let graphs: Vec<CellGraph> = files
        .iter()
        .map(|p| read_graph_file(p).with_context(|| format!("reading {}", p.display())))
        .collect::<Result<_>>()?;
    let mut report = String::new();
    let mut accuracies = Vec::new();
    for ck_path in &a.checkpoint {
        let ck = Checkpoint::load(ck_path).with_context(|| format!("loading {}", ck_path.display()))?;
        let model = GraphModel::from_checkpoint(&ck).with_context(|| format!("checkpoint {}", ck_path.display()))?;
        let patched = match ck.header_value("patched") {
            Some("true") => true,
            None | Some("false") => false,
            Some(other) => bail!("checkpoint {}: bad patched header {other:?}", ck_path.display()),
        };
        let mut confusion = [[0usize; 3]; 3];
        let _ = writeln!(report, "checkpoint {}", ck_path.display());
        for (path, graph) in files.iter().zip(&graphs) {
            let patches = if patched { split_patches(graph).patches } else { vec![graph.clone()] };
            let pred = model
                .predict(&patches)
                .with_context(|| format!("predicting {} with {}", path.display(), ck_path.display()))?;
            let class = classify(pred);
            let truth = graph.label.map_or("-".to_string(), |l| l.to_string());
            let _ = writeln!(report, "  {}\tlabel {truth}\tprediction {pred:.4}\tgrade {class}", path.display());
            if let Some(l) = graph.label {
                confusion[l as usize][class as usize] += 1;
            }
        }
        let labeled: usize = confusion.iter().flatten().sum();
        if labeled > 0 {
            let correct: usize = (0..3).map(|i| confusion[i][i]).sum();
            let acc = correct as f64 / labeled as f64;
            accuracies.push(acc);
            let _ = writeln!(report, "  accuracy {:.2} % ({correct}/{labeled})", 100.0 * acc);
            let _ = writeln!(report, "  confusion (rows: label, columns: predicted grade)");
            for (i, row) in confusion.iter().enumerate() {
                let _ = writeln!(report, "    {i}: {} {} {}", row[0], row[1], row[2]);
            }
        }
    }
    if accuracies.len() > 1 {
        let (mean, std) = mean_std_percent(&accuracies);
        let _ = writeln!(report, "mean accuracy {mean:.2} ± {std:.2} % over {} checkpoints", accuracies.len());
    }
    print!("{report}");
    if let Some(out) = &a.out {
        create_parent(out)?;
        fs::write(out, &report).with_context(|| format!("writing {}", out.display()))?;
    }
    Ok(())
}

fn ablate(a: AblateArgs) -> Result<()> {
    let kind: AblationKind = a.kind.parse().map_err(usage)?;
    let cfg = resolve_config(&a.config)?;
    let values = if a.values.is_empty() {
        match kind {
            AblationKind::FeatureDim => vec![8, 12, 16],
            _ => vec![100, 200, 400],
        }
    } else {
        a.values.clone()
    };
    let tables = dataset_tables(&a.data)?;
    let mut manifest = RunManifest::new(String::new(), cfg.to_text());
    manifest.stage("load");
    for path in &tables {
        manifest.input(path)?;
    }
    let run_id = a.run_id.clone().unwrap_or_else(|| {
        let mut key = default_run_id(&cfg, &manifest);
        let _ = write!(key, "{kind}{values:?}");
        sha256_bytes(key.as_bytes())[..12].to_string()
    });
    manifest.run_id = run_id.clone();
    let sets = tables
        .iter()
        .map(|p| load_features(p).with_context(|| format!("reading {}", p.display())))
        .collect::<Result<Vec<_>>>()?;

    manifest.stage("sweep");
    let grid = kind.grid(&values, &cfg);
    create_parent(&a.out)?;
    let file = fs::File::create(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let mut writer = MetricsWriter::new(BufWriter::new(file))?;
    let outcomes = run_ablation(&run_id, kind, &grid, &sets, &cfg, &mut writer)?;
    writer.into_inner().flush()?;
    manifest.artifact(&a.out)?;
    let mut manifest_path = a.out.clone().into_os_string();
    manifest_path.push(".manifest.json");
    manifest.finish(Path::new(&manifest_path))?;

    for o in &outcomes {
        match &o.result {
            Ok((_, (mean, std))) => println!("{}\t{mean:.2} ± {std:.2} %", o.point.label()),
            Err(e) => println!("{}\tfailed: {e}", o.point.label()),
        }
    }
    Ok(())
}

/// Weighted degree of every node, self-loop excluded.
fn weighted_degrees(g: &CellGraph) -> Vec<f64> {
    (0..g.n())
        .map(|k| (0..g.n()).filter(|&m| m != k).map(|m| g.adj(k, m)).sum())
        .collect()
}

fn stats(values: &[f64]) -> (f64, f64, f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (min, max, mean, var.sqrt())
}

fn inspect(a: InspectArgs) -> Result<()> {
    if a.bins == 0 {
        return Err(usage("--bins must be positive"));
    }
    let g = read_graph_file(&a.graph).with_context(|| format!("reading {}", a.graph.display()))?;
    let p = &g.params;
    let mut out = String::new();
    let _ = writeln!(out, "file = {}", a.graph.display());
    let _ = writeln!(out, "nodes = {}", g.n());
    let _ = writeln!(out, "features = {}", g.f);
    let _ = writeln!(out, "image = {}x{}", g.image_dims.0, g.image_dims.1);
    let _ = writeln!(out, "label = {}", g.label.map_or("-".into(), |l| l.to_string()));
    let _ = writeln!(out, "alpha = {}\nbeta = {}\ngrid_d = {}\nnodes_budget = {}", p.alpha, p.beta, p.d, p.m);
    if g.is_empty() {
        print!("{out}");
        return Ok(());
    }
    let (min, max, mean, std) = stats(&weighted_degrees(&g));
    let _ = writeln!(out, "degree_min = {min}\ndegree_max = {max}\ndegree_mean = {mean}\ndegree_std = {std}");
    if p.alpha > 0.0 {
        // A_kk = 2·alpha·rho_k
        let rho: Vec<f64> = (0..g.n()).map(|k| g.adj(k, k) / (2.0 * p.alpha)).collect();
        let (lo, hi, _, _) = stats(&rho);
        let bins = if hi > lo { a.bins } else { 1 };
        let width = (hi - lo) / bins as f64;
        let mut counts = vec![0usize; bins];
        for r in &rho {
            let b = if width > 0.0 { ((r - lo) / width) as usize } else { 0 };
            counts[b.min(bins - 1)] += 1;
        }
        let _ = writeln!(out, "density histogram ({bins} bins over [{lo:.4}, {hi:.4}])");
        let peak = counts.iter().copied().max().unwrap_or(1).max(1);
        for (i, c) in counts.iter().enumerate() {
            let start = lo + i as f64 * width;
            let bar = "#".repeat((40 * c).div_ceil(peak));
            let _ = writeln!(out, "  {start:>10.4} {c:>6} {bar}");
        }
    } else {
        let _ = writeln!(out, "density histogram unavailable: alpha = 0");
    }
    print!("{out}");
    Ok(())
}
