use cellgraph::featureio::SynthSpec;
use cellgraph::gnn::HyperParams;
use cellgraph::graphbuilder::AugmentParams;
use cellgraph::rng::named_seed;
use cellgraph::trainer::{
    accuracy, build_dataset, cross_validate, make_folds, run_ablation, synthetic_feature_sets,
    train_fold, AblationKind, Dataset, ExperimentConfig, MetricsWriter, TrainConfig,
};

fn small_spec() -> SynthSpec {
    SynthSpec {
        width: 192,
        height: 192,
        ..SynthSpec::default()
    }
}

fn small_config() -> TrainConfig {
    TrainConfig {
        lr0: 1e-2,
        epochs: 4,
        hyper: HyperParams {
            embed_dim: 6,
            pool_sizes: vec![4, 2, 1],
            ..HyperParams::default()
        },
        ..TrainConfig::default()
    }
}

fn dataset(per_class: usize, patched: bool, dim: usize) -> Dataset {
    let sets = synthetic_feature_sets(per_class, &small_spec(), 16, 21).unwrap();
    let params = AugmentParams {
        m: 30,
        d: 8,
        ..AugmentParams::default()
    };
    build_dataset(&sets, &params, patched, Some(dim), 21).unwrap()
}

#[test]
fn identical_seeds_give_identical_reports() {
    let data = dataset(3, true, 16);
    let config = small_config();
    let a: Vec<_> = cross_validate(&data, &config).unwrap().into_iter().map(|o| o.report).collect();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let b: Vec<_> = pool
        .install(|| cross_validate(&data, &config))
        .unwrap()
        .into_iter()
        .map(|o| o.report)
        .collect();
    assert_eq!(a, b);
    for (x, y) in a.iter().zip(&b) {
        for (e, f) in x.epochs.iter().zip(&y.epochs) {
            assert_eq!(e.train_loss.to_bits(), f.train_loss.to_bits());
        }
    }
    let other = TrainConfig {
        seed: 1,
        ..small_config()
    };
    let c: Vec<_> = cross_validate(&data, &other).unwrap().into_iter().map(|o| o.report).collect();
    assert_ne!(a, c);
}

#[test]
fn fold_reports_match_their_models() {
    let data = dataset(3, false, 12);
    let config = small_config();
    let folds = make_folds(&data.labels(), 3, named_seed(config.seed, "folds")).unwrap();
    let outcomes = cross_validate(&data, &config).unwrap();
    let mut validated = vec![0; data.len()];
    for (o, (train, val)) in outcomes.iter().zip(&folds) {
        assert!(train.iter().all(|i| !val.contains(i)));
        val.iter().for_each(|&i| validated[i] += 1);
        assert_eq!(o.report.epochs.len(), config.epochs);
        assert_eq!(o.report.final_accuracy, accuracy(&o.model, &data, val).unwrap());
        for w in o.report.epochs.windows(2) {
            assert!(w[1].lr <= w[0].lr);
        }
        assert!(o.report.epochs.iter().all(|e| e.train_loss >= 0.0));
    }
    assert!(validated.iter().all(|&v| v == 1));
}

#[test]
fn a_single_sample_is_memorized() {
    let data = dataset(1, true, 16);
    let config = TrainConfig {
        epochs: 60,
        ..small_config()
    };
    for i in 0..3 {
        let out = train_fold(&data, &[i], &[i], 0, 5, &config).unwrap();
        let last = out.report.epochs.last().unwrap();
        assert!(last.train_loss < 1e-3, "sample {i}: loss {}", last.train_loss);
        assert_eq!(last.val_acc, 1.0);
    }
}

#[test]
fn feature_width_reaches_the_first_convolution() {
    for dim in [8, 12, 16] {
        let data = dataset(3, true, dim);
        assert_eq!(data.feature_dim, dim);
        let config = TrainConfig {
            epochs: 1,
            ..small_config()
        };
        let out = train_fold(&data, &[0, 1, 2, 3, 4, 5], &[6, 7, 8], 0, 1, &config).unwrap();
        for c in 1..=3 {
            let w = out.model.params.get(&format!("block1.conv{c}")).unwrap();
            assert_eq!(w.shape(), &[dim, 6]);
        }
    }
}

#[test]
fn patching_grid_writes_four_summaries() {
    let sets = synthetic_feature_sets(3, &small_spec(), 16, 8).unwrap();
    let mut base = ExperimentConfig {
        train: TrainConfig {
            epochs: 1,
            ..small_config()
        },
        ..ExperimentConfig::default()
    };
    base.augment.d = 8;
    let grid = AblationKind::Patching.grid(&[20, 40], &base);
    let mut writer = MetricsWriter::new(Vec::new()).unwrap();
    let outcomes = run_ablation("t", AblationKind::Patching, &grid, &sets, &base, &mut writer).unwrap();
    assert!(outcomes.iter().all(|o| o.result.is_ok()));
    let text = String::from_utf8(writer.into_inner()).unwrap();
    let summaries: Vec<&str> = text.lines().filter(|l| l.starts_with("SUMMARY")).collect();
    assert_eq!(summaries.len(), 4);
    assert_eq!(text.lines().count(), 1 + 4 * 3 + 4);
}
