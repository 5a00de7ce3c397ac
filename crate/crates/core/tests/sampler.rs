use cellgraph::featureio::{CellFeatureSet, CellRecord};
use cellgraph::sampler::{
    allocate_counts, box_of, build_distribution_map, downsample, scale_distribution,
    select_features, SampleBudget,
};
use proptest::prelude::*;

fn set_from(points: &[(f64, f64)], dims: (usize, usize)) -> CellFeatureSet {
    CellFeatureSet {
        image_dims: dims,
        dim: 8,
        cells: points
            .iter()
            .enumerate()
            .map(|(i, &c)| CellRecord {
                id: i as u32 + 1,
                centroid: c,
                features: vec![i as f64; 8],
            })
            .collect(),
        label: None,
    }
}

fn points_strategy() -> impl Strategy<Value = ((usize, usize), Vec<(f64, f64)>)> {
    (8usize..300, 8usize..300).prop_flat_map(|(w, h)| {
        (
            Just((w, h)),
            prop::collection::vec((0.0..=w as f64, 0.0..=h as f64), 1..150),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn selection_honours_budget_and_boxes(
        (dims, points) in points_strategy(),
        d in 1usize..12,
        m in 1usize..200,
        seed in any::<u64>(),
    ) {
        let set = set_from(&points, dims);
        let raw = build_distribution_map(&points, dims, d).unwrap();
        let scaled = scale_distribution(&raw, m).unwrap();
        prop_assert!((scaled.total - m as f64).abs() <= 1e-9 * m as f64);
        for k in 0..d * d {
            let lhs = scaled.counts[k] / m as f64;
            let rhs = raw.counts[k] / raw.total;
            prop_assert!((lhs - rhs).abs() <= 1e-12);
        }
        let budget = allocate_counts(&scaled, &raw);
        prop_assert_eq!(budget.total(), m.min(points.len()));
        for k in 0..d * d {
            prop_assert!(budget.allocation[k] as f64 <= raw.counts[k]);
        }
        let chosen = select_features(&set, &budget, seed).unwrap();
        prop_assert_eq!(chosen.len(), budget.total());
        let mut per_box = vec![0usize; d * d];
        for c in &chosen.cells {
            let (i, j) = box_of(c.centroid.0, c.centroid.1, dims, d);
            per_box[i * d + j] += 1;
            let original = &set.cells[c.id as usize - 1];
            prop_assert_eq!(original, c);
        }
        prop_assert_eq!(&per_box, &budget.allocation);
        prop_assert_eq!(select_features(&set, &budget, seed).unwrap(), chosen);
    }

    #[test]
    fn map_matches_brute_force((dims, points) in points_strategy(), d in 1usize..10) {
        let map = build_distribution_map(&points, dims, d).unwrap();
        let (w, h) = (dims.0 as f64, dims.1 as f64);
        let mut counts = vec![0.0; d * d];
        for &(x, y) in &points {
            let mut col = 0;
            while col + 1 < d && x >= (col + 1) as f64 * w / d as f64 {
                col += 1;
            }
            let mut row = 0;
            while row + 1 < d && y >= (row + 1) as f64 * h / d as f64 {
                row += 1;
            }
            counts[row * d + col] += 1.0;
        }
        prop_assert_eq!(map.counts, counts);
        prop_assert_eq!(map.total, points.len() as f64);
    }

    #[test]
    fn downsample_is_schedule_independent(
        (dims, points) in points_strategy(),
        seed in any::<u64>(),
    ) {
        let set = set_from(&points, dims);
        let serial = downsample(&set, 6, 40, seed).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let parallel = pool.install(|| {
            use rayon::prelude::*;
            (0..4).into_par_iter().map(|_| downsample(&set, 6, 40, seed).unwrap()).collect::<Vec<_>>()
        });
        for p in parallel {
            prop_assert_eq!(&p, &serial);
        }
    }
}

#[test]
fn allocation_tie_break_is_row_major() {
    let raw = build_distribution_map(&[(1.0, 1.0), (3.0, 1.0), (1.0, 3.0), (3.0, 3.0)], (4, 4), 2)
        .unwrap();
    let scaled = scale_distribution(&raw, 2).unwrap();
    assert_eq!(scaled.counts, vec![0.5; 4]);
    let budget = allocate_counts(&scaled, &raw);
    assert_eq!(budget.allocation, vec![1, 1, 0, 0]);
}

#[test]
fn selection_frequency_is_uniform_within_a_box() {
    let points = [(1.0, 1.0), (2.0, 1.5), (3.0, 2.0), (1.5, 3.0), (2.5, 2.5)];
    let set = set_from(&points, (4, 4));
    let budget = SampleBudget {
        m: 2,
        d: 1,
        image_dims: (4, 4),
        allocation: vec![2],
    };
    let mut hits = [0usize; 5];
    let trials = 10_000;
    for seed in 0..trials {
        for c in select_features(&set, &budget, seed).unwrap().cells {
            hits[c.id as usize - 1] += 1;
        }
    }
    for h in hits {
        let freq = h as f64 / trials as f64;
        assert!((freq - 0.4).abs() <= 0.02, "{hits:?}");
    }
}

#[test]
fn too_few_points_caps_the_budget() {
    let points: Vec<(f64, f64)> = (0..6).map(|i| (i as f64 * 10.0 + 5.0, 30.0)).collect();
    let set = set_from(&points, (60, 60));
    let (chosen, scaled) = downsample(&set, 4, 10, 9).unwrap();
    assert_eq!(chosen.len(), 6);
    assert!((scaled.total - 10.0).abs() < 1e-12);
}
