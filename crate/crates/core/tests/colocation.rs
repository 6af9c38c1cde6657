use rand::Rng;
use samc_tensor::rng::stream;
use samcnet::colocation::{
    cross_k, features, fit_forest, fit_mlp, fit_tree, neighbors_within, neighbors_within_brute, participation_index,
    participation_ratio, Classifier, ForestConfig, Measure, MlpConfig, StudyArea, ThresholdSet,
};
use samcnet::pointset::{rotate_about, CategoryVocabulary, Dataset, Point, PointPattern};

fn pattern(points: Vec<Point>) -> PointPattern {
    PointPattern {
        sample_id: "p".into(),
        points,
        label: 0,
    }
}

fn random_pattern(rng: &mut impl Rng, n: usize, g: usize, extent: f64) -> PointPattern {
    let mut points: Vec<Point> = (0..g)
        .map(|c| Point::new(rng.random::<f64>() * extent, rng.random::<f64>() * extent, c))
        .collect();
    while points.len() < n {
        points.push(Point::new(
            rng.random::<f64>() * extent,
            rng.random::<f64>() * extent,
            rng.random_range(0..g),
        ));
    }
    pattern(points)
}

fn dist(a: &Point, b: &Point) -> f64 {
    ((a.x - b.x).powi(2) + (a.y - b.y).powi(2)).sqrt()
}

/// Participation by enumerating every tuple with one point per category.
fn oracle_ratios(p: &PointPattern, subset: &[usize], h: f64) -> Vec<f64> {
    let members: Vec<Vec<&Point>> = subset
        .iter()
        .map(|&c| p.points.iter().filter(|q| q.category == c).collect())
        .collect();
    let mut flags: Vec<Vec<bool>> = members.iter().map(|m| vec![false; m.len()]).collect();
    let total: usize = members.iter().map(Vec::len).product();
    for mut code in 0..total {
        let mut pick = Vec::with_capacity(subset.len());
        for m in &members {
            pick.push(code % m.len());
            code /= m.len();
        }
        let clique = (0..subset.len())
            .all(|a| (a + 1..subset.len()).all(|b| dist(members[a][pick[a]], members[b][pick[b]]) <= h));
        if clique {
            for (c, &i) in pick.iter().enumerate() {
                flags[c][i] = true;
            }
        }
    }
    flags
        .iter()
        .map(|f| f.iter().filter(|&&b| b).count() as f64 / f.len() as f64)
        .collect()
}

fn subsets(g: usize, max: usize) -> Vec<Vec<usize>> {
    (1u32..1 << g)
        .map(|m| (0..g).filter(|&c| m >> c & 1 == 1).collect::<Vec<_>>())
        .filter(|s| s.len() >= 2 && s.len() <= max)
        .collect()
}

#[test]
fn participation_matches_exhaustive_oracle() {
    let mut rng = stream(1, "coloc");
    for _ in 0..100 {
        let n = rng.random_range(4..=30);
        let p = random_pattern(&mut rng, n, 4, 100.0);
        for h in [10.0, 25.0, 60.0] {
            for s in subsets(4, 4) {
                let want = oracle_ratios(&p, &s, h);
                for (i, &f) in s.iter().enumerate() {
                    assert_eq!(participation_ratio(&p, &s, f, h).unwrap(), want[i]);
                }
                let pi = participation_index(&p, &s, h).unwrap();
                assert_eq!(pi, want.iter().copied().fold(f64::INFINITY, f64::min));
                assert!((0.0..=1.0).contains(&pi));
            }
        }
    }
}

#[test]
fn participation_index_is_anti_monotone() {
    let mut rng = stream(2, "coloc");
    for _ in 0..50 {
        let n = rng.random_range(5..=30);
        let p = random_pattern(&mut rng, n, 4, 80.0);
        let all = subsets(4, 4);
        for small in &all {
            for big in &all {
                if big.len() > small.len() && small.iter().all(|c| big.contains(c)) {
                    let (a, b) = (
                        participation_index(&p, small, 30.0).unwrap(),
                        participation_index(&p, big, 30.0).unwrap(),
                    );
                    assert!(b <= a, "{small:?}={a} {big:?}={b}");
                }
            }
        }
    }
}

#[test]
fn participation_edge_cases() {
    let p = pattern(vec![Point::new(0.0, 0.0, 0), Point::new(100.0, 0.0, 1)]);
    assert_eq!(participation_index(&p, &[0, 1], 5.0).unwrap(), 0.0);
    assert_eq!(participation_index(&p, &[0, 1], 100.0).unwrap(), 1.0);
    assert!(participation_ratio(&p, &[0, 1], 2, 5.0).is_err());
    assert!(participation_index(&p, &[0], 5.0).is_err());
    assert!(participation_index(&p, &[0, 0], 5.0).is_err());
    assert!(participation_index(&p, &[0, 2], 5.0).is_err());
}

#[test]
fn cross_k_under_complete_spatial_randomness() {
    for h in [0.05, 0.1] {
        let mut acc = 0.0;
        for seed in 0..20 {
            let mut rng = stream(seed, "csr");
            let mut pts = Vec::with_capacity(4000);
            for c in 0..2 {
                for _ in 0..2000 {
                    pts.push(Point::new(rng.random(), rng.random(), c));
                }
            }
            acc += cross_k(&pattern(pts), 0, 1, h, StudyArea::Fixed(1.0)).unwrap();
        }
        let mean = acc / 20.0;
        let expected = std::f64::consts::PI * h * h;
        assert!((mean - expected).abs() / expected < 0.15, "h={h}: {mean} vs {expected}");
    }
}

#[test]
fn cross_k_errors_name_the_missing_category() {
    let p = pattern(vec![Point::new(0.0, 0.0, 0), Point::new(1.0, 1.0, 0)]);
    let msg = cross_k(&p, 0, 3, 1.0, StudyArea::BoundingBox).unwrap_err().to_string();
    assert!(msg.contains('3'), "{msg}");
}

#[test]
fn grid_neighbors_equal_brute_force() {
    let mut rng = stream(3, "grid");
    for &(n, extent, h) in &[(10usize, 10.0, 1.0), (500, 1000.0, 50.0), (5000, 2000.0, 30.0), (3000, 1.0, 0.5)] {
        let a: Vec<[f64; 2]> = (0..n).map(|_| [rng.random::<f64>() * extent, rng.random::<f64>() * extent]).collect();
        let b: Vec<[f64; 2]> = (0..n / 2 + 1)
            .map(|_| [(rng.random::<f64>() * extent).round(), rng.random::<f64>() * extent])
            .collect();
        assert_eq!(neighbors_within(&a, &b, h), neighbors_within_brute(&a, &b, h));
    }
}

#[test]
fn measures_ignore_order_and_rigid_rotation() {
    let mut rng = stream(4, "rigid");
    let p = random_pattern(&mut rng, 60, 3, 200.0);
    let mut reversed = p.clone();
    reversed.points.reverse();
    let rotated = rotate_about(&p, 90.0, [0.0, 0.0]);
    for h in [20.0, 50.0] {
        let pi = participation_index(&p, &[0, 1, 2], h).unwrap();
        assert_eq!(pi, participation_index(&reversed, &[0, 1, 2], h).unwrap());
        assert_eq!(pi, participation_index(&rotated, &[0, 1, 2], h).unwrap());
        let k = cross_k(&p, 0, 1, h, StudyArea::BoundingBox).unwrap();
        assert_eq!(k, cross_k(&reversed, 0, 1, h, StudyArea::BoundingBox).unwrap());
        let kr = cross_k(&rotated, 0, 1, h, StudyArea::BoundingBox).unwrap();
        assert!((k - kr).abs() <= 1e-9 * k.abs().max(1.0));
    }
}

fn dataset(patterns: Vec<PointPattern>, g: usize) -> Dataset {
    let vocab = CategoryVocabulary::new((0..g).map(|c| format!("C{c}")).collect()).unwrap();
    Dataset::new(vocab, patterns, vec!["x".into(), "y".into()]).unwrap()
}

#[test]
fn feature_layout_and_determinism() {
    let mut rng = stream(5, "feat");
    let mut a = random_pattern(&mut rng, 40, 3, 100.0);
    a.sample_id = "a".into();
    let mut b = a.clone();
    b.sample_id = "b".into();
    b.points.reverse();
    let data = dataset(vec![a, b], 3);
    let h = ThresholdSet::new(vec![10.0, 50.0]).unwrap();
    for measure in [Measure::Pi, Measure::CrossK] {
        let f = features(&data, measure, &h).unwrap();
        assert_eq!(f.columns.len(), 3 * 2 * 2);
        assert_eq!(f.columns[0], "C0:C1@10");
        assert_eq!(f.columns[1], "C0:C1@50");
        assert_eq!(f.rows[0], f.rows[1]);
        assert!(f.rows[0].iter().all(|&v| v >= 0.0));
    }
    let one = ThresholdSet::default();
    assert_eq!(features(&data, Measure::Pi, &one).unwrap().columns.len(), 6);
    assert!(ThresholdSet::new(vec![50.0, 10.0]).is_err());
    assert!(ThresholdSet::new(vec![0.0]).is_err());
}

/// Four corner clusters sharing one lattice of offsets, so every axis-aligned
/// split leaves both sides class-balanced.
fn xor_data() -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut x = Vec::new();
    let mut y = Vec::new();
    for (a, b) in [(0u8, 0u8), (0, 1), (1, 0), (1, 1)] {
        for i in 0..5 {
            for j in 0..5 {
                x.push(vec![f64::from(a) + i as f64 * 0.05 - 0.1, f64::from(b) + j as f64 * 0.05 - 0.1]);
                y.push(usize::from(a ^ b));
            }
        }
    }
    (x, y)
}

fn accuracy(pred: &[usize], y: &[usize]) -> f64 {
    pred.iter().zip(y).filter(|(a, b)| a == b).count() as f64 / y.len() as f64
}

#[test]
fn xor_defeats_a_shallow_tree_but_not_the_mlp() {
    let (x, y) = xor_data();
    let tree = fit_tree(&x, &y, 2, 2).unwrap();
    assert!(tree.depth() <= 2);
    let tree_acc = accuracy(&x.iter().map(|r| tree.predict(r)).collect::<Vec<_>>(), &y);
    assert!(tree_acc <= 0.75, "tree {tree_acc}");
    let cfg = MlpConfig {
        hidden: 64,
        epochs: 200,
        batch_size: 25,
        seed: 1,
        ..MlpConfig::default()
    };
    let mlp = fit_mlp(&x, &y, 2, &cfg).unwrap();
    let mlp_acc = accuracy(&mlp.predict(&x).unwrap(), &y);
    assert!(mlp_acc >= 0.9, "mlp {mlp_acc}");
}

#[test]
fn unanimous_forest_equals_its_trees() {
    let x: Vec<Vec<f64>> = (0..40).map(|i| vec![i as f64, (i % 7) as f64]).collect();
    let y: Vec<usize> = (0..40).map(|i| usize::from(i >= 20)).collect();
    let forest = fit_forest(&x, &y, 2, &ForestConfig { seed: 3, ..ForestConfig::default() }).unwrap();
    assert_eq!(forest.trees.len(), 50);
    for row in &x {
        let votes: Vec<usize> = forest.trees.iter().map(|t| t.predict(row)).collect();
        if votes.iter().all(|&v| v == votes[0]) {
            assert_eq!(forest.predict(row), votes[0]);
        }
    }
    // A single-feature forest has no choice of feature, so every tree fits the same split.
    let x1: Vec<Vec<f64>> = (0..40).map(|i| vec![i as f64]).collect();
    let f1 = fit_forest(&x1, &y, 2, &ForestConfig { seed: 4, ..ForestConfig::default() }).unwrap();
    let c = Classifier::Forest(f1.clone());
    let preds = c.predict(&x1).unwrap();
    for (row, p) in x1.iter().zip(&preds) {
        assert_eq!(f1.trees[0].predict(row), *p);
    }
}

#[test]
fn classifiers_refuse_single_class_labels() {
    let x = vec![vec![0.0], vec![1.0]];
    let y = vec![1, 1];
    assert!(fit_tree(&x, &y, 2, 2).is_err());
    assert!(fit_forest(&x, &y, 2, &ForestConfig::default()).is_err());
    assert!(fit_mlp(&x, &y, 2, &MlpConfig::default()).is_err());
}

#[test]
fn separable_feature_gives_perfect_tree() {
    let x: Vec<Vec<f64>> = (0..30).map(|i| vec![i as f64 * 0.1]).collect();
    let y: Vec<usize> = (0..30).map(|i| usize::from(i > 11)).collect();
    let t = fit_tree(&x, &y, 2, 2).unwrap();
    assert_eq!(accuracy(&x.iter().map(|r| t.predict(r)).collect::<Vec<_>>(), &y), 1.0);
}
