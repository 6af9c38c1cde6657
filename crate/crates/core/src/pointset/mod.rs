//! Labeled multi-category point patterns and the operations that prepare
//! them for training: CSV ingestion, stratified splits, point sampling, and
//! rotation augmentation. Synthetic corpora live in [`synthetic`].

mod io;
pub mod synthetic;

use std::collections::{BTreeMap, HashMap, HashSet};

use rand::seq::{index, SliceRandom};
use rand::Rng;
use samc_tensor::rng;
use serde::{Deserialize, Serialize};

use crate::error::{contract, invalid, Result};

pub use io::{load_csv, write_csv};
pub use synthetic::{generate_synthetic, PlantedRelationship, SyntheticClass, SyntheticSpec};

pub type CategoryId = usize;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
    pub category: CategoryId,
}

impl Point {
    pub fn new(x: f64, y: f64, category: CategoryId) -> Self {
        Self { x, y, category }
    }

    pub fn coords(&self) -> [f64; 2] {
        [self.x, self.y]
    }
}

/// Ordered category names with dense ids `0..g`.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct CategoryVocabulary {
    names: Vec<String>,
    index: HashMap<String, CategoryId>,
}

impl CategoryVocabulary {
    pub fn new(names: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(names.len());
        for (i, n) in names.iter().enumerate() {
            if index.insert(n.clone(), i).is_some() {
                return invalid(format!("duplicate category name {n:?}"));
            }
        }
        Ok(Self { names, index })
    }

    /// Vocabulary from arbitrary names, deduplicated and sorted.
    pub fn sorted<I: IntoIterator<Item = String>>(names: I) -> Self {
        let set: std::collections::BTreeSet<String> = names.into_iter().collect();
        Self::new(set.into_iter().collect()).expect("deduplicated")
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<CategoryId> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: CategoryId) -> Option<&str> {
        self.names.get(id).map(String::as_str)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PointPattern {
    pub sample_id: String,
    pub points: Vec<Point>,
    pub label: usize,
}

impl PointPattern {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn coords(&self) -> Vec<[f64; 2]> {
        self.points.iter().map(Point::coords).collect()
    }

    pub fn categories(&self) -> Vec<CategoryId> {
        self.points.iter().map(|p| p.category).collect()
    }

    pub fn centroid(&self) -> [f64; 2] {
        let n = self.points.len().max(1) as f64;
        let (sx, sy) = self
            .points
            .iter()
            .fold((0.0, 0.0), |(sx, sy), p| (sx + p.x, sy + p.y));
        [sx / n, sy / n]
    }

    /// Checks the pattern invariants against a vocabulary of `g` categories.
    pub fn validate(&self, g: usize) -> Result<()> {
        if self.points.is_empty() {
            return invalid(format!("pattern {} has no points", self.sample_id));
        }
        for p in &self.points {
            if p.category >= g {
                return invalid(format!(
                    "pattern {}: category id {} outside vocabulary of {g}",
                    self.sample_id, p.category
                ));
            }
            if !p.x.is_finite() || !p.y.is_finite() {
                return invalid(format!("pattern {}: non-finite coordinate", self.sample_id));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct Dataset {
    pub vocabulary: CategoryVocabulary,
    pub patterns: Vec<PointPattern>,
    pub class_names: Vec<String>,
}

impl Dataset {
    pub fn new(
        vocabulary: CategoryVocabulary,
        patterns: Vec<PointPattern>,
        class_names: Vec<String>,
    ) -> Result<Self> {
        let ds = Self {
            vocabulary,
            patterns,
            class_names,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for p in &self.patterns {
            if !seen.insert(p.sample_id.as_str()) {
                return invalid(format!("duplicate sample_id {}", p.sample_id));
            }
            if p.label >= self.class_names.len() {
                return invalid(format!(
                    "pattern {}: label {} but only {} classes",
                    p.sample_id,
                    p.label,
                    self.class_names.len()
                ));
            }
            p.validate(self.vocabulary.len())?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.patterns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patterns.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.patterns.iter().map(|p| p.label).collect()
    }

    /// Same vocabulary and classes, different patterns.
    pub fn with_patterns(&self, patterns: Vec<PointPattern>) -> Self {
        Self {
            vocabulary: self.vocabulary.clone(),
            patterns,
            class_names: self.class_names.clone(),
        }
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        self.with_patterns(indices.iter().map(|&i| self.patterns[i].clone()).collect())
    }
}

/// Fractions used by [`split`].
pub const TEST_FRACTION: f64 = 0.2;
pub const VAL_FRACTION: f64 = 0.1;
pub const MIN_CLASS_SIZE: usize = 10;

#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

/// Stratified 80/20 train/test split, then 10% of the training part as validation.
pub fn split(dataset: &Dataset, seed: u64) -> Result<Split> {
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, p) in dataset.patterns.iter().enumerate() {
        by_class.entry(p.label).or_default().push(i);
    }
    if by_class.is_empty() {
        return contract("split of an empty dataset");
    }
    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for (label, mut members) in by_class {
        if members.len() < MIN_CLASS_SIZE {
            let name = dataset.class_names.get(label).map_or("?", String::as_str);
            return invalid(format!(
                "class {name:?} has {} samples; split needs at least {MIN_CLASS_SIZE}",
                members.len()
            ));
        }
        let mut rng = rng::indexed_stream(seed, "split", label as u64);
        members.shuffle(&mut rng);
        let n_test = (members.len() as f64 * TEST_FRACTION).round() as usize;
        let rest = members.len() - n_test;
        let n_val = (rest as f64 * VAL_FRACTION).round() as usize;
        test.extend_from_slice(&members[..n_test]);
        val.extend_from_slice(&members[n_test..n_test + n_val]);
        train.extend_from_slice(&members[n_test + n_val..]);
    }
    for part in [&mut train, &mut val, &mut test] {
        part.sort_unstable();
    }
    Ok(Split {
        train: dataset.subset(&train),
        val: dataset.subset(&val),
        test: dataset.subset(&test),
    })
}

/// Exactly `n` points: a uniform draw without replacement when the pattern has
/// at least `n` points (original order kept); otherwise every point plus
/// uniform draws with replacement up to `n`.
pub fn sample_points(pattern: &PointPattern, n: usize, seed: u64) -> PointPattern {
    assert!(n >= 1, "sample_points: n must be positive");
    let mut rng = rng::stream(seed, &format!("sample/{}", pattern.sample_id));
    let size = pattern.points.len();
    let points = if size >= n {
        let mut picked = index::sample(&mut rng, size, n).into_vec();
        picked.sort_unstable();
        picked.into_iter().map(|i| pattern.points[i]).collect()
    } else {
        let mut pts = pattern.points.clone();
        pts.extend((size..n).map(|_| pattern.points[rng.random_range(0..size)]));
        pts
    };
    PointPattern {
        sample_id: pattern.sample_id.clone(),
        points,
        label: pattern.label,
    }
}

/// Clockwise rotation by `degrees` about `center`.
pub fn rotate_about(pattern: &PointPattern, degrees: f64, center: [f64; 2]) -> PointPattern {
    let (s, c) = degrees.to_radians().sin_cos();
    let points = pattern
        .points
        .iter()
        .map(|p| {
            let (dx, dy) = (p.x - center[0], p.y - center[1]);
            Point::new(center[0] + c * dx + s * dy, center[1] - s * dx + c * dy, p.category)
        })
        .collect();
    PointPattern {
        sample_id: pattern.sample_id.clone(),
        points,
        label: pattern.label,
    }
}

/// Clockwise rotation by `degrees` about the pattern centroid.
pub fn rotate(pattern: &PointPattern, degrees: f64) -> PointPattern {
    rotate_about(pattern, degrees, pattern.centroid())
}

pub const AUGMENT_STEP_DEGREES: f64 = 12.0;
pub const AUGMENT_ROTATIONS: usize = 5;

/// Each sample followed by its rotations at 12°, 24°, …, 60° clockwise.
pub fn augment(train: &Dataset) -> Dataset {
    let mut out = Vec::with_capacity(train.len() * (AUGMENT_ROTATIONS + 1));
    for p in &train.patterns {
        out.push(p.clone());
        for r in 1..=AUGMENT_ROTATIONS {
            let deg = AUGMENT_STEP_DEGREES * r as f64;
            let mut rotated = rotate(p, deg);
            rotated.sample_id = format!("{}#rot{}", p.sample_id, deg as u32);
            out.push(rotated);
        }
    }
    train.with_patterns(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pattern(id: &str, pts: &[(f64, f64, usize)], label: usize) -> PointPattern {
        PointPattern {
            sample_id: id.into(),
            points: pts.iter().map(|&(x, y, c)| Point::new(x, y, c)).collect(),
            label,
        }
    }

    fn balanced(n_per_class: usize) -> Dataset {
        let vocab = CategoryVocabulary::sorted(["a".to_string()]);
        let patterns = (0..2 * n_per_class)
            .map(|i| pattern(&format!("s{i:03}"), &[(i as f64, 0.0, 0)], i % 2))
            .collect();
        Dataset::new(vocab, patterns, vec!["x".into(), "y".into()]).unwrap()
    }

    #[test]
    fn split_proportions_and_disjointness() {
        let ds = balanced(50);
        let s = split(&ds, 11).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (72, 8, 20));
        for part in [&s.train, &s.val, &s.test] {
            let class0 = part.patterns.iter().filter(|p| p.label == 0).count();
            assert_eq!(class0 * 2, part.len(), "stratified");
        }
        let mut ids: Vec<&str> = [&s.train, &s.val, &s.test]
            .iter()
            .flat_map(|d| d.patterns.iter().map(|p| p.sample_id.as_str()))
            .collect();
        ids.sort_unstable();
        let before = ids.len();
        ids.dedup();
        assert_eq!(before, ids.len());
        assert_eq!(ids.len(), ds.len());
        assert_eq!(split(&ds, 11).unwrap(), s);
        assert_ne!(split(&ds, 12).unwrap().test, s.test);
    }

    #[test]
    fn split_refuses_small_class() {
        let err = split(&balanced(9), 0).unwrap_err().to_string();
        assert!(err.contains("at least 10"), "{err}");
    }

    #[test]
    fn sampling_sizes() {
        let pts: Vec<(f64, f64, usize)> = (0..2000).map(|i| (i as f64, 0.0, 0)).collect();
        let p = pattern("p", &pts, 0);
        let s = sample_points(&p, 1024, 5);
        assert_eq!(s.len(), 1024);
        let mut xs: Vec<i64> = s.points.iter().map(|q| q.x as i64).collect();
        xs.dedup();
        assert_eq!(xs.len(), 1024, "distinct");

        let same = sample_points(&p, 2000, 5);
        assert_eq!(same.points, p.points);

        let small = pattern("q", &[(0.0, 0.0, 0), (1.0, 1.0, 0)], 0);
        let up = sample_points(&small, 5, 1);
        assert_eq!(up.len(), 5);
        assert_eq!(&up.points[..2], &small.points[..]);
    }

    #[test]
    fn rotation_hand_case_and_full_turn() {
        let p = pattern("r", &[(1.0, 0.0, 0)], 0);
        let r = rotate_about(&p, 90.0, [0.0, 0.0]);
        assert!((r.points[0].x - 0.0).abs() < 1e-12);
        assert!((r.points[0].y + 1.0).abs() < 1e-12);

        let q = pattern("q", &[(3.0, 4.0, 1), (-2.0, 7.5, 0), (10.0, -1.0, 2)], 1);
        let full = rotate(&q, 360.0);
        for (a, b) in full.points.iter().zip(&q.points) {
            assert!((a.x - b.x).abs() < 1e-9 && (a.y - b.y).abs() < 1e-9);
            assert_eq!(a.category, b.category);
        }
    }

    #[test]
    fn augment_six_copies_composing() {
        let ds = balanced(5);
        let aug = augment(&ds);
        assert_eq!(aug.len(), 60);
        for (i, p) in aug.patterns.iter().enumerate() {
            assert_eq!(p.label, ds.patterns[i / 6].label);
        }
        let src = &ds.patterns[3];
        let mut stepwise = src.clone();
        for k in 1..=5 {
            stepwise = rotate(&stepwise, 12.0);
            let copy = &aug.patterns[3 * 6 + k];
            for (a, b) in copy.points.iter().zip(&stepwise.points) {
                assert!((a.x - b.x).abs() < 1e-9 && (a.y - b.y).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn dataset_rejects_bad_invariants() {
        let vocab = CategoryVocabulary::sorted(["a".to_string()]);
        let dup = vec![pattern("s", &[(0.0, 0.0, 0)], 0), pattern("s", &[(1.0, 0.0, 0)], 0)];
        assert!(Dataset::new(vocab.clone(), dup, vec!["c".into()]).is_err());
        let bad_cat = vec![pattern("s", &[(0.0, 0.0, 3)], 0)];
        assert!(Dataset::new(vocab.clone(), bad_cat, vec!["c".into()]).is_err());
        let empty = vec![pattern("s", &[], 0)];
        assert!(Dataset::new(vocab, empty, vec!["c".into()]).is_err());
        assert!(CategoryVocabulary::new(vec!["a".into(), "a".into()]).is_err());
    }
}
