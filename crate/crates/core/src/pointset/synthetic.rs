//! Planted-relationship corpora.
//!
//! Each pattern starts from a per-category point budget drawn uniformly over
//! categories. Planted relationships turn a fraction of the first category's
//! points into parents and place one child of every other category in the
//! subset uniformly within the interaction radius. Whatever budget remains is
//! scattered as homogeneous Poisson background. Because children consume their
//! category's budget, category marginals are identical across classes and only
//! the spatial arrangement separates them.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Uniform};
use samc_tensor::rng::{self, StreamRng};
use serde::{Deserialize, Serialize};

use super::{CategoryVocabulary, Dataset, Point, PointPattern};
use crate::error::{invalid, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantedRelationship {
    /// Category names; the first one supplies the parents.
    pub categories: Vec<String>,
    /// Interaction radius in pixels.
    pub radius: f64,
    /// Fraction of the first category's points that become parents.
    pub participation: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticClass {
    pub name: String,
    #[serde(default)]
    pub relationships: Vec<PlantedRelationship>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    /// Number of categories, named `A`, `B`, … in order.
    pub categories: usize,
    pub points_per_pattern: usize,
    pub patterns_per_class: usize,
    /// Side of the square arena in pixels.
    pub arena: f64,
    pub classes: Vec<SyntheticClass>,
    /// Points per square pixel summed over categories. Implied by
    /// `points_per_pattern / arena²` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub background_intensity: Option<f64>,
    pub seed: u64,
}

/// Names used for the first categories; later ones continue as `C26`, `C27`, ….
pub fn category_name(i: usize) -> String {
    if i < 26 {
        char::from(b'A' + i as u8).to_string()
    } else {
        format!("C{i}")
    }
}

impl SyntheticSpec {
    /// Two classes over four categories with one planted pair in the first.
    pub fn planted_pair(patterns_per_class: usize, points_per_pattern: usize, seed: u64) -> Self {
        Self {
            categories: 4,
            points_per_pattern,
            patterns_per_class,
            arena: 2000.0,
            classes: vec![
                SyntheticClass {
                    name: "planted".into(),
                    relationships: vec![PlantedRelationship {
                        categories: vec!["A".into(), "B".into()],
                        radius: 30.0,
                        participation: 0.9,
                    }],
                },
                SyntheticClass {
                    name: "random".into(),
                    relationships: Vec::new(),
                },
            ],
            background_intensity: None,
            seed,
        }
    }

    pub fn intensity(&self) -> f64 {
        self.points_per_pattern as f64 / (self.arena * self.arena)
    }

    pub fn vocabulary(&self) -> CategoryVocabulary {
        CategoryVocabulary::new((0..self.categories).map(category_name).collect())
            .expect("generated names are unique")
    }

    pub fn validate(&self) -> Result<()> {
        if self.categories == 0 || self.points_per_pattern == 0 || self.patterns_per_class == 0 {
            return invalid("categories, points_per_pattern and patterns_per_class must be positive");
        }
        if !(self.arena.is_finite() && self.arena > 0.0) {
            return invalid(format!("arena must be positive, got {}", self.arena));
        }
        if self.classes.is_empty() {
            return invalid("at least one class is required");
        }
        let implied = self.intensity();
        if let Some(given) = self.background_intensity {
            if !(given > 0.0) || ((given - implied) / implied).abs() > 0.01 {
                return invalid(format!(
                    "background_intensity {given} disagrees with points_per_pattern / arena² = {implied}"
                ));
            }
        }
        if implied > 1.0 {
            return invalid(format!(
                "arena {}px is too small for {} points (intensity {implied:.3} > 1 per px²)",
                self.arena, self.points_per_pattern
            ));
        }
        let vocab = self.vocabulary();
        let mut names: Vec<&str> = self.classes.iter().map(|c| c.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return invalid("class names must be unique");
        }
        for class in &self.classes {
            for rel in &class.relationships {
                if rel.categories.len() < 2 {
                    return invalid(format!("class {}: a relationship needs ≥ 2 categories", class.name));
                }
                for (i, c) in rel.categories.iter().enumerate() {
                    if vocab.id(c).is_none() {
                        return invalid(format!("class {}: unknown category {c:?}", class.name));
                    }
                    if rel.categories[..i].contains(c) {
                        return invalid(format!("class {}: category {c:?} repeated", class.name));
                    }
                }
                if !(rel.radius > 0.0 && rel.radius.is_finite()) {
                    return invalid(format!("class {}: radius must be positive", class.name));
                }
                if 2.0 * rel.radius >= self.arena {
                    return invalid(format!(
                        "class {}: radius {} does not fit in arena {}",
                        class.name, rel.radius, self.arena
                    ));
                }
                if !(rel.participation > 0.0 && rel.participation <= 1.0) {
                    return invalid(format!("class {}: participation must be in (0, 1]", class.name));
                }
            }
        }
        Ok(())
    }
}

fn uniform_in_disk(
    rng: &mut StreamRng,
    center: [f64; 2],
    radius: f64,
    arena: f64,
) -> [f64; 2] {
    loop {
        let rho = radius * rng.random::<f64>().sqrt();
        let theta = rng.random::<f64>() * std::f64::consts::TAU;
        let p = [center[0] + rho * theta.cos(), center[1] + rho * theta.sin()];
        if (0.0..=arena).contains(&p[0]) && (0.0..=arena).contains(&p[1]) {
            return p;
        }
    }
}

fn pattern(spec: &SyntheticSpec, class: &SyntheticClass, vocab: &CategoryVocabulary, label: usize, index: usize) -> PointPattern {
    let mut rng = rng::indexed_stream(spec.seed, &format!("synthetic/{}", class.name), index as u64);
    let g = spec.categories;
    let mut budget = vec![0usize; g];
    for _ in 0..spec.points_per_pattern {
        budget[rng.random_range(0..g)] += 1;
    }
    let coord = Uniform::new_inclusive(0.0, spec.arena).expect("arena validated");
    let mut points = Vec::with_capacity(spec.points_per_pattern);
    let total = budget.clone();
    for rel in &class.relationships {
        let ids: Vec<usize> = rel.categories.iter().map(|c| vocab.id(c).expect("validated")).collect();
        let parent_cat = ids[0];
        let parents = ((rel.participation * total[parent_cat] as f64).round() as usize).min(budget[parent_cat]);
        budget[parent_cat] -= parents;
        for _ in 0..parents {
            let center = [coord.sample(&mut rng), coord.sample(&mut rng)];
            points.push(Point::new(center[0], center[1], parent_cat));
            for &child in &ids[1..] {
                if budget[child] == 0 {
                    continue;
                }
                budget[child] -= 1;
                let [x, y] = uniform_in_disk(&mut rng, center, rel.radius, spec.arena);
                points.push(Point::new(x, y, child));
            }
        }
    }
    for (cat, &left) in budget.iter().enumerate() {
        for _ in 0..left {
            points.push(Point::new(coord.sample(&mut rng), coord.sample(&mut rng), cat));
        }
    }
    points.shuffle(&mut rng);
    PointPattern {
        sample_id: format!("{}_{index:04}", class.name),
        points,
        label,
    }
}

/// Generates `patterns_per_class` patterns for every class. Classes are
/// ordered by name; the result is a pure function of the spec.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let vocab = spec.vocabulary();
    let mut classes: Vec<&SyntheticClass> = spec.classes.iter().collect();
    classes.sort_by(|a, b| a.name.cmp(&b.name));
    let mut patterns = Vec::with_capacity(classes.len() * spec.patterns_per_class);
    for (label, class) in classes.iter().enumerate() {
        for i in 0..spec.patterns_per_class {
            patterns.push(pattern(spec, class, &vocab, label, i));
        }
    }
    let class_names = classes.iter().map(|c| c.name.clone()).collect();
    Dataset::new(vocab, patterns, class_names)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_and_marginals() {
        let spec = SyntheticSpec::planted_pair(3, 400, 1);
        let ds = generate_synthetic(&spec).unwrap();
        assert_eq!(ds.len(), 6);
        assert_eq!(ds.class_names, ["planted", "random"]);
        for p in &ds.patterns {
            assert_eq!(p.len(), 400);
            for q in &p.points {
                assert!((0.0..=2000.0).contains(&q.x) && (0.0..=2000.0).contains(&q.y));
            }
        }
    }

    #[test]
    fn refuses_dense_or_invalid_specs() {
        let mut spec = SyntheticSpec::planted_pair(2, 100, 0);
        spec.arena = 5.0;
        assert!(generate_synthetic(&spec).unwrap_err().to_string().contains("too small"));
        let mut spec = SyntheticSpec::planted_pair(2, 100, 0);
        spec.classes[0].relationships[0].categories[1] = "Z".into();
        assert!(generate_synthetic(&spec).is_err());
        let mut spec = SyntheticSpec::planted_pair(2, 100, 0);
        spec.classes[0].relationships[0].participation = 0.0;
        assert!(generate_synthetic(&spec).is_err());
        let mut spec = SyntheticSpec::planted_pair(2, 100, 0);
        spec.background_intensity = Some(1.0);
        assert!(generate_synthetic(&spec).is_err());
        spec.background_intensity = Some(spec.intensity());
        assert!(generate_synthetic(&spec).is_ok());
    }

    #[test]
    fn children_lie_within_radius() {
        let mut spec = SyntheticSpec::planted_pair(1, 300, 4);
        spec.classes[0].relationships[0].participation = 1.0;
        let ds = generate_synthetic(&spec).unwrap();
        let p = &ds.patterns[0];
        let a: Vec<_> = p.points.iter().filter(|q| q.category == 0).collect();
        let b: Vec<_> = p.points.iter().filter(|q| q.category == 1).collect();
        let near = b
            .iter()
            .filter(|q| a.iter().any(|r| (q.x - r.x).hypot(q.y - r.y) <= 30.0))
            .count();
        assert!(near as f64 >= 0.8 * b.len().min(a.len()) as f64, "{near} of {}", b.len());
    }
}
