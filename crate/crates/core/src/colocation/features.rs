use serde::{Deserialize, Serialize};

use super::{cross_k, participation_index, StudyArea};
use crate::error::{invalid, Result};
use crate::pointset::{Dataset, PointPattern};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Measure {
    /// Participation index of the unordered pair, emitted for both orders.
    Pi,
    CrossK,
}

pub fn parse_measure(s: &str) -> Result<Measure> {
    match s.to_ascii_lowercase().as_str() {
        "pi" => Ok(Measure::Pi),
        "crossk" | "cross_k" | "cross-k" => Ok(Measure::CrossK),
        other => invalid(format!("unknown measure {other:?} (expected pi or crossk)")),
    }
}

/// Strictly increasing positive distance thresholds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSet(Vec<f64>);

impl ThresholdSet {
    pub fn new(h: Vec<f64>) -> Result<Self> {
        if h.is_empty() || h.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return invalid("thresholds must be a non-empty list of positive numbers");
        }
        if h.windows(2).any(|w| w[0] >= w[1]) {
            return invalid("thresholds must be strictly increasing");
        }
        Ok(Self(h))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

impl Default for ThresholdSet {
    fn default() -> Self {
        Self(vec![50.0])
    }
}

/// One feature row per pattern over ordered category pairs `(a, b)`, `a ≠ b`,
/// in lexicographic id order, with thresholds ascending inside each pair.
#[derive(Clone, Debug, PartialEq)]
pub struct ColocFeatures {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub sample_ids: Vec<String>,
}

fn pattern_row(p: &PointPattern, g: usize, measure: Measure, h: &ThresholdSet) -> Result<Vec<f64>> {
    let mut counts = vec![0usize; g];
    for q in &p.points {
        counts[q.category] += 1;
    }
    let mut row = Vec::with_capacity(g * (g - 1) * h.values().len());
    for a in 0..g {
        for b in 0..g {
            if a == b {
                continue;
            }
            for &t in h.values() {
                // A pair with an absent category has no instances.
                let v = if counts[a] == 0 || counts[b] == 0 {
                    0.0
                } else {
                    match measure {
                        Measure::Pi => participation_index(p, &[a.min(b), a.max(b)], t)?,
                        Measure::CrossK => cross_k(p, a, b, t, StudyArea::BoundingBox)?,
                    }
                };
                row.push(v);
            }
        }
    }
    Ok(row)
}

pub fn features(data: &Dataset, measure: Measure, h: &ThresholdSet) -> Result<ColocFeatures> {
    use rayon::prelude::*;
    let g = data.vocabulary.len();
    let mut columns = Vec::new();
    for a in 0..g {
        for b in 0..g {
            if a != b {
                for t in h.values() {
                    let (na, nb) = (data.vocabulary.name(a).unwrap_or("?"), data.vocabulary.name(b).unwrap_or("?"));
                    columns.push(format!("{na}:{nb}@{t}"));
                }
            }
        }
    }
    let rows = data
        .patterns
        .par_iter()
        .map(|p| pattern_row(p, g, measure, h))
        .collect::<Result<Vec<_>>>()?;
    Ok(ColocFeatures {
        columns,
        rows,
        labels: data.labels(),
        sample_ids: data.patterns.iter().map(|p| p.sample_id.clone()).collect(),
    })
}

/// `sample_id,<pair>@<h>,...,label` with class names as labels.
pub fn features_csv(f: &ColocFeatures, class_names: &[String]) -> String {
    let mut s = String::from("sample_id");
    for c in &f.columns {
        s.push(',');
        s.push_str(c);
    }
    s.push_str(",label\n");
    for ((id, row), &label) in f.sample_ids.iter().zip(&f.rows).zip(&f.labels) {
        s.push_str(id);
        for v in row {
            s.push_str(&format!(",{v}"));
        }
        s.push_str(&format!(",{}\n", class_names[label]));
    }
    s
}
