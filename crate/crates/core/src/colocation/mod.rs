//! Classical co-location statistics and the classifiers that consume them.
//!
//! Neighbor relations use `d ≤ h`. Instances of a category subset with more
//! than two members are cliques: one point per category, all pairwise within
//! `h`.

mod classifiers;
mod features;

use std::collections::BTreeSet;

use crate::error::{contract, invalid, Result};
use crate::pointset::{CategoryId, PointPattern};

pub use classifiers::{
    fit_forest, fit_mlp, fit_tree, Classifier, DecisionTree, Forest, ForestConfig, Mlp, MlpConfig,
    TreeNode, FOREST_TREES,
};
pub use features::{features, features_csv, parse_measure, ColocFeatures, Measure, ThresholdSet};

/// How the study area `W` of the cross-K estimator is chosen.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StudyArea {
    /// Area of the bounding box of all points in the pattern.
    BoundingBox,
    Fixed(f64),
}

impl StudyArea {
    pub fn area(&self, pattern: &PointPattern) -> Result<f64> {
        match *self {
            Self::Fixed(a) if a > 0.0 && a.is_finite() => Ok(a),
            Self::Fixed(a) => invalid(format!("study area must be positive, got {a}")),
            Self::BoundingBox => {
                let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
                for p in &pattern.points {
                    lo = [lo[0].min(p.x), lo[1].min(p.y)];
                    hi = [hi[0].max(p.x), hi[1].max(p.y)];
                }
                let a = (hi[0] - lo[0]) * (hi[1] - lo[1]);
                if a > 0.0 {
                    Ok(a)
                } else {
                    invalid(format!("pattern {} has a degenerate bounding box", pattern.sample_id))
                }
            }
        }
    }
}

fn points_of(pattern: &PointPattern, c: CategoryId) -> Vec<[f64; 2]> {
    pattern
        .points
        .iter()
        .filter(|p| p.category == c)
        .map(|p| [p.x, p.y])
        .collect()
}

fn within(a: &[f64; 2], b: &[f64; 2], h: f64) -> bool {
    let (dx, dy) = (a[0] - b[0], a[1] - b[1]);
    dx * dx + dy * dy <= h * h
}

/// For every point of `a`, the sorted indices of points of `b` within `h`.
/// Exhaustive reference for [`neighbors_within`].
pub fn neighbors_within_brute(a: &[[f64; 2]], b: &[[f64; 2]], h: f64) -> Vec<Vec<usize>> {
    a.iter()
        .map(|p| (0..b.len()).filter(|&j| within(p, &b[j], h)).collect())
        .collect()
}

/// Grid-bucketed neighbor lists; identical output to [`neighbors_within_brute`].
pub fn neighbors_within(a: &[[f64; 2]], b: &[[f64; 2]], h: f64) -> Vec<Vec<usize>> {
    if b.is_empty() || a.is_empty() || !(h > 0.0) || b.len() < 32 {
        return neighbors_within_brute(a, b, h);
    }
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in b {
        lo = [lo[0].min(p[0]), lo[1].min(p[1])];
        hi = [hi[0].max(p[0]), hi[1].max(p[1])];
    }
    let cell = [0, 1].map(|d| h.max((hi[d] - lo[d]) / 2048.0));
    let dims = [0, 1].map(|d| ((hi[d] - lo[d]) / cell[d]).floor() as usize + 1);
    let key = |p: &[f64; 2], d: usize| -> i64 { ((p[d] - lo[d]) / cell[d]).floor() as i64 };
    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); dims[0] * dims[1]];
    for (j, p) in b.iter().enumerate() {
        let (cx, cy) = (key(p, 0).clamp(0, dims[0] as i64 - 1), key(p, 1).clamp(0, dims[1] as i64 - 1));
        buckets[cy as usize * dims[0] + cx as usize].push(j);
    }
    a.iter()
        .map(|p| {
            let (cx, cy) = (key(p, 0), key(p, 1));
            let mut out = Vec::new();
            for y in (cy - 1).max(0)..=(cy + 1).min(dims[1] as i64 - 1) {
                for x in (cx - 1).max(0)..=(cx + 1).min(dims[0] as i64 - 1) {
                    for &j in &buckets[y as usize * dims[0] + x as usize] {
                        if within(p, &b[j], h) {
                            out.push(j);
                        }
                    }
                }
            }
            out.sort_unstable();
            out
        })
        .collect()
}

/// Cross-K estimate `W / (n_i n_j) · #{(k, l) : d(i_k, j_l) ≤ h}`, excluding
/// self pairs when `i == j`. No edge correction.
pub fn cross_k(pattern: &PointPattern, i: CategoryId, j: CategoryId, h: f64, area: StudyArea) -> Result<f64> {
    if !(h > 0.0) {
        return invalid(format!("distance threshold must be positive, got {h}"));
    }
    let pi = points_of(pattern, i);
    let pj = points_of(pattern, j);
    for (c, pts) in [(i, &pi), (j, &pj)] {
        if pts.is_empty() {
            return invalid(format!("pattern {} has no points of category {c}", pattern.sample_id));
        }
    }
    if i == j && pi.len() < 2 {
        return invalid(format!("category {i} needs two points for an auto-K estimate"));
    }
    let w = area.area(pattern)?;
    let lists = neighbors_within(&pi, &pj, h);
    let mut count: usize = lists.iter().map(Vec::len).sum();
    if i == j {
        count -= pi.len();
    }
    let nj = if i == j { pj.len() - 1 } else { pj.len() };
    Ok(w * count as f64 / (pi.len() as f64 * nj as f64))
}

/// Membership flags: `result[c][p]` is true when the `p`-th point of the
/// `c`-th category of `subset` lies in some clique instance.
fn participation_flags(pattern: &PointPattern, subset: &[CategoryId], h: f64) -> Vec<Vec<bool>> {
    let pts: Vec<Vec<[f64; 2]>> = subset.iter().map(|&c| points_of(pattern, c)).collect();
    let m = subset.len();
    // nbr[a][b][p]: indices of category-b points within h of category-a point p.
    let nbr: Vec<Vec<Vec<Vec<usize>>>> = (0..m)
        .map(|a| (0..m).map(|b| neighbors_within(&pts[a], &pts[b], h)).collect())
        .collect();
    let mut flags: Vec<Vec<bool>> = pts.iter().map(|p| vec![false; p.len()]).collect();
    let mut chosen = vec![0usize; m];

    fn extend(depth: usize, chosen: &mut [usize], nbr: &[Vec<Vec<Vec<usize>>>], flags: &mut [Vec<bool>]) {
        if depth == chosen.len() {
            for (c, &p) in chosen.iter().enumerate() {
                flags[c][p] = true;
            }
            return;
        }
        // Candidates adjacent to the first chosen point, filtered by the rest.
        for &q in &nbr[0][depth][chosen[0]] {
            if (1..depth).all(|a| nbr[a][depth][chosen[a]].binary_search(&q).is_ok()) {
                chosen[depth] = q;
                extend(depth + 1, chosen, nbr, flags);
            }
        }
    }

    for p in 0..pts[0].len() {
        chosen[0] = p;
        extend(1, &mut chosen, &nbr, &mut flags);
    }
    flags
}

fn check_subset(subset: &[CategoryId]) -> Result<()> {
    if subset.len() < 2 {
        return contract("a co-location pattern needs at least two categories");
    }
    let set: BTreeSet<_> = subset.iter().collect();
    if set.len() != subset.len() {
        return contract("co-location categories must be distinct");
    }
    Ok(())
}

/// Fraction of `f`'s points that take part in an instance of `subset`.
pub fn participation_ratio(pattern: &PointPattern, subset: &[CategoryId], f: CategoryId, h: f64) -> Result<f64> {
    check_subset(subset)?;
    let pos = subset
        .iter()
        .position(|&c| c == f)
        .ok_or_else(|| crate::Error::Contract(format!("category {f} is not in the pattern subset")))?;
    let flags = participation_flags(pattern, subset, h);
    ratio(&flags[pos], f)
}

fn ratio(flags: &[bool], f: CategoryId) -> Result<f64> {
    if flags.is_empty() {
        return invalid(format!("no points of category {f}"));
    }
    Ok(flags.iter().filter(|&&b| b).count() as f64 / flags.len() as f64)
}

/// Minimum participation ratio over the categories of `subset`.
pub fn participation_index(pattern: &PointPattern, subset: &[CategoryId], h: f64) -> Result<f64> {
    check_subset(subset)?;
    let flags = participation_flags(pattern, subset, h);
    let mut pi = f64::INFINITY;
    for (f, fl) in subset.iter().zip(&flags) {
        pi = pi.min(ratio(fl, *f)?);
    }
    Ok(pi)
}
