//! Exact k-nearest-neighbor graphs.
//!
//! Ties are broken by squared distance, then by the neighbor's content
//! (coordinates or feature vector, lexicographically), then by index, which
//! only matters for exact duplicates. Neighbor sets therefore do not depend on
//! input order except among identical points.

use std::cmp::Ordering;

use rayon::prelude::*;

use crate::error::{contract, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct NeighborGraph {
    pub n: usize,
    pub k: usize,
    /// Row-major `n × k` neighbor indices.
    pub indices: Vec<usize>,
    /// Row-major `n × k` Euclidean distances, non-decreasing per row.
    pub distances: Vec<f64>,
}

impl NeighborGraph {
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.indices[i * self.k..(i + 1) * self.k]
    }

    pub fn neighbor_distances(&self, i: usize) -> &[f64] {
        &self.distances[i * self.k..(i + 1) * self.k]
    }

    /// Edge count `n·k`; edges are ordered center-major.
    pub fn num_edges(&self) -> usize {
        self.n * self.k
    }

    /// Center index of every edge.
    pub fn centers(&self) -> Vec<usize> {
        (0..self.n).flat_map(|i| std::iter::repeat_n(i, self.k)).collect()
    }
}

fn check_sizes(n: usize, k: usize) -> Result<()> {
    if k == 0 {
        return contract("k must be positive");
    }
    if n <= k {
        return contract(format!("kNN needs more than k = {k} points, got {n}"));
    }
    Ok(())
}

fn lex(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

#[derive(Clone, Copy)]
struct Candidate {
    sq: f64,
    index: usize,
}

/// Keeps the `k` best candidates under `(sq, content, index)`.
fn select_k<'a, F>(cands: &mut Vec<Candidate>, k: usize, content: F)
where
    F: Fn(usize) -> &'a [f64],
{
    let cmp = |a: &Candidate, b: &Candidate| {
        a.sq.total_cmp(&b.sq)
            .then_with(|| lex(content(a.index), content(b.index)))
            .then(a.index.cmp(&b.index))
    };
    if cands.len() > k {
        cands.select_nth_unstable_by(k - 1, cmp);
        cands.truncate(k);
    }
    cands.sort_unstable_by(cmp);
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    // Four interleaved accumulators; the order is fixed, so results are reproducible.
    let mut acc = [0.0f64; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            let d = x[l] - y[l];
            acc[l] += d * d;
        }
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += (x - y) * (x - y);
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn assemble(n: usize, k: usize, rows: Vec<Vec<Candidate>>) -> NeighborGraph {
    let mut indices = Vec::with_capacity(n * k);
    let mut distances = Vec::with_capacity(n * k);
    for row in rows {
        for c in row {
            indices.push(c.index);
            distances.push(c.sq.sqrt());
        }
    }
    NeighborGraph {
        n,
        k,
        indices,
        distances,
    }
}

/// Brute-force scan over row-major `n × dim` data, keeping a sorted
/// bounded list of the best `k` candidates per row.
fn brute(data: &[f64], dim: usize, k: usize) -> Result<NeighborGraph> {
    let n = data.len() / dim;
    check_sizes(n, k)?;
    let row = |i: usize| &data[i * dim..(i + 1) * dim];
    let better = |a: &Candidate, b: &Candidate| {
        a.sq.total_cmp(&b.sq)
            .then_with(|| lex(row(a.index), row(b.index)))
            .then(a.index.cmp(&b.index))
            .is_lt()
    };
    let rows = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut best: Vec<Candidate> = Vec::with_capacity(k + 1);
            let ri = row(i);
            for j in (0..n).filter(|&j| j != i) {
                let c = Candidate {
                    sq: sq_dist(ri, row(j)),
                    index: j,
                };
                if best.len() == k && !better(&c, &best[k - 1]) {
                    continue;
                }
                let pos = best.partition_point(|b| better(b, &c));
                best.insert(pos, c);
                best.truncate(k);
            }
            best
        })
        .collect();
    Ok(assemble(n, k, rows))
}

/// Reference `O(n²)` construction in coordinate space.
pub fn knn_brute(points: &[[f64; 2]], k: usize) -> Result<NeighborGraph> {
    brute(points.as_flattened(), 2, k)
}

/// Rows per Gram block in [`knn_gram`].
const GRAM_BLOCK: usize = 256;

/// Exact kNN that screens candidates with Gram-matrix distances
/// `‖a‖² + ‖b‖² − 2a·b` and ranks the survivors by directly computed
/// distances. The screen keeps every point within twice a rounding bound of
/// the screened k-th distance, so the exact top `k` always survives.
fn knn_gram(data: &[f64], dim: usize, k: usize) -> Result<NeighborGraph> {
    let n = data.len() / dim;
    check_sizes(n, k)?;
    let row = |i: usize| &data[i * dim..(i + 1) * dim];
    let norms: Vec<f64> = (0..n).map(|i| row(i).iter().map(|v| v * v).sum()).collect();
    let max_norm = norms.iter().copied().fold(0.0, f64::max);
    let mut rows: Vec<Vec<Candidate>> = Vec::with_capacity(n);
    let mut approx = vec![0.0; n];
    for start in (0..n).step_by(GRAM_BLOCK) {
        let m = GRAM_BLOCK.min(n - start);
        let gram = samc_tensor::matmul_nt(&data[start * dim..(start + m) * dim], data, m, dim, n);
        for r in 0..m {
            let i = start + r;
            for (j, a) in approx.iter_mut().enumerate() {
                *a = if j == i {
                    f64::INFINITY
                } else {
                    norms[i] + norms[j] - 2.0 * gram[r * n + j]
                };
            }
            // k-th smallest screened distance via a bounded insertion list.
            let mut low = [f64::INFINITY; 64];
            let low = &mut low[..k.min(64)];
            if k <= 64 {
                for &a in approx.iter() {
                    if a < low[k - 1] {
                        let pos = low.partition_point(|&b| b <= a);
                        low.copy_within(pos..k - 1, pos + 1);
                        low[pos] = a;
                    }
                }
            }
            let kth = if k <= 64 {
                low[k - 1]
            } else {
                let mut sorted = approx.clone();
                sorted.select_nth_unstable_by(k - 1, f64::total_cmp);
                sorted[k - 1]
            };
            let tol = 1e-9 * (norms[i] + max_norm) + f64::MIN_POSITIVE;
            let cutoff = kth + 2.0 * tol;
            let mut cands: Vec<Candidate> = (0..n)
                .filter(|&j| j != i && approx[j] <= cutoff)
                .map(|j| Candidate {
                    sq: sq_dist(row(i), row(j)),
                    index: j,
                })
                .collect();
            select_k(&mut cands, k, row);
            rows.push(cands);
        }
    }
    Ok(assemble(n, k, rows))
}

/// kNN over row-major `n × dim` feature vectors.
pub fn knn_features(features: &[f64], dim: usize, k: usize) -> Result<NeighborGraph> {
    if dim == 0 || features.len() % dim != 0 {
        return contract(format!("feature buffer of {} is not a multiple of {dim}", features.len()));
    }
    if dim >= 4 && features.len() / dim > 64 {
        knn_gram(features, dim, k)
    } else {
        brute(features, dim, k)
    }
}

/// Reference `O(n²)` construction in feature space.
pub fn knn_features_brute(features: &[f64], dim: usize, k: usize) -> Result<NeighborGraph> {
    if dim == 0 || features.len() % dim != 0 {
        return contract(format!("feature buffer of {} is not a multiple of {dim}", features.len()));
    }
    brute(features, dim, k)
}

struct Grid {
    min: [f64; 2],
    cell: f64,
    dims: [usize; 2],
    starts: Vec<usize>,
    items: Vec<usize>,
}

impl Grid {
    fn new(points: &[[f64; 2]], k: usize) -> Self {
        let mut min = [f64::INFINITY; 2];
        let mut max = [f64::NEG_INFINITY; 2];
        for p in points {
            for d in 0..2 {
                min[d] = min[d].min(p[d]);
                max[d] = max[d].max(p[d]);
            }
        }
        let extent = [(max[0] - min[0]).max(1e-12), (max[1] - min[1]).max(1e-12)];
        // About k points per cell keeps the first ring small.
        let cells_wanted = (points.len() as f64 / k.max(1) as f64).max(1.0);
        let cell = ((extent[0] * extent[1]) / cells_wanted).sqrt().max(extent[0].max(extent[1]) / 4096.0);
        let dims = [
            ((extent[0] / cell).floor() as usize + 1).min(4096),
            ((extent[1] / cell).floor() as usize + 1).min(4096),
        ];
        let mut grid = Self {
            min,
            cell,
            dims,
            starts: Vec::new(),
            items: Vec::new(),
        };
        let ncell = dims[0] * dims[1];
        let mut counts = vec![0usize; ncell + 1];
        let ids: Vec<usize> = points.iter().map(|p| grid.cell_id(p)).collect();
        for &c in &ids {
            counts[c + 1] += 1;
        }
        for c in 0..ncell {
            counts[c + 1] += counts[c];
        }
        let mut fill = counts.clone();
        let mut items = vec![0; points.len()];
        for (i, &c) in ids.iter().enumerate() {
            items[fill[c]] = i;
            fill[c] += 1;
        }
        grid.starts = counts;
        grid.items = items;
        grid
    }

    fn coord(&self, p: &[f64; 2]) -> [usize; 2] {
        [0, 1].map(|d| (((p[d] - self.min[d]) / self.cell).floor().max(0.0) as usize).min(self.dims[d] - 1))
    }

    fn cell_id(&self, p: &[f64; 2]) -> usize {
        let [cx, cy] = self.coord(p);
        cy * self.dims[0] + cx
    }

    fn cell(&self, cx: usize, cy: usize) -> &[usize] {
        let id = cy * self.dims[0] + cx;
        &self.items[self.starts[id]..self.starts[id + 1]]
    }
}

/// kNN in coordinate space using a uniform grid; identical output to
/// [`knn_brute`].
pub fn knn_coords(points: &[[f64; 2]], k: usize) -> Result<NeighborGraph> {
    let n = points.len();
    check_sizes(n, k)?;
    if n <= 64 {
        return knn_brute(points, k);
    }
    let grid = Grid::new(points, k);
    let content = |i: usize| points[i].as_slice();
    let rows = (0..n)
        .into_par_iter()
        .map(|i| {
            let p = &points[i];
            let [cx, cy] = grid.coord(p);
            let mut cands = Vec::with_capacity(4 * k);
            let mut ring = 0usize;
            loop {
                let x0 = cx.saturating_sub(ring);
                let y0 = cy.saturating_sub(ring);
                let x1 = (cx + ring).min(grid.dims[0] - 1);
                let y1 = (cy + ring).min(grid.dims[1] - 1);
                for y in y0..=y1 {
                    for x in x0..=x1 {
                        let on_ring = x + ring == cx || x == cx + ring || y + ring == cy || y == cy + ring;
                        if !on_ring {
                            continue;
                        }
                        for &j in grid.cell(x, y) {
                            if j != i {
                                cands.push(Candidate {
                                    sq: (p[0] - points[j][0]).powi(2) + (p[1] - points[j][1]).powi(2),
                                    index: j,
                                });
                            }
                        }
                    }
                }
                let covered_all = x0 == 0 && y0 == 0 && x1 == grid.dims[0] - 1 && y1 == grid.dims[1] - 1;
                if cands.len() >= k {
                    // Every point outside the scanned block is at least this far away.
                    let lo = [0, 1].map(|d| {
                        let c = [cx, cy][d];
                        let inner = if c < ring + 1 {
                            f64::INFINITY
                        } else {
                            p[d] - (grid.min[d] + (c - ring) as f64 * grid.cell)
                        };
                        let outer = if c + ring + 1 >= grid.dims[d] {
                            f64::INFINITY
                        } else {
                            grid.min[d] + ((c + ring + 1) as f64) * grid.cell - p[d]
                        };
                        inner.min(outer)
                    });
                    let bound = lo[0].min(lo[1]);
                    select_k(&mut cands, k, content);
                    let kth = cands[k - 1].sq;
                    if covered_all || kth * (1.0 + 1e-9) < bound * bound {
                        break;
                    }
                } else if covered_all {
                    break;
                }
                ring += 1;
            }
            select_k(&mut cands, k, content);
            cands
        })
        .collect();
    Ok(assemble(n, k, rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn collinear_hand_case() {
        let pts = [[0.0, 0.0], [1.0, 0.0], [3.0, 0.0], [7.0, 0.0]];
        let g = knn_coords(&pts, 2).unwrap();
        assert_eq!(g.neighbors(0), &[1, 2]);
        assert_eq!(g.neighbors(3), &[2, 1]);
        assert_eq!(g.neighbor_distances(3), &[4.0, 6.0]);
    }

    #[test]
    fn complete_graph_when_n_is_k_plus_one() {
        let pts = [[0.0, 0.0], [5.0, 1.0], [2.0, 9.0], [4.0, 4.0]];
        let g = knn_coords(&pts, 3).unwrap();
        for i in 0..4 {
            let mut row = g.neighbors(i).to_vec();
            row.sort_unstable();
            let expect: Vec<usize> = (0..4).filter(|&j| j != i).collect();
            assert_eq!(row, expect);
        }
    }

    #[test]
    fn too_few_points() {
        assert!(knn_coords(&[[0.0, 0.0], [1.0, 1.0]], 2).is_err());
        assert!(knn_features(&[0.0; 6], 2, 3).is_err());
        assert!(knn_features(&[0.0; 5], 2, 1).is_err());
    }

    #[test]
    fn equal_distance_tie_uses_content() {
        // (1,0) and (-1,0) are equidistant from the origin; (-1,0) sorts first.
        let pts = [[0.0, 0.0], [1.0, 0.0], [-1.0, 0.0], [0.0, 5.0]];
        assert_eq!(knn_coords(&pts, 1).unwrap().neighbors(0), &[2]);
        let swapped = [[0.0, 0.0], [-1.0, 0.0], [1.0, 0.0], [0.0, 5.0]];
        assert_eq!(knn_coords(&swapped, 1).unwrap().neighbors(0), &[1]);
    }
}
