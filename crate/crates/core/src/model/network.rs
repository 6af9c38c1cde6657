//! Forward pass: EdgeConv layers on dynamic graphs, category-pair
//! prioritization, shared embedding, global pooling, and the classifier head.

use rand::Rng;
use samc_tensor::{BatchNormStats, Tape, Tensor, Var, LEAKY_SLOPE};

use super::config::{HeadAggregation, ModelConfig, PrioritizationMode};
use super::params::{pair_index, BnSlot, ModelParams};
use crate::error::{contract, Result};
use crate::lrfc;
use crate::pointset::PointPattern;
use crate::spatial_graph::{knn_coords, knn_features, NeighborGraph};

/// A pattern with its coordinate graph and first-layer inputs precomputed.
#[derive(Clone, Debug)]
pub struct PreparedPattern {
    pub n: usize,
    pub categories: Vec<usize>,
    /// Centered coordinates divided by their RMS radius, `n × 2`.
    pub global: Vec<f64>,
    /// Coordinate-space graph.
    pub graph: NeighborGraph,
    /// First-layer local term per edge, `n·k × local_dim`.
    pub local: Vec<f64>,
}

/// Builds the first-layer inputs of `pattern` under `cfg`.
pub fn prepare(pattern: &PointPattern, cfg: &ModelConfig, g: usize) -> Result<PreparedPattern> {
    let n = pattern.len();
    if n <= cfg.k {
        return contract(format!(
            "pattern {} has {n} points; k = {} needs at least {}",
            pattern.sample_id,
            cfg.k,
            cfg.k + 1
        ));
    }
    let categories = pattern.categories();
    if let Some(&c) = categories.iter().find(|&&c| c >= g) {
        return contract(format!("category id {c} outside vocabulary of {g}"));
    }
    let coords = pattern.coords();
    let graph = knn_coords(&coords, cfg.k)?;
    let [cx, cy] = pattern.centroid();
    let ms = coords
        .iter()
        .map(|p| (p[0] - cx).powi(2) + (p[1] - cy).powi(2))
        .sum::<f64>()
        / n as f64;
    let scale = if ms > 0.0 { 1.0 / ms.sqrt() } else { 1.0 };
    let global: Vec<f64> = coords
        .iter()
        .flat_map(|p| [(p[0] - cx) * scale, (p[1] - cy) * scale])
        .collect();
    let centers = graph.centers();
    let local = if cfg.use_lrfc {
        let pe = lrfc::encode_all(&coords, &cfg.lrfc);
        let d = cfg.lrfc.dim();
        let mut out = Vec::with_capacity(graph.num_edges() * d);
        for (&i, &j) in centers.iter().zip(&graph.indices) {
            let (a, b) = (&pe[i * d..(i + 1) * d], &pe[j * d..(j + 1) * d]);
            out.extend(a.iter().zip(b).map(|(u, v)| (u - v).abs()));
        }
        out
    } else {
        let mut out = Vec::with_capacity(graph.num_edges() * 2);
        for (&i, &j) in centers.iter().zip(&graph.indices) {
            out.push((global[2 * i] - global[2 * j]).abs());
            out.push((global[2 * i + 1] - global[2 * j + 1]).abs());
        }
        out
    };
    Ok(PreparedPattern {
        n,
        categories,
        global,
        graph,
        local,
    })
}

/// Edge endpoints of a stacked batch, center-major.
#[derive(Clone, Debug, Default)]
pub struct EdgeIndex {
    pub k: usize,
    pub centers: Vec<usize>,
    pub neighbors: Vec<usize>,
}

impl EdgeIndex {
    fn from_graphs(graphs: &[NeighborGraph], offsets: &[usize]) -> Self {
        let k = graphs.first().map_or(0, |g| g.k);
        let mut centers = Vec::new();
        let mut neighbors = Vec::new();
        for (g, &off) in graphs.iter().zip(offsets) {
            for i in 0..g.n {
                for &j in g.neighbors(i) {
                    centers.push(off + i);
                    neighbors.push(off + j);
                }
            }
        }
        Self {
            k,
            centers,
            neighbors,
        }
    }

    pub fn num_edges(&self) -> usize {
        self.centers.len()
    }
}

/// Association-table row of every edge for each indexing rule.
#[derive(Clone, Debug, Default)]
pub struct EdgePairs {
    pub pair: Vec<usize>,
    pub center: Vec<usize>,
    pub neighbor: Vec<usize>,
}

impl EdgePairs {
    pub fn new(edges: &EdgeIndex, categories: &[usize], g: usize) -> Result<Self> {
        if let Some(&c) = categories.iter().find(|&&c| c >= g) {
            return contract(format!("category id {c} outside vocabulary of {g}"));
        }
        let mut out = Self::default();
        for (&i, &j) in edges.centers.iter().zip(&edges.neighbors) {
            let (fi, fj) = (categories[i], categories[j]);
            out.pair.push(pair_index(fi, fj));
            out.center.push(pair_index(fi, fi));
            out.neighbor.push(pair_index(fj, fj));
        }
        Ok(out)
    }
}

/// Optional batch normalization followed by leaky ReLU.
fn bn_leaky(
    tape: &mut Tape,
    x: Var,
    bn: Option<(Var, Var, &mut BatchNormStats)>,
    training: bool,
) -> Result<Var> {
    let x = match bn {
        Some((gamma, beta, stats)) => tape.batch_norm(x, gamma, beta, stats, training)?,
        None => x,
    };
    Ok(tape.leaky_relu(x, LEAKY_SLOPE)?)
}

/// First layer: `σ(θ·local_ij + φ·global_i)` per edge, where `local` is
/// already laid out per edge (`E × d_local`) and `global` per point.
pub fn edge_conv_first(
    tape: &mut Tape,
    local: Var,
    global: Var,
    edges: &EdgeIndex,
    theta: Var,
    phi: Var,
    bn: Option<(Var, Var, &mut BatchNormStats)>,
    training: bool,
) -> Result<Var> {
    let t = tape.matmul(local, theta)?;
    let g = tape.matmul(global, phi)?;
    let g = tape.index_select(g, &edges.centers)?;
    let e = tape.add(t, g)?;
    bn_leaky(tape, e, bn, training)
}

/// Later layers: `σ(θ·(h_j − h_i) + φ·h_i)` per edge.
pub fn edge_conv_generic(
    tape: &mut Tape,
    h: Var,
    edges: &EdgeIndex,
    theta: Var,
    phi: Var,
    bn: Option<(Var, Var, &mut BatchNormStats)>,
    training: bool,
) -> Result<Var> {
    // θ is linear, so project once per point and difference the projections.
    let a = tape.matmul(h, theta)?;
    let b = tape.matmul(h, phi)?;
    let aj = tape.index_select(a, &edges.neighbors)?;
    let ai = tape.index_select(a, &edges.centers)?;
    let bi = tape.index_select(b, &edges.centers)?;
    let d = tape.sub(aj, ai)?;
    let e = tape.add(d, bi)?;
    bn_leaky(tape, e, bn, training)
}

fn edge_scores(tape: &mut Tape, we: Var, table: Var, rows: &[usize]) -> Result<Var> {
    let a = tape.index_select(table, rows)?;
    let prod = tape.mul(we, a)?;
    Ok(tape.sum(prod, 1)?)
}

/// Per-center positions of the `keep` largest scores (ties to the earlier edge).
fn top_positions(scores: &[f64], k: usize, keep: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(scores.len() / k * keep);
    let mut order: Vec<usize> = Vec::with_capacity(k);
    for (c, row) in scores.chunks(k).enumerate() {
        order.clear();
        order.extend(0..k);
        order.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
        let mut kept: Vec<usize> = order[..keep].to_vec();
        kept.sort_unstable();
        out.extend(kept.into_iter().map(|p| c * k + p));
    }
    out
}

/// Output of one prioritization head.
pub struct Prioritized {
    /// Vertex embeddings, `N × d′`.
    pub vertices: Var,
    /// Normalized edge weights, `N × k′`, absent for the uniform mode.
    pub alpha: Option<Var>,
    /// Edge positions pooled per center when truncation is active.
    pub kept: Option<Vec<usize>>,
}

/// Scores every edge with its association vector, normalizes the scores over
/// each neighborhood, and pools the projected edges.
#[allow(clippy::too_many_arguments)]
pub fn prioritize(
    tape: &mut Tape,
    edges_feat: Var,
    k: usize,
    pairs: &EdgePairs,
    w: Var,
    table: Var,
    mode: PrioritizationMode,
    top_k: Option<usize>,
) -> Result<Prioritized> {
    let e = tape.shape(edges_feat)[0];
    let d = tape.shape(edges_feat)[1];
    if k == 0 || e % k != 0 {
        return contract(format!("{e} edges do not split into neighborhoods of {k}"));
    }
    let n = e / k;
    let we = tape.matmul(edges_feat, w)?;
    if mode == PrioritizationMode::None {
        let r = tape.reshape(we, &[n, k, d])?;
        let m = tape.mean(r, 1)?;
        let v = tape.leaky_relu(m, LEAKY_SLOPE)?;
        return Ok(Prioritized {
            vertices: v,
            alpha: None,
            kept: None,
        });
    }
    let score = match mode {
        PrioritizationMode::Pair => edge_scores(tape, we, table, &pairs.pair)?,
        PrioritizationMode::SelfPair => edge_scores(tape, we, table, &pairs.center)?,
        PrioritizationMode::Neighbor => edge_scores(tape, we, table, &pairs.neighbor)?,
        PrioritizationMode::SelfNeighbor => {
            let a = edge_scores(tape, we, table, &pairs.center)?;
            let b = edge_scores(tape, we, table, &pairs.neighbor)?;
            tape.add(a, b)?
        }
        PrioritizationMode::None => unreachable!(),
    };
    let score = tape.leaky_relu(score, LEAKY_SLOPE)?;
    let (score, we, kk, kept) = match top_k {
        Some(keep) if keep < k => {
            let kept = top_positions(tape.data(score), k, keep);
            let s = tape.reshape(score, &[e, 1])?;
            let s = tape.index_select(s, &kept)?;
            let w2 = tape.index_select(we, &kept)?;
            (s, w2, keep, Some(kept))
        }
        _ => (score, we, k, None),
    };
    let s = tape.reshape(score, &[n, kk])?;
    let alpha = tape.softmax(s, 1)?;
    let flat = tape.reshape(alpha, &[n * kk])?;
    let weighted = tape.scale_rows(we, flat)?;
    let r = tape.reshape(weighted, &[n, kk, d])?;
    let pooled = tape.sum(r, 1)?;
    let pooled = tape.scale(pooled, 1.0 / kk as f64)?;
    let v = tape.leaky_relu(pooled, LEAKY_SLOPE)?;
    Ok(Prioritized {
        vertices: v,
        alpha: Some(alpha),
        kept,
    })
}

/// Runs one prioritization per head and aggregates them.
#[allow(clippy::too_many_arguments)]
pub fn multi_head(
    tape: &mut Tape,
    edges_feat: Var,
    k: usize,
    pairs: &EdgePairs,
    heads: &[(Var, Var)],
    agg: HeadAggregation,
    mode: PrioritizationMode,
    top_k: Option<usize>,
) -> Result<(Var, Vec<Prioritized>)> {
    if heads.is_empty() {
        return contract("multi_head needs at least one head");
    }
    let outs = heads
        .iter()
        .map(|&(w, table)| prioritize(tape, edges_feat, k, pairs, w, table, mode, top_k))
        .collect::<Result<Vec<_>>>()?;
    let vs: Vec<Var> = outs.iter().map(|o| o.vertices).collect();
    let v = if vs.len() == 1 {
        vs[0]
    } else {
        match agg {
            HeadAggregation::Concat => tape.concat(&vs, 1)?,
            HeadAggregation::Average => {
                let mut acc = vs[0];
                for &x in &vs[1..] {
                    acc = tape.add(acc, x)?;
                }
                tape.scale(acc, 1.0 / vs.len() as f64)?
            }
        }
    };
    Ok((v, outs))
}

/// Intermediate values of a forward pass.
pub struct Forward {
    /// Class logits, `B × classes`.
    pub logits: Var,
    /// Per layer, the graph of every pattern in the batch.
    pub graphs: Vec<Vec<NeighborGraph>>,
    /// Per layer, stacked vertex embeddings `N × width`.
    pub layer_outputs: Vec<Var>,
    /// Per layer, per head prioritization outputs.
    pub heads: Vec<Vec<Prioritized>>,
    /// Pooled global descriptor, `B × 2·emb_dims`.
    pub pooled: Var,
    /// First row of every pattern in the stacked point dimension.
    pub offsets: Vec<usize>,
}

fn bn_args<'a>(
    vars: &[Var],
    slot: Option<BnSlot>,
    stats: &'a mut [BatchNormStats],
) -> Option<(Var, Var, &'a mut BatchNormStats)> {
    slot.map(|s| (vars[s.gamma], vars[s.beta], &mut stats[s.stats]))
}

impl ModelParams {
    /// Binds every parameter to `tape` as a trainable leaf.
    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.tensors.iter().map(|t| tape.param(t)).collect()
    }

    /// Forward pass over a batch with parameters already on the tape.
    pub fn forward_with<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        stats: &mut [BatchNormStats],
        batch: &[&PreparedPattern],
        training: bool,
        rng: &mut R,
    ) -> Result<Forward> {
        let cfg = &self.config;
        if batch.is_empty() {
            return contract("forward on an empty batch");
        }
        if vars.len() != self.tensors.len() || stats.len() != self.bn.len() {
            return contract("parameter binding does not match the model layout");
        }
        let mut offsets = Vec::with_capacity(batch.len());
        let mut total = 0;
        for p in batch {
            offsets.push(total);
            total += p.n;
        }
        let categories: Vec<usize> = batch.iter().flat_map(|p| p.categories.iter().copied()).collect();
        let k = cfg.k;

        let mut graphs = Vec::with_capacity(cfg.widths.len());
        let mut layer_outputs = Vec::with_capacity(cfg.widths.len());
        let mut head_outputs = Vec::with_capacity(cfg.widths.len());
        let mut h: Option<Var> = None;
        for (l, slot) in self.layout.layers.iter().enumerate() {
            let layer_graphs: Vec<NeighborGraph> = match h {
                None => batch.iter().map(|p| p.graph.clone()).collect(),
                Some(hv) => {
                    let width = tape.shape(hv)[1];
                    let data = tape.data(hv);
                    batch
                        .iter()
                        .zip(&offsets)
                        .map(|(p, &off)| knn_features(&data[off * width..(off + p.n) * width], width, k))
                        .collect::<Result<_>>()?
                }
            };
            let edges = EdgeIndex::from_graphs(&layer_graphs, &offsets);
            let pairs = EdgePairs::new(&edges, &categories, self.num_categories)?;
            let bn = bn_args(vars, slot.bn, stats);
            let e = match h {
                None => {
                    let ld = cfg.first_local_dim();
                    let local: Vec<f64> = batch.iter().flat_map(|p| p.local.iter().copied()).collect();
                    let global: Vec<f64> = batch.iter().flat_map(|p| p.global.iter().copied()).collect();
                    let local = tape.constant(Tensor::matrix(edges.num_edges(), ld, local)?);
                    let global = tape.constant(Tensor::matrix(total, 2, global)?);
                    edge_conv_first(tape, local, global, &edges, vars[slot.theta], vars[slot.phi], bn, training)?
                }
                Some(hv) => edge_conv_generic(tape, hv, &edges, vars[slot.theta], vars[slot.phi], bn, training)?,
            };
            let heads: Vec<(Var, Var)> = slot.heads.iter().map(|hs| (vars[hs.w], vars[hs.table])).collect();
            let (v, outs) = multi_head(
                tape,
                e,
                k,
                &pairs,
                &heads,
                cfg.head_aggregation,
                cfg.prioritization,
                cfg.top_k,
            )?;
            debug_assert_eq!(l, layer_outputs.len());
            graphs.push(layer_graphs);
            layer_outputs.push(v);
            head_outputs.push(outs);
            h = Some(v);
        }

        let cat = if layer_outputs.len() == 1 {
            layer_outputs[0]
        } else {
            tape.concat(&layer_outputs, 1)?
        };
        let emb = tape.matmul(cat, vars[self.layout.emb.w])?;
        let emb = bn_leaky(tape, emb, bn_args(vars, self.layout.emb.bn, stats), training)?;

        let mut rows = Vec::with_capacity(batch.len());
        for (p, &off) in batch.iter().zip(&offsets) {
            let part = if batch.len() == 1 {
                emb
            } else {
                let idx: Vec<usize> = (off..off + p.n).collect();
                tape.index_select(emb, &idx)?
            };
            let mx = tape.max(part, 0)?;
            let mn = tape.mean(part, 0)?;
            let both = tape.concat(&[mx, mn], 0)?;
            rows.push(tape.reshape(both, &[1, 2 * cfg.emb_dims])?);
        }
        let pooled = if rows.len() == 1 { rows[0] } else { tape.concat(&rows, 0)? };

        let mut x = pooled;
        for slot in &self.layout.hidden {
            let y = tape.matmul(x, vars[slot.w])?;
            let y = bn_leaky(tape, y, bn_args(vars, slot.bn, stats), training)?;
            x = tape.dropout(y, cfg.dropout, training, rng)?;
        }
        let y = tape.matmul(x, vars[self.layout.out_w])?;
        let logits = tape.add_row(y, vars[self.layout.out_b])?;
        Ok(Forward {
            logits,
            graphs,
            layer_outputs,
            heads: head_outputs,
            pooled,
            offsets,
        })
    }

    /// Forward pass that binds the parameters itself. Training mode updates
    /// the running batch-norm statistics in place.
    pub fn forward<R: Rng + ?Sized>(
        &mut self,
        tape: &mut Tape,
        batch: &[&PreparedPattern],
        training: bool,
        rng: &mut R,
    ) -> Result<(Forward, Vec<Var>)> {
        let vars = self.bind(tape);
        let mut stats = self.bn.clone();
        let out = self.forward_with(tape, &vars, &mut stats, batch, training, rng)?;
        self.bn = stats;
        Ok((out, vars))
    }

    /// Eval-mode forward over one prepared pattern; leaves the model untouched.
    pub fn eval_forward(&self, tape: &mut Tape, pattern: &PreparedPattern) -> Result<Forward> {
        let mut stats = self.bn.clone();
        let mut rng = samc_tensor::rng::stream(0, "eval");
        let vars: Vec<Var> = self.tensors.iter().map(|t| tape.constant(t.clone())).collect();
        self.forward_with(tape, &vars, &mut stats, &[pattern], false, &mut rng)
    }

    /// Eval-mode logits of one pattern.
    pub fn logits(&self, pattern: &PointPattern) -> Result<Vec<f64>> {
        let prepared = prepare(pattern, &self.config, self.num_categories)?;
        let mut tape = Tape::new();
        let f = self.eval_forward(&mut tape, &prepared)?;
        Ok(tape.data(f.logits).to_vec())
    }

    pub fn predict(&self, pattern: &PointPattern) -> Result<usize> {
        Ok(argmax(&self.logits(pattern)?))
    }
}

/// Index of the largest value; the first one on ties.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate() {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn top_positions_keeps_largest_in_order() {
        let s = [0.1, 0.9, 0.5, 0.3, 0.3, 0.0];
        assert_eq!(top_positions(&s, 3, 2), vec![1, 2, 3, 4]);
    }
}
