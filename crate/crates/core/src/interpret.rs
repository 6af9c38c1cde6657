//! What a trained model relies on: association-vector magnitudes per
//! category pair, and permutation importance of neighborhood signatures.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use samc_tensor::{rng, Adam, Tape, Tensor, Var};

use crate::error::{contract, invalid, Result};
use crate::model::{argmax, eval_view, prepare, ModelParams};
use crate::pointset::{CategoryVocabulary, Dataset};
use crate::spatial_graph::NeighborGraph;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum VectorNorm {
    L1,
    #[default]
    L2,
}

/// Symmetric `g × g` importances normalized to a maximum of 1.
#[derive(Clone, Debug, PartialEq)]
pub struct PairImportanceMatrix {
    pub layer: usize,
    pub g: usize,
    /// Row-major `g × g`.
    pub values: Vec<f64>,
}

impl PairImportanceMatrix {
    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.values[a * self.g + b]
    }

    /// Off-diagonal entries of the upper triangle.
    pub fn off_diagonal(&self) -> Vec<f64> {
        (0..self.g)
            .flat_map(|a| ((a + 1)..self.g).map(move |b| (a, b)))
            .map(|(a, b)| self.get(a, b))
            .collect()
    }
}

/// Norm of every association vector at `layer`, averaged over heads and
/// divided by the largest entry.
pub fn pair_importance(params: &ModelParams, layer: usize, norm: VectorNorm) -> Result<PairImportanceMatrix> {
    let layers = params.layout.layers.len();
    if layer >= layers {
        return contract(format!("layer {layer} out of range; the model has {layers}"));
    }
    let g = params.num_categories;
    let heads = params.layout.layers[layer].heads.len();
    let mut values = vec![0.0; g * g];
    for h in 0..heads {
        let table = params.pair_table(layer, h);
        for a in 0..g {
            for b in 0..g {
                let v = table.lookup(a, b)?;
                let n = match norm {
                    VectorNorm::L1 => v.iter().map(|x| x.abs()).sum::<f64>(),
                    VectorNorm::L2 => v.iter().map(|x| x * x).sum::<f64>().sqrt(),
                };
                values[a * g + b] += n / heads as f64;
            }
        }
    }
    let max = values.iter().copied().fold(0.0, f64::max);
    if !(max > 0.0) {
        return contract("every association vector is zero; importances are undefined");
    }
    values.iter_mut().for_each(|v| *v /= max);
    Ok(PairImportanceMatrix { layer, g, values })
}

/// `layer,cat_a,cat_b,importance` for every ordered category pair; layers are
/// numbered from 1.
pub fn pair_importance_csv(matrices: &[PairImportanceMatrix], vocab: &CategoryVocabulary) -> String {
    let mut s = String::from("layer,cat_a,cat_b,importance\n");
    for m in matrices {
        for a in 0..m.g {
            for b in 0..m.g {
                s.push_str(&format!(
                    "{},{},{},{}\n",
                    m.layer + 1,
                    vocab.name(a).unwrap_or("?"),
                    vocab.name(b).unwrap_or("?"),
                    m.get(a, b)
                ));
            }
        }
    }
    s
}

/// A center category and the set of distinct categories among its neighbors.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NWaySignature {
    pub center: usize,
    pub neighbors: BTreeSet<usize>,
}

impl NWaySignature {
    pub fn contains_pair(&self, a: usize, b: usize) -> bool {
        (self.center == a && self.neighbors.contains(&b)) || (self.center == b && self.neighbors.contains(&a))
    }

    pub fn neighbor_names(&self, vocab: &CategoryVocabulary) -> String {
        self.neighbors
            .iter()
            .map(|&c| vocab.name(c).unwrap_or("?"))
            .collect::<Vec<_>>()
            .join(";")
    }
}

/// Which neighborhood defines a point's signature.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum SignatureGraph {
    /// The graph the last layer pooled over.
    #[default]
    LastLayer,
    /// The coordinate-space graph.
    Coordinates,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NwayFeatures {
    /// Every signature observed in the dataset, sorted.
    pub signatures: Vec<NWaySignature>,
    /// Embedding width of one signature block.
    pub width: usize,
    /// Per sample, the concatenated signature blocks.
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub classes: usize,
}

fn signatures_of(graph: &NeighborGraph, categories: &[usize]) -> Vec<NWaySignature> {
    (0..graph.n)
        .map(|i| NWaySignature {
            center: categories[i],
            neighbors: graph.neighbors(i).iter().map(|&j| categories[j]).collect(),
        })
        .collect()
}

/// Per-sample map from signature to the mean last-layer embedding of the
/// points carrying it.
pub fn nway_maps(
    params: &ModelParams,
    data: &Dataset,
    graph: SignatureGraph,
    num_points: usize,
    seed: u64,
) -> Result<(Vec<BTreeMap<NWaySignature, Vec<f64>>>, usize)> {
    let mut maps = Vec::with_capacity(data.len());
    let mut width = 0;
    for p in &data.patterns {
        let view = eval_view(p, num_points, seed);
        let prepared = prepare(&view, &params.config, params.num_categories)?;
        let mut tape = Tape::new();
        let f = params.eval_forward(&mut tape, &prepared)?;
        let last = *f.layer_outputs.last().expect("at least one layer");
        width = tape.shape(last)[1];
        let emb = tape.data(last);
        let g = match graph {
            SignatureGraph::LastLayer => &f.graphs.last().expect("at least one layer")[0],
            SignatureGraph::Coordinates => &prepared.graph,
        };
        let mut sums: BTreeMap<NWaySignature, (Vec<f64>, usize)> = BTreeMap::new();
        for (i, sig) in signatures_of(g, &prepared.categories).into_iter().enumerate() {
            let e = sums.entry(sig).or_insert_with(|| (vec![0.0; width], 0));
            for (acc, v) in e.0.iter_mut().zip(&emb[i * width..(i + 1) * width]) {
                *acc += v;
            }
            e.1 += 1;
        }
        maps.push(
            sums.into_iter()
                .map(|(s, (v, c))| (s, v.into_iter().map(|x| x / c as f64).collect()))
                .collect(),
        );
    }
    Ok((maps, width))
}

/// Fixed-layout feature matrix over every signature seen in `data`; absent
/// signatures contribute zero blocks.
pub fn nway_features(
    params: &ModelParams,
    data: &Dataset,
    graph: SignatureGraph,
    num_points: usize,
    seed: u64,
) -> Result<NwayFeatures> {
    let (maps, width) = nway_maps(params, data, graph, num_points, seed)?;
    let signatures: Vec<NWaySignature> = maps
        .iter()
        .flat_map(|m| m.keys().cloned())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let rows = maps
        .iter()
        .map(|m| {
            let mut row = vec![0.0; signatures.len() * width];
            for (s, v) in m {
                let b = signatures.binary_search(s).expect("collected above");
                row[b * width..(b + 1) * width].copy_from_slice(v);
            }
            row
        })
        .collect();
    Ok(NwayFeatures {
        signatures,
        width,
        rows,
        labels: data.labels(),
        classes: data.num_classes(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct RankedRelationship {
    pub signature: NWaySignature,
    pub accuracy_drop: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RelationshipRanking {
    /// Sorted by descending accuracy drop.
    pub entries: Vec<RankedRelationship>,
    /// Held-out accuracy of the unshuffled probe.
    pub probe_accuracy: f64,
}

impl RelationshipRanking {
    /// `rank,center,neighbors,accuracy_drop` for the first `top` entries.
    pub fn to_csv(&self, vocab: &CategoryVocabulary, top: usize) -> String {
        let mut s = String::from("rank,center,neighbors,accuracy_drop\n");
        for (r, e) in self.entries.iter().take(top).enumerate() {
            s.push_str(&format!(
                "{},{},{},{}\n",
                r + 1,
                vocab.name(e.signature.center).unwrap_or("?"),
                e.signature.neighbor_names(vocab),
                e.accuracy_drop
            ));
        }
        s
    }
}

pub const PERMUTATION_REPEATS: usize = 10;
pub const PROBE_HOLDOUT: f64 = 0.3;
const PROBE_EPOCHS: usize = 300;
const PROBE_LR: f64 = 1e-2;

/// Softmax-regression probe over standardized features.
#[derive(Clone, Debug)]
pub struct LogisticProbe {
    mean: Vec<f64>,
    std: Vec<f64>,
    w: Tensor,
    b: Tensor,
    classes: usize,
}

impl LogisticProbe {
    pub fn fit(x: &[Vec<f64>], y: &[usize], classes: usize, seed: u64) -> Result<Self> {
        let f = x.first().map_or(0, Vec::len);
        if x.is_empty() || f == 0 {
            return contract("probe needs a non-empty feature matrix");
        }
        let n = x.len() as f64;
        let mean: Vec<f64> = (0..f).map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n).collect();
        let std: Vec<f64> = (0..f)
            .map(|j| {
                let v = x.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n;
                if v > 1e-24 { v.sqrt() } else { 1.0 }
            })
            .collect();
        let mut probe = Self {
            mean,
            std,
            w: samc_tensor::init::uniform(&[f, classes], 1e-3, &mut rng::stream(seed, "probe/init")),
            b: Tensor::zeros(&[classes]).with_grad(),
            classes,
        };
        let xs = probe.standardize(x);
        let mut adam = Adam::new(PROBE_LR);
        for _ in 0..PROBE_EPOCHS {
            let mut tape = Tape::new();
            let xv = tape.constant(Tensor::matrix(x.len(), f, xs.clone())?);
            let (wv, bv) = (tape.param(&probe.w), tape.param(&probe.b));
            let logits = Self::logits_on(&mut tape, xv, wv, bv)?;
            let loss = tape.cross_entropy(logits, y)?;
            tape.backward(loss)?;
            probe.w.set_grad(tape.grad(wv).expect("param").to_vec())?;
            probe.b.set_grad(tape.grad(bv).expect("param").to_vec())?;
            adam.step(&mut [&mut probe.w, &mut probe.b])?;
        }
        Ok(probe)
    }

    fn logits_on(tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = tape.matmul(x, w)?;
        Ok(tape.add_row(y, b)?)
    }

    fn standardize(&self, x: &[Vec<f64>]) -> Vec<f64> {
        x.iter()
            .flat_map(|r| r.iter().zip(&self.mean).zip(&self.std).map(|((v, m), s)| (v - m) / s))
            .collect()
    }

    pub fn predict(&self, x: &[Vec<f64>]) -> Result<Vec<usize>> {
        let f = self.mean.len();
        let mut tape = Tape::new();
        let xv = tape.constant(Tensor::matrix(x.len(), f, self.standardize(x))?);
        let wv = tape.constant(self.w.clone());
        let bv = tape.constant(self.b.clone());
        let out = Self::logits_on(&mut tape, xv, wv, bv)?;
        Ok(tape.data(out).chunks(self.classes).map(argmax).collect())
    }

    pub fn accuracy(&self, x: &[Vec<f64>], y: &[usize]) -> Result<f64> {
        let p = self.predict(x)?;
        Ok(p.iter().zip(y).filter(|(a, b)| a == b).count() as f64 / y.len() as f64)
    }
}

/// Copy of `x` with columns `block` of row `r` taken from row `perm[r]`.
pub fn permute_block(x: &[Vec<f64>], block: std::ops::Range<usize>, perm: &[usize]) -> Vec<Vec<f64>> {
    x.iter()
        .enumerate()
        .map(|(r, row)| {
            let mut out = row.clone();
            out[block.clone()].copy_from_slice(&x[perm[r]][block.clone()]);
            out
        })
        .collect()
}

/// Stratified train/held-out indices.
fn holdout_split(labels: &[usize], classes: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for c in 0..classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        members.shuffle(&mut rng::indexed_stream(seed, "probe/split", c as u64));
        let n_test = ((members.len() as f64 * PROBE_HOLDOUT).round() as usize).clamp(
            usize::from(members.len() > 1),
            members.len().saturating_sub(1),
        );
        test.extend_from_slice(&members[..n_test]);
        train.extend_from_slice(&members[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

/// Fits a logistic probe and ranks every signature block by the mean
/// held-out accuracy drop over [`PERMUTATION_REPEATS`] shuffles.
pub fn rank_by_permutation(features: &NwayFeatures, seed: u64) -> Result<RelationshipRanking> {
    let n = features.rows.len();
    if n < 10 {
        return invalid(format!("permutation ranking needs at least 10 samples, got {n}"));
    }
    let present: BTreeSet<usize> = features.labels.iter().copied().collect();
    if present.len() < 2 {
        return invalid("permutation ranking needs at least two classes");
    }
    let (train_idx, test_idx) = holdout_split(&features.labels, features.classes, seed);
    let pick = |idx: &[usize]| -> (Vec<Vec<f64>>, Vec<usize>) {
        (
            idx.iter().map(|&i| features.rows[i].clone()).collect(),
            idx.iter().map(|&i| features.labels[i]).collect(),
        )
    };
    let (xtr, ytr) = pick(&train_idx);
    let (xte, yte) = pick(&test_idx);
    let probe = LogisticProbe::fit(&xtr, &ytr, features.classes, seed)?;
    let base = probe.accuracy(&xte, &yte)?;
    let w = features.width;
    let mut entries = Vec::with_capacity(features.signatures.len());
    for (s, sig) in features.signatures.iter().enumerate() {
        let mut total = 0.0;
        for rep in 0..PERMUTATION_REPEATS {
            let mut perm: Vec<usize> = (0..xte.len()).collect();
            perm.shuffle(&mut rng::indexed_stream(
                seed,
                &format!("probe/perm{s}"),
                rep as u64,
            ));
            total += probe.accuracy(&permute_block(&xte, s * w..(s + 1) * w, &perm), &yte)?;
        }
        entries.push(RankedRelationship {
            signature: sig.clone(),
            accuracy_drop: base - total / PERMUTATION_REPEATS as f64,
        });
    }
    // Stable: equal drops keep signature order.
    entries.sort_by(|a, b| b.accuracy_drop.total_cmp(&a.accuracy_drop));
    Ok(RelationshipRanking {
        entries,
        probe_accuracy: base,
    })
}
