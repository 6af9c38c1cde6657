use rand::Rng;
use samc_tensor::{init, rng, BatchNormStats, Tensor};

use super::config::ModelConfig;
use crate::error::{contract, invalid, Result};

/// Association tables start near zero so that their trained norms reflect
/// learned structure rather than the draw.
const TABLE_INIT_SCALE: f64 = 1e-2;

/// Index of the unordered pair `{a, b}` in a table of `g(g+1)/2` rows.
pub fn pair_index(a: usize, b: usize) -> usize {
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    hi * (hi + 1) / 2 + lo
}

pub fn pair_count(g: usize) -> usize {
    g * (g + 1) / 2
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BnSlot {
    pub gamma: usize,
    pub beta: usize,
    pub stats: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HeadSlot {
    pub w: usize,
    pub table: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerSlot {
    pub theta: usize,
    pub phi: usize,
    pub bn: Option<BnSlot>,
    pub heads: Vec<HeadSlot>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DenseSlot {
    pub w: usize,
    pub bn: Option<BnSlot>,
}

/// Positions of every parameter in [`ModelParams::tensors`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout {
    pub layers: Vec<LayerSlot>,
    pub emb: DenseSlot,
    pub hidden: Vec<DenseSlot>,
    pub out_w: usize,
    pub out_b: usize,
}

enum Init {
    Weight(usize),
    Ones,
    Zeros,
    Table(usize),
}

struct Builder {
    names: Vec<String>,
    shapes: Vec<Vec<usize>>,
    inits: Vec<Init>,
    bn_channels: Vec<usize>,
}

impl Builder {
    fn push(&mut self, name: String, shape: Vec<usize>, init: Init) -> usize {
        self.names.push(name);
        self.shapes.push(shape);
        self.inits.push(init);
        self.names.len() - 1
    }

    fn weight(&mut self, name: String, fan_in: usize, fan_out: usize) -> usize {
        self.push(name, vec![fan_in, fan_out], Init::Weight(fan_in))
    }

    fn bn(&mut self, prefix: &str, channels: usize, enabled: bool) -> Option<BnSlot> {
        enabled.then(|| {
            let gamma = self.push(format!("{prefix}.bn.gamma"), vec![channels], Init::Ones);
            let beta = self.push(format!("{prefix}.bn.beta"), vec![channels], Init::Zeros);
            self.bn_channels.push(channels);
            BnSlot {
                gamma,
                beta,
                stats: self.bn_channels.len() - 1,
            }
        })
    }
}

/// Every trainable tensor of a model plus its batch-norm running statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub num_categories: usize,
    pub num_classes: usize,
    pub names: Vec<String>,
    pub tensors: Vec<Tensor>,
    pub bn: Vec<BatchNormStats>,
    pub layout: Layout,
}

/// Read-only view of one layer/head association table.
#[derive(Clone, Copy, Debug)]
pub struct PairTable<'a> {
    table: &'a Tensor,
    g: usize,
}

impl<'a> PairTable<'a> {
    pub fn num_categories(&self) -> usize {
        self.g
    }

    pub fn width(&self) -> usize {
        self.table.shape()[1]
    }

    /// The stored vector for `{a, b}`; `(a, b)` and `(b, a)` share storage.
    pub fn lookup(&self, a: usize, b: usize) -> Result<&'a [f64]> {
        if a >= self.g || b >= self.g {
            return contract(format!("category pair ({a}, {b}) outside vocabulary of {}", self.g));
        }
        let w = self.width();
        let r = pair_index(a, b);
        Ok(&self.table.data()[r * w..(r + 1) * w])
    }
}

impl ModelParams {
    /// Freshly initialized parameters for `g` categories and `classes` classes.
    pub fn new(config: &ModelConfig, g: usize, classes: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        if g == 0 || classes < 2 {
            return invalid(format!("model needs ≥ 1 category and ≥ 2 classes, got {g} and {classes}"));
        }
        let mut b = Builder {
            names: Vec::new(),
            shapes: Vec::new(),
            inits: Vec::new(),
            bn_channels: Vec::new(),
        };
        let mut layers = Vec::with_capacity(config.widths.len());
        let mut input = 0;
        for (l, &d) in config.widths.iter().enumerate() {
            let p = format!("layer{l}");
            let (local_in, global_in) = if l == 0 {
                (config.first_local_dim(), 2)
            } else {
                (input, input)
            };
            let theta = b.weight(format!("{p}.theta"), local_in, d);
            let phi = b.weight(format!("{p}.phi"), global_in, d);
            let bn = b.bn(&p, d, config.batch_norm);
            let heads = (0..config.heads)
                .map(|h| HeadSlot {
                    w: b.weight(format!("{p}.head{h}.w"), d, d),
                    table: b.push(format!("{p}.head{h}.pairs"), vec![pair_count(g), d], Init::Table(d)),
                })
                .collect();
            layers.push(LayerSlot { theta, phi, bn, heads });
            input = config.layer_output(l);
        }
        let concat: usize = (0..config.widths.len()).map(|l| config.layer_output(l)).sum();
        let emb = DenseSlot {
            w: b.weight("emb.w".into(), concat, config.emb_dims),
            bn: b.bn("emb", config.emb_dims, config.batch_norm),
        };
        let mut width = 2 * config.emb_dims;
        let mut hidden = Vec::with_capacity(config.head_widths.len());
        for (i, &h) in config.head_widths.iter().enumerate() {
            let p = format!("fc{i}");
            hidden.push(DenseSlot {
                w: b.weight(format!("{p}.w"), width, h),
                bn: b.bn(&p, h, config.batch_norm),
            });
            width = h;
        }
        let out_w = b.weight("out.w".into(), width, classes);
        let out_b = b.push("out.b".into(), vec![classes], Init::Zeros);

        let mut r = rng::stream(seed, "init");
        let tensors = b
            .shapes
            .iter()
            .zip(&b.inits)
            .map(|(shape, init)| match *init {
                Init::Weight(fan_in) => init::uniform_weight(fan_in, shape[1], &mut r),
                Init::Table(d) => init::uniform(shape, TABLE_INIT_SCALE / (d as f64).sqrt(), &mut r),
                Init::Ones => Tensor::full(shape, 1.0).with_grad(),
                Init::Zeros => Tensor::zeros(shape).with_grad(),
            })
            .collect();
        Ok(Self {
            config: config.clone(),
            num_categories: g,
            num_classes: classes,
            names: b.names,
            tensors,
            bn: b.bn_channels.into_iter().map(BatchNormStats::new).collect(),
            layout: Layout {
                layers,
                emb,
                hidden,
                out_w,
                out_b,
            },
        })
    }

    pub fn pair_table(&self, layer: usize, head: usize) -> PairTable<'_> {
        PairTable {
            table: &self.tensors[self.layout.layers[layer].heads[head].table],
            g: self.num_categories,
        }
    }

    /// Indices of every association table, for perturbation tests and probes.
    pub fn table_indices(&self) -> Vec<usize> {
        self.layout
            .layers
            .iter()
            .flat_map(|l| l.heads.iter().map(|h| h.table))
            .collect()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    /// Adds uniform noise of half-width `amount` to every association table.
    pub fn perturb_tables<R: Rng>(&mut self, amount: f64, rng: &mut R) {
        for i in self.table_indices() {
            for v in self.tensors[i].data_mut() {
                *v += rng.random_range(-amount..amount);
            }
        }
    }
}
