use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use samc_tensor::{rng, Adam, Tape, Tensor};

use super::config::{ModelConfig, TrainConfig};
use super::metrics::Metrics;
use super::network::{argmax, prepare, PreparedPattern};
use super::params::ModelParams;
use crate::error::{contract, Error, Result};
use crate::pointset::{augment, sample_points, Dataset, PointPattern};

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept.
    pub best_epoch: usize,
}

impl History {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_accuracy\n");
        for r in &self.epochs {
            s.push_str(&format!("{},{},{}\n", r.epoch, r.train_loss, r.val_accuracy));
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_csv().as_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// Patterns larger than `num_points` are subsampled; smaller ones are kept whole.
pub fn eval_view(pattern: &PointPattern, num_points: usize, seed: u64) -> PointPattern {
    if pattern.len() > num_points {
        sample_points(pattern, num_points, seed)
    } else {
        pattern.clone()
    }
}

/// Shuffled minibatches; a trailing batch of one joins the previous batch so
/// batch statistics are never taken over a single sample.
fn batches(n: usize, size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::indexed_stream(seed, "shuffle", epoch as u64));
    let mut out: Vec<Vec<usize>> = order.chunks(size).map(<[usize]>::to_vec).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
        let last = out.pop().expect("non-empty");
        out.last_mut().expect("non-empty").extend(last);
    }
    out
}

/// One optimizer step on `batch`; returns the batch loss.
pub fn train_step(
    params: &mut ModelParams,
    adam: &mut Adam,
    batch: &[&PreparedPattern],
    labels: &[usize],
    rng: &mut samc_tensor::rng::StreamRng,
) -> Result<f64> {
    let mut tape = Tape::new();
    let (fwd, vars) = params.forward(&mut tape, batch, true, rng)?;
    let loss = tape.cross_entropy(fwd.logits, labels)?;
    let value = tape.value(loss).item()?;
    tape.backward(loss)?;
    for (t, v) in params.tensors.iter_mut().zip(&vars) {
        let g = tape.grad(*v).map_or_else(|| vec![0.0; t.numel()], <[f64]>::to_vec);
        t.set_grad(g)?;
    }
    let mut refs: Vec<&mut Tensor> = params.tensors.iter_mut().collect();
    adam.step(&mut refs)?;
    Ok(value)
}

/// Trains a fresh model and returns the parameters with the best validation
/// accuracy (the later epoch on ties) together with the per-epoch history.
/// `on_epoch` sees every record as it is produced.
pub fn train(
    train: &Dataset,
    val: &Dataset,
    model: &ModelConfig,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(ModelParams, History)> {
    model.validate()?;
    cfg.validate()?;
    if train.is_empty() {
        return contract("training set is empty");
    }
    let data = if cfg.augment { augment(train) } else { train.clone() };
    let g = train.vocabulary.len();
    let mut params = ModelParams::new(model, g, train.num_classes(), cfg.seed)?;
    let mut adam = Adam::new(cfg.lr);
    adam.beta1 = cfg.beta1;

    let val_prepared: Vec<(PreparedPattern, usize)> = val
        .patterns
        .iter()
        .map(|p| Ok((prepare(&eval_view(p, cfg.num_points, cfg.seed), model, g)?, p.label)))
        .collect::<Result<_>>()?;

    let mut history = History::default();
    let mut best: Option<(f64, ModelParams)> = None;
    let mut step = 0u64;
    for epoch in 1..=cfg.epochs {
        let sample_seed = rng::derive_seed(cfg.seed, &format!("epoch{epoch}"));
        let (mut loss_sum, mut count) = (0.0, 0usize);
        for idx in batches(data.len(), cfg.batch_size, cfg.seed, epoch) {
            let prepared = idx
                .iter()
                .map(|&i| prepare(&sample_points(&data.patterns[i], cfg.num_points, sample_seed), model, g))
                .collect::<Result<Vec<_>>>()?;
            let refs: Vec<&PreparedPattern> = prepared.iter().collect();
            let labels: Vec<usize> = idx.iter().map(|&i| data.patterns[i].label).collect();
            let mut drop_rng = rng::indexed_stream(cfg.seed, "dropout", step);
            let loss = train_step(&mut params, &mut adam, &refs, &labels, &mut drop_rng)?;
            loss_sum += loss * idx.len() as f64;
            count += idx.len();
            step += 1;
        }
        let val_accuracy = if val_prepared.is_empty() {
            0.0
        } else {
            let mut correct = 0;
            for (p, label) in &val_prepared {
                let mut tape = Tape::new();
                let f = params.eval_forward(&mut tape, p)?;
                correct += usize::from(argmax(tape.data(f.logits)) == *label);
            }
            correct as f64 / val_prepared.len() as f64
        };
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / count as f64,
            val_accuracy,
        };
        on_epoch(&record);
        history.epochs.push(record);
        if best.as_ref().is_none_or(|(acc, _)| val_accuracy >= *acc) {
            best = Some((val_accuracy, params.clone()));
            history.best_epoch = epoch;
        }
    }
    let (_, mut best) = best.expect("at least one epoch");
    for t in &mut best.tensors {
        t.zero_grad();
    }
    Ok((best, history))
}

/// Eval-mode metrics over `data`, timing each forward pass.
pub fn evaluate(data: &Dataset, params: &ModelParams, num_points: usize, seed: u64) -> Result<Metrics> {
    let mut labels = Vec::with_capacity(data.len());
    let mut preds = Vec::with_capacity(data.len());
    let mut seconds = 0.0;
    for p in &data.patterns {
        let view = eval_view(p, num_points, seed);
        let start = Instant::now();
        let pred = params.predict(&view)?;
        seconds += start.elapsed().as_secs_f64();
        labels.push(p.label);
        preds.push(pred);
    }
    let mut m = Metrics::from_predictions(&labels, &preds, params.num_classes)?;
    m.per_sample_seconds = if data.is_empty() { 0.0 } else { seconds / data.len() as f64 };
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batches_cover_everything_without_singletons() {
        let b = batches(15, 7, 3, 1);
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![7, 8]);
        let mut all: Vec<usize> = b.concat();
        all.sort_unstable();
        assert_eq!(all, (0..15).collect::<Vec<_>>());
        assert_eq!(batches(1, 7, 0, 1), vec![vec![0]]);
    }
}
