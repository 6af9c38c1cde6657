use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use samc_tensor::Tape;
use samcnet::colocation::{
    features, fit_forest, fit_mlp, fit_tree, Classifier, ForestConfig, Measure, MlpConfig, ThresholdSet,
};
use samcnet::interpret::{
    nway_features, pair_importance, pair_importance_csv, rank_by_permutation, PairImportanceMatrix,
    RelationshipRanking, SignatureGraph, VectorNorm,
};
use samcnet::model::{
    self, eval_view, evaluate, prepare, Checkpoint, History, Metrics, ModelConfig, PrioritizationMode,
};
use samcnet::pointset::{generate_synthetic, split, write_csv, Dataset, PointPattern, SyntheticSpec};
use serde::Serialize;

use crate::config::{env_seed, load_dir, RunConfig, LABELS_FILE, POINTS_FILE};

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const HISTORY_FILE: &str = "history.csv";
pub const METRICS_FILE: &str = "metrics.json";
pub const ABLATION_FILE: &str = "ablation.csv";
pub const PAIR_IMPORTANCE_FILE: &str = "pair_importance.csv";
pub const RELATIONSHIPS_FILE: &str = "relationships.csv";
pub const BENCH_FILE: &str = "bench.json";
pub const SPEC_FILE: &str = "spec.json";

/// Progress sink; the binary prints to stderr, tests discard.
pub type Log<'a> = &'a mut dyn FnMut(&str);

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_file(path, text)
}

// ── generate ───────────────────────────────────────────────────────────

/// Writes `points.csv`, `labels.csv` and the spec actually used.
pub fn generate(spec_path: &Path, out: &Path, seed: Option<u64>) -> Result<Dataset> {
    let text = fs::read_to_string(spec_path).with_context(|| format!("reading {}", spec_path.display()))?;
    let mut spec: SyntheticSpec =
        serde_json::from_str(&text).with_context(|| format!("invalid spec {}", spec_path.display()))?;
    if let Some(s) = seed.or(env_seed()?) {
        spec.seed = s;
    }
    let data = generate_synthetic(&spec)?;
    create_dir(out)?;
    write_csv(&data, out.join(POINTS_FILE), out.join(LABELS_FILE))?;
    write_json(&out.join(SPEC_FILE), &spec)?;
    Ok(data)
}

// ── train / eval ───────────────────────────────────────────────────────

#[derive(Debug)]
pub struct TrainOutcome {
    pub checkpoint: PathBuf,
    pub history: History,
    pub test: Dataset,
}

fn train_with(cfg: &RunConfig, model: &ModelConfig, data: &Dataset, log: Log) -> Result<(Checkpoint, History, Dataset)> {
    let parts = if cfg.data.split {
        split(data, cfg.train.seed)?
    } else {
        samcnet::pointset::Split {
            train: data.clone(),
            val: data.clone(),
            test: data.clone(),
        }
    };
    log(&format!(
        "split: {} train / {} val / {} test",
        parts.train.len(),
        parts.val.len(),
        parts.test.len()
    ));
    let epochs = cfg.train.epochs;
    let (params, history) = model::train(&parts.train, &parts.val, model, &cfg.train, |r| {
        log(&format!(
            "epoch {}/{epochs} loss {:.4} val_accuracy {:.4}",
            r.epoch, r.train_loss, r.val_accuracy
        ))
    })?;
    let ckpt = Checkpoint {
        params,
        train: Some(cfg.train.clone()),
        categories: data.vocabulary.names().to_vec(),
        class_names: data.class_names.clone(),
    };
    Ok((ckpt, history, parts.test))
}

/// Writes the corpus of a synthetic run next to its outputs so it can be evaluated later.
fn materialize(cfg: &RunConfig, data: &Dataset) -> Result<()> {
    if cfg.data.synthetic.is_some() {
        let dir = cfg.output.dir.join("data");
        create_dir(&dir)?;
        write_csv(data, dir.join(POINTS_FILE), dir.join(LABELS_FILE))?;
    }
    Ok(())
}

pub fn train(config: &Path, log: Log) -> Result<TrainOutcome> {
    let cfg = RunConfig::load(config)?;
    train_config(&cfg, log)
}

pub fn train_config(cfg: &RunConfig, log: Log) -> Result<TrainOutcome> {
    let data = cfg.load_data()?;
    create_dir(&cfg.output.dir)?;
    materialize(cfg, &data)?;
    let (ckpt, history, test) = train_with(cfg, &cfg.model, &data, log)?;
    let path = cfg.output.dir.join(CHECKPOINT_FILE);
    ckpt.save(&path)?;
    history.write_csv(cfg.output.dir.join(HISTORY_FILE))?;
    Ok(TrainOutcome {
        checkpoint: path,
        history,
        test,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum SplitChoice {
    All,
    Train,
    Val,
    Test,
}

/// Re-expresses `data` in the checkpoint's category and class ids.
pub fn align(data: &Dataset, ckpt: &Checkpoint) -> Result<Dataset> {
    let cat_map: Vec<usize> = data
        .vocabulary
        .names()
        .iter()
        .map(|n| {
            ckpt.categories
                .iter()
                .position(|c| c == n)
                .with_context(|| format!("category {n:?} is unknown to the checkpoint"))
        })
        .collect::<Result<_>>()?;
    let class_map: Vec<usize> = data
        .class_names
        .iter()
        .map(|n| {
            ckpt.class_names
                .iter()
                .position(|c| c == n)
                .with_context(|| format!("class {n:?} is unknown to the checkpoint"))
        })
        .collect::<Result<_>>()?;
    let patterns = data
        .patterns
        .iter()
        .map(|p| PointPattern {
            sample_id: p.sample_id.clone(),
            points: p
                .points
                .iter()
                .map(|q| samcnet::pointset::Point::new(q.x, q.y, cat_map[q.category]))
                .collect(),
            label: class_map[p.label],
        })
        .collect();
    let vocab = samcnet::pointset::CategoryVocabulary::new(ckpt.categories.clone())?;
    Ok(Dataset::new(vocab, patterns, ckpt.class_names.clone())?)
}

fn select_split(data: &Dataset, ckpt: &Checkpoint, which: SplitChoice) -> Result<Dataset> {
    if which == SplitChoice::All {
        return Ok(data.clone());
    }
    let seed = ckpt
        .train
        .as_ref()
        .map(|t| t.seed)
        .context("checkpoint has no training config; use --split all")?;
    let parts = split(data, seed)?;
    Ok(match which {
        SplitChoice::Train => parts.train,
        SplitChoice::Val => parts.val,
        SplitChoice::Test => parts.test,
        SplitChoice::All => unreachable!(),
    })
}

fn sampling(ckpt: &Checkpoint) -> (usize, u64) {
    ckpt.train
        .as_ref()
        .map_or((usize::MAX, 0), |t| (t.num_points, t.seed))
}

fn load_for(checkpoint: &Path, data: &Path, which: SplitChoice) -> Result<(Checkpoint, Dataset)> {
    let ckpt = Checkpoint::load(checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
    let all = align(&load_dir(data)?, &ckpt)?;
    let chosen = select_split(&all, &ckpt, which)?;
    if chosen.is_empty() {
        bail!("the selected split is empty");
    }
    Ok((ckpt, chosen))
}

fn out_dir(out: Option<&Path>, fallback: &Path) -> PathBuf {
    out.map_or_else(|| fallback.to_path_buf(), Path::to_path_buf)
}

fn parent(p: &Path) -> &Path {
    p.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."))
}

pub fn eval(checkpoint: &Path, data: &Path, which: SplitChoice, out: Option<&Path>) -> Result<Metrics> {
    let (ckpt, chosen) = load_for(checkpoint, data, which)?;
    let (n, seed) = sampling(&ckpt);
    let metrics = evaluate(&chosen, &ckpt.params, n, seed)?;
    let dir = out_dir(out, parent(checkpoint));
    create_dir(&dir)?;
    write_json(&dir.join(METRICS_FILE), &metrics)?;
    Ok(metrics)
}

// ── baseline ───────────────────────────────────────────────────────────

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum BaselineClassifier {
    Dt,
    Rf,
    Nn,
}

#[derive(Clone, Debug)]
pub struct BaselineArgs {
    pub measure: Measure,
    pub classifier: BaselineClassifier,
    pub data: PathBuf,
    pub thresholds: Vec<f64>,
    pub hidden: usize,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

impl BaselineArgs {
    pub fn new(measure: Measure, classifier: BaselineClassifier, data: impl Into<PathBuf>) -> Self {
        Self {
            measure,
            classifier,
            data: data.into(),
            thresholds: vec![50.0],
            hidden: MlpConfig::default().hidden,
            seed: 0,
            out: None,
        }
    }
}

/// Fits on the train and validation parts of the split and scores the test part.
pub fn baseline(args: &BaselineArgs) -> Result<Metrics> {
    let data = load_dir(&args.data)?;
    baseline_on(&data, args)
}

pub fn baseline_on(data: &Dataset, args: &BaselineArgs) -> Result<Metrics> {
    let h = ThresholdSet::new(args.thresholds.clone())?;
    let parts = split(data, args.seed)?;
    let mut fit_set = parts.train.clone();
    fit_set.patterns.extend(parts.val.patterns.iter().cloned());
    let train_f = features(&fit_set, args.measure, &h)?;
    let classes = data.num_classes();
    let clf = match args.classifier {
        BaselineClassifier::Dt => Classifier::Tree(fit_tree(&train_f.rows, &train_f.labels, classes, 2)?),
        BaselineClassifier::Rf => Classifier::Forest(fit_forest(
            &train_f.rows,
            &train_f.labels,
            classes,
            &ForestConfig {
                seed: args.seed,
                ..ForestConfig::default()
            },
        )?),
        BaselineClassifier::Nn => Classifier::Mlp(fit_mlp(
            &train_f.rows,
            &train_f.labels,
            classes,
            &MlpConfig {
                hidden: args.hidden,
                seed: args.seed,
                ..MlpConfig::default()
            },
        )?),
    };
    let start = Instant::now();
    let test_f = features(&parts.test, args.measure, &h)?;
    let preds = clf.predict(&test_f.rows)?;
    let elapsed = start.elapsed().as_secs_f64();
    let mut metrics = Metrics::from_predictions(&test_f.labels, &preds, classes)?;
    metrics.per_sample_seconds = elapsed / parts.test.len().max(1) as f64;
    let measure = match args.measure {
        Measure::Pi => "pi",
        Measure::CrossK => "crossk",
    };
    let clf_name = format!("{:?}", args.classifier).to_lowercase();
    let dir = out_dir(args.out.as_deref(), &args.data.join(format!("baseline_{measure}_{clf_name}")));
    create_dir(&dir)?;
    write_json(&dir.join(METRICS_FILE), &metrics)?;
    Ok(metrics)
}

// ── ablate ─────────────────────────────────────────────────────────────

/// The seven component combinations, in table order.
pub const ABLATIONS: [(&str, bool, PrioritizationMode); 7] = [
    ("Only LRFC", true, PrioritizationMode::None),
    ("Only self-prt", false, PrioritizationMode::SelfPair),
    ("Neighbor-prt", false, PrioritizationMode::Neighbor),
    ("LRFC+self-prt", true, PrioritizationMode::SelfPair),
    ("LRFC+Neighbor-prt", true, PrioritizationMode::Neighbor),
    ("self-prt+Neighbor-prt", false, PrioritizationMode::SelfNeighbor),
    ("Entire model", true, PrioritizationMode::Pair),
];

#[derive(Clone, Debug)]
pub struct AblationRow {
    pub name: String,
    pub model: ModelConfig,
    pub metrics: Metrics,
}

pub fn ablate(config: &Path, log: Log) -> Result<Vec<AblationRow>> {
    let cfg = RunConfig::load(config)?;
    ablate_config(&cfg, log)
}

pub fn ablate_config(cfg: &RunConfig, log: Log) -> Result<Vec<AblationRow>> {
    let data = cfg.load_data()?;
    create_dir(&cfg.output.dir)?;
    let mut rows = Vec::with_capacity(ABLATIONS.len());
    let mut csv = String::from("model,precision,recall,f1,accuracy\n");
    for (name, use_lrfc, mode) in ABLATIONS {
        log(&format!("ablation: {name}"));
        let model = ModelConfig {
            use_lrfc,
            prioritization: mode,
            ..cfg.model.clone()
        };
        let (ckpt, _, test) = train_with(cfg, &model, &data, log)?;
        let metrics = evaluate(&test, &ckpt.params, cfg.train.num_points, cfg.train.seed)?;
        log(&format!("ablation: {name} accuracy {:.4}", metrics.accuracy));
        csv.push_str(&format!(
            "{name},{},{},{},{}\n",
            metrics.precision, metrics.recall, metrics.f1, metrics.accuracy
        ));
        rows.push(AblationRow {
            name: name.to_string(),
            model,
            metrics,
        });
    }
    write_file(&cfg.output.dir.join(ABLATION_FILE), csv)?;
    Ok(rows)
}

// ── interpret ──────────────────────────────────────────────────────────

#[derive(Clone, Debug)]
pub struct InterpretArgs {
    pub checkpoint: PathBuf,
    pub data: PathBuf,
    pub out: Option<PathBuf>,
    pub split: SplitChoice,
    pub graph: SignatureGraph,
    pub norm: VectorNorm,
    pub seed: u64,
    pub top: usize,
}

impl InterpretArgs {
    pub fn new(checkpoint: impl Into<PathBuf>, data: impl Into<PathBuf>) -> Self {
        Self {
            checkpoint: checkpoint.into(),
            data: data.into(),
            out: None,
            split: SplitChoice::All,
            graph: SignatureGraph::LastLayer,
            norm: VectorNorm::L2,
            seed: 0,
            top: 20,
        }
    }
}

#[derive(Debug)]
pub struct InterpretOutcome {
    pub importance: Vec<PairImportanceMatrix>,
    pub ranking: RelationshipRanking,
    pub categories: Vec<String>,
}

pub fn interpret(args: &InterpretArgs) -> Result<InterpretOutcome> {
    let (ckpt, data) = load_for(&args.checkpoint, &args.data, args.split)?;
    let params = &ckpt.params;
    let importance = if params.config.prioritization.uses_table() {
        (0..params.layout.layers.len())
            .map(|l| pair_importance(params, l, args.norm))
            .collect::<samcnet::Result<Vec<_>>>()?
    } else {
        Vec::new()
    };
    let (n, seed) = sampling(&ckpt);
    let feats = nway_features(params, &data, args.graph, n, seed)?;
    let ranking = rank_by_permutation(&feats, args.seed)?;
    let dir = out_dir(args.out.as_deref(), parent(&args.checkpoint));
    create_dir(&dir)?;
    write_file(&dir.join(PAIR_IMPORTANCE_FILE), pair_importance_csv(&importance, &data.vocabulary))?;
    write_file(&dir.join(RELATIONSHIPS_FILE), ranking.to_csv(&data.vocabulary, args.top))?;
    Ok(InterpretOutcome {
        importance,
        ranking,
        categories: ckpt.categories.clone(),
    })
}

// ── bench ──────────────────────────────────────────────────────────────

pub const WARMUP_PASSES: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchReport {
    pub samples: usize,
    pub num_points: usize,
    pub mean_seconds: f64,
    pub median_seconds: f64,
}

#[derive(Clone, Debug)]
pub struct BenchArgs {
    pub checkpoint: PathBuf,
    pub data: PathBuf,
    /// Subsample every pattern to this many points (defaults to the training setting).
    pub num_points: Option<usize>,
    pub limit: Option<usize>,
    pub out: Option<PathBuf>,
}

/// Per-sample eval-mode inference time; the first [`WARMUP_PASSES`] passes
/// over the first sample are not timed.
pub fn bench(args: &BenchArgs) -> Result<BenchReport> {
    let (ckpt, data) = load_for(&args.checkpoint, &args.data, SplitChoice::All)?;
    let (default_n, seed) = sampling(&ckpt);
    let n = args.num_points.unwrap_or(default_n);
    if n == 0 {
        bail!("--num-points must be positive");
    }
    let take = args.limit.unwrap_or(data.len()).min(data.len()).max(1);
    let prepared_views: Vec<PointPattern> = data.patterns[..take].iter().map(|p| eval_view(p, n, seed)).collect();
    let params = &ckpt.params;
    let run = |p: &PointPattern| -> Result<f64> {
        let start = Instant::now();
        let prep = prepare(p, &params.config, params.num_categories)?;
        let mut tape = Tape::new();
        let f = params.eval_forward(&mut tape, &prep)?;
        std::hint::black_box(tape.data(f.logits));
        Ok(start.elapsed().as_secs_f64())
    };
    for _ in 0..WARMUP_PASSES {
        run(&prepared_views[0])?;
    }
    let mut times: Vec<f64> = prepared_views.iter().map(run).collect::<Result<_>>()?;
    times.sort_by(f64::total_cmp);
    let mean = times.iter().sum::<f64>() / times.len() as f64;
    let median = if times.len() % 2 == 1 {
        times[times.len() / 2]
    } else {
        (times[times.len() / 2 - 1] + times[times.len() / 2]) / 2.0
    };
    let points = prepared_views.iter().map(PointPattern::len).max().unwrap_or(0);
    let report = BenchReport {
        samples: times.len(),
        num_points: points,
        mean_seconds: mean,
        median_seconds: median,
    };
    let dir = out_dir(args.out.as_deref(), parent(&args.checkpoint));
    create_dir(&dir)?;
    write_json(&dir.join(BENCH_FILE), &report)?;
    Ok(report)
}
