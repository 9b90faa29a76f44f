//! Alternating search over network weights and architecture logits,
//! followed by retraining of the derived genotype.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::error::{FusionError, Result};
use crate::genotype::{pattern_genotype, CellGene, Genotype, PatternKind};
use crate::hypernet::{fold_shared_cell_inputs, Hypernet, SearchSpaceConfig};
use crate::metrics::task_metric;
use crate::network::{dropout_mask, loss_var, FusionNet, HeadConfig};
use crate::params::{cosine_lr, Adam, Binding, ParamGroup, ParamStore};
use crate::scalar::Scalar;
use crate::tasks::{PreparedDatasets, PreparedSplit};
use crate::tensor::Tensor;

/// Optimizer and schedule settings shared by search and evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Search epochs.
    pub epochs: usize,
    pub batch_size: usize,
    pub dropout: f64,
    pub arch_lr: f64,
    pub arch_l2: f64,
    pub net_max_lr: f64,
    pub net_min_lr: f64,
    pub net_l2: f64,
    pub seed: u64,
    /// Epochs when retraining a derived genotype on train and val.
    pub eval_epochs: usize,
    /// Epochs per genotype when ranking a whole space.
    pub rank_epochs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 64,
            dropout: 0.0,
            arch_lr: 3e-3,
            arch_l2: 1e-3,
            net_max_lr: 3e-3,
            net_min_lr: 1e-6,
            net_l2: 1e-4,
            seed: 0,
            eval_epochs: 50,
            rank_epochs: 10,
        }
    }
}

impl TrainConfig {
    /// Returns `(field, message)` for the first violated constraint.
    pub fn check(&self) -> std::result::Result<(), (&'static str, String)> {
        if self.epochs == 0 {
            return Err(("epochs", "must be at least 1".into()));
        }
        if self.eval_epochs == 0 {
            return Err(("eval_epochs", "must be at least 1".into()));
        }
        if self.rank_epochs == 0 {
            return Err(("rank_epochs", "must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(("batch_size", "must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(("dropout", format!("{} is outside [0, 1)", self.dropout)));
        }
        for (name, v) in [("arch_lr", self.arch_lr), ("net_max_lr", self.net_max_lr), ("net_min_lr", self.net_min_lr)] {
            if !(v.is_finite() && v > 0.0) {
                return Err((name, format!("{v} is not a positive rate")));
            }
        }
        for (name, v) in [("arch_l2", self.arch_l2), ("net_l2", self.net_l2)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err((name, format!("{v} is not a non-negative decay")));
            }
        }
        if self.net_min_lr > self.net_max_lr {
            return Err(("net_min_lr", format!("{} exceeds net_max_lr {}", self.net_min_lr, self.net_max_lr)));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.check().map_err(|(path, message)| FusionError::Config {
            path: path.to_string(),
            message,
        })
    }
}

/// Anything trainable by the shared step routines.
pub trait Model<T: Scalar> {
    fn store(&self) -> &ParamStore<T>;
    fn store_mut(&mut self) -> &mut ParamStore<T>;
    fn head_config(&self) -> &HeadConfig;
    fn channels(&self) -> usize;
    fn logits_var(&self, g: &mut Graph<T>, b: &Binding, inputs: &[Var], mask: Option<Tensor<T>>) -> Result<Var>;
}

impl<T: Scalar> Model<T> for Hypernet<T> {
    fn store(&self) -> &ParamStore<T> {
        Hypernet::store(self)
    }
    fn store_mut(&mut self) -> &mut ParamStore<T> {
        Hypernet::store_mut(self)
    }
    fn head_config(&self) -> &HeadConfig {
        Hypernet::head_config(self)
    }
    fn channels(&self) -> usize {
        self.space().channels
    }
    fn logits_var(&self, g: &mut Graph<T>, b: &Binding, inputs: &[Var], mask: Option<Tensor<T>>) -> Result<Var> {
        self.forward_var(g, b, inputs, mask)
    }
}

impl<T: Scalar> Model<T> for FusionNet<T> {
    fn store(&self) -> &ParamStore<T> {
        FusionNet::store(self)
    }
    fn store_mut(&mut self) -> &mut ParamStore<T> {
        FusionNet::store_mut(self)
    }
    fn head_config(&self) -> &HeadConfig {
        FusionNet::head_config(self)
    }
    fn channels(&self) -> usize {
        self.genotype().config.channels
    }
    fn logits_var(&self, g: &mut Graph<T>, b: &Binding, inputs: &[Var], mask: Option<Tensor<T>>) -> Result<Var> {
        self.forward_var(g, b, inputs, mask)
    }
}

/// Builds the loss graph of `batch` with `trainable` as graph parameters.
pub fn batch_loss<T: Scalar, M: Model<T>>(
    model: &M,
    batch: &PreparedSplit<T>,
    trainable: Option<ParamGroup>,
    mask: Option<Tensor<T>>,
) -> Result<(Graph<T>, Binding, Var)> {
    let mut g = Graph::new();
    let b = model.store().bind(&mut g, trainable);
    let inputs: Vec<Var> = batch.features.iter().map(|t| g.constant(t.clone())).collect();
    let logits = model.logits_var(&mut g, &b, &inputs, mask)?;
    let loss = loss_var(&mut g, logits, &batch.labels)?;
    Ok((g, b, loss))
}

fn step_group<T: Scalar, M: Model<T>>(
    model: &mut M,
    opt: &mut Adam<T>,
    batch: &PreparedSplit<T>,
    lr: f64,
    mask: Option<Tensor<T>>,
) -> Result<f64> {
    let (g, b, loss) = batch_loss(model, batch, Some(opt.group), mask)?;
    let value = g.value(loss).data()[0].as_f64();
    if !value.is_finite() {
        return Err(FusionError::NonFinite(format!("loss = {value}")));
    }
    let grads = g.backward(loss)?;
    opt.step(model.store_mut(), &b, &grads, lr)?;
    Ok(value)
}

/// One optimizer step on network weights; architecture logits stay fixed.
/// Returns the batch loss before the update.
pub fn weight_step<T: Scalar, M: Model<T>, R: Rng + ?Sized>(
    model: &mut M,
    opt: &mut Adam<T>,
    batch: &PreparedSplit<T>,
    lr: f64,
    dropout: f64,
    rng: &mut R,
) -> Result<f64> {
    if opt.group != ParamGroup::Network {
        return Err(FusionError::InvalidArgument("weight_step needs a network optimizer".into()));
    }
    let mask = (dropout > 0.0).then(|| dropout_mask(&[batch.len(), model.channels()], dropout, rng));
    step_group(model, opt, batch, lr, mask)
}

/// One optimizer step on architecture logits; network weights stay fixed.
pub fn arch_step<T: Scalar>(net: &mut Hypernet<T>, opt: &mut Adam<T>, batch: &PreparedSplit<T>, lr: f64) -> Result<f64> {
    if opt.group != ParamGroup::Arch {
        return Err(FusionError::InvalidArgument("arch_step needs an architecture optimizer".into()));
    }
    step_group(net, opt, batch, lr, None)
}

/// Eager logits over a whole split, in chunks.
pub fn predict<T: Scalar, M: Model<T>>(model: &M, split: &PreparedSplit<T>) -> Result<Tensor<T>> {
    const CHUNK: usize = 512;
    let mut parts = Vec::new();
    let mut start = 0;
    while start < split.len() {
        let rows: Vec<usize> = (start..(start + CHUNK).min(split.len())).collect();
        let batch = split.select(&rows);
        let mut g = Graph::new();
        let b = model.store().bind(&mut g, None);
        let inputs: Vec<Var> = batch.features.iter().map(|t| g.constant(t.clone())).collect();
        let logits = model.logits_var(&mut g, &b, &inputs, None)?;
        parts.push(g.value(logits).clone());
        start += CHUNK;
    }
    Tensor::concat_rows(&parts.iter().collect::<Vec<_>>())
}

pub fn score<T: Scalar, M: Model<T>>(model: &M, split: &PreparedSplit<T>) -> Result<f64> {
    task_metric(&predict(model, split)?, &split.labels)
}

/// Structured per-epoch log record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_metric: f64,
    pub genotype_digest: String,
    pub best_val_metric: f64,
    pub best_digest: String,
    pub net_lr: f64,
    pub weight_steps: u64,
    pub arch_steps: u64,
}

/// Everything needed to resume a search.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct SearchState<T> {
    pub hypernet: Hypernet<T>,
    pub net_opt: Adam<T>,
    pub arch_opt: Adam<T>,
    pub rng: ChaCha8Rng,
    /// Next epoch to run.
    pub epoch: usize,
    val_order: Vec<usize>,
    val_pos: usize,
    pub genotype_best: Option<Genotype>,
    pub best_val_metric: f64,
    pub log: Vec<EpochRecord>,
}

impl<T: Scalar> SearchState<T> {
    pub fn new(space: &SearchSpaceConfig, data: &PreparedDatasets<T>, cfg: &TrainConfig) -> Result<Self> {
        let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        init_rng.set_stream(20);
        let head = HeadConfig {
            n_classes: data.n_classes,
            mode: data.mode,
            dropout: cfg.dropout,
        };
        let hypernet = Hypernet::new(space, head, &mut init_rng)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(21);
        Ok(Self {
            hypernet,
            net_opt: Adam::new(ParamGroup::Network, cfg.net_l2),
            arch_opt: Adam::new(ParamGroup::Arch, cfg.arch_l2),
            rng,
            epoch: 0,
            val_order: Vec::new(),
            val_pos: 0,
            genotype_best: None,
            best_val_metric: f64::NEG_INFINITY,
            log: Vec::new(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        let bytes = serde_json::to_vec(self)?;
        fs::write(&tmp, bytes).map_err(|e| FusionError::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| FusionError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| FusionError::io(path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    fn next_val_batch(&mut self, n_val: usize, batch_size: usize) -> Vec<usize> {
        let mut rows = Vec::with_capacity(batch_size);
        while rows.len() < batch_size.min(n_val) {
            if self.val_pos >= self.val_order.len() {
                self.val_order = (0..n_val).collect();
                self.val_order.shuffle(&mut self.rng);
                self.val_pos = 0;
            }
            rows.push(self.val_order[self.val_pos]);
            self.val_pos += 1;
        }
        rows
    }
}

/// Where search artifacts go; all optional.
#[derive(Default)]
pub struct SearchOptions<'a> {
    /// Checkpoint written after every epoch.
    pub checkpoint: Option<PathBuf>,
    pub on_epoch: Option<&'a mut dyn FnMut(&EpochRecord)>,
    /// Stop after this many epochs in this call (the state stays resumable).
    pub max_epochs_this_call: Option<usize>,
}

pub struct SearchOutcome<T> {
    pub genotype: Genotype,
    pub state: SearchState<T>,
}

fn check_splits<T: Scalar>(data: &PreparedDatasets<T>) -> Result<()> {
    if data.train.is_empty() || data.val.is_empty() {
        return Err(FusionError::Dataset("search needs non-empty train and val splits".into()));
    }
    Ok(())
}

/// Runs a fresh search.
pub fn run_search<T: Scalar>(data: &PreparedDatasets<T>, space: &SearchSpaceConfig, cfg: &TrainConfig) -> Result<SearchOutcome<T>> {
    let state = SearchState::new(space, data, cfg)?;
    resume_search(state, data, cfg, SearchOptions::default())
}

/// Continues `state` until `cfg.epochs` epochs have run.
pub fn resume_search<T: Scalar>(
    mut state: SearchState<T>,
    data: &PreparedDatasets<T>,
    cfg: &TrainConfig,
    mut opts: SearchOptions<'_>,
) -> Result<SearchOutcome<T>> {
    cfg.validate()?;
    check_splits(data)?;
    let n_train = data.train.len();
    let n_val = data.val.len();
    let mut ran = 0;
    while state.epoch < cfg.epochs {
        if opts.max_epochs_this_call.is_some_and(|m| ran >= m) {
            break;
        }
        let epoch = state.epoch;
        let lr = cosine_lr(epoch, cfg.epochs, cfg.net_max_lr, cfg.net_min_lr);
        let mut order: Vec<usize> = (0..n_train).collect();
        order.shuffle(&mut state.rng);
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for (bi, rows) in order.chunks(cfg.batch_size).enumerate() {
            let batch = data.train.select(rows);
            let loss = weight_step(&mut state.hypernet, &mut state.net_opt, &batch, lr, cfg.dropout, &mut state.rng)
                .map_err(|e| diverged(e, epoch, bi))?;
            loss_sum += loss;
            batches += 1;
            let vrows = state.next_val_batch(n_val, cfg.batch_size);
            let vbatch = data.val.select(&vrows);
            arch_step(&mut state.hypernet, &mut state.arch_opt, &vbatch, cfg.arch_lr).map_err(|e| diverged(e, epoch, bi))?;
        }
        let genotype = fold_shared_cell_inputs(&state.hypernet.discretize()?);
        let logits = predict(&state.hypernet, &data.val)?;
        let val_metric = task_metric(&logits, &data.val.labels)?;
        let val_loss = {
            let mut g = Graph::new();
            let z = g.constant(logits);
            let l = loss_var(&mut g, z, &data.val.labels)?;
            g.value(l).data()[0].as_f64()
        };
        if state.genotype_best.is_none() || val_metric > state.best_val_metric {
            state.best_val_metric = val_metric;
            state.genotype_best = Some(genotype.clone());
        }
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / batches as f64,
            val_loss,
            val_metric,
            genotype_digest: genotype.digest(),
            best_val_metric: state.best_val_metric,
            best_digest: state.genotype_best.as_ref().expect("set above").digest(),
            net_lr: lr,
            weight_steps: state.net_opt.steps_taken(),
            arch_steps: state.arch_opt.steps_taken(),
        };
        state.log.push(record.clone());
        state.epoch += 1;
        ran += 1;
        if let Some(path) = &opts.checkpoint {
            state.save(path)?;
        }
        if let Some(cb) = opts.on_epoch.as_mut() {
            cb(&record);
        }
    }
    let genotype = state
        .genotype_best
        .clone()
        .unwrap_or(fold_shared_cell_inputs(&state.hypernet.discretize()?));
    Ok(SearchOutcome { genotype, state })
}

fn diverged(e: FusionError, epoch: usize, batch: usize) -> FusionError {
    match e {
        FusionError::NonFinite(what) => FusionError::Diverged {
            epoch,
            batch,
            loss: what
                .strip_prefix("loss = ")
                .and_then(|v| v.parse().ok())
                .unwrap_or(f64::NAN),
        },
        other => other,
    }
}

/// Trains a freshly initialized network for `genotype` on `train`.
pub fn fit_genotype<T: Scalar>(
    genotype: &Genotype,
    data: &PreparedDatasets<T>,
    train: &PreparedSplit<T>,
    epochs: usize,
    cfg: &TrainConfig,
) -> Result<FusionNet<T>> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(FusionError::Dataset("cannot train on an empty split".into()));
    }
    let names: Vec<String> = data.features.iter().map(|f| f.label()).collect();
    let expected: Vec<String> = genotype.config.features.iter().map(|f| f.label()).collect();
    if names != expected {
        return Err(FusionError::InvalidArgument(format!(
            "genotype features {expected:?} do not match dataset features {names:?}"
        )));
    }
    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    init_rng.set_stream(10);
    let head = HeadConfig {
        n_classes: data.n_classes,
        mode: data.mode,
        dropout: cfg.dropout,
    };
    let mut net = FusionNet::new(genotype, &data.raw_channels(), head, &mut init_rng)?;
    let mut opt = Adam::new(ParamGroup::Network, cfg.net_l2);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(11);
    for epoch in 0..epochs {
        let lr = cosine_lr(epoch, epochs, cfg.net_max_lr, cfg.net_min_lr);
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng);
        for (bi, rows) in order.chunks(cfg.batch_size).enumerate() {
            let batch = train.select(rows);
            weight_step(&mut net, &mut opt, &batch, lr, cfg.dropout, &mut rng).map_err(|e| diverged(e, epoch, bi))?;
        }
    }
    Ok(net)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub genotype_digest: String,
    pub test_metric: f64,
    pub param_count: usize,
}

/// Retrains `genotype` from scratch on train and val together for
/// `cfg.eval_epochs` and reports the test metric.
pub fn evaluate_genotype<T: Scalar>(genotype: &Genotype, data: &PreparedDatasets<T>, cfg: &TrainConfig) -> Result<EvalReport> {
    genotype.validate()?;
    let train = data.train.concat(&data.val)?;
    let net = fit_genotype(genotype, data, &train, cfg.eval_epochs, cfg)?;
    Ok(EvalReport {
        genotype_digest: genotype.digest(),
        test_metric: score(&net, &data.test)?,
        param_count: net.param_count(),
    })
}

/// Number of independent trials behind every baseline figure.
pub const BASELINE_TRIALS: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    /// Uniformly random upper-level pairs with the reference's inner steps.
    RandomSelection,
    /// One ConcatFC cell over the last feature of each modality.
    LateFusion,
    /// A fixed pattern in every cell, on the reference's pairs.
    FixedFusion(PatternKind),
}

impl BaselineKind {
    pub fn name(&self) -> String {
        match self {
            BaselineKind::RandomSelection => "random_selection".into(),
            BaselineKind::LateFusion => "late_fusion".into(),
            BaselineKind::FixedFusion(p) => format!("fixed_{}", p.name().to_lowercase()),
        }
    }
}

impl std::str::FromStr for BaselineKind {
    type Err = FusionError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random_selection" | "random" => Ok(BaselineKind::RandomSelection),
            "late_fusion" | "late" => Ok(BaselineKind::LateFusion),
            other => {
                let rest = other.strip_prefix("fixed_").or_else(|| other.strip_prefix("fixed:")).unwrap_or(other);
                rest.parse::<PatternKind>()
                    .map(BaselineKind::FixedFusion)
                    .map_err(|_| FusionError::InvalidArgument(format!("unknown baseline kind `{s}`")))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineReport {
    pub kind: String,
    pub metrics: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub digests: Vec<String>,
}

/// Mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Seed of trial `t`.
pub fn trial_config(cfg: &TrainConfig, t: usize) -> TrainConfig {
    TrainConfig {
        seed: cfg.seed.wrapping_add(t as u64),
        ..cfg.clone()
    }
}

/// Uniformly random distinct predecessor pairs for every cell of `reference`.
pub fn random_selection_genotype<R: Rng + ?Sized>(reference: &Genotype, rng: &mut R) -> Result<Genotype> {
    let cells = reference
        .cells
        .iter()
        .enumerate()
        .map(|(k, cell)| {
            let n = reference.cell_position(k);
            let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
            CellGene {
                inputs: pairs[rng.random_range(0..pairs.len())],
                steps: cell.steps.clone(),
            }
        })
        .collect();
    Genotype::new(reference.config.clone(), cells)
}

/// ConcatFC over the last feature of every modality, chaining cells when
/// there are more than two modalities.
pub fn late_fusion_genotype(reference: &Genotype) -> Result<Genotype> {
    let feats = &reference.config.features;
    let mut modalities: Vec<&str> = Vec::new();
    for f in feats {
        if !modalities.contains(&f.modality.as_str()) {
            modalities.push(&f.modality);
        }
    }
    if modalities.len() < 2 {
        return Err(FusionError::InvalidArgument("late fusion needs at least two modalities".into()));
    }
    let last: Vec<usize> = modalities
        .iter()
        .map(|m| {
            feats
                .iter()
                .enumerate()
                .filter(|(_, f)| f.modality == *m)
                .max_by_key(|(_, f)| f.index)
                .map(|(i, _)| i)
                .expect("modality has a feature")
        })
        .collect();
    let n_feat = feats.len();
    let mut pairs = vec![(last[0].min(last[1]), last[0].max(last[1]))];
    for (k, &f) in last.iter().enumerate().skip(2) {
        pairs.push((f, n_feat + k - 2));
    }
    let mut config = reference.config.clone();
    config.num_cells = pairs.len();
    pattern_genotype(&config, PatternKind::ConcatFc, &pairs)
}

/// Genotypes a baseline evaluates, one per trial.
pub fn baseline_genotypes(kind: BaselineKind, reference: &Genotype, cfg: &TrainConfig) -> Result<Vec<Genotype>> {
    match kind {
        BaselineKind::RandomSelection => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(30);
            (0..BASELINE_TRIALS).map(|_| random_selection_genotype(reference, &mut rng)).collect()
        }
        BaselineKind::LateFusion => Ok(vec![late_fusion_genotype(reference)?; BASELINE_TRIALS]),
        BaselineKind::FixedFusion(p) => {
            let pairs: Vec<(usize, usize)> = reference.cells.iter().map(|c| c.inputs).collect();
            Ok(vec![pattern_genotype(&reference.config, p, &pairs)?; BASELINE_TRIALS])
        }
    }
}

/// Evaluates a genotype under the seeds of [`BASELINE_TRIALS`] trials.
pub fn evaluate_trials<T: Scalar>(genotypes: &[Genotype], data: &PreparedDatasets<T>, cfg: &TrainConfig) -> Result<(Vec<f64>, Vec<String>)> {
    use rayon::prelude::*;
    let reports = genotypes
        .par_iter()
        .enumerate()
        .map(|(t, g)| evaluate_genotype(g, data, &trial_config(cfg, t)))
        .collect::<Result<Vec<_>>>()?;
    Ok((
        reports.iter().map(|r| r.test_metric).collect(),
        reports.into_iter().map(|r| r.genotype_digest).collect(),
    ))
}

/// Runs a baseline over [`BASELINE_TRIALS`] trials. `reference` is the
/// searched genotype whose inner steps or pairs the baseline reuses.
pub fn run_baseline<T: Scalar>(
    kind: BaselineKind,
    data: &PreparedDatasets<T>,
    reference: &Genotype,
    cfg: &TrainConfig,
) -> Result<BaselineReport> {
    let genotypes = baseline_genotypes(kind, reference, cfg)?;
    let (metrics, digests) = evaluate_trials(&genotypes, data, cfg)?;
    let (mean, std) = mean_std(&metrics);
    Ok(BaselineReport {
        kind: kind.name(),
        metrics,
        mean,
        std,
        digests,
    })
}

/// The genotype itself evaluated under the trial seeds, labelled `searched`.
pub fn searched_row<T: Scalar>(genotype: &Genotype, data: &PreparedDatasets<T>, cfg: &TrainConfig) -> Result<BaselineReport> {
    let (metrics, digests) = evaluate_trials(&vec![genotype.clone(); BASELINE_TRIALS], data, cfg)?;
    let (mean, std) = mean_std(&metrics);
    Ok(BaselineReport {
        kind: "searched".into(),
        metrics,
        mean,
        std,
        digests,
    })
}

const ABLATION_HEADER: &str = "kind,mean,std,metrics,digests";

/// One row per report; per-trial values are `;`-separated.
pub fn ablation_csv(rows: &[BaselineReport]) -> String {
    let mut out = format!("{ABLATION_HEADER}\n");
    for r in rows {
        let metrics: Vec<String> = r.metrics.iter().map(|m| m.to_string()).collect();
        out.push_str(&format!("{},{},{},{},{}\n", r.kind, r.mean, r.std, metrics.join(";"), r.digests.join(";")));
    }
    out
}

pub fn parse_ablation_csv(text: &str) -> Result<Vec<BaselineReport>> {
    let mut lines = text.lines();
    if lines.next() != Some(ABLATION_HEADER) {
        return Err(FusionError::InvalidArgument("ablation table header mismatch".into()));
    }
    let bad = |i: usize, what: &str| FusionError::InvalidArgument(format!("ablation row {i}: bad {what}"));
    let list = |s: &str| -> Vec<String> {
        if s.is_empty() {
            Vec::new()
        } else {
            s.split(';').map(str::to_string).collect()
        }
    };
    lines
        .filter(|l| !l.is_empty())
        .enumerate()
        .map(|(i, line)| {
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 5 {
                return Err(bad(i, "column count"));
            }
            let metrics = list(cols[3])
                .iter()
                .map(|m| m.parse::<f64>().map_err(|_| bad(i, "metric")))
                .collect::<Result<Vec<_>>>()?;
            Ok(BaselineReport {
                kind: cols[0].to_string(),
                mean: cols[1].parse().map_err(|_| bad(i, "mean"))?,
                std: cols[2].parse().map_err(|_| bad(i, "std"))?,
                metrics,
                digests: list(cols[4]),
            })
        })
        .collect()
}
