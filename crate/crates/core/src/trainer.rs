//! Training: one step per source/target batch pair, the learning-rate and
//! ramp schedules, per-epoch evaluation, checkpoints and metric streams.
//!
//! A TI-ST step runs the augmented source batch through the network for the
//! supervised loss, runs the untransformed target batch without gradient,
//! runs a photometrically transformed copy with gradient, keeps the pixels
//! confident in both views as pseudo labels and minimises `sup + lambda * ps`.
//! Plain self-training drops the untransformed view from the mask; the
//! supervised baseline drops the target branch altogether.

use std::fmt;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::augment::{apply_nonspatial, augment_labeled, sample_nonspatial, AugmentConfig};
use crate::data::{epoch_batches, Dataset, FoldSplit, Sample};
use crate::error::{ensure, Error, Result};
use crate::image::{ImageTensor, LabelMap};
use crate::losses::{lambda_at, overall_loss, pseudo_supervised_loss, supervised_loss, LossWeights, RampSchedule};
use crate::model::{
    to_tensor, Checkpoint, CheckpointMeta, Gradients, ModelConfig, Optimizer, OptimizerConfig, SegmentationNetwork, UNet,
    SIZE_MULTIPLE,
};
use crate::pseudolabel::{st_pseudo_labels, tist_pseudo_labels, ProbabilityMap, PseudoLabelMap, PseudoLabeling};
use crate::real::Real;
use crate::report::{evaluate, ClassSelection};
use crate::rng::{derive_rng, stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Supervised,
    St,
    Tist,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Supervised => "supervised",
            Method::St => "st",
            Method::Tist => "tist",
        }
    }

    pub fn uses_target(self) -> bool {
        self != Method::Supervised
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "supervised" | "sup" => Ok(Method::Supervised),
            "st" => Ok(Method::St),
            "tist" => Ok(Method::Tist),
            _ => Err(Error::InvalidConfig(format!("unknown method `{s}` (supervised, st, tist)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Profile {
    /// 30 epochs on 128x128 images, small network, Adam.
    #[default]
    Desk,
    /// 100 epochs, wider network, plain SGD.
    PaperScale,
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Profile::Desk),
            "paper" | "paper-scale" => Ok(Profile::PaperScale),
            _ => Err(Error::InvalidConfig(format!("unknown profile `{s}` (desk, paper-scale)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub method: Method,
    pub tau: f64,
    pub epochs: usize,
    pub lr: f64,
    pub lr_gamma: f64,
    pub lr_step_epochs: usize,
    pub batch_size: usize,
    pub loss: LossWeights,
    /// Squared exponent in the ramp-up of `lambda`.
    pub ramp_squared: bool,
    pub optimizer: OptimizerConfig,
    pub augment: AugmentConfig,
    pub model: ModelConfig,
    pub seed: u64,
    pub fold: usize,
    pub folds: usize,
    /// Share of the labelled source training set that is used.
    pub labeled_fraction: f64,
    pub eval_classes: ClassSelection,
    /// Free-form description of the data, folded into the run hash.
    pub data_tag: String,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::for_profile(Profile::Desk)
    }
}

impl TrainConfig {
    pub fn for_profile(profile: Profile) -> Self {
        let (epochs, optimizer, base_width) = match profile {
            Profile::Desk => (30, OptimizerConfig::adam(), 8),
            Profile::PaperScale => (100, OptimizerConfig::default(), 32),
        };
        Self {
            method: Method::Tist,
            tau: 0.85,
            epochs,
            lr: 0.001,
            lr_gamma: 0.8,
            lr_step_epochs: 2,
            batch_size: 4,
            loss: LossWeights::default(),
            ramp_squared: false,
            optimizer,
            augment: AugmentConfig::default(),
            model: ModelConfig {
                base_width,
                ..ModelConfig::default()
            },
            seed: 0,
            fold: 0,
            folds: 4,
            labeled_fraction: 1.0,
            eval_classes: ClassSelection::Foreground,
            data_tag: String::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.tau > 0.5 && self.tau < 1.0,
            InvalidConfig,
            "tau must lie in (0.5, 1), got {}",
            self.tau
        );
        ensure!(self.epochs >= 1, InvalidConfig, "epochs must be >= 1");
        ensure!(self.lr > 0.0 && self.lr.is_finite(), InvalidConfig, "lr must be positive, got {}", self.lr);
        ensure!(
            self.lr_gamma > 0.0 && self.lr_gamma <= 1.0,
            InvalidConfig,
            "lr_gamma must lie in (0, 1], got {}",
            self.lr_gamma
        );
        ensure!(self.lr_step_epochs >= 1, InvalidConfig, "lr_step_epochs must be >= 1");
        ensure!(self.batch_size >= 1, InvalidConfig, "batch_size must be >= 1");
        ensure!(self.folds >= 1, InvalidConfig, "folds must be >= 1");
        ensure!(
            self.labeled_fraction > 0.0 && self.labeled_fraction <= 1.0,
            InvalidConfig,
            "labeled_fraction must lie in (0, 1], got {}",
            self.labeled_fraction
        );
        ensure!(
            self.fold < self.folds,
            InvalidConfig,
            "fold {} out of range for {} folds",
            self.fold,
            self.folds
        );
        self.loss.validate()?;
        self.optimizer.validate()?;
        self.augment.validate()?;
        self.model.validate()
    }

    /// `lr * lr_gamma ^ floor(epoch / lr_step_epochs)`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr * self.lr_gamma.powi((epoch / self.lr_step_epochs) as i32)
    }

    pub fn ramp(&self) -> RampSchedule {
        RampSchedule {
            total_epochs: self.epochs,
            squared: self.ramp_squared,
        }
    }

    /// Short hex digest of the canonical JSON form.
    pub fn hash(&self) -> String {
        canonical_hash(self)
    }
}

/// SHA-256 over the key-sorted JSON form of `value`, first 16 hex digits.
pub fn canonical_hash<S: Serialize>(value: &S) -> String {
    let v = serde_json::to_value(value).expect("config serializes");
    let text = serde_json::to_string(&v).expect("value serializes");
    hex::encode(&Sha256::digest(text.as_bytes())[..8])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub sup_loss: f64,
    pub ps_loss: f64,
    pub lambda: f64,
    pub overall_loss: f64,
    /// Share of target pixels that received a pseudo label.
    pub retained_fraction: f64,
}

/// Augmented inputs of one step.
#[derive(Debug, Clone)]
pub struct PreparedBatch {
    pub source_images: Vec<ImageTensor>,
    pub source_labels: Vec<LabelMap>,
    /// Untransformed target images (used only for masking).
    pub target_clean: Vec<ImageTensor>,
    /// Photometrically transformed target images.
    pub target_views: Vec<ImageTensor>,
    pub ids: Vec<String>,
}

impl PreparedBatch {
    /// Source samples get a spatial and a photometric transform; target
    /// samples only a photometric one, drawn per image.
    pub fn prepare<R: rand::Rng + ?Sized>(
        rng: &mut R,
        augment: &AugmentConfig,
        source: &[&Sample],
        target: &[&Sample],
    ) -> Result<Self> {
        let mut out = PreparedBatch {
            source_images: Vec::with_capacity(source.len()),
            source_labels: Vec::with_capacity(source.len()),
            target_clean: Vec::with_capacity(target.len()),
            target_views: Vec::with_capacity(target.len()),
            ids: Vec::with_capacity(source.len() + target.len()),
        };
        for s in source {
            let (img, lab) = augment_labeled(rng, augment, &s.image, s.label()?)?;
            out.source_images.push(img);
            out.source_labels.push(lab);
            out.ids.push(s.id.clone());
        }
        for s in target {
            let f = sample_nonspatial(rng, augment);
            out.target_views.push(apply_nonspatial(&s.image, &f)?);
            out.target_clean.push(s.image.clone());
            out.ids.push(s.id.clone());
        }
        Ok(out)
    }
}

/// Gradients and bookkeeping of one step, before the optimiser update.
#[derive(Debug, Clone)]
pub struct StepOutcome<T> {
    pub metrics: StepMetrics,
    pub grads: Gradients<T>,
    pub pseudo: Vec<PseudoLabeling>,
}

/// Loss and parameter gradient of `sup + lambda * ps` for one prepared batch.
///
/// `mask_views` replaces the untransformed-view predictions used for TI-ST
/// masking; it exists so tests can perturb that path. It is ignored by the
/// other methods.
pub fn step_gradients<T: Real, N: SegmentationNetwork<T>>(
    net: &N,
    batch: &PreparedBatch,
    method: Method,
    tau: f64,
    lambda: f64,
    weights: &LossWeights,
    mask_views: Option<&[ProbabilityMap<T>]>,
) -> Result<StepOutcome<T>> {
    ensure!(!batch.source_images.is_empty(), InvalidInput, "empty source batch");
    let mut grads = net.zero_grads();

    let mut probs = Vec::with_capacity(batch.source_images.len());
    let mut caches = Vec::with_capacity(batch.source_images.len());
    for img in &batch.source_images {
        let (logits, cache) = net.forward_train(&to_tensor(img))?;
        probs.push(ProbabilityMap::from_logits(&logits));
        caches.push(cache);
    }
    let labels: Vec<&LabelMap> = batch.source_labels.iter().collect();
    let sup = supervised_loss(&probs, &labels, weights)?;
    for (cache, g) in caches.iter().zip(&sup.grad_logits) {
        net.backward(cache, g, &mut grads);
    }
    drop(caches);

    let mut ps_value = 0.0;
    let mut retained = 0.0;
    let mut pseudo = Vec::new();
    if method.uses_target() && !batch.target_views.is_empty() {
        let mut view_probs = Vec::with_capacity(batch.target_views.len());
        let mut view_caches = Vec::with_capacity(batch.target_views.len());
        for img in &batch.target_views {
            let (logits, cache) = net.forward_train(&to_tensor(img))?;
            view_probs.push(ProbabilityMap::from_logits(&logits));
            view_caches.push(cache);
        }
        pseudo = match method {
            Method::Tist => {
                let computed;
                let clean = match mask_views {
                    Some(v) => {
                        ensure!(
                            v.len() == view_probs.len(),
                            InvalidInput,
                            "{} mask views for {} target images",
                            v.len(),
                            view_probs.len()
                        );
                        v
                    }
                    None => {
                        computed = net.predict_probs(&batch.target_clean)?;
                        &computed[..]
                    }
                };
                clean
                    .iter()
                    .zip(&view_probs)
                    .map(|(a, b)| tist_pseudo_labels(a, b, tau))
                    .collect::<Result<Vec<_>>>()?
            }
            _ => view_probs
                .iter()
                .map(|b| st_pseudo_labels(b, tau))
                .collect::<Result<Vec<_>>>()?,
        };
        let kept: usize = pseudo.iter().map(|p| p.mask.count()).sum();
        let total: usize = view_probs.iter().map(|p| p.pixels()).sum();
        retained = kept as f64 / total as f64;
        let maps: Vec<&PseudoLabelMap> = pseudo.iter().map(|p| &p.labels).collect();
        let ps = pseudo_supervised_loss(&view_probs, &maps)?;
        ps_value = ps.value;
        let lam = T::from_f64(lambda);
        for (cache, g) in view_caches.iter().zip(&ps.grad_logits) {
            let scaled = g.map(|v| v * lam);
            net.backward(cache, &scaled, &mut grads);
        }
    }
    Ok(StepOutcome {
        metrics: StepMetrics {
            sup_loss: sup.value,
            ps_loss: ps_value,
            lambda,
            overall_loss: overall_loss(sup.value, ps_value, lambda),
            retained_fraction: retained,
        },
        grads,
        pseudo,
    })
}

/// Everything one step needs besides the model.
pub struct StepContext<'a> {
    pub cfg: &'a TrainConfig,
    pub epoch: usize,
    pub step: usize,
}

impl StepContext<'_> {
    fn rng(&self) -> crate::rng::Rng {
        derive_rng(self.cfg.seed, &[stream::AUGMENT, self.epoch as u64, self.step as u64])
    }

    fn lambda(&self) -> Result<f64> {
        lambda_at(&self.cfg.ramp(), self.epoch)
    }
}

fn run_step(
    model: &mut UNet<f32>,
    optimizer: &mut Optimizer<f32>,
    method: Method,
    source: &[&Sample],
    target: &[&Sample],
    ctx: &StepContext<'_>,
) -> Result<StepMetrics> {
    let target = if method.uses_target() { target } else { &[] };
    let batch = PreparedBatch::prepare(&mut ctx.rng(), &ctx.cfg.augment, source, target)?;
    let lambda = ctx.lambda()?;
    let lr = ctx.cfg.lr_at(ctx.epoch);
    let out = step_gradients(&*model, &batch, method, ctx.cfg.tau, lambda, &ctx.cfg.loss, None)?;
    if !out.metrics.overall_loss.is_finite() || !out.grads.all_finite() {
        return Err(Error::NonFiniteLoss {
            epoch: ctx.epoch,
            step: ctx.step,
            lambda,
            lr,
            batch_ids: batch.ids,
        });
    }
    optimizer.step(model.params_mut(), &out.grads, lr);
    Ok(out.metrics)
}

/// One TI-ST update on `model`.
pub fn tist_step(
    model: &mut UNet<f32>,
    optimizer: &mut Optimizer<f32>,
    source: &[&Sample],
    target: &[&Sample],
    ctx: &StepContext<'_>,
) -> Result<StepMetrics> {
    run_step(model, optimizer, Method::Tist, source, target, ctx)
}

/// One plain self-training update on `model`.
pub fn st_step(
    model: &mut UNet<f32>,
    optimizer: &mut Optimizer<f32>,
    source: &[&Sample],
    target: &[&Sample],
    ctx: &StepContext<'_>,
) -> Result<StepMetrics> {
    run_step(model, optimizer, Method::St, source, target, ctx)
}

/// One source-only update on `model`.
pub fn supervised_step(
    model: &mut UNet<f32>,
    optimizer: &mut Optimizer<f32>,
    source: &[&Sample],
    ctx: &StepContext<'_>,
) -> Result<StepMetrics> {
    run_step(model, optimizer, Method::Supervised, source, &[], ctx)
}

/// The four sample sets of one fold. Target training labels are withheld.
#[derive(Debug, Clone)]
pub struct TrainData {
    pub source_train: Dataset,
    pub target_train: Dataset,
    pub target_test: Dataset,
    pub source_test: Dataset,
}

impl TrainData {
    pub fn from_split(source: &Dataset, target: &Dataset, split: &FoldSplit) -> Result<Self> {
        Ok(Self {
            source_train: source.subset(&split.train_source_ids)?,
            target_train: target.subset(&split.train_target_ids)?.without_labels(),
            target_test: target.subset(&split.test_ids)?,
            source_test: source.subset(&split.source_test_ids)?,
        })
    }

    fn validate(&self, cfg: &TrainConfig) -> Result<()> {
        ensure!(!self.source_train.is_empty(), InvalidInput, "no source training samples");
        ensure!(
            !cfg.method.uses_target() || !self.target_train.is_empty(),
            InvalidInput,
            "method {} needs target training samples",
            cfg.method
        );
        for s in self.source_train.samples.iter().chain(&self.target_test.samples) {
            let label = s.label()?;
            if let Some(v) = label
                .distinct_values()
                .into_iter()
                .find(|&v| v != crate::image::IGNORE_INDEX && v as usize >= cfg.model.num_classes)
            {
                return Err(Error::InvalidInput(format!(
                    "sample `{}` has class {v} but the model has {} classes",
                    s.id, cfg.model.num_classes
                )));
            }
        }
        let sets = [&self.source_train, &self.target_train, &self.target_test, &self.source_test];
        for s in sets.iter().flat_map(|d| &d.samples) {
            ensure!(
                s.image.channels() == cfg.model.in_channels,
                InvalidInput,
                "sample `{}` has {} channels, model expects {}",
                s.id,
                s.image.channels(),
                cfg.model.in_channels
            );
            ensure!(
                s.image.height() % SIZE_MULTIPLE == 0 && s.image.width() % SIZE_MULTIPLE == 0,
                InvalidInput,
                "sample `{}` is {}x{}; sides must be multiples of {SIZE_MULTIPLE}",
                s.id,
                s.image.height(),
                s.image.width()
            );
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub lambda: f64,
    pub steps: usize,
    /// Means over the epoch's steps.
    pub sup_loss: f64,
    pub ps_loss: f64,
    pub overall_loss: f64,
    pub retained_fraction: f64,
    pub target_dice: Option<f64>,
    pub target_dice_pooled: Option<f64>,
    pub source_dice: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub config_hash: String,
    pub method: Method,
    pub tau: f64,
    pub seed: u64,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub best_target_dice: Option<f64>,
}

impl History {
    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }

    pub fn final_target_dice(&self) -> Option<f64> {
        self.last().and_then(|r| r.target_dice)
    }

    pub fn final_source_dice(&self) -> Option<f64> {
        self.last().and_then(|r| r.source_dice)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// One line of `metrics.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum MetricRecord {
    Step {
        config_hash: String,
        epoch: usize,
        step: usize,
        lr: f64,
        #[serde(flatten)]
        metrics: StepMetrics,
    },
    Epoch {
        config_hash: String,
        #[serde(flatten)]
        record: EpochRecord,
    },
}

impl MetricRecord {
    pub fn epoch(&self) -> usize {
        match self {
            MetricRecord::Step { epoch, .. } => *epoch,
            MetricRecord::Epoch { record, .. } => record.epoch,
        }
    }
}

/// Parses a metrics stream.
pub fn read_metrics(path: &Path) -> Result<Vec<MetricRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Run directory; nothing is written when absent.
    pub out_dir: Option<PathBuf>,
    /// Checkpoint to continue from.
    pub resume: Option<PathBuf>,
    /// Stop once this many epochs are complete (for interruption tests).
    pub stop_after: Option<usize>,
    /// Skip per-epoch evaluation except after the final epoch.
    pub eval_final_only: bool,
}

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const HISTORY_FILE: &str = "history.json";
pub const CONFIG_FILE: &str = "config.json";
pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const BEST_CHECKPOINT: &str = "best.ckpt";

#[derive(Debug)]
pub struct TrainOutcome {
    pub model: UNet<f32>,
    pub history: History,
    /// False when `stop_after` ended the run early.
    pub completed: bool,
}

struct RunFiles {
    dir: PathBuf,
}

impl RunFiles {
    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn append(&self, record: &MetricRecord) -> Result<()> {
        let path = self.path(METRICS_FILE);
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        let line = serde_json::to_string(record)?;
        writeln!(f, "{line}").map_err(|e| Error::io(&path, e))
    }

    /// Drops stream records from `from_epoch` on, left by an interrupted run.
    fn truncate_metrics(&self, from_epoch: usize) -> Result<()> {
        let path = self.path(METRICS_FILE);
        if !path.exists() {
            return Ok(());
        }
        let kept: Vec<String> = read_metrics(&path)?
            .into_iter()
            .filter(|r| r.epoch() < from_epoch)
            .map(|r| serde_json::to_string(&r))
            .collect::<std::result::Result<_, _>>()?;
        let mut text = kept.join("\n");
        if !text.is_empty() {
            text.push('\n');
        }
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    fn write_json<S: Serialize>(&self, name: &str, value: &S) -> Result<()> {
        let path = self.path(name);
        let text = serde_json::to_string_pretty(value)?;
        fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }
}

fn checkpoint_meta(cfg: &TrainConfig, hash: &str, epoch: usize, opt: &Optimizer<f32>, history: &History) -> Result<CheckpointMeta> {
    Ok(CheckpointMeta {
        epoch,
        config_hash: hash.to_string(),
        seed: cfg.seed,
        model: cfg.model.clone(),
        optimizer: *opt.config(),
        optimizer_steps: opt.steps(),
        next_rng_epoch: epoch,
        extra: serde_json::json!({ "history": history, "config": cfg }),
    })
}

/// Trains `cfg.method` for `cfg.epochs` epochs.
pub fn train(cfg: &TrainConfig, data: &TrainData, opts: &RunOptions) -> Result<TrainOutcome> {
    cfg.validate()?;
    data.validate(cfg)?;
    let reduced;
    let data = if cfg.labeled_fraction < 1.0 {
        reduced = TrainData {
            source_train: data.source_train.fraction(cfg.labeled_fraction, cfg.seed)?,
            ..data.clone()
        };
        &reduced
    } else {
        data
    };
    let hash = cfg.hash();
    let files = match &opts.out_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            Some(RunFiles { dir: dir.clone() })
        }
        None => None,
    };

    let (mut model, mut optimizer, mut history) = match &opts.resume {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            ensure!(
                ck.meta.config_hash == hash,
                InvalidConfig,
                "checkpoint {} belongs to run {}, not {hash}",
                path.display(),
                ck.meta.config_hash
            );
            let history: History = serde_json::from_value(ck.meta.extra["history"].clone())?;
            let (m, o) = ck.restore()?;
            (m, o, history)
        }
        None => {
            let model = UNet::<f32>::new(cfg.model.clone(), &mut derive_rng(cfg.seed, &[stream::INIT]))?;
            let optimizer = Optimizer::new(cfg.optimizer, &model.params())?;
            let history = History {
                config_hash: hash.clone(),
                method: cfg.method,
                tau: cfg.tau,
                seed: cfg.seed,
                epochs: Vec::new(),
                best_epoch: None,
                best_target_dice: None,
            };
            (model, optimizer, history)
        }
    };
    let start = history.epochs.len();
    if let Some(f) = &files {
        f.write_json(CONFIG_FILE, &serde_json::json!({ "config_hash": hash, "config": cfg }))?;
        f.truncate_metrics(start)?;
    }

    let n_target = if cfg.method.uses_target() { data.target_train.len() } else { 0 };
    let mut completed = true;
    for epoch in start..cfg.epochs {
        if opts.stop_after.is_some_and(|n| epoch >= n) {
            completed = false;
            break;
        }
        let lr = cfg.lr_at(epoch);
        let lambda = lambda_at(&cfg.ramp(), epoch)?;
        let batches = epoch_batches(data.source_train.len(), n_target, cfg.batch_size, cfg.seed, epoch)?;
        let mut sums = [0.0f64; 4];
        for (step, b) in batches.iter().enumerate() {
            let source: Vec<&Sample> = b.source.iter().map(|&i| &data.source_train.samples[i]).collect();
            let target: Vec<&Sample> = b.target.iter().map(|&i| &data.target_train.samples[i]).collect();
            let ctx = StepContext { cfg, epoch, step };
            let metrics = match run_step(&mut model, &mut optimizer, cfg.method, &source, &target, &ctx) {
                Ok(m) => m,
                Err(e) => {
                    if let (Some(f), Error::NonFiniteLoss { .. }) = (&files, &e) {
                        let snapshot = serde_json::json!({ "error": e.to_string(), "epoch": epoch, "step": step });
                        f.write_json("abort.json", &snapshot)?;
                    }
                    return Err(e);
                }
            };
            for (s, v) in sums.iter_mut().zip([
                metrics.sup_loss,
                metrics.ps_loss,
                metrics.overall_loss,
                metrics.retained_fraction,
            ]) {
                *s += v;
            }
            if let Some(f) = &files {
                f.append(&MetricRecord::Step {
                    config_hash: hash.clone(),
                    epoch,
                    step,
                    lr,
                    metrics,
                })?;
            }
        }

        let last_epoch = epoch + 1 == cfg.epochs;
        let (target_dice, target_dice_pooled, source_dice) = if !opts.eval_final_only || last_epoch {
            let t = if data.target_test.is_empty() {
                None
            } else {
                Some(evaluate(&model, &data.target_test, cfg.eval_classes)?)
            };
            let s = if data.source_test.is_empty() {
                None
            } else {
                Some(evaluate(&model, &data.source_test, cfg.eval_classes)?.mean)
            };
            (t.as_ref().map(|r| r.mean), t.as_ref().map(|r| r.pooled_mean), s)
        } else {
            (None, None, None)
        };
        let n = batches.len() as f64;
        let record = EpochRecord {
            epoch,
            lr,
            lambda,
            steps: batches.len(),
            sup_loss: sums[0] / n,
            ps_loss: sums[1] / n,
            overall_loss: sums[2] / n,
            retained_fraction: sums[3] / n,
            target_dice,
            target_dice_pooled,
            source_dice,
        };
        log::info!(
            "[{}] epoch {epoch}: sup {:.4} ps {:.4} kept {:.3} target dice {:?} source dice {:?}",
            cfg.method,
            record.sup_loss,
            record.ps_loss,
            record.retained_fraction,
            record.target_dice,
            record.source_dice
        );
        let improved = match (target_dice, history.best_target_dice) {
            (Some(d), Some(b)) => d > b,
            (Some(_), None) => true,
            _ => false,
        };
        if improved {
            history.best_epoch = Some(epoch);
            history.best_target_dice = target_dice;
        }
        history.epochs.push(record.clone());
        if let Some(f) = &files {
            f.append(&MetricRecord::Epoch {
                config_hash: hash.clone(),
                record,
            })?;
            let meta = checkpoint_meta(cfg, &hash, epoch + 1, &optimizer, &history)?;
            let ck = Checkpoint::capture(meta, &model, &optimizer);
            ck.save(&f.path(LAST_CHECKPOINT))?;
            if improved {
                ck.save(&f.path(BEST_CHECKPOINT))?;
            }
            f.write_json(HISTORY_FILE, &history)?;
        }
    }
    Ok(TrainOutcome {
        model,
        history,
        completed,
    })
}
