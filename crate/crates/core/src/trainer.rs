//! Training loop, attractor schedule, evaluation, ablations and seed sweeps.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use rayon::ThreadPool;

use crate::checkpoint::{Checkpoint, Head};
use crate::dataset::{
    batch_iter, Label, Partition, PartitionName, Partitions, SpeakerId, Utterance,
};
use crate::encoder::{
    adam_step, backward, cosine_lr, forward, Activation, AdamState, EncoderParams, LrSchedule,
};
use crate::error::{Error, Result};
use crate::metrics::{compute_metrics, Metrics, ScoreSet, TdcfParams};
use crate::numerics::SeededRng;
use crate::objective::{
    enrollment_center, oc_softmax_loss, samo_loss, softmax_ce_loss, update_attractors,
    AttractorAveraging, AttractorSet, MarginConfig, OcCenter, SoftmaxHead,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Objective {
    Samo,
    OcSoftmax,
    Softmax,
}

impl Objective {
    /// Default margins; the softmax baseline ignores them.
    pub fn default_margins(self) -> MarginConfig {
        match self {
            Objective::Samo => MarginConfig::SAMO,
            Objective::OcSoftmax | Objective::Softmax => MarginConfig::OC_SOFTMAX,
        }
    }
}

impl FromStr for Objective {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "samo" => Ok(Objective::Samo),
            "ocs" | "oc_softmax" | "oc-softmax" => Ok(Objective::OcSoftmax),
            "softmax" => Ok(Objective::Softmax),
            _ => Err(Error::Config(format!("unknown objective `{s}`"))),
        }
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Objective::Samo => "samo",
            Objective::OcSoftmax => "ocs",
            Objective::Softmax => "softmax",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttractorInit {
    OneHot,
    RandomOrthonormal,
}

impl FromStr for AttractorInit {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "onehot" | "one_hot" => Ok(AttractorInit::OneHot),
            "random_orthonormal" => Ok(AttractorInit::RandomOrthonormal),
            _ => Err(Error::Config(format!("unknown attractor init `{s}`"))),
        }
    }
}

impl fmt::Display for AttractorInit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AttractorInit::OneHot => "onehot",
            AttractorInit::RandomOrthonormal => "random_orthonormal",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub objective: Objective,
    pub epochs: usize,
    /// Attractors are refreshed at the start of every epoch divisible by this.
    pub update_interval: usize,
    /// Explicit update epochs; replaces `update_interval` when set.
    pub update_epochs_override: Option<Vec<usize>>,
    pub attractors_frozen: bool,
    pub attractor_init: AttractorInit,
    pub attractor_averaging: AttractorAveraging,
    pub margins: MarginConfig,
    pub lr0: f64,
    pub lr_min: f64,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub seed: u64,
    pub hidden_dims: Vec<usize>,
    pub embedding_dim: usize,
    pub activation: Activation,
    /// Worker threads for per-utterance work. Results do not depend on it.
    pub threads: usize,
    pub tdcf: TdcfParams,
}

impl TrainConfig {
    pub fn new(objective: Objective) -> Self {
        TrainConfig {
            objective,
            epochs: 100,
            update_interval: 3,
            update_epochs_override: None,
            attractors_frozen: false,
            attractor_init: AttractorInit::OneHot,
            attractor_averaging: AttractorAveraging::Normalized,
            margins: objective.default_margins(),
            lr0: 1e-4,
            lr_min: 0.0,
            batch_size: 24,
            weight_decay: 0.0,
            seed: 0,
            hidden_dims: vec![64, 64],
            embedding_dim: 160,
            activation: Activation::Relu,
            threads: 1,
            tdcf: TdcfParams::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.update_interval == 0 {
            return bad("update_interval must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.lr0.is_finite() && self.lr0 > 0.0) {
            return bad("lr must be positive");
        }
        if !(self.lr_min.is_finite() && self.lr_min >= 0.0 && self.lr_min <= self.lr0) {
            return bad("lr_min must lie in [0, lr]");
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return bad("weight_decay must be non-negative");
        }
        if self.embedding_dim == 0 || self.hidden_dims.contains(&0) {
            return bad("layer widths must be positive");
        }
        if self.threads == 0 {
            return bad("threads must be at least 1");
        }
        if let Some(list) = &self.update_epochs_override {
            if list.contains(&0) {
                return bad("update epochs are 1-based");
            }
        }
        if self.objective != Objective::Softmax {
            self.margins.validate()?;
        }
        self.tdcf.validate()
    }

    /// Whether attractors are recomputed at the start of 1-based `epoch`.
    pub fn updates_at(&self, epoch: usize) -> bool {
        if self.objective != Objective::Samo || self.attractors_frozen {
            return false;
        }
        match &self.update_epochs_override {
            Some(list) => list.contains(&epoch),
            None => epoch.is_multiple_of(self.update_interval),
        }
    }

    pub fn encoder_dims(&self, input_dim: usize) -> Vec<usize> {
        let mut dims = vec![input_dim];
        dims.extend(&self.hidden_dims);
        dims.push(self.embedding_dim);
        dims
    }

    fn schedule(&self) -> LrSchedule {
        LrSchedule {
            lr0: self.lr0,
            lr_min: self.lr_min,
            total_epochs: self.epochs,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ScoringMode {
    /// Claimed speaker's enrollment center.
    Enrollment,
    /// Nearest training attractor.
    NoEnrollment,
}

impl ScoringMode {
    pub const BOTH: [ScoringMode; 2] = [ScoringMode::Enrollment, ScoringMode::NoEnrollment];
}

impl FromStr for ScoringMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "enroll" => Ok(ScoringMode::Enrollment),
            "noenroll" => Ok(ScoringMode::NoEnrollment),
            _ => Err(Error::Config(format!("unknown scoring mode `{s}`"))),
        }
    }
}

impl fmt::Display for ScoringMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScoringMode::Enrollment => "enroll",
            ScoringMode::NoEnrollment => "noenroll",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoredUtterance {
    pub utt_id: String,
    pub speaker: SpeakerId,
    pub label: Label,
    pub attack_tag: String,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub partition: PartitionName,
    pub mode: ScoringMode,
    pub scores: Vec<ScoredUtterance>,
    pub metrics: Metrics,
}

impl Evaluation {
    pub fn score_set(&self) -> ScoreSet {
        score_set(&self.scores)
    }
}

fn score_set(scores: &[ScoredUtterance]) -> ScoreSet {
    let mut set = ScoreSet::default();
    for s in scores {
        match s.label {
            Label::BonaFide => set.bona.push(s.score),
            Label::Spoof => set.spoof.push(s.score),
        }
    }
    set
}

/// Per-speaker centers from the partition's bona fide enrollment utterances.
pub fn enrollment_centers(
    model: &Checkpoint,
    partition: &Partition,
) -> Result<BTreeMap<SpeakerId, Vec<f64>>> {
    let mut grouped: BTreeMap<&str, Vec<Vec<f64>>> = BTreeMap::new();
    for u in partition
        .enroll_utts
        .iter()
        .filter(|u| u.label.is_bona_fide())
    {
        grouped
            .entry(u.speaker.as_str())
            .or_default()
            .push(model.embed_normalized(&u.features)?);
    }
    grouped
        .into_iter()
        .map(|(s, embs)| Ok((s.to_string(), enrollment_center(&embs)?)))
        .collect()
}

/// Scores every utterance the partition scores, in partition order.
pub fn score_partition(
    model: &Checkpoint,
    partition: &Partition,
    mode: ScoringMode,
) -> Result<Vec<ScoredUtterance>> {
    let centers = match mode {
        ScoringMode::Enrollment => {
            if partition.enroll_utts.is_empty() {
                return Err(Error::MissingEnrollment(partition.name.to_string()));
            }
            enrollment_centers(model, partition)?
        }
        ScoringMode::NoEnrollment => BTreeMap::new(),
    };
    if partition.scored_utts().is_empty() {
        return Err(Error::Protocol(format!(
            "partition `{}` has no utterances to score",
            partition.name
        )));
    }
    partition
        .scored_utts()
        .iter()
        .map(|u| {
            let x_hat = model.embed_normalized(&u.features)?;
            Ok(ScoredUtterance {
                utt_id: u.utt_id.clone(),
                speaker: u.speaker.clone(),
                label: u.label,
                attack_tag: u.attack_tag.clone(),
                score: model.score(&x_hat, &u.speaker, &centers)?,
            })
        })
        .collect()
}

pub fn evaluate(
    model: &Checkpoint,
    partition: &Partition,
    mode: ScoringMode,
    tdcf: &TdcfParams,
) -> Result<Evaluation> {
    let scores = score_partition(model, partition, mode)?;
    let metrics = compute_metrics(&score_set(&scores), tdcf)?;
    Ok(Evaluation {
        partition: partition.name,
        mode,
        scores,
        metrics,
    })
}

/// Both scoring modes, enrollment first.
pub fn evaluate_both(
    model: &Checkpoint,
    partition: &Partition,
    tdcf: &TdcfParams,
) -> Result<Vec<Evaluation>> {
    ScoringMode::BOTH
        .iter()
        .map(|&m| evaluate(model, partition, m, tdcf))
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    /// Utterance-weighted mean training loss.
    pub train_loss: f64,
    pub attractors_updated: bool,
    pub dev_enroll: Metrics,
    pub dev_noenroll: Metrics,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// State before the first update.
    pub initial: Checkpoint,
    /// Lowest dev EER with enrollment, earliest epoch on ties.
    pub best: Checkpoint,
    pub last: Checkpoint,
    pub history: Vec<EpochRecord>,
}

/// Index of the record with the lowest dev EER (with enrollment); ties go
/// to the earliest epoch.
pub fn select_model(history: &[EpochRecord]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, r) in history.iter().enumerate() {
        if best.is_none_or(|b| r.dev_enroll.eer < history[b].dev_enroll.eer) {
            best = Some(i);
        }
    }
    best
}

/// Trainable tensors in a fixed order: encoder `W0, b0, ...`, then the
/// OC-Softmax center or the softmax head. Attractors are not trained by
/// gradient.
pub fn trainable_tensors_mut(model: &mut Checkpoint) -> Vec<&mut [f64]> {
    let mut out = model.encoder.tensors_mut();
    match &mut model.head {
        Head::Attractors(_) => {}
        Head::Center(c) => out.push(&mut c.w),
        Head::Softmax(h) => {
            out.push(h.weight.as_mut_slice());
            out.push(&mut h.bias);
        }
    }
    out
}

pub fn trainable_tensors(model: &Checkpoint) -> Vec<&[f64]> {
    let mut out = model.encoder.tensors();
    match &model.head {
        Head::Attractors(_) => {}
        Head::Center(c) => out.push(&c.w),
        Head::Softmax(h) => {
            out.push(h.weight.as_slice());
            out.push(&h.bias);
        }
    }
    out
}

fn par_map<T, F>(pool: Option<&ThreadPool>, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match pool {
        Some(p) => p.install(|| (0..n).into_par_iter().map(&f).collect()),
        None => (0..n).map(f).collect(),
    }
}

/// Mean batch loss and its gradient w.r.t. [`trainable_tensors`].
pub fn loss_and_gradients(
    model: &Checkpoint,
    batch: &[&Utterance],
    margins: &MarginConfig,
) -> Result<(f64, Vec<Vec<f64>>)> {
    loss_and_gradients_in(model, batch, margins, None)
}

fn loss_and_gradients_in(
    model: &Checkpoint,
    batch: &[&Utterance],
    margins: &MarginConfig,
    pool: Option<&ThreadPool>,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let passes = par_map(pool, batch.len(), |i| {
        forward(&model.encoder, &batch[i].features)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let (embeddings, caches): (Vec<_>, Vec<_>) = passes.into_iter().unzip();
    let labels: Vec<Label> = batch.iter().map(|u| u.label).collect();

    let (out, head_grads) = match &model.head {
        Head::Attractors(a) => {
            let speakers: Vec<&str> = batch.iter().map(|u| u.speaker.as_str()).collect();
            (
                samo_loss(&embeddings, &labels, &speakers, a, margins)?,
                vec![],
            )
        }
        Head::Center(c) => {
            let (out, gw) = oc_softmax_loss(&embeddings, &labels, c, margins)?;
            (out, vec![gw])
        }
        Head::Softmax(h) => {
            let (out, g) = softmax_ce_loss(&embeddings, &labels, h)?;
            (out, vec![g.weight.as_slice().to_vec(), g.bias])
        }
    };

    let per_sample = par_map(pool, batch.len(), |i| {
        backward(&model.encoder, &caches[i], &out.grad_embeddings[i])
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    // summed in batch order so the result does not depend on the pool
    let mut enc = model.encoder.zeros_like();
    for g in &per_sample {
        enc.accumulate(g);
    }
    let mut grads: Vec<Vec<f64>> = enc.tensors().iter().map(|t| t.to_vec()).collect();
    grads.extend(head_grads);
    Ok((out.loss, grads))
}

fn training_speakers(utts: &[Utterance]) -> Result<Vec<SpeakerId>> {
    let mut bona: Vec<SpeakerId> = utts
        .iter()
        .filter(|u| u.label.is_bona_fide())
        .map(|u| u.speaker.clone())
        .collect();
    bona.sort();
    bona.dedup();
    if let Some(u) = utts
        .iter()
        .find(|u| bona.binary_search(&u.speaker).is_err())
    {
        return Err(Error::Protocol(format!(
            "training speaker `{}` has no bona fide utterances",
            u.speaker
        )));
    }
    Ok(bona)
}

fn build_pool(threads: usize) -> Result<Option<ThreadPool>> {
    if threads <= 1 {
        return Ok(None);
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map(Some)
        .map_err(|e| Error::Config(format!("cannot start worker threads: {e}")))
}

/// Fresh model for `cfg` with seeded weights.
pub fn init_model(cfg: &TrainConfig, train_utts: &[Utterance]) -> Result<Checkpoint> {
    let first = train_utts
        .first()
        .ok_or_else(|| Error::Protocol("training partition is empty".into()))?;
    let mut rng = SeededRng::new(cfg.seed);
    let mut enc_rng = rng.fork();
    let mut head_rng = rng.fork();
    let encoder = EncoderParams::init(
        &cfg.encoder_dims(first.features.len()),
        cfg.activation,
        &mut enc_rng,
    )?;
    let d = cfg.embedding_dim;
    let head = match cfg.objective {
        Objective::Samo => {
            let speakers = training_speakers(train_utts)?;
            Head::Attractors(match cfg.attractor_init {
                AttractorInit::OneHot => AttractorSet::one_hot(&speakers, d)?,
                AttractorInit::RandomOrthonormal => {
                    AttractorSet::random_orthonormal(&speakers, d, &mut head_rng)?
                }
            })
        }
        Objective::OcSoftmax => Head::Center(OcCenter::random(d, &mut head_rng)?),
        Objective::Softmax => Head::Softmax(SoftmaxHead::init(d, &mut head_rng)),
    };
    Ok(Checkpoint {
        epoch: 0,
        encoder,
        head,
    })
}

fn batch_rng(seed: u64) -> SeededRng {
    let mut rng = SeededRng::new(seed);
    // the first two forks seed the weights
    rng.fork();
    rng.fork();
    rng.fork()
}

fn dev_metrics(
    model: &Checkpoint,
    dev: &Partition,
    tdcf: &TdcfParams,
) -> Result<(Metrics, Metrics)> {
    let enroll = evaluate(model, dev, ScoringMode::Enrollment, tdcf)?.metrics;
    let noenroll = match model.head {
        // the baselines score identically in both modes
        Head::Attractors(_) => evaluate(model, dev, ScoringMode::NoEnrollment, tdcf)?.metrics,
        _ => enroll,
    };
    Ok((enroll, noenroll))
}

pub fn train(cfg: &TrainConfig, parts: &Partitions) -> Result<TrainOutcome> {
    train_with(cfg, parts, |_, _| Ok(()))
}

/// Like [`train`], calling `observer` with the model and record after
/// every epoch.
pub fn train_with<F>(cfg: &TrainConfig, parts: &Partitions, mut observer: F) -> Result<TrainOutcome>
where
    F: FnMut(&Checkpoint, &EpochRecord) -> Result<()>,
{
    cfg.validate()?;
    let train_utts = &parts.train.train_utts;
    if parts.dev.test_utts.is_empty() {
        return Err(Error::Protocol(
            "dev partition has no test utterances".into(),
        ));
    }
    let mut model = init_model(cfg, train_utts)?;
    let initial = model.clone();
    let shapes: Vec<usize> = trainable_tensors(&model).iter().map(|t| t.len()).collect();
    let mut adam = AdamState::new(&shapes);
    let pool = build_pool(cfg.threads)?;
    let mut rng = batch_rng(cfg.seed);
    let sched = cfg.schedule();

    let mut history: Vec<EpochRecord> = Vec::with_capacity(cfg.epochs);
    let mut best = model.clone();
    let mut best_eer = f64::INFINITY;
    for epoch in 1..=cfg.epochs {
        let mut updated = false;
        if cfg.updates_at(epoch) {
            if let Head::Attractors(a) = &model.head {
                let next =
                    update_attractors(&model.encoder, train_utts, a, cfg.attractor_averaging)?;
                model.head = Head::Attractors(next);
                updated = true;
            }
        }
        let lr = cosine_lr(epoch - 1, &sched);
        let mut loss_sum = 0.0;
        for (b, batch) in batch_iter(train_utts, cfg.batch_size, &mut rng)
            .iter()
            .enumerate()
        {
            let (loss, mut grads) =
                loss_and_gradients_in(&model, batch, &cfg.margins, pool.as_ref())?;
            let fail = |detail: &str| Error::NonFiniteLoss {
                epoch,
                batch: b + 1,
                detail: detail.to_string(),
            };
            if !loss.is_finite() {
                return Err(fail("loss"));
            }
            if cfg.weight_decay > 0.0 {
                for (g, p) in grads.iter_mut().zip(trainable_tensors(&model)) {
                    for (gi, pi) in g.iter_mut().zip(p) {
                        *gi += cfg.weight_decay * pi;
                    }
                }
            }
            if grads.iter().flatten().any(|g| !g.is_finite()) {
                return Err(fail("gradient"));
            }
            let grad_refs: Vec<&[f64]> = grads.iter().map(Vec::as_slice).collect();
            adam_step(
                &mut trainable_tensors_mut(&mut model),
                &grad_refs,
                &mut adam,
                lr,
            )?;
            loss_sum += loss * batch.len() as f64;
        }
        model.epoch = epoch;
        let (dev_enroll, dev_noenroll) = dev_metrics(&model, &parts.dev, &cfg.tdcf)?;
        let record = EpochRecord {
            epoch,
            lr,
            train_loss: loss_sum / train_utts.len() as f64,
            attractors_updated: updated,
            dev_enroll,
            dev_noenroll,
        };
        observer(&model, &record)?;
        // strict comparison keeps the earliest epoch on ties, as select_model does
        if record.dev_enroll.eer < best_eer {
            best_eer = record.dev_enroll.eer;
            best = model.clone();
        }
        history.push(record);
    }
    Ok(TrainOutcome {
        initial,
        best,
        last: model,
        history,
    })
}

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from(
        "epoch,lr,train_loss,attractors_updated,dev_eer_enroll,dev_min_tdcf_enroll,dev_eer_noenroll,dev_min_tdcf_noenroll\n",
    );
    for r in history {
        out.push_str(&format!(
            "{},{:e},{:.10e},{},{:.10e},{:.10e},{:.10e},{:.10e}\n",
            r.epoch,
            r.lr,
            r.train_loss,
            r.attractors_updated as u8,
            r.dev_enroll.eer,
            r.dev_enroll.min_tdcf,
            r.dev_noenroll.eer,
            r.dev_noenroll.min_tdcf
        ));
    }
    out
}

pub fn scores_csv(evals: &[Evaluation]) -> String {
    let mut out = String::from("utt_id,speaker,label,attack_tag,mode,score\n");
    for e in evals {
        for s in &e.scores {
            out.push_str(&format!(
                "{},{},{},{},{},{:.16e}\n",
                s.utt_id,
                s.speaker,
                s.label.as_u8(),
                s.attack_tag,
                e.mode,
                s.score
            ));
        }
    }
    out
}

pub fn metrics_csv(evals: &[Evaluation]) -> String {
    let rows: Vec<(String, Metrics)> = evals
        .iter()
        .map(|e| (e.mode.to_string(), e.metrics))
        .collect();
    crate::metrics::metrics_csv(&rows)
}

/// Attractor ablations, numbered as in the results table of the method.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AblationSetup {
    /// 2: one-hot attractors, never updated.
    OneHotFixed,
    /// 3: a single update at epoch 2 and none afterwards.
    SingleUpdate,
    /// 4: update every epoch.
    EveryEpoch,
    /// 5: update every 10 epochs.
    EveryTenEpochs,
}

impl AblationSetup {
    pub const ALL: [AblationSetup; 4] = [
        AblationSetup::OneHotFixed,
        AblationSetup::SingleUpdate,
        AblationSetup::EveryEpoch,
        AblationSetup::EveryTenEpochs,
    ];

    pub fn from_id(id: u8) -> Result<Self> {
        match id {
            2 => Ok(AblationSetup::OneHotFixed),
            3 => Ok(AblationSetup::SingleUpdate),
            4 => Ok(AblationSetup::EveryEpoch),
            5 => Ok(AblationSetup::EveryTenEpochs),
            _ => Err(Error::Config(format!(
                "ablation setup must be 2..=5, got {id}"
            ))),
        }
    }

    pub fn id(self) -> u8 {
        match self {
            AblationSetup::OneHotFixed => 2,
            AblationSetup::SingleUpdate => 3,
            AblationSetup::EveryEpoch => 4,
            AblationSetup::EveryTenEpochs => 5,
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            AblationSetup::OneHotFixed => "one-hot and fixed attractors",
            AblationSetup::SingleUpdate => "w/o speaker attractor update",
            AblationSetup::EveryEpoch => "update every epoch (M=1)",
            AblationSetup::EveryTenEpochs => "update every 10 epochs (M=10)",
        }
    }

    /// `base` with the schedule of this setup and the SAMO objective.
    pub fn apply(self, base: &TrainConfig) -> TrainConfig {
        let mut cfg = base.clone();
        cfg.objective = Objective::Samo;
        cfg.attractors_frozen = false;
        cfg.update_epochs_override = None;
        match self {
            AblationSetup::OneHotFixed => {
                cfg.attractor_init = AttractorInit::OneHot;
                cfg.attractors_frozen = true;
            }
            AblationSetup::SingleUpdate => cfg.update_epochs_override = Some(vec![2]),
            AblationSetup::EveryEpoch => cfg.update_interval = 1,
            AblationSetup::EveryTenEpochs => cfg.update_interval = 10,
        }
        cfg
    }
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub config: TrainConfig,
    pub outcome: TrainOutcome,
    /// Eval partition, best checkpoint, enrollment first.
    pub eval: Vec<Evaluation>,
}

/// Trains `cfg` and evaluates the selected model on the eval partition.
pub fn train_and_evaluate(cfg: &TrainConfig, parts: &Partitions) -> Result<RunResult> {
    let outcome = train(cfg, parts)?;
    let eval = evaluate_both(&outcome.best, &parts.eval, &cfg.tdcf)?;
    Ok(RunResult {
        config: cfg.clone(),
        outcome,
        eval,
    })
}

pub fn run_ablation(
    setup: AblationSetup,
    base: &TrainConfig,
    parts: &Partitions,
) -> Result<RunResult> {
    train_and_evaluate(&setup.apply(base), parts)
}

/// Mean and best (lowest) eval metrics over seeds for one scoring mode.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SeedSummary {
    pub mode: ScoringMode,
    pub mean_eer: f64,
    pub best_eer: f64,
    pub mean_min_tdcf: f64,
    pub best_min_tdcf: f64,
}

pub fn summarize_seeds(runs: &[RunResult]) -> Vec<SeedSummary> {
    ScoringMode::BOTH
        .iter()
        .map(|&mode| {
            let ms: Vec<Metrics> = runs
                .iter()
                .flat_map(|r| r.eval.iter().filter(|e| e.mode == mode).map(|e| e.metrics))
                .collect();
            let n = ms.len().max(1) as f64;
            SeedSummary {
                mode,
                mean_eer: ms.iter().map(|m| m.eer).sum::<f64>() / n,
                best_eer: ms.iter().map(|m| m.eer).fold(f64::INFINITY, f64::min),
                mean_min_tdcf: ms.iter().map(|m| m.min_tdcf).sum::<f64>() / n,
                best_min_tdcf: ms.iter().map(|m| m.min_tdcf).fold(f64::INFINITY, f64::min),
            }
        })
        .collect()
}

/// One independent run per seed. With `base.threads > 1` the seeds run
/// concurrently; each run is single-threaded and results come back in
/// seed order.
pub fn run_seeds(base: &TrainConfig, parts: &Partitions, seeds: &[u64]) -> Result<Vec<RunResult>> {
    let configs: Vec<TrainConfig> = seeds
        .iter()
        .map(|&seed| TrainConfig {
            seed,
            threads: 1,
            ..base.clone()
        })
        .collect();
    match build_pool(base.threads.min(seeds.len().max(1)))? {
        Some(pool) => pool.install(|| {
            configs
                .par_iter()
                .map(|c| train_and_evaluate(c, parts))
                .collect()
        }),
        None => configs
            .iter()
            .map(|c| train_and_evaluate(c, parts))
            .collect(),
    }
}

pub fn seed_summary_csv(runs: &[RunResult]) -> String {
    let mut out = String::from("seed,mode,eer,min_tdcf,best_epoch\n");
    for r in runs {
        for e in &r.eval {
            out.push_str(&format!(
                "{},{},{:.10e},{:.10e},{}\n",
                r.config.seed, e.mode, e.metrics.eer, e.metrics.min_tdcf, r.outcome.best.epoch
            ));
        }
    }
    for s in summarize_seeds(runs) {
        out.push_str(&format!(
            "mean,{},{:.10e},{:.10e},\nbest,{},{:.10e},{:.10e},\n",
            s.mode, s.mean_eer, s.mean_min_tdcf, s.mode, s.best_eer, s.best_min_tdcf
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic, split_partitions, Protocol, SynthConfig};

    fn parts() -> Partitions {
        let corpus = generate_synthetic(&SynthConfig {
            n_speakers: 4,
            bona_per_speaker: 8,
            spoof_per_attack: 8,
            ..SynthConfig::default()
        })
        .unwrap();
        let protocol = Protocol::auto(&corpus, 2);
        split_partitions(&corpus, &protocol, &mut SeededRng::new(0)).unwrap()
    }

    fn small(objective: Objective) -> TrainConfig {
        TrainConfig {
            epochs: 4,
            hidden_dims: vec![6],
            embedding_dim: 5,
            batch_size: 4,
            lr0: 1e-2,
            ..TrainConfig::new(objective)
        }
    }

    #[test]
    fn update_schedule() {
        let mut cfg = TrainConfig::new(Objective::Samo);
        let epochs: Vec<usize> = (1..=10).filter(|&e| cfg.updates_at(e)).collect();
        assert_eq!(epochs, [3, 6, 9]);
        cfg.update_epochs_override = Some(vec![2]);
        assert!(cfg.updates_at(2) && !cfg.updates_at(3));
        cfg.attractors_frozen = true;
        assert!(!cfg.updates_at(2));
        assert!(!TrainConfig::new(Objective::OcSoftmax).updates_at(3));
    }

    #[test]
    fn objective_names() {
        for o in [Objective::Samo, Objective::OcSoftmax, Objective::Softmax] {
            assert_eq!(o.to_string().parse::<Objective>().unwrap(), o);
        }
        assert_eq!(
            "oc_softmax".parse::<Objective>().unwrap(),
            Objective::OcSoftmax
        );
        assert!("svm".parse::<Objective>().is_err());
    }

    #[test]
    fn select_model_prefers_earliest_minimum() {
        let m = |eer| Metrics {
            eer,
            eer_threshold: 0.0,
            min_tdcf: 0.0,
        };
        let rec = |epoch, eer| EpochRecord {
            epoch,
            lr: 0.0,
            train_loss: 0.0,
            attractors_updated: false,
            dev_enroll: m(eer),
            dev_noenroll: m(0.0),
        };
        let h = vec![rec(1, 0.3), rec(2, 0.1), rec(3, 0.2), rec(4, 0.1)];
        assert_eq!(select_model(&h), Some(1));
        assert_eq!(select_model(&[]), None);
    }

    #[test]
    fn every_objective_trains_and_best_matches_selection() {
        let p = parts();
        for o in [Objective::Samo, Objective::OcSoftmax, Objective::Softmax] {
            let cfg = small(o);
            let out = train(&cfg, &p).unwrap();
            assert_eq!(out.history.len(), 4);
            let i = select_model(&out.history).unwrap();
            assert_eq!(out.best.epoch, out.history[i].epoch);
            assert_eq!(out.last.epoch, 4);
            assert!(out.history.iter().all(|r| r.train_loss.is_finite()));
        }
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let p = parts();
        let a = train(&small(Objective::Samo), &p).unwrap();
        let b = train(
            &TrainConfig {
                threads: 3,
                ..small(Objective::Samo)
            },
            &p,
        )
        .unwrap();
        assert_eq!(a.last, b.last);
        assert_eq!(a.history, b.history);
    }

    #[test]
    fn baseline_dev_modes_agree() {
        let p = parts();
        let out = train(&small(Objective::OcSoftmax), &p).unwrap();
        for r in &out.history {
            assert_eq!(r.dev_enroll, r.dev_noenroll);
        }
    }

    #[test]
    fn ablation_configs() {
        let base = TrainConfig::new(Objective::OcSoftmax);
        let two = AblationSetup::OneHotFixed.apply(&base);
        assert_eq!(two.objective, Objective::Samo);
        assert!((1..=100).all(|e| !two.updates_at(e)));
        let three = AblationSetup::SingleUpdate.apply(&base);
        assert_eq!(
            (1..=100)
                .filter(|&e| three.updates_at(e))
                .collect::<Vec<_>>(),
            [2]
        );
        let four = AblationSetup::EveryEpoch.apply(&base);
        assert!((1..=100).all(|e| four.updates_at(e)));
        let five = AblationSetup::EveryTenEpochs.apply(&base);
        assert_eq!((1..=100).filter(|&e| five.updates_at(e)).count(), 10);
        for s in AblationSetup::ALL {
            assert_eq!(AblationSetup::from_id(s.id()).unwrap(), s);
        }
        assert!(AblationSetup::from_id(1).is_err());
    }

    #[test]
    fn enrollment_mode_needs_enrollment_utterances() {
        let p = parts();
        let model = init_model(&small(Objective::Samo), &p.train.train_utts).unwrap();
        let err = score_partition(&model, &p.train, ScoringMode::Enrollment).unwrap_err();
        assert!(matches!(err, Error::MissingEnrollment(_)));
        let rows = score_partition(&model, &p.train, ScoringMode::NoEnrollment).unwrap();
        assert_eq!(rows.len(), p.train.train_utts.len());
    }
}
