//! Joint ensemble training: cross-entropy per member, coupled L2 weight
//! decay, the pairwise coupling penalty, Adam, and a one-drop plateau
//! schedule driven by episodic validation accuracy.
//!
//! Randomness per step comes from labeled streams:
//! - batch order: `(master_seed, "epoch-order", epoch)`
//! - member-drop mask: `(master_seed, "member-drop", step)`
//! - shared augmented view: `(master_seed, "shared-view", step)`
//! - per-member view and dropout: `(member_seed, "member-view" | "dropout", step)`
//!
//! Member `j`'s seed defaults to `child_seed(master_seed, "member", j)`, so a
//! member's trajectory depends on its own seed and on the master stream only.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write as _;

use rand::Rng;

use crate::data::{make_batches, AugmentPolicy, ClassSplit, Dataset};
use crate::episodic::{EvalConfig, Evaluator, FeatureBank};
use crate::error::{Error, Result};
use crate::models::{forward_on_tape, Architecture, EnsembleParams, Mode, ParamVars};
use crate::penalties::{pairwise_penalty, PenaltyKind};
use crate::rng::{self, Stream};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Validation improvements smaller than this count as a plateau.
pub const IMPROVEMENT_EPS: f64 = 1e-6;

/// Randomization recipe for robust ensembles.
#[derive(Clone, Debug, PartialEq)]
pub struct RobustConfig {
    pub member_drop_prob: f64,
    pub dropout_before_head: f64,
    pub per_member_augmentation: bool,
}

impl RobustConfig {
    pub fn off() -> Self {
        RobustConfig {
            member_drop_prob: 0.0,
            dropout_before_head: 0.0,
            per_member_augmentation: false,
        }
    }

    pub fn recipe() -> Self {
        RobustConfig {
            member_drop_prob: 0.2,
            dropout_before_head: 0.1,
            per_member_augmentation: true,
        }
    }
}

/// Named training regimes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Strategy {
    Independent,
    Diversity,
    Cooperation,
    Robust,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::Independent,
        Strategy::Diversity,
        Strategy::Cooperation,
        Strategy::Robust,
    ];

    pub fn token(self) -> &'static str {
        match self {
            Strategy::Independent => "independent",
            Strategy::Diversity => "diversity",
            Strategy::Cooperation => "cooperation",
            Strategy::Robust => "robust",
        }
    }

    pub fn from_token(s: &str) -> Option<Self> {
        Strategy::ALL.into_iter().find(|k| k.token() == s)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub n_members: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub gamma: f64,
    pub penalty: PenaltyKind,
    /// Compare full temperature-T softmaxes instead of conditional vectors.
    pub temperature_probe: Option<f64>,
    pub batch_size: usize,
    pub patience: usize,
    pub lr_drop_factor: f64,
    pub max_epochs: usize,
    pub robust: RobustConfig,
    pub augment: AugmentPolicy,
    pub master_seed: u64,
    /// Overrides the derived member seeds; length must equal `n_members`.
    pub member_seeds: Option<Vec<u64>>,
    pub val_episodes: usize,
    pub val_n_way: usize,
    pub val_k_shot: usize,
    /// Draw fresh validation episodes each epoch instead of a fixed bank.
    pub resample_validation: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            n_members: 1,
            lr: 1e-4,
            weight_decay: 5e-4,
            gamma: 0.0,
            penalty: PenaltyKind::None,
            temperature_probe: None,
            batch_size: 16,
            patience: 10,
            lr_drop_factor: 10.0,
            max_epochs: 60,
            robust: RobustConfig::off(),
            augment: AugmentPolicy::default(),
            master_seed: 0,
            member_seeds: None,
            val_episodes: 200,
            val_n_way: 5,
            val_k_shot: 5,
            resample_validation: false,
        }
    }
}

impl TrainConfig {
    /// Penalty, weight and randomization settings of a named strategy.
    pub fn for_strategy(strategy: Strategy, n_members: usize, master_seed: u64) -> Self {
        let base = TrainConfig {
            n_members,
            master_seed,
            ..Default::default()
        };
        match strategy {
            Strategy::Independent => base,
            Strategy::Diversity => TrainConfig {
                penalty: PenaltyKind::CosineDiversity,
                gamma: 1.0,
                ..base
            },
            Strategy::Cooperation => TrainConfig {
                penalty: PenaltyKind::SymKlCooperation,
                gamma: 10.0,
                ..base
            },
            Strategy::Robust => TrainConfig {
                penalty: PenaltyKind::SymKlCooperation,
                gamma: 10.0,
                robust: RobustConfig::recipe(),
                ..base
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &'static str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::param(name, format!("{v} must be positive and finite")))
            }
        };
        let non_negative = |name: &'static str, v: f64| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::param(name, format!("{v} must be finite and >= 0")))
            }
        };
        if self.n_members == 0 {
            return Err(Error::param("n_members", "must be at least 1"));
        }
        positive("lr", self.lr)?;
        non_negative("weight_decay", self.weight_decay)?;
        non_negative("gamma", self.gamma)?;
        if let Some(t) = self.temperature_probe {
            positive("temperature_probe", t)?;
        }
        if self.batch_size == 0 {
            return Err(Error::param("batch_size", "must be at least 1"));
        }
        if self.patience == 0 {
            return Err(Error::param("patience", "must be at least 1"));
        }
        if !(self.lr_drop_factor >= 1.0) {
            return Err(Error::param("lr_drop_factor", "must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.robust.member_drop_prob) {
            return Err(Error::param("member_drop_prob", "must lie in [0, 1)"));
        }
        if !(0.0..1.0).contains(&self.robust.dropout_before_head) {
            return Err(Error::param("dropout_before_head", "must lie in [0, 1)"));
        }
        if let Some(seeds) = &self.member_seeds {
            if seeds.len() != self.n_members {
                return Err(Error::dim("member_seeds", &[seeds.len()], &[self.n_members]));
            }
        }
        self.augment.validate()
    }

    pub fn seeds(&self) -> Vec<u64> {
        match &self.member_seeds {
            Some(s) => s.clone(),
            None => (0..self.n_members)
                .map(|j| rng::child_seed(self.master_seed, "member", j as u64))
                .collect(),
        }
    }
}

/// Adam moments for one backbone.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

impl AdamState {
    pub fn new(shapes: &[usize]) -> Self {
        AdamState {
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }

    /// One Adam update of `params` with gradients `grads`.
    pub fn update(&mut self, params: &mut [Tensor], grads: &[Vec<f64>], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - libm::pow(BETA1, self.t as f64);
        let c2 = 1.0 - libm::pow(BETA2, self.t as f64);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for (((x, gi), mi), vi) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = BETA1 * *mi + (1.0 - BETA1) * gi;
                *vi = BETA2 * *vi + (1.0 - BETA2) * gi * gi;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *x -= lr * m_hat / (libm::sqrt(v_hat) + ADAM_EPS);
            }
        }
    }
}

/// Per-member Adam state; dropped members keep their step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub members: Vec<AdamState>,
}

impl OptimizerState {
    pub fn new(ensemble: &EnsembleParams) -> Self {
        OptimizerState {
            members: ensemble
                .members()
                .iter()
                .map(|m| AdamState::new(&m.tensors().iter().map(Tensor::len).collect::<Vec<_>>()))
                .collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlateauAction {
    Continue,
    DropLr,
    Stop,
}

impl PlateauAction {
    pub fn token(self) -> &'static str {
        match self {
            PlateauAction::Continue => "continue",
            PlateauAction::DropLr => "drop_lr",
            PlateauAction::Stop => "stop",
        }
    }
}

/// Action after the last entry of `history`. The history is replayed from
/// the start: `patience` epochs without improvement trigger the single
/// learning-rate drop and reset the counter; the next such plateau stops.
pub fn plateau_action(history: &[f64], patience: usize) -> PlateauAction {
    let mut best = f64::NEG_INFINITY;
    let mut since = 0usize;
    let mut dropped = false;
    let mut action = PlateauAction::Continue;
    for &v in history {
        action = PlateauAction::Continue;
        if v > best + IMPROVEMENT_EPS {
            best = v;
            since = 0;
        } else {
            since += 1;
        }
        if since >= patience {
            if dropped {
                return PlateauAction::Stop;
            }
            dropped = true;
            since = 0;
            action = PlateauAction::DropLr;
        }
    }
    action
}

/// Loss terms subset of [`TrainConfig`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    pub weight_decay: f64,
    pub gamma: f64,
    pub penalty: PenaltyKind,
    pub temperature_probe: Option<f64>,
}

impl From<&TrainConfig> for LossConfig {
    fn from(c: &TrainConfig) -> Self {
        LossConfig {
            weight_decay: c.weight_decay,
            gamma: c.gamma,
            penalty: c.penalty,
            temperature_probe: c.temperature_probe,
        }
    }
}

/// Graph handles of one joint-loss evaluation.
#[derive(Clone, Debug)]
pub struct JointLoss {
    pub total: Var,
    /// Mean cross-entropy per member.
    pub ce: Vec<Var>,
    pub penalty: Option<Var>,
}

/// One-hot rows for `labels` over `n_classes`.
pub fn one_hot(labels: &[usize], n_classes: usize) -> Tensor {
    let mut data = vec![0.0; labels.len() * n_classes];
    for (i, &y) in labels.iter().enumerate() {
        data[i * n_classes + y] = 1.0;
    }
    Tensor::matrix(labels.len(), n_classes, data).expect("one-hot geometry")
}

/// `sum_j [mean CE_j + lambda ||theta_j||^2] + gamma * penalty` over the given
/// members, each seeing its own view. The penalty is left out for a single
/// member or `gamma == 0`.
pub fn joint_loss(
    tape: &mut Tape,
    arch: &Architecture,
    members: &[ParamVars],
    views: &[Var],
    labels: &[usize],
    config: &LossConfig,
    dropout_rngs: &mut [Stream],
) -> Result<JointLoss> {
    let k = members.len();
    if views.len() != k || dropout_rngs.len() != k {
        return Err(Error::param(
            "views",
            format!(
                "{} views and {} streams for {k} members",
                views.len(),
                dropout_rngs.len()
            ),
        ));
    }
    if k == 0 {
        return Err(Error::param("members", "joint loss needs at least one member"));
    }
    let target = tape.constant(one_hot(labels, arch.n_classes));
    let mut total: Option<Var> = None;
    let mut ce = Vec::with_capacity(k);
    let mut logits = Vec::with_capacity(k);
    for ((params, &view), r) in members.iter().zip(views).zip(dropout_rngs.iter_mut()) {
        let out = forward_on_tape(tape, arch, params, view, Mode::Train, r)?;
        let probs = tape.softmax_temp(out.logits, 1.0)?;
        let rows = tape.cross_entropy(target, probs)?;
        let mean_ce = tape.mean(rows);
        let mut term = mean_ce;
        if config.weight_decay > 0.0 {
            let l2 = params.l2(tape)?;
            let decay = tape.scale(l2, config.weight_decay);
            term = tape.add(term, decay)?;
        }
        total = Some(match total {
            Some(acc) => tape.add(acc, term)?,
            None => term,
        });
        ce.push(mean_ce);
        logits.push(out.logits);
    }
    let mut total = total.expect("k >= 1");
    let mut penalty = None;
    if k >= 2 && config.gamma > 0.0 && config.penalty != PenaltyKind::None {
        let p = pairwise_penalty(tape, &logits, labels, config.penalty, config.temperature_probe)?;
        let weighted = tape.scale(p, config.gamma);
        total = tape.add(total, weighted)?;
        penalty = Some(p);
    }
    Ok(JointLoss { total, ce, penalty })
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepMetrics {
    pub loss: f64,
    /// Mean cross-entropy of each member, `None` when it was dropped.
    pub member_ce: Vec<Option<f64>>,
    pub penalty: Option<f64>,
}

/// Members kept this step: each survives with probability `1 - p`; an
/// all-dropped draw is redrawn.
pub fn member_mask<R: Rng + ?Sized>(k: usize, p: f64, rng: &mut R) -> Vec<bool> {
    if p == 0.0 {
        return vec![true; k];
    }
    loop {
        let mask: Vec<bool> = (0..k).map(|_| rng.random::<f64>() >= p).collect();
        if mask.iter().any(|&m| m) {
            return mask;
        }
    }
}

/// One optimization step on `batch` (indices into `data`); `step` is the
/// global step counter used to derive this step's streams.
pub fn train_step(
    ensemble: &mut EnsembleParams,
    opt: &mut OptimizerState,
    data: &Dataset,
    batch: &[usize],
    config: &TrainConfig,
    lr: f64,
    step: u64,
) -> Result<StepMetrics> {
    let k = ensemble.len();
    let seeds = ensemble.member_seeds().to_vec();
    let mask = member_mask(
        k,
        config.robust.member_drop_prob,
        &mut rng::stream(config.master_seed, "member-drop", step),
    );
    let included: Vec<usize> = (0..k).filter(|&j| mask[j]).collect();
    let labels: Vec<usize> = batch.iter().map(|&i| data.samples()[i].label).collect();

    let mut tape = Tape::new();
    let shared = if config.robust.per_member_augmentation {
        None
    } else {
        let view = data.augmented_batch(
            batch,
            &config.augment,
            &mut rng::stream(config.master_seed, "shared-view", step),
        );
        Some(tape.constant(view))
    };
    let mut params = Vec::with_capacity(included.len());
    let mut views = Vec::with_capacity(included.len());
    let mut dropout_rngs = Vec::with_capacity(included.len());
    for &j in &included {
        params.push(ensemble.members()[j].register(&mut tape, true));
        views.push(match shared {
            Some(v) => v,
            None => {
                let view =
                    data.augmented_batch(batch, &config.augment, &mut rng::stream(seeds[j], "member-view", step));
                tape.constant(view)
            }
        });
        dropout_rngs.push(rng::stream(seeds[j], "dropout", step));
    }
    let arch = *ensemble.arch();
    let loss = joint_loss(
        &mut tape,
        &arch,
        &params,
        &views,
        &labels,
        &LossConfig::from(config),
        &mut dropout_rngs,
    )?;
    let loss_value = tape.value(loss.total).item();
    if !loss_value.is_finite() {
        return Err(Error::Numeric(format!("non-finite loss at step {step}")));
    }
    tape.backward(loss.total)?;

    let mut member_ce = vec![None; k];
    for (slot, &j) in included.iter().enumerate() {
        let grads: Vec<Vec<f64>> = params[slot].0.iter().map(|&v| tape.grad_or_zeros(v)).collect();
        let member = &mut ensemble.members_mut()[j];
        opt.members[j].update(member.tensors_mut(), &grads, lr);
        if !member.is_finite() {
            return Err(Error::Numeric(format!(
                "member {j} has non-finite parameters after step {step}"
            )));
        }
        member_ce[j] = Some(tape.value(loss.ce[slot]).item());
    }
    Ok(StepMetrics {
        loss: loss_value,
        member_ce,
        penalty: loss.penalty.map(|p| tape.value(p).item()),
    })
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training cross-entropy per member over the steps it took part in.
    pub member_ce: Vec<f64>,
    /// Mean coupling term over the epoch: the unweighted penalty for
    /// ensembles (0 when inactive), the soft cross-entropy for distillation.
    pub penalty: f64,
    /// Validation accuracy in percent, `None` without validation.
    pub val_accuracy: Option<f64>,
    /// Learning rate used during the epoch.
    pub lr: f64,
    pub action: PlateauAction,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
    /// Epoch (1-based) whose parameters were returned; 0 for the initialization.
    pub best_epoch: usize,
}

impl TrainLog {
    pub const HEADER: &'static str = "epoch\tmember_ce\tpenalty\tval_acc\tlr\taction";

    /// Tab-separated table with a `#` header; member CEs are comma-joined.
    pub fn to_text(&self) -> String {
        let mut out = format!("# {}\n", Self::HEADER);
        for r in &self.records {
            let ce: Vec<String> = r.member_ce.iter().map(|c| format!("{c:.6}")).collect();
            let val = r.val_accuracy.map_or_else(|| String::from("-"), |v| format!("{v:.4}"));
            let _ = writeln!(
                out,
                "{}\t{}\t{:.6}\t{}\t{:e}\t{}",
                r.epoch,
                ce.join(","),
                r.penalty,
                val,
                r.lr,
                r.action.token()
            );
        }
        let _ = writeln!(out, "# best_epoch={}", self.best_epoch);
        out
    }
}

/// Stateful epoch driver over a training set whose labels are `0..n_classes`.
#[derive(Clone, Debug)]
pub struct Trainer<'a> {
    pub config: TrainConfig,
    pub data: &'a Dataset,
    pub ensemble: EnsembleParams,
    pub opt: OptimizerState,
    pub lr: f64,
    pub epoch: usize,
    pub step: u64,
}

impl<'a> Trainer<'a> {
    pub fn new(config: TrainConfig, data: &'a Dataset) -> Result<Self> {
        config.validate()?;
        let arch = Architecture::standard(data.n_classes()).with_dropout(config.robust.dropout_before_head);
        let ensemble = EnsembleParams::init(arch, &config.seeds())?;
        Self::resume(config, data, ensemble)
    }

    /// Continue from existing parameters with fresh optimizer state.
    pub fn resume(config: TrainConfig, data: &'a Dataset, ensemble: EnsembleParams) -> Result<Self> {
        config.validate()?;
        if ensemble.arch().n_classes != data.n_classes() {
            return Err(Error::param(
                "ensemble",
                format!(
                    "head has {} classes, data has {}",
                    ensemble.arch().n_classes,
                    data.n_classes()
                ),
            ));
        }
        let opt = OptimizerState::new(&ensemble);
        Ok(Trainer {
            lr: config.lr,
            config,
            data,
            ensemble,
            opt,
            epoch: 0,
            step: 0,
        })
    }

    /// One pass over the training data: `(mean CE per member, mean penalty)`.
    pub fn train_epoch(&mut self) -> Result<(Vec<f64>, f64)> {
        let k = self.ensemble.len();
        let batches = make_batches(
            self.data.len(),
            self.config.batch_size,
            &mut rng::stream(self.config.master_seed, "epoch-order", self.epoch as u64),
        )?;
        let mut ce_sum = vec![0.0; k];
        let mut ce_n = vec![0usize; k];
        let mut pen_sum = 0.0;
        for batch in &batches {
            let m = train_step(
                &mut self.ensemble,
                &mut self.opt,
                self.data,
                batch,
                &self.config,
                self.lr,
                self.step,
            )
            .map_err(|e| match e {
                Error::Numeric(msg) => Error::Numeric(format!("epoch {}: {msg}", self.epoch + 1)),
                other => other,
            })?;
            self.step += 1;
            for (j, c) in m.member_ce.iter().enumerate() {
                if let Some(c) = c {
                    ce_sum[j] += c;
                    ce_n[j] += 1;
                }
            }
            pen_sum += m.penalty.unwrap_or(0.0);
        }
        self.epoch += 1;
        let ce = ce_sum
            .iter()
            .zip(&ce_n)
            .map(|(s, &n)| if n > 0 { s / n as f64 } else { f64::NAN })
            .collect();
        Ok((ce, pen_sum / batches.len() as f64))
    }
}

/// Episodic validation on held-out classes.
#[derive(Clone, Copy)]
pub struct Validation<'a> {
    pub data: &'a Dataset,
    pub classes: &'a [usize],
}

impl Validation<'_> {
    /// Mean accuracy of `ensemble` on the validation episodes of `epoch`.
    pub fn accuracy(&self, ensemble: &EnsembleParams, config: &TrainConfig, epoch: usize) -> Result<f64> {
        let seed = if config.resample_validation {
            rng::child_seed(config.master_seed, "validation-epoch", epoch as u64)
        } else {
            config.master_seed
        };
        let mut eval = EvalConfig::new(config.val_n_way, config.val_k_shot, config.val_episodes, seed);
        eval.stream = "validation".into();
        let bank = FeatureBank::extract(ensemble, self.data, self.classes)?;
        Ok(Evaluator::new(bank, eval)?.run(0)?.mean)
    }
}

/// Something trained epoch by epoch under the plateau schedule.
pub(crate) trait Fit {
    /// One epoch at learning rate `lr`: `(per-member loss, coupling term)`.
    fn epoch(&mut self, lr: f64) -> Result<(Vec<f64>, f64)>;
    fn snapshot(&self) -> EnsembleParams;
}

/// Epoch loop shared by ensemble training and distillation: validation after
/// every epoch, a single learning-rate drop on the first plateau, stop on the
/// second, and the best-validation snapshot (or the last one without
/// validation).
pub(crate) fn run_schedule<F: Fit>(
    fit: &mut F,
    val: Option<Validation<'_>>,
    config: &TrainConfig,
) -> Result<(EnsembleParams, TrainLog)> {
    let mut log = TrainLog::default();
    let mut best = fit.snapshot();
    let mut best_acc = f64::NEG_INFINITY;
    let mut history = Vec::new();
    let mut lr = config.lr;
    for epoch in 1..=config.max_epochs {
        let (member_ce, penalty) = fit.epoch(lr)?;
        let mut record = EpochRecord {
            epoch,
            member_ce,
            penalty,
            val_accuracy: None,
            lr,
            action: PlateauAction::Continue,
        };
        match &val {
            Some(v) => {
                let current = fit.snapshot();
                let acc = v.accuracy(&current, config, epoch)?;
                if acc > best_acc + IMPROVEMENT_EPS {
                    best_acc = acc;
                    best = current;
                    log.best_epoch = epoch;
                }
                history.push(acc);
                record.val_accuracy = Some(acc);
                record.action = plateau_action(&history, config.patience);
            }
            None => {
                best = fit.snapshot();
                log.best_epoch = epoch;
            }
        }
        let action = record.action;
        log.records.push(record);
        match action {
            PlateauAction::Continue => {}
            PlateauAction::DropLr => lr /= config.lr_drop_factor,
            PlateauAction::Stop => break,
        }
    }
    Ok((best, log))
}

impl Fit for Trainer<'_> {
    fn epoch(&mut self, lr: f64) -> Result<(Vec<f64>, f64)> {
        self.lr = lr;
        self.train_epoch()
    }

    fn snapshot(&self) -> EnsembleParams {
        self.ensemble.clone()
    }
}

/// Full training loop on `train` (labels `0..n`): epochs of [`train_step`],
/// validation after each epoch, the plateau schedule, and the best-validation
/// parameters. Without validation the final parameters are returned.
pub fn train_on(
    train: &Dataset,
    val: Option<Validation<'_>>,
    config: &TrainConfig,
) -> Result<(EnsembleParams, TrainLog)> {
    let mut trainer = Trainer::new(config.clone(), train)?;
    run_schedule(&mut trainer, val, config)
}

/// Train on the train classes of `split`, validating on its val classes.
pub fn train_ensemble(
    dataset: &Dataset,
    split: &ClassSplit,
    config: &TrainConfig,
) -> Result<(EnsembleParams, TrainLog)> {
    split.validate(dataset.n_classes(), config.val_n_way)?;
    if split.val.len() < config.val_n_way {
        return Err(Error::param(
            "split",
            format!(
                "{} validation classes, fewer than {}",
                split.val.len(),
                config.val_n_way
            ),
        ));
    }
    let train = dataset.select_classes(&split.train)?;
    let val = Validation {
        data: dataset,
        classes: &split.val,
    };
    train_on(&train, Some(val), config)
}

#[cfg(test)]
mod tests;
