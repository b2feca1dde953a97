//! Compressing an ensemble into one backbone with temperature distillation.
//!
//! Per sample the student minimizes
//! `(1 - alpha) * CE(e_y, softmax(z)) + alpha * T^2 * CE(t, softmax(z / T))`
//! where `t` is the members' average temperature-`T` softmax. Unlabeled
//! samples only see the second term.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index::sample;

use crate::data::{make_batches, Dataset};
use crate::error::{Error, Result};
use crate::models::{forward, forward_on_tape, Architecture, BackboneParams, EnsembleParams, Mode};
use crate::rng;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::training::{run_schedule, AdamState, Fit, TrainConfig, TrainLog, Validation};

#[derive(Clone, Debug, PartialEq)]
pub struct DistillConfig {
    pub temperature: f64,
    pub alpha: f64,
    /// Unlabeled samples appended to every labeled batch.
    pub unlabeled_per_batch: usize,
    /// Optimizer, schedule, augmentation and validation settings. The
    /// constructor doubles the patience of the ensemble's schedule.
    pub train: TrainConfig,
    /// Width multiplier of the student backbone.
    pub width: f64,
    /// Subtract the soft term instead of adding it. Drives the student away
    /// from the teacher; only useful to demonstrate why the sign matters.
    pub printed_sign: bool,
}

impl DistillConfig {
    pub fn new(train: &TrainConfig) -> Self {
        DistillConfig {
            temperature: 10.0,
            alpha: 0.8,
            unlabeled_per_batch: 0,
            train: TrainConfig {
                patience: train.patience * 2,
                n_members: 1,
                member_seeds: None,
                ..train.clone()
            },
            width: 1.0,
            printed_sign: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::param(
                "temperature",
                format!("{} must be positive", self.temperature),
            ));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::param("alpha", format!("{} outside [0, 1]", self.alpha)));
        }
        if !(self.width > 0.0 && self.width.is_finite()) {
            return Err(Error::param("width", "must be positive"));
        }
        self.train.validate()
    }

    fn soft_weight(&self) -> f64 {
        let w = self.alpha * self.temperature * self.temperature;
        if self.printed_sign {
            -w
        } else {
            w
        }
    }
}

/// Average over members of `softmax(logits / T)`, eval mode, one row per sample.
pub fn teacher_soft_targets(ensemble: &EnsembleParams, batch: &Tensor, temperature: f64) -> Result<Tensor> {
    if !(temperature > 0.0) {
        return Err(Error::param("temperature", "must be positive"));
    }
    let mut unused = rng::stream(0, "unused", 0);
    let mut acc: Option<Tensor> = None;
    for m in ensemble.members() {
        let (mut logits, _) = forward(m, batch, Mode::Eval, &mut unused)?;
        let d = logits.shape()[1];
        for row in logits.data_mut().chunks_exact_mut(d) {
            crate::tape::softmax_in_place(row, temperature);
        }
        acc = Some(match acc {
            None => logits,
            Some(mut a) => {
                a.data_mut().iter_mut().zip(logits.data()).for_each(|(x, y)| *x += y);
                a
            }
        });
    }
    let mut out = acc.expect("ensembles are non-empty");
    let k = ensemble.len() as f64;
    out.data_mut().iter_mut().for_each(|v| *v /= k);
    Ok(out)
}

/// Counts labeled rows that entered the hard cross-entropy term.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct HardTermCounter {
    pub labeled_rows: usize,
    pub unlabeled_rows: usize,
}

/// Batch-mean distillation loss. `labels[i]` is `None` for unannotated
/// samples; `teacher` holds soft targets or is `None` for a pure hard-label
/// loss, which then requires every label.
pub fn distill_loss(
    tape: &mut Tape,
    student_logits: Var,
    labels: &[Option<usize>],
    teacher: Option<Var>,
    config: &DistillConfig,
    counter: &mut HardTermCounter,
) -> Result<Var> {
    Ok(distill_terms(tape, student_logits, labels, teacher, config, counter)?.total)
}

struct Terms {
    total: Var,
    /// Hard cross-entropy summed over labeled rows.
    hard_sum: Var,
    /// Soft cross-entropy summed over all rows.
    soft_sum: Option<Var>,
}

fn distill_terms(
    tape: &mut Tape,
    student_logits: Var,
    labels: &[Option<usize>],
    teacher: Option<Var>,
    config: &DistillConfig,
    counter: &mut HardTermCounter,
) -> Result<Terms> {
    let shape = tape.shape(student_logits).to_vec();
    if shape.len() != 2 || shape[0] != labels.len() {
        return Err(Error::dim("distill_loss", &shape, &[labels.len()]));
    }
    let (b, d) = (shape[0], shape[1]);
    if teacher.is_none() && labels.iter().any(Option::is_none) {
        return Err(Error::param(
            "distill_loss",
            "a sample has neither a label nor teacher targets",
        ));
    }
    let mut hard_target = vec![0.0; b * d];
    for (i, y) in labels.iter().enumerate() {
        match y {
            Some(y) if *y < d => {
                hard_target[i * d + y] = 1.0;
                counter.labeled_rows += 1;
            }
            Some(y) => return Err(Error::param("label", format!("{y} out of range for {d} classes"))),
            None => counter.unlabeled_rows += 1,
        }
    }
    let hard_target = tape.constant(Tensor::matrix(b, d, hard_target)?);
    let p = tape.softmax_temp(student_logits, 1.0)?;
    let hard = tape.cross_entropy(hard_target, p)?;
    let hard_sum = tape.sum(hard);
    let mut total = tape.scale(hard_sum, (1.0 - config.alpha) / b as f64);
    let mut soft_sum = None;
    if let Some(t) = teacher {
        let q = tape.softmax_temp(student_logits, config.temperature)?;
        let soft = tape.cross_entropy(t, q)?;
        let s = tape.sum(soft);
        let weighted = tape.scale(s, config.soft_weight() / b as f64);
        total = tape.add(total, weighted)?;
        soft_sum = Some(s);
    }
    Ok(Terms {
        total,
        hard_sum,
        soft_sum,
    })
}

struct Distiller<'a> {
    teacher: &'a EnsembleParams,
    data: &'a Dataset,
    pool: Option<&'a Dataset>,
    config: &'a DistillConfig,
    student: BackboneParams,
    seed: u64,
    opt: AdamState,
    epoch: usize,
    step: u64,
    counter: HardTermCounter,
}

impl Distiller<'_> {
    /// One update; returns the mean hard CE over labeled rows and the mean
    /// soft CE over all rows.
    fn step(&mut self, batch: &[usize], lr: f64) -> Result<(f64, f64)> {
        let cfg = &self.config.train;
        let mut view = self
            .data
            .augmented_batch(
                batch,
                &cfg.augment,
                &mut rng::stream(cfg.master_seed, "distill-view", self.step),
            )
            .into_data();
        let mut labels: Vec<Option<usize>> = batch.iter().map(|&i| Some(self.data.samples()[i].label)).collect();
        if let (Some(pool), u) = (self.pool, self.config.unlabeled_per_batch) {
            if u > 0 {
                let mut r = rng::stream(cfg.master_seed, "unlabeled-pick", self.step);
                let picks = sample(&mut r, pool.len(), u.min(pool.len())).into_vec();
                let extra = pool.augmented_batch(
                    &picks,
                    &cfg.augment,
                    &mut rng::stream(cfg.master_seed, "unlabeled-view", self.step),
                );
                view.extend_from_slice(extra.data());
                labels.extend(core::iter::repeat_n(None, picks.len()));
            }
        }
        let dims = self.data.dims();
        let x = Tensor::new(vec![labels.len(), dims.channels, dims.height, dims.width], view)?;
        let targets = teacher_soft_targets(self.teacher, &x, self.config.temperature)?;

        let mut tape = Tape::new();
        let params = self.student.register(&mut tape, true);
        let xv = tape.constant(x);
        let tv = tape.constant(targets);
        let mut drop = rng::stream(self.seed, "dropout", self.step);
        let out = forward_on_tape(&mut tape, self.student.arch(), &params, xv, Mode::Train, &mut drop)?;
        let terms = distill_terms(&mut tape, out.logits, &labels, Some(tv), self.config, &mut self.counter)?;
        let mut loss = terms.total;
        if cfg.weight_decay > 0.0 {
            let l2 = params.l2(&mut tape)?;
            let decay = tape.scale(l2, cfg.weight_decay);
            loss = tape.add(loss, decay)?;
        }
        let value = tape.value(loss).item();
        if !value.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite distillation loss at step {}",
                self.step
            )));
        }
        tape.backward(loss)?;
        let grads: Vec<Vec<f64>> = params.0.iter().map(|&v| tape.grad_or_zeros(v)).collect();
        self.opt.update(self.student.tensors_mut(), &grads, lr);
        if !self.student.is_finite() {
            return Err(Error::Numeric(format!(
                "student has non-finite parameters after step {}",
                self.step
            )));
        }
        self.step += 1;
        let hard = tape.value(terms.hard_sum).item() / batch.len() as f64;
        let soft = terms.soft_sum.map_or(0.0, |s| tape.value(s).item()) / labels.len() as f64;
        Ok((hard, soft))
    }
}

impl Fit for Distiller<'_> {
    fn epoch(&mut self, lr: f64) -> Result<(Vec<f64>, f64)> {
        let cfg = &self.config.train;
        let batches = make_batches(
            self.data.len(),
            cfg.batch_size,
            &mut rng::stream(cfg.master_seed, "distill-order", self.epoch as u64),
        )?;
        let (mut hard, mut soft) = (0.0, 0.0);
        for b in &batches {
            let (h, s) = self.step(b, lr)?;
            hard += h;
            soft += s;
        }
        self.epoch += 1;
        let n = batches.len() as f64;
        Ok((vec![hard / n], soft / n))
    }

    fn snapshot(&self) -> EnsembleParams {
        EnsembleParams::single(self.student.clone(), self.seed)
    }
}

/// Train a fresh student on `data` (labels `0..n`) against `teacher`,
/// optionally appending unlabeled samples from `pool` to each batch.
pub fn distill_train(
    teacher: &EnsembleParams,
    data: &Dataset,
    val: Option<Validation<'_>>,
    pool: Option<&Dataset>,
    config: &DistillConfig,
) -> Result<(BackboneParams, TrainLog, HardTermCounter)> {
    config.validate()?;
    if config.unlabeled_per_batch > 0 {
        let pool = pool.ok_or_else(|| Error::param("unlabeled_pool", "unlabeled_per_batch > 0 needs a pool"))?;
        if pool.dims() != data.dims() || pool.is_empty() {
            return Err(Error::param(
                "unlabeled_pool",
                "pool must be non-empty with the training geometry",
            ));
        }
    }
    if teacher.arch().n_classes != data.n_classes() {
        return Err(Error::param(
            "teacher",
            format!(
                "teacher predicts {} classes, data has {}",
                teacher.arch().n_classes,
                data.n_classes()
            ),
        ));
    }
    let cfg = &config.train;
    let seed = rng::child_seed(cfg.master_seed, "student", 0);
    let arch = Architecture::standard(data.n_classes())
        .with_width(config.width)
        .with_dropout(cfg.robust.dropout_before_head);
    let student = BackboneParams::init(arch, seed)?;
    let opt = AdamState::new(&student.tensors().iter().map(Tensor::len).collect::<Vec<_>>());
    let mut d = Distiller {
        teacher,
        data,
        pool: if config.unlabeled_per_batch > 0 { pool } else { None },
        config,
        student,
        seed,
        opt,
        epoch: 0,
        step: 0,
        counter: HardTermCounter::default(),
    };
    let (best, log) = run_schedule(&mut d, val, cfg)?;
    let student = best.members()[0].clone();
    Ok((student, log, d.counter))
}

#[cfg(test)]
mod tests;
