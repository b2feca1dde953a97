use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::*;
use crate::data::{synth_generate, AugmentPolicy};
use crate::gradcheck;

fn softmax_t(z: &[f64], t: f64) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| libm::exp((v - m) / t)).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn data() -> Dataset {
    synth_generate(31, 10, 30, 16)
        .unwrap()
        .select_classes(&[0, 1, 2])
        .unwrap()
}

fn quick(train_epochs: usize) -> DistillConfig {
    let mut c = DistillConfig::new(&TrainConfig {
        lr: 3e-3,
        max_epochs: train_epochs,
        augment: AugmentPolicy::disabled(),
        master_seed: 3,
        ..Default::default()
    });
    c.train.max_epochs = train_epochs;
    c
}

#[test]
fn defaults() {
    let c = DistillConfig::new(&TrainConfig::default());
    assert_eq!((c.temperature, c.alpha, c.unlabeled_per_batch), (10.0, 0.8, 0));
    assert_eq!(c.train.patience, 20);
    assert!(c.validate().is_ok());
    assert!(DistillConfig {
        alpha: 1.5,
        ..c.clone()
    }
    .validate()
    .is_err());
    assert!(DistillConfig { temperature: 0.0, ..c }.validate().is_err());
}

#[test]
fn single_teacher_targets_are_its_tempered_softmax() {
    let d = data();
    let x = d.plain_batch(&[0, 40, 70]);
    let m = BackboneParams::init(Architecture::standard(3), 2).unwrap();
    let ens = EnsembleParams::single(m.clone(), 2);
    let t = teacher_soft_targets(&ens, &x, 10.0).unwrap();
    let (logits, _) = forward(&m, &x, Mode::Eval, &mut rng::stream(0, "x", 0)).unwrap();
    for (row, z) in t.rows().zip(logits.rows()) {
        let mut expect = z.to_vec();
        crate::tape::softmax_in_place(&mut expect, 10.0);
        assert_eq!(row, expect.as_slice());
    }
}

#[test]
fn mirrored_members_average_to_uniform() {
    let d = data();
    let x = d.plain_batch(&[0, 40]);
    let a = BackboneParams::init(Architecture::standard(2), 5).unwrap();
    let mut b = a.clone();
    // negating the head negates the logits
    for t in &mut b.tensors_mut()[4..] {
        t.data_mut().iter_mut().for_each(|v| *v = -*v);
    }
    let ens = EnsembleParams::new(vec![a, b], vec![5, 6]).unwrap();
    let t = teacher_soft_targets(&ens, &x, 1.0).unwrap();
    assert!(t.data().iter().all(|v| (v - 0.5).abs() < 1e-15));
}

#[test]
fn teacher_targets_match_brute_force_and_ignore_member_order() {
    let d = data();
    let x = d.plain_batch(&[3, 33, 63, 9]);
    let members: Vec<BackboneParams> = (0..3)
        .map(|s| BackboneParams::init(Architecture::standard(3), s).unwrap())
        .collect();
    let ens = EnsembleParams::new(members.clone(), vec![0, 1, 2]).unwrap();
    let t = teacher_soft_targets(&ens, &x, 4.0).unwrap();
    let mut oracle = vec![0.0; 12];
    for m in &members {
        let (z, _) = forward(m, &x, Mode::Eval, &mut rng::stream(0, "x", 0)).unwrap();
        for (i, row) in z.rows().enumerate() {
            for (c, p) in softmax_t(row, 4.0).into_iter().enumerate() {
                oracle[i * 3 + c] += p / 3.0;
            }
        }
    }
    for (a, b) in t.data().iter().zip(&oracle) {
        assert!((a - b).abs() < 1e-12);
    }
    for row in t.rows() {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
    let reversed = EnsembleParams::new(members.into_iter().rev().collect(), vec![2, 1, 0]).unwrap();
    let r = teacher_soft_targets(&reversed, &x, 4.0).unwrap();
    for (a, b) in t.data().iter().zip(r.data()) {
        assert!((a - b).abs() < 1e-15);
    }
}

fn loss_and_grad(
    z: &Tensor,
    labels: &[Option<usize>],
    teacher: Option<&Tensor>,
    cfg: &DistillConfig,
) -> (f64, Vec<f64>) {
    let mut t = Tape::new();
    let zv = t.param(z.clone());
    let tv = teacher.map(|x| t.constant(x.clone()));
    let l = distill_loss(&mut t, zv, labels, tv, cfg, &mut HardTermCounter::default()).unwrap();
    t.backward(l).unwrap();
    (t.value(l).item(), t.grad_or_zeros(zv))
}

#[test]
fn alpha_zero_is_plain_cross_entropy() {
    let z = Tensor::matrix(2, 3, vec![0.5, -1.0, 2.0, 0.0, 0.3, -0.2]).unwrap();
    let teacher = Tensor::matrix(2, 3, vec![0.2, 0.3, 0.5, 0.6, 0.3, 0.1]).unwrap();
    let cfg = DistillConfig { alpha: 0.0, ..quick(0) };
    let (v, _) = loss_and_grad(&z, &[Some(2), Some(0)], Some(&teacher), &cfg);
    let ce = |row: &[f64], y: usize| -libm::log(softmax_t(row, 1.0)[y]);
    let expect = (ce(&z.data()[..3], 2) + ce(&z.data()[3..], 0)) / 2.0;
    assert!((v - expect).abs() < 1e-14);
}

#[test]
fn matched_student_is_stationary() {
    let z = Tensor::matrix(2, 4, vec![0.5, -1.0, 2.0, 0.1, 3.0, 0.3, -0.2, 1.0]).unwrap();
    let mut teacher = z.clone();
    for row in teacher.data_mut().chunks_exact_mut(4) {
        let p = softmax_t(row, 10.0);
        row.copy_from_slice(&p);
    }
    let cfg = DistillConfig { alpha: 1.0, ..quick(0) };
    let (v, g) = loss_and_grad(&z, &[Some(1), None], Some(&teacher), &cfg);
    let entropy: f64 = teacher
        .rows()
        .map(|r| -r.iter().map(|p| p * libm::log(*p)).sum::<f64>())
        .sum::<f64>()
        / 2.0;
    assert!((v - 100.0 * entropy).abs() < 1e-10);
    assert!(libm::sqrt(g.iter().map(|x| x * x).sum::<f64>()) < 1e-8);
}

#[test]
fn distill_loss_gradient_matches_finite_differences() {
    let mut r = rng::stream(7, "dl", 0);
    let cfg = quick(0);
    for _ in 0..5 {
        let z = Tensor::matrix(3, 4, (0..12).map(|_| r.random_range(-3.0..3.0)).collect()).unwrap();
        let mut teacher = Tensor::matrix(3, 4, (0..12).map(|_| r.random_range(-3.0..3.0)).collect()).unwrap();
        for row in teacher.data_mut().chunks_exact_mut(4) {
            let p = softmax_t(row, 10.0);
            row.copy_from_slice(&p);
        }
        let labels = [Some(0), None, Some(3)];
        let err = gradcheck::grad_check(
            |t, v| {
                let tv = t.constant(teacher.clone());
                distill_loss(t, v, &labels, Some(tv), &cfg, &mut HardTermCounter::default())
            },
            &z,
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }
}

#[test]
fn unlabeled_rows_only_see_the_soft_term() {
    let z = Tensor::matrix(2, 3, vec![0.5, -1.0, 2.0, 0.0, 0.3, -0.2]).unwrap();
    let teacher = Tensor::matrix(2, 3, vec![0.2, 0.3, 0.5, 0.6, 0.3, 0.1]).unwrap();
    let cfg = quick(0);
    let mut counter = HardTermCounter::default();
    let mut t = Tape::new();
    let zv = t.param(z.clone());
    let tv = t.constant(teacher.clone());
    let l = distill_loss(&mut t, zv, &[None, None], Some(tv), &cfg, &mut counter).unwrap();
    assert_eq!(
        counter,
        HardTermCounter {
            labeled_rows: 0,
            unlabeled_rows: 2
        }
    );
    let soft: f64 = z
        .rows()
        .zip(teacher.rows())
        .map(|(row, tr)| {
            -tr.iter()
                .zip(softmax_t(row, 10.0))
                .map(|(a, b)| a * libm::log(b))
                .sum::<f64>()
        })
        .sum::<f64>();
    assert!((t.value(l).item() - 0.8 * 100.0 * soft / 2.0).abs() < 1e-10);

    let mut t = Tape::new();
    let zv = t.param(z);
    assert!(matches!(
        distill_loss(&mut t, zv, &[Some(0), None], None, &cfg, &mut counter),
        Err(Error::Parameter { .. })
    ));
}

#[test]
fn printed_sign_flips_the_soft_term() {
    let z = Tensor::matrix(1, 3, vec![0.5, -1.0, 2.0]).unwrap();
    let teacher = Tensor::matrix(1, 3, vec![0.2, 0.3, 0.5]).unwrap();
    let plain = quick(0);
    let flipped = DistillConfig {
        printed_sign: true,
        ..plain.clone()
    };
    let (a, _) = loss_and_grad(&z, &[Some(0)], Some(&teacher), &plain);
    let (b, _) = loss_and_grad(&z, &[Some(0)], Some(&teacher), &flipped);
    let hard = 0.2 * -libm::log(softmax_t(z.data(), 1.0)[0]);
    assert!(((a - hard) + (b - hard)).abs() < 1e-10);
}

fn teacher_for(d: &Dataset) -> EnsembleParams {
    EnsembleParams::init(Architecture::standard(d.n_classes()), &[10, 11]).unwrap()
}

#[test]
fn zero_epochs_give_the_initial_student() {
    let d = data();
    let (s, log, counter) = distill_train(&teacher_for(&d), &d, None, None, &quick(0)).unwrap();
    let seed = rng::child_seed(3, "student", 0);
    assert_eq!(s, BackboneParams::init(Architecture::standard(3), seed).unwrap());
    assert!(log.records.is_empty());
    assert_eq!(counter, HardTermCounter::default());
}

#[test]
fn distillation_is_reproducible_and_counts_rows() {
    let d = data();
    let pool = synth_generate(77, 10, 30, 16).unwrap();
    let mut cfg = quick(1);
    cfg.unlabeled_per_batch = 8;
    let teacher = teacher_for(&d);
    let (a, la, ca) = distill_train(&teacher, &d, None, Some(&pool), &cfg).unwrap();
    let (b, lb, _) = distill_train(&teacher, &d, None, Some(&pool), &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(la, lb);
    let n_batches = d.len().div_ceil(16);
    assert_eq!(ca.labeled_rows, d.len());
    assert_eq!(ca.unlabeled_rows, 8 * n_batches);
}

#[test]
fn unlabeled_regime_needs_a_pool() {
    let d = data();
    let mut cfg = quick(1);
    cfg.unlabeled_per_batch = 8;
    assert!(matches!(
        distill_train(&teacher_for(&d), &d, None, None, &cfg),
        Err(Error::Parameter {
            name: "unlabeled_pool",
            ..
        })
    ));
}
