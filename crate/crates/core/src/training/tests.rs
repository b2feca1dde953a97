use alloc::vec;
use alloc::vec::Vec;

use super::*;
use crate::data::synth_generate;
use crate::gradcheck;
use crate::models::{forward, BackboneParams};

fn small_data(classes: usize) -> Dataset {
    let d = synth_generate(21, 10, 30, 16).unwrap();
    d.select_classes(&(0..classes).collect::<Vec<_>>()).unwrap()
}

fn quick_config(k: usize) -> TrainConfig {
    TrainConfig {
        n_members: k,
        lr: 3e-3,
        max_epochs: 2,
        augment: AugmentPolicy::disabled(),
        master_seed: 5,
        ..Default::default()
    }
}

#[test]
fn plateau_examples() {
    assert_eq!(plateau_action(&[60.0, 61.0, 62.0], 10), PlateauAction::Continue);
    let mut h = vec![50.0, 55.0, 60.0];
    h.extend(vec![60.0; 9]);
    assert_eq!(plateau_action(&h, 10), PlateauAction::Continue);
    h.push(59.0);
    assert_eq!(plateau_action(&h, 10), PlateauAction::DropLr);
    h.extend(vec![60.0; 9]);
    assert_eq!(plateau_action(&h, 10), PlateauAction::Continue);
    h.push(60.0);
    assert_eq!(plateau_action(&h, 10), PlateauAction::Stop);
    // a gain smaller than the threshold is not an improvement
    assert_eq!(plateau_action(&[1.0, 1.0 + 1e-7], 1), PlateauAction::DropLr);
}

#[test]
fn plateau_drops_at_most_once() {
    let h: Vec<f64> = (0..40).map(|i| if i % 7 == 0 { i as f64 } else { 0.0 }).collect();
    let drops = (1..=h.len())
        .filter(|&n| plateau_action(&h[..n], 3) == PlateauAction::DropLr)
        .count();
    assert!(drops <= 1);
}

#[test]
fn adam_first_step_moves_by_lr() {
    let mut p = vec![Tensor::vector(vec![1.0, -2.0]).unwrap()];
    let mut st = AdamState::new(&[2]);
    st.update(&mut p, &[vec![2.0, -0.5]], 0.1);
    // bias-corrected moments equal g and g^2 on the first step
    assert!((p[0].data()[0] - (1.0 - 0.1 * 2.0 / (2.0 + 1e-8))).abs() < 1e-15);
    assert!((p[0].data()[1] - (-2.0 + 0.1 * 0.5 / (0.5 + 1e-8))).abs() < 1e-15);
    assert_eq!(st.t, 1);
}

#[test]
fn config_validation() {
    assert!(TrainConfig::default().validate().is_ok());
    for bad in [
        TrainConfig {
            lr: 0.0,
            ..Default::default()
        },
        TrainConfig {
            weight_decay: -1.0,
            ..Default::default()
        },
        TrainConfig {
            gamma: f64::NAN,
            ..Default::default()
        },
        TrainConfig {
            patience: 0,
            ..Default::default()
        },
        TrainConfig {
            robust: RobustConfig {
                member_drop_prob: 1.0,
                ..RobustConfig::off()
            },
            ..Default::default()
        },
        TrainConfig {
            member_seeds: Some(vec![1, 2]),
            ..Default::default()
        },
    ] {
        assert!(matches!(
            bad.validate(),
            Err(Error::Parameter { .. } | Error::Dimension { .. })
        ));
    }
}

fn single_network_loss(p: &BackboneParams, x: &Tensor, labels: &[usize], lambda: f64) -> f64 {
    let (logits, _) = forward(p, x, Mode::Eval, &mut rng::stream(0, "unused", 0)).unwrap();
    let ce: f64 = logits
        .rows()
        .zip(labels)
        .map(|(z, &y)| {
            let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + libm::log(z.iter().map(|v| libm::exp(v - m)).sum::<f64>());
            lse - z[y]
        })
        .sum::<f64>()
        / labels.len() as f64;
    let l2: f64 = p.tensors().iter().flat_map(|t| t.data()).map(|v| v * v).sum();
    ce + lambda * l2
}

fn loss_value(members: &[BackboneParams], x: &Tensor, labels: &[usize], cfg: &LossConfig) -> f64 {
    let mut t = Tape::new();
    let params: Vec<ParamVars> = members.iter().map(|m| m.register(&mut t, true)).collect();
    let xv = t.constant(x.clone());
    let views = vec![xv; members.len()];
    let mut rngs: Vec<Stream> = (0..members.len()).map(|j| rng::stream(0, "d", j as u64)).collect();
    let l = joint_loss(&mut t, members[0].arch(), &params, &views, labels, cfg, &mut rngs).unwrap();
    t.value(l.total).item()
}

#[test]
fn joint_loss_degenerate_cases() {
    let d = small_data(3);
    let x = d.plain_batch(&[0, 31, 62, 5]);
    let labels = [0, 1, 2, 0];
    let a = BackboneParams::init(Architecture::standard(3), 1).unwrap();
    let b = BackboneParams::init(Architecture::standard(3), 2).unwrap();
    let cfg = LossConfig {
        weight_decay: 5e-4,
        gamma: 0.0,
        penalty: PenaltyKind::CosineDiversity,
        temperature_probe: None,
    };
    let single = loss_value(core::slice::from_ref(&a), &x, &labels, &cfg);
    assert!((single - single_network_loss(&a, &x, &labels, 5e-4)).abs() < 1e-12);
    let pair = loss_value(&[a.clone(), b.clone()], &x, &labels, &cfg);
    let sum = single_network_loss(&a, &x, &labels, 5e-4) + single_network_loss(&b, &x, &labels, 5e-4);
    assert!((pair - sum).abs() < 1e-12);
    // a single member never carries the penalty, whatever gamma says
    let one = loss_value(
        core::slice::from_ref(&a),
        &x,
        &labels,
        &LossConfig { gamma: 3.0, ..cfg },
    );
    assert_eq!(one, single);
}

#[test]
fn joint_loss_rejects_view_mismatch() {
    let a = BackboneParams::init(Architecture::standard(3), 1).unwrap();
    let mut t = Tape::new();
    let p = a.register(&mut t, true);
    let x = t.constant(Tensor::zeros(&[1, 1, 16, 16]));
    let cfg = LossConfig {
        weight_decay: 0.0,
        gamma: 0.0,
        penalty: PenaltyKind::None,
        temperature_probe: None,
    };
    let r = joint_loss(
        &mut t,
        a.arch(),
        &[p, p],
        &[x],
        &[0],
        &cfg,
        &mut [rng::stream(0, "a", 0)],
    );
    assert!(matches!(r, Err(Error::Parameter { .. })));
}

#[test]
fn joint_loss_gradient_matches_finite_differences() {
    let arch = Architecture::standard(3).with_width(0.25);
    let a = BackboneParams::init(arch, 3).unwrap();
    let b = BackboneParams::init(arch, 4).unwrap();
    let d = small_data(3);
    let x = d.plain_batch(&[2, 40]);
    let labels = [0, 1];
    for penalty in PenaltyKind::ALL.into_iter().skip(1) {
        let cfg = LossConfig {
            weight_decay: 5e-4,
            gamma: 1.0,
            penalty,
            temperature_probe: None,
        };
        let points: Vec<Tensor> = a.tensors().iter().chain(b.tensors()).cloned().collect();
        let err = gradcheck::grad_check_many(
            |t, v| {
                let pa = ParamVars(v[..6].try_into().unwrap());
                let pb = ParamVars(v[6..].try_into().unwrap());
                let xv = t.constant(x.clone());
                let mut rngs = vec![rng::stream(0, "d", 0), rng::stream(0, "d", 1)];
                Ok(joint_loss(t, &arch, &[pa, pb], &[xv, xv], &labels, &cfg, &mut rngs)?.total)
            },
            &points,
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-4, "{penalty}: {err}");
    }
}

#[test]
fn near_certain_drop_updates_exactly_one_member() {
    let d = small_data(3);
    let cfg = TrainConfig {
        robust: RobustConfig {
            member_drop_prob: 0.999,
            ..RobustConfig::off()
        },
        ..quick_config(3)
    };
    let mut tr = Trainer::new(cfg.clone(), &d).unwrap();
    for step in 0..20 {
        let before = tr.ensemble.clone();
        let m = train_step(&mut tr.ensemble, &mut tr.opt, &d, &[0, 1, 40, 80], &cfg, cfg.lr, step).unwrap();
        let changed = (0..3)
            .filter(|&j| tr.ensemble.members()[j] != before.members()[j])
            .count();
        assert_eq!(changed, 1);
        assert_eq!(m.member_ce.iter().filter(|c| c.is_some()).count(), 1);
        assert!(m.penalty.is_none());
    }
}

#[test]
fn steps_are_deterministic() {
    let d = small_data(3);
    let cfg = TrainConfig {
        augment: AugmentPolicy::default(),
        robust: RobustConfig::recipe(),
        gamma: 1.0,
        penalty: PenaltyKind::SymKlCooperation,
        ..quick_config(3)
    };
    let run = || {
        let mut tr = Trainer::new(cfg.clone(), &d).unwrap();
        tr.train_epoch().unwrap();
        tr.ensemble
    };
    assert_eq!(run(), run());
}

#[test]
fn training_loss_halves_within_200_steps() {
    let d = small_data(3);
    let cfg = quick_config(1);
    let mut tr = Trainer::new(cfg.clone(), &d).unwrap();
    let mut losses = Vec::new();
    let mut order = rng::stream(1, "curve", 0);
    for step in 0..200 {
        let batch: Vec<usize> = (0..16).map(|_| order.random_range(0..d.len())).collect();
        let m = train_step(&mut tr.ensemble, &mut tr.opt, &d, &batch, &cfg, cfg.lr, step).unwrap();
        losses.push(m.loss);
    }
    let head: f64 = losses[..10].iter().sum::<f64>() / 10.0;
    let tail: f64 = losses[190..].iter().sum::<f64>() / 10.0;
    assert!(tail < 0.5 * head, "initial {head}, final {tail}");
}

#[test]
fn zero_epochs_return_the_initialization() {
    let full = synth_generate(21, 13, 30, 16).unwrap();
    let split = ClassSplit {
        train: vec![0, 1, 2],
        val: vec![3, 4, 5, 6, 7],
        test: vec![8, 9, 10, 11, 12],
    };
    let cfg = TrainConfig {
        max_epochs: 0,
        ..quick_config(2)
    };
    let (ens, log) = train_ensemble(&full, &split, &cfg).unwrap();
    let arch = Architecture::standard(3);
    assert_eq!(ens, EnsembleParams::init(arch, &cfg.seeds()).unwrap());
    assert!(log.records.is_empty());
}

#[test]
fn full_runs_are_reproducible() {
    let full = synth_generate(21, 13, 30, 16).unwrap();
    let split = ClassSplit {
        train: vec![0, 1, 2],
        val: vec![3, 4, 5, 6, 7],
        test: vec![8, 9, 10, 11, 12],
    };
    let cfg = TrainConfig {
        val_episodes: 10,
        max_epochs: 3,
        patience: 1,
        ..quick_config(2)
    };
    let (a, la) = train_ensemble(&full, &split, &cfg).unwrap();
    let (b, lb) = train_ensemble(&full, &split, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(la, lb);
    assert_eq!(la.to_text(), lb.to_text());
    assert!(la.records.iter().all(|r| r.val_accuracy.is_some()));
    let text = la.to_text();
    assert!(text.starts_with("# epoch\tmember_ce"));
    assert_eq!(text.lines().count(), la.records.len() + 2);
}

#[test]
fn joint_training_without_coupling_matches_separate_runs() {
    let d = small_data(3);
    let cfg = TrainConfig {
        augment: AugmentPolicy::default(),
        robust: RobustConfig {
            dropout_before_head: 0.1,
            ..RobustConfig::off()
        },
        ..quick_config(3)
    };
    let mut joint = Trainer::new(cfg.clone(), &d).unwrap();
    joint.train_epoch().unwrap();
    for (j, &seed) in cfg.seeds().iter().enumerate() {
        let solo_cfg = TrainConfig {
            n_members: 1,
            member_seeds: Some(vec![seed]),
            ..cfg.clone()
        };
        let mut solo = Trainer::new(solo_cfg, &d).unwrap();
        solo.train_epoch().unwrap();
        assert_eq!(solo.ensemble.members()[0], joint.ensemble.members()[j]);
    }
}

#[test]
fn non_finite_parameters_abort_training() {
    let d = small_data(3);
    let cfg = quick_config(1);
    let mut tr = Trainer::new(cfg.clone(), &d).unwrap();
    tr.ensemble.members_mut()[0].tensors_mut()[4].data_mut()[0] = f64::NAN;
    let err = train_step(&mut tr.ensemble, &mut tr.opt, &d, &[0, 1], &cfg, cfg.lr, 0).unwrap_err();
    assert!(matches!(err, Error::Numeric(_)));
}

#[test]
fn strategies_map_to_penalties() {
    let c = TrainConfig::for_strategy(Strategy::Diversity, 3, 1);
    assert_eq!((c.penalty, c.gamma), (PenaltyKind::CosineDiversity, 1.0));
    let c = TrainConfig::for_strategy(Strategy::Robust, 3, 1);
    assert_eq!((c.penalty, c.gamma), (PenaltyKind::SymKlCooperation, 10.0));
    assert_eq!(c.robust, RobustConfig::recipe());
    let c = TrainConfig::for_strategy(Strategy::Independent, 3, 1);
    assert_eq!(c.gamma, 0.0);
    for s in Strategy::ALL {
        assert_eq!(Strategy::from_token(s.token()), Some(s));
    }
}
