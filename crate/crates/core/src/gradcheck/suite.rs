//! The standing gradient-check suite: every tape primitive, the backbone,
//! the joint ensemble loss under each penalty kind, and the distillation
//! loss, all against central differences at seeded probe points.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::grad_check_many;
use crate::distill::{distill_loss, DistillConfig, HardTermCounter};
use crate::error::Result;
use crate::models::{forward_on_tape, Architecture, BackboneParams, Mode, ParamVars};
use crate::penalties::PenaltyKind;
use crate::rng::{self, Stream};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::training::{joint_loss, LossConfig, TrainConfig};

/// Acceptance threshold on the maximum relative error.
pub const TOLERANCE: f64 = 1e-4;
pub const STEP: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub max_error: f64,
    pub passed: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SuiteOptions {
    /// Add a check whose backward rule is deliberately wrong.
    pub inject_fault: bool,
}

type Probe = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>;
type Case = (String, Vec<Vec<usize>>, f64, Probe);
type Check = (String, Vec<Tensor>, Probe);

fn rand_tensor(r: &mut Stream, shape: &[usize], spread: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| r.random_range(-spread..spread)).collect(),
    )
    .expect("shape")
}

/// `sum(y * w)` for a fixed non-uniform `w`, so every output entry matters.
pub fn weighted_sum(t: &mut Tape, y: Var) -> Result<Var> {
    let n = t.value(y).len();
    let w: Vec<f64> = (0..n).map(|i| 0.3 + 0.17 * i as f64 - 0.01 * (i * i) as f64).collect();
    let wv = t.constant(Tensor::new(t.shape(y).to_vec(), w)?);
    let p = t.mul(y, wv)?;
    Ok(t.sum(p))
}

fn case<F>(name: &str, shapes: &[&[usize]], spread: f64, f: F) -> Case
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var> + 'static,
{
    (
        String::from(name),
        shapes.iter().map(|s| s.to_vec()).collect(),
        spread,
        Box::new(f),
    )
}

fn primitive_cases() -> Vec<Case> {
    vec![
        case("matmul", &[&[3, 4], &[4, 2]], 1.0, |t, v| {
            let y = t.matmul(v[0], v[1])?;
            weighted_sum(t, y)
        }),
        case("add", &[&[2, 3], &[2, 3]], 1.0, |t, v| {
            let y = t.add(v[0], v[1])?;
            weighted_sum(t, y)
        }),
        case("sub", &[&[2, 3], &[2, 3]], 1.0, |t, v| {
            let y = t.sub(v[0], v[1])?;
            weighted_sum(t, y)
        }),
        case("mul", &[&[2, 3], &[2, 3]], 1.0, |t, v| {
            let y = t.mul(v[0], v[1])?;
            weighted_sum(t, y)
        }),
        case("add_row_bias", &[&[3, 4], &[4]], 1.0, |t, v| {
            let y = t.add_row_bias(v[0], v[1])?;
            weighted_sum(t, y)
        }),
        case("scale", &[&[5]], 1.0, |t, v| {
            let y = t.scale(v[0], -2.5);
            weighted_sum(t, y)
        }),
        case("relu", &[&[12]], 1.0, |t, v| {
            let y = t.relu(v[0]);
            weighted_sum(t, y)
        }),
        case("conv2d", &[&[2, 5, 6], &[3, 2, 3, 3], &[3]], 1.0, |t, v| {
            let y = t.conv2d(v[0], v[1], Some(v[2]))?;
            weighted_sum(t, y)
        }),
        case("conv2d_batched", &[&[2, 1, 4, 5], &[2, 1, 3, 3]], 1.0, |t, v| {
            let y = t.conv2d(v[0], v[1], None)?;
            weighted_sum(t, y)
        }),
        case("max_pool_2x2", &[&[2, 5, 4]], 1.0, |t, v| {
            let y = t.max_pool_2x2(v[0])?;
            weighted_sum(t, y)
        }),
        case("global_average_pool", &[&[2, 3, 4, 4]], 1.0, |t, v| {
            let y = t.global_average_pool(v[0])?;
            weighted_sum(t, y)
        }),
        case("reshape", &[&[2, 6]], 1.0, |t, v| {
            let y = t.reshape(v[0], vec![3, 4])?;
            let y = t.flatten(y);
            weighted_sum(t, y)
        }),
        case("softmax", &[&[3, 5]], 3.0, |t, v| {
            let y = t.softmax_temp(v[0], 1.0)?;
            weighted_sum(t, y)
        }),
        case("softmax_t10", &[&[3, 5]], 3.0, |t, v| {
            let y = t.softmax_temp(v[0], 10.0)?;
            weighted_sum(t, y)
        }),
        case("condition_non_gt", &[&[3, 4]], 2.0, |t, v| {
            let p = t.softmax_temp(v[0], 1.0)?;
            let y = t.condition_non_gt(p, &[0, 3, 1])?;
            weighted_sum(t, y)
        }),
        case("cross_entropy", &[&[2, 4], &[2, 4]], 2.0, |t, v| {
            let target = t.softmax_temp(v[0], 1.0)?;
            let pred = t.softmax_temp(v[1], 1.0)?;
            let y = t.cross_entropy(target, pred)?;
            weighted_sum(t, y)
        }),
        case("cosine_similarity", &[&[3, 4], &[3, 4]], 1.0, |t, v| {
            let y = t.cosine_similarity(v[0], v[1])?;
            weighted_sum(t, y)
        }),
        case("kl_divergence", &[&[2, 5], &[2, 5]], 2.0, |t, v| {
            let p = t.softmax_temp(v[0], 1.0)?;
            let q = t.softmax_temp(v[1], 1.0)?;
            let y = t.kl_divergence(p, q)?;
            weighted_sum(t, y)
        }),
        case("dropout", &[&[10]], 1.0, |t, v| {
            let y = t.dropout(v[0], 0.3, &mut rng::stream(1, "suite-dropout", 0))?;
            weighted_sum(t, y)
        }),
        case("l2_norm_squared", &[&[7]], 1.0, |t, v| Ok(t.l2_norm_squared(v[0]))),
        case("sum", &[&[2, 3]], 1.0, |t, v| Ok(t.sum(v[0]))),
        case("mean", &[&[2, 3]], 1.0, |t, v| Ok(t.mean(v[0]))),
        case("sum_last", &[&[3, 4]], 1.0, |t, v| {
            let y = t.sum_last(v[0]);
            weighted_sum(t, y)
        }),
    ]
}

fn tiny_arch(n_classes: usize) -> Architecture {
    Architecture::standard(n_classes).with_width(0.25)
}

fn params_from(v: &[Var]) -> ParamVars {
    ParamVars(v.try_into().expect("six parameter tensors"))
}

fn backbone_points(arch: Architecture, seed: u64) -> Vec<Tensor> {
    BackboneParams::init(arch, seed).expect("valid arch").tensors().to_vec()
}

fn composite_cases(points: &mut Vec<Check>) {
    let arch = tiny_arch(3).with_dropout(0.2);
    let mut r = rng::stream(7, "suite-input", 0);
    let x = rand_tensor(&mut r, &[2, 1, 8, 8], 0.5);

    let xf = x.clone();
    points.push((
        String::from("backbone_forward"),
        backbone_points(arch, 1),
        Box::new(move |t, v| {
            let xv = t.constant(xf.clone());
            let out = forward_on_tape(t, &arch, &params_from(v), xv, Mode::Train, &mut rng::stream(2, "d", 0))?;
            let y = weighted_sum(t, out.logits)?;
            let f = weighted_sum(t, out.features)?;
            t.add(y, f)
        }),
    ));

    let defaults = TrainConfig::default();
    let probes = [None, Some(4.0)];
    for kind in PenaltyKind::ALL {
        for probe in probes {
            if kind == PenaltyKind::None && probe.is_some() {
                continue;
            }
            let cfg = LossConfig {
                weight_decay: defaults.weight_decay,
                gamma: if kind == PenaltyKind::None { 0.0 } else { 1.0 },
                penalty: kind,
                temperature_probe: probe,
            };
            let name = match probe {
                None => format!("joint_loss[{kind}]"),
                Some(t) => format!("joint_loss[{kind}, probe T={t}]"),
            };
            let mut pts = backbone_points(arch, 3);
            pts.extend(backbone_points(arch, 4));
            let xj = x.clone();
            points.push((
                name,
                pts,
                Box::new(move |t, v| {
                    let xv = t.constant(xj.clone());
                    let mut rngs = vec![rng::stream(5, "d", 0), rng::stream(5, "d", 1)];
                    let members = [params_from(&v[..6]), params_from(&v[6..])];
                    Ok(joint_loss(t, &arch, &members, &[xv, xv], &[0, 2], &cfg, &mut rngs)?.total)
                }),
            ));
        }
    }

    let mut teacher = rand_tensor(&mut r, &[3, 4], 3.0);
    for row in teacher.data_mut().chunks_exact_mut(4) {
        crate::tape::softmax_in_place(row, 10.0);
    }
    let dcfg = DistillConfig::new(&defaults);
    points.push((
        String::from("distill_loss"),
        vec![rand_tensor(&mut r, &[3, 4], 3.0)],
        Box::new(move |t, v| {
            let tv = t.constant(teacher.clone());
            distill_loss(
                t,
                v[0],
                &[Some(1), None, Some(3)],
                Some(tv),
                &dcfg,
                &mut HardTermCounter::default(),
            )
        }),
    ));
}

/// Run every check; each probe point is drawn from a fixed stream.
pub fn run_suite(options: SuiteOptions) -> Result<Vec<CheckResult>> {
    let mut r = rng::stream(0, "gradcheck-suite", 0);
    let mut all: Vec<Check> = primitive_cases()
        .into_iter()
        .map(|(name, shapes, spread, f)| {
            let pts = shapes.iter().map(|s| rand_tensor(&mut r, s, spread)).collect();
            (name, pts, f)
        })
        .collect();
    composite_cases(&mut all);
    if options.inject_fault {
        all.push((
            String::from("faulty_scale (negative control)"),
            vec![rand_tensor(&mut r, &[4], 1.0)],
            Box::new(|t, v| {
                let y = t.faulty_scale(v[0], 3.0);
                weighted_sum(t, y)
            }),
        ));
    }
    all.into_iter()
        .map(|(name, pts, f)| {
            let max_error = grad_check_many(f, &pts, STEP)?;
            Ok(CheckResult {
                name,
                max_error,
                passed: max_error < TOLERANCE,
            })
        })
        .collect()
}
