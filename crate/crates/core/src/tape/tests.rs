use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::gradcheck::{grad_check, grad_check_many};

type Probe = fn(&mut Tape, &[Var]) -> Result<Var>;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Runs `f` on 10 seeded random points and returns the worst error.
fn sweep(shapes: &[&[usize]], lo: f64, hi: f64, f: impl Fn(&mut Tape, &[Var]) -> Result<Var>) -> f64 {
    let mut worst = 0.0f64;
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts: Vec<Tensor> = shapes.iter().map(|s| rand_tensor(&mut rng, s, lo, hi)).collect();
        worst = worst.max(grad_check_many(&f, &pts, 1e-5).unwrap());
    }
    worst
}

/// Weighted sum so that every output coordinate gets a distinct upstream gradient.
fn weighted_sum(t: &mut Tape, y: Var) -> Result<Var> {
    let n = t.value(y).len();
    let w: Vec<f64> = (0..n).map(|i| 0.3 + 0.17 * i as f64 - 0.01 * (i * i) as f64).collect();
    let wv = t.constant(Tensor::new(t.shape(y).to_vec(), w)?);
    let p = t.mul(y, wv)?;
    Ok(t.sum(p))
}

const TOL: f64 = 1e-5;

#[test]
fn matmul_identity_and_selector() {
    let mut t = Tape::new();
    let i2 = t.constant(Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap());
    let m = t.constant(Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    let out = t.matmul(i2, m).unwrap();
    assert_eq!(t.value(out).data(), &[1.0, 2.0, 3.0, 4.0]);

    let sel = t.constant(Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 0.0]).unwrap());
    let col = t.constant(Tensor::matrix(2, 1, vec![5.0, 7.0]).unwrap());
    let out = t.matmul(sel, col).unwrap();
    assert_eq!(t.value(out).shape(), &[2, 1]);
    assert_eq!(t.value(out).data(), &[5.0, 0.0]);
}

#[test]
fn matmul_shape_error_names_both_shapes() {
    let mut t = Tape::new();
    let a = t.constant(Tensor::zeros(&[3, 4]));
    let b = t.constant(Tensor::zeros(&[3, 2]));
    match t.matmul(a, b) {
        Err(Error::Dimension { lhs, rhs, .. }) => {
            assert_eq!(lhs, vec![3, 4]);
            assert_eq!(rhs, vec![3, 2]);
        }
        other => panic!("expected dimension error, got {other:?}"),
    }
}

#[test]
fn matmul_gradient_matches_finite_differences() {
    let err = sweep(&[&[3, 4], &[4, 2]], -1.0, 1.0, |t, v| {
        let c = t.matmul(v[0], v[1])?;
        Ok(t.sum(c))
    });
    assert!(err < 1e-6, "{err}");
    let err = sweep(&[&[3, 4], &[4, 2]], -1.0, 1.0, |t, v| {
        let c = t.matmul(v[0], v[1])?;
        weighted_sum(t, c)
    });
    assert!(err < TOL, "{err}");
}

#[test]
fn conv_zero_kernels_give_zero_output() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut t = Tape::new();
    let x = t.constant(rand_tensor(&mut rng, &[2, 5, 5], -1.0, 1.0));
    let k = t.constant(Tensor::zeros(&[3, 2, 3, 3]));
    let y = t.conv2d(x, k, None).unwrap();
    assert_eq!(t.shape(y), &[3, 5, 5]);
    assert!(t.value(y).data().iter().all(|&v| v == 0.0));
}

#[test]
fn conv_center_tap_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let input = rand_tensor(&mut rng, &[1, 6, 7], -1.0, 1.0);
    let mut kern = vec![0.0; 9];
    kern[4] = 1.0;
    let mut t = Tape::new();
    let x = t.constant(input.clone());
    let k = t.constant(Tensor::new(vec![1, 1, 3, 3], kern).unwrap());
    let y = t.conv2d(x, k, None).unwrap();
    assert_eq!(t.value(y).data(), input.data());
}

#[test]
fn conv_matches_direct_definition() {
    // independent direct loops over the padded input
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (ci, co, h, w) = (2, 3, 4, 5);
    let x = rand_tensor(&mut rng, &[ci, h, w], -1.0, 1.0);
    let k = rand_tensor(&mut rng, &[co, ci, 3, 3], -1.0, 1.0);
    let b = rand_tensor(&mut rng, &[co], -1.0, 1.0);
    let mut t = Tape::new();
    let (xv, kv, bv) = (t.constant(x.clone()), t.constant(k.clone()), t.constant(b.clone()));
    let y = t.conv2d(xv, kv, Some(bv)).unwrap();
    for o in 0..co {
        for r in 0..h {
            for c in 0..w {
                let mut acc = b.data()[o];
                for i in 0..ci {
                    for dy in 0..3 {
                        for dx in 0..3 {
                            let (rr, cc) = (r as isize + dy as isize - 1, c as isize + dx as isize - 1);
                            if rr < 0 || cc < 0 || rr >= h as isize || cc >= w as isize {
                                continue;
                            }
                            acc += k.data()[((o * ci + i) * 3 + dy) * 3 + dx]
                                * x.data()[(i * h + rr as usize) * w + cc as usize];
                        }
                    }
                }
                let got = t.value(y).data()[(o * h + r) * w + c];
                assert!((got - acc).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn conv_channel_mismatch_is_dimension_error() {
    let mut t = Tape::new();
    let x = t.constant(Tensor::zeros(&[2, 5, 5]));
    let k = t.constant(Tensor::zeros(&[3, 1, 3, 3]));
    assert!(matches!(t.conv2d(x, k, None), Err(Error::Dimension { .. })));
}

#[test]
fn conv_gradient_matches_finite_differences() {
    let err = sweep(&[&[2, 5, 5], &[3, 2, 3, 3], &[3]], -1.0, 1.0, |t, v| {
        let y = t.conv2d(v[0], v[1], Some(v[2]))?;
        weighted_sum(t, y)
    });
    assert!(err < TOL, "{err}");
    // batched layout
    let err = sweep(&[&[2, 2, 4, 3], &[2, 2, 3, 3]], -1.0, 1.0, |t, v| {
        let y = t.conv2d(v[0], v[1], None)?;
        weighted_sum(t, y)
    });
    assert!(err < TOL, "{err}");
}

#[test]
fn softmax_temp_examples() {
    let mut t = Tape::new();
    let z = t.constant(Tensor::vector(vec![0.0, 0.0, 0.0]).unwrap());
    let p = t.softmax_temp(z, 1.0).unwrap();
    for &v in t.value(p).data() {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
    let z = t.constant(Tensor::vector(vec![10.0, 0.0, 0.0]).unwrap());
    let p = t.softmax_temp(z, 1e6).unwrap();
    for &v in t.value(p).data() {
        assert!((v - 1.0 / 3.0).abs() < 1e-5);
    }
    let z = t.constant(Tensor::vector(vec![2.0, 1.0, 0.0]).unwrap());
    let p = t.softmax_temp(z, 1.0).unwrap();
    // e^2, e^1, e^0 over their sum
    let denom = 2f64.exp() + 1f64.exp() + 1.0;
    let expected = [2f64.exp() / denom, 1f64.exp() / denom, 1.0 / denom];
    for (got, want) in t.value(p).data().iter().zip(expected) {
        assert!((got - want).abs() < 1e-12);
    }
    for (got, want) in t.value(p).data().iter().zip([0.66524, 0.24473, 0.09003]) {
        assert!((got - want).abs() < 1e-5);
    }
}

#[test]
fn softmax_temp_rejects_non_positive_temperature() {
    let mut t = Tape::new();
    let z = t.constant(Tensor::vector(vec![1.0, 2.0]).unwrap());
    assert!(matches!(t.softmax_temp(z, 0.0), Err(Error::Parameter { .. })));
    assert!(matches!(t.softmax_temp(z, -1.0), Err(Error::Parameter { .. })));
}

#[test]
fn softmax_temp_gradient() {
    for temp in [0.5, 1.0, 10.0] {
        let err = sweep(&[&[3, 4]], -3.0, 3.0, |t, v| {
            let p = t.softmax_temp(v[0], temp)?;
            weighted_sum(t, p)
        });
        assert!(err < TOL, "T={temp}: {err}");
    }
}

#[test]
fn elementwise_and_reduction_gradients() {
    let cases: Vec<(&str, Probe)> = vec![
        ("add", |t, v| {
            let y = t.add(v[0], v[1])?;
            weighted_sum(t, y)
        }),
        ("sub", |t, v| {
            let y = t.sub(v[0], v[1])?;
            weighted_sum(t, y)
        }),
        ("mul", |t, v| {
            let y = t.mul(v[0], v[1])?;
            weighted_sum(t, y)
        }),
        ("scale", |t, v| {
            let y = t.scale(v[0], -2.5);
            weighted_sum(t, y)
        }),
        ("relu", |t, v| {
            let y = t.relu(v[0]);
            weighted_sum(t, y)
        }),
        ("l2_norm_squared", |t, v| Ok(t.l2_norm_squared(v[0]))),
        ("mean", |t, v| {
            let y = t.mul(v[0], v[1])?;
            Ok(t.mean(y))
        }),
        ("sum_last", |t, v| {
            let y = t.sum_last(v[0]);
            weighted_sum(t, y)
        }),
        ("flatten", |t, v| {
            let y = t.flatten(v[0]);
            weighted_sum(t, y)
        }),
    ];
    for (name, f) in cases {
        let err = sweep(&[&[3, 4], &[3, 4]], -1.0, 1.0, f);
        assert!(err < TOL, "{name}: {err}");
    }
}

#[test]
fn row_bias_gradient() {
    let err = sweep(&[&[3, 4], &[4]], -1.0, 1.0, |t, v| {
        let y = t.add_row_bias(v[0], v[1])?;
        weighted_sum(t, y)
    });
    assert!(err < TOL, "{err}");
}

#[test]
fn pooling_gradients() {
    let err = sweep(&[&[2, 3, 4, 6]], -1.0, 1.0, |t, v| {
        let y = t.max_pool_2x2(v[0])?;
        weighted_sum(t, y)
    });
    assert!(err < TOL, "{err}");
    let err = sweep(&[&[2, 3, 4, 5]], -1.0, 1.0, |t, v| {
        let y = t.global_average_pool(v[0])?;
        weighted_sum(t, y)
    });
    assert!(err < TOL, "{err}");
}

#[test]
fn max_pool_values() {
    let mut t = Tape::new();
    let x = t.constant(Tensor::new(vec![1, 2, 4], vec![1.0, 5.0, 2.0, 0.0, 3.0, 4.0, -1.0, 7.0]).unwrap());
    let y = t.max_pool_2x2(x).unwrap();
    assert_eq!(t.shape(y), &[1, 1, 2]);
    assert_eq!(t.value(y).data(), &[5.0, 7.0]);
}

#[test]
fn probability_op_gradients() {
    let err = sweep(&[&[3, 5], &[3, 5]], 0.05, 1.0, |t, v| {
        let y = t.cross_entropy(v[0], v[1])?;
        weighted_sum(t, y)
    });
    assert!(err < TOL, "cross_entropy: {err}");
    let err = sweep(&[&[3, 5], &[3, 5]], 0.05, 1.0, |t, v| {
        let y = t.kl_divergence(v[0], v[1])?;
        weighted_sum(t, y)
    });
    assert!(err < TOL, "kl: {err}");
    let err = sweep(&[&[3, 5], &[3, 5]], -1.0, 1.0, |t, v| {
        let y = t.cosine_similarity(v[0], v[1])?;
        weighted_sum(t, y)
    });
    assert!(err < TOL, "cosine: {err}");
    let err = sweep(&[&[3, 5]], 0.05, 1.0, |t, v| {
        let y = t.condition_non_gt(v[0], &[0, 4, 2])?;
        weighted_sum(t, y)
    });
    assert!(err < TOL, "condition_non_gt: {err}");
}

#[test]
fn dropout_gradient_with_replayed_stream() {
    let err = sweep(&[&[4, 6]], -1.0, 1.0, |t, v| {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let y = t.dropout(v[0], 0.3, &mut rng)?;
        weighted_sum(t, y)
    });
    assert!(err < TOL, "{err}");
}

#[test]
fn dropout_uses_inverted_scaling() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut t = Tape::new();
    let x = t.constant(Tensor::full(&[1000], 1.0));
    let y = t.dropout(x, 0.25, &mut rng).unwrap();
    let vals = t.value(y).data();
    assert!(vals.iter().all(|&v| v == 0.0 || (v - 1.0 / 0.75).abs() < 1e-15));
    let kept = vals.iter().filter(|&&v| v > 0.0).count();
    assert!((650..850).contains(&kept), "{kept}");
    let y0 = t.dropout(x, 0.0, &mut rng).unwrap();
    assert_eq!(t.value(y0).data(), t.value(x).data());
}

#[test]
fn kl_identity_and_non_negativity() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..200 {
        let mut p: Vec<f64> = (0..6).map(|_| rng.random::<f64>()).collect();
        let mut q: Vec<f64> = (0..6).map(|_| rng.random::<f64>()).collect();
        if rng.random::<bool>() {
            p[2] = 0.0;
        }
        let (sp, sq): (f64, f64) = (p.iter().sum(), q.iter().sum());
        p.iter_mut().for_each(|v| *v /= sp);
        q.iter_mut().for_each(|v| *v /= sq);
        assert!(kl_row(&p, &p).abs() < 1e-12);
        assert!(kl_row(&p, &q) >= 0.0);
    }
    // fully disjoint supports still give a finite value
    let v = kl_row(&[1.0, 0.0], &[0.0, 1.0]);
    assert!(v.is_finite() && v > 0.0);
}

#[test]
fn fan_out_accumulates() {
    let mut t = Tape::new();
    let x = t.param(Tensor::vector(vec![1.5, -2.0]).unwrap());
    let a = t.scale(x, 3.0);
    let b = t.add(a, x).unwrap();
    let s = t.sum(b);
    t.backward(s).unwrap();
    assert_eq!(t.grad(x).unwrap(), &[4.0, 4.0]);
    t.zero_grad();
    assert!(t.grad(x).is_none());
}

#[test]
fn constants_receive_no_gradient() {
    let mut t = Tape::new();
    let c = t.constant(Tensor::vector(vec![1.0, 2.0]).unwrap());
    let x = t.param(Tensor::vector(vec![3.0, 4.0]).unwrap());
    let y = t.mul(c, x).unwrap();
    let s = t.sum(y);
    t.backward(s).unwrap();
    assert!(t.grad(c).is_none());
    assert_eq!(t.grad(x).unwrap(), &[1.0, 2.0]);
}

#[test]
fn replay_is_bit_identical() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let x0 = rand_tensor(&mut rng, &[2, 1, 6, 6], -1.0, 1.0);
        let k0 = rand_tensor(&mut rng, &[4, 1, 3, 3], -1.0, 1.0);
        let mut t = Tape::new();
        let x = t.constant(x0);
        let k = t.param(k0);
        let y = t.conv2d(x, k, None).unwrap();
        let y = t.relu(y);
        let y = t.dropout(y, 0.2, &mut rng).unwrap();
        let y = t.global_average_pool(y).unwrap();
        let p = t.softmax_temp(y, 1.0).unwrap();
        let s = t.l2_norm_squared(p);
        t.backward(s).unwrap();
        (
            t.value(s).item().to_bits(),
            t.grad(k).unwrap().iter().map(|g| g.to_bits()).collect::<Vec<_>>(),
        )
    };
    assert_eq!(run(), run());
}

#[test]
fn single_point_grad_check_api() {
    let x = Tensor::vector(vec![0.2, 0.5, 0.3]).unwrap();
    let err = grad_check(
        |t, v| {
            let p = t.softmax_temp(v, 2.0)?;
            Ok(t.l2_norm_squared(p))
        },
        &x,
        1e-5,
    )
    .unwrap();
    assert!(err < TOL);
}

mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn softmax_positive_and_normalized(z in proptest::collection::vec(-500.0f64..500.0, 1..12), temp in 0.05f64..50.0) {
            let mut t = Tape::new();
            let v = t.constant(Tensor::vector(z).unwrap());
            let p = t.softmax_temp(v, temp).unwrap();
            let vals = t.value(p).data();
            prop_assert!(vals.iter().all(|&x| x > 0.0));
            let s: f64 = vals.iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
        }
    }
}
