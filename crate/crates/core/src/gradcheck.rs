//! Finite-difference verification of reverse-mode gradients.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub mod suite;

/// `|ad - fd| / max(1, |ad|, |fd|)`
pub fn relative_error(ad: f64, fd: f64) -> f64 {
    (ad - fd).abs() / 1f64.max(ad.abs()).max(fd.abs())
}

fn check_step(step: f64) -> Result<()> {
    if !(1e-7..=1e-3).contains(&step) {
        return Err(Error::param("step", format!("{step} outside [1e-7, 1e-3]")));
    }
    Ok(())
}

/// Evaluate a scalar function built on a fresh tape.
fn eval<F>(f: &F, points: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = points.iter().map(|p| tape.param(p.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let v = tape.value(out);
    if v.len() != 1 {
        return Err(Error::dim("grad_check output", v.shape(), &[]));
    }
    Ok(v.item())
}

/// Reverse-mode gradient of `f` at `points`, one vector per input.
pub fn gradient<F>(f: &F, points: &[Tensor]) -> Result<(f64, Vec<Vec<f64>>)>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = points.iter().map(|p| tape.param(p.clone())).collect();
    let out = f(&mut tape, &vars)?;
    tape.backward(out)?;
    let value = tape.value(out).item();
    Ok((value, vars.iter().map(|&v| tape.grad_or_zeros(v)).collect()))
}

/// Largest coordinate-wise relative error between the reverse-mode gradient
/// and central differences, over every coordinate of every input.
pub fn grad_check_many<F>(f: F, points: &[Tensor], step: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    check_step(step)?;
    let (value, grads) = gradient(&f, points)?;
    if !value.is_finite() {
        return Err(Error::Numeric(format!("non-finite value {value} at the probe point")));
    }
    let mut probe: Vec<Tensor> = points.to_vec();
    let mut worst = 0.0f64;
    for (t, grad) in grads.iter().enumerate() {
        for i in 0..points[t].len() {
            let x0 = points[t].data()[i];
            probe[t].data_mut()[i] = x0 + step;
            let up = eval(&f, &probe)?;
            probe[t].data_mut()[i] = x0 - step;
            let down = eval(&f, &probe)?;
            probe[t].data_mut()[i] = x0;
            if !up.is_finite() || !down.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite value near coordinate {i} of input {t}"
                )));
            }
            let fd = (up - down) / (2.0 * step);
            worst = worst.max(relative_error(grad[i], fd));
        }
    }
    Ok(worst)
}

/// Single-input form of [`grad_check_many`].
pub fn grad_check<F>(f: F, point: &Tensor, step: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    grad_check_many(|tape, vars| f(tape, vars[0]), core::slice::from_ref(point), step)
}
