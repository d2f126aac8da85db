//! Finite-difference verification of tape gradients.

use super::real::Real;
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Largest relative error between the tape gradient of `f` at `x` and the
/// central difference `(f(x + eps·eᵢ) − f(x − eps·eᵢ)) / 2eps`, using the
/// denominator `max(|a|, |b|, 1e-8)`.
pub fn grad_check<T, F>(f: F, x: &Tensor<T>, eps: f64) -> Result<f64>
where
    T: Real,
    F: Fn(&mut Tape<T>, Var) -> Result<Var>,
{
    if !(eps > 0.0 && eps <= 1e-2) {
        return Err(Error::Invalid(alloc::format!("eps {eps} outside (0, 1e-2]")));
    }
    let mut tape = Tape::new();
    let xv = tape.leaf(x);
    let y = f(&mut tape, xv)?;
    if tape.value(y).len() != 1 {
        return Err(Error::NonScalarLoss(tape.shape(y).to_vec()));
    }
    if !tape.item(y).is_finite() {
        return Err(Error::NonFinite("grad_check objective"));
    }
    let grads = tape.backward(y)?;
    let analytic: alloc::vec::Vec<T> = match grads.get(xv) {
        Some(g) => g.to_vec(),
        None => alloc::vec![T::zero(); x.numel()],
    };

    let eval = |point: &Tensor<T>| -> Result<f64> {
        let mut tape = Tape::new();
        let v = tape.input(point);
        let y = f(&mut tape, v)?;
        Ok(tape.item(y).as_f64())
    };
    let mut probe = x.clone();
    let mut worst = 0.0f64;
    for i in 0..x.numel() {
        let orig = x.data()[i];
        probe.data_mut()[i] = orig + T::from_f64(eps);
        let up = eval(&probe)?;
        probe.data_mut()[i] = orig - T::from_f64(eps);
        let down = eval(&probe)?;
        probe.data_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * eps);
        let a = analytic[i].as_f64();
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    Ok(worst)
}
