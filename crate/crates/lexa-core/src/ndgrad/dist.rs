//! Diagonal Gaussian utilities.

use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;

use super::real::Real;
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// Lower bound added to every softplus-parameterized standard deviation.
pub const STD_FLOOR: f64 = 0.01;

/// `softplus(raw) + floor`.
pub fn std_from_raw<T: Real>(tape: &mut Tape<T>, raw: Var, floor: f64) -> Var {
    let s = tape.softplus(raw);
    tape.add_scalar(s, T::from_f64(floor))
}

fn check_std<T: Real>(tape: &Tape<T>, std: Var) -> Result<()> {
    match tape.value(std).iter().find(|v| !(**v > T::zero())) {
        Some(v) => Err(Error::NonPositiveStd(v.as_f64())),
        None => Ok(()),
    }
}

pub fn standard_normal<T: Real, R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<T> {
    (0..n)
        .map(|_| T::from_f64(rng.sample::<f64, _>(StandardNormal)))
        .collect()
}

/// Reparameterized draw `mean + std ∘ ε` with `ε ~ N(0, I)`.
pub fn gaussian_sample<T: Real, R: Rng + ?Sized>(
    tape: &mut Tape<T>,
    mean: Var,
    std: Var,
    rng: &mut R,
) -> Result<Var> {
    check_std(tape, std)?;
    let shape = tape.shape(mean).to_vec();
    let noise = standard_normal(rng, tape.value(mean).len());
    let eps = tape.input_vec(&shape, noise)?;
    let scaled = tape.mul(std, eps)?;
    tape.add(mean, scaled)
}

/// Closed-form `KL(q ‖ p)` for diagonal Gaussians, summed over the last axis.
pub fn kl_diag_gauss<T: Real>(
    tape: &mut Tape<T>,
    mean_q: Var,
    std_q: Var,
    mean_p: Var,
    std_p: Var,
) -> Result<Var> {
    check_std(tape, std_q)?;
    check_std(tape, std_p)?;
    // log σp − log σq + (σq² + (μq − μp)²) / (2σp²) − ½
    let log_sp = tape.log(std_p)?;
    let log_sq = tape.log(std_q)?;
    let log_ratio = tape.sub(log_sp, log_sq)?;
    let var_q = tape.square(std_q);
    let diff = tape.sub(mean_q, mean_p)?;
    let diff2 = tape.square(diff);
    let num = tape.add(var_q, diff2)?;
    let var_p = tape.square(std_p);
    let den = tape.mul_scalar(var_p, T::from_f64(2.0));
    let quad = tape.div(num, den)?;
    let per_dim = tape.add(log_ratio, quad)?;
    let per_dim = tape.add_scalar(per_dim, T::from_f64(-0.5));
    let last = tape.shape(per_dim).len().saturating_sub(1);
    if tape.shape(per_dim).is_empty() {
        return Ok(per_dim);
    }
    tape.sum_axis(per_dim, last)
}

/// Differential entropy of a diagonal Gaussian, summed over the last axis.
pub fn gaussian_entropy<T: Real>(tape: &mut Tape<T>, std: Var) -> Result<Var> {
    check_std(tape, std)?;
    let log_std = tape.log(std)?;
    // ½·ln(2πe)
    let half_log_2pi_e = 1.418_938_533_204_672_7;
    let per_dim = tape.add_scalar(log_std, T::from_f64(half_log_2pi_e));
    let last = tape.shape(per_dim).len().saturating_sub(1);
    tape.sum_axis(per_dim, last)
}
