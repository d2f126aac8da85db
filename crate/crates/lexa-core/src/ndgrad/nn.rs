//! Layers. A layer stores only parameter ids; values live in a [`ParamSet`]
//! and reach the tape through a [`Binding`].

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use super::param::{Binding, Init, ParamId, ParamSet};
use super::real::Real;
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Elu,
    Tanh,
}

impl Activation {
    fn apply<T: Real>(self, tape: &mut Tape<T>, x: Var) -> Var {
        match self {
            Activation::Elu => tape.elu(x),
            Activation::Tanh => tape.tanh(x),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    w: ParamId,
    b: ParamId,
    inputs: usize,
    outputs: usize,
}

impl Linear {
    pub fn new<T: Real, R: Rng + ?Sized>(
        set: &mut ParamSet<T>,
        name: &str,
        inputs: usize,
        outputs: usize,
        rng: &mut R,
    ) -> Self {
        let w = set.add(
            &format!("{name}/w"),
            &[inputs, outputs],
            Init::Glorot {
                fan_in: inputs,
                fan_out: outputs,
            },
            rng,
        );
        let b = set.add(&format!("{name}/b"), &[outputs], Init::Zeros, rng);
        Self {
            w,
            b,
            inputs,
            outputs,
        }
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, p: &Binding, x: Var) -> Result<Var> {
        let y = tape.matmul(x, p.var(self.w))?;
        tape.add(y, p.var(self.b))
    }
}

/// Stack of affine layers with an activation between them; the last layer is
/// linear.
#[derive(Debug, Clone)]
pub struct Mlp {
    layers: Vec<Linear>,
    act: Activation,
}

impl Mlp {
    pub fn new<T: Real, R: Rng + ?Sized>(
        set: &mut ParamSet<T>,
        name: &str,
        sizes: &[usize],
        act: Activation,
        rng: &mut R,
    ) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output sizes");
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(set, &format!("{name}/l{i}"), w[0], w[1], rng))
            .collect();
        Self { layers, act }
    }

    pub fn inputs(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn outputs(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, p: &Binding, x: Var) -> Result<Var> {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(tape, p, h)?;
            if i + 1 < self.layers.len() {
                h = self.act.apply(tape, h);
            }
        }
        Ok(h)
    }
}

/// Gated recurrent unit:
///
/// ```text
/// r  = σ(x·Wxr + h·Whr + br)
/// u  = σ(x·Wxu + h·Whu + bu)
/// c  = tanh(x·Wxc + r ∘ (h·Whc) + bc)
/// h' = (1 − u) ∘ h + u ∘ c
/// ```
///
/// The three gates share one `[·, 3·hidden]` weight matrix per input.
#[derive(Debug, Clone)]
pub struct GruCell {
    wx: ParamId,
    wh: ParamId,
    b: ParamId,
    inputs: usize,
    hidden: usize,
}

impl GruCell {
    pub fn new<T: Real, R: Rng + ?Sized>(
        set: &mut ParamSet<T>,
        name: &str,
        inputs: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let wx = set.add(
            &format!("{name}/wx"),
            &[inputs, 3 * hidden],
            Init::Glorot {
                fan_in: inputs,
                fan_out: hidden,
            },
            rng,
        );
        let wh = set.add(
            &format!("{name}/wh"),
            &[hidden, 3 * hidden],
            Init::Glorot {
                fan_in: hidden,
                fan_out: hidden,
            },
            rng,
        );
        let b = set.add(&format!("{name}/b"), &[3 * hidden], Init::Zeros, rng);
        Self {
            wx,
            wh,
            b,
            inputs,
            hidden,
        }
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, p: &Binding, h: Var, x: Var) -> Result<Var> {
        let (sh, sx) = (tape.shape(h).to_vec(), tape.shape(x).to_vec());
        if sh.len() != 2 || sx.len() != 2 || sh[0] != sx[0] || sh[1] != self.hidden || sx[1] != self.inputs {
            return Err(Error::ShapeMismatch {
                op: "gru_cell",
                lhs: sh,
                rhs: sx,
            });
        }
        let hd = self.hidden;
        let xw = tape.matmul(x, p.var(self.wx))?;
        let xw = tape.add(xw, p.var(self.b))?;
        let hw = tape.matmul(h, p.var(self.wh))?;

        let xr = tape.slice(xw, 1, 0, hd)?;
        let hr = tape.slice(hw, 1, 0, hd)?;
        let r = tape.add(xr, hr)?;
        let r = tape.sigmoid(r);

        let xu = tape.slice(xw, 1, hd, hd)?;
        let hu = tape.slice(hw, 1, hd, hd)?;
        let u = tape.add(xu, hu)?;
        let u = tape.sigmoid(u);

        let xc = tape.slice(xw, 1, 2 * hd, hd)?;
        let hc = tape.slice(hw, 1, 2 * hd, hd)?;
        let hc = tape.mul(r, hc)?;
        let c = tape.add(xc, hc)?;
        let c = tape.tanh(c);

        // h + u ∘ (c − h)
        let delta = tape.sub(c, h)?;
        let delta = tape.mul(u, delta)?;
        tape.add(h, delta)
    }
}
