//! Recurrent state-space world model.
//!
//! The latent state has a deterministic part `h` carried by a GRU and a
//! stochastic part `z` drawn from a diagonal Gaussian. The posterior sees the
//! current image embedding; the prior does not. Both share the recurrent
//! update, so for equal inputs they produce the same `h`.

use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndgrad::{
    gaussian_sample, kl_diag_gauss, std_from_raw, Activation, Adam, AdamOutcome, Binding, GruCell,
    Linear, Mlp, ParamSet, Real, Tape, Tensor, Var, STD_FLOOR,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldModelConfig {
    /// Image height, width, channels.
    pub image: [usize; 3],
    pub action_dim: usize,
    pub embed_dim: usize,
    pub deter_dim: usize,
    pub stoch_dim: usize,
    pub encoder_hidden: usize,
    pub decoder_hidden: usize,
    pub hidden: usize,
    pub kl_scale: f64,
    pub free_nats: f64,
    pub lr: f64,
    pub clip_norm: f64,
}

impl Default for WorldModelConfig {
    fn default() -> Self {
        Self {
            image: [16, 16, 3],
            action_dim: 2,
            embed_dim: 64,
            deter_dim: 128,
            stoch_dim: 32,
            encoder_hidden: 256,
            decoder_hidden: 256,
            hidden: 128,
            kl_scale: 1.0,
            free_nats: 1.0,
            lr: 3e-4,
            clip_norm: 100.0,
        }
    }
}

impl WorldModelConfig {
    pub fn pixels(&self) -> usize {
        self.image.iter().product()
    }

    /// Width of `concat(h, z)`.
    pub fn feature_dim(&self) -> usize {
        self.deter_dim + self.stoch_dim
    }
}

/// Batched latent state. Every field has one row per batch element.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub h: Tensor,
    pub z: Tensor,
    pub z_mean: Tensor,
    pub z_std: Tensor,
}

impl ModelState {
    /// Zero `h` and `z`; the statistics are a unit Gaussian placeholder.
    pub fn initial(batch: usize, cfg: &WorldModelConfig) -> Self {
        Self {
            h: Tensor::zeros(&[batch, cfg.deter_dim]),
            z: Tensor::zeros(&[batch, cfg.stoch_dim]),
            z_mean: Tensor::zeros(&[batch, cfg.stoch_dim]),
            z_std: Tensor::full(&[batch, cfg.stoch_dim], 1.0),
        }
    }

    pub fn batch(&self) -> usize {
        self.h.shape()[0]
    }

    /// `concat(h, z)` per row.
    pub fn features(&self) -> Tensor {
        let (b, dh, dz) = (self.batch(), self.h.shape()[1], self.z.shape()[1]);
        let mut data = Vec::with_capacity(b * (dh + dz));
        for r in 0..b {
            data.extend_from_slice(&self.h.data()[r * dh..(r + 1) * dh]);
            data.extend_from_slice(&self.z.data()[r * dz..(r + 1) * dz]);
        }
        Tensor::new(&[b, dh + dz], data).expect("feature width")
    }

    pub fn select(&self, rows: &[usize]) -> Result<Self> {
        Ok(Self {
            h: self.h.select_rows(rows)?,
            z: self.z.select_rows(rows)?,
            z_mean: self.z_mean.select_rows(rows)?,
            z_std: self.z_std.select_rows(rows)?,
        })
    }

    pub fn record<T: Real>(&self, tape: &mut Tape<T>) -> LatentVars {
        LatentVars {
            h: tape.input(&self.h.cast()),
            z: tape.input(&self.z.cast()),
            mean: tape.input(&self.z_mean.cast()),
            std: tape.input(&self.z_std.cast()),
        }
    }

    pub fn read<T: Real>(tape: &Tape<T>, s: &LatentVars) -> Self {
        Self {
            h: tape.tensor(s.h).cast(),
            z: tape.tensor(s.z).cast(),
            z_mean: tape.tensor(s.mean).cast(),
            z_std: tape.tensor(s.std).cast(),
        }
    }

    pub fn concat(parts: &[ModelState]) -> Result<Self> {
        let cat = |f: fn(&ModelState) -> &Tensor| -> Result<Tensor> {
            let width = f(&parts[0]).shape()[1];
            let mut data = Vec::new();
            let mut rows = 0;
            for p in parts {
                data.extend_from_slice(f(p).data());
                rows += f(p).shape()[0];
            }
            Tensor::new(&[rows, width], data)
        };
        if parts.is_empty() {
            return Err(Error::Invalid("concatenating zero states".into()));
        }
        Ok(Self {
            h: cat(|s| &s.h)?,
            z: cat(|s| &s.z)?,
            z_mean: cat(|s| &s.z_mean)?,
            z_std: cat(|s| &s.z_std)?,
        })
    }
}

/// A latent state recorded on a tape.
#[derive(Debug, Clone, Copy)]
pub struct LatentVars {
    pub h: Var,
    pub z: Var,
    pub mean: Var,
    pub std: Var,
}

/// Replayed training sequences, batch-major. `actions[b][t]` is the action
/// that led to `images[b][t]`; `actions[b][0]` is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceBatch {
    pub batch: usize,
    pub len: usize,
    pub pixels: usize,
    pub action_dim: usize,
    pub images: Vec<f32>,
    pub actions: Vec<f32>,
}

impl SequenceBatch {
    pub fn new(
        batch: usize,
        len: usize,
        pixels: usize,
        action_dim: usize,
        images: Vec<f32>,
        mut actions: Vec<f32>,
    ) -> Result<Self> {
        if images.len() != batch * len * pixels || actions.len() != batch * len * action_dim {
            return Err(Error::ShapeMismatch {
                op: "sequence_batch",
                lhs: alloc::vec![batch, len, pixels, action_dim],
                rhs: alloc::vec![images.len(), actions.len()],
            });
        }
        if let Some(&p) = images.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::PixelRange(p));
        }
        if actions.iter().any(|a| !(-1.0..=1.0).contains(a)) {
            return Err(Error::Invalid("actions must lie in [-1, 1]".into()));
        }
        for b in 0..batch {
            let first = b * len * action_dim;
            actions[first..first + action_dim].iter_mut().for_each(|a| *a = 0.0);
        }
        Ok(Self {
            batch,
            len,
            pixels,
            action_dim,
            images,
            actions,
        })
    }

    pub fn frame(&self, b: usize, t: usize) -> &[f32] {
        let start = (b * self.len + t) * self.pixels;
        &self.images[start..start + self.pixels]
    }

    /// Images as `[len * batch, pixels]`, row `t * batch + b`.
    pub fn images_time_major(&self) -> Tensor {
        let mut data = Vec::with_capacity(self.images.len());
        for t in 0..self.len {
            for b in 0..self.batch {
                data.extend_from_slice(self.frame(b, t));
            }
        }
        Tensor::new(&[self.len * self.batch, self.pixels], data).expect("image layout")
    }

    pub fn actions_time_major(&self) -> Tensor {
        let a = self.action_dim;
        let mut data = Vec::with_capacity(self.actions.len());
        for t in 0..self.len {
            for b in 0..self.batch {
                let s = (b * self.len + t) * a;
                data.extend_from_slice(&self.actions[s..s + a]);
            }
        }
        Tensor::new(&[self.len * self.batch, a], data).expect("action layout")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct WorldModelLosses {
    /// Mean over frames of `½·Σ(x − x̂)²`.
    pub reconstruction_nll: f64,
    /// KL term entering the objective, after the free-nats floor.
    pub kl: f64,
    /// Mean posterior-to-prior KL before the floor.
    pub raw_kl: f64,
    pub total: f64,
}

/// Architecture of the world model: parameter ids only.
#[derive(Debug, Clone)]
pub struct RssmNet {
    cfg: WorldModelConfig,
    encoder: Mlp,
    decoder: Mlp,
    input: Linear,
    gru: GruCell,
    posterior: Mlp,
    prior: Mlp,
}

/// Graph outputs of the sequence loss.
#[derive(Debug, Clone)]
pub struct SequenceLoss {
    pub total: Var,
    pub reconstruction_nll: Var,
    pub kl: Var,
    pub raw_kl: Var,
    /// One state per time step, each with `batch` rows.
    pub posteriors: Vec<LatentVars>,
    pub embeddings: Var,
}

impl RssmNet {
    pub fn new<T: Real, R: Rng + ?Sized>(
        cfg: &WorldModelConfig,
        set: &mut ParamSet<T>,
        rng: &mut R,
    ) -> Self {
        let px = cfg.pixels();
        let encoder = Mlp::new(set, "enc", &[px, cfg.encoder_hidden, cfg.embed_dim], Activation::Elu, rng);
        let decoder = Mlp::new(
            set,
            "dec",
            &[cfg.feature_dim(), cfg.decoder_hidden, px],
            Activation::Elu,
            rng,
        );
        let input = Linear::new(set, "img_in", cfg.stoch_dim + cfg.action_dim, cfg.hidden, rng);
        let gru = GruCell::new(set, "gru", cfg.hidden, cfg.deter_dim, rng);
        let posterior = Mlp::new(
            set,
            "post",
            &[cfg.deter_dim + cfg.embed_dim, cfg.hidden, 2 * cfg.stoch_dim],
            Activation::Elu,
            rng,
        );
        let prior = Mlp::new(
            set,
            "prior",
            &[cfg.deter_dim, cfg.hidden, 2 * cfg.stoch_dim],
            Activation::Elu,
            rng,
        );
        Self {
            cfg: cfg.clone(),
            encoder,
            decoder,
            input,
            gru,
            posterior,
            prior,
        }
    }

    pub fn config(&self) -> &WorldModelConfig {
        &self.cfg
    }

    pub fn encode<T: Real>(&self, tape: &mut Tape<T>, p: &Binding, images: Var) -> Result<Var> {
        self.encoder.forward(tape, p, images)
    }

    pub fn decode<T: Real>(&self, tape: &mut Tape<T>, p: &Binding, features: Var) -> Result<Var> {
        self.decoder.forward(tape, p, features)
    }

    pub fn features<T: Real>(tape: &mut Tape<T>, s: &LatentVars) -> Result<Var> {
        tape.concat(&[s.h, s.z], 1)
    }

    /// `h_t = gru(h_{t-1}, elu(W·[z_{t-1}, a_{t-1}]))`.
    pub fn deterministic<T: Real>(
        &self,
        tape: &mut Tape<T>,
        p: &Binding,
        prev: &LatentVars,
        action: Var,
    ) -> Result<Var> {
        let za = tape.concat(&[prev.z, action], 1)?;
        let x = self.input.forward(tape, p, za)?;
        let x = tape.elu(x);
        self.gru.forward(tape, p, prev.h, x)
    }

    fn gaussian<T: Real>(&self, tape: &mut Tape<T>, out: Var) -> Result<(Var, Var)> {
        let dz = self.cfg.stoch_dim;
        let mean = tape.slice(out, 1, 0, dz)?;
        let raw = tape.slice(out, 1, dz, dz)?;
        Ok((mean, std_from_raw(tape, raw, STD_FLOOR)))
    }

    pub fn prior_stats<T: Real>(&self, tape: &mut Tape<T>, p: &Binding, h: Var) -> Result<(Var, Var)> {
        let out = self.prior.forward(tape, p, h)?;
        self.gaussian(tape, out)
    }

    pub fn posterior_stats<T: Real>(
        &self,
        tape: &mut Tape<T>,
        p: &Binding,
        h: Var,
        embed: Var,
    ) -> Result<(Var, Var)> {
        let he = tape.concat(&[h, embed], 1)?;
        let out = self.posterior.forward(tape, p, he)?;
        self.gaussian(tape, out)
    }

    fn finish<T: Real, R: Rng + ?Sized>(
        tape: &mut Tape<T>,
        h: Var,
        mean: Var,
        std: Var,
        rng: Option<&mut R>,
    ) -> Result<LatentVars> {
        let z = match rng {
            Some(rng) => gaussian_sample(tape, mean, std, rng)?,
            None => mean,
        };
        Ok(LatentVars { h, z, mean, std })
    }

    /// One filtering step. With `rng == None` the state takes `z` at its mean.
    pub fn posterior_step<T: Real, R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<T>,
        p: &Binding,
        prev: &LatentVars,
        action: Var,
        embed: Var,
        rng: Option<&mut R>,
    ) -> Result<LatentVars> {
        let h = self.deterministic(tape, p, prev, action)?;
        let (mean, std) = self.posterior_stats(tape, p, h, embed)?;
        Self::finish(tape, h, mean, std, rng)
    }

    /// One open-loop step of the learned dynamics.
    pub fn prior_step<T: Real, R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<T>,
        p: &Binding,
        prev: &LatentVars,
        action: Var,
        rng: Option<&mut R>,
    ) -> Result<LatentVars> {
        let h = self.deterministic(tape, p, prev, action)?;
        let (mean, std) = self.prior_stats(tape, p, h)?;
        Self::finish(tape, h, mean, std, rng)
    }

    fn zero_state<T: Real>(&self, tape: &mut Tape<T>, batch: usize) -> LatentVars {
        let dz = self.cfg.stoch_dim;
        LatentVars {
            h: tape.constant(&[batch, self.cfg.deter_dim], T::zero()),
            z: tape.constant(&[batch, dz], T::zero()),
            mean: tape.constant(&[batch, dz], T::zero()),
            std: tape.constant(&[batch, dz], T::one()),
        }
    }

    /// Negative ELBO of a sequence batch, averaged over frames:
    /// `nll + β·max(kl, free_nats)`.
    pub fn sequence_loss<T: Real, R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<T>,
        p: &Binding,
        batch: &SequenceBatch,
        rng: &mut R,
    ) -> Result<SequenceLoss> {
        let (b, len) = (batch.batch, batch.len);
        let images = tape.input(&batch.images_time_major().cast());
        let actions = tape.input(&batch.actions_time_major().cast());
        let embeddings = self.encode(tape, p, images)?;

        let mut state = self.zero_state(tape, b);
        let mut posteriors = Vec::with_capacity(len);
        let mut kls = Vec::with_capacity(len);
        let mut feats = Vec::with_capacity(len);
        for t in 0..len {
            let a = tape.slice(actions, 0, t * b, b)?;
            let e = tape.slice(embeddings, 0, t * b, b)?;
            let h = self.deterministic(tape, p, &state, a)?;
            let (prior_mean, prior_std) = self.prior_stats(tape, p, h)?;
            let (post_mean, post_std) = self.posterior_stats(tape, p, h, e)?;
            let z = gaussian_sample(tape, post_mean, post_std, rng)?;
            kls.push(kl_diag_gauss(tape, post_mean, post_std, prior_mean, prior_std)?);
            state = LatentVars {
                h,
                z,
                mean: post_mean,
                std: post_std,
            };
            feats.push(Self::features(tape, &state)?);
            posteriors.push(state);
        }
        let feats = tape.concat(&feats, 0)?;
        let recon = self.decode(tape, p, feats)?;
        let err = tape.sub(images, recon)?;
        let sq = tape.square(err);
        let per_frame = tape.sum_axis(sq, 1)?;
        let nll = tape.mean(per_frame);
        let reconstruction_nll = tape.mul_scalar(nll, T::from_f64(0.5));

        let kl_all = tape.concat(&kls, 0)?;
        let raw_kl = tape.mean(kl_all);
        let kl = tape.clamp_min(raw_kl, T::from_f64(self.cfg.free_nats));
        let weighted = tape.mul_scalar(kl, T::from_f64(self.cfg.kl_scale));
        let total = tape.add(reconstruction_nll, weighted)?;
        Ok(SequenceLoss {
            total,
            reconstruction_nll,
            kl,
            raw_kl,
            posteriors,
            embeddings,
        })
    }
}

/// Detached results of one training step.
#[derive(Debug, Clone)]
pub struct ObserveOutput {
    /// Posterior states, `len * batch` rows, row `t * batch + b`.
    pub states: ModelState,
    /// Encoder embeddings in the same row layout.
    pub embeddings: Tensor,
    pub losses: WorldModelLosses,
    pub skipped: bool,
}

/// The world model with its parameters and optimizer.
#[derive(Debug, Clone)]
pub struct WorldModel {
    net: RssmNet,
    params: ParamSet,
    opt: Adam,
}

impl WorldModel {
    pub fn new<R: Rng + ?Sized>(cfg: &WorldModelConfig, rng: &mut R) -> Self {
        let mut params = ParamSet::new("wm/");
        let net = RssmNet::new(cfg, &mut params, rng);
        let mut opt = Adam::new(cfg.lr);
        opt.clip_norm = Some(cfg.clip_norm);
        Self { net, params, opt }
    }

    pub fn net(&self) -> &RssmNet {
        &self.net
    }

    pub fn config(&self) -> &WorldModelConfig {
        &self.net.cfg
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn check_pixels(images: &Tensor) -> Result<()> {
        match images.data().iter().find(|p| !(0.0..=1.0).contains(*p)) {
            Some(&p) => Err(Error::PixelRange(p)),
            None => Ok(()),
        }
    }

    /// Embeds `[n, pixels]` images.
    pub fn encode(&self, images: &Tensor) -> Result<Tensor> {
        Self::check_pixels(images)?;
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape, false);
        let x = tape.input(images);
        let e = self.net.encode(&mut tape, &p, x)?;
        Ok(tape.tensor(e))
    }

    pub fn posterior<R: Rng + ?Sized>(
        &self,
        prev: &ModelState,
        action: &Tensor,
        embed: &Tensor,
        rng: Option<&mut R>,
    ) -> Result<ModelState> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape, false);
        let s = prev.record(&mut tape);
        let a = tape.input(action);
        let e = tape.input(embed);
        let out = self.net.posterior_step(&mut tape, &p, &s, a, e, rng)?;
        Ok(ModelState::read(&tape, &out))
    }

    pub fn prior<R: Rng + ?Sized>(
        &self,
        prev: &ModelState,
        action: &Tensor,
        rng: Option<&mut R>,
    ) -> Result<ModelState> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape, false);
        let s = prev.record(&mut tape);
        let a = tape.input(action);
        let out = self.net.prior_step(&mut tape, &p, &s, a, rng)?;
        Ok(ModelState::read(&tape, &out))
    }

    /// Predicted pixel means, unclamped.
    pub fn decode(&self, state: &ModelState) -> Result<Tensor> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape, false);
        let f = tape.input(&state.features());
        let x = self.net.decode(&mut tape, &p, f)?;
        Ok(tape.tensor(x))
    }

    /// Evaluates the loss without updating anything.
    pub fn evaluate<R: Rng + ?Sized>(&self, batch: &SequenceBatch, rng: &mut R) -> Result<WorldModelLosses> {
        let mut tape = Tape::<f32>::new();
        let p = self.params.bind(&mut tape, false);
        let loss = self.net.sequence_loss(&mut tape, &p, batch, rng)?;
        Ok(losses_of(&tape, &loss))
    }

    /// Unrolls the posterior over the batch, takes one optimizer step on the
    /// negative ELBO and returns detached states for downstream learners.
    pub fn observe_and_train<R: Rng + ?Sized>(
        &mut self,
        batch: &SequenceBatch,
        rng: &mut R,
    ) -> Result<ObserveOutput> {
        let mut tape = Tape::<f32>::new();
        let p = self.params.bind(&mut tape, true);
        let loss = self.net.sequence_loss(&mut tape, &p, batch, rng)?;
        let losses = losses_of(&tape, &loss);
        let states: Vec<ModelState> = loss
            .posteriors
            .iter()
            .map(|s| ModelState::read(&tape, s))
            .collect();
        let states = ModelState::concat(&states)?;
        let embeddings = tape.tensor(loss.embeddings);

        let skipped = if losses.total.is_finite() {
            let grads = tape.backward(loss.total)?;
            self.params.accumulate(&grads, &p);
            matches!(self.opt.step(&mut self.params), AdamOutcome::Skipped)
        } else {
            log::warn!("world model loss is not finite; skipping update");
            true
        };
        Ok(ObserveOutput {
            states,
            embeddings,
            losses,
            skipped,
        })
    }
}

fn losses_of<T: Real>(tape: &Tape<T>, loss: &SequenceLoss) -> WorldModelLosses {
    WorldModelLosses {
        reconstruction_nll: tape.item(loss.reconstruction_nll).as_f64(),
        kl: tape.item(loss.kl).as_f64(),
        raw_kl: tape.item(loss.raw_kl).as_f64(),
        total: tape.item(loss.total).as_f64(),
    }
}
