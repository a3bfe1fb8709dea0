//! Denoiser training by Binomial thinning: draw `x_T` from the data, a time
//! `t` from the noise schedule, `x_t ~ Binomial(x_T, t/T)`, and regress
//! `m(t, x_t)` onto `x_T` under a Bregman loss.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Arch, MlpDenoiser, Scalar, Scaling};
use crate::error::{Error, Result};
use crate::losses::{
    entropic_scalar, sample_noise_level, weight_synthetic, NoiseSchedule, Preconditioner,
};
use crate::poisson_calculus::binomial_thin;

/// Model rates below this are floored inside the entropic loss.
pub const RATE_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    #[default]
    Quadratic,
    Entropic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WeightFn {
    #[default]
    SyntheticInvSqrt,
    PrecondW2,
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub grad_clip_norm: f64,
    pub ema_decay: f64,
    pub loss: LossKind,
    pub weight_fn: WeightFn,
    pub noise_schedule: NoiseSchedule,
    #[serde(rename = "T")]
    pub final_time: f64,
    pub seed: u64,
    pub precondition: bool,
    pub width: usize,
    pub n_blocks: usize,
    pub emb_dim: usize,
    pub n_train: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            batch_size: 128,
            learning_rate: 1e-3,
            weight_decay: 1e-5,
            grad_clip_norm: 1.0,
            ema_decay: 0.999,
            loss: LossKind::Quadratic,
            weight_fn: WeightFn::SyntheticInvSqrt,
            noise_schedule: NoiseSchedule::default(),
            final_time: 1.0,
            seed: 0,
            precondition: false,
            width: 256,
            n_blocks: 3,
            emb_dim: 128,
            n_train: 50_000,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Parameter(m));
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        for (name, v) in [
            ("learning_rate", self.learning_rate),
            ("grad_clip_norm", self.grad_clip_norm),
            ("T", self.final_time),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.weight_decay >= 0.0) {
            return bad(format!("weight_decay must be non-negative, got {}", self.weight_decay));
        }
        if !(self.ema_decay > 0.0 && self.ema_decay < 1.0) {
            return bad(format!("ema_decay must lie in (0, 1), got {}", self.ema_decay));
        }
        if self.precondition && self.final_time != 1.0 {
            return bad(format!("preconditioning needs T = 1, got {}", self.final_time));
        }
        if self.weight_fn == WeightFn::PrecondW2 && !self.precondition {
            return bad("weight_fn precond_w2 requires precondition = true".into());
        }
        if self.loss == LossKind::Entropic && self.precondition {
            return bad(
                "entropic loss cannot be combined with preconditioning: \
                 c_skip x + c_out F gives no control over the sign of the rate"
                    .into(),
            );
        }
        self.noise_schedule.validate()
    }

    pub fn arch(&self, input_dim: usize) -> Arch {
        Arch {
            input_dim,
            width: self.width,
            n_blocks: self.n_blocks,
            emb_dim: self.emb_dim,
        }
    }

    /// Scaling built from the data mean and variance.
    pub fn scaling(&self, mean: f64, var: f64) -> Result<Scaling> {
        if self.precondition {
            Ok(Scaling::Precondition(Preconditioner::new(mean, var)?))
        } else {
            if !(var > 0.0) {
                return Err(Error::Parameter(format!(
                    "standardization needs positive variance, got {var}"
                )));
            }
            Ok(Scaling::Standardize {
                mean,
                std: var.sqrt(),
            })
        }
    }
}

/// One minibatch, coordinates stored row-major.
#[derive(Debug, Clone, Default)]
pub struct Batch {
    pub t: Vec<f64>,
    pub x_t: Vec<f64>,
    pub x_final: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct LossSpec {
    pub loss: LossKind,
    pub weight: WeightFn,
}

impl LossSpec {
    fn weight(&self, model_scaling: &Scaling, t: f64, final_time: f64) -> Result<f64> {
        match self.weight {
            WeightFn::Constant => Ok(1.0),
            WeightFn::SyntheticInvSqrt => Ok(weight_synthetic(t / final_time)),
            WeightFn::PrecondW2 => match model_scaling {
                Scaling::Precondition(p) => Ok(p.coeffs(t).w_sq),
                Scaling::Standardize { .. } => Err(Error::Parameter(
                    "precond_w2 weighting needs a preconditioned model".into(),
                )),
            },
        }
    }
}

/// Mean weighted loss over the batch and its gradient, accumulated into `grad`.
/// Returns the loss and the number of floored entropic rates.
pub fn loss_and_grad<S: Scalar>(
    model: &MlpDenoiser<S>,
    params: &[S],
    batch: &Batch,
    spec: LossSpec,
    grad: &mut [S],
) -> Result<(f64, usize)> {
    let d = model.arch.input_dim;
    let n = batch.t.len();
    let (m, cache, inputs) = model.forward_batch(params, &batch.t, &batch.x_t)?;
    let tt = model.final_time;
    let mut dm = vec![0.0; m.len()];
    let mut total = 0.0;
    let mut floors = 0;
    let inv_n = 1.0 / n as f64;
    for i in 0..n {
        let t = batch.t[i];
        let w = spec.weight(&model.scaling, t, tt)?;
        for j in 0..d {
            let k = i * d + j;
            let (target, xt, mk) = (batch.x_final[k], batch.x_t[k], m[k]);
            match spec.loss {
                LossKind::Quadratic => {
                    let r = mk - target;
                    total += w * 0.5 * r * r;
                    dm[k] = w * r * inv_n;
                }
                LossKind::Entropic => {
                    let gap = tt - t;
                    if !(gap > 0.0) {
                        return Err(Error::Range(format!("entropic loss needs t < T, got {t}")));
                    }
                    let a = (target - xt) / gap;
                    let raw = (mk - xt) / gap;
                    let b = if raw < RATE_FLOOR {
                        floors += 1;
                        RATE_FLOOR
                    } else {
                        raw
                    };
                    total += w * entropic_scalar(a, b);
                    // straight-through: the floored rate still pushes m upward
                    dm[k] = w * (1.0 - a / b) / gap * inv_n;
                }
            }
        }
    }
    model.backward(params, &cache, &inputs, &dm, grad);
    Ok((total * inv_n, floors))
}

/// `shadow <- decay * shadow + (1 - decay) * current`.
pub fn ema_update<S: Scalar>(shadow: &mut [S], current: &[S], decay: f64) -> Result<()> {
    if shadow.len() != current.len() {
        return Err(Error::LengthMismatch {
            expected: shadow.len(),
            got: current.len(),
        });
    }
    if !(0.0..=1.0).contains(&decay) {
        return Err(Error::Parameter(format!("EMA decay {decay} outside [0, 1]")));
    }
    let (a, b) = (S::of(decay), S::of(1.0 - decay));
    for (s, &c) in shadow.iter_mut().zip(current) {
        *s = a * *s + b * c;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub floor_events: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<S: Scalar> {
    /// Model carrying the averaged weights.
    pub model: MlpDenoiser<S>,
    /// Final optimizer iterate.
    pub raw_params: Vec<S>,
    pub history: Vec<EpochRecord>,
}

struct Adam<S: Scalar> {
    m: Vec<S>,
    v: Vec<S>,
    step: i32,
}

impl<S: Scalar> Adam<S> {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Self {
            m: vec![S::zero(); n],
            v: vec![S::zero(); n],
            step: 0,
        }
    }

    fn update(&mut self, params: &mut [S], grad: &[S], lr: f64) {
        self.step += 1;
        let c1 = 1.0 - Self::B1.powi(self.step);
        let c2 = 1.0 - Self::B2.powi(self.step);
        let (b1, b2) = (S::of(Self::B1), S::of(Self::B2));
        let (ob1, ob2) = (S::of(1.0 - Self::B1), S::of(1.0 - Self::B2));
        let step = S::of(lr / c1);
        let inv_c2 = S::of(1.0 / c2);
        let eps = S::of(Self::EPS);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = b1 * self.m[i] + ob1 * g;
            self.v[i] = b2 * self.v[i] + ob2 * g * g;
            params[i] = params[i] - step * self.m[i] / ((self.v[i] * inv_c2).sqrt() + eps);
        }
    }
}

/// Trains a fresh model on `data` (row-major, `input_dim` coordinates per row).
pub fn train<S: Scalar>(
    data: &[u32],
    input_dim: usize,
    scaling: Scaling,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<S>> {
    cfg.validate()?;
    if input_dim == 0 || data.len() % input_dim != 0 {
        return Err(Error::LengthMismatch {
            expected: input_dim,
            got: data.len(),
        });
    }
    let n = data.len() / input_dim;
    let model = MlpDenoiser::<S>::new(cfg.arch(input_dim), scaling, cfg.final_time, cfg.seed)?;
    let mut params = model.params.clone();
    let mut shadow = params.clone();
    let mut grad = vec![S::zero(); params.len()];
    let mut adam = Adam::<S>::new(params.len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let spec = LossSpec {
        loss: cfg.loss,
        weight: cfg.weight_fn,
    };
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut batch = Batch::default();
    let mut row = vec![0u32; input_dim];

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut count, mut floors) = (0.0, 0usize, 0usize);
        for (bi, idx) in order.chunks(cfg.batch_size).enumerate() {
            batch.t.clear();
            batch.x_t.clear();
            batch.x_final.clear();
            for &i in idx {
                row.copy_from_slice(&data[i * input_dim..(i + 1) * input_dim]);
                let (u, _) = sample_noise_level(&cfg.noise_schedule, &mut rng);
                let t = u * cfg.final_time;
                let thinned = binomial_thin(&row, u, &mut rng);
                batch.t.push(t);
                batch.x_t.extend(thinned.iter().map(|&v| v as f64));
                batch.x_final.extend(row.iter().map(|&v| v as f64));
            }
            grad.iter_mut().for_each(|g| *g = S::zero());
            let (loss, fl) = loss_and_grad(&model, &params, &batch, spec, &mut grad).map_err(
                |e| Error::Training {
                    epoch,
                    batch: bi,
                    reason: e.to_string(),
                },
            )?;
            if !loss.is_finite() {
                return Err(Error::Training {
                    epoch,
                    batch: bi,
                    reason: format!("loss is {loss}"),
                });
            }
            let norm = grad.iter().map(|g| g.f64() * g.f64()).sum::<f64>().sqrt();
            if !norm.is_finite() {
                return Err(Error::Training {
                    epoch,
                    batch: bi,
                    reason: format!("gradient norm is {norm}"),
                });
            }
            if norm > cfg.grad_clip_norm {
                let s = S::of(cfg.grad_clip_norm / norm);
                grad.iter_mut().for_each(|g| *g = *g * s);
            }
            if cfg.weight_decay > 0.0 {
                let wd = S::of(cfg.weight_decay);
                for (g, &p) in grad.iter_mut().zip(&params) {
                    *g = *g + wd * p;
                }
            }
            adam.update(&mut params, &grad, cfg.learning_rate);
            ema_update(&mut shadow, &params, cfg.ema_decay)?;
            loss_sum += loss * idx.len() as f64;
            count += idx.len();
            floors += fl;
        }
        let rec = EpochRecord {
            epoch,
            mean_loss: if count > 0 { loss_sum / count as f64 } else { 0.0 },
            floor_events: floors,
        };
        log::debug!("epoch {epoch}: loss {:.6} floors {floors}", rec.mean_loss);
        if (epoch + 1) % 25 == 0 {
            log::info!("epoch {}/{}: loss {:.6}", epoch + 1, cfg.epochs, rec.mean_loss);
        }
        history.push(rec);
    }

    let mut averaged = model;
    averaged.params = shadow;
    Ok(TrainOutcome {
        model: averaged,
        raw_params: params,
        history,
    })
}
