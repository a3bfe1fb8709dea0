//! Residual MLP denoiser with sinusoidal time features and hand-written
//! backpropagation.
//!
//! Parameters live in one flat buffer so that the optimizer, the moving
//! average and norm clipping work on a single slice.

pub mod checkpoint;
pub mod train;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::denoiser::Denoiser;
use crate::error::{Error, Result};
use crate::losses::{sigma_of_t, Preconditioner};

/// Floating point type the network runs in.
pub trait Scalar:
    ndarray::LinalgScalar + num_traits::Float + Send + Sync + std::fmt::Debug + Default + 'static
{
    const DTYPE: u8;
    fn of(v: f64) -> Self;
    fn f64(self) -> f64;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

impl Scalar for f32 {
    const DTYPE: u8 = 4;
    fn of(v: f64) -> Self {
        v as f32
    }
    fn f64(self) -> f64 {
        self as f64
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4 bytes"))
    }
}

impl Scalar for f64 {
    const DTYPE: u8 = 8;
    fn of(v: f64) -> Self {
        v
    }
    fn f64(self) -> f64 {
        self
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8 bytes"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Arch {
    pub input_dim: usize,
    pub width: usize,
    pub n_blocks: usize,
    pub emb_dim: usize,
}

impl Default for Arch {
    fn default() -> Self {
        Self {
            input_dim: 1,
            width: 256,
            n_blocks: 3,
            emb_dim: 128,
        }
    }
}

impl Arch {
    fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.width == 0 || self.emb_dim == 0 || self.emb_dim % 2 != 0 {
            return Err(Error::Parameter(format!(
                "invalid architecture {self:?}: dimensions must be positive and emb_dim even"
            )));
        }
        Ok(())
    }

    fn n_features(&self) -> usize {
        self.input_dim + self.emb_dim
    }

    fn lift_bias(&self) -> usize {
        self.width * self.n_features()
    }

    fn block(&self, k: usize) -> usize {
        self.lift_bias() + self.width + k * (self.width * self.width + self.width)
    }

    fn head(&self) -> usize {
        self.block(self.n_blocks)
    }

    pub fn n_params(&self) -> usize {
        self.head() + self.input_dim * self.width + self.input_dim
    }
}

/// How raw inputs and outputs are scaled around the network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Scaling {
    /// `x` standardized by the data moments and
    /// `m = x + (1 - t/T)(mean + std F(z, t/T))`, so the induced rate
    /// `(m - x)/(T - t) = (mean + std F)/T` stays bounded up to `t = T`.
    Standardize { mean: f64, std: f64 },
    /// `m = c_skip x + c_out F(c_in x + s_in, sigma(t))`; requires `T = 1`.
    Precondition(Preconditioner),
}

/// Sinusoidal features: `sin(f_k tau)`, `cos(f_k tau)` with `f_k`
/// geometrically spaced from 1 to 1e4.
pub fn time_embedding(tau: f64, emb_dim: usize, out: &mut [f64]) {
    let half = emb_dim / 2;
    for k in 0..half {
        let f = if half > 1 {
            10f64.powf(4.0 * k as f64 / (half - 1) as f64)
        } else {
            1.0
        };
        out[k] = (f * tau).sin();
        out[half + k] = (f * tau).cos();
    }
}

const GELU_K: f64 = 0.797_884_560_802_865_4;
const GELU_C: f64 = 0.044_715;

/// GELU (tanh form) and its derivative, sharing one `tanh`.
#[inline]
fn gelu_with_grad<S: Scalar>(x: S) -> (S, S) {
    let half = S::of(0.5);
    let inner = S::of(GELU_K) * (x + S::of(GELU_C) * x * x * x);
    let th = inner.tanh();
    let value = half * x * (S::one() + th);
    let grad = half * (S::one() + th)
        + half * x * (S::one() - th * th) * S::of(GELU_K) * (S::one() + S::of(3.0 * GELU_C) * x * x);
    (value, grad)
}

/// Residual MLP denoiser.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpDenoiser<S: Scalar> {
    pub arch: Arch,
    pub scaling: Scaling,
    pub final_time: f64,
    pub seed: u64,
    pub params: Vec<S>,
}

/// Per-batch scaling coefficients: `m = skip * x + shift + out * F`.
#[derive(Debug, Clone)]
pub struct BatchInputs<S: Scalar> {
    pub features: Array2<S>,
    pub skip: Vec<f64>,
    pub shift: Vec<f64>,
    pub out: Vec<f64>,
}

/// Activations kept for the backward pass.
#[derive(Debug)]
pub struct ForwardCache<S: Scalar> {
    features: Array2<S>,
    /// `u_0, ..., u_K`
    hidden: Vec<Array2<S>>,
    /// GELU derivatives at the block pre-activations.
    slope: Vec<Array2<S>>,
    pub raw: Array2<S>,
}

impl<S: Scalar> MlpDenoiser<S> {
    /// PyTorch-style uniform initialization with bound `1/sqrt(fan_in)`.
    pub fn new(arch: Arch, scaling: Scaling, final_time: f64, seed: u64) -> Result<Self> {
        arch.validate()?;
        if !(final_time > 0.0 && final_time.is_finite()) {
            return Err(Error::Parameter(format!(
                "final time must be positive, got {final_time}"
            )));
        }
        match scaling {
            Scaling::Precondition(_) if (final_time - 1.0).abs() > 0.0 => {
                return Err(Error::Parameter(format!(
                    "preconditioning is defined for T = 1, got {final_time}"
                )))
            }
            Scaling::Standardize { std, .. } if !(std > 0.0 && std.is_finite()) => {
                return Err(Error::Parameter(format!(
                    "standardization needs a positive std, got {std}"
                )))
            }
            _ => {}
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![S::zero(); arch.n_params()];
        let mut fill = |range: std::ops::Range<usize>, fan_in: usize| {
            let b = 1.0 / (fan_in as f64).sqrt();
            for p in &mut params[range] {
                *p = S::of(rng.random_range(-b..b));
            }
        };
        let nf = arch.n_features();
        let w = arch.width;
        fill(0..arch.lift_bias() + w, nf);
        for k in 0..arch.n_blocks {
            let o = arch.block(k);
            fill(o..o + w * w + w, w);
        }
        fill(arch.head()..arch.n_params(), w);
        Ok(Self {
            arch,
            scaling,
            final_time,
            seed,
            params,
        })
    }

    /// Sets the output head to zero so that `F = 0`.
    pub fn zero_head(&mut self) {
        let o = self.arch.head();
        self.params[o..].iter_mut().for_each(|p| *p = S::zero());
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn cast<T: Scalar>(&self) -> MlpDenoiser<T> {
        MlpDenoiser {
            arch: self.arch,
            scaling: self.scaling,
            final_time: self.final_time,
            seed: self.seed,
            params: self.params.iter().map(|p| T::of(p.f64())).collect(),
        }
    }

    /// Network inputs and output scaling for a batch of `(t, x)` pairs,
    /// with `x` stored row-major as `batch x input_dim`.
    pub fn prepare(&self, t: &[f64], x: &[f64]) -> Result<BatchInputs<S>> {
        let d = self.arch.input_dim;
        let b = t.len();
        if x.len() != b * d {
            return Err(Error::LengthMismatch {
                expected: b * d,
                got: x.len(),
            });
        }
        let nf = self.arch.n_features();
        let mut features = Array2::<S>::zeros((b, nf));
        let mut emb = vec![0.0; self.arch.emb_dim];
        let (mut skip, mut shift, mut out) =
            (Vec::with_capacity(b), Vec::with_capacity(b), Vec::with_capacity(b));
        for (i, &ti) in t.iter().enumerate() {
            if !(0.0..=self.final_time).contains(&ti) {
                return Err(Error::Range(format!(
                    "t = {ti} outside [0, {}]",
                    self.final_time
                )));
            }
            let (a, c, tau, sk, sh, ou) = match self.scaling {
                Scaling::Standardize { mean, std } => {
                    let u = ti / self.final_time;
                    let left = 1.0 - u;
                    (1.0 / std, -mean / std, u, 1.0, left * mean, left * std)
                }
                Scaling::Precondition(p) => {
                    let c = p.coeffs(ti);
                    (c.c_in, c.s_in, sigma_of_t(ti)?, c.c_skip, 0.0, c.c_out)
                }
            };
            time_embedding(tau, self.arch.emb_dim, &mut emb);
            let mut row = features.row_mut(i);
            for j in 0..d {
                let xv = x[i * d + j];
                if !xv.is_finite() {
                    return Err(Error::Numeric(format!("input x = {xv}")));
                }
                row[j] = S::of(a * xv + c);
            }
            for (k, e) in emb.iter().enumerate() {
                row[d + k] = S::of(*e);
            }
            skip.push(sk);
            shift.push(sh);
            out.push(ou);
        }
        Ok(BatchInputs {
            features,
            skip,
            shift,
            out,
        })
    }

    fn mat<'a>(&self, params: &'a [S], off: usize, rows: usize, cols: usize) -> ArrayView2<'a, S> {
        ArrayView2::from_shape((rows, cols), &params[off..off + rows * cols]).expect("shape")
    }

    fn vec<'a>(&self, params: &'a [S], off: usize, len: usize) -> ArrayView1<'a, S> {
        ArrayView1::from(&params[off..off + len])
    }

    /// Raw network output `F` for prepared features.
    pub fn forward_features(&self, params: &[S], features: Array2<S>) -> Result<ForwardCache<S>> {
        let a = &self.arch;
        let (w, nf, d) = (a.width, a.n_features(), a.input_dim);
        let w0 = self.mat(params, 0, w, nf);
        let b0 = self.vec(params, a.lift_bias(), w);
        let mut u = features.dot(&w0.t()) + &b0;
        check_finite(&u, 0)?;
        let mut hidden = Vec::with_capacity(a.n_blocks + 1);
        let mut slope = Vec::with_capacity(a.n_blocks);
        for k in 0..a.n_blocks {
            let o = a.block(k);
            let wk = self.mat(params, o, w, w);
            let bk = self.vec(params, o + w * w, w);
            let mut p = u.dot(&wk.t()) + &bk;
            let mut next = u.clone();
            Zip::from(&mut next).and(&mut p).for_each(|n, pv| {
                let (g, dg) = gelu_with_grad(*pv);
                *n = *n + g;
                *pv = dg;
            });
            check_finite(&next, k + 1)?;
            hidden.push(u);
            slope.push(p);
            u = next;
        }
        let o = a.head();
        let wh = self.mat(params, o, d, w);
        let bh = self.vec(params, o + d * w, d);
        let raw = u.dot(&wh.t()) + &bh;
        check_finite(&raw, a.n_blocks + 1)?;
        hidden.push(u);
        Ok(ForwardCache {
            features,
            hidden,
            slope,
            raw,
        })
    }

    /// Denoised values `m` (row-major `batch x input_dim`) plus the cache.
    pub fn forward_batch(
        &self,
        params: &[S],
        t: &[f64],
        x: &[f64],
    ) -> Result<(Vec<f64>, ForwardCache<S>, BatchInputs<S>)> {
        let mut inputs = self.prepare(t, x)?;
        let features = std::mem::replace(&mut inputs.features, Array2::zeros((0, 0)));
        let cache = self.forward_features(params, features)?;
        let d = self.arch.input_dim;
        let mut m = Vec::with_capacity(x.len());
        for (i, f) in cache.raw.outer_iter().enumerate() {
            for j in 0..d {
                m.push(inputs.skip[i] * x[i * d + j] + inputs.shift[i] + inputs.out[i] * f[j].f64());
            }
        }
        Ok((m, cache, inputs))
    }

    /// Inference with the model's own parameters.
    pub fn forward(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_batch(&self.params, &[t], x)?.0)
    }

    /// Gradient of `sum_ij dm_ij m_ij` with respect to the parameters, given
    /// `dm` in row-major `batch x input_dim` layout.
    pub fn backward(
        &self,
        params: &[S],
        cache: &ForwardCache<S>,
        inputs: &BatchInputs<S>,
        dm: &[f64],
        grad: &mut [S],
    ) {
        let a = &self.arch;
        let (w, nf, d) = (a.width, a.n_features(), a.input_dim);
        let b = cache.raw.nrows();
        let mut d_raw = Array2::<S>::zeros((b, d));
        for i in 0..b {
            for j in 0..d {
                d_raw[[i, j]] = S::of(dm[i * d + j] * inputs.out[i]);
            }
        }
        let o = a.head();
        let u_last = &cache.hidden[a.n_blocks];
        {
            let (gw, gb) = grad[o..o + d * w + d].split_at_mut(d * w);
            add_into(ArrayViewMut2::from_shape((d, w), gw).expect("shape"), d_raw.t().dot(u_last));
            add_sum_rows(ArrayViewMut1::from(gb), &d_raw);
        }
        let mut du = d_raw.dot(&self.mat(params, o, d, w));
        for k in (0..a.n_blocks).rev() {
            let ok = a.block(k);
            let dp = &cache.slope[k] * &du;
            let (gw, gb) = grad[ok..ok + w * w + w].split_at_mut(w * w);
            add_into(
                ArrayViewMut2::from_shape((w, w), gw).expect("shape"),
                dp.t().dot(&cache.hidden[k]),
            );
            add_sum_rows(ArrayViewMut1::from(gb), &dp);
            du = du + dp.dot(&self.mat(params, ok, w, w));
        }
        let (gw, gb) = grad[..a.lift_bias() + w].split_at_mut(w * nf);
        add_into(
            ArrayViewMut2::from_shape((w, nf), gw).expect("shape"),
            du.t().dot(&cache.features),
        );
        add_sum_rows(ArrayViewMut1::from(gb), &du);
    }
}

fn check_finite<S: Scalar>(a: &Array2<S>, layer: usize) -> Result<()> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric(format!("non-finite activation in layer {layer}")))
    }
}

fn add_into<S: Scalar>(mut dst: ArrayViewMut2<S>, src: Array2<S>) {
    dst.zip_mut_with(&src, |a, &b| *a = *a + b);
}

fn add_sum_rows<S: Scalar>(mut dst: ArrayViewMut1<S>, src: &Array2<S>) {
    let s: Array1<S> = src.sum_axis(Axis(0));
    dst.zip_mut_with(&s, |a, &b| *a = *a + b);
}

impl<S: Scalar> Denoiser for MlpDenoiser<S> {
    fn final_time(&self) -> f64 {
        self.final_time
    }

    fn denoise(&self, t: f64, x: &[u32]) -> Result<Vec<f64>> {
        if x.len() != self.arch.input_dim {
            return Err(Error::LengthMismatch {
                expected: self.arch.input_dim,
                got: x.len(),
            });
        }
        let xf: Vec<f64> = x.iter().map(|&v| v as f64).collect();
        self.forward(t, &xf)
    }

    fn denoise_row(&self, t: f64, max_x: u32) -> Result<Vec<f64>> {
        if self.arch.input_dim != 1 {
            return Err(Error::LengthMismatch {
                expected: self.arch.input_dim,
                got: 1,
            });
        }
        let n = max_x as usize + 1;
        let xs: Vec<f64> = (0..n).map(|v| v as f64).collect();
        Ok(self.forward_batch(&self.params, &vec![t; n], &xs)?.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(scaling: Scaling) -> MlpDenoiser<f64> {
        let arch = Arch {
            input_dim: 2,
            width: 8,
            n_blocks: 3,
            emb_dim: 6,
        };
        MlpDenoiser::new(arch, scaling, 1.0, 3).unwrap()
    }

    #[test]
    fn parameter_layout_covers_buffer() {
        let a = Arch::default();
        let expected = 256 * 129 + 256 + 3 * (256 * 256 + 256) + 256 + 1;
        assert_eq!(a.n_params(), expected);
    }

    #[test]
    fn output_shape_and_determinism() {
        let m = small(Scaling::Standardize { mean: 5.0, std: 2.0 });
        let a = m.forward(0.3, &[1.0, 4.0]).unwrap();
        let b = m.forward(0.3, &[1.0, 4.0]).unwrap();
        assert_eq!(a.len(), 2);
        assert_eq!(a, b);
        let m2 = small(Scaling::Standardize { mean: 5.0, std: 2.0 });
        assert_eq!(m2.forward(0.3, &[1.0, 4.0]).unwrap(), a);
    }

    #[test]
    fn zero_head_gives_skip_connection() {
        let p = Preconditioner::new(4.0, 2.0).unwrap();
        let mut m = small(Scaling::Precondition(p));
        m.zero_head();
        for &t in &[0.0, 0.2, 0.9, 1.0] {
            let c = p.coeffs(t);
            let out = m.forward(t, &[3.0, 7.0]).unwrap();
            assert_eq!(out, vec![c.c_skip * 3.0, c.c_skip * 7.0]);
        }
    }

    #[test]
    fn precondition_requires_unit_horizon() {
        let p = Preconditioner::new(4.0, 2.0).unwrap();
        assert!(MlpDenoiser::<f32>::new(Arch::default(), Scaling::Precondition(p), 2.0, 0).is_err());
    }

    #[test]
    fn gelu_derivative_matches_difference() {
        for &x in &[-3.0f64, -0.5, 0.0, 0.7, 2.5] {
            let h = 1e-6;
            let fd = (gelu_with_grad(x + h).0 - gelu_with_grad(x - h).0) / (2.0 * h);
            assert!((fd - gelu_with_grad(x).1).abs() < 1e-8);
        }
    }
}
