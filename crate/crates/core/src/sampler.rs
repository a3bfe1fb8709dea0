//! Simulation of the counting process `X_0 = 0`, jumping `x -> x + 1` at
//! the rate `(m(t, x) - x) / (T - t)` induced by a denoiser.
//!
//! Chain `c` draws from `ChaCha8Rng::seed_from_u64(seed)` moved to stream `c`,
//! so results do not depend on the number of worker threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::denoiser::Denoiser;
use crate::error::{Error, Result};
use crate::losses::{sigma_of_t, t_of_sigma};
use crate::poisson_calculus::ln_poisson_pmf;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    #[default]
    Euler,
    TauLeap,
}

impl Scheme {
    pub fn name(&self) -> &'static str {
        match self {
            Scheme::Euler => "euler",
            Scheme::TauLeap => "tau_leap",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TimeGrid {
    #[default]
    UniformT,
    UniformSigma,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    #[serde(rename = "T")]
    pub final_time: f64,
    pub n_steps: usize,
    pub scheme: Scheme,
    pub time_grid: TimeGrid,
    pub rate_clamp_min: f64,
    pub t_end_guard: f64,
    pub n_chains: usize,
    pub seed: u64,
    pub dim: usize,
    /// Grid indices at which every chain's state is recorded.
    pub capture_steps: Vec<usize>,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            final_time: 1.0,
            n_steps: 1000,
            scheme: Scheme::Euler,
            time_grid: TimeGrid::UniformT,
            rate_clamp_min: 0.0,
            t_end_guard: 1e-6,
            n_chains: 10_000,
            seed: 0,
            dim: 1,
            capture_steps: Vec::new(),
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Parameter(m));
        if !(self.final_time > 0.0 && self.final_time.is_finite()) {
            return bad(format!("T must be positive, got {}", self.final_time));
        }
        if self.n_steps == 0 {
            return bad("n_steps must be at least 1".into());
        }
        if !(self.rate_clamp_min >= 0.0) {
            return bad(format!("rate_clamp_min must be >= 0, got {}", self.rate_clamp_min));
        }
        if !(self.t_end_guard >= 0.0 && self.t_end_guard < self.final_time) {
            return bad(format!(
                "t_end_guard must lie in [0, T), got {}",
                self.t_end_guard
            ));
        }
        if self.dim == 0 {
            return bad("dim must be positive".into());
        }
        if let Some(&k) = self.capture_steps.iter().find(|&&k| k > self.n_steps) {
            return bad(format!("capture step {k} beyond n_steps {}", self.n_steps));
        }
        Ok(())
    }

    /// Grid `0 = t_0 < ... < t_n = T - guard`.
    pub fn time_grid(&self) -> Result<Vec<f64>> {
        self.validate()?;
        let n = self.n_steps;
        let tt = self.final_time;
        let end = tt - self.t_end_guard;
        let mut grid: Vec<f64> = match self.time_grid {
            TimeGrid::UniformT => (0..=n).map(|k| end * k as f64 / n as f64).collect(),
            TimeGrid::UniformSigma => {
                let s0 = sigma_of_t(0.0)?;
                let s1 = sigma_of_t(end / tt)?;
                (0..=n)
                    .map(|k| {
                        let s = s0 + (s1 - s0) * k as f64 / n as f64;
                        t_of_sigma(s).map(|u| u * tt)
                    })
                    .collect::<Result<_>>()?
            }
        };
        grid[0] = 0.0;
        grid[n] = end;
        if grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Parameter(
                "time grid is not strictly increasing; reduce n_steps or the guard".into(),
            ));
        }
        Ok(grid)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub t: f64,
    pub x: Vec<u32>,
    pub jump_count: u64,
}

impl ChainState {
    pub fn origin(dim: usize) -> Self {
        Self {
            t: 0.0,
            x: vec![0; dim],
            jump_count: 0,
        }
    }
}

/// Per-chain random stream.
pub fn chain_rng(seed: u64, chain: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chain as u64);
    rng
}

/// `max(clamp, (m - x) / (T - t))` per coordinate, with the number of
/// coordinates that needed the clamp.
pub fn rate_from_denoiser<D: Denoiser + ?Sized>(
    denoiser: &D,
    t: f64,
    x: &[u32],
    clamp: f64,
) -> Result<(Vec<f64>, usize)> {
    let tt = denoiser.final_time();
    if !(t < tt) {
        return Err(Error::Range(format!("rate needs t < T = {tt}, got {t}")));
    }
    let m = denoiser.denoise(t, x)?;
    let mut clamps = 0;
    let rates = m
        .iter()
        .zip(x)
        .map(|(&mi, &xi)| {
            let r = (mi - xi as f64) / (tt - t);
            if !r.is_finite() {
                return Err(Error::Numeric(format!("rate {r} at t = {t}, x = {xi}")));
            }
            if r < clamp {
                clamps += 1;
                Ok(clamp)
            } else {
                Ok(r)
            }
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok((rates, clamps))
}

/// Rates for the one-dimensional states `0..=max_x`, with clamp flags.
pub fn rate_row<D: Denoiser + ?Sized>(
    denoiser: &D,
    t: f64,
    max_x: u32,
    clamp: f64,
) -> Result<(Vec<f64>, Vec<bool>)> {
    let tt = denoiser.final_time();
    if !(t < tt) {
        return Err(Error::Range(format!("rate needs t < T = {tt}, got {t}")));
    }
    let m = denoiser.denoise_row(t, max_x)?;
    let mut flags = Vec::with_capacity(m.len());
    let rates = m
        .iter()
        .enumerate()
        .map(|(x, &mi)| {
            let r = (mi - x as f64) / (tt - t);
            if !r.is_finite() {
                return Err(Error::Numeric(format!("rate {r} at t = {t}, x = {x}")));
            }
            flags.push(r < clamp);
            Ok(r.max(clamp))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok((rates, flags))
}

/// One Euler step: each coordinate moves up by one with probability
/// `min(1, rate dt)`.
pub fn euler_step<R: Rng + ?Sized>(state: &mut ChainState, rate: &[f64], dt: f64, rng: &mut R) {
    for (xi, &r) in state.x.iter_mut().zip(rate) {
        let p = (r * dt).min(1.0);
        if p > 0.0 && rng.random::<f64>() < p {
            *xi += 1;
            state.jump_count += 1;
        }
    }
    state.t += dt;
}

/// One tau-leaping step: each coordinate gains a Poisson(`rate dt`) increment.
pub fn tau_leap_step<R: Rng + ?Sized>(state: &mut ChainState, rate: &[f64], dt: f64, rng: &mut R) {
    for (xi, &r) in state.x.iter_mut().zip(rate) {
        let lam = r * dt;
        if lam > 0.0 {
            let k = Poisson::new(lam).expect("positive finite mean").sample(rng) as u32;
            *xi += k;
            state.jump_count += k as u64;
        }
    }
    state.t += dt;
}

fn step<R: Rng + ?Sized>(scheme: Scheme, s: &mut ChainState, rate: &[f64], dt: f64, rng: &mut R) {
    match scheme {
        Scheme::Euler => euler_step(s, rate, dt, rng),
        Scheme::TauLeap => tau_leap_step(s, rate, dt, rng),
    }
}

#[derive(Debug, Clone)]
pub struct SamplerOutput {
    /// Final states, `n_chains x dim`, row-major.
    pub finals: Vec<u32>,
    pub dim: usize,
    pub jump_counts: Vec<u64>,
    /// `(t_k, states)` for every requested grid index.
    pub captures: Vec<(usize, f64, Vec<u32>)>,
    pub clamp_events: u64,
}

impl SamplerOutput {
    pub fn final_state(&self, chain: usize) -> &[u32] {
        &self.finals[chain * self.dim..(chain + 1) * self.dim]
    }

    pub fn n_chains(&self) -> usize {
        self.jump_counts.len()
    }
}

/// Runs `cfg.n_chains` independent chains from the origin.
pub fn run_sampler<D: Denoiser + ?Sized>(denoiser: &D, cfg: &SamplerConfig) -> Result<SamplerOutput> {
    if (denoiser.final_time() - cfg.final_time).abs() > 1e-12 {
        return Err(Error::Parameter(format!(
            "sampler T = {} differs from denoiser T = {}",
            cfg.final_time,
            denoiser.final_time()
        )));
    }
    let grid = cfg.time_grid()?;
    let dim = cfg.dim;
    let mut states: Vec<ChainState> = (0..cfg.n_chains).map(|_| ChainState::origin(dim)).collect();
    let mut rngs: Vec<ChaCha8Rng> = (0..cfg.n_chains).map(|c| chain_rng(cfg.seed, c)).collect();
    let mut captures = Vec::new();
    let mut clamp_events = 0u64;
    let capture = |k: usize, states: &[ChainState], captures: &mut Vec<(usize, f64, Vec<u32>)>| {
        if cfg.capture_steps.contains(&k) {
            let flat = states.iter().flat_map(|s| s.x.iter().copied()).collect();
            captures.push((k, grid[k], flat));
        }
    };
    capture(0, &states, &mut captures);

    for k in 0..cfg.n_steps {
        let t = grid[k];
        let dt = grid[k + 1] - t;
        if dim == 1 {
            let Some(max_x) = states.iter().map(|s| s.x[0]).max() else {
                break;
            };
            let (rates, flags) = rate_row(denoiser, t, max_x, cfg.rate_clamp_min).map_err(|e| {
                let chain = states.iter().position(|s| s.x[0] == max_x).unwrap_or(0);
                Error::Sampler {
                    chain,
                    step: k,
                    source: Box::new(e),
                }
            })?;
            clamp_events += states.iter().filter(|s| flags[s.x[0] as usize]).count() as u64;
            states
                .par_iter_mut()
                .zip(rngs.par_iter_mut())
                .for_each(|(s, rng)| {
                    let r = [rates[s.x[0] as usize]];
                    step(cfg.scheme, s, &r, dt, rng);
                    s.t = grid[k + 1];
                });
        } else {
            let clamps = states
                .par_iter_mut()
                .zip(rngs.par_iter_mut())
                .enumerate()
                .map(|(c, (s, rng))| {
                    let (r, n) = rate_from_denoiser(denoiser, t, &s.x, cfg.rate_clamp_min).map_err(
                        |e| Error::Sampler {
                            chain: c,
                            step: k,
                            source: Box::new(e),
                        },
                    )?;
                    step(cfg.scheme, s, &r, dt, rng);
                    s.t = grid[k + 1];
                    Ok(n as u64)
                })
                .collect::<Result<Vec<u64>>>()?;
            clamp_events += clamps.iter().sum::<u64>();
        }
        capture(k + 1, &states, &mut captures);
    }
    if clamp_events > 0 {
        log::info!("{clamp_events} negative rates clamped to {}", cfg.rate_clamp_min);
    }
    Ok(SamplerOutput {
        finals: states.iter().flat_map(|s| s.x.iter().copied()).collect(),
        dim,
        jump_counts: states.iter().map(|s| s.jump_count).collect(),
        captures,
        clamp_events,
    })
}

/// Simulates a single chain and returns its state at every grid time.
pub fn sample_chain<D: Denoiser + ?Sized>(
    denoiser: &D,
    cfg: &SamplerConfig,
    chain: usize,
) -> Result<Vec<ChainState>> {
    let grid = cfg.time_grid()?;
    let mut rng = chain_rng(cfg.seed, chain);
    let mut s = ChainState::origin(cfg.dim);
    let mut path = Vec::with_capacity(grid.len());
    path.push(s.clone());
    for k in 0..cfg.n_steps {
        let (r, _) =
            rate_from_denoiser(denoiser, grid[k], &s.x, cfg.rate_clamp_min).map_err(|e| {
                Error::Sampler {
                    chain,
                    step: k,
                    source: Box::new(e),
                }
            })?;
        step(cfg.scheme, &mut s, &r, grid[k + 1] - grid[k], &mut rng);
        s.t = grid[k + 1];
        path.push(s.clone());
    }
    Ok(path)
}

/// Exact law of the discretized one-dimensional chain on `{0, ..., max_state}`
/// at the requested grid indices, obtained by pushing the probability vector
/// through each step's transition kernel. Mass that would leave the window is
/// kept at `max_state`.
pub fn propagate_law<D: Denoiser + ?Sized>(
    denoiser: &D,
    cfg: &SamplerConfig,
    max_state: u32,
) -> Result<Vec<(usize, Vec<f64>)>> {
    let grid = cfg.time_grid()?;
    let n = max_state as usize + 1;
    let mut p = vec![0.0; n];
    p[0] = 1.0;
    let mut out = Vec::new();
    if cfg.capture_steps.contains(&0) {
        out.push((0, p.clone()));
    }
    for k in 0..cfg.n_steps {
        let dt = grid[k + 1] - grid[k];
        let (rates, _) = rate_row(denoiser, grid[k], max_state, cfg.rate_clamp_min)?;
        let mut next = vec![0.0; n];
        for x in 0..n {
            if p[x] == 0.0 {
                continue;
            }
            let lam = rates[x] * dt;
            match cfg.scheme {
                Scheme::Euler => {
                    let up = lam.min(1.0);
                    next[x] += p[x] * (1.0 - up);
                    next[(x + 1).min(n - 1)] += p[x] * up;
                }
                Scheme::TauLeap => {
                    if lam == 0.0 {
                        next[x] += p[x];
                        continue;
                    }
                    let mut left = 1.0;
                    for j in 0..(n - x - 1) {
                        let q = ln_poisson_pmf(lam, j as u64).exp();
                        next[x + j] += p[x] * q;
                        left -= q;
                    }
                    next[n - 1] += p[x] * left.max(0.0);
                }
            }
        }
        p = next;
        if cfg.capture_steps.contains(&(k + 1)) {
            out.push((k + 1, p.clone()));
        }
    }
    Ok(out)
}
