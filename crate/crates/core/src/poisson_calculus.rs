//! Poisson distribution, Poisson semigroup and the h-transform that drives
//! the Poisson-Föllmer process, evaluated exactly on a truncated support.
//!
//! With `f = mu / pi_T` extended by zero beyond the support cap,
//! `h(t, x) = P_{T-t} f(x)` and the process jumps `x -> x + 1` at rate
//! `lambda(t, x) = h(t, x + 1) / h(t, x)`. Every product and ratio is formed in
//! log space. The zero extension makes the cap absorbing: `lambda(t, cap) = 0`.
//!
//! Multi-coordinate states are treated as products of identical one-dimensional
//! targets, so every per-coordinate quantity is the 1-D one applied to `x^i`.

use std::num::NonZeroUsize;
use std::sync::{Arc, Mutex};

use lru::LruCache;
use rand::Rng;
use rand_distr::{Binomial, Distribution};

use crate::error::{Error, Result};
use crate::numeric::{ln_choose, ln_factorial, LogSumExp};
use crate::targets::TargetPmf;

/// Floor applied to zero entries of the target before forming `f`.
pub const PROB_FLOOR: f64 = 1e-300;

/// `ln pi_t(k)`.
pub fn ln_poisson_pmf(t: f64, k: u64) -> f64 {
    if t == 0.0 {
        return if k == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    -t + k as f64 * t.ln() - ln_factorial(k)
}

/// `pi_t(k) = e^{-t} t^k / k!`.
pub fn poisson_pmf(t: f64, k: u64) -> f64 {
    ln_poisson_pmf(t, k).exp()
}

/// `ln Binomial_{n, alpha}(k)`.
pub fn ln_binomial_pmf(n: u64, alpha: f64, k: u64) -> f64 {
    if k > n {
        return f64::NEG_INFINITY;
    }
    let succ = if k == 0 { 0.0 } else { k as f64 * alpha.ln() };
    let fail = if k == n {
        0.0
    } else {
        (n - k) as f64 * (1.0 - alpha).ln()
    };
    ln_choose(n, k) + succ + fail
}

/// `P_t G(x) = sum_y G(x + y) pi_t(y)` with `G` zero beyond the slice.
pub fn semigroup_apply(g: &[f64], t: f64, x: usize) -> f64 {
    g.iter()
        .skip(x)
        .enumerate()
        .map(|(y, gv)| gv * poisson_pmf(t, y as u64))
        .sum()
}

/// Binomial(`x_t`, `t / T`) law of the bridge, as a vector over `{0, ..., x_T}`.
pub fn bridge_pmf(x_final: u32, t: f64, final_time: f64) -> Result<Vec<f64>> {
    if !(0.0..=final_time).contains(&t) {
        return Err(Error::Range(format!("t = {t} outside [0, {final_time}]")));
    }
    let alpha = t / final_time;
    Ok((0..=x_final as u64)
        .map(|k| ln_binomial_pmf(x_final as u64, alpha, k).exp())
        .collect())
}

/// Product law of independent Binomial(`x_T^i`, alpha) coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct BridgeLaw {
    pub x_final: Vec<u32>,
    pub alpha: f64,
}

impl BridgeLaw {
    pub fn new(x_final: Vec<u32>, alpha: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::Range(format!("alpha = {alpha} outside [0, 1]")));
        }
        Ok(Self { x_final, alpha })
    }

    pub fn ln_pmf(&self, x: &[u32]) -> f64 {
        self.x_final
            .iter()
            .zip(x)
            .map(|(&n, &k)| ln_binomial_pmf(n as u64, self.alpha, k as u64))
            .sum()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<u32> {
        binomial_thin(&self.x_final, self.alpha, rng)
    }
}

/// Independent Binomial(`x^i`, alpha) thinning of every coordinate.
pub fn binomial_thin<R: Rng + ?Sized>(x_final: &[u32], alpha: f64, rng: &mut R) -> Vec<u32> {
    let alpha = alpha.clamp(0.0, 1.0);
    x_final
        .iter()
        .map(|&n| {
            if alpha == 0.0 || n == 0 {
                0
            } else if alpha == 1.0 {
                n
            } else {
                Binomial::new(n as u64, alpha)
                    .expect("alpha in (0, 1)")
                    .sample(rng) as u32
            }
        })
        .collect()
}

/// Marginal of `X_t` as the Binomial mixture `sum_{x_T} Bin_{x_T, t/T}(.) mu(x_T)`.
///
/// Independent of the h-transform; used to cross-check [`FlowTables::flow_marginal`].
pub fn mixture_marginal(pmf: &TargetPmf, t: f64, final_time: f64) -> Vec<f64> {
    let alpha = t / final_time;
    let n = pmf.support_cap();
    let mut out = vec![0.0; n + 1];
    for (xf, &p) in pmf.probs().iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        for (x, o) in out.iter_mut().enumerate().take(xf + 1) {
            *o += (ln_binomial_pmf(xf as u64, alpha, x as u64)).exp() * p;
        }
    }
    out
}

/// Posterior mean `E[X_T | X_t = x]` by enumerating the posterior over `y >= x`.
pub fn oracle_denoiser(pmf: &TargetPmf, final_time: f64, t: f64, x: u32) -> Result<f64> {
    if !(0.0..=final_time).contains(&t) {
        return Err(Error::Range(format!("t = {t} outside [0, {final_time}]")));
    }
    let alpha = t / final_time;
    let mut num = LogSumExp::default();
    let mut den = LogSumExp::default();
    for y in (x as usize)..=pmf.support_cap() {
        let lp = pmf.log_probs()[y];
        if lp == f64::NEG_INFINITY {
            continue;
        }
        let w = ln_binomial_pmf(y as u64, alpha, x as u64) + lp;
        den.add(w);
        if y > 0 {
            num.add(w + (y as f64).ln());
        }
    }
    let den = den.value();
    if den == f64::NEG_INFINITY {
        return Err(Error::Posterior(format!(
            "no target mass at or above x = {x} compatible with t = {t}"
        )));
    }
    Ok((num.value() - den).exp())
}

type RowCache = Mutex<LruCache<u64, Arc<Vec<f64>>>>;

/// Relative density `f = mu / pi_T` of a target and the h-transform built on it.
pub struct FlowTables {
    final_time: f64,
    pmf: TargetPmf,
    log_f: Vec<f64>,
    floored: Vec<usize>,
    cache: Option<RowCache>,
}

impl std::fmt::Debug for FlowTables {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FlowTables")
            .field("final_time", &self.final_time)
            .field("support_cap", &self.pmf.support_cap())
            .field("floored", &self.floored)
            .finish()
    }
}

impl Clone for FlowTables {
    fn clone(&self) -> Self {
        let cap = self
            .cache
            .as_ref()
            .map(|c| c.lock().expect("cache lock").cap());
        Self {
            final_time: self.final_time,
            pmf: self.pmf.clone(),
            log_f: self.log_f.clone(),
            floored: self.floored.clone(),
            cache: cap.map(|c| Mutex::new(LruCache::new(c))),
        }
    }
}

/// Builds `f = mu / pi_T` on the support of `pmf`.
pub fn relative_density(pmf: &TargetPmf, final_time: f64) -> Result<FlowTables> {
    FlowTables::new(pmf, final_time)
}

impl FlowTables {
    pub fn new(pmf: &TargetPmf, final_time: f64) -> Result<Self> {
        if !(final_time > 0.0 && final_time.is_finite()) {
            return Err(Error::Parameter(format!(
                "final time must be positive, got {final_time}"
            )));
        }
        let mut floored = Vec::new();
        let log_f = pmf
            .log_probs()
            .iter()
            .enumerate()
            .map(|(x, &lp)| {
                let lp = if lp == f64::NEG_INFINITY {
                    floored.push(x);
                    PROB_FLOOR.ln()
                } else {
                    lp
                };
                let v = lp - ln_poisson_pmf(final_time, x as u64);
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(Error::Numeric(format!("relative density at x = {x} is {v}")))
                }
            })
            .collect::<Result<Vec<f64>>>()?;
        if !floored.is_empty() {
            log::warn!(
                "{} zero-probability states floored at {PROB_FLOOR:e}: {:?}",
                floored.len(),
                floored
            );
        }
        Ok(Self {
            final_time,
            pmf: pmf.clone(),
            log_f,
            floored,
            cache: None,
        })
    }

    /// Enables a bounded LRU cache of `log h(t, .)` rows keyed by `t`.
    pub fn with_cache(mut self, capacity: usize) -> Self {
        let cap = NonZeroUsize::new(capacity.max(1)).expect("non-zero");
        self.cache = Some(Mutex::new(LruCache::new(cap)));
        self
    }

    pub fn final_time(&self) -> f64 {
        self.final_time
    }

    pub fn pmf(&self) -> &TargetPmf {
        &self.pmf
    }

    pub fn support_cap(&self) -> usize {
        self.pmf.support_cap()
    }

    /// States whose zero probability was floored.
    pub fn floored_states(&self) -> &[usize] {
        &self.floored
    }

    pub fn log_f(&self) -> &[f64] {
        &self.log_f
    }

    pub fn f(&self) -> Vec<f64> {
        self.log_f.iter().map(|v| v.exp()).collect()
    }

    fn check_time(&self, t: f64) -> Result<()> {
        if (0.0..=self.final_time).contains(&t) {
            Ok(())
        } else {
            Err(Error::Range(format!(
                "t = {t} outside [0, {}]",
                self.final_time
            )))
        }
    }

    fn log_h_uncached(&self, t: f64, x: usize) -> f64 {
        let s = self.final_time - t;
        let mut acc = LogSumExp::default();
        for (y, lf) in self.log_f.iter().skip(x).enumerate() {
            acc.add(lf + ln_poisson_pmf(s, y as u64));
        }
        acc.value()
    }

    /// `ln h(t, x)` for `x` in `{0, ..., cap + 1}`; `-inf` at `cap + 1`.
    pub fn log_h(&self, t: f64, x: usize) -> Result<f64> {
        self.check_time(t)?;
        if x > self.support_cap() + 1 {
            return Err(Error::Range(format!(
                "x = {x} beyond cap + 1 = {}",
                self.support_cap() + 1
            )));
        }
        Ok(self.log_h_uncached(t, x))
    }

    /// `h(t, x) = P_{T-t} f(x)`.
    pub fn h_eval(&self, t: f64, x: usize) -> Result<f64> {
        self.log_h(t, x).map(f64::exp)
    }

    /// `ln h(t, x)` for every `x` in `{0, ..., cap + 1}`.
    pub fn log_h_row(&self, t: f64) -> Result<Arc<Vec<f64>>> {
        self.check_time(t)?;
        if let Some(cache) = &self.cache {
            if let Some(row) = cache.lock().expect("cache lock").get(&t.to_bits()) {
                return Ok(Arc::clone(row));
            }
        }
        let row = Arc::new(self.compute_log_h_row(t));
        if let Some(cache) = &self.cache {
            cache
                .lock()
                .expect("cache lock")
                .put(t.to_bits(), Arc::clone(&row));
        }
        Ok(row)
    }

    fn compute_log_h_row(&self, t: f64) -> Vec<f64> {
        let n = self.support_cap();
        let s = self.final_time - t;
        let ln_pi: Vec<f64> = (0..=n).map(|y| ln_poisson_pmf(s, y as u64)).collect();
        let mut row = Vec::with_capacity(n + 2);
        for x in 0..=n {
            let mut acc = LogSumExp::default();
            for (lf, lp) in self.log_f[x..].iter().zip(&ln_pi) {
                acc.add(lf + lp);
            }
            row.push(acc.value());
        }
        row.push(f64::NEG_INFINITY);
        row
    }

    /// `lambda(t, x) = h(t, x + 1) / h(t, x)` for every `x` in the support.
    pub fn intensity_row(&self, t: f64) -> Result<Vec<f64>> {
        let row = self.log_h_row(t)?;
        Ok(row.windows(2).map(|w| (w[1] - w[0]).exp()).collect())
    }

    /// Per-coordinate intensities at state `x`.
    pub fn intensity(&self, t: f64, x: &[u32]) -> Result<Vec<f64>> {
        if !(0.0..self.final_time).contains(&t) {
            return Err(Error::Range(format!(
                "t = {t} outside [0, {})",
                self.final_time
            )));
        }
        let cap = self.support_cap();
        x.iter()
            .map(|&xi| {
                let xi = xi as usize;
                if xi > cap {
                    return Err(Error::Range(format!("x = {xi} beyond cap {cap}")));
                }
                Ok((self.log_h_uncached(t, xi + 1) - self.log_h_uncached(t, xi)).exp())
            })
            .collect()
    }

    /// Time marginal `p_t(x) = h(t, x) pi_t(x)` over the support.
    pub fn flow_marginal(&self, t: f64) -> Result<Vec<f64>> {
        let row = self.log_h_row(t)?;
        Ok(row[..=self.support_cap()]
            .iter()
            .enumerate()
            .map(|(x, lh)| (lh + ln_poisson_pmf(t, x as u64)).exp())
            .collect())
    }

    /// Posterior-mean row `x -> E[X_T | X_t = x]`, enumerated independently of `h`.
    pub fn oracle_denoiser_row(&self, t: f64) -> Result<Vec<f64>> {
        oracle_denoiser_row(&self.pmf, self.final_time, t)
    }
}

/// `E[X_T | X_t = x]` for every `x` in the support; states with an empty
/// posterior map to `x` itself.
pub fn oracle_denoiser_row(pmf: &TargetPmf, final_time: f64, t: f64) -> Result<Vec<f64>> {
    (0..=pmf.support_cap() as u32)
        .map(|x| match oracle_denoiser(pmf, final_time, t, x) {
            Ok(m) => Ok(m),
            Err(Error::Posterior(_)) => Ok(x as f64),
            Err(e) => Err(e),
        })
        .collect()
}
