//! Denoisers `m(t, x) ~ E[X_T | X_t = x]` and the rates they induce.

use std::num::NonZeroUsize;
use std::sync::{Arc, Mutex};

use lru::LruCache;

use crate::error::{Error, Result};
use crate::losses::baseline_affine;
use crate::poisson_calculus::oracle_denoiser_row;
use crate::targets::TargetPmf;

pub trait Denoiser: Send + Sync {
    fn final_time(&self) -> f64;

    /// Per-coordinate denoised value at state `x`.
    fn denoise(&self, t: f64, x: &[u32]) -> Result<Vec<f64>>;

    /// `m(t, x)` for the one-dimensional states `x = 0, ..., max_x`.
    fn denoise_row(&self, t: f64, max_x: u32) -> Result<Vec<f64>> {
        (0..=max_x)
            .map(|x| self.denoise(t, &[x]).map(|m| m[0]))
            .collect()
    }
}

impl<D: Denoiser + ?Sized> Denoiser for Arc<D> {
    fn final_time(&self) -> f64 {
        (**self).final_time()
    }

    fn denoise(&self, t: f64, x: &[u32]) -> Result<Vec<f64>> {
        (**self).denoise(t, x)
    }

    fn denoise_row(&self, t: f64, max_x: u32) -> Result<Vec<f64>> {
        (**self).denoise_row(t, max_x)
    }
}

/// Exact posterior mean of a product of identical one-dimensional targets.
///
/// States above the support cap have no posterior mass and are returned
/// unchanged, which makes them absorbing for the induced rate.
pub struct OracleDenoiser {
    pmf: TargetPmf,
    final_time: f64,
    rows: Mutex<LruCache<u64, Arc<Vec<f64>>>>,
}

impl OracleDenoiser {
    pub fn new(pmf: TargetPmf, final_time: f64) -> Result<Self> {
        if !(final_time > 0.0 && final_time.is_finite()) {
            return Err(Error::Parameter(format!(
                "final time must be positive, got {final_time}"
            )));
        }
        Ok(Self {
            pmf,
            final_time,
            rows: Mutex::new(LruCache::new(NonZeroUsize::new(4096).expect("non-zero"))),
        })
    }

    pub fn pmf(&self) -> &TargetPmf {
        &self.pmf
    }

    fn row(&self, t: f64) -> Result<Arc<Vec<f64>>> {
        if let Some(r) = self.rows.lock().expect("cache lock").get(&t.to_bits()) {
            return Ok(Arc::clone(r));
        }
        let row = Arc::new(oracle_denoiser_row(&self.pmf, self.final_time, t)?);
        self.rows
            .lock()
            .expect("cache lock")
            .put(t.to_bits(), Arc::clone(&row));
        Ok(row)
    }
}

impl Denoiser for OracleDenoiser {
    fn final_time(&self) -> f64 {
        self.final_time
    }

    fn denoise(&self, t: f64, x: &[u32]) -> Result<Vec<f64>> {
        let row = self.row(t)?;
        Ok(x
            .iter()
            .map(|&xi| row.get(xi as usize).copied().unwrap_or(xi as f64))
            .collect())
    }

    fn denoise_row(&self, t: f64, max_x: u32) -> Result<Vec<f64>> {
        let row = self.row(t)?;
        Ok((0..=max_x)
            .map(|x| row.get(x as usize).copied().unwrap_or(x as f64))
            .collect())
    }
}

/// Best affine denoiser `b_skip(t) x + b_out(t) mu` for data with the given
/// mean and variance (`T = 1`).
#[derive(Debug, Clone, Copy)]
pub struct AffineBaseline {
    pub mu_data: f64,
    pub sigma2_data: f64,
}

impl Denoiser for AffineBaseline {
    fn final_time(&self) -> f64 {
        1.0
    }

    fn denoise(&self, t: f64, x: &[u32]) -> Result<Vec<f64>> {
        let (b_skip, b_out) = baseline_affine(t, self.mu_data, self.sigma2_data)?;
        Ok(x
            .iter()
            .map(|&xi| b_skip * xi as f64 + b_out * self.mu_data)
            .collect())
    }
}
