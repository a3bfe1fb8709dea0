//! Negative log-likelihood through the identity
//!
//! `-ln mu(x) = int_0^T E_{y ~ Bin(x, t/T)} [ D((x - y)/(T - t), lambda(t, y)) ] dt`
//!
//! with `D(a, b) = a ln a - a ln b - a + b`. The identity is exact for the true
//! intensity; with a learned rate the same integral gives the model NLL.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::denoiser::Denoiser;
use crate::error::{Error, Result};
use crate::losses::entropic_scalar;
use crate::numeric::endpoint_graded_nodes;
use crate::poisson_calculus::{binomial_thin, ln_binomial_pmf, FlowTables};
use crate::sampler::{rate_from_denoiser, rate_row};

/// Rates below this are floored inside the divergence.
pub const NLL_RATE_FLOOR: f64 = 1e-10;

/// Anything that supplies jump rates `lambda(t, y)`.
pub trait RateSource: Sync {
    fn final_time(&self) -> f64;

    /// Per-coordinate rates at state `y`.
    fn rates(&self, t: f64, y: &[u32]) -> Result<Vec<f64>>;

    /// Rates of the one-dimensional states `0..=max_y`.
    fn rate_row(&self, t: f64, max_y: u32) -> Result<Vec<f64>>;
}

impl RateSource for FlowTables {
    fn final_time(&self) -> f64 {
        FlowTables::final_time(self)
    }

    fn rates(&self, t: f64, y: &[u32]) -> Result<Vec<f64>> {
        self.intensity(t, y)
    }

    fn rate_row(&self, t: f64, max_y: u32) -> Result<Vec<f64>> {
        let cap = self.support_cap();
        if max_y as usize > cap {
            return Err(Error::Range(format!("y = {max_y} beyond support cap {cap}")));
        }
        let mut row = self.intensity_row(t)?;
        row.truncate(max_y as usize + 1);
        Ok(row)
    }
}

/// Rates `max(0, (m - y)/(T - t))` of a denoiser.
pub struct DenoiserRate<'a, D: Denoiser + ?Sized>(pub &'a D);

impl<D: Denoiser + ?Sized> RateSource for DenoiserRate<'_, D> {
    fn final_time(&self) -> f64 {
        self.0.final_time()
    }

    fn rates(&self, t: f64, y: &[u32]) -> Result<Vec<f64>> {
        Ok(rate_from_denoiser(self.0, t, y, 0.0)?.0)
    }

    fn rate_row(&self, t: f64, max_y: u32) -> Result<Vec<f64>> {
        Ok(rate_row(self.0, t, max_y, 0.0)?.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NllMode {
    MonteCarlo,
    #[default]
    Quadrature,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NllEstimate {
    pub value: f64,
    pub std_error: f64,
    pub n_time: usize,
    pub n_inner: usize,
    pub mode: NllMode,
}

fn divergence_sum(x: &[u32], y: &[u32], gap: f64, rates: &[f64]) -> (f64, usize) {
    let mut floors = 0;
    let v = x
        .iter()
        .zip(y)
        .zip(rates)
        .map(|((&xi, &yi), &r)| {
            let b = if r < NLL_RATE_FLOOR {
                floors += 1;
                NLL_RATE_FLOOR
            } else {
                r
            };
            entropic_scalar((xi - yi) as f64 / gap, b)
        })
        .sum();
    (v, floors)
}

/// `D((x - y)/(T - t), lambda(t, y))` summed over coordinates, with the
/// number of rates that hit the floor.
pub fn nll_integrand<R: RateSource + ?Sized>(
    source: &R,
    x: &[u32],
    t: f64,
    y: &[u32],
) -> Result<(f64, usize)> {
    let tt = source.final_time();
    if !(t >= 0.0 && t < tt) {
        return Err(Error::Range(format!("t = {t} outside [0, {tt})")));
    }
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    if let Some(i) = (0..x.len()).find(|&i| y[i] > x[i]) {
        return Err(Error::Domain(format!(
            "y[{i}] = {} exceeds x[{i}] = {}",
            y[i], x[i]
        )));
    }
    let rates = source.rates(t, y)?;
    Ok(divergence_sum(x, y, tt - t, &rates))
}

/// Time integral by Gauss-Legendre after the substitution
/// `t = T(1 - (1 - u)^3)`, inner expectation enumerated exactly.
///
/// The substitution removes the logarithmic endpoint singularity at `t = T`
/// and never evaluates the integrand there.
pub fn nll_quadrature<R: RateSource + ?Sized>(
    source: &R,
    x: u32,
    n_nodes: usize,
) -> Result<NllEstimate> {
    Ok(nll_quadrature_many(source, &[x], n_nodes)?[0])
}

/// [`nll_quadrature`] for many points, sharing the rate rows between them.
pub fn nll_quadrature_many<R: RateSource + ?Sized>(
    source: &R,
    xs: &[u32],
    n_nodes: usize,
) -> Result<Vec<NllEstimate>> {
    if n_nodes == 0 {
        return Err(Error::Parameter("quadrature needs at least one node".into()));
    }
    let Some(&max_x) = xs.iter().max() else {
        return Ok(Vec::new());
    };
    let tt = source.final_time();
    let nodes = endpoint_graded_nodes(n_nodes, tt);
    let rows = nodes
        .iter()
        .map(|&(t, _)| source.rate_row(t, max_x))
        .collect::<Result<Vec<_>>>()?;
    let mut cache: std::collections::HashMap<u32, f64> = Default::default();
    let mut out = Vec::with_capacity(xs.len());
    for &x in xs {
        let value = *cache.entry(x).or_insert_with(|| {
            nodes
                .iter()
                .zip(&rows)
                .map(|(&(t, w), row)| w * inner_expectation(x, t, tt, row))
                .sum()
        });
        out.push(NllEstimate {
            value,
            std_error: 0.0,
            n_time: n_nodes,
            n_inner: x as usize + 1,
            mode: NllMode::Quadrature,
        });
    }
    Ok(out)
}

fn inner_expectation(x: u32, t: f64, tt: f64, row: &[f64]) -> f64 {
    let alpha = t / tt;
    let gap = tt - t;
    (0..=x)
        .map(|y| {
            let p = ln_binomial_pmf(x as u64, alpha, y as u64).exp();
            if p == 0.0 {
                return 0.0;
            }
            let b = row[y as usize].max(NLL_RATE_FLOOR);
            p * entropic_scalar((x - y) as f64 / gap, b)
        })
        .sum()
}

/// Monte-Carlo estimate with `t ~ U(0, T)` and `y ~ Bin(x, t/T)`.
///
/// The standard error comes from the spread of the `n_time` per-time means,
/// which are independent.
pub fn nll_monte_carlo<R: RateSource + ?Sized, G: Rng + ?Sized>(
    source: &R,
    x: &[u32],
    n_time: usize,
    n_inner: usize,
    rng: &mut G,
) -> Result<NllEstimate> {
    if n_time == 0 || n_inner == 0 {
        return Err(Error::Parameter(
            "Monte-Carlo NLL needs n_time >= 1 and n_inner >= 1".into(),
        ));
    }
    let tt = source.final_time();
    let mut means = Vec::with_capacity(n_time);
    for _ in 0..n_time {
        let t = tt * rng.random::<f64>();
        let mut acc = 0.0;
        for _ in 0..n_inner {
            let y = binomial_thin(x, t / tt, rng);
            let rates = source.rates(t, &y)?;
            acc += divergence_sum(x, &y, tt - t, &rates).0;
        }
        means.push(tt * acc / n_inner as f64);
    }
    let n = n_time as f64;
    let value = means.iter().sum::<f64>() / n;
    let std_error = if n_time > 1 {
        let var = means.iter().map(|m| (m - value).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    } else {
        0.0
    };
    Ok(NllEstimate {
        value,
        std_error,
        n_time,
        n_inner,
        mode: NllMode::MonteCarlo,
    })
}

/// Mean and standard error of a set of per-sample NLL values.
pub fn summarize(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poisson_calculus::{poisson_pmf, relative_density};
    use crate::targets::{make_target, Family, TargetPmf};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn poisson_tables(rate: f64, cap: usize) -> FlowTables {
        let pmf = make_target(Family::Poisson, &[rate], cap).unwrap();
        relative_density(&pmf, 1.0).unwrap()
    }

    #[test]
    fn integrand_special_cases() {
        let tables = poisson_tables(3.0, 60);
        let (v, _) = nll_integrand(&tables, &[4], 0.3, &[4]).unwrap();
        assert!((v - 3.0).abs() < 1e-8);
        let (v, _) = nll_integrand(&tables, &[6], 0.5, &[2]).unwrap();
        let a: f64 = 4.0 / 0.5;
        let closed = a * (a / 3.0).ln() - a + 3.0;
        assert!((v - closed).abs() < 1e-8);
        assert!(nll_integrand(&tables, &[1], 0.5, &[2]).is_err());
        assert!(nll_integrand(&tables, &[1], 1.0, &[1]).is_err());
    }

    #[test]
    fn quadrature_examples() {
        let tables = poisson_tables(5.0, 40);
        let est = nll_quadrature(&tables, 5, 128).unwrap();
        assert_eq!(est.std_error, 0.0);
        assert!((est.value - 1.7403).abs() < 1e-3, "{}", est.value);
        let exact = -tables.pmf().log_pmf(5).unwrap();
        assert!((est.value - exact).abs() < 1e-3);

        let zip = make_target(Family::Zip, &[0.7, 5.0], 50).unwrap();
        let zt = relative_density(&zip, 1.0).unwrap();
        let est = nll_quadrature(&zt, 0, 128).unwrap();
        assert!((est.value - 0.35355).abs() < 1e-3, "{}", est.value);
    }

    #[test]
    fn reference_poisson_is_explicit() {
        let w: Vec<f64> = (0..=40).map(|k| poisson_pmf(1.0, k)).collect();
        let pmf = TargetPmf::from_weights(&w).unwrap();
        let tables = relative_density(&pmf, 1.0).unwrap();
        for x in 0..6 {
            let est = nll_quadrature(&tables, x, 128).unwrap();
            let exact = -poisson_pmf(1.0, x as u64).ln();
            assert!((est.value - exact).abs() < 1e-3, "x={x}");
        }
    }

    #[test]
    fn node_refinement_is_stable() {
        let tables = poisson_tables(5.0, 40);
        for x in [0, 3, 8] {
            let a = nll_quadrature(&tables, x, 128).unwrap().value;
            let b = nll_quadrature(&tables, x, 256).unwrap().value;
            assert!((a - b).abs() < 1e-6, "x={x}: {a} vs {b}");
        }
    }

    #[test]
    fn monte_carlo_agrees_with_quadrature() {
        let tables = poisson_tables(5.0, 40).with_cache(1);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let q = nll_quadrature(&tables, 5, 128).unwrap().value;
        let mc = nll_monte_carlo(&tables, &[5], 20_000, 5, &mut rng).unwrap();
        assert!(mc.std_error > 0.0);
        assert!((mc.value - q).abs() < 3.0 * mc.std_error, "{mc:?} vs {q}");
        let q0 = nll_quadrature(&tables, 0, 128).unwrap().value;
        let mc0 = nll_monte_carlo(&tables, &[0], 5_000, 1, &mut rng).unwrap();
        assert!((mc0.value - q0).abs() < 3.0 * mc0.std_error.max(1e-9), "{mc0:?} vs {q0}");
    }

    #[test]
    fn summary_statistics() {
        let (m, se) = summarize(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((se - (1.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert!(summarize(&[]).0.is_nan());
    }
}
