//! Synthetic ordinal targets as truncated, renormalized probability tables.
//!
//! Every family is evaluated in log space on `{0, ..., support_cap}` and then
//! renormalized. The mass that truncation throws away is recorded in
//! [`TargetPmf::tail_mass`] and construction fails when it exceeds the
//! family's limit (see [`Family::default_tail_limit`]).
//!
//! Zipf and Yule-Simon are defined on `{1, 2, ...}`; their tables carry
//! `probs[0] = 0`.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::numeric::{gauss_legendre, ln_factorial, LogSumExp};

/// Quadrature nodes used for the Beta mixture of the BNB family.
pub const BNB_QUADRATURE_NODES: usize = 256;

/// Largest support the truncation search will consider before giving up.
const MAX_CAP_SEARCH: usize = 1 << 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Poisson,
    PoissonMixture,
    Zip,
    Nbm,
    Bnb,
    Zipf,
    YuleSimon,
    Custom,
}

impl Family {
    /// The seven synthetic families, in table order.
    pub const SYNTHETIC: [Family; 7] = [
        Family::Poisson,
        Family::PoissonMixture,
        Family::Zip,
        Family::Nbm,
        Family::Bnb,
        Family::Zipf,
        Family::YuleSimon,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::Poisson => "poisson",
            Family::PoissonMixture => "poisson_mixture",
            Family::Zip => "zip",
            Family::Nbm => "nbm",
            Family::Bnb => "bnb",
            Family::Zipf => "zipf",
            Family::YuleSimon => "yule_simon",
            Family::Custom => "custom",
        }
    }

    /// Display label used in report tables.
    pub fn label(self) -> &'static str {
        match self {
            Family::Poisson => "Poisson",
            Family::PoissonMixture => "Poisson Mixture",
            Family::Zip => "ZIP",
            Family::Nbm => "NBM",
            Family::Bnb => "BNB",
            Family::Zipf => "Zipf",
            Family::YuleSimon => "Yule-Simon",
            Family::Custom => "Custom",
        }
    }

    /// Parameters and support cap of the standard synthetic benchmark.
    ///
    /// Parameter layouts:
    /// - Poisson: `[rate]`
    /// - PoissonMixture: `[w_1..w_m, rate_1..rate_m]`
    /// - Zip: `[w0, rate]`
    /// - Nbm: `[w_1..w_m, r_1..r_m, p_1..p_m]`
    /// - Bnb: `[r, a, b]`
    /// - Zipf: `[alpha]`
    /// - YuleSimon: `[rho]`
    pub fn standard_preset(self) -> Option<(Vec<f64>, usize)> {
        Some(match self {
            Family::Poisson => (vec![5.0], 40),
            Family::PoissonMixture => (vec![0.1, 0.9, 1.0, 100.0], 140),
            Family::Zip => (vec![0.7, 5.0], 50),
            Family::Nbm => (vec![0.1, 0.9, 1.0, 10.0, 0.9, 0.1], 150),
            Family::Bnb => (vec![5.0, 1.5, 1.5], 100),
            Family::Zipf => (vec![1.7], 50),
            Family::YuleSimon => (vec![2.0], 50),
            Family::Custom => return None,
        })
    }

    /// Largest tail mass the family may discard at construction.
    pub fn default_tail_limit(self) -> f64 {
        match self {
            Family::Poisson | Family::Zip => 1e-8,
            Family::Nbm => 1e-7,
            Family::PoissonMixture => 1e-4,
            Family::YuleSimon => 1e-3,
            Family::Bnb | Family::Zipf => 5e-2,
            Family::Custom => f64::INFINITY,
        }
    }

    pub fn is_heavy_tailed(self) -> bool {
        matches!(self, Family::Bnb | Family::Zipf | Family::YuleSimon)
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace(['-', ' '], "_");
        Ok(match norm.as_str() {
            "poisson" => Family::Poisson,
            "poisson_mixture" | "pmix" => Family::PoissonMixture,
            "zip" => Family::Zip,
            "nbm" => Family::Nbm,
            "bnb" => Family::Bnb,
            "zipf" => Family::Zipf,
            "yule_simon" | "yulesimon" => Family::YuleSimon,
            "custom" => Family::Custom,
            _ => return Err(Error::Parameter(format!("unknown family `{s}`"))),
        })
    }
}

/// A normalized probability table on `{0, ..., support_cap}`.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetPmf {
    support_cap: usize,
    probs: Vec<f64>,
    log_probs: Vec<f64>,
    cdf: Vec<f64>,
    family: Family,
    params: Vec<f64>,
    tail_mass: f64,
}

impl TargetPmf {
    pub fn support_cap(&self) -> usize {
        self.support_cap
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn log_probs(&self) -> &[f64] {
        &self.log_probs
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Mass discarded by truncation, measured before renormalization.
    pub fn tail_mass(&self) -> f64 {
        self.tail_mass
    }

    /// Builds a `Custom` target from non-negative weights (renormalized).
    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Parameter("custom table is empty".into()));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Parameter(
                "custom weights must be finite and non-negative".into(),
            ));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::Parameter("custom weights sum to zero".into()));
        }
        let log_unnorm: Vec<f64> = weights.iter().map(|w| w.ln()).collect();
        Ok(Self::from_log_unnormalized(
            Family::Custom,
            weights.to_vec(),
            &log_unnorm,
            0.0,
        ))
    }

    fn from_log_unnormalized(
        family: Family,
        params: Vec<f64>,
        log_unnorm: &[f64],
        tail_mass: f64,
    ) -> Self {
        let mut acc = LogSumExp::default();
        log_unnorm.iter().for_each(|&v| acc.add(v));
        let log_z = acc.value();
        let log_probs: Vec<f64> = log_unnorm.iter().map(|v| v - log_z).collect();
        let probs: Vec<f64> = log_probs.iter().map(|v| v.exp()).collect();
        let mut cdf = Vec::with_capacity(probs.len());
        let mut running = 0.0;
        for p in &probs {
            running += p;
            cdf.push(running);
        }
        Self {
            support_cap: probs.len() - 1,
            probs,
            log_probs,
            cdf,
            family,
            params,
            tail_mass,
        }
    }

    /// Log-probability at `x`; `-inf` where the table has no mass.
    pub fn log_pmf(&self, x: usize) -> Result<f64> {
        self.log_probs.get(x).copied().ok_or_else(|| {
            Error::Range(format!(
                "x = {x} outside support {{0, ..., {}}}",
                self.support_cap
            ))
        })
    }

    /// Exact mean and variance of the truncated table.
    pub fn moments(&self) -> (f64, f64) {
        let mean: f64 = self
            .probs
            .iter()
            .enumerate()
            .map(|(k, p)| k as f64 * p)
            .sum();
        let var: f64 = self
            .probs
            .iter()
            .enumerate()
            .map(|(k, p)| (k as f64 - mean).powi(2) * p)
            .sum();
        (mean, var)
    }

    /// Shannon entropy in nats: the expected negative log-likelihood.
    pub fn entropy(&self) -> f64 {
        self.probs
            .iter()
            .zip(&self.log_probs)
            .filter(|(p, _)| **p > 0.0)
            .map(|(p, lp)| -p * lp)
            .sum()
    }

    /// `n` i.i.d. draws by inverse-CDF lookup.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<u32> {
        (0..n).map(|_| self.sample_one(rng)).collect()
    }

    pub fn sample_one<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        let u: f64 = rng.random::<f64>() * self.cdf[self.support_cap];
        let idx = self.cdf.partition_point(|&c| c <= u);
        idx.min(self.support_cap) as u32
    }

    /// Writes the table as CSV with columns `x,prob`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "x,prob")?;
        for (x, p) in self.probs.iter().enumerate() {
            writeln!(out, "{x},{p:.17e}")?;
        }
        Ok(())
    }
}

/// Seeded convenience wrapper around [`TargetPmf::sample`].
pub fn sample_target(pmf: &TargetPmf, n: usize, seed: u64) -> Vec<u32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pmf.sample(n, &mut rng)
}

/// Builds a family table with its default tail limit.
pub fn make_target(family: Family, params: &[f64], support_cap: usize) -> Result<TargetPmf> {
    make_target_with_tail_limit(family, params, support_cap, family.default_tail_limit())
}

/// The standard benchmark table for `family`.
pub fn standard_target(family: Family) -> Result<TargetPmf> {
    let (params, cap) = family
        .standard_preset()
        .ok_or_else(|| Error::Parameter("custom targets have no preset".into()))?;
    make_target(family, &params, cap)
}

pub fn make_target_with_tail_limit(
    family: Family,
    params: &[f64],
    support_cap: usize,
    tail_limit: f64,
) -> Result<TargetPmf> {
    if family == Family::Custom {
        let pmf = TargetPmf::from_weights(params)?;
        if pmf.support_cap != support_cap {
            return Err(Error::Parameter(format!(
                "custom table has {} entries but support_cap is {support_cap}",
                params.len()
            )));
        }
        return Ok(pmf);
    }
    if support_cap < 1 {
        return Err(Error::Parameter("support_cap must be at least 1".into()));
    }
    let model = FamilyModel::new(family, params)?;
    let log_unnorm: Vec<f64> = (0..=support_cap).map(|x| model.ln_mass(x)).collect();
    let tail_mass = model.tail_mass(support_cap, &log_unnorm);
    if !(tail_mass <= tail_limit) {
        let required_cap = match model.required_cap(support_cap, tail_limit) {
            Some(cap) => cap.to_string(),
            None => format!("> {MAX_CAP_SEARCH}"),
        };
        return Err(Error::Truncation {
            tail_mass,
            limit: tail_limit,
            support_cap,
            required_cap,
        });
    }
    Ok(TargetPmf::from_log_unnormalized(
        family,
        params.to_vec(),
        &log_unnorm,
        tail_mass,
    ))
}

fn ln_poisson(rate: f64, x: usize) -> f64 {
    -rate + x as f64 * rate.ln() - ln_factorial(x as u64)
}

/// `ln NB_{r,p}(x)` with `NB_{r,p}(x) = C(x+r-1, x) p^x (1-p)^r`.
fn ln_negative_binomial(r: f64, p: f64, x: usize) -> f64 {
    let xf = x as f64;
    ln_gamma(xf + r) - ln_gamma(r) - ln_factorial(x as u64) + xf * p.ln() + r * (1.0 - p).ln()
}

/// Validated family parameters with a log-mass evaluator.
enum FamilyModel {
    Poisson {
        rate: f64,
    },
    PoissonMixture {
        log_weights: Vec<f64>,
        rates: Vec<f64>,
    },
    Zip {
        w0: f64,
        rate: f64,
    },
    Nbm {
        log_weights: Vec<f64>,
        r: Vec<f64>,
        p: Vec<f64>,
    },
    Bnb {
        r: f64,
        ln_beta_ab: f64,
        a: f64,
        b: f64,
        nodes: Vec<(f64, f64)>,
    },
    Zipf {
        alpha: f64,
    },
    YuleSimon {
        rho: f64,
    },
}

fn check_weights(w: &[f64]) -> Result<Vec<f64>> {
    if w.iter().any(|v| !(*v > 0.0 && *v <= 1.0)) {
        return Err(Error::Parameter("mixture weights must lie in (0, 1]".into()));
    }
    let total: f64 = w.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Parameter(format!(
            "mixture weights sum to {total}, expected 1"
        )));
    }
    Ok(w.iter().map(|v| v.ln()).collect())
}

fn positive(name: &str, v: f64) -> Result<f64> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(Error::Parameter(format!("{name} must be positive, got {v}")))
    }
}

fn probability(name: &str, v: f64) -> Result<f64> {
    if v > 0.0 && v < 1.0 {
        Ok(v)
    } else {
        Err(Error::Parameter(format!("{name} must lie in (0, 1), got {v}")))
    }
}

fn expect_len(family: Family, params: &[f64], n: usize) -> Result<()> {
    if params.len() == n {
        Ok(())
    } else {
        Err(Error::Parameter(format!(
            "{family} expects {n} parameters, got {}",
            params.len()
        )))
    }
}

impl FamilyModel {
    fn new(family: Family, params: &[f64]) -> Result<Self> {
        Ok(match family {
            Family::Poisson => {
                expect_len(family, params, 1)?;
                FamilyModel::Poisson {
                    rate: positive("rate", params[0])?,
                }
            }
            Family::PoissonMixture => {
                if params.is_empty() || params.len() % 2 != 0 {
                    return Err(Error::Parameter(
                        "poisson_mixture expects [weights.., rates..] of equal length".into(),
                    ));
                }
                let m = params.len() / 2;
                let log_weights = check_weights(&params[..m])?;
                let rates = params[m..]
                    .iter()
                    .map(|&r| positive("rate", r))
                    .collect::<Result<Vec<_>>>()?;
                FamilyModel::PoissonMixture { log_weights, rates }
            }
            Family::Zip => {
                expect_len(family, params, 2)?;
                FamilyModel::Zip {
                    w0: probability("w0", params[0])?,
                    rate: positive("rate", params[1])?,
                }
            }
            Family::Nbm => {
                if params.is_empty() || params.len() % 3 != 0 {
                    return Err(Error::Parameter(
                        "nbm expects [weights.., r.., p..] of equal length".into(),
                    ));
                }
                let m = params.len() / 3;
                let log_weights = check_weights(&params[..m])?;
                let r = params[m..2 * m]
                    .iter()
                    .map(|&v| positive("r", v))
                    .collect::<Result<Vec<_>>>()?;
                let p = params[2 * m..]
                    .iter()
                    .map(|&v| probability("p", v))
                    .collect::<Result<Vec<_>>>()?;
                FamilyModel::Nbm { log_weights, r, p }
            }
            Family::Bnb => {
                expect_len(family, params, 3)?;
                let r = positive("r", params[0])?;
                let a = positive("a", params[1])?;
                let b = positive("b", params[2])?;
                FamilyModel::Bnb {
                    r,
                    a,
                    b,
                    ln_beta_ab: ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b),
                    nodes: gauss_legendre(BNB_QUADRATURE_NODES, 0.0, std::f64::consts::FRAC_PI_2),
                }
            }
            Family::Zipf => {
                expect_len(family, params, 1)?;
                let alpha = params[0];
                if !(alpha > 1.0 && alpha.is_finite()) {
                    return Err(Error::Parameter(format!("zipf alpha must exceed 1, got {alpha}")));
                }
                FamilyModel::Zipf { alpha }
            }
            Family::YuleSimon => {
                expect_len(family, params, 1)?;
                FamilyModel::YuleSimon {
                    rho: positive("rho", params[0])?,
                }
            }
            Family::Custom => unreachable!("custom tables bypass FamilyModel"),
        })
    }

    /// Log of the (possibly unnormalized) mass at `x`.
    fn ln_mass(&self, x: usize) -> f64 {
        match self {
            FamilyModel::Poisson { rate } => ln_poisson(*rate, x),
            FamilyModel::PoissonMixture { log_weights, rates } => {
                let mut acc = LogSumExp::default();
                for (lw, &rate) in log_weights.iter().zip(rates) {
                    acc.add(lw + ln_poisson(rate, x));
                }
                acc.value()
            }
            FamilyModel::Zip { w0, rate } => {
                if x == 0 {
                    (w0 + (1.0 - w0) * (-rate).exp()).ln()
                } else {
                    (1.0 - w0).ln() + ln_poisson(*rate, x)
                }
            }
            FamilyModel::Nbm { log_weights, r, p } => {
                let mut acc = LogSumExp::default();
                for ((lw, &ri), &pi) in log_weights.iter().zip(r).zip(p) {
                    acc.add(lw + ln_negative_binomial(ri, pi, x));
                }
                acc.value()
            }
            FamilyModel::Bnb {
                r,
                a,
                b,
                ln_beta_ab,
                nodes,
            } => {
                // t = sin^2(phi) turns t^(a-1) (1-t)^(b-1) dt into
                // 2 sin^(2a-1)(phi) cos^(2b-1)(phi) dphi, smooth for the usual a, b.
                let xf = x as f64;
                let ln_coef =
                    ln_gamma(xf + r) - ln_gamma(*r) - ln_factorial(x as u64) + 2f64.ln() - ln_beta_ab;
                let sin_pow = 2.0 * (xf + a) - 1.0;
                let cos_pow = 2.0 * (r + b) - 1.0;
                let mut acc = LogSumExp::default();
                for &(phi, w) in nodes {
                    acc.add(w.ln() + sin_pow * phi.sin().ln() + cos_pow * phi.cos().ln());
                }
                ln_coef + acc.value()
            }
            FamilyModel::Zipf { alpha } => {
                if x == 0 {
                    f64::NEG_INFINITY
                } else {
                    -alpha * (x as f64).ln()
                }
            }
            FamilyModel::YuleSimon { rho } => {
                if x == 0 {
                    f64::NEG_INFINITY
                } else {
                    let xf = x as f64;
                    rho.ln() + ln_gamma(xf) + ln_gamma(rho + 1.0) - ln_gamma(xf + rho + 1.0)
                }
            }
        }
    }

    /// Mass beyond `cap`, relative to the untruncated distribution.
    fn tail_mass(&self, cap: usize, log_head: &[f64]) -> f64 {
        match self {
            FamilyModel::Zipf { alpha } => {
                let head: f64 = log_head.iter().map(|v| v.exp()).sum();
                let tail = zipf_tail(*alpha, cap);
                tail / (head + tail)
            }
            FamilyModel::YuleSimon { rho } => {
                // P(X > n) = Gamma(rho + 1) Gamma(n + 1) / Gamma(n + 1 + rho)
                let n = cap as f64;
                (ln_gamma(rho + 1.0) + ln_gamma(n + 1.0) - ln_gamma(n + 1.0 + rho)).exp()
            }
            _ => {
                let head: f64 = log_head.iter().map(|v| v.exp()).sum();
                (1.0 - head).max(0.0)
            }
        }
    }

    fn tail_at(&self, cap: usize) -> f64 {
        let log_head: Vec<f64> = (0..=cap).map(|x| self.ln_mass(x)).collect();
        self.tail_mass(cap, &log_head)
    }

    /// Smallest cap whose tail mass is within `limit`, if one exists below the search bound.
    fn required_cap(&self, from: usize, limit: f64) -> Option<usize> {
        let mut lo = from;
        let mut hi = from.max(1);
        loop {
            hi = hi.checked_mul(2)?;
            if hi > MAX_CAP_SEARCH {
                return None;
            }
            if self.tail_at(hi) <= limit {
                break;
            }
            lo = hi;
        }
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            if self.tail_at(mid) <= limit {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Some(hi)
    }
}

/// `sum_{x > n} x^(-alpha)` by Euler-Maclaurin.
fn zipf_tail(alpha: f64, n: usize) -> f64 {
    // Sum the first terms explicitly so the expansion point is large.
    let start = n + 1;
    let explicit = 64usize;
    let direct: f64 = (start..start + explicit).map(|x| (x as f64).powf(-alpha)).sum();
    let m = (start + explicit) as f64;
    let f = m.powf(-alpha);
    let f1 = -alpha * m.powf(-alpha - 1.0);
    let f3 = -alpha * (alpha + 1.0) * (alpha + 2.0) * m.powf(-alpha - 3.0);
    direct + m.powf(1.0 - alpha) / (alpha - 1.0) + 0.5 * f - f1 / 12.0 + f3 / 720.0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn poisson_probability_at_mode() {
        let pmf = make_target(Family::Poisson, &[5.0], 40).unwrap();
        let direct = (-5.0f64).exp() * 5f64.powi(5) / 120.0;
        assert!((pmf.probs()[5] - direct).abs() < 1e-12);
        assert!((pmf.probs()[5] - 0.175467).abs() < 1e-6);
        let total: f64 = pmf.probs().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!((pmf.log_pmf(5).unwrap() + 1.74030).abs() < 1e-5);
    }

    #[test]
    fn zip_zero_inflation() {
        let pmf = make_target(Family::Zip, &[0.7, 5.0], 50).unwrap();
        let expected = 0.7 + 0.3 * (-5.0f64).exp();
        assert!((pmf.probs()[0] - expected).abs() < 1e-12);
        assert!((pmf.probs()[0] - 0.702021).abs() < 1e-6);
    }

    #[test]
    fn zipf_has_no_mass_at_zero() {
        let pmf = standard_target(Family::Zipf).unwrap();
        assert_eq!(pmf.probs()[0], 0.0);
        assert_eq!(pmf.log_pmf(0).unwrap(), f64::NEG_INFINITY);
        assert!((pmf.tail_mass() - 0.0446).abs() < 1e-3);
    }

    #[test]
    fn log_pmf_out_of_support() {
        let pmf = standard_target(Family::Poisson).unwrap();
        assert!(matches!(pmf.log_pmf(41), Err(Error::Range(_))));
    }

    #[test]
    fn moments_of_simple_tables() {
        let delta = TargetPmf::from_weights(&[1.0, 0.0, 0.0]).unwrap();
        assert_eq!(delta.moments(), (0.0, 0.0));
        let two = TargetPmf::from_weights(&[0.5, 0.0, 0.5]).unwrap();
        let (m, v) = two.moments();
        assert!((m - 1.0).abs() < 1e-15 && (v - 1.0).abs() < 1e-15);
        let (m, v) = standard_target(Family::Poisson).unwrap().moments();
        assert!((m - 5.0).abs() < 1e-6 && (v - 5.0).abs() < 1e-6);
    }

    #[test]
    fn all_presets_normalized() {
        for fam in Family::SYNTHETIC {
            let pmf = standard_target(fam).unwrap();
            let total: f64 = pmf.probs().iter().sum();
            assert!((total - 1.0).abs() < 1e-12, "{fam}: {total}");
            assert!(pmf.probs().iter().all(|p| *p >= 0.0));
            for (p, lp) in pmf.probs().iter().zip(pmf.log_probs()) {
                if *p > 0.0 {
                    assert!((p.ln() - lp).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn truncation_error_names_required_cap() {
        let err = make_target(Family::Poisson, &[5.0], 10).unwrap_err();
        match err {
            Error::Truncation { required_cap, .. } => {
                let cap: usize = required_cap.parse().unwrap();
                assert!(make_target(Family::Poisson, &[5.0], cap).is_ok());
                assert!(make_target(Family::Poisson, &[5.0], cap - 1).is_err());
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(make_target(Family::Poisson, &[-1.0], 40).is_err());
        assert!(make_target(Family::Zip, &[1.5, 5.0], 40).is_err());
        assert!(make_target(Family::Zipf, &[0.9], 40).is_err());
        assert!(make_target(Family::PoissonMixture, &[0.5, 0.4, 1.0, 2.0], 40).is_err());
        assert!(make_target(Family::Poisson, &[5.0], 0).is_err());
        assert!("gaussian".parse::<Family>().is_err());
    }

    #[test]
    fn delta_sampling_and_determinism() {
        let delta = TargetPmf::from_weights(&[1.0, 0.0]).unwrap();
        assert_eq!(sample_target(&delta, 10, 3), vec![0; 10]);
        let pmf = standard_target(Family::Zipf).unwrap();
        let a = sample_target(&pmf, 1000, 11);
        assert_eq!(a, sample_target(&pmf, 1000, 11));
        assert!(a.iter().all(|&x| x >= 1));
    }

    #[test]
    fn zipf_tail_matches_long_sum() {
        let direct: f64 = (51..2_000_000u64).map(|x| (x as f64).powf(-1.7)).sum::<f64>();
        // remainder beyond 2e6 by the integral
        let rest = (2_000_000f64 - 0.5).powf(-0.7) / 0.7;
        assert!((zipf_tail(1.7, 50) - (direct + rest)).abs() < 1e-9);
    }
}
