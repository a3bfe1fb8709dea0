//! Numerical checks of the identities satisfied by the flow, and the sample
//! quality metrics.
//!
//! Each check evaluates both sides through separate code paths. The two
//! paths are posterior enumeration and Binomial mixtures on one side, and
//! the semigroup ratio `h(t, x + 1)/h(t, x)` on the other. The check then
//! reports the largest discrepancy.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::denoiser::Denoiser;
use crate::error::{Error, Result};
use crate::likelihood::{nll_quadrature_many, summarize, DenoiserRate};
use crate::numeric::{endpoint_graded_nodes, xlogy};
use crate::poisson_calculus::{
    ln_binomial_pmf, ln_poisson_pmf, mixture_marginal, FlowTables,
};
use crate::sampler::{run_sampler, SamplerConfig, Scheme};
use crate::targets::{sample_target, TargetPmf};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Outcome of one check. `pass` means `residual < threshold`, or
/// `residual >= threshold` for statistics that must be large.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub residual: f64,
    pub threshold: f64,
    pub higher_is_better: bool,
    pub pass: bool,
    pub grid: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl CheckResult {
    pub fn new(name: &str, residual: f64, threshold: f64, grid: String) -> Self {
        Self {
            name: name.into(),
            residual,
            threshold,
            higher_is_better: false,
            pass: residual < threshold,
            grid,
            error: None,
        }
    }

    fn at_least(name: &str, value: f64, threshold: f64, grid: String) -> Self {
        Self {
            higher_is_better: true,
            pass: value >= threshold,
            ..Self::new(name, value, threshold, grid)
        }
    }

    fn failed(name: &str, threshold: f64, err: Error) -> Self {
        Self {
            name: name.into(),
            residual: f64::NAN,
            threshold,
            higher_is_better: false,
            pass: false,
            grid: String::new(),
            error: Some(err.to_string()),
        }
    }

    pub fn with_threshold(mut self, threshold: f64) -> Self {
        self.threshold = threshold;
        self.pass = if self.higher_is_better {
            self.residual >= threshold
        } else {
            self.residual < threshold
        };
        self
    }
}

/// `{lo, lo + step, ..., hi}`.
pub fn linspace_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n <= 1 {
        return vec![lo];
    }
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}

fn describe(ts: &[f64]) -> String {
    match ts {
        [] => "{}".into(),
        [a] => format!("t = {a}"),
        [a, .., b] => format!("t in [{a}, {b}], {} points", ts.len()),
    }
}

/// `max |m(t, x) - x - (T - t) lambda(t, x)|` over states whose marginal
/// mass exceeds `mass_floor`.
pub fn check_tweedie<D: Denoiser + ?Sized>(
    tables: &FlowTables,
    denoiser: &D,
    t_grid: &[f64],
    mass_floor: f64,
) -> Result<f64> {
    let tt = tables.final_time();
    let cap = tables.support_cap() as u32;
    let mut worst: f64 = 0.0;
    for &t in t_grid {
        let lam = tables.intensity_row(t)?;
        let mass = tables.flow_marginal(t)?;
        let m = denoiser.denoise_row(t, cap)?;
        for x in 0..=cap as usize {
            if mass[x] <= mass_floor {
                continue;
            }
            worst = worst.max((m[x] - x as f64 - (tt - t) * lam[x]).abs());
        }
    }
    Ok(worst)
}

/// `max_t sum_x |h(t, x) pi_t(x) - sum_y Bin(y, t/T)(x) mu(y)|`.
pub fn check_marginal_consistency(tables: &FlowTables, t_grid: &[f64]) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for &t in t_grid {
        let a = tables.flow_marginal(t)?;
        let b = mixture_marginal(tables.pmf(), t, tables.final_time());
        worst = worst.max(a.iter().zip(&b).map(|(p, q)| (p - q).abs()).sum());
    }
    Ok(worst)
}

/// `max |nll(x) + ln mu(x)|` over `x` with `mu(x) >= mass_floor`, using the
/// exact intensity.
pub fn check_likelihood_identity(tables: &FlowTables, mass_floor: f64, n_nodes: usize) -> Result<f64> {
    let xs: Vec<u32> = tables
        .pmf()
        .probs()
        .iter()
        .enumerate()
        .filter(|(_, &p)| p >= mass_floor)
        .map(|(x, _)| x as u32)
        .collect();
    let est = nll_quadrature_many(tables, &xs, n_nodes)?;
    let mut worst: f64 = 0.0;
    for (x, e) in xs.iter().zip(est) {
        let lp = tables.pmf().log_pmf(*x as usize)?;
        worst = worst.max((e.value + lp).abs());
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub dts: Vec<f64>,
    pub residuals: Vec<f64>,
    /// `log2(r_k / r_{k+1}) / log2(dt_k / dt_{k+1})` for consecutive pairs.
    pub orders: Vec<f64>,
}

impl ConvergenceReport {
    pub fn min_order(&self) -> f64 {
        self.orders.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Central difference of `p_t` against
/// `lambda(t, x - 1) p_t(x - 1) - lambda(t, x) p_t(x)`, for each `dt`.
pub fn check_kolmogorov_forward(
    tables: &FlowTables,
    t: f64,
    dt_list: &[f64],
) -> Result<ConvergenceReport> {
    let p = tables.flow_marginal(t)?;
    let lam = tables.intensity_row(t)?;
    let rhs: Vec<f64> = (0..p.len())
        .map(|x| {
            let inflow = if x == 0 { 0.0 } else { lam[x - 1] * p[x - 1] };
            inflow - lam[x] * p[x]
        })
        .collect();
    let mut residuals = Vec::with_capacity(dt_list.len());
    for &dt in dt_list {
        let up = tables.flow_marginal(t + dt)?;
        let down = tables.flow_marginal(t - dt)?;
        let r = (0..p.len())
            .map(|x| ((up[x] - down[x]) / (2.0 * dt) - rhs[x]).abs())
            .fold(0.0, f64::max);
        residuals.push(r);
    }
    let orders = residuals
        .windows(2)
        .zip(dt_list.windows(2))
        .map(|(r, d)| (r[0] / r[1]).log2() / (d[0] / d[1]).log2())
        .collect();
    Ok(ConvergenceReport {
        dts: dt_list.to_vec(),
        residuals,
        orders,
    })
}

/// Time integral of `sum_x (lambda ln lambda - lambda + 1) p_t(x)` and the
/// direct sum `sum_x mu ln(mu / pi_T)`.
pub fn kl_identity_sides(tables: &FlowTables, n_nodes: usize) -> Result<(f64, f64)> {
    let tt = tables.final_time();
    let mut lhs = 0.0;
    for (t, w) in endpoint_graded_nodes(n_nodes, tt) {
        let lam = tables.intensity_row(t)?;
        let p = tables.flow_marginal(t)?;
        let s: f64 = p
            .iter()
            .zip(&lam)
            .map(|(&px, &l)| (xlogy(l, l) - l + 1.0) * px)
            .sum();
        lhs += w * s;
    }
    let rhs = tables
        .pmf()
        .probs()
        .iter()
        .enumerate()
        .filter(|(_, &m)| m > 0.0)
        .map(|(x, &m)| m * (m.ln() - ln_poisson_pmf(tt, x as u64)))
        .sum();
    Ok((lhs, rhs))
}

pub fn check_kl_identity(tables: &FlowTables, n_nodes: usize) -> Result<f64> {
    let (l, r) = kl_identity_sides(tables, n_nodes)?;
    Ok((l - r).abs())
}

/// Residual of `q_t(x + 1)/q_t(x) = ((T - t)/(x + 1)) lambda(T - t, x)` with
/// `q_t = p_{T - t}` taken from the Binomial-mixture marginal. Reported as
/// `|lhs - rhs| / max(1, |rhs|)`; states with `q_t` below `mass_floor` at
/// `x` or `x + 1` are skipped.
pub fn check_time_reversal(tables: &FlowTables, t_grid: &[f64], mass_floor: f64) -> Result<f64> {
    let tt = tables.final_time();
    let mut worst: f64 = 0.0;
    for &t in t_grid {
        let s = tt - t;
        let q = mixture_marginal(tables.pmf(), s, tt);
        let lam = tables.intensity_row(s)?;
        for x in 0..q.len().saturating_sub(1) {
            if q[x] <= mass_floor || q[x + 1] <= mass_floor {
                continue;
            }
            let lhs = q[x + 1] / q[x];
            let rhs = s / (x as f64 + 1.0) * lam[x];
            worst = worst.max((lhs - rhs).abs() / rhs.abs().max(1.0));
        }
    }
    Ok(worst)
}

/// Relative residual of `d/dt h(t, x) = h(t, x) - h(t, x + 1)`, with the time
/// derivative from the five-point stencil, over states with marginal mass
/// above `mass_floor`.
pub fn check_semigroup_equation(
    tables: &FlowTables,
    t_grid: &[f64],
    dt: f64,
    mass_floor: f64,
) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for &t in t_grid {
        let mass = tables.flow_marginal(t)?;
        let h: Vec<f64> = tables.log_h_row(t)?.iter().map(|v| v.exp()).collect();
        let rows = [-2.0, -1.0, 1.0, 2.0]
            .map(|k| tables.log_h_row(t + k * dt))
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        for x in 0..mass.len() {
            if mass[x] <= mass_floor {
                continue;
            }
            let [m2, m1, p1, p2] = [0, 1, 2, 3].map(|i| rows[i][x].exp());
            let fd = (m2 - 8.0 * m1 + 8.0 * p1 - p2) / (12.0 * dt);
            let rhs = h[x] - h[x + 1];
            worst = worst.max((fd - rhs).abs() / h[x]);
        }
    }
    Ok(worst)
}

/// `sum_k |F_emp(k) - F(k)|`, the Wasserstein-1 distance on the integers.
pub fn w1_empirical(samples: &[u32], pmf: &TargetPmf) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Parameter("W1 needs at least one sample".into()));
    }
    let max_s = *samples.iter().max().expect("non-empty") as usize;
    let n = max_s.max(pmf.support_cap()) + 1;
    let mut counts = vec![0u64; n];
    for &s in samples {
        counts[s as usize] += 1;
    }
    let total = samples.len() as f64;
    let (mut fe, mut ft, mut w1) = (0.0, 0.0, 0.0);
    for k in 0..n {
        fe += counts[k] as f64 / total;
        ft += pmf.probs().get(k).copied().unwrap_or(0.0);
        w1 += (fe - ft.min(1.0)).abs();
    }
    Ok(w1)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BridgeTest {
    pub k: u32,
    pub hits: usize,
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

/// Chi-squared tests of `X_{T/2} | X_T = k ~ Binomial(k, 1/2)` on paired
/// samples, for every `k` with at least `min_hits` chains. Cells with
/// expected count below 5 are pooled into their neighbours.
pub fn bridge_chi_squared(mid: &[u32], finals: &[u32], min_hits: usize) -> Result<Vec<BridgeTest>> {
    if mid.len() != finals.len() {
        return Err(Error::LengthMismatch {
            expected: finals.len(),
            got: mid.len(),
        });
    }
    let mut by_k: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
    for (&m, &f) in mid.iter().zip(finals) {
        by_k.entry(f).or_default().push(m);
    }
    let mut out = Vec::new();
    for (k, mids) in by_k {
        if mids.len() < min_hits || k == 0 {
            continue;
        }
        let n = mids.len() as f64;
        let mut observed = vec![0.0; k as usize + 1];
        for &m in &mids {
            if m > k {
                return Err(Error::Domain(format!("mid-point state {m} above final {k}")));
            }
            observed[m as usize] += 1.0;
        }
        let expected: Vec<f64> = (0..=k)
            .map(|j| n * ln_binomial_pmf(k as u64, 0.5, j as u64).exp())
            .collect();
        let (mut cells_o, mut cells_e) = (Vec::new(), Vec::new());
        let (mut acc_o, mut acc_e) = (0.0, 0.0);
        for (o, e) in observed.iter().zip(&expected) {
            acc_o += o;
            acc_e += e;
            if acc_e >= 5.0 {
                cells_o.push(acc_o);
                cells_e.push(acc_e);
                acc_o = 0.0;
                acc_e = 0.0;
            }
        }
        if acc_e > 0.0 {
            if let (Some(lo), Some(le)) = (cells_o.last_mut(), cells_e.last_mut()) {
                *lo += acc_o;
                *le += acc_e;
            } else {
                cells_o.push(acc_o);
                cells_e.push(acc_e);
            }
        }
        if cells_e.len() < 2 {
            continue;
        }
        let stat: f64 = cells_o
            .iter()
            .zip(&cells_e)
            .map(|(o, e)| (o - e) * (o - e) / e)
            .sum();
        let dof = cells_e.len() - 1;
        let chi = ChiSquared::new(dof as f64)
            .map_err(|e| Error::Numeric(format!("chi-squared with {dof} dof: {e}")))?;
        out.push(BridgeTest {
            k,
            hits: mids.len(),
            statistic: stat,
            dof,
            p_value: 1.0 - chi.cdf(stat),
        });
    }
    Ok(out)
}

pub const CHECK_NAMES: [&str; 10] = [
    "tweedie",
    "marginal_consistency",
    "likelihood_identity",
    "kolmogorov_forward",
    "kl_identity",
    "time_reversal",
    "semigroup_equation",
    "bridge_chi_squared",
    "w1",
    "nll",
];

/// Checks, thresholds and budgets for [`run_suite`]. The default list holds
/// the identity checks; `w1`, `nll` and `bridge_chi_squared` are opt-in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SuiteConfig {
    pub checks: Vec<String>,
    pub thresholds: BTreeMap<String, f64>,
    pub t_grid: Vec<f64>,
    pub mass_floor: f64,
    pub quadrature_nodes: usize,
    pub kolmogorov_t: f64,
    pub kolmogorov_dts: Vec<f64>,
    pub w1_chains: usize,
    pub w1_steps: usize,
    pub w1_scheme: Scheme,
    pub nll_samples: usize,
    pub bridge_chains: usize,
    pub seed: u64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        let thresholds = [
            ("tweedie", 1e-6),
            ("marginal_consistency", 1e-10),
            ("likelihood_identity", 1e-3),
            ("kolmogorov_forward", 1.9),
            ("kl_identity", 1e-3),
            ("time_reversal", 1e-9),
            ("semigroup_equation", 1e-6),
            ("bridge_chi_squared", 0.01),
            ("w1", 0.15),
            ("nll", f64::MAX),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        Self {
            checks: CHECK_NAMES
                .iter()
                .filter(|c| !matches!(**c, "bridge_chi_squared" | "w1" | "nll"))
                .map(|c| c.to_string())
                .collect(),
            thresholds,
            t_grid: linspace_grid(0.05, 0.95, 19),
            mass_floor: 1e-10,
            quadrature_nodes: 128,
            kolmogorov_t: 0.5,
            kolmogorov_dts: vec![1e-3, 5e-4, 2.5e-4],
            w1_chains: 10_000,
            w1_steps: 1000,
            w1_scheme: Scheme::Euler,
            nll_samples: 10_000,
            bridge_chains: 100_000,
            seed: 0,
        }
    }
}

impl SuiteConfig {
    pub fn validate(&self) -> Result<()> {
        for c in self.checks.iter().chain(self.thresholds.keys()) {
            if !CHECK_NAMES.contains(&c.as_str()) {
                return Err(Error::Config {
                    path: "diagnostics.checks".into(),
                    message: format!("unknown check `{c}`; known: {}", CHECK_NAMES.join(", ")),
                });
            }
        }
        Ok(())
    }

    fn threshold(&self, name: &str) -> f64 {
        let defaults = SuiteConfig {
            checks: Vec::new(),
            ..Default::default()
        };
        self.thresholds
            .get(name)
            .or_else(|| defaults.thresholds.get(name))
            .copied()
            .unwrap_or(f64::INFINITY)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metrics {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub w1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nll_mean: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nll_std_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticsReport {
    pub schema_version: u32,
    pub target: String,
    pub seed: u64,
    pub checks: Vec<CheckResult>,
    pub metrics: Metrics,
}

impl DiagnosticsReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

/// Runs every enabled check. Failures of individual checks are recorded in
/// the report and never abort the suite.
pub fn run_suite<D: Denoiser + ?Sized>(
    tables: &FlowTables,
    denoiser: &D,
    cfg: &SuiteConfig,
) -> Result<DiagnosticsReport> {
    cfg.validate()?;
    let mut checks = Vec::new();
    let mut metrics = Metrics {
        w1: None,
        nll_mean: None,
        nll_std_error: None,
    };
    let grid = describe(&cfg.t_grid);
    for name in &cfg.checks {
        let th = cfg.threshold(name);
        let outcome: Result<CheckResult> = match name.as_str() {
            "tweedie" => check_tweedie(tables, denoiser, &cfg.t_grid, cfg.mass_floor)
                .map(|r| CheckResult::new(name, r, th, format!("{grid}, mass > {:e}", cfg.mass_floor))),
            "marginal_consistency" => check_marginal_consistency(tables, &cfg.t_grid)
                .map(|r| CheckResult::new(name, r, th, grid.clone())),
            "likelihood_identity" => {
                check_likelihood_identity(tables, 1e-6, cfg.quadrature_nodes).map(|r| {
                    CheckResult::new(
                        name,
                        r,
                        th,
                        format!("mu(x) >= 1e-6, {} nodes", cfg.quadrature_nodes),
                    )
                })
            }
            "kolmogorov_forward" => {
                check_kolmogorov_forward(tables, cfg.kolmogorov_t, &cfg.kolmogorov_dts).map(|r| {
                    CheckResult::at_least(
                        name,
                        r.min_order(),
                        th,
                        format!("t = {}, dt = {:?}", cfg.kolmogorov_t, cfg.kolmogorov_dts),
                    )
                })
            }
            "kl_identity" => check_kl_identity(tables, cfg.quadrature_nodes).map(|r| {
                CheckResult::new(name, r, th, format!("{} nodes", cfg.quadrature_nodes))
            }),
            "time_reversal" => check_time_reversal(tables, &cfg.t_grid, 1e-12)
                .map(|r| CheckResult::new(name, r, th, format!("{grid}, mass > 1e-12"))),
            "semigroup_equation" => check_semigroup_equation(tables, &cfg.t_grid, 1e-4, cfg.mass_floor)
                .map(|r| CheckResult::new(name, r, th, format!("{grid}, dt = 1e-4"))),
            "bridge_chi_squared" => bridge_check(denoiser, tables.final_time(), cfg).map(|p| {
                CheckResult::at_least(
                    name,
                    p,
                    th,
                    format!("{} tau-leap chains, Bonferroni-corrected", cfg.bridge_chains),
                )
            }),
            "w1" => w1_check(tables, denoiser, cfg).map(|w| {
                metrics.w1 = Some(w);
                CheckResult::new(
                    name,
                    w,
                    th,
                    format!("{} chains, {} steps", cfg.w1_chains, cfg.w1_steps),
                )
            }),
            "nll" => nll_check(tables, denoiser, cfg).map(|(m, se)| {
                metrics.nll_mean = Some(m);
                metrics.nll_std_error = Some(se);
                CheckResult::new(name, m, th, format!("{} target samples", cfg.nll_samples))
            }),
            _ => unreachable!("validated"),
        };
        checks.push(outcome.unwrap_or_else(|e| CheckResult::failed(name, th, e)));
    }
    Ok(DiagnosticsReport {
        schema_version: REPORT_SCHEMA_VERSION,
        target: tables.pmf().family().label().to_string(),
        seed: cfg.seed,
        checks,
        metrics,
    })
}

/// Smallest Bonferroni-scaled p-value, `min_k p_k * n_tests`.
fn bridge_check<D: Denoiser + ?Sized>(denoiser: &D, tt: f64, cfg: &SuiteConfig) -> Result<f64> {
    let n_steps = 1000;
    let scfg = SamplerConfig {
        final_time: tt,
        n_steps,
        scheme: Scheme::TauLeap,
        n_chains: cfg.bridge_chains,
        seed: cfg.seed,
        t_end_guard: 0.0,
        capture_steps: vec![n_steps / 2],
        ..Default::default()
    };
    let out = run_sampler(denoiser, &scfg)?;
    let tests = bridge_chi_squared(&out.captures[0].2, &out.finals, 2000)?;
    if tests.is_empty() {
        return Err(Error::Parameter("no final value reached 2000 chains".into()));
    }
    let m = tests.len() as f64;
    Ok(tests
        .iter()
        .map(|b| (b.p_value * m).min(1.0))
        .fold(1.0, f64::min))
}

fn w1_check<D: Denoiser + ?Sized>(tables: &FlowTables, denoiser: &D, cfg: &SuiteConfig) -> Result<f64> {
    let scfg = SamplerConfig {
        final_time: tables.final_time(),
        n_steps: cfg.w1_steps,
        scheme: cfg.w1_scheme,
        n_chains: cfg.w1_chains,
        seed: cfg.seed,
        ..Default::default()
    };
    let out = run_sampler(denoiser, &scfg)?;
    w1_empirical(&out.finals, tables.pmf())
}

fn nll_check<D: Denoiser + ?Sized>(
    tables: &FlowTables,
    denoiser: &D,
    cfg: &SuiteConfig,
) -> Result<(f64, f64)> {
    let xs = sample_target(tables.pmf(), cfg.nll_samples, cfg.seed);
    let est = nll_quadrature_many(&DenoiserRate(denoiser), &xs, cfg.quadrature_nodes)?;
    let vals: Vec<f64> = est.iter().map(|e| e.value).collect();
    Ok(summarize(&vals))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::{AffineBaseline, OracleDenoiser};
    use crate::poisson_calculus::{poisson_pmf, relative_density};
    use crate::targets::{make_target, Family};

    fn tables(family: Family, params: &[f64], cap: usize) -> FlowTables {
        relative_density(&make_target(family, params, cap).unwrap(), 1.0).unwrap()
    }

    fn reference(cap: usize) -> FlowTables {
        let w: Vec<f64> = (0..=cap).map(|k| poisson_pmf(1.0, k as u64)).collect();
        relative_density(&TargetPmf::from_weights(&w).unwrap(), 1.0).unwrap()
    }

    #[test]
    fn tweedie_oracle_and_negative_control() {
        let t = tables(Family::Poisson, &[5.0], 40);
        let oracle = OracleDenoiser::new(t.pmf().clone(), 1.0).unwrap();
        let grid = linspace_grid(0.05, 0.95, 19);
        assert!(check_tweedie(&t, &oracle, &grid, 0.0).unwrap() < 1e-8);

        let z = tables(Family::Zip, &[0.7, 5.0], 50);
        let (mean, var) = z.pmf().moments();
        let affine = AffineBaseline {
            mu_data: mean,
            sigma2_data: var,
        };
        assert!(check_tweedie(&z, &affine, &grid, 1e-10).unwrap() > 1e-2);
    }

    #[test]
    fn reference_target_has_unit_rate() {
        let r = reference(60);
        let oracle = OracleDenoiser::new(r.pmf().clone(), 1.0).unwrap();
        assert!(check_tweedie(&r, &oracle, &[0.2, 0.7], 1e-12).unwrap() < 1e-9);
        assert!(check_kl_identity(&r, 128).unwrap() < 1e-8);
        assert!(check_time_reversal(&r, &[0.3, 0.6], 1e-12).unwrap() < 1e-9);
    }

    #[test]
    fn kolmogorov_order_two() {
        let t = tables(Family::Poisson, &[5.0], 40);
        let rep = check_kolmogorov_forward(&t, 0.5, &[1e-3, 5e-4, 2.5e-4]).unwrap();
        assert!(rep.min_order() > 1.9, "{rep:?}");
        let r = reference(60);
        let rep = check_kolmogorov_forward(&r, 0.5, &[1e-3, 5e-4, 2.5e-4]).unwrap();
        assert!(rep.min_order() > 1.9, "{rep:?}");
    }

    #[test]
    fn kl_of_poisson3_matches_direct_sum() {
        let t = tables(Family::Poisson, &[3.0], 60);
        let (l, r) = kl_identity_sides(&t, 128).unwrap();
        // direct closed form: KL(pi_3 | pi_1) = 3 ln 3 - 3 + 1
        assert!((r - (3.0 * 3f64.ln() - 2.0)).abs() < 1e-10);
        assert!((l - r).abs() < 1e-4, "{l} vs {r}");
    }

    #[test]
    fn w1_examples() {
        let delta = TargetPmf::from_weights(&[0.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(w1_empirical(&[3, 3, 3], &delta).unwrap(), 0.0);
        let zero = TargetPmf::from_weights(&[1.0]).unwrap();
        assert!((w1_empirical(&[4, 4], &zero).unwrap() - 4.0).abs() < 1e-12);
        assert!(w1_empirical(&[], &zero).is_err());
    }

    #[test]
    fn suite_reports_every_check_once() {
        let t = tables(Family::Poisson, &[5.0], 40);
        let oracle = OracleDenoiser::new(t.pmf().clone(), 1.0).unwrap();
        let cfg = SuiteConfig {
            w1_chains: 2000,
            w1_steps: 200,
            nll_samples: 200,
            t_grid: vec![0.25, 0.5, 0.75],
            ..Default::default()
        };
        let rep = run_suite(&t, &oracle, &cfg).unwrap();
        assert_eq!(rep.checks.len(), cfg.checks.len());
        assert!(rep.all_pass(), "{rep:#?}");
        let strict = SuiteConfig {
            thresholds: [("marginal_consistency".to_string(), 0.0)].into_iter().collect(),
            ..cfg.clone()
        };
        assert!(!run_suite(&t, &oracle, &strict).unwrap().all_pass());
        let bad = SuiteConfig {
            checks: vec!["nope".into()],
            ..cfg
        };
        assert!(run_suite(&t, &oracle, &bad).is_err());
    }
}
