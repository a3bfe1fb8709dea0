//! Small log-space helpers shared by the probability modules.

use std::num::NonZeroUsize;

use gauss_quad::legendre::GaussLegendre;
use statrs::function::gamma::ln_gamma;

/// `log(sum(exp(v)))`, returning `-inf` for an empty or all `-inf` input.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Streaming log-sum-exp accumulator; avoids allocating the term vector.
#[derive(Debug, Clone, Copy)]
pub struct LogSumExp {
    max: f64,
    scaled: f64,
}

impl Default for LogSumExp {
    fn default() -> Self {
        Self {
            max: f64::NEG_INFINITY,
            scaled: 0.0,
        }
    }
}

impl LogSumExp {
    pub fn add(&mut self, v: f64) {
        if v == f64::NEG_INFINITY {
            return;
        }
        if v > self.max {
            self.scaled = self.scaled * (self.max - v).exp() + 1.0;
            self.max = v;
        } else {
            self.scaled += (v - self.max).exp();
        }
    }

    pub fn value(&self) -> f64 {
        if self.max == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            self.max + self.scaled.ln()
        }
    }
}

pub fn ln_factorial(k: u64) -> f64 {
    match k {
        0 | 1 => 0.0,
        2..=20 => ((2..=k).product::<u64>() as f64).ln(),
        _ => ln_gamma(k as f64 + 1.0),
    }
}

/// `ln C(n, k)`; `-inf` when `k > n`.
pub fn ln_choose(n: u64, k: u64) -> f64 {
    if k > n {
        return f64::NEG_INFINITY;
    }
    ln_factorial(n) - ln_factorial(k) - ln_factorial(n - k)
}

/// `x * ln(y)` with the convention `0 * ln(0) = 0`.
pub fn xlogy(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * y.ln()
    }
}

/// Gauss-Legendre nodes and weights mapped onto `[a, b]`, ordered by node.
pub fn gauss_legendre(n: usize, a: f64, b: f64) -> Vec<(f64, f64)> {
    let n = NonZeroUsize::new(n.max(1)).expect("non-zero");
    let half = 0.5 * (b - a);
    let mid = 0.5 * (b + a);
    let mut pairs: Vec<(f64, f64)> = GaussLegendre::new(n)
        .as_node_weight_pairs()
        .iter()
        .map(|&(x, w)| (mid + half * x, half * w))
        .collect();
    pairs.sort_by(|p, q| p.0.total_cmp(&q.0));
    pairs
}

/// Time nodes on `(0, T)` for integrands with an integrable logarithmic
/// singularity at `t = T`.
///
/// Uses `t = T (1 - (1 - u)^3)`, whose Jacobian `3T(1 - u)^2` flattens the
/// endpoint, followed by Gauss-Legendre in `u`. The returned weights already
/// include the Jacobian.
pub fn endpoint_graded_nodes(n: usize, final_time: f64) -> Vec<(f64, f64)> {
    gauss_legendre(n, 0.0, 1.0)
        .into_iter()
        .map(|(u, w)| {
            let s = 1.0 - u;
            (final_time * (1.0 - s * s * s), w * 3.0 * final_time * s * s)
        })
        .collect()
}
