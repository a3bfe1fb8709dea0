//! Acceptance criteria, one PASS/FAIL line each.
//!
//! Criterion 6 trains four full-size models and takes the bulk of the time.
//! Setting `BINFLOW_ACCEPTANCE_SKIP_SLOW=1` skips it and reports it as SKIP.

use std::process::ExitCode;
use std::time::Instant;

use binflow::denoiser::{Denoiser, OracleDenoiser};
use binflow::diagnostics::{
    check_kolmogorov_forward, check_likelihood_identity, check_marginal_consistency,
    check_time_reversal, check_tweedie, kl_identity_sides, linspace_grid, w1_empirical,
};
use binflow::likelihood::{nll_quadrature_many, summarize, DenoiserRate};
use binflow::losses::{baseline_affine, sample_noise_level, weight_synthetic, Preconditioner};
use binflow::model::train::{loss_and_grad, train, Batch, LossKind, LossSpec, TrainConfig, WeightFn};
use binflow::model::{Arch, MlpDenoiser, Scaling};
use binflow::poisson_calculus::{
    binomial_thin, oracle_denoiser_row, poisson_pmf, relative_density, FlowTables,
};
use binflow::sampler::{propagate_law, run_sampler, SamplerConfig, Scheme};
use binflow::targets::{sample_target, standard_target, Family, TargetPmf};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};

type Outcome = (Status, String);

#[derive(Clone, Copy, PartialEq)]
enum Status {
    Pass,
    Fail,
    Skip,
}

fn verdict(ok: bool, detail: String) -> Outcome {
    (if ok { Status::Pass } else { Status::Fail }, detail)
}

fn tables(family: Family) -> FlowTables {
    relative_density(&standard_target(family).expect("preset"), 1.0).expect("tables")
}

fn heavy(family: Family) -> bool {
    matches!(family, Family::Bnb | Family::Zipf | Family::YuleSimon)
}

fn reference_tables(cap: usize) -> FlowTables {
    let w: Vec<f64> = (0..=cap).map(|k| poisson_pmf(1.0, k as u64)).collect();
    relative_density(&TargetPmf::from_weights(&w).expect("weights"), 1.0).expect("tables")
}

fn tweedie() -> Outcome {
    let grid = linspace_grid(0.05, 0.95, 19);
    let mut ok = true;
    let mut parts = Vec::new();
    for fam in Family::SYNTHETIC {
        let t = tables(fam);
        let oracle = OracleDenoiser::new(t.pmf().clone(), 1.0).expect("oracle");
        let (floor, tol) = if heavy(fam) { (1e-10, 1e-6) } else { (0.0, 1e-8) };
        let r = check_tweedie(&t, &oracle, &grid, floor).expect("tweedie");
        ok &= r < tol;
        parts.push(format!("{}={r:.1e}", fam.name()));
    }
    verdict(ok, parts.join(" "))
}

fn marginals() -> Outcome {
    let grid = linspace_grid(0.1, 0.9, 9);
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for fam in Family::SYNTHETIC {
        let r = check_marginal_consistency(&tables(fam), &grid).expect("marginal");
        worst = worst.max(r);
        parts.push(format!("{}={r:.1e}", fam.name()));
    }
    verdict(worst < 1e-10, parts.join(" "))
}

fn likelihood_identity() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for fam in Family::SYNTHETIC {
        let r = check_likelihood_identity(&tables(fam), 1e-6, 256).expect("nll");
        worst = worst.max(r);
        parts.push(format!("{}={r:.1e}", fam.name()));
    }
    verdict(worst < 1e-3, parts.join(" "))
}

fn oracle_mean_nll(family: Family, seed: u64) -> (f64, f64) {
    let t = tables(family);
    let xs = sample_target(t.pmf(), 10_000, seed);
    let est = nll_quadrature_many(&t, &xs, 256).expect("nll");
    summarize(&est.iter().map(|e| e.value).collect::<Vec<_>>())
}

fn true_nll() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for (fam, reference, tol) in [
        (Family::Poisson, 2.21, 0.03),
        (Family::Zip, 1.25, 0.03),
        (Family::YuleSimon, 1.22, 0.05),
    ] {
        let (m, se) = oracle_mean_nll(fam, 2024);
        ok &= (m - reference).abs() < tol;
        parts.push(format!("{}={m:.3}+-{se:.3} (ref {reference})", fam.name()));
    }
    verdict(ok, parts.join(" "))
}

fn l1(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().max(b.len());
    (0..n)
        .map(|i| (a.get(i).copied().unwrap_or(0.0) - b.get(i).copied().unwrap_or(0.0)).abs())
        .sum()
}

fn empirical_law(states: &[u32], len: usize) -> Vec<f64> {
    let mut p = vec![0.0; len];
    for &s in states {
        p[(s as usize).min(len - 1)] += 1.0;
    }
    let n = states.len() as f64;
    p.iter_mut().for_each(|v| *v /= n);
    p
}

/// Oracle sampling on Poisson(5): W1 of 10^5 tau-leap chains, and halving of
/// the marginal error at t = 1/2 as the step count doubles.
///
/// The marginal error of the discretized chain splits into a deterministic
/// bias, computed exactly by pushing the law through the step kernels, and
/// Monte-Carlo noise. Halving is asserted on the bias. The Monte-Carlo error
/// must agree with the bias up to the sampling noise.
fn oracle_sampling() -> Outcome {
    let t = tables(Family::Poisson);
    let pmf = t.pmf().clone();
    let oracle = OracleDenoiser::new(pmf.clone(), 1.0).expect("oracle");
    let chains = 100_000;
    let mut ok = true;
    let mut parts = Vec::new();

    let base = SamplerConfig {
        n_steps: 1000,
        scheme: Scheme::TauLeap,
        n_chains: chains,
        seed: 17,
        ..Default::default()
    };
    let out = run_sampler(&oracle, &base).expect("sampler");
    let w1 = w1_empirical(&out.finals, &pmf).expect("w1");
    ok &= w1 <= 0.15;
    parts.push(format!("W1={w1:.4}"));

    let window = 60usize;
    for scheme in [Scheme::TauLeap, Scheme::Euler] {
        let mut row = Vec::new();
        for n in [250usize, 500, 1000] {
            let cfg = SamplerConfig {
                n_steps: n,
                scheme,
                capture_steps: vec![n / 2],
                ..base.clone()
            };
            let t_mid = cfg.time_grid().expect("grid")[n / 2];
            let exact = t.flow_marginal(t_mid).expect("marginal");
            let law = &propagate_law(&oracle, &cfg, window as u32).expect("law")[0].1;
            let bias = l1(law, &exact);
            let mut mc = None;
            if scheme == Scheme::TauLeap {
                let run = run_sampler(&oracle, &cfg).expect("sampler");
                let emp = empirical_law(&run.captures[0].2, window + 1);
                let err = l1(&emp, &exact);
                // expected L1 of pure multinomial noise plus a 5-sigma margin
                let noise: f64 = law
                    .iter()
                    .map(|p| (2.0 * p * (1.0 - p) / (std::f64::consts::PI * chains as f64)).sqrt())
                    .sum();
                let spread: f64 = law
                    .iter()
                    .map(|p| p * (1.0 - p) / chains as f64)
                    .sum::<f64>()
                    .sqrt();
                ok &= err <= bias + noise + 5.0 * spread;
                mc = Some(err);
            }
            row.push((n, bias, mc));
        }
        for w in row.windows(2) {
            let (b0, b1) = (w[0].1, w[1].1);
            // bias must halve; below 1e-12 it is roundoff and already at zero
            ok &= b1 <= 0.6 * b0 || b1 < 1e-12;
        }
        let desc: Vec<String> = row
            .iter()
            .map(|(n, b, mc)| match mc {
                Some(e) => format!("n={n}: bias {b:.1e}, mc {e:.4}"),
                None => format!("n={n}: bias {b:.2e}"),
            })
            .collect();
        parts.push(format!("{}[{}]", scheme.name(), desc.join("; ")));
    }
    verdict(ok, parts.join(" "))
}

fn kl_identity() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    let cases = [
        ("poisson3", relative_density(
            &binflow::targets::make_target(Family::Poisson, &[3.0], 60).expect("target"),
            1.0,
        )
        .expect("tables")),
        ("zip", tables(Family::Zip)),
        ("pi1", reference_tables(60)),
    ];
    for (name, t) in cases {
        let (l, r) = kl_identity_sides(&t, 256).expect("kl");
        ok &= (l - r).abs() < 1e-3;
        parts.push(format!("{name}: {l:.6} vs {r:.6}"));
    }
    verdict(ok, parts.join(" | "))
}

fn time_reversal() -> Outcome {
    let grid = linspace_grid(0.05, 0.95, 19);
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for fam in Family::SYNTHETIC {
        let r = check_time_reversal(&tables(fam), &grid, 1e-12).expect("reversal");
        worst = worst.max(r);
        parts.push(format!("{}={r:.1e}", fam.name()));
    }
    verdict(worst < 1e-9, parts.join(" "))
}

fn kolmogorov() -> Outcome {
    let dts = [1e-3, 5e-4, 2.5e-4];
    let mut worst = f64::INFINITY;
    let mut parts = Vec::new();
    for fam in Family::SYNTHETIC {
        let rep = check_kolmogorov_forward(&tables(fam), 0.5, &dts).expect("kfe");
        worst = worst.min(rep.min_order());
        parts.push(format!("{}={:.3}", fam.name(), rep.min_order()));
    }
    verdict(worst >= 1.9, parts.join(" "))
}

fn preconditioning() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(99);

    // iid data with known moments: ZIP(0.7, 5)
    let pmf = standard_target(Family::Zip).expect("zip");
    let (mu, s2) = pmf.moments();
    let pre = Preconditioner::new(mu, s2).expect("pre").with_eps_cin(0.0);
    let n = 400_000;
    let x1 = sample_target(&pmf, n, 5);
    for t in [0.25, 0.5, 0.75] {
        let c = pre.coeffs(t);
        let xt: Vec<f64> = x1
            .iter()
            .map(|&v| binomial_thin(&[v], t, &mut rng)[0] as f64)
            .collect();
        let var = |v: &[f64]| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            v.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / (v.len() - 1) as f64
        };
        let vin = var(&xt.iter().map(|v| c.c_in * v).collect::<Vec<_>>());
        let vf = var(
            &x1.iter()
                .zip(&xt)
                .map(|(&a, &b)| (a as f64 - c.c_skip * b) / c.c_out)
                .collect::<Vec<_>>(),
        );
        ok &= (0.9..=1.1).contains(&vin) && (0.9..=1.1).contains(&vf);
        parts.push(format!("t={t}: Var[c_in X_t]={vin:.3} Var[F_target]={vf:.3}"));
    }

    // affine baseline, mu = 4, sigma^2 = 2 from Binomial(8, 1/2) data at t = 1/2
    let (mu, s2, t) = (4.0, 2.0, 0.5);
    let bin = Binomial::new(8, 0.5).expect("binomial");
    let m = 10_000_000u64;
    let (mut sy, mut sx, mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for _ in 0..m {
        let y = bin.sample(&mut rng) as f64;
        let x = Binomial::new(y as u64, t).expect("thin").sample(&mut rng) as f64;
        sy += y;
        sx += x;
        sxx += x * x;
        sxy += x * y;
        syy += y * y;
    }
    let k = m as f64;
    let (sy, sx, sxx, sxy, syy) = (sy / k, sx / k, sxx / k, sxy / k, syy / k);
    let objective = |bs: f64, bo: f64| {
        let c = bo * mu;
        syy + bs * bs * sxx + c * c - 2.0 * bs * sxy - 2.0 * c * sy + 2.0 * bs * c * sx
    };
    let mut best = (f64::INFINITY, 0.0, 0.0);
    for i in 0..=3000 {
        let bs = i as f64 * 1e-3;
        for j in 0..=3000 {
            let bo = j as f64 * 1e-3;
            let v = objective(bs, bo);
            if v < best.0 {
                best = (v, bs, bo);
            }
        }
    }
    let (cs, co) = baseline_affine(t, mu, s2).expect("baseline");
    let dist = (best.1 - cs).abs().max((best.2 - co).abs());
    ok &= dist < 2e-3;
    parts.push(format!(
        "grid argmin ({:.3}, {:.3}) vs closed form ({cs:.4}, {co:.4})",
        best.1, best.2
    ));
    verdict(ok, parts.join(" | "))
}

fn batch_for(model: &MlpDenoiser<f64>, rng: &mut ChaCha8Rng, n: usize, loss: LossKind) -> Batch {
    let mut b = Batch::default();
    while b.t.len() < n {
        let t: f64 = rng.random_range(0.02..0.95);
        let xf: u32 = rng.random_range(0..12);
        let xt = binomial_thin(&[xf], t, rng)[0];
        if loss == LossKind::Entropic {
            // keep the model rate away from the floor, where the loss is smooth
            let m = model.forward(t, &[xt as f64]).expect("forward")[0];
            if (m - xt as f64) / (1.0 - t) < 0.05 {
                continue;
            }
        }
        b.t.push(t);
        b.x_t.push(xt as f64);
        b.x_final.push(xf as f64);
    }
    b
}

fn gradients() -> Outcome {
    let arch = Arch {
        input_dim: 1,
        width: 8,
        n_blocks: 3,
        emb_dim: 8,
    };
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(123);
    let pre = Preconditioner::new(4.0, 6.0).expect("pre");
    let setups = [
        ("quadratic/raw", LossKind::Quadratic, Scaling::Standardize { mean: 4.0, std: 2.5 }, WeightFn::SyntheticInvSqrt),
        ("entropic/raw", LossKind::Entropic, Scaling::Standardize { mean: 4.0, std: 2.5 }, WeightFn::SyntheticInvSqrt),
        ("quadratic/precond", LossKind::Quadratic, Scaling::Precondition(pre), WeightFn::PrecondW2),
        ("entropic/precond", LossKind::Entropic, Scaling::Precondition(pre), WeightFn::Constant),
    ];
    for (name, loss, scaling, weight) in setups {
        let model = MlpDenoiser::<f64>::new(arch, scaling, 1.0, 77).expect("model");
        let batch = batch_for(&model, &mut rng, 16, loss);
        let spec = LossSpec { loss, weight };
        let mut grad = vec![0.0; model.n_params()];
        let (_, floors) = loss_and_grad(&model, &model.params, &batch, spec, &mut grad).expect("grad");
        assert_eq!(floors, 0);
        let eval = |p: &[f64]| {
            let mut g = vec![0.0; p.len()];
            loss_and_grad(&model, p, &batch, spec, &mut g).expect("loss").0
        };
        let mut local: f64 = 0.0;
        for _ in 0..64 {
            let i = rng.random_range(0..model.n_params());
            let h = 1e-5;
            let mut p = model.params.clone();
            p[i] += h;
            let up = eval(&p);
            p[i] -= 2.0 * h;
            let down = eval(&p);
            let fd = (up - down) / (2.0 * h);
            let rel = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-6);
            local = local.max(rel);
        }
        worst = worst.max(local);
        parts.push(format!("{name}={local:.1e}"));
    }
    verdict(worst < 1e-4, parts.join(" "))
}

/// Weighted objective of the oracle denoiser under the training distribution.
fn irreducible_loss(pmf: &TargetPmf, cfg: &TrainConfig, n: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(4242);
    let xs = sample_target(pmf, n, 4243);
    let mut acc = 0.0;
    let mut rows: std::collections::HashMap<u64, Vec<f64>> = Default::default();
    for &xf in &xs {
        let (t, _) = sample_noise_level(&cfg.noise_schedule, &mut rng);
        let t = (t * 1e4).round() / 1e4;
        let xt = binomial_thin(&[xf], t, &mut rng)[0];
        let row = rows
            .entry(t.to_bits())
            .or_insert_with(|| oracle_denoiser_row(pmf, 1.0, t).expect("row"));
        let m = row[xt as usize];
        acc += weight_synthetic(t) * 0.5 * (xf as f64 - m).powi(2);
    }
    acc / n as f64
}

fn learned_models() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    let targets = [
        (Family::Poisson, Some(2.45), 0.08),
        (Family::Zip, Some(1.40), 0.09),
        (Family::Zipf, None, 0.18),
        (Family::YuleSimon, None, 0.11),
    ];
    for (fam, nll_bound, reported_w1) in targets {
        let start = Instant::now();
        let t = tables(fam);
        let pmf = t.pmf().clone();
        let cfg = TrainConfig {
            seed: 1,
            ..Default::default()
        };
        let data = sample_target(&pmf, cfg.n_train, 1000);
        let (mean, var) = pmf.moments();
        let scaling = cfg.scaling(mean, var).expect("scaling");
        let out = train::<f32>(&data, 1, scaling, &cfg).expect("training");
        let model = out.model;

        let xs = sample_target(&pmf, 10_000, 2000);
        let est = nll_quadrature_many(&DenoiserRate(&model), &xs, 256).expect("nll");
        let (nll, se) = summarize(&est.iter().map(|e| e.value).collect::<Vec<_>>());

        let scfg = SamplerConfig {
            n_steps: 1000,
            scheme: Scheme::Euler,
            n_chains: 10_000,
            seed: 3000,
            ..Default::default()
        };
        let samples = run_sampler(&model, &scfg).expect("sampling");
        let w1 = w1_empirical(&samples.finals, &pmf).expect("w1");
        let w1_ok = w1 <= 3.0 * reported_w1;
        let nll_ok = nll_bound.is_none_or(|b| nll <= b);
        ok &= w1_ok && nll_ok;
        let mut line = format!(
            "{}: nll {nll:.3}+-{se:.3}{} W1 {w1:.3} (<= {:.2})",
            fam.name(),
            nll_bound.map(|b| format!(" (<= {b})")).unwrap_or_default(),
            3.0 * reported_w1
        );

        if fam == Family::Poisson {
            let grid = linspace_grid(0.05, 0.95, 19);
            let (mut err, mut count) = (0.0, 0usize);
            for &tt in &grid {
                let exact = oracle_denoiser_row(&pmf, 1.0, tt).expect("oracle");
                let mass = t.flow_marginal(tt).expect("marginal");
                let learned = model.denoise_row(tt, pmf.support_cap() as u32).expect("row");
                for x in 0..exact.len() {
                    if mass[x] >= 1e-3 {
                        err += (learned[x] - exact[x]).abs();
                        count += 1;
                    }
                }
            }
            let mae = err / count as f64;
            let tail = &out.history[out.history.len().saturating_sub(50)..];
            let trailing = tail.iter().map(|r| r.mean_loss).sum::<f64>() / tail.len() as f64;
            let floor = irreducible_loss(&pmf, &cfg, 2_000_000);
            ok &= mae < 0.15 && trailing < 1.2 * floor;
            line.push_str(&format!(
                ", denoiser MAE {mae:.3} (< 0.15), trailing loss {trailing:.4} vs irreducible {floor:.4}"
            ));
        }
        line.push_str(&format!(" [{:.0}s]", start.elapsed().as_secs_f64()));
        eprintln!("  {line}");
        parts.push(line);
    }
    verdict(ok, parts.join(" | "))
}

fn main() -> ExitCode {
    let _ = env_logger::builder().is_test(true).try_init();
    let skip_slow = std::env::var("BINFLOW_ACCEPTANCE_SKIP_SLOW").is_ok_and(|v| v == "1");
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome>)> = vec![
        ("1 discrete Tweedie identity", Box::new(tweedie)),
        ("2 marginal consistency", Box::new(marginals)),
        ("3 exact-likelihood identity", Box::new(likelihood_identity)),
        ("4 true NLL reference values", Box::new(true_nll)),
        ("5 oracle sampling fidelity", Box::new(oracle_sampling)),
        (
            "6 learned-model reproduction",
            Box::new(move || {
                if skip_slow {
                    (Status::Skip, "BINFLOW_ACCEPTANCE_SKIP_SLOW=1".into())
                } else {
                    learned_models()
                }
            }),
        ),
        ("7 KL identity", Box::new(kl_identity)),
        ("8 time-reversal ratio", Box::new(time_reversal)),
        ("9 Kolmogorov forward equation", Box::new(kolmogorov)),
        ("10 preconditioning contracts", Box::new(preconditioning)),
        ("11 gradient correctness", Box::new(gradients)),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let start = Instant::now();
        let (status, detail) = run();
        let tag = match status {
            Status::Pass => "PASS",
            Status::Fail => {
                failed += 1;
                "FAIL"
            }
            Status::Skip => "SKIP",
        };
        println!(
            "{tag} criterion {name} ({:.1}s): {detail}",
            start.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
