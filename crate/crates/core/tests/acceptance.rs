mod common;

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use num_bigint::{BigInt, BigUint};
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use rand::Rng;

use common::*;
use posflow::algebra::{lemma32_evaluate, theorem34_decompose, ProductFunction};
use posflow::convex::{dual_entropy, dynamical_potential_axioms, entropy_oracle_markov, EntropyOptions};
use posflow::ldp::{lln_probability, sensitivity_check, window_probability, Mode, SensitiveState};
use posflow::process::{
    spectral_potential_restriction_check, suspension_state, suspension_support_correspondence, CylinderFunction,
};
use posflow::spectral::{directional_derivative, max_cycle_mean, perron_data, pressure, resolvent_eigenstate, Side};
use posflow::system::flow_support;
use posflow::{weight, FiniteSystem, Measure, PositiveOperator, Potential};

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(start: Instant, limit: Duration) -> Result<(), String> {
    let t = start.elapsed();
    check(t < limit, || format!("runtime {t:?} exceeds {limit:?}"))
}

fn axiom_suite() -> Outcome {
    let start = Instant::now();
    let mut r = rng(1);
    let mut worst = 0.0_f64;
    for k in 0..100 {
        let n = r.random_range(2..=20);
        let system = random_system(&mut r, k, n);
        let report = dynamical_potential_axioms(&system.operator(), &system, 5, k as u64).map_err(|e| e.to_string())?;
        worst = worst.max(report.worst());
        if k % 3 == 0 {
            check(report.strong_invariance.is_some(), || "strong invariance not checked on a map".into())?;
        }
    }
    check(worst <= 1e-9, || format!("worst axiom violation {worst:e}"))?;
    within(start, Duration::from_secs(10))?;
    Ok(format!("worst violation {worst:.2e} in {:?}", start.elapsed()))
}

fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut r = rng(2);
    let mut worst = 0.0_f64;
    for _ in 0..200 {
        let n = r.random_range(1..=50);
        let system = random_map(&mut r, n);
        let phi = random_potential(&mut r, n, 5.0);
        let lambda = pressure(&system.operator(), &phi).map_err(|e| e.to_string())?.finite().ok_or("nilpotent map")?;
        let mcm = max_cycle_mean(&system, &phi).map_err(|e| e.to_string())?;
        worst = worst.max((lambda - mcm).abs());
    }
    check(worst <= 1e-10, || format!("worst |lambda - max cycle mean| = {worst:e}"))?;
    within(start, Duration::from_secs(5))?;
    Ok(format!("worst gap {worst:.2e} in {:?}", start.elapsed()))
}

fn gibbs_gradient() -> Outcome {
    let mut r = rng(3);
    let mut worst = 0.0_f64;
    for k in 0..50 {
        let n = r.random_range(2..=8);
        let system = if k % 2 == 0 { random_chain(&mut r, n) } else { random_subshift(&mut r, n) };
        let e = system.operator();
        let phi = random_potential(&mut r, n, 1.0);
        let gibbs = perron_data(&weight(&e, &phi).unwrap()).unwrap().gibbs_weights().to_vec();
        for (x, g) in gibbs.iter().enumerate() {
            let d = directional_derivative(&e, &phi, &Potential::indicator(n, x), Side::Plus).map_err(|e| e.to_string())?;
            worst = worst.max((d - g).abs());
        }
    }
    check(worst <= 1e-6, || format!("worst |derivative - gibbs| = {worst:e}"))?;
    Ok(format!("worst coordinate gap {worst:.2e}"))
}

fn young_equality() -> Outcome {
    let mut r = rng(4);
    let opts = EntropyOptions::default();
    let mut worst_eq = 0.0_f64;
    let mut min_gap = f64::INFINITY;
    for k in 0..50 {
        let n = r.random_range(2..=6);
        let system = if k % 2 == 0 { random_chain(&mut r, n) } else { random_subshift(&mut r, n) };
        let e = system.operator();
        let phi = random_potential(&mut r, n, 1.0);
        let data = perron_data(&weight(&e, &phi).unwrap()).unwrap();
        let lambda = data.lambda.finite().unwrap();
        let gibbs = data.gibbs.clone().unwrap();
        let bound = lambda - gibbs.pair(phi.values());
        let s = dual_entropy(&e, &gibbs, &opts).map_err(|e| e.to_string())?.value.finite().ok_or("S(gibbs) = -inf")?;
        worst_eq = worst_eq.max((s - bound).abs());

        // move a tenth of the mass toward a random probability vector
        let noise: Vec<f64> = (0..n).map(|_| r.random_range(0.0..1.0)).collect();
        let t: f64 = noise.iter().sum();
        let mixed: Vec<f64> = gibbs.weights().iter().zip(&noise).map(|(g, v)| 0.9 * g + 0.1 * v / t).collect();
        let total: f64 = mixed.iter().sum();
        let mu = Measure::probability(mixed.iter().map(|v| v / total).collect()).unwrap();
        let s = dual_entropy(&e, &mu, &opts).map_err(|e| e.to_string())?.value.finite().ok_or("S(mu) = -inf")?;
        min_gap = min_gap.min(lambda - mu.pair(phi.values()) - s);
    }
    check(worst_eq <= 1e-5, || format!("worst Young equality gap {worst_eq:e}"))?;
    check(min_gap > 1e-6, || format!("smallest strict gap {min_gap:e}"))?;
    Ok(format!("equality within {worst_eq:.2e}, smallest strict gap {min_gap:.2e}"))
}

fn closed_form_anchors() -> Outcome {
    let golden = FiniteSystem::subshift(&[vec![1.0, 1.0], vec![1.0, 0.0]]).unwrap();
    let lambda = pressure(&golden.operator(), &Potential::zeros(2)).unwrap().finite().unwrap();
    let expected = ((1.0 + 5.0_f64.sqrt()) / 2.0).ln();
    check((lambda - expected).abs() <= 1e-9, || format!("golden mean lambda {lambda}"))?;
    let oracle = entropy_oracle_markov(&[vec![1.0, 1.0], vec![1.0, 0.0]], &Potential::new(vec![0.3, -0.2]).unwrap())
        .map_err(|e| e.to_string())?;
    check(oracle.young_residual <= 1e-8, || format!("Markov oracle Young residual {:e}", oracle.young_residual))?;
    let full = FiniteSystem::subshift(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
    let uniform = Measure::probability(vec![0.5, 0.5]).unwrap();
    let s = dual_entropy(&full.operator(), &uniform, &EntropyOptions::default()).unwrap().value.finite().unwrap();
    check((s - 2.0_f64.ln()).abs() <= 1e-5, || format!("S(uniform) = {s}"))?;
    Ok(format!(
        "lambda gap {:.1e}, Young residual {:.1e}, S gap {:.1e}",
        (lambda - expected).abs(),
        oracle.young_residual,
        (s - 2.0_f64.ln()).abs()
    ))
}

/// `Σ_{297 ≤ k ≤ 303} C(400, k) / 2^400` exactly.
fn binomial_window_oracle() -> f64 {
    let n = 400_u32;
    let mut c = BigUint::one();
    let mut total = BigUint::zero();
    for k in 0..=n {
        if k > 0 {
            c = c * BigUint::from(n - k + 1) / BigUint::from(k);
        }
        if (297..=303).contains(&k) {
            total += &c;
        }
    }
    let p = BigRational::new(BigInt::from(total), BigInt::from(BigUint::one() << n));
    p.to_f64().unwrap()
}

fn ldp_sandwich() -> Outcome {
    let start = Instant::now();
    let full = FiniteSystem::subshift(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
    let basis = [Potential::indicator(2, 1)];
    let est = window_probability(&full.operator(), &Potential::zeros(2), &[0.5, 0.5], &basis, &[0.75], 0.01, 400, Mode::ExactDp)
        .map_err(|e| e.to_string())?;
    let exact = binomial_window_oracle();
    let rel = (est.probability - exact).abs() / exact;
    check(rel <= 1e-12, || format!("ExactDP {} vs binomial {exact}, relative {rel:e}", est.probability))?;
    let rate = est.log_probability.finite().ok_or("window probability is zero")? / 400.0;
    check((rate + 0.130812).abs() <= 0.02, || format!("(1/n) log P = {rate}"))?;
    within(start, Duration::from_secs(30))?;
    Ok(format!("(1/400) log P = {rate:.6}, oracle relative error {rel:.1e}"))
}

fn least_squares_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

fn lln_suite() -> Outcome {
    let mut r = rng(7);
    let grid: Vec<usize> = (1..=200).collect();
    let mut worst = 0.0_f64;
    for k in 0..10 {
        let n = r.random_range(2..=6);
        let system = if k % 2 == 0 { random_chain(&mut r, n) } else { random_subshift(&mut r, n) };
        let e = system.operator();
        let phi = random_potential(&mut r, n, 1.0);
        let nu = perron_data(&weight(&e, &phi).unwrap()).unwrap().left_vec;
        let report = sensitivity_check(&e, &phi, &nu, &grid).map_err(|e| e.to_string())?;
        for (_, v) in report.residuals {
            worst = worst.max(v.finite().ok_or("eigen-state residual is -inf")?.abs());
        }
    }
    check(worst <= 1e-10, || format!("worst eigen-state residual {worst:e}"))?;

    let chain = FiniteSystem::stochastic(&[vec![0.5, 0.3, 0.2], vec![0.2, 0.5, 0.3], vec![0.3, 0.2, 0.5]]).unwrap();
    let e = chain.operator();
    let phi = Potential::new(vec![0.2, -0.1, 0.0]).unwrap();
    let mixture = SensitiveState::new(&e, &[phi.clone(), Potential::new(vec![-1.0, 0.5, 1.0]).unwrap()]).unwrap();
    let nu = mixture.functional();
    let f = Potential::new(vec![0.0, 0.5, 1.0]).unwrap();
    let gibbs = perron_data(&weight(&e, &phi).unwrap()).unwrap();
    let a = gibbs.gibbs_weights().iter().zip(f.values()).map(|(g, v)| g * v).sum::<f64>();
    let horizons: Vec<usize> = (1..=10).map(|k| 20 * k).collect();
    let mut probs = Vec::new();
    for &n in &horizons {
        probs.push(lln_probability(&e, &phi, &nu, &f, a, 0.1, n, Mode::ExactDp).map_err(|e| e.to_string())?.probability);
    }
    check(probs.windows(2).all(|w| w[1] < w[0]), || format!("deviation probabilities not decreasing: {probs:?}"))?;
    let xs: Vec<f64> = horizons.iter().map(|&n| n as f64).collect();
    let ys: Vec<f64> = probs.iter().map(|p| p.ln()).collect();
    let slope = least_squares_slope(&xs, &ys);
    check(slope < 0.0, || format!("log-linear slope {slope}"))?;

    let tilted = FiniteSystem::subshift(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
    let phi = Potential::new(vec![0.0, 0.5]).unwrap();
    let e = tilted.operator();
    let nu = perron_data(&weight(&e, &phi).unwrap()).unwrap().left_state();
    let p1 = 0.5_f64.exp() / (1.0 + 0.5_f64.exp());
    let mode = Mode::MonteCarlo { seed: 11, samples: 1000 };
    let est = lln_probability(&e, &phi, &nu, &Potential::indicator(2, 1), p1, 0.02, 10_000, mode).map_err(|e| e.to_string())?;
    let inside = 1.0 - est.probability;
    check(inside >= 0.99, || format!("only {inside} of trajectories within 0.02"))?;
    Ok(format!(
        "eigen residual {worst:.1e}, mixture slope {slope:.4}, strong law {:.1}% within",
        100.0 * inside
    ))
}

fn resolvent_construction() -> Outcome {
    let mut r = rng(8);
    let thetas = [0.9, 0.99, 0.999, 0.9999];
    let mut worst = 0.0_f64;
    for _ in 0..30 {
        let n = r.random_range(2..=8);
        let e = random_positive_matrix(&mut r, n);
        let res = resolvent_eigenstate(&e, &thetas).map_err(|e| e.to_string())?;
        let direct = perron_data(&e).unwrap().left_state();
        worst = worst.max(max_abs_diff(res.state.weights(), &direct));
    }
    check(worst <= 1e-6, || format!("worst distance to the left Perron vector {worst:e}"))?;
    Ok(format!("worst distance {worst:.2e}"))
}

fn random_nonnegative_product<R: Rng>(r: &mut R, axes: &[usize]) -> ProductFunction {
    let positive: Vec<Vec<f64>> = axes.iter().map(|&s| (0..s).map(|_| r.random_range(1.0..2.0)).collect()).collect();
    let signed: Vec<Vec<f64>> = axes
        .iter()
        .enumerate()
        .map(|(j, &s)| {
            let scale = if j == 0 { 0.5 } else { 1.0 };
            (0..s).map(|_| scale * r.random_range(-1.0..1.0)).collect()
        })
        .collect();
    ProductFunction::new(axes.to_vec(), vec![positive, signed]).unwrap()
}

fn constructive_suite() -> Outcome {
    let mut r = rng(9);
    let mut worst_rel = 0.0_f64;
    for _ in 0..1000 {
        let x = r.random_range(-1.0..=1.0);
        let n = r.random_range(1..=20);
        let l = lemma32_evaluate(x, n).map_err(|e| e.to_string())?;
        let scale = x * x + (1.0 - x * x) / (2.0 * n as f64);
        worst_rel = worst_rel.max(l.residual / scale);
    }
    check(worst_rel <= 1e-10, || format!("worst relative square-identity residual {worst_rel:e}"))?;
    let mut worst_res = 0.0_f64;
    for k in 0..20 {
        let dims = if k % 2 == 0 { 2 } else { 3 };
        let axes: Vec<usize> = (0..dims).map(|_| r.random_range(2..=4)).collect();
        let f = random_nonnegative_product(&mut r, &axes);
        let eps = r.random_range(0.2..0.6);
        let d = theorem34_decompose(&f, eps).map_err(|e| e.to_string())?;
        check(d.function.all_factors_nonnegative(), || "a factor is negative".into())?;
        worst_res = worst_res.max(d.residual);
    }
    check(worst_res <= 1e-10, || format!("worst reconstruction residual {worst_res:e}"))?;
    Ok(format!("square identity {worst_rel:.1e}, reconstruction {worst_res:.1e}"))
}

/// Exhaustive `Σ_w μ(x₁) Π f_j(x_j) Π P(x_j, x_{j+1})` over words, in exact
/// rationals, for a kernel with entries `k/8`, `μ` with entries `k/8` and
/// factors with entries `k/4`.
fn exact_path_sum(p: &[Vec<i64>], mu: &[i64], f: &[Vec<i64>]) -> BigRational {
    let n = p.len();
    let m = f.len();
    let mut total = BigInt::zero();
    let mut word = vec![0_usize; m];
    for code in 0..n.pow(m as u32) {
        let mut c = code;
        for slot in word.iter_mut().rev() {
            *slot = c % n;
            c /= n;
        }
        let mut prod: i128 = mu[word[0]] as i128;
        for (j, &x) in word.iter().enumerate() {
            prod *= f[j][x] as i128;
            if j + 1 < m {
                prod *= p[x][word[j + 1]] as i128;
            }
        }
        total += BigInt::from(prod);
    }
    let denom = BigInt::from(8_u32).pow(m as u32) * BigInt::from(4_u32).pow(m as u32);
    BigRational::new(total, denom)
}

fn random_composition<R: Rng>(r: &mut R, n: usize) -> Vec<i64> {
    let mut v = vec![0_i64; n];
    for _ in 0..8 {
        v[r.random_range(0..n)] += 1;
    }
    v
}

fn support_and_suspension() -> Outcome {
    let mut r = rng(10);
    let mut worst_lambda = 0.0_f64;
    for _ in 0..20 {
        let n = r.random_range(3..=6);
        let mut rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..n).map(|_| if r.random_bool(0.5) { r.random_range(0.1..1.0) } else { 0.0 }).collect())
            .collect();
        rows[0][0] = 1.0;
        let dead = n - 1;
        rows[dead] = vec![0.0; n];
        let e = PositiveOperator::from_rows(&rows).unwrap();
        let system = FiniteSystem::deterministic(vec![0; n]).unwrap();
        let support = flow_support(&e);
        let psi: Vec<f64> = (0..n).map(|x| if support.contains(&x) { 0.0 } else { r.random_range(-5.0..5.0) }).collect();
        let phi = random_potential(&mut r, n, 1.0);
        let d = spectral_potential_restriction_check(&e, &system, &phi, &Potential::new(psi).unwrap())
            .map_err(|e| e.to_string())?;
        worst_lambda = worst_lambda.max(d);
    }
    check(worst_lambda <= 1e-10, || format!("off-support perturbation moved lambda by {worst_lambda:e}"))?;

    for _ in 0..20 {
        let n = r.random_range(1..=5);
        let system = random_map(&mut r, n);
        let report = suspension_support_correspondence(&system.operator(), &system, 6).map_err(|e| e.to_string())?;
        let alpha = system.alpha().unwrap();
        let expected: Vec<Vec<usize>> = (0..n)
            .map(|x| std::iter::successors(Some(x), |&y| Some(alpha[y])).take(6).collect())
            .collect();
        check(report.pass && report.surviving == expected, || format!("support words wrong for {alpha:?}"))?;
    }

    let mut worst_path = 0.0_f64;
    for states in 2..=4 {
        for depth in [1, 4, 8] {
            let p: Vec<Vec<i64>> = (0..states).map(|_| random_composition(&mut r, states)).collect();
            let mu = random_composition(&mut r, states);
            let f: Vec<Vec<i64>> = (0..depth).map(|_| (0..states).map(|_| r.random_range(-4..=4)).collect()).collect();
            let exact = exact_path_sum(&p, &mu, &f).to_f64().unwrap();
            let kernel: Vec<Vec<f64>> = p.iter().map(|row| row.iter().map(|&v| v as f64 / 8.0).collect()).collect();
            let e = FiniteSystem::stochastic(&kernel).unwrap().operator();
            let measure = Measure::probability(mu.iter().map(|&v| v as f64 / 8.0).collect()).unwrap();
            let cyl = CylinderFunction::factored(
                f.iter().map(|row| row.iter().map(|&v| v as f64 / 4.0).collect()).collect(),
            )
            .unwrap();
            let got = suspension_state(&e, &measure, &cyl, 0).map_err(|e| e.to_string())?;
            let table = suspension_state(&e, &measure, &cyl.to_table(states).unwrap(), 0).map_err(|e| e.to_string())?;
            worst_path = worst_path.max((got - exact).abs()).max((table - exact).abs());
        }
    }
    check(worst_path <= 1e-12, || format!("suspension state off exhaustive path sums by {worst_path:e}"))?;
    Ok(format!("lambda shift {worst_lambda:.1e}, path sums {worst_path:.1e}"))
}

fn run_cli(args: &[&str]) -> Result<(), String> {
    let status = Command::new(env!("CARGO_BIN_EXE_posflow"))
        .args(args)
        .stdout(std::process::Stdio::null())
        .status()
        .map_err(|e| e.to_string())?;
    check(status.code() == Some(0), || format!("{args:?} exited with {status}"))
}

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

fn determinism() -> Outcome {
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let runs: [(&str, &str, &[&str]); 8] = [
        ("pressure", "golden_mean.json", &[]),
        ("entropy", "golden_mean.json", &[]),
        ("rate", "binomial_rate.json", &[]),
        ("lln", "binomial_lln.json", &["--mode", "monte-carlo", "--seed", "5"]),
        ("ldp", "binomial_ldp.json", &[]),
        ("support", "three_cycle.json", &[]),
        ("suspension", "markov_chain.json", &[]),
        ("algebra", "decompose.json", &[]),
    ];
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut files = 0;
    for (cmd, cfg, extra) in runs {
        let cfg = configs.join(cfg);
        let cfg = cfg.to_str().unwrap();
        let a = tmp.path().join(format!("{cmd}-a"));
        let b = tmp.path().join(format!("{cmd}-b"));
        for out in [&a, &b] {
            let mut args = vec![cmd, "--config", cfg, "--out", out.to_str().unwrap()];
            args.extend_from_slice(extra);
            run_cli(&args)?;
        }
        let (sa, sb) = (snapshot(&a), snapshot(&b));
        check(!sa.is_empty() && sa == sb, || format!("{cmd} outputs differ between runs"))?;
        files += sa.len();
    }
    Ok(format!("{files} output files byte-identical across reruns"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("dynamical-potential axioms", axiom_suite),
        ("cycle-mean oracle equivalence", oracle_equivalence),
        ("gibbs weights are the gradient", gibbs_gradient),
        ("young equality and strict gap", young_equality),
        ("closed-form anchors", closed_form_anchors),
        ("binomial large-deviation sandwich", ldp_sandwich),
        ("law of large numbers", lln_suite),
        ("resolvent eigen-state", resolvent_construction),
        ("constructive identities", constructive_suite),
        ("support and suspension", support_and_suspension),
        ("seeded determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|_| Err("panicked".into()));
        let t = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail} [{t:.2}s]", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {why} [{t:.2}s]", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
