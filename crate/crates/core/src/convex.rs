//! Dual entropy, action functionals and the conditional action.
//!
//! The dual entropy of a measure is the concave conjugate
//! `S(μ) = inf_φ (λ(φ) − μ·φ)` of the spectral potential. It is finite only on
//! invariant probability measures, and `S(μ) ≤ λ(φ) − μ·φ` (Young's
//! inequality) with equality exactly at equilibrium measures of `φ`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::spectral::{directional_derivative, perron_at, pressure_shifted, Side, SpectralData};
use crate::system::{
    evolution_operator, EvolutionModel, FiniteSystem, Measure, PositiveOperator, Potential,
    WeightSide,
};
use crate::value::ExtReal;

/// Objective values below `-DIVERGE_BOUND` mean the infimum is `-∞`.
pub const DIVERGE_BOUND: f64 = 1e6;
/// Coordinates beyond this norm mean the conditional action has escaped to
/// infinity.
pub const T_MAX: f64 = 1e3;

const INVARIANCE_TOL: f64 = 1e-10;
const MASS_TOL: f64 = 1e-12;
const ARMIJO_C: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 60;
/// Beyond this spread `e^{φ − max φ}` starts to underflow.
const SPREAD_LIMIT: f64 = 600.0;
/// Gradient norm separating an unbounded objective from a boundary minimum
/// once the spread limit is reached.
const RECESSION_TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct EntropyOptions {
    pub max_iter: usize,
    pub grad_tol: f64,
}

impl Default for EntropyOptions {
    fn default() -> Self {
        Self {
            max_iter: 5000,
            grad_tol: 1e-9,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EntropyResult {
    pub value: ExtReal,
    /// Minimizer `φ*` (zero-sum normalized) when the value is finite.
    pub argmin_potential: Option<Potential>,
    pub converged: bool,
    pub iterations: usize,
    /// Set when a kink stopped the descent before the gradient vanished.
    pub approximate: bool,
    /// Why the value is `-inf` without optimizing, if it is.
    pub reason: Option<String>,
    /// Objective value after every accepted step.
    pub trace: Vec<f64>,
}

impl EntropyResult {
    fn screened(reason: impl Into<String>) -> Self {
        Self {
            value: ExtReal::NegInfinity,
            argmin_potential: None,
            converged: true,
            iterations: 0,
            approximate: false,
            reason: Some(reason.into()),
            trace: Vec::new(),
        }
    }
}

/// `α` when `e` is the composition operator of a map: row-weighted with one
/// unit entry per row.
fn functional_graph(e: &PositiveOperator) -> Option<Vec<usize>> {
    if e.weight_side() != WeightSide::Row {
        return None;
    }
    let n = e.dim();
    let mut alpha = Vec::with_capacity(n);
    for x in 0..n {
        let mut target = None;
        for y in 0..n {
            match e.get(x, y) {
                v if v == 0.0 => {}
                v if v == 1.0 && target.is_none() => target = Some(y),
                _ => return None,
            }
        }
        alpha.push(target?);
    }
    Some(alpha)
}

/// The screen that makes `S(μ) = -∞` without optimizing.
pub fn screen_measure(e: &PositiveOperator, mu: &Measure) -> Result<Option<String>> {
    mu.check_len(e.dim())?;
    if mu.weights().iter().any(|w| !w.is_finite()) {
        return Err(Error::NonFinite("measure"));
    }
    if (mu.total() - 1.0).abs() > MASS_TOL {
        return Ok(Some("mu(1) != 1".into()));
    }
    if mu.weights().iter().any(|&w| w < 0.0) {
        return Ok(Some("mu has a negative weight".into()));
    }
    if let Some(alpha) = functional_graph(e) {
        let mut pushed = vec![0.0; e.dim()];
        for (x, &y) in alpha.iter().enumerate() {
            pushed[y] += mu.weights()[x];
        }
        let worst = pushed
            .iter()
            .zip(mu.weights())
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
        if worst > INVARIANCE_TOL {
            return Ok(Some("mu is not alpha-invariant".into()));
        }
    }
    Ok(None)
}

struct Probe {
    objective: f64,
    gradient: Vec<f64>,
}

/// `g(φ) = λ(φ) − μ·φ` and its projected gradient; `None` when `λ(φ) = -∞`.
fn probe(e: &PositiveOperator, mu: &[f64], phi: &Potential, kink: &mut bool) -> Result<Option<Probe>> {
    let data = perron_at(e, phi)?;
    let Some(lambda) = data.lambda.finite() else {
        return Ok(None);
    };
    let objective = lambda - dot(mu, phi.values());
    let mut gradient = subgradient(e, phi, &data, kink)?;
    gradient.iter_mut().zip(mu).for_each(|(g, m)| *g -= m);
    project_zero_sum(&mut gradient);
    Ok(Some(Probe { objective, gradient }))
}

/// Gibbs weights when the dominant eigenvalue is simple, otherwise plus-side
/// directional derivatives along the coordinate functions.
fn subgradient(e: &PositiveOperator, phi: &Potential, data: &SpectralData, kink: &mut bool) -> Result<Vec<f64>> {
    if data.simple && !data.degenerate {
        return Ok(data.gibbs_weights().to_vec());
    }
    *kink = true;
    let n = e.dim();
    let top = phi.values().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let base = phi.shifted(-top);
    (0..n)
        .map(|i| directional_derivative(e, &base, &Potential::indicator(n, i), Side::Plus))
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn project_zero_sum(v: &mut [f64]) {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= mean);
}

/// `S(μ) = inf_φ (λ(φ) − μ·φ)` over zero-sum potentials, by projected
/// gradient descent with Barzilai–Borwein steps and Armijo backtracking.
pub fn dual_entropy(e: &PositiveOperator, mu: &Measure, opts: &EntropyOptions) -> Result<EntropyResult> {
    if let Some(reason) = screen_measure(e, mu)? {
        return Ok(EntropyResult::screened(reason));
    }
    let n = e.dim();
    let mu = mu.weights();
    let mut kink = false;
    let mut phi = Potential::zeros(n);
    let Some(mut current) = probe(e, mu, &phi, &mut kink)? else {
        return Ok(EntropyResult::screened("the operator is nilpotent"));
    };

    let mut trace = vec![current.objective];
    let mut step = 1.0;
    let mut previous: Option<(Potential, Vec<f64>)> = None;
    let mut converged = false;
    let mut approximate = false;
    let mut iterations = 0;

    while iterations < opts.max_iter {
        let gnorm = norm2(&current.gradient);
        if gnorm < opts.grad_tol {
            converged = true;
            break;
        }
        if let Some((prev_phi, prev_grad)) = &previous {
            let s: Vec<f64> = phi.values().iter().zip(prev_phi.values()).map(|(a, b)| a - b).collect();
            let y: Vec<f64> = current.gradient.iter().zip(prev_grad).map(|(a, b)| a - b).collect();
            let sy = dot(&s, &y);
            step = if sy > 0.0 { dot(&s, &s) / sy } else { step * 2.0 };
        }

        let mut accepted = None;
        let mut trial = step;
        for _ in 0..MAX_BACKTRACKS {
            let candidate = phi.axpy(-trial, &Potential::new(current.gradient.clone())?);
            if let Ok(Some(p)) = probe(e, mu, &candidate, &mut kink) {
                if p.objective <= current.objective - ARMIJO_C * trial * gnorm * gnorm {
                    accepted = Some((candidate, p));
                    break;
                }
            }
            trial *= 0.5;
        }
        iterations += 1;
        let Some((next_phi, next)) = accepted else {
            // No descent along the (sub)gradient: a kink or the rounding floor.
            approximate = kink;
            converged = !kink && gnorm < opts.grad_tol.sqrt();
            break;
        };
        step = trial;
        previous = Some((std::mem::replace(&mut phi, next_phi), current.gradient));
        current = next;
        trace.push(current.objective);
        let spread = phi.values().iter().copied().fold(f64::NEG_INFINITY, f64::max)
            - phi.values().iter().copied().fold(f64::INFINITY, f64::min);
        if current.objective < -DIVERGE_BOUND
            || (spread > SPREAD_LIMIT && norm2(&current.gradient) > RECESSION_TOL)
        {
            return Ok(EntropyResult {
                value: ExtReal::NegInfinity,
                argmin_potential: None,
                converged: false,
                iterations,
                approximate: false,
                reason: Some("objective is unbounded below".into()),
                trace,
            });
        }
        if spread > SPREAD_LIMIT {
            // A boundary measure: the infimum is approached at infinity and
            // the gradient has already decayed.
            converged = true;
            break;
        }
    }

    Ok(EntropyResult {
        value: ExtReal::Finite(current.objective),
        argmin_potential: Some(phi),
        converged,
        iterations,
        approximate,
        reason: None,
        trace,
    })
}

/// `τ_φ(μ) = μ(φ) + S(μ) − λ(φ)`, always `≤ 0`.
pub fn action_functional(e: &PositiveOperator, phi: &Potential, mu: &Measure) -> Result<ExtReal> {
    phi.check_len(e.dim())?;
    let entropy = dual_entropy(e, mu, &EntropyOptions::default())?;
    let lambda = pressure_shifted(e, phi)?;
    let Some(lambda) = lambda.finite() else {
        return Err(Error::Nilpotent);
    };
    Ok(entropy.value.add_f64(mu.pair(phi.values()) - lambda))
}

/// `λ(φ) − max_μ (μ(φ) + S(μ))` over a finite grid of measures. Nonnegative
/// up to rounding, and zero when the grid contains an equilibrium measure.
pub fn legendre_inversion_check(e: &PositiveOperator, phi: &Potential, grid: &[Measure]) -> Result<f64> {
    if grid.is_empty() {
        return Err(Error::Empty("measure grid"));
    }
    let lambda = pressure_shifted(e, phi)?.finite().ok_or(Error::Nilpotent)?;
    let mut best = ExtReal::NegInfinity;
    for mu in grid {
        let s = dual_entropy(e, mu, &EntropyOptions::default())?.value;
        best = best.max(s.add_f64(mu.pair(phi.values())));
    }
    Ok(match best {
        ExtReal::Finite(b) => lambda - b,
        ExtReal::NegInfinity => f64::INFINITY,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConditionalAction {
    pub tau: ExtReal,
    pub t_star: Vec<f64>,
    /// `‖t‖` passed `T_MAX` with a non-vanishing gradient.
    pub diverged: bool,
    /// `‖t‖` passed `T_MAX` while the gradient vanished: `u` lies on the
    /// boundary of the achievable moments and `tau` is the limiting value.
    pub boundary: bool,
    pub converged: bool,
    pub iterations: usize,
}

/// Options for [`conditional_action`].
#[derive(Clone, Debug, PartialEq)]
pub struct NewtonOptions {
    pub max_iter: usize,
    pub grad_tol: f64,
    /// Relative finite-difference step for the Hessian.
    pub hessian_step: f64,
    /// Gradient threshold separating boundary points from divergence.
    pub boundary_tol: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            max_iter: 500,
            grad_tol: 1e-11,
            hessian_step: 1e-4,
            boundary_tol: 1e-6,
        }
    }
}

/// Rank of the `k × n` matrix whose rows are the basis functions.
pub fn basis_rank(basis: &[Potential]) -> usize {
    if basis.is_empty() {
        return 0;
    }
    let n = basis[0].len();
    let m = DMatrix::from_fn(basis.len(), n, |i, j| basis[i][j]);
    let scale = m.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    if scale == 0.0 {
        return 0;
    }
    m.rank(1e-10 * scale * n.max(basis.len()) as f64)
}

/// `Λ(t) = λ(Σ tⁱ fᵢ)` and the moment vector `(gibbs·fᵢ)ᵢ`.
fn moment_map(e: &PositiveOperator, basis: &[Potential], t: &[f64]) -> Result<Option<(f64, Vec<f64>)>> {
    let psi = Potential::combination(t, basis);
    let data = perron_at(e, &psi)?;
    let Some(lambda) = data.lambda.finite() else {
        return Ok(None);
    };
    let mut kink = false;
    let weights = subgradient(e, &psi, &data, &mut kink)?;
    let moments = basis.iter().map(|f| dot(&weights, f.values())).collect();
    Ok(Some((lambda, moments)))
}

/// `τ^L(u) = inf_t {Λ(t) − Λ(t₀) − u·(t − t₀)}` over the span `L` of the
/// basis, by damped Newton iteration with a finite-difference Hessian.
pub fn conditional_action(
    e: &PositiveOperator,
    basis: &[Potential],
    t0: &[f64],
    u: &[f64],
) -> Result<ConditionalAction> {
    conditional_action_with(e, basis, t0, u, &NewtonOptions::default())
}

pub fn conditional_action_with(
    e: &PositiveOperator,
    basis: &[Potential],
    t0: &[f64],
    u: &[f64],
    opts: &NewtonOptions,
) -> Result<ConditionalAction> {
    let k = basis.len();
    if k == 0 {
        return Err(Error::Empty("basis"));
    }
    for f in basis {
        f.check_len(e.dim())?;
    }
    for v in [t0, u] {
        if v.len() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                found: v.len(),
            });
        }
    }
    if u.iter().chain(t0).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("moment target or base coordinates"));
    }
    let rank = basis_rank(basis);
    if rank < k {
        return Err(Error::RankDeficient { rank, count: k });
    }

    let (lambda0, _) = moment_map(e, basis, t0)?.ok_or(Error::Nilpotent)?;
    let objective = |lambda: f64, t: &[f64]| {
        lambda - lambda0 - t.iter().zip(t0).zip(u).map(|((a, b), c)| c * (a - b)).sum::<f64>()
    };
    let gradient_at = |t: &[f64]| -> Result<Option<(f64, Vec<f64>)>> {
        Ok(moment_map(e, basis, t)?.map(|(lambda, m)| {
            let g: Vec<f64> = m.iter().zip(u).map(|(a, b)| a - b).collect();
            (objective(lambda, t), g)
        }))
    };

    let mut t = t0.to_vec();
    let (mut value, mut grad) = gradient_at(&t)?.ok_or(Error::Nilpotent)?;
    let mut iterations = 0;
    let mut converged = false;

    while iterations < opts.max_iter {
        let gmax = grad.iter().fold(0.0_f64, |m, g| m.max(g.abs()));
        if gmax < opts.grad_tol {
            converged = true;
            break;
        }
        if norm2(&t) > T_MAX {
            break;
        }
        iterations += 1;

        let hessian = fd_hessian(&gradient_at, &t, opts.hessian_step)?;
        let direction = newton_direction(&hessian, &grad);
        let slope = dot(&grad, &direction);
        let mut accepted = None;
        let mut step = 1.0;
        for _ in 0..MAX_BACKTRACKS {
            let trial: Vec<f64> = t.iter().zip(&direction).map(|(a, d)| a + step * d).collect();
            if let Some((v, g)) = gradient_at(&trial)? {
                if v <= value + ARMIJO_C * step * slope {
                    accepted = Some((trial, v, g));
                    break;
                }
            }
            step *= 0.5;
        }
        match accepted {
            Some((next, v, g)) => {
                t = next;
                value = v;
                grad = g;
            }
            None => {
                converged = gmax < opts.grad_tol.sqrt();
                break;
            }
        }
    }

    let escaped = norm2(&t) > T_MAX;
    let gmax = grad.iter().fold(0.0_f64, |m, g| m.max(g.abs()));
    if escaped && gmax > opts.boundary_tol {
        return Ok(ConditionalAction {
            tau: ExtReal::NegInfinity,
            t_star: t,
            diverged: true,
            boundary: false,
            converged: false,
            iterations,
        });
    }
    Ok(ConditionalAction {
        tau: ExtReal::Finite(value.min(0.0)),
        t_star: t,
        diverged: false,
        boundary: escaped,
        converged: converged || escaped,
        iterations,
    })
}

/// Symmetrized central-difference Jacobian of the gradient.
fn fd_hessian<G>(gradient_at: &G, t: &[f64], rel: f64) -> Result<DMatrix<f64>>
where
    G: Fn(&[f64]) -> Result<Option<(f64, Vec<f64>)>>,
{
    let k = t.len();
    let mut h = DMatrix::zeros(k, k);
    for j in 0..k {
        let step = rel * t[j].abs().max(1.0);
        let mut plus = t.to_vec();
        let mut minus = t.to_vec();
        plus[j] += step;
        minus[j] -= step;
        let (Some((_, gp)), Some((_, gm))) = (gradient_at(&plus)?, gradient_at(&minus)?) else {
            return Err(Error::Nilpotent);
        };
        for i in 0..k {
            h[(i, j)] = (gp[i] - gm[i]) / (2.0 * step);
        }
    }
    Ok((&h + h.transpose()) * 0.5)
}

/// `−H⁺g` with eigenvalues of `H` floored at `1e-8` of the largest, so flat
/// directions take bounded but long steps.
fn newton_direction(h: &DMatrix<f64>, g: &[f64]) -> Vec<f64> {
    let k = g.len();
    let eig = h.clone().symmetric_eigen();
    let top = eig.eigenvalues.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let floor = (1e-8 * top).max(f64::MIN_POSITIVE);
    let grad = DVector::from_column_slice(g);
    let mut d = DVector::zeros(k);
    for (i, &lam) in eig.eigenvalues.iter().enumerate() {
        let v = eig.eigenvectors.column(i);
        d -= v * (v.dot(&grad) / lam.max(floor));
    }
    d.iter().copied().collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AxiomReport {
    pub trials: usize,
    pub monotonicity: f64,
    pub additive_homogeneity: f64,
    pub lipschitz: f64,
    pub convexity: f64,
    /// Only for deterministic systems.
    pub strong_invariance: Option<f64>,
}

impl AxiomReport {
    pub fn worst(&self) -> f64 {
        [
            self.monotonicity,
            self.additive_homogeneity,
            self.lipschitz,
            self.convexity,
            self.strong_invariance.unwrap_or(0.0),
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

fn ext_gap(a: ExtReal, b: ExtReal) -> f64 {
    match (a, b) {
        (ExtReal::Finite(x), ExtReal::Finite(y)) => x - y,
        (ExtReal::NegInfinity, ExtReal::NegInfinity) => 0.0,
        (ExtReal::Finite(_), ExtReal::NegInfinity) => f64::INFINITY,
        (ExtReal::NegInfinity, ExtReal::Finite(_)) => f64::NEG_INFINITY,
    }
}

/// Worst violations of monotonicity, additive homogeneity, the Lipschitz
/// bound, midpoint convexity and (for maps) strong invariance over seeded
/// random potentials with entries in `[-2, 2]`.
pub fn dynamical_potential_axioms(
    e: &PositiveOperator,
    system: &FiniteSystem,
    trials: usize,
    seed: u64,
) -> Result<AxiomReport> {
    let n = e.dim();
    if system.n() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: system.n(),
        });
    }
    let lam = |p: &Potential| pressure_shifted(e, p);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| {
        Potential::new((0..n).map(|_| rng.random_range(lo..hi)).collect()).expect("finite draws")
    };
    let mut report = AxiomReport {
        trials,
        monotonicity: 0.0,
        additive_homogeneity: 0.0,
        lipschitz: 0.0,
        convexity: 0.0,
        strong_invariance: system.alpha().map(|_| 0.0),
    };
    for _ in 0..trials {
        let phi = draw(&mut rng, -2.0, 2.0);
        let psi = draw(&mut rng, -2.0, 2.0);
        let bump = draw(&mut rng, 0.0, 1.0);
        let c = rng.random_range(-3.0..3.0);
        let (lp, lq) = (lam(&phi)?, lam(&psi)?);

        let above = &phi + &bump;
        report.monotonicity = report.monotonicity.max(ext_gap(lp, lam(&above)?));

        let shifted = lam(&phi.shifted(c))?;
        report.additive_homogeneity = report
            .additive_homogeneity
            .max(ext_gap(shifted, lp.add_f64(c)).abs());

        let dist = (&phi - &psi).sup_norm();
        report.lipschitz = report.lipschitz.max(ext_gap(lp, lq).abs() - dist);

        let mid = lam(&(&phi + &psi).scaled(0.5))?;
        let chord = match (lp, lq) {
            (ExtReal::Finite(a), ExtReal::Finite(b)) => ExtReal::Finite(0.5 * (a + b)),
            _ => ExtReal::NegInfinity,
        };
        report.convexity = report.convexity.max(ext_gap(mid, chord));

        if let (Some(alpha), Some(worst)) = (system.alpha(), report.strong_invariance.as_mut()) {
            let lhs = lam(&(&phi + &psi))?;
            let rhs = lam(&(&phi + &psi.compose(alpha)))?;
            *worst = worst.max(ext_gap(lhs, rhs).abs());
        }
    }
    report.monotonicity = report.monotonicity.max(0.0);
    report.lipschitz = report.lipschitz.max(0.0);
    report.convexity = report.convexity.max(0.0);
    Ok(report)
}

/// The Gibbs Markov chain of a subshift and its entropy rate.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MarkovEntropyOracle {
    pub lambda: f64,
    /// Kolmogorov–Sinai entropy `−Σ πᵢ Qᵢⱼ ln Qᵢⱼ`.
    pub entropy: f64,
    pub stationary: Vec<f64>,
    pub chain: Vec<Vec<f64>>,
    /// `|h − (λ − π·φ)|`.
    pub young_residual: f64,
    /// `|h − S(π)|` with `S` from [`dual_entropy`] on the transfer operator.
    pub dual_residual: f64,
}

/// Independent entropy oracle for an irreducible subshift of finite type:
/// `Q[i][j] = A[i][j] e^{φ(j)} v_j / (e^λ v_i)` with `v` the right Perron
/// vector of `A·diag(e^φ)`.
pub fn entropy_oracle_markov(adjacency: &[Vec<f64>], phi: &Potential) -> Result<MarkovEntropyOracle> {
    let system = FiniteSystem::subshift(adjacency)?;
    let n = system.n();
    phi.check_len(n)?;
    let top = phi.values().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let m = DMatrix::from_fn(n, n, |i, j| adjacency[i][j] * (phi[j] - top).exp());
    let data = crate::spectral::perron_data(&PositiveOperator::new(m.clone())?)?;
    if !data.irreducible {
        return Err(Error::Precondition("adjacency matrix is reducible".into()));
    }
    let shifted_lambda = data.lambda.finite().ok_or(Error::Nilpotent)?;
    let rho = shifted_lambda.exp();
    let v = &data.right_vec;
    let chain: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| m[(i, j)] * v[j] / (rho * v[i])).collect())
        .collect();
    let stationary = data.gibbs_weights().to_vec();
    let entropy = -(0..n)
        .map(|i| {
            stationary[i]
                * chain[i]
                    .iter()
                    .filter(|&&q| q > 0.0)
                    .map(|q| q * q.ln())
                    .sum::<f64>()
        })
        .sum::<f64>();
    let lambda = shifted_lambda + top;
    let young_residual = (entropy - (lambda - dot(&stationary, phi.values()))).abs();

    let e = evolution_operator(&system, EvolutionModel::Transfer)?;
    let s = dual_entropy(&e, &Measure::probability(stationary.clone())?, &EntropyOptions::default())?;
    let dual_residual = match s.value {
        ExtReal::Finite(s) => (entropy - s).abs(),
        ExtReal::NegInfinity => f64::INFINITY,
    };
    Ok(MarkovEntropyOracle {
        lambda,
        entropy,
        stationary,
        chain,
        young_residual,
        dual_residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::perron_data;
    use crate::system::weight;

    const LN2: f64 = std::f64::consts::LN_2;

    fn full_shift() -> PositiveOperator {
        FiniteSystem::subshift(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap().operator()
    }

    fn golden_adjacency() -> Vec<Vec<f64>> {
        vec![vec![1.0, 1.0], vec![1.0, 0.0]]
    }

    fn prob(w: &[f64]) -> Measure {
        Measure::probability(w.to_vec()).unwrap()
    }

    fn finite(x: ExtReal) -> f64 {
        x.finite().expect("finite value")
    }

    #[test]
    fn uniform_marginal_of_full_shift_has_entropy_log_two() {
        let r = dual_entropy(&full_shift(), &prob(&[0.5, 0.5]), &EntropyOptions::default()).unwrap();
        assert!(r.converged);
        assert!((finite(r.value) - LN2).abs() < 1e-9);
    }

    #[test]
    fn screening_reasons() {
        let e = full_shift();
        let twice = Measure::positive(vec![1.0, 1.0]).unwrap();
        let r = dual_entropy(&e, &twice, &EntropyOptions::default()).unwrap();
        assert_eq!(r.value, ExtReal::NegInfinity);
        assert_eq!(r.reason.as_deref(), Some("mu(1) != 1"));

        let signed = Measure::signed(vec![1.5, -0.5]).unwrap();
        let r = dual_entropy(&e, &signed, &EntropyOptions::default()).unwrap();
        assert_eq!(r.reason.as_deref(), Some("mu has a negative weight"));

        let cycle = FiniteSystem::deterministic(vec![1, 2, 0]).unwrap().operator();
        let r = dual_entropy(&cycle, &prob(&[0.5, 0.25, 0.25]), &EntropyOptions::default()).unwrap();
        assert_eq!(r.reason.as_deref(), Some("mu is not alpha-invariant"));
        let r = dual_entropy(&cycle, &prob(&[1.0 / 3.0; 3]), &EntropyOptions::default()).unwrap();
        assert!(finite(r.value).abs() < 1e-9);
    }

    #[test]
    fn unreachable_marginal_diverges() {
        let e = FiniteSystem::subshift(&golden_adjacency()).unwrap().operator();
        let r = dual_entropy(&e, &prob(&[0.0, 1.0]), &EntropyOptions::default()).unwrap();
        assert_eq!(r.value, ExtReal::NegInfinity);
        assert!(!r.converged);
    }

    #[test]
    fn young_equality_at_gibbs_measure() {
        let e = PositiveOperator::from_rows(&[vec![0.2, 0.8], vec![0.6, 0.4]]).unwrap();
        let phi = Potential::new(vec![0.3, -0.7]).unwrap();
        let data = perron_data(&weight(&e, &phi).unwrap()).unwrap();
        let gibbs = data.gibbs.clone().unwrap();
        let r = dual_entropy(&e, &gibbs, &EntropyOptions::default()).unwrap();
        let expected = finite(data.lambda) - gibbs.pair(phi.values());
        assert!((finite(r.value) - expected).abs() < 1e-8);
        assert!(finite(action_functional(&e, &phi, &gibbs).unwrap()).abs() < 1e-8);
    }

    #[test]
    fn action_is_negative_off_equilibrium() {
        let e = PositiveOperator::from_rows(&[vec![0.2, 0.8], vec![0.6, 0.4]]).unwrap();
        let phi = Potential::new(vec![0.3, -0.7]).unwrap();
        let other = Potential::new(vec![-1.0, 1.0]).unwrap();
        let mu = perron_data(&weight(&e, &other).unwrap()).unwrap().gibbs.unwrap();
        assert!(finite(action_functional(&e, &phi, &mu).unwrap()) < -1e-3);
    }

    #[test]
    fn action_of_non_invariant_measure_is_minus_infinity() {
        let cycle = FiniteSystem::deterministic(vec![1, 2, 0]).unwrap().operator();
        let phi = Potential::zeros(3);
        let a = action_functional(&cycle, &phi, &prob(&[1.0, 0.0, 0.0])).unwrap();
        assert_eq!(a, ExtReal::NegInfinity);
    }

    #[test]
    fn legendre_gap() {
        let e = PositiveOperator::from_rows(&[vec![0.2, 0.8], vec![0.6, 0.4]]).unwrap();
        let phi = Potential::new(vec![0.3, -0.7]).unwrap();
        let gibbs = perron_data(&weight(&e, &phi).unwrap()).unwrap().gibbs.unwrap();
        assert!(legendre_inversion_check(&e, &phi, &[gibbs]).unwrap().abs() < 1e-6);
        assert!(legendre_inversion_check(&e, &phi, &[prob(&[0.5, 0.5])]).unwrap() > 1e-4);
        assert!(legendre_inversion_check(&e, &phi, &[]).is_err());
    }

    #[test]
    fn binomial_rate_function() {
        let e = full_shift();
        let basis = [Potential::indicator(2, 1)];
        let r = conditional_action(&e, &basis, &[0.0], &[0.75]).unwrap();
        let exact = -(0.75 * (0.75_f64 / 0.5).ln() + 0.25 * (0.25_f64 / 0.5).ln());
        assert!((finite(r.tau) - exact).abs() < 1e-10, "{:?}", r);
        assert!((r.t_star[0] - 3.0_f64.ln()).abs() < 1e-6);

        let at_equilibrium = conditional_action(&e, &basis, &[0.0], &[0.5]).unwrap();
        assert_eq!(at_equilibrium.tau, ExtReal::Finite(0.0));
        assert_eq!(at_equilibrium.t_star, vec![0.0]);
    }

    #[test]
    fn rate_outside_and_on_the_moment_range() {
        let e = full_shift();
        let basis = [Potential::indicator(2, 1)];
        let outside = conditional_action(&e, &basis, &[0.0], &[1.2]).unwrap();
        assert_eq!(outside.tau, ExtReal::NegInfinity);
        assert!(outside.diverged);
        let edge = conditional_action(&e, &basis, &[0.0], &[1.0]).unwrap();
        assert!((finite(edge.tau) + LN2).abs() < 1e-9);
    }

    #[test]
    fn rank_deficient_basis_is_rejected() {
        let e = full_shift();
        let f = Potential::indicator(2, 1);
        let basis = [f.clone(), f.scaled(2.0)];
        assert!(matches!(
            conditional_action(&e, &basis, &[0.0, 0.0], &[0.5, 1.0]),
            Err(Error::RankDeficient { rank: 1, count: 2 })
        ));
    }

    #[test]
    fn full_space_conditional_action_matches_action_functional() {
        let e = PositiveOperator::from_rows(&[
            vec![0.1, 0.6, 0.3],
            vec![0.5, 0.2, 0.3],
            vec![0.3, 0.3, 0.4],
        ])
        .unwrap();
        let phi = Potential::new(vec![0.2, -0.4, 0.1]).unwrap();
        let other = Potential::new(vec![-0.5, 0.6, 0.0]).unwrap();
        let mu = perron_data(&weight(&e, &other).unwrap()).unwrap().gibbs.unwrap();
        let basis: Vec<Potential> = (0..3).map(|i| Potential::indicator(3, i)).collect();
        let ca = conditional_action(&e, &basis, phi.values(), mu.weights()).unwrap();
        let tau = action_functional(&e, &phi, &mu).unwrap();
        assert!((finite(ca.tau) - finite(tau)).abs() < 1e-6);
    }

    #[test]
    fn axioms_hold_for_a_map_and_a_chain() {
        let map = FiniteSystem::deterministic(vec![1, 0, 3, 4, 2, 0]).unwrap();
        let r = dynamical_potential_axioms(&map.operator(), &map, 50, 7).unwrap();
        assert!(r.worst() <= 1e-9, "{r:?}");
        assert!(r.strong_invariance.is_some());

        let chain = FiniteSystem::stochastic(&[vec![0.5, 0.5], vec![0.1, 0.9]]).unwrap();
        let r = dynamical_potential_axioms(&chain.operator(), &chain, 50, 7).unwrap();
        assert!(r.worst() <= 1e-9, "{r:?}");
        assert!(r.strong_invariance.is_none());
    }

    #[test]
    fn markov_oracle_anchors() {
        let full = entropy_oracle_markov(&[vec![1.0, 1.0], vec![1.0, 1.0]], &Potential::zeros(2)).unwrap();
        assert!((full.lambda - LN2).abs() < 1e-12);
        assert!((full.entropy - LN2).abs() < 1e-12);
        assert!((full.stationary[0] - 0.5).abs() < 1e-12);

        let golden = entropy_oracle_markov(&golden_adjacency(), &Potential::zeros(2)).unwrap();
        let expected = ((1.0 + 5.0_f64.sqrt()) / 2.0).ln();
        assert!((golden.lambda - expected).abs() < 1e-12);
        assert!((golden.entropy - expected).abs() < 1e-10);
        assert!(golden.young_residual < 1e-8);
        assert!(golden.dual_residual < 1e-6);
    }

    #[test]
    fn degree_potential_gives_uniform_successor_chain() {
        let a = vec![vec![1.0, 1.0, 0.0], vec![0.0, 1.0, 1.0], vec![1.0, 1.0, 1.0]];
        let phi = Potential::new(vec![-(2.0_f64.ln()), -(2.0_f64.ln()), -(3.0_f64.ln())]).unwrap();
        let oracle = entropy_oracle_markov(&a, &phi).unwrap();
        assert!(oracle.lambda.abs() < 1e-12);
        for (row, adj) in oracle.chain.iter().zip(&a) {
            let degree: f64 = adj.iter().sum();
            for (q, e) in row.iter().zip(adj) {
                assert!((q - e / degree).abs() < 1e-12);
            }
        }
        assert!(oracle.young_residual < 1e-8);
        assert!(oracle.dual_residual < 1e-6);
    }

    #[test]
    fn reducible_adjacency_is_rejected() {
        let a = vec![vec![1.0, 1.0], vec![0.0, 1.0]];
        assert!(entropy_oracle_markov(&a, &Potential::zeros(2)).is_err());
    }
}
