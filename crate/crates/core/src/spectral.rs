//! Spectral potential, Perron eigen-data and equilibrium (Gibbs) measures.
//!
//! The spectral radius of a nonnegative matrix is the largest spectral radius
//! of its irreducible diagonal blocks (strongly connected classes of the
//! nonzero pattern). Each class is solved with Noda's shifted inverse
//! iteration: `x ← (σI − A)⁻¹x`, `σ ← max_i (Ax)_i / x_i`. The shift stays
//! above the Perron root, so `(σI − A)⁻¹` is a positive matrix and periodic
//! classes, which stall plain power iteration, converge just as fast.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::system::{flow_support, weight, FiniteSystem, Measure, PositiveOperator, Potential};
use crate::value::ExtReal;

const NODA_MAX_ITER: usize = 100;
const DOMINANT_REL_TOL: f64 = 1e-12;
const GRADIENT_CHECK_TOL: f64 = 1e-6;

/// A strongly connected class of the nonzero pattern.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Component {
    pub states: Vec<usize>,
    /// Log spectral radius of the diagonal block; `-inf` for a single state
    /// without a self-loop.
    pub log_radius: ExtReal,
    /// Gcd of cycle lengths, 0 for trivial classes.
    pub period: usize,
    pub dominant: bool,
}

/// Perron data of a weighted operator `E_φ`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SpectralData {
    pub lambda: ExtReal,
    /// Right eigenvector `h`, `E_φ h = e^λ h`; empty when nilpotent.
    pub right_vec: Vec<f64>,
    /// Left eigenvector `ν`, `ν E_φ = e^λ ν`, normalized so `ν·h = 1`.
    pub left_vec: Vec<f64>,
    /// `ν ∘ h`, a probability measure.
    pub gibbs: Option<Measure>,
    pub irreducible: bool,
    /// Exactly one class attains the spectral radius, so the dominant
    /// eigenvalue is simple and the Gibbs measure is the unique equilibrium.
    pub simple: bool,
    /// No dominant class is isolated from the others (a Jordan chain); the
    /// returned vectors are restricted to one class and need not satisfy the
    /// eigen relations globally.
    pub degenerate: bool,
    pub components: Vec<Component>,
    pub dominant_class: Option<usize>,
}

impl SpectralData {
    pub fn is_nilpotent(&self) -> bool {
        !self.lambda.is_finite()
    }

    /// The left eigenvector rescaled to total mass one.
    pub fn left_state(&self) -> Vec<f64> {
        let total: f64 = self.left_vec.iter().sum();
        self.left_vec.iter().map(|v| v / total).collect()
    }

    pub fn gibbs_weights(&self) -> &[f64] {
        self.gibbs.as_ref().map_or(&[], Measure::weights)
    }

    /// Relative residuals `‖E_φ h − e^λ h‖/‖e^λ h‖` and the left analogue.
    pub fn eigen_residuals(&self, e_phi: &PositiveOperator) -> (f64, f64) {
        let Some(lambda) = self.lambda.finite() else {
            return (0.0, 0.0);
        };
        let rho = lambda.exp();
        let rel = |got: Vec<f64>, v: &[f64]| {
            let scale = v.iter().fold(0.0_f64, |m, x| m.max(rho * x.abs()));
            got.iter()
                .zip(v)
                .fold(0.0_f64, |m, (g, x)| m.max((g - rho * x).abs()))
                / scale
        };
        (
            rel(e_phi.apply(&self.right_vec), &self.right_vec),
            rel(e_phi.apply_left(&self.left_vec), &self.left_vec),
        )
    }
}

/// `λ = ln ρ(E_φ)`, or `-inf` for nilpotent operators.
pub fn spectral_potential(e_phi: &PositiveOperator) -> Result<ExtReal> {
    check_finite(e_phi)?;
    let classes = strongly_connected(e_phi);
    let mut best = ExtReal::NegInfinity;
    for states in &classes {
        if let Some((rho, _)) = block_perron(e_phi, states) {
            best = best.max(ExtReal::Finite(rho.ln()));
        }
    }
    Ok(best)
}

/// `λ(φ)` for the unweighted operator `e` and a potential.
pub fn pressure(e: &PositiveOperator, phi: &Potential) -> Result<ExtReal> {
    spectral_potential(&weight(e, phi)?)
}

/// Perron data of `E_φ` for an unweighted `e`, evaluated at `φ − max φ` and
/// shifted back so large potentials cannot overflow. The eigenvectors are
/// those of the shifted operator, which differ from `E_φ`'s only in the
/// eigenvalue.
pub fn perron_at(e: &PositiveOperator, phi: &Potential) -> Result<SpectralData> {
    let top = phi.values().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut data = perron_data(&weight(e, &phi.shifted(-top))?)?;
    data.lambda = data.lambda.add_f64(top);
    Ok(data)
}

/// `λ(φ)` evaluated through [`perron_at`]'s shift.
pub fn pressure_shifted(e: &PositiveOperator, phi: &Potential) -> Result<ExtReal> {
    let top = phi.values().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(pressure(e, &phi.shifted(-top))?.add_f64(top))
}

/// Perron eigen-data and the Gibbs measure of `E_φ`.
pub fn perron_data(e_phi: &PositiveOperator) -> Result<SpectralData> {
    check_finite(e_phi)?;
    let n = e_phi.dim();
    let classes = strongly_connected(e_phi);

    let mut components = Vec::with_capacity(classes.len());
    let mut blocks = Vec::with_capacity(classes.len());
    for states in &classes {
        let solved = block_perron(e_phi, states);
        let (log_radius, period) = match &solved {
            Some((rho, _)) => (ExtReal::Finite(rho.ln()), class_period(e_phi, states)),
            None => (ExtReal::NegInfinity, 0),
        };
        components.push(Component {
            states: states.clone(),
            log_radius,
            period,
            dominant: false,
        });
        blocks.push(solved);
    }

    let rho = blocks
        .iter()
        .flatten()
        .map(|(r, _)| *r)
        .fold(0.0_f64, f64::max);
    let irreducible = classes.len() == 1 && blocks[0].is_some();
    if rho == 0.0 {
        return Ok(SpectralData {
            lambda: ExtReal::NegInfinity,
            right_vec: Vec::new(),
            left_vec: Vec::new(),
            gibbs: None,
            irreducible: false,
            simple: false,
            degenerate: false,
            components,
            dominant_class: None,
        });
    }

    let dominant: Vec<usize> = blocks
        .iter()
        .enumerate()
        .filter(|(_, b)| matches!(b, Some((r, _)) if *r >= rho * (1.0 - DOMINANT_REL_TOL)))
        .map(|(c, _)| c)
        .collect();
    for &c in &dominant {
        components[c].dominant = true;
    }
    let simple = dominant.len() == 1;

    let mut class_of = vec![0usize; n];
    for (c, states) in classes.iter().enumerate() {
        for &s in states {
            class_of[s] = c;
        }
    }
    let isolated = |c: usize| {
        let down = reachable(e_phi, &classes[c], false);
        let up = reachable(e_phi, &classes[c], true);
        dominant
            .iter()
            .filter(|&&d| d != c)
            .all(|&d| !down[classes[d][0]] && !up[classes[d][0]])
    };
    let chosen = dominant.iter().copied().find(|&c| isolated(c));
    let degenerate = chosen.is_none();
    let chosen = chosen.unwrap_or(dominant[0]);

    let states = &classes[chosen];
    let rho_c = blocks[chosen].as_ref().map(|(r, _)| *r).unwrap_or(rho);
    let right_c = blocks[chosen].as_ref().map(|(_, v)| v.clone()).unwrap_or_default();
    let left_c = block_perron_left(e_phi, states);

    let mut right = vec![0.0; n];
    let mut left = vec![0.0; n];
    for (k, &s) in states.iter().enumerate() {
        right[s] = right_c[k];
        left[s] = left_c[k];
    }
    if !degenerate {
        let in_class: Vec<bool> = (0..n).map(|s| class_of[s] == chosen).collect();
        let up: Vec<usize> = reachable(e_phi, states, true)
            .into_iter()
            .enumerate()
            .filter(|&(s, r)| r && !in_class[s])
            .map(|(s, _)| s)
            .collect();
        let down: Vec<usize> = reachable(e_phi, states, false)
            .into_iter()
            .enumerate()
            .filter(|&(s, r)| r && !in_class[s])
            .map(|(s, _)| s)
            .collect();
        extend_right(e_phi, rho_c, states, &up, &mut right)?;
        extend_left(e_phi, rho_c, states, &down, &mut left)?;
    }

    let hsum: f64 = right.iter().sum();
    right.iter_mut().for_each(|v| *v /= hsum);
    let pairing: f64 = left.iter().zip(&right).map(|(u, h)| u * h).sum();
    left.iter_mut().for_each(|v| *v /= pairing);
    let gibbs = Measure::normalized(left.iter().zip(&right).map(|(u, h)| u * h).collect())?;

    Ok(SpectralData {
        lambda: ExtReal::Finite(rho_c.ln()),
        right_vec: right,
        left_vec: left,
        gibbs: Some(gibbs),
        irreducible,
        simple,
        degenerate,
        components,
        dominant_class: Some(chosen),
    })
}

/// Solves `(ρI − E_UU) h_U = E_UC h_C` for the states upstream of the class.
fn extend_right(
    e: &PositiveOperator,
    rho: f64,
    class: &[usize],
    up: &[usize],
    right: &mut [f64],
) -> Result<()> {
    if up.is_empty() {
        return Ok(());
    }
    let m = up.len();
    let a = DMatrix::from_fn(m, m, |i, j| {
        let d = if i == j { rho } else { 0.0 };
        d - e.get(up[i], up[j])
    });
    let b = DVector::from_fn(m, |i, _| class.iter().map(|&c| e.get(up[i], c) * right[c]).sum());
    let sol = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::Mismatch("singular upstream system in Perron extension".into()))?;
    for (i, &s) in up.iter().enumerate() {
        right[s] = sol[i].max(0.0);
    }
    Ok(())
}

/// Solves `u_D (ρI − E_DD) = u_C E_CD` for the states downstream of the class.
fn extend_left(
    e: &PositiveOperator,
    rho: f64,
    class: &[usize],
    down: &[usize],
    left: &mut [f64],
) -> Result<()> {
    if down.is_empty() {
        return Ok(());
    }
    let m = down.len();
    let a = DMatrix::from_fn(m, m, |i, j| {
        let d = if i == j { rho } else { 0.0 };
        d - e.get(down[j], down[i])
    });
    let b = DVector::from_fn(m, |i, _| class.iter().map(|&c| left[c] * e.get(c, down[i])).sum());
    let sol = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::Mismatch("singular downstream system in Perron extension".into()))?;
    for (i, &s) in down.iter().enumerate() {
        left[s] = sol[i].max(0.0);
    }
    Ok(())
}

fn check_finite(e: &PositiveOperator) -> Result<()> {
    if e.matrix().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("operator entries"));
    }
    Ok(())
}

/// Strongly connected classes of the nonzero pattern (iterative Tarjan),
/// each sorted, ordered by smallest member.
pub fn strongly_connected(e: &PositiveOperator) -> Vec<Vec<usize>> {
    let n = e.dim();
    let succ: Vec<Vec<usize>> = (0..n).map(|x| e.successors(x).collect()).collect();
    let mut index = vec![usize::MAX; n];
    let mut low = vec![0usize; n];
    let mut on_stack = vec![false; n];
    let mut stack = Vec::new();
    let mut out = Vec::new();
    let mut counter = 0;

    for root in 0..n {
        if index[root] != usize::MAX {
            continue;
        }
        let mut call: Vec<(usize, usize)> = vec![(root, 0)];
        index[root] = counter;
        low[root] = counter;
        counter += 1;
        stack.push(root);
        on_stack[root] = true;
        while let Some(&mut (v, ref mut next)) = call.last_mut() {
            if *next < succ[v].len() {
                let w = succ[v][*next];
                *next += 1;
                if index[w] == usize::MAX {
                    index[w] = counter;
                    low[w] = counter;
                    counter += 1;
                    stack.push(w);
                    on_stack[w] = true;
                    call.push((w, 0));
                } else if on_stack[w] {
                    low[v] = low[v].min(index[w]);
                }
            } else {
                call.pop();
                if let Some(&(parent, _)) = call.last() {
                    low[parent] = low[parent].min(low[v]);
                }
                if low[v] == index[v] {
                    let mut comp = Vec::new();
                    loop {
                        let w = stack.pop().expect("tarjan stack");
                        on_stack[w] = false;
                        comp.push(w);
                        if w == v {
                            break;
                        }
                    }
                    comp.sort_unstable();
                    out.push(comp);
                }
            }
        }
    }
    out.sort_by_key(|c| c[0]);
    out
}

/// States reachable from `from` (forward), or reaching it (`reverse`).
fn reachable(e: &PositiveOperator, from: &[usize], reverse: bool) -> Vec<bool> {
    let n = e.dim();
    let mut seen = vec![false; n];
    let mut queue: Vec<usize> = from.to_vec();
    for &s in from {
        seen[s] = true;
    }
    while let Some(x) = queue.pop() {
        for y in 0..n {
            let edge = if reverse { e.get(y, x) } else { e.get(x, y) };
            if edge > 0.0 && !seen[y] {
                seen[y] = true;
                queue.push(y);
            }
        }
    }
    seen
}

fn class_period(e: &PositiveOperator, states: &[usize]) -> usize {
    let n = e.dim();
    let mut member = vec![false; n];
    for &s in states {
        member[s] = true;
    }
    let mut level = vec![usize::MAX; n];
    level[states[0]] = 0;
    let mut queue = std::collections::VecDeque::from([states[0]]);
    let mut g = 0usize;
    while let Some(x) = queue.pop_front() {
        for y in e.successors(x).filter(|&y| member[y]) {
            if level[y] == usize::MAX {
                level[y] = level[x] + 1;
                queue.push_back(y);
            } else {
                g = gcd(g, (level[x] + 1).abs_diff(level[y]));
            }
        }
    }
    g
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn sub_block(e: &PositiveOperator, states: &[usize]) -> DMatrix<f64> {
    let m = states.len();
    DMatrix::from_fn(m, m, |i, j| e.get(states[i], states[j]))
}

/// Perron root and right vector of an irreducible class, `None` when the
/// class carries no cycle.
fn block_perron(e: &PositiveOperator, states: &[usize]) -> Option<(f64, Vec<f64>)> {
    if states.len() == 1 {
        let a = e.get(states[0], states[0]);
        return (a > 0.0).then(|| (a, vec![1.0]));
    }
    Some(noda(&sub_block(e, states)))
}

fn block_perron_left(e: &PositiveOperator, states: &[usize]) -> Vec<f64> {
    if states.len() == 1 {
        return vec![1.0];
    }
    noda(&sub_block(e, states).transpose()).1
}

/// Collatz–Wielandt bounds `min/max (Ax)_i / x_i`.
fn cw_bounds(a: &DMatrix<f64>, x: &DVector<f64>) -> (f64, f64) {
    let y = a * x;
    let mut lo = f64::INFINITY;
    let mut hi = 0.0_f64;
    for i in 0..x.len() {
        let r = y[i] / x[i];
        lo = lo.min(r);
        hi = hi.max(r);
    }
    (lo, hi)
}

/// Noda iteration for an irreducible nonnegative matrix of size ≥ 2.
fn noda(a: &DMatrix<f64>) -> (f64, Vec<f64>) {
    let m = a.nrows();
    let mut x = DVector::from_element(m, 1.0 / m as f64);
    let (lo, mut hi) = cw_bounds(a, &x);
    let mut best = (lo, hi, x.clone());
    let mut stalled = 0;
    for _ in 0..NODA_MAX_ITER {
        if best.1 - best.0 <= 4.0 * f64::EPSILON * best.1 || stalled >= 3 {
            break;
        }
        let shifted = DMatrix::from_fn(m, m, |i, j| if i == j { hi } else { 0.0 }) - a;
        let Some(z) = shifted.lu().solve(&x) else {
            break;
        };
        let z = z.map(f64::abs);
        let norm = z.sum();
        if !(norm.is_finite() && norm > 0.0) || z.iter().any(|&v| v == 0.0) {
            break;
        }
        x = z / norm;
        let (lo2, hi2) = cw_bounds(a, &x);
        stalled = if hi2 < hi { 0 } else { stalled + 1 };
        hi = hi2.min(hi);
        if hi2 - lo2 < best.1 - best.0 {
            best = (lo2, hi2, x.clone());
        }
    }
    let (lo, hi, x) = best;
    (0.5 * (lo + hi), x.iter().copied().collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Plus,
    Minus,
}

const FD_STEPS: [f64; 3] = [1e-3, 5e-4, 2.5e-4];

/// One-sided derivative of `t ↦ λ(φ + tψ)` at 0 by Richardson-extrapolated
/// finite differences. When the dominant eigenvalue is simple the result is
/// cross-checked against `gibbs · ψ`.
pub fn directional_derivative(
    e: &PositiveOperator,
    phi: &Potential,
    psi: &Potential,
    side: Side,
) -> Result<f64> {
    psi.check_len(e.dim())?;
    let data = perron_data(&weight(e, phi)?)?;
    let base = data.lambda.finite().ok_or(Error::Nilpotent)?;
    let sign = match side {
        Side::Plus => 1.0,
        Side::Minus => -1.0,
    };
    let mut quotients = [0.0; 3];
    for (q, &t) in quotients.iter_mut().zip(&FD_STEPS) {
        let moved = pressure(e, &phi.axpy(sign * t, psi))?
            .finite()
            .ok_or(Error::Nilpotent)?;
        *q = sign * (moved - base) / t;
    }
    let r1a = 2.0 * quotients[1] - quotients[0];
    let r1b = 2.0 * quotients[2] - quotients[1];
    let value = (4.0 * r1b - r1a) / 3.0;

    if data.simple && !data.degenerate {
        let analytic = data.gibbs.as_ref().map_or(0.0, |g| g.pair(psi.values()));
        if (analytic - value).abs() > GRADIENT_CHECK_TOL {
            return Err(Error::Mismatch(format!(
                "finite-difference derivative {value} disagrees with gibbs pairing {analytic}"
            )));
        }
    }
    Ok(value)
}

/// Maximum cycle mean of `φ` along cycles of `α`, by Karp's recurrence on the
/// functional graph `x → α(x)` with edge weight `φ(x)`.
pub fn max_cycle_mean(system: &FiniteSystem, phi: &Potential) -> Result<f64> {
    let alpha = system.alpha().ok_or_else(|| {
        Error::Precondition(format!(
            "max cycle mean needs deterministic dynamics, system is {}",
            system.dynamics().kind_name()
        ))
    })?;
    phi.check_len(system.n())?;
    let edges: Vec<(usize, usize, f64)> = alpha
        .iter()
        .enumerate()
        .map(|(x, &y)| (x, y, phi[x]))
        .collect();
    Ok(karp_max_cycle_mean(system.n(), &edges).expect("a functional graph always has a cycle"))
}

/// Karp's maximum mean cycle on a digraph with `n` vertices; `None` when the
/// graph is acyclic.
pub fn karp_max_cycle_mean(n: usize, edges: &[(usize, usize, f64)]) -> Option<f64> {
    // best[k][v]: heaviest walk with exactly k edges ending at v, from any start
    let mut best = vec![vec![f64::NEG_INFINITY; n]; n + 1];
    best[0].iter_mut().for_each(|v| *v = 0.0);
    for k in 1..=n {
        let (done, rest) = best.split_at_mut(k);
        let prev = &done[k - 1];
        let cur = &mut rest[0];
        for &(u, v, w) in edges {
            if prev[u] > f64::NEG_INFINITY {
                cur[v] = cur[v].max(prev[u] + w);
            }
        }
    }
    let mut answer: Option<f64> = None;
    for v in 0..n {
        if best[n][v] == f64::NEG_INFINITY {
            continue;
        }
        let worst = (0..n)
            .filter(|&k| best[k][v] > f64::NEG_INFINITY)
            .map(|k| (best[n][v] - best[k][v]) / (n - k) as f64)
            .fold(f64::INFINITY, f64::min);
        answer = Some(answer.map_or(worst, |a| a.max(worst)));
    }
    answer
}

/// Worst violation of `g(t) ≤ (1−t)g(0) + t g(1)` for
/// `g(t) = ln ‖e^{(1−t)φ₀ + tφ₁} E‖` on an even grid of `samples` points.
pub fn log_norm_convexity_check(
    e: &PositiveOperator,
    phi0: &Potential,
    phi1: &Potential,
    samples: usize,
) -> Result<f64> {
    phi0.check_len(e.dim())?;
    phi1.check_len(e.dim())?;
    let g = |t: f64| -> Result<f64> {
        let p = phi0.scaled(1.0 - t).axpy(t, phi1);
        Ok(weight(e, &p)?.max_row_sum().ln())
    };
    let (g0, g1) = (g(0.0)?, g(1.0)?);
    if !g0.is_finite() || !g1.is_finite() {
        return Ok(0.0);
    }
    let samples = samples.max(2);
    let mut worst = 0.0_f64;
    for k in 0..samples {
        let t = k as f64 / (samples - 1) as f64;
        worst = worst.max(g(t)? - ((1.0 - t) * g0 + t * g1));
    }
    Ok(worst)
}

/// The eigen-state obtained from the resolvent family.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResolventEigenstate {
    /// Limit of the normalized functionals as `θ ↗ 1`.
    pub state: Measure,
    /// Coordinate whose functional attains `‖R_θ‖` at the largest `θ`.
    pub anchor: usize,
    /// `ν_θ` for every `θ` in the schedule.
    pub per_theta: Vec<Vec<f64>>,
    /// `‖ν b − ν‖_∞ / ‖ν‖_∞` with `b = E_φ / ρ`.
    pub eigen_residual: f64,
}

/// Left eigen-state built from `R_θ = Σ θⁱ bⁱ = (I − θb)⁻¹`, `b = E_φ/ρ(E_φ)`.
///
/// For each `θ` the coordinate functional `δ_x` maximizing `R_θ 1` attains
/// `‖R_θ‖`, and `ν_θ = δ_x R_θ / ‖R_θ‖`. The limit `θ ↗ 1` is taken by
/// polynomial extrapolation in `1 − θ` over the trailing run of schedule
/// points that share the same maximizing coordinate.
pub fn resolvent_eigenstate(e_phi: &PositiveOperator, thetas: &[f64]) -> Result<ResolventEigenstate> {
    if thetas.is_empty() {
        return Err(Error::Empty("theta schedule"));
    }
    if thetas.iter().any(|&t| !(t > 0.0 && t < 1.0)) {
        return Err(Error::Domain("every theta must lie in (0, 1)".into()));
    }
    if thetas.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Domain("theta schedule must be strictly increasing".into()));
    }
    let lambda = spectral_potential(e_phi)?.finite().ok_or(Error::Nilpotent)?;
    let n = e_phi.dim();
    let b = e_phi.matrix() / lambda.exp();

    let mut per_theta = Vec::with_capacity(thetas.len());
    let mut anchors = Vec::with_capacity(thetas.len());
    for &theta in thetas {
        let m = DMatrix::<f64>::identity(n, n) - &b * theta;
        let lu = m.clone().lu();
        let row_sums = lu
            .solve(&DVector::from_element(n, 1.0))
            .ok_or_else(|| Error::Mismatch("I − θb is singular".into()))?;
        let anchor = argmax(row_sums.as_slice());
        let mut unit = DVector::zeros(n);
        unit[anchor] = 1.0;
        let row = m
            .transpose()
            .lu()
            .solve(&unit)
            .ok_or_else(|| Error::Mismatch("I − θb is singular".into()))?;
        let norm = row_sums[anchor];
        per_theta.push(row.iter().map(|v| v / norm).collect::<Vec<f64>>());
        anchors.push(anchor);
    }

    let anchor = *anchors.last().expect("nonempty schedule");
    let start = anchors.iter().rposition(|&a| a != anchor).map_or(0, |i| i + 1);
    let nodes: Vec<f64> = thetas[start..].iter().map(|t| 1.0 - t).collect();
    let mut limit = neville_at_zero(&nodes, &per_theta[start..]);
    limit.iter_mut().for_each(|v| *v = v.max(0.0));
    let state = Measure::normalized(limit)?;

    let nu = state.weights();
    let nub: Vec<f64> = (0..n).map(|j| (0..n).map(|i| nu[i] * b[(i, j)]).sum()).collect();
    let scale = nu.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let eigen_residual = nub
        .iter()
        .zip(nu)
        .fold(0.0_f64, |m, (a, v)| m.max((a - v).abs()))
        / scale;

    Ok(ResolventEigenstate {
        state,
        anchor,
        per_theta,
        eigen_residual,
    })
}

/// First index attaining the maximum, treating relative differences below
/// `1e-12` as ties.
fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] + 1e-12 * v[best].abs() {
            best = i;
        }
    }
    best
}

/// Componentwise polynomial extrapolation of `values(s)` to `s = 0`.
fn neville_at_zero(nodes: &[f64], values: &[Vec<f64>]) -> Vec<f64> {
    let k = nodes.len();
    let mut table: Vec<Vec<f64>> = values.to_vec();
    for level in 1..k {
        for i in 0..k - level {
            let (si, sj) = (nodes[i], nodes[i + level]);
            let lower = table[i + 1].clone();
            for (t, l) in table[i].iter_mut().zip(&lower) {
                // P(0) = (s_j P_i − s_i P_{i+1}) / (s_j − s_i)
                *t = (sj * *t - si * l) / (sj - si);
            }
        }
    }
    table.swap_remove(0)
}

/// Support restricted to the states of a dominant component; used by reports.
pub fn dominant_support(data: &SpectralData) -> Vec<usize> {
    data.dominant_class
        .map(|c| data.components[c].states.clone())
        .unwrap_or_default()
}

/// `true` when the support of `E` is all of the phase space.
pub fn is_essential(e: &PositiveOperator) -> bool {
    flow_support(e).len() == e.dim()
}
