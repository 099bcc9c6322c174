//! Empirical measures, tilted path distributions and exact or sampled
//! probabilities of law-of-large-numbers and large-deviation events.
//!
//! A left functional `ν` and a potential `φ` weight the length-`n` words
//! along the nonzero pattern of `E` by
//!
//! ```text
//! w(x₁…xₙ) = ν(x₁) · Π_k e^{φ(x_k)} · Π_{k≥2} E[x_{k−1}][x_k]
//! ```
//!
//! and `P_n` is `w` normalized. Events are decided on observables snapped to
//! a grid, so the dynamic program over (state, integer running sum) is exact
//! relative to the snapped observable.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::convex::conditional_action;
use crate::error::{Error, Result};
use crate::spectral::perron_data;
use crate::system::{weight, Dynamics, FiniteSystem, Measure, PositiveOperator, Potential};
use crate::value::ExtReal;

/// Largest word count for which enumeration is allowed.
pub const ENUMERATION_LIMIT: f64 = 1e6;
/// Largest number of (state, sum) cells the dynamic program may hold.
pub const DP_CELL_LIMIT: usize = 5_000_000;
/// Two-sided 99% normal quantile.
pub const Z_99: f64 = 2.575_829_303_548_9;
const MC_CHUNK: usize = 1024;

/// Starting point of an orbit or an explicit word.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Orbit<'a> {
    State(usize),
    Word(&'a [usize]),
}

/// `δ_{x,n}`: the fraction of the first `n` symbols spent in each state.
pub fn empirical_measure(system: &FiniteSystem, x0: Orbit<'_>, n: usize) -> Result<Measure> {
    if n == 0 {
        return Err(Error::Domain("horizon must be at least 1".into()));
    }
    let states = system.n();
    let word: Vec<usize> = match x0 {
        Orbit::State(x) => {
            let alpha = system.alpha().ok_or_else(|| {
                Error::Precondition(format!(
                    "a starting state determines an orbit only for deterministic dynamics, system is {}",
                    system.dynamics().kind_name()
                ))
            })?;
            if x >= states {
                return Err(Error::Domain(format!("state {x} is outside [0, {states})")));
            }
            std::iter::successors(Some(x), |&y| Some(alpha[y])).take(n).collect()
        }
        Orbit::Word(w) => {
            if w.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: w.len(),
                });
            }
            if let Some(&bad) = w.iter().find(|&&s| s >= states) {
                return Err(Error::Domain(format!("state {bad} is outside [0, {states})")));
            }
            for (k, pair) in w.windows(2).enumerate() {
                if !system.allows(pair[0], pair[1]) {
                    return Err(Error::InadmissibleWord {
                        from: pair[0],
                        to: pair[1],
                        position: k,
                    });
                }
            }
            w.to_vec()
        }
    };
    let mut counts = vec![0.0; states];
    for &s in &word {
        counts[s] += 1.0;
    }
    Measure::probability(counts.into_iter().map(|c| c / n as f64).collect())
}

/// One eigen-state of the mixture `ν = Σ νᵢ`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SensitiveComponent {
    pub phi: Potential,
    /// `2^{-i}`, the mass of `left_eigvec`.
    pub weight: f64,
    pub lambda: f64,
    pub left_eigvec: Vec<f64>,
}

/// A state sensitive to every potential in a list: the sum of left Perron
/// vectors of `E_{φᵢ}` normalized to masses `2^{-i}`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SensitiveState {
    pub components: Vec<SensitiveComponent>,
}

impl SensitiveState {
    pub fn new(e: &PositiveOperator, potentials: &[Potential]) -> Result<Self> {
        if potentials.is_empty() {
            return Err(Error::Empty("potential list"));
        }
        let mut components = Vec::with_capacity(potentials.len());
        for (i, phi) in potentials.iter().enumerate() {
            let data = perron_data(&weight(e, phi)?)?;
            let lambda = data.lambda.finite().ok_or(Error::Nilpotent)?;
            let mass = 0.5_f64.powi(i as i32 + 1);
            let left_eigvec = data.left_state().into_iter().map(|v| v * mass).collect();
            components.push(SensitiveComponent {
                phi: phi.clone(),
                weight: mass,
                lambda,
                left_eigvec,
            });
        }
        Ok(Self { components })
    }

    /// The mixture as a single left functional.
    pub fn functional(&self) -> Vec<f64> {
        let n = self.components[0].left_eigvec.len();
        let mut out = vec![0.0; n];
        for c in &self.components {
            for (o, v) in out.iter_mut().zip(&c.left_eigvec) {
                *o += v;
            }
        }
        out
    }

    /// `P_n(f)` for `f` read on the first symbol, evaluated component by
    /// component: `Σᵢ wᵢ Pᵢ(f)` where `Pᵢ` is the tilted distribution under
    /// `νᵢ` alone and `wᵢ ∝ νᵢ(E_φ-tail)`, with the weights formed in the log
    /// domain.
    pub fn termwise_expectation(&self, e: &PositiveOperator, phi: &Potential, n: usize, f: &[f64]) -> Result<f64> {
        let (tail, log_scale) = first_symbol_tail(e, phi, n)?;
        if f.len() != tail.len() {
            return Err(Error::DimensionMismatch {
                expected: tail.len(),
                found: f.len(),
            });
        }
        let mut logs = Vec::with_capacity(self.components.len());
        let mut means = Vec::with_capacity(self.components.len());
        for c in &self.components {
            let den: f64 = c.left_eigvec.iter().zip(&tail).map(|(v, t)| v * t).sum();
            if den <= 0.0 {
                continue;
            }
            let num: f64 = c
                .left_eigvec
                .iter()
                .zip(&tail)
                .zip(f)
                .map(|((v, t), g)| v * t * g)
                .sum();
            logs.push(den.ln() + log_scale);
            means.push(num / den);
        }
        if logs.is_empty() {
            return Err(Error::ZeroNormalizer(n));
        }
        let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = logs.iter().map(|l| (l - top).exp()).collect();
        let total: f64 = weights.iter().sum();
        Ok(weights.iter().zip(&means).map(|(w, m)| w * m).sum::<f64>() / total)
    }
}

/// `T(x) = e^{φ(x)} Σ_{x₂…xₙ} Π e^{φ(x_k)} E[x_{k−1}][x_k]`, rescaled to unit
/// maximum, with the log of the scale.
fn first_symbol_tail(e: &PositiveOperator, phi: &Potential, n: usize) -> Result<(Vec<f64>, f64)> {
    if n == 0 {
        return Err(Error::Domain("horizon must be at least 1".into()));
    }
    phi.check_len(e.dim())?;
    let states = e.dim();
    let mut log_scale = 0.0;
    let mut v: Vec<f64> = phi.values().iter().map(|p| p.exp()).collect();
    for _ in 1..n {
        let next: Vec<f64> = (0..states)
            .map(|x| phi[x].exp() * (0..states).map(|y| e.get(x, y) * v[y]).sum::<f64>())
            .collect();
        let top = next.iter().copied().fold(0.0_f64, f64::max);
        if top == 0.0 {
            return Ok((next, f64::NEG_INFINITY));
        }
        log_scale += top.ln();
        v = next.into_iter().map(|t| t / top).collect();
    }
    Ok((v, log_scale))
}

fn check_functional(nu: &[f64], n: usize) -> Result<()> {
    if nu.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: nu.len(),
        });
    }
    if nu.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("left functional"));
    }
    if nu.iter().any(|&v| v < 0.0) {
        return Err(Error::InvalidMeasure("left functional has a negative weight".into()));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum SupportKind {
    StartingPoints,
    Cylinders,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub enum AtomId {
    State(usize),
    Word(Vec<usize>),
}

/// A fully enumerated `P_n`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EmpiricalDistribution {
    pub n: usize,
    pub support_kind: SupportKind,
    pub atoms: Vec<(AtomId, f64)>,
    /// `ln Σ w` over all atoms.
    pub log_normalizer: f64,
}

impl EmpiricalDistribution {
    pub fn total(&self) -> f64 {
        self.atoms.iter().map(|(_, w)| w).sum()
    }
}

/// `ln Σ_words w(word)` by scaled matrix products.
pub fn log_normalizer(e: &PositiveOperator, phi: &Potential, nu: &[f64], n: usize) -> Result<ExtReal> {
    check_functional(nu, e.dim())?;
    let (tail, log_scale) = first_symbol_tail(e, phi, n)?;
    let z: f64 = nu.iter().zip(&tail).map(|(a, b)| a * b).sum();
    Ok(if z > 0.0 && log_scale.is_finite() {
        ExtReal::Finite(z.ln() + log_scale)
    } else {
        ExtReal::NegInfinity
    })
}

fn word_count(states: usize, n: usize) -> f64 {
    (states as f64).powi(n as i32)
}

/// The tilted distribution `P_n`. Cylinders are enumerated only when there
/// are at most [`ENUMERATION_LIMIT`] words; starting points need a map.
pub fn tilted_distribution(
    e: &PositiveOperator,
    phi: &Potential,
    nu: &[f64],
    n: usize,
    support: SupportKind,
) -> Result<EmpiricalDistribution> {
    let states = e.dim();
    check_functional(nu, states)?;
    phi.check_len(states)?;
    if n == 0 {
        return Err(Error::Domain("horizon must be at least 1".into()));
    }
    let atoms;
    match support {
        SupportKind::StartingPoints => {
            let alpha = functional_graph(e).ok_or_else(|| {
                Error::Precondition("starting points need a composition operator".into())
            })?;
            let mut logs = Vec::with_capacity(states);
            for x in 0..states {
                let orbit_sum: f64 = std::iter::successors(Some(x), |&y| Some(alpha[y]))
                    .take(n)
                    .map(|y| phi[y])
                    .sum();
                let l = if nu[x] > 0.0 { nu[x].ln() + orbit_sum } else { f64::NEG_INFINITY };
                logs.push((AtomId::State(x), l));
            }
            atoms = normalize_logs(logs, n, &mut 0.0)?;
        }
        SupportKind::Cylinders => {
            if word_count(states, n) > ENUMERATION_LIMIT {
                return Err(Error::Infeasible(format!(
                    "{states}^{n} words exceed the enumeration limit"
                )));
            }
            let mut logs = Vec::new();
            for_each_word(e, phi, nu, n, |word, l| logs.push((AtomId::Word(word.to_vec()), l)));
            let mut log_z = 0.0;
            atoms = normalize_logs(logs, n, &mut log_z)?;
            return Ok(EmpiricalDistribution {
                n,
                support_kind: support,
                atoms,
                log_normalizer: log_z,
            });
        }
    }
    let log_normalizer = log_normalizer(e, phi, nu, n)?.finite().ok_or(Error::ZeroNormalizer(n))?;
    Ok(EmpiricalDistribution {
        n,
        support_kind: support,
        atoms,
        log_normalizer,
    })
}

fn normalize_logs(logs: Vec<(AtomId, f64)>, n: usize, log_z: &mut f64) -> Result<Vec<(AtomId, f64)>> {
    let z = log_sum_exp(logs.iter().map(|(_, l)| *l));
    if z == f64::NEG_INFINITY {
        return Err(Error::ZeroNormalizer(n));
    }
    *log_z = z;
    Ok(logs
        .into_iter()
        .filter(|(_, l)| *l > f64::NEG_INFINITY)
        .map(|(id, l)| (id, (l - z).exp()))
        .collect())
}

/// Calls `visit(word, ln w(word))` for every word with positive weight.
fn for_each_word<F: FnMut(&[usize], f64)>(e: &PositiveOperator, phi: &Potential, nu: &[f64], n: usize, mut visit: F) {
    let states = e.dim();
    let log_e = log_edges(e, phi);
    let mut word = Vec::with_capacity(n);
    let mut logs = Vec::with_capacity(n);
    fn rec<F: FnMut(&[usize], f64)>(
        log_e: &[Vec<(usize, f64)>],
        n: usize,
        word: &mut Vec<usize>,
        logs: &mut Vec<f64>,
        visit: &mut F,
    ) {
        if word.len() == n {
            visit(word, *logs.last().expect("nonempty word"));
            return;
        }
        let x = *word.last().expect("nonempty word");
        let base = *logs.last().expect("nonempty word");
        for &(y, w) in &log_e[x] {
            word.push(y);
            logs.push(base + w);
            rec(log_e, n, word, logs, visit);
            word.pop();
            logs.pop();
        }
    }
    for x in 0..states {
        if nu[x] > 0.0 {
            word.push(x);
            logs.push(nu[x].ln() + phi[x]);
            rec(&log_e, n, &mut word, &mut logs, &mut visit);
            word.pop();
            logs.pop();
        }
    }
}

/// `(y, ln E[x][y] + φ(y))` for every nonzero entry of row `x`.
fn log_edges(e: &PositiveOperator, phi: &Potential) -> Vec<Vec<(usize, f64)>> {
    (0..e.dim())
        .map(|x| e.successors(x).map(|y| (y, e.get(x, y).ln() + phi[y])).collect())
        .collect()
}

fn functional_graph(e: &PositiveOperator) -> Option<Vec<usize>> {
    (0..e.dim())
        .map(|x| {
            let mut succ = e.successors(x);
            match (succ.next(), succ.next()) {
                (Some(y), None) => Some(y),
                _ => None,
            }
        })
        .collect()
}

fn log_sum_exp<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let v: Vec<f64> = values.into_iter().collect();
    let top = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if top == f64::NEG_INFINITY {
        return top;
    }
    top + v.iter().map(|x| (x - top).exp()).sum::<f64>().ln()
}

fn lse_into(acc: &mut f64, v: f64) {
    if v == f64::NEG_INFINITY {
        return;
    }
    if *acc == f64::NEG_INFINITY {
        *acc = v;
    } else if *acc >= v {
        *acc += (v - *acc).exp().ln_1p();
    } else {
        *acc = v + (*acc - v).exp().ln_1p();
    }
}

/// `(1/n) ln ν(E_φⁿ 1) − λ(φ)` per horizon, for `ν` rescaled to mass one.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SensitivityReport {
    pub residuals: Vec<(usize, ExtReal)>,
    /// Every residual is finite.
    pub sensitive: bool,
}

pub fn sensitivity_check(e: &PositiveOperator, phi: &Potential, nu: &[f64], n_grid: &[usize]) -> Result<SensitivityReport> {
    check_functional(nu, e.dim())?;
    let e_phi = weight(e, phi)?;
    let lambda = perron_data(&e_phi)?.lambda.finite().ok_or(Error::Nilpotent)?;
    let mass: f64 = nu.iter().sum();
    if mass <= 0.0 {
        return Err(Error::InvalidMeasure("left functional has zero mass".into()));
    }
    let nu: Vec<f64> = nu.iter().map(|v| v / mass).collect();
    let mut grid = n_grid.to_vec();
    grid.sort_unstable();
    grid.dedup();

    let mut residuals = Vec::with_capacity(grid.len());
    let mut v = vec![1.0; e.dim()];
    let mut log_scale = 0.0;
    let mut done = 0;
    let mut dead = false;
    for &n in &grid {
        if n == 0 {
            return Err(Error::Domain("horizons must be at least 1".into()));
        }
        while done < n && !dead {
            v = e_phi.apply(&v);
            let top = v.iter().copied().fold(0.0_f64, f64::max);
            if top == 0.0 {
                dead = true;
                break;
            }
            log_scale += top.ln();
            v.iter_mut().for_each(|x| *x /= top);
            done += 1;
        }
        let pairing: f64 = nu.iter().zip(&v).map(|(a, b)| a * b).sum();
        let r = if dead || pairing <= 0.0 {
            ExtReal::NegInfinity
        } else {
            ExtReal::Finite((pairing.ln() + log_scale) / n as f64 - lambda)
        };
        residuals.push((n, r));
    }
    let sensitive = residuals.iter().all(|(_, r)| r.is_finite());
    Ok(SensitivityReport { residuals, sensitive })
}

/// Observables snapped to integer multiples of a grid step and reduced by
/// their gcd, so running sums are integers.
#[derive(Clone, Debug)]
struct Snapped {
    /// `offsets[i][x]`: reduced integer value of observable `i` at state `x`.
    offsets: Vec<Vec<i64>>,
    /// Snapped minimum of observable `i`.
    base: Vec<f64>,
    /// Value of one integer unit of observable `i`.
    unit: Vec<f64>,
}

impl Snapped {
    fn new(observables: &[&[f64]], grid: f64) -> Result<Self> {
        if !(grid > 0.0 && grid.is_finite()) {
            return Err(Error::Domain("tolerance must be positive".into()));
        }
        let mut offsets = Vec::with_capacity(observables.len());
        let mut base = Vec::with_capacity(observables.len());
        let mut unit = Vec::with_capacity(observables.len());
        for f in observables {
            if f.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("observable"));
            }
            let k: Vec<i64> = f.iter().map(|v| (v / grid).round() as i64).collect();
            let lo = *k.iter().min().expect("nonempty observable");
            let d = k.iter().fold(0_i64, |g, &v| gcd(g, v - lo)).max(1);
            offsets.push(k.iter().map(|v| (v - lo) / d).collect());
            base.push(lo as f64 * grid);
            unit.push(d as f64 * grid);
        }
        Ok(Self { offsets, base, unit })
    }

    fn key(&self, x: usize) -> Vec<i64> {
        self.offsets.iter().map(|o| o[x]).collect()
    }

    fn means(&self, sums: &[i64], n: usize) -> Vec<f64> {
        sums.iter()
            .zip(self.base.iter().zip(&self.unit))
            .map(|(&s, (b, u))| b + u * s as f64 / n as f64)
            .collect()
    }
}

fn gcd(a: i64, b: i64) -> i64 {
    let (mut a, mut b) = (a.abs(), b.abs());
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// An event on the empirical averages of the snapped observables.
#[derive(Clone, Debug, PartialEq)]
enum Event {
    /// `|δ(f) − a| > ε` for the single observable.
    Deviation { a: f64, eps: f64 },
    /// `|δ(fᵢ) − uᵢ| < δ` for every observable.
    Window { u: Vec<f64>, delta: f64 },
}

impl Event {
    fn contains(&self, means: &[f64]) -> bool {
        match self {
            Event::Deviation { a, eps } => {
                let tie = 1e-9 * eps.max(1.0);
                (means[0] - a).abs() > eps + tie
            }
            Event::Window { u, delta } => {
                let tie = 1e-9 * delta.max(1.0);
                means.iter().zip(u).all(|(m, v)| (m - v).abs() < delta - tie)
            }
        }
    }
}

/// How to evaluate an event probability.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Mode {
    ExactDp,
    Enumerate,
    MonteCarlo { seed: u64, samples: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Estimate {
    pub probability: f64,
    /// `ln` of the probability; `-inf` for impossible events.
    pub log_probability: ExtReal,
    /// Wilson 99% bounds for Monte Carlo, the estimate itself otherwise.
    pub lower: f64,
    pub upper: f64,
    pub mode: Mode,
}

impl Estimate {
    fn exact(log_p: f64, mode: Mode) -> Self {
        let p = log_p.exp();
        Self {
            probability: p,
            log_probability: ExtReal::from_log(log_p),
            lower: p,
            upper: p,
            mode,
        }
    }
}

struct Problem<'a> {
    e: &'a PositiveOperator,
    phi: &'a Potential,
    nu: &'a [f64],
    snapped: Snapped,
    event: Event,
    n: usize,
}

impl Problem<'_> {
    fn check(&self) -> Result<()> {
        check_functional(self.nu, self.e.dim())?;
        self.phi.check_len(self.e.dim())?;
        if self.n == 0 {
            return Err(Error::Domain("horizon must be at least 1".into()));
        }
        Ok(())
    }

    fn solve(&self, mode: Mode) -> Result<Estimate> {
        self.check()?;
        match mode {
            Mode::ExactDp => self.dp(),
            Mode::Enumerate => self.enumerate(),
            Mode::MonteCarlo { seed, samples } => self.monte_carlo(seed, samples),
        }
    }

    /// Log masses of (final state, running sums) after `n` symbols.
    fn dp(&self) -> Result<Estimate> {
        let states = self.e.dim();
        let log_e = log_edges(self.e, self.phi);
        let mut layer: Vec<BTreeMap<Vec<i64>, f64>> = vec![BTreeMap::new(); states];
        for x in 0..states {
            if self.nu[x] > 0.0 {
                layer[x].insert(self.snapped.key(x), self.nu[x].ln() + self.phi[x]);
            }
        }
        for _ in 1..self.n {
            let mut next: Vec<BTreeMap<Vec<i64>, f64>> = vec![BTreeMap::new(); states];
            for (x, cells) in layer.iter().enumerate() {
                for (key, &mass) in cells {
                    for &(y, w) in &log_e[x] {
                        let moved: Vec<i64> = key
                            .iter()
                            .zip(&self.snapped.offsets)
                            .map(|(k, o)| k + o[y])
                            .collect();
                        lse_into(next[y].entry(moved).or_insert(f64::NEG_INFINITY), mass + w);
                    }
                }
            }
            let cells: usize = next.iter().map(BTreeMap::len).sum();
            if cells > DP_CELL_LIMIT {
                return Err(Error::Infeasible(format!(
                    "dynamic program needs {cells} cells, limit is {DP_CELL_LIMIT}; use a coarser tolerance"
                )));
            }
            layer = next;
        }
        let mut total = f64::NEG_INFINITY;
        let mut inside = f64::NEG_INFINITY;
        for cells in &layer {
            for (key, &mass) in cells {
                lse_into(&mut total, mass);
                if self.event.contains(&self.snapped.means(key, self.n)) {
                    lse_into(&mut inside, mass);
                }
            }
        }
        if total == f64::NEG_INFINITY {
            return Err(Error::ZeroNormalizer(self.n));
        }
        Ok(Estimate::exact(inside - total, Mode::ExactDp))
    }

    fn enumerate(&self) -> Result<Estimate> {
        let states = self.e.dim();
        if word_count(states, self.n) > ENUMERATION_LIMIT {
            return Err(Error::Infeasible(format!(
                "{states}^{} words exceed the enumeration limit",
                self.n
            )));
        }
        let mut total = f64::NEG_INFINITY;
        let mut inside = f64::NEG_INFINITY;
        let k = self.snapped.offsets.len();
        for_each_word(self.e, self.phi, self.nu, self.n, |word, l| {
            let mut sums = vec![0_i64; k];
            for &x in word {
                for (s, o) in sums.iter_mut().zip(&self.snapped.offsets) {
                    *s += o[x];
                }
            }
            lse_into(&mut total, l);
            if self.event.contains(&self.snapped.means(&sums, self.n)) {
                lse_into(&mut inside, l);
            }
        });
        if total == f64::NEG_INFINITY {
            return Err(Error::ZeroNormalizer(self.n));
        }
        Ok(Estimate::exact(inside - total, Mode::Enumerate))
    }

    /// Exact sampling of words from `P_n` through backward log-messages.
    fn monte_carlo(&self, seed: u64, samples: usize) -> Result<Estimate> {
        if samples == 0 {
            return Err(Error::Domain("sample count must be positive".into()));
        }
        let states = self.e.dim();
        let n = self.n;
        let log_e = log_edges(self.e, self.phi);
        // back[k][x]: log weight of all completions after position k given x_k = x.
        let mut back = vec![vec![0.0; states]; n];
        for k in (0..n - 1).rev() {
            for x in 0..states {
                back[k][x] = log_sum_exp(log_e[x].iter().map(|&(y, w)| w + back[k + 1][y]));
            }
        }
        let start: Vec<f64> = (0..states)
            .map(|x| {
                if self.nu[x] > 0.0 {
                    self.nu[x].ln() + self.phi[x] + back[0][x]
                } else {
                    f64::NEG_INFINITY
                }
            })
            .collect();
        if log_sum_exp(start.iter().copied()) == f64::NEG_INFINITY {
            return Err(Error::ZeroNormalizer(n));
        }
        let start = softmax(&start);
        let transitions: Vec<Vec<Vec<(usize, f64)>>> = (1..n)
            .map(|k| {
                (0..states)
                    .map(|x| {
                        let logs: Vec<f64> = log_e[x].iter().map(|&(y, w)| w + back[k][y]).collect();
                        let probs = softmax(&logs);
                        log_e[x].iter().map(|&(y, _)| y).zip(probs).collect()
                    })
                    .collect()
            })
            .collect();

        let chunks = samples.div_ceil(MC_CHUNK);
        let hits: Vec<usize> = (0..chunks)
            .into_par_iter()
            .map(|c| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(c as u64);
                let count = MC_CHUNK.min(samples - c * MC_CHUNK);
                let mut hits = 0;
                let mut sums = vec![0_i64; self.snapped.offsets.len()];
                for _ in 0..count {
                    sums.iter_mut().for_each(|s| *s = 0);
                    let mut x = sample_index(&mut rng, &start);
                    for (s, o) in sums.iter_mut().zip(&self.snapped.offsets) {
                        *s += o[x];
                    }
                    for step in &transitions {
                        let row = &step[x];
                        let probs: Vec<f64> = row.iter().map(|&(_, p)| p).collect();
                        x = row[sample_index(&mut rng, &probs)].0;
                        for (s, o) in sums.iter_mut().zip(&self.snapped.offsets) {
                            *s += o[x];
                        }
                    }
                    if self.event.contains(&self.snapped.means(&sums, n)) {
                        hits += 1;
                    }
                }
                hits
            })
            .collect();
        let hits: usize = hits.iter().sum();
        let (lower, upper) = wilson_interval(hits, samples, Z_99);
        let p = hits as f64 / samples as f64;
        Ok(Estimate {
            probability: p,
            log_probability: ExtReal::from_log(p.ln()),
            lower,
            upper,
            mode: Mode::MonteCarlo { seed, samples },
        })
    }
}

fn softmax(logs: &[f64]) -> Vec<f64> {
    let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if top == f64::NEG_INFINITY {
        return vec![0.0; logs.len()];
    }
    let w: Vec<f64> = logs.iter().map(|l| (l - top).exp()).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|v| v / total).collect()
}

fn sample_index<R: Rng>(rng: &mut R, probs: &[f64]) -> usize {
    let r: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = i;
            if r < acc {
                return i;
            }
        }
    }
    last
}

/// Wilson score interval for `hits` successes out of `trials`.
pub fn wilson_interval(hits: usize, trials: usize, z: f64) -> (f64, f64) {
    let n = trials as f64;
    let p = hits as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

/// `P_n{ |δ_{x,n}(f) − a| > ε }` with `f` snapped to a grid of `ε/4`.
#[allow(clippy::too_many_arguments)]
pub fn lln_probability(
    e: &PositiveOperator,
    phi: &Potential,
    nu: &[f64],
    f: &Potential,
    a: f64,
    eps: f64,
    n: usize,
    mode: Mode,
) -> Result<Estimate> {
    f.check_len(e.dim())?;
    if !(eps > 0.0) || !a.is_finite() {
        return Err(Error::Domain("need a finite target and a positive tolerance".into()));
    }
    Problem {
        e,
        phi,
        nu,
        snapped: Snapped::new(&[f.values()], eps / 4.0)?,
        event: Event::Deviation { a, eps },
        n,
    }
    .solve(mode)
}

/// `P_n{ |δ_{x,n}(fᵢ) − uᵢ| < δ for all i }` with each `fᵢ` snapped to a
/// grid of `δ/4`.
#[allow(clippy::too_many_arguments)]
pub fn window_probability(
    e: &PositiveOperator,
    phi: &Potential,
    nu: &[f64],
    basis: &[Potential],
    u: &[f64],
    delta: f64,
    n: usize,
    mode: Mode,
) -> Result<Estimate> {
    if basis.is_empty() {
        return Err(Error::Empty("basis"));
    }
    if u.len() != basis.len() {
        return Err(Error::DimensionMismatch {
            expected: basis.len(),
            found: u.len(),
        });
    }
    for f in basis {
        f.check_len(e.dim())?;
    }
    if !(delta > 0.0) {
        return Err(Error::Domain("window half-width must be positive".into()));
    }
    let obs: Vec<&[f64]> = basis.iter().map(Potential::values).collect();
    Problem {
        e,
        phi,
        nu,
        snapped: Snapped::new(&obs, delta / 4.0)?,
        event: Event::Window {
            u: u.to_vec(),
            delta,
        },
        n,
    }
    .solve(mode)
}

/// Coordinates of `φ` in the span of `basis` by least squares; an error when
/// `φ` lies outside the span.
pub fn basis_coordinates(phi: &Potential, basis: &[Potential]) -> Result<Vec<f64>> {
    let n = phi.len();
    let k = basis.len();
    for f in basis {
        f.check_len(n)?;
    }
    let a = nalgebra::DMatrix::from_fn(n, k, |i, j| basis[j][i]);
    let b = nalgebra::DVector::from_column_slice(phi.values());
    let svd = a.clone().svd(true, true);
    let t = svd
        .solve(&b, 1e-12)
        .map_err(|e| Error::Mismatch(format!("least squares failed: {e}")))?;
    let residual = (&a * &t - &b).amax();
    if residual > 1e-9 * phi.sup_norm().max(1.0) {
        return Err(Error::Precondition(format!(
            "the potential is not in the span of the basis (residual {residual:e})"
        )));
    }
    Ok(t.iter().copied().collect())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LdpRow {
    pub n: usize,
    /// `(1/n) ln P_n{window}`.
    pub estimate: ExtReal,
    pub lower: f64,
    pub upper: f64,
    pub tau_ref: f64,
}

/// `(1/n) ln P_n{ |δ(fᵢ) − uᵢ| < δ ∀i }` over a grid of horizons, beside the
/// conditional action `τ(u)` and the band `τ ± 2δ Σ‖fᵢ‖`.
#[allow(clippy::too_many_arguments)]
pub fn ldp_asymptotics(
    e: &PositiveOperator,
    phi: &Potential,
    nu: &[f64],
    basis: &[Potential],
    u: &[f64],
    delta: f64,
    n_grid: &[usize],
) -> Result<Vec<LdpRow>> {
    let t0 = basis_coordinates(phi, basis)?;
    let tau = conditional_action(e, basis, &t0, u)?;
    let tau = tau.tau.finite().ok_or_else(|| {
        Error::Precondition("u lies outside the achievable moments".into())
    })?;
    let slack = 2.0 * delta * basis.iter().map(Potential::sup_norm).sum::<f64>();
    n_grid
        .par_iter()
        .map(|&n| {
            let est = window_probability(e, phi, nu, basis, u, delta, n, Mode::ExactDp)?;
            let estimate = match est.log_probability {
                ExtReal::Finite(l) => ExtReal::Finite(l / n as f64),
                ExtReal::NegInfinity => ExtReal::NegInfinity,
            };
            Ok(LdpRow {
                n,
                estimate,
                lower: tau - slack,
                upper: tau + slack,
                tau_ref: tau,
            })
        })
        .collect()
}

/// CSV with columns `n, estimate, lower, upper, tau_ref`.
pub fn write_ldp_csv(rows: &[LdpRow], path: &Path) -> Result<()> {
    let mut out = String::from("n,estimate,lower,upper,tau_ref\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{:.12},{:.12},{:.12}\n",
            r.n,
            fmt_ext(r.estimate),
            r.lower,
            r.upper,
            r.tau_ref
        ));
    }
    fs::write(path, out)?;
    Ok(())
}

/// Two whitespace-separated columns; `-inf` rows are left out.
pub fn write_plot_data(points: &[(f64, ExtReal)], path: &Path) -> Result<()> {
    let mut file = fs::File::create(path)?;
    for (x, y) in points {
        if let ExtReal::Finite(y) = y {
            writeln!(file, "{x} {y:.12}")?;
        }
    }
    Ok(())
}

fn fmt_ext(v: ExtReal) -> String {
    match v {
        ExtReal::Finite(x) => format!("{x:.12}"),
        ExtReal::NegInfinity => "-inf".into(),
    }
}

/// `‖πQ − π‖∞` for the Gibbs chain `Q[x][y] = E_φ[x][y] h(y) / (ρ h(x))`
/// with stationary candidate `π = ν ∘ h`. For maps this is the largest
/// `|π(f∘α) − π(f)|` over indicators `f`.
pub fn invariance_of_eigenstate(e: &PositiveOperator, phi: &Potential, system: &FiniteSystem) -> Result<f64> {
    if system.n() != e.dim() {
        return Err(Error::DimensionMismatch {
            expected: e.dim(),
            found: system.n(),
        });
    }
    let k = weight(e, phi)?;
    let data = perron_data(&k)?;
    let lambda = data.lambda.finite().ok_or(Error::Nilpotent)?;
    let rho = lambda.exp();
    let h = &data.right_vec;
    let pi = data.gibbs_weights();
    let n = e.dim();
    let mut pushed = vec![0.0; n];
    for x in 0..n {
        if h[x] <= 0.0 || pi[x] == 0.0 {
            continue;
        }
        for y in k.successors(x) {
            pushed[y] += pi[x] * k.get(x, y) * h[y] / (rho * h[x]);
        }
    }
    if let Dynamics::Deterministic { alpha } = system.dynamics() {
        // pushforward under α directly, independent of the operator
        let mut direct = vec![0.0; n];
        for (x, &y) in alpha.iter().enumerate() {
            direct[y] += pi[x];
        }
        let worst = direct.iter().zip(pi).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
        return Ok(worst.max(pushed.iter().zip(pi).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()))));
    }
    Ok(pushed.iter().zip(pi).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs())))
}
