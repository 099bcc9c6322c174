//! Markov suspensions at finite depth: cylinder functions on words, the
//! cylinder state `ν(F Eⁿ) = μ(f₁E(f₂E(… f_m E(Eⁿ1))))`, and the
//! correspondence between trajectory words and the support of a flow.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::spectral::{perron_data, pressure};
use crate::system::{flow_support, unessential_index, weight, FiniteSystem, Measure, PositiveOperator, Potential};

/// Largest number of words a depth-`m` enumeration may visit.
pub const WORD_LIMIT: usize = 2_000_000;
/// Default suspension depth.
pub const DEFAULT_DEPTH: usize = 6;
const MASS_TOL: f64 = 1e-12;

/// A function of the first `depth` coordinates of a trajectory.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum CylinderFunction {
    /// Values on every word, indexed in base `states` with the first symbol
    /// most significant.
    Table { states: usize, depth: usize, values: Vec<f64> },
    /// `F(x₁…x_m) = Π_j f_j(x_j)`.
    Factored(Vec<Vec<f64>>),
}

impl CylinderFunction {
    pub fn table(states: usize, depth: usize, values: Vec<f64>) -> Result<Self> {
        let expected = checked_words(states, depth)?;
        if values.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                found: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("cylinder table"));
        }
        Ok(Self::Table { states, depth, values })
    }

    pub fn factored(factors: Vec<Vec<f64>>) -> Result<Self> {
        if let Some(first) = factors.first() {
            if let Some(bad) = factors.iter().find(|f| f.len() != first.len()) {
                return Err(Error::DimensionMismatch {
                    expected: first.len(),
                    found: bad.len(),
                });
            }
        }
        if factors.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("cylinder factor"));
        }
        Ok(Self::Factored(factors))
    }

    /// The indicator of a single word.
    pub fn word_indicator(states: usize, word: &[usize]) -> Result<Self> {
        let factors = word
            .iter()
            .map(|&x| {
                if x >= states {
                    Err(Error::Domain(format!("state {x} is outside [0, {states})")))
                } else {
                    Ok(Potential::indicator(states, x).into_values())
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Self::factored(factors)
    }

    pub fn depth(&self) -> usize {
        match self {
            Self::Table { depth, .. } => *depth,
            Self::Factored(f) => f.len(),
        }
    }

    /// Number of states, `None` for a depth-0 factored function.
    pub fn states(&self) -> Option<usize> {
        match self {
            Self::Table { states, .. } => Some(*states),
            Self::Factored(f) => f.first().map(Vec::len),
        }
    }

    pub fn eval(&self, word: &[usize]) -> f64 {
        match self {
            Self::Table { states, values, .. } => values[word_index(word, *states)],
            Self::Factored(f) => f.iter().zip(word).map(|(g, &x)| g[x]).product(),
        }
    }

    /// The tabulated form.
    pub fn to_table(&self, states: usize) -> Result<Self> {
        match self {
            Self::Table { .. } => Ok(self.clone()),
            Self::Factored(f) => {
                let depth = f.len();
                let count = checked_words(states, depth)?;
                let values = (0..count)
                    .map(|i| self.eval(&index_word(i, states, depth)))
                    .collect();
                Self::table(states, depth, values)
            }
        }
    }

    fn check_states(&self, n: usize) -> Result<()> {
        match self.states() {
            Some(s) if s != n => Err(Error::DimensionMismatch { expected: n, found: s }),
            _ => Ok(()),
        }
    }
}

fn checked_words(states: usize, depth: usize) -> Result<usize> {
    u32::try_from(depth)
        .ok()
        .and_then(|d| states.checked_pow(d))
        .filter(|&c| c <= WORD_LIMIT)
        .ok_or_else(|| Error::Infeasible(format!("{states}^{depth} words exceed the limit of {WORD_LIMIT}")))
}

fn word_index(word: &[usize], states: usize) -> usize {
    word.iter().fold(0, |acc, &x| acc * states + x)
}

fn index_word(mut i: usize, states: usize, depth: usize) -> Vec<usize> {
    let mut w = vec![0; depth];
    for slot in w.iter_mut().rev() {
        *slot = i % states;
        i /= states;
    }
    w
}

fn check_state_measure(e: &PositiveOperator, mu: &Measure) -> Result<()> {
    mu.check_len(e.dim())?;
    if mu.weights().iter().any(|&w| w < 0.0) {
        return Err(Error::InvalidMeasure("mu has a negative weight".into()));
    }
    if (mu.total() - 1.0).abs() > MASS_TOL {
        return Err(Error::InvalidMeasure(format!("mu(1) = {} is not 1", mu.total())));
    }
    Ok(())
}

/// `E^k 1`.
fn tail(e: &PositiveOperator, k: usize) -> Vec<f64> {
    (0..k).fold(vec![1.0; e.dim()], |v, _| e.apply(&v))
}

/// `ν(F Eⁿ)` for `n = n_extra`.
pub fn suspension_state(e: &PositiveOperator, mu: &Measure, f: &CylinderFunction, n_extra: usize) -> Result<f64> {
    check_state_measure(e, mu)?;
    f.check_states(e.dim())?;
    let v = tail(e, n_extra);
    let v = match f {
        CylinderFunction::Factored(factors) => factors.iter().rev().fold(v, |v, g| {
            e.apply(&v).iter().zip(g).map(|(a, b)| a * b).collect()
        }),
        CylinderFunction::Table { depth, .. } => table_contraction(e, f, *depth, v),
    };
    Ok(mu.weights().iter().zip(&v).map(|(a, b)| a * b).sum())
}

/// `Σ_{x₂…x_m} F(x₁…x_m) Π E[x_k][x_{k+1}] (E v)(x_m)` as a function of `x₁`.
fn table_contraction(e: &PositiveOperator, f: &CylinderFunction, depth: usize, v: Vec<f64>) -> Vec<f64> {
    let n = e.dim();
    if depth == 0 {
        let c = f.eval(&[]);
        return e.apply(&v).iter().map(|x| c * x).collect();
    }
    let last = e.apply(&v);
    let mut out = vec![0.0; n];
    let mut word = Vec::with_capacity(depth);
    fn rec(
        e: &PositiveOperator,
        f: &CylinderFunction,
        depth: usize,
        last: &[f64],
        word: &mut Vec<usize>,
        path: f64,
        out: &mut [f64],
    ) {
        let x = *word.last().expect("nonempty word");
        if word.len() == depth {
            out[word[0]] += path * f.eval(word) * last[x];
            return;
        }
        for y in e.successors(x) {
            word.push(y);
            rec(e, f, depth, last, word, path * e.get(x, y), out);
            word.pop();
        }
    }
    for x in 0..n {
        word.push(x);
        rec(e, f, depth, &last, &mut word, 1.0, &mut out);
        word.pop();
    }
    out
}

/// `max |ν(F E^{k+1}) − e^{λ(0)} ν(F E^k)|` over probes and `k < horizons`.
pub fn right_eigenstate_check(
    e: &PositiveOperator,
    mu: &Measure,
    probes: &[CylinderFunction],
    horizons: usize,
) -> Result<f64> {
    let growth = match pressure(e, &Potential::zeros(e.dim()))?.finite() {
        Some(l) => l.exp(),
        None => 0.0,
    };
    let mut worst = 0.0_f64;
    for f in probes {
        let mut prev = suspension_state(e, mu, f, 0)?;
        for k in 1..=horizons {
            let next = suspension_state(e, mu, f, k)?;
            worst = worst.max((next - growth * prev).abs());
            prev = next;
        }
    }
    Ok(worst)
}

/// All depth-`m` words with their masses `ν(1_w)`.
pub fn cylinder_measure(e: &PositiveOperator, mu: &Measure, depth: usize) -> Result<Vec<(Vec<usize>, f64)>> {
    check_state_measure(e, mu)?;
    let n = e.dim();
    let count = checked_words(n, depth)?;
    let last = e.apply(&vec![1.0; n]);
    Ok((0..count)
        .map(|i| {
            let w = index_word(i, n, depth);
            let mass = match w.first() {
                None => mu.total(),
                Some(&x0) => {
                    let path: f64 = w.windows(2).map(|p| e.get(p[0], p[1])).product();
                    mu.weights()[x0] * path * last[*w.last().expect("nonempty word")]
                }
            };
            (w, mass)
        })
        .collect())
}

/// Why a word is outside the support of the suspension.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Witness {
    /// `1_{from}(x_k) · 1_{to}(x_{k+1})` with `1_{from} · (1_{to} ∘ α) ≡ 0`.
    NonTrajectory { position: usize, from: usize, to: usize },
    /// The word starts at a state whose row of `Eᵏ` vanishes.
    Unessential { state: usize, index: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SupportReport {
    pub depth: usize,
    pub words: usize,
    pub surviving: Vec<Vec<usize>>,
    pub annihilated: usize,
    /// The first annihilated words with their witnesses.
    pub witnesses: Vec<(Vec<usize>, Witness)>,
    pub pass: bool,
}

const WITNESS_SAMPLE: usize = 32;

/// Classifies every depth-`m` word: trajectory words `i_α(a)` over the
/// flow support survive, every other word carries an annihilating witness.
pub fn suspension_support_correspondence(
    e: &PositiveOperator,
    system: &FiniteSystem,
    depth: usize,
) -> Result<SupportReport> {
    let alpha = system.alpha().ok_or_else(|| {
        Error::Precondition(format!(
            "support correspondence needs deterministic dynamics, system is {}",
            system.dynamics().kind_name()
        ))
    })?;
    let n = system.n();
    if e.dim() != n {
        return Err(Error::DimensionMismatch { expected: n, found: e.dim() });
    }
    if depth == 0 {
        return Err(Error::Domain("depth must be at least 1".into()));
    }
    let count = checked_words(n, depth)?;
    let support = flow_support(e);
    let on_support = {
        let mut s = vec![false; n];
        support.iter().for_each(|&x| s[x] = true);
        s
    };
    let mut surviving = Vec::new();
    let mut witnesses = Vec::new();
    let mut annihilated = 0;
    let mut pass = true;
    for i in 0..count {
        let w = index_word(i, n, depth);
        let witness = match w.windows(2).position(|p| alpha[p[0]] != p[1]) {
            Some(k) => {
                let (from, to) = (w[k], w[k + 1]);
                // f_k · (f_{k+1} ∘ α) must vanish identically
                pass &= (0..n).all(|x| !(x == from && alpha[x] == to));
                Some(Witness::NonTrajectory { position: k, from, to })
            }
            None if !on_support[w[0]] => {
                let index = unessential_index(e, w[0]).expect("off-support state has a finite index");
                pass &= tail(e, index)[w[0]] == 0.0;
                Some(Witness::Unessential { state: w[0], index })
            }
            None => None,
        };
        match witness {
            Some(wit) => {
                annihilated += 1;
                if witnesses.len() < WITNESS_SAMPLE {
                    witnesses.push((w, wit));
                }
            }
            None => surviving.push(w),
        }
    }
    pass &= surviving.len() == support.len()
        && surviving
            .iter()
            .zip(&support)
            .all(|(w, &a)| w[0] == a && w.windows(2).all(|p| alpha[p[0]] == p[1]));
    Ok(SupportReport {
        depth,
        words: count,
        surviving,
        annihilated,
        witnesses,
        pass,
    })
}

/// `|λ(φ + ψ) − λ(φ)|` for `ψ` vanishing on the flow support.
pub fn spectral_potential_restriction_check(
    e: &PositiveOperator,
    system: &FiniteSystem,
    phi: &Potential,
    psi_off_support: &Potential,
) -> Result<f64> {
    let n = system.n();
    if e.dim() != n {
        return Err(Error::DimensionMismatch { expected: n, found: e.dim() });
    }
    psi_off_support.check_len(n)?;
    if let Some(&x) = flow_support(e).iter().find(|&&x| psi_off_support[x] != 0.0) {
        return Err(Error::Precondition(format!(
            "psi is nonzero at state {x}, which lies in the flow support"
        )));
    }
    let base = pressure(e, phi)?;
    let moved = pressure(e, &(phi + psi_off_support))?;
    Ok(match (base.finite(), moved.finite()) {
        (Some(a), Some(b)) => (a - b).abs(),
        (None, None) => 0.0,
        _ => f64::INFINITY,
    })
}

/// First-coordinate marginal of the Gibbs measure of the depth-`m` block
/// system, whose states are admissible words and whose transitions append
/// one symbol; the potential is read on the first coordinate.
pub fn block_gibbs_marginal(e: &PositiveOperator, phi: &Potential, depth: usize) -> Result<Measure> {
    let n = e.dim();
    phi.check_len(n)?;
    if depth == 0 {
        return Err(Error::Domain("depth must be at least 1".into()));
    }
    checked_words(n, depth)?;
    let mut words: Vec<Vec<usize>> = (0..n).map(|x| vec![x]).collect();
    for _ in 1..depth {
        words = words
            .into_iter()
            .flat_map(|w| {
                let x = *w.last().expect("nonempty word");
                e.successors(x).map(move |y| {
                    let mut v = w.clone();
                    v.push(y);
                    v
                })
            })
            .collect();
    }
    let m = words.len();
    if m > 4096 {
        return Err(Error::Infeasible(format!("{m} block states exceed the dense limit of 4096")));
    }
    let index: std::collections::HashMap<&[usize], usize> =
        words.iter().enumerate().map(|(i, w)| (w.as_slice(), i)).collect();
    let mut rows = vec![vec![0.0; m]; m];
    for (i, w) in words.iter().enumerate() {
        let x = *w.last().expect("nonempty word");
        for y in e.successors(x) {
            let mut next: Vec<usize> = w[1..].to_vec();
            next.push(y);
            if let Some(&j) = index.get(next.as_slice()) {
                rows[i][j] = e.get(x, y);
            }
        }
    }
    let block = PositiveOperator::from_rows(&rows)?.with_weight_side(e.weight_side());
    let block_phi = Potential::new(words.iter().map(|w| phi[w[0]]).collect())?;
    let data = perron_data(&weight(&block, &block_phi)?)?;
    if data.is_nilpotent() {
        return Err(Error::Nilpotent);
    }
    let mut marginal = vec![0.0; n];
    for (w, g) in words.iter().zip(data.gibbs_weights()) {
        marginal[w[0]] += g;
    }
    let total: f64 = marginal.iter().sum();
    Measure::probability(marginal.into_iter().map(|v| v / total).collect())
}
