//! Constructive identities on finite sets: the binomial square identity
//!
//! ```text
//! x² = 4^{−n} Σ_{i=−n}^{n} (i²/n²) C(2n, n+i) (1+x)^{n+i} (1−x)^{n−i} − (1−x²)/(2n)
//! ```
//!
//! and the decomposition of a nonnegative sum of products `F = Σᵢ f¹ᵢ⋯fⁿᵢ`
//! on `X₁×…×Xₙ` into `F + ε' = Σ g¹⋯gⁿ` with every factor nonnegative.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};

/// Default limit on the number of product terms an expansion may create.
pub const TERM_CAP: usize = 1_000_000;
const MAX_N: usize = 30;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Lemma32 {
    pub lhs: f64,
    pub rhs: f64,
    pub residual: f64,
    /// `|x| > 1`: the identity still holds but the summands change sign.
    pub outside_unit: bool,
}

fn ln_binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    (0..k).map(|j| ((n - j) as f64).ln() - ((j + 1) as f64).ln()).sum()
}

/// `C(2n, n+i) (1+x)^{n+i} (1−x)^{n−i} / 4ⁿ`, evaluated through logarithms.
fn binomial_summand(x: f64, n: usize, i: i64) -> f64 {
    let up = (n as i64 + i) as usize;
    let down = (n as i64 - i) as usize;
    let mut log = ln_binomial(2 * n, up) - n as f64 * 4.0_f64.ln();
    let mut sign = 1.0;
    for (base, power) in [(1.0 + x, up), (1.0 - x, down)] {
        if power == 0 {
            continue;
        }
        if base == 0.0 {
            return 0.0;
        }
        if base < 0.0 && power % 2 == 1 {
            sign = -sign;
        }
        log += power as f64 * base.abs().ln();
    }
    sign * log.exp()
}

/// Both sides of the binomial square identity.
pub fn lemma32_evaluate(x: f64, n: usize) -> Result<Lemma32> {
    if n == 0 || n > MAX_N {
        return Err(Error::Domain(format!("n must lie in [1, {MAX_N}], got {n}")));
    }
    if !x.is_finite() {
        return Err(Error::NonFinite("x"));
    }
    let nn = (n * n) as f64;
    let n_i = n as i64;
    let sum: f64 = (-n_i..=n_i)
        .map(|i| (i * i) as f64 / nn * binomial_summand(x, n, i))
        .sum();
    let rhs = sum - (1.0 - x * x) / (2.0 * n as f64);
    let lhs = x * x;
    Ok(Lemma32 {
        lhs,
        rhs,
        residual: (lhs - rhs).abs(),
        outside_unit: x.abs() > 1.0,
    })
}

/// Entrywise check that `b² + (1 − b²)/(2n)` is the nonnegative combination
/// `Σᵢ 4^{−n} (i²/n²) C(2n, n+i) (1+b)^{n+i} (1−b)^{n−i}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SquareReport {
    pub max_error: f64,
    pub min_summand: f64,
    pub nonnegative: bool,
}

pub fn square_positivity(b: &[f64], n: usize) -> Result<SquareReport> {
    if n == 0 || n > MAX_N {
        return Err(Error::Domain(format!("n must lie in [1, {MAX_N}], got {n}")));
    }
    if b.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("b"));
    }
    if let Some(v) = b.iter().find(|v| v.abs() > 1.0) {
        return Err(Error::Domain(format!("‖b‖ must be at most 1, found entry {v}")));
    }
    let nn = (n * n) as f64;
    let n_i = n as i64;
    let mut max_error = 0.0_f64;
    let mut min_summand = f64::INFINITY;
    for &x in b {
        let mut sum = 0.0;
        for i in -n_i..=n_i {
            let s = (i * i) as f64 / nn * binomial_summand(x, n, i);
            min_summand = min_summand.min(s);
            sum += s;
        }
        let target = x * x + (1.0 - x * x) / (2.0 * n as f64);
        max_error = max_error.max((sum - target).abs());
    }
    Ok(SquareReport {
        max_error,
        min_summand,
        nonnegative: min_summand >= 0.0,
    })
}

/// `Σ_terms Π_j factor_j(x_j)` on `X₁×…×Xₙ`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProductFunction {
    pub axes: Vec<usize>,
    pub terms: Vec<Vec<Vec<f64>>>,
}

impl ProductFunction {
    pub fn new(axes: Vec<usize>, terms: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        if axes.is_empty() {
            return Err(Error::Empty("axes"));
        }
        if axes.contains(&0) {
            return Err(Error::Empty("axis"));
        }
        for term in &terms {
            if term.len() != axes.len() {
                return Err(Error::DimensionMismatch {
                    expected: axes.len(),
                    found: term.len(),
                });
            }
            for (f, &size) in term.iter().zip(&axes) {
                if f.len() != size {
                    return Err(Error::DimensionMismatch { expected: size, found: f.len() });
                }
                if f.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite("product factor"));
                }
            }
        }
        Ok(Self { axes, terms })
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// The full tensor, row-major with the last axis fastest.
    pub fn expand(&self) -> Vec<f64> {
        let size: usize = self.axes.iter().product();
        let mut out = vec![0.0; size];
        for term in &self.terms {
            let mut partial = vec![1.0];
            for f in term {
                partial = partial.iter().flat_map(|p| f.iter().map(move |v| p * v)).collect();
            }
            for (o, p) in out.iter_mut().zip(&partial) {
                *o += p;
            }
        }
        out
    }

    pub fn all_factors_nonnegative(&self) -> bool {
        self.terms.iter().flatten().flatten().all(|&v| v >= 0.0)
    }
}

fn sup_norm(f: &[f64]) -> f64 {
    f.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

/// `h₁⋯hₙ + Π‖hⱼ‖` as `3ⁿ` products of nonnegative functions. The
/// coefficient `1 + sign` of each pure `h^±` pattern is folded into its first
/// factor, so negative patterns appear as zero terms.
fn lemma35_terms(factors: &[Vec<f64>]) -> Vec<Vec<Vec<f64>>> {
    let parts: Vec<[Vec<f64>; 3]> = factors
        .iter()
        .map(|h| {
            let norm = sup_norm(h);
            let plus: Vec<f64> = h.iter().map(|v| v.max(0.0)).collect();
            let minus: Vec<f64> = h.iter().map(|v| (-v).max(0.0)).collect();
            let rest: Vec<f64> = h.iter().map(|v| norm - v.abs()).collect();
            [plus, minus, rest]
        })
        .collect();
    let n = factors.len();
    let mut out = Vec::with_capacity(3_usize.pow(n as u32));
    for code in 0..3_usize.pow(n as u32) {
        let mut c = code;
        let mut choice = Vec::with_capacity(n);
        for _ in 0..n {
            choice.push(c % 3);
            c /= 3;
        }
        let pure = choice.iter().all(|&k| k < 2);
        let negative = choice.iter().filter(|&&k| k == 1).count() % 2 == 1;
        let coefficient = match (pure, negative) {
            (false, _) => 1.0,
            (true, false) => 2.0,
            (true, true) => 0.0,
        };
        let mut term: Vec<Vec<f64>> = choice.iter().zip(&parts).map(|(&k, p)| p[k].clone()).collect();
        if coefficient != 1.0 {
            term[0].iter_mut().for_each(|v| *v *= coefficient);
        }
        out.push(term);
    }
    out
}

/// `f₁⋯fₙ + ε` as a sum of nonnegative products, for `ε ≥ Π‖fⱼ‖`.
pub fn lemma35_decompose(factors: &[Vec<f64>], eps: f64) -> Result<ProductFunction> {
    let axes: Vec<usize> = factors.iter().map(Vec::len).collect();
    ProductFunction::new(axes.clone(), vec![factors.to_vec()])?;
    let floor: f64 = factors.iter().map(|f| sup_norm(f)).product();
    if !(eps >= floor) {
        return Err(Error::Domain(format!("eps = {eps} is below the product of norms {floor}")));
    }
    let mut terms = lemma35_terms(factors);
    if eps > floor {
        let mut extra: Vec<Vec<f64>> = axes.iter().map(|&s| vec![1.0; s]).collect();
        extra[0].iter_mut().for_each(|v| *v = eps - floor);
        terms.push(extra);
    }
    ProductFunction::new(axes, terms)
}

/// A nonnegative decomposition `F + ε' = Σ g¹⋯gⁿ`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Decomposition {
    pub function: ProductFunction,
    /// The constant actually added.
    pub eps_realized: f64,
    /// `(2ⁿ − 1) ε (t + ε)^{n−1} m`.
    pub eps_bound: f64,
    /// Groups per axis.
    pub groups: Vec<usize>,
    /// `max |expand − (F + ε')|`.
    pub residual: f64,
}

/// Partition of one axis into classes on which every `fⁱⱼ` stays inside a
/// band of width `eps`.
fn level_groups(functions: &[&[f64]], size: usize, eps: f64) -> Vec<Vec<usize>> {
    let mut groups: BTreeMap<Vec<i64>, Vec<usize>> = BTreeMap::new();
    for x in 0..size {
        let key = functions.iter().map(|f| (f[x] / eps).floor() as i64).collect();
        groups.entry(key).or_default().push(x);
    }
    groups.into_values().collect()
}

fn restrict(f: &[f64], group: &[usize]) -> Vec<f64> {
    let mut out = vec![0.0; f.len()];
    for &x in group {
        out[x] = f[x];
    }
    out
}

fn indicator(size: usize, group: &[usize]) -> Vec<f64> {
    let mut out = vec![0.0; size];
    group.iter().for_each(|&x| out[x] = 1.0);
    out
}

fn is_zero(term: &[Vec<f64>]) -> bool {
    term.iter().any(|f| f.iter().all(|&v| v == 0.0))
}

/// The constructive nonnegative decomposition of a nonnegative
/// `F = Σᵢ f¹ᵢ⋯fⁿᵢ`, with the default term cap.
pub fn theorem34_decompose(f: &ProductFunction, eps: f64) -> Result<Decomposition> {
    theorem34_decompose_with_cap(f, eps, TERM_CAP)
}

pub fn theorem34_decompose_with_cap(f: &ProductFunction, eps: f64, cap: usize) -> Result<Decomposition> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::Domain("eps must be positive".into()));
    }
    if f.is_empty() {
        return Err(Error::Empty("product terms"));
    }
    let dense = f.expand();
    if let Some((idx, v)) = dense.iter().enumerate().find(|(_, &v)| v < 0.0) {
        return Err(Error::Domain(format!("F is negative ({v}) at flat index {idx}")));
    }
    let n = f.axes.len();
    let m = f.terms.len();
    let groups: Vec<Vec<Vec<usize>>> = (0..n)
        .map(|j| {
            let fs: Vec<&[f64]> = f.terms.iter().map(|t| t[j].as_slice()).collect();
            level_groups(&fs, f.axes[j], eps)
        })
        .collect();
    let tuples: usize = groups.iter().map(Vec::len).product();
    let per_tuple = ((1_usize << n) - 1) * 3_usize.pow(n as u32) + 1;
    let estimate = m
        .checked_mul(tuples)
        .and_then(|v| v.checked_mul(per_tuple))
        .and_then(|v| v.checked_add(tuples));
    match estimate {
        Some(count) if count <= cap => {}
        Some(count) => return Err(Error::TermCap { count, cap }),
        None => return Err(Error::TermCap { count: usize::MAX, cap }),
    }

    let t = f.terms.iter().flatten().map(|g| sup_norm(g)).fold(0.0, f64::max);
    let eps_bound = ((1_u64 << n) - 1) as f64 * eps * (t + eps).powi(n as i32 - 1) * m as f64;

    let mut terms: Vec<Vec<Vec<f64>>> = Vec::new();
    let mut eps_realized = 0.0;
    let mut tuple = vec![0_usize; n];
    for term in &f.terms {
        // per tuple: sign-split output and its added constant
        let mut blocks: Vec<(Vec<usize>, Vec<Vec<Vec<f64>>>, f64)> = Vec::with_capacity(tuples);
        for code in 0..tuples {
            let mut c = code;
            for j in (0..n).rev() {
                tuple[j] = c % groups[j].len();
                c /= groups[j].len();
            }
            let picked: Vec<&[usize]> = (0..n).map(|j| groups[j][tuple[j]].as_slice()).collect();
            // fⱼ = gⱼ + cⱼ on the group, with gⱼ = η_ε(fⱼ − fⱼ(rep))
            let consts: Vec<f64> = (0..n).map(|j| term[j][picked[j][0]]).collect();
            let gs: Vec<Vec<f64>> = (0..n)
                .map(|j| {
                    let g: Vec<f64> = term[j].iter().map(|v| (v - consts[j]).clamp(-eps, eps)).collect();
                    restrict(&g, picked[j])
                })
                .collect();
            let mut out = Vec::new();
            let mut added = 0.0;
            for subset in 1..(1_usize << n) {
                let hs: Vec<Vec<f64>> = (0..n)
                    .map(|j| {
                        if subset >> j & 1 == 1 {
                            gs[j].clone()
                        } else {
                            restrict(&vec![consts[j]; f.axes[j]], picked[j])
                        }
                    })
                    .collect();
                added += hs.iter().map(|h| sup_norm(h)).product::<f64>();
                for mut piece in lemma35_terms(&hs) {
                    for (p, grp) in piece.iter_mut().zip(&picked) {
                        let keep = indicator(p.len(), grp);
                        p.iter_mut().zip(&keep).for_each(|(v, k)| *v *= k);
                    }
                    if !is_zero(&piece) {
                        out.push(piece);
                    }
                }
            }
            blocks.push((tuple.clone(), out, added));
        }
        let level = blocks.iter().map(|b| b.2).fold(0.0, f64::max);
        eps_realized += level;
        for (tup, out, added) in blocks {
            terms.extend(out);
            let pad = level - added;
            if pad > 0.0 {
                let mut piece: Vec<Vec<f64>> = (0..n).map(|j| indicator(f.axes[j], &groups[j][tup[j]])).collect();
                piece[0].iter_mut().for_each(|v| *v *= pad);
                terms.push(piece);
            }
        }
    }
    // Σ_k F(x^k) φ^k restores the piecewise-constant part
    for code in 0..tuples {
        let mut c = code;
        for j in (0..n).rev() {
            tuple[j] = c % groups[j].len();
            c /= groups[j].len();
        }
        let reps: Vec<usize> = (0..n).map(|j| groups[j][tuple[j]][0]).collect();
        let value = dense[flat_index(&reps, &f.axes)];
        if value > 0.0 {
            let mut piece: Vec<Vec<f64>> = (0..n).map(|j| indicator(f.axes[j], &groups[j][tuple[j]])).collect();
            piece[0].iter_mut().for_each(|v| *v *= value);
            terms.push(piece);
        }
    }

    let function = ProductFunction::new(f.axes.clone(), terms)?;
    let residual = function
        .expand()
        .iter()
        .zip(&dense)
        .fold(0.0_f64, |r, (a, b)| r.max((a - b - eps_realized).abs()));
    Ok(Decomposition {
        function,
        eps_realized,
        eps_bound,
        groups: groups.iter().map(Vec::len).collect(),
        residual,
    })
}

fn flat_index(point: &[usize], axes: &[usize]) -> usize {
    point.iter().zip(axes).fold(0, |acc, (&x, &s)| acc * s + x)
}
