//! Finite phase spaces, their dynamics and the induced evolution operators.
//!
//! Functions on the phase space are length-`n` arrays and operators act on
//! them from the left: `(E f)(x) = Σ_y E[x][y] f[y]`. Measures pair with
//! functions as dot products, so `μ(E f) = (μ E)·f`.

use nalgebra::{DMatrix};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const STOCHASTIC_TOL: f64 = 1e-12;
const PROBABILITY_TOL: f64 = 1e-12;

/// The dynamics carried by a [`FiniteSystem`].
#[derive(Clone, Debug, PartialEq)]
pub enum Dynamics {
    /// `x ↦ alpha[x]`.
    Deterministic { alpha: Vec<usize> },
    /// Row-stochastic transition kernel.
    Stochastic { kernel: DMatrix<f64> },
    /// 0/1 transition matrix of a subshift of finite type; `adjacency[i][j] = 1`
    /// allows the transition `i → j`.
    Subshift { adjacency: DMatrix<u8> },
}

impl Dynamics {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Dynamics::Deterministic { .. } => "deterministic",
            Dynamics::Stochastic { .. } => "stochastic",
            Dynamics::Subshift { .. } => "subshift",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FiniteSystem {
    n: usize,
    dynamics: Dynamics,
    labels: Option<Vec<String>>,
}

impl FiniteSystem {
    pub fn deterministic(alpha: Vec<usize>) -> Result<Self> {
        let n = alpha.len();
        if n == 0 {
            return Err(Error::InvalidSystem("phase space must be nonempty".into()));
        }
        if let Some((x, &y)) = alpha.iter().enumerate().find(|(_, &y)| y >= n) {
            return Err(Error::InvalidSystem(format!(
                "alpha[{x}] = {y} is outside the phase space [0, {n})"
            )));
        }
        Ok(Self {
            n,
            dynamics: Dynamics::Deterministic { alpha },
            labels: None,
        })
    }

    /// Builds a Markov system. Rows must sum to one within `1e-12`; they are
    /// then renormalized exactly.
    pub fn stochastic(rows: &[Vec<f64>]) -> Result<Self> {
        let mut kernel = square_from_rows(rows, "kernel")?;
        let n = kernel.nrows();
        for i in 0..n {
            let mut sum = 0.0;
            for j in 0..n {
                let v = kernel[(i, j)];
                if !v.is_finite() {
                    return Err(Error::NonFinite("stochastic kernel"));
                }
                if v < 0.0 {
                    return Err(Error::InvalidSystem(format!(
                        "kernel entry ({i}, {j}) = {v} is negative"
                    )));
                }
                sum += v;
            }
            if (sum - 1.0).abs() > STOCHASTIC_TOL {
                return Err(Error::InvalidSystem(format!(
                    "kernel row {i} sums to {sum}, not 1"
                )));
            }
            for j in 0..n {
                kernel[(i, j)] /= sum;
            }
        }
        Ok(Self {
            n,
            dynamics: Dynamics::Stochastic { kernel },
            labels: None,
        })
    }

    pub fn subshift(rows: &[Vec<f64>]) -> Result<Self> {
        let m = square_from_rows(rows, "adjacency")?;
        let n = m.nrows();
        let mut adjacency = DMatrix::<u8>::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let v = m[(i, j)];
                if v == 1.0 {
                    adjacency[(i, j)] = 1;
                } else if v != 0.0 {
                    return Err(Error::InvalidSystem(format!(
                        "adjacency entry ({i}, {j}) = {v} is not 0 or 1"
                    )));
                }
            }
        }
        Ok(Self {
            n,
            dynamics: Dynamics::Subshift { adjacency },
            labels: None,
        })
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                found: labels.len(),
            });
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dynamics(&self) -> &Dynamics {
        &self.dynamics
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    pub fn label(&self, i: usize) -> String {
        self.labels
            .as_ref()
            .and_then(|l| l.get(i).cloned())
            .unwrap_or_else(|| i.to_string())
    }

    /// The map `α` for deterministic systems.
    pub fn alpha(&self) -> Option<&[usize]> {
        match &self.dynamics {
            Dynamics::Deterministic { alpha } => Some(alpha),
            _ => None,
        }
    }

    pub fn default_model(&self) -> EvolutionModel {
        match self.dynamics {
            Dynamics::Deterministic { .. } => EvolutionModel::CompositionShift,
            Dynamics::Stochastic { .. } => EvolutionModel::MarkovExpectation,
            Dynamics::Subshift { .. } => EvolutionModel::Transfer,
        }
    }

    /// Evolution operator for the default model of the dynamics.
    pub fn operator(&self) -> PositiveOperator {
        evolution_operator(self, self.default_model())
            .expect("default model always matches the dynamics")
    }

    /// Whether `from → to` is an allowed one-step transition.
    pub fn allows(&self, from: usize, to: usize) -> bool {
        match &self.dynamics {
            Dynamics::Deterministic { alpha } => alpha[from] == to,
            Dynamics::Stochastic { kernel } => kernel[(from, to)] > 0.0,
            Dynamics::Subshift { adjacency } => adjacency[(from, to)] == 1,
        }
    }
}

fn square_from_rows(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let n = rows.len();
    if n == 0 {
        return Err(Error::InvalidSystem(format!("{what} must be nonempty")));
    }
    for (i, r) in rows.iter().enumerate() {
        if r.len() != n {
            return Err(Error::InvalidSystem(format!(
                "{what} row {i} has {} entries, expected {n}",
                r.len()
            )));
        }
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

/// Which concrete operator a system induces.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvolutionModel {
    /// `E f = f ∘ α`.
    CompositionShift,
    /// `E f(x) = Σ_y P(x, y) f(y)`.
    MarkovExpectation,
    /// `E f(x) = Σ_{y → x} f(y)`, summing over preimages.
    Transfer,
}

impl EvolutionModel {
    pub fn name(self) -> &'static str {
        match self {
            EvolutionModel::CompositionShift => "composition-shift",
            EvolutionModel::MarkovExpectation => "markov-expectation",
            EvolutionModel::Transfer => "transfer",
        }
    }
}

/// Whether `weight` scales rows (`e^φ E`) or columns (`E e^φ`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum WeightSide {
    Row,
    Column,
}

/// An entrywise nonnegative square matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct PositiveOperator {
    entries: DMatrix<f64>,
    side: WeightSide,
}

impl PositiveOperator {
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        if entries.nrows() != entries.ncols() {
            return Err(Error::InvalidOperator(format!(
                "matrix is {}x{}, not square",
                entries.nrows(),
                entries.ncols()
            )));
        }
        if entries.nrows() == 0 {
            return Err(Error::InvalidOperator("matrix is empty".into()));
        }
        let n = entries.nrows();
        for i in 0..n {
            for j in 0..n {
                let v = entries[(i, j)];
                if !v.is_finite() {
                    return Err(Error::NonFinite("operator entries"));
                }
                if v < 0.0 {
                    return Err(Error::InvalidOperator(format!(
                        "entry ({i}, {j}) = {v} is negative"
                    )));
                }
            }
        }
        Ok(Self {
            entries,
            side: WeightSide::Row,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if let Some(r) = rows.iter().find(|r| r.len() != n) {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: r.len(),
            });
        }
        Self::new(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }

    pub fn identity(n: usize) -> Self {
        Self {
            entries: DMatrix::identity(n, n),
            side: WeightSide::Row,
        }
    }

    pub fn with_weight_side(mut self, side: WeightSide) -> Self {
        self.side = side;
        self
    }

    pub fn weight_side(&self) -> WeightSide {
        self.side
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[(i, j)]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.dim())
            .map(|i| self.entries.row(i).iter().copied().collect())
            .collect()
    }

    /// `(E f)(x) = Σ_y E[x][y] f[y]`.
    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        let n = self.dim();
        (0..n)
            .map(|i| (0..n).map(|j| self.entries[(i, j)] * f[j]).sum())
            .collect()
    }

    /// `(m E)(y) = Σ_x m[x] E[x][y]`.
    pub fn apply_left(&self, m: &[f64]) -> Vec<f64> {
        let n = self.dim();
        (0..n)
            .map(|j| (0..n).map(|i| m[i] * self.entries[(i, j)]).sum())
            .collect()
    }

    /// Matrix product `self · other`; the weight side of `self` is kept.
    pub fn compose(&self, other: &PositiveOperator) -> PositiveOperator {
        PositiveOperator {
            entries: &self.entries * &other.entries,
            side: self.side,
        }
    }

    pub fn sum(&self, other: &PositiveOperator) -> PositiveOperator {
        PositiveOperator {
            entries: &self.entries + &other.entries,
            side: self.side,
        }
    }

    pub fn power(&self, k: usize) -> PositiveOperator {
        let mut acc = PositiveOperator::identity(self.dim()).with_weight_side(self.side);
        for _ in 0..k {
            acc = acc.compose(self);
        }
        acc
    }

    /// The operator norm on the cone, `max_x (E 1)(x)`.
    pub fn max_row_sum(&self) -> f64 {
        self.entries
            .row_iter()
            .map(|r| r.iter().sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Indices `y` with `E[x][y] > 0`.
    pub fn successors(&self, x: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.dim()).filter(move |&y| self.entries[(x, y)] > 0.0)
    }

    pub fn is_nilpotent(&self) -> bool {
        flow_support(self).is_empty()
    }

    pub(crate) fn from_matrix_unchecked(entries: DMatrix<f64>, side: WeightSide) -> Self {
        Self { entries, side }
    }
}

/// A real-valued function on the phase space.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Potential(Vec<f64>);

impl Potential {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("potential"));
        }
        Ok(Self(values))
    }

    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn constant(n: usize, c: f64) -> Self {
        Self(vec![c; n])
    }

    pub fn indicator(n: usize, i: usize) -> Self {
        let mut v = vec![0.0; n];
        v[i] = 1.0;
        Self(v)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_values(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn sup_norm(&self) -> f64 {
        self.0.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `f ∘ α`.
    pub fn compose(&self, alpha: &[usize]) -> Potential {
        Potential(alpha.iter().map(|&y| self.0[y]).collect())
    }

    pub fn shifted(&self, c: f64) -> Potential {
        Potential(self.0.iter().map(|v| v + c).collect())
    }

    pub fn scaled(&self, c: f64) -> Potential {
        Potential(self.0.iter().map(|v| v * c).collect())
    }

    /// `self + t · other`.
    pub fn axpy(&self, t: f64, other: &Potential) -> Potential {
        assert_eq!(self.len(), other.len(), "potential length mismatch");
        Potential(self.0.iter().zip(&other.0).map(|(a, b)| a + t * b).collect())
    }

    /// `Σ_i t_i f_i`.
    pub fn combination(coords: &[f64], basis: &[Potential]) -> Potential {
        assert_eq!(coords.len(), basis.len(), "coordinate count mismatch");
        let n = basis.first().map_or(0, Potential::len);
        let mut out = vec![0.0; n];
        for (t, f) in coords.iter().zip(basis) {
            for (o, v) in out.iter_mut().zip(&f.0) {
                *o += t * v;
            }
        }
        Potential(out)
    }

    pub(crate) fn check_len(&self, n: usize) -> Result<()> {
        if self.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: self.len(),
            });
        }
        Ok(())
    }
}

impl std::ops::Add<&Potential> for &Potential {
    type Output = Potential;
    fn add(self, rhs: &Potential) -> Potential {
        self.axpy(1.0, rhs)
    }
}

impl std::ops::Sub<&Potential> for &Potential {
    type Output = Potential;
    fn sub(self, rhs: &Potential) -> Potential {
        self.axpy(-1.0, rhs)
    }
}

impl std::ops::Index<usize> for Potential {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MeasureKind {
    Signed,
    Positive,
    Probability,
}

/// A measure on the finite phase space, stored by its atom weights.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Measure {
    weights: Vec<f64>,
    kind: MeasureKind,
}

impl Measure {
    pub fn signed(weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFinite("measure weights"));
        }
        Ok(Self {
            weights,
            kind: MeasureKind::Signed,
        })
    }

    pub fn positive(weights: Vec<f64>) -> Result<Self> {
        let mut m = Self::signed(weights)?;
        if let Some((i, w)) = m.weights.iter().enumerate().find(|(_, &w)| w < 0.0) {
            return Err(Error::InvalidMeasure(format!("weight {i} = {w} is negative")));
        }
        m.kind = MeasureKind::Positive;
        Ok(m)
    }

    pub fn probability(weights: Vec<f64>) -> Result<Self> {
        let mut m = Self::positive(weights)?;
        let total = m.total();
        if (total - 1.0).abs() > PROBABILITY_TOL {
            return Err(Error::InvalidMeasure(format!("total mass {total} is not 1")));
        }
        m.kind = MeasureKind::Probability;
        Ok(m)
    }

    /// Normalizes nonnegative weights to a probability measure.
    pub fn normalized(weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::InvalidMeasure("total mass is not positive".into()));
        }
        Self::probability(weights.into_iter().map(|w| w / total).collect())
    }

    /// The strongest kind the weights satisfy.
    pub fn classify(weights: Vec<f64>) -> Result<Self> {
        let m = Self::signed(weights)?;
        if m.weights.iter().any(|&w| w < 0.0) {
            return Ok(m);
        }
        let kind = if (m.total() - 1.0).abs() <= PROBABILITY_TOL {
            MeasureKind::Probability
        } else {
            MeasureKind::Positive
        };
        Ok(Self { kind, ..m })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn kind(&self) -> MeasureKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// `μ(f) = Σ_x μ_x f(x)`.
    pub fn pair(&self, f: &[f64]) -> f64 {
        self.weights.iter().zip(f).map(|(m, v)| m * v).sum()
    }

    pub(crate) fn check_len(&self, n: usize) -> Result<()> {
        if self.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: self.len(),
            });
        }
        Ok(())
    }
}

/// Assembles the evolution operator of `system` in the indicator basis.
pub fn evolution_operator(system: &FiniteSystem, model: EvolutionModel) -> Result<PositiveOperator> {
    let n = system.n();
    let mismatch = |expected: &'static str| Error::ModelMismatch {
        model: model.name(),
        expected,
        found: system.dynamics().kind_name(),
    };
    match (model, system.dynamics()) {
        (EvolutionModel::CompositionShift, Dynamics::Deterministic { alpha }) => {
            let m = DMatrix::from_fn(n, n, |x, y| if alpha[x] == y { 1.0 } else { 0.0 });
            Ok(PositiveOperator::from_matrix_unchecked(m, WeightSide::Row))
        }
        (EvolutionModel::MarkovExpectation, Dynamics::Stochastic { kernel }) => Ok(
            PositiveOperator::from_matrix_unchecked(kernel.clone(), WeightSide::Row),
        ),
        (EvolutionModel::Transfer, Dynamics::Subshift { adjacency }) => {
            let m = DMatrix::from_fn(n, n, |x, y| f64::from(adjacency[(y, x)]));
            Ok(PositiveOperator::from_matrix_unchecked(m, WeightSide::Column))
        }
        (EvolutionModel::CompositionShift, _) => Err(mismatch("deterministic")),
        (EvolutionModel::MarkovExpectation, _) => Err(mismatch("stochastic")),
        (EvolutionModel::Transfer, _) => Err(mismatch("subshift")),
    }
}

/// `E_φ`: rows (or columns, for column-side operators) scaled by `e^φ`.
pub fn weight(e: &PositiveOperator, phi: &Potential) -> Result<PositiveOperator> {
    phi.check_len(e.dim())?;
    let n = e.dim();
    let scale: Vec<f64> = phi.values().iter().map(|v| v.exp()).collect();
    let m = match e.weight_side() {
        WeightSide::Row => DMatrix::from_fn(n, n, |i, j| scale[i] * e.get(i, j)),
        WeightSide::Column => DMatrix::from_fn(n, n, |i, j| e.get(i, j) * scale[j]),
    };
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("weighted operator (potential too large)"));
    }
    Ok(PositiveOperator::from_matrix_unchecked(m, e.weight_side()))
}

/// Max-entry residual of `E_φ·diag(f) − diag(f∘α)·E_φ`.
pub fn check_homological_identity(
    e_phi: &PositiveOperator,
    system: &FiniteSystem,
    f: &Potential,
) -> Result<f64> {
    let alpha = system.alpha().ok_or_else(|| {
        Error::Precondition(format!(
            "the homological identity needs deterministic dynamics, system is {}",
            system.dynamics().kind_name()
        ))
    })?;
    let n = system.n();
    if e_phi.dim() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: e_phi.dim(),
        });
    }
    f.check_len(n)?;
    let f_alpha = f.compose(alpha);
    let mut worst: f64 = 0.0;
    for x in 0..n {
        for y in 0..n {
            let lhs = e_phi.get(x, y) * f[y];
            let rhs = f_alpha[x] * e_phi.get(x, y);
            worst = worst.max((lhs - rhs).abs());
        }
    }
    Ok(worst)
}

/// States `i` whose row of `Eⁿ` is nonzero for every `n`, i.e. states with
/// arbitrarily long outgoing paths. Returned in increasing order.
pub fn flow_support(e: &PositiveOperator) -> Vec<usize> {
    let depth = path_depths(e);
    (0..e.dim()).filter(|&i| depth[i].is_none()).collect()
}

/// Smallest `n ≥ 1` with row `i` of `Eⁿ` equal to zero, or `None` when `i`
/// lies in the support.
pub fn unessential_index(e: &PositiveOperator, i: usize) -> Option<usize> {
    path_depths(e)[i].map(|len| len + 1)
}

/// Longest outgoing path length from each state, `None` when unbounded.
fn path_depths(e: &PositiveOperator) -> Vec<Option<usize>> {
    let n = e.dim();
    let succ: Vec<Vec<usize>> = (0..n).map(|x| e.successors(x).collect()).collect();
    // Peel states whose successors all have finite depth; what remains
    // reaches a cycle.
    let mut depth: Vec<Option<usize>> = vec![None; n];
    let mut pending: Vec<usize> = succ.iter().map(Vec::len).collect();
    let mut pred: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (x, s) in succ.iter().enumerate() {
        for &y in s {
            pred[y].push(x);
        }
    }
    let mut queue: Vec<usize> = (0..n).filter(|&x| pending[x] == 0).collect();
    for &x in &queue {
        depth[x] = Some(0);
    }
    while let Some(y) = queue.pop() {
        for &x in &pred[y] {
            pending[x] -= 1;
            if pending[x] == 0 {
                let d = succ[x]
                    .iter()
                    .map(|&z| depth[z].expect("all successors resolved") + 1)
                    .max()
                    .unwrap_or(0);
                depth[x] = Some(d);
                queue.push(x);
            }
        }
    }
    depth
}

/// Serialized system description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemFile {
    pub n: usize,
    pub dynamics: DynamicsFile,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub potential: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<String>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum DynamicsFile {
    Map { alpha: Vec<usize> },
    Stochastic { kernel: Vec<Vec<f64>> },
    Subshift { adjacency: Vec<Vec<f64>> },
}

impl SystemFile {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Validates the description and returns the system with its potential
    /// (zero when absent).
    pub fn build(&self) -> Result<(FiniteSystem, Potential)> {
        let system = match &self.dynamics {
            DynamicsFile::Map { alpha } => FiniteSystem::deterministic(alpha.clone())?,
            DynamicsFile::Stochastic { kernel } => FiniteSystem::stochastic(kernel)?,
            DynamicsFile::Subshift { adjacency } => FiniteSystem::subshift(adjacency)?,
        };
        if system.n() != self.n {
            return Err(Error::InvalidSystem(format!(
                "declared n = {} but dynamics has {} states",
                self.n,
                system.n()
            )));
        }
        let system = match &self.labels {
            Some(l) => system.with_labels(l.clone())?,
            None => system,
        };
        let phi = match &self.potential {
            Some(v) => {
                let p = Potential::new(v.clone())?;
                p.check_len(self.n)?;
                p
            }
            None => Potential::zeros(self.n),
        };
        Ok((system, phi))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn three_cycle() -> FiniteSystem {
        FiniteSystem::deterministic(vec![1, 2, 0]).unwrap()
    }

    #[test]
    fn composition_operator_of_three_cycle_is_a_permutation() {
        let e = evolution_operator(&three_cycle(), EvolutionModel::CompositionShift).unwrap();
        let expected = PositiveOperator::from_rows(&[
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
            vec![1.0, 0.0, 0.0],
        ])
        .unwrap();
        assert_eq!(e.matrix(), expected.matrix());
        assert_eq!(e.apply(&[10.0, 20.0, 30.0]), vec![20.0, 30.0, 10.0]);
    }

    #[test]
    fn markov_expectation_is_the_kernel() {
        let s = FiniteSystem::stochastic(&[vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        let e = evolution_operator(&s, EvolutionModel::MarkovExpectation).unwrap();
        assert_eq!(e.rows(), vec![vec![0.5, 0.5], vec![0.5, 0.5]]);
        assert_eq!(e.apply(&[1.0, 1.0]), vec![1.0, 1.0]);
    }

    #[test]
    fn transfer_operator_is_the_transposed_adjacency() {
        let s = FiniteSystem::subshift(&[vec![1.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let e = evolution_operator(&s, EvolutionModel::Transfer).unwrap();
        assert_eq!(e.rows(), vec![vec![1.0, 1.0], vec![1.0, 0.0]]);
        assert_eq!(e.weight_side(), WeightSide::Column);

        let s = FiniteSystem::subshift(&[vec![0.0, 1.0], vec![0.0, 1.0]]).unwrap();
        let e = evolution_operator(&s, EvolutionModel::Transfer).unwrap();
        assert_eq!(e.rows(), vec![vec![0.0, 0.0], vec![1.0, 1.0]]);
    }

    #[test]
    fn model_mismatch_names_both_sides() {
        let err = evolution_operator(&three_cycle(), EvolutionModel::Transfer).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("transfer") && msg.contains("deterministic"), "{msg}");
    }

    #[test]
    fn system_invariants_are_enforced() {
        assert!(FiniteSystem::deterministic(vec![0, 3, 1]).is_err());
        assert!(FiniteSystem::stochastic(&[vec![0.5, 0.6], vec![1.0, 0.0]]).is_err());
        assert!(FiniteSystem::stochastic(&[vec![1.5, -0.5], vec![1.0, 0.0]]).is_err());
        assert!(FiniteSystem::subshift(&[vec![1.0, 0.5], vec![1.0, 0.0]]).is_err());
        assert!(FiniteSystem::subshift(&[vec![1.0, 1.0]]).is_err());
    }

    #[test]
    fn stochastic_rows_are_renormalized_exactly() {
        let third = 0.333_333_333_333_333_3;
        let s = FiniteSystem::stochastic(&[vec![third, third, third], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]])
            .unwrap();
        let e = s.operator();
        let row: f64 = (0..3).map(|j| e.get(0, j)).sum();
        assert!((row - 1.0).abs() <= f64::EPSILON);
    }

    #[test]
    fn weight_with_zero_and_constant_potentials() {
        let e = three_cycle().operator();
        assert_eq!(weight(&e, &Potential::zeros(3)).unwrap(), e);
        let c = 0.7_f64;
        let w = weight(&e, &Potential::constant(3, c)).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(w.get(i, j), e.get(i, j) * c.exp());
            }
        }
    }

    #[test]
    fn weighted_three_cycle_cubed_is_scalar() {
        let (a, b, c) = (0.3, -1.1, 2.0);
        let e = weight(&three_cycle().operator(), &Potential::new(vec![a, b, c]).unwrap()).unwrap();
        let cube = e.power(3);
        let s = f64::exp(a + b + c);
        for i in 0..3 {
            for j in 0..3 {
                let expected = if i == j { s } else { 0.0 };
                assert!((cube.get(i, j) - expected).abs() <= 1e-12 * s);
            }
        }
    }

    #[test]
    fn column_weighting_for_transfer_operators() {
        let s = FiniteSystem::subshift(&[vec![1.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let e = s.operator();
        let w = weight(&e, &Potential::new(vec![0.0, 1.0]).unwrap()).unwrap();
        // (E_φ f)(x) = Σ_{y→x} e^{φ(y)} f(y)
        assert_eq!(w.get(0, 1), 1f64.exp());
        assert_eq!(w.get(1, 0), 1.0);
    }

    #[test]
    fn homological_identity_holds_for_composition_operators() {
        let s = three_cycle();
        let e = weight(&s.operator(), &Potential::new(vec![0.2, 0.9, -0.4]).unwrap()).unwrap();
        let f = Potential::new(vec![3.0, -1.0, 0.5]).unwrap();
        assert!(check_homological_identity(&e, &s, &f).unwrap() <= 1e-12);
    }

    #[test]
    fn homological_identity_with_constant_function_vanishes() {
        let s = three_cycle();
        let e = PositiveOperator::from_rows(&[
            vec![0.3, 1.0, 2.0],
            vec![0.0, 0.5, 1.0],
            vec![4.0, 0.0, 0.1],
        ])
        .unwrap();
        assert_eq!(check_homological_identity(&e, &s, &Potential::constant(3, 2.5)).unwrap(), 0.0);
    }

    #[test]
    fn homological_identity_requires_a_map() {
        let s = FiniteSystem::subshift(&[vec![1.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let e = s.operator();
        let err = check_homological_identity(&e, &s, &Potential::zeros(2)).unwrap_err();
        assert!(matches!(err, Error::Precondition(_)));
    }

    #[test]
    fn support_of_nilpotent_operator_is_empty() {
        let e = PositiveOperator::from_rows(&[vec![0.0, 1.0], vec![0.0, 0.0]]).unwrap();
        assert!(flow_support(&e).is_empty());
        assert!(e.is_nilpotent());
        assert_eq!(unessential_index(&e, 0), Some(2));
        assert_eq!(unessential_index(&e, 1), Some(1));
    }

    #[test]
    fn support_of_irreducible_operator_is_everything() {
        let e = PositiveOperator::from_rows(&[vec![0.0, 1.0], vec![1.0, 1.0]]).unwrap();
        assert_eq!(flow_support(&e), vec![0, 1]);
    }

    #[test]
    fn support_excludes_isolated_dead_end() {
        let mut rows = vec![vec![0.0; 4]; 4];
        rows[0][1] = 1.0;
        rows[1][2] = 1.0;
        rows[2][2] = 1.0;
        let e = PositiveOperator::from_rows(&rows).unwrap();
        assert_eq!(flow_support(&e), vec![0, 1, 2]);
        // E, E², E³ all keep rows 0..2 nonzero and row 3 zero
        for k in 1..=3 {
            let p = e.power(k);
            for i in 0..3 {
                assert!((0..4).any(|j| p.get(i, j) > 0.0));
            }
            assert!((0..4).all(|j| p.get(3, j) == 0.0));
        }
        assert_eq!(unessential_index(&e, 3), Some(1));
    }

    #[test]
    fn system_file_round_trip() {
        let text = r#"{"n": 3, "dynamics": {"type": "map", "alpha": [1, 2, 0]},
                       "potential": [1, 2, 3], "labels": ["a", "b", "c"]}"#;
        let file = SystemFile::from_json(text).unwrap();
        let (s, phi) = file.build().unwrap();
        assert_eq!(s.alpha(), Some(&[1, 2, 0][..]));
        assert_eq!(phi.values(), &[1.0, 2.0, 3.0]);
        assert_eq!(s.label(1), "b");

        let bad = r#"{"n": 2, "dynamics": {"type": "subshift", "adjacency": [[1, 2], [1, 0]]}}"#;
        assert!(SystemFile::from_json(bad).unwrap().build().is_err());
        let wrong_n = r#"{"n": 4, "dynamics": {"type": "map", "alpha": [0]}}"#;
        assert!(SystemFile::from_json(wrong_n).unwrap().build().is_err());
    }

    #[test]
    fn measure_kinds() {
        assert_eq!(Measure::classify(vec![0.5, 0.5]).unwrap().kind(), MeasureKind::Probability);
        assert_eq!(Measure::classify(vec![1.0, 1.0]).unwrap().kind(), MeasureKind::Positive);
        assert_eq!(Measure::classify(vec![-1.0, 2.0]).unwrap().kind(), MeasureKind::Signed);
        assert!(Measure::probability(vec![0.5, 0.6]).is_err());
        assert!(Measure::positive(vec![0.5, -0.6]).is_err());
        assert_eq!(Measure::probability(vec![0.25, 0.75]).unwrap().pair(&[4.0, 0.0]), 1.0);
    }
}
