//! Batch front-end: one JSON config per run, one subcommand per computation,
//! JSON reports plus CSV tables and two-column plot files in the output
//! directory.
//!
//! Exit codes: 0 on success, 1 when a numeric routine did not converge (the
//! partial report is still written), 2 on configuration errors.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::algebra::{lemma32_evaluate, theorem34_decompose, ProductFunction};
use crate::convex::{conditional_action, dual_entropy, EntropyOptions};
use crate::error::{Error, Result};
use crate::ldp::{
    basis_coordinates, ldp_asymptotics, lln_probability, write_ldp_csv, write_plot_data, Mode, SensitiveState,
};
use crate::process::{
    cylinder_measure, right_eigenstate_check, spectral_potential_restriction_check,
    suspension_support_correspondence, CylinderFunction, DEFAULT_DEPTH,
};
use crate::spectral::{max_cycle_mean, perron_at};
use crate::system::{
    evolution_operator, flow_support, unessential_index, weight, EvolutionModel, FiniteSystem, Measure,
    PositiveOperator, Potential, SystemFile,
};
use crate::value::ExtReal;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
const ORACLE_TOL: f64 = 1e-10;

#[derive(Parser, Debug)]
#[command(name = "posflow", version, about = "Spectral potentials, entropy and large deviations on finite systems")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Spectral potential, Perron data and the cycle-mean oracle.
    Pressure(Common),
    /// Dual entropy of a measure.
    Entropy(Common),
    /// Conditional action over a grid of moment vectors.
    Rate(Common),
    /// Probabilities of law-of-large-numbers deviations.
    Lln(Common),
    /// Large-deviation asymptotics of window probabilities.
    Ldp(Common),
    /// Flow support and trajectory-word correspondence.
    Support(Common),
    /// Cylinder measures of the Markov suspension.
    Suspension(Common),
    /// Square identity and nonnegative product decomposition.
    Algebra(Common),
}

impl Command {
    fn parts(&self) -> (&'static str, &Common) {
        match self {
            Command::Pressure(c) => ("pressure", c),
            Command::Entropy(c) => ("entropy", c),
            Command::Rate(c) => ("rate", c),
            Command::Lln(c) => ("lln", c),
            Command::Ldp(c) => ("ldp", c),
            Command::Support(c) => ("support", c),
            Command::Suspension(c) => ("suspension", c),
            Command::Algebra(c) => ("algebra", c),
        }
    }
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Run configuration (JSON).
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub potential: Option<Vec<f64>>,
    #[arg(long, value_enum)]
    pub model: Option<ModelArg>,
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub target: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    pub horizons: Option<Vec<usize>>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeName>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long)]
    pub n_extra: Option<usize>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long)]
    pub grad_tol: Option<f64>,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
pub enum ModelArg {
    CompositionShift,
    MarkovExpectation,
    Transfer,
}

impl From<ModelArg> for EvolutionModel {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::CompositionShift => EvolutionModel::CompositionShift,
            ModelArg::MarkovExpectation => EvolutionModel::MarkovExpectation,
            ModelArg::Transfer => EvolutionModel::Transfer,
        }
    }
}

#[derive(ValueEnum, Serialize, Deserialize, Debug, Clone, Copy, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum ModeName {
    Exact,
    Enumerate,
    MonteCarlo,
}

/// A system given inline or as a path relative to the config file.
#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
#[serde(untagged)]
pub enum SystemSource {
    Path(String),
    Inline(SystemFile),
}

#[derive(Serialize, Deserialize, Debug, Clone, Copy, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum NamedMeasure {
    /// Gibbs measure of the configured potential.
    Gibbs,
    Uniform,
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
#[serde(untagged)]
pub enum MeasureSpec {
    Named(NamedMeasure),
    Weights(Vec<f64>),
}

#[derive(Serialize, Deserialize, Debug, Clone, Copy, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum NamedState {
    /// Left Perron vector of `E_φ`.
    Eigen,
    Uniform,
}

/// The left functional `ν` that starts the path measure.
#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
#[serde(untagged)]
pub enum StateSpec {
    Named(NamedState),
    Mixture { mixture: Vec<Vec<f64>> },
    Functional { functional: Vec<f64> },
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DecomposeSpec {
    pub axes: Vec<usize>,
    pub terms: Vec<Vec<Vec<f64>>>,
    pub eps: f64,
}

#[derive(Serialize, Deserialize, Debug, Clone, Copy, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SquarePoint {
    pub x: f64,
    pub n: usize,
}

/// Everything a run reads. Fields a command does not use are ignored by it.
#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub system: SystemSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<EvolutionModel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub potential: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measure: Option<MeasureSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iter: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grad_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub basis: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u_grid: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observable: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizons: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<ModeName>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state: Option<StateSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_extra: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub psi: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub words: Option<Vec<Vec<usize>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decompose: Option<DecomposeSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub square: Option<Vec<SquarePoint>>,
}

impl RunConfig {
    /// Parses a config; errors carry serde's line and column.
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Loads the config, resolves a path-valued system against the config's
    /// directory and applies command-line overrides.
    pub fn load(path: &Path, common: &Common) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
        let mut cfg = Self::from_json(&text)?;
        if let SystemSource::Path(p) = &cfg.system {
            let full = path.parent().unwrap_or(Path::new(".")).join(p);
            let text = fs::read_to_string(&full)
                .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", full.display()))))?;
            cfg.system = SystemSource::Inline(SystemFile::from_json(&text)?);
        }
        cfg.apply(common);
        Ok(cfg)
    }

    fn apply(&mut self, c: &Common) {
        macro_rules! over {
            ($($field:ident),*) => { $( if let Some(v) = &c.$field { self.$field = Some(v.clone().into()); } )* };
        }
        over!(seed, potential, eps, delta, target, horizons, mode, samples, depth, n_extra, max_iter, grad_tol);
        if let Some(m) = c.model {
            self.model = Some(m.into());
        }
    }

    fn system_file(&self) -> Result<&SystemFile> {
        match &self.system {
            SystemSource::Inline(s) => Ok(s),
            SystemSource::Path(p) => Err(Error::Precondition(format!("system file {p} was not loaded"))),
        }
    }
}

/// The loaded system with its operator and potential.
struct Setup {
    system: FiniteSystem,
    e: PositiveOperator,
    phi: Potential,
}

impl Setup {
    fn new(cfg: &mut RunConfig) -> Result<Self> {
        let (system, file_phi) = cfg.system_file()?.build()?;
        let model = *cfg.model.get_or_insert(system.default_model());
        let e = evolution_operator(&system, model)?;
        let phi = match &cfg.potential {
            Some(v) => Potential::new(v.clone())?,
            None => file_phi,
        };
        phi.check_len(system.n())?;
        cfg.potential = Some(phi.values().to_vec());
        Ok(Self { system, e, phi })
    }

    fn n(&self) -> usize {
        self.system.n()
    }

    fn measure(&self, spec: &MeasureSpec) -> Result<Measure> {
        match spec {
            MeasureSpec::Weights(w) => Measure::classify(w.clone()),
            MeasureSpec::Named(NamedMeasure::Uniform) => Measure::probability(vec![1.0 / self.n() as f64; self.n()]),
            MeasureSpec::Named(NamedMeasure::Gibbs) => {
                let data = perron_at(&self.e, &self.phi)?;
                data.gibbs.ok_or(Error::Nilpotent)
            }
        }
    }

    fn state(&self, spec: &StateSpec) -> Result<Vec<f64>> {
        match spec {
            StateSpec::Named(NamedState::Uniform) => Ok(vec![1.0 / self.n() as f64; self.n()]),
            StateSpec::Named(NamedState::Eigen) => {
                let data = perron_at(&self.e, &self.phi)?;
                if data.is_nilpotent() {
                    return Err(Error::Nilpotent);
                }
                Ok(data.left_state())
            }
            StateSpec::Functional { functional } => {
                if functional.len() != self.n() {
                    return Err(Error::DimensionMismatch {
                        expected: self.n(),
                        found: functional.len(),
                    });
                }
                Ok(functional.clone())
            }
            StateSpec::Mixture { mixture } => {
                let phis = mixture.iter().map(|v| Potential::new(v.clone())).collect::<Result<Vec<_>>>()?;
                Ok(SensitiveState::new(&self.e, &phis)?.functional())
            }
        }
    }

    fn potentials(&self, rows: &[Vec<f64>]) -> Result<Vec<Potential>> {
        rows.iter()
            .map(|v| {
                let p = Potential::new(v.clone())?;
                p.check_len(self.n())?;
                Ok(p)
            })
            .collect()
    }
}

fn required<'a, T>(field: &'a Option<T>, name: &str) -> Result<&'a T> {
    field
        .as_ref()
        .ok_or_else(|| Error::Precondition(format!("config is missing `{name}`")))
}

/// What a command produced.
pub struct Outcome {
    pub report: Value,
    /// Lines for stdout.
    pub table: Vec<String>,
    pub converged: bool,
}

fn ext(v: ExtReal) -> Value {
    serde_json::to_value(v).expect("extended reals serialize")
}

fn fmt_ext(v: ExtReal) -> String {
    match v {
        ExtReal::Finite(x) => format!("{x:.9}"),
        ExtReal::NegInfinity => "-inf".into(),
    }
}

fn cmd_pressure(cfg: &mut RunConfig, _out: &Path) -> Result<Outcome> {
    let s = Setup::new(cfg)?;
    let data = perron_at(&s.e, &s.phi)?;
    let mut table = vec![format!("lambda  {}", fmt_ext(data.lambda))];
    let oracle = if s.system.alpha().is_some() {
        let mcm = max_cycle_mean(&s.system, &s.phi)?;
        let agree = data.lambda.finite().is_some_and(|l| (l - mcm).abs() <= ORACLE_TOL);
        table.push(format!("oracle  {mcm:.9}  agreement {agree}"));
        json!({"max_cycle_mean": mcm, "agreement": agree, "tolerance": ORACLE_TOL})
    } else {
        Value::Null
    };
    let (right_res, left_res) = if data.is_nilpotent() {
        (0.0, 0.0)
    } else {
        data.eigen_residuals(&weight(&s.e, &s.phi.shifted(-s.phi.values().iter().copied().fold(f64::NEG_INFINITY, f64::max)))?)
    };
    Ok(Outcome {
        report: json!({
            "lambda": ext(data.lambda),
            "perron": {
                "right_vec": data.right_vec,
                "left_vec": data.left_vec,
                "gibbs": data.gibbs_weights(),
                "irreducible": data.irreducible,
                "simple": data.simple,
                "degenerate": data.degenerate,
                "components": data.components,
                "right_residual": right_res,
                "left_residual": left_res,
            },
            "oracle": oracle,
        }),
        table,
        converged: true,
    })
}

fn cmd_entropy(cfg: &mut RunConfig, _out: &Path) -> Result<Outcome> {
    let s = Setup::new(cfg)?;
    let spec = required(&cfg.measure, "measure")?.clone();
    let mu = s.measure(&spec)?;
    let defaults = EntropyOptions::default();
    let opts = EntropyOptions {
        max_iter: *cfg.max_iter.get_or_insert(defaults.max_iter),
        grad_tol: *cfg.grad_tol.get_or_insert(defaults.grad_tol),
    };
    let r = dual_entropy(&s.e, &mu, &opts)?;
    let lambda = perron_at(&s.e, &s.phi)?.lambda;
    let bound = lambda.add_f64(-mu.pair(s.phi.values()));
    let gap = match (bound, r.value) {
        (ExtReal::Finite(b), ExtReal::Finite(v)) => json!(b - v),
        _ => Value::Null,
    };
    let converged = !r.value.is_finite() || r.converged;
    let mut table = vec![format!("S       {}", fmt_ext(r.value))];
    if let Some(reason) = &r.reason {
        table.push(format!("reason  {reason}"));
    }
    table.push(format!("young   lambda - mu(phi) = {}", fmt_ext(bound)));
    Ok(Outcome {
        report: json!({
            "entropy": ext(r.value),
            "converged": r.converged,
            "approximate": r.approximate,
            "iterations": r.iterations,
            "reason": r.reason,
            "argmin": r.argmin_potential.as_ref().map(|p| p.values().to_vec()),
            "measure": mu.weights(),
            "young": {"lambda": ext(lambda), "bound": ext(bound), "gap": gap},
        }),
        table,
        converged,
    })
}

fn cmd_rate(cfg: &mut RunConfig, out: &Path) -> Result<Outcome> {
    let s = Setup::new(cfg)?;
    let basis = s.potentials(required(&cfg.basis, "basis")?)?;
    let grid = required(&cfg.u_grid, "u_grid")?.clone();
    let t0 = basis_coordinates(&s.phi, &basis)?;
    let mut rows = Vec::with_capacity(grid.len());
    let mut csv = String::new();
    let k = basis.len();
    csv.push_str(&(1..=k).map(|i| format!("u{i}")).collect::<Vec<_>>().join(","));
    csv.push_str(",tau,converged,boundary\n");
    let mut converged = true;
    let mut plot = Vec::new();
    for u in &grid {
        let r = conditional_action(&s.e, &basis, &t0, u)?;
        converged &= r.converged || r.diverged || r.boundary;
        csv.push_str(&format!(
            "{},{},{},{}\n",
            u.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(","),
            fmt_ext(r.tau),
            r.converged,
            r.boundary
        ));
        if k == 1 {
            plot.push((u[0], r.tau));
        }
        rows.push(json!({"u": u, "tau": ext(r.tau), "t_star": r.t_star, "converged": r.converged, "diverged": r.diverged, "boundary": r.boundary}));
    }
    fs::write(out.join("rate.csv"), &csv)?;
    if k == 1 {
        write_plot_data(&plot, &out.join("rate.dat"))?;
    }
    let table = csv.lines().map(String::from).collect();
    Ok(Outcome {
        report: json!({"t0": t0, "rows": rows}),
        table,
        converged,
    })
}

fn mode_of(cfg: &mut RunConfig) -> Mode {
    let name = *cfg.mode.get_or_insert(ModeName::Exact);
    match name {
        ModeName::Exact => Mode::ExactDp,
        ModeName::Enumerate => Mode::Enumerate,
        ModeName::MonteCarlo => Mode::MonteCarlo {
            seed: *cfg.seed.get_or_insert(0),
            samples: *cfg.samples.get_or_insert(10_000),
        },
    }
}

fn cmd_lln(cfg: &mut RunConfig, out: &Path) -> Result<Outcome> {
    let s = Setup::new(cfg)?;
    let f = Potential::new(required(&cfg.observable, "observable")?.clone())?;
    f.check_len(s.n())?;
    let a = match cfg.target {
        Some(a) => a,
        None => {
            let data = perron_at(&s.e, &s.phi)?;
            if data.is_nilpotent() {
                return Err(Error::Nilpotent);
            }
            let a = data.gibbs_weights().iter().zip(f.values()).map(|(w, v)| w * v).sum();
            cfg.target = Some(a);
            a
        }
    };
    let eps = *cfg.eps.get_or_insert(0.1);
    let horizons = cfg.horizons.get_or_insert_with(|| vec![50, 100, 200]).clone();
    let nu = s.state(cfg.state.get_or_insert(StateSpec::Named(NamedState::Eigen)))?;
    let mode = mode_of(cfg);
    let mut csv = String::from("n,probability,lower,upper\n");
    let mut rows = Vec::new();
    let mut plot = Vec::new();
    for &n in &horizons {
        let est = lln_probability(&s.e, &s.phi, &nu, &f, a, eps, n, mode)?;
        csv.push_str(&format!("{n},{:.12e},{:.12e},{:.12e}\n", est.probability, est.lower, est.upper));
        plot.push((n as f64, est.log_probability));
        rows.push(est);
    }
    fs::write(out.join("lln.csv"), &csv)?;
    write_plot_data(&plot, &out.join("lln.dat"))?;
    Ok(Outcome {
        report: json!({"target": a, "state": nu, "rows": rows}),
        table: csv.lines().map(String::from).collect(),
        converged: true,
    })
}

fn cmd_ldp(cfg: &mut RunConfig, out: &Path) -> Result<Outcome> {
    let s = Setup::new(cfg)?;
    let basis = s.potentials(required(&cfg.basis, "basis")?)?;
    let u = required(&cfg.u, "u")?.clone();
    let delta = *cfg.delta.get_or_insert(0.01);
    let horizons = cfg.horizons.get_or_insert_with(|| vec![100, 200, 400]).clone();
    let nu = s.state(cfg.state.get_or_insert(StateSpec::Named(NamedState::Eigen)))?;
    let rows = ldp_asymptotics(&s.e, &s.phi, &nu, &basis, &u, delta, &horizons)?;
    write_ldp_csv(&rows, &out.join("ldp.csv"))?;
    let plot: Vec<(f64, ExtReal)> = rows.iter().map(|r| (r.n as f64, r.estimate)).collect();
    write_plot_data(&plot, &out.join("ldp.dat"))?;
    let table = fs::read_to_string(out.join("ldp.csv"))?.lines().map(String::from).collect();
    Ok(Outcome {
        report: json!({"state": nu, "rows": rows}),
        table,
        converged: true,
    })
}

fn cmd_support(cfg: &mut RunConfig, _out: &Path) -> Result<Outcome> {
    let s = Setup::new(cfg)?;
    let support = flow_support(&s.e);
    let indices: Vec<Value> = (0..s.n())
        .map(|i| match unessential_index(&s.e, i) {
            Some(k) => json!(k),
            None => Value::Null,
        })
        .collect();
    let mut table = vec![format!(
        "support  [{}]",
        support.iter().map(|&i| s.system.label(i)).collect::<Vec<_>>().join(", ")
    )];
    let correspondence = if s.system.alpha().is_some() {
        let depth = *cfg.depth.get_or_insert(DEFAULT_DEPTH);
        let r = suspension_support_correspondence(&s.e, &s.system, depth)?;
        table.push(format!(
            "depth {depth}: {} surviving, {} annihilated, pass {}",
            r.surviving.len(),
            r.annihilated,
            r.pass
        ));
        serde_json::to_value(r)?
    } else {
        Value::Null
    };
    let restriction = match &cfg.psi {
        Some(psi) => {
            let psi = Potential::new(psi.clone())?;
            let r = spectral_potential_restriction_check(&s.e, &s.system, &s.phi, &psi)?;
            table.push(format!("restriction residual {r:e}"));
            json!(r)
        }
        None => Value::Null,
    };
    Ok(Outcome {
        report: json!({
            "support": support,
            "unessential_index": indices,
            "correspondence": correspondence,
            "restriction_residual": restriction,
        }),
        table,
        converged: true,
    })
}

fn cmd_suspension(cfg: &mut RunConfig, out: &Path) -> Result<Outcome> {
    let s = Setup::new(cfg)?;
    let spec = cfg.measure.get_or_insert(MeasureSpec::Named(NamedMeasure::Gibbs)).clone();
    let mu = match spec {
        MeasureSpec::Named(NamedMeasure::Gibbs) => {
            // stationary measure of the unweighted operator
            let data = perron_at(&s.e, &Potential::zeros(s.n()))?;
            Measure::probability(data.left_state())?
        }
        other => s.measure(&other)?,
    };
    let depth = *cfg.depth.get_or_insert(2);
    let n_extra = *cfg.n_extra.get_or_insert(0);
    let words = cylinder_measure(&s.e, &mu, depth)?;
    let mut csv = String::from("word,probability\n");
    for (w, p) in &words {
        csv.push_str(&format!(
            "{},{p:.15}\n",
            w.iter().map(|&x| s.system.label(x)).collect::<Vec<_>>().join(" ")
        ));
    }
    fs::write(out.join("suspension.csv"), &csv)?;
    let probes: Vec<CylinderFunction> = match &cfg.words {
        Some(ws) => ws
            .iter()
            .map(|w| CylinderFunction::word_indicator(s.n(), w))
            .collect::<Result<_>>()?,
        None => words
            .iter()
            .map(|(w, _)| CylinderFunction::word_indicator(s.n(), w))
            .collect::<Result<_>>()?,
    };
    let probe_values: Vec<f64> = probes
        .iter()
        .map(|f| crate::process::suspension_state(&s.e, &mu, f, n_extra))
        .collect::<Result<_>>()?;
    let residual = right_eigenstate_check(&s.e, &mu, &probes, 4)?;
    let mut table: Vec<String> = csv.lines().map(String::from).collect();
    table.push(format!("right eigen-state residual {residual:e}"));
    Ok(Outcome {
        report: json!({
            "mu": mu.weights(),
            "words": words.iter().map(|(w, p)| json!({"word": w, "probability": p})).collect::<Vec<_>>(),
            "probes": probe_values,
            "right_eigen_residual": residual,
        }),
        table,
        converged: true,
    })
}

fn cmd_algebra(cfg: &mut RunConfig, _out: &Path) -> Result<Outcome> {
    let square = cfg
        .square
        .get_or_insert_with(|| vec![SquarePoint { x: 0.5, n: 5 }, SquarePoint { x: 1.0, n: 3 }])
        .clone();
    let spec = cfg
        .decompose
        .get_or_insert_with(|| DecomposeSpec {
            axes: vec![2, 2],
            terms: vec![vec![vec![0.0, 1.0], vec![0.0, 1.0]]],
            eps: 0.25,
        })
        .clone();
    let mut table = Vec::new();
    let mut squares = Vec::new();
    for p in &square {
        let r = lemma32_evaluate(p.x, p.n)?;
        table.push(format!("square x={} n={}: residual {:e}", p.x, p.n, r.residual));
        squares.push(r);
    }
    let f = ProductFunction::new(spec.axes.clone(), spec.terms.clone())?;
    let d = theorem34_decompose(&f, spec.eps)?;
    let nonneg = d.function.all_factors_nonnegative();
    table.push(format!(
        "decompose: {} terms, factors nonnegative {nonneg}, eps' {:e} (bound {:e}), residual {:e}",
        d.function.len(),
        d.eps_realized,
        d.eps_bound,
        d.residual
    ));
    Ok(Outcome {
        report: json!({
            "square_identity": squares,
            "decomposition": {
                "terms": d.function.len(),
                "groups": d.groups,
                "factors_nonnegative": nonneg,
                "eps_realized": d.eps_realized,
                "eps_bound": d.eps_bound,
                "residual": d.residual,
            },
        }),
        table,
        converged: true,
    })
}

/// Config errors map to 2, failed numerics to 1.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Nilpotent | Error::ZeroNormalizer(_) | Error::Mismatch(_) => 1,
        _ => 2,
    }
}

/// Runs one command and writes `<command>.json` into the output directory.
pub fn execute(command: &Command) -> Result<(i32, Vec<String>)> {
    let (name, common) = command.parts();
    let mut cfg = RunConfig::load(&common.config, common)?;
    fs::create_dir_all(&common.out)?;
    let out = common.out.as_path();
    let outcome = match command {
        Command::Pressure(_) => cmd_pressure(&mut cfg, out),
        Command::Entropy(_) => cmd_entropy(&mut cfg, out),
        Command::Rate(_) => cmd_rate(&mut cfg, out),
        Command::Lln(_) => cmd_lln(&mut cfg, out),
        Command::Ldp(_) => cmd_ldp(&mut cfg, out),
        Command::Support(_) => cmd_support(&mut cfg, out),
        Command::Suspension(_) => cmd_suspension(&mut cfg, out),
        Command::Algebra(_) => cmd_algebra(&mut cfg, out),
    }?;
    let report = json!({
        "command": name,
        "version": VERSION,
        "config": cfg,
        "converged": outcome.converged,
        "result": outcome.report,
    });
    let mut text = serde_json::to_string_pretty(&report)?;
    text.push('\n');
    fs::write(out.join(format!("{name}.json")), text)?;
    Ok((if outcome.converged { 0 } else { 1 }, outcome.table))
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli.command) {
        Ok((code, table)) => {
            let mut stdout = std::io::stdout().lock();
            for line in table {
                let _ = writeln!(stdout, "{line}");
            }
            code
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
