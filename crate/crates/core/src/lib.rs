//! Thermodynamic formalism for positive flows and processes on finite phase
//! spaces.
//!
//! A finite system (deterministic map, Markov kernel or subshift of finite
//! type) induces a nonnegative evolution operator `E`. Weighting it by a
//! potential gives `E_φ = e^φ E`, whose log spectral radius is the spectral
//! potential `λ(φ)`. On top of that the crate provides:
//!
//! * [`spectral`]: Perron data, Gibbs measures, the resolvent eigen-state
//!   construction and a max-cycle-mean oracle for deterministic maps.
//! * [`convex`]: dual entropy, action functionals, Legendre inversion and the
//!   conditional action (rate function on a finite set of observables).
//! * [`ldp`]: empirical measures, tilted path distributions, sensitive
//!   states and exact/Monte-Carlo law-of-large-numbers and large-deviation
//!   probabilities.
//! * [`process`]: Markov cylinder measures of the suspension and support
//!   correspondence.
//! * [`algebra`]: the binomial square identity and the nonnegative product
//!   decomposition on finite product sets.
//! * [`cli`]: the batch front-end used by the `posflow` binary.

pub mod algebra;
pub mod cli;
pub mod convex;
pub mod error;
pub mod ldp;
pub mod process;
pub mod spectral;
pub mod system;
pub mod value;

pub use error::{Error, Result};
pub use system::{
    evolution_operator, weight, EvolutionModel, FiniteSystem, Measure, MeasureKind,
    PositiveOperator, Potential, WeightSide,
};
pub use value::ExtReal;
