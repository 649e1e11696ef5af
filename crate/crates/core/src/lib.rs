//! Lipschitz bounds for Brenier maps between densities `Z⁻¹(1 + U/p)^{−p}`,
//! radial and one-dimensional monotone transport maps, and an empirical
//! verification harness comparing the two.

// NaN-rejecting guards are written `!(x > y)`; frozen reference values keep
// every digit they were computed with.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::excessive_precision)]

pub mod bounds;
pub mod constants;
pub mod error;
pub mod extparam;
pub mod interp;
mod mass;
pub mod potentials;
pub mod quadrature;
pub mod transport;
pub mod verify;

pub use bounds::{
    combine, finite_global_sharp_bound, global_bound, local_bound, mglob_uniformity_check, BoundReport, ExtReal,
    Regime, UniformityGrid,
};
pub use constants::{structural, StructuralConstants};
pub use error::{Error, Result};
pub use extparam::{theta, unnormalized_density, ExtParam, Radius, ThetaEval};
pub use potentials::{
    normalization, reference_integral, unit_ball_volume, HessBound, Jet, NormConstant, PotentialSpec, Profile,
    RadialTable,
};
pub use transport::{
    default_grid, lipschitz_empirical, log_grid, quantile_map_1d, radial_map, second_variation_check, slope_fit,
    LipschitzEstimate, RadialMap, TransportSolver,
};
pub use verify::{run_scenario, run_scenarios, Expected, Scenario, SolverSettings, VerifyReport};
