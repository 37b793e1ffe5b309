//! Numerical toolkit for complex matrix martingales of multi-type
//! Crump–Mode–Jagers branching processes.

pub mod error;
pub mod kernels;
pub mod martingale;
pub mod models;
pub mod montecarlo;
pub mod population;
pub mod rng;
pub mod spectral;

pub use error::{Error, ErrorClass, Result};
pub use kernels::{exp_matrix, hs_norm, kronecker, op_norm, spectral_radius, CMatrix, ExpMatrix, PerronRoot};
pub use models::{builtin, validate_assumptions, Ancestor, OffspringModel, PointProcessSpec, ValidationReport};
pub use num_complex::Complex64;
pub use spectral::{
    analyze, check_primitive_case, find_malthusian, find_roots, laurent_coeffs, verify_identities,
    CharacteristicRoot, LaurentData, PerronData, Region, SpectralReport,
};
pub use martingale::{
    check_moment_condition, eval_w_characteristic, eval_w_coming_gen, eval_w_increments, increment_matrix,
    tail_bound, MartingaleValue, Representation,
};
pub use population::{coming_generation, counting_process, simulate, ComingGeneration, PopulationTree, SimOptions};
pub use montecarlo::{
    boundedness_diagnostic, certified_tree, geometric_series_check, mean_identity_check, run_experiment, BoundednessReport,
    CurvePoint, ExperimentPlan, GeometricSeriesReport, MeanIdentityReport, MomentCurve, TailPolicy,
};
