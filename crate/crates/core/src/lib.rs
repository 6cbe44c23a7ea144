//! Numerical Berezin-Toeplitz quantization on the twistor family of flat
//! hyperkahler R^{4n}: structure matrices and Kahler forms, removed-fiber
//! charts, a weighted Bergman space with explicit orthonormal basis,
//! fiberwise symbol reduction over the sphere, Toeplitz operator assembly,
//! and a semiclassical decay harness.

pub mod charts;
pub mod error;
pub mod fock;
pub mod hyperkahler;
pub mod io;
pub mod parallel;
pub mod quadrature;
pub mod semiclassics;
pub mod symbols;
pub mod toeplitz;

pub use charts::{
    from_chart, holomorphy_residual, sphere_to_zeta, su2_for_removed_point, to_chart, transition,
    zeta_to_sphere, ChartCoords, RemovedFiberChart, Su2Matrix,
};
pub use error::{Error, Result};
pub use quadrature::{gauss_hermite, gauss_legendre, gauss_legendre_01, ComplexGaussRule, FsQuadrature};
pub use fock::{
    basis_eval, gram_matrix, kernel_eval, shift_matrix, FockBasis, OperatorMatrix,
    WeightedMeasure,
};
pub use parallel::{chunk_ranges, chunked_map, chunked_map_seq, default_chunks};
pub use io::{read_operator, sweep_csv, sweep_summary, write_operator, write_sweep_artifacts, OperatorHeader, SCHEMA_VERSION};
pub use semiclassics::{
    compute_residuals, fit_decay, reduced_value_grid, residual_commutator, residual_first_order,
    run_sweep,
    BumpSpec, ChartSpec, DecayFit, ResidualParams, Residuals, SweepConfig, SweepRecord,
    SweepResult, SymbolPairSpec,
};
pub use toeplitz::{
    assemble_from_values, assemble_many_from_values, block_nodes, matrix_operator_norm, operator_norm, power_iteration_norm,
    toeplitz_matrix, toeplitz_matrix_exact, QuadratureSpec,
};
pub use symbols::{
    correction_symbol, fiber_gradient, fs_quadrature_build, poisson_bracket_fiber,
    poisson_bracket_fiber_symbol, poisson_bracket_full, pull_back, pull_back_with_gradient,
    reduce, BumpFunction, PolySymbol, Symbol, Var,
};
pub use hyperkahler::{
    kahler_form, matrix_i, matrix_j, matrix_k, omega_m_fiberwise, pfaffian, structure_matrix,
    top_wedge_coefficient, ComplexStructure, RealPoint4n, SpherePoint, TwoForm4n,
};
