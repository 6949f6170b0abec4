//! Exact finite-state analogs of the four kernels on one- and two-dimensional
//! grids, with quadratic forms, spectral gaps and conductance.

mod analysis;
mod discrete;
mod grid;

pub use analysis::{
    compare_forms, conductance, ordering_consequences, ordering_consequences_with, ordering_test_functions, quadratic_form,
    reversible_spectrum, spectral_gap, verify_ordering, Conductance, ConductanceMode, ConsequenceCheck, ConsequenceReport,
    GridFunction, LabelledValue, CONTIGUOUS_2D_MAX_N, EXACT_CONDUCTANCE_MAX_STATES, ORDERING_SLACK,
};
pub use discrete::{build_discrete_kernels, DiscreteKernel, KernelLabel, KernelSet, CONSTRUCTION_TOL};
pub(crate) use discrete::{conditional_block, slice_block};
pub use grid::{GridSpec, GridSummary};
