//! Fractional Laplacian discretization on pixel sets, the associated state
//! equations (torsion, Dirichlet eigenvalues, capacity) and measure-constrained
//! spectral shape optimization.

pub mod error;
pub mod grid;
pub mod kernel;
pub mod operator;
pub mod quad;
pub mod shape;
pub mod solve;

pub use error::{FracError, Result};
pub use grid::{BoxGrid, SetMask};
pub use kernel::{cns, cns_quadrature, FracParam, KernelTable};
pub use operator::{Discretization, NonlocalOperator};
pub use solve::{
    capacity, ks_membership, solve_eigs, solve_torsion, torsion_maximality_check, CapacityValue, SpectralResult,
    TorsionSolution,
};
pub use shape::{
    anneal_search, brute_force_min, evaluate_cost, exchange_search, gamma_s_distance, sweep_s_minima, AnnealSchedule,
    Combiner, CostSpec, Neighborhood, OptResult,
};
