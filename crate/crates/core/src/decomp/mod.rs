//! Executable forms of the decomposition results behind the aggregation block.
//!
//! * [`mdd`]: the full solution set `{C_p + X_h Λ}` of `B C = A` for a
//!   full-row-rank `B`.
//! * [`cp`]: the constructive sum-product decomposition of an order-`n`
//!   tensor into `N` components, built from Vandermonde-structured factors.
//! * [`stability`]: rank-deficient matrices become full rank under an
//!   arbitrarily small perturbation while full-rank ones stay full rank.

pub mod cp;
pub mod mdd;
pub mod stability;

pub use cp::{
    cp_decompose, grid_vandermonde_factors, reconstruct_cp, row_kron, vandermonde_factors, CpFactors,
    FactorConstruction,
};
pub use mdd::{kernel_basis, mdd_solve, mdd_solve_with, MddOptions, MddSolution};
pub use stability::{perturb_to_full_rank, rank_stability_trial, PerturbationProbe};
