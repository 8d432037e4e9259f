//! Numerical laboratory for inertial manifolds of scalar reaction–diffusion
//! equations `u_t - u_xx = f(u)` with Dirichlet boundary conditions on
//! perturbed intervals `h(0, 1)`.
//!
//! The crate is organised bottom-up:
//!
//! * [`geometry`]: intervals, diffeomorphism families, grids, discrete `L²`
//!   and the pushforward `j_h(u) = u ∘ h⁻¹`.
//! * [`tridiag`]: the symmetric tridiagonal eigensolver backing [`spectral`].
//! * [`spectral`]: the finite-difference Dirichlet Laplacian, its eigenbasis,
//!   spectral projections, the gap condition and the spectral perturbation
//!   quantities `α(h)` and `γ_h(T)`.
//! * [`semiflow`]: nonlinearities, the Galerkin semiflow, the inertial form and
//!   the nonlinearity defect `ρ(h)`.
//! * [`manifold`]: the Lyapunov–Perron construction of the manifold graph, the
//!   graph-transfer maps and the invariance / attraction / comparison checks.
//! * [`ghdist`]: Gromov–Hausdorff distances between finite metric spaces and
//!   between sampled flows.
//! * [`lab`]: configuration, ε-sweeps and report emission.

pub mod error;
pub mod geometry;
pub mod ghdist;
pub mod lab;
pub mod manifold;
pub mod semiflow;
pub mod spectral;
pub mod tridiag;

pub use error::{Error, Result};
