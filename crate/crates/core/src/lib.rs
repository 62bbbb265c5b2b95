//! Semi-Lagrangian solver for first-order mean field games in one space
//! dimension.
//!
//! The system couples a backward Hamilton-Jacobi-Bellman equation with
//! quadratic Hamiltonian to a forward continuity equation:
//!
//! ```text
//! -dv/dt + |Dv|^2 / 2 = F(x, m(t)),      v(x, T) = G(x),
//!  dm/dt - div(Dv m)  = 0,               m(0)    = m0.
//! ```
//!
//! Both equations are discretized on a shared uniform space-time lattice.
//! The value function follows a monotone Semi-Lagrangian update whose
//! control minimization is solved exactly cell by cell ([`hjb`]); the mass
//! is pushed forward conservatively along the flow of the mollified value
//! gradient ([`mollify`], [`transport`]); the coupling closes through a
//! Picard iteration with sup-norm stopping ([`fixedpoint`]). Built-in
//! problems and the nonlocal interaction cost live in [`coupling`], and
//! [`cli`] drives the reproduction experiments behind the `mfg-sl` binary.

pub mod cli;
pub mod coupling;
pub mod error;
pub mod fixedpoint;
pub mod grid;
pub mod hjb;
pub mod mollify;
pub mod transport;

pub use coupling::{builtin_problem, ProblemName, ProblemSpec};
pub use error::{Result, SolverError};
pub use fixedpoint::{solve_mfg, MfgSolution, SolveStatus};
pub use grid::{build_grid, GridSpec, NodeField, SpaceTimeField};
pub use transport::MassEvolution;
