//! Gaussian smoothing on the node lattice and the central-difference gradient.
//!
//! The kernel is a standard Gaussian profile of width `eps`, sampled on the
//! lattice, truncated at `4*eps` and renormalized to unit sum. Renormalization
//! makes the convolution preserve constants exactly, which the conservation
//! and monotonicity checks rely on.

use crate::error::{Result, SolverError};
use crate::grid::{GridSpec, NodeField};

/// Truncated, renormalized discrete Gaussian taps on the `rho`-lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct MollifierKernel {
    pub eps: f64,
    /// Tap half-width in nodes; `weights.len() == 2*radius + 1`.
    pub radius: usize,
    weights: Vec<f64>,
}

impl MollifierKernel {
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Tap at offset `j`, `|j| <= radius`.
    #[inline]
    pub fn weight(&self, j: isize) -> f64 {
        self.weights[(j + self.radius as isize) as usize]
    }
}

/// Builds the kernel: taps `w_j ∝ exp(-(j*rho)^2 / (2*eps^2))` for
/// `|j| <= ceil(4*eps/rho)`, renormalized to sum one.
pub fn build_kernel(eps: f64, rho: f64) -> Result<MollifierKernel> {
    if !(eps > 0.0) || !(rho > 0.0) {
        return Err(SolverError::InvalidParameter(format!(
            "kernel widths must be positive (eps = {eps}, rho = {rho})"
        )));
    }
    if eps < rho {
        return Err(SolverError::KernelUnderResolved { eps, rho });
    }
    let radius = (4.0 * eps / rho).ceil() as usize;
    let mut weights = Vec::with_capacity(2 * radius + 1);
    for j in -(radius as isize)..=radius as isize {
        let u = j as f64 * rho / eps;
        weights.push((-0.5 * u * u).exp());
    }
    let sum: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= sum;
    }
    Ok(MollifierKernel {
        eps,
        radius,
        weights,
    })
}

/// Discrete convolution `(f ⋆ w)_i = Σ_j w_j f_{i-j}`, reading out-of-range
/// nodes through constant boundary extension.
pub fn smooth(g: &GridSpec, f: &[f64], kernel: &MollifierKernel) -> NodeField {
    debug_assert_eq!(f.len(), g.n_nodes);
    let n = g.n_nodes as isize;
    let r = kernel.radius as isize;
    let mut out = vec![0.0; g.n_nodes];
    for i in 0..n {
        let mut acc = 0.0;
        for j in -r..=r {
            let src = (i - j).clamp(0, n - 1) as usize;
            acc += kernel.weight(j) * f[src];
        }
        out[i as usize] = acc;
    }
    out
}

/// Central differences in the interior, one-sided at the two boundary nodes.
pub fn gradient_central(g: &GridSpec, f: &[f64]) -> NodeField {
    debug_assert_eq!(f.len(), g.n_nodes);
    debug_assert!(g.n_nodes >= 3);
    let n = g.n_nodes;
    let mut out = vec![0.0; n];
    out[0] = (f[1] - f[0]) / g.rho;
    for i in 1..n - 1 {
        out[i] = (f[i + 1] - f[i - 1]) / (2.0 * g.rho);
    }
    out[n - 1] = (f[n - 1] - f[n - 2]) / g.rho;
    out
}
