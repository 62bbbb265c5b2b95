//! Discrete characteristics flow, conservative hat-weight push-forward,
//! density extension and the Wasserstein-1 diagnostic.
//!
//! A mass evolution is an element of the product simplex: one nonnegative
//! weight vector per time level, each summing to one. The push-forward moves
//! node weights one step along the flow `x_i - h*alpha_i` and redistributes
//! them onto the hat coefficients of the target position, which conserves
//! total mass by construction; no renormalization is applied after step zero
//! so that conservation defects stay visible.

use crate::error::{Result, SolverError};
use crate::grid::{self, GridSpec, NodeField, SpaceTimeField};

/// Tolerance on per-step total mass used by [`MassEvolution::validate`].
pub const MASS_TOLERANCE: f64 = 1e-10;

/// Node-weight arrays for every time level `k = 0..=n_steps`.
#[derive(Debug, Clone, PartialEq)]
pub struct MassEvolution {
    steps: Vec<NodeField>,
}

impl MassEvolution {
    pub fn from_steps(steps: Vec<NodeField>) -> Self {
        Self { steps }
    }

    #[inline]
    pub fn n_steps(&self) -> usize {
        self.steps.len()
    }

    #[inline]
    pub fn step(&self, k: usize) -> &[f64] {
        &self.steps[k]
    }

    pub fn steps(&self) -> &[NodeField] {
        &self.steps
    }

    /// Sup-norm distance over all nodes and levels (weight convention).
    pub fn sup_distance(&self, other: &Self) -> f64 {
        debug_assert_eq!(self.steps.len(), other.steps.len());
        let mut d = 0.0f64;
        for (a, b) in self.steps.iter().zip(&other.steps) {
            for (x, y) in a.iter().zip(b) {
                d = d.max((x - y).abs());
            }
        }
        d
    }

    /// Checks nonnegativity and unit total mass per step.
    pub fn validate(&self, g: &GridSpec) -> Result<()> {
        if self.steps.len() != g.n_steps + 1 {
            return Err(SolverError::SimplexViolation(format!(
                "expected {} levels, got {}",
                g.n_steps + 1,
                self.steps.len()
            )));
        }
        for (k, m) in self.steps.iter().enumerate() {
            check_simplex(g, m).map_err(|e| {
                SolverError::SimplexViolation(format!("level {k}: {e}"))
            })?;
        }
        Ok(())
    }
}

fn check_simplex(g: &GridSpec, m: &[f64]) -> Result<()> {
    if m.len() != g.n_nodes {
        return Err(SolverError::SimplexViolation(format!(
            "length {} != n_nodes {}",
            m.len(),
            g.n_nodes
        )));
    }
    if let Some(w) = m.iter().find(|w| **w < 0.0 || !w.is_finite()) {
        return Err(SolverError::SimplexViolation(format!("weight {w}")));
    }
    let total = neumaier_sum(m);
    if (total - 1.0).abs() > MASS_TOLERANCE {
        return Err(SolverError::SimplexViolation(format!(
            "total mass {total} differs from 1 by {:.3e}",
            (total - 1.0).abs()
        )));
    }
    Ok(())
}

/// Compensated (Neumaier) summation.
fn neumaier_sum(values: &[f64]) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for &v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Cell integrals of `m0` over every `E_i`, renormalized to sum exactly one.
pub fn initial_mass<F>(g: &GridSpec, m0: F) -> Result<NodeField>
where
    F: Fn(f64) -> f64,
{
    let mut weights = Vec::with_capacity(g.n_nodes);
    for i in 0..g.n_nodes {
        weights.push(grid::cell_integral(g, &m0, i)?);
    }
    let total = neumaier_sum(&weights);
    if total < 1e-6 {
        return Err(SolverError::VanishingMass { total });
    }
    for w in &mut weights {
        *w /= total;
    }
    Ok(weights)
}

/// One-step flow target `x_i - h*alpha_i`.
#[inline]
pub fn flow_step(g: &GridSpec, alpha: &[f64], i: usize) -> f64 {
    g.node(i) - g.h * alpha[i]
}

/// Pushes the weights one step along the flow, depositing each source weight
/// onto the two hat functions straddling its target. Targets that leave the
/// hull abort instead of being clamped.
pub fn push_forward(g: &GridSpec, m: &[f64], alpha: &[f64]) -> Result<NodeField> {
    debug_assert_eq!(m.len(), g.n_nodes);
    debug_assert_eq!(alpha.len(), g.n_nodes);
    let mut out = vec![0.0; g.n_nodes];
    for i in 0..g.n_nodes {
        let w = m[i];
        if w == 0.0 {
            continue;
        }
        let target = flow_step(g, alpha, i);
        if target < g.x_lo || target > g.x_hi {
            return Err(SolverError::FlowLeftHull {
                node: i,
                target,
                x_lo: g.x_lo,
                x_hi: g.x_hi,
            });
        }
        let (j, theta) = g.locate(target);
        out[j] += w * (1.0 - theta);
        out[j + 1] += w * theta;
    }
    Ok(out)
}

/// Full evolution from the level-0 weights under the per-level control field;
/// `alphas` carries `n_steps + 1` levels of which the last is unused.
pub fn evolve_mass(
    g: &GridSpec,
    m0_weights: &[f64],
    alphas: &SpaceTimeField,
) -> Result<MassEvolution> {
    debug_assert_eq!(alphas.n_levels(), g.n_steps + 1);
    let mut steps = Vec::with_capacity(g.n_steps + 1);
    steps.push(m0_weights.to_vec());
    for k in 0..g.n_steps {
        let next = push_forward(g, &steps[k], alphas.level(k))?;
        steps.push(next);
    }
    Ok(MassEvolution { steps })
}

/// Density extension: piecewise constant over the cells `E_i` in space
/// (weights scaled by `1/rho`), linear in time between adjacent levels.
/// Positions beyond the outermost cells return zero.
pub fn density_at(g: &GridSpec, ev: &MassEvolution, x: f64, t: f64) -> Result<f64> {
    if !(0.0..=g.t_end + 1e-12 * g.t_end.max(1.0)).contains(&t) {
        return Err(SolverError::TimeOutOfRange { t, t_end: g.t_end });
    }
    if x < g.x_lo - 0.5 * g.rho || x > g.x_hi + 0.5 * g.rho {
        return Ok(0.0);
    }
    let i = ((x - g.x_lo) / g.rho).round() as usize;
    let i = i.min(g.n_nodes - 1);
    let k = ((t / g.h).floor() as usize).min(g.n_steps - 1);
    let frac = ((t - g.time(k)) / g.h).clamp(0.0, 1.0);
    let lo = ev.step(k)[i] / g.rho;
    let hi = ev.step(k + 1)[i] / g.rho;
    Ok((1.0 - frac) * lo + frac * hi)
}

/// Wasserstein-1 distance between two weight vectors on the same lattice:
/// `rho * Σ_i |cumsum(a)_i - cumsum(b)_i|`, exact for node-supported measures.
pub fn wasserstein1(g: &GridSpec, a: &[f64], b: &[f64]) -> Result<f64> {
    check_simplex(g, a)?;
    check_simplex(g, b)?;
    let mut ca = 0.0;
    let mut ca_comp = 0.0;
    let mut cb = 0.0;
    let mut cb_comp = 0.0;
    let mut acc = 0.0;
    for i in 0..g.n_nodes - 1 {
        // Compensated running sums keep the 1e-10 tolerances honest over
        // thousands of nodes.
        let t = ca + a[i];
        ca_comp += if ca.abs() >= a[i].abs() { (ca - t) + a[i] } else { (a[i] - t) + ca };
        ca = t;
        let t = cb + b[i];
        cb_comp += if cb.abs() >= b[i].abs() { (cb - t) + b[i] } else { (b[i] - t) + cb };
        cb = t;
        acc += ((ca + ca_comp) - (cb + cb_comp)).abs();
    }
    Ok(g.rho * acc)
}

/// Total weight sitting within `margin` of either hull end. Used by the
/// solver as a support diagnostic: nodes that close to the boundary read
/// extension values through the mollified gradient.
pub fn mass_near_boundary(g: &GridSpec, m: &[f64], margin: f64) -> f64 {
    let mut acc = 0.0;
    for i in 0..g.n_nodes {
        let x = g.node(i);
        if x - g.x_lo < margin || g.x_hi - x < margin {
            acc += m[i];
        }
    }
    acc
}
