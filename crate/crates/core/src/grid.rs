//! Uniform space-time grid, P1 hat basis, interpolation and cell quadrature.
//!
//! The lattice is `x_i = x_lo + i*rho` for `i = 0..n_nodes`, crossed with the
//! time grid `t_k = k*h`, `k = 0..=n_steps`, `n_steps*h = t_end`. Node values
//! are extended to the whole line by piecewise-linear interpolation inside the
//! hull `[x_lo, x_hi]` and by the nearest boundary value outside it.

use crate::error::{Result, SolverError};

/// Values attached to the grid nodes at a single time level.
pub type NodeField = Vec<f64>;

/// Uniform space lattice and time grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub x_lo: f64,
    pub x_hi: f64,
    /// Space step; adjusted by [`build_grid`] so that the node count is integral.
    pub rho: f64,
    /// Time step; adjusted so that `n_steps * h = t_end`.
    pub h: f64,
    pub t_end: f64,
    pub n_nodes: usize,
    pub n_steps: usize,
}

impl GridSpec {
    /// Position of node `i`.
    #[inline]
    pub fn node(&self, i: usize) -> f64 {
        self.x_lo + i as f64 * self.rho
    }

    /// Time of level `k`.
    #[inline]
    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.h
    }

    #[inline]
    pub fn n_cells(&self) -> usize {
        self.n_nodes - 1
    }

    /// Cell index and local coordinate for a hull position; both ends clamp
    /// onto the first/last cell so that callers get the constant extension.
    /// Coordinates within 1e-11 cells of a node snap onto it, so positions
    /// that are a node up to round-off deposit exactly there.
    #[inline]
    pub(crate) fn locate(&self, x: f64) -> (usize, f64) {
        let u = (x - self.x_lo) / self.rho;
        if u <= 0.0 {
            return (0, 0.0);
        }
        let r = u.round();
        if (u - r).abs() <= 1e-11 {
            let i = (r as usize).min(self.n_nodes - 1);
            return if i == self.n_nodes - 1 {
                (i - 1, 1.0)
            } else {
                (i, 0.0)
            };
        }
        let last = self.n_cells() - 1;
        let j = (u.floor() as usize).min(last);
        let theta = ((x - self.node(j)) / self.rho).clamp(0.0, 1.0);
        (j, theta)
    }
}

/// Builds the grid, rounding `(x_hi - x_lo)/rho` and `t_end/h` to the nearest
/// integral counts and adjusting `rho`, `h` accordingly.
pub fn build_grid(x_lo: f64, x_hi: f64, rho: f64, h: f64, t_end: f64) -> Result<GridSpec> {
    if !(rho > 0.0) || !(h > 0.0) || !(t_end > 0.0) {
        return Err(SolverError::InvalidGrid(format!(
            "rho, h and T must be positive (got rho = {rho}, h = {h}, T = {t_end})"
        )));
    }
    let width = x_hi - x_lo;
    if !(width >= 2.0 * rho) {
        return Err(SolverError::InvalidGrid(format!(
            "domain width {width} shorter than 2*rho = {}",
            2.0 * rho
        )));
    }
    let n_cells = (width / rho).round() as usize;
    let n_steps = (t_end / h).round().max(1.0) as usize;
    Ok(GridSpec {
        x_lo,
        x_hi,
        rho: width / n_cells as f64,
        h: t_end / n_steps as f64,
        t_end,
        n_nodes: n_cells + 1,
        n_steps,
    })
}

/// Hat function `beta_i(x) = max(1 - |x - x_i|/rho, 0)`.
pub fn basis_eval(g: &GridSpec, i: usize, x: f64) -> Result<f64> {
    if i >= g.n_nodes {
        return Err(SolverError::IndexOutOfRange {
            index: i,
            n_nodes: g.n_nodes,
        });
    }
    Ok((1.0 - (x - g.node(i)).abs() / g.rho).max(0.0))
}

/// Piecewise-linear interpolant of node values, with constant extension
/// outside the hull.
#[inline]
pub fn interpolate(g: &GridSpec, f: &[f64], x: f64) -> f64 {
    debug_assert_eq!(f.len(), g.n_nodes);
    if x <= g.x_lo {
        return f[0];
    }
    if x >= g.x_hi {
        return f[g.n_nodes - 1];
    }
    let (j, theta) = g.locate(x);
    (1.0 - theta) * f[j] + theta * f[j + 1]
}

/// Number of Simpson panels used per cell by [`cell_integral`].
const SIMPSON_PANELS: usize = 16;

/// Integral of `density` over the cell `E_i = [x_i - rho/2, x_i + rho/2]`
/// by composite Simpson quadrature (33 samples).
pub fn cell_integral<F>(g: &GridSpec, density: F, i: usize) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    if i >= g.n_nodes {
        return Err(SolverError::IndexOutOfRange {
            index: i,
            n_nodes: g.n_nodes,
        });
    }
    let a = g.node(i) - 0.5 * g.rho;
    let step = g.rho / (2 * SIMPSON_PANELS) as f64;
    let mut acc = 0.0;
    for p in 0..=2 * SIMPSON_PANELS {
        let x = a + p as f64 * step;
        let fx = density(x);
        if !fx.is_finite() {
            return Err(SolverError::NonFiniteSample { x });
        }
        let w = if p == 0 || p == 2 * SIMPSON_PANELS {
            1.0
        } else if p % 2 == 1 {
            4.0
        } else {
            2.0
        };
        acc += w * fx;
    }
    Ok(acc * step / 3.0)
}

/// Node values over all time levels `k = 0..=n_steps`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceTimeField {
    levels: Vec<NodeField>,
}

impl SpaceTimeField {
    pub fn from_levels(levels: Vec<NodeField>) -> Self {
        Self { levels }
    }

    pub fn zeros(g: &GridSpec) -> Self {
        Self {
            levels: vec![vec![0.0; g.n_nodes]; g.n_steps + 1],
        }
    }

    #[inline]
    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }

    #[inline]
    pub fn level(&self, k: usize) -> &[f64] {
        &self.levels[k]
    }

    pub fn levels(&self) -> &[NodeField] {
        &self.levels
    }

    /// Sup-norm distance over all nodes and levels.
    pub fn sup_distance(&self, other: &Self) -> f64 {
        debug_assert_eq!(self.levels.len(), other.levels.len());
        let mut d = 0.0f64;
        for (a, b) in self.levels.iter().zip(&other.levels) {
            for (x, y) in a.iter().zip(b) {
                d = d.max((x - y).abs());
            }
        }
        d
    }
}
