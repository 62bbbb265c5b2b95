//! Running and terminal costs, the nonlocal interaction term, and the
//! built-in problem definitions.
//!
//! The running cost has the form `F(x, m) = f(x) + theta * V(x, m)` where
//! `V = K_sigma * K_sigma * m` is the double Gaussian smoothing of the
//! current measure, evaluated as a density at the grid nodes. Squaring the
//! kernel makes the coupling monotone: the induced quadratic form on weight
//! differences is a perfect square.

use std::fmt;
use std::sync::Arc;

use crate::error::{Result, SolverError};
use crate::grid::{self, GridSpec, NodeField};
use crate::mollify::{self, MollifierKernel};

/// Shared scalar function of position.
pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Problem data plus solver parameters.
#[derive(Clone)]
pub struct ProblemSpec {
    pub label: String,
    pub x_lo: f64,
    pub x_hi: f64,
    pub t_end: f64,
    /// Local running cost `f(x)`.
    pub f: ScalarFn,
    /// Weight of the nonlocal term; zero decouples the system.
    pub theta: f64,
    /// Width of the interaction kernel (used when `theta > 0`).
    pub sigma: f64,
    /// Terminal cost `G(x)`.
    pub g_term: ScalarFn,
    /// Initial density, not necessarily normalized.
    pub m0: ScalarFn,
    /// Mollifier width for the control field.
    pub eps: f64,
    pub rho: f64,
    pub h: f64,
    /// Fixed-point stopping threshold on `max(E_v, E_m)`.
    pub tau: f64,
    /// Fixed-point iteration cap.
    pub p_max: usize,
}

impl fmt::Debug for ProblemSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemSpec")
            .field("label", &self.label)
            .field("domain", &(self.x_lo, self.x_hi))
            .field("t_end", &self.t_end)
            .field("theta", &self.theta)
            .field("sigma", &self.sigma)
            .field("eps", &self.eps)
            .field("rho", &self.rho)
            .field("h", &self.h)
            .field("tau", &self.tau)
            .field("p_max", &self.p_max)
            .finish()
    }
}

impl ProblemSpec {
    /// Grid matching the problem's domain and discretization parameters.
    pub fn grid(&self) -> Result<GridSpec> {
        grid::build_grid(self.x_lo, self.x_hi, self.rho, self.h, self.t_end)
    }

    fn validate(&self) -> Result<()> {
        if self.theta < 0.0 {
            return Err(SolverError::InvalidParameter(
                "theta must be nonnegative".into(),
            ));
        }
        if self.theta > 0.0 && !(self.sigma > 0.0) {
            return Err(SolverError::InvalidParameter(
                "sigma must be positive when theta > 0".into(),
            ));
        }
        for (name, v) in [
            ("rho", self.rho),
            ("h", self.h),
            ("T", self.t_end),
            ("eps", self.eps),
            ("tau", self.tau),
        ] {
            if !(v >= 0.0) || (name != "tau" && v == 0.0) {
                return Err(SolverError::InvalidParameter(format!(
                    "{name} must be positive (got {v})"
                )));
            }
        }
        Ok(())
    }
}

/// Gaussian taps scaled so they integrate (not sum) to one as a lattice
/// density: `t_j = rho * g_sigma(j*rho)`. Truncation at `4*sigma` is left
/// uncorrected; renormalizing would inflate the double convolution by twice
/// the truncated tail and miss the closed-form density it approximates.
fn density_taps(sigma: f64, rho: f64) -> Result<(usize, Vec<f64>)> {
    if !(sigma > 0.0) {
        return Err(SolverError::InvalidParameter(format!(
            "sigma must be positive (got {sigma})"
        )));
    }
    if sigma < rho {
        return Err(SolverError::KernelUnderResolved { eps: sigma, rho });
    }
    let radius = (4.0 * sigma / rho).ceil() as usize;
    let norm = rho / (sigma * (2.0 * std::f64::consts::PI).sqrt());
    let taps = (-(radius as isize)..=radius as isize)
        .map(|j| {
            let u = j as f64 * rho / sigma;
            norm * (-0.5 * u * u).exp()
        })
        .collect();
    Ok((radius, taps))
}

/// Self-convolution of the width-`sigma` taps: lattice samples of the
/// Gaussian density of variance `2*sigma^2`, times `rho`.
fn double_kernel(sigma: f64, rho: f64) -> Result<(usize, Vec<f64>)> {
    let (r, taps) = density_taps(sigma, rho)?;
    let mut out = vec![0.0; 4 * r + 1];
    for a in 0..taps.len() {
        for b in 0..taps.len() {
            out[a + b] += taps[a] * taps[b] / rho;
        }
    }
    Ok((2 * r, out))
}

/// Nonlocal term `V(x_i, m)`: the node weights convolved twice with the
/// width-`sigma` kernel, scaled by `1/rho` so values are densities. The
/// double kernel is formed first, so intermediate values never get truncated
/// at the hull; the measure itself lives inside the hull by construction.
pub fn eval_v(g: &GridSpec, m: &[f64], sigma: f64) -> Result<NodeField> {
    debug_assert_eq!(m.len(), g.n_nodes);
    let (r2, dk) = double_kernel(sigma, g.rho)?;
    let r2 = r2 as isize;
    let n = g.n_nodes as isize;
    let mut out = vec![0.0; g.n_nodes];
    for i in 0..n {
        let lo = (i - r2).max(0);
        let hi = (i + r2).min(n - 1);
        let mut acc = 0.0;
        for j in lo..=hi {
            acc += dk[(i - j + r2) as usize] * m[j as usize];
        }
        out[i as usize] = acc / g.rho;
    }
    Ok(out)
}

/// Running cost at the nodes: `F_i = f(x_i) + theta * V_i`. The convolution
/// is skipped entirely when `theta == 0`.
pub fn eval_f(g: &GridSpec, spec: &ProblemSpec, m: &[f64]) -> Result<NodeField> {
    let mut out: NodeField = (0..g.n_nodes).map(|i| (spec.f)(g.node(i))).collect();
    if spec.theta > 0.0 {
        let v = eval_v(g, m, spec.sigma)?;
        for (o, vi) in out.iter_mut().zip(v) {
            *o += spec.theta * vi;
        }
    }
    Ok(out)
}

/// Terminal cost sampled at the nodes.
pub fn eval_g(g: &GridSpec, spec: &ProblemSpec) -> NodeField {
    (0..g.n_nodes).map(|i| (spec.g_term)(g.node(i))).collect()
}

/// Discrete Lipschitz bounds of the problem data: `(Lip G, Lip F)` where the
/// `F` part combines the local cost slope with the worst-case slope of the
/// nonlocal term over the simplex.
pub fn data_lipschitz(g: &GridSpec, spec: &ProblemSpec) -> Result<(f64, f64)> {
    let gv = eval_g(g, spec);
    let mut lip_g = 0.0f64;
    for i in 0..g.n_cells() {
        lip_g = lip_g.max(((gv[i + 1] - gv[i]) / g.rho).abs());
    }
    let mut lip_f = 0.0f64;
    for i in 0..g.n_cells() {
        let fi = (spec.f)(g.node(i));
        let fj = (spec.f)(g.node(i + 1));
        lip_f = lip_f.max(((fj - fi) / g.rho).abs());
    }
    if spec.theta > 0.0 {
        let kernel = mollify::build_kernel(spec.sigma, g.rho)?;
        let dk = double_kernel(&kernel);
        // |V_{i+1} - V_i| <= max_l |dk_{l+1} - dk_l| for unit total mass.
        let mut slope = 0.0f64;
        for l in 0..dk.len() - 1 {
            slope = slope.max((dk[l + 1] - dk[l]).abs());
        }
        lip_f += spec.theta * slope / (g.rho * g.rho);
    }
    Ok((lip_g, lip_f))
}

/// Built-in problem names.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProblemName {
    Test1,
    Test2,
    NoGame,
}

impl std::str::FromStr for ProblemName {
    type Err = SolverError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "test1" => Ok(Self::Test1),
            "test2" => Ok(Self::Test2),
            "nogame" => Ok(Self::NoGame),
            other => Err(SolverError::UnknownProblem(other.to_string())),
        }
    }
}

/// `(rho, h, eps)` rows of the first experiment's refinement study.
pub const TABLE1_PARAMS: [(f64, f64, f64); 4] = [
    (1.50e-2, 3.00e-2, 6.00e-2),
    (7.50e-3, 1.50e-2, 4.00e-2),
    (3.75e-3, 7.50e-3, 2.50e-2),
    (1.87e-3, 3.75e-3, 1.60e-2),
];

fn normalized_density<F>(x_lo: f64, x_hi: f64, nu: F) -> ScalarFn
where
    F: Fn(f64) -> f64 + Send + Sync + 'static,
{
    // Normalization constant by dense Simpson quadrature over the domain.
    let n = 20_000usize;
    let dx = (x_hi - x_lo) / n as f64;
    let mut acc = nu(x_lo) + nu(x_hi);
    for p in 1..n {
        let w = if p % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * nu(x_lo + p as f64 * dx);
    }
    let norm = acc * dx / 3.0;
    Arc::new(move |x| nu(x) / norm)
}

fn test1_spec(rho: f64, h: f64, eps: f64) -> ProblemSpec {
    ProblemSpec {
        label: "test1".into(),
        x_lo: -0.1,
        x_hi: 1.1,
        t_end: 1.0,
        f: Arc::new(|_| 0.0),
        theta: 0.3,
        sigma: 0.2,
        g_term: Arc::new(|x| -0.5 * (x + 0.5).powi(2) * (1.5 - x).powi(2)),
        m0: normalized_density(-0.1, 1.1, |x| {
            if (0.0..=1.0).contains(&x) {
                1.0 - 0.2 * (std::f64::consts::PI * x).cos()
            } else {
                0.0
            }
        }),
        eps,
        rho,
        h,
        tau: 1e-3,
        p_max: 50,
    }
}

fn test2_spec(theta: f64) -> ProblemSpec {
    ProblemSpec {
        label: if theta == 0.0 { "nogame" } else { "test2" }.into(),
        x_lo: 0.0,
        x_hi: 1.0,
        t_end: 1.0,
        f: Arc::new(|x| (x - 0.2) * (x - 0.2)),
        theta,
        sigma: 0.25,
        g_term: Arc::new(|_| 0.0),
        m0: normalized_density(0.0, 1.0, |x| (-(x - 0.75) * (x - 0.75) / 0.01).exp()),
        eps: 0.025,
        rho: 3.3e-3,
        h: 5e-3,
        tau: 1e-3,
        p_max: 50,
    }
}

/// Built-in problems with the published parameters. `test1` defaults to the
/// third refinement row (the one used for the mass-evolution figures);
/// [`test1_row`] selects the other rows.
pub fn builtin_problem(name: ProblemName) -> ProblemSpec {
    match name {
        ProblemName::Test1 => {
            let (rho, h, eps) = TABLE1_PARAMS[2];
            test1_spec(rho, h, eps)
        }
        ProblemName::Test2 => test2_spec(1.0),
        ProblemName::NoGame => test2_spec(0.0),
    }
}

/// First-experiment preset for one refinement row (zero-based).
pub fn test1_row(row: usize) -> Result<ProblemSpec> {
    let (rho, h, eps) = *TABLE1_PARAMS
        .get(row)
        .ok_or_else(|| SolverError::InvalidParameter(format!("table row {row} out of range")))?;
    Ok(test1_spec(rho, h, eps))
}

pub(crate) fn validate_spec(spec: &ProblemSpec) -> Result<()> {
    spec.validate()
}
