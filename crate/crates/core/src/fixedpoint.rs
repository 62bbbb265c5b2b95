//! Picard iteration coupling the backward value solve and the forward mass
//! transport.
//!
//! Starting from the stationary initial guess (every time slice equal to the
//! cell-integrated initial weights), each pass solves the value function
//! against the frozen mass, smooths every value slice, takes the
//! central-difference gradient as the control field, and transports the mass
//! forward. Iteration `p` is compared against iteration `p+1` through the
//! sup-norm changes `E_v` and `E_m` (weight convention; the density
//! convention is the same number divided by `rho`), and the loop stops once
//! `max(E_v, E_m)` drops below the threshold or the iteration cap is hit.
//! No damping or averaging is applied.

use std::time::Instant;

use crate::coupling::{self, ProblemSpec};
use crate::error::{Result, SolverError};
use crate::grid::{GridSpec, SpaceTimeField};
use crate::hjb::{self, ControlSearch};
use crate::mollify;
use crate::transport::{self, MassEvolution};

/// Threshold on the mass sitting inside the boundary margin before the
/// support diagnostic fires.
const MARGIN_MASS_WARN: f64 = 1e-6;

/// Per-iteration progress record: `e_v`/`e_m` are the sup-norm changes
/// between iterates `p` and `p+1`.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub p: usize,
    pub e_v: f64,
    pub e_m: f64,
    /// Same change measured on densities (`e_m / rho`).
    pub e_m_density: f64,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Converged,
    CapReached,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationReport {
    pub records: Vec<IterationRecord>,
    pub status: SolveStatus,
    pub warnings: Vec<String>,
}

impl IterationReport {
    /// Index of the record where stopping occurred (== number of compared
    /// iteration pairs).
    pub fn iterations(&self) -> usize {
        self.records.len()
    }

    pub fn last_e_v(&self) -> f64 {
        self.records.last().map_or(f64::NAN, |r| r.e_v)
    }

    pub fn last_e_m(&self) -> f64 {
        self.records.last().map_or(f64::NAN, |r| r.e_m)
    }
}

/// Converged (or capped) solution with the full iteration history.
#[derive(Debug, Clone)]
pub struct MfgSolution {
    pub v: SpaceTimeField,
    /// Mollified central-difference gradient of `v`, one slice per level.
    pub alpha: SpaceTimeField,
    pub m: MassEvolution,
    pub report: IterationReport,
}

/// Stationary initial guess: every slice equals the level-zero weights.
pub fn initial_guess(g: &GridSpec, spec: &ProblemSpec) -> Result<MassEvolution> {
    let w0 = transport::initial_mass(g, |x| (spec.m0)(x))?;
    Ok(MassEvolution::from_steps(vec![w0; g.n_steps + 1]))
}

/// Smooths each value slice and takes its central-difference gradient.
pub fn control_field(g: &GridSpec, eps: f64, v: &SpaceTimeField) -> Result<SpaceTimeField> {
    let kernel = mollify::build_kernel(eps, g.rho)?;
    let levels = v
        .levels()
        .iter()
        .map(|slice| mollify::gradient_central(g, &mollify::smooth(g, slice, &kernel)))
        .collect();
    Ok(SpaceTimeField::from_levels(levels))
}

/// One Picard pass: backward value solve against `m_prev`, control field,
/// forward transport. The running cost at step `k` reads slice `k` of
/// `m_prev`; the level-zero weights are reused unchanged.
pub fn iterate_once(
    g: &GridSpec,
    spec: &ProblemSpec,
    m_prev: &MassEvolution,
) -> Result<(SpaceTimeField, SpaceTimeField, MassEvolution)> {
    let v = hjb::solve_backward(g, spec, m_prev)?;
    let alpha = control_field(g, spec.eps, &v)?;
    let m_next = transport::evolve_mass(g, m_prev.step(0), &alpha)?;
    Ok((v, alpha, m_next))
}

/// Full fixed-point solve.
pub fn solve_mfg(g: &GridSpec, spec: &ProblemSpec) -> Result<MfgSolution> {
    coupling::validate_spec(spec)?;
    if !(g.rho < g.h) {
        return Err(SolverError::InvalidParameter(format!(
            "inverse CFL condition violated: rho = {} must be below h = {}",
            g.rho, g.h
        )));
    }
    let mut warnings = Vec::new();
    let balance = g.rho * g.rho / (spec.eps * spec.eps * spec.eps);
    if balance > 1.0 {
        warnings.push(format!(
            "rho^2/eps^3 = {balance:.3} exceeds 1; the smoothed curvature bound degrades"
        ));
    }
    if g.h / spec.eps > 1.0 {
        warnings.push(format!(
            "h/eps = {:.3} exceeds 1; the time step under-resolves the smoothing width",
            g.h / spec.eps
        ));
    }

    let search = ControlSearch::for_problem(g, spec)?;
    let margin = g.h * search.a_max + 4.0 * spec.eps;
    let mut margin_flagged = false;
    let check_margin = |m: &MassEvolution, warnings: &mut Vec<String>, flagged: &mut bool| {
        if *flagged {
            return;
        }
        let worst = (0..=g.n_steps)
            .map(|k| transport::mass_near_boundary(g, m.step(k), margin))
            .fold(0.0f64, f64::max);
        if worst > MARGIN_MASS_WARN {
            warnings.push(format!(
                "support margin: {worst:.3e} of the mass sits within {margin:.3} of the hull \
                 boundary; gradients there read boundary-extension values"
            ));
            *flagged = true;
        }
    };

    let guess = initial_guess(g, spec)?;
    let (mut v_cur, mut alpha_cur, mut m_cur) = iterate_once(g, spec, &guess)?;
    check_margin(&m_cur, &mut warnings, &mut margin_flagged);

    let mut records = Vec::new();
    let mut status = SolveStatus::CapReached;
    for p in 1..=spec.p_max {
        let t0 = Instant::now();
        let (v_next, alpha_next, m_next) = iterate_once(g, spec, &m_cur)?;
        let e_v = v_next.sup_distance(&v_cur);
        let e_m = m_next.sup_distance(&m_cur);
        records.push(IterationRecord {
            p,
            e_v,
            e_m,
            e_m_density: e_m / g.rho,
            wall_seconds: t0.elapsed().as_secs_f64(),
        });
        v_cur = v_next;
        alpha_cur = alpha_next;
        m_cur = m_next;
        check_margin(&m_cur, &mut warnings, &mut margin_flagged);
        if e_v.max(e_m) < spec.tau {
            status = SolveStatus::Converged;
            break;
        }
    }

    m_cur.validate(g)?;
    Ok(MfgSolution {
        v: v_cur,
        alpha: alpha_cur,
        m: m_cur,
        report: IterationReport {
            records,
            status,
            warnings,
        },
    })
}
