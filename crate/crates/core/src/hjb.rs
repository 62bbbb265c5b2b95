//! Backward Semi-Lagrangian recursion for the value function.
//!
//! One update reads
//!
//! ```text
//! v_{i,k} = inf_{|a| <= a_max} [ I[v_{.,k+1}](x_i - h a) + (h/2) a^2 ] + h F_{i,k},
//! ```
//!
//! with terminal condition `v_{i,N} = G(x_i)`. Because the interpolant is
//! piecewise affine, the bracket is piecewise quadratic in `a`: on the cell
//! with nodes `(j, j+1)` its interior stationary point is the interpolant
//! slope `(f_{j+1} - f_j)/rho`. The infimum is therefore exact: evaluate the
//! clamped stationary point of every reachable cell plus all cell-boundary
//! values of `a`. Outside the hull the interpolant is constant, so the
//! objective only grows there and no exterior candidate is needed beyond the
//! hull-edge ones.

use crate::coupling::{self, ProblemSpec};
use crate::error::{Result, SolverError};
use crate::grid::{self, GridSpec, NodeField, SpaceTimeField};
use crate::transport::MassEvolution;

/// Deterministic tie-break among equal minima.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum TieBreak {
    /// Prefer the smaller `|a|`, then the smaller signed `a`.
    #[default]
    SmallestMagnitudeThenSigned,
}

/// Bounded search window for the per-node control minimization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlSearch {
    /// Bound on `|a|`; must dominate the Lipschitz constant of every value
    /// slice so the constrained minimum is the global one.
    pub a_max: f64,
    pub tie_rule: TieBreak,
}

impl ControlSearch {
    pub fn new(a_max: f64) -> Self {
        Self {
            a_max,
            tie_rule: TieBreak::default(),
        }
    }

    /// Search bound `2 * (Lip G + T * Lip F)` from the data bounds, floored
    /// at one. Value slices stay `Lip G + (T - t_k) * Lip F` Lipschitz, so
    /// no minimizer escapes this window.
    pub fn for_problem(g: &GridSpec, spec: &ProblemSpec) -> Result<Self> {
        let (lip_g, lip_f) = coupling::data_lipschitz(g, spec)?;
        Ok(Self::new((2.0 * (lip_g + g.t_end * lip_f)).max(1.0)))
    }
}

#[inline]
fn objective(g: &GridSpec, next: &[f64], xi: f64, alpha: f64) -> f64 {
    grid::interpolate(g, next, xi - g.h * alpha) + 0.5 * g.h * alpha * alpha
}

/// One Semi-Lagrangian update at node `i` against the next time level.
/// Returns the minimum value (running cost included) and the minimizing
/// control.
pub fn sl_step(
    g: &GridSpec,
    next: &[f64],
    i: usize,
    running_cost: f64,
    search: &ControlSearch,
) -> Result<(f64, f64)> {
    if i >= g.n_nodes {
        return Err(SolverError::IndexOutOfRange {
            index: i,
            n_nodes: g.n_nodes,
        });
    }
    debug_assert_eq!(next.len(), g.n_nodes);
    let xi = g.node(i);
    let a = search.a_max;

    let mut best_val = objective(g, next, xi, -a);
    let mut best_alpha = -a;
    let consider = |alpha: f64, best_val: &mut f64, best_alpha: &mut f64| {
        let val = objective(g, next, xi, alpha);
        let better = val < *best_val
            || (val == *best_val
                && (alpha.abs() < best_alpha.abs()
                    || (alpha.abs() == best_alpha.abs() && alpha < *best_alpha)));
        if better {
            *best_val = val;
            *best_alpha = alpha;
        }
    };
    consider(a, &mut best_val, &mut best_alpha);

    // Nodes whose position is reachable within the window; the map
    // a -> x_i - h a is decreasing, so node j is hit at a_j = (x_i - x_j)/h.
    let reach_lo = xi - g.h * a;
    let reach_hi = xi + g.h * a;
    let j_lo = ((reach_lo - g.x_lo) / g.rho).ceil().max(0.0) as usize;
    let j_hi = {
        let u = ((reach_hi - g.x_lo) / g.rho).floor();
        if u < 0.0 {
            0
        } else {
            (u as usize).min(g.n_nodes - 1)
        }
    };
    for j in j_lo..=j_hi.min(g.n_nodes - 1) {
        let alpha_j = (xi - g.node(j)) / g.h;
        if alpha_j.abs() <= a {
            consider(alpha_j, &mut best_val, &mut best_alpha);
        }
    }

    // Interior stationary points, one per reachable cell: the interpolant
    // slope, admissible only while the foot point stays in that cell.
    let c_lo = j_lo.saturating_sub(1);
    let c_hi = j_hi.min(g.n_cells() - 1);
    for c in c_lo..=c_hi {
        let slope = (next[c + 1] - next[c]) / g.rho;
        let cell_alpha_lo = (xi - g.node(c + 1)) / g.h;
        let cell_alpha_hi = (xi - g.node(c)) / g.h;
        let lo = cell_alpha_lo.max(-a);
        let hi = cell_alpha_hi.min(a);
        if lo <= hi {
            consider(slope.clamp(lo, hi), &mut best_val, &mut best_alpha);
        }
    }

    Ok((best_val + g.h * running_cost, best_alpha))
}

/// Backward sweep against explicit terminal values and per-level running
/// costs (`costs[k]` holds `F(x_i, t_k)` for `k = 0..n_steps`).
pub fn solve_backward_with_costs(
    g: &GridSpec,
    terminal: &[f64],
    costs: &[NodeField],
    search: &ControlSearch,
) -> Result<SpaceTimeField> {
    debug_assert_eq!(terminal.len(), g.n_nodes);
    debug_assert_eq!(costs.len(), g.n_steps);
    let mut levels = vec![vec![0.0; g.n_nodes]; g.n_steps + 1];
    levels[g.n_steps] = terminal.to_vec();
    for k in (0..g.n_steps).rev() {
        let (head, tail) = levels.split_at_mut(k + 1);
        let next = &tail[0];
        let cur = &mut head[k];
        for i in 0..g.n_nodes {
            let (val, _) = sl_step(g, next, i, costs[k][i], search)?;
            cur[i] = val;
        }
    }
    Ok(SpaceTimeField::from_levels(levels))
}

/// Backward solve for a problem against a frozen mass evolution: terminal
/// data `G(x_i)` and running costs `F(x_i, m(t_k))` taken slice by slice.
pub fn solve_backward(
    g: &GridSpec,
    spec: &ProblemSpec,
    mass: &MassEvolution,
) -> Result<SpaceTimeField> {
    mass.validate(g)?;
    let search = ControlSearch::for_problem(g, spec)?;
    let terminal = coupling::eval_g(g, spec);
    let mut costs = Vec::with_capacity(g.n_steps);
    for k in 0..g.n_steps {
        costs.push(coupling::eval_f(g, spec, mass.step(k))?);
    }
    solve_backward_with_costs(g, &terminal, &costs, &search)
}

/// Space-time extension of the discrete value: piecewise constant in time
/// (floor index) and piecewise linear in space.
pub fn extend_value(g: &GridSpec, v: &SpaceTimeField, x: f64, t: f64) -> Result<f64> {
    if t < 0.0 || t > g.t_end * (1.0 + 1e-12) {
        return Err(SolverError::TimeOutOfRange { t, t_end: g.t_end });
    }
    let k = ((t / g.h).floor() as usize).min(g.n_steps);
    Ok(grid::interpolate(g, v.level(k), x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coupling::{builtin_problem, ProblemName};
    use crate::grid::build_grid;
    use crate::transport;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Brute-force oracle: scan the objective over a fine alpha lattice.
    fn scan_oracle(g: &GridSpec, next: &[f64], i: usize, a_max: f64, step: f64) -> f64 {
        let xi = g.node(i);
        let n = (2.0 * a_max / step).round() as usize;
        let mut best = f64::MAX;
        for p in 0..=n {
            let alpha = -a_max + p as f64 * step;
            let val = grid::interpolate(g, next, xi - g.h * alpha) + 0.5 * g.h * alpha * alpha;
            if val < best {
                best = val;
            }
        }
        best
    }

    /// Two-stage scan: coarse pass, then a fine pass around the best point.
    fn scan_oracle_refined(g: &GridSpec, next: &[f64], i: usize, a_max: f64) -> f64 {
        let coarse = 1e-3;
        let xi = g.node(i);
        let n = (2.0 * a_max / coarse).round() as usize;
        let mut best = f64::MAX;
        let mut best_alpha = -a_max;
        for p in 0..=n {
            let alpha = -a_max + p as f64 * coarse;
            let val = grid::interpolate(g, next, xi - g.h * alpha) + 0.5 * g.h * alpha * alpha;
            if val < best {
                best = val;
                best_alpha = alpha;
            }
        }
        let lo = (best_alpha - 2.0 * coarse).max(-a_max);
        let hi = (best_alpha + 2.0 * coarse).min(a_max);
        let fine = 1e-6;
        let n = ((hi - lo) / fine).round() as usize;
        for p in 0..=n {
            let alpha = lo + p as f64 * fine;
            let val = grid::interpolate(g, next, xi - g.h * alpha) + 0.5 * g.h * alpha * alpha;
            if val < best {
                best = val;
            }
        }
        best
    }

    #[test]
    fn sl_step_constant_field_is_fixed_by_zero_control() {
        let g = build_grid(0.0, 1.0, 0.01, 0.1, 1.0).unwrap();
        let next = vec![4.2; g.n_nodes];
        let search = ControlSearch::new(2.0);
        let (val, alpha) = sl_step(&g, &next, 50, 0.0, &search).unwrap();
        assert_eq!(alpha, 0.0);
        assert!((val - 4.2).abs() <= 1e-14);
    }

    #[test]
    fn sl_step_symmetric_quadratic_at_origin() {
        let g = build_grid(-1.0, 1.0, 0.01, 0.1, 1.0).unwrap();
        let next: Vec<f64> = (0..g.n_nodes).map(|i| 0.5 * g.node(i) * g.node(i)).collect();
        let i = g.n_nodes / 2; // x = 0
        assert_eq!(g.node(i), 0.0);
        let (val, alpha) = sl_step(&g, &next, i, 0.0, &ControlSearch::new(2.0)).unwrap();
        assert_eq!(alpha, 0.0);
        assert!(val.abs() <= 1e-14);
    }

    #[test]
    fn sl_step_matches_fine_scan_on_quadratic() {
        let g = build_grid(-1.0, 1.0, 0.01, 0.1, 1.0).unwrap();
        let next: Vec<f64> = (0..g.n_nodes).map(|i| 0.5 * g.node(i) * g.node(i)).collect();
        let i = ((0.5 - g.x_lo) / g.rho).round() as usize; // x = 0.5
        let a_max = 2.0;
        let (val, _) = sl_step(&g, &next, i, 0.0, &ControlSearch::new(a_max)).unwrap();
        let oracle = scan_oracle(&g, &next, i, a_max, 1e-6);
        assert!(
            (val - oracle).abs() <= 1e-10,
            "exact {val} vs scan {oracle}"
        );
    }

    #[test]
    fn sl_step_matches_scan_oracle_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(101);
        for case in 0..100 {
            let rho = rng.gen_range(0.005..0.05);
            let h = rho / rng.gen_range(0.05..0.5); // keep alpha-basins resolvable
            let g = build_grid(0.0, 1.0, rho, h, h * 2.0).unwrap();
            let lip: f64 = rng.gen_range(0.2..2.0);
            let mut next = vec![rng.gen_range(-1.0..1.0)];
            for _ in 1..g.n_nodes {
                next.push(next.last().unwrap() + rng.gen_range(-1.0..1.0) * lip * g.rho);
            }
            let a_max = 2.0 * lip + 0.5;
            let i = rng.gen_range(0..g.n_nodes);
            let (val, alpha) = sl_step(&g, &next, i, 0.0, &ControlSearch::new(a_max)).unwrap();
            let oracle = scan_oracle_refined(&g, &next, i, a_max);
            assert!(
                (val - oracle).abs() <= 1e-10,
                "case {case}: exact {val} vs scan {oracle}"
            );
            assert!(alpha.abs() <= a_max);
        }
    }

    #[test]
    fn sl_step_monotone_and_shift_invariant() {
        let g = build_grid(0.0, 1.0, 0.02, 0.1, 1.0).unwrap();
        let search = ControlSearch::new(3.0);
        let mut rng = ChaCha8Rng::seed_from_u64(103);
        for _ in 0..1000 {
            let v: Vec<f64> = (0..g.n_nodes).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let w: Vec<f64> = v.iter().map(|x| x + rng.gen_range(0.0..0.5)).collect();
            let i = rng.gen_range(0..g.n_nodes);
            let (sv, _) = sl_step(&g, &v, i, 0.0, &search).unwrap();
            let (sw, _) = sl_step(&g, &w, i, 0.0, &search).unwrap();
            assert!(sv <= sw + 1e-14, "monotonicity violated at node {i}");

            let k: f64 = rng.gen_range(-5.0..5.0);
            let vk: Vec<f64> = v.iter().map(|x| x + k).collect();
            let (svk, _) = sl_step(&g, &vk, i, 0.0, &search).unwrap();
            assert!((svk - sv - k).abs() <= 1e-12, "shift identity violated");
        }
    }

    #[test]
    fn sl_step_rejects_bad_index() {
        let g = build_grid(0.0, 1.0, 0.1, 0.1, 1.0).unwrap();
        let next = vec![0.0; g.n_nodes];
        assert!(sl_step(&g, &next, g.n_nodes, 0.0, &ControlSearch::new(1.0)).is_err());
    }

    #[test]
    fn backward_solve_propagates_constants() {
        let g = build_grid(0.0, 1.0, 0.02, 0.1, 1.0).unwrap();
        let terminal = vec![-1.5; g.n_nodes];
        let costs = vec![vec![0.0; g.n_nodes]; g.n_steps];
        let v =
            solve_backward_with_costs(&g, &terminal, &costs, &ControlSearch::new(2.0)).unwrap();
        for k in 0..=g.n_steps {
            for i in 0..g.n_nodes {
                assert!((v.level(k)[i] + 1.5).abs() <= 1e-13);
            }
        }
    }

    #[test]
    fn backward_solve_one_step_matches_hopf_lax() {
        // Terminal x^2/2, no running cost: one step gives x^2 / (2 (1 + h)),
        // up to the interpolation defect which is at most rho^2/8.
        let g = build_grid(-1.0, 1.0, 0.01, 0.1, 0.1).unwrap();
        assert_eq!(g.n_steps, 1);
        let terminal: Vec<f64> = (0..g.n_nodes).map(|i| 0.5 * g.node(i) * g.node(i)).collect();
        let costs = vec![vec![0.0; g.n_nodes]];
        let v =
            solve_backward_with_costs(&g, &terminal, &costs, &ControlSearch::new(4.0)).unwrap();
        let slack = g.rho * g.rho / 8.0 + 1e-12;
        for i in 0..g.n_nodes {
            let x = g.node(i);
            if (x - g.x_lo).min(g.x_hi - x) < g.h * 4.0 {
                continue; // window reaches outside the hull
            }
            let exact = 0.5 * x * x / (1.0 + g.h);
            let got = v.level(0)[i];
            assert!(
                got >= exact - 1e-12 && got <= exact + slack,
                "x = {x}: got {got}, exact {exact}"
            );
        }
    }

    #[test]
    fn backward_solve_respects_a_priori_bound() {
        let spec = builtin_problem(ProblemName::Test2);
        let g = spec.grid().unwrap();
        let w0 = transport::initial_mass(&g, |x| (spec.m0)(x)).unwrap();
        let mass =
            MassEvolution::from_steps(vec![w0; g.n_steps + 1]);
        let v = solve_backward(&g, &spec, &mass).unwrap();

        // Terminal data vanishes for this problem.
        assert!(v.level(g.n_steps).iter().all(|x| *x == 0.0));

        let mut f_sup = 0.0f64;
        for k in 0..g.n_steps {
            for val in coupling::eval_f(&g, &spec, mass.step(k)).unwrap() {
                f_sup = f_sup.max(val.abs());
            }
        }
        let bound = g.t_end * f_sup + 1e-9;
        for k in 0..=g.n_steps {
            for i in 0..g.n_nodes {
                assert!(v.level(k)[i].abs() <= bound);
            }
        }
    }

    #[test]
    fn backward_solve_discrete_lipschitz_bound() {
        let spec = builtin_problem(ProblemName::Test1);
        let g = spec.grid().unwrap();
        let w0 = transport::initial_mass(&g, |x| (spec.m0)(x)).unwrap();
        let mass = MassEvolution::from_steps(vec![w0; g.n_steps + 1]);
        let v = solve_backward(&g, &spec, &mass).unwrap();
        let (lip_g, lip_f) = coupling::data_lipschitz(&g, &spec).unwrap();
        let bound = 1.1 * (lip_g + g.t_end * lip_f);
        for k in 0..=g.n_steps {
            let lv = v.level(k);
            for i in 0..g.n_cells() {
                let slope = ((lv[i + 1] - lv[i]) / g.rho).abs();
                assert!(slope <= bound, "k = {k}, i = {i}: slope {slope} > {bound}");
            }
        }
    }

    #[test]
    fn backward_solve_second_difference_stable_under_refinement() {
        // Discrete weak semiconcavity: the max positive second difference of
        // v stays bounded while rho -> rho/2 -> rho/4 at fixed h.
        let mut stats = Vec::new();
        for level in 0..3 {
            let rho = 0.02 / 2f64.powi(level);
            let g = build_grid(-1.0, 1.0, rho, 0.1, 1.0).unwrap();
            let terminal: Vec<f64> = (0..g.n_nodes)
                .map(|i| -0.5 * (g.node(i) + 0.5).powi(2) * (1.5 - g.node(i)).powi(2))
                .collect();
            let costs: Vec<Vec<f64>> = (0..g.n_steps)
                .map(|_| (0..g.n_nodes).map(|i| (3.0 * g.node(i)).cos()).collect())
                .collect();
            let v = solve_backward_with_costs(&g, &terminal, &costs, &ControlSearch::new(8.0))
                .unwrap();
            let mut max_dd = f64::MIN;
            for k in 0..=g.n_steps {
                let lv = v.level(k);
                for i in 1..g.n_nodes - 1 {
                    max_dd = max_dd.max((lv[i + 1] - 2.0 * lv[i] + lv[i - 1]) / (g.rho * g.rho));
                }
            }
            stats.push(max_dd);
        }
        for pair in stats.windows(2) {
            assert!(
                pair[1] <= 2.0 * pair[0].max(0.5),
                "second differences blow up across refinement: {stats:?}"
            );
        }
    }

    #[test]
    fn extend_value_floor_in_time_linear_in_space() {
        let g = build_grid(0.0, 1.0, 0.1, 0.25, 1.0).unwrap();
        let levels: Vec<Vec<f64>> = (0..=g.n_steps)
            .map(|k| (0..g.n_nodes).map(|i| (k * 100 + i) as f64).collect())
            .collect();
        let v = SpaceTimeField::from_levels(levels);
        let k = 2;
        let i = 4;
        assert_eq!(
            extend_value(&g, &v, g.node(i), g.time(k)).unwrap(),
            v.level(k)[i]
        );
        // Same slice halfway through the step.
        assert_eq!(
            extend_value(&g, &v, g.node(i), g.time(k) + 0.5 * g.h).unwrap(),
            v.level(k)[i]
        );
        // Mid-cell averages the adjacent node values.
        let mid = 0.5 * (g.node(i) + g.node(i + 1));
        let expect = 0.5 * (v.level(k)[i] + v.level(k)[i + 1]);
        assert!((extend_value(&g, &v, mid, g.time(k)).unwrap() - expect).abs() <= 1e-12);
        // t = T uses the terminal slice; out-of-range t fails.
        assert_eq!(
            extend_value(&g, &v, g.node(i), g.t_end).unwrap(),
            v.level(g.n_steps)[i]
        );
        assert!(extend_value(&g, &v, 0.5, -0.1).is_err());
        assert!(extend_value(&g, &v, 0.5, g.t_end + 0.1).is_err());
    }

    #[test]
    fn consistency_residual_on_smooth_test_function() {
        // (phi_{i,k} - S[phi_{k+1}])/h approximates
        // -dphi/dt + |Dphi|^2/2 - F at interior nodes.
        let t_probe = 0.5;
        let mut errs = Vec::new();
        let mut hs = Vec::new();
        for level in 0..4 {
            let h = 0.1 / 2f64.powi(level);
            let rho = 0.5 * h;
            let g = build_grid(-2.5, 2.5, rho, h, 1.0).unwrap();
            let k = (t_probe / g.h).floor() as usize;
            let tk = g.time(k);
            let tk1 = g.time(k + 1);
            let phi_next: Vec<f64> =
                (0..g.n_nodes).map(|i| g.node(i).sin() * (1.0 + tk1)).collect();
            let search = ControlSearch::new(8.0);
            let mut max_err = 0.0f64;
            for i in 0..g.n_nodes {
                let x = g.node(i);
                if !(-1.0..=1.0).contains(&x) {
                    continue;
                }
                let f_cost = x.cos();
                let (s, _) = sl_step(&g, &phi_next, i, f_cost, &search).unwrap();
                let residual = (x.sin() * (1.0 + tk) - s) / g.h;
                let target = -x.sin() + 0.5 * (x.cos() * (1.0 + tk)).powi(2) - f_cost;
                max_err = max_err.max((residual - target).abs());
            }
            errs.push(max_err);
            hs.push(g.h);
        }
        // Observed order in h of the residual error.
        let mut orders = Vec::new();
        for w in errs.windows(2).zip(hs.windows(2)) {
            let (e, h) = w;
            orders.push((e[0] / e[1]).ln() / (h[0] / h[1]).ln());
        }
        assert!(
            orders.iter().all(|o| *o >= 1.0),
            "observed orders {orders:?} from errors {errs:?}"
        );
    }
}
