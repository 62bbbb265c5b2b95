//! Experiment driver behind the command-line binary: configuration
//! resolution, the `run`, `table1` and `convergence` commands, and the
//! CSV/JSON writers.
//!
//! Output layout for `run`:
//! - `mass.csv`      rows `(k, t_k, i, x_i, weight, density)`
//! - `value.csv`     rows `(k, t_k, i, x_i, value)`
//! - `gradient.csv`  rows `(k, t_k, i, x_i, value)`
//! - `errors.csv`    rows `(p, E_v, E_m, E_m_density)`
//! - `summary.json`  effective configuration, status, iteration count,
//!                   wall time, warnings

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::coupling::{self, ProblemName, ProblemSpec, TABLE1_PARAMS};
use crate::error::{Result, SolverError};
use crate::fixedpoint::{self, MfgSolution, SolveStatus};
use crate::grid::GridSpec;
use crate::transport;

/// Environment variable consulted for the default output directory.
pub const OUT_ENV: &str = "MFG_SL_OUT";

/// Resolved run configuration; `None` overrides fall back to the problem
/// preset when the run is assembled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub problem: String,
    pub out: PathBuf,
    pub rho: Option<f64>,
    pub h: Option<f64>,
    pub eps: Option<f64>,
    pub sigma: Option<f64>,
    pub tau: Option<f64>,
    pub max_iter: Option<usize>,
    pub snapshot_every: usize,
    pub threads: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            problem: "test2".into(),
            out: default_out_dir(),
            rho: None,
            h: None,
            eps: None,
            sigma: None,
            tau: None,
            max_iter: None,
            snapshot_every: 1,
            threads: 1,
        }
    }
}

/// `--out` flag, else `MFG_SL_OUT`, else `./out`.
pub fn default_out_dir() -> PathBuf {
    std::env::var_os(OUT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("out"))
}

/// Parses the flat `key = value` config format, one key per line, `#` for
/// comments. Keys match the [`RunConfig`] field names.
pub fn parse_config_file(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path)?;
    let mut config = RunConfig::default();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            SolverError::Config(format!("line {}: expected key = value", lineno + 1))
        })?;
        let key = key.trim();
        let value = value.trim();
        let bad = |e: &dyn std::fmt::Display| {
            SolverError::Config(format!("line {}: {key}: {e}", lineno + 1))
        };
        match key {
            "problem" => config.problem = value.to_string(),
            "out" => config.out = PathBuf::from(value),
            "rho" => config.rho = Some(value.parse().map_err(|e| bad(&e))?),
            "h" => config.h = Some(value.parse().map_err(|e| bad(&e))?),
            "eps" => config.eps = Some(value.parse().map_err(|e| bad(&e))?),
            "sigma" => config.sigma = Some(value.parse().map_err(|e| bad(&e))?),
            "tau" => config.tau = Some(value.parse().map_err(|e| bad(&e))?),
            "max_iter" => config.max_iter = Some(value.parse().map_err(|e| bad(&e))?),
            "snapshot_every" => config.snapshot_every = value.parse().map_err(|e| bad(&e))?,
            "threads" => config.threads = value.parse().map_err(|e| bad(&e))?,
            other => {
                return Err(SolverError::Config(format!(
                    "line {}: unknown key '{other}'",
                    lineno + 1
                )))
            }
        }
    }
    Ok(config)
}

fn positive(name: &str, v: f64) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(SolverError::InvalidParameter(format!(
            "{name} override must be positive (got {v})"
        )))
    }
}

/// Applies the overrides to the named preset and builds the matching grid.
/// Also fills the config's `None` fields with the effective values so the
/// written summary round-trips.
pub fn resolve(config: &mut RunConfig) -> Result<(GridSpec, ProblemSpec)> {
    let name: ProblemName = config.problem.parse()?;
    let mut spec = coupling::builtin_problem(name);
    if let Some(v) = config.rho {
        spec.rho = positive("rho", v)?;
    }
    if let Some(v) = config.h {
        spec.h = positive("h", v)?;
    }
    if let Some(v) = config.eps {
        spec.eps = positive("eps", v)?;
    }
    if let Some(v) = config.sigma {
        spec.sigma = positive("sigma", v)?;
    }
    if let Some(v) = config.tau {
        if !(v >= 0.0) {
            return Err(SolverError::InvalidParameter(format!(
                "tau override must be nonnegative (got {v})"
            )));
        }
        spec.tau = v;
    }
    if let Some(v) = config.max_iter {
        spec.p_max = v;
    }
    if config.snapshot_every == 0 {
        return Err(SolverError::InvalidParameter(
            "snapshot_every must be at least 1".into(),
        ));
    }
    let g = spec.grid()?;
    config.rho = Some(spec.rho);
    config.h = Some(spec.h);
    config.eps = Some(spec.eps);
    config.sigma = Some(spec.sigma);
    config.tau = Some(spec.tau);
    config.max_iter = Some(spec.p_max);
    Ok((g, spec))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub config: RunConfig,
    pub status: String,
    pub iterations: usize,
    pub final_e_v: f64,
    pub final_e_m: f64,
    pub final_e_m_density: f64,
    pub wall_seconds: f64,
    pub warnings: Vec<String>,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub status: SolveStatus,
    pub summary: RunSummary,
    pub solution: MfgSolution,
    pub grid: GridSpec,
}

/// Runs one problem and writes the output files. The caller maps the status
/// to the process exit code.
pub fn cmd_run(mut config: RunConfig) -> Result<RunOutcome> {
    if config.threads > 1 {
        eprintln!("note: parallel mode is not implemented; running single-threaded");
        config.threads = 1;
    }
    let (g, spec) = resolve(&mut config)?;
    fs::create_dir_all(&config.out)?;

    let t0 = Instant::now();
    let solution = fixedpoint::solve_mfg(&g, &spec)?;
    let wall = t0.elapsed().as_secs_f64();
    for w in &solution.report.warnings {
        eprintln!("warning: {w}");
    }

    write_mass_csv(&config.out.join("mass.csv"), &g, &solution, config.snapshot_every)?;
    write_field_csv(&config.out.join("value.csv"), &g, &solution.v, config.snapshot_every)?;
    write_field_csv(
        &config.out.join("gradient.csv"),
        &g,
        &solution.alpha,
        config.snapshot_every,
    )?;
    write_errors_csv(&config.out.join("errors.csv"), &solution)?;

    let summary = RunSummary {
        config: config.clone(),
        status: match solution.report.status {
            SolveStatus::Converged => "converged".into(),
            SolveStatus::CapReached => "cap_reached".into(),
        },
        iterations: solution.report.iterations(),
        final_e_v: solution.report.last_e_v(),
        final_e_m: solution.report.last_e_m(),
        final_e_m_density: solution.report.last_e_m() / g.rho,
        wall_seconds: wall,
        warnings: solution.report.warnings.clone(),
    };
    let file = File::create(config.out.join("summary.json"))?;
    serde_json::to_writer_pretty(BufWriter::new(file), &summary)?;

    Ok(RunOutcome {
        status: solution.report.status,
        summary,
        solution,
        grid: g,
    })
}

fn write_mass_csv(path: &Path, g: &GridSpec, sol: &MfgSolution, every: usize) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "k,t_k,i,x_i,weight,density")?;
    for k in 0..=g.n_steps {
        if k % every != 0 && k != g.n_steps {
            continue;
        }
        let slice = sol.m.step(k);
        for i in 0..g.n_nodes {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                k,
                g.time(k),
                i,
                g.node(i),
                slice[i],
                slice[i] / g.rho
            )?;
        }
    }
    Ok(())
}

fn write_field_csv(
    path: &Path,
    g: &GridSpec,
    field: &crate::grid::SpaceTimeField,
    every: usize,
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "k,t_k,i,x_i,value")?;
    for k in 0..=g.n_steps {
        if k % every != 0 && k != g.n_steps {
            continue;
        }
        let slice = field.level(k);
        for i in 0..g.n_nodes {
            writeln!(w, "{},{},{},{},{}", k, g.time(k), i, g.node(i), slice[i])?;
        }
    }
    Ok(())
}

fn write_errors_csv(path: &Path, sol: &MfgSolution) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "p,E_v,E_m,E_m_density")?;
    for r in &sol.report.records {
        writeln!(w, "{},{},{},{}", r.p, r.e_v, r.e_m, r.e_m_density)?;
    }
    Ok(())
}

/// Published `(E_v(20), E_m(20))` reference values for the four refinement
/// rows of the first experiment.
pub const TABLE1_REFERENCE: [(f64, f64); 4] = [
    (4.57e-6, 2.08e-4),
    (1.05e-5, 7.20e-4),
    (1.04e-5, 9.96e-4),
    (9.74e-4, 3.56e-3),
];

#[derive(Debug, Clone)]
pub struct Table1Row {
    pub rho: f64,
    pub h: f64,
    pub eps: f64,
    pub e_v: f64,
    pub e_m: f64,
    pub reference_e_v: f64,
    pub reference_e_m: f64,
}

/// Runs the four refinement rows at a fixed 20 updates each and returns the
/// final sup-norm changes next to the reference values.
pub fn cmd_table1() -> Result<Vec<Table1Row>> {
    let mut rows = Vec::with_capacity(4);
    for row in 0..TABLE1_PARAMS.len() {
        let mut spec = coupling::test1_row(row)?;
        spec.tau = 0.0; // never stop early: measure the change at p = 20
        spec.p_max = 20;
        let g = spec.grid()?;
        let sol = fixedpoint::solve_mfg(&g, &spec)?;
        let (reference_e_v, reference_e_m) = TABLE1_REFERENCE[row];
        rows.push(Table1Row {
            rho: spec.rho,
            h: spec.h,
            eps: spec.eps,
            e_v: sol.report.last_e_v(),
            e_m: sol.report.last_e_m(),
            reference_e_v,
            reference_e_m,
        });
    }
    Ok(rows)
}

pub fn print_table1(rows: &[Table1Row]) {
    println!(
        "{:>10} {:>10} {:>10} {:>12} {:>12} {:>12} {:>12}",
        "rho", "h", "eps", "E_v(20)", "E_m(20)", "ref E_v", "ref E_m"
    );
    for r in rows {
        println!(
            "{:>10.2e} {:>10.2e} {:>10.2e} {:>12.3e} {:>12.3e} {:>12.3e} {:>12.3e}",
            r.rho, r.h, r.eps, r.e_v, r.e_m, r.reference_e_v, r.reference_e_m
        );
    }
}

#[derive(Debug, Clone)]
pub struct ConvergenceLevel {
    pub rho: f64,
    pub h: f64,
    pub eps: f64,
    /// Wasserstein-1 distance of the final-time mass to the previous level's
    /// (coarse weights injected onto the fine lattice); `None` on level 0.
    pub w1_to_previous: Option<f64>,
    /// Max density `m_{i,k}/rho` over the whole evolution.
    pub max_density: f64,
    /// Half-width of the union of supports around the domain midpoint.
    pub support_radius: f64,
    /// `max_k W1(m(t_k), m(t_{k+1})) / h`.
    pub time_lipschitz: f64,
    /// Max positive second difference of `v` over grid nodes, scaled `1/rho^2`.
    pub semiconcavity: f64,
}

/// Runs a refinement sequence anchored at the named preset: `rho` halves per
/// level, `h` scales like `rho^(4/5)` and `eps` like `rho^(2/3)`, keeping the
/// inverse-CFL and smoothing balances. Reports self-convergence and the
/// stability statistics per level.
pub fn cmd_convergence(
    name: ProblemName,
    levels: usize,
    max_iter: Option<usize>,
) -> Result<Vec<ConvergenceLevel>> {
    if levels < 2 {
        return Err(SolverError::InvalidParameter(
            "convergence study needs at least 2 levels".into(),
        ));
    }
    let anchor = coupling::builtin_problem(name);
    let mut out: Vec<ConvergenceLevel> = Vec::with_capacity(levels);
    let mut previous_final: Option<(GridSpec, Vec<f64>)> = None;
    for level in 0..levels {
        let scale = 0.5f64.powi(level as i32);
        let mut spec = anchor.clone();
        spec.rho = anchor.rho * scale;
        spec.h = anchor.h * scale.powf(0.8);
        spec.eps = anchor.eps * scale.powf(2.0 / 3.0);
        if let Some(p) = max_iter {
            spec.p_max = p;
        }
        let g = spec.grid()?;
        let sol = fixedpoint::solve_mfg(&g, &spec)?;

        let mut max_density = 0.0f64;
        let mut support_lo = f64::MAX;
        let mut support_hi = f64::MIN;
        for k in 0..=g.n_steps {
            for (i, wgt) in sol.m.step(k).iter().enumerate() {
                max_density = max_density.max(wgt / g.rho);
                if *wgt > 1e-12 {
                    support_lo = support_lo.min(g.node(i));
                    support_hi = support_hi.max(g.node(i));
                }
            }
        }
        let mid = 0.5 * (g.x_lo + g.x_hi);
        let support_radius = (support_hi - mid).max(mid - support_lo);

        let mut time_lipschitz = 0.0f64;
        for k in 0..g.n_steps {
            let d = transport::wasserstein1(&g, sol.m.step(k), sol.m.step(k + 1))?;
            time_lipschitz = time_lipschitz.max(d / g.h);
        }

        let mut semiconcavity = f64::MIN;
        for k in 0..=g.n_steps {
            let lv = sol.v.level(k);
            for i in 1..g.n_nodes - 1 {
                semiconcavity =
                    semiconcavity.max((lv[i + 1] - 2.0 * lv[i] + lv[i - 1]) / (g.rho * g.rho));
            }
        }

        let final_mass = sol.m.step(g.n_steps).to_vec();
        let w1_to_previous = match &previous_final {
            None => None,
            Some((g_coarse, m_coarse)) => {
                // rho halves exactly, so coarse nodes sit on the fine lattice.
                let mut injected = vec![0.0; g.n_nodes];
                for (i, wgt) in m_coarse.iter().enumerate() {
                    let j = ((g_coarse.node(i) - g.x_lo) / g.rho).round() as usize;
                    injected[j.min(g.n_nodes - 1)] += wgt;
                }
                Some(transport::wasserstein1(&g, &injected, &final_mass)?)
            }
        };
        previous_final = Some((g, final_mass));

        out.push(ConvergenceLevel {
            rho: spec.rho,
            h: spec.h,
            eps: spec.eps,
            w1_to_previous,
            max_density,
            support_radius,
            time_lipschitz,
            semiconcavity,
        });
    }
    Ok(out)
}

pub fn print_convergence(levels: &[ConvergenceLevel]) {
    println!(
        "{:>10} {:>10} {:>10} {:>12} {:>12} {:>12} {:>12} {:>12}",
        "rho", "h", "eps", "W1(prev)", "max_density", "supp_radius", "time_lip", "semiconc"
    );
    for l in levels {
        let w1 = l
            .w1_to_previous
            .map_or_else(|| format!("{:>12}", "-"), |d| format!("{d:>12.4e}"));
        println!(
            "{:>10.3e} {:>10.3e} {:>10.3e} {w1} {:>12.4} {:>12.4} {:>12.4} {:>12.4}",
            l.rho, l.h, l.eps, l.max_density, l.support_radius, l.time_lipschitz, l.semiconcavity
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        fs::write(
            &path,
            "# sample\nproblem = nogame\nout = results\nrho = 0.02\nh = 0.04\n\
             eps = 0.06\ntau = 1e-4\nmax_iter = 7\nsnapshot_every = 5\nthreads = 1\n",
        )
        .unwrap();
        let config = parse_config_file(&path).unwrap();
        assert_eq!(config.problem, "nogame");
        assert_eq!(config.out, PathBuf::from("results"));
        assert_eq!(config.rho, Some(0.02));
        assert_eq!(config.h, Some(0.04));
        assert_eq!(config.eps, Some(0.06));
        assert_eq!(config.tau, Some(1e-4));
        assert_eq!(config.max_iter, Some(7));
        assert_eq!(config.snapshot_every, 5);
    }

    #[test]
    fn config_file_rejects_unknown_keys() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        fs::write(&path, "bogus = 1\n").unwrap();
        assert!(matches!(
            parse_config_file(&path),
            Err(SolverError::Config(_))
        ));
    }

    #[test]
    fn resolve_fills_effective_values() {
        let mut config = RunConfig {
            problem: "test2".into(),
            ..RunConfig::default()
        };
        let (g, spec) = resolve(&mut config).unwrap();
        assert_eq!(config.rho, Some(spec.rho));
        assert_eq!(config.h, Some(spec.h));
        assert_eq!(config.tau, Some(1e-3));
        assert_eq!(g.n_steps, 200);
    }

    #[test]
    fn resolve_rejects_negative_override() {
        let mut config = RunConfig {
            problem: "test2".into(),
            rho: Some(-1.0),
            ..RunConfig::default()
        };
        assert!(resolve(&mut config).is_err());
    }

    #[test]
    fn resolve_rejects_unknown_problem() {
        let mut config = RunConfig {
            problem: "test9".into(),
            ..RunConfig::default()
        };
        assert!(matches!(
            resolve(&mut config),
            Err(SolverError::UnknownProblem(_))
        ));
    }
}
