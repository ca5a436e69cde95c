//! Experiment drivers behind the command line: PD tables, surfaces, oracle
//! runs and convergence studies, written as CSV and gnuplot data files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::config::{ExperimentConfig, OutputFormat};
use crate::error::{Error, Result};
use crate::fourier_oracle::default_probabilities;
use crate::levy_measures::SwitchingModel;
use crate::time_stepper::{solve, SolutionSurface};

/// LRE assigned when the two values agree exactly.
pub const LRE_FLOOR: f64 = -16.0;

/// References below this make relative errors meaningless.
pub const MIN_REFERENCE: f64 = 1e-12;

pub const NA: &str = "NA";

/// `log10 |(pd - reference) / reference|`, floored at [`LRE_FLOOR`].
pub fn log_relative_error(pd: f64, reference: f64) -> Result<f64> {
    let rel = relative_error(pd, reference)?;
    Ok(if rel == 0.0 { LRE_FLOOR } else { rel.log10().max(LRE_FLOOR) })
}

pub fn relative_error(pd: f64, reference: f64) -> Result<f64> {
    if reference.abs() < MIN_REFERENCE {
        return Err(Error::ZeroReference);
    }
    Ok(((pd - reference) / reference).abs())
}

/// Twelve significant digits.
pub fn format_value(v: f64) -> String {
    if !v.is_finite() {
        return NA.into();
    }
    if v == 0.0 {
        return "0".into();
    }
    let mag = v.abs().log10().floor() as i32;
    if (-5..=11).contains(&mag) {
        let s = format!("{:.*}", (11 - mag).max(0) as usize, v);
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    } else {
        format!("{v:.11e}")
    }
}

fn format_opt(v: Option<f64>) -> String {
    v.map_or_else(|| NA.to_string(), format_value)
}

/// PD at the configured evaluation point, `[horizon][regime]`.
#[derive(Debug, Clone, PartialEq)]
pub struct HorizonTable {
    pub horizons: Vec<f64>,
    pub pd: Vec<Vec<f64>>,
}

/// Marches to the largest horizon and reads every horizon that falls on the
/// step grid; the others get a solve of their own.
pub fn solve_horizons(
    cfg: &ExperimentConfig,
    model: &SwitchingModel,
    nodes: usize,
    n_steps: usize,
) -> Result<(HorizonTable, SolutionSurface)> {
    let grid = cfg.grid_with(nodes)?;
    let basis = cfg.basis_for(nodes)?;
    let solver = cfg.solver(n_steps)?;
    let surface = solve(model, &basis, &grid, &solver, &cfg.quadrature)?;
    let dt = solver.dt();
    let h = model.regime_count();
    let x = cfg.grid.eval_x;
    let mut pd = Vec::with_capacity(cfg.time.horizons.len());
    for &t in &cfg.time.horizons {
        let steps = t / dt;
        if (steps - steps.round()).abs() <= 1e-9 * steps.max(1.0) {
            let n = steps.round() as usize;
            pd.push((0..h).map(|j| surface.pd_at_step(n, j, x)).collect());
        } else {
            let own = solver.n_steps as f64 * t / solver.horizon;
            let cfg_t = crate::time_stepper::SolverConfig {
                n_steps: (own.ceil() as usize).max(1),
                horizon: t,
                ..solver
            };
            let s = solve(model, &basis, &grid, &cfg_t, &cfg.quadrature)?;
            pd.push((0..h).map(|j| s.pd_at(j, x)).collect());
        }
    }
    Ok((
        HorizonTable {
            horizons: cfg.time.horizons.clone(),
            pd,
        },
        surface,
    ))
}

pub fn oracle_horizons(cfg: &ExperimentConfig, model: &SwitchingModel) -> Result<HorizonTable> {
    let k = cfg.barrier.log_level()? - cfg.grid.eval_x;
    let pd = cfg
        .time
        .horizons
        .par_iter()
        .map(|&t| default_probabilities(model, t, k))
        .collect::<Result<Vec<_>>>()?;
    Ok(HorizonTable {
        horizons: cfg.time.horizons.clone(),
        pd,
    })
}

fn write_file(dir: &Path, name: &str, body: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(name);
    std::fs::write(&path, body)?;
    Ok(path)
}

fn table_text(t: &HorizonTable, sep: &str, comment: &str) -> String {
    let h = t.pd.first().map_or(0, Vec::len);
    let mut s = String::new();
    let head: Vec<String> = std::iter::once("T".to_string())
        .chain((1..=h).map(|j| format!("regime_{j}")))
        .collect();
    let _ = writeln!(s, "{comment}{}", head.join(sep));
    for (t, row) in t.horizons.iter().zip(&t.pd) {
        let cells: Vec<String> = std::iter::once(format_value(*t))
            .chain(row.iter().map(|v| format_value(*v)))
            .collect();
        let _ = writeln!(s, "{}", cells.join(sep));
    }
    s
}

fn write_table(cfg: &ExperimentConfig, dir: &Path, stem: &str, t: &HorizonTable) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for f in &cfg.output.formats {
        out.push(match f {
            OutputFormat::Csv => write_file(dir, &format!("{stem}.csv"), &table_text(t, ",", ""))?,
            OutputFormat::Dat => write_file(dir, &format!("{stem}.dat"), &table_text(t, " ", "# "))?,
        });
    }
    Ok(out)
}

fn write_surface(cfg: &ExperimentConfig, dir: &Path, s: &SolutionSurface) -> Result<Vec<PathBuf>> {
    let clipped = s.clipped();
    let nodes = &s.grid().nodes;
    let mut out = Vec::new();
    for f in &cfg.output.formats {
        match f {
            OutputFormat::Csv => {
                let mut body = String::from("tau,regime,x,pd\n");
                for (tau, slice) in s.taus.iter().zip(&clipped) {
                    for (j, row) in slice.iter().enumerate() {
                        for (x, v) in nodes.iter().zip(row) {
                            let _ = writeln!(
                                body,
                                "{},{},{},{}",
                                format_value(*tau),
                                j + 1,
                                format_value(*x),
                                format_value(*v)
                            );
                        }
                    }
                }
                out.push(write_file(dir, &format!("{}_surface.csv", cfg.name), &body)?);
            }
            OutputFormat::Dat => {
                for j in 0..s.regimes() {
                    let mut body = String::from("# tau x asset pd   (asset = exp(x), V0 = 1)\n");
                    for (tau, slice) in s.taus.iter().zip(&clipped) {
                        for (x, v) in nodes.iter().zip(&slice[j]) {
                            let _ = writeln!(
                                body,
                                "{} {} {} {}",
                                format_value(*tau),
                                format_value(*x),
                                format_value(x.exp()),
                                format_value(*v)
                            );
                        }
                        body.push('\n');
                    }
                    out.push(write_file(dir, &format!("{}_surface_regime{}.dat", cfg.name, j + 1), &body)?);
                }
            }
        }
    }
    Ok(out)
}

/// PD-vs-horizon table (and the surface when requested) from the RBF solver.
pub fn run_solve(cfg: &ExperimentConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    let model = cfg.validate()?;
    let (table, surface) = solve_horizons(cfg, &model, cfg.grid.nodes, cfg.time.n_steps)?;
    let over = surface.max_overshoot();
    if over > crate::time_stepper::CLIP_TOL {
        log::warn!("{}: collocation overshoot {over:.3e} outside [0, 1]", cfg.name);
    }
    let mut out = write_table(cfg, dir, &format!("{}_pd", cfg.name), &table)?;
    if cfg.output.surface {
        out.extend(write_surface(cfg, dir, &surface)?);
    }
    Ok(out)
}

/// Reference PDs from Fourier inversion as `(T, regime, k, pd)` rows.
pub fn run_oracle(cfg: &ExperimentConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    let model = cfg.validate()?;
    let table = oracle_horizons(cfg, &model)?;
    let k = cfg.barrier.log_level()?;
    let mut out = Vec::new();
    for f in &cfg.output.formats {
        let (sep, comment, ext) = match f {
            OutputFormat::Csv => (",", "", "csv"),
            OutputFormat::Dat => (" ", "# ", "dat"),
        };
        let mut body = format!("{comment}T{sep}regime{sep}k{sep}pd\n");
        for (t, row) in table.horizons.iter().zip(&table.pd) {
            for (j, v) in row.iter().enumerate() {
                let _ = writeln!(
                    body,
                    "{}{sep}{}{sep}{}{sep}{}",
                    format_value(*t),
                    j + 1,
                    format_value(k),
                    format_value(*v)
                );
            }
        }
        out.push(write_file(dir, &format!("{}_oracle.{ext}", cfg.name), &body)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRow {
    pub horizon: f64,
    pub nodes: usize,
    pub n_steps: usize,
    pub regime: usize,
    pub pd: f64,
    pub reference: f64,
    /// `None` when the reference is below [`MIN_REFERENCE`].
    pub rel_error: Option<f64>,
    pub lre: Option<f64>,
    /// Observed order against the next coarser grid with the same step count.
    pub order_space: Option<f64>,
    /// Observed order against the next smaller step count on the same grid.
    pub order_time: Option<f64>,
}

fn observed_order(coarse: Option<f64>, fine: Option<f64>, ratio: f64) -> Option<f64> {
    match (coarse, fine) {
        (Some(c), Some(f)) if c > 0.0 && f > 0.0 => Some((c / f).ln() / ratio.ln()),
        _ => None,
    }
}

/// Errors against the oracle for every `(nodes, n_steps)` pair.
pub fn convergence_table(
    cfg: &ExperimentConfig,
    model: &SwitchingModel,
    ns: &[usize],
    nsteps: &[usize],
) -> Result<Vec<ConvergenceRow>> {
    if ns.is_empty() || nsteps.is_empty() {
        return Err(Error::InvalidParameter("empty refinement list".into()));
    }
    let reference = oracle_horizons(cfg, model)?;
    let pairs: Vec<(usize, usize)> = ns.iter().flat_map(|&n| nsteps.iter().map(move |&m| (n, m))).collect();
    let tables = pairs
        .par_iter()
        .map(|&(n, m)| solve_horizons(cfg, model, n, m).map(|r| r.0))
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for ((n, m), table) in pairs.iter().zip(&tables) {
        for (ti, &t) in table.horizons.iter().enumerate() {
            for j in 0..model.regime_count() {
                let pd = table.pd[ti][j];
                let r = reference.pd[ti][j];
                let rel = relative_error(pd, r).ok();
                rows.push(ConvergenceRow {
                    horizon: t,
                    nodes: *n,
                    n_steps: *m,
                    regime: j,
                    pd,
                    reference: r,
                    rel_error: rel,
                    lre: log_relative_error(pd, r).ok(),
                    order_space: None,
                    order_time: None,
                });
            }
        }
    }
    let find = |rows: &[ConvergenceRow], t: f64, n: usize, m: usize, j: usize| {
        rows.iter()
            .find(|r| r.horizon == t && r.nodes == n && r.n_steps == m && r.regime == j)
            .and_then(|r| r.rel_error)
    };
    let snapshot = rows.clone();
    for r in &mut rows {
        if let Some(pos) = ns.iter().position(|&n| n == r.nodes).filter(|&p| p > 0) {
            let prev = ns[pos - 1];
            let c = find(&snapshot, r.horizon, prev, r.n_steps, r.regime);
            r.order_space = observed_order(c, r.rel_error, r.nodes as f64 / prev as f64);
        }
        if let Some(pos) = nsteps.iter().position(|&m| m == r.n_steps).filter(|&p| p > 0) {
            let prev = nsteps[pos - 1];
            let c = find(&snapshot, r.horizon, r.nodes, prev, r.regime);
            r.order_time = observed_order(c, r.rel_error, r.n_steps as f64 / prev as f64);
        }
    }
    Ok(rows)
}

pub fn convergence_text(rows: &[ConvergenceRow], sep: &str, comment: &str) -> String {
    let head = [
        "T", "nodes", "n_steps", "regime", "pd_rbf", "pd_ref", "rel_error", "lre", "order_space", "order_time",
    ];
    let mut s = format!("{comment}{}\n", head.join(sep));
    for r in rows {
        let cells = [
            format_value(r.horizon),
            r.nodes.to_string(),
            r.n_steps.to_string(),
            (r.regime + 1).to_string(),
            format_value(r.pd),
            format_value(r.reference),
            format_opt(r.rel_error),
            format_opt(r.lre),
            format_opt(r.order_space),
            format_opt(r.order_time),
        ];
        let _ = writeln!(s, "{}", cells.join(sep));
    }
    s
}

/// Log relative errors for every `(nodes, n_steps)` pair.
pub fn run_convergence(
    cfg: &ExperimentConfig,
    ns: &[usize],
    nsteps: &[usize],
    dir: &Path,
) -> Result<(Vec<ConvergenceRow>, Vec<PathBuf>)> {
    let model = cfg.validate()?;
    let rows = convergence_table(cfg, &model, ns, nsteps)?;
    let mut out = Vec::new();
    for f in &cfg.output.formats {
        out.push(match f {
            OutputFormat::Csv => write_file(
                dir,
                &format!("{}_convergence.csv", cfg.name),
                &convergence_text(&rows, ",", ""),
            )?,
            OutputFormat::Dat => write_file(
                dir,
                &format!("{}_convergence.dat", cfg.name),
                &convergence_text(&rows, " ", "# "),
            )?,
        });
    }
    Ok((rows, out))
}
