//! θ-scheme time marching of the collocation system.
//!
//! `(Φ - Δτ(1-θ)Φ_𝓛) Υ^{n+1} = (Φ + Δτ θ Φ_𝓛) Υ^n`
//!
//! Note the labelling: θ = 0 is fully implicit, θ = 1 explicit, θ = 1/2
//! Crank-Nicolson. With θ > 0 the first two steps are replaced by four
//! implicit half steps so the discontinuous initial data does not excite
//! undamped oscillations.

use nalgebra::{DMatrix, DVector, LU};

use crate::error::{Error, Result};
use crate::levy_measures::SwitchingModel;
use crate::pide_operator::{assemble_blocks, OperatorBlocks, QuadratureConfig, Representation};
use crate::rbf_basis::{BasisKind, CollocationGrid};

/// Allowed collocation overshoot outside `[0, 1]`.
pub const CLIP_TOL: f64 = 5e-3;

/// Implicit startup half steps used when θ > 0.
pub const STARTUP_SUBSTEPS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub theta: f64,
    pub n_steps: usize,
    /// Horizon `T` in years.
    pub horizon: f64,
    /// `k = ln(L / V0)`.
    pub barrier_log: f64,
    /// Translate the grid by at most half a spacing so the barrier falls
    /// midway between two nodes.
    pub align_barrier: bool,
}

impl SolverConfig {
    pub fn new(horizon: f64, n_steps: usize, barrier_log: f64) -> Self {
        Self {
            theta: 0.0,
            n_steps,
            horizon,
            barrier_log,
            align_barrier: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.theta) {
            return Err(Error::InvalidParameter(format!("theta = {} outside [0, 1]", self.theta)));
        }
        if self.n_steps == 0 {
            return Err(Error::InvalidParameter("n_steps must be >= 1".into()));
        }
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return Err(Error::InvalidParameter(format!("horizon {} must be > 0", self.horizon)));
        }
        if !self.barrier_log.is_finite() {
            return Err(Error::InvalidParameter("barrier_log must be finite".into()));
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.n_steps as f64
    }
}

/// Default probabilities on the whole time-space grid.
#[derive(Debug, Clone)]
pub struct SolutionSurface {
    /// `τ_n = n Δτ`, `n = 0..=N`.
    pub taus: Vec<f64>,
    /// `values[n][j][i]`: PD at `τ_n`, regime `j`, node `i`.
    pub values: Vec<Vec<Vec<f64>>>,
    /// Full discrete state after every step.
    pub states: Vec<Vec<f64>>,
    pub repr: Representation,
    pub config: SolverConfig,
}

impl SolutionSurface {
    pub fn grid(&self) -> &CollocationGrid {
        &self.repr.grid
    }

    pub fn regimes(&self) -> usize {
        self.repr.layout.regimes
    }

    /// PD at the final horizon for regime `j` at an arbitrary `x`.
    pub fn pd_at(&self, j: usize, x: f64) -> f64 {
        self.pd_at_step(self.states.len() - 1, j, x)
    }

    pub fn pd_at_step(&self, n: usize, j: usize, x: f64) -> f64 {
        self.repr.evaluate(&self.states[n], j, x)
    }

    /// Index of the stored step closest to horizon `tau`.
    pub fn step_for(&self, tau: f64) -> usize {
        let dt = self.config.dt();
        ((tau / dt).round() as usize).min(self.taus.len() - 1)
    }

    /// Copy of the values clipped to `[0, 1]`.
    pub fn clipped(&self) -> Vec<Vec<Vec<f64>>> {
        self.values
            .iter()
            .map(|s| s.iter().map(|r| r.iter().map(|v| v.clamp(0.0, 1.0)).collect()).collect())
            .collect()
    }

    /// Largest excursion of the raw values outside `[0, 1]`.
    pub fn max_overshoot(&self) -> f64 {
        self.values
            .iter()
            .flatten()
            .flatten()
            .map(|&v| (-v).max(v - 1.0).max(0.0))
            .fold(0.0, f64::max)
    }
}

/// Indicator `1_{x_i < k}` at the nodes, identical for every regime.
pub fn initial_condition(g: &CollocationGrid, k: f64, regimes: usize) -> Result<Vec<Vec<f64>>> {
    if !(k > g.x_min && k < g.x_max) {
        return Err(Error::BarrierOutsideDomain {
            barrier: k,
            x_min: g.x_min,
            x_max: g.x_max,
        });
    }
    let row: Vec<f64> = g.nodes.iter().map(|&x| if x < k { 1.0 } else { 0.0 }).collect();
    Ok(vec![row; regimes])
}

/// Discrete state representing the initial condition: interpolation
/// coefficients of the indicator, far field 1 on the left and 0 on the right.
pub fn initial_state(blocks: &OperatorBlocks, k: f64) -> Result<Vec<f64>> {
    let lay = blocks.layout();
    let nodal = initial_condition(&blocks.repr.grid, k, lay.regimes)?;
    let lu = blocks.phi.clone().lu();
    let mut state = vec![0.0; lay.len()];
    for (j, row) in nodal.iter().enumerate() {
        let mut rhs = row.clone();
        rhs.extend((0..2 * lay.ghosts).map(|g| if g < lay.ghosts { 1.0 } else { 0.0 }));
        let coef = lu.solve(&DVector::from_vec(rhs)).ok_or(Error::SingularSystem)?;
        for l in 0..lay.centers() {
            state[lay.coef(j, l)] = coef[l];
        }
        for m in 0..lay.far_len() {
            state[lay.left(j, m)] = 1.0;
        }
        state[lay.infinity(j)] = 1.0;
    }
    Ok(state)
}

struct Propagator {
    lhs: LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    lhs_dense: DMatrix<f64>,
    rhs: DMatrix<f64>,
}

impl Propagator {
    fn new(blocks: &OperatorBlocks, dt: f64, theta: f64) -> Result<Self> {
        let mut lhs = &blocks.mass - &blocks.phi_l * (dt * (1.0 - theta));
        let mut rhs = &blocks.mass + &blocks.phi_l * (dt * theta);
        for (r, &alg) in blocks.algebraic.iter().enumerate() {
            if alg {
                lhs.row_mut(r).copy_from(&blocks.mass.row(r));
                rhs.row_mut(r).fill(0.0);
            }
        }
        let lu = lhs.clone().lu();
        if !lu.is_invertible() {
            return Err(Error::SingularSystem);
        }
        Ok(Self {
            lhs: lu,
            lhs_dense: lhs,
            rhs,
        })
    }

    fn apply(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        let b = &self.rhs * u;
        let x = self.lhs.solve(&b).ok_or(Error::SingularSystem)?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::SingularSystem);
        }
        Ok(x)
    }

    /// Relative residual `‖A x - b‖ / ‖b‖` of one step from `u`.
    fn residual(&self, u: &DVector<f64>) -> Result<f64> {
        let b = &self.rhs * u;
        let x = self.apply(u)?;
        Ok((&self.lhs_dense * x - &b).norm() / b.norm().max(f64::MIN_POSITIVE))
    }
}

/// Time stepper with the system matrices factorized once.
pub struct ThetaStepper {
    main: Propagator,
    startup: Option<Propagator>,
}

impl ThetaStepper {
    pub fn new(blocks: &OperatorBlocks, cfg: &SolverConfig) -> Result<Self> {
        cfg.validate()?;
        let dt = cfg.dt();
        let main = Propagator::new(blocks, dt, cfg.theta)?;
        let startup = if cfg.theta > 0.0 {
            Some(Propagator::new(blocks, dt / 2.0, 0.0)?)
        } else {
            None
        };
        Ok(Self { main, startup })
    }

    /// Advances the state by one step `Δτ`; `n` is the index of the step
    /// being taken (startup substeps apply to the first two).
    pub fn advance(&self, n: usize, u: &[f64]) -> Result<Vec<f64>> {
        let mut v = DVector::from_column_slice(u);
        match &self.startup {
            Some(s) if n < STARTUP_SUBSTEPS / 2 => {
                v = s.apply(&v)?;
                v = s.apply(&v)?;
            }
            _ => v = self.main.apply(&v)?,
        }
        Ok(v.as_slice().to_vec())
    }

    /// Relative residual of the main linear solve from state `u`.
    pub fn residual(&self, u: &[f64]) -> Result<f64> {
        self.main.residual(&DVector::from_column_slice(u))
    }
}

/// One θ-step (factorizes the system; use [`ThetaStepper`] for repeated steps).
pub fn step(blocks: &OperatorBlocks, cfg: &SolverConfig, u_n: &[f64]) -> Result<Vec<f64>> {
    ThetaStepper::new(blocks, &SolverConfig { theta: cfg.theta, ..*cfg })?.advance(usize::MAX, u_n)
}

/// Grid translated so that `k` sits midway between two nodes.
pub fn align_grid(g: &CollocationGrid, k: f64) -> CollocationGrid {
    let h = g.spacing();
    let pos = (k - g.x_min) / h - 0.5;
    let target = g.x_min + (pos.round() + 0.5) * h;
    g.shifted(k - target)
}

fn nodal_values(blocks: &OperatorBlocks, state: &[f64]) -> Vec<Vec<f64>> {
    let lay = blocks.layout();
    (0..lay.regimes)
        .map(|j| {
            let nc = lay.centers();
            let coef = DVector::from_iterator(nc, (0..nc).map(|l| state[lay.coef(j, l)]));
            (blocks.phi.rows(0, lay.nodes) * coef).as_slice().to_vec()
        })
        .collect()
}

/// Marches an assembled system from the indicator initial condition.
pub fn march(blocks: &OperatorBlocks, cfg: &SolverConfig) -> Result<SolutionSurface> {
    let stepper = ThetaStepper::new(blocks, cfg)?;
    let mut u = initial_state(blocks, cfg.barrier_log)?;
    let mut taus = vec![0.0];
    let mut values = vec![initial_condition(&blocks.repr.grid, cfg.barrier_log, blocks.regimes())?];
    let mut states = vec![u.clone()];
    for n in 0..cfg.n_steps {
        u = stepper.advance(n, &u)?;
        taus.push((n + 1) as f64 * cfg.dt());
        values.push(nodal_values(blocks, &u));
        states.push(u.clone());
    }
    Ok(SolutionSurface {
        taus,
        values,
        states,
        repr: blocks.repr.clone(),
        config: *cfg,
    })
}

/// Assembles and solves the forward system on `grid` (aligned to the barrier
/// first when requested).
pub fn solve(
    model: &SwitchingModel,
    basis: &BasisKind,
    grid: &CollocationGrid,
    cfg: &SolverConfig,
    q: &QuadratureConfig,
) -> Result<SolutionSurface> {
    cfg.validate()?;
    let g = if cfg.align_barrier {
        align_grid(grid, cfg.barrier_log)
    } else {
        grid.clone()
    };
    let blocks = assemble_blocks(model, basis, &g, q)?;
    march(&blocks, cfg)
}
