//! Experiment configuration files and the bundled presets.
//!
//! A config is a TOML document with a `schema = 1` key and the sections
//! `model`, `sync_jump`, `grid`, `time`, `barrier`, `quadrature` and
//! `output`. Exactly one per-family parameter table (`model.vg`,
//! `model.cgmy`, `model.kobol` or `model.custom_gts`) must be present and
//! it must match `model.family`.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::levy_measures::{
    cgmy_params, kobol_params, vg_params, GtsParams, RegimeModel, SwitchingModel, SyncJumpSpec,
};
use crate::pide_operator::QuadratureConfig;
use crate::rbf_basis::{uniform_grid, BasisKind, CollocationGrid};
use crate::regime_chain::validate_generator;
use crate::time_stepper::SolverConfig;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema: u32,
    pub name: String,
    pub model: ModelSection,
    pub sync_jump: SyncJumpSection,
    pub grid: GridSection,
    pub time: TimeSection,
    pub barrier: BarrierSection,
    #[serde(default)]
    pub quadrature: QuadratureConfig,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Vg,
    Cgmy,
    Kobol,
    CustomGts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub family: Family,
    /// Rows of the generator `Q`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<Vec<Vec<f64>>>,
    /// One-year probabilities of staying in each regime, used instead of
    /// `generator`: `q_jj = ln p_j`, the outflow spread evenly over the
    /// other regimes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub self_transition: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drift: Option<Vec<f64>>,
    /// Add a Brownian part with the volatilities in `diffusion`.
    #[serde(default)]
    pub diffusion_separate: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diffusion: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vg: Option<VgSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cgmy: Option<CgmySection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kobol: Option<KobolSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub custom_gts: Option<CustomGtsSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VgSection {
    pub sigma: Vec<f64>,
    pub theta: Vec<f64>,
    pub kappa: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CgmySection {
    pub c: Vec<f64>,
    pub g: Vec<f64>,
    pub m: Vec<f64>,
    pub y: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KobolSection {
    pub c: Vec<f64>,
    pub y: Vec<f64>,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub lambda: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomGtsSection {
    pub c_plus: Vec<f64>,
    pub c_minus: Vec<f64>,
    pub beta_plus: Vec<f64>,
    pub beta_minus: Vec<f64>,
    pub alpha_plus: Vec<f64>,
    pub alpha_minus: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyncJumpSection {
    /// Signed rates `η_ij`; the diagonal is ignored, 0 means no jump.
    pub eta: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BasisName {
    Gaussian,
    Multiquadric,
    Cubic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub x_min: f64,
    pub x_max: f64,
    pub nodes: usize,
    pub basis: BasisName,
    /// Shape parameter in units of the inverse node spacing.
    #[serde(default = "default_shape_factor")]
    pub shape_factor: f64,
    #[serde(default = "default_true")]
    pub align_barrier: bool,
    /// Log-asset level at which PDs are reported.
    #[serde(default)]
    pub eval_x: f64,
}

pub const DEFAULT_SHAPE_FACTOR: f64 = 0.7;

fn default_shape_factor() -> f64 {
    DEFAULT_SHAPE_FACTOR
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSection {
    pub horizons: Vec<f64>,
    /// Steps over the largest horizon.
    pub n_steps: usize,
    #[serde(default)]
    pub theta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BarrierSection {
    /// `k = ln(L / V0)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log_level: Option<f64>,
    /// `L / V0`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub leverage: Option<f64>,
    /// Accepted but unused: bond pricing is not supported.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recovery: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Dat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: String,
    pub formats: Vec<OutputFormat>,
    /// Also write the full PD surface.
    pub surface: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: "out".into(),
            formats: vec![OutputFormat::Csv, OutputFormat::Dat],
            surface: false,
        }
    }
}

fn invalid(field: &str) -> Error {
    Error::ValidationError(field.to_string())
}

fn check_len(v: &[f64], h: usize, field: &str) -> Result<()> {
    if v.len() != h || v.iter().any(|x| !x.is_finite()) {
        return Err(invalid(field));
    }
    Ok(())
}

fn square(rows: &[Vec<f64>], h: usize, field: &str) -> Result<DMatrix<f64>> {
    if rows.len() != h || rows.iter().any(|r| r.len() != h) {
        return Err(invalid(field));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    if flat.iter().any(|v| !v.is_finite()) {
        return Err(invalid(field));
    }
    Ok(DMatrix::from_row_slice(h, h, &flat))
}

impl ModelSection {
    pub fn regime_count(&self) -> usize {
        match self.family {
            Family::Vg => self.vg.as_ref().map_or(0, |p| p.sigma.len()),
            Family::Cgmy => self.cgmy.as_ref().map_or(0, |p| p.c.len()),
            Family::Kobol => self.kobol.as_ref().map_or(0, |p| p.c.len()),
            Family::CustomGts => self.custom_gts.as_ref().map_or(0, |p| p.c_plus.len()),
        }
    }

    fn measures(&self) -> Result<Vec<GtsParams>> {
        let present = [
            self.vg.is_some(),
            self.cgmy.is_some(),
            self.kobol.is_some(),
            self.custom_gts.is_some(),
        ];
        if present.iter().filter(|p| **p).count() != 1 {
            return Err(invalid("model.family"));
        }
        let h = self.regime_count();
        if h == 0 {
            return Err(invalid("model.family"));
        }
        let wrap = |field: &'static str| move |_| invalid(field);
        match self.family {
            Family::Vg => {
                let p = self.vg.as_ref().ok_or_else(|| invalid("model.vg"))?;
                check_len(&p.sigma, h, "model.vg.sigma")?;
                check_len(&p.theta, h, "model.vg.theta")?;
                check_len(&p.kappa, h, "model.vg.kappa")?;
                (0..h)
                    .map(|j| vg_params(p.sigma[j], p.theta[j], p.kappa[j]).map_err(wrap("model.vg")))
                    .collect()
            }
            Family::Cgmy => {
                let p = self.cgmy.as_ref().ok_or_else(|| invalid("model.cgmy"))?;
                check_len(&p.g, h, "model.cgmy.g")?;
                check_len(&p.m, h, "model.cgmy.m")?;
                check_len(&p.y, h, "model.cgmy.y")?;
                (0..h)
                    .map(|j| cgmy_params(p.c[j], p.g[j], p.m[j], p.y[j]).map_err(wrap("model.cgmy")))
                    .collect()
            }
            Family::Kobol => {
                let p = self.kobol.as_ref().ok_or_else(|| invalid("model.kobol"))?;
                check_len(&p.y, h, "model.kobol.y")?;
                check_len(&p.p, h, "model.kobol.p")?;
                check_len(&p.q, h, "model.kobol.q")?;
                check_len(&p.lambda, h, "model.kobol.lambda")?;
                (0..h)
                    .map(|j| {
                        kobol_params(p.c[j], p.y[j], p.p[j], p.q[j], p.lambda[j]).map_err(wrap("model.kobol"))
                    })
                    .collect()
            }
            Family::CustomGts => {
                let p = self.custom_gts.as_ref().ok_or_else(|| invalid("model.custom_gts"))?;
                check_len(&p.c_minus, h, "model.custom_gts.c_minus")?;
                check_len(&p.beta_plus, h, "model.custom_gts.beta_plus")?;
                check_len(&p.beta_minus, h, "model.custom_gts.beta_minus")?;
                check_len(&p.alpha_plus, h, "model.custom_gts.alpha_plus")?;
                check_len(&p.alpha_minus, h, "model.custom_gts.alpha_minus")?;
                (0..h)
                    .map(|j| {
                        GtsParams::new(
                            p.c_plus[j],
                            p.c_minus[j],
                            p.beta_plus[j],
                            p.beta_minus[j],
                            p.alpha_plus[j],
                            p.alpha_minus[j],
                        )
                        .map_err(wrap("model.custom_gts"))
                    })
                    .collect()
            }
        }
    }

    fn generator_matrix(&self, h: usize) -> Result<DMatrix<f64>> {
        match (&self.generator, &self.self_transition) {
            (Some(rows), None) => square(rows, h, "model.generator"),
            (None, Some(p)) => {
                check_len(p, h, "model.self_transition")?;
                if h < 2 || p.iter().any(|v| !(*v > 0.0 && *v <= 1.0)) {
                    return Err(invalid("model.self_transition"));
                }
                let mut q = DMatrix::zeros(h, h);
                for j in 0..h {
                    let out = -p[j].ln();
                    for k in 0..h {
                        q[(j, k)] = if k == j { -out } else { out / (h - 1) as f64 };
                    }
                }
                Ok(q)
            }
            _ => Err(invalid("model.generator")),
        }
    }
}

impl BarrierSection {
    pub fn log_level(&self) -> Result<f64> {
        match (self.log_level, self.leverage) {
            (Some(k), None) if k.is_finite() => Ok(k),
            (None, Some(l)) if l > 0.0 && l.is_finite() => Ok(l.ln()),
            (Some(_), None) => Err(invalid("barrier.log_level")),
            _ => Err(invalid("barrier.leverage")),
        }
    }
}

impl ExperimentConfig {
    /// Checks every section and returns the assembled model.
    pub fn validate(&self) -> Result<SwitchingModel> {
        if self.schema != SCHEMA_VERSION {
            return Err(invalid("schema"));
        }
        let measures = self.model.measures()?;
        let h = measures.len();
        let q = validate_generator(self.model.generator_matrix(h)?).map_err(|_| invalid("model.generator"))?;
        let drift = match &self.model.drift {
            Some(d) => {
                check_len(d, h, "model.drift")?;
                d.clone()
            }
            None => vec![0.0; h],
        };
        let sigma = match (&self.model.diffusion, self.model.diffusion_separate) {
            (Some(s), true) => {
                check_len(s, h, "model.diffusion")?;
                if s.iter().any(|v| *v < 0.0) {
                    return Err(invalid("model.diffusion"));
                }
                s.clone()
            }
            (None, true) => return Err(invalid("model.diffusion")),
            (Some(_), false) => return Err(invalid("model.diffusion_separate")),
            (None, false) => vec![0.0; h],
        };
        let regimes = (0..h)
            .map(|j| RegimeModel::new(drift[j], sigma[j], Some(measures[j])).map_err(|_| invalid("model.drift")))
            .collect::<Result<Vec<_>>>()?;
        let eta = square(&self.sync_jump.eta, h, "sync_jump.eta")?;
        let sync = SyncJumpSpec::new(eta).map_err(|_| invalid("sync_jump.eta"))?;
        let model = SwitchingModel::new(regimes, q, sync)?;

        let g = &self.grid;
        if !(g.x_min < g.x_max) || !g.x_min.is_finite() || !g.x_max.is_finite() {
            return Err(invalid("grid.x_max"));
        }
        if g.nodes < 4 {
            return Err(invalid("grid.nodes"));
        }
        if !(g.shape_factor > 0.0) || !g.shape_factor.is_finite() {
            return Err(invalid("grid.shape_factor"));
        }
        if !(g.eval_x > g.x_min && g.eval_x < g.x_max) {
            return Err(invalid("grid.eval_x"));
        }
        let t = &self.time;
        if t.horizons.is_empty() || t.horizons.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(invalid("time.horizons"));
        }
        if t.n_steps == 0 {
            return Err(invalid("time.n_steps"));
        }
        if !(0.0..=1.0).contains(&t.theta) {
            return Err(invalid("time.theta"));
        }
        let k = self.barrier.log_level()?;
        if !(k > g.x_min && k < g.x_max) {
            return Err(invalid("barrier.log_level"));
        }
        if self.barrier.rate.is_some() || self.barrier.recovery.is_some() {
            log::warn!("barrier.rate and barrier.recovery are ignored: bond pricing is not supported");
        }
        self.quadrature
            .validate()
            .map_err(|e| match e {
                Error::InvalidParameter(f) => Error::ValidationError(f),
                other => other,
            })?;
        if self.output.dir.is_empty() {
            return Err(invalid("output.dir"));
        }
        Ok(model)
    }

    pub fn grid_with(&self, nodes: usize) -> Result<CollocationGrid> {
        uniform_grid(self.grid.x_min, self.grid.x_max, nodes)
    }

    /// Basis for a grid of `nodes` points (`ε = shape_factor / h`).
    pub fn basis_for(&self, nodes: usize) -> Result<BasisKind> {
        let h = (self.grid.x_max - self.grid.x_min) / (nodes - 1) as f64;
        let eps = self.grid.shape_factor / h;
        match self.grid.basis {
            BasisName::Gaussian => BasisKind::gaussian(eps),
            BasisName::Multiquadric => BasisKind::multiquadric(eps),
            BasisName::Cubic => Ok(BasisKind::Cubic),
        }
    }

    pub fn max_horizon(&self) -> f64 {
        self.time.horizons.iter().copied().fold(0.0, f64::max)
    }

    /// Solver settings for a march to the largest horizon.
    pub fn solver(&self, n_steps: usize) -> Result<SolverConfig> {
        Ok(SolverConfig {
            theta: self.time.theta,
            n_steps,
            horizon: self.max_horizon(),
            barrier_log: self.barrier.log_level()?,
            align_barrier: self.grid.align_barrier,
        })
    }
}

/// Line (1-based) containing byte `offset`.
fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Parses and validates a config held in memory.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::ParseError {
        line: e.span().map_or(0, |s| line_of(text, s.start)),
        message: e.message().to_string(),
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_config(&text)
}

pub fn write_config(cfg: &ExperimentConfig) -> Result<String> {
    toml::to_string(cfg).map_err(|e| Error::Io(e.to_string()))
}

/// Bundled configurations for the three test problems.
pub const PRESETS: [(&str, &str); 5] = [
    ("socgen_vg", include_str!("../presets/socgen_vg.toml")),
    ("axa_vg", include_str!("../presets/axa_vg.toml")),
    ("stm_vg", include_str!("../presets/stm_vg.toml")),
    ("cgmy5", include_str!("../presets/cgmy5.toml")),
    ("kobol3", include_str!("../presets/kobol3.toml")),
];

pub fn preset_text(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}

pub fn preset(name: &str) -> Result<ExperimentConfig> {
    let text = preset_text(name).ok_or_else(|| Error::InvalidParameter(format!("unknown preset `{name}`")))?;
    parse_config(text)
}
