//! Reference default probabilities by Fourier inversion of the
//! regime-switching characteristic function.
//!
//! `E[e^{iωX_T} | J_0 = j] = (exp(A(ω) T) 1)_j` with
//! `A(ω) = diag(Ψ_j(ω) + q_jj) + [q_jk Θ^{jk}(ω)]_{k≠j}`, and
//! `P(X_T ≤ k) = 1/2 - (1/π) ∫_0^∞ Im(e^{-iωk} φ(ω)) / ω dω`.
//!
//! The frequency integral is marched outward on locally adaptive Gauss-Kronrod
//! panels. Nothing here is shared with the collocation solver.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::levy_measures::{characteristic_exponent, sync_jump_cf, SwitchingModel};
use crate::quadrature::kronrod_points;
use crate::regime_chain::expm;

/// `A(ω)` for one frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct CfMatrix {
    pub omega: f64,
    pub a: DMatrix<Complex64>,
}

pub fn cf_matrix(model: &SwitchingModel, omega: f64) -> Result<CfMatrix> {
    let h = model.regime_count();
    let q = model.generator.matrix();
    let mut a = DMatrix::from_element(h, h, Complex64::new(0.0, 0.0));
    for j in 0..h {
        a[(j, j)] = characteristic_exponent(&model.regimes[j], omega)? + q[(j, j)];
        for k in 0..h {
            if k != j && q[(j, k)] != 0.0 {
                a[(j, k)] = sync_jump_cf(&model.sync, j, k, omega)? * q[(j, k)];
            }
        }
    }
    Ok(CfMatrix { omega, a })
}

/// Characteristic function of `X_T` for every starting regime.
pub fn regime_cf_all(model: &SwitchingModel, omega: f64, t: f64) -> Result<Vec<Complex64>> {
    if !(t >= 0.0) {
        return Err(Error::InvalidParameter(format!("horizon {t} must be >= 0")));
    }
    let m = cf_matrix(model, omega)?;
    let e = expm(&(m.a * Complex64::new(t, 0.0)));
    let out: Vec<Complex64> = e.row_iter().map(|r| r.iter().sum()).collect();
    if out.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(Error::NonFiniteResult(format!("characteristic function at ω = {omega}")));
    }
    Ok(out)
}

pub fn regime_cf(model: &SwitchingModel, omega: f64, t: f64, start_regime: usize) -> Result<Complex64> {
    if start_regime >= model.regime_count() {
        return Err(Error::InvalidParameter(format!("no regime {start_regime}")));
    }
    Ok(regime_cf_all(model, omega, t)?[start_regime])
}

/// Controls of the frequency march.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InversionConfig {
    /// Stop once `|φ(ω)| / ω` stays below this.
    pub tail_tol: f64,
    /// Accepted Kronrod-Gauss difference per panel.
    pub panel_tol: f64,
    pub max_omega: f64,
    pub max_panels: usize,
}

impl Default for InversionConfig {
    fn default() -> Self {
        Self {
            tail_tol: 1e-10,
            panel_tol: 1e-13,
            max_omega: 1e12,
            max_panels: 2_000_000,
        }
    }
}

/// `P(X_T ≤ k | J_0 = j)` for every starting regime `j`.
pub fn default_probabilities(model: &SwitchingModel, t: f64, k: f64) -> Result<Vec<f64>> {
    default_probabilities_with(model, t, k, &InversionConfig::default())
}

pub fn default_probability(model: &SwitchingModel, t: f64, start_regime: usize, k: f64) -> Result<f64> {
    if start_regime >= model.regime_count() {
        return Err(Error::InvalidParameter(format!("no regime {start_regime}")));
    }
    Ok(default_probabilities(model, t, k)?[start_regime])
}

/// Smallest frequency scale of the model: poles of the jump transforms and
/// the Gaussian width.
fn first_panel_width(model: &SwitchingModel, t: f64) -> f64 {
    let mut scale: f64 = 1.0;
    for r in &model.sync.rates() {
        scale = scale.min(*r);
    }
    for reg in &model.regimes {
        if let Some(g) = &reg.gts {
            scale = scale.min(g.beta_plus).min(g.beta_minus);
        }
        if reg.sigma > 0.0 {
            scale = scale.min(1.0 / (reg.sigma * t.sqrt()));
        }
    }
    scale / 8.0
}

pub fn default_probabilities_with(
    model: &SwitchingModel,
    t: f64,
    k: f64,
    cfg: &InversionConfig,
) -> Result<Vec<f64>> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::InvalidParameter(format!("horizon {t} must be > 0")));
    }
    let h = model.regime_count();
    // integrand values and tail size at one frequency
    let eval = |w: f64| -> Result<(DVector<f64>, f64)> {
        let phi = regime_cf_all(model, w, t)?;
        let rot = Complex64::from_polar(1.0, -w * k);
        let mut v = DVector::zeros(h);
        let mut size: f64 = 0.0;
        for (j, p) in phi.iter().enumerate() {
            v[j] = (rot * p).im / w;
            size = size.max(p.norm() / w);
        }
        Ok((v, size))
    };
    let panel = |a: f64, b: f64| -> Result<(DVector<f64>, f64, f64)> {
        let pts = kronrod_points(a, b);
        let vals: Vec<(DVector<f64>, f64)> = pts.par_iter().map(|p| eval(p.0)).collect::<Result<_>>()?;
        let mut kr = DVector::zeros(h);
        let mut ga = DVector::zeros(h);
        let mut size: f64 = 0.0;
        for (p, (v, s)) in pts.iter().zip(&vals) {
            kr.axpy(p.1, v, 1.0);
            ga.axpy(p.2, v, 1.0);
            size = size.max(*s);
        }
        let err = (&kr - &ga).amax();
        Ok((kr, err, size))
    };

    let mut total = DVector::zeros(h);
    let mut a = 0.0;
    let mut width = first_panel_width(model, t);
    let mut quiet = 0;
    let mut panels = 0;
    while quiet < 3 {
        if panels >= cfg.max_panels || a > cfg.max_omega {
            return Err(Error::InversionNotConverged(format!(
                "tail still above {:e} at ω = {a:e} after {panels} panels",
                cfg.tail_tol
            )));
        }
        let w = if a > 0.0 { width.min(a) } else { width };
        let (v, err, size) = panel(a, a + w)?;
        panels += 1;
        if err > cfg.panel_tol && w > 1e-12 * (1.0 + a) {
            width = 0.5 * w;
            continue;
        }
        total += v;
        a += w;
        width = 2.0 * w;
        quiet = if size < cfg.tail_tol { quiet + 1 } else { 0 };
    }
    log::debug!("inversion used {panels} panels up to ω = {a:.3e}");
    Ok(total.iter().map(|v| 0.5 - v / std::f64::consts::PI).collect())
}
