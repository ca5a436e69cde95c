//! Generalized tempered stable (GTS) jump measures, synchronous regime-switch
//! jumps and Lévy-Khintchine exponents.
//!
//! A GTS density is `C± w(β±|z|) / |z|^(1+α±)` on each half-line with a
//! tempering function `w`. Every constructor in this module uses exponential
//! tempering, for which the characteristic exponent has a closed form per
//! half-line.

use nalgebra::DMatrix;
use num_complex::Complex64;
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::quadrature;
use crate::regime_chain::GeneratorMatrix;
use crate::special::upper_incomplete_gamma;

/// Tempering function `w` in the GTS density.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Tempering {
    /// `w(z) = exp(-z)`.
    #[default]
    Exponential,
}

impl Tempering {
    pub fn eval(self, z: f64) -> f64 {
        match self {
            Tempering::Exponential => (-z).exp(),
        }
    }
}

/// Activity / variation class of a jump measure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActivityClass {
    FiniteActivity,
    InfiniteActivityFiniteVariation,
    InfiniteVariation,
}

/// One half-line of a GTS measure: `c * w(beta * s) / s^(1 + alpha)` for `s > 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tail {
    pub c: f64,
    pub beta: f64,
    pub alpha: f64,
    pub tempering: Tempering,
}

impl Tail {
    /// Density at distance `s > 0` from the origin.
    #[inline]
    pub fn density(&self, s: f64) -> f64 {
        self.c * self.tempering.eval(self.beta * s) / s.powf(1.0 + self.alpha)
    }

    /// `∫_a^b s^k ν(ds)` for `0 < a < b` (b may be infinite).
    pub fn moment(&self, k: i32, a: f64, b: f64) -> f64 {
        let order = k as f64 - self.alpha;
        let scale = self.c * self.beta.powf(-order);
        let upper = if b.is_finite() {
            upper_incomplete_gamma(order, self.beta * b)
        } else {
            0.0
        };
        scale * (upper_incomplete_gamma(order, self.beta * a) - upper)
    }

    /// `∫_0^∞ (e^{ius} - 1 - ius) ν(ds)`, the fully compensated half-line exponent.
    pub fn compensated_exponent(&self, u: f64) -> Result<Complex64> {
        const POLE_GAP: f64 = 1e-5;
        let Tail { c, beta, alpha, .. } = *self;
        let iu = Complex64::new(0.0, u);
        let b = Complex64::new(beta, -u);
        if alpha == 0.0 {
            let r = -(b / beta).ln() - iu / beta;
            return Ok(r * c);
        }
        if alpha == 1.0 {
            let r = b * (b / beta).ln() + iu;
            return Ok(r * c);
        }
        if (alpha - alpha.round()).abs() < POLE_GAP && (alpha.round() == 0.0 || alpha.round() == 1.0) {
            return self.compensated_exponent_quadrature(u);
        }
        let r = b.powf(alpha) - beta.powf(alpha) + iu * alpha * beta.powf(alpha - 1.0);
        Ok(r * (c * gamma(-alpha)))
    }

    fn compensated_exponent_quadrature(&self, u: f64) -> Result<Complex64> {
        let integrand = |s: f64| -> Complex64 {
            let us = u * s;
            let g = if us.abs() < 1e-3 {
                Complex64::new(-us * us / 2.0 + us.powi(4) / 24.0, -us.powi(3) / 6.0)
            } else {
                Complex64::new(us.cos() - 1.0, us.sin() - us)
            };
            g * self.density(s)
        };
        let upper = 1.0 + 45.0 / self.beta;
        let mut total = Complex64::new(0.0, 0.0);
        for (a, b) in [(0.0, 1.0), (1.0, upper)] {
            let re = quadrature::adaptive(|s| integrand(s).re, a, b, 1e-13, 1e-12, 4000)?;
            let im = quadrature::adaptive(|s| integrand(s).im, a, b, 1e-13, 1e-12, 4000)?;
            total += Complex64::new(re, im);
        }
        Ok(total)
    }
}

/// Six-parameter GTS Lévy measure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GtsParams {
    pub c_plus: f64,
    pub c_minus: f64,
    pub beta_plus: f64,
    pub beta_minus: f64,
    pub alpha_plus: f64,
    pub alpha_minus: f64,
    pub tempering: Tempering,
}

impl GtsParams {
    pub fn new(
        c_plus: f64,
        c_minus: f64,
        beta_plus: f64,
        beta_minus: f64,
        alpha_plus: f64,
        alpha_minus: f64,
    ) -> Result<Self> {
        for (name, v) in [
            ("c_plus", c_plus),
            ("c_minus", c_minus),
            ("beta_plus", beta_plus),
            ("beta_minus", beta_minus),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidParameter(format!("{name} = {v} must be positive")));
            }
        }
        for a in [alpha_plus, alpha_minus] {
            if !a.is_finite() || a >= 2.0 {
                return Err(Error::IndexOutOfRange(a));
            }
        }
        Ok(Self {
            c_plus,
            c_minus,
            beta_plus,
            beta_minus,
            alpha_plus,
            alpha_minus,
            tempering: Tempering::Exponential,
        })
    }

    pub fn positive_tail(&self) -> Tail {
        Tail {
            c: self.c_plus,
            beta: self.beta_plus,
            alpha: self.alpha_plus,
            tempering: self.tempering,
        }
    }

    pub fn negative_tail(&self) -> Tail {
        Tail {
            c: self.c_minus,
            beta: self.beta_minus,
            alpha: self.alpha_minus,
            tempering: self.tempering,
        }
    }

    pub fn max_alpha(&self) -> f64 {
        self.alpha_plus.max(self.alpha_minus)
    }

    pub fn activity(&self) -> ActivityClass {
        let a = self.max_alpha();
        if a < 0.0 {
            ActivityClass::FiniteActivity
        } else if a < 1.0 {
            ActivityClass::InfiniteActivityFiniteVariation
        } else {
            ActivityClass::InfiniteVariation
        }
    }

    pub fn is_symmetric(&self) -> bool {
        self.c_plus == self.c_minus
            && self.beta_plus == self.beta_minus
            && self.alpha_plus == self.alpha_minus
    }

    /// Lévy density at `z != 0`.
    pub fn density(&self, z: f64) -> Result<f64> {
        if z == 0.0 || !z.is_finite() {
            return Err(Error::DomainError);
        }
        Ok(self.density_unchecked(z))
    }

    #[inline]
    pub fn density_unchecked(&self, z: f64) -> f64 {
        if z > 0.0 {
            self.positive_tail().density(z)
        } else {
            self.negative_tail().density(-z)
        }
    }

    /// `∫(e^{iωz} - 1 - iωz 1_{|z|<1}) ν(dz)`.
    pub fn levy_khintchine_integral(&self, omega: f64) -> Result<Complex64> {
        let pos = self.positive_tail();
        let neg = self.negative_tail();
        let full = pos.compensated_exponent(omega)? + neg.compensated_exponent(-omega)?;
        // add back the large-jump part of the compensator
        let big_jump_mean = pos.moment(1, 1.0, f64::INFINITY) - neg.moment(1, 1.0, f64::INFINITY);
        Ok(full + Complex64::new(0.0, omega * big_jump_mean))
    }
}

/// `gts_density` entry point.
pub fn gts_density(p: &GtsParams, z: f64) -> Result<f64> {
    p.density(z)
}

/// Variance-gamma measure from the `(σ, θ, κ)` subordinated Brownian
/// parameterization.
///
/// With `s = sqrt(θ²κ²/4 + σ²κ/2)` the tempering rates are
/// `β+ = 1 / (s + θκ/2)` and `β- = 1 / (s - θκ/2)`, and `C± = 1/κ`. The
/// resulting pure-jump exponent without compensator is
/// `-(1/κ) ln(1 - iuθκ + σ²κu²/2)`.
pub fn vg_params(sigma: f64, theta: f64, kappa: f64) -> Result<GtsParams> {
    if !(sigma > 0.0) || !(kappa > 0.0) || !theta.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "VG needs sigma > 0 and kappa > 0 (sigma = {sigma}, kappa = {kappa})"
        )));
    }
    let s = (theta * theta * kappa * kappa / 4.0 + sigma * sigma * kappa / 2.0).sqrt();
    let half = theta * kappa / 2.0;
    GtsParams::new(1.0 / kappa, 1.0 / kappa, 1.0 / (s + half), 1.0 / (s - half), 0.0, 0.0)
}

/// CGMY measure: `C± = C`, `β+ = M`, `β- = G`, `α± = Y`.
pub fn cgmy_params(c: f64, g: f64, m: f64, y: f64) -> Result<GtsParams> {
    if y >= 2.0 {
        return Err(Error::IndexOutOfRange(y));
    }
    GtsParams::new(c, c, m, g, y, y)
}

/// KoBoL measure with separate jump weights: `C+ = C p`, `C- = C q`, `β± = λ`, `α± = Y`.
pub fn kobol_params(c: f64, y: f64, p: f64, q: f64, lambda: f64) -> Result<GtsParams> {
    if y >= 2.0 {
        return Err(Error::IndexOutOfRange(y));
    }
    if p < 0.0 || q < 0.0 {
        return Err(Error::InvalidParameter("KoBoL weights must be non-negative".into()));
    }
    GtsParams::new(c * p, c * q, lambda, lambda, y, y)
}

/// Symmetric measure dominating `p` on both half-lines.
pub fn symmetrized_measure(p: &GtsParams) -> GtsParams {
    let c = p.c_plus.max(p.c_minus);
    let beta = p.beta_plus.min(p.beta_minus);
    let alpha = p.max_alpha();
    GtsParams {
        c_plus: c,
        c_minus: c,
        beta_plus: beta,
        beta_minus: beta,
        alpha_plus: alpha,
        alpha_minus: alpha,
        tempering: p.tempering,
    }
}

/// Drift, diffusion and jump measure of the Lévy process active in one regime.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegimeModel {
    pub mu: f64,
    pub sigma: f64,
    pub gts: Option<GtsParams>,
}

impl RegimeModel {
    pub fn new(mu: f64, sigma: f64, gts: Option<GtsParams>) -> Result<Self> {
        if !(sigma >= 0.0) || !mu.is_finite() || !sigma.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "regime needs finite drift and sigma >= 0 (mu = {mu}, sigma = {sigma})"
            )));
        }
        Ok(Self { mu, sigma, gts })
    }

    pub fn diffusion(mu: f64, sigma: f64) -> Result<Self> {
        Self::new(mu, sigma, None)
    }
}

/// Lévy-Khintchine exponent `Ψ(ω)` of one regime.
pub fn characteristic_exponent(m: &RegimeModel, omega: f64) -> Result<Complex64> {
    if !omega.is_finite() {
        return Err(Error::InvalidParameter("frequency must be finite".into()));
    }
    let mut psi = Complex64::new(-0.5 * omega * omega * m.sigma * m.sigma, m.mu * omega);
    if let Some(g) = &m.gts {
        psi += g.levy_khintchine_integral(omega)?;
    }
    Ok(psi)
}

/// Signed exponential rates of the jumps that accompany each regime switch.
#[derive(Debug, Clone, PartialEq)]
pub struct SyncJumpSpec {
    eta: DMatrix<f64>,
}

impl SyncJumpSpec {
    pub fn new(eta: DMatrix<f64>) -> Result<Self> {
        if eta.nrows() != eta.ncols() {
            return Err(Error::DimensionMismatch("eta must be square".into()));
        }
        if eta.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("eta entries must be finite".into()));
        }
        Ok(Self { eta })
    }

    /// No synchronous jumps at all.
    pub fn none(h: usize) -> Self {
        Self {
            eta: DMatrix::zeros(h, h),
        }
    }

    /// Every switch out of regime `i` carries the same signed rate `per_source[i]`.
    pub fn per_source(per_source: &[f64]) -> Result<Self> {
        let h = per_source.len();
        let mut eta = DMatrix::zeros(h, h);
        for i in 0..h {
            for j in 0..h {
                if i != j {
                    eta[(i, j)] = per_source[i];
                }
            }
        }
        Self::new(eta)
    }

    pub fn regimes(&self) -> usize {
        self.eta.nrows()
    }

    pub fn eta(&self, i: usize, j: usize) -> f64 {
        self.eta[(i, j)]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.eta
    }

    /// Distinct jump rates `|η|` over all off-diagonal entries that carry a jump.
    pub fn rates(&self) -> Vec<f64> {
        let h = self.regimes();
        let mut r: Vec<f64> = (0..h)
            .flat_map(|i| (0..h).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| self.eta[(i, j)].abs())
            .filter(|v| *v > 0.0)
            .collect();
        r.sort_by(f64::total_cmp);
        r.dedup();
        r
    }

    pub fn has_jumps(&self) -> bool {
        !self.rates().is_empty()
    }
}

/// Density of the jump attached to a switch `i -> j`.
pub fn sync_jump_density(s: &SyncJumpSpec, i: usize, j: usize, z: f64) -> Result<f64> {
    if i == j {
        return Err(Error::DiagonalQuery(i));
    }
    let eta = s.eta(i, j);
    if eta == 0.0 || z == 0.0 || z.signum() != eta.signum() {
        return Ok(0.0);
    }
    let rate = eta.abs();
    Ok(rate * (-rate * z.abs()).exp())
}

/// Characteristic function of the jump attached to a switch `i -> j`.
pub fn sync_jump_cf(s: &SyncJumpSpec, i: usize, j: usize, u: f64) -> Result<Complex64> {
    if i == j {
        return Err(Error::DiagonalQuery(i));
    }
    let eta = s.eta(i, j);
    if eta == 0.0 {
        return Ok(Complex64::new(1.0, 0.0));
    }
    let rate = eta.abs();
    Ok(Complex64::new(rate, 0.0) / Complex64::new(rate, -u * eta.signum()))
}

/// Complete regime-switching model: per-regime triplets, chain and synchronous jumps.
#[derive(Debug, Clone, PartialEq)]
pub struct SwitchingModel {
    pub regimes: Vec<RegimeModel>,
    pub generator: GeneratorMatrix,
    pub sync: SyncJumpSpec,
}

impl SwitchingModel {
    pub fn new(regimes: Vec<RegimeModel>, generator: GeneratorMatrix, sync: SyncJumpSpec) -> Result<Self> {
        let h = regimes.len();
        if h == 0 || generator.regimes() != h || sync.regimes() != h {
            return Err(Error::DimensionMismatch(format!(
                "{h} regimes, generator {}x{0}, eta {}x{1}",
                generator.regimes(),
                sync.regimes()
            )));
        }
        Ok(Self {
            regimes,
            generator,
            sync,
        })
    }

    /// Single regime, no switching.
    pub fn single(regime: RegimeModel) -> Self {
        Self {
            regimes: vec![regime],
            generator: GeneratorMatrix::frozen(1),
            sync: SyncJumpSpec::none(1),
        }
    }

    pub fn regime_count(&self) -> usize {
        self.regimes.len()
    }
}
