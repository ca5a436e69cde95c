//! Collocation matrices of the regime-switching jump-diffusion generator
//!
//! `𝓛u(x,j) = μ_j u' + σ_j²/2 u'' + ∫(u(x+z,j) - u(x,j) - z 1_{|z|≤1} u'(x,j)) ν_j(dz)
//!          + q_jj u(x,j) + Σ_{k≠j} q_jk ∫ u(x+z,k) μ_jk(z) dz`
//!
//! applied to radial basis functions.
//!
//! The unknowns of each regime are the RBF coefficients on the collocation
//! grid followed by nodal values of a piecewise-linear far field on both sides
//! of the domain and one constant node standing for `u = 1` at `-∞`. The far
//! field is needed because synchronous jumps have means of tens of log-units,
//! so most of them land outside any practical grid. On the far nodes only the
//! switching terms are kept; diffusion and small jumps are negligible on the
//! length scale `1/|η|` over which the solution varies there. Without
//! synchronous jumps the far field stays at its initial 1 / 0 values and the
//! scheme reduces to Dirichlet conditions.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::levy_measures::{GtsParams, RegimeModel, SwitchingModel, SyncJumpSpec, Tail};
use crate::quadrature::GaussLegendre;
use crate::rbf_basis::{gram_matrix_points, BasisKind, CollocationGrid};

/// Geometric ratio of the inner panels accumulating at `z = 0`.
pub const INNER_RATIO: f64 = 0.7;

/// Decay length (in units of `1/β`) after which a tempered tail is dropped.
const TAIL_DECAY: f64 = 45.0;

/// Below this value of `|z| / length scale` the regularized integrand is
/// evaluated from its Taylor series to avoid cancellation.
const TAYLOR_SWITCH: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuadratureConfig {
    /// Jumps larger than this are ignored.
    pub z_cut: f64,
    /// Upper end of the small-jump region treated with the regularized integrand.
    pub inner_split: f64,
    pub panels_inner: usize,
    pub panels_outer: usize,
    pub gl_order: usize,
    /// Far-field nodes on each side of the domain.
    pub far_nodes: usize,
    /// Far-field reach in units of the largest mean synchronous jump `1/min|η|`.
    pub far_span: f64,
    /// Extra RBF centers placed one spacing apart beyond each edge. They are
    /// tied to the far field and keep the basis complete near the boundary.
    pub ghost_nodes: usize,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self {
            z_cut: 10.0,
            inner_split: 1.0,
            panels_inner: 32,
            panels_outer: 16,
            gl_order: 16,
            far_nodes: 96,
            far_span: 3.0,
            ghost_nodes: 8,
        }
    }
}

impl QuadratureConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |f: &str| Err(Error::InvalidParameter(format!("quadrature.{f}")));
        if !(self.z_cut > 1.0) || !self.z_cut.is_finite() {
            return bad("z_cut");
        }
        if !(self.inner_split > 0.0 && self.inner_split <= 1.0) {
            return bad("inner_split");
        }
        if self.panels_inner == 0 {
            return bad("panels_inner");
        }
        if self.panels_outer == 0 {
            return bad("panels_outer");
        }
        if self.gl_order == 0 {
            return bad("gl_order");
        }
        if self.far_nodes == 0 {
            return bad("far_nodes");
        }
        if !(self.far_span > 0.0) {
            return bad("far_span");
        }
        Ok(())
    }
}

/// A function of the signed offset `r = x - center` together with its derivatives.
pub trait Kernel: Sync {
    fn value(&self, r: f64, order: usize) -> f64;
    /// Length over which the function changes appreciably.
    fn length_scale(&self) -> f64;
    /// The function and its derivatives vanish (to double precision) beyond this.
    fn support_radius(&self) -> f64;
    /// C⁴ everywhere, so the Taylor form of the regularized integrand is valid.
    fn smooth(&self) -> bool;
    /// Offset where the function has a kink (derivative jump), if any.
    fn has_kink(&self) -> bool {
        !self.smooth()
    }
}

impl Kernel for BasisKind {
    #[inline]
    fn value(&self, r: f64, order: usize) -> f64 {
        self.eval_offset(r, order)
    }
    fn length_scale(&self) -> f64 {
        BasisKind::length_scale(self)
    }
    fn support_radius(&self) -> f64 {
        BasisKind::support_radius(self)
    }
    fn smooth(&self) -> bool {
        !matches!(self, BasisKind::Cubic)
    }
}

/// The four pieces of the jump integral: `z < -1`, `-1 ≤ z < 0`, `0 < z ≤ 1`, `z > 1`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SingularPieces {
    pub i1: f64,
    pub i2: f64,
    pub i3: f64,
    pub i4: f64,
}

impl SingularPieces {
    pub fn total(&self) -> f64 {
        self.i1 + self.i2 + self.i3 + self.i4
    }
}

/// Quadrature data for one half-line of the jump measure seen from one point.
#[derive(Debug, Clone)]
struct SideRule {
    sign: f64,
    tail: Tail,
    rho: f64,
    /// `(s, w ν(s))` on the graded panels of `[δ, ρ]`
    inner: Vec<(f64, f64)>,
    /// `∫_0^δ s² ν` and `∫_0^δ s³ ν` (leading terms)
    taylor2: f64,
    taylor3: f64,
    s_end: f64,
    /// `ν(ρ, min(1, s_end))`, `ν(1, s_end)` and `∫_ρ^1 s ν(ds)`
    mass_near: f64,
    mass_far: f64,
    first_moment: f64,
}

impl SideRule {
    fn new(tail: Tail, sign: f64, rho: f64, q: &QuadratureConfig, gl: &GaussLegendre) -> Self {
        let mut inner = Vec::with_capacity(q.panels_inner * gl.order());
        let mut hi = rho;
        for _ in 0..q.panels_inner {
            let lo = hi * INNER_RATIO;
            inner.extend(gl.panel(lo, hi).map(|(s, w)| (s, w * tail.density(s))));
            hi = lo;
        }
        let delta = hi;
        let (c, a, b) = (tail.c, tail.alpha, tail.beta);
        let taylor2 = c * (delta.powf(2.0 - a) / (2.0 - a) - b * delta.powf(3.0 - a) / (3.0 - a));
        let taylor3 = c * delta.powf(3.0 - a) / (3.0 - a);
        let s_end = q.z_cut.min(rho + TAIL_DECAY / tail.beta).max(rho);
        let near_end = s_end.min(1.0).max(rho);
        let mass_near = tail_integral(&tail, 0, rho, near_end, gl);
        let mass_far = tail_integral(&tail, 0, near_end, s_end, gl);
        let first_moment = tail_integral(&tail, 1, rho, near_end, gl);
        Self {
            sign,
            tail,
            rho,
            inner,
            taylor2,
            taylor3,
            s_end,
            mass_near,
            mass_far,
            first_moment,
        }
    }

    /// Contribution of this half-line, split at `|z| = 1`, for a kernel at
    /// offset `r`. Landing points with `s > land_max` are skipped (they are
    /// handled by the far field).
    fn pieces<K: Kernel>(&self, k: &K, r: f64, land_max: f64, gl: &GaussLegendre) -> (f64, f64) {
        let sg = self.sign;
        let reach = k.support_radius();
        let f0 = k.value(r, 0);
        let f1 = k.value(r, 1);
        if reach.is_finite() && r.abs() > self.s_end + reach {
            return (0.0, 0.0);
        }
        let mut near = 0.0;
        if !(reach.is_finite() && r.abs() > self.rho + reach) {
            let len = k.length_scale();
            let smooth = k.smooth();
            let (f2, f3, f4) = (k.value(r, 2), k.value(r, 3), k.value(r, 4));
            for &(s, w) in &self.inner {
                let g = if smooth && s < TAYLOR_SWITCH * len {
                    let s2 = s * s;
                    s2 * (0.5 * f2 + s * (sg * f3 / 6.0 + s * f4 / 24.0))
                } else {
                    k.value(r + sg * s, 0) - f0 - sg * s * f1
                };
                near += g * w;
            }
            near += 0.5 * f2 * self.taylor2 + sg * f3 / 6.0 * self.taylor3;
        }
        let near_end = self.s_end.min(1.0).max(self.rho);
        let plain = |a: f64, b: f64| -> f64 {
            let b = b.min(land_max);
            if b <= a {
                return 0.0;
            }
            self.plain_integral(k, r, a, b, gl)
        };
        near += plain(self.rho, near_end) - f0 * self.mass_near - sg * f1 * self.first_moment;
        let far = plain(near_end, self.s_end) - f0 * self.mass_far;
        (near, far)
    }

    /// `∫_a^b φ(r + sign s) ν(s) ds`
    fn plain_integral<K: Kernel>(&self, k: &K, r: f64, a: f64, b: f64, gl: &GaussLegendre) -> f64 {
        let sg = self.sign;
        let reach = k.support_radius();
        // the kernel is centred at s = -sign r
        let sc = -sg * r;
        let (lo, hi) = if reach.is_finite() {
            (a.max(sc - reach), b.min(sc + reach))
        } else {
            (a, b)
        };
        if hi <= lo {
            return 0.0;
        }
        let mut cap = 1.5 * k.length_scale();
        cap = cap.min(4.0 / self.tail.beta);
        let mut breaks = vec![lo, hi];
        if k.has_kink() && sc > lo && sc < hi {
            breaks.insert(1, sc);
        }
        let mut total = 0.0;
        for w in breaks.windows(2) {
            total += graded_integral(w[0], w[1], 0.0, cap, gl, |s| {
                k.value(r + sg * s, 0) * self.tail.density(s)
            });
        }
        total
    }
}

/// `∫_a^b s^k ν(s) ds` on panels graded towards the origin.
fn tail_integral(tail: &Tail, k: i32, a: f64, b: f64, gl: &GaussLegendre) -> f64 {
    if b <= a {
        return 0.0;
    }
    graded_integral(a, b, 0.0, 4.0 / tail.beta, gl, |s| s.powi(k) * tail.density(s))
}

/// Gauss-Legendre over `[a, b]` on panels no wider than `cap` nor than the
/// distance of their left end from `origin` (which must lie left of `a`).
fn graded_integral<F: FnMut(f64) -> f64>(
    a: f64,
    b: f64,
    origin: f64,
    cap: f64,
    gl: &GaussLegendre,
    mut f: F,
) -> f64 {
    let mut total = 0.0;
    let mut x = a;
    while x < b {
        let width = (x - origin).min(cap).max(1e-300);
        let next = if x + width >= b * (1.0 - 1e-14) - 1e-300 { b } else { x + width };
        total += gl.integrate(x, next, &mut f);
        x = next;
    }
    total
}

fn inner_radius<K: Kernel>(k: &K, q: &QuadratureConfig) -> f64 {
    q.inner_split.min(2.0 * k.length_scale())
}

fn check_basis<K: Kernel>(k: &K, p: &GtsParams) -> Result<()> {
    if !k.smooth() && p.max_alpha() >= 1.0 {
        return Err(Error::UnsupportedBasisForMeasure(p.max_alpha()));
    }
    Ok(())
}

/// The four pieces of `∫(φ(x+z-c) - φ(x-c) - z 1_{|z|≤1} φ'(x-c)) ν(dz)` over
/// `0 < |z| ≤ z_cut`.
pub fn singular_pieces<K: Kernel>(
    b: &K,
    center: f64,
    x: f64,
    p: &GtsParams,
    q: &QuadratureConfig,
) -> Result<SingularPieces> {
    q.validate()?;
    check_basis(b, p)?;
    let gl = GaussLegendre::new(q.gl_order);
    let rho = inner_radius(b, q);
    let r = x - center;
    let pos = SideRule::new(p.positive_tail(), 1.0, rho, q, &gl);
    let neg = SideRule::new(p.negative_tail(), -1.0, rho, q, &gl);
    let (i3, i4) = pos.pieces(b, r, f64::INFINITY, &gl);
    let (i2, i1) = neg.pieces(b, r, f64::INFINITY, &gl);
    Ok(SingularPieces { i1, i2, i3, i4 })
}

/// Compensated jump integral of one basis function, evaluated at `x`.
pub fn singular_integral<K: Kernel>(
    b: &K,
    center: f64,
    x: f64,
    p: &GtsParams,
    q: &QuadratureConfig,
) -> Result<f64> {
    Ok(singular_pieces(b, center, x, p, q)?.total())
}

/// `∫ φ(x+z-c) μ_jk(z) dz` over `|z| ≤ z_cut`; zero when the switch carries no jump.
pub fn cross_regime_integral<K: Kernel>(
    b: &K,
    center: f64,
    x: f64,
    s: &SyncJumpSpec,
    j: usize,
    k: usize,
    z_cut: f64,
) -> f64 {
    let eta = s.eta(j, k);
    if j == k || eta == 0.0 {
        return 0.0;
    }
    let gl = GaussLegendre::new(16);
    exp_landing(b, center, x, eta, z_cut, &gl)
}

/// `∫_0^t_end φ(x + sign(η) t - c) |η| e^{-|η| t} dt`
fn exp_landing<K: Kernel>(k: &K, center: f64, x: f64, eta: f64, t_end: f64, gl: &GaussLegendre) -> f64 {
    let sg = eta.signum();
    let rate = eta.abs();
    let reach = k.support_radius();
    let tc = sg * (center - x);
    let (lo, hi) = if reach.is_finite() {
        (tc - reach, tc + reach)
    } else {
        (0.0, t_end)
    };
    let (lo, hi) = (lo.max(0.0), hi.min(t_end));
    if hi <= lo {
        return 0.0;
    }
    let cap = 1.5 * k.length_scale();
    let mut breaks = vec![lo, hi];
    if k.has_kink() && tc > lo && tc < hi {
        breaks.insert(1, tc);
    }
    let mut total = 0.0;
    for w in breaks.windows(2) {
        total += graded_integral(w[0], w[1], -2.0 / rate, cap, gl, |t| {
            k.value(x + sg * t - center, 0) * rate * (-rate * t).exp()
        });
    }
    total
}

/// Weights `(w_a, w_b)` such that `∫_{max(a,w0)}^b hat(w) c e^{-c(w-w0)} dw =
/// w_a V_a + w_b V_b` for the linear interpolant between `(a, V_a)` and `(b, V_b)`.
fn exp_segment(c: f64, w0: f64, a: f64, b: f64) -> (f64, f64) {
    let p = a.max(w0);
    if b <= p {
        return (0.0, 0.0);
    }
    let lead = (-c * (p - w0)).exp();
    let x = c * (b - p);
    let i0 = lead * -(-x).exp_m1();
    let j = lead * (-(-x).exp_m1() - x * (-x).exp()) / c;
    let len = b - a;
    let wb = (j + (p - a) * i0) / len;
    (i0 - wb, wb)
}

/// Index bookkeeping for the discrete state.
#[derive(Debug, Clone, PartialEq)]
pub struct StateLayout {
    pub regimes: usize,
    pub nodes: usize,
    /// Ghost centers per side.
    pub ghosts: usize,
    /// Outward distances of the far nodes from the domain edge, starting at 0.
    pub far_dists: Vec<f64>,
}

impl StateLayout {
    pub fn far_len(&self) -> usize {
        self.far_dists.len()
    }

    /// Collocation nodes plus ghosts: the RBF coefficients of one regime.
    pub fn centers(&self) -> usize {
        self.nodes + 2 * self.ghosts
    }

    pub fn block(&self) -> usize {
        self.centers() + 2 * self.far_len() + 1
    }

    pub fn len(&self) -> usize {
        self.regimes * self.block()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn coef(&self, j: usize, l: usize) -> usize {
        j * self.block() + l
    }

    pub fn left(&self, j: usize, m: usize) -> usize {
        j * self.block() + self.centers() + m
    }

    pub fn right(&self, j: usize, m: usize) -> usize {
        j * self.block() + self.centers() + self.far_len() + m
    }

    /// Node holding the constant value beyond the last left far node.
    pub fn infinity(&self, j: usize) -> usize {
        j * self.block() + self.centers() + 2 * self.far_len()
    }
}

/// What a state vector means: basis, grid and far-field layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Representation {
    pub layout: StateLayout,
    pub grid: CollocationGrid,
    pub basis: BasisKind,
    /// Nodes, then left ghosts outward, then right ghosts outward.
    pub centers: Vec<f64>,
}

impl Representation {
    /// Value at `x` of the function held in `state` for regime `j`.
    pub fn evaluate(&self, state: &[f64], j: usize, x: f64) -> f64 {
        let lay = &self.layout;
        let g = &self.grid;
        if x < g.x_min || x > g.x_max {
            return self.far_value(state, j, x);
        }
        self.centers
            .iter()
            .enumerate()
            .map(|(l, &c)| state[lay.coef(j, l)] * self.basis.eval(c, x, 0))
            .sum()
    }

    fn far_value(&self, state: &[f64], j: usize, x: f64) -> f64 {
        let left = x < self.grid.x_min;
        let dist = if left { self.grid.x_min - x } else { x - self.grid.x_max };
        far_weights(&self.layout, j, left, dist)
            .iter()
            .map(|&(i, w)| w * state[i])
            .sum()
    }
}

/// Far-field value at `dist` beyond an edge as `(state index, weight)` pairs.
fn far_weights(lay: &StateLayout, j: usize, left: bool, dist: f64) -> Vec<(usize, f64)> {
    let d = &lay.far_dists;
    let idx = |m: usize| if left { lay.left(j, m) } else { lay.right(j, m) };
    let m = d.partition_point(|v| *v <= dist);
    if m >= d.len() {
        return if left { vec![(lay.infinity(j), 1.0)] } else { Vec::new() };
    }
    let t = (dist - d[m - 1]) / (d[m] - d[m - 1]);
    vec![(idx(m - 1), 1.0 - t), (idx(m), t)]
}

/// Collocation nodes followed by `ghosts` extra centers on each side.
pub fn extended_centers(g: &CollocationGrid, ghosts: usize) -> Vec<f64> {
    let h = g.spacing();
    let mut c = g.nodes.clone();
    c.extend((1..=ghosts).map(|i| g.x_min - i as f64 * h));
    c.extend((1..=ghosts).map(|i| g.x_max + i as f64 * h));
    c
}

/// Assembled matrices of the semi-discrete system `mass · dΥ/dτ = phi_l · Υ`.
#[derive(Debug, Clone)]
pub struct OperatorBlocks {
    /// Square Gram matrix of the basis over all centers (ordered as
    /// [`Representation::centers`]); its first `N_x` rows are the nodes.
    pub phi: DMatrix<f64>,
    /// Full mass matrix: Gram rows at interior nodes, identity on far nodes
    /// and the continuity constraints at the two boundary nodes.
    pub mass: DMatrix<f64>,
    /// Generator applied to every unknown.
    pub phi_l: DMatrix<f64>,
    /// Rows that are algebraic constraints rather than evolution equations.
    pub algebraic: Vec<bool>,
    pub repr: Representation,
}

impl OperatorBlocks {
    pub fn layout(&self) -> &StateLayout {
        &self.repr.layout
    }

    pub fn regimes(&self) -> usize {
        self.repr.layout.regimes
    }

    pub fn nodes(&self) -> usize {
        self.repr.layout.nodes
    }
}

/// Far-node distances `d_m = -span ln(1 - m/(M+1))`, denser near the edge.
fn far_distances(model: &SwitchingModel, q: &QuadratureConfig) -> Vec<f64> {
    let rates = model.sync.rates();
    match rates.first() {
        None => vec![0.0, q.z_cut],
        Some(&a_min) => {
            let span = q.far_span / a_min;
            let m = q.far_nodes;
            (0..=m)
                .map(|i| -span * (1.0 - i as f64 / (m + 1) as f64).ln())
                .collect()
        }
    }
}

struct Assembler<'a> {
    model: &'a SwitchingModel,
    basis: BasisKind,
    grid: &'a CollocationGrid,
    centers: Vec<f64>,
    q: QuadratureConfig,
    gl: GaussLegendre,
    lay: StateLayout,
    /// `∫_D φ(w - c_l) |η| e^{-|η| t} dw` for a jump entering the domain at
    /// its edge, keyed by η.
    entry: Vec<(f64, Vec<f64>)>,
}

impl Assembler<'_> {
    fn width(&self) -> f64 {
        self.grid.x_max - self.grid.x_min
    }

    fn entry_vector(&self, eta: f64) -> &[f64] {
        &self
            .entry
            .iter()
            .find(|(e, _)| *e == eta)
            .expect("entry vector precomputed")
            .1
    }

    /// Left far positions ordered outward.
    fn left_pos(&self, m: usize) -> f64 {
        self.grid.x_min - self.lay.far_dists[m]
    }

    fn right_pos(&self, m: usize) -> f64 {
        self.grid.x_max + self.lay.far_dists[m]
    }

    /// Adds `scale * ∫ ũ_k(y + z) μ(z) dz` for a synchronous jump with signed
    /// rate `eta` taken from position `y` into regime `k`.
    fn add_sync_landing(&self, row: &mut [f64], y: f64, eta: f64, k: usize, scale: f64) {
        let lay = &self.lay;
        let g = self.grid;
        let rate = eta.abs();
        let mf = lay.far_len();
        // far segments as (a, b, index at a, index at b) in position order
        let mut add_segment = |a: f64, b: f64, ia: usize, ib: usize| {
            let (wa, wb) = if eta > 0.0 {
                exp_segment(rate, y, a, b)
            } else {
                let (w_nb, w_na) = exp_segment(rate, -y, -b, -a);
                (w_na, w_nb)
            };
            row[ia] += scale * wa;
            row[ib] += scale * wb;
        };
        for m in 0..mf - 1 {
            add_segment(self.left_pos(m + 1), self.left_pos(m), lay.left(k, m + 1), lay.left(k, m));
            add_segment(self.right_pos(m), self.right_pos(m + 1), lay.right(k, m), lay.right(k, m + 1));
        }
        if eta < 0.0 {
            let last = self.left_pos(mf - 1);
            let w = if y > last { (-rate * (y - last)).exp() } else { 1.0 };
            row[lay.infinity(k)] += scale * w;
        }
        // domain
        if eta > 0.0 && y < g.x_min || eta < 0.0 && y > g.x_max {
            let f = (-rate * (if eta > 0.0 { g.x_min - y } else { y - g.x_max })).exp();
            for (l, v) in self.entry_vector(eta).iter().enumerate() {
                row[lay.coef(k, l)] += scale * f * v;
            }
        } else if g.contains(y) {
            let t_end = if eta > 0.0 { g.x_max - y } else { y - g.x_min };
            for (l, &c) in self.centers.iter().enumerate() {
                row[lay.coef(k, l)] += scale * exp_landing(&self.basis, c, y, eta, t_end, &self.gl);
            }
        }
    }

    /// Adds `scale * ũ_k(y)` at a far node (a switch without a jump).
    fn far_row(&self, j: usize, side_left: bool, m: usize) -> Vec<f64> {
        let lay = &self.lay;
        let mut row = vec![0.0; lay.len()];
        let own = |k| if side_left { lay.left(k, m) } else { lay.right(k, m) };
        let y = if side_left { self.left_pos(m) } else { self.right_pos(m) };
        let qm = self.model.generator.matrix();
        row[own(j)] += qm[(j, j)];
        for k in 0..lay.regimes {
            if k == j || qm[(j, k)] == 0.0 {
                continue;
            }
            let eta = self.model.sync.eta(j, k);
            if eta == 0.0 {
                row[own(k)] += qm[(j, k)];
            } else {
                self.add_sync_landing(&mut row, y, eta, k, qm[(j, k)]);
            }
        }
        row
    }

    fn interior_row(&self, j: usize, i: usize) -> Result<Vec<f64>> {
        let lay = &self.lay;
        let g = self.grid;
        let x = g.nodes[i];
        let mut row = vec![0.0; lay.len()];
        let regime: &RegimeModel = &self.model.regimes[j];
        let qm = self.model.generator.matrix();
        let half_var = 0.5 * regime.sigma * regime.sigma;
        for (l, &c) in self.centers.iter().enumerate() {
            let r = x - c;
            row[lay.coef(j, l)] = regime.mu * self.basis.value(r, 1)
                + half_var * self.basis.value(r, 2)
                + qm[(j, j)] * self.basis.value(r, 0);
        }
        if let Some(p) = &regime.gts {
            self.add_jumps(&mut row, j, x, p);
        }
        for k in 0..lay.regimes {
            if k == j || qm[(j, k)] == 0.0 {
                continue;
            }
            let eta = self.model.sync.eta(j, k);
            if eta == 0.0 {
                for (l, &c) in self.centers.iter().enumerate() {
                    row[lay.coef(k, l)] += qm[(j, k)] * self.basis.value(x - c, 0);
                }
            } else {
                self.add_sync_landing(&mut row, x, eta, k, qm[(j, k)]);
            }
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteResult(format!("operator row {i} of regime {j}")));
        }
        Ok(row)
    }

    /// Compensated jump integral of regime `j` at interior point `x`.
    fn add_jumps(&self, row: &mut [f64], j: usize, x: f64, p: &GtsParams) {
        let lay = &self.lay;
        let g = self.grid;
        let base = inner_radius(&self.basis, &self.q);
        for (tail, sign, room) in [
            (p.positive_tail(), 1.0, g.x_max - x),
            (p.negative_tail(), -1.0, x - g.x_min),
        ] {
            let rule = SideRule::new(tail, sign, base.min(room), &self.q, &self.gl);
            for (l, &c) in self.centers.iter().enumerate() {
                let (near, far) = rule.pieces(&self.basis, x - c, room, &self.gl);
                row[lay.coef(j, l)] += near + far;
            }
            if room >= rule.s_end {
                continue;
            }
            // landing beyond the edge: linear far field
            let d = &lay.far_dists;
            let idx = |m: usize| if sign > 0.0 { lay.right(j, m) } else { lay.left(j, m) };
            let cap = 4.0 / tail.beta;
            for m in 0..d.len() {
                let a = room + d[m];
                if a >= rule.s_end {
                    break;
                }
                if m + 1 == d.len() {
                    if sign < 0.0 {
                        let w = graded_integral(a, rule.s_end, 0.0, cap, &self.gl, |s| tail.density(s));
                        row[lay.infinity(j)] += w;
                    }
                    break;
                }
                let b = (room + d[m + 1]).min(rule.s_end);
                let len = d[m + 1] - d[m];
                let wb = graded_integral(a, b, 0.0, cap, &self.gl, |s| {
                    tail.density(s) * (s - a) / len
                });
                let w_all = graded_integral(a, b, 0.0, cap, &self.gl, |s| tail.density(s));
                row[idx(m)] += w_all - wb;
                row[idx(m + 1)] += wb;
            }
        }
    }
}

/// Builds the collocation matrices of the full generator.
pub fn assemble_blocks(
    model: &SwitchingModel,
    b: &BasisKind,
    g: &CollocationGrid,
    q: &QuadratureConfig,
) -> Result<OperatorBlocks> {
    q.validate()?;
    for r in &model.regimes {
        if let Some(p) = &r.gts {
            check_basis(b, p)?;
        }
    }
    let h = model.regime_count();
    let n = g.len();
    let lay = StateLayout {
        regimes: h,
        nodes: n,
        ghosts: q.ghost_nodes,
        far_dists: far_distances(model, q),
    };
    let centers = extended_centers(g, q.ghost_nodes);
    let gl = GaussLegendre::new(q.gl_order);
    let mut etas: Vec<f64> = model.sync.matrix().iter().copied().filter(|v| *v != 0.0).collect();
    etas.sort_by(f64::total_cmp);
    etas.dedup();
    let width = g.x_max - g.x_min;
    let entry = etas
        .iter()
        .map(|&eta| {
            let start = if eta > 0.0 { g.x_min } else { g.x_max };
            let v = centers.iter().map(|&c| exp_landing(b, c, start, eta, width, &gl)).collect();
            (eta, v)
        })
        .collect();
    let asm = Assembler {
        model,
        basis: *b,
        grid: g,
        centers: centers.clone(),
        q: *q,
        gl,
        lay: lay.clone(),
        entry,
    };
    debug_assert!(asm.width() > 0.0);

    let phi = gram_matrix_points(b, &centers);
    let nc = lay.centers();
    let total = lay.len();
    let mut mass = DMatrix::zeros(total, total);
    let mut algebraic = vec![false; total];

    // (global row, row contents) for every evolution equation
    let mut tasks = Vec::new();
    for j in 0..h {
        for i in 1..n - 1 {
            tasks.push((lay.coef(j, i), Task::Interior(j, i)));
        }
        for m in 0..lay.far_len() {
            tasks.push((lay.left(j, m), Task::Far(j, true, m)));
            tasks.push((lay.right(j, m), Task::Far(j, false, m)));
        }
    }
    let rows: Vec<(usize, Vec<f64>)> = tasks
        .par_iter()
        .map(|&(gi, t)| {
            let row = match t {
                Task::Interior(j, i) => asm.interior_row(j, i)?,
                Task::Far(j, left, m) => asm.far_row(j, left, m),
            };
            Ok((gi, row))
        })
        .collect::<Result<_>>()?;
    let mut phi_l = DMatrix::zeros(total, total);
    for (gi, row) in rows {
        for (c, v) in row.into_iter().enumerate() {
            phi_l[(gi, c)] = v;
        }
    }
    for j in 0..h {
        for i in 0..nc {
            for l in 0..nc {
                mass[(lay.coef(j, i), lay.coef(j, l))] = phi[(i, l)];
            }
        }
        // ghosts interpolate the far field
        for gi in 0..2 * lay.ghosts {
            let left = gi < lay.ghosts;
            let dist = (gi % lay.ghosts + 1) as f64 * g.spacing();
            let r = lay.coef(j, n + gi);
            for (c, w) in far_weights(&lay, j, left, dist) {
                mass[(r, c)] -= w;
            }
            algebraic[r] = true;
        }
        for m in 0..lay.far_len() {
            mass[(lay.left(j, m), lay.left(j, m))] = 1.0;
            mass[(lay.right(j, m), lay.right(j, m))] = 1.0;
        }
        mass[(lay.infinity(j), lay.infinity(j))] = 1.0;
        // continuity with the far field at both edges
        mass[(lay.coef(j, 0), lay.left(j, 0))] = -1.0;
        mass[(lay.coef(j, n - 1), lay.right(j, 0))] = -1.0;
        algebraic[lay.coef(j, 0)] = true;
        algebraic[lay.coef(j, n - 1)] = true;
    }
    Ok(OperatorBlocks {
        phi,
        mass,
        phi_l,
        algebraic,
        repr: Representation {
            layout: lay,
            grid: g.clone(),
            basis: *b,
            centers,
        },
    })
}

#[derive(Debug, Clone, Copy)]
enum Task {
    Interior(usize, usize),
    Far(usize, bool, usize),
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::levy_measures::{cgmy_params, kobol_params, symmetrized_measure, vg_params};
    use crate::quadrature::adaptive;
    use crate::rbf_basis::uniform_grid;
    use crate::test_oracles::tanh_sinh;
    use crate::regime_chain::GeneratorMatrix;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};

    struct Constant;
    impl Kernel for Constant {
        fn value(&self, _r: f64, order: usize) -> f64 {
            if order == 0 { 1.0 } else { 0.0 }
        }
        fn length_scale(&self) -> f64 {
            f64::INFINITY
        }
        fn support_radius(&self) -> f64 {
            f64::INFINITY
        }
        fn smooth(&self) -> bool {
            true
        }
    }

    struct Linear;
    impl Kernel for Linear {
        fn value(&self, r: f64, order: usize) -> f64 {
            match order {
                0 => r,
                1 => 1.0,
                _ => 0.0,
            }
        }
        fn length_scale(&self) -> f64 {
            f64::INFINITY
        }
        fn support_radius(&self) -> f64 {
            f64::INFINITY
        }
        fn smooth(&self) -> bool {
            true
        }
    }

    fn cgmy_state1() -> GtsParams {
        cgmy_params(0.1, 2.0, 1.0, 0.11).unwrap()
    }

    fn families() -> Vec<GtsParams> {
        vec![
            vg_params(0.3227, -0.1576, 0.0306).unwrap(),
            cgmy_params(0.5, 6.0, 5.0, 0.33).unwrap(),
            kobol_params(0.13, 1.8, 0.8, 0.7, 2.5).unwrap(),
        ]
    }

    /// Brute-force value on `[-z_cut, -eps] ∪ [eps, z_cut]` with adaptive quadrature.
    fn brute(b: &BasisKind, c: f64, x: f64, p: &GtsParams, eps: f64) -> f64 {
        let r = x - c;
        let f = |z: f64| {
            let comp = if z.abs() <= 1.0 { z * b.eval_offset(r, 1) } else { 0.0 };
            (b.eval_offset(r + z, 0) - b.eval_offset(r, 0) - comp) * p.density_unchecked(z)
        };
        let mut total = 0.0;
        for (a, bb) in [(-10.0, -1.0), (-1.0, -eps), (eps, 1.0), (1.0, 10.0)] {
            total += adaptive(f, a, bb, 1e-14, 1e-13, 20000).unwrap();
        }
        total
    }

    #[test]
    fn constant_function_gives_zero() {
        for p in families() {
            let v = singular_integral(&Constant, 0.0, 0.3, &p, &QuadratureConfig::default()).unwrap();
            assert_abs_diff_eq!(v, 0.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn linear_function_with_symmetric_measure_gives_zero() {
        let p = cgmy_params(0.5, 3.0, 3.0, 0.5).unwrap();
        let v = singular_integral(&Linear, 0.0, 0.7, &p, &QuadratureConfig::default()).unwrap();
        assert_abs_diff_eq!(v, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn matches_extrapolated_brute_force() {
        let b = BasisKind::gaussian(1.0).unwrap();
        let p = cgmy_state1();
        let v = singular_integral(&b, 0.0, 0.3, &p, &QuadratureConfig::default()).unwrap();
        // missing piece on (0, eps) is ~ eps^(2 - Y): Richardson in that exponent
        let e: Vec<f64> = [1e-3, 1e-4, 1e-5].iter().map(|&eps| brute(&b, 0.0, 0.3, &p, eps)).collect();
        let k = 10f64.powf(2.0 - 0.11);
        let r1 = (k * e[1] - e[0]) / (k - 1.0);
        let r2 = (k * e[2] - e[1]) / (k - 1.0);
        assert_abs_diff_eq!(r1, r2, epsilon = 1e-9);
        assert_abs_diff_eq!(v, r2, epsilon = 1e-6);
    }

    /// Independent value for a Gaussian `e^{-(e r)^2}` at offset `r`: the
    /// regularized integrand is rewritten without cancellation and integrated
    /// by tanh-sinh on each side.
    fn gaussian_oracle(e: f64, r: f64, p: &GtsParams) -> f64 {
        let e2 = e * e;
        let base = (-e2 * r * r).exp();
        // expm1(u) - u without cancellation
        let em1_minus = |u: f64| {
            if u.abs() < 0.1 {
                let mut term = u * u / 2.0;
                let mut sum = term;
                for k in 3..30 {
                    term *= u / k as f64;
                    sum += term;
                }
                sum
            } else {
                u.exp_m1() - u
            }
        };
        let mut total = 0.0;
        for (tail, sg) in [(p.positive_tail(), 1.0), (p.negative_tail(), -1.0)] {
            let z = |s: f64| sg * s;
            let near = |s: f64| {
                let u = -e2 * (2.0 * r * z(s) + s * s);
                base * (em1_minus(u) - e2 * s * s) * tail.density(s)
            };
            let far = |s: f64| base * (-e2 * (2.0 * r * z(s) + s * s)).exp_m1() * tail.density(s);
            total += tanh_sinh(near, 0.0, 1.0) + tanh_sinh(far, 1.0, 10.0);
        }
        total
    }

    #[test]
    fn infinite_variation_matches_brute_force() {
        let p = kobol_params(0.13, 1.8, 0.8, 0.7, 2.5).unwrap();
        let v = singular_integral(&BasisKind::gaussian(2.0).unwrap(), 0.1, -0.2, &p, &QuadratureConfig::default()).unwrap();
        assert_abs_diff_eq!(v, gaussian_oracle(2.0, -0.3, &p), epsilon = 1e-8 * v.abs().max(1.0));
    }

    #[test]
    fn cubic_rejected_for_infinite_variation() {
        let p = kobol_params(0.13, 1.2, 0.4, 0.5, 2.0).unwrap();
        let err = singular_integral(&BasisKind::Cubic, 0.0, 0.0, &p, &QuadratureConfig::default());
        assert!(matches!(err, Err(Error::UnsupportedBasisForMeasure(_))));
        let vg = vg_params(0.2, 0.1, 0.05).unwrap();
        assert!(singular_integral(&BasisKind::Cubic, 0.0, 0.4, &vg, &QuadratureConfig::default()).is_ok());
    }

    #[test]
    fn cubic_with_finite_variation_matches_brute_force() {
        let p = cgmy_params(0.3, 4.0, 3.0, 0.22).unwrap();
        let b = BasisKind::Cubic;
        let v = singular_integral(&b, 0.0, 0.45, &p, &QuadratureConfig::default()).unwrap();
        let e: Vec<f64> = [1e-3, 1e-4].iter().map(|&eps| brute(&b, 0.0, 0.45, &p, eps)).collect();
        let k = 10f64.powf(2.0 - 0.22);
        let r = (k * e[1] - e[0]) / (k - 1.0);
        assert_abs_diff_eq!(v, r, epsilon = 1e-7 * v.abs().max(1.0));
    }

    #[test]
    fn regularized_integrand_is_finite_near_zero() {
        let b = BasisKind::gaussian(1.0 / (16.0 / 127.0)).unwrap();
        for p in families() {
            let tail = p.positive_tail();
            let s = 1e-12;
            let r: f64 = 0.05;
            let g = b.eval_offset(r + s, 0) - b.eval_offset(r, 0) - s * b.eval_offset(r, 1);
            assert!((g * tail.density(s)).is_finite());
        }
    }

    #[test]
    fn cross_regime_examples() {
        let b = BasisKind::gaussian(1.0).unwrap();
        let s = SyncJumpSpec::per_source(&[1e4, -0.5]).unwrap();
        let v = cross_regime_integral(&b, 0.0, 0.2, &s, 0, 1, 10.0);
        assert_abs_diff_eq!(v, b.eval_offset(0.2, 0), epsilon = 1e-3);
        let s = SyncJumpSpec::per_source(&[0.3, -0.016]).unwrap();
        let v = cross_regime_integral(&Constant, 0.0, 0.2, &s, 1, 0, 10.0);
        assert_abs_diff_eq!(v, 1.0 - (-0.16f64).exp(), epsilon = 1e-14);
        let axa = SyncJumpSpec::per_source(&[0.0160, -0.0092]).unwrap();
        let v = cross_regime_integral(&b, 0.0, 0.0, &axa, 0, 1, 10.0);
        let oracle = adaptive(|z| (-z * z).exp() * 0.016 * (-0.016 * z).exp(), 0.0, 10.0, 1e-15, 1e-14, 1000).unwrap();
        assert_abs_diff_eq!(v, oracle, epsilon = 1e-12);
        assert_eq!(cross_regime_integral(&b, 0.0, 0.0, &SyncJumpSpec::none(2), 0, 1, 10.0), 0.0);
    }

    #[test]
    fn exp_segment_matches_quadrature() {
        let (c, w0, a, b) = (0.3, 0.4, -1.0, 2.5);
        let (wa, wb) = exp_segment(c, w0, a, b);
        let gl = GaussLegendre::new(30);
        let qa = gl.integrate(w0, b, |w| (b - w) / (b - a) * c * (-c * (w - w0)).exp());
        let qb = gl.integrate(w0, b, |w| (w - a) / (b - a) * c * (-c * (w - w0)).exp());
        assert_abs_diff_eq!(wa, qa, epsilon = 1e-14);
        assert_abs_diff_eq!(wb, qb, epsilon = 1e-14);
    }

    #[test]
    fn inner_panel_doubling_is_converged() {
        let grid = uniform_grid(-8.0, 8.0, 128).unwrap();
        let b = BasisKind::gaussian(0.7 / grid.spacing()).unwrap();
        let q = QuadratureConfig::default();
        let q2 = QuadratureConfig { panels_inner: 64, ..q };
        for p in families() {
            for &x in grid.nodes.iter().step_by(9) {
                for &c in &[x, x + grid.spacing(), x - 3.0 * grid.spacing()] {
                    let a = singular_integral(&b, c, x, &p, &q).unwrap();
                    let d = singular_integral(&b, c, x, &p, &q2).unwrap();
                    assert!((a - d).abs() < 1e-7, "{a} vs {d}");
                }
            }
        }
    }

    #[test]
    fn small_jump_bound_holds() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(7);
        let q = QuadratureConfig::default();
        for p in families() {
            let sym = symmetrized_measure(&p);
            let t = sym.positive_tail();
            let second = 2.0 * adaptive(|s| s * s * t.density(s), 0.0, 1.0, 1e-14, 1e-12, 2000).unwrap();
            for _ in 0..50 {
                let b = BasisKind::gaussian(rng.random_range(1.0..4.0)).unwrap();
                let m = b.derivative_bound(2).unwrap().max(b.derivative_bound(3).unwrap());
                let x = rng.random_range(-3.0..3.0);
                let c = rng.random_range(-3.0..3.0);
                let pc = singular_pieces(&b, c, x, &p, &q).unwrap();
                assert!((pc.i2 + pc.i3).abs() <= 0.25 * m * second);
                let outer = 2.0 * b.eval_offset(0.0, 0) * 2.0 * t.moment(0, 1.0, f64::INFINITY);
                assert!((pc.i1 + pc.i4).abs() <= outer);
            }
        }
    }

    #[test]
    fn symmetric_measure_at_center_has_no_first_order_part() {
        let p = cgmy_params(0.4, 3.0, 3.0, 1.3).unwrap();
        let b = BasisKind::gaussian(1.5).unwrap();
        let v = singular_integral(&b, 0.2, 0.2, &p, &QuadratureConfig::default()).unwrap();
        // pair ±z: φ(z) + φ(-z) - 2φ(0), no first-order term needed
        let t = p.positive_tail();
        let f = |s: f64| 2.0 * (-(1.5 * s).powi(2)).exp_m1() * t.density(s);
        let sym = tanh_sinh(f, 0.0, 1.0) + tanh_sinh(f, 1.0, 10.0);
        assert_abs_diff_eq!(v, sym, epsilon = 1e-9);
        assert_abs_diff_eq!(v, gaussian_oracle(1.5, 0.0, &p), epsilon = 1e-9);
    }

    fn socgen_model() -> SwitchingModel {
        let p = [0.8083f64, 0.9549];
        let q = GeneratorMatrix::from_row_slice(2, &[p[0].ln(), -p[0].ln(), -p[1].ln(), p[1].ln()]).unwrap();
        let regimes = vec![
            RegimeModel::new(0.0, 0.0, Some(vg_params(0.3227, -0.1576, 0.0306).unwrap())).unwrap(),
            RegimeModel::new(0.0, 0.0, Some(vg_params(0.1675, 0.0254, 0.0028).unwrap())).unwrap(),
        ];
        SwitchingModel::new(regimes, q, SyncJumpSpec::per_source(&[0.0132, -0.0117]).unwrap()).unwrap()
    }

    #[test]
    fn pure_diffusion_blocks() {
        let g = uniform_grid(-2.0, 2.0, 21).unwrap();
        let b = BasisKind::gaussian(4.0).unwrap();
        let m = SwitchingModel::single(RegimeModel::diffusion(0.1, 0.3).unwrap());
        let blocks = assemble_blocks(&m, &b, &g, &QuadratureConfig::default()).unwrap();
        for i in 1..20 {
            for l in 0..21 {
                let r = g.nodes[i] - g.nodes[l];
                let expect = 0.1 * b.eval_offset(r, 1) + 0.045 * b.eval_offset(r, 2);
                assert_abs_diff_eq!(blocks.phi_l[(i, l)], expect, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn no_switching_gives_block_diagonal() {
        let g = uniform_grid(-4.0, 4.0, 24).unwrap();
        let b = BasisKind::gaussian(3.0).unwrap();
        let mut m = socgen_model();
        m.generator = GeneratorMatrix::frozen(2);
        let blocks = assemble_blocks(&m, &b, &g, &QuadratureConfig::default()).unwrap();
        let bs = blocks.layout().block();
        for r in 0..bs {
            for c in bs..2 * bs {
                assert_eq!(blocks.phi_l[(r, c)], 0.0);
                assert_eq!(blocks.phi_l[(c, r)], 0.0);
            }
        }
    }

    #[test]
    fn constants_are_harmonic() {
        let g = uniform_grid(-8.0, 8.0, 128).unwrap();
        let b = BasisKind::gaussian(0.7 / g.spacing()).unwrap();
        let blocks = assemble_blocks(&socgen_model(), &b, &g, &QuadratureConfig::default()).unwrap();
        let lay = blocks.layout();
        let ones = nalgebra::DVector::from_element(lay.centers(), 1.0);
        let coef = blocks.phi.clone().lu().solve(&ones).unwrap();
        let mut state = nalgebra::DVector::from_element(lay.len(), 1.0);
        for j in 0..2 {
            for l in 0..lay.centers() {
                state[lay.coef(j, l)] = coef[l];
            }
        }
        let out = &blocks.phi_l * &state;
        for j in 0..2 {
            for (i, &x) in g.nodes.iter().enumerate() {
                if x.abs() <= 4.0 {
                    assert!(out[lay.coef(j, i)].abs() < 1e-4, "x = {x}: {}", out[lay.coef(j, i)]);
                }
            }
        }
    }
}
