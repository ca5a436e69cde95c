//! Radial basis functions, collocation grids and interpolation matrices.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Condition number above which a Gram matrix is reported as ill-conditioned.
pub const ILL_CONDITIONED: f64 = 1e14;

/// Radial kernel with its shape parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BasisKind {
    /// `exp(-(ε r)^2)`
    Gaussian { shape: f64 },
    /// `sqrt(1 + (ε r)^2)`
    Multiquadric { shape: f64 },
    /// `r^3`
    Cubic,
}

impl BasisKind {
    pub fn gaussian(shape: f64) -> Result<Self> {
        check_shape(shape)?;
        Ok(BasisKind::Gaussian { shape })
    }

    pub fn multiquadric(shape: f64) -> Result<Self> {
        check_shape(shape)?;
        Ok(BasisKind::Multiquadric { shape })
    }

    pub fn shape(&self) -> Option<f64> {
        match *self {
            BasisKind::Gaussian { shape } | BasisKind::Multiquadric { shape } => Some(shape),
            BasisKind::Cubic => None,
        }
    }

    /// Same family with a different shape parameter (no-op for cubic).
    pub fn with_shape(&self, shape: f64) -> Self {
        match self {
            BasisKind::Gaussian { .. } => BasisKind::Gaussian { shape },
            BasisKind::Multiquadric { .. } => BasisKind::Multiquadric { shape },
            BasisKind::Cubic => BasisKind::Cubic,
        }
    }

    /// Distance beyond which the kernel and its first four derivatives are
    /// below 1e-18 relative to their peak; infinite for global kernels.
    pub fn support_radius(&self) -> f64 {
        match *self {
            BasisKind::Gaussian { shape } => 7.0 / shape,
            _ => f64::INFINITY,
        }
    }

    /// Length over which the kernel changes appreciably.
    pub fn length_scale(&self) -> f64 {
        match *self {
            BasisKind::Gaussian { shape } | BasisKind::Multiquadric { shape } => 1.0 / shape,
            BasisKind::Cubic => f64::INFINITY,
        }
    }

    /// Value or x-derivative (order 0..=4) of `φ(|x - center|)`.
    #[inline]
    pub fn eval(&self, center: f64, x: f64, derivative_order: usize) -> f64 {
        self.eval_offset(x - center, derivative_order)
    }

    /// Same as [`eval`](Self::eval) with the signed offset `r = x - center`.
    #[inline]
    pub fn eval_offset(&self, r: f64, order: usize) -> f64 {
        match *self {
            BasisKind::Gaussian { shape } => {
                let t = shape * r;
                let g = (-t * t).exp();
                let t2 = t * t;
                match order {
                    0 => g,
                    1 => -shape * 2.0 * t * g,
                    2 => shape * shape * (4.0 * t2 - 2.0) * g,
                    3 => -shape.powi(3) * (8.0 * t2 * t - 12.0 * t) * g,
                    4 => shape.powi(4) * (16.0 * t2 * t2 - 48.0 * t2 + 12.0) * g,
                    _ => panic!("derivative order {order} not supported"),
                }
            }
            BasisKind::Multiquadric { shape } => {
                let e2 = shape * shape;
                let s = (1.0 + e2 * r * r).sqrt();
                match order {
                    0 => s,
                    1 => e2 * r / s,
                    2 => e2 / (s * s * s),
                    3 => -3.0 * e2 * e2 * r / s.powi(5),
                    4 => -3.0 * e2 * e2 * (1.0 - 4.0 * e2 * r * r) / s.powi(7),
                    _ => panic!("derivative order {order} not supported"),
                }
            }
            BasisKind::Cubic => {
                let a = r.abs();
                match order {
                    0 => a * a * a,
                    1 => 3.0 * r * a,
                    2 => 6.0 * a,
                    3 => 6.0 * r.signum(),
                    4 => 0.0,
                    _ => panic!("derivative order {order} not supported"),
                }
            }
        }
    }

    /// Global bound `M_k = max_x |φ^(k)(x)|` for the Gaussian kernel, from
    /// the extrema of `H_k(t) e^{-t^2}` (located at the zeros of `H_{k+1}`).
    pub fn derivative_bound(&self, k: usize) -> Option<f64> {
        let BasisKind::Gaussian { shape } = *self else {
            return None;
        };
        let hermite = |k: usize, t: f64| -> f64 {
            let t2 = t * t;
            match k {
                0 => 1.0,
                1 => 2.0 * t,
                2 => 4.0 * t2 - 2.0,
                3 => 8.0 * t2 * t - 12.0 * t,
                4 => 16.0 * t2 * t2 - 48.0 * t2 + 12.0,
                _ => unreachable!(),
            }
        };
        // squared zeros of H_{k+1}
        let s6 = 6f64.sqrt();
        let s10 = 10f64.sqrt();
        let zeros_sq: &[f64] = match k {
            0 => &[0.0],
            1 => &[0.5],
            2 => &[0.0, 1.5],
            3 => &[(3.0 - s6) / 2.0, (3.0 + s6) / 2.0],
            4 => &[0.0, (5.0 - s10) / 2.0, (5.0 + s10) / 2.0],
            _ => return None,
        };
        let peak = zeros_sq
            .iter()
            .map(|&t2: &f64| {
                let t = t2.sqrt();
                (hermite(k, t) * (-t2).exp()).abs()
            })
            .fold(0.0, f64::max);
        Some(shape.powi(k as i32) * peak)
    }
}

fn check_shape(shape: f64) -> Result<()> {
    if shape > 0.0 && shape.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("shape parameter {shape} must be positive")))
    }
}

/// Sorted collocation nodes on `[x_min, x_max]`, endpoints included.
#[derive(Debug, Clone, PartialEq)]
pub struct CollocationGrid {
    pub nodes: Vec<f64>,
    pub x_min: f64,
    pub x_max: f64,
}

impl CollocationGrid {
    pub fn new(nodes: Vec<f64>) -> Result<Self> {
        if nodes.len() < 2 {
            return Err(Error::InvalidParameter("grid needs at least two nodes".into()));
        }
        if nodes.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidParameter("grid nodes must be strictly increasing".into()));
        }
        Ok(Self {
            x_min: nodes[0],
            x_max: nodes[nodes.len() - 1],
            nodes,
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Mean node spacing.
    pub fn spacing(&self) -> f64 {
        (self.x_max - self.x_min) / (self.len() - 1) as f64
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.x_min && x <= self.x_max
    }

    /// Copy translated by `delta`.
    pub fn shifted(&self, delta: f64) -> Self {
        Self {
            nodes: self.nodes.iter().map(|x| x + delta).collect(),
            x_min: self.x_min + delta,
            x_max: self.x_max + delta,
        }
    }
}

pub fn uniform_grid(x_min: f64, x_max: f64, n: usize) -> Result<CollocationGrid> {
    if n < 2 || !(x_min < x_max) {
        return Err(Error::InvalidParameter(format!(
            "uniform grid needs n >= 2 and x_min < x_max (n = {n}, [{x_min}, {x_max}])"
        )));
    }
    let h = (x_max - x_min) / (n - 1) as f64;
    let mut nodes: Vec<f64> = (0..n).map(|i| x_min + h * i as f64).collect();
    nodes[n - 1] = x_max;
    CollocationGrid::new(nodes)
}

/// `M[i][j] = φ(|x_i - x_j|)`.
pub fn gram_matrix(b: &BasisKind, g: &CollocationGrid) -> DMatrix<f64> {
    gram_matrix_points(b, &g.nodes)
}

/// Gram matrix `φ(|x_i - x_j|)` for an arbitrary set of centers.
pub fn gram_matrix_points(b: &BasisKind, pts: &[f64]) -> DMatrix<f64> {
    let n = pts.len();
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = b.eval(pts[j], pts[i], 0);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    let cond = condition_estimate(&m);
    if !(cond < ILL_CONDITIONED) {
        log::warn!("Gram matrix condition number estimate {cond:.3e} exceeds {ILL_CONDITIONED:e}");
    }
    m
}

/// 1-norm condition number estimate of a symmetric matrix (Hager's method).
pub fn condition_estimate(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let norm_a = (0..n)
        .map(|j| m.column(j).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let lu = m.clone().lu();
    let mut x = nalgebra::DVector::from_element(n, 1.0 / n as f64);
    let mut est = 0.0;
    for _ in 0..5 {
        let Some(y) = lu.solve(&x) else {
            return f64::INFINITY;
        };
        est = y.iter().map(|v| v.abs()).sum::<f64>();
        let xi = y.map(|v| if v >= 0.0 { 1.0 } else { -1.0 });
        let Some(z) = lu.solve(&xi) else {
            return f64::INFINITY;
        };
        let (jmax, zmax) = z
            .iter()
            .enumerate()
            .map(|(j, v)| (j, v.abs()))
            .fold((0, 0.0), |acc, v| if v.1 > acc.1 { v } else { acc });
        if zmax <= z.dot(&x) {
            break;
        }
        x.fill(0.0);
        x[jmax] = 1.0;
    }
    norm_a * est
}
