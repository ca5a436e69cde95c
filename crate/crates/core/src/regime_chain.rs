//! Continuous-time Markov chain of economic regimes.

use nalgebra::{ComplexField, DMatrix};

use crate::error::{Error, Result};

/// Row-sum tolerance accepted for a generator.
pub const ROW_SUM_TOL: f64 = 1e-12;

/// Validated intensity matrix `Q` of the regime chain (units 1/year).
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorMatrix {
    q: DMatrix<f64>,
}

impl GeneratorMatrix {
    pub fn regimes(&self) -> usize {
        self.q.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn rate(&self, from: usize, to: usize) -> f64 {
        self.q[(from, to)]
    }

    /// Builds a generator from a row-major flat list of `h * h` entries.
    pub fn from_row_slice(h: usize, entries: &[f64]) -> Result<Self> {
        if h == 0 || entries.len() != h * h {
            return Err(Error::NotSquare {
                rows: h,
                cols: if h == 0 { 0 } else { entries.len() / h },
            });
        }
        validate_generator(DMatrix::from_row_slice(h, h, entries))
    }

    /// Generator of a chain that never leaves its initial state.
    pub fn frozen(h: usize) -> Self {
        Self {
            q: DMatrix::zeros(h, h),
        }
    }
}

/// Stochastic matrix `P(t, t + horizon) = exp(Q * horizon)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    pub p: DMatrix<f64>,
    pub horizon: f64,
}

pub fn validate_generator(q: DMatrix<f64>) -> Result<GeneratorMatrix> {
    let (rows, cols) = q.shape();
    if rows == 0 || rows != cols {
        return Err(Error::NotSquare { rows, cols });
    }
    for i in 0..rows {
        for j in 0..cols {
            if !q[(i, j)].is_finite() {
                return Err(Error::NonFiniteResult(format!("q[{i}][{j}]")));
            }
            if i != j && q[(i, j)] < 0.0 {
                return Err(Error::NegativeOffDiagonal(i, j));
            }
        }
        if q.row(i).sum().abs() > ROW_SUM_TOL {
            return Err(Error::RowSumNonZero(i));
        }
    }
    Ok(GeneratorMatrix { q })
}

pub fn transition_matrix(g: &GeneratorMatrix, dt: f64) -> Result<TransitionMatrix> {
    if !(dt >= 0.0) || !dt.is_finite() {
        return Err(Error::InvalidParameter(format!("horizon {dt} must be >= 0")));
    }
    let p = expm(&(g.q.clone() * dt));
    if p.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteResult("transition matrix overflowed".into()));
    }
    Ok(TransitionMatrix { p, horizon: dt })
}

const PADE13: [f64; 14] = [
    64_764_752_532_480_000.0,
    32_382_376_266_240_000.0,
    7_771_770_303_897_600.0,
    1_187_353_796_428_800.0,
    129_060_195_264_000.0,
    10_559_470_521_600.0,
    670_442_572_800.0,
    33_522_128_640.0,
    1_323_241_920.0,
    40_840_800.0,
    960_960.0,
    16_380.0,
    182.0,
    1.0,
];
const THETA13: f64 = 5.371_920_351_148_152;

fn norm1<T: ComplexField<RealField = f64>>(a: &DMatrix<T>) -> f64 {
    (0..a.ncols())
        .map(|j| a.column(j).iter().map(|v| v.clone().modulus()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Matrix exponential by scaling and squaring with the degree-13 Padé
/// approximant. Works for real and complex element types.
pub fn expm<T: ComplexField<RealField = f64>>(a: &DMatrix<T>) -> DMatrix<T> {
    let n = a.nrows();
    let nrm = norm1(a);
    if nrm == 0.0 {
        return DMatrix::identity(n, n);
    }
    let s = if nrm > THETA13 {
        (nrm / THETA13).log2().ceil() as i32
    } else {
        0
    };
    let scale = T::from_real(0.5f64.powi(s));
    let a = a * scale;
    let b = |k: usize| T::from_real(PADE13[k]);
    let ident = DMatrix::<T>::identity(n, n);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;

    let inner_u = &a6 * (&a6 * b(13) + &a4 * b(11) + &a2 * b(9));
    let u = &a * (inner_u + &a6 * b(7) + &a4 * b(5) + &a2 * b(3) + &ident * b(1));
    let inner_v = &a6 * (&a6 * b(12) + &a4 * b(10) + &a2 * b(8));
    let v = inner_v + &a6 * b(6) + &a4 * b(4) + &a2 * b(2) + &ident * b(0);

    let numer = &v + &u;
    let denom = &v - &u;
    let mut r = denom
        .lu()
        .solve(&numer)
        .unwrap_or_else(|| DMatrix::from_element(n, n, T::from_real(f64::NAN)));
    for _ in 0..s {
        r = &r * &r;
    }
    r
}
