//! Special functions not covered by `statrs`.

use statrs::function::gamma::{gamma, gamma_ur};

/// Exponential integral `E1(x)` for `x > 0`.
pub fn exp_integral_e1(x: f64) -> f64 {
    assert!(x > 0.0, "E1 needs a positive argument");
    const EULER: f64 = 0.577_215_664_901_532_9;
    if x <= 1.0 {
        let mut sum = 0.0;
        let mut term = 1.0;
        for k in 1..200 {
            term *= -x / k as f64;
            let add = -term / k as f64;
            sum += add;
            if add.abs() < 1e-17 * sum.abs() {
                break;
            }
        }
        -EULER - x.ln() + sum
    } else {
        // modified Lentz on the continued fraction
        let tiny = 1e-300;
        let mut b = x + 1.0;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..500 {
            let an = -((i * i) as f64);
            b += 2.0;
            d = 1.0 / (an * d + b);
            c = b + an / c;
            let del = c * d;
            h *= del;
            if (del - 1.0).abs() < 1e-16 {
                break;
            }
        }
        h * (-x).exp()
    }
}

/// Upper incomplete gamma `Γ(s, x)` for any real `s` and `x > 0`.
pub fn upper_incomplete_gamma(s: f64, x: f64) -> f64 {
    assert!(x > 0.0, "incomplete gamma needs x > 0");
    if s > 0.0 {
        return gamma_ur(s, x) * gamma(s);
    }
    let near_int = s.round();
    let (mut value, mut order) = if (s - near_int).abs() < 1e-12 {
        (exp_integral_e1(x), 0.0)
    } else {
        let steps = (-s).floor() + 1.0;
        let base = s + steps;
        (gamma_ur(base, x) * gamma(base), base)
    };
    // downward recurrence Γ(a, x) = (Γ(a+1, x) - x^a e^{-x}) / a
    while order - s > 0.5 {
        let a = order - 1.0;
        value = (value - x.powf(a) * (-x).exp()) / a;
        order = a;
    }
    value
}

/// Standard normal cumulative distribution function.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-x / std::f64::consts::SQRT_2)
}
