//! Trapezoid inner products and norms in space and time.

use rustfft::{num_complex::Complex64, FftPlanner};

use crate::error::{KdvError, Result};
use crate::grid::{check_same, ScalarField, TimeSignal};

/// Trapezoid approximation of the integral of `f g` over `(0, L)`.
pub fn l2_inner(f: &ScalarField, g: &ScalarField) -> Result<f64> {
    check_same(f.grid(), g.grid())?;
    Ok(weighted_dot(&f.grid().trapezoid_weights(), f.values(), g.values()))
}

pub fn l2_norm(f: &ScalarField) -> f64 {
    weighted_dot(&f.grid().trapezoid_weights(), f.values(), f.values()).sqrt()
}

pub fn time_inner(a: &TimeSignal, b: &TimeSignal) -> Result<f64> {
    if a.grid() != b.grid() {
        return Err(KdvError::GridMismatch("time signals on different grids".into()));
    }
    Ok(weighted_dot(&a.grid().trapezoid_weights(), a.values(), b.values()))
}

pub fn time_l2_norm(s: &TimeSignal) -> f64 {
    weighted_dot(&s.grid().trapezoid_weights(), s.values(), s.values()).sqrt()
}

pub(crate) fn weighted_dot(w: &[f64], a: &[f64], b: &[f64]) -> f64 {
    w.iter().zip(a).zip(b).map(|((w, a), b)| w * a * b).sum()
}

/// Approximate `H^order(0, T)` norm of a signal.
///
/// The signal is reflected evenly about both endpoints into a `2T`-periodic
/// sequence, transformed, and weighted by `(1 + w^2)^order`. With `order = 0`
/// Parseval makes this coincide with the trapezoid L2 norm.
pub fn fractional_time_norm(s: &TimeSignal, order: f64) -> Result<f64> {
    if !(-1.0..=1.0).contains(&order) {
        return Err(KdvError::InvalidArgument(format!("order must lie in [-1, 1], got {order}")));
    }
    let m = s.grid().steps();
    let dt = s.grid().dt();
    let period = 2.0 * s.grid().horizon();
    let len = 2 * m;
    let v = s.values();
    let mut buf: Vec<Complex64> = (0..len)
        .map(|j| Complex64::new(if j <= m { v[j] } else { v[len - j] }, 0.0))
        .collect();
    FftPlanner::new().plan_fft_forward(len).process(&mut buf);
    let mut acc = 0.0;
    for (k, c) in buf.iter().enumerate() {
        let kk = if k <= len / 2 { k as f64 } else { k as f64 - len as f64 };
        let omega = 2.0 * std::f64::consts::PI * kk / period;
        acc += (1.0 + omega * omega).powf(order) * c.norm_sqr();
    }
    // dt/len * sum |S_k|^2 equals the periodic sum; half of it is the trapezoid over [0, T]
    Ok((0.5 * dt / len as f64 * acc).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{SpatialGrid, TimeGrid};
    use std::f64::consts::PI;

    #[test]
    fn constant_integrand() {
        let g = SpatialGrid::new(PI, 64).unwrap();
        let one = ScalarField::constant(g, 1.0);
        assert!((l2_inner(&one, &one).unwrap() - PI).abs() < 1e-12);
    }

    #[test]
    fn cos_squared() {
        let g = SpatialGrid::new(PI, 64).unwrap();
        let c = ScalarField::from_fn(g, f64::cos);
        let dx = g.dx();
        assert!((l2_inner(&c, &c).unwrap() - PI / 2.0).abs() < dx * dx);
    }

    #[test]
    fn zero_field_pairs_to_zero() {
        let g = SpatialGrid::new(2.0, 16).unwrap();
        let z = ScalarField::zeros(g);
        let f = ScalarField::from_fn(g, |x| x.exp());
        assert_eq!(l2_inner(&z, &f).unwrap(), 0.0);
    }

    #[test]
    fn mismatched_grids() {
        let a = ScalarField::zeros(SpatialGrid::new(1.0, 16).unwrap());
        let b = ScalarField::zeros(SpatialGrid::new(1.0, 17).unwrap());
        assert!(l2_inner(&a, &b).is_err());
    }

    #[test]
    fn time_norms() {
        let tg = TimeGrid::new(2.0, 100).unwrap();
        let one = TimeSignal::from_fn(tg, |_| 1.0);
        assert!((time_l2_norm(&one) - 2f64.sqrt()).abs() < 1e-12);
        let tg = TimeGrid::new(1.0, 200).unwrap();
        let s = TimeSignal::from_fn(tg, |t| (2.0 * PI * t).sin());
        assert!((time_l2_norm(&s) - 0.5f64.sqrt()).abs() < tg.dt() * tg.dt());
        assert_eq!(time_l2_norm(&TimeSignal::zeros(tg)), 0.0);
    }

    #[test]
    fn fractional_order_zero_is_l2() {
        let tg = TimeGrid::new(1.0, 64).unwrap();
        let one = TimeSignal::from_fn(tg, |_| 1.0);
        assert!((fractional_time_norm(&one, 0.0).unwrap() - 1.0).abs() < 1e-10);
        let s = TimeSignal::from_fn(tg, |t| (3.0 * t).sin() + t * t);
        let a = fractional_time_norm(&s, 0.0).unwrap();
        assert!((a - time_l2_norm(&s)).abs() <= 1e-10 * a);
    }

    #[test]
    fn fractional_positive_order_grows() {
        let tg = TimeGrid::new(1.0, 256).unwrap();
        let c = TimeSignal::from_fn(tg, |_| -2.5);
        let h = fractional_time_norm(&c, 1.0 / 3.0).unwrap();
        assert!(h >= time_l2_norm(&c) * (1.0 - 1e-12));
        let s = TimeSignal::from_fn(tg, |t| (10.0 * PI * t).sin());
        let r = fractional_time_norm(&s, 1.0 / 3.0).unwrap() / fractional_time_norm(&s, 0.0).unwrap();
        assert!(r > 1.0);
        assert!(fractional_time_norm(&s, 1.5).is_err());
    }
}
