//! One-dimensional searches used by calibration and fitting.

use crate::scalar::Real;

/// Golden-section minimization of a unimodal `f` on [lo, hi]; stops when the
/// bracket is narrower than `tol`.
pub fn golden_min<T: Real, F: FnMut(T) -> T>(mut f: F, lo: T, hi: T, tol: T) -> T {
    let inv_phi = (T::lit(5.0).sqrt() - T::one()) * T::half();
    let (mut a, mut b) = if lo <= hi { (lo, hi) } else { (hi, lo) };
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..200 {
        if (b - a).abs() <= tol {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    if fc < fd {
        c
    } else {
        d
    }
}

pub fn golden_max<T: Real, F: FnMut(T) -> T>(mut f: F, lo: T, hi: T, tol: T) -> T {
    golden_min(|x| -f(x), lo, hi, tol)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_parabola_vertex() {
        let x = golden_min(|x: f64| (x - 0.3) * (x - 0.3), -1.0, 2.0, 1e-10);
        assert!((x - 0.3).abs() < 1e-6);
        let y = golden_max(|x: f64| x.sin(), 0.0, 3.0, 1e-10);
        assert!((y - std::f64::consts::FRAC_PI_2).abs() < 1e-6);
    }
}
