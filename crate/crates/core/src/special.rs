//! Spherical harmonics, associated Legendre functions and spherical Bessel
//! functions.
//!
//! Complex spherical harmonics use the Condon–Shortley phase and are
//! orthonormal over the unit sphere:
//!
//! ```text
//! Y_n^m(θ, φ) = (-1)^m sqrt((2n+1)/(4π) (n-m)!/(n+m)!) P_n^m(cos θ) e^{imφ}
//! ```
//!
//! Coefficient vectors are laid out by `(n, m)` with `m = -n..=n`, so the
//! entry for `(n, m)` lives at index `n² + n + m`.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::sphere::Direction;

/// Number of coefficients of an order-`order` expansion, `(order + 1)²`.
#[inline]
pub fn sh_count(order: usize) -> usize {
    (order + 1) * (order + 1)
}

/// Flat index of the `(n, m)` coefficient.
#[inline]
pub fn sh_index(n: usize, m: i64) -> usize {
    debug_assert!(m.unsigned_abs() as usize <= n);
    ((n * n + n) as i64 + m) as usize
}

/// Iterates `(n, m)` pairs in storage order.
pub fn sh_degrees(order: usize) -> impl Iterator<Item = (usize, i64)> {
    (0..=order).flat_map(|n| (-(n as i64)..=n as i64).map(move |m| (n, m)))
}

/// Orthonormalized associated Legendre values `P̄_n^m(cos θ)` for `m ≥ 0`,
/// including the Condon–Shortley phase and the `1/sqrt(4π)` factor so that
/// `Y_n^m = P̄_n^m e^{imφ}`. Stored at `n(n+1)/2 + m`.
pub fn normalized_legendre(order: usize, colatitude: f64) -> Vec<f64> {
    let x = colatitude.cos();
    let s = colatitude.sin();
    let idx = |n: usize, m: usize| n * (n + 1) / 2 + m;
    let mut p = vec![0.0; (order + 1) * (order + 2) / 2];
    p[0] = 1.0 / (4.0 * PI).sqrt();
    for m in 1..=order {
        let mf = m as f64;
        p[idx(m, m)] = -((2.0 * mf + 1.0) / (2.0 * mf)).sqrt() * s * p[idx(m - 1, m - 1)];
    }
    for m in 0..order {
        p[idx(m + 1, m)] = (2.0 * m as f64 + 3.0).sqrt() * x * p[idx(m, m)];
    }
    for m in 0..=order {
        let mf = m as f64;
        for n in (m + 2)..=order {
            let nf = n as f64;
            let a = ((4.0 * nf * nf - 1.0) / (nf * nf - mf * mf)).sqrt();
            let b = (((nf - 1.0) * (nf - 1.0) - mf * mf) / (4.0 * (nf - 1.0) * (nf - 1.0) - 1.0)).sqrt();
            p[idx(n, m)] = a * (x * p[idx(n - 1, m)] - b * p[idx(n - 2, m)]);
        }
    }
    p
}

/// Complex spherical harmonics `Y_n^m(d)` for all `n ≤ order`.
pub fn sh_basis(order: usize, d: Direction) -> Vec<Complex64> {
    let p = normalized_legendre(order, d.colatitude());
    let mut out = vec![Complex64::new(0.0, 0.0); sh_count(order)];
    let phi = d.azimuth();
    for n in 0..=order {
        let base = n * n + n;
        for m in 0..=n {
            let value = p[n * (n + 1) / 2 + m] * Complex64::from_polar(1.0, m as f64 * phi);
            out[base + m] = value;
            if m > 0 {
                let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
                out[base - m] = sign * value.conj();
            }
        }
    }
    out
}

/// Legendre polynomials `P_0(x) … P_order(x)`.
pub fn legendre(order: usize, x: f64) -> Vec<f64> {
    let mut p = Vec::with_capacity(order + 1);
    p.push(1.0);
    if order >= 1 {
        p.push(x);
    }
    for n in 2..=order {
        let nf = n as f64;
        let next = ((2.0 * nf - 1.0) * x * p[n - 1] - (nf - 1.0) * p[n - 2]) / nf;
        p.push(next);
    }
    p
}

/// Spherical Bessel functions of the first kind `j_0(x) … j_order(x)`.
///
/// Uses Miller's backward recurrence normalized against the closed forms of
/// `j_0` or `j_1`, which is stable for every `n` and `x ≥ 0`.
pub fn spherical_bessel_j(order: usize, x: f64) -> Vec<f64> {
    let mut out = vec![0.0; order + 1];
    if x == 0.0 {
        out[0] = 1.0;
        return out;
    }
    let x = x.abs();
    let start = order.max(x.ceil() as usize) + 20 + (10.0 * (order.max(x as usize) as f64).sqrt()) as usize;
    let mut next = 0.0f64; // f_{n+1}
    let mut cur = 1e-300f64; // f_n
    for n in (1..=start).rev() {
        let prev = (2.0 * n as f64 + 1.0) / x * cur - next;
        next = cur;
        cur = prev;
        if n - 1 <= order {
            out[n - 1] = cur;
        }
        if n <= order {
            out[n] = next;
        }
        if cur.abs() > 1e250 {
            cur *= 1e-250;
            next *= 1e-250;
            for v in out.iter_mut() {
                *v *= 1e-250;
            }
        }
    }
    // `cur` now holds the unnormalized f_0 and `next` f_1.
    let j0 = x.sin() / x;
    let j1 = x.sin() / (x * x) - x.cos() / x;
    let scale = if j0.abs() >= j1.abs() { j0 / cur } else { j1 / next };
    for v in out.iter_mut() {
        *v *= scale;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bessel_matches_closed_forms() {
        for &x in &[1e-4, 0.3, 1.0, 3.0, 7.5, 20.0, 45.0] {
            let j = spherical_bessel_j(4, x);
            let (s, c) = (f64::sin(x), f64::cos(x));
            let j0 = s / x;
            let j1 = s / (x * x) - c / x;
            let j2 = (3.0 / (x * x) - 1.0) * s / x - 3.0 * c / (x * x);
            let tol = if x < 1e-2 { 1e-6 } else { 1e-12 };
            assert!((j[0] - j0).abs() < 1e-13, "j0 at {x}");
            assert!((j[1] - j1).abs() < tol, "j1 at {x}: {} vs {}", j[1], j1);
            assert!((j[2] - j2).abs() < tol.max(1e-12), "j2 at {x}: {} vs {}", j[2], j2);
        }
    }

    #[test]
    fn bessel_high_order_small_argument_decays() {
        let j = spherical_bessel_j(60, 0.5);
        assert!(j[60].abs() < 1e-90);
        assert!(j.iter().all(|v| v.is_finite()));
        // leading term x^n / (2n+1)!!
        let dfact: f64 = (1..=10).map(|k| (2 * k + 1) as f64).product();
        assert!((j[10] / (0.5f64.powi(10) / dfact) - 1.0).abs() < 0.02);
    }

    #[test]
    fn sh_order_zero_and_pole_values() {
        let d = Direction::new(1.1, 2.3).unwrap();
        let y = sh_basis(0, d);
        assert!((y[0].re - 1.0 / (4.0 * PI).sqrt()).abs() < 1e-15);
        let pole = sh_basis(1, Direction::new(0.0, 0.0).unwrap());
        assert!((pole[sh_index(1, 0)].re - (3.0 / (4.0 * PI)).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn addition_theorem_degree_three() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let d = Direction::new(rng.gen_range(0.0..PI), rng.gen_range(0.0..2.0 * PI)).unwrap();
            let y = sh_basis(3, d);
            let s: f64 = (-3..=3).map(|m| y[sh_index(3, m)].norm_sqr()).sum();
            assert!((s - 7.0 / (4.0 * PI)).abs() < 1e-13);
        }
    }

    #[test]
    fn y11_closed_form() {
        let d = Direction::new(0.7, 1.3).unwrap();
        let y = sh_basis(1, d);
        let expect = -(3.0 / (8.0 * PI)).sqrt() * 0.7f64.sin() * Complex64::from_polar(1.0, 1.3);
        assert!((y[sh_index(1, 1)] - expect).norm() < 1e-15);
        assert!((y[sh_index(1, -1)] - (-expect.conj())).norm() < 1e-15);
    }

    #[test]
    fn legendre_matches_sh_sum() {
        // Σ_m Y_n^m(a)* Y_n^m(b) = (2n+1)/(4π) P_n(cos γ)
        let a = Direction::new(0.4, 0.2).unwrap();
        let b = Direction::new(2.0, 4.0).unwrap();
        let ya = sh_basis(6, a);
        let yb = sh_basis(6, b);
        let p = legendre(6, a.cos_angle_to(b));
        for n in 0..=6usize {
            let s: Complex64 = (-(n as i64)..=n as i64)
                .map(|m| ya[sh_index(n, m)].conj() * yb[sh_index(n, m)])
                .sum();
            let expect = (2 * n + 1) as f64 / (4.0 * PI) * p[n];
            assert!((s - Complex64::new(expect, 0.0)).norm() < 1e-13);
        }
    }
}
