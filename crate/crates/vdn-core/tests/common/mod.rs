//! Shared test oracles, independent of the library's analytic code paths:
//! adaptive-quadrature KL divergences, central finite differences, and a 1-D
//! golden-section minimizer.

#![allow(dead_code)]

use vdn_core::special::ln_gamma;

/// Adaptive Simpson quadrature with Richardson correction.
///
/// `rel_tol` is scaled by the integral's magnitude; the per-interval budget
/// never drops below the f64 round-off floor, which would otherwise force
/// exponential subdivision.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, rel_tol: f64) -> f64 {
    fn simpson(a: f64, fa: f64, fm: f64, b: f64, fb: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        fa: f64,
        m: f64,
        fm: f64,
        b: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = simpson(a, fa, flm, m, fm);
        let right = simpson(m, fm, frm, b, fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            let child_tol = (tol / 2.0).max(1e-17 * (left.abs() + right.abs()));
            recurse(f, a, fa, lm, flm, m, fm, left, child_tol, depth - 1)
                + recurse(f, m, fm, rm, frm, b, fb, right, child_tol, depth - 1)
        }
    }
    // Coarse pass to estimate the scale for the absolute tolerance.
    let n = 16;
    let step = (b - a) / n as f64;
    let mut scale = 0.0;
    for i in 0..=n {
        scale += f(a + step * i as f64).abs();
    }
    scale = (scale * step.abs()).max(1e-30);

    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    let whole = simpson(a, fa, fm, b, fb);
    recurse(f, a, fa, m, fm, b, fb, whole, rel_tol * scale, 22)
}

fn ln_normal(t: f64, mean: f64, var: f64) -> f64 {
    -0.9189385332046727 - 0.5 * var.ln() - (t - mean) * (t - mean) / (2.0 * var)
}

fn ln_inv_gamma(x: f64, shape: f64, scale: f64) -> f64 {
    shape * scale.ln() - ln_gamma(shape) - (shape + 1.0) * x.ln() - scale / x
}

/// KL(N(mu1, v1) || N(mu0, v0)) by direct integration of `q ln(q/p)`.
pub fn kl_gaussian_quadrature(mu1: f64, v1: f64, mu0: f64, v0: f64) -> f64 {
    let sd = v1.sqrt();
    let integrand = move |t: f64| {
        let lq = ln_normal(t, mu1, v1);
        let lp = ln_normal(t, mu0, v0);
        lq.exp() * (lq - lp)
    };
    adaptive_simpson(&integrand, mu1 - 16.0 * sd, mu1 + 16.0 * sd, 1e-10)
}

/// KL(IG(a1, b1) || IG(a0, b0)) by integration in log space, where both
/// densities decay at least exponentially in each direction.
///
/// The mass can be a narrow spike inside a wide integration window (log-X
/// standard deviation scales as `1/sqrt(a1)`), so the window is pre-split
/// into panels no wider than that scale before the adaptive pass; otherwise
/// the first Simpson samples can all miss the spike and terminate early.
pub fn kl_inverse_gamma_quadrature(a1: f64, b1: f64, a0: f64, b0: f64) -> f64 {
    let integrand = move |t: f64| {
        let x = t.exp();
        let lq = ln_inv_gamma(x, a1, b1);
        let lp = ln_inv_gamma(x, a0, b0);
        // density of log X is f_X(x) * x
        (lq + t).exp() * (lq - lp)
    };
    let mode = (b1 / a1).ln();
    let hi = mode + (60.0 / a1).max(4.0) + 12.0;
    let lo = mode - 14.0;
    let spike = (1.0 / a1.sqrt()).min(1.0);
    let panels = (((hi - lo) / spike).ceil() as usize).clamp(64, 4096);
    let step = (hi - lo) / panels as f64;
    (0..panels)
        .map(|i| {
            let a = lo + step * i as f64;
            adaptive_simpson(&integrand, a, a + step, 1e-10)
        })
        .sum()
}

/// Central finite difference of a scalar function of one coordinate.
pub fn central_diff(f: &mut dyn FnMut(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Golden-section minimization on `[lo, hi]` for a unimodal function.
pub fn golden_min(f: &dyn Fn(f64) -> f64, mut lo: f64, mut hi: f64, iters: usize) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - inv_phi * (hi - lo);
    let mut d = lo + inv_phi * (hi - lo);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..iters {
        if fc < fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - inv_phi * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + inv_phi * (hi - lo);
            fd = f(d);
        }
    }
    0.5 * (lo + hi)
}

#[cfg(test)]
mod self_checks {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn simpson_integrates_a_polynomial() {
        let got = adaptive_simpson(&|x| x * x * x - 2.0 * x + 1.0, -1.0, 3.0, 1e-10);
        // integral of x^3 - 2x + 1 over [-1, 3] = [x^4/4 - x^2 + x] = 16
        assert_relative_eq!(got, 16.0, max_relative = 1e-10);
    }

    #[test]
    fn gaussian_kl_quadrature_matches_closed_form_spot() {
        // Same variance, mean shift d: KL = d^2 / (2 v)
        let got = kl_gaussian_quadrature(0.3, 0.04, 0.1, 0.04);
        assert_relative_eq!(got, 0.04 / 0.08, max_relative = 1e-9);
    }

    #[test]
    fn golden_finds_a_parabola_minimum() {
        let m = golden_min(&|x| (x - 1.25) * (x - 1.25), -4.0, 4.0, 100);
        assert_relative_eq!(m, 1.25, max_relative = 1e-9);
    }
}
