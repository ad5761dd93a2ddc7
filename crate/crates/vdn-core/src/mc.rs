//! Stochastic estimates of the bound, used to audit the closed forms.
//!
//! These estimators sample the posterior and average log densities directly
//! from the model definition. They never touch the analytic term expressions
//! in [`crate::objective`], so agreement between the two paths is evidence,
//! not tautology. The `check-elbo` CLI subcommand and the acceptance suite
//! both run on top of [`elbo_audit`].

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal};

use crate::error::{Error, Result};
use crate::objective::{clamped_fields, negative_elbo, VariationalPosterior};
use crate::prior::{prior_sigma_params, PriorSpec};
use crate::seed;
use crate::special::ln_gamma;

/// Sample mean and its standard error.
#[derive(Clone, Copy, Debug)]
pub struct McEstimate {
    pub mean: f64,
    pub stderr: f64,
}

pub fn ln_normal_pdf(v: f64, mean: f64, var: f64) -> f64 {
    -0.9189385332046727 - 0.5 * var.ln() - (v - mean) * (v - mean) / (2.0 * var)
}

pub fn ln_inv_gamma_pdf(x: f64, shape: f64, scale: f64) -> f64 {
    shape * scale.ln() - ln_gamma(shape) - (shape + 1.0) * x.ln() - scale / x
}

struct PixelSamplers {
    z: Vec<Normal<f64>>,
    // 1 / Gamma(shape = alpha, rate = beta) is inverse-Gamma(alpha, beta).
    precision: Vec<Gamma<f64>>,
}

fn samplers(q: &VariationalPosterior) -> Result<PixelSamplers> {
    let (m_sq, alpha, beta) = clamped_fields(q);
    let n = q.mu.len();
    let mut z = Vec::with_capacity(n);
    let mut precision = Vec::with_capacity(n);
    let err = |e: rand_distr::GammaError| Error::InvalidParam(format!("gamma sampler: {e}"));
    for i in 0..n {
        let mu = q.mu.as_slice().unwrap()[i];
        let m2 = m_sq.as_slice().unwrap()[i];
        let a = alpha.as_slice().unwrap()[i];
        let b = beta.as_slice().unwrap()[i];
        z.push(Normal::new(mu, m2.sqrt()).expect("finite mean, positive sd"));
        precision.push(Gamma::new(a, 1.0 / b).map_err(err)?);
    }
    Ok(PixelSamplers { z, precision })
}

fn run_mc(
    samples: usize,
    seed_value: u64,
    mut integrand: impl FnMut(&mut ChaCha8Rng) -> f64,
) -> McEstimate {
    assert!(samples >= 2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed_value);
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..samples {
        let v = integrand(&mut rng);
        sum += v;
        sum_sq += v * v;
    }
    let n = samples as f64;
    let mean = sum / n;
    let var = (sum_sq / n - mean * mean).max(0.0) * n / (n - 1.0);
    McEstimate {
        mean,
        stderr: (var / n).sqrt(),
    }
}

/// Monte-Carlo estimate of the expected log likelihood: draw
/// `z ~ N(mu, m^2)`, `sigma^2 ~ IG(alpha, beta)` and average
/// `sum_i ln N(y_i | z_i, sigma_i^2)`.
pub fn mc_likelihood(
    q: &VariationalPosterior,
    y: &Array3<f64>,
    samples: usize,
    seed_value: u64,
) -> Result<McEstimate> {
    q.validate()?;
    let s = samplers(q)?;
    let y_s = y.as_slice().unwrap().to_vec();
    Ok(run_mc(samples, seed_value, move |rng| {
        let mut acc = 0.0;
        for i in 0..y_s.len() {
            let z = s.z[i].sample(rng);
            let sigma_sq = 1.0 / s.precision[i].sample(rng);
            acc += ln_normal_pdf(y_s[i], z, sigma_sq);
        }
        acc
    }))
}

/// Monte-Carlo estimate of the defining expectation of the bound:
/// `E_q[ ln p(y|z, sigma^2) + ln p(z) + ln p(sigma^2) - ln q(z, sigma^2) ]`.
pub fn mc_lower_bound(
    q: &VariationalPosterior,
    y: &Array3<f64>,
    x: &Array3<f64>,
    prior: &PriorSpec,
    samples: usize,
    seed_value: u64,
) -> Result<McEstimate> {
    q.validate()?;
    let s = samplers(q)?;
    let (m_sq, alpha, beta) = clamped_fields(q);
    let (alpha0, beta0) = prior_sigma_params(prior);
    let eps0 = prior.epsilon0_sq;

    let n = q.mu.len();
    let mu = q.mu.as_slice().unwrap().to_vec();
    let m_sq = m_sq.as_slice().unwrap().to_vec();
    let alpha = alpha.as_slice().unwrap().to_vec();
    let beta = beta.as_slice().unwrap().to_vec();
    let y_s = y.as_slice().unwrap().to_vec();
    let x_s = x.as_slice().unwrap().to_vec();
    let beta0 = beta0.as_slice().unwrap().to_vec();

    Ok(run_mc(samples, seed_value, move |rng| {
        let mut acc = 0.0;
        for i in 0..n {
            let z = s.z[i].sample(rng);
            let sigma_sq = 1.0 / s.precision[i].sample(rng);
            acc += ln_normal_pdf(y_s[i], z, sigma_sq);
            acc += ln_normal_pdf(z, x_s[i], eps0);
            acc += ln_inv_gamma_pdf(sigma_sq, alpha0, beta0[i]);
            acc -= ln_normal_pdf(z, mu[i], m_sq[i]);
            acc -= ln_inv_gamma_pdf(sigma_sq, alpha[i], beta[i]);
        }
        acc
    }))
}

/// One row of the analytic-vs-Monte-Carlo audit.
#[derive(Clone, Copy, Debug)]
pub struct ElboAuditRow {
    pub trial: usize,
    pub analytic: f64,
    pub mc_mean: f64,
    pub mc_stderr: f64,
    pub z_score: f64,
}

fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    (rng.gen::<f64>() * (hi.ln() - lo.ln()) + lo.ln()).exp()
}

/// Random posterior and prior on an image of the given shape, with parameters
/// in the regime the networks produce.
pub fn random_setting(
    shape: (usize, usize, usize),
    seed_value: u64,
) -> (VariationalPosterior, Array3<f64>, Array3<f64>, PriorSpec) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed_value);
    let x = Array3::from_shape_fn(shape, |_| rng.gen::<f64>());
    let y = x.mapv(|v| (v + rng.gen::<f64>() * 0.2 - 0.1).clamp(0.0, 1.0));
    let mu = x.mapv(|v| v + rng.gen::<f64>() * 0.1 - 0.05);
    let m_sq = Array3::from_shape_fn(shape, |_| log_uniform(&mut rng, 1e-5, 1e-2));
    let alpha = Array3::from_shape_fn(shape, |_| 1.5 + rng.gen::<f64>() * 38.5);
    let beta = Array3::from_shape_fn(shape, |(i, j, k)| {
        let mode = log_uniform(&mut rng, 1e-4, 2e-2);
        mode * (alpha[(i, j, k)] + 1.0)
    });
    let q = VariationalPosterior::new(mu, m_sq, alpha, beta).expect("constructed positive");

    let p = [3usize, 5, 7][(rng.gen::<u32>() % 3) as usize];
    let eps0 = log_uniform(&mut rng, 1e-5, 1e-3);
    let xi = Array3::from_shape_fn(shape, |_| log_uniform(&mut rng, 1e-6, 1e-2));
    let prior = PriorSpec::new(eps0, p, xi, 1e-8).expect("valid prior");
    (q, y, x, prior)
}

/// Run `trials` independent audits of the analytic bound against the
/// Monte-Carlo estimate of its defining expectation on a 1x8x8 image.
pub fn elbo_audit(trials: usize, samples: usize, root_seed: u64) -> Result<Vec<ElboAuditRow>> {
    let shape = (1usize, 8usize, 8usize);
    (0..trials)
        .map(|trial| {
            let (q, y, x, prior) =
                random_setting(shape, seed::mix_indexed(root_seed, "elbo-audit", trial as u64));
            let analytic = -negative_elbo(&q, &y, &x, &prior)?.total;
            let mc = mc_lower_bound(
                &q,
                &y,
                &x,
                &prior,
                samples,
                seed::mix_indexed(root_seed, "elbo-audit-mc", trial as u64),
            )?;
            let z_score = if mc.stderr > 0.0 {
                (analytic - mc.mean) / mc.stderr
            } else {
                0.0
            };
            Ok(ElboAuditRow {
                trial,
                analytic,
                mc_mean: mc.mean,
                mc_stderr: mc.stderr,
                z_score,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn ln_pdfs_integrate_to_one_informally() {
        // Spot-check the densities against hand values.
        // Standard normal at 0: -0.5 ln(2 pi).
        assert_relative_eq!(
            ln_normal_pdf(0.0, 0.0, 1.0),
            -0.9189385332046727,
            max_relative = 1e-15
        );
        // IG(1, 1) at 1: ln(e^{-1}) = -1.
        assert_relative_eq!(ln_inv_gamma_pdf(1.0, 1.0, 1.0), -1.0, max_relative = 1e-15);
    }

    #[test]
    fn mc_estimator_is_deterministic_under_seed() {
        let (q, y, _x, _prior) = random_setting((1, 2, 2), 7);
        let a = mc_likelihood(&q, &y, 500, 3).unwrap();
        let b = mc_likelihood(&q, &y, 500, 3).unwrap();
        assert_eq!(a.mean, b.mean);
        assert_eq!(a.stderr, b.stderr);
    }

    #[test]
    fn audit_rows_have_expected_shape() {
        let rows = elbo_audit(3, 2000, 11).unwrap();
        assert_eq!(rows.len(), 3);
        for (i, r) in rows.iter().enumerate() {
            assert_eq!(r.trial, i);
            assert!(r.mc_stderr > 0.0);
            assert!(r.analytic.is_finite());
        }
    }
}
