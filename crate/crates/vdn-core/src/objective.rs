//! Closed-form evaluation of the evidence lower bound and its gradients.
//!
//! The bound decomposes into three analytic terms: the expected log
//! likelihood of the noisy image under the variational posterior, the KL
//! divergence of the per-pixel Gaussian posterior on the clean image from its
//! Gaussian prior, and the KL divergence of the per-pixel inverse-Gamma
//! posterior on the noise variance from its inverse-Gamma prior. All three
//! are differentiable in the four posterior fields, so training needs no
//! sampling or reparameterization.
//!
//! All math here runs in `f64` regardless of network precision: the
//! digamma/log-Gamma cancellations are precision-sensitive.

use ndarray::{Array3, Zip};

use crate::error::{Error, Result};
use crate::prior::{prior_sigma_params, PriorSpec};
use crate::special::{digamma, ln_gamma, trigamma};

/// Lower bound applied to `alpha` before evaluation; digamma diverges at 0.
pub const ALPHA_FLOOR: f64 = 1e-2;
/// Lower bound applied to `beta` before evaluation.
pub const BETA_FLOOR: f64 = 1e-10;
/// Lower bound applied to `m_sq` before evaluation.
pub const M_SQ_FLOOR: f64 = 1e-10;

const HALF_LN_TWO_PI: f64 = 0.9189385332046727;

/// The four per-pixel posterior parameter fields predicted by the networks:
/// Gaussian mean and variance for the clean image, inverse-Gamma shape and
/// scale for the noise variance. All image-shaped.
#[derive(Clone, Debug)]
pub struct VariationalPosterior {
    pub mu: Array3<f64>,
    pub m_sq: Array3<f64>,
    pub alpha: Array3<f64>,
    pub beta: Array3<f64>,
}

impl VariationalPosterior {
    pub fn new(
        mu: Array3<f64>,
        m_sq: Array3<f64>,
        alpha: Array3<f64>,
        beta: Array3<f64>,
    ) -> Result<Self> {
        let q = Self {
            mu,
            m_sq,
            alpha,
            beta,
        };
        q.validate()?;
        Ok(q)
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.mu.dim()
    }

    pub fn validate(&self) -> Result<()> {
        let dim = self.mu.dim();
        if self.m_sq.dim() != dim || self.alpha.dim() != dim || self.beta.dim() != dim {
            return Err(Error::ShapeMismatch(format!(
                "posterior fields disagree: mu {:?}, m_sq {:?}, alpha {:?}, beta {:?}",
                dim,
                self.m_sq.dim(),
                self.alpha.dim(),
                self.beta.dim()
            )));
        }
        if self.mu.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParam("non-finite mu".into()));
        }
        for (name, field) in [
            ("m_sq", &self.m_sq),
            ("alpha", &self.alpha),
            ("beta", &self.beta),
        ] {
            if field.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
                return Err(Error::InvalidParam(format!(
                    "{name} must be strictly positive and finite"
                )));
            }
        }
        Ok(())
    }

    fn require_shape(&self, other: (usize, usize, usize), what: &str) -> Result<()> {
        if self.shape() != other {
            return Err(Error::ShapeMismatch(format!(
                "{what}: posterior {:?} vs {:?}",
                self.shape(),
                other
            )));
        }
        Ok(())
    }
}

/// The posterior fields after the objective-boundary floors. Shared by the
/// analytic terms and the Monte-Carlo audit so both evaluate the same `q`.
pub fn clamped_fields(q: &VariationalPosterior) -> (Array3<f64>, Array3<f64>, Array3<f64>) {
    (
        q.m_sq.mapv(|v| v.max(M_SQ_FLOOR)),
        q.alpha.mapv(|v| v.max(ALPHA_FLOOR)),
        q.beta.mapv(|v| v.max(BETA_FLOOR)),
    )
}

/// The three bound terms and their sum for one image (or one batch, after
/// averaging parts). `total` is always recomputed from the parts in the same
/// accumulation order, so `total = neg_likelihood + kl_z + kl_sigma` holds
/// bit for bit.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossBreakdown {
    pub neg_likelihood: f64,
    pub kl_z: f64,
    pub kl_sigma: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn from_parts(neg_likelihood: f64, kl_z: f64, kl_sigma: f64) -> Self {
        Self {
            neg_likelihood,
            kl_z,
            kl_sigma,
            total: neg_likelihood + kl_z + kl_sigma,
        }
    }

    /// Average each part over a batch, then rebuild the total from the
    /// averaged parts.
    pub fn mean_of(items: &[LossBreakdown]) -> Self {
        assert!(!items.is_empty());
        let n = items.len() as f64;
        let nl = items.iter().map(|b| b.neg_likelihood).sum::<f64>() / n;
        let kz = items.iter().map(|b| b.kl_z).sum::<f64>() / n;
        let ks = items.iter().map(|b| b.kl_sigma).sum::<f64>() / n;
        Self::from_parts(nl, kz, ks)
    }

    pub fn is_finite(&self) -> bool {
        self.total.is_finite()
    }
}

/// Expected log likelihood of `y` under the posterior, summed over pixels:
///
/// `sum_i { -1/2 ln 2pi - 1/2 (ln beta_i - psi(alpha_i))
///          - (alpha_i / 2 beta_i) [(y_i - mu_i)^2 + m_i^2] }`
pub fn likelihood_term(q: &VariationalPosterior, y: &Array3<f64>) -> Result<f64> {
    q.validate()?;
    q.require_shape(y.dim(), "likelihood_term")?;
    let (m_sq, alpha, beta) = clamped_fields(q);
    let mut acc = 0.0;
    Zip::from(&q.mu)
        .and(&m_sq)
        .and(&alpha)
        .and(&beta)
        .and(y)
        .for_each(|&mu, &m2, &a, &b, &yi| {
            let r = yi - mu;
            acc += -HALF_LN_TWO_PI - 0.5 * (b.ln() - digamma(a)) - a / (2.0 * b) * (r * r + m2);
        });
    Ok(acc)
}

/// KL divergence of the Gaussian posterior on the clean image from its prior
/// `N(x, epsilon0_sq)`, summed over pixels:
///
/// `sum_i { (mu_i - x_i)^2 / 2 eps0^2
///          + 1/2 [ m_i^2/eps0^2 - ln(m_i^2/eps0^2) - 1 ] }`
pub fn kl_gaussian(q: &VariationalPosterior, x: &Array3<f64>, epsilon0_sq: f64) -> Result<f64> {
    q.validate()?;
    q.require_shape(x.dim(), "kl_gaussian")?;
    if !(epsilon0_sq > 0.0) {
        return Err(Error::InvalidParam(format!(
            "epsilon0_sq must be > 0, got {epsilon0_sq}"
        )));
    }
    let m_sq = q.m_sq.mapv(|v| v.max(M_SQ_FLOOR));
    let mut acc = 0.0;
    Zip::from(&q.mu).and(&m_sq).and(x).for_each(|&mu, &m2, &xi| {
        let d = mu - xi;
        let ratio = m2 / epsilon0_sq;
        acc += d * d / (2.0 * epsilon0_sq) + 0.5 * (ratio - ratio.ln() - 1.0);
    });
    Ok(acc)
}

/// Gradient of [`kl_gaussian`] with respect to `mu`: exactly
/// `(mu_i - x_i) / epsilon0_sq`. This is the term that turns the objective
/// into a plain MSE loss as `epsilon0_sq` shrinks.
pub fn kl_gaussian_grad_mu(q: &VariationalPosterior, x: &Array3<f64>, epsilon0_sq: f64) -> Array3<f64> {
    let mut g = q.mu.clone();
    Zip::from(&mut g).and(x).for_each(|m, &xi| {
        *m = (*m - xi) / epsilon0_sq;
    });
    g
}

/// KL divergence of the inverse-Gamma posterior on the noise variance from
/// the prior `IG(alpha0, beta0_i)`, summed over pixels:
///
/// `sum_i { (alpha_i - alpha0) psi(alpha_i) + ln Gamma(alpha0) - ln Gamma(alpha_i)
///          + alpha0 (ln beta_i - ln beta0_i) + alpha_i (beta0_i/beta_i - 1) }`
///
/// With `alpha0 = p^2/2 - 1` and `beta0_i = p^2 xi_i / 2` this is the bound's
/// variance-prior term; the general `(alpha0, beta0)` form is algebraically
/// identical and is what the quadrature oracle checks.
pub fn kl_inverse_gamma(q: &VariationalPosterior, alpha0: f64, beta0: &Array3<f64>) -> Result<f64> {
    q.validate()?;
    q.require_shape(beta0.dim(), "kl_inverse_gamma")?;
    if !(alpha0 > 0.0) || beta0.iter().any(|&b| !(b > 0.0)) {
        return Err(Error::InvalidParam(
            "prior parameters must be strictly positive".into(),
        ));
    }
    let alpha = q.alpha.mapv(|v| v.max(ALPHA_FLOOR));
    let beta = q.beta.mapv(|v| v.max(BETA_FLOOR));
    let lg_a0 = ln_gamma(alpha0);
    let mut acc = 0.0;
    Zip::from(&alpha).and(&beta).and(beta0).for_each(|&a, &b, &b0| {
        acc += (a - alpha0) * digamma(a) + (lg_a0 - ln_gamma(a)) + alpha0 * (b.ln() - b0.ln())
            + a * (b0 / b - 1.0);
    });
    Ok(acc)
}

/// Gradients of the per-image negative bound with respect to the four
/// posterior fields. Entries are zero where the corresponding field was
/// floored (the clamp is flat there).
#[derive(Clone, Debug)]
pub struct PosteriorGrad {
    pub mu: Array3<f64>,
    pub m_sq: Array3<f64>,
    pub alpha: Array3<f64>,
    pub beta: Array3<f64>,
}

/// Negative lower bound for one image: `-likelihood + kl_z + kl_sigma`,
/// summed over pixels and reported with its three parts.
pub fn negative_elbo(
    q: &VariationalPosterior,
    y: &Array3<f64>,
    x: &Array3<f64>,
    prior: &PriorSpec,
) -> Result<LossBreakdown> {
    q.require_shape(prior.xi.dim(), "negative_elbo prior")?;
    let (alpha0, beta0) = prior_sigma_params(prior);
    let nl = -likelihood_term(q, y)?;
    let kz = kl_gaussian(q, x, prior.epsilon0_sq)?;
    let ks = kl_inverse_gamma(q, alpha0, &beta0)?;
    Ok(LossBreakdown::from_parts(nl, kz, ks))
}

/// [`negative_elbo`] plus its analytic gradients.
pub fn negative_elbo_grad(
    q: &VariationalPosterior,
    y: &Array3<f64>,
    x: &Array3<f64>,
    prior: &PriorSpec,
) -> Result<(LossBreakdown, PosteriorGrad)> {
    let breakdown = negative_elbo(q, y, x, prior)?;
    let (alpha0, beta0) = prior_sigma_params(prior);
    let eps0 = prior.epsilon0_sq;
    let dim = q.shape();

    let mut g_mu = Array3::<f64>::zeros(dim);
    let mut g_m = Array3::<f64>::zeros(dim);
    let mut g_a = Array3::<f64>::zeros(dim);
    let mut g_b = Array3::<f64>::zeros(dim);

    // The kl_z contribution to d/dmu is exactly (mu - x)/eps0^2.
    let kl_mu = kl_gaussian_grad_mu(q, x, eps0);

    // Single indexed pass over all inputs.
    let mu_s = q.mu.as_slice().unwrap();
    let m_s = q.m_sq.as_slice().unwrap();
    let a_s = q.alpha.as_slice().unwrap();
    let b_s = q.beta.as_slice().unwrap();
    let y_s = y.as_slice().unwrap();
    let b0_s = beta0.as_slice().unwrap();
    let klmu_s = kl_mu.as_slice().unwrap();
    {
        let gm = g_mu.as_slice_mut().unwrap();
        let gm2 = g_m.as_slice_mut().unwrap();
        let ga = g_a.as_slice_mut().unwrap();
        let gb = g_b.as_slice_mut().unwrap();
        for i in 0..mu_s.len() {
            let a_clamped = a_s[i] < ALPHA_FLOOR;
            let b_clamped = b_s[i] < BETA_FLOOR;
            let m_clamped = m_s[i] < M_SQ_FLOOR;
            let a = a_s[i].max(ALPHA_FLOOR);
            let b = b_s[i].max(BETA_FLOOR);
            let m2 = m_s[i].max(M_SQ_FLOOR);
            let r = y_s[i] - mu_s[i];
            let sq = r * r + m2;
            let b0 = b0_s[i];

            gm[i] = a / b * (mu_s[i] - y_s[i]) + klmu_s[i];
            gm2[i] = if m_clamped {
                0.0
            } else {
                a / (2.0 * b) + 0.5 * (1.0 / eps0 - 1.0 / m2)
            };
            ga[i] = if a_clamped {
                0.0
            } else {
                let tg = trigamma(a);
                -0.5 * tg + sq / (2.0 * b) + (a - alpha0) * tg + b0 / b - 1.0
            };
            gb[i] = if b_clamped {
                0.0
            } else {
                0.5 / b - a * sq / (2.0 * b * b) + alpha0 / b - a * b0 / (b * b)
            };
        }
    }

    Ok((
        breakdown,
        PosteriorGrad {
            mu: g_mu,
            m_sq: g_m,
            alpha: g_a,
            beta: g_b,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use ndarray::Array3;

    fn field(v: f64) -> Array3<f64> {
        Array3::from_elem((1, 1, 1), v)
    }

    fn simple_q() -> VariationalPosterior {
        VariationalPosterior::new(field(0.5), field(1.0), field(3.0), field(2.0)).unwrap()
    }

    #[test]
    fn likelihood_single_pixel_value() {
        // y = mu, alpha = 3, beta = 2, m^2 = 1:
        // -1/2 ln 2pi - 1/2 (ln 2 - psi(3)) - 3/4, evaluated at 40 digits.
        let q = simple_q();
        let y = field(0.5);
        let got = likelihood_term(&q, &y).unwrap();
        assert_relative_eq!(got, -1.5541199559354118, max_relative = 1e-14);
    }

    #[test]
    fn likelihood_is_shift_invariant() {
        let q = VariationalPosterior::new(field(0.3), field(2e-3), field(5.0), field(0.1)).unwrap();
        let y = field(0.8);
        let base = likelihood_term(&q, &y).unwrap();
        for shift in [0.1, -0.25, 1.0] {
            let q2 = VariationalPosterior::new(
                field(0.3 + shift),
                field(2e-3),
                field(5.0),
                field(0.1),
            )
            .unwrap();
            let y2 = field(0.8 + shift);
            assert_relative_eq!(likelihood_term(&q2, &y2).unwrap(), base, max_relative = 1e-12);
        }
    }

    #[test]
    fn kl_gaussian_zero_at_equality() {
        let eps0 = 3.7e-4;
        let q = VariationalPosterior::new(field(0.42), field(eps0), field(2.0), field(1.0)).unwrap();
        let x = field(0.42);
        assert_eq!(kl_gaussian(&q, &x, eps0).unwrap(), 0.0);
    }

    #[test]
    fn kl_gaussian_mean_shift_closed_form() {
        let eps0 = 1e-4;
        let delta = 0.03;
        let q =
            VariationalPosterior::new(field(0.5 + delta), field(eps0), field(2.0), field(1.0))
                .unwrap();
        let x = field(0.5);
        assert_relative_eq!(
            kl_gaussian(&q, &x, eps0).unwrap(),
            delta * delta / (2.0 * eps0),
            max_relative = 1e-9
        );
    }

    #[test]
    fn kl_inverse_gamma_zero_at_prior() {
        let alpha0 = 23.5;
        let beta0 = field(0.9);
        let q =
            VariationalPosterior::new(field(0.0), field(1e-4), field(alpha0), field(0.9)).unwrap();
        let kl = kl_inverse_gamma(&q, alpha0, &beta0).unwrap();
        assert_abs_diff_eq!(kl, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn kl_inverse_gamma_doubled_scale() {
        // alpha = alpha0, beta = 2 beta0 -> alpha0 (ln 2 - 1/2) per pixel.
        let alpha0 = 11.0;
        let b0 = 0.25;
        let q = VariationalPosterior::new(
            Array3::from_elem((1, 2, 3), 0.0),
            Array3::from_elem((1, 2, 3), 1e-4),
            Array3::from_elem((1, 2, 3), alpha0),
            Array3::from_elem((1, 2, 3), 2.0 * b0),
        )
        .unwrap();
        let beta0 = Array3::from_elem((1, 2, 3), b0);
        let per_pixel = alpha0 * (std::f64::consts::LN_2 - 0.5);
        assert_relative_eq!(
            kl_inverse_gamma(&q, alpha0, &beta0).unwrap(),
            6.0 * per_pixel,
            max_relative = 1e-12
        );
    }

    #[test]
    fn breakdown_additivity_is_bitwise() {
        let b = LossBreakdown::from_parts(0.1 + 0.2, -7.31, 2.0044);
        assert_eq!(b.total, b.neg_likelihood + b.kl_z + b.kl_sigma);
        let m = LossBreakdown::mean_of(&[b, LossBreakdown::from_parts(1.0, 2.0, 3.0)]);
        assert_eq!(m.total, m.neg_likelihood + m.kl_z + m.kl_sigma);
    }

    #[test]
    fn negative_elbo_matches_its_parts() {
        let xi = Array3::from_elem((1, 2, 2), 4e-4);
        let prior = PriorSpec::new(5e-5, 7, xi, 1e-8).unwrap();
        let q = VariationalPosterior::new(
            Array3::from_elem((1, 2, 2), 0.5),
            Array3::from_elem((1, 2, 2), 1e-3),
            Array3::from_elem((1, 2, 2), 20.0),
            Array3::from_elem((1, 2, 2), 0.01),
        )
        .unwrap();
        let y = Array3::from_elem((1, 2, 2), 0.55);
        let x = Array3::from_elem((1, 2, 2), 0.5);
        let b = negative_elbo(&q, &y, &x, &prior).unwrap();
        let (a0, b0) = prior_sigma_params(&prior);
        assert_eq!(b.neg_likelihood, -likelihood_term(&q, &y).unwrap());
        assert_eq!(b.kl_z, kl_gaussian(&q, &x, 5e-5).unwrap());
        assert_eq!(b.kl_sigma, kl_inverse_gamma(&q, a0, &b0).unwrap());
        assert_eq!(b.total, b.neg_likelihood + b.kl_z + b.kl_sigma);
    }

    #[test]
    fn grad_mu_kl_part_is_exact() {
        // The MSE-degeneration mechanism: d(kl_z)/d(mu_i) == (mu_i - x_i)/eps0^2.
        let eps0 = 5e-5;
        let q = VariationalPosterior::new(
            Array3::from_shape_fn((1, 3, 3), |(_, y, x)| 0.1 * (y as f64) + 0.03 * (x as f64)),
            Array3::from_elem((1, 3, 3), 1e-4),
            Array3::from_elem((1, 3, 3), 23.5),
            Array3::from_elem((1, 3, 3), 0.2),
        )
        .unwrap();
        let x = Array3::from_elem((1, 3, 3), 0.25);
        let g = kl_gaussian_grad_mu(&q, &x, eps0);
        for ((gi, mi), xi) in g.iter().zip(q.mu.iter()).zip(x.iter()) {
            assert_eq!(*gi, (mi - xi) / eps0);
        }
    }

    #[test]
    fn invalid_posteriors_are_rejected() {
        assert!(
            VariationalPosterior::new(field(0.0), field(0.0), field(1.0), field(1.0)).is_err()
        );
        assert!(
            VariationalPosterior::new(field(0.0), field(1.0), field(-1.0), field(1.0)).is_err()
        );
        assert!(
            VariationalPosterior::new(field(0.0), field(1.0), field(1.0), field(0.0)).is_err()
        );
        assert!(VariationalPosterior::new(
            field(f64::NAN),
            field(1.0),
            field(1.0),
            field(1.0)
        )
        .is_err());
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let q = simple_q();
        let y = Array3::from_elem((1, 2, 2), 0.5);
        assert!(likelihood_term(&q, &y).is_err());
        assert!(kl_gaussian(&q, &y, 1e-4).is_err());
    }
}
