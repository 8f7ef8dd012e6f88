//! Latent-space Gaussian mixture with a Normal-Wishart prior per component.
//!
//! Components are parameterized by mean and *precision*. Posterior updates are
//! the standard conjugate ones; precisions are drawn with the Bartlett
//! decomposition.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};

use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

pub const DEFAULT_K: usize = 9;

/// Normal-Wishart hyperparameters `(m0, kappa0, nu0, W0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NwHyper {
    pub m0: DVector<f64>,
    pub kappa0: f64,
    pub nu0: f64,
    pub w0: DMatrix<f64>,
    w0_inv: DMatrix<f64>,
}

impl NwHyper {
    pub fn new(m0: DVector<f64>, kappa0: f64, nu0: f64, w0: DMatrix<f64>) -> Result<NwHyper> {
        let dim = m0.len();
        if w0.nrows() != dim || w0.ncols() != dim {
            return Err(Error::DimensionMismatch {
                context: "Wishart scale",
                expected: dim,
                got: w0.nrows(),
            });
        }
        if !(kappa0 > 0.0) {
            return Err(Error::InvalidArgument("kappa0 must be positive".into()));
        }
        if !(nu0 > dim as f64 - 1.0) {
            return Err(Error::InvalidArgument(format!(
                "nu0 must exceed dim - 1 = {}",
                dim as f64 - 1.0
            )));
        }
        let w0_inv = spd_inverse(&w0, "Wishart scale")?;
        Ok(NwHyper {
            m0,
            kappa0,
            nu0,
            w0,
            w0_inv,
        })
    }

    /// `m0 = 0, W0 = I / nu0` so that `E[Lambda] = I`.
    pub fn weak(dim: usize, kappa0: f64, nu0: f64) -> Result<NwHyper> {
        NwHyper::new(
            DVector::zeros(dim),
            kappa0,
            nu0,
            DMatrix::identity(dim, dim) / nu0,
        )
    }

    /// `kappa0 = 0.1`, `nu0 = dim + 2`.
    pub fn default_for(dim: usize) -> NwHyper {
        NwHyper::weak(dim, 0.1, dim as f64 + 2.0).expect("default hyperparameters are valid")
    }

    pub fn dim(&self) -> usize {
        self.m0.len()
    }

    pub fn w0_inv(&self) -> &DMatrix<f64> {
        &self.w0_inv
    }
}

/// Conjugate posterior hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct NwPosterior {
    pub m_n: DVector<f64>,
    pub kappa_n: f64,
    pub nu_n: f64,
    pub w_n: DMatrix<f64>,
}

impl NwPosterior {
    /// `E[Lambda] = nu_n W_n`.
    pub fn mean_precision(&self) -> DMatrix<f64> {
        &self.w_n * self.nu_n
    }
}

pub fn posterior_hyper(zs: &[DVector<f64>], hyper: &NwHyper) -> Result<NwPosterior> {
    let dim = hyper.dim();
    let n = zs.len();
    if n == 0 {
        return Ok(NwPosterior {
            m_n: hyper.m0.clone(),
            kappa_n: hyper.kappa0,
            nu_n: hyper.nu0,
            w_n: hyper.w0.clone(),
        });
    }
    let mut mean = DVector::zeros(dim);
    for z in zs {
        if z.len() != dim {
            return Err(Error::DimensionMismatch {
                context: "latent vector",
                expected: dim,
                got: z.len(),
            });
        }
        mean += z;
    }
    let nf = n as f64;
    mean /= nf;
    let mut scatter = DMatrix::zeros(dim, dim);
    for z in zs {
        let c = z - &mean;
        scatter.ger(1.0, &c, &c, 1.0);
    }
    let kappa_n = hyper.kappa0 + nf;
    let m_n = (&hyper.m0 * hyper.kappa0 + &mean * nf) / kappa_n;
    let dm = &mean - &hyper.m0;
    let mut w_n_inv = hyper.w0_inv() + scatter;
    w_n_inv.ger(hyper.kappa0 * nf / kappa_n, &dm, &dm, 1.0);
    let w_n = spd_inverse(&symmetrize(w_n_inv), "posterior Wishart scale")?;
    Ok(NwPosterior {
        m_n,
        kappa_n,
        nu_n: hyper.nu0 + nf,
        w_n,
    })
}

/// Gaussian with mean and precision; the Cholesky factor of the precision is
/// cached.
#[derive(Debug, Clone)]
pub struct GmmComponent {
    mu: DVector<f64>,
    lambda: DMatrix<f64>,
    l: DMatrix<f64>,
    half_log_det: f64,
}

impl PartialEq for GmmComponent {
    fn eq(&self, other: &Self) -> bool {
        self.mu == other.mu && self.lambda == other.lambda
    }
}

impl GmmComponent {
    pub fn new(mu: DVector<f64>, lambda: DMatrix<f64>) -> Result<GmmComponent> {
        let dim = mu.len();
        if lambda.nrows() != dim || lambda.ncols() != dim {
            return Err(Error::DimensionMismatch {
                context: "component precision",
                expected: dim,
                got: lambda.nrows(),
            });
        }
        if mu.iter().chain(lambda.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("component parameters"));
        }
        let scale = lambda.amax().max(1.0);
        if (&lambda - lambda.transpose()).amax() > 1e-9 * scale {
            return Err(Error::NotPositiveDefinite("component precision is not symmetric"));
        }
        let chol = Cholesky::new(lambda.clone())
            .ok_or(Error::NotPositiveDefinite("component precision"))?;
        let l = chol.l();
        let half_log_det = l.diagonal().iter().map(|d| d.ln()).sum();
        Ok(GmmComponent {
            mu,
            lambda,
            l,
            half_log_det,
        })
    }

    pub fn mu(&self) -> &DVector<f64> {
        &self.mu
    }

    pub fn lambda(&self) -> &DMatrix<f64> {
        &self.lambda
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    /// Lower Cholesky factor `L` with `Lambda = L L^T`.
    pub fn chol_l(&self) -> &DMatrix<f64> {
        &self.l
    }

    /// `log |Lambda|`.
    pub fn log_det_precision(&self) -> f64 {
        2.0 * self.half_log_det
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        let inv_l = self
            .l
            .clone()
            .solve_lower_triangular(&DMatrix::identity(self.dim(), self.dim()))
            .expect("Cholesky factor is nonsingular");
        symmetrize(inv_l.tr_mul(&inv_l))
    }

    /// Squared Mahalanobis distance `(z - mu)^T Lambda (z - mu)`.
    pub fn mahalanobis2(&self, z: &DVector<f64>) -> f64 {
        self.l.tr_mul(&(z - &self.mu)).norm_squared()
    }
}

/// `log N(z | mu, Lambda^{-1})`.
pub fn component_loglik(z: &DVector<f64>, c: &GmmComponent) -> Result<f64> {
    if z.len() != c.dim() {
        return Err(Error::DimensionMismatch {
            context: "component_loglik",
            expected: c.dim(),
            got: z.len(),
        });
    }
    let q = c.mahalanobis2(z);
    Ok(-0.5 * c.dim() as f64 * LN_2PI + c.half_log_det - 0.5 * q)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmParams {
    pub components: Vec<GmmComponent>,
    pub pi: Vec<f64>,
}

impl GmmParams {
    pub fn new(components: Vec<GmmComponent>, pi: Vec<f64>) -> Result<GmmParams> {
        if components.is_empty() || components.len() != pi.len() {
            return Err(Error::InvalidArgument(
                "mixture needs one weight per component".into(),
            ));
        }
        if pi.iter().any(|p| !(*p >= 0.0)) || (pi.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument("mixing weights must form a distribution".into()));
        }
        Ok(GmmParams { components, pi })
    }

    pub fn uniform(components: Vec<GmmComponent>) -> Result<GmmParams> {
        let k = components.len();
        GmmParams::new(components, vec![1.0 / k as f64; k])
    }

    pub fn k(&self) -> usize {
        self.components.len()
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }
}

/// Normalizes log-weights in place with log-sum-exp.
pub fn normalize_log_weights(logw: &[f64]) -> Result<Vec<f64>> {
    let max = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || max.is_nan() {
        return Err(Error::InvalidArgument(
            "all sign log-weights are -inf".into(),
        ));
    }
    let w: Vec<f64> = logw.iter().map(|l| (l - max).exp()).collect();
    let s: f64 = w.iter().sum();
    Ok(w.into_iter().map(|x| x / s).collect())
}

/// `p(w = k | z) ∝ pi_k N(z | mu_k, Lambda_k^{-1})`.
pub fn sign_posterior(z: &DVector<f64>, gmm: &GmmParams) -> Result<Vec<f64>> {
    let logw = gmm
        .components
        .iter()
        .zip(&gmm.pi)
        .map(|(c, p)| Ok(p.ln() + component_loglik(z, c)?))
        .collect::<Result<Vec<f64>>>()?;
    normalize_log_weights(&logw)
}

/// Draws an index from a normalized categorical distribution.
pub fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // Rounding left `acc` a hair under 1; fall back to the last nonzero entry.
    probs.iter().rposition(|p| *p > 0.0).unwrap_or(probs.len() - 1)
}

/// `Lambda ~ Wishart(nu, W)` via the Bartlett decomposition.
pub fn sample_wishart<R: Rng + ?Sized>(nu: f64, w: &DMatrix<f64>, rng: &mut R) -> Result<DMatrix<f64>> {
    let dim = w.nrows();
    if !(nu > dim as f64 - 1.0) {
        return Err(Error::InvalidArgument(format!("Wishart dof {nu} too small for dim {dim}")));
    }
    let lw = Cholesky::new(w.clone())
        .ok_or(Error::NotPositiveDefinite("Wishart scale"))?
        .l();
    let mut a = DMatrix::zeros(dim, dim);
    for i in 0..dim {
        let chi = ChiSquared::new(nu - i as f64)
            .map_err(|e| Error::InvalidArgument(format!("chi-squared: {e}")))?;
        a[(i, i)] = chi.sample(rng).sqrt();
        for j in 0..i {
            a[(i, j)] = rng.sample(StandardNormal);
        }
    }
    let la = lw * a;
    Ok(symmetrize(&la * la.transpose()))
}

/// `mu ~ N(mean, (scale * Lambda)^{-1})` given the Cholesky factor of `Lambda`.
fn sample_mean<R: Rng + ?Sized>(
    mean: &DVector<f64>,
    lambda_chol: &Cholesky<f64, Dyn>,
    scale: f64,
    rng: &mut R,
) -> DVector<f64> {
    let eps = DVector::from_fn(mean.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
    // Lambda = L L^T  =>  L^{-T} eps has covariance Lambda^{-1}.
    let x = lambda_chol
        .l()
        .tr_solve_lower_triangular(&eps)
        .expect("Cholesky factor is nonsingular");
    mean + x / scale.sqrt()
}

pub fn sample_from_posterior<R: Rng + ?Sized>(post: &NwPosterior, rng: &mut R) -> Result<GmmComponent> {
    let lambda = sample_wishart(post.nu_n, &post.w_n, rng)?;
    let chol = Cholesky::new(lambda.clone()).ok_or(Error::NotPositiveDefinite("sampled precision"))?;
    let mu = sample_mean(&post.m_n, &chol, post.kappa_n, rng);
    GmmComponent::new(mu, lambda)
}

/// One Gibbs draw of `(mu, Lambda)` given the latents assigned to a component.
pub fn sample_component_posterior<R: Rng + ?Sized>(
    zs: &[DVector<f64>],
    hyper: &NwHyper,
    rng: &mut R,
) -> Result<GmmComponent> {
    let post = posterior_hyper(zs, hyper)?;
    sample_from_posterior(&post, rng)
}

/// Every component drawn from the prior, uniform weights.
pub fn sample_prior_gmm<R: Rng + ?Sized>(k: usize, hyper: &NwHyper, rng: &mut R) -> Result<GmmParams> {
    let comps = (0..k)
        .map(|_| sample_component_posterior(&[], hyper, rng))
        .collect::<Result<Vec<_>>>()?;
    GmmParams::uniform(comps)
}

/// Resamples each component from its posterior given the latents carrying its
/// sign. Components with no latents are drawn from the prior. Weights are kept.
pub fn update_agent_gmm<R: Rng + ?Sized>(
    latents: &[DVector<f64>],
    signs: &[usize],
    pi: &[f64],
    hyper: &NwHyper,
    rng: &mut R,
) -> Result<GmmParams> {
    if latents.len() != signs.len() {
        return Err(Error::DimensionMismatch {
            context: "latents vs signs",
            expected: latents.len(),
            got: signs.len(),
        });
    }
    let k = pi.len();
    let mut groups: Vec<Vec<DVector<f64>>> = vec![Vec::new(); k];
    for (z, &s) in latents.iter().zip(signs) {
        if s >= k {
            return Err(Error::InvalidArgument(format!("sign {s} out of range for K={k}")));
        }
        groups[s].push(z.clone());
    }
    let comps = groups
        .iter()
        .map(|zs| sample_component_posterior(zs, hyper, rng))
        .collect::<Result<Vec<_>>>()?;
    GmmParams::new(comps, pi.to_vec())
}

pub fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

pub fn spd_inverse(m: &DMatrix<f64>, what: &'static str) -> Result<DMatrix<f64>> {
    Cholesky::new(m.clone())
        .map(|c| symmetrize(c.inverse()))
        .ok_or(Error::NotPositiveDefinite(what))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use std::f64::consts::PI;
    use rand_chacha::ChaCha8Rng;

    fn comp(mu: &[f64], lambda: &[f64]) -> GmmComponent {
        let d = mu.len();
        GmmComponent::new(
            DVector::from_row_slice(mu),
            DMatrix::from_row_slice(d, d, lambda),
        )
        .unwrap()
    }

    #[test]
    fn loglik_at_mean_identity_9d() {
        let c = GmmComponent::new(DVector::zeros(9), DMatrix::identity(9, 9)).unwrap();
        let l = component_loglik(&DVector::zeros(9), &c).unwrap();
        assert!((l - (-4.5 * (2.0 * PI).ln())).abs() < 1e-12);
        assert!((l + 8.270_446_8).abs() < 1e-6);
    }

    #[test]
    fn loglik_scalar_matches_formula() {
        let c = comp(&[0.0], &[4.0]);
        let l = component_loglik(&DVector::from_element(1, 1.0), &c).unwrap();
        let expected = 0.5 * (4f64.ln() - (2.0 * PI).ln() - 4.0);
        assert!((l - expected).abs() < 1e-12);
        // Density with sd 1/2 evaluated directly.
        let sd: f64 = 0.5;
        let direct = (-(1.0f64).powi(2) / (2.0 * sd * sd)).exp() / (sd * (2.0 * PI).sqrt());
        assert!((l - direct.ln()).abs() < 1e-12);
    }

    #[test]
    fn loglik_peaks_at_mean() {
        let c = comp(&[1.0, -2.0], &[2.0, 0.3, 0.3, 1.0]);
        let at = component_loglik(c.mu(), &c).unwrap();
        for dz in [[0.1, 0.0], [0.0, -0.1], [0.05, 0.05]] {
            let z = c.mu() + DVector::from_row_slice(&dz);
            assert!(component_loglik(&z, &c).unwrap() < at);
        }
    }

    #[test]
    fn non_pd_precision_rejected() {
        assert!(GmmComponent::new(DVector::zeros(2), DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0])).is_err());
        assert!(GmmComponent::new(DVector::zeros(2), DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0])).is_err());
    }

    #[test]
    fn identical_components_give_uniform_posterior() {
        let c = comp(&[0.3, 0.1], &[1.0, 0.0, 0.0, 1.0]);
        let gmm = GmmParams::uniform(vec![c.clone(); 5]).unwrap();
        let p = sign_posterior(&DVector::from_row_slice(&[2.0, -1.0]), &gmm).unwrap();
        for x in p {
            assert!((x - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn separated_components_are_decisive() {
        let gmm = GmmParams::uniform(vec![comp(&[0.0], &[1.0]), comp(&[10.0], &[1.0])]).unwrap();
        let p = sign_posterior(&DVector::from_element(1, 0.0), &gmm).unwrap();
        assert!(p[0] > 0.99);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn normalize_is_shift_invariant() {
        let l = [-3.0, 0.5, -700.0, 2.0];
        let shifted: Vec<f64> = l.iter().map(|x| x + 1234.5).collect();
        let a = normalize_log_weights(&l).unwrap();
        let b = normalize_log_weights(&shifted).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!(normalize_log_weights(&[f64::NEG_INFINITY; 3]).is_err());
    }

    #[test]
    fn empty_data_posterior_is_prior() {
        let h = NwHyper::default_for(3);
        let p = posterior_hyper(&[], &h).unwrap();
        assert_eq!(p.m_n, h.m0);
        assert_eq!(p.kappa_n, h.kappa0);
        assert_eq!(p.nu_n, h.nu0);
        assert_eq!(p.w_n, h.w0);
    }

    #[test]
    fn strong_prior_dominates_mean() {
        let h = NwHyper::weak(2, 1e9, 4.0).unwrap();
        let zs = vec![DVector::from_row_slice(&[5.0, 5.0]); 20];
        let p = posterior_hyper(&zs, &h).unwrap();
        assert!(p.m_n.norm() < 1e-6);
    }

    #[test]
    fn sampled_precisions_are_spd() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let h = NwHyper::default_for(9);
        for _ in 0..50 {
            let c = sample_component_posterior(&[], &h, &mut rng).unwrap();
            assert_eq!(c.lambda(), &c.lambda().transpose());
            assert!(Cholesky::new(c.lambda().clone()).is_some());
        }
    }

    #[test]
    fn update_is_deterministic_and_checks_signs() {
        let h = NwHyper::default_for(2);
        let zs: Vec<DVector<f64>> = (0..10).map(|i| DVector::from_row_slice(&[i as f64, 1.0])).collect();
        let signs: Vec<usize> = (0..10).map(|i| i % 3).collect();
        let pi = vec![1.0 / 3.0; 3];
        let a = update_agent_gmm(&zs, &signs, &pi, &h, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let b = update_agent_gmm(&zs, &signs, &pi, &h, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(a, b);
        let mut bad = signs.clone();
        bad[0] = 3;
        assert!(update_agent_gmm(&zs, &bad, &pi, &h, &mut ChaCha8Rng::seed_from_u64(4)).is_err());
    }

    #[test]
    fn separated_clusters_order_means() {
        let h = NwHyper::default_for(2);
        let mut zs = Vec::new();
        let mut signs = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for i in 0..40 {
            let s = i % 2;
            let c = if s == 0 { -10.0 } else { 10.0 };
            zs.push(DVector::from_row_slice(&[
                c + rng.sample::<f64, _>(StandardNormal),
                rng.sample::<f64, _>(StandardNormal),
            ]));
            signs.push(s);
        }
        let pi = vec![0.5, 0.5];
        let mut ordered = 0;
        for seed in 0..200 {
            let g = update_agent_gmm(&zs, &signs, &pi, &h, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            if g.components[0].mu()[0] < g.components[1].mu()[0] {
                ordered += 1;
            }
        }
        assert!(ordered as f64 / 200.0 > 0.99);
    }

    #[test]
    fn categorical_sampler_respects_zero_mass() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..1000 {
            let i = sample_categorical(&[0.0, 1.0, 0.0], &mut rng);
            assert_eq!(i, 1);
        }
    }
}
