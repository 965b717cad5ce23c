//! Diagonal-Gaussian prior and recognition networks for the local latent
//! variables (translation, summarization) and the global one (cross-lingual
//! summarization), with reparameterized sampling and closed-form KL.

use alloc::format;
use alloc::vec;


use crate::backbone::Fwd;
use crate::error::VhmError;
use crate::params::{ParamGroup, ParamStore};
use crate::rng::SeededRng;
use crate::tensor::{Graph, TensorId};
use crate::Result;

/// Variance floor applied after softplus; keeps KL finite if a scale head
/// drifts strongly negative.
pub const SIGMA_FLOOR: f64 = 1e-6;

/// `N(mu, diag(sigma^2))` as graph tensors, each `[latent_dim]`.
#[derive(Debug, Clone, Copy)]
pub struct DiagonalGaussian {
    pub mu: TensorId,
    pub sigma: TensorId,
    pub dim: usize,
}

impl DiagonalGaussian {
    pub fn mu_values<'g>(&self, g: &'g Graph) -> &'g [f64] {
        g.data(self.mu)
    }

    pub fn sigma_values<'g>(&self, g: &'g Graph) -> &'g [f64] {
        g.data(self.sigma)
    }
}

/// Which network produced a latent draw. Recorded so inference can be
/// audited for prior-path purity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LatentSource {
    PriorPath,
    PosteriorPath,
}

#[derive(Debug, Clone, Copy)]
pub struct LatentSample {
    pub z: TensorId,
    pub source: LatentSource,
}

/// Two-layer perceptron with a tanh hidden layer and two linear output
/// heads: a mean head and a pre-softplus scale head.
#[derive(Debug, Clone)]
pub struct LatentModule {
    trunk: crate::backbone::Linear,
    mu_head: crate::backbone::Linear,
    sigma_head: crate::backbone::Linear,
    pub d_in: usize,
    pub latent_dim: usize,
    pub group: ParamGroup,
}

impl LatentModule {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut SeededRng,
        name: &str,
        d_in: usize,
        d_hidden: usize,
        latent_dim: usize,
        group: ParamGroup,
    ) -> Result<Self> {
        Ok(LatentModule {
            trunk: crate::backbone::Linear::new(store, rng, &format!("{name}.trunk"), d_in, d_hidden, group)?,
            mu_head: crate::backbone::Linear::new(store, rng, &format!("{name}.mu"), d_hidden, latent_dim, group)?,
            sigma_head: crate::backbone::Linear::new(store, rng, &format!("{name}.sigma"), d_hidden, latent_dim, group)?,
            d_in,
            latent_dim,
            group,
        })
    }

    /// Map a conditioning vector `[d_in]` to a diagonal Gaussian. The scale
    /// comes from a softplus-activated head, floored at [`SIGMA_FLOOR`].
    pub fn gaussian(&self, fwd: &mut Fwd, input: TensorId) -> Result<DiagonalGaussian> {
        let got = fwd.g.data(input).len();
        if got != self.d_in {
            return Err(VhmError::shape("latent conditioning", &[got], &[self.d_in]));
        }
        if fwd.g.data(input).iter().any(|v| !v.is_finite()) {
            return Err(VhmError::Numerics("non-finite latent conditioning input".into()));
        }
        let x = fwd.g.reshape(input, vec![1, self.d_in])?;
        let h = self.trunk.forward(fwd.g, fwd.p, x)?;
        let h = fwd.g.tanh(h);
        let mu = self.mu_head.forward(fwd.g, fwd.p, h)?;
        let mu = fwd.g.reshape(mu, vec![self.latent_dim])?;
        let pre = self.sigma_head.forward(fwd.g, fwd.p, h)?;
        let pre = fwd.g.reshape(pre, vec![self.latent_dim])?;
        let sp = fwd.g.softplus(pre);
        let sigma = fwd.g.clamp_min(sp, SIGMA_FLOOR);
        Ok(DiagonalGaussian { mu, sigma, dim: self.latent_dim })
    }
}

/// Reparameterized draw `z = mu + sigma * eps` with caller-supplied noise.
/// Gradients flow into `mu` and `sigma`; the noise is a constant.
pub fn sample(g: &mut Graph, gaussian: &DiagonalGaussian, eps: &[f64], source: LatentSource) -> Result<LatentSample> {
    if eps.len() != gaussian.dim {
        return Err(VhmError::shape("sample", &[eps.len()], &[gaussian.dim]));
    }
    let e = g.leaf(eps.to_vec(), vec![gaussian.dim], false)?;
    let scaled = g.mul(gaussian.sigma, e)?;
    let z = g.add(gaussian.mu, scaled)?;
    Ok(LatentSample { z, source })
}

/// Closed-form KL between diagonal Gaussians, posterior first:
/// `KL(q || p) = sum_i [ ln(p.sigma_i / q.sigma_i)
///   + (q.sigma_i^2 + (q.mu_i - p.mu_i)^2) / (2 p.sigma_i^2) - 1/2 ]`.
pub fn kl_divergence(g: &mut Graph, q: &DiagonalGaussian, p: &DiagonalGaussian) -> Result<TensorId> {
    if q.dim != p.dim {
        return Err(VhmError::shape("kl_divergence", &[q.dim], &[p.dim]));
    }
    let log_p = g.log(p.sigma);
    let log_q = g.log(q.sigma);
    let log_ratio = g.sub(log_p, log_q)?;
    let q_var = g.mul(q.sigma, q.sigma)?;
    let diff = g.sub(q.mu, p.mu)?;
    let diff_sq = g.mul(diff, diff)?;
    let num = g.add(q_var, diff_sq)?;
    let p_var = g.mul(p.sigma, p.sigma)?;
    let den = g.scale(p_var, 2.0);
    let ratio = g.div(num, den)?;
    let terms = g.add(log_ratio, ratio)?;
    let terms = g.add_const(terms, -0.5);
    Ok(g.sum_all(terms))
}

/// Plain-value counterpart of [`kl_divergence`] for frozen Gaussians.
pub fn kl_divergence_values(q_mu: &[f64], q_sigma: &[f64], p_mu: &[f64], p_sigma: &[f64]) -> f64 {
    let mut total = 0.0;
    for i in 0..q_mu.len() {
        let lr = crate::math::ln(p_sigma[i]) - crate::math::ln(q_sigma[i]);
        let d = q_mu[i] - p_mu[i];
        total += lr + (q_sigma[i] * q_sigma[i] + d * d) / (2.0 * p_sigma[i] * p_sigma[i]) - 0.5;
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::Binding;
    use crate::rng::Stream;

    fn gaussian_leaves(g: &mut Graph, mu: &[f64], sigma: &[f64], requires_grad: bool) -> DiagonalGaussian {
        let dim = mu.len();
        let mu = g.leaf(mu.to_vec(), vec![dim], requires_grad).unwrap();
        let sigma = g.leaf(sigma.to_vec(), vec![dim], requires_grad).unwrap();
        DiagonalGaussian { mu, sigma, dim }
    }

    fn eval_binding(g: &mut Graph) -> Binding {
        ParamStore::new().bind(g, false)
    }

    #[test]
    fn kl_of_identical_gaussians_is_exactly_zero() {
        let mut g = Graph::new();
        let q = gaussian_leaves(&mut g, &[0.3, -1.2, 4.0], &[0.7, 1.3, 0.02], false);
        let p = gaussian_leaves(&mut g, &[0.3, -1.2, 4.0], &[0.7, 1.3, 0.02], false);
        let kl = kl_divergence(&mut g, &q, &p).unwrap();
        assert_eq!(g.scalar_value(kl), 0.0);
    }

    #[test]
    fn kl_closed_forms() {
        // Unit variances, means 1 and 0: KL = (mu difference)^2 / 2 = 0.5.
        let mut g = Graph::new();
        let q = gaussian_leaves(&mut g, &[1.0], &[1.0], false);
        let p = gaussian_leaves(&mut g, &[0.0], &[1.0], false);
        let kl = kl_divergence(&mut g, &q, &p).unwrap();
        assert!((g.scalar_value(kl) - 0.5).abs() < 1e-15);

        // q = N(0, 2^2), p = N(0, 1): ln(1/2) + 4/2 - 1/2.
        let q = gaussian_leaves(&mut g, &[0.0], &[2.0], false);
        let p = gaussian_leaves(&mut g, &[0.0], &[1.0], false);
        let kl = kl_divergence(&mut g, &q, &p).unwrap();
        let expected = (0.5f64).ln() + 2.0 - 0.5;
        assert!((g.scalar_value(kl) - expected).abs() < 1e-12);
    }

    #[test]
    fn kl_nonnegative_on_random_pairs() {
        let mut rng = SeededRng::new(17, Stream::Eval);
        for _ in 0..1000 {
            let dim = 1 + rng.below(4);
            let mu_q: Vec<f64> = (0..dim).map(|_| rng.uniform_in(-3.0, 3.0)).collect();
            let mu_p: Vec<f64> = (0..dim).map(|_| rng.uniform_in(-3.0, 3.0)).collect();
            let sg_q: Vec<f64> = (0..dim).map(|_| rng.uniform_in(0.05, 4.0)).collect();
            let sg_p: Vec<f64> = (0..dim).map(|_| rng.uniform_in(0.05, 4.0)).collect();
            let mut g = Graph::new();
            let q = gaussian_leaves(&mut g, &mu_q, &sg_q, false);
            let p = gaussian_leaves(&mut g, &mu_p, &sg_p, false);
            let kl = kl_divergence(&mut g, &q, &p).unwrap();
            assert!(g.scalar_value(kl) >= 0.0, "negative KL for {mu_q:?} {sg_q:?} {mu_p:?} {sg_p:?}");
        }
    }

    #[test]
    fn sample_with_zero_noise_returns_mu_bit_exactly() {
        let mut g = Graph::new();
        let q = gaussian_leaves(&mut g, &[0.25, -7.5], &[3.0, 0.4], false);
        let s = sample(&mut g, &q, &[0.0, 0.0], LatentSource::PriorPath).unwrap();
        assert_eq!(g.data(s.z), g.data(q.mu));

        let s1 = sample(&mut g, &q, &[1.0, 1.0], LatentSource::PriorPath).unwrap();
        assert_eq!(g.data(s1.z), &[3.25, -7.1]);

        assert!(sample(&mut g, &q, &[0.0], LatentSource::PriorPath).is_err());
    }

    #[test]
    fn sample_mean_matches_mu_monte_carlo() {
        let mu = [0.8, -0.3];
        let sigma = [1.7, 0.2];
        let mut rng = SeededRng::new(23, Stream::Eval);
        let n = 10_000;
        let mut sums = [0.0f64; 2];
        for _ in 0..n {
            let eps: Vec<f64> = rng.normal_vec(2);
            let mut g = Graph::new();
            let q = gaussian_leaves(&mut g, &mu, &sigma, false);
            let s = sample(&mut g, &q, &eps, LatentSource::PosteriorPath).unwrap();
            for (acc, v) in sums.iter_mut().zip(g.data(s.z)) {
                *acc += v;
            }
        }
        for i in 0..2 {
            let mean = sums[i] / n as f64;
            let bound = 3.0 * sigma[i] / (n as f64).sqrt();
            assert!((mean - mu[i]).abs() < bound, "dim {i}: {mean} vs {} (3 sigma {bound})", mu[i]);
        }
    }

    #[test]
    fn zero_weight_module_gives_zero_mean_ln2_sigma() {
        let mut store = ParamStore::new();
        let mut rng = SeededRng::new(0, Stream::Init);
        let module = LatentModule::new(&mut store, &mut rng, "latent.prior_test", 6, 8, 4, ParamGroup::Generative).unwrap();
        for p in store.iter_mut() {
            for v in p.data.iter_mut() {
                *v = 0.0;
            }
        }
        let mut g = Graph::new();
        let binding = store.bind(&mut g, false);
        let mut fwd = Fwd::eval(&mut g, &binding);
        let input = fwd.g.leaf(alloc::vec![0.5; 6], alloc::vec![6], false).unwrap();
        let gauss = module.gaussian(&mut fwd, input).unwrap();
        let ln2 = core::f64::consts::LN_2;
        assert!(g.data(gauss.mu).iter().all(|&v| v == 0.0));
        assert!(g.data(gauss.sigma).iter().all(|&v| (v - ln2).abs() < 1e-15));
    }

    #[test]
    fn module_is_deterministic_and_input_sensitive() {
        let mut store = ParamStore::new();
        let mut rng = SeededRng::new(5, Stream::Init);
        let module = LatentModule::new(&mut store, &mut rng, "latent.posterior_test", 4, 8, 3, ParamGroup::Recognition).unwrap();
        let run = |vals: &[f64]| {
            let mut g = Graph::new();
            let binding = store.bind(&mut g, false);
            let mut fwd = Fwd::eval(&mut g, &binding);
            let input = fwd.g.leaf(vals.to_vec(), alloc::vec![4], false).unwrap();
            let gauss = module.gaussian(&mut fwd, input).unwrap();
            (g.data(gauss.mu).to_vec(), g.data(gauss.sigma).to_vec())
        };
        let a = run(&[0.1, 0.2, 0.3, 0.4]);
        let b = run(&[0.1, 0.2, 0.3, 0.4]);
        assert_eq!(a, b);
        let c = run(&[0.1, 0.2, 0.3, 0.9]);
        assert_ne!(a, c);
        assert!(a.1.iter().all(|&s| s >= SIGMA_FLOOR));
    }

    #[test]
    fn module_rejects_bad_input() {
        let mut store = ParamStore::new();
        let mut rng = SeededRng::new(5, Stream::Init);
        let module = LatentModule::new(&mut store, &mut rng, "latent.prior_bad", 4, 8, 3, ParamGroup::Generative).unwrap();
        let mut g = Graph::new();
        let binding = store.bind(&mut g, false);
        let mut fwd = Fwd::eval(&mut g, &binding);
        let wrong = fwd.g.leaf(alloc::vec![0.0; 3], alloc::vec![3], false).unwrap();
        assert!(module.gaussian(&mut fwd, wrong).is_err());
        let nan = fwd.g.leaf(alloc::vec![f64::NAN; 4], alloc::vec![4], false).unwrap();
        assert!(matches!(module.gaussian(&mut fwd, nan), Err(VhmError::Numerics(_))));
    }

    #[test]
    fn paper_scale_latent_width_is_supported() {
        let mut store = ParamStore::new();
        let mut rng = SeededRng::new(5, Stream::Init);
        let module = LatentModule::new(&mut store, &mut rng, "latent.prior_wide", 32, 32, 128, ParamGroup::Generative).unwrap();
        let mut g = Graph::new();
        let binding = store.bind(&mut g, false);
        let mut fwd = Fwd::eval(&mut g, &binding);
        let input = fwd.g.leaf(alloc::vec![0.1; 32], alloc::vec![32], false).unwrap();
        let gauss = module.gaussian(&mut fwd, input).unwrap();
        assert_eq!(g.data(gauss.mu).len(), 128);
        assert_eq!(g.data(gauss.sigma).len(), 128);
    }

    #[test]
    fn kl_value_helper_matches_graph() {
        let mut g = Graph::new();
        let q = gaussian_leaves(&mut g, &[0.4, 1.0], &[0.9, 2.0], false);
        let p = gaussian_leaves(&mut g, &[-0.2, 0.5], &[1.1, 0.7], false);
        let kl = kl_divergence(&mut g, &q, &p).unwrap();
        let v = kl_divergence_values(&[0.4, 1.0], &[0.9, 2.0], &[-0.2, 0.5], &[1.1, 0.7]);
        assert!((g.scalar_value(kl) - v).abs() < 1e-12);
    }
}
