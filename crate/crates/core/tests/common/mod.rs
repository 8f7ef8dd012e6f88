//! Helpers shared by integration test targets.
#![allow(dead_code)]

use coaffect::gmm::{GmmComponent, GmmParams};
use coaffect::mhng::AgentState;
use coaffect::mvae::{ModalityData, MvaeParams, Sgd};
use coaffect::stimuli::Modality;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn random_component(dim: usize, rng: &mut ChaCha8Rng) -> GmmComponent {
    let a = DMatrix::from_fn(dim, dim, |_, _| 0.5 * rng.sample::<f64, _>(StandardNormal));
    let lambda = &a * a.transpose() + DMatrix::identity(dim, dim) * 0.5;
    let lambda = (&lambda + lambda.transpose()) * 0.5;
    let mu = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
    GmmComponent::new(mu, lambda).unwrap()
}

/// Worst relative error over all parameters, `|a - n| / max(|a|, |n|, 1e-4)`.
pub fn worst_relative_error(seed: u64, unit_prior_expert: bool) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = [(Modality::Vision, 3), (Modality::Audio, 3), (Modality::Interoception, 3)];
    let mut params = MvaeParams::new(&dims, 3, 2, 0.7, &mut rng);
    params.unit_prior_expert = unit_prior_expert;
    let batch = 3;
    let inputs: Vec<DMatrix<f64>> = dims
        .iter()
        .map(|(_, d)| DMatrix::from_fn(*d, batch, |_, _| rng.sample::<f64, _>(StandardNormal)))
        .collect();
    let comps: Vec<GmmComponent> = (0..batch).map(|_| random_component(2, &mut rng)).collect();
    let priors: Vec<&GmmComponent> = comps.iter().collect();
    let eps = DMatrix::from_fn(2, batch, |_, _| rng.sample::<f64, _>(StandardNormal));

    let (_, grad) = params.elbo_with_noise(&inputs, &priors, &eps).unwrap();
    let analytic = grad.flat();

    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let n = params.num_params();
    for k in 0..n {
        let eval = |delta: f64| {
            let mut p = params.clone();
            let mut seen = 0;
            for s in p.param_slices_mut() {
                if k < seen + s.len() {
                    s[k - seen] += delta;
                    break;
                }
                seen += s.len();
            }
            p.elbo_with_noise(&inputs, &priors, &eps).unwrap().0
        };
        let numeric = (eval(h) - eval(-h)) / (2.0 * h);
        let a = analytic[k];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-4);
        worst = worst.max(rel);
    }
    worst
}

/// Agent with the given latents, GMM and signs; its network and data are
/// placeholders that only the learning step would touch.
pub fn frozen_agent(seed: u64, latents: Vec<DVector<f64>>, gmm: GmmParams, signs: Vec<usize>) -> AgentState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = latents[0].len();
    let data = ModalityData {
        mats: vec![DMatrix::from_fn(2, latents.len(), |_, _| rng.random::<f64>())],
    };
    AgentState {
        mvae: MvaeParams::new(&[(Modality::Vision, 2)], 3, dim, 0.1, &mut rng),
        gmm,
        latents,
        signs,
        data,
        opt: Sgd::new(1e-3, 0.9),
        rng,
    }
}

pub fn component(mu: &[f64], lambda: &[f64]) -> GmmComponent {
    let d = mu.len();
    GmmComponent::new(DVector::from_row_slice(mu), DMatrix::from_row_slice(d, d, lambda)).unwrap()
}
