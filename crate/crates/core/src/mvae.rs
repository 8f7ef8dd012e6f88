//! Multimodal VAE with product-of-experts fusion.
//!
//! Every modality has a two-layer tanh MLP encoder emitting `(mean, log-var)`
//! of a diagonal Gaussian over the shared latent, and a two-layer tanh MLP
//! decoder emitting the reconstruction mean. Experts are fused by adding
//! precisions. The ELBO uses a unit-variance Gaussian likelihood per modality
//! and a KL term against the GMM component selected by the datum's sign.
//! Gradients are derived by hand; batches are columns of a matrix.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::gmm::GmmComponent;
use crate::stimuli::Modality;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

pub const LOGVAR_MIN: f64 = -13.8;
pub const LOGVAR_MAX: f64 = 13.8;
pub const VAR_MIN: f64 = 1e-6;
pub const VAR_MAX: f64 = 1e6;

pub const DEFAULT_LATENT_DIM: usize = 9;
pub const DEFAULT_HIDDEN_DIM: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct DiagGaussian {
    pub mean: DVector<f64>,
    pub var: DVector<f64>,
}

impl DiagGaussian {
    pub fn new(mean: DVector<f64>, var: DVector<f64>) -> Result<DiagGaussian> {
        if mean.len() != var.len() {
            return Err(Error::DimensionMismatch {
                context: "DiagGaussian",
                expected: mean.len(),
                got: var.len(),
            });
        }
        if mean.iter().chain(var.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("DiagGaussian"));
        }
        if var.iter().any(|v| *v <= 0.0) {
            return Err(Error::InvalidArgument("variances must be positive".into()));
        }
        Ok(DiagGaussian { mean, var })
    }

    pub fn standard(dim: usize) -> DiagGaussian {
        DiagGaussian {
            mean: DVector::zeros(dim),
            var: DVector::from_element(dim, 1.0),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Product of diagonal Gaussian experts: precisions add, means are
/// precision-weighted.
pub fn poe_fuse(experts: &[DiagGaussian]) -> Result<DiagGaussian> {
    let first = experts
        .first()
        .ok_or_else(|| Error::InvalidArgument("product of experts needs at least one expert".into()))?;
    let dim = first.dim();
    let mut prec = DVector::<f64>::zeros(dim);
    let mut weighted = DVector::<f64>::zeros(dim);
    for e in experts {
        if e.dim() != dim {
            return Err(Error::DimensionMismatch {
                context: "poe_fuse",
                expected: dim,
                got: e.dim(),
            });
        }
        for i in 0..dim {
            let p = 1.0 / e.var[i];
            prec[i] += p;
            weighted[i] += e.mean[i] * p;
        }
    }
    let var = prec.map(|p| 1.0 / p);
    let mean = weighted.component_mul(&var);
    Ok(DiagGaussian { mean, var })
}

/// Reparameterized draw `mean + sqrt(var) * eps`.
pub fn sample_latent<R: Rng + ?Sized>(g: &DiagGaussian, rng: &mut R) -> DVector<f64> {
    let eps = DVector::from_fn(g.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
    reparameterize(g, &eps)
}

pub fn reparameterize(g: &DiagGaussian, eps: &DVector<f64>) -> DVector<f64> {
    &g.mean + g.var.map(f64::sqrt).component_mul(eps)
}

/// Exact product of a diagonal Gaussian with a full-precision component,
/// returned as `(mean, precision)`.
pub fn fuse_with_component(q: &DiagGaussian, c: &GmmComponent) -> (DVector<f64>, DMatrix<f64>) {
    let mut prec = c.lambda().clone();
    let mut rhs = c.lambda() * c.mu();
    for i in 0..q.dim() {
        let p = 1.0 / q.var[i];
        prec[(i, i)] += p;
        rhs[i] += p * q.mean[i];
    }
    let chol = Cholesky::new(prec.clone()).expect("sum of SPD precisions is SPD");
    (chol.solve(&rhs), prec)
}

/// Draws `z` from the encoder posterior multiplied by the sign's component.
pub fn sample_latent_with_prior<R: Rng + ?Sized>(
    q: &DiagGaussian,
    c: &GmmComponent,
    rng: &mut R,
) -> DVector<f64> {
    let (mean, prec) = fuse_with_component(q, c);
    let l = Cholesky::new(prec).expect("fused precision is SPD").l();
    let eps = DVector::from_fn(q.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
    mean + l
        .tr_solve_lower_triangular(&eps)
        .expect("Cholesky factor is nonsingular")
}

/// Two-layer perceptron `W2 tanh(W1 x + b1) + b2`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub w1: DMatrix<f64>,
    pub b1: DVector<f64>,
    pub w2: DMatrix<f64>,
    pub b2: DVector<f64>,
}

struct MlpCache {
    h: DMatrix<f64>,
    y: DMatrix<f64>,
}

impl MlpParams {
    pub fn zeros(input: usize, hidden: usize, output: usize) -> MlpParams {
        MlpParams {
            w1: DMatrix::zeros(hidden, input),
            b1: DVector::zeros(hidden),
            w2: DMatrix::zeros(output, hidden),
            b2: DVector::zeros(output),
        }
    }

    /// Gaussian weights with standard deviation `scale`, zero biases.
    pub fn random<R: Rng + ?Sized>(input: usize, hidden: usize, output: usize, scale: f64, rng: &mut R) -> MlpParams {
        let mut p = MlpParams::zeros(input, hidden, output);
        for w in p.w1.iter_mut().chain(p.w2.iter_mut()) {
            *w = scale * rng.sample::<f64, _>(StandardNormal);
        }
        p
    }

    pub fn input_dim(&self) -> usize {
        self.w1.ncols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.w2.nrows()
    }

    fn check_shapes(&self) -> Result<()> {
        let ok = self.b1.len() == self.w1.nrows()
            && self.w2.ncols() == self.w1.nrows()
            && self.b2.len() == self.w2.nrows();
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument("inconsistent MLP shapes".into()))
        }
    }

    fn forward_batch(&self, x: &DMatrix<f64>) -> MlpCache {
        let mut h = &self.w1 * x;
        for mut col in h.column_iter_mut() {
            col += &self.b1;
            col.apply(|v| *v = v.tanh());
        }
        let mut y = &self.w2 * &h;
        for mut col in y.column_iter_mut() {
            col += &self.b2;
        }
        MlpCache { h, y }
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx` when asked.
    fn backward_batch(
        &self,
        x: &DMatrix<f64>,
        cache: &MlpCache,
        dy: &DMatrix<f64>,
        grad: &mut MlpParams,
        want_dx: bool,
    ) -> Option<DMatrix<f64>> {
        grad.w2 += dy * cache.h.transpose();
        grad.b2 += row_sums(dy);
        let mut dh = self.w2.transpose() * dy;
        dh.zip_apply(&cache.h, |g, h| *g *= 1.0 - h * h);
        grad.w1 += &dh * x.transpose();
        grad.b1 += row_sums(&dh);
        want_dx.then(|| self.w1.transpose() * dh)
    }

    pub fn forward(&self, x: &[f64]) -> Result<DVector<f64>> {
        self.check_shapes()?;
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "MLP input",
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        let y = self.forward_batch(&DMatrix::from_column_slice(x.len(), 1, x)).y;
        let out = DVector::from_column_slice(y.as_slice());
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("MLP output"));
        }
        Ok(out)
    }

    fn slices_mut(&mut self) -> [&mut [f64]; 4] {
        [
            self.w1.as_mut_slice(),
            self.b1.as_mut_slice(),
            self.w2.as_mut_slice(),
            self.b2.as_mut_slice(),
        ]
    }

    fn slices(&self) -> [&[f64]; 4] {
        [
            self.w1.as_slice(),
            self.b1.as_slice(),
            self.w2.as_slice(),
            self.b2.as_slice(),
        ]
    }
}

fn row_sums(m: &DMatrix<f64>) -> DVector<f64> {
    let mut s = DVector::zeros(m.nrows());
    for col in m.column_iter() {
        s += col;
    }
    s
}

/// Encoder for one modality: `(mean, var)` with log-variance clamped.
pub fn encode_modality(enc: &MlpParams, o_m: &[f64]) -> Result<DiagGaussian> {
    let y = enc.forward(o_m)?;
    let l = y.len() / 2;
    let mean = y.rows(0, l).into_owned();
    let var = y
        .rows(l, l)
        .map(|lv| lv.clamp(LOGVAR_MIN, LOGVAR_MAX).exp());
    DiagGaussian::new(mean, var)
}

/// Decoder forward pass.
pub fn decode_modality(dec: &MlpParams, z: &DVector<f64>) -> Result<DVector<f64>> {
    dec.forward(z.as_slice())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModalityNet {
    pub modality: Modality,
    pub encoder: MlpParams,
    pub decoder: MlpParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MvaeParams {
    pub latent_dim: usize,
    /// Adds a `N(0, I)` expert to every fusion.
    pub unit_prior_expert: bool,
    pub nets: Vec<ModalityNet>,
}

impl MvaeParams {
    pub fn new<R: Rng + ?Sized>(
        dims: &[(Modality, usize)],
        hidden: usize,
        latent_dim: usize,
        init_scale: f64,
        rng: &mut R,
    ) -> MvaeParams {
        let nets = dims
            .iter()
            .map(|&(modality, dim)| ModalityNet {
                modality,
                encoder: MlpParams::random(dim, hidden, 2 * latent_dim, init_scale, rng),
                decoder: MlpParams::random(latent_dim, hidden, dim, init_scale, rng),
            })
            .collect();
        MvaeParams {
            latent_dim,
            unit_prior_expert: false,
            nets,
        }
    }

    pub fn zeros_like(&self) -> MvaeParams {
        let nets = self
            .nets
            .iter()
            .map(|n| ModalityNet {
                modality: n.modality,
                encoder: MlpParams::zeros(n.encoder.input_dim(), n.encoder.hidden_dim(), n.encoder.output_dim()),
                decoder: MlpParams::zeros(n.decoder.input_dim(), n.decoder.hidden_dim(), n.decoder.output_dim()),
            })
            .collect();
        MvaeParams {
            latent_dim: self.latent_dim,
            unit_prior_expert: self.unit_prior_expert,
            nets,
        }
    }

    pub fn modalities(&self) -> Vec<Modality> {
        self.nets.iter().map(|n| n.modality).collect()
    }

    pub fn param_slices(&self) -> Vec<&[f64]> {
        self.nets
            .iter()
            .flat_map(|n| n.encoder.slices().into_iter().chain(n.decoder.slices()))
            .collect()
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.nets
            .iter_mut()
            .flat_map(|n| {
                let ModalityNet { encoder, decoder, .. } = n;
                encoder.slices_mut().into_iter().chain(decoder.slices_mut())
            })
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.param_slices().iter().map(|s| s.len()).sum()
    }

    pub fn flat(&self) -> Vec<f64> {
        self.param_slices().concat()
    }

    /// Fused posterior over the modality experts only.
    pub fn encode(&self, inputs: &[&[f64]]) -> Result<DiagGaussian> {
        if inputs.len() != self.nets.len() {
            return Err(Error::DimensionMismatch {
                context: "modality count",
                expected: self.nets.len(),
                got: inputs.len(),
            });
        }
        let mut experts = inputs
            .iter()
            .zip(&self.nets)
            .map(|(x, n)| encode_modality(&n.encoder, x))
            .collect::<Result<Vec<_>>>()?;
        if self.unit_prior_expert {
            experts.push(DiagGaussian::standard(self.latent_dim));
        }
        poe_fuse(&experts)
    }

    /// Batched fused posterior; `inputs[m]` is `dim_m x B`.
    pub fn encode_batch(&self, inputs: &[DMatrix<f64>]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let fwd = self.fuse_forward(inputs)?;
        Ok((fwd.mu, fwd.var))
    }

    fn fuse_forward(&self, inputs: &[DMatrix<f64>]) -> Result<FusedForward> {
        if inputs.len() != self.nets.len() {
            return Err(Error::DimensionMismatch {
                context: "modality count",
                expected: self.nets.len(),
                got: inputs.len(),
            });
        }
        let l = self.latent_dim;
        let b = inputs[0].ncols();
        let unit = if self.unit_prior_expert { 1.0 } else { 0.0 };
        let mut prec_sum = DMatrix::from_element(l, b, unit);
        let mut weighted = DMatrix::zeros(l, b);
        let mut experts = Vec::with_capacity(inputs.len());
        for (x, net) in inputs.iter().zip(&self.nets) {
            if x.nrows() != net.encoder.input_dim() || x.ncols() != b {
                return Err(Error::DimensionMismatch {
                    context: "encoder input",
                    expected: net.encoder.input_dim(),
                    got: x.nrows(),
                });
            }
            let cache = net.encoder.forward_batch(x);
            let mean = cache.y.rows(0, l).into_owned();
            let raw_lv = cache.y.rows(l, l).into_owned();
            let prec = raw_lv.map(|lv| (-lv.clamp(LOGVAR_MIN, LOGVAR_MAX)).exp());
            prec_sum += &prec;
            weighted += mean.component_mul(&prec);
            experts.push(ExpertForward {
                cache,
                mean,
                raw_lv,
                prec,
            });
        }
        let var = prec_sum.map(|p| 1.0 / p);
        let mu = weighted.component_mul(&var);
        if mu.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("fused posterior"));
        }
        Ok(FusedForward { experts, mu, var })
    }

    /// ELBO summed over the batch and its gradient for fixed noise `eps`
    /// (`latent_dim x B`). `priors[b]` is the component of datum `b`'s sign.
    pub fn elbo_with_noise(
        &self,
        inputs: &[DMatrix<f64>],
        priors: &[&GmmComponent],
        eps: &DMatrix<f64>,
    ) -> Result<(f64, MvaeParams)> {
        let l = self.latent_dim;
        let fwd = self.fuse_forward(inputs)?;
        let b = fwd.mu.ncols();
        if priors.len() != b || eps.ncols() != b || eps.nrows() != l {
            return Err(Error::DimensionMismatch {
                context: "ELBO batch",
                expected: b,
                got: priors.len(),
            });
        }
        for c in priors {
            if c.dim() != l {
                return Err(Error::DimensionMismatch {
                    context: "prior component",
                    expected: l,
                    got: c.dim(),
                });
            }
        }
        let sd = fwd.var.map(f64::sqrt);
        let z = &fwd.mu + sd.component_mul(eps);

        let mut grad = self.zeros_like();
        let mut elbo = 0.0;
        let mut dz = DMatrix::zeros(l, b);
        for ((x, net), g) in inputs.iter().zip(&self.nets).zip(grad.nets.iter_mut()) {
            let cache = net.decoder.forward_batch(&z);
            let resid = x - &cache.y;
            elbo += -0.5 * resid.norm_squared() - 0.5 * (x.nrows() * b) as f64 * LN_2PI;
            dz += net
                .decoder
                .backward_batch(&z, &cache, &resid, &mut g.decoder, true)
                .expect("dx requested");
        }

        // KL(q || N(mu_w, Lambda_w^{-1})) per column, and its gradient w.r.t. (mu, var).
        let mut g_mu = dz.clone();
        let mut g_var = dz.component_mul(eps).component_div(&sd) * 0.5;
        for (col, c) in priors.iter().enumerate() {
            let lam = c.lambda();
            let m = fwd.mu.column(col);
            let v = fwd.var.column(col);
            let diff = m - c.mu();
            let lam_diff = lam * &diff;
            let mut kl = diff.dot(&lam_diff) - l as f64 - c.log_det_precision();
            for i in 0..l {
                kl += lam[(i, i)] * v[i] - v[i].ln();
                g_var[(i, col)] -= 0.5 * (lam[(i, i)] - 1.0 / v[i]);
            }
            elbo -= 0.5 * kl;
            let mut gm = g_mu.column_mut(col);
            gm -= &lam_diff;
        }
        if !elbo.is_finite() {
            return Err(Error::NonFinite("ELBO"));
        }

        // mu = S / P, var = 1 / P with S = sum_m mean_m prec_m, P = sum_m prec_m.
        let g_s = fwd.var.component_mul(&g_mu);
        let mut g_p = -(fwd.var.component_mul(&fwd.var).component_mul(&g_var));
        g_p -= g_mu.component_mul(&fwd.mu).component_mul(&fwd.var);

        for ((x, net), (exp, g)) in inputs
            .iter()
            .zip(&self.nets)
            .zip(fwd.experts.iter().zip(grad.nets.iter_mut()))
        {
            let g_mean = g_s.component_mul(&exp.prec);
            let mut g_lv = g_s.component_mul(&exp.mean) + &g_p;
            g_lv.zip_apply(&exp.prec, |g, p| *g *= -p);
            g_lv.zip_apply(&exp.raw_lv, |g, lv| {
                if !(LOGVAR_MIN..=LOGVAR_MAX).contains(&lv) {
                    *g = 0.0;
                }
            });
            let mut dy = DMatrix::zeros(2 * l, b);
            dy.rows_mut(0, l).copy_from(&g_mean);
            dy.rows_mut(l, l).copy_from(&g_lv);
            net.encoder
                .backward_batch(x, &exp.cache, &dy, &mut g.encoder, false);
        }
        Ok((elbo, grad))
    }

    /// Single-datum ELBO with fresh reparameterization noise.
    pub fn elbo<R: Rng + ?Sized>(
        &self,
        inputs: &[&[f64]],
        prior: &GmmComponent,
        rng: &mut R,
    ) -> Result<(f64, MvaeParams)> {
        let mats: Vec<DMatrix<f64>> = inputs
            .iter()
            .map(|x| DMatrix::from_column_slice(x.len(), 1, x))
            .collect();
        let eps = DMatrix::from_fn(self.latent_dim, 1, |_, _| rng.sample::<f64, _>(StandardNormal));
        self.elbo_with_noise(&mats, &[prior], &eps)
    }
}

struct ExpertForward {
    cache: MlpCache,
    mean: DMatrix<f64>,
    raw_lv: DMatrix<f64>,
    prec: DMatrix<f64>,
}

struct FusedForward {
    experts: Vec<ExpertForward>,
    mu: DMatrix<f64>,
    var: DMatrix<f64>,
}

/// Closed-form `KL(N(mean, diag var) || N(mu, Lambda^{-1}))`.
pub fn kl_diag_to_component(q: &DiagGaussian, c: &GmmComponent) -> f64 {
    let lam = c.lambda();
    let diff = &q.mean - c.mu();
    let mut kl = diff.dot(&(lam * &diff)) - q.dim() as f64 - c.log_det_precision();
    for i in 0..q.dim() {
        kl += lam[(i, i)] * q.var[i] - q.var[i].ln();
    }
    0.5 * kl
}

/// Gradient ascent with heavy-ball momentum.
#[derive(Debug, Clone, PartialEq)]
pub struct Sgd {
    pub learning_rate: f64,
    pub momentum: f64,
    velocity: Option<MvaeParams>,
}

impl Sgd {
    pub fn new(learning_rate: f64, momentum: f64) -> Sgd {
        Sgd {
            learning_rate,
            momentum,
            velocity: None,
        }
    }

    pub fn ascend(&mut self, params: &mut MvaeParams, grad: &MvaeParams, scale: f64) {
        let (lr, mom) = (self.learning_rate, self.momentum);
        let vel = self.velocity.get_or_insert_with(|| params.zeros_like());
        for ((p, v), g) in params
            .param_slices_mut()
            .into_iter()
            .zip(vel.param_slices_mut())
            .zip(grad.param_slices())
        {
            for ((p, v), g) in p.iter_mut().zip(v.iter_mut()).zip(g) {
                *v = mom * *v + scale * g;
                *p += lr * *v;
            }
        }
    }
}

/// Per-modality observation matrices (`dim_m x D`) for one agent.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalityData {
    pub mats: Vec<DMatrix<f64>>,
}

impl ModalityData {
    pub fn len(&self) -> usize {
        self.mats.first().map_or(0, |m| m.ncols())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, idx: &[usize]) -> Vec<DMatrix<f64>> {
        self.mats.iter().map(|m| m.select_columns(idx)).collect()
    }
}

/// One gradient-ascent step on the batch mean ELBO; returns that mean.
pub fn train_step<R: Rng + ?Sized>(
    params: &mut MvaeParams,
    opt: &mut Sgd,
    batch: &[DMatrix<f64>],
    priors: &[&GmmComponent],
    rng: &mut R,
) -> Result<f64> {
    let b = priors.len();
    if b == 0 {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let eps = DMatrix::from_fn(params.latent_dim, b, |_, _| rng.sample::<f64, _>(StandardNormal));
    let (elbo, grad) = params.elbo_with_noise(batch, priors, &eps)?;
    opt.ascend(params, &grad, 1.0 / b as f64);
    Ok(elbo / b as f64)
}

/// Shuffled minibatch epochs over all data; returns the mean ELBO of the last epoch.
pub fn train_epochs<R: Rng + ?Sized>(
    params: &mut MvaeParams,
    opt: &mut Sgd,
    data: &ModalityData,
    priors: &[&GmmComponent],
    epochs: usize,
    batch_size: usize,
    rng: &mut R,
) -> Result<f64> {
    let n = data.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut last = f64::NAN;
    for _ in 0..epochs {
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), rng);
        let mut total = 0.0;
        for chunk in order.chunks(batch_size.max(1)) {
            let batch = data.select(chunk);
            let ps: Vec<&GmmComponent> = chunk.iter().map(|&i| priors[i]).collect();
            total += train_step(params, opt, &batch, &ps, rng)? * chunk.len() as f64;
        }
        last = total / n as f64;
    }
    Ok(last)
}
