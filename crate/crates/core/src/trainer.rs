//! Bound-minimisation training.
//!
//! The trainer descends the full certificate (empirical-risk term plus gap
//! term) with the COCOB-Backprop coin-betting optimizer, so the quantity
//! being optimised is itself a valid generalisation guarantee once the
//! confidence budget is accounted for. Posterior parameters, the
//! interpolation measure, and (optionally) the posterior scale are learned
//! jointly; data-dependent priors are fit by plain empirical risk
//! minimisation on a held-out prior split.
//!
//! The optimizer is parameter-free: each coordinate bets accumulated
//! "wealth" against the observed gradients, which removes the learning rate
//! entirely. Its single wagering parameter is fixed to 10 by default.

use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::bounds::{
    self, compose_delta_budget, BoundFamily, BoundReport, CertifyOptions, DeltaLedger,
    LedgerPurpose,
};
use crate::data::{split_prior, Dataset};
use crate::lipschitz::{lipschitz_constant, LipschitzEstimate};
use crate::measures::{
    chi_mean, kl_gaussian, w1_dirac_to_gaussian, w2_gaussian, DiracMeasure, GaussianMeasure,
    PosteriorKind, PosteriorMeasure,
};
use crate::models::{self, ModelKind, ModelParams, ModelShape};
use crate::{Error, Result};

/// Default wagering parameter of the coin-betting optimizer.
pub const DEFAULT_COCOB_PARAM: f64 = 10.0;
/// Default mini-batch size.
pub const DEFAULT_BATCH_SIZE: usize = 256;
/// Default minimum iteration count; training finishes the epoch in which
/// this count is reached.
pub const DEFAULT_MIN_ITERATIONS: usize = 10_000;

/// Per-coordinate state of the COCOB-Backprop optimizer.
///
/// Each coordinate tracks the largest observed gradient magnitude, the sum
/// of gradient magnitudes, the sum of negative gradients, and a nonnegative
/// reward (wealth won so far betting against the gradients). The next
/// iterate is a deterministic function of this state and the initial point.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CocobState {
    wager: f64,
    w1: Vec<f64>,
    max_grad: Vec<f64>,
    grad_abs_sum: Vec<f64>,
    neg_grad_sum: Vec<f64>,
    reward: Vec<f64>,
}

impl CocobState {
    /// Fresh optimizer state anchored at `init` with wagering parameter
    /// `wager` (the classic default is 10).
    pub fn new(init: &[f64], wager: f64) -> Result<Self> {
        if !wager.is_finite() || wager <= 0.0 {
            return Err(Error::invalid("wager", "must be positive and finite"));
        }
        if init.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "cocob initial point".to_string(),
            });
        }
        let n = init.len();
        Ok(Self {
            wager,
            w1: init.to_vec(),
            max_grad: vec![0.0; n],
            grad_abs_sum: vec![0.0; n],
            neg_grad_sum: vec![0.0; n],
            reward: vec![0.0; n],
        })
    }

    #[must_use]
    pub fn dim(&self) -> usize {
        self.w1.len()
    }

    #[must_use]
    pub fn wager(&self) -> f64 {
        self.wager
    }
}

/// One coin-betting update for minimisation: feeds the gradient at the
/// current `params` into the per-coordinate accumulators and rewrites
/// `params` with the next iterate. Coordinates that have never seen a
/// nonzero gradient stay at their initial value.
pub fn cocob_step(state: &mut CocobState, params: &mut [f64], grad: &[f64]) -> Result<()> {
    if params.len() != state.dim() {
        return Err(Error::DimensionMismatch {
            expected: state.dim(),
            got: params.len(),
        });
    }
    if grad.len() != state.dim() {
        return Err(Error::DimensionMismatch {
            expected: state.dim(),
            got: grad.len(),
        });
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite {
            context: "cocob gradient".to_string(),
        });
    }
    for i in 0..state.dim() {
        let g = grad[i];
        let l = state.max_grad[i].max(g.abs());
        state.max_grad[i] = l;
        state.grad_abs_sum[i] += g.abs();
        state.reward[i] = (state.reward[i] - g * (params[i] - state.w1[i])).max(0.0);
        state.neg_grad_sum[i] -= g;
        if l > 0.0 {
            // Bet a fraction of initial wealth L plus accumulated reward;
            // the denominator caps the bet when few gradients were seen.
            let denom = l * (state.grad_abs_sum[i] + l).max(state.wager * l);
            params[i] = state.w1[i] + state.neg_grad_sum[i] / denom * (l + state.reward[i]);
        }
    }
    Ok(())
}


// ---------------------------------------------------------------------------
// Bound-minimisation training.
// ---------------------------------------------------------------------------

/// Seed offset separating the ERM prior stream from the main training stream.
const ERM_SEED_OFFSET: u64 = 7919;
/// Seed offset separating the final certificate's Monte-Carlo risk stream.
const CERTIFY_SEED_OFFSET: u64 = 1_000_003;

/// Full configuration of a training run. The objective is the certificate
/// itself: empirical-risk term plus the configured family's gap term with
/// the final confidence ledger, so the trained quantity and the reported
/// certificate coincide.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub posterior_kind: PosteriorKind,
    /// Trainable objectives: the interpolated family (both posterior kinds)
    /// or the divergence-only family (Gaussian posterior).
    pub objective: BoundFamily,
    pub shape: ModelShape,
    /// Margin scale of the loss; mirrors `shape.margin_scale()`.
    pub alpha: f64,
    /// Global confidence of the final certificate.
    pub delta: f64,
    pub batch_size: usize,
    /// Training stops at the first epoch boundary at or after this count.
    pub min_iterations: usize,
    pub cocob_param: f64,
    pub seed: u64,
    /// Initial interpolation weight, strictly inside (0, 1).
    pub lambda_init: f64,
    /// Initial posterior scale (Gaussian posterior) or free interpolation
    /// scale (Dirac posterior).
    pub sigma_init: f64,
    pub prior: GaussianMeasure,
    /// Gap-constant estimate, frozen for the whole run; required by the
    /// interpolated objective, unused by the divergence-only one.
    pub lipschitz: Option<LipschitzEstimate>,
    /// Epoch count of a data-dependent prior; charges the ln(T) surcharge.
    pub prior_epochs: Option<usize>,
    /// Snap the prior variance to the discrete grid at certification time and
    /// pay the union-bound penalty (the training objective itself keeps the
    /// plain log-confidence).
    pub prior_grid: Option<bounds::PriorGridConfig>,
    /// Tight Hoeffding constant for the certified Monte-Carlo risk.
    pub strict_mc: bool,
    /// Keep MLP weight matrices Frobenius-projected after every step, which
    /// validates the closed-form loss Lipschitz cap.
    pub frobenius_project: bool,
    /// Trajectory recording period in iterations.
    pub record_every: usize,
    /// Monte-Carlo draws for the final certificate's risk term.
    pub certify_mc_samples: usize,
    /// Directory for periodic checkpoints (none when unset).
    pub checkpoint_dir: Option<PathBuf>,
    /// Checkpoint period in iterations (0 disables).
    pub checkpoint_every: usize,
}

impl TrainConfig {
    /// Configuration with the published defaults: batch size 256, at least
    /// 10000 iterations, wagering parameter 10.
    #[must_use]
    pub fn new(
        posterior_kind: PosteriorKind,
        objective: BoundFamily,
        shape: ModelShape,
        delta: f64,
        seed: u64,
        prior: GaussianMeasure,
    ) -> Self {
        let alpha = shape.margin_scale();
        Self {
            posterior_kind,
            objective,
            shape,
            alpha,
            delta,
            batch_size: DEFAULT_BATCH_SIZE,
            min_iterations: DEFAULT_MIN_ITERATIONS,
            cocob_param: DEFAULT_COCOB_PARAM,
            seed,
            lambda_init: 0.5,
            sigma_init: 0.05,
            prior,
            lipschitz: None,
            prior_epochs: None,
            prior_grid: None,
            strict_mc: false,
            frobenius_project: false,
            record_every: 100,
            certify_mc_samples: bounds::MC_RISK_SAMPLES,
            checkpoint_dir: None,
            checkpoint_every: 0,
        }
    }

    /// Validates the configuration against the training set.
    pub fn validate(&self, data: &Dataset) -> Result<()> {
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size", "must be at least 1"));
        }
        if self.min_iterations == 0 {
            return Err(Error::invalid("min_iterations", "must be at least 1"));
        }
        if self.record_every == 0 {
            return Err(Error::invalid("record_every", "must be at least 1"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::invalid("delta", "must lie in (0, 1)"));
        }
        if !(self.lambda_init > 0.0 && self.lambda_init < 1.0) {
            return Err(Error::invalid("lambda_init", "must lie strictly inside (0, 1)"));
        }
        if !(self.sigma_init > 0.0 && self.sigma_init.is_finite()) {
            return Err(Error::invalid("sigma_init", "must be positive"));
        }
        if !(self.cocob_param > 0.0 && self.cocob_param.is_finite()) {
            return Err(Error::invalid("cocob_param", "must be positive"));
        }
        if (self.alpha - self.shape.margin_scale()).abs() > 1e-12 {
            return Err(Error::Inconsistent(
                "alpha must mirror the shape's margin scale".to_string(),
            ));
        }
        if self.prior.dim() != self.shape.param_count() {
            return Err(Error::DimensionMismatch {
                expected: self.shape.param_count(),
                got: self.prior.dim(),
            });
        }
        if data.feature_dim() != self.shape.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.shape.input_dim(),
                got: data.feature_dim(),
            });
        }
        if data.class_count() != self.shape.class_count() {
            return Err(Error::DimensionMismatch {
                expected: self.shape.class_count(),
                got: data.class_count(),
            });
        }
        match self.objective {
            BoundFamily::KlWasserstein => {
                let est = self.lipschitz.as_ref().ok_or_else(|| {
                    Error::Inconsistent(
                        "the interpolated objective needs a Lipschitz estimate up front"
                            .to_string(),
                    )
                })?;
                if est.m != data.len() {
                    return Err(Error::Inconsistent(format!(
                        "Lipschitz estimate was computed on m={} but training uses m={}",
                        est.m,
                        data.len()
                    )));
                }
            }
            BoundFamily::McAllester => {
                if self.posterior_kind != PosteriorKind::Gaussian {
                    return Err(Error::Inconsistent(
                        "the divergence-only objective needs a Gaussian posterior".to_string(),
                    ));
                }
            }
            other => {
                return Err(Error::Inconsistent(format!(
                    "the {other} family is certified post hoc, not trained"
                )));
            }
        }
        if self.checkpoint_every > 0 && self.checkpoint_dir.is_none() {
            return Err(Error::invalid(
                "checkpoint_every",
                "a checkpoint cadence needs a checkpoint directory",
            ));
        }
        Ok(())
    }

    /// Confidence ledger the objective anticipates: the interpolated family
    /// always budgets for its transport term, a Gaussian posterior always
    /// budgets for Monte-Carlo risk.
    fn budget(&self) -> Result<DeltaLedger> {
        let uses_wasserstein = self.objective == BoundFamily::KlWasserstein;
        let uses_mc = self.posterior_kind == PosteriorKind::Gaussian;
        compose_delta_budget(
            self.objective,
            self.posterior_kind,
            uses_wasserstein,
            uses_mc,
            self.delta,
        )
    }

    /// Effective log-confidence of the bound share, including the ln(T)
    /// surcharge for a data-dependent prior.
    fn log_conf(&self, ledger: &DeltaLedger) -> Result<f64> {
        let share = ledger
            .share(LedgerPurpose::Bound)
            .expect("every ledger carries a bound share");
        let mut lc = (1.0 / share).ln();
        if let Some(t) = self.prior_epochs {
            lc += bounds::data_dependent_prior_penalty(t, self.delta)?;
        }
        Ok(lc)
    }

    /// Frozen gap constant for the interpolated objective: the estimate
    /// re-priced at the Lipschitz share, capped by the deterministic loss
    /// constant when that cap is valid.
    fn gap_constant(&self, ledger: &DeltaLedger) -> Result<Option<f64>> {
        if self.objective != BoundFamily::KlWasserstein {
            return Ok(None);
        }
        let est = self
            .lipschitz
            .as_ref()
            .expect("validate() requires the estimate for the interpolated objective");
        let share = ledger
            .share(LedgerPurpose::Lipschitz)
            .expect("the interpolated ledger carries a lipschitz share");
        let at_share = lipschitz_constant(est.surrogate, est.loss_lip, est.m, share)?.value;
        let capped = match bounds::deterministic_gap_cap(&self.shape, self.frobenius_project) {
            Some(cap) if cap < at_share => cap,
            _ => at_share,
        };
        Ok(Some(capped))
    }
}

/// Trainable scalars: model parameters, the posterior scale in log space,
/// and the interpolation weight through a squashing map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainableState {
    pub theta: Vec<f64>,
    /// Posterior std in log space (Gaussian posterior), or the free scale of
    /// the interpolation measure (Dirac posterior).
    pub log_sigma: f64,
    /// Interpolation weight through the logistic map, so lambda stays in
    /// (0, 1) for every real input (saturating to the endpoints).
    pub lambda_logit: f64,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

impl TrainableState {
    /// Initial state: model parameters at the prior mean, scale and
    /// interpolation weight from the configuration.
    pub fn init(cfg: &TrainConfig) -> Result<Self> {
        if !(cfg.lambda_init > 0.0 && cfg.lambda_init < 1.0) {
            return Err(Error::invalid("lambda_init", "must lie strictly inside (0, 1)"));
        }
        if !(cfg.sigma_init > 0.0 && cfg.sigma_init.is_finite()) {
            return Err(Error::invalid("sigma_init", "must be positive"));
        }
        Ok(Self {
            theta: cfg.prior.mean().to_vec(),
            log_sigma: cfg.sigma_init.ln(),
            lambda_logit: logit(cfg.lambda_init),
        })
    }

    /// Interpolation weight in (0, 1) (the endpoints only in saturation).
    #[must_use]
    pub fn lambda(&self) -> f64 {
        sigmoid(self.lambda_logit)
    }

    /// Positive scale recovered from log space.
    #[must_use]
    pub fn sigma(&self) -> f64 {
        self.log_sigma.exp()
    }

    /// Number of trainable scalars: parameters plus scale plus weight.
    #[must_use]
    pub fn dim(&self) -> usize {
        self.theta.len() + 2
    }

    /// Flattens to `[theta.., log_sigma, lambda_logit]`.
    #[must_use]
    pub fn to_flat(&self) -> Vec<f64> {
        let mut flat = self.theta.clone();
        flat.push(self.log_sigma);
        flat.push(self.lambda_logit);
        flat
    }

    /// Inverse of [`TrainableState::to_flat`].
    pub fn from_flat(flat: &[f64]) -> Result<Self> {
        if flat.len() < 3 {
            return Err(Error::invalid("flat", "need at least one parameter plus two scalars"));
        }
        let d = flat.len() - 2;
        Ok(Self {
            theta: flat[..d].to_vec(),
            log_sigma: flat[d],
            lambda_logit: flat[d + 1],
        })
    }
}

/// Interpolation measure induced by the trainable state: mean
/// `lambda w + (1 - lambda) w_P`; variance `lambda sigma^2 + (1 - lambda)
/// sigma_P^2` for a Gaussian posterior, or the free scale `exp(2 log_sigma)`
/// for a Dirac posterior.
pub fn eta_from_state(
    state: &TrainableState,
    prior: &GaussianMeasure,
    posterior_kind: PosteriorKind,
) -> Result<GaussianMeasure> {
    if state.theta.len() != prior.dim() {
        return Err(Error::DimensionMismatch {
            expected: prior.dim(),
            got: state.theta.len(),
        });
    }
    let lambda = state.lambda();
    let mean: Vec<f64> = state
        .theta
        .iter()
        .zip(prior.mean())
        .map(|(w, wp)| lambda * w + (1.0 - lambda) * wp)
        .collect();
    let variance = match posterior_kind {
        PosteriorKind::Gaussian => {
            let v = state.sigma() * state.sigma();
            lambda * v + (1.0 - lambda) * prior.variance()
        }
        PosteriorKind::Dirac => (2.0 * state.log_sigma).exp(),
    };
    GaussianMeasure::new(mean, variance.sqrt())
}

/// Objective value, its two halves, and the gradient over the flat state.
#[derive(Debug, Clone)]
pub struct ObjectiveEval {
    pub value: f64,
    pub risk_term: f64,
    pub gap_term: f64,
    /// Gradient in the `[theta.., log_sigma, lambda_logit]` layout.
    pub grad: Vec<f64>,
}

fn batch_risk(params: &ModelParams, data: &Dataset, batch: &[usize], alpha: f64) -> Result<f64> {
    let mut acc = 0.0;
    for &i in batch {
        let scores = models::predict(params, data.row(i))?;
        acc += models::margin_loss(&scores, data.label(i), alpha)?;
    }
    Ok(acc / batch.len() as f64)
}

/// Stochastic objective and gradient at `state` on a mini-batch, with a
/// fresh reparametrisation noise draw for the Gaussian posterior risk.
pub fn objective_and_grad(
    state: &TrainableState,
    data: &Dataset,
    batch: &[usize],
    cfg: &TrainConfig,
    rng: &mut impl rand::Rng,
) -> Result<ObjectiveEval> {
    let noise: Option<Vec<f64>> = match cfg.posterior_kind {
        PosteriorKind::Gaussian => {
            let mut xi = vec![0.0; state.theta.len()];
            for out in xi.iter_mut() {
                *out = StandardNormal.sample(rng);
            }
            Some(xi)
        }
        PosteriorKind::Dirac => None,
    };
    objective_and_grad_at(state, data, batch, cfg, noise.as_deref())
}

/// Deterministic core of [`objective_and_grad`]: the Gaussian posterior
/// risk is evaluated at the reparametrised point `w + sigma * noise`, so a
/// fixed noise vector makes the whole map differentiable and testable by
/// finite differences. The gap term uses the certification sample size
/// (the full `data`), the final confidence ledger, and the frozen gap
/// constant; the risk term is the mini-batch mean.
pub fn objective_and_grad_at(
    state: &TrainableState,
    data: &Dataset,
    batch: &[usize],
    cfg: &TrainConfig,
    noise: Option<&[f64]>,
) -> Result<ObjectiveEval> {
    let d = state.theta.len();
    if d != cfg.shape.param_count() {
        return Err(Error::DimensionMismatch {
            expected: cfg.shape.param_count(),
            got: d,
        });
    }
    if batch.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if let Some(&bad) = batch.iter().find(|&&i| i >= data.len()) {
        return Err(Error::invalid(
            "batch",
            format!("index {bad} is out of range for m={}", data.len()),
        ));
    }
    let mf = data.len() as f64;
    let dd = d as f64;
    let lambda = state.lambda();
    let dlam_dlogit = lambda * (1.0 - lambda);
    let sigma = state.sigma();
    let v = sigma * sigma;
    let prior = &cfg.prior;
    let wp = prior.mean();
    let vp = prior.variance();

    // Risk term and its gradient through the (possibly reparametrised)
    // evaluation point.
    let (risk, risk_grad_theta, risk_grad_s) = match cfg.posterior_kind {
        PosteriorKind::Dirac => {
            let params = ModelParams::new(cfg.shape.clone(), state.theta.clone())?;
            let risk = batch_risk(&params, data, batch, cfg.alpha)?;
            let grad = models::mean_loss_gradient(&params, data, batch, cfg.alpha)?;
            (risk, grad, 0.0)
        }
        PosteriorKind::Gaussian => {
            let xi = noise.ok_or_else(|| {
                Error::invalid("noise", "the gaussian posterior risk needs a noise vector")
            })?;
            if xi.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: xi.len(),
                });
            }
            let point: Vec<f64> = state
                .theta
                .iter()
                .zip(xi)
                .map(|(w, n)| w + sigma * n)
                .collect();
            let params = ModelParams::new(cfg.shape.clone(), point)?;
            let risk = batch_risk(&params, data, batch, cfg.alpha)?;
            let grad = models::mean_loss_gradient(&params, data, batch, cfg.alpha)?;
            let grad_s = sigma * grad.iter().zip(xi).map(|(g, n)| g * n).sum::<f64>();
            (risk, grad, grad_s)
        }
    };

    // Gap term: dA/dx accumulated per trainable scalar, then chained
    // through gap = sqrt(A).
    let ledger = cfg.budget()?;
    let log_conf = cfg.log_conf(&ledger)?;
    let intrinsic = (2.0 * mf.sqrt()).ln() + log_conf;
    let mut da_theta = vec![0.0; d];
    let mut da_s = 0.0;
    let mut da_lambda = 0.0;
    let a = match cfg.objective {
        BoundFamily::McAllester => {
            let rho = GaussianMeasure::new(state.theta.clone(), sigma)?;
            let kl = kl_gaussian(&rho, prior)?;
            for i in 0..d {
                da_theta[i] = (state.theta[i] - wp[i]) / vp / (2.0 * mf);
            }
            da_s = dd * (v / vp - 1.0) / (2.0 * mf);
            (kl + intrinsic) / (2.0 * mf)
        }
        BoundFamily::KlWasserstein => {
            let lip_gap = cfg
                .gap_constant(&ledger)?
                .expect("the interpolated objective always has a gap constant");
            let lip_sq = 2.0 * lip_gap;
            let eta = eta_from_state(state, prior, cfg.posterior_kind)?;
            let kl = kl_gaussian(&eta, prior)?;
            let ve = eta.variance();
            let se = eta.std();
            let dp: Vec<f64> = state.theta.iter().zip(wp).map(|(w, p)| w - p).collect();
            let dist_sq: f64 = dp.iter().map(|x| x * x).sum();
            let dist = dist_sq.sqrt();

            // Divergence partials for KL(eta || prior).
            for (slot, dpi) in da_theta.iter_mut().zip(&dp) {
                *slot += lambda * lambda * dpi / vp / (2.0 * mf);
            }
            let mut dkl_lambda = lambda * dist_sq / vp;
            let dkl_s = match cfg.posterior_kind {
                PosteriorKind::Gaussian => {
                    dkl_lambda += 0.5 * dd * (1.0 / vp - 1.0 / ve) * (v - vp);
                    dd * lambda * v * (1.0 / vp - 1.0 / ve)
                }
                PosteriorKind::Dirac => dd * (ve / vp - 1.0),
            };
            da_s += dkl_s / (2.0 * mf);
            da_lambda += dkl_lambda / (2.0 * mf);

            // Transport partials.
            let w_dist = match cfg.posterior_kind {
                PosteriorKind::Dirac => {
                    let point = DiracMeasure::new(state.theta.clone())?;
                    let w_val = w1_dirac_to_gaussian(&point, &eta)?;
                    if dist > 0.0 {
                        for (slot, dpi) in da_theta.iter_mut().zip(&dp) {
                            *slot += lip_sq * (1.0 - lambda) * dpi / dist;
                        }
                    }
                    da_lambda += lip_sq * (-dist);
                    da_s += lip_sq * se * chi_mean(d);
                    w_val
                }
                PosteriorKind::Gaussian => {
                    let rho = GaussianMeasure::new(state.theta.clone(), sigma)?;
                    let w_val = w2_gaussian(&rho, &eta)?;
                    if w_val > 0.0 {
                        let inv2w = 1.0 / (2.0 * w_val);
                        let one_ml = 1.0 - lambda;
                        let dsig = sigma - se;
                        for (slot, dpi) in da_theta.iter_mut().zip(&dp) {
                            *slot += lip_sq * inv2w * 2.0 * one_ml * one_ml * dpi;
                        }
                        let db_lambda = -2.0 * one_ml * dist_sq - dd * dsig * (v - vp) / se;
                        let db_s = 2.0 * dd * dsig * (sigma - lambda * v / se);
                        da_lambda += lip_sq * inv2w * db_lambda;
                        da_s += lip_sq * inv2w * db_s;
                    }
                    w_val
                }
            };
            lip_sq * w_dist + (kl + intrinsic) / (2.0 * mf)
        }
        other => {
            return Err(Error::Inconsistent(format!(
                "the {other} family is certified post hoc, not trained"
            )));
        }
    };
    let gap = a.sqrt();
    let inv2g = 1.0 / (2.0 * gap);
    let mut grad = Vec::with_capacity(d + 2);
    for i in 0..d {
        grad.push(risk_grad_theta[i] + inv2g * da_theta[i]);
    }
    grad.push(risk_grad_s + inv2g * da_s);
    grad.push(inv2g * da_lambda * dlam_dlogit);

    let value = risk + gap;
    if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite {
            context: "training objective".to_string(),
        });
    }
    Ok(ObjectiveEval {
        value,
        risk_term: risk,
        gap_term: gap,
        grad,
    })
}

/// One trajectory sample of a training run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub iteration: usize,
    pub objective: f64,
    pub risk_term: f64,
    pub gap_term: f64,
}

/// Result of a training run: the trained posterior, the interpolation
/// measure it was certified against, the certificate, and the recorded
/// trajectory.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub posterior: PosteriorMeasure,
    pub eta: GaussianMeasure,
    pub report: BoundReport,
    pub trajectory: Vec<TrainRecord>,
    pub iterations: usize,
    pub epochs: usize,
}

/// Minimises the certificate over epochs of shuffled mini-batches until the
/// iteration count reaches `cfg.min_iterations`, finishing the running
/// epoch, then assembles the final certificate on the full training set.
/// Deterministic per configuration: identical runs are bitwise identical.
pub fn train(data: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate(data)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut flat = TrainableState::init(cfg)?.to_flat();
    let mut optimizer = CocobState::new(&flat, cfg.cocob_param)?;
    let d = cfg.shape.param_count();
    let mut indices: Vec<usize> = (0..data.len()).collect();
    let mut trajectory = Vec::new();
    let mut iteration = 0usize;
    let mut epochs = 0usize;
    loop {
        indices.shuffle(&mut rng);
        for batch in indices.chunks(cfg.batch_size) {
            iteration += 1;
            let state = TrainableState::from_flat(&flat)?;
            let eval = objective_and_grad(&state, data, batch, cfg, &mut rng)?;
            if iteration == 1 || iteration % cfg.record_every == 0 {
                trajectory.push(TrainRecord {
                    iteration,
                    objective: eval.value,
                    risk_term: eval.risk_term,
                    gap_term: eval.gap_term,
                });
            }
            cocob_step(&mut optimizer, &mut flat, &eval.grad)?;
            if cfg.frobenius_project && matches!(cfg.shape.kind(), ModelKind::Mlp { .. }) {
                let projected =
                    ModelParams::new(cfg.shape.clone(), flat[..d].to_vec())?.project_frobenius();
                flat[..d].copy_from_slice(projected.theta());
            }
            if cfg.checkpoint_every > 0 && iteration % cfg.checkpoint_every == 0 {
                let dir = cfg.checkpoint_dir.as_ref().expect("validated");
                let params = ModelParams::new(cfg.shape.clone(), flat[..d].to_vec())?;
                models::save_checkpoint(&params, &dir.join(format!("checkpoint-{iteration:07}.ckpt")))?;
            }
        }
        epochs += 1;
        if iteration >= cfg.min_iterations {
            break;
        }
    }

    let state = TrainableState::from_flat(&flat)?;
    let eta = match cfg.objective {
        BoundFamily::McAllester => GaussianMeasure::new(state.theta.clone(), state.sigma())?,
        _ => eta_from_state(&state, &cfg.prior, cfg.posterior_kind)?,
    };
    let posterior = match cfg.posterior_kind {
        PosteriorKind::Dirac => {
            PosteriorMeasure::Dirac(DiracMeasure::new(state.theta.clone())?)
        }
        PosteriorKind::Gaussian => {
            PosteriorMeasure::Gaussian(GaussianMeasure::new(state.theta.clone(), state.sigma())?)
        }
    };
    let opts = CertifyOptions {
        mc_samples: cfg.certify_mc_samples,
        mc_seed: cfg.seed.wrapping_add(CERTIFY_SEED_OFFSET),
        strict_mc: cfg.strict_mc,
        prior_grid: cfg.prior_grid,
        prior_epochs: cfg.prior_epochs,
        frobenius_enforced: cfg.frobenius_project,
        ..CertifyOptions::default()
    };
    let (eta_arg, lip_arg) = match cfg.objective {
        BoundFamily::McAllester => (None, None),
        _ => (Some(&eta), cfg.lipschitz.as_ref()),
    };
    let report = bounds::certify(
        cfg.objective,
        &posterior,
        &cfg.prior,
        eta_arg,
        &cfg.shape,
        data,
        lip_arg,
        cfg.delta,
        &opts,
    )?;
    Ok(TrainOutcome {
        posterior,
        eta,
        report,
        trajectory,
        iterations: iteration,
        epochs,
    })
}

/// A data-dependent prior fit by empirical risk minimisation on a held-out
/// prior split, with the best checkpoint selected on the certification
/// split ("early stopping" as checkpoint selection).
#[derive(Debug, Clone)]
pub struct ErmPrior {
    /// Parameters of the selected checkpoint, usable as a prior mean.
    pub prior_mean: Vec<f64>,
    /// Number of candidate checkpoints (one per epoch), for the ln(T)
    /// surcharge.
    pub epochs: usize,
    /// Epoch of the selected checkpoint.
    pub best_epoch: usize,
    /// Certification-split risk of the selected checkpoint.
    pub best_risk: f64,
    /// Held-out split the prior was fit on.
    pub prior_split: Dataset,
    /// Remaining split the certificate must be computed on.
    pub cert_split: Dataset,
}

/// Fits a prior mean by ERM on `fraction` of `full_train` (the split is
/// seeded by `cfg.seed`, so callers re-derive it deterministically); scores
/// one checkpoint per epoch on the remaining certification split and keeps
/// the best. Runs until `cfg.min_iterations`, finishing the epoch.
pub fn train_erm_prior(
    full_train: &Dataset,
    prior_split_fraction: f64,
    cfg: &TrainConfig,
) -> Result<ErmPrior> {
    if cfg.batch_size == 0 || cfg.min_iterations == 0 {
        return Err(Error::invalid("config", "batch size and iteration floor must be positive"));
    }
    if full_train.feature_dim() != cfg.shape.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: cfg.shape.input_dim(),
            got: full_train.feature_dim(),
        });
    }
    if full_train.class_count() != cfg.shape.class_count() {
        return Err(Error::DimensionMismatch {
            expected: cfg.shape.class_count(),
            got: full_train.class_count(),
        });
    }
    let (prior_split, cert_split) = split_prior(full_train, prior_split_fraction, cfg.seed)?;
    let init = match cfg.shape.kind() {
        ModelKind::Linear => models::init_linear(&cfg.shape)?,
        ModelKind::Mlp { .. } => models::init_mlp(&cfg.shape, cfg.seed)?,
    };
    let mut flat = init.theta().to_vec();
    let mut optimizer = CocobState::new(&flat, cfg.cocob_param)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(ERM_SEED_OFFSET));
    let mut indices: Vec<usize> = (0..prior_split.len()).collect();
    let mut iteration = 0usize;
    let mut epochs = 0usize;
    let mut best: Option<(usize, f64, Vec<f64>)> = None;
    loop {
        indices.shuffle(&mut rng);
        for batch in indices.chunks(cfg.batch_size) {
            iteration += 1;
            let params = ModelParams::new(cfg.shape.clone(), flat.clone())?;
            let grad = models::mean_loss_gradient(&params, &prior_split, batch, cfg.alpha)?;
            cocob_step(&mut optimizer, &mut flat, &grad)?;
            if cfg.frobenius_project && matches!(cfg.shape.kind(), ModelKind::Mlp { .. }) {
                let projected = ModelParams::new(cfg.shape.clone(), flat.clone())?
                    .project_frobenius();
                flat.copy_from_slice(projected.theta());
            }
        }
        epochs += 1;
        let params = ModelParams::new(cfg.shape.clone(), flat.clone())?;
        let risk = models::empirical_risk(&params, &cert_split, cfg.alpha)?;
        if best.as_ref().is_none_or(|(_, r, _)| risk < *r) {
            best = Some((epochs, risk, flat.clone()));
        }
        if iteration >= cfg.min_iterations {
            break;
        }
    }
    let (best_epoch, best_risk, prior_mean) = best.expect("at least one epoch always runs");
    Ok(ErmPrior {
        prior_mean,
        epochs,
        best_epoch,
        best_risk,
        prior_split,
        cert_split,
    })
}
