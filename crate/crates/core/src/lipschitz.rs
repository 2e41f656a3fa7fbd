//! High-probability estimation of the Lipschitz constant of the
//! generalisation gap.
//!
//! The gap constant is certified from a data-dependent surrogate: with fixed
//! random signs eps_i, the supremum over ordered hypothesis pairs of
//!
//! ```text
//! (1/m) sum_i eps_i [loss(w', z_i) - loss(w, z_i)] / ||w - w'||
//! ```
//!
//! yields the constant `2 * surrogate + 3 * L * sqrt(2 ln(4/delta) / m)`,
//! where `L` is the per-example loss Lipschitz constant. The supremum itself
//! is approximated by mini-batch ascent with the same coin-betting optimizer
//! used for training, scoring checkpoints on the full sample; the result is
//! an empirical estimate of the supremum, not a certified upper bound on it,
//! and is flagged as such wherever it is reported.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::models::{self, ModelKind, ModelParams, ModelShape};
use crate::trainer::{cocob_step, CocobState};
use crate::{Error, Result};

/// Pairs closer than this in parameter space are treated as degenerate and
/// skipped or re-perturbed (denominator guard).
pub const DISTANCE_FLOOR: f64 = 1e-8;
/// Default number of ascent restarts.
pub const DEFAULT_ASCENT_RESTARTS: usize = 5;
/// Default number of ascent iterations per restart.
pub const DEFAULT_ASCENT_ITERS: usize = 2000;

/// Fixed Rademacher signs, one per example, drawn once per estimate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RademacherSigns {
    eps: Vec<i8>,
    seed: u64,
}

impl RademacherSigns {
    #[must_use]
    pub fn eps(&self) -> &[i8] {
        &self.eps
    }

    #[must_use]
    pub fn len(&self) -> usize {
        self.eps.len()
    }

    #[must_use]
    pub fn is_empty(&self) -> bool {
        self.eps.is_empty()
    }

    #[must_use]
    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Sign of example `i` as a float factor.
    #[must_use]
    pub fn sign(&self, i: usize) -> f64 {
        f64::from(self.eps[i])
    }
}

/// Draws `m` i.i.d. uniform signs, deterministic per seed.
pub fn sample_rademacher(m: usize, seed: u64) -> Result<RademacherSigns> {
    if m == 0 {
        return Err(Error::invalid("m", "sign vector must be nonempty"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eps = (0..m)
        .map(|_| if rng.random::<bool>() { 1i8 } else { -1i8 })
        .collect();
    Ok(RademacherSigns { eps, seed })
}

/// Certified Lipschitz constant of the gap, assembled from a surrogate value.
///
/// Invariant: `value == 2 * surrogate + 3 * loss_lip * sqrt(2 ln(4/delta) / m)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LipschitzEstimate {
    /// Maximised surrogate value (an empirical estimate of the supremum).
    pub surrogate: f64,
    /// Per-example Lipschitz constant of the loss.
    pub loss_lip: f64,
    /// Sample size the surrogate was maximised on.
    pub m: usize,
    /// Confidence share consumed by the estimate.
    pub delta: f64,
    /// Assembled constant.
    pub value: f64,
    /// (iteration, full-sample surrogate) checkpoints from the ascent.
    pub trace: Vec<(usize, f64)>,
}

impl LipschitzEstimate {
    /// Re-evaluates the closed formula from the stored ingredients.
    #[must_use]
    pub fn recompute(&self) -> f64 {
        lipschitz_value(self.surrogate, self.loss_lip, self.m, self.delta)
    }
}

fn lipschitz_value(surrogate: f64, loss_lip: f64, m: usize, delta: f64) -> f64 {
    2.0 * surrogate + 3.0 * loss_lip * (2.0 * (4.0 / delta).ln() / m as f64).sqrt()
}

/// Assembles the high-probability gap constant
/// `2 * surrogate + 3 * loss_lip * sqrt(2 ln(4/delta) / m)`.
pub fn lipschitz_constant(
    surrogate: f64,
    loss_lip: f64,
    m: usize,
    delta: f64,
) -> Result<LipschitzEstimate> {
    if !surrogate.is_finite() || surrogate < 0.0 {
        return Err(Error::invalid("surrogate", "must be finite and nonnegative"));
    }
    if !loss_lip.is_finite() || loss_lip <= 0.0 {
        return Err(Error::invalid("loss_lip", "must be finite and positive"));
    }
    if m == 0 {
        return Err(Error::invalid("m", "sample size must be positive"));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::invalid("delta", "must lie in (0, 1)"));
    }
    Ok(LipschitzEstimate {
        surrogate,
        loss_lip,
        m,
        delta,
        value: lipschitz_value(surrogate, loss_lip, m, delta),
        trace: Vec::new(),
    })
}

/// Bridges the gap constant to the squared gap: if the gap is
/// `est.value`-Lipschitz and bounded by `gap_bound`, the squared gap is
/// `2 * gap_bound * est.value`-Lipschitz (from `|a^2 - b^2| <= (|a|+|b|) |a-b|`).
pub fn lipschitz_for_squared_gap(est: &LipschitzEstimate, gap_bound: f64) -> Result<f64> {
    if !(gap_bound > 0.0 && gap_bound <= 1.0) {
        return Err(Error::invalid("gap_bound", "must lie in (0, 1]"));
    }
    Ok(2.0 * gap_bound * est.value)
}

/// Optimizer configuration for the surrogate ascent.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AscentConfig {
    /// Wagering parameter of the coin-betting optimizer.
    pub cocob_param: f64,
    /// Independent restarts; the best checkpoint across all of them wins.
    pub restarts: usize,
    /// Full-sample scoring cadence, in iterations.
    pub checkpoint_every: usize,
    /// Std of the Gaussian perturbation applied at initialisation (keeps the
    /// pair distinct; also used to recover from degenerate pairs).
    pub perturb_std: f64,
}

impl Default for AscentConfig {
    fn default() -> Self {
        Self {
            cocob_param: crate::trainer::DEFAULT_COCOB_PARAM,
            restarts: DEFAULT_ASCENT_RESTARTS,
            checkpoint_every: 100,
            perturb_std: 0.01,
        }
    }
}

/// How the ascent is initialised.
#[derive(Debug, Clone, Copy)]
pub enum AscentInit<'a> {
    /// Independent draws from the model's init distribution plus a small
    /// Gaussian perturbation.
    Random,
    /// Score every ordered pair of the given candidates on the full sample
    /// first, then ascend from the best pair. With `iters == 0` this becomes
    /// pure enumeration and returns exactly the candidate-set supremum.
    Candidates(&'a [ModelParams]),
}

/// Outcome of a surrogate maximisation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateRun {
    /// Best full-sample surrogate value found (never negative).
    pub value: f64,
    /// (iteration, full-sample surrogate) pairs at scoring checkpoints.
    pub trace: Vec<(usize, f64)>,
}

/// Full-sample surrogate ratio of the ordered pair `(w, w')` over `rows`;
/// `None` when the pair is numerically degenerate.
fn pair_objective_on(
    w: &ModelParams,
    w_prime: &ModelParams,
    data: &Dataset,
    rows: &[usize],
    eps: &RademacherSigns,
    alpha: f64,
) -> Result<Option<f64>> {
    let dist = euclidean(w.theta(), w_prime.theta());
    if dist < DISTANCE_FLOOR {
        return Ok(None);
    }
    let mut acc = 0.0;
    for &i in rows {
        let loss_w = loss_at(w, data, i, alpha)?;
        let loss_wp = loss_at(w_prime, data, i, alpha)?;
        acc += eps.sign(i) * (loss_wp - loss_w);
    }
    Ok(Some(acc / rows.len() as f64 / dist))
}

fn loss_at(params: &ModelParams, data: &Dataset, i: usize, alpha: f64) -> Result<f64> {
    let scores = models::predict(params, data.row(i))?;
    models::margin_loss(&scores, data.label(i), alpha)
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Batch surrogate value and its gradient with respect to the concatenated
/// vector `[w ; w']`. The ratio `S / D` with `S` the signed mean loss
/// difference and `D = ||w - w'||` differentiates to
/// `dS/du / D - S * dD/du / D^2`, with `dD/dw = (w - w') / D`.
fn surrogate_grad(
    w: &ModelParams,
    w_prime: &ModelParams,
    data: &Dataset,
    rows: &[usize],
    eps: &RademacherSigns,
    alpha: f64,
) -> Result<Option<(f64, Vec<f64>)>> {
    let dim = w.dim();
    let dist = euclidean(w.theta(), w_prime.theta());
    if dist < DISTANCE_FLOOR {
        return Ok(None);
    }
    let mut signed_mean = 0.0;
    let mut grad_w = vec![0.0; dim];
    let mut grad_wp = vec![0.0; dim];
    for &i in rows {
        let s = eps.sign(i);
        signed_mean += s * (loss_at(w_prime, data, i, alpha)? - loss_at(w, data, i, alpha)?);
        let gw = models::loss_gradient(w, data.row(i), data.label(i), alpha)?;
        let gwp = models::loss_gradient(w_prime, data.row(i), data.label(i), alpha)?;
        for k in 0..dim {
            grad_w[k] -= s * gw[k];
            grad_wp[k] += s * gwp[k];
        }
    }
    let scale = 1.0 / rows.len() as f64;
    signed_mean *= scale;
    let value = signed_mean / dist;
    let mut grad = vec![0.0; 2 * dim];
    for k in 0..dim {
        let ddist_dw = (w.theta()[k] - w_prime.theta()[k]) / dist;
        grad[k] = scale * grad_w[k] / dist - value * ddist_dw / dist;
        grad[dim + k] = scale * grad_wp[k] / dist + value * ddist_dw / dist;
    }
    Ok(Some((value, grad)))
}

/// Exact maximum of the surrogate ratio over all ordered pairs of distinct
/// candidates; the shared enumeration core of [`brute_force_surrogate`] and
/// the candidate-seeded mode of [`maximize_surrogate`].
fn enumerate_pairs(
    candidates: &[ModelParams],
    data: &Dataset,
    eps: &RademacherSigns,
    alpha: f64,
) -> Result<(f64, (usize, usize))> {
    let rows: Vec<usize> = (0..data.len()).collect();
    let mut best: Option<(f64, (usize, usize))> = None;
    for i in 0..candidates.len() {
        for j in 0..candidates.len() {
            if i == j {
                continue;
            }
            if let Some(v) =
                pair_objective_on(&candidates[i], &candidates[j], data, &rows, eps, alpha)?
            {
                if best.is_none_or(|(b, _)| v > b) {
                    best = Some((v, (i, j)));
                }
            }
        }
    }
    best.ok_or_else(|| Error::invalid("candidates", "need at least 2 distinct candidates"))
}

/// Exact maximum of the surrogate ratio over all ordered pairs of distinct
/// candidates (test oracle for the mini-batch maximiser).
pub fn brute_force_surrogate(
    candidates: &[ModelParams],
    data: &Dataset,
    eps: &RademacherSigns,
) -> Result<f64> {
    validate_sample(data, eps)?;
    if candidates.len() < 2 {
        return Err(Error::invalid("candidates", "need at least 2 distinct candidates"));
    }
    let shape = candidates[0].shape().clone();
    for c in candidates {
        if c.shape() != &shape {
            return Err(Error::Inconsistent(
                "surrogate candidates must share one model shape".to_string(),
            ));
        }
    }
    let (best, _) = enumerate_pairs(candidates, data, eps, shape.margin_scale())?;
    Ok(best.max(0.0))
}

fn validate_sample(data: &Dataset, eps: &RademacherSigns) -> Result<()> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if eps.len() != data.len() {
        return Err(Error::DimensionMismatch {
            expected: data.len(),
            got: eps.len(),
        });
    }
    Ok(())
}

/// Maximises the surrogate by mini-batch ascent, scoring the full sample at
/// checkpoints and keeping the best of both pair orderings. The returned
/// value is an empirical lower estimate of the true supremum.
///
/// With [`AscentInit::Candidates`] the candidate pairs are scored first;
/// `iters == 0` is allowed there and performs enumeration only, reproducing
/// [`brute_force_surrogate`] exactly. Random initialisation requires
/// `iters >= 1`.
#[allow(clippy::too_many_arguments)]
pub fn maximize_surrogate(
    data: &Dataset,
    eps: &RademacherSigns,
    shape: &ModelShape,
    cfg: &AscentConfig,
    iters: usize,
    batch: usize,
    seed: u64,
    init: AscentInit<'_>,
) -> Result<SurrogateRun> {
    validate_sample(data, eps)?;
    if data.feature_dim() != shape.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: shape.input_dim(),
            got: data.feature_dim(),
        });
    }
    if batch == 0 {
        return Err(Error::invalid("batch", "batch size must be positive"));
    }
    if !(cfg.cocob_param > 0.0) || cfg.checkpoint_every == 0 || cfg.restarts == 0 {
        return Err(Error::invalid("cfg", "ascent configuration must be positive"));
    }
    if !(cfg.perturb_std > 0.0 && cfg.perturb_std.is_finite()) {
        return Err(Error::invalid("cfg", "perturbation std must be positive"));
    }
    let alpha = shape.margin_scale();
    let mut trace: Vec<(usize, f64)> = Vec::new();
    let mut best = f64::NEG_INFINITY;

    // Candidate seeding: enumerate ordered pairs on the full sample first.
    let mut seeded_pair: Option<(ModelParams, ModelParams)> = None;
    if let AscentInit::Candidates(candidates) = init {
        for c in candidates {
            if c.shape() != shape {
                return Err(Error::Inconsistent(
                    "surrogate candidates must match the requested shape".to_string(),
                ));
            }
        }
        if candidates.len() < 2 {
            return Err(Error::invalid("candidates", "need at least 2 distinct candidates"));
        }
        let (value, (i, j)) = enumerate_pairs(candidates, data, eps, alpha)?;
        best = value.max(0.0);
        trace.push((0, value));
        if iters == 0 {
            return Ok(SurrogateRun { value: best, trace });
        }
        seeded_pair = Some((candidates[i].clone(), candidates[j].clone()));
    } else if iters == 0 {
        return Err(Error::invalid("iters", "random-start ascent needs at least one iteration"));
    }

    let dim = shape.param_count();
    let all_rows: Vec<usize> = (0..data.len()).collect();
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    let mut global_iter = 0usize;

    for _ in 0..cfg.restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(master.next_u64());
        let (mut w, mut wp) = match &seeded_pair {
            Some((a, b)) => (a.theta().to_vec(), b.theta().to_vec()),
            None => (init_point(shape, &mut rng)?, init_point(shape, &mut rng)?),
        };
        perturb(&mut w, cfg.perturb_std, &mut rng);
        perturb(&mut wp, cfg.perturb_std, &mut rng);
        let mut u: Vec<f64> = w.iter().chain(wp.iter()).copied().collect();
        let mut state = CocobState::new(&u, cfg.cocob_param)?;

        for it in 1..=iters {
            global_iter += 1;
            if euclidean(&u[..dim], &u[dim..]) < DISTANCE_FLOOR {
                // Degenerate pair: re-perturb w' and restart the coin there.
                perturb(&mut u[dim..], cfg.perturb_std, &mut rng);
                state = CocobState::new(&u, cfg.cocob_param)?;
            }
            let rows: Vec<usize> = (0..batch).map(|_| rng.random_range(0..data.len())).collect();
            let pw = ModelParams::new(shape.clone(), u[..dim].to_vec())?;
            let pwp = ModelParams::new(shape.clone(), u[dim..].to_vec())?;
            if let Some((_, grad)) = surrogate_grad(&pw, &pwp, data, &rows, eps, alpha)? {
                // Maximisation: feed the sign-flipped gradient to the minimiser.
                let neg: Vec<f64> = grad.iter().map(|g| -g).collect();
                cocob_step(&mut state, &mut u, &neg)?;
            }
            if it % cfg.checkpoint_every == 0 || it == iters {
                let pw = ModelParams::new(shape.clone(), u[..dim].to_vec())?;
                let pwp = ModelParams::new(shape.clone(), u[dim..].to_vec())?;
                let forward = pair_objective_on(&pw, &pwp, data, &all_rows, eps, alpha)?;
                let backward = pair_objective_on(&pwp, &pw, data, &all_rows, eps, alpha)?;
                let score = match (forward, backward) {
                    (Some(a), Some(b)) => a.max(b),
                    (Some(a), None) | (None, Some(a)) => a,
                    (None, None) => continue,
                };
                trace.push((global_iter, score));
                best = best.max(score);
            }
        }
    }

    Ok(SurrogateRun {
        value: best.max(0.0),
        trace,
    })
}

fn init_point(shape: &ModelShape, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let params = match shape.kind() {
        ModelKind::Linear => models::init_linear(shape)?,
        ModelKind::Mlp { .. } => models::init_mlp(shape, rng.next_u64())?,
    };
    Ok(params.theta().to_vec())
}

fn perturb(theta: &mut [f64], std: f64, rng: &mut ChaCha8Rng) {
    for t in theta.iter_mut() {
        let noise: f64 = StandardNormal.sample(rng);
        *t += std * noise;
    }
}
