//! Certificate evaluators and confidence-budget composition.
//!
//! Every certificate family is evaluated in two layers. The public gap
//! evaluators (`mcallester_gap`, `kl_wass_gap`, ...) reproduce the printed
//! closed forms verbatim from their ingredient scalars and a global
//! confidence `delta`. Underneath, each family has a core parameterised by
//! an effective log-confidence `ln(1/delta_share)`; [`certify`] composes
//! those cores with an explicit delta ledger (bound event, Lipschitz event,
//! Monte-Carlo risk event), union-bound surcharges for variance grids,
//! lambda grids and data-dependent priors, and records every ingredient in a
//! [`BoundReport`] that can be re-evaluated from its own terms.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::Dataset;
use crate::lipschitz::{lipschitz_constant, LipschitzEstimate};
use crate::measures::{
    kl_gaussian, reverse_kl, squared_hellinger, tv_upper, w1_dirac_to_gaussian, w2_gaussian,
    GaussianMeasure, PosteriorKind, PosteriorMeasure,
};
use crate::models::{self, ModelKind, ModelParams, ModelShape};
use crate::{Error, Result};

/// Default Monte-Carlo sample count for estimating the risk of a Gaussian
/// posterior.
pub const MC_RISK_SAMPLES: usize = 1000;
/// Default constant of the prior-variance grid `c * exp(-j / b)`.
pub const PRIOR_GRID_C: f64 = 1.1;
/// Default resolution of the prior-variance grid.
pub const PRIOR_GRID_B: f64 = 100.0;

/// Certificate family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BoundFamily {
    #[serde(rename = "mcallester")]
    McAllester,
    #[serde(rename = "kl-wasserstein")]
    KlWasserstein,
    #[serde(rename = "reverse-kl")]
    ReverseKl,
    #[serde(rename = "hellinger")]
    Hellinger,
    #[serde(rename = "tv")]
    Tv,
    #[serde(rename = "catoni")]
    Catoni,
    #[serde(rename = "supermartingale-ub")]
    SupermartingaleUB,
    #[serde(rename = "catoni-fast-rate")]
    CatoniFastRate,
    #[serde(rename = "student")]
    Student,
}

impl BoundFamily {
    /// All families, in presentation order.
    pub const ALL: [BoundFamily; 9] = [
        BoundFamily::McAllester,
        BoundFamily::KlWasserstein,
        BoundFamily::ReverseKl,
        BoundFamily::Hellinger,
        BoundFamily::Tv,
        BoundFamily::Catoni,
        BoundFamily::SupermartingaleUB,
        BoundFamily::CatoniFastRate,
        BoundFamily::Student,
    ];

    #[must_use]
    pub fn name(&self) -> &'static str {
        match self {
            BoundFamily::McAllester => "mcallester",
            BoundFamily::KlWasserstein => "kl-wasserstein",
            BoundFamily::ReverseKl => "reverse-kl",
            BoundFamily::Hellinger => "hellinger",
            BoundFamily::Tv => "tv",
            BoundFamily::Catoni => "catoni",
            BoundFamily::SupermartingaleUB => "supermartingale-ub",
            BoundFamily::CatoniFastRate => "catoni-fast-rate",
            BoundFamily::Student => "student",
        }
    }

    /// Whether the family takes a free temperature parameter lambda.
    #[must_use]
    pub fn needs_lambda(&self) -> bool {
        matches!(
            self,
            BoundFamily::Catoni | BoundFamily::SupermartingaleUB | BoundFamily::CatoniFastRate
        )
    }

    /// Whether the family bounds the population risk directly rather than
    /// the generalisation gap.
    #[must_use]
    pub fn is_direct_risk_bound(&self) -> bool {
        matches!(self, BoundFamily::CatoniFastRate)
    }
}

impl fmt::Display for BoundFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BoundFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace('_', "-");
        let norm = match norm.as_str() {
            "kl-wass" => "kl-wasserstein",
            other => other,
        };
        BoundFamily::ALL
            .iter()
            .copied()
            .find(|f| f.name() == norm)
            .ok_or_else(|| Error::InvalidParameter {
                name: "family",
                reason: format!("unknown bound family {s:?}"),
            })
    }
}

/// What a confidence share is spent on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LedgerPurpose {
    /// The certificate inequality itself.
    Bound,
    /// The high-probability Lipschitz constant.
    Lipschitz,
    /// The Monte-Carlo estimate of the posterior risk.
    Hoeffding,
}

/// One entry of the confidence ledger.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub purpose: LedgerPurpose,
    pub share: f64,
}

/// Ordered split of the global confidence delta across failure events.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DeltaLedger {
    entries: Vec<LedgerEntry>,
}

impl DeltaLedger {
    fn new(entries: Vec<LedgerEntry>) -> Self {
        Self { entries }
    }

    #[must_use]
    pub fn entries(&self) -> &[LedgerEntry] {
        &self.entries
    }

    /// Share assigned to `purpose`, if any.
    #[must_use]
    pub fn share(&self, purpose: LedgerPurpose) -> Option<f64> {
        self.entries
            .iter()
            .find(|e| e.purpose == purpose)
            .map(|e| e.share)
    }

    #[must_use]
    pub fn total(&self) -> f64 {
        self.entries.iter().map(|e| e.share).sum()
    }

    /// Checks positivity of every share and that the ledger sums to the
    /// global delta up to 1e-12.
    pub fn check_sums_to(&self, delta: f64) -> Result<()> {
        if self.entries.iter().any(|e| e.share <= 0.0) {
            return Err(Error::Inconsistent(
                "delta ledger contains a nonpositive share".to_string(),
            ));
        }
        if (self.total() - delta).abs() > 1e-12 {
            return Err(Error::Inconsistent(format!(
                "delta ledger sums to {} instead of {delta}",
                self.total()
            )));
        }
        Ok(())
    }
}

/// Composes the confidence ledger for a certificate: two-way splits when
/// only two events are in play (bound + Lipschitz for a Dirac posterior,
/// bound + Monte-Carlo for a Gaussian posterior without a transport term),
/// and a three-way split when a Gaussian posterior also pays for the
/// Lipschitz event.
pub fn compose_delta_budget(
    family: BoundFamily,
    posterior_kind: PosteriorKind,
    uses_wasserstein: bool,
    uses_mc: bool,
    delta: f64,
) -> Result<DeltaLedger> {
    check_delta(delta)?;
    let entry = |purpose, share| LedgerEntry { purpose, share };
    match family {
        BoundFamily::Student => {
            if !uses_wasserstein || uses_mc {
                return Err(Error::Inconsistent(
                    "the student certificate pays for the bound and Lipschitz events only"
                        .to_string(),
                ));
            }
            Ok(DeltaLedger::new(vec![
                entry(LedgerPurpose::Bound, delta / 2.0),
                entry(LedgerPurpose::Lipschitz, delta / 2.0),
            ]))
        }
        BoundFamily::McAllester => {
            if posterior_kind != PosteriorKind::Gaussian || uses_wasserstein || !uses_mc {
                return Err(Error::Inconsistent(
                    "the divergence-only certificate needs a Gaussian posterior, Monte-Carlo \
                     risk, and no transport term"
                        .to_string(),
                ));
            }
            Ok(DeltaLedger::new(vec![
                entry(LedgerPurpose::Bound, delta / 2.0),
                entry(LedgerPurpose::Hoeffding, delta / 2.0),
            ]))
        }
        _ => match posterior_kind {
            PosteriorKind::Dirac => {
                if uses_mc {
                    return Err(Error::Inconsistent(
                        "a Dirac posterior has an exact empirical risk; no Monte-Carlo share"
                            .to_string(),
                    ));
                }
                if !uses_wasserstein {
                    return Err(Error::Inconsistent(
                        "a Dirac posterior always pays a transport term against a Gaussian"
                            .to_string(),
                    ));
                }
                Ok(DeltaLedger::new(vec![
                    entry(LedgerPurpose::Bound, delta / 2.0),
                    entry(LedgerPurpose::Lipschitz, delta / 2.0),
                ]))
            }
            PosteriorKind::Gaussian => {
                if !uses_mc {
                    return Err(Error::Inconsistent(
                        "a Gaussian posterior estimates its risk by Monte-Carlo".to_string(),
                    ));
                }
                if uses_wasserstein {
                    Ok(DeltaLedger::new(vec![
                        entry(LedgerPurpose::Bound, delta / 3.0),
                        entry(LedgerPurpose::Lipschitz, delta / 3.0),
                        entry(LedgerPurpose::Hoeffding, delta / 3.0),
                    ]))
                } else {
                    Ok(DeltaLedger::new(vec![
                        entry(LedgerPurpose::Bound, delta / 2.0),
                        entry(LedgerPurpose::Hoeffding, delta / 2.0),
                    ]))
                }
            }
        },
    }
}

// ---------------------------------------------------------------------------
// Term keys of a BoundReport. The recompute path understands exactly these.
// ---------------------------------------------------------------------------

/// Names of the entries a [`BoundReport`] stores in its `terms` map.
pub mod term {
    /// Mean empirical-risk term (exact for Dirac, Monte-Carlo for Gaussian).
    pub const RISK: &str = "risk";
    /// Upward Hoeffding correction of the Monte-Carlo risk.
    pub const MC_CORRECTION: &str = "mc_correction";
    /// Effective log-confidence ln(1/delta_bound) plus all surcharges.
    pub const LOG_CONF: &str = "log_conf";
    /// KL(eta || prior).
    pub const KL: &str = "kl";
    /// Reverse KL divergence of eta from the prior.
    pub const RKL: &str = "rkl";
    /// Squared Hellinger distance between eta and the prior.
    pub const H2: &str = "h2";
    /// Total variation distance between eta and the prior.
    pub const TV: &str = "tv";
    /// Transport distance between the posterior and eta.
    pub const W1: &str = "w1";
    /// Product of the gap constant and the transport distance.
    pub const W_GAMMA: &str = "w_gamma";
    /// Gap Lipschitz constant used by the linear-in-W families.
    pub const LIP_GAP: &str = "lip_gap";
    /// Squared-gap Lipschitz constant used inside the radicals.
    pub const LIP_GAP_SQ: &str = "lip_gap_sq";
    /// Temperature parameter of the Catoni-style families.
    pub const LAMBDA: &str = "lambda";
    /// Second-moment upper bound of the supermartingale certificate.
    pub const SECOND_MOMENT: &str = "second_moment";
    /// Scale of the Student certificate.
    pub const SIGMA: &str = "sigma";
    /// Monte-Carlo transport factor of the Student certificate.
    pub const F_PD: &str = "f_pd";
    /// Squared mean shift of the Student certificate.
    pub const MEAN_DIST_SQ: &str = "mean_dist_sq";
    /// Assembled gap term (informational; the value is risk + gap).
    pub const GAP: &str = "gap";
    /// Maximised surrogate behind the Lipschitz estimate (informational).
    pub const LIP_SURROGATE: &str = "lip_surrogate";
    /// Per-example loss Lipschitz constant (informational).
    pub const LIP_LOSS: &str = "lip_loss";
    /// High-probability gap constant at its ledger share (informational).
    pub const LIP_ESTIMATE: &str = "lip_estimate";
    /// Prior variance actually certified against (informational).
    pub const PRIOR_VARIANCE: &str = "prior_variance";
    /// Grid index of a snapped prior variance (informational).
    pub const PRIOR_GRID_J: &str = "prior_grid_j";
    /// Standard error of the Monte-Carlo Student factor (informational).
    pub const F_PD_STD_ERROR: &str = "f_pd_std_error";
}

/// Where a report came from: data fingerprint, RNG seeds, configuration hash.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub dataset_fingerprint: String,
    pub seeds: BTreeMap<String, u64>,
    pub config_hash: String,
}

/// A full numerical certificate: the family, its ingredient terms, the
/// confidence ledger, and the final value. `value` is reproducible from
/// `terms` via [`BoundReport::recompute`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub family: BoundFamily,
    pub m: usize,
    pub delta: f64,
    pub delta_ledger: DeltaLedger,
    pub terms: BTreeMap<String, f64>,
    pub value: f64,
    pub notes: Vec<String>,
    pub provenance: Provenance,
}

impl BoundReport {
    /// Re-evaluates the family formula from the stored terms.
    pub fn recompute(&self) -> Result<f64> {
        recompute_value(self.family, self.m, &self.terms)
    }

    /// Serialises the report as pretty JSON (deterministic key order).
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map_err(|e| Error::Inconsistent(format!("report serialisation failed: {e}")))
    }

    /// Parses a report back from JSON.
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text)
            .map_err(|e| Error::Inconsistent(format!("report parse failed: {e}")))
    }
}

fn require(terms: &BTreeMap<String, f64>, key: &str) -> Result<f64> {
    terms
        .get(key)
        .copied()
        .ok_or_else(|| Error::Inconsistent(format!("report is missing the {key:?} term")))
}

fn optional(terms: &BTreeMap<String, f64>, key: &str) -> f64 {
    terms.get(key).copied().unwrap_or(0.0)
}

fn recompute_value(family: BoundFamily, m: usize, terms: &BTreeMap<String, f64>) -> Result<f64> {
    let risk_part = optional(terms, term::RISK) + optional(terms, term::MC_CORRECTION);
    let lc = require(terms, term::LOG_CONF)?;
    let value = match family {
        BoundFamily::McAllester => risk_part + sqrt_core(0.0, require(terms, term::KL)?, m, lc),
        BoundFamily::KlWasserstein => {
            let transport = optional(terms, term::LIP_GAP_SQ) * optional(terms, term::W1);
            risk_part + sqrt_core(transport, require(terms, term::KL)?, m, lc)
        }
        BoundFamily::ReverseKl => {
            risk_part + reverse_kl_core(optional(terms, term::W_GAMMA), require(terms, term::RKL)?, m, lc)
        }
        BoundFamily::Hellinger => {
            risk_part + hellinger_core(optional(terms, term::W_GAMMA), require(terms, term::H2)?, m, lc)
        }
        BoundFamily::Tv => {
            risk_part + tv_core(optional(terms, term::W_GAMMA), require(terms, term::TV)?, m, lc)
        }
        BoundFamily::Catoni => {
            risk_part
                + catoni_core(
                    optional(terms, term::LIP_GAP),
                    optional(terms, term::W1),
                    require(terms, term::KL)?,
                    require(terms, term::LAMBDA)?,
                    m,
                    lc,
                )
        }
        BoundFamily::SupermartingaleUB => {
            risk_part
                + supermartingale_core(
                    optional(terms, term::LIP_GAP),
                    optional(terms, term::W1),
                    require(terms, term::KL)?,
                    require(terms, term::LAMBDA)?,
                    lc,
                    require(terms, term::SECOND_MOMENT)?,
                )
        }
        BoundFamily::CatoniFastRate => fast_rate_core(
            risk_part,
            optional(terms, term::LIP_GAP),
            optional(terms, term::W1),
            require(terms, term::KL)?,
            require(terms, term::LAMBDA)?,
            m,
            lc,
        ),
        BoundFamily::Student => {
            let sigma = require(terms, term::SIGMA)?;
            let transport = require(terms, term::LIP_GAP_SQ)? * sigma * require(terms, term::F_PD)?;
            let shift = require(terms, term::MEAN_DIST_SQ)? / (2.0 * sigma * m as f64);
            risk_part + sqrt_core(transport + shift, 0.0, m, lc)
        }
    };
    Ok(value)
}

// ---------------------------------------------------------------------------
// Family cores, parameterised by the effective log-confidence.
// ---------------------------------------------------------------------------

fn sqrt_core(transport: f64, kl: f64, m: usize, log_conf: f64) -> f64 {
    let mf = m as f64;
    (transport + (kl + (2.0 * mf.sqrt()).ln() + log_conf) / (2.0 * mf)).sqrt()
}

fn reverse_kl_core(w_gamma: f64, rkl: f64, m: usize, log_conf: f64) -> f64 {
    let mf = m as f64;
    2.0 * w_gamma
        + 2.0 * rkl
        + (1.0 / mf).sqrt()
        + (1.0 + 1.0 / mf).ln() * (2.0 * mf * log_conf).sqrt()
}

fn hellinger_core(w_gamma: f64, h2: f64, m: usize, log_conf: f64) -> f64 {
    let mf = m as f64;
    2.0 * w_gamma + 2.0 * h2 + (1.0 / mf).sqrt() + 2.0 / (mf + 1.0) * (2.0 * mf * log_conf).sqrt()
}

fn tv_core(w_gamma: f64, tv: f64, m: usize, log_conf: f64) -> f64 {
    let mf = m as f64;
    w_gamma + tv + (1.0 / (4.0 * mf)).sqrt() + (log_conf / (2.0 * mf)).sqrt()
}

fn catoni_core(lip: f64, w1: f64, kl: f64, lambda: f64, m: usize, log_conf: f64) -> f64 {
    2.0 * lip * w1 + (kl + log_conf) / lambda + lambda / (2.0 * m as f64)
}

/// The temperature here is the derivation's lambda multiplied by m; the
/// printed statement absorbs that normalisation, so no 1/m appears.
fn supermartingale_core(
    lip: f64,
    w1: f64,
    kl: f64,
    lambda: f64,
    log_conf: f64,
    second_moment: f64,
) -> f64 {
    (2.0 + lambda) * lip * w1 + (kl + log_conf) / lambda + lambda / 2.0 * second_moment
}

fn fast_rate_core(
    emp_risk: f64,
    lip: f64,
    w1: f64,
    kl: f64,
    lambda: f64,
    m: usize,
    log_conf: f64,
) -> f64 {
    (emp_risk + (2.0 + lambda) * lip * w1 + (kl + log_conf) / (lambda * m as f64))
        / (1.0 - lambda / 2.0)
}

// ---------------------------------------------------------------------------
// Validation helpers.
// ---------------------------------------------------------------------------

fn check_delta(delta: f64) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::invalid("delta", "must lie in (0, 1)"));
    }
    Ok((1.0 / delta).ln())
}

fn check_nonneg(value: f64, name: &'static str) -> Result<f64> {
    if !value.is_finite() || value < 0.0 {
        return Err(Error::invalid(name, "must be finite and nonnegative"));
    }
    Ok(value)
}

fn check_m(m: usize) -> Result<()> {
    if m == 0 {
        return Err(Error::invalid("m", "sample size must be positive"));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Public printed-form evaluators.
// ---------------------------------------------------------------------------

/// Divergence-only gap: `sqrt((kl + ln(2 sqrt(m) / delta)) / (2m))`.
pub fn mcallester_gap(kl: f64, m: usize, delta: f64) -> Result<f64> {
    check_nonneg(kl, "kl")?;
    check_m(m)?;
    let lc = check_delta(delta)?;
    Ok(sqrt_core(0.0, kl, m, lc))
}

/// Interpolated gap: `sqrt(lip w1 + (kl + ln(4 sqrt(m) / delta)) / (2m))`.
/// `lip` is the Lipschitz constant of the squared gap.
pub fn kl_wass_gap(lip: f64, w1: f64, kl: f64, m: usize, delta: f64) -> Result<f64> {
    check_nonneg(lip, "lip")?;
    check_nonneg(w1, "w1")?;
    check_nonneg(kl, "kl")?;
    check_m(m)?;
    check_delta(delta)?;
    Ok(sqrt_core(lip * w1, kl, m, (2.0 / delta).ln()))
}

/// Reverse-KL gap:
/// `2 w_gamma + 2 rkl + sqrt(1/m) + ln(1 + 1/m) sqrt(2 m ln(1/delta))`.
pub fn reverse_kl_gap(w_gamma: f64, rkl: f64, m: usize, delta: f64) -> Result<f64> {
    check_nonneg(w_gamma, "w_gamma")?;
    check_nonneg(rkl, "rkl")?;
    check_m(m)?;
    let lc = check_delta(delta)?;
    Ok(reverse_kl_core(w_gamma, rkl, m, lc))
}

/// Squared-Hellinger gap:
/// `2 w_gamma + 2 h2 + sqrt(1/m) + (2/(m+1)) sqrt(2 m ln(1/delta))`.
pub fn hellinger_gap(w_gamma: f64, h2: f64, m: usize, delta: f64) -> Result<f64> {
    check_nonneg(w_gamma, "w_gamma")?;
    check_nonneg(h2, "h2")?;
    check_m(m)?;
    let lc = check_delta(delta)?;
    Ok(hellinger_core(w_gamma, h2, m, lc))
}

/// Total-variation gap:
/// `w_gamma + tv + sqrt(1/(4m)) + sqrt(ln(1/delta) / (2m))`.
pub fn tv_gap(w_gamma: f64, tv: f64, m: usize, delta: f64) -> Result<f64> {
    check_nonneg(w_gamma, "w_gamma")?;
    check_nonneg(tv, "tv")?;
    if tv > 1.0 {
        return Err(Error::invalid("tv", "total variation is at most 1"));
    }
    check_m(m)?;
    let lc = check_delta(delta)?;
    Ok(tv_core(w_gamma, tv, m, lc))
}

/// Catoni-style gap: `2 lip w1 + (kl + ln(2/delta)) / lambda + lambda / (2m)`.
pub fn catoni_gap(lip: f64, w1: f64, kl: f64, lambda: f64, m: usize, delta: f64) -> Result<f64> {
    check_nonneg(lip, "lip")?;
    check_nonneg(w1, "w1")?;
    check_nonneg(kl, "kl")?;
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::invalid("lambda", "must be positive"));
    }
    check_m(m)?;
    check_delta(delta)?;
    Ok(catoni_core(lip, w1, kl, lambda, m, (2.0 / delta).ln()))
}

/// Supermartingale gap:
/// `(2 + lambda) lip w1 + (kl + ln(2/delta)) / lambda + (lambda/2) second_moment`.
/// The caller passes lambda already scaled by m (the derivation's `m lambda`).
pub fn supermartingale_gap(
    lip: f64,
    w1: f64,
    kl: f64,
    lambda: f64,
    m: usize,
    delta: f64,
    second_moment: f64,
) -> Result<f64> {
    check_nonneg(lip, "lip")?;
    check_nonneg(w1, "w1")?;
    check_nonneg(kl, "kl")?;
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::invalid("lambda", "must be positive"));
    }
    if !(0.0..=1.0).contains(&second_moment) {
        return Err(Error::invalid("second_moment", "must lie in [0, 1] for a [0,1] loss"));
    }
    check_m(m)?;
    check_delta(delta)?;
    Ok(supermartingale_core(lip, w1, kl, lambda, (2.0 / delta).ln(), second_moment))
}

/// Fast-rate population-risk bound (not a gap bound):
/// `(emp_risk + (2 + lambda) lip w1 + (kl + ln(2/delta)) / (lambda m)) / (1 - lambda/2)`.
pub fn catoni_fast_rate(
    emp_risk: f64,
    lip: f64,
    w1: f64,
    kl: f64,
    lambda: f64,
    m: usize,
    delta: f64,
) -> Result<f64> {
    check_nonneg(emp_risk, "emp_risk")?;
    check_nonneg(lip, "lip")?;
    check_nonneg(w1, "w1")?;
    check_nonneg(kl, "kl")?;
    if !(lambda > 0.0 && lambda < 2.0) {
        return Err(Error::invalid("lambda", "must lie in (0, 2)"));
    }
    check_m(m)?;
    check_delta(delta)?;
    Ok(fast_rate_core(emp_risk, lip, w1, kl, lambda, m, (2.0 / delta).ln()))
}

/// Student-posterior gap:
/// `sqrt(lip sigma f_pd + mean_dist_sq / (2 sigma m) + ln(4 sqrt(m)/delta) / (2m))`.
/// `lip` is the Lipschitz constant of the squared gap. The mean-shift term
/// divides by sigma, not sigma squared, matching the stated certificate.
pub fn student_bound(
    lip: f64,
    sigma: f64,
    f_pd: f64,
    mean_dist_sq: f64,
    m: usize,
    delta: f64,
) -> Result<f64> {
    check_nonneg(lip, "lip")?;
    check_nonneg(f_pd, "f_pd")?;
    check_nonneg(mean_dist_sq, "mean_dist_sq")?;
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::invalid("sigma", "must be positive"));
    }
    check_m(m)?;
    check_delta(delta)?;
    let shift = mean_dist_sq / (2.0 * sigma * m as f64);
    Ok(sqrt_core(lip * sigma * f_pd + shift, 0.0, m, (2.0 / delta).ln()))
}

/// Degrees of freedom of the Student surrogate for a tail index
/// `alpha` in (1, 2): `p = alpha / (2 - alpha)`.
pub fn student_p_from_tail_index(alpha: f64) -> Result<f64> {
    if !(alpha > 1.0 && alpha < 2.0) {
        return Err(Error::invalid("alpha", "tail index must lie in (1, 2)"));
    }
    Ok(alpha / (2.0 - alpha))
}

/// Heavy-tail interpolation factor `d ln(d) (2 - alpha) ln(1/(2 - alpha))`,
/// zero at `alpha == 2`.
pub fn heavy_tail_factor(alpha: f64, d: usize) -> Result<f64> {
    if !(alpha > 1.0 && alpha <= 2.0) {
        return Err(Error::invalid("alpha", "tail index must lie in (1, 2]"));
    }
    if d < 2 {
        return Err(Error::invalid("d", "dimension must be at least 2"));
    }
    if alpha == 2.0 {
        return Ok(0.0);
    }
    let df = d as f64;
    Ok(df * df.ln() * (2.0 - alpha) * (1.0 / (2.0 - alpha)).ln())
}

// ---------------------------------------------------------------------------
// Monte-Carlo factors.
// ---------------------------------------------------------------------------

/// Monte-Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McFactor {
    pub value: f64,
    pub std_error: f64,
}

/// Monte-Carlo evaluation of `sqrt(d) E|sqrt(p/u) - 1|` with `u ~ chi^2_p`.
/// Deterministic per seed; the sqrt(d) factor scales both the value and the
/// reported standard error.
pub fn mc_f_factor(p: f64, d: usize, n_samples: usize, seed: u64) -> Result<McFactor> {
    if !(p > 1.0 && p.is_finite()) {
        return Err(Error::invalid("p", "degrees of freedom must exceed 1"));
    }
    if d == 0 {
        return Err(Error::invalid("d", "dimension must be positive"));
    }
    if n_samples < 1000 {
        return Err(Error::invalid("n_samples", "need at least 1000 samples"));
    }
    let chi = ChiSquared::new(p)
        .map_err(|e| Error::invalid("p", format!("chi-squared rejected the parameter: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..n_samples {
        let u: f64 = chi.sample(&mut rng).max(f64::MIN_POSITIVE);
        let g = ((p / u).sqrt() - 1.0).abs();
        sum += g;
        sum_sq += g * g;
    }
    let n = n_samples as f64;
    let mean = sum / n;
    let var = ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0);
    let root_d = (d as f64).sqrt();
    Ok(McFactor {
        value: root_d * mean,
        std_error: root_d * (var / n).sqrt(),
    })
}

/// Monte-Carlo estimate of the posterior's empirical risk with an upward
/// Hoeffding correction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McRisk {
    /// Mean risk over the posterior draws (exact for a Dirac posterior).
    pub mean: f64,
    /// Upward correction (zero for a Dirac posterior).
    pub correction: f64,
    /// `mean + correction`.
    pub value: f64,
}

/// Estimates `E_{h ~ posterior} empirical_risk(h)` on `data`. A Dirac
/// posterior is evaluated exactly with zero correction and consumes no
/// confidence; a Gaussian posterior is sampled `t` times by reparametrised
/// draws and corrected by `sqrt(2 ln(1/delta) / t)` (the loose constant kept
/// for fidelity), or `sqrt(ln(1/delta) / (2t))` in strict mode.
#[allow(clippy::too_many_arguments)]
pub fn mc_expected_risk(
    posterior: &PosteriorMeasure,
    shape: &ModelShape,
    data: &Dataset,
    t: usize,
    delta: f64,
    seed: u64,
    alpha: f64,
    strict: bool,
) -> Result<McRisk> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if posterior.dim() != shape.param_count() {
        return Err(Error::DimensionMismatch {
            expected: shape.param_count(),
            got: posterior.dim(),
        });
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::invalid("alpha", "margin scale must be positive"));
    }
    match posterior {
        PosteriorMeasure::Dirac(point) => {
            let params = ModelParams::new(shape.clone(), point.point().to_vec())?;
            let mean = models::empirical_risk(&params, data, alpha)?;
            Ok(McRisk {
                mean,
                correction: 0.0,
                value: mean,
            })
        }
        PosteriorMeasure::Gaussian(g) => {
            if t == 0 {
                return Err(Error::invalid("t", "need at least one posterior sample"));
            }
            let lc = check_delta(delta)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut sum = 0.0;
            let mut theta = vec![0.0; g.dim()];
            for _ in 0..t {
                for (out, mu) in theta.iter_mut().zip(g.mean()) {
                    let noise: f64 = StandardNormal.sample(&mut rng);
                    *out = mu + g.std() * noise;
                }
                let params = ModelParams::new(shape.clone(), theta.clone())?;
                sum += models::empirical_risk(&params, data, alpha)?;
            }
            let mean = sum / t as f64;
            let correction = if strict {
                (lc / (2.0 * t as f64)).sqrt()
            } else {
                (2.0 * lc / t as f64).sqrt()
            };
            Ok(McRisk {
                mean,
                correction,
                value: mean + correction,
            })
        }
    }
}

/// Mean squared loss of the posterior on `data`, exact for Dirac and
/// Monte-Carlo for Gaussian. This is an empirical plug-in for the population
/// second moment and carries no guarantee of its own.
fn mc_second_moment(
    posterior: &PosteriorMeasure,
    shape: &ModelShape,
    data: &Dataset,
    t: usize,
    seed: u64,
    alpha: f64,
) -> Result<f64> {
    let sq_risk = |params: &ModelParams| -> Result<f64> {
        let mut acc = 0.0;
        for i in 0..data.len() {
            let scores = models::predict(params, data.row(i))?;
            let loss = models::margin_loss(&scores, data.label(i), alpha)?;
            acc += loss * loss;
        }
        Ok(acc / data.len() as f64)
    };
    match posterior {
        PosteriorMeasure::Dirac(point) => {
            let params = ModelParams::new(shape.clone(), point.point().to_vec())?;
            sq_risk(&params)
        }
        PosteriorMeasure::Gaussian(g) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut sum = 0.0;
            let mut theta = vec![0.0; g.dim()];
            for _ in 0..t.max(1) {
                for (out, mu) in theta.iter_mut().zip(g.mean()) {
                    let noise: f64 = StandardNormal.sample(&mut rng);
                    *out = mu + g.std() * noise;
                }
                let params = ModelParams::new(shape.clone(), theta.clone())?;
                sum += sq_risk(&params)?;
            }
            Ok(sum / t.max(1) as f64)
        }
    }
}

// ---------------------------------------------------------------------------
// Union-bound surcharges.
// ---------------------------------------------------------------------------

/// Candidate grid variances adjacent to `sigma_p_sq` on the grid
/// `c exp(-j / b)`, j >= 1. A variance already on the grid returns a single
/// candidate; otherwise the two straddling grid points are returned.
pub fn prior_grid_candidates(sigma_p_sq: f64, c: f64, b: f64) -> Result<Vec<(u64, f64)>> {
    if !(c > 0.0 && c.is_finite()) || !(b > 0.0 && b.is_finite()) {
        return Err(Error::invalid("grid", "grid constants must be positive"));
    }
    if !(sigma_p_sq > 0.0) || sigma_p_sq >= c {
        return Err(Error::invalid("sigma_p_sq", "prior variance must lie in (0, c)"));
    }
    let grid_value = |j: u64| c * (-(j as f64) / b).exp();
    let j_real = b * (c / sigma_p_sq).ln();
    let rounded = j_real.round();
    if (j_real - rounded).abs() < 1e-9 && rounded >= 1.0 {
        let j = rounded as u64;
        return Ok(vec![(j, grid_value(j))]);
    }
    let j_lo = (j_real.floor().max(1.0)) as u64;
    let j_hi = (j_real.ceil().max(1.0)) as u64;
    if j_lo == j_hi {
        Ok(vec![(j_lo, grid_value(j_lo))])
    } else {
        Ok(vec![(j_lo, grid_value(j_lo)), (j_hi, grid_value(j_hi))])
    }
}

/// Union-bound penalty charged for certifying against the grid variance:
/// `2 ln(b ln(c / grid_var)) + ln(pi^2 / (6 delta))`. Replaces `ln(1/delta)`
/// in the bound-event share.
fn prior_grid_penalty(grid_var: f64, c: f64, b: f64, delta: f64) -> f64 {
    2.0 * (b * (c / grid_var).ln()).ln()
        + (std::f64::consts::PI * std::f64::consts::PI / (6.0 * delta)).ln()
}

/// Snaps a prior variance to the discretised grid and prices the union
/// bound. Both straddling grid points are valid certificates; the caller's
/// `bound_of(grid_var, penalty)` evaluates the final certified value, and
/// the candidate with the smaller value wins.
pub fn prior_variance_penalty(
    sigma_p_sq: f64,
    c: f64,
    b: f64,
    delta: f64,
    mut bound_of: impl FnMut(f64, f64) -> f64,
) -> Result<(f64, f64)> {
    check_delta(delta)?;
    let mut best: Option<(f64, f64, f64)> = None;
    for (_, grid_var) in prior_grid_candidates(sigma_p_sq, c, b)? {
        let penalty = prior_grid_penalty(grid_var, c, b, delta);
        let value = bound_of(grid_var, penalty);
        if best.is_none_or(|(v, _, _)| value < v) {
            best = Some((value, grid_var, penalty));
        }
    }
    let (_, grid_var, penalty) = best.expect("grid candidates are never empty");
    Ok((grid_var, penalty))
}

/// Additive surcharge on every `ln(1/delta)` for a prior selected among
/// `t_epochs` training checkpoints: `ln(t_epochs)`.
pub fn data_dependent_prior_penalty(t_epochs: usize, delta: f64) -> Result<f64> {
    if t_epochs == 0 {
        return Err(Error::invalid("t_epochs", "need at least one epoch"));
    }
    check_delta(delta)?;
    Ok((t_epochs as f64).ln())
}

// ---------------------------------------------------------------------------
// Certificate assembly.
// ---------------------------------------------------------------------------

/// Prior-variance grid configuration for [`certify`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorGridConfig {
    pub c: f64,
    pub b: f64,
}

impl Default for PriorGridConfig {
    fn default() -> Self {
        Self {
            c: PRIOR_GRID_C,
            b: PRIOR_GRID_B,
        }
    }
}

/// Options of [`certify`] beyond the measures themselves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertifyOptions {
    /// Fixed temperature for the Catoni-style families.
    pub lambda: Option<f64>,
    /// Temperature grid; charges a ln(grid size) union-bound surcharge and
    /// keeps the best candidate.
    pub lambda_grid: Option<Vec<f64>>,
    /// Caller-supplied upper bound on the posterior's second moment of the
    /// loss (supermartingale family only); defaults to the trivial bound 1.
    pub second_moment: Option<f64>,
    /// Replace the second-moment bound by an empirical plug-in estimate.
    /// The resulting certificate is NOT rigorous and is flagged as such.
    pub second_moment_empirical: bool,
    /// Monte-Carlo draws for the Gaussian-posterior risk.
    pub mc_samples: usize,
    /// Seed of the Monte-Carlo risk stream.
    pub mc_seed: u64,
    /// Use the tight Hoeffding constant for the Monte-Carlo correction.
    pub strict_mc: bool,
    /// Snap the prior variance to the discretised grid and charge the
    /// union-bound penalty (for priors whose variance was tuned).
    pub prior_grid: Option<PriorGridConfig>,
    /// Number of epochs the prior checkpoint was selected from; charges the
    /// ln(T) surcharge for a data-dependent prior.
    pub prior_epochs: Option<usize>,
    /// Whether MLP weight matrices were kept Frobenius-projected during
    /// training, which validates the closed-form loss Lipschitz constant as
    /// a cap on the estimated gap constant.
    pub frobenius_enforced: bool,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        Self {
            lambda: None,
            lambda_grid: None,
            second_moment: None,
            second_moment_empirical: false,
            mc_samples: MC_RISK_SAMPLES,
            mc_seed: 0,
            strict_mc: false,
            prior_grid: None,
            prior_epochs: None,
            frobenius_enforced: false,
        }
    }
}

#[derive(Serialize)]
struct ConfigEcho<'a> {
    family: BoundFamily,
    delta: f64,
    shape: &'a ModelShape,
    options: &'a CertifyOptions,
}

fn config_hash(family: BoundFamily, delta: f64, shape: &ModelShape, opts: &CertifyOptions) -> String {
    let echo = ConfigEcho {
        family,
        delta,
        shape,
        options: opts,
    };
    let json = serde_json::to_string(&echo).expect("config echo serialises");
    let mut hasher = Sha256::new();
    hasher.update(json.as_bytes());
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Deterministic loss Lipschitz cap on the estimated gap constant, when the
/// closed form applies (always for the linear model; for the MLP only under
/// the Frobenius constraint).
pub(crate) fn deterministic_gap_cap(shape: &ModelShape, frobenius_enforced: bool) -> Option<f64> {
    match shape.kind() {
        ModelKind::Linear => Some(2.0 * models::loss_lipschitz_const(shape)),
        ModelKind::Mlp { .. } if frobenius_enforced => {
            Some(2.0 * models::loss_lipschitz_const(shape))
        }
        ModelKind::Mlp { .. } => None,
    }
}

/// Assembles the full certificate for a posterior/prior pair under the
/// requested family, with every ingredient, confidence share, and surcharge
/// recorded in the returned report. The Student family is assembled from
/// scalar ingredients via [`student_report`] instead.
#[allow(clippy::too_many_arguments)]
pub fn certify(
    family: BoundFamily,
    posterior: &PosteriorMeasure,
    prior: &GaussianMeasure,
    eta: Option<&GaussianMeasure>,
    shape: &ModelShape,
    data: &Dataset,
    lipschitz: Option<&LipschitzEstimate>,
    delta: f64,
    opts: &CertifyOptions,
) -> Result<BoundReport> {
    check_delta(delta)?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if posterior.dim() != shape.param_count() {
        return Err(Error::DimensionMismatch {
            expected: shape.param_count(),
            got: posterior.dim(),
        });
    }
    if prior.dim() != posterior.dim() {
        return Err(Error::DimensionMismatch {
            expected: posterior.dim(),
            got: prior.dim(),
        });
    }
    if data.feature_dim() != shape.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: shape.input_dim(),
            got: data.feature_dim(),
        });
    }
    if family == BoundFamily::Student {
        return Err(Error::Inconsistent(
            "the student certificate is assembled from scalar ingredients; use student_report"
                .to_string(),
        ));
    }

    let alpha = shape.margin_scale();
    let m = data.len();
    let mut notes: Vec<String> = Vec::new();

    // Resolve the interpolation measure.
    let eta_measure: Option<GaussianMeasure> = match family {
        BoundFamily::McAllester => {
            if eta.is_some() {
                return Err(Error::Inconsistent(
                    "the divergence-only certificate takes no interpolation measure".to_string(),
                ));
            }
            match posterior {
                PosteriorMeasure::Gaussian(g) => Some(g.clone()),
                PosteriorMeasure::Dirac(_) => {
                    return Err(Error::Inconsistent(
                        "a Dirac posterior has no finite divergence to a Gaussian prior; \
                         use a transport-aware family"
                            .to_string(),
                    ));
                }
            }
        }
        _ => match (eta, posterior) {
            (Some(e), _) => {
                if e.dim() != posterior.dim() {
                    return Err(Error::DimensionMismatch {
                        expected: posterior.dim(),
                        got: e.dim(),
                    });
                }
                Some(e.clone())
            }
            (None, PosteriorMeasure::Gaussian(g)) => Some(g.clone()),
            (None, PosteriorMeasure::Dirac(_)) => {
                return Err(Error::Inconsistent(
                    "a Dirac posterior needs an explicit interpolation measure".to_string(),
                ));
            }
        },
    };
    let eta_ref = eta_measure.as_ref().expect("eta resolved for every family");

    // Transport distance between the posterior and eta.
    let w_dist = match (family, posterior) {
        (BoundFamily::McAllester, _) => 0.0,
        (_, PosteriorMeasure::Dirac(d)) => w1_dirac_to_gaussian(d, eta_ref)?,
        (_, PosteriorMeasure::Gaussian(g)) => w2_gaussian(g, eta_ref)?,
    };
    let uses_wasserstein = w_dist > 0.0;
    let uses_mc = matches!(posterior, PosteriorMeasure::Gaussian(_));

    let ledger = compose_delta_budget(family, posterior.kind(), uses_wasserstein, uses_mc, delta)?;
    ledger.check_sums_to(delta)?;
    let delta_bound = ledger
        .share(LedgerPurpose::Bound)
        .expect("every ledger carries a bound share");

    // Temperature(s).
    let (lambdas, lambda_surcharge) = resolve_lambdas(family, opts, &mut notes)?;

    // Risk term.
    let mut seeds = BTreeMap::new();
    let (risk_mean, mc_correction) = match posterior {
        PosteriorMeasure::Dirac(point) => {
            let params = ModelParams::new(shape.clone(), point.point().to_vec())?;
            (models::empirical_risk(&params, data, alpha)?, None)
        }
        PosteriorMeasure::Gaussian(_) => {
            let share = ledger
                .share(LedgerPurpose::Hoeffding)
                .expect("gaussian ledger carries a hoeffding share");
            let mc = mc_expected_risk(
                posterior,
                shape,
                data,
                opts.mc_samples,
                share,
                opts.mc_seed,
                alpha,
                opts.strict_mc,
            )?;
            seeds.insert("mc_risk".to_string(), opts.mc_seed);
            if opts.strict_mc {
                notes.push(
                    "monte-carlo risk correction uses the tight Hoeffding constant".to_string(),
                );
            }
            (mc.mean, Some(mc.correction))
        }
    };

    // Gap Lipschitz constant at its ledger share.
    let mut lip_terms: BTreeMap<String, f64> = BTreeMap::new();
    let lip_gap: Option<f64> = if uses_wasserstein {
        let est = lipschitz.ok_or_else(|| {
            Error::Inconsistent(format!(
                "the {family} certificate has a transport term and needs a Lipschitz estimate"
            ))
        })?;
        if est.m != m {
            return Err(Error::Inconsistent(format!(
                "Lipschitz estimate was computed on m={} but the certificate sample has m={m}",
                est.m
            )));
        }
        let share = ledger
            .share(LedgerPurpose::Lipschitz)
            .expect("wasserstein ledger carries a lipschitz share");
        let at_share = lipschitz_constant(est.surrogate, est.loss_lip, est.m, share)?.value;
        let capped = match deterministic_gap_cap(shape, opts.frobenius_enforced) {
            Some(cap) if cap < at_share => {
                notes.push(
                    "deterministic loss constant capped the estimated gap constant".to_string(),
                );
                cap
            }
            Some(_) => at_share,
            None => {
                notes.push(
                    "deterministic loss-Lipschitz cap skipped: mlp weights not \
                     Frobenius-constrained"
                        .to_string(),
                );
                at_share
            }
        };
        lip_terms.insert(term::LIP_SURROGATE.to_string(), est.surrogate);
        lip_terms.insert(term::LIP_LOSS.to_string(), est.loss_lip);
        lip_terms.insert(term::LIP_ESTIMATE.to_string(), at_share);
        Some(capped)
    } else {
        None
    };

    // Second moment (supermartingale family only).
    let second_moment = resolve_second_moment(
        family,
        posterior,
        shape,
        data,
        alpha,
        opts,
        &mut notes,
        &mut seeds,
    )?;

    // Prior candidates: either the prior as given, or its grid snaps.
    let ln_t = match opts.prior_epochs {
        Some(t) => {
            let surcharge = data_dependent_prior_penalty(t, delta)?;
            notes.push(format!(
                "data-dependent prior selected over T={t} epochs; ln(T) surcharge added to the \
                 log-confidence"
            ));
            surcharge
        }
        None => 0.0,
    };
    let surcharges = ln_t + lambda_surcharge;
    let mut prior_candidates: Vec<(GaussianMeasure, f64, Option<u64>)> = Vec::new();
    if let Some(grid) = opts.prior_grid {
        for (j, grid_var) in prior_grid_candidates(prior.variance(), grid.c, grid.b)? {
            let penalty = prior_grid_penalty(grid_var, grid.c, grid.b, delta_bound);
            let snapped = GaussianMeasure::new(prior.mean().to_vec(), grid_var.sqrt())?;
            prior_candidates.push((snapped, penalty + surcharges, Some(j)));
        }
    } else {
        prior_candidates.push((prior.clone(), (1.0 / delta_bound).ln() + surcharges, None));
    }

    // Assemble the best candidate.
    let risk_part = risk_mean + mc_correction.unwrap_or(0.0);
    let mut best: Option<Assembled> = None;
    for (prior_c, log_conf, grid_j) in &prior_candidates {
        for &lambda in &lambdas {
            let assembled = assemble(
                family,
                eta_ref,
                prior_c,
                w_dist,
                lip_gap,
                lambda,
                second_moment,
                risk_part,
                m,
                *log_conf,
                *grid_j,
            )?;
            if best.as_ref().is_none_or(|b| assembled.value < b.value) {
                best = Some(assembled);
            }
        }
    }
    let chosen = best.expect("at least one candidate is always assembled");
    if let Some(j) = chosen.grid_j {
        notes.push(format!(
            "prior variance snapped to grid index j={j}; union-bound penalty replaces the \
             bound-share log-confidence"
        ));
    }
    if !chosen.value.is_finite() {
        return Err(Error::NonFinite {
            context: "certified bound value".to_string(),
        });
    }

    // Terms.
    let mut terms = chosen.terms;
    terms.extend(lip_terms);
    terms.insert(term::RISK.to_string(), risk_mean);
    if let Some(corr) = mc_correction {
        terms.insert(term::MC_CORRECTION.to_string(), corr);
    }
    terms.insert(term::LOG_CONF.to_string(), chosen.log_conf);
    if family != BoundFamily::McAllester {
        terms.insert(term::W1.to_string(), w_dist);
    }
    terms.insert(term::PRIOR_VARIANCE.to_string(), chosen.prior_variance);
    if let Some(j) = chosen.grid_j {
        terms.insert(term::PRIOR_GRID_J.to_string(), j as f64);
    }

    let report = BoundReport {
        family,
        m,
        delta,
        delta_ledger: ledger,
        terms,
        value: chosen.value,
        notes,
        provenance: Provenance {
            dataset_fingerprint: data.fingerprint().to_string(),
            seeds,
            config_hash: config_hash(family, delta, shape, opts),
        },
    };
    debug_assert!(
        (report.recompute()? - report.value).abs() <= 1e-12,
        "report must be referentially transparent"
    );
    Ok(report)
}

struct Assembled {
    value: f64,
    log_conf: f64,
    prior_variance: f64,
    grid_j: Option<u64>,
    terms: BTreeMap<String, f64>,
}

#[allow(clippy::too_many_arguments)]
fn assemble(
    family: BoundFamily,
    eta: &GaussianMeasure,
    prior: &GaussianMeasure,
    w_dist: f64,
    lip_gap: Option<f64>,
    lambda: Option<f64>,
    second_moment: Option<f64>,
    risk_part: f64,
    m: usize,
    log_conf: f64,
    grid_j: Option<u64>,
) -> Result<Assembled> {
    let lip = lip_gap.unwrap_or(0.0);
    let mut terms: BTreeMap<String, f64> = BTreeMap::new();
    let value = match family {
        BoundFamily::McAllester => {
            let kl = kl_gaussian(eta, prior)?;
            terms.insert(term::KL.to_string(), kl);
            let gap = sqrt_core(0.0, kl, m, log_conf);
            terms.insert(term::GAP.to_string(), gap);
            risk_part + gap
        }
        BoundFamily::KlWasserstein => {
            let kl = kl_gaussian(eta, prior)?;
            let lip_sq = 2.0 * lip;
            terms.insert(term::KL.to_string(), kl);
            if lip_gap.is_some() {
                terms.insert(term::LIP_GAP.to_string(), lip);
                terms.insert(term::LIP_GAP_SQ.to_string(), lip_sq);
            }
            let gap = sqrt_core(lip_sq * w_dist, kl, m, log_conf);
            terms.insert(term::GAP.to_string(), gap);
            risk_part + gap
        }
        BoundFamily::ReverseKl | BoundFamily::Hellinger | BoundFamily::Tv => {
            let w_gamma = lip * w_dist;
            if lip_gap.is_some() {
                terms.insert(term::LIP_GAP.to_string(), lip);
            }
            terms.insert(term::W_GAMMA.to_string(), w_gamma);
            let gap = match family {
                BoundFamily::ReverseKl => {
                    let rkl = reverse_kl(eta, prior)?;
                    terms.insert(term::RKL.to_string(), rkl);
                    reverse_kl_core(w_gamma, rkl, m, log_conf)
                }
                BoundFamily::Hellinger => {
                    let h2 = squared_hellinger(eta, prior)?;
                    terms.insert(term::H2.to_string(), h2);
                    hellinger_core(w_gamma, h2, m, log_conf)
                }
                _ => {
                    let tv = tv_upper(eta, prior)?;
                    terms.insert(term::TV.to_string(), tv);
                    tv_core(w_gamma, tv, m, log_conf)
                }
            };
            terms.insert(term::GAP.to_string(), gap);
            risk_part + gap
        }
        BoundFamily::Catoni | BoundFamily::SupermartingaleUB | BoundFamily::CatoniFastRate => {
            let kl = kl_gaussian(eta, prior)?;
            let lambda = lambda.expect("lambda resolved for catoni-style families");
            terms.insert(term::KL.to_string(), kl);
            terms.insert(term::LAMBDA.to_string(), lambda);
            if lip_gap.is_some() {
                terms.insert(term::LIP_GAP.to_string(), lip);
            }
            match family {
                BoundFamily::Catoni => {
                    let gap = catoni_core(lip, w_dist, kl, lambda, m, log_conf);
                    terms.insert(term::GAP.to_string(), gap);
                    risk_part + gap
                }
                BoundFamily::SupermartingaleUB => {
                    let sm = second_moment.expect("second moment resolved");
                    terms.insert(term::SECOND_MOMENT.to_string(), sm);
                    let gap = supermartingale_core(lip, w_dist, kl, lambda, log_conf, sm);
                    terms.insert(term::GAP.to_string(), gap);
                    risk_part + gap
                }
                _ => fast_rate_core(risk_part, lip, w_dist, kl, lambda, m, log_conf),
            }
        }
        BoundFamily::Student => unreachable!("student is rejected before assembly"),
    };
    Ok(Assembled {
        value,
        log_conf,
        prior_variance: prior.variance(),
        grid_j,
        terms,
    })
}

fn resolve_lambdas(
    family: BoundFamily,
    opts: &CertifyOptions,
    notes: &mut Vec<String>,
) -> Result<(Vec<Option<f64>>, f64)> {
    if !family.needs_lambda() {
        if opts.lambda.is_some() || opts.lambda_grid.is_some() {
            return Err(Error::Inconsistent(format!(
                "lambda is only meaningful for the Catoni-style families, not {family}"
            )));
        }
        return Ok((vec![None], 0.0));
    }
    let validate = |l: f64| -> Result<f64> {
        let ok = match family {
            BoundFamily::CatoniFastRate => l > 0.0 && l < 2.0,
            _ => l > 0.0 && l.is_finite(),
        };
        if !ok {
            return Err(Error::invalid(
                "lambda",
                format!("{l} is outside the family's admissible range"),
            ));
        }
        Ok(l)
    };
    match (opts.lambda, &opts.lambda_grid) {
        (Some(l), None) => Ok((vec![Some(validate(l)?)], 0.0)),
        (None, Some(grid)) => {
            if grid.is_empty() {
                return Err(Error::invalid("lambda_grid", "grid must be nonempty"));
            }
            let mut out = Vec::with_capacity(grid.len());
            for &l in grid {
                out.push(Some(validate(l)?));
            }
            notes.push(format!(
                "lambda selected from a grid of {} candidates; ln(grid size) union-bound \
                 surcharge added to the log-confidence",
                grid.len()
            ));
            Ok((out, (grid.len() as f64).ln()))
        }
        (Some(_), Some(_)) => Err(Error::Inconsistent(
            "pass either a fixed lambda or a lambda grid, not both".to_string(),
        )),
        (None, None) => Err(Error::Inconsistent(format!(
            "the {family} certificate needs a lambda (fixed or grid)"
        ))),
    }
}

#[allow(clippy::too_many_arguments)]
fn resolve_second_moment(
    family: BoundFamily,
    posterior: &PosteriorMeasure,
    shape: &ModelShape,
    data: &Dataset,
    alpha: f64,
    opts: &CertifyOptions,
    notes: &mut Vec<String>,
    seeds: &mut BTreeMap<String, u64>,
) -> Result<Option<f64>> {
    if family != BoundFamily::SupermartingaleUB {
        if opts.second_moment.is_some() || opts.second_moment_empirical {
            return Err(Error::Inconsistent(
                "a second moment only enters the supermartingale certificate".to_string(),
            ));
        }
        return Ok(None);
    }
    if opts.second_moment_empirical {
        if opts.second_moment.is_some() {
            return Err(Error::Inconsistent(
                "pass either a second-moment bound or the empirical flag, not both".to_string(),
            ));
        }
        let seed = opts.mc_seed.wrapping_add(1);
        let sm = mc_second_moment(posterior, shape, data, opts.mc_samples, seed, alpha)?;
        if matches!(posterior, PosteriorMeasure::Gaussian(_)) {
            seeds.insert("second_moment_mc".to_string(), seed);
        }
        notes.push(
            "second moment is an empirical plug-in estimate and is NOT a certified upper bound"
                .to_string(),
        );
        Ok(Some(sm))
    } else {
        match opts.second_moment {
            Some(sm) => {
                if !(0.0..=1.0).contains(&sm) {
                    return Err(Error::invalid("second_moment", "must lie in [0, 1]"));
                }
                notes.push(
                    "second moment supplied by the caller as an assumed upper bound".to_string(),
                );
                Ok(Some(sm))
            }
            None => {
                notes.push("second moment defaulted to the trivial bound 1".to_string());
                Ok(Some(1.0))
            }
        }
    }
}

/// Scalar ingredients of the Student certificate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StudentIngredients {
    /// Scale of both the Gaussian prior and the Student posterior.
    pub sigma: f64,
    /// Monte-Carlo transport factor `sqrt(d) E|sqrt(p/u) - 1|`.
    pub f_pd: f64,
    /// Standard error of the factor estimate (recorded, not propagated).
    pub f_pd_std_error: f64,
    /// Squared distance between the Student mean and the prior mean.
    pub mean_dist_sq: f64,
    /// Certification sample size.
    pub m: usize,
}

/// Assembles the Student certificate: the Lipschitz estimate is re-priced at
/// its delta/2 share, bridged to the squared gap, and combined with the
/// Monte-Carlo transport factor and the mean-shift penalty.
pub fn student_report(
    est: &LipschitzEstimate,
    det_gap_cap: Option<f64>,
    ingredients: &StudentIngredients,
    delta: f64,
    provenance: Provenance,
) -> Result<BoundReport> {
    check_delta(delta)?;
    check_m(ingredients.m)?;
    if est.m != ingredients.m {
        return Err(Error::Inconsistent(format!(
            "Lipschitz estimate was computed on m={} but the certificate sample has m={}",
            est.m, ingredients.m
        )));
    }
    if !(ingredients.sigma > 0.0 && ingredients.sigma.is_finite()) {
        return Err(Error::invalid("sigma", "must be positive"));
    }
    check_nonneg(ingredients.f_pd, "f_pd")?;
    check_nonneg(ingredients.mean_dist_sq, "mean_dist_sq")?;
    let m = ingredients.m;
    let ledger = DeltaLedger::new(vec![
        LedgerEntry {
            purpose: LedgerPurpose::Bound,
            share: delta / 2.0,
        },
        LedgerEntry {
            purpose: LedgerPurpose::Lipschitz,
            share: delta / 2.0,
        },
    ]);
    ledger.check_sums_to(delta)?;
    let at_share = lipschitz_constant(est.surrogate, est.loss_lip, est.m, delta / 2.0)?.value;
    let mut notes = vec![
        "mean-shift penalty divides by sigma (not sigma squared), matching the stated \
         certificate; the underlying divergence computation suggests sigma squared"
            .to_string(),
    ];
    let lip_gap = match det_gap_cap {
        Some(cap) if cap < at_share => {
            notes.push("deterministic loss constant capped the estimated gap constant".to_string());
            cap
        }
        _ => at_share,
    };
    let lip_sq = 2.0 * lip_gap;
    let log_conf = (2.0 / delta).ln();
    let shift = ingredients.mean_dist_sq / (2.0 * ingredients.sigma * m as f64);
    let value = sqrt_core(lip_sq * ingredients.sigma * ingredients.f_pd + shift, 0.0, m, log_conf);
    let mut terms = BTreeMap::new();
    terms.insert(term::LIP_GAP_SQ.to_string(), lip_sq);
    terms.insert(term::LIP_GAP.to_string(), lip_gap);
    terms.insert(term::LIP_ESTIMATE.to_string(), at_share);
    terms.insert(term::LIP_SURROGATE.to_string(), est.surrogate);
    terms.insert(term::LIP_LOSS.to_string(), est.loss_lip);
    terms.insert(term::SIGMA.to_string(), ingredients.sigma);
    terms.insert(term::F_PD.to_string(), ingredients.f_pd);
    terms.insert(term::F_PD_STD_ERROR.to_string(), ingredients.f_pd_std_error);
    terms.insert(term::MEAN_DIST_SQ.to_string(), ingredients.mean_dist_sq);
    terms.insert(term::LOG_CONF.to_string(), log_conf);
    let report = BoundReport {
        family: BoundFamily::Student,
        m,
        delta,
        delta_ledger: ledger,
        terms,
        value,
        notes,
        provenance,
    };
    debug_assert!((report.recompute()? - report.value).abs() <= 1e-12);
    Ok(report)
}
