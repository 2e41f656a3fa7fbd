//! Probability measures over parameter space and the closed-form divergence
//! and optimal-transport quantities between them.
//!
//! Two measure families appear in the certificates: isotropic Gaussians
//! N(mean, std^2 I_d) and Dirac point masses. Between isotropic Gaussians the
//! KL divergence, squared Hellinger distance, and 2-Wasserstein distance have
//! closed forms; the 1-Wasserstein distance from a Dirac to a Gaussian is
//! upper-bounded through the triangle inequality and the mean of the Chi
//! distribution. Total variation has no Gaussian closed form in general, so
//! [`tv_upper`] returns a sound upper bound (exact in the equal-variance
//! case, Pinsker otherwise).
//!
//! All functions here are pure and deterministic; callers may share measures
//! freely across threads.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::gamma::ln_gamma;

use crate::{ensure_finite, Error, Result};

/// Isotropic Gaussian N(mean, std^2 I_d).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianMeasure {
    mean: Vec<f64>,
    std: f64,
}

impl GaussianMeasure {
    /// Builds N(mean, std^2 I). Requires a nonempty finite mean and a
    /// positive finite std.
    pub fn new(mean: Vec<f64>, std: f64) -> Result<Self> {
        if mean.is_empty() {
            return Err(Error::invalid("mean", "must have dimension >= 1"));
        }
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("mean", "entries must be finite"));
        }
        if !(std > 0.0) || !std.is_finite() {
            return Err(Error::invalid("std", format!("must be positive and finite, got {std}")));
        }
        Ok(Self { mean, std })
    }

    /// Standard Gaussian N(center * 1, std^2 I) with every mean entry equal
    /// to `center`.
    pub fn isotropic(dim: usize, center: f64, std: f64) -> Result<Self> {
        Self::new(vec![center; dim.max(1)], std)
    }

    #[must_use]
    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    #[must_use]
    pub fn std(&self) -> f64 {
        self.std
    }

    #[must_use]
    pub fn variance(&self) -> f64 {
        self.std * self.std
    }

    #[must_use]
    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Dirac point mass at a parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiracMeasure {
    point: Vec<f64>,
}

impl DiracMeasure {
    /// Builds a point mass. Requires a nonempty finite point.
    pub fn new(point: Vec<f64>) -> Result<Self> {
        if point.is_empty() {
            return Err(Error::invalid("point", "must have dimension >= 1"));
        }
        if point.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("point", "entries must be finite"));
        }
        Ok(Self { point })
    }

    #[must_use]
    pub fn point(&self) -> &[f64] {
        &self.point
    }

    #[must_use]
    pub fn dim(&self) -> usize {
        self.point.len()
    }
}

/// Posterior over parameters: either a point mass on the trained weights or
/// an isotropic Gaussian centred on them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PosteriorMeasure {
    Dirac(DiracMeasure),
    Gaussian(GaussianMeasure),
}

/// Discriminant for the two supported posterior families, used where only the
/// kind matters (confidence budgeting, configuration).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PosteriorKind {
    Dirac,
    Gaussian,
}

impl PosteriorMeasure {
    #[must_use]
    pub fn dim(&self) -> usize {
        match self {
            PosteriorMeasure::Dirac(d) => d.dim(),
            PosteriorMeasure::Gaussian(g) => g.dim(),
        }
    }

    /// Center of the posterior: the Dirac point or the Gaussian mean.
    #[must_use]
    pub fn center(&self) -> &[f64] {
        match self {
            PosteriorMeasure::Dirac(d) => d.point(),
            PosteriorMeasure::Gaussian(g) => g.mean(),
        }
    }

    #[must_use]
    pub fn is_dirac(&self) -> bool {
        matches!(self, PosteriorMeasure::Dirac(_))
    }

    #[must_use]
    pub fn kind(&self) -> PosteriorKind {
        match self {
            PosteriorMeasure::Dirac(_) => PosteriorKind::Dirac,
            PosteriorMeasure::Gaussian(_) => PosteriorKind::Gaussian,
        }
    }
}

fn check_dims(dq: usize, dp: usize) -> Result<()> {
    if dq != dp {
        return Err(Error::DimensionMismatch { expected: dq, got: dp });
    }
    Ok(())
}

fn squared_mean_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// KL(q || p) between isotropic Gaussians:
///
/// ```text
/// KL = 1/2 [ d q.std^2 / p.std^2 - d + |q.mean - p.mean|^2 / p.std^2
///            + d ln(p.std^2 / q.std^2) ]
/// ```
///
/// The result is clamped at zero to absorb rounding when q is numerically
/// equal to p.
pub fn kl_gaussian(q: &GaussianMeasure, p: &GaussianMeasure) -> Result<f64> {
    check_dims(q.dim(), p.dim())?;
    let d = q.dim() as f64;
    let ratio = q.variance() / p.variance();
    let msq = squared_mean_distance(q.mean(), p.mean());
    let kl = 0.5 * (d * ratio - d + msq / p.variance() + d * (1.0 / ratio).ln());
    ensure_finite(kl, "kl_gaussian").map(|v| v.max(0.0))
}

/// Reverse KL divergence KL(p || q), i.e. [`kl_gaussian`] with the arguments
/// swapped.
pub fn reverse_kl(q: &GaussianMeasure, p: &GaussianMeasure) -> Result<f64> {
    kl_gaussian(p, q)
}

/// Squared Hellinger distance between isotropic Gaussians, as one minus the
/// Bhattacharyya coefficient:
///
/// ```text
/// H^2 = 1 - exp( d/4 (ln q.std^2 + ln p.std^2)
///                - d/2 ln((q.std^2 + p.std^2)/2)
///                - |q.mean - p.mean|^2 / (4 (q.std^2 + p.std^2)) )
/// ```
///
/// The exponent is nonpositive, so the result lies in [0, 1); it is clamped
/// at zero against rounding.
pub fn squared_hellinger(q: &GaussianMeasure, p: &GaussianMeasure) -> Result<f64> {
    check_dims(q.dim(), p.dim())?;
    let d = q.dim() as f64;
    let (vq, vp) = (q.variance(), p.variance());
    let msq = squared_mean_distance(q.mean(), p.mean());
    let exponent =
        0.25 * d * (vq.ln() + vp.ln()) - 0.5 * d * (0.5 * (vq + vp)).ln() - msq / (4.0 * (vq + vp));
    let h2 = 1.0 - exponent.exp();
    ensure_finite(h2, "squared_hellinger").map(|v| v.clamp(0.0, 1.0))
}

/// Upper bound on the total variation distance TV(q, p) in [0, 1].
///
/// When the stds are exactly equal the densities differ only along the
/// mean-difference direction and the 1-D reduction is exact:
/// TV = 2 Phi(|q.mean - p.mean| / (2 std)) - 1 with Phi the standard normal
/// CDF. Otherwise Pinsker's inequality gives min(1, sqrt(KL(q||p)/2)),
/// which is sound but not tight.
pub fn tv_upper(q: &GaussianMeasure, p: &GaussianMeasure) -> Result<f64> {
    check_dims(q.dim(), p.dim())?;
    if q.std() == p.std() {
        let dist = squared_mean_distance(q.mean(), p.mean()).sqrt();
        // Unit normal; construction cannot fail.
        let phi = Normal::new(0.0, 1.0).expect("unit normal");
        let tv = 2.0 * phi.cdf(dist / (2.0 * q.std())) - 1.0;
        ensure_finite(tv, "tv_upper").map(|v| v.clamp(0.0, 1.0))
    } else {
        let kl = kl_gaussian(q, p)?;
        Ok((kl / 2.0).sqrt().min(1.0))
    }
}

/// Mean of the Chi distribution with `d` degrees of freedom,
/// E|N(0, I_d)| = sqrt(2) Gamma((d+1)/2) / Gamma(d/2), computed through
/// log-gamma differences so it stays finite for very large d.
#[must_use]
pub fn chi_mean(d: usize) -> f64 {
    let d = d as f64;
    (0.5 * std::f64::consts::LN_2 + ln_gamma(0.5 * (d + 1.0)) - ln_gamma(0.5 * d)).exp()
}

/// Upper bound on W1(rho, eta) from a Dirac at `rho.point` to the Gaussian
/// `eta`, via the triangle inequality through a Dirac at `eta.mean`:
///
/// ```text
/// W1 <= |rho.point - eta.mean| + eta.std * E|N(0, I_d)|
/// ```
///
/// with the expectation the Chi-distribution mean of [`chi_mean`].
pub fn w1_dirac_to_gaussian(rho: &DiracMeasure, eta: &GaussianMeasure) -> Result<f64> {
    check_dims(rho.dim(), eta.dim())?;
    let dist = squared_mean_distance(rho.point(), eta.mean()).sqrt();
    let w1 = dist + eta.std() * chi_mean(eta.dim());
    ensure_finite(w1, "w1_dirac_to_gaussian")
}

/// 2-Wasserstein distance between isotropic Gaussians,
/// sqrt(|rho.mean - eta.mean|^2 + d (rho.std - eta.std)^2). By Jensen's
/// inequality this also upper-bounds W1(rho, eta).
pub fn w2_gaussian(rho: &GaussianMeasure, eta: &GaussianMeasure) -> Result<f64> {
    check_dims(rho.dim(), eta.dim())?;
    let d = rho.dim() as f64;
    let msq = squared_mean_distance(rho.mean(), eta.mean());
    let ds = rho.std() - eta.std();
    ensure_finite((msq + d * ds * ds).sqrt(), "w2_gaussian")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gauss(mean: &[f64], std: f64) -> GaussianMeasure {
        GaussianMeasure::new(mean.to_vec(), std).expect("valid gaussian")
    }

    #[test]
    fn gaussian_constructor_rejects_bad_inputs() {
        assert!(GaussianMeasure::new(vec![], 1.0).is_err(), "empty mean");
        assert!(GaussianMeasure::new(vec![0.0], 0.0).is_err(), "zero std");
        assert!(GaussianMeasure::new(vec![0.0], -1.0).is_err(), "negative std");
        assert!(GaussianMeasure::new(vec![0.0], f64::NAN).is_err(), "nan std");
        assert!(GaussianMeasure::new(vec![f64::INFINITY], 1.0).is_err(), "infinite mean");
    }

    #[test]
    fn dirac_constructor_rejects_bad_inputs() {
        assert!(DiracMeasure::new(vec![]).is_err(), "empty point");
        assert!(DiracMeasure::new(vec![f64::NAN]).is_err(), "nan entry");
    }

    #[test]
    fn kl_identity_is_zero() {
        let q = gauss(&[0.3, -1.2, 4.0], 0.7);
        assert_eq!(kl_gaussian(&q, &q).unwrap(), 0.0, "KL(q||q) must be exactly 0");
    }

    #[test]
    fn kl_equal_std_reduces_to_half_squared_mean_distance() {
        let q = gauss(&[0.0], 1.0);
        let p = gauss(&[2.0], 1.0);
        assert!((kl_gaussian(&q, &p).unwrap() - 2.0).abs() < 1e-15, "KL should be |mu|^2/2 = 2");
    }

    #[test]
    fn kl_matches_frozen_closed_form_value() {
        // d=2, q = N((0,0), 0.25 I), p = N((1,0), I):
        // 1/2 [2*0.25 - 2 + 1 + 2 ln 4] = 1.1362943611198906.
        let q = gauss(&[0.0, 0.0], 0.5);
        let p = gauss(&[1.0, 0.0], 1.0);
        assert!((kl_gaussian(&q, &p).unwrap() - 1.136_294_361_119_890_6).abs() < 1e-12);
    }

    #[test]
    fn kl_rejects_dimension_mismatch() {
        let q = gauss(&[0.0, 0.0], 1.0);
        let p = gauss(&[0.0], 1.0);
        assert!(matches!(
            kl_gaussian(&q, &p),
            Err(Error::DimensionMismatch { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn reverse_kl_swaps_arguments_bit_for_bit() {
        let q = gauss(&[0.4, -0.7], 0.3);
        let p = gauss(&[1.1, 0.2], 1.4);
        assert_eq!(reverse_kl(&q, &p).unwrap(), kl_gaussian(&p, &q).unwrap());
    }

    #[test]
    fn reverse_kl_symmetric_case() {
        // Equal stds and |Delta mu| = 2 make both directions equal 2.0.
        let q = gauss(&[0.0], 1.0);
        let p = gauss(&[2.0], 1.0);
        assert!((reverse_kl(&q, &p).unwrap() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn hellinger_identity_is_zero_and_distant_means_saturate() {
        let q = gauss(&[0.0], 1.0);
        assert_eq!(squared_hellinger(&q, &q).unwrap(), 0.0);
        let far = gauss(&[1e6], 1.0);
        let h2 = squared_hellinger(&q, &far).unwrap();
        assert!(h2 > 1.0 - 1e-12 && h2 <= 1.0, "H^2 should saturate to 1, got {h2}");
    }

    #[test]
    fn hellinger_matches_frozen_closed_form_value() {
        // d=1, q = N(0,1), p = N(1,4):
        // exponent = 1/4 ln 4 - 1/2 ln 2.5 - 1/20, H^2 = 0.1491945378473598.
        let q = gauss(&[0.0], 1.0);
        let p = gauss(&[1.0], 2.0);
        assert!((squared_hellinger(&q, &p).unwrap() - 0.149_194_537_847_359_8).abs() < 1e-12);
    }

    #[test]
    fn tv_identity_zero_and_far_means_saturate() {
        let q = gauss(&[0.0, 0.0], 0.5);
        assert_eq!(tv_upper(&q, &q).unwrap(), 0.0);
        let far = gauss(&[1e9, 0.0], 0.5);
        let tv = tv_upper(&q, &far).unwrap();
        assert!(tv > 1.0 - 1e-12 && tv <= 1.0, "TV upper bound should approach 1, got {tv}");
    }

    #[test]
    fn tv_equal_std_matches_frozen_cdf_value() {
        // d=1, std 1, means 0 and 1: 2 Phi(1/2) - 1 = 0.3829249225480262.
        let q = gauss(&[0.0], 1.0);
        let p = gauss(&[1.0], 1.0);
        assert!((tv_upper(&q, &p).unwrap() - 0.382_924_922_548_026_2).abs() < 1e-10);
    }

    #[test]
    fn tv_pinsker_branch_caps_at_one() {
        let q = gauss(&[0.0], 0.05);
        let p = gauss(&[50.0], 1.0);
        assert_eq!(tv_upper(&q, &p).unwrap(), 1.0, "Pinsker branch must cap at 1");
    }

    #[test]
    fn w1_dirac_one_dim_is_half_normal_mean() {
        // d=1, std 1, coincident means: E|N(0,1)| = sqrt(2/pi).
        let rho = DiracMeasure::new(vec![0.5]).unwrap();
        let eta = gauss(&[0.5], 1.0);
        let expected = (2.0 / std::f64::consts::PI).sqrt();
        assert!((w1_dirac_to_gaussian(&rho, &eta).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn w1_dirac_vanishes_in_small_std_limit() {
        let rho = DiracMeasure::new(vec![0.1, 0.2]).unwrap();
        let eta = gauss(&[0.1, 0.2], 1e-300);
        assert!(w1_dirac_to_gaussian(&rho, &eta).unwrap() < 1e-12);
    }

    #[test]
    fn chi_mean_survives_huge_dimension() {
        // Gamma ratios overflow naive evaluation near d ~ 350; the log-gamma
        // route must stay finite and close to sqrt(d) for large d.
        let d = 1_000_000;
        let value = chi_mean(d);
        assert!(value.is_finite());
        assert!((value - (d as f64).sqrt()).abs() < 1.0, "chi mean ~ sqrt(d), got {value}");
    }

    #[test]
    fn w2_identity_and_equal_std_cases() {
        let a = gauss(&[1.0, 2.0], 0.3);
        assert_eq!(w2_gaussian(&a, &a).unwrap(), 0.0);
        let b = gauss(&[4.0, 6.0], 0.3);
        assert!((w2_gaussian(&a, &b).unwrap() - 5.0).abs() < 1e-12, "equal stds reduce to |Delta mu|");
    }

    #[test]
    fn w2_matches_frozen_bures_value() {
        // d=2, stds 1 and 2, Delta mu = (3,0): sqrt(9 + 2*1) = sqrt(11).
        let a = gauss(&[3.0, 0.0], 1.0);
        let b = gauss(&[0.0, 0.0], 2.0);
        assert!((w2_gaussian(&a, &b).unwrap() - 11.0_f64.sqrt()).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn kl_nonnegative_and_zero_only_at_identity(
            m1 in -3.0..3.0f64, m2 in -3.0..3.0f64,
            s1 in 0.1..3.0f64, s2 in 0.1..3.0f64,
        ) {
            let q = gauss(&[m1, -m2], s1);
            let p = gauss(&[m2, m1], s2);
            let kl = kl_gaussian(&q, &p).unwrap();
            prop_assert!(kl >= 0.0);
            if (m1 - m2).abs() > 1e-3 || (s1 - s2).abs() > 1e-3 {
                prop_assert!(kl > 0.0, "KL must be positive for distinct measures");
            }
        }

        #[test]
        fn hellinger_in_unit_interval_and_symmetric(
            m1 in -5.0..5.0f64, m2 in -5.0..5.0f64,
            s1 in 0.05..4.0f64, s2 in 0.05..4.0f64,
        ) {
            let q = gauss(&[m1, m2], s1);
            let p = gauss(&[m2, m1], s2);
            let h_qp = squared_hellinger(&q, &p).unwrap();
            let h_pq = squared_hellinger(&p, &q).unwrap();
            prop_assert!((0.0..=1.0).contains(&h_qp));
            prop_assert!((h_qp - h_pq).abs() < 1e-12, "H^2 must be symmetric");
        }

        #[test]
        fn tv_bounded_and_symmetric_for_equal_std(
            m1 in -5.0..5.0f64, m2 in -5.0..5.0f64, s in 0.05..4.0f64,
        ) {
            let q = gauss(&[m1], s);
            let p = gauss(&[m2], s);
            let t_qp = tv_upper(&q, &p).unwrap();
            let t_pq = tv_upper(&p, &q).unwrap();
            prop_assert!((0.0..=1.0).contains(&t_qp));
            prop_assert!((t_qp - t_pq).abs() < 1e-15);
        }

        #[test]
        fn w2_dominates_mean_distance(
            m1 in -3.0..3.0f64, m2 in -3.0..3.0f64,
            s1 in 0.05..2.0f64, s2 in 0.05..2.0f64,
        ) {
            let a = gauss(&[m1, m2, 0.0], s1);
            let b = gauss(&[m2, m1, 1.0], s2);
            let msq: f64 = a.mean().iter().zip(b.mean()).map(|(x, y)| (x - y) * (x - y)).sum();
            prop_assert!(w2_gaussian(&a, &b).unwrap() + 1e-12 >= msq.sqrt());
        }
    }
}
