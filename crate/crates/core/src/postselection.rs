//! Statistics of the post-selected ensemble and the effective Gaussian
//! protocol that reproduces them.
//!
//! A symbol is kept when Alice's `|x|`, `|p|` lie in `[L_A, U_A]` and Bob's
//! record magnitudes lie in `[L_B, U_B]`. The `x` and `p` sectors are
//! independent, so the symbol keep probability is the square of the
//! per-quadrature one and kept-ensemble moments are single-quadrature
//! truncated moments. Moments are taken about zero; the kept set is
//! sign-symmetric.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::channel::RecordCovariance;
use crate::error::{check, Error, Result};
use crate::gaussian::{two_mode_symplectic_eigenvalues, CovarianceMatrix, PHYSICAL_TOL};
use crate::quadrature::{integrate, Tolerance};

/// Probabilities below this are reported as underflow.
pub const MIN_PROBABILITY: f64 = 1e-300;
/// Standard deviations of Alice's amplitude beyond which the outer integral is cut.
const TAIL_SIGMAS: f64 = 40.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PostSelectionRegion {
    pub la: f64,
    pub ua: f64,
    pub lb: f64,
    pub ub: f64,
}

impl PostSelectionRegion {
    pub fn new(la: f64, ua: f64, lb: f64, ub: f64) -> Result<Self> {
        check(
            la >= 0.0 && la.is_finite(),
            "L_A",
            la,
            "lower threshold must be finite and >= 0",
        )?;
        check(
            lb >= 0.0 && lb.is_finite(),
            "L_B",
            lb,
            "lower threshold must be finite and >= 0",
        )?;
        check(ua > la, "U_A", ua, "upper threshold must exceed L_A")?;
        check(ub > lb, "U_B", ub, "upper threshold must exceed L_B")?;
        Ok(Self { la, ua, lb, ub })
    }

    /// Keep everything.
    pub fn none() -> Self {
        Self {
            la: 0.0,
            ua: f64::INFINITY,
            lb: 0.0,
            ub: f64::INFINITY,
        }
    }

    /// Lower thresholds only.
    pub fn lower(la: f64, lb: f64) -> Result<Self> {
        Self::new(la, f64::INFINITY, lb, f64::INFINITY)
    }

    pub fn is_trivial(&self) -> bool {
        self.la == 0.0 && self.lb == 0.0 && self.ua == f64::INFINITY && self.ub == f64::INFINITY
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PostSelectedStats {
    pub p_keep_quad: f64,
    /// Symbol-level success probability, `p_keep_quad^2`.
    pub p_ps: f64,
    pub var_a: f64,
    pub var_b: f64,
    pub cov: f64,
    pub p_e: f64,
}

/// Standard normal density.
fn phi(z: f64) -> f64 {
    if z.is_infinite() {
        0.0
    } else {
        (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
    }
}

/// `z phi(z)`, zero at infinity.
fn z_phi(z: f64) -> f64 {
    if z.is_infinite() {
        0.0
    } else {
        z * phi(z)
    }
}

/// `Phi(b) - Phi(a)` for `a <= b`, using whichever complementary form avoids cancellation.
pub(crate) fn normal_interval(a: f64, b: f64) -> f64 {
    let q = |z: f64| 0.5 * libm::erfc(z * FRAC_1_SQRT_2); // upper tail 1 - Phi(z)
    let p = if a >= 0.0 {
        q(a) - q(b)
    } else if b <= 0.0 {
        q(-b) - q(-a)
    } else {
        1.0 - q(-a) - q(b)
    };
    p.max(0.0)
}

/// Zeroth, first and second moments of `N(m, s^2)` restricted to `[lo, hi]`.
fn truncated_raw_moments(m: f64, s: f64, lo: f64, hi: f64) -> [f64; 3] {
    let a = (lo - m) / s;
    let b = (hi - m) / s;
    let p = normal_interval(a, b);
    let d1 = phi(a) - phi(b);
    let d2 = z_phi(a) - z_phi(b);
    let e1 = m * p + s * d1;
    let e2 = (m * m + s * s) * p + 2.0 * m * s * d1 + s * s * d2;
    [p, e1, e2]
}

/// Keep probability, moments and sign-error rate of `(x, b) ~ N(0, sigma)` over the band region.
pub fn postselected_stats(sigma: &RecordCovariance, r: &PostSelectionRegion) -> Result<PostSelectedStats> {
    if r.is_trivial() {
        let rho = sigma.correlation();
        return Ok(PostSelectedStats {
            p_keep_quad: 1.0,
            p_ps: 1.0,
            var_a: sigma.var_a,
            var_b: sigma.var_b,
            cov: sigma.cov,
            p_e: 0.5 - rho.clamp(-1.0, 1.0).asin() / PI,
        });
    }

    let sx = sigma.var_a.sqrt();
    let slope = sigma.cov / sigma.var_a;
    let s = (sigma.var_b - sigma.cov * sigma.cov / sigma.var_a).sqrt();

    // Contribution of x > 0; the mirror image x < 0 contributes identically.
    let integrand = |x: f64| -> [f64; 5] {
        let w = phi(x / sx) / sx;
        if w == 0.0 {
            return [0.0; 5];
        }
        let m = slope * x;
        let agree = truncated_raw_moments(m, s, r.lb, r.ub);
        let disagree = truncated_raw_moments(m, s, -r.ub, -r.lb);
        let p = agree[0] + disagree[0];
        [
            w * p,
            w * x * x * p,
            w * (agree[2] + disagree[2]),
            w * x * (agree[1] + disagree[1]),
            w * disagree[0],
        ]
    };

    let hi = r.ua.min(r.la + TAIL_SIGMAS * sx);
    let breaks = breakpoints(r.la, hi, sx, slope, r);
    let (v, _) = integrate(integrand, &breaks, Tolerance::default());

    let p_keep_quad = 2.0 * v[0];
    if !(p_keep_quad >= MIN_PROBABILITY) {
        return Err(Error::Underflow(p_keep_quad));
    }
    Ok(PostSelectedStats {
        p_keep_quad,
        p_ps: p_keep_quad * p_keep_quad,
        var_a: v[1] / v[0],
        var_b: v[2] / v[0],
        cov: v[3] / v[0],
        p_e: (v[4] / v[0]).clamp(0.0, 1.0),
    })
}

/// Initial subdivision of `[lo, hi]`: finer near `lo` when the Gaussian weight
/// is steep there, plus the points where Bob's conditional mean crosses his thresholds.
fn breakpoints(lo: f64, hi: f64, sx: f64, slope: f64, r: &PostSelectionRegion) -> Vec<f64> {
    let mut pts = vec![lo, hi];
    let scale = sx * (sx / lo.max(sx)) * 0.25;
    let mut step = scale;
    while lo + step < hi {
        pts.push(lo + step);
        step *= 2.0;
    }
    if slope > 0.0 {
        for thr in [r.lb, r.ub] {
            let x = thr / slope;
            if x.is_finite() && x > lo && x < hi {
                pts.push(x);
            }
        }
    }
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    pts
}

pub fn keep_probability(sigma: &RecordCovariance, r: &PostSelectionRegion) -> Result<f64> {
    Ok(postselected_stats(sigma, r)?.p_keep_quad)
}

/// `(V_a, V_b, C)` of the kept ensemble.
pub fn truncated_moments(sigma: &RecordCovariance, r: &PostSelectionRegion) -> Result<(f64, f64, f64)> {
    let st = postselected_stats(sigma, r)?;
    Ok((st.var_a, st.var_b, st.cov))
}

pub fn sign_error_probability(sigma: &RecordCovariance, r: &PostSelectionRegion) -> Result<f64> {
    Ok(postselected_stats(sigma, r)?.p_e)
}

/// Parameters `(V_alpha, eta, delta)` of the untruncated Gaussian protocol
/// matching the kept record moments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectiveParams {
    pub v_alpha: f64,
    pub eta: f64,
    /// Input-referred excess noise; `eta * delta` is the output-referred value.
    pub delta: f64,
}

impl EffectiveParams {
    /// The extraction formulas without any validation.
    pub fn from_moments(var_a: f64, var_b: f64, cov: f64) -> Self {
        let eta = 2.0 * cov * cov / (var_a * var_a);
        Self {
            v_alpha: var_a,
            eta,
            delta: (2.0 * var_b - 2.0 - eta * var_a) / eta,
        }
    }

    /// Record moments `(V_a, V_b, C)` of an untruncated protocol with these parameters.
    pub fn record_moments(&self) -> (f64, f64, f64) {
        let var_b = (self.eta * self.v_alpha + self.eta * self.delta + 2.0) / 2.0;
        let cov = (self.eta / 2.0).sqrt() * self.v_alpha;
        (self.v_alpha, var_b, cov)
    }
}

/// Allowed overshoot of `eta` past 1 from round-off.
const ETA_SLACK: f64 = 1e-12;

pub fn effective_params(var_a: f64, var_b: f64, cov: f64) -> Result<EffectiveParams> {
    check(var_a > 0.0 && var_a.is_finite(), "V_a", var_a, "must be finite and > 0")?;
    check(var_b > 0.0 && var_b.is_finite(), "V_b", var_b, "must be finite and > 0")?;
    check(
        cov.is_finite() && cov * cov <= var_a * var_b,
        "C",
        cov,
        "moment matrix must be positive semidefinite",
    )?;
    if cov == 0.0 {
        return Err(Error::NoCorrelation);
    }
    let e = EffectiveParams::from_moments(var_a, var_b, cov);
    if e.eta > 1.0 + ETA_SLACK {
        return Err(Error::Superunital(e.eta));
    }
    Ok(e)
}

/// Standard-form two-mode matrix of the effective protocol.
pub fn build_gamma_ab(e: &EffectiveParams) -> Result<CovarianceMatrix> {
    let a = 1.0 + e.v_alpha;
    let b = e.eta * e.v_alpha + e.eta * e.delta + 1.0;
    let c = (e.eta * (e.v_alpha * e.v_alpha + 2.0 * e.v_alpha)).sqrt();
    #[rustfmt::skip]
    let m = DMatrix::from_row_slice(4, 4, &[
        a,   0.0, c,   0.0,
        0.0, a,   0.0, -c,
        c,   0.0, b,   0.0,
        0.0, -c,  0.0, b,
    ]);
    let unphysical = |min_eigenvalue| Error::UnphysicalEffectiveState {
        v_alpha: e.v_alpha,
        eta: e.eta,
        delta: e.delta,
        min_eigenvalue,
    };
    let gamma = CovarianceMatrix::from_symmetric(m).map_err(|_| unphysical(f64::NAN))?;
    if !(b > 0.0) || !(a * b - c * c > 0.0) {
        return Err(unphysical(f64::NAN));
    }
    let nu = two_mode_symplectic_eigenvalues(&gamma).map_err(|err| match err {
        Error::Unphysical(v) => unphysical(v),
        other => other,
    })?;
    if !(nu[1] >= 1.0 - PHYSICAL_TOL) {
        return Err(unphysical(nu[1]));
    }
    Ok(gamma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn unit() -> RecordCovariance {
        RecordCovariance::new(1.0, 0.0, 1.0).unwrap()
    }

    #[test]
    fn region_validation() {
        assert!(PostSelectionRegion::new(1.0, 1.0, 0.0, 2.0).is_err());
        assert!(PostSelectionRegion::new(-0.1, 1.0, 0.0, 2.0).is_err());
        assert!(PostSelectionRegion::new(0.0, 1.0, f64::NAN, 2.0).is_err());
        assert!(PostSelectionRegion::new(0.0, f64::INFINITY, 0.5, f64::INFINITY).is_ok());
    }

    #[test]
    fn interval_forms_agree() {
        for (a, b) in [
            (-3.0, -1.0),
            (-1.0, 2.0),
            (1.0, 4.0),
            (8.0, f64::INFINITY),
            (f64::NEG_INFINITY, -9.0),
        ] {
            let direct = 0.5 * (libm::erf(b * FRAC_1_SQRT_2) - libm::erf(a * FRAC_1_SQRT_2));
            let safe = normal_interval(a, b);
            assert!((safe - direct).abs() < 1e-15, "{a} {b}");
        }
        // Far tail stays accurate where erf differences cancel to 0.
        let far = normal_interval(10.0, f64::INFINITY);
        assert_relative_eq!(far, 7.619853024160527e-24, max_relative = 1e-12);
    }

    #[test]
    fn full_plane_is_exact() {
        let sigma = RecordCovariance::new(4.0, 2.0, 2.0).unwrap();
        let st = postselected_stats(&sigma, &PostSelectionRegion::none()).unwrap();
        assert_eq!((st.p_keep_quad, st.var_a, st.var_b, st.cov), (1.0, 4.0, 2.0, 2.0));
        assert_relative_eq!(st.p_e, 0.25, epsilon = 1e-15);
    }

    #[test]
    fn alice_tail_on_independent_pair() {
        let r = PostSelectionRegion::lower(1.0, 0.0).unwrap();
        let st = postselected_stats(&unit(), &r).unwrap();
        assert_relative_eq!(st.p_keep_quad, 0.317_310_507_862_914_1, max_relative = 1e-10);
        let tail = normal_interval(1.0, f64::INFINITY);
        assert_relative_eq!(st.var_a, 1.0 + phi(1.0) / tail, max_relative = 1e-10);
        assert_relative_eq!(st.var_a, 2.525_135_276_160_981, max_relative = 1e-10);
        assert_relative_eq!(st.var_b, 1.0, max_relative = 1e-10);
        assert!(st.cov.abs() < 1e-12);
        assert_relative_eq!(st.p_e, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn quadrature_route_matches_orthant_identity() {
        // A negligible lower threshold forces the quadrature path.
        let sigma = RecordCovariance::new(4.0, 2.0, 2.0).unwrap();
        let r = PostSelectionRegion::lower(1e-300, 0.0).unwrap();
        let st = postselected_stats(&sigma, &r).unwrap();
        assert_relative_eq!(st.p_keep_quad, 1.0, max_relative = 1e-10);
        assert_relative_eq!(st.var_a, 4.0, max_relative = 1e-10);
        assert_relative_eq!(st.var_b, 2.0, max_relative = 1e-10);
        assert_relative_eq!(st.cov, 2.0, max_relative = 1e-10);
        assert_relative_eq!(st.p_e, 0.25, max_relative = 1e-10);
    }

    #[test]
    fn far_region_underflows() {
        let r = PostSelectionRegion::lower(60.0, 60.0).unwrap();
        assert!(matches!(postselected_stats(&unit(), &r), Err(Error::Underflow(_))));
    }

    #[test]
    fn effective_params_recover_channel() {
        let e = effective_params(4.0, 2.0, 2.0).unwrap();
        assert_relative_eq!(e.v_alpha, 4.0);
        assert_relative_eq!(e.eta, 0.5, epsilon = 1e-15);
        assert!(e.delta.abs() < 1e-15);
        assert_eq!(effective_params(4.0, 2.0, 0.0), Err(Error::NoCorrelation));
        assert!(matches!(effective_params(1.0, 3.0, 1.0), Err(Error::Superunital(_))));
        let e = effective_params(3.0, 2.7, 1.4).unwrap();
        let (a, b, c) = e.record_moments();
        assert_relative_eq!(a, 3.0, epsilon = 1e-14);
        assert_relative_eq!(b, 2.7, epsilon = 1e-14);
        assert_relative_eq!(c, 1.4, epsilon = 1e-14);
    }

    #[test]
    fn gamma_ab_structure() {
        let g = build_gamma_ab(&EffectiveParams {
            v_alpha: 4.0,
            eta: 0.5,
            delta: 0.0,
        })
        .unwrap();
        assert_relative_eq!(g.get(0, 0), 5.0);
        assert_relative_eq!(g.get(2, 2), 3.0);
        assert_relative_eq!(g.get(0, 2), 12f64.sqrt(), epsilon = 1e-14);
        assert_relative_eq!(g.get(1, 3), -(12f64.sqrt()), epsilon = 1e-14);

        let pure = build_gamma_ab(&EffectiveParams {
            v_alpha: 3.0,
            eta: 1.0,
            delta: 0.0,
        })
        .unwrap();
        let nu = two_mode_symplectic_eigenvalues(&pure).unwrap();
        assert_relative_eq!(nu[0], 1.0, epsilon = 1e-9);

        let noisy = build_gamma_ab(&EffectiveParams {
            v_alpha: 1.0,
            eta: 0.9,
            delta: 10.0,
        })
        .unwrap();
        assert!(two_mode_symplectic_eigenvalues(&noisy).unwrap()[0] > 1.0);

        let bad = build_gamma_ab(&EffectiveParams {
            v_alpha: 3.0,
            eta: 0.8,
            delta: -1.0,
        });
        assert!(matches!(bad, Err(Error::UnphysicalEffectiveState { .. })));
    }
}
