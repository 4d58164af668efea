//! Direct-reconciliation key rate of the post-selected protocol.

use serde::{Deserialize, Serialize};

use crate::channel::{record_covariance, ChannelParams, ProtocolParams};
use crate::error::{check, Error, Result};
use crate::gaussian::{
    conditional_cm_heterodyne, entropy_g, symplectic_eigenvalues, two_mode_symplectic_eigenvalues, CovarianceMatrix,
};
use crate::postselection::{
    build_gamma_ab, effective_params, postselected_stats, EffectiveParams, PostSelectionRegion,
};

/// Negative Holevo values down to this are treated as round-off and clamped to 0.
pub const HOLEVO_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeyRateReport {
    pub p_ps: f64,
    pub p_keep_quad: f64,
    pub p_e: f64,
    /// Sign-encoding information per quadrature, in [0, 1].
    pub i_quad: f64,
    /// `beta * 2 * i_quad`, per kept symbol.
    pub i_ab_bits: f64,
    /// Eve's Holevo information per kept symbol.
    pub chi_ea_bits: f64,
    /// Bits per channel use; may be negative.
    pub key_rate: f64,
    pub effective: EffectiveParams,
    /// Smallest symplectic eigenvalue of `gamma_AB` minus 1.
    pub physicality_margin: f64,
}

impl KeyRateReport {
    pub fn key_rate_clamped(&self) -> f64 {
        self.key_rate.max(0.0)
    }

    /// Raw (unweighted) classical information per kept symbol.
    pub fn i_ab_raw(&self) -> f64 {
        2.0 * self.i_quad
    }

    /// Key rate normalised through the per-quadrature keep probability.
    /// Under the symbol AND rule this equals `key_rate`.
    pub fn key_rate_from_quadrature_keep(&self, beta: f64) -> f64 {
        self.p_keep_quad.powi(2) * (beta * self.i_ab_raw() - self.chi_ea_bits)
    }
}

/// `1 - h(p_e)` for the binary sign channel.
pub fn mutual_information_sign(p_e: f64) -> Result<f64> {
    check(
        (0.0..=0.5).contains(&p_e),
        "p_e",
        p_e,
        "sign error probability must lie in [0, 0.5]",
    )?;
    let xlog = |p: f64| if p > 0.0 { p * p.log2() } else { 0.0 };
    Ok((1.0 + xlog(p_e) + xlog(1.0 - p_e)).clamp(0.0, 1.0))
}

fn entropy_two_mode(gamma: &CovarianceMatrix) -> Result<f64> {
    Ok(two_mode_symplectic_eigenvalues(gamma)?.into_iter().map(entropy_g).sum())
}

fn single_mode_eigenvalue(gamma: &CovarianceMatrix) -> f64 {
    gamma.entries().determinant().max(0.0).sqrt()
}

fn clamp_holevo(chi: f64) -> Result<f64> {
    if chi >= 0.0 {
        Ok(chi)
    } else if chi >= -HOLEVO_TOL {
        Ok(0.0)
    } else {
        Err(Error::Unphysical(chi))
    }
}

/// `S(AB) - S(B|a)` with heterodyne conditioning on mode 0 (Alice), using
/// closed-form two-mode symplectic eigenvalues.
pub fn holevo_dr(gamma_ab: &CovarianceMatrix) -> Result<f64> {
    let s_ab = entropy_two_mode(gamma_ab)?;
    let cond = conditional_cm_heterodyne(gamma_ab, 0)?;
    clamp_holevo(s_ab - entropy_g(single_mode_eigenvalue(&cond)))
}

/// Same quantity via the general `i Omega gamma` eigenvalue route.
pub fn holevo_dr_general(gamma_ab: &CovarianceMatrix) -> Result<f64> {
    let s_ab: f64 = symplectic_eigenvalues(gamma_ab)?.into_iter().map(entropy_g).sum();
    let cond = conditional_cm_heterodyne(gamma_ab, 0)?;
    let s_cond: f64 = symplectic_eigenvalues(&cond)?.into_iter().map(entropy_g).sum();
    clamp_holevo(s_ab - s_cond)
}

/// Full pipeline for one operating point.
///
/// At `T = 1` Eve is absent: `chi = 0` and the Alice-Bob state is pure, so the
/// effective parameters are reported for information only and not validated.
pub fn keyrate(p: &ProtocolParams, ch: &ChannelParams, r: &PostSelectionRegion) -> Result<KeyRateReport> {
    let sigma = record_covariance(p, ch);
    let stats = postselected_stats(&sigma, r)?;
    let (effective, chi, margin) = if ch.t < 1.0 {
        let effective = effective_params(stats.var_a, stats.var_b, stats.cov)?;
        let gamma = build_gamma_ab(&effective)?;
        let nu = two_mode_symplectic_eigenvalues(&gamma)?;
        (effective, holevo_dr(&gamma)?, nu[1] - 1.0)
    } else {
        (
            EffectiveParams::from_moments(stats.var_a, stats.var_b, stats.cov),
            0.0,
            0.0,
        )
    };
    let i_quad = mutual_information_sign(stats.p_e.min(0.5))?;
    let i_ab_bits = p.beta * 2.0 * i_quad;
    Ok(KeyRateReport {
        p_ps: stats.p_ps,
        p_keep_quad: stats.p_keep_quad,
        p_e: stats.p_e,
        i_quad,
        i_ab_bits,
        chi_ea_bits: chi,
        key_rate: stats.p_ps * (i_ab_bits - chi),
        effective,
        physicality_margin: margin,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::CovarianceMatrix;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;

    #[test]
    fn sign_information() {
        assert_eq!(mutual_information_sign(0.5).unwrap(), 0.0);
        assert_eq!(mutual_information_sign(0.0).unwrap(), 1.0);
        // 1 - h(1/4), h(1/4) = 2 - (3/4) log2 3
        let expected = 1.0 - (2.0 - 0.75 * 3f64.log2());
        assert_relative_eq!(mutual_information_sign(0.25).unwrap(), expected, epsilon = 1e-15);
        assert_relative_eq!(expected, 0.188_721_9, epsilon = 1e-7);
        assert!(mutual_information_sign(0.6).is_err());
        assert!(mutual_information_sign(-0.1).is_err());
    }

    #[test]
    fn holevo_of_pure_epr_is_zero() {
        let g = build_gamma_ab(&EffectiveParams {
            v_alpha: 6.0,
            eta: 1.0,
            delta: 0.0,
        })
        .unwrap();
        assert!(holevo_dr(&g).unwrap() < 1e-9);
    }

    #[test]
    fn holevo_routes_agree() {
        let g = build_gamma_ab(&EffectiveParams {
            v_alpha: 4.0,
            eta: 0.5,
            delta: 0.0,
        })
        .unwrap();
        let closed = holevo_dr(&g).unwrap();
        let general = holevo_dr_general(&g).unwrap();
        assert!(closed > 0.5);
        assert!((closed - general).abs() < 1e-9);
    }

    #[test]
    fn holevo_of_product_state() {
        let g = CovarianceMatrix::new(DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![
            1.0, 1.0, 2.0, 2.0,
        ])))
        .unwrap();
        assert!(holevo_dr(&g).unwrap().abs() < 1e-12);
    }

    #[test]
    fn perfect_channel_has_no_eve() {
        let p = ProtocolParams::new(4.0, 1.0).unwrap();
        let ch = ChannelParams::new(1.0, 0.0).unwrap();
        for r in [
            PostSelectionRegion::none(),
            PostSelectionRegion::lower(1.0, 0.5).unwrap(),
        ] {
            let rep = keyrate(&p, &ch, &r).unwrap();
            assert!(rep.chi_ea_bits < 1e-9, "{rep:?}");
            assert_relative_eq!(rep.key_rate, rep.p_ps * 2.0 * rep.i_quad, epsilon = 1e-9);
        }
    }

    #[test]
    fn three_db_limit_without_postselection() {
        let p = ProtocolParams::new(4.0, 1.0).unwrap();
        let ch = ChannelParams::new(0.25, 0.0).unwrap();
        let rep = keyrate(&p, &ch, &PostSelectionRegion::none()).unwrap();
        assert!(rep.key_rate < 0.0);
        assert_eq!(rep.p_ps, 1.0);
    }

    #[test]
    fn quadrature_normalisation_matches() {
        let p = ProtocolParams::new(3.0, 0.9).unwrap();
        let ch = ChannelParams::new(0.6, 0.01).unwrap();
        let rep = keyrate(&p, &ch, &PostSelectionRegion::lower(0.8, 0.6).unwrap()).unwrap();
        assert_relative_eq!(
            rep.key_rate_from_quadrature_keep(0.9),
            rep.key_rate,
            max_relative = 1e-14
        );
        assert_eq!(rep.i_ab_raw(), 2.0 * rep.i_quad);
    }
}
