//! Gaussian modulation, the entangling-cloner channel, and the joint
//! statistics of Alice's amplitudes and Bob's heterodyne records.
//!
//! Conventions: a coherent state `|x + ip>` has mean quadratures `(x, p)` and
//! unit variance. Excess noise `xi` is referred to the channel output, so the
//! conditional output variance is `1 + xi`. Bob's record is his raw heterodyne
//! outcome, with mean `sqrt(T/2)` times Alice's amplitude.

use nalgebra::{DMatrix, Matrix2};
use serde::{Deserialize, Serialize};

use crate::error::{check, Error, Result};
use crate::gaussian::{apply_symplectic, epr_cm, symplectic_beamsplitter, CovarianceMatrix, SymplecticTransform};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    /// Transmission `T` in (0, 1].
    pub t: f64,
    /// Output-referred excess noise in shot-noise units.
    pub xi: f64,
}

impl ChannelParams {
    pub fn new(t: f64, xi: f64) -> Result<Self> {
        check(t > 0.0 && t <= 1.0, "T", t, "transmission must lie in (0, 1]")?;
        check(
            xi >= 0.0 && xi.is_finite(),
            "xi",
            xi,
            "excess noise must be finite and >= 0",
        )?;
        check(
            t < 1.0 || xi == 0.0,
            "xi",
            xi,
            "a perfect channel (T = 1) cannot add noise",
        )?;
        Ok(Self { t, xi })
    }

    /// Eve's injected arm variance `W`, with `(1 - T) W = 1 - T + xi`.
    pub fn cloner_arm_variance(&self) -> Result<f64> {
        if self.t >= 1.0 {
            return Err(Error::NoCloner);
        }
        Ok((1.0 - self.t + self.xi) / (1.0 - self.t))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProtocolParams {
    /// Alice's modulation variance `V_A` per quadrature.
    pub va: f64,
    /// Reconciliation efficiency.
    pub beta: f64,
}

impl ProtocolParams {
    pub fn new(va: f64, beta: f64) -> Result<Self> {
        check(
            va > 0.0 && va.is_finite(),
            "V_A",
            va,
            "modulation variance must be finite and > 0",
        )?;
        check(
            (0.0..=1.0).contains(&beta),
            "beta",
            beta,
            "reconciliation efficiency must lie in [0, 1]",
        )?;
        Ok(Self { va, beta })
    }
}

/// Per-quadrature covariance of (Alice amplitude, Bob record).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecordCovariance {
    pub var_a: f64,
    pub cov: f64,
    pub var_b: f64,
}

impl RecordCovariance {
    pub fn new(var_a: f64, cov: f64, var_b: f64) -> Result<Self> {
        check(
            var_a > 0.0 && var_a.is_finite(),
            "var_a",
            var_a,
            "must be finite and > 0",
        )?;
        check(
            var_b > 0.0 && var_b.is_finite(),
            "var_b",
            var_b,
            "must be finite and > 0",
        )?;
        check(
            cov.is_finite() && cov * cov < var_a * var_b,
            "cov",
            cov,
            "record covariance must be positive definite",
        )?;
        Ok(Self { var_a, cov, var_b })
    }

    pub fn correlation(&self) -> f64 {
        self.cov / (self.var_a * self.var_b).sqrt()
    }

    pub fn as_matrix(&self) -> Matrix2<f64> {
        Matrix2::new(self.var_a, self.cov, self.cov, self.var_b)
    }
}

/// `exp(arccosh(W))` for Eve's EPR source.
pub fn cloner_variance(ch: &ChannelParams) -> Result<f64> {
    let w = ch.cloner_arm_variance()?;
    Ok(w + (w * w - 1.0).max(0.0).sqrt())
}

/// `exp(arccosh(V_A + 1))` for Alice's EPR source.
pub fn source_squeezing(p: &ProtocolParams) -> f64 {
    let v = p.va + 1.0;
    v + (v * v - 1.0).sqrt()
}

/// Factor mapping Alice's heterodyne record onto her prepare-and-measure amplitude.
pub fn amplitude_scale(p: &ProtocolParams) -> f64 {
    std::f64::consts::SQRT_2 * (p.va / (p.va + 2.0)).sqrt()
}

pub fn record_covariance(p: &ProtocolParams, ch: &ChannelParams) -> RecordCovariance {
    RecordCovariance {
        var_a: p.va,
        cov: (ch.t / 2.0).sqrt() * p.va,
        var_b: ch.t * p.va / 2.0 + 1.0 + ch.xi / 2.0,
    }
}

/// Mode labels of [`full_eb_cm`].
pub mod modes {
    pub const A1: usize = 0;
    pub const A2: usize = 1;
    pub const E1: usize = 2;
    pub const E2: usize = 3;
    pub const B1: usize = 4;
    pub const B2: usize = 5;
}

/// Six-mode state just before detection: Alice's heterodyne ports (A1, A2),
/// Eve's cloner output and kept EPR arm (E1, E2), Bob's heterodyne ports (B1, B2).
///
/// At `T = 1` Eve's source degenerates to vacuum and her modes decouple.
pub fn full_eb_cm(p: &ProtocolParams, ch: &ChannelParams) -> Result<CovarianceMatrix> {
    use modes::*;
    let eve_arm = if ch.t < 1.0 { ch.cloner_arm_variance()? } else { 1.0 };
    // Initial layout: [A1 <- Alice kept arm, A2 <- vacuum, E1 <- Eve injected arm,
    // E2 <- Eve kept arm, B1 <- Alice sent arm, B2 <- vacuum].
    let initial = epr_cm(p.va + 1.0)?
        .direct_sum(&epr_cm(eve_arm)?)
        .direct_sum(&CovarianceMatrix::vacuum(2));
    // Built as [alice kept, alice sent, eve injected, eve kept, vac, vac].
    let layout = permutation(&[A1, B1, E1, E2, A2, B2])?;
    let mut state = apply_symplectic(&layout, &initial)?;
    let stages = [
        symplectic_beamsplitter(ch.t, B1, E1, 6)?,
        symplectic_beamsplitter(0.5, A1, A2, 6)?,
        symplectic_beamsplitter(0.5, B1, B2, 6)?,
    ];
    for m in &stages {
        state = apply_symplectic(m, &state)?;
    }
    Ok(state)
}

/// Mode permutation sending input mode `k` to output mode `targets[k]`.
fn permutation(targets: &[usize]) -> Result<SymplecticTransform> {
    let n = targets.len();
    let mut m = DMatrix::zeros(2 * n, 2 * n);
    for (k, &t) in targets.iter().enumerate() {
        if t >= n {
            return Err(Error::ModeOutOfRange { index: t, n_modes: n });
        }
        m[(2 * t, 2 * k)] = 1.0;
        m[(2 * t + 1, 2 * k + 1)] = 1.0;
    }
    SymplecticTransform::from_matrix(m)
}

/// Covariance of the classical records `(x_A, p_A, b_x, b_p)` implied by a
/// six-mode state from [`full_eb_cm`].
///
/// Heterodyne reads `x` on port 1 and `-p` on port 2 (the second port carries
/// the signal with a minus sign). Alice's records are rescaled by
/// [`amplitude_scale`], and her `p` record is conjugated, to give the
/// prepare-and-measure amplitudes.
pub fn heterodyne_record_covariance(state: &CovarianceMatrix, p: &ProtocolParams) -> Result<[[f64; 4]; 4]> {
    use modes::*;
    if state.n_modes() != 6 {
        return Err(Error::DimensionMismatch {
            expected: 12,
            found: state.dim(),
        });
    }
    let kappa = amplitude_scale(p);
    // (row index in the 12x12 matrix, scale)
    let picks = [(2 * A1, kappa), (2 * A2 + 1, kappa), (2 * B1, 1.0), (2 * B2 + 1, -1.0)];
    let mut out = [[0.0; 4]; 4];
    for (i, &(ri, si)) in picks.iter().enumerate() {
        for (j, &(rj, sj)) in picks.iter().enumerate() {
            out[i][j] = si * sj * state.get(ri, rj);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn channel_validation() {
        assert!(ChannelParams::new(0.0, 0.0).is_err());
        assert!(ChannelParams::new(1.1, 0.0).is_err());
        assert!(ChannelParams::new(0.5, -0.1).is_err());
        assert!(ChannelParams::new(1.0, 0.1).is_err());
        assert!(ChannelParams::new(1.0, 0.0).is_ok());
        assert!(ProtocolParams::new(0.0, 1.0).is_err());
        assert!(ProtocolParams::new(1.0, 1.5).is_err());
    }

    #[test]
    fn cloner_values() {
        let v = |t, xi| cloner_variance(&ChannelParams::new(t, xi).unwrap()).unwrap();
        assert_relative_eq!(v(0.5, 0.0), 1.0, epsilon = 1e-15);
        assert_relative_eq!(v(0.5, 0.5), 2.0 + 3f64.sqrt(), epsilon = 1e-12);
        assert_relative_eq!(v(0.9, 0.05), 1.5 + 1.25f64.sqrt(), epsilon = 1e-12);
        // exp(acosh(w)) route
        assert_relative_eq!(v(0.9, 0.05), 1.5f64.acosh().exp(), epsilon = 1e-12);
        assert_eq!(
            cloner_variance(&ChannelParams::new(1.0, 0.0).unwrap()),
            Err(Error::NoCloner)
        );
    }

    #[test]
    fn source_values() {
        let s = |va| source_squeezing(&ProtocolParams::new(va, 1.0).unwrap());
        assert_relative_eq!(s(3.0), 4.0 + 15f64.sqrt(), epsilon = 1e-12);
        assert_relative_eq!(s(1.0), 2.0 + 3f64.sqrt(), epsilon = 1e-12);
        assert_relative_eq!(s(1e-12), 1.0, epsilon = 1e-5);
    }

    #[test]
    fn amplitude_scale_values() {
        let k = |va| amplitude_scale(&ProtocolParams::new(va, 1.0).unwrap());
        assert_relative_eq!(k(2.0), 1.0, epsilon = 1e-15);
        assert_relative_eq!(k(1e12), std::f64::consts::SQRT_2, epsilon = 1e-9);
        for va in [0.1, 1.0, 7.5] {
            assert_relative_eq!(k(va).powi(2) * (va + 2.0) / 2.0, va, epsilon = 1e-12);
        }
    }

    #[test]
    fn record_covariance_values() {
        let p = ProtocolParams::new(4.0, 1.0).unwrap();
        let r = record_covariance(&p, &ChannelParams::new(0.5, 0.0).unwrap());
        assert_relative_eq!(r.var_a, 4.0);
        assert_relative_eq!(r.cov, 2.0, epsilon = 1e-15);
        assert_relative_eq!(r.var_b, 2.0, epsilon = 1e-15);
        let r = record_covariance(&p, &ChannelParams::new(1e-12, 0.2).unwrap());
        assert!(r.cov.abs() < 1e-5);
        assert_relative_eq!(r.var_b, 1.1, epsilon = 1e-9);
    }

    #[test]
    fn bob_variance_at_half_transmission() {
        let p = ProtocolParams::new(3.0, 1.0).unwrap();
        let g = full_eb_cm(&p, &ChannelParams::new(0.5, 0.0).unwrap()).unwrap();
        // (T (V_A + 1) + 1 - T + xi + 1) / 2
        assert_relative_eq!(g.get(2 * modes::B1, 2 * modes::B1), 1.75, epsilon = 1e-12);
    }

    #[test]
    fn perfect_channel_decouples_eve() {
        let p = ProtocolParams::new(2.5, 1.0).unwrap();
        let g = full_eb_cm(&p, &ChannelParams::new(1.0, 0.0).unwrap()).unwrap();
        let eve = g.reduce(&[modes::E1, modes::E2]).unwrap();
        assert!((eve.entries() - DMatrix::identity(4, 4)).amax() < 1e-12);
        // Bob's ports are the sent arm through a 50:50 splitter only.
        assert_relative_eq!(g.get(2 * modes::B1, 2 * modes::B1), (3.5 + 1.0) / 2.0, epsilon = 1e-12);
    }
}
