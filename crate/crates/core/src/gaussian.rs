//! Covariance-matrix algebra for Gaussian states.
//!
//! Quadratures are ordered mode-major, `(x1, p1, x2, p2, ...)`, and variances
//! are in shot-noise units (vacuum variance 1). Symplectic maps act as
//! `gamma' = M gamma M^T`; this is the transpose of the `S^T gamma S` form and
//! describes the same physics.

use nalgebra::{DMatrix, Matrix2, SymmetricEigen};

use crate::error::{check, Error, Result};

/// Tolerance on symplectic eigenvalues (and diagonal entries) below 1.
pub const PHYSICAL_TOL: f64 = 1e-9;
/// Symmetry tolerance for covariance matrices.
pub const SYMMETRY_TOL: f64 = 1e-12;
/// Eigenvalues below `1 - DIAGNOSTIC_TOL` make `symplectic_eigenvalues` fail.
pub const DIAGNOSTIC_TOL: f64 = 1e-6;

/// Symmetrised quadrature covariance matrix of an `n`-mode Gaussian state.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceMatrix {
    n_modes: usize,
    entries: DMatrix<f64>,
}

impl CovarianceMatrix {
    /// Validates symmetry and physicality (`gamma + i Omega >= 0`).
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        let cm = Self::from_symmetric(entries)?;
        for i in 0..cm.dim() {
            let d = cm.entries[(i, i)];
            if !(d >= 1.0 - PHYSICAL_TOL) {
                return Err(Error::Unphysical(d));
            }
        }
        let nu = cm.symplectic_eigenvalues_unchecked()?;
        let min = nu.last().copied().unwrap_or(1.0);
        if !(min >= 1.0 - PHYSICAL_TOL) {
            return Err(Error::Unphysical(min));
        }
        Ok(cm)
    }

    /// Checks shape and symmetry only; the result may be unphysical.
    pub fn from_symmetric(entries: DMatrix<f64>) -> Result<Self> {
        let (r, c) = entries.shape();
        if r != c {
            return Err(Error::DimensionMismatch { expected: r, found: c });
        }
        if r == 0 || r % 2 != 0 {
            return Err(Error::DimensionMismatch {
                expected: 2 * (r / 2).max(1),
                found: r,
            });
        }
        let asym = (&entries - entries.transpose()).amax();
        if !(asym <= SYMMETRY_TOL * entries.amax().max(1.0)) {
            return Err(Error::NotSymmetric(asym));
        }
        // Remove round-off asymmetry so downstream eigen-solvers see an exact symmetric matrix.
        let entries = (&entries + entries.transpose()) * 0.5;
        Ok(Self {
            n_modes: r / 2,
            entries,
        })
    }

    pub fn vacuum(n_modes: usize) -> Self {
        Self {
            n_modes,
            entries: DMatrix::identity(2 * n_modes, 2 * n_modes),
        }
    }

    /// Single-mode thermal state `diag(v, v)`.
    pub fn thermal(v: f64) -> Result<Self> {
        check(v >= 1.0, "thermal variance", v, "must be >= 1")?;
        Self::new(DMatrix::from_diagonal_element(2, 2, v))
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    pub fn dim(&self) -> usize {
        2 * self.n_modes
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[(i, j)]
    }

    /// Tensor product `self (+) other`, modes of `other` appended after ours.
    pub fn direct_sum(&self, other: &CovarianceMatrix) -> CovarianceMatrix {
        let (a, b) = (self.dim(), other.dim());
        let mut m = DMatrix::zeros(a + b, a + b);
        m.view_mut((0, 0), (a, a)).copy_from(&self.entries);
        m.view_mut((a, a), (b, b)).copy_from(&other.entries);
        CovarianceMatrix {
            n_modes: self.n_modes + other.n_modes,
            entries: m,
        }
    }

    /// Reduced state of the listed modes, in the given order.
    pub fn reduce(&self, modes: &[usize]) -> Result<CovarianceMatrix> {
        let mut idx = Vec::with_capacity(2 * modes.len());
        for &m in modes {
            if m >= self.n_modes {
                return Err(Error::ModeOutOfRange {
                    index: m,
                    n_modes: self.n_modes,
                });
            }
            idx.push(2 * m);
            idx.push(2 * m + 1);
        }
        let sub = DMatrix::from_fn(idx.len(), idx.len(), |i, j| self.entries[(idx[i], idx[j])]);
        Ok(CovarianceMatrix {
            n_modes: modes.len(),
            entries: sub,
        })
    }

    /// 2x2 block coupling modes `i` and `j`.
    pub fn block(&self, i: usize, j: usize) -> Matrix2<f64> {
        Matrix2::new(
            self.entries[(2 * i, 2 * j)],
            self.entries[(2 * i, 2 * j + 1)],
            self.entries[(2 * i + 1, 2 * j)],
            self.entries[(2 * i + 1, 2 * j + 1)],
        )
    }

    /// Symplectic eigenvalues via the spectrum of `gamma^{1/2} Omega gamma^{1/2}`,
    /// without the physicality check.
    fn symplectic_eigenvalues_unchecked(&self) -> Result<Vec<f64>> {
        let eig = SymmetricEigen::new(self.entries.clone());
        let min_ev = eig.eigenvalues.min();
        if !(min_ev > 0.0) {
            return Err(Error::Unphysical(min_ev));
        }
        let sqrt_diag = DMatrix::from_diagonal(&eig.eigenvalues.map(f64::sqrt));
        let root = &eig.eigenvectors * sqrt_diag * eig.eigenvectors.transpose();
        let k = &root * symplectic_form(self.n_modes) * &root;
        // k is antisymmetric with eigenvalues +-i nu, so k^T k has nu^2 twice.
        let ktk = k.transpose() * &k;
        let ktk = (&ktk + ktk.transpose()) * 0.5;
        let mut sq: Vec<f64> = SymmetricEigen::new(ktk).eigenvalues.iter().copied().collect();
        sq.sort_by(|a, b| b.total_cmp(a));
        Ok(sq
            .chunks(2)
            .map(|pair| (0.5 * (pair[0] + pair[1])).max(0.0).sqrt())
            .collect())
    }
}

/// The standard symplectic form `Omega = (+) [[0, 1], [-1, 0]]`.
pub fn symplectic_form(n_modes: usize) -> DMatrix<f64> {
    let mut omega = DMatrix::zeros(2 * n_modes, 2 * n_modes);
    for k in 0..n_modes {
        omega[(2 * k, 2 * k + 1)] = 1.0;
        omega[(2 * k + 1, 2 * k)] = -1.0;
    }
    omega
}

/// A real linear map on quadratures preserving `Omega`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymplecticTransform {
    n_modes: usize,
    entries: DMatrix<f64>,
}

impl SymplecticTransform {
    pub fn identity(n_modes: usize) -> Self {
        Self {
            n_modes,
            entries: DMatrix::identity(2 * n_modes, 2 * n_modes),
        }
    }

    /// Accepts `m` if `M Omega M^T = Omega` to within `1e-10`.
    pub fn from_matrix(m: DMatrix<f64>) -> Result<Self> {
        let (r, c) = m.shape();
        if r != c || r % 2 != 0 || r == 0 {
            return Err(Error::DimensionMismatch { expected: r, found: c });
        }
        let t = Self {
            n_modes: r / 2,
            entries: m,
        };
        let defect = t.symplectic_defect();
        if !(defect < 1e-10) {
            return Err(Error::InvalidParameter {
                name: "M",
                value: defect,
                reason: "matrix is not symplectic",
            });
        }
        Ok(t)
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    /// `self` applied after `first`.
    pub fn compose(&self, first: &SymplecticTransform) -> Result<SymplecticTransform> {
        if self.n_modes != first.n_modes {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: first.dim(),
            });
        }
        Ok(SymplecticTransform {
            n_modes: self.n_modes,
            entries: &self.entries * &first.entries,
        })
    }

    /// `max |M Omega M^T - Omega|`.
    pub fn symplectic_defect(&self) -> f64 {
        let omega = symplectic_form(self.n_modes);
        (&self.entries * &omega * self.entries.transpose() - omega).amax()
    }

    fn dim(&self) -> usize {
        2 * self.n_modes
    }
}

fn check_mode(index: usize, n_modes: usize) -> Result<()> {
    if index < n_modes {
        Ok(())
    } else {
        Err(Error::ModeOutOfRange { index, n_modes })
    }
}

/// Single-mode squeezer `diag(e^-r, e^r)` on `target_mode`.
pub fn symplectic_squeezer(r: f64, target_mode: usize, n_modes: usize) -> Result<SymplecticTransform> {
    check(r.is_finite(), "r", r, "squeezing must be finite")?;
    check_mode(target_mode, n_modes)?;
    let mut m = SymplecticTransform::identity(n_modes);
    m.entries[(2 * target_mode, 2 * target_mode)] = (-r).exp();
    m.entries[(2 * target_mode + 1, 2 * target_mode + 1)] = r.exp();
    Ok(m)
}

/// Beamsplitter of transmissivity `t` mixing `mode_i` and `mode_j`:
/// `a_i -> sqrt(t) a_i + sqrt(1-t) a_j`, `a_j -> -sqrt(1-t) a_i + sqrt(t) a_j`.
pub fn symplectic_beamsplitter(t: f64, mode_i: usize, mode_j: usize, n_modes: usize) -> Result<SymplecticTransform> {
    check((0.0..=1.0).contains(&t), "T", t, "transmissivity must lie in [0, 1]")?;
    check_mode(mode_i, n_modes)?;
    check_mode(mode_j, n_modes)?;
    if mode_i == mode_j {
        return Err(Error::SameMode(mode_i));
    }
    let (c, s) = (t.sqrt(), (1.0 - t).sqrt());
    let mut m = SymplecticTransform::identity(n_modes);
    for q in 0..2 {
        let (i, j) = (2 * mode_i + q, 2 * mode_j + q);
        m.entries[(i, i)] = c;
        m.entries[(i, j)] = s;
        m.entries[(j, i)] = -s;
        m.entries[(j, j)] = c;
    }
    Ok(m)
}

/// `M gamma M^T`.
pub fn apply_symplectic(m: &SymplecticTransform, gamma: &CovarianceMatrix) -> Result<CovarianceMatrix> {
    if m.n_modes != gamma.n_modes {
        return Err(Error::DimensionMismatch {
            expected: gamma.dim(),
            found: m.dim(),
        });
    }
    let out = &m.entries * &gamma.entries * m.entries.transpose();
    let out = (&out + out.transpose()) * 0.5;
    Ok(CovarianceMatrix {
        n_modes: gamma.n_modes,
        entries: out,
    })
}

/// Two-mode squeezed vacuum with arm variance `v`.
pub fn epr_cm(v: f64) -> Result<CovarianceMatrix> {
    check(v >= 1.0, "V", v, "EPR arm variance must be >= 1")?;
    let c = (v * v - 1.0).sqrt();
    let mut m = DMatrix::from_diagonal_element(4, 4, v);
    m[(0, 2)] = c;
    m[(2, 0)] = c;
    m[(1, 3)] = -c;
    m[(3, 1)] = -c;
    Ok(CovarianceMatrix { n_modes: 2, entries: m })
}

/// Symplectic eigenvalues sorted descending.
///
/// Fails with the offending value if any eigenvalue is below `1 - 1e-6`.
pub fn symplectic_eigenvalues(gamma: &CovarianceMatrix) -> Result<Vec<f64>> {
    let nu = gamma.symplectic_eigenvalues_unchecked()?;
    match nu.last() {
        Some(&min) if !(min >= 1.0 - DIAGNOSTIC_TOL) => Err(Error::Unphysical(min)),
        _ => Ok(nu),
    }
}

/// Closed-form symplectic eigenvalues of a two-mode matrix, descending.
pub fn two_mode_symplectic_eigenvalues(gamma: &CovarianceMatrix) -> Result<[f64; 2]> {
    if gamma.n_modes != 2 {
        return Err(Error::DimensionMismatch {
            expected: 4,
            found: gamma.dim(),
        });
    }
    let (a, b, c) = (gamma.block(0, 0), gamma.block(1, 1), gamma.block(0, 1));
    if let Some(nu) = standard_form_eigenvalues(&a, &b, &c) {
        if !(nu[1] >= 1.0 - DIAGNOSTIC_TOL) {
            return Err(Error::Unphysical(nu[1]));
        }
        return Ok(nu);
    }
    let delta = a.determinant() + b.determinant() + 2.0 * c.determinant();
    let det = gamma.entries.determinant();
    let disc = (delta * delta - 4.0 * det).max(0.0).sqrt();
    let hi = ((delta + disc) / 2.0).max(0.0).sqrt();
    // The small root suffers cancellation; det(gamma) = nu1^2 nu2^2 is stable.
    let lo = if hi > 0.0 { det.max(0.0).sqrt() / hi } else { 0.0 };
    if !(lo >= 1.0 - DIAGNOSTIC_TOL) {
        return Err(Error::Unphysical(lo));
    }
    Ok([hi, lo])
}

/// Exact route for blocks `a I`, `b I`, `diag(c, -c)`. The general formula
/// takes the square root of a discriminant that cancels catastrophically for
/// near-pure states; here it factors as `(a - b)^2 ((a + b)^2 - 4 c^2)`.
fn standard_form_eigenvalues(a: &Matrix2<f64>, b: &Matrix2<f64>, c: &Matrix2<f64>) -> Option<[f64; 2]> {
    let scalar =
        |m: &Matrix2<f64>| (m[(0, 1)] == 0.0 && m[(1, 0)] == 0.0 && m[(0, 0)] == m[(1, 1)]).then_some(m[(0, 0)]);
    let (a, b) = (scalar(a)?, scalar(b)?);
    if !(c[(0, 1)] == 0.0 && c[(1, 0)] == 0.0 && c[(1, 1)] == -c[(0, 0)]) {
        return None;
    }
    let c = c[(0, 0)].abs();
    let s = ((a + b - 2.0 * c) * (a + b + 2.0 * c)).max(0.0).sqrt();
    let d = (b - a).abs();
    Some([(s + d) / 2.0, (s - d) / 2.0])
}

/// Entropy in bits of a thermal mode with symplectic eigenvalue `nu`.
pub fn entropy_g(nu: f64) -> f64 {
    if nu < 1.0 + 1e-12 {
        return 0.0;
    }
    let eps = (nu - 1.0) / 2.0;
    ((1.0 + eps) * eps.ln_1p() - eps * eps.ln()) / std::f64::consts::LN_2
}

/// Von Neumann entropy in bits.
pub fn von_neumann_entropy(gamma: &CovarianceMatrix) -> Result<f64> {
    Ok(symplectic_eigenvalues(gamma)?.into_iter().map(entropy_g).sum())
}

/// Conditional state of the unmeasured mode after heterodyne detection of
/// `measured_mode`: `B - C (A + I)^-1 C^T`.
pub fn conditional_cm_heterodyne(gamma: &CovarianceMatrix, measured_mode: usize) -> Result<CovarianceMatrix> {
    if gamma.n_modes != 2 {
        return Err(Error::DimensionMismatch {
            expected: 4,
            found: gamma.dim(),
        });
    }
    check_mode(measured_mode, 2)?;
    let other = 1 - measured_mode;
    let a = gamma.block(measured_mode, measured_mode);
    let b = gamma.block(other, other);
    let c = gamma.block(other, measured_mode);
    let inv = (a + Matrix2::identity())
        .try_inverse()
        .ok_or(Error::Unphysical(a.determinant()))?;
    let cond = b - c * inv * c.transpose();
    let cond = (cond + cond.transpose()) * 0.5;
    Ok(CovarianceMatrix {
        n_modes: 1,
        entries: DMatrix::from_column_slice(2, 2, cond.as_slice()),
    })
}
