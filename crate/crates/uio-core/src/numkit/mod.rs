//! Tolerance-aware dense numerical kernels: rank decisions, kernel bases,
//! pseudoinverses, spectra, detectability tests, pole placement and
//! rank-drop points of rectangular matrix pencils.
//!
//! Every decision routine takes an explicit [`Tolerance`] so that rank and
//! stability verdicts are deterministic and scale-invariant.

mod pencil;
mod place;

pub use pencil::{pencil_rank_drop, PencilRankDrop};
pub use place::{observable_dim, place_output_injection, unobservable_eigenvalues};

use nalgebra::{Complex, DMatrix};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::util::{ensure_finite, to_complex};

/// Numerical decision thresholds shared by every verdict in the crate.
///
/// `rank_tol` is a relative singular-value cutoff, `residual_tol` an absolute
/// residual-norm cutoff and `stability_margin` the slack applied to the unit
/// circle when deciding Schur stability.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Tolerance {
    rank_tol: f64,
    residual_tol: f64,
    stability_margin: f64,
}

impl Tolerance {
    pub const DEFAULT_RANK_TOL: f64 = 1e-9;
    pub const DEFAULT_RESIDUAL_TOL: f64 = 1e-8;
    pub const DEFAULT_STABILITY_MARGIN: f64 = 1e-8;

    pub fn new(rank_tol: f64, residual_tol: f64, stability_margin: f64) -> Result<Self> {
        if !rank_tol.is_finite() || !residual_tol.is_finite() || !stability_margin.is_finite() {
            return Err(Error::InvalidTolerance("tolerances must be finite".into()));
        }
        if rank_tol < 0.0 || residual_tol < 0.0 || stability_margin < 0.0 {
            return Err(Error::InvalidTolerance(
                "tolerances must be nonnegative".into(),
            ));
        }
        if rank_tol >= 1.0 {
            return Err(Error::InvalidTolerance(
                "rank_tol must be smaller than one".into(),
            ));
        }
        Ok(Self {
            rank_tol,
            residual_tol,
            stability_margin,
        })
    }

    pub fn rank_tol(&self) -> f64 {
        self.rank_tol
    }

    pub fn residual_tol(&self) -> f64 {
        self.residual_tol
    }

    pub fn stability_margin(&self) -> f64 {
        self.stability_margin
    }
}

impl Default for Tolerance {
    fn default() -> Self {
        Self {
            rank_tol: Self::DEFAULT_RANK_TOL,
            residual_tol: Self::DEFAULT_RESIDUAL_TOL,
            stability_margin: Self::DEFAULT_STABILITY_MARGIN,
        }
    }
}

/// Eigenvalues of a square matrix together with the Schur-stability verdict.
#[derive(Clone, Debug)]
pub struct SpectrumReport {
    pub eigenvalues: Vec<Complex<f64>>,
    pub spectral_radius: f64,
    pub is_schur: bool,
}

// Match the convergence threshold nalgebra's own `svd()` uses; a bare
// machine epsilon makes the implicit-shift iteration mishandle exactly
// rank-deficient matrices.
const SVD_EPS: f64 = f64::EPSILON * 5.0;
const SVD_MAX_ITER: usize = 0;

pub(crate) fn svd_of(m: &DMatrix<f64>) -> Result<nalgebra::SVD<f64, nalgebra::Dyn, nalgebra::Dyn>> {
    m.clone()
        .try_svd(true, true, SVD_EPS, SVD_MAX_ITER)
        .ok_or(Error::SvdFailure)
}

pub(crate) fn singular_values(m: &DMatrix<f64>) -> Result<Vec<f64>> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Ok(Vec::new());
    }
    let svd = m
        .clone()
        .try_svd(false, false, SVD_EPS, SVD_MAX_ITER)
        .ok_or(Error::SvdFailure)?;
    Ok(svd.singular_values.as_slice().to_vec())
}

fn count_above(svals: &[f64], rank_tol: f64) -> usize {
    let max = svals.iter().cloned().fold(0.0_f64, f64::max);
    if max == 0.0 {
        return 0;
    }
    svals.iter().filter(|&&s| s > rank_tol * max).count()
}

/// Number of singular values exceeding `rank_tol` times the largest one.
pub fn rank_of(m: &DMatrix<f64>, tol: &Tolerance) -> Result<usize> {
    ensure_finite(m)?;
    Ok(count_above(&singular_values(m)?, tol.rank_tol()))
}

/// Rank of a complex matrix under the same relative cutoff.
pub(crate) fn rank_of_complex(m: &DMatrix<Complex<f64>>, tol: &Tolerance) -> Result<usize> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Ok(0);
    }
    let svd = m
        .clone()
        .try_svd(false, false, SVD_EPS, SVD_MAX_ITER)
        .ok_or(Error::SvdFailure)?;
    Ok(count_above(svd.singular_values.as_slice(), tol.rank_tol()))
}

/// Orthonormal basis of the right null space of `m`.
///
/// Returns a `cols(m) x k` matrix with `k = cols(m) - rank_of(m)`.
pub fn kernel_basis(m: &DMatrix<f64>, tol: &Tolerance) -> Result<DMatrix<f64>> {
    ensure_finite(m)?;
    let cols = m.ncols();
    if cols == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    if m.nrows() == 0 {
        return Ok(DMatrix::identity(cols, cols));
    }
    // Pad with zero rows so the thin SVD carries a full set of right
    // singular vectors; padding does not change V or the singular values.
    let work = if m.nrows() < cols {
        let mut padded = DMatrix::zeros(cols, cols);
        padded.rows_mut(0, m.nrows()).copy_from(m);
        padded
    } else {
        m.clone()
    };
    let svd = work
        .try_svd(false, true, SVD_EPS, SVD_MAX_ITER)
        .ok_or(Error::SvdFailure)?;
    let v_t = svd.v_t.as_ref().expect("v_t requested");
    let rank = count_above(svd.singular_values.as_slice(), tol.rank_tol());
    let kernel_dim = cols - rank;
    let mut basis = DMatrix::zeros(cols, kernel_dim);
    for j in 0..kernel_dim {
        basis.column_mut(j).copy_from(&v_t.row(rank + j).transpose());
    }
    Ok(basis)
}

/// Moore-Penrose pseudoinverse with singular values below
/// `rank_tol * sigma_max` treated as zero.
pub fn pinv(m: &DMatrix<f64>, tol: &Tolerance) -> Result<DMatrix<f64>> {
    ensure_finite(m)?;
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return Ok(DMatrix::zeros(cols, rows));
    }
    let svd = svd_of(m)?;
    let u = svd.u.as_ref().expect("u requested");
    let v_t = svd.v_t.as_ref().expect("v_t requested");
    let svals = svd.singular_values.as_slice();
    let max = svals.iter().cloned().fold(0.0_f64, f64::max);
    let cutoff = tol.rank_tol() * max;
    let mut out = DMatrix::zeros(cols, rows);
    for (i, &s) in svals.iter().enumerate() {
        if max > 0.0 && s > cutoff {
            let vi = v_t.row(i).transpose();
            let ui = u.column(i);
            out += (vi / s) * ui.transpose();
        }
    }
    Ok(out)
}

pub(crate) fn eigenvalues_of(m: &DMatrix<f64>) -> Result<Vec<Complex<f64>>> {
    if m.nrows() != m.ncols() {
        return Err(Error::NotSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    if m.nrows() == 0 {
        return Ok(Vec::new());
    }
    let schur = nalgebra::linalg::Schur::try_new(m.clone(), f64::EPSILON, 0)
        .ok_or(Error::EigenFailure)?;
    Ok(schur.complex_eigenvalues().as_slice().to_vec())
}

/// Eigenvalues, spectral radius and the Schur verdict of a square matrix.
///
/// `is_schur` holds when the spectral radius is below `1 - stability_margin`.
pub fn spectrum(m: &DMatrix<f64>, tol: &Tolerance) -> Result<SpectrumReport> {
    ensure_finite(m)?;
    let eigenvalues = eigenvalues_of(m)?;
    let spectral_radius = eigenvalues.iter().map(|c| c.norm()).fold(0.0_f64, f64::max);
    Ok(SpectrumReport {
        eigenvalues,
        spectral_radius,
        is_schur: spectral_radius < 1.0 - tol.stability_margin(),
    })
}

/// Outcome of the eigenvector (PBH) detectability test.
#[derive(Clone, Debug)]
pub struct PbhReport {
    pub detectable: bool,
    /// Eigenvalues with modulus at or above the unit circle (minus the
    /// stability margin) at which `[zI - F; C]` loses column rank.
    pub offending: Vec<Complex<f64>>,
}

/// Detectability of the pair `(F, C)`: every eigenvalue of `F` with modulus
/// `>= 1 - stability_margin` must keep `[zI - F; C]` at full column rank.
pub fn pbh_detectable(f: &DMatrix<f64>, c: &DMatrix<f64>, tol: &Tolerance) -> Result<PbhReport> {
    ensure_finite(f)?;
    ensure_finite(c)?;
    let n = f.nrows();
    if f.ncols() != n {
        return Err(Error::NotSquare {
            rows: f.nrows(),
            cols: f.ncols(),
        });
    }
    if c.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "C has {} columns, state dimension is {}",
            c.ncols(),
            n
        )));
    }
    let fc = to_complex(f);
    let cc = to_complex(c);
    let mut offending = Vec::new();
    for lambda in eigenvalues_of(f)? {
        if lambda.norm() < 1.0 - tol.stability_margin() {
            continue;
        }
        let mut stacked = DMatrix::zeros(n + c.nrows(), n);
        stacked
            .rows_mut(0, n)
            .copy_from(&(DMatrix::from_diagonal_element(n, n, lambda) - &fc));
        stacked.rows_mut(n, c.nrows()).copy_from(&cc);
        if rank_of_complex(&stacked, tol)? < n {
            offending.push(lambda);
        }
    }
    Ok(PbhReport {
        detectable: offending.is_empty(),
        offending,
    })
}

/// Frobenius norm of a matrix; the residual norm used throughout the crate.
pub fn residual_norm(m: &DMatrix<f64>) -> f64 {
    m.norm()
}
