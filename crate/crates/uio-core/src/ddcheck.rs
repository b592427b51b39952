//! Data-driven existence of an unknown-input observer, decided from one
//! recorded experiment: recovery of the output matrix, the kernel inclusion
//! condition and the unit-circle rank condition on the data pencil.

use nalgebra::{Complex, DMatrix};
use serde::Serialize;

use crate::datamat::DataMatrices;
use crate::error::{Error, Result};
use crate::numkit::{kernel_basis, pencil_rank_drop, pinv, rank_of, residual_norm, Tolerance};
use crate::util::vstack;

/// Recovers `C` as `Yp * Xp^+`.
///
/// Requires `Xp` of full row rank (implied by the data assumption); the
/// recovered matrix must reproduce both output blocks to within the
/// residual tolerance.
pub fn recover_c(dm: &DataMatrices, tol: &Tolerance) -> Result<DMatrix<f64>> {
    let rank = rank_of(&dm.x_p, tol)?;
    if rank < dm.n {
        return Err(Error::XpRankDeficient {
            rank,
            needed: dm.n,
        });
    }
    let c = &dm.y_p * pinv(&dm.x_p, tol)?;
    let res_p = residual_norm(&(&c * &dm.x_p - &dm.y_p));
    let res_f = residual_norm(&(&c * &dm.x_f - &dm.y_f));
    let residual = res_p.max(res_f);
    if residual > tol.residual_tol() {
        return Err(Error::OutputRecoveryResidual { residual });
    }
    Ok(c)
}

/// Evidence for the kernel inclusion `ker(Xf) ⊇ ker([Up; Yp; Yf; Xp])`.
#[derive(Clone, Debug, Serialize)]
pub struct KernelInclusionCheck {
    pub holds: bool,
    /// `|| Xf * N ||` for an orthonormal kernel basis `N` of the stack.
    pub residual: f64,
    pub kernel_dim: usize,
}

/// Checks the kernel inclusion condition; solvability of the data-driven
/// design equation is equivalent to it.
pub fn kernel_inclusion(dm: &DataMatrices, tol: &Tolerance) -> Result<KernelInclusionCheck> {
    let stack = vstack(&[&dm.u_p, &dm.y_p, &dm.y_f, &dm.x_p]);
    let basis = kernel_basis(&stack, tol)?;
    let residual = if basis.ncols() == 0 {
        0.0
    } else {
        residual_norm(&(&dm.x_f * &basis))
    };
    Ok(KernelInclusionCheck {
        holds: residual <= tol.residual_tol(),
        residual,
        kernel_dim: basis.ncols(),
    })
}

/// Evidence for the rank condition on `[z Xp - Xf; Up; Yp]`.
#[derive(Clone, Debug, Serialize)]
pub struct RankConditionCheck {
    pub holds: bool,
    pub normal_rank: usize,
    /// `n + m + r`.
    pub expected_rank: usize,
    /// Verified rank-drop points with modulus at or above the unit circle.
    #[serde(serialize_with = "crate::oracle::serialize_complex_vec")]
    pub offending: Vec<Complex<f64>>,
}

/// Checks `rank [z Xp - Xf; Up; Yp] = n + m + r` for every `z` on or
/// outside the unit circle, via the rank-drop set of the data pencil.
pub fn dd_rank_condition(dm: &DataMatrices, r: usize, tol: &Tolerance) -> Result<RankConditionCheck> {
    if r == 0 {
        return Err(Error::InvalidTrajectory(
            "the unknown-input size r must be at least 1".into(),
        ));
    }
    let cols = dm.x_p.ncols();
    let zeros_u = DMatrix::zeros(dm.m, cols);
    let zeros_y = DMatrix::zeros(dm.p, cols);
    // z*M1 - M0 = [z Xp - Xf; Up; Yp].
    let m1 = vstack(&[&dm.x_p, &zeros_u, &zeros_y]);
    let neg_u = -&dm.u_p;
    let neg_y = -&dm.y_p;
    let m0 = vstack(&[&dm.x_f, &neg_u, &neg_y]);
    let pencil = pencil_rank_drop(&m0, &m1, tol)?;
    let expected_rank = dm.n + dm.m + r;
    let offending: Vec<Complex<f64>> = pencil
        .drop_points
        .iter()
        .copied()
        .filter(|z| z.norm() >= 1.0 - tol.stability_margin())
        .collect();
    Ok(RankConditionCheck {
        holds: pencil.normal_rank == expected_rank && offending.is_empty(),
        normal_rank: pencil.normal_rank,
        expected_rank,
        offending,
    })
}

/// Data-driven existence verdict. `exists` is true exactly when an observer
/// of the standard form reproduces every system trajectory, i.e. when both
/// conditions hold.
#[derive(Clone, Debug, Serialize)]
pub struct ExistenceReport {
    pub exists: bool,
    /// Set when a decision quantity sits within a decade of its threshold;
    /// the verdict is then reported rather than silently trusted.
    pub marginal: bool,
    pub kernel: KernelInclusionCheck,
    pub rank_condition: RankConditionCheck,
}

/// Conjunction of [`kernel_inclusion`] and [`dd_rank_condition`] with all
/// evidence retained.
pub fn existence_data_driven(
    dm: &DataMatrices,
    r: usize,
    tol: &Tolerance,
) -> Result<ExistenceReport> {
    let kernel = kernel_inclusion(dm, tol)?;
    let rank_condition = dd_rank_condition(dm, r, tol)?;
    let near_threshold = kernel.kernel_dim > 0
        && kernel.residual > tol.residual_tol() * 0.1
        && kernel.residual < tol.residual_tol() * 10.0;
    let near_circle = rank_condition
        .offending
        .iter()
        .any(|z| (z.norm() - 1.0).abs() <= 1e-6);
    Ok(ExistenceReport {
        exists: kernel.holds && rank_condition.holds,
        marginal: near_threshold || near_circle,
        kernel,
        rank_condition,
    })
}
