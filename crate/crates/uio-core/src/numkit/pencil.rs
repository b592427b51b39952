//! Rank-drop points of rectangular matrix pencils `z*M1 - M0`.
//!
//! The rank of a pencil is constant except on a finite set of points, so the
//! "for all z" rank tests reduce to locating that set. The pencil is squared
//! up by two-sided random projection, the projected eigenvalues are found by
//! a shift-and-invert solve, and every candidate is re-verified by a direct
//! rank evaluation on the original pencil; candidates that fail the check
//! are discarded.

use nalgebra::{Complex, DMatrix};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::util::{ensure_finite, random_matrix, to_complex};

use super::{eigenvalues_of, rank_of_complex, Tolerance};

/// Generic rank of a pencil together with its verified rank-drop points.
#[derive(Clone, Debug)]
pub struct PencilRankDrop {
    pub normal_rank: usize,
    /// Points where the pencil rank falls below `normal_rank`, one entry per
    /// distinct point (conjugate pairs appear as two entries).
    pub drop_points: Vec<Complex<f64>>,
}

const PROJECTION_DRAWS: usize = 2;
const SHIFTS: [f64; 6] = [1.731, -2.417, 0.563, 3.289, -0.911, 0.147];
const PENCIL_SEED: u64 = 0x9E3C_11D7_u64;

/// One Ruiz-style pass of row and column scaling to unit norm. Rank is
/// invariant under diagonal scaling, and equilibration keeps the numeric
/// rank decision meaningful when the pencil mixes wildly different row or
/// column magnitudes (e.g. geometrically growing trajectory data).
fn equilibrated(mut w: DMatrix<Complex<f64>>) -> DMatrix<Complex<f64>> {
    let (rows, cols) = w.shape();
    for i in 0..rows {
        let norm = w.row(i).norm();
        if norm > 0.0 {
            let inv = Complex::new(1.0 / norm, 0.0);
            for j in 0..cols {
                w[(i, j)] *= inv;
            }
        }
    }
    for j in 0..cols {
        let norm = w.column(j).norm();
        if norm > 0.0 {
            let inv = Complex::new(1.0 / norm, 0.0);
            for i in 0..rows {
                w[(i, j)] *= inv;
            }
        }
    }
    w
}

fn rank_at(
    z: Complex<f64>,
    m0: &DMatrix<Complex<f64>>,
    m1: &DMatrix<Complex<f64>>,
    tol: &Tolerance,
) -> Result<usize> {
    rank_of_complex(&equilibrated(m1 * z - m0), tol)
}

fn svals(w: &DMatrix<Complex<f64>>) -> Result<Vec<f64>> {
    let svd = w
        .clone()
        .try_svd(false, false, f64::EPSILON * 5.0, 0)
        .ok_or(Error::SvdFailure)?;
    Ok(svd.singular_values.as_slice().to_vec())
}

/// Evaluates the pencil at the candidate and its probes under one shared
/// diagonal scaling derived from the probe (generic) points. Scaling from
/// generic points normalizes structurally small rows and columns without
/// amplifying the near-zero direction that makes the candidate a drop
/// point.
fn scaled_group_svals(
    z: Complex<f64>,
    probes: &[Complex<f64>],
    m0: &DMatrix<Complex<f64>>,
    m1: &DMatrix<Complex<f64>>,
) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let mut w_here = m1 * z - m0;
    let mut w_probes: Vec<DMatrix<Complex<f64>>> =
        probes.iter().map(|p| m1 * *p - m0).collect();
    let (rows, cols) = w_here.shape();

    let mut row_scale = vec![0.0_f64; rows];
    for w in &w_probes {
        for (i, scale) in row_scale.iter_mut().enumerate() {
            *scale = scale.max(w.row(i).norm());
        }
    }
    let apply_rows = |w: &mut DMatrix<Complex<f64>>, scales: &[f64]| {
        for (i, &s) in scales.iter().enumerate() {
            if s > 0.0 {
                let inv = Complex::new(1.0 / s, 0.0);
                for j in 0..cols {
                    w[(i, j)] *= inv;
                }
            }
        }
    };
    apply_rows(&mut w_here, &row_scale);
    for w in &mut w_probes {
        apply_rows(w, &row_scale);
    }

    let mut col_scale = vec![0.0_f64; cols];
    for w in &w_probes {
        for (j, scale) in col_scale.iter_mut().enumerate() {
            *scale = scale.max(w.column(j).norm());
        }
    }
    let apply_cols = |w: &mut DMatrix<Complex<f64>>, scales: &[f64]| {
        for (j, &s) in scales.iter().enumerate() {
            if s > 0.0 {
                let inv = Complex::new(1.0 / s, 0.0);
                for i in 0..rows {
                    w[(i, j)] *= inv;
                }
            }
        }
    };
    apply_cols(&mut w_here, &col_scale);
    for w in &mut w_probes {
        apply_cols(w, &col_scale);
    }

    let here = svals(&w_here)?;
    let probe_svals = w_probes.iter().map(svals).collect::<Result<_>>()?;
    Ok((here, probe_svals))
}

/// Normal rank and verified rank-drop points of `z*M1 - M0`.
pub fn pencil_rank_drop(
    m0: &DMatrix<f64>,
    m1: &DMatrix<f64>,
    tol: &Tolerance,
) -> Result<PencilRankDrop> {
    ensure_finite(m0)?;
    ensure_finite(m1)?;
    if m0.shape() != m1.shape() {
        return Err(Error::DimensionMismatch(format!(
            "pencil blocks have shapes {:?} and {:?}",
            m0.shape(),
            m1.shape()
        )));
    }
    let (rows, cols) = m0.shape();
    if rows == 0 || cols == 0 {
        return Ok(PencilRankDrop {
            normal_rank: 0,
            drop_points: Vec::new(),
        });
    }

    let m0c = to_complex(m0);
    let m1c = to_complex(m1);
    let mut rng = ChaCha12Rng::seed_from_u64(PENCIL_SEED);

    // The rank at a handful of scattered sample points is the normal rank:
    // rank can only drop, never rise, on the exceptional set.
    let mut samples = Vec::new();
    for &radius in &[0.73_f64, 1.31, 2.57] {
        for _ in 0..2 {
            let angle: f64 = rand::Rng::random_range(&mut rng, 0.0..std::f64::consts::TAU);
            samples.push(Complex::from_polar(radius, angle));
        }
    }
    let mut normal_rank = 0;
    for z in &samples {
        normal_rank = normal_rank.max(rank_at(*z, &m0c, &m1c, tol)?);
    }
    if normal_rank == 0 {
        return Ok(PencilRankDrop {
            normal_rank,
            drop_points: Vec::new(),
        });
    }

    // Verification threshold: the projected eigenvalues locate true drop
    // points to roughly sqrt(eps) in the defective case, so the rank gap at
    // a candidate is checked with a cutoff looser than rank_tol.
    let verify_rank_tol = (tol.rank_tol() * 1e3).clamp(1e-7, 0.5);

    let mut candidates: Vec<Complex<f64>> = Vec::new();
    for _ in 0..PROJECTION_DRAWS {
        let left = random_matrix(normal_rank, rows, &mut rng);
        let right = random_matrix(cols, normal_rank, &mut rng);
        let a0 = &left * m0 * &right;
        let a1 = &left * m1 * &right;

        // Shift-and-invert: z = s - 1/mu for eigenvalues mu of
        // (s*A1 - A0)^{-1} A1, which also absorbs singular A1.
        let mut solved = false;
        for &shift in &SHIFTS {
            let b = &a1 * shift - &a0;
            let Some(b_inv) = b.clone().try_inverse() else {
                continue;
            };
            let g = b_inv * &a1;
            let eigs = match eigenvalues_of(&g) {
                Ok(e) => e,
                Err(_) => continue,
            };
            let mu_max = eigs.iter().map(|m| m.norm()).fold(0.0_f64, f64::max);
            for mu in eigs {
                if mu.norm() > 1e-12 * mu_max.max(1.0) {
                    let z = shift - Complex::new(1.0, 0.0) / mu;
                    if z.norm() < 1e8 {
                        candidates.push(z);
                    }
                }
            }
            solved = true;
            break;
        }
        if !solved {
            return Err(Error::SingularPencil);
        }
    }

    // Cluster nearby candidates, then keep only points at which the rank
    // of the original pencil genuinely drops. The drop is judged against
    // nearby probe points with one shared singular-value cutoff, which
    // rejects spurious near-infinite candidates (where the pencil is
    // scale-imbalanced) and still catches drops where the whole pencil
    // evaluation becomes small.
    let mut drop_points: Vec<Complex<f64>> = Vec::new();
    let mut seen: Vec<Complex<f64>> = Vec::new();
    for z in candidates {
        if seen
            .iter()
            .any(|w| (w - z).norm() <= 1e-6 * z.norm().max(1.0))
        {
            continue;
        }
        seen.push(z);
        // Probe offsets grow until the neighbourhood exhibits the normal
        // rank; on badly scaled pencils a too-small offset leaves the
        // probes as degraded as the candidate itself.
        for &delta_rel in &[1e-3, 3e-2, 3e-1] {
            let delta = delta_rel * z.norm().max(1.0);
            let probe_points = [
                z + Complex::new(delta, 0.0),
                z - Complex::new(delta, 0.0),
                z + Complex::new(0.0, delta),
                z - Complex::new(0.0, delta),
            ];
            let (here, probes) = scaled_group_svals(z, &probe_points, &m0c, &m1c)?;
            let scale = probes
                .iter()
                .chain(std::iter::once(&here))
                .flat_map(|sv| sv.iter().copied())
                .fold(0.0_f64, f64::max);
            if scale == 0.0 {
                break;
            }
            let cutoff = verify_rank_tol * scale;
            let count = |sv: &[f64]| sv.iter().filter(|&&s| s > cutoff).count();
            let local_normal = probes.iter().map(|sv| count(sv)).max().unwrap_or(0);
            if count(&here) < local_normal.min(normal_rank) {
                drop_points.push(z);
                break;
            }
            if local_normal >= normal_rank {
                // The neighbourhood shows full normal rank and the
                // candidate does too: not a drop point.
                break;
            }
        }
    }
    drop_points.sort_by(|a, b| {
        (a.re, a.im)
            .partial_cmp(&(b.re, b.im))
            .expect("finite drop points")
    });
    Ok(PencilRankDrop {
        normal_rank,
        drop_points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::multisets_close;
    use proptest::prelude::*;

    fn tol() -> Tolerance {
        Tolerance::default()
    }

    #[test]
    fn square_pencil_drops_at_eigenvalues() {
        let m1 = DMatrix::<f64>::identity(2, 2);
        let m0 = DMatrix::from_row_slice(2, 2, &[0.5, 0., 0., 3.]);
        let out = pencil_rank_drop(&m0, &m1, &tol()).unwrap();
        assert_eq!(out.normal_rank, 2);
        let expected = vec![Complex::new(0.5, 0.0), Complex::new(3.0, 0.0)];
        assert!(multisets_close(&expected, &out.drop_points, 1e-7));
    }

    #[test]
    fn rosenbrock_pencil_of_example_has_no_drops() {
        // [zI - A, -E; C, 0] for the worked example: full rank for every z.
        let a = DMatrix::from_row_slice(3, 3, &[-1., -1., 0., -1., 0., 0., 0., -1., -1.]);
        let c = DMatrix::from_row_slice(2, 3, &[1., 0., 0., 0., 0., 1.]);
        let e = DMatrix::from_row_slice(3, 1, &[-1., 0., 0.]);
        let mut m1 = DMatrix::zeros(5, 4);
        m1.view_mut((0, 0), (3, 3)).copy_from(&DMatrix::identity(3, 3));
        let mut m0 = DMatrix::zeros(5, 4);
        m0.view_mut((0, 0), (3, 3)).copy_from(&a);
        m0.view_mut((0, 3), (3, 1)).copy_from(&e);
        m0.view_mut((3, 0), (2, 3)).copy_from(&(-&c));
        let out = pencil_rank_drop(&m0, &m1, &tol()).unwrap();
        assert_eq!(out.normal_rank, 4);
        assert!(out.drop_points.is_empty());
    }

    #[test]
    fn rectangular_single_column_pencil() {
        let m1 = DMatrix::from_row_slice(2, 1, &[1., 0.]);
        let m0 = DMatrix::from_row_slice(2, 1, &[2., 0.]);
        let out = pencil_rank_drop(&m0, &m1, &tol()).unwrap();
        assert_eq!(out.normal_rank, 1);
        assert_eq!(out.drop_points.len(), 1);
        assert!((out.drop_points[0] - Complex::new(2.0, 0.0)).norm() <= 1e-7);
    }

    #[test]
    fn zero_pencil_has_rank_zero() {
        let m = DMatrix::<f64>::zeros(2, 3);
        let out = pencil_rank_drop(&m, &m, &tol()).unwrap();
        assert_eq!(out.normal_rank, 0);
        assert!(out.drop_points.is_empty());
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let m0 = DMatrix::<f64>::zeros(2, 2);
        let m1 = DMatrix::<f64>::zeros(3, 2);
        assert!(matches!(
            pencil_rank_drop(&m0, &m1, &tol()),
            Err(Error::DimensionMismatch(_))
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn invertible_square_pencil_matches_generalized_eigenvalues(seed in 0u64..2048, n in 1usize..5) {
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
            // Diagonal dominance keeps M1 comfortably invertible.
            let m1 = random_matrix(n, n, &mut rng) + DMatrix::from_diagonal_element(n, n, 3.0);
            let m0 = random_matrix(n, n, &mut rng);
            let expected = eigenvalues_of(&(m1.clone().try_inverse().unwrap() * &m0)).unwrap();
            prop_assume!(pairwise_separated(&expected, 1e-3));
            let out = pencil_rank_drop(&m0, &m1, &tol()).unwrap();
            prop_assert_eq!(out.normal_rank, n);
            prop_assert!(multisets_close(&expected, &out.drop_points, 1e-5));
        }
    }

    fn pairwise_separated(points: &[Complex<f64>], gap: f64) -> bool {
        for (i, a) in points.iter().enumerate() {
            for b in points.iter().skip(i + 1) {
                if (a - b).norm() < gap {
                    return false;
                }
            }
        }
        true
    }
}
