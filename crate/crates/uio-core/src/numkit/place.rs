//! Pole placement by output injection via the controllability staircase of
//! the dual pair, with a structured deflation path for deadbeat requests.

use nalgebra::{Complex, DMatrix};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::util::{ensure_finite, multisets_close, random_matrix};

use super::{eigenvalues_of, pbh_detectable, singular_values, spectrum, Tolerance};

const HEYMANN_ATTEMPTS: usize = 24;
const PLACE_SEED: u64 = 0x5347_4149_u64;

struct Staircase {
    /// Orthogonal basis: `a_bar = q^T A q`, `b_bar = q^T B`.
    q: DMatrix<f64>,
    a_bar: DMatrix<f64>,
    b_bar: DMatrix<f64>,
    /// Dimension of the controllable (dually: observable) part.
    nc: usize,
}

fn controllability_staircase(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    tol: &Tolerance,
) -> Result<Staircase> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::NotSquare {
            rows: a.nrows(),
            cols: a.ncols(),
        });
    }
    if b.nrows() != n {
        return Err(Error::DimensionMismatch(format!(
            "input matrix has {} rows, state dimension is {}",
            b.nrows(),
            n
        )));
    }
    // Rank decisions inside the staircase are taken relative to the scale of
    // the original data, not of the (possibly vanishing) coupling block.
    let scale = a.norm().max(b.norm()).max(1.0);
    let threshold = tol.rank_tol() * scale;

    let mut q = DMatrix::<f64>::identity(n, n);
    let mut a_bar = a.clone();
    let mut coupling = b.clone();
    let mut off = 0;

    loop {
        let rows = n - off;
        if rows == 0 {
            break;
        }
        // Pad with zero columns so the thin SVD returns a full rows x rows U.
        let mut padded = DMatrix::zeros(rows, rows.max(coupling.ncols()));
        padded
            .columns_mut(0, coupling.ncols())
            .copy_from(&coupling);
        let svd = padded
            .try_svd(true, false, f64::EPSILON * 5.0, 0)
            .ok_or(Error::SvdFailure)?;
        let u = svd.u.as_ref().expect("u requested");
        let rank = svd
            .singular_values
            .iter()
            .filter(|&&s| s > threshold)
            .count();
        if rank == 0 {
            break;
        }
        // Rotate the trailing subspace.
        let rotated_rows = u.transpose() * a_bar.rows(off, rows);
        a_bar.rows_mut(off, rows).copy_from(&rotated_rows);
        let rotated_cols = a_bar.columns(off, rows) * u;
        a_bar.columns_mut(off, rows).copy_from(&rotated_cols);
        let rotated_q = q.columns(off, rows) * u;
        q.columns_mut(off, rows).copy_from(&rotated_q);

        off += rank;
        if off == n {
            break;
        }
        coupling = a_bar.view((off, off - rank), (n - off, rank)).into_owned();
    }

    let b_bar = q.transpose() * b;
    Ok(Staircase {
        q,
        a_bar,
        b_bar,
        nc: off,
    })
}

/// Dimension of the observable subspace of `(F, C)`.
pub fn observable_dim(f: &DMatrix<f64>, c: &DMatrix<f64>, tol: &Tolerance) -> Result<usize> {
    ensure_finite(f)?;
    ensure_finite(c)?;
    Ok(controllability_staircase(&f.transpose(), &c.transpose(), tol)?.nc)
}

/// Eigenvalues of the unobservable part of `(F, C)`.
pub fn unobservable_eigenvalues(
    f: &DMatrix<f64>,
    c: &DMatrix<f64>,
    tol: &Tolerance,
) -> Result<Vec<Complex<f64>>> {
    ensure_finite(f)?;
    ensure_finite(c)?;
    let st = controllability_staircase(&f.transpose(), &c.transpose(), tol)?;
    let n = f.nrows();
    let tail = st.a_bar.view((st.nc, st.nc), (n - st.nc, n - st.nc)).into_owned();
    eigenvalues_of(&tail)
}

/// Checks conjugate closure and returns the real coefficients
/// `[a1, ..., an]` of the monic polynomial with the given roots.
fn characteristic_coefficients(poles: &[Complex<f64>]) -> Result<Vec<f64>> {
    let scale = poles.iter().map(|p| p.norm()).fold(1.0_f64, f64::max);
    let pair_tol = 1e-9 * scale;
    let mut pending: Vec<Complex<f64>> = poles.to_vec();
    while let Some(p) = pending.pop() {
        if p.im.abs() <= pair_tol {
            continue;
        }
        let conj = p.conj();
        match pending
            .iter()
            .position(|q| (q - conj).norm() <= pair_tol)
        {
            Some(i) => {
                pending.swap_remove(i);
            }
            None => return Err(Error::PolesNotConjugateClosed),
        }
    }
    let mut coeffs: Vec<Complex<f64>> = vec![Complex::new(1.0, 0.0)];
    for p in poles {
        let mut next = vec![Complex::new(0.0, 0.0); coeffs.len() + 1];
        for (i, &c) in coeffs.iter().enumerate() {
            next[i] += c;
            next[i + 1] -= c * p;
        }
        coeffs = next;
    }
    Ok(coeffs.iter().skip(1).map(|c| c.re).collect())
}

/// Horner evaluation of the monic polynomial with coefficients
/// `[a1, ..., an]` at a square matrix.
fn polynomial_of_matrix(a: &DMatrix<f64>, coeffs: &[f64]) -> DMatrix<f64> {
    let n = a.nrows();
    let mut p = DMatrix::identity(n, n);
    for &c in coeffs {
        p = &p * a + DMatrix::from_diagonal_element(n, n, c);
    }
    p
}

fn ackermann(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    coeffs: &[f64],
    tol: &Tolerance,
) -> Result<Option<DMatrix<f64>>> {
    let n = a.nrows();
    let mut ctrb = DMatrix::zeros(n, n);
    let mut col = b.clone();
    for j in 0..n {
        ctrb.set_column(j, &col.column(0));
        col = a * col;
    }
    let svals = singular_values(&ctrb)?;
    let max = svals.iter().cloned().fold(0.0_f64, f64::max);
    if max == 0.0 || svals.iter().any(|&s| s <= tol.rank_tol() * max) {
        return Ok(None);
    }
    let mut rhs = DMatrix::zeros(n, 1);
    rhs[(n - 1, 0)] = 1.0;
    let w = match ctrb.transpose().lu().solve(&rhs) {
        Some(w) => w,
        None => return Ok(None),
    };
    Ok(Some(w.transpose() * polynomial_of_matrix(a, coeffs)))
}

fn is_deadbeat_request(poles: &[Complex<f64>]) -> bool {
    poles.iter().all(|p| p.norm() <= 1e-12)
}

/// State-feedback placement on the controllable part of `(A, B)`.
///
/// Uncontrollable modes must already be stable; they are left untouched.
fn place_state_feedback(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    poles: &[Complex<f64>],
    tol: &Tolerance,
) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let m = b.ncols();
    let st = controllability_staircase(a, b, tol)?;
    let nc = st.nc;

    let tail = st.a_bar.view((nc, nc), (n - nc, n - nc)).into_owned();
    let frozen: Vec<Complex<f64>> = eigenvalues_of(&tail)?
        .into_iter()
        .filter(|l| l.norm() >= 1.0 - tol.stability_margin())
        .collect();
    if !frozen.is_empty() {
        return Err(Error::NotDetectable { offending: frozen });
    }
    if poles.len() != nc {
        return Err(Error::PoleCountMismatch {
            expected: nc,
            got: poles.len(),
        });
    }
    if nc == 0 {
        return Ok(DMatrix::zeros(m, n));
    }

    let coeffs = characteristic_coefficients(poles)?;
    let ac = st.a_bar.view((0, 0), (nc, nc)).into_owned();
    let bc = st.b_bar.rows(0, nc).into_owned();
    let deadbeat = is_deadbeat_request(poles);
    let pole_scale = poles.iter().map(|p| p.norm()).fold(1.0_f64, f64::max);

    let mut rng = ChaCha12Rng::seed_from_u64(PLACE_SEED);
    for attempt in 0..HEYMANN_ATTEMPTS {
        // Heymann reduction to a single input: generically (Ac - Bc*G, Bc*v)
        // is controllable; the first attempt is the deterministic choice.
        let (g, v) = if attempt == 0 {
            let widest = (0..m)
                .max_by(|&i, &j| {
                    bc.column(i)
                        .norm()
                        .partial_cmp(&bc.column(j).norm())
                        .unwrap()
                })
                .unwrap_or(0);
            let mut v = DMatrix::zeros(m, 1);
            v[(widest, 0)] = 1.0;
            (DMatrix::zeros(m, nc), v)
        } else {
            (random_matrix(m, nc, &mut rng), random_matrix(m, 1, &mut rng))
        };
        let bvec = &bc * &v;
        if bvec.norm() <= 1e-12 * bc.norm().max(1.0) {
            continue;
        }
        let a_try = &ac - &bc * &g;
        let kbar = match ackermann(&a_try, &bvec, &coeffs, tol)? {
            Some(k) => k,
            None => continue,
        };
        let kc = &g + &v * &kbar;
        let closed = &ac - &bc * &kc;

        let ok = if deadbeat {
            let mut power = DMatrix::<f64>::identity(nc, nc);
            for _ in 0..nc {
                power = &power * &closed;
            }
            power.norm() <= tol.residual_tol()
        } else {
            let eigs = eigenvalues_of(&closed)?;
            multisets_close(poles, &eigs, 1e-6 * pole_scale)
        };
        if ok {
            let mut k_stair = DMatrix::zeros(m, n);
            k_stair.columns_mut(0, nc).copy_from(&kc);
            return Ok(k_stair * st.q.transpose());
        }
    }
    Err(Error::PlacementFailure(
        "no gain reproduced the requested spectrum within the attempt budget".into(),
    ))
}

/// Greedy pivoted selection of `count` well-conditioned columns.
fn select_columns(c: &DMatrix<f64>, count: usize) -> Option<Vec<usize>> {
    let mut residual = c.clone();
    let mut chosen = Vec::with_capacity(count);
    let floor = 1e-7 * c.norm().max(1.0);
    for _ in 0..count {
        let best = (0..residual.ncols())
            .filter(|j| !chosen.contains(j))
            .max_by(|&i, &j| {
                residual
                    .column(i)
                    .norm()
                    .partial_cmp(&residual.column(j).norm())
                    .unwrap()
            })?;
        let norm = residual.column(best).norm();
        if norm <= floor {
            return None;
        }
        let q = residual.column(best) / norm;
        chosen.push(best);
        for j in 0..residual.ncols() {
            let proj = q.dot(&residual.column(j));
            let updated = residual.column(j) - &q * proj;
            residual.set_column(j, &updated);
        }
    }
    chosen.sort_unstable();
    Some(chosen)
}

/// Deadbeat output-injection gain with exact structural zeros.
///
/// Targets the columns of `F - L C` reachable through `C` so the closed loop
/// is nilpotent as stored, which keeps its computed eigenvalues at
/// machine-noise level instead of the `eps^(1/n)` blow-up that generic
/// gains exhibit. Applies when `C` reaches all, or all but one, columns.
fn deadbeat_structured_gain(
    f: &DMatrix<f64>,
    c: &DMatrix<f64>,
    tol: &Tolerance,
) -> Option<DMatrix<f64>> {
    let n = f.nrows();
    let p = c.nrows();

    let candidate = if p >= n {
        let cpinv = super::pinv(c, tol).ok()?;
        Some(f * cpinv)
    } else if p + 1 == n {
        let picked = select_columns(c, p)?;
        let missing = (0..n).find(|j| !picked.contains(j))?;
        let mut cj = DMatrix::zeros(p, p);
        let mut fj = DMatrix::zeros(n, p);
        for (slot, &j) in picked.iter().enumerate() {
            cj.set_column(slot, &c.column(j));
            fj.set_column(slot, &f.column(j));
        }
        let cj_inv = cj.try_inverse()?;
        let mut gain = &fj * &cj_inv;
        // Two correction sweeps: zero the reachable columns, then balance a
        // 2x2 block against the untouched column so the trace and the
        // determinant of the nonzero part vanish.
        for _ in 0..2 {
            let m_col = f.column(missing) - &gain * c.column(missing);
            let m_k = m_col[missing];
            let b_slot = (0..p)
                .max_by(|&i, &j| {
                    m_col[picked[i]]
                        .abs()
                        .partial_cmp(&m_col[picked[j]].abs())
                        .unwrap()
                })?;
            let m_b = m_col[picked[b_slot]];
            let mut targets = DMatrix::zeros(n, p);
            if m_b.abs() > 1e-14 * f.norm().max(1.0) {
                targets[(picked[b_slot], b_slot)] = -m_k;
                targets[(missing, b_slot)] = -m_k * m_k / m_b;
            } else if m_k.abs() > tol.residual_tol() {
                return None;
            }
            gain = (&fj - &targets) * &cj_inv;
        }
        Some(gain)
    } else {
        None
    };

    let gain = candidate?;
    let closed = f - &gain * c;
    let mut power = DMatrix::<f64>::identity(n, n);
    for _ in 0..n {
        power = &power * &closed;
    }
    if power.norm() > tol.residual_tol() {
        return None;
    }
    let report = spectrum(&closed, tol).ok()?;
    if report.spectral_radius > tol.residual_tol() {
        return None;
    }
    Some(gain)
}

/// Output-injection gain `L` such that `F - L C` carries the requested
/// observable poles while unobservable (stable) modes are left untouched.
///
/// The pole list must be closed under conjugation and its length must equal
/// the observable dimension of the pair. Deadbeat requests are verified by
/// the nilpotency norm test instead of eigenvalue inspection.
pub fn place_output_injection(
    f: &DMatrix<f64>,
    c: &DMatrix<f64>,
    poles: &[Complex<f64>],
    tol: &Tolerance,
) -> Result<DMatrix<f64>> {
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
    let pbh = pbh_detectable(f, c, tol)?;
    if !pbh.detectable {
        return Err(Error::NotDetectable {
            offending: pbh.offending,
        });
    }
    characteristic_coefficients(poles)?;
    let nc = observable_dim(f, c, tol)?;
    if poles.len() != nc {
        return Err(Error::PoleCountMismatch {
            expected: nc,
            got: poles.len(),
        });
    }
    if is_deadbeat_request(poles) && nc == n {
        if let Some(gain) = deadbeat_structured_gain(f, c, tol) {
            return Ok(gain);
        }
    }
    let k = place_state_feedback(&f.transpose(), &c.transpose(), poles, tol)?;
    Ok(k.transpose())
}
