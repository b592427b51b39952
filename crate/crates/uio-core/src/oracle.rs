//! Model-based side: system model, observer validity conditions, the
//! classical existence test, observer design, random test systems and the
//! plant simulator.
//!
//! A system is
//!
//! ```text
//! x(t+1) = A x(t) + B u(t) + E d(t)
//! y(t)   = C x(t)
//! ```
//!
//! with `E` of full column rank (use [`normalize_e`] to reduce a rank
//! deficient disturbance matrix first). An observer
//!
//! ```text
//! z(t+1) = A_uio z(t) + B_u u(t) + B_y y(t)
//! xhat(t) = z(t) + D y(t)
//! ```
//!
//! is valid for the system when `A_uio` is Schur stable, `D C E = E`,
//! `B_u = (I - D C) B` and `A_uio (I - D C) + B_y C = (I - D C) A`; the
//! estimation error then follows `e(t+1) = A_uio e(t)` for every
//! disturbance realization.

use std::path::Path;

use nalgebra::{Complex, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::datamat::Trajectory;
use crate::error::{Error, Result};
use crate::numkit::{
    observable_dim, pbh_detectable, pencil_rank_drop, pinv, place_output_injection, rank_of,
    residual_norm, spectrum, Tolerance,
};
use crate::util::{ensure_finite, hstack, random_matrix};

/// Discrete-time LTI plant with an unknown input channel.
#[derive(Clone, Debug, PartialEq)]
pub struct SystemModel {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
    e: DMatrix<f64>,
}

impl SystemModel {
    /// Validates dimensions, finiteness and full column rank of `E`.
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        e: DMatrix<f64>,
    ) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::NotSquare {
                rows: a.nrows(),
                cols: a.ncols(),
            });
        }
        if b.nrows() != n {
            return Err(Error::InvalidSystem(format!(
                "B has {} rows, expected {n}",
                b.nrows()
            )));
        }
        if c.ncols() != n || c.nrows() == 0 {
            return Err(Error::InvalidSystem(format!(
                "C is {}x{}, expected p x {n} with p >= 1",
                c.nrows(),
                c.ncols()
            )));
        }
        if e.nrows() != n {
            return Err(Error::InvalidSystem(format!(
                "E has {} rows, expected {n}",
                e.nrows()
            )));
        }
        for m in [&a, &b, &c, &e] {
            ensure_finite(m)?;
        }
        let r = e.ncols();
        if rank_of(&e, &Tolerance::default())? != r {
            return Err(Error::InvalidSystem(
                "E is column-rank deficient; reduce it with normalize_e first".into(),
            ));
        }
        Ok(Self { a, b, c, e })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn e(&self) -> &DMatrix<f64> {
        &self.e
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.c.nrows()
    }

    pub fn disturbance_dim(&self) -> usize {
        self.e.ncols()
    }

    /// The worked three-state example used throughout the tests: no known
    /// input, two outputs, one scalar disturbance.
    pub fn example() -> Self {
        let a = DMatrix::from_row_slice(3, 3, &[-1., -1., 0., -1., 0., 0., 0., -1., -1.]);
        let b = DMatrix::zeros(3, 0);
        let c = DMatrix::from_row_slice(2, 3, &[1., 0., 0., 0., 0., 1.]);
        let e = DMatrix::from_row_slice(3, 1, &[-1., 0., 0.]);
        Self::new(a, b, c, e).expect("example model is valid")
    }
}

/// Observer matrices; validity with respect to a concrete system is decided
/// by [`check_uio_conditions`].
#[derive(Clone, Debug, PartialEq)]
pub struct UioRealization {
    pub a_uio: DMatrix<f64>,
    pub b_u: DMatrix<f64>,
    pub b_y: DMatrix<f64>,
    pub d: DMatrix<f64>,
}

impl UioRealization {
    pub fn new(
        a_uio: DMatrix<f64>,
        b_u: DMatrix<f64>,
        b_y: DMatrix<f64>,
        d: DMatrix<f64>,
    ) -> Result<Self> {
        let n = a_uio.nrows();
        if a_uio.ncols() != n {
            return Err(Error::NotSquare {
                rows: a_uio.nrows(),
                cols: a_uio.ncols(),
            });
        }
        if b_u.nrows() != n || b_y.nrows() != n || d.nrows() != n {
            return Err(Error::DimensionMismatch(
                "observer blocks must all have n rows".into(),
            ));
        }
        if b_y.ncols() != d.ncols() {
            return Err(Error::DimensionMismatch(
                "B_y and D must share the output dimension".into(),
            ));
        }
        for m in [&a_uio, &b_u, &b_y, &d] {
            ensure_finite(m)?;
        }
        Ok(Self { a_uio, b_u, b_y, d })
    }

    pub fn state_dim(&self) -> usize {
        self.a_uio.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b_u.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.d.ncols()
    }
}

/// Factors a possibly rank-deficient disturbance matrix as
/// `E_raw = E * T_reduce` with `E` of full column rank and `T_reduce` of
/// full row rank. Already full-rank input is returned unchanged with an
/// identity reduction.
pub fn normalize_e(e_raw: &DMatrix<f64>, tol: &Tolerance) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    ensure_finite(e_raw)?;
    let (n, r) = e_raw.shape();
    let rank = rank_of(e_raw, tol)?;
    if rank == r {
        return Ok((e_raw.clone(), DMatrix::identity(r, r)));
    }
    if rank == 0 {
        return Ok((DMatrix::zeros(n, 0), DMatrix::zeros(0, r)));
    }
    let svd = crate::numkit::svd_of(e_raw)?;
    let u = svd.u.as_ref().expect("u requested");
    let v_t = svd.v_t.as_ref().expect("v_t requested");
    let mut e = DMatrix::zeros(n, rank);
    let mut t_reduce = DMatrix::zeros(rank, r);
    for i in 0..rank {
        e.column_mut(i).copy_from(&u.column(i));
        t_reduce
            .row_mut(i)
            .copy_from(&(v_t.row(i) * svd.singular_values[i]));
    }
    Ok((e, t_reduce))
}

/// Residuals of the observer validity conditions against a system.
#[derive(Clone, Debug, Serialize)]
pub struct ConditionResiduals {
    /// Schur stability of `A_uio`.
    pub stable: bool,
    pub spectral_radius: f64,
    /// `|| D C E - E ||`
    pub disturbance_decoupling: f64,
    /// `|| (I - D C) B - B_u ||`
    pub input_matching: f64,
    /// `|| A_uio (I - D C) + B_y C - (I - D C) A ||`
    pub error_dynamics: f64,
    pub pass: bool,
}

impl ConditionResiduals {
    pub fn max_residual(&self) -> f64 {
        self.disturbance_decoupling
            .max(self.input_matching)
            .max(self.error_dynamics)
    }
}

/// Evaluates the observer validity conditions and reports one residual per
/// algebraic condition plus the stability verdict.
pub fn check_uio_conditions(
    s: &SystemModel,
    u: &UioRealization,
    tol: &Tolerance,
) -> Result<ConditionResiduals> {
    let n = s.state_dim();
    if u.state_dim() != n || u.input_dim() != s.input_dim() || u.output_dim() != s.output_dim() {
        return Err(Error::DimensionMismatch(
            "observer dimensions do not match the system".into(),
        ));
    }
    let eye = DMatrix::identity(n, n);
    let i_dc = &eye - &u.d * s.c();
    let report = spectrum(&u.a_uio, tol)?;
    let disturbance_decoupling = residual_norm(&(&u.d * (s.c() * s.e()) - s.e()));
    let input_matching = residual_norm(&(&i_dc * s.b() - &u.b_u));
    let error_dynamics =
        residual_norm(&(&u.a_uio * &i_dc + &u.b_y * s.c() - &i_dc * s.a()));
    let pass = report.is_schur
        && disturbance_decoupling <= tol.residual_tol()
        && input_matching <= tol.residual_tol()
        && error_dynamics <= tol.residual_tol();
    Ok(ConditionResiduals {
        stable: report.is_schur,
        spectral_radius: report.spectral_radius,
        disturbance_decoupling,
        input_matching,
        error_dynamics,
        pass,
    })
}

/// Model-based existence verdict with its numeric evidence.
#[derive(Clone, Debug, Serialize)]
pub struct ExistenceReport {
    pub rank_ce: usize,
    pub rank_e: usize,
    pub rank_ce_ok: bool,
    pub rosenbrock_normal_rank: usize,
    pub rosenbrock_expected_rank: usize,
    /// Verified rank-drop points of `[zI - A, -E; C, 0]` at or outside the
    /// unit circle.
    #[serde(serialize_with = "serialize_complex_vec")]
    pub unstable_drop_points: Vec<Complex<f64>>,
    pub rosenbrock_ok: bool,
    pub strong_star_detectable: bool,
}

pub(crate) fn serialize_complex_vec<S>(
    v: &[Complex<f64>],
    ser: S,
) -> std::result::Result<S::Ok, S::Error>
where
    S: serde::Serializer,
{
    use serde::ser::SerializeSeq;
    let mut seq = ser.serialize_seq(Some(v.len()))?;
    for z in v {
        seq.serialize_element(&[z.re, z.im])?;
    }
    seq.end()
}

/// Rosenbrock pencil `[zI - A, -E; C, 0]` written as `z*M1 - M0`.
fn rosenbrock_blocks(s: &SystemModel) -> (DMatrix<f64>, DMatrix<f64>) {
    let (n, p, r) = (s.state_dim(), s.output_dim(), s.disturbance_dim());
    let mut m1 = DMatrix::zeros(n + p, n + r);
    m1.view_mut((0, 0), (n, n))
        .copy_from(&DMatrix::identity(n, n));
    let mut m0 = DMatrix::zeros(n + p, n + r);
    m0.view_mut((0, 0), (n, n)).copy_from(s.a());
    m0.view_mut((0, n), (n, r)).copy_from(s.e());
    m0.view_mut((n, 0), (p, n)).copy_from(&(-s.c()));
    (m0, m1)
}

/// Classical existence test: `rank(CE) = rank(E) = r` plus full rank of the
/// Rosenbrock pencil at every point on or outside the unit circle.
///
/// The rank of the product `C E` is judged against the scale of its
/// factors: singular values below `rank_tol * ||C|| ||E||` count as zero,
/// so a product that vanishes up to rounding is rank deficient even though
/// its stored entries are not exactly zero.
pub fn existence_model_based(s: &SystemModel, tol: &Tolerance) -> Result<ExistenceReport> {
    let r = s.disturbance_dim();
    let rank_e = rank_of(s.e(), tol)?;
    let ce = s.c() * s.e();
    let scale = (s.c().norm() * s.e().norm()).max(ce.norm());
    let cutoff = tol.rank_tol() * scale;
    let rank_ce = crate::numkit::singular_values(&ce)?
        .iter()
        .filter(|&&sv| sv > cutoff)
        .count();
    let rank_ce_ok = rank_ce == r && rank_e == r;

    let (m0, m1) = rosenbrock_blocks(s);
    let pencil = pencil_rank_drop(&m0, &m1, tol)?;
    let expected = s.state_dim() + r;
    let unstable_drop_points: Vec<Complex<f64>> = pencil
        .drop_points
        .iter()
        .copied()
        .filter(|z| z.norm() >= 1.0 - tol.stability_margin())
        .collect();
    let rosenbrock_ok = pencil.normal_rank == expected && unstable_drop_points.is_empty();
    Ok(ExistenceReport {
        rank_ce,
        rank_e,
        rank_ce_ok,
        rosenbrock_normal_rank: pencil.normal_rank,
        rosenbrock_expected_rank: expected,
        unstable_drop_points,
        rosenbrock_ok,
        strong_star_detectable: rank_ce_ok && rosenbrock_ok,
    })
}

/// Requested observer poles.
#[derive(Clone, Debug, PartialEq)]
pub enum PoleSpec {
    /// All observable poles at the origin; the error vanishes in at most
    /// `n` steps.
    Deadbeat,
    /// Explicit pole list, conjugate-closed, one entry per observable mode.
    List(Vec<Complex<f64>>),
}

impl PoleSpec {
    pub(crate) fn materialize(&self, observable: usize) -> Result<Vec<Complex<f64>>> {
        match self {
            PoleSpec::Deadbeat => Ok(vec![Complex::new(0.0, 0.0); observable]),
            PoleSpec::List(list) => {
                if list.len() != observable {
                    return Err(Error::PoleCountMismatch {
                        expected: observable,
                        got: list.len(),
                    });
                }
                Ok(list.clone())
            }
        }
    }
}

const D_DRAW_BUDGET: usize = 64;

/// Designs an observer from the system matrices.
///
/// `D` is picked from the solution family of `D C E = E`, written as
/// `E (CE)^+ + Z (I - (CE)(CE)^+)` with `Z` free: first `Z = 0`, then random
/// draws until `((I - D C) A, C)` turns out detectable. The remaining gain
/// comes from pole placement on that pair.
pub fn design_model_based(
    s: &SystemModel,
    poles: &PoleSpec,
    tol: &Tolerance,
    seed: u64,
) -> Result<UioRealization> {
    let report = existence_model_based(s, tol)?;
    if !report.rank_ce_ok {
        return Err(Error::ObserverNonexistent {
            condition: "disturbance decoupling rank condition rank(CE) = rank(E)",
        });
    }
    if !report.strong_star_detectable {
        return Err(Error::ObserverNonexistent {
            condition: "unit-circle rank condition on the system pencil",
        });
    }

    let (n, p) = (s.state_dim(), s.output_dim());
    let eye_n = DMatrix::identity(n, n);
    let ce = s.c() * s.e();
    let ce_pinv = pinv(&ce, tol)?;
    let d_particular = s.e() * &ce_pinv;
    let projector = DMatrix::identity(p, p) - &ce * &ce_pinv;

    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut last_offending = Vec::new();
    let mut pole_mismatch: Option<Error> = None;
    for draw in 0..=D_DRAW_BUDGET {
        let d = if draw == 0 {
            d_particular.clone()
        } else {
            &d_particular + random_matrix(n, p, &mut rng) * &projector
        };
        let f = (&eye_n - &d * s.c()) * s.a();
        let pbh = pbh_detectable(&f, s.c(), tol)?;
        if !pbh.detectable {
            last_offending = pbh.offending;
            continue;
        }
        let observable = observable_dim(&f, s.c(), tol)?;
        let pole_list = match poles.materialize(observable) {
            Ok(list) => list,
            Err(e) => {
                pole_mismatch = Some(e);
                continue;
            }
        };
        let l = match place_output_injection(&f, s.c(), &pole_list, tol) {
            Ok(l) => l,
            Err(Error::PlacementFailure(_)) => continue,
            Err(e) => return Err(e),
        };
        let a_uio = &f - &l * s.c();
        let b_y = &l + &a_uio * &d;
        let b_u = (&eye_n - &d * s.c()) * s.b();
        let uio = UioRealization::new(a_uio, b_u, b_y, d)?;
        let residuals = check_uio_conditions(s, &uio, tol)?;
        if residuals.pass {
            return Ok(uio);
        }
        if !residuals.stable {
            return Err(Error::NotSchur {
                spectral_radius: residuals.spectral_radius,
            });
        }
    }
    if let Some(e) = pole_mismatch {
        return Err(e);
    }
    Err(Error::DetectableSearchExhausted {
        budget: D_DRAW_BUDGET,
        offending: last_offending,
    })
}

/// How a random test system was constructed.
#[derive(Clone, Debug, PartialEq)]
pub enum Construction {
    StrongStarDetectable,
    /// `C E` made rank deficient, so no observer can decouple the
    /// disturbance.
    RankDeficientCe,
    /// An invariant zero planted on or outside the unit circle.
    UnstableZero { z: Complex<f64> },
}

/// A random system together with the construction used to produce it.
#[derive(Clone, Debug)]
pub struct GeneratedSystem {
    pub model: SystemModel,
    pub construction: Construction,
}

const GENERATION_BUDGET: usize = 400;

fn reachable_from_both(s: &SystemModel, tol: &Tolerance) -> Result<bool> {
    let n = s.state_dim();
    let be = hstack(&[s.b(), s.e()]);
    let mut block = be.clone();
    let mut ctrb = be;
    for _ in 1..n {
        block = s.a() * block;
        ctrb = hstack(&[&ctrb, &block]);
    }
    Ok(rank_of(&ctrb, tol)? == n)
}

/// Draws a random system whose model-based existence verdict equals
/// `want_strong_star`, by rejection sampling with a bounded retry budget.
///
/// Positive targets additionally have `(A, [B E])` reachable, so a
/// persistently exciting experiment can satisfy the data assumption.
/// Negative targets alternate between a rank-deficient `C E` and a planted
/// invariant zero outside the unit circle; the construction used is
/// recorded so tests can stratify.
pub fn random_system(
    n: usize,
    m: usize,
    p: usize,
    r: usize,
    want_strong_star: bool,
    seed: u64,
    tol: &Tolerance,
) -> Result<GeneratedSystem> {
    if n == 0 || p == 0 || r == 0 {
        return Err(Error::InvalidSystem(
            "need n >= 1, p >= 1 and r >= 1".into(),
        ));
    }
    if want_strong_star && p < r {
        return Err(Error::InvalidSystem(format!(
            "a strong*-detectable system needs p >= r, got p = {p}, r = {r}"
        )));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    // The seed picks which violation flavor is tried first; attempts
    // alternate so both get a chance if one keeps failing.
    let zero_first = (seed >> 1) % 2 == 1;
    for attempt in 0..GENERATION_BUDGET {
        let use_zero_flavor = p >= r && (zero_first == (attempt % 2 == 0));
        if want_strong_star {
            let a = random_matrix(n, n, &mut rng);
            let b = random_matrix(n, m, &mut rng);
            let c = random_matrix(p, n, &mut rng);
            let e = random_matrix(n, r, &mut rng);
            let Ok(model) = SystemModel::new(a, b, c, e) else {
                continue;
            };
            if !reachable_from_both(&model, tol)? {
                continue;
            }
            if existence_model_based(&model, tol)?.strong_star_detectable {
                return Ok(GeneratedSystem {
                    model,
                    construction: Construction::StrongStarDetectable,
                });
            }
        } else if !use_zero_flavor {
            // Kill the decoupling rank condition: project C away from E.
            let e = random_matrix(n, r, &mut rng);
            let b = random_matrix(n, m, &mut rng);
            let c0 = random_matrix(p, n, &mut rng);
            let c = if p < r {
                c0
            } else {
                let e_pinv = pinv(&e, tol)?;
                c0 * (DMatrix::identity(n, n) - &e * e_pinv)
            };
            let a = random_matrix(n, n, &mut rng);
            let Ok(model) = SystemModel::new(a, b, c, e) else {
                continue;
            };
            if !reachable_from_both(&model, tol)? {
                continue;
            }
            let report = existence_model_based(&model, tol)?;
            if !report.rank_ce_ok && !report.strong_star_detectable {
                return Ok(GeneratedSystem {
                    model,
                    construction: Construction::RankDeficientCe,
                });
            }
        } else {
            // Plant an invariant zero at a real z0 outside the unit circle:
            // force (z0 I - A) x0 = E d0 and C x0 = 0 for some x0, d0 != 0.
            let z0 = rng.random_range(1.3..2.5) * if rng.random_range(0.0..1.0) < 0.5 { -1.0 } else { 1.0 };
            let a = random_matrix(n, n, &mut rng);
            let b = random_matrix(n, m, &mut rng);
            let x0 = random_matrix(n, 1, &mut rng);
            if x0.norm() < 1e-3 {
                continue;
            }
            let d0 = random_matrix(r, 1, &mut rng);
            if d0.norm() < 1e-3 {
                continue;
            }
            let v = (DMatrix::from_diagonal_element(n, n, z0) - &a) * &x0;
            let mut e = random_matrix(n, r, &mut rng);
            let correction = (&v - &e * &d0) * d0.transpose() / d0.norm_squared();
            e += correction;
            let c0 = random_matrix(p, n, &mut rng);
            let c = c0 * (DMatrix::identity(n, n) - &x0 * x0.transpose() / x0.norm_squared());
            let Ok(model) = SystemModel::new(a, b, c, e) else {
                continue;
            };
            if !reachable_from_both(&model, tol)? {
                continue;
            }
            let report = existence_model_based(&model, tol)?;
            if report.rank_ce_ok && !report.strong_star_detectable {
                return Ok(GeneratedSystem {
                    model,
                    construction: Construction::UnstableZero {
                        z: Complex::new(z0, 0.0),
                    },
                });
            }
        }
    }
    Err(Error::GenerationBudgetExhausted {
        budget: GENERATION_BUDGET,
    })
}

/// Runs the plant recursion and records the applied disturbance in the
/// returned trajectory.
pub fn simulate_system(
    s: &SystemModel,
    x0: &DVector<f64>,
    u: &[DVector<f64>],
    d: &[DVector<f64>],
    horizon: usize,
) -> Result<Trajectory> {
    let (n, m, r) = (s.state_dim(), s.input_dim(), s.disturbance_dim());
    if horizon < 2 {
        return Err(Error::InvalidTrajectory(format!(
            "horizon must be at least 2, got {horizon}"
        )));
    }
    if x0.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "x0 has dimension {}, expected {n}",
            x0.len()
        )));
    }
    let steps = horizon - 1;
    let u_ok = u.len() == steps || (m == 0 && u.is_empty());
    let d_ok = d.len() == steps || (r == 0 && d.is_empty());
    if !u_ok {
        return Err(Error::DimensionMismatch(format!(
            "expected {steps} input samples, got {}",
            u.len()
        )));
    }
    if !d_ok {
        return Err(Error::DimensionMismatch(format!(
            "expected {steps} disturbance samples, got {}",
            d.len()
        )));
    }
    let zero_u = DVector::zeros(m);
    let zero_d = DVector::zeros(r);
    let mut xs = Vec::with_capacity(horizon);
    let mut ys = Vec::with_capacity(horizon);
    let mut x = x0.clone();
    for t in 0..horizon {
        ys.push(s.c() * &x);
        xs.push(x.clone());
        if t + 1 < horizon {
            let ut = u.get(t).unwrap_or(&zero_u);
            let dt = d.get(t).unwrap_or(&zero_d);
            if ut.len() != m {
                return Err(Error::DimensionMismatch(format!(
                    "input sample {t} has dimension {}, expected {m}",
                    ut.len()
                )));
            }
            if dt.len() != r {
                return Err(Error::DimensionMismatch(format!(
                    "disturbance sample {t} has dimension {}, expected {r}",
                    dt.len()
                )));
            }
            x = s.a() * &x + s.b() * ut + s.e() * dt;
        }
    }
    let u_rec = if m == 0 && u.is_empty() {
        vec![DVector::zeros(0); steps]
    } else {
        u.to_vec()
    };
    let d_rec = if r == 0 {
        None
    } else {
        Some(d.to_vec())
    };
    Trajectory::new(u_rec, ys, xs, d_rec)
}

/// One synthetic experiment: seeded uniform inputs and initial state on
/// `(-1, 1)`, disturbance on the given range.
pub fn random_experiment(
    s: &SystemModel,
    horizon: usize,
    seed: u64,
    d_range: (f64, f64),
) -> Result<Trajectory> {
    if d_range.0 >= d_range.1 {
        return Err(Error::InvalidSignal(format!(
            "empty disturbance range ({}, {})",
            d_range.0, d_range.1
        )));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let steps = horizon.saturating_sub(1);
    let x0 = DVector::from_fn(s.state_dim(), |_, _| rng.random_range(-1.0..1.0));
    let u: Vec<DVector<f64>> = (0..steps)
        .map(|_| DVector::from_fn(s.input_dim(), |_, _| rng.random_range(-1.0..1.0)))
        .collect();
    let d: Vec<DVector<f64>> = (0..steps)
        .map(|_| DVector::from_fn(s.disturbance_dim(), |_, _| rng.random_range(d_range.0..d_range.1)))
        .collect();
    simulate_system(s, &x0, &u, &d, horizon)
}

// ---------------------------------------------------------------------
// Structured-text (JSON) serialization of models and observers.
// ---------------------------------------------------------------------

fn mat_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

fn rows_to_mat(rows: &[Vec<f64>], nrows: usize, ncols: usize, what: &str) -> Result<DMatrix<f64>> {
    if ncols == 0 || nrows == 0 {
        if !rows.is_empty() && rows.iter().any(|r| !r.is_empty()) {
            return Err(Error::InvalidSystem(format!(
                "{what} should be empty for its declared dimensions"
            )));
        }
        return Ok(DMatrix::zeros(nrows, ncols));
    }
    if rows.len() != nrows || rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::InvalidSystem(format!(
            "{what} must be {nrows}x{ncols}"
        )));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

#[derive(Serialize, Deserialize)]
struct SystemModelFile {
    n: usize,
    m: usize,
    p: usize,
    r: usize,
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    b: Vec<Vec<f64>>,
    #[serde(rename = "C")]
    c: Vec<Vec<f64>>,
    #[serde(rename = "E")]
    e: Vec<Vec<f64>>,
}

pub fn write_system(path: &Path, s: &SystemModel) -> Result<()> {
    let file = SystemModelFile {
        n: s.state_dim(),
        m: s.input_dim(),
        p: s.output_dim(),
        r: s.disturbance_dim(),
        a: mat_to_rows(s.a()),
        b: mat_to_rows(s.b()),
        c: mat_to_rows(s.c()),
        e: mat_to_rows(s.e()),
    };
    let body = serde_json::to_string_pretty(&file).expect("model serializes");
    std::fs::write(path, body + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_system(path: &Path) -> Result<SystemModel> {
    let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: SystemModelFile = serde_json::from_str(&raw).map_err(|e| Error::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    SystemModel::new(
        rows_to_mat(&file.a, file.n, file.n, "A")?,
        rows_to_mat(&file.b, file.n, file.m, "B")?,
        rows_to_mat(&file.c, file.p, file.n, "C")?,
        rows_to_mat(&file.e, file.n, file.r, "E")?,
    )
}

#[derive(Serialize, Deserialize)]
struct UioFile {
    n: usize,
    m: usize,
    p: usize,
    #[serde(rename = "A_uio")]
    a_uio: Vec<Vec<f64>>,
    #[serde(rename = "B_u")]
    b_u: Vec<Vec<f64>>,
    #[serde(rename = "B_y")]
    b_y: Vec<Vec<f64>>,
    #[serde(rename = "D_uio")]
    d: Vec<Vec<f64>>,
}

pub fn write_uio(path: &Path, u: &UioRealization) -> Result<()> {
    let file = UioFile {
        n: u.state_dim(),
        m: u.input_dim(),
        p: u.output_dim(),
        a_uio: mat_to_rows(&u.a_uio),
        b_u: mat_to_rows(&u.b_u),
        b_y: mat_to_rows(&u.b_y),
        d: mat_to_rows(&u.d),
    };
    let body = serde_json::to_string_pretty(&file).expect("observer serializes");
    std::fs::write(path, body + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_uio(path: &Path) -> Result<UioRealization> {
    let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: UioFile = serde_json::from_str(&raw).map_err(|e| Error::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    UioRealization::new(
        rows_to_mat(&file.a_uio, file.n, file.n, "A_uio")?,
        rows_to_mat(&file.b_u, file.n, file.m, "B_u")?,
        rows_to_mat(&file.b_y, file.n, file.p, "B_y")?,
        rows_to_mat(&file.d, file.n, file.p, "D_uio")?,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn tol() -> Tolerance {
        Tolerance::default()
    }

    /// D from the worked example's solution family, parameterized by
    /// (a, b, c) in its free entries.
    fn example_d(a: f64, b: f64, c: f64) -> DMatrix<f64> {
        DMatrix::from_row_slice(3, 2, &[1., a, 0., b, 0., c])
    }

    #[test]
    fn normalize_e_keeps_full_rank_input() {
        let e = DMatrix::from_row_slice(3, 1, &[-1., 0., 0.]);
        let (e2, t) = normalize_e(&e, &tol()).unwrap();
        assert_eq!(e2, e);
        assert_eq!(t, DMatrix::identity(1, 1));
    }

    #[test]
    fn normalize_e_reduces_repeated_column() {
        let col = DMatrix::from_row_slice(3, 1, &[1., 2., -1.]);
        let mut raw = DMatrix::zeros(3, 2);
        raw.set_column(0, &col.column(0));
        raw.set_column(1, &(col.column(0) * 2.0));
        let (e, t) = normalize_e(&raw, &tol()).unwrap();
        assert_eq!(e.ncols(), 1);
        assert_eq!(t.nrows(), 1);
        assert!(residual_norm(&(&e * &t - &raw)) <= 1e-10);
        assert_eq!(rank_of(&t, &tol()).unwrap(), 1);
    }

    #[test]
    fn normalize_e_of_zero_matrix_is_empty() {
        let raw = DMatrix::<f64>::zeros(3, 2);
        let (e, t) = normalize_e(&raw, &tol()).unwrap();
        assert_eq!(e.shape(), (3, 0));
        assert_eq!(t.shape(), (0, 2));
    }

    #[test]
    fn example_model_based_solution_has_zero_residuals() {
        let s = SystemModel::example();
        let d = example_d(0., 0., 1.);
        let i_dc = DMatrix::identity(3, 3) - &d * s.c();
        let a_uio = &i_dc * s.a();
        assert_eq!(
            a_uio,
            DMatrix::from_row_slice(3, 3, &[0., 0., 0., -1., 0., 0., 0., 0., 0.])
        );
        let b_y = &a_uio * &d; // L = 0
        let uio = UioRealization::new(a_uio, DMatrix::zeros(3, 0), b_y, d).unwrap();
        let res = check_uio_conditions(&s, &uio, &tol()).unwrap();
        assert!(res.pass);
        assert_eq!(res.max_residual(), 0.0);
        assert!(res.spectral_radius <= 1e-12);
    }

    #[test]
    fn zero_observer_fails_decoupling_with_norm_of_e() {
        let s = SystemModel::example();
        let uio = UioRealization::new(
            DMatrix::zeros(3, 3),
            DMatrix::zeros(3, 0),
            DMatrix::zeros(3, 2),
            DMatrix::zeros(3, 2),
        )
        .unwrap();
        let res = check_uio_conditions(&s, &uio, &tol()).unwrap();
        assert!(!res.pass);
        assert_relative_eq!(res.disturbance_decoupling, s.e().norm(), epsilon = 1e-14);
    }

    #[test]
    fn example_is_strong_star_observable() {
        let report = existence_model_based(&SystemModel::example(), &tol()).unwrap();
        assert!(report.rank_ce_ok);
        assert_eq!(report.rank_ce, 1);
        assert!(report.rosenbrock_ok);
        assert!(report.unstable_drop_points.is_empty());
        assert!(report.strong_star_detectable);
    }

    #[test]
    fn ce_orthogonal_system_fails_rank_condition() {
        // C sees nothing of E, so no observer can reject the disturbance.
        let a = DMatrix::from_row_slice(2, 2, &[0.5, 0., 0., 0.3]);
        let b = DMatrix::zeros(2, 0);
        let c = DMatrix::from_row_slice(1, 2, &[0., 1.]);
        let e = DMatrix::from_row_slice(2, 1, &[1., 0.]);
        let s = SystemModel::new(a, b, c, e).unwrap();
        let report = existence_model_based(&s, &tol()).unwrap();
        assert!(!report.rank_ce_ok);
        assert!(!report.strong_star_detectable);
    }

    #[test]
    fn planted_zero_is_located() {
        // Scan seeds until the planted-zero flavor comes up.
        let (model, z) = (77..120)
            .find_map(|seed| {
                let g = random_system(3, 1, 2, 1, false, seed, &tol()).unwrap();
                match g.construction {
                    Construction::UnstableZero { z } => Some((g.model, z)),
                    _ => None,
                }
            })
            .expect("a planted-zero construction within the seed scan");
        let report = existence_model_based(&model, &tol()).unwrap();
        assert!(!report.rosenbrock_ok);
        assert!(report
            .unstable_drop_points
            .iter()
            .any(|w| (w - z).norm() <= 1e-5 * z.norm().max(1.0)));
    }

    #[test]
    fn design_reproduces_example_deadbeat() {
        let s = SystemModel::example();
        let uio = design_model_based(&s, &PoleSpec::Deadbeat, &tol(), 3).unwrap();
        let res = check_uio_conditions(&s, &uio, &tol()).unwrap();
        assert!(res.pass);
        let cube = &uio.a_uio * &uio.a_uio * &uio.a_uio;
        assert!(cube.norm() <= tol().residual_tol());
    }

    #[test]
    fn example_d_family_solves_the_decoupling_equation() {
        let s = SystemModel::example();
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(5);
        for _ in 0..20 {
            let d = example_d(
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
            );
            assert!(residual_norm(&(&d * (s.c() * s.e()) - s.e())) <= 1e-12);
        }
        // And conversely: the family produced by the design formula keeps
        // the first column pinned at (1, 0, 0).
        let ce = s.c() * s.e();
        let ce_pinv = pinv(&ce, &tol()).unwrap();
        let d_part = s.e() * &ce_pinv;
        let projector = DMatrix::identity(2, 2) - &ce * &ce_pinv;
        for _ in 0..20 {
            let z = crate::util::random_matrix(3, 2, &mut rng);
            let d = &d_part + z * &projector;
            assert_relative_eq!(d[(0, 0)], 1.0, epsilon = 1e-9);
            assert!(d[(1, 0)].abs() <= 1e-9);
            assert!(d[(2, 0)].abs() <= 1e-9);
        }
    }

    #[test]
    fn example_detectability_boundary_of_the_family() {
        let s = SystemModel::example();
        let f = |d: &DMatrix<f64>| (DMatrix::identity(3, 3) - d * s.c()) * s.a();
        // a = 0, c = 1, |b| >= 1: not detectable.
        let bad = example_d(0., 1.5, 1.);
        assert!(!pbh_detectable(&f(&bad), s.c(), &tol()).unwrap().detectable);
        // |b| < 1 restores detectability.
        let good = example_d(0., 0.5, 1.);
        assert!(pbh_detectable(&f(&good), s.c(), &tol()).unwrap().detectable);
    }

    #[test]
    fn random_system_honors_the_requested_verdict() {
        let g = random_system(3, 1, 2, 1, true, 11, &tol()).unwrap();
        assert!(matches!(g.construction, Construction::StrongStarDetectable));
        assert!(existence_model_based(&g.model, &tol())
            .unwrap()
            .strong_star_detectable);

        let g = random_system(3, 1, 1, 1, false, 12, &tol()).unwrap();
        assert!(!existence_model_based(&g.model, &tol())
            .unwrap()
            .strong_star_detectable);
    }

    #[test]
    fn strong_star_target_requires_enough_outputs() {
        assert!(matches!(
            random_system(3, 1, 1, 2, true, 1, &tol()),
            Err(Error::InvalidSystem(_))
        ));
    }

    #[test]
    fn zero_system_stays_at_origin() {
        let s = SystemModel::new(
            DMatrix::zeros(2, 2),
            DMatrix::zeros(2, 1),
            DMatrix::from_row_slice(1, 2, &[1., 0.]),
            DMatrix::from_row_slice(2, 1, &[1., 0.]),
        )
        .unwrap();
        let x0 = DVector::from_row_slice(&[3., -4.]);
        let u = vec![DVector::zeros(1); 4];
        let d = vec![DVector::zeros(1); 4];
        let traj = simulate_system(&s, &x0, &u, &d, 5).unwrap();
        for t in 1..5 {
            assert_eq!(traj.states()[t], DVector::zeros(2));
        }
    }

    #[test]
    fn simulation_satisfies_the_one_step_identity() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(21);
        let g = random_system(3, 2, 2, 1, true, 4, &tol()).unwrap();
        let s = g.model;
        let steps = 11;
        let u: Vec<DVector<f64>> = (0..steps)
            .map(|_| DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0)))
            .collect();
        let d: Vec<DVector<f64>> = (0..steps)
            .map(|_| DVector::from_fn(1, |_, _| rng.random_range(-1.0..1.0)))
            .collect();
        let x0 = DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
        let traj = simulate_system(&s, &x0, &u, &d, steps + 1).unwrap();
        let dm = crate::datamat::build_data_matrices(&traj, 1).unwrap();
        let residual = s.a() * &dm.x_p + s.b() * &dm.u_p + s.e() * dm.d_p.as_ref().unwrap()
            - &dm.x_f;
        assert!(residual.norm() <= 1e-9);
        assert!((s.c() * &dm.x_p - &dm.y_p).norm() <= 1e-9);
        assert!((s.c() * &dm.x_f - &dm.y_f).norm() <= 1e-9);
    }

    #[test]
    fn system_json_round_trip() {
        let dir = std::env::temp_dir().join("uio_oracle_json");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("example.json");
        let s = SystemModel::example();
        write_system(&path, &s).unwrap();
        let back = read_system(&path).unwrap();
        assert_eq!(s, back);
    }

    #[test]
    fn uio_json_round_trip() {
        let dir = std::env::temp_dir().join("uio_oracle_json");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("observer.json");
        let s = SystemModel::example();
        let uio = design_model_based(&s, &PoleSpec::Deadbeat, &tol(), 3).unwrap();
        write_uio(&path, &uio).unwrap();
        let back = read_uio(&path).unwrap();
        assert_eq!(uio, back);
    }
}
