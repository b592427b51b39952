//! Closed-loop observer runs, error experiments, disturbance generators and
//! error-trajectory CSV emission.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::numkit::Tolerance;
use crate::oracle::{check_uio_conditions, simulate_system, SystemModel, UioRealization};

/// Shape of a generated signal.
#[derive(Clone, Debug, PartialEq)]
pub enum SignalKind {
    Zero,
    /// Independent uniform samples on `(lo, hi)`.
    Uniform { lo: f64, hi: f64 },
    /// Explicit samples, e.g. read from a file.
    Samples(Vec<DVector<f64>>),
}

/// A signal kind together with the seed that reproduces it.
#[derive(Clone, Debug, PartialEq)]
pub struct SignalSpec {
    pub kind: SignalKind,
    pub seed: u64,
}

impl SignalSpec {
    pub fn zero() -> Self {
        Self {
            kind: SignalKind::Zero,
            seed: 0,
        }
    }

    pub fn uniform(lo: f64, hi: f64, seed: u64) -> Self {
        Self {
            kind: SignalKind::Uniform { lo, hi },
            seed,
        }
    }
}

/// Reproducible signal generation: a fixed seed yields a fixed sequence.
pub fn disturbance_gen(
    kind: &SignalKind,
    dim: usize,
    len: usize,
    seed: u64,
) -> Result<Vec<DVector<f64>>> {
    match kind {
        SignalKind::Zero => Ok(vec![DVector::zeros(dim); len]),
        SignalKind::Uniform { lo, hi } => {
            if !matches!(lo.partial_cmp(hi), Some(std::cmp::Ordering::Less)) {
                return Err(Error::InvalidSignal(format!(
                    "empty uniform range ({lo}, {hi})"
                )));
            }
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            Ok((0..len)
                .map(|_| DVector::from_fn(dim, |_, _| rng.random_range(*lo..*hi)))
                .collect())
        }
        SignalKind::Samples(samples) => {
            if samples.len() < len {
                return Err(Error::InvalidSignal(format!(
                    "need {len} samples, file provides {}",
                    samples.len()
                )));
            }
            for (t, s) in samples.iter().take(len).enumerate() {
                if s.len() != dim {
                    return Err(Error::InvalidSignal(format!(
                        "sample {t} has dimension {}, expected {dim}",
                        s.len()
                    )));
                }
            }
            Ok(samples[..len].to_vec())
        }
    }
}

/// Internal observer states paired with the state estimates they imply.
pub type ObserverRun = (Vec<DVector<f64>>, Vec<DVector<f64>>);

/// Runs the observer recursion against measured inputs and outputs.
///
/// Returns the internal states `z(0..T-1)` and the estimates
/// `xhat(t) = z(t) + D y(t)`.
pub fn run_observer(
    uio: &UioRealization,
    y: &[DVector<f64>],
    u: &[DVector<f64>],
    z0: &DVector<f64>,
) -> Result<ObserverRun> {
    let n = uio.state_dim();
    let m = uio.input_dim();
    let p = uio.output_dim();
    let horizon = y.len();
    if horizon == 0 {
        return Err(Error::DimensionMismatch("empty output sequence".into()));
    }
    if z0.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "z0 has dimension {}, expected {n}",
            z0.len()
        )));
    }
    if !(u.len() + 1 == horizon || (m == 0 && u.is_empty())) {
        return Err(Error::DimensionMismatch(format!(
            "expected {} input samples, got {}",
            horizon - 1,
            u.len()
        )));
    }
    let zero_u = DVector::zeros(m);
    let mut zs = Vec::with_capacity(horizon);
    let mut xhats = Vec::with_capacity(horizon);
    let mut z = z0.clone();
    for (t, yt) in y.iter().enumerate() {
        if yt.len() != p {
            return Err(Error::DimensionMismatch(format!(
                "output sample {t} has dimension {}, expected {p}",
                yt.len()
            )));
        }
        xhats.push(&z + &uio.d * yt);
        zs.push(z.clone());
        if t + 1 < horizon {
            let ut = u.get(t).unwrap_or(&zero_u);
            z = &uio.a_uio * &z + &uio.b_u * ut + &uio.b_y * yt;
        }
    }
    Ok((zs, xhats))
}

fn worst_condition(res: &crate::oracle::ConditionResiduals) -> (&'static str, f64) {
    if !res.stable {
        return ("Schur stability of the error matrix", res.spectral_radius);
    }
    let pairs = [
        ("disturbance decoupling D C E = E", res.disturbance_decoupling),
        ("input matching B_u = (I - D C) B", res.input_matching),
        (
            "error-dynamics identity A_uio (I - D C) + B_y C = (I - D C) A",
            res.error_dynamics,
        ),
    ];
    pairs
        .into_iter()
        .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
        .unwrap()
}

/// Simulates plant and observer side by side and returns the estimation
/// error `e(t) = x(t) - xhat(t)`.
///
/// The observer must be valid for the system: only then is the error
/// autonomous and independent of the disturbance realization.
#[allow(clippy::too_many_arguments)]
pub fn error_experiment(
    s: &SystemModel,
    uio: &UioRealization,
    x0: &DVector<f64>,
    z0: &DVector<f64>,
    d_spec: &SignalSpec,
    u_spec: &SignalSpec,
    horizon: usize,
    tol: &Tolerance,
) -> Result<Vec<DVector<f64>>> {
    let res = check_uio_conditions(s, uio, tol)?;
    if !res.pass {
        let (condition, residual) = worst_condition(&res);
        return Err(Error::InvalidObserver {
            condition,
            residual,
        });
    }
    let steps = horizon.saturating_sub(1);
    let d = disturbance_gen(&d_spec.kind, s.disturbance_dim(), steps, d_spec.seed)?;
    let u = disturbance_gen(&u_spec.kind, s.input_dim(), steps, u_spec.seed)?;
    let traj = simulate_system(s, x0, &u, &d, horizon)?;
    let (_z, xhat) = run_observer(uio, traj.outputs(), traj.inputs(), z0)?;
    Ok(traj
        .states()
        .iter()
        .zip(xhat.iter())
        .map(|(x, xh)| x - xh)
        .collect())
}

/// Writes an error trajectory as CSV with columns `t,e1..en`, 12
/// significant digits per value. A timestamp comment line is emitted only
/// when requested, so files are reproducible by default.
pub fn write_error_csv(
    path: &Path,
    errors: &[DVector<f64>],
    timestamp: Option<&str>,
) -> Result<()> {
    let n = errors.first().map_or(0, |e| e.len());
    let mut out = String::new();
    if let Some(ts) = timestamp {
        let _ = writeln!(out, "# generated: {ts}");
    }
    let mut header = vec!["t".to_string()];
    header.extend((1..=n).map(|i| format!("e{i}")));
    let _ = writeln!(out, "{}", header.join(","));
    for (t, e) in errors.iter().enumerate() {
        let mut cells = vec![t.to_string()];
        cells.extend((0..n).map(|i| format!("{:.11e}", e[i])));
        let _ = writeln!(out, "{}", cells.join(","));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads a sampled signal from a CSV file with header `t,<name>1..<name>k`;
/// every column after `t` is taken as one signal component.
pub fn read_signal_csv(path: &Path) -> Result<Vec<DVector<f64>>> {
    let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    let mut width = None;
    for (idx, line) in raw.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let cells: Vec<&str> = trimmed.split(',').map(str::trim).collect();
        if width.is_none() {
            // Header row.
            if cells.first() != Some(&"t") {
                return Err(Error::CsvFormat {
                    path: path.display().to_string(),
                    line: idx + 1,
                    message: "signal file must start with column 't'".into(),
                });
            }
            width = Some(cells.len() - 1);
            continue;
        }
        let k = width.unwrap();
        if cells.len() != k + 1 {
            return Err(Error::CsvFormat {
                path: path.display().to_string(),
                line: idx + 1,
                message: format!("row has {} cells, expected {}", cells.len(), k + 1),
            });
        }
        let mut v = DVector::zeros(k);
        for i in 0..k {
            v[i] = cells[i + 1].parse().map_err(|_| Error::CsvValue {
                path: path.display().to_string(),
                line: idx + 1,
                column: format!("column {}", i + 2),
                message: format!("cannot parse '{}' as a number", cells[i + 1]),
            })?;
        }
        rows.push(v);
    }
    Ok(rows)
}
