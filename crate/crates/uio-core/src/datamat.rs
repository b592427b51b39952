//! Trajectory ingestion and the past/future data matrices built from one
//! recorded experiment.
//!
//! A trajectory of horizon `T` carries states and outputs at `t = 0..T-1`
//! and inputs (and, for synthetic data, disturbances) at `t = 0..T-2`. The
//! data matrices stack those samples column-wise: the `p` blocks hold times
//! `0..T-2`, the `f` blocks the shifted times `1..T-1`.
//!
//! On disk a trajectory is a CSV file with header
//! `t,u1..um,y1..yp,x1..xn[,d1..dr]`, one row per time step in time order.
//! The `u`/`d` cells of the final row are written empty since those signals
//! end one step earlier. Lines starting with `#` are skipped.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::numkit::{rank_of, Tolerance};
use crate::util::vstack;

/// One recorded input/output/state experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    u: Vec<DVector<f64>>,
    y: Vec<DVector<f64>>,
    x: Vec<DVector<f64>>,
    d: Option<Vec<DVector<f64>>>,
}

impl Trajectory {
    /// Validates lengths, dimensions and finiteness.
    ///
    /// `y` and `x` must hold `T >= 2` samples, `u` (and `d` when present)
    /// one sample fewer.
    pub fn new(
        u: Vec<DVector<f64>>,
        y: Vec<DVector<f64>>,
        x: Vec<DVector<f64>>,
        d: Option<Vec<DVector<f64>>>,
    ) -> Result<Self> {
        let horizon = x.len();
        if horizon < 2 {
            return Err(Error::InvalidTrajectory(format!(
                "horizon must be at least 2, got {horizon}"
            )));
        }
        if y.len() != horizon {
            return Err(Error::InvalidTrajectory(format!(
                "{} output samples for {} state samples",
                y.len(),
                horizon
            )));
        }
        if u.len() != horizon - 1 {
            return Err(Error::InvalidTrajectory(format!(
                "expected {} input samples, got {}",
                horizon - 1,
                u.len()
            )));
        }
        if let Some(d) = &d {
            if d.len() != horizon - 1 {
                return Err(Error::InvalidTrajectory(format!(
                    "expected {} disturbance samples, got {}",
                    horizon - 1,
                    d.len()
                )));
            }
        }
        let check_dims = |seq: &[DVector<f64>], what: &str| -> Result<()> {
            let dim = seq.first().map_or(0, |v| v.len());
            for (t, v) in seq.iter().enumerate() {
                if v.len() != dim {
                    return Err(Error::InvalidTrajectory(format!(
                        "{what} sample {t} has dimension {}, expected {dim}",
                        v.len()
                    )));
                }
                if v.iter().any(|e| !e.is_finite()) {
                    return Err(Error::InvalidTrajectory(format!(
                        "{what} sample {t} contains a non-finite value"
                    )));
                }
            }
            Ok(())
        };
        check_dims(&u, "input")?;
        check_dims(&y, "output")?;
        check_dims(&x, "state")?;
        if let Some(d) = &d {
            check_dims(d, "disturbance")?;
        }
        if y[0].is_empty() || x[0].is_empty() {
            return Err(Error::InvalidTrajectory(
                "output and state dimensions must be positive".into(),
            ));
        }
        Ok(Self { u, y, x, d })
    }

    pub fn horizon(&self) -> usize {
        self.x.len()
    }

    pub fn input_dim(&self) -> usize {
        self.u.first().map_or(0, |v| v.len())
    }

    pub fn output_dim(&self) -> usize {
        self.y[0].len()
    }

    pub fn state_dim(&self) -> usize {
        self.x[0].len()
    }

    pub fn disturbance_dim(&self) -> Option<usize> {
        self.d.as_ref().map(|d| d.first().map_or(0, |v| v.len()))
    }

    pub fn inputs(&self) -> &[DVector<f64>] {
        &self.u
    }

    pub fn outputs(&self) -> &[DVector<f64>] {
        &self.y
    }

    pub fn states(&self) -> &[DVector<f64>] {
        &self.x
    }

    pub fn disturbances(&self) -> Option<&[DVector<f64>]> {
        self.d.as_deref()
    }
}

/// Stacked past/future data blocks, all with `T - 1` columns.
#[derive(Clone, Debug, PartialEq)]
pub struct DataMatrices {
    pub u_p: DMatrix<f64>,
    pub x_p: DMatrix<f64>,
    pub x_f: DMatrix<f64>,
    pub y_p: DMatrix<f64>,
    pub y_f: DMatrix<f64>,
    /// Present only for synthetic data where the disturbance was recorded.
    pub d_p: Option<DMatrix<f64>>,
    pub n: usize,
    pub m: usize,
    pub p: usize,
    /// Declared disturbance dimension; never inferred from the data.
    pub r: usize,
    pub horizon: usize,
}

fn columns_from(seq: &[DVector<f64>], from: usize, count: usize, dim: usize) -> DMatrix<f64> {
    DMatrix::from_fn(dim, count, |i, j| seq[from + j][i])
}

/// Builds the shifted/stacked data blocks from a trajectory.
///
/// `r` is the (known) size of the unknown input; when the trajectory
/// records a disturbance its dimension must agree with `r`.
pub fn build_data_matrices(traj: &Trajectory, r: usize) -> Result<DataMatrices> {
    if r == 0 {
        return Err(Error::InvalidTrajectory(
            "the unknown-input size r must be at least 1".into(),
        ));
    }
    if let Some(rd) = traj.disturbance_dim() {
        if rd != r {
            return Err(Error::InvalidTrajectory(format!(
                "declared r = {r} but the recorded disturbance has dimension {rd}"
            )));
        }
    }
    let t = traj.horizon();
    let cols = t - 1;
    let (n, m, p) = (traj.state_dim(), traj.input_dim(), traj.output_dim());
    Ok(DataMatrices {
        u_p: columns_from(traj.inputs(), 0, cols, m),
        x_p: columns_from(traj.states(), 0, cols, n),
        x_f: columns_from(traj.states(), 1, cols, n),
        y_p: columns_from(traj.outputs(), 0, cols, p),
        y_f: columns_from(traj.outputs(), 1, cols, p),
        d_p: traj
            .disturbances()
            .map(|d| columns_from(d, 0, cols, r)),
        n,
        m,
        p,
        r,
        horizon: t,
    })
}

/// Verdict of the full-row-rank data assumption.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
pub enum AssumptionVerdict {
    /// `[Up; Dp; Xp]` has full row rank `m + r + n`.
    Holds,
    Fails,
    /// The disturbance was not recorded, so the assumption cannot be
    /// checked; only the surrogate rank of `[Up; Xp]` is reported.
    Unverifiable,
}

/// Rank evidence for the data assumption.
#[derive(Clone, Debug, serde::Serialize)]
pub struct AssumptionReport {
    pub verdict: AssumptionVerdict,
    /// Rank of `[Up; Dp; Xp]` when the disturbance is recorded.
    pub full_rank: Option<usize>,
    pub full_required: usize,
    /// Rank of `[Up; Xp]`; necessary evidence, not proof.
    pub surrogate_rank: usize,
    pub surrogate_required: usize,
}

/// Checks whether `[Up; Dp; Xp]` has full row rank. Without recorded
/// disturbance data the verdict is `Unverifiable` and only the surrogate
/// check on `[Up; Xp]` is reported.
pub fn check_assumption(dm: &DataMatrices, tol: &Tolerance) -> Result<AssumptionReport> {
    let surrogate = vstack(&[&dm.u_p, &dm.x_p]);
    let surrogate_rank = rank_of(&surrogate, tol)?;
    let surrogate_required = dm.m + dm.n;
    match &dm.d_p {
        Some(d_p) => {
            let stacked = vstack(&[&dm.u_p, d_p, &dm.x_p]);
            let full_rank = rank_of(&stacked, tol)?;
            let full_required = dm.m + dm.r + dm.n;
            Ok(AssumptionReport {
                verdict: if full_rank == full_required {
                    AssumptionVerdict::Holds
                } else {
                    AssumptionVerdict::Fails
                },
                full_rank: Some(full_rank),
                full_required,
                surrogate_rank,
                surrogate_required,
            })
        }
        None => Ok(AssumptionReport {
            verdict: AssumptionVerdict::Unverifiable,
            full_rank: None,
            full_required: dm.m + dm.r + dm.n,
            surrogate_rank,
            surrogate_required,
        }),
    }
}

fn parse_header(path: &Path, line: &str) -> Result<(usize, usize, usize, usize)> {
    let cells: Vec<&str> = line.split(',').map(str::trim).collect();
    let err = |message: String| Error::CsvFormat {
        path: path.display().to_string(),
        line: 1,
        message,
    };
    if cells.first() != Some(&"t") {
        return Err(err("header must start with column 't'".into()));
    }
    let mut counts = [0usize; 4];
    let order = ['u', 'y', 'x', 'd'];
    let mut stage = 0;
    for cell in &cells[1..] {
        let mut chars = cell.chars();
        let prefix = chars
            .next()
            .ok_or_else(|| err("empty header cell".into()))?;
        let index: usize = chars
            .as_str()
            .parse()
            .map_err(|_| err(format!("malformed header cell '{cell}'")))?;
        while stage < order.len() && order[stage] != prefix {
            stage += 1;
        }
        if stage == order.len() {
            return Err(err(format!(
                "unexpected header cell '{cell}'; expected order t,u*,y*,x*,d*"
            )));
        }
        counts[stage] += 1;
        if index != counts[stage] {
            return Err(err(format!(
                "header cell '{cell}' out of sequence, expected {}{}",
                order[stage], counts[stage]
            )));
        }
    }
    let [m, p, n, r] = counts;
    if p == 0 || n == 0 {
        return Err(err("header must declare y and x columns".into()));
    }
    Ok((m, p, n, r))
}

/// Reads a trajectory from a CSV file with the canonical column layout.
pub fn read_trajectory(path: &Path) -> Result<Trajectory> {
    let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = raw
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'));
    let (_, header) = lines.next().ok_or_else(|| Error::CsvFormat {
        path: path.display().to_string(),
        line: 1,
        message: "file has no header row".into(),
    })?;
    let (m, p, n, r) = parse_header(path, header)?;
    let names: Vec<String> = std::iter::once("t".to_string())
        .chain((1..=m).map(|i| format!("u{i}")))
        .chain((1..=p).map(|i| format!("y{i}")))
        .chain((1..=n).map(|i| format!("x{i}")))
        .chain((1..=r).map(|i| format!("d{i}")))
        .collect();

    let rows: Vec<(usize, &str)> = lines.collect();
    let horizon = rows.len();
    if horizon < 2 {
        return Err(Error::CsvFormat {
            path: path.display().to_string(),
            line: 1,
            message: format!("need at least 2 data rows, found {horizon}"),
        });
    }

    let mut u = Vec::with_capacity(horizon - 1);
    let mut y = Vec::with_capacity(horizon);
    let mut x = Vec::with_capacity(horizon);
    let mut d = Vec::with_capacity(horizon.saturating_sub(1));

    for (t, (line_idx, row)) in rows.iter().enumerate() {
        let line_no = line_idx + 1;
        let cells: Vec<&str> = row.split(',').map(str::trim).collect();
        if cells.len() != names.len() {
            return Err(Error::CsvFormat {
                path: path.display().to_string(),
                line: line_no,
                message: format!("row has {} cells, expected {}", cells.len(), names.len()),
            });
        }
        let last = t + 1 == horizon;
        let value = |cell: &str, name: &str| -> Result<f64> {
            let v: f64 = cell.parse().map_err(|_| Error::CsvValue {
                path: path.display().to_string(),
                line: line_no,
                column: name.to_string(),
                message: format!("cannot parse '{cell}' as a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::CsvValue {
                    path: path.display().to_string(),
                    line: line_no,
                    column: name.to_string(),
                    message: "value is not finite".into(),
                });
            }
            Ok(v)
        };

        let tick = value(cells[0], "t")?;
        if tick != t as f64 {
            return Err(Error::CsvValue {
                path: path.display().to_string(),
                line: line_no,
                column: "t".into(),
                message: format!("expected time index {t}, found {tick}"),
            });
        }

        // u and d stop one step before the end; trailing cells may be empty.
        let read_block = |offset: usize, dim: usize, skip_last: bool| -> Result<Option<DVector<f64>>> {
            if skip_last && last {
                return Ok(None);
            }
            let mut out = DVector::zeros(dim);
            for i in 0..dim {
                out[i] = value(cells[offset + i], &names[offset + i])?;
            }
            Ok(Some(out))
        };

        if let Some(v) = read_block(1, m, true)? {
            u.push(v);
        }
        let yv = read_block(1 + m, p, false)?.expect("y present each row");
        y.push(yv);
        let xv = read_block(1 + m + p, n, false)?.expect("x present each row");
        x.push(xv);
        if r > 0 {
            if let Some(v) = read_block(1 + m + p + n, r, true)? {
                d.push(v);
            }
        }
    }

    Trajectory::new(u, y, x, if r > 0 { Some(d) } else { None })
}

/// Writes a trajectory in the canonical CSV layout.
///
/// Values use the shortest representation that parses back to the same
/// float, so a write/read round trip is exact.
pub fn write_trajectory(path: &Path, traj: &Trajectory, timestamp: Option<&str>) -> Result<()> {
    let (m, p, n) = (traj.input_dim(), traj.output_dim(), traj.state_dim());
    let r = traj.disturbance_dim().unwrap_or(0);
    let mut out = String::new();
    if let Some(ts) = timestamp {
        let _ = writeln!(out, "# generated: {ts}");
    }
    let mut header = vec!["t".to_string()];
    header.extend((1..=m).map(|i| format!("u{i}")));
    header.extend((1..=p).map(|i| format!("y{i}")));
    header.extend((1..=n).map(|i| format!("x{i}")));
    header.extend((1..=r).map(|i| format!("d{i}")));
    let _ = writeln!(out, "{}", header.join(","));

    for t in 0..traj.horizon() {
        let last = t + 1 == traj.horizon();
        let mut cells = vec![t.to_string()];
        for i in 0..m {
            cells.push(if last {
                String::new()
            } else {
                traj.inputs()[t][i].to_string()
            });
        }
        for i in 0..p {
            cells.push(traj.outputs()[t][i].to_string());
        }
        for i in 0..n {
            cells.push(traj.states()[t][i].to_string());
        }
        if let Some(d) = traj.disturbances() {
            if last {
                cells.extend(std::iter::repeat_n(String::new(), r));
            } else {
                cells.extend(d[t].iter().map(|v| v.to_string()));
            }
        }
        let _ = writeln!(out, "{}", cells.join(","));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
