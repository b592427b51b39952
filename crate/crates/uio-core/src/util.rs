use nalgebra::{Complex, DMatrix};
use rand::Rng;

use crate::error::{Error, Result};

/// Rejects matrices carrying NaN or infinite entries.
pub(crate) fn ensure_finite(m: &DMatrix<f64>) -> Result<()> {
    for col in 0..m.ncols() {
        for row in 0..m.nrows() {
            if !m[(row, col)].is_finite() {
                return Err(Error::NonFinite { row, col });
            }
        }
    }
    Ok(())
}

/// Stacks blocks vertically. All blocks must share a column count.
pub(crate) fn vstack(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let cols = blocks.first().map_or(0, |b| b.ncols());
    let rows = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut at = 0;
    for b in blocks {
        assert_eq!(b.ncols(), cols, "vstack blocks must share a column count");
        out.rows_mut(at, b.nrows()).copy_from(*b);
        at += b.nrows();
    }
    out
}

/// Places blocks side by side. All blocks must share a row count.
pub(crate) fn hstack(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let rows = blocks.first().map_or(0, |b| b.nrows());
    let cols = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut at = 0;
    for b in blocks {
        assert_eq!(b.nrows(), rows, "hstack blocks must share a row count");
        out.columns_mut(at, b.ncols()).copy_from(*b);
        at += b.ncols();
    }
    out
}

pub(crate) fn to_complex(m: &DMatrix<f64>) -> DMatrix<Complex<f64>> {
    m.map(|x| Complex::new(x, 0.0))
}

pub(crate) fn random_matrix<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

/// Greedy nearest-neighbour multiset comparison for eigenvalue lists.
pub(crate) fn multisets_close(a: &[Complex<f64>], b: &[Complex<f64>], tol: f64) -> bool {
    if a.len() != b.len() {
        return false;
    }
    let mut unused: Vec<Complex<f64>> = b.to_vec();
    for wanted in a {
        let best = unused
            .iter()
            .enumerate()
            .min_by(|(_, x), (_, y)| {
                (*x - wanted)
                    .norm()
                    .partial_cmp(&(*y - wanted).norm())
                    .unwrap()
            })
            .map(|(i, x)| (i, (*x - wanted).norm()));
        match best {
            Some((i, dist)) if dist <= tol => {
                unused.swap_remove(i);
            }
            _ => return false,
        }
    }
    true
}
