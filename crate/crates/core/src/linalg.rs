//! Almost-block-diagonal (ABD) linear systems.
//!
//! The discretized time boundary-value problem couples consecutive time
//! blocks only. Rows are processed block by block with Gaussian elimination
//! and partial pivoting restricted to the rows that can hold a nonzero in
//! the current block column, which is exactly partial pivoting on the banded
//! matrix.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Rows coupling unknown block `i` (left) with block `i+1` (right).
#[derive(Debug, Clone)]
pub struct Coupling {
    pub left: DMatrix<f64>,
    pub right: DMatrix<f64>,
    pub rhs: DVector<f64>,
}

/// ```text
/// [ T             ] [x0]   [t]
/// [ A0  B0        ] [x1]   [r0]
/// [     A1  B1    ] [..] = [r1]
/// [         ..  ..] [  ]   [..]
/// [             Z ] [xm]   [z]
/// ```
#[derive(Debug, Clone)]
pub struct AbdSystem {
    pub top: DMatrix<f64>,
    pub top_rhs: DVector<f64>,
    pub couplings: Vec<Coupling>,
    pub bottom: DMatrix<f64>,
    pub bottom_rhs: DVector<f64>,
}

struct Eliminated {
    /// `w×w` upper triangle holds U
    u: DMatrix<f64>,
    /// `w×w_next` coupling of the pivot rows to the next block
    c: DMatrix<f64>,
    y: DVector<f64>,
}

impl AbdSystem {
    pub fn n_blocks(&self) -> usize {
        self.couplings.len() + 1
    }

    /// Solve and return the unknowns block by block.
    pub fn solve(&self) -> Result<Vec<DVector<f64>>> {
        let nb = self.n_blocks();
        let mut pending = self.top.clone();
        let mut pending_rhs = self.top_rhs.clone();
        let mut factors: Vec<Eliminated> = Vec::with_capacity(nb);
        for i in 0..nb {
            let w = pending.ncols();
            let (lower_left, lower_right, lower_rhs) = if i + 1 < nb {
                let cp = &self.couplings[i];
                if cp.left.ncols() != w {
                    return Err(Error::Dimension {
                        expected: w,
                        got: cp.left.ncols(),
                        context: "ABD block width",
                    });
                }
                (&cp.left, Some(&cp.right), &cp.rhs)
            } else {
                (&self.bottom, None, &self.bottom_rhs)
            };
            let wn = lower_right.map_or(0, |r| r.ncols());
            let p = pending.nrows();
            let rows = p + lower_left.nrows();
            if rows < w {
                return Err(Error::Singular("ABD block has fewer rows than unknowns"));
            }
            let cols = w + wn;
            let mut s = DMatrix::zeros(rows, cols);
            s.view_mut((0, 0), (p, w)).copy_from(&pending);
            s.view_mut((p, 0), lower_left.shape()).copy_from(lower_left);
            if let Some(r) = lower_right {
                s.view_mut((p, w), r.shape()).copy_from(r);
            }
            let mut rhs = DVector::zeros(rows);
            rhs.rows_mut(0, p).copy_from(&pending_rhs);
            rhs.rows_mut(p, lower_rhs.len()).copy_from(lower_rhs);

            eliminate(&mut s, &mut rhs, w)?;

            if i + 1 == nb && rows != w {
                return Err(Error::Singular("ABD system is not square"));
            }
            factors.push(Eliminated {
                u: s.view((0, 0), (w, w)).into_owned(),
                c: s.view((0, w), (w, wn)).into_owned(),
                y: rhs.rows(0, w).into_owned(),
            });
            pending = s.view((w, w), (rows - w, wn)).into_owned();
            pending_rhs = rhs.rows(w, rows - w).into_owned();
        }

        let mut x: Vec<DVector<f64>> = vec![DVector::zeros(0); nb];
        for i in (0..nb).rev() {
            let f = &factors[i];
            let mut b = f.y.clone();
            if i + 1 < nb {
                b -= &f.c * &x[i + 1];
            }
            x[i] = f
                .u
                .solve_upper_triangular(&b)
                .ok_or(Error::Singular("ABD pivot block"))?;
        }
        Ok(x)
    }
}

/// Gaussian elimination with partial pivoting on the first `w` columns of `s`;
/// the whole row (all columns and rhs) takes part in swaps and updates.
fn eliminate(s: &mut DMatrix<f64>, rhs: &mut DVector<f64>, w: usize) -> Result<()> {
    let rows = s.nrows();
    let cols = s.ncols();
    let scale = s.amax().max(f64::MIN_POSITIVE);
    for k in 0..w {
        let (piv, pmax) = (k..rows)
            .map(|r| (r, s[(r, k)].abs()))
            .fold((k, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
        if !(pmax > 1e-300 && pmax > scale * 1e-15) || !pmax.is_finite() {
            return Err(Error::Singular("ABD elimination found no pivot"));
        }
        if piv != k {
            s.swap_rows(k, piv);
            rhs.swap_rows(k, piv);
        }
        let data = s.as_mut_slice();
        let pivot = data[k * rows + k];
        for r in k + 1..rows {
            data[k * rows + r] /= pivot;
        }
        for c in k + 1..cols {
            let skc = data[c * rows + k];
            if skc == 0.0 {
                continue;
            }
            let (left, right) = data.split_at_mut(c * rows);
            let lcol = &left[k * rows..k * rows + rows];
            let ccol = &mut right[..rows];
            for r in k + 1..rows {
                ccol[r] -= lcol[r] * skc;
            }
        }
        let rk = rhs[k];
        for r in k + 1..rows {
            rhs[r] -= data[k * rows + r] * rk;
        }
    }
    Ok(())
}
