//! Small dense linear-algebra helpers: LU factorization with partial
//! pivoting, sized for desk-scale systems.

use ndarray::Array2;

use crate::error::{Error, Result};

/// In-place LU factorization with partial pivoting. Returns the pivot row
/// chosen at each elimination step.
pub(crate) fn lu_factor(a: &mut Array2<f64>) -> Result<Vec<usize>> {
    let n = a.nrows();
    assert_eq!(n, a.ncols());
    let mut pivots = Vec::with_capacity(n);
    for k in 0..n {
        let mut p = k;
        let mut best = a[[k, k]].abs();
        for r in (k + 1)..n {
            let v = a[[r, k]].abs();
            if v > best {
                best = v;
                p = r;
            }
        }
        if best < 1e-300 {
            return Err(Error::SingularSystem(format!("zero pivot at column {k}")));
        }
        if p != k {
            for c in 0..n {
                a.swap([k, c], [p, c]);
            }
        }
        pivots.push(p);
        let pivot = a[[k, k]];
        for r in (k + 1)..n {
            let f = a[[r, k]] / pivot;
            a[[r, k]] = f;
            for c in (k + 1)..n {
                a[[r, c]] -= f * a[[k, c]];
            }
        }
    }
    Ok(pivots)
}

/// Solves `A x = b` in place given the factorization from [`lu_factor`].
/// The factorization swaps whole rows (prior L columns travel with them),
/// so every pivot must be applied to `b` before the triangular solves.
pub(crate) fn lu_solve(lu: &Array2<f64>, pivots: &[usize], b: &mut [f64]) {
    let n = lu.nrows();
    for (k, &p) in pivots.iter().enumerate() {
        b.swap(k, p);
    }
    for k in 0..n {
        for r in (k + 1)..n {
            b[r] -= lu[[r, k]] * b[k];
        }
    }
    for k in (0..n).rev() {
        for c in (k + 1)..n {
            b[k] -= lu[[k, c]] * b[c];
        }
        b[k] /= lu[[k, k]];
    }
}
