//! Bounded-variable linear least squares.
//!
//! Minimizes `||A x - b||^2` subject to `lo <= x <= hi` with a primal
//! active-set method in the Lawson-Hanson / Stark-Parker family. Every
//! iterate is feasible; each step either frees the bound variable with the
//! largest KKT violation or moves toward the free-set optimum until a free
//! variable hits a bound.
//!
//! Columns are equilibrated to unit norm and the problem is reduced to its
//! triangular factor once, so each free-set subproblem costs a Cholesky
//! factorization of a Gram submatrix (followed by refinement against the
//! triangular factor). Rank-deficient subproblems fall back to an SVD and
//! return the minimum-norm solution measured in the caller's units.

use nalgebra::{Cholesky, DMatrix, DVector};

use super::FitError;

/// A free set whose Cholesky pivot drops below this is treated as rank
/// deficient (columns have unit norm, so pivots lie in (0, 1]).
const MIN_PIVOT: f64 = 1e-7;
const SVD_RCOND: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum State {
    Free,
    Lower,
    Upper,
    Fixed,
}

#[derive(Debug, Clone)]
pub(crate) struct Solution {
    pub x: Vec<f64>,
    pub iterations: usize,
}

/// Reduced, column-scaled problem: minimize `||r x - y||` over scaled
/// variables `x_j = c_j * e_j`.
pub(crate) struct Reduced {
    r: DMatrix<f64>,
    y: DVector<f64>,
    gram: DMatrix<f64>,
    rhs: DVector<f64>,
    /// 1 / column norm, used to measure solution norms in original units.
    inv_scale: Vec<f64>,
}

impl Reduced {
    /// `a_scaled` has unit-norm columns; `inv_scale` maps scaled variables
    /// back to original ones.
    pub fn new(a_scaled: DMatrix<f64>, b: &DVector<f64>, inv_scale: Vec<f64>) -> Self {
        let (n, k) = a_scaled.shape();
        let (r, y) = if n > k {
            let qr = a_scaled.qr();
            let mut qtb = b.clone();
            qr.q_tr_mul(&mut qtb);
            (qr.r(), qtb.rows(0, k).into_owned())
        } else {
            (a_scaled, b.clone())
        };
        let gram = r.tr_mul(&r);
        let rhs = r.tr_mul(&y);
        Reduced {
            r,
            y,
            gram,
            rhs,
            inv_scale,
        }
    }

    fn dim(&self) -> usize {
        self.r.ncols()
    }

    /// Gradient of `0.5 ||r x - y||^2`.
    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.gram * x - &self.rhs
    }

    /// Optimum over the variables in `free` with all others held at `x`.
    fn solve_free(&self, free: &[usize], x: &DVector<f64>) -> DVector<f64> {
        let k = self.dim();
        let mut target = self.y.clone();
        let mut is_free = vec![false; k];
        for &j in free {
            is_free[j] = true;
        }
        for j in 0..k {
            if !is_free[j] && x[j] != 0.0 {
                target.axpy(-x[j], &self.r.column(j), 1.0);
            }
        }
        let m = self.r.select_columns(free);
        let g = DMatrix::from_fn(free.len(), free.len(), |i, l| self.gram[(free[i], free[l])]);

        if let Some(chol) = Cholesky::new(g) {
            let l = chol.l_dirty();
            let min_pivot = (0..free.len())
                .map(|i| l[(i, i)])
                .fold(f64::INFINITY, f64::min);
            if min_pivot > MIN_PIVOT {
                let mut z = chol.solve(&m.tr_mul(&target));
                for _ in 0..2 {
                    let res = &target - &m * &z;
                    z += chol.solve(&m.tr_mul(&res));
                }
                return z;
            }
        }
        let w: Vec<f64> = free.iter().map(|&j| self.inv_scale[j]).collect();
        min_norm_solve(&m, &target, &w)
    }
}

/// Least-squares solution of `m z = t` minimizing `||diag(w) z||` among all
/// minimizers.
fn min_norm_solve(m: &DMatrix<f64>, t: &DVector<f64>, w: &[f64]) -> DVector<f64> {
    let (rows, cols) = m.shape();
    // pad to at least as many rows as columns so V spans the full space
    let (mp, tp) = if rows < cols {
        let mut mp = DMatrix::zeros(cols, cols);
        mp.rows_mut(0, rows).copy_from(m);
        let mut tp = DVector::zeros(cols);
        tp.rows_mut(0, rows).copy_from(t);
        (mp, tp)
    } else {
        (m.clone(), t.clone())
    };
    let svd = mp.svd(true, true);
    let u = svd.u.as_ref().expect("svd computed u");
    let v_t = svd.v_t.as_ref().expect("svd computed v_t");
    let sigma_max = svd.singular_values.max();
    let cutoff = sigma_max * SVD_RCOND.max(f64::EPSILON * rows.max(cols) as f64);

    let mut z = DVector::zeros(cols);
    let mut null = Vec::new();
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > cutoff {
            let coef = u.column(i).dot(&tp) / s;
            z.axpy(coef, &v_t.row(i).transpose(), 1.0);
        } else {
            null.push(i);
        }
    }
    if null.is_empty() {
        return z;
    }

    // move within the null space to minimize the weighted norm
    let basis = DMatrix::from_fn(cols, null.len(), |r, c| v_t[(null[c], r)]);
    let weighted = DMatrix::from_fn(cols, null.len(), |r, c| w[r] * basis[(r, c)]);
    let wz = DVector::from_fn(cols, |r, _| -w[r] * z[r]);
    let shift = weighted
        .svd(true, true)
        .solve(&wz, f64::EPSILON)
        .expect("svd computed u and v_t");
    z + basis * shift
}

/// Solves the bounded problem. `lo`/`hi` are in scaled units and may be
/// infinite.
pub(crate) fn solve(
    p: &Reduced,
    lo: &[f64],
    hi: &[f64],
    tol: f64,
    grad_scale: &[f64],
    max_iterations: usize,
) -> Result<Solution, FitError> {
    let k = p.dim();
    let mut x = DVector::zeros(k);
    let mut state = vec![State::Free; k];
    for j in 0..k {
        if lo[j] == hi[j] {
            state[j] = State::Fixed;
            x[j] = lo[j];
        }
    }

    // warm start: clip the optimum over all non-fixed variables
    let mut iterations = 0;
    let all: Vec<usize> = (0..k).filter(|&j| state[j] != State::Fixed).collect();
    if !all.is_empty() {
        let z = p.solve_free(&all, &x);
        iterations += 1;
        for (&j, &zj) in all.iter().zip(z.iter()) {
            if zj <= lo[j] {
                state[j] = State::Lower;
                x[j] = lo[j];
            } else if zj >= hi[j] {
                state[j] = State::Upper;
                x[j] = hi[j];
            } else {
                x[j] = zj;
            }
        }
    }

    let mut blocked = vec![false; k];
    let mut just_freed: Option<(usize, State)> = None;
    let mut need_solve = true;
    loop {
        let free: Vec<usize> = (0..k).filter(|&j| state[j] == State::Free).collect();
        if need_solve && !free.is_empty() {
            if iterations >= max_iterations {
                return Err(FitError::IterationLimit(max_iterations));
            }
            let z = p.solve_free(&free, &x);
            iterations += 1;

            let infeasible = free
                .iter()
                .zip(z.iter())
                .any(|(&j, &zj)| zj < lo[j] || zj > hi[j]);
            if infeasible {
                if let Some((j, from)) = just_freed.take() {
                    let zj = z[free
                        .iter()
                        .position(|&f| f == j)
                        .expect("freed var is free")];
                    let wrong_side = match from {
                        State::Lower => zj <= lo[j],
                        _ => zj >= hi[j],
                    };
                    if wrong_side {
                        // numerically spurious violation; keep j on its bound
                        state[j] = from;
                        blocked[j] = true;
                        need_solve = false;
                        continue;
                    }
                }
                step_to_boundary(&free, &z, &mut x, &mut state, lo, hi);
                blocked.iter_mut().for_each(|b| *b = false);
                need_solve = true;
                continue;
            }
            for (&j, &zj) in free.iter().zip(z.iter()) {
                x[j] = zj;
            }
            if just_freed.take().is_some() {
                blocked.iter_mut().for_each(|b| *b = false);
            }
        }

        let g = p.gradient(&x);
        let mut worst: Option<(usize, f64)> = None;
        for j in 0..k {
            if blocked[j] {
                continue;
            }
            let ge = g[j] * grad_scale[j];
            let violation = match state[j] {
                State::Lower => -ge,
                State::Upper => ge,
                State::Free | State::Fixed => continue,
            };
            if violation > tol && worst.is_none_or(|(_, v)| violation > v) {
                worst = Some((j, violation));
            }
        }
        match worst {
            None => break,
            Some((j, _)) => {
                just_freed = Some((j, state[j]));
                state[j] = State::Free;
                need_solve = true;
            }
        }
    }
    Ok(Solution {
        x: x.iter().copied().collect(),
        iterations,
    })
}

/// Moves `x` toward `z` until the first free variable reaches a bound and
/// pins every variable that lands on one.
fn step_to_boundary(
    free: &[usize],
    z: &DVector<f64>,
    x: &mut DVector<f64>,
    state: &mut [State],
    lo: &[f64],
    hi: &[f64],
) {
    let ratios: Vec<f64> = free
        .iter()
        .zip(z.iter())
        .map(|(&j, &zj)| {
            if zj < lo[j] {
                ((x[j] - lo[j]) / (x[j] - zj)).max(0.0)
            } else if zj > hi[j] {
                ((hi[j] - x[j]) / (zj - x[j])).max(0.0)
            } else {
                f64::INFINITY
            }
        })
        .collect();
    let alpha = ratios
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
        .min(1.0);
    for ((&j, &zj), &ratio) in free.iter().zip(z.iter()).zip(&ratios) {
        if ratio <= alpha * (1.0 + 1e-12) + 1e-300 {
            if zj < lo[j] {
                x[j] = lo[j];
                state[j] = State::Lower;
            } else {
                x[j] = hi[j];
                state[j] = State::Upper;
            }
        } else {
            x[j] += alpha * (zj - x[j]);
            if x[j] <= lo[j] {
                x[j] = lo[j];
                state[j] = State::Lower;
            } else if x[j] >= hi[j] {
                x[j] = hi[j];
                state[j] = State::Upper;
            }
        }
    }
}
