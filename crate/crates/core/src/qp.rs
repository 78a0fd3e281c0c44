//! Primal active-set solver for small convex quadratic programs
//!
//!   minimize ½ xᵀHx + gᵀx   subject to   A x = b,  x ≥ 0,
//!
//! started from a feasible point. Equality rows may be linearly dependent.
//! Steps are computed in the null space of the free equality columns through
//! the projector `P = I − V Vᵀ`, so iterates never drift off `A x = b`.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct QpProblem {
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct QpOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for QpOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-10,
            max_iterations: 100_000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub iterations: usize,
}

impl QpProblem {
    #[cfg(test)]
    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.h * x)) + self.g.dot(x)
    }

    pub fn equality_violation(&self, x: &DVector<f64>) -> f64 {
        (&self.a * x - &self.b).amax()
    }
}

fn select_columns(m: &DMatrix<f64>, cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), cols.len(), |r, c| m[(r, cols[c])])
}

/// Orthonormal basis (as columns) of the row space of `a`, together with the
/// pieces needed for least-squares multipliers.
struct RowSpace {
    v: DMatrix<f64>,
    u: DMatrix<f64>,
    sigma: Vec<f64>,
}

fn row_space(a: &DMatrix<f64>) -> RowSpace {
    let n = a.ncols();
    if a.nrows() == 0 || n == 0 {
        return RowSpace {
            v: DMatrix::zeros(n, 0),
            u: DMatrix::zeros(a.nrows(), 0),
            sigma: Vec::new(),
        };
    }
    let svd = a.clone().svd(true, true);
    let u = svd.u.expect("requested U");
    let vt = svd.v_t.expect("requested V^T");
    let max = svd.singular_values.max();
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&k| svd.singular_values[k] > 1e-10 * max.max(1e-300))
        .collect();
    RowSpace {
        v: DMatrix::from_fn(n, keep.len(), |r, c| vt[(keep[c], r)]),
        u: DMatrix::from_fn(a.nrows(), keep.len(), |r, c| u[(r, keep[c])]),
        sigma: keep.iter().map(|&k| svd.singular_values[k]).collect(),
    }
}

pub fn solve(problem: &QpProblem, x0: DVector<f64>, opts: QpOptions) -> Result<QpSolution> {
    let n = x0.len();
    let mut x = x0;
    let mut active: Vec<bool> = x.iter().map(|&v| v <= 0.0).collect();
    for (xi, &act) in x.iter_mut().zip(&active) {
        if act {
            *xi = 0.0;
        }
    }

    let mut released = None;
    for iteration in 0..opts.max_iterations {
        let free: Vec<usize> = (0..n).filter(|&k| !active[k]).collect();
        let grad = &problem.h * &x + &problem.g;
        let a_free = select_columns(&problem.a, &free);
        let rs = row_space(&a_free);

        let nf = free.len();
        let mut step = DVector::zeros(n);
        if nf > 0 {
            let projector = DMatrix::identity(nf, nf) - &rs.v * rs.v.transpose();
            let h_free = DMatrix::from_fn(nf, nf, |r, c| problem.h[(free[r], free[c])]);
            let g_free = DVector::from_fn(nf, |r, _| grad[free[r]]);
            let reduced = &projector * h_free * &projector + (DMatrix::identity(nf, nf) - &projector);
            let rhs = -(&projector * g_free);
            let p = match Cholesky::new(reduced.clone()) {
                Some(ch) => ch.solve(&rhs),
                None => reduced
                    .svd(true, true)
                    .solve(&rhs, 1e-14)
                    .map_err(|_| Error::QpIterationLimit { iterations: iteration })?,
            };
            // Remove any numerical component along the constrained rows.
            let p = &projector * p;
            for (r, &k) in free.iter().enumerate() {
                step[k] = p[r];
            }
        }

        // A full step that cannot lower the objective measurably is taken as
        // zero; with a nearly flat reduced Hessian such steps are rounding noise.
        let decrease = -(grad.dot(&step) + 0.5 * step.dot(&(&problem.h * &step)));
        if step.amax() <= opts.tolerance * 1e-2 || decrease <= opts.tolerance * 1e-5 {
            // Least-squares multipliers ν of the equality rows at this point.
            let g_free = DVector::from_fn(nf, |r, _| grad[free[r]]);
            let mut nu = DVector::zeros(problem.a.nrows());
            if !rs.sigma.is_empty() {
                let coeff = rs.v.transpose() * g_free;
                let scaled = DVector::from_fn(rs.sigma.len(), |k, _| coeff[k] / rs.sigma[k]);
                nu = &rs.u * scaled;
            }
            let reduced_grad = &grad - problem.a.transpose() * &nu;
            let leaving = (0..n)
                .filter(|&k| active[k])
                .map(|k| (k, reduced_grad[k]))
                .filter(|&(_, lambda)| lambda < -opts.tolerance)
                .min_by(|a, b| a.1.total_cmp(&b.1));
            match leaving {
                None => {
                    return Ok(QpSolution {
                        x,
                        iterations: iteration,
                    })
                }
                Some((k, _)) => {
                    active[k] = false;
                    released = Some(k);
                    continue;
                }
            }
        }

        let mut alpha = 1.0;
        let mut blocking = None;
        for &k in &free {
            if step[k] < 0.0 {
                let ratio = -x[k] / step[k];
                if ratio < alpha {
                    alpha = ratio;
                    blocking = Some(k);
                }
            }
        }
        if alpha == 0.0 && blocking.is_some() && blocking == released {
            // The released bound would be violated at once: its multiplier
            // sign was rounding noise and the point is already optimal.
            return Ok(QpSolution {
                x,
                iterations: iteration,
            });
        }
        released = None;
        x += alpha * &step;
        if let Some(k) = blocking {
            active[k] = true;
            x[k] = 0.0;
        }
    }
    Err(Error::QpIterationLimit {
        iterations: opts.max_iterations,
    })
}
