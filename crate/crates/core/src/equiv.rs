//! Secondary preparations: convex mixtures of the fitted primaries (plus the
//! reference state `m`) that satisfy operational equivalence exactly,
//!
//!   e_i · ½(s_ψ + s_ψ̄) = e_i · ½(s_φ + s_φ̄) = ½   for all four measurements,
//!
//! while staying as close as possible to their primaries.

use nalgebra::{DMatrix, DVector, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qp::{self, QpOptions, QpProblem};
use crate::qubit::{Measurement, Preparation};
use crate::tomo::{gauge_fix, max_mixed_state, GptModel};

/// Preparations that get a secondary version, in weight-matrix row order.
pub const SECONDARY: [Preparation; 4] = [
    Preparation::Psi,
    Preparation::PsiBar,
    Preparation::Phi,
    Preparation::PhiBar,
];

/// Pairs whose equal mixture must look maximally mixed, as row indices.
pub const PAIRS: [(usize, usize); 2] = [(0, 1), (2, 3)];

/// Columns of the weight matrix: the six primaries, then `m`.
pub const BASIS_SIZE: usize = 7;
const N_VARS: usize = 4 * BASIS_SIZE;
const FEASIBILITY_TOLERANCE: f64 = 1e-9;
/// Ridge on the weights, which makes the program strictly convex.
const WEIGHT_RIDGE: f64 = 1e-8;
/// Slack on nonnegativity and on the fixed point when re-splitting weights.
const VERTEX_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SecondarySolution {
    /// Secondaries for ψ, ψ̄, φ, φ̄, in the gauge of the input model.
    pub secondary_states: [Vector4<f64>; 4],
    /// `weights[j][k]`: weight of basis vector `k` in secondary `j`.
    pub weights: [[f64; BASIS_SIZE]; 4],
    /// Mixing basis in the gauge of the input model.
    pub basis: [Vector4<f64>; BASIS_SIZE],
    /// Σ‖secondary − primary‖² over the last three canonical coordinates.
    pub objective: f64,
    pub equivalence_residual: f64,
    pub iterations: usize,
}

impl SecondarySolution {
    pub fn secondary(&self, p: Preparation) -> Option<&Vector4<f64>> {
        SECONDARY
            .iter()
            .position(|&q| q == p)
            .map(|j| &self.secondary_states[j])
    }
}

/// `½[e·a + e·b]` for one measurement effect.
pub fn mixture_probability(
    model: &GptModel,
    pair: (&Vector4<f64>, &Vector4<f64>),
    effect: Measurement,
) -> f64 {
    0.5 * (model.probability(effect, pair.0) + model.probability(effect, pair.1))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EquivalenceReport {
    pub residual: f64,
    pub pass: bool,
}

fn pair_residual(model: &GptModel, states: &[Vector4<f64>; 4]) -> f64 {
    let mut worst: f64 = 0.0;
    for (a, b) in PAIRS {
        for m in Measurement::ALL {
            let p = mixture_probability(model, (&states[a], &states[b]), m);
            worst = worst.max((p - 0.5).abs());
        }
    }
    worst
}

pub fn verify_equivalence(sol: &SecondarySolution, model: &GptModel, tol: f64) -> EquivalenceReport {
    let residual = pair_residual(model, &sol.secondary_states);
    EquivalenceReport {
        residual,
        pass: residual <= tol,
    }
}

/// The same check applied to the unprocessed primaries.
pub fn primary_equivalence_residual(model: &GptModel) -> f64 {
    pair_residual(model, &SECONDARY.map(|p| *model.state(p)))
}

/// Own-weight average `(1/4) Σ_j W_jj`.
pub fn average_mixture_weight(sol: &SecondarySolution) -> f64 {
    (0..4).map(|j| sol.weights[j][SECONDARY[j].index()]).sum::<f64>() / 4.0
}

fn basis_of(model: &GptModel, m: Vector4<f64>) -> [Vector4<f64>; BASIS_SIZE] {
    let mut basis = [m; BASIS_SIZE];
    basis[..6].copy_from_slice(&model.states);
    basis
}

fn var(j: usize, k: usize) -> usize {
    j * BASIS_SIZE + k
}

/// Equality rows: one row sum per secondary, then one row per (pair, effect).
fn equality_system(model: &GptModel, basis: &[Vector4<f64>; BASIS_SIZE]) -> (DMatrix<f64>, DVector<f64>) {
    let rows = 4 + PAIRS.len() * Measurement::ALL.len();
    let mut a = DMatrix::zeros(rows, N_VARS);
    let mut b = DVector::zeros(rows);
    for j in 0..4 {
        for k in 0..BASIS_SIZE {
            a[(j, var(j, k))] = 1.0;
        }
        b[j] = 1.0;
    }
    let mut row = 4;
    for (pa, pb) in PAIRS {
        for m in Measurement::ALL {
            for (k, bk) in basis.iter().enumerate() {
                let q = model.probability(m, bk);
                a[(row, var(pa, k))] = q;
                a[(row, var(pb, k))] = q;
            }
            b[row] = 1.0;
            row += 1;
        }
    }
    (a, b)
}

fn tail(v: &Vector4<f64>) -> nalgebra::Vector3<f64> {
    nalgebra::Vector3::new(v[1], v[2], v[3])
}

/// Distance objective `Σ_j ‖Σ_k W_jk b_k − p_j‖²` on canonical coordinates,
/// plus the ridge.
fn distance_problem(canonical: &GptModel, basis: &[Vector4<f64>; BASIS_SIZE]) -> (DMatrix<f64>, DVector<f64>) {
    let mut h = DMatrix::zeros(N_VARS, N_VARS);
    let mut g = DVector::zeros(N_VARS);
    for (j, prep) in SECONDARY.iter().enumerate() {
        let target = tail(canonical.state(*prep));
        for k in 0..BASIS_SIZE {
            let bk = tail(&basis[k]);
            for l in 0..BASIS_SIZE {
                h[(var(j, k), var(j, l))] = 2.0 * bk.dot(&tail(&basis[l]));
            }
            h[(var(j, k), var(j, k))] += 2.0 * WEIGHT_RIDGE;
            g[var(j, k)] = -2.0 * bk.dot(&target);
        }
    }
    (h, g)
}

/// Finds a point of the row simplices closest (in least squares) to the
/// equivalence constraints. Used when the all-`m` start is not feasible.
fn restore_feasibility(a: &DMatrix<f64>, b: &DVector<f64>, x0: DVector<f64>) -> Result<DVector<f64>> {
    let sums = a.rows(0, 4).into_owned();
    let eq = a.rows(4, a.nrows() - 4).into_owned();
    let eq_b = b.rows(4, b.len() - 4).into_owned();
    let mut h = 2.0 * eq.transpose() * &eq;
    for k in 0..N_VARS {
        h[(k, k)] += 2.0 * WEIGHT_RIDGE;
    }
    let phase_one = QpProblem {
        g: -2.0 * eq.transpose() * &eq_b,
        h,
        a: sums,
        b: DVector::from_element(4, 1.0),
    };
    let x = qp::solve(&phase_one, x0, QpOptions::default())?.x;
    let violation = (&eq * &x - &eq_b).amax();
    if violation > FEASIBILITY_TOLERANCE {
        return Err(Error::Infeasible { violation });
    }
    Ok(x)
}

/// The mixture weights of a point are not unique once the basis has more than
/// four elements. Keeps the point fixed and moves as much weight as possible
/// onto `own`: a 7-variable LP, solved exactly by visiting its vertices.
fn max_own_weight(
    basis: &[Vector4<f64>; BASIS_SIZE],
    start: &[f64; BASIS_SIZE],
    own: usize,
) -> [f64; BASIS_SIZE] {
    let a = DMatrix::from_fn(4, BASIS_SIZE, |r, k| basis[k][r]);
    let b = &a * DVector::from_row_slice(start);
    // Independent rows of the equality system.
    let svd = a.clone().svd(true, false);
    let u = svd.u.expect("requested U");
    let max = svd.singular_values.max();
    let rows: Vec<usize> = (0..4)
        .filter(|&k| svd.singular_values[k] > 1e-10 * max)
        .collect();
    let rank = rows.len();
    let ur = DMatrix::from_fn(4, rank, |r, c| u[(r, rows[c])]);
    let (ar, br) = (ur.transpose() * &a, ur.transpose() * &b);

    let mut best = *start;
    let mut best_own = start[own];
    let mut cols = Vec::with_capacity(rank);
    let mut visit = |cols: &[usize]| {
        let sub = DMatrix::from_fn(rank, rank, |r, c| ar[(r, cols[c])]);
        let Some(x) = sub.lu().solve(&br) else {
            return;
        };
        let mut w = [0.0; BASIS_SIZE];
        for (c, &k) in cols.iter().enumerate() {
            if x[c] < -VERTEX_SLACK {
                return;
            }
            w[k] = x[c].max(0.0);
        }
        let residual = (&a * DVector::from_row_slice(&w) - &b).amax();
        if residual <= VERTEX_SLACK && w[own] > best_own + VERTEX_SLACK {
            best_own = w[own];
            best = w;
        }
    };
    combinations(BASIS_SIZE, rank, &mut cols, 0, &mut visit);
    best
}

fn combinations(n: usize, k: usize, chosen: &mut Vec<usize>, from: usize, visit: &mut impl FnMut(&[usize])) {
    if chosen.len() == k {
        visit(chosen);
        return;
    }
    for i in from..n {
        chosen.push(i);
        combinations(n, k, chosen, i + 1, visit);
        chosen.pop();
    }
}

/// Solves for the secondaries. The program is set up in the canonical gauge,
/// so the result does not depend on the gauge of `model`; the returned states
/// are expressed in the gauge of `model`.
pub fn solve_secondary(model: &GptModel) -> Result<SecondarySolution> {
    let canonical = gauge_fix(model)?;
    let canonical_m = max_mixed_state(&canonical)?.vector;
    let canonical_basis = basis_of(&canonical, canonical_m);

    let (a, b) = equality_system(&canonical, &canonical_basis);
    let (h, g) = distance_problem(&canonical, &canonical_basis);

    let mut x0 = DVector::zeros(N_VARS);
    for j in 0..4 {
        x0[var(j, BASIS_SIZE - 1)] = 1.0;
    }
    let problem = QpProblem { h, g, a, b };
    if problem.equality_violation(&x0) > FEASIBILITY_TOLERANCE {
        x0 = restore_feasibility(&problem.a, &problem.b, x0)?;
    }
    let sol = qp::solve(&problem, x0, QpOptions::default())?;

    let mut weights = [[0.0; BASIS_SIZE]; 4];
    for (j, row) in weights.iter_mut().enumerate() {
        for (k, w) in row.iter_mut().enumerate() {
            *w = sol.x[var(j, k)];
        }
        *row = max_own_weight(&canonical_basis, row, SECONDARY[j].index());
    }
    let mix = |basis: &[Vector4<f64>; BASIS_SIZE], j: usize| -> Vector4<f64> {
        basis
            .iter()
            .zip(&weights[j])
            .fold(Vector4::zeros(), |acc, (bk, &w)| acc + w * bk)
    };
    let objective = (0..4)
        .map(|j| (tail(&mix(&canonical_basis, j)) - tail(canonical.state(SECONDARY[j]))).norm_squared())
        .sum();

    let basis = basis_of(model, max_mixed_state(model)?.vector);
    let secondary_states: [Vector4<f64>; 4] = std::array::from_fn(|j| mix(&basis, j));
    let equivalence_residual = pair_residual(model, &secondary_states);
    if equivalence_residual > FEASIBILITY_TOLERANCE {
        return Err(Error::Infeasible {
            violation: equivalence_residual,
        });
    }
    Ok(SecondarySolution {
        secondary_states,
        weights,
        basis,
        objective,
        equivalence_residual,
        iterations: sol.iterations,
    })
}
