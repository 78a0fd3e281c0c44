//! Primary-stage processing: a rank-4 generalized-probabilistic-theory fit of
//! the calibrated frequency table.
//!
//! States are 4-vectors `(1, v)` and effects are 4-vectors `(½, f)` in the
//! fitted gauge, with the unit effect fixed to `u = (1, 0, 0, 0)`. Nothing
//! restricts `v` to the Bloch ball. Fixing the first effect coordinate to ½
//! means every fitted effect gives ½ on the state `(1, 0, 0, 0)`, so the
//! reference state targeted by the equivalence stage always exists; the
//! prediction `½ + f·v` is then a plain bilinear rank-3 model of `F − ½`.

use nalgebra::{Cholesky, Matrix3, Matrix3x4, Matrix3x6, SMatrix, SVector, Vector3, Vector4, SVD};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qubit::{measurement_effect, prepare_state, GridPoint, Measurement, Preparation};
use crate::sim::{calibrate_detection, CountTable, Detector};

pub const MAX_ITERATIONS: usize = 10_000;
pub const CHI2_TOLERANCE: f64 = 1e-10;
/// Relative singular-value cutoff below which a direction counts as absent.
const RANK_CUTOFF: f64 = 1e-9;
const MAX_MIXED_CONDITION_LIMIT: f64 = 1e8;
const GAUGE_CONDITION_LIMIT: f64 = 1e12;
const GAUGE_RANK_CUTOFF: f64 = 1e-12;
const GAUGE_RIDGE: f64 = 1e-10;
const GAUGE_MAX_ITERATIONS: usize = 500;

pub const UNIT_EFFECT: Vector4<f64> = Vector4::new(1.0, 0.0, 0.0, 0.0);

/// Calibrated outcome-1 frequencies. Row 0 is the unit effect; rows 1..=4
/// follow [`Measurement::ALL`] and columns follow [`Preparation::ALL`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyMatrix {
    pub point: GridPoint,
    pub values: [[f64; 6]; 5],
    /// Standard error of each data cell, `[measurement][preparation]`.
    pub sigma: [[f64; 6]; 4],
}

impl FrequencyMatrix {
    /// Exact frequencies with unit weights.
    pub fn from_probabilities(point: GridPoint, data: [[f64; 6]; 4]) -> Self {
        let mut values = [[1.0; 6]; 5];
        values[1..].copy_from_slice(&data);
        Self {
            point,
            values,
            sigma: [[1.0; 6]; 4],
        }
    }

    pub fn get(&self, m: Measurement, p: Preparation) -> f64 {
        self.values[m.index() + 1][p.index()]
    }

    pub fn data(&self, row: usize, col: usize) -> f64 {
        self.values[row + 1][col]
    }
}

/// Binomial standard error of a frequency, floored at `1/(2N)`.
pub fn binomial_sigma(f: f64, n: u64) -> f64 {
    let n = n as f64;
    (f * (1.0 - f) / n).sqrt().max(0.5 / n)
}

pub fn build_frequency_matrix(counts: &CountTable, detector: Detector) -> Result<FrequencyMatrix> {
    let mut values = [[1.0; 6]; 5];
    let mut sigma = [[1.0; 6]; 4];
    for m in Measurement::ALL {
        for p in Preparation::ALL {
            let cell = counts.cell(m, p);
            let raw = cell.frequency();
            if !raw.is_finite() || cell.n_outcome1 > cell.n_total && !cell.is_exact() {
                return Err(Error::MissingCell {
                    measurement: m.to_string(),
                    preparation: p.to_string(),
                });
            }
            values[m.index() + 1][p.index()] = calibrate_detection(raw, detector.e01, detector.e10);
            if !cell.is_exact() {
                sigma[m.index()][p.index()] = binomial_sigma(raw, cell.n_total) / detector.gain();
            }
        }
    }
    Ok(FrequencyMatrix {
        point: counts.point,
        values,
        sigma,
    })
}

/// Fitted effects and states. `effects[0]` is the unit effect and every
/// state has first coordinate 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GptModel {
    pub point: GridPoint,
    pub effects: [Vector4<f64>; 5],
    pub states: [Vector4<f64>; 6],
    pub chi_squared: f64,
    pub iterations: usize,
    /// Dimension spanned by the fitted states; below 4 flags a degenerate fit.
    pub state_rank: usize,
}

impl GptModel {
    /// The quantum model of the nominal experiment: effects `(½, ½n)`,
    /// states `(1, r)`.
    pub fn ideal(point: GridPoint) -> Result<Self> {
        let mut effects = [UNIT_EFFECT; 5];
        for m in Measurement::ALL {
            let n = measurement_effect(m, point.theta, point.alpha)?;
            effects[m.index() + 1] = Vector4::new(0.5, 0.5 * n.x, 0.5 * n.y, 0.5 * n.z);
        }
        let mut states = [UNIT_EFFECT; 6];
        for p in Preparation::ALL {
            let r = prepare_state(p, point.theta)?;
            states[p.index()] = Vector4::new(1.0, r.x, r.y, r.z);
        }
        let mut model = Self {
            point,
            effects,
            states,
            chi_squared: 0.0,
            iterations: 0,
            state_rank: 0,
        };
        model.state_rank = model.compute_state_rank();
        Ok(model)
    }

    /// `effects[i] · states[j]` for the 5×6 table.
    pub fn reconstruct(&self) -> [[f64; 6]; 5] {
        let mut out = [[0.0; 6]; 5];
        for (i, e) in self.effects.iter().enumerate() {
            for (j, s) in self.states.iter().enumerate() {
                out[i][j] = e.dot(s);
            }
        }
        out
    }

    pub fn probability(&self, m: Measurement, state: &Vector4<f64>) -> f64 {
        self.effects[m.index() + 1].dot(state)
    }

    pub fn state(&self, p: Preparation) -> &Vector4<f64> {
        &self.states[p.index()]
    }

    pub fn chi_squared_against(&self, f: &FrequencyMatrix) -> f64 {
        weighted_chi_squared(f, &self.reconstruct())
    }

    fn compute_state_rank(&self) -> usize {
        let m = SMatrix::<f64, 4, 6>::from_columns(&self.states);
        numerical_rank(m.singular_values().as_slice())
    }

    /// Applies the basis change `E → E·T`, `S → T⁻¹·S`.
    pub fn transformed(&self, t: &nalgebra::Matrix4<f64>) -> Result<Self> {
        let t_inv = t.try_inverse().ok_or(Error::SingularGauge {
            condition: f64::INFINITY,
        })?;
        let mut out = self.clone();
        for e in out.effects.iter_mut() {
            *e = t.transpose() * *e;
        }
        for s in out.states.iter_mut() {
            *s = t_inv * *s;
        }
        Ok(out)
    }
}

fn numerical_rank(singular: &[f64]) -> usize {
    let max = singular.iter().cloned().fold(0.0, f64::max);
    if max == 0.0 {
        return 0;
    }
    singular.iter().filter(|&&s| s > RANK_CUTOFF * max).count()
}

fn weighted_chi_squared(f: &FrequencyMatrix, recon: &[[f64; 6]; 5]) -> f64 {
    let mut chi2 = 0.0;
    for i in 0..4 {
        for j in 0..6 {
            let r = (f.data(i, j) - recon[i + 1][j]) / f.sigma[i][j];
            chi2 += r * r;
        }
    }
    chi2
}

/// Minimizes `xᵀAx − 2bᵀx` for a symmetric PSD `A`, falling back to the
/// minimum-norm solution when `A` is singular.
fn solve_psd3(a: &Matrix3<f64>, b: &Vector3<f64>) -> Vector3<f64> {
    let max_diag = a.diagonal().max();
    if max_diag <= 0.0 {
        return Vector3::zeros();
    }
    if let Some(ch) = Cholesky::new(*a) {
        let l = ch.l_dirty();
        let min_pivot = (0..3).map(|k| l[(k, k)] * l[(k, k)]).fold(f64::INFINITY, f64::min);
        if min_pivot > 1e-10 * max_diag {
            return ch.solve(b);
        }
    }
    let svd = SVD::new(*a, true, true);
    let cutoff = RANK_CUTOFF * svd.singular_values.max();
    svd.solve(b, cutoff).unwrap_or_else(|_| Vector3::zeros())
}

/// Bilinear factors `F − ½ ≈ f_i · v_j` for the four data rows.
struct Factors {
    f: [Vector3<f64>; 4],
    v: [Vector3<f64>; 6],
}

impl Factors {
    /// Reads the factors of a model already in the `(½, f)` / `(1, v)` form.
    fn from_model(model: &GptModel) -> Self {
        let tail = |x: &Vector4<f64>| Vector3::new(x[1], x[2], x[3]);
        Self {
            f: std::array::from_fn(|i| tail(&model.effects[i + 1])),
            v: std::array::from_fn(|j| tail(&model.states[j])),
        }
    }

    fn chi_squared(&self, fm: &FrequencyMatrix) -> f64 {
        let mut chi2 = 0.0;
        for i in 0..4 {
            for j in 0..6 {
                let r = (fm.data(i, j) - 0.5 - self.f[i].dot(&self.v[j])) / fm.sigma[i][j];
                chi2 += r * r;
            }
        }
        chi2
    }

    fn update_effects(&mut self, fm: &FrequencyMatrix) {
        for i in 0..4 {
            let mut a = Matrix3::zeros();
            let mut b = Vector3::zeros();
            for j in 0..6 {
                let w = fm.sigma[i][j].powi(-2);
                a += w * self.v[j] * self.v[j].transpose();
                b += w * (fm.data(i, j) - 0.5) * self.v[j];
            }
            self.f[i] = solve_psd3(&a, &b);
        }
    }

    fn update_states(&mut self, fm: &FrequencyMatrix) {
        for j in 0..6 {
            let mut a = Matrix3::zeros();
            let mut b = Vector3::zeros();
            for i in 0..4 {
                let w = fm.sigma[i][j].powi(-2);
                a += w * self.f[i] * self.f[i].transpose();
                b += w * (fm.data(i, j) - 0.5) * self.f[i];
            }
            self.v[j] = solve_psd3(&a, &b);
        }
    }

    fn into_model(self, point: GridPoint, chi_squared: f64, iterations: usize) -> GptModel {
        let mut effects = [UNIT_EFFECT; 5];
        for (i, f) in self.f.iter().enumerate() {
            effects[i + 1] = Vector4::new(0.5, f.x, f.y, f.z);
        }
        let states = self.v.map(|v| Vector4::new(1.0, v.x, v.y, v.z));
        let mut model = GptModel {
            point,
            effects,
            states,
            chi_squared,
            iterations,
            state_rank: 0,
        };
        model.state_rank = model.compute_state_rank();
        model
    }
}

/// Fits the GPT model starting from the ideal quantum model of the point.
pub fn fit_primary(f: &FrequencyMatrix) -> Result<GptModel> {
    let init = GptModel::ideal(f.point)?;
    fit_primary_from(f, &init).map(|(model, _)| model)
}

/// Alternating weighted least squares from an explicit starting model, which
/// must already be in `(½, f)` / `(1, v)` form. Also returns the χ² after
/// every half-step.
pub fn fit_primary_from(f: &FrequencyMatrix, init: &GptModel) -> Result<(GptModel, Vec<f64>)> {
    let mut factors = Factors::from_model(init);
    let mut trace = Vec::new();
    // States first: a state update from the initial effects is a projection
    // of the data, so the first χ² already reflects the data.
    factors.update_states(f);
    let mut chi2 = factors.chi_squared(f);
    trace.push(chi2);
    for iteration in 1..=MAX_ITERATIONS {
        factors.update_effects(f);
        trace.push(factors.chi_squared(f));
        factors.update_states(f);
        let next = factors.chi_squared(f);
        trace.push(next);
        let improvement = chi2 - next;
        chi2 = next;
        if improvement < CHI2_TOLERANCE {
            return Ok((factors.into_model(f.point, chi2, iteration), trace));
        }
    }
    Err(Error::NonConvergence {
        iterations: MAX_ITERATIONS,
        chi_squared: chi2,
    })
}

/// The state assigning ½ to all four measurement effects (and 1 to the unit
/// effect), with its worst-case residual.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaxMixed {
    pub vector: Vector4<f64>,
    pub residual: f64,
}

pub fn max_mixed_state(model: &GptModel) -> Result<MaxMixed> {
    let a = SMatrix::<f64, 5, 4>::from_rows(&model.effects.map(|e| e.transpose()));
    let b = SVector::<f64, 5>::new(1.0, 0.5, 0.5, 0.5, 0.5);
    let svd = a.svd(true, true);
    let max = svd.singular_values.max();
    let cutoff = RANK_CUTOFF * max;
    let min_kept = svd
        .singular_values
        .iter()
        .cloned()
        .filter(|&s| s > cutoff)
        .fold(f64::INFINITY, f64::min);
    let condition = max / min_kept;
    if condition > MAX_MIXED_CONDITION_LIMIT {
        return Err(Error::IllConditioned { condition });
    }
    let vector = svd
        .solve(&b, cutoff)
        .map_err(|_| Error::IllConditioned { condition })?;
    let residual = (a * vector - b).amax();
    Ok(MaxMixed { vector, residual })
}

/// Aᵀ = F_target F⁺, or `None` when the fitted effect tails do not span
/// three dimensions.
fn effect_map(f: &Matrix3x4<f64>, ft: &Matrix3x4<f64>) -> Option<Matrix3<f64>> {
    let gram = f * f.transpose();
    let sv = gram.singular_values();
    if sv.min() <= GAUGE_RANK_CUTOFF * sv.max() {
        return None;
    }
    gram.try_inverse().map(|g| ft * f.transpose() * g)
}

/// Joint least squares on effects (Aᵀf ≈ f_target) and states, the latter
/// linearized as A·v_target ≈ v, with a small ridge towards the identity.
/// Only used when the measurement axes are coplanar (θ = α) and the effects
/// leave one direction undetermined.
fn joint_map(centred: &GptModel, target: &GptModel) -> Result<Matrix3<f64>> {
    let tail = |x: &Vector4<f64>| Vector3::new(x[1], x[2], x[3]);
    let mut normal = SMatrix::<f64, 9, 9>::identity() * GAUGE_RIDGE;
    let mut rhs = SVector::<f64, 9>::zeros();
    for k in 0..3 {
        rhs[3 * k + k] = GAUGE_RIDGE;
    }
    let mut add_row = |coeffs: SVector<f64, 9>, target: f64| {
        normal += coeffs * coeffs.transpose();
        rhs += coeffs * target;
    };
    for i in 1..5 {
        let f = tail(&centred.effects[i]);
        let ft = tail(&target.effects[i]);
        for c in 0..3 {
            let mut row = SVector::<f64, 9>::zeros();
            for r in 0..3 {
                row[3 * r + c] = f[r];
            }
            add_row(row, ft[c]);
        }
    }
    for j in 0..6 {
        let v = tail(&centred.states[j]);
        let vt = tail(&target.states[j]);
        for r in 0..3 {
            let mut row = SVector::<f64, 9>::zeros();
            for c in 0..3 {
                row[3 * r + c] = vt[c];
            }
            add_row(row, v[r]);
        }
    }
    let solution = Cholesky::new(normal)
        .map(|ch| ch.solve(&rhs))
        .ok_or(Error::SingularGauge {
            condition: f64::INFINITY,
        })?;
    Ok(Matrix3::from_row_slice(solution.as_slice()))
}

/// Cost `Σ‖Aᵀf − f_target‖² + Σ‖A⁻¹v − v_target‖²`. Both sums are unchanged
/// by a prior change of gauge, so neither is its minimizer.
fn balanced_cost(a: &Matrix3<f64>, f: &Matrix3x4<f64>, ft: &Matrix3x4<f64>, v: &Matrix3x6<f64>, vt: &Matrix3x6<f64>) -> f64 {
    match a.try_inverse() {
        Some(inv) => (a.transpose() * f - ft).norm_squared() + (inv * v - vt).norm_squared(),
        None => f64::INFINITY,
    }
}

/// Levenberg–Marquardt on [`balanced_cost`] over the nine entries of `A`.
fn balanced_map(
    start: Matrix3<f64>,
    f: &Matrix3x4<f64>,
    ft: &Matrix3x4<f64>,
    v: &Matrix3x6<f64>,
    vt: &Matrix3x6<f64>,
) -> Matrix3<f64> {
    let mut a = start;
    let mut cost = balanced_cost(&a, f, ft, v, vt);
    let mut lambda = 1e-6;
    for _ in 0..GAUGE_MAX_ITERATIONS {
        let Some(inv) = a.try_inverse() else { break };
        let w = inv * v;
        let r1 = a.transpose() * f - ft;
        let r2 = w - vt;
        let mut jtj = SMatrix::<f64, 9, 9>::zeros();
        let mut jtr = SVector::<f64, 9>::zeros();
        // Effect residual (c, i) depends on a[(r, c)] through f[(r, i)].
        for i in 0..4 {
            for c in 0..3 {
                let mut row = SVector::<f64, 9>::zeros();
                for r in 0..3 {
                    row[3 * r + c] = f[(r, i)];
                }
                jtj += row * row.transpose();
                jtr += row * r1[(c, i)];
            }
        }
        // d(A⁻¹v) = −A⁻¹ dA A⁻¹v.
        for j in 0..6 {
            for q in 0..3 {
                let mut row = SVector::<f64, 9>::zeros();
                for r in 0..3 {
                    for c in 0..3 {
                        row[3 * r + c] = -inv[(q, r)] * w[(c, j)];
                    }
                }
                jtj += row * row.transpose();
                jtr += row * r2[(q, j)];
            }
        }
        let mut improved = false;
        while lambda < 1e12 {
            let mut damped = jtj;
            for k in 0..9 {
                damped[(k, k)] += lambda * (1.0 + jtj[(k, k)]);
            }
            let Some(step) = Cholesky::new(damped).map(|ch| ch.solve(&(-jtr))) else {
                lambda *= 10.0;
                continue;
            };
            let candidate = a + Matrix3::from_row_slice(step.as_slice());
            let next = balanced_cost(&candidate, f, ft, v, vt);
            if next < cost {
                let done = step.amax() < 1e-14 * (1.0 + a.amax()) || cost - next < 1e-16 * cost;
                a = candidate;
                cost = next;
                lambda = (lambda * 0.1).max(1e-12);
                improved = !done;
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    a
}

/// Moves the model to the canonical gauge. The reference state becomes
/// `(1, 0, 0, 0)`; the remaining 3×3 freedom `A` is chosen so that effects
/// sit as close as possible to `(½, ½n)` for the nominal axes `n` and states
/// to `(1, r)` for the nominal Bloch vectors, both in least squares.
pub fn gauge_fix(model: &GptModel) -> Result<GptModel> {
    let m = max_mixed_state(model)?.vector;
    let mut translate = nalgebra::Matrix4::identity();
    translate[(1, 0)] = m[1];
    translate[(2, 0)] = m[2];
    translate[(3, 0)] = m[3];
    let centred = model.transformed(&translate)?;

    let target = GptModel::ideal(model.point)?;
    let tail = |x: &Vector4<f64>| Vector3::new(x[1], x[2], x[3]);

    // Effects map f → Aᵀf and states v → A⁻¹v.
    let f = Matrix3x4::from_columns(&[1, 2, 3, 4].map(|i| tail(&centred.effects[i])));
    let ft = Matrix3x4::from_columns(&[1, 2, 3, 4].map(|i| tail(&target.effects[i])));
    let start = match effect_map(&f, &ft) {
        Some(at) => at.transpose(),
        None => joint_map(&centred, &target)?,
    };
    let v = Matrix3x6::from_columns(&centred.states.map(|s| tail(&s)));
    let vt = Matrix3x6::from_columns(&target.states.map(|s| tail(&s)));
    let a = balanced_map(start, &f, &ft, &v, &vt);
    let sv = a.singular_values();
    let condition = sv.max() / sv.min();
    if !(condition < GAUGE_CONDITION_LIMIT) {
        return Err(Error::SingularGauge { condition });
    }
    let mut t = nalgebra::Matrix4::identity();
    t.fixed_view_mut::<3, 3>(1, 1).copy_from(&a);
    let mut fixed = centred.transformed(&t)?;
    fixed.effects[0] = UNIT_EFFECT;
    for s in fixed.states.iter_mut() {
        s[0] = 1.0;
    }
    Ok(fixed)
}
