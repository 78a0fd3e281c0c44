//! Exact single-qubit math for the discrimination scenario.
//!
//! States live in the x-z plane of the Bloch sphere (plus the two `y`
//! preparations used for tomographic completeness). The computational state
//! |↓⟩ sits at +z. Preparations and measurement bases are produced by the
//! same native rotation `R(β, γ)` the experiment applies, so that gate noise
//! in [`crate::sim`] can act directly on pulse angles.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;

use nalgebra::{Matrix2, Vector2};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Slack used when checking closed constraints on floating-point inputs.
pub const CONSTRAINT_SLACK: f64 = 1e-12;

/// A real Bloch vector. Unit length for pure states and projector axes.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BlochVector {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl BlochVector {
    pub const ORIGIN: BlochVector = BlochVector::new(0.0, 0.0, 0.0);

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    /// Point in the x-z plane at polar angle `angle` measured from +z.
    pub fn polar_xz(angle: f64) -> Self {
        Self::new(angle.sin(), 0.0, angle.cos())
    }

    pub fn dot(&self, other: &BlochVector) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn scale(&self, k: f64) -> Self {
        Self::new(k * self.x, k * self.y, k * self.z)
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    /// Bloch vector of a normalized pure state `a0 |↓⟩ + a1 |↑⟩`.
    pub fn from_amplitudes(amp: &Vector2<Complex64>) -> Self {
        let (a0, a1) = (amp[0], amp[1]);
        let cross = a0.conj() * a1;
        Self::new(2.0 * cross.re, 2.0 * cross.im, a0.norm_sqr() - a1.norm_sqr())
    }
}

/// Native single-qubit rotation `R(β, γ)` with rotation angle β and phase γ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation {
    pub beta: f64,
    pub gamma: f64,
    matrix: Matrix2<Complex64>,
}

impl Rotation {
    pub fn matrix(&self) -> &Matrix2<Complex64> {
        &self.matrix
    }

    /// Image of |↓⟩ under the rotation.
    pub fn apply_to_down(&self) -> Vector2<Complex64> {
        self.matrix * Vector2::new(Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0))
    }

    pub fn adjoint(&self) -> Rotation {
        rotation_matrix(self.beta, self.gamma + PI)
    }
}

/// `R(β, γ) = [[cos(β/2), −i e^{−iγ} sin(β/2)], [−i e^{iγ} sin(β/2), cos(β/2)]]`.
pub fn rotation_matrix(beta: f64, gamma: f64) -> Rotation {
    let (s, c) = (beta / 2.0).sin_cos();
    let minus_i = Complex64::new(0.0, -1.0);
    let off_upper = minus_i * Complex64::from_polar(1.0, -gamma) * s;
    let off_lower = minus_i * Complex64::from_polar(1.0, gamma) * s;
    let diag = Complex64::new(c, 0.0);
    Rotation {
        beta,
        gamma,
        matrix: Matrix2::new(diag, off_upper, off_lower, diag),
    }
}

/// A pulse before it is turned into a unitary; gate noise perturbs `beta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pulse {
    pub beta: f64,
    pub gamma: f64,
}

impl Pulse {
    const Y_PHASE: f64 = FRAC_PI_2;
    const Y_DAGGER_PHASE: f64 = 3.0 * FRAC_PI_2;

    /// `R_y(β) = R(β, π/2)`.
    pub fn ry(beta: f64) -> Self {
        Self { beta, gamma: Self::Y_PHASE }
    }

    /// `R_y†(β) = R(β, 3π/2)`.
    pub fn ry_dagger(beta: f64) -> Self {
        Self { beta, gamma: Self::Y_DAGGER_PHASE }
    }

    pub fn with_beta(self, beta: f64) -> Self {
        Self { beta, ..self }
    }

    pub fn rotation(&self) -> Rotation {
        rotation_matrix(self.beta, self.gamma)
    }
}

/// A point of the (θ, α) scan: θ sets the state overlap, α tilts the
/// measurement bases away from the ideal ones.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub theta: f64,
    pub alpha: f64,
}

impl GridPoint {
    pub fn new(theta: f64, alpha: f64) -> Self {
        Self { theta, alpha }
    }

    /// Builds a point after checking the angle ranges and the
    /// `ε ≤ c ≤ 1 − ε` constraint in its angular form.
    pub fn checked(theta: f64, alpha: f64) -> Result<Self> {
        let point = Self { theta, alpha };
        point.validate()?;
        Ok(point)
    }

    pub fn validate(&self) -> Result<()> {
        check_angle("theta", self.theta)?;
        check_angle("alpha", self.alpha)?;
        if !self.satisfies_grid_constraint() {
            return Err(Error::GridConstraint {
                theta: self.theta,
                alpha: self.alpha,
            });
        }
        Ok(())
    }

    /// `sin²(α/2) ≤ sin²((α − 2θ)/2)`. The upper half, `sin²((α−2θ)/2) ≤ cos²(α/2)`,
    /// holds automatically on `[0, π/2]²`.
    pub fn satisfies_grid_constraint(&self) -> bool {
        let eps = (self.alpha / 2.0).sin().powi(2);
        let c = ((self.alpha - 2.0 * self.theta) / 2.0).sin().powi(2);
        eps <= c + CONSTRAINT_SLACK
    }
}

impl fmt::Display for GridPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(theta = {}, alpha = {})", self.theta, self.alpha)
    }
}

fn check_angle(name: &'static str, value: f64) -> Result<()> {
    if !(-CONSTRAINT_SLACK..=FRAC_PI_2 + CONSTRAINT_SLACK).contains(&value) {
        return Err(Error::OutOfRange {
            name,
            value,
            lo: 0.0,
            hi: FRAC_PI_2,
        });
    }
    Ok(())
}

/// Preparations, in the column order of the prediction table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Preparation {
    Psi,
    PsiBar,
    Phi,
    PhiBar,
    Y,
    YBar,
}

impl Preparation {
    pub const ALL: [Preparation; 6] = [
        Preparation::Psi,
        Preparation::PsiBar,
        Preparation::Phi,
        Preparation::PhiBar,
        Preparation::Y,
        Preparation::YBar,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Preparation::Psi => "psi",
            Preparation::PsiBar => "psi_bar",
            Preparation::Phi => "phi",
            Preparation::PhiBar => "phi_bar",
            Preparation::Y => "y",
            Preparation::YBar => "y_bar",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name() == name)
    }

    /// Pulse that takes |↓⟩ to this preparation.
    pub fn pulse(self, theta: f64) -> Pulse {
        match self {
            Preparation::Psi => Pulse::ry(theta),
            Preparation::PsiBar => Pulse::ry(PI + theta),
            Preparation::Phi => Pulse::ry(PI - theta),
            Preparation::PhiBar => Pulse::ry_dagger(theta),
            Preparation::Y => Pulse { beta: FRAC_PI_2, gamma: PI },
            Preparation::YBar => Pulse { beta: FRAC_PI_2, gamma: 0.0 },
        }
    }
}

impl fmt::Display for Preparation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Measurements, in the row order of the prediction table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Measurement {
    /// Tilted basis identifying ψ.
    PsiAlpha,
    /// Tilted basis identifying φ.
    PhiAlpha,
    /// Helstrom measurement for the ψ/φ pair, outcome 1 on −z.
    HelstromPhi,
    Y,
}

impl Measurement {
    pub const ALL: [Measurement; 4] = [
        Measurement::PsiAlpha,
        Measurement::PhiAlpha,
        Measurement::HelstromPhi,
        Measurement::Y,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Measurement::PsiAlpha => "m_psi_alpha",
            Measurement::PhiAlpha => "m_phi_alpha",
            Measurement::HelstromPhi => "m_d_phi",
            Measurement::Y => "m_y",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == name)
    }

    /// Basis-change pulse applied before the z readout. Outcome 1 is a
    /// projection onto |↓⟩ after this pulse.
    pub fn pulse(self, theta: f64, alpha: f64) -> Pulse {
        match self {
            Measurement::PsiAlpha => Pulse::ry_dagger(theta - alpha),
            Measurement::PhiAlpha => Pulse::ry_dagger(PI - theta + alpha),
            Measurement::HelstromPhi => Pulse::ry_dagger(PI),
            Measurement::Y => Pulse { beta: FRAC_PI_2, gamma: 0.0 },
        }
    }
}

impl fmt::Display for Measurement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Bloch vector reached by applying `pulse` to |↓⟩.
pub fn state_from_pulse(pulse: Pulse) -> BlochVector {
    BlochVector::from_amplitudes(&pulse.rotation().apply_to_down())
}

/// Outcome-1 effect axis of a readout preceded by `pulse`: the Bloch vector
/// of `U†|↓⟩`.
pub fn effect_from_pulse(pulse: Pulse) -> BlochVector {
    BlochVector::from_amplitudes(&pulse.rotation().adjoint().apply_to_down())
}

pub fn prepare_state(label: Preparation, theta: f64) -> Result<BlochVector> {
    check_angle("theta", theta)?;
    Ok(state_from_pulse(label.pulse(theta)))
}

pub fn measurement_effect(label: Measurement, theta: f64, alpha: f64) -> Result<BlochVector> {
    check_angle("theta", theta)?;
    check_angle("alpha", alpha)?;
    Ok(effect_from_pulse(label.pulse(theta, alpha)))
}

/// Projective Born rule `½(1 + r·n)`, clamped to `[0, 1]`.
pub fn born_probability(state: &BlochVector, effect_axis: &BlochVector) -> f64 {
    (0.5 * (1.0 + state.dot(effect_axis))).clamp(0.0, 1.0)
}

/// Confusability, measurement incorrectness and ideal success probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoryParams {
    pub c: f64,
    pub epsilon: f64,
    pub s: f64,
}

pub fn theory_params(point: GridPoint) -> Result<TheoryParams> {
    point.validate()?;
    Ok(TheoryParams {
        c: ((point.alpha - 2.0 * point.theta) / 2.0).sin().powi(2),
        epsilon: (point.alpha / 2.0).sin().powi(2),
        s: (point.theta / 2.0).cos().powi(2),
    })
}

pub fn check_parameter_constraint(c: f64, epsilon: f64, slack: f64) -> Result<()> {
    let finite = c.is_finite() && epsilon.is_finite();
    if !finite || epsilon < -slack || c < epsilon - slack || c > 1.0 - epsilon + slack {
        return Err(Error::ParameterConstraint { c, epsilon });
    }
    Ok(())
}

/// Success-probability bound reachable by quantum theory with tilted
/// measurements. Unchecked; callers validate `(c, ε)` first.
pub(crate) fn quantum_bound_formula(c: f64, epsilon: f64) -> f64 {
    let cross = (epsilon * (1.0 - epsilon) * c * (1.0 - c)).max(0.0).sqrt();
    let radicand = 1.0 - epsilon + 2.0 * cross + c * (2.0 * epsilon - 1.0);
    0.5 * (1.0 + radicand.max(0.0).sqrt())
}

pub(crate) fn noncontextual_bound_formula(c: f64, epsilon: f64) -> f64 {
    1.0 - (c - epsilon) / 2.0
}

pub fn quantum_bound(c: f64, epsilon: f64) -> Result<f64> {
    check_parameter_constraint(c, epsilon, CONSTRAINT_SLACK)?;
    Ok(quantum_bound_formula(c, epsilon))
}

/// Upper bound on the success probability in any non-contextual model,
/// `1 − (c − ε)/2`.
pub fn noncontextual_bound(c: f64, epsilon: f64) -> Result<f64> {
    check_parameter_constraint(c, epsilon, CONSTRAINT_SLACK)?;
    Ok(noncontextual_bound_formula(c, epsilon))
}

pub const GRID_STEP: f64 = 0.1;
pub const GRID_STEPS: usize = 16;

/// The scanned grid: θ, α ∈ {0.0, 0.1, …, 1.5} with θ ≥ α (136 points).
pub fn default_grid() -> Vec<GridPoint> {
    let mut points = Vec::with_capacity(GRID_STEPS * (GRID_STEPS + 1) / 2);
    for ti in 0..GRID_STEPS {
        for ai in 0..=ti {
            points.push(GridPoint::new(ti as f64 * GRID_STEP, ai as f64 * GRID_STEP));
        }
    }
    points
}

/// Outcome-1 probabilities: row 0 is the unit effect, rows 1..=4 follow
/// [`Measurement::ALL`], columns follow [`Preparation::ALL`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbabilityTable(pub [[f64; 6]; 5]);

impl ProbabilityTable {
    pub fn get(&self, m: Measurement, p: Preparation) -> f64 {
        self.0[m.index() + 1][p.index()]
    }
}

pub fn ideal_probability_table(point: GridPoint) -> Result<ProbabilityTable> {
    point.validate()?;
    let mut table = [[1.0; 6]; 5];
    for m in Measurement::ALL {
        let axis = measurement_effect(m, point.theta, point.alpha)?;
        for p in Preparation::ALL {
            let state = prepare_state(p, point.theta)?;
            table[m.index() + 1][p.index()] = born_probability(&state, &axis);
        }
    }
    Ok(ProbabilityTable(table))
}
