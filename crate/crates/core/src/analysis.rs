//! Parameter extraction, contextual advantage, bootstrap uncertainty and the
//! grid-wide fidelity score.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::equiv::{average_mixture_weight, solve_secondary, SecondarySolution};
use crate::error::{Error, Result};
use crate::qubit::{
    noncontextual_bound_formula, quantum_bound_formula, theory_params, GridPoint, Measurement,
    Preparation,
};
use crate::sim::{calibrate_unclamped, keyed_rng, sample_counts, CountCell, CountTable};
use crate::tomo::{build_frequency_matrix, fit_primary, GptModel};

/// Slack on `ε ≤ c ≤ 1 − ε` before extracted parameters are flagged.
pub const CONSTRAINT_TOLERANCE: f64 = 0.02;
/// Points with a smaller theoretical advantage are left out of the fidelity.
pub const FIDELITY_EXCLUSION: f64 = 1e-6;
pub const DEFAULT_K_SIGMA: f64 = 3.0;
/// Largest tolerated fraction of failed bootstrap resamples.
pub const MAX_BOOTSTRAP_FAILURE_RATE: f64 = 0.1;

const DOMAIN_BOOTSTRAP: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Extracted {
    pub c: f64,
    pub epsilon: f64,
    pub s: f64,
    /// How many of the three values had to be clamped into [0, 1].
    pub clamp_events: usize,
    /// Set when `(c, ε)` misses `ε ≤ c ≤ 1 − ε` by more than the tolerance.
    pub constraint_warning: bool,
}

/// Averages the four table cells that estimate each of c, ε and s, using the
/// secondary preparations.
pub fn extract_parameters(model: &GptModel, sol: &SecondarySolution) -> Extracted {
    use Measurement as M;
    use Preparation as P;
    let p = |m: M, prep: P| {
        let state = sol.secondary(prep).expect("secondary exists for x-z preparations");
        model.probability(m, state)
    };
    let c = (p(M::PsiAlpha, P::Phi)
        + p(M::PhiAlpha, P::Psi)
        + (1.0 - p(M::PsiAlpha, P::PhiBar))
        + (1.0 - p(M::PhiAlpha, P::PsiBar)))
        / 4.0;
    let epsilon = (p(M::PsiAlpha, P::PsiBar)
        + p(M::PhiAlpha, P::PhiBar)
        + (1.0 - p(M::PsiAlpha, P::Psi))
        + (1.0 - p(M::PhiAlpha, P::Phi)))
        / 4.0;
    let s = (p(M::HelstromPhi, P::Phi)
        + p(M::HelstromPhi, P::PsiBar)
        + (1.0 - p(M::HelstromPhi, P::Psi))
        + (1.0 - p(M::HelstromPhi, P::PhiBar)))
        / 4.0;

    let mut clamp_events = 0;
    let mut clamp = |v: f64| {
        let clamped = v.clamp(0.0, 1.0);
        if clamped != v {
            clamp_events += 1;
        }
        clamped
    };
    let (c, epsilon, s) = (clamp(c), clamp(epsilon), clamp(s));
    let constraint_warning =
        epsilon - c > CONSTRAINT_TOLERANCE || c - (1.0 - epsilon) > CONSTRAINT_TOLERANCE;
    Extracted {
        c,
        epsilon,
        s,
        clamp_events,
        constraint_warning,
    }
}

/// `(s − s_nc(c, ε), s_q(c, ε) − s_nc(c, ε))`. Inputs within the tolerance of
/// the admissible region are accepted; the quantum bound is then evaluated at
/// the nearest admissible `c`.
pub fn contextual_advantage(c: f64, epsilon: f64, s_measured: f64) -> Result<(f64, f64)> {
    crate::qubit::check_parameter_constraint(c, epsilon, CONSTRAINT_TOLERANCE)?;
    let ds_exp = s_measured - noncontextual_bound_formula(c, epsilon);
    let eps_in = epsilon.clamp(0.0, 0.5);
    let c_in = c.clamp(eps_in, 1.0 - eps_in);
    let ds_theory = quantum_bound_formula(c_in, eps_in) - noncontextual_bound_formula(c_in, eps_in);
    Ok((ds_exp, ds_theory))
}

/// Everything the two-stage processing produces for one count table.
#[derive(Debug, Clone)]
pub struct PipelineResult {
    pub model: GptModel,
    pub secondary: SecondarySolution,
    pub extracted: Extracted,
    pub calibration_clamps: usize,
}

/// Calibrate → primary fit → secondary solve → extract.
pub fn run_pipeline(counts: &CountTable) -> Result<PipelineResult> {
    let detector = counts.noise.detector();
    let f = build_frequency_matrix(counts, detector)?;
    let calibration_clamps = counts
        .cells
        .iter()
        .flatten()
        .filter(|cell| {
            let v = calibrate_unclamped(cell.frequency(), detector.e01, detector.e10);
            !(0.0..=1.0).contains(&v)
        })
        .count();
    let model = fit_primary(&f)?;
    let secondary = solve_secondary(&model)?;
    let extracted = extract_parameters(&model, &secondary);
    Ok(PipelineResult {
        model,
        secondary,
        extracted,
        calibration_clamps,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = if values.len() > 1 {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Self {
            mean,
            std: var.sqrt(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BootstrapSummary {
    pub c: MeanStd,
    pub epsilon: MeanStd,
    pub s: MeanStd,
    pub ds_exp: MeanStd,
    pub resamples: usize,
    pub failed: usize,
}

fn resample(counts: &CountTable, seed: u64, replica: usize) -> CountTable {
    let mut out = counts.clone();
    let point_key = [counts.point.theta.to_bits(), counts.point.alpha.to_bits()];
    for m in Measurement::ALL {
        for p in Preparation::ALL {
            let cell = counts.cell(m, p);
            if cell.is_exact() {
                continue;
            }
            let key = [
                DOMAIN_BOOTSTRAP,
                point_key[0],
                point_key[1],
                replica as u64,
                m.index() as u64,
                p.index() as u64,
            ];
            let mut rng = keyed_rng(seed, &key);
            let (n1, n) = sample_counts(cell.frequency(), cell.n_total, &mut rng);
            out.cells[m.index()][p.index()] = CountCell::sampled(n1, n);
        }
    }
    out
}

/// Nonparametric binomial bootstrap of the full pipeline.
pub fn bootstrap_pipeline(counts: &CountTable, resamples: usize, seed: u64) -> Result<BootstrapSummary> {
    if resamples < 2 {
        return Err(Error::TooFewResamples(resamples));
    }
    let mut c = Vec::with_capacity(resamples);
    let mut eps = Vec::with_capacity(resamples);
    let mut s = Vec::with_capacity(resamples);
    let mut ds = Vec::with_capacity(resamples);
    let mut failed = 0;
    for replica in 0..resamples {
        let table = resample(counts, seed, replica);
        let outcome = run_pipeline(&table).and_then(|r| {
            let e = r.extracted;
            contextual_advantage(e.c, e.epsilon, e.s).map(|(ds_exp, _)| (e, ds_exp))
        });
        match outcome {
            Ok((e, ds_exp)) => {
                c.push(e.c);
                eps.push(e.epsilon);
                s.push(e.s);
                ds.push(ds_exp);
            }
            Err(_) => failed += 1,
        }
    }
    if failed as f64 > MAX_BOOTSTRAP_FAILURE_RATE * resamples as f64 || c.is_empty() {
        return Err(Error::BootstrapFailed {
            failed,
            total: resamples,
        });
    }
    Ok(BootstrapSummary {
        c: MeanStd::of(&c),
        epsilon: MeanStd::of(&eps),
        s: MeanStd::of(&s),
        ds_exp: MeanStd::of(&ds),
        resamples,
        failed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    Violates,
    NoViolation,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Violates => "VIOLATES",
            Verdict::NoViolation => "NO_VIOLATION",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointEstimate {
    pub theta: f64,
    pub alpha: f64,
    pub c: f64,
    pub epsilon: f64,
    pub s: f64,
    /// Non-contextual bound at the extracted `(c, ε)`.
    pub s_nc: f64,
    /// Quantum prediction at the nominal `(c, ε)` of the grid point.
    pub s_q: f64,
    pub ds_exp: f64,
    pub ds_theory: f64,
    pub ci: Option<BootstrapSummary>,
    pub violation_sigmas: f64,
    pub verdict: Verdict,
    pub mixture_weight: f64,
    pub equivalence_residual: f64,
    pub clamp_events: usize,
    pub constraint_warning: bool,
}

impl PointEstimate {
    pub fn point(&self) -> GridPoint {
        GridPoint::new(self.theta, self.alpha)
    }

    pub fn ds_std(&self) -> f64 {
        self.ci.map_or(0.0, |ci| ci.ds_exp.std)
    }
}

/// VIOLATES iff `ds_exp > k·std(ds_exp)`; a missing bootstrap counts as zero spread.
pub fn violation_verdict(pe: &PointEstimate, k_sigma: f64) -> Verdict {
    if pe.ds_exp > k_sigma * pe.ds_std() {
        Verdict::Violates
    } else {
        Verdict::NoViolation
    }
}

/// Runs the pipeline on one table and, when `resamples ≥ 2`, the bootstrap.
pub fn estimate_point(counts: &CountTable, resamples: usize, seed: u64, k_sigma: f64) -> Result<PointEstimate> {
    let result = run_pipeline(counts)?;
    let e = result.extracted;
    let (ds_exp, _) = contextual_advantage(e.c, e.epsilon, e.s)?;
    let theory = theory_params(counts.point)?;
    let s_q = quantum_bound_formula(theory.c, theory.epsilon);
    let ds_theory = s_q - noncontextual_bound_formula(theory.c, theory.epsilon);
    let ci = if resamples >= 2 {
        Some(bootstrap_pipeline(counts, resamples, seed)?)
    } else {
        None
    };
    let mut pe = PointEstimate {
        theta: counts.point.theta,
        alpha: counts.point.alpha,
        c: e.c,
        epsilon: e.epsilon,
        s: e.s,
        s_nc: noncontextual_bound_formula(e.c, e.epsilon),
        s_q,
        ds_exp,
        ds_theory,
        ci,
        violation_sigmas: 0.0,
        verdict: Verdict::NoViolation,
        mixture_weight: average_mixture_weight(&result.secondary),
        equivalence_residual: result.secondary.equivalence_residual,
        clamp_events: e.clamp_events + result.calibration_clamps,
        constraint_warning: e.constraint_warning,
    };
    let std = pe.ds_std();
    pe.violation_sigmas = if std > 0.0 {
        ds_exp / std
    } else if ds_exp > 0.0 {
        f64::INFINITY
    } else {
        0.0
    };
    pe.verdict = violation_verdict(&pe, k_sigma);
    Ok(pe)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fidelity {
    pub f: f64,
    pub excluded: Vec<GridPoint>,
}

/// `1 − mean |Δs_exp − Δs_theory| / Δs_theory` over points with a nonzero
/// theoretical advantage.
pub fn grid_fidelity(points: &[PointEstimate]) -> Result<Fidelity> {
    if points.is_empty() {
        return Err(Error::Empty("fidelity needs at least one point"));
    }
    let (kept, excluded): (Vec<&PointEstimate>, Vec<&PointEstimate>) =
        points.iter().partition(|p| p.ds_theory > FIDELITY_EXCLUSION);
    if kept.is_empty() {
        return Err(Error::AllExcluded);
    }
    let mean_rel = kept
        .iter()
        .map(|p| (p.ds_exp - p.ds_theory).abs() / p.ds_theory)
        .sum::<f64>()
        / kept.len() as f64;
    Ok(Fidelity {
        f: 1.0 - mean_rel,
        excluded: excluded.iter().map(|p| p.point()).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointFailure {
    pub point: GridPoint,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub points: Vec<PointEstimate>,
    pub fidelity: Option<Fidelity>,
    pub mean_mixture_weight: f64,
    pub max_equivalence_residual: f64,
    pub clamp_events: usize,
    pub failures: Vec<PointFailure>,
}

impl GridReport {
    pub fn failure_rate(&self) -> f64 {
        let total = self.points.len() + self.failures.len();
        if total == 0 {
            0.0
        } else {
            self.failures.len() as f64 / total as f64
        }
    }
}

/// Analyzes every table. Points are processed independently (in parallel)
/// and collected in input order; failing points are reported, not dropped.
pub fn analyze_grid(tables: &[CountTable], resamples: usize, seed: u64, k_sigma: f64) -> GridReport {
    let outcomes: Vec<Result<PointEstimate>> = tables
        .par_iter()
        .map(|t| estimate_point(t, resamples, seed, k_sigma))
        .collect();
    let mut points = Vec::new();
    let mut failures = Vec::new();
    for (t, outcome) in tables.iter().zip(outcomes) {
        match outcome {
            Ok(pe) => points.push(pe),
            Err(e) => failures.push(PointFailure {
                point: t.point,
                error: e.to_string(),
            }),
        }
    }
    let fidelity = if points.is_empty() {
        None
    } else {
        grid_fidelity(&points).ok()
    };
    let n = points.len().max(1) as f64;
    GridReport {
        mean_mixture_weight: points.iter().map(|p| p.mixture_weight).sum::<f64>() / n,
        max_equivalence_residual: points.iter().map(|p| p.equivalence_residual).fold(0.0, f64::max),
        clamp_events: points.iter().map(|p| p.clamp_events).sum(),
        fidelity,
        points,
        failures,
    }
}
