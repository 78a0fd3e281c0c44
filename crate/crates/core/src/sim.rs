//! Synthetic prepare-and-measure data: gate jitter, depolarizing noise,
//! detection errors and finite-shot sampling.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qubit::{
    born_probability, effect_from_pulse, state_from_pulse, BlochVector, GridPoint, Measurement,
    Preparation,
};

/// Error of reading "bright" for a dark ion.
pub const DEFAULT_E_BRIGHT_GIVEN_DARK: f64 = 0.0171;
/// Error of reading "dark" for a bright ion.
pub const DEFAULT_E_DARK_GIVEN_BRIGHT: f64 = 0.0208;
pub const DEFAULT_SHOTS: u64 = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    /// Shots per cell; 0 selects exact (infinite-shot) probabilities.
    pub shots: u64,
    pub e_bright_given_dark: f64,
    pub e_dark_given_bright: f64,
    /// Relative Gaussian jitter on every pulse angle.
    pub rotation_angle_sigma: f64,
    pub depolarizing_p: f64,
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            shots: DEFAULT_SHOTS,
            e_bright_given_dark: DEFAULT_E_BRIGHT_GIVEN_DARK,
            e_dark_given_bright: DEFAULT_E_DARK_GIVEN_BRIGHT,
            rotation_angle_sigma: 0.0,
            depolarizing_p: 0.0,
            seed: 0,
        }
    }
}

impl NoiseConfig {
    /// Infinite shots and no noise of any kind.
    pub fn noiseless() -> Self {
        Self {
            shots: 0,
            e_bright_given_dark: 0.0,
            e_dark_given_bright: 0.0,
            ..Self::default()
        }
    }

    pub fn detector(&self) -> Detector {
        Detector {
            e01: self.e_bright_given_dark,
            e10: self.e_dark_given_bright,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let prob = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::InvalidNoise(format!("{name} = {v} is not a probability")))
            }
        };
        prob("e_bright_given_dark", self.e_bright_given_dark)?;
        prob("e_dark_given_bright", self.e_dark_given_bright)?;
        prob("depolarizing_p", self.depolarizing_p)?;
        if self.e_bright_given_dark + self.e_dark_given_bright >= 1.0 {
            return Err(Error::InvalidNoise(
                "detection errors must sum to less than 1".to_string(),
            ));
        }
        if !(self.rotation_angle_sigma >= 0.0 && self.rotation_angle_sigma.is_finite()) {
            return Err(Error::InvalidNoise(format!(
                "rotation_angle_sigma = {} must be a finite non-negative number",
                self.rotation_angle_sigma
            )));
        }
        Ok(())
    }
}

/// Readout confusion: `e01` = P(read 1 | true 0), `e10` = P(read 0 | true 1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detector {
    pub e01: f64,
    pub e10: f64,
}

impl Detector {
    pub const PERFECT: Detector = Detector { e01: 0.0, e10: 0.0 };

    pub fn gain(&self) -> f64 {
        1.0 - self.e01 - self.e10
    }
}

/// Contracts the Bloch vector by `1 − p`.
pub fn apply_depolarizing(state: &BlochVector, p: f64) -> BlochVector {
    state.scale(1.0 - p)
}

/// `β·(1 + g)` with `g ~ N(0, σ)`. Draws nothing when σ = 0.
pub fn apply_rotation_noise<R: Rng + ?Sized>(beta: f64, sigma: f64, rng: &mut R) -> f64 {
    if sigma == 0.0 {
        return beta;
    }
    let g: f64 = Normal::new(0.0, sigma)
        .expect("sigma is finite and non-negative")
        .sample(rng);
    beta * (1.0 + g)
}

pub fn confuse_probability(p_true: f64, e01: f64, e10: f64) -> f64 {
    p_true * (1.0 - e10) + (1.0 - p_true) * e01
}

/// Linear inversion of the readout confusion, clamped to `[0, 1]`.
pub fn calibrate_detection(p_obs: f64, e01: f64, e10: f64) -> f64 {
    calibrate_unclamped(p_obs, e01, e10).clamp(0.0, 1.0)
}

pub(crate) fn calibrate_unclamped(p_obs: f64, e01: f64, e10: f64) -> f64 {
    (p_obs - e01) / (1.0 - e01 - e10)
}

pub fn sample_counts<R: Rng + ?Sized>(p_obs: f64, shots: u64, rng: &mut R) -> (u64, u64) {
    let p = p_obs.clamp(0.0, 1.0);
    let n1 = Binomial::new(shots, p)
        .expect("p clamped to [0, 1]")
        .sample(rng);
    (n1, shots)
}

/// One (measurement, preparation) cell. `n_total == 0` marks exact mode.
/// `p_exact` is the outcome-1 probability the counts were drawn from (the
/// data itself in exact mode); the analysis only reads it in exact mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CountCell {
    pub n_outcome1: u64,
    pub n_total: u64,
    pub p_exact: f64,
}

impl CountCell {
    pub fn sampled(n_outcome1: u64, n_total: u64) -> Self {
        Self {
            n_outcome1,
            n_total,
            p_exact: 0.0,
        }
    }

    pub fn exact(p: f64) -> Self {
        Self {
            n_outcome1: 0,
            n_total: 0,
            p_exact: p,
        }
    }

    pub fn is_exact(&self) -> bool {
        self.n_total == 0
    }

    pub fn frequency(&self) -> f64 {
        if self.is_exact() {
            self.p_exact
        } else {
            self.n_outcome1 as f64 / self.n_total as f64
        }
    }
}

/// Raw counts for one grid point, indexed `[measurement][preparation]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountTable {
    pub point: GridPoint,
    pub noise: NoiseConfig,
    pub cells: [[CountCell; 6]; 4],
}

impl CountTable {
    pub fn cell(&self, m: Measurement, p: Preparation) -> &CountCell {
        &self.cells[m.index()][p.index()]
    }

    pub fn is_exact(&self) -> bool {
        self.cells.iter().flatten().all(CountCell::is_exact)
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Independent RNG stream for a tuple of indices under a master seed.
pub fn keyed_rng(seed: u64, key: &[u64]) -> ChaCha8Rng {
    let stream = key
        .iter()
        .fold(splitmix64(0x5EED), |acc, &k| splitmix64(acc ^ splitmix64(k)));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const DOMAIN_EXPERIMENT: u64 = 1;

/// Outcome-1 probability seen by the detector for one cell, before sampling.
pub fn observed_probability<R: Rng + ?Sized>(
    point: GridPoint,
    m: Measurement,
    p: Preparation,
    cfg: &NoiseConfig,
    rng: &mut R,
) -> f64 {
    let sigma = cfg.rotation_angle_sigma;
    let prep = p.pulse(point.theta);
    let prep = prep.with_beta(apply_rotation_noise(prep.beta, sigma, rng));
    let meas = m.pulse(point.theta, point.alpha);
    let meas = meas.with_beta(apply_rotation_noise(meas.beta, sigma, rng));

    let state = apply_depolarizing(&state_from_pulse(prep), cfg.depolarizing_p);
    let p_true = born_probability(&state, &effect_from_pulse(meas));
    confuse_probability(p_true, cfg.e_bright_given_dark, cfg.e_dark_given_bright)
}

fn simulate_point(index: usize, point: GridPoint, cfg: &NoiseConfig) -> CountTable {
    let mut cells = [[CountCell::exact(0.0); 6]; 4];
    for m in Measurement::ALL {
        for p in Preparation::ALL {
            let key = [DOMAIN_EXPERIMENT, index as u64, m.index() as u64, p.index() as u64];
            let mut rng = keyed_rng(cfg.seed, &key);
            let p_obs = observed_probability(point, m, p, cfg, &mut rng);
            cells[m.index()][p.index()] = if cfg.shots == 0 {
                CountCell::exact(p_obs)
            } else {
                let (n1, n) = sample_counts(p_obs, cfg.shots, &mut rng);
                CountCell {
                    p_exact: p_obs,
                    ..CountCell::sampled(n1, n)
                }
            };
        }
    }
    CountTable {
        point,
        noise: *cfg,
        cells,
    }
}

/// Runs the prepare-rotate-measure loop for every point. Each cell draws
/// from its own stream, so the output does not depend on scheduling.
pub fn run_experiment(points: &[GridPoint], cfg: &NoiseConfig) -> Result<Vec<CountTable>> {
    cfg.validate()?;
    for p in points {
        p.validate()?;
    }
    Ok(points
        .par_iter()
        .enumerate()
        .map(|(i, &point)| simulate_point(i, point, cfg))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qubit::{ideal_probability_table, theory_params};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    const E01: f64 = DEFAULT_E_BRIGHT_GIVEN_DARK;
    const E10: f64 = DEFAULT_E_DARK_GIVEN_BRIGHT;

    #[test]
    fn depolarizing_contracts() {
        let v = BlochVector::polar_xz(0.3);
        assert_eq!(apply_depolarizing(&v, 0.0), v);
        assert_eq!(apply_depolarizing(&v, 1.0), BlochVector::ORIGIN);
        let w = apply_depolarizing(&BlochVector::new(1.0, 0.0, 0.0), 0.2);
        assert_abs_diff_eq!(w.x, 0.8, epsilon = 1e-15);
    }

    #[test]
    fn rotation_noise_statistics() {
        let mut rng = keyed_rng(7, &[0]);
        assert_eq!(apply_rotation_noise(1.234, 0.0, &mut rng), 1.234);

        let n = 100_000;
        let beta = std::f64::consts::PI;
        let draws: Vec<f64> = (0..n).map(|_| apply_rotation_noise(beta, 0.01, &mut rng)).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let sd = beta * 0.01;
        assert!((mean - beta).abs() < 3.0 * sd / (n as f64).sqrt());
        assert!((var / (sd * sd) - 1.0).abs() < 0.1);
    }

    #[test]
    fn confusion_and_calibration_values() {
        assert_abs_diff_eq!(confuse_probability(1.0, E01, E10), 0.9792, epsilon = 1e-15);
        assert_abs_diff_eq!(confuse_probability(0.0, E01, E10), 0.0171, epsilon = 1e-15);
        assert_eq!(confuse_probability(0.37, 0.0, 0.0), 0.37);

        assert_abs_diff_eq!(calibrate_detection(0.9792, E01, E10), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(calibrate_detection(0.5, E01, E10), 0.5019228770398088, epsilon = 1e-12);
        assert_eq!(calibrate_detection(0.01, E01, E10), 0.0);
    }

    proptest! {
        #[test]
        fn calibration_inverts_confusion(p in 0.0f64..=1.0, e01 in 0.0f64..0.45, e10 in 0.0f64..0.45) {
            let back = calibrate_detection(confuse_probability(p, e01, e10), e01, e10);
            prop_assert!((back - p).abs() < 1e-12);
        }
    }

    #[test]
    fn sampling_extremes_and_concentration() {
        let mut rng = keyed_rng(3, &[1]);
        assert_eq!(sample_counts(0.0, 500, &mut rng), (0, 500));
        assert_eq!(sample_counts(1.0, 500, &mut rng), (500, 500));
        let (n1, n) = sample_counts(0.5, 1_000_000, &mut rng);
        assert!((n1 as f64 / n as f64 - 0.5).abs() < 0.0015);
    }

    #[test]
    fn noiseless_exact_run_reproduces_ideal_table() {
        let points = vec![GridPoint::new(0.6, 0.3), GridPoint::new(1.5, 0.0)];
        let tables = run_experiment(&points, &NoiseConfig::noiseless()).unwrap();
        for (t, &pt) in tables.iter().zip(&points) {
            assert!(t.is_exact());
            let ideal = ideal_probability_table(pt).unwrap();
            for m in Measurement::ALL {
                for p in Preparation::ALL {
                    assert_abs_diff_eq!(t.cell(m, p).frequency(), ideal.get(m, p), epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn detection_only_run_calibrates_back() {
        let cfg = NoiseConfig {
            shots: 0,
            ..NoiseConfig::default()
        };
        let point = GridPoint::new(1.0, 0.4);
        let t = &run_experiment(&[point], &cfg).unwrap()[0];
        let ideal = ideal_probability_table(point).unwrap();
        for m in Measurement::ALL {
            for p in Preparation::ALL {
                let cal = calibrate_detection(t.cell(m, p).frequency(), E01, E10);
                assert_abs_diff_eq!(cal, ideal.get(m, p), epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn default_noise_frequency_near_success_probability() {
        let point = GridPoint::new(1.5, 0.0);
        let cfg = NoiseConfig {
            seed: 11,
            ..NoiseConfig::default()
        };
        let t = &run_experiment(&[point], &cfg).unwrap()[0];
        let f = t.cell(Measurement::HelstromPhi, Preparation::Phi).frequency();
        let s = theory_params(point).unwrap().s;
        assert_abs_diff_eq!(s, 0.75f64.cos().powi(2), epsilon = 1e-12);
        assert!((f - s).abs() < 3.0 * (0.25f64 / 1000.0).sqrt(), "f = {f}, s = {s}");
        assert!(t.cells.iter().flatten().all(|c| c.n_total == 1000 && c.n_outcome1 <= 1000));
    }

    #[test]
    fn runs_are_deterministic_in_seed() {
        let points = crate::qubit::default_grid();
        let cfg = NoiseConfig {
            seed: 42,
            rotation_angle_sigma: 0.02,
            depolarizing_p: 0.01,
            ..NoiseConfig::default()
        };
        let a = run_experiment(&points, &cfg).unwrap();
        let b = run_experiment(&points, &cfg).unwrap();
        assert_eq!(a, b);
        let c = run_experiment(&points, &NoiseConfig { seed: 43, ..cfg }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bad = NoiseConfig {
            e_bright_given_dark: 0.6,
            e_dark_given_bright: 0.5,
            ..NoiseConfig::default()
        };
        assert!(run_experiment(&[GridPoint::new(0.5, 0.1)], &bad).is_err());
        let bad = NoiseConfig {
            depolarizing_p: 1.5,
            ..NoiseConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = NoiseConfig {
            rotation_angle_sigma: -0.1,
            ..NoiseConfig::default()
        };
        assert!(bad.validate().is_err());
        assert!(run_experiment(&[GridPoint::new(0.1, 0.2)], &NoiseConfig::default()).is_err());
    }
}
