//! Run configuration: strict JSON, every field optional.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use crate::analysis::DEFAULT_K_SIGMA;
use crate::qubit::{default_grid, GridPoint};
use crate::sim::NoiseConfig;

pub const FORMAT_VERSION: u32 = 1;

/// α values of the four s-versus-c curves.
pub const DEFAULT_SLICES: [f64; 4] = [0.0, 0.3, 0.785, 1.2];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GridSpec {
    Named(GridName),
    Points(Vec<[f64; 2]>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridName {
    Default,
}

impl GridSpec {
    pub fn points(&self) -> Vec<GridPoint> {
        match self {
            GridSpec::Named(GridName::Default) => default_grid(),
            GridSpec::Points(list) => list.iter().map(|&[t, a]| GridPoint::new(t, a)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    /// `[θ, α]` of the swept point.
    pub point: [f64; 2],
    pub p: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            point: [1.0, 0.4],
            p: (0..=10).map(|k| k as f64 * 0.05).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub grid: GridSpec,
    pub noise: NoiseConfig,
    /// Bootstrap resamples per point; 0 or 1 disables the bootstrap.
    pub bootstrap: usize,
    pub k_sigma: f64,
    pub output_dir: PathBuf,
    pub slices: Vec<f64>,
    pub sweep: SweepConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            grid: GridSpec::Named(GridName::Default),
            noise: NoiseConfig::default(),
            bootstrap: 100,
            k_sigma: DEFAULT_K_SIGMA,
            output_dir: PathBuf::from("out"),
            slices: DEFAULT_SLICES.to_vec(),
            sweep: SweepConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Self::from_json(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn from_json(text: &str) -> anyhow::Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Checks everything that can be checked before any computation starts.
    pub fn validate(&self) -> anyhow::Result<()> {
        self.noise.validate()?;
        let points = self.grid.points();
        if points.is_empty() {
            bail!("grid has no points");
        }
        for p in &points {
            p.validate().with_context(|| format!("grid point {p}"))?;
        }
        if !(self.k_sigma >= 0.0 && self.k_sigma.is_finite()) {
            bail!("k_sigma = {} must be a finite non-negative number", self.k_sigma);
        }
        for &alpha in &self.slices {
            if !(0.0..=std::f64::consts::FRAC_PI_2).contains(&alpha) {
                bail!("slice alpha = {alpha} is outside [0, pi/2]");
            }
        }
        let [theta, alpha] = self.sweep.point;
        GridPoint::checked(theta, alpha).context("sweep point")?;
        if self.sweep.p.is_empty() {
            bail!("sweep needs at least one depolarizing probability");
        }
        for &p in &self.sweep.p {
            if !(0.0..=1.0).contains(&p) {
                bail!("sweep p = {p} is not a probability");
            }
        }
        Ok(())
    }
}

/// Parses `"θ,α;θ,α"`.
pub fn parse_points(text: &str) -> anyhow::Result<Vec<[f64; 2]>> {
    text.split(';')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|pair| {
            let mut it = pair.split(',').map(str::trim);
            match (it.next(), it.next(), it.next()) {
                (Some(t), Some(a), None) => Ok([
                    t.parse().with_context(|| format!("theta in {pair:?}"))?,
                    a.parse().with_context(|| format!("alpha in {pair:?}"))?,
                ]),
                _ => bail!("expected \"theta,alpha\", got {pair:?}"),
            }
        })
        .collect()
}
