//! On-disk formats. Every file starts with one `# {json}` line holding the
//! format version and the resolved run configuration.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use super::config::{RunConfig, FORMAT_VERSION};
use crate::analysis::{GridReport, PointEstimate};
use crate::qubit::{
    noncontextual_bound_formula, quantum_bound_formula, theory_params, GridPoint, Measurement,
    Preparation,
};
use crate::sim::{CountCell, CountTable};

pub const GRID_COLUMNS: [&str; 8] = ["theta", "alpha", "c", "eps", "s", "s_nc", "s_q", "ds_theory"];
pub const COUNT_COLUMNS: [&str; 8] = [
    "point",
    "theta",
    "alpha",
    "measurement",
    "preparation",
    "n_outcome1",
    "n_total",
    "p_exact",
];
pub const POINT_COLUMNS: [&str; 14] = [
    "theta", "alpha", "c", "eps", "s", "s_nc", "s_q", "ds_exp", "ds_theory", "std_c", "std_eps",
    "std_s", "std_ds", "verdict",
];
pub const HEATMAP_COLUMNS: [&str; 5] = ["theta", "alpha", "c", "eps", "ds"];
pub const SLICE_COLUMNS: [&str; 7] = ["source", "theta", "c", "eps", "s", "s_nc", "s_theory"];
pub const SWEEP_COLUMNS: [&str; 7] = ["p", "c", "eps", "s", "s_nc", "ds_exp", "std_ds"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Header {
    pub format_version: u32,
    pub config: RunConfig,
}

impl Header {
    pub fn new(config: &RunConfig) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            config: config.clone(),
        }
    }

    fn line(&self) -> String {
        format!("# {}\n", serde_json::to_string(self).expect("config serializes"))
    }

    fn parse(text: &str) -> anyhow::Result<Self> {
        let line = text.lines().next().unwrap_or_default();
        let json = line
            .strip_prefix("# ")
            .context("missing '# {...}' metadata line")?;
        let header: Header = serde_json::from_str(json).context("metadata line")?;
        if header.format_version != FORMAT_VERSION {
            bail!(
                "format version {} is not supported (expected {FORMAT_VERSION})",
                header.format_version
            );
        }
        Ok(header)
    }
}

/// Output files staged in memory; nothing touches the disk until `commit`.
#[derive(Debug, Default)]
pub struct Staged {
    files: Vec<(PathBuf, Vec<u8>)>,
}

impl Staged {
    pub fn add(&mut self, path: PathBuf, bytes: Vec<u8>) {
        self.files.push((path, bytes));
    }

    pub fn paths(&self) -> impl Iterator<Item = &Path> {
        self.files.iter().map(|(p, _)| p.as_path())
    }

    pub fn commit(self) -> anyhow::Result<Vec<PathBuf>> {
        let mut written = Vec::with_capacity(self.files.len());
        for (path, bytes) in self.files {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)
                    .with_context(|| format!("creating directory {}", dir.display()))?;
            }
            std::fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
            written.push(path);
        }
        Ok(written)
    }
}

fn num(v: f64) -> String {
    format!("{v}")
}

fn csv_bytes(header: &Header, columns: &[&str], rows: &[Vec<String>]) -> Vec<u8> {
    let mut out = header.line().into_bytes();
    let mut w = csv::Writer::from_writer(&mut out);
    w.write_record(columns).expect("in-memory write");
    for row in rows {
        w.write_record(row).expect("in-memory write");
    }
    w.flush().expect("in-memory write");
    drop(w);
    out
}

fn theory_row(point: GridPoint) -> anyhow::Result<Vec<String>> {
    let t = theory_params(point)?;
    let s_nc = noncontextual_bound_formula(t.c, t.epsilon);
    let s_q = quantum_bound_formula(t.c, t.epsilon);
    Ok(vec![
        num(point.theta),
        num(point.alpha),
        num(t.c),
        num(t.epsilon),
        num(t.s),
        num(s_nc),
        num(s_q),
        num(s_q - s_nc),
    ])
}

pub fn grid_csv(header: &Header, points: &[GridPoint]) -> anyhow::Result<Vec<u8>> {
    let rows = points
        .iter()
        .map(|&p| theory_row(p).with_context(|| format!("grid point {p}")))
        .collect::<anyhow::Result<Vec<_>>>()?;
    Ok(csv_bytes(header, &GRID_COLUMNS, &rows))
}

pub fn counts_csv(header: &Header, tables: &[CountTable]) -> Vec<u8> {
    let mut rows = Vec::with_capacity(tables.len() * 24);
    for (i, t) in tables.iter().enumerate() {
        for m in Measurement::ALL {
            for p in Preparation::ALL {
                let cell = t.cell(m, p);
                rows.push(vec![
                    i.to_string(),
                    num(t.point.theta),
                    num(t.point.alpha),
                    m.name().to_string(),
                    p.name().to_string(),
                    cell.n_outcome1.to_string(),
                    cell.n_total.to_string(),
                    num(cell.p_exact),
                ]);
            }
        }
    }
    csv_bytes(header, &COUNT_COLUMNS, &rows)
}

type PartialCells = [[Option<CountCell>; 6]; 4];

#[derive(Debug, Deserialize)]
struct CountRecord {
    point: usize,
    theta: f64,
    alpha: f64,
    measurement: String,
    preparation: String,
    n_outcome1: u64,
    n_total: u64,
    p_exact: f64,
}

/// Reads a counts file back into tables; the noise settings come from the
/// metadata line.
pub fn read_counts(path: &Path) -> anyhow::Result<(Header, Vec<CountTable>)> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading counts {}", path.display()))?;
    let header = Header::parse(&text).with_context(|| format!("counts {}", path.display()))?;
    let noise = header.config.noise;
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let columns = reader.headers()?.clone();
    if columns.iter().ne(COUNT_COLUMNS.iter().copied()) {
        bail!("{}: unexpected columns {:?}", path.display(), columns);
    }

    let mut tables: BTreeMap<usize, (GridPoint, PartialCells)> = BTreeMap::new();
    for (line, record) in reader.deserialize::<CountRecord>().enumerate() {
        let r = record.with_context(|| format!("{}: record {}", path.display(), line + 1))?;
        let m = Measurement::from_name(&r.measurement)
            .with_context(|| format!("unknown measurement {:?}", r.measurement))?;
        let p = Preparation::from_name(&r.preparation)
            .with_context(|| format!("unknown preparation {:?}", r.preparation))?;
        if r.n_outcome1 > r.n_total {
            bail!("record {}: n_outcome1 > n_total", line + 1);
        }
        let point = GridPoint::checked(r.theta, r.alpha)?;
        let entry = tables.entry(r.point).or_insert((point, [[None; 6]; 4]));
        if entry.0 != point {
            bail!("record {}: point {} changes its angles", line + 1, r.point);
        }
        let slot = &mut entry.1[m.index()][p.index()];
        if slot.is_some() {
            bail!("record {}: duplicate cell ({}, {})", line + 1, m.name(), p.name());
        }
        *slot = Some(CountCell {
            n_outcome1: r.n_outcome1,
            n_total: r.n_total,
            p_exact: r.p_exact,
        });
    }
    if tables.is_empty() {
        bail!("{}: no count records", path.display());
    }

    let mut out = Vec::with_capacity(tables.len());
    for (expected, (index, (point, cells))) in tables.into_iter().enumerate() {
        if index != expected {
            bail!("point indices must run 0, 1, 2, ...; missing {expected}");
        }
        let mut full = [[CountCell::exact(0.0); 6]; 4];
        for m in Measurement::ALL {
            for p in Preparation::ALL {
                full[m.index()][p.index()] = cells[m.index()][p.index()].ok_or(
                    crate::Error::MissingCell {
                        measurement: m.name().to_string(),
                        preparation: p.name().to_string(),
                    },
                )?;
            }
        }
        out.push(CountTable {
            point,
            noise,
            cells: full,
        });
    }
    Ok((header, out))
}

fn std_or_blank(pe: &PointEstimate, pick: impl Fn(&crate::analysis::BootstrapSummary) -> f64) -> String {
    pe.ci.as_ref().map(|ci| num(pick(ci))).unwrap_or_default()
}

pub fn points_csv(header: &Header, report: &GridReport) -> Vec<u8> {
    let rows: Vec<Vec<String>> = report
        .points
        .iter()
        .map(|pe| {
            vec![
                num(pe.theta),
                num(pe.alpha),
                num(pe.c),
                num(pe.epsilon),
                num(pe.s),
                num(pe.s_nc),
                num(pe.s_q),
                num(pe.ds_exp),
                num(pe.ds_theory),
                std_or_blank(pe, |ci| ci.c.std),
                std_or_blank(pe, |ci| ci.epsilon.std),
                std_or_blank(pe, |ci| ci.s.std),
                std_or_blank(pe, |ci| ci.ds_exp.std),
                pe.verdict.as_str().to_string(),
            ]
        })
        .collect();
    csv_bytes(header, &POINT_COLUMNS, &rows)
}

/// Long-format heatmap: one row per point at its nominal `(c, ε)`.
pub fn heatmap_csv(header: &Header, report: &GridReport, value: impl Fn(&PointEstimate) -> f64) -> Vec<u8> {
    let rows: Vec<Vec<String>> = report
        .points
        .iter()
        .map(|pe| {
            let t = theory_params(pe.point()).expect("analysed points are valid");
            vec![
                num(pe.theta),
                num(pe.alpha),
                num(t.c),
                num(t.epsilon),
                num(value(pe)),
            ]
        })
        .collect();
    csv_bytes(header, &HEATMAP_COLUMNS, &rows)
}

const SLICE_CURVE_STEPS: usize = 100;
const SLICE_ALPHA_MATCH: f64 = 1e-9;

/// s versus c at fixed α: the analysed points with that α, then the
/// quantum and non-contextual curves on a fine θ grid.
pub fn slice_csv(header: &Header, report: &GridReport, alpha: f64) -> Vec<u8> {
    let mut rows = Vec::new();
    for pe in report
        .points
        .iter()
        .filter(|pe| (pe.alpha - alpha).abs() < SLICE_ALPHA_MATCH)
    {
        rows.push(vec![
            "exp".to_string(),
            num(pe.theta),
            num(pe.c),
            num(pe.epsilon),
            num(pe.s),
            num(pe.s_nc),
            num(pe.s_q),
        ]);
    }
    let lo = alpha;
    let hi = std::f64::consts::FRAC_PI_2;
    for k in 0..=SLICE_CURVE_STEPS {
        let theta = lo + (hi - lo) * k as f64 / SLICE_CURVE_STEPS as f64;
        let point = GridPoint::new(theta, alpha);
        let Ok(t) = theory_params(point) else { continue };
        rows.push(vec![
            "theory".to_string(),
            num(theta),
            num(t.c),
            num(t.epsilon),
            num(t.s),
            num(noncontextual_bound_formula(t.c, t.epsilon)),
            num(quantum_bound_formula(t.c, t.epsilon)),
        ]);
    }
    csv_bytes(header, &SLICE_COLUMNS, &rows)
}

pub fn slice_file_name(alpha: f64) -> String {
    format!("slice_alpha_{alpha}.csv")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureEntry {
    pub theta: f64,
    pub alpha: f64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub format_version: u32,
    pub config: RunConfig,
    pub points: usize,
    pub fidelity: Option<f64>,
    pub excluded_points: Vec<[f64; 2]>,
    pub mean_mixture_weight: f64,
    pub max_equivalence_residual: f64,
    pub clamp_events: usize,
    pub violating_points: usize,
    pub failed_points: Vec<FailureEntry>,
}

pub fn summary_json(header: &Header, report: &GridReport) -> Vec<u8> {
    let summary = Summary {
        format_version: header.format_version,
        config: header.config.clone(),
        points: report.points.len(),
        fidelity: report.fidelity.as_ref().map(|f| f.f),
        excluded_points: report
            .fidelity
            .as_ref()
            .map(|f| f.excluded.iter().map(|p| [p.theta, p.alpha]).collect())
            .unwrap_or_default(),
        mean_mixture_weight: report.mean_mixture_weight,
        max_equivalence_residual: report.max_equivalence_residual,
        clamp_events: report.clamp_events,
        violating_points: report
            .points
            .iter()
            .filter(|p| p.verdict == crate::analysis::Verdict::Violates)
            .count(),
        failed_points: report
            .failures
            .iter()
            .map(|f| FailureEntry {
                theta: f.point.theta,
                alpha: f.point.alpha,
                error: f.error.clone(),
            })
            .collect(),
    };
    let mut bytes = serde_json::to_vec_pretty(&summary).expect("summary serializes");
    bytes.push(b'\n');
    bytes
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub p: f64,
    pub estimate: PointEstimate,
}

pub fn sweep_csv(header: &Header, rows: &[SweepRow]) -> Vec<u8> {
    let rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let pe = &r.estimate;
            vec![
                num(r.p),
                num(pe.c),
                num(pe.epsilon),
                num(pe.s),
                num(pe.s_nc),
                num(pe.ds_exp),
                std_or_blank(pe, |ci| ci.ds_exp.std),
            ]
        })
        .collect();
    csv_bytes(header, &SWEEP_COLUMNS, &rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub format_version: u32,
    pub config: RunConfig,
    pub theta: f64,
    pub alpha: f64,
    pub monotone_nonincreasing: bool,
    /// Linear interpolation of the first sign change of ds_exp, if any.
    pub p_star: Option<f64>,
}

pub fn sweep_json(header: &Header, summary_of: &SweepSummary) -> Vec<u8> {
    debug_assert_eq!(summary_of.format_version, header.format_version);
    let mut bytes = serde_json::to_vec_pretty(summary_of).expect("sweep summary serializes");
    bytes.push(b'\n');
    bytes
}
