//! Config-driven experiment runs: validation, a bounded worker pool, CSV
//! output with a completion marker, and reshaping into plot series.
//!
//! Raw rows are sorted by grid point then trial before writing, and every
//! random draw is keyed by `(master_seed, experiment, grid point, trial)`, so
//! output bytes do not depend on the worker count.

use crate::boundary::{entropy_scan_unchecked, EntropyAgg, EntropyRow, ScanSpec, GRAM_LIMIT};
use crate::ensembles::{EnsembleKind, EnsembleSpec, PepsSpec, TargetKind};
use crate::error::{Error, Result};
use crate::gauge::{gauge_experiment, GaugeMode, GaugeSpec};
use crate::network::{brute_force_value, relative_deviation, transfer_value, Geometry, LatticeNetwork, BRUTE_FORCE_LIMIT};
use crate::peps::{
    decompose_network, peps_entropy_experiment, positive_sum_estimate, rho_from_grouping, PepsEntropySpec, PepsNetwork,
    SiteDecomposition,
};
use crate::rng::{rng, trial_seed};
use crate::separable::DecomposeOutcome;
use crate::sign_mc::{cylinder_delta_f, CYLINDER_LIMIT, MIN_KEPT_SLICES};
use crate::statmech::{build_model, build_s4_model, phase_scan, predicted_s2, ModelKind, PhaseRow, StatmechRow, TRANSFER_LIMIT};
use crate::stats::{linear_fit, Summary};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

/// Last line of a finished raw CSV. Readers skip it as a comment.
pub const COMPLETE_MARKER: &str = "# complete";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Experiment {
    DeltaF,
    EntropyScan,
    Interpolation,
    Statmech,
    PhaseScan,
    PepsEntropy,
    PositiveSum,
    GaugeOpt,
    OracleSuite,
}

impl Experiment {
    /// Short name used for seeds and as the CLI subcommand.
    pub fn tag(&self) -> &'static str {
        match self {
            Experiment::DeltaF => "deltaf",
            Experiment::EntropyScan => "entropy",
            Experiment::Interpolation => "interp",
            Experiment::Statmech => "statmech",
            Experiment::PhaseScan => "phase",
            Experiment::PepsEntropy => "peps",
            Experiment::PositiveSum => "possum",
            Experiment::GaugeOpt => "gauge",
            Experiment::OracleSuite => "oracle",
        }
    }
}

/// One experiment run. Unset fields take per-experiment defaults in [`ExperimentConfig::resolved`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    /// Ensemble kind, or the spin model for `Statmech`/`PhaseScan`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
    #[serde(rename = "D", default, skip_serializing_if = "Vec::is_empty")]
    pub bond_dims: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub lambda: Vec<f64>,
    #[serde(rename = "lambdaD", default, skip_serializing_if = "Vec::is_empty")]
    pub lambda_d: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub mu: Vec<f64>,
    #[serde(rename = "W", default, skip_serializing_if = "Vec::is_empty")]
    pub widths: Vec<usize>,
    /// PEPS physical dimensions.
    #[serde(rename = "d", default, skip_serializing_if = "Vec::is_empty")]
    pub phys_dims: Vec<usize>,
    #[serde(rename = "K", default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chi: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trials: Option<usize>,
    #[serde(rename = "L", default, skip_serializing_if = "Option::is_none")]
    pub length: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub burn_in: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rows: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cols: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iters: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<f64>,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_path: Option<PathBuf>,
    /// Worker threads; unset uses all cores. Never changes results.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
}

fn bad<T>(field: &str, reason: impl Into<String>) -> Result<T> {
    Err(Error::Config {
        field: field.into(),
        reason: reason.into(),
    })
}

fn need<T: Copy>(v: Option<T>, field: &str) -> Result<T> {
    match v {
        Some(x) => Ok(x),
        None => bad(field, "missing"),
    }
}

fn nonempty<T>(v: &[T], field: &str) -> Result<()> {
    if v.is_empty() {
        bad(field, "grid must be nonempty")
    } else {
        Ok(())
    }
}

fn at_least(v: &[usize], min: usize, field: &str) -> Result<()> {
    nonempty(v, field)?;
    match v.iter().find(|&&x| x < min) {
        Some(x) => bad(field, format!("value {x} is below {min}")),
        None => Ok(()),
    }
}

fn nonnegative(v: &[f64], field: &str) -> Result<()> {
    nonempty(v, field)?;
    match v.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
        Some(x) => bad(field, format!("value {x} must be finite and >= 0")),
        None => Ok(()),
    }
}

fn fill<T: Clone>(v: &mut Vec<T>, default: &[T]) {
    if v.is_empty() {
        *v = default.to_vec();
    }
}

impl ExperimentConfig {
    pub fn new(experiment: Experiment) -> Self {
        ExperimentConfig {
            experiment,
            kind: None,
            target: None,
            bond_dims: vec![],
            lambda: vec![],
            lambda_d: vec![],
            mu: vec![],
            widths: vec![],
            phys_dims: vec![],
            samples: None,
            chi: None,
            trials: None,
            length: None,
            burn_in: None,
            rows: None,
            cols: None,
            mode: None,
            iters: None,
            step: None,
            master_seed: 0,
            output_path: None,
            workers: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Copy with every field the experiment reads filled in.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        let kind = |c: &mut Self, k: &str| {
            c.kind.get_or_insert_with(|| k.to_string());
        };
        match c.experiment {
            Experiment::DeltaF => {
                kind(&mut c, "HaarOrthogonal");
                fill(&mut c.bond_dims, &[3]);
                fill(&mut c.lambda, &[1e-3]);
                fill(&mut c.widths, &[4]);
                c.length.get_or_insert(400);
                c.burn_in.get_or_insert(20);
                c.trials.get_or_insert(20);
            }
            Experiment::EntropyScan | Experiment::Interpolation => {
                kind(&mut c, "HaarOrthogonal");
                let target = if c.experiment == Experiment::EntropyScan { "ones" } else { "rank1_signed" };
                c.target.get_or_insert_with(|| target.into());
                fill(&mut c.bond_dims, &[2]);
                fill(&mut c.lambda_d, &[0.25, 0.5, 1.0, 1.5, 2.0]);
                fill(&mut c.widths, &[2, 3, 4]);
                c.trials.get_or_insert(10);
            }
            Experiment::Statmech => {
                kind(&mut c, "orthogonal");
                fill(&mut c.bond_dims, &[2]);
                if c.kind.as_deref() == Some("s4") {
                    fill(&mut c.phys_dims, &[2]);
                } else {
                    fill(&mut c.lambda, &[0.5]);
                }
                fill(&mut c.widths, &[1, 2, 3, 4]);
            }
            Experiment::PhaseScan => {
                kind(&mut c, "orthogonal");
                fill(&mut c.bond_dims, &[2, 3, 4]);
                fill(&mut c.mu, &[0.0, 0.5, 1.0, 2.0]);
                fill(&mut c.widths, &[2, 3, 4]);
            }
            Experiment::PepsEntropy => {
                fill(&mut c.bond_dims, &[2]);
                fill(&mut c.phys_dims, &[2, 4]);
                fill(&mut c.widths, &[2, 3, 4]);
                c.trials.get_or_insert(10);
                c.chi.get_or_insert(64);
            }
            Experiment::PositiveSum => {
                fill(&mut c.bond_dims, &[2]);
                fill(&mut c.phys_dims, &[64]);
                c.rows.get_or_insert(4);
                c.cols.get_or_insert(4);
                c.samples.get_or_insert(10_000);
                c.trials.get_or_insert(1);
            }
            Experiment::GaugeOpt => {
                kind(&mut c, "HaarOrthogonal");
                fill(&mut c.bond_dims, &[2]);
                fill(&mut c.phys_dims, &[4]);
                fill(&mut c.lambda, &[0.5]);
                fill(&mut c.widths, &[3]);
                c.mode.get_or_insert_with(|| "positivity".into());
                c.iters.get_or_insert(crate::gauge::DEFAULT_ITERS);
                c.step.get_or_insert(crate::gauge::DEFAULT_STEP);
                c.trials.get_or_insert(20);
            }
            Experiment::OracleSuite => {
                fill(&mut c.bond_dims, &[2, 3]);
                fill(&mut c.lambda, &[0.0, 0.5, 2.0]);
                c.rows.get_or_insert(3);
                c.cols.get_or_insert(3);
                c.trials.get_or_insert(5);
            }
        }
        c
    }

    fn ensemble_kinds(&self) -> Result<Vec<EnsembleKind>> {
        match self.kind.as_deref() {
            None | Some("all") => Ok(EnsembleKind::ALL.to_vec()),
            Some(s) => match EnsembleKind::parse(s) {
                Some(k) => Ok(vec![k]),
                None => bad("kind", format!("unknown ensemble kind `{s}`")),
            },
        }
    }

    fn ensemble_kind(&self) -> Result<EnsembleKind> {
        match self.ensemble_kinds()?.as_slice() {
            [k] => Ok(*k),
            _ => bad("kind", "exactly one ensemble kind required"),
        }
    }

    fn model_kind(&self) -> Result<ModelKind> {
        let s = self.kind.as_deref().unwrap_or("orthogonal");
        ModelKind::parse(s).map_or_else(|| bad("kind", format!("unknown model `{s}`")), Ok)
    }

    fn target_kind(&self) -> Result<TargetKind> {
        let s = self.target.as_deref().unwrap_or("ones");
        TargetKind::parse(s).map_or_else(|| bad("target", format!("unknown target `{s}`")), Ok)
    }

    fn gauge_mode(&self) -> Result<GaugeMode> {
        let s = self.mode.as_deref().unwrap_or("positivity");
        GaugeMode::parse(s).map_or_else(|| bad("mode", format!("unknown gauge mode `{s}`")), Ok)
    }

    /// Checks the resolved config, including the size guards the run would hit.
    pub fn validate(&self) -> Result<()> {
        let c = self.resolved();
        if c.workers == Some(0) {
            return bad("workers", "must be >= 1");
        }
        if c.trials == Some(0) {
            return bad("trials", "must be >= 1");
        }
        match c.experiment {
            Experiment::DeltaF => {
                c.ensemble_kind()?;
                at_least(&c.bond_dims, 2, "D")?;
                nonnegative(&c.lambda, "lambda")?;
                at_least(&c.widths, 2, "W")?;
                for &d in &c.bond_dims {
                    for &w in &c.widths {
                        let n = (d as f64).powi(w as i32);
                        if n > CYLINDER_LIMIT {
                            return bad("W", format!("D^W = {d}^{w} = {n} exceeds {CYLINDER_LIMIT}"));
                        }
                    }
                }
                let (l, b) = (need(c.length, "L")?, need(c.burn_in, "burn_in")?);
                if b >= l || l - b < MIN_KEPT_SLICES {
                    return bad("L", format!("L - burn_in must be >= {MIN_KEPT_SLICES}"));
                }
            }
            Experiment::EntropyScan | Experiment::Interpolation => {
                c.ensemble_kind()?;
                c.target_kind()?;
                at_least(&c.bond_dims, 2, "D")?;
                nonnegative(&c.lambda_d, "lambdaD")?;
                at_least(&c.widths, 1, "W")?;
                if c.chi == Some(0) {
                    return bad("chi", "must be >= 1");
                }
            }
            Experiment::Statmech => {
                let kind = c.model_kind()?;
                at_least(&c.bond_dims, 2, "D")?;
                at_least(&c.widths, 1, "W")?;
                if kind == ModelKind::S4 {
                    at_least(&c.phys_dims, 1, "d")?;
                } else {
                    nonnegative(&c.lambda, "lambda")?;
                }
                c.statmech_guard(kind)?;
            }
            Experiment::PhaseScan => {
                let kind = c.model_kind()?;
                if kind == ModelKind::S4 {
                    return bad("kind", "the phase scan runs over mu, which the permutation model lacks");
                }
                at_least(&c.bond_dims, 2, "D")?;
                nonnegative(&c.mu, "mu")?;
                at_least(&c.widths, 1, "W")?;
                if c.widths.len() < 2 {
                    return bad("W", "a line tension needs at least two widths");
                }
                c.statmech_guard(kind)?;
            }
            Experiment::PepsEntropy => {
                at_least(&c.bond_dims, 1, "D")?;
                at_least(&c.phys_dims, 1, "d")?;
                at_least(&c.widths, 1, "W")?;
                if need(c.chi, "chi")? == 0 {
                    return bad("chi", "must be >= 1");
                }
            }
            Experiment::PositiveSum => {
                at_least(&c.bond_dims, 1, "D")?;
                at_least(&c.phys_dims, 1, "d")?;
                for (v, f) in [(c.rows, "rows"), (c.cols, "cols")] {
                    let v = need(v, f)?;
                    if v == 0 || !v.is_multiple_of(2) {
                        return bad(f, "plaquette tiling needs a positive even size");
                    }
                }
                if need(c.samples, "K")? < 2 {
                    return bad("K", "must be >= 2");
                }
            }
            Experiment::GaugeOpt => {
                c.ensemble_kind()?;
                c.gauge_mode()?;
                at_least(&c.bond_dims, 1, "D")?;
                at_least(&c.phys_dims, 1, "d")?;
                nonnegative(&c.lambda, "lambda")?;
                at_least(&c.widths, 1, "W")?;
                for &d in &c.bond_dims {
                    for &w in &c.widths {
                        let n = (d as f64).powi(2 * w as i32);
                        if n > GRAM_LIMIT as f64 {
                            return bad("W", format!("cut dimension D^(2W) = {n} exceeds {GRAM_LIMIT}"));
                        }
                    }
                }
                if need(c.iters, "iters")? == 0 {
                    return bad("iters", "must be >= 1");
                }
                let step = need(c.step, "step")?;
                if !(step.is_finite() && step > 0.0) {
                    return bad("step", "must be positive");
                }
            }
            Experiment::OracleSuite => {
                c.ensemble_kinds()?;
                at_least(&c.bond_dims, 2, "D")?;
                nonnegative(&c.lambda, "lambda")?;
                let (r, k) = (need(c.rows, "rows")?, need(c.cols, "cols")?);
                if r < 2 || k < 2 {
                    return bad("rows", "the oracle lattice needs at least 2x2 sites");
                }
                let edges = r * (k - 1) + k * (r - 1);
                for &d in &c.bond_dims {
                    if (d as f64).powi(edges as i32) > BRUTE_FORCE_LIMIT {
                        return bad("D", format!("D^#edges = {d}^{edges} exceeds {BRUTE_FORCE_LIMIT}"));
                    }
                }
            }
        }
        Ok(())
    }

    fn statmech_guard(&self, kind: ModelKind) -> Result<()> {
        let wmax = *self.widths.iter().max().expect("checked nonempty");
        for &d in &self.bond_dims {
            let q = if kind == ModelKind::S4 {
                build_s4_model(d, self.phys_dims[0])?.q
            } else {
                build_model(kind, d, 0.5)?.q
            };
            let n = (q as f64).powi(wmax as i32);
            if n > TRANSFER_LIMIT as f64 {
                return bad("W", format!("q^W = {q}^{wmax} exceeds {TRANSFER_LIMIT}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaFRow {
    pub kind: String,
    #[serde(rename = "D")]
    pub d: usize,
    pub lambda: f64,
    #[serde(rename = "W")]
    pub w: usize,
    #[serde(rename = "L")]
    pub l: usize,
    pub burn_in: usize,
    pub delta_f: f64,
    pub delta_f_stderr: f64,
    pub seed: u64,
}

/// Mean, spread and standard error of one quantity over the trials of a grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggRow {
    pub key: String,
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    pub stderr: f64,
}

impl AggRow {
    fn of(key: String, xs: &[f64]) -> Self {
        let s = Summary::of(xs);
        AggRow {
            key,
            n: s.n,
            mean: s.mean,
            std: s.std,
            stderr: s.stderr,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PossumRow {
    #[serde(rename = "D")]
    pub d: usize,
    #[serde(rename = "phys_d")]
    pub phys: usize,
    pub rows: usize,
    pub cols: usize,
    pub trial: usize,
    #[serde(rename = "K")]
    pub samples: usize,
    pub decomposed: usize,
    pub estimate: f64,
    pub stderr: f64,
    pub exact: f64,
    pub min_plaquette: f64,
    pub average_sign: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionLogRow {
    #[serde(rename = "D")]
    pub d: usize,
    #[serde(rename = "phys_d")]
    pub phys: usize,
    pub sample: usize,
    pub success: bool,
    pub recon_error: f64,
    pub min_eigenvalue: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleRow {
    pub kind: String,
    #[serde(rename = "D")]
    pub d: usize,
    pub lambda: f64,
    pub trial: usize,
    pub brute_log_magnitude: f64,
    pub transfer_log_magnitude: f64,
    pub rel_deviation: f64,
    pub seed: u64,
}

/// Files written by one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub raw: PathBuf,
    pub agg: PathBuf,
    /// Per-iteration or per-tensor logs (`.log.csv`), when the experiment has one.
    pub log: Option<PathBuf>,
    pub rows: usize,
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let s = path.to_string_lossy();
    let stem = s.strip_suffix(".csv").unwrap_or(&s);
    PathBuf::from(format!("{stem}{suffix}"))
}

/// Raw rows followed by the completion marker; a crash mid-write leaves a prefix without it.
fn write_raw<S: Serialize>(path: &Path, rows: &[S]) -> Result<()> {
    let mut w = csv::Writer::from_writer(File::create(path)?);
    for r in rows {
        w.serialize(r)?;
        w.flush()?;
    }
    let mut f = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    writeln!(f, "{COMPLETE_MARKER}")?;
    f.sync_all()?;
    Ok(())
}

fn write_plain<S: Serialize>(path: &Path, rows: &[S]) -> Result<()> {
    let mut w = csv::Writer::from_writer(File::create(path)?);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Whether a raw CSV ends with the completion marker.
pub fn is_complete(path: &Path) -> Result<bool> {
    let text = std::fs::read_to_string(path)?;
    Ok(text.lines().last() == Some(COMPLETE_MARKER))
}

/// Validates, runs on a pool of `workers` threads and writes the raw, aggregate and log CSVs.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunOutput> {
    config.validate()?;
    let c = config.resolved();
    let raw = match &c.output_path {
        Some(p) => p.clone(),
        None => return bad("output_path", "missing"),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(c.workers.unwrap_or(0))
        .build()
        .map_err(|e| Error::Argument(e.to_string()))?;
    pool.install(|| run_in_pool(&c, raw))
}

fn run_in_pool(c: &ExperimentConfig, raw: PathBuf) -> Result<RunOutput> {
    let agg = sibling(&raw, ".agg.csv");
    let log_path = sibling(&raw, ".log.csv");
    let trials = c.trials.unwrap_or(1);
    let tag = c.experiment.tag();
    let mut log = None;
    let rows = match c.experiment {
        Experiment::DeltaF => {
            let kind = c.ensemble_kind()?;
            let (l, burn_in) = (c.length.unwrap_or(400), c.burn_in.unwrap_or(20));
            let mut grid = Vec::new();
            for &d in &c.bond_dims {
                for &lam in &c.lambda {
                    for &w in &c.widths {
                        grid.push((d, lam, w));
                    }
                }
            }
            let rows: Vec<DeltaFRow> = (0..grid.len() * trials)
                .into_par_iter()
                .map(|job| {
                    let (gi, trial) = (job / trials, job % trials);
                    let (d, lam, w) = grid[gi];
                    let seed = trial_seed(c.master_seed, tag, gi, trial);
                    let spec = EnsembleSpec::new(kind, d, lam).with_seed(seed);
                    let rec = cylinder_delta_f(&spec, w, l, burn_in, &mut rng(seed))?;
                    Ok(DeltaFRow {
                        kind: kind.name().into(),
                        d,
                        lambda: lam,
                        w,
                        l,
                        burn_in,
                        delta_f: rec.delta_f,
                        delta_f_stderr: rec.delta_f_stderr,
                        seed,
                    })
                })
                .collect::<Result<_>>()?;
            write_raw(&raw, &rows)?;
            let aggs: Vec<AggRow> = grid
                .iter()
                .enumerate()
                .map(|(gi, &(d, lam, w))| {
                    let xs: Vec<f64> = rows[gi * trials..(gi + 1) * trials].iter().map(|r| r.delta_f).collect();
                    AggRow::of(format!("D={d};lambda={lam};W={w}"), &xs)
                })
                .collect();
            write_plain(&agg, &aggs)?;
            rows.len()
        }
        Experiment::EntropyScan | Experiment::Interpolation => {
            let spec = ScanSpec {
                kind: c.ensemble_kind()?,
                target: c.target_kind()?,
                d_list: c.bond_dims.clone(),
                lambda_d: c.lambda_d.clone(),
                w_list: c.widths.clone(),
                trials,
                chi: c.chi,
                master_seed: c.master_seed,
                experiment: tag.into(),
            };
            let (rows, aggs): (Vec<EntropyRow>, Vec<EntropyAgg>) = entropy_scan_unchecked(&spec)?;
            write_raw(&raw, &rows)?;
            write_plain(&agg, &aggs)?;
            rows.len()
        }
        Experiment::Statmech => {
            let kind = c.model_kind()?;
            let mut points = Vec::new();
            for &d in &c.bond_dims {
                if kind == ModelKind::S4 {
                    points.extend(c.phys_dims.iter().map(|&p| (d, p as f64)));
                } else {
                    points.extend(c.lambda.iter().map(|&l| (d, l)));
                }
            }
            let per_point: Vec<Vec<StatmechRow>> = points
                .par_iter()
                .map(|&(d, x)| {
                    let model = if kind == ModelKind::S4 {
                        build_s4_model(d, x as usize)?
                    } else {
                        build_model(kind, d, x)?
                    };
                    c.widths
                        .iter()
                        .map(|&w| Ok(StatmechRow::new(&model, &predicted_s2(&model, w)?)))
                        .collect()
                })
                .collect::<Result<_>>()?;
            let xs: Vec<f64> = c.widths.iter().map(|&w| w as f64).collect();
            let phases: Vec<PhaseRow> = per_point
                .iter()
                .map(|rows| {
                    let ys: Vec<f64> = rows.iter().map(|r| r.predicted_s2).collect();
                    PhaseRow {
                        model: rows[0].model.clone(),
                        d: rows[0].d,
                        mu: rows[0].mu,
                        line_tension: if xs.len() > 1 { linear_fit(&xs, &ys).0 } else { f64::NAN },
                        s2_by_w: ys.iter().map(|y| y.to_string()).collect::<Vec<_>>().join(";"),
                    }
                })
                .collect();
            let rows: Vec<StatmechRow> = per_point.into_iter().flatten().collect();
            write_raw(&raw, &rows)?;
            write_plain(&agg, &phases)?;
            rows.len()
        }
        Experiment::PhaseScan => {
            let (rows, phases) = phase_scan(c.model_kind()?, &c.bond_dims, &c.mu, &c.widths)?;
            write_raw(&raw, &rows)?;
            write_plain(&agg, &phases)?;
            rows.len()
        }
        Experiment::PepsEntropy => {
            let table = peps_entropy_experiment(&PepsEntropySpec {
                d_list: c.bond_dims.clone(),
                phys_list: c.phys_dims.clone(),
                w_list: c.widths.clone(),
                trials,
                chi: c.chi.unwrap_or(64),
                master_seed: c.master_seed,
            })?;
            write_raw(&raw, &table.rows)?;
            let aggs: Vec<AggRow> = table
                .means
                .iter()
                .map(|(bd, pd, w, s)| AggRow {
                    key: format!("D={bd};d={pd};W={w}"),
                    n: s.n,
                    mean: s.mean,
                    std: s.std,
                    stderr: s.stderr,
                })
                .collect();
            write_plain(&agg, &aggs)?;
            table.rows.len()
        }
        Experiment::PositiveSum => {
            let (rows, logs) = possum_rows(c, trials)?;
            write_raw(&raw, &rows)?;
            let mut groups: BTreeMap<(usize, usize), Vec<f64>> = BTreeMap::new();
            for r in &rows {
                groups.entry((r.d, r.phys)).or_default().push(r.estimate / r.exact);
            }
            let aggs: Vec<AggRow> = groups
                .iter()
                .map(|(&(d, p), xs)| AggRow::of(format!("D={d};d={p};estimate/exact"), xs))
                .collect();
            write_plain(&agg, &aggs)?;
            write_plain(&log_path, &logs)?;
            log = Some(log_path);
            rows.len()
        }
        Experiment::GaugeOpt => {
            let mut rows = Vec::new();
            let mut logs = Vec::new();
            let mut aggs = Vec::new();
            let field = c.ensemble_kind()?.field();
            let mode = c.gauge_mode()?;
            let mut gi = 0u64;
            for &d in &c.bond_dims {
                for &p in &c.phys_dims {
                    for &lam in &c.lambda {
                        for &w in &c.widths {
                            let spec = GaugeSpec {
                                bond_dim: d,
                                phys_dim: p,
                                lambda: lam,
                                field,
                                mode,
                                iters: c.iters.unwrap_or(crate::gauge::DEFAULT_ITERS),
                                step: c.step.unwrap_or(crate::gauge::DEFAULT_STEP),
                                w,
                                trials,
                                master_seed: crate::rng::derive_seed(c.master_seed, &[gi]),
                            };
                            gi += 1;
                            let (r, l) = gauge_experiment(&spec)?;
                            let key = format!("D={d};d={p};lambda={lam};W={w}");
                            let dec: Vec<f64> = r.iter().map(|t| (t.s2_after <= t.s2_before) as u8 as f64).collect();
                            let ds: Vec<f64> = r.iter().map(|t| t.s2_after - t.s2_before).collect();
                            aggs.push(AggRow::of(format!("{key};s2_after-s2_before"), &ds));
                            aggs.push(AggRow::of(format!("{key};s2_non_increasing"), &dec));
                            rows.extend(r);
                            logs.extend(l);
                        }
                    }
                }
            }
            write_raw(&raw, &rows)?;
            write_plain(&agg, &aggs)?;
            write_plain(&log_path, &logs)?;
            log = Some(log_path);
            rows.len()
        }
        Experiment::OracleSuite => {
            let rows = oracle_rows(c, trials)?;
            write_raw(&raw, &rows)?;
            let mut groups: BTreeMap<String, Vec<f64>> = BTreeMap::new();
            for r in &rows {
                groups
                    .entry(format!("kind={};D={};lambda={}", r.kind, r.d, r.lambda))
                    .or_default()
                    .push(r.rel_deviation);
            }
            let all: Vec<f64> = rows.iter().map(|r| r.rel_deviation).collect();
            let mut aggs: Vec<AggRow> = groups.into_iter().map(|(k, xs)| AggRow::of(k, &xs)).collect();
            aggs.push(AggRow {
                key: "max_rel_deviation".into(),
                n: all.len(),
                mean: all.iter().cloned().fold(0.0, f64::max),
                std: 0.0,
                stderr: 0.0,
            });
            write_plain(&agg, &aggs)?;
            rows.len()
        }
    };
    Ok(RunOutput { raw, agg, log, rows })
}

fn possum_rows(c: &ExperimentConfig, trials: usize) -> Result<(Vec<PossumRow>, Vec<DecompositionLogRow>)> {
    let (rows_n, cols_n) = (c.rows.unwrap_or(4), c.cols.unwrap_or(4));
    let samples = c.samples.unwrap_or(10_000);
    let mut grid = Vec::new();
    for &d in &c.bond_dims {
        for &p in &c.phys_dims {
            grid.push((d, p));
        }
    }
    let mut rows = Vec::new();
    let mut logs = Vec::new();
    for (gi, &(d, p)) in grid.iter().enumerate() {
        for trial in 0..trials {
            let seed = trial_seed(c.master_seed, c.experiment.tag(), gi, trial);
            let net = PepsNetwork::random(&PepsSpec { bond_dim: d, phys_dim: p, seed }, rows_n, cols_n)?;
            let outcomes = decompose_network(&net, seed)?;
            let mut decomps = Vec::new();
            for (s, (grouping, outcome)) in outcomes.into_iter().enumerate() {
                let sample = trial * net.sites.len() + s;
                match outcome {
                    DecomposeOutcome::Success(dec) => {
                        let rho = rho_from_grouping(&net.sites[s], grouping)?;
                        logs.push(DecompositionLogRow {
                            d,
                            phys: p,
                            sample,
                            success: true,
                            recon_error: dec.reconstruction_error(&rho),
                            min_eigenvalue: dec.min_factor_eigenvalue()?,
                        });
                        decomps.push(SiteDecomposition {
                            grouping,
                            trace: net.sites[s].trace(),
                            decomposition: dec,
                        });
                    }
                    DecomposeOutcome::Failure(_) => logs.push(DecompositionLogRow {
                        d,
                        phys: p,
                        sample,
                        success: false,
                        recon_error: f64::NAN,
                        min_eigenvalue: f64::NAN,
                    }),
                }
            }
            let exact = match net.exact_norm() {
                Ok(v) => v.value.re(),
                Err(Error::Size { .. }) => f64::NAN,
                Err(e) => return Err(e),
            };
            let decomposed = decomps.len();
            let est = if decomposed == net.sites.len() {
                Some(positive_sum_estimate(&net, &decomps, samples, &mut rng(seed ^ 0x5eed))?)
            } else {
                None
            };
            rows.push(PossumRow {
                d,
                phys: p,
                rows: rows_n,
                cols: cols_n,
                trial,
                samples,
                decomposed,
                estimate: est.map_or(f64::NAN, |e| e.estimate.mean.re()),
                stderr: est.map_or(f64::NAN, |e| e.estimate.stderr),
                exact,
                min_plaquette: est.map_or(f64::NAN, |e| e.min_plaquette),
                average_sign: est.map_or(f64::NAN, |e| e.average_sign),
                seed,
            });
        }
    }
    Ok((rows, logs))
}

fn oracle_rows(c: &ExperimentConfig, trials: usize) -> Result<Vec<OracleRow>> {
    let (r, k) = (c.rows.unwrap_or(3), c.cols.unwrap_or(3));
    let mut grid = Vec::new();
    for kind in c.ensemble_kinds()? {
        for &d in &c.bond_dims {
            for &lam in &c.lambda {
                grid.push((kind, d, lam));
            }
        }
    }
    (0..grid.len() * trials)
        .into_par_iter()
        .map(|job| {
            let (gi, trial) = (job / trials, job % trials);
            let (kind, d, lam) = grid[gi];
            let seed = trial_seed(c.master_seed, c.experiment.tag(), gi, trial);
            let net = LatticeNetwork::random(&EnsembleSpec::new(kind, d, lam), r, k, Geometry::OpenRect, seed)?;
            let brute = brute_force_value(&net)?;
            let transfer = transfer_value(&net)?;
            Ok(OracleRow {
                kind: kind.name().into(),
                d,
                lambda: lam,
                trial,
                brute_log_magnitude: brute.log_magnitude,
                transfer_log_magnitude: transfer.log_magnitude,
                rel_deviation: relative_deviation(&transfer, &brute),
                seed,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotStyle {
    /// x = λD, y = ⟨S₂⟩/W, one series per W (and D when several).
    Entropy,
    /// x = λ, y = ⟨Δf⟩, one series per D (and W when several).
    DeltaF,
    /// x = W, y = ⟨S₂⟩, one series per (D, d).
    Peps,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotPoint {
    pub x: f64,
    pub y: f64,
    pub yerr: f64,
    pub series: String,
}

struct Table {
    headers: Vec<String>,
    records: Vec<csv::StringRecord>,
}

impl Table {
    fn read(path: &Path) -> Result<Table> {
        let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
        let headers = r.headers()?.iter().map(String::from).collect();
        let records = r.records().collect::<std::result::Result<_, _>>()?;
        Ok(Table { headers, records })
    }

    fn col(&self, name: &str) -> Result<usize> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Format(format!("missing column `{name}`")))
    }

    fn num(&self, rec: &csv::StringRecord, col: usize) -> Result<f64> {
        rec[col]
            .parse()
            .map_err(|_| Error::Format(format!("`{}` in column `{}` is not a number", &rec[col], self.headers[col])))
    }
}

/// Groups raw rows by (series, x) and averages y over trials.
fn reshape(
    table: &Table,
    x: usize,
    y: usize,
    keys: &[(usize, &str)],
    optional: &[(usize, &str)],
    scale: impl Fn(&csv::StringRecord) -> Result<f64>,
) -> Result<Vec<PlotPoint>> {
    let distinct = |c: usize| table.records.iter().map(|r| r[c].to_string()).collect::<std::collections::BTreeSet<_>>().len();
    let mut parts: Vec<(usize, &str)> = optional.iter().filter(|(c, _)| distinct(*c) > 1).copied().collect();
    parts.extend_from_slice(keys);
    let mut order: Vec<(String, u64)> = Vec::new();
    let mut groups: BTreeMap<(String, u64), (f64, Vec<f64>)> = BTreeMap::new();
    for rec in &table.records {
        let series = parts.iter().map(|(c, name)| format!("{name}={}", &rec[*c])).collect::<Vec<_>>().join(",");
        let xv = table.num(rec, x)?;
        let yv = table.num(rec, y)? / scale(rec)?;
        let key = (series, xv.to_bits());
        if !groups.contains_key(&key) {
            order.push(key.clone());
        }
        groups.entry(key).or_insert((xv, Vec::new())).1.push(yv);
    }
    Ok(order
        .into_iter()
        .map(|key| {
            let (xv, ys) = &groups[&key];
            let s = Summary::of(ys);
            PlotPoint {
                x: *xv,
                y: s.mean,
                yerr: s.stderr,
                series: key.0,
            }
        })
        .collect())
}

/// Reshapes a raw CSV into `(x, y, yerr, series)` points and writes them to `out`.
pub fn emit_plot_data(raw_csv: &Path, style: PlotStyle, out: &Path) -> Result<Vec<PlotPoint>> {
    let t = Table::read(raw_csv)?;
    let points = match style {
        PlotStyle::Entropy => {
            let (x, y, w, d) = (t.col("lambdaD")?, t.col("s2")?, t.col("W")?, t.col("D")?);
            reshape(&t, x, y, &[(w, "W")], &[(d, "D")], |r| t.num(r, w))?
        }
        PlotStyle::DeltaF => {
            let (x, y, d, w) = (t.col("lambda")?, t.col("delta_f")?, t.col("D")?, t.col("W")?);
            reshape(&t, x, y, &[(d, "D")], &[(w, "W")], |_| Ok(1.0))?
        }
        PlotStyle::Peps => {
            let (x, y, d, p) = (t.col("W")?, t.col("s2")?, t.col("D")?, t.col("d")?);
            reshape(&t, x, y, &[(d, "D"), (p, "d")], &[], |_| Ok(1.0))?
        }
    };
    write_plain(out, &points)?;
    Ok(points)
}

/// Parses a file written by [`emit_plot_data`].
pub fn read_plot_data(path: &Path) -> Result<Vec<PlotPoint>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}
