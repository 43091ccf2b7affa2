//! CSV tables and run manifests.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use diopt_core::codec::digest64;
use diopt_core::evaluation::{MetricsRecord, Stat, TheoremEstimate};
use diopt_core::trainer::EpochRecord;

pub const LOG_HEADER: [&str; 9] =
    ["epoch", "phase", "loss", "objective", "gap%", "ineq-mean", "ineq-max", "ineq-numviol", "feasibility%"];

pub const RESULT_HEADER: [&str; 13] = [
    "Method",
    "Seed",
    "K",
    "Eta",
    "Instances",
    "Objective",
    "Gap%",
    "Ineq Mean",
    "Ineq Max",
    "Ineq Num Viol",
    "Feasibility%",
    "Eq Mean",
    "Eq Max",
];

fn num(v: f64) -> String {
    format!("{v:.6}")
}

fn pm(s: Stat) -> String {
    format!("{:.6}±{:.6}", s.mean, s.std)
}

fn create(path: &Path) -> Result<csv::Writer<fs::File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))
}

/// One row per epoch; metric columns are empty on epochs without validation.
pub fn write_epoch_log(path: &Path, log: &[EpochRecord]) -> Result<()> {
    let mut w = create(path)?;
    w.write_record(LOG_HEADER)?;
    for rec in log {
        let mut row = vec![rec.epoch.to_string(), rec.phase.to_string(), num(rec.loss)];
        match &rec.metrics {
            Some(m) => row.extend([
                num(m.objective.mean),
                m.gap.map(|g| num(g.mean)).unwrap_or_default(),
                num(m.ineq_mean.mean),
                num(m.ineq_max.mean),
                num(m.ineq_num_viol.mean),
                num(m.feasibility),
            ]),
            None => row.extend(std::iter::repeat_n(String::new(), 6)),
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Results of one method at one seed.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub method: String,
    pub seed: u64,
    pub k: usize,
    pub eta: f64,
    pub metrics: MetricsRecord,
}

fn gap_cell(m: &MetricsRecord) -> String {
    match m.gap {
        Some(g) if m.gap_absolute => format!("{} (abs)", pm(g)),
        Some(g) => pm(g),
        None => String::new(),
    }
}

/// Per-seed rows (mean±std over instances), followed by an `all` row with
/// the mean±std of the per-seed means when there is more than one seed.
pub fn write_results(path: &Path, rows: &[ResultRow]) -> Result<()> {
    let mut w = create(path)?;
    w.write_record(RESULT_HEADER)?;
    for r in rows {
        let m = &r.metrics;
        w.write_record([
            r.method.clone(),
            r.seed.to_string(),
            r.k.to_string(),
            num(r.eta),
            m.instances.to_string(),
            pm(m.objective),
            gap_cell(m),
            pm(m.ineq_mean),
            pm(m.ineq_max),
            pm(m.ineq_num_viol),
            num(m.feasibility),
            pm(m.eq_mean),
            pm(m.eq_max),
        ])?;
    }
    if rows.len() > 1 {
        let across = |f: &dyn Fn(&MetricsRecord) -> f64| pm(Stat::of(rows.iter().map(|r| f(&r.metrics))));
        let gap = if rows.iter().all(|r| r.metrics.gap.is_some()) {
            across(&|m| m.gap.map_or(f64::NAN, |g| g.mean))
        } else {
            String::new()
        };
        let first = &rows[0];
        w.write_record([
            first.method.clone(),
            "all".into(),
            first.k.to_string(),
            num(first.eta),
            first.metrics.instances.to_string(),
            across(&|m| m.objective.mean),
            gap,
            across(&|m| m.ineq_mean.mean),
            across(&|m| m.ineq_max.mean),
            across(&|m| m.ineq_num_viol.mean),
            across(&|m| m.feasibility),
            across(&|m| m.eq_mean.mean),
            across(&|m| m.eq_max.mean),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// One sweep point: the swept value and its results at one seed.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub axis: String,
    pub value: String,
    pub result: ResultRow,
}

pub fn write_sweep(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut w = create(path)?;
    let mut header = vec!["Axis", "Value"];
    header.extend(RESULT_HEADER);
    w.write_record(&header)?;
    for s in rows {
        let r = &s.result;
        let m = &r.metrics;
        w.write_record([
            s.axis.clone(),
            s.value.clone(),
            r.method.clone(),
            r.seed.to_string(),
            r.k.to_string(),
            num(r.eta),
            m.instances.to_string(),
            pm(m.objective),
            gap_cell(m),
            pm(m.ineq_mean),
            pm(m.ineq_max),
            pm(m.ineq_num_viol),
            num(m.feasibility),
            pm(m.eq_mean),
            pm(m.eq_max),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_theorem(path: &Path, rows: &[TheoremEstimate]) -> Result<()> {
    let mut w = create(path)?;
    w.write_record(["d", "planes", "points", "estimate", "std_err", "expected", "z"])?;
    for e in rows {
        w.write_record([
            e.d.to_string(),
            e.n_planes.to_string(),
            e.points.to_string(),
            format!("{:.8}", e.estimate),
            format!("{:.8}", e.std_err),
            format!("{:.8}", e.expected()),
            format!("{:.4}", e.z_score()),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Plain `key = value` record of what a command did and which files it wrote.
#[derive(Debug, Clone, Default)]
pub struct Manifest {
    entries: Vec<(String, String)>,
    files: Vec<PathBuf>,
}

impl Manifest {
    pub fn new(command: &str) -> Self {
        let mut m = Self::default();
        m.set("command", command);
        m.set("version", env!("CARGO_PKG_VERSION"));
        m
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.push((key.to_string(), value.to_string()));
    }

    pub fn file(&mut self, path: impl Into<PathBuf>) {
        self.files.push(path.into());
    }

    pub fn files(&self) -> &[PathBuf] {
        &self.files
    }

    /// Writes the manifest, listing every recorded file with its size and digest.
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for (k, v) in &self.entries {
            out.push_str(&format!("{k} = {v}\n"));
        }
        for f in &self.files {
            let bytes = fs::read(f).with_context(|| format!("reading {}", f.display()))?;
            let name = f.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            out.push_str(&format!("file = {name} {} {:016x}\n", bytes.len(), digest64(&bytes)));
        }
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, out).with_context(|| format!("writing {}", path.display()))
    }
}
