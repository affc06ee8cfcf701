//! Experiment orchestration: TOML configs, seeded ensembles, pooled statistics and reports.
//!
//! Sample `i` of a run uses seed `base_seed + i`; samples are independent, so the
//! per-sample records do not depend on the worker count.

mod config;
mod stats;
mod studies;

pub use config::{ExperimentConfig, ExperimentKind, GridConfig, OutputConfig, PairBudgets, StudyOptions};
pub use stats::{is_monotone, proportion, summarize_values, wilson, Proportion, Summary, LOW_N};
pub use studies::AffinePlan;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use studies::Study;

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "LQG_LAB_OUT_DIR";

mod nullable {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &BTreeMap<String, Vec<f64>>, s: S) -> Result<S::Ok, S::Error> {
        let m: BTreeMap<&String, Vec<Option<f64>>> = m
            .iter()
            .map(|(k, v)| (k, v.iter().map(|x| x.is_finite().then_some(*x)).collect()))
            .collect();
        m.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<String, Vec<f64>>, D::Error> {
        let m = BTreeMap::<String, Vec<Option<f64>>>::deserialize(d)?;
        Ok(m.into_iter()
            .map(|(k, v)| (k, v.into_iter().map(|x| x.unwrap_or(f64::NAN)).collect()))
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub sample: usize,
    pub seed: u64,
    pub epsilon: f64,
    pub r: f64,
    pub mesh: f64,
    /// Non-finite values are written as `null`.
    #[serde(with = "nullable")]
    pub metrics: BTreeMap<String, Vec<f64>>,
    pub events: BTreeMap<String, bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub epsilon: f64,
    pub r: f64,
    pub mesh: f64,
    pub samples_ok: usize,
    pub samples_failed: usize,
    pub metrics: BTreeMap<String, Summary>,
    pub events: BTreeMap<String, Proportion>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub kind: ExperimentKind,
    pub version: String,
    pub config: ExperimentConfig,
    pub notes: Vec<String>,
    pub wall_clock_seconds: f64,
    pub records: Vec<SampleRecord>,
    pub cells: Vec<CellReport>,
}

impl RunReport {
    pub fn failed_samples(&self) -> usize {
        self.records.iter().filter(|r| r.error.is_some()).count()
    }

    pub fn cell(&self, epsilon: f64, r: f64, mesh: f64) -> Option<&CellReport> {
        self.cells.iter().find(|c| c.epsilon == epsilon && c.r == r && c.mesh == mesh)
    }

    /// Records serialized one per line; the reproducibility contract is byte equality of this.
    pub fn records_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).map_err(|e| Error::Format(e.to_string()))?);
            out.push('\n');
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutputFormat {
    #[default]
    Json,
    Csv,
}

fn evaluate_sample(study: &Study, index: usize) -> Vec<SampleRecord> {
    let seed = study.cfg.base_seed.wrapping_add(index as u64);
    let mut out = Vec::new();
    for window in study.windows(seed) {
        for ((epsilon, r, mesh), result) in study.evaluate(&window) {
            let (metrics, events, error) = match result {
                Ok(o) => (o.metrics, o.events, None),
                Err(e) => (BTreeMap::new(), BTreeMap::new(), Some(e.to_string())),
            };
            out.push(SampleRecord {
                sample: index,
                seed,
                epsilon,
                r,
                mesh,
                metrics,
                events,
                error,
            });
        }
    }
    out
}

/// Cells sorted by ε, r and mesh, each descending; failed records only count as failures.
pub fn pool(records: &[SampleRecord]) -> Vec<CellReport> {
    type Key = (u64, u64, u64);
    let key = |r: &SampleRecord| -> Key { (r.epsilon.to_bits(), r.r.to_bits(), r.mesh.to_bits()) };
    let mut groups: Vec<(Key, Vec<&SampleRecord>)> = Vec::new();
    for rec in records {
        match groups.iter_mut().find(|(k, _)| *k == key(rec)) {
            Some((_, v)) => v.push(rec),
            None => groups.push((key(rec), vec![rec])),
        }
    }
    let mut cells: Vec<CellReport> = groups
        .into_iter()
        .map(|(_, recs)| {
            let ok: Vec<&&SampleRecord> = recs.iter().filter(|r| r.error.is_none()).collect();
            let mut metric_values: BTreeMap<String, Vec<f64>> = BTreeMap::new();
            let mut event_values: BTreeMap<String, Vec<bool>> = BTreeMap::new();
            for r in &ok {
                for (k, v) in &r.metrics {
                    metric_values.entry(k.clone()).or_default().extend(v);
                }
                for (k, v) in &r.events {
                    event_values.entry(k.clone()).or_default().push(*v);
                }
            }
            CellReport {
                epsilon: recs[0].epsilon,
                r: recs[0].r,
                mesh: recs[0].mesh,
                samples_ok: ok.len(),
                samples_failed: recs.len() - ok.len(),
                metrics: metric_values
                    .into_iter()
                    .filter_map(|(k, v)| summarize_values(&v).map(|s| (k, s)))
                    .collect(),
                events: event_values.into_iter().map(|(k, v)| (k, proportion(&v))).collect(),
            }
        })
        .collect();
    cells.sort_by(|a, b| {
        b.epsilon
            .total_cmp(&a.epsilon)
            .then(b.r.total_cmp(&a.r))
            .then(b.mesh.total_cmp(&a.mesh))
    });
    cells
}

/// Runs every sample of `config` on `workers` threads (`None` uses the rayon default).
pub fn run(config: &ExperimentConfig, workers: Option<usize>) -> Result<RunReport> {
    config.validate()?;
    let start = Instant::now();
    let study = Study::new(config)?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = workers {
        builder = builder.num_threads(w.max(1));
    }
    let pool_threads = builder.build().map_err(|e| Error::Io(e.to_string()))?;
    let per_sample: Vec<Vec<SampleRecord>> = pool_threads.install(|| {
        (0..config.sample_count)
            .into_par_iter()
            .map(|i| evaluate_sample(&study, i))
            .collect()
    });
    let records: Vec<SampleRecord> = per_sample.into_iter().flatten().collect();
    let cells = pool(&records);
    Ok(RunReport {
        kind: config.kind,
        version: format!("{} {}", env!("CARGO_PKG_NAME"), env!("CARGO_PKG_VERSION")),
        config: config.clone(),
        notes: study.notes(),
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        records,
        cells,
    })
}

/// The affine coordinate-change study; `config.map` must be affine.
pub fn affine_covariance_study(config: &ExperimentConfig, workers: Option<usize>) -> Result<RunReport> {
    if config.kind != ExperimentKind::AffineCovariance {
        return Err(Error::config("kind", "affine_covariance_study needs kind = \"affine_covariance\""));
    }
    run(config, workers)
}

/// Output directory: explicit flag, then the config, then the environment, then `.`.
pub fn resolve_out_dir(flag: Option<&Path>, config: &ExperimentConfig) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| config.output.dir.clone())
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."))
}

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Writes the report and returns the paths written.
pub fn write_report(report: &RunReport, dir: &Path, format: OutputFormat) -> Result<Vec<PathBuf>> {
    let name = report.config.report_name();
    let json = serde_json::to_vec_pretty(report).map_err(|e| Error::Format(e.to_string()))?;
    let json_path = dir.join(format!("{name}.json"));
    write_atomic(&json_path, &json)?;
    let mut written = vec![json_path];
    if format == OutputFormat::Csv {
        let summary_path = dir.join(format!("{name}.summary.csv"));
        write_atomic(&summary_path, summarize(std::slice::from_ref(report))?.as_bytes())?;
        let records_path = dir.join(format!("{name}.records.csv"));
        write_atomic(&records_path, records_csv(&report.records)?.as_bytes())?;
        written.extend([summary_path, records_path]);
    }
    Ok(written)
}

pub fn read_report(path: &Path) -> Result<RunReport> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

fn csv_error(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}

fn fmt(x: f64) -> String {
    if x.is_finite() {
        format!("{x:?}")
    } else {
        String::new()
    }
}

/// Long-format records: one row per metric value or event.
pub fn records_csv(records: &[SampleRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["sample", "seed", "epsilon", "r", "mesh", "quantity", "index", "value", "error"])
        .map_err(csv_error)?;
    for rec in records {
        let head = [rec.sample.to_string(), rec.seed.to_string(), fmt(rec.epsilon), fmt(rec.r), fmt(rec.mesh)];
        if let Some(e) = &rec.error {
            let row: Vec<String> = head.iter().cloned().chain(["".into(), "".into(), "".into(), e.clone()]).collect();
            w.write_record(&row).map_err(csv_error)?;
            continue;
        }
        for (k, vs) in &rec.metrics {
            for (i, v) in vs.iter().enumerate() {
                let row: Vec<String> = head.iter().cloned().chain([k.clone(), i.to_string(), fmt(*v), "".into()]).collect();
                w.write_record(&row).map_err(csv_error)?;
            }
        }
        for (k, v) in &rec.events {
            let val = if *v { "1" } else { "0" };
            let row: Vec<String> = head.iter().cloned().chain([k.clone(), "0".into(), val.into(), "".into()]).collect();
            w.write_record(&row).map_err(csv_error)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
}

const SUMMARY_HEADER: &str = "\
# one row per (epsilon, r, mesh, quantity), records pooled across all input reports
# kind: experiment kind; quantity: metric or event name; type: metric | event
# samples_ok / samples_failed: records of the cell with and without errors
# n: pooled values (metrics) or outcomes (events)
# mean, median, q1, q3, iqr, min, max: metric statistics, empty for events
# p, wilson_lo, wilson_hi: event probability and 95% Wilson interval, empty for metrics
# low_n: true when n < 10
# monotone: pass iff the median (metrics) or p (events) is monotone across the rows of this quantity
";

/// Aggregate table over reports of one kind, rows sorted by ε, r and mesh descending.
pub fn summarize(reports: &[RunReport]) -> Result<String> {
    let first = reports.first().ok_or(Error::EmptySet("reports"))?;
    if let Some(other) = reports.iter().find(|r| r.kind != first.kind) {
        return Err(Error::config(
            "reports",
            format!("mixed experiment kinds: {} and {}", first.kind.name(), other.kind.name()),
        ));
    }
    let records: Vec<SampleRecord> = reports.iter().flat_map(|r| r.records.iter().cloned()).collect();
    let cells = pool(&records);

    let mut metric_trend: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    let mut event_trend: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for c in &cells {
        for (k, s) in &c.metrics {
            metric_trend.entry(k).or_default().push(s.median);
        }
        for (k, p) in &c.events {
            event_trend.entry(k).or_default().push(p.p);
        }
    }
    let flag = |xs: Option<&Vec<f64>>| if xs.is_some_and(|x| is_monotone(x)) { "pass" } else { "fail" };

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "kind", "epsilon", "r", "mesh", "quantity", "type", "samples_ok", "samples_failed", "n", "mean", "median", "q1",
        "q3", "iqr", "min", "max", "p", "wilson_lo", "wilson_hi", "low_n", "monotone",
    ])
    .map_err(csv_error)?;
    let kind = first.kind.name().to_string();
    for c in &cells {
        let head = vec![kind.clone(), fmt(c.epsilon), fmt(c.r), fmt(c.mesh)];
        for (k, s) in &c.metrics {
            let mut row = head.clone();
            row.extend([k.clone(), "metric".into(), c.samples_ok.to_string(), c.samples_failed.to_string()]);
            row.push(s.n.to_string());
            row.extend([s.mean, s.median, s.q1, s.q3, s.iqr, s.min, s.max].map(fmt));
            row.extend(["".into(), "".into(), "".into()]);
            row.extend([s.low_n.to_string(), flag(metric_trend.get(k.as_str())).into()]);
            w.write_record(&row).map_err(csv_error)?;
        }
        for (k, p) in &c.events {
            let mut row = head.clone();
            row.extend([k.clone(), "event".into(), c.samples_ok.to_string(), c.samples_failed.to_string()]);
            row.push(p.n.to_string());
            row.extend(std::iter::repeat_n(String::new(), 7));
            row.extend([p.p, p.wilson_lo, p.wilson_hi].map(fmt));
            row.extend([p.low_n.to_string(), flag(event_trend.get(k.as_str())).into()]);
            w.write_record(&row).map_err(csv_error)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    Ok(format!("{SUMMARY_HEADER}{}", String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))?))
}
