//! Report tables, CSV output and text rendering.
//!
//! Every CSV uses LF line endings, a header row and four fraction digits
//! for reals. Columns ending in `_s` hold wall-clock times.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::BenchError;

pub const RESULTS_CSV: &str = "results.csv";
pub const SUMMARY_CSV: &str = "summary.csv";
pub const EPS_CSV: &str = "eps_curve.csv";
pub const ENSEMBLE_CSV: &str = "ensemble_sweep.csv";
pub const RUNTIMES_CSV: &str = "runtimes.csv";
pub const ENC_CSV: &str = "enc_inference.csv";

/// Methods and column order of the main comparison table.
pub const TABLE_METHODS: [&str; 6] = ["baseline", "dp", "fedavg_n2", "fedavg_n4", "fedens_n2", "fedens_n4"];

pub fn fmt4(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.4}")
    } else if v.is_nan() {
        "nan".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

fn opt4(v: Option<f64>) -> String {
    v.map(fmt4).unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq)]
pub enum RunStatus {
    Ok,
    Failed(String),
}

/// One training/evaluation run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRow {
    pub dataset: String,
    pub method: String,
    pub params: String,
    pub seed: u64,
    pub status: RunStatus,
    pub weighted_f1: Option<f64>,
    pub epsilon: Option<f64>,
    pub epochs: usize,
    pub non_converged: bool,
    pub wall_s: f64,
}

const RUN_HEADER: [&str; 10] =
    ["dataset", "method", "params", "seed", "status", "weighted_f1", "epsilon", "epochs", "non_converged", "wall_s"];

impl RunRow {
    pub fn failed(dataset: &str, method: &str, params: &str, seed: u64, error: String, wall_s: f64) -> Self {
        Self {
            dataset: dataset.into(),
            method: method.into(),
            params: params.into(),
            seed,
            status: RunStatus::Failed(error),
            weighted_f1: None,
            epsilon: None,
            epochs: 0,
            non_converged: false,
            wall_s,
        }
    }

    pub fn is_failed(&self) -> bool {
        matches!(self.status, RunStatus::Failed(_))
    }

    fn record(&self) -> Vec<String> {
        let status = match &self.status {
            RunStatus::Ok => "ok".to_string(),
            RunStatus::Failed(e) => format!("FAILED: {e}"),
        };
        vec![
            self.dataset.clone(),
            self.method.clone(),
            self.params.clone(),
            self.seed.to_string(),
            status,
            opt4(self.weighted_f1),
            opt4(self.epsilon),
            self.epochs.to_string(),
            self.non_converged.to_string(),
            fmt4(self.wall_s),
        ]
    }

    fn from_record(rec: &csv::StringRecord) -> Result<Self, BenchError> {
        let bad = |what: &str| BenchError::Report(format!("bad {what} in results row {rec:?}"));
        let get = |i: usize| rec.get(i).ok_or_else(|| bad("column count"));
        let real = |i: usize| -> Result<Option<f64>, BenchError> {
            let s = get(i)?;
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse().map(Some).map_err(|_| bad(RUN_HEADER[i]))
            }
        };
        let status = match get(4)? {
            "ok" => RunStatus::Ok,
            s => RunStatus::Failed(s.strip_prefix("FAILED: ").unwrap_or(s).to_string()),
        };
        Ok(Self {
            dataset: get(0)?.into(),
            method: get(1)?.into(),
            params: get(2)?.into(),
            seed: get(3)?.parse().map_err(|_| bad("seed"))?,
            status,
            weighted_f1: real(5)?,
            epsilon: real(6)?,
            epochs: get(7)?.parse().map_err(|_| bad("epochs"))?,
            non_converged: get(8)?.parse().map_err(|_| bad("non_converged"))?,
            wall_s: real(9)?.unwrap_or(0.0),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpsRow {
    pub sweep: String,
    pub n: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub noise_multiplier: f64,
    pub delta: f64,
    pub epsilon: f64,
    pub optimal_order: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleRow {
    pub dataset: String,
    pub num_clients: usize,
    pub scheme: String,
    pub dp: String,
    pub seed: u64,
    pub weighted_f1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RuntimeRow {
    pub dataset: String,
    pub mode: String,
    pub phase: String,
    pub avg_s: f64,
    pub std_s: f64,
    pub batch: usize,
    pub repeats: usize,
    pub hardware: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncRow {
    pub dataset: String,
    pub architecture: String,
    pub seed: u64,
    pub samples: usize,
    pub f1_plain: f64,
    pub f1_encrypted: f64,
    pub agreement: f64,
    pub messages: u64,
    pub bytes: u64,
    pub wall_s: f64,
}

impl EncRow {
    /// `F1_encrypted - F1_plain` in percentage points.
    pub fn delta_points(&self) -> f64 {
        100.0 * (self.f1_encrypted - self.f1_plain)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsReport {
    pub runs: Vec<RunRow>,
    pub eps_curve: Vec<EpsRow>,
    pub ensemble_sweep: Vec<EnsembleRow>,
    pub runtimes: Vec<RuntimeRow>,
    pub enc_inference: Vec<EncRow>,
}

/// Best-of-seeds summary of one (dataset, method, params) group.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub dataset: String,
    pub method: String,
    pub params: String,
    pub best_f1: Option<f64>,
    pub best_seed: Option<u64>,
    pub runs: usize,
    pub failed: usize,
    pub non_converged: bool,
    pub epsilon: Option<f64>,
}

impl MetricsReport {
    pub fn any_failed(&self) -> bool {
        self.runs.iter().any(RunRow::is_failed)
    }

    pub fn extend(&mut self, other: MetricsReport) {
        self.runs.extend(other.runs);
        self.eps_curve.extend(other.eps_curve);
        self.ensemble_sweep.extend(other.ensemble_sweep);
        self.runtimes.extend(other.runtimes);
        self.enc_inference.extend(other.enc_inference);
    }

    /// Keeps only runs whose method is listed.
    pub fn filter_methods(&self, methods: &[&str]) -> MetricsReport {
        MetricsReport {
            runs: self.runs.iter().filter(|r| methods.contains(&r.method.as_str())).cloned().collect(),
            ..self.clone()
        }
    }

    /// Groups ordered by (dataset, method, params); the best run is the
    /// maximum F1, lowest seed on ties.
    pub fn aggregates(&self) -> Vec<Aggregate> {
        let mut groups: BTreeMap<(&str, &str, &str), Vec<&RunRow>> = BTreeMap::new();
        for r in &self.runs {
            groups.entry((&r.dataset, &r.method, &r.params)).or_default().push(r);
        }
        groups
            .into_iter()
            .map(|((dataset, method, params), rows)| {
                let best = rows.iter().filter(|r| r.weighted_f1.is_some()).fold(None::<&&RunRow>, |acc, r| match acc {
                    Some(b)
                        if (b.weighted_f1, std::cmp::Reverse(b.seed)) >= (r.weighted_f1, std::cmp::Reverse(r.seed)) =>
                    {
                        Some(b)
                    }
                    _ => Some(r),
                });
                Aggregate {
                    dataset: dataset.into(),
                    method: method.into(),
                    params: params.into(),
                    best_f1: best.and_then(|r| r.weighted_f1),
                    best_seed: best.map(|r| r.seed),
                    runs: rows.len(),
                    failed: rows.iter().filter(|r| r.is_failed()).count(),
                    non_converged: best.is_some_and(|r| r.non_converged),
                    epsilon: best.and_then(|r| r.epsilon),
                }
            })
            .collect()
    }

    /// Best F1 over all runs of `method` on `dataset`, across parameters.
    pub fn best_f1(&self, dataset: &str, method: &str) -> Option<f64> {
        self.runs
            .iter()
            .filter(|r| r.dataset == dataset && r.method == method)
            .filter_map(|r| r.weighted_f1)
            .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.max(v))))
    }

    /// One row per dataset, one column per method, best-of-seeds F1.
    pub fn pivot_csv(&self, methods: &[&str]) -> String {
        let mut datasets: Vec<&str> = self.runs.iter().map(|r| r.dataset.as_str()).collect();
        datasets.sort_unstable();
        datasets.dedup();
        let mut w = writer();
        let mut header = vec!["dataset"];
        header.extend_from_slice(methods);
        w.write_record(&header).expect("in-memory write");
        for d in datasets {
            let mut rec = vec![d.to_string()];
            rec.extend(methods.iter().map(|m| opt4(self.best_f1(d, m))));
            w.write_record(&rec).expect("in-memory write");
        }
        finish(w)
    }

    pub fn results_csv(&self) -> String {
        let mut w = writer();
        w.write_record(RUN_HEADER).expect("in-memory write");
        for r in &self.runs {
            w.write_record(r.record()).expect("in-memory write");
        }
        finish(w)
    }

    pub fn summary_csv(&self) -> String {
        let mut w = writer();
        w.write_record([
            "dataset",
            "method",
            "params",
            "best_f1",
            "best_seed",
            "runs",
            "failed",
            "non_converged",
            "epsilon",
        ])
        .expect("in-memory write");
        for a in self.aggregates() {
            w.write_record([
                a.dataset,
                a.method,
                a.params,
                opt4(a.best_f1),
                a.best_seed.map(|s| s.to_string()).unwrap_or_default(),
                a.runs.to_string(),
                a.failed.to_string(),
                a.non_converged.to_string(),
                opt4(a.epsilon),
            ])
            .expect("in-memory write");
        }
        finish(w)
    }

    pub fn eps_csv(&self) -> String {
        let mut w = writer();
        w.write_record(["sweep", "n", "batch_size", "epochs", "noise_multiplier", "delta", "epsilon", "optimal_order"])
            .expect("in-memory write");
        for r in &self.eps_curve {
            w.write_record([
                r.sweep.clone(),
                r.n.to_string(),
                r.batch_size.to_string(),
                r.epochs.to_string(),
                fmt4(r.noise_multiplier),
                format!("{:e}", r.delta),
                fmt4(r.epsilon),
                fmt4(r.optimal_order),
            ])
            .expect("in-memory write");
        }
        finish(w)
    }

    pub fn ensemble_csv(&self) -> String {
        let mut w = writer();
        w.write_record(["dataset", "num_clients", "scheme", "dp", "seed", "weighted_f1"]).expect("in-memory write");
        for r in &self.ensemble_sweep {
            w.write_record([
                r.dataset.clone(),
                r.num_clients.to_string(),
                r.scheme.clone(),
                r.dp.clone(),
                r.seed.to_string(),
                fmt4(r.weighted_f1),
            ])
            .expect("in-memory write");
        }
        finish(w)
    }

    pub fn runtimes_csv(&self) -> String {
        let mut w = writer();
        w.write_record(["dataset", "mode", "phase", "avg_s", "std_s", "batch", "repeats", "hardware"])
            .expect("in-memory write");
        for r in &self.runtimes {
            w.write_record([
                r.dataset.clone(),
                r.mode.clone(),
                r.phase.clone(),
                fmt4(r.avg_s),
                fmt4(r.std_s),
                r.batch.to_string(),
                r.repeats.to_string(),
                r.hardware.clone(),
            ])
            .expect("in-memory write");
        }
        finish(w)
    }

    pub fn enc_csv(&self) -> String {
        let mut w = writer();
        w.write_record([
            "dataset",
            "architecture",
            "seed",
            "samples",
            "f1_plain",
            "f1_encrypted",
            "delta_points",
            "agreement",
            "messages",
            "bytes",
            "wall_s",
        ])
        .expect("in-memory write");
        for r in &self.enc_inference {
            w.write_record([
                r.dataset.clone(),
                r.architecture.clone(),
                r.seed.to_string(),
                r.samples.to_string(),
                fmt4(r.f1_plain),
                fmt4(r.f1_encrypted),
                fmt4(r.delta_points()),
                fmt4(r.agreement),
                r.messages.to_string(),
                r.bytes.to_string(),
                fmt4(r.wall_s),
            ])
            .expect("in-memory write");
        }
        finish(w)
    }

    /// Writes `results.csv` and `summary.csv`, plus each non-empty
    /// auxiliary table, into `dir`.
    pub fn write_csvs(&self, dir: &Path) -> Result<(), BenchError> {
        std::fs::create_dir_all(dir).map_err(|e| BenchError::io(dir, e))?;
        let mut files = vec![(RESULTS_CSV, self.results_csv()), (SUMMARY_CSV, self.summary_csv())];
        if !self.eps_curve.is_empty() {
            files.push((EPS_CSV, self.eps_csv()));
        }
        if !self.ensemble_sweep.is_empty() {
            files.push((ENSEMBLE_CSV, self.ensemble_csv()));
        }
        if !self.runtimes.is_empty() {
            files.push((RUNTIMES_CSV, self.runtimes_csv()));
        }
        if !self.enc_inference.is_empty() {
            files.push((ENC_CSV, self.enc_csv()));
        }
        for (name, body) in files {
            let path = dir.join(name);
            std::fs::write(&path, body).map_err(|e| BenchError::io(&path, e))?;
        }
        Ok(())
    }

    /// Reads the run rows of a `results.csv`.
    pub fn read_results(path: &Path) -> Result<MetricsReport, BenchError> {
        let mut rdr =
            csv::Reader::from_path(path).map_err(|e| BenchError::Report(format!("{}: {e}", path.display())))?;
        let header = rdr.headers().map_err(|e| BenchError::Report(e.to_string()))?.clone();
        if header.iter().ne(RUN_HEADER) {
            return Err(BenchError::Report(format!("{}: unexpected header {header:?}", path.display())));
        }
        let mut report = MetricsReport::default();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| BenchError::Report(e.to_string()))?;
            report.runs.push(RunRow::from_record(&rec)?);
        }
        Ok(report)
    }
}

fn writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new())
}

fn finish(w: csv::Writer<Vec<u8>>) -> String {
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is UTF-8")
}

/// Plain-text table of the best-of-seeds summary and any auxiliary tables.
pub fn render_report(report: &MetricsReport) -> String {
    let mut out = String::new();
    let aggs = report.aggregates();
    if !aggs.is_empty() {
        let rows: Vec<[String; 6]> = aggs
            .iter()
            .map(|a| {
                let mut f1 = opt4(a.best_f1);
                if a.non_converged {
                    f1.push_str(" (nc)");
                }
                [
                    a.dataset.clone(),
                    a.method.clone(),
                    a.params.clone(),
                    f1,
                    opt4(a.epsilon),
                    format!("{}/{}", a.runs - a.failed, a.runs),
                ]
            })
            .collect();
        table(&mut out, ["dataset", "method", "params", "best F1", "epsilon", "ok/runs"], &rows);
    }
    if !report.eps_curve.is_empty() {
        let rows: Vec<[String; 6]> = report
            .eps_curve
            .iter()
            .map(|r| {
                [
                    r.sweep.clone(),
                    r.n.to_string(),
                    r.batch_size.to_string(),
                    r.epochs.to_string(),
                    fmt4(r.noise_multiplier),
                    fmt4(r.epsilon),
                ]
            })
            .collect();
        table(&mut out, ["sweep", "n", "b", "epochs", "noise", "epsilon"], &rows);
    }
    if !report.runtimes.is_empty() {
        let rows: Vec<[String; 5]> = report
            .runtimes
            .iter()
            .map(|r| [r.dataset.clone(), r.mode.clone(), r.phase.clone(), fmt4(r.avg_s), fmt4(r.std_s)])
            .collect();
        table(&mut out, ["dataset", "mode", "phase", "avg s", "std s"], &rows);
    }
    if !report.enc_inference.is_empty() {
        let rows: Vec<[String; 5]> = report
            .enc_inference
            .iter()
            .map(|r| {
                [r.dataset.clone(), r.samples.to_string(), fmt4(r.f1_plain), fmt4(r.f1_encrypted), fmt4(r.agreement)]
            })
            .collect();
        table(&mut out, ["dataset", "samples", "F1 plain", "F1 enc", "agreement"], &rows);
    }
    out
}

fn table<const N: usize>(out: &mut String, header: [&str; N], rows: &[[String; N]]) {
    let mut width = header.map(str::len);
    for r in rows {
        for (w, cell) in width.iter_mut().zip(r) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |out: &mut String, cells: &[&str]| {
        for (i, (cell, w)) in cells.iter().zip(&width).enumerate() {
            let sep = if i + 1 == N { "\n" } else { "  " };
            let _ = write!(out, "{cell:<w$}{sep}");
        }
    };
    line(out, &header);
    let rule: Vec<String> = width.iter().map(|w| "-".repeat(*w)).collect();
    line(out, &rule.iter().map(String::as_str).collect::<Vec<_>>());
    for r in rows {
        line(out, &r.iter().map(String::as_str).collect::<Vec<_>>());
    }
    out.push('\n');
}
