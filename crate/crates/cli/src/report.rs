//! Output files: metrics CSVs, sample dumps, summaries and comparison tables.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use pulab::gan::TrainHooks;
use pulab::metrics::{rolling_summary, MetricsRecord, RollingSummary};

pub const METRICS_HEADER: &str = "epoch,loss_d,loss_g,loss_ob,test_accuracy,fd_gen_unlabeled,fd_gen_positive";
pub const SUMMARY_WINDOWS: [usize; 2] = [50, 100];

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_float).unwrap_or_default()
}

pub fn metrics_row(r: &MetricsRecord) -> String {
    format!(
        "{},{},{},{},{},{},{}",
        r.epoch,
        fmt_opt(r.loss_d),
        fmt_opt(r.loss_g),
        fmt_opt(r.loss_ob),
        fmt_opt(r.test_accuracy),
        fmt_opt(r.fd_gen_unlabeled),
        fmt_opt(r.fd_gen_positive),
    )
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

struct CsvFile {
    path: PathBuf,
    out: BufWriter<File>,
}

impl CsvFile {
    fn open(path: PathBuf) -> Result<Self> {
        let mut out = create(&path)?;
        writeln!(out, "{METRICS_HEADER}").with_context(|| format!("writing {}", path.display()))?;
        out.flush()?;
        Ok(Self { path, out })
    }

    fn row(&mut self, r: &MetricsRecord) -> io::Result<()> {
        writeln!(self.out, "{}", metrics_row(r))?;
        self.out.flush()
    }
}

/// Streams epoch records to disk as training runs, so an aborted run keeps
/// the rows it produced. The first `stage1_len` records go to a separate
/// file when one is given.
pub struct MetricsSink {
    stage1: Option<(CsvFile, usize)>,
    main: CsvFile,
    seen: usize,
    error: Option<(PathBuf, io::Error)>,
}

impl MetricsSink {
    pub fn new(main: PathBuf, stage1: Option<(PathBuf, usize)>) -> Result<Self> {
        let stage1 = match stage1 {
            Some((p, n)) => Some((CsvFile::open(p)?, n)),
            None => None,
        };
        Ok(Self {
            stage1,
            main: CsvFile::open(main)?,
            seen: 0,
            error: None,
        })
    }

    /// Surfaces the first write failure, if any.
    pub fn finish(self) -> Result<()> {
        match self.error {
            Some((path, e)) => Err(anyhow::Error::new(e).context(format!("writing {}", path.display()))),
            None => Ok(()),
        }
    }
}

impl TrainHooks for MetricsSink {
    fn on_epoch(&mut self, record: &MetricsRecord) {
        if self.error.is_some() {
            return;
        }
        let file = match &mut self.stage1 {
            Some((f, n)) if self.seen < *n => f,
            _ => &mut self.main,
        };
        if let Err(e) = file.row(record) {
            self.error = Some((file.path.clone(), e));
        }
        self.seen += 1;
    }
}

/// Writes the rows of `x` under `prefix0, prefix1, ...` headers.
pub fn write_matrix_csv(path: &Path, prefix: &str, cols: usize, rows: &[Vec<f64>]) -> Result<()> {
    let mut out = create(path)?;
    let header: Vec<String> = (0..cols).map(|j| format!("{prefix}{j}")).collect();
    let ctx = || format!("writing {}", path.display());
    writeln!(out, "{}", header.join(",")).with_context(ctx)?;
    for row in rows {
        let cells: Vec<String> = row.iter().copied().map(fmt_float).collect();
        writeln!(out, "{}", cells.join(",")).with_context(ctx)?;
    }
    out.flush().with_context(ctx)?;
    Ok(())
}

/// Per-method result written to `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub epochs: usize,
    /// Mean and std of test accuracy over the last 50 evaluated epochs;
    /// `null` when fewer were evaluated.
    pub last_50: Option<RollingSummary>,
    pub last_100: Option<RollingSummary>,
    pub final_test_accuracy: Option<f64>,
}

impl MethodSummary {
    pub fn from_history(method: &str, history: &[MetricsRecord]) -> Self {
        let window = |n| rolling_summary(history, n).ok();
        Self {
            method: method.to_string(),
            epochs: history.len(),
            last_50: window(SUMMARY_WINDOWS[0]),
            last_100: window(SUMMARY_WINDOWS[1]),
            final_test_accuracy: history.iter().rev().find_map(|r| r.test_accuracy),
        }
    }

    pub fn window(&self, n: usize) -> Option<&RollingSummary> {
        match n {
            50 => self.last_50.as_ref(),
            100 => self.last_100.as_ref(),
            _ => None,
        }
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    out.flush().with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// One dataset row of a comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub dataset: String,
    pub methods: Vec<MethodSummary>,
}

/// Plain-text table: one row per dataset, a `last 50` and `last 100`
/// column per method, cells as percent `mean ± std`.
pub fn comparison_table(rows: &[ComparisonRow]) -> String {
    let mut header = vec!["dataset".to_string()];
    if let Some(first) = rows.first() {
        for m in &first.methods {
            for n in SUMMARY_WINDOWS {
                header.push(format!("{} (last {n})", m.method));
            }
        }
    }
    let mut table = vec![header];
    for row in rows {
        let mut cells = vec![row.dataset.clone()];
        for m in &row.methods {
            for n in SUMMARY_WINDOWS {
                cells.push(m.window(n).map_or_else(|| "n/a".into(), RollingSummary::to_percent_string));
            }
        }
        table.push(cells);
    }
    let ncols = table.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..ncols)
        .map(|j| table.iter().filter_map(|r| r.get(j)).map(|c| c.chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (i, r) in table.iter().enumerate() {
        let line: Vec<String> = r
            .iter()
            .zip(&widths)
            .map(|(c, &w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
            .collect();
        out.push_str(line.join(" | ").trim_end());
        out.push('\n');
        if i == 0 {
            let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
            out.push_str(&rule.join("-+-"));
            out.push('\n');
        }
    }
    out
}
