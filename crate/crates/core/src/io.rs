//! Reading datasets, persisting learned metrics and writing evaluation
//! reports. Every writer goes through a temporary file in the target
//! directory followed by a rename, so readers never observe a partial file.
//! Concurrent writers to the same path race; the last rename wins.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{DatasetFingerprint, LabeledDataset};
use crate::error::{Error, Result};
use crate::eval::EvalReport;
use crate::learn::{GmmlConfig, LearnedMetric, Prior, Provenance};
use crate::spd::{SpdMatrix, SymMatrix};

pub const METRIC_FORMAT: &str = "gmml-metric";
pub const METRIC_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Delimiter {
    /// Comma if the first data row contains one, whitespace otherwise.
    #[default]
    Auto,
    Comma,
    Whitespace,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LoadOptions {
    /// Zero-based label column; `None` means the last column.
    pub label_column: Option<usize>,
    pub delimiter: Delimiter,
}

/// Reads a delimited text dataset. The dataset is named after the file stem.
pub fn load_dataset(path: impl AsRef<Path>, opts: &LoadOptions) -> Result<LabeledDataset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let ds = parse_dataset(&text, path, opts)?;
    Ok(match path.file_stem().and_then(|s| s.to_str()) {
        Some(stem) => ds.with_name(stem),
        None => ds,
    })
}

/// Parses delimited text, one sample per row. Blank lines and lines starting
/// with `#` are skipped. A first row whose fields are all non-numeric is
/// taken as a header of feature names.
///
/// Labels that all parse as integers are coded by ascending numeric value;
/// otherwise labels are coded in order of first appearance. The original
/// spellings are kept as the dataset's label names.
pub fn parse_dataset(text: &str, path: &Path, opts: &LoadOptions) -> Result<LabeledDataset> {
    let rows: Vec<(usize, &str)> = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
        .collect();
    let Some(&(_, first)) = rows.first() else {
        return Err(Error::EmptyFile { path: path.into() });
    };
    let comma = match opts.delimiter {
        Delimiter::Comma => true,
        Delimiter::Whitespace => false,
        Delimiter::Auto => first.contains(','),
    };
    let split = |line: &'_ str| -> Vec<String> {
        if comma {
            line.split(',').map(|f| f.trim().to_owned()).collect()
        } else {
            line.split_whitespace().map(str::to_owned).collect()
        }
    };

    let width = split(first).len();
    if width < 2 {
        return Err(Error::Parse {
            path: path.into(),
            line: rows[0].0,
            message: format!("need at least one feature and a label, found {width} field(s)"),
        });
    }
    let label_col = opts.label_column.unwrap_or(width - 1);
    if label_col >= width {
        return Err(Error::param(
            "label-column",
            format!("column {label_col} out of range for {width} fields"),
        ));
    }

    let mut body = &rows[..];
    let mut feature_names = None;
    let header = split(first);
    if header.iter().all(|f| f.parse::<f64>().is_err()) {
        feature_names = Some(
            header
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != label_col)
                .map(|(_, f)| f.clone())
                .collect::<Vec<_>>(),
        );
        body = &rows[1..];
    }
    if body.is_empty() {
        return Err(Error::EmptyFile { path: path.into() });
    }

    let dim = width - 1;
    let mut points = Vec::with_capacity(body.len() * dim);
    let mut raw_labels = Vec::with_capacity(body.len());
    for &(line, text) in body {
        let fields = split(text);
        if fields.len() != width {
            return Err(Error::InconsistentWidth {
                path: path.into(),
                line,
                expected: width,
                found: fields.len(),
            });
        }
        for (j, f) in fields.iter().enumerate() {
            if j == label_col {
                continue;
            }
            let v: f64 = f.parse().map_err(|_| Error::Parse {
                path: path.into(),
                line,
                message: format!("column {j}: '{f}' is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    path: path.into(),
                    line,
                    message: format!("column {j}: non-finite value '{f}'"),
                });
            }
            points.push(v);
        }
        if fields[label_col].is_empty() {
            return Err(Error::Parse {
                path: path.into(),
                line,
                message: "empty label".into(),
            });
        }
        raw_labels.push(fields[label_col].clone());
    }

    let (labels, names) = code_labels(&raw_labels);
    let mut ds = LabeledDataset::with_num_classes(points, dim, labels, names.len())?.with_label_names(names);
    if let Some(f) = feature_names {
        ds = ds.with_feature_names(f);
    }
    Ok(ds)
}

fn code_labels(raw: &[String]) -> (Vec<usize>, Vec<String>) {
    let ints: Option<Vec<i64>> = raw.iter().map(|s| s.parse::<i64>().ok()).collect();
    let numeric = ints.is_some();
    let names: Vec<String> = match ints {
        Some(mut values) => {
            values.sort_unstable();
            values.dedup();
            values.iter().map(i64::to_string).collect()
        }
        None => {
            let mut seen = Vec::new();
            for s in raw {
                if !seen.contains(s) {
                    seen.push(s.clone());
                }
            }
            seen
        }
    };
    let code: HashMap<&str, usize> = names.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let labels = raw
        .iter()
        .map(|s| match s.parse::<i64>() {
            Ok(v) if numeric => code[v.to_string().as_str()],
            _ => code[s.as_str()],
        })
        .collect();
    (labels, names)
}

fn matrix_hash(m: &SymMatrix) -> String {
    let mut h = Sha256::new();
    h.update((m.dim() as u64).to_le_bytes());
    for v in m.as_matrix().as_slice() {
        h.update(v.to_bits().to_le_bytes());
    }
    let digest = h.finalize();
    digest[..8].iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// On-disk metric document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct MetricFile {
    format: String,
    version: u32,
    dim: usize,
    /// Full matrix, row-major.
    matrix: Vec<f64>,
    config: ConfigRecord,
    riccati_residual: Option<f64>,
    sim_pairs: usize,
    dis_pairs: usize,
    created_unix: u64,
    dataset: Option<DatasetFingerprint>,
    label_names: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ConfigRecord {
    t: f64,
    lambda: f64,
    prior: PriorRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PriorRecord {
    kind: String,
    hash: String,
    /// Present only for a custom prior.
    matrix: Option<Vec<f64>>,
}

fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(|e| Error::io(&dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn save_metric(metric: &LearnedMetric, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let dim = metric.dim();
    let prior = match metric.config.prior() {
        Prior::Identity => PriorRecord {
            kind: "identity".into(),
            hash: matrix_hash(&SymMatrix::identity(dim)),
            matrix: None,
        },
        Prior::Matrix(m) => PriorRecord {
            kind: "matrix".into(),
            hash: matrix_hash(m),
            matrix: Some(m.as_matrix().as_slice().to_vec()),
        },
    };
    let doc = MetricFile {
        format: METRIC_FORMAT.into(),
        version: METRIC_VERSION,
        dim,
        matrix: metric.a_mat.as_matrix().as_slice().to_vec(),
        config: ConfigRecord {
            t: metric.config.t(),
            lambda: metric.config.lambda(),
            prior,
        },
        riccati_residual: metric.provenance.riccati_residual,
        sim_pairs: metric.provenance.sim_count,
        dis_pairs: metric.provenance.dis_count,
        created_unix: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_secs()),
        dataset: metric.provenance.dataset.clone(),
        label_names: metric.provenance.label_names.clone(),
    };
    let mut text = serde_json::to_string_pretty(&doc)?;
    text.push('\n');
    atomic_write(path, text.as_bytes())
}

fn spd_from_entries(dim: usize, entries: Vec<f64>, what: &str) -> Result<SpdMatrix> {
    if entries.len() != dim * dim {
        return Err(Error::CorruptMatrix(format!(
            "{what} has {} entries, expected {}",
            entries.len(),
            dim * dim
        )));
    }
    for i in 0..dim {
        for j in 0..i {
            let (a, b) = (entries[i * dim + j], entries[j * dim + i]);
            if a != b {
                return Err(Error::CorruptMatrix(format!("{what} is not symmetric at ({i}, {j})")));
            }
        }
    }
    let sym = SymMatrix::from_row_major(dim, entries).map_err(|e| Error::CorruptMatrix(format!("{what}: {e}")))?;
    SpdMatrix::new(sym).map_err(|e| Error::CorruptMatrix(format!("{what}: {e}")))
}

pub fn load_metric(path: impl AsRef<Path>) -> Result<LearnedMetric> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_metric(&text)
}

/// Parses a metric document; all checks happen before anything is returned.
pub fn parse_metric(text: &str) -> Result<LearnedMetric> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    match value.get("format").and_then(|v| v.as_str()) {
        Some(METRIC_FORMAT) => {}
        other => {
            return Err(Error::CorruptMatrix(format!(
                "not a metric file (format field is {other:?})"
            )))
        }
    }
    let version = value
        .get("version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::CorruptMatrix("missing version field".into()))?;
    if version != u64::from(METRIC_VERSION) {
        return Err(Error::VersionMismatch {
            found: u32::try_from(version).unwrap_or(u32::MAX),
            expected: METRIC_VERSION,
        });
    }
    let doc: MetricFile = serde_json::from_value(value)?;
    let a_mat = spd_from_entries(doc.dim, doc.matrix, "metric matrix")?;
    let prior = match (doc.config.prior.kind.as_str(), doc.config.prior.matrix) {
        ("identity", _) => Prior::Identity,
        ("matrix", Some(m)) => Prior::Matrix(spd_from_entries(doc.dim, m, "prior matrix")?),
        (kind, _) => return Err(Error::CorruptMatrix(format!("unknown prior kind '{kind}'"))),
    };
    let config = GmmlConfig::new(doc.config.t, doc.config.lambda, prior)
        .map_err(|e| Error::CorruptMatrix(format!("config: {e}")))?;
    Ok(LearnedMetric {
        a_mat,
        config,
        provenance: Provenance {
            sim_count: doc.sim_pairs,
            dis_count: doc.dis_pairs,
            riccati_residual: doc.riccati_residual,
            dataset: doc.dataset,
            label_names: doc.label_names,
        },
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum ReportFormat {
    #[default]
    Table,
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "table" => Ok(Self::Table),
            "json" => Ok(Self::Json),
            _ => Err(Error::param("format", format!("expected 'table' or 'json', got '{s}'"))),
        }
    }
}

/// Distribution of chosen `t` values as `t×count` entries, ascending in `t`.
fn t_distribution(report: &EvalReport) -> String {
    let mut counts: Vec<(f64, usize)> = Vec::new();
    for t in report.records.iter().filter_map(|r| r.chosen_t) {
        match counts.iter_mut().find(|(u, _)| (u - t).abs() < 1e-9) {
            Some(entry) => entry.1 += 1,
            None => counts.push((t, 1)),
        }
    }
    if counts.is_empty() {
        return "-".into();
    }
    counts.sort_by(|a, b| a.0.total_cmp(&b.0));
    counts
        .iter()
        .map(|(t, c)| format!("{t:.2}x{c}"))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Renders reports as a plain-text table, one row per report in the order
/// given.
pub fn render_table(reports: &[EvalReport]) -> String {
    let header = [
        "dataset", "n", "d", "c", "method", "error (mean ± std)", "learn s", "runs", "failed", "t chosen",
    ];
    let rows: Vec<Vec<String>> = reports
        .iter()
        .map(|r| {
            let err = match (r.mean_error, r.std_error) {
                (Some(m), Some(s)) => format!("{:.2}% ± {:.2}%", 100.0 * m, 100.0 * s),
                _ => "n/a".into(),
            };
            vec![
                r.dataset.clone(),
                r.fingerprint.n.to_string(),
                r.fingerprint.d.to_string(),
                r.fingerprint.c.to_string(),
                match r.mode {
                    crate::eval::MetricMode::Gmml => "gmml".into(),
                    crate::eval::MetricMode::Euclidean => "euclidean".into(),
                },
                err,
                format!("{:.4}", r.mean_learn_secs()),
                r.records.len().to_string(),
                r.failures.to_string(),
                t_distribution(r),
            ]
        })
        .collect();
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: &mut dyn Iterator<Item = &str>| -> String {
        let s: Vec<String> = cells
            .zip(&widths)
            .map(|(c, w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
            .collect();
        s.join("  ").trim_end().to_owned()
    };
    let mut out = line(&mut header.iter().copied());
    out.push('\n');
    for row in &rows {
        out.push_str(&line(&mut row.iter().map(String::as_str)));
        out.push('\n');
    }
    out
}

/// Renders reports as JSON: a single object for one report, an array for
/// several.
pub fn render_json(reports: &[EvalReport]) -> Result<String> {
    let mut s = if reports.len() == 1 {
        serde_json::to_string_pretty(&reports[0])?
    } else {
        serde_json::to_string_pretty(reports)?
    };
    s.push('\n');
    Ok(s)
}

pub fn render_reports(reports: &[EvalReport], format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Table => Ok(render_table(reports)),
        ReportFormat::Json => render_json(reports),
    }
}

pub fn write_report(report: &EvalReport, path: impl AsRef<Path>, format: ReportFormat) -> Result<()> {
    write_reports(std::slice::from_ref(report), path, format)
}

pub fn write_reports(reports: &[EvalReport], path: impl AsRef<Path>, format: ReportFormat) -> Result<()> {
    atomic_write(path.as_ref(), render_reports(reports, format)?.as_bytes())
}

/// Reads a JSON report document written by [`write_report`] or
/// [`write_reports`].
pub fn read_reports(path: impl AsRef<Path>) -> Result<Vec<EvalReport>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    if value.is_array() {
        Ok(serde_json::from_value(value)?)
    } else {
        Ok(vec![serde_json::from_value(value)?])
    }
}
