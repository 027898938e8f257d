//! Per-fold reports, mean±std aggregation, text tables and CSV.

use std::fmt::Write as _;
use std::path::Path;

use super::{ConfusionMatrix, MetricsError, ScCounts, ScMetrics, SscMetrics, SEMANTIC_CLASSES};

pub const CLASS_NAMES: [&str; SEMANTIC_CLASSES] = [
    "ceil.", "floor", "wall", "win.", "chair", "bed", "sofa", "table", "tvs", "furn.", "objs",
];

pub const CSV_HEADER: &str =
    "fold,sc_precision,sc_recall,sc_iou,ceil,floor,wall,win,chair,bed,sofa,table,tvs,furn,objs,ssc_miou";

/// One fold's scores, all in percent.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub fold_id: usize,
    pub sc_precision: f64,
    pub sc_recall: f64,
    pub sc_iou: f64,
    /// Classes 1–11; `None` when absent from both prediction and ground truth.
    pub per_class_iou: [Option<f64>; SEMANTIC_CLASSES],
    pub ssc_miou: f64,
    /// Set when some SC ratio had a zero denominator.
    pub zero_denominator: bool,
}

impl EvalReport {
    pub fn new(fold_id: usize, sc: &ScMetrics, ssc: &SscMetrics) -> Self {
        EvalReport {
            fold_id,
            sc_precision: sc.precision,
            sc_recall: sc.recall,
            sc_iou: sc.iou,
            per_class_iou: ssc.per_class_iou,
            ssc_miou: ssc.miou,
            zero_denominator: sc.zero_denominator,
        }
    }

    /// Report over a dataset from its accumulated counts.
    pub fn from_counts(fold_id: usize, sc: &ScCounts, cm: &ConfusionMatrix) -> Self {
        Self::new(fold_id, &sc.metrics(), &SscMetrics::from_confusion(cm))
    }

    pub fn to_csv_row(&self) -> String {
        let mut s = format!(
            "{},{},{},{}",
            self.fold_id, self.sc_precision, self.sc_recall, self.sc_iou
        );
        for v in &self.per_class_iou {
            s.push(',');
            if let Some(v) = v {
                write!(s, "{v}").unwrap();
            }
        }
        write!(s, ",{}", self.ssc_miou).unwrap();
        s
    }

    pub fn from_csv_row(row: &str) -> Result<Self, MetricsError> {
        let f: Vec<&str> = row.trim().split(',').collect();
        if f.len() != 5 + SEMANTIC_CLASSES {
            return Err(MetricsError::FormatViolation(format!(
                "report row has {} fields: `{row}`",
                f.len()
            )));
        }
        let num = |s: &str| -> Result<f64, MetricsError> {
            s.parse()
                .map_err(|_| MetricsError::FormatViolation(format!("bad number `{s}` in `{row}`")))
        };
        let fold_id = f[0]
            .parse()
            .map_err(|_| MetricsError::FormatViolation(format!("bad fold id `{}`", f[0])))?;
        let mut per_class_iou = [None; SEMANTIC_CLASSES];
        for (c, s) in f[4..4 + SEMANTIC_CLASSES].iter().enumerate() {
            if !s.is_empty() {
                per_class_iou[c] = Some(num(s)?);
            }
        }
        Ok(EvalReport {
            fold_id,
            sc_precision: num(f[1])?,
            sc_recall: num(f[2])?,
            sc_iou: num(f[3])?,
            per_class_iou,
            ssc_miou: num(f[4 + SEMANTIC_CLASSES])?,
            zero_denominator: false,
        })
    }
}

pub fn write_reports_csv(path: &Path, reports: &[EvalReport]) -> Result<(), MetricsError> {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in reports {
        s.push_str(&r.to_csv_row());
        s.push('\n');
    }
    std::fs::write(path, s)?;
    Ok(())
}

pub fn read_reports_csv(path: &Path) -> Result<Vec<EvalReport>, MetricsError> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty() && !l.starts_with('#'));
    match lines.next() {
        Some(h) if h.trim() == CSV_HEADER => {}
        other => {
            return Err(MetricsError::FormatViolation(format!(
                "{}: expected header `{CSV_HEADER}`, got {other:?}",
                path.display()
            )))
        }
    }
    lines.map(EvalReport::from_csv_row).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanStd {
    pub mean: f64,
    /// Bessel-corrected sample standard deviation.
    pub std: f64,
    /// Number of folds the statistic is taken over.
    pub n: usize,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Option<Self> {
        let n = values.len();
        if n == 0 {
            return None;
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        Some(MeanStd { mean, std, n })
    }

    /// Whether the mean±std intervals of two statistics overlap.
    pub fn overlaps(&self, other: &MeanStd) -> bool {
        self.mean - self.std <= other.mean + other.std && other.mean - other.std <= self.mean + self.std
    }
}

impl std::fmt::Display for MeanStd {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&format_mean_std(self.mean, self.std))
    }
}

/// `mean±std` at one decimal.
pub fn format_mean_std(mean: f64, std: f64) -> String {
    format!("{mean:.1}±{std:.1}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldSummary {
    pub folds: usize,
    pub sc_precision: MeanStd,
    pub sc_recall: MeanStd,
    pub sc_iou: MeanStd,
    /// Taken over the folds where the class is defined.
    pub per_class_iou: [Option<MeanStd>; SEMANTIC_CLASSES],
    pub ssc_miou: MeanStd,
}

pub fn aggregate_folds(reports: &[EvalReport]) -> Result<FoldSummary, MetricsError> {
    if reports.len() < 2 {
        return Err(MetricsError::TooFewFolds(reports.len()));
    }
    let col = |f: &dyn Fn(&EvalReport) -> f64| MeanStd::of(&reports.iter().map(f).collect::<Vec<_>>()).unwrap();
    Ok(FoldSummary {
        folds: reports.len(),
        sc_precision: col(&|r| r.sc_precision),
        sc_recall: col(&|r| r.sc_recall),
        sc_iou: col(&|r| r.sc_iou),
        per_class_iou: std::array::from_fn(|c| {
            MeanStd::of(&reports.iter().filter_map(|r| r.per_class_iou[c]).collect::<Vec<_>>())
        }),
        ssc_miou: col(&|r| r.ssc_miou),
    })
}

fn render(header: &[String], rows: &[Vec<String>]) -> String {
    let cols = header.len();
    let width: Vec<usize> = (0..cols)
        .map(|c| {
            rows.iter()
                .map(|r| r[c].chars().count())
                .chain([header[c].chars().count()])
                .max()
                .unwrap()
        })
        .collect();
    let line = |cells: &[String]| {
        let mut s = String::new();
        for (c, cell) in cells.iter().enumerate() {
            let pad = width[c] - cell.chars().count();
            if c == 0 {
                write!(s, "{cell}{}", " ".repeat(pad)).unwrap();
            } else {
                write!(s, "  {}{cell}", " ".repeat(pad)).unwrap();
            }
        }
        s.trim_end().to_string()
    };
    let rule = "-".repeat(line(header).chars().count());
    let mut out = format!("{}\n{rule}\n", line(header));
    for r in rows {
        out.push_str(&line(r));
        out.push('\n');
    }
    out
}

/// Full results table: SC precision/recall/IoU, per-class IoU and mIoU, each
/// as mean±std over folds.
pub fn format_results_table(rows: &[(String, FoldSummary)]) -> String {
    let mut header = vec!["Method".to_string(), "Prec.".into(), "Recall".into(), "IoU".into()];
    header.extend(CLASS_NAMES.iter().map(|s| s.to_string()));
    header.push("mIoU".into());
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|(name, s)| {
            let mut r = vec![
                name.clone(),
                s.sc_precision.to_string(),
                s.sc_recall.to_string(),
                s.sc_iou.to_string(),
            ];
            r.extend(
                s.per_class_iou
                    .iter()
                    .map(|v| v.map_or("-".to_string(), |m| m.to_string())),
            );
            r.push(s.ssc_miou.to_string());
            r
        })
        .collect();
    render(&header, &body)
}

/// Two-metric ablation table (`SC-IoU%` and `SSC-mIoU%`), one row per variant.
pub fn format_ablation_table(first_column: &str, rows: &[(String, FoldSummary)]) -> String {
    let header = vec![first_column.to_string(), "SC-IoU%".into(), "SSC-mIoU%".into()];
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|(name, s)| vec![name.clone(), s.sc_iou.to_string(), s.ssc_miou.to_string()])
        .collect();
    render(&header, &body)
}
