use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Axis, CellResult, Summary, SweepResult};
use crate::error::{Error, Result};
use crate::metrics::{fixed2, round_half_even_2, EvaluationReport, METRIC_NOTE};
use crate::net::ModelKind;

/// Row keys in table order.
pub const ROWS: [&str; 5] = ["kappa", "oa", "aa", "tr_seconds", "te_seconds"];
const ROW_LABELS: [&str; 5] = ["kappa (%)", "OA (%)", "AA (%)", "Tr Time (s)", "Te Time (s)"];

/// Metrics scaled to percent, times left in seconds.
fn row_values(s: &Summary) -> [f64; 5] {
    [s.kappa * 100.0, s.oa * 100.0, s.aa * 100.0, s.tr_seconds, s.te_seconds]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetTable {
    pub dataset: String,
    pub columns: Vec<String>,
    /// Row key -> one mean per column, rounded to two decimals.
    pub rows: BTreeMap<String, Vec<f64>>,
    pub std: BTreeMap<String, Vec<f64>>,
    pub runs: Vec<usize>,
    pub failures: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportTable {
    pub axis: Axis,
    pub model: ModelKind,
    pub tables: Vec<DatasetTable>,
}

fn column_name(axis: Axis, value: usize) -> String {
    match axis {
        Axis::Spatial => format!("{value}x{value}"),
        Axis::Fraction => format!("{value}%"),
    }
}

/// Tables with kappa / OA / AA / Tr / Te rows, one per dataset, one column
/// per swept value. Returns the table and its text rendering.
pub fn report(result: &SweepResult) -> (ReportTable, String) {
    let mut by_dataset: Vec<(String, Vec<&CellResult>)> = Vec::new();
    for c in &result.cells {
        match by_dataset.iter_mut().find(|(d, _)| *d == c.dataset) {
            Some((_, v)) => v.push(c),
            None => by_dataset.push((c.dataset.clone(), vec![c])),
        }
    }
    let mut tables = Vec::new();
    for (dataset, mut cells) in by_dataset {
        cells.sort_by_key(|c| c.value);
        let mut rows: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        let mut std: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for c in &cells {
            for (k, (m, s)) in ROWS.iter().zip(row_values(&c.mean).into_iter().zip(row_values(&c.std))) {
                rows.entry(k.to_string()).or_default().push(round_half_even_2(m));
                std.entry(k.to_string()).or_default().push(round_half_even_2(s));
            }
        }
        tables.push(DatasetTable {
            dataset,
            columns: cells.iter().map(|c| column_name(result.axis, c.value)).collect(),
            rows,
            std,
            runs: cells.iter().map(|c| c.reports.len()).collect(),
            failures: cells.iter().map(|c| c.failures.len()).collect(),
        });
    }
    let table = ReportTable {
        axis: result.axis,
        model: result.model,
        tables,
    };
    let text = render_text(&table);
    (table, text)
}

fn render_text(t: &ReportTable) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# {METRIC_NOTE}");
    let _ = writeln!(s, "# model: {}  axis: {}  (mean +/- std over runs)", t.model, t.axis.as_str());
    for d in &t.tables {
        let _ = writeln!(s);
        let _ = writeln!(s, "dataset: {}", d.dataset);
        let _ = write!(s, "{:<14}", "");
        for c in &d.columns {
            let _ = write!(s, "{c:>18}");
        }
        let _ = writeln!(s);
        for (key, label) in ROWS.iter().zip(ROW_LABELS) {
            let _ = write!(s, "{label:<14}");
            for (m, sd) in d.rows[*key].iter().zip(&d.std[*key]) {
                let _ = write!(s, "{:>18}", format!("{} +/- {}", fixed2(*m), fixed2(*sd)));
            }
            let _ = writeln!(s);
        }
        let _ = write!(s, "{:<14}", "runs");
        for (r, f) in d.runs.iter().zip(&d.failures) {
            let cell = if *f > 0 { format!("{r} ({f} failed)") } else { r.to_string() };
            let _ = write!(s, "{cell:>18}");
        }
        let _ = writeln!(s);
    }
    s
}

/// Rebuilds sweep results from the report files under a results root laid
/// out as `<dataset>/<model>/<axis>=<value>/run<k>/report.json`. Nothing is
/// written.
pub fn collect_results(root: &Path) -> Result<Vec<SweepResult>> {
    let mut found: BTreeMap<(ModelKind, Axis), BTreeMap<(String, usize), Vec<(usize, EvaluationReport)>>> = BTreeMap::new();
    let entries = |p: &Path| -> Result<Vec<std::path::PathBuf>> {
        let mut v: Vec<_> = std::fs::read_dir(p)
            .map_err(|e| Error::io(p, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect();
        v.sort();
        Ok(v)
    };
    if !root.is_dir() {
        return Err(Error::NoResults(root.to_path_buf()));
    }
    for ds in entries(root)? {
        let dataset = name_of(&ds);
        for md in entries(&ds)? {
            let Ok(model) = name_of(&md).parse::<ModelKind>() else { continue };
            for cell in entries(&md)? {
                let name = name_of(&cell);
                let Some((axis, value)) = name.split_once('=') else { continue };
                let (Some(axis), Ok(value)) = (Axis::parse(axis), value.parse::<usize>()) else { continue };
                for run in entries(&cell)? {
                    let rn = name_of(&run);
                    let Some(k) = rn.strip_prefix("run").and_then(|k| k.parse::<usize>().ok()) else { continue };
                    let path = run.join(crate::pipeline::files::REPORT);
                    if !path.is_file() {
                        continue;
                    }
                    let rep = EvaluationReport::load(&path)?;
                    found
                        .entry((model, axis))
                        .or_default()
                        .entry((dataset.clone(), value))
                        .or_default()
                        .push((k, rep));
                }
            }
        }
    }
    if found.is_empty() {
        return Err(Error::NoResults(root.to_path_buf()));
    }
    Ok(found
        .into_iter()
        .map(|((model, axis), cells)| SweepResult {
            axis,
            model,
            cells: cells
                .into_iter()
                .map(|((dataset, value), mut runs)| {
                    runs.sort_by_key(|(k, _)| *k);
                    let reports = runs.into_iter().map(|(_, r)| r).collect();
                    CellResult::new(dataset, value, Vec::new(), reports, Vec::new())
                })
                .collect(),
        })
        .collect())
}

fn name_of(p: &Path) -> String {
    p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}
