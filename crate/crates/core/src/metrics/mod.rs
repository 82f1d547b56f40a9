//! Confusion matrices, overall/average accuracy, Cohen's kappa, report
//! formatting and classification map rendering.

mod render;

use std::fmt::Write as _;
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

pub use render::{render_ground_truth, render_map, save_png, ClassMap};

use crate::error::{Error, Result};

/// C x C counts; entry (i, j) holds samples of true class i+1 predicted as
/// class j+1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: usize,
    pub counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn zeros(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    /// Builds a matrix from nested rows.
    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let c = rows.len();
        if rows.iter().any(|r| r.len() != c) {
            return Err(Error::Shape("confusion matrix must be square".into()));
        }
        Ok(Self {
            classes: c,
            counts: rows.concat(),
        })
    }

    #[inline]
    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes).map(|i| self.get(i, i)).sum()
    }

    pub fn row_sum(&self, i: usize) -> u64 {
        self.counts[i * self.classes..(i + 1) * self.classes].iter().sum()
    }

    pub fn col_sum(&self, j: usize) -> u64 {
        (0..self.classes).map(|i| self.get(i, j)).sum()
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts.chunks(self.classes.max(1)).map(<[u64]>::to_vec).collect()
    }

    /// Recall of each class; `None` for classes without true samples.
    pub fn recalls(&self) -> Vec<Option<f64>> {
        (0..self.classes)
            .map(|i| {
                let r = self.row_sum(i);
                (r > 0).then(|| self.get(i, i) as f64 / r as f64)
            })
            .collect()
    }
}

/// Tallies 1-based label pairs.
pub fn confusion(pred: &[usize], truth: &[usize], classes: usize) -> Result<ConfusionMatrix> {
    if pred.len() != truth.len() {
        return Err(Error::SizeMismatch {
            expected: truth.len(),
            found: pred.len(),
        });
    }
    let mut m = ConfusionMatrix::zeros(classes);
    for (i, (&p, &t)) in pred.iter().zip(truth).enumerate() {
        for v in [p, t] {
            if v == 0 || v > classes {
                return Err(Error::InvalidLabel { index: i, value: v as f64 });
            }
        }
        m.counts[(t - 1) * classes + (p - 1)] += 1;
    }
    Ok(m)
}

/// trace / n; zero for an empty matrix.
pub fn overall_accuracy(m: &ConfusionMatrix) -> f64 {
    let n = m.total();
    if n == 0 {
        return 0.0;
    }
    m.trace() as f64 / n as f64
}

/// Mean recall over classes that have at least one true sample.
pub fn average_accuracy(m: &ConfusionMatrix) -> f64 {
    let present: Vec<f64> = m.recalls().into_iter().flatten().collect();
    if present.is_empty() {
        return 0.0;
    }
    present.iter().sum::<f64>() / present.len() as f64
}

/// Cohen's kappa `(P_o - P_e) / (1 - P_e)`. When `P_e = 1` (all mass in a
/// single cell) kappa is defined as 0 and a warning is logged.
pub fn kappa(m: &ConfusionMatrix) -> f64 {
    let n = m.total();
    if n == 0 {
        return 0.0;
    }
    // scaled by n^2: (n * trace - sum r_i c_i) / (n^2 - sum r_i c_i), in
    // integers so that P_e = 1 is detected exactly and only the final
    // division rounds
    let chance: i128 = (0..m.classes)
        .map(|i| m.row_sum(i) as i128 * m.col_sum(i) as i128)
        .sum();
    let n = n as i128;
    let den = n * n - chance;
    if den == 0 {
        warn!("kappa undefined for a single-cell confusion matrix; reporting 0");
        return 0.0;
    }
    (n * m.trace() as i128 - chance) as f64 / den as f64
}

/// Wall-clock seconds attached to a report.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub train_seconds: f64,
    pub test_seconds: f64,
}

/// Metrics as fractions; text output shows them as percentages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub oa: f64,
    pub aa: f64,
    pub kappa: f64,
    /// Recall per class; `null` for classes absent from the evaluated set.
    pub per_class: Vec<Option<f64>>,
    pub confusion: Vec<Vec<u64>>,
    pub tr_seconds: f64,
    pub te_seconds: f64,
}

pub fn evaluate(pred: &[usize], truth: &[usize], classes: usize, timings: Timings) -> Result<EvaluationReport> {
    let m = confusion(pred, truth, classes)?;
    Ok(report_from_matrix(&m, timings))
}

pub fn report_from_matrix(m: &ConfusionMatrix, timings: Timings) -> EvaluationReport {
    EvaluationReport {
        oa: overall_accuracy(m),
        aa: average_accuracy(m),
        kappa: kappa(m),
        per_class: m.recalls(),
        confusion: m.rows(),
        tr_seconds: timings.train_seconds,
        te_seconds: timings.test_seconds,
    }
}

/// Header line carried by text reports.
pub const METRIC_NOTE: &str =
    "OA = correct / total; AA = mean per-class recall over classes present; kappa = (Po - Pe) / (1 - Pe)";

impl EvaluationReport {
    pub fn matrix(&self) -> ConfusionMatrix {
        ConfusionMatrix {
            classes: self.confusion.len(),
            counts: self.confusion.concat(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Table in the kappa / OA / AA / Tr / Te row order, values in percent.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# {METRIC_NOTE}");
        let _ = writeln!(s, "{:<10}{:>10}", "kappa (%)", percent(self.kappa));
        let _ = writeln!(s, "{:<10}{:>10}", "OA (%)", percent(self.oa));
        let _ = writeln!(s, "{:<10}{:>10}", "AA (%)", percent(self.aa));
        let _ = writeln!(s, "{:<10}{:>10}", "Tr (s)", fixed2(self.tr_seconds));
        let _ = writeln!(s, "{:<10}{:>10}", "Te (s)", fixed2(self.te_seconds));
        let _ = writeln!(s, "per-class recall (%):");
        for (i, r) in self.per_class.iter().enumerate() {
            let v = r.map_or_else(|| "-".to_string(), percent);
            let _ = writeln!(s, "  {:>3} {:>8}", i + 1, v);
        }
        s
    }
}

/// Rounds half to even at two decimals, working on the decimal expansion
/// of the f64 so that values like 66.665 round as written.
pub fn round_half_even_2(x: f64) -> f64 {
    fixed2(x).parse().expect("formatted number parses")
}

/// Two-decimal text with half-even rounding.
pub fn fixed2(x: f64) -> String {
    if !x.is_finite() {
        return format!("{x}");
    }
    // exact decimal expansion up to well past the third decimal
    let exact = format!("{:.30}", x.abs());
    let (int, frac) = exact.split_once('.').expect("fixed notation has a point");
    let digits: Vec<u8> = frac.bytes().map(|b| b - b'0').collect();
    let mut cents: u128 = int.parse::<u128>().expect("integer part") * 100 + (digits[0] * 10 + digits[1]) as u128;
    let rest = &digits[2..];
    let half = rest[0] == 5 && rest[1..].iter().all(|&d| d == 0);
    let above = rest[0] > 5 || (rest[0] == 5 && !half);
    if above || (half && cents % 2 == 1) {
        cents += 1;
    }
    let sign = if x < 0.0 && cents > 0 { "-" } else { "" };
    format!("{sign}{}.{:02}", cents / 100, cents % 100)
}

/// A fraction shown as a two-decimal percentage.
pub fn percent(x: f64) -> String {
    fixed2(x * 100.0)
}

#[cfg(test)]
mod tests;
