//! Confusion profiles: which labels does the classifier mix up?
//!
//! The profile is the row-normalized gold→predicted distribution fitted
//! on the dev split. Off-diagonal entries supply the weights applied to
//! contrastive negatives during embedder training.

use std::io::{BufRead, Write};

use crate::dataset::LabelSet;
use crate::error::{Error, Result};
use crate::util::argmax;

/// Row-stochastic C×C table: `prob(y, y')` is the probability the
/// classifier predicts `y'` when the gold label is `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionProfile {
    table: Vec<Vec<f64>>,
    support: Vec<usize>,
}

impl ConfusionProfile {
    /// Wrap a pre-normalized table. Each row must sum to 1 within 1e-9
    /// with non-negative entries. Supports are recorded as 1 per row
    /// since the underlying counts are unknown.
    pub fn from_rows(table: Vec<Vec<f64>>) -> Result<Self> {
        let c = table.len();
        if c < 2 {
            return Err(Error::BadConfig(format!(
                "confusion table needs at least 2 rows, got {c}"
            )));
        }
        for (y, row) in table.iter().enumerate() {
            if row.len() != c {
                return Err(Error::DimensionMismatch(format!(
                    "confusion row {y} has {} columns, expected {c}",
                    row.len()
                )));
            }
            if row.iter().any(|&p| p < 0.0) {
                return Err(Error::BadConfig(format!(
                    "confusion row {y} has a negative entry"
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::BadConfig(format!(
                    "confusion row {y} sums to {sum}, expected 1"
                )));
            }
        }
        Ok(ConfusionProfile {
            support: vec![1; c],
            table,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.table.len()
    }

    pub fn table(&self) -> &[Vec<f64>] {
        &self.table
    }

    /// Gold-class counts observed during fitting.
    pub fn support(&self) -> &[usize] {
        &self.support
    }

    /// P(predicted = `pred` | gold = `gold`).
    pub fn prob(&self, gold: usize, pred: usize) -> f64 {
        self.table[gold][pred]
    }

    /// Dump the table as CSV with a label-name header row and column.
    pub fn write_csv(&self, labels: &LabelSet, w: impl Write) -> Result<()> {
        write_table_csv(labels, &self.table, w)
    }

    /// The table with `smoothing` added to every off-diagonal entry,
    /// i.e. the raw negative weights each gold class would see.
    pub fn smoothed_table(&self, smoothing: f64) -> Vec<Vec<f64>> {
        self.table
            .iter()
            .enumerate()
            .map(|(y, row)| {
                row.iter()
                    .enumerate()
                    .map(|(p, &v)| if p == y { v } else { v + smoothing })
                    .collect()
            })
            .collect()
    }

    /// Parse the format produced by [`ConfusionProfile::write_csv`],
    /// returning the profile and the label names from the header.
    pub fn read_csv(r: impl BufRead) -> Result<(Self, Vec<String>)> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .transpose()
            .map_err(|e| Error::io("<reader>", e))?
            .ok_or_else(|| Error::Manifest("empty confusion csv".into()))?;
        let names: Vec<String> = header.split(',').skip(1).map(str::to_string).collect();
        let mut table = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line.map_err(|e| Error::io("<reader>", e))?;
            if line.trim().is_empty() {
                continue;
            }
            let mut cells = line.split(',');
            cells.next(); // row label
            let row: Result<Vec<f64>> = cells
                .map(|cell| {
                    cell.trim().parse::<f64>().map_err(|e| Error::Parse {
                        path: "<confusion csv>".into(),
                        line: i + 2,
                        message: format!("{cell:?}: {e}"),
                    })
                })
                .collect();
            let row = row?;
            if row.len() != names.len() {
                return Err(Error::DimensionMismatch(format!(
                    "confusion csv row {} has {} values, expected {}",
                    i + 2,
                    row.len(),
                    names.len()
                )));
            }
            table.push(row);
        }
        Ok((ConfusionProfile::from_rows(table)?, names))
    }
}

/// Write any C×C table as CSV with a label-name header row and column.
pub fn write_table_csv(labels: &LabelSet, table: &[Vec<f64>], mut w: impl Write) -> Result<()> {
    if labels.len() != table.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} labels for a {}-row table",
            labels.len(),
            table.len()
        )));
    }
    let mut header = String::from("gold\\pred");
    for name in labels.names() {
        header.push(',');
        header.push_str(name);
    }
    writeln!(w, "{header}").map_err(|e| Error::io("<writer>", e))?;
    for (y, row) in table.iter().enumerate() {
        let mut line = labels.name(y).unwrap_or("?").to_string();
        for v in row {
            line.push(',');
            line.push_str(&format!("{v}"));
        }
        writeln!(w, "{line}").map_err(|e| Error::io("<writer>", e))?;
    }
    Ok(())
}

/// Fit the gold→predicted distribution from dev logits.
///
/// Predictions are argmax with ties broken by the lowest index. Rows for
/// gold classes never seen on dev are uniform `1/C` so downstream
/// weighting stays defined.
pub fn fit_confusion(dev_logits: &[Vec<f64>], dev_gold: &[usize]) -> Result<ConfusionProfile> {
    if dev_logits.is_empty() {
        return Err(Error::EmptyInput("dev logits"));
    }
    if dev_logits.len() != dev_gold.len() {
        return Err(Error::LengthMismatch(format!(
            "{} logit rows vs {} gold labels",
            dev_logits.len(),
            dev_gold.len()
        )));
    }
    let c = dev_logits[0].len();
    if c < 2 {
        return Err(Error::DegenerateVector(c));
    }
    let mut counts = vec![vec![0usize; c]; c];
    let mut support = vec![0usize; c];
    for (z, &gold) in dev_logits.iter().zip(dev_gold) {
        if z.len() != c {
            return Err(Error::DimensionMismatch(format!(
                "logit row has {} columns, expected {c}",
                z.len()
            )));
        }
        if gold >= c {
            return Err(Error::BadLabel(format!(
                "gold index {gold} out of range for C={c}"
            )));
        }
        counts[gold][argmax(z)] += 1;
        support[gold] += 1;
    }
    let table = counts
        .iter()
        .zip(&support)
        .map(|(row, &s)| {
            if s == 0 {
                vec![1.0 / c as f64; c]
            } else {
                row.iter().map(|&n| n as f64 / s as f64).collect()
            }
        })
        .collect();
    Ok(ConfusionProfile { table, support })
}

/// Weights for the contrastive negatives of one gold class:
/// `P(gold, y') + smoothing` for every `y' != gold`, in label order.
/// The weights are used raw, never renormalized.
pub fn negative_weights(
    profile: &ConfusionProfile,
    gold: usize,
    smoothing: f64,
) -> Result<Vec<(usize, f64)>> {
    let c = profile.num_classes();
    if gold >= c {
        return Err(Error::BadLabel(format!(
            "gold index {gold} out of range for C={c}"
        )));
    }
    if smoothing < 0.0 {
        return Err(Error::BadConfig(format!(
            "smoothing must be non-negative, got {smoothing}"
        )));
    }
    Ok((0..c)
        .filter(|&y| y != gold)
        .map(|y| (y, profile.prob(gold, y) + smoothing))
        .collect())
}
