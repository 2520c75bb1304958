//! Accuracy and group-fairness measures.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Predictions, reference labels and group membership (`1` = protected).
#[derive(Debug, Clone, Copy)]
pub struct GroupedPredictions<'a> {
    pub predictions: &'a [u8],
    pub labels: &'a [u8],
    pub group: &'a [u8],
}

impl<'a> GroupedPredictions<'a> {
    pub fn new(predictions: &'a [u8], labels: &'a [u8], group: &'a [u8]) -> Result<Self> {
        check_dim("labels", predictions.len(), labels.len())?;
        check_dim("group", predictions.len(), group.len())?;
        Ok(Self {
            predictions,
            labels,
            group,
        })
    }
}

/// Positive-prediction rate among rows selected by `keep`.
fn positive_rate(gp: &GroupedPredictions<'_>, keep: impl Fn(usize) -> bool, what: &str) -> Result<f64> {
    let (mut n, mut pos) = (0usize, 0usize);
    for i in 0..gp.predictions.len() {
        if keep(i) {
            n += 1;
            pos += (gp.predictions[i] == 1) as usize;
        }
    }
    if n == 0 {
        return Err(Error::Metric(format!("{what} is empty")));
    }
    Ok(pos as f64 / n as f64)
}

/// `|P(y_hat=1 | a=1) - P(y_hat=1 | a=0)|`.
pub fn delta_dp(gp: &GroupedPredictions<'_>) -> Result<f64> {
    let p1 = positive_rate(gp, |i| gp.group[i] == 1, "protected group")?;
    let p0 = positive_rate(gp, |i| gp.group[i] == 0, "privileged group")?;
    Ok((p1 - p0).abs())
}

/// Difference in true-positive rates between the groups.
pub fn deo(gp: &GroupedPredictions<'_>) -> Result<f64> {
    let p1 = positive_rate(gp, |i| gp.group[i] == 1 && gp.labels[i] == 1, "protected positives")?;
    let p0 = positive_rate(gp, |i| gp.group[i] == 0 && gp.labels[i] == 1, "privileged positives")?;
    Ok((p1 - p0).abs())
}

pub fn accuracy(predictions: &[u8], labels: &[u8]) -> Result<f64> {
    check_dim("labels", predictions.len(), labels.len())?;
    if predictions.is_empty() {
        return Err(Error::Metric("accuracy of an empty prediction vector".into()));
    }
    let hits = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / predictions.len() as f64)
}

/// One `(group, label)` cell of the contingency table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupCell {
    pub group: u8,
    pub label: u8,
    pub count: usize,
    pub predicted_positive: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    /// Ordered `(0,0), (0,1), (1,0), (1,1)`.
    pub cells: Vec<GroupCell>,
}

impl GroupReport {
    pub fn total(&self) -> usize {
        self.cells.iter().map(|c| c.count).sum()
    }

    fn group_sums(&self, group: u8, label: Option<u8>) -> (usize, usize) {
        self.cells
            .iter()
            .filter(|c| c.group == group && label.is_none_or(|l| c.label == l))
            .fold((0, 0), |(n, p), c| (n + c.count, p + c.predicted_positive))
    }

    pub fn group_size(&self, group: u8) -> usize {
        self.group_sums(group, None).0
    }

    /// Fraction of positive labels within a group.
    pub fn base_rate(&self, group: u8) -> Option<f64> {
        let n = self.group_size(group);
        let pos = self.group_sums(group, Some(1)).0;
        (n > 0).then(|| pos as f64 / n as f64)
    }

    pub fn positive_prediction_rate(&self, group: u8) -> Option<f64> {
        let (n, p) = self.group_sums(group, None);
        (n > 0).then(|| p as f64 / n as f64)
    }

    pub fn true_positive_rate(&self, group: u8) -> Option<f64> {
        let (n, p) = self.group_sums(group, Some(1));
        (n > 0).then(|| p as f64 / n as f64)
    }

    pub fn delta_dp(&self) -> Option<f64> {
        Some((self.positive_prediction_rate(1)? - self.positive_prediction_rate(0)?).abs())
    }

    pub fn deo(&self) -> Option<f64> {
        Some((self.true_positive_rate(1)? - self.true_positive_rate(0)?).abs())
    }

    fn rows(&self) -> Vec<[String; 6]> {
        let fmt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        let mut out = Vec::new();
        for c in &self.cells {
            let rate = (c.count > 0).then(|| c.predicted_positive as f64 / c.count as f64);
            out.push([
                c.group.to_string(),
                c.label.to_string(),
                c.count.to_string(),
                c.predicted_positive.to_string(),
                fmt(rate),
                fmt(self.base_rate(c.group)),
            ]);
        }
        out
    }

    const HEADER: [&'static str; 6] = ["group", "label", "count", "predicted_positive", "positive_rate", "base_rate"];

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(Self::HEADER)?;
        for r in self.rows() {
            w.write_record(&r)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Metric(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// Right-aligned plain-text table.
    pub fn to_text(&self) -> String {
        let rows = self.rows();
        let widths: Vec<usize> = (0..6)
            .map(|j| rows.iter().map(|r| r[j].len()).chain([Self::HEADER[j].len()]).max().unwrap_or(0))
            .collect();
        let mut s = String::new();
        let line = |s: &mut String, cells: &[&str]| {
            let parts: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:>w$}")).collect();
            let _ = writeln!(s, "{}", parts.join("  "));
        };
        line(&mut s, &Self::HEADER);
        for r in &rows {
            line(&mut s, &r.iter().map(String::as_str).collect::<Vec<_>>());
        }
        let fmt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "n/a".into());
        let _ = writeln!(s, "delta_dp = {}  deo = {}", fmt(self.delta_dp()), fmt(self.deo()));
        s
    }
}

/// Exhaustive contingency table of group x label with prediction counts.
pub fn group_report(gp: &GroupedPredictions<'_>) -> GroupReport {
    let mut cells = Vec::with_capacity(4);
    for group in 0..2u8 {
        for label in 0..2u8 {
            let (mut count, mut pos) = (0, 0);
            for i in 0..gp.predictions.len() {
                if gp.group[i] == group && gp.labels[i] == label {
                    count += 1;
                    pos += (gp.predictions[i] == 1) as usize;
                }
            }
            cells.push(GroupCell {
                group,
                label,
                count,
                predicted_positive: pos,
            });
        }
    }
    GroupReport { cells }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gp<'a>(p: &'a [u8], l: &'a [u8], g: &'a [u8]) -> GroupedPredictions<'a> {
        GroupedPredictions::new(p, l, g).unwrap()
    }

    #[test]
    fn parity_examples() {
        let g = [1, 0, 1, 0];
        assert_eq!(delta_dp(&gp(&[1, 1, 1, 1], &[0; 4], &g)).unwrap(), 0.0);
        assert_eq!(delta_dp(&gp(&g, &[0; 4], &g)).unwrap(), 1.0);
        assert_eq!(delta_dp(&gp(&[1, 1, 0, 0], &[0; 4], &[1, 0, 1, 0])).unwrap(), 0.0);
    }

    #[test]
    fn deo_examples() {
        let y = [1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1];
        let g = [1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0];
        // Protected TPR 6/10, privileged 9/10.
        let p = [1, 1, 1, 1, 1, 1, 0, 0, 0, 0, 1, 1, 1, 1, 1, 1, 1, 1, 1, 0];
        assert!((deo(&gp(&p, &y, &g)).unwrap() - 0.3).abs() < 1e-12);
        let yy = [1, 0, 1, 0];
        assert_eq!(deo(&gp(&yy, &yy, &[1, 1, 0, 0])).unwrap(), 0.0);
        assert_eq!(deo(&gp(&[1; 4], &yy, &[1, 1, 0, 0])).unwrap(), 0.0);
    }

    #[test]
    fn empty_groups_are_errors() {
        assert!(matches!(delta_dp(&gp(&[1, 0], &[1, 0], &[1, 1])), Err(Error::Metric(_))));
        assert!(matches!(deo(&gp(&[1, 0], &[1, 0], &[1, 0])), Err(Error::Metric(_))));
        assert!(accuracy(&[], &[]).is_err());
        assert!(accuracy(&[1], &[1, 0]).is_err());
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&[1, 0, 1], &[1, 0, 1]).unwrap(), 1.0);
        assert_eq!(accuracy(&[0, 1], &[1, 0]).unwrap(), 0.0);
        assert_eq!(accuracy(&[1, 1, 0, 0], &[1, 0, 1, 0]).unwrap(), 0.5);
    }

    #[test]
    fn report_formats() {
        let r = group_report(&gp(&[1, 0, 1, 1], &[1, 0, 0, 1], &[1, 1, 0, 0]));
        assert_eq!(r.total(), 4);
        let csv = r.to_csv().unwrap();
        assert!(csv.starts_with("group,label,count,predicted_positive,positive_rate,base_rate\n"));
        assert_eq!(csv.lines().count(), 5);
        let text = r.to_text();
        assert!(text.contains("delta_dp = 0.5000"));
    }
}
