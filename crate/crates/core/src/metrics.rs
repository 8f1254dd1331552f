//! Support-weighted classification metrics and run comparison tables.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// K x K tally of (true, predicted) pairs, row = true class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionStats {
    num_classes: usize,
    counts: Vec<u64>,
}

impl ConfusionStats {
    pub fn new(num_classes: usize) -> Self {
        Self {
            num_classes,
            counts: vec![0; num_classes * num_classes],
        }
    }

    pub fn from_counts(num_classes: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != num_classes * num_classes {
            return Err(Error::InvalidArgument(format!(
                "{} counts for a {num_classes}x{num_classes} matrix",
                counts.len()
            )));
        }
        Ok(Self { num_classes, counts })
    }

    pub fn from_pairs(num_classes: usize, truth: &[usize], predicted: &[usize]) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::InvalidArgument(format!(
                "{} true labels vs {} predictions",
                truth.len(),
                predicted.len()
            )));
        }
        let mut cm = Self::new(num_classes);
        for (&t, &p) in truth.iter().zip(predicted) {
            cm.accumulate(t, p)?;
        }
        Ok(cm)
    }

    pub fn accumulate(&mut self, truth: usize, predicted: usize) -> Result<()> {
        let k = self.num_classes;
        if truth >= k || predicted >= k {
            return Err(Error::Label(format!(
                "pair ({truth}, {predicted}) outside {k} classes"
            )));
        }
        self.counts[truth * k + predicted] += 1;
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.num_classes + predicted]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn support(&self, class: usize) -> u64 {
        let k = self.num_classes;
        self.counts[class * k..(class + 1) * k].iter().sum()
    }

    pub fn predicted_count(&self, class: usize) -> u64 {
        (0..self.num_classes).map(|t| self.get(t, class)).sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..self.num_classes).map(|c| self.get(c, c)).sum()
    }

    pub fn accuracy(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            n => self.correct() as f64 / n as f64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub per_class: Vec<ClassMetrics>,
    /// Classes whose precision or recall had a zero denominator (reported as 0).
    pub undefined_classes: Vec<usize>,
}

/// Per-class precision/recall/F1 averaged with weights `support / total`.
/// Zero denominators give 0.
pub fn weighted_metrics(cm: &ConfusionStats) -> Result<WeightedMetrics> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::InvalidArgument("confusion matrix is empty".into()));
    }
    let mut per_class = Vec::with_capacity(cm.num_classes());
    let mut undefined = Vec::new();
    let (mut wp, mut wr, mut wf) = (0.0, 0.0, 0.0);
    for c in 0..cm.num_classes() {
        let tp = cm.get(c, c) as f64;
        let support = cm.support(c);
        let predicted = cm.predicted_count(c);
        if support == 0 || predicted == 0 {
            undefined.push(c);
        }
        let precision = if predicted == 0 { 0.0 } else { tp / predicted as f64 };
        let recall = if support == 0 { 0.0 } else { tp / support as f64 };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        let w = support as f64 / total as f64;
        wp += w * precision;
        wr += w * recall;
        wf += w * f1;
        per_class.push(ClassMetrics {
            precision,
            recall,
            f1,
            support,
        });
    }
    Ok(WeightedMetrics {
        precision: wp,
        recall: wr,
        f1: wf,
        per_class,
        undefined_classes: undefined,
    })
}

/// Everything reported for one classification run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub per_class: Vec<ClassMetrics>,
    pub flying_point_ratio: f64,
    pub coverage: f64,
    pub routed_windows: usize,
    pub accepted_windows: usize,
    pub samples: u64,
    #[serde(default)]
    pub notes: Vec<String>,
}

impl MetricsReport {
    pub fn from_parts(
        metrics: WeightedMetrics,
        samples: u64,
        flying_point_ratio: f64,
        coverage: f64,
        routed_windows: usize,
        accepted_windows: usize,
        class_names: &[String],
    ) -> Self {
        let notes = metrics
            .undefined_classes
            .iter()
            .map(|&c| {
                format!(
                    "class {} has zero support or zero predictions; its undefined terms are 0",
                    class_names.get(c).map_or("?", String::as_str)
                )
            })
            .collect();
        Self {
            precision: metrics.precision,
            recall: metrics.recall,
            f1: metrics.f1,
            per_class: metrics.per_class,
            flying_point_ratio,
            coverage,
            routed_windows,
            accepted_windows,
            samples,
            notes,
        }
    }

    pub fn to_csv(&self, class_names: &[String]) -> String {
        let mut out = String::from("scope,precision,recall,f1,support\n");
        out.push_str(&format!(
            "weighted,{:.6},{:.6},{:.6},{}\n",
            self.precision, self.recall, self.f1, self.samples
        ));
        for (c, m) in self.per_class.iter().enumerate() {
            let name = class_names.get(c).map_or("?", String::as_str);
            out.push_str(&format!(
                "{name},{:.6},{:.6},{:.6},{}\n",
                m.precision, m.recall, m.f1, m.support
            ));
        }
        out.push_str(&format!("flying_point_ratio,{:.6},,,\n", self.flying_point_ratio));
        out.push_str(&format!("coverage,{:.6},,,\n", self.coverage));
        out.push_str(&format!(
            "windows,routed={},accepted={},,\n",
            self.routed_windows, self.accepted_windows
        ));
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Better {
    Higher,
    Lower,
}

const COLUMNS: [(&str, Better); 5] = [
    ("precision", Better::Higher),
    ("recall", Better::Higher),
    ("f1", Better::Higher),
    ("flying_point_ratio", Better::Lower),
    ("coverage", Better::Higher),
];

fn column_value(r: &MetricsReport, col: usize) -> f64 {
    match col {
        0 => r.precision,
        1 => r.recall,
        2 => r.f1,
        3 => r.flying_point_ratio,
        _ => r.coverage,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub name: String,
    pub values: Vec<f64>,
    pub best: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonTable {
    pub columns: Vec<&'static str>,
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonTable {
    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| *c == name)
    }

    /// Comma-separated, columns padded; best values carry a trailing `*`.
    pub fn to_text(&self) -> String {
        let mut cells: Vec<Vec<String>> = vec![std::iter::once("run".to_string())
            .chain(self.columns.iter().map(|c| c.to_string()))
            .collect()];
        for row in &self.rows {
            let mut line = vec![row.name.clone()];
            for (v, best) in row.values.iter().zip(&row.best) {
                line.push(format!("{v:.4}{}", if *best { "*" } else { "" }));
            }
            cells.push(line);
        }
        let widths: Vec<usize> = (0..cells[0].len())
            .map(|i| cells.iter().map(|r| r[i].len()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for line in cells {
            let padded: Vec<String> = line
                .iter()
                .zip(&widths)
                .map(|(c, w)| format!("{c:<w$}"))
                .collect();
            out.push_str(padded.join(", ").trim_end());
            out.push('\n');
        }
        out
    }
}

/// Aligns named reports into one table; every value equal to the column's best is flagged.
pub fn compare_runs(reports: &[(String, MetricsReport)]) -> Result<ComparisonTable> {
    if reports.is_empty() {
        return Err(Error::InvalidArgument("no reports to compare".into()));
    }
    let mut rows: Vec<ComparisonRow> = reports
        .iter()
        .map(|(name, r)| ComparisonRow {
            name: name.clone(),
            values: (0..COLUMNS.len()).map(|c| column_value(r, c)).collect(),
            best: vec![false; COLUMNS.len()],
        })
        .collect();
    for (c, (_, better)) in COLUMNS.iter().enumerate() {
        let values = rows.iter().map(|r| r.values[c]);
        let best = match better {
            Better::Higher => values.fold(f64::NEG_INFINITY, f64::max),
            Better::Lower => values.fold(f64::INFINITY, f64::min),
        };
        for row in &mut rows {
            row.best[c] = row.values[c] == best;
        }
    }
    Ok(ComparisonTable {
        columns: COLUMNS.iter().map(|(n, _)| *n).collect(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn report(f1: f64) -> MetricsReport {
        MetricsReport {
            precision: 0.5,
            recall: 0.5,
            f1,
            per_class: vec![],
            flying_point_ratio: 0.1,
            coverage: 0.8,
            routed_windows: 1,
            accepted_windows: 1,
            samples: 10,
            notes: vec![],
        }
    }

    #[test]
    fn accumulate_cells() {
        let mut cm = ConfusionStats::new(3);
        cm.accumulate(0, 0).unwrap();
        assert_eq!(cm.get(0, 0), 1);
        assert_eq!(cm.total(), 1);
        assert!(cm.accumulate(3, 0).is_err());
    }

    #[test]
    fn random_pairs_match_tally() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let pairs: Vec<(usize, usize)> = (0..50).map(|_| (rng.gen_range(0..4), rng.gen_range(0..4))).collect();
        let mut cm = ConfusionStats::new(4);
        for &(t, p) in &pairs {
            cm.accumulate(t, p).unwrap();
        }
        assert_eq!(cm.total(), 50);
        for t in 0..4 {
            for p in 0..4 {
                let n = pairs.iter().filter(|&&x| x == (t, p)).count() as u64;
                assert_eq!(cm.get(t, p), n);
            }
        }
    }

    #[test]
    fn perfect_diagonal() {
        let cm = ConfusionStats::from_counts(3, vec![4, 0, 0, 0, 2, 0, 0, 0, 9]).unwrap();
        let m = weighted_metrics(&cm).unwrap();
        assert_eq!((m.precision, m.recall, m.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn two_class_matrix() {
        // rows true, cols predicted: [[8,2],[3,7]]
        let cm = ConfusionStats::from_counts(2, vec![8, 2, 3, 7]).unwrap();
        let m = weighted_metrics(&cm).unwrap();
        // hand evaluation: P0 = 8/11, R0 = 8/10, P1 = 7/9, R1 = 7/10, support 10/10
        let p0 = 8.0 / 11.0;
        let r0 = 0.8;
        let p1 = 7.0 / 9.0;
        let r1 = 0.7;
        let f = |p: f64, r: f64| 2.0 * p * r / (p + r);
        assert!((m.precision - 0.5 * (p0 + p1)).abs() < 1e-12);
        assert!((m.recall - 0.5 * (r0 + r1)).abs() < 1e-12);
        assert!((m.f1 - 0.5 * (f(p0, r0) + f(p1, r1))).abs() < 1e-12);
    }

    #[test]
    fn zero_support_has_zero_weight() {
        let cm = ConfusionStats::from_counts(3, vec![5, 0, 1, 0, 0, 0, 0, 0, 4]).unwrap();
        let m = weighted_metrics(&cm).unwrap();
        assert_eq!(m.per_class[1].support, 0);
        assert!(m.undefined_classes.contains(&1));
        let without = ConfusionStats::from_counts(2, vec![5, 1, 0, 4]).unwrap();
        let m2 = weighted_metrics(&without).unwrap();
        assert!((m.f1 - m2.f1).abs() < 1e-12);
        assert!(weighted_metrics(&ConfusionStats::new(2)).is_err());
    }

    #[test]
    fn comparison_flags() {
        let t = compare_runs(&[("full".into(), report(0.5254)), ("no-ref".into(), report(0.5135))]).unwrap();
        let f1 = t.column("f1").unwrap();
        assert!(t.rows[0].best[f1]);
        assert!(!t.rows[1].best[f1]);
        // equal columns flag both rows
        let p = t.column("precision").unwrap();
        assert!(t.rows[0].best[p] && t.rows[1].best[p]);
        assert!(t.to_text().contains("0.5254*"));

        let single = compare_runs(&[("only".into(), report(0.3))]).unwrap();
        assert_eq!(single.rows.len(), 1);
        assert_eq!(single.to_text().lines().count(), 2);
        assert!(compare_runs(&[]).is_err());
    }
}
