use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

/// Classification report. `macro_f1` is the unweighted mean of per-class F1
/// over every class that occurs in the references or the predictions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub labels: Vec<String>,
    pub per_class: Vec<ClassMetrics>,
    pub macro_f1: f64,
    pub accuracy: f64,
    /// `confusion[truth][predicted]`
    pub confusion: Vec<Vec<u64>>,
    pub count: u64,
    /// Files that could not be read and were left out.
    pub skipped: u64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Builds a report from per-class true-positive, false-positive and
/// false-negative counts.
fn report(labels: &[String], confusion: Vec<Vec<u64>>, tp: &[u64], fp: &[u64], fn_: &[u64], skipped: u64) -> EvalReport {
    let mut per_class = Vec::with_capacity(labels.len());
    let mut f1_sum = 0.0;
    let mut present = 0usize;
    for (c, label) in labels.iter().enumerate() {
        let f1 = ratio(2 * tp[c], 2 * tp[c] + fp[c] + fn_[c]);
        if tp[c] + fp[c] + fn_[c] > 0 {
            f1_sum += f1;
            present += 1;
        }
        per_class.push(ClassMetrics {
            label: label.clone(),
            precision: ratio(tp[c], tp[c] + fp[c]),
            recall: ratio(tp[c], tp[c] + fn_[c]),
            f1,
            support: tp[c] + fn_[c],
        });
    }
    let count: u64 = tp.iter().sum::<u64>() + fn_.iter().sum::<u64>();
    EvalReport {
        labels: labels.to_vec(),
        per_class,
        macro_f1: if present == 0 { 0.0 } else { f1_sum / present as f64 },
        accuracy: ratio(tp.iter().sum(), count),
        confusion,
        count,
        skipped,
    }
}

impl EvalReport {
    /// Recomputes everything from a confusion matrix alone.
    pub fn from_confusion(labels: &[String], confusion: Vec<Vec<u64>>, skipped: u64) -> Self {
        let k = labels.len();
        let tp: Vec<u64> = (0..k).map(|c| confusion[c][c]).collect();
        let fp: Vec<u64> = (0..k).map(|c| (0..k).map(|r| confusion[r][c]).sum::<u64>() - tp[c]).collect();
        let fn_: Vec<u64> = (0..k).map(|c| confusion[c].iter().sum::<u64>() - tp[c]).collect();
        report(labels, confusion, &tp, &fp, &fn_, skipped)
    }

    /// Plain-text table of per-class scores.
    pub fn table(&self) -> String {
        let width = self.labels.iter().map(String::len).max().unwrap_or(5).max(5);
        let mut s = format!(
            "{:<width$}  {:>9}  {:>6}  {:>6}  {:>7}\n",
            "class", "precision", "recall", "f1", "support"
        );
        for m in &self.per_class {
            s += &format!(
                "{:<width$}  {:>9.4}  {:>6.4}  {:>6.4}  {:>7}\n",
                m.label, m.precision, m.recall, m.f1, m.support
            );
        }
        s += &format!("macro-F1 {:.4}  accuracy {:.4}  n={}", self.macro_f1, self.accuracy, self.count);
        if self.skipped > 0 {
            s += &format!("  skipped={}", self.skipped);
        }
        s
    }
}

/// Streaming counts updated one prediction at a time.
#[derive(Clone, Debug)]
pub struct MetricsAccumulator {
    labels: Vec<String>,
    confusion: Vec<Vec<u64>>,
    tp: Vec<u64>,
    fp: Vec<u64>,
    fn_: Vec<u64>,
    skipped: u64,
}

impl MetricsAccumulator {
    pub fn new(labels: &[String]) -> Self {
        let k = labels.len();
        MetricsAccumulator {
            labels: labels.to_vec(),
            confusion: vec![vec![0; k]; k],
            tp: vec![0; k],
            fp: vec![0; k],
            fn_: vec![0; k],
            skipped: 0,
        }
    }

    pub fn add(&mut self, truth: usize, predicted: usize) {
        self.confusion[truth][predicted] += 1;
        if truth == predicted {
            self.tp[truth] += 1;
        } else {
            self.fp[predicted] += 1;
            self.fn_[truth] += 1;
        }
    }

    pub fn add_skipped(&mut self, n: u64) {
        self.skipped += n;
    }

    pub fn finish(self) -> EvalReport {
        report(&self.labels, self.confusion, &self.tp, &self.fp, &self.fn_, self.skipped)
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("l{i}")).collect()
    }

    #[test]
    fn perfect_predictions() {
        let mut acc = MetricsAccumulator::new(&labels(3));
        for c in [0, 1, 2, 2, 1] {
            acc.add(c, c);
        }
        let r = acc.finish();
        assert_eq!(r.macro_f1, 1.0);
        assert_eq!(r.confusion, vec![vec![1, 0, 0], vec![0, 2, 0], vec![0, 0, 2]]);
    }

    #[test]
    fn everything_predicted_as_one_class() {
        let mut acc = MetricsAccumulator::new(&labels(2));
        for c in [0, 0, 1, 1] {
            acc.add(c, 0);
        }
        let r = acc.finish();
        assert!((r.per_class[0].f1 - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.per_class[1].f1, 0.0);
        assert!((r.macro_f1 - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.per_class[0].support + r.per_class[1].support, 4);
    }

    #[test]
    fn argmax_prefers_first_tie() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
    }
}
