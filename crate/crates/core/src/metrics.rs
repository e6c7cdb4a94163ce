//! Accuracy, per-class recall, F1 and stratified splitting.

use std::fmt::Write as _;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::motion::EmotionLabel;
use crate::seed::{rng, Stream};

/// How per-class F1 scores are averaged.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum F1Average {
    /// Unweighted mean over classes with nonzero support.
    #[default]
    Macro,
    /// Mean weighted by support.
    Weighted,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassStats {
    pub support: usize,
    pub predicted: usize,
    pub true_positives: usize,
    /// Diagonal over row sum; `None` without support.
    pub recall: Option<f64>,
    /// Diagonal over column sum; `None` when never predicted.
    pub precision: Option<f64>,
    pub f1: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub n_examples: usize,
    pub overall_accuracy: f64,
    pub macro_f1: f64,
    pub weighted_f1: f64,
    pub per_class: Vec<ClassStats>,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

impl EvalReport {
    pub fn f1(&self, average: F1Average) -> f64 {
        match average {
            F1Average::Macro => self.macro_f1,
            F1Average::Weighted => self.weighted_f1,
        }
    }

    /// Per-class recall, `None` for classes absent from the test set.
    pub fn per_class_accuracy(&self) -> Vec<Option<f64>> {
        self.per_class.iter().map(|c| c.recall).collect()
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "examples  {}", self.n_examples);
        let _ = writeln!(s, "accuracy  {:.4}", self.overall_accuracy);
        let _ = writeln!(s, "macro_f1  {:.4}", self.macro_f1);
        let _ = writeln!(s, "{:<10} {:>7} {:>7} {:>9} {:>7}", "class", "support", "recall", "precision", "f1");
        for (i, c) in self.per_class.iter().enumerate() {
            let name = EmotionLabel::from_index(i).map(|l| l.name().to_string()).unwrap_or_else(|_| i.to_string());
            let opt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into());
            let _ = writeln!(
                s,
                "{:<10} {:>7} {:>7} {:>9} {:>7.4}",
                name,
                c.support,
                opt(c.recall),
                opt(c.precision),
                c.f1
            );
        }
        s
    }

    /// `metric,value` rows followed by the confusion matrix.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("metric,value\n");
        let _ = writeln!(s, "n_examples,{}", self.n_examples);
        let _ = writeln!(s, "overall_accuracy,{:?}", self.overall_accuracy);
        let _ = writeln!(s, "macro_f1,{:?}", self.macro_f1);
        let _ = writeln!(s, "weighted_f1,{:?}", self.weighted_f1);
        for (i, c) in self.per_class.iter().enumerate() {
            let recall = c.recall.map(|r| format!("{r:?}")).unwrap_or_default();
            let _ = writeln!(s, "recall_{i},{recall}");
            let _ = writeln!(s, "f1_{i},{:?}", c.f1);
        }
        for (i, row) in self.confusion.iter().enumerate() {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            let _ = writeln!(s, "confusion_{i},{}", cells.join(" "));
        }
        s
    }
}

pub fn evaluate(labels: &[usize], predictions: &[usize], n_classes: usize) -> Result<EvalReport> {
    if labels.len() != predictions.len() {
        return Err(Error::ShapeMismatch {
            op: "evaluate",
            left: vec![labels.len()],
            right: vec![predictions.len()],
        });
    }
    if labels.is_empty() {
        return Err(Error::Empty("test set"));
    }
    let mut confusion = vec![vec![0usize; n_classes]; n_classes];
    for (&y, &p) in labels.iter().zip(predictions) {
        if y >= n_classes || p >= n_classes {
            return Err(Error::InvalidLabel(format!("class {} outside 0..{n_classes}", y.max(p))));
        }
        confusion[y][p] += 1;
    }
    let n = labels.len();
    let correct: usize = (0..n_classes).map(|k| confusion[k][k]).sum();
    let per_class: Vec<ClassStats> = (0..n_classes)
        .map(|k| {
            let support: usize = confusion[k].iter().sum();
            let predicted: usize = confusion.iter().map(|row| row[k]).sum();
            let tp = confusion[k][k];
            let recall = (support > 0).then(|| tp as f64 / support as f64);
            let precision = (predicted > 0).then(|| tp as f64 / predicted as f64);
            // 2PR / (P + R) with a single rounding.
            let f1 = if tp > 0 { (2 * tp) as f64 / (support + predicted) as f64 } else { 0.0 };
            ClassStats {
                support,
                predicted,
                true_positives: tp,
                recall,
                precision,
                f1,
            }
        })
        .collect();
    let present: Vec<&ClassStats> = per_class.iter().filter(|c| c.support > 0).collect();
    let macro_f1 = present.iter().map(|c| c.f1).sum::<f64>() / present.len() as f64;
    let weighted_f1 = present.iter().map(|c| c.f1 * c.support as f64).sum::<f64>() / n as f64;
    Ok(EvalReport {
        n_examples: n,
        overall_accuracy: correct as f64 / n as f64,
        macro_f1,
        weighted_f1,
        per_class,
        confusion,
    })
}

/// Number of training examples kept from a class of `n` at `fraction`.
/// Floor, clamped so both sides keep at least one example.
pub fn train_count(n: usize, fraction: f64) -> usize {
    ((n as f64 * fraction + 1e-9).floor() as usize).clamp(1, n - 1)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Per-class shuffled split of example indices. Returned index lists are
/// sorted.
pub fn stratified_split(labels: &[usize], n_classes: usize, fraction: f64, seed: u64) -> Result<Split> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!("split fraction {fraction} not in (0, 1)")));
    }
    let mut by_class = vec![Vec::new(); n_classes];
    for (i, &y) in labels.iter().enumerate() {
        by_class
            .get_mut(y)
            .ok_or_else(|| Error::InvalidLabel(format!("class {y} outside 0..{n_classes}")))?
            .push(i);
    }
    let mut rng = rng(seed, Stream::Split);
    let mut split = Split {
        train: Vec::new(),
        test: Vec::new(),
    };
    for (class, mut members) in by_class.into_iter().enumerate() {
        if members.is_empty() {
            continue;
        }
        if members.len() < 2 {
            return Err(Error::ClassTooSmall {
                class,
                count: members.len(),
            });
        }
        members.shuffle(&mut rng);
        let k = train_count(members.len(), fraction);
        split.train.extend_from_slice(&members[..k]);
        split.test.extend_from_slice(&members[k..]);
    }
    split.train.sort_unstable();
    split.test.sort_unstable();
    Ok(split)
}
