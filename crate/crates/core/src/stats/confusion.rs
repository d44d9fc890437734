use serde::{Deserialize, Serialize};

use crate::etiology::{Etiology, CLASS_COUNT};

/// Rows are the true class, columns the predicted class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; CLASS_COUNT]; CLASS_COUNT],
}

impl ConfusionMatrix {
    pub fn from_pairs<I: IntoIterator<Item = (Etiology, Etiology)>>(pairs: I) -> Self {
        let mut m = ConfusionMatrix::default();
        for (t, p) in pairs {
            m.add(t, p);
        }
        m
    }

    pub fn add(&mut self, truth: Etiology, predicted: Etiology) {
        self.counts[truth.index()][predicted.index()] += 1;
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        for (r, o) in self.counts.iter_mut().zip(&other.counts) {
            for (a, b) in r.iter_mut().zip(o) {
                *a += b;
            }
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..CLASS_COUNT).map(|c| self.counts[c][c]).sum()
    }

    pub fn accuracy(&self) -> Option<f64> {
        ratio(self.correct(), self.total())
    }

    pub fn true_positives(&self, class: Etiology) -> u64 {
        self.counts[class.index()][class.index()]
    }

    /// Cases of the class, predicted or not.
    pub fn positives(&self, class: Etiology) -> u64 {
        self.counts[class.index()].iter().sum()
    }

    pub fn negatives(&self, class: Etiology) -> u64 {
        self.total() - self.positives(class)
    }

    pub fn true_negatives(&self, class: Etiology) -> u64 {
        let c = class.index();
        let predicted_c: u64 = self.counts.iter().map(|r| r[c]).sum();
        self.total() - self.positives(class) - (predicted_c - self.counts[c][c])
    }

    pub fn sensitivity(&self, class: Etiology) -> Option<f64> {
        ratio(self.true_positives(class), self.positives(class))
    }

    pub fn specificity(&self, class: Etiology) -> Option<f64> {
        ratio(self.true_negatives(class), self.negatives(class))
    }
}

fn ratio(k: u64, n: u64) -> Option<f64> {
    (n > 0).then(|| k as f64 / n as f64)
}
