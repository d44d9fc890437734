use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::agreement::{cohen_kappa, fleiss_kappa, rating_counts};
use super::bootstrap::{bootstrap_compare, DEFAULT_REPLICATES};
use super::confusion::ConfusionMatrix;
use super::interval::{clopper_pearson, hanley_mcneil_ci};
use super::roc::{auc, operating_points_at, roc_curve, RocPoint, OPERATING_TARGET};
use super::running_mean;
use crate::error::{Error, Result};
use crate::etiology::{Etiology, CLASS_COUNT};
use crate::inference::PredictionSet;
use crate::study::TaskMode;

/// Labels keyed by case id.
pub type Labels = BTreeMap<String, Etiology>;
/// Rater id to that rater's labels, per task.
pub type TaskResponses = BTreeMap<TaskMode, BTreeMap<String, Labels>>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReportConfig {
    pub confidence: f64,
    pub bootstrap_replicates: usize,
    pub seed: u64,
    pub operating_target: f64,
}

impl Default for ReportConfig {
    fn default() -> Self {
        ReportConfig {
            confidence: 0.95,
            bootstrap_replicates: DEFAULT_REPLICATES,
            seed: 0,
            operating_target: OPERATING_TARGET,
        }
    }
}

/// A proportion k/n with its exact interval; empty when n = 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rate {
    pub k: u64,
    pub n: u64,
    pub value: Option<f64>,
    pub ci: Option<(f64, f64)>,
}

impl Rate {
    pub fn new(k: u64, n: u64, confidence: f64) -> Result<Rate> {
        if n == 0 {
            return Ok(Rate { k, n, value: None, ci: None });
        }
        Ok(Rate {
            k,
            n,
            value: Some(k as f64 / n as f64),
            ci: Some(clopper_pearson(k, n, confidence)?),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    /// Absent for the all-positive / all-negative endpoints.
    pub threshold: Option<f64>,
    pub sensitivity: f64,
    pub specificity: f64,
}

impl From<RocPoint> for OperatingPoint {
    fn from(p: RocPoint) -> Self {
        OperatingPoint {
            threshold: p.threshold.is_finite().then_some(p.threshold),
            sensitivity: p.sensitivity,
            specificity: p.specificity,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelClassMetrics {
    pub etiology: Etiology,
    pub auc: Option<f64>,
    pub auc_ci: Option<(f64, f64)>,
    pub sensitivity: Rate,
    pub specificity: Rate,
    pub high_specificity_point: Option<OperatingPoint>,
    pub high_sensitivity_point: Option<OperatingPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMetrics {
    pub accuracy: Rate,
    pub confusion: ConfusionMatrix,
    pub per_class: Vec<ModelClassMetrics>,
    pub failed_cases: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReaderClassMetrics {
    pub etiology: Etiology,
    /// Mean over raters of each rater's own rate.
    pub sensitivity_mean: Option<f64>,
    pub specificity_mean: Option<f64>,
    /// Counts pooled over raters, with the exact interval.
    pub sensitivity: Rate,
    pub specificity: Rate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KappaMatrix {
    pub raters: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskMetrics {
    pub task: TaskMode,
    pub raters: Vec<String>,
    pub pooled_accuracy: Rate,
    pub rater_accuracy: BTreeMap<String, f64>,
    pub per_class: Vec<ReaderClassMetrics>,
    pub confusion: ConfusionMatrix,
    pub pairwise_kappa: Option<KappaMatrix>,
    pub fleiss_kappa: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Increment {
    pub accuracy_increment: f64,
    /// One-sided bootstrap p for "the later task is more accurate".
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassIncrement {
    pub etiology: Etiology,
    pub sensitivity_increment: Option<f64>,
    pub specificity_increment: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskComparison {
    pub from: TaskMode,
    pub to: TaskMode,
    pub pooled: Increment,
    pub per_rater: BTreeMap<String, Increment>,
    pub per_class: Vec<ClassIncrement>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub case_count: usize,
    pub config: ReportConfig,
    pub model: Option<ModelMetrics>,
    pub tasks: Vec<TaskMetrics>,
    pub comparisons: Vec<TaskComparison>,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn task(&self, mode: TaskMode) -> Option<&TaskMetrics> {
        self.tasks.iter().find(|t| t.task == mode)
    }
}

/// Full evaluation: model metrics if predictions are given, reader metrics
/// per task, and increments between every pair of tasks in protocol order.
pub fn augmentation_report(
    truth: &Labels,
    responses: &TaskResponses,
    predictions: Option<&PredictionSet>,
    config: &ReportConfig,
) -> Result<MetricsReport> {
    let model = predictions
        .map(|p| model_metrics(truth, p, config))
        .transpose()?;
    let mut tasks = Vec::new();
    for (&mode, raters) in responses {
        tasks.push(task_metrics(truth, mode, raters, config)?);
    }
    let mut comparisons = Vec::new();
    let modes: Vec<TaskMode> = responses.keys().copied().collect();
    for (i, &from) in modes.iter().enumerate() {
        for &to in &modes[i + 1..] {
            comparisons.push(compare_tasks(truth, responses, from, to, &tasks, config)?);
        }
    }
    Ok(MetricsReport {
        case_count: truth.len(),
        config: *config,
        model,
        tasks,
        comparisons,
    })
}

fn model_metrics(truth: &Labels, predictions: &PredictionSet, config: &ReportConfig) -> Result<ModelMetrics> {
    let mut failed = Vec::new();
    let mut scored = Vec::new();
    for p in &predictions.rows {
        if !truth.contains_key(&p.case_id) {
            return Err(Error::invalid(format!("prediction for unknown case {:?}", p.case_id)));
        }
    }
    for (id, &label) in truth {
        let row = predictions
            .get(id)
            .ok_or_else(|| Error::invalid(format!("no prediction for case {id:?}")))?;
        match (row.probs, row.diagnosis()) {
            (Some(p), Some(d)) => scored.push((label, p, d)),
            _ => failed.push(id.clone()),
        }
    }
    let confusion = ConfusionMatrix::from_pairs(scored.iter().map(|&(t, _, d)| (t, d)));
    let mut per_class = Vec::with_capacity(CLASS_COUNT);
    for class in Etiology::ALL {
        let c = class.index();
        let pos: Vec<f64> = scored.iter().filter(|s| s.0 == class).map(|s| s.1[c]).collect();
        let neg: Vec<f64> = scored.iter().filter(|s| s.0 != class).map(|s| s.1[c]).collect();
        let (auc_v, auc_ci, hi_spec, hi_sens) = if pos.is_empty() || neg.is_empty() {
            (None, None, None, None)
        } else {
            let a = auc(&pos, &neg)?;
            let ci = hanley_mcneil_ci(a, pos.len() as u64, neg.len() as u64, config.confidence)?;
            let (s, t) = operating_points_at(&roc_curve(&pos, &neg)?, config.operating_target)?;
            (Some(a), Some(ci), Some(s.into()), Some(t.into()))
        };
        per_class.push(ModelClassMetrics {
            etiology: class,
            auc: auc_v,
            auc_ci,
            sensitivity: Rate::new(confusion.true_positives(class), confusion.positives(class), config.confidence)?,
            specificity: Rate::new(confusion.true_negatives(class), confusion.negatives(class), config.confidence)?,
            high_specificity_point: hi_spec,
            high_sensitivity_point: hi_sens,
        });
    }
    Ok(ModelMetrics {
        accuracy: Rate::new(confusion.correct(), confusion.total(), config.confidence)?,
        confusion,
        per_class,
        failed_cases: failed,
    })
}

/// One rater's labels in truth order, rejecting missing or extra cases.
fn aligned(truth: &Labels, rater: &str, labels: &Labels) -> Result<Vec<Etiology>> {
    if let Some(extra) = labels.keys().find(|k| !truth.contains_key(*k)) {
        return Err(Error::invalid(format!("rater {rater:?} answered unknown case {extra:?}")));
    }
    truth
        .keys()
        .map(|id| {
            labels
                .get(id)
                .copied()
                .ok_or_else(|| Error::invalid(format!("rater {rater:?} has no response for case {id:?}")))
        })
        .collect()
}

fn task_metrics(
    truth: &Labels,
    mode: TaskMode,
    raters: &BTreeMap<String, Labels>,
    config: &ReportConfig,
) -> Result<TaskMetrics> {
    let truth_labels: Vec<Etiology> = truth.values().copied().collect();
    let mut pooled = ConfusionMatrix::default();
    let mut per_rater = Vec::new();
    let mut rater_accuracy = BTreeMap::new();
    let mut aligned_labels = Vec::new();
    for (id, labels) in raters {
        let l = aligned(truth, id, labels)?;
        let m = ConfusionMatrix::from_pairs(truth_labels.iter().copied().zip(l.iter().copied()));
        pooled.merge(&m);
        rater_accuracy.insert(id.clone(), m.accuracy().unwrap_or(0.0));
        per_rater.push(m);
        aligned_labels.push(l);
    }
    let mut per_class = Vec::with_capacity(CLASS_COUNT);
    for class in Etiology::ALL {
        let sens: Vec<f64> = per_rater.iter().filter_map(|m| m.sensitivity(class)).collect();
        let spec: Vec<f64> = per_rater.iter().filter_map(|m| m.specificity(class)).collect();
        per_class.push(ReaderClassMetrics {
            etiology: class,
            sensitivity_mean: running_mean(&sens),
            specificity_mean: running_mean(&spec),
            sensitivity: Rate::new(pooled.true_positives(class), pooled.positives(class), config.confidence)?,
            specificity: Rate::new(pooled.true_negatives(class), pooled.negatives(class), config.confidence)?,
        });
    }
    let names: Vec<String> = raters.keys().cloned().collect();
    let (pairwise_kappa, fleiss) = if names.len() >= 2 && !truth.is_empty() {
        let mut values = vec![vec![1.0; names.len()]; names.len()];
        for i in 0..names.len() {
            for j in i + 1..names.len() {
                let k = cohen_kappa(&aligned_labels[i], &aligned_labels[j])?;
                values[i][j] = k;
                values[j][i] = k;
            }
        }
        let refs: Vec<&[Etiology]> = aligned_labels.iter().map(Vec::as_slice).collect();
        let f = fleiss_kappa(&rating_counts(&refs)?)?;
        (Some(KappaMatrix { raters: names.clone(), values }), Some(f))
    } else {
        (None, None)
    };
    Ok(TaskMetrics {
        task: mode,
        raters: names,
        pooled_accuracy: Rate::new(pooled.correct(), pooled.total(), config.confidence)?,
        rater_accuracy,
        per_class,
        confusion: pooled,
        pairwise_kappa,
        fleiss_kappa: fleiss,
    })
}

fn correctness(truth: &Labels, rater: &str, labels: &Labels) -> Result<Vec<bool>> {
    Ok(aligned(truth, rater, labels)?
        .into_iter()
        .zip(truth.values())
        .map(|(l, t)| l == *t)
        .collect())
}

fn increment(later: &[bool], earlier: &[bool], seed: u64, config: &ReportConfig) -> Result<Increment> {
    let acc = |v: &[bool]| v.iter().filter(|&&c| c).count() as f64 / v.len().max(1) as f64;
    let p_value = if later.is_empty() {
        1.0
    } else {
        bootstrap_compare(later, earlier, config.bootstrap_replicates, seed)?
    };
    Ok(Increment {
        accuracy_increment: acc(later) - acc(earlier),
        p_value,
    })
}

fn compare_tasks(
    truth: &Labels,
    responses: &TaskResponses,
    from: TaskMode,
    to: TaskMode,
    tasks: &[TaskMetrics],
    config: &ReportConfig,
) -> Result<TaskComparison> {
    let a = &responses[&from];
    let b = &responses[&to];
    let seed = crate::seed::mix_str(config.seed, &format!("{from}->{to}"));
    let mut pooled_earlier = Vec::new();
    let mut pooled_later = Vec::new();
    let mut per_rater = BTreeMap::new();
    for (rater, later_labels) in b {
        let Some(earlier_labels) = a.get(rater) else {
            continue;
        };
        let earlier = correctness(truth, rater, earlier_labels)?;
        let later = correctness(truth, rater, later_labels)?;
        per_rater.insert(
            rater.clone(),
            increment(&later, &earlier, crate::seed::mix_str(seed, rater), config)?,
        );
        pooled_earlier.extend(earlier);
        pooled_later.extend(later);
    }
    let find = |m: TaskMode| tasks.iter().find(|t| t.task == m).expect("task computed");
    let (ta, tb) = (find(from), find(to));
    let per_class = Etiology::ALL
        .iter()
        .map(|&e| {
            let (ca, cb) = (&ta.per_class[e.index()], &tb.per_class[e.index()]);
            ClassIncrement {
                etiology: e,
                sensitivity_increment: cb.sensitivity_mean.zip(ca.sensitivity_mean).map(|(x, y)| x - y),
                specificity_increment: cb.specificity_mean.zip(ca.specificity_mean).map(|(x, y)| x - y),
            }
        })
        .collect();
    Ok(TaskComparison {
        from,
        to,
        pooled: increment(&pooled_later, &pooled_earlier, seed, config)?,
        per_rater,
        per_class,
    })
}
