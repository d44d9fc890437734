use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const OPERATING_TARGET: f64 = 0.9;

/// Mann-Whitney AUC: (#concordant + 0.5 #tied) / (n_pos n_neg).
pub fn auc(pos: &[f64], neg: &[f64]) -> Result<f64> {
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::invalid("auc needs at least one positive and one negative score"));
    }
    if pos.iter().chain(neg).any(|s| s.is_nan()) {
        return Err(Error::invalid("auc scores must not be NaN"));
    }
    let (conc, ties) = pair_counts(pos, neg);
    let total = pos.len() as u128 * neg.len() as u128;
    let disc = total - conc - ties;
    // Evaluate from the smaller side so auc(a, b) + auc(b, a) == 1 exactly.
    let twice = |c: u128| (2 * c + ties) as f64 / (2 * total) as f64;
    Ok(if conc <= disc { twice(conc) } else { 1.0 - twice(disc) })
}

/// (#pos > neg, #pos == neg) over all pairs.
fn pair_counts(pos: &[f64], neg: &[f64]) -> (u128, u128) {
    let mut sorted = neg.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut conc = 0u128;
    let mut ties = 0u128;
    for &p in pos {
        let below = sorted.partition_point(|&n| n < p);
        let not_above = sorted.partition_point(|&n| n <= p);
        conc += below as u128;
        ties += (not_above - below) as u128;
    }
    (conc, ties)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    /// Cases scoring at or above the threshold are called positive.
    pub threshold: f64,
    pub sensitivity: f64,
    pub specificity: f64,
}

impl RocPoint {
    pub fn fpr(&self) -> f64 {
        1.0 - self.specificity
    }
}

/// Points sorted by ascending threshold, from `-inf` (everything positive)
/// through each distinct score to `+inf` (nothing positive).
#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
}

pub fn roc_curve(pos: &[f64], neg: &[f64]) -> Result<RocCurve> {
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::invalid("roc needs at least one positive and one negative score"));
    }
    if pos.iter().chain(neg).any(|s| s.is_nan()) {
        return Err(Error::invalid("roc scores must not be NaN"));
    }
    let mut p = pos.to_vec();
    let mut n = neg.to_vec();
    p.sort_by(f64::total_cmp);
    n.sort_by(f64::total_cmp);
    let mut cuts: Vec<f64> = p.iter().chain(&n).copied().collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();

    let (np, nn) = (p.len() as f64, n.len() as f64);
    let point = |t: f64| {
        let tp = p.len() - p.partition_point(|&s| s < t);
        let tn = n.partition_point(|&s| s < t);
        RocPoint {
            threshold: t,
            sensitivity: tp as f64 / np,
            specificity: tn as f64 / nn,
        }
    };
    let mut points = Vec::with_capacity(cuts.len() + 2);
    points.push(RocPoint {
        threshold: f64::NEG_INFINITY,
        sensitivity: 1.0,
        specificity: 0.0,
    });
    points.extend(cuts.iter().map(|&t| point(t)));
    points.push(RocPoint {
        threshold: f64::INFINITY,
        sensitivity: 0.0,
        specificity: 1.0,
    });
    Ok(RocCurve { points })
}

impl RocCurve {
    /// Trapezoidal area in (FPR, TPR) space.
    pub fn area(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| (w[0].fpr() - w[1].fpr()) * (w[0].sensitivity + w[1].sensitivity) / 2.0)
            .sum()
    }
}

/// (high-specificity point, high-sensitivity point) at the default 0.9 target.
pub fn operating_points(roc: &RocCurve) -> Result<(RocPoint, RocPoint)> {
    operating_points_at(roc, OPERATING_TARGET)
}

/// The high-specificity point maximizes sensitivity among points with
/// specificity >= target, falling back to the most specific point; the
/// high-sensitivity point is the mirror image.
pub fn operating_points_at(roc: &RocCurve, target: f64) -> Result<(RocPoint, RocPoint)> {
    if roc.points.is_empty() {
        return Err(Error::invalid("empty roc curve"));
    }
    let pick = |primary: fn(&RocPoint) -> f64, secondary: fn(&RocPoint) -> f64| {
        let best = |it: &mut dyn Iterator<Item = &RocPoint>, key: &dyn Fn(&RocPoint) -> (f64, f64)| {
            it.fold(None::<RocPoint>, |acc, p| match acc {
                Some(a) if key(&a) >= key(p) => Some(a),
                _ => Some(*p),
            })
        };
        let mut feasible = roc.points.iter().filter(|p| secondary(p) >= target);
        best(&mut feasible, &|p| (primary(p), secondary(p)))
            .or_else(|| best(&mut roc.points.iter(), &|p| (secondary(p), primary(p))))
            .expect("nonempty curve")
    };
    let high_spec = pick(|p| p.sensitivity, |p| p.specificity);
    let high_sens = pick(|p| p.specificity, |p| p.sensitivity);
    Ok((high_spec, high_sens))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[0.9, 0.8], &[0.1, 0.2]).unwrap(), 1.0);
        assert_eq!(auc(&[0.5, 0.5], &[0.5, 0.5, 0.5]).unwrap(), 0.5);
        assert_eq!(auc(&[0.8, 0.4], &[0.6, 0.2]).unwrap(), 0.75);
        assert!(auc(&[], &[0.1]).is_err());
        assert!(auc(&[0.1], &[]).is_err());
    }

    #[test]
    fn roc_endpoints_and_area() {
        let roc = roc_curve(&[0.8, 0.4], &[0.6, 0.2]).unwrap();
        let first = roc.points.first().unwrap();
        let last = roc.points.last().unwrap();
        assert_eq!((first.fpr(), first.sensitivity), (1.0, 1.0));
        assert_eq!((last.fpr(), last.sensitivity), (0.0, 0.0));
        assert!((roc.area() - 0.75).abs() < 1e-12);
    }

    #[test]
    fn perfect_classifier_operating_points() {
        let roc = roc_curve(&[0.9, 0.8], &[0.2, 0.1]).unwrap();
        let (spec, sens) = operating_points(&roc).unwrap();
        assert_eq!((spec.sensitivity, spec.specificity), (1.0, 1.0));
        assert_eq!((sens.sensitivity, sens.specificity), (1.0, 1.0));
    }

    #[test]
    fn high_specificity_point_from_sweep() {
        let roc = roc_curve(&[0.9, 0.8, 0.3], &[0.7, 0.2, 0.1]).unwrap();
        let (spec, _) = operating_points(&roc).unwrap();
        assert_eq!(spec.specificity, 1.0);
        assert!((spec.sensitivity - 2.0 / 3.0).abs() < 1e-15);
        assert!(spec.threshold > 0.7);
    }

    #[test]
    fn fallback_when_target_unreachable() {
        let roc = RocCurve {
            points: vec![
                RocPoint { threshold: 0.0, sensitivity: 1.0, specificity: 0.5 },
                RocPoint { threshold: 1.0, sensitivity: 0.5, specificity: 0.8 },
            ],
        };
        let (spec, sens) = operating_points(&roc).unwrap();
        assert_eq!(spec.specificity, 0.8);
        assert_eq!(sens.sensitivity, 1.0);
        assert!(operating_points(&RocCurve { points: vec![] }).is_err());
    }
}
