//! Weighted cross-entropy plus triplet loss, as plain scalar functions and
//! as graph nodes for training.

use rand::seq::IndexedRandom;
use rand::Rng;

use super::graph::{triplet_hinge, Graph, Triplet, Var, PROB_FLOOR};
use super::tensor::Real;
use crate::error::{Error, Result};
use crate::etiology::{Etiology, CLASS_COUNT};

/// `-w[label] * ln(max(p[label], 1e-12))`.
pub fn weighted_ce_loss(probs: &[f64], label: usize, weights: &[f64]) -> Result<f64> {
    if probs.len() != CLASS_COUNT || weights.len() != CLASS_COUNT || label >= CLASS_COUNT {
        return Err(Error::invalid("cross-entropy needs six probabilities, six weights and a valid label"));
    }
    Ok(-weights[label] * probs[label].max(PROB_FLOOR).ln())
}

/// `max(0, |a-p|^2 - |a-n|^2 + margin)`.
pub fn triplet_loss(anchor: &[f64], positive: &[f64], negative: &[f64], margin: f64) -> Result<f64> {
    if anchor.len() != positive.len() || anchor.len() != negative.len() {
        return Err(Error::ShapeMismatch("triplet embeddings differ in length".into()));
    }
    Ok(triplet_hinge(anchor, positive, negative, margin))
}

/// Main classes train with the full margin, minority classes with half.
pub fn margin_for(anchor: Etiology, margin_main: f64) -> f64 {
    if anchor.is_main_class() {
        margin_main
    } else {
        margin_main / 2.0
    }
}

/// For every batch row that has both a same-class partner and a row of
/// another class, draws one of each uniformly.
pub fn mine_triplets<R: Rng + ?Sized>(labels: &[usize], margin_main: f64, rng: &mut R) -> Vec<Triplet> {
    let mut out = Vec::new();
    for (a, &la) in labels.iter().enumerate() {
        let positives: Vec<usize> = (0..labels.len()).filter(|&i| i != a && labels[i] == la).collect();
        let negatives: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] != la).collect();
        let (Some(&p), Some(&n)) = (positives.choose(rng), negatives.choose(rng)) else {
            continue;
        };
        let class = Etiology::from_index(la).expect("label index in range");
        out.push(Triplet {
            anchor: a,
            positive: p,
            negative: n,
            margin: margin_for(class, margin_main),
        });
    }
    out
}

/// Mean weighted cross-entropy plus mean triplet hinge over `triplets`.
pub fn total_loss(
    probs: &[[f64; CLASS_COUNT]],
    embeddings: &[Vec<f64>],
    labels: &[usize],
    weights: &[f64; CLASS_COUNT],
    triplets: &[Triplet],
) -> Result<f64> {
    if probs.is_empty() || probs.len() != labels.len() || embeddings.len() != labels.len() {
        return Err(Error::invalid("loss batch sizes disagree"));
    }
    let mut ce = 0.0;
    for (p, &l) in probs.iter().zip(labels) {
        ce += weighted_ce_loss(p, l, weights)?;
    }
    ce /= labels.len() as f64;
    let mut tri = 0.0;
    for t in triplets {
        tri += triplet_loss(&embeddings[t.anchor], &embeddings[t.positive], &embeddings[t.negative], t.margin)?;
    }
    if !triplets.is_empty() {
        tri /= triplets.len() as f64;
    }
    Ok(ce + tri)
}

/// Graph node for [`total_loss`].
pub fn total_loss_graph<T: Real>(
    graph: &mut Graph<T>,
    probs: Var,
    embedding: Var,
    labels: &[usize],
    weights: &[f64; CLASS_COUNT],
    triplets: Vec<Triplet>,
) -> Result<Var> {
    let ce = graph.weighted_ce(probs, labels, weights)?;
    let tri = graph.triplet(embedding, triplets)?;
    graph.add(ce, tri)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    #[test]
    fn cross_entropy_examples() {
        let w = [1.0; 6];
        assert_eq!(weighted_ce_loss(&[1.0, 0.0, 0.0, 0.0, 0.0, 0.0], 0, &[3.0; 6]).unwrap(), 0.0);
        let uniform = [1.0 / 6.0; 6];
        assert!((weighted_ce_loss(&uniform, 2, &w).unwrap() - 6f64.ln()).abs() < 1e-12);
        let mut half = [0.1; 6];
        half[4] = 0.5;
        let mut w2 = w;
        w2[4] = 2.0;
        assert!((weighted_ce_loss(&half, 4, &w2).unwrap() - 2.0 * 2f64.ln()).abs() < 1e-12);
        let zero = [0.0, 1.0, 0.0, 0.0, 0.0, 0.0];
        assert!((weighted_ce_loss(&zero, 0, &w).unwrap() + 1e-12f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn triplet_examples() {
        // |a-p|^2 = 0.2, |a-n|^2 = 0.9
        let a = [0.0, 0.0];
        let p = [0.2f64.sqrt(), 0.0];
        let n = [0.0, 0.9f64.sqrt()];
        assert_eq!(triplet_loss(&a, &p, &n, 0.5).unwrap(), 0.0);
        let q = [0.0, 0.3];
        let r = [0.3, 0.0];
        assert!((triplet_loss(&a, &q, &r, 0.7).unwrap() - 0.7).abs() < 1e-12);
        assert!(triplet_loss(&a, &q, &[1.0], 0.7).is_err());
        assert_eq!(margin_for(Etiology::Cm, 1.0), 0.5);
        assert_eq!(margin_for(Etiology::Hypertensive, 1.0), 1.0);
    }

    #[test]
    fn single_class_batch_has_no_triplets() {
        let mut rng = seed::rng(1);
        assert!(mine_triplets(&[2, 2, 2, 2], 1.0, &mut rng).is_empty());
        let t = mine_triplets(&[0, 0, 1, 4], 1.0, &mut rng);
        assert_eq!(t.len(), 2);
        for tr in &t {
            assert_eq!(tr.positive, 1 - tr.anchor);
            assert!(tr.negative >= 2);
            assert_eq!(tr.margin, 1.0);
        }
    }

    #[test]
    fn hand_built_batch() {
        let probs = [[0.5, 0.1, 0.1, 0.1, 0.1, 0.1], [0.2, 0.4, 0.1, 0.1, 0.1, 0.1]];
        let emb = vec![vec![0.0, 1.0], vec![1.0, 0.0], vec![0.0, 0.5]];
        let weights = [1.0, 2.0, 1.0, 1.0, 1.0, 1.0];
        let triplets = [Triplet {
            anchor: 0,
            positive: 2,
            negative: 1,
            margin: 1.0,
        }];
        // CE: (-ln 0.5 - 2 ln 0.4) / 2; triplet: 0.25 - 2 + 1 < 0 -> 0
        let got = total_loss(&probs, &emb[..2], &[0, 1], &weights, &[]).unwrap();
        let want = (-(0.5f64.ln()) - 2.0 * 0.4f64.ln()) / 2.0;
        assert!((got - want).abs() < 1e-12);
        let labels3 = [0, 1, 0];
        let probs3 = [probs[0], probs[1], probs[0]];
        let got = total_loss(&probs3, &emb, &labels3, &weights, &triplets).unwrap();
        let ce3 = (2.0 * -(0.5f64.ln()) - 2.0 * 0.4f64.ln()) / 3.0;
        assert!((got - ce3).abs() < 1e-12);
        let far = Triplet { margin: 2.0, ..triplets[0] };
        let got = total_loss(&probs3, &emb, &labels3, &weights, &[far]).unwrap();
        assert!((got - (ce3 + 0.25)).abs() < 1e-12);
    }

    #[test]
    fn perfect_batch_has_zero_loss() {
        let one_hot = |c: usize| std::array::from_fn(|i| if i == c { 1.0 } else { 0.0 });
        let probs = [one_hot(0), one_hot(0), one_hot(3)];
        let emb = vec![vec![0.0], vec![0.0], vec![5.0]];
        let mut rng = seed::rng(2);
        let triplets = mine_triplets(&[0, 0, 3], 1.0, &mut rng);
        assert_eq!(triplets.len(), 2);
        assert_eq!(total_loss(&probs, &emb, &[0, 0, 3], &[1.0; 6], &triplets).unwrap(), 0.0);
    }
}
