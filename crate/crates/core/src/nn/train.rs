//! Single-fold training: oversampled, rotation-augmented minibatches,
//! weighted cross-entropy plus triplet loss, Adam.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adam::{Adam, AdamHyper};
use super::checkpoint::ModelCheckpoint;
use super::graph::Graph;
use super::loss::{mine_triplets, total_loss_graph, weighted_ce_loss};
use super::model::{normalize_hu, IchNet, IchNetConfig};
use super::tensor::Tensor;
use crate::data::{class_weights, oversample, FoldAssignment, Manifest};
use crate::error::{Error, Result};
use crate::etiology::{Etiology, CLASS_COUNT};
use crate::seed;
use crate::volume::{read_volume, rotate_axial, Volume, ROTATION_COUNT, ROTATION_STEP_DEGREES};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Sample-weighted mean of the minibatch total losses.
    pub train_loss: f64,
    /// Mean weighted cross-entropy on the held-out fold, unrotated.
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: ModelCheckpoint,
    pub log: Vec<EpochLog>,
    /// Cumulative absolute gradient reaching each class's output row
    /// during the first epoch.
    pub head_gradient_mass: [f64; CLASS_COUNT],
}

/// Reads every manifest volume, keyed by case id.
pub fn load_volumes(manifest: &Manifest) -> Result<HashMap<String, Volume>> {
    manifest
        .cases
        .par_iter()
        .map(|c| Ok((c.case_id.clone(), read_volume(manifest.volume_path(c))?)))
        .collect()
}

/// Seed for the parameter initialisation of one fold.
pub fn fold_init_seed(seed: u64, fold: usize) -> u64 {
    seed::mix(seed, fold as u64)
}

pub fn train_fold(
    manifest: &Manifest,
    folds: &FoldAssignment,
    fold: usize,
    config: &IchNetConfig,
) -> Result<TrainOutcome> {
    let volumes = load_volumes(manifest)?;
    train_fold_with(manifest, &volumes, folds, fold, config)
}

/// Trains on every fold except `fold`, validating on `fold`.
pub fn train_fold_with(
    manifest: &Manifest,
    volumes: &HashMap<String, Volume>,
    folds: &FoldAssignment,
    fold: usize,
    config: &IchNetConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if fold >= folds.k {
        return Err(Error::invalid(format!("fold {fold} out of range for k = {}", folds.k)));
    }
    let labels = manifest.labels();
    let train_ids: Vec<String> = folds.complement(manifest, fold).into_iter().map(String::from).collect();
    let val_ids: Vec<String> = folds.members(manifest, fold).into_iter().map(String::from).collect();

    let mut counts = [0usize; CLASS_COUNT];
    for id in &train_ids {
        counts[labels[id].index()] += 1;
    }
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(Error::invalid(format!(
            "fold {fold}: no {} case left for training",
            Etiology::ALL[c]
        )));
    }
    let weights = class_weights(&counts)?;
    let expanded = oversample(&train_ids, &labels)?;

    let lookup = |id: &str| -> Result<&Volume> {
        let v = volumes
            .get(id)
            .ok_or_else(|| Error::invalid(format!("no volume loaded for case {id}")))?;
        if v.dims() != config.input_dims {
            return Err(Error::ShapeMismatch(format!(
                "case {id} has dims {:?}, model expects {:?}",
                v.dims(),
                config.input_dims
            )));
        }
        Ok(v)
    };
    for id in train_ids.iter().chain(&val_ids) {
        lookup(id)?;
    }

    let init_seed = fold_init_seed(config.seed, fold);
    let mut rng = seed::rng(seed::mix(init_seed, u64::MAX));
    let mut net: IchNet<f32> = IchNet::new(config.clone(), init_seed)?;
    let hyper = AdamHyper {
        learning_rate: config.learning_rate,
        beta1: config.beta1,
        beta2: config.beta2,
        epsilon: config.epsilon,
    };
    let mut adam = Adam::new(net.params(), hyper);
    let head_w = net.params().id_of("head.weight").expect("head registered");
    let head_b = net.params().id_of("head.bias").expect("head registered");
    let emb_dim = config.embedding_dim;
    let voxels: usize = config.input_dims.iter().product();

    let mut log = Vec::with_capacity(config.epochs);
    let mut head_gradient_mass = [0.0; CLASS_COUNT];
    let mut order = expanded;
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mut data = Vec::with_capacity(batch.len() * voxels);
            let mut batch_labels = Vec::with_capacity(batch.len());
            for id in batch {
                let v = lookup(id)?;
                if config.rotation_augment {
                    let k = rng.random_range(0..ROTATION_COUNT);
                    if k == 0 {
                        data.extend(normalize_hu::<f32>(v));
                    } else {
                        data.extend(normalize_hu::<f32>(&rotate_axial(v, k as f64 * ROTATION_STEP_DEGREES)));
                    }
                } else {
                    data.extend(normalize_hu::<f32>(v));
                }
                batch_labels.push(labels[id].index());
            }
            let triplets = mine_triplets(&batch_labels, config.margin_main, &mut rng);
            let mut graph = Graph::new();
            let input = Tensor::new(net.input_shape(batch.len()), data)?;
            let out = net.forward_graph(&mut graph, input)?;
            let loss = total_loss_graph(&mut graph, out.probs, out.embedding, &batch_labels, &weights, triplets)?;
            loss_sum += f64::from(graph.value(loss).data()[0]) * batch.len() as f64;
            let grads = graph.backward(loss)?;
            net.params_mut().accumulate(&grads);
            if epoch == 0 {
                let w = net.params().get(head_w).tensor.grad().expect("accumulated");
                let b = net.params().get(head_b).tensor.grad().expect("accumulated");
                for (c, mass) in head_gradient_mass.iter_mut().enumerate() {
                    *mass += w[c * emb_dim..(c + 1) * emb_dim].iter().map(|g| f64::from(g.abs())).sum::<f64>()
                        + f64::from(b[c].abs());
                }
            }
            adam.step(net.params_mut());
        }
        let val_loss = validation_loss(&net, &val_ids, &labels, &weights, &lookup)?;
        log.push(EpochLog {
            epoch: epoch + 1,
            train_loss: loss_sum / order.len() as f64,
            val_loss,
        });
    }
    Ok(TrainOutcome {
        checkpoint: ModelCheckpoint::new(net, fold, config.seed),
        log,
        head_gradient_mass,
    })
}

fn validation_loss<'a>(
    net: &IchNet<f32>,
    ids: &[String],
    labels: &HashMap<String, Etiology>,
    weights: &[f64; CLASS_COUNT],
    lookup: &dyn Fn(&str) -> Result<&'a Volume>,
) -> Result<Option<f64>> {
    if ids.is_empty() {
        return Ok(None);
    }
    let mut total = 0.0;
    for id in ids {
        let logits = net.logits(lookup(id)?)?;
        total += weighted_ce_loss(&softmax(&logits), labels[id].index(), weights)?;
    }
    Ok(Some(total / ids.len() as f64))
}

/// Softmax evaluated in f64.
pub fn softmax(logits: &[f64; CLASS_COUNT]) -> [f64; CLASS_COUNT] {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e = logits.map(|l| (l - m).exp());
    let s: f64 = e.iter().sum();
    e.map(|v| v / s)
}
