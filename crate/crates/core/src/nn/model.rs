//! Two-pathway 3D classifier. The fast pathway sees every axial slice at a
//! narrow width; the slow pathway sees every `slow_stride`-th slice at a
//! wider width and receives slice-strided lateral projections from the fast
//! pathway after the first two stages.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::conv::ConvGeom;
use super::graph::{Graph, Var};
use super::init::kaiming_init;
use super::params::{ParamId, ParamStore};
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};
use crate::etiology::CLASS_COUNT;
use crate::seed;
use crate::volume::Volume;

/// Normalisation window in HU.
pub const INPUT_WINDOW_HU: (f64, f64) = (-100.0, 300.0);

const STAGES: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IchNetConfig {
    /// (nx, ny, nz)
    pub input_dims: [usize; 3],
    pub slow_stride: usize,
    pub fast_widths: [usize; STAGES],
    pub slow_widths: [usize; STAGES],
    pub embedding_dim: usize,
    pub class_count: usize,
    pub margin_main: f64,
    pub margin_minor: f64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Draw a random axial rotation copy for every training sample.
    pub rotation_augment: bool,
    pub seed: u64,
}

impl Default for IchNetConfig {
    fn default() -> Self {
        IchNetConfig {
            input_dims: [64, 64, 16],
            slow_stride: 4,
            fast_widths: [2, 4, 8],
            slow_widths: [8, 16, 32],
            embedding_dim: 64,
            class_count: CLASS_COUNT,
            margin_main: 1.0,
            margin_minor: 0.5,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 8,
            epochs: 4,
            rotation_augment: true,
            seed: 0,
        }
    }
}

impl IchNetConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::invalid(format!("model config: {m}")));
        if self.input_dims.contains(&0) {
            return bad("input dims must be positive");
        }
        if self.slow_stride < 2 {
            return bad("slow_stride must be at least 2");
        }
        if self.fast_widths.contains(&0) || self.slow_widths.contains(&0) || self.embedding_dim == 0 {
            return bad("widths must be positive");
        }
        if self.class_count != CLASS_COUNT {
            return bad("class_count must be 6");
        }
        if !(self.margin_main > 0.0) || (self.margin_minor - self.margin_main / 2.0).abs() > 1e-12 {
            return bad("margin_minor must equal margin_main / 2");
        }
        if !(self.learning_rate > 0.0) || self.batch_size == 0 {
            return bad("learning rate and batch size must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.epsilon > 0.0) {
            return bad("invalid Adam hyperparameters");
        }
        Ok(())
    }

    pub fn with_margin_main(mut self, m: f64) -> Self {
        self.margin_main = m;
        self.margin_minor = m / 2.0;
        self
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serialises");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }

    fn fast_geom(&self, stage: usize) -> ConvGeom {
        let input = if stage == 0 { 1 } else { self.fast_widths[stage - 1] };
        ConvGeom::cube3(input, self.fast_widths[stage], [1, 2, 2])
    }

    fn slow_geom(&self, stage: usize) -> ConvGeom {
        let input = if stage == 0 {
            1
        } else {
            self.slow_widths[stage - 1] + 2 * self.fast_widths[stage - 1]
        };
        ConvGeom::cube3(input, self.slow_widths[stage], [1, 2, 2])
    }

    fn lateral_geom(&self, stage: usize) -> ConvGeom {
        ConvGeom {
            in_channels: self.fast_widths[stage],
            out_channels: 2 * self.fast_widths[stage],
            kernel: [3, 1, 1],
            stride: [self.slow_stride, 1, 1],
            padding: [1, 0, 0],
        }
    }

    fn pooled_features(&self) -> usize {
        self.slow_widths[STAGES - 1] + self.fast_widths[STAGES - 1]
    }
}

#[derive(Debug, Clone, Copy)]
struct ConvIds {
    weight: ParamId,
    bias: ParamId,
    geom: ConvGeom,
}

#[derive(Debug, Clone, Copy)]
struct LinearIds {
    weight: ParamId,
    bias: ParamId,
}

#[derive(Debug, Clone)]
struct Layout {
    fast: [ConvIds; STAGES],
    slow: [ConvIds; STAGES],
    lateral: [ConvIds; STAGES - 1],
    embed: LinearIds,
    head: LinearIds,
}

/// Graph handles produced by one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ForwardVars {
    pub logits: Var,
    pub probs: Var,
    pub embedding: Var,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IchNet<T: Real = f32> {
    config: IchNetConfig,
    params: ParamStore<T>,
}

/// Scales HU into the unit interval over the normalisation window.
pub fn normalize_hu<T: Real>(volume: &Volume) -> Vec<T> {
    let (lo, hi) = INPUT_WINDOW_HU;
    volume
        .voxels()
        .iter()
        .map(|&v| T::from_f64((f64::from(v).clamp(lo, hi) - lo) / (hi - lo)))
        .collect()
}

impl<T: Real> IchNet<T> {
    /// Fresh network with Kaiming-initialised weights and zero biases.
    pub fn new(config: IchNetConfig, init_seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let mut counter = 0u64;
        let mut kaiming = |shape: Vec<usize>, fan_in: usize| {
            counter += 1;
            kaiming_init::<T>(shape, fan_in, seed::mix(init_seed, counter))
        };
        let mut add_conv = |params: &mut ParamStore<T>, name: &str, g: ConvGeom| -> Result<()> {
            params.add(format!("{name}.weight"), kaiming(g.weight_shape(), g.fan_in())?)?;
            params.add(format!("{name}.bias"), Tensor::zeros(vec![g.out_channels]))?;
            Ok(())
        };
        for s in 0..STAGES {
            add_conv(&mut params, &format!("fast{}", s + 1), config.fast_geom(s))?;
            add_conv(&mut params, &format!("slow{}", s + 1), config.slow_geom(s))?;
            if s + 1 < STAGES {
                add_conv(&mut params, &format!("lateral{}", s + 1), config.lateral_geom(s))?;
            }
        }
        let feat = config.pooled_features();
        let emb = config.embedding_dim;
        params.add("embed.weight", kaiming_init(vec![emb, feat], feat, seed::mix(init_seed, 1000))?)?;
        params.add("embed.bias", Tensor::zeros(vec![emb]))?;
        params.add(
            "head.weight",
            kaiming_init(vec![config.class_count, emb], emb, seed::mix(init_seed, 1001))?,
        )?;
        params.add("head.bias", Tensor::zeros(vec![config.class_count]))?;
        Ok(IchNet { config, params })
    }

    /// Rebuilds a network from stored tensors, requiring every architecture
    /// parameter exactly once with its expected shape.
    pub fn from_params(config: IchNetConfig, stored: ParamStore<T>) -> Result<Self> {
        let mut net = IchNet::new(config, 0)?;
        if stored.len() != net.params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                net.params.len(),
                stored.len()
            )));
        }
        for (_, p) in stored.iter() {
            let id = net
                .params
                .id_of(&p.name)
                .ok_or_else(|| Error::Checkpoint(format!("unexpected tensor {}", p.name)))?;
            let slot = net.params.get_mut(id);
            if slot.tensor.shape() != p.tensor.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor {} has shape {:?}, expected {:?}",
                    p.name,
                    p.tensor.shape(),
                    slot.tensor.shape()
                )));
            }
            slot.tensor = p.tensor.clone();
        }
        Ok(net)
    }

    pub fn config(&self) -> &IchNetConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn cast<U: Real>(&self) -> IchNet<U> {
        let mut params = ParamStore::new();
        for (_, p) in self.params.iter() {
            let mut t = p.tensor.cast::<U>();
            t.zero_grad();
            let id = params.add(p.name.clone(), t).expect("names already unique");
            params.get_mut(id).frozen = p.frozen;
        }
        IchNet {
            config: self.config.clone(),
            params,
        }
    }

    fn layout(&self) -> Layout {
        let ids = |name: &str| {
            let w = self.params.id_of(&format!("{name}.weight")).expect("registered");
            let b = self.params.id_of(&format!("{name}.bias")).expect("registered");
            (w, b)
        };
        let conv = |name: String, geom: ConvGeom| {
            let (weight, bias) = ids(&name);
            ConvIds { weight, bias, geom }
        };
        let c = &self.config;
        let (ew, eb) = ids("embed");
        let (hw, hb) = ids("head");
        Layout {
            fast: std::array::from_fn(|s| conv(format!("fast{}", s + 1), c.fast_geom(s))),
            slow: std::array::from_fn(|s| conv(format!("slow{}", s + 1), c.slow_geom(s))),
            lateral: std::array::from_fn(|s| conv(format!("lateral{}", s + 1), c.lateral_geom(s))),
            embed: LinearIds { weight: ew, bias: eb },
            head: LinearIds { weight: hw, bias: hb },
        }
    }

    /// Input layout is `[B, 1, nz, ny, nx]` of normalised intensities.
    pub fn input_shape(&self, batch: usize) -> Vec<usize> {
        let [nx, ny, nz] = self.config.input_dims;
        vec![batch, 1, nz, ny, nx]
    }

    /// Records the forward pass on `graph`.
    pub fn forward_graph(&self, graph: &mut Graph<T>, input: Tensor<T>) -> Result<ForwardVars> {
        if input.shape().len() != 5 || input.shape()[1..] != self.input_shape(1)[1..] {
            return Err(Error::ShapeMismatch(format!(
                "model expects [B, 1, {}, {}, {}], got {:?}",
                self.config.input_dims[2],
                self.config.input_dims[1],
                self.config.input_dims[0],
                input.shape()
            )));
        }
        let layout = self.layout();
        let p = &self.params;
        let conv = |g: &mut Graph<T>, x: Var, ids: ConvIds| -> Result<Var> {
            let w = g.param(p, ids.weight);
            let b = g.param(p, ids.bias);
            g.conv3d(x, w, b, ids.geom)
        };

        let x = graph.constant(input);
        let mut fast = x;
        let mut slow = graph.slice_stride(x, self.config.slow_stride)?;
        for s in 0..STAGES {
            let f = conv(graph, fast, layout.fast[s])?;
            fast = graph.relu(f);
            let sl = conv(graph, slow, layout.slow[s])?;
            slow = graph.relu(sl);
            if s + 1 < STAGES {
                let lat = conv(graph, fast, layout.lateral[s])?;
                slow = graph.concat_channels(slow, lat)?;
            }
        }
        let pooled_slow = graph.global_avg_pool(slow)?;
        let pooled_fast = graph.global_avg_pool(fast)?;
        let features = graph.concat_channels(pooled_slow, pooled_fast)?;

        let ew = graph.param(p, layout.embed.weight);
        let eb = graph.param(p, layout.embed.bias);
        let e = graph.linear(features, ew, eb)?;
        let embedding = graph.relu(e);
        let hw = graph.param(p, layout.head.weight);
        let hb = graph.param(p, layout.head.bias);
        let logits = graph.linear(embedding, hw, hb)?;
        let probs = graph.softmax(logits)?;
        Ok(ForwardVars {
            logits,
            probs,
            embedding,
        })
    }

    /// Batch forward pass: per-item probabilities and embeddings.
    pub fn forward(&self, input: Tensor<T>) -> Result<(Vec<[f64; CLASS_COUNT]>, Vec<Vec<f64>>)> {
        let mut graph = Graph::new();
        let vars = self.forward_graph(&mut graph, input)?;
        let probs = graph
            .value(vars.probs)
            .data()
            .chunks(CLASS_COUNT)
            .map(|r| std::array::from_fn(|c| r[c].to_f64()))
            .collect();
        let emb = graph
            .value(vars.embedding)
            .data()
            .chunks(self.config.embedding_dim)
            .map(|r| r.iter().map(|v| v.to_f64()).collect())
            .collect();
        Ok((probs, emb))
    }

    /// Class logits for one volume already at the input geometry.
    pub fn logits(&self, volume: &Volume) -> Result<[f64; CLASS_COUNT]> {
        let [nx, ny, nz] = self.config.input_dims;
        if volume.dims() != [nx, ny, nz] {
            return Err(Error::ShapeMismatch(format!(
                "volume dims {:?} differ from model input {:?}",
                volume.dims(),
                self.config.input_dims
            )));
        }
        let input = Tensor::new(self.input_shape(1), normalize_hu(volume))?;
        let mut graph = Graph::new();
        let vars = self.forward_graph(&mut graph, input)?;
        let l = graph.value(vars.logits).data();
        Ok(std::array::from_fn(|c| l[c].to_f64()))
    }
}
