//! Central finite differences against the reverse sweep, in f64.

#![allow(dead_code)]

use etiobench_core::nn::{
    total_loss_graph, ConvGeom, Graph, IchNet, IchNetConfig, Tensor, Triplet, Var,
};

pub const H: f64 = 1e-3;
pub const TOL: f64 = 1e-3;

fn rel_err(a: f64, n: f64) -> f64 {
    let scale = a.abs().max(n.abs());
    if scale < 1e-7 {
        return (a - n).abs();
    }
    (a - n).abs() / scale
}

fn wavy(shape: Vec<usize>, salt: f64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|i| ((i as f64 + 1.0) * 0.731 + salt).sin() * 0.9 + 0.05 * salt)
        .collect();
    Tensor::new(shape, data).unwrap()
}

const LABELS: [usize; 2] = [1, 4];
const WEIGHTS: [f64; 6] = [0.5, 1.5, 1.0, 2.0, 3.0, 0.8];

/// Reduces any activation to a scalar through pool, dense layer, softmax
/// and weighted cross-entropy.
fn head(g: &mut Graph<f64>, x: Var) -> Var {
    let shape = g.value(x).shape().to_vec();
    let flat = if shape.len() > 2 { g.global_avg_pool(x).unwrap() } else { x };
    let features = g.value(flat).shape()[1];
    let w = g.input(wavy(vec![6, features], 2.5));
    let b = g.input(wavy(vec![6], 0.3));
    let logits = g.linear(flat, w, b).unwrap();
    let p = g.softmax(logits).unwrap();
    g.weighted_ce(p, &LABELS, &WEIGHTS).unwrap()
}

fn max_error<F>(inputs: &[Tensor<f64>], build: F) -> f64
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Var,
{
    let eval = |ins: &[Tensor<f64>]| {
        let mut g = Graph::new();
        let vars: Vec<Var> = ins.iter().map(|t| g.input(t.clone())).collect();
        let loss = build(&mut g, &vars);
        (g, vars, loss)
    };
    let (g, vars, loss) = eval(inputs);
    let grads = g.backward(loss).unwrap();
    let mut worst = 0.0f64;
    for (k, v) in vars.iter().enumerate() {
        let analytic = grads.wrt(*v).map(<[f64]>::to_vec).unwrap_or(vec![0.0; inputs[k].len()]);
        for i in 0..inputs[k].len() {
            let mut shifted = inputs.to_vec();
            shifted[k].data_mut()[i] += H;
            let (gp, _, lp) = eval(&shifted);
            shifted[k].data_mut()[i] -= 2.0 * H;
            let (gm, _, lm) = eval(&shifted);
            let numeric = (gp.value(lp).data()[0] - gm.value(lm).data()[0]) / (2.0 * H);
            worst = worst.max(rel_err(analytic[i], numeric));
        }
    }
    worst
}


pub fn conv_layer() -> f64 {
    let geom = ConvGeom::cube3(2, 3, [1, 2, 2]);
    let err = max_error(
        &[wavy(vec![2, 2, 3, 5, 4], 0.1), wavy(geom.weight_shape(), 0.7), wavy(vec![3], 1.1)],
        |g, v| {
            let y = g.conv3d(v[0], v[1], v[2], geom).unwrap();
            head(g, y)
        },
    );
    err
}

pub fn lateral_conv_layer() -> f64 {
    let geom = ConvGeom {
        in_channels: 2,
        out_channels: 4,
        kernel: [3, 1, 1],
        stride: [2, 1, 1],
        padding: [1, 0, 0],
    };
    let err = max_error(
        &[wavy(vec![2, 2, 5, 3, 3], 0.4), wavy(geom.weight_shape(), 0.2), wavy(vec![4], 0.9)],
        |g, v| {
            let y = g.conv3d(v[0], v[1], v[2], geom).unwrap();
            head(g, y)
        },
    );
    err
}

pub fn relu_layer() -> f64 {
    // Values kept away from the kink by more than H.
    let mut x = wavy(vec![2, 3, 2, 3, 3], 0.6);
    for v in x.data_mut() {
        if v.abs() < 0.01 {
            *v = 0.05;
        }
    }
    let err = max_error(&[x], |g, v| {
        let y = g.relu(v[0]);
        head(g, y)
    });
    err
}

pub fn pooling_and_slicing() -> f64 {
    let err = max_error(&[wavy(vec![2, 2, 7, 3, 2], 0.8)], |g, v| {
        let s = g.slice_stride(v[0], 3).unwrap();
        head(g, s)
    });
    err
}

pub fn lateral_concatenation() -> f64 {
    let err = max_error(&[wavy(vec![2, 2, 2, 3, 3], 0.1), wavy(vec![2, 3, 2, 3, 3], 0.5)], |g, v| {
        let c = g.concat_channels(v[0], v[1]).unwrap();
        head(g, c)
    });
    err
}

pub fn dense_softmax_and_cross_entropy() -> f64 {
    let err = max_error(&[wavy(vec![2, 5], 0.3), wavy(vec![4, 5], 1.3), wavy(vec![4], 0.2)], |g, v| {
        let y = g.linear(v[0], v[1], v[2]).unwrap();
        head(g, y)
    });
    err
}

pub fn triplet_term() -> f64 {
    let triplets = vec![
        Triplet { anchor: 0, positive: 1, negative: 2, margin: 1.0 },
        Triplet { anchor: 2, positive: 3, negative: 0, margin: 0.5 },
        Triplet { anchor: 1, positive: 0, negative: 3, margin: 1.0 },
    ];
    let err = max_error(&[wavy(vec![4, 3], 0.9)], |g, v| g.triplet(v[0], triplets.clone()).unwrap());
    err
}

fn tiny_config() -> IchNetConfig {
    IchNetConfig {
        input_dims: [8, 8, 4],
        slow_stride: 2,
        fast_widths: [2, 3, 3],
        slow_widths: [3, 4, 5],
        embedding_dim: 6,
        ..IchNetConfig::default()
    }
}

pub fn model_loss(net: &IchNet<f64>, input: &Tensor<f64>, triplets: &[Triplet], scale: f64) -> (Graph<f64>, Var) {
    let mut g = Graph::new();
    let out = net.forward_graph(&mut g, input.clone()).unwrap();
    let loss = total_loss_graph(&mut g, out.probs, out.embedding, &[0, 0, 5], &WEIGHTS, triplets.to_vec()).unwrap();
    let loss = g.scale(loss, scale);
    (g, loss)
}

/// Initialisation seed chosen so no ReLU pre-activation or hinge lies
/// within one step of its kink.
pub fn model_fixture() -> (IchNet<f64>, Tensor<f64>, Vec<Triplet>) {
    let net: IchNet<f64> = IchNet::new(tiny_config(), 23).unwrap();
    let input = wavy(net.input_shape(3), 0.35).cast::<f64>();
    let input = Tensor::new(input.shape().to_vec(), input.data().iter().map(|v| v.abs()).collect()).unwrap();
    let triplets = vec![
        Triplet { anchor: 0, positive: 1, negative: 2, margin: 1.0 },
        Triplet { anchor: 2, positive: 2, negative: 0, margin: 0.5 },
    ];
    (net, input, triplets)
}


/// Worst relative error over every parameter and the parameter holding it.
pub fn whole_model() -> (f64, String) {
    let (mut net, input, triplets) = model_fixture();
    let (g, loss) = model_loss(&net, &input, &triplets, 1.0);
    let grads = g.backward(loss).unwrap();
    net.params_mut().accumulate(&grads);
    let analytic: Vec<Vec<f64>> = net.params().iter().map(|(_, p)| p.tensor.grad().unwrap().to_vec()).collect();
    let ids: Vec<_> = net.params().iter().map(|(id, _)| id).collect();
    let mut worst = (0.0f64, String::new());
    for (k, id) in ids.iter().enumerate() {
        for i in 0..analytic[k].len() {
            let orig = net.params().get(*id).tensor.data()[i];
            net.params_mut().get_mut(*id).tensor.data_mut()[i] = orig + H;
            let (gp, lp) = model_loss(&net, &input, &triplets, 1.0);
            net.params_mut().get_mut(*id).tensor.data_mut()[i] = orig - H;
            let (gm, lm) = model_loss(&net, &input, &triplets, 1.0);
            net.params_mut().get_mut(*id).tensor.data_mut()[i] = orig;
            let numeric = (gp.value(lp).data()[0] - gm.value(lm).data()[0]) / (2.0 * H);
            let e = rel_err(analytic[k][i], numeric);
            if e > worst.0 {
                worst = (e, net.params().get(*id).name.clone());
            }
        }
    }
    worst
}


/// Every layer kind, both loss terms, then the whole model.
pub fn all_checks() -> Vec<(String, f64)> {
    let mut v: Vec<(String, f64)> = vec![
        ("conv3d".into(), conv_layer()),
        ("lateral conv".into(), lateral_conv_layer()),
        ("relu".into(), relu_layer()),
        ("slice stride + pool".into(), pooling_and_slicing()),
        ("channel concat".into(), lateral_concatenation()),
        ("linear + softmax + weighted ce".into(), dense_softmax_and_cross_entropy()),
        ("triplet".into(), triplet_term()),
    ];
    let (e, name) = whole_model();
    v.push((format!("whole model ({name})"), e));
    v
}
