//! The phantom class signatures must be learnable: a linear softmax probe
//! on mean intensities over the 64 cells of a depth-2 octree beats chance
//! by a wide margin on held-out phantoms.

use etiobench_core::phantom::{generate_case, PhantomGeometry, PhantomSpec};
use etiobench_core::{Etiology, Volume};

const CELLS: usize = 4;

fn octree_features(v: &Volume) -> Vec<f64> {
    let d = v.dims();
    let mut sums = vec![0.0; CELLS * CELLS * CELLS];
    let mut counts = vec![0usize; sums.len()];
    for z in 0..d[2] {
        for y in 0..d[1] {
            for x in 0..d[0] {
                let cell = ((z * CELLS / d[2]) * CELLS + y * CELLS / d[1]) * CELLS + x * CELLS / d[0];
                // Clamp to the soft-tissue window so bone does not dominate.
                let hu = v.get(x, y, z).clamp(-100, 300) as f64;
                sums[cell] += hu;
                counts[cell] += 1;
            }
        }
    }
    sums.iter().zip(&counts).map(|(s, &c)| s / c as f64).collect()
}

fn dataset(per_class: usize, seed_base: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for e in Etiology::ALL {
        for i in 0..per_class {
            let spec = PhantomSpec {
                etiology: e,
                seed: seed_base + (e.index() * 10_000 + i) as u64,
                geometry: PhantomGeometry::default(),
            };
            let (v, _, _) = generate_case(&spec).unwrap();
            xs.push(octree_features(&v));
            ys.push(e.index());
        }
    }
    (xs, ys)
}

fn train_probe(xs: &[Vec<f64>], ys: &[usize]) -> (Vec<f64>, Vec<f64>, Vec<[f64; 6]>, [f64; 6]) {
    let dim = xs[0].len();
    let n = xs.len() as f64;
    let mean: Vec<f64> = (0..dim).map(|j| xs.iter().map(|x| x[j]).sum::<f64>() / n).collect();
    let std: Vec<f64> = (0..dim)
        .map(|j| (xs.iter().map(|x| (x[j] - mean[j]).powi(2)).sum::<f64>() / n).sqrt().max(1e-9))
        .collect();
    let z: Vec<Vec<f64>> = xs
        .iter()
        .map(|x| (0..dim).map(|j| (x[j] - mean[j]) / std[j]).collect())
        .collect();
    let mut w = vec![[0.0f64; 6]; dim];
    let mut b = [0.0f64; 6];
    let lr = 0.5;
    for _ in 0..1500 {
        let mut gw = vec![[0.0f64; 6]; dim];
        let mut gb = [0.0f64; 6];
        for (x, &y) in z.iter().zip(ys) {
            let mut logits = b;
            for j in 0..dim {
                for c in 0..6 {
                    logits[c] += w[j][c] * x[j];
                }
            }
            let m = logits.iter().cloned().fold(f64::MIN, f64::max);
            let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
            let s: f64 = e.iter().sum();
            for c in 0..6 {
                let g = e[c] / s - if c == y { 1.0 } else { 0.0 };
                gb[c] += g / n;
                for j in 0..dim {
                    gw[j][c] += g * x[j] / n;
                }
            }
        }
        for c in 0..6 {
            b[c] -= lr * gb[c];
            for j in 0..dim {
                w[j][c] -= lr * (gw[j][c] + 1e-3 * w[j][c]);
            }
        }
    }
    (mean, std, w, b)
}

#[test]
fn octree_probe_beats_chance_on_held_out_phantoms() {
    let (train_x, train_y) = dataset(100, 1);
    let (test_x, test_y) = dataset(50, 900_000);
    let (mean, std, w, b) = train_probe(&train_x, &train_y);
    let correct = test_x
        .iter()
        .zip(&test_y)
        .filter(|(x, &y)| {
            let mut logits = b;
            for j in 0..x.len() {
                for c in 0..6 {
                    logits[c] += w[j][c] * (x[j] - mean[j]) / std[j];
                }
            }
            etiobench_core::etiology::argmax(&logits) == y
        })
        .count();
    let acc = correct as f64 / test_x.len() as f64;
    println!("octree probe held-out accuracy: {acc:.3} over {} cases", test_x.len());
    assert_eq!(test_x.len(), 300);
    assert!(acc > 0.5, "accuracy {acc}");
}
