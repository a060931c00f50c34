//! Straight-line f64 re-implementation of the block, used as a test oracle.

use super::SaBlock;
use crate::numerics::{RngStream, Tensor};
use rand::Rng;

pub(crate) type Mat = Vec<Vec<f64>>;

pub(crate) fn to_mat(t: &Tensor) -> Mat {
    (0..t.rows())
        .map(|r| t.row(r).iter().map(|&v| v as f64).collect())
        .collect()
}

fn affine(x: &Mat, w: &Tensor, b: &Tensor) -> Mat {
    let (w, b) = (to_mat(w), to_mat(b));
    x.iter()
        .map(|row| {
            (0..b[0].len())
                .map(|j| {
                    b[0][j]
                        + row
                            .iter()
                            .enumerate()
                            .map(|(p, v)| v * w[p][j])
                            .sum::<f64>()
                })
                .collect()
        })
        .collect()
}

fn layer_norm(x: &Mat, gamma: &Tensor, beta: &Tensor) -> Mat {
    let (g, b) = (gamma.data(), beta.data());
    x.iter()
        .map(|row| {
            let n = row.len() as f64;
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let denom = var.max(1e-5).sqrt();
            row.iter()
                .enumerate()
                .map(|(i, v)| (v - mean) / denom * g[i] as f64 + b[i] as f64)
                .collect()
        })
        .collect()
}

fn gelu(v: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * v * (1.0 + (c * (v + 0.044715 * v * v * v)).tanh())
}

fn add(a: &Mat, b: &Mat) -> Mat {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + q).collect())
        .collect()
}

pub(crate) fn block(x: &Mat, blk: &SaBlock) -> Mat {
    let n = x.len();
    let d = x[0].len();
    let hd = d / blk.heads;
    let h = layer_norm(x, &blk.ln1.gamma, &blk.ln1.beta);
    let q = affine(&h, &blk.q.weight, &blk.q.bias);
    let k = affine(&h, &blk.k.weight, &blk.k.bias);
    let v = affine(&h, &blk.v.weight, &blk.v.bias);
    let mut merged = vec![vec![0.0; d]; n];
    for head in 0..blk.heads {
        let cols = head * hd..(head + 1) * hd;
        for i in 0..n {
            let scores: Vec<f64> = (0..n)
                .map(|j| cols.clone().map(|c| q[i][c] * k[j][c]).sum::<f64>() / (hd as f64).sqrt())
                .collect();
            let max = scores.iter().cloned().fold(f64::MIN, f64::max);
            let e: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
            let z: f64 = e.iter().sum();
            for c in cols.clone() {
                merged[i][c] = (0..n).map(|j| e[j] / z * v[j][c]).sum();
            }
        }
    }
    let x = add(x, &affine(&merged, &blk.out.weight, &blk.out.bias));
    let h = layer_norm(&x, &blk.ln2.gamma, &blk.ln2.beta);
    let h: Mat = affine(&h, &blk.ff1.weight, &blk.ff1.bias)
        .into_iter()
        .map(|r| r.into_iter().map(gelu).collect())
        .collect();
    add(&x, &affine(&h, &blk.ff2.weight, &blk.ff2.bias))
}

/// A block whose every tensor, norms and biases included, is random.
pub(crate) fn random_block(dim: usize, heads: usize, seed: u64) -> SaBlock {
    let mut rng = RngStream::new(seed, "test/block");
    let mut blk = SaBlock::init(dim, heads, 2, &mut rng);
    use crate::params::Parameters;
    for (_, t) in blk.named_tensors_mut() {
        for v in t.data_mut() {
            *v = rng.gen_range(-0.8..0.8);
        }
    }
    blk
}

pub(crate) fn random_tensor(rows: usize, cols: usize, seed: u64) -> Tensor {
    let mut rng = RngStream::new(seed, "test/tensor");
    Tensor::matrix(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.gen_range(-1.5..1.5)).collect(),
    )
    .unwrap()
}

pub(crate) fn max_dev(got: &Tensor, want: &Mat) -> f64 {
    let got = to_mat(got);
    got.iter()
        .flatten()
        .zip(want.iter().flatten())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}
