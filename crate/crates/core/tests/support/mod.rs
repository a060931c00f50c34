//! Independent straight-line oracles: f64 arithmetic, no shared kernels.

use sparse_fca::encoder::SaBlock;
use sparse_fca::fca::FcaLayer;
use sparse_fca::numerics::{Tensor, LAYER_NORM_VAR_FLOOR};

pub type Mat = Vec<Vec<f64>>;

pub fn to_mat(t: &Tensor) -> Mat {
    (0..t.rows())
        .map(|r| t.row(r).iter().map(|&v| v as f64).collect())
        .collect()
}

pub fn max_dev(got: &Tensor, want: &Mat) -> f64 {
    to_mat(got)
        .iter()
        .flatten()
        .zip(want.iter().flatten())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

fn affine(x: &Mat, w: &Tensor, b: &Tensor) -> Mat {
    let (w, b) = (to_mat(w), to_mat(b));
    x.iter()
        .map(|row| {
            (0..b[0].len())
                .map(|j| b[0][j] + (0..row.len()).map(|p| row[p] * w[p][j]).sum::<f64>())
                .collect()
        })
        .collect()
}

fn layer_norm(x: &Mat, gamma: &Tensor, beta: &Tensor) -> Mat {
    x.iter()
        .map(|row| {
            let n = row.len() as f64;
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let s = var.max(LAYER_NORM_VAR_FLOOR as f64).sqrt();
            (0..row.len())
                .map(|i| (row[i] - mean) / s * gamma.data()[i] as f64 + beta.data()[i] as f64)
                .collect()
        })
        .collect()
}

fn gelu(v: f64) -> f64 {
    0.5 * v * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (v + 0.044715 * v.powi(3))).tanh())
}

fn plus(a: &Mat, b: &Mat) -> Mat {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + q).collect())
        .collect()
}

pub fn block(x: &Mat, blk: &SaBlock) -> Mat {
    let (n, d) = (x.len(), x[0].len());
    let hd = d / blk.heads;
    let h = layer_norm(x, &blk.ln1.gamma, &blk.ln1.beta);
    let (q, k, v) = (
        affine(&h, &blk.q.weight, &blk.q.bias),
        affine(&h, &blk.k.weight, &blk.k.bias),
        affine(&h, &blk.v.weight, &blk.v.bias),
    );
    let mut merged = vec![vec![0.0; d]; n];
    for head in 0..blk.heads {
        let lo = head * hd;
        for i in 0..n {
            let logits: Vec<f64> = (0..n)
                .map(|j| (lo..lo + hd).map(|c| q[i][c] * k[j][c]).sum::<f64>() / (hd as f64).sqrt())
                .collect();
            let z: f64 = logits.iter().map(|l| l.exp()).sum();
            for c in lo..lo + hd {
                merged[i][c] = (0..n).map(|j| logits[j].exp() / z * v[j][c]).sum();
            }
        }
    }
    let x = plus(x, &affine(&merged, &blk.out.weight, &blk.out.bias));
    let h = layer_norm(&x, &blk.ln2.gamma, &blk.ln2.beta);
    let h: Mat = affine(&h, &blk.ff1.weight, &blk.ff1.bias)
        .into_iter()
        .map(|r| r.into_iter().map(gelu).collect())
        .collect();
    plus(&x, &affine(&h, &blk.ff2.weight, &blk.ff2.bias))
}

pub fn fca(x: &Mat, layer: &FcaLayer, frozen: &SaBlock) -> Mat {
    if !layer.enabled {
        return block(x, frozen);
    }
    let tokens = to_mat(&layer.tokens);
    let refined = match &layer.learnable_block {
        Some(b) => block(&tokens, b),
        None => tokens,
    };
    let mut fused = x.clone();
    fused.extend(refined);
    block(&fused, frozen).into_iter().take(x.len()).collect()
}

fn sq(a: &[f32; 3], b: &[f32; 3]) -> f64 {
    (0..3).map(|i| (a[i] as f64 - b[i] as f64).powi(2)).sum()
}

/// Farthest-point order from `first`, recomputing every distance to the
/// chosen set at each step; ties go to the lower index.
pub fn fps(points: &[[f32; 3]], first: usize, g: usize) -> Vec<usize> {
    let mut chosen = vec![first];
    while chosen.len() < g {
        let mut best = (f64::NEG_INFINITY, usize::MAX);
        for i in 0..points.len() {
            if chosen.contains(&i) {
                continue;
            }
            let d = chosen
                .iter()
                .map(|&c| sq(&points[i], &points[c]))
                .fold(f64::INFINITY, f64::min);
            if d > best.0 {
                best = (d, i);
            }
        }
        chosen.push(best.1);
    }
    chosen
}

/// Full sort by (distance, not-the-centre, index), repeated cyclically to `s`.
pub fn knn(points: &[[f32; 3]], center: usize, s: usize) -> Vec<usize> {
    let mut all: Vec<usize> = (0..points.len()).collect();
    all.sort_by(|&a, &b| {
        sq(&points[a], &points[center])
            .total_cmp(&sq(&points[b], &points[center]))
            .then((a != center).cmp(&(b != center)))
            .then(a.cmp(&b))
    });
    (0..s).map(|j| all[j % all.len()]).collect()
}

pub fn argmax_first(q: &[f32]) -> usize {
    let mut best = 0;
    for i in 1..q.len() {
        if q[i] > q[best] {
            best = i;
        }
    }
    best
}

/// The `k` classes of lowest similarity, ranked by counting how many
/// classes precede each one under (similarity, index).
pub fn lowest_k(q: &[f32], k: usize) -> Vec<usize> {
    let rank = |i: usize| {
        (0..q.len())
            .filter(|&j| q[j] < q[i] || (q[j] == q[i] && j < i))
            .count()
    };
    let mut out: Vec<(usize, usize)> = (0..q.len())
        .map(|i| (rank(i), i))
        .filter(|&(r, _)| r < k)
        .collect();
    out.sort_unstable();
    out.into_iter().map(|(_, i)| i).collect()
}
