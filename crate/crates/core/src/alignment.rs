//! Class anchors in the shared latent space, cosine similarity, pseudo labels
//! and complementary (negative) labels.

use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, Result};
use crate::numerics::{RngStream, Tensor};

/// Fixed unit-norm embedding per category, row `i` belonging to category `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct AnchorSet {
    pub embeddings: Tensor,
    pub names: Vec<String>,
    pub seed: u64,
}

impl AnchorSet {
    pub fn len(&self) -> usize {
        self.embeddings.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.embeddings.cols()
    }

    pub fn with_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.len() {
            return Err(invalid(format!(
                "{} names for {} anchors",
                names.len(),
                self.len()
            )));
        }
        self.names = names;
        Ok(self)
    }
}

/// `n` i.i.d. Gaussian directions in `c` dimensions, each scaled to unit norm.
pub fn make_anchors(n: usize, c: usize, seed: u64) -> Result<AnchorSet> {
    if n < 2 || c < 2 {
        return Err(invalid(format!(
            "anchors need n >= 2 and c >= 2, got n={n} c={c}"
        )));
    }
    let mut rng = RngStream::new(seed, "anchors");
    let mut data = Vec::with_capacity(n * c);
    for _ in 0..n {
        let row: Vec<f64> = (0..c).map(|_| StandardNormal.sample(&mut rng)).collect();
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        data.extend(row.iter().map(|v| (v / norm) as f32));
    }
    Ok(AnchorSet {
        embeddings: Tensor::matrix(n, c, data)?,
        names: (0..n).map(|i| format!("class{i}")).collect(),
        seed,
    })
}

/// Cosine similarity of `r` (one row) with every anchor.
pub fn similarity(anchors: &AnchorSet, r: &[f32]) -> Result<Vec<f32>> {
    if r.len() != anchors.dim() {
        return Err(crate::Error::Shape {
            op: "similarity",
            lhs: anchors.embeddings.dims().to_vec(),
            rhs: vec![1, r.len()],
        });
    }
    let r_norm = r.iter().map(|&v| v as f64 * v as f64).sum::<f64>().sqrt();
    if r_norm == 0.0 {
        return Err(invalid("similarity of a zero-norm representation"));
    }
    Ok((0..anchors.len())
        .map(|i| {
            let e = anchors.embeddings.row(i);
            let dot: f64 = e.iter().zip(r).map(|(&a, &b)| a as f64 * b as f64).sum();
            let e_norm = e.iter().map(|&v| v as f64 * v as f64).sum::<f64>().sqrt();
            (dot / (e_norm * r_norm)) as f32
        })
        .collect())
}

/// Index of the largest similarity; the lowest index wins ties.
pub fn pseudo_label(q: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in q.iter().enumerate().skip(1) {
        if v > q[best] {
            best = i;
        }
    }
    best
}

/// The `k` least similar categories, most dissimilar first, ties by lower
/// index.
pub fn complementary_labels(q: &[f32], k: usize) -> Result<Vec<usize>> {
    if k == 0 || k >= q.len() {
        return Err(invalid(format!(
            "k must lie in [1, {}], got {k}",
            q.len().saturating_sub(1)
        )));
    }
    let mut order: Vec<usize> = (0..q.len()).collect();
    order.sort_by(|&a, &b| q[a].total_cmp(&q[b]).then(a.cmp(&b)));
    order.truncate(k);
    Ok(order)
}
