//! Adaptation objectives: pseudo-label cross-entropy, the complementary
//! loss, InfoNCE self-distillation and their weighted total.
//!
//! Each loss has a plain scalar form (f64 internally) for inspection and a
//! tape form used in training. Batched tape forms average over the batch.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::numerics::{Tape, Tensor, Var};

/// Floor for the argument of the log in the complementary loss.
pub const CL_LOG_FLOOR: f32 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub tau: f32,
    pub lambda: f32,
    /// Number of complementary labels; `None` means half the label set.
    pub k: Option<usize>,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            tau: 0.07,
            lambda: 0.2,
            k: None,
        }
    }
}

impl LossConfig {
    pub fn k_for(&self, num_classes: usize) -> usize {
        self.k.unwrap_or(num_classes / 2)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(invalid(format!("tau must be positive, got {}", self.tau)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(invalid(format!(
                "lambda must be nonnegative, got {}",
                self.lambda
            )));
        }
        if self.k == Some(0) {
            return Err(invalid("k must be at least 1"));
        }
        Ok(())
    }
}

fn softmax(q: &[f32], tau: f32) -> Vec<f64> {
    let z: Vec<f64> = q.iter().map(|&v| v as f64 / tau as f64).collect();
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn log_softmax_at(z: &[f64], i: usize) -> f64 {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    z[i] - lse
}

/// `-log softmax(q / tau)[label]`.
pub fn loss_pl(q: &[f32], label: usize, tau: f32) -> f32 {
    let z: Vec<f64> = q.iter().map(|&v| v as f64 / tau as f64).collect();
    -log_softmax_at(&z, label) as f32
}

/// `sum_{i in negatives} -log(1 - softmax(q / tau)[i])`, the softmax taken
/// over every category.
pub fn loss_cl(q: &[f32], negatives: &[usize], tau: f32) -> f32 {
    let p = softmax(q, tau);
    negatives
        .iter()
        .map(|&i| -(1.0 - p[i]).max(CL_LOG_FLOOR as f64).ln())
        .sum::<f64>() as f32
}

/// Mean over rows `i` of `-log( exp(d_i . s_i / tau) / sum_j exp(d_j . s_i / tau) )`
/// where `d` are dense (teacher) and `s` sparse (student) representations.
pub fn loss_infonce(dense: &Tensor, sparse: &Tensor, tau: f32) -> Result<f32> {
    check_pair(dense, sparse)?;
    let b = dense.rows();
    let mut total = 0.0f64;
    for i in 0..b {
        let z: Vec<f64> = (0..b)
            .map(|j| {
                let dot: f64 = dense
                    .row(j)
                    .iter()
                    .zip(sparse.row(i))
                    .map(|(&a, &c)| a as f64 * c as f64)
                    .sum();
                dot / tau as f64
            })
            .collect();
        total -= log_softmax_at(&z, i);
    }
    Ok((total / b as f64) as f32)
}

pub fn loss_total(sd: f32, cl: f32, lambda: f32) -> f32 {
    lambda * sd + cl
}

fn check_pair(dense: &Tensor, sparse: &Tensor) -> Result<()> {
    if dense.dims() != sparse.dims() {
        return Err(crate::Error::Shape {
            op: "infonce",
            lhs: dense.dims().to_vec(),
            rhs: sparse.dims().to_vec(),
        });
    }
    if dense.rows() < 2 {
        return Err(invalid("InfoNCE needs a batch of at least two"));
    }
    Ok(())
}

/// Batched pseudo-label loss. `q` is `B x N`, one label per row.
pub fn pl_loss(tape: &mut Tape, q: Var, labels: &[usize], tau: f32) -> Result<Var> {
    let (b, n) = (tape.value(q).rows(), tape.value(q).cols());
    if labels.len() != b || labels.iter().any(|&y| y >= n) {
        return Err(invalid(format!(
            "{} labels for a {b} x {n} similarity batch",
            labels.len()
        )));
    }
    let z = tape.scale(q, 1.0 / tau)?;
    let logp = tape.log_softmax_rows(z)?;
    let flat: Vec<usize> = labels.iter().enumerate().map(|(i, &y)| i * n + y).collect();
    let picked = tape.gather(logp, &flat)?;
    let s = tape.sum(picked)?;
    tape.scale(s, -1.0 / b as f32)
}

/// Batched complementary loss, averaged over rows.
pub fn cl_loss(tape: &mut Tape, q: Var, negatives: &[Vec<usize>], tau: f32) -> Result<Var> {
    let (b, n) = (tape.value(q).rows(), tape.value(q).cols());
    if negatives.len() != b
        || negatives
            .iter()
            .any(|c| c.is_empty() || c.iter().any(|&i| i >= n))
    {
        return Err(invalid(format!(
            "bad complementary sets for a {b} x {n} batch"
        )));
    }
    let z = tape.scale(q, 1.0 / tau)?;
    let p = tape.softmax_rows(z)?;
    let flat: Vec<usize> = negatives
        .iter()
        .enumerate()
        .flat_map(|(i, c)| c.iter().map(move |&j| i * n + j))
        .collect();
    let picked = tape.gather(p, &flat)?;
    let rest = tape.scale(picked, -1.0)?;
    let rest = tape.add_scalar(rest, 1.0)?;
    let rest = tape.clamp_min(rest, CL_LOG_FLOOR)?;
    let logs = tape.log(rest)?;
    let s = tape.sum(logs)?;
    tape.scale(s, -1.0 / b as f32)
}

/// Batched InfoNCE between dense targets and sparse predictions (`B x C`).
pub fn infonce_loss(tape: &mut Tape, dense: Var, sparse: Var, tau: f32) -> Result<Var> {
    check_pair(tape.value(dense), tape.value(sparse))?;
    let b = tape.value(dense).rows();
    let logits = tape.matmul_nt(sparse, dense)?;
    let logits = tape.scale(logits, 1.0 / tau)?;
    let logp = tape.log_softmax_rows(logits)?;
    let diag: Vec<usize> = (0..b).map(|i| i * b + i).collect();
    let picked = tape.gather(logp, &diag)?;
    let s = tape.sum(picked)?;
    tape.scale(s, -1.0 / b as f32)
}

pub fn total_loss(tape: &mut Tape, sd: Var, cl: Var, lambda: f32) -> Result<Var> {
    let weighted = tape.scale(sd, lambda)?;
    tape.add(weighted, cl)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_diff_check, GradCheckOptions};
    use proptest::prelude::*;

    #[test]
    fn unit_values() {
        for n in [2usize, 5, 10] {
            let l = loss_pl(&vec![0.3; n], 1, 0.07);
            assert!((l as f64 - (n as f64).ln()).abs() < 1e-6);
        }
        assert!((loss_pl(&[1.0, 0.0], 0, 1.0) - 0.313_261_7).abs() < 1e-6);
        assert!((loss_cl(&[0.0, 0.0], &[1], 1.0) as f64 - 2f64.ln()).abs() < 1e-6);
        assert!((loss_total(1.0, 0.5, 0.2) - 0.7).abs() < 1e-7);
        assert_eq!(loss_total(3.0, 0.5, 0.0), 0.5);
    }

    #[test]
    fn infonce_orthogonal_batch_closed_form() {
        for b in [2usize, 3, 5] {
            let mut data = vec![0.0; b * b];
            for i in 0..b {
                data[i * b + i] = 1.0;
            }
            let r = Tensor::matrix(b, b, data).unwrap();
            let e = std::f64::consts::E;
            let want = -(e / (e + (b - 1) as f64)).ln();
            let got = loss_infonce(&r, &r, 1.0).unwrap();
            assert!((got as f64 - want).abs() < 1e-5, "B={b}");
        }
        let one = Tensor::matrix(1, 2, vec![1.0, 0.0]).unwrap();
        assert!(loss_infonce(&one, &one, 1.0).is_err());
    }

    #[test]
    fn limits() {
        assert!(loss_pl(&[50.0, 0.0, 0.0], 0, 0.07) < 1e-6);
        assert!(loss_cl(&[1.0, -1.0, -1.0], &[1, 2], 0.05) < 1e-6);
        let saturated = loss_cl(&[1.0, -1.0], &[0], 1e-4);
        assert!(saturated.is_finite());
        assert!((saturated as f64 - -(CL_LOG_FLOOR as f64).ln()).abs() < 1e-3);
    }

    #[test]
    fn infonce_falls_as_sparse_rotates_toward_dense() {
        let dense = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let mut prev = f32::INFINITY;
        for step in 0..=8 {
            let a = std::f32::consts::FRAC_PI_2 * (1.0 - step as f32 / 8.0);
            let sparse = Tensor::from_rows(&[vec![a.cos(), a.sin()], vec![0.0, 1.0]]).unwrap();
            let l = loss_infonce(&dense, &sparse, 0.5).unwrap();
            assert!(l < prev);
            prev = l;
        }
    }

    #[test]
    fn tape_forms_match_scalar_forms() {
        let q = Tensor::from_rows(&[vec![0.2, -0.4, 0.9, 0.1], vec![-0.3, 0.5, 0.0, 0.7]]).unwrap();
        let labels = [2, 3];
        let negs = vec![vec![1, 0], vec![2, 0]];
        let mut tape = Tape::new();
        let qv = tape.constant(q.clone());
        let pl = pl_loss(&mut tape, qv, &labels, 0.3).unwrap();
        let cl = cl_loss(&mut tape, qv, &negs, 0.3).unwrap();
        let want_pl = (loss_pl(q.row(0), 2, 0.3) + loss_pl(q.row(1), 3, 0.3)) / 2.0;
        let want_cl = (loss_cl(q.row(0), &negs[0], 0.3) + loss_cl(q.row(1), &negs[1], 0.3)) / 2.0;
        assert!((tape.scalar(pl) - want_pl).abs() < 1e-5);
        assert!((tape.scalar(cl) - want_cl).abs() < 1e-5);

        let d = Tensor::from_rows(&[vec![0.6, 0.8], vec![1.0, 0.0], vec![0.0, -1.0]]).unwrap();
        let s = Tensor::from_rows(&[vec![0.8, 0.6], vec![0.6, -0.8], vec![-0.6, -0.8]]).unwrap();
        let (dv, sv) = (tape.constant(d.clone()), tape.constant(s.clone()));
        let nce = infonce_loss(&mut tape, dv, sv, 0.2).unwrap();
        assert!((tape.scalar(nce) - loss_infonce(&d, &s, 0.2).unwrap()).abs() < 1e-5);
        let tot = total_loss(&mut tape, nce, cl, 0.2).unwrap();
        assert!(
            (tape.scalar(tot) - loss_total(tape.scalar(nce), tape.scalar(cl), 0.2)).abs() < 1e-6
        );
    }

    fn grad_check(loss: impl Fn(&mut Tape, Var) -> Result<Var>, x: Tensor) {
        let mut tape = Tape::new();
        let v = tape.leaf(x.clone(), true);
        let out = loss(&mut tape, v).unwrap();
        let g = tape.backward(out).unwrap().take(v).unwrap();
        let params = vec![("x".to_string(), x)];
        let report = finite_diff_check(
            &params,
            &[g],
            |p| {
                let mut t = Tape::new();
                let v = t.leaf(p[0].1.clone(), false);
                let out = loss(&mut t, v)?;
                Ok(t.scalar(out) as f64)
            },
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert!(report.pass, "max rel err {}", report.max_rel_err);
    }

    #[test]
    fn tape_gradients_match_finite_differences() {
        let q = Tensor::from_rows(&[vec![0.2, -0.4, 0.9, 0.1], vec![-0.3, 0.5, 0.0, 0.7]]).unwrap();
        grad_check(|t, v| pl_loss(t, v, &[2, 1], 0.5), q.clone());
        grad_check(
            |t, v| cl_loss(t, v, &[vec![1, 3], vec![0, 2]], 0.5),
            q.clone(),
        );
        let dense =
            Tensor::from_rows(&[vec![0.6, 0.8, 0.0, 0.0], vec![0.0, 0.0, 1.0, 0.0]]).unwrap();
        grad_check(
            move |t, v| {
                let d = t.constant(dense.clone());
                infonce_loss(t, d, v, 0.5)
            },
            q,
        );
    }

    #[test]
    fn config_defaults_and_validation() {
        let c = LossConfig::default();
        assert_eq!((c.tau, c.lambda, c.k_for(10)), (0.07, 0.2, 5));
        assert!(LossConfig {
            tau: 0.0,
            ..c.clone()
        }
        .validate()
        .is_err());
        assert!(LossConfig {
            lambda: -1.0,
            ..c.clone()
        }
        .validate()
        .is_err());
        assert!(serde_json::from_str::<LossConfig>(r#"{"temperature": 1}"#).is_err());
    }

    proptest! {
        #[test]
        fn losses_are_nonnegative_and_shift_invariant(
            q in prop::collection::vec(-1.0f32..1.0, 3..8),
            shift in -2.0f32..2.0,
            tau in 0.05f32..2.0,
        ) {
            let shifted: Vec<f32> = q.iter().map(|v| v + shift).collect();
            let y = q.len() - 1;
            let a = loss_pl(&q, y, tau);
            prop_assert!(a >= 0.0);
            prop_assert!((a - loss_pl(&shifted, y, tau)).abs() < 1e-3 * a.max(1.0));
            let c = loss_cl(&q, &[0, 1], tau);
            prop_assert!(c >= 0.0 && c.is_finite());
        }

        // d loss / d q_i = p_i (1 - sum_{j in C-, j != i} p_j / (1 - p_j)) / tau,
        // so lowering a negative helps whenever the other negatives hold
        // little mass, and always for a single negative.
        #[test]
        fn cl_falls_when_a_negative_falls(
            q in prop::collection::vec(-1.0f32..1.0, 4),
            drop in 0.01f32..0.5,
        ) {
            let mut lower = q.clone();
            lower[1] -= drop;
            prop_assert!(loss_cl(&lower, &[1], 0.5) < loss_cl(&q, &[1], 0.5));
            let p2 = |v: &[f32]| softmax(v, 0.5)[2];
            prop_assume!(p2(&q) / (1.0 - p2(&q)) < 1.0 && p2(&lower) / (1.0 - p2(&lower)) < 1.0);
            prop_assert!(loss_cl(&lower, &[1, 2], 0.5) < loss_cl(&q, &[1, 2], 0.5));
        }

        #[test]
        fn infonce_mean_is_permutation_invariant(seed in 0u64..1000) {
            use rand::{seq::SliceRandom, Rng};
            let mut rng = crate::numerics::RngStream::new(seed, "test");
            let b = 4;
            let rows = |rng: &mut crate::numerics::RngStream| -> Vec<Vec<f32>> {
                (0..b).map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect()
            };
            let (d, s) = (rows(&mut rng), rows(&mut rng));
            let mut perm: Vec<usize> = (0..b).collect();
            perm.shuffle(&mut rng);
            let pd: Vec<Vec<f32>> = perm.iter().map(|&i| d[i].clone()).collect();
            let ps: Vec<Vec<f32>> = perm.iter().map(|&i| s[i].clone()).collect();
            let a = loss_infonce(&Tensor::from_rows(&d).unwrap(), &Tensor::from_rows(&s).unwrap(), 0.3).unwrap();
            let c = loss_infonce(&Tensor::from_rows(&pd).unwrap(), &Tensor::from_rows(&ps).unwrap(), 0.3).unwrap();
            prop_assert!((a - c).abs() < 1e-5);
        }
    }
}
