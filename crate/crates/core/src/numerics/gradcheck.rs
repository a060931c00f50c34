//! Central-difference verification of analytic gradients.

use rand::seq::index::sample;

use super::rng::RngStream;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub eps: f32,
    pub tolerance: f32,
    /// Upper bound on probed coordinates; tensors are sampled evenly so every
    /// tensor contributes. `None` probes everything.
    pub max_coords: Option<usize>,
    pub seed: u64,
    /// Combine steps `eps` and `eps/2` as `(4 D(eps/2) - D(eps)) / 3`, which
    /// cancels the second-order truncation term.
    pub richardson: bool,
    /// Only coordinates with `|analytic| >= min_grad` are sampled. Below the
    /// loss's rounding floor a difference quotient measures noise.
    pub min_grad: f32,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            eps: 1e-2,
            tolerance: 1e-2,
            max_coords: None,
            seed: 0,
            richardson: false,
            min_grad: 0.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CoordinateCheck {
    pub name: String,
    pub index: usize,
    pub analytic: f32,
    pub numeric: f32,
    pub rel_err: f32,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_err: f32,
    pub pass: bool,
    pub coords: Vec<CoordinateCheck>,
}

impl GradCheckReport {
    pub fn worst(&self) -> Option<&CoordinateCheck> {
        self.coords
            .iter()
            .max_by(|a, b| a.rel_err.total_cmp(&b.rel_err))
    }
}

/// `|a - n| / max(1e-6, |a| + |n|)`.
pub fn relative_error(analytic: f32, numeric: f32) -> f32 {
    let (a, n) = (analytic as f64, numeric as f64);
    ((a - n).abs() / (a.abs() + n.abs()).max(1e-6)) as f32
}

/// Compares `analytic[i]` (gradient of `loss_fn` at `params`) against
/// central differences. `loss_fn` receives the perturbed parameter list.
pub fn finite_diff_check<F>(
    params: &[(String, Tensor)],
    analytic: &[Tensor],
    mut loss_fn: F,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: FnMut(&[(String, Tensor)]) -> Result<f64>,
{
    if opts.eps <= 0.0 {
        return Err(Error::InvalidArgument("eps must be positive".into()));
    }
    if params.len() != analytic.len() {
        return Err(Error::InvalidArgument(format!(
            "{} parameters but {} gradients",
            params.len(),
            analytic.len()
        )));
    }
    for ((name, p), g) in params.iter().zip(analytic) {
        if p.numel() != g.numel() {
            return Err(Error::InvalidArgument(format!(
                "gradient for `{name}` has {} values, parameter has {}",
                g.numel(),
                p.numel()
            )));
        }
    }

    let mut rng = RngStream::new(opts.seed, "gradcheck");
    let per_tensor = opts
        .max_coords
        .map(|m| m.div_ceil(params.len().max(1)).max(1));
    let mut work: Vec<(String, Tensor)> = params.to_vec();
    let mut coords = Vec::new();

    for (ti, (name, p)) in params.iter().enumerate() {
        let eligible: Vec<usize> = (0..p.numel())
            .filter(|&i| analytic[ti].data()[i].abs() >= opts.min_grad)
            .collect();
        let n = eligible.len();
        let mut picks: Vec<usize> = match per_tensor {
            Some(k) if k < n => sample(&mut rng, n, k)
                .into_iter()
                .map(|j| eligible[j])
                .collect(),
            _ => eligible,
        };
        picks.sort_unstable();
        for idx in picks {
            let mut quotient = |eps: f32| -> Result<f64> {
                let orig = p.data()[idx];
                let plus = orig + eps;
                let minus = orig - eps;
                work[ti].1.data_mut()[idx] = plus;
                let lp = loss_fn(&work)?;
                work[ti].1.data_mut()[idx] = minus;
                let lm = loss_fn(&work)?;
                work[ti].1.data_mut()[idx] = orig;
                if !lp.is_finite() || !lm.is_finite() {
                    return Err(Error::NonFiniteProbe {
                        name: name.clone(),
                        index: idx,
                    });
                }
                // Divide by the step actually representable in f32.
                Ok((lp - lm) / (plus as f64 - minus as f64))
            };
            let numeric = if opts.richardson {
                let coarse = quotient(opts.eps)?;
                let fine = quotient(opts.eps / 2.0)?;
                (4.0 * fine - coarse) / 3.0
            } else {
                quotient(opts.eps)?
            } as f32;
            let a = analytic[ti].data()[idx];
            coords.push(CoordinateCheck {
                name: name.clone(),
                index: idx,
                analytic: a,
                numeric,
                rel_err: relative_error(a, numeric),
            });
        }
    }
    let max_rel_err = coords.iter().map(|c| c.rel_err).fold(0.0, f32::max);
    Ok(GradCheckReport {
        max_rel_err,
        pass: max_rel_err < opts.tolerance,
        coords,
    })
}
