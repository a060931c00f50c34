use std::collections::BTreeMap;

use super::adapt::{batch_gradients, AdaptationConfig, Adapter, Target};
use crate::alignment::AnchorSet;
use crate::encoder::PointEncoder;
use crate::error::{invalid, Result};
use crate::geometry::PointCloud;
use crate::numerics::{finite_diff_check, GradCheckOptions, GradCheckReport, Tensor};
use crate::params::Parameters;

/// Central-difference check of the full adaptation gradient (adapter,
/// frozen encoder, batch loss) on the adapter tensors picked by `select`.
#[allow(clippy::too_many_arguments)]
pub fn check_adaptation_gradients(
    teacher: &PointEncoder,
    adapter: &Adapter,
    sparse: &[PointCloud],
    targets: &[&Target],
    anchors: &AnchorSet,
    cfg: &AdaptationConfig,
    select: impl Fn(&str) -> bool,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let (_, grads) = batch_gradients(teacher, adapter, sparse, targets, anchors, cfg)?;
    let params: Vec<(String, Tensor)> = adapter
        .named_tensors()
        .into_iter()
        .filter(|(n, _)| select(n))
        .collect();
    if params.is_empty() {
        return Err(invalid("no adapter tensor matches the selection"));
    }
    let analytic = params
        .iter()
        .map(|(n, _)| {
            grads
                .get(n)
                .cloned()
                .ok_or_else(|| invalid(format!("no gradient for `{n}`")))
        })
        .collect::<Result<Vec<_>>>()?;
    let base: BTreeMap<String, Tensor> = adapter.named_tensors().into_iter().collect();
    finite_diff_check(
        &params,
        &analytic,
        |probe| {
            let mut map = base.clone();
            map.extend(probe.iter().cloned());
            let mut a = adapter.clone();
            a.load_from(&map)?;
            Ok(batch_gradients(teacher, &a, sparse, targets, anchors, cfg)?.0 as f64)
        },
        opts,
    )
}
