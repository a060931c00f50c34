//! Point clouds, the procedural shape corpus and the sampling primitives
//! used for tokenization and sparsification.

mod cloud;
mod sampling;
mod shapes;

pub use cloud::PointCloud;
pub use sampling::{
    downsample_knn_patch, downsample_uniform, fps, knn_group, knn_patch_indices, nearest_indices,
    GroupIndex,
};
pub use shapes::{sample_shape, sample_surface, ShapeFamily, ShapeSpec};

/// How a dense cloud is thinned to a target count.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampler {
    Uniform,
    #[serde(alias = "knn")]
    KnnPatch,
}

impl Sampler {
    pub fn name(self) -> &'static str {
        match self {
            Sampler::Uniform => "uniform",
            Sampler::KnnPatch => "knn",
        }
    }

    pub fn apply(self, pc: &PointCloud, n_target: usize, seed: u64) -> crate::Result<PointCloud> {
        match self {
            Sampler::Uniform => downsample_uniform(pc, n_target, seed),
            Sampler::KnnPatch => downsample_knn_patch(pc, n_target, seed),
        }
    }
}

impl std::str::FromStr for Sampler {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s {
            "uniform" => Ok(Sampler::Uniform),
            "knn" | "knn_patch" => Ok(Sampler::KnnPatch),
            _ => Err(crate::Error::Config(format!(
                "unknown sampler `{s}` (expected uniform or knn)"
            ))),
        }
    }
}
