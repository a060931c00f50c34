use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::geometry::{sample_shape, PointCloud, ShapeFamily, ShapeSpec};
use crate::numerics::derive_seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Points per dense cloud.
    pub dense_points: usize,
    pub train_per_category: usize,
    /// Held-out dense clouds used to decide when the teacher is done.
    pub val_per_category: usize,
    pub eval_per_category: usize,
    pub scale_jitter: f32,
    pub noise_sigma: f32,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            dense_points: 512,
            train_per_category: 200,
            val_per_category: 20,
            eval_per_category: 50,
            scale_jitter: 0.15,
            noise_sigma: 0.01,
        }
    }
}

impl DataConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dense_points < 8 {
            return Err(invalid("dense clouds need at least 8 points"));
        }
        if self.train_per_category == 0 || self.val_per_category == 0 || self.eval_per_category == 0
        {
            return Err(invalid("every split needs at least one cloud per category"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Eval,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Eval];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Eval => "eval",
        }
    }
}

/// The three disjoint splits of the procedural corpus, each ordered by
/// category and then by index.
#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub seed: u64,
    pub train: Vec<PointCloud>,
    pub val: Vec<PointCloud>,
    pub eval: Vec<PointCloud>,
}

impl Corpus {
    pub fn split(&self, split: Split) -> &[PointCloud] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Eval => &self.eval,
        }
    }

    /// Training clouds whose category is in `seen`.
    pub fn seen_train(&self, seen: &[ShapeFamily]) -> Vec<PointCloud> {
        restrict(&self.train, seen)
    }
}

pub fn restrict(clouds: &[PointCloud], families: &[ShapeFamily]) -> Vec<PointCloud> {
    clouds
        .iter()
        .filter(|pc| families.iter().any(|f| f.id() == pc.category_id))
        .cloned()
        .collect()
}

/// Seed of cloud `index` of `family` in `split`; unique across the corpus.
pub fn cloud_seed(seed: u64, split: Split, family: ShapeFamily, index: usize) -> u64 {
    derive_seed(seed, &format!("{}/{}/{index}", split.name(), family.name()))
}

pub fn generate_split(cfg: &DataConfig, seed: u64, split: Split) -> Result<Vec<PointCloud>> {
    cfg.validate()?;
    let per = match split {
        Split::Train => cfg.train_per_category,
        Split::Val => cfg.val_per_category,
        Split::Eval => cfg.eval_per_category,
    };
    let jobs: Vec<(ShapeFamily, usize)> = ShapeFamily::ALL
        .iter()
        .flat_map(|&f| (0..per).map(move |i| (f, i)))
        .collect();
    jobs.par_iter()
        .map(|&(family, i)| {
            let spec = ShapeSpec {
                family,
                scale_jitter: cfg.scale_jitter,
                noise_sigma: cfg.noise_sigma,
            };
            sample_shape(&spec, cfg.dense_points, cloud_seed(seed, split, family, i))
        })
        .collect()
}

pub fn generate_corpus(cfg: &DataConfig, seed: u64) -> Result<Corpus> {
    Ok(Corpus {
        seed,
        train: generate_split(cfg, seed, Split::Train)?,
        val: generate_split(cfg, seed, Split::Val)?,
        eval: generate_split(cfg, seed, Split::Eval)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> DataConfig {
        DataConfig {
            dense_points: 32,
            train_per_category: 3,
            val_per_category: 1,
            eval_per_category: 2,
            ..DataConfig::default()
        }
    }

    #[test]
    fn splits_are_sized_ordered_and_disjoint() {
        let c = generate_corpus(&tiny(), 5).unwrap();
        assert_eq!((c.train.len(), c.val.len(), c.eval.len()), (30, 10, 20));
        assert!(c
            .train
            .windows(2)
            .all(|w| w[0].category_id <= w[1].category_id));
        let mut seeds: Vec<u64> = Split::ALL
            .iter()
            .flat_map(|&s| c.split(s).iter().map(|p| p.seed))
            .collect();
        seeds.sort_unstable();
        seeds.dedup();
        assert_eq!(seeds.len(), 60);
        assert_eq!(c, generate_corpus(&tiny(), 5).unwrap());
    }

    #[test]
    fn restriction_keeps_only_listed_families() {
        let c = generate_corpus(&tiny(), 1).unwrap();
        let seen = [ShapeFamily::Sphere, ShapeFamily::Disk];
        let r = c.seen_train(&seen);
        assert_eq!(r.len(), 6);
        assert!(r.iter().all(|p| p.category_id == 0 || p.category_id == 7));
    }
}
