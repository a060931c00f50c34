//! On-disk layouts: corpus directories, teacher and adapter archives.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::checkpoint::{self, NamedTensors};
use crate::alignment::AnchorSet;
use crate::distill::{cloud_seed, Adapter, Corpus, DataConfig, Split};
use crate::encoder::{EncoderConfig, PointEncoder};
use crate::error::{Error, Result};
use crate::geometry::{PointCloud, ShapeFamily};
use crate::numerics::Tensor;
use crate::params::Parameters;

pub const MANIFEST: &str = "manifest.json";
pub const TEACHER_META: &str = "meta.encoder";
pub const ANCHORS: &str = "anchors";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitEntry {
    pub split: Split,
    pub file: String,
    pub count: usize,
    pub per_category: usize,
    /// Provenance seed of every cloud, in file order.
    pub seeds: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub data: DataConfig,
    pub categories: Vec<String>,
    pub splits: Vec<SplitEntry>,
}

fn split_tensors(clouds: &[PointCloud], dense: usize) -> Result<NamedTensors> {
    let mut points = Vec::with_capacity(clouds.len() * dense * 3);
    for pc in clouds {
        if pc.len() != dense {
            return Err(Error::InvalidArgument(format!(
                "cloud has {} points, expected {dense}",
                pc.len()
            )));
        }
        points.extend(pc.points.iter().flatten());
    }
    let labels = clouds.iter().map(|pc| pc.category_id as f32).collect();
    Ok(vec![
        (
            "points".into(),
            Tensor::new(vec![clouds.len(), dense, 3], points)?,
        ),
        ("labels".into(), Tensor::new(vec![clouds.len(), 1], labels)?),
    ])
}

/// Writes one archive per split plus `manifest.json`.
pub fn write_corpus(dir: &Path, corpus: &Corpus, data: &DataConfig) -> Result<Manifest> {
    fs::create_dir_all(dir)?;
    let mut splits = Vec::new();
    for split in Split::ALL {
        let clouds = corpus.split(split);
        let file = format!("{}.fcaz", split.name());
        checkpoint::save(dir.join(&file), &split_tensors(clouds, data.dense_points)?)?;
        splits.push(SplitEntry {
            split,
            file,
            count: clouds.len(),
            per_category: clouds.len() / ShapeFamily::ALL.len(),
            seeds: clouds.iter().map(|pc| pc.seed).collect(),
        });
    }
    let manifest = Manifest {
        seed: corpus.seed,
        data: data.clone(),
        categories: ShapeFamily::ALL
            .iter()
            .map(|f| f.name().to_string())
            .collect(),
        splits,
    };
    fs::write(dir.join(MANIFEST), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

pub fn read_corpus(dir: &Path) -> Result<(Corpus, Manifest)> {
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST))?)?;
    let mut corpus = Corpus {
        seed: manifest.seed,
        train: Vec::new(),
        val: Vec::new(),
        eval: Vec::new(),
    };
    for entry in &manifest.splits {
        let map = checkpoint::to_map(checkpoint::load(dir.join(&entry.file))?)?;
        let (points, labels) = match (map.get("points"), map.get("labels")) {
            (Some(p), Some(l)) => (p, l),
            _ => {
                return Err(Error::Format(format!(
                    "{} lacks points or labels",
                    entry.file
                )))
            }
        };
        let dims = points.dims();
        if dims.len() != 3
            || dims[2] != 3
            || dims[0] != entry.count
            || labels.numel() != entry.count
        {
            return Err(Error::Format(format!(
                "{} does not match the manifest",
                entry.file
            )));
        }
        if entry.seeds.len() != entry.count {
            return Err(Error::Format(format!(
                "manifest lists {} seeds for {}",
                entry.seeds.len(),
                entry.file
            )));
        }
        let n = dims[1];
        let clouds = (0..entry.count)
            .map(|i| {
                let raw = &points.data()[i * n * 3..(i + 1) * n * 3];
                let pts = raw.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
                PointCloud::new(pts, labels.data()[i] as usize, entry.seeds[i])
            })
            .collect();
        match entry.split {
            Split::Train => corpus.train = clouds,
            Split::Val => corpus.val = clouds,
            Split::Eval => corpus.eval = clouds,
        }
    }
    Ok((corpus, manifest))
}

/// Seeds a regenerated corpus would carry, for checking a manifest.
pub fn expected_seeds(seed: u64, split: Split, per_category: usize) -> Vec<u64> {
    ShapeFamily::ALL
        .iter()
        .flat_map(|&f| (0..per_category).map(move |i| cloud_seed(seed, split, f, i)))
        .collect()
}

fn encoder_meta(cfg: &EncoderConfig) -> Result<Tensor> {
    let v = [
        cfg.groups,
        cfg.group_size,
        cfg.dim,
        cfg.blocks,
        cfg.heads,
        cfg.latent_dim,
        cfg.ffn_mult,
    ];
    Tensor::matrix(1, v.len(), v.iter().map(|&x| x as f32).collect())
}

fn encoder_from_meta(t: &Tensor) -> Result<EncoderConfig> {
    let v: Vec<usize> = t.data().iter().map(|&x| x as usize).collect();
    if v.len() != 7 {
        return Err(Error::Format(format!(
            "`{TEACHER_META}` has {} entries, expected 7",
            v.len()
        )));
    }
    let cfg = EncoderConfig {
        groups: v[0],
        group_size: v[1],
        dim: v[2],
        blocks: v[3],
        heads: v[4],
        latent_dim: v[5],
        ffn_mult: v[6],
    };
    cfg.validate().map_err(|e| Error::Format(e.to_string()))?;
    Ok(cfg)
}

/// Teacher archive: encoder shape, anchors, then every model tensor.
pub fn save_teacher(path: &Path, model: &PointEncoder, anchors: &AnchorSet) -> Result<()> {
    let mut tensors = vec![
        (TEACHER_META.to_string(), encoder_meta(&model.config)?),
        (ANCHORS.to_string(), anchors.embeddings.clone()),
    ];
    tensors.extend(model.named_tensors());
    checkpoint::save(path, &tensors)
}

pub fn load_teacher(path: &Path) -> Result<(PointEncoder, AnchorSet)> {
    let map = checkpoint::to_map(checkpoint::load(path)?)?;
    let meta = map
        .get(TEACHER_META)
        .ok_or_else(|| Error::Format(format!("{} has no `{TEACHER_META}`", path.display())))?;
    let mut model = PointEncoder::init(&encoder_from_meta(meta)?, 0)?;
    model.load_from(&map)?;
    let embeddings = map
        .get(ANCHORS)
        .cloned()
        .ok_or_else(|| Error::Format(format!("{} has no `{ANCHORS}`", path.display())))?;
    let names = (0..embeddings.rows())
        .map(|i| {
            ShapeFamily::from_id(i).map_or_else(|| format!("class{i}"), |f| f.name().to_string())
        })
        .collect();
    Ok((
        model,
        AnchorSet {
            embeddings,
            names,
            seed: 0,
        },
    ))
}

pub fn save_adapter(path: &Path, adapter: &Adapter) -> Result<()> {
    checkpoint::save(path, &adapter.named_tensors())
}

pub fn load_adapter(path: &Path, model: &PointEncoder) -> Result<Adapter> {
    Adapter::from_tensors(model, &checkpoint::to_map(checkpoint::load(path)?)?)
}
